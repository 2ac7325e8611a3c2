#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchorscene/rng.hpp"

namespace ancs {

inline double softplus(double x) { return x > 30 ? x : std::log1p(std::exp(x)); }
inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

enum class Activation { None, Relu, Tanh };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation: " + s);
}

/// Per-parameter gradient buffers whose shapes mirror a DenseNet.
struct GradTape {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  void set_zero() {
    for (auto& m : w) m.setZero();
    for (auto& v : b) v.setZero();
  }
  void add_scaled(const GradTape& other, double alpha) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] += alpha * other.w[i];
      b[i] += alpha * other.b[i];
    }
  }
  void scale(double alpha) {
    for (auto& m : w) m *= alpha;
    for (auto& v : b) v *= alpha;
  }
};

/// Cached per-layer inputs and pre-activations from one forward pass
/// (columns are samples).
struct NetCache {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> preacts;
  bool valid = false;
};

/// A stack of affine layers with elementwise nonlinearities. Double precision
/// throughout; explicit backward; per-net Adam moment state.
class DenseNet {
 public:
  struct Layer {
    Eigen::MatrixXd W;  // out x in
    Eigen::VectorXd b;  // out
    Activation act = Activation::None;
  };

  DenseNet() = default;

  /// widths = {in, h1, ..., out}; acts has one entry per affine layer.
  /// Weights init uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
  static DenseNet create(const std::vector<int>& widths,
                         const std::vector<Activation>& acts,
                         std::uint64_t seed) {
    if (widths.size() < 2 || acts.size() != widths.size() - 1)
      throw std::invalid_argument("DenseNet::create: bad layer spec");
    DenseNet net;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer layer;
      const int fan_in = widths[l], fan_out = widths[l + 1];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      layer.W.resize(fan_out, fan_in);
      for (int j = 0; j < fan_in; ++j)
        for (int i = 0; i < fan_out; ++i)
          layer.W(i, j) = rng.uniform(-bound, bound);
      layer.b = Eigen::VectorXd::Zero(fan_out);
      layer.act = acts[l];
      net.layers_.push_back(std::move(layer));
    }
    return net;
  }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }
  int input_width() const { return static_cast<int>(layers_.front().W.cols()); }
  int output_width() const { return static_cast<int>(layers_.back().W.rows()); }

  GradTape zero_tape() const {
    GradTape t;
    for (const Layer& l : layers_) {
      t.w.emplace_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
      t.b.emplace_back(Eigen::VectorXd::Zero(l.b.size()));
    }
    return t;
  }

  /// Batched forward; columns of X are independent samples.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X, NetCache& cache) const {
    if (X.rows() != input_width())
      throw std::invalid_argument("forward: input width mismatch");
    cache.inputs.assign(layers_.size(), {});
    cache.preacts.assign(layers_.size(), {});
    Eigen::MatrixXd a = X;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      cache.inputs[l] = a;
      Eigen::MatrixXd z = (layers_[l].W * a).colwise() + layers_[l].b;
      cache.preacts[l] = z;
      a = apply_activation(z, layers_[l].act);
    }
    cache.valid = true;
    return a;
  }

  /// Batched backward; accumulates parameter gradients into `tape`, returns
  /// the gradient with respect to the input columns.
  Eigen::MatrixXd backward_batch(const Eigen::MatrixXd& dY,
                                 const NetCache& cache, GradTape& tape) const {
    if (!cache.valid) throw std::logic_error("backward before forward");
    if (tape.w.size() != layers_.size())
      throw std::invalid_argument("backward: tape shape mismatch");
    Eigen::MatrixXd grad = dY;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
      Eigen::MatrixXd dz =
          grad.cwiseProduct(activation_grad(cache.preacts[l], layers_[l].act));
      tape.w[l].noalias() += dz * cache.inputs[l].transpose();
      tape.b[l] += dz.rowwise().sum();
      grad.noalias() = layers_[l].W.transpose() * dz;
    }
    return grad;
  }

  /// Single-sample stateful forward (caches activations for backward()).
  Eigen::VectorXd forward(const Eigen::VectorXd& x) {
    return forward_batch(x, cache_).col(0);
  }

  /// Gradient of a scalar loss wrt every parameter and the input, given
  /// dLoss/dOutput for the last forward() call.
  std::pair<GradTape, Eigen::VectorXd> backward(
      const Eigen::VectorXd& upstream) const {
    if (!cache_.valid) throw std::logic_error("backward before forward");
    if (upstream.size() != output_width())
      throw std::invalid_argument("backward: upstream width mismatch");
    GradTape tape = zero_tape();
    Eigen::VectorXd dx = backward_batch(upstream, cache_, tape).col(0);
    return {std::move(tape), std::move(dx)};
  }

  /// Standard adaptive-moment update; moment state persists on the net.
  void adam_step(const GradTape& tape, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8) {
    if (tape.w.size() != layers_.size())
      throw std::invalid_argument("adam_step: tape shape mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (tape.w[l].rows() != layers_[l].W.rows() ||
          tape.w[l].cols() != layers_[l].W.cols() ||
          tape.b[l].size() != layers_[l].b.size())
        throw std::invalid_argument("adam_step: tape shape mismatch");
    ensure_adam();
    ++adam_t_;
    const double c1 = 1.0 - std::pow(beta1, adam_t_);
    const double c2 = 1.0 - std::pow(beta2, adam_t_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      adam_mw_[l] = beta1 * adam_mw_[l] + (1 - beta1) * tape.w[l];
      adam_vw_[l] = beta2 * adam_vw_[l] + (1 - beta2) * tape.w[l].cwiseAbs2();
      layers_[l].W.array() -=
          lr * (adam_mw_[l].array() / c1) /
          ((adam_vw_[l].array() / c2).sqrt() + eps);
      adam_mb_[l] = beta1 * adam_mb_[l] + (1 - beta1) * tape.b[l];
      adam_vb_[l] = beta2 * adam_vb_[l] + (1 - beta2) * tape.b[l].cwiseAbs2();
      layers_[l].b.array() -=
          lr * (adam_mb_[l].array() / c1) /
          ((adam_vb_[l].array() / c2).sqrt() + eps);
      if (!layers_[l].W.allFinite() || !layers_[l].b.allFinite())
        throw std::runtime_error("adam_step produced non-finite parameters");
    }
  }

  /// Flat view of every parameter, layer by layer (W column-major, then b).
  std::vector<double*> param_ptrs() {
    std::vector<double*> out;
    for (Layer& l : layers_) {
      for (Eigen::Index i = 0; i < l.W.size(); ++i) out.push_back(l.W.data() + i);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) out.push_back(l.b.data() + i);
    }
    return out;
  }

  /// Matching flat view of a tape's gradients.
  static std::vector<double*> tape_ptrs(GradTape& tape) {
    std::vector<double*> out;
    for (std::size_t l = 0; l < tape.w.size(); ++l) {
      for (Eigen::Index i = 0; i < tape.w[l].size(); ++i)
        out.push_back(tape.w[l].data() + i);
      for (Eigen::Index i = 0; i < tape.b[l].size(); ++i)
        out.push_back(tape.b[l].data() + i);
    }
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_) n += l.W.size() + l.b.size();
    return n;
  }

  // Adam moment accessors for checkpointing.
  bool has_adam_state() const { return !adam_mw_.empty(); }
  long adam_t() const { return adam_t_; }
  std::vector<Eigen::MatrixXd>& adam_mw() { ensure_adam(); return adam_mw_; }
  std::vector<Eigen::MatrixXd>& adam_vw() { ensure_adam(); return adam_vw_; }
  std::vector<Eigen::VectorXd>& adam_mb() { ensure_adam(); return adam_mb_; }
  std::vector<Eigen::VectorXd>& adam_vb() { ensure_adam(); return adam_vb_; }
  const std::vector<Eigen::MatrixXd>& adam_mw() const { return adam_mw_; }
  const std::vector<Eigen::MatrixXd>& adam_vw() const { return adam_vw_; }
  const std::vector<Eigen::VectorXd>& adam_mb() const { return adam_mb_; }
  const std::vector<Eigen::VectorXd>& adam_vb() const { return adam_vb_; }
  void set_adam_t(long t) { ensure_adam(); adam_t_ = t; }

 private:
  static Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& z,
                                          Activation act) {
    switch (act) {
      case Activation::None: return z;
      case Activation::Relu: return z.cwiseMax(0.0);
      case Activation::Tanh: return z.array().tanh().matrix();
    }
    return z;
  }

  static Eigen::MatrixXd activation_grad(const Eigen::MatrixXd& z,
                                         Activation act) {
    switch (act) {
      case Activation::None:
        return Eigen::MatrixXd::Ones(z.rows(), z.cols());
      case Activation::Relu:
        return (z.array() > 0.0).cast<double>().matrix();
      case Activation::Tanh: {
        Eigen::ArrayXXd t = z.array().tanh();
        return (1.0 - t.square()).matrix();
      }
    }
    return Eigen::MatrixXd::Ones(z.rows(), z.cols());
  }

  void ensure_adam() {
    if (!adam_mw_.empty()) return;
    for (const Layer& l : layers_) {
      adam_mw_.emplace_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
      adam_vw_.emplace_back(Eigen::MatrixXd::Zero(l.W.rows(), l.W.cols()));
      adam_mb_.emplace_back(Eigen::VectorXd::Zero(l.b.size()));
      adam_vb_.emplace_back(Eigen::VectorXd::Zero(l.b.size()));
    }
  }

  std::vector<Layer> layers_;
  NetCache cache_;
  std::vector<Eigen::MatrixXd> adam_mw_, adam_vw_;
  std::vector<Eigen::VectorXd> adam_mb_, adam_vb_;
  long adam_t_ = 0;
};

inline void adam_step(DenseNet& net, const GradTape& tape, double lr,
                      double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  net.adam_step(tape, lr, beta1, beta2, eps);
}

/// Adam state for a raw parameter vector (e.g. fusion weights).
struct AdamVector {
  Eigen::VectorXd m, v;
  long t = 0;

  void step(Eigen::VectorXd& p, const Eigen::VectorXd& g, double lr,
            double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (m.size() != p.size()) {
      m = Eigen::VectorXd::Zero(p.size());
      v = Eigen::VectorXd::Zero(p.size());
      t = 0;
    }
    ++t;
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    p -= lr * (m / c1).cwiseQuotient(
                  (v / c2).cwiseSqrt() +
                  Eigen::VectorXd::Constant(v.size(), eps));
  }
};

/// Central-difference gradient verification. `loss_fn(net, tape)` must return
/// the loss and, when `tape` is non-null, fill it with analytic gradients.
/// Error metric per parameter: |fd - analytic| / max(1, |fd|, |analytic|);
/// the maximum over all parameters is returned.
inline double grad_check(
    DenseNet& net,
    const std::function<double(DenseNet&, GradTape*)>& loss_fn, double eps) {
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be > 0");
  GradTape tape = net.zero_tape();
  loss_fn(net, &tape);
  const std::vector<double*> params = net.param_ptrs();
  const std::vector<double*> grads = DenseNet::tape_ptrs(tape);
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + eps;
    const double up = loss_fn(net, nullptr);
    *params[i] = saved - eps;
    const double down = loss_fn(net, nullptr);
    *params[i] = saved;
    const double fd = (up - down) / (2 * eps);
    const double an = *grads[i];
    const double err =
        std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ancs
