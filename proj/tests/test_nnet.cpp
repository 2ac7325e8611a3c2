#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/checkpoint.hpp"
#include "anchorscene/nnet.hpp"
#include "test_support.hpp"

using namespace ancs;

namespace {

Eigen::VectorXd random_vec(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("forward basics") {
  DenseNet zero = DenseNet::create({3, 4, 2}, {Activation::Tanh, Activation::None}, 1);
  for (auto& l : zero.layers()) {
    l.W.setZero();
    l.b.setZero();
  }
  REQUIRE(zero.forward(Vec3(1, -2, 3)).isZero(0));

  DenseNet ident = DenseNet::create({3, 3}, {Activation::None}, 1);
  ident.layers()[0].W = Eigen::MatrixXd::Identity(3, 3);
  ident.layers()[0].b.setZero();
  const Eigen::VectorXd y = ident.forward(Vec3(0.3, -0.7, 1.5));
  REQUIRE((y - Vec3(0.3, -0.7, 1.5)).norm() == 0.0);

  REQUIRE_THROWS(ident.forward(Eigen::VectorXd::Zero(5)));
}

TEST_CASE("forward matches independent layer algebra") {
  Rng rng(17);
  DenseNet net = DenseNet::create({4, 6, 3},
                                  {Activation::Tanh, Activation::Relu}, 23);
  const Eigen::VectorXd x = random_vec(4, rng);
  const Eigen::VectorXd y = net.forward(x);

  // re-evaluate the algebra with plain loops
  std::vector<double> a(x.data(), x.data() + 4);
  for (const auto& layer : net.layers()) {
    std::vector<double> z(layer.W.rows(), 0.0);
    for (int r = 0; r < layer.W.rows(); ++r) {
      z[r] = layer.b(r);
      for (int c = 0; c < layer.W.cols(); ++c) z[r] += layer.W(r, c) * a[c];
      if (layer.act == Activation::Tanh) z[r] = std::tanh(z[r]);
      if (layer.act == Activation::Relu) z[r] = std::max(0.0, z[r]);
    }
    a = z;
  }
  for (int i = 0; i < 3; ++i) REQUIRE(y(i) == Catch::Approx(a[i]).margin(1e-12));
}

TEST_CASE("backward basics") {
  DenseNet net = DenseNet::create({3, 5, 2}, {Activation::Tanh, Activation::None}, 3);
  REQUIRE_THROWS_AS(net.backward(Eigen::VectorXd::Zero(2)), std::logic_error);

  net.forward(Vec3(0.1, 0.2, 0.3));
  auto [tape, dx] = net.backward(Eigen::VectorXd::Zero(2));
  for (const auto& w : tape.w) REQUIRE(w.isZero(0));
  for (const auto& b : tape.b) REQUIRE(b.isZero(0));
  REQUIRE(dx.isZero(0));
}

TEST_CASE("one-layer linear backward is the closed form") {
  Rng rng(7);
  DenseNet net = DenseNet::create({3, 2}, {Activation::None}, 19);
  const Eigen::VectorXd x = random_vec(3, rng);
  const Eigen::VectorXd target = random_vec(2, rng);
  const Eigen::VectorXd out = net.forward(x);
  const Eigen::VectorXd resid = out - target;
  auto [tape, dx] = net.backward(2.0 * resid);  // d||Wx+b-y||^2
  const Eigen::MatrixXd expected = 2.0 * resid * x.transpose();
  REQUIRE((tape.w[0] - expected).norm() < 1e-12);
  REQUIRE((tape.b[0] - 2.0 * resid).norm() < 1e-12);
  REQUIRE((dx - net.layers()[0].W.transpose() * (2.0 * resid)).norm() < 1e-12);
}

TEST_CASE("three-layer tanh net matches finite differences") {
  Rng rng(29);
  DenseNet net = DenseNet::create(
      {4, 8, 8, 3}, {Activation::Tanh, Activation::Tanh, Activation::Tanh}, 5);
  const Eigen::VectorXd x = random_vec(4, rng);
  const Eigen::VectorXd target = random_vec(3, rng);
  const double err = grad_check(
      net,
      [&](DenseNet& n, GradTape* tape) {
        const Eigen::VectorXd out = n.forward(x);
        if (tape) *tape = n.backward(2.0 * (out - target)).first;
        return (out - target).squaredNorm();
      },
      1e-5);
  REQUIRE(err < 1e-4);
}

TEST_CASE("adam") {
  SECTION("zero gradients leave parameters unchanged") {
    DenseNet net = DenseNet::create({2, 2}, {Activation::None}, 11);
    const Eigen::MatrixXd before = net.layers()[0].W;
    GradTape tape = net.zero_tape();
    adam_step(net, tape, 0.1);
    REQUIRE(net.layers()[0].W == before);
  }
  SECTION("descends on f(w) = w^2 from w = 1") {
    DenseNet net = DenseNet::create({1, 1}, {Activation::None}, 1);
    net.layers()[0].W(0, 0) = 1.0;
    net.layers()[0].b(0) = 0.0;
    GradTape tape = net.zero_tape();
    tape.w[0](0, 0) = 2.0;  // d(w^2)/dw at w=1
    adam_step(net, tape, 0.1);
    REQUIRE(std::abs(net.layers()[0].W(0, 0)) < 1.0);
  }
  SECTION("ten steps on a convex quadratic are non-increasing after step 2") {
    Rng rng(3);
    DenseNet net = DenseNet::create({2, 1}, {Activation::None}, 5);
    const Eigen::VectorXd x = random_vec(2, rng);
    const double target = 0.7;
    double prev = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 10; ++step) {
      const Eigen::VectorXd out = net.forward(x);
      const double loss = (out(0) - target) * (out(0) - target);
      Eigen::VectorXd up(1);
      up << 2 * (out(0) - target);
      GradTape tape = net.backward(up).first;
      adam_step(net, tape, 0.01);
      if (step >= 2) REQUIRE(loss <= prev + 1e-12);
      prev = loss;
    }
  }
  SECTION("tape shape mismatch throws") {
    DenseNet a = DenseNet::create({2, 2}, {Activation::None}, 1);
    DenseNet b = DenseNet::create({3, 3}, {Activation::None}, 1);
    GradTape tape = b.zero_tape();
    REQUIRE_THROWS(adam_step(a, tape, 0.1));
  }
}

TEST_CASE("grad_check calibration") {
  Rng rng(83);
  const Eigen::VectorXd x = random_vec(3, rng);
  const Eigen::VectorXd target = random_vec(2, rng);
  auto loss = [&](DenseNet& n, GradTape* tape) {
    const Eigen::VectorXd out = n.forward(x);
    if (tape) *tape = n.backward(2.0 * (out - target)).first;
    return (out - target).squaredNorm();
  };

  DenseNet linear = DenseNet::create({3, 2}, {Activation::None}, 2);
  REQUIRE(grad_check(linear, loss, 1e-5) < 1e-7);

  DenseNet tanh_net =
      DenseNet::create({3, 6, 2}, {Activation::Tanh, Activation::Tanh}, 4);
  REQUIRE(grad_check(tanh_net, loss, 1e-5) < 1e-4);

  // deliberately corrupted backward must be flagged
  auto corrupted = [&](DenseNet& n, GradTape* tape) {
    const double v = loss(n, tape);
    if (tape) tape->w[0](0, 0) += 1.0 + std::abs(tape->w[0](0, 0));
    return v;
  };
  REQUIRE(grad_check(tanh_net, corrupted, 1e-5) > 1e-2);
}

TEST_CASE("batched forward equals per-sample loop") {
  Rng rng(12);
  DenseNet net = DenseNet::create({5, 7, 4}, {Activation::Relu, Activation::None}, 8);
  Eigen::MatrixXd X(5, 6);
  for (int i = 0; i < X.size(); ++i) X(i / 6, i % 6) = rng.normal();
  NetCache cache;
  const Eigen::MatrixXd Y = net.forward_batch(X, cache);
  for (int c = 0; c < 6; ++c) {
    const Eigen::VectorXd y = net.forward(X.col(c));
    REQUIRE((Y.col(c) - y).norm() == 0.0);
  }
}

TEST_CASE("checkpoint container round trips bit-exactly") {
  Rng rng(31);
  Checkpoint ck;
  DenseNet net = DenseNet::create({3, 4, 2}, {Activation::Tanh, Activation::None}, 7);
  // give it adam state
  GradTape tape = net.zero_tape();
  tape.w[0].setConstant(0.25);
  adam_step(net, tape, 1e-3);
  ck.nets["demo"] = net;
  Eigen::VectorXd w(4);
  w << 0.5, 0.5, 0.25, 0.75;
  ck.vectors["weights"] = w;
  ck.meta["epoch"] = "3";

  const std::string blob = ck.encode();
  const Checkpoint back = Checkpoint::decode(blob);
  REQUIRE(back.encode() == blob);
  REQUIRE(back.nets.at("demo").adam_t() == 1);
  REQUIRE(back.vectors.at("weights") == w);
  REQUIRE(back.meta.at("epoch") == "3");

  REQUIRE_THROWS_WITH(Checkpoint::decode("XXXXXXXXgarbage"),
                      Catch::Matchers::ContainsSubstring("magic"));

  // json debug dump exists and mirrors shapes
  const nlohmann::json j = ck.debug_json();
  REQUIRE(j["nets"]["demo"]["layers"].size() == 2);
}
