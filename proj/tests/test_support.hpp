#pragma once

// Shared helpers for the test suites: multi-net finite-difference harness,
// independent reference implementations, tiny fixtures.

#include <vector>

#include "anchorscene/geometry.hpp"
#include "anchorscene/nnet.hpp"
#include "anchorscene/rng.hpp"

namespace test_support {

using namespace ancs;

struct ParamSet {
  std::vector<double*> params, grads;

  void add_net(DenseNet& net, GradTape& tape) {
    auto p = net.param_ptrs();
    auto g = DenseNet::tape_ptrs(tape);
    params.insert(params.end(), p.begin(), p.end());
    grads.insert(grads.end(), g.begin(), g.end());
  }
  void add_vec(Eigen::VectorXd& p, Eigen::VectorXd& g) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      params.push_back(p.data() + i);
      grads.push_back(g.data() + i);
    }
  }
};

// Central differences against already-filled analytic gradients. Error per
// parameter: |fd - an| / max(1, |fd|, |an|).
template <typename LossFn>
double fd_max_err(ParamSet& ps, const LossFn& loss, double eps) {
  double worst = 0;
  for (std::size_t i = 0; i < ps.params.size(); ++i) {
    const double saved = *ps.params[i];
    *ps.params[i] = saved + eps;
    const double up = loss();
    *ps.params[i] = saved - eps;
    const double dn = loss();
    *ps.params[i] = saved;
    const double fd = (up - dn) / (2 * eps);
    const double an = *ps.grads[i];
    worst = std::max(worst,
                     std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)}));
  }
  return worst;
}

inline PointCloud random_cloud(int n, Rng& rng, double extent = 1.0) {
  PointCloud pc;
  pc.points.reserve(n);
  for (int i = 0; i < n; ++i)
    pc.points.emplace_back(rng.uniform(-extent, extent),
                           rng.uniform(-extent, extent),
                           rng.uniform(-extent, extent));
  return pc;
}

// O(|P||Q|) direct evaluation of the squared-L2 symmetric Chamfer form.
inline double chamfer_oracle(const PointCloud& p, const PointCloud& q) {
  double a = 0;
  for (const Vec3& x : p.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& y : q.points) best = std::min(best, (x - y).squaredNorm());
    a += best;
  }
  a /= p.size();
  double b = 0;
  for (const Vec3& y : q.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& x : p.points) best = std::min(best, (y - x).squaredNorm());
    b += best;
  }
  b /= q.size();
  return a + b;
}

// Uniform point sampling volume oracle for the rotated IoU.
inline double iou_mc_oracle(const OrientedBox3& a, const OrientedBox3& b,
                            int samples, std::uint64_t seed) {
  Rng rng(seed);
  auto sample_in = [&](const OrientedBox3& box) -> Vec3 {
    const Vec3 u(rng.uniform(-0.5, 0.5) * box.size.x(),
                 rng.uniform(-0.5, 0.5) * box.size.y(),
                 rng.uniform(-0.5, 0.5) * box.size.z());
    return rotate_z(u, box.yaw) + box.center;
  };
  int in_b = 0;
  for (int i = 0; i < samples; ++i)
    if (point_in_box(b, sample_in(a))) ++in_b;
  const double inter = a.volume() * in_b / samples;
  const double uni = a.volume() + b.volume() - inter;
  return inter <= 0 ? 0.0 : inter / uni;
}

inline double point_triangle_distance(const Vec3& p, const Vec3& a,
                                      const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - a).norm();
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - b).norm();
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - c).norm();
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return (p - (a + v * ab)).norm();
  }
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return (p - (a + w * ac)).norm();
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }
  const Vec3 n = ab.cross(ac).normalized();
  return std::abs(n.dot(ap));
}

inline double point_mesh_distance(const Vec3& p, const TriMesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles)
    best = std::min(best, point_triangle_distance(p, mesh.vertices[t[0]],
                                                  mesh.vertices[t[1]],
                                                  mesh.vertices[t[2]]));
  return best;
}

}  // namespace test_support
