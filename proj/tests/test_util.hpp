#ifndef PULLMESH_TEST_UTIL_HPP
#define PULLMESH_TEST_UTIL_HPP

// Shared fixtures: analytic shapes, oracle fields, and brute-force
// counterparts of the spatial queries.

#include <cmath>
#include <numbers>
#include <vector>

#include "pullmesh/pointcloud.hpp"
#include "pullmesh/rng.hpp"
#include "pullmesh/tensor.hpp"

namespace testutil {

using pullmesh::PointCloud;
using pullmesh::Rng;
using pullmesh::Tensor;
using pullmesh::Vec3;

// uniform samples on a sphere, with outward normals
inline PointCloud sphere_cloud(std::size_t n, double radius = 1.0,
                               std::uint64_t seed = 1) {
  Rng rng(seed);
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 p{rng.normal(), rng.normal(), rng.normal()};
    while (p.norm() < 1e-9) p = {rng.normal(), rng.normal(), rng.normal()};
    const Vec3 d = p.normalized();
    pc.points.push_back(d * radius);
    pc.normals.push_back(d);
  }
  return pc;
}

// area-uniform samples on a torus (major radius R, minor radius r) in the
// xy-plane, with outward normals
inline PointCloud torus_cloud(std::size_t n, double R = 0.7, double r = 0.25,
                              std::uint64_t seed = 1) {
  Rng rng(seed);
  PointCloud pc;
  while (pc.points.size() < n) {
    const double u = rng.uniform(0, 2 * std::numbers::pi);
    const double v = rng.uniform(0, 2 * std::numbers::pi);
    // area element is proportional to R + r cos v
    if (rng.uniform() * (R + r) > R + r * std::cos(v)) continue;
    const Vec3 normal{std::cos(v) * std::cos(u), std::cos(v) * std::sin(u),
                      std::sin(v)};
    pc.points.push_back({(R + r * std::cos(v)) * std::cos(u),
                         (R + r * std::cos(v)) * std::sin(u), r * std::sin(v)});
    pc.normals.push_back(normal);
  }
  return pc;
}

// exact signed distance field of a sphere, matching the SignedField concept
struct SphereField {
  double radius = 1.0;

  Tensor sdf(const Tensor& p, int) const {
    Tensor out(p.rows, 1);
    for (std::size_t i = 0; i < p.rows; ++i)
      out.data[i] =
          std::sqrt(p.at(i, 0) * p.at(i, 0) + p.at(i, 1) * p.at(i, 1) +
                    p.at(i, 2) * p.at(i, 2)) -
          radius;
    return out;
  }
  Tensor sdf_gradient(const Tensor& p, int) const {
    Tensor out(p.rows, 3);
    for (std::size_t i = 0; i < p.rows; ++i) {
      const Vec3 v{p.at(i, 0), p.at(i, 1), p.at(i, 2)};
      const Vec3 d = v.normalized();
      out.at(i, 0) = d.x;
      out.at(i, 1) = d.y;
      out.at(i, 2) = d.z;
    }
    return out;
  }
};

// constant field: zero gradient everywhere
struct ConstantField {
  double value = 0.5;

  Tensor sdf(const Tensor& p, int) const { return Tensor::full(p.rows, 1, value); }
  Tensor sdf_gradient(const Tensor& p, int) const { return Tensor(p.rows, 3); }
};

// brute-force nearest neighbor with the tie rule (lowest index wins)
inline std::pair<std::size_t, double> brute_nearest(const std::vector<Vec3>& pts,
                                                    const Vec3& q) {
  std::size_t best = 0;
  double best_d = pullmesh::sq_dist(q, pts[0]);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double d = pullmesh::sq_dist(q, pts[i]);
    if (d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return {best, best_d};
}

inline std::vector<Vec3> random_points(std::size_t n, double extent,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                   rng.uniform(-extent, extent)});
  return out;
}

}  // namespace testutil

#endif
