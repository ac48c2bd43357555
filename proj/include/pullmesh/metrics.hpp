#ifndef PULLMESH_METRICS_HPP
#define PULLMESH_METRICS_HPP

// Point-sampled surface evaluation: Chamfer distances, F-Score, and normal
// consistency, all against exact nearest neighbors. Every report embeds the
// conventions and seeds that produced it.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pullmesh/meshing.hpp"
#include "pullmesh/pointcloud.hpp"

namespace pullmesh {

enum class ChamferConvention { Averaged, Summed };

inline const char* chamfer_convention_name(ChamferConvention c) {
  return c == ChamferConvention::Averaged ? "averaged" : "sum";
}

struct ChamferResult {
  double cd_l1 = 0, cd_l2 = 0;
  // per-direction means, kept for auditability
  double l1_ab = 0, l1_ba = 0, l2_ab = 0, l2_ba = 0;
};

namespace detail {

inline std::pair<double, double> directional_means(const std::vector<Vec3>& from,
                                                   const KdTree& to) {
  double sum_d = 0, sum_d2 = 0;
  for (const Vec3& p : from) {
    const double d2 = to.nearest(p).sq_distance;
    sum_d += std::sqrt(d2);
    sum_d2 += d2;
  }
  const double n = static_cast<double>(from.size());
  return {sum_d / n, sum_d2 / n};
}

}  // namespace detail

inline ChamferResult chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                             ChamferConvention convention = ChamferConvention::Averaged) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty point set");
  KdTree tree_a(a), tree_b(b);
  ChamferResult r;
  std::tie(r.l1_ab, r.l2_ab) = detail::directional_means(a, tree_b);
  std::tie(r.l1_ba, r.l2_ba) = detail::directional_means(b, tree_a);
  const double w = convention == ChamferConvention::Averaged ? 0.5 : 1.0;
  r.cd_l1 = w * (r.l1_ab + r.l1_ba);
  r.cd_l2 = w * (r.l2_ab + r.l2_ba);
  return r;
}

// precision/recall with the closed "within" test d <= tau
inline double fscore(const std::vector<Vec3>& recon, const std::vector<Vec3>& gt,
                     double tau) {
  if (recon.empty() || gt.empty()) throw std::invalid_argument("fscore: empty point set");
  if (tau <= 0) throw std::invalid_argument("fscore: tau must be positive");
  KdTree tree_recon(recon), tree_gt(gt);
  const double tau2 = tau * tau;
  std::size_t hit_p = 0, hit_r = 0;
  for (const Vec3& p : recon)
    if (tree_gt.nearest(p).sq_distance <= tau2) ++hit_p;
  for (const Vec3& p : gt)
    if (tree_recon.nearest(p).sq_distance <= tau2) ++hit_r;
  const double precision = static_cast<double>(hit_p) / static_cast<double>(recon.size());
  const double recall = static_cast<double>(hit_r) / static_cast<double>(gt.size());
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

inline double normal_consistency(const PointCloud& a, const PointCloud& b) {
  if (a.points.empty() || b.points.empty())
    throw std::invalid_argument("normal_consistency: empty point set");
  if (a.normals.size() != a.points.size() || b.normals.size() != b.points.size())
    throw std::invalid_argument("normal_consistency: missing normals");
  KdTree tree_a(a.points), tree_b(b.points);
  auto direction = [](const PointCloud& from, const PointCloud& to,
                      const KdTree& to_tree) {
    double sum = 0;
    for (std::size_t i = 0; i < from.points.size(); ++i) {
      const Vec3 na = from.normals[i].normalized();
      const Vec3 nb = to.normals[to_tree.nearest(from.points[i]).index].normalized();
      sum += std::abs(na.dot(nb));
    }
    return sum / static_cast<double>(from.points.size());
  };
  return 0.5 * (direction(a, b, tree_b) + direction(b, a, tree_a));
}

// ---------------------------------------------------------------------------
// Plane-fit normals for raw clouds: smallest-eigenvalue direction of the
// neighborhood covariance (cyclic Jacobi on the symmetric 3x3).

namespace detail {

inline Vec3 smallest_eigenvector(double a[3][3]) {
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 32; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int i = 0; i < 3; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (int i = 0; i < 3; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
        for (int i = 0; i < 3; ++i) {
          const double vip = v[i][p], viq = v[i][q];
          v[i][p] = c * vip - s * viq;
          v[i][q] = s * vip + c * viq;
        }
      }
  }
  int m = 0;
  for (int i = 1; i < 3; ++i)
    if (a[i][i] < a[m][m]) m = i;
  return Vec3{v[0][m], v[1][m], v[2][m]}.normalized();
}

}  // namespace detail

inline std::vector<Vec3> pca_normals(const std::vector<Vec3>& points,
                                     std::size_t k = 18) {
  if (points.size() <= k)
    throw std::invalid_argument("pca_normals: need more points than neighbors");
  KdTree tree(points);
  std::vector<Vec3> normals(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto nn = tree.knearest(points[i], k, /*skip_index=*/i);
    Vec3 mean = points[i];
    for (const auto& r : nn) mean = mean + points[r.index];
    mean = mean / static_cast<double>(nn.size() + 1);
    double cov[3][3] = {};
    auto accumulate = [&](const Vec3& p) {
      const Vec3 d = p - mean;
      const double dv[3] = {d.x, d.y, d.z};
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) cov[r][c] += dv[r] * dv[c];
    };
    accumulate(points[i]);
    for (const auto& r : nn) accumulate(points[r.index]);
    normals[i] = detail::smallest_eigenvector(cov);
  }
  return normals;
}

// ---------------------------------------------------------------------------
// End-to-end evaluation

struct MetricReport {
  double cd_l1 = 0, cd_l2 = 0, cd_l2_x100 = 0;
  double nc = 0;
  std::map<double, double> fscore;  // threshold -> value
  double l1_ab = 0, l1_ba = 0, l2_ab = 0, l2_ba = 0;
  std::size_t n_recon = 0, n_gt = 0;
  std::uint64_t seed = 0;
  std::string cd_convention = "averaged";
  std::string within_rule = "closed";  // F-Score counts d <= tau
  std::string gt_normals = "sampled";  // sampled | provided | pca
  std::size_t pca_k = 0;
};

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json f = nlohmann::json::object();
  for (const auto& [tau, value] : r.fscore) {
    std::ostringstream key;
    key.precision(12);
    key << tau;
    f[key.str()] = value;
  }
  return nlohmann::json{{"cd_l1", r.cd_l1},
                        {"cd_l2", r.cd_l2},
                        {"cd_l2_x100", r.cd_l2_x100},
                        {"nc", r.nc},
                        {"fscore", f},
                        {"directional",
                         {{"l1_ab", r.l1_ab},
                          {"l1_ba", r.l1_ba},
                          {"l2_ab", r.l2_ab},
                          {"l2_ba", r.l2_ba}}},
                        {"n_recon", r.n_recon},
                        {"n_gt", r.n_gt},
                        {"seed", r.seed},
                        {"cd_convention", r.cd_convention},
                        {"within_rule", r.within_rule},
                        {"gt_normals", r.gt_normals},
                        {"pca_k", r.pca_k}};
}

struct GroundTruth {
  const TriangleMesh* mesh = nullptr;
  const PointCloud* cloud = nullptr;
};

inline MetricReport evaluate_reconstruction(
    const TriangleMesh& recon, const GroundTruth& gt, std::size_t n,
    const std::vector<double>& thresholds, std::uint64_t seed,
    ChamferConvention convention = ChamferConvention::Averaged,
    std::size_t pca_k = 18) {
  if (!gt.mesh && !gt.cloud)
    throw std::invalid_argument("evaluate: no ground truth given");
  const PointCloud recon_samples =
      sample_surface(recon, n, split_seed(seed, "recon-samples"));

  PointCloud gt_samples;
  MetricReport report;
  if (gt.mesh) {
    gt_samples = sample_surface(*gt.mesh, n, split_seed(seed, "gt-samples"));
    report.gt_normals = "sampled";
  } else {
    gt_samples = *gt.cloud;
    if (gt_samples.points.empty())
      throw std::invalid_argument("evaluate: empty ground-truth cloud");
    if (gt_samples.normals.size() == gt_samples.points.size()) {
      report.gt_normals = "provided";
    } else {
      gt_samples.normals = pca_normals(gt_samples.points, pca_k);
      report.gt_normals = "pca";
      report.pca_k = pca_k;
    }
  }

  const ChamferResult cd = chamfer(recon_samples.points, gt_samples.points, convention);
  report.cd_l1 = cd.cd_l1;
  report.cd_l2 = cd.cd_l2;
  report.cd_l2_x100 = 100.0 * cd.cd_l2;
  report.l1_ab = cd.l1_ab;
  report.l1_ba = cd.l1_ba;
  report.l2_ab = cd.l2_ab;
  report.l2_ba = cd.l2_ba;
  for (double tau : thresholds)
    report.fscore[tau] = fscore(recon_samples.points, gt_samples.points, tau);
  report.nc = normal_consistency(recon_samples, gt_samples);
  report.n_recon = recon_samples.points.size();
  report.n_gt = gt_samples.points.size();
  report.seed = seed;
  report.cd_convention = chamfer_convention_name(convention);
  return report;
}

}  // namespace pullmesh

#endif
