#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pullmesh/metrics.hpp"
#include "test_util.hpp"

using namespace pullmesh;

namespace {

// mirrors the summation order of the library's directional means
std::pair<double, double> brute_direction(const std::vector<Vec3>& from,
                                          const std::vector<Vec3>& to) {
  double sum_d = 0, sum_d2 = 0;
  for (const Vec3& p : from) {
    const double d2 = testutil::brute_nearest(to, p).second;
    sum_d += std::sqrt(d2);
    sum_d2 += d2;
  }
  const double n = static_cast<double>(from.size());
  return {sum_d / n, sum_d2 / n};
}

TriangleMesh tetrahedron() {
  TriangleMesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  m.faces = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  return m;
}

}  // namespace

TEST_CASE("chamfer: worked examples and conventions") {
  std::vector<Vec3> a{{0, 0, 0}};
  std::vector<Vec3> b{{1, 0, 0}};
  auto r = chamfer(a, b);
  CHECK(r.cd_l1 == 1.0);
  CHECK(r.cd_l2 == 1.0);
  auto rs = chamfer(a, b, ChamferConvention::Summed);
  CHECK(rs.cd_l1 == 2.0);
  CHECK(rs.cd_l2 == 2.0);

  std::vector<Vec3> a2{{0, 0, 0}, {2, 0, 0}};
  std::vector<Vec3> b2{{0, 0, 0}};
  auto r2 = chamfer(a2, b2);
  CHECK(r2.l1_ab == 1.0);   // (0 + 2) / 2
  CHECK(r2.l1_ba == 0.0);
  CHECK(r2.l2_ab == 2.0);   // (0 + 4) / 2
  CHECK(r2.cd_l1 == 0.5);
  CHECK(r2.cd_l2 == 1.0);
  CHECK_THROWS_AS(chamfer({}, b), std::invalid_argument);
}

TEST_CASE("chamfer matches a brute-force oracle bitwise") {
  const auto a = testutil::random_points(150, 1.0, 3);
  const auto b = testutil::random_points(120, 1.0, 5);
  auto r = chamfer(a, b);
  const auto [l1_ab, l2_ab] = brute_direction(a, b);
  const auto [l1_ba, l2_ba] = brute_direction(b, a);
  CHECK(r.l1_ab == l1_ab);
  CHECK(r.l2_ab == l2_ab);
  CHECK(r.l1_ba == l1_ba);
  CHECK(r.l2_ba == l2_ba);
  CHECK(r.cd_l1 == 0.5 * (l1_ab + l1_ba));
}

TEST_CASE("chamfer is symmetric and rigid-motion invariant") {
  auto a = testutil::random_points(80, 1.0, 7);
  auto b = testutil::random_points(90, 1.0, 9);
  auto r_ab = chamfer(a, b);
  auto r_ba = chamfer(b, a);
  CHECK(r_ab.cd_l1 == r_ba.cd_l1);
  CHECK(r_ab.l1_ab == r_ba.l1_ba);

  auto rot = [](const Vec3& p) {
    return Vec3{-p.y + 2.0, p.x - 1.0, p.z + 0.5};
  };
  std::vector<Vec3> ra, rb;
  for (const Vec3& p : a) ra.push_back(rot(p));
  for (const Vec3& p : b) rb.push_back(rot(p));
  auto r_rot = chamfer(ra, rb);
  CHECK(r_rot.cd_l1 == doctest::Approx(r_ab.cd_l1).epsilon(1e-12));
  CHECK(r_rot.cd_l2 == doctest::Approx(r_ab.cd_l2).epsilon(1e-12));
}

TEST_CASE("f-score: closed threshold boundary") {
  std::vector<Vec3> a{{0, 0, 0}};
  std::vector<Vec3> b{{0.5, 0, 0}};
  CHECK(fscore(a, b, 0.5) == 1.0);       // d == tau counts
  CHECK(fscore(a, b, 0.4999) == 0.0);
  CHECK_THROWS_AS(fscore(a, b, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(fscore({}, b, 0.1), std::invalid_argument);
}

TEST_CASE("f-score: known precision/recall mix") {
  // recon: 2 points, one within tau; gt: 2 points, both matched by the close one
  std::vector<Vec3> recon{{0, 0, 0}, {5, 0, 0}};
  std::vector<Vec3> gt{{0.05, 0, 0}, {0, 0.05, 0}};
  const double tau = 0.1;
  // precision = 1/2, recall = 2/2 -> F = 2*(0.5*1)/(1.5) = 2/3
  CHECK(fscore(recon, gt, tau) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("normal consistency: identity, sign-invariance, orthogonality") {
  auto pc = testutil::sphere_cloud(200, 1.0, 11);
  CHECK(normal_consistency(pc, pc) == doctest::Approx(1.0).epsilon(1e-12));
  PointCloud flipped = pc;
  for (Vec3& n : flipped.normals) n = n * -1.0;
  CHECK(normal_consistency(pc, flipped) == doctest::Approx(1.0).epsilon(1e-12));

  PointCloud a, b;
  a.points = {{0, 0, 0}};
  a.normals = {{1, 0, 0}};
  b.points = {{0, 0, 0}};
  b.normals = {{0, 1, 0}};
  CHECK(normal_consistency(a, b) == doctest::Approx(0.0).epsilon(1e-12));
  b.normals.clear();
  CHECK_THROWS_AS(normal_consistency(a, b), std::invalid_argument);
}

TEST_CASE("plane-fit normals recover flat and curved surfaces") {
  // plane z = 0
  std::vector<Vec3> plane;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) plane.push_back({i * 0.05, j * 0.05, 0.0});
  auto n_plane = pca_normals(plane, 8);
  for (const Vec3& n : n_plane) {
    CHECK(std::abs(n.z) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(n.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  // sphere: estimated normals align with the radial direction up to sign
  auto sphere = testutil::sphere_cloud(800, 1.0, 13);
  auto n_sphere = pca_normals(sphere.points, 12);
  double worst = 1.0;
  for (std::size_t i = 0; i < sphere.points.size(); ++i)
    worst = std::min(worst, std::abs(n_sphere[i].dot(sphere.normals[i])));
  CHECK(worst > 0.97);
  CHECK_THROWS_AS(pca_normals(std::vector<Vec3>(5), 8), std::invalid_argument);
}

TEST_CASE("evaluating a mesh against itself is near-perfect") {
  auto mesh = tetrahedron();
  GroundTruth gt;
  gt.mesh = &mesh;
  auto report = evaluate_reconstruction(mesh, gt, 4000, {0.1, 0.004}, 7);
  CHECK(report.cd_l1 < 0.05);
  CHECK(report.cd_l2 < 0.01);
  CHECK(report.cd_l2_x100 == doctest::Approx(100 * report.cd_l2).epsilon(1e-12));
  CHECK(report.fscore.at(0.1) == 1.0);
  CHECK(report.nc > 0.95);
  CHECK(report.n_recon == 4000);
  CHECK(report.n_gt == 4000);
  CHECK(report.seed == 7);
  CHECK(report.cd_convention == "averaged");
  CHECK(report.within_rule == "closed");
  CHECK(report.gt_normals == "sampled");
}

TEST_CASE("evaluation is deterministic in the seed and honors the convention") {
  auto mesh = tetrahedron();
  GroundTruth gt;
  gt.mesh = &mesh;
  auto r1 = evaluate_reconstruction(mesh, gt, 500, {0.01}, 3);
  auto r2 = evaluate_reconstruction(mesh, gt, 500, {0.01}, 3);
  CHECK(r1.cd_l1 == r2.cd_l1);
  CHECK(r1.nc == r2.nc);
  auto r3 = evaluate_reconstruction(mesh, gt, 500, {0.01}, 4);
  CHECK(r1.cd_l1 != r3.cd_l1);
  auto rs = evaluate_reconstruction(mesh, gt, 500, {0.01}, 3,
                                    ChamferConvention::Summed);
  CHECK(rs.cd_l1 == doctest::Approx(2 * r1.cd_l1).epsilon(1e-14));
  CHECK(rs.cd_convention == "sum");
}

TEST_CASE("ground-truth clouds: provided normals versus plane-fit fallback") {
  auto mesh = tetrahedron();
  auto cloud = sample_surface(mesh, 800, 21);
  GroundTruth gt;
  gt.cloud = &cloud;
  auto provided = evaluate_reconstruction(mesh, gt, 800, {0.01}, 5);
  CHECK(provided.gt_normals == "provided");
  CHECK(provided.n_gt == 800);

  PointCloud bare;
  bare.points = cloud.points;
  GroundTruth gt_bare;
  gt_bare.cloud = &bare;
  auto pca = evaluate_reconstruction(mesh, gt_bare, 800, {0.01}, 5);
  CHECK(pca.gt_normals == "pca");
  CHECK(pca.pca_k == 18);
  CHECK(pca.nc > 0.8);
  CHECK(pca.cd_l1 == provided.cd_l1);  // geometry unaffected by normals

  GroundTruth none;
  CHECK_THROWS_AS(evaluate_reconstruction(mesh, none, 100, {0.01}, 1),
                  std::invalid_argument);
}

TEST_CASE("metric report serializes with its conventions") {
  auto mesh = tetrahedron();
  GroundTruth gt;
  gt.mesh = &mesh;
  auto report = evaluate_reconstruction(mesh, gt, 300, {0.002, 0.004}, 9);
  const nlohmann::json j = to_json(report);
  CHECK(j.at("cd_l1").get<double>() == report.cd_l1);
  CHECK(j.at("fscore").size() == 2);
  CHECK(j.at("fscore").contains("0.002"));
  CHECK(j.at("cd_convention") == "averaged");
  CHECK(j.at("within_rule") == "closed");
  CHECK(j.at("seed") == 9);
  CHECK(j.at("directional").at("l1_ab").get<double>() == report.l1_ab);
}
