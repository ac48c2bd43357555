#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "pullmesh/pointcloud.hpp"
#include "test_util.hpp"

using namespace pullmesh;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) {
    path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path, std::ios::binary);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("xyz loader: points only, normals, comments, blank lines") {
  TempFile f("pc_plain.xyz",
             "# comment\n"
             "0 0 0\n"
             "\n"
             "1 2 3\n");
  auto pc = load_cloud(f.path);
  REQUIRE(pc.size() == 2);
  CHECK(pc.points[1].z == 3);
  CHECK(!pc.has_normals());

  TempFile g("pc_normals.xyz", "0 0 0 1 0 0\n1 1 1 0 0 1\n");
  auto pcn = load_cloud(g.path);
  REQUIRE(pcn.size() == 2);
  REQUIRE(pcn.has_normals());
  CHECK(pcn.normals[1].z == 1);
}

TEST_CASE("xyz loader rejects malformed input with line numbers") {
  TempFile f("pc_bad.xyz", "0 0 0\n1 2\n");
  CHECK_THROWS_WITH_AS(load_cloud(f.path), doctest::Contains(":2"), IoError);

  TempFile g("pc_mixed.xyz", "0 0 0 1 0 0\n1 1 1\n");
  CHECK_THROWS_AS(load_cloud(g.path), IoError);

  TempFile h("pc_empty.xyz", "# nothing\n");
  CHECK_THROWS_AS(load_cloud(h.path), IoError);

  CHECK_THROWS_AS(load_cloud("/nonexistent/file.xyz"), IoError);
}

TEST_CASE("obj vertex loader") {
  TempFile f("pc.obj",
             "v 1 0 0\n"
             "vn 0 0 1\n"
             "v 0 2 0\n"
             "f 1 2 1\n");
  auto pc = load_cloud(f.path);
  REQUIRE(pc.size() == 2);
  CHECK(pc.points[1].y == 2);
}

TEST_CASE("ascii ply loader with normals and extra properties") {
  TempFile f("pc.ply",
             "ply\n"
             "format ascii 1.0\n"
             "comment made by hand\n"
             "element vertex 2\n"
             "property float x\n"
             "property float y\n"
             "property float z\n"
             "property float confidence\n"
             "property float nx\n"
             "property float ny\n"
             "property float nz\n"
             "end_header\n"
             "0 0 0 0.5 1 0 0\n"
             "1 2 3 0.5 0 1 0\n");
  auto pc = load_cloud(f.path);
  REQUIRE(pc.size() == 2);
  CHECK(pc.points[1].z == 3);
  REQUIRE(pc.has_normals());
  CHECK(pc.normals[1].y == 1);
}

TEST_CASE("binary little-endian ply loader") {
  std::string header =
      "ply\nformat binary_little_endian 1.0\nelement vertex 2\n"
      "property float x\nproperty float y\nproperty float z\nend_header\n";
  std::string body;
  const float vals[6] = {1.f, 2.f, 3.f, -4.f, 0.5f, 8.f};
  body.assign(reinterpret_cast<const char*>(vals), sizeof vals);
  TempFile f("pc_bin.ply", header + body);
  auto pc = load_cloud(f.path);
  REQUIRE(pc.size() == 2);
  CHECK(pc.points[0].x == 1.0);
  CHECK(pc.points[1].y == 0.5);
}

TEST_CASE("ply loader rejects damage") {
  TempFile f("pc_notply.ply", "solid nope\n");
  CHECK_THROWS_AS(load_cloud(f.path), IoError);

  TempFile g("pc_trunc.ply",
             "ply\nformat ascii 1.0\nelement vertex 3\n"
             "property float x\nproperty float y\nproperty float z\nend_header\n"
             "0 0 0\n");
  CHECK_THROWS_WITH_AS(load_cloud(g.path), doctest::Contains("truncated"), IoError);
}

TEST_CASE("save then load round trip keeps coordinates exactly") {
  auto pc = testutil::sphere_cloud(50, 0.83, 3);
  const std::string path =
      (std::filesystem::temp_directory_path() / "pc_rt.xyz").string();
  save_xyz(pc, path);
  auto back = load_cloud(path);
  std::remove(path.c_str());
  REQUIRE(back.size() == pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    CHECK(back.points[i].x == pc.points[i].x);
    CHECK(back.normals[i].z == pc.normals[i].z);
  }
}

TEST_CASE("normalize: worked example") {
  PointCloud pc;
  pc.points = {{0, 0, 0}, {2, 0, 0}};
  auto [out, t] = normalize(pc);
  CHECK(t.translation.x == 1.0);
  CHECK(t.scale == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(out.points[0].x == doctest::Approx(-0.9).epsilon(1e-15));
  CHECK(out.points[1].x == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("normalize: centroid at origin, extent 0.9, invert restores") {
  auto pc = testutil::sphere_cloud(200, 2.5, 7);
  for (Vec3& p : pc.points) p = p + Vec3{1, -3, 0.5};
  auto [out, t] = normalize(pc);
  Vec3 c{0, 0, 0};
  double extent = 0;
  for (const Vec3& p : out.points) {
    c = c + p;
    extent = std::max({extent, std::abs(p.x), std::abs(p.y), std::abs(p.z)});
  }
  c = c / static_cast<double>(out.size());
  CHECK(std::abs(c.x) < 1e-12);
  CHECK(std::abs(c.y) < 1e-12);
  CHECK(std::abs(c.z) < 1e-12);
  CHECK(extent == doctest::Approx(0.9).epsilon(1e-12));
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 back = t.invert(out.points[i]);
    CHECK(std::abs(back.x - pc.points[i].x) < 1e-12);
    CHECK(std::abs(back.y - pc.points[i].y) < 1e-12);
    CHECK(std::abs(back.z - pc.points[i].z) < 1e-12);
  }
}

TEST_CASE("normalize rejects degenerate input") {
  PointCloud pc;
  CHECK_THROWS_AS(normalize(pc), std::invalid_argument);
  pc.points = {{1, 1, 1}, {1, 1, 1}};
  CHECK_THROWS_AS(normalize(pc), std::invalid_argument);
}

TEST_CASE("kd-tree nearest matches brute force bitwise") {
  const auto pts = testutil::random_points(500, 1.0, 11);
  KdTree tree(pts);
  for (const Vec3& q : testutil::random_points(300, 1.2, 13)) {
    const auto r = tree.nearest(q);
    const auto [bi, bd] = testutil::brute_nearest(pts, q);
    CHECK(r.index == bi);
    CHECK(r.sq_distance == bd);
  }
}

TEST_CASE("kd-tree tie-break prefers the lowest index") {
  std::vector<Vec3> pts = {{1, 0, 0}, {0, 1, 0}, {-1, 0, 0}, {0, -1, 0}};
  KdTree tree(pts);
  const auto r = tree.nearest({0, 0, 0});
  CHECK(r.index == 0);
  CHECK(r.sq_distance == 1.0);
}

TEST_CASE("knearest matches a sorted brute-force list") {
  const auto pts = testutil::random_points(200, 1.0, 17);
  KdTree tree(pts);
  for (const Vec3& q : testutil::random_points(50, 1.0, 19)) {
    const auto got = tree.knearest(q, 7);
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < pts.size(); ++i)
      all.push_back({sq_dist(q, pts[i]), i});
    std::sort(all.begin(), all.end());
    REQUIRE(got.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) {
      CHECK(got[i].index == all[i].second);
      CHECK(got[i].sq_distance == all[i].first);
    }
  }
}

TEST_CASE("knearest can skip the query's own index") {
  const auto pts = testutil::random_points(100, 1.0, 23);
  KdTree tree(pts);
  const auto got = tree.knearest(pts[42], 5, /*skip_index=*/42);
  for (const auto& r : got) CHECK(r.index != 42);
  CHECK(got.front().sq_distance > 0.0);
}

TEST_CASE("kd-tree rejects bad arguments") {
  CHECK_THROWS_AS(KdTree(std::vector<Vec3>{}), std::invalid_argument);
  KdTree tree(testutil::random_points(10, 1.0, 29));
  CHECK_THROWS_AS((void)tree.knearest({0, 0, 0}, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)tree.knearest({0, 0, 0}, 11), std::invalid_argument);
}

TEST_CASE("local sigma equals distance to the k-th neighbor") {
  auto pc = testutil::sphere_cloud(120, 1.0, 31);
  KdTree tree(pc.points);
  const std::size_t k = 10;
  const auto sigma = local_sigma(tree, pc, k);
  for (std::size_t i = 0; i < pc.size(); i += 13) {
    std::vector<double> d;
    for (std::size_t j = 0; j < pc.size(); ++j)
      if (j != i) d.push_back(sq_dist(pc.points[i], pc.points[j]));
    std::sort(d.begin(), d.end());
    CHECK(sigma[i] == std::sqrt(d[k - 1]));
  }
  CHECK_THROWS_AS(local_sigma(tree, pc, pc.size()), std::invalid_argument);
}

TEST_CASE("query sampling: layout, determinism, spread") {
  auto pc = testutil::sphere_cloud(60, 1.0, 37);
  KdTree tree(pc.points);
  const std::size_t per_point = 8, k = 5;
  auto b1 = sample_queries(pc, tree, per_point, k, 99);
  auto b2 = sample_queries(pc, tree, per_point, k, 99);
  REQUIRE(b1.queries.rows == pc.size() * per_point);
  CHECK(b1.queries.data == b2.queries.data);  // same seed, same batch
  auto b3 = sample_queries(pc, tree, per_point, k, 100);
  CHECK(b1.queries.data != b3.queries.data);
  for (std::size_t q = 0; q < b1.queries.rows; ++q)
    CHECK(b1.seed_index[q] == q / per_point);
  // each query sits within a few sigma of its seed point
  for (std::size_t q = 0; q < b1.queries.rows; ++q) {
    const Vec3 p = pc.points[b1.seed_index[q]];
    const Vec3 s{b1.queries.at(q, 0), b1.queries.at(q, 1), b1.queries.at(q, 2)};
    CHECK((s - p).norm() <= 8 * b1.sigma[b1.seed_index[q]]);
  }
}

TEST_CASE("query sampling commutes with rotation") {
  // rotating the cloud and rotating the noise rotates the queries
  auto pc = testutil::sphere_cloud(40, 1.0, 41);
  // rotation by 90 degrees around z: (x,y,z) -> (-y,x,z)
  auto rot = [](const Vec3& p) { return Vec3{-p.y, p.x, p.z}; };
  PointCloud rpc = pc;
  for (Vec3& p : rpc.points) p = rot(p);
  KdTree t1(pc.points), t2(rpc.points);
  const std::size_t per_point = 4, k = 6;
  const Tensor noise = query_noise(pc.size(), per_point, 7);
  Tensor rnoise = noise;
  for (std::size_t i = 0; i < noise.rows; ++i) {
    const Vec3 r = rot({noise.at(i, 0), noise.at(i, 1), noise.at(i, 2)});
    rnoise.at(i, 0) = r.x;
    rnoise.at(i, 1) = r.y;
    rnoise.at(i, 2) = r.z;
  }
  auto b1 = sample_queries(pc, t1, noise, per_point, k);
  auto b2 = sample_queries(rpc, t2, rnoise, per_point, k);
  for (std::size_t q = 0; q < b1.queries.rows; ++q) {
    const Vec3 r = rot({b1.queries.at(q, 0), b1.queries.at(q, 1), b1.queries.at(q, 2)});
    CHECK(std::abs(r.x - b2.queries.at(q, 0)) < 1e-12);
    CHECK(std::abs(r.y - b2.queries.at(q, 1)) < 1e-12);
    CHECK(std::abs(r.z - b2.queries.at(q, 2)) < 1e-12);
  }
}

TEST_CASE("noise injection is unbiased and seed-stable") {
  auto pc = testutil::sphere_cloud(2000, 1.0, 43);
  const double sigma = 0.05;
  auto noisy = add_noise(pc, sigma, 5);
  CHECK(add_noise(pc, sigma, 5).points[7].x == noisy.points[7].x);
  CHECK(add_noise(pc, 0.0, 5).points[7].x == pc.points[7].x);
  double mean = 0, var = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 d = noisy.points[i] - pc.points[i];
    mean += d.x + d.y + d.z;
    var += d.sqnorm();
  }
  const auto n = static_cast<double>(3 * pc.size());
  mean /= n;
  var /= n;
  CHECK(std::abs(mean) < 4 * sigma / std::sqrt(n));
  CHECK(var == doctest::Approx(sigma * sigma).epsilon(0.1));
  CHECK_THROWS_AS(add_noise(pc, -1.0, 5), std::invalid_argument);
}
