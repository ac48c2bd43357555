#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "pullmesh/pullmesh.hpp"
#include "test_util.hpp"

#ifndef PULLMESH_CLI_PATH
#error "PULLMESH_CLI_PATH must be defined by the build"
#endif

namespace fs = std::filesystem;
using namespace pullmesh;

namespace {

struct Workdir {
  fs::path dir;
  Workdir() {
    dir = fs::temp_directory_path() / "pullmesh_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workdir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& out = "/dev/null") {
  const std::string cmd =
      std::string(PULLMESH_CLI_PATH) + " " + args + " > " + out + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return nlohmann::json::parse(in);
}

std::string write_sphere(const Workdir& wd, int n = 120, std::uint64_t seed = 1) {
  const std::string path = wd / "sphere.xyz";
  save_xyz(testutil::sphere_cloud(n, 0.8, seed), path);
  return path;
}

const std::string kTinyTrain =
    " --iterations 30 --batch 64 --lr 1e-3 --width 8 --hidden 16"
    " --per-point 2 --sigma-k 10 --seed 3";

}  // namespace

TEST_CASE("version and argument errors") {
  CHECK(run("--version") == 0);
  CHECK(run("frobnicate") == 3);
  CHECK(run("reconstruct") == 3);  // missing required arguments
  CHECK(run("") == 3);             // a subcommand is required
}

TEST_CASE("info describes clouds and reports missing files") {
  Workdir wd;
  const std::string cloud = write_sphere(wd);
  const std::string out = wd / "info.json";
  CHECK(run("info " + cloud, out) == 0);
  const auto j = read_json(out);
  CHECK(j.at("kind") == "cloud");
  CHECK(j.at("points") == 120);
  CHECK(j.at("has_normals") == true);
  CHECK(run("info " + (wd / "absent.xyz")) == 2);
}

TEST_CASE("noise writes a perturbed copy with a manifest") {
  Workdir wd;
  const std::string cloud = write_sphere(wd);
  const std::string out = wd / "noisy.xyz";
  CHECK(run("noise " + cloud + " -o " + out + " --sigma 0.01 --seed 5") == 0);
  const PointCloud noisy = load_cloud(out);
  CHECK(noisy.size() == 120);
  const auto manifest = read_json(out + ".manifest.json");
  CHECK(manifest.at("command") == "noise");
  CHECK(manifest.at("config").at("noise.sigma").at("value") == "0.01");
  CHECK(manifest.at("config").at("noise.sigma").at("source") == "flag");
}

TEST_CASE("reconstruct, mesh, info, and eval round trip end to end") {
  Workdir wd;
  const std::string cloud = write_sphere(wd);
  const std::string mesh_path = wd / "out.obj";
  CHECK(run("reconstruct " + cloud + " -o " + mesh_path + kTinyTrain +
            " --resolution 16") == 0);

  const TriangleMesh mesh = load_mesh(mesh_path);
  CHECK(!mesh.faces.empty());
  CHECK(fs::exists(mesh_path + ".mpul"));
  const auto manifest = read_json(mesh_path + ".manifest.json");
  CHECK(manifest.at("command") == "reconstruct");
  CHECK(manifest.at("config").at("iterations").at("value") == "30");
  CHECK(manifest.at("config").at("iterations").at("source") == "flag");
  CHECK(manifest.at("config").at("batch_queries").at("source") == "flag");
  CHECK(manifest.at("config").at("loss.mode").at("source") == "default");
  CHECK(manifest.at("wall_seconds").get<double>() > 0.0);

  // one JSON object per logged iteration
  std::ifstream runlog(mesh_path + ".runlog.ndjson");
  REQUIRE(runlog.good());
  std::string line;
  int lines = 0;
  while (std::getline(runlog, line)) {
    CHECK(nlohmann::json::parse(line).contains("total"));
    ++lines;
  }
  CHECK(lines >= 2);

  const std::string info_path = wd / "ckpt_info.json";
  CHECK(run("info " + mesh_path + ".mpul", info_path) == 0);
  const auto info = read_json(info_path);
  CHECK(info.at("kind") == "checkpoint");
  CHECK(info.at("iteration") == 30);

  const std::string remesh = wd / "remesh.obj";
  CHECK(run("mesh " + mesh_path + ".mpul -o " + remesh + " --resolution 16") == 0);
  CHECK(!load_mesh(remesh).faces.empty());

  const std::string report_path = wd / "report.json";
  CHECK(run("eval " + mesh_path + " --gt " + cloud + " -o " + report_path +
            " --samples 400 --thresholds 0.05,0.1 --seed 2") == 0);
  const auto report = read_json(report_path);
  CHECK(report.at("cd_l1").get<double>() > 0.0);
  CHECK(report.at("fscore").size() == 2);
  CHECK(report.at("n_recon") == 400);
}

TEST_CASE("train honors --steps and --loss") {
  Workdir wd;
  const std::string cloud = write_sphere(wd);
  const std::string ckpt = wd / "one_step.mpul";
  CHECK(run("train " + cloud + " -o " + ckpt + kTinyTrain +
            " --steps 1 --loss pull-only") == 0);
  const Checkpoint cp = load_checkpoint(ckpt);
  CHECK(cp.config.msp.step_levels == std::vector<int>{4});
  CHECK(cp.config.loss.mode == LossMode::PullOnly);
  const auto manifest = read_json(ckpt + ".manifest.json");
  CHECK(manifest.at("config").at("msp.step_levels").at("value") == "4");
}

TEST_CASE("configuration errors exit with code 3") {
  Workdir wd;
  const std::string cloud = write_sphere(wd);
  const std::string out = wd / "never.obj";
  CHECK(run("reconstruct " + cloud + " -o " + out + kTinyTrain + " --steps 7") == 3);
  CHECK(run("reconstruct " + cloud + " -o " + out + kTinyTrain + " --lr 0") == 3);
  CHECK(run("train " + cloud + " -o " + (wd / "c.mpul") + kTinyTrain +
            " --loss sorcery") == 3);

  const std::string cfg = wd / "bad.cfg";
  std::ofstream(cfg) << "bogus_key = 1\n";
  CHECK(run("train " + cloud + " -o " + (wd / "c.mpul") + kTinyTrain +
            " --config " + cfg) == 3);
  CHECK(!fs::exists(out));
}

TEST_CASE("I/O errors exit with code 2") {
  Workdir wd;
  CHECK(run("reconstruct " + (wd / "absent.xyz") + " -o " + (wd / "m.obj")) == 2);
  CHECK(run("eval " + (wd / "absent.obj") + " --gt " + (wd / "absent.xyz")) == 2);

  const std::string fake = wd / "fake.mpul";
  std::ofstream(fake) << "not a checkpoint";
  CHECK(run("mesh " + fake + " -o " + (wd / "m.obj")) == 2);
}
