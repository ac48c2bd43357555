// Command-line front end: reconstruct | train | mesh | eval | ablate | noise | info.
// Exit codes: 0 ok, 2 I/O, 3 configuration, 4 numeric abort.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pullmesh/pullmesh.hpp"

namespace fs = std::filesystem;
using namespace pullmesh;

namespace {

// Collects only the flags the user actually passed, so defaults and config
// file values keep their provenance.
struct FlagCollector {
  std::vector<std::pair<std::string, std::string*>> slots;
  std::vector<CLI::Option*> opts;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& help) {
    auto* storage = new std::string();  // lives for the process
    slots.emplace_back(key, storage);
    opts.push_back(cmd->add_option(flag, *storage, help));
  }
  std::map<std::string, std::string> collect() const {
    std::map<std::string, std::string> out;
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (opts[i]->count() > 0) out[slots[i].first] = *slots[i].second;
    return out;
  }
};

std::vector<int> step_levels_for(int steps) {
  static const std::vector<std::vector<int>> levels{
      {4}, {4, 6}, {4, 6, 8}, {4, 6, 8, 8}, {4, 6, 8, 8, 8}};
  if (steps < 1 || steps > static_cast<int>(levels.size()))
    throw ConfigError("--steps must be in [1, 5]");
  return levels[static_cast<std::size_t>(steps - 1)];
}

void add_train_flags(CLI::App* cmd, FlagCollector& fc) {
  fc.add(cmd, "--iterations", "iterations", "training iterations");
  fc.add(cmd, "--batch", "batch_queries", "queries per batch");
  fc.add(cmd, "--lr", "learning_rate", "initial learning rate");
  fc.add(cmd, "--warmup", "warmup_iterations", "sign-seeding iterations before pulling");
  fc.add(cmd, "--seed", "seed", "root random seed");
  fc.add(cmd, "--width", "fft.width", "encoder width");
  fc.add(cmd, "--eta", "fft.eta", "init scale profile");
  fc.add(cmd, "--init", "fft.init", "init scheme: multipull|random-uniform|bacon-style");
  fc.add(cmd, "--encoder", "fft.encoder", "encoder: frequency|linear");
  fc.add(cmd, "--taps", "fft.taps", "tap levels, comma separated");
  fc.add(cmd, "--hidden", "head.hidden", "distance head hidden width");
  fc.add(cmd, "--loss", "loss.mode", "loss mode: full|pull-only|recon-only|recon+grad");
  fc.add(cmd, "--per-point", "queries_per_point", "queries sampled per cloud point");
  fc.add(cmd, "--sigma-k", "sigma_k", "neighbor rank for the sampling radius");
  fc.add(cmd, "--step-levels", "msp.step_levels", "tap level per pulling step");
}

struct StepsFlag {
  int value = 0;
  CLI::Option* opt = nullptr;
};

StepsFlag* add_steps_flag(CLI::App* cmd) {
  auto* sf = new StepsFlag();
  sf->opt = cmd->add_option("--steps", sf->value, "number of pulling steps (1-5)");
  return sf;
}

void apply_steps_flag(const StepsFlag* sf, std::map<std::string, std::string>& flags) {
  if (sf->opt->count() == 0) return;
  std::string joined;
  for (int l : step_levels_for(sf->value))
    joined += (joined.empty() ? "" : ",") + std::to_string(l);
  flags["msp.step_levels"] = joined;
}

// --taps without explicit step levels keeps the two consistent
void reconcile_taps(std::map<std::string, std::string>& flags) {
  if (flags.count("fft.taps") && !flags.count("msp.step_levels"))
    flags["msp.step_levels"] = flags.at("fft.taps");
}

ResolvedSettings resolve(const std::string& config_path,
                         const std::map<std::string, std::string>& flags) {
  std::map<std::string, std::string> file_values;
  if (!config_path.empty()) file_values = load_config_file(config_path);
  return resolve_settings(file_values, flags);
}

PointCloud load_and_report(const std::string& path) {
  PointCloud pc = load_cloud(path);
  std::cerr << "loaded " << pc.size() << " points from " << path << "\n";
  return pc;
}

// ground truth by content: a mesh file with faces, otherwise a point cloud
struct LoadedGt {
  TriangleMesh mesh;
  PointCloud cloud;
  bool is_mesh = false;
};

LoadedGt load_gt(const std::string& path) {
  LoadedGt gt;
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "obj" || ext == "ply") {
    gt.mesh = load_mesh(path);
    if (!gt.mesh.faces.empty()) {
      gt.is_mesh = true;
      return gt;
    }
  }
  gt.cloud = load_cloud(path);
  return gt;
}

int mesh_level_or_final(const Settings& s) {
  if (s.mesh_level >= 0) return s.mesh_level;
  return s.train.msp.step_levels.back();
}

TriangleMesh extract_mesh(const FieldEvaluator& ev, const Settings& s) {
  const ScalarGrid grid = sample_grid(ev, s.mesh_resolution, mesh_level_or_final(s));
  return marching_cubes(grid);
}

void finish_manifest(RunManifest& manifest, const std::string& path,
                     std::chrono::steady_clock::time_point t0) {
  manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_manifest(manifest, path);
}

// ---------------------------------------------------------------------------

int cmd_reconstruct(const std::string& input, const std::string& output,
                    const std::string& checkpoint_path, const std::string& config_path,
                    const std::map<std::string, std::string>& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedSettings resolved = resolve(config_path, flags);
  Settings& s = resolved.settings;

  PointCloud raw = load_and_report(input);
  auto [cloud, transform] = normalize(raw);

  std::ofstream runlog(output + ".runlog.ndjson");
  TrainResult result = train(cloud, s.train, runlog ? &runlog : nullptr);

  const std::string ckpt = checkpoint_path.empty() ? output + ".mpul" : checkpoint_path;
  save_checkpoint(result.evaluator, s.train, transform,
                  static_cast<std::uint64_t>(s.train.iterations), ckpt);

  TriangleMesh mesh = denormalize(extract_mesh(result.evaluator, s), transform);
  save_mesh(mesh, output);
  std::cerr << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size()
            << " faces -> " << output << "\n";

  RunManifest manifest;
  manifest.command = "reconstruct";
  manifest.inputs["cloud"] = input;
  if (!config_path.empty()) manifest.inputs["config"] = config_path;
  manifest.outputs["mesh"] = output;
  manifest.outputs["checkpoint"] = ckpt;
  manifest.outputs["runlog"] = output + ".runlog.ndjson";
  manifest.resolved = resolved;
  finish_manifest(manifest, output + ".manifest.json", t0);
  return 0;
}

int cmd_train(const std::string& input, const std::string& checkpoint_path,
              const std::string& config_path,
              const std::map<std::string, std::string>& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedSettings resolved = resolve(config_path, flags);
  Settings& s = resolved.settings;

  PointCloud raw = load_and_report(input);
  auto [cloud, transform] = normalize(raw);

  std::ofstream runlog(checkpoint_path + ".runlog.ndjson");
  TrainResult result = train(cloud, s.train, runlog ? &runlog : nullptr);
  save_checkpoint(result.evaluator, s.train, transform,
                  static_cast<std::uint64_t>(s.train.iterations), checkpoint_path);

  RunManifest manifest;
  manifest.command = "train";
  manifest.inputs["cloud"] = input;
  if (!config_path.empty()) manifest.inputs["config"] = config_path;
  manifest.outputs["checkpoint"] = checkpoint_path;
  manifest.outputs["runlog"] = checkpoint_path + ".runlog.ndjson";
  manifest.resolved = resolved;
  finish_manifest(manifest, checkpoint_path + ".manifest.json", t0);
  return 0;
}

int cmd_mesh(const std::string& checkpoint_path, const std::string& output,
             const std::map<std::string, std::string>& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  Checkpoint cp = load_checkpoint(checkpoint_path);
  ResolvedSettings resolved = resolve("", flags);
  Settings& s = resolved.settings;
  s.train = cp.config;

  const int level = s.mesh_level >= 0 ? s.mesh_level : cp.evaluator.final_level();
  const ScalarGrid grid = sample_grid(cp.evaluator, s.mesh_resolution, level);
  TriangleMesh mesh = denormalize(marching_cubes(grid), cp.transform);
  save_mesh(mesh, output);
  std::cerr << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size()
            << " faces -> " << output << "\n";

  RunManifest manifest;
  manifest.command = "mesh";
  manifest.inputs["checkpoint"] = checkpoint_path;
  manifest.outputs["mesh"] = output;
  manifest.resolved = resolved;
  finish_manifest(manifest, output + ".manifest.json", t0);
  return 0;
}

int cmd_eval(const std::string& recon_path, const std::string& gt_path,
             const std::string& output, const std::string& config_path,
             const std::map<std::string, std::string>& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedSettings resolved = resolve(config_path, flags);
  const Settings& s = resolved.settings;

  TriangleMesh recon = load_mesh(recon_path);
  LoadedGt gt = load_gt(gt_path);
  GroundTruth ref;
  if (gt.is_mesh) ref.mesh = &gt.mesh;
  else ref.cloud = &gt.cloud;

  MetricReport report = evaluate_reconstruction(recon, ref, s.eval_samples,
                                                s.eval_thresholds, s.train.seed,
                                                s.cd_convention, s.pca_k);
  const std::string text = to_json(report).dump(2);
  std::cout << text << "\n";
  if (!output.empty()) {
    std::ofstream out(output);
    if (!out) throw IoError("cannot write report: " + output);
    out << text << "\n";
    RunManifest manifest;
    manifest.command = "eval";
    manifest.inputs["recon"] = recon_path;
    manifest.inputs["gt"] = gt_path;
    if (!config_path.empty()) manifest.inputs["config"] = config_path;
    manifest.outputs["report"] = output;
    manifest.resolved = resolved;
    finish_manifest(manifest, output + ".manifest.json", t0);
  }
  return 0;
}

int cmd_ablate(const std::string& input, const std::string& axis,
               const std::string& outdir, const std::string& config_path,
               const std::map<std::string, std::string>& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedSettings resolved = resolve(config_path, flags);
  Settings& s = resolved.settings;

  PointCloud raw = load_and_report(input);
  auto [cloud, transform] = normalize(raw);
  fs::create_directories(outdir);

  nlohmann::json summary = nlohmann::json::array();
  for (const AblationRow& row : ablation_matrix(s.train, axis)) {
    std::cerr << "=== " << row.label << " ===\n";
    TrainResult result = train(cloud, row.config, nullptr);

    Settings row_settings = s;
    row_settings.train = row.config;
    TriangleMesh mesh = extract_mesh(result.evaluator, row_settings);
    // evaluate in normalized coordinates against the input cloud
    GroundTruth ref;
    ref.cloud = &cloud;
    MetricReport report = evaluate_reconstruction(mesh, ref, s.eval_samples,
                                                  s.eval_thresholds, row.config.seed,
                                                  s.cd_convention, s.pca_k);
    nlohmann::json j = to_json(report);
    j["label"] = row.label;
    std::ofstream out(outdir + "/" + row.label + ".json");
    out << j.dump(2) << "\n";
    summary.push_back({{"label", row.label},
                       {"cd_l2_x100", report.cd_l2_x100},
                       {"cd_l1", report.cd_l1},
                       {"nc", report.nc}});
    std::cout << row.label << "  cd_l2_x100=" << report.cd_l2_x100
              << "  nc=" << report.nc << "\n";
  }
  std::ofstream sum(outdir + "/summary.json");
  sum << summary.dump(2) << "\n";

  RunManifest manifest;
  manifest.command = "ablate";
  manifest.inputs["cloud"] = input;
  if (!config_path.empty()) manifest.inputs["config"] = config_path;
  manifest.outputs["dir"] = outdir;
  manifest.resolved = resolved;
  finish_manifest(manifest, outdir + "/manifest.json", t0);
  return 0;
}

int cmd_noise(const std::string& input, const std::string& output,
              const std::string& config_path,
              const std::map<std::string, std::string>& flags) {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedSettings resolved = resolve(config_path, flags);
  const Settings& s = resolved.settings;

  PointCloud pc = load_and_report(input);
  PointCloud noisy = add_noise(pc, s.noise_sigma, s.train.seed);
  save_xyz(noisy, output);

  RunManifest manifest;
  manifest.command = "noise";
  manifest.inputs["cloud"] = input;
  manifest.outputs["cloud"] = output;
  manifest.resolved = resolved;
  finish_manifest(manifest, output + ".manifest.json", t0);
  return 0;
}

int cmd_info(const std::string& path) {
  nlohmann::json j;
  j["path"] = path;
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "mpul" || ext == "ckpt") {
    Checkpoint cp = load_checkpoint(path);
    j["kind"] = "checkpoint";
    j["iteration"] = cp.iteration;
    j["config"] = nlohmann::json(cp.config);
    j["transform"] = {{"translation",
                       {cp.transform.translation.x, cp.transform.translation.y,
                        cp.transform.translation.z}},
                      {"scale", cp.transform.scale}};
  } else if (ext == "obj" || ext == "ply") {
    TriangleMesh mesh = load_mesh(path);
    if (!mesh.faces.empty()) {
      const MeshTopology topo = mesh_topology(mesh);
      j["kind"] = "mesh";
      j["vertices"] = topo.vertices;
      j["edges"] = topo.edges;
      j["faces"] = topo.faces;
      j["euler_characteristic"] = topo.euler;
      j["watertight"] = topo.watertight;
      j["oriented"] = topo.oriented;
      j["area"] = mesh.area();
    } else {
      PointCloud pc = load_cloud(path);
      j["kind"] = "cloud";
      j["points"] = pc.size();
      j["has_normals"] = pc.normals.size() == pc.points.size();
    }
  } else {
    PointCloud pc = load_cloud(path);
    j["kind"] = "cloud";
    j["points"] = pc.size();
    j["has_normals"] = pc.normals.size() == pc.points.size();
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 4;
  } catch (const GraphError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pullmesh: surface reconstruction from raw point clouds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("pullmesh ") + kToolVersion);

  std::string input, output, checkpoint, config_path, gt_path, axis, level;

  auto* reconstruct = app.add_subcommand("reconstruct", "train on a cloud and extract a mesh");
  reconstruct->add_option("input", input, "input point cloud")->required();
  reconstruct->add_option("-o,--output", output, "output mesh path")->required();
  reconstruct->add_option("--checkpoint", checkpoint, "checkpoint path (default <output>.mpul)");
  reconstruct->add_option("--config", config_path, "key = value config file");
  FlagCollector rc_flags;
  add_train_flags(reconstruct, rc_flags);
  rc_flags.add(reconstruct, "--resolution", "mesh.resolution", "extraction grid resolution");
  rc_flags.add(reconstruct, "--level", "mesh.level", "tap level for extraction");
  auto* rc_steps = add_steps_flag(reconstruct);

  auto* train_cmd = app.add_subcommand("train", "train and write a checkpoint");
  train_cmd->add_option("input", input, "input point cloud")->required();
  train_cmd->add_option("-o,--output", checkpoint, "output checkpoint path")->required();
  train_cmd->add_option("--config", config_path, "key = value config file");
  FlagCollector tr_flags;
  add_train_flags(train_cmd, tr_flags);
  auto* tr_steps = add_steps_flag(train_cmd);

  auto* mesh_cmd = app.add_subcommand("mesh", "extract a mesh from a checkpoint");
  mesh_cmd->add_option("checkpoint", checkpoint, "trained checkpoint")->required();
  mesh_cmd->add_option("-o,--output", output, "output mesh path")->required();
  FlagCollector me_flags;
  me_flags.add(mesh_cmd, "--resolution", "mesh.resolution", "extraction grid resolution");
  me_flags.add(mesh_cmd, "--level", "mesh.level", "tap level for extraction");

  auto* eval_cmd = app.add_subcommand("eval", "compare a mesh against ground truth");
  eval_cmd->add_option("recon", input, "reconstructed mesh")->required();
  eval_cmd->add_option("--gt", gt_path, "ground-truth mesh or cloud")->required();
  eval_cmd->add_option("-o,--output", output, "report path (also printed)");
  eval_cmd->add_option("--config", config_path, "key = value config file");
  FlagCollector ev_flags;
  ev_flags.add(eval_cmd, "--thresholds", "eval.thresholds", "F-Score thresholds");
  ev_flags.add(eval_cmd, "--samples", "eval.samples", "surface samples per side");
  ev_flags.add(eval_cmd, "--cd-convention", "eval.cd_convention", "averaged|sum");
  ev_flags.add(eval_cmd, "--pca-k", "eval.pca_k", "neighbors for cloud normals");
  ev_flags.add(eval_cmd, "--seed", "seed", "sampling seed");

  auto* ablate_cmd = app.add_subcommand("ablate", "run one ablation axis");
  ablate_cmd->add_option("input", input, "input point cloud")->required();
  ablate_cmd->add_option("--axis", axis, "steps|taps|loss-mode|init")->required();
  ablate_cmd->add_option("-o,--output", output, "output directory")->required();
  ablate_cmd->add_option("--config", config_path, "key = value config file");
  FlagCollector ab_flags;
  add_train_flags(ablate_cmd, ab_flags);
  ab_flags.add(ablate_cmd, "--resolution", "mesh.resolution", "extraction grid resolution");
  ab_flags.add(ablate_cmd, "--samples", "eval.samples", "surface samples per side");
  ab_flags.add(ablate_cmd, "--thresholds", "eval.thresholds", "F-Score thresholds");

  auto* noise_cmd = app.add_subcommand("noise", "write a perturbed copy of a cloud");
  noise_cmd->add_option("input", input, "input point cloud")->required();
  noise_cmd->add_option("-o,--output", output, "output xyz path")->required();
  FlagCollector no_flags;
  no_flags.add(noise_cmd, "--sigma", "noise.sigma", "noise standard deviation");
  no_flags.add(noise_cmd, "--seed", "seed", "noise seed");

  auto* info_cmd = app.add_subcommand("info", "describe a cloud, mesh, or checkpoint");
  info_cmd->add_option("input", input, "file to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 3;
  }

  return guarded([&]() -> int {
    if (reconstruct->parsed()) {
      auto flags = rc_flags.collect();
      apply_steps_flag(rc_steps, flags);
      reconcile_taps(flags);
      return cmd_reconstruct(input, output, checkpoint, config_path, flags);
    }
    if (train_cmd->parsed()) {
      auto flags = tr_flags.collect();
      apply_steps_flag(tr_steps, flags);
      reconcile_taps(flags);
      return cmd_train(input, checkpoint, config_path, flags);
    }
    if (mesh_cmd->parsed()) return cmd_mesh(checkpoint, output, me_flags.collect());
    if (eval_cmd->parsed())
      return cmd_eval(input, gt_path, output, config_path, ev_flags.collect());
    if (ablate_cmd->parsed()) {
      auto flags = ab_flags.collect();
      reconcile_taps(flags);
      return cmd_ablate(input, axis, output, config_path, flags);
    }
    if (noise_cmd->parsed()) return cmd_noise(input, output, config_path, no_flags.collect());
    if (info_cmd->parsed()) return cmd_info(input);
    return 3;
  });
}
