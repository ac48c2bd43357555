#ifndef PULLMESH_CONFIG_HPP
#define PULLMESH_CONFIG_HPP

// Plain-text `key = value` configuration with layered resolution
// (defaults, then config file, then command-line overrides) and a run
// manifest recording the provenance of every resolved value.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pullmesh/metrics.hpp"
#include "pullmesh/trainer.hpp"

namespace pullmesh {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

// `key = value` lines; '#' starts a comment; blank lines ignored.
inline std::map<std::string, std::string> parse_key_values(std::istream& in,
                                                           const std::string& where) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ":" + std::to_string(lineno) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return parse_key_values(in, path);
}

// ---------------------------------------------------------------------------
// Every tunable in one place, with string get/set so the file, the flags, and
// the manifest all speak the same key names.

struct Settings {
  TrainConfig train;
  std::size_t mesh_resolution = 128;
  int mesh_level = -1;  // -1 selects the final step level
  std::size_t eval_samples = 10000;
  std::vector<double> eval_thresholds{0.002, 0.004};
  ChamferConvention cd_convention = ChamferConvention::Averaged;
  std::size_t pca_k = 18;
  double noise_sigma = 0.0;
};

namespace detail {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!trim(tok).empty()) out.push_back(std::stoi(trim(tok)));
  return out;
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!trim(tok).empty()) out.push_back(std::stod(trim(tok)));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  return out.str();
}

inline std::string fmt(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("not a boolean: " + s);
}

}  // namespace detail

struct SettingsKey {
  std::string name;
  std::string (*get)(const Settings&);
  void (*set)(Settings&, const std::string&);
};

inline const std::vector<SettingsKey>& settings_keys() {
  using detail::fmt;
  using detail::join;
  static const std::vector<SettingsKey> keys = {
      {"iterations", [](const Settings& s) { return std::to_string(s.train.iterations); },
       [](Settings& s, const std::string& v) { s.train.iterations = std::stoi(v); }},
      {"batch_queries", [](const Settings& s) { return std::to_string(s.train.batch_queries); },
       [](Settings& s, const std::string& v) { s.train.batch_queries = std::stoi(v); }},
      {"learning_rate", [](const Settings& s) { return fmt(s.train.learning_rate); },
       [](Settings& s, const std::string& v) { s.train.learning_rate = std::stod(v); }},
      {"warmup_iterations", [](const Settings& s) { return std::to_string(s.train.warmup_iterations); },
       [](Settings& s, const std::string& v) { s.train.warmup_iterations = std::stoi(v); }},
      {"warmup_lr", [](const Settings& s) { return fmt(s.train.warmup_lr); },
       [](Settings& s, const std::string& v) { s.train.warmup_lr = std::stod(v); }},
      {"uniform_queries", [](const Settings& s) { return fmt(s.train.uniform_queries); },
       [](Settings& s, const std::string& v) { s.train.uniform_queries = std::stod(v); }},
      {"lr_decay_at", [](const Settings& s) { return join(s.train.lr_decay_at); },
       [](Settings& s, const std::string& v) { s.train.lr_decay_at = detail::parse_double_list(v); }},
      {"lr_decay_factor", [](const Settings& s) { return fmt(s.train.lr_decay_factor); },
       [](Settings& s, const std::string& v) { s.train.lr_decay_factor = std::stod(v); }},
      {"seed", [](const Settings& s) { return std::to_string(s.train.seed); },
       [](Settings& s, const std::string& v) { s.train.seed = std::stoull(v); }},
      {"queries_per_point", [](const Settings& s) { return std::to_string(s.train.queries_per_point); },
       [](Settings& s, const std::string& v) { s.train.queries_per_point = std::stoi(v); }},
      {"sigma_k", [](const Settings& s) { return std::to_string(s.train.sigma_k); },
       [](Settings& s, const std::string& v) { s.train.sigma_k = std::stoi(v); }},
      {"log_every", [](const Settings& s) { return std::to_string(s.train.log_every); },
       [](Settings& s, const std::string& v) { s.train.log_every = std::stoi(v); }},
      {"fft.layers", [](const Settings& s) { return std::to_string(s.train.fft.layers); },
       [](Settings& s, const std::string& v) { s.train.fft.layers = std::stoi(v); }},
      {"fft.width", [](const Settings& s) { return std::to_string(s.train.fft.width); },
       [](Settings& s, const std::string& v) { s.train.fft.width = std::stoi(v); }},
      {"fft.taps", [](const Settings& s) { return join(s.train.fft.taps); },
       [](Settings& s, const std::string& v) { s.train.fft.taps = detail::parse_int_list(v); }},
      {"fft.eta", [](const Settings& s) { return fmt(s.train.fft.eta); },
       [](Settings& s, const std::string& v) { s.train.fft.eta = std::stod(v); }},
      {"fft.omega_bound_first", [](const Settings& s) { return fmt(s.train.fft.omega_bound_first); },
       [](Settings& s, const std::string& v) { s.train.fft.omega_bound_first = std::stod(v); }},
      {"fft.omega_bound", [](const Settings& s) { return fmt(s.train.fft.omega_bound); },
       [](Settings& s, const std::string& v) { s.train.fft.omega_bound = std::stod(v); }},
      {"fft.init", [](const Settings& s) { return std::string(init_scheme_name(s.train.fft.init)); },
       [](Settings& s, const std::string& v) { s.train.fft.init = parse_init_scheme(v); }},
      {"fft.encoder",
       [](const Settings& s) {
         return std::string(s.train.fft.encoder == EncoderKind::Linear ? "linear" : "frequency");
       },
       [](Settings& s, const std::string& v) {
         if (v == "linear") s.train.fft.encoder = EncoderKind::Linear;
         else if (v == "frequency") s.train.fft.encoder = EncoderKind::Frequency;
         else throw ConfigError("unknown encoder: " + v);
       }},
      {"head.hidden", [](const Settings& s) { return std::to_string(s.train.head.hidden); },
       [](Settings& s, const std::string& v) { s.train.head.hidden = std::stoi(v); }},
      {"head.depth", [](const Settings& s) { return std::to_string(s.train.head.depth); },
       [](Settings& s, const std::string& v) { s.train.head.depth = std::stoi(v); }},
      {"msp.step_levels", [](const Settings& s) { return join(s.train.msp.step_levels); },
       [](Settings& s, const std::string& v) { s.train.msp.step_levels = detail::parse_int_list(v); }},
      {"msp.features",
       [](const Settings& s) {
         return std::string(s.train.msp.features == FeatureConditioning::FrozenQ0
                                ? "frozen-q0"
                                : "recompute");
       },
       [](Settings& s, const std::string& v) {
         if (v == "frozen-q0") s.train.msp.features = FeatureConditioning::FrozenQ0;
         else if (v == "recompute") s.train.msp.features = FeatureConditioning::Recompute;
         else throw ConfigError("unknown feature conditioning: " + v);
       }},
      {"loss.mode", [](const Settings& s) { return std::string(loss_mode_name(s.train.loss.mode)); },
       [](Settings& s, const std::string& v) { s.train.loss.mode = parse_loss_mode(v); }},
      {"loss.gamma", [](const Settings& s) { return fmt(s.train.loss.gamma); },
       [](Settings& s, const std::string& v) { s.train.loss.gamma = std::stod(v); }},
      {"loss.beta", [](const Settings& s) { return fmt(s.train.loss.beta); },
       [](Settings& s, const std::string& v) { s.train.loss.beta = std::stod(v); }},
      {"loss.delta", [](const Settings& s) { return fmt(s.train.loss.delta); },
       [](Settings& s, const std::string& v) { s.train.loss.delta = std::stod(v); }},
      {"loss.alpha_through",
       [](const Settings& s) { return std::string(s.train.loss.alpha_through ? "true" : "false"); },
       [](Settings& s, const std::string& v) { s.train.loss.alpha_through = detail::parse_bool(v); }},
      {"loss.grad_ref_target",
       [](const Settings& s) { return std::string(s.train.loss.grad_ref_target ? "true" : "false"); },
       [](Settings& s, const std::string& v) { s.train.loss.grad_ref_target = detail::parse_bool(v); }},
      {"mesh.resolution", [](const Settings& s) { return std::to_string(s.mesh_resolution); },
       [](Settings& s, const std::string& v) { s.mesh_resolution = std::stoul(v); }},
      {"mesh.level", [](const Settings& s) { return std::to_string(s.mesh_level); },
       [](Settings& s, const std::string& v) { s.mesh_level = std::stoi(v); }},
      {"eval.samples", [](const Settings& s) { return std::to_string(s.eval_samples); },
       [](Settings& s, const std::string& v) { s.eval_samples = std::stoul(v); }},
      {"eval.thresholds", [](const Settings& s) { return join(s.eval_thresholds); },
       [](Settings& s, const std::string& v) { s.eval_thresholds = detail::parse_double_list(v); }},
      {"eval.cd_convention",
       [](const Settings& s) { return std::string(chamfer_convention_name(s.cd_convention)); },
       [](Settings& s, const std::string& v) {
         if (v == "averaged") s.cd_convention = ChamferConvention::Averaged;
         else if (v == "sum") s.cd_convention = ChamferConvention::Summed;
         else throw ConfigError("unknown cd convention: " + v);
       }},
      {"eval.pca_k", [](const Settings& s) { return std::to_string(s.pca_k); },
       [](Settings& s, const std::string& v) { s.pca_k = std::stoul(v); }},
      {"noise.sigma", [](const Settings& s) { return fmt(s.noise_sigma); },
       [](Settings& s, const std::string& v) { s.noise_sigma = std::stod(v); }},
  };
  return keys;
}

// Resolved settings plus the source of every value.
struct ResolvedSettings {
  Settings settings;
  std::map<std::string, std::string> provenance;  // key -> default|config|flag

  void apply(const std::map<std::string, std::string>& values,
             const std::string& source) {
    for (const auto& [key, value] : values) {
      const SettingsKey* match = nullptr;
      for (const auto& k : settings_keys())
        if (k.name == key) {
          match = &k;
          break;
        }
      if (!match) throw ConfigError("unknown config key: " + key);
      try {
        match->set(settings, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError("bad value for " + key + ": " + value + " (" + e.what() + ")");
      }
      provenance[key] = source;
    }
  }
};

inline ResolvedSettings resolve_settings(
    const std::map<std::string, std::string>& config_file_values,
    const std::map<std::string, std::string>& flag_values) {
  ResolvedSettings r;
  for (const auto& k : settings_keys()) r.provenance[k.name] = "default";
  r.apply(config_file_values, "config");
  r.apply(flag_values, "flag");
  return r;
}

// ---------------------------------------------------------------------------
// Run manifest: everything needed to replay the run bit-identically.

inline constexpr const char* kToolVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> inputs;   // role -> path
  std::map<std::string, std::string> outputs;  // role -> path
  ResolvedSettings resolved;
  double wall_seconds = 0;
};

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json config = nlohmann::json::object();
  for (const auto& k : settings_keys())
    config[k.name] = {{"value", k.get(m.resolved.settings)},
                      {"source", m.resolved.provenance.at(k.name)}};
  return nlohmann::json{{"tool", "pullmesh"},
                        {"version", kToolVersion},
                        {"command", m.command},
                        {"inputs", m.inputs},
                        {"outputs", m.outputs},
                        {"config", config},
                        {"wall_seconds", m.wall_seconds}};
}

inline void write_manifest(const RunManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  out << to_json(m).dump(2) << "\n";
}

}  // namespace pullmesh

#endif
