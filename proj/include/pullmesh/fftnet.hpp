#ifndef PULLMESH_FFTNET_HPP
#define PULLMESH_FFTNET_HPP

// Frequency feature encoder: sine (Fourier) layers composed by Hadamard
// products, with band-limited feature taps at selected depths. Products of
// sines compose sum/difference frequencies, so deeper taps occupy wider
// spectral support; each tap conditions one pulling step.

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "pullmesh/autodiff.hpp"
#include "pullmesh/graph.hpp"
#include "pullmesh/rng.hpp"
#include "pullmesh/tensor.hpp"

namespace pullmesh {

enum class InitScheme {
  LayerScaled,   // sine-profile layer-dependent uniform range (the default)
  RandomUniform, // naive fixed range
  FanInUniform,  // 1/sqrt(fan_in) range, as in multiplicative filter nets
};

enum class EncoderKind { Frequency, Linear };

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "multipull" || s == "layer-scaled") return InitScheme::LayerScaled;
  if (s == "random-uniform" || s == "random") return InitScheme::RandomUniform;
  if (s == "bacon-style" || s == "fan-in") return InitScheme::FanInUniform;
  throw std::invalid_argument("unknown init scheme: " + s);
}

inline const char* init_scheme_name(InitScheme s) {
  switch (s) {
    case InitScheme::LayerScaled: return "multipull";
    case InitScheme::RandomUniform: return "random-uniform";
    case InitScheme::FanInUniform: return "bacon-style";
  }
  return "?";
}

struct FftConfig {
  int layers = 9;  // sine layers 0..layers-1; mixers exist for 1..layers-1
  int width = 256;
  std::vector<int> taps{4, 6, 8};
  double eta = 10.0;
  double omega_bound_first = 6.0;
  double omega_bound = 1.5;
  InitScheme init = InitScheme::LayerScaled;
  EncoderKind encoder = EncoderKind::Frequency;

  void validate() const {
    if (layers < 2) throw std::invalid_argument("fft: need at least 2 layers");
    if (width < 1) throw std::invalid_argument("fft: width < 1");
    if (taps.empty()) throw std::invalid_argument("fft: no taps");
    int prev = 0;
    for (int t : taps) {
      if (t <= prev || t > layers - 1)
        throw std::invalid_argument("fft: tap levels must be strictly increasing in [1, layers-1]");
      prev = t;
    }
    if (eta <= 0 || omega_bound <= 0 || omega_bound_first <= 0)
      throw std::invalid_argument("fft: non-positive scale");
  }
};

// Uniform half-range schedule for mixer weights at layer i.
inline double psi(int layer, int n_layers, double eta) {
  return std::sqrt(eta * std::sin(static_cast<double>(layer) * std::numbers::pi /
                                  static_cast<double>(n_layers)));
}

struct FilterStack {
  FftConfig cfg;
  std::vector<Tensor> omega;  // per sine layer, Mx3
  std::vector<Tensor> phi;    // per sine layer, 1xM
  std::vector<Tensor> wz;     // mixer for layer i at index i-1, MxM
  std::vector<Tensor> bz;     // 1xM
  std::map<int, Tensor> wy;   // tap projector per level, MxM
  std::map<int, Tensor> by;   // 1xM
  Tensor lin_w, lin_b;        // linear-encoder ablation, Mx3 / 1xM
};

inline FilterStack init_stack(const FftConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  FilterStack s;
  s.cfg = cfg;
  Rng rng(split_seed(seed, "fftnet"));
  const int M = cfg.width;
  const double sqrt_m = std::sqrt(static_cast<double>(M));

  auto mix_bound = [&](int layer) {
    switch (cfg.init) {
      case InitScheme::LayerScaled: return psi(layer, cfg.layers, cfg.eta) / sqrt_m;
      case InitScheme::RandomUniform: return 0.1;
      case InitScheme::FanInUniform: return 1.0 / sqrt_m;
    }
    return 0.0;
  };
  auto fill_uniform = [&](Tensor& t, double bound) {
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  };

  for (int i = 0; i < cfg.layers; ++i) {
    Tensor om(static_cast<std::size_t>(M), 3);
    fill_uniform(om, i == 0 ? cfg.omega_bound_first : cfg.omega_bound);
    s.omega.push_back(std::move(om));
    Tensor ph(1, static_cast<std::size_t>(M));
    fill_uniform(ph, std::numbers::pi);
    s.phi.push_back(std::move(ph));
    if (i >= 1) {
      Tensor w(static_cast<std::size_t>(M), static_cast<std::size_t>(M));
      Tensor b(1, static_cast<std::size_t>(M));
      fill_uniform(w, mix_bound(i));
      fill_uniform(b, mix_bound(i));
      s.wz.push_back(std::move(w));
      s.bz.push_back(std::move(b));
    }
  }
  for (int t : cfg.taps) {
    Tensor w(static_cast<std::size_t>(M), static_cast<std::size_t>(M));
    Tensor b(1, static_cast<std::size_t>(M));
    fill_uniform(w, mix_bound(t));
    fill_uniform(b, mix_bound(t));
    s.wy[t] = std::move(w);
    s.by[t] = std::move(b);
  }
  if (cfg.encoder == EncoderKind::Linear) {
    s.lin_w = Tensor(static_cast<std::size_t>(M), 3);
    s.lin_b = Tensor(1, static_cast<std::size_t>(M));
    fill_uniform(s.lin_w, 1.0 / std::sqrt(3.0));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Graph construction

struct ParamLeaves {
  std::map<std::string, int> ids;

  int get(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) throw GraphError("no parameter leaf: " + name);
    return it->second;
  }
  int make(Graph& g, const std::string& name, const Tensor& like) {
    auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    const int id = g.leaf(name, like.rows, like.cols, LeafKind::Parameter);
    ids[name] = id;
    return id;
  }
};

inline void make_stack_leaves(Graph& g, ParamLeaves& leaves, const FilterStack& s) {
  if (s.cfg.encoder == EncoderKind::Linear) {
    leaves.make(g, "fft.lin_w", s.lin_w);
    leaves.make(g, "fft.lin_b", s.lin_b);
    return;
  }
  for (std::size_t i = 0; i < s.omega.size(); ++i) {
    leaves.make(g, "fft.omega" + std::to_string(i), s.omega[i]);
    leaves.make(g, "fft.phi" + std::to_string(i), s.phi[i]);
  }
  for (std::size_t i = 0; i < s.wz.size(); ++i) {
    leaves.make(g, "fft.wz" + std::to_string(i + 1), s.wz[i]);
    leaves.make(g, "fft.bz" + std::to_string(i + 1), s.bz[i]);
  }
  for (const auto& [t, w] : s.wy) {
    leaves.make(g, "fft.wy" + std::to_string(t), w);
    leaves.make(g, "fft.by" + std::to_string(t), s.by.at(t));
  }
}

inline void bind_stack(EvalContext& ctx, const FilterStack& s) {
  if (s.cfg.encoder == EncoderKind::Linear) {
    ctx.bind("fft.lin_w", s.lin_w);
    ctx.bind("fft.lin_b", s.lin_b);
    return;
  }
  for (std::size_t i = 0; i < s.omega.size(); ++i) {
    ctx.bind("fft.omega" + std::to_string(i), s.omega[i]);
    ctx.bind("fft.phi" + std::to_string(i), s.phi[i]);
  }
  for (std::size_t i = 0; i < s.wz.size(); ++i) {
    ctx.bind("fft.wz" + std::to_string(i + 1), s.wz[i]);
    ctx.bind("fft.bz" + std::to_string(i + 1), s.bz[i]);
  }
  for (const auto& [t, w] : s.wy) {
    ctx.bind("fft.wy" + std::to_string(t), w);
    ctx.bind("fft.by" + std::to_string(t), s.by.at(t));
  }
}

// Builds the tap feature y_level for the given points node (Bx3 -> BxM).
// When z_nodes is non-null it receives the mixed feature node per depth
// 0..level (diagnostics and tests).
inline int build_encode(Graph& g, const ParamLeaves& leaves, const FftConfig& cfg,
                        int points, int level, std::vector<int>* z_nodes = nullptr) {
  if (cfg.encoder == EncoderKind::Linear)
    return g.affine(points, leaves.get("fft.lin_w"), leaves.get("fft.lin_b"));

  bool known = false;
  for (int t : cfg.taps) known |= (t == level);
  if (!known) throw GraphError("encode: level is not a tap: " + std::to_string(level));

  auto h = [&](int i) {
    return g.sine(g.affine(points, leaves.get("fft.omega" + std::to_string(i)),
                           leaves.get("fft.phi" + std::to_string(i))));
  };
  int z = h(0);
  if (z_nodes) z_nodes->push_back(z);
  for (int i = 1; i <= level; ++i) {
    z = g.mul(h(i), g.affine(z, leaves.get("fft.wz" + std::to_string(i)),
                             leaves.get("fft.bz" + std::to_string(i))));
    if (z_nodes) z_nodes->push_back(z);
  }
  return g.affine(z, leaves.get("fft.wy" + std::to_string(level)),
                  leaves.get("fft.by" + std::to_string(level)));
}

// Convenience forward pass of one tap level.
inline Tensor encode(const FilterStack& s, const Tensor& points, int level) {
  Graph g;
  ParamLeaves leaves;
  make_stack_leaves(g, leaves, s);
  const int pts = g.leaf("points", points.rows, 3, LeafKind::Point);
  const int y = build_encode(g, leaves, s.cfg, pts, level);
  EvalContext ctx(g);
  bind_stack(ctx, s);
  ctx.bind(pts, points);
  const int outs[] = {y};
  ctx.run(std::span<const int>(outs), /*check_finite=*/true);
  return ctx.value(y);
}

// ---------------------------------------------------------------------------
// Spectral diagnostics: DFT amplitude of the first feature of each tap,
// sampled along one coordinate axis through the origin.

struct SpectralReport {
  std::map<int, std::vector<double>> amplitude;  // tap level -> |X_k|, k bins
  int samples = 0;
  double extent = 0;  // samples span [-extent, extent)
};

inline SpectralReport spectral_report(const FilterStack& s, int axis,
                                      int samples = 256, double extent = 1.0) {
  if (axis < 0 || axis > 2) throw std::invalid_argument("spectral_report: axis");
  SpectralReport rep;
  rep.samples = samples;
  rep.extent = extent;
  Tensor pts(static_cast<std::size_t>(samples), 3);
  for (int i = 0; i < samples; ++i)
    pts.at(static_cast<std::size_t>(i), static_cast<std::size_t>(axis)) =
        -extent + 2.0 * extent * i / samples;
  for (int t : s.cfg.taps) {
    const Tensor y = encode(s, pts, t);
    std::vector<double> amp(static_cast<std::size_t>(samples / 2 + 1));
    for (std::size_t k = 0; k < amp.size(); ++k) {
      double re = 0, im = 0;
      for (int n = 0; n < samples; ++n) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(k) * n / samples;
        const double v = y.at(static_cast<std::size_t>(n), 0);
        re += v * std::cos(a);
        im -= v * std::sin(a);
      }
      amp[k] = std::hypot(re, im) / samples;
    }
    rep.amplitude[t] = std::move(amp);
  }
  return rep;
}

}  // namespace pullmesh

#endif
