#ifndef PULLMESH_LOSSES_HPP
#define PULLMESH_LOSSES_HPP

// Training objective: distance-aware reconstruction term with attention
// weights over the per-step pull distances, gradient-direction consistency
// across steps, and a zero-level-set constraint at the final step.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "pullmesh/graph.hpp"
#include "pullmesh/msp.hpp"

namespace pullmesh {

enum class LossMode { Full, PullOnly, ReconOnly, ReconGrad };

inline LossMode parse_loss_mode(const std::string& s) {
  if (s == "full") return LossMode::Full;
  if (s == "pull-only") return LossMode::PullOnly;
  if (s == "recon-only") return LossMode::ReconOnly;
  if (s == "recon+grad") return LossMode::ReconGrad;
  throw std::invalid_argument("unknown loss mode: " + s);
}

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::Full: return "full";
    case LossMode::PullOnly: return "pull-only";
    case LossMode::ReconOnly: return "recon-only";
    case LossMode::ReconGrad: return "recon+grad";
  }
  return "?";
}

struct LossConfig {
  double gamma = 2.0;   // exponent on the near-surface attention weight
  double beta = 0.1;    // gradient-consistency weight
  double delta = 0.01;  // surface-constraint weight
  LossMode mode = LossMode::Full;
  bool alpha_through = false;    // let gradients flow through the attention
  bool grad_ref_target = false;  // compare step gradients against the target
                                 // point's gradient instead of the one at Q_0

  void validate() const {
    if (gamma < 1.0) throw std::invalid_argument("loss: gamma must be >= 1");
    if (beta < 0 || delta < 0) throw std::invalid_argument("loss: negative weight");
  }
};

// ---------------------------------------------------------------------------
// Plain-value forms (also the oracles the graph forms are tested against)

struct ReconResult {
  double loss = 0;
  std::vector<double> alpha1, alpha2;
};

// Distance-aware reconstruction term for the three-step schedule:
// per query (a1, a2) = softmax(D1, D2); a1*D1 + a2^gamma*D2 + D3.
inline ReconResult recon_loss(const std::vector<double>& d1,
                              const std::vector<double>& d2,
                              const std::vector<double>& d3, double gamma) {
  if (d1.size() != d2.size() || d1.size() != d3.size())
    throw std::invalid_argument("recon_loss: length mismatch");
  ReconResult r;
  r.alpha1.resize(d1.size());
  r.alpha2.resize(d1.size());
  double sum = 0;
  for (std::size_t i = 0; i < d1.size(); ++i) {
    const double a1 = detail::stable_sigmoid(d1[i] - d2[i]);
    const double a2 = 1.0 - a1;
    r.alpha1[i] = a1;
    r.alpha2[i] = a2;
    sum += a1 * d1[i] + std::pow(a2, gamma) * d2[i] + d3[i];
  }
  r.loss = sum / static_cast<double>(d1.size());
  return r;
}

// 1 - min over steps of cos(g_step, g_ref), averaged over queries.
// `step_grads` holds one Kx3 gradient per step (at Q_1..Q_I), `ref` the Kx3
// reference gradients.
inline double grad_consistency_loss(const std::vector<Tensor>& step_grads,
                                    const Tensor& ref) {
  if (step_grads.empty()) throw std::invalid_argument("grad loss: no gradients");
  const std::size_t K = ref.rows;
  double sum = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const Vec3 a{ref.at(i, 0), ref.at(i, 1), ref.at(i, 2)};
    double min_cos = std::numeric_limits<double>::infinity();
    for (const Tensor& gt : step_grads) {
      const Vec3 b{gt.at(i, 0), gt.at(i, 1), gt.at(i, 2)};
      const double den = std::max(a.norm() * b.norm(), 1e-12);
      min_cos = std::min(min_cos, a.dot(b) / den);
    }
    sum += 1.0 - min_cos;
  }
  return sum / static_cast<double>(K);
}

// mean |f(Q_I)| over the batch
inline double surface_loss(const Tensor& sdf_final) {
  double sum = 0;
  for (double v : sdf_final.data) sum += std::abs(v);
  return sum / static_cast<double>(sdf_final.size());
}

// mean over queries of the summed squared pull distances
inline double pull_loss(const std::vector<Tensor>& dist_sq) {
  if (dist_sq.empty()) throw std::invalid_argument("pull_loss: no distances");
  const std::size_t K = dist_sq[0].size();
  double sum = 0;
  for (const Tensor& d : dist_sq)
    for (double v : d.data) sum += v;
  return sum / static_cast<double>(K);
}

struct LossTerms {
  double recon = 0, grad = 0, surf = 0, pull = 0, total = 0;
};

inline double total_loss(const LossTerms& t, const LossConfig& cfg) {
  switch (cfg.mode) {
    case LossMode::Full: return t.recon + cfg.beta * t.grad + cfg.delta * t.surf;
    case LossMode::PullOnly: return t.pull;
    case LossMode::ReconOnly: return t.recon;
    case LossMode::ReconGrad: return t.recon + cfg.beta * t.grad;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Graph forms

struct LossNodes {
  int recon = -1, grad = -1, surf = -1, pull = -1, total = -1;
  int alpha1 = -1, alpha2 = -1;  // Kx1 each (three-step schedule only)
};

namespace detail {

// softmax over n >= 3 columns with running-max subtraction
inline std::vector<int> softmax_n(Graph& g, const std::vector<int>& xs) {
  int m = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i)
    m = g.neg(g.min2(g.neg(m), g.neg(xs[i])));
  std::vector<int> es;
  int denom = -1;
  for (int x : xs) {
    const int e = g.expn(g.sub(x, m));
    es.push_back(e);
    denom = denom < 0 ? e : g.add(denom, e);
  }
  for (int& e : es) e = g.div(e, denom);
  return es;
}

}  // namespace detail

// Builds every loss term over a pulled trajectory. `target_grads`, when
// non-empty, supplies the per-step reference gradient nodes used by the
// grad_ref_target variant.
inline LossNodes build_losses(Graph& g, const TrajectoryNodes& traj,
                              const LossConfig& cfg,
                              const std::vector<int>& target_grads = {}) {
  cfg.validate();
  const int steps = static_cast<int>(traj.dist_sq.size());
  LossNodes out;

  // reconstruction
  {
    std::vector<int> d = traj.dist_sq;
    if (!cfg.alpha_through)
      for (int& x : d) x = g.stop_grad(x);
    if (steps == 1) {
      out.recon = g.mean_all(traj.dist_sq[0]);
    } else {
      std::vector<int> weighted(static_cast<std::size_t>(steps - 1));
      std::vector<int> alphas;
      if (steps == 2) {
        weighted[0] = traj.dist_sq[0];
      } else if (steps == 3) {
        auto [a1, a2] = g.softmax2(d[0], d[1]);
        out.alpha1 = a1;
        out.alpha2 = a2;
        weighted[0] = g.mul(a1, traj.dist_sq[0]);
        weighted[1] = g.mul(g.power(a2, cfg.gamma), traj.dist_sq[1]);
      } else {
        std::vector<int> head_d(d.begin(), d.end() - 1);
        alphas = detail::softmax_n(g, head_d);
        weighted[0] = g.mul(alphas[0], traj.dist_sq[0]);
        for (int j = 1; j < steps - 1; ++j)
          weighted[static_cast<std::size_t>(j)] =
              g.mul(g.power(alphas[static_cast<std::size_t>(j)], cfg.gamma),
                    traj.dist_sq[static_cast<std::size_t>(j)]);
      }
      int acc = weighted[0];
      for (std::size_t j = 1; j < weighted.size(); ++j) acc = g.add(acc, weighted[j]);
      acc = g.add(acc, traj.dist_sq.back());
      out.recon = g.mean_all(acc);
    }
  }

  // gradient consistency: steps 1..I carry gradients at Q_1..Q_I
  {
    std::vector<int> step_grads(traj.gradient.begin() + 1, traj.gradient.end());
    step_grads.push_back(traj.grad_final);
    int min_cos = -1;
    for (std::size_t i = 0; i < step_grads.size(); ++i) {
      const int ref = cfg.grad_ref_target && !target_grads.empty()
                          ? target_grads[i]
                          : traj.gradient[0];
      const int c = g.cosine_similarity(step_grads[i], ref);
      min_cos = min_cos < 0 ? c : g.min2(min_cos, c);
    }
    out.grad = g.mean_all(g.addc(g.neg(min_cos), 1.0));
  }

  out.surf = g.mean_all(g.abs_(traj.sdf_final));

  {
    int acc = traj.dist_sq[0];
    for (std::size_t i = 1; i < traj.dist_sq.size(); ++i)
      acc = g.add(acc, traj.dist_sq[i]);
    out.pull = g.mean_all(acc);
  }

  switch (cfg.mode) {
    case LossMode::Full:
      out.total = g.add(out.recon, g.add(g.scale(out.grad, cfg.beta),
                                         g.scale(out.surf, cfg.delta)));
      break;
    case LossMode::PullOnly: out.total = out.pull; break;
    case LossMode::ReconOnly: out.total = out.recon; break;
    case LossMode::ReconGrad:
      out.total = g.add(out.recon, g.scale(out.grad, cfg.beta));
      break;
  }
  return out;
}

}  // namespace pullmesh

#endif
