#ifndef PULLMESH_MSP_HPP
#define PULLMESH_MSP_HPP

// Multi-step pulling: a shared scalar distance head over the tap features,
// and the pulling recurrence Q' = Q - f * grad / max(||grad||, 1e-8).
// Each step is conditioned on one tap level, coarse to fine.

#include <map>
#include <string>
#include <vector>

#include "pullmesh/autodiff.hpp"
#include "pullmesh/fftnet.hpp"
#include "pullmesh/graph.hpp"
#include "pullmesh/pointcloud.hpp"

namespace pullmesh {

inline constexpr double kGradNormFloor = 1e-8;

struct HeadConfig {
  int hidden = 512;
  int depth = 3;  // hidden layers, rectifier activations

  void validate() const {
    if (hidden < 1 || depth < 1) throw std::invalid_argument("head: bad config");
  }
};

struct SdfHead {
  HeadConfig cfg;
  std::vector<Tensor> w;  // depth+1 entries; final row count 1
  std::vector<Tensor> b;
};

inline SdfHead init_head(const HeadConfig& cfg, int feature_width,
                         std::uint64_t seed) {
  cfg.validate();
  SdfHead h;
  h.cfg = cfg;
  Rng rng(split_seed(seed, "head"));
  int fan_in = feature_width;
  for (int layer = 0; layer <= cfg.depth; ++layer) {
    const int fan_out = layer == cfg.depth ? 1 : cfg.hidden;
    Tensor w(static_cast<std::size_t>(fan_out), static_cast<std::size_t>(fan_in));
    Tensor b(1, static_cast<std::size_t>(fan_out));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    for (double& v : b.data) v = rng.uniform(-bound, bound);
    h.w.push_back(std::move(w));
    h.b.push_back(std::move(b));
    fan_in = fan_out;
  }
  return h;
}

inline void make_head_leaves(Graph& g, ParamLeaves& leaves, const SdfHead& h) {
  for (std::size_t i = 0; i < h.w.size(); ++i) {
    leaves.make(g, "head.w" + std::to_string(i), h.w[i]);
    leaves.make(g, "head.b" + std::to_string(i), h.b[i]);
  }
}

inline void bind_head(EvalContext& ctx, const SdfHead& h) {
  for (std::size_t i = 0; i < h.w.size(); ++i) {
    ctx.bind("head.w" + std::to_string(i), h.w[i]);
    ctx.bind("head.b" + std::to_string(i), h.b[i]);
  }
}

inline int build_head(Graph& g, const ParamLeaves& leaves, const HeadConfig& cfg,
                      int features) {
  int x = features;
  for (int i = 0; i <= cfg.depth; ++i) {
    x = g.affine(x, leaves.get("head.w" + std::to_string(i)),
                 leaves.get("head.b" + std::to_string(i)));
    if (i < cfg.depth) x = g.relu(x);
  }
  return x;  // Bx1
}

// ---------------------------------------------------------------------------
// The level-conditioned signed distance field

enum class FeatureConditioning {
  Recompute,  // tap features evaluated at the current position (default)
  FrozenQ0,   // tap features frozen at the initial query position
};

struct MspConfig {
  std::vector<int> step_levels{4, 6, 8};
  FeatureConditioning features = FeatureConditioning::Recompute;

  int steps() const { return static_cast<int>(step_levels.size()); }
  void validate(const FftConfig& fft) const {
    if (step_levels.empty()) throw std::invalid_argument("msp: no steps");
    if (fft.encoder == EncoderKind::Frequency)
      for (int l : step_levels) {
        bool ok = false;
        for (int t : fft.taps) ok |= (t == l);
        if (!ok) throw std::invalid_argument("msp: step level is not a tap");
      }
  }
};

struct FieldEvaluator {
  FilterStack stack;
  SdfHead head;
  MspConfig msp;

  int width() const { return stack.cfg.width; }

  // f(p) at one tap level; throws on a level that is not a tap
  Tensor sdf(const Tensor& points, int level) const;
  // spatial gradient of f, Kx3
  Tensor sdf_gradient(const Tensor& points, int level) const;
  // both in one evaluation
  std::pair<Tensor, Tensor> sdf_with_gradient(const Tensor& points, int level) const;

  int final_level() const { return msp.step_levels.back(); }
};

// f at `points_node` for one level: head applied to the tap features of the
// evaluated position.
inline int build_field(Graph& g, const ParamLeaves& leaves, const FftConfig& fft,
                       const HeadConfig& head, int points_node, int level) {
  return build_head(g, leaves, head, build_encode(g, leaves, fft, points_node, level));
}

namespace detail {

struct FieldGraphCacheEntry {
  Graph graph;
  int points = -1;
  int sdf = -1;
  int grad = -1;
};

inline FieldGraphCacheEntry build_field_graph(const FieldEvaluator& ev,
                                              std::size_t batch, int level) {
  FieldGraphCacheEntry e;
  ParamLeaves leaves;
  make_stack_leaves(e.graph, leaves, ev.stack);
  make_head_leaves(e.graph, leaves, ev.head);
  e.points = e.graph.leaf("points", batch, 3, LeafKind::Point);
  e.sdf = build_field(e.graph, leaves, ev.stack.cfg, ev.head.cfg, e.points, level);
  e.grad = append_point_gradient(e.graph, e.sdf, e.points);
  return e;
}

inline std::pair<Tensor, Tensor> eval_field(const FieldEvaluator& ev,
                                            const Tensor& points, int level,
                                            bool want_grad) {
  auto e = build_field_graph(ev, points.rows, level);
  EvalContext ctx(e.graph);
  bind_stack(ctx, ev.stack);
  bind_head(ctx, ev.head);
  ctx.bind(e.points, points);
  std::vector<int> outs{e.sdf};
  if (want_grad) outs.push_back(e.grad);
  ctx.run(std::span<const int>(outs), /*check_finite=*/true);
  return {ctx.value(e.sdf), want_grad ? ctx.value(e.grad) : Tensor()};
}

}  // namespace detail

inline Tensor FieldEvaluator::sdf(const Tensor& points, int level) const {
  return detail::eval_field(*this, points, level, false).first;
}
inline Tensor FieldEvaluator::sdf_gradient(const Tensor& points, int level) const {
  return detail::eval_field(*this, points, level, true).second;
}
inline std::pair<Tensor, Tensor> FieldEvaluator::sdf_with_gradient(
    const Tensor& points, int level) const {
  return detail::eval_field(*this, points, level, true);
}

// ---------------------------------------------------------------------------
// Pulling

// One pulling step from plain values: Q' = Q - s * g / max(||g||, 1e-8).
inline Tensor pull_step_values(const Tensor& q, const Tensor& s, const Tensor& g) {
  if (q.cols != 3 || s.rows != q.rows || g.rows != q.rows || g.cols != 3)
    throw std::invalid_argument("pull_step: shape mismatch");
  Tensor out(q.rows, 3);
  for (std::size_t i = 0; i < q.rows; ++i) {
    const double gx = g.at(i, 0), gy = g.at(i, 1), gz = g.at(i, 2);
    const double norm = std::max(std::sqrt(gx * gx + gy * gy + gz * gz),
                                 kGradNormFloor);
    const double stride = s.data[i] / norm;
    out.at(i, 0) = q.at(i, 0) - stride * gx;
    out.at(i, 1) = q.at(i, 1) - stride * gy;
    out.at(i, 2) = q.at(i, 2) - stride * gz;
  }
  return out;
}

// Graph form of the same recurrence.
inline int build_pull_step(Graph& g, int q, int s, int grad) {
  const int norm = g.euclidean_norm(grad, kGradNormFloor);
  const int dir = g.div(grad, norm);     // Bx3 / Bx1 broadcast
  return g.sub(q, g.mul(s, dir));        // Bx1 * Bx3 broadcast
}

// Trajectory node ids for the full multi-step pulling graph.
struct TrajectoryNodes {
  std::vector<int> position;  // Q_0 .. Q_I
  std::vector<int> sdf;       // s_0 .. s_{I-1}
  std::vector<int> gradient;  // g_0 .. g_{I-1}
  std::vector<int> target;    // stop-gradient targets q_1 .. q_I
  std::vector<int> dist_sq;   // D_1 .. D_I
  int sdf_final = -1;         // f(Q_I) at the final level
  int grad_final = -1;        // grad f(Q_I) at the final level
};

// Builds I pulling steps. Targets are point-kind leaves named "target1"..,
// wrapped in stop-gradient: the nearest-neighbor lookup is not
// differentiable, so gradients flow through the query positions alone.
inline TrajectoryNodes build_msp(Graph& g, const ParamLeaves& leaves,
                                 const FftConfig& fft, const HeadConfig& head,
                                 const MspConfig& msp, int q0) {
  msp.validate(fft);
  TrajectoryNodes t;
  const std::size_t batch = g.at(q0).rows;
  const bool frozen = msp.features == FeatureConditioning::FrozenQ0;
  t.position.push_back(q0);
  int q = q0;
  for (int i = 0; i < msp.steps(); ++i) {
    const int level = msp.step_levels[static_cast<std::size_t>(i)];
    // In the frozen variant the field is a function of Q_0 only, so the
    // spatial gradient is taken there; by default both the features and the
    // gradient follow the current position.
    const int pos = frozen ? q0 : q;
    const int s = build_field(g, leaves, fft, head, pos, level);
    const int grad = append_point_gradient(g, s, pos);
    t.sdf.push_back(s);
    t.gradient.push_back(grad);
    q = build_pull_step(g, q, s, grad);
    t.position.push_back(q);
    const int target = g.stop_grad(g.leaf("target" + std::to_string(i + 1), batch,
                                          3, LeafKind::Point));
    t.target.push_back(target);
    t.dist_sq.push_back(g.squared_norm(g.sub(q, target)));
  }
  const int final_pos = frozen ? q0 : q;
  t.sdf_final = build_field(g, leaves, fft, head, final_pos, msp.step_levels.back());
  t.grad_final = append_point_gradient(g, t.sdf_final, final_pos);
  return t;
}

// Plain-value trajectory record.
struct PullTrajectory {
  std::vector<Tensor> positions;  // Q_0 .. Q_I
  std::vector<Tensor> sdf;        // s_0 .. s_{I-1}
  std::vector<Tensor> gradients;  // g_0 .. g_{I-1}
  std::vector<Tensor> targets;    // q_1 .. q_I
  std::vector<Tensor> dist_sq;    // D_1 .. D_I, each Kx1
  Tensor sdf_final;               // f(Q_I, final level)
  Tensor grad_final;              // grad f(Q_I, final level)
};

template <class F>
concept SignedField = requires(const F& f, const Tensor& p, int level) {
  { f.sdf(p, level) } -> std::convertible_to<Tensor>;
  { f.sdf_gradient(p, level) } -> std::convertible_to<Tensor>;
};

// Runs the pulling recurrence with plain evaluations, recording targets and
// squared distances from the exact nearest-neighbor index.
template <SignedField F>
PullTrajectory run_msp(const F& field, const Tensor& q0, const KdTree& index,
                       const std::vector<int>& step_levels) {
  PullTrajectory t;
  t.positions.push_back(q0);
  Tensor q = q0;
  for (std::size_t i = 0; i < step_levels.size(); ++i) {
    const int level = step_levels[i];
    const Tensor s = field.sdf(q, level);
    const Tensor g = field.sdf_gradient(q, level);
    Tensor next = pull_step_values(q, s, g);
    Tensor target(next.rows, 3);
    Tensor d(next.rows, 1);
    for (std::size_t r = 0; r < next.rows; ++r) {
      const Vec3 p{next.at(r, 0), next.at(r, 1), next.at(r, 2)};
      const auto nn = index.nearest(p);
      const Vec3 tp = index.points()[nn.index];
      target.at(r, 0) = tp.x;
      target.at(r, 1) = tp.y;
      target.at(r, 2) = tp.z;
      d.data[r] = sq_dist(p, tp);
    }
    t.sdf.push_back(s);
    t.gradients.push_back(g);
    t.targets.push_back(std::move(target));
    t.dist_sq.push_back(std::move(d));
    t.positions.push_back(next);
    q = std::move(next);
  }
  const int final_level = step_levels.back();
  if constexpr (requires { field.sdf_with_gradient(q, final_level); }) {
    auto [sf, gf] = field.sdf_with_gradient(q, final_level);
    t.sdf_final = std::move(sf);
    t.grad_final = std::move(gf);
  } else {
    t.sdf_final = field.sdf(q, final_level);
    t.grad_final = field.sdf_gradient(q, final_level);
  }
  return t;
}

}  // namespace pullmesh

#endif
