#ifndef PULLMESH_TRAINER_HPP
#define PULLMESH_TRAINER_HPP

// Per-shape overfitting loop: one fixed query pool, shuffled mini-batches,
// adaptive-moment updates of all network parameters through the full
// second-order objective, newline-delimited JSON run log, and a versioned
// binary checkpoint.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pullmesh/losses.hpp"
#include "pullmesh/msp.hpp"
#include "pullmesh/pointcloud.hpp"

namespace pullmesh {

struct TrainConfig {
  int iterations = 40000;
  int batch_queries = 5000;
  double learning_rate = 1e-4;
  int warmup_iterations = 500;
  double warmup_lr = 1e-3;
  double uniform_queries = 0.125;  // fraction of each batch drawn uniformly
                                   // from the volume instead of the pool
  double far_penalty = 0.1;        // weight on relu(-f)^2 outside the cloud's
                                   // bounding sphere, where the SDF is positive
  std::vector<double> lr_decay_at{0.5, 0.75};  // fractions of `iterations`
  double lr_decay_factor = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  int queries_per_point = 40;
  int sigma_k = 50;
  int log_every = 100;
  LossConfig loss;
  FftConfig fft;
  HeadConfig head;
  MspConfig msp;

  void validate(std::size_t n_points) const {
    if (iterations < 1) throw std::invalid_argument("train: iterations must be >= 1");
    if (learning_rate <= 0) throw std::invalid_argument("train: learning_rate <= 0");
    if (warmup_iterations < 0 || warmup_lr <= 0)
      throw std::invalid_argument("train: bad warmup config");
    if (uniform_queries < 0 || uniform_queries > 1)
      throw std::invalid_argument("train: uniform_queries outside [0, 1]");
    if (far_penalty < 0) throw std::invalid_argument("train: far_penalty < 0");
    if (queries_per_point < 1 || sigma_k < 1)
      throw std::invalid_argument("train: bad sampling config");
    const std::size_t pool = n_points * static_cast<std::size_t>(queries_per_point);
    if (batch_queries < 1 || static_cast<std::size_t>(batch_queries) > pool)
      throw std::invalid_argument("train: batch_queries exceeds query pool");
    if (static_cast<std::size_t>(sigma_k) >= n_points)
      throw std::invalid_argument("train: sigma_k >= point count");
    fft.validate();
    head.validate();
    msp.validate(fft);
    loss.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"iterations", c.iterations},
      {"batch_queries", c.batch_queries},
      {"learning_rate", c.learning_rate},
      {"warmup_iterations", c.warmup_iterations},
      {"warmup_lr", c.warmup_lr},
      {"uniform_queries", c.uniform_queries},
      {"far_penalty", c.far_penalty},
      {"lr_decay_at", c.lr_decay_at},
      {"lr_decay_factor", c.lr_decay_factor},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"adam_eps", c.adam_eps},
      {"seed", c.seed},
      {"queries_per_point", c.queries_per_point},
      {"sigma_k", c.sigma_k},
      {"log_every", c.log_every},
      {"loss",
       {{"gamma", c.loss.gamma},
        {"beta", c.loss.beta},
        {"delta", c.loss.delta},
        {"mode", loss_mode_name(c.loss.mode)},
        {"alpha_through", c.loss.alpha_through},
        {"grad_ref_target", c.loss.grad_ref_target}}},
      {"fft",
       {{"layers", c.fft.layers},
        {"width", c.fft.width},
        {"taps", c.fft.taps},
        {"eta", c.fft.eta},
        {"omega_bound_first", c.fft.omega_bound_first},
        {"omega_bound", c.fft.omega_bound},
        {"init", init_scheme_name(c.fft.init)},
        {"encoder", c.fft.encoder == EncoderKind::Linear ? "linear" : "frequency"}}},
      {"head", {{"hidden", c.head.hidden}, {"depth", c.head.depth}}},
      {"msp",
       {{"step_levels", c.msp.step_levels},
        {"features",
         c.msp.features == FeatureConditioning::FrozenQ0 ? "frozen-q0"
                                                         : "recompute"}}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("iterations").get_to(c.iterations);
  j.at("batch_queries").get_to(c.batch_queries);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("warmup_iterations").get_to(c.warmup_iterations);
  j.at("warmup_lr").get_to(c.warmup_lr);
  j.at("uniform_queries").get_to(c.uniform_queries);
  j.at("far_penalty").get_to(c.far_penalty);
  j.at("lr_decay_at").get_to(c.lr_decay_at);
  j.at("lr_decay_factor").get_to(c.lr_decay_factor);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("seed").get_to(c.seed);
  j.at("queries_per_point").get_to(c.queries_per_point);
  j.at("sigma_k").get_to(c.sigma_k);
  j.at("log_every").get_to(c.log_every);
  const auto& l = j.at("loss");
  l.at("gamma").get_to(c.loss.gamma);
  l.at("beta").get_to(c.loss.beta);
  l.at("delta").get_to(c.loss.delta);
  c.loss.mode = parse_loss_mode(l.at("mode").get<std::string>());
  l.at("alpha_through").get_to(c.loss.alpha_through);
  l.at("grad_ref_target").get_to(c.loss.grad_ref_target);
  const auto& f = j.at("fft");
  f.at("layers").get_to(c.fft.layers);
  f.at("width").get_to(c.fft.width);
  f.at("taps").get_to(c.fft.taps);
  f.at("eta").get_to(c.fft.eta);
  f.at("omega_bound_first").get_to(c.fft.omega_bound_first);
  f.at("omega_bound").get_to(c.fft.omega_bound);
  c.fft.init = parse_init_scheme(f.at("init").get<std::string>());
  c.fft.encoder = f.at("encoder").get<std::string>() == "linear"
                      ? EncoderKind::Linear
                      : EncoderKind::Frequency;
  const auto& h = j.at("head");
  h.at("hidden").get_to(c.head.hidden);
  h.at("depth").get_to(c.head.depth);
  const auto& m = j.at("msp");
  m.at("step_levels").get_to(c.msp.step_levels);
  c.msp.features = m.at("features").get<std::string>() == "frozen-q0"
                       ? FeatureConditioning::FrozenQ0
                       : FeatureConditioning::Recompute;
}

// ---------------------------------------------------------------------------
// Run log

struct RunLogEntry {
  int iteration = 0;
  LossTerms terms;
  double learning_rate = 0;
  double wall_seconds = 0;
};

struct RunLog {
  std::vector<RunLogEntry> entries;

  void write_ndjson(std::ostream& out) const {
    for (const auto& e : entries) {
      nlohmann::json j{{"iteration", e.iteration},
                       {"recon", e.terms.recon},
                       {"grad", e.terms.grad},
                       {"surf", e.terms.surf},
                       {"pull", e.terms.pull},
                       {"total", e.terms.total},
                       {"learning_rate", e.learning_rate},
                       {"wall_seconds", e.wall_seconds}};
      out << j.dump() << "\n";
    }
  }
};

// ---------------------------------------------------------------------------
// Parameter access

inline std::vector<std::pair<std::string, Tensor*>> named_parameters(
    FilterStack& s, SdfHead& h) {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (s.cfg.encoder == EncoderKind::Linear) {
    out.emplace_back("fft.lin_w", &s.lin_w);
    out.emplace_back("fft.lin_b", &s.lin_b);
  } else {
    for (std::size_t i = 0; i < s.omega.size(); ++i) {
      out.emplace_back("fft.omega" + std::to_string(i), &s.omega[i]);
      out.emplace_back("fft.phi" + std::to_string(i), &s.phi[i]);
    }
    for (std::size_t i = 0; i < s.wz.size(); ++i) {
      out.emplace_back("fft.wz" + std::to_string(i + 1), &s.wz[i]);
      out.emplace_back("fft.bz" + std::to_string(i + 1), &s.bz[i]);
    }
    for (auto& [t, w] : s.wy) {
      out.emplace_back("fft.wy" + std::to_string(t), &w);
      out.emplace_back("fft.by" + std::to_string(t), &s.by.at(t));
    }
  }
  for (std::size_t i = 0; i < h.w.size(); ++i) {
    out.emplace_back("head.w" + std::to_string(i), &h.w[i]);
    out.emplace_back("head.b" + std::to_string(i), &h.b[i]);
  }
  return out;
}

// Shuffled mini-batch indices covering the whole pool once per epoch; a batch
// may straddle an epoch boundary when the pool size is not a multiple of the
// batch size.
struct BatchCursor {
  std::size_t pool_size;
  std::size_t batch;
  Rng rng;
  std::vector<std::size_t> perm;
  std::size_t cursor = 0;

  BatchCursor(std::size_t pool, std::size_t b, std::uint64_t seed)
      : pool_size(pool), batch(b), rng(split_seed(seed, "batches")), perm(pool) {
    std::iota(perm.begin(), perm.end(), 0u);
    reshuffle();
  }

  void reshuffle() {
    for (std::size_t i = pool_size - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.next_index(i + 1)]);
  }

  void next(std::vector<std::size_t>& out) {
    out.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == pool_size) {
        reshuffle();
        cursor = 0;
      }
      out[i] = perm[cursor++];
    }
  }
};

// ---------------------------------------------------------------------------
// Training

// Sign seeding. The pulling objective cannot tell a signed field from an
// unsigned one — a positive bump with its dip at the surface pulls queries
// just as well as a true SDF, but its zero set is an open, wrinkled shell.
// Before pulling starts, every step level is briefly fitted to the signed
// distance of a centered sphere with the cloud's mean point norm as radius,
// the feature-space analogue of geometric initialization for coordinate MLPs.
inline void warmup_sphere_fit(FieldEvaluator& ev, const PointCloud& cloud,
                              const TrainConfig& cfg) {
  double r0 = 0;
  for (const Vec3& p : cloud.points) r0 += p.norm();
  r0 /= static_cast<double>(cloud.size());

  std::vector<int> levels;
  for (int l : cfg.msp.step_levels)
    if (levels.empty() || levels.back() != l) levels.push_back(l);

  const std::size_t B = static_cast<std::size_t>(cfg.batch_queries);
  Graph g;
  ParamLeaves leaves;
  make_stack_leaves(g, leaves, ev.stack);
  make_head_leaves(g, leaves, ev.head);
  const int q = g.leaf("q", B, 3, LeafKind::Point);
  const int d0 = g.leaf("d0", B, 1, LeafKind::Constant);
  int total = -1;
  for (int lvl : levels) {
    const int e = g.sub(build_field(g, leaves, cfg.fft, cfg.head, q, lvl), d0);
    const int l = g.mean_all(g.mul(e, e));
    total = total < 0 ? l : g.add(total, l);
  }

  auto params = named_parameters(ev.stack, ev.head);
  std::vector<int> param_ids;
  for (auto& [name, tensor] : params) param_ids.push_back(leaves.get(name));
  auto grad_map = append_adjoints(g, total, std::span<const int>(param_ids));

  std::vector<int> persistent{total};
  for (int p : param_ids) persistent.push_back(grad_map.at(p));
  EvalContext ctx(g, persistent);

  std::vector<Tensor> m_state, v_state;
  for (auto& [name, tensor] : params) {
    m_state.emplace_back(tensor->rows, tensor->cols);
    v_state.emplace_back(tensor->rows, tensor->cols);
  }

  Rng rng(split_seed(cfg.seed, "warmup"));
  Tensor q_batch(B, 3), d0_batch(B, 1);
  std::vector<int> wanted{total};
  for (int p : param_ids) wanted.push_back(grad_map.at(p));

  for (int iter = 1; iter <= cfg.warmup_iterations; ++iter) {
    for (std::size_t i = 0; i < B; ++i) {
      const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
      q_batch.at(i, 0) = p.x;
      q_batch.at(i, 1) = p.y;
      q_batch.at(i, 2) = p.z;
      d0_batch.at(i, 0) = p.norm() - r0;
    }
    ctx.reset();
    for (auto& [name, tensor] : params) ctx.bind(name, *tensor);
    ctx.bind(q, q_batch);
    ctx.bind(d0, d0_batch);
    ctx.run(std::span<const int>(wanted));
    if (!std::isfinite(ctx.value(total).value()))
      throw NumericAbort("non-finite warmup loss at iteration " + std::to_string(iter));

    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, iter);
    const double bc2 = 1.0 - std::pow(b2, iter);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Tensor& grad = ctx.value(grad_map.at(param_ids[p]));
      Tensor& theta = *params[p].second;
      Tensor& m = m_state[p];
      Tensor& v = v_state[p];
      for (std::size_t i = 0; i < theta.data.size(); ++i) {
        const double gi = grad.data[i];
        m.data[i] = b1 * m.data[i] + (1 - b1) * gi;
        v.data[i] = b2 * v.data[i] + (1 - b2) * gi * gi;
        theta.data[i] -= cfg.warmup_lr * (m.data[i] / bc1) /
                         (std::sqrt(v.data[i] / bc2) + cfg.adam_eps);
      }
    }
  }
}

struct TrainResult {
  FieldEvaluator evaluator;
  RunLog log;
};

inline TrainResult train(const PointCloud& cloud, const TrainConfig& cfg,
                         std::ostream* live_log = nullptr) {
  cfg.validate(cloud.size());
  const auto t0 = std::chrono::steady_clock::now();

  KdTree index(cloud.points);
  QueryBatch pool = sample_queries(cloud, index,
                                   static_cast<std::size_t>(cfg.queries_per_point),
                                   static_cast<std::size_t>(cfg.sigma_k), cfg.seed);
  const std::size_t pool_size = pool.queries.rows;
  const std::size_t B = static_cast<std::size_t>(cfg.batch_queries);

  FieldEvaluator ev;
  ev.stack = init_stack(cfg.fft, cfg.seed);
  ev.head = init_head(cfg.head, cfg.fft.width, cfg.seed);
  ev.msp = cfg.msp;

  if (cfg.warmup_iterations > 0) warmup_sphere_fit(ev, cloud, cfg);

  // one graph for the whole run
  Graph g;
  ParamLeaves leaves;
  make_stack_leaves(g, leaves, ev.stack);
  make_head_leaves(g, leaves, ev.head);
  const int q0 = g.leaf("q0", B, 3, LeafKind::Point);
  TrajectoryNodes traj = build_msp(g, leaves, cfg.fft, cfg.head, cfg.msp, q0);
  std::vector<int> target_grads;
  if (cfg.loss.grad_ref_target) {
    for (std::size_t i = 0; i < traj.target.size(); ++i) {
      const int level = cfg.msp.step_levels[std::min(i, traj.target.size() - 1)];
      const int s = build_field(g, leaves, cfg.fft, cfg.head, traj.target[i], level);
      target_grads.push_back(append_point_gradient(g, s, traj.target[i]));
    }
  }
  const LossNodes loss = build_losses(g, traj, cfg.loss, target_grads);

  // Positivity prior outside the cloud's bounding sphere, where the signed
  // distance is positive regardless of shape. Query sampling never reaches
  // the far corners of the volume, so the field is otherwise free to grow a
  // spurious zero set there.
  constexpr std::size_t kFarQueries = 64;
  int qfar = -1;
  int objective = loss.total;
  if (cfg.far_penalty > 0) {
    qfar = g.leaf("qfar", kFarQueries, 3, LeafKind::Point);
    int pen = -1;
    std::vector<int> seen;
    for (int lvl : cfg.msp.step_levels) {
      if (std::find(seen.begin(), seen.end(), lvl) != seen.end()) continue;
      seen.push_back(lvl);
      const int f = build_field(g, leaves, cfg.fft, cfg.head, qfar, lvl);
      const int r = g.relu(g.neg(f));
      const int p = g.mean_all(g.mul(r, r));
      pen = pen < 0 ? p : g.add(pen, p);
    }
    objective = g.add(loss.total, g.scale(pen, cfg.far_penalty));
  }

  auto params = named_parameters(ev.stack, ev.head);
  std::vector<int> param_ids;
  for (auto& [name, tensor] : params) param_ids.push_back(leaves.get(name));
  auto grad_map = append_adjoints(g, objective, std::span<const int>(param_ids));

  std::vector<int> persistent;
  for (std::size_t i = 1; i < traj.position.size(); ++i)
    persistent.push_back(traj.position[i]);
  for (int id : {loss.recon, loss.grad, loss.surf, loss.pull, loss.total})
    persistent.push_back(id);
  for (int p : param_ids) persistent.push_back(grad_map.at(p));
  EvalContext ctx(g, persistent);

  // adaptive-moment state
  std::vector<Tensor> m_state, v_state;
  for (auto& [name, tensor] : params) {
    m_state.emplace_back(tensor->rows, tensor->cols);
    v_state.emplace_back(tensor->rows, tensor->cols);
  }

  BatchCursor batches(pool_size, B, cfg.seed);
  std::vector<std::size_t> batch_idx(B);

  // Spurious zero sets far from the cloud are invisible to surface-local
  // queries; a slice of each batch is drawn uniformly from the volume so the
  // pull constraint erases them.
  const std::size_t n_uniform =
      static_cast<std::size_t>(cfg.uniform_queries * static_cast<double>(B));
  Rng uniform_rng(split_seed(cfg.seed, "uniform-queries"));

  double far_radius = 0;
  for (const Vec3& p : cloud.points) far_radius = std::max(far_radius, p.norm());
  far_radius = std::min(far_radius + 0.05, 1.2);
  Rng far_rng(split_seed(cfg.seed, "far-queries"));
  Tensor qfar_batch(kFarQueries, 3);

  double lr = cfg.learning_rate;
  std::vector<int> decay_iters;
  for (double f : cfg.lr_decay_at)
    decay_iters.push_back(static_cast<int>(f * cfg.iterations));

  TrainResult result;
  Tensor q0_batch(B, 3);
  const int steps = cfg.msp.steps();
  std::vector<Tensor> target_batches(static_cast<std::size_t>(steps), Tensor(B, 3));

  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    for (int d : decay_iters)
      if (iter == d) lr *= cfg.lr_decay_factor;

    batches.next(batch_idx);
    for (std::size_t i = 0; i < B; ++i) {
      const std::size_t src = batch_idx[i];
      q0_batch.at(i, 0) = pool.queries.at(src, 0);
      q0_batch.at(i, 1) = pool.queries.at(src, 1);
      q0_batch.at(i, 2) = pool.queries.at(src, 2);
    }
    for (std::size_t i = 0; i < n_uniform; ++i)
      for (std::size_t d = 0; d < 3; ++d)
        q0_batch.at(i, d) = uniform_rng.uniform(-1, 1);
    if (qfar >= 0) {
      for (std::size_t i = 0; i < kFarQueries; ++i) {
        Vec3 p;
        do {
          p = {far_rng.uniform(-1, 1), far_rng.uniform(-1, 1), far_rng.uniform(-1, 1)};
        } while (p.norm() <= far_radius);
        qfar_batch.at(i, 0) = p.x;
        qfar_batch.at(i, 1) = p.y;
        qfar_batch.at(i, 2) = p.z;
      }
    }

    ctx.reset();
    for (auto& [name, tensor] : params) ctx.bind(name, *tensor);
    ctx.bind(q0, q0_batch);

    // phase 1: pulled positions, then exact nearest-neighbor targets
    ctx.run(std::span<const int>(traj.position.data() + 1,
                                 static_cast<std::size_t>(steps)));
    for (int s = 0; s < steps; ++s) {
      const Tensor& pos = ctx.value(traj.position[static_cast<std::size_t>(s) + 1]);
      Tensor& tgt = target_batches[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < B; ++i) {
        const Vec3 p{pos.at(i, 0), pos.at(i, 1), pos.at(i, 2)};
        const Vec3 nn = index.points()[index.nearest(p).index];
        tgt.at(i, 0) = nn.x;
        tgt.at(i, 1) = nn.y;
        tgt.at(i, 2) = nn.z;
      }
      ctx.bind("target" + std::to_string(s + 1), tgt);
    }

    // phase 2: losses and parameter gradients
    std::vector<int> wanted{loss.recon, loss.grad, loss.surf, loss.pull, loss.total};
    for (int p : param_ids) wanted.push_back(grad_map.at(p));
    ctx.run(std::span<const int>(wanted));

    LossTerms terms;
    terms.recon = ctx.value(loss.recon).value();
    terms.grad = ctx.value(loss.grad).value();
    terms.surf = ctx.value(loss.surf).value();
    terms.pull = ctx.value(loss.pull).value();
    terms.total = ctx.value(loss.total).value();
    if (!std::isfinite(terms.total)) {
      std::string msg = "non-finite loss at iteration " + std::to_string(iter) +
                        "; first batch indices:";
      for (std::size_t i = 0; i < std::min<std::size_t>(8, B); ++i)
        msg += " " + std::to_string(batch_idx[i]);
      throw NumericAbort(msg);
    }

    // adaptive-moment update
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, iter);
    const double bc2 = 1.0 - std::pow(b2, iter);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Tensor& grad = ctx.value(grad_map.at(param_ids[p]));
      Tensor& theta = *params[p].second;
      Tensor& m = m_state[p];
      Tensor& v = v_state[p];
      for (std::size_t i = 0; i < theta.data.size(); ++i) {
        const double gi = grad.data[i];
        m.data[i] = b1 * m.data[i] + (1 - b1) * gi;
        v.data[i] = b2 * v.data[i] + (1 - b2) * gi * gi;
        theta.data[i] -=
            lr * (m.data[i] / bc1) / (std::sqrt(v.data[i] / bc2) + cfg.adam_eps);
      }
    }

    if (iter == 1 || iter == cfg.iterations ||
        (cfg.log_every > 0 && iter % cfg.log_every == 0)) {
      RunLogEntry e;
      e.iteration = iter;
      e.terms = terms;
      e.learning_rate = lr;
      e.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      result.log.entries.push_back(e);
      if (live_log) {
        RunLog one;
        one.entries.push_back(e);
        one.write_ndjson(*live_log);
        live_log->flush();
      }
    }
  }

  result.evaluator = std::move(ev);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "MPUL", version, config JSON, normalize transform,
// iteration counter, named little-endian f64 tensors, CRC32 trailer.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n,
                           std::uint32_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

struct ByteSink {
  std::vector<unsigned char> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u64(t.rows);
    u64(t.cols);
    raw(t.data.data(), t.data.size() * 8);
  }
};

struct ByteSource {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    if (pos + n > bytes.size()) throw IoError("checkpoint: truncated");
    std::memcpy(p, bytes.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    std::string s(u64(), '\0');
    raw(s.data(), s.size());
    return s;
  }
  Tensor tensor() {
    const std::uint64_t r = u64(), c = u64();
    if (r * c > (bytes.size() - pos) / 8) throw IoError("checkpoint: truncated");
    Tensor t(r, c);
    raw(t.data.data(), t.data.size() * 8);
    return t;
  }
};

}  // namespace detail

struct Checkpoint {
  TrainConfig config;
  NormalizeTransform transform;
  std::uint64_t iteration = 0;
  FieldEvaluator evaluator;
};

inline void save_checkpoint(const FieldEvaluator& ev, const TrainConfig& cfg,
                            const NormalizeTransform& transform,
                            std::uint64_t iteration, const std::string& path) {
  detail::ByteSink sink;
  sink.raw("MPUL", 4);
  sink.u32(kCheckpointVersion);
  sink.str(nlohmann::json(cfg).dump());
  sink.f64(transform.translation.x);
  sink.f64(transform.translation.y);
  sink.f64(transform.translation.z);
  sink.f64(transform.scale);
  sink.u64(iteration);
  sink.u64(cfg.seed);
  FieldEvaluator& mutable_ev = const_cast<FieldEvaluator&>(ev);
  auto params = named_parameters(mutable_ev.stack, mutable_ev.head);
  sink.u64(params.size());
  for (auto& [name, tensor] : params) {
    if (!tensor->all_finite())
      throw NumericAbort("refusing to checkpoint non-finite parameter " + name);
    sink.str(name);
    sink.tensor(*tensor);
  }
  sink.u32(detail::crc32(sink.bytes.data(), sink.bytes.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(reinterpret_cast<const char*>(sink.bytes.data()),
            static_cast<long>(sink.bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw IoError("checkpoint: truncated");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (detail::crc32(bytes.data(), bytes.size() - 4) != stored)
    throw IoError("checkpoint: checksum mismatch");
  bytes.resize(bytes.size() - 4);

  detail::ByteSource src{bytes};
  char magic[4];
  src.raw(magic, 4);
  if (std::memcmp(magic, "MPUL", 4) != 0) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = src.u32();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint cp;
  cp.config = nlohmann::json::parse(src.str()).get<TrainConfig>();
  cp.transform.translation.x = 0;
  double tx, ty, tz, scale;
  src.raw(&tx, 8);
  src.raw(&ty, 8);
  src.raw(&tz, 8);
  src.raw(&scale, 8);
  cp.transform.translation = {tx, ty, tz};
  cp.transform.scale = scale;
  cp.iteration = src.u64();
  src.u64();  // seed echo, already inside the config

  cp.evaluator.stack = init_stack(cp.config.fft, cp.config.seed);
  cp.evaluator.head = init_head(cp.config.head, cp.config.fft.width, cp.config.seed);
  cp.evaluator.msp = cp.config.msp;
  auto params = named_parameters(cp.evaluator.stack, cp.evaluator.head);
  const std::uint64_t count = src.u64();
  if (count != params.size()) throw IoError("checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = src.str();
    Tensor t = src.tensor();
    bool found = false;
    for (auto& [pname, tensor] : params)
      if (pname == name) {
        if (t.rows != tensor->rows || t.cols != tensor->cols)
          throw IoError("checkpoint: shape mismatch for " + name);
        *tensor = std::move(t);
        found = true;
        break;
      }
    if (!found) throw IoError("checkpoint: unknown parameter " + name);
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Ablation configuration

struct AblationRow {
  std::string label;
  TrainConfig config;
};

inline std::vector<AblationRow> ablation_matrix(const TrainConfig& base,
                                                const std::string& axis) {
  std::vector<AblationRow> rows;
  if (axis == "steps") {
    // 1..3 use the coarse-to-fine tap prefix; 4 and 5 keep pulling at the
    // finest level
    const std::vector<std::vector<int>> levels{
        {4}, {4, 6}, {4, 6, 8}, {4, 6, 8, 8}, {4, 6, 8, 8, 8}};
    for (std::size_t i = 0; i < levels.size(); ++i) {
      TrainConfig c = base;
      c.msp.step_levels = levels[i];
      rows.push_back({"steps-" + std::to_string(i + 1), c});
    }
  } else if (axis == "taps") {
    {
      TrainConfig c = base;
      c.fft.encoder = EncoderKind::Linear;
      rows.push_back({"linear", c});
    }
    const std::vector<std::vector<int>> taps{{4}, {4, 6}, {4, 6, 8}};
    for (const auto& t : taps) {
      TrainConfig c = base;
      c.fft.taps = t;
      c.msp.step_levels = t;
      std::string label = "taps";
      for (int l : t) label += "-l" + std::to_string(l);
      rows.push_back({label, c});
    }
  } else if (axis == "loss-mode") {
    for (LossMode m : {LossMode::PullOnly, LossMode::ReconOnly, LossMode::ReconGrad,
                       LossMode::Full}) {
      TrainConfig c = base;
      c.loss.mode = m;
      rows.push_back({loss_mode_name(m), c});
    }
  } else if (axis == "init") {
    for (InitScheme s : {InitScheme::RandomUniform, InitScheme::FanInUniform,
                         InitScheme::LayerScaled}) {
      TrainConfig c = base;
      c.fft.init = s;
      rows.push_back({init_scheme_name(s), c});
    }
  } else {
    throw std::invalid_argument("unknown ablation axis: " + axis);
  }
  return rows;
}

}  // namespace pullmesh

#endif
