#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pullmesh/msp.hpp"
#include "test_util.hpp"

using namespace pullmesh;

namespace {

FieldEvaluator small_evaluator(std::uint64_t seed, int width = 8, int hidden = 16) {
  FieldEvaluator ev;
  FftConfig fft;
  fft.layers = 9;
  fft.width = width;
  ev.stack = init_stack(fft, seed);
  HeadConfig head;
  head.hidden = hidden;
  head.depth = 2;
  ev.head = init_head(head, width, seed);
  ev.msp = MspConfig{};
  return ev;
}

Tensor random_q(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor q(n, 3);
  for (double& v : q.data) v = rng.uniform(-0.8, 0.8);
  return q;
}

}  // namespace

TEST_CASE("pull step: worked examples") {
  // f=1, grad=(1,0,0): move one unit against the gradient
  Tensor q(1, 3, {2, 0, 0});
  Tensor s = Tensor::scalar(1.0);
  Tensor g(1, 3, {1, 0, 0});
  Tensor out = pull_step_values(q, s, g);
  CHECK(out.data == std::vector<double>{1, 0, 0});

  // zero distance: no movement
  out = pull_step_values(q, Tensor::scalar(0.0), g);
  CHECK(out.data == q.data);

  // negative distance: pushed outward along the gradient
  out = pull_step_values(q, Tensor::scalar(-0.5), g);
  CHECK(out.data == std::vector<double>{2.5, 0, 0});

  // non-unit gradient is normalized before stepping
  out = pull_step_values(q, Tensor::scalar(1.0), Tensor(1, 3, {0, 3, 4}));
  CHECK(out.at(0, 1) == doctest::Approx(-0.6).epsilon(1e-14));
  CHECK(out.at(0, 2) == doctest::Approx(-0.8).epsilon(1e-14));
}

TEST_CASE("pull step: vanishing gradient is floored, not divided through") {
  Tensor q(1, 3, {0.5, 0.5, 0.5});
  Tensor out = pull_step_values(q, Tensor::scalar(1.0), Tensor(1, 3, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::isfinite(out.data[i]));
  CHECK(out.data == q.data);  // direction is exactly zero

  // tiny but nonzero gradient: stride is capped by the floor
  Tensor tiny(1, 3, {1e-12, 0, 0});
  out = pull_step_values(q, Tensor::scalar(1e-12), tiny);
  CHECK(std::abs(out.at(0, 0) - 0.5) <= 1e-4 + 1e-12);
}

TEST_CASE("pull step: stride equals |f| when the gradient is healthy") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor q(1, 3, {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    Tensor g(1, 3, {rng.normal(), rng.normal(), rng.normal()});
    const double f = rng.uniform(-0.5, 0.5);
    Tensor out = pull_step_values(q, Tensor::scalar(f), g);
    const Vec3 d{out.at(0, 0) - q.at(0, 0), out.at(0, 1) - q.at(0, 1),
                 out.at(0, 2) - q.at(0, 2)};
    CHECK(d.norm() == doctest::Approx(std::abs(f)).epsilon(1e-10));
  }
}

TEST_CASE("pull step shape checks") {
  Tensor q(2, 3), s(2, 1), g(2, 3);
  CHECK_NOTHROW(pull_step_values(q, s, g));
  CHECK_THROWS_AS(pull_step_values(q, Tensor(3, 1), g), std::invalid_argument);
  CHECK_THROWS_AS(pull_step_values(q, s, Tensor(2, 2)), std::invalid_argument);
}

TEST_CASE("graph pull step matches the plain recurrence") {
  Rng rng(5);
  Tensor qt(6, 3), st(6, 1), gt(6, 3);
  for (double& v : qt.data) v = rng.uniform(-1, 1);
  for (double& v : st.data) v = rng.uniform(-0.3, 0.3);
  for (double& v : gt.data) v = rng.normal();
  Graph g;
  const int q = g.leaf("q", 6, 3, LeafKind::Point);
  const int s = g.leaf("s", 6, 1, LeafKind::Point);
  const int gr = g.leaf("g", 6, 3, LeafKind::Point);
  const int next = build_pull_step(g, q, s, gr);
  auto out = evaluate(g, {{"q", qt}, {"s", st}, {"g", gt}}, {{"next", next}});
  const Tensor want = pull_step_values(qt, st, gt);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(out["next"].data[i] == doctest::Approx(want.data[i]).epsilon(1e-13));
}

TEST_CASE("pulling an exact sphere field converges in one step") {
  testutil::SphereField field{1.0};
  auto pc = testutil::sphere_cloud(64, 1.0, 7);
  KdTree index(pc.points);
  Tensor q0(2, 3, {2, 0, 0, 0, 0.25, 0});
  auto traj = run_msp(field, q0, index, {4, 6, 8});
  REQUIRE(traj.positions.size() == 4);
  REQUIRE(traj.dist_sq.size() == 3);
  // outside point lands on the surface after one pull and stays there
  CHECK(traj.positions[1].at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(traj.positions[3].at(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  // inside point is pushed outward to the surface
  CHECK(traj.positions[1].at(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(traj.sdf_final.rows == 2);
  // pulled positions pair with their exact nearest neighbor
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t r = 0; r < 2; ++r) {
      const Vec3 p{traj.positions[i + 1].at(r, 0), traj.positions[i + 1].at(r, 1),
                   traj.positions[i + 1].at(r, 2)};
      const auto [bi, bd] = testutil::brute_nearest(pc.points, p);
      CHECK(traj.dist_sq[i].data[r] == bd);
      CHECK(traj.targets[i].at(r, 0) == pc.points[bi].x);
    }
}

TEST_CASE("a constant field never moves the queries") {
  testutil::ConstantField field{0.5};
  auto pc = testutil::sphere_cloud(16, 1.0, 9);
  KdTree index(pc.points);
  const Tensor q0 = random_q(5, 11);
  auto traj = run_msp(field, q0, index, {4, 6});
  CHECK(traj.positions[2].data == q0.data);
}

TEST_CASE("graph trajectory matches the plain recurrence on a learned field") {
  FieldEvaluator ev = small_evaluator(13);
  auto pc = testutil::sphere_cloud(100, 0.8, 13);
  KdTree index(pc.points);
  const Tensor q0 = random_q(9, 17);
  auto plain = run_msp(ev, q0, index, ev.msp.step_levels);

  Graph g;
  ParamLeaves leaves;
  make_stack_leaves(g, leaves, ev.stack);
  make_head_leaves(g, leaves, ev.head);
  const int q0n = g.leaf("q0", 9, 3, LeafKind::Point);
  auto nodes = build_msp(g, leaves, ev.stack.cfg, ev.head.cfg, ev.msp, q0n);
  REQUIRE(nodes.position.size() == 4);

  EvalContext ctx(g, {nodes.position[1], nodes.position[2], nodes.position[3],
                      nodes.dist_sq[0], nodes.dist_sq[1], nodes.dist_sq[2],
                      nodes.sdf_final, nodes.grad_final});
  bind_stack(ctx, ev.stack);
  bind_head(ctx, ev.head);
  ctx.bind("q0", q0);
  for (int i = 0; i < 3; ++i)
    ctx.bind("target" + std::to_string(i + 1),
             plain.targets[static_cast<std::size_t>(i)]);
  ctx.run({nodes.position[3], nodes.dist_sq[0], nodes.dist_sq[1],
           nodes.dist_sq[2], nodes.sdf_final, nodes.grad_final},
          true);
  for (int i = 1; i <= 3; ++i) {
    const Tensor& got = ctx.value(nodes.position[static_cast<std::size_t>(i)]);
    const Tensor& want = plain.positions[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < want.size(); ++j)
      CHECK(got.data[j] == doctest::Approx(want.data[j]).epsilon(1e-11));
  }
  for (int i = 0; i < 3; ++i) {
    const Tensor& got = ctx.value(nodes.dist_sq[static_cast<std::size_t>(i)]);
    for (std::size_t j = 0; j < got.size(); ++j)
      CHECK(got.data[j] ==
            doctest::Approx(plain.dist_sq[static_cast<std::size_t>(i)].data[j])
                .epsilon(1e-9));
  }
  for (std::size_t j = 0; j < 9; ++j)
    CHECK(ctx.value(nodes.sdf_final).data[j] ==
          doctest::Approx(plain.sdf_final.data[j]).epsilon(1e-10));
}

TEST_CASE("frozen conditioning evaluates the field at the initial position") {
  FieldEvaluator ev = small_evaluator(19);
  ev.msp.features = FeatureConditioning::FrozenQ0;
  const Tensor q0 = random_q(4, 19);

  Graph g;
  ParamLeaves leaves;
  make_stack_leaves(g, leaves, ev.stack);
  make_head_leaves(g, leaves, ev.head);
  const int q0n = g.leaf("q0", 4, 3, LeafKind::Point);
  auto nodes = build_msp(g, leaves, ev.stack.cfg, ev.head.cfg, ev.msp, q0n);
  EvalContext ctx(g, nodes.sdf);
  bind_stack(ctx, ev.stack);
  bind_head(ctx, ev.head);
  ctx.bind("q0", q0);
  for (int i = 1; i <= 3; ++i) ctx.bind("target" + std::to_string(i), Tensor(4, 3));
  ctx.run(std::span<const int>(nodes.sdf));
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor want = ev.sdf(q0, ev.msp.step_levels[i]);
    const Tensor& got = ctx.value(nodes.sdf[i]);
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(got.data[j] == doctest::Approx(want.data[j]).epsilon(1e-11));
  }
}

TEST_CASE("field gradient agrees with finite differences") {
  FieldEvaluator ev = small_evaluator(23);
  const Tensor q = random_q(5, 29);
  for (int level : ev.msp.step_levels) {
    const Tensor grad = ev.sdf_gradient(q, level);
    for (std::size_t r = 0; r < q.rows; ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        Tensor qp = q, qm = q;
        const double h = 1e-6;
        qp.at(r, c) += h;
        qm.at(r, c) -= h;
        const double fd =
            (ev.sdf(qp, level).data[r] - ev.sdf(qm, level).data[r]) / (2 * h);
        CHECK(grad.at(r, c) == doctest::Approx(fd).epsilon(1e-4));
      }
  }
}

TEST_CASE("sdf_with_gradient equals the separate evaluations") {
  FieldEvaluator ev = small_evaluator(31);
  const Tensor q = random_q(6, 31);
  auto [s, g] = ev.sdf_with_gradient(q, 6);
  CHECK(s.data == ev.sdf(q, 6).data);
  CHECK(g.data == ev.sdf_gradient(q, 6).data);
}

TEST_CASE("rotating the first-layer frequencies rotates the field") {
  // rotations preserve dot products, so rotating every frequency row turns
  // f into f' with f'(R p) = f(p) and grad f'(R p) = R grad f(p)
  auto rot = [](const Vec3& p) { return Vec3{-p.y, p.x, p.z}; };
  FieldEvaluator ev = small_evaluator(37);
  FieldEvaluator rev = ev;
  for (Tensor& om : rev.stack.omega)
    for (std::size_t m = 0; m < om.rows; ++m) {
      const Vec3 r = rot({om.at(m, 0), om.at(m, 1), om.at(m, 2)});
      om.at(m, 0) = r.x;
      om.at(m, 1) = r.y;
      om.at(m, 2) = r.z;
    }
  const Tensor q = random_q(5, 41);
  Tensor rq(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    const Vec3 r = rot({q.at(i, 0), q.at(i, 1), q.at(i, 2)});
    rq.at(i, 0) = r.x;
    rq.at(i, 1) = r.y;
    rq.at(i, 2) = r.z;
  }
  const Tensor f = ev.sdf(q, 8);
  const Tensor rf = rev.sdf(rq, 8);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(rf.data[i] == doctest::Approx(f.data[i]).epsilon(1e-11));
  const Tensor g = ev.sdf_gradient(q, 8);
  const Tensor rg = rev.sdf_gradient(rq, 8);
  for (std::size_t i = 0; i < 5; ++i) {
    const Vec3 want = rot({g.at(i, 0), g.at(i, 1), g.at(i, 2)});
    CHECK(rg.at(i, 0) == doctest::Approx(want.x).epsilon(1e-9));
    CHECK(rg.at(i, 1) == doctest::Approx(want.y).epsilon(1e-9));
    CHECK(rg.at(i, 2) == doctest::Approx(want.z).epsilon(1e-9));
  }
}

TEST_CASE("head: init bounds and reference forward pass") {
  HeadConfig cfg;
  cfg.hidden = 8;
  cfg.depth = 2;
  SdfHead h = init_head(cfg, 5, 3);
  REQUIRE(h.w.size() == 3);
  CHECK(h.w[0].rows == 8);
  CHECK(h.w[0].cols == 5);
  CHECK(h.w[2].rows == 1);
  for (double v : h.w[0].data) CHECK(std::abs(v) <= 1.0 / std::sqrt(5.0));
  for (double v : h.w[1].data) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));

  Graph g;
  ParamLeaves leaves;
  make_head_leaves(g, leaves, h);
  const int x = g.leaf("x", 2, 5, LeafKind::Point);
  const int y = build_head(g, leaves, cfg, x);
  Rng rng(43);
  Tensor xt(2, 5);
  for (double& v : xt.data) v = rng.uniform(-1, 1);
  EvalContext ctx(g);
  bind_head(ctx, h);
  ctx.bind("x", xt);
  ctx.run({y});
  // plain-loop reference
  for (std::size_t row = 0; row < 2; ++row) {
    std::vector<double> act(5);
    for (std::size_t c = 0; c < 5; ++c) act[c] = xt.at(row, c);
    for (std::size_t layer = 0; layer < 3; ++layer) {
      std::vector<double> next(h.w[layer].rows);
      for (std::size_t o = 0; o < next.size(); ++o) {
        double a = h.b[layer].data[o];
        for (std::size_t c = 0; c < act.size(); ++c)
          a += h.w[layer].at(o, c) * act[c];
        next[o] = (layer < 2 && a < 0) ? 0.0 : a;
      }
      act = std::move(next);
    }
    CHECK(ctx.value(y).at(row, 0) == doctest::Approx(act[0]).epsilon(1e-12));
  }
}

TEST_CASE("config validation for steps and heads") {
  FftConfig fft;
  MspConfig msp;
  CHECK_NOTHROW(msp.validate(fft));
  msp.step_levels = {4, 5};
  CHECK_THROWS_AS(msp.validate(fft), std::invalid_argument);
  msp.step_levels = {};
  CHECK_THROWS_AS(msp.validate(fft), std::invalid_argument);
  // repeated final level is allowed (longer schedules reuse the finest tap)
  msp.step_levels = {4, 6, 8, 8};
  CHECK_NOTHROW(msp.validate(fft));
  // the linear-encoder ablation ignores tap constraints
  fft.encoder = EncoderKind::Linear;
  msp.step_levels = {1, 2, 3};
  CHECK_NOTHROW(msp.validate(fft));
  CHECK_THROWS_AS(init_head(HeadConfig{0, 3}, 4, 1), std::invalid_argument);
}
