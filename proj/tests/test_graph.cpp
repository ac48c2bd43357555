#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pullmesh/autodiff.hpp"
#include "pullmesh/graph.hpp"
#include "pullmesh/rng.hpp"

using namespace pullmesh;

TEST_CASE("sin at zero") {
  Graph g;
  const int x = g.leaf("x", 1, 1, LeafKind::Point);
  const int y = g.sine(x);
  auto out = evaluate(g, {{"x", Tensor::scalar(0.0)}}, {{"y", y}});
  CHECK(out["y"].value() == 0.0);
}

TEST_CASE("hadamard product") {
  Graph g;
  const int a = g.leaf("a", 1, 2);
  const int b = g.leaf("b", 1, 2);
  const int y = g.hadamard(a, b);
  auto out = evaluate(g, {{"a", Tensor(1, 2, {1, 2})}, {"b", Tensor(1, 2, {3, 4})}},
                      {{"y", y}});
  CHECK(out["y"].data == std::vector<double>{3, 8});
}

TEST_CASE("two-way softmax closed form") {
  Graph g;
  const int a = g.leaf("a", 1, 1);
  const int b = g.leaf("b", 1, 1);
  auto [s1, s2] = g.softmax2(a, b);
  auto out = evaluate(g, {{"a", Tensor::scalar(1.0)}, {"b", Tensor::scalar(0.0)}},
                      {{"s1", s1}, {"s2", s2}});
  // e / (e + 1), evaluated independently to full precision
  CHECK(out["s1"].value() == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(out["s2"].value() == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  CHECK(out["s1"].value() + out["s2"].value() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("product of sines equals its sum-angle expansion") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-10, 10), b = rng.uniform(-10, 10);
    const double lhs = std::sin(a) * std::sin(b);
    const double rhs = 0.5 * (std::sin(a + b - std::numbers::pi / 2) +
                              std::sin(a - b + std::numbers::pi / 2));
    CHECK(std::abs(lhs - rhs) <= 1e-12);
  }
}

TEST_CASE("unbound leaf is an error naming the leaf") {
  Graph g;
  const int x = g.leaf("unbound_leaf", 2, 2);
  const int y = g.sine(x);
  EvalContext ctx(g);
  CHECK_THROWS_WITH_AS(ctx.run({y}), doctest::Contains("unbound_leaf"), GraphError);
}

TEST_CASE("shape mismatch at bind and at construction") {
  Graph g;
  const int a = g.leaf("a", 2, 3);
  const int b = g.leaf("b", 3, 2);
  CHECK_THROWS_AS((void)g.add(a, b), GraphError);
  EvalContext ctx(g);
  CHECK_THROWS_AS(ctx.bind("a", Tensor(1, 1)), GraphError);
}

TEST_CASE("non-finite result reports the offending node") {
  Graph g;
  const int a = g.leaf("a", 1, 1);
  const int b = g.leaf("b", 1, 1);
  const int y = g.div(a, b);
  EvalContext ctx(g);
  ctx.bind("a", Tensor::scalar(1.0));
  ctx.bind("b", Tensor::scalar(0.0));
  CHECK_THROWS_AS(ctx.run({y}, /*check_finite=*/true), GraphError);
  try {
    EvalContext c2(g);
    c2.bind("a", Tensor::scalar(1.0));
    c2.bind("b", Tensor::scalar(0.0));
    c2.run({y}, true);
  } catch (const GraphError& e) {
    CHECK(e.node_id == y);
  }
}

TEST_CASE("evaluation is deterministic across construction orders") {
  auto build_ab = [](bool swap_order) {
    Graph g;
    Bindings bind{{"a", Tensor(2, 2, {0.1, 0.2, 0.3, 0.4})},
                  {"b", Tensor(2, 2, {1.5, -2.0, 0.25, 3.0})}};
    int a, b;
    if (swap_order) {
      b = g.leaf("b", 2, 2);
      a = g.leaf("a", 2, 2);
    } else {
      a = g.leaf("a", 2, 2);
      b = g.leaf("b", 2, 2);
    }
    int sa = 0, mb = 0;
    if (swap_order) {
      mb = g.mul(b, b);
      sa = g.sine(a);
    } else {
      sa = g.sine(a);
      mb = g.mul(b, b);
    }
    const int y = g.add(sa, mb);
    return evaluate(g, bind, {{"y", y}})["y"];
  };
  const Tensor y1 = build_ab(false);
  const Tensor y2 = build_ab(true);
  CHECK(y1.data == y2.data);
}

TEST_CASE("broadcasting: column against matrix, row against matrix") {
  Graph g;
  const int m = g.leaf("m", 2, 3);
  const int c = g.leaf("c", 2, 1);
  const int r = g.leaf("r", 1, 3);
  const int y1 = g.mul(m, c);
  const int y2 = g.add(m, r);
  auto out = evaluate(g,
                      {{"m", Tensor(2, 3, {1, 2, 3, 4, 5, 6})},
                       {"c", Tensor(2, 1, {10, 100})},
                       {"r", Tensor(1, 3, {1, 0, -1})}},
                      {{"y1", y1}, {"y2", y2}});
  CHECK(out["y1"].data == std::vector<double>{10, 20, 30, 400, 500, 600});
  CHECK(out["y2"].data == std::vector<double>{2, 2, 2, 5, 5, 5});
}

TEST_CASE("affine equals explicit loop") {
  Graph g;
  const int x = g.leaf("x", 2, 3);
  const int w = g.leaf("w", 4, 3);
  const int b = g.leaf("b", 1, 4);
  const int y = g.affine(x, w, b);
  Rng rng(3);
  Tensor xt(2, 3), wt(4, 3), bt(1, 4);
  for (double& v : xt.data) v = rng.uniform(-1, 1);
  for (double& v : wt.data) v = rng.uniform(-1, 1);
  for (double& v : bt.data) v = rng.uniform(-1, 1);
  auto out = evaluate(g, {{"x", xt}, {"w", wt}, {"b", bt}}, {{"y", y}});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = bt.data[j];
      for (std::size_t k = 0; k < 3; ++k) acc += xt.at(i, k) * wt.at(j, k);
      CHECK(out["y"].at(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("elementwise primitives") {
  Graph g;
  const int x = g.leaf("x", 1, 4);
  const int r = g.relu(x);
  const int a = g.abs_(x);
  const int m = g.maxc(x, 0.5);
  const int mn = g.min2(x, g.const_fill(1, 4, 0.0));
  auto out = evaluate(g, {{"x", Tensor(1, 4, {-2, -0.5, 0.5, 2})}},
                      {{"r", r}, {"a", a}, {"m", m}, {"mn", mn}});
  CHECK(out["r"].data == std::vector<double>{0, 0, 0.5, 2});
  CHECK(out["a"].data == std::vector<double>{2, 0.5, 0.5, 2});
  CHECK(out["m"].data == std::vector<double>{0.5, 0.5, 0.5, 2});
  CHECK(out["mn"].data == std::vector<double>{-2, -0.5, 0, 0});
}

TEST_CASE("norm composites and the cosine guard") {
  Graph g;
  const int p = g.leaf("p", 2, 3);
  const int n = g.euclidean_norm(p, 1e-8);
  const int c = g.cosine_similarity(p, p);
  auto out = evaluate(g, {{"p", Tensor(2, 3, {3, 4, 0, 0, 0, 0})}},
                      {{"n", n}, {"c", c}});
  CHECK(out["n"].data[0] == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(out["n"].data[1] == doctest::Approx(1e-8).epsilon(1e-10));
  CHECK(out["c"].data[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(out["c"].data[1]));  // zero vectors stay finite
}

TEST_CASE("reductions, broadcasts, concat, slice") {
  Graph g;
  const int x = g.leaf("x", 2, 3);
  auto out = evaluate(
      g, {{"x", Tensor(2, 3, {1, 2, 3, 4, 5, 6})}},
      {{"rs", g.rowsum(x)},
       {"cs", g.colsum(x)},
       {"sum", g.sum_all(x)},
       {"mean", g.mean_all(x)},
       {"sl", g.slice_cols(x, 1, 2)}});
  CHECK(out["rs"].data == std::vector<double>{6, 15});
  CHECK(out["cs"].data == std::vector<double>{5, 7, 9});
  CHECK(out["sum"].value() == 21);
  CHECK(out["mean"].value() == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(out["sl"].data == std::vector<double>{2, 3, 5, 6});
}

TEST_CASE("buffer pooling matches a plain context across resets") {
  Graph g;
  const int x = g.leaf("x", 4, 4, LeafKind::Point);
  int acc = g.sine(x);
  for (int i = 0; i < 6; ++i) acc = g.add(g.mul(acc, acc), g.cosine(acc));
  const int y = g.mean_all(acc);

  Rng rng(11);
  EvalContext pooled(g, {y});
  for (int trial = 0; trial < 3; ++trial) {
    Tensor xt(4, 4);
    for (double& v : xt.data) v = rng.uniform(-2, 2);
    pooled.reset();
    pooled.bind("x", xt);
    pooled.run({y});
    const double got = pooled.value(y).value();
    const double want = evaluate(g, {{"x", xt}}, {{"y", y}})["y"].value();
    CHECK(got == want);
  }
}
