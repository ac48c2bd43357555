#ifndef PULLMESH_AUTODIFF_HPP
#define PULLMESH_AUTODIFF_HPP

// Reverse-mode differentiation as a graph extension: every rule below emits
// ordinary graph nodes, so the result can be evaluated like any other output
// and differentiated again for second-order terms.

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pullmesh/graph.hpp"

namespace pullmesh {

namespace detail {

// Sum-reduce an adjoint back to the shape of a broadcast operand.
inline int reduce_to(Graph& g, int grad, std::size_t rows, std::size_t cols) {
  const Node& n = g.at(grad);
  if (n.rows == rows && n.cols == cols) return grad;
  if (rows == 1 && cols == 1) return g.sum_all(grad);
  if (cols == 1) return g.rowsum(grad);
  if (rows == 1) return g.colsum(grad);
  throw GraphError("reduce_to: incompatible adjoint shape");
}

}  // namespace detail

// Appends adjoint (gradient) nodes of `output` with respect to each node in
// `targets`. `seed` is the initial adjoint of the output (-1 means ones).
// Propagation stops at target nodes, stop-gradient nodes, and
// derivative-free primitives. Targets never reached get a zero adjoint.
inline std::unordered_map<int, int> append_adjoints(Graph& g, int output,
                                                    std::span<const int> targets,
                                                    int seed = -1) {
  const int n_fwd = g.size();

  // nodes that can reach a target through differentiable edges
  std::vector<char> relevant(static_cast<std::size_t>(n_fwd), 0);
  for (int t : targets) relevant[static_cast<std::size_t>(t)] = 1;
  for (int id = 0; id < n_fwd; ++id) {
    const Node& n = g.at(id);
    if (n.op == Op::StopGrad || n.op == Op::Sign || n.op == Op::Step ||
        n.op == Op::LeMask || n.op == Op::GtMaskC)
      continue;
    for (int in : n.in)
      if (relevant[static_cast<std::size_t>(in)]) {
        relevant[static_cast<std::size_t>(id)] |= 1;
        break;
      }
  }

  std::unordered_map<int, std::vector<int>> pending;  // node -> adjoint pieces
  auto push_adj = [&](int node, int adj) {
    pending[node].push_back(adj);
  };
  auto adj_of = [&](int node) -> int {
    auto it = pending.find(node);
    if (it == pending.end() || it->second.empty()) return -1;
    while (it->second.size() > 1) {
      const int a = it->second.back();
      it->second.pop_back();
      it->second.back() = g.add(it->second.back(), a);
    }
    return it->second[0];
  };

  const Node& out_node = g.at(output);
  if (seed < 0) seed = g.const_fill(out_node.rows, out_node.cols, 1.0);
  push_adj(output, seed);

  std::vector<char> is_target(static_cast<std::size_t>(n_fwd), 0);
  for (int t : targets) is_target[static_cast<std::size_t>(t)] = 1;

  for (int id = output; id >= 0; --id) {
    auto u = static_cast<std::size_t>(id);
    if (!relevant[u] && !is_target[u]) continue;
    if (is_target[u]) continue;  // harvest only; do not descend below targets
    const int grad = adj_of(id);
    if (grad < 0) continue;
    // copy: appending rule nodes may reallocate the graph's node storage
    const Node n = g.at(id);
    auto reduce_push = [&](int src, int adj) {
      const Node& s = g.at(src);
      if (!relevant[static_cast<std::size_t>(src)]) return;
      push_adj(src, detail::reduce_to(g, adj, s.rows, s.cols));
    };
    switch (n.op) {
      case Op::Leaf:
      case Op::ConstFill:
      case Op::StopGrad:
      case Op::Sign:
      case Op::Step:
      case Op::LeMask:
      case Op::GtMaskC:
        break;
      case Op::Add:
        reduce_push(n.in[0], grad);
        reduce_push(n.in[1], grad);
        break;
      case Op::Sub:
        reduce_push(n.in[0], grad);
        reduce_push(n.in[1], g.neg(grad));
        break;
      case Op::Mul:
        reduce_push(n.in[0], g.mul(grad, n.in[1]));
        reduce_push(n.in[1], g.mul(grad, n.in[0]));
        break;
      case Op::Div:
        reduce_push(n.in[0], g.div(grad, n.in[1]));
        reduce_push(n.in[1],
                    g.neg(g.div(g.mul(grad, n.in[0]), g.mul(n.in[1], n.in[1]))));
        break;
      case Op::Neg:
        reduce_push(n.in[0], g.neg(grad));
        break;
      case Op::Scale:
        reduce_push(n.in[0], g.scale(grad, n.k));
        break;
      case Op::AddC:
        reduce_push(n.in[0], grad);
        break;
      case Op::Sin:
        reduce_push(n.in[0], g.mul(grad, g.cosine(n.in[0])));
        break;
      case Op::Cos:
        reduce_push(n.in[0], g.neg(g.mul(grad, g.sine(n.in[0]))));
        break;
      case Op::Exp:
        reduce_push(n.in[0], g.mul(grad, id));
        break;
      case Op::Sigmoid:
        // s' = s (1 - s), reusing the forward value
        reduce_push(n.in[0], g.mul(grad, g.mul(id, g.addc(g.neg(id), 1.0))));
        break;
      case Op::Power:
        reduce_push(n.in[0], g.scale(g.mul(grad, g.power(n.in[0], n.k - 1.0)), n.k));
        break;
      case Op::Relu:
        reduce_push(n.in[0], g.mul(grad, g.step(n.in[0])));
        break;
      case Op::Abs:
        reduce_push(n.in[0], g.mul(grad, g.sign(n.in[0])));
        break;
      case Op::MaxC:
        reduce_push(n.in[0], g.mul(grad, g.gtmaskc(n.in[0], n.k)));
        break;
      case Op::Min2: {
        const int m = g.lemask(n.in[0], n.in[1]);
        reduce_push(n.in[0], g.mul(grad, m));
        reduce_push(n.in[1], g.mul(grad, g.addc(g.neg(m), 1.0)));
        break;
      }
      case Op::MatMul: {
        const bool ta = n.a0, tb = n.a1;
        // C = opA(A) opB(B); standard four cases
        if (!ta && !tb) {
          reduce_push(n.in[0], g.matmul(grad, n.in[1], false, true));
          reduce_push(n.in[1], g.matmul(n.in[0], grad, true, false));
        } else if (ta && !tb) {
          reduce_push(n.in[0], g.matmul(n.in[1], grad, false, true));
          reduce_push(n.in[1], g.matmul(n.in[0], grad, false, false));
        } else if (!ta && tb) {
          reduce_push(n.in[0], g.matmul(grad, n.in[1], false, false));
          reduce_push(n.in[1], g.matmul(grad, n.in[0], true, false));
        } else {
          reduce_push(n.in[0], g.matmul(n.in[1], grad, true, true));
          reduce_push(n.in[1], g.matmul(grad, n.in[0], true, true));
        }
        break;
      }
      case Op::Affine:
        // out = X W^T + b
        reduce_push(n.in[0], g.matmul(grad, n.in[1], false, false));
        reduce_push(n.in[1], g.matmul(grad, n.in[0], true, false));
        reduce_push(n.in[2], g.colsum(grad));
        break;
      case Op::RowSum:
        reduce_push(n.in[0], g.bcast_col(grad, g.at(n.in[0]).cols));
        break;
      case Op::ColSum:
        reduce_push(n.in[0], g.bcast_row(grad, g.at(n.in[0]).rows));
        break;
      case Op::SumAll: {
        const Node& src = g.at(n.in[0]);
        reduce_push(n.in[0], g.mul(g.const_fill(src.rows, src.cols, 1.0), grad));
        break;
      }
      case Op::MeanAll: {
        const Node& src = g.at(n.in[0]);
        const double inv = 1.0 / static_cast<double>(src.rows * src.cols);
        reduce_push(n.in[0], g.mul(g.const_fill(src.rows, src.cols, inv), grad));
        break;
      }
      case Op::BroadcastCol:
        reduce_push(n.in[0], g.rowsum(grad));
        break;
      case Op::BroadcastRow:
        reduce_push(n.in[0], g.colsum(grad));
        break;
      case Op::ConcatCols: {
        int off = 0;
        for (int src : n.in) {
          const int w = static_cast<int>(g.at(src).cols);
          reduce_push(src, g.slice_cols(grad, off, w));
          off += w;
        }
        break;
      }
      case Op::SliceCols: {
        const std::size_t src_rows = g.at(n.in[0]).rows;
        const std::size_t src_cols = g.at(n.in[0]).cols;
        std::vector<int> parts;
        if (n.a0 > 0) parts.push_back(g.const_fill(src_rows, n.a0, 0.0));
        parts.push_back(grad);
        const int right = static_cast<int>(src_cols) - n.a0 - n.a1;
        if (right > 0) parts.push_back(g.const_fill(src_rows, right, 0.0));
        reduce_push(n.in[0], parts.size() == 1 ? grad : g.concat_cols(parts));
        break;
      }
    }
  }

  std::unordered_map<int, int> result;
  for (int t : targets) {
    const int a = adj_of(t);
    result[t] =
        a >= 0 ? a : g.const_fill(g.at(t).rows, g.at(t).cols, 0.0);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Public differentiation surface

struct GradientBundle {
  Tensor value;
  Tensor point_jacobian;  // d(output)/d(points), rows aligned with output rows
  std::map<std::string, Tensor> parameter_gradients;
};

using Bindings = std::map<std::string, Tensor>;

inline void bind_all(EvalContext& ctx, const Bindings& bindings) {
  for (const auto& [name, value] : bindings) ctx.bind(name, value);
}

// Forward evaluation of named outputs.
inline std::map<std::string, Tensor> evaluate(
    const Graph& g, const Bindings& bindings,
    const std::map<std::string, int>& outputs) {
  EvalContext ctx(g);
  bind_all(ctx, bindings);
  std::vector<int> ids;
  for (const auto& [name, id] : outputs) ids.push_back(id);
  ctx.run(std::span<const int>(ids), /*check_finite=*/true);
  std::map<std::string, Tensor> result;
  for (const auto& [name, id] : outputs) result[name] = ctx.value(id);
  return result;
}

// Appends the spatial-gradient extension d(output)/d(points) to the graph and
// returns the new node id. `output` must be scalar-per-point (one column) with
// rows matching the points leaf; rows are treated as independent.
inline int append_point_gradient(Graph& g, int output, int points_leaf) {
  const Node& out = g.at(output);
  const Node& pts = g.at(points_leaf);
  if (out.cols != 1 || out.rows != pts.rows)
    throw GraphError("point_gradient: output is not scalar-per-point");
  const int targets[] = {points_leaf};
  return append_adjoints(g, output, targets).at(points_leaf);
}

inline GradientBundle point_gradient(Graph g, const Bindings& bindings, int output,
                                     int points_leaf) {
  const int grad = append_point_gradient(g, output, points_leaf);
  EvalContext ctx(g);
  bind_all(ctx, bindings);
  const int outs[] = {output, grad};
  ctx.run(std::span<const int>(outs), /*check_finite=*/true);
  GradientBundle b;
  b.value = ctx.value(output);
  b.point_jacobian = ctx.value(grad);
  return b;
}

// Gradients of a scalar loss with respect to every parameter leaf, correct
// through nested point-gradient extensions.
inline GradientBundle parameter_gradient(Graph g, const Bindings& bindings,
                                         int loss) {
  const Node& out = g.at(loss);
  if (out.rows != 1 || out.cols != 1)
    throw GraphError("parameter_gradient: loss is not scalar");
  std::vector<int> params;
  std::vector<std::string> names;
  for (const auto& [name, id] : g.leaves())
    if (g.at(id).leaf_kind == LeafKind::Parameter) {
      params.push_back(id);
      names.push_back(name);
    }
  auto adj = append_adjoints(g, loss, std::span<const int>(params));
  EvalContext ctx(g);
  bind_all(ctx, bindings);
  std::vector<int> outs{loss};
  for (int p : params) outs.push_back(adj.at(p));
  ctx.run(std::span<const int>(outs), /*check_finite=*/true);
  GradientBundle b;
  b.value = ctx.value(loss);
  for (std::size_t i = 0; i < params.size(); ++i)
    b.parameter_gradients[names[i]] = ctx.value(adj.at(params[i]));
  return b;
}

// Max relative deviation between the analytic gradient of a scalar output and
// central finite differences over one leaf. Used as the gradient oracle in
// tests.
inline double finite_difference_probe(const Graph& g, const Bindings& bindings,
                                      const std::string& leaf_name, int output,
                                      double step) {
  if (step <= 0) throw GraphError("finite_difference_probe: step must be > 0");
  const int leaf = g.find_leaf(leaf_name);
  Graph gx = g;
  const int targets[] = {leaf};
  const int grad_node = append_adjoints(gx, output, targets).at(leaf);
  EvalContext ctx(gx);
  bind_all(ctx, bindings);
  const int outs[] = {grad_node};
  ctx.run(std::span<const int>(outs));
  const Tensor analytic = ctx.value(grad_node);

  Bindings perturbed = bindings;
  Tensor& x = perturbed.at(leaf_name);
  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double saved = x.data[i];
    auto eval_at = [&](double v) {
      x.data[i] = v;
      EvalContext c(g);
      bind_all(c, perturbed);
      const int o[] = {output};
      c.run(std::span<const int>(o));
      const Tensor& t = c.value(output);
      double s = 0;
      for (double e : t.data) s += e;
      return s;
    };
    const double fd = (eval_at(saved + step) - eval_at(saved - step)) / (2 * step);
    x.data[i] = saved;
    const double rel =
        std::abs(analytic.data[i] - fd) / (std::abs(analytic.data[i]) + 1e-12);
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace pullmesh

#endif
