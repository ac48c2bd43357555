#ifndef PULLMESH_GRAPH_HPP
#define PULLMESH_GRAPH_HPP

// Expression-graph engine over a fixed primitive set with hand-derived
// derivative rules. Gradients are built as graph extensions (new nodes),
// so a gradient can itself be differentiated again; this is how the
// second-order terms of the training objective are obtained.

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <cblas.h>

#include "pullmesh/tensor.hpp"

namespace pullmesh {

enum class Op : std::uint8_t {
  Leaf,
  ConstFill,
  Add,
  Sub,
  Mul,  // hadamard product (with scalar/row/column broadcasting)
  Div,
  Neg,
  Scale,  // x * k
  AddC,   // x + k
  Sin,
  Cos,
  Exp,
  Sigmoid,
  Power,  // x^k
  Relu,
  Abs,
  Sign,     // derivative-free
  Step,     // 1[x > 0], derivative-free
  LeMask,   // 1[a <= b], derivative-free
  GtMaskC,  // 1[x > k], derivative-free
  MaxC,     // max(x, k)
  Min2,
  MatMul,  // attrs a0/a1: transpose flags
  Affine,  // X (BxIn), W (OutxIn), b (1xOut) -> X W^T + b
  RowSum,
  ColSum,
  SumAll,
  MeanAll,
  BroadcastCol,  // Bx1 -> BxC
  BroadcastRow,  // 1xC -> BxC
  ConcatCols,
  SliceCols,  // attrs a0: start, a1: length
  StopGrad,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::ConstFill: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Scale: return "scale";
    case Op::AddC: return "addc";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Sigmoid: return "sigmoid";
    case Op::Power: return "power";
    case Op::Relu: return "relu";
    case Op::Abs: return "abs";
    case Op::Sign: return "sign";
    case Op::Step: return "step";
    case Op::LeMask: return "lemask";
    case Op::GtMaskC: return "gtmaskc";
    case Op::MaxC: return "maxc";
    case Op::Min2: return "min2";
    case Op::MatMul: return "matmul";
    case Op::Affine: return "affine";
    case Op::RowSum: return "rowsum";
    case Op::ColSum: return "colsum";
    case Op::SumAll: return "sum";
    case Op::MeanAll: return "mean";
    case Op::BroadcastCol: return "bcastcol";
    case Op::BroadcastRow: return "bcastrow";
    case Op::ConcatCols: return "concat";
    case Op::SliceCols: return "slice";
    case Op::StopGrad: return "stopgrad";
  }
  return "?";
}

enum class LeafKind : std::uint8_t { Parameter, Point, Constant };

struct Node {
  Op op = Op::Leaf;
  std::vector<int> in;
  double k = 0.0;  // scalar attribute (fill value, scale, exponent, threshold)
  int a0 = 0, a1 = 0;
  std::size_t rows = 0, cols = 0;
  std::string name;  // leaves only
  LeafKind leaf_kind = LeafKind::Constant;
};

class GraphError : public std::runtime_error {
 public:
  GraphError(const std::string& msg, int node = -1)
      : std::runtime_error(msg), node_id(node) {}
  int node_id;
};

class Graph {
 public:
  int leaf(const std::string& name, std::size_t rows, std::size_t cols,
           LeafKind kind = LeafKind::Parameter) {
    if (leaves_.count(name)) throw GraphError("duplicate leaf name: " + name);
    Node n;
    n.op = Op::Leaf;
    n.rows = rows;
    n.cols = cols;
    n.name = name;
    n.leaf_kind = kind;
    const int id = push(std::move(n));
    leaves_[name] = id;
    return id;
  }

  int const_fill(std::size_t rows, std::size_t cols, double v) {
    Node n;
    n.op = Op::ConstFill;
    n.rows = rows;
    n.cols = cols;
    n.k = v;
    return push(std::move(n));
  }

  int add(int a, int b) { return binary(Op::Add, a, b); }
  int sub(int a, int b) { return binary(Op::Sub, a, b); }
  int mul(int a, int b) { return binary(Op::Mul, a, b); }
  int hadamard(int a, int b) { return mul(a, b); }
  int div(int a, int b) { return binary(Op::Div, a, b); }
  int min2(int a, int b) { return binary(Op::Min2, a, b); }
  int lemask(int a, int b) { return binary(Op::LeMask, a, b); }

  int neg(int a) { return unary(Op::Neg, a); }
  int scale(int a, double k) { return unary(Op::Scale, a, k); }
  int addc(int a, double k) { return unary(Op::AddC, a, k); }
  int sine(int a) { return unary(Op::Sin, a); }
  int cosine(int a) { return unary(Op::Cos, a); }
  int expn(int a) { return unary(Op::Exp, a); }
  int sigmoid(int a) { return unary(Op::Sigmoid, a); }
  int power(int a, double p) { return unary(Op::Power, a, p); }
  int relu(int a) { return unary(Op::Relu, a); }
  int abs_(int a) { return unary(Op::Abs, a); }
  int sign(int a) { return unary(Op::Sign, a); }
  int step(int a) { return unary(Op::Step, a); }
  int gtmaskc(int a, double k) { return unary(Op::GtMaskC, a, k); }
  int maxc(int a, double k) { return unary(Op::MaxC, a, k); }
  int stop_grad(int a) { return unary(Op::StopGrad, a); }

  int matmul(int a, int b, bool trans_a = false, bool trans_b = false) {
    const Node& na = at(a);
    const Node& nb = at(b);
    const std::size_t m = trans_a ? na.cols : na.rows;
    const std::size_t ka = trans_a ? na.rows : na.cols;
    const std::size_t kb = trans_b ? nb.cols : nb.rows;
    const std::size_t c = trans_b ? nb.rows : nb.cols;
    if (ka != kb)
      throw GraphError("matmul: inner dimensions " + std::to_string(ka) + " vs " +
                       std::to_string(kb));
    Node n;
    n.op = Op::MatMul;
    n.in = {a, b};
    n.a0 = trans_a;
    n.a1 = trans_b;
    n.rows = m;
    n.cols = c;
    return push(std::move(n));
  }

  int affine(int x, int w, int b) {
    const Node& nx = at(x);
    const Node& nw = at(w);
    const Node& nb = at(b);
    if (nx.cols != nw.cols)
      throw GraphError("affine: input width " + std::to_string(nx.cols) +
                       " vs weight fan-in " + std::to_string(nw.cols));
    if (nb.rows != 1 || nb.cols != nw.rows)
      throw GraphError("affine: bias shape " + nb.name);
    Node n;
    n.op = Op::Affine;
    n.in = {x, w, b};
    n.rows = nx.rows;
    n.cols = nw.rows;
    return push(std::move(n));
  }

  int rowsum(int a) {
    Node n;
    n.op = Op::RowSum;
    n.in = {a};
    n.rows = at(a).rows;
    n.cols = 1;
    return push(std::move(n));
  }
  int colsum(int a) {
    Node n;
    n.op = Op::ColSum;
    n.in = {a};
    n.rows = 1;
    n.cols = at(a).cols;
    return push(std::move(n));
  }
  int sum_all(int a) {
    Node n;
    n.op = Op::SumAll;
    n.in = {a};
    n.rows = n.cols = 1;
    return push(std::move(n));
  }
  int mean_all(int a) {
    Node n;
    n.op = Op::MeanAll;
    n.in = {a};
    n.rows = n.cols = 1;
    return push(std::move(n));
  }

  int bcast_col(int a, std::size_t c) {
    if (at(a).cols != 1) throw GraphError("bcast_col: input not Bx1");
    Node n;
    n.op = Op::BroadcastCol;
    n.in = {a};
    n.rows = at(a).rows;
    n.cols = c;
    return push(std::move(n));
  }
  int bcast_row(int a, std::size_t r) {
    if (at(a).rows != 1) throw GraphError("bcast_row: input not 1xC");
    Node n;
    n.op = Op::BroadcastRow;
    n.in = {a};
    n.rows = r;
    n.cols = at(a).cols;
    return push(std::move(n));
  }

  int concat_cols(std::span<const int> ids) {
    if (ids.empty()) throw GraphError("concat: no inputs");
    Node n;
    n.op = Op::ConcatCols;
    n.rows = at(ids[0]).rows;
    n.cols = 0;
    for (int id : ids) {
      if (at(id).rows != n.rows) throw GraphError("concat: row mismatch");
      n.cols += at(id).cols;
      n.in.push_back(id);
    }
    return push(std::move(n));
  }

  int slice_cols(int a, int start, int len) {
    if (start < 0 || len <= 0 ||
        static_cast<std::size_t>(start + len) > at(a).cols)
      throw GraphError("slice: out of range");
    Node n;
    n.op = Op::SliceCols;
    n.in = {a};
    n.a0 = start;
    n.a1 = len;
    n.rows = at(a).rows;
    n.cols = static_cast<std::size_t>(len);
    return push(std::move(n));
  }

  // ---- composites over the primitive set ----

  // per-row squared Euclidean norm, BxC -> Bx1
  int squared_norm(int a) { return rowsum(mul(a, a)); }

  // per-row Euclidean norm with a floor: max(||a||, floor)
  int euclidean_norm(int a, double floor = 0.0) {
    const int sq = squared_norm(a);
    if (floor > 0.0) return power(maxc(sq, floor * floor), 0.5);
    return power(maxc(sq, 1e-300), 0.5);
  }

  // per-row cosine similarity, guarded by max(||a||*||b||, 1e-12)
  int cosine_similarity(int a, int b) {
    const int dot = rowsum(mul(a, b));
    const int den2 = maxc(mul(squared_norm(a), squared_norm(b)), 1e-24);
    return div(dot, maxc(power(den2, 0.5), 1e-12));
  }

  // softmax over two tensors of equal shape; numerically stable form
  std::pair<int, int> softmax2(int a, int b) {
    const int s = sigmoid(sub(a, b));
    return {s, addc(neg(s), 1.0)};
  }

  const Node& at(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<Node>& nodes() const { return nodes_; }

  int find_leaf(const std::string& name) const {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw GraphError("unknown leaf: " + name);
    return it->second;
  }
  const std::unordered_map<std::string, int>& leaves() const { return leaves_; }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int unary(Op op, int a, double k = 0.0) {
    Node n;
    n.op = op;
    n.in = {a};
    n.k = k;
    n.rows = at(a).rows;
    n.cols = at(a).cols;
    return push(std::move(n));
  }

  int binary(Op op, int a, int b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    const std::size_t r = std::max(na.rows, nb.rows);
    const std::size_t c = std::max(na.cols, nb.cols);
    auto compat = [](std::size_t x, std::size_t full) { return x == full || x == 1; };
    if (!compat(na.rows, r) || !compat(nb.rows, r) || !compat(na.cols, c) ||
        !compat(nb.cols, c))
      throw GraphError(std::string(op_name(op)) + ": incompatible shapes " +
                       std::to_string(na.rows) + "x" + std::to_string(na.cols) +
                       " vs " + std::to_string(nb.rows) + "x" +
                       std::to_string(nb.cols));
    Node n;
    n.op = op;
    n.in = {a, b};
    n.rows = r;
    n.cols = c;
    return push(std::move(n));
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> leaves_;
};

// ---------------------------------------------------------------------------
// Evaluation

class EvalContext {
 public:
  // persistent: node ids whose buffers must outlive the whole run (outputs).
  // When non-empty, intermediate buffers are recycled once their last
  // consumer has run.
  explicit EvalContext(const Graph& g, std::vector<int> persistent = {})
      : graph_(&g),
        values_(g.nodes().size()),
        state_(g.nodes().size(), 0),
        uses_left_(g.nodes().size(), 0),
        pooling_(!persistent.empty()),
        persistent_(g.nodes().size(), 0) {
    for (int id : persistent) persistent_[static_cast<std::size_t>(id)] = 1;
    total_uses_.assign(g.nodes().size(), 0);
    for (const Node& n : g.nodes())
      for (int in : n.in) ++total_uses_[static_cast<std::size_t>(in)];
    reset();
  }

  void reset() {
    for (std::size_t i = 0; i < state_.size(); ++i) {
      // Leaf buffers come from the caller, not the pool; pooling them would
      // grow the pool by one buffer per leaf per reset.
      if (state_[i] == 2 && pooling_ && graph_->at(static_cast<int>(i)).op != Op::Leaf)
        release(static_cast<int>(i));
      state_[i] = 0;
    }
    uses_left_ = total_uses_;
  }

  void bind(int leaf_id, Tensor value) {
    const Node& n = graph_->at(leaf_id);
    if (n.op != Op::Leaf) throw GraphError("bind: node is not a leaf", leaf_id);
    if (value.rows != n.rows || value.cols != n.cols)
      throw GraphError("bind: shape " + value.shape_str() + " does not match leaf '" +
                           n.name + "' (" + std::to_string(n.rows) + "x" +
                           std::to_string(n.cols) + ")",
                       leaf_id);
    values_[static_cast<std::size_t>(leaf_id)] = std::move(value);
    state_[static_cast<std::size_t>(leaf_id)] = 2;
  }

  void bind(const std::string& leaf_name, Tensor value) {
    bind(graph_->find_leaf(leaf_name), std::move(value));
  }

  // Compute the requested outputs (and everything they need).
  void run(std::span<const int> outputs, bool check_finite = false) {
    // mark needed, in reverse
    std::vector<int> stack(outputs.begin(), outputs.end());
    std::vector<char> needed(values_.size(), 0);
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      auto u = static_cast<std::size_t>(id);
      if (needed[u] || state_[u] == 2) continue;
      needed[u] = 1;
      for (int in : graph_->at(id).in)
        if (state_[static_cast<std::size_t>(in)] != 2) stack.push_back(in);
    }
    for (std::size_t i = 0; i < needed.size(); ++i) {
      if (!needed[i]) continue;
      compute(static_cast<int>(i));
      if (check_finite && !values_[i].all_finite())
        throw GraphError(std::string("non-finite result at node ") +
                             std::to_string(i) + " (" +
                             op_name(graph_->at(static_cast<int>(i)).op) + ")",
                         static_cast<int>(i));
    }
  }

  void run(std::initializer_list<int> outputs, bool check_finite = false) {
    run(std::span<const int>(outputs.begin(), outputs.size()), check_finite);
  }

  const Tensor& value(int id) const {
    if (state_[static_cast<std::size_t>(id)] != 2)
      throw GraphError("value requested for uncomputed node", id);
    return values_[static_cast<std::size_t>(id)];
  }

 private:
  Tensor acquire(std::size_t rows, std::size_t cols) {
    if (pooling_) {
      auto& bucket = pool_[rows * cols];
      if (!bucket.empty()) {
        Tensor t;
        t.rows = rows;
        t.cols = cols;
        t.data = std::move(bucket.back());
        bucket.pop_back();
        return t;
      }
    }
    return Tensor(rows, cols);
  }

  void release(int id) {
    Tensor& t = values_[static_cast<std::size_t>(id)];
    if (t.data.empty()) return;
    pool_[t.size()].push_back(std::move(t.data));
    t = Tensor();
  }

  void compute(int id);

  const Graph* graph_;
  std::vector<Tensor> values_;
  std::vector<char> state_;  // 0 = empty, 2 = computed/bound
  std::vector<int> total_uses_;
  std::vector<int> uses_left_;
  bool pooling_;
  std::vector<char> persistent_;
  std::unordered_map<std::size_t, std::vector<std::vector<double>>> pool_;
};

namespace detail {

inline void elementwise_binary(Op op, const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t R = out.rows, C = out.cols;
  const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
  auto apply = [op](double x, double y) {
    switch (op) {
      case Op::Add: return x + y;
      case Op::Sub: return x - y;
      case Op::Mul: return x * y;
      case Op::Div: return x / y;
      case Op::Min2: return x < y ? x : y;
      case Op::LeMask: return x <= y ? 1.0 : 0.0;
      default: return 0.0;
    }
  };
  if (a.same_shape(out) && b.same_shape(out)) {
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = apply(a.data[i], b.data[i]);
    return;
  }
  if (a_scalar || b_scalar) {
    if (a_scalar && b_scalar) {
      out.data[0] = apply(a.data[0], b.data[0]);
    } else if (a_scalar) {
      const double x = a.data[0];
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = apply(x, b.data[i]);
    } else {
      const double y = b.data[0];
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = apply(a.data[i], y);
    }
    return;
  }
  for (std::size_t i = 0; i < R; ++i) {
    const std::size_t ia = (a.rows == 1 ? 0 : i);
    const std::size_t ib = (b.rows == 1 ? 0 : i);
    for (std::size_t j = 0; j < C; ++j) {
      const std::size_t ja = (a.cols == 1 ? 0 : j);
      const std::size_t jb = (b.cols == 1 ? 0 : j);
      out.at(i, j) = apply(a.at(ia, ja), b.at(ib, jb));
    }
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline void EvalContext::compute(int id) {
  const Node& n = graph_->at(id);
  auto u = static_cast<std::size_t>(id);
  auto in = [this](int i) -> const Tensor& {
    return values_[static_cast<std::size_t>(i)];
  };
  Tensor out;
  switch (n.op) {
    case Op::Leaf:
      throw GraphError("unbound leaf '" + n.name + "'", id);
    case Op::ConstFill:
      out = acquire(n.rows, n.cols);
      std::fill(out.data.begin(), out.data.end(), n.k);
      break;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Min2:
    case Op::LeMask:
      out = acquire(n.rows, n.cols);
      detail::elementwise_binary(n.op, in(n.in[0]), in(n.in[1]), out);
      break;
    case Op::Neg:
    case Op::Scale:
    case Op::AddC:
    case Op::Sin:
    case Op::Cos:
    case Op::Exp:
    case Op::Sigmoid:
    case Op::Power:
    case Op::Relu:
    case Op::Abs:
    case Op::Sign:
    case Op::Step:
    case Op::GtMaskC:
    case Op::MaxC:
    case Op::StopGrad: {
      const Tensor& a = in(n.in[0]);
      out = acquire(n.rows, n.cols);
      const double k = n.k;
      for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double x = a.data[i];
        double v = 0;
        switch (n.op) {
          case Op::Neg: v = -x; break;
          case Op::Scale: v = x * k; break;
          case Op::AddC: v = x + k; break;
          case Op::Sin: v = std::sin(x); break;
          case Op::Cos: v = std::cos(x); break;
          case Op::Exp: v = std::exp(x); break;
          case Op::Sigmoid: v = detail::stable_sigmoid(x); break;
          case Op::Power: v = std::pow(x, k); break;
          case Op::Relu: v = x > 0 ? x : 0.0; break;
          case Op::Abs: v = std::abs(x); break;
          case Op::Sign: v = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); break;
          case Op::Step: v = x > 0 ? 1.0 : 0.0; break;
          case Op::GtMaskC: v = x > k ? 1.0 : 0.0; break;
          case Op::MaxC: v = x > k ? x : k; break;
          case Op::StopGrad: v = x; break;
          default: break;
        }
        out.data[i] = v;
      }
      break;
    }
    case Op::MatMul: {
      const Tensor& a = in(n.in[0]);
      const Tensor& b = in(n.in[1]);
      out = acquire(n.rows, n.cols);
      const std::size_t kdim = n.a0 ? a.rows : a.cols;
      cblas_dgemm(CblasRowMajor, n.a0 ? CblasTrans : CblasNoTrans,
                  n.a1 ? CblasTrans : CblasNoTrans, static_cast<int>(n.rows),
                  static_cast<int>(n.cols), static_cast<int>(kdim), 1.0,
                  a.data.data(), static_cast<int>(a.cols), b.data.data(),
                  static_cast<int>(b.cols), 0.0, out.data.data(),
                  static_cast<int>(n.cols));
      break;
    }
    case Op::Affine: {
      const Tensor& x = in(n.in[0]);
      const Tensor& w = in(n.in[1]);
      const Tensor& b = in(n.in[2]);
      out = acquire(n.rows, n.cols);
      for (std::size_t i = 0; i < n.rows; ++i)
        std::copy(b.data.begin(), b.data.end(), out.data.begin() + i * n.cols);
      cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans,
                  static_cast<int>(n.rows), static_cast<int>(n.cols),
                  static_cast<int>(x.cols), 1.0, x.data.data(),
                  static_cast<int>(x.cols), w.data.data(),
                  static_cast<int>(w.cols), 1.0, out.data.data(),
                  static_cast<int>(n.cols));
      break;
    }
    case Op::RowSum: {
      const Tensor& a = in(n.in[0]);
      out = acquire(n.rows, 1);
      for (std::size_t i = 0; i < a.rows; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < a.cols; ++j) s += a.at(i, j);
        out.data[i] = s;
      }
      break;
    }
    case Op::ColSum: {
      const Tensor& a = in(n.in[0]);
      out = acquire(1, n.cols);
      std::fill(out.data.begin(), out.data.end(), 0.0);
      for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out.data[j] += a.at(i, j);
      break;
    }
    case Op::SumAll:
    case Op::MeanAll: {
      const Tensor& a = in(n.in[0]);
      double s = 0;
      for (double v : a.data) s += v;
      out = acquire(1, 1);
      out.data[0] = n.op == Op::MeanAll ? s / static_cast<double>(a.size()) : s;
      break;
    }
    case Op::BroadcastCol: {
      const Tensor& a = in(n.in[0]);
      out = acquire(n.rows, n.cols);
      for (std::size_t i = 0; i < n.rows; ++i)
        std::fill(out.data.begin() + i * n.cols,
                  out.data.begin() + (i + 1) * n.cols, a.data[i]);
      break;
    }
    case Op::BroadcastRow: {
      const Tensor& a = in(n.in[0]);
      out = acquire(n.rows, n.cols);
      for (std::size_t i = 0; i < n.rows; ++i)
        std::copy(a.data.begin(), a.data.end(), out.data.begin() + i * n.cols);
      break;
    }
    case Op::ConcatCols: {
      out = acquire(n.rows, n.cols);
      std::size_t off = 0;
      for (int src : n.in) {
        const Tensor& a = in(src);
        for (std::size_t i = 0; i < n.rows; ++i)
          std::copy(a.data.begin() + i * a.cols, a.data.begin() + (i + 1) * a.cols,
                    out.data.begin() + i * n.cols + off);
        off += a.cols;
      }
      break;
    }
    case Op::SliceCols: {
      const Tensor& a = in(n.in[0]);
      out = acquire(n.rows, n.cols);
      for (std::size_t i = 0; i < n.rows; ++i)
        std::copy(a.data.begin() + i * a.cols + n.a0,
                  a.data.begin() + i * a.cols + n.a0 + n.a1,
                  out.data.begin() + i * n.cols);
      break;
    }
  }
  values_[u] = std::move(out);
  state_[u] = 2;
  if (pooling_) {
    for (int src : n.in) {
      auto s = static_cast<std::size_t>(src);
      if (--uses_left_[s] == 0 && !persistent_[s] &&
          graph_->at(src).op != Op::Leaf && state_[s] == 2) {
        release(src);
        state_[s] = 0;
      }
    }
  }
}

}  // namespace pullmesh

#endif
