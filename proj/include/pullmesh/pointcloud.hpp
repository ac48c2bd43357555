#ifndef PULLMESH_POINTCLOUD_HPP
#define PULLMESH_POINTCLOUD_HPP

#include <algorithm>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "pullmesh/rng.hpp"
#include "pullmesh/tensor.hpp"

namespace pullmesh {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;  // empty or same length as points
  std::string source_path;

  std::size_t size() const { return points.size(); }
  bool has_normals() const { return !normals.empty(); }
};

struct NormalizeTransform {
  Vec3 translation;  // subtracted before scaling
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - translation) * scale; }
  Vec3 invert(const Vec3& p) const { return p / scale + translation; }
};

// ---------------------------------------------------------------------------
// Loading

enum class CloudFormat { Xyz, Ply, ObjVertices };

inline CloudFormat guess_format(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".ply") return CloudFormat::Ply;
  if (ext == ".obj") return CloudFormat::ObjVertices;
  return CloudFormat::Xyz;
}

namespace detail {

inline PointCloud load_xyz(std::istream& in, const std::string& path) {
  PointCloud pc;
  pc.source_path = path;
  std::string line;
  std::size_t lineno = 0;
  bool any_normals = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v[6];
    int got = 0;
    while (got < 6 && (ls >> v[got])) ++got;
    if (got != 3 && got != 6)
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed line");
    pc.points.push_back({v[0], v[1], v[2]});
    if (got == 6) {
      any_normals = true;
      pc.normals.push_back({v[3], v[4], v[5]});
    } else if (any_normals) {
      throw IoError(path + ":" + std::to_string(lineno) + ": inconsistent columns");
    }
  }
  if (!any_normals) pc.normals.clear();
  return pc;
}

inline PointCloud load_obj_vertices(std::istream& in, const std::string& path) {
  PointCloud pc;
  pc.source_path = path;
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 2 || line[0] != 'v' || !(line[1] == ' ' || line[1] == '\t'))
      continue;
    std::istringstream ls(line.substr(2));
    Vec3 p;
    if (!(ls >> p.x >> p.y >> p.z)) throw IoError(path + ": malformed v record");
    pc.points.push_back(p);
  }
  return pc;
}

struct PlyProperty {
  std::string type;
  std::string name;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw IoError("ply: unsupported property type " + t);
}

inline PointCloud load_ply(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw IoError(path + ": not a PLY file");
  bool binary = false;
  std::size_t vertex_count = 0;
  std::vector<PlyProperty> props;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string f;
      ls >> f;
      if (f == "binary_little_endian")
        binary = true;
      else if (f != "ascii")
        throw IoError(path + ": unsupported PLY format " + f);
    } else if (tok == "element") {
      std::string name;
      std::size_t count;
      ls >> name >> count;
      in_vertex = (name == "vertex");
      if (in_vertex) {
        if (vertex_count != 0) throw IoError(path + ": repeated vertex element");
        vertex_count = count;
      } else if (vertex_count == 0 && count > 0) {
        throw IoError(path + ": vertex must be the first element");
      }
    } else if (tok == "property" && in_vertex) {
      PlyProperty p;
      ls >> p.type >> p.name;
      if (p.type == "list") throw IoError(path + ": list property on vertex");
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (vertex_count == 0) throw IoError(path + ": zero points");

  int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
  for (std::size_t i = 0; i < props.size(); ++i) {
    const auto& nm = props[i].name;
    if (nm == "x") ix = static_cast<int>(i);
    else if (nm == "y") iy = static_cast<int>(i);
    else if (nm == "z") iz = static_cast<int>(i);
    else if (nm == "nx") inx = static_cast<int>(i);
    else if (nm == "ny") iny = static_cast<int>(i);
    else if (nm == "nz") inz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw IoError(path + ": vertex lacks x/y/z");
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud pc;
  pc.source_path = path;
  pc.points.reserve(vertex_count);
  std::vector<double> row(props.size());
  for (std::size_t v = 0; v < vertex_count; ++v) {
    if (binary) {
      for (std::size_t p = 0; p < props.size(); ++p) {
        const std::size_t sz = ply_type_size(props[p].type);
        unsigned char buf[8];
        if (!in.read(reinterpret_cast<char*>(buf), static_cast<long>(sz)))
          throw IoError(path + ": truncated vertex data");
        const auto& t = props[p].type;
        if (t == "float" || t == "float32") {
          float f;
          std::memcpy(&f, buf, 4);
          row[p] = f;
        } else if (t == "double" || t == "float64") {
          double d;
          std::memcpy(&d, buf, 8);
          row[p] = d;
        } else {
          long long val = 0;
          std::memcpy(&val, buf, sz);
          row[p] = static_cast<double>(val);
        }
      }
    } else {
      for (std::size_t p = 0; p < props.size(); ++p)
        if (!(in >> row[p])) throw IoError(path + ": truncated vertex data");
    }
    pc.points.push_back({row[ix], row[iy], row[iz]});
    if (with_normals) pc.normals.push_back({row[inx], row[iny], row[inz]});
  }
  return pc;
}

}  // namespace detail

inline PointCloud load_cloud(const std::string& path,
                             std::optional<CloudFormat> format = std::nullopt) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path);
  const CloudFormat f = format.value_or(guess_format(path));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  PointCloud pc;
  switch (f) {
    case CloudFormat::Xyz: pc = detail::load_xyz(in, path); break;
    case CloudFormat::Ply: pc = detail::load_ply(in, path); break;
    case CloudFormat::ObjVertices: pc = detail::load_obj_vertices(in, path); break;
  }
  if (pc.points.empty()) throw IoError(path + ": zero points");
  return pc;
}

inline void save_xyz(const PointCloud& pc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write: " + path);
  out.precision(17);
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    out << pc.points[i].x << " " << pc.points[i].y << " " << pc.points[i].z;
    if (pc.has_normals())
      out << " " << pc.normals[i].x << " " << pc.normals[i].y << " "
          << pc.normals[i].z;
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Normalization: centroid to origin, max absolute coordinate to 0.9 so the
// query Gaussians and the extraction box [-1,1]^3 enclose the shape.

inline constexpr double kNormalizeExtent = 0.9;

inline std::pair<PointCloud, NormalizeTransform> normalize(const PointCloud& pc) {
  if (pc.points.empty()) throw std::invalid_argument("normalize: empty cloud");
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : pc.points) centroid = centroid + p;
  centroid = centroid / static_cast<double>(pc.points.size());
  double extent = 0;
  for (const Vec3& p : pc.points) {
    const Vec3 d = p - centroid;
    extent = std::max({extent, std::abs(d.x), std::abs(d.y), std::abs(d.z)});
  }
  if (extent == 0) throw std::invalid_argument("normalize: degenerate cloud");
  NormalizeTransform t;
  t.translation = centroid;
  t.scale = kNormalizeExtent / extent;
  PointCloud out = pc;
  for (Vec3& p : out.points) p = t.apply(p);
  return {std::move(out), t};
}

// ---------------------------------------------------------------------------
// Exact nearest-neighbor index (KD-tree, axis-aligned median splits).
// Equidistant results are broken toward the lowest point index, and squared
// distances are accumulated exactly like the brute-force oracle so the two
// agree bitwise.

class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& points) : points_(points) {
    if (points_.empty()) throw std::invalid_argument("kdtree: empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    nodes_.reserve(points_.size());
    root_ = build(0, points_.size());
  }

  struct Result {
    std::size_t index;
    double sq_distance;
  };

  Result nearest(const Vec3& q) const {
    Result best{points_.size(), std::numeric_limits<double>::infinity()};
    search(root_, q, best);
    return best;
  }

  // k nearest, ordered by (squared distance, index); optionally skipping one
  // point (used to exclude a query that is itself a cloud member).
  std::vector<Result> knearest(const Vec3& q, std::size_t k,
                               std::size_t skip_index = SIZE_MAX) const {
    if (k == 0 || k > points_.size()) throw std::invalid_argument("kdtree: bad k");
    Heap heap;
    search_k(root_, q, k, skip_index, heap);
    std::vector<Result> out(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
      out[i] = {heap.top().second, heap.top().first};
      heap.pop();
    }
    return out;
  }

  const std::vector<Vec3>& points() const { return points_; }

 private:
  struct TreeNode {
    std::size_t point;  // original index
    int axis;
    int left = -1, right = -1;
  };
  using HeapEntry = std::pair<double, std::size_t>;  // (sq distance, index)
  using Heap = std::priority_queue<HeapEntry>;

  int build(std::size_t lo, std::size_t hi) {
    if (lo >= hi) return -1;
    Vec3 mn = points_[order_[lo]], mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      const Vec3& p = points_[order_[i]];
      mn = {std::min(mn.x, p.x), std::min(mn.y, p.y), std::min(mn.z, p.z)};
      mx = {std::max(mx.x, p.x), std::max(mx.y, p.y), std::max(mx.z, p.z)};
    }
    const Vec3 span = mx - mn;
    int axis = 0;
    if (span.y > span[axis]) axis = 1;
    if (span.z > span[axis]) axis = 2;
    const std::size_t mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + static_cast<long>(lo),
                     order_.begin() + static_cast<long>(mid),
                     order_.begin() + static_cast<long>(hi),
                     [&](std::size_t a, std::size_t b) {
                       const double va = points_[a][axis], vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    TreeNode n;
    n.point = order_[mid];
    n.axis = axis;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    nodes_[static_cast<std::size_t>(id)].left = build(lo, mid);
    nodes_[static_cast<std::size_t>(id)].right = build(mid + 1, hi);
    return id;
  }

  void consider(std::size_t idx, const Vec3& q, Result& best) const {
    const double d = sq_dist(q, points_[idx]);
    if (d < best.sq_distance || (d == best.sq_distance && idx < best.index))
      best = {idx, d};
  }

  void search(int node, const Vec3& q, Result& best) const {
    if (node < 0) return;
    const TreeNode& n = nodes_[static_cast<std::size_t>(node)];
    consider(n.point, q, best);
    const double delta = q[n.axis] - points_[n.point][n.axis];
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    search(near, q, best);
    if (delta * delta <= best.sq_distance) search(far, q, best);
  }

  void search_k(int node, const Vec3& q, std::size_t k, std::size_t skip,
                Heap& heap) const {
    if (node < 0) return;
    const TreeNode& n = nodes_[static_cast<std::size_t>(node)];
    if (n.point != skip) {
      const double d = sq_dist(q, points_[n.point]);
      if (heap.size() < k)
        heap.push({d, n.point});
      else if (d < heap.top().first ||
               (d == heap.top().first && n.point < heap.top().second)) {
        heap.pop();
        heap.push({d, n.point});
      }
    }
    const double delta = q[n.axis] - points_[n.point][n.axis];
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    search_k(near, q, k, skip, heap);
    if (heap.size() < k || delta * delta <= heap.top().first)
      search_k(far, q, k, skip, heap);
  }

  const std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<TreeNode> nodes_;
  int root_;
};

inline std::pair<Vec3, double> nearest(const KdTree& index, const Vec3& q) {
  const auto r = index.nearest(q);
  return {index.points()[r.index], std::sqrt(r.sq_distance)};
}

// ---------------------------------------------------------------------------
// Query sampling

// Per-point Gaussian spread: distance to the k-th nearest neighbor (self
// excluded).
inline std::vector<double> local_sigma(const KdTree& index, const PointCloud& pc,
                                       std::size_t k) {
  if (k >= pc.size()) throw std::invalid_argument("local_sigma: k >= N");
  std::vector<double> sigma(pc.size());
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto nn = index.knearest(pc.points[i], k, /*skip_index=*/i);
    sigma[i] = std::sqrt(nn.back().sq_distance);
  }
  return sigma;
}

struct QueryBatch {
  Tensor queries;                  // Kx3
  std::vector<std::size_t> seed_index;  // which cloud point spawned each query
  std::vector<double> sigma;       // per cloud point
};

// Standard-normal offsets used by sample_queries; exposed so tests can share
// the draw stream.
inline Tensor query_noise(std::size_t n_points, std::size_t per_point,
                          std::uint64_t seed) {
  Rng rng(split_seed(seed, "queries"));
  Tensor noise(n_points * per_point, 3);
  for (double& v : noise.data) v = rng.normal();
  return noise;
}

inline QueryBatch sample_queries(const PointCloud& pc, const KdTree& index,
                                 const Tensor& noise, std::size_t per_point,
                                 std::size_t sigma_k) {
  QueryBatch batch;
  batch.sigma = local_sigma(index, pc, sigma_k);
  const std::size_t K = pc.size() * per_point;
  if (noise.rows != K || noise.cols != 3)
    throw std::invalid_argument("sample_queries: noise shape mismatch");
  batch.queries = Tensor(K, 3);
  batch.seed_index.resize(K);
  std::size_t q = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const Vec3 p = pc.points[i];
    const double s = batch.sigma[i];
    for (std::size_t j = 0; j < per_point; ++j, ++q) {
      batch.queries.at(q, 0) = p.x + s * noise.at(q, 0);
      batch.queries.at(q, 1) = p.y + s * noise.at(q, 1);
      batch.queries.at(q, 2) = p.z + s * noise.at(q, 2);
      batch.seed_index[q] = i;
    }
  }
  return batch;
}

inline QueryBatch sample_queries(const PointCloud& pc, const KdTree& index,
                                 std::size_t per_point, std::size_t sigma_k,
                                 std::uint64_t seed) {
  return sample_queries(pc, index, query_noise(pc.size(), per_point, seed),
                        per_point, sigma_k);
}

// ---------------------------------------------------------------------------
// Noise injection (robustness experiments)

inline PointCloud add_noise(const PointCloud& pc, double sigma_noise,
                            std::uint64_t seed) {
  if (sigma_noise < 0) throw std::invalid_argument("add_noise: negative sigma");
  PointCloud out = pc;
  if (sigma_noise == 0) return out;
  Rng rng(split_seed(seed, "noise"));
  for (Vec3& p : out.points) {
    p.x += sigma_noise * rng.normal();
    p.y += sigma_noise * rng.normal();
    p.z += sigma_noise * rng.normal();
  }
  return out;
}

}  // namespace pullmesh

#endif
