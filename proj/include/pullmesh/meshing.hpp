#ifndef PULLMESH_MESHING_HPP
#define PULLMESH_MESHING_HPP

// Dense field sampling on a corner lattice, marching-cubes extraction with
// welded vertices, mesh I/O, and area-weighted surface sampling.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pullmesh/mc_tables.hpp"
#include "pullmesh/msp.hpp"
#include "pullmesh/pointcloud.hpp"

namespace pullmesh {

struct GridBounds {
  Vec3 lo{-1, -1, -1};
  Vec3 hi{1, 1, 1};
};

struct ScalarGrid {
  std::size_t resolution = 0;  // corners per axis
  GridBounds bounds;
  std::vector<double> values;  // x fastest, then y, then z

  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return values[i + resolution * (j + resolution * k)];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[i + resolution * (j + resolution * k)];
  }
  Vec3 corner(std::size_t i, std::size_t j, std::size_t k) const {
    const double n = static_cast<double>(resolution - 1);
    return {bounds.lo.x + (bounds.hi.x - bounds.lo.x) * static_cast<double>(i) / n,
            bounds.lo.y + (bounds.hi.y - bounds.lo.y) * static_cast<double>(j) / n,
            bounds.lo.z + (bounds.hi.z - bounds.lo.z) * static_cast<double>(k) / n};
  }
};

// Evaluates the field at every lattice corner, in fixed-size chunks to bound
// peak memory. Throws on a non-finite value, reporting its location.
template <SignedField F>
ScalarGrid sample_grid(const F& field, std::size_t resolution, int level,
                       GridBounds bounds = {}, std::size_t chunk = 16384) {
  if (resolution < 2) throw std::invalid_argument("sample_grid: resolution < 2");
  if (!(bounds.lo.x < bounds.hi.x && bounds.lo.y < bounds.hi.y &&
        bounds.lo.z < bounds.hi.z))
    throw std::invalid_argument("sample_grid: degenerate bounds");
  ScalarGrid grid;
  grid.resolution = resolution;
  grid.bounds = bounds;
  const std::size_t total = resolution * resolution * resolution;
  grid.values.resize(total);

  std::size_t done = 0;
  while (done < total) {
    const std::size_t n = std::min(chunk, total - done);
    Tensor pts(n, 3);
    for (std::size_t q = 0; q < n; ++q) {
      const std::size_t lin = done + q;
      const std::size_t i = lin % resolution;
      const std::size_t j = (lin / resolution) % resolution;
      const std::size_t k = lin / (resolution * resolution);
      const Vec3 p = grid.corner(i, j, k);
      pts.at(q, 0) = p.x;
      pts.at(q, 1) = p.y;
      pts.at(q, 2) = p.z;
    }
    const Tensor vals = field.sdf(pts, level);
    for (std::size_t q = 0; q < n; ++q) {
      const double v = vals.data[q];
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "sample_grid: non-finite field value at (" << pts.at(q, 0) << ", "
            << pts.at(q, 1) << ", " << pts.at(q, 2) << ")";
        throw NumericAbort(msg.str());
      }
      grid.values[done + q] = v;
    }
    done += n;
  }
  return grid;
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> faces;

  Vec3 face_normal(std::size_t f) const {
    const auto& [a, b, c] = faces[f];
    return (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]);
  }
  double area() const {
    double s = 0;
    for (std::size_t f = 0; f < faces.size(); ++f) s += 0.5 * face_normal(f).norm();
    return s;
  }
};

// ---------------------------------------------------------------------------
// Marching cubes. Corner bit i is set when value < iso, so the emitted
// triangles face the decreasing side of the field. Vertices on shared cube
// edges are welded through an edge-key map; traversal order (x, then y, then
// z) makes vertex numbering deterministic.

inline TriangleMesh marching_cubes(const ScalarGrid& grid, double iso = 0.0) {
  const std::size_t R = grid.resolution;
  TriangleMesh mesh;
  // grid edge key: lower-corner linear index * 3 + axis
  std::unordered_map<std::uint64_t, std::size_t> edge_vertex;

  // cube corners in table order, as (di, dj, dk)
  static constexpr int corner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                       {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  // cube edges in table order, as (corner a, corner b)
  static constexpr int edge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0},
                                      {4, 5}, {5, 6}, {6, 7}, {7, 4},
                                      {0, 4}, {1, 5}, {2, 6}, {3, 7}};

  auto linear = [R](std::size_t i, std::size_t j, std::size_t k) {
    return i + R * (j + R * k);
  };

  for (std::size_t k = 0; k + 1 < R; ++k)
    for (std::size_t j = 0; j + 1 < R; ++j)
      for (std::size_t i = 0; i + 1 < R; ++i) {
        double v[8];
        std::size_t ci[8], cj[8], ck[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          ci[c] = i + static_cast<std::size_t>(corner[c][0]);
          cj[c] = j + static_cast<std::size_t>(corner[c][1]);
          ck[c] = k + static_cast<std::size_t>(corner[c][2]);
          v[c] = grid.at(ci[c], cj[c], ck[c]);
          if (v[c] < iso) cube |= 1 << c;
        }
        const std::uint16_t edges = mc::kEdgeTable[static_cast<std::size_t>(cube)];
        if (edges == 0) continue;

        std::size_t ev[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1u << e))) continue;
          const int a = edge[e][0], b = edge[e][1];
          // identify the grid edge by its lower corner and axis
          int axis = 0;
          std::size_t lo_lin;
          if (ci[a] != ci[b]) {
            axis = 0;
            lo_lin = linear(std::min(ci[a], ci[b]), cj[a], ck[a]);
          } else if (cj[a] != cj[b]) {
            axis = 1;
            lo_lin = linear(ci[a], std::min(cj[a], cj[b]), ck[a]);
          } else {
            axis = 2;
            lo_lin = linear(ci[a], cj[a], std::min(ck[a], ck[b]));
          }
          const std::uint64_t key = static_cast<std::uint64_t>(lo_lin) * 3 +
                                    static_cast<std::uint64_t>(axis);
          auto it = edge_vertex.find(key);
          if (it != edge_vertex.end()) {
            ev[e] = it->second;
            continue;
          }
          const Vec3 pa = grid.corner(ci[a], cj[a], ck[a]);
          const Vec3 pb = grid.corner(ci[b], cj[b], ck[b]);
          const double t = (iso - v[a]) / (v[b] - v[a]);
          const Vec3 p{pa.x + t * (pb.x - pa.x), pa.y + t * (pb.y - pa.y),
                       pa.z + t * (pb.z - pa.z)};
          ev[e] = mesh.vertices.size();
          mesh.vertices.push_back(p);
          edge_vertex.emplace(key, ev[e]);
        }

        const auto& tri = mc::kTriTable[static_cast<std::size_t>(cube)];
        for (int t = 0; tri[static_cast<std::size_t>(t)] != -1; t += 3) {
          const std::size_t a = ev[tri[static_cast<std::size_t>(t)]];
          const std::size_t b = ev[tri[static_cast<std::size_t>(t + 1)]];
          const std::size_t c = ev[tri[static_cast<std::size_t>(t + 2)]];
          if (a == b || b == c || a == c) continue;  // welded degenerate
          mesh.faces.push_back({a, b, c});
        }
      }
  return mesh;
}

inline TriangleMesh denormalize(const TriangleMesh& mesh,
                                const NormalizeTransform& transform) {
  TriangleMesh out = mesh;
  for (Vec3& v : out.vertices) v = transform.invert(v);
  return out;
}

// ---------------------------------------------------------------------------
// Surface sampling: cumulative face areas, then uniform barycentric draws.

inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n,
                                 std::uint64_t seed) {
  if (mesh.faces.empty()) throw std::invalid_argument("sample_surface: empty mesh");
  std::vector<double> cum(mesh.faces.size());
  double total = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += 0.5 * mesh.face_normal(f).norm();
    cum[f] = total;
  }
  if (total <= 0) throw std::invalid_argument("sample_surface: zero total area");

  Rng rng(split_seed(seed, "surface"));
  PointCloud out;
  out.points.reserve(n);
  out.normals.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double r = rng.uniform() * total;
    const std::size_t f = static_cast<std::size_t>(
        std::lower_bound(cum.begin(), cum.end(), r) - cum.begin());
    const auto& [ia, ib, ic] = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3 a = mesh.vertices[ia], b = mesh.vertices[ib], c = mesh.vertices[ic];
    out.points.push_back({a.x + u * (b.x - a.x) + v * (c.x - a.x),
                          a.y + u * (b.y - a.y) + v * (c.y - a.y),
                          a.z + u * (b.z - a.z) + v * (c.z - a.z)});
    const Vec3 fn = mesh.face_normal(std::min(f, mesh.faces.size() - 1));
    const double nn = fn.norm();
    out.normals.push_back(nn > 0 ? Vec3{fn.x / nn, fn.y / nn, fn.z / nn} : fn);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh I/O: OBJ (v/f, 1-based) and ascii PLY.

enum class MeshFormat { Obj, Ply };

inline MeshFormat guess_mesh_format(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "obj") return MeshFormat::Obj;
  if (ext == "ply") return MeshFormat::Ply;
  throw IoError("unrecognized mesh extension: " + path);
}

inline void save_mesh(const TriangleMesh& mesh, const std::string& path,
                      MeshFormat format) {
  std::ostringstream out;
  out.precision(17);
  if (format == MeshFormat::Obj) {
    for (const Vec3& v : mesh.vertices)
      out << "v " << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& [a, b, c] : mesh.faces)
      out << "f " << a + 1 << " " << b + 1 << " " << c + 1 << "\n";
  } else {
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "element face " << mesh.faces.size() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (const Vec3& v : mesh.vertices)
      out << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& [a, b, c] : mesh.faces)
      out << "3 " << a << " " << b << " " << c << "\n";
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write mesh: " + path);
  f << out.str();
  if (!f) throw IoError("failed writing mesh: " + path);
}

inline void save_mesh(const TriangleMesh& mesh, const std::string& path) {
  save_mesh(mesh, path, guess_mesh_format(path));
}

namespace detail {

inline std::size_t parse_face_index(const std::string& token, std::size_t n_vertices,
                                    const std::string& path) {
  // OBJ faces may carry /texture/normal suffixes
  const long idx = std::stol(token.substr(0, token.find('/')));
  const long resolved = idx < 0 ? static_cast<long>(n_vertices) + idx : idx - 1;
  if (resolved < 0 || resolved >= static_cast<long>(n_vertices))
    throw IoError("face index out of range in " + path);
  return static_cast<std::size_t>(resolved);
}

}  // namespace detail

inline TriangleMesh load_mesh_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh: " + path);
  TriangleMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) throw IoError("bad vertex line in " + path);
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::size_t> idx;
      std::string tok;
      while (ls >> tok)
        idx.push_back(detail::parse_face_index(tok, mesh.vertices.size(), path));
      if (idx.size() < 3) throw IoError("bad face line in " + path);
      for (std::size_t t = 1; t + 1 < idx.size(); ++t)  // fan-triangulate
        mesh.faces.push_back({idx[0], idx[t], idx[t + 1]});
    }
  }
  return mesh;
}

inline TriangleMesh load_mesh_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mesh: " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw IoError("not a ply file: " + path);
  std::size_t n_vertices = 0, n_faces = 0;
  std::vector<std::string> vertex_props;
  std::string current_element;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (tag == "element") {
      std::string name;
      std::size_t count;
      ls >> name >> count;
      current_element = name;
      if (name == "vertex") n_vertices = count;
      else if (name == "face") n_faces = count;
    } else if (tag == "property" && current_element == "vertex") {
      std::string type, name;
      ls >> type >> name;
      if (type != "list") vertex_props.push_back(name);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!ascii) throw IoError("only ascii ply meshes are supported: " + path);
  int xi = -1, yi = -1, zi = -1;
  for (std::size_t i = 0; i < vertex_props.size(); ++i) {
    if (vertex_props[i] == "x") xi = static_cast<int>(i);
    if (vertex_props[i] == "y") yi = static_cast<int>(i);
    if (vertex_props[i] == "z") zi = static_cast<int>(i);
  }
  if (xi < 0 || yi < 0 || zi < 0) throw IoError("ply mesh missing x/y/z: " + path);

  TriangleMesh mesh;
  mesh.vertices.reserve(n_vertices);
  std::vector<double> row(vertex_props.size());
  for (std::size_t v = 0; v < n_vertices; ++v) {
    for (double& x : row)
      if (!(in >> x)) throw IoError("truncated ply vertices: " + path);
    mesh.vertices.push_back({row[static_cast<std::size_t>(xi)],
                             row[static_cast<std::size_t>(yi)],
                             row[static_cast<std::size_t>(zi)]});
  }
  for (std::size_t f = 0; f < n_faces; ++f) {
    std::size_t count;
    if (!(in >> count)) throw IoError("truncated ply faces: " + path);
    std::vector<std::size_t> idx(count);
    for (std::size_t& i : idx) {
      if (!(in >> i)) throw IoError("truncated ply faces: " + path);
      if (i >= mesh.vertices.size()) throw IoError("face index out of range in " + path);
    }
    if (count < 3) throw IoError("bad ply face in " + path);
    for (std::size_t t = 1; t + 1 < count; ++t)
      mesh.faces.push_back({idx[0], idx[t], idx[t + 1]});
  }
  return mesh;
}

inline TriangleMesh load_mesh(const std::string& path) {
  return guess_mesh_format(path) == MeshFormat::Obj ? load_mesh_obj(path)
                                                    : load_mesh_ply(path);
}

// ---------------------------------------------------------------------------
// Mesh diagnostics used by the topology checks

struct MeshTopology {
  std::size_t vertices = 0, edges = 0, faces = 0;
  long euler = 0;  // V - E + F
  bool watertight = false;   // every edge shared by exactly two faces
  bool oriented = false;     // shared edges traversed in opposite directions
};

inline MeshTopology mesh_topology(const TriangleMesh& mesh) {
  MeshTopology t;
  t.vertices = mesh.vertices.size();
  t.faces = mesh.faces.size();
  std::map<std::pair<std::size_t, std::size_t>, std::pair<int, int>> edges;
  for (const auto& f : mesh.faces)
    for (int e = 0; e < 3; ++e) {
      const std::size_t a = f[static_cast<std::size_t>(e)];
      const std::size_t b = f[static_cast<std::size_t>((e + 1) % 3)];
      auto& rec = edges[{std::min(a, b), std::max(a, b)}];
      ++rec.first;                      // total uses
      rec.second += a < b ? 1 : -1;     // orientation balance
    }
  t.edges = edges.size();
  t.euler = static_cast<long>(t.vertices) - static_cast<long>(t.edges) +
            static_cast<long>(t.faces);
  t.watertight = true;
  t.oriented = true;
  for (const auto& [key, rec] : edges) {
    if (rec.first != 2) t.watertight = false;
    if (rec.first == 2 && rec.second != 0) t.oriented = false;
  }
  return t;
}

}  // namespace pullmesh

#endif
