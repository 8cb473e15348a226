#pragma once

#include <hoflow/core/rng.hpp>
#include <hoflow/geom/features.hpp>
#include <memory>
#include <string>
#include <vector>

namespace hoflow {

// Signed distance to an object surface in its canonical frame. Callers posing
// the object apply the inverse object pose to the query point first.
class Sdf {
 public:
  virtual ~Sdf() = default;
  virtual double distance(const Vec3& p) const = 0;
};

class SphereSdf : public Sdf {
 public:
  explicit SphereSdf(double radius) : r_(radius) {}
  double distance(const Vec3& p) const override { return p.norm() - r_; }

 private:
  double r_;
};

class BoxSdf : public Sdf {
 public:
  explicit BoxSdf(const Vec3& half_extents) : h_(half_extents) {}
  double distance(const Vec3& p) const override {
    Vec3 q = p.cwiseAbs() - h_;
    double outside = q.cwiseMax(0.0).norm();
    double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
  }

 private:
  Vec3 h_;
};

// Axis along z, centered at the origin.
class CylinderSdf : public Sdf {
 public:
  CylinderSdf(double radius, double half_height) : r_(radius), hh_(half_height) {}
  double distance(const Vec3& p) const override {
    double dr = std::hypot(p.x(), p.y()) - r_;
    double dz = std::abs(p.z()) - hh_;
    double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
    double inside = std::min(std::max(dr, dz), 0.0);
    return outside + inside;
  }

 private:
  double r_, hh_;
};

class PlaneSdf : public Sdf {
 public:
  PlaneSdf(const Vec3& normal, double offset) : n_(normal.normalized()), d_(offset) {}
  double distance(const Vec3& p) const override { return n_.dot(p) - d_; }

 private:
  Vec3 n_;
  double d_;
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
};

namespace detail {

inline double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                                      const Vec3& c) {
  // Ericson, Real-Time Collision Detection, closest point on triangle.
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return (p - a).norm();
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return (p - b).norm();
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return (p - (a + d1 / (d1 - d3) * ab)).norm();
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return (p - c).norm();
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return (p - (a + d2 / (d2 - d6) * ac)).norm();
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return (p - (b + w * (c - b))).norm();
  }
  double denom = 1.0 / (va + vb + vc);
  Vec3 closest = a + (vb * denom) * ab + (vc * denom) * ac;
  return (p - closest).norm();
}

inline bool ray_hits_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b,
                              const Vec3& c) {
  // Moller-Trumbore.
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 h = d.cross(e2);
  double det = e1.dot(h);
  if (std::abs(det) < 1e-14) return false;
  double inv = 1.0 / det;
  Vec3 s = o - a;
  double u = s.dot(h) * inv;
  if (u < 0 || u > 1) return false;
  Vec3 q = s.cross(e1);
  double v = d.dot(q) * inv;
  if (v < 0 || u + v > 1) return false;
  return e2.dot(q) * inv > 0;
}

}  // namespace detail

// Brute-force exact distance to a closed triangle mesh, signed by ray parity.
// The parity ray direction is fixed and slightly irrational to dodge edges.
class MeshSdf : public Sdf {
 public:
  explicit MeshSdf(TriMesh mesh) : mesh_(std::move(mesh)) {
    if (mesh_.triangles.empty()) throw std::invalid_argument("MeshSdf: empty mesh");
  }

  double distance(const Vec3& p) const override {
    double best = std::numeric_limits<double>::max();
    for (const auto& t : mesh_.triangles)
      best = std::min(best, detail::point_triangle_distance(p, mesh_.vertices[t[0]],
                                                            mesh_.vertices[t[1]],
                                                            mesh_.vertices[t[2]]));
    static const Vec3 dir = Vec3(0.57213, 0.33761, 0.74753).normalized();
    int hits = 0;
    for (const auto& t : mesh_.triangles)
      if (detail::ray_hits_triangle(p, dir, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                                    mesh_.vertices[t[2]]))
        ++hits;
    return (hits % 2 == 1) ? -best : best;
  }

  const TriMesh& mesh() const { return mesh_; }

 private:
  TriMesh mesh_;
};

enum class ShapeKind { kSphere, kBox, kCylinder };

inline std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kSphere: return "sphere";
    case ShapeKind::kBox: return "box";
    case ShapeKind::kCylinder: return "cylinder";
  }
  return "?";
}

// A procedurally built rigid object: analytic SDF, triangle mesh, and a
// surface point cloud, all in the canonical frame and inside a 0.1 m
// bounding sphere.
struct ObjectSpec {
  std::string id;
  ShapeKind kind;
  Vec3 params;  // sphere: (r,_,_); box: half extents; cylinder: (r, hh, _)
  std::shared_ptr<Sdf> sdf;
  TriMesh mesh;
  PointMatrix cloud;  // kCloudSize x 3, on the surface
};

namespace detail {

inline TriMesh sphere_mesh(double r, int stacks = 24, int slices = 32) {
  TriMesh m;
  for (int i = 0; i <= stacks; ++i) {
    double phi = M_PI * i / stacks;
    for (int j = 0; j < slices; ++j) {
      double th = 2 * M_PI * j / slices;
      m.vertices.emplace_back(r * std::sin(phi) * std::cos(th),
                              r * std::sin(phi) * std::sin(th), r * std::cos(phi));
    }
  }
  auto idx = [&](int i, int j) { return i * slices + (j % slices); };
  for (int i = 0; i < stacks; ++i)
    for (int j = 0; j < slices; ++j) {
      m.triangles.push_back({idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)});
      m.triangles.push_back({idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)});
    }
  return m;
}

inline TriMesh box_mesh(const Vec3& h) {
  TriMesh m;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        m.vertices.emplace_back(sx * h.x(), sy * h.y(), sz * h.z());
  // vertex index = sx*4 + sy*2 + sz with s in {0,1}
  const int f[6][4] = {{0, 1, 3, 2}, {4, 6, 7, 5}, {0, 4, 5, 1},
                       {2, 3, 7, 6}, {0, 2, 6, 4}, {1, 5, 7, 3}};
  for (const auto& q : f) {
    m.triangles.push_back({q[0], q[1], q[2]});
    m.triangles.push_back({q[0], q[2], q[3]});
  }
  return m;
}

inline TriMesh cylinder_mesh(double r, double hh, int slices = 48) {
  TriMesh m;
  for (int iz : {-1, 1})
    for (int j = 0; j < slices; ++j) {
      double th = 2 * M_PI * j / slices;
      m.vertices.emplace_back(r * std::cos(th), r * std::sin(th), iz * hh);
    }
  int top = slices, bottom = 0;
  m.vertices.emplace_back(0, 0, -hh);  // 2*slices
  m.vertices.emplace_back(0, 0, hh);   // 2*slices+1
  for (int j = 0; j < slices; ++j) {
    int j1 = (j + 1) % slices;
    m.triangles.push_back({bottom + j, top + j, top + j1});
    m.triangles.push_back({bottom + j, top + j1, bottom + j1});
    m.triangles.push_back({2 * slices, bottom + j1, bottom + j});
    m.triangles.push_back({2 * slices + 1, top + j, top + j1});
  }
  return m;
}

inline PointMatrix sample_surface(const TriMesh& mesh, int count, Rng& rng) {
  std::vector<double> cum;
  double total = 0;
  for (const auto& t : mesh.triangles) {
    Vec3 a = mesh.vertices[t[0]], b = mesh.vertices[t[1]], c = mesh.vertices[t[2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cum.push_back(total);
  }
  PointMatrix out(count, 3);
  for (int i = 0; i < count; ++i) {
    double u = rng.uniform() * total;
    size_t k = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (k >= mesh.triangles.size()) k = mesh.triangles.size() - 1;
    const auto& t = mesh.triangles[k];
    double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    Vec3 p = (1 - r1) * mesh.vertices[t[0]] + r1 * (1 - r2) * mesh.vertices[t[1]] +
             r1 * r2 * mesh.vertices[t[2]];
    out.row(i) = p.transpose();
  }
  return out;
}

// Exact surface sample for the analytic shapes (mesh facets are chords, so
// mesh sampling alone would sit slightly inside the true surface).
inline Vec3 project_to_surface(const Sdf& sdf, Vec3 p) {
  for (int it = 0; it < 8; ++it) {
    double d = sdf.distance(p);
    if (std::abs(d) < 1e-12) break;
    double eps = 1e-6;
    Vec3 g(sdf.distance(p + Vec3(eps, 0, 0)) - sdf.distance(p - Vec3(eps, 0, 0)),
           sdf.distance(p + Vec3(0, eps, 0)) - sdf.distance(p - Vec3(0, eps, 0)),
           sdf.distance(p + Vec3(0, 0, eps)) - sdf.distance(p - Vec3(0, 0, eps)));
    g /= 2 * eps;
    double n2 = g.squaredNorm();
    if (n2 < 1e-12) break;
    p -= d * g / n2;
  }
  return p;
}

}  // namespace detail

inline ObjectSpec make_object(ShapeKind kind, const Vec3& params, uint64_t seed,
                              const std::string& id) {
  ObjectSpec o;
  o.id = id;
  o.kind = kind;
  o.params = params;
  switch (kind) {
    case ShapeKind::kSphere:
      if (params.x() > 0.1) throw std::invalid_argument("make_object: sphere too large");
      o.sdf = std::make_shared<SphereSdf>(params.x());
      o.mesh = detail::sphere_mesh(params.x());
      break;
    case ShapeKind::kBox:
      if (params.norm() > 0.1) throw std::invalid_argument("make_object: box too large");
      o.sdf = std::make_shared<BoxSdf>(params);
      o.mesh = detail::box_mesh(params);
      break;
    case ShapeKind::kCylinder:
      if (std::hypot(params.x(), params.y()) > 0.1)
        throw std::invalid_argument("make_object: cylinder too large");
      o.sdf = std::make_shared<CylinderSdf>(params.x(), params.y());
      o.mesh = detail::cylinder_mesh(params.x(), params.y());
      break;
  }
  Rng rng(seed);
  o.cloud = detail::sample_surface(o.mesh, kCloudSize, rng);
  for (int i = 0; i < o.cloud.rows(); ++i) {
    Vec3 p = detail::project_to_surface(*o.sdf, o.cloud.row(i).transpose());
    o.cloud.row(i) = p.transpose();
  }
  return o;
}

// Signed distance of a world point to a posed object.
inline double posed_distance(const Sdf& sdf, const Mat4& obj_T, const Vec3& world_p) {
  Mat4 inv = rigid_inverse(obj_T);
  return sdf.distance(inv.block<3, 3>(0, 0) * world_p + inv.block<3, 1>(0, 3));
}

}  // namespace hoflow
