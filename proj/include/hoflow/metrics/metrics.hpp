#pragma once

#include <hoflow/data/objects.hpp>
#include <hoflow/geom/features.hpp>
#include <hoflow/geom/motion.hpp>
#include <iomanip>
#include <json.hpp>
#include <optional>
#include <sstream>

namespace hoflow {

struct Capsule {
  Vec3 a, b;  // segment endpoints, world frame
  double r;   // meters

  double segment_distance(const Vec3& p) const {
    Vec3 ab = b - a;
    double len2 = ab.squaredNorm();
    double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
  }
  bool contains(const Vec3& p) const { return segment_distance(p) < r; }
  double area_m2() const { return 2 * M_PI * r * (b - a).norm() + 4 * M_PI * r * r; }
};

// One capsule per joint: chain joints connect to their child, distal joints
// to their fingertip, and the wrist capsule spans the palm.
inline std::array<double, kJointCount> default_bone_radii() {
  std::array<double, kJointCount> r;
  r.fill(0.008);
  r[0] = 0.016;                       // palm
  r[3] = r[6] = r[9] = r[12] = 0.007;  // distal finger segments
  r[15] = 0.009;                       // thumb distal
  return r;
}

inline std::array<Capsule, kJointCount> hand_capsules(
    const KinematicTree& tree, const FkResult& fk,
    const std::array<double, kJointCount>& radii = default_bone_radii()) {
  std::array<int, kJointCount> child;
  child.fill(-1);
  for (int i = 1; i < kJointCount; ++i) child[tree.parents[i]] = i;
  std::array<Capsule, kJointCount> caps;
  for (int i = 0; i < kJointCount; ++i) {
    caps[i].a = fk.positions[i];
    caps[i].r = radii[i];
    if (i == 0) {
      caps[i].b = fk.positions[4];  // wrist to middle proximal
      continue;
    }
    int tip = -1;
    for (int k = 0; k < kTipCount; ++k)
      if (tree.tip_parents[k] == i) tip = k;
    caps[i].b = tip >= 0 ? fk.positions[kJointCount + tip] : fk.positions[child[i]];
  }
  return caps;
}

struct HandMesh {
  std::array<Capsule, kJointCount> capsules;
  PointMatrix vertices;          // world, on capsule surfaces
  std::vector<int> vertex_bone;  // owning capsule per vertex
  double area_cm2 = 0;
};

// Area-proportional capsule surface sampling with a fixed seed, so the mesh
// is a deterministic function of the pose.
inline HandMesh build_hand_mesh(const KinematicTree& tree, const FkResult& fk,
                                int min_vertices = 600,
                                const std::array<double, kJointCount>& radii =
                                    default_bone_radii()) {
  HandMesh hm;
  hm.capsules = hand_capsules(tree, fk, radii);
  double total = 0;
  for (const auto& c : hm.capsules) total += c.area_m2();
  hm.area_cm2 = total * 1e4;
  std::vector<Vec3> verts;
  Rng rng(0x9d5cull);
  for (int i = 0; i < kJointCount; ++i) {
    const Capsule& c = hm.capsules[i];
    int n = std::max(8, static_cast<int>(std::ceil(min_vertices * c.area_m2() / total)));
    double len = (c.b - c.a).norm();
    double cyl_area = 2 * M_PI * c.r * len;
    Vec3 axis = len > 0 ? Vec3((c.b - c.a) / len) : Vec3(0, 0, 1);
    Vec3 u = axis.unitOrthogonal(), v = axis.cross(u);
    for (int k = 0; k < n; ++k) {
      double pick = rng.uniform() * c.area_m2();
      double th = 2 * M_PI * rng.uniform();
      Vec3 p;
      if (pick < cyl_area) {
        double t = rng.uniform() * len;
        p = c.a + t * axis + c.r * (std::cos(th) * u + std::sin(th) * v);
      } else {
        double z = rng.uniform();  // hemisphere height fraction
        double rho = std::sqrt(std::max(0.0, 1 - z * z));
        Vec3 local = rho * (std::cos(th) * u + std::sin(th) * v);
        p = (pick < cyl_area + 2 * M_PI * c.r * c.r)
                ? Vec3(c.b + c.r * (local + z * axis))
                : Vec3(c.a + c.r * (local - z * axis));
      }
      verts.push_back(p);
      hm.vertex_bone.push_back(i);
    }
  }
  hm.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t k = 0; k < verts.size(); ++k) hm.vertices.row(static_cast<int>(k)) = verts[k].transpose();
  return hm;
}

// Percent of hand surface vertices within the contact threshold of the
// object surface (signed distance below 0.45 mm).
inline double contact_ratio(const HandMesh& hand, const Sdf& sdf, const Mat4& obj_T,
                            double threshold_m = 0.00045) {
  if (hand.vertices.rows() == 0) throw std::invalid_argument("contact_ratio: no vertices");
  Mat4 inv = rigid_inverse(obj_T);
  Mat3 R = inv.block<3, 3>(0, 0);
  Vec3 t = inv.block<3, 1>(0, 3);
  int hits = 0;
  for (int i = 0; i < hand.vertices.rows(); ++i)
    if (sdf.distance(R * hand.vertices.row(i).transpose() + t) < threshold_m) ++hits;
  return 100.0 * hits / hand.vertices.rows();
}

struct FramePenetration {
  double iv_cm3 = 0;
  double id_cm = 0;
};

// Voxelizes the hand (capsule union) over its bounding box and sums voxels
// whose centers fall inside the object; depth is the deepest hand vertex.
inline FramePenetration interpenetration(const HandMesh& hand, const Sdf& sdf,
                                         const Mat4& obj_T, double voxel_m = 0.002) {
  double total_len = 0;
  for (const auto& c : hand.capsules) total_len += (c.b - c.a).norm() + c.r;
  if (total_len <= 0) throw std::invalid_argument("interpenetration: degenerate hand");
  Vec3 lo(1e9, 1e9, 1e9), hi(-1e9, -1e9, -1e9);
  for (const auto& c : hand.capsules) {
    lo = lo.cwiseMin(c.a.cwiseMin(c.b) - Vec3::Constant(c.r));
    hi = hi.cwiseMax(c.a.cwiseMax(c.b) + Vec3::Constant(c.r));
  }
  Mat4 inv = rigid_inverse(obj_T);
  Mat3 R = inv.block<3, 3>(0, 0);
  Vec3 t = inv.block<3, 1>(0, 3);
  FramePenetration out;
  Eigen::Vector3i n = ((hi - lo) / voxel_m).array().ceil().cast<int>();
  for (int ix = 0; ix < n.x(); ++ix)
    for (int iy = 0; iy < n.y(); ++iy)
      for (int iz = 0; iz < n.z(); ++iz) {
        Vec3 p = lo + voxel_m * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
        bool in_hand = false;
        for (const auto& c : hand.capsules)
          if (c.contains(p)) {
            in_hand = true;
            break;
          }
        if (in_hand && sdf.distance(R * p + t) < 0) out.iv_cm3 += 1;
      }
  out.iv_cm3 *= std::pow(voxel_m * 100, 3);
  for (int i = 0; i < hand.vertices.rows(); ++i) {
    double d = sdf.distance(R * hand.vertices.row(i).transpose() + t);
    out.id_cm = std::max(out.id_cm, -d * 100);
  }
  out.id_cm = std::max(out.id_cm, 0.0);
  return out;
}

// Interpenetration volume normalized by contact-weighted hand surface area.
// CR values are fractions here (not percent), matching the definition.
inline std::optional<double> ivu(double iv_r, double iv_l, double cr_r, double cr_l,
                                 double m_r, double m_l) {
  double denom = cr_r * m_r + cr_l * m_l;
  if (denom <= 0) return std::nullopt;
  return (iv_r + iv_l) / denom;
}

// Percent of frames where either hand has contact ratio strictly above 1%.
inline double phy(const std::vector<double>& cr_r, const std::vector<double>& cr_l) {
  if (cr_r.empty()) return 0;
  int hits = 0;
  for (size_t f = 0; f < cr_r.size(); ++f) {
    double l = f < cr_l.size() ? cr_l[f] : 0.0;
    if (cr_r[f] > 1.0 || l > 1.0) ++hits;
  }
  return 100.0 * hits / cr_r.size();
}

// Mean pairwise squared distance between flattened vertex trajectories of
// generations that share the same conditioning input.
inline double sample_diversity(const std::vector<Eigen::VectorXd>& samples) {
  const int n = static_cast<int>(samples.size());
  if (n < 2) throw std::invalid_argument("sample_diversity: need at least 2 samples");
  for (const auto& s : samples)
    if (s.size() != samples[0].size())
      throw std::invalid_argument("sample_diversity: mismatched sample shapes");
  double sum = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) sum += (samples[i] - samples[j]).squaredNorm();
  return 2.0 * sum / (static_cast<double>(n) * (n - 1));
}

struct ReconErrors {
  double e_j_mm = 0;   // mean joint position error
  double e_v_mm = 0;   // mean hand surface vertex error
  double e_o_mm = 0;   // mean object translation error
  double cd_o_cm2 = 0;  // chamfer distance of posed clouds
};

inline ReconErrors recon_errors(const KinematicTree& tree, const MotionSequence& pred,
                                const MotionSequence& gt, const PointMatrix& object_cloud) {
  if (pred.length() != gt.length())
    throw std::invalid_argument("recon_errors: frame count mismatch " +
                                std::to_string(pred.length()) + " vs " +
                                std::to_string(gt.length()));
  ReconErrors e;
  const int N = gt.length();
  for (int f = 0; f < N; ++f) {
    FkResult fp = forward_kinematics(tree, pred.frames[f].hand);
    FkResult fg = forward_kinematics(tree, gt.frames[f].hand);
    double ej = 0;
    for (int i = 0; i < kTotalJoints; ++i) ej += (fp.positions[i] - fg.positions[i]).norm();
    e.e_j_mm += ej / kTotalJoints;
    HandMesh mp = build_hand_mesh(tree, fp);
    HandMesh mg = build_hand_mesh(tree, fg);
    e.e_v_mm += (mp.vertices - mg.vertices).rowwise().norm().mean();
    e.e_o_mm += (pred.frames[f].obj_T.block<3, 1>(0, 3) - gt.frames[f].obj_T.block<3, 1>(0, 3)).norm();
    Mat3 Rp = pred.frames[f].obj_T.block<3, 3>(0, 0);
    Vec3 tp = pred.frames[f].obj_T.block<3, 1>(0, 3);
    Mat3 Rg = gt.frames[f].obj_T.block<3, 3>(0, 0);
    Vec3 tg = gt.frames[f].obj_T.block<3, 1>(0, 3);
    PointMatrix cp = (object_cloud * Rp.transpose()).rowwise() + tp.transpose();
    PointMatrix cg = (object_cloud * Rg.transpose()).rowwise() + tg.transpose();
    e.cd_o_cm2 += chamfer(cp, cg);
  }
  e.e_j_mm *= 1000.0 / N;
  e.e_v_mm *= 1000.0 / N;
  e.e_o_mm *= 1000.0 / N;
  e.cd_o_cm2 /= N;
  return e;
}

struct MetricReport {
  double cr_r = 0, cr_l = 0;      // percent, frame-averaged
  double iv_r = 0, iv_l = 0;      // cm^3, over penetrated frames per hand
  double id_r = 0, id_l = 0;      // cm, over penetrated frames per hand
  std::optional<double> ivu_val;
  int ivu_undefined_count = 0;
  double phy_pct = 0;
  std::optional<double> sd;
  std::optional<ReconErrors> recon;
  double voxel_m = 0.002;
  int hand_vertex_count = 0;
  int excluded_frames_r = 0, excluded_frames_l = 0;  // penetration-free
};

// Per-sequence evaluation for a (possibly mirrored-left) single-hand scene.
// Left-hand stats stay zero when the sequence is right-handed.
inline MetricReport evaluate_sequence(const KinematicTree& right_tree,
                                      const MotionSequence& seq, const Sdf& sdf,
                                      double voxel_m = 0.002) {
  MetricReport rep;
  rep.voxel_m = voxel_m;
  bool left = seq.handedness == "left";
  KinematicTree tree = left ? mirror_tree(right_tree) : right_tree;
  std::vector<double> crs;
  double cr_sum = 0, iv_sum = 0, id_sum = 0;
  int pen_frames = 0;
  for (const auto& fr : seq.frames) {
    FkResult fk = forward_kinematics(tree, fr.hand);
    HandMesh hm = build_hand_mesh(tree, fk);
    rep.hand_vertex_count = static_cast<int>(hm.vertices.rows());
    double cr = contact_ratio(hm, sdf, fr.obj_T);
    crs.push_back(cr);
    cr_sum += cr;
    FramePenetration pen = interpenetration(hm, sdf, fr.obj_T, voxel_m);
    if (pen.iv_cm3 > 0 || pen.id_cm > 0) {
      iv_sum += pen.iv_cm3;
      id_sum += pen.id_cm;
      ++pen_frames;
    }
  }
  const int N = seq.length();
  double cr_avg = N ? cr_sum / N : 0;
  double iv_avg = pen_frames ? iv_sum / pen_frames : 0;
  double id_avg = pen_frames ? id_sum / pen_frames : 0;
  int excluded = N - pen_frames;
  std::vector<double> zeros(crs.size(), 0.0);
  if (left) {
    rep.cr_l = cr_avg;
    rep.iv_l = iv_avg;
    rep.id_l = id_avg;
    rep.excluded_frames_l = excluded;
    rep.phy_pct = phy(zeros, crs);
  } else {
    rep.cr_r = cr_avg;
    rep.iv_r = iv_avg;
    rep.id_r = id_avg;
    rep.excluded_frames_r = excluded;
    rep.phy_pct = phy(crs, zeros);
  }
  FkResult fk0 = forward_kinematics(tree, seq.frames.empty() ? HandPose{} : seq.frames[0].hand);
  double area = build_hand_mesh(tree, fk0).area_cm2;
  rep.ivu_val = ivu(rep.iv_r, rep.iv_l, rep.cr_r / 100.0, rep.cr_l / 100.0,
                    left ? 0 : area, left ? area : 0);
  if (!rep.ivu_val) rep.ivu_undefined_count = 1;
  return rep;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["cr_r_pct"] = r.cr_r;
  j["cr_l_pct"] = r.cr_l;
  j["iv_r_cm3"] = r.iv_r;
  j["iv_l_cm3"] = r.iv_l;
  j["id_r_cm"] = r.id_r;
  j["id_l_cm"] = r.id_l;
  if (r.ivu_val) j["ivu"] = *r.ivu_val;
  j["ivu_undefined_count"] = r.ivu_undefined_count;
  j["phy_pct"] = r.phy_pct;
  if (r.sd) j["sd"] = *r.sd;
  if (r.recon) {
    j["e_j_mm"] = r.recon->e_j_mm;
    j["e_v_mm"] = r.recon->e_v_mm;
    j["e_o_mm"] = r.recon->e_o_mm;
    j["cd_o_cm2"] = r.recon->cd_o_cm2;
  }
  j["voxel_m"] = r.voxel_m;
  j["hand_vertex_count"] = r.hand_vertex_count;
  j["excluded_frames_r"] = r.excluded_frames_r;
  j["excluded_frames_l"] = r.excluded_frames_l;
  return j;
}

inline std::string report_table(const MetricReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& k, double v) {
    os << std::left << std::setw(12) << k << std::right << std::setw(12) << v << "\n";
  };
  row("CR_r %", r.cr_r);
  row("CR_l %", r.cr_l);
  row("IV_r cm3", r.iv_r);
  row("IV_l cm3", r.iv_l);
  row("ID_r cm", r.id_r);
  row("ID_l cm", r.id_l);
  if (r.ivu_val) row("IVU", *r.ivu_val);
  row("Phy %", r.phy_pct);
  if (r.sd) row("SD", *r.sd);
  if (r.recon) {
    row("E_j mm", r.recon->e_j_mm);
    row("E_v mm", r.recon->e_v_mm);
    row("E_o mm", r.recon->e_o_mm);
    row("CD_o cm2", r.recon->cd_o_cm2);
  }
  return os.str();
}

}  // namespace hoflow
