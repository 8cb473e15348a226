#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoflow {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Axis-angle to rotation matrix. Near zero angle the normalized axis is
// ill-defined, so the series sin(t)/t = 1 - t^2/6 and (1-cos(t))/t^2 = 1/2 -
// t^2/24 is used directly on the unnormalized vector.
inline Mat3 rodrigues(const Vec3& w) {
  double t = w.norm();
  Mat3 K;
  K << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  double a, b;
  if (t < 1e-8) {
    double t2 = t * t;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
  } else {
    a = std::sin(t) / t;
    b = (1.0 - std::cos(t)) / (t * t);
  }
  return Mat3::Identity() + a * K + b * (K * K);
}

// Wraps the rotation angle into [0, 2*pi), keeping the axis direction.
inline Vec3 canonicalize_axis_angle(const Vec3& w) {
  double t = w.norm();
  if (t < 1e-12) return Vec3::Zero();
  double wrapped = std::fmod(t, 2.0 * M_PI);
  if (wrapped < 0) wrapped += 2.0 * M_PI;
  return w * (wrapped / t);
}

struct Rot6d {
  std::array<double, 6> v;  // first two columns of R, column-major per column
};

inline Rot6d rot6d_encode(const Mat3& R) {
  return Rot6d{{R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)}};
}

// Gram-Schmidt decode. Rejects (near-)parallel input columns; the condition
// number reported is |a1||a2| / |a1 x a2|, infinite when exactly parallel.
inline Mat3 rot6d_decode(const Rot6d& r) {
  Vec3 a1(r.v[0], r.v[1], r.v[2]);
  Vec3 a2(r.v[3], r.v[4], r.v[5]);
  double cross = a1.cross(a2).norm();
  double denom = a1.norm() * a2.norm();
  if (denom < 1e-12 || cross / denom < 1e-6) {
    double cond = cross > 0 ? denom / cross : std::numeric_limits<double>::infinity();
    throw std::invalid_argument(
        "rot6d_decode: input columns are near-parallel, condition number " +
        std::to_string(cond));
  }
  Vec3 b1 = a1.normalized();
  Vec3 b2 = (a2 - a2.dot(b1) * b1).normalized();
  Vec3 b3 = b1.cross(b2);
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b3;
  return R;
}

constexpr int kJointCount = 16;
constexpr int kTipCount = 5;
constexpr int kTotalJoints = kJointCount + kTipCount;  // 21 with fingertips

struct KinematicTree {
  std::array<int, kJointCount> parents;          // -1 for the root
  std::array<Vec3, kJointCount> offsets;         // meters, relative to parent
  std::array<int, kTipCount> tip_parents;        // distal joint per finger
  std::array<Vec3, kTipCount> tip_offsets;

  void validate() const {
    if (parents[0] != -1)
      throw std::invalid_argument("KinematicTree: joint 0 must be the root");
    for (int i = 1; i < kJointCount; ++i)
      if (parents[i] < 0 || parents[i] >= i)
        throw std::invalid_argument("KinematicTree: parent of joint " +
                                    std::to_string(i) + " must precede it");
    for (int i = 0; i < kTipCount; ++i)
      if (tip_parents[i] < 0 || tip_parents[i] >= kJointCount)
        throw std::invalid_argument("KinematicTree: bad tip parent " +
                                    std::to_string(tip_parents[i]));
  }

  // Ancestors of joint i, root first, excluding i.
  std::vector<int> ancestors(int i) const {
    std::vector<int> a;
    for (int j = parents[i]; j >= 0; j = parents[j]) a.push_back(j);
    std::reverse(a.begin(), a.end());
    return a;
  }
};

// Right-hand template in MANO joint order: wrist, then index, middle, pinky,
// ring (3 joints each, proximal to distal), thumb last. Offsets are synthetic
// plausible adult-hand proportions in meters, +x distal, +y toward thumb.
inline KinematicTree builtin_hand_tree() {
  KinematicTree t;
  t.parents = {-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14};
  t.offsets = {
      Vec3(0.000, 0.000, 0.000),   // 0 wrist
      Vec3(0.095, 0.024, 0.000),   // 1 index proximal
      Vec3(0.038, 0.000, 0.000),   // 2 index middle
      Vec3(0.024, 0.000, 0.000),   // 3 index distal
      Vec3(0.096, 0.000, 0.000),   // 4 middle proximal
      Vec3(0.042, 0.000, 0.000),   // 5 middle middle
      Vec3(0.026, 0.000, 0.000),   // 6 middle distal
      Vec3(0.086, -0.042, 0.000),  // 7 pinky proximal
      Vec3(0.030, 0.000, 0.000),   // 8 pinky middle
      Vec3(0.019, 0.000, 0.000),   // 9 pinky distal
      Vec3(0.092, -0.022, 0.000),  // 10 ring proximal
      Vec3(0.039, 0.000, 0.000),   // 11 ring middle
      Vec3(0.024, 0.000, 0.000),   // 12 ring distal
      Vec3(0.025, 0.035, 0.004),   // 13 thumb proximal
      Vec3(0.038, 0.017, 0.000),   // 14 thumb middle
      Vec3(0.030, 0.008, 0.000),   // 15 thumb distal
  };
  t.tip_parents = {3, 6, 9, 12, 15};  // index, middle, pinky, ring, thumb
  t.tip_offsets = {Vec3(0.022, 0, 0), Vec3(0.024, 0, 0), Vec3(0.018, 0, 0),
                   Vec3(0.022, 0, 0), Vec3(0.027, 0.004, 0)};
  t.validate();
  return t;
}

// Left-hand template: the right template reflected across x=0. Used together
// with the axis-angle conjugation in mirror_hand so mirrored poses produce
// mirrored joint positions.
inline KinematicTree mirror_tree(const KinematicTree& t) {
  KinematicTree m = t;
  for (auto& o : m.offsets) o.x() = -o.x();
  for (auto& o : m.tip_offsets) o.x() = -o.x();
  return m;
}

inline KinematicTree load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_tree: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  KinematicTree t;
  auto parents = j.at("parents");
  auto offsets = j.at("offsets");
  auto tips = j.at("tips");
  if (parents.size() != kJointCount || offsets.size() != kJointCount ||
      tips.size() != kTipCount)
    throw std::runtime_error("load_tree: wrong joint counts in " + path);
  for (int i = 0; i < kJointCount; ++i) {
    t.parents[i] = parents[i].get<int>();
    for (int k = 0; k < 3; ++k) t.offsets[i][k] = offsets[i][k].get<double>();
  }
  for (int i = 0; i < kTipCount; ++i) {
    t.tip_parents[i] = tips[i][0].get<int>();
    for (int k = 0; k < 3; ++k) t.tip_offsets[i][k] = tips[i][1][k].get<double>();
  }
  t.validate();
  return t;
}

inline void save_tree(const KinematicTree& t, const std::string& path) {
  nlohmann::json j;
  for (int i = 0; i < kJointCount; ++i) {
    j["parents"].push_back(t.parents[i]);
    j["offsets"].push_back({t.offsets[i].x(), t.offsets[i].y(), t.offsets[i].z()});
  }
  for (int i = 0; i < kTipCount; ++i)
    j["tips"].push_back({t.tip_parents[i],
                         {t.tip_offsets[i].x(), t.tip_offsets[i].y(), t.tip_offsets[i].z()}});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_tree: cannot open " + path);
  out << j.dump(2) << "\n";
}

struct HandPose {
  std::array<Vec3, kJointCount> theta;  // axis-angle per joint
  Vec3 trans = Vec3::Zero();            // root translation, meters
};

struct FkResult {
  std::array<Mat4, kJointCount> transforms;     // global joint frames
  std::array<Vec3, kTotalJoints> positions;     // 16 joints then 5 fingertips
};

// Global transform of joint i is the chain over its ancestors and itself of
// [R(theta_j) | offset_j], with the root translation applied last.
inline FkResult forward_kinematics(const KinematicTree& tree, const HandPose& pose) {
  tree.validate();
  FkResult out;
  for (int i = 0; i < kJointCount; ++i) {
    Mat4 local = Mat4::Identity();
    local.block<3, 3>(0, 0) = rodrigues(pose.theta[i]);
    local.block<3, 1>(0, 3) = tree.offsets[i];
    if (tree.parents[i] < 0)
      out.transforms[i] = local;
    else
      out.transforms[i] = out.transforms[tree.parents[i]] * local;
  }
  for (int i = 0; i < kJointCount; ++i) {
    out.transforms[i].block<3, 1>(0, 3) += pose.trans;
    out.positions[i] = out.transforms[i].block<3, 1>(0, 3);
  }
  for (int i = 0; i < kTipCount; ++i) {
    const Mat4& T = out.transforms[tree.tip_parents[i]];
    out.positions[kJointCount + i] =
        T.block<3, 3>(0, 0) * tree.tip_offsets[i] + T.block<3, 1>(0, 3);
  }
  return out;
}

inline void check_rigid(const Mat4& T, const char* where) {
  Mat3 R = T.block<3, 3>(0, 0);
  if ((R * R.transpose() - Mat3::Identity()).norm() > 1e-5 ||
      std::abs(R.determinant() - 1.0) > 1e-5 ||
      (T.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() > 1e-9)
    throw std::invalid_argument(std::string(where) + ": pose is not a rigid transform");
}

// Closed-form rigid inverse; throws if the rotation block is not orthonormal.
inline Mat4 rigid_inverse(const Mat4& T) {
  Mat3 R = T.block<3, 3>(0, 0);
  if ((R * R.transpose() - Mat3::Identity()).norm() > 1e-5)
    throw std::invalid_argument("rigid_inverse: rotation block is not orthonormal");
  Mat4 inv = Mat4::Identity();
  inv.block<3, 3>(0, 0) = R.transpose();
  inv.block<3, 1>(0, 3) = -R.transpose() * T.block<3, 1>(0, 3);
  return inv;
}

// Maps each world point into every joint frame and concatenates the results:
// P world points and 16 frames give a P x 48 row-major matrix.
inline Eigen::MatrixXd to_joint_frames(const Eigen::MatrixXd& world_points,
                                       const std::array<Mat4, kJointCount>& transforms) {
  if (world_points.cols() != 3)
    throw std::invalid_argument("to_joint_frames: points must be Px3");
  Eigen::MatrixXd out(world_points.rows(), 3 * kJointCount);
  for (int i = 0; i < kJointCount; ++i) {
    Mat4 inv = rigid_inverse(transforms[i]);
    Mat3 R = inv.block<3, 3>(0, 0);
    Vec3 t = inv.block<3, 1>(0, 3);
    out.middleCols(3 * i, 3) =
        (world_points * R.transpose()).rowwise() + t.transpose();
  }
  return out;
}

}  // namespace hoflow
