#pragma once

#include <fstream>
#include <hoflow/core/rng.hpp>
#include <hoflow/geom/kinematics.hpp>
#include <json.hpp>
#include <limits>
#include <string>
#include <vector>

namespace hoflow {

constexpr int kCloudSize = 1024;
constexpr int kBpsSize = 4096;
constexpr double kBpsRadius = 0.15;  // meters; objects fit a 0.1 m sphere
constexpr int kDescriptorDim = 57;   // 3 canonical + 3 world + 3 root-relative + 48

// Rows are points in meters, canonical object pose.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Deterministic farthest-point subsampling (or repetition when too few),
// seeded from the first point, so loading is reproducible.
inline PointMatrix resample_cloud(const PointMatrix& pts, int target) {
  if (pts.rows() == 0) throw std::invalid_argument("resample_cloud: empty cloud");
  PointMatrix out(target, 3);
  if (pts.rows() <= target) {
    for (int i = 0; i < target; ++i) out.row(i) = pts.row(i % pts.rows());
    return out;
  }
  std::vector<double> best(pts.rows(), std::numeric_limits<double>::max());
  int cur = 0;
  for (int k = 0; k < target; ++k) {
    out.row(k) = pts.row(cur);
    int next = 0;
    double far = -1;
    for (int i = 0; i < pts.rows(); ++i) {
      double d = (pts.row(i) - pts.row(cur)).squaredNorm();
      if (d < best[i]) best[i] = d;
      if (best[i] > far) {
        far = best[i];
        next = i;
      }
    }
    cur = next;
  }
  return out;
}

inline PointMatrix load_cloud(const std::string& path, int target = kCloudSize) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cloud: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  const auto& arr = j.at("points");
  PointMatrix pts(arr.size(), 3);
  for (size_t i = 0; i < arr.size(); ++i)
    for (int k = 0; k < 3; ++k) pts(static_cast<int>(i), k) = arr[i][k].get<double>();
  return resample_cloud(pts, target);
}

inline void save_cloud(const PointMatrix& pts, const std::string& path) {
  nlohmann::json j;
  j["points"] = nlohmann::json::array();
  for (int i = 0; i < pts.rows(); ++i)
    j["points"].push_back({pts(i, 0), pts(i, 1), pts(i, 2)});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_cloud: cannot open " + path);
  out << j.dump() << "\n";
}

// Per-point interaction features for one frame: canonical coordinates, world
// coordinates under the object pose, coordinates relative to the wrist, and
// the same world points expressed in each of the 16 joint frames.
inline Eigen::MatrixXd build_descriptor(const PointMatrix& cloud, const Mat4& object_pose,
                                        const FkResult& fk) {
  const int P = static_cast<int>(cloud.rows());
  if (P == 0) throw std::invalid_argument("build_descriptor: empty cloud");
  check_rigid(object_pose, "build_descriptor");
  Eigen::MatrixXd out(P, kDescriptorDim);
  Mat3 R = object_pose.block<3, 3>(0, 0);
  Vec3 t = object_pose.block<3, 1>(0, 3);
  Eigen::MatrixXd world = (cloud * R.transpose()).rowwise() + t.transpose();
  out.middleCols(0, 3) = cloud;
  out.middleCols(3, 3) = world;
  out.middleCols(6, 3) = world.rowwise() - fk.positions[0].transpose();
  out.middleCols(9, 48) = to_joint_frames(world, fk.transforms);
  return out;
}

// Fixed query set for distance encoding: uniform in a ball of kBpsRadius.
inline PointMatrix basis_points(uint64_t seed, int count = kBpsSize) {
  if (count < 1) throw std::invalid_argument("basis_points: count must be >= 1");
  Rng rng(seed);
  PointMatrix out(count, 3);
  for (int i = 0; i < count; ++i) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    double n = dir.norm();
    if (n < 1e-12) dir = Vec3(1, 0, 0), n = 1;
    double r = kBpsRadius * std::cbrt(rng.uniform());
    out.row(i) = (dir / n * r).transpose();
  }
  return out;
}

// Entry k is the distance from basis point k to its nearest cloud point.
inline Eigen::VectorXd bps_encode(const PointMatrix& cloud, const PointMatrix& basis) {
  if (cloud.rows() == 0) throw std::invalid_argument("bps_encode: empty cloud");
  Eigen::VectorXd out(basis.rows());
  for (int k = 0; k < basis.rows(); ++k)
    out[k] = std::sqrt((cloud.rowwise() - basis.row(k)).rowwise().squaredNorm().minCoeff());
  return out;
}

// Symmetric chamfer distance: mean over each cloud of the squared distance to
// the nearest point of the other, summed both ways. Reported in cm^2.
inline double chamfer(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("chamfer: empty cloud");
  double ab = 0, ba = 0;
  for (int i = 0; i < a.rows(); ++i)
    ab += (b.rowwise() - a.row(i)).rowwise().squaredNorm().minCoeff();
  for (int i = 0; i < b.rows(); ++i)
    ba += (a.rowwise() - b.row(i)).rowwise().squaredNorm().minCoeff();
  return (ab / a.rows() + ba / b.rows()) * 1e4;  // m^2 to cm^2
}

}  // namespace hoflow
