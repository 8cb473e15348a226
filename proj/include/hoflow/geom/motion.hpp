#pragma once

#include <fstream>
#include <hoflow/geom/kinematics.hpp>
#include <json.hpp>
#include <string>
#include <vector>

namespace hoflow {

struct Frame {
  HandPose hand;
  Mat4 obj_T = Mat4::Identity();
};

struct MotionSequence {
  double fps = 30.0;
  std::string handedness = "right";
  std::string object_id;
  std::string text;
  std::vector<Frame> frames;

  int length() const { return static_cast<int>(frames.size()); }
};

// Rigidly moves the whole scene (hand and object alike) by the inverse of the
// frame-0 object pose, so sequences from any capture convention line up.
inline MotionSequence normalize_sequence(const MotionSequence& seq) {
  if (seq.frames.empty())
    throw std::invalid_argument("normalize_sequence: empty sequence");
  check_rigid(seq.frames[0].obj_T, "normalize_sequence");
  Mat4 G = rigid_inverse(seq.frames[0].obj_T);
  Mat3 Rg = G.block<3, 3>(0, 0);
  Vec3 tg = G.block<3, 1>(0, 3);
  MotionSequence out = seq;
  for (auto& f : out.frames) {
    f.obj_T = G * f.obj_T;
    // Root orientation composes with the global rotation; the wrist axis-angle
    // absorbs it while all finger joints are unchanged (local rotations).
    Mat3 root = Rg * rodrigues(f.hand.theta[0]);
    Eigen::AngleAxisd aa(root);
    f.hand.theta[0] = canonicalize_axis_angle(aa.angle() * aa.axis());
    f.hand.trans = Rg * f.hand.trans + tg;
  }
  return out;
}

inline Vec3 mirror_axis_angle(const Vec3& w) { return Vec3(w.x(), -w.y(), -w.z()); }

// Reflection across the x=0 plane. Conjugating a rotation by diag(-1,1,1)
// maps axis-angle (wx,wy,wz) to (wx,-wy,-wz); positions just negate x.
inline MotionSequence mirror_hand(const MotionSequence& seq) {
  Mat3 S = Vec3(-1, 1, 1).asDiagonal();
  MotionSequence out = seq;
  out.handedness = seq.handedness == "right" ? "left" : "right";
  for (auto& f : out.frames) {
    for (auto& w : f.hand.theta) w = mirror_axis_angle(w);
    f.hand.trans = S * f.hand.trans;
    Mat4 M = Mat4::Identity();
    M.block<3, 3>(0, 0) = S;
    f.obj_T = M * f.obj_T * M;  // S = S^-1
  }
  return out;
}

inline nlohmann::json motion_to_json(const MotionSequence& seq) {
  nlohmann::json j;
  j["fps"] = seq.fps;
  j["handedness"] = seq.handedness;
  j["object"] = seq.object_id;
  j["text"] = seq.text;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : seq.frames) {
    nlohmann::json jf;
    for (const auto& w : f.hand.theta) jf["theta"].push_back({w.x(), w.y(), w.z()});
    jf["trans"] = {f.hand.trans.x(), f.hand.trans.y(), f.hand.trans.z()};
    for (int r = 0; r < 4; ++r)
      jf["obj_T"].push_back({f.obj_T(r, 0), f.obj_T(r, 1), f.obj_T(r, 2), f.obj_T(r, 3)});
    j["frames"].push_back(std::move(jf));
  }
  return j;
}

inline MotionSequence motion_from_json(const nlohmann::json& j) {
  MotionSequence seq;
  seq.fps = j.at("fps").get<double>();
  seq.handedness = j.at("handedness").get<std::string>();
  seq.object_id = j.at("object").get<std::string>();
  seq.text = j.at("text").get<std::string>();
  for (const auto& jf : j.at("frames")) {
    Frame f;
    auto theta = jf.at("theta");
    if (theta.size() != kJointCount)
      throw std::runtime_error("motion_from_json: expected 16 joint rotations");
    for (int i = 0; i < kJointCount; ++i)
      for (int k = 0; k < 3; ++k) f.hand.theta[i][k] = theta[i][k].get<double>();
    for (int k = 0; k < 3; ++k) f.hand.trans[k] = jf.at("trans")[k].get<double>();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) f.obj_T(r, c) = jf.at("obj_T")[r][c].get<double>();
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

inline void save_motion(const MotionSequence& seq, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_motion: cannot open " + path);
  out << motion_to_json(seq).dump() << "\n";
}

inline MotionSequence load_motion(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_motion: cannot open " + path);
  return motion_from_json(nlohmann::json::parse(in));
}

}  // namespace hoflow
