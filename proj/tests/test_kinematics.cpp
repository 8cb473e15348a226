#include <catch2/catch_amalgamated.hpp>
#include <hoflow/core/rng.hpp>
#include <hoflow/geom/kinematics.hpp>
#include <hoflow/geom/motion.hpp>

using namespace hoflow;

namespace {

Vec3 random_axis_angle(Rng& rng, double scale = 1.5) {
  return Vec3(rng.normal(), rng.normal(), rng.normal()) * scale * rng.uniform();
}

HandPose random_pose(Rng& rng) {
  HandPose p;
  for (auto& w : p.theta) w = random_axis_angle(rng, 0.8);
  p.trans = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.2;
  return p;
}

// Per-joint chain product built independently of forward_kinematics.
Mat4 naive_chain(const KinematicTree& tree, const HandPose& pose, int joint) {
  std::vector<int> chain = tree.ancestors(joint);
  chain.push_back(joint);
  Mat4 T = Mat4::Identity();
  for (int j : chain) {
    Mat4 local = Mat4::Identity();
    local.block<3, 3>(0, 0) = rodrigues(pose.theta[j]);
    local.block<3, 1>(0, 3) = tree.offsets[j];
    T = T * local;
  }
  T.block<3, 1>(0, 3) += pose.trans;
  return T;
}

}  // namespace

TEST_CASE("rodrigues basics") {
  REQUIRE(rodrigues(Vec3::Zero()).isApprox(Mat3::Identity(), 1e-12));

  Vec3 half_turn(0, 0, M_PI);
  Vec3 r = rodrigues(half_turn) * Vec3(1, 0, 0);
  REQUIRE((r - Vec3(-1, 0, 0)).norm() < 1e-6);

  SECTION("orthonormal with det +1") {
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
      Mat3 R = rodrigues(random_axis_angle(rng, 3.0));
      REQUIRE((R * R.transpose() - Mat3::Identity()).norm() < 1e-12);
      REQUIRE(R.determinant() == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("matches quaternion exponential") {
    Rng rng(12);
    for (int i = 0; i < 100; ++i) {
      Vec3 w = random_axis_angle(rng, 2.5);
      double t = w.norm();
      Eigen::Quaterniond q(std::cos(t / 2), 0, 0, 0);
      if (t > 0) {
        Vec3 v = std::sin(t / 2) * w / t;
        q = Eigen::Quaterniond(std::cos(t / 2), v.x(), v.y(), v.z());
      }
      REQUIRE((rodrigues(w) - q.toRotationMatrix()).norm() < 1e-6);
    }
  }
  SECTION("tiny angles stay finite and accurate") {
    Vec3 w(1e-10, -2e-10, 5e-11);
    Mat3 R = rodrigues(w);
    REQUIRE(R.allFinite());
    REQUIRE((R - Mat3::Identity()).norm() < 1e-9);
  }
}

TEST_CASE("axis-angle canonicalization wraps into [0, 2pi)") {
  Vec3 w(0, 0, 3 * M_PI);
  Vec3 c = canonicalize_axis_angle(w);
  REQUIRE(c.norm() == Catch::Approx(M_PI));
  REQUIRE((rodrigues(c) - rodrigues(w)).norm() < 1e-9);
  REQUIRE(canonicalize_axis_angle(Vec3::Zero()).norm() == 0.0);
}

TEST_CASE("forward kinematics") {
  KinematicTree tree = builtin_hand_tree();

  SECTION("zero pose stacks template offsets") {
    HandPose p{};
    for (auto& w : p.theta) w = Vec3::Zero();
    FkResult fk = forward_kinematics(tree, p);
    for (int i = 0; i < kJointCount; ++i) {
      Vec3 expect = Vec3::Zero();
      for (int j = i; j >= 0; j = tree.parents[j]) expect += tree.offsets[j];
      REQUIRE((fk.positions[i] - expect).norm() < 1e-12);
    }
  }
  SECTION("two-link quarter turn") {
    // Root rotated pi/2 about z carries the index proximal offset onto +y.
    HandPose p{};
    for (auto& w : p.theta) w = Vec3::Zero();
    p.theta[0] = Vec3(0, 0, M_PI / 2);
    FkResult fk = forward_kinematics(tree, p);
    Vec3 off = tree.offsets[1];
    REQUIRE((fk.positions[1] - Vec3(-off.y(), off.x(), 0)).norm() < 1e-9);
  }
  SECTION("matches naive sequential chain products") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
      HandPose p = random_pose(rng);
      FkResult fk = forward_kinematics(tree, p);
      for (int i = 0; i < kJointCount; ++i) {
        REQUIRE((fk.transforms[i] - naive_chain(tree, p, i)).norm() < 1e-6);
      }
    }
  }
  SECTION("translation equivariance") {
    Rng rng(22);
    HandPose p = random_pose(rng);
    Vec3 delta(0.03, -0.11, 0.29);
    HandPose q = p;
    q.trans += delta;
    FkResult a = forward_kinematics(tree, p);
    FkResult b = forward_kinematics(tree, q);
    for (int i = 0; i < kTotalJoints; ++i)
      REQUIRE((b.positions[i] - a.positions[i] - delta).norm() < 1e-12);
  }
  SECTION("global rotation equivariance about the root") {
    Rng rng(23);
    HandPose p = random_pose(rng);
    p.trans = Vec3::Zero();
    Mat3 G = rodrigues(Vec3(0.4, -1.1, 0.7));
    HandPose q = p;
    Mat3 rotated_root = G * rodrigues(p.theta[0]);
    Eigen::AngleAxisd aa(rotated_root);
    q.theta[0] = aa.angle() * aa.axis();
    FkResult a = forward_kinematics(tree, p);
    FkResult b = forward_kinematics(tree, q);
    for (int i = 0; i < kTotalJoints; ++i)
      REQUIRE((b.positions[i] - G * a.positions[i]).norm() < 1e-5);
  }
  SECTION("malformed tree rejected") {
    KinematicTree bad = tree;
    bad.parents[3] = 5;
    HandPose p{};
    for (auto& w : p.theta) w = Vec3::Zero();
    REQUIRE_THROWS_AS(forward_kinematics(bad, p), std::invalid_argument);
  }
}

TEST_CASE("joint-frame point mapping") {
  KinematicTree tree = builtin_hand_tree();
  Rng rng(31);

  SECTION("identity transforms tile the input") {
    std::array<Mat4, kJointCount> id;
    id.fill(Mat4::Identity());
    Eigen::MatrixXd pts(4, 3);
    pts << 1, 2, 3, -1, 0, 2, 0.5, 0.5, 0.5, 0, 0, 0;
    Eigen::MatrixXd out = to_joint_frames(pts, id);
    REQUIRE(out.cols() == 48);
    for (int i = 0; i < kJointCount; ++i)
      REQUIRE((out.middleCols(3 * i, 3) - pts).norm() < 1e-15);
  }
  SECTION("re-applying the transforms recovers world points") {
    HandPose p = random_pose(rng);
    FkResult fk = forward_kinematics(tree, p);
    Eigen::MatrixXd pts(16, 3);
    for (int r = 0; r < 16; ++r)
      pts.row(r) << rng.normal() * 0.1, rng.normal() * 0.1, rng.normal() * 0.1;
    Eigen::MatrixXd framed = to_joint_frames(pts, fk.transforms);
    for (int i = 0; i < kJointCount; ++i) {
      Mat3 R = fk.transforms[i].block<3, 3>(0, 0);
      Vec3 t = fk.transforms[i].block<3, 1>(0, 3);
      Eigen::MatrixXd back =
          (framed.middleCols(3 * i, 3) * R.transpose()).rowwise() + t.transpose();
      REQUIRE((back - pts).norm() < 1e-9);
    }
  }
  SECTION("matches explicit homogeneous-inverse oracle") {
    HandPose p = random_pose(rng);
    FkResult fk = forward_kinematics(tree, p);
    Eigen::MatrixXd pts(8, 3);
    for (int r = 0; r < 8; ++r)
      pts.row(r) << rng.normal(), rng.normal(), rng.normal();
    Eigen::MatrixXd framed = to_joint_frames(pts, fk.transforms);
    for (int i = 0; i < kJointCount; ++i) {
      Mat4 inv = fk.transforms[i].inverse();
      for (int r = 0; r < 8; ++r) {
        Eigen::Vector4d h(pts(r, 0), pts(r, 1), pts(r, 2), 1.0);
        Eigen::Vector4d m = inv * h;
        REQUIRE((framed.row(r).segment<3>(3 * i).transpose() - m.head<3>()).norm() < 1e-6);
      }
    }
  }
}

TEST_CASE("6D rotation codec") {
  REQUIRE(rot6d_encode(Mat3::Identity()).v == std::array<double, 6>{1, 0, 0, 0, 1, 0});
  REQUIRE(rot6d_decode(rot6d_encode(Mat3::Identity())).isApprox(Mat3::Identity(), 1e-12));

  SECTION("round trip on random rotations") {
    Rng rng(41);
    for (int i = 0; i < 100; ++i) {
      Mat3 R = rodrigues(random_axis_angle(rng, 3.0));
      Mat3 back = rot6d_decode(rot6d_encode(R));
      REQUIRE((back - R).norm() < 1e-6);
    }
  }
  SECTION("decode always yields a proper rotation") {
    Rng rng(42);
    for (int i = 0; i < 50; ++i) {
      Rot6d r;
      for (auto& v : r.v) v = rng.normal();
      Mat3 R = rot6d_decode(r);
      REQUIRE((R * R.transpose() - Mat3::Identity()).norm() < 1e-9);
      REQUIRE(R.determinant() == Catch::Approx(1.0).margin(1e-9));
    }
  }
  SECTION("near-parallel columns rejected with condition number") {
    Rot6d bad{{1, 0, 0, 1, 1e-9, 0}};
    REQUIRE_THROWS_WITH(rot6d_decode(bad),
                        Catch::Matchers::ContainsSubstring("condition number"));
  }
}

TEST_CASE("mirroring") {
  KinematicTree right = builtin_hand_tree();
  KinematicTree left = mirror_tree(right);
  Rng rng(51);

  MotionSequence seq;
  seq.object_id = "obj";
  for (int f = 0; f < 5; ++f) {
    Frame fr;
    fr.hand = random_pose(rng);
    fr.obj_T.block<3, 3>(0, 0) = rodrigues(random_axis_angle(rng, 1.0));
    fr.obj_T.block<3, 1>(0, 3) = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.1;
    seq.frames.push_back(fr);
  }

  SECTION("involution") {
    MotionSequence twice = mirror_hand(mirror_hand(seq));
    for (int f = 0; f < seq.length(); ++f) {
      REQUIRE((twice.frames[f].obj_T - seq.frames[f].obj_T).norm() < 1e-6);
      REQUIRE((twice.frames[f].hand.trans - seq.frames[f].hand.trans).norm() < 1e-6);
      for (int j = 0; j < kJointCount; ++j)
        REQUIRE((twice.frames[f].hand.theta[j] - seq.frames[f].hand.theta[j]).norm() < 1e-6);
    }
    REQUIRE(mirror_hand(seq).handedness == "left");
    REQUIRE(twice.handedness == "right");
  }
  SECTION("joint positions reflect across x=0") {
    MotionSequence m = mirror_hand(seq);
    for (int f = 0; f < seq.length(); ++f) {
      FkResult a = forward_kinematics(right, seq.frames[f].hand);
      FkResult b = forward_kinematics(left, m.frames[f].hand);
      for (int i = 0; i < kTotalJoints; ++i) {
        Vec3 expect(-a.positions[i].x(), a.positions[i].y(), a.positions[i].z());
        REQUIRE((b.positions[i] - expect).norm() < 1e-6);
      }
    }
  }
  SECTION("pairwise inter-joint distances preserved") {
    MotionSequence m = mirror_hand(seq);
    FkResult a = forward_kinematics(right, seq.frames[0].hand);
    FkResult b = forward_kinematics(left, m.frames[0].hand);
    for (int i = 0; i < kTotalJoints; ++i)
      for (int j = i + 1; j < kTotalJoints; ++j) {
        double da = (a.positions[i] - a.positions[j]).norm();
        double db = (b.positions[i] - b.positions[j]).norm();
        REQUIRE(da == Catch::Approx(db).margin(1e-6));
      }
  }
  SECTION("hand-object signed distance to a sphere is unchanged") {
    // Sphere of radius 4 cm posed by obj_T; its canonical SDF is symmetric
    // under x-negation, which the mirrored object pose relies on.
    auto sdf = [](const Mat4& T, const Vec3& p) {
      Mat4 inv = rigid_inverse(T);
      Vec3 c = inv.block<3, 3>(0, 0) * p + inv.block<3, 1>(0, 3);
      return c.norm() - 0.04;
    };
    MotionSequence m = mirror_hand(seq);
    for (int f = 0; f < seq.length(); ++f) {
      FkResult a = forward_kinematics(right, seq.frames[f].hand);
      FkResult b = forward_kinematics(left, m.frames[f].hand);
      for (int i = 0; i < kTotalJoints; ++i) {
        double da = sdf(seq.frames[f].obj_T, a.positions[i]);
        double db = sdf(m.frames[f].obj_T, b.positions[i]);
        REQUIRE(da == Catch::Approx(db).margin(1e-5));
      }
    }
  }
}

TEST_CASE("sequence normalization") {
  KinematicTree tree = builtin_hand_tree();
  Rng rng(61);
  MotionSequence seq;
  seq.object_id = "obj";
  for (int f = 0; f < 6; ++f) {
    Frame fr;
    fr.hand = random_pose(rng);
    fr.obj_T.block<3, 3>(0, 0) = rodrigues(random_axis_angle(rng, 1.2));
    fr.obj_T.block<3, 1>(0, 3) = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.3;
    seq.frames.push_back(fr);
  }

  SECTION("frame-0 object pose becomes identity, idempotent") {
    MotionSequence n = normalize_sequence(seq);
    REQUIRE((n.frames[0].obj_T - Mat4::Identity()).norm() < 1e-9);
    MotionSequence n2 = normalize_sequence(n);
    for (int f = 0; f < n.length(); ++f) {
      REQUIRE((n2.frames[f].obj_T - n.frames[f].obj_T).norm() < 1e-9);
      REQUIRE((n2.frames[f].hand.trans - n.frames[f].hand.trans).norm() < 1e-9);
    }
  }
  SECTION("pure frame-0 translation shifts everything") {
    MotionSequence s = seq;
    for (auto& fr : s.frames) fr.obj_T.block<3, 3>(0, 0) = Mat3::Identity();
    for (auto& fr : s.frames) fr.hand.theta[0] = Vec3::Zero();
    Vec3 t0 = s.frames[0].obj_T.block<3, 1>(0, 3);
    MotionSequence n = normalize_sequence(s);
    for (int f = 0; f < s.length(); ++f) {
      Vec3 expect_obj = s.frames[f].obj_T.block<3, 1>(0, 3) - t0;
      REQUIRE((n.frames[f].obj_T.block<3, 1>(0, 3) - expect_obj).norm() < 1e-12);
      REQUIRE((n.frames[f].hand.trans - (s.frames[f].hand.trans - t0)).norm() < 1e-12);
    }
  }
  SECTION("hand-object distances preserved") {
    MotionSequence n = normalize_sequence(seq);
    for (int f = 0; f < seq.length(); ++f) {
      FkResult a = forward_kinematics(tree, seq.frames[f].hand);
      FkResult b = forward_kinematics(tree, n.frames[f].hand);
      Vec3 oa = seq.frames[f].obj_T.block<3, 1>(0, 3);
      Vec3 ob = n.frames[f].obj_T.block<3, 1>(0, 3);
      for (int i = 0; i < kTotalJoints; ++i) {
        double da = (a.positions[i] - oa).norm();
        double db = (b.positions[i] - ob).norm();
        REQUIRE(da == Catch::Approx(db).margin(1e-6));
      }
    }
  }
  SECTION("non-rigid frame-0 pose rejected") {
    MotionSequence bad = seq;
    bad.frames[0].obj_T(0, 0) = 2.0;
    REQUIRE_THROWS_AS(normalize_sequence(bad), std::invalid_argument);
  }
}

TEST_CASE("tree and motion serialization round trip") {
  KinematicTree tree = builtin_hand_tree();
  std::string tree_path = "tree_rt.json";
  save_tree(tree, tree_path);
  KinematicTree back = load_tree(tree_path);
  REQUIRE(back.parents == tree.parents);
  for (int i = 0; i < kJointCount; ++i)
    REQUIRE((back.offsets[i] - tree.offsets[i]).norm() < 1e-12);
  for (int i = 0; i < kTipCount; ++i) {
    REQUIRE(back.tip_parents[i] == tree.tip_parents[i]);
    REQUIRE((back.tip_offsets[i] - tree.tip_offsets[i]).norm() < 1e-12);
  }

  Rng rng(71);
  MotionSequence seq;
  seq.fps = 30;
  seq.object_id = "sphere_0";
  seq.text = "lift the sphere with the right hand";
  for (int f = 0; f < 3; ++f) {
    Frame fr;
    fr.hand = random_pose(rng);
    fr.obj_T.block<3, 1>(0, 3) = Vec3(0.01 * f, 0, 0);
    seq.frames.push_back(fr);
  }
  std::string motion_path = "motion_rt.json";
  save_motion(seq, motion_path);
  MotionSequence loaded = load_motion(motion_path);
  REQUIRE(loaded.length() == seq.length());
  REQUIRE(loaded.text == seq.text);
  REQUIRE(loaded.object_id == seq.object_id);
  for (int f = 0; f < seq.length(); ++f) {
    REQUIRE((loaded.frames[f].obj_T - seq.frames[f].obj_T).norm() < 1e-12);
    REQUIRE((loaded.frames[f].hand.trans - seq.frames[f].hand.trans).norm() < 1e-12);
    for (int j = 0; j < kJointCount; ++j)
      REQUIRE((loaded.frames[f].hand.theta[j] - seq.frames[f].hand.theta[j]).norm() < 1e-12);
  }
  std::remove(tree_path.c_str());
  std::remove(motion_path.c_str());
}
