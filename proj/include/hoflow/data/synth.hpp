#pragma once

#include <filesystem>
#include <hoflow/data/objects.hpp>
#include <hoflow/metrics/metrics.hpp>
#include <json.hpp>

namespace hoflow {

struct TaskSpec {
  std::string verb = "lift";  // lift | pass | rotate | shake
  Vec3 approach = Vec3(0, 0, 1);
  double amplitude = 0.1;
  int frames = 96;  // 96 or 160
};

namespace synthdetail {

// Signed distance from a capsule surface to the object: minimum over the
// capsule axis of the point SDF, minus the radius. Exact for convex objects.
inline double capsule_surface_sdf(const Capsule& c, const Sdf& sdf, const Mat4& obj_T) {
  Mat4 inv = rigid_inverse(obj_T);
  Mat3 R = inv.block<3, 3>(0, 0);
  Vec3 t = inv.block<3, 1>(0, 3);
  double best = std::numeric_limits<double>::max();
  for (int k = 0; k <= 16; ++k) {
    Vec3 p = c.a + (c.b - c.a) * (k / 16.0);
    best = std::min(best, sdf.distance(R * p + t));
  }
  return best - c.r;
}

// indices of the three chain joints per finger, proximal first, plus tip id
struct FingerChain {
  std::array<int, 3> joints;
  int tip;
};

inline std::array<FingerChain, 5> finger_chains() {
  return {FingerChain{{1, 2, 3}, 0}, FingerChain{{4, 5, 6}, 1},
          FingerChain{{7, 8, 9}, 2}, FingerChain{{10, 11, 12}, 3},
          FingerChain{{13, 14, 15}, 4}};
}

using CurlAngles = std::array<std::array<double, 3>, 5>;  // per finger, per joint

// Curl model: every finger joint flexes about +y (palm faces -z). The thumb
// root is pre-rotated about -x so its chain opposes from the +y side.
inline HandPose curled_pose(const Vec3& wrist, const CurlAngles& curl) {
  HandPose p{};
  for (auto& w : p.theta) w = Vec3::Zero();
  p.trans = wrist;
  auto chains = finger_chains();
  for (int f = 0; f < 5; ++f)
    for (int j = 0; j < 3; ++j)
      p.theta[chains[f].joints[j]] = Vec3(0, curl[f][j], 0);
  Mat3 pre = rodrigues(Vec3(-0.9, 0, 0.25));
  Mat3 cu = rodrigues(p.theta[13]);
  Eigen::AngleAxisd aa(pre * cu);
  p.theta[13] = aa.angle() * aa.axis();
  return p;
}

// Capsule of segment j of a finger under the current pose.
inline Capsule finger_capsule(const KinematicTree& tree, const FkResult& fk, int finger,
                              int j) {
  auto ch = finger_chains()[finger];
  Vec3 a = fk.positions[ch.joints[j]];
  Vec3 b = j < 2 ? fk.positions[ch.joints[j + 1]] : fk.positions[kJointCount + ch.tip];
  return Capsule{a, b, default_bone_radii()[ch.joints[j]]};
}

// Deepest surface SDF over finger segments from `from_joint` to the tip.
inline double finger_sdf(const KinematicTree& tree, const Vec3& wrist,
                         const CurlAngles& curl, int finger, int from_joint,
                         const Sdf& sdf) {
  FkResult fk = forward_kinematics(tree, curled_pose(wrist, curl));
  double best = std::numeric_limits<double>::max();
  for (int j = from_joint; j < 3; ++j)
    best = std::min(best, capsule_surface_sdf(finger_capsule(tree, fk, finger, j), sdf,
                                              Mat4::Identity()));
  return best;
}

}  // namespace synthdetail

// Builds one manipulation clip: a short approach, finger closure onto the
// object found by bisection against its SDF, then a verb-specific rigid
// trajectory with the object attached to the wrist. The object pose is the
// identity until the hand has closed, so sequences come out frame-0
// normalized by construction.
inline MotionSequence generate_sequence(const ObjectSpec& obj, const TaskSpec& task,
                                        uint64_t seed) {
  using namespace synthdetail;
  KinematicTree tree = builtin_hand_tree();
  const Sdf& sdf = *obj.sdf;
  Rng rng(seed);

  // Wrist placement: palm axis runs +x above the object, palm facing -z.
  // The height is solved so the palm capsule surface presses 0.45 mm in.
  double bound = 0;
  for (int i = 0; i < obj.cloud.rows(); ++i)
    bound = std::max(bound, obj.cloud.row(i).norm());
  Vec3 wrist(-0.085, 0.009, bound + 0.05);  // y centers the finger spread
  {
    double lo = -0.05, hi = bound + 0.05;  // wrist z range
    for (int it = 0; it < 48; ++it) {
      double mid = 0.5 * (lo + hi);
      CurlAngles open{};
      FkResult fk =
          forward_kinematics(tree, curled_pose(Vec3(wrist.x(), wrist.y(), mid), open));
      Capsule palm{fk.positions[0], fk.positions[4], default_bone_radii()[0]};
      double d = capsule_surface_sdf(palm, sdf, Mat4::Identity());
      if (d > -0.00045)
        hi = mid;
      else
        lo = mid;
    }
    wrist.z() = hi;
  }

  // Per-finger staged closure: each joint, proximal to distal, curls until
  // the moving part of the finger first reaches 0.9 mm inside the surface,
  // then the next joint takes over. Stopping at the first crossing keeps the
  // whole finger at a shallow, bounded penetration.
  CurlAngles curl{};
  const double kTarget = -0.0005, kMaxCurl = 1.55;
  const int kSweep = 64;
  int touching = 0;
  for (int f = 0; f < 5; ++f) {
    bool contact = false;
    for (int j = 0; j < 3; ++j) {
      // a capsule further down the chain already rests on the surface;
      // curling this joint would only deepen it, so move to the next joint
      if (finger_sdf(tree, wrist, curl, f, j, sdf) <= kTarget) {
        contact = true;
        continue;
      }
      double prev = 0;
      bool crossed = false;
      for (int k = 1; k <= kSweep; ++k) {
        double a = kMaxCurl * k / kSweep;
        curl[f][j] = a;
        if (finger_sdf(tree, wrist, curl, f, j, sdf) <= kTarget) {
          double lo = prev, hi = a;
          for (int it = 0; it < 40; ++it) {
            double mid = 0.5 * (lo + hi);
            curl[f][j] = mid;
            if (finger_sdf(tree, wrist, curl, f, j, sdf) > kTarget)
              lo = mid;
            else
              hi = mid;
          }
          curl[f][j] = hi;
          crossed = true;
          break;
        }
        prev = a;
      }
      if (crossed) {
        contact = true;
        continue;
      }
      curl[f][j] = kMaxCurl;  // joint limit without contact, try the next joint
    }
    if (!contact) {
      // cannot reach: keep the closest non-penetrating configuration
      double best_d = std::numeric_limits<double>::max();
      CurlAngles best = curl;
      for (int k = 0; k <= kSweep; ++k) {
        for (int j = 0; j < 3; ++j) curl[f][j] = kMaxCurl * k / kSweep * 0.8;
        double d = finger_sdf(tree, wrist, curl, f, 0, sdf);
        if (d >= 0 && d < best_d) {
          best_d = d;
          best = curl;
        }
      }
      curl = best;
    } else {
      ++touching;
    }
  }
  if (touching == 0)
    throw std::invalid_argument("generate_sequence: no finger can close on object " +
                                obj.id + " (object larger than the hand span)");

  const int N = task.frames;
  const int kClose = 4;  // frames spent approaching and closing
  if (N <= kClose + 2)
    throw std::invalid_argument("generate_sequence: sequence too short");
  MotionSequence seq;
  seq.fps = 30;
  seq.handedness = "right";
  seq.object_id = obj.id;
  seq.text = task.verb + " the " + shape_name(obj.kind) + " with the right hand";

  HandPose grasp = curled_pose(wrist, curl);
  auto ease = [](double s) { return s * s * (3 - 2 * s); };

  for (int f = 0; f < N; ++f) {
    Frame fr;
    if (f < kClose) {
      double s = ease(static_cast<double>(f) / kClose);
      CurlAngles c;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 3; ++j) c[i][j] = curl[i][j] * s;
      Vec3 w = wrist + (1 - s) * 0.05 * task.approach.normalized();
      fr.hand = curled_pose(w, c);
      fr.obj_T = Mat4::Identity();
      seq.frames.push_back(fr);
      continue;
    }
    // manipulation phase: rigid wrist motion carries the object
    double s = ease(static_cast<double>(f - kClose) / (N - 1 - kClose));
    Mat4 W = Mat4::Identity();
    if (task.verb == "lift") {
      W.block<3, 1>(0, 3) = Vec3(0, 0, task.amplitude * s);
    } else if (task.verb == "pass") {
      W.block<3, 1>(0, 3) = Vec3(0, task.amplitude * s, 0.02 * std::sin(M_PI * s));
    } else if (task.verb == "rotate") {
      W.block<3, 3>(0, 0) = rodrigues(Vec3(0, 0, task.amplitude * 3.0 * s));
      W.block<3, 1>(0, 3) = Vec3(0, 0, 0.02 * s);
    } else if (task.verb == "shake") {
      W.block<3, 1>(0, 3) =
          Vec3(0, 0, 0.03 * s + task.amplitude * 0.3 * std::sin(4 * M_PI * s) * s);
    } else {
      throw std::invalid_argument("generate_sequence: unknown verb " + task.verb);
    }
    Mat3 Rw = W.block<3, 3>(0, 0);
    Vec3 tw = W.block<3, 1>(0, 3);
    fr.hand = grasp;
    Mat3 root = Rw * rodrigues(grasp.theta[0]);
    Eigen::AngleAxisd aa(root);
    fr.hand.theta[0] = canonicalize_axis_angle(aa.angle() * aa.axis());
    fr.hand.trans = Rw * grasp.trans + tw;
    fr.obj_T = W;  // object was at the identity when grasped
    seq.frames.push_back(fr);
  }
  (void)rng;
  return seq;
}

struct CorpusConfig {
  int objects = 8;
  int per_object = 4;  // sequences per object, cycling through verbs
  int test_objects = 2;
  int frames = 96;
  std::string out_dir = "data";
};

inline ObjectSpec make_corpus_object(int index, uint64_t seed) {
  Rng rng(seed ^ (0x51edull * (index + 1)));
  ShapeKind kind = static_cast<ShapeKind>(index % 3);
  Vec3 params = Vec3::Zero();
  switch (kind) {
    case ShapeKind::kSphere:
      params.x() = 0.038 + 0.012 * rng.uniform();
      break;
    case ShapeKind::kBox:
      params = Vec3(0.028 + 0.012 * rng.uniform(), 0.036 + 0.012 * rng.uniform(),
                    0.022 + 0.012 * rng.uniform());
      break;
    case ShapeKind::kCylinder:
      params = Vec3(0.036 + 0.009 * rng.uniform(), 0.030 + 0.018 * rng.uniform(), 0);
      break;
  }
  std::string id = shape_name(kind) + "_" + std::to_string(index);
  return make_object(kind, params, seed ^ (0xc0ffull + index), id);
}

// Writes objects/, motions/ and a manifest with a train/test split that is
// disjoint by object id (the last test_objects objects are held out).
inline nlohmann::json build_corpus(const CorpusConfig& cfg, uint64_t seed) {
  namespace fs = std::filesystem;
  if (cfg.objects < 1 || cfg.per_object < 1)
    throw std::invalid_argument("build_corpus: counts must be >= 1");
  if (cfg.test_objects >= cfg.objects)
    throw std::invalid_argument("build_corpus: test split swallows every object");
  fs::create_directories(fs::path(cfg.out_dir) / "objects");
  fs::create_directories(fs::path(cfg.out_dir) / "motions");
  const std::vector<std::string> verbs = {"lift", "pass", "rotate", "shake"};
  nlohmann::json manifest;
  manifest["seed"] = seed;
  manifest["objects"] = cfg.objects;
  manifest["per_object"] = cfg.per_object;
  manifest["frames"] = cfg.frames;
  for (int i = 0; i < cfg.objects; ++i) {
    ObjectSpec obj = make_corpus_object(i, seed);
    bool test = i >= cfg.objects - cfg.test_objects;
    save_cloud(obj.cloud, (fs::path(cfg.out_dir) / "objects" / (obj.id + ".json")).string());
    nlohmann::json jo;
    jo["id"] = obj.id;
    jo["shape"] = shape_name(obj.kind);
    jo["params"] = {obj.params.x(), obj.params.y(), obj.params.z()};
    jo["split"] = test ? "test" : "train";
    manifest["object_list"].push_back(jo);
    (test ? manifest["test_objects"] : manifest["train_objects"]).push_back(obj.id);
    for (int k = 0; k < cfg.per_object; ++k) {
      TaskSpec task;
      task.verb = verbs[k % verbs.size()];
      task.frames = cfg.frames;
      Rng trng(seed ^ (0xabcdull * (i * 131 + k + 1)));
      task.amplitude = 0.06 + 0.06 * trng.uniform();
      MotionSequence seq = generate_sequence(obj, task, trng.next_u64());
      std::string name = obj.id + "_" + task.verb + "_" + std::to_string(k) + ".json";
      save_motion(seq, (fs::path(cfg.out_dir) / "motions" / name).string());
      nlohmann::json js;
      js["file"] = "motions/" + name;
      js["object"] = obj.id;
      js["verb"] = task.verb;
      js["split"] = test ? "test" : "train";
      js["text"] = seq.text;
      manifest["sequences"].push_back(js);
    }
  }
  std::ofstream out(fs::path(cfg.out_dir) / "manifest.json");
  if (!out) throw std::runtime_error("build_corpus: cannot write manifest in " + cfg.out_dir);
  out << manifest.dump(1) << "\n";
  return manifest;
}

}  // namespace hoflow
