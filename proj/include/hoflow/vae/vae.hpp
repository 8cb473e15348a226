#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoflow/core/checkpoint.hpp"
#include "hoflow/core/ops.hpp"
#include "hoflow/core/optim.hpp"
#include "hoflow/core/params.hpp"
#include "hoflow/core/rng.hpp"
#include "hoflow/core/tensor.hpp"
#include "hoflow/geom/features.hpp"
#include "hoflow/geom/kinematics.hpp"
#include "hoflow/geom/motion.hpp"
#include "hoflow/metrics/metrics.hpp"

namespace hoflow {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct VaeConfig {
  int cloud_points = 1024;   // points fed to the spatial encoder per frame
  int spatial_h1 = 128;      // per-point MLP widths
  int spatial_h2 = 256;
  int fs_dim = 768;          // pooled spatial feature
  int fuse_hidden = 512;     // two-layer fusion MLP widths
  int fuse_out = 256;
  int hidden = 512;          // temporal conv channels
  int latent = 32;
  float beta = 1e-4f;
  int samples_per_bone = 5;  // surface samples used by the mesh loss

  // Small widths for fast desk-scale runs; the latent width is unchanged.
  static VaeConfig desk() {
    VaeConfig c;
    c.cloud_points = 32;
    c.spatial_h1 = 32;
    c.spatial_h2 = 48;
    c.fs_dim = 48;
    c.fuse_hidden = 96;
    c.fuse_out = 64;
    c.hidden = 96;
    return c;
  }
};

constexpr int kHandDescDim = 246;  // 16x6 rot + hand trans + rel obj trans + 16x9
constexpr int kObjPoseDim = 9;     // 6d rotation + translation
constexpr int kHandOutDim = 99;    // 16x6 rot + relative translation

// ---------------------------------------------------------------------------
// small tensor helpers
// ---------------------------------------------------------------------------

inline Tensor to_tensor(const Eigen::MatrixXd& m) {
  std::vector<float> v(static_cast<size_t>(m.rows() * m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      v[static_cast<size_t>(r) * static_cast<size_t>(m.cols()) + static_cast<size_t>(c)] =
          static_cast<float>(m(r, c));
  return Tensor(Shape{static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::move(v));
}

inline Tensor linear(Tensor x, Tensor w, Tensor b) { return add(matmul(x, w), b); }

// ---------------------------------------------------------------------------
// differentiable rotation and kinematics (f32, tape-recorded)
// ---------------------------------------------------------------------------

namespace vaedetail {

// Epsilon-stabilized Gram-Schmidt so untrained outputs never divide by zero.
// Input [N,6] (two column vectors), output row-major rotation [N,3,3].
inline Tensor rot6d_to_matrix(Tensor r6) {
  const int N = r6.dim(0);
  Tensor a1 = slice(r6, 1, 0, 3);
  Tensor a2 = slice(r6, 1, 3, 3);
  auto norm = [](Tensor v) {
    return sqrt_t(add_scalar(sum_lastdim(square(v)), 1e-8f));
  };
  Tensor b1 = div(a1, norm(a1));
  Tensor d = sum_lastdim(mul(b1, a2));
  Tensor u2 = sub(a2, mul(b1, d));
  Tensor b2 = div(u2, norm(u2));
  auto comp = [](Tensor v, int i) { return slice(v, 1, i, 1); };
  Tensor b3x = sub(mul(comp(b1, 1), comp(b2, 2)), mul(comp(b1, 2), comp(b2, 1)));
  Tensor b3y = sub(mul(comp(b1, 2), comp(b2, 0)), mul(comp(b1, 0), comp(b2, 2)));
  Tensor b3z = sub(mul(comp(b1, 0), comp(b2, 1)), mul(comp(b1, 1), comp(b2, 0)));
  // rows of R are (b1_i, b2_i, b3_i)
  Tensor flat = concat({comp(b1, 0), comp(b2, 0), b3x, comp(b1, 1), comp(b2, 1), b3y,
                        comp(b1, 2), comp(b2, 2), b3z},
                       1);
  return reshape(flat, Shape{N, 3, 3});
}

struct DiffHand {
  std::array<Tensor, kJointCount> rot;  // global rotations, [N,3,3]
  std::array<Tensor, kJointCount> pos;  // joint positions, [N,3]
};

inline Tensor const_vec3(const Vec3& v) {
  return Tensor(Shape{3, 1}, {static_cast<float>(v.x()), static_cast<float>(v.y()),
                              static_cast<float>(v.z())});
}

// Chain-product forward kinematics on [N,96] stacked per-joint 6d rotations
// and [N,3] root translations.
inline DiffHand diff_forward_kinematics(const KinematicTree& tree, Tensor rot6d, Tensor trans) {
  const int N = rot6d.dim(0);
  DiffHand out;
  for (int i = 0; i < kJointCount; ++i) {
    Tensor local = rot6d_to_matrix(slice(rot6d, 1, 6 * i, 6));
    Tensor off = const_vec3(tree.offsets[i]);
    if (tree.parents[i] < 0) {
      out.rot[i] = local;
      out.pos[i] = add(trans, reshape(to_tensor(tree.offsets[i].transpose()), Shape{3}));
    } else {
      const int p = tree.parents[i];
      out.rot[i] = matmul(out.rot[p], local);
      out.pos[i] = add(out.pos[p], reshape(matmul(out.rot[p], off), Shape{N, 3}));
    }
  }
  return out;
}

// Five fixed surface samples per capsule bone, rigidly skinned: sample points
// are precomputed in the joint-local frame, then mapped by the global frame.
inline std::array<std::vector<Vec3>, kJointCount> bone_sample_offsets(
    const KinematicTree& tree, int per_bone,
    const std::array<double, kJointCount>& radii = default_bone_radii()) {
  std::array<int, kJointCount> child;
  child.fill(-1);
  for (int i = 1; i < kJointCount; ++i) child[tree.parents[i]] = i;
  std::array<std::vector<Vec3>, kJointCount> out;
  for (int i = 0; i < kJointCount; ++i) {
    Vec3 end;
    if (i == 0) {
      end = tree.offsets[4];  // wrist bone runs toward the middle proximal
    } else {
      int tip = -1;
      for (int k = 0; k < kTipCount; ++k)
        if (tree.tip_parents[k] == i) tip = k;
      end = tip >= 0 ? tree.tip_offsets[tip] : tree.offsets[child[i]];
    }
    Vec3 axis = end.norm() > 1e-9 ? end.normalized() : Vec3(1, 0, 0);
    Vec3 seed = std::abs(axis.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    Vec3 d1 = axis.cross(seed).normalized();
    Vec3 d2 = axis.cross(d1);
    out[i].reserve(static_cast<size_t>(per_bone));
    for (int k = 0; k < per_bone; ++k) {
      double t = (k + 0.5) / per_bone;
      Vec3 radial = (k % 4 == 0) ? d1 : (k % 4 == 1) ? d2 : (k % 4 == 2) ? -d1 : -d2;
      out[i].push_back(t * end + radii[i] * radial);
    }
  }
  return out;
}

// [N, 16*per_bone*3] skinned surface-sample positions.
inline Tensor diff_mesh_vertices(const DiffHand& hand,
                                 const std::array<std::vector<Vec3>, kJointCount>& offsets) {
  const int N = hand.pos[0].dim(0);
  std::vector<Tensor> parts;
  for (int i = 0; i < kJointCount; ++i)
    for (const Vec3& o : offsets[i])
      parts.push_back(add(hand.pos[i], reshape(matmul(hand.rot[i], const_vec3(o)), Shape{N, 3})));
  return concat(std::move(parts), 1);
}

}  // namespace vaedetail

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct VaeModel {
  VaeConfig cfg;
  ParamSet params;
  KinematicTree tree;

  // spatial encoder
  Tensor sw1, sb1, sw2, sb2, sw3, sb3;
  // per-branch fusion MLP + temporal conv encoder (stride 4 total)
  struct Branch {
    Tensor fw1, fb1, fw2, fb2;        // fusion MLP
    Tensor ec1w, ec1b, ec2w, ec2b;    // two stride-2 conv stages
    Tensor ehw, ehb;                  // head conv -> [mu, logvar]
    Tensor dc1w, dc1b, dc2w, dc2b;    // decoder convs around upsampling
    Tensor dhw, dhb;                  // head conv -> frame outputs
  };
  Branch obj, hand;

  VaeModel(VaeConfig c, const KinematicTree& t, uint64_t seed) : cfg(c), tree(t) {
    Rng rng(seed);
    auto lin = [&](const std::string& n, int in, int out) {
      return std::pair<Tensor, Tensor>(params.add_normal(n + ".w", Shape{in, out}, in, rng),
                                       params.add_zeros(n + ".b", Shape{out}));
    };
    auto conv = [&](const std::string& n, int cin, int cout, int k) {
      return std::pair<Tensor, Tensor>(
          params.add_normal(n + ".w", Shape{cout, cin, k}, cin * k, rng),
          params.add_zeros(n + ".b", Shape{cout}));
    };
    std::tie(sw1, sb1) = lin("spatial.l1", kDescriptorDim, cfg.spatial_h1);
    std::tie(sw2, sb2) = lin("spatial.l2", cfg.spatial_h1, cfg.spatial_h2);
    std::tie(sw3, sb3) = lin("spatial.l3", cfg.spatial_h2, cfg.fs_dim);
    auto make_branch = [&](const std::string& n, int pose_dim, int out_dim) {
      Branch b;
      std::tie(b.fw1, b.fb1) = lin(n + ".fuse1", cfg.fs_dim + pose_dim, cfg.fuse_hidden);
      std::tie(b.fw2, b.fb2) = lin(n + ".fuse2", cfg.fuse_hidden, cfg.fuse_out);
      std::tie(b.ec1w, b.ec1b) = conv(n + ".enc1", cfg.fuse_out, cfg.hidden, 3);
      std::tie(b.ec2w, b.ec2b) = conv(n + ".enc2", cfg.hidden, cfg.hidden, 3);
      std::tie(b.ehw, b.ehb) = conv(n + ".enc_head", cfg.hidden, 2 * cfg.latent, 3);
      int dec_in = (n == "hand") ? 2 * cfg.latent : cfg.latent;
      std::tie(b.dc1w, b.dc1b) = conv(n + ".dec1", dec_in, cfg.hidden, 3);
      std::tie(b.dc2w, b.dc2b) = conv(n + ".dec2", cfg.hidden, cfg.hidden, 3);
      std::tie(b.dhw, b.dhb) = conv(n + ".dec_head", cfg.hidden, out_dim, 3);
      return b;
    };
    obj = make_branch("obj", kObjPoseDim, kObjPoseDim);
    hand = make_branch("hand", kHandDescDim, kHandOutDim);
  }
};

// ---------------------------------------------------------------------------
// input features (double-precision geometry frozen into f32 tensors)
// ---------------------------------------------------------------------------

struct VaeInput {
  int frames = 0;         // padded to a multiple of 4
  int source_frames = 0;  // before padding
  Tensor desc;            // [N, P, 57] per-point interaction descriptors
  Tensor obj_pose9;       // [N, 9]
  Tensor hand_desc;       // [N, 246]
  Tensor gt_rot6d;        // [N, 96]
  Tensor gt_trans;        // [N, 3] absolute hand translation
  Tensor gt_obj_rot6d;    // [N, 6]
  Tensor gt_obj_trans;    // [N, 3]
};

inline VaeInput build_vae_input(const MotionSequence& seq_in, const PointMatrix& cloud,
                                const KinematicTree& tree, int cloud_points) {
  if (seq_in.frames.empty()) throw std::invalid_argument("build_vae_input: empty sequence");
  MotionSequence seq = seq_in.handedness == "left" ? mirror_hand(seq_in) : seq_in;
  const int n0 = seq.length();
  const int N = ((n0 + 3) / 4) * 4;
  PointMatrix pts = resample_cloud(cloud, cloud_points);
  const int P = static_cast<int>(pts.rows());

  VaeInput in;
  in.frames = N;
  in.source_frames = n0;
  std::vector<float> desc(static_cast<size_t>(N) * P * kDescriptorDim);
  std::vector<float> obj9(static_cast<size_t>(N) * kObjPoseDim);
  std::vector<float> hd(static_cast<size_t>(N) * kHandDescDim);
  std::vector<float> gr(static_cast<size_t>(N) * 96);
  std::vector<float> gt(static_cast<size_t>(N) * 3);
  std::vector<float> gor(static_cast<size_t>(N) * 6);
  std::vector<float> got(static_cast<size_t>(N) * 3);

  for (int f = 0; f < N; ++f) {
    const Frame& fr = seq.frames[static_cast<size_t>(std::min(f, n0 - 1))];
    FkResult fk = forward_kinematics(tree, fr.hand);
    Mat3 Ro = fr.obj_T.block<3, 3>(0, 0);
    Vec3 to = fr.obj_T.block<3, 1>(0, 3);

    Eigen::MatrixXd D = build_descriptor(pts, fr.obj_T, fk);
    for (int p = 0; p < P; ++p)
      for (int c = 0; c < kDescriptorDim; ++c)
        desc[(static_cast<size_t>(f) * P + p) * kDescriptorDim + c] =
            static_cast<float>(D(p, c));

    Rot6d ro6 = rot6d_encode(Ro);
    for (int c = 0; c < 6; ++c) {
      obj9[static_cast<size_t>(f) * 9 + c] = static_cast<float>(ro6.v[c]);
      gor[static_cast<size_t>(f) * 6 + c] = static_cast<float>(ro6.v[c]);
    }
    for (int c = 0; c < 3; ++c) {
      obj9[static_cast<size_t>(f) * 9 + 6 + c] = static_cast<float>(to[c]);
      got[static_cast<size_t>(f) * 3 + c] = static_cast<float>(to[c]);
      gt[static_cast<size_t>(f) * 3 + c] = static_cast<float>(fr.hand.trans[c]);
    }

    // 246-dim hand branch descriptor: per-joint local 6d rotations, hand
    // translation, wrist-relative object translation, and the object pose
    // expressed in every joint frame.
    size_t h0 = static_cast<size_t>(f) * kHandDescDim;
    for (int j = 0; j < kJointCount; ++j) {
      Rot6d rj = rot6d_encode(rodrigues(fr.hand.theta[j]));
      for (int c = 0; c < 6; ++c) {
        hd[h0 + static_cast<size_t>(j) * 6 + c] = static_cast<float>(rj.v[c]);
        gr[static_cast<size_t>(f) * 96 + static_cast<size_t>(j) * 6 + c] =
            static_cast<float>(rj.v[c]);
      }
      Mat3 Rj = fk.transforms[j].block<3, 3>(0, 0);
      Rot6d rel_r = rot6d_encode(Rj.transpose() * Ro);
      Vec3 rel_t = Rj.transpose() * (to - fk.positions[j]);
      size_t base = h0 + 102 + static_cast<size_t>(j) * 9;
      for (int c = 0; c < 6; ++c) hd[base + c] = static_cast<float>(rel_r.v[c]);
      for (int c = 0; c < 3; ++c) hd[base + 6 + c] = static_cast<float>(rel_t[c]);
    }
    for (int c = 0; c < 3; ++c) {
      hd[h0 + 96 + c] = static_cast<float>(fr.hand.trans[c]);
      hd[h0 + 99 + c] = static_cast<float>((to - fk.positions[0])[c]);
    }
  }

  in.desc = Tensor(Shape{N, P, kDescriptorDim}, std::move(desc));
  in.obj_pose9 = Tensor(Shape{N, kObjPoseDim}, std::move(obj9));
  in.hand_desc = Tensor(Shape{N, kHandDescDim}, std::move(hd));
  in.gt_rot6d = Tensor(Shape{N, 96}, std::move(gr));
  in.gt_trans = Tensor(Shape{N, 3}, std::move(gt));
  in.gt_obj_rot6d = Tensor(Shape{N, 6}, std::move(gor));
  in.gt_obj_trans = Tensor(Shape{N, 3}, std::move(got));
  return in;
}

// ---------------------------------------------------------------------------
// encode / decode
// ---------------------------------------------------------------------------

struct LatentSequence {
  int frames = 0;  // decoded sequence length, 4 * steps
  Tensor z_h, z_o;            // [L, 32]
  Tensor mu_h, logvar_h;      // [L, 32]
  Tensor mu_o, logvar_o;
};

namespace vaedetail {

inline Tensor spatial_features(const VaeModel& m, Tensor desc) {
  const int N = desc.dim(0), P = desc.dim(1);
  Tensor x = reshape(desc, Shape{N * P, kDescriptorDim});
  x = silu(linear(x, m.sw1, m.sb1));
  x = silu(linear(x, m.sw2, m.sb2));
  Tensor pooled = reduce_max(reshape(x, Shape{N, P, m.cfg.spatial_h2}), 1);
  return linear(pooled, m.sw3, m.sb3);
}

// [N, fuse_out] frame features -> (mu, logvar) at stride 4, each [L, latent].
inline std::pair<Tensor, Tensor> encode_branch(const VaeModel& m, const VaeModel::Branch& b,
                                               Tensor fs, Tensor pose) {
  Tensor x = concat({fs, pose}, 1);
  x = silu(linear(x, b.fw1, b.fb1));
  x = silu(linear(x, b.fw2, b.fb2));
  Tensor c = permute(x, {1, 0});  // [C, N]
  c = silu(conv1d(c, b.ec1w, b.ec1b, 2, 1));
  c = silu(conv1d(c, b.ec2w, b.ec2b, 2, 1));
  c = conv1d(c, b.ehw, b.ehb, 1, 1);  // [2*latent, L]
  Tensor mu = permute(slice(c, 0, 0, m.cfg.latent), {1, 0});
  Tensor logvar = clamp(permute(slice(c, 0, m.cfg.latent, m.cfg.latent), {1, 0}), -12.0f, 6.0f);
  return {mu, logvar};
}

// [L, Cin] codes -> [N, out] frame outputs via two upsampling stages.
inline Tensor decode_branch(const VaeModel::Branch& b, Tensor z) {
  Tensor c = permute(z, {1, 0});  // [Cin, L]
  c = silu(conv1d(c, b.dc1w, b.dc1b, 1, 1));
  c = upsample2x_linear(c);
  c = silu(conv1d(c, b.dc2w, b.dc2b, 1, 1));
  c = upsample2x_linear(c);
  c = conv1d(c, b.dhw, b.dhb, 1, 1);
  return permute(c, {1, 0});
}

inline Tensor gaussian_like(Tensor t, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(t.size()));
  for (float& x : v) x = rng.normalf();
  return Tensor(t.shape(), std::move(v));
}

}  // namespace vaedetail

inline LatentSequence encode(const VaeModel& m, const VaeInput& in, Rng& rng) {
  if (in.frames % 4 != 0)
    throw std::invalid_argument("encode: frame count " + std::to_string(in.frames) +
                                " not divisible by 4");
  Tensor fs = vaedetail::spatial_features(m, in.desc);
  LatentSequence lat;
  lat.frames = in.frames;
  std::tie(lat.mu_o, lat.logvar_o) = vaedetail::encode_branch(m, m.obj, fs, in.obj_pose9);
  std::tie(lat.mu_h, lat.logvar_h) = vaedetail::encode_branch(m, m.hand, fs, in.hand_desc);
  auto sample = [&](Tensor mu, Tensor logvar) {
    Tensor eps = vaedetail::gaussian_like(mu, rng);
    return add(mu, mul(eps, exp_t(scale(logvar, 0.5f))));
  };
  lat.z_o = sample(lat.mu_o, lat.logvar_o);
  lat.z_h = sample(lat.mu_h, lat.logvar_h);
  return lat;
}

struct DecodeOut {
  Tensor hand_rot6d;     // [N, 96]
  Tensor hand_trans_rel; // [N, 3] relative to the decoded object translation
  Tensor hand_trans;     // [N, 3] absolute (object part detached)
  Tensor obj_rot6d;      // [N, 6]
  Tensor obj_trans;      // [N, 3]
};

// The object code conditioning the hand decoder and the object translation
// used to re-absolutize the hand translation are both detached, so hand
// reconstruction gradients never reach the object branch.
inline DecodeOut decode(const VaeModel& m, Tensor z_h, Tensor z_o) {
  if (z_h.ndim() != 2 || z_o.ndim() != 2 || z_h.dim(0) != z_o.dim(0) ||
      z_h.dim(1) != m.cfg.latent || z_o.dim(1) != m.cfg.latent)
    throw std::invalid_argument("decode: latent shape mismatch, " + shape_str(z_h.shape()) +
                                " vs " + shape_str(z_o.shape()));
  DecodeOut out;
  Tensor o = vaedetail::decode_branch(m.obj, z_o);
  out.obj_rot6d = slice(o, 1, 0, 6);
  out.obj_trans = slice(o, 1, 6, 3);
  Tensor h = vaedetail::decode_branch(m.hand, concat({z_h, stop_gradient(z_o)}, 1));
  out.hand_rot6d = slice(h, 1, 0, 96);
  out.hand_trans_rel = slice(h, 1, 96, 3);
  out.hand_trans = add(out.hand_trans_rel, stop_gradient(out.obj_trans));
  return out;
}

// Converts decoded frame parameters back to a motion sequence. Gram-Schmidt
// with an epsilon guard so even untrained outputs yield proper rotations.
inline MotionSequence decode_to_sequence(const DecodeOut& d, double fps = 30.0) {
  auto gs = [](const float* v) {
    Vec3 a1(v[0], v[1], v[2]), a2(v[3], v[4], v[5]);
    if (a1.norm() < 1e-6) a1 = Vec3(1, 0, 0);
    Vec3 b1 = a1.normalized();
    Vec3 u2 = a2 - a2.dot(b1) * b1;
    if (u2.norm() < 1e-6) u2 = b1.unitOrthogonal();
    Vec3 b2 = u2.normalized();
    Mat3 R;
    R.col(0) = b1;
    R.col(1) = b2;
    R.col(2) = b1.cross(b2);
    return R;
  };
  const int N = d.hand_rot6d.dim(0);
  MotionSequence seq;
  seq.fps = fps;
  seq.frames.resize(static_cast<size_t>(N));
  for (int f = 0; f < N; ++f) {
    Frame& fr = seq.frames[static_cast<size_t>(f)];
    for (int j = 0; j < kJointCount; ++j) {
      Mat3 R = gs(d.hand_rot6d.data() + static_cast<int64_t>(f) * 96 + 6 * j);
      Eigen::AngleAxisd aa(R);
      fr.hand.theta[j] = canonicalize_axis_angle(aa.angle() * aa.axis());
    }
    for (int c = 0; c < 3; ++c)
      fr.hand.trans[c] = d.hand_trans.at(static_cast<int64_t>(f) * 3 + c);
    Mat3 Ro = gs(d.obj_rot6d.data() + static_cast<int64_t>(f) * 6);
    fr.obj_T = Mat4::Identity();
    fr.obj_T.block<3, 3>(0, 0) = Ro;
    for (int c = 0; c < 3; ++c)
      fr.obj_T(c, 3) = d.obj_trans.at(static_cast<int64_t>(f) * 3 + c);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

// KL(q || N(0,1)) summed over latent dims, averaged over steps:
// 0.5 * (mu^2 + sigma^2 - 1 - log sigma^2).
inline Tensor kl_divergence(Tensor mu, Tensor logvar) {
  Tensor per = add(sub(square(mu), logvar), add_scalar(exp_t(logvar), -1.0f));
  const int steps = mu.ndim() >= 1 ? mu.dim(0) : 1;
  return scale(sum_all(per), 0.5f / static_cast<float>(std::max(1, steps)));
}

struct VaeLossTerms {
  Tensor total, pose, trans, mesh, obj_rot, obj_trans, kl_h, kl_o;
};

inline VaeLossTerms vae_loss(const VaeModel& m, const VaeInput& in, Rng& rng) {
  LatentSequence lat = encode(m, in, rng);
  DecodeOut dec = decode(m, lat.z_h, lat.z_o);

  VaeLossTerms t;
  t.pose = l1_loss(dec.hand_rot6d, in.gt_rot6d);
  Tensor gt_rel = sub(in.gt_trans, in.gt_obj_trans);
  t.trans = l1_loss(dec.hand_trans_rel, gt_rel);
  t.obj_rot = l1_loss(dec.obj_rot6d, in.gt_obj_rot6d);
  t.obj_trans = l1_loss(dec.obj_trans, in.gt_obj_trans);

  auto offsets = vaedetail::bone_sample_offsets(m.tree, m.cfg.samples_per_bone);
  auto pred_hand = vaedetail::diff_forward_kinematics(m.tree, dec.hand_rot6d, dec.hand_trans);
  Tensor pred_verts = vaedetail::diff_mesh_vertices(pred_hand, offsets);
  // ground-truth vertices involve only untracked constants; nothing is taped
  auto gt_hand = vaedetail::diff_forward_kinematics(m.tree, in.gt_rot6d, in.gt_trans);
  Tensor gt_verts = vaedetail::diff_mesh_vertices(gt_hand, offsets);
  t.mesh = l1_loss(pred_verts, gt_verts);

  t.kl_h = kl_divergence(lat.mu_h, lat.logvar_h);
  t.kl_o = kl_divergence(lat.mu_o, lat.logvar_o);
  Tensor recon = add(add(t.pose, t.trans), add(t.mesh, add(t.obj_rot, t.obj_trans)));
  t.total = add(recon, scale(add(t.kl_h, t.kl_o), m.cfg.beta));
  return t;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct VaeTrainItem {
  MotionSequence seq;  // normalized
  PointMatrix cloud;   // canonical-frame object surface points
};

struct VaeTrainConfig {
  int steps = 2000;
  int batch = 2;
  uint64_t seed = 1;
  AdamWConfig opt;
  bool augment = true;
  float ema_decay = 0.9999f;
  int checkpoint_every = 0;  // 0 disables
  std::string checkpoint_prefix;
};

struct VaeTrainResult {
  std::vector<float> losses;
  int steps_done = 0;
  bool aborted = false;  // NaN loss; parameters restored to the last good step
};

// One random global rotation about the origin applied to the whole scene.
inline MotionSequence rotate_scene(const MotionSequence& seq, const Mat3& R) {
  MotionSequence out = seq;
  Mat4 G = Mat4::Identity();
  G.block<3, 3>(0, 0) = R;
  for (Frame& fr : out.frames) {
    fr.obj_T = G * fr.obj_T;
    Mat3 R0 = rodrigues(fr.hand.theta[0]);
    Eigen::AngleAxisd aa(R * R0);
    fr.hand.theta[0] = canonicalize_axis_angle(aa.angle() * aa.axis());
    fr.hand.trans = R * fr.hand.trans;
  }
  return out;
}

inline VaeTrainResult train_vae(VaeModel& model, const std::vector<VaeTrainItem>& corpus,
                                const VaeTrainConfig& cfg, Ema* ema = nullptr) {
  if (corpus.empty()) throw std::invalid_argument("train_vae: empty corpus");
  Rng rng(cfg.seed);
  AdamW opt(cfg.opt);

  std::vector<VaeInput> fixed;
  if (!cfg.augment) {
    fixed.reserve(corpus.size());
    for (const auto& item : corpus)
      fixed.push_back(build_vae_input(item.seq, item.cloud, model.tree, model.cfg.cloud_points));
  }

  // Last-good parameter snapshot for NaN rollback.
  std::vector<std::vector<float>> good;
  auto snapshot = [&]() {
    good.clear();
    for (auto& [name, p] : model.params.items())
      good.emplace_back(p.data(), p.data() + p.size());
  };
  auto restore = [&]() {
    size_t k = 0;
    for (auto& [name, p] : model.params.items())
      std::copy(good[k].begin(), good[k].end(), p.data()), ++k;
  };
  snapshot();

  VaeTrainResult res;
  for (int step = 0; step < cfg.steps; ++step) {
    GradTape tape;
    Tensor batch_loss = Tensor::scalar(0.0f);
    for (int b = 0; b < cfg.batch; ++b) {
      size_t idx = static_cast<size_t>(rng.uniform_int(corpus.size()));
      VaeInput in;
      if (cfg.augment) {
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        if (axis.norm() < 1e-9) axis = Vec3(0, 0, 1);
        Mat3 R = rodrigues(axis.normalized() * rng.uniform(0.0, 2.0 * M_PI));
        MotionSequence rot = rotate_scene(corpus[idx].seq, R);
        in = build_vae_input(rot, corpus[idx].cloud, model.tree, model.cfg.cloud_points);
      } else {
        in = fixed[idx];
      }
      VaeLossTerms terms = vae_loss(model, in, rng);
      batch_loss = add(batch_loss, terms.total);
    }
    batch_loss = scale(batch_loss, 1.0f / static_cast<float>(cfg.batch));
    float lv = batch_loss.at(0);
    if (!std::isfinite(lv)) {
      restore();
      res.aborted = true;
      return res;
    }
    model.params.zero_grad();
    tape.backward(batch_loss);
    bool grads_ok = true;
    for (auto& [name, p] : model.params.items())
      for (int64_t i = 0; i < p.size() && grads_ok; ++i)
        if (!std::isfinite(p.grad()[i])) grads_ok = false;
    if (!grads_ok) {
      restore();
      res.aborted = true;
      return res;
    }
    opt.step(model.params);
    if (ema) ema->update(model.params);
    res.losses.push_back(lv);
    res.steps_done = step + 1;
    snapshot();
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        !cfg.checkpoint_prefix.empty())
      save_checkpoint(cfg.checkpoint_prefix + "_" + std::to_string(step + 1) + ".hoft",
                      model.params);
  }
  return res;
}

}  // namespace hoflow
