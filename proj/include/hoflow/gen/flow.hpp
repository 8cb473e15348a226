#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoflow/core/checkpoint.hpp"
#include "hoflow/core/ops.hpp"
#include "hoflow/core/optim.hpp"
#include "hoflow/core/params.hpp"
#include "hoflow/core/rng.hpp"
#include "hoflow/core/tensor.hpp"
#include "hoflow/vae/vae.hpp"

namespace hoflow {

constexpr int kTokenDim = 128;  // [z_o^r | z_h^r | z_o^l | z_h^l], 32 each
constexpr int kTextDim = 512;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct GenConfig {
  int d = 1024;          // transformer width and condition dim
  int heads = 16;
  int mlp_dim = 4096;
  float dropout = 0.2f;
  int vel_blocks = 16;   // residual blocks in the velocity network
  int vel_width = 1792;
  int tau_dim = 256;     // sinusoidal timestep features
  int bps_dim = kBpsSize;
  bool ddpm = false;     // denoising-diffusion objective on the same network

  static GenConfig desk() {
    GenConfig c;
    c.d = 256;
    c.heads = 4;
    c.mlp_dim = 512;
    c.vel_blocks = 4;
    c.vel_width = 256;
    return c;
  }
};

struct SamplerConfig {
  int ode_steps = 18;
  int unmask_iters = 8;
  float cfg_weight = 1.5f;
  uint64_t seed = 0;
};

inline SamplerConfig sampler_from_json(const nlohmann::json& j) {
  SamplerConfig c;
  c.ode_steps = j.value("ode_steps", c.ode_steps);
  c.unmask_iters = j.value("unmask_iters", c.unmask_iters);
  c.cfg_weight = j.value("cfg_weight", c.cfg_weight);
  c.seed = j.value("seed", c.seed);
  if (c.ode_steps < 1 || c.unmask_iters < 1)
    throw std::invalid_argument("sampler config: steps and iterations must be >= 1");
  return c;
}

inline nlohmann::json sampler_to_json(const SamplerConfig& c) {
  return nlohmann::json{{"ode_steps", c.ode_steps},
                        {"unmask_iters", c.unmask_iters},
                        {"cfg_weight", c.cfg_weight},
                        {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// token packing
// ---------------------------------------------------------------------------

// [L,128] per-step tokens; a missing left hand duplicates the right-hand
// codes into the left slots.
inline Tensor pack_tokens(const Tensor& z_o_r, const Tensor& z_h_r, const Tensor* z_o_l = nullptr,
                          const Tensor* z_h_l = nullptr) {
  if (z_o_r.ndim() != 2 || z_o_r.dim(1) != 32 || z_h_r.shape() != z_o_r.shape())
    throw std::invalid_argument("pack_tokens: right-hand codes must both be [L,32]");
  if ((z_o_l == nullptr) != (z_h_l == nullptr))
    throw std::invalid_argument("pack_tokens: left-hand codes must come in pairs");
  if (z_o_l && (z_o_l->shape() != z_o_r.shape() || z_h_l->shape() != z_o_r.shape()))
    throw std::invalid_argument("pack_tokens: left-hand length differs from right");
  Tensor ol = z_o_l ? *z_o_l : z_o_r;
  Tensor hl = z_h_l ? *z_h_l : z_h_r;
  return concat({z_o_r, z_h_r, ol, hl}, 1);
}

struct UnpackedTokens {
  Tensor z_o_r, z_h_r, z_o_l, z_h_l;  // [L,32] each
};

inline UnpackedTokens unpack_tokens(Tensor tokens) {
  if (tokens.ndim() != 2 || tokens.dim(1) != kTokenDim)
    throw std::invalid_argument("unpack_tokens: expected [L,128], got " +
                                shape_str(tokens.shape()));
  return {slice(tokens, 1, 0, 32), slice(tokens, 1, 32, 32), slice(tokens, 1, 64, 32),
          slice(tokens, 1, 96, 32)};
}

// ---------------------------------------------------------------------------
// text embedding: hashed words -> fixed random codebook, mean-pooled
// ---------------------------------------------------------------------------

inline std::vector<float> embed_text(const std::string& prompt) {
  constexpr uint64_t kFnvOffset = 1469598103934665603ull;
  constexpr uint64_t kFnvPrime = 1099511628211ull;
  std::vector<float> out(kTextDim, 0.0f);
  int words = 0;
  size_t i = 0;
  while (i < prompt.size()) {
    while (i < prompt.size() && std::isspace(static_cast<unsigned char>(prompt[i]))) ++i;
    if (i >= prompt.size()) break;
    uint64_t h = kFnvOffset;
    while (i < prompt.size() && !std::isspace(static_cast<unsigned char>(prompt[i]))) {
      h = (h ^ static_cast<uint64_t>(std::tolower(static_cast<unsigned char>(prompt[i])))) *
          kFnvPrime;
      ++i;
    }
    Rng rng(0x9e3779b97f4a7c15ull ^ (h % 4096));  // 4096-entry codebook
    for (int c = 0; c < kTextDim; ++c) out[static_cast<size_t>(c)] += rng.normalf();
    ++words;
  }
  if (words == 0) return out;  // empty prompt: the dropped-condition vector
  double n2 = 0;
  for (float v : out) n2 += static_cast<double>(v) * v;
  const float inv = n2 > 0 ? static_cast<float>(1.0 / std::sqrt(n2)) : 0.0f;
  for (float& v : out) v *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

struct GenModel {
  GenConfig cfg;
  ParamSet params;

  Tensor wt, wb;                       // condition projections, no bias
  Tensor embed_w, embed_b;             // token embed 128 -> d
  Tensor mask_token;                   // learnable token-space [MASK]
  Tensor ln1g, ln1b, ln2g, ln2b;       // transformer norms
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor m1w, m1b, m2w, m2b;           // transformer MLP
  Tensor modw, modb;                   // c -> 6d modulation, zero-init

  Tensor vt_w, vt_b;                   // tau features -> vel width
  Tensor vh_w, vh_b;                   // h_t -> vel width
  Tensor vin_w, vin_b;                 // token 128 -> vel width
  struct VBlock {
    Tensor lng, lnb, w1, b1, w2, b2, modw, modb;
  };
  std::vector<VBlock> blocks;
  Tensor vout_w, vout_b;               // vel width -> 128, zero-init

  GenModel(GenConfig c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    auto lin = [&](const std::string& n, int in, int out) {
      return std::pair<Tensor, Tensor>(params.add_normal(n + ".w", Shape{in, out}, in, rng),
                                       params.add_zeros(n + ".b", Shape{out}));
    };
    auto zeros = [&](const std::string& n, int in, int out) {
      return std::pair<Tensor, Tensor>(params.add_zeros(n + ".w", Shape{in, out}),
                                       params.add_zeros(n + ".b", Shape{out}));
    };
    wt = params.add_normal("cond.text.w", Shape{kTextDim, cfg.d}, kTextDim, rng);
    wb = params.add_normal("cond.bps.w", Shape{cfg.bps_dim, cfg.d}, cfg.bps_dim, rng);
    std::tie(embed_w, embed_b) = lin("mar.embed", kTokenDim, cfg.d);
    mask_token = params.add_zeros("mar.mask_token", Shape{kTokenDim});
    ln1g = params.add_full("mar.ln1.g", Shape{cfg.d}, 1.0f);
    ln1b = params.add_zeros("mar.ln1.b", Shape{cfg.d});
    ln2g = params.add_full("mar.ln2.g", Shape{cfg.d}, 1.0f);
    ln2b = params.add_zeros("mar.ln2.b", Shape{cfg.d});
    std::tie(wq, bq) = lin("mar.attn.q", cfg.d, cfg.d);
    std::tie(wk, bk) = lin("mar.attn.k", cfg.d, cfg.d);
    std::tie(wv, bv) = lin("mar.attn.v", cfg.d, cfg.d);
    std::tie(wo, bo) = lin("mar.attn.o", cfg.d, cfg.d);
    std::tie(m1w, m1b) = lin("mar.mlp.l1", cfg.d, cfg.mlp_dim);
    std::tie(m2w, m2b) = lin("mar.mlp.l2", cfg.mlp_dim, cfg.d);
    std::tie(modw, modb) = zeros("mar.adaln", cfg.d, 6 * cfg.d);
    std::tie(vt_w, vt_b) = lin("vel.tau", cfg.tau_dim, cfg.vel_width);
    std::tie(vh_w, vh_b) = lin("vel.cond", cfg.d, cfg.vel_width);
    std::tie(vin_w, vin_b) = lin("vel.in", kTokenDim, cfg.vel_width);
    blocks.resize(static_cast<size_t>(cfg.vel_blocks));
    for (int i = 0; i < cfg.vel_blocks; ++i) {
      const std::string p = "vel.block" + std::to_string(i);
      VBlock& b = blocks[static_cast<size_t>(i)];
      b.lng = params.add_full(p + ".ln.g", Shape{cfg.vel_width}, 1.0f);
      b.lnb = params.add_zeros(p + ".ln.b", Shape{cfg.vel_width});
      std::tie(b.w1, b.b1) = lin(p + ".l1", cfg.vel_width, cfg.vel_width);
      std::tie(b.w2, b.b2) = lin(p + ".l2", cfg.vel_width, cfg.vel_width);
      std::tie(b.modw, b.modb) = zeros(p + ".adaln", cfg.vel_width, 3 * cfg.vel_width);
    }
    std::tie(vout_w, vout_b) = zeros("vel.out", cfg.vel_width, kTokenDim);
  }
};

// c = W_text e_text + W_bps e_bps, both rows [1, dim].
inline Tensor fuse_condition(Tensor e_text, Tensor e_bps, Tensor w_text, Tensor w_bps) {
  if (e_text.ndim() != 2 || e_text.dim(1) != w_text.dim(0) || e_bps.ndim() != 2 ||
      e_bps.dim(1) != w_bps.dim(0))
    throw std::invalid_argument("fuse_condition: embedding dims do not match projections");
  return add(matmul(e_text, w_text), matmul(e_bps, w_bps));
}

// ---------------------------------------------------------------------------
// transformer
// ---------------------------------------------------------------------------

namespace gendetail {

inline Tensor sinusoidal_rows(const std::vector<double>& pos, int dim, double base = 10000.0) {
  const int n = static_cast<int>(pos.size());
  std::vector<float> v(static_cast<size_t>(n) * static_cast<size_t>(dim));
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < dim / 2; ++i) {
      double f = pos[static_cast<size_t>(r)] / std::pow(base, (2.0 * i) / dim);
      v[static_cast<size_t>(r) * dim + 2 * i] = static_cast<float>(std::sin(f));
      v[static_cast<size_t>(r) * dim + 2 * i + 1] = static_cast<float>(std::cos(f));
    }
  return Tensor(Shape{n, dim}, std::move(v));
}

inline Tensor gaussian(Shape shape, Rng& rng) {
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (float& x : v) x = rng.normalf();
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace gendetail

// Single pre-norm transformer block with AdaLN modulation from the condition
// and zero-initialized gates, so at initialization H is exactly the embedded
// input plus its positional encoding.
inline Tensor mar_forward(const GenModel& m, Tensor tokens, Tensor c, Rng* drop_rng = nullptr,
                          const std::vector<int>* positions = nullptr) {
  if (tokens.ndim() != 2 || tokens.dim(1) != kTokenDim || tokens.dim(0) < 1)
    throw std::invalid_argument("mar_forward: expected nonempty [L,128] tokens, got " +
                                shape_str(tokens.shape()));
  const int L = tokens.dim(0);
  const int d = m.cfg.d, h = m.cfg.heads, dh = d / h;
  std::vector<double> pos(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i)
    pos[static_cast<size_t>(i)] = positions ? (*positions)[static_cast<size_t>(i)] : i;
  Tensor x = add(linear(tokens, m.embed_w, m.embed_b), gendetail::sinusoidal_rows(pos, d));

  Tensor mod = linear(silu(c), m.modw, m.modb);  // [1, 6d]
  auto mpart = [&](int i) { return slice(mod, 1, i * d, d); };
  auto modulate = [&](Tensor t, Tensor shift, Tensor scl) {
    return add(mul(t, add_scalar(scl, 1.0f)), shift);
  };

  const bool training = drop_rng != nullptr;
  auto drop = [&](Tensor t) {
    return training ? dropout(t, m.cfg.dropout, *drop_rng, true) : t;
  };

  Tensor a_in = modulate(layer_norm(x, m.ln1g, m.ln1b), mpart(0), mpart(1));
  Tensor q = reshape(linear(a_in, m.wq, m.bq), Shape{L, h, dh});
  Tensor k = reshape(linear(a_in, m.wk, m.bk), Shape{L, h, dh});
  Tensor v = reshape(linear(a_in, m.wv, m.bv), Shape{L, h, dh});
  q = permute(q, {1, 0, 2});
  k = permute(k, {1, 0, 2});
  v = permute(v, {1, 0, 2});
  Tensor att = softmax_lastdim(
      scale(matmul(q, permute(k, {0, 2, 1})), 1.0f / std::sqrt(static_cast<float>(dh))));
  Tensor ao = reshape(permute(matmul(drop(att), v), {1, 0, 2}), Shape{L, d});
  x = add(x, mul(drop(linear(ao, m.wo, m.bo)), mpart(2)));

  Tensor f_in = modulate(layer_norm(x, m.ln2g, m.ln2b), mpart(3), mpart(4));
  Tensor f = linear(gelu(linear(f_in, m.m1w, m.m1b)), m.m2w, m.m2b);
  return add(x, mul(drop(f), mpart(5)));
}

// ---------------------------------------------------------------------------
// flow matching primitives
// ---------------------------------------------------------------------------

inline void check_tau(float tau) {
  if (!(tau >= 0.0f && tau <= 1.0f))
    throw std::invalid_argument("flow time " + std::to_string(tau) + " outside [0,1]");
}

inline Tensor fm_path(Tensor x0, Tensor x1, float tau) {
  check_tau(tau);
  if (x0.shape() != x1.shape())
    throw std::invalid_argument("fm_path: endpoint shapes differ");
  return add(scale(x1, tau), scale(x0, 1.0f - tau));
}

// The straight-path velocity target; constant in the flow time.
inline Tensor fm_velocity(Tensor x0, Tensor x1) {
  if (x0.shape() != x1.shape())
    throw std::invalid_argument("fm_velocity: endpoint shapes differ");
  return sub(x1, x0);
}

inline float cosine_mask_ratio(int i, int total) {
  if (total < 1 || i < 0 || i > total)
    throw std::invalid_argument("cosine_mask_ratio: iteration " + std::to_string(i) +
                                " outside [0," + std::to_string(total) + "]");
  if (i == total) return 0.0f;  // cos(pi/2) rounds to 6e-17, not 0
  return std::cos(0.5 * M_PI * static_cast<double>(i) / total);
}

// Tokens revealed per iteration under the cosine schedule. Counts are capped
// so every iteration reveals at least one token while any remain; they sum to
// L and, with K = L, are exactly one per iteration.
inline std::vector<int> unmask_counts(int L, int K) {
  if (L < 1 || K < 1) throw std::invalid_argument("unmask_counts: L and K must be >= 1");
  std::vector<int> out;
  int prev = L;
  for (int it = 1; it <= K; ++it) {
    int keep = std::min(
        static_cast<int>(std::ceil(static_cast<double>(cosine_mask_ratio(it, K)) * L)),
        std::max(0, L - it));
    if (it == K) keep = 0;
    keep = std::min(keep, prev);
    out.push_back(prev - keep);
    prev = keep;
  }
  return out;
}

// 80% mask-token / 10% gaussian noise / 10% unchanged on the masked set.
inline Tensor corrupt_tokens(const GenModel& m, Tensor tokens, const std::vector<int>& masked,
                             Rng& rng) {
  const int L = tokens.dim(0);
  // 0 = keep, 1 = mask token, 2 = gaussian noise
  std::vector<int> category(static_cast<size_t>(L), 0);
  for (int p : masked) {
    if (p < 0 || p >= L)
      throw std::invalid_argument("corrupt_tokens: position " + std::to_string(p) +
                                  " out of range");
    double u = rng.uniform();
    category[static_cast<size_t>(p)] = u < 0.8 ? 1 : (u < 0.9 ? 2 : 0);
  }
  Tensor mask_row = reshape(m.mask_token, Shape{1, kTokenDim});
  std::vector<Tensor> rows;
  rows.reserve(static_cast<size_t>(L));
  for (int p = 0; p < L; ++p) {
    switch (category[static_cast<size_t>(p)]) {
      case 1: rows.push_back(mask_row); break;
      case 2: rows.push_back(gendetail::gaussian(Shape{1, kTokenDim}, rng)); break;
      default: rows.push_back(slice(tokens, 0, p, 1));
    }
  }
  return concat(std::move(rows), 0);
}

// ---------------------------------------------------------------------------
// velocity network
// ---------------------------------------------------------------------------

// v(x, tau; h): residual MLP with AdaLN from (h + tau features) per block and
// a zero-initialized output head.
inline Tensor velocity_forward(const GenModel& m, Tensor x, const std::vector<float>& taus,
                               Tensor h) {
  if (x.ndim() != 2 || x.dim(1) != kTokenDim)
    throw std::invalid_argument("velocity_forward: expected [M,128] states");
  if (h.ndim() != 2 || h.dim(0) != x.dim(0) || h.dim(1) != m.cfg.d)
    throw std::invalid_argument("velocity_forward: context shape mismatch");
  if (static_cast<int>(taus.size()) != x.dim(0))
    throw std::invalid_argument("velocity_forward: one flow time per row required");
  std::vector<double> tpos;
  for (float t : taus) {
    check_tau(t);
    tpos.push_back(1000.0 * t);
  }
  Tensor cond = add(linear(gendetail::sinusoidal_rows(tpos, m.cfg.tau_dim), m.vt_w, m.vt_b),
                    linear(h, m.vh_w, m.vh_b));
  cond = silu(cond);
  Tensor y = linear(x, m.vin_w, m.vin_b);
  const int w = m.cfg.vel_width;
  for (const auto& b : m.blocks) {
    Tensor mod = linear(cond, b.modw, b.modb);
    Tensor t = layer_norm(y, b.lng, b.lnb);
    t = add(mul(t, add_scalar(slice(mod, 1, w, w), 1.0f)), slice(mod, 1, 0, w));
    t = linear(silu(linear(t, b.w1, b.b1)), b.w2, b.b2);
    y = add(y, mul(t, slice(mod, 1, 2 * w, w)));
  }
  return linear(y, m.vout_w, m.vout_b);
}

// ---------------------------------------------------------------------------
// training loss
// ---------------------------------------------------------------------------

// Masked flow matching: sample a cosine-schedule mask ratio, corrupt the
// masked tokens, and regress the straight-path velocity on the masked set.
// The text condition is dropped with probability 0.2. With cfg.ddpm the same
// network instead predicts the noise of a variance-preserving forward process.
// Optional view into one loss evaluation, for tests and debugging.
struct FmLossProbe {
  std::vector<int> masked;
  Tensor pred, target;  // [|M|,128]
};

inline Tensor fm_train_loss(const GenModel& m, Tensor tokens, Tensor e_text, Tensor e_bps,
                            Rng& rng, FmLossProbe* probe = nullptr) {
  const int L = tokens.dim(0);
  std::vector<int> masked;
  while (masked.empty()) {
    // the mask ratio follows the cosine schedule at a uniform random phase
    float ratio = static_cast<float>(std::cos(0.5 * M_PI * rng.uniform()));
    int count = std::min(L, static_cast<int>(std::ceil(static_cast<double>(ratio) * L)));
    std::vector<int> perm(static_cast<size_t>(L));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = L - 1; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)],
                perm[static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)))]);
    masked.assign(perm.begin(), perm.begin() + count);
  }
  std::sort(masked.begin(), masked.end());

  Tensor text = rng.uniform() < 0.2 ? Tensor(e_text.shape(), 0.0f) : e_text;
  Tensor c = fuse_condition(text, e_bps, m.wt, m.wb);
  Tensor corrupted = corrupt_tokens(m, tokens, masked, rng);
  Tensor H = mar_forward(m, corrupted, c, &rng);

  const int M = static_cast<int>(masked.size());
  Tensor x1 = gather_rows(stop_gradient(tokens), masked);
  Tensor x0 = gendetail::gaussian(Shape{M, kTokenDim}, rng);
  std::vector<float> taus(static_cast<size_t>(M));
  for (auto& t : taus) t = rng.uniformf();

  if (m.cfg.ddpm) {
    // variance-preserving corruption x_t = sqrt(abar) x1 + sqrt(1-abar) eps
    std::vector<float> xt(static_cast<size_t>(M) * kTokenDim);
    for (int r = 0; r < M; ++r) {
      float abar = std::cos(0.5f * static_cast<float>(M_PI) * taus[static_cast<size_t>(r)]);
      abar *= abar;
      for (int cix = 0; cix < kTokenDim; ++cix) {
        int64_t i = static_cast<int64_t>(r) * kTokenDim + cix;
        xt[static_cast<size_t>(i)] =
            std::sqrt(abar) * x1.at(i) + std::sqrt(1.0f - abar) * x0.at(i);
      }
    }
    Tensor pred = velocity_forward(m, Tensor(Shape{M, kTokenDim}, std::move(xt)), taus,
                                   gather_rows(H, masked));
    if (probe) *probe = {masked, pred, x0};
    return mse_loss(pred, x0);  // x0 plays the role of the noise target
  }

  std::vector<float> xt(static_cast<size_t>(M) * kTokenDim);
  for (int r = 0; r < M; ++r)
    for (int cix = 0; cix < kTokenDim; ++cix) {
      int64_t i = static_cast<int64_t>(r) * kTokenDim + cix;
      xt[static_cast<size_t>(i)] =
          taus[static_cast<size_t>(r)] * x1.at(i) + (1.0f - taus[static_cast<size_t>(r)]) * x0.at(i);
    }
  Tensor pred = velocity_forward(m, Tensor(Shape{M, kTokenDim}, std::move(xt)), taus,
                                 gather_rows(H, masked));
  Tensor target = fm_velocity(x0, x1);
  if (probe) *probe = {masked, pred, target};
  return mse_loss(pred, target);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

// Euler integration of the guided field from gaussian noise. h_uncond left
// undefined disables guidance (w is ignored).
inline std::vector<float> sample_token(const GenModel& m, Tensor h_cond, Tensor h_uncond,
                                       int steps, float w, Rng& rng) {
  if (steps < 1) throw std::invalid_argument("sample_token: steps must be >= 1");
  Tensor x = gendetail::gaussian(Shape{1, kTokenDim}, rng);
  if (m.cfg.ddpm) {
    // ancestral sampling of the variance-preserving process, coarsest-first
    for (int s = steps; s >= 1; --s) {
      float t = static_cast<float>(s) / steps;
      float tp = static_cast<float>(s - 1) / steps;
      auto abar = [](float u) {
        float a = std::cos(0.5f * static_cast<float>(M_PI) * u);
        return a * a;
      };
      Tensor eps_c = velocity_forward(m, x, {t}, h_cond);
      Tensor eps = eps_c;
      if (h_uncond.defined()) {
        Tensor eps_u = velocity_forward(m, x, {t}, h_uncond);
        eps = add(eps_u, scale(sub(eps_c, eps_u), w));
      }
      float a = abar(t), ap = abar(tp);
      Tensor x0 = scale(sub(x, scale(eps, std::sqrt(1.0f - a))), 1.0f / std::sqrt(a));
      x = add(scale(x0, std::sqrt(ap)), scale(eps, std::sqrt(1.0f - ap)));
    }
  } else {
    const float dt = 1.0f / steps;
    for (int s = 0; s < steps; ++s) {
      float tau = static_cast<float>(s) / steps;
      Tensor v_c = velocity_forward(m, x, {tau}, h_cond);
      Tensor v = v_c;
      if (h_uncond.defined()) {
        Tensor v_u = velocity_forward(m, x, {tau}, h_uncond);
        v = add(v_u, scale(sub(v_c, v_u), w));
      }
      x = add(x, scale(v, dt));
    }
  }
  return std::vector<float>(x.data(), x.data() + kTokenDim);
}

// Algorithm: start fully masked, and per iteration recompute the transformer
// context on the current partial sequence, then reveal the next batch of
// positions in a fixed random priority order per the cosine schedule. An
// unmasked token is never rewritten.
inline Tensor generate_sequence(const GenModel& m, Tensor e_text, Tensor e_bps, int L,
                                const SamplerConfig& sc, Rng& rng) {
  if (L < 1) throw std::invalid_argument("generate_sequence: L must be >= 1");
  if (sc.unmask_iters < 1)
    throw std::invalid_argument("generate_sequence: iterations must be >= 1");
  const int K = sc.unmask_iters;
  std::vector<int> priority(static_cast<size_t>(L));
  std::iota(priority.begin(), priority.end(), 0);
  for (int i = L - 1; i > 0; --i)
    std::swap(priority[static_cast<size_t>(i)],
              priority[static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)))]);

  Tensor c_cond = fuse_condition(e_text, e_bps, m.wt, m.wb);
  Tensor c_uncond = fuse_condition(Tensor(e_text.shape(), 0.0f), e_bps, m.wt, m.wb);

  Tensor seq(Shape{L, kTokenDim});
  std::vector<bool> unmasked(static_cast<size_t>(L), false);
  std::vector<int> counts = unmask_counts(L, K);
  int revealed = 0;
  for (int it = 1; it <= K && revealed < L; ++it) {
    const int reveal_now = counts[static_cast<size_t>(it - 1)];
    if (reveal_now == 0) continue;
    Tensor cur = seq.clone();
    for (int p = 0; p < L; ++p)
      if (!unmasked[static_cast<size_t>(p)])
        for (int cix = 0; cix < kTokenDim; ++cix)
          cur.data()[static_cast<int64_t>(p) * kTokenDim + cix] = m.mask_token.at(cix);
    Tensor Hc = mar_forward(m, cur, c_cond);
    Tensor Hu = mar_forward(m, cur, c_uncond);
    const int until = revealed + reveal_now;
    while (revealed < until) {
      int p = priority[static_cast<size_t>(revealed)];
      std::vector<float> tok = sample_token(m, slice(Hc, 0, p, 1), slice(Hu, 0, p, 1),
                                            sc.ode_steps, sc.cfg_weight, rng);
      std::copy(tok.begin(), tok.end(), seq.data() + static_cast<int64_t>(p) * kTokenDim);
      unmasked[static_cast<size_t>(p)] = true;
      ++revealed;
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct FlowTrainItem {
  Tensor tokens;  // [L,128] frozen-encoder latents
  Tensor e_text;  // [1,512]
  Tensor e_bps;   // [1,bps_dim]
};

struct FlowTrainConfig {
  int steps = 4000;
  int batch = 4;
  uint64_t seed = 2;
  AdamWConfig opt;
  float ema_decay = 0.9999f;
  int checkpoint_every = 0;
  std::string checkpoint_prefix;
};

struct FlowTrainResult {
  std::vector<float> losses;
  int steps_done = 0;
  bool aborted = false;
};

inline FlowTrainResult train_flow(GenModel& model, const std::vector<FlowTrainItem>& corpus,
                                  const FlowTrainConfig& cfg, Ema* ema = nullptr) {
  if (corpus.empty()) throw std::invalid_argument("train_flow: empty corpus");
  Rng rng(cfg.seed);
  AdamW opt(cfg.opt);
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

  FlowTrainResult res;
  for (int step = 0; step < cfg.steps; ++step) {
    GradTape tape;
    Tensor loss = Tensor::scalar(0.0f);
    for (int b = 0; b < cfg.batch; ++b) {
      const FlowTrainItem& item = corpus[rng.uniform_int(corpus.size())];
      loss = add(loss, fm_train_loss(model, item.tokens, item.e_text, item.e_bps, rng));
    }
    loss = scale(loss, 1.0f / static_cast<float>(cfg.batch));
    float lv = loss.at(0);
    if (!std::isfinite(lv)) {
      restore();
      res.aborted = true;
      return res;
    }
    model.params.zero_grad();
    tape.backward(loss);
    bool ok = true;
    for (auto& [name, p] : model.params.items())
      for (int64_t i = 0; i < p.size() && ok; ++i)
        if (!std::isfinite(p.grad()[i])) ok = false;
    if (!ok) {
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
