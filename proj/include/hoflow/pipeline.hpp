#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hoflow/core/checkpoint.hpp"
#include "hoflow/data/synth.hpp"
#include "hoflow/gen/flow.hpp"
#include "hoflow/geom/features.hpp"
#include "hoflow/metrics/metrics.hpp"
#include "hoflow/vae/vae.hpp"

// End-to-end glue shared by the command line driver and the system tests:
// corpus loading, profile selection, latent precomputation and sampling.

namespace hoflow {

constexpr uint64_t kBasisSeed = 0x6b70u;  // fixed query set for geometry encoding

// ---------------------------------------------------------------------------
// profiles and config serialization
// ---------------------------------------------------------------------------

inline VaeConfig vae_config_for(const std::string& profile) {
  if (profile == "ci") return VaeConfig::desk();
  if (profile == "paper") return VaeConfig{};
  throw std::invalid_argument("unknown profile '" + profile + "' (expected ci or paper)");
}

inline GenConfig gen_config_for(const std::string& profile) {
  if (profile == "ci") return GenConfig::desk();
  if (profile == "paper") return GenConfig{};
  throw std::invalid_argument("unknown profile '" + profile + "' (expected ci or paper)");
}

inline nlohmann::json vae_config_to_json(const VaeConfig& c) {
  return {{"cloud_points", c.cloud_points}, {"spatial_h1", c.spatial_h1},
          {"spatial_h2", c.spatial_h2},     {"fs_dim", c.fs_dim},
          {"fuse_hidden", c.fuse_hidden},   {"fuse_out", c.fuse_out},
          {"hidden", c.hidden},             {"latent", c.latent},
          {"beta", c.beta},                 {"samples_per_bone", c.samples_per_bone}};
}

inline VaeConfig vae_config_from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.cloud_points = j.at("cloud_points");
  c.spatial_h1 = j.at("spatial_h1");
  c.spatial_h2 = j.at("spatial_h2");
  c.fs_dim = j.at("fs_dim");
  c.fuse_hidden = j.at("fuse_hidden");
  c.fuse_out = j.at("fuse_out");
  c.hidden = j.at("hidden");
  c.latent = j.at("latent");
  c.beta = j.at("beta");
  c.samples_per_bone = j.at("samples_per_bone");
  return c;
}

inline nlohmann::json gen_config_to_json(const GenConfig& c) {
  return {{"d", c.d},
          {"heads", c.heads},
          {"mlp_dim", c.mlp_dim},
          {"dropout", c.dropout},
          {"vel_blocks", c.vel_blocks},
          {"vel_width", c.vel_width},
          {"tau_dim", c.tau_dim},
          {"bps_dim", c.bps_dim},
          {"ddpm", c.ddpm}};
}

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  c.d = j.at("d");
  c.heads = j.at("heads");
  c.mlp_dim = j.at("mlp_dim");
  c.dropout = j.at("dropout");
  c.vel_blocks = j.at("vel_blocks");
  c.vel_width = j.at("vel_width");
  c.tau_dim = j.at("tau_dim");
  c.bps_dim = j.at("bps_dim");
  c.ddpm = j.at("ddpm");
  return c;
}

inline void write_config_snapshot(const std::string& dir, const nlohmann::json& cfg) {
  std::filesystem::create_directories(dir);
  std::ofstream os(std::filesystem::path(dir) / "config.json");
  if (!os) throw std::runtime_error("cannot write config snapshot in " + dir);
  os << cfg.dump(1) << "\n";
}

// Loads every matching parameter name; unknown names in the file are ignored,
// matching names with a different shape are an error.
inline int load_partial_checkpoint(const std::string& path, ParamSet& params) {
  ParamSet file = read_checkpoint(path);
  int loaded = 0;
  for (auto& [name, t] : params.items()) {
    Tensor* src = file.find(name);
    if (!src) continue;
    if (src->shape() != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file " +
                               shape_str(src->shape()) + " vs model " + shape_str(t.shape()));
    std::copy(src->data(), src->data() + src->size(), t.data());
    ++loaded;
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// corpus access
// ---------------------------------------------------------------------------

struct CorpusEntry {
  std::string file, object_id, verb, split, text;
};

struct CorpusView {
  std::string dir;
  nlohmann::json manifest;
  std::vector<ObjectSpec> objects;
  std::map<std::string, int> object_index;
  std::vector<CorpusEntry> sequences;

  const ObjectSpec& object(const std::string& id) const {
    auto it = object_index.find(id);
    if (it == object_index.end())
      throw std::invalid_argument("corpus: unknown object id '" + id + "'");
    return objects[static_cast<size_t>(it->second)];
  }

  MotionSequence load(const CorpusEntry& e) const {
    return load_motion((std::filesystem::path(dir) / e.file).string());
  }
};

// Objects are regenerated from the manifest seed, which reproduces the corpus
// builder's geometry bit for bit.
inline CorpusView load_corpus(const std::string& dir) {
  CorpusView v;
  v.dir = dir;
  std::ifstream is(std::filesystem::path(dir) / "manifest.json");
  if (!is) throw std::runtime_error("corpus: cannot open manifest in " + dir);
  is >> v.manifest;
  const uint64_t seed = v.manifest.at("seed");
  int i = 0;
  for (const auto& jo : v.manifest.at("object_list")) {
    ObjectSpec obj = make_corpus_object(i, seed);
    if (obj.id != jo.at("id").get<std::string>())
      throw std::runtime_error("corpus: manifest object '" + jo.at("id").get<std::string>() +
                               "' does not match regenerated '" + obj.id + "'");
    v.object_index[obj.id] = i++;
    v.objects.push_back(std::move(obj));
  }
  for (const auto& js : v.manifest.at("sequences"))
    v.sequences.push_back({js.at("file"), js.at("object"), js.at("verb"), js.at("split"),
                           js.at("text")});
  return v;
}

inline std::vector<VaeTrainItem> corpus_vae_items(const CorpusView& v, const std::string& split) {
  std::vector<VaeTrainItem> items;
  for (const auto& e : v.sequences) {
    if (!split.empty() && e.split != split) continue;
    items.push_back({normalize_sequence(v.load(e)), v.object(e.object_id).cloud});
  }
  return items;
}

// ---------------------------------------------------------------------------
// frozen-encoder latent targets and conditions
// ---------------------------------------------------------------------------

inline Tensor bps_condition(const ObjectSpec& obj) {
  Eigen::VectorXd enc = bps_encode(obj.cloud, basis_points(kBasisSeed));
  std::vector<float> v(static_cast<size_t>(enc.size()));
  for (int i = 0; i < enc.size(); ++i) v[static_cast<size_t>(i)] = static_cast<float>(enc[i]);
  return Tensor(Shape{1, static_cast<int>(enc.size())}, std::move(v));
}

inline Tensor text_condition(const std::string& prompt) {
  return Tensor(Shape{1, kTextDim}, embed_text(prompt));
}

// Deterministic mean codes from the frozen encoder, packed into 128-wide
// tokens (right-hand codes duplicated into the left slots).
inline std::vector<FlowTrainItem> precompute_flow_items(const VaeModel& vae, const CorpusView& v,
                                                        const std::string& split) {
  std::vector<FlowTrainItem> items;
  for (const auto& e : v.sequences) {
    if (!split.empty() && e.split != split) continue;
    const ObjectSpec& obj = v.object(e.object_id);
    MotionSequence seq = normalize_sequence(v.load(e));
    VaeInput in = build_vae_input(seq, obj.cloud, vae.tree, vae.cfg.cloud_points);
    Rng rng(0);  // unused: tokens are the posterior means
    LatentSequence lat = encode(vae, in, rng);
    items.push_back({pack_tokens(lat.mu_o, lat.mu_h), text_condition(e.text),
                     bps_condition(obj)});
  }
  return items;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

// Condition encoding, auto-regressive latent generation, decoding. L is the
// token count; the decoded sequence has 4L frames.
inline MotionSequence sample_motion(const VaeModel& vae, const GenModel& gen,
                                    const ObjectSpec& obj, const std::string& prompt, int L,
                                    const SamplerConfig& sc, Rng& rng,
                                    bool left_hand = false) {
  Tensor tokens = generate_sequence(gen, text_condition(prompt), bps_condition(obj), L, sc, rng);
  UnpackedTokens u = unpack_tokens(tokens);
  DecodeOut dec = left_hand ? decode(vae, u.z_h_l, u.z_o_l) : decode(vae, u.z_h_r, u.z_o_r);
  MotionSequence seq = decode_to_sequence(dec);
  seq.object_id = obj.id;
  seq.text = prompt;
  if (left_hand) seq = mirror_hand(seq);
  return seq;
}

inline void write_loss_csv(const std::string& path, const std::vector<float>& losses) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write loss curve " + path);
  os << "step,loss\n";
  for (size_t i = 0; i < losses.size(); ++i) os << (i + 1) << "," << losses[i] << "\n";
}

}  // namespace hoflow
