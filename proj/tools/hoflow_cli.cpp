#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <hoflow/pipeline.hpp>

namespace fs = std::filesystem;
using namespace hoflow;

namespace {

// Global seed fallback: flag > HOFLOW_SEED environment variable > default.
uint64_t resolve_seed(std::optional<uint64_t> flag, uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("HOFLOW_SEED")) return std::strtoull(env, nullptr, 10);
  return fallback;
}

KinematicTree tree_from(const std::string& path) {
  return path.empty() ? builtin_hand_tree() : load_tree(path);
}

VaeModel load_vae(const std::string& ckpt) {
  if (!fs::exists(ckpt)) throw std::runtime_error("missing encoder checkpoint: " + ckpt);
  fs::path cfg_path = fs::path(ckpt).parent_path() / "config.json";
  if (!fs::exists(cfg_path))
    throw std::runtime_error("missing config snapshot next to checkpoint: " + cfg_path.string());
  std::ifstream is(cfg_path);
  nlohmann::json j;
  is >> j;
  VaeModel model(vae_config_from_json(j.at("vae")), builtin_hand_tree(), 0);
  load_checkpoint(ckpt, model.params);
  return model;
}

GenModel load_gen(const std::string& ckpt) {
  if (!fs::exists(ckpt)) throw std::runtime_error("missing generator checkpoint: " + ckpt);
  fs::path cfg_path = fs::path(ckpt).parent_path() / "config.json";
  if (!fs::exists(cfg_path))
    throw std::runtime_error("missing config snapshot next to checkpoint: " + cfg_path.string());
  std::ifstream is(cfg_path);
  nlohmann::json j;
  is >> j;
  GenModel model(gen_config_from_json(j.at("gen")), 0);
  load_checkpoint(ckpt, model.params);
  return model;
}

int cmd_gen_data(int objects, int per_object, int test_objects, int frames, const std::string& out,
                 std::optional<uint64_t> seed_flag, const std::string& split) {
  CorpusConfig cfg;
  cfg.objects = objects;
  cfg.per_object = per_object;
  cfg.test_objects = test_objects;
  cfg.frames = frames;
  cfg.out_dir = out;
  if (!split.empty()) {
    auto colon = split.find(':');
    if (colon == std::string::npos) throw std::runtime_error("--split expects train:test");
    cfg.objects = std::stoi(split.substr(0, colon)) + std::stoi(split.substr(colon + 1));
    cfg.test_objects = std::stoi(split.substr(colon + 1));
  }
  uint64_t seed = resolve_seed(seed_flag, 7);
  nlohmann::json manifest = build_corpus(cfg, seed);
  write_config_snapshot(out, {{"command", "gen-data"},
                              {"objects", cfg.objects},
                              {"per_object", cfg.per_object},
                              {"test_objects", cfg.test_objects},
                              {"frames", cfg.frames},
                              {"seed", seed}});
  std::cout << "wrote " << manifest.at("sequences").size() << " sequences for " << cfg.objects
            << " objects to " << out << "\n";
  return 0;
}

int cmd_train_vae(const std::string& data, const std::string& out, const std::string& profile,
                  int steps, int batch, std::optional<uint64_t> seed_flag, bool no_augment,
                  const std::string& init_from, const std::string& split) {
  CorpusView corpus = load_corpus(data);
  auto items = corpus_vae_items(corpus, split);
  if (items.empty()) throw std::runtime_error("no training sequences in split '" + split + "'");

  uint64_t seed = resolve_seed(seed_flag, 1);
  VaeConfig vc = vae_config_for(profile);
  VaeModel model(vc, builtin_hand_tree(), seed);
  if (!init_from.empty()) {
    if (!fs::exists(init_from)) throw std::runtime_error("missing checkpoint: " + init_from);
    int n = load_partial_checkpoint(init_from, model.params);
    std::cout << "initialized " << n << " parameter tensors from " << init_from << "\n";
  }

  VaeTrainConfig tc;
  tc.steps = steps;
  tc.batch = batch;
  tc.seed = seed ^ 0x7ae5u;
  tc.augment = !no_augment;
  tc.opt.schedule.total_steps = steps;
  tc.opt.schedule.warmup_steps = std::min(100, steps / 10 + 1);

  fs::create_directories(out);
  write_config_snapshot(out, {{"command", "train-vae"},
                              {"profile", profile},
                              {"data", data},
                              {"steps", steps},
                              {"batch", batch},
                              {"seed", seed},
                              {"augment", tc.augment},
                              {"init_from", init_from},
                              {"split", split},
                              {"vae", vae_config_to_json(vc)}});
  Ema ema(0.9999f);
  VaeTrainResult res = train_vae(model, items, tc, &ema);
  write_loss_csv((fs::path(out) / "loss.csv").string(), res.losses);
  if (res.aborted) {
    std::cerr << "training aborted on non-finite loss after " << res.steps_done
              << " steps; last good parameters kept\n";
    save_checkpoint((fs::path(out) / "vae_last_good.hoft").string(), model.params);
    return 1;
  }
  save_checkpoint((fs::path(out) / "vae.hoft").string(), model.params);
  ema.copy_to(model.params);
  save_checkpoint((fs::path(out) / "vae_ema.hoft").string(), model.params);
  std::cout << "trained " << res.steps_done << " steps, final loss " << res.losses.back() << "\n";
  return 0;
}

int cmd_train_flow(const std::string& data, const std::string& vae_ckpt, const std::string& out,
                   const std::string& profile, int steps, int batch,
                   std::optional<uint64_t> seed_flag, const std::string& init_from,
                   const std::string& split) {
  CorpusView corpus = load_corpus(data);
  VaeModel vae = load_vae(vae_ckpt);
  auto items = precompute_flow_items(vae, corpus, split);
  if (items.empty()) throw std::runtime_error("no training sequences in split '" + split + "'");
  std::cout << "precomputed latent targets for " << items.size() << " sequences\n";

  uint64_t seed = resolve_seed(seed_flag, 2);
  GenConfig gc = gen_config_for(profile);
  GenModel model(gc, seed);
  if (!init_from.empty()) {
    if (!fs::exists(init_from)) throw std::runtime_error("missing checkpoint: " + init_from);
    int n = load_partial_checkpoint(init_from, model.params);
    std::cout << "initialized " << n << " parameter tensors from " << init_from << "\n";
  }

  FlowTrainConfig tc;
  tc.steps = steps;
  tc.batch = batch;
  tc.seed = seed ^ 0x11d7u;
  tc.opt.schedule.total_steps = steps;
  tc.opt.schedule.warmup_steps = std::min(100, steps / 10 + 1);

  fs::create_directories(out);
  write_config_snapshot(out, {{"command", "train-flow"},
                              {"profile", profile},
                              {"data", data},
                              {"vae", vae_config_to_json(vae.cfg)},
                              {"vae_checkpoint", vae_ckpt},
                              {"steps", steps},
                              {"batch", batch},
                              {"seed", seed},
                              {"init_from", init_from},
                              {"split", split},
                              {"gen", gen_config_to_json(gc)}});
  Ema ema(0.999f);
  FlowTrainResult res = train_flow(model, items, tc, &ema);
  write_loss_csv((fs::path(out) / "loss.csv").string(), res.losses);
  if (res.aborted) {
    std::cerr << "training aborted on non-finite loss after " << res.steps_done
              << " steps; last good parameters kept\n";
    save_checkpoint((fs::path(out) / "flow_last_good.hoft").string(), model.params);
    return 1;
  }
  save_checkpoint((fs::path(out) / "flow.hoft").string(), model.params);
  ema.copy_to(model.params);
  save_checkpoint((fs::path(out) / "flow_ema.hoft").string(), model.params);
  std::cout << "trained " << res.steps_done << " steps, final loss " << res.losses.back() << "\n";
  return 0;
}

int cmd_sample(const std::string& data, const std::string& vae_ckpt, const std::string& flow_ckpt,
               const std::string& object_id, const std::string& prompt, int num_samples,
               int tokens, const SamplerConfig& sc_in, std::optional<uint64_t> seed_flag,
               const std::string& out, bool left) {
  CorpusView corpus = load_corpus(data);
  const ObjectSpec& obj = corpus.object(object_id);
  if (prompt.empty()) throw std::runtime_error("--prompt is required");
  VaeModel vae = load_vae(vae_ckpt);
  GenModel gen = load_gen(flow_ckpt);

  SamplerConfig sc = sc_in;
  sc.seed = resolve_seed(seed_flag, sc_in.seed);
  fs::create_directories(out);
  write_config_snapshot(out, {{"command", "sample"},
                              {"data", data},
                              {"vae_checkpoint", vae_ckpt},
                              {"flow_checkpoint", flow_ckpt},
                              {"object", object_id},
                              {"prompt", prompt},
                              {"num_samples", num_samples},
                              {"tokens", tokens},
                              {"left", left},
                              {"sampler", sampler_to_json(sc)}});
  for (int s = 0; s < num_samples; ++s) {
    Rng rng(sc.seed + static_cast<uint64_t>(s) * 0x9e3779b97f4a7c15ull);
    MotionSequence seq = sample_motion(vae, gen, obj, prompt, tokens, sc, rng, left);
    fs::path path = fs::path(out) / ("sample_" + std::to_string(s) + ".json");
    save_motion(seq, path.string());
    std::cout << "wrote " << path.string() << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& data, const std::vector<std::string>& motion_args,
             const std::string& out, double voxel_mm, const std::string& gt_file) {
  CorpusView corpus = load_corpus(data);
  KinematicTree tree = builtin_hand_tree();

  std::vector<std::string> files;
  for (const auto& arg : motion_args) {
    if (fs::is_directory(arg)) {
      for (const auto& e : fs::directory_iterator(arg))
        if (e.path().extension() == ".json" && e.path().filename() != "config.json")
          files.push_back(e.path().string());
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(arg);
    }
  }
  if (files.empty()) throw std::runtime_error("no motion files to evaluate");

  nlohmann::json report;
  std::map<std::pair<std::string, std::string>, std::vector<Eigen::VectorXd>> by_condition;
  double phy_sum = 0, iv_sum = 0;
  int n = 0;
  for (const auto& f : files) {
    MotionSequence seq = load_motion(f);
    const ObjectSpec& obj = corpus.object(seq.object_id);
    MetricReport r = evaluate_sequence(tree, seq, *obj.sdf, voxel_mm * 1e-3);
    if (!gt_file.empty())
      r.recon = recon_errors(tree, seq, load_motion(gt_file), obj.cloud);
    nlohmann::json jr = report_to_json(r);
    jr["file"] = f;
    jr["object"] = seq.object_id;
    jr["text"] = seq.text;
    report["sequences"].push_back(jr);
    std::cout << f << "\n" << report_table(r) << "\n";
    phy_sum += r.phy_pct;
    iv_sum += r.iv_r + r.iv_l;
    ++n;

    // flatten wrist trajectory for the diversity statistic
    Eigen::VectorXd traj(3 * seq.length());
    for (int fr = 0; fr < seq.length(); ++fr)
      traj.segment<3>(3 * fr) = seq.frames[static_cast<size_t>(fr)].hand.trans;
    by_condition[{seq.text, seq.object_id}].push_back(traj);
  }
  report["aggregate"]["phy_pct"] = phy_sum / n;
  report["aggregate"]["iv_cm3"] = iv_sum / n;

  for (const auto& [key, samples] : by_condition) {
    nlohmann::json js{{"text", key.first}, {"object", key.second},
                      {"num_samples", samples.size()}};
    if (samples.size() < 2) {
      std::cerr << "warning: only " << samples.size() << " sample(s) for prompt '" << key.first
                << "' on object '" << key.second << "'; diversity omitted\n";
    } else {
      js["sd"] = sample_diversity(samples);
    }
    report["diversity"].push_back(js);
  }

  if (!out.empty()) {
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path().string());
    std::ofstream os(out);
    if (!os) throw std::runtime_error("cannot write report " + out);
    os << report.dump(1) << "\n";
    std::cout << "report written to " << out << "\n";
  }
  return 0;
}

int cmd_bps(const std::string& data, const std::string& object_id, const std::string& out,
            std::optional<uint64_t> seed_flag) {
  CorpusView corpus = load_corpus(data);
  const ObjectSpec& obj = corpus.object(object_id);
  uint64_t seed = resolve_seed(seed_flag, kBasisSeed);
  Eigen::VectorXd enc = bps_encode(obj.cloud, basis_points(seed));
  nlohmann::json j{{"object", object_id}, {"seed", seed}, {"size", enc.size()}};
  for (int i = 0; i < enc.size(); ++i) j["distances"].push_back(enc[i]);
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot write " + out);
  os << j.dump() << "\n";
  std::cout << "wrote " << enc.size() << " distances to " << out << "\n";
  return 0;
}

int cmd_fk_check(const std::string& tree_path, int poses, std::optional<uint64_t> seed_flag) {
  KinematicTree tree = tree_from(tree_path);
  uint64_t seed = resolve_seed(seed_flag, 11);
  Rng rng(seed);
  double worst = 0;
  for (int t = 0; t < poses; ++t) {
    HandPose pose;
    for (auto& th : pose.theta) th = Vec3(rng.normal(), rng.normal(), rng.normal());
    pose.trans = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
    FkResult fk = forward_kinematics(tree, pose);
    // naive chain product, joint by joint
    for (int j = 0; j < kJointCount; ++j) {
      std::vector<int> chain;
      for (int a = j; a >= 0; a = tree.parents[static_cast<size_t>(a)]) chain.push_back(a);
      Mat4 T = Mat4::Identity();
      for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
        Mat4 local = Mat4::Identity();
        local.block<3, 3>(0, 0) = rodrigues(pose.theta[static_cast<size_t>(*it)]);
        local.block<3, 1>(0, 3) = tree.offsets[static_cast<size_t>(*it)];
        T = T * local;
      }
      Vec3 p = T.block<3, 1>(0, 3) + pose.trans;
      worst = std::max(worst, (p - fk.positions[static_cast<size_t>(j)]).norm());
    }
  }
  std::cout << "checked " << poses << " poses, max joint position error " << worst << " m\n";
  return worst < 1e-6 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand-object motion generation pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand

  std::optional<uint64_t> seed;
  app.add_option("--seed", seed, "global seed (falls back to HOFLOW_SEED, then per-command default)");

  // gen-data
  auto* gd = app.add_subcommand("gen-data", "build a synthetic grasp corpus");
  int gd_objects = 8, gd_per = 4, gd_test = 2, gd_frames = 96;
  std::string gd_out = "data", gd_split;
  gd->add_option("--objects", gd_objects, "number of objects");
  gd->add_option("--per-object", gd_per, "sequences per object");
  gd->add_option("--test-objects", gd_test, "objects held out for testing");
  gd->add_option("--frames", gd_frames, "frames per sequence");
  gd->add_option("--out", gd_out, "output directory");
  gd->add_option("--split", gd_split, "train:test object split, e.g. 47:4");

  // train-vae
  auto* tv = app.add_subcommand("train-vae", "train the interaction encoder");
  std::string tv_data = "data", tv_out = "runs/vae", tv_profile = "ci", tv_init, tv_split = "train";
  int tv_steps = 2000, tv_batch = 2;
  bool tv_noaug = false;
  tv->add_option("--data", tv_data, "corpus directory");
  tv->add_option("--out", tv_out, "run directory");
  tv->add_option("--profile", tv_profile, "ci or paper widths");
  tv->add_option("--steps", tv_steps, "optimizer steps");
  tv->add_option("--batch", tv_batch, "sequences per step");
  tv->add_option("--init-from", tv_init, "warm-start checkpoint");
  tv->add_option("--split", tv_split, "sequence split to train on (empty = all)");
  tv->add_flag("--no-augment", tv_noaug, "disable rotation augmentation");

  // train-flow
  auto* tf = app.add_subcommand("train-flow", "train the latent generator");
  std::string tf_data = "data", tf_vae, tf_out = "runs/flow", tf_profile = "ci", tf_init,
              tf_split = "train";
  int tf_steps = 4000, tf_batch = 4;
  tf->add_option("--data", tf_data, "corpus directory");
  tf->add_option("--vae", tf_vae, "frozen encoder checkpoint")->required();
  tf->add_option("--out", tf_out, "run directory");
  tf->add_option("--profile", tf_profile, "ci or paper widths");
  tf->add_option("--steps", tf_steps, "optimizer steps");
  tf->add_option("--batch", tf_batch, "sequences per step");
  tf->add_option("--init-from", tf_init, "warm-start checkpoint");
  tf->add_option("--split", tf_split, "sequence split to train on (empty = all)");

  // sample
  auto* sm = app.add_subcommand("sample", "generate motion sequences");
  std::string sm_data = "data", sm_vae, sm_flow, sm_object, sm_prompt, sm_out = "samples";
  int sm_num = 1, sm_tokens = 24;
  bool sm_left = false;
  SamplerConfig sm_sc;
  sm->add_option("--data", sm_data, "corpus directory (for object geometry)");
  sm->add_option("--vae", sm_vae, "decoder checkpoint")->required();
  sm->add_option("--flow", sm_flow, "generator checkpoint")->required();
  sm->add_option("--object", sm_object, "object id")->required();
  sm->add_option("--prompt", sm_prompt, "text prompt")->required();
  sm->add_option("--num-samples", sm_num, "sequences to generate");
  sm->add_option("--tokens", sm_tokens, "latent steps (frames = 4x)");
  sm->add_option("--ode-steps", sm_sc.ode_steps, "Euler integration steps");
  sm->add_option("--iters", sm_sc.unmask_iters, "unmasking iterations");
  sm->add_option("--cfg", sm_sc.cfg_weight, "guidance weight");
  sm->add_option("--out", sm_out, "output directory");
  sm->add_flag("--left", sm_left, "emit a left-handed sequence");

  // eval
  auto* ev = app.add_subcommand("eval", "run the metric suite on motion files");
  std::string ev_data = "data", ev_out, ev_gt;
  double ev_voxel_mm = 2.0;
  std::vector<std::string> ev_motions;
  ev->add_option("--data", ev_data, "corpus directory (for object geometry)");
  ev->add_option("--motions", ev_motions, "motion files or directories")->required();
  ev->add_option("--out", ev_out, "aggregate report JSON path");
  ev->add_option("--gt", ev_gt, "ground-truth motion for reconstruction errors");
  ev->add_option("--voxel-mm", ev_voxel_mm, "interpenetration voxel size");

  // bps
  auto* bp = app.add_subcommand("bps", "encode an object as basis-point distances");
  std::string bp_data = "data", bp_object, bp_out = "bps.json";
  bp->add_option("--data", bp_data, "corpus directory");
  bp->add_option("--object", bp_object, "object id")->required();
  bp->add_option("--out", bp_out, "output JSON path");

  // fk-check
  auto* fk = app.add_subcommand("fk-check", "verify forward kinematics against a naive chain");
  std::string fk_tree;
  int fk_poses = 1000;
  fk->add_option("--tree", fk_tree, "kinematic tree JSON (default: built-in hand)");
  fk->add_option("--poses", fk_poses, "random poses to check");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gd->parsed())
      return cmd_gen_data(gd_objects, gd_per, gd_test, gd_frames, gd_out, seed, gd_split);
    if (tv->parsed())
      return cmd_train_vae(tv_data, tv_out, tv_profile, tv_steps, tv_batch, seed, tv_noaug,
                           tv_init, tv_split);
    if (tf->parsed())
      return cmd_train_flow(tf_data, tf_vae, tf_out, tf_profile, tf_steps, tf_batch, seed,
                            tf_init, tf_split);
    if (sm->parsed())
      return cmd_sample(sm_data, sm_vae, sm_flow, sm_object, sm_prompt, sm_num, sm_tokens, sm_sc,
                        seed, sm_out, sm_left);
    if (ev->parsed()) return cmd_eval(ev_data, ev_motions, ev_out, ev_voxel_mm, ev_gt);
    if (bp->parsed()) return cmd_bps(bp_data, bp_object, bp_out, seed);
    if (fk->parsed()) return cmd_fk_check(fk_tree, fk_poses, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
