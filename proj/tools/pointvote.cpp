#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <cmath>
#include <map>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pointvote/config.hpp"
#include "pointvote/dataset_io.hpp"
#include "pointvote/geometry/ply_io.hpp"
#include "pointvote/geometry/pose_io.hpp"
#include "pointvote/network_io.hpp"
#include "pointvote/pipeline.hpp"
#include "pointvote/scene_io.hpp"
#include "pointvote/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pointvote;

namespace {

// Exit codes: 0 success, 2 usage or input error, 1 runtime failure.
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kIo:
    case ErrorCode::kParse:
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> sets;
  std::string dump_config;
};

RunConfig effective_config(const Globals& g) {
  json doc;
  const json* docp = nullptr;
  if (!g.config_path.empty()) {
    doc = read_json_file(g.config_path);
    docp = &doc;
  }
  auto sets = g.sets;
  if (g.seed) sets.push_back("seed=" + std::to_string(*g.seed));
  if (g.threads) sets.push_back("threads=" + std::to_string(*g.threads));
  RunConfig cfg = resolve_config(docp, sets);
  cfg.detect.data = cfg.data;
  cfg.detect.threads = cfg.resolved_threads();
  cfg.train.threads = cfg.resolved_threads();
  if (!g.dump_config.empty()) {
    std::ofstream out(g.dump_config);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + g.dump_config);
    out << to_json(cfg).dump(2) << '\n';
  }
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path);
}

ObjectModel load_object(const std::string& path, const RunConfig& cfg) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "model file not found: " + path);
  return load_model(path, cfg.keypoint_spacing, cfg.symmetry_tol);
}

PointNet<float> load_network(const std::string& path, const ObjectModel& model) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "weights file not found: " + path);
  return load_weights<float>(path, static_cast<int>(model.num_keypoints()));
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string out, model;
  int n = 0;
};

int cmd_synth(const RunConfig& cfg, const SynthArgs& a) {
  if (a.n < 1) throw UsageError("--n must be at least 1");
  PointCloud surface;
  ObjectModel model;
  if (a.model.empty()) {
    auto obj = make_demo_object(1.0, 3.0, cfg.keypoint_spacing);
    surface = std::move(obj.surface);
    model = std::move(obj.model);
  } else {
    model = load_object(a.model, cfg);
    if (!model.cloud.has_normals) throw Error(ErrorCode::kInvalidArgument, "synth needs a model with normals");
    surface = model.cloud;
  }
  const fs::path root(a.out), scenes = root / "scenes";
  fs::create_directories(scenes);
  save_model((root / "model.ply").string(), model);
  write_text((root / "config.json").string(), to_json(cfg).dump(2) + "\n");
  detail::parallel_for(static_cast<std::size_t>(a.n), cfg.resolved_threads(), [&](std::size_t i) {
    Rng rng(mix_seed(cfg.seed, i));
    const auto s = synth_scene(surface, model.diameter, rng, cfg.synth);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04zu", i);
    write_ply((scenes / (std::string(name) + ".ply")).string(), s.cloud);
    write_pose((scenes / (std::string(name) + ".pose.json")).string(), s.gt_pose);
  });
  std::cerr << "wrote " << a.n << " scenes to " << scenes.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------------ prepare

struct PrepareArgs {
  std::string scenes, model, out, stats;
};

int cmd_prepare(const RunConfig& cfg, const PrepareArgs& a) {
  const ObjectModel model = load_object(a.model, cfg);
  const auto files = list_scenes(a.scenes);
  if (files.empty()) throw UsageError("no scene files in " + a.scenes);
  for (const auto& f : files) {
    if (!fs::exists(pose_path_for(f))) throw Error(ErrorCode::kIo, "missing ground-truth pose for " + f);
  }

  struct Outcome {
    std::vector<LabeledExample> examples;
    std::string error;
    int easy_shortfall = 0, hard_shortfall = 0, augment_skipped = 0;
    bool has_color = false;
  };
  std::optional<bool> has_color;
  std::optional<DatasetWriter> writer;
  json failures = json::array();
  std::map<std::string, std::size_t> by_kind;
  std::size_t by_class[2] = {0, 0}, total = 0;
  std::vector<std::size_t> seg_hist(model.num_keypoints() + 1, 0);
  int easy_short = 0, hard_short = 0, aug_skipped = 0;
  static const char* kKindNames[] = {"positive",        "easy_negative", "hard_negative",
                                     "background_swap", "object_only",   "mixed_background"};

  // Scenes run in parallel in groups; results are written in scene order.
  const auto threads = static_cast<std::size_t>(cfg.resolved_threads());
  for (std::size_t start = 0; start < files.size(); start += threads) {
    const std::size_t count = std::min(threads, files.size() - start);
    std::vector<Outcome> out(count);
    detail::parallel_for(count, static_cast<int>(threads), [&](std::size_t j) {
      const std::size_t i = start + j;
      try {
        const PointCloud scene = with_normals(load_scene(files[i]), cfg.detect.normal_radius);
        const RigidPose gt = read_pose(pose_path_for(files[i]));
        Rng rng(mix_seed(cfg.seed, i));
        auto ex = prepare_scene_examples(scene, model, gt, rng, cfg.data, static_cast<std::uint32_t>(i));
        out[j].examples = std::move(ex.examples);
        out[j].easy_shortfall = ex.easy_shortfall;
        out[j].hard_shortfall = ex.hard_shortfall;
        out[j].augment_skipped = ex.augment_skipped;
        out[j].has_color = scene.has_color;
      } catch (const Error& e) {
        out[j].error = e.what();
      }
    });
    for (std::size_t j = 0; j < count; ++j) {
      auto& o = out[j];
      const std::string& file = files[start + j];
      if (o.error.empty() && has_color && *has_color != o.has_color) o.error = "color channels differ from earlier scenes";
      if (!o.error.empty()) {
        std::cerr << "prepare: " << file << ": " << o.error << "\n";
        failures.push_back({{"scene", file}, {"error", o.error}});
        continue;
      }
      if (!writer) {
        has_color = o.has_color;
        DatasetHeader h;
        h.num_keypoints = static_cast<std::uint32_t>(model.num_keypoints());
        h.has_color = o.has_color;
        h.balanced = cfg.data.balanced;
        h.seed = cfg.seed;
        h.points_per_example = static_cast<std::uint32_t>(cfg.data.points_per_example);
        writer.emplace(a.out, h);
      }
      for (const auto& ex : o.examples) {
        writer->write(ex);
        ++total;
        ++by_class[ex.class_label];
        ++by_kind[kKindNames[static_cast<int>(ex.meta.kind)]];
        for (auto l : ex.seg_labels) ++seg_hist[l];
      }
      easy_short += o.easy_shortfall;
      hard_short += o.hard_shortfall;
      aug_skipped += o.augment_skipped;
    }
  }
  const json stats = {{"scenes", files.size()},
                      {"scenes_failed", failures.size()},
                      {"failures", failures},
                      {"examples", total},
                      {"class_histogram", {{"0", by_class[0]}, {"1", by_class[1]}}},
                      {"kind_histogram", by_kind},
                      {"seg_label_histogram", seg_hist},
                      {"easy_shortfall", easy_short},
                      {"hard_shortfall", hard_short},
                      {"augment_skipped", aug_skipped},
                      {"balanced", cfg.data.balanced},
                      {"seed", cfg.seed}};
  write_text(a.stats.empty() ? a.out + ".stats.json" : a.stats, stats.dump(2) + "\n");
  std::cerr << "prepare: " << total << " examples from " << files.size() - failures.size() << "/" << files.size()
            << " scenes\n";
  if (!writer) {
    std::cerr << "prepare: every scene failed\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string data, model, out, resume, log;
};

int cmd_train(const RunConfig& cfg, const TrainArgs& a) {
  const ObjectModel model = load_object(a.model, cfg);
  if (!fs::exists(a.data)) throw Error(ErrorCode::kIo, "dataset file not found: " + a.data);
  DatasetHeader header;
  const auto data = read_dataset(a.data, &header);
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "dataset is empty: " + a.data);
  if (header.num_keypoints != model.num_keypoints()) {
    throw Error(ErrorCode::kConfig, "dataset K does not match the model's keypoint count");
  }
  NetworkConfig nc = cfg.network;
  nc.in_channels = header.has_color ? 10 : 7;
  nc.num_points = static_cast<int>(header.points_per_example);
  nc.input_scale = cfg.data.sphere_factor * model.diameter;
  nc.with_keypoints(static_cast<int>(header.num_keypoints));
  nc.validate();

  PointNet<float> net;
  if (!a.resume.empty()) {
    net = load_network(a.resume, model);
    if (!(net.config() == nc)) throw Error(ErrorCode::kConfig, "resumed weights do not match the network config");
  } else {
    net = PointNet<float>(nc);
    net.init_random(mix_seed(cfg.seed, 0x5eed));
  }

  std::ostringstream log;
  log.precision(9);
  log << "epoch,loss,cls_loss,seg_loss\n";
  train(net, data, cfg.train, [&](int epoch, const LossValue& l) {
    log << epoch << ',' << l.total << ',' << l.cls << ',' << l.seg << '\n';
    std::cerr << "epoch " << epoch << " loss " << l.total << " (cls " << l.cls << ", seg " << l.seg << ")\n";
  });
  save_weights(a.out, net);
  write_text(a.log.empty() ? a.out + ".log.csv" : a.log, log.str());
  return kExitOk;
}

// ------------------------------------------------------------------ detect

json hypothesis_json(const PoseHypothesis& h) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"pose", pose_to_json(h.pose)},    {"anchor", h.anchor},
          {"s_kde", h.s_kde},                {"vote_support", h.vote_support},
          {"l_geometric", num(h.l_geometric)}, {"l_color", num(h.l_color)},
          {"color_fallback", h.color_fallback}, {"l_loc", num(h.l_loc)}};
}

json detection_json(const DetectionResult& r) {
  json ranked = json::array();
  for (const auto& h : r.ranked) ranked.push_back(hypothesis_json(h));
  json segmented = json::array();
  for (const auto& s : r.segmented) segmented.push_back({{"anchor", s.anchor}, {"probability", s.probability}});
  json j = {{"found", r.found()},
            {"anchors", r.anchors.size()},
            {"anchors_skipped", r.anchors_skipped},
            {"segmented", segmented},
            {"ranked", ranked},
            {"failures", r.failures},
            {"timing_ms",
             {{"anchors", r.timing.anchors},
              {"classify", r.timing.classify},
              {"segment", r.timing.segment},
              {"vote", r.timing.vote},
              {"icp", r.timing.icp},
              {"verify", r.timing.verify}}}};
  if (r.found()) {
    j["pose"] = pose_to_json(r.best().pose);
    j["best"] = hypothesis_json(r.best());
  }
  return j;
}

struct DetectArgs {
  std::string scene, model, weights, oracle, out, dump_debug;
};

int cmd_detect(const RunConfig& cfg, const DetectArgs& a) {
  if (a.weights.empty() == a.oracle.empty()) throw UsageError("give exactly one of --weights and --oracle");
  const ObjectModel model = load_object(a.model, cfg);
  const PointCloud scene = load_scene(a.scene);
  DetectDebug dbg;
  DetectDebug* dbgp = a.dump_debug.empty() ? nullptr : &dbg;
  DetectionResult res;
  if (!a.oracle.empty()) {
    res = oracle_detect(scene, model, read_pose(a.oracle), cfg.detect, dbgp);
  } else {
    const auto net = load_network(a.weights, model);
    res = detect(scene, model, net, cfg.detect, dbgp);
  }
  const std::string text = detection_json(res).dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  if (dbgp) {
    const fs::path dir(a.dump_debug);
    fs::create_directories(dir);
    write_ply((dir / "A_anchors.ply").string(), dbg.anchors);
    write_ply((dir / "B_scores.ply").string(), dbg.scored);
    write_ply((dir / "C_spheres.ply").string(), dbg.top_spheres);
    write_ply((dir / "D_segments.ply").string(), dbg.segmented);
    write_ply((dir / "E_votes.ply").string(), dbg.votes);
    write_text((dir / "F_pose.json").string(), text);
  }
  if (!res.found()) {
    std::cerr << "detect: no pose hypothesis\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
  std::string scenes, model, weights, out;
  bool oracle = false, inject_gt = false;
};

int cmd_eval(const RunConfig& cfg, const EvalArgs& a) {
  const int modes = int(!a.weights.empty()) + int(a.oracle) + int(a.inject_gt);
  if (modes != 1) throw UsageError("give exactly one of --weights, --oracle and --inject-gt");
  const ObjectModel model = load_object(a.model, cfg);
  const auto files = list_scenes(a.scenes);
  if (files.empty()) throw UsageError("no scene files in " + a.scenes);
  std::vector<EvalScene> scenes;
  std::map<std::string, std::size_t> index_of;
  for (const auto& f : files) {
    if (!fs::exists(pose_path_for(f))) throw Error(ErrorCode::kIo, "missing ground-truth pose for " + f);
    const std::string id = fs::path(scene_stem(f)).filename().string();
    index_of[id] = scenes.size();
    scenes.push_back({id, load_scene(f), read_pose(pose_path_for(f))});
  }
  std::optional<PointNet<float>> net;
  if (!a.weights.empty()) net = load_network(a.weights, model);

  const auto rep = evaluate(scenes, model, [&](const EvalScene& s) {
    DetectConfig dc = cfg.detect;
    dc.seed = mix_seed(cfg.seed, index_of.at(s.id));
    DetectionResult r;
    if (a.inject_gt) {
      PoseHypothesis h;
      h.pose = s.gt;
      h.s_kde = 1.0;
      r.ranked.push_back(h);
    } else if (a.oracle) {
      r = oracle_detect(s.cloud, model, s.gt, dc);
    } else {
      r = detect(s.cloud, model, *net, dc);
    }
    std::cerr << s.id << ": " << (r.found() ? "found" : "no hypothesis") << "\n";
    return r;
  }, cfg.threshold_factor);

  write_text(a.out + ".csv", eval_csv(rep));
  write_text(a.out + ".results.csv", eval_csv_results(rep));
  write_text(a.out + ".summary.json", eval_summary(rep).dump(2) + "\n");
  std::cout << rep.successes() << "/" << rep.rows.size() << " scenes within " << rep.threshold_mm << " mm ("
            << (rep.symmetric ? "ADD-S" : "ADD") << "), accuracy " << rep.accuracy() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pointvote: 6-DoF object pose estimation in point clouds"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--threads", g.threads, "Worker threads, 0 = hardware");
  app.add_option("--set", g.sets, "Config override key.path=value (repeatable)")->take_all();
  app.add_option("--dump-config", g.dump_config, "Write the effective configuration here");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Render synthetic scenes with ground-truth poses");
  synth->add_option("--out", synth_args.out, "Output directory")->required();
  synth->add_option("--n", synth_args.n, "Number of scenes")->required();
  synth->add_option("--model", synth_args.model, "Object model PLY (default: built-in demo object)");

  PrepareArgs prep_args;
  auto* prepare = app.add_subcommand("prepare", "Generate labeled training examples");
  prepare->add_option("--scenes", prep_args.scenes, "Directory of scenes with .pose.json files")->required();
  prepare->add_option("--model", prep_args.model, "Object model PLY")->required();
  prepare->add_option("--out", prep_args.out, "Dataset file")->required();
  prepare->add_option("--stats", prep_args.stats, "Stats report (default: OUT.stats.json)");

  TrainArgs train_args;
  auto* trainc = app.add_subcommand("train", "Train the classification/segmentation network");
  trainc->add_option("--data", train_args.data, "Dataset file")->required();
  trainc->add_option("--model", train_args.model, "Object model PLY")->required();
  trainc->add_option("--out", train_args.out, "Weights file")->required();
  trainc->add_option("--resume", train_args.resume, "Start from these weights");
  trainc->add_option("--log", train_args.log, "Loss log CSV (default: OUT.log.csv)");

  DetectArgs det_args;
  auto* detectc = app.add_subcommand("detect", "Estimate the object pose in one scene");
  detectc->add_option("--scene", det_args.scene, "Scene PLY or .rgbd.json")->required();
  detectc->add_option("--model", det_args.model, "Object model PLY")->required();
  detectc->add_option("--weights", det_args.weights, "Network weights");
  detectc->add_option("--oracle", det_args.oracle, "Ground-truth pose JSON; bypasses the network");
  detectc->add_option("--out", det_args.out, "Result JSON (default: stdout)");
  detectc->add_option("--dump-debug", det_args.dump_debug, "Directory for stage dumps A-F");

  EvalArgs eval_args;
  auto* evalc = app.add_subcommand("eval", "Score detections against ground truth");
  evalc->add_option("--scenes", eval_args.scenes, "Directory of scenes with .pose.json files")->required();
  evalc->add_option("--model", eval_args.model, "Object model PLY")->required();
  evalc->add_option("--weights", eval_args.weights, "Network weights");
  evalc->add_flag("--oracle", eval_args.oracle, "Use ground-truth segmentation");
  evalc->add_flag("--inject-gt", eval_args.inject_gt, "Report the ground truth as the detection");
  evalc->add_option("--out", eval_args.out, "Output prefix for .csv and .summary.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const RunConfig cfg = effective_config(g);
    if (*synth) return cmd_synth(cfg, synth_args);
    if (*prepare) return cmd_prepare(cfg, prep_args);
    if (*trainc) return cmd_train(cfg, train_args);
    if (*detectc) return cmd_detect(cfg, det_args);
    if (*evalc) return cmd_eval(cfg, eval_args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
