#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointvote/dataset.hpp"
#include "pointvote/network.hpp"
#include "pointvote/pipeline.hpp"
#include "pointvote/synth.hpp"

namespace pointvote {

/// Every tunable of every command in one document. Unknown keys are errors.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 0;  // 0: hardware concurrency

  double keypoint_spacing = 25.0;  // mm
  double symmetry_tol = 12.5;      // mm, keypoint merge distance under symmetry

  DataPrepConfig data;
  NetworkConfig network;  // in_channels and num_keypoints are taken from the dataset
  TrainConfig train;
  DetectConfig detect;
  double threshold_factor = 0.1;  // success iff ADD (ADD-S) < factor x diameter
  SynthParams synth;

  int resolved_threads() const {
    if (threads > 0) return threads;
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  }
};

namespace detail {

// Reads members of one JSON object and remembers which keys were seen, so
// leftovers can be reported as unknown.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(ErrorCode::kConfig, "'" + path_ + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kConfig, "bad value for '" + name(key) + "': " + e.what());
    }
  }

  StrictObject child(const std::string& key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return StrictObject(j_.contains(key) ? j_.at(key) : empty, name(key));
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& at(const std::string& key) const { return j_.at(key); }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error(ErrorCode::kConfig, "unknown key '" + name(k) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Degrees whose conversion reproduces `rad` exactly, so documents round-trip.
inline double stable_degrees(double rad) {
  double d = rad2deg(rad);
  for (int i = 0; i < 8 && deg2rad(d) != rad; ++i) {
    d = std::nextafter(d, deg2rad(d) < rad ? HUGE_VAL : -HUGE_VAL);
  }
  return d;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  const auto& d = c.data;
  const auto& n = c.network;
  const auto& t = c.train;
  const auto& x = c.detect;
  const auto& s = c.synth;
  json icp = json::array();
  for (const auto& l : x.icp) icp.push_back({l.max_corr_dist, l.max_iters});
  return {
      {"seed", c.seed},
      {"threads", c.threads},
      {"model", {{"keypoint_spacing", c.keypoint_spacing}, {"symmetry_tol", c.symmetry_tol}}},
      {"data",
       {{"fg_threshold", d.fg_threshold},
        {"bg_threshold", d.bg_threshold},
        {"points_per_example", d.points_per_example},
        {"sphere_factor", d.sphere_factor},
        {"num_positives", d.num_positives},
        {"num_easy", d.num_easy},
        {"num_hard", d.num_hard},
        {"hard_min_factor", d.hard_min_factor},
        {"hard_max_factor", d.hard_max_factor},
        {"balanced", d.balanced},
        {"background_swap_multiplier", d.background_swap_multiplier},
        {"object_shift_fraction", d.object_shift_fraction},
        {"segment_drop_prob", d.segment_drop_prob},
        {"jitter_sigma", d.jitter_sigma},
        {"jitter_channels",
         {{"position", d.jitter.position},
          {"normal", d.jitter.normal},
          {"curvature", d.jitter.curvature},
          {"color", d.jitter.color}}}}},
      {"network",
       {{"encoder", n.encoder},
        {"classifier", n.classifier},
        {"segmenter_hidden", std::vector<int>(n.segmenter.begin(), n.segmenter.end() - 1)},
        {"skip_layer", n.skip_layer},
        {"normalize_input", n.normalize_input}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"learning_rate", t.learning_rate},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_epsilon", t.adam_epsilon},
        {"epochs", t.epochs},
        {"w_cls", t.w_cls},
        {"w_seg", t.w_seg}}},
      {"detect",
       {{"anchor_voxel", x.anchor_voxel},
        {"min_anchor_points", x.min_anchor_points},
        {"top_k", x.top_k},
        {"icp", icp},
        {"icp_model_voxel", x.icp_model_voxel},
        {"verify_model_voxel", x.verify_model_voxel},
        {"normal_radius", x.normal_radius}}},
      {"voting",
       {{"n_theta", x.voting.n_theta},
        {"delta_t", x.voting.delta_t},
        {"delta_r_deg", detail::stable_degrees(x.voting.delta_r)},
        {"min_correspondences", x.voting.min_correspondences},
        {"max_correspondences", x.voting.max_correspondences},
        {"min_confidence", x.voting.min_confidence}}},
      {"verification",
       {{"occlusion_margin", x.verification.occlusion_margin},
        {"splat_radius", x.verification.splat_radius},
        {"use_color", x.verification.use_color}}},
      {"eval", {{"threshold_factor", c.threshold_factor}}},
      {"synth",
       {{"noise_sigma", s.noise_sigma},
        {"color_noise", s.color_noise},
        {"clutter_count", s.clutter_count},
        {"occluder_prob", s.occluder_prob},
        {"table_half", s.table_half},
        {"placement_radius", s.placement_radius},
        {"camera_distance", s.camera_distance},
        {"elevation_min", s.elevation_min},
        {"elevation_max", s.elevation_max},
        {"camera",
         {{"fx", s.camera.fx},
          {"fy", s.camera.fy},
          {"cx", s.camera.cx},
          {"cy", s.camera.cy},
          {"width", s.camera.width},
          {"height", s.camera.height}}},
        {"self_occlusion_tol", s.self_occlusion_tol},
        {"normal_radius", s.normal_radius}}},
  };
}

inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, m); };
  if (c.threads < 0) fail("threads must be >= 0");
  if (!(c.keypoint_spacing > 0) || !(c.symmetry_tol > 0)) fail("model spacing and tolerance must be positive");
  const auto& d = c.data;
  if (!(d.fg_threshold > 0) || !(d.bg_threshold >= d.fg_threshold)) fail("need 0 < fg_threshold <= bg_threshold");
  if (d.points_per_example < 1 || !(d.sphere_factor > 0)) fail("bad sphere settings");
  if (d.num_positives < 0 || d.num_easy < 0 || d.num_hard < 0) fail("example counts must be >= 0");
  if (!(d.hard_min_factor < d.hard_max_factor)) fail("hard-negative band is empty");
  if (d.segment_drop_prob < 0 || d.segment_drop_prob > 1 || d.jitter_sigma < 0) fail("bad augmentation settings");
  if (d.background_swap_multiplier < 1) fail("background_swap_multiplier must be >= 1");
  c.train.validate();
  if (c.network.encoder.empty() || c.network.classifier.empty() || c.network.classifier.back() != 1) {
    fail("network needs an encoder and a classifier ending in one logit");
  }
  if (c.network.skip_layer < 0 || c.network.skip_layer >= static_cast<int>(c.network.encoder.size())) {
    fail("network skip_layer out of range");
  }
  const auto& x = c.detect;
  if (!(x.anchor_voxel > 0) || x.top_k < 1) fail("detect anchor_voxel and top_k must be positive");
  if (x.icp.empty()) fail("detect.icp is empty");
  for (std::size_t i = 0; i < x.icp.size(); ++i) {
    if (!(x.icp[i].max_corr_dist > 0) || x.icp[i].max_iters < 0 ||
        (i > 0 && !(x.icp[i].max_corr_dist < x.icp[i - 1].max_corr_dist))) {
      fail("detect.icp gates must be positive and strictly decreasing");
    }
  }
  if (x.voting.n_theta < 4 || !(x.voting.delta_t > 0) || !(x.voting.delta_r > 0)) fail("bad voting kernel");
  if (x.voting.min_confidence < 0 || x.voting.min_confidence > 1) fail("voting.min_confidence must be in [0, 1]");
  if (x.verification.occlusion_margin < 0 || x.verification.splat_radius < 0) fail("bad verification settings");
  if (!(c.threshold_factor > 0)) fail("eval.threshold_factor must be positive");
  c.synth.validate();
}

/// Reads a document over the defaults; absent keys keep their defaults.
inline RunConfig config_from_json(const nlohmann::json& j, bool check_values = true) {
  RunConfig c;
  detail::StrictObject root(j, "");
  root.get("seed", c.seed);
  root.get("threads", c.threads);
  {
    auto o = root.child("model");
    o.get("keypoint_spacing", c.keypoint_spacing);
    o.get("symmetry_tol", c.symmetry_tol);
    o.finish();
  }
  {
    auto& d = c.data;
    auto o = root.child("data");
    o.get("fg_threshold", d.fg_threshold);
    o.get("bg_threshold", d.bg_threshold);
    o.get("points_per_example", d.points_per_example);
    o.get("sphere_factor", d.sphere_factor);
    o.get("num_positives", d.num_positives);
    o.get("num_easy", d.num_easy);
    o.get("num_hard", d.num_hard);
    o.get("hard_min_factor", d.hard_min_factor);
    o.get("hard_max_factor", d.hard_max_factor);
    o.get("balanced", d.balanced);
    o.get("background_swap_multiplier", d.background_swap_multiplier);
    o.get("object_shift_fraction", d.object_shift_fraction);
    o.get("segment_drop_prob", d.segment_drop_prob);
    o.get("jitter_sigma", d.jitter_sigma);
    auto jc = o.child("jitter_channels");
    jc.get("position", d.jitter.position);
    jc.get("normal", d.jitter.normal);
    jc.get("curvature", d.jitter.curvature);
    jc.get("color", d.jitter.color);
    jc.finish();
    o.finish();
  }
  {
    auto& n = c.network;
    auto o = root.child("network");
    std::vector<int> seg_hidden(n.segmenter.begin(), n.segmenter.end() - 1);
    o.get("encoder", n.encoder);
    o.get("classifier", n.classifier);
    o.get("segmenter_hidden", seg_hidden);
    o.get("skip_layer", n.skip_layer);
    o.get("normalize_input", n.normalize_input);
    n.segmenter = seg_hidden;
    n.segmenter.push_back(1);  // K+1, filled in once K is known
    o.finish();
  }
  {
    auto& t = c.train;
    auto o = root.child("train");
    o.get("batch_size", t.batch_size);
    o.get("learning_rate", t.learning_rate);
    o.get("beta1", t.beta1);
    o.get("beta2", t.beta2);
    o.get("adam_epsilon", t.adam_epsilon);
    o.get("epochs", t.epochs);
    o.get("w_cls", t.w_cls);
    o.get("w_seg", t.w_seg);
    o.finish();
  }
  {
    auto& x = c.detect;
    auto o = root.child("detect");
    o.get("anchor_voxel", x.anchor_voxel);
    o.get("min_anchor_points", x.min_anchor_points);
    o.get("top_k", x.top_k);
    if (o.has("icp")) {
      const auto& a = o.at("icp");
      if (!a.is_array()) throw Error(ErrorCode::kConfig, "'detect.icp' must be a list of [gate_mm, iters]");
      x.icp.clear();
      for (const auto& l : a) {
        if (!l.is_array() || l.size() != 2 || !l[0].is_number() || !l[1].is_number_integer()) {
          throw Error(ErrorCode::kConfig, "'detect.icp' entries must be [gate_mm, iters]");
        }
        x.icp.push_back({l[0].get<double>(), l[1].get<int>()});
      }
    }
    o.get("icp_model_voxel", x.icp_model_voxel);
    o.get("verify_model_voxel", x.verify_model_voxel);
    o.get("normal_radius", x.normal_radius);
    o.finish();
  }
  {
    auto& v = c.detect.voting;
    auto o = root.child("voting");
    double dr_deg = rad2deg(v.delta_r);
    o.get("n_theta", v.n_theta);
    o.get("delta_t", v.delta_t);
    o.get("delta_r_deg", dr_deg);
    o.get("min_correspondences", v.min_correspondences);
    o.get("max_correspondences", v.max_correspondences);
    o.get("min_confidence", v.min_confidence);
    v.delta_r = deg2rad(dr_deg);
    o.finish();
  }
  {
    auto& v = c.detect.verification;
    auto o = root.child("verification");
    o.get("occlusion_margin", v.occlusion_margin);
    o.get("splat_radius", v.splat_radius);
    o.get("use_color", v.use_color);
    o.finish();
  }
  {
    auto o = root.child("eval");
    o.get("threshold_factor", c.threshold_factor);
    o.finish();
  }
  {
    auto& s = c.synth;
    auto o = root.child("synth");
    o.get("noise_sigma", s.noise_sigma);
    o.get("color_noise", s.color_noise);
    o.get("clutter_count", s.clutter_count);
    o.get("occluder_prob", s.occluder_prob);
    o.get("table_half", s.table_half);
    o.get("placement_radius", s.placement_radius);
    o.get("camera_distance", s.camera_distance);
    o.get("elevation_min", s.elevation_min);
    o.get("elevation_max", s.elevation_max);
    auto cam = o.child("camera");
    cam.get("fx", s.camera.fx);
    cam.get("fy", s.camera.fy);
    cam.get("cx", s.camera.cx);
    cam.get("cy", s.camera.cy);
    cam.get("width", s.camera.width);
    cam.get("height", s.camera.height);
    cam.finish();
    o.get("self_occlusion_tol", s.self_occlusion_tol);
    o.get("normal_radius", s.normal_radius);
    o.finish();
  }
  root.finish();
  c.detect.seed = c.seed;
  c.train.seed = c.seed;
  if (check_values) validate(c);
  return c;
}

/// Parses the right-hand side of --set: JSON if it parses, else a string.
inline nlohmann::json parse_override_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

/// Applies "a.b.c=value" to `doc`. The path must already exist.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::kConfig, "override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw Error(ErrorCode::kConfig, "unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = parse_override_value(assignment.substr(eq + 1));
}

/// Defaults, then the optional document, then overrides in order.
inline RunConfig resolve_config(const nlohmann::json* doc, const std::vector<std::string>& overrides) {
  nlohmann::json effective = to_json(RunConfig{});
  if (doc) {
    config_from_json(*doc, false);  // rejects unknown keys with their full path
    effective.merge_patch(*doc);
  }
  for (const auto& o : overrides) apply_override(effective, o);
  return config_from_json(effective);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
}

}  // namespace pointvote
