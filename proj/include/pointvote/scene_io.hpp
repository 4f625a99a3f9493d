#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointvote/geometry/ply_io.hpp"
#include "pointvote/geometry/pose_io.hpp"
#include "pointvote/image_io.hpp"
#include "pointvote/pipeline.hpp"

namespace pointvote {

// Scene files on disk:
//   NAME.ply         cloud; camera intrinsics and view origin in header comments
//   NAME.rgbd.json   {"depth": "d.png", "rgb": "c.png" (optional), "intrinsics": {...}}
//   NAME.pose.json   ground-truth model-to-scene pose, optional
// Relative image paths resolve against the JSON file's directory.

inline nlohmann::json intrinsics_to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline Intrinsics intrinsics_from_json(const nlohmann::json& j) {
  try {
    Intrinsics k{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                 j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>()};
    if (!(k.fx > 0) || !(k.fy > 0) || k.width <= 0 || k.height <= 0) {
      throw Error(ErrorCode::kParse, "intrinsics need positive focal lengths and image size");
    }
    return k;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("intrinsics JSON: ") + e.what());
  }
}

/// Scene name without the scene-file suffix.
inline std::string scene_stem(const std::string& path) {
  for (const std::string suffix : {".rgbd.json", ".ply"}) {
    if (path.size() > suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return path.substr(0, path.size() - suffix.size());
    }
  }
  return path;
}

inline std::string pose_path_for(const std::string& scene_path) { return scene_stem(scene_path) + ".pose.json"; }

inline bool is_scene_file(const std::filesystem::path& p) {
  const std::string s = p.filename().string();
  auto ends = [&](const std::string& suf) {
    return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  return ends(".rgbd.json") || ends(".ply");
}

inline PointCloud load_rgbd(const std::string& json_path) {
  const auto dir = std::filesystem::path(json_path).parent_path();
  std::ifstream in(json_path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, json_path + ": " + e.what());
  }
  if (!j.contains("depth") || !j.contains("intrinsics")) {
    throw Error(ErrorCode::kParse, json_path + ": needs \"depth\" and \"intrinsics\"");
  }
  const Intrinsics k = intrinsics_from_json(j.at("intrinsics"));
  const Image depth = read_png((dir / j.at("depth").get<std::string>()).string());
  if (depth.channels != 1 || depth.bit_depth != 16) throw Error(ErrorCode::kParse, "depth image must be 16-bit gray");
  if (depth.width != k.width || depth.height != k.height) {
    throw Error(ErrorCode::kInvalidArgument, "depth image size does not match intrinsics");
  }
  std::vector<std::uint8_t> rgb;
  if (j.contains("rgb")) {
    const Image color = read_png((dir / j.at("rgb").get<std::string>()).string());
    if (color.channels != 3 || color.bit_depth != 8) throw Error(ErrorCode::kParse, "rgb image must be 8-bit RGB");
    if (color.width != depth.width || color.height != depth.height) {
      throw Error(ErrorCode::kInvalidArgument, "rgb and depth images differ in size");
    }
    rgb.assign(color.data.begin(), color.data.end());
  }
  return backproject_rgbd(depth.data, rgb, k);
}

/// PLY scene or an RGB-D description.
inline PointCloud load_scene(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kIo, "scene file not found: " + path);
  if (path.ends_with(".rgbd.json")) return load_rgbd(path);
  return read_ply(path);
}

/// Scene files of a directory in lexicographic order.
inline std::vector<std::string> list_scenes(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kIo, "not a directory: " + dir);
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && is_scene_file(e.path())) out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pointvote
