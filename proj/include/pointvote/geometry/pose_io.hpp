#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "pointvote/geometry/rigid.hpp"

namespace pointvote {

// {"rotation": [[r00,r01,r02],[r10,r11,r12],[r20,r21,r22]], "translation_mm": [x,y,z]}

inline nlohmann::json pose_to_json(const RigidPose& pose) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    rot.push_back({pose.rotation(r, 0), pose.rotation(r, 1), pose.rotation(r, 2)});
  }
  return {{"rotation", rot},
          {"translation_mm", {pose.translation.x(), pose.translation.y(), pose.translation.z()}}};
}

/// Rotations off SO(3) by more than 1e-6 are rejected; smaller drift (e.g. from
/// printed decimals) is projected back.
inline RigidPose pose_from_json(const nlohmann::json& j) {
  try {
    RigidPose pose;
    const auto& rot = j.at("rotation");
    const auto& t = j.at("translation_mm");
    if (rot.size() != 3 || t.size() != 3) throw Error(ErrorCode::kParse, "pose JSON has wrong shape");
    for (int r = 0; r < 3; ++r) {
      if (rot[r].size() != 3) throw Error(ErrorCode::kParse, "pose rotation row must have 3 entries");
      for (int c = 0; c < 3; ++c) pose.rotation(r, c) = rot[r][c].get<double>();
      pose.translation[r] = t[r].get<double>();
    }
    if (!pose.is_valid(1e-6)) throw Error(ErrorCode::kParse, "pose rotation is not a proper rotation");
    pose.rotation = project_to_so3(pose.rotation);
    return pose;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("pose JSON: ") + e.what());
  }
}

inline void write_pose(const std::string& path, const RigidPose& pose) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write pose file " + path);
  out << pose_to_json(pose).dump(2) << '\n';
}

inline RigidPose read_pose(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open pose file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
  return pose_from_json(j);
}

}  // namespace pointvote
