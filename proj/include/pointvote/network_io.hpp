#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>

#include "pointvote/network.hpp"

namespace pointvote {

// Weights file, little-endian:
//   "PVNW", u32 version, u32 config bytes, config block, u32 crc32,
//   f32 tensors in declaration order.
// The CRC covers the config block and the tensor bytes.
// Config block: i32 in_channels, num_points, num_keypoints, skip_layer;
//   u8 normalize_input; f64 input_scale; three width lists (u32 count, i32...)
//   for encoder, classifier, segmenter.

static_assert(std::endian::native == std::endian::little, "weights IO assumes a little-endian host");

namespace detail {

constexpr char kWeightsMagic[4] = {'P', 'V', 'N', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

template <typename T>
void append(std::vector<char>& buf, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

struct Cursor {
  const char* p;
  const char* end;
  template <typename T>
  T get() {
    if (static_cast<std::size_t>(end - p) < sizeof(T)) throw Error(ErrorCode::kParse, "weights: truncated config");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }
};

inline std::vector<char> encode_config(const NetworkConfig& c) {
  std::vector<char> b;
  append(b, std::int32_t(c.in_channels));
  append(b, std::int32_t(c.num_points));
  append(b, std::int32_t(c.num_keypoints));
  append(b, std::int32_t(c.skip_layer));
  append(b, std::uint8_t(c.normalize_input ? 1 : 0));
  append(b, c.input_scale);
  for (const auto* v : {&c.encoder, &c.classifier, &c.segmenter}) {
    append(b, std::uint32_t(v->size()));
    for (int w : *v) append(b, std::int32_t(w));
  }
  return b;
}

inline NetworkConfig decode_config(const std::vector<char>& b) {
  Cursor c{b.data(), b.data() + b.size()};
  NetworkConfig cfg;
  cfg.in_channels = c.get<std::int32_t>();
  cfg.num_points = c.get<std::int32_t>();
  cfg.num_keypoints = c.get<std::int32_t>();
  cfg.skip_layer = c.get<std::int32_t>();
  cfg.normalize_input = c.get<std::uint8_t>() != 0;
  cfg.input_scale = c.get<double>();
  for (auto* v : {&cfg.encoder, &cfg.classifier, &cfg.segmenter}) {
    const auto n = c.get<std::uint32_t>();
    if (n > 64) throw Error(ErrorCode::kParse, "weights: implausible layer count");
    v->clear();
    for (std::uint32_t i = 0; i < n; ++i) v->push_back(c.get<std::int32_t>());
  }
  if (c.p != c.end) throw Error(ErrorCode::kParse, "weights: trailing config bytes");
  return cfg;
}

inline std::uint32_t crc_update(std::uint32_t crc, const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace detail

template <typename T>
void save_weights(const std::string& path, const PointNet<T>& net) {
  const auto cfg = detail::encode_config(net.config());
  std::vector<float> data;
  for (const auto& s : net.params().tensors())
    for (T v : s) data.push_back(static_cast<float>(v));
  std::uint32_t crc = detail::crc_update(0, cfg.data(), cfg.size());
  crc = detail::crc_update(crc, data.data(), data.size() * sizeof(float));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write weights file " + path);
  std::vector<char> head(detail::kWeightsMagic, detail::kWeightsMagic + 4);
  detail::append(head, detail::kWeightsVersion);
  detail::append(head, std::uint32_t(cfg.size()));
  head.insert(head.end(), cfg.begin(), cfg.end());
  detail::append(head, crc);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!out) throw Error(ErrorCode::kIo, "failed writing weights file " + path);
}

/// Loads weights; `expected_keypoints`, if given, must match the stored K.
template <typename T = float>
PointNet<T> load_weights(const std::string& path, std::optional<int> expected_keypoints = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open weights file " + path);
  char magic[4];
  std::uint32_t version = 0, cfg_len = 0, crc = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&cfg_len), 4);
  if (!in || std::memcmp(magic, detail::kWeightsMagic, 4) != 0) throw Error(ErrorCode::kParse, "weights: bad magic");
  if (version != detail::kWeightsVersion) throw Error(ErrorCode::kParse, "weights: unsupported version");
  if (cfg_len > 4096) throw Error(ErrorCode::kParse, "weights: implausible config size");
  std::vector<char> cfg_bytes(cfg_len);
  in.read(cfg_bytes.data(), cfg_len);
  in.read(reinterpret_cast<char*>(&crc), 4);
  if (!in) throw Error(ErrorCode::kParse, "weights: truncated header");
  std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::uint32_t actual = detail::crc_update(0, cfg_bytes.data(), cfg_bytes.size());
  actual = detail::crc_update(actual, rest.data(), rest.size());
  if (actual != crc) throw Error(ErrorCode::kChecksum, "weights: checksum mismatch in " + path);

  NetworkConfig cfg = detail::decode_config(cfg_bytes);
  cfg.validate();
  if (expected_keypoints && *expected_keypoints != cfg.num_keypoints) {
    throw Error(ErrorCode::kConfig, "weights trained for K=" + std::to_string(cfg.num_keypoints) + ", model has K=" +
                                        std::to_string(*expected_keypoints));
  }
  auto params = NetParams<T>::zeros(cfg);
  if (rest.size() != params.count() * sizeof(float)) throw Error(ErrorCode::kConfig, "weights: tensor size mismatch");
  const char* p = rest.data();
  for (auto& s : params.tensors()) {
    for (auto& v : s) {
      float f;
      std::memcpy(&f, p, sizeof f);
      p += sizeof f;
      v = static_cast<T>(f);
    }
  }
  return PointNet<T>(cfg, std::move(params));
}

}  // namespace pointvote
