#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pointvote/dataset.hpp"

namespace pointvote {

// Binary dataset file, little-endian.
//   header: "PVN1", u32 K, u8 layout (bit0 = rgb), u8 balanced, u64 seed,
//           u32 points per example
//   record: u32 payload bytes, then payload =
//           u8 class, n x (f32 pos[3], f32 normal[3], f32 curvature,
//           [f32 rgb[3]], u16 label),
//           u8 kind, u32 scene id, f64 anchor[3], f64 centroid[3]

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

struct DatasetHeader {
  std::uint32_t num_keypoints = 0;
  bool has_color = false;
  bool balanced = true;
  std::uint64_t seed = 0;
  std::uint32_t points_per_example = 2048;

  bool operator==(const DatasetHeader&) const = default;
};

namespace detail {

constexpr char kDatasetMagic[4] = {'P', 'V', 'N', '1'};
constexpr std::size_t kMetaBytes = 1 + 4 + 6 * 8;

inline std::size_t point_bytes(bool has_color) { return (7 + (has_color ? 3 : 0)) * 4 + 2; }

inline std::size_t record_payload_bytes(const DatasetHeader& h) {
  return 1 + h.points_per_example * point_bytes(h.has_color) + kMetaBytes;
}

template <typename T>
void put(std::vector<char>& buf, const T& v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <typename T>
T take(const char*& p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

}  // namespace detail

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, const DatasetHeader& header)
      : out_(path, std::ios::binary), header_(header) {
    if (!out_) throw Error(ErrorCode::kIo, "cannot write dataset file " + path);
    std::vector<char> buf(detail::kDatasetMagic, detail::kDatasetMagic + 4);
    detail::put(buf, header.num_keypoints);
    detail::put(buf, std::uint8_t(header.has_color ? 1 : 0));
    detail::put(buf, std::uint8_t(header.balanced ? 1 : 0));
    detail::put(buf, header.seed);
    detail::put(buf, header.points_per_example);
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }

  void write(const LabeledExample& ex) {
    if (ex.size() != header_.points_per_example || ex.seg_labels.size() != ex.size()) {
      throw Error(ErrorCode::kInvalidArgument, "example size does not match dataset header");
    }
    buf_.clear();
    detail::put(buf_, std::uint32_t(detail::record_payload_bytes(header_)));
    detail::put(buf_, ex.class_label);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const auto& p = ex.points[i];
      for (float v : p.position) detail::put(buf_, v);
      for (float v : p.normal) detail::put(buf_, v);
      detail::put(buf_, p.curvature);
      if (header_.has_color)
        for (float v : p.color) detail::put(buf_, v);
      if (ex.seg_labels[i] > header_.num_keypoints) {
        throw Error(ErrorCode::kInvalidArgument, "segmentation label exceeds keypoint count");
      }
      detail::put(buf_, ex.seg_labels[i]);
    }
    detail::put(buf_, static_cast<std::uint8_t>(ex.meta.kind));
    detail::put(buf_, ex.meta.scene_id);
    for (int k = 0; k < 3; ++k) detail::put(buf_, ex.meta.anchor[k]);
    for (int k = 0; k < 3; ++k) detail::put(buf_, ex.meta.centroid[k]);
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out_) throw Error(ErrorCode::kIo, "failed writing dataset record");
    ++count_;
  }

  std::size_t count() const { return count_; }
  const DatasetHeader& header() const { return header_; }

 private:
  std::ofstream out_;
  DatasetHeader header_;
  std::vector<char> buf_;
  std::size_t count_ = 0;
};

/// Streams records one at a time; memory use is one record.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error(ErrorCode::kIo, "cannot open dataset file " + path);
    char head[4 + 4 + 1 + 1 + 8 + 4];
    if (!in_.read(head, sizeof head)) throw Error(ErrorCode::kParse, "dataset: truncated header");
    if (std::memcmp(head, detail::kDatasetMagic, 4) != 0) throw Error(ErrorCode::kParse, "dataset: bad magic");
    const char* p = head + 4;
    header_.num_keypoints = detail::take<std::uint32_t>(p);
    const auto layout = detail::take<std::uint8_t>(p);
    if (layout > 1) throw Error(ErrorCode::kParse, "dataset: unknown channel layout");
    header_.has_color = layout & 1;
    header_.balanced = detail::take<std::uint8_t>(p) != 0;
    header_.seed = detail::take<std::uint64_t>(p);
    header_.points_per_example = detail::take<std::uint32_t>(p);
    if (header_.points_per_example == 0) throw Error(ErrorCode::kParse, "dataset: zero points per example");
  }

  const DatasetHeader& header() const { return header_; }
  std::size_t records_read() const { return index_; }
  std::size_t buffer_capacity() const { return buf_.capacity(); }

  /// False at a clean end of file.
  bool next(LabeledExample& ex) {
    std::uint32_t len = 0;
    in_.read(reinterpret_cast<char*>(&len), 4);
    if (in_.gcount() == 0 && in_.eof()) return false;
    const auto fail = [&](const std::string& what) {
      return Error(ErrorCode::kParse, "dataset record " + std::to_string(index_) + ": " + what);
    };
    if (in_.gcount() != 4) throw fail("truncated length prefix");
    const std::size_t expected = detail::record_payload_bytes(header_);
    if (len != expected) throw fail("length " + std::to_string(len) + " != " + std::to_string(expected));
    buf_.resize(len);
    if (!in_.read(buf_.data(), len)) throw fail("truncated payload");
    const char* p = buf_.data();
    const std::size_t n = header_.points_per_example;
    ex.class_label = detail::take<std::uint8_t>(p);
    if (ex.class_label > 1) throw fail("class label out of range");
    ex.has_color = header_.has_color;
    ex.points.resize(n);
    ex.seg_labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& q = ex.points[i];
      for (auto& v : q.position) v = detail::take<float>(p);
      for (auto& v : q.normal) v = detail::take<float>(p);
      q.curvature = detail::take<float>(p);
      if (header_.has_color) {
        for (auto& v : q.color) v = detail::take<float>(p);
      } else {
        q.color = {0, 0, 0};
      }
      ex.seg_labels[i] = detail::take<std::uint16_t>(p);
      if (ex.seg_labels[i] > header_.num_keypoints) throw fail("segmentation label out of range");
    }
    const auto kind = detail::take<std::uint8_t>(p);
    if (kind > static_cast<std::uint8_t>(ExampleKind::kMixedBackground)) throw fail("unknown example kind");
    ex.meta.kind = static_cast<ExampleKind>(kind);
    ex.meta.scene_id = detail::take<std::uint32_t>(p);
    for (int k = 0; k < 3; ++k) ex.meta.anchor[k] = detail::take<double>(p);
    for (int k = 0; k < 3; ++k) ex.meta.centroid[k] = detail::take<double>(p);
    ++index_;
    return true;
  }

 private:
  std::ifstream in_;
  DatasetHeader header_;
  std::vector<char> buf_;
  std::size_t index_ = 0;
};

inline void write_dataset(const std::string& path, const DatasetHeader& header,
                          const std::vector<LabeledExample>& examples) {
  DatasetWriter w(path, header);
  for (const auto& ex : examples) w.write(ex);
}

inline std::vector<LabeledExample> read_dataset(const std::string& path, DatasetHeader* header = nullptr) {
  DatasetReader r(path);
  if (header) *header = r.header();
  std::vector<LabeledExample> out;
  LabeledExample ex;
  while (r.next(ex)) out.push_back(ex);
  return out;
}

}  // namespace pointvote
