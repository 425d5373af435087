#pragma once

// mvsidecar/1: a text file whose first line is the version tag "mvsidecar/1",
// followed by one JSON object per line, one per frame. See docs/formats.md.

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "mvflow/flow.hpp"

namespace mvflow {

inline constexpr const char* kSidecarVersion = "mvsidecar/1";

struct MotionVectorRecord {
  int block_x = 0;
  int block_y = 0;
  int block_w = 0;
  int block_h = 0;
  int mv_dx = 0;  // sub-pixel units, frame t -> t+1
  int mv_dy = 0;
  int mv_scale = 4;

  friend bool operator==(const MotionVectorRecord&, const MotionVectorRecord&) = default;
};

struct MvSidecar {
  int frame_index = 0;
  int frame_w = 0;
  int frame_h = 0;
  std::string codec = "h264";
  int qp = 0;
  std::vector<MotionVectorRecord> records;  // empty for intra frames

  friend bool operator==(const MvSidecar&, const MvSidecar&) = default;
};

inline void validate(const MotionVectorRecord& r) {
  if (r.block_w <= 0 || r.block_h <= 0) throw FormatError("sidecar: block_w/block_h must be positive");
  if (r.mv_scale != 1 && r.mv_scale != 2 && r.mv_scale != 4) throw FormatError("sidecar: mv_scale must be 1, 2 or 4");
}

inline void validate(const MvSidecar& s) {
  if (s.frame_w <= 0 || s.frame_h <= 0) throw FormatError("sidecar: frame_w/frame_h must be positive");
  if (s.codec.empty()) throw FormatError("sidecar: codec must not be empty");
  if (s.codec == "h264" && (s.qp < 0 || s.qp > 51))
    throw FormatError("sidecar: qp " + std::to_string(s.qp) + " outside [0,51] for codec h264");
  for (const auto& r : s.records) validate(r);
}

namespace detail {

inline int json_int(const nlohmann::json& obj, const char* field, const char* where) {
  auto it = obj.find(field);
  if (it == obj.end()) throw FormatError(std::string("sidecar: missing field '") + field + "' in " + where);
  if (!it->is_number_integer())
    throw FormatError(std::string("sidecar: field '") + field + "' in " + where + " must be an integer");
  return it->get<int>();
}

}  // namespace detail

inline nlohmann::json to_json(const MvSidecar& s) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : s.records)
    recs.push_back({{"block_x", r.block_x}, {"block_y", r.block_y}, {"block_w", r.block_w}, {"block_h", r.block_h},
                    {"mv_dx", r.mv_dx}, {"mv_dy", r.mv_dy}, {"mv_scale", r.mv_scale}});
  return {{"frame_index", s.frame_index}, {"frame_w", s.frame_w}, {"frame_h", s.frame_h},
          {"codec", s.codec},             {"qp", s.qp},           {"records", std::move(recs)}};
}

inline MvSidecar sidecar_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("sidecar: frame entry is not an object");
  MvSidecar s;
  s.frame_index = detail::json_int(j, "frame_index", "frame");
  s.frame_w = detail::json_int(j, "frame_w", "frame");
  s.frame_h = detail::json_int(j, "frame_h", "frame");
  s.qp = detail::json_int(j, "qp", "frame");
  auto codec = j.find("codec");
  if (codec == j.end()) throw FormatError("sidecar: missing field 'codec' in frame");
  if (!codec->is_string()) throw FormatError("sidecar: field 'codec' in frame must be a string");
  s.codec = codec->get<std::string>();
  auto recs = j.find("records");
  if (recs == j.end()) throw FormatError("sidecar: missing field 'records' in frame");
  if (!recs->is_array()) throw FormatError("sidecar: field 'records' must be an array");
  for (const auto& r : *recs) {
    if (!r.is_object()) throw FormatError("sidecar: record is not an object");
    MotionVectorRecord m;
    m.block_x = detail::json_int(r, "block_x", "record");
    m.block_y = detail::json_int(r, "block_y", "record");
    m.block_w = detail::json_int(r, "block_w", "record");
    m.block_h = detail::json_int(r, "block_h", "record");
    m.mv_dx = detail::json_int(r, "mv_dx", "record");
    m.mv_dy = detail::json_int(r, "mv_dy", "record");
    m.mv_scale = detail::json_int(r, "mv_scale", "record");
    s.records.push_back(m);
  }
  validate(s);
  return s;
}

inline std::string encode_sidecars(const std::vector<MvSidecar>& frames) {
  std::string out = std::string(kSidecarVersion) + "\n";
  for (const auto& f : frames) {
    validate(f);
    out += to_json(f).dump() + "\n";
  }
  return out;
}

inline std::vector<MvSidecar> decode_sidecars(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("sidecar: empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSidecarVersion)
    throw FormatError("sidecar: version mismatch (expected '" + std::string(kSidecarVersion) + "', got '" + line + "')");
  std::vector<MvSidecar> frames;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("sidecar: malformed or truncated frame on line " + std::to_string(lineno) + ": " + e.what());
    }
    frames.push_back(sidecar_from_json(j));
  }
  if (!text.empty() && text.back() != '\n') throw FormatError("sidecar: truncated file (missing final newline)");
  return frames;
}

inline void write_sidecars(const std::vector<MvSidecar>& frames, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_sidecars(frames));
}

inline void write_sidecar(const MvSidecar& s, const std::filesystem::path& path) { write_sidecars({s}, path); }

inline std::vector<MvSidecar> read_sidecars(const std::filesystem::path& path) {
  return decode_sidecars(detail::read_file_bytes(path));
}

inline MvSidecar read_sidecar(const std::filesystem::path& path) {
  auto frames = read_sidecars(path);
  if (frames.size() != 1)
    throw FormatError("sidecar: expected exactly one frame in " + path.string() + ", found " +
                      std::to_string(frames.size()));
  return frames.front();
}

struct RasterizeOptions {
  bool clip = true;  // clip blocks to the frame; when false, out-of-frame blocks are errors
};

// Block fill: every covered pixel gets (mv_dx, mv_dy) / mv_scale; later records win on overlap.
inline std::pair<FlowField, Mask> rasterize(const MvSidecar& s, const RasterizeOptions& opt = {}) {
  validate(s);
  FlowField flow(s.frame_w, s.frame_h);
  Mask mask(s.frame_w, s.frame_h);
  for (const auto& r : s.records) {
    const int x0 = r.block_x, y0 = r.block_y, x1 = r.block_x + r.block_w, y1 = r.block_y + r.block_h;
    if (!opt.clip && (x0 < 0 || y0 < 0 || x1 > s.frame_w || y1 > s.frame_h))
      throw FormatError("rasterize: block at (" + std::to_string(x0) + "," + std::to_string(y0) +
                        ") extends outside the frame and clipping is disabled");
    const float u = static_cast<float>(r.mv_dx) / static_cast<float>(r.mv_scale);
    const float v = static_cast<float>(r.mv_dy) / static_cast<float>(r.mv_scale);
    for (int y = std::max(y0, 0); y < std::min(y1, s.frame_h); ++y)
      for (int x = std::max(x0, 0); x < std::min(x1, s.frame_w); ++x) {
        flow.u(y, x) = u;
        flow.v(y, x) = v;
        mask(y, x) = 1.0f;
      }
  }
  return {flow, mask};
}

}  // namespace mvflow
