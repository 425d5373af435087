#pragma once

// Dataset trees: a manifest.jsonl at the root with one JSON object per sample.
// Required keys: image1, image2, mvs, flow (paths relative to the root).
// Optional: valid, noc (grayscale PNG masks), prev_flow (.flo), qp, seq, frame.
// Other keys (checksums, codec details) are ignored.

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mvflow/image_io.hpp"
#include "mvflow/sample.hpp"
#include "mvflow/sidecar.hpp"

namespace mvflow {

inline constexpr const char* kManifestName = "manifest.jsonl";

namespace detail {

inline std::string manifest_path(const nlohmann::json& j, const char* key, int lineno) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    throw FormatError(std::string("manifest line ") + std::to_string(lineno) + ": missing '" + key + "'");
  return it->get<std::string>();
}

}  // namespace detail

inline Sample load_sample(const std::filesystem::path& root, const nlohmann::json& entry, int lineno = 0) {
  const auto image1 = detail::manifest_path(entry, "image1", lineno);
  const auto image2 = detail::manifest_path(entry, "image2", lineno);
  const auto mvs = detail::manifest_path(entry, "mvs", lineno);
  const auto flow = detail::manifest_path(entry, "flow", lineno);
  Sample s;
  s.image1 = from_image8(read_png(root / image1));
  s.image2 = from_image8(read_png(root / image2));
  const auto sc = read_sidecar(root / mvs);
  std::tie(s.mv_flow, s.mv_mask) = rasterize(sc);
  s.sidecar = sc;
  s.gt_flow = read_flo(root / flow);
  s.gt_valid = entry.contains("valid") ? read_mask_png(root / entry["valid"].get<std::string>())
                                       : Mask(s.gt_flow.width(), s.gt_flow.height(), 1.0f);
  if (entry.contains("noc")) s.gt_noc = read_mask_png(root / entry["noc"].get<std::string>());
  if (entry.contains("prev_flow")) s.prev_flow = read_flo(root / entry["prev_flow"].get<std::string>());
  validate(s);
  return s;
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& root) {
  std::ifstream in(root / kManifestName);
  if (!in) throw FormatError("dataset: no " + std::string(kManifestName) + " in " + root.string());
  std::vector<Sample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(load_sample(root, j, lineno));
  }
  if (out.empty()) throw FormatError("dataset: manifest in " + root.string() + " lists no samples");
  return out;
}

// Writes samples as seq_NNNN/{000000.png, 000001.png, 000000.mvs, 000000.flo, ...}.
inline void write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  std::string manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    char seq[32];
    std::snprintf(seq, sizeof(seq), "seq_%04zu", i);
    const std::string d = std::string("synthetic/") + seq + "/";
    write_png(to_image8(s.image1), root / (d + "000000.png"));
    write_png(to_image8(s.image2), root / (d + "000001.png"));
    MvSidecar sc = s.sidecar.value_or(MvSidecar{0, s.width(), s.height(), "synthetic", 0, {}});
    write_sidecar(sc, root / (d + "000000.mvs"));
    write_flo(s.gt_flow, root / (d + "000000.flo"));
    write_mask_png(s.gt_valid, root / (d + "000000_valid.png"));
    nlohmann::json j = {{"seq", seq},
                        {"frame", 0},
                        {"image1", d + "000000.png"},
                        {"image2", d + "000001.png"},
                        {"mvs", d + "000000.mvs"},
                        {"flow", d + "000000.flo"},
                        {"valid", d + "000000_valid.png"}};
    if (s.gt_noc) {
      write_mask_png(*s.gt_noc, root / (d + "000000_noc.png"));
      j["noc"] = d + "000000_noc.png";
    }
    if (s.prev_flow) {
      write_flo(*s.prev_flow, root / (d + "000000_prev.flo"));
      j["prev_flow"] = d + "000000_prev.flo";
    }
    manifest += j.dump() + "\n";
  }
  detail::write_file_bytes(root / kManifestName, manifest);
}

}  // namespace mvflow
