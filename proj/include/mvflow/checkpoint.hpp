#pragma once

// Checkpoint binary layout (all integers little-endian):
//
//   char[8]  magic "MVFLOWCK"
//   u32      format version (1)
//   u64      step
//   u32      config length, then that many bytes of config text
//   u32      tensor count N
//   N x      { u32 name length, name bytes, u32 rank, u32 dims[rank] }
//   N x      float32 data, in name-table order
//
// Parameters are stored as "param/<name>", Adam moments as "adam_m/<name>" and
// "adam_v/<name>".

#include <cstdint>
#include <filesystem>
#include <string>

#include "mvflow/flow.hpp"

namespace mvflow {

inline constexpr char kCheckpointMagic[8] = {'M', 'V', 'F', 'L', 'O', 'W', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  ParamSet<float> params;
  ParamSet<float> adam_m;
  ParamSet<float> adam_v;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::pair<std::string, const Tensor<float>*>> table;
  for (auto& [k, v] : ck.params) table.emplace_back("param/" + k, &v);
  for (auto& [k, v] : ck.adam_m) table.emplace_back("adam_m/" + k, &v);
  for (auto& [k, v] : ck.adam_v) table.emplace_back("adam_v/" + k, &v);

  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le(buf, kCheckpointVersion);
  detail::put_le(buf, static_cast<std::uint64_t>(ck.step));
  detail::put_le(buf, static_cast<std::uint32_t>(ck.config_text.size()));
  buf += ck.config_text;
  detail::put_le(buf, static_cast<std::uint32_t>(table.size()));
  for (auto& [name, t] : table) {
    detail::put_le(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_le(buf, static_cast<std::uint32_t>(t->rank()));
    for (int d : t->shape()) detail::put_le(buf, static_cast<std::uint32_t>(d));
  }
  for (auto& [name, t] : table)
    for (float v : t->data()) detail::put_le(buf, v);
  return buf;
}

namespace detail {

struct Reader {
  const std::string& buf;
  std::size_t off = 0;

  void need(std::size_t n) const {
    if (off + n > buf.size()) throw FormatError("checkpoint: truncated file");
  }
  template <class V>
  V get() {
    need(sizeof(V));
    V v = get_le<V>(buf, off);
    off += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(off, n);
    off += n;
    return s;
  }
};

}  // namespace detail

inline Checkpoint decode_checkpoint(const std::string& buf) {
  detail::Reader rd{buf};
  if (rd.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw FormatError("checkpoint: bad magic");
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  Checkpoint ck;
  ck.step = rd.get<std::uint64_t>();
  ck.config_text = rd.bytes(rd.get<std::uint32_t>());
  const auto n = rd.get<std::uint32_t>();
  std::vector<std::pair<std::string, Shape>> table;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = rd.bytes(rd.get<std::uint32_t>());
    const auto rank = rd.get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for " + name);
    Shape s;
    for (std::uint32_t r = 0; r < rank; ++r) s.push_back(static_cast<int>(rd.get<std::uint32_t>()));
    table.emplace_back(std::move(name), std::move(s));
  }
  for (auto& [name, shape] : table) {
    Tensor<float> t(shape);
    rd.need(4 * t.size());
    for (auto& v : t.vec()) v = rd.get<float>();
    const auto slash = name.find('/');
    const auto kind = name.substr(0, slash), key = slash == std::string::npos ? "" : name.substr(slash + 1);
    if (kind == "param") ck.params.add(key, std::move(t));
    else if (kind == "adam_m") ck.adam_m.add(key, std::move(t));
    else if (kind == "adam_v") ck.adam_v.add(key, std::move(t));
    else throw FormatError("checkpoint: unknown tensor kind in '" + name + "'");
  }
  if (rd.off != buf.size()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file_bytes(path));
}

}  // namespace mvflow
