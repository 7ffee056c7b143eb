#pragma once

// Flat binary checkpoint: magic "ATRG1", then one record per parameter:
// name length (u64 LE), name bytes, rank (u64 LE), extents (u64 LE each),
// payload (f64 LE each). Records run to end of file.

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "robattr/error.hpp"
#include "robattr/nn.hpp"

namespace robattr {

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
  uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline bool get_u64(std::istream& is, uint64_t& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return true;
}

inline bool get_f64(std::istream& is, double& d) {
  uint64_t v;
  if (!get_u64(is, v)) return false;
  std::memcpy(&d, &v, 8);
  return true;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[5] = {'A', 'T', 'R', 'G', '1'};

inline void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  ROBATTR_REQUIRE(os.good(), "checkpoint: cannot open ", path, " for writing");
  os.write(kCheckpointMagic, 5);
  for (size_t i = 0; i < net.param_count(); ++i) {
    const std::string& name = net.param_name(i);
    const Tensor& t = net.param(i);
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, static_cast<uint64_t>(t.rank()));
    for (int64_t a = 0; a < t.rank(); ++a)
      detail::put_u64(os, static_cast<uint64_t>(t.extent(a)));
    for (int64_t k = 0; k < t.numel(); ++k) detail::put_f64(os, t[k]);
  }
  ROBATTR_REQUIRE(os.good(), "checkpoint: write to ", path, " failed");
}

inline std::vector<std::pair<std::string, Tensor>> read_checkpoint(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw io_error("checkpoint: cannot open " + path);
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw io_error("checkpoint: bad magic in " + path);
  std::vector<std::pair<std::string, Tensor>> out;
  uint64_t name_len;
  while (detail::get_u64(is, name_len)) {
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw io_error("checkpoint: truncated name in " + path);
    uint64_t rank;
    if (!detail::get_u64(is, rank))
      throw io_error("checkpoint: truncated rank in " + path);
    Shape shape;
    for (uint64_t a = 0; a < rank; ++a) {
      uint64_t e;
      if (!detail::get_u64(is, e))
        throw io_error("checkpoint: truncated extents in " + path);
      shape.push_back(static_cast<int64_t>(e));
    }
    Tensor t(shape);
    for (int64_t k = 0; k < t.numel(); ++k) {
      if (!detail::get_f64(is, t[k]))
        throw io_error("checkpoint: truncated payload in " + path);
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline void load_checkpoint(Network& net, const std::string& path) {
  auto records = read_checkpoint(path);
  ROBATTR_REQUIRE(records.size() == net.param_count(), "checkpoint: ", path,
                  " holds ", records.size(), " params, network has ",
                  net.param_count());
  for (size_t i = 0; i < records.size(); ++i) {
    ROBATTR_REQUIRE(records[i].first == net.param_name(i),
                    "checkpoint: parameter ", i, " is \"", records[i].first,
                    "\", expected \"", net.param_name(i), "\"");
    net.set_param(i, std::move(records[i].second));
  }
}

}  // namespace robattr
