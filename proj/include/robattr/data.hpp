#pragma once

// Dataset ingestion: the IDX binary format (big-endian magic + extents +
// unsigned bytes, pixels scaled to [0,1] by /255) and deterministic synthetic
// 2-d sets for fast tests.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "robattr/error.hpp"
#include "robattr/objectives.hpp"
#include "robattr/rng.hpp"
#include "robattr/tensor.hpp"

namespace robattr {

struct Sample {
  Tensor x;  // flat, entries in [0,1]
  int y = 0;
};

struct Dataset {
  std::string name;
  std::string split;
  std::vector<Sample> samples;
  Shape input_shape;  // per-sample shape, e.g. {784} or {1,28,28}
  int num_classes = 0;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  int64_t dim() const { return shape_numel(input_shape); }

  void validate() const {
    ROBATTR_REQUIRE(!samples.empty(), "dataset ", name, ": empty");
    for (const Sample& s : samples) {
      ROBATTR_REQUIRE(s.x.numel() == dim(), "dataset ", name,
                      ": inconsistent sample shape");
      ROBATTR_REQUIRE(s.y >= 0 && s.y < num_classes, "dataset ", name,
                      ": label ", s.y, " outside [0,", num_classes, ")");
    }
  }

  Batch batch(const std::vector<int64_t>& indices) const {
    const int64_t d = dim();
    Batch b;
    b.x = Tensor(Shape{static_cast<int64_t>(indices.size()), d});
    b.y.reserve(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
      const Sample& s = samples[static_cast<size_t>(indices[i])];
      std::copy(s.x.data(), s.x.data() + d,
                b.x.data() + static_cast<int64_t>(i) * d);
      b.y.push_back(s.y);
    }
    return b;
  }

  Dataset head(int64_t n) const {
    Dataset out = *this;
    if (n < out.size())
      out.samples.resize(static_cast<size_t>(n));
    return out;
  }
};

namespace detail {

inline uint32_t read_be32(std::istream& is, const std::string& path,
                          const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw io_error("idx: " + path + ": truncated while reading " + what);
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

inline void write_be32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

inline Dataset load_idx(const std::string& images_path,
                        const std::string& labels_path,
                        const std::string& name = "idx") {
  std::ifstream img(images_path, std::ios::binary);
  if (!img.good()) throw io_error("idx: cannot open " + images_path);
  const uint32_t magic_i = detail::read_be32(img, images_path, "magic");
  if (magic_i != 0x00000803)
    throw io_error(detail::msg_cat("idx: ", images_path, ": bad image magic 0x",
                                   std::hex, magic_i, ", expected 0x803"));
  const uint32_t count = detail::read_be32(img, images_path, "count");
  const uint32_t rows = detail::read_be32(img, images_path, "rows");
  const uint32_t cols = detail::read_be32(img, images_path, "cols");
  const int64_t pixels = static_cast<int64_t>(rows) * cols;
  std::vector<unsigned char> buf(static_cast<size_t>(count) *
                                 static_cast<size_t>(pixels));
  img.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size()));
  const std::streamsize got = img.gcount();
  if (got != static_cast<std::streamsize>(buf.size()))
    throw io_error(detail::msg_cat("idx: ", images_path, ": expected ",
                                   buf.size(), " payload bytes, got ", got));

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab.good()) throw io_error("idx: cannot open " + labels_path);
  const uint32_t magic_l = detail::read_be32(lab, labels_path, "magic");
  if (magic_l != 0x00000801)
    throw io_error(detail::msg_cat("idx: ", labels_path, ": bad label magic 0x",
                                   std::hex, magic_l, ", expected 0x801"));
  const uint32_t lcount = detail::read_be32(lab, labels_path, "count");
  if (lcount != count)
    throw io_error(detail::msg_cat("idx: ", count, " images but ", lcount,
                                   " labels"));
  std::vector<unsigned char> labels(lcount);
  lab.read(reinterpret_cast<char*>(labels.data()), lcount);
  if (lab.gcount() != static_cast<std::streamsize>(lcount))
    throw io_error(detail::msg_cat("idx: ", labels_path, ": expected ", lcount,
                                   " label bytes, got ", lab.gcount()));

  Dataset ds;
  ds.name = name;
  ds.input_shape = {pixels};
  int max_label = 0;
  ds.samples.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Sample s;
    s.x = Tensor(Shape{pixels});
    const unsigned char* src = buf.data() + static_cast<size_t>(i) * pixels;
    for (int64_t p = 0; p < pixels; ++p)
      s.x[p] = static_cast<double>(src[p]) / 255.0;
    s.y = labels[i];
    max_label = std::max(max_label, s.y);
    ds.samples.push_back(std::move(s));
  }
  ds.num_classes = std::max(10, max_label + 1);
  ds.validate();
  return ds;
}

inline void write_idx(const std::string& images_path,
                      const std::string& labels_path, const Dataset& ds,
                      uint32_t rows, uint32_t cols) {
  ROBATTR_REQUIRE(static_cast<int64_t>(rows) * cols == ds.dim(),
                  "write_idx: ", rows, "x", cols, " does not match dim ",
                  ds.dim());
  std::ofstream img(images_path, std::ios::binary);
  ROBATTR_REQUIRE(img.good(), "write_idx: cannot open ", images_path);
  detail::write_be32(img, 0x00000803);
  detail::write_be32(img, static_cast<uint32_t>(ds.size()));
  detail::write_be32(img, rows);
  detail::write_be32(img, cols);
  for (const Sample& s : ds.samples)
    for (int64_t p = 0; p < s.x.numel(); ++p)
      img.put(static_cast<char>(
          static_cast<unsigned char>(s.x[p] * 255.0 + 0.5)));
  std::ofstream lab(labels_path, std::ios::binary);
  ROBATTR_REQUIRE(lab.good(), "write_idx: cannot open ", labels_path);
  detail::write_be32(lab, 0x00000801);
  detail::write_be32(lab, static_cast<uint32_t>(ds.size()));
  for (const Sample& s : ds.samples)
    lab.put(static_cast<char>(static_cast<unsigned char>(s.y)));
}

// Two clusters in [0,1]^2, linearly separable with the default spread.
inline Dataset synth_two_gaussians(int64_t n, uint64_t seed,
                                   double spread = 0.07) {
  ROBATTR_REQUIRE(n >= 2, "two_gaussians: n must be >= 2");
  Dataset ds;
  ds.name = "two_gaussians";
  ds.input_shape = {2};
  ds.num_classes = 2;
  Rng rng(seed);
  const double means[2][2] = {{0.3, 0.3}, {0.7, 0.7}};
  for (int64_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    Sample s;
    s.x = Tensor(Shape{2});
    for (int j = 0; j < 2; ++j) {
      double v = means[y][j] + spread * rng.normal();
      s.x[j] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    s.y = y;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

// XOR of the two half-planes; not linearly separable.
inline Dataset synth_xor_grid(int64_t n, uint64_t seed) {
  ROBATTR_REQUIRE(n >= 2, "xor_grid: n must be >= 2");
  Dataset ds;
  ds.name = "xor_grid";
  ds.input_shape = {2};
  ds.num_classes = 2;
  Rng rng(seed);
  const double centers[4][2] = {
      {0.25, 0.25}, {0.75, 0.25}, {0.25, 0.75}, {0.75, 0.75}};
  for (int64_t i = 0; i < n; ++i) {
    const int cell = static_cast<int>(i % 4);
    Sample s;
    s.x = Tensor(Shape{2});
    for (int j = 0; j < 2; ++j) {
      double v = centers[cell][j] + rng.uniform(-0.12, 0.12);
      s.x[j] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
    s.y = ((s.x[0] > 0.5) != (s.x[1] > 0.5)) ? 1 : 0;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace robattr
