#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "robattr/error.hpp"

namespace robattr {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense n-dimensional array of 64-bit reals, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(static_cast<size_t>(shape_numel(shape_)), fill) {
    check_extents();
  }
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    ROBATTR_REQUIRE(shape_numel(shape_) == static_cast<int64_t>(data_.size()),
                    "tensor: shape ", shape_str(shape_), " does not match ",
                    data_.size(), " elements");
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }
  static Tensor full(Shape s, double v) { return Tensor(std::move(s), v); }

  const Shape& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t extent(int64_t axis) const { return shape_[static_cast<size_t>(axis)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double value() const {
    ROBATTR_REQUIRE(numel() == 1, "tensor: value() on non-scalar ",
                    shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Rows/cols when viewed as a 2-d array: rank-1 tensors are treated as a
  // single row, higher ranks fold all leading axes into rows.
  int64_t rows2d() const {
    if (shape_.empty()) return 1;
    if (shape_.size() == 1) return 1;
    int64_t r = 1;
    for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return r;
  }
  int64_t cols2d() const { return shape_.empty() ? 1 : shape_.back(); }

 private:
  void check_extents() const {
    for (int64_t e : shape_)
      ROBATTR_REQUIRE(e >= 0, "tensor: negative extent in ", shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

namespace detail {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

inline MapC mat_view(const Tensor& t, int64_t rows, int64_t cols) {
  return MapC(t.data(), rows, cols);
}
inline MapM mat_view(Tensor& t, int64_t rows, int64_t cols) {
  return MapM(t.data(), rows, cols);
}

// Broadcasting for rank <= 2 operands: shapes align right; an extent of 1
// stretches. Rank-1 [n] aligns as [1,n].
struct Bcast2 {
  int64_t rows = 1, cols = 1;     // result extents
  int64_t ar = 1, ac = 1, br = 1, bc = 1;  // operand extents
  bool ok = false;
};

inline Bcast2 broadcast2(const Shape& a, const Shape& b) {
  Bcast2 r;
  if (a.size() > 2 || b.size() > 2) return r;
  auto dims = [](const Shape& s) -> std::pair<int64_t, int64_t> {
    if (s.empty()) return {1, 1};
    if (s.size() == 1) return {1, s[0]};
    return {s[0], s[1]};
  };
  auto [ar, ac] = dims(a);
  auto [br, bc] = dims(b);
  if (ar != br && ar != 1 && br != 1) return r;
  if (ac != bc && ac != 1 && bc != 1) return r;
  r.rows = std::max(ar, br);
  r.cols = std::max(ac, bc);
  r.ar = ar; r.ac = ac; r.br = br; r.bc = bc;
  r.ok = true;
  return r;
}

template <class F>
Tensor binary_broadcast(const char* opname, const Tensor& a, const Tensor& b, F f) {
  if (same_shape(a, b)) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  // equal-shape fast path failed; allow scalar vs any-rank, else rank <= 2
  if (a.numel() == 1 || b.numel() == 1) {
    if (a.numel() == 1 && b.numel() == 1) {
      // both single-element: keep the higher-rank shape
      Tensor out(a.rank() >= b.rank() ? a.shape() : b.shape());
      out[0] = f(a[0], b[0]);
      return out;
    }
    if (a.numel() == 1) {
      Tensor out(b.shape());
      const double s = a[0];
      const double* pb = b.data();
      double* po = out.data();
      for (int64_t i = 0; i < b.numel(); ++i) po[i] = f(s, pb[i]);
      return out;
    }
    Tensor out(a.shape());
    const double s = b[0];
    const double* pa = a.data();
    double* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = f(pa[i], s);
    return out;
  }
  const Bcast2 bc = broadcast2(a.shape(), b.shape());
  ROBATTR_REQUIRE(bc.ok, opname, ": shapes ", shape_str(a.shape()), " and ",
                  shape_str(b.shape()), " do not broadcast");
  Shape out_shape = (a.rank() >= 2 || b.rank() >= 2)
                        ? Shape{bc.rows, bc.cols}
                        : Shape{bc.cols};
  Tensor out(out_shape);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < bc.rows; ++i) {
    const int64_t ia = (bc.ar == 1 ? 0 : i) * bc.ac;
    const int64_t ib = (bc.br == 1 ? 0 : i) * bc.bc;
    const int64_t io = i * bc.cols;
    for (int64_t j = 0; j < bc.cols; ++j) {
      const double va = pa[ia + (bc.ac == 1 ? 0 : j)];
      const double vb = pb[ib + (bc.bc == 1 ? 0 : j)];
      po[io + j] = f(va, vb);
    }
  }
  return out;
}

template <class F>
Tensor unary_map(const Tensor& a, F f) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = f(pa[i]);
  return out;
}

inline Tensor matmul_val(const Tensor& a, const Tensor& b) {
  ROBATTR_REQUIRE(a.rank() == 2 && b.rank() == 2,
                  "matmul: needs rank-2 operands, got ", shape_str(a.shape()),
                  " and ", shape_str(b.shape()));
  ROBATTR_REQUIRE(a.extent(1) == b.extent(0), "matmul: inner extents differ: ",
                  shape_str(a.shape()), " x ", shape_str(b.shape()));
  Tensor out(Shape{a.extent(0), b.extent(1)});
  mat_view(out, a.extent(0), b.extent(1)).noalias() =
      mat_view(a, a.extent(0), a.extent(1)) * mat_view(b, b.extent(0), b.extent(1));
  return out;
}

inline Tensor transpose_val(const Tensor& a) {
  ROBATTR_REQUIRE(a.rank() == 2, "transpose: needs rank-2, got ",
                  shape_str(a.shape()));
  Tensor out(Shape{a.extent(1), a.extent(0)});
  mat_view(out, a.extent(1), a.extent(0)).noalias() =
      mat_view(a, a.extent(0), a.extent(1)).transpose();
  return out;
}

inline double softplus_scalar(double x) {
  // log(1 + e^x), overflow-safe
  if (x > 35.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

}  // namespace robattr
