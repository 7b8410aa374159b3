#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "surgagg/errors.hpp"

namespace surgagg {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor2(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) {
      throw ContractViolation("Tensor2: data length " + std::to_string(data.size()) +
                              " != " + std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  Vector column(std::size_t c) const {
    Vector out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;
};

inline std::string shape_str(const Tensor2& t) {
  return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

/// Rows of `src` selected by `idx`, in the given order.
inline Tensor2 gather_rows(const Tensor2& src, std::span<const std::size_t> idx) {
  Tensor2 out(idx.size(), src.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto from = src.row(idx[i]);
    std::copy(from.begin(), from.end(), out.row(i).begin());
  }
  return out;
}

/// Columns of `src` selected by `idx`, in the given order.
inline Tensor2 gather_cols(const Tensor2& src, std::span<const std::size_t> idx) {
  Tensor2 out(src.rows, idx.size());
  for (std::size_t r = 0; r < src.rows; ++r) {
    for (std::size_t j = 0; j < idx.size(); ++j) out(r, j) = src(r, idx[j]);
  }
  return out;
}

/// Stacks matrices with equal column counts on top of each other.
inline Tensor2 vstack(std::span<const Tensor2> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols != cols) throw ContractViolation("vstack: column mismatch");
    rows += p.rows;
  }
  Tensor2 out(rows, cols);
  auto it = out.data.begin();
  for (const auto& p : parts) it = std::copy(p.data.begin(), p.data.end(), it);
  return out;
}

}  // namespace surgagg
