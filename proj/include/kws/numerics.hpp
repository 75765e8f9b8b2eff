#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kws/error.hpp"

namespace kws {

/// Dense row-major matrix. Feature maps are stored channel-major: one row per
/// channel, one column per time frame.
template <class Real>
class BasicMatrix {
 public:
  using value_type = Real;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length does not match rows x cols");
    }
  }
  BasicMatrix(std::initializer_list<std::initializer_list<Real>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<Real> column(std::size_t c) const {
    std::vector<Real> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = data_[r * cols_ + c];
    return out;
  }
  void set_column(std::size_t c, std::span<const Real> values) {
    if (values.size() != rows_) throw ShapeError("column length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) data_[r * cols_ + c] = values[r];
  }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using Matrix = BasicMatrix<float>;
using Matrix64 = BasicMatrix<double>;

template <class To, class From>
BasicMatrix<To> matrix_cast(const BasicMatrix<From>& m) {
  std::vector<To> data(m.values().begin(), m.values().end());
  return BasicMatrix<To>(m.rows(), m.cols(), std::move(data));
}

template <class To, class From>
std::vector<To> vector_cast(const std::vector<From>& v) {
  return std::vector<To>(v.begin(), v.end());
}

/// y = m * v, accumulated in the matrix scalar type.
template <class Real>
std::vector<Real> matvec(const BasicMatrix<Real>& m, std::span<const Real> v) {
  if (v.size() != m.cols()) {
    throw ShapeError("matvec: vector length " + std::to_string(v.size()) +
                     " != matrix cols " + std::to_string(m.cols()));
  }
  std::vector<Real> out(m.rows(), Real(0));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    Real acc = 0;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

/// Numerically stable softmax (max subtraction).
template <class Real>
std::vector<Real> softmax(std::span<const Real> logits);

extern template std::vector<float> softmax(std::span<const float>);
extern template std::vector<double> softmax(std::span<const double>);

/// Deterministic PRNG: xoshiro256** seeded through splitmix64. Output is
/// identical on every platform; all distribution sampling is done here rather
/// than through <random> distributions, whose algorithms are unspecified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 bits of resolution.
  double next_double();
  /// Uniform in [lo, hi); returns lo when lo == hi.
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (consumes two uniforms per call).
  double normal();
  /// Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t s_[4];
};

double rng_uniform(Rng& rng, double lo, double hi);

/// splitmix64 finalizer; used for seed derivation and stable hashing.
std::uint64_t mix64(std::uint64_t x);

}  // namespace kws
