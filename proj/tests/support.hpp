#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "kws/numerics.hpp"

namespace kws::test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kws_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <class Real>
BasicMatrix<Real> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  BasicMatrix<Real> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<Real>(scale * rng.normal());
  return m;
}

template <class Real>
std::vector<Real> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(scale * rng.normal());
  return v;
}

template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d = std::max(d, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return d;
}

}  // namespace kws::test
