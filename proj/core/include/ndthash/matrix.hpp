#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ndthash {

// Dense row-major matrix of doubles. Deliberately small: every operation
// this library needs is a plain loop, so there is no expression machinery.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool empty() const { return rows == 0 || cols == 0; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool operator==(const Matrix& o) const = default;
};

bool all_finite(std::span<const double> v);
bool all_finite(const Matrix& m);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace ndthash
