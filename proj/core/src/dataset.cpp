#include "ndthash/dataset.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ndthash {

std::size_t Dataset::num_classes() const {
  if (label_kind != LabelKind::OneHotClass)
    throw std::invalid_argument("num_classes: dataset has no class labels");
  return labels.cols;
}

std::size_t Dataset::class_of(std::size_t i) const {
  if (label_kind != LabelKind::OneHotClass)
    throw std::invalid_argument("class_of: dataset has no class labels");
  const auto row = labels.row(i);
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (row[k] == 1.0) return k;
  }
  throw std::invalid_argument("class_of: row is not one-hot");
}

void Dataset::validate() const {
  if (!all_finite(features))
    throw std::invalid_argument("dataset: non-finite feature value");
  if (label_kind == LabelKind::None) {
    if (!labels.empty())
      throw std::invalid_argument("dataset: labels present but label_kind is none");
    return;
  }
  if (labels.rows != features.rows)
    throw std::invalid_argument("dataset: feature/label row count mismatch");
  if (!all_finite(labels))
    throw std::invalid_argument("dataset: non-finite label value");
  if (label_kind == LabelKind::OneHotClass) {
    for (std::size_t i = 0; i < labels.rows; ++i) {
      double sum = 0.0;
      std::size_t ones = 0;
      for (double v : labels.row(i)) {
        if (v < 0.0) throw std::invalid_argument("dataset: negative one-hot entry");
        if (v == 1.0) ++ones;
        sum += v;
      }
      if (ones != 1 || std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("dataset: row is not one-hot");
    }
  }
}

namespace {

Matrix one_hot_binary(std::size_t n_class0, std::size_t n_class1) {
  Matrix labels(n_class0 + n_class1, 2, 0.0);
  for (std::size_t i = 0; i < n_class0; ++i) labels(i, 0) = 1.0;
  for (std::size_t i = n_class0; i < n_class0 + n_class1; ++i) labels(i, 1) = 1.0;
  return labels;
}

void add_noise(Matrix& features, double noise_sd, std::uint64_t seed) {
  if (noise_sd == 0.0) return;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise_sd);
  for (double& v : features.data) v += gauss(rng);
}

}  // namespace

Dataset gen_two_moons(std::size_t n, double noise_sd, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_two_moons: n must be >= 2");
  if (noise_sd < 0.0)
    throw std::invalid_argument("gen_two_moons: noise_sd must be >= 0");

  const std::size_t n0 = (n + 1) / 2;  // odd n: extra point goes to class 0
  const std::size_t n1 = n - n0;
  Matrix x(n, 2);
  for (std::size_t i = 0; i < n0; ++i) {
    const double t = n0 > 1 ? std::numbers::pi * double(i) / double(n0 - 1) : 0.0;
    x(i, 0) = std::cos(t);
    x(i, 1) = std::sin(t);
  }
  for (std::size_t i = 0; i < n1; ++i) {
    const double t = n1 > 1 ? std::numbers::pi * double(i) / double(n1 - 1) : 0.0;
    x(n0 + i, 0) = 1.0 - std::cos(t);
    x(n0 + i, 1) = 0.5 - std::sin(t);
  }
  add_noise(x, noise_sd, seed);

  Dataset ds{std::move(x), one_hot_binary(n0, n1), LabelKind::OneHotClass};
  ds.validate();
  return ds;
}

Dataset gen_two_circles(std::size_t n, double r_inner, double r_outer,
                        double noise_sd, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_two_circles: n must be >= 2");
  if (!(r_inner > 0.0))
    throw std::invalid_argument("gen_two_circles: r_inner must be > 0");
  if (!(r_outer > r_inner))
    throw std::invalid_argument("gen_two_circles: r_outer must be > r_inner");
  if (noise_sd < 0.0)
    throw std::invalid_argument("gen_two_circles: noise_sd must be >= 0");

  const std::size_t n0 = (n + 1) / 2;
  const std::size_t n1 = n - n0;
  Matrix x(n, 2);
  for (std::size_t i = 0; i < n0; ++i) {
    const double t = 2.0 * std::numbers::pi * double(i) / double(n0);
    x(i, 0) = r_inner * std::cos(t);
    x(i, 1) = r_inner * std::sin(t);
  }
  for (std::size_t i = 0; i < n1; ++i) {
    const double t = 2.0 * std::numbers::pi * double(i) / double(n1);
    x(n0 + i, 0) = r_outer * std::cos(t);
    x(n0 + i, 1) = r_outer * std::sin(t);
  }
  add_noise(x, noise_sd, seed);

  Dataset ds{std::move(x), one_hot_binary(n0, n1), LabelKind::OneHotClass};
  ds.validate();
  return ds;
}

}  // namespace ndthash
