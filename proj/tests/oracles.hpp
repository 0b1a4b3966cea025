#pragma once

// Independent straight-line re-implementations used as oracles. Everything
// here is computed directly from the defining formulas with plain loops and
// must stay decoupled from the library code paths it checks.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ndthash/matrix.hpp"

namespace oracle {

using ndthash::Matrix;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Forward pass recomputed as explicit matrix-vector products.
inline Matrix dense_stack_forward(const std::vector<Matrix>& weights,
                                  const std::vector<std::vector<double>>& biases,
                                  const std::vector<int>& acts,  // 0 sig, 1 tanh, 2 id
                                  const Matrix& x) {
  Matrix a = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Matrix next(a.rows, weights[l].rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
      for (std::size_t o = 0; o < weights[l].rows; ++o) {
        double z = biases[l][o];
        for (std::size_t j = 0; j < a.cols; ++j) z += weights[l](o, j) * a(i, j);
        next(i, o) = acts[l] == 0 ? sigmoid(z) : (acts[l] == 1 ? std::tanh(z) : z);
      }
    }
    a = std::move(next);
  }
  return a;
}

inline double membership(std::span<const double> out, std::size_t chain,
                         std::size_t k) {
  double p = 1.0;
  for (std::size_t n = 0; n < k; ++n) {
    const bool bit = (chain >> (k - 1 - n)) & 1u;
    p *= bit ? out[n] : 1.0 - out[n];
  }
  return p;
}

inline double impurity_of(std::span<const double> f, bool use_entropy) {
  if (!use_entropy) {
    double sq = 0.0;
    for (double v : f) sq += v * v;
    return 1.0 - sq;
  }
  double h = 0.0;
  for (double v : f)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

// Region-impurity classification loss evaluated by brute force over all
// chains, with optional class weights folded in as row weights.
inline double classification_loss(const Matrix& out, const Matrix& labels,
                                  bool use_entropy,
                                  std::span<const double> class_weights = {},
                                  std::span<const double> sample_weights = {}) {
  const std::size_t n = out.rows, k = out.cols, n_classes = labels.cols;
  std::vector<double> w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!sample_weights.empty()) w[i] = sample_weights[i];
    if (!class_weights.empty()) {
      double cw = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) cw += class_weights[c] * labels(i, c);
      w[i] *= cw;
    }
  }
  double total_w = 0.0;
  for (double v : w) total_w += v;

  double loss = 0.0;
  for (std::size_t chain = 0; chain < (std::size_t{1} << k); ++chain) {
    double mass_num = 0.0;
    std::vector<double> class_sum(n_classes, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = membership(out.row(i), chain, k);
      mass_num += w[i] * p;
      for (std::size_t c = 0; c < n_classes; ++c)
        class_sum[c] += w[i] * labels(i, c) * p;
    }
    const double mass = mass_num / total_w;
    if (mass < 1e-12) continue;
    std::vector<double> f(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) f[c] = class_sum[c] / mass_num;
    loss += mass * impurity_of(f, use_entropy);
  }
  return loss;
}

// Region-variance loss: sum over chains of p(chain) times the membership
// weighted variance around the region mean.
inline double variance_loss(const Matrix& out, const Matrix& values,
                            std::span<const double> sample_weights = {}) {
  const std::size_t n = out.rows, k = out.cols, m = values.cols;
  std::vector<double> w(n, 1.0);
  for (std::size_t i = 0; i < n && !sample_weights.empty(); ++i)
    w[i] = sample_weights[i];
  double total_w = 0.0;
  for (double v : w) total_w += v;

  double loss = 0.0;
  for (std::size_t chain = 0; chain < (std::size_t{1} << k); ++chain) {
    double denom = 0.0;
    std::vector<double> mean(m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double wp = w[i] * membership(out.row(i), chain, k);
      denom += wp;
      for (std::size_t d = 0; d < m; ++d) mean[d] += wp * values(i, d);
    }
    const double mass = denom / total_w;
    if (mass < 1e-12) continue;
    for (double& v : mean) v /= denom;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double wp = w[i] * membership(out.row(i), chain, k);
      double sq = 0.0;
      for (std::size_t d = 0; d < m; ++d) {
        const double diff = values(i, d) - mean[d];
        sq += diff * diff;
      }
      var += wp * sq;
    }
    loss += mass * (var / denom);
  }
  return loss;
}

// Central finite differences of a scalar function of a parameter vector.
inline std::vector<double> finite_difference(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> params, double h) {
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = f(params);
    params[i] = saved - h;
    const double down = f(params);
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Deterministic random test instances.
inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                            double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data) v = dist(rng);
  return m;
}

inline Matrix random_one_hot(std::mt19937_64& rng, std::size_t rows,
                             std::size_t n_classes) {
  std::uniform_int_distribution<std::size_t> dist(0, n_classes - 1);
  Matrix m(rows, n_classes, 0.0);
  for (std::size_t i = 0; i < rows; ++i) m(i, dist(rng)) = 1.0;
  return m;
}

// Simple logistic-regression fit; used to certify a dataset is not linearly
// separable (a linear model cannot reach perfect training accuracy).
inline double best_linear_accuracy(const Matrix& x, const std::vector<int>& y,
                                   std::size_t iters = 3000, double lr = 0.5) {
  std::vector<double> w(x.cols, 0.0);
  double b = 0.0;
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> gw(x.cols, 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      double z = b;
      for (std::size_t j = 0; j < x.cols; ++j) z += w[j] * x(i, j);
      const double err = sigmoid(z) - double(y[i]);
      for (std::size_t j = 0; j < x.cols; ++j) gw[j] += err * x(i, j);
      gb += err;
    }
    for (std::size_t j = 0; j < x.cols; ++j) w[j] -= lr * gw[j] / double(x.rows);
    b -= lr * gb / double(x.rows);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double z = b;
    for (std::size_t j = 0; j < x.cols; ++j) z += w[j] * x(i, j);
    if ((z >= 0.0 ? 1 : 0) == y[i]) ++correct;
  }
  return double(correct) / double(x.rows);
}

}  // namespace oracle
