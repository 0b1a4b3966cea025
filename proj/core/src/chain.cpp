#include "ndthash/chain.hpp"

#include <charconv>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "ndthash/network.hpp"
#include "ndthash/parallel.hpp"

namespace ndthash {

namespace {

void check_head_width(std::size_t k, const char* what) {
  if (k < 1 || k > kMaxHeadWidth)
    throw std::invalid_argument(std::string(what) + ": chain length out of range");
}

void check_unit_interval(std::span<const double> out, const char* what) {
  for (double v : out) {
    if (!(v > 0.0) || !(v < 1.0))
      throw std::invalid_argument(std::string(what) + ": out entries must be in (0,1)");
  }
}

// Total weight and per-chain weighted membership sums, shared by the
// statistics below. An empty weights span means unit weights.
struct WeightedSums {
  double total = 0.0;
  std::vector<double> per_chain;
};

WeightedSums weighted_membership_sums(const Matrix& memberships,
                                      std::span<const double> weights) {
  if (memberships.rows == 0)
    throw std::invalid_argument("chain statistics: empty dataset");
  if (!weights.empty() && weights.size() != memberships.rows)
    throw std::invalid_argument("chain statistics: weight count mismatch");
  WeightedSums sums;
  sums.per_chain.assign(memberships.cols, 0.0);
  for (std::size_t i = 0; i < memberships.rows; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sums.total += w;
    const auto row = memberships.row(i);
    for (std::size_t c = 0; c < memberships.cols; ++c)
      sums.per_chain[c] += w * row[c];
  }
  if (!(sums.total > 0.0))
    throw std::invalid_argument("chain statistics: total weight must be positive");
  return sums;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t ChainCode::to_index() const {
  std::size_t idx = 0;
  for (std::uint8_t b : bits) idx = (idx << 1) | (b ? 1u : 0u);
  return idx;
}

ChainCode ChainCode::from_index(std::size_t index, std::size_t k) {
  check_head_width(k, "ChainCode");
  ChainCode code;
  code.bits.resize(k);
  for (std::size_t n = 0; n < k; ++n)
    code.bits[n] = static_cast<std::uint8_t>((index >> (k - 1 - n)) & 1u);
  return code;
}

std::string ChainCode::to_string() const {
  std::string s(bits.size(), '0');
  for (std::size_t n = 0; n < bits.size(); ++n)
    if (bits[n]) s[n] = '1';
  return s;
}

std::vector<ChainCode> enumerate_chains(std::size_t k) {
  check_head_width(k, "enumerate_chains");
  std::vector<ChainCode> chains;
  chains.reserve(std::size_t{1} << k);
  for (std::size_t c = 0; c < (std::size_t{1} << k); ++c)
    chains.push_back(ChainCode::from_index(c, k));
  return chains;
}

double membership(std::span<const double> out, const ChainCode& chain) {
  if (out.size() != chain.length())
    throw std::invalid_argument("membership: out/chain length mismatch");
  check_unit_interval(out, "membership");
  double p = 1.0;
  for (std::size_t n = 0; n < out.size(); ++n)
    p *= chain.bits[n] ? out[n] : 1.0 - out[n];
  return p;
}

Matrix membership_matrix(const Matrix& out) {
  check_head_width(out.cols, "membership_matrix");
  check_unit_interval(out.data, "membership_matrix");
  const std::size_t k = out.cols;
  const std::size_t n_chains = std::size_t{1} << k;
  Matrix m(out.rows, n_chains);
  // Doubling over units: after unit n every prefix of length n+1 holds the
  // product of its factors in unit order, so the result is bit-identical to
  // the per-chain left-to-right product.
  parallel_for_rows(out.rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto row = m.row(i);
      row[0] = 1.0;
      std::size_t filled = 1;
      for (std::size_t n = 0; n < k; ++n) {
        const double on = out(i, n);
        for (std::size_t j = filled; j-- > 0;) {
          const double base = row[j];
          row[2 * j] = base * (1.0 - on);
          row[2 * j + 1] = base * on;
        }
        filled *= 2;
      }
    }
  });
  return m;
}

std::vector<double> chain_mass(const Matrix& memberships,
                               std::span<const double> weights) {
  const WeightedSums sums = weighted_membership_sums(memberships, weights);
  std::vector<double> mass(sums.per_chain);
  for (double& v : mass) v /= sums.total;
  return mass;
}

RegionStats class_distribution(const Matrix& memberships, const Matrix& labels,
                               std::span<const double> weights) {
  if (labels.rows != memberships.rows)
    throw std::invalid_argument("class_distribution: label row count mismatch");
  for (std::size_t i = 0; i < labels.rows; ++i) {
    double sum = 0.0;
    for (double v : labels.row(i)) {
      if (v < 0.0) throw std::invalid_argument("class_distribution: labels not one-hot");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("class_distribution: labels not one-hot");
  }

  const WeightedSums sums = weighted_membership_sums(memberships, weights);
  const std::size_t n_chains = memberships.cols;
  const std::size_t n_classes = labels.cols;
  RegionStats stats;
  stats.values = Matrix(n_chains, n_classes, 0.0);
  stats.zero_mass.assign(n_chains, 0);
  for (std::size_t i = 0; i < memberships.rows; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const auto m_row = memberships.row(i);
    const auto y_row = labels.row(i);
    for (std::size_t c = 0; c < n_chains; ++c) {
      const double wm = w * m_row[c];
      for (std::size_t klass = 0; klass < n_classes; ++klass)
        stats.values(c, klass) += wm * y_row[klass];
    }
  }
  for (std::size_t c = 0; c < n_chains; ++c) {
    if (sums.per_chain[c] / sums.total < kMassEpsilon) {
      stats.zero_mass[c] = 1;
      for (std::size_t klass = 0; klass < n_classes; ++klass)
        stats.values(c, klass) = 1.0 / double(n_classes);
    } else {
      for (std::size_t klass = 0; klass < n_classes; ++klass)
        stats.values(c, klass) /= sums.per_chain[c];
    }
  }
  return stats;
}

RegionStats region_mean(const Matrix& memberships, const Matrix& values,
                        std::span<const double> weights) {
  if (values.rows != memberships.rows)
    throw std::invalid_argument("region_mean: value row count mismatch");
  const WeightedSums sums = weighted_membership_sums(memberships, weights);
  const std::size_t n_chains = memberships.cols;
  RegionStats stats;
  stats.values = Matrix(n_chains, values.cols, 0.0);
  stats.zero_mass.assign(n_chains, 0);
  for (std::size_t i = 0; i < memberships.rows; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const auto m_row = memberships.row(i);
    const auto v_row = values.row(i);
    for (std::size_t c = 0; c < n_chains; ++c) {
      const double wm = w * m_row[c];
      for (std::size_t d = 0; d < values.cols; ++d)
        stats.values(c, d) += wm * v_row[d];
    }
  }
  for (std::size_t c = 0; c < n_chains; ++c) {
    if (sums.per_chain[c] / sums.total < kMassEpsilon) {
      stats.zero_mass[c] = 1;
      for (std::size_t d = 0; d < values.cols; ++d) stats.values(c, d) = 0.0;
    } else {
      for (std::size_t d = 0; d < values.cols; ++d)
        stats.values(c, d) /= sums.per_chain[c];
    }
  }
  return stats;
}

ChainCode hard_assign(std::span<const double> out) {
  check_head_width(out.size(), "hard_assign");
  ChainCode code;
  code.bits.resize(out.size());
  for (std::size_t n = 0; n < out.size(); ++n)
    code.bits[n] = out[n] >= 0.5 ? 1 : 0;
  return code;
}

std::size_t hard_assign_index(std::span<const double> out) {
  check_head_width(out.size(), "hard_assign");
  std::size_t idx = 0;
  for (double v : out) idx = (idx << 1) | (v >= 0.5 ? 1u : 0u);
  return idx;
}

void RegionTable::write_csv(std::ostream& out) const {
  out << "chain_bits,mass";
  if (policy == PredictionPolicy::Mode) {
    for (std::size_t k = 0; k < values.cols; ++k) out << ",p" << k;
  } else {
    for (std::size_t k = 0; k < values.cols; ++k) out << ",m" << k;
  }
  out << '\n';
  for (std::size_t c = 0; c < num_chains(); ++c) {
    out << ChainCode::from_index(c, chain_length).to_string() << ','
        << format_double(mass[c]);
    for (std::size_t k = 0; k < values.cols; ++k)
      out << ',' << format_double(values(c, k));
    out << '\n';
  }
}

}  // namespace ndthash
