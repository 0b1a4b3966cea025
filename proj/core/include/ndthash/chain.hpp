#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ndthash/matrix.hpp"

namespace ndthash {

// Regions whose normalized mass falls below this cutoff are treated as empty:
// their statistics fall back to uniform/zero and they are skipped in losses.
inline constexpr double kMassEpsilon = 1e-12;

// A length-k bit string naming one of the 2^k sub-regions addressed by the
// hashing head. bits[0] corresponds to the first output unit.
struct ChainCode {
  std::vector<std::uint8_t> bits;

  std::size_t length() const { return bits.size(); }

  // Index in lexicographic order: bits[0] is the most significant bit.
  std::size_t to_index() const;
  static ChainCode from_index(std::size_t index, std::size_t k);

  std::string to_string() const;  // e.g. "010"

  bool operator==(const ChainCode&) const = default;
};

// All 2^k codes in lexicographic order. k must be in [1, kMaxHeadWidth].
std::vector<ChainCode> enumerate_chains(std::size_t k);

// prod_n out[n]^bit (1-out[n])^(1-bit): probability that a sample with head
// output `out` falls in the chain's region. out entries must lie in (0,1).
double membership(std::span<const double> out, const ChainCode& chain);

// n x 2^k matrix of membership probabilities, chains in lexicographic order.
// Each row is a partition of unity over the 2^k regions.
Matrix membership_matrix(const Matrix& out);

// Per-chain average membership, optionally sample-weighted; sums to 1.
std::vector<double> chain_mass(const Matrix& memberships,
                               std::span<const double> weights = {});

// Per-chain statistics with a flag for regions below the mass cutoff.
struct RegionStats {
  Matrix values;                        // 2^k x C distributions or 2^k x m means
  std::vector<std::uint8_t> zero_mass;  // 1 where mass < kMassEpsilon
};

// Membership-weighted class distribution per chain. Zero-mass chains get the
// uniform distribution. Labels must be one-hot; weights reweight samples.
RegionStats class_distribution(const Matrix& memberships, const Matrix& labels,
                               std::span<const double> weights = {});

// Membership-weighted mean of `values` per chain; zero-mass chains get zeros.
RegionStats region_mean(const Matrix& memberships, const Matrix& values,
                        std::span<const double> weights = {});

// Thresholds each unit at 0.5 (ties map to 1).
ChainCode hard_assign(std::span<const double> out);
std::size_t hard_assign_index(std::span<const double> out);

enum class PredictionPolicy { Mode, Mean };

// Fitted per-region statistics: mass, class distribution or mean target, and
// the prediction policy. Rows follow lexicographic chain order.
struct RegionTable {
  std::size_t chain_length = 0;
  PredictionPolicy policy = PredictionPolicy::Mode;
  std::vector<double> mass;
  Matrix values;  // 2^k x C or 2^k x m
  std::vector<std::uint8_t> zero_mass;

  std::size_t num_chains() const { return mass.size(); }

  // CSV with columns chain_bits, mass, then the per-class probabilities
  // (p0..p{C-1}) or per-dimension means (m0..m{m-1}).
  void write_csv(std::ostream& out) const;
};

}  // namespace ndthash
