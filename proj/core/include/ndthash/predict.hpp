#pragma once

#include <cstdint>
#include <iosfwd>
#include <variant>
#include <vector>

#include "ndthash/chain.hpp"
#include "ndthash/dataset.hpp"
#include "ndthash/network.hpp"

namespace ndthash {

enum class Assignment { Soft, Hard };

// Fits per-region statistics for a trained head. Soft assignment uses
// membership-weighted statistics; Hard counts hard-assigned samples. Refuses
// heads narrower than ceil(log2 C), which cannot give every class a region.
RegionTable fit_region_table(const Network& model, const Dataset& ds, Assignment a);
RegionTable fit_region_table(const Autoencoder& model, const Dataset& ds, Assignment a);

// A hashing model paired with its region table. Unseen (zero-mass) regions
// are served by the global mode/mean, or abstained from when configured.
struct Predictor {
  std::variant<Network, Autoencoder> model;
  RegionTable table;
  std::vector<double> default_value;  // global class distribution or global mean
  bool abstain_on_unseen = false;

  std::size_t head_width() const;
  std::size_t input_dim() const;
  Matrix head_out(const Matrix& x) const;
};

Predictor fit_predictor(Network model, const Dataset& ds, Assignment a,
                        bool abstain_on_unseen = false);
Predictor fit_predictor(Autoencoder model, const Dataset& ds, Assignment a,
                        bool abstain_on_unseen = false);

struct Prediction {
  std::size_t region = 0;
  std::size_t class_index = 0;   // Mode policy
  std::vector<double> value;     // class distribution or mean target
  double confidence = 0.0;       // max class probability, or region mass (Mean)
  bool unseen = false;
  bool abstained = false;
};

Prediction predict_with_confidence(const Predictor& p, std::span<const double> x_row);
std::vector<Prediction> predict_batch(const Predictor& p, const Matrix& x);

// Unlearned locality-sensitive head: one layer whose hyperplanes are drawn
// i.i.d. standard Normal with zero bias, so nearby inputs collide often.
Network random_lsh_head(std::size_t dims, std::size_t bits, std::uint64_t seed);

// Hard region code per row.
std::vector<ChainCode> hash_codes(const Network& model, const Matrix& x);
std::vector<ChainCode> hash_codes(const Autoencoder& model, const Matrix& x);

// CSV with columns index, code.
void write_codes_csv(std::ostream& out, const std::vector<ChainCode>& codes);

}  // namespace ndthash
