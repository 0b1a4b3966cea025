#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "ndthash/matrix.hpp"

namespace ndthash {

enum class LabelKind { None, OneHotClass, Continuous };

// A feature matrix plus an optional label block. Classification labels are
// stored one-hot; continuous targets as an n x m block.
struct Dataset {
  Matrix features;  // n_samples x n_dims
  Matrix labels;    // n x C one-hot, n x m continuous, or empty
  LabelKind label_kind = LabelKind::None;

  std::size_t size() const { return features.rows; }
  std::size_t dims() const { return features.cols; }

  // Number of classes (one-hot datasets only).
  std::size_t num_classes() const;
  // Index of the hot entry in row i (one-hot datasets only).
  std::size_t class_of(std::size_t i) const;

  // Throws std::invalid_argument if any type invariant is violated:
  // non-finite features, row count mismatch, or malformed one-hot rows.
  void validate() const;
};

// Two interleaved half-circle arcs of unit radius; the second arc is the
// first rotated 180 degrees and shifted so its tips sit at (0,0.5) and
// (2,0.5). First ceil(n/2) points are class 0, the rest class 1. Gaussian
// noise of the given standard deviation is added per coordinate.
Dataset gen_two_moons(std::size_t n, double noise_sd, std::uint64_t seed);

// Two concentric circles sampled at evenly spaced angles; inner circle is
// class 0, outer class 1. Same noise and balance rules as gen_two_moons.
Dataset gen_two_circles(std::size_t n, double r_inner, double r_outer,
                        double noise_sd, std::uint64_t seed);

// CSV ingestion ---------------------------------------------------------

struct LabelSpec {
  enum class Kind { None, LastColumnClass, LastColumnsContinuous };
  Kind kind = Kind::None;
  std::size_t continuous_cols = 0;

  static LabelSpec none() { return {}; }
  static LabelSpec last_column_class() { return {Kind::LastColumnClass, 0}; }
  static LabelSpec last_columns_continuous(std::size_t m) {
    return {Kind::LastColumnsContinuous, m};
  }
};

// Parse failure with a 1-based row/column location.
struct CsvError : std::runtime_error {
  std::size_t row;
  std::size_t col;
  CsvError(const std::string& msg, std::size_t row_, std::size_t col_)
      : std::runtime_error(msg), row(row_), col(col_) {}
};

// Loads a rectangular numeric CSV ('.' decimal, optional header auto-detected
// by a non-numeric first row). Class columns hold integer codes 0..C-1 and
// are one-hot encoded on load.
Dataset load_csv(const std::string& path, const LabelSpec& spec);

// Writes a dataset in the same format load_csv reads: a header row, features,
// then class codes or continuous targets. Number formatting is the shortest
// round-trip representation, so identical datasets produce identical bytes.
void save_csv(const Dataset& ds, const std::string& path);

}  // namespace ndthash
