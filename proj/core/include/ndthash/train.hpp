#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ndthash/dataset.hpp"
#include "ndthash/gradient.hpp"
#include "ndthash/losses.hpp"
#include "ndthash/network.hpp"

namespace ndthash {

struct BatchSpec {
  enum class Mode { Full, Minibatch };
  Mode mode = Mode::Full;
  std::size_t size = 0;       // minibatch only
  std::uint64_t seed = 0;     // minibatch shuffle seed

  static BatchSpec full() { return {}; }
  static BatchSpec minibatch(std::size_t size, std::uint64_t seed) {
    return {Mode::Minibatch, size, seed};
  }
};

struct TrainConfig {
  LossSpec loss;
  double learning_rate = 8.0;
  double momentum = 0.95;
  std::size_t max_iters = 1000;
  double rel_tol = 1e-9;
  BatchSpec batch;
  std::size_t log_every = 10;
  // Autoencoders only: update the hashing head while keeping the encoder and
  // decoder fixed (training the head on a frozen representation).
  bool freeze_autoencoder = false;

  void validate() const;
};

// One logged training state. `iter` counts completed parameter updates; the
// recorded values are evaluated at the parameters after that many updates.
struct HistoryRecord {
  std::size_t iter = 0;
  double loss_total = 0.0;
  double loss_data = 0.0;
  double reg_uniform = 0.0;  // raw regularizer values (not lambda-scaled)
  double reg_l2 = 0.0;
  std::vector<double> mass;
  std::optional<double> train_acc;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;

  const HistoryRecord& final_record() const { return records.back(); }
};

// Training hit a non-finite loss; carries the last finite state.
struct DivergedError : std::runtime_error {
  std::size_t iter;
  HistoryRecord last_finite;
  DivergedError(std::size_t iter_, HistoryRecord last)
      : std::runtime_error("training diverged: non-finite loss at iteration " +
                           std::to_string(iter_)),
        iter(iter_), last_finite(std::move(last)) {}
};

// Classic momentum update: v <- momentum*v - learning_rate*grad; p <- p + v.
// Regularizer gradients arrive folded into grad.
void sgd_step(std::vector<double>& params, std::span<const double> grad,
              const TrainConfig& cfg, std::vector<double>& velocity);

// Gradient-descent training. Stops after max_iters updates or when the
// relative loss change between consecutive evaluations falls below rel_tol.
// The last history record is always evaluated at the returned parameters.
TrainHistory train(Network& net, const Dataset& ds, const TrainConfig& cfg);
TrainHistory train(Autoencoder& ae, const Dataset& ds, const TrainConfig& cfg,
                   std::span<const std::uint8_t> labeled_mask = {});

// Fraction of samples whose hard-assigned region predicts their class, using
// membership-weighted region statistics (zero-mass regions fall back to the
// global mode). This is the accuracy reported in training history.
double soft_mode_accuracy(const Matrix& head_out, const Matrix& labels);

// Analytic-vs-central-difference comparison per parameter block.
struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckBlock> blocks;
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  std::string worst_block;
  bool pass = true;
};

// Relative error uses denominator max(|analytic|, |numeric|, 1), so tiny
// gradient components are judged on absolute error. `corrupt` is a test hook
// added to the first analytic component to prove the check can fail.
GradCheckReport gradcheck(const Network& net, const Dataset& ds, const LossSpec& spec,
                          double h = 1e-5, double tolerance = 1e-5,
                          double corrupt = 0.0);
GradCheckReport gradcheck(const Autoencoder& ae, const Dataset& ds,
                          const LossSpec& spec, double h = 1e-5,
                          double tolerance = 1e-5, double corrupt = 0.0,
                          std::span<const std::uint8_t> labeled_mask = {});

}  // namespace ndthash
