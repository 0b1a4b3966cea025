#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ndthash/losses.hpp"
#include "ndthash/matrix.hpp"
#include "ndthash/network.hpp"

namespace ndthash {

struct LayerGrad {
  Matrix weights;
  std::vector<double> biases;
};

struct StackGrad {
  std::vector<LayerGrad> layers;
};

std::vector<double> flatten_grad(const StackGrad& grad);

// Closed-form gradient of the region-impurity classification loss for a
// single-layer sigmoid head: the per-chain membership derivative (the signed
// leave-one-out product over the other units), the quotient-rule derivative
// of the class-distribution impurity, and the sigmoid factor out(1-out)x^T
// are assembled explicitly. Kept separate from the reverse-mode engine so
// the two routes can be checked against each other.
StackGrad analytic_hashing_gradient(const Network& net, const Matrix& x,
                                    const Matrix& labels,
                                    Impurity kind = Impurity::Gini);

// One gradient evaluation of the full training objective.
struct GradResult {
  std::vector<double> gradient;  // flatten_params layout
  double loss_total = 0.0;
  double loss_data = 0.0;        // data term (autoencoders: reconstruction + head)
  double loss_reconstruction = 0.0;
  double reg_uniform = 0.0;      // raw regularizer values, not scaled by lambda
  double reg_l2 = 0.0;
  std::vector<double> mass;      // unweighted region mass of the head output
  bool no_labeled_rows = false;
};

// Reverse-mode gradient of the selected loss plus regularizers. labels is the
// one-hot block (Gini/InfoGain), the continuous target block (Variance), or
// ignored (UnsupVariance, which measures the inputs).
GradResult backprop_gradient(const Network& net, const Matrix& x,
                             const Matrix* labels, const LossSpec& spec);

// Autoencoder objectives (ReconstructionUnsup / ReconstructionSemisup).
// labeled_mask selects the rows whose labels enter the semi-supervised term.
GradResult backprop_gradient(const Autoencoder& ae, const Matrix& x,
                             const Matrix* labels, const LossSpec& spec,
                             std::span<const std::uint8_t> labeled_mask = {});

// Loss-only evaluation of the same objective (used by finite differences).
double eval_total_loss(const Network& net, const Matrix& x, const Matrix* labels,
                       const LossSpec& spec);
double eval_total_loss(const Autoencoder& ae, const Matrix& x, const Matrix* labels,
                       const LossSpec& spec,
                       std::span<const std::uint8_t> labeled_mask = {});

}  // namespace ndthash
