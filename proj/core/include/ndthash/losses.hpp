#pragma once

#include <span>
#include <vector>

#include "ndthash/chain.hpp"
#include "ndthash/matrix.hpp"
#include "ndthash/network.hpp"

namespace ndthash {

enum class Impurity { Gini, Entropy };

// 1 - sum f_k^2 for a probability vector f; 0 for a pure region.
double gini_impurity(std::span<const double> f);

// Shannon entropy in bits, with 0*log(0) = 0.
double entropy(std::span<const double> f);

double impurity(std::span<const double> f, Impurity kind);

// Entropy in bits of the two-outcome distribution (pos, neg)/(pos+neg).
double binary_entropy(double pos, double neg);

// Soft contingency table of one split: how much of each class flows to each
// child when the split function phi gives each sample its probability of
// going left.
struct NodeSplitStats {
  double pos = 0;        // total weight of label-1 samples
  double neg = 0;        // total weight of label-0 samples
  double n_left = 0;     // weight flowing left
  double n_right = 0;
  double pos_left = 0;
  double neg_left = 0;
  double pos_right = 0;
  double neg_right = 0;

  double total() const { return pos + neg; }
};

// labels must be exactly 0 or 1; phi in [0,1]. Optional per-sample weights.
NodeSplitStats node_split_stats(std::span<const double> phi,
                                std::span<const double> labels,
                                std::span<const double> weights = {});

// Weighted Gini of the two children; 0 for a perfect hard split. A child
// whose mass falls below kMassEpsilon of the total contributes 0.
double node_gini_loss(const NodeSplitStats& stats);

// Parent entropy minus the weighted child entropies, in [0, E(pos,neg)].
double node_info_gain(const NodeSplitStats& stats);

// Sum of the two intra-child variances of `targets`, each weighted by the
// soft membership of its child (empty children contribute 0).
double node_variance_loss(std::span<const double> phi,
                          std::span<const double> targets,
                          std::span<const double> weights = {});

// Loss selection and regularizer weights for training.
enum class LossKind {
  Gini,                   // region-impurity classification loss (Gini)
  InfoGain,               // region-impurity classification loss (entropy)
  Variance,               // region-variance regression loss
  UnsupVariance,          // intra-region variance of the inputs (or latents)
  ReconstructionUnsup,    // autoencoder reconstruction + latent variance
  ReconstructionSemisup,  // autoencoder reconstruction + labeled-row impurity
};

struct LossSpec {
  LossKind kind = LossKind::Gini;
  double lambda_uniform = 0.0;
  double lambda_l2 = 0.0;
  std::vector<double> class_weights;  // optional, one positive weight per class

  Impurity impurity() const {
    return kind == LossKind::InfoGain ? Impurity::Entropy : Impurity::Gini;
  }
  void validate() const;
};

// sum_chain p(chain) * E(f_chain) over chains with mass >= kMassEpsilon.
// Class weights reweight each sample's label row (and therefore the region
// masses) before the statistics are taken; sample_weights additionally scale
// whole samples (used for labeled-subset losses).
double hashing_classification_loss(const Matrix& memberships, const Matrix& labels,
                                   Impurity kind,
                                   std::span<const double> class_weights = {},
                                   std::span<const double> sample_weights = {});

// sum_chain p(chain) * V(chain), where V is the membership-weighted variance
// of the targets around the region mean (summed over target dimensions).
double hashing_regression_loss(const Matrix& memberships, const Matrix& targets,
                               std::span<const double> sample_weights = {});

// Same variance objective with the model inputs (or latents) as targets.
double unsupervised_variance_loss(const Matrix& memberships, const Matrix& values,
                                  std::span<const double> sample_weights = {});

// Composite autoencoder losses: mean squared reconstruction error over all
// rows plus the head objective on the latents.
struct CompositeLoss {
  double total = 0.0;
  double reconstruction = 0.0;
  double head = 0.0;
  bool no_labeled_rows = false;  // semi-supervised call saw an all-zero mask
};

CompositeLoss composite_unsupervised_loss(const Autoencoder& ae, const Matrix& x);

// labeled_mask marks the rows whose labels participate in the impurity term;
// region mass and class statistics are taken over the labeled subset only.
CompositeLoss composite_semisup_loss(const Autoencoder& ae, const Matrix& x,
                                     const Matrix* labels,
                                     std::span<const std::uint8_t> labeled_mask,
                                     Impurity kind = Impurity::Gini,
                                     std::span<const double> class_weights = {});

// sum_chain (p(chain) - 1/2^k)^2: pulls the region masses toward uniform.
double uniformity_regularizer(std::span<const double> mass);

// Sum of squared weights (biases excluded).
double l2_penalty(const Network& net);
double l2_penalty(const Autoencoder& ae);

// Tree-level objectives on a leaf membership matrix whose rows sum to 1.
double global_tree_gini(const Matrix& leaf_memberships, const Matrix& labels);
double global_tree_ig(const Matrix& leaf_memberships, const Matrix& labels);

}  // namespace ndthash
