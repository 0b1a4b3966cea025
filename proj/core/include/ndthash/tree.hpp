#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "ndthash/chain.hpp"
#include "ndthash/dataset.hpp"
#include "ndthash/train.hpp"

namespace ndthash {

// One tree node. Internal nodes own a width-1 sigmoid network whose output is
// the probability of routing a sample to the left child; leaves carry the
// prediction fitted from the mass that reached them.
struct NDTNode {
  Network split_net;  // internal nodes only
  std::unique_ptr<NDTNode> left;
  std::unique_ptr<NDTNode> right;
  std::size_t depth = 0;
  std::size_t index = 0;  // position within the level
  std::vector<double> leaf_value;  // class distribution or mean target
  double mass = 0.0;               // training mass that reached this node

  bool is_leaf() const { return left == nullptr; }
};

struct NDTree {
  std::unique_ptr<NDTNode> root;
  PredictionPolicy policy = PredictionPolicy::Mode;
  std::size_t input_dim = 0;
  std::size_t value_dim = 0;  // classes (Mode) or target dims (Mean)

  std::size_t leaf_count() const;
  std::vector<const NDTNode*> leaf_nodes() const;  // left-to-right order
  void validate() const;
};

// Per-sample probability of reaching each leaf: the product of the routing
// probabilities along the root-to-leaf path. Columns follow left-to-right
// leaf order; each row sums to 1.
Matrix leaf_memberships(const NDTree& tree, const Matrix& x);

struct GrowthConfig {
  std::size_t max_depth = 2;
  double min_mass = 1e-3;  // stop when a node holds less than this mass fraction
  std::vector<std::size_t> node_hidden_dims;  // empty = oblique linear splits
  bool soft_routing = true;  // weight children by phi rather than thresholding
  TrainConfig node_train;    // loss.kind picks gini / info_gain / variance
  std::uint64_t seed = 0;

  void validate() const;
};

// Top-down greedy growth: each node trains its split network by gradient
// descent on the local soft impurity (or variance) loss, with samples
// weighted by their probability of arriving at the node. Recursion stops at
// max_depth, below min_mass, or when the node impurity falls under 1e-6.
NDTree grow_greedy(const Dataset& ds, const GrowthConfig& cfg);

// Joint gradient descent of every split network on the tree-level loss
// (Gini or weighted leaf entropy for info_gain). Keeps the best parameters
// seen, so the final loss never exceeds the initial one.
TrainHistory global_fine_tune(NDTree& tree, const Dataset& ds,
                              const TrainConfig& cfg);

// Loss the fine-tuning step minimizes at the tree's current parameters.
double tree_objective(const NDTree& tree, const Dataset& ds, LossKind kind);

// Same objective with its gradient in tree_flatten_params order.
std::pair<double, std::vector<double>> tree_objective_with_gradient(
    const NDTree& tree, const Dataset& ds, LossKind kind);

enum class TreePredict { HardPath, SoftMixture };

// HardPath follows phi >= 0.5 decisions to a single leaf; SoftMixture blends
// leaf predictions by membership. Class ties resolve to the lowest index.
std::vector<std::size_t> predict_class(const NDTree& tree, const Matrix& x,
                                       TreePredict mode);
Matrix predict_value(const NDTree& tree, const Matrix& x, TreePredict mode);

// All split-network parameters, internal nodes in depth-first pre-order.
std::size_t tree_param_count(const NDTree& tree);
std::vector<double> tree_flatten_params(const NDTree& tree);
void tree_unflatten_params(NDTree& tree, std::span<const double> params);

}  // namespace ndthash
