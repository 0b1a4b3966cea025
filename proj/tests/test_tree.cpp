#include <doctest.h>

#include <random>
#include <stdexcept>

#include "ndthash/tree.hpp"
#include "oracles.hpp"

using namespace ndthash;

namespace {

std::unique_ptr<NDTNode> make_leaf(std::vector<double> value, std::size_t depth,
                                   std::size_t index) {
  auto node = std::make_unique<NDTNode>();
  node->depth = depth;
  node->index = index;
  node->leaf_value = std::move(value);
  return node;
}

std::unique_ptr<NDTNode> make_split(Network net, std::unique_ptr<NDTNode> left,
                                    std::unique_ptr<NDTNode> right,
                                    std::size_t depth, std::size_t index) {
  auto node = std::make_unique<NDTNode>();
  node->depth = depth;
  node->index = index;
  node->split_net = std::move(net);
  node->left = std::move(left);
  node->right = std::move(right);
  return node;
}

// Random full binary tree of the given depth over 2 classes.
NDTree random_tree(std::size_t depth, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::function<std::unique_ptr<NDTNode>(std::size_t, std::size_t)> build =
      [&](std::size_t d, std::size_t idx) -> std::unique_ptr<NDTNode> {
    if (d == depth) {
      std::uniform_real_distribution<double> dist(0.0, 1.0);
      const double p = dist(rng);
      return make_leaf({p, 1.0 - p}, d, idx);
    }
    return make_split(init_network({dim, 1}, rng()), build(d + 1, 2 * idx),
                      build(d + 1, 2 * idx + 1), d, idx);
  };
  NDTree tree;
  tree.root = build(0, 0);
  tree.policy = PredictionPolicy::Mode;
  tree.input_dim = dim;
  tree.value_dim = 2;
  return tree;
}

// Two 2D blobs, linearly separable, one-hot labels.
Dataset blob_pair(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 0.3);
  Dataset ds;
  ds.features = Matrix(n, 2);
  ds.labels = Matrix(n, 2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool second = i >= n / 2;
    ds.features(i, 0) = (second ? 3.0 : -3.0) + gauss(rng);
    ds.features(i, 1) = gauss(rng);
    ds.labels(i, second ? 1 : 0) = 1.0;
  }
  ds.label_kind = LabelKind::OneHotClass;
  return ds;
}

GrowthConfig default_growth(std::uint64_t seed) {
  GrowthConfig cfg;
  cfg.max_depth = 2;
  cfg.min_mass = 1e-3;
  cfg.seed = seed;
  cfg.node_train.loss.kind = LossKind::Gini;
  cfg.node_train.learning_rate = 0.5;
  cfg.node_train.max_iters = 300;
  cfg.node_train.rel_tol = 1e-10;
  return cfg;
}

}  // namespace

TEST_CASE("leaf_memberships") {
  SUBCASE("depth-1 tree: columns are (phi, 1-phi)") {
    NDTree tree;
    tree.root = make_split(init_network({2, 1}, 3), make_leaf({1, 0}, 1, 0),
                           make_leaf({0, 1}, 1, 1), 0, 0);
    tree.input_dim = 2;
    tree.value_dim = 2;
    std::mt19937_64 rng(1);
    const Matrix x = oracle::random_matrix(rng, 5, 2, -1, 1);
    const Matrix m = leaf_memberships(tree, x);
    const Matrix phi = head_output(tree.root->split_net, x);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(m(i, 0) == doctest::Approx(phi(i, 0)).epsilon(1e-15));
      CHECK(m(i, 1) == doctest::Approx(1.0 - phi(i, 0)).epsilon(1e-15));
    }
  }
  SUBCASE("all outputs 0.5 at depth 2: every leaf gets 0.25") {
    NDTree tree = random_tree(2, 2, 5);
    // zero out every split net
    std::function<void(NDTNode*)> zero = [&](NDTNode* node) {
      if (node->is_leaf()) return;
      for (auto& layer : node->split_net.layers) {
        for (double& w : layer.weights.data) w = 0.0;
        for (double& b : layer.biases) b = 0.0;
      }
      zero(node->left.get());
      zero(node->right.get());
    };
    zero(tree.root.get());
    std::mt19937_64 rng(2);
    const Matrix x = oracle::random_matrix(rng, 4, 2, -2, 2);
    const Matrix m = leaf_memberships(tree, x);
    REQUIRE(m.cols == 4);
    for (double v : m.data) CHECK(v == doctest::Approx(0.25));
  }
  SUBCASE("random depth-3 tree: rows sum to 1 and match path products") {
    NDTree tree = random_tree(3, 2, 7);
    std::mt19937_64 rng(3);
    const Matrix x = oracle::random_matrix(rng, 6, 2, -2, 2);
    const Matrix m = leaf_memberships(tree, x);
    REQUIRE(m.cols == 8);
    for (std::size_t i = 0; i < m.rows; ++i) {
      double sum = 0;
      for (double v : m.row(i)) sum += v;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    // explicit path enumeration: leaf index bits spell the (left=1) decisions
    std::vector<const NDTNode*> path;
    for (std::size_t i = 0; i < x.rows; ++i) {
      Matrix row(1, 2);
      row(0, 0) = x(i, 0);
      row(0, 1) = x(i, 1);
      for (std::size_t leaf = 0; leaf < 8; ++leaf) {
        double prod = 1.0;
        const NDTNode* node = tree.root.get();
        for (int level = 0; level < 3; ++level) {
          const double phi = head_output(node->split_net, row)(0, 0);
          const bool go_left = ((leaf >> (2 - level)) & 1u) == 0;
          prod *= go_left ? phi : 1.0 - phi;
          node = go_left ? node->left.get() : node->right.get();
        }
        CHECK(m(i, leaf) == doctest::Approx(prod).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("grow_greedy") {
  SUBCASE("max_depth 0 yields a single leaf with the global distribution") {
    const Dataset ds = blob_pair(20, 3);
    GrowthConfig cfg = default_growth(1);
    cfg.max_depth = 0;
    const NDTree tree = grow_greedy(ds, cfg);
    CHECK(tree.leaf_count() == 1);
    CHECK(tree.root->leaf_value[0] == doctest::Approx(0.5));
    const auto pred = predict_class(tree, ds.features, TreePredict::HardPath);
    for (std::size_t c : pred) CHECK(c == 0);  // tie resolves to lowest index
  }
  SUBCASE("a separable blob pair is solved by one split") {
    const Dataset ds = blob_pair(40, 5);
    GrowthConfig cfg = default_growth(2);
    cfg.max_depth = 1;
    const NDTree tree = grow_greedy(ds, cfg);
    REQUIRE(!tree.root->is_leaf());
    // the root split reaches near-zero local loss
    const Matrix phi_m = head_output(tree.root->split_net, ds.features);
    std::vector<double> phi(ds.size());
    std::vector<double> y(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      phi[i] = phi_m(i, 0);
      y[i] = double(ds.class_of(i));
    }
    CHECK(node_gini_loss(node_split_stats(phi, y)) <= 1e-3);
    const auto pred = predict_class(tree, ds.features, TreePredict::HardPath);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (pred[i] == ds.class_of(i)) ++correct;
    CHECK(correct == ds.size());
  }
  SUBCASE("two moons at depth 2 with linear splits") {
    // The greedy root settles on the best single oblique line, which caps the
    // depth-2 tree near 88% on this geometry.
    const Dataset ds = gen_two_moons(200, 0.1, 7);
    GrowthConfig cfg = default_growth(4);
    const NDTree tree = grow_greedy(ds, cfg);
    const auto pred = predict_class(tree, ds.features, TreePredict::HardPath);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (pred[i] == ds.class_of(i)) ++correct;
    CHECK(double(correct) / double(ds.size()) >= 0.85);
  }
  SUBCASE("unlabeled data is rejected") {
    Dataset ds;
    ds.features = Matrix(4, 2, 0.5);
    CHECK_THROWS_AS(grow_greedy(ds, default_growth(1)), std::invalid_argument);
  }
  SUBCASE("pure nodes stop splitting") {
    Dataset ds = blob_pair(20, 9);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      ds.labels(i, 0) = 1.0;  // all one class
      ds.labels(i, 1) = 0.0;
    }
    const NDTree tree = grow_greedy(ds, default_growth(1));
    CHECK(tree.leaf_count() == 1);
  }
}

TEST_CASE("regression growth") {
  // targets form two plateaus split by x0
  Dataset ds;
  ds.features = Matrix(30, 1);
  ds.labels = Matrix(30, 1);
  for (std::size_t i = 0; i < 30; ++i) {
    ds.features(i, 0) = i < 15 ? -1.0 - 0.01 * double(i) : 1.0 + 0.01 * double(i);
    ds.labels(i, 0) = i < 15 ? 0.0 : 5.0;
  }
  ds.label_kind = LabelKind::Continuous;
  GrowthConfig cfg = default_growth(11);
  cfg.max_depth = 1;
  cfg.node_train.loss.kind = LossKind::Variance;
  cfg.node_train.learning_rate = 0.2;
  cfg.node_train.max_iters = 500;
  const NDTree tree = grow_greedy(ds, cfg);
  CHECK(tree.policy == PredictionPolicy::Mean);
  const Matrix pred = predict_value(tree, ds.features, TreePredict::HardPath);
  for (std::size_t i = 0; i < 30; ++i)
    CHECK(pred(i, 0) == doctest::Approx(ds.labels(i, 0)).epsilon(0.05));
}

TEST_CASE("hard node outputs produce an exact recursive partition") {
  NDTree tree = random_tree(2, 2, 13);
  // saturate every split hard
  std::function<void(NDTNode*)> saturate = [&](NDTNode* node) {
    if (node->is_leaf()) return;
    for (auto& layer : node->split_net.layers)
      for (double& w : layer.weights.data) w *= 1e8;
    saturate(node->left.get());
    saturate(node->right.get());
  };
  saturate(tree.root.get());
  std::mt19937_64 rng(4);
  const Matrix x = oracle::random_matrix(rng, 10, 2, -3, 3);
  const Matrix m = leaf_memberships(tree, x);
  for (std::size_t i = 0; i < m.rows; ++i) {
    std::size_t ones = 0;
    for (double v : m.row(i)) {
      if (v > 0.999) ++ones;
      CHECK((v < 1e-9 || v > 0.999));
    }
    CHECK(ones == 1);
  }
}

TEST_CASE("predict modes") {
  SUBCASE("depth-1: phi = 0.9 goes left") {
    NDTree tree;
    Network net = init_network({1, 1}, 1);
    net.layers[0].weights(0, 0) = 0.0;
    net.layers[0].biases[0] = std::log(0.9 / 0.1);  // sigmoid -> 0.9
    tree.root = make_split(std::move(net), make_leaf({1, 0}, 1, 0),
                           make_leaf({0, 1}, 1, 1), 0, 0);
    tree.input_dim = 1;
    tree.value_dim = 2;
    Matrix x(1, 1, 0.0);
    CHECK(predict_class(tree, x, TreePredict::HardPath)[0] == 0);
  }
  SUBCASE("soft mixture equals the membership-weighted leaf mixture") {
    NDTree tree = random_tree(2, 2, 17);
    std::mt19937_64 rng(5);
    const Matrix x = oracle::random_matrix(rng, 6, 2, -1, 1);
    const Matrix soft = predict_value(tree, x, TreePredict::SoftMixture);
    const Matrix m = leaf_memberships(tree, x);
    const auto leaves = tree.leaf_nodes();
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t k = 0; k < 2; ++k) {
        double expect = 0.0;
        for (std::size_t l = 0; l < leaves.size(); ++l)
          expect += m(i, l) * leaves[l]->leaf_value[k];
        CHECK(soft(i, k) == doctest::Approx(expect).epsilon(1e-12));
      }
  }
  SUBCASE("hard and soft predictions agree when routing is saturated") {
    NDTree tree = random_tree(2, 2, 19);
    std::function<void(NDTNode*)> saturate = [&](NDTNode* node) {
      if (node->is_leaf()) return;
      for (auto& layer : node->split_net.layers)
        for (double& w : layer.weights.data) w *= 500.0;
      saturate(node->left.get());
      saturate(node->right.get());
    };
    saturate(tree.root.get());
    std::mt19937_64 rng(6);
    const Matrix x = oracle::random_matrix(rng, 8, 2, -3, 3);
    CHECK(predict_class(tree, x, TreePredict::HardPath) ==
          predict_class(tree, x, TreePredict::SoftMixture));
  }
}

TEST_CASE("tree parameter flattening round trip") {
  NDTree tree = random_tree(2, 2, 23);
  const std::vector<double> params = tree_flatten_params(tree);
  CHECK(params.size() == tree_param_count(tree));
  CHECK(params.size() == 9);  // 3 internal nodes x (2 weights + 1 bias)
  NDTree other = random_tree(2, 2, 29);
  tree_unflatten_params(other, params);
  CHECK(tree_flatten_params(other) == params);
}

TEST_CASE("global_fine_tune") {
  const Dataset ds = gen_two_moons(120, 0.1, 21);
  TrainConfig cfg;
  cfg.loss.kind = LossKind::Gini;
  cfg.learning_rate = 0.3;
  cfg.max_iters = 150;
  cfg.rel_tol = 1e-10;
  cfg.log_every = 25;

  SUBCASE("never increases the tree loss") {
    NDTree tree = grow_greedy(ds, default_growth(31));
    const double before = tree_objective(tree, ds, LossKind::Gini);
    global_fine_tune(tree, ds, cfg);
    const double after = tree_objective(tree, ds, LossKind::Gini);
    CHECK(after <= before + 1e-9);
  }
  SUBCASE("an already-converged tree barely moves") {
    NDTree tree = grow_greedy(ds, default_growth(31));
    global_fine_tune(tree, ds, cfg);
    const double before = tree_objective(tree, ds, LossKind::Gini);
    TrainConfig again = cfg;
    again.max_iters = 30;
    global_fine_tune(tree, ds, again);
    const double after = tree_objective(tree, ds, LossKind::Gini);
    CHECK(after <= before + 1e-9);
  }
  SUBCASE("recovers at least half the damage of a corrupted node") {
    NDTree tree = grow_greedy(ds, default_growth(31));
    global_fine_tune(tree, ds, cfg);
    const double good = tree_objective(tree, ds, LossKind::Gini);
    // corrupt the root split
    tree.root->split_net.layers[0].weights(0, 0) += 2.0;
    tree.root->split_net.layers[0].biases[0] -= 1.5;
    const double damaged = tree_objective(tree, ds, LossKind::Gini);
    REQUIRE(damaged > good + 1e-3);
    TrainConfig repair = cfg;
    repair.max_iters = 400;
    global_fine_tune(tree, ds, repair);
    const double repaired = tree_objective(tree, ds, LossKind::Gini);
    CHECK(damaged - repaired >= 0.5 * (damaged - good));
  }
  SUBCASE("tree gradient matches finite differences on all node parameters") {
    NDTree tree = random_tree(2, 2, 37);
    const Dataset small = gen_two_moons(12, 0.1, 5);
    for (LossKind kind : {LossKind::Gini, LossKind::InfoGain}) {
      const auto [loss, analytic] = tree_objective_with_gradient(tree, small, kind);
      CHECK(std::isfinite(loss));
      NDTree probe = random_tree(2, 2, 37);
      const auto loss_at = [&](const std::vector<double>& p) {
        tree_unflatten_params(probe, p);
        return tree_objective(probe, small, kind);
      };
      const std::vector<double> numeric =
          oracle::finite_difference(loss_at, tree_flatten_params(tree), 1e-5);
      CHECK(oracle::max_rel_err(analytic, numeric) <= 1e-5);
    }
  }
  SUBCASE("rejects regression trees and mismatched labels") {
    NDTree tree = random_tree(1, 2, 41);
    tree.policy = PredictionPolicy::Mean;
    tree.value_dim = 2;
    CHECK_THROWS_AS(global_fine_tune(tree, ds, cfg), std::invalid_argument);
  }
}
