#include <doctest.h>

#include <random>
#include <stdexcept>

#include "ndthash/train.hpp"
#include "oracles.hpp"

using namespace ndthash;

TEST_CASE("sgd_step") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;

  SUBCASE("zero momentum is plain gradient descent") {
    std::vector<double> p{1.0, -2.0};
    std::vector<double> v(2, 0.0);
    sgd_step(p, std::vector<double>{0.5, -0.5}, cfg, v);
    CHECK(p[0] == doctest::Approx(0.95));
    CHECK(p[1] == doctest::Approx(-1.95));
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, 2.0};
    std::vector<double> v(2, 0.0);
    sgd_step(p, std::vector<double>{0.0, 0.0}, cfg, v);
    CHECK(p == std::vector<double>{1.0, 2.0});
  }
  SUBCASE("two momentum steps match the hand-computed sequence") {
    cfg.momentum = 0.9;
    std::vector<double> p{1.0};
    std::vector<double> v{0.0};
    const std::vector<double> g{0.5};
    sgd_step(p, g, cfg, v);  // v = -0.05, p = 0.95
    CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-15));
    sgd_step(p, g, cfg, v);  // v = 0.9*(-0.05) - 0.05 = -0.095, p = 0.855
    CHECK(p[0] == doctest::Approx(0.855).epsilon(1e-15));
  }
}

TEST_CASE("train stopping and determinism") {
  const Dataset ds = gen_two_moons(40, 0.1, 3);
  TrainConfig cfg;
  cfg.loss.kind = LossKind::Gini;
  cfg.learning_rate = 0.5;
  cfg.max_iters = 50;
  cfg.log_every = 10;

  SUBCASE("a huge rel_tol stops after one update") {
    cfg.rel_tol = 1e9;
    Network net = init_network({2, 2}, 4);
    const TrainHistory history = train(net, ds, cfg);
    CHECK(history.final_record().iter == 1);
  }
  SUBCASE("identical seeds and config give identical histories") {
    cfg.rel_tol = 1e-12;
    Network a = init_network({2, 3}, 9);
    Network b = init_network({2, 3}, 9);
    const TrainHistory ha = train(a, ds, cfg);
    const TrainHistory hb = train(b, ds, cfg);
    REQUIRE(ha.records.size() == hb.records.size());
    for (std::size_t i = 0; i < ha.records.size(); ++i) {
      CHECK(ha.records[i].iter == hb.records[i].iter);
      CHECK(ha.records[i].loss_total == hb.records[i].loss_total);
      CHECK(ha.records[i].mass == hb.records[i].mass);
    }
    CHECK(flatten_params(a) == flatten_params(b));
  }
  SUBCASE("history iterations are strictly increasing and end at the final state") {
    cfg.rel_tol = 1e-12;
    Network net = init_network({2, 3}, 10);
    const TrainHistory history = train(net, ds, cfg);
    for (std::size_t i = 1; i < history.records.size(); ++i)
      CHECK(history.records[i].iter > history.records[i - 1].iter);
    // final record is evaluated at the returned parameters
    LossSpec spec = cfg.loss;
    const double final_loss = eval_total_loss(net, ds.features, &ds.labels, spec);
    CHECK(history.final_record().loss_total ==
          doctest::Approx(final_loss).epsilon(1e-12));
    CHECK(history.final_record().train_acc.has_value());
  }
  SUBCASE("minibatch training is deterministic per seed") {
    cfg.rel_tol = 1e-12;
    cfg.batch = BatchSpec::minibatch(8, 77);
    Network a = init_network({2, 2}, 5);
    Network b = init_network({2, 2}, 5);
    const TrainHistory ha = train(a, ds, cfg);
    const TrainHistory hb = train(b, ds, cfg);
    CHECK(flatten_params(a) == flatten_params(b));
    CHECK(ha.final_record().loss_total == hb.final_record().loss_total);
  }
}

TEST_CASE("training diverges loudly") {
  const Dataset ds = gen_two_moons(20, 0.1, 3);
  TrainConfig cfg;
  cfg.loss.kind = LossKind::Gini;
  cfg.loss.lambda_l2 = 1.0;
  cfg.learning_rate = 1e12;  // L2 term explodes within a few steps
  cfg.max_iters = 200;
  cfg.rel_tol = 1e-15;
  Network net = init_network({2, 2}, 6);
  CHECK_THROWS_AS(train(net, ds, cfg), DivergedError);
}

TEST_CASE("loss is non-increasing for almost all small-step iterations") {
  const Dataset ds = gen_two_moons(60, 0.1, 12);
  TrainConfig cfg;
  cfg.loss.kind = LossKind::Gini;
  cfg.learning_rate = 1e-3;
  cfg.max_iters = 200;
  cfg.rel_tol = 1e-15;
  cfg.log_every = 1;
  Network net = init_network({2, 3}, 8);
  const TrainHistory history = train(net, ds, cfg);
  std::size_t increases = 0;
  for (std::size_t i = 1; i < history.records.size(); ++i)
    if (history.records[i].loss_total > history.records[i - 1].loss_total)
      ++increases;
  CHECK(double(increases) <= 0.05 * double(history.records.size()));
}

TEST_CASE("loss/label compatibility is validated") {
  const Dataset moons = gen_two_moons(10, 0.1, 3);
  TrainConfig cfg;
  cfg.loss.kind = LossKind::Variance;
  Network net = init_network({2, 2}, 6);
  CHECK_THROWS_AS(train(net, moons, cfg), std::invalid_argument);

  cfg.loss.kind = LossKind::ReconstructionUnsup;
  CHECK_THROWS_AS(train(net, moons, cfg), std::invalid_argument);
}

TEST_CASE("two moons single-layer run reaches high accuracy (smoke)") {
  const Dataset ds = gen_two_moons(200, 0.1, 7);
  TrainConfig cfg;  // default toy hyperparameters
  cfg.loss.kind = LossKind::Gini;
  cfg.loss.lambda_uniform = 0.1;
  cfg.loss.lambda_l2 = 1e-4;
  cfg.max_iters = 1000;
  cfg.rel_tol = 1e-10;
  cfg.log_every = 100;
  Network net = init_network({2, 3}, 1);
  const TrainHistory history = train(net, ds, cfg);
  CHECK(history.final_record().train_acc.value() >= 0.95);
}
