#include <doctest.h>

#include <random>
#include <stdexcept>

#include "ndthash/network.hpp"
#include "oracles.hpp"

using namespace ndthash;

namespace {

Matrix oracle_forward(const Network& net, const Matrix& x) {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  std::vector<int> acts;
  for (const DenseLayer& layer : net.layers) {
    weights.push_back(layer.weights);
    biases.push_back(layer.biases);
    acts.push_back(layer.activation == Activation::Sigmoid
                       ? 0
                       : (layer.activation == Activation::Tanh ? 1 : 2));
  }
  return oracle::dense_stack_forward(weights, biases, acts, x);
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(param_count(init_network({2, 3}, 0)) == 9);
  CHECK(param_count(init_network({2, 4}, 0)) == 12);
  CHECK(param_count(init_network({2, 3, 1}, 0)) == 13);
  CHECK(param_count(init_network({2, 4, 1}, 0)) == 17);
}

TEST_CASE("init_network validation") {
  CHECK_THROWS_AS(init_network({2}, 0), std::invalid_argument);
  CHECK_THROWS_AS(init_network({2, 0}, 0), std::invalid_argument);
  CHECK_THROWS_WITH_AS(init_network({2, 21}, 0),
                       doctest::Contains("unsupported head width"),
                       std::invalid_argument);
  // deterministic per seed
  const Network a = init_network({3, 4, 2}, 77);
  const Network b = init_network({3, 4, 2}, 77);
  CHECK(flatten_params(a) == flatten_params(b));
  // biases start at zero
  for (const DenseLayer& layer : a.layers)
    for (double bias : layer.biases) CHECK(bias == 0.0);
}

TEST_CASE("forward") {
  SUBCASE("zero parameters map everything to 0.5") {
    Network net = init_network({3, 2}, 1);
    for (double& w : net.layers[0].weights.data) w = 0.0;
    std::mt19937_64 rng(2);
    const Matrix x = oracle::random_matrix(rng, 5, 3, -4.0, 4.0);
    const Matrix out = forward(net, x).out();
    for (double v : out.data) CHECK(v == doctest::Approx(0.5));
  }
  SUBCASE("orthogonal input gives 0.5") {
    Network net = init_network({2, 1}, 1);
    net.layers[0].weights(0, 0) = 1.0;
    net.layers[0].weights(0, 1) = 0.0;
    net.layers[0].biases[0] = 0.0;
    Matrix x(1, 2);
    x(0, 0) = 0.0;
    x(0, 1) = 5.0;
    CHECK(forward(net, x).out()(0, 0) == doctest::Approx(0.5));
  }
  SUBCASE("matches an independent re-implementation") {
    std::mt19937_64 rng(3);
    const Network net = init_network({3, 5, 2}, 123);
    const Matrix x = oracle::random_matrix(rng, 7, 3, -2.0, 2.0);
    const Matrix out = forward(net, x).out();
    const Matrix expect = oracle_forward(net, x);
    for (std::size_t i = 0; i < out.data.size(); ++i)
      CHECK(out.data[i] == doctest::Approx(expect.data[i]).epsilon(1e-12));
  }
  SUBCASE("output is strictly inside (0,1) even for saturating inputs") {
    Network net = init_network({1, 1}, 1);
    net.layers[0].weights(0, 0) = 1000.0;
    Matrix x(2, 1);
    x(0, 0) = 100.0;
    x(1, 0) = -100.0;
    const Matrix out = forward(net, x).out();
    CHECK(out(0, 0) < 1.0);
    CHECK(out(0, 0) > 0.99);
    CHECK(out(1, 0) > 0.0);
    CHECK(out(1, 0) < 0.01);
  }
  SUBCASE("input validation") {
    const Network net = init_network({2, 1}, 1);
    CHECK_THROWS_AS(forward(net, Matrix(2, 3)), std::invalid_argument);
    Matrix bad(1, 2);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(net, bad), std::invalid_argument);
  }
}

TEST_CASE("parameter vector round trip") {
  std::mt19937_64 rng(4);
  Network net = init_network({2, 4, 3}, 55);
  const std::vector<double> params = flatten_params(net);
  CHECK(params.size() == param_count(net));

  Network other = init_network({2, 4, 3}, 99);
  unflatten_params(other, params);
  CHECK(flatten_params(other) == params);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(other.layers[l].weights == net.layers[l].weights);
    CHECK(other.layers[l].biases == net.layers[l].biases);
  }

  std::vector<double> wrong(params.size() + 1, 0.0);
  CHECK_THROWS_AS(unflatten_params(other, wrong), std::invalid_argument);
}

TEST_CASE("autoencoder") {
  SUBCASE("identity autoencoder reproduces its input exactly") {
    const Autoencoder ae = make_identity_autoencoder(3, 2, 5);
    std::mt19937_64 rng(6);
    const Matrix x = oracle::random_matrix(rng, 4, 3, -2.0, 2.0);
    const AutoencoderPass pass = autoencoder_forward(ae, x);
    CHECK(pass.reconstruction() == x);
    CHECK(pass.latent() == x);
  }
  SUBCASE("zero head weights give 0.5 everywhere") {
    Autoencoder ae = make_identity_autoencoder(2, 3, 5);
    for (double& w : ae.head.layers[0].weights.data) w = 0.0;
    std::mt19937_64 rng(7);
    const Matrix x = oracle::random_matrix(rng, 3, 2, -1.0, 1.0);
    const AutoencoderPass pass = autoencoder_forward(ae, x);
    for (double v : pass.head_out().data) CHECK(v == doctest::Approx(0.5));
  }
  SUBCASE("reconstruction matches the oracle composition") {
    const Autoencoder ae = init_autoencoder({3, 4, 2}, 2, 31);
    std::mt19937_64 rng(8);
    const Matrix x = oracle::random_matrix(rng, 5, 3, -1.0, 1.0);
    const AutoencoderPass pass = autoencoder_forward(ae, x);

    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    std::vector<int> acts;
    for (const auto* stack : {&ae.encoder, &ae.decoder})
      for (const DenseLayer& layer : *stack) {
        weights.push_back(layer.weights);
        biases.push_back(layer.biases);
        acts.push_back(layer.activation == Activation::Sigmoid
                           ? 0
                           : (layer.activation == Activation::Tanh ? 1 : 2));
      }
    const Matrix expect = oracle::dense_stack_forward(weights, biases, acts, x);
    for (std::size_t i = 0; i < expect.data.size(); ++i)
      CHECK(pass.reconstruction().data[i] ==
            doctest::Approx(expect.data[i]).epsilon(1e-12));
  }
  SUBCASE("parameter round trip covers all three stacks") {
    Autoencoder ae = init_autoencoder({2, 3, 2}, 2, 41);
    const std::vector<double> params = flatten_params(ae);
    CHECK(params.size() == param_count(ae));
    Autoencoder other = init_autoencoder({2, 3, 2}, 2, 42);
    unflatten_params(other, params);
    CHECK(flatten_params(other) == params);
  }
  SUBCASE("shape validation") {
    Autoencoder ae = make_identity_autoencoder(2, 2, 1);
    ae.decoder[0] = identity_layer(3);
    CHECK_THROWS_AS(ae.validate(), std::invalid_argument);
  }
}
