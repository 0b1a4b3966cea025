#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ndthash/matrix.hpp"

namespace ndthash {

enum class Activation { Sigmoid, Tanh, Identity };

// Widest supported hashing head. Region statistics enumerate all 2^k codes,
// so the width is capped where that stays tractable.
inline constexpr std::size_t kMaxHeadWidth = 20;

// Numerically stable logistic function, clamped away from exact 0/1 so that
// region membership products and their logs stay well defined even for
// strongly saturated units.
double sigmoid(double z);

struct DenseLayer {
  Matrix weights;               // fan_out x fan_in
  std::vector<double> biases;   // fan_out
  Activation activation = Activation::Sigmoid;

  std::size_t fan_in() const { return weights.cols; }
  std::size_t fan_out() const { return weights.rows; }
};

// Makes a square layer computing the identity map (unit weights, zero bias).
DenseLayer identity_layer(std::size_t dim);

// A dense feed-forward stack whose final layer is the sigmoid hashing head.
// The head's k units jointly address 2^k input-space regions.
struct Network {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().fan_in(); }
  std::size_t head_width() const { return layers.back().fan_out(); }

  // Throws std::invalid_argument on shape chain breaks, a non-sigmoid final
  // layer, a head wider than kMaxHeadWidth, or non-finite parameters.
  void validate() const;
};

// Weights i.i.d. Normal(0, 1/sqrt(fan_in)), biases zero, hidden layers using
// hidden_act and the final layer forced to sigmoid. Deterministic per seed.
Network init_network(const std::vector<std::size_t>& layer_dims, std::uint64_t seed,
                     Activation hidden_act = Activation::Sigmoid);

// All layer outputs of one forward evaluation; activations[0] is the input
// batch and activations.back() the head output, kept for gradients.
struct ForwardPass {
  std::vector<Matrix> activations;

  const Matrix& out() const { return activations.back(); }
};

ForwardPass forward(const Network& net, const Matrix& x);

// Parameter vector layout: for each layer in order, the weight matrix
// row-major, then the biases. Shared by networks and gradients.
std::size_t param_count(const Network& net);
std::vector<double> flatten_params(const Network& net);
void unflatten_params(Network& net, std::span<const double> params);

// Autoencoder with a hashing head on the latent layer. The decoder mirrors
// the encoder back to the input dimension.
struct Autoencoder {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  Network head;

  std::size_t input_dim() const { return encoder.front().fan_in(); }
  std::size_t latent_dim() const { return encoder.back().fan_out(); }
  std::size_t head_width() const { return head.head_width(); }

  void validate() const;
};

// encoder_dims runs input -> latent; the decoder mirrors it reversed with an
// identity-activation output layer. head_width sigmoid units sit on the latent.
Autoencoder init_autoencoder(const std::vector<std::size_t>& encoder_dims,
                             std::size_t head_width, std::uint64_t seed,
                             Activation hidden_act = Activation::Sigmoid);

// Identity-initialized single-layer encoder/decoder (latent == input), with a
// randomly initialized head. The starting reconstruction is exact.
Autoencoder make_identity_autoencoder(std::size_t dim, std::size_t head_width,
                                      std::uint64_t seed);

struct AutoencoderPass {
  ForwardPass encoder;
  ForwardPass decoder;
  ForwardPass head;

  const Matrix& latent() const { return encoder.activations.back(); }
  const Matrix& reconstruction() const { return decoder.activations.back(); }
  const Matrix& head_out() const { return head.activations.back(); }
};

AutoencoderPass autoencoder_forward(const Autoencoder& ae, const Matrix& x);

// Autoencoder parameters flatten as encoder, decoder, head.
std::size_t param_count(const Autoencoder& ae);
std::vector<double> flatten_params(const Autoencoder& ae);
void unflatten_params(Autoencoder& ae, std::span<const double> params);

// Head output for either model kind (network out, or head applied to the
// encoder's latent representation).
Matrix head_output(const Network& net, const Matrix& x);
Matrix head_output(const Autoencoder& ae, const Matrix& x);

}  // namespace ndthash
