#include "ndthash/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ndthash {

namespace {

constexpr double kSigmoidClamp = 1e-12;

std::vector<DenseLayer> init_stack(const std::vector<std::size_t>& dims,
                                   Activation hidden_act, Activation final_act,
                                   std::mt19937_64& rng) {
  std::vector<DenseLayer> layers;
  layers.reserve(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    DenseLayer layer;
    layer.weights = Matrix(fan_out, fan_in);
    layer.biases.assign(fan_out, 0.0);
    layer.activation = (l + 2 == dims.size()) ? final_act : hidden_act;
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(fan_in)));
    for (double& w : layer.weights.data) w = gauss(rng);
    layers.push_back(std::move(layer));
  }
  return layers;
}

void validate_stack(const std::vector<DenseLayer>& layers, const char* what) {
  if (layers.empty()) throw std::invalid_argument(std::string(what) + ": no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const DenseLayer& layer = layers[l];
    if (layer.weights.rows == 0 || layer.weights.cols == 0)
      throw std::invalid_argument(std::string(what) + ": empty layer");
    if (layer.biases.size() != layer.fan_out())
      throw std::invalid_argument(std::string(what) + ": bias size mismatch");
    if (!all_finite(layer.weights) || !all_finite(layer.biases))
      throw std::invalid_argument(std::string(what) + ": non-finite parameter");
    if (l > 0 && layer.fan_in() != layers[l - 1].fan_out())
      throw std::invalid_argument(std::string(what) + ": layer dimension chain broken");
  }
}

Matrix layer_forward(const DenseLayer& layer, const Matrix& input) {
  Matrix out(input.rows, layer.fan_out());
  for (std::size_t i = 0; i < input.rows; ++i) {
    const auto in_row = input.row(i);
    for (std::size_t o = 0; o < layer.fan_out(); ++o) {
      double z = layer.biases[o];
      const auto w_row = layer.weights.row(o);
      for (std::size_t j = 0; j < in_row.size(); ++j) z += w_row[j] * in_row[j];
      switch (layer.activation) {
        case Activation::Sigmoid: out(i, o) = sigmoid(z); break;
        case Activation::Tanh: out(i, o) = std::tanh(z); break;
        case Activation::Identity: out(i, o) = z; break;
      }
    }
  }
  return out;
}

ForwardPass stack_forward(const std::vector<DenseLayer>& layers, const Matrix& x) {
  ForwardPass fp;
  fp.activations.reserve(layers.size() + 1);
  fp.activations.push_back(x);
  for (const DenseLayer& layer : layers)
    fp.activations.push_back(layer_forward(layer, fp.activations.back()));
  return fp;
}

void check_input(const Matrix& x, std::size_t expected_dim, const char* what) {
  if (x.cols != expected_dim)
    throw std::invalid_argument(std::string(what) + ": input dimension mismatch");
  if (!all_finite(x))
    throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace

double sigmoid(double z) {
  double s;
  if (z >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  if (s < kSigmoidClamp) s = kSigmoidClamp;
  if (s > 1.0 - kSigmoidClamp) s = 1.0 - kSigmoidClamp;
  return s;
}

DenseLayer identity_layer(std::size_t dim) {
  DenseLayer layer;
  layer.weights = Matrix(dim, dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) layer.weights(i, i) = 1.0;
  layer.biases.assign(dim, 0.0);
  layer.activation = Activation::Identity;
  return layer;
}

void Network::validate() const {
  validate_stack(layers, "network");
  if (layers.back().activation != Activation::Sigmoid)
    throw std::invalid_argument("network: final layer must be sigmoid");
  if (head_width() < 1 || head_width() > kMaxHeadWidth)
    throw std::invalid_argument("network: unsupported head width");
}

Network init_network(const std::vector<std::size_t>& layer_dims, std::uint64_t seed,
                     Activation hidden_act) {
  if (layer_dims.size() < 2)
    throw std::invalid_argument("init_network: need at least input and head dims");
  for (std::size_t d : layer_dims)
    if (d < 1) throw std::invalid_argument("init_network: zero layer width");
  if (layer_dims.back() > kMaxHeadWidth)
    throw std::invalid_argument("init_network: unsupported head width (max 20)");

  std::mt19937_64 rng(seed);
  Network net{init_stack(layer_dims, hidden_act, Activation::Sigmoid, rng)};
  net.validate();
  return net;
}

ForwardPass forward(const Network& net, const Matrix& x) {
  check_input(x, net.input_dim(), "forward");
  return stack_forward(net.layers, x);
}

namespace {

std::size_t stack_param_count(const std::vector<DenseLayer>& layers) {
  std::size_t n = 0;
  for (const DenseLayer& layer : layers)
    n += layer.weights.data.size() + layer.biases.size();
  return n;
}

void stack_flatten(const std::vector<DenseLayer>& layers, std::vector<double>& out) {
  for (const DenseLayer& layer : layers) {
    out.insert(out.end(), layer.weights.data.begin(), layer.weights.data.end());
    out.insert(out.end(), layer.biases.begin(), layer.biases.end());
  }
}

void stack_unflatten(std::vector<DenseLayer>& layers, std::span<const double>& params) {
  for (DenseLayer& layer : layers) {
    const std::size_t nw = layer.weights.data.size();
    const std::size_t nb = layer.biases.size();
    if (params.size() < nw + nb)
      throw std::invalid_argument("unflatten_params: parameter vector too short");
    std::copy(params.begin(), params.begin() + nw, layer.weights.data.begin());
    params = params.subspan(nw);
    std::copy(params.begin(), params.begin() + nb, layer.biases.begin());
    params = params.subspan(nb);
  }
}

}  // namespace

std::size_t param_count(const Network& net) { return stack_param_count(net.layers); }

std::vector<double> flatten_params(const Network& net) {
  std::vector<double> out;
  out.reserve(param_count(net));
  stack_flatten(net.layers, out);
  return out;
}

void unflatten_params(Network& net, std::span<const double> params) {
  if (params.size() != param_count(net))
    throw std::invalid_argument("unflatten_params: parameter count mismatch");
  stack_unflatten(net.layers, params);
}

void Autoencoder::validate() const {
  validate_stack(encoder, "autoencoder encoder");
  validate_stack(decoder, "autoencoder decoder");
  head.validate();
  if (decoder.front().fan_in() != latent_dim())
    throw std::invalid_argument("autoencoder: decoder input must be the latent dim");
  if (decoder.back().fan_out() != input_dim())
    throw std::invalid_argument("autoencoder: decoder output must be the input dim");
  if (head.input_dim() != latent_dim())
    throw std::invalid_argument("autoencoder: head input must be the latent dim");
}

Autoencoder init_autoencoder(const std::vector<std::size_t>& encoder_dims,
                             std::size_t head_width, std::uint64_t seed,
                             Activation hidden_act) {
  if (encoder_dims.size() < 2)
    throw std::invalid_argument("init_autoencoder: need at least input and latent dims");
  std::mt19937_64 rng(seed);
  Autoencoder ae;
  ae.encoder = init_stack(encoder_dims, hidden_act, hidden_act, rng);
  std::vector<std::size_t> decoder_dims(encoder_dims.rbegin(), encoder_dims.rend());
  ae.decoder = init_stack(decoder_dims, hidden_act, Activation::Identity, rng);
  ae.head = Network{
      init_stack({encoder_dims.back(), head_width}, hidden_act, Activation::Sigmoid, rng)};
  ae.validate();
  return ae;
}

Autoencoder make_identity_autoencoder(std::size_t dim, std::size_t head_width,
                                      std::uint64_t seed) {
  Autoencoder ae;
  ae.encoder.push_back(identity_layer(dim));
  ae.decoder.push_back(identity_layer(dim));
  ae.head = init_network({dim, head_width}, seed);
  ae.validate();
  return ae;
}

AutoencoderPass autoencoder_forward(const Autoencoder& ae, const Matrix& x) {
  check_input(x, ae.input_dim(), "autoencoder_forward");
  AutoencoderPass pass;
  pass.encoder = stack_forward(ae.encoder, x);
  pass.decoder = stack_forward(ae.decoder, pass.encoder.activations.back());
  pass.head = stack_forward(ae.head.layers, pass.encoder.activations.back());
  return pass;
}

std::size_t param_count(const Autoencoder& ae) {
  return stack_param_count(ae.encoder) + stack_param_count(ae.decoder) +
         stack_param_count(ae.head.layers);
}

std::vector<double> flatten_params(const Autoencoder& ae) {
  std::vector<double> out;
  out.reserve(param_count(ae));
  stack_flatten(ae.encoder, out);
  stack_flatten(ae.decoder, out);
  stack_flatten(ae.head.layers, out);
  return out;
}

void unflatten_params(Autoencoder& ae, std::span<const double> params) {
  if (params.size() != param_count(ae))
    throw std::invalid_argument("unflatten_params: parameter count mismatch");
  stack_unflatten(ae.encoder, params);
  stack_unflatten(ae.decoder, params);
  stack_unflatten(ae.head.layers, params);
}

Matrix head_output(const Network& net, const Matrix& x) {
  return forward(net, x).activations.back();
}

Matrix head_output(const Autoencoder& ae, const Matrix& x) {
  return autoencoder_forward(ae, x).head.activations.back();
}

}  // namespace ndthash
