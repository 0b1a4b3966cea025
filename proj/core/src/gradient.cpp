#include "ndthash/gradient.hpp"

#include <cmath>
#include <stdexcept>

#include "gradient_internal.hpp"
#include "ndthash/chain.hpp"
#include "ndthash/parallel.hpp"

namespace ndthash {

namespace internal {

namespace {

constexpr double kLog2 = 0.6931471805599453;

double activation_derivative(Activation act, double a) {
  switch (act) {
    case Activation::Sigmoid: return a * (1.0 - a);
    case Activation::Tanh: return 1.0 - a * a;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

}  // namespace

StackGrad backprop_stack(const std::vector<DenseLayer>& layers, const ForwardPass& fp,
                         Matrix delta, Matrix* d_input) {
  StackGrad grad;
  grad.layers.resize(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const Matrix& a_out = fp.activations[l + 1];
    const Matrix& a_in = fp.activations[l];

    // dL/d(pre-activation)
    for (std::size_t i = 0; i < delta.rows; ++i)
      for (std::size_t o = 0; o < delta.cols; ++o)
        delta(i, o) *= activation_derivative(layer.activation, a_out(i, o));

    LayerGrad& lg = grad.layers[l];
    lg.weights = Matrix(layer.fan_out(), layer.fan_in(), 0.0);
    lg.biases.assign(layer.fan_out(), 0.0);
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const auto in_row = a_in.row(i);
      for (std::size_t o = 0; o < layer.fan_out(); ++o) {
        const double d = delta(i, o);
        lg.biases[o] += d;
        auto w_row = lg.weights.row(o);
        for (std::size_t j = 0; j < in_row.size(); ++j) w_row[j] += d * in_row[j];
      }
    }

    if (l > 0 || d_input != nullptr) {
      Matrix next(delta.rows, layer.fan_in(), 0.0);
      for (std::size_t i = 0; i < delta.rows; ++i)
        for (std::size_t o = 0; o < layer.fan_out(); ++o) {
          const double d = delta(i, o);
          const auto w_row = layer.weights.row(o);
          for (std::size_t j = 0; j < layer.fan_in(); ++j)
            next(i, j) += d * w_row[j];
        }
      if (l == 0) {
        *d_input = std::move(next);
      } else {
        delta = std::move(next);
      }
    }
  }
  return grad;
}

double impurity_derivative(Impurity kind, double f) {
  if (kind == Impurity::Gini) return -2.0 * f;
  return -(std::log(std::max(f, 1e-300)) / kLog2 + 1.0 / kLog2);
}

void add_l2_gradient(const std::vector<DenseLayer>& layers, StackGrad& grad,
                     double lambda) {
  if (lambda == 0.0) return;
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t idx = 0; idx < layers[l].weights.data.size(); ++idx)
      grad.layers[l].weights.data[idx] += 2.0 * lambda * layers[l].weights.data[idx];
}

}  // namespace internal

namespace {

using internal::add_l2_gradient;
using internal::backprop_stack;
using internal::impurity_derivative;

constexpr double kLog2 = 0.6931471805599453;

// What the head output feeds. Targets is the one-hot label block for
// classification or the value block (targets/inputs/latents) for variance.
struct HeadObjective {
  enum class Kind { None, Classification, Variance };
  Kind kind = Kind::None;
  Impurity impurity = Impurity::Gini;
  const Matrix* targets = nullptr;
  std::span<const double> weights;  // effective sample weights; empty = 1
  double lambda_uniform = 0.0;
};

struct HeadGrad {
  double loss_data = 0.0;
  double reg_uniform = 0.0;
  std::vector<double> mass;  // unweighted
  Matrix d_out;
  Matrix d_values;  // variance objectives: dL/d(targets row); else empty
};

// Gradient of [data loss + lambda_uniform * uniformity] w.r.t. the head
// output. The per-chain derivative of a sample's membership is the signed
// product of the remaining unit factors, taken here with prefix/suffix
// products so no division by a near-zero factor occurs.
HeadGrad head_loss_gradient(const Matrix& out, const HeadObjective& obj) {
  const std::size_t n = out.rows;
  const std::size_t k = out.cols;
  const std::size_t n_chains = std::size_t{1} << k;
  const Matrix memberships = membership_matrix(out);

  HeadGrad hg;
  hg.mass = chain_mass(memberships);
  hg.reg_uniform = uniformity_regularizer(hg.mass);
  hg.d_out = Matrix(n, k, 0.0);

  // Per-chain weighted statistics for the data objective.
  double total_weight = double(n);
  std::vector<double> chain_weight(n_chains, 0.0);  // B(c) = sum_i w_i m_ic
  if (!obj.weights.empty()) {
    total_weight = 0.0;
    for (double w : obj.weights) total_weight += w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double w = obj.weights.empty() ? 1.0 : obj.weights[i];
    for (std::size_t c = 0; c < n_chains; ++c) chain_weight[c] += w * memberships(i, c);
  }

  std::vector<std::uint8_t> active(n_chains, 0);
  const bool has_data = obj.kind != HeadObjective::Kind::None && total_weight > 0.0;
  if (has_data) {
    for (std::size_t c = 0; c < n_chains; ++c)
      active[c] = chain_weight[c] / total_weight >= kMassEpsilon ? 1 : 0;
  }

  const std::size_t value_cols = has_data ? obj.targets->cols : 0;
  Matrix stats(has_data ? n_chains : 0, value_cols, 0.0);  // f or region means
  std::vector<double> chain_impurity(n_chains, 0.0);       // E(f) or V(chain)

  if (has_data) {
    for (std::size_t i = 0; i < n; ++i) {
      const double w = obj.weights.empty() ? 1.0 : obj.weights[i];
      const auto t_row = obj.targets->row(i);
      for (std::size_t c = 0; c < n_chains; ++c) {
        const double wm = w * memberships(i, c);
        for (std::size_t d = 0; d < value_cols; ++d) stats(c, d) += wm * t_row[d];
      }
    }
    for (std::size_t c = 0; c < n_chains; ++c) {
      if (!active[c]) continue;
      for (std::size_t d = 0; d < value_cols; ++d) stats(c, d) /= chain_weight[c];
    }
    if (obj.kind == HeadObjective::Kind::Classification) {
      for (std::size_t c = 0; c < n_chains; ++c) {
        if (!active[c]) continue;
        chain_impurity[c] = impurity(stats.row(c), obj.impurity);
        hg.loss_data += (chain_weight[c] / total_weight) * chain_impurity[c];
      }
    } else {
      hg.d_values = Matrix(n, value_cols, 0.0);
      for (std::size_t c = 0; c < n_chains; ++c) {
        if (!active[c]) continue;
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double w = obj.weights.empty() ? 1.0 : obj.weights[i];
          sq += w * memberships(i, c) *
                squared_distance(obj.targets->row(i), stats.row(c));
        }
        chain_impurity[c] = sq / chain_weight[c];  // V(chain)
        hg.loss_data += (chain_weight[c] / total_weight) * chain_impurity[c];
      }
    }
  }

  // Combined coefficient dL/d(membership of sample i in chain c), then the
  // membership derivative w.r.t. each unit via leave-one-out products. Writes
  // touch only per-sample rows, so the loop parallelizes bit-exactly.
  const double uniform = 1.0 / double(n_chains);
  parallel_for_rows(n, [&](std::size_t row_begin, std::size_t row_end) {
    std::vector<double> coeff(n_chains);
    std::vector<double> pref(k + 1), suf(k + 1);
    for (std::size_t i = row_begin; i < row_end; ++i) {
      const double w = obj.weights.empty() ? 1.0 : obj.weights[i];
      for (std::size_t c = 0; c < n_chains; ++c) {
        double g = obj.lambda_uniform * 2.0 * (hg.mass[c] - uniform) / double(n);
        if (has_data && active[c]) {
          if (obj.kind == HeadObjective::Kind::Classification) {
            // d[mass*E(f)]/dm_ic with f = (sum w y m)/(sum w m); the region
            // mass cancels against the denominator to 1/total_weight.
            double bracket = chain_impurity[c];
            const auto y_row = obj.targets->row(i);
            for (std::size_t d = 0; d < value_cols; ++d)
              bracket += impurity_derivative(obj.impurity, stats(c, d)) *
                         (y_row[d] - stats(c, d));
            g += (w / total_weight) * bracket;
          } else {
            g += (w / total_weight) *
                 squared_distance(obj.targets->row(i), stats.row(c));
          }
        }
        coeff[c] = g;
      }

      // d m_ic / d out_in = sign * prod_{m != n} factor_m
      const auto out_row = out.row(i);
      for (std::size_t c = 0; c < n_chains; ++c) {
        const double g = coeff[c];
        if (g == 0.0) continue;
        pref[0] = 1.0;
        for (std::size_t u = 0; u < k; ++u) {
          const bool bit = (c >> (k - 1 - u)) & 1u;
          pref[u + 1] = pref[u] * (bit ? out_row[u] : 1.0 - out_row[u]);
        }
        suf[k] = 1.0;
        for (std::size_t u = k; u-- > 0;) {
          const bool bit = (c >> (k - 1 - u)) & 1u;
          suf[u] = suf[u + 1] * (bit ? out_row[u] : 1.0 - out_row[u]);
        }
        for (std::size_t u = 0; u < k; ++u) {
          const bool bit = (c >> (k - 1 - u)) & 1u;
          const double excl = pref[u] * suf[u + 1];
          hg.d_out(i, u) += g * (bit ? excl : -excl);
        }
      }

      // Direct dependence of the variance objective on the value rows (only
      // meaningful when the values are the latents of an autoencoder).
      if (has_data && obj.kind == HeadObjective::Kind::Variance) {
        const auto t_row = obj.targets->row(i);
        auto dv_row = hg.d_values.row(i);
        for (std::size_t c = 0; c < n_chains; ++c) {
          if (!active[c]) continue;
          const double scale = 2.0 * w * memberships(i, c) / total_weight;
          for (std::size_t d = 0; d < value_cols; ++d)
            dv_row[d] += scale * (t_row[d] - stats(c, d));
        }
      }
    }
  });
  return hg;
}

void append_grad(std::vector<double>& out, const StackGrad& grad) {
  for (const LayerGrad& lg : grad.layers) {
    out.insert(out.end(), lg.weights.data.begin(), lg.weights.data.end());
    out.insert(out.end(), lg.biases.begin(), lg.biases.end());
  }
}

std::vector<double> classification_weights(const Matrix& labels,
                                           const LossSpec& spec) {
  std::vector<double> w;
  if (spec.class_weights.empty()) return w;
  if (spec.class_weights.size() != labels.cols)
    throw std::invalid_argument("gradient: class weight count mismatch");
  w.assign(labels.rows, 0.0);
  for (std::size_t i = 0; i < labels.rows; ++i)
    for (std::size_t k = 0; k < labels.cols; ++k)
      w[i] += spec.class_weights[k] * labels(i, k);
  return w;
}

void require_labels(const Matrix* labels, const char* what) {
  if (labels == nullptr || labels->empty())
    throw std::invalid_argument(std::string(what) + ": labels required");
}

}  // namespace

std::vector<double> flatten_grad(const StackGrad& grad) {
  std::vector<double> out;
  append_grad(out, grad);
  return out;
}

GradResult backprop_gradient(const Network& net, const Matrix& x,
                             const Matrix* labels, const LossSpec& spec) {
  spec.validate();
  if (spec.kind == LossKind::ReconstructionUnsup ||
      spec.kind == LossKind::ReconstructionSemisup)
    throw std::invalid_argument("backprop_gradient: reconstruction losses need an autoencoder");

  const ForwardPass fp = forward(net, x);

  HeadObjective obj;
  obj.lambda_uniform = spec.lambda_uniform;
  std::vector<double> weights;
  switch (spec.kind) {
    case LossKind::Gini:
    case LossKind::InfoGain:
      require_labels(labels, "backprop_gradient");
      if (labels->cols < 2)
        throw std::invalid_argument("backprop_gradient: need at least 2 classes");
      obj.kind = HeadObjective::Kind::Classification;
      obj.impurity = spec.impurity();
      obj.targets = labels;
      weights = classification_weights(*labels, spec);
      obj.weights = weights;
      break;
    case LossKind::Variance:
      require_labels(labels, "backprop_gradient");
      obj.kind = HeadObjective::Kind::Variance;
      obj.targets = labels;
      break;
    case LossKind::UnsupVariance:
      obj.kind = HeadObjective::Kind::Variance;
      obj.targets = &x;
      break;
    default:
      break;
  }

  HeadGrad hg = head_loss_gradient(fp.out(), obj);
  StackGrad grad = backprop_stack(net.layers, fp, std::move(hg.d_out), nullptr);
  add_l2_gradient(net.layers, grad, spec.lambda_l2);

  GradResult result;
  result.loss_data = hg.loss_data;
  result.reg_uniform = hg.reg_uniform;
  result.reg_l2 = l2_penalty(net);
  result.loss_total = result.loss_data + spec.lambda_uniform * result.reg_uniform +
                      spec.lambda_l2 * result.reg_l2;
  result.mass = std::move(hg.mass);
  result.gradient = flatten_grad(grad);
  return result;
}

GradResult backprop_gradient(const Autoencoder& ae, const Matrix& x,
                             const Matrix* labels, const LossSpec& spec,
                             std::span<const std::uint8_t> labeled_mask) {
  spec.validate();
  if (spec.kind != LossKind::ReconstructionUnsup &&
      spec.kind != LossKind::ReconstructionSemisup)
    throw std::invalid_argument("backprop_gradient: autoencoder requires a reconstruction loss");
  if (!labeled_mask.empty() && labeled_mask.size() != x.rows)
    throw std::invalid_argument("backprop_gradient: mask size mismatch");

  const std::size_t n = x.rows;
  const AutoencoderPass pass = autoencoder_forward(ae, x);
  const Matrix& latent = pass.latent();

  GradResult result;

  // Reconstruction term: mean over rows of the squared error.
  Matrix d_recon(n, x.cols);
  double recon = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < x.cols; ++d) {
      const double diff = pass.reconstruction()(i, d) - x(i, d);
      recon += diff * diff;
      d_recon(i, d) = 2.0 * diff / double(n);
    }
  }
  recon /= double(n);

  // Head objective on the latents.
  HeadObjective obj;
  obj.lambda_uniform = spec.lambda_uniform;
  std::vector<double> weights;
  if (spec.kind == LossKind::ReconstructionUnsup) {
    obj.kind = HeadObjective::Kind::Variance;
    obj.targets = &latent;
  } else {
    std::size_t labeled = 0;
    if (!labeled_mask.empty()) {
      weights.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        weights[i] = labeled_mask[i] ? 1.0 : 0.0;
        labeled += labeled_mask[i] ? 1 : 0;
      }
    } else {
      labeled = labels ? n : 0;
    }
    if (labels == nullptr || labeled == 0) {
      obj.kind = HeadObjective::Kind::None;
      result.no_labeled_rows = true;
    } else {
      obj.kind = HeadObjective::Kind::Classification;
      obj.impurity = spec.impurity();
      obj.targets = labels;
      if (!spec.class_weights.empty()) {
        const std::vector<double> cw = classification_weights(*labels, spec);
        if (weights.empty()) {
          weights = cw;
        } else {
          for (std::size_t i = 0; i < n; ++i) weights[i] *= cw[i];
        }
      }
      obj.weights = weights;
    }
  }

  HeadGrad hg = head_loss_gradient(pass.head_out(), obj);

  Matrix d_latent_decoder;
  StackGrad grad_decoder =
      backprop_stack(ae.decoder, pass.decoder, std::move(d_recon), &d_latent_decoder);
  Matrix d_latent_head;
  StackGrad grad_head =
      backprop_stack(ae.head.layers, pass.head, std::move(hg.d_out), &d_latent_head);

  Matrix d_latent = std::move(d_latent_decoder);
  for (std::size_t idx = 0; idx < d_latent.data.size(); ++idx)
    d_latent.data[idx] += d_latent_head.data[idx];
  if (!hg.d_values.empty()) {
    for (std::size_t idx = 0; idx < d_latent.data.size(); ++idx)
      d_latent.data[idx] += hg.d_values.data[idx];
  }

  StackGrad grad_encoder =
      backprop_stack(ae.encoder, pass.encoder, std::move(d_latent), nullptr);

  add_l2_gradient(ae.encoder, grad_encoder, spec.lambda_l2);
  add_l2_gradient(ae.decoder, grad_decoder, spec.lambda_l2);
  add_l2_gradient(ae.head.layers, grad_head, spec.lambda_l2);

  result.loss_reconstruction = recon;
  result.loss_data = recon + hg.loss_data;
  result.reg_uniform = hg.reg_uniform;
  result.reg_l2 = l2_penalty(ae);
  result.loss_total = result.loss_data + spec.lambda_uniform * result.reg_uniform +
                      spec.lambda_l2 * result.reg_l2;
  result.mass = std::move(hg.mass);
  result.gradient.reserve(param_count(ae));
  append_grad(result.gradient, grad_encoder);
  append_grad(result.gradient, grad_decoder);
  append_grad(result.gradient, grad_head);
  return result;
}

double eval_total_loss(const Network& net, const Matrix& x, const Matrix* labels,
                       const LossSpec& spec) {
  spec.validate();
  const Matrix out = head_output(net, x);
  const Matrix memberships = membership_matrix(out);
  double data = 0.0;
  switch (spec.kind) {
    case LossKind::Gini:
    case LossKind::InfoGain:
      require_labels(labels, "eval_total_loss");
      data = hashing_classification_loss(memberships, *labels, spec.impurity(),
                                         spec.class_weights);
      break;
    case LossKind::Variance:
      require_labels(labels, "eval_total_loss");
      data = hashing_regression_loss(memberships, *labels);
      break;
    case LossKind::UnsupVariance:
      data = unsupervised_variance_loss(memberships, x);
      break;
    default:
      throw std::invalid_argument("eval_total_loss: reconstruction losses need an autoencoder");
  }
  return data + spec.lambda_uniform * uniformity_regularizer(chain_mass(memberships)) +
         spec.lambda_l2 * l2_penalty(net);
}

double eval_total_loss(const Autoencoder& ae, const Matrix& x, const Matrix* labels,
                       const LossSpec& spec,
                       std::span<const std::uint8_t> labeled_mask) {
  spec.validate();
  CompositeLoss comp;
  if (spec.kind == LossKind::ReconstructionUnsup) {
    comp = composite_unsupervised_loss(ae, x);
  } else if (spec.kind == LossKind::ReconstructionSemisup) {
    comp = composite_semisup_loss(ae, x, labels, labeled_mask, spec.impurity(),
                                  spec.class_weights);
  } else {
    throw std::invalid_argument("eval_total_loss: autoencoder requires a reconstruction loss");
  }
  const Matrix out = head_output(ae, x);
  return comp.total +
         spec.lambda_uniform * uniformity_regularizer(chain_mass(membership_matrix(out))) +
         spec.lambda_l2 * l2_penalty(ae);
}

StackGrad analytic_hashing_gradient(const Network& net, const Matrix& x,
                                    const Matrix& labels, Impurity kind) {
  if (net.layers.size() != 1)
    throw std::invalid_argument(
        "analytic_hashing_gradient: single-layer head only; use backprop_gradient");
  if (labels.rows != x.rows || labels.cols < 2)
    throw std::invalid_argument("analytic_hashing_gradient: bad label block");

  const ForwardPass fp = forward(net, x);
  const Matrix& out = fp.out();
  const std::size_t n = x.rows;
  const std::size_t k = out.cols;
  const std::size_t n_classes = labels.cols;
  const std::size_t n_chains = std::size_t{1} << k;

  Matrix d_out(n, k, 0.0);
  std::vector<double> member(n);
  std::vector<double> class_sum(n_classes);
  std::vector<double> pref(k + 1), suf(k + 1);

  for (std::size_t c = 0; c < n_chains; ++c) {
    // Memberships and region statistics for this chain.
    double mass_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double p = 1.0;
      for (std::size_t u = 0; u < k; ++u) {
        const bool bit = (c >> (k - 1 - u)) & 1u;
        p *= bit ? out(i, u) : 1.0 - out(i, u);
      }
      member[i] = p;
      mass_sum += p;
    }
    const double p_chain = mass_sum / double(n);
    if (p_chain < kMassEpsilon) continue;

    std::fill(class_sum.begin(), class_sum.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t klass = 0; klass < n_classes; ++klass)
        class_sum[klass] += labels(i, klass) * member[i];
    double denom = 0.0;  // sum over classes of the numerators
    for (double a : class_sum) denom += a;

    double e_val;
    {
      std::vector<double> f(n_classes);
      for (std::size_t klass = 0; klass < n_classes; ++klass)
        f[klass] = class_sum[klass] / denom;
      e_val = impurity(f, kind);
    }

    for (std::size_t i = 0; i < n; ++i) {
      pref[0] = 1.0;
      for (std::size_t u = 0; u < k; ++u) {
        const bool bit = (c >> (k - 1 - u)) & 1u;
        pref[u + 1] = pref[u] * (bit ? out(i, u) : 1.0 - out(i, u));
      }
      suf[k] = 1.0;
      for (std::size_t u = k; u-- > 0;) {
        const bool bit = (c >> (k - 1 - u)) & 1u;
        suf[u] = suf[u + 1] * (bit ? out(i, u) : 1.0 - out(i, u));
      }
      for (std::size_t u = 0; u < k; ++u) {
        const bool bit = (c >> (k - 1 - u)) & 1u;
        // Signed leave-one-out product: the derivative of this sample's
        // membership w.r.t. unit u.
        const double loo = (bit ? 1.0 : -1.0) * pref[u] * suf[u + 1];
        const double dp_chain = loo / double(n);

        // Quotient-rule derivative of E(f) with f_k = class_sum_k / denom;
        // the derivative of both numerator and denominator is loo-shaped.
        double d_e = 0.0;
        for (std::size_t klass = 0; klass < n_classes; ++klass) {
          const double f_k = class_sum[klass] / denom;
          const double d_num = labels(i, klass) * loo;
          const double d_f =
              (d_num * denom - class_sum[klass] * loo) / (denom * denom);
          d_e += impurity_derivative(kind, f_k) * d_f;
        }
        d_out(i, u) += dp_chain * e_val + p_chain * d_e;
      }
    }
  }

  // Sandwich with the sigmoid derivative and the layer input.
  const DenseLayer& layer = net.layers.front();
  StackGrad grad;
  grad.layers.resize(1);
  grad.layers[0].weights = Matrix(layer.fan_out(), layer.fan_in(), 0.0);
  grad.layers[0].biases.assign(layer.fan_out(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t u = 0; u < k; ++u) {
      const double g = d_out(i, u) * out(i, u) * (1.0 - out(i, u));
      grad.layers[0].biases[u] += g;
      for (std::size_t j = 0; j < layer.fan_in(); ++j)
        grad.layers[0].weights(u, j) += g * x(i, j);
    }
  }
  return grad;
}

}  // namespace ndthash
