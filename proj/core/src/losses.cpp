#include "ndthash/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ndthash {

namespace {

constexpr double kLog2 = 0.6931471805599453;  // ln 2

void check_simplex(std::span<const double> f, const char* what) {
  double sum = 0.0;
  for (double v : f) {
    if (v < -1e-12 || !std::isfinite(v))
      throw std::invalid_argument(std::string(what) + ": not a probability vector");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + ": probabilities must sum to 1");
}

// Effective per-sample weights for classification statistics: the optional
// sample weight times the weight of the sample's class.
std::vector<double> effective_weights(const Matrix& labels,
                                      std::span<const double> class_weights,
                                      std::span<const double> sample_weights) {
  std::vector<double> w(labels.rows, 1.0);
  if (!sample_weights.empty()) {
    if (sample_weights.size() != labels.rows)
      throw std::invalid_argument("loss: sample weight count mismatch");
    for (std::size_t i = 0; i < labels.rows; ++i) w[i] = sample_weights[i];
  }
  if (!class_weights.empty()) {
    if (class_weights.size() != labels.cols)
      throw std::invalid_argument("loss: class weight count mismatch");
    for (double cw : class_weights)
      if (!(cw > 0.0)) throw std::invalid_argument("loss: class weights must be positive");
    for (std::size_t i = 0; i < labels.rows; ++i) {
      double cw = 0.0;
      for (std::size_t k = 0; k < labels.cols; ++k) cw += class_weights[k] * labels(i, k);
      w[i] *= cw;
    }
  }
  return w;
}

// Membership- and weight-weighted variance objective shared by the regression
// and unsupervised losses.
double weighted_region_variance(const Matrix& memberships, const Matrix& values,
                                std::span<const double> weights) {
  if (values.rows != memberships.rows)
    throw std::invalid_argument("variance loss: row count mismatch");
  if (memberships.rows == 0)
    throw std::invalid_argument("variance loss: empty dataset");

  const std::vector<double> mass = chain_mass(memberships, weights);
  const RegionStats means = region_mean(memberships, values, weights);

  double total_weight = 0.0;
  if (weights.empty()) {
    total_weight = double(memberships.rows);
  } else {
    for (double w : weights) total_weight += w;
  }

  double loss = 0.0;
  for (std::size_t c = 0; c < memberships.cols; ++c) {
    if (means.zero_mass[c]) continue;
    double sq = 0.0;
    for (std::size_t i = 0; i < memberships.rows; ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      sq += w * memberships(i, c) * squared_distance(values.row(i), means.values.row(c));
    }
    const double denom = mass[c] * total_weight;  // sum_i w_i m_ic
    loss += mass[c] * (sq / denom);
  }
  return loss;
}

}  // namespace

double gini_impurity(std::span<const double> f) {
  check_simplex(f, "gini_impurity");
  double sq = 0.0;
  for (double v : f) sq += v * v;
  return 1.0 - sq;
}

double entropy(std::span<const double> f) {
  check_simplex(f, "entropy");
  double h = 0.0;
  for (double v : f) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h / kLog2;
}

double impurity(std::span<const double> f, Impurity kind) {
  return kind == Impurity::Gini ? gini_impurity(f) : entropy(f);
}

double binary_entropy(double pos, double neg) {
  const double total = pos + neg;
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  if (pos > 0.0) h -= (pos / total) * std::log(pos / total);
  if (neg > 0.0) h -= (neg / total) * std::log(neg / total);
  return h / kLog2;
}

NodeSplitStats node_split_stats(std::span<const double> phi,
                                std::span<const double> labels,
                                std::span<const double> weights) {
  if (phi.size() != labels.size())
    throw std::invalid_argument("node_split_stats: phi/label size mismatch");
  if (!weights.empty() && weights.size() != phi.size())
    throw std::invalid_argument("node_split_stats: weight size mismatch");
  NodeSplitStats s;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0)
      throw std::invalid_argument("node_split_stats: labels must be binary");
    if (!(phi[i] >= 0.0 && phi[i] <= 1.0))
      throw std::invalid_argument("node_split_stats: phi must be in [0,1]");
    const double w = weights.empty() ? 1.0 : weights[i];
    s.pos += w * labels[i];
    s.neg += w * (1.0 - labels[i]);
    s.n_left += w * phi[i];
    s.pos_left += w * phi[i] * labels[i];
  }
  s.n_right = s.total() - s.n_left;
  s.neg_left = s.n_left - s.pos_left;
  s.pos_right = s.pos - s.pos_left;
  s.neg_right = s.neg - s.neg_left;
  return s;
}

double node_gini_loss(const NodeSplitStats& s) {
  const double total = s.total();
  if (!(total > 0.0)) return 0.0;
  double loss = 0.0;
  if (s.n_left / total >= kMassEpsilon) {
    const double pl = s.pos_left / s.n_left;
    const double nl = s.neg_left / s.n_left;
    loss += (s.n_left / total) * (1.0 - pl * pl - nl * nl);
  }
  if (s.n_right / total >= kMassEpsilon) {
    const double pr = s.pos_right / s.n_right;
    const double nr = s.neg_right / s.n_right;
    loss += (s.n_right / total) * (1.0 - pr * pr - nr * nr);
  }
  return loss;
}

double node_info_gain(const NodeSplitStats& s) {
  const double total = s.total();
  if (!(total > 0.0)) return 0.0;
  double children = 0.0;
  if (s.n_left / total >= kMassEpsilon)
    children += (s.n_left / total) * binary_entropy(s.pos_left, s.neg_left);
  if (s.n_right / total >= kMassEpsilon)
    children += (s.n_right / total) * binary_entropy(s.pos_right, s.neg_right);
  double ig = binary_entropy(s.pos, s.neg) - children;
  if (ig < 0.0 && ig > -1e-9) ig = 0.0;  // round-off guard
  return ig;
}

double node_variance_loss(std::span<const double> phi,
                          std::span<const double> targets,
                          std::span<const double> weights) {
  if (phi.size() != targets.size())
    throw std::invalid_argument("node_variance_loss: size mismatch");
  if (!all_finite(targets))
    throw std::invalid_argument("node_variance_loss: non-finite target");
  double w_left = 0.0, w_right = 0.0, w_total = 0.0;
  double sum_left = 0.0, sum_right = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    if (!(phi[i] >= 0.0 && phi[i] <= 1.0))
      throw std::invalid_argument("node_variance_loss: phi must be in [0,1]");
    const double w = weights.empty() ? 1.0 : weights[i];
    w_total += w;
    w_left += w * phi[i];
    w_right += w * (1.0 - phi[i]);
    sum_left += w * phi[i] * targets[i];
    sum_right += w * (1.0 - phi[i]) * targets[i];
  }
  double loss = 0.0;
  if (w_total > 0.0 && w_left / w_total >= kMassEpsilon) {
    const double mean_left = sum_left / w_left;
    double v = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      const double d = targets[i] - mean_left;
      v += w * phi[i] * d * d;
    }
    loss += v / w_left;
  }
  if (w_total > 0.0 && w_right / w_total >= kMassEpsilon) {
    const double mean_right = sum_right / w_right;
    double v = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) {
      const double w = weights.empty() ? 1.0 : weights[i];
      const double d = targets[i] - mean_right;
      v += w * (1.0 - phi[i]) * d * d;
    }
    loss += v / w_right;
  }
  return loss;
}

void LossSpec::validate() const {
  if (!(lambda_uniform >= 0.0) || !std::isfinite(lambda_uniform))
    throw std::invalid_argument("loss spec: lambda_uniform must be finite and >= 0");
  if (!(lambda_l2 >= 0.0) || !std::isfinite(lambda_l2))
    throw std::invalid_argument("loss spec: lambda_l2 must be finite and >= 0");
  for (double w : class_weights)
    if (!(w > 0.0) || !std::isfinite(w))
      throw std::invalid_argument("loss spec: class weights must be finite and > 0");
}

double hashing_classification_loss(const Matrix& memberships, const Matrix& labels,
                                   Impurity kind,
                                   std::span<const double> class_weights,
                                   std::span<const double> sample_weights) {
  if (labels.cols < 2)
    throw std::invalid_argument("hashing_classification_loss: need at least 2 classes");
  const std::vector<double> w = effective_weights(labels, class_weights, sample_weights);
  const std::vector<double> mass = chain_mass(memberships, w);
  const RegionStats dist = class_distribution(memberships, labels, w);
  double loss = 0.0;
  for (std::size_t c = 0; c < memberships.cols; ++c) {
    if (dist.zero_mass[c]) continue;
    loss += mass[c] * impurity(dist.values.row(c), kind);
  }
  return loss;
}

double hashing_regression_loss(const Matrix& memberships, const Matrix& targets,
                               std::span<const double> sample_weights) {
  if (targets.empty())
    throw std::invalid_argument("hashing_regression_loss: targets absent");
  return weighted_region_variance(memberships, targets, sample_weights);
}

double unsupervised_variance_loss(const Matrix& memberships, const Matrix& values,
                                  std::span<const double> sample_weights) {
  return weighted_region_variance(memberships, values, sample_weights);
}

namespace {

double reconstruction_mse(const Matrix& reconstruction, const Matrix& x) {
  double sq = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i)
    sq += squared_distance(reconstruction.row(i), x.row(i));
  return sq / double(x.rows);
}

}  // namespace

CompositeLoss composite_unsupervised_loss(const Autoencoder& ae, const Matrix& x) {
  const AutoencoderPass pass = autoencoder_forward(ae, x);
  CompositeLoss loss;
  loss.reconstruction = reconstruction_mse(pass.reconstruction(), x);
  loss.head = unsupervised_variance_loss(membership_matrix(pass.head_out()),
                                         pass.latent());
  loss.total = loss.reconstruction + loss.head;
  return loss;
}

CompositeLoss composite_semisup_loss(const Autoencoder& ae, const Matrix& x,
                                     const Matrix* labels,
                                     std::span<const std::uint8_t> labeled_mask,
                                     Impurity kind,
                                     std::span<const double> class_weights) {
  if (!labeled_mask.empty() && labeled_mask.size() != x.rows)
    throw std::invalid_argument("composite_semisup_loss: mask size mismatch");
  const AutoencoderPass pass = autoencoder_forward(ae, x);
  CompositeLoss loss;
  loss.reconstruction = reconstruction_mse(pass.reconstruction(), x);

  std::size_t labeled = 0;
  std::vector<double> sample_weights(x.rows, 1.0);
  if (!labeled_mask.empty()) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      sample_weights[i] = labeled_mask[i] ? 1.0 : 0.0;
      labeled += labeled_mask[i] ? 1 : 0;
    }
  } else {
    labeled = labels ? x.rows : 0;
  }

  if (labels == nullptr || labeled == 0) {
    loss.head = 0.0;
    loss.no_labeled_rows = true;
  } else {
    loss.head = hashing_classification_loss(membership_matrix(pass.head_out()),
                                            *labels, kind, class_weights,
                                            sample_weights);
  }
  loss.total = loss.reconstruction + loss.head;
  return loss;
}

double uniformity_regularizer(std::span<const double> mass) {
  double sum = 0.0;
  for (double m : mass) sum += m;
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument("uniformity_regularizer: mass must sum to 1");
  const double uniform = 1.0 / double(mass.size());
  double reg = 0.0;
  for (double m : mass) {
    const double d = m - uniform;
    reg += d * d;
  }
  return reg;
}

namespace {

double stack_l2(const std::vector<DenseLayer>& layers) {
  double sq = 0.0;
  for (const DenseLayer& layer : layers)
    for (double w : layer.weights.data) sq += w * w;
  return sq;
}

}  // namespace

double l2_penalty(const Network& net) { return stack_l2(net.layers); }

double l2_penalty(const Autoencoder& ae) {
  return stack_l2(ae.encoder) + stack_l2(ae.decoder) + stack_l2(ae.head.layers);
}

namespace {

void check_leaf_memberships(const Matrix& leaf_memberships) {
  for (std::size_t i = 0; i < leaf_memberships.rows; ++i) {
    double sum = 0.0;
    for (double v : leaf_memberships.row(i)) {
      if (v < -1e-12)
        throw std::invalid_argument("tree loss: negative leaf membership");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("tree loss: leaf memberships must sum to 1");
  }
}

}  // namespace

double global_tree_gini(const Matrix& leaf_memberships, const Matrix& labels) {
  check_leaf_memberships(leaf_memberships);
  const std::vector<double> mass = chain_mass(leaf_memberships);
  const RegionStats dist = class_distribution(leaf_memberships, labels);
  double loss = 0.0;
  for (std::size_t c = 0; c < leaf_memberships.cols; ++c) {
    if (dist.zero_mass[c]) continue;
    loss += mass[c] * gini_impurity(dist.values.row(c));
  }
  return loss;
}

double global_tree_ig(const Matrix& leaf_memberships, const Matrix& labels) {
  check_leaf_memberships(leaf_memberships);
  const std::vector<double> mass = chain_mass(leaf_memberships);
  const RegionStats dist = class_distribution(leaf_memberships, labels);
  std::vector<double> root(labels.cols, 0.0);
  for (std::size_t i = 0; i < labels.rows; ++i)
    for (std::size_t k = 0; k < labels.cols; ++k) root[k] += labels(i, k);
  for (double& v : root) v /= double(labels.rows);
  double children = 0.0;
  for (std::size_t c = 0; c < leaf_memberships.cols; ++c) {
    if (dist.zero_mass[c]) continue;
    children += mass[c] * entropy(dist.values.row(c));
  }
  double ig = entropy(root) - children;
  if (ig < 0.0 && ig > -1e-9) ig = 0.0;
  return ig;
}

}  // namespace ndthash
