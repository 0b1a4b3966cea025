#include "ndthash/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ndthash/chain.hpp"

namespace ndthash {

void TrainConfig::validate() const {
  loss.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train config: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("train config: momentum must be in [0,1)");
  if (max_iters < 1) throw std::invalid_argument("train config: max_iters must be >= 1");
  if (!(rel_tol > 0.0)) throw std::invalid_argument("train config: rel_tol must be > 0");
  if (log_every < 1) throw std::invalid_argument("train config: log_every must be >= 1");
  if (batch.mode == BatchSpec::Mode::Minibatch && batch.size < 1)
    throw std::invalid_argument("train config: minibatch size must be >= 1");
}

void sgd_step(std::vector<double>& params, std::span<const double> grad,
              const TrainConfig& cfg, std::vector<double>& velocity) {
  if (grad.size() != params.size() || velocity.size() != params.size())
    throw std::invalid_argument("sgd_step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] - cfg.learning_rate * grad[i];
    params[i] += velocity[i];
  }
}

double soft_mode_accuracy(const Matrix& head_out, const Matrix& labels) {
  const Matrix memberships = membership_matrix(head_out);
  const RegionStats dist = class_distribution(memberships, labels);

  // Global mode serves regions with no mass.
  std::vector<double> global(labels.cols, 0.0);
  for (std::size_t i = 0; i < labels.rows; ++i)
    for (std::size_t k = 0; k < labels.cols; ++k) global[k] += labels(i, k);
  const auto argmax = [](std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
      if (v[k] > v[best]) best = k;
    return best;
  };
  const std::size_t global_mode = argmax(global);

  std::size_t correct = 0;
  for (std::size_t i = 0; i < head_out.rows; ++i) {
    const std::size_t region = hard_assign_index(head_out.row(i));
    const std::size_t pred = dist.zero_mass[region]
                                 ? global_mode
                                 : argmax(dist.values.row(region));
    std::size_t truth = 0;
    for (std::size_t k = 0; k < labels.cols; ++k)
      if (labels(i, k) == 1.0) truth = k;
    if (pred == truth) ++correct;
  }
  return double(correct) / double(head_out.rows);
}

namespace {

void check_compat(LossKind kind, const Dataset& ds, bool is_autoencoder) {
  switch (kind) {
    case LossKind::Gini:
    case LossKind::InfoGain:
      if (is_autoencoder)
        throw std::invalid_argument("train: classification losses need a plain network");
      if (ds.label_kind != LabelKind::OneHotClass)
        throw std::invalid_argument("train: classification loss needs one-hot class labels");
      break;
    case LossKind::Variance:
      if (is_autoencoder)
        throw std::invalid_argument("train: regression loss needs a plain network");
      if (ds.label_kind != LabelKind::Continuous)
        throw std::invalid_argument("train: regression loss needs continuous targets");
      break;
    case LossKind::UnsupVariance:
      if (is_autoencoder)
        throw std::invalid_argument("train: unsup_variance loss needs a plain network");
      break;
    case LossKind::ReconstructionUnsup:
      if (!is_autoencoder)
        throw std::invalid_argument("train: reconstruction losses need an autoencoder");
      break;
    case LossKind::ReconstructionSemisup:
      if (!is_autoencoder)
        throw std::invalid_argument("train: reconstruction losses need an autoencoder");
      if (ds.label_kind != LabelKind::OneHotClass)
        throw std::invalid_argument("train: semi-supervised loss needs one-hot class labels");
      break;
  }
}

Matrix take_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

// Deterministic without-replacement minibatch scheduler: one shuffle per
// epoch, consumed chunk by chunk.
class BatchScheduler {
 public:
  BatchScheduler(std::size_t n, const BatchSpec& spec)
      : n_(n), spec_(spec), rng_(spec.seed) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = n_;  // force a shuffle on first use
  }

  bool full_batch() const { return spec_.mode == BatchSpec::Mode::Full; }

  std::vector<std::size_t> next() {
    const std::size_t size = std::min(spec_.size, n_);
    if (cursor_ + size > n_) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    std::vector<std::size_t> idx(order_.begin() + cursor_,
                                 order_.begin() + cursor_ + size);
    cursor_ += size;
    return idx;
  }

 private:
  std::size_t n_;
  BatchSpec spec_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

bool classification_like(LossKind kind) {
  return kind == LossKind::Gini || kind == LossKind::InfoGain ||
         kind == LossKind::ReconstructionSemisup;
}

// Shared driver; Model is Network or Autoencoder.
template <typename Model>
TrainHistory train_impl(Model& model, const Dataset& ds, const TrainConfig& cfg,
                        std::span<const std::uint8_t> labeled_mask) {
  constexpr bool is_ae = std::is_same_v<Model, Autoencoder>;
  cfg.validate();
  ds.validate();
  if (ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  check_compat(cfg.loss.kind, ds, is_ae);
  model.validate();

  const bool use_labels = cfg.loss.kind != LossKind::UnsupVariance &&
                          ds.label_kind != LabelKind::None;
  const bool track_acc =
      classification_like(cfg.loss.kind) && ds.label_kind == LabelKind::OneHotClass;

  std::vector<double> params = flatten_params(model);
  std::vector<double> velocity(params.size(), 0.0);
  BatchScheduler scheduler(ds.size(), cfg.batch);

  // freeze_autoencoder: only head parameters (the tail of the flat vector)
  // receive updates.
  std::size_t first_trainable = 0;
  if constexpr (is_ae) {
    if (cfg.freeze_autoencoder)
      first_trainable = param_count(model) - param_count(model.head);
  }

  TrainHistory history;
  auto log_record = [&](std::size_t iter, const GradResult& g) {
    HistoryRecord rec;
    rec.iter = iter;
    rec.loss_total = g.loss_total;
    rec.loss_data = g.loss_data;
    rec.reg_uniform = g.reg_uniform;
    rec.reg_l2 = g.reg_l2;
    rec.mass = g.mass;
    if (track_acc)
      rec.train_acc = soft_mode_accuracy(head_output(model, ds.features), ds.labels);
    history.records.push_back(std::move(rec));
  };

  double prev_loss = 0.0;
  for (std::size_t iter = 0;; ++iter) {
    GradResult g;
    if (scheduler.full_batch()) {
      if constexpr (is_ae) {
        g = backprop_gradient(model, ds.features, use_labels ? &ds.labels : nullptr,
                              cfg.loss, labeled_mask);
      } else {
        g = backprop_gradient(model, ds.features, use_labels ? &ds.labels : nullptr,
                              cfg.loss);
      }
    } else {
      const std::vector<std::size_t> idx = scheduler.next();
      const Matrix bx = take_rows(ds.features, idx);
      const Matrix by = use_labels ? take_rows(ds.labels, idx) : Matrix{};
      if constexpr (is_ae) {
        std::vector<std::uint8_t> bmask;
        if (!labeled_mask.empty()) {
          bmask.reserve(idx.size());
          for (std::size_t i : idx) bmask.push_back(labeled_mask[i]);
        }
        g = backprop_gradient(model, bx, use_labels ? &by : nullptr, cfg.loss, bmask);
      } else {
        g = backprop_gradient(model, bx, use_labels ? &by : nullptr, cfg.loss);
      }
    }

    if (!std::isfinite(g.loss_total)) {
      HistoryRecord last =
          history.records.empty() ? HistoryRecord{} : history.records.back();
      throw DivergedError(iter, std::move(last));
    }

    const bool converged =
        iter > 0 &&
        std::abs(g.loss_total - prev_loss) / std::max(prev_loss, 1e-12) < cfg.rel_tol;
    const bool finished = converged || iter >= cfg.max_iters;
    if (iter % cfg.log_every == 0 || finished) log_record(iter, g);
    if (finished) break;

    prev_loss = g.loss_total;
    for (std::size_t i = 0; i < first_trainable; ++i) g.gradient[i] = 0.0;
    sgd_step(params, g.gradient, cfg, velocity);
    unflatten_params(model, params);
  }
  return history;
}

}  // namespace

TrainHistory train(Network& net, const Dataset& ds, const TrainConfig& cfg) {
  return train_impl(net, ds, cfg, {});
}

TrainHistory train(Autoencoder& ae, const Dataset& ds, const TrainConfig& cfg,
                   std::span<const std::uint8_t> labeled_mask) {
  return train_impl(ae, ds, cfg, labeled_mask);
}

namespace {

struct BlockSpan {
  std::string name;
  std::size_t begin = 0;
  std::size_t end = 0;
};

std::vector<BlockSpan> stack_blocks(const std::vector<DenseLayer>& layers,
                                    const std::string& prefix, std::size_t& offset) {
  std::vector<BlockSpan> blocks;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t nw = layers[l].weights.data.size();
    const std::size_t nb = layers[l].biases.size();
    blocks.push_back({prefix + "layer" + std::to_string(l) + ".weights", offset,
                      offset + nw});
    offset += nw;
    blocks.push_back({prefix + "layer" + std::to_string(l) + ".biases", offset,
                      offset + nb});
    offset += nb;
  }
  return blocks;
}

template <typename Model, typename LossFn>
GradCheckReport gradcheck_impl(Model model, const std::vector<BlockSpan>& blocks,
                               std::vector<double> analytic, LossFn&& loss_at,
                               double h, double tolerance, double corrupt) {
  if (!(h >= 1e-7 && h <= 1e-3))
    throw std::invalid_argument("gradcheck: h must be in [1e-7, 1e-3]");
  if (!(tolerance > 0.0)) throw std::invalid_argument("gradcheck: tolerance must be > 0");
  if (corrupt != 0.0 && !analytic.empty()) analytic[0] += corrupt;

  std::vector<double> params = flatten_params(model);
  std::vector<double> numeric(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    unflatten_params(model, params);
    const double up = loss_at(model);
    params[i] = saved - h;
    unflatten_params(model, params);
    const double down = loss_at(model);
    params[i] = saved;
    numeric[i] = (up - down) / (2.0 * h);
  }
  unflatten_params(model, params);

  GradCheckReport report;
  double err_sum = 0.0;
  for (const BlockSpan& span : blocks) {
    GradCheckBlock block;
    block.name = span.name;
    double block_sum = 0.0;
    for (std::size_t i = span.begin; i < span.end; ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1.0});
      const double err = std::abs(analytic[i] - numeric[i]) / denom;
      block.max_rel_err = std::max(block.max_rel_err, err);
      block_sum += err;
      err_sum += err;
    }
    block.mean_rel_err =
        span.end > span.begin ? block_sum / double(span.end - span.begin) : 0.0;
    block.pass = block.max_rel_err <= tolerance;
    if (block.max_rel_err >= report.max_rel_err) {
      report.max_rel_err = block.max_rel_err;
      report.worst_block = block.name;
    }
    report.pass = report.pass && block.pass;
    report.blocks.push_back(std::move(block));
  }
  report.mean_rel_err = params.empty() ? 0.0 : err_sum / double(params.size());
  return report;
}

}  // namespace

GradCheckReport gradcheck(const Network& net, const Dataset& ds, const LossSpec& spec,
                          double h, double tolerance, double corrupt) {
  check_compat(spec.kind, ds, false);
  const bool use_labels = spec.kind != LossKind::UnsupVariance &&
                          ds.label_kind != LabelKind::None;
  const Matrix* labels = use_labels ? &ds.labels : nullptr;
  GradResult g = backprop_gradient(net, ds.features, labels, spec);
  std::size_t offset = 0;
  const std::vector<BlockSpan> blocks = stack_blocks(net.layers, "", offset);
  return gradcheck_impl(
      net, blocks, std::move(g.gradient),
      [&](const Network& m) { return eval_total_loss(m, ds.features, labels, spec); },
      h, tolerance, corrupt);
}

GradCheckReport gradcheck(const Autoencoder& ae, const Dataset& ds,
                          const LossSpec& spec, double h, double tolerance,
                          double corrupt, std::span<const std::uint8_t> labeled_mask) {
  check_compat(spec.kind, ds, true);
  const bool use_labels = ds.label_kind == LabelKind::OneHotClass &&
                          spec.kind == LossKind::ReconstructionSemisup;
  const Matrix* labels = use_labels ? &ds.labels : nullptr;
  GradResult g = backprop_gradient(ae, ds.features, labels, spec, labeled_mask);
  std::size_t offset = 0;
  std::vector<BlockSpan> blocks = stack_blocks(ae.encoder, "encoder.", offset);
  for (auto& b : stack_blocks(ae.decoder, "decoder.", offset)) blocks.push_back(b);
  for (auto& b : stack_blocks(ae.head.layers, "head.", offset)) blocks.push_back(b);
  return gradcheck_impl(
      ae, blocks, std::move(g.gradient),
      [&](const Autoencoder& m) {
        return eval_total_loss(m, ds.features, labels, spec, labeled_mask);
      },
      h, tolerance, corrupt);
}

}  // namespace ndthash
