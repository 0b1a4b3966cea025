#include "ndthash/tree.hpp"

#include <cmath>
#include <stdexcept>

#include "gradient_internal.hpp"

namespace ndthash {

namespace {

constexpr double kLog2 = 0.6931471805599453;
constexpr double kImpurityFloor = 1e-6;

void count_leaves(const NDTNode* node, std::size_t& count) {
  if (node->is_leaf()) {
    ++count;
    return;
  }
  count_leaves(node->left.get(), count);
  count_leaves(node->right.get(), count);
}

void collect_leaves(const NDTNode* node, std::vector<const NDTNode*>& leaves) {
  if (node->is_leaf()) {
    leaves.push_back(node);
    return;
  }
  collect_leaves(node->left.get(), leaves);
  collect_leaves(node->right.get(), leaves);
}

void validate_node(const NDTNode* node, std::size_t input_dim, std::size_t value_dim) {
  if (node->is_leaf()) {
    if (node->right != nullptr)
      throw std::invalid_argument("tree: node with a single child");
    if (node->leaf_value.size() != value_dim)
      throw std::invalid_argument("tree: leaf value width mismatch");
    return;
  }
  if (node->right == nullptr)
    throw std::invalid_argument("tree: node with a single child");
  node->split_net.validate();
  if (node->split_net.head_width() != 1)
    throw std::invalid_argument("tree: split networks must have one output unit");
  if (node->split_net.input_dim() != input_dim)
    throw std::invalid_argument("tree: split network input dim mismatch");
  validate_node(node->left.get(), input_dim, value_dim);
  validate_node(node->right.get(), input_dim, value_dim);
}

}  // namespace

std::size_t NDTree::leaf_count() const {
  std::size_t count = 0;
  count_leaves(root.get(), count);
  return count;
}

std::vector<const NDTNode*> NDTree::leaf_nodes() const {
  std::vector<const NDTNode*> leaves;
  collect_leaves(root.get(), leaves);
  return leaves;
}

void NDTree::validate() const {
  if (!root) throw std::invalid_argument("tree: no root");
  if (value_dim == 0) throw std::invalid_argument("tree: zero value width");
  validate_node(root.get(), input_dim, value_dim);
}

namespace {

// Routing probability column of one node on a batch.
std::vector<double> node_phi(const Network& net, const Matrix& x) {
  const Matrix out = head_output(net, x);
  std::vector<double> phi(out.rows);
  for (std::size_t i = 0; i < out.rows; ++i) phi[i] = out(i, 0);
  return phi;
}

void fill_memberships(const NDTNode* node, const Matrix& x,
                      const std::vector<double>& path, Matrix& out,
                      std::size_t& leaf_cursor) {
  if (node->is_leaf()) {
    for (std::size_t i = 0; i < x.rows; ++i) out(i, leaf_cursor) = path[i];
    ++leaf_cursor;
    return;
  }
  const std::vector<double> phi = node_phi(node->split_net, x);
  std::vector<double> child(path.size());
  for (std::size_t i = 0; i < path.size(); ++i) child[i] = path[i] * phi[i];
  fill_memberships(node->left.get(), x, child, out, leaf_cursor);
  for (std::size_t i = 0; i < path.size(); ++i) child[i] = path[i] * (1.0 - phi[i]);
  fill_memberships(node->right.get(), x, child, out, leaf_cursor);
}

}  // namespace

Matrix leaf_memberships(const NDTree& tree, const Matrix& x) {
  tree.validate();
  if (x.cols != tree.input_dim)
    throw std::invalid_argument("leaf_memberships: input dimension mismatch");
  Matrix out(x.rows, tree.leaf_count(), 0.0);
  std::size_t cursor = 0;
  fill_memberships(tree.root.get(), x, std::vector<double>(x.rows, 1.0), out, cursor);
  return out;
}

void GrowthConfig::validate() const {
  node_train.validate();
  if (!(min_mass >= 0.0)) throw std::invalid_argument("growth config: min_mass < 0");
  switch (node_train.loss.kind) {
    case LossKind::Gini:
    case LossKind::InfoGain:
    case LossKind::Variance:
      break;
    default:
      throw std::invalid_argument(
          "growth config: node loss must be gini, info_gain or variance");
  }
}

namespace {

struct NodeProblem {
  const Matrix& x;
  std::span<const double> y;  // binary labels or scalar targets
  std::span<const double> weights;
  LossKind kind;
};

// Loss and d(loss)/d(phi) of one node's local objective, with weighted
// samples. Children whose mass share falls below kMassEpsilon are dropped
// from both the loss and the gradient.
double node_loss_and_grad(const NodeProblem& p, std::span<const double> phi,
                          std::vector<double>& dphi) {
  const std::size_t n = phi.size();
  dphi.assign(n, 0.0);
  const auto w = [&](std::size_t i) {
    return p.weights.empty() ? 1.0 : p.weights[i];
  };

  if (p.kind == LossKind::Variance) {
    double w_left = 0.0, w_right = 0.0, w_total = 0.0;
    double sum_left = 0.0, sum_right = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w_total += w(i);
      w_left += w(i) * phi[i];
      w_right += w(i) * (1.0 - phi[i]);
      sum_left += w(i) * phi[i] * p.y[i];
      sum_right += w(i) * (1.0 - phi[i]) * p.y[i];
    }
    const bool left_on = w_left / w_total >= kMassEpsilon;
    const bool right_on = w_right / w_total >= kMassEpsilon;
    const double mean_left = left_on ? sum_left / w_left : 0.0;
    const double mean_right = right_on ? sum_right / w_right : 0.0;
    double v_left = 0.0, v_right = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dl = p.y[i] - mean_left;
      const double dr = p.y[i] - mean_right;
      if (left_on) v_left += w(i) * phi[i] * dl * dl;
      if (right_on) v_right += w(i) * (1.0 - phi[i]) * dr * dr;
    }
    if (left_on) v_left /= w_left;
    if (right_on) v_right /= w_right;
    for (std::size_t i = 0; i < n; ++i) {
      const double dl = p.y[i] - mean_left;
      const double dr = p.y[i] - mean_right;
      if (left_on) dphi[i] += w(i) * (dl * dl - v_left) / w_left;
      if (right_on) dphi[i] -= w(i) * (dr * dr - v_right) / w_right;
    }
    return v_left + v_right;
  }

  const NodeSplitStats s = node_split_stats(phi, p.y, p.weights);
  const double total = s.total();
  const bool left_on = s.n_left / total >= kMassEpsilon;
  const bool right_on = s.n_right / total >= kMassEpsilon;

  if (p.kind == LossKind::Gini) {
    for (std::size_t i = 0; i < n; ++i) {
      double bracket = 0.0;
      if (left_on) {
        bracket += 1.0 -
                   2.0 * (s.pos_left * p.y[i] + s.neg_left * (1.0 - p.y[i])) / s.n_left +
                   (s.pos_left * s.pos_left + s.neg_left * s.neg_left) /
                       (s.n_left * s.n_left);
      }
      if (right_on) {
        bracket += -1.0 +
                   2.0 * (s.pos_right * p.y[i] + s.neg_right * (1.0 - p.y[i])) /
                       s.n_right -
                   (s.pos_right * s.pos_right + s.neg_right * s.neg_right) /
                       (s.n_right * s.n_right);
      }
      dphi[i] = w(i) / total * bracket;
    }
    return node_gini_loss(s);
  }

  // Information gain: the parent entropy is constant, so the node minimizes
  // the weighted child entropies.
  const auto safe_log = [](double a) { return std::log(std::max(a, 1e-300)); };
  for (std::size_t i = 0; i < n; ++i) {
    double bracket = 0.0;
    if (left_on) {
      bracket += p.y[i] * (safe_log(s.n_left) - safe_log(s.pos_left)) +
                 (1.0 - p.y[i]) * (safe_log(s.n_left) - safe_log(s.neg_left));
    }
    if (right_on) {
      bracket -= p.y[i] * (safe_log(s.n_right) - safe_log(s.pos_right)) +
                 (1.0 - p.y[i]) * (safe_log(s.n_right) - safe_log(s.neg_right));
    }
    dphi[i] = w(i) / (total * kLog2) * bracket;
  }
  double children = 0.0;
  if (left_on)
    children += (s.n_left / total) * binary_entropy(s.pos_left, s.neg_left);
  if (right_on)
    children += (s.n_right / total) * binary_entropy(s.pos_right, s.neg_right);
  return children;
}

// Local gradient descent on one split network.
void train_node(Network& net, const NodeProblem& p, const TrainConfig& cfg) {
  std::vector<double> params = flatten_params(net);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> dphi;
  double prev_loss = 0.0;
  const std::size_t n = p.x.rows;

  for (std::size_t iter = 0;; ++iter) {
    const ForwardPass fp = forward(net, p.x);
    const Matrix& out = fp.out();
    std::vector<double> phi(n);
    for (std::size_t i = 0; i < n; ++i) phi[i] = out(i, 0);

    double loss = node_loss_and_grad(p, phi, dphi);

    // Optional regularizers from the node's loss spec: balance of the soft
    // split (the k=1 uniformity term) and the L2 penalty.
    if (cfg.loss.lambda_uniform > 0.0) {
      double p_left = 0.0;
      for (double v : phi) p_left += v;
      p_left /= double(n);
      loss += cfg.loss.lambda_uniform * 2.0 * (p_left - 0.5) * (p_left - 0.5);
      const double dr = cfg.loss.lambda_uniform * 4.0 * (p_left - 0.5) / double(n);
      for (double& d : dphi) d += dr;
    }
    if (cfg.loss.lambda_l2 > 0.0) loss += cfg.loss.lambda_l2 * l2_penalty(net);

    if (!std::isfinite(loss)) throw DivergedError(iter, {});
    const bool converged =
        iter > 0 &&
        std::abs(loss - prev_loss) / std::max(prev_loss, 1e-12) < cfg.rel_tol;
    if (converged || iter >= cfg.max_iters) break;
    prev_loss = loss;

    Matrix delta(n, 1);
    for (std::size_t i = 0; i < n; ++i) delta(i, 0) = dphi[i];
    StackGrad grad = internal::backprop_stack(net.layers, fp, std::move(delta), nullptr);
    internal::add_l2_gradient(net.layers, grad, cfg.loss.lambda_l2);
    sgd_step(params, flatten_grad(grad), cfg, velocity);
    unflatten_params(net, params);
  }
}

struct GrowContext {
  const Matrix& x;
  std::vector<double> y;  // binary class indices or scalar targets
  const Matrix& labels;   // original label block (leaf values)
  const GrowthConfig& cfg;
  bool classification = false;
};

std::vector<double> weighted_leaf_value(const GrowContext& ctx,
                                        std::span<const double> weights) {
  std::vector<double> value(ctx.labels.cols, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    total += weights[i];
    for (std::size_t k = 0; k < ctx.labels.cols; ++k)
      value[k] += weights[i] * ctx.labels(i, k);
  }
  if (total > 0.0)
    for (double& v : value) v /= total;
  return value;
}

double node_impurity(const GrowContext& ctx, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) return 0.0;
  if (ctx.classification) {
    double pos = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) pos += weights[i] * ctx.y[i];
    const double p = pos / total;
    if (ctx.cfg.node_train.loss.kind == LossKind::InfoGain)
      return binary_entropy(pos, total - pos);
    return 1.0 - p * p - (1.0 - p) * (1.0 - p);
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) mean += weights[i] * ctx.y[i];
  mean /= total;
  double var = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double d = ctx.y[i] - mean;
    var += weights[i] * d * d;
  }
  return var / total;
}

std::unique_ptr<NDTNode> grow_node(const GrowContext& ctx,
                                   std::vector<double> weights, std::size_t depth,
                                   std::size_t index) {
  auto node = std::make_unique<NDTNode>();
  node->depth = depth;
  node->index = index;
  double total = 0.0;
  for (double w : weights) total += w;
  node->mass = total / double(weights.size());

  const bool stop = depth >= ctx.cfg.max_depth || node->mass < ctx.cfg.min_mass ||
                    node_impurity(ctx, weights) < kImpurityFloor;
  if (stop) {
    node->leaf_value = weighted_leaf_value(ctx, weights);
    return node;
  }

  std::vector<std::size_t> dims;
  dims.push_back(ctx.x.cols);
  for (std::size_t h : ctx.cfg.node_hidden_dims) dims.push_back(h);
  dims.push_back(1);
  const std::uint64_t node_uid = (std::uint64_t{1} << depth) + index;
  node->split_net =
      init_network(dims, ctx.cfg.seed + 0x9e3779b97f4a7c15ULL * node_uid);

  NodeProblem problem{ctx.x, ctx.y, weights, ctx.cfg.node_train.loss.kind};
  train_node(node->split_net, problem, ctx.cfg.node_train);

  const std::vector<double> phi = node_phi(node->split_net, ctx.x);
  std::vector<double> w_left(weights.size()), w_right(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (ctx.cfg.soft_routing) {
      w_left[i] = weights[i] * phi[i];
      w_right[i] = weights[i] * (1.0 - phi[i]);
    } else {
      w_left[i] = phi[i] >= 0.5 ? weights[i] : 0.0;
      w_right[i] = phi[i] >= 0.5 ? 0.0 : weights[i];
    }
  }
  node->left = grow_node(ctx, std::move(w_left), depth + 1, 2 * index);
  node->right = grow_node(ctx, std::move(w_right), depth + 1, 2 * index + 1);
  return node;
}

}  // namespace

NDTree grow_greedy(const Dataset& ds, const GrowthConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (ds.size() == 0) throw std::invalid_argument("grow_greedy: empty dataset");

  GrowContext ctx{ds.features, {}, ds.labels, cfg,
                  cfg.node_train.loss.kind != LossKind::Variance};
  if (ctx.classification) {
    if (ds.label_kind != LabelKind::OneHotClass)
      throw std::invalid_argument("grow_greedy: classification growth needs class labels");
    if (ds.num_classes() != 2)
      throw std::invalid_argument(
          "grow_greedy: node losses are binary; use the hashing head for C > 2");
    ctx.y.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) ctx.y[i] = double(ds.class_of(i));
  } else {
    if (ds.label_kind != LabelKind::Continuous || ds.labels.cols != 1)
      throw std::invalid_argument("grow_greedy: variance growth needs scalar targets");
    ctx.y.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) ctx.y[i] = ds.labels(i, 0);
  }

  NDTree tree;
  tree.policy = ctx.classification ? PredictionPolicy::Mode : PredictionPolicy::Mean;
  tree.input_dim = ds.dims();
  tree.value_dim = ds.labels.cols;
  tree.root = grow_node(ctx, std::vector<double>(ds.size(), 1.0), 0, 0);
  tree.validate();
  return tree;
}

namespace {

void collect_internal(NDTNode* node, std::vector<NDTNode*>& out) {
  if (node->is_leaf()) return;
  out.push_back(node);
  collect_internal(node->left.get(), out);
  collect_internal(node->right.get(), out);
}

std::vector<NDTNode*> internal_nodes(NDTree& tree) {
  std::vector<NDTNode*> nodes;
  collect_internal(tree.root.get(), nodes);
  return nodes;
}

// Per-sample aggregate used by the path-product chain rule: for each node,
// S = delta at a leaf and phi*S_left + (1-phi)*S_right inside the tree.
struct FineTuneWork {
  Matrix delta_leaf;                       // n x leaves
  std::vector<std::vector<double>> phi;    // per internal node
  std::vector<const NDTNode*> leaf_order;
};

// dL/dphi for every internal node, assembled bottom-up then scaled by the
// root-to-node prefix product on the way down.
void node_phi_gradients(const NDTNode* node, const FineTuneWork& work,
                        std::vector<double> prefix, std::size_t& leaf_cursor,
                        std::size_t& internal_cursor,
                        std::vector<std::vector<double>>& subtree,
                        std::vector<std::vector<double>>& dphi) {
  if (node->is_leaf()) {
    std::vector<double> s(work.delta_leaf.rows);
    for (std::size_t i = 0; i < work.delta_leaf.rows; ++i)
      s[i] = work.delta_leaf(i, leaf_cursor);
    subtree.push_back(std::move(s));
    ++leaf_cursor;
    return;
  }
  const std::size_t me = internal_cursor++;
  const std::vector<double>& phi = work.phi[me];
  const std::size_t n = phi.size();

  std::vector<double> child_prefix(n);
  for (std::size_t i = 0; i < n; ++i) child_prefix[i] = prefix[i] * phi[i];
  node_phi_gradients(node->left.get(), work, child_prefix, leaf_cursor,
                     internal_cursor, subtree, dphi);
  std::vector<double> s_left = std::move(subtree.back());
  subtree.pop_back();

  for (std::size_t i = 0; i < n; ++i) child_prefix[i] = prefix[i] * (1.0 - phi[i]);
  node_phi_gradients(node->right.get(), work, child_prefix, leaf_cursor,
                     internal_cursor, subtree, dphi);
  std::vector<double> s_right = std::move(subtree.back());
  subtree.pop_back();

  dphi[me].resize(n);
  for (std::size_t i = 0; i < n; ++i)
    dphi[me][i] = prefix[i] * (s_left[i] - s_right[i]);

  std::vector<double> s_me(n);
  for (std::size_t i = 0; i < n; ++i)
    s_me[i] = phi[i] * s_left[i] + (1.0 - phi[i]) * s_right[i];
  subtree.push_back(std::move(s_me));
}

struct TreeEval {
  double objective = 0.0;          // minimized scalar (data + regularizers)
  double data_loss = 0.0;
  double reg_uniform = 0.0;
  std::vector<double> leaf_mass;
  std::vector<double> gradient;    // pre-order node parameters
};

TreeEval tree_loss_and_grad(NDTree& tree, const Matrix& x, const Matrix& labels,
                            const LossSpec& spec, bool want_gradient) {
  const Impurity kind = spec.impurity();
  std::vector<NDTNode*> nodes = internal_nodes(tree);

  FineTuneWork work;
  work.leaf_order = tree.leaf_nodes();
  std::vector<ForwardPass> passes(nodes.size());
  work.phi.resize(nodes.size());
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    passes[v] = forward(nodes[v]->split_net, x);
    const Matrix& out = passes[v].out();
    work.phi[v].resize(out.rows);
    for (std::size_t i = 0; i < out.rows; ++i) work.phi[v][i] = out(i, 0);
  }

  const Matrix memberships = leaf_memberships(tree, x);
  const std::vector<double> mass = chain_mass(memberships);
  const RegionStats dist = class_distribution(memberships, labels);

  TreeEval eval;
  eval.leaf_mass = mass;
  eval.reg_uniform = uniformity_regularizer(mass);
  for (std::size_t l = 0; l < memberships.cols; ++l) {
    if (dist.zero_mass[l]) continue;
    eval.data_loss += mass[l] * impurity(dist.values.row(l), kind);
  }
  eval.objective = eval.data_loss + spec.lambda_uniform * eval.reg_uniform;
  if (spec.lambda_l2 > 0.0) {
    double l2 = 0.0;
    for (NDTNode* node : nodes) l2 += l2_penalty(node->split_net);
    eval.objective += spec.lambda_l2 * l2;
  }
  if (!want_gradient) return eval;

  // delta(i, leaf) = d(data + uniformity)/d(membership of sample i in leaf).
  const std::size_t n = x.rows;
  const double uniform = 1.0 / double(memberships.cols);
  work.delta_leaf = Matrix(n, memberships.cols, 0.0);
  for (std::size_t l = 0; l < memberships.cols; ++l) {
    const double unif_term =
        spec.lambda_uniform * 2.0 * (mass[l] - uniform) / double(n);
    if (dist.zero_mass[l]) {
      for (std::size_t i = 0; i < n; ++i) work.delta_leaf(i, l) = unif_term;
      continue;
    }
    const double e_val = impurity(dist.values.row(l), kind);
    for (std::size_t i = 0; i < n; ++i) {
      double bracket = e_val;
      for (std::size_t k = 0; k < labels.cols; ++k)
        bracket += internal::impurity_derivative(kind, dist.values(l, k)) *
                   (labels(i, k) - dist.values(l, k));
      work.delta_leaf(i, l) = bracket / double(n) + unif_term;
    }
  }

  std::vector<std::vector<double>> dphi(nodes.size());
  std::vector<std::vector<double>> subtree;
  std::size_t leaf_cursor = 0, internal_cursor = 0;
  node_phi_gradients(tree.root.get(), work, std::vector<double>(n, 1.0), leaf_cursor,
                     internal_cursor, subtree, dphi);

  for (std::size_t v = 0; v < nodes.size(); ++v) {
    Matrix delta(n, 1);
    for (std::size_t i = 0; i < n; ++i) delta(i, 0) = dphi[v][i];
    StackGrad grad = internal::backprop_stack(nodes[v]->split_net.layers, passes[v],
                                              std::move(delta), nullptr);
    internal::add_l2_gradient(nodes[v]->split_net.layers, grad, spec.lambda_l2);
    const std::vector<double> flat = flatten_grad(grad);
    eval.gradient.insert(eval.gradient.end(), flat.begin(), flat.end());
  }
  return eval;
}

double hard_path_accuracy(const NDTree& tree, const Dataset& ds) {
  const std::vector<std::size_t> pred =
      predict_class(tree, ds.features, TreePredict::HardPath);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (pred[i] == ds.class_of(i)) ++correct;
  return double(correct) / double(ds.size());
}

}  // namespace

double tree_objective(const NDTree& tree, const Dataset& ds, LossKind kind) {
  LossSpec spec;
  spec.kind = kind;
  return tree_loss_and_grad(const_cast<NDTree&>(tree), ds.features, ds.labels, spec,
                            false)
      .objective;
}

std::pair<double, std::vector<double>> tree_objective_with_gradient(
    const NDTree& tree, const Dataset& ds, LossKind kind) {
  LossSpec spec;
  spec.kind = kind;
  TreeEval eval = tree_loss_and_grad(const_cast<NDTree&>(tree), ds.features,
                                     ds.labels, spec, true);
  return {eval.objective, std::move(eval.gradient)};
}

TrainHistory global_fine_tune(NDTree& tree, const Dataset& ds,
                              const TrainConfig& cfg) {
  cfg.validate();
  tree.validate();
  ds.validate();
  if (tree.policy != PredictionPolicy::Mode)
    throw std::invalid_argument("global_fine_tune: tree-level losses are classification only");
  if (ds.label_kind != LabelKind::OneHotClass || ds.labels.cols != tree.value_dim)
    throw std::invalid_argument("global_fine_tune: dataset labels do not match the tree");
  if (cfg.loss.kind != LossKind::Gini && cfg.loss.kind != LossKind::InfoGain)
    throw std::invalid_argument("global_fine_tune: loss must be gini or info_gain");

  std::vector<double> params = tree_flatten_params(tree);
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> best_params = params;
  double best_objective = 0.0;

  TrainHistory history;
  auto log_record = [&](std::size_t iter, const TreeEval& eval) {
    HistoryRecord rec;
    rec.iter = iter;
    rec.loss_total = eval.objective;
    rec.loss_data = eval.data_loss;
    rec.reg_uniform = eval.reg_uniform;
    rec.mass = eval.leaf_mass;
    rec.train_acc = hard_path_accuracy(tree, ds);
    history.records.push_back(std::move(rec));
  };

  double prev = 0.0;
  for (std::size_t iter = 0;; ++iter) {
    TreeEval eval = tree_loss_and_grad(tree, ds.features, ds.labels, cfg.loss, true);
    if (!std::isfinite(eval.objective))
      throw DivergedError(iter, history.records.empty() ? HistoryRecord{}
                                                        : history.records.back());
    if (iter == 0 || eval.objective < best_objective) {
      best_objective = eval.objective;
      best_params = params;
    }
    const bool converged =
        iter > 0 && std::abs(eval.objective - prev) / std::max(prev, 1e-12) < cfg.rel_tol;
    const bool finished = converged || iter >= cfg.max_iters;
    if (iter % cfg.log_every == 0 || finished) log_record(iter, eval);
    if (finished) break;
    prev = eval.objective;
    sgd_step(params, eval.gradient, cfg, velocity);
    tree_unflatten_params(tree, params);
  }

  // Keep the best parameters seen, so fine-tuning never worsens the tree.
  tree_unflatten_params(tree, best_params);
  const TreeEval final_eval =
      tree_loss_and_grad(tree, ds.features, ds.labels, cfg.loss, false);
  if (history.records.empty() ||
      final_eval.objective != history.records.back().loss_total) {
    HistoryRecord rec;
    rec.iter = history.records.empty() ? 0 : history.records.back().iter;
    rec.loss_total = final_eval.objective;
    rec.loss_data = final_eval.data_loss;
    rec.reg_uniform = final_eval.reg_uniform;
    rec.mass = final_eval.leaf_mass;
    rec.train_acc = hard_path_accuracy(tree, ds);
    history.records.push_back(std::move(rec));
  }
  return history;
}

namespace {

const NDTNode* descend_hard(const NDTNode* node, std::span<const double> row,
                            std::size_t dim) {
  while (!node->is_leaf()) {
    Matrix x(1, dim);
    std::copy(row.begin(), row.end(), x.row(0).begin());
    const Matrix out = head_output(node->split_net, x);
    node = out(0, 0) >= 0.5 ? node->left.get() : node->right.get();
  }
  return node;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace

Matrix predict_value(const NDTree& tree, const Matrix& x, TreePredict mode) {
  tree.validate();
  if (x.cols != tree.input_dim)
    throw std::invalid_argument("predict: input dimension mismatch");
  Matrix out(x.rows, tree.value_dim, 0.0);
  if (mode == TreePredict::HardPath) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      const NDTNode* leaf = descend_hard(tree.root.get(), x.row(i), tree.input_dim);
      std::copy(leaf->leaf_value.begin(), leaf->leaf_value.end(), out.row(i).begin());
    }
    return out;
  }
  const Matrix memberships = leaf_memberships(tree, x);
  const std::vector<const NDTNode*> leaves = tree.leaf_nodes();
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t l = 0; l < leaves.size(); ++l)
      for (std::size_t k = 0; k < tree.value_dim; ++k)
        out(i, k) += memberships(i, l) * leaves[l]->leaf_value[k];
  return out;
}

std::vector<std::size_t> predict_class(const NDTree& tree, const Matrix& x,
                                       TreePredict mode) {
  if (tree.policy != PredictionPolicy::Mode)
    throw std::invalid_argument("predict_class: tree predicts continuous targets");
  const Matrix values = predict_value(tree, x, mode);
  std::vector<std::size_t> classes(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) classes[i] = argmax_lowest(values.row(i));
  return classes;
}

namespace {

void count_params(const NDTNode* node, std::size_t& count) {
  if (node->is_leaf()) return;
  count += param_count(node->split_net);
  count_params(node->left.get(), count);
  count_params(node->right.get(), count);
}

void flatten_nodes(const NDTNode* node, std::vector<double>& out) {
  if (node->is_leaf()) return;
  const std::vector<double> p = flatten_params(node->split_net);
  out.insert(out.end(), p.begin(), p.end());
  flatten_nodes(node->left.get(), out);
  flatten_nodes(node->right.get(), out);
}

void unflatten_nodes(NDTNode* node, std::span<const double>& params) {
  if (node->is_leaf()) return;
  const std::size_t count = param_count(node->split_net);
  if (params.size() < count)
    throw std::invalid_argument("tree_unflatten_params: parameter vector too short");
  unflatten_params(node->split_net, params.subspan(0, count));
  params = params.subspan(count);
  unflatten_nodes(node->left.get(), params);
  unflatten_nodes(node->right.get(), params);
}

}  // namespace

std::size_t tree_param_count(const NDTree& tree) {
  std::size_t count = 0;
  count_params(tree.root.get(), count);
  return count;
}

std::vector<double> tree_flatten_params(const NDTree& tree) {
  std::vector<double> out;
  out.reserve(tree_param_count(tree));
  flatten_nodes(tree.root.get(), out);
  return out;
}

void tree_unflatten_params(NDTree& tree, std::span<const double> params) {
  if (params.size() != tree_param_count(tree))
    throw std::invalid_argument("tree_unflatten_params: parameter count mismatch");
  unflatten_nodes(tree.root.get(), params);
}

}  // namespace ndthash
