#include "cli_lib.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ndthash/model_io.hpp"
#include "ndthash/parallel.hpp"
#include "ndthash/predict.hpp"
#include "ndthash/train.hpp"
#include "ndthash/tree.hpp"

namespace ndthash::cli {

namespace {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------- helpers

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key()))
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return doc;
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out << doc.dump(2) << '\n';
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

LabelSpec parse_label_spec(const std::string& s) {
  if (s == "class") return LabelSpec::last_column_class();
  if (s == "none") return LabelSpec::none();
  if (s.rfind("continuous:", 0) == 0) {
    const std::string m = s.substr(11);
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(m.data(), m.data() + m.size(), value);
    if (ec == std::errc{} && ptr == m.data() + m.size() && value > 0)
      return LabelSpec::last_columns_continuous(value);
  }
  throw ConfigError("label spec must be 'class', 'continuous:<m>' or 'none', got '" +
                    s + "'");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "gini") return LossKind::Gini;
  if (s == "info_gain") return LossKind::InfoGain;
  if (s == "variance") return LossKind::Variance;
  if (s == "unsup_variance") return LossKind::UnsupVariance;
  if (s == "reconstruction_unsup") return LossKind::ReconstructionUnsup;
  if (s == "reconstruction_semisup") return LossKind::ReconstructionSemisup;
  throw ConfigError("unknown loss kind '" + s + "'");
}

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::Gini: return "gini";
    case LossKind::InfoGain: return "info_gain";
    case LossKind::Variance: return "variance";
    case LossKind::UnsupVariance: return "unsup_variance";
    case LossKind::ReconstructionUnsup: return "reconstruction_unsup";
    case LossKind::ReconstructionSemisup: return "reconstruction_semisup";
  }
  return "gini";
}

Activation parse_activation(const std::string& s) {
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + s + "'");
}

LossSpec parse_loss_spec(const json& j) {
  check_keys(j, {"kind", "lambda_uniform", "lambda_l2", "class_weights"},
             "train.loss");
  LossSpec spec;
  if (j.contains("kind")) spec.kind = parse_loss_kind(j.at("kind").get<std::string>());
  spec.lambda_uniform = j.value("lambda_uniform", 0.0);
  spec.lambda_l2 = j.value("lambda_l2", 0.0);
  if (j.contains("class_weights"))
    spec.class_weights = j.at("class_weights").get<std::vector<double>>();
  spec.validate();
  return spec;
}

TrainConfig parse_train_config(const json& j, const std::string& where) {
  check_keys(j,
             {"loss", "learning_rate", "momentum", "max_iters", "rel_tol", "batch",
              "log_every", "train_head_only"},
             where);
  TrainConfig cfg;
  if (j.contains("loss")) cfg.loss = parse_loss_spec(j.at("loss"));
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.max_iters = j.value("max_iters", cfg.max_iters);
  cfg.rel_tol = j.value("rel_tol", cfg.rel_tol);
  cfg.log_every = j.value("log_every", cfg.log_every);
  cfg.freeze_autoencoder = j.value("train_head_only", false);
  if (j.contains("batch")) {
    const json& b = j.at("batch");
    if (b.is_string() && b.get<std::string>() == "full") {
      cfg.batch = BatchSpec::full();
    } else if (b.is_object()) {
      check_keys(b, {"size", "seed"}, where + ".batch");
      cfg.batch = BatchSpec::minibatch(b.at("size").get<std::size_t>(),
                                       b.value("seed", std::uint64_t{0}));
    } else {
      throw ConfigError(where + ".batch must be \"full\" or {size, seed}");
    }
  }
  cfg.validate();
  return cfg;
}

Dataset load_dataset(const json& j) {
  check_keys(j, {"path", "labels"}, "dataset");
  if (!j.contains("path")) throw ConfigError("dataset.path is required");
  return load_csv(j.at("path").get<std::string>(),
                  parse_label_spec(j.value("labels", std::string("class"))));
}

std::size_t min_head_width(std::size_t n_classes) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n_classes) ++k;
  return k;
}

json history_record_json(const HistoryRecord& rec) {
  json j{{"iter", rec.iter},
         {"loss_total", rec.loss_total},
         {"loss_data", rec.loss_data},
         {"reg_uniform", rec.reg_uniform},
         {"reg_l2", rec.reg_l2},
         {"mass", rec.mass}};
  if (rec.train_acc) j["train_acc"] = *rec.train_acc;
  return j;
}

// -------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string kind;
  std::size_t n = 200;
  double noise = 0.1;
  std::uint64_t seed = 7;
  double r_inner = 1.0;
  double r_outer = 2.0;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err) {
  Dataset ds;
  if (args.kind == "two-moons") {
    ds = gen_two_moons(args.n, args.noise, args.seed);
  } else if (args.kind == "two-circles") {
    ds = gen_two_circles(args.n, args.r_inner, args.r_outer, args.noise, args.seed);
  } else {
    err << "unknown dataset kind '" << args.kind
        << "' (expected two-moons or two-circles)\n";
    return kUsageError;
  }
  save_csv(ds, args.out);
  std::vector<std::size_t> counts(ds.num_classes(), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) ++counts[ds.class_of(i)];
  out << args.kind << ": n=" << ds.size() << " dims=" << ds.dims()
      << " classes=" << ds.num_classes() << " counts=";
  for (std::size_t c = 0; c < counts.size(); ++c)
    out << (c ? "," : "") << counts[c];
  out << " -> " << args.out << "\n";
  return kOk;
}

// ------------------------------------------------------------------ train

struct OutputPaths {
  std::string model;
  std::string history;
  std::string metrics;
};

OutputPaths parse_outputs(const json& j) {
  check_keys(j, {"model", "history", "metrics"}, "output");
  OutputPaths paths;
  if (!j.contains("model") || !j.contains("history") || !j.contains("metrics"))
    throw ConfigError("output.model, output.history and output.metrics are required");
  paths.model = j.at("model").get<std::string>();
  paths.history = j.at("history").get<std::string>();
  paths.metrics = j.at("metrics").get<std::string>();
  return paths;
}

// Accuracy/MSE block shared by train metrics.
void add_quality_metrics(json& metrics, const TrainHistory& history,
                         const Dataset& ds, LossKind kind) {
  const HistoryRecord& last = history.final_record();
  metrics["iterations"] = last.iter;
  metrics["loss_total"] = last.loss_total;
  metrics["loss_data"] = last.loss_data;
  metrics["reg_uniform"] = last.reg_uniform;
  metrics["reg_l2"] = last.reg_l2;
  metrics["mass"] = last.mass;
  if (last.train_acc) metrics["accuracy"] = *last.train_acc;
  (void)ds;
  (void)kind;
}

std::vector<std::uint8_t> semisup_mask(const json& config, std::size_t n,
                                       std::uint64_t seed) {
  const double fraction = config.value("labeled_fraction", 1.0);
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("labeled_fraction must be in (0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t labeled = std::max<std::size_t>(
      1, std::size_t(std::ceil(fraction * double(n))));
  std::vector<std::uint8_t> mask(n, 0);
  for (std::size_t i = 0; i < std::min(labeled, n); ++i) mask[order[i]] = 1;
  return mask;
}

// Region-table fit that tolerates datasets a table cannot be fitted on
// (unlabeled, or a head narrower than the incidental class count).
std::optional<RegionTable> try_fit_table(const Network& net, const Dataset& ds) {
  if (ds.label_kind == LabelKind::None) return std::nullopt;
  try {
    return fit_region_table(net, ds, Assignment::Soft);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

std::optional<RegionTable> try_fit_table(const Autoencoder& ae, const Dataset& ds) {
  if (ds.label_kind == LabelKind::None) return std::nullopt;
  try {
    return fit_region_table(ae, ds, Assignment::Soft);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

int write_diverged(const DivergedError& e, const OutputPaths& paths,
                   const std::string& model_kind, std::ostream& err) {
  json metrics{{"status", "diverged"},
               {"model", model_kind},
               {"iterations", e.iter},
               {"last_finite", history_record_json(e.last_finite)}};
  write_json(paths.metrics, metrics);
  err << "training diverged at iteration " << e.iter
      << "; last finite metrics written to " << paths.metrics << "\n";
  return kDiverged;
}

int train_network_like(const std::string& model_kind, const json& config,
                       std::ostream& out, std::ostream& err) {
  check_keys(config, {"dataset", "seed", "dims", "output", "train"},
             "config");
  const Dataset ds = load_dataset(config.at("dataset"));
  const std::uint64_t seed = config.value("seed", std::uint64_t{0});
  const OutputPaths paths = parse_outputs(config.at("output"));
  if (!config.contains("dims")) throw ConfigError("dims is required");
  const auto dims = config.at("dims").get<std::vector<std::size_t>>();
  TrainConfig cfg = config.contains("train")
                        ? parse_train_config(config.at("train"), "train")
                        : TrainConfig{};

  if (model_kind == "mlp-baseline") {
    if (dims.size() < 2 || dims.back() != 1)
      throw ConfigError(
          "mlp-baseline needs a multi-layer topology ending in one sigmoid unit");
    if (cfg.loss.kind != LossKind::Gini && cfg.loss.kind != LossKind::InfoGain)
      throw ConfigError("mlp-baseline trains on gini or info_gain");
    if (ds.label_kind != LabelKind::OneHotClass || ds.num_classes() != 2)
      throw ConfigError("mlp-baseline is a binary classifier");
  }
  if (cfg.loss.kind == LossKind::ReconstructionUnsup ||
      cfg.loss.kind == LossKind::ReconstructionSemisup)
    throw ConfigError("reconstruction losses require an autoencoder model");
  if ((cfg.loss.kind == LossKind::Gini || cfg.loss.kind == LossKind::InfoGain)) {
    if (ds.label_kind != LabelKind::OneHotClass)
      throw ConfigError("classification losses need class labels");
    if (dims.back() < min_head_width(ds.num_classes()))
      throw ConfigError("head width below log2(C): the regions cannot cover every class");
  }

  Network net = init_network(dims, seed);
  TrainHistory history;
  try {
    history = train(net, ds, cfg);
  } catch (const DivergedError& e) {
    return write_diverged(e, paths, model_kind, err);
  }

  const std::optional<RegionTable> table = try_fit_table(net, ds);
  save_model(paths.model, net, table ? &*table : nullptr);
  write_history_jsonl(paths.history, history);

  json metrics{{"status", "ok"},
               {"model", model_kind},
               {"loss", loss_kind_name(cfg.loss.kind)},
               {"param_count", param_count(net)}};
  add_quality_metrics(metrics, history, ds, cfg.loss.kind);
  write_json(paths.metrics, metrics);
  out << model_kind << ": param_count=" << param_count(net)
      << " final_loss=" << format_double(history.final_record().loss_total);
  if (history.final_record().train_acc)
    out << " train_acc=" << format_double(*history.final_record().train_acc);
  out << "\n";
  return kOk;
}

int train_autoencoder(const std::string& model_kind, const json& config,
                      std::ostream& out, std::ostream& err) {
  const bool semisup = model_kind == "autoencoder-semisup";
  check_keys(config,
             semisup ? std::set<std::string>{"dataset", "seed", "autoencoder",
                                             "output", "train", "labeled_fraction"}
                     : std::set<std::string>{"dataset", "seed", "autoencoder",
                                             "output", "train"},
             "config");
  const Dataset ds = load_dataset(config.at("dataset"));
  const std::uint64_t seed = config.value("seed", std::uint64_t{0});
  const OutputPaths paths = parse_outputs(config.at("output"));

  if (!config.contains("autoencoder"))
    throw ConfigError("autoencoder section is required");
  const json& ae_cfg = config.at("autoencoder");
  check_keys(ae_cfg, {"encoder_dims", "head_width", "activation", "init"},
             "autoencoder");
  if (!ae_cfg.contains("head_width"))
    throw ConfigError("autoencoder.head_width is required");
  const std::size_t head_width = ae_cfg.at("head_width").get<std::size_t>();

  Autoencoder ae;
  if (ae_cfg.value("init", std::string("normal")) == "identity") {
    if (ae_cfg.contains("encoder_dims") || ae_cfg.contains("activation"))
      throw ConfigError("identity init fixes encoder_dims and activation");
    ae = make_identity_autoencoder(ds.dims(), head_width, seed);
  } else {
    if (!ae_cfg.contains("encoder_dims"))
      throw ConfigError("autoencoder.encoder_dims is required");
    const auto enc_dims = ae_cfg.at("encoder_dims").get<std::vector<std::size_t>>();
    if (enc_dims.empty() || enc_dims.front() != ds.dims())
      throw ConfigError("encoder_dims must start at the dataset dimension");
    ae = init_autoencoder(
        enc_dims, head_width, seed,
        parse_activation(ae_cfg.value("activation", std::string("sigmoid"))));
  }

  TrainConfig cfg = config.contains("train")
                        ? parse_train_config(config.at("train"), "train")
                        : TrainConfig{};
  const LossKind wanted =
      semisup ? LossKind::ReconstructionSemisup : LossKind::ReconstructionUnsup;
  if (cfg.loss.kind != wanted && cfg.loss.kind != LossKind::Gini)
    throw ConfigError("loss kind does not match the autoencoder model");
  cfg.loss.kind = wanted;

  std::vector<std::uint8_t> mask;
  if (semisup) {
    if (ds.label_kind != LabelKind::OneHotClass)
      throw ConfigError("semi-supervised training needs class labels");
    mask = semisup_mask(config, ds.size(), seed);
  }

  TrainHistory history;
  try {
    history = train(ae, ds, cfg, mask);
  } catch (const DivergedError& e) {
    return write_diverged(e, paths, model_kind, err);
  }

  const std::optional<RegionTable> table = try_fit_table(ae, ds);
  save_model(paths.model, ae, table ? &*table : nullptr);
  write_history_jsonl(paths.history, history);

  json metrics{{"status", "ok"},
               {"model", model_kind},
               {"loss", loss_kind_name(cfg.loss.kind)},
               {"param_count", param_count(ae)}};
  if (semisup) {
    std::size_t labeled = 0;
    for (std::uint8_t m : mask) labeled += m;
    metrics["labeled_rows"] = labeled;
  }
  add_quality_metrics(metrics, history, ds, cfg.loss.kind);
  write_json(paths.metrics, metrics);
  out << model_kind << ": param_count=" << param_count(ae)
      << " final_loss=" << format_double(history.final_record().loss_total) << "\n";
  return kOk;
}

int train_tree(const json& config, std::ostream& out, std::ostream& err) {
  check_keys(config, {"dataset", "seed", "tree", "output", "train", "fine_tune"},
             "config");
  const Dataset ds = load_dataset(config.at("dataset"));
  const std::uint64_t seed = config.value("seed", std::uint64_t{0});
  const OutputPaths paths = parse_outputs(config.at("output"));

  GrowthConfig growth;
  growth.seed = seed;
  growth.node_train = config.contains("train")
                          ? parse_train_config(config.at("train"), "train")
                          : TrainConfig{};
  bool fine_tune = true;
  if (config.contains("tree")) {
    const json& t = config.at("tree");
    check_keys(t, {"max_depth", "min_mass", "node_hidden_dims", "soft_routing",
                   "fine_tune"},
               "tree");
    growth.max_depth = t.value("max_depth", growth.max_depth);
    growth.min_mass = t.value("min_mass", growth.min_mass);
    if (t.contains("node_hidden_dims"))
      growth.node_hidden_dims =
          t.at("node_hidden_dims").get<std::vector<std::size_t>>();
    growth.soft_routing = t.value("soft_routing", true);
    fine_tune = t.value("fine_tune", true);
  }

  NDTree tree;
  TrainHistory history;
  try {
    tree = grow_greedy(ds, growth);
    if (fine_tune) {
      TrainConfig ft = config.contains("fine_tune")
                           ? parse_train_config(config.at("fine_tune"), "fine_tune")
                           : growth.node_train;
      history = global_fine_tune(tree, ds, ft);
    } else if (tree.policy == PredictionPolicy::Mode) {
      HistoryRecord rec;
      rec.iter = 0;
      rec.loss_total = tree_objective(tree, ds, growth.node_train.loss.kind);
      rec.loss_data = rec.loss_total;
      const auto pred = predict_class(tree, ds.features, TreePredict::HardPath);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (pred[i] == ds.class_of(i)) ++correct;
      rec.train_acc = double(correct) / double(ds.size());
      history.records.push_back(rec);
    } else {
      HistoryRecord rec;
      history.records.push_back(rec);
    }
  } catch (const DivergedError& e) {
    return write_diverged(e, paths, "ndt", err);
  }

  save_model(paths.model, tree);
  write_history_jsonl(paths.history, history);

  json metrics{{"status", "ok"},
               {"model", "ndt"},
               {"loss", loss_kind_name(growth.node_train.loss.kind)},
               {"param_count", tree_param_count(tree)},
               {"leaves", tree.leaf_count()},
               {"fine_tuned", fine_tune}};
  add_quality_metrics(metrics, history, ds, growth.node_train.loss.kind);
  write_json(paths.metrics, metrics);
  out << "ndt: leaves=" << tree.leaf_count()
      << " param_count=" << tree_param_count(tree)
      << " final_loss=" << format_double(history.final_record().loss_total);
  if (history.final_record().train_acc)
    out << " train_acc=" << format_double(*history.final_record().train_acc);
  out << "\n";
  return kOk;
}

int cmd_train(const std::string& model_kind, const std::string& config_path,
              std::ostream& out, std::ostream& err) {
  const json config = load_json(config_path);
  if (model_kind == "hnn" || model_kind == "mlp-baseline")
    return train_network_like(model_kind, config, out, err);
  if (model_kind == "autoencoder-unsup" || model_kind == "autoencoder-semisup")
    return train_autoencoder(model_kind, config, out, err);
  if (model_kind == "ndt") return train_tree(config, out, err);
  err << "unknown model kind '" << model_kind
      << "' (expected hnn, ndt, autoencoder-unsup, autoencoder-semisup or "
         "mlp-baseline)\n";
  return kUsageError;
}

// ------------------------------------------------------------------- eval

// Path codes of every leaf, left-to-right ('1' routes left, as in hard
// assignment).
void leaf_paths(const NDTNode* node, const std::string& prefix,
                std::vector<std::string>& out) {
  if (node->is_leaf()) {
    out.push_back(prefix.empty() ? "-" : prefix);
    return;
  }
  leaf_paths(node->left.get(), prefix + "1", out);
  leaf_paths(node->right.get(), prefix + "0", out);
}

int eval_tree(const NDTree& tree, const Dataset& ds, const std::string& metrics_path,
              const std::string& table_path, std::ostream& out, std::ostream& err) {
  const bool classify = tree.policy == PredictionPolicy::Mode;
  if (classify && (ds.label_kind != LabelKind::OneHotClass ||
                   ds.num_classes() != tree.value_dim)) {
    err << "kind mismatch: classification tree needs matching class labels\n";
    return kUsageError;
  }
  if (!classify && (ds.label_kind != LabelKind::Continuous ||
                    ds.labels.cols != tree.value_dim)) {
    err << "kind mismatch: regression tree needs matching continuous targets\n";
    return kUsageError;
  }

  json metrics{{"status", "ok"}, {"samples", ds.size()}};
  if (classify) {
    const auto pred = predict_class(tree, ds.features, TreePredict::HardPath);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (pred[i] == ds.class_of(i)) ++correct;
    metrics["accuracy"] = double(correct) / double(ds.size());
  } else {
    const Matrix pred = predict_value(tree, ds.features, TreePredict::HardPath);
    double sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      sq += squared_distance(pred.row(i), ds.labels.row(i));
    metrics["mse"] = sq / double(ds.size());
  }
  write_json(metrics_path, metrics);

  // Per-leaf table on the evaluation data.
  const Matrix memberships = leaf_memberships(tree, ds.features);
  const std::vector<double> mass = chain_mass(memberships);
  const RegionStats stats = classify
                                ? class_distribution(memberships, ds.labels)
                                : region_mean(memberships, ds.labels);
  std::vector<std::string> paths;
  leaf_paths(tree.root.get(), "", paths);
  std::ofstream table(table_path, std::ios::binary);
  if (!table) throw ConfigError("cannot open for writing: " + table_path);
  table << "chain_bits,mass";
  for (std::size_t c = 0; c < stats.values.cols; ++c)
    table << ',' << (classify ? 'p' : 'm') << c;
  table << '\n';
  for (std::size_t l = 0; l < paths.size(); ++l) {
    table << paths[l] << ',' << format_double(mass[l]);
    for (std::size_t c = 0; c < stats.values.cols; ++c)
      table << ',' << format_double(stats.values(l, c));
    table << '\n';
  }
  out << "eval: samples=" << ds.size();
  if (metrics.contains("accuracy"))
    out << " accuracy=" << format_double(metrics["accuracy"].get<double>());
  if (metrics.contains("mse"))
    out << " mse=" << format_double(metrics["mse"].get<double>());
  out << "\n";
  return kOk;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& labels, const std::string& metrics_path,
             const std::string& table_path, std::ostream& out, std::ostream& err) {
  const LoadedModel loaded = load_model(model_path);
  const Dataset ds = load_csv(data_path, parse_label_spec(labels));
  if (ds.label_kind == LabelKind::None) {
    err << "eval needs labeled data (accuracy or MSE)\n";
    return kUsageError;
  }

  if (loaded.is_tree())
    return eval_tree(std::get<NDTree>(loaded.model), ds, metrics_path, table_path,
                     out, err);

  // Embedded table, when present, pins the model's prediction policy.
  if (loaded.table.has_value()) {
    const bool model_classifies = loaded.table->policy == PredictionPolicy::Mode;
    if (model_classifies != (ds.label_kind == LabelKind::OneHotClass)) {
      err << "kind mismatch: model policy does not match the label kind\n";
      return kUsageError;
    }
  }

  const bool classify = ds.label_kind == LabelKind::OneHotClass;
  Predictor predictor =
      std::holds_alternative<Network>(loaded.model)
          ? fit_predictor(std::get<Network>(loaded.model), ds, Assignment::Soft)
          : fit_predictor(std::get<Autoencoder>(loaded.model), ds, Assignment::Soft);

  json metrics{{"status", "ok"}, {"samples", ds.size()}};
  const auto preds = predict_batch(predictor, ds.features);
  if (classify) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (preds[i].class_index == ds.class_of(i)) ++correct;
    metrics["accuracy"] = double(correct) / double(ds.size());
  } else {
    double sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      sq += squared_distance(preds[i].value, ds.labels.row(i));
    metrics["mse"] = sq / double(ds.size());
  }
  write_json(metrics_path, metrics);

  std::ofstream table(table_path, std::ios::binary);
  if (!table) throw ConfigError("cannot open for writing: " + table_path);
  predictor.table.write_csv(table);

  out << "eval: samples=" << ds.size();
  if (metrics.contains("accuracy"))
    out << " accuracy=" << format_double(metrics["accuracy"].get<double>());
  if (metrics.contains("mse"))
    out << " mse=" << format_double(metrics["mse"].get<double>());
  out << "\n";
  return kOk;
}

// ------------------------------------------------------------------- grid

struct GridArgs {
  std::string model;
  double xmin = -2.0, xmax = 3.0, ymin = -1.5, ymax = 2.0;
  std::size_t nx = 100, ny = 100;
  std::string out_path;
};

int cmd_grid(const GridArgs& args, std::ostream& out, std::ostream& err) {
  const LoadedModel loaded = load_model(args.model);
  if (args.nx < 1 || args.ny < 1) {
    err << "grid resolution must be at least 1x1\n";
    return kUsageError;
  }

  const auto input_dim = [&]() -> std::size_t {
    if (loaded.is_tree()) return std::get<NDTree>(loaded.model).input_dim;
    if (std::holds_alternative<Network>(loaded.model))
      return std::get<Network>(loaded.model).input_dim();
    return std::get<Autoencoder>(loaded.model).input_dim();
  }();
  if (input_dim != 2) {
    err << "grid requires a 2D model\n";
    return kUsageError;
  }
  if (!loaded.is_tree() && !loaded.table.has_value()) {
    err << "model document carries no region table; train or eval it first\n";
    return kUsageError;
  }

  std::ofstream file(args.out_path, std::ios::binary);
  if (!file) throw ConfigError("cannot open for writing: " + args.out_path);
  file << "x,y,bits,region_id,prediction,membership_max\n";

  const auto grid_value = [&](double fx, double fy, std::size_t steps,
                              double lo, double hi, std::size_t i) {
    (void)fx;
    (void)fy;
    return steps > 1 ? lo + (hi - lo) * double(i) / double(steps - 1) : lo;
  };

  Matrix point(1, 2);
  for (std::size_t iy = 0; iy < args.ny; ++iy) {
    point(0, 1) = grid_value(0, 0, args.ny, args.ymin, args.ymax, iy);
    for (std::size_t ix = 0; ix < args.nx; ++ix) {
      point(0, 0) = grid_value(0, 0, args.nx, args.xmin, args.xmax, ix);

      std::string bits;
      std::size_t region = 0;
      std::string prediction;
      double membership_max = 0.0;
      if (loaded.is_tree()) {
        const NDTree& tree = std::get<NDTree>(loaded.model);
        const Matrix m = leaf_memberships(tree, point);
        for (std::size_t l = 0; l < m.cols; ++l)
          if (m(0, l) > membership_max) {
            membership_max = m(0, l);
          }
        std::vector<std::string> paths;
        leaf_paths(tree.root.get(), "", paths);
        // hard path: follow the saturated decisions
        const NDTNode* node = tree.root.get();
        while (!node->is_leaf()) {
          const double phi = head_output(node->split_net, point)(0, 0);
          bits.push_back(phi >= 0.5 ? '1' : '0');
          node = phi >= 0.5 ? node->left.get() : node->right.get();
        }
        for (std::size_t l = 0; l < paths.size(); ++l)
          if (paths[l] == bits) region = l;
        if (tree.policy == PredictionPolicy::Mode) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < node->leaf_value.size(); ++c)
            if (node->leaf_value[c] > node->leaf_value[best]) best = c;
          prediction = std::to_string(best);
        } else {
          prediction = format_double(node->leaf_value[0]);
        }
      } else {
        const Matrix head =
            std::holds_alternative<Network>(loaded.model)
                ? head_output(std::get<Network>(loaded.model), point)
                : head_output(std::get<Autoencoder>(loaded.model), point);
        const ChainCode code = hard_assign(head.row(0));
        bits = code.to_string();
        region = code.to_index();
        membership_max = membership(head.row(0), code);
        const RegionTable& table = *loaded.table;
        std::span<const double> row = table.values.row(region);
        if (table.policy == PredictionPolicy::Mode) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
          prediction = std::to_string(best);
        } else {
          prediction = format_double(row[0]);
        }
      }
      file << format_double(point(0, 0)) << ',' << format_double(point(0, 1)) << ','
           << bits << ',' << region << ',' << prediction << ','
           << format_double(membership_max) << '\n';
    }
  }
  out << "grid: " << args.nx * args.ny << " points -> " << args.out_path << "\n";
  return kOk;
}

// -------------------------------------------------------------- gradcheck

struct KindReport {
  std::string kind;
  std::size_t instances = 0;
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  bool pass = true;
  std::string worst_block;
};

int cmd_gradcheck(const std::string& config_path, bool inject_corruption,
                  std::ostream& out, std::ostream& err) {
  const json config = load_json(config_path);
  check_keys(config, {"seed", "h", "tolerance", "instances", "output"}, "config");
  const std::uint64_t seed = config.value("seed", std::uint64_t{1});
  const double h = config.value("h", 1e-5);
  const double tolerance = config.value("tolerance", 1e-5);
  const std::size_t instances = config.value("instances", std::size_t{5});
  if (!config.contains("output")) throw ConfigError("output is required");
  const std::string output = config.at("output").get<std::string>();
  const double corrupt = inject_corruption ? 1e-2 : 0.0;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.5, 1.5);
  const auto random_features = [&](std::size_t n, std::size_t d) {
    Matrix x(n, d);
    for (double& v : x.data) v = unit(rng);
    return x;
  };
  const auto random_one_hot = [&](std::size_t n, std::size_t c) {
    Matrix y(n, c, 0.0);
    for (std::size_t i = 0; i < n; ++i) y(i, rng() % c) = 1.0;
    return y;
  };

  const LossKind kinds[] = {LossKind::Gini,          LossKind::InfoGain,
                            LossKind::Variance,      LossKind::UnsupVariance,
                            LossKind::ReconstructionUnsup,
                            LossKind::ReconstructionSemisup};
  std::vector<KindReport> reports;
  bool all_pass = true;
  double worst = 0.0;
  std::string worst_kind, worst_block;

  for (LossKind kind : kinds) {
    KindReport report;
    report.kind = loss_kind_name(kind);
    report.instances = instances;
    double err_sum = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
      const std::size_t n = 4 + rng() % 6;
      const std::size_t k = 1 + rng() % 3;
      LossSpec spec;
      spec.kind = kind;
      spec.lambda_uniform = 0.1;
      spec.lambda_l2 = 1e-4;

      GradCheckReport gc;
      if (kind == LossKind::ReconstructionUnsup ||
          kind == LossKind::ReconstructionSemisup) {
        Dataset ds;
        ds.features = random_features(n, 2);
        if (kind == LossKind::ReconstructionSemisup) {
          ds.labels = random_one_hot(n, 2);
          ds.label_kind = LabelKind::OneHotClass;
        }
        const Autoencoder ae = init_autoencoder({2, 3, 2}, k, rng());
        std::vector<std::uint8_t> mask;
        if (kind == LossKind::ReconstructionSemisup) {
          mask.assign(n, 0);
          for (std::size_t i = 0; i < n; ++i) mask[i] = rng() % 2;
          mask[0] = 1;  // at least one labeled row
        }
        gc = gradcheck(ae, ds, spec, h, tolerance, corrupt, mask);
      } else {
        Dataset ds;
        ds.features = random_features(n, 3);
        if (kind == LossKind::Gini || kind == LossKind::InfoGain) {
          ds.labels = random_one_hot(n, 2 + t % 2);
          ds.label_kind = LabelKind::OneHotClass;
        } else if (kind == LossKind::Variance) {
          ds.labels = random_features(n, 1);
          ds.label_kind = LabelKind::Continuous;
        }
        const std::vector<std::size_t> dims =
            t % 2 == 0 ? std::vector<std::size_t>{3, k}
                       : std::vector<std::size_t>{3, 4, k};
        const Network net = init_network(dims, rng());
        gc = gradcheck(net, ds, spec, h, tolerance, corrupt);
      }
      report.max_rel_err = std::max(report.max_rel_err, gc.max_rel_err);
      err_sum += gc.mean_rel_err;
      if (!gc.pass) {
        report.pass = false;
        report.worst_block = gc.worst_block;
      }
    }
    report.mean_rel_err = err_sum / double(instances);
    if (report.max_rel_err >= worst) {
      worst = report.max_rel_err;
      worst_kind = report.kind;
      worst_block = report.worst_block;
    }
    all_pass = all_pass && report.pass;
    reports.push_back(std::move(report));
  }

  json doc{{"pass", all_pass},
           {"h", h},
           {"tolerance", tolerance},
           {"seed", seed},
           {"corrupted", inject_corruption}};
  json kinds_json = json::array();
  for (const KindReport& r : reports) {
    kinds_json.push_back(json{{"kind", r.kind},
                              {"instances", r.instances},
                              {"max_rel_err", r.max_rel_err},
                              {"mean_rel_err", r.mean_rel_err},
                              {"pass", r.pass}});
  }
  doc["kinds"] = kinds_json;
  doc["worst"] = json{{"kind", worst_kind},
                      {"max_rel_err", worst},
                      {"block", worst_block}};
  write_json(output, doc);

  for (const KindReport& r : reports)
    out << (r.pass ? "pass " : "FAIL ") << r.kind
        << " max_rel_err=" << format_double(r.max_rel_err) << "\n";
  if (!all_pass) {
    err << "gradient check failed; worst offender: " << worst_kind << " ("
        << worst_block << ", max_rel_err=" << format_double(worst) << ")\n";
    return kCheckFailed;
  }
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"neural decision trees and hashing heads"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a toy dataset CSV");
  gen_cmd->add_option("kind", gen.kind, "two-moons or two-circles")->required();
  gen_cmd->add_option("--n", gen.n, "number of samples");
  gen_cmd->add_option("--noise", gen.noise, "gaussian noise stddev");
  gen_cmd->add_option("--seed", gen.seed, "rng seed");
  gen_cmd->add_option("--r-inner", gen.r_inner, "inner radius (two-circles)");
  gen_cmd->add_option("--r-outer", gen.r_outer, "outer radius (two-circles)");
  gen_cmd->add_option("--out", gen.out, "output CSV path")->required();

  std::string train_model, train_config;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_cmd->add_option("model", train_model,
                        "hnn | ndt | autoencoder-unsup | autoencoder-semisup | "
                        "mlp-baseline")
      ->required();
  train_cmd->add_option("config", train_config, "JSON config path")->required();

  std::string eval_model, eval_data, eval_labels = "class";
  std::string eval_metrics, eval_table;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a model on a CSV");
  eval_cmd->add_option("model", eval_model, "model document path")->required();
  eval_cmd->add_option("data", eval_data, "CSV path")->required();
  eval_cmd->add_option("--labels", eval_labels, "class | continuous:<m> | none");
  eval_cmd->add_option("--metrics", eval_metrics, "metrics JSON output path")
      ->required();
  eval_cmd->add_option("--table", eval_table, "region table CSV output path")
      ->required();

  GridArgs grid;
  CLI::App* grid_cmd =
      app.add_subcommand("grid", "export a decision-surface grid CSV");
  grid_cmd->add_option("model", grid.model, "model document path")->required();
  grid_cmd->add_option("--xmin", grid.xmin);
  grid_cmd->add_option("--xmax", grid.xmax);
  grid_cmd->add_option("--ymin", grid.ymin);
  grid_cmd->add_option("--ymax", grid.ymax);
  grid_cmd->add_option("--nx", grid.nx, "grid columns");
  grid_cmd->add_option("--ny", grid.ny, "grid rows");
  grid_cmd->add_option("--out", grid.out_path, "output CSV path")->required();

  std::string gc_config;
  bool gc_corrupt = false;
  CLI::App* gc_cmd =
      app.add_subcommand("gradcheck", "verify gradients against finite differences");
  gc_cmd->add_option("config", gc_config, "JSON config path")->required();
  gc_cmd->add_flag("--inject-corruption", gc_corrupt,
                   "corrupt the analytic gradient (negative control)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return kUsageError;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out, err);
    if (*train_cmd) return cmd_train(train_model, train_config, out, err);
    if (*eval_cmd)
      return cmd_eval(eval_model, eval_data, eval_labels, eval_metrics, eval_table,
                      out, err);
    if (*grid_cmd) return cmd_grid(grid, out, err);
    if (*gc_cmd) return cmd_gradcheck(gc_config, gc_corrupt, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const CsvError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ModelIoError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: invalid config: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
  err << "no command given\n" << app.help();
  return kUsageError;
}

}  // namespace ndthash::cli
