#include "ndthash/predict.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace ndthash {

namespace {

std::size_t min_head_width(std::size_t n_classes) {
  std::size_t k = 0;
  while ((std::size_t{1} << k) < n_classes) ++k;
  return k;
}

RegionTable fit_table_from_out(const Matrix& out, const Dataset& ds, Assignment a) {
  const std::size_t k = out.cols;
  const std::size_t n_chains = std::size_t{1} << k;

  if (ds.label_kind == LabelKind::None)
    throw std::invalid_argument("fit_region_table: dataset has no labels");
  const bool classify = ds.label_kind == LabelKind::OneHotClass;
  if (classify && k < min_head_width(ds.num_classes()))
    throw std::invalid_argument(
        "fit_region_table: head width below log2(C); the regions cannot cover every class");

  RegionTable table;
  table.chain_length = k;
  table.policy = classify ? PredictionPolicy::Mode : PredictionPolicy::Mean;

  if (a == Assignment::Soft) {
    const Matrix memberships = membership_matrix(out);
    table.mass = chain_mass(memberships);
    const RegionStats stats = classify ? class_distribution(memberships, ds.labels)
                                       : region_mean(memberships, ds.labels);
    table.values = stats.values;
    table.zero_mass = stats.zero_mass;
    return table;
  }

  // Hard assignment: plain counting per region.
  table.mass.assign(n_chains, 0.0);
  table.values = Matrix(n_chains, ds.labels.cols, 0.0);
  table.zero_mass.assign(n_chains, 0);
  std::vector<double> counts(n_chains, 0.0);
  for (std::size_t i = 0; i < out.rows; ++i) {
    const std::size_t region = hard_assign_index(out.row(i));
    counts[region] += 1.0;
    for (std::size_t c = 0; c < ds.labels.cols; ++c)
      table.values(region, c) += ds.labels(i, c);
  }
  for (std::size_t r = 0; r < n_chains; ++r) {
    table.mass[r] = counts[r] / double(out.rows);
    if (counts[r] == 0.0) {
      table.zero_mass[r] = 1;
      for (std::size_t c = 0; c < ds.labels.cols; ++c)
        table.values(r, c) = classify ? 1.0 / double(ds.labels.cols) : 0.0;
    } else {
      for (std::size_t c = 0; c < ds.labels.cols; ++c) table.values(r, c) /= counts[r];
    }
  }
  return table;
}

std::vector<double> global_default(const Dataset& ds) {
  std::vector<double> value(ds.labels.cols, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t c = 0; c < ds.labels.cols; ++c) value[c] += ds.labels(i, c);
  for (double& v : value) v /= double(ds.size());
  return value;
}

std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace

RegionTable fit_region_table(const Network& model, const Dataset& ds, Assignment a) {
  return fit_table_from_out(head_output(model, ds.features), ds, a);
}

RegionTable fit_region_table(const Autoencoder& model, const Dataset& ds,
                             Assignment a) {
  return fit_table_from_out(head_output(model, ds.features), ds, a);
}

std::size_t Predictor::head_width() const {
  return std::visit([](const auto& m) { return m.head_width(); }, model);
}

std::size_t Predictor::input_dim() const {
  return std::visit([](const auto& m) { return m.input_dim(); }, model);
}

Matrix Predictor::head_out(const Matrix& x) const {
  return std::visit([&](const auto& m) { return head_output(m, x); }, model);
}

namespace {

Predictor make_predictor(std::variant<Network, Autoencoder> model, const Dataset& ds,
                         Assignment a, bool abstain) {
  Predictor p;
  p.model = std::move(model);
  p.table = std::visit([&](const auto& m) { return fit_region_table(m, ds, a); },
                       p.model);
  p.default_value = global_default(ds);
  p.abstain_on_unseen = abstain;
  return p;
}

}  // namespace

Predictor fit_predictor(Network model, const Dataset& ds, Assignment a,
                        bool abstain_on_unseen) {
  return make_predictor(std::move(model), ds, a, abstain_on_unseen);
}

Predictor fit_predictor(Autoencoder model, const Dataset& ds, Assignment a,
                        bool abstain_on_unseen) {
  return make_predictor(std::move(model), ds, a, abstain_on_unseen);
}

Prediction predict_with_confidence(const Predictor& p, std::span<const double> x_row) {
  Matrix x(1, x_row.size());
  std::copy(x_row.begin(), x_row.end(), x.row(0).begin());
  const Matrix out = p.head_out(x);

  Prediction pred;
  pred.region = hard_assign_index(out.row(0));
  if (p.table.zero_mass[pred.region]) {
    pred.unseen = true;
    pred.confidence = 0.0;
    if (p.abstain_on_unseen) {
      pred.abstained = true;
      return pred;
    }
    pred.value = p.default_value;
    pred.class_index = argmax_lowest(pred.value);
    return pred;
  }

  const auto row = p.table.values.row(pred.region);
  pred.value.assign(row.begin(), row.end());
  if (p.table.policy == PredictionPolicy::Mode) {
    pred.class_index = argmax_lowest(row);
    pred.confidence = row[pred.class_index];
  } else {
    pred.confidence = p.table.mass[pred.region];
  }
  return pred;
}

std::vector<Prediction> predict_batch(const Predictor& p, const Matrix& x) {
  std::vector<Prediction> preds;
  preds.reserve(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    preds.push_back(predict_with_confidence(p, x.row(i)));
  return preds;
}

Network random_lsh_head(std::size_t dims, std::size_t bits, std::uint64_t seed) {
  if (bits < 1 || bits > kMaxHeadWidth)
    throw std::invalid_argument("random_lsh_head: unsupported head width");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseLayer layer;
  layer.weights = Matrix(bits, dims);
  for (double& w : layer.weights.data) w = gauss(rng);
  layer.biases.assign(bits, 0.0);
  layer.activation = Activation::Sigmoid;
  Network net{{std::move(layer)}};
  net.validate();
  return net;
}

namespace {

std::vector<ChainCode> codes_from_out(const Matrix& out) {
  std::vector<ChainCode> codes;
  codes.reserve(out.rows);
  for (std::size_t i = 0; i < out.rows; ++i) codes.push_back(hard_assign(out.row(i)));
  return codes;
}

}  // namespace

std::vector<ChainCode> hash_codes(const Network& model, const Matrix& x) {
  return codes_from_out(head_output(model, x));
}

std::vector<ChainCode> hash_codes(const Autoencoder& model, const Matrix& x) {
  return codes_from_out(head_output(model, x));
}

void write_codes_csv(std::ostream& out, const std::vector<ChainCode>& codes) {
  out << "index,code\n";
  for (std::size_t i = 0; i < codes.size(); ++i)
    out << i << ',' << codes[i].to_string() << '\n';
}

}  // namespace ndthash
