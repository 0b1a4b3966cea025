#include "ndthash/model_io.hpp"

#include <fstream>

#include <json.hpp>

namespace ndthash {

namespace {

using nlohmann::json;

constexpr const char* kModelVersion = "ndt-hash/1";
constexpr const char* kTreeVersion = "ndt-tree/1";

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "sigmoid";
}

Activation activation_from_name(const std::string& name) {
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw ModelIoError("unknown activation: " + name);
}

json layer_to_json(const DenseLayer& layer) {
  return json{{"fan_in", layer.fan_in()},
              {"fan_out", layer.fan_out()},
              {"activation", activation_name(layer.activation)},
              {"weights", layer.weights.data},
              {"biases", layer.biases}};
}

DenseLayer layer_from_json(const json& j) {
  DenseLayer layer;
  const std::size_t fan_in = j.at("fan_in").get<std::size_t>();
  const std::size_t fan_out = j.at("fan_out").get<std::size_t>();
  layer.weights = Matrix(fan_out, fan_in);
  const auto weights = j.at("weights").get<std::vector<double>>();
  if (weights.size() != fan_in * fan_out)
    throw ModelIoError("layer weights size mismatch");
  layer.weights.data = weights;
  layer.biases = j.at("biases").get<std::vector<double>>();
  if (layer.biases.size() != fan_out) throw ModelIoError("layer biases size mismatch");
  layer.activation = activation_from_name(j.at("activation").get<std::string>());
  return layer;
}

json stack_to_json(const std::vector<DenseLayer>& layers) {
  json arr = json::array();
  for (const DenseLayer& layer : layers) arr.push_back(layer_to_json(layer));
  return arr;
}

std::vector<DenseLayer> stack_from_json(const json& arr) {
  std::vector<DenseLayer> layers;
  for (const json& j : arr) layers.push_back(layer_from_json(j));
  return layers;
}

json table_to_json(const RegionTable& table) {
  json values = json::array();
  for (std::size_t r = 0; r < table.values.rows; ++r) {
    const auto row = table.values.row(r);
    values.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return json{{"chain_length", table.chain_length},
              {"policy", table.policy == PredictionPolicy::Mode ? "mode" : "mean"},
              {"mass", table.mass},
              {"values", values},
              {"zero_mass", table.zero_mass}};
}

RegionTable table_from_json(const json& j) {
  RegionTable table;
  table.chain_length = j.at("chain_length").get<std::size_t>();
  const std::string policy = j.at("policy").get<std::string>();
  if (policy != "mode" && policy != "mean")
    throw ModelIoError("unknown region table policy: " + policy);
  table.policy = policy == "mode" ? PredictionPolicy::Mode : PredictionPolicy::Mean;
  table.mass = j.at("mass").get<std::vector<double>>();
  table.zero_mass = j.at("zero_mass").get<std::vector<std::uint8_t>>();
  const json& rows = j.at("values");
  if (rows.empty()) throw ModelIoError("region table has no rows");
  table.values = Matrix(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto row = rows[r].get<std::vector<double>>();
    if (row.size() != table.values.cols) throw ModelIoError("ragged region table");
    std::copy(row.begin(), row.end(), table.values.row(r).begin());
  }
  if (table.mass.size() != table.values.rows ||
      table.zero_mass.size() != table.values.rows)
    throw ModelIoError("region table size mismatch");
  return table;
}

void write_document(const std::string& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelIoError("cannot open for writing: " + path);
  out << doc.dump(2) << '\n';
}

json read_document(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelIoError("cannot open: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ModelIoError("invalid model document " + path + ": " + e.what());
  }
  return doc;
}

json node_to_json(const NDTNode& node) {
  json j{{"depth", node.depth}, {"index", node.index}, {"mass", node.mass}};
  if (node.is_leaf()) {
    j["leaf"] = true;
    j["value"] = node.leaf_value;
  } else {
    j["leaf"] = false;
    j["split"] = stack_to_json(node.split_net.layers);
    j["left"] = node_to_json(*node.left);
    j["right"] = node_to_json(*node.right);
  }
  return j;
}

std::unique_ptr<NDTNode> node_from_json(const json& j) {
  auto node = std::make_unique<NDTNode>();
  node->depth = j.at("depth").get<std::size_t>();
  node->index = j.at("index").get<std::size_t>();
  node->mass = j.at("mass").get<double>();
  if (j.at("leaf").get<bool>()) {
    node->leaf_value = j.at("value").get<std::vector<double>>();
  } else {
    node->split_net = Network{stack_from_json(j.at("split"))};
    node->left = node_from_json(j.at("left"));
    node->right = node_from_json(j.at("right"));
  }
  return node;
}

}  // namespace

void save_model(const std::string& path, const Network& net,
                const RegionTable* table) {
  json doc{{"version", kModelVersion},
           {"kind", "network"},
           {"layers", stack_to_json(net.layers)}};
  if (table != nullptr) doc["region_table"] = table_to_json(*table);
  write_document(path, doc);
}

void save_model(const std::string& path, const Autoencoder& ae,
                const RegionTable* table) {
  json doc{{"version", kModelVersion},
           {"kind", "autoencoder"},
           {"encoder", stack_to_json(ae.encoder)},
           {"decoder", stack_to_json(ae.decoder)},
           {"head", stack_to_json(ae.head.layers)}};
  if (table != nullptr) doc["region_table"] = table_to_json(*table);
  write_document(path, doc);
}

void save_model(const std::string& path, const NDTree& tree) {
  tree.validate();
  json doc{{"version", kTreeVersion},
           {"policy", tree.policy == PredictionPolicy::Mode ? "mode" : "mean"},
           {"input_dim", tree.input_dim},
           {"value_dim", tree.value_dim},
           {"root", node_to_json(*tree.root)}};
  write_document(path, doc);
}

LoadedModel load_model(const std::string& path) {
  const json doc = read_document(path);
  const std::string version = doc.value("version", "");

  try {
    if (version == kModelVersion) {
      LoadedModel loaded;
      const std::string kind = doc.at("kind").get<std::string>();
      if (kind == "network") {
        Network net{stack_from_json(doc.at("layers"))};
        net.validate();
        loaded.model = std::move(net);
      } else if (kind == "autoencoder") {
        Autoencoder ae;
        ae.encoder = stack_from_json(doc.at("encoder"));
        ae.decoder = stack_from_json(doc.at("decoder"));
        ae.head = Network{stack_from_json(doc.at("head"))};
        ae.validate();
        loaded.model = std::move(ae);
      } else {
        throw ModelIoError("unknown model kind: " + kind);
      }
      if (doc.contains("region_table"))
        loaded.table = table_from_json(doc.at("region_table"));
      return loaded;
    }
    if (version == kTreeVersion) {
      NDTree tree;
      const std::string policy = doc.at("policy").get<std::string>();
      tree.policy = policy == "mode" ? PredictionPolicy::Mode : PredictionPolicy::Mean;
      tree.input_dim = doc.at("input_dim").get<std::size_t>();
      tree.value_dim = doc.at("value_dim").get<std::size_t>();
      tree.root = node_from_json(doc.at("root"));
      tree.validate();
      LoadedModel loaded;
      loaded.model = std::move(tree);
      return loaded;
    }
  } catch (const json::exception& e) {
    throw ModelIoError("invalid model document " + path + ": " + e.what());
  }
  throw ModelIoError("unsupported model version in " + path + ": '" + version + "'");
}

void write_history_jsonl(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelIoError("cannot open for writing: " + path);
  for (const HistoryRecord& rec : history.records) {
    json j{{"iter", rec.iter},
           {"loss_total", rec.loss_total},
           {"loss_data", rec.loss_data},
           {"reg_uniform", rec.reg_uniform},
           {"reg_l2", rec.reg_l2},
           {"mass", rec.mass}};
    if (rec.train_acc) j["train_acc"] = *rec.train_acc;
    out << j.dump() << '\n';
  }
}

}  // namespace ndthash
