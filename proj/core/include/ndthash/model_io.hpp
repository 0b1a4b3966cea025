#pragma once

#include <optional>
#include <string>
#include <variant>

#include "ndthash/network.hpp"
#include "ndthash/predict.hpp"
#include "ndthash/train.hpp"
#include "ndthash/tree.hpp"

namespace ndthash {

// Model documents are self-describing JSON. Networks and autoencoders use
// version "ndt-hash/1" (layer dims, activations, row-major parameter arrays,
// optionally the fitted region table); trees use "ndt-tree/1" with nested
// nodes embedding their split networks.

struct ModelIoError : std::runtime_error {
  explicit ModelIoError(const std::string& msg) : std::runtime_error(msg) {}
};

void save_model(const std::string& path, const Network& net,
                const RegionTable* table = nullptr);
void save_model(const std::string& path, const Autoencoder& ae,
                const RegionTable* table = nullptr);
void save_model(const std::string& path, const NDTree& tree);

struct LoadedModel {
  std::variant<Network, Autoencoder, NDTree> model;
  std::optional<RegionTable> table;

  bool is_tree() const { return std::holds_alternative<NDTree>(model); }
};

LoadedModel load_model(const std::string& path);

// One JSON object per logged iteration with fields iter, loss_total,
// loss_data, reg_uniform, reg_l2, mass, and train_acc when present.
void write_history_jsonl(const std::string& path, const TrainHistory& history);

}  // namespace ndthash
