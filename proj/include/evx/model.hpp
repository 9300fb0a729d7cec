#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evx/nn.hpp"
#include "evx/tensor.hpp"
#include "json.hpp"

namespace evx {

struct ModelConfig {
  std::string backbone_id = "evnet-shapes";
  std::size_t input_size = 299;
  std::size_t num_classes = 2;
  std::string target_layer;  // empty selects the backbone's last conv activation
  double lr_backbone = 1e-5;
  double lr_head = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 120;
  std::uint64_t seed = 13;

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& doc);

// Backbone layers followed by the classification head (global average pooling
// and one dense layer). The target layer is addressed by name.
struct ModelBundle {
  ModelConfig config;
  std::vector<std::string> class_names;
  Network network;

  // Index into Network::trace() of the target layer's output.
  std::size_t target_activation_index() const;

  // True when the layers after the target are exactly GAP then Dense.
  bool has_gap_dense_head() const;
  const Dense& classifier() const;

  Tensor logits(const Tensor& images) const;
  void check_input(const Tensor& images) const;
};

struct BackboneInfo {
  std::string id;
  std::string description;
  std::string default_target_layer;
};

std::vector<BackboneInfo> available_backbones();

// Directory searched for shipped pretrained weights: $EVX_WEIGHTS_DIR, else the
// weights/ directory of the source tree.
std::filesystem::path weights_directory();

// Layers of the "evnet" family without the head. Widths are configurable so
// tests can build small random nets.
struct EvnetWidths {
  std::size_t block1 = 16;
  std::size_t block2 = 32;
  std::size_t block3 = 32;
  std::size_t block4 = 32;
};
Network make_evnet_backbone(const EvnetWidths& widths = {});

// Resolves config.backbone_id to backbone weights, appends a freshly
// initialised head and validates the target layer. Backbone ids:
//   evnet-shapes    evnet pretrained on the synthetic primitives corpus
//   evnet-scratch   evnet with seeded He initialisation (no pretraining)
//   file:<path>     backbone layers of an existing checkpoint
ModelBundle build(const ModelConfig& config, std::vector<std::string> class_names = {});

enum class HeadInit { Zeros, GlorotUniform };

// Attaches GAP + dense head to a backbone; exposed for custom networks.
// build() uses zeros for pretrained backbones and Glorot-uniform (seeded by
// config.seed) for evnet-scratch.
ModelBundle assemble(const ModelConfig& config, Network backbone,
                     std::vector<std::string> class_names = {},
                     HeadInit head_init = HeadInit::GlorotUniform);

struct Prediction {
  std::vector<int> class_ids;
  Tensor probabilities;  // B x num_classes, rows sum to 1
};

Prediction predict(const ModelBundle& bundle, const Tensor& images);

// Single-file archive: magic, JSON header (config, class names, layer
// configs, tensor table) and little-endian float64 parameter data.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);

}  // namespace evx
