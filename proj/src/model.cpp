#include "evx/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "evx/error.hpp"
#include "evx/random.hpp"

#ifndef EVX_SOURCE_WEIGHTS_DIR
#define EVX_SOURCE_WEIGHTS_DIR "weights"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx {

void ModelConfig::validate() const {
  if (num_classes < 2) fail(ErrorCode::ConfigError, "num_classes must be at least 2");
  if (input_size < 4) fail(ErrorCode::ConfigError, "input_size must be at least 4");
  if (epochs == 0) fail(ErrorCode::ConfigError, "epochs must be positive");
  if (batch_size == 0) fail(ErrorCode::ConfigError, "batch_size must be positive");
  if (!(lr_backbone >= 0.0) || !(lr_head > 0.0)) {
    fail(ErrorCode::ConfigError, "learning rates must be non-negative and finite");
  }
  if (!(lr_backbone < lr_head)) {
    fail(ErrorCode::ConfigError, "lr_backbone must be smaller than lr_head");
  }
}

json config_to_json(const ModelConfig& c) {
  return {{"backbone_id", c.backbone_id}, {"input_size", c.input_size},
          {"num_classes", c.num_classes}, {"target_layer", c.target_layer},
          {"lr_backbone", c.lr_backbone}, {"lr_head", c.lr_head},
          {"epochs", c.epochs},           {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const json& doc) {
  ModelConfig c;
  c.backbone_id = doc.at("backbone_id").get<std::string>();
  c.input_size = doc.at("input_size").get<std::size_t>();
  c.num_classes = doc.at("num_classes").get<std::size_t>();
  c.target_layer = doc.at("target_layer").get<std::string>();
  c.lr_backbone = doc.at("lr_backbone").get<double>();
  c.lr_head = doc.at("lr_head").get<double>();
  c.epochs = doc.at("epochs").get<std::size_t>();
  c.batch_size = doc.at("batch_size").get<std::size_t>();
  c.seed = doc.value("seed", std::uint64_t{13});
  return c;
}

// --- bundle -------------------------------------------------------------------

std::size_t ModelBundle::target_activation_index() const {
  const auto idx = network.find(config.target_layer);
  if (!idx) {
    fail(ErrorCode::UnknownLayer, "target layer '" + config.target_layer + "' not in network");
  }
  return *idx + 1;
}

bool ModelBundle::has_gap_dense_head() const {
  const std::size_t first = target_activation_index();
  return network.size() == first + 2 &&
         network.layer(first).kind() == LayerKind::GlobalAvgPool &&
         network.layer(first + 1).kind() == LayerKind::Dense;
}

const Dense& ModelBundle::classifier() const {
  if (network.size() == 0 || network.layer(network.size() - 1).kind() != LayerKind::Dense) {
    fail(ErrorCode::UnsupportedHead, "network does not end in a dense layer");
  }
  return static_cast<const Dense&>(network.layer(network.size() - 1));
}

void ModelBundle::check_input(const Tensor& images) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config.input_size || s[2] != config.input_size || s[3] != 3) {
    fail(ErrorCode::ShapeMismatch,
         "expected B x " + std::to_string(config.input_size) + " x " +
             std::to_string(config.input_size) + " x 3 input, got " + shape_string(s));
  }
}

Tensor ModelBundle::logits(const Tensor& images) const {
  check_input(images);
  return network.forward(images);
}

// --- backbones ----------------------------------------------------------------

std::vector<BackboneInfo> available_backbones() {
  return {
      {"evnet-shapes", "evnet pretrained on the synthetic primitives corpus", "block4_conv_act"},
      {"evnet-scratch", "evnet with seeded He initialisation", "block4_conv_act"},
      {"file:<path>", "backbone layers of an existing checkpoint", "(from checkpoint)"},
  };
}

fs::path weights_directory() {
  if (const char* env = std::getenv("EVX_WEIGHTS_DIR"); env && *env) return env;
  return EVX_SOURCE_WEIGHTS_DIR;
}

Network make_evnet_backbone(const EvnetWidths& widths) {
  Network net;
  auto add = [&net](std::unique_ptr<Layer> layer) { net.add(std::move(layer), ParamGroup::Backbone); };
  add(std::make_unique<Conv2D>("block1_conv", 3, widths.block1));
  add(std::make_unique<ReLU>("block1_conv_act"));
  add(std::make_unique<MaxPool2D>("block1_pool"));
  add(std::make_unique<Conv2D>("block2_conv", widths.block1, widths.block2));
  add(std::make_unique<ReLU>("block2_conv_act"));
  add(std::make_unique<MaxPool2D>("block2_pool"));
  add(std::make_unique<Conv2D>("block3_conv", widths.block2, widths.block3));
  add(std::make_unique<ReLU>("block3_conv_act"));
  add(std::make_unique<MaxPool2D>("block3_pool"));
  add(std::make_unique<Conv2D>("block4_conv", widths.block3, widths.block4));
  add(std::make_unique<ReLU>("block4_conv_act"));
  return net;
}

namespace {

Network backbone_of(const ModelBundle& bundle) {
  Network net;
  for (std::size_t i = 0; i < bundle.network.size(); ++i) {
    if (bundle.network.group(i) == ParamGroup::Backbone) {
      net.add(bundle.network.layer(i).clone(), ParamGroup::Backbone);
    }
  }
  return net;
}

Network load_pretrained(const fs::path& path, const std::string& id) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) {
    fail(ErrorCode::UnknownBackbone, "backbone '" + id + "' has no weights at " + path.string() +
                                         " (generate them with `evx pretrain`)");
  }
  return backbone_of(load_checkpoint(path));
}

std::string default_target_layer(const Network& backbone) {
  // Last activation that directly follows a convolution, else the last conv.
  for (std::size_t i = backbone.size(); i-- > 1;) {
    if (backbone.layer(i).kind() == LayerKind::ReLU &&
        backbone.layer(i - 1).kind() == LayerKind::Conv2D) {
      return backbone.layer(i).name();
    }
  }
  for (std::size_t i = backbone.size(); i-- > 0;) {
    if (backbone.layer(i).kind() == LayerKind::Conv2D) return backbone.layer(i).name();
  }
  fail(ErrorCode::UnknownLayer, "backbone has no convolutional layer");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

ModelBundle assemble(const ModelConfig& config, Network backbone,
                     std::vector<std::string> class_names, HeadInit head_init) {
  config.validate();
  ModelBundle bundle;
  bundle.config = config;
  if (bundle.config.target_layer.empty()) {
    bundle.config.target_layer = default_target_layer(backbone);
  } else if (!backbone.find(bundle.config.target_layer)) {
    fail(ErrorCode::UnknownLayer, "unknown target layer '" + bundle.config.target_layer +
                                      "'; available: " + join(backbone.layer_names()));
  }
  if (class_names.empty()) {
    for (std::size_t c = 0; c < config.num_classes; ++c) {
      class_names.push_back("class_" + std::to_string(c));
    }
  }
  if (class_names.size() != config.num_classes) {
    fail(ErrorCode::ClassCountMismatch, "got " + std::to_string(class_names.size()) +
                                            " class names for num_classes=" +
                                            std::to_string(config.num_classes));
  }
  bundle.class_names = std::move(class_names);

  const Shape features = backbone.output_shape({1, config.input_size, config.input_size, 3});
  if (features.size() != 4) fail(ErrorCode::ShapeMismatch, "backbone must end in a feature map");

  auto dense = std::make_unique<Dense>("predictions", features[3], config.num_classes);
  if (head_init == HeadInit::GlorotUniform) {
    Rng rng(config.seed ^ 0xD1B54A32D192ED03ULL);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(dense->in_features() + dense->out_features()));
    for (double& w : dense->weight().values()) w = rng.uniform(-limit, limit);
  }

  bundle.network = std::move(backbone);
  bundle.network.add(std::make_unique<GlobalAvgPool>("head_gap"), ParamGroup::Head);
  bundle.network.add(std::move(dense), ParamGroup::Head);
  return bundle;
}

ModelBundle build(const ModelConfig& config, std::vector<std::string> class_names) {
  config.validate();
  const std::string& id = config.backbone_id;
  Network backbone;
  if (id == "evnet-scratch") {
    backbone = make_evnet_backbone();
    Rng rng(config.seed);
    for (std::size_t i = 0; i < backbone.size(); ++i) init_he_normal(backbone.layer(i), rng);
  } else if (id == "evnet-shapes") {
    backbone = load_pretrained(weights_directory() / "evnet-shapes.ckpt", id);
  } else if (id.rfind("file:", 0) == 0) {
    backbone = load_pretrained(id.substr(5), id);
  } else {
    std::vector<std::string> ids;
    for (const auto& b : available_backbones()) ids.push_back(b.id);
    fail(ErrorCode::UnknownBackbone, "unknown backbone '" + id + "'; available: " + join(ids));
  }
  // A random head on top of pretrained features starts with large, wrong
  // logits that the small head learning rate takes most of the run to undo.
  const HeadInit head = id == "evnet-scratch" ? HeadInit::GlorotUniform : HeadInit::Zeros;
  return assemble(config, std::move(backbone), std::move(class_names), head);
}

Prediction predict(const ModelBundle& bundle, const Tensor& images) {
  Prediction out;
  out.probabilities = softmax(bundle.logits(images));
  const std::size_t classes = out.probabilities.dim(1);
  for (std::size_t r = 0; r < out.probabilities.dim(0); ++r) {
    const std::span<const double> row(out.probabilities.data() + r * classes, classes);
    out.class_ids.push_back(static_cast<int>(argmax(row)));
  }
  return out;
}

// --- checkpoints --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'V', 'X', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const fs::path& path) {
  json layers = json::array();
  json tensors = json::array();
  std::vector<const Tensor*> order;
  for (std::size_t i = 0; i < bundle.network.size(); ++i) {
    const Layer& layer = bundle.network.layer(i);
    json lc = layer.config();
    lc["group"] = bundle.network.group(i) == ParamGroup::Backbone ? "backbone" : "head";
    layers.push_back(std::move(lc));
    const auto params = layer.params();
    const auto names = layer.param_names();
    for (std::size_t p = 0; p < params.size(); ++p) {
      tensors.push_back({{"layer", layer.name()}, {"param", names[p]}, {"shape", params[p]->shape()}});
      order.push_back(params[p]);
    }
  }
  const json header = {{"format", "evx-checkpoint"},
                       {"version", 1},
                       {"config", config_to_json(bundle.config)},
                       {"class_names", bundle.class_names},
                       {"layers", std::move(layers)},
                       {"tensors", std::move(tensors)}};
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t length = text.size();
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Tensor* t : order) {
    out.write(reinterpret_cast<const char*>(t->data()),
              static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) fail(ErrorCode::IoError, "cannot write checkpoint " + path.string());
}

ModelBundle load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  char magic[sizeof kMagic] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    fail(ErrorCode::FormatError, path.string() + " is not an evx checkpoint");
  }
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || length > (1ULL << 30)) fail(ErrorCode::FormatError, "corrupt checkpoint header");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) fail(ErrorCode::FormatError, "truncated checkpoint header");

  try {
    const json header = json::parse(text);
    ModelBundle bundle;
    bundle.config = config_from_json(header.at("config"));
    bundle.class_names = header.at("class_names").get<std::vector<std::string>>();
    for (const auto& lc : header.at("layers")) {
      const auto group = lc.at("group").get<std::string>() == "head" ? ParamGroup::Head
                                                                       : ParamGroup::Backbone;
      bundle.network.add(layer_from_config(lc), group);
    }
    std::vector<Tensor> values;
    for (const auto& tc : header.at("tensors")) {
      Tensor t(tc.at("shape").get<Shape>());
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) fail(ErrorCode::FormatError, "truncated checkpoint data");
      values.push_back(std::move(t));
    }
    bundle.network.restore(values);
    return bundle;
  } catch (const json::exception& e) {
    fail(ErrorCode::FormatError, std::string("malformed checkpoint header: ") + e.what());
  }
}

}  // namespace evx
