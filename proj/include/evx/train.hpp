#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "evx/dataset.hpp"
#include "evx/model.hpp"
#include "json.hpp"

namespace evx {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Adam with one learning rate per parameter group.
class Adam {
 public:
  Adam(const Network& network, double lr_backbone, double lr_head, AdamOptions options = {});

  void step(Network& network, const ParamGrads& grads);
  void reset();
  std::size_t steps() const noexcept { return steps_; }

 private:
  double lr_backbone_;
  double lr_head_;
  AdamOptions options_;
  std::size_t steps_ = 0;
  ParamGrads m_;
  ParamGrads v_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_weighted_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_f1 = 0.0;
  double wall_seconds = 0.0;
};

nlohmann::json epoch_to_json(const EpochRecord& record);

struct FinetuneOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  std::size_t eval_batch_size = 64;
};

// Runs config.epochs passes over the train split with Adam, backbone
// parameters at lr_backbone and head parameters at lr_head, and leaves the
// bundle holding the weights of the epoch with the best validation
// weighted-F1 (the train split stands in when there is no validation split).
TrainRecord finetune(ModelBundle& bundle, const DatasetManifest& manifest,
                     const FinetuneOptions& options = {});

struct PretrainOptions {
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 7;
  std::function<void(std::size_t epoch, double loss, double accuracy)> on_epoch;
};

// Trains every layer of `bundle` at a single learning rate on in-memory data.
// Used to produce backbone weights that later fine-tuning starts from.
void pretrain(ModelBundle& bundle, const Tensor& images, std::span<const int> labels,
              const PretrainOptions& options);

// Recipe behind the shipped "evnet-shapes" weights: evnet trained from
// scratch on the synthetic primitives corpus, then feature-calibrated.
struct ShapesPretrainRecipe {
  std::size_t per_class = 300;
  std::size_t image_size = 64;
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t corpus_seed = 99;
  std::uint64_t init_seed = 13;
};

ModelBundle pretrain_shapes_backbone(
    const ShapesPretrainRecipe& recipe = {},
    std::function<void(std::size_t epoch, double loss, double accuracy)> on_epoch = {});

// Rescales each output channel of the convolution feeding the target layer
// so its globally pooled activation averages `target_mean` over `images`.
// ReLU is positively homogeneous, so dividing the matching dense rows by the
// same factors leaves the network's logits unchanged. Channels that never
// fire are left alone. Returns the per-channel factors.
std::vector<double> calibrate_feature_scale(ModelBundle& bundle, const Tensor& images,
                                            double target_mean = 1.0);

}  // namespace evx
