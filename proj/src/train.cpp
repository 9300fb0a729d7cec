#include "evx/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "evx/error.hpp"
#include "evx/evaluation.hpp"
#include "evx/random.hpp"
#include "evx/synth.hpp"

namespace evx {

Adam::Adam(const Network& network, double lr_backbone, double lr_head, AdamOptions options)
    : lr_backbone_(lr_backbone),
      lr_head_(lr_head),
      options_(options),
      m_(network.zero_grads()),
      v_(network.zero_grads()) {}

void Adam::reset() {
  steps_ = 0;
  for (auto* state : {&m_, &v_}) {
    for (auto& layer : *state) {
      for (auto& t : layer) t.fill(0.0);
    }
  }
}

void Adam::step(Network& network, const ParamGrads& grads) {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < network.size(); ++i) {
    const double lr =
        network.group(i) == ParamGroup::Backbone ? lr_backbone_ : lr_head_;
    auto params = network.layer(i).params();
    for (std::size_t p = 0; p < params.size(); ++p) {
      double* w = params[p]->data();
      const double* g = grads[i][p].data();
      double* m = m_[i][p].data();
      double* v = v_[i][p].data();
      for (std::size_t k = 0; k < params[p]->size(); ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
        const double m_hat = m[k] / correction1;
        const double v_hat = v[k] / correction2;
        w[k] -= lr * m_hat / (std::sqrt(v_hat) + options_.epsilon);
      }
    }
  }
}

nlohmann::json epoch_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_weighted_f1", r.val_weighted_f1},
          {"seconds", r.seconds}};
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// One optimisation step; returns the mean batch loss.
double train_step(ModelBundle& bundle, Adam& adam, const Tensor& images,
                  std::span<const int> labels) {
  const auto acts = bundle.network.trace(images);
  const LossResult loss = softmax_cross_entropy(acts.back(), labels);
  if (!std::isfinite(loss.loss)) return loss.loss;
  ParamGrads grads = bundle.network.zero_grads();
  bundle.network.backward(acts, loss.grad_logits, 0, &grads);
  adam.step(bundle.network, grads);
  return loss.loss;
}

}  // namespace

TrainRecord finetune(ModelBundle& bundle, const DatasetManifest& manifest,
                     const FinetuneOptions& options) {
  const ModelConfig& config = bundle.config;
  config.validate();
  if (manifest.classes.size() != config.num_classes) {
    fail(ErrorCode::ClassCountMismatch,
         "manifest has " + std::to_string(manifest.classes.size()) +
             " classes but the model was built for " + std::to_string(config.num_classes));
  }
  const std::size_t n_train = manifest.split_size(Split::Train);
  if (n_train == 0) fail(ErrorCode::EmptySplit, "train split is empty");
  const Split selection_split = manifest.split_size(Split::Val) > 0 ? Split::Val : Split::Train;
  bundle.class_names = manifest.class_names();

  const auto wall_start = Clock::now();
  Adam adam(bundle.network, config.lr_backbone, config.lr_head);
  TrainRecord record;
  std::vector<Tensor> best_weights;
  double best_f1 = -1.0;

  std::vector<std::size_t> order(n_train);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
    Rng rng(config.seed * 1000003ULL + epoch);
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t end = std::min(n_train, start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = load_batch(manifest, Split::Train, idx, config.input_size);
      const double loss = train_step(bundle, adam, batch.images, batch.labels);
      if (!std::isfinite(loss)) {
        fail(ErrorCode::DivergedLoss, "non-finite loss in epoch " + std::to_string(epoch));
      }
      loss_sum += loss * static_cast<double>(idx.size());
      seen += idx.size();
    }

    EpochRecord er;
    er.epoch = epoch;
    er.train_loss = loss_sum / static_cast<double>(seen);
    er.val_weighted_f1 =
        evaluate(bundle, manifest, selection_split, options.eval_batch_size).weighted_avg.f1;
    er.seconds = seconds_since(epoch_start);
    if (er.val_weighted_f1 > best_f1) {
      best_f1 = er.val_weighted_f1;
      best_weights = bundle.network.snapshot();
      record.best_epoch = epoch;
    }
    record.epochs.push_back(er);
    if (options.on_epoch) options.on_epoch(er);
  }
  bundle.network.restore(best_weights);
  record.best_val_f1 = best_f1;
  record.wall_seconds = seconds_since(wall_start);
  return record;
}

void pretrain(ModelBundle& bundle, const Tensor& images, std::span<const int> labels,
              const PretrainOptions& options) {
  bundle.check_input(images);
  const std::size_t n = images.dim(0);
  if (n != labels.size() || n == 0) fail(ErrorCode::ShapeMismatch, "images and labels disagree");
  if (options.epochs == 0 || options.batch_size == 0) {
    fail(ErrorCode::ConfigError, "pretraining needs positive epochs and batch size");
  }
  Adam adam(bundle.network, options.learning_rate, options.learning_rate);
  const std::size_t s = bundle.config.input_size;
  const std::size_t stride = s * s * 3;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(options.seed * 1000003ULL + epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      Tensor batch({end - start, s, s, 3});
      std::vector<int> batch_labels;
      for (std::size_t b = start; b < end; ++b) {
        std::copy_n(images.data() + order[b] * stride, stride,
                    batch.data() + (b - start) * stride);
        batch_labels.push_back(labels[order[b]]);
      }
      const auto acts = bundle.network.trace(batch);
      const LossResult loss = softmax_cross_entropy(acts.back(), batch_labels);
      if (!std::isfinite(loss.loss)) {
        fail(ErrorCode::DivergedLoss, "non-finite loss in pretraining epoch " +
                                          std::to_string(epoch));
      }
      const std::size_t classes = acts.back().dim(1);
      for (std::size_t b = 0; b < batch_labels.size(); ++b) {
        const std::span<const double> row(acts.back().data() + b * classes, classes);
        if (static_cast<int>(argmax(row)) == batch_labels[b]) ++correct;
      }
      ParamGrads grads = bundle.network.zero_grads();
      bundle.network.backward(acts, loss.grad_logits, 0, &grads);
      adam.step(bundle.network, grads);
      loss_sum += loss.loss * static_cast<double>(batch_labels.size());
    }
    if (options.on_epoch) {
      options.on_epoch(epoch, loss_sum / static_cast<double>(n),
                       static_cast<double>(correct) / static_cast<double>(n));
    }
  }
}

std::vector<double> calibrate_feature_scale(ModelBundle& bundle, const Tensor& images,
                                            double target_mean) {
  bundle.check_input(images);
  if (!(target_mean > 0.0)) fail(ErrorCode::ParamError, "target_mean must be positive");
  const std::size_t target = bundle.target_activation_index();
  // The target activation is ReLU(conv(...)): layer target-1 is the ReLU.
  Conv2D* conv = target >= 2 ? dynamic_cast<Conv2D*>(&bundle.network.layer(target - 2)) : nullptr;
  if (conv == nullptr || bundle.network.layer(target - 1).kind() != LayerKind::ReLU) {
    fail(ErrorCode::UnsupportedHead, "feature calibration needs a conv + ReLU target layer");
  }
  const std::size_t k = conv->out_channels();
  const std::size_t n = images.dim(0), s = bundle.config.input_size, stride = s * s * 3;
  std::vector<double> mean(k, 0.0);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    Tensor batch({end - start, s, s, 3});
    std::copy_n(images.data() + start * stride, (end - start) * stride, batch.data());
    Tensor a = batch;
    for (std::size_t i = 0; i < target; ++i) a = bundle.network.layer(i).forward(a);
    const std::size_t cells = a.dim(1) * a.dim(2);
    for (std::size_t i = 0; i < a.size(); ++i) mean[i % k] += a[i] / static_cast<double>(cells);
  }
  std::vector<double> factor(k, 1.0);
  for (std::size_t c = 0; c < k; ++c) {
    mean[c] /= static_cast<double>(n);
    if (mean[c] > 1e-12) factor[c] = target_mean / mean[c];
  }
  Tensor& kernel = conv->kernel();
  for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] *= factor[i % k];
  for (std::size_t c = 0; c < k; ++c) conv->bias()[c] *= factor[c];
  if (bundle.has_gap_dense_head()) {
    auto& dense = static_cast<Dense&>(bundle.network.layer(bundle.network.size() - 1));
    const std::size_t out = dense.out_features();
    for (std::size_t i = 0; i < dense.weight().size(); ++i) dense.weight()[i] /= factor[i / out];
  }
  return factor;
}

ModelBundle pretrain_shapes_backbone(
    const ShapesPretrainRecipe& recipe,
    std::function<void(std::size_t epoch, double loss, double accuracy)> on_epoch) {
  const Corpus corpus = make_primitive_corpus(recipe.per_class, recipe.image_size,
                                              recipe.corpus_seed);
  ModelConfig config;
  config.backbone_id = "evnet-scratch";
  config.input_size = recipe.image_size;
  config.num_classes = kPrimitiveCount;
  config.seed = recipe.init_seed;
  ModelBundle bundle = build(config, corpus.class_names);
  PretrainOptions options;
  options.epochs = recipe.epochs;
  options.batch_size = recipe.batch_size;
  options.learning_rate = recipe.learning_rate;
  options.on_epoch = std::move(on_epoch);
  pretrain(bundle, corpus.images, corpus.labels, options);
  calibrate_feature_scale(bundle, corpus.images);
  return bundle;
}

}  // namespace evx
