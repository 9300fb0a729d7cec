#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evx/tensor.hpp"
#include "json.hpp"

namespace evx {

class Rng;

enum class LayerKind { Conv2D, ReLU, MaxPool2D, GlobalAvgPool, Dense };

std::string_view layer_kind_name(LayerKind kind) noexcept;

// Layers hold parameters only. Activations live in a caller-owned trace, so a
// const Network can serve concurrent forward/backward passes.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const noexcept { return name_; }
  virtual LayerKind kind() const noexcept = 0;
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor forward(const Tensor& x) const = 0;

  // Given input x, output y and dL/dy, returns dL/dx. When `param_grads` is
  // non-empty the parameter gradients are accumulated into it, in the order
  // of params().
  virtual Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                          std::span<Tensor> param_grads) const = 0;

  virtual std::vector<Tensor*> params() { return {}; }
  std::vector<const Tensor*> params() const;
  virtual std::vector<std::string> param_names() const { return {}; }

  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual nlohmann::json config() const;

 private:
  std::string name_;
};

// Same-padded, stride-1 convolution. Kernel layout: k x k x in x out.
class Conv2D final : public Layer {
 public:
  Conv2D(std::string name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel_size = 3);

  LayerKind kind() const noexcept override { return LayerKind::Conv2D; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads) const override;
  std::vector<Tensor*> params() override { return {&kernel_, &bias_}; }
  std::vector<std::string> param_names() const override { return {"kernel", "bias"}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2D>(*this); }
  nlohmann::json config() const override;

  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t kernel_size() const noexcept { return k_; }
  Tensor& kernel() noexcept { return kernel_; }
  const Tensor& kernel() const noexcept { return kernel_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& bias() const noexcept { return bias_; }

 private:
  std::size_t in_, out_, k_;
  Tensor kernel_;
  Tensor bias_;
};

class ReLU final : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const noexcept override { return LayerKind::ReLU; }
  Shape output_shape(const Shape& input) const override { return input; }
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
};

// 2x2 window, stride 2, floor on odd sizes.
class MaxPool2D final : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const noexcept override { return LayerKind::MaxPool2D; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2D>(*this); }
};

// B x H x W x C -> B x C
class GlobalAvgPool final : public Layer {
 public:
  using Layer::Layer;
  LayerKind kind() const noexcept override { return LayerKind::GlobalAvgPool; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads) const override;
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<GlobalAvgPool>(*this);
  }
};

// B x in -> B x out, weight layout in x out.
class Dense final : public Layer {
 public:
  Dense(std::string name, std::size_t in_features, std::size_t out_features);

  LayerKind kind() const noexcept override { return LayerKind::Dense; }
  Shape output_shape(const Shape& input) const override;
  Tensor forward(const Tensor& x) const override;
  Tensor backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                  std::span<Tensor> param_grads) const override;
  std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
  std::vector<std::string> param_names() const override { return {"weight", "bias"}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  nlohmann::json config() const override;

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }
  Tensor& weight() noexcept { return weight_; }
  const Tensor& weight() const noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& bias() const noexcept { return bias_; }

 private:
  std::size_t in_, out_;
  Tensor weight_;
  Tensor bias_;
};

std::unique_ptr<Layer> layer_from_config(const nlohmann::json& config);

// He-normal kernels, zero biases.
void init_he_normal(Layer& layer, Rng& rng);

enum class ParamGroup { Backbone, Head };

// Per layer, per parameter gradient buffers, shaped like the parameters.
using ParamGrads = std::vector<std::vector<Tensor>>;

class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;
  ~Network() = default;

  void add(std::unique_ptr<Layer> layer, ParamGroup group);

  std::size_t size() const noexcept { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  ParamGroup group(std::size_t i) const { return groups_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::vector<std::string> layer_names() const;

  Shape output_shape(const Shape& input) const;
  Tensor forward(const Tensor& x) const;

  // activations[0] is the input; activations[i + 1] is the output of layer i.
  std::vector<Tensor> trace(const Tensor& x) const;

  // Runs layers [first_layer, size()) on `activation`.
  Tensor forward_from(std::size_t first_layer, const Tensor& activation) const;

  // Backpropagates `grad_output` (dL/d final output) down to activation
  // index `stop` and returns dL/d activations[stop]. Parameter gradients of
  // the traversed layers are accumulated into `grads` when provided.
  Tensor backward(const std::vector<Tensor>& trace, const Tensor& grad_output,
                  std::size_t stop = 0, ParamGrads* grads = nullptr) const;

  ParamGrads zero_grads() const;
  std::size_t parameter_count() const;

  // Flat copy of every parameter tensor, used to keep the best weights.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<ParamGroup> groups_;
};

// Row-wise softmax of a B x C tensor.
Tensor softmax(const Tensor& logits);

// Mean categorical cross-entropy and its gradient w.r.t. the logits.
struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> row);

}  // namespace evx
