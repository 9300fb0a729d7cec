#include "evx/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evx/error.hpp"
#include "evx/random.hpp"

using nlohmann::json;

namespace evx {

std::string_view layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Dense: return "dense";
  }
  return "unknown";
}

std::vector<const Tensor*> Layer::params() const {
  auto mutable_params = const_cast<Layer*>(this)->params();
  return {mutable_params.begin(), mutable_params.end()};
}

json Layer::config() const {
  return {{"kind", layer_kind_name(kind())}, {"name", name()}};
}

namespace {

void require_rank(const Shape& shape, std::size_t rank, const std::string& layer) {
  if (shape.size() != rank) {
    fail(ErrorCode::ShapeMismatch, "layer '" + layer + "' expects rank " +
                                       std::to_string(rank) + " input, got " +
                                       shape_string(shape));
  }
}

}  // namespace

// --- Conv2D -----------------------------------------------------------------

Conv2D::Conv2D(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel_size)
    : Layer(std::move(name)),
      in_(in_channels),
      out_(out_channels),
      k_(kernel_size),
      kernel_({kernel_size, kernel_size, in_channels, out_channels}),
      bias_({out_channels}) {
  if (kernel_size % 2 == 0 || in_channels == 0 || out_channels == 0) {
    fail(ErrorCode::ConfigError, "conv2d needs an odd kernel and non-zero channels");
  }
}

Shape Conv2D::output_shape(const Shape& input) const {
  require_rank(input, 4, name());
  if (input[3] != in_) {
    fail(ErrorCode::ShapeMismatch, "layer '" + name() + "' expects " + std::to_string(in_) +
                                       " channels, got " + shape_string(input));
  }
  return {input[0], input[1], input[2], out_};
}

Tensor Conv2D::forward(const Tensor& x) const {
  const Shape out_shape = output_shape(x.shape());
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
  Tensor y(out_shape);
  const double* kernel = kernel_.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < h; ++oy) {
      for (std::size_t ox = 0; ox < w; ++ox) {
        double* out = &y.at(n, oy, ox, 0);
        std::copy_n(bias_.data(), out_, out);
        for (std::size_t ky = 0; ky < k_; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* in = &x.at(n, static_cast<std::size_t>(iy),
                                     static_cast<std::size_t>(ix), 0);
            const double* tap = kernel + (ky * k_ + kx) * in_ * out_;
            for (std::size_t ci = 0; ci < in_; ++ci) {
              const double v = in[ci];
              const double* wrow = tap + ci * out_;
              for (std::size_t co = 0; co < out_; ++co) out[co] += v * wrow[co];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2D::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                        std::span<Tensor> param_grads) const {
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k_ / 2);
  const bool want_params = !param_grads.empty();
  Tensor dx(x.shape());
  const double* kernel = kernel_.data();
  double* dkernel = want_params ? param_grads[0].data() : nullptr;
  double* dbias = want_params ? param_grads[1].data() : nullptr;
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oy = 0; oy < h; ++oy) {
      for (std::size_t ox = 0; ox < w; ++ox) {
        const double* g = &dy.at(n, oy, ox, 0);
        if (want_params) {
          for (std::size_t co = 0; co < out_; ++co) dbias[co] += g[co];
        }
        for (std::size_t ky = 0; ky < k_; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const auto uy = static_cast<std::size_t>(iy);
            const auto ux = static_cast<std::size_t>(ix);
            const double* in = &x.at(n, uy, ux, 0);
            double* din = &dx.at(n, uy, ux, 0);
            const std::size_t tap = (ky * k_ + kx) * in_ * out_;
            for (std::size_t ci = 0; ci < in_; ++ci) {
              const double* wrow = kernel + tap + ci * out_;
              double acc = 0.0;
              for (std::size_t co = 0; co < out_; ++co) acc += wrow[co] * g[co];
              din[ci] += acc;
              if (want_params) {
                double* dwrow = dkernel + tap + ci * out_;
                const double v = in[ci];
                for (std::size_t co = 0; co < out_; ++co) dwrow[co] += v * g[co];
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

json Conv2D::config() const {
  json c = Layer::config();
  c["in_channels"] = in_;
  c["out_channels"] = out_;
  c["kernel_size"] = k_;
  return c;
}

// --- ReLU -------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) const {
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                      std::span<Tensor> /*param_grads*/) const {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

// --- MaxPool2D --------------------------------------------------------------

Shape MaxPool2D::output_shape(const Shape& input) const {
  require_rank(input, 4, name());
  if (input[1] < 2 || input[2] < 2) {
    fail(ErrorCode::ShapeMismatch, "layer '" + name() + "' needs spatial size >= 2");
  }
  return {input[0], input[1] / 2, input[2] / 2, input[3]};
}

Tensor MaxPool2D::forward(const Tensor& x) const {
  const Shape s = output_shape(x.shape());
  Tensor y(s);
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t oy = 0; oy < s[1]; ++oy) {
      for (std::size_t ox = 0; ox < s[2]; ++ox) {
        for (std::size_t c = 0; c < s[3]; ++c) {
          double best = x.at(n, 2 * oy, 2 * ox, c);
          best = std::max(best, x.at(n, 2 * oy, 2 * ox + 1, c));
          best = std::max(best, x.at(n, 2 * oy + 1, 2 * ox, c));
          best = std::max(best, x.at(n, 2 * oy + 1, 2 * ox + 1, c));
          y.at(n, oy, ox, c) = best;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2D::backward(const Tensor& x, const Tensor& y, const Tensor& dy,
                           std::span<Tensor> /*param_grads*/) const {
  Tensor dx(x.shape());
  const Shape& s = y.shape();
  for (std::size_t n = 0; n < s[0]; ++n) {
    for (std::size_t oy = 0; oy < s[1]; ++oy) {
      for (std::size_t ox = 0; ox < s[2]; ++ox) {
        for (std::size_t c = 0; c < s[3]; ++c) {
          // Route to the first window element holding the max.
          const double target = y.at(n, oy, ox, c);
          bool routed = false;
          for (std::size_t dyy = 0; dyy < 2 && !routed; ++dyy) {
            for (std::size_t dxx = 0; dxx < 2 && !routed; ++dxx) {
              if (x.at(n, 2 * oy + dyy, 2 * ox + dxx, c) == target) {
                dx.at(n, 2 * oy + dyy, 2 * ox + dxx, c) += dy.at(n, oy, ox, c);
                routed = true;
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

// --- GlobalAvgPool ----------------------------------------------------------

Shape GlobalAvgPool::output_shape(const Shape& input) const {
  require_rank(input, 4, name());
  return {input[0], input[3]};
}

Tensor GlobalAvgPool::forward(const Tensor& x) const {
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor y({batch, c});
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double* in = &x.at(n, i, j, 0);
        for (std::size_t k = 0; k < c; ++k) y[n * c + k] += in[k];
      }
    }
    for (std::size_t k = 0; k < c; ++k) y[n * c + k] *= inv;
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                               std::span<Tensor> /*param_grads*/) const {
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor dx(x.shape());
  const double inv = 1.0 / static_cast<double>(h * w);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        double* out = &dx.at(n, i, j, 0);
        for (std::size_t k = 0; k < c; ++k) out[k] = dy[n * c + k] * inv;
      }
    }
  }
  return dx;
}

// --- Dense ------------------------------------------------------------------

Dense::Dense(std::string name, std::size_t in_features, std::size_t out_features)
    : Layer(std::move(name)),
      in_(in_features),
      out_(out_features),
      weight_({in_features, out_features}),
      bias_({out_features}) {
  if (in_features == 0 || out_features == 0) {
    fail(ErrorCode::ConfigError, "dense layer needs non-zero sizes");
  }
}

Shape Dense::output_shape(const Shape& input) const {
  require_rank(input, 2, name());
  if (input[1] != in_) {
    fail(ErrorCode::ShapeMismatch, "layer '" + name() + "' expects " + std::to_string(in_) +
                                       " features, got " + shape_string(input));
  }
  return {input[0], out_};
}

Tensor Dense::forward(const Tensor& x) const {
  const Shape s = output_shape(x.shape());
  Tensor y(s);
  for (std::size_t n = 0; n < s[0]; ++n) {
    double* out = y.data() + n * out_;
    std::copy_n(bias_.data(), out_, out);
    for (std::size_t i = 0; i < in_; ++i) {
      const double v = x[n * in_ + i];
      const double* wrow = weight_.data() + i * out_;
      for (std::size_t o = 0; o < out_; ++o) out[o] += v * wrow[o];
    }
  }
  return y;
}

Tensor Dense::backward(const Tensor& x, const Tensor& /*y*/, const Tensor& dy,
                       std::span<Tensor> param_grads) const {
  const std::size_t batch = x.dim(0);
  Tensor dx(x.shape());
  const bool want_params = !param_grads.empty();
  for (std::size_t n = 0; n < batch; ++n) {
    const double* g = dy.data() + n * out_;
    for (std::size_t i = 0; i < in_; ++i) {
      const double* wrow = weight_.data() + i * out_;
      double acc = 0.0;
      for (std::size_t o = 0; o < out_; ++o) acc += wrow[o] * g[o];
      dx[n * in_ + i] = acc;
      if (want_params) {
        double* dwrow = param_grads[0].data() + i * out_;
        const double v = x[n * in_ + i];
        for (std::size_t o = 0; o < out_; ++o) dwrow[o] += v * g[o];
      }
    }
    if (want_params) {
      for (std::size_t o = 0; o < out_; ++o) param_grads[1][o] += g[o];
    }
  }
  return dx;
}

json Dense::config() const {
  json c = Layer::config();
  c["in_features"] = in_;
  c["out_features"] = out_;
  return c;
}

// --- factories ----------------------------------------------------------------

std::unique_ptr<Layer> layer_from_config(const json& config) {
  const auto kind = config.at("kind").get<std::string>();
  auto name = config.at("name").get<std::string>();
  if (kind == "conv2d") {
    return std::make_unique<Conv2D>(std::move(name), config.at("in_channels").get<std::size_t>(),
                                    config.at("out_channels").get<std::size_t>(),
                                    config.at("kernel_size").get<std::size_t>());
  }
  if (kind == "relu") return std::make_unique<ReLU>(std::move(name));
  if (kind == "maxpool2d") return std::make_unique<MaxPool2D>(std::move(name));
  if (kind == "global_avg_pool") return std::make_unique<GlobalAvgPool>(std::move(name));
  if (kind == "dense") {
    return std::make_unique<Dense>(std::move(name), config.at("in_features").get<std::size_t>(),
                                   config.at("out_features").get<std::size_t>());
  }
  fail(ErrorCode::FormatError, "unknown layer kind '" + kind + "'");
}

void init_he_normal(Layer& layer, Rng& rng) {
  auto params = layer.params();
  if (params.empty()) return;
  Tensor& weight = *params[0];
  // fan-in: everything but the output axis.
  const std::size_t fan_in = weight.size() / weight.shape().back();
  const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : weight.values()) v = rng.normal() * scale;
  if (params.size() > 1) params[1]->fill(0.0);
}

// --- Network ----------------------------------------------------------------

Network::Network(const Network& other) : groups_(other.groups_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network copy(other);
    *this = std::move(copy);
  }
  return *this;
}

void Network::add(std::unique_ptr<Layer> layer, ParamGroup group) {
  if (find(layer->name())) {
    fail(ErrorCode::ConfigError, "duplicate layer name '" + layer->name() + "'");
  }
  layers_.push_back(std::move(layer));
  groups_.push_back(group);
}

std::optional<std::size_t> Network::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->name() == name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> Network::layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers_) names.push_back(l->name());
  return names;
}

Shape Network::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

Tensor Network::forward(const Tensor& x) const { return forward_from(0, x); }

Tensor Network::forward_from(std::size_t first_layer, const Tensor& activation) const {
  Tensor current = activation;
  for (std::size_t i = first_layer; i < layers_.size(); ++i) {
    current = layers_[i]->forward(current);
  }
  return current;
}

std::vector<Tensor> Network::trace(const Tensor& x) const {
  std::vector<Tensor> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(x);
  for (const auto& l : layers_) acts.push_back(l->forward(acts.back()));
  return acts;
}

Tensor Network::backward(const std::vector<Tensor>& trace, const Tensor& grad_output,
                         std::size_t stop, ParamGrads* grads) const {
  if (trace.size() != layers_.size() + 1 || stop > layers_.size()) {
    fail(ErrorCode::ShapeMismatch, "trace does not match the network");
  }
  if (grad_output.shape() != trace.back().shape()) {
    fail(ErrorCode::ShapeMismatch, "output gradient " + shape_string(grad_output.shape()) +
                                       " does not match output " +
                                       shape_string(trace.back().shape()));
  }
  Tensor grad = grad_output;
  for (std::size_t i = layers_.size(); i-- > stop;) {
    std::span<Tensor> pg;
    if (grads) pg = (*grads)[i];
    grad = layers_[i]->backward(trace[i], trace[i + 1], grad, pg);
  }
  return grad;
}

ParamGrads Network::zero_grads() const {
  ParamGrads grads(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = *layers_[i];
    for (const Tensor* p : l.params()) grads[i].emplace_back(p->shape());
  }
  return grads;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    const Layer& cl = *l;
    for (const Tensor* p : cl.params()) n += p->size();
  }
  return n;
}

std::vector<Tensor> Network::snapshot() const {
  std::vector<Tensor> out;
  for (const auto& l : layers_) {
    const Layer& cl = *l;
    for (const Tensor* p : cl.params()) out.push_back(*p);
  }
  return out;
}

void Network::restore(const std::vector<Tensor>& values) {
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Tensor* p : l->params()) {
      if (k >= values.size() || values[k].shape() != p->shape()) {
        fail(ErrorCode::ShapeMismatch, "snapshot does not match the network parameters");
      }
      *p = values[k++];
    }
  }
  if (k != values.size()) fail(ErrorCode::ShapeMismatch, "snapshot has extra tensors");
}

// --- losses -------------------------------------------------------------------

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) fail(ErrorCode::ShapeMismatch, "softmax expects B x C logits");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * cols;
    double* out = p.data() + r * cols;
    const double peak = *std::max_element(z, z + cols);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += out[c] = std::exp(z[c] - peak);
    for (std::size_t c = 0; c < cols; ++c) out[c] /= sum;
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    fail(ErrorCode::ShapeMismatch, "logits and labels disagree on batch size");
  }
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  LossResult result;
  result.grad_logits = softmax(logits);
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto label = static_cast<std::size_t>(labels[r]);
    if (labels[r] < 0 || label >= cols) fail(ErrorCode::UnknownClass, "label out of range");
    double* g = result.grad_logits.data() + r * cols;
    const double p = std::max(g[label], std::numeric_limits<double>::min());
    result.loss -= std::log(p) * inv;
    g[label] -= 1.0;
    for (std::size_t c = 0; c < cols; ++c) g[c] *= inv;
  }
  return result;
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

}  // namespace evx
