#include "evx/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "evx/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx {

std::string_view cam_method_name(CamMethod method) noexcept {
  return method == CamMethod::Cam ? "cam" : "gradcam";
}

namespace {

void check_single_image(const ModelBundle& bundle, const Tensor& image) {
  bundle.check_input(image);
  if (image.dim(0) != 1) {
    fail(ErrorCode::ShapeMismatch, "explanations take one image, got batch " +
                                       shape_string(image.shape()));
  }
}

void check_class(const ModelBundle& bundle, int target_class) {
  if (target_class < 0 || static_cast<std::size_t>(target_class) >= bundle.config.num_classes) {
    fail(ErrorCode::UnknownClass, "target class " + std::to_string(target_class) +
                                      " outside [0, " +
                                      std::to_string(bundle.config.num_classes) + ")");
  }
}

// Drop the leading batch axis of a 1 x H x W x K activation.
Tensor squeeze_batch(const Tensor& t) {
  if (t.rank() != 4 || t.dim(0) != 1) {
    fail(ErrorCode::ShapeMismatch, "target layer must produce a 1 x H x W x K volume, got " +
                                       shape_string(t.shape()));
  }
  return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
}

}  // namespace

ActivationVolume capture_activations(const ModelBundle& bundle, const Tensor& image) {
  check_single_image(bundle, image);
  const std::size_t target = bundle.target_activation_index();
  Tensor current = image;
  for (std::size_t i = 0; i < target; ++i) current = bundle.network.layer(i).forward(current);
  return {squeeze_batch(current), bundle.config.target_layer};
}

GradCamTrace grad_cam_trace(const ModelBundle& bundle, const Tensor& image, int target_class,
                            GradientSource source) {
  check_single_image(bundle, image);
  check_class(bundle, target_class);
  const std::size_t target = bundle.target_activation_index();
  const auto acts = bundle.network.trace(image);

  const Tensor& logits = acts.back();
  Tensor seed(logits.shape());
  const auto c = static_cast<std::size_t>(target_class);
  if (source == GradientSource::ClassScore) {
    seed[c] = 1.0;
  } else {
    // d/dz log softmax_c(z) = onehot_c - softmax(z)
    const Tensor p = softmax(logits);
    for (std::size_t k = 0; k < seed.size(); ++k) seed[k] = (k == c ? 1.0 : 0.0) - p[k];
  }
  const Tensor grad = bundle.network.backward(acts, seed, target);

  GradCamTrace out;
  out.volume = {squeeze_batch(acts[target]), bundle.config.target_layer};
  out.gradients = squeeze_batch(grad);
  if (!out.gradients.all_finite()) {
    fail(ErrorCode::NonFiniteGradient, "non-finite gradient at layer " +
                                           bundle.config.target_layer);
  }
  const std::size_t h = out.volume.height(), w = out.volume.width(), k = out.volume.channels();
  out.weights.target_class = target_class;
  out.weights.alpha.assign(k, 0.0);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < k; ++ch) out.weights.alpha[ch] += out.gradients[i * k + ch];
  }
  const double z = static_cast<double>(h * w);
  for (double& a : out.weights.alpha) a /= z;
  return out;
}

ChannelWeights cam_weights(const ModelBundle& bundle, int target_class) {
  check_class(bundle, target_class);
  if (!bundle.has_gap_dense_head()) {
    fail(ErrorCode::UnsupportedHead,
         "CAM needs global average pooling then one dense layer directly after '" +
             bundle.config.target_layer + "'");
  }
  const Dense& dense = bundle.classifier();
  ChannelWeights out;
  out.target_class = target_class;
  const auto c = static_cast<std::size_t>(target_class);
  for (std::size_t k = 0; k < dense.in_features(); ++k) {
    out.alpha.push_back(dense.weight()[k * dense.out_features() + c]);
  }
  return out;
}

Tensor weighted_activation_map(const ActivationVolume& volume, std::span<const double> weights) {
  const std::size_t h = volume.height(), w = volume.width(), k = volume.channels();
  if (weights.size() != k) {
    fail(ErrorCode::ShapeMismatch, std::to_string(weights.size()) + " weights for " +
                                       std::to_string(k) + " feature maps");
  }
  Tensor raw({h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const double* a = volume.values.data() + i * k;
    double sum = 0.0;
    for (std::size_t ch = 0; ch < k; ++ch) sum += weights[ch] * a[ch];
    raw[i] = sum > 0.0 ? sum : 0.0;
  }
  return raw;
}

Tensor normalize_map(const Tensor& raw) {
  Tensor out(raw.shape());
  if (raw.empty()) return out;
  const double lo = raw.min(), hi = raw.max();
  if (!(hi > lo)) {
    out.fill(hi > 0.0 ? 1.0 : 0.0);
    return out;
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = std::clamp((raw[i] - lo) / span, 0.0, 1.0);
  }
  return out;
}

Tensor upsample_map(const Tensor& grid, std::size_t height, std::size_t width) {
  if (grid.rank() != 2) fail(ErrorCode::ShapeMismatch, "maps are 2-D grids");
  if (grid.dim(0) == height && grid.dim(1) == width) return grid;
  return Tensor({height, width},
                resize_bilinear(grid.values(), grid.dim(0), grid.dim(1), 1, height, width));
}

namespace {

ActivationMap finish_map(const ActivationVolume& volume, std::span<const double> weights,
                         int target_class, CamMethod method, std::size_t size) {
  const Tensor raw = weighted_activation_map(volume, weights);
  ActivationMap map;
  map.target_class = target_class;
  map.method = method;
  map.layer_name = volume.layer_name;
  map.raw_max = raw.max();
  map.grid = normalize_map(upsample_map(raw, size, size));
  return map;
}

}  // namespace

ActivationMap grad_cam(const ModelBundle& bundle, const Tensor& image, int target_class,
                       GradientSource source) {
  const GradCamTrace t = grad_cam_trace(bundle, image, target_class, source);
  return finish_map(t.volume, t.weights.alpha, target_class, CamMethod::GradCam,
                    bundle.config.input_size);
}

ActivationMap cam(const ModelBundle& bundle, const Tensor& image, int target_class) {
  const ChannelWeights w = cam_weights(bundle, target_class);
  const ActivationVolume volume = capture_activations(bundle, image);
  return finish_map(volume, w.alpha, target_class, CamMethod::Cam, bundle.config.input_size);
}

ActivationMap resize_map(const ActivationMap& map, std::size_t height, std::size_t width) {
  ActivationMap out = map;
  out.grid = upsample_map(map.grid, height, width);
  for (double& v : out.grid.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::pair<std::size_t, std::size_t> map_peak(const ActivationMap& map) {
  const std::size_t i = argmax(map.grid.values());
  return {i / map.width(), i % map.width()};
}

Rgb colormap(double t) {
  static constexpr std::array<Rgb, 5> stops = {{
      {0.0, 0.0, 255.0},    // blue
      {0.0, 255.0, 255.0},  // cyan
      {0.0, 255.0, 0.0},    // green
      {255.0, 255.0, 0.0},  // yellow
      {255.0, 0.0, 0.0},    // red
  }};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  Rgb out;
  for (std::size_t c = 0; c < 3; ++c) out[c] = stops[i][c] + (stops[i + 1][c] - stops[i][c]) * f;
  return out;
}

Image render_overlay(const Image& image, const ActivationMap& map, double blend_alpha) {
  if (!(blend_alpha > 0.0 && blend_alpha < 1.0)) {
    fail(ErrorCode::ParamError, "blend_alpha must lie in (0, 1)");
  }
  if (image.channels != 3) fail(ErrorCode::ParamError, "overlay base image must be RGB");
  if (map.height() != image.height || map.width() != image.width) {
    fail(ErrorCode::SizeMismatch, "map is " + std::to_string(map.height()) + "x" +
                                      std::to_string(map.width()) + " but image is " +
                                      std::to_string(image.height) + "x" +
                                      std::to_string(image.width));
  }
  Image out(image.height, image.width, 3);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const Rgb color = colormap(map.grid[y * image.width + x]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (1.0 - blend_alpha) * image.at(y, x, c) + blend_alpha * color[c];
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  return out;
}

Image map_to_gray(const ActivationMap& map) {
  Image out(map.height(), map.width(), 1);
  for (std::size_t i = 0; i < map.grid.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map.grid[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

json map_sidecar(const ActivationMap& map) {
  return {{"method", cam_method_name(map.method)},
          {"target_class", map.target_class},
          {"layer_name", map.layer_name},
          {"pre_normalization_max", map.raw_max},
          {"height", map.height()},
          {"width", map.width()}};
}

void export_map(const ActivationMap& map, const std::filesystem::path& png_path) {
  write_png(png_path, map_to_gray(map));
  auto sidecar = png_path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar);
  out << map_sidecar(map).dump(2) << "\n";
  if (!out) fail(ErrorCode::IoError, "cannot write " + sidecar.string());
}

fs::path overlay_file(const fs::path& dir, const std::string& sample_id) {
  fs::path out = dir / sample_id;
  out.replace_extension(".png");
  return out;
}

}  // namespace evx
