#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evx/image.hpp"
#include "evx/model.hpp"
#include "evx/tensor.hpp"
#include "json.hpp"

namespace evx {

enum class CamMethod { GradCam, Cam };

std::string_view cam_method_name(CamMethod method) noexcept;

// What Grad-CAM differentiates. ClassScore is the pre-softmax logit y^c.
// Loss differentiates log softmax_c (the negated cross-entropy for class c),
// kept for comparison only.
enum class GradientSource { ClassScore, Loss };

// Target-layer activations of one image, H' x W' x K.
struct ActivationVolume {
  Tensor values;
  std::string layer_name;

  std::size_t height() const { return values.dim(0); }
  std::size_t width() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
};

struct ChannelWeights {
  std::vector<double> alpha;  // one per feature map
  int target_class = 0;
};

struct ActivationMap {
  Tensor grid;  // H x W, entries in [0, 1]
  int target_class = 0;
  CamMethod method = CamMethod::GradCam;
  std::string layer_name;
  double raw_max = 0.0;  // max of the map before normalization

  std::size_t height() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(1); }
};

// Everything Grad-CAM computes on the way to the map; exposed for checking
// the channel weights against an independent oracle.
struct GradCamTrace {
  ActivationVolume volume;
  Tensor gradients;  // d y / d A, same shape as volume.values
  ChannelWeights weights;
};

GradCamTrace grad_cam_trace(const ModelBundle& bundle, const Tensor& image, int target_class,
                            GradientSource source = GradientSource::ClassScore);

ActivationVolume capture_activations(const ModelBundle& bundle, const Tensor& image);

// Dense-layer weights w_{k,c} of a GAP + dense head.
ChannelWeights cam_weights(const ModelBundle& bundle, int target_class);

// ReLU(sum_k weights[k] * A^k), H' x W'.
Tensor weighted_activation_map(const ActivationVolume& volume, std::span<const double> weights);

// Min-max scaling to [0, 1]. A constant map becomes all ones when positive
// and all zeros otherwise.
Tensor normalize_map(const Tensor& raw);

// Bilinear resampling of an H x W grid; same-size input is returned as is.
Tensor upsample_map(const Tensor& grid, std::size_t height, std::size_t width);

// Full pipeline: weights, ReLU of the weighted sum, bilinear upsampling to
// the model input resolution, min-max normalization.
ActivationMap grad_cam(const ModelBundle& bundle, const Tensor& image, int target_class,
                       GradientSource source = GradientSource::ClassScore);
ActivationMap cam(const ModelBundle& bundle, const Tensor& image, int target_class);

// Resamples a map to another resolution, e.g. the original image size.
ActivationMap resize_map(const ActivationMap& map, std::size_t height, std::size_t width);

// Row-major index of the largest entry (first on ties) as (y, x).
std::pair<std::size_t, std::size_t> map_peak(const ActivationMap& map);

using Rgb = std::array<double, 3>;

// Fixed blue -> cyan -> green -> yellow -> red ramp, channels in [0, 255].
Rgb colormap(double t);

inline constexpr double kDefaultBlendAlpha = 0.4;

// (1 - alpha) * image + alpha * colormap(map), rounded and clamped to 8 bits.
Image render_overlay(const Image& image, const ActivationMap& map,
                     double blend_alpha = kDefaultBlendAlpha);

Image map_to_gray(const ActivationMap& map);
nlohmann::json map_sidecar(const ActivationMap& map);

// Writes <stem>.png (8-bit grayscale) and <stem>.json next to it.
void export_map(const ActivationMap& map, const std::filesystem::path& png_path);

// Overlays for a split live at <dir>/<class>/<stem>.png, mirroring sample ids.
std::filesystem::path overlay_file(const std::filesystem::path& dir, const std::string& sample_id);

}  // namespace evx
