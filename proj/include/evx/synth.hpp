#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evx/image.hpp"
#include "evx/random.hpp"
#include "evx/tensor.hpp"

namespace evx {

// Synthetic images: one bright filled shape on a noisy mid-gray background.

enum class ToyShape { Circle, Square, Triangle };

// Shapes of the pretraining corpus; disjoint from ToyShape.
enum class Primitive {
  Ring,
  Cross,
  Diamond,
  HorizontalBar,
  VerticalBar,
  DiagonalCross,
  Semicircle,
  Trapezoid,
};

inline constexpr std::size_t kToyShapeCount = 3;
inline constexpr std::size_t kPrimitiveCount = 8;

std::string toy_shape_name(ToyShape shape);
std::string primitive_name(Primitive primitive);

// Inclusive pixel bounds of the drawn shape.
struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(std::size_t x, std::size_t y) const noexcept {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct SyntheticImage {
  Image image;
  BoundingBox box;
  int label = 0;
};

SyntheticImage draw_toy_shape(ToyShape shape, std::size_t size, Rng& rng);
SyntheticImage draw_primitive(Primitive primitive, std::size_t size, Rng& rng);

struct ToyDataset {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::map<std::string, BoundingBox> boxes;  // keyed by sample_id
};

// Writes <root>/<shape>/<shape>_NNN.png for each toy shape plus
// <root>/boxes.json with the ground-truth boxes.
ToyDataset write_toy_dataset(const std::filesystem::path& root, std::size_t per_class,
                             std::size_t image_size, std::uint64_t seed);
std::map<std::string, BoundingBox> load_boxes(const std::filesystem::path& root);

// In-memory pretraining corpus, normalized to [-1, +1].
struct Corpus {
  Tensor images;  // N x size x size x 3
  std::vector<int> labels;
  std::vector<std::string> class_names;
};
Corpus make_primitive_corpus(std::size_t per_class, std::size_t size, std::uint64_t seed);

}  // namespace evx
