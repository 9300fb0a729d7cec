#include "evx/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>

#include "evx/error.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace evx {

std::string toy_shape_name(ToyShape shape) {
  switch (shape) {
    case ToyShape::Circle: return "circle";
    case ToyShape::Square: return "square";
    case ToyShape::Triangle: return "triangle";
  }
  return "unknown";
}

std::string primitive_name(Primitive primitive) {
  switch (primitive) {
    case Primitive::Ring: return "ring";
    case Primitive::Cross: return "cross";
    case Primitive::Diamond: return "diamond";
    case Primitive::HorizontalBar: return "horizontal_bar";
    case Primitive::VerticalBar: return "vertical_bar";
    case Primitive::DiagonalCross: return "diagonal_cross";
    case Primitive::Semicircle: return "semicircle";
    case Primitive::Trapezoid: return "trapezoid";
  }
  return "unknown";
}

namespace {

// Inside test in coordinates relative to the shape centre, scaled by radius.
using InsideFn = std::function<bool(double dx, double dy, double r)>;

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

SyntheticImage paint(const InsideFn& inside, int label, std::size_t size, Rng& rng) {
  const auto s = static_cast<double>(size);
  const double r = rng.uniform(0.20 * s, 0.34 * s);
  const double cx = rng.uniform(r + 1.0, s - r - 1.0);
  const double cy = rng.uniform(r + 1.0, s - r - 1.0);

  // Mid-gray background sits near the convolutions' zero padding once
  // normalized, so image borders do not read as edges.
  const double bg = rng.uniform(100.0, 150.0);
  double bg_rgb[3], fg_rgb[3];
  for (int c = 0; c < 3; ++c) {
    bg_rgb[c] = bg + rng.uniform(-10.0, 10.0);
    fg_rgb[c] = rng.uniform(190.0, 255.0);
  }

  SyntheticImage out;
  out.label = label;
  out.image = Image(size, size, 3);
  std::size_t x0 = size, y0 = size, x1 = 0, y1 = 0;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx;
      const double dy = static_cast<double>(y) + 0.5 - cy;
      const bool in = inside(dx, dy, r);
      if (in) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = in ? fg_rgb[c] : bg_rgb[c];
        out.image.at(y, x, c) = clamp_byte(base + rng.uniform(-10.0, 10.0));
      }
    }
  }
  out.box = {x0, y0, x1, y1};
  return out;
}

bool in_triangle(double px, double py, double r) {
  // Upright equilateral triangle with circumradius 1.1 r.
  const double R = 1.1 * r;
  double vx[3], vy[3];
  for (int i = 0; i < 3; ++i) {
    const double a = (-90.0 + 120.0 * i) * std::numbers::pi / 180.0;
    vx[i] = R * std::cos(a);
    vy[i] = R * std::sin(a);
  }
  auto edge = [&](int i, int j) {
    return (vx[j] - vx[i]) * (py - vy[i]) - (vy[j] - vy[i]) * (px - vx[i]);
  };
  const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
  return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

bool in_cross(double dx, double dy, double r) {
  const double t = 0.3 * r;
  return (std::abs(dx) <= t && std::abs(dy) <= r) || (std::abs(dy) <= t && std::abs(dx) <= r);
}

InsideFn toy_shape_fn(ToyShape shape) {
  switch (shape) {
    case ToyShape::Circle:
      return [](double dx, double dy, double r) { return dx * dx + dy * dy <= r * r; };
    case ToyShape::Square:
      return [](double dx, double dy, double r) {
        return std::abs(dx) <= 0.82 * r && std::abs(dy) <= 0.82 * r;
      };
    case ToyShape::Triangle:
      return in_triangle;
  }
  return {};
}

InsideFn primitive_fn(Primitive p) {
  switch (p) {
    case Primitive::Ring:
      return [](double dx, double dy, double r) {
        const double d2 = dx * dx + dy * dy;
        return d2 <= r * r && d2 >= 0.3 * r * r;
      };
    case Primitive::Cross:
      return in_cross;
    case Primitive::Diamond:
      return [](double dx, double dy, double r) { return std::abs(dx) + std::abs(dy) <= r; };
    case Primitive::HorizontalBar:
      return [](double dx, double dy, double r) {
        return std::abs(dx) <= r && std::abs(dy) <= 0.3 * r;
      };
    case Primitive::VerticalBar:
      return [](double dx, double dy, double r) {
        return std::abs(dy) <= r && std::abs(dx) <= 0.3 * r;
      };
    case Primitive::DiagonalCross:
      return [](double dx, double dy, double r) {
        const double u = (dx + dy) / std::numbers::sqrt2;
        const double v = (dx - dy) / std::numbers::sqrt2;
        return in_cross(u, v, r);
      };
    case Primitive::Semicircle:
      return [](double dx, double dy, double r) {
        return dy <= 0.4 * r && dx * dx + (dy - 0.4 * r) * (dy - 0.4 * r) <= r * r;
      };
    case Primitive::Trapezoid:
      // Flat top and bottom, sides leaning in by half the height.
      return [](double dx, double dy, double r) {
        if (std::abs(dy) > 0.6 * r) return false;
        const double half = 0.55 * r + 0.45 * r * (dy + 0.6 * r) / (1.2 * r);
        return std::abs(dx) <= half;
      };
  }
  return {};
}

}  // namespace

SyntheticImage draw_toy_shape(ToyShape shape, std::size_t size, Rng& rng) {
  return paint(toy_shape_fn(shape), static_cast<int>(shape), size, rng);
}

SyntheticImage draw_primitive(Primitive primitive, std::size_t size, Rng& rng) {
  return paint(primitive_fn(primitive), static_cast<int>(primitive), size, rng);
}

ToyDataset write_toy_dataset(const fs::path& root, std::size_t per_class,
                             std::size_t image_size, std::uint64_t seed) {
  if (per_class == 0 || image_size < 8) {
    fail(ErrorCode::ParamError, "toy dataset needs per_class >= 1 and image_size >= 8");
  }
  ToyDataset ds;
  ds.root = root;
  Rng rng(seed);
  json boxes = json::object();
  for (std::size_t k = 0; k < kToyShapeCount; ++k) {
    const auto shape = static_cast<ToyShape>(k);
    const std::string name = toy_shape_name(shape);
    ds.class_names.push_back(name);
    for (std::size_t i = 0; i < per_class; ++i) {
      const SyntheticImage img = draw_toy_shape(shape, image_size, rng);
      char file[64];
      std::snprintf(file, sizeof file, "%s_%03zu.png", name.c_str(), i);
      const std::string sample_id = name + "/" + file;
      write_png(root / sample_id, img.image);
      ds.boxes[sample_id] = img.box;
      boxes[sample_id] = {img.box.x0, img.box.y0, img.box.x1, img.box.y1};
    }
  }
  std::ofstream out(root / "boxes.json");
  out << boxes.dump(1) << "\n";
  if (!out) fail(ErrorCode::IoError, "cannot write boxes.json under " + root.string());
  return ds;
}

std::map<std::string, BoundingBox> load_boxes(const fs::path& root) {
  std::ifstream in(root / "boxes.json");
  if (!in) fail(ErrorCode::IoError, "missing boxes.json under " + root.string());
  std::map<std::string, BoundingBox> boxes;
  const json doc = json::parse(in);
  for (const auto& [id, b] : doc.items()) {
    boxes[id] = {b.at(0).get<std::size_t>(), b.at(1).get<std::size_t>(),
                 b.at(2).get<std::size_t>(), b.at(3).get<std::size_t>()};
  }
  return boxes;
}

Corpus make_primitive_corpus(std::size_t per_class, std::size_t size, std::uint64_t seed) {
  Corpus corpus;
  const std::size_t n = per_class * kPrimitiveCount;
  corpus.images = Tensor({n, size, size, 3});
  Rng rng(seed);
  const std::size_t stride = size * size * 3;
  for (std::size_t k = 0; k < kPrimitiveCount; ++k) {
    corpus.class_names.push_back(primitive_name(static_cast<Primitive>(k)));
  }
  // Interleave classes so any prefix is balanced.
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = static_cast<Primitive>(i % kPrimitiveCount);
    const SyntheticImage img = draw_primitive(p, size, rng);
    const Tensor input = image_to_input(img.image, size);
    std::copy(input.values().begin(), input.values().end(), corpus.images.data() + i * stride);
    corpus.labels.push_back(img.label);
  }
  return corpus;
}

}  // namespace evx
