#include "evx/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "evx/error.hpp"

namespace evx {

bool has_image_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Image read_image(const std::filesystem::path& path) {
  cv::Mat bgr;
  try {
    bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::CorruptImage, "cannot decode " + path.string() + ": " + e.what());
  }
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    fail(ErrorCode::CorruptImage, "cannot decode image " + path.string());
  }
  Image out(static_cast<std::size_t>(bgr.rows), static_cast<std::size_t>(bgr.cols), 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const auto uy = static_cast<std::size_t>(y);
      const auto ux = static_cast<std::size_t>(x);
      out.at(uy, ux, 0) = row[x][2];
      out.at(uy, ux, 1) = row[x][1];
      out.at(uy, ux, 2) = row[x][0];
    }
  }
  return out;
}

namespace {

cv::Mat to_mat(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    fail(ErrorCode::ParamError, "only 1- or 3-channel images can be encoded");
  }
  const int h = static_cast<int>(image.height);
  const int w = static_cast<int>(image.width);
  if (image.channels == 1) {
    cv::Mat gray(h, w, CV_8UC1);
    std::copy(image.pixels.begin(), image.pixels.end(), gray.data);
    return gray;
  }
  cv::Mat bgr(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      const auto uy = static_cast<std::size_t>(y);
      const auto ux = static_cast<std::size_t>(x);
      row[x] = cv::Vec3b(image.at(uy, ux, 2), image.at(uy, ux, 1), image.at(uy, ux, 0));
    }
  }
  return bgr;
}

}  // namespace

std::string encode_png(const Image& image) {
  std::vector<unsigned char> buffer;
  if (!cv::imencode(".png", to_mat(image), buffer)) {
    fail(ErrorCode::IoError, "png encoding failed");
  }
  return {buffer.begin(), buffer.end()};
}

void write_png(const std::filesystem::path& path, const Image& image) {
  const std::string bytes = encode_png(image);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
}

std::vector<double> resize_bilinear(std::span<const double> src, std::size_t src_h,
                                    std::size_t src_w, std::size_t channels,
                                    std::size_t dst_h, std::size_t dst_w) {
  if (src.size() != src_h * src_w * channels || src_h == 0 || src_w == 0) {
    fail(ErrorCode::ShapeMismatch, "resize_bilinear: source size does not match its shape");
  }
  if (src_h == dst_h && src_w == dst_w) return {src.begin(), src.end()};

  // Source sample coordinate and neighbour pair for each destination index.
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t src_n, std::size_t dst_n) {
    std::vector<Tap> out(dst_n);
    const double scale = static_cast<double>(src_n) / static_cast<double>(dst_n);
    for (std::size_t i = 0; i < dst_n; ++i) {
      double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(src_n - 1));
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, src_n - 1);
      out[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return out;
  };
  const auto ty = taps(src_h, dst_h);
  const auto tx = taps(src_w, dst_w);

  std::vector<double> dst(dst_h * dst_w * channels);
  for (std::size_t y = 0; y < dst_h; ++y) {
    const auto [y0, y1, fy] = ty[y];
    for (std::size_t x = 0; x < dst_w; ++x) {
      const auto [x0, x1, fx] = tx[x];
      for (std::size_t c = 0; c < channels; ++c) {
        const double v00 = src[(y0 * src_w + x0) * channels + c];
        const double v01 = src[(y0 * src_w + x1) * channels + c];
        const double v10 = src[(y1 * src_w + x0) * channels + c];
        const double v11 = src[(y1 * src_w + x1) * channels + c];
        const double top = v00 + (v01 - v00) * fx;
        const double bottom = v10 + (v11 - v10) * fx;
        dst[(y * dst_w + x) * channels + c] = top + (bottom - top) * fy;
      }
    }
  }
  return dst;
}

Tensor image_to_input(const Image& image, std::size_t size) {
  if (image.channels != 3) fail(ErrorCode::ShapeMismatch, "model input must be RGB");
  std::vector<double> raw(image.pixels.begin(), image.pixels.end());
  std::vector<double> resized =
      resize_bilinear(raw, image.height, image.width, 3, size, size);
  for (double& v : resized) v = normalize_pixel(v);
  return Tensor({1, size, size, 3}, std::move(resized));
}

}  // namespace evx
