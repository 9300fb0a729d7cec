#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "evx/image.hpp"
#include "evx/model.hpp"
#include "evx/random.hpp"

namespace evx::testing {

// Fresh directory under the build tree, named after the running test.
inline std::filesystem::path temp_dir(const std::string& tag = "") {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string name = std::string(info->test_suite_name()) + "." + info->name();
  if (!tag.empty()) name += "." + tag;
  const std::filesystem::path dir = std::filesystem::path(EVX_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Image solid_image(std::size_t h, std::size_t w, std::uint8_t r, std::uint8_t g,
                         std::uint8_t b) {
  Image img(h, w, 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

inline void fill_normal(Tensor& t, Rng& rng, double scale = 1.0) {
  for (double& v : t.values()) v = scale * rng.normal();
}

// Two same-padded convs (ReLU after each) at the input resolution, then GAP +
// dense. The target is the second ReLU.
inline ModelBundle random_two_conv_bundle(std::uint64_t seed, std::size_t size,
                                          std::size_t k1, std::size_t k2,
                                          std::size_t classes) {
  Rng rng(seed);
  Network net;
  net.add(std::make_unique<Conv2D>("conv1", 3, k1), ParamGroup::Backbone);
  net.add(std::make_unique<ReLU>("conv1_act"), ParamGroup::Backbone);
  net.add(std::make_unique<Conv2D>("conv2", k1, k2), ParamGroup::Backbone);
  net.add(std::make_unique<ReLU>("conv2_act"), ParamGroup::Backbone);
  for (std::size_t i = 0; i < net.size(); ++i) {
    for (Tensor* p : net.layer(i).params()) fill_normal(*p, rng, 0.5);
  }
  ModelConfig config;
  config.input_size = size;
  config.num_classes = classes;
  config.seed = seed;
  ModelBundle bundle = assemble(config, std::move(net), {}, HeadInit::GlorotUniform);
  for (Tensor* p : bundle.network.layer(bundle.network.size() - 1).params()) {
    fill_normal(*p, rng, 1.0);
  }
  return bundle;
}

inline Tensor random_input(Rng& rng, std::size_t size) {
  Tensor x({1, size, size, 3});
  for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
  return x;
}

}  // namespace evx::testing
