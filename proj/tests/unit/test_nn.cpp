#include <gtest/gtest.h>

#include <cmath>

#include "evx/error.hpp"
#include "evx/nn.hpp"
#include "evx/random.hpp"
#include "helpers.hpp"

namespace evx {
namespace {

// L = sum(r * layer(x)); checks dL/dx and dL/dparams by central differences.
void check_layer_gradients(Layer& layer, Tensor x, std::uint64_t seed, double tol = 1e-6) {
  Rng rng(seed);
  const Tensor y = layer.forward(x);
  Tensor r(y.shape());
  testing::fill_normal(r, rng);
  auto loss = [&](const Tensor& in) {
    const Tensor out = layer.forward(in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
    return s;
  };

  std::vector<Tensor> grads;
  for (Tensor* p : layer.params()) grads.emplace_back(p->shape());
  const Tensor dx = layer.backward(x, y, r, grads);

  constexpr double eps = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss(x);
    x[i] = keep - eps;
    const double down = loss(x);
    x[i] = keep;
    EXPECT_NEAR(dx[i], (up - down) / (2 * eps), tol) << layer.name() << " input " << i;
  }
  auto params = layer.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + eps;
      const double up = loss(x);
      w[i] = keep - eps;
      const double down = loss(x);
      w[i] = keep;
      EXPECT_NEAR(grads[p][i], (up - down) / (2 * eps), tol) << layer.name() << " param " << p;
    }
  }
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  testing::fill_normal(t, rng);
  return t;
}

TEST(LayerGradients, Conv2D) {
  Conv2D conv("c", 2, 3);
  Rng rng(1);
  for (Tensor* p : conv.params()) testing::fill_normal(*p, rng);
  check_layer_gradients(conv, random_tensor({2, 5, 4, 2}, 2), 3);
}

TEST(LayerGradients, ReLU) {
  ReLU relu("r");
  // Keep inputs away from the kink.
  Tensor x = random_tensor({1, 3, 3, 2}, 4);
  for (double& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
  check_layer_gradients(relu, x, 5);
}

TEST(LayerGradients, MaxPool) {
  MaxPool2D pool("p");
  check_layer_gradients(pool, random_tensor({2, 5, 6, 2}, 6), 7);
  EXPECT_EQ(pool.output_shape({1, 5, 6, 2}), (Shape{1, 2, 3, 2}));
}

TEST(LayerGradients, GlobalAvgPool) {
  GlobalAvgPool gap("g");
  check_layer_gradients(gap, random_tensor({2, 3, 4, 5}, 8), 9);
}

TEST(LayerGradients, Dense) {
  Dense dense("d", 4, 3);
  Rng rng(10);
  for (Tensor* p : dense.params()) testing::fill_normal(*p, rng);
  check_layer_gradients(dense, random_tensor({3, 4}, 11), 12);
}

TEST(Conv2D, SamePaddingKnownValue) {
  Conv2D conv("c", 1, 1);
  conv.kernel().fill(1.0);
  Tensor x({1, 3, 3, 1}, 1.0);
  const Tensor y = conv.forward(x);
  EXPECT_EQ(y.at(0, 1, 1, 0), 9.0);  // interior sees all 9
  EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);  // corner sees 4
  EXPECT_EQ(y.at(0, 0, 1, 0), 6.0);  // edge sees 6
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(3);
  Tensor logits({50, 7});
  testing::fill_normal(logits, rng, 20.0);
  const Tensor p = softmax(logits);
  for (std::size_t b = 0; b < 50; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += p[b * 7 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, CrossEntropyGradient) {
  Rng rng(4);
  Tensor logits({3, 4});
  testing::fill_normal(logits, rng);
  const std::vector<int> labels{0, 3, 1};
  const LossResult r = softmax_cross_entropy(logits, labels);
  constexpr double eps = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Tensor up = logits, down = logits;
    up[i] += eps;
    down[i] -= eps;
    const double fd = (softmax_cross_entropy(up, labels).loss -
                       softmax_cross_entropy(down, labels).loss) / (2 * eps);
    EXPECT_NEAR(r.grad_logits[i], fd, 1e-8);
  }
}

TEST(Argmax, TieGoesToLowestIndex) {
  const double row[] = {2.0, 2.0, -1.0};
  EXPECT_EQ(argmax(row), 0u);
  const double row2[] = {-1.0, 3.0, 3.0};
  EXPECT_EQ(argmax(row2), 1u);
}

TEST(Network, BackwardMatchesFiniteDifferences) {
  Rng rng(21);
  Network net;
  net.add(std::make_unique<Conv2D>("c1", 3, 4), ParamGroup::Backbone);
  net.add(std::make_unique<ReLU>("a1"), ParamGroup::Backbone);
  net.add(std::make_unique<MaxPool2D>("p1"), ParamGroup::Backbone);
  net.add(std::make_unique<Conv2D>("c2", 4, 3), ParamGroup::Backbone);
  net.add(std::make_unique<GlobalAvgPool>("g"), ParamGroup::Head);
  net.add(std::make_unique<Dense>("d", 3, 2), ParamGroup::Head);
  for (std::size_t i = 0; i < net.size(); ++i) {
    for (Tensor* p : net.layer(i).params()) testing::fill_normal(*p, rng, 0.5);
  }
  const Tensor x = random_tensor({1, 6, 6, 3}, 22);
  const auto trace = net.trace(x);
  Tensor seed({1, 2});
  seed[1] = 1.0;
  ParamGrads grads = net.zero_grads();
  net.backward(trace, seed, 0, &grads);

  // Spot-check the first conv kernel.
  Tensor& w = net.layer(0).params()[0][0];
  constexpr double eps = 1e-6;
  for (std::size_t i = 0; i < w.size(); i += 7) {
    const double keep = w[i];
    w[i] = keep + eps;
    const double up = net.forward(x)[1];
    w[i] = keep - eps;
    const double down = net.forward(x)[1];
    w[i] = keep;
    EXPECT_NEAR(grads[0][0][i], (up - down) / (2 * eps), 1e-6);
  }
}

TEST(Network, SnapshotRestore) {
  Network net;
  net.add(std::make_unique<Dense>("d", 2, 2), ParamGroup::Head);
  Rng rng(1);
  init_he_normal(net.layer(0), rng);
  const auto snap = net.snapshot();
  net.layer(0).params()[0]->fill(0.0);
  net.restore(snap);
  EXPECT_EQ(net.snapshot(), snap);
}

TEST(Network, CopyIsDeep) {
  Network a;
  a.add(std::make_unique<Dense>("d", 2, 2), ParamGroup::Head);
  Network b = a;
  b.layer(0).params()[0]->fill(5.0);
  EXPECT_EQ(a.layer(0).params()[0]->max(), 0.0);
}

TEST(Layers, ConfigRoundTrip) {
  Conv2D conv("c", 3, 8, 3);
  const auto restored = layer_from_config(conv.config());
  EXPECT_EQ(restored->name(), "c");
  EXPECT_EQ(restored->kind(), LayerKind::Conv2D);
  EXPECT_EQ(restored->output_shape({1, 5, 5, 3}), (Shape{1, 5, 5, 8}));
}

}  // namespace
}  // namespace evx
