#include <doctest.h>

#include <array>
#include <cmath>

#include "cladec/loss.hpp"
#include "cladec/nn.hpp"
#include "cladec/optim.hpp"
#include "cladec/tensor.hpp"
#include "test_util.hpp"

using namespace cladec;
using testing::check_gradients;
using testing::random_tensor;

TEST_CASE("tensor slicing, gathering and concatenation") {
  Tensor t({3, 2, 1, 1}, {0, 1, 2, 3, 4, 5});
  const Tensor s = t.slice_batch(1, 3);
  CHECK(s.shape() == Shape{2, 2, 1, 1});
  CHECK(s[0] == 2.0f);
  const std::array<int, 2> idx{2, 0};
  const Tensor g = t.gather_batch(idx);
  CHECK(g[0] == 4.0f);
  CHECK(g[3] == 1.0f);
  const Tensor c = t.slice_channels(1, 2);
  CHECK(c.shape() == Shape{3, 1, 1, 1});
  CHECK(c[2] == 5.0f);
  const std::array<Tensor, 2> parts{t.slice_channels(0, 1), t.slice_channels(1, 2)};
  const Tensor back = concat_channels(parts);
  CHECK(back.storage() == t.storage());
  CHECK(t.dim(-1) == 1);
  CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, std::vector<float>{1.0f}), ShapeError);
}

TEST_CASE("conv2d matches a reference fixture") {
  std::mt19937_64 rng(0);
  nn::Conv2d conv(1, 1, 3, 2, 1, false, rng);
  conv.weight().value = Tensor({1, 1, 3, 3}, {1, 0, -1, 2, 0, -2, 1, 0, -1});
  Tensor x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x[i] = static_cast<float>(i + 1);
  const Tensor y = conv.forward(x, nn::Mode::kEval);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  const std::array<float, 4> expected{-10, -6, -40, -8};
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(expected[i]));
}

TEST_CASE("transposed conv matches a reference fixture") {
  std::mt19937_64 rng(0);
  nn::ConvTranspose2d deconv(1, 1, 3, 2, 1, 1, rng);
  deconv.weight().value = Tensor({1, 1, 3, 3}, {1, 2, 0, 0, 1, -1, 1, 0, 1});
  deconv.bias().value.zero();
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = deconv.forward(x, nn::Mode::kEval);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  const std::array<float, 16> expected{1, -1, 2, -2, 6, 7, 8, 2, 3, -3, 4, -4, 0, 7, 0, 4};
  for (int i = 0; i < 16; ++i) CHECK(y[i] == doctest::Approx(expected[i]));
}

TEST_CASE("batchnorm train mode matches a reference fixture") {
  nn::BatchNorm2d bn(2);
  const Tensor x({2, 2, 2, 1}, {1, 2, 3, 4, 5, 6, 7, 9});
  const Tensor y = bn.forward(x, nn::Mode::kTrain);
  const std::array<float, 8> expected{-1.2126766f, -0.7276060f, -1.1531124f, -0.7337989f,
                                      0.7276061f,  1.2126768f,  0.5241419f,  1.3627690f};
  for (int i = 0; i < 8; ++i) CHECK(y[i] == doctest::Approx(expected[i]).epsilon(1e-4));
  CHECK(bn.running_mean()[0] == doctest::Approx(0.35));
  CHECK(bn.running_mean()[1] == doctest::Approx(0.575));
  CHECK(bn.running_var()[0] == doctest::Approx(1.4666666).epsilon(1e-5));
  CHECK(bn.running_var()[1] == doctest::Approx(1.6583333).epsilon(1e-5));
}

TEST_CASE("losses match closed forms") {
  const Tensor logits({2, 3}, {1, 2, 3, 0, 0, 0});
  const std::array<int, 2> labels{2, 0};
  const auto ce = loss::cross_entropy(logits, labels);
  CHECK(ce.value == doctest::Approx(0.7531091).epsilon(1e-6));
  // d/dlogit = (softmax - onehot) / N
  CHECK(ce.grad[3] == doctest::Approx((1.0 / 3.0 - 1.0) / 2.0));

  const Tensor pred({2, 1, 1, 2}, {1, 2, 3, 4});
  const Tensor target({2, 1, 1, 2});
  const auto sse = loss::sum_squared_error(pred, target);
  CHECK(sse.value == doctest::Approx(15.0));
  CHECK(sse.grad[3] == doctest::Approx(2.0 * 4.0 / 2.0));
  CHECK(loss::argmax_rows(logits) == std::vector<int>{2, 0});
  CHECK_THROWS_AS(loss::sum_squared_error(pred, Tensor({2, 2})), ShapeError);
}

TEST_CASE("layer gradients agree with central differences") {
  std::mt19937_64 rng(3);
  SUBCASE("linear") {
    nn::Linear fc(12, 5, rng);
    check_gradients(fc, random_tensor({3, 3, 2, 2}, 1), nn::Mode::kTrain);
  }
  SUBCASE("conv2d stride 2 with bias") {
    nn::Conv2d conv(2, 3, 3, 2, 1, true, rng);
    check_gradients(conv, random_tensor({2, 2, 6, 6}, 2), nn::Mode::kTrain);
  }
  SUBCASE("conv2d stride 1") {
    nn::Conv2d conv(3, 2, 3, 1, 1, false, rng);
    check_gradients(conv, random_tensor({2, 3, 5, 5}, 3), nn::Mode::kTrain);
  }
  SUBCASE("transposed conv upsampling") {
    nn::ConvTranspose2d deconv(3, 2, 5, 2, 2, 1, rng);
    check_gradients(deconv, random_tensor({2, 3, 3, 3}, 4), nn::Mode::kTrain);
  }
  SUBCASE("transposed conv stride 1") {
    nn::ConvTranspose2d deconv(2, 2, 5, 1, 2, 0, rng);
    check_gradients(deconv, random_tensor({1, 2, 4, 4}, 5), nn::Mode::kTrain);
  }
  SUBCASE("batchnorm train") {
    nn::BatchNorm2d bn(3);
    check_gradients(bn, random_tensor({4, 3, 3, 3}, 6), nn::Mode::kTrain, 3e-2);
  }
  SUBCASE("batchnorm eval") {
    nn::BatchNorm2d bn(2);
    bn.forward(random_tensor({4, 2, 3, 3}, 7), nn::Mode::kTrain);
    check_gradients(bn, random_tensor({2, 2, 3, 3}, 8), nn::Mode::kEval);
  }
  SUBCASE("relu") {
    nn::ReLU relu;
    check_gradients(relu, random_tensor({2, 3, 4, 4}, 9), nn::Mode::kTrain, 2e-2, 24, 1e-3);
  }
  SUBCASE("sigmoid") {
    nn::Sigmoid sig;
    check_gradients(sig, random_tensor({2, 3, 4, 4}, 10), nn::Mode::kTrain);
  }
  SUBCASE("global average pool") {
    nn::GlobalAvgPool gap;
    check_gradients(gap, random_tensor({2, 3, 4, 4}, 11), nn::Mode::kTrain);
  }
  SUBCASE("reshape") {
    nn::Reshape r({8, 1, 1});
    check_gradients(r, random_tensor({2, 8}, 12), nn::Mode::kTrain);
  }
  SUBCASE("residual block with projection") {
    nn::ResidualBlock block(2, 4, 2, rng);
    CHECK(block.has_projection());
    check_gradients(block, random_tensor({3, 2, 6, 6}, 13), nn::Mode::kTrain, 2e-2, 24, 1e-3);
  }
  SUBCASE("residual block identity shortcut") {
    nn::ResidualBlock block(3, 3, 1, rng);
    CHECK_FALSE(block.has_projection());
    check_gradients(block, random_tensor({3, 3, 4, 4}, 14), nn::Mode::kTrain, 2e-2, 24, 1e-3);
  }
  SUBCASE("sequential") {
    nn::Sequential seq;
    seq.emplace<nn::Conv2d>("conv", 1, 2, 3, 1, 1, true, rng);
    seq.emplace<nn::Sigmoid>("act");
    seq.emplace<nn::Linear>("fc", 2 * 4 * 4, 3, rng);
    check_gradients(seq, random_tensor({2, 1, 4, 4}, 15), nn::Mode::kTrain);
  }
}

TEST_CASE("frozen layers propagate input gradients without parameter gradients") {
  std::mt19937_64 rng(1);
  nn::Conv2d conv(2, 2, 3, 1, 1, true, rng);
  conv.set_frozen(true);
  const Tensor x = random_tensor({1, 2, 4, 4}, 2);
  const Tensor y = conv.forward(x, nn::Mode::kTrain);
  const Tensor gx = conv.backward(Tensor(y.shape(), 1.0f));
  double gsum = 0.0;
  for (float v : gx.values()) gsum += std::abs(v);
  CHECK(gsum > 0.0);
  for (float v : conv.weight().grad.values()) CHECK(v == 0.0f);
  for (float v : conv.bias().grad.values()) CHECK(v == 0.0f);
}

TEST_CASE("step schedule and optimizer updates") {
  const optim::StepSchedule s{0.1, {{32, 0.1}, {48, 0.1}}};
  CHECK(s.lr_at(0) == doctest::Approx(0.1));
  CHECK(s.lr_at(31) == doctest::Approx(0.1));
  CHECK(s.lr_at(32) == doctest::Approx(0.01));
  CHECK(s.lr_at(48) == doctest::Approx(0.001));

  nn::Parameter p{Tensor({1}, {1.0f}), Tensor({1}, {0.5f})};
  optim::Sgd sgd({&p}, 0.1, 0.9, 5e-4);
  sgd.step();
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.5005));
  sgd.step();
  // v = 0.9 * 0.5005 + (0.5 + 5e-4 * w1)
  const double w1 = 1.0 - 0.1 * 0.5005;
  CHECK(p.value[0] == doctest::Approx(w1 - 0.1 * (0.9 * 0.5005 + 0.5 + 5e-4 * w1)));

  nn::Parameter q{Tensor({2}, {1.0f, -1.0f}), Tensor({2}, {0.3f, -2.0f})};
  optim::Adam adam({&q}, 1e-3);
  adam.step();
  CHECK(q.value[0] == doctest::Approx(0.999).epsilon(1e-6));
  CHECK(q.value[1] == doctest::Approx(-0.999).epsilon(1e-6));
  adam.zero_grad();
  CHECK(q.grad[1] == 0.0f);
}
