#include <doctest.h>

#include "cladec/model_zoo.hpp"
#include "cladec/state.hpp"
#include "test_util.hpp"

using namespace cladec;
using namespace cladec::model;

namespace {

const ArchSpec kArchs[] = {
    {ArchFamily::kVggTable1, 1, 10},
    {ArchFamily::kVggTable1, 3, 100},
    {ArchFamily::kResNet10, 1, 10},
    {ArchFamily::kResNet10, 3, 100},
};

}  // namespace

TEST_CASE("decoder output shape equals the input shape for every arch and selector") {
  for (const auto& arch : kArchs) {
    auto clf = build_classifier(arch, 1);
    const Tensor x = testing::random_tensor({2, arch.in_channels, 32, 32}, 2, 0.0f, 1.0f);
    for (int sel = -1; sel >= -5; --sel) {
      const LayerSelector s = LayerSelector::of(sel);
      const Tensor act = clf->forward_to_layer(x, s, nn::Mode::kEval);
      const ActivationShape shape = activation_shape(arch, s);
      INFO(to_string(arch.family) << " selector " << sel << " act " << cladec::to_string(act.shape()));
      CHECK(act.dim(1) == shape.channels);
      if (shape.is_vector()) {
        CHECK(act.rank() == 2);
      } else {
        CHECK(act.dim(2) == shape.height);
        CHECK(act.dim(3) == shape.width);
      }
      auto dec = build_decoder(arch, s, NeuronSubset::full(), 3);
      const Tensor y = dec->forward(act, nn::Mode::kEval);
      CHECK(y.shape() == x.shape());
      for (float v : y.values()) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
  }
}

TEST_CASE("layer activation shapes follow the architecture tables") {
  const ArchSpec vgg{ArchFamily::kVggTable1, 1, 10};
  CHECK(activation_shape(vgg, LayerSelector::of(-1)) == ActivationShape{10, 0, 0});
  CHECK(activation_shape(vgg, LayerSelector::of(-2)) == ActivationShape{512, 1, 1});
  CHECK(activation_shape(vgg, LayerSelector::of(-3)) == ActivationShape{512, 2, 2});
  CHECK(activation_shape(vgg, LayerSelector::of(-4)) == ActivationShape{256, 2, 2});
  CHECK(activation_shape(vgg, LayerSelector::of(-5)) == ActivationShape{256, 4, 4});
  const ArchSpec res{ArchFamily::kResNet10, 3, 100};
  CHECK(activation_shape(res, LayerSelector::of(-2)) == ActivationShape{512, 4, 4});
  CHECK(activation_shape(res, LayerSelector::of(-5)) == ActivationShape{64, 32, 32});
  CHECK_THROWS_AS(LayerSelector::of(0), ConfigError);
  CHECK_THROWS_AS(LayerSelector::of(-6), ConfigError);
  CHECK_THROWS_AS(LayerSelector::of(2), ConfigError);
}

TEST_CASE("decoders reject spatial sizes that stride-2 stages cannot reach") {
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(Decoder(ActivationShape{8, 3, 3}, 1, rng), ConfigError);
  CHECK_THROWS_AS(Decoder(ActivationShape{8, 64, 64}, 1, rng), ConfigError);
  CHECK_THROWS_AS(Decoder(ActivationShape{0, 4, 4}, 1, rng), ConfigError);
  Decoder d(ActivationShape{4, 32, 32}, 3, rng);
  CHECK(d.upsampling_stages() == 0);
  CHECK(d.deconv_stages() == 1);
}

TEST_CASE("neuron subsets") {
  CHECK(NeuronSubset::full().resolve(512).end == 512);
  const NeuronSubset s{10, 20};
  CHECK(s.size(512) == 10);
  CHECK(s.label() == "10-20");
  CHECK(NeuronSubset::full().label() == "all");
  CHECK_THROWS_AS((NeuronSubset{5, 5}.resolve(10)), ConfigError);
  CHECK_THROWS_AS((NeuronSubset{0, 11}.resolve(10)), ConfigError);

  const Tensor part({1, 2, 1, 1}, {3, 4});
  const Tensor full = zero_pad_subset(part, NeuronSubset{1, 3}, 5);
  CHECK(full.storage() == std::vector<float>{0, 3, 4, 0, 0});

  const ArchSpec vgg{ArchFamily::kVggTable1, 1, 10};
  auto dec = build_decoder(vgg, LayerSelector::of(-3), NeuronSubset{0, 10}, 1);
  auto clf = build_classifier(vgg, 1);
  const Tensor x = testing::random_tensor({2, 1, 32, 32}, 1, 0.0f, 1.0f);
  const Tensor a = forward_to_layer(*clf, x, LayerSelector::of(-3), NeuronSubset{0, 10}, nn::Mode::kEval);
  CHECK(a.dim(1) == 10);
  CHECK(dec->forward(a, nn::Mode::kEval).shape() == x.shape());
}

TEST_CASE("classifier state round-trips to identical logits") {
  for (const auto& arch : kArchs) {
    auto a = build_classifier(arch, 5);
    auto b = build_classifier(arch, 6);
    const Tensor x = testing::random_tensor({2, arch.in_channels, 32, 32}, 4, 0.0f, 1.0f);
    a->forward(x, nn::Mode::kTrain);  // moves the running statistics
    b->load(a->state());
    CHECK(a->forward(x, nn::Mode::kEval).storage() == b->forward(x, nn::Mode::kEval).storage());
  }
}

TEST_CASE("same seed builds identical networks") {
  const ArchSpec vgg{ArchFamily::kVggTable1, 1, 10};
  auto a = build_classifier(vgg, 9);
  auto b = build_classifier(vgg, 9);
  Archive x{"", a->state()}, y{"", b->state()};
  CHECK(encode_archive(x) == encode_archive(y));
}

TEST_CASE("classifier backward matches finite differences on the input") {
  const ArchSpec res{ArchFamily::kResNet10, 1, 10};
  auto clf = build_classifier(res, 2);
  Tensor x = testing::random_tensor({1, 1, 32, 32}, 3, 0.0f, 1.0f);
  for (int sel : {-1, -3}) {
    const LayerSelector s = LayerSelector::of(sel);
    const Tensor y = clf->forward_to_layer(x, s, nn::Mode::kEval);
    const Tensor w = testing::random_tensor(y.shape(), 5);
    const Tensor g = clf->backward_from(w, s);
    REQUIRE(g.shape() == x.shape());
    for (std::size_t k : {std::size_t{100}, std::size_t{517}, std::size_t{1000}}) {
      const float saved = x[k];
      const double eps = 1e-2;
      x[k] = saved + static_cast<float>(eps);
      const double up = testing::weighted_sum(clf->forward_to_layer(x, s, nn::Mode::kEval), w);
      x[k] = saved - static_cast<float>(eps);
      const double down = testing::weighted_sum(clf->forward_to_layer(x, s, nn::Mode::kEval), w);
      x[k] = saved;
      CHECK(testing::max_rel_error(g[k], (up - down) / (2 * eps)) < 2e-2);
    }
  }
}

TEST_CASE("reconstructor state carries encoder and decoder") {
  const ArchSpec vgg{ArchFamily::kVggTable1, 1, 10};
  auto a = build_reconstructor(vgg, LayerSelector::of(-4), NeuronSubset::full(), 1);
  auto b = build_reconstructor(vgg, LayerSelector::of(-4), NeuronSubset::full(), 2);
  const StateDict s = a.state();
  bool has_encoder = false, has_decoder = false;
  for (const auto& t : s) {
    has_encoder = has_encoder || t.name.rfind("encoder.", 0) == 0;
    has_decoder = has_decoder || t.name.rfind("decoder.", 0) == 0;
  }
  CHECK(has_encoder);
  CHECK(has_decoder);
  b.load(s);
  const Tensor x = testing::random_tensor({1, 1, 32, 32}, 1, 0.0f, 1.0f);
  CHECK(a.reconstruct(x).storage() == b.reconstruct(x).storage());
  CHECK(parse_arch_family("vgg") == ArchFamily::kVggTable1);
  CHECK(parse_arch_family("resnet10") == ArchFamily::kResNet10);
  CHECK_THROWS_AS(parse_arch_family("lenet"), ConfigError);
}
