#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <array>

#include "cladec/saliency.hpp"
#include "test_util.hpp"

using namespace cladec;
using namespace cladec::saliency;
using model::LayerSelector;

namespace {

float cam_at(const Tensor& m, int r, int c) { return m[static_cast<std::size_t>(r) * 32 + c]; }

}  // namespace

TEST_CASE("gradcam combination matches a reference fixture") {
  const Tensor act({2, 2, 2}, {1, 0, 0, 2, 0, 3, 1, 0});
  const Tensor grad({2, 2, 2}, {1, 1, 1, 1, -1, 0, 0, 0});
  const Tensor m = gradcam_from(act, grad);
  REQUIRE(m.shape() == Shape{32, 32});
  CHECK(cam_at(m, 0, 0) == doctest::Approx(0.5));
  CHECK(cam_at(m, 15, 16) == doctest::Approx(0.37353515625));
  CHECK(cam_at(m, 31, 31) == doctest::Approx(1.0));
  CHECK(cam_at(m, 8, 8) == doctest::Approx(0.47021484375));
  CHECK(cam_at(m, 10, 20) == doctest::Approx(0.21435546875));
}

TEST_CASE("gradcam maps lie in [0,1] and ignore positive gradient scaling") {
  for (std::uint64_t s = 0; s < 25; ++s) {
    const Tensor act = testing::random_tensor({4, 3, 3}, s, 0.0f, 2.0f);
    Tensor grad = testing::random_tensor({4, 3, 3}, s + 50);
    const Tensor m = gradcam_from(act, grad);
    float lo = 1.0f, hi = 0.0f;
    for (float v : m.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);
    CHECK((hi == doctest::Approx(1.0f) || hi == 0.0f));
    scale_inplace(grad, 3.5f);
    const Tensor scaled = gradcam_from(act, grad);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(scaled[i] == doctest::Approx(m[i]).epsilon(1e-5));
  }
}

TEST_CASE("gradcam is monotone in the rectified activation") {
  // One channel with unit weight: the map at each cell centre follows the activation order.
  const Tensor act({1, 2, 2}, {0.1f, 0.4f, 0.9f, 0.2f});
  const Tensor grad({1, 2, 2}, 1.0f);
  const Tensor m = gradcam_from(act, grad);
  const float c00 = cam_at(m, 8, 8), c01 = cam_at(m, 8, 24), c10 = cam_at(m, 24, 8), c11 = cam_at(m, 24, 24);
  CHECK(c10 > c01);
  CHECK(c01 > c11);
  CHECK(c11 > c00);
}

TEST_CASE("a constant or fully rectified map normalizes to zeros") {
  const Tensor flat = gradcam_from(Tensor({3, 1, 1}, 2.0f), Tensor({3, 1, 1}, 1.0f));
  for (float v : flat.values()) CHECK(v == 0.0f);
  const Tensor negative = gradcam_from(Tensor({2, 2, 2}, 1.0f), Tensor({2, 2, 2}, -1.0f));
  for (float v : negative.values()) CHECK(v == 0.0f);
}

TEST_CASE("gradcam on a classifier") {
  const model::ArchSpec arch{model::ArchFamily::kResNet10, 1, 10};
  auto clf = model::build_classifier(arch, 1);
  const Tensor x = testing::random_tensor({3, 1, 32, 32}, 2, 0.0f, 1.0f);
  const auto maps = gradcam(*clf, LayerSelector::of(-2), x);
  REQUIRE(maps.size() == 3);
  for (const auto& m : maps) {
    CHECK(m.values.shape() == Shape{32, 32});
    CHECK(m.source_layer == LayerSelector::of(-2));
  }
  const std::array<int, 3> targets{1, 2, 3};
  CHECK(gradcam(*clf, LayerSelector::of(-3), x, targets)[2].target_class == 3);
  CHECK_THROWS_AS(gradcam(*clf, LayerSelector::of(-1), x), model::ConfigError);
  CHECK(gradcam_layer_for(LayerSelector::of(-1)) == LayerSelector::of(-2));
  CHECK(gradcam_layer_for(LayerSelector::of(-4)) == LayerSelector::of(-4));
}

TEST_CASE("relevance of an occlusion that changes nothing is zero") {
  const Tensor x({1, 1, 32, 32}, 0.25f);
  const auto grid = data::occlusion_grid({0.25f});
  const train::ReconstructFn identity = [](const Tensor& t) { return t; };
  for (const auto& spec : grid) {
    CHECK(relevance_cladec(identity, x, spec) == 0.0);
    CHECK(relevance_cladec(identity, x, spec, RelevanceScope::kWholeImage) == 0.0);
  }
  const auto dark = data::occlusion_grid({0.75f});
  CHECK(relevance_cladec(identity, x, dark[0]) == doctest::Approx(144 * 0.25));

  SaliencyMap m{Tensor({32, 32}, 0.5f), LayerSelector::of(-2), 0};
  CHECK(relevance_gradcam(m, grid[3]) == doctest::Approx(72.0));
}

TEST_CASE("extreme selection picks the unique extreme") {
  std::mt19937_64 rng(1);
  const std::array<double, 5> s{0.3, 0.9, 0.1, 0.5, 0.2};
  CHECK(select_extreme(s, Extreme::kMax, rng) == 1);
  CHECK(select_extreme(s, Extreme::kMin, rng) == 2);
  CHECK_THROWS(select_extreme(std::span<const double>{}, Extreme::kMax, rng));
}

TEST_CASE("ties are broken uniformly") {
  std::mt19937_64 rng(2024);
  const std::array<double, 16> tied{};
  std::array<int, 16> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(select_extreme(tied, Extreme::kMax, rng))];
  double chi2 = 0.0;
  const double expected = draws / 16.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(15), chi2));
  INFO("chi2=" << chi2 << " p=" << p);
  CHECK(p > 0.01);

  // Partial ties: only the tied maxima are ever chosen, each about half the time.
  const std::array<double, 4> partial{1.0, 3.0, 3.0, 2.0};
  int first = 0;
  for (int i = 0; i < 2000; ++i) {
    const int k = select_extreme(partial, Extreme::kMax, rng);
    CHECK((k == 1 || k == 2));
    first += k == 1 ? 1 : 0;
  }
  CHECK(first > 850);
  CHECK(first < 1150);
}

TEST_CASE("uniform relevance gives a zero accuracy gap") {
  const model::ArchSpec arch{model::ArchFamily::kVggTable1, 1, 10};
  auto clf = model::build_classifier(arch, 3);
  const auto test = testing::synthetic_batch(20, 10, 1, 4);
  const std::vector<float> fill{0.3f};
  const Scorer flat = [](const Tensor& batch) { return std::vector<Scores>(static_cast<std::size_t>(batch.dim(0)), Scores{}); };
  const auto o = occlusion_study(*clf, flat, test, fill, 7, 8);
  CHECK(o.delta_acc == 0.0);
  CHECK(o.acc_occ_min == o.acc_occ_max);
  CHECK(o.table.scores.size() == 20);

  // The last-layer GradCAM of this VGG reads a 1x1 map, so every region scores alike.
  const auto g = occlusion_study(*clf, gradcam_scorer(*clf, LayerSelector::of(-1)), test, fill, 7, 8);
  CHECK(g.delta_acc == 0.0);
}

TEST_CASE("occlusion study is deterministic and csv formatted") {
  const model::ArchSpec arch{model::ArchFamily::kVggTable1, 1, 10};
  auto clf = model::build_classifier(arch, 3);
  const auto test = testing::synthetic_batch(12, 10, 1, 5);
  const std::vector<float> fill{0.3f};
  auto a = occlusion_study(*clf, random_scorer(1), test, fill, 9, 5);
  auto b = occlusion_study(*clf, random_scorer(1), test, fill, 9, 5);
  CHECK(a.acc_occ_max == b.acc_occ_max);
  CHECK(a.delta_acc == doctest::Approx(a.acc_occ_min - a.acc_occ_max));
  CHECK(OcclusionOutcome::header() ==
        std::vector<std::string>{"dataset", "arch", "layer", "method", "acc_occ_max", "acc_occ_min", "delta_acc", "seed"});
  a.dataset = "mnist";
  a.arch = "vgg-table1";
  a.layer = -3;
  a.method = Method::kGradCam;
  CHECK(a.to_csv().rfind("mnist,vgg-table1,-3,gradcam,", 0) == 0);
  CHECK(parse_method("cladec") == Method::kClaDec);
  CHECK_THROWS(parse_method("lime"));
}
