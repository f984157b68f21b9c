#include <doctest.h>

#include <algorithm>
#include <limits>
#include <set>

#include "cladec/state.hpp"
#include "cladec/trainers.hpp"
#include "test_util.hpp"

using namespace cladec;
using namespace cladec::train;
using model::ArchFamily;
using model::ArchSpec;
using model::LayerSelector;
using model::NeuronSubset;

namespace {

const ArchSpec kVgg{ArchFamily::kVggTable1, 1, 10};

TrainConfig quick_classifier(int epochs, std::uint64_t seed = 0) {
  TrainConfig c = TrainConfig::classifier_defaults();
  c.epochs = epochs;
  c.batch_size = 16;
  c.base_lr = 0.05;
  c.lr_decays.clear();
  c.seed = seed;
  return c;
}

TrainConfig quick_decoder(double alpha = 0.0) {
  TrainConfig c = TrainConfig::decoder_defaults();
  c.epochs = 1;
  c.batch_size = 16;
  c.alpha = alpha;
  return c;
}

std::string encoder_bytes(const StateDict& state, const std::string& prefix) {
  StateDict enc;
  for (const auto& t : state) {
    if (t.name.rfind(prefix, 0) == 0) enc.push_back({t.name.substr(prefix.size()), t.tensor});
  }
  return encode_archive(Archive{"", enc});
}

}  // namespace

TEST_CASE("derived seeds are deterministic and separate streams") {
  CHECK(derive_seed(0, "classifier") == derive_seed(0, "classifier"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s) {
    for (const char* tag : {"classifier", "refae", "cladec", "eval-classifier"}) seen.insert(derive_seed(s, tag));
  }
  CHECK(seen.size() == 16);

  const auto a = epoch_order(50, 3, 1);
  const auto b = epoch_order(50, 3, 1);
  CHECK(a == b);
  CHECK(a != epoch_order(50, 3, 2));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("training configs are validated") {
  TrainConfig c = TrainConfig::classifier_defaults();
  CHECK(c.momentum == doctest::Approx(0.9));
  CHECK(c.weight_decay == doctest::Approx(5e-4));
  CHECK(TrainConfig::decoder_defaults().optimizer == OptimizerKind::kAdam);
  CHECK(TrainConfig::decoder_defaults().base_lr == doctest::Approx(1e-3));
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), model::ConfigError);
  CHECK_NOTHROW(c.validate(true));
  c.epochs = 1;
  c.alpha = 1.5;
  CHECK_THROWS_AS(c.validate(), model::ConfigError);
  c.alpha = 0.0;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), model::ConfigError);
  CHECK(parse_optimizer("adam") == OptimizerKind::kAdam);
  CHECK_THROWS(parse_optimizer("lbfgs"));
}

TEST_CASE("classifier training lowers the loss and is reproducible") {
  const auto data = testing::synthetic_batch(64, 10, 1, 1);
  std::vector<EpochLog> logs;
  const Checkpoint a = train_classifier(kVgg, data, quick_classifier(3), [&](const EpochLog& l) { logs.push_back(l); });
  REQUIRE(logs.size() == 3);
  CHECK(logs.back().loss < logs.front().loss);
  CHECK(logs.back().epoch == 3);
  CHECK(a.meta.kind == CheckpointKind::kClassifier);
  CHECK(a.meta.epochs == 3);

  const Checkpoint b = train_classifier(kVgg, data, quick_classifier(3));
  CHECK(encode_archive(Archive{"", a.state}) == encode_archive(Archive{"", b.state}));
  const Checkpoint c = train_classifier(kVgg, data, quick_classifier(3, 1));
  CHECK(encode_archive(Archive{"", a.state}) != encode_archive(Archive{"", c.state}));
}

TEST_CASE("an untrained classifier is a valid zero-epoch checkpoint") {
  const auto data = testing::synthetic_batch(8, 10, 1, 1);
  const Checkpoint z = train_classifier(kVgg, data, quick_classifier(0));
  CHECK(z.meta.epochs == 0);
  auto clf = load_classifier(z);
  CHECK(clf->forward(data.images, nn::Mode::kEval).shape() == Shape{8, 10});
}

TEST_CASE("non-finite objectives raise TrainingError with the last good epoch") {
  auto data = testing::synthetic_batch(32, 10, 1, 1);
  data.images[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_classifier(kVgg, data, quick_classifier(2));
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.last_good_epoch() == 0);
  }
}

TEST_CASE("checkpoints round-trip through disk") {
  testing::TempDir dir("ckpt");
  const auto data = testing::synthetic_batch(16, 10, 1, 1);
  Checkpoint a = train_classifier(kVgg, data, quick_classifier(1));
  a.meta.config_hash = "abc";
  a.meta.dataset = "mnist";
  a.save(dir.path() / "classifier.ckpt");
  const Checkpoint b = Checkpoint::load(dir.path() / "classifier.ckpt");
  CHECK(b.meta.config_hash == "abc");
  CHECK(b.meta.dataset == "mnist");
  CHECK(b.meta.arch.family == ArchFamily::kVggTable1);
  CHECK(b.meta.final.loss == doctest::Approx(a.meta.final.loss));
  auto ca = load_classifier(a);
  auto cb = load_classifier(b);
  CHECK(ca->forward(data.images, nn::Mode::kEval).storage() == cb->forward(data.images, nn::Mode::kEval).storage());
  CHECK(CheckpointMeta::from_json(a.meta.to_json()).to_json() == a.meta.to_json());
}

TEST_CASE("ClaDec leaves the explained classifier byte-identical") {
  const auto data = testing::synthetic_batch(32, 10, 1, 2);
  const Checkpoint clf = train_classifier(kVgg, data, quick_classifier(1));
  const std::string before = encode_archive(Archive{"", clf.state});
  for (double alpha : {0.0, 0.5}) {
    const Checkpoint cd = train_cladec(clf, LayerSelector::of(-3), NeuronSubset::full(), data, quick_decoder(alpha));
    CHECK(cd.meta.kind == CheckpointKind::kClaDec);
    CHECK(cd.meta.alpha == doctest::Approx(alpha));
    CHECK(cd.meta.encoder_epochs == 1);
    CHECK(encoder_bytes(cd.state, "encoder.") == before);
  }
  CHECK(encode_archive(Archive{"", clf.state}) == before);
}

TEST_CASE("RefAE trains its encoder while ClaDec does not") {
  const auto data = testing::synthetic_batch(32, 10, 1, 3);
  const Checkpoint r = train_refae(kVgg, LayerSelector::of(-4), NeuronSubset::full(), data, quick_decoder());
  CHECK(r.meta.kind == CheckpointKind::kRefAE);
  auto fresh = model::build_classifier(kVgg, derive_seed(0, "refae"));
  const std::string init = encode_archive(Archive{"", fresh->state()});
  CHECK(encoder_bytes(r.state, "encoder.") != init);
  auto rec = load_reconstructor(r);
  CHECK(rec.reconstruct(data.images).shape() == data.images.shape());
}

TEST_CASE("ClaDec on a neuron subset") {
  const auto data = testing::synthetic_batch(16, 10, 1, 4);
  const Checkpoint clf = train_classifier(kVgg, data, quick_classifier(1));
  const Checkpoint cd = train_cladec(clf, LayerSelector::of(-2), NeuronSubset{0, 10}, data, quick_decoder());
  CHECK(cd.meta.subset == NeuronSubset{0, 10});
  auto rec = load_reconstructor(cd);
  CHECK(rec.reconstruct(data.images).shape() == data.images.shape());
  CHECK_THROWS_AS(train_cladec(clf, LayerSelector::of(-2), NeuronSubset{0, 600}, data, quick_decoder()),
                  model::ConfigError);
}

TEST_CASE("evaluation classifiers train on reconstructions") {
  const auto data = testing::synthetic_batch(16, 10, 1, 5);
  const Checkpoint r = train_refae(kVgg, LayerSelector::of(-4), NeuronSubset::full(), data, quick_decoder());
  const Checkpoint ev = train_eval_classifier(r, data, quick_classifier(1));
  CHECK(ev.meta.kind == CheckpointKind::kEval);
  CHECK(ev.meta.source == "refae");
  CHECK(load_classifier(ev)->forward(data.images, nn::Mode::kEval).shape() == Shape{16, 10});
}

TEST_CASE("train log rows append under one header") {
  testing::TempDir dir("log");
  const auto path = dir.path() / "train_log.csv";
  append_train_log(path, EpochLog{1, 2.0, 1.0, 0.5, 0.25});
  append_train_log(path, EpochLog{2, 1.0, 0.5, 0.25, 0.5});
  const std::string text = read_file(path);
  CHECK(text.rfind("epoch,loss,rec_loss,cls_loss,acc\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
