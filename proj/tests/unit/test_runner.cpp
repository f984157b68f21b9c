#include <doctest.h>

#include <limits>

#include "cladec/runner.hpp"
#include "cladec/state.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace cladec;
using namespace cladec::runner;
using config::Config;

namespace {

Config tiny(const std::filesystem::path& runs, const std::string& recipe) {
  Config c;
  c.set("recipe", recipe);
  c.set("data.dataset", "mnist");
  c.set("runs.dir", runs.string());
  c.set("train.epochs", "1");
  c.set("train.decoder_epochs", "1");
  c.set("train.eval_epochs", "1");
  c.set("train.batch_size", "16");
  c.set("run.seeds", "2");
  c.set("output.grid_images", "3");
  return c;
}

DatasetProvider synthetic(int train = 32, int test = 12) {
  return [=](data::DatasetName name) { return testing::synthetic_dataset(name, train, test); };
}

int lines(const std::filesystem::path& p) {
  const std::string t = read_file(p);
  return static_cast<int>(std::count(t.begin(), t.end(), '\n'));
}

}  // namespace

TEST_CASE("recipe defaults, profile caps and validation") {
  testing::TempDir dir("cfg");
  Config c = tiny(dir.path(), "layers");
  c.erase("run.seeds");
  auto e = ExperimentConfig::from_config(c);
  CHECK(e.selectors == std::vector<int>{-1, -2, -3, -4, -5});
  CHECK(e.seeds.size() == 5);
  CHECK(e.alphas == std::vector<double>{0.0});

  c.set("recipe", "alpha");
  CHECK(ExperimentConfig::from_config(c).alphas == std::vector<double>{1.0, 0.999, 0.9, 0.0});
  c.set("recipe", "epochs");
  auto ep = ExperimentConfig::from_config(c);
  CHECK(ep.encoder_epochs == std::vector<int>{0, 1, 4, 16, 64});
  CHECK(ep.selectors == std::vector<int>{-2});

  c.set("profile", "smoke");
  c.set("train.epochs", "64");
  c.set("train.decoder_epochs", "64");
  auto smoke = ExperimentConfig::from_config(c);
  CHECK(smoke.epochs == kSmokeEpochCap);
  CHECK(smoke.decoder_epochs == kSmokeEpochCap);
  CHECK(smoke.seeds.size() == 2);
  CHECK(smoke.encoder_epochs == std::vector<int>{0, 1, 4, 8});
  c.set("data.dataset", "cifar-100");
  CHECK_THROWS_AS(ExperimentConfig::from_config(c), model::ConfigError);

  Config d = tiny(dir.path(), "layers");
  d.set("run.seed_list", "3,3");
  CHECK_THROWS_AS(ExperimentConfig::from_config(d), model::ConfigError);
  d.set("run.seed_list", "3,4");
  CHECK(ExperimentConfig::from_config(d).seeds == std::vector<std::uint64_t>{3, 4});
  d.set("recipe", "tables");
  CHECK_THROWS_AS(ExperimentConfig::from_config(d), model::ConfigError);
  d.set("recipe", "alpha");
  d.set("cladec.alphas", "0.5,1.5");
  CHECK_THROWS_AS(ExperimentConfig::from_config(d), model::ConfigError);
}

TEST_CASE("identical configs map to identical output directories") {
  testing::TempDir dir("hash");
  const auto a = ExperimentConfig::from_config(tiny(dir.path(), "layers"));
  const auto b = ExperimentConfig::from_config(tiny(dir.path(), "layers"));
  CHECK(a.output_dir == b.output_dir);
  Config c = tiny(dir.path(), "layers");
  c.set("train.epochs", "2");
  CHECK(ExperimentConfig::from_config(c).output_dir != a.output_dir);
}

TEST_CASE("subset helpers") {
  using model::NeuronSubset;
  const auto nested = nested_subsets(512);
  CHECK(nested == std::vector<NeuronSubset>{{0, 1}, {0, 10}, {0, 51}, {0, 256}, {0, 512}});
  CHECK(disjoint_subsets(512) == std::vector<NeuronSubset>{{0, 10}, {10, 20}});
  CHECK(parse_subset("4-9") == NeuronSubset{4, 9});
  CHECK(parse_subset("all") == NeuronSubset::full());
  CHECK_THROWS_AS(parse_subset("9-4"), model::ConfigError);
  CHECK_THROWS_AS(parse_subset("7"), model::ConfigError);
  const auto scaled = scale_decays({{32, 0.1}, {48, 0.1}}, 8);
  CHECK(scaled[0].first == 4);
  CHECK(scaled[1].first == 6);
  CHECK(scale_decays({{32, 0.1}}, 64)[0].first == 32);
}

TEST_CASE("layers recipe writes every artifact and resumes without retraining") {
  testing::TempDir dir("layers");
  Config c = tiny(dir.path(), "layers");
  c.set("arch.layers", "-1,-3");
  auto cfg = ExperimentConfig::from_config(c);
  Runner first(cfg, synthetic());
  const auto s1 = first.run();
  CHECK(s1.failures.empty());
  CHECK(s1.records.size() == 4);
  // Per seed: one classifier, and a RefAE, ClaDec and two evaluation classifiers per layer.
  CHECK(s1.trained == 2 * (1 + 2 * 4));

  const auto out = cfg.output_dir;
  const std::string header = read_file(out / "metrics.csv").substr(0, read_file(out / "metrics.csv").find('\n'));
  CHECK(header ==
        "dataset,arch,selector,subset,alpha,seed,rec_loss_cladec,rec_loss_refae,delta_rec,"
        "acc_eval_cladec,acc_eval_refae,delta_acc,classifier_acc");
  CHECK(lines(out / "metrics.csv") == 5);
  const std::string summary = read_file(out / "metrics_summary.csv");
  CHECK(summary.find("mean_delta_acc") != std::string::npos);
  CHECK(summary.find("std_rec_loss_refae") != std::string::npos);
  CHECK(lines(out / "metrics_summary.csv") == 3);
  CHECK(read_file(out / "failures.json").find("[]") != std::string::npos);
  CHECK(std::filesystem::exists(out / "grid.png"));
  CHECK(std::filesystem::exists(out / "config.txt"));

  bool saw_log = false, saw_meta = false;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
    saw_log = saw_log || e.path().filename() == "train_log.csv";
    saw_meta = saw_meta || e.path().filename() == "meta.json";
  }
  CHECK(saw_log);
  CHECK(saw_meta);

  Runner second(cfg, synthetic());
  const auto s2 = second.run();
  CHECK(s2.trained == 0);
  CHECK(s2.reused > 0);
  CHECK(lines(out / "metrics.csv") == 5);
  REQUIRE(s2.records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(s2.records[i].to_csv() == s1.records[i].to_csv());
}

TEST_CASE("runner checkpoints live under runs/<hash>/<seed>") {
  testing::TempDir dir("dirs");
  auto cfg = ExperimentConfig::from_config(tiny(dir.path(), "layers"));
  Runner r(cfg, synthetic());
  const auto ckpt = r.classifier(5, 1);
  CHECK(std::filesystem::exists(r.run_dir(ckpt.meta.config_hash, 5) / "classifier.ckpt"));
  const auto meta = nlohmann::json::parse(read_file(r.run_dir(ckpt.meta.config_hash, 5) / "meta.json"));
  CHECK(meta["config"]["kind"] == "classifier");
  CHECK(meta["seed"] == 5);
  CHECK(r.classifier(5, 1).meta.config_hash == ckpt.meta.config_hash);
  CHECK(r.reused() == 1);
  CHECK(r.classifier(6, 1).meta.config_hash == ckpt.meta.config_hash);
  CHECK(r.trained() == 2);
}

TEST_CASE("failed cells are recorded while the rest complete") {
  testing::TempDir dir("fail");
  Config c = tiny(dir.path(), "layers");
  c.set("arch.layers", "-2");
  auto cfg = ExperimentConfig::from_config(c);
  const DatasetProvider poisoned = [](data::DatasetName name) {
    auto d = testing::synthetic_dataset(name, 32, 8);
    d.train.images[3] = std::numeric_limits<float>::quiet_NaN();
    return d;
  };
  Runner r(cfg, poisoned);
  const auto s = r.run();
  CHECK(s.records.empty());
  CHECK(s.failures.size() == 2);
  const auto j = nlohmann::json::parse(read_file(cfg.output_dir / "failures.json"));
  REQUIRE(j.size() == 2);
  CHECK(j[0]["last_good_epoch"] == 0);
  CHECK(j[0]["cell"].get<std::string>().find("layer=-2") != std::string::npos);
}

TEST_CASE("occlusion recipe") {
  testing::TempDir dir("occ");
  Config c = tiny(dir.path(), "occlusion");
  c.set("arch.layers", "-1,-3");
  c.set("run.seeds", "1");
  auto cfg = ExperimentConfig::from_config(c);
  Runner r(cfg, synthetic());
  const auto s = r.run();
  CHECK(s.failures.empty());
  CHECK(s.occlusion.size() == 4);
  const std::string csv = read_file(cfg.output_dir / "occlusion_results.csv");
  CHECK(csv.rfind("dataset,arch,layer,method,acc_occ_max,acc_occ_min,delta_acc,seed\n", 0) == 0);
  CHECK(lines(cfg.output_dir / "occlusion_results.csv") == 5);
  CHECK(std::filesystem::exists(cfg.output_dir / "fill_values.json"));
  for (const auto& o : s.occlusion) {
    if (o.method == saliency::Method::kGradCam && o.layer == -1) CHECK(o.delta_acc == 0.0);
  }
  Runner again(cfg, synthetic());
  again.run();
  CHECK(lines(cfg.output_dir / "occlusion_results.csv") == 5);
}

TEST_CASE("epochs and theory recipes") {
  testing::TempDir dir("ep");
  Config c = tiny(dir.path(), "epochs");
  c.set("epochs.list", "0,1");
  c.set("eval.enabled", "false");
  auto cfg = ExperimentConfig::from_config(c);
  Runner r(cfg, synthetic());
  const auto s = r.run();
  CHECK(s.failures.empty());
  CHECK(s.records.size() == 4);
  CHECK(std::isnan(s.records[0].acc_eval_cladec));
  CHECK(lines(cfg.output_dir / "epochs_report.csv") == 3);
  CHECK(std::filesystem::exists(cfg.output_dir / "epochs_0" / "metrics.csv"));
  CHECK(std::filesystem::exists(cfg.output_dir / "epochs_1" / "metrics.csv"));

  Config t = tiny(dir.path(), "theory");
  auto tcfg = ExperimentConfig::from_config(t);
  Runner th(tcfg, synthetic());
  const auto ts = th.run();
  CHECK(ts.failures.empty());
  CHECK(ts.theory.size() == 10);
  CHECK(lines(tcfg.output_dir / "theory_report.csv") == 11);
}

TEST_CASE("subset runs order rows by subset size") {
  testing::TempDir dir("sub");
  Config c = tiny(dir.path(), "subsets");
  c.set("subsets.list", "0-50,0-5");
  c.set("run.seeds", "1");
  c.set("eval.enabled", "false");
  const auto s = run_subsets(ExperimentConfig::from_config(c), synthetic());
  CHECK(s.failures.empty());
  REQUIRE(s.records.size() == 2);
  CHECK(s.records[0].subset == "0-5");
  CHECK(s.records[1].subset == "0-50");
  auto empty = ExperimentConfig::from_config(c);
  empty.subsets.clear();
  CHECK_THROWS_AS(run_subsets(empty, synthetic()), model::ConfigError);
}
