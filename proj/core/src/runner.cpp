#include "cladec/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cladec/explain.hpp"
#include "cladec/image_io.hpp"
#include "cladec/linear_theory.hpp"
#include "cladec/state.hpp"
#include "json.hpp"

namespace cladec::runner {
namespace {

namespace fs = std::filesystem;
using model::ConfigError;
using model::LayerSelector;
using model::NeuronSubset;

std::string fmt(double v) { return metrics::format_double(v); }

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <typename T, typename F>
std::string join_map(const std::vector<T>& items, F&& f) {
  std::vector<std::string> s;
  for (const auto& i : items) s.push_back(f(i));
  return join(s);
}

std::string decays_text(const std::vector<std::pair<int, double>>& decays) {
  return join_map(decays, [](const auto& d) { return std::to_string(d.first) + ":" + fmt(d.second); });
}

std::vector<std::pair<int, double>> parse_decays(const std::string& text) {
  std::vector<std::pair<int, double>> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("train.lr_decays entries look like epoch:factor, got '" + item + "'");
    }
    out.emplace_back(std::stoi(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
  }
  return out;
}

std::string subset_text(const NeuronSubset& s) {
  return std::to_string(s.start) + "-" + (s.end < 0 ? std::string("end") : std::to_string(s.end));
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::ifstream f(path);
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

const std::vector<int> kAllSelectors{-1, -2, -3, -4, -5};

}  // namespace

std::string to_string(Recipe recipe) {
  switch (recipe) {
    case Recipe::kLayers: return "layers";
    case Recipe::kAlpha: return "alpha";
    case Recipe::kEpochs: return "epochs";
    case Recipe::kSubsets: return "subsets";
    case Recipe::kOcclusion: return "occlusion";
    case Recipe::kTheory: return "theory";
  }
  return "layers";
}

Recipe parse_recipe(const std::string& text) {
  for (Recipe r : {Recipe::kLayers, Recipe::kAlpha, Recipe::kEpochs, Recipe::kSubsets,
                   Recipe::kOcclusion, Recipe::kTheory}) {
    if (to_string(r) == text) return r;
  }
  throw ConfigError("unknown recipe '" + text +
                    "' (expected layers, alpha, epochs, subsets, occlusion or theory)");
}

std::string to_string(Profile profile) { return profile == Profile::kSmoke ? "smoke" : "full"; }

Profile parse_profile(const std::string& text) {
  if (text == "full") return Profile::kFull;
  if (text == "smoke") return Profile::kSmoke;
  throw ConfigError("unknown profile '" + text + "' (expected full or smoke)");
}

NeuronSubset parse_subset(const std::string& text) {
  const auto dash = text.find('-');
  if (text == "all") return NeuronSubset::full();
  if (dash == std::string::npos) throw ConfigError("subset must look like start-end, got '" + text + "'");
  NeuronSubset s;
  s.start = std::stoi(text.substr(0, dash));
  const std::string end = text.substr(dash + 1);
  s.end = end == "end" ? -1 : std::stoi(end);
  if (s.start < 0 || (s.end >= 0 && s.end <= s.start)) {
    throw ConfigError("empty or inverted neuron subset '" + text + "'");
  }
  return s;
}

std::vector<NeuronSubset> nested_subsets(int channels) {
  std::vector<NeuronSubset> out;
  for (double frac : {0.0, 0.02, 0.10, 0.50, 1.0}) {
    const int n = frac == 0.0 ? 1 : std::max(1, static_cast<int>(std::lround(frac * channels)));
    NeuronSubset s{0, n};
    if (out.empty() || out.back().end != n) out.push_back(s);
  }
  return out;
}

std::vector<NeuronSubset> disjoint_subsets(int channels) {
  const int n = std::max(1, static_cast<int>(std::lround(0.02 * channels)));
  if (2 * n > channels) throw ConfigError("layer too narrow for two disjoint 2% subsets");
  return {NeuronSubset{0, n}, NeuronSubset{n, 2 * n}};
}

std::vector<std::pair<int, double>> scale_decays(const std::vector<std::pair<int, double>>& decays,
                                                 int epochs) {
  std::vector<std::pair<int, double>> out;
  for (const auto& [at, factor] : decays) {
    const int scaled = static_cast<int>(std::lround(static_cast<double>(at) * epochs / 64.0));
    out.emplace_back(std::max(1, scaled), factor);
  }
  return out;
}

fs::path resolve_runs_dir(const std::optional<fs::path>& explicit_dir) {
  if (explicit_dir) return *explicit_dir;
  if (const char* env = std::getenv("CLADEC_RUNS_DIR"); env != nullptr && *env != '\0') return env;
  return "runs";
}

ExperimentConfig ExperimentConfig::from_config(const config::Config& c) {
  ExperimentConfig e;
  e.recipe = parse_recipe(c.get_or("recipe", "layers"));
  e.profile = parse_profile(c.get_or("profile", "full"));
  e.dataset = data::parse_dataset_name(c.get_or("data.dataset", "fashion-mnist"));
  e.arch = model::parse_arch_family(c.get_or("arch.family", "vgg-table1"));

  if (c.has("arch.layers")) {
    e.selectors = c.get_int_list("arch.layers");
  } else if (c.has("arch.layer")) {
    e.selectors = {c.get_int("arch.layer", -1)};
  } else if (e.recipe == Recipe::kLayers || e.recipe == Recipe::kOcclusion) {
    e.selectors = kAllSelectors;
  } else {
    e.selectors = {-2};
  }
  for (int s : e.selectors) LayerSelector::of(s);

  if (c.has("cladec.alphas")) {
    e.alphas = c.get_double_list("cladec.alphas");
  } else if (c.has("cladec.alpha")) {
    e.alphas = {c.get_double("cladec.alpha", 0.0)};
  } else if (e.recipe == Recipe::kAlpha) {
    e.alphas = {1.0, 0.999, 0.9, 0.0};
  } else {
    e.alphas = {0.0};
  }
  for (double a : e.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha must lie in [0,1], got " + fmt(a));
  }

  if (c.has("run.seed_list")) {
    for (const auto& s : c.get_list("run.seed_list")) e.seeds.push_back(std::stoull(s));
  } else {
    const std::uint64_t base = c.get_u64("run.seed", 0);
    const int count = c.get_int("run.seeds", 5);
    if (count < 1) throw ConfigError("run.seeds must be at least 1");
    for (int i = 0; i < count; ++i) e.seeds.push_back(base + static_cast<std::uint64_t>(i));
  }
  if (std::set<std::uint64_t>(e.seeds.begin(), e.seeds.end()).size() != e.seeds.size()) {
    throw ConfigError("seeds must be pairwise distinct");
  }

  e.epochs = c.get_int("train.epochs", 64);
  e.decoder_epochs = c.get_int("train.decoder_epochs", e.epochs);
  e.eval_epochs = c.get_int("train.eval_epochs", e.epochs);
  e.batch_size = c.get_int("train.batch_size", 128);
  e.sgd_lr = c.get_double("train.lr", 0.1);
  e.momentum = c.get_double("train.momentum", 0.9);
  e.weight_decay = c.get_double("train.weight_decay", 5e-4);
  e.adam_lr = c.get_double("train.adam_lr", 1e-3);
  if (c.has("train.lr_decays")) e.lr_decays = parse_decays(c.get("train.lr_decays"));
  e.encoder_epochs = c.has("epochs.list") ? c.get_int_list("epochs.list")
                                          : (e.recipe == Recipe::kEpochs
                                                 ? std::vector<int>{0, 1, 4, 16, 64}
                                                 : std::vector<int>{e.epochs});
  e.evaluate = c.get_bool("eval.enabled", true);
  e.limit_train = c.get_int("data.limit_train", 0);
  e.limit_test = c.get_int("data.limit_test", 0);
  e.grid_images = c.get_int("output.grid_images", 8);
  const std::string scope = c.get_or("occlusion.scope", "region");
  if (scope == "whole") {
    e.relevance_scope = saliency::RelevanceScope::kWholeImage;
  } else if (scope != "region") {
    throw ConfigError("occlusion.scope must be region or whole");
  }
  if (c.has("occlusion.methods")) {
    for (const auto& m : c.get_list("occlusion.methods")) e.methods.push_back(saliency::parse_method(m));
  } else {
    e.methods = {saliency::Method::kClaDec, saliency::Method::kGradCam};
  }

  const model::ArchSpec spec = e.arch_spec();
  const int channels = model::activation_shape(spec, LayerSelector::of(e.selectors.front())).channels;
  if (c.has("subsets.list")) {
    for (const auto& s : c.get_list("subsets.list")) e.subsets.push_back(parse_subset(s));
  } else if (e.recipe == Recipe::kSubsets) {
    const std::string mode = c.get_or("subsets.mode", "nested");
    if (mode == "nested") {
      e.subsets = nested_subsets(channels);
    } else if (mode == "disjoint") {
      e.subsets = disjoint_subsets(channels);
    } else {
      throw ConfigError("subsets.mode must be nested or disjoint");
    }
  } else {
    NeuronSubset s{c.get_int("arch.subset_start", 0), c.get_int("arch.subset_end", -1)};
    e.subsets = {s};
  }
  if (e.subsets.empty()) throw ConfigError("subset list is empty");
  for (int sel : e.selectors) {
    const int ch = model::activation_shape(spec, LayerSelector::of(sel)).channels;
    for (const auto& s : e.subsets) s.resolve(ch);
  }

  if (e.profile == Profile::kSmoke) {
    if (e.dataset == data::DatasetName::kCifar100) {
      throw ConfigError("the smoke profile covers MNIST and Fashion-MNIST only");
    }
    e.epochs = std::min(e.epochs, kSmokeEpochCap);
    e.decoder_epochs = std::min(e.decoder_epochs, kSmokeEpochCap);
    e.eval_epochs = std::min(e.eval_epochs, kSmokeEpochCap);
    for (int& ep : e.encoder_epochs) ep = std::min(ep, kSmokeEpochCap);
    e.encoder_epochs.erase(std::unique(e.encoder_epochs.begin(), e.encoder_epochs.end()),
                           e.encoder_epochs.end());
    if (e.seeds.size() > static_cast<std::size_t>(kSmokeSeedCap)) e.seeds.resize(kSmokeSeedCap);
  }
  for (int ep : e.encoder_epochs) {
    if (ep < 0) throw ConfigError("classifier epochs must be non-negative");
  }
  if (e.decoder_epochs < 1 || e.eval_epochs < 1) throw ConfigError("decoder and eval epochs must be >= 1");
  if (e.recipe != Recipe::kEpochs && e.epochs < 0) throw ConfigError("train.epochs must be >= 0");

  e.runs_dir = resolve_runs_dir(c.has("runs.dir") ? std::optional<fs::path>(c.get("runs.dir"))
                                                  : std::nullopt);
  if (c.has("data.dir")) e.data_dir = fs::path(c.get("data.dir"));

  config::Config& f = e.effective;
  f.set("recipe", to_string(e.recipe));
  f.set("profile", to_string(e.profile));
  f.set("data.dataset", data::to_string(e.dataset));
  f.set("data.limit_train", std::to_string(e.limit_train));
  f.set("data.limit_test", std::to_string(e.limit_test));
  f.set("arch.family", model::to_string(e.arch));
  f.set("arch.layers", join_map(e.selectors, [](int s) { return std::to_string(s); }));
  f.set("cladec.alphas", join_map(e.alphas, [](double a) { return fmt(a); }));
  f.set("run.seed_list", join_map(e.seeds, [](std::uint64_t s) { return std::to_string(s); }));
  f.set("train.epochs", std::to_string(e.epochs));
  f.set("train.decoder_epochs", std::to_string(e.decoder_epochs));
  f.set("train.eval_epochs", std::to_string(e.eval_epochs));
  f.set("train.batch_size", std::to_string(e.batch_size));
  f.set("train.lr", fmt(e.sgd_lr));
  f.set("train.momentum", fmt(e.momentum));
  f.set("train.weight_decay", fmt(e.weight_decay));
  f.set("train.adam_lr", fmt(e.adam_lr));
  f.set("train.lr_decays", decays_text(e.lr_decays));
  f.set("epochs.list", join_map(e.encoder_epochs, [](int v) { return std::to_string(v); }));
  f.set("subsets.list", join_map(e.subsets, subset_text));
  f.set("occlusion.methods", join_map(e.methods, [](saliency::Method m) { return saliency::to_string(m); }));
  f.set("occlusion.scope", scope);
  f.set("eval.enabled", e.evaluate ? "true" : "false");

  e.output_dir = c.has("output.dir")
                     ? fs::path(c.get("output.dir"))
                     : e.runs_dir / "reports" / (to_string(e.recipe) + "-" + f.hash());
  return e;
}

model::ArchSpec ExperimentConfig::arch_spec() const {
  const data::DatasetSpec ds{dataset, data::Split::kTrain};
  return {arch, ds.channels(), ds.classes()};
}

train::TrainConfig ExperimentConfig::classifier_train(std::uint64_t seed, int ep) const {
  train::TrainConfig t = train::TrainConfig::classifier_defaults();
  t.epochs = ep;
  t.base_lr = sgd_lr;
  t.momentum = momentum;
  t.weight_decay = weight_decay;
  t.lr_decays = scale_decays(lr_decays, ep);
  t.batch_size = batch_size;
  t.seed = seed;
  return t;
}

train::TrainConfig ExperimentConfig::decoder_train(std::uint64_t seed, double alpha) const {
  train::TrainConfig t = train::TrainConfig::decoder_defaults();
  t.epochs = decoder_epochs;
  t.base_lr = adam_lr;
  t.batch_size = batch_size;
  t.seed = seed;
  t.alpha = alpha;
  return t;
}

train::TrainConfig ExperimentConfig::eval_train(std::uint64_t seed) const {
  train::TrainConfig t = classifier_train(seed, eval_epochs);
  return t;
}

DatasetProvider file_provider(std::optional<fs::path> data_dir, int limit_train, int limit_test) {
  return [data_dir = std::move(data_dir), limit_train, limit_test](data::DatasetName name) {
    data::Dataset d = data::load_both(name, data::resolve_data_dir(data_dir));
    d.train = d.train.head(limit_train);
    d.test = d.test.head(limit_test);
    return d;
  };
}

void write_failures_json(const fs::path& path, const std::vector<Failure>& failures) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& f : failures) {
    j.push_back({{"cell", f.cell},
                 {"seed", f.seed},
                 {"error", f.error},
                 {"last_good_epoch", f.last_good_epoch}});
  }
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------- Runner

Runner::Runner(ExperimentConfig cfg, DatasetProvider provider, LogFn log)
    : cfg_(std::move(cfg)), provider_(std::move(provider)), log_(std::move(log)) {}

void Runner::log(const std::string& msg) const {
  if (log_) log_(msg);
}

const data::Dataset& Runner::dataset() {
  if (!dataset_) {
    dataset_ = provider_(cfg_.dataset);
    const auto spec = cfg_.arch_spec();
    if (dataset_->train.size() > 0 && dataset_->train.channels() != spec.in_channels) {
      throw data::DataError("dataset provider returned the wrong channel count");
    }
  }
  return *dataset_;
}

const std::vector<float>& Runner::fill_value() {
  if (!fill_) {
    const auto& d = dataset();
    fill_ = cfg_.limit_train > 0 ? data::compute_fill_value(d.train)
                                 : data::cached_fill_value(d, cfg_.runs_dir);
  }
  return *fill_;
}

fs::path Runner::run_dir(const std::string& hash, std::uint64_t seed) const {
  return cfg_.runs_dir / hash / std::to_string(seed);
}

config::Config Runner::classifier_cell(int epochs) const {
  config::Config c = cfg_.effective.select({"data.dataset", "data.limit_train", "arch.family",
                                            "train.batch_size", "train.lr", "train.momentum",
                                            "train.weight_decay"});
  c.set("kind", "classifier");
  c.set("train.epochs", std::to_string(epochs));
  c.set("train.lr_decays", decays_text(scale_decays(cfg_.lr_decays, epochs)));
  return c;
}

config::Config Runner::refae_cell(LayerSelector selector, const NeuronSubset& subset) const {
  config::Config c = cfg_.effective.select({"data.dataset", "data.limit_train", "arch.family",
                                            "train.batch_size", "train.adam_lr",
                                            "train.decoder_epochs"});
  c.set("kind", "refae");
  c.set("arch.layer", std::to_string(selector.index));
  c.set("arch.subset", subset_text(subset));
  return c;
}

config::Config Runner::cladec_cell(LayerSelector selector, const NeuronSubset& subset,
                                   double alpha, int encoder_epochs) const {
  config::Config c = cfg_.effective.select({"train.batch_size", "train.adam_lr",
                                            "train.decoder_epochs"});
  c.set("kind", "cladec");
  c.set("classifier", classifier_cell(encoder_epochs).hash());
  c.set("arch.layer", std::to_string(selector.index));
  c.set("arch.subset", subset_text(subset));
  c.set("cladec.alpha", fmt(alpha));
  return c;
}

train::Checkpoint Runner::cached(
    const config::Config& cell, std::uint64_t seed, train::CheckpointKind kind,
    const std::function<train::Checkpoint(const train::EpochCallback&)>& fit) {
  const std::string hash = cell.hash();
  const fs::path dir = run_dir(hash, seed);
  const fs::path path = dir / (train::to_string(kind) + ".ckpt");
  if (fs::exists(path)) {
    ++reused_;
    return train::Checkpoint::load(path);
  }
  fs::create_directories(dir);
  const fs::path log_path = dir / "train_log.csv";
  fs::remove(log_path);
  const std::string tag = train::to_string(kind) + " " + hash + "/" + std::to_string(seed);
  log("training " + tag);
  train::Checkpoint ckpt = fit([&](const train::EpochLog& row) {
    train::append_train_log(log_path, row);
    log("  " + tag + " epoch " + std::to_string(row.epoch) + " loss=" + fmt(row.loss) +
        " rec=" + fmt(row.rec_loss) + " cls=" + fmt(row.cls_loss) + " acc=" + fmt(row.acc));
  });
  ckpt.meta.config_hash = hash;
  ckpt.meta.dataset = data::to_string(cfg_.dataset);
  ckpt.save(path);
  nlohmann::json meta = nlohmann::json::parse(ckpt.meta.to_json());
  meta["config"] = cell.values();
  write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
  ++trained_;
  return ckpt;
}

train::Checkpoint Runner::classifier(std::uint64_t seed, int epochs) {
  return cached(classifier_cell(epochs), seed, train::CheckpointKind::kClassifier,
                [&](const train::EpochCallback& cb) {
                  return train::train_classifier(cfg_.arch_spec(), dataset().train,
                                                 cfg_.classifier_train(seed, epochs), cb);
                });
}

train::Checkpoint Runner::refae(std::uint64_t seed, LayerSelector selector,
                                const NeuronSubset& subset) {
  return cached(refae_cell(selector, subset), seed, train::CheckpointKind::kRefAE,
                [&](const train::EpochCallback& cb) {
                  return train::train_refae(cfg_.arch_spec(), selector, subset, dataset().train,
                                            cfg_.decoder_train(seed, 0.0), cb);
                });
}

train::Checkpoint Runner::cladec(std::uint64_t seed, LayerSelector selector,
                                 const NeuronSubset& subset, double alpha, int encoder_epochs) {
  const train::Checkpoint clf = classifier(seed, encoder_epochs);
  return cached(cladec_cell(selector, subset, alpha, encoder_epochs), seed,
                train::CheckpointKind::kClaDec, [&](const train::EpochCallback& cb) {
                  return train::train_cladec(clf, selector, subset, dataset().train,
                                             cfg_.decoder_train(seed, alpha), cb);
                });
}

train::Checkpoint Runner::eval_classifier(std::uint64_t seed, const train::Checkpoint& source) {
  config::Config c = classifier_cell(cfg_.eval_epochs);
  c.set("kind", "eval");
  c.set("source", source.meta.config_hash);
  return cached(c, seed, train::CheckpointKind::kEval, [&](const train::EpochCallback& cb) {
    return train::train_eval_classifier(source, dataset().train, cfg_.eval_train(seed), cb);
  });
}

metrics::MetricsRecord Runner::measure(std::uint64_t seed, LayerSelector selector,
                                       const NeuronSubset& subset, double alpha,
                                       int encoder_epochs) {
  config::Config cell;
  cell.set("kind", "record");
  cell.set("cladec", cladec_cell(selector, subset, alpha, encoder_epochs).hash());
  cell.set("refae", refae_cell(selector, subset).hash());
  cell.merge(cfg_.effective.select({"data.limit_test", "eval.enabled", "train.eval_epochs"}));
  const fs::path dir = run_dir(cell.hash(), seed);
  const fs::path record_path = dir / "record.csv";
  if (fs::exists(record_path)) {
    const auto rows = metrics::read_metrics_csv(record_path);
    if (rows.size() == 1) return rows.front();
  }

  const train::Checkpoint clf = classifier(seed, encoder_epochs);
  const train::Checkpoint rae = refae(seed, selector, subset);
  const train::Checkpoint cd = cladec(seed, selector, subset, alpha, encoder_epochs);
  const auto& test = dataset().test;

  auto rec_e = train::load_reconstructor(cd);
  auto rec_r = train::load_reconstructor(rae);
  const Tensor xe = metrics::reconstruct_all(rec_e, test.images);
  const Tensor xr = metrics::reconstruct_all(rec_r, test.images);

  metrics::MetricsRecord r;
  r.dataset = data::to_string(cfg_.dataset);
  r.arch = model::to_string(cfg_.arch);
  r.selector = selector.index;
  r.subset = subset.label();
  r.alpha = alpha;
  r.seed = seed;
  r.rec_loss_cladec = metrics::rec_loss(test.images, xe);
  r.rec_loss_refae = metrics::rec_loss(test.images, xr);
  r.classifier_acc = metrics::accuracy(clf, test);
  if (cfg_.evaluate) {
    const train::Checkpoint ev_e = eval_classifier(seed, cd);
    const train::Checkpoint ev_r = eval_classifier(seed, rae);
    r.acc_eval_cladec = metrics::accuracy(ev_e, test, [&](const Tensor& x) { return rec_e.reconstruct(x); });
    r.acc_eval_refae = metrics::accuracy(ev_r, test, [&](const Tensor& x) { return rec_r.reconstruct(x); });
  } else {
    r.acc_eval_cladec = r.acc_eval_refae = std::nan("");
  }
  r.derive_deltas();

  metrics::AltRecLossRecord alt{r.dataset,
                                r.arch,
                                r.selector,
                                r.subset,
                                r.alpha,
                                r.seed,
                                metrics::rec_loss_sum(test.images, xe),
                                metrics::rec_loss_sum(test.images, xr),
                                metrics::rec_loss_norm(test.images, xe),
                                metrics::rec_loss_norm(test.images, xr)};
  write_file_atomic(dir / "record_alt.csv",
                    metrics::join_header(metrics::AltRecLossRecord::header()) + "\n" + alt.to_csv() + "\n");
  metrics::write_metrics_csv(record_path, std::vector<metrics::MetricsRecord>{r});
  return r;
}

void Runner::append_record(const fs::path& path, const metrics::MetricsRecord& r) const {
  fs::create_directories(path.parent_path());
  fs::path lock_path = path;
  lock_path += ".lock";
  metrics::FileLock lock(lock_path);
  const std::string key = r.config_key() + "#" + std::to_string(r.seed);
  bool fresh = true;
  if (fs::exists(path)) {
    const auto lines = read_lines(path);
    fresh = lines.empty();
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto existing = metrics::MetricsRecord::from_csv(lines[i]);
      if (existing.config_key() + "#" + std::to_string(existing.seed) == key) return;
    }
  }
  std::ofstream f(path, std::ios::app);
  if (fresh) f << metrics::join_header(metrics::MetricsRecord::header()) << '\n';
  f << r.to_csv() << '\n';
}

void Runner::render_cell_grid(const fs::path& path,
                              const std::vector<std::pair<train::Checkpoint, train::Checkpoint>>& pairs) {
  if (cfg_.grid_images <= 0 || pairs.empty()) return;
  const auto& test = dataset().test;
  const Tensor x = test.images.slice_batch(0, std::min(cfg_.grid_images, test.size()));
  explain::GridRows grid;
  bool first = true;
  for (const auto& [cd, rae] : pairs) {
    const auto triplets = explain::make_triplets(x, cd, rae);
    auto rows = explain::triplet_rows(triplets, first);
    std::string suffix;
    if (cfg_.recipe == Recipe::kAlpha) suffix = " A" + fmt(cd.meta.alpha);
    if (cfg_.recipe == Recipe::kSubsets) suffix = " N" + subset_text(cd.meta.subset);
    if (cfg_.recipe == Recipe::kEpochs) suffix = " E" + std::to_string(cd.meta.encoder_epochs);
    for (std::size_t i = 0; i < rows.rows.size(); ++i) {
      if (rows.labels[i] != "INPUT") rows.labels[i] += suffix;
      grid.rows.push_back(std::move(rows.rows[i]));
      grid.labels.push_back(rows.labels[i]);
    }
    first = false;
  }
  image::write_image(path, explain::render_grid(grid.rows, grid.labels));
}

void Runner::run_metric_cells(RunSummary& out) {
  const fs::path csv = cfg_.output_dir / "metrics.csv";
  const int enc_epochs = cfg_.epochs;
  for (std::uint64_t seed : cfg_.seeds) {
    std::vector<std::pair<train::Checkpoint, train::Checkpoint>> grid_pairs;
    bool seed_ok = true;
    for (int sel : cfg_.selectors) {
      for (const auto& subset : cfg_.subsets) {
        for (double alpha : cfg_.alphas) {
          const std::string cell = "layer=" + std::to_string(sel) + " subset=" + subset_text(subset) +
                                   " alpha=" + fmt(alpha);
          try {
            const auto r = measure(seed, LayerSelector::of(sel), subset, alpha, enc_epochs);
            append_record(csv, r);
            out.records.push_back(r);
            if (seed == cfg_.seeds.front()) {
              grid_pairs.emplace_back(cladec(seed, LayerSelector::of(sel), subset, alpha, enc_epochs),
                                      refae(seed, LayerSelector::of(sel), subset));
            }
          } catch (const train::TrainingError& e) {
            out.failures.push_back({cell, seed, e.what(), e.last_good_epoch()});
            seed_ok = false;
          } catch (const std::exception& e) {
            out.failures.push_back({cell, seed, e.what(), -1});
            seed_ok = false;
          }
        }
      }
    }
    if (seed == cfg_.seeds.front() && !grid_pairs.empty()) {
      try {
        render_cell_grid(cfg_.output_dir / "grid.png", grid_pairs);
      } catch (const std::exception& e) {
        out.failures.push_back({"grid", seed, e.what(), -1});
      }
    }
    (void)seed_ok;
  }
  const auto summary = metrics::aggregate_all(out.records);
  if (!summary.empty()) metrics::write_summary_csv(cfg_.output_dir / "metrics_summary.csv", summary);
}

void Runner::run_epochs(RunSummary& out) {
  const int sel = cfg_.selectors.front();
  const NeuronSubset subset = cfg_.subsets.front();
  const double alpha = cfg_.alphas.front();
  std::string report = "encoder_epochs,n,mean_classifier_acc,mean_rec_loss_cladec,std_rec_loss_cladec,"
                       "mean_delta_acc,std_delta_acc,p_rec_vs_previous\n";
  std::vector<double> previous;
  std::vector<std::pair<train::Checkpoint, train::Checkpoint>> grid_pairs;
  for (int ep : cfg_.encoder_epochs) {
    const fs::path dir = cfg_.output_dir / ("epochs_" + std::to_string(ep));
    std::vector<metrics::MetricsRecord> rows;
    for (std::uint64_t seed : cfg_.seeds) {
      const std::string cell = "encoder_epochs=" + std::to_string(ep) + " layer=" + std::to_string(sel);
      try {
        const auto r = measure(seed, LayerSelector::of(sel), subset, alpha, ep);
        append_record(dir / "metrics.csv", r);
        rows.push_back(r);
        out.records.push_back(r);
        if (seed == cfg_.seeds.front()) {
          grid_pairs.emplace_back(cladec(seed, LayerSelector::of(sel), subset, alpha, ep),
                                  refae(seed, LayerSelector::of(sel), subset));
        }
      } catch (const train::TrainingError& e) {
        out.failures.push_back({cell, seed, e.what(), e.last_good_epoch()});
      } catch (const std::exception& e) {
        out.failures.push_back({cell, seed, e.what(), -1});
      }
    }
    if (rows.empty()) continue;
    if (rows.size() >= 2) metrics::write_summary_csv(dir / "metrics_summary.csv", metrics::aggregate_all(rows));
    std::vector<double> rec, dacc, cacc;
    for (const auto& r : rows) {
      rec.push_back(r.rec_loss_cladec);
      dacc.push_back(r.delta_acc);
      cacc.push_back(r.classifier_acc);
    }
    const auto srec = metrics::mean_std(rec), sdacc = metrics::mean_std(dacc);
    std::string p = "nan";
    if (previous.size() >= 2 && rec.size() >= 2) p = fmt(metrics::welch_t_test(previous, rec).p);
    report += std::to_string(ep) + "," + std::to_string(rows.size()) + "," +
              fmt(metrics::mean_std(cacc).mean) + "," + fmt(srec.mean) + "," + fmt(srec.std) + "," +
              fmt(sdacc.mean) + "," + fmt(sdacc.std) + "," + p + "\n";
    previous = rec;
  }
  write_file_atomic(cfg_.output_dir / "epochs_report.csv", report);
  try {
    render_cell_grid(cfg_.output_dir / "grid.png", grid_pairs);
  } catch (const std::exception& e) {
    out.failures.push_back({"grid", cfg_.seeds.front(), e.what(), -1});
  }
}

void Runner::run_occlusion(RunSummary& out) {
  const fs::path csv = cfg_.output_dir / "occlusion_results.csv";
  const std::string header = metrics::join_header(saliency::OcclusionOutcome::header());
  const auto& test = dataset().test;
  const auto& fill = fill_value();
  for (std::uint64_t seed : cfg_.seeds) {
    for (int sel : cfg_.selectors) {
      for (saliency::Method method : cfg_.methods) {
        const std::string cell = "layer=" + std::to_string(sel) + " method=" + saliency::to_string(method);
        try {
          const train::Checkpoint clf_ckpt = classifier(seed, cfg_.epochs);
          config::Config c;
          c.set("kind", "occlusion");
          c.set("classifier", clf_ckpt.meta.config_hash);
          c.set("method", saliency::to_string(method));
          c.set("arch.layer", std::to_string(sel));
          c.merge(cfg_.effective.select({"data.limit_test", "occlusion.scope"}));
          std::optional<train::Checkpoint> cd;
          if (method == saliency::Method::kClaDec) {
            cd = cladec(seed, LayerSelector::of(sel), NeuronSubset::full(), cfg_.alphas.front(), cfg_.epochs);
            c.set("cladec", cd->meta.config_hash);
          }
          const fs::path cache = run_dir(c.hash(), seed) / "occlusion.csv";
          saliency::OcclusionOutcome o;
          if (fs::exists(cache)) {
            const auto lines = read_lines(cache);
            if (lines.size() != 2) throw std::runtime_error("corrupt cache " + cache.string());
            std::istringstream in(lines[1]);
            std::string f;
            std::vector<std::string> v;
            while (std::getline(in, f, ',')) v.push_back(f);
            o.dataset = v.at(0);
            o.arch = v.at(1);
            o.layer = std::stoi(v.at(2));
            o.method = saliency::parse_method(v.at(3));
            o.acc_occ_max = std::stod(v.at(4));
            o.acc_occ_min = std::stod(v.at(5));
            o.delta_acc = std::stod(v.at(6));
            o.seed = std::stoull(v.at(7));
            ++reused_;
          } else {
            auto clf = train::load_classifier(clf_ckpt);
            std::optional<model::Reconstructor> rec;
            saliency::Scorer scorer;
            if (method == saliency::Method::kClaDec) {
              rec = train::load_reconstructor(*cd);
              scorer = saliency::cladec_scorer(*rec, fill, cfg_.relevance_scope);
            } else if (method == saliency::Method::kGradCam) {
              scorer = saliency::gradcam_scorer(*clf, LayerSelector::of(sel));
            } else {
              scorer = saliency::random_scorer(train::derive_seed(seed, "random-relevance"));
            }
            log("occlusion study " + cell + " seed=" + std::to_string(seed));
            o = saliency::occlusion_study(*clf, scorer, test, fill, seed);
            o.dataset = data::to_string(cfg_.dataset);
            o.arch = model::to_string(cfg_.arch);
            o.layer = sel;
            o.method = method;
            o.table.method = method;
            o.table.selector = LayerSelector::of(sel);
            write_file_atomic(cache, header + "\n" + o.to_csv() + "\n");
          }
          {
            fs::path lock_path = csv;
            lock_path += ".lock";
            fs::create_directories(cfg_.output_dir);
            metrics::FileLock lock(lock_path);
            bool present = false;
            const auto lines = fs::exists(csv) ? read_lines(csv) : std::vector<std::string>{};
            for (std::size_t i = 1; i < lines.size(); ++i) present = present || lines[i] == o.to_csv();
            if (!present) {
              std::ofstream f(csv, std::ios::app);
              if (lines.empty()) f << header << '\n';
              f << o.to_csv() << '\n';
            }
          }
          out.occlusion.push_back(std::move(o));
        } catch (const train::TrainingError& e) {
          out.failures.push_back({cell, seed, e.what(), e.last_good_epoch()});
        } catch (const std::exception& e) {
          out.failures.push_back({cell, seed, e.what(), -1});
        }
      }
    }
  }
  nlohmann::json fills = nlohmann::json::object();
  fills[data::to_string(cfg_.dataset)] = fill;
  write_file_atomic(cfg_.output_dir / "fill_values.json", fills.dump(2) + "\n");
}

void Runner::run_theory(RunSummary& out) {
  std::string csv = "seed,check,passed,detail\n";
  for (std::uint64_t seed : cfg_.seeds) {
    for (auto& check : linear::theory_report(seed)) {
      csv += std::to_string(seed) + ",\"" + check.name + "\"," + (check.passed ? "true" : "false") +
             ",\"" + check.detail + "\"\n";
      if (!check.passed) out.failures.push_back({check.name, seed, check.detail, -1});
      out.theory.push_back(std::move(check));
    }
  }
  write_file_atomic(cfg_.output_dir / "theory_report.csv", csv);
}

RunSummary Runner::run() {
  RunSummary out;
  out.output_dir = cfg_.output_dir;
  fs::create_directories(cfg_.output_dir);
  write_file_atomic(cfg_.output_dir / "config.txt", cfg_.effective.canonical_text());
  log("recipe " + to_string(cfg_.recipe) + " -> " + cfg_.output_dir.string());
  try {
    switch (cfg_.recipe) {
      case Recipe::kLayers:
      case Recipe::kAlpha:
      case Recipe::kSubsets: run_metric_cells(out); break;
      case Recipe::kEpochs: run_epochs(out); break;
      case Recipe::kOcclusion: run_occlusion(out); break;
      case Recipe::kTheory: run_theory(out); break;
    }
  } catch (const std::exception& e) {
    out.failures.push_back({"recipe " + to_string(cfg_.recipe), 0, e.what(), -1});
  }
  out.trained = trained_;
  out.reused = reused_;
  write_failures_json(cfg_.output_dir / "failures.json", out.failures);
  return out;
}

RunSummary run_subsets(ExperimentConfig cfg, const DatasetProvider& provider, LogFn log) {
  if (cfg.subsets.empty()) throw ConfigError("run_subsets needs at least one subset");
  cfg.recipe = Recipe::kSubsets;
  std::stable_sort(cfg.subsets.begin(), cfg.subsets.end(), [&](const NeuronSubset& a, const NeuronSubset& b) {
    const int ch = model::activation_shape(cfg.arch_spec(), LayerSelector::of(cfg.selectors.front())).channels;
    const int sa = a.size(ch), sb = b.size(ch);
    return sa != sb ? sa < sb : a.start < b.start;
  });
  Runner r(std::move(cfg), provider, std::move(log));
  return r.run();
}

}  // namespace cladec::runner
