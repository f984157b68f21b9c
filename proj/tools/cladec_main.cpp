// cladec command line: training, evaluation, explanation grids and recipes.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cladec/config.hpp"
#include "cladec/explain.hpp"
#include "cladec/image_io.hpp"
#include "cladec/linear_theory.hpp"
#include "cladec/runner.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cladec;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
  std::optional<std::string> data_dir;
  std::optional<std::string> runs_dir;
  std::optional<std::string> dataset;
  std::optional<std::string> arch;
  std::optional<int> layer;
  std::optional<std::string> subset;
  std::optional<double> alpha;
  std::optional<int> epochs;
  std::optional<int> decoder_epochs;
  std::optional<int> eval_epochs;
  std::optional<int> seeds;
  std::optional<std::string> out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "Flat key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.sets, "Override a config key (key=value), repeatable");
  cmd->add_option("--seed", o.seed, "Seed (base seed for recipes)");
  cmd->add_option("--profile", o.profile, "full or smoke")->check(CLI::IsMember({"full", "smoke"}));
  cmd->add_option("--data-dir", o.data_dir, "Dataset directory (default $CLADEC_DATA_DIR)");
  cmd->add_option("--runs-dir", o.runs_dir, "Run directory (default $CLADEC_RUNS_DIR or ./runs)");
  cmd->add_option("--dataset", o.dataset, "mnist, fashion-mnist or cifar-100");
  cmd->add_option("--arch", o.arch, "vgg-table1 or resnet10");
  cmd->add_option("--layer", o.layer, "Layer selector, -1 is the logits");
  cmd->add_option("--subset", o.subset, "Neuron subset start-end or all");
  cmd->add_option("--alpha", o.alpha, "Classification loss weight in [0,1]");
  cmd->add_option("--epochs", o.epochs, "Classifier epochs");
  cmd->add_option("--decoder-epochs", o.decoder_epochs, "Decoder epochs");
  cmd->add_option("--eval-epochs", o.eval_epochs, "Evaluation classifier epochs");
  cmd->add_option("--seeds", o.seeds, "Number of seeds for recipes");
  cmd->add_option("--out", o.out, "Output directory (file for explain)");
  cmd->add_flag("-q,--quiet", o.quiet, "Only print results");
}

config::Config build_config(const CommonOptions& o, const std::map<std::string, std::string>& fixed) {
  config::Config c;
  if (!o.config_file.empty()) c = config::Config::load(o.config_file);
  for (const auto& [k, v] : fixed) c.set(k, v);
  auto put = [&](const char* key, const auto& opt) {
    if (!opt) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, std::string>) {
      c.set(key, *opt);
    } else if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, double>) {
      c.set(key, metrics::format_double(*opt));
    } else {
      c.set(key, std::to_string(*opt));
    }
  };
  put("run.seed", o.seed);
  put("profile", o.profile);
  put("data.dir", o.data_dir);
  put("runs.dir", o.runs_dir);
  put("data.dataset", o.dataset);
  put("arch.family", o.arch);
  put("arch.layer", o.layer);
  put("cladec.alpha", o.alpha);
  put("train.epochs", o.epochs);
  put("train.decoder_epochs", o.decoder_epochs);
  put("train.eval_epochs", o.eval_epochs);
  put("run.seeds", o.seeds);
  put("output.dir", o.out);
  if (o.layer) c.erase("arch.layers");
  if (o.alpha) c.erase("cladec.alphas");
  if (o.subset) {
    const auto s = runner::parse_subset(*o.subset);
    c.set("arch.subset_start", std::to_string(s.start));
    c.set("arch.subset_end", std::to_string(s.end));
    c.erase("subsets.list");
  }
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw model::ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return c;
}

runner::LogFn stderr_log(bool quiet) {
  if (quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

runner::Runner make_runner(const CommonOptions& o, const std::map<std::string, std::string>& fixed) {
  auto cfg = runner::ExperimentConfig::from_config(build_config(o, fixed));
  auto provider = runner::file_provider(cfg.data_dir, cfg.limit_train, cfg.limit_test);
  return runner::Runner(std::move(cfg), std::move(provider), stderr_log(o.quiet));
}

struct Single {
  std::uint64_t seed;
  model::LayerSelector selector;
  model::NeuronSubset subset;
  double alpha;
  int epochs;
};

Single single_cell(const runner::Runner& r) {
  const auto& c = r.config();
  return {c.seeds.front(), model::LayerSelector::of(c.selectors.front()), c.subsets.front(),
          c.alphas.front(), c.epochs};
}

const std::map<std::string, std::string> kSingleSeed{{"run.seeds", "1"}};

void print_ckpt(runner::Runner& r, const train::Checkpoint& ckpt, std::uint64_t seed) {
  std::cout << (r.run_dir(ckpt.meta.config_hash, seed) / (train::to_string(ckpt.meta.kind) + ".ckpt")).string()
            << '\n';
}

int cmd_train_classifier(const CommonOptions& o) {
  auto r = make_runner(o, kSingleSeed);
  const auto s = single_cell(r);
  print_ckpt(r, r.classifier(s.seed, s.epochs), s.seed);
  return 0;
}

int cmd_train_refae(const CommonOptions& o) {
  auto r = make_runner(o, kSingleSeed);
  const auto s = single_cell(r);
  print_ckpt(r, r.refae(s.seed, s.selector, s.subset), s.seed);
  return 0;
}

int cmd_train_cladec(const CommonOptions& o) {
  auto r = make_runner(o, kSingleSeed);
  const auto s = single_cell(r);
  print_ckpt(r, r.cladec(s.seed, s.selector, s.subset, s.alpha, s.epochs), s.seed);
  return 0;
}

int cmd_evaluate(const CommonOptions& o) {
  auto r = make_runner(o, kSingleSeed);
  const auto s = single_cell(r);
  const auto rec = r.measure(s.seed, s.selector, s.subset, s.alpha, s.epochs);
  std::cout << metrics::join_header(metrics::MetricsRecord::header()) << '\n' << rec.to_csv() << '\n';
  return 0;
}

struct ExplainOptions {
  std::string cladec_ckpt;
  std::string refae_ckpt;
  std::vector<int> indices{0, 1, 2, 3, 4, 5, 6, 7};
  std::string out = "grid.png";
  std::optional<std::string> data_dir;
};

int cmd_explain(const ExplainOptions& o) {
  const auto cd = train::Checkpoint::load(o.cladec_ckpt);
  const auto rae = train::Checkpoint::load(o.refae_ckpt);
  const auto name = data::parse_dataset_name(cd.meta.dataset);
  const auto dir = data::resolve_data_dir(o.data_dir ? std::optional<fs::path>(*o.data_dir) : std::nullopt);
  const auto test = data::load_dataset(data::DatasetSpec{name, data::Split::kTest}, dir);
  for (int i : o.indices) {
    if (i < 0 || i >= test.size()) throw model::ConfigError("index out of range: " + std::to_string(i));
  }
  const auto batch = test.gather(o.indices);
  const auto triplets = explain::make_triplets(batch.images, cd, rae);
  const auto grid = explain::triplet_rows(triplets);
  image::write_image(o.out, explain::render_grid(grid.rows, grid.labels));
  std::cout << o.out << '\n';
  return 0;
}

int report(const runner::RunSummary& s) {
  std::cerr << "trained " << s.trained << ", reused " << s.reused << ", failures " << s.failures.size()
            << " -> " << s.output_dir.string() << '\n';
  for (const auto& f : s.failures) std::cerr << "  failed: " << f.cell << " seed " << f.seed << ": " << f.error << '\n';
  return s.failures.empty() ? 0 : 1;
}

int cmd_occlusion(const CommonOptions& o, const std::vector<std::string>& methods) {
  std::map<std::string, std::string> fixed{{"recipe", "occlusion"}};
  if (!methods.empty()) {
    std::string joined;
    for (const auto& m : methods) joined += (joined.empty() ? "" : ",") + m;
    fixed["occlusion.methods"] = joined;
  }
  auto r = make_runner(o, fixed);
  const auto s = r.run();
  for (const auto& row : s.occlusion) std::cout << row.to_csv() << '\n';
  return report(s);
}

int cmd_theory(const CommonOptions& o) {
  const std::uint64_t seed = o.seed.value_or(0);
  bool ok = true;
  for (const auto& c : linear::theory_report(seed)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

int cmd_reproduce(const CommonOptions& o, const std::string& recipe) {
  auto r = make_runner(o, {{"recipe", recipe}});
  return report(r.run());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explain classifier layers by decoding their activations"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* tc = app.add_subcommand("train-classifier", "Train (or reuse) a classifier checkpoint");
  auto* tr = app.add_subcommand("train-refae", "Train (or reuse) a reference autoencoder");
  auto* td = app.add_subcommand("train-cladec", "Train (or reuse) a decoder on a frozen classifier");
  auto* ev = app.add_subcommand("evaluate", "Compute the metrics row of one cell");
  auto* oc = app.add_subcommand("occlusion-study", "Occlusion ranking study");
  auto* th = app.add_subcommand("theory-check", "Linear-case property report");
  auto* rp = app.add_subcommand("reproduce", "Run a full recipe");
  for (auto* cmd : {tc, tr, td, ev, oc, th, rp}) add_common(cmd, common);

  std::vector<std::string> methods;
  oc->add_option("--methods", methods, "cladec, gradcam, random")->delimiter(',');
  std::string recipe;
  rp->add_option("--recipe", recipe, "layers, alpha, epochs, subsets, occlusion or theory")
      ->required()
      ->check(CLI::IsMember({"layers", "alpha", "epochs", "subsets", "occlusion", "theory"}));

  ExplainOptions ex;
  auto* xp = app.add_subcommand("explain", "Render an explanation grid");
  xp->add_option("--ckpt-cladec", ex.cladec_ckpt, "ClaDec checkpoint")->required()->check(CLI::ExistingFile);
  xp->add_option("--ckpt-refae", ex.refae_ckpt, "RefAE checkpoint")->required()->check(CLI::ExistingFile);
  xp->add_option("--indices", ex.indices, "Test image indices")->delimiter(',');
  xp->add_option("--out", ex.out, "Output image (.png or .ppm)");
  xp->add_option("--data-dir", ex.data_dir, "Dataset directory (default $CLADEC_DATA_DIR)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tc) return cmd_train_classifier(common);
    if (*tr) return cmd_train_refae(common);
    if (*td) return cmd_train_cladec(common);
    if (*ev) return cmd_evaluate(common);
    if (*xp) return cmd_explain(ex);
    if (*oc) return cmd_occlusion(common, methods);
    if (*th) return cmd_theory(common);
    if (*rp) return cmd_reproduce(common, recipe);
  } catch (const model::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
