#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cladec/config.hpp"
#include "cladec/data.hpp"
#include "cladec/linear_theory.hpp"
#include "cladec/metrics.hpp"
#include "cladec/model_zoo.hpp"
#include "cladec/saliency.hpp"
#include "cladec/trainers.hpp"

namespace cladec::runner {

enum class Recipe { kLayers, kAlpha, kEpochs, kSubsets, kOcclusion, kTheory };
enum class Profile { kFull, kSmoke };

std::string to_string(Recipe recipe);
Recipe parse_recipe(const std::string& text);
std::string to_string(Profile profile);
Profile parse_profile(const std::string& text);

inline constexpr int kSmokeEpochCap = 8;
inline constexpr int kSmokeSeedCap = 2;

/// Typed view of a recipe configuration. Every field has a key in the flat
/// config file; see README for the list.
struct ExperimentConfig {
  Recipe recipe = Recipe::kLayers;
  Profile profile = Profile::kFull;
  data::DatasetName dataset = data::DatasetName::kFashionMnist;
  model::ArchFamily arch = model::ArchFamily::kVggTable1;
  std::vector<int> selectors;
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds;
  std::vector<int> encoder_epochs;  // epochs recipe
  std::vector<model::NeuronSubset> subsets;
  std::vector<saliency::Method> methods;

  int epochs = 64;          // classifiers
  int decoder_epochs = 64;  // RefAE and ClaDec
  int eval_epochs = 64;     // evaluation classifiers
  int batch_size = 128;
  double sgd_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double adam_lr = 1e-3;
  std::vector<std::pair<int, double>> lr_decays{{32, 0.1}, {48, 0.1}};
  bool evaluate = true;
  int limit_train = 0;
  int limit_test = 0;
  int grid_images = 8;
  saliency::RelevanceScope relevance_scope = saliency::RelevanceScope::kRegion;

  std::filesystem::path runs_dir;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> data_dir;

  /// The effective settings (after defaults and profile caps), used for hashing.
  config::Config effective;

  /// Fills recipe defaults, applies the profile and validates.
  static ExperimentConfig from_config(const config::Config& cfg);

  model::ArchSpec arch_spec() const;
  train::TrainConfig classifier_train(std::uint64_t seed, int epochs) const;
  train::TrainConfig decoder_train(std::uint64_t seed, double alpha) const;
  train::TrainConfig eval_train(std::uint64_t seed) const;
};

/// CLADEC_RUNS_DIR or ./runs.
std::filesystem::path resolve_runs_dir(const std::optional<std::filesystem::path>& explicit_dir);

/// Decay epochs scaled from the 64-epoch schedule to `epochs`.
std::vector<std::pair<int, double>> scale_decays(const std::vector<std::pair<int, double>>& decays,
                                                 int epochs);

using DatasetProvider = std::function<data::Dataset(data::DatasetName)>;

/// Loads from disk and truncates the splits to the configured limits.
DatasetProvider file_provider(std::optional<std::filesystem::path> data_dir, int limit_train,
                              int limit_test);

using LogFn = std::function<void(const std::string&)>;

struct Failure {
  std::string cell;
  std::uint64_t seed = 0;
  std::string error;
  int last_good_epoch = -1;
};

struct RunSummary {
  std::filesystem::path output_dir;
  std::vector<metrics::MetricsRecord> records;
  std::vector<saliency::OcclusionOutcome> occlusion;
  std::vector<linear::PropertyCheck> theory;
  std::vector<Failure> failures;
  int trained = 0;  // checkpoints trained in this invocation
  int reused = 0;   // checkpoints loaded from the cache
};

/// Orchestrates one recipe: trains (or reuses) every checkpoint a cell needs,
/// computes metrics, and writes CSVs, grids and failures.json.
class Runner {
 public:
  Runner(ExperimentConfig cfg, DatasetProvider provider, LogFn log = {});

  RunSummary run();

  const ExperimentConfig& config() const { return cfg_; }
  const data::Dataset& dataset();
  const std::vector<float>& fill_value();

  /// Cached training of single artifacts under runs/<hash>/<seed>/.
  train::Checkpoint classifier(std::uint64_t seed, int epochs);
  train::Checkpoint refae(std::uint64_t seed, model::LayerSelector selector,
                          const model::NeuronSubset& subset);
  train::Checkpoint cladec(std::uint64_t seed, model::LayerSelector selector,
                           const model::NeuronSubset& subset, double alpha, int encoder_epochs);
  train::Checkpoint eval_classifier(std::uint64_t seed, const train::Checkpoint& source);

  /// MetricsRecord of one cell, cached next to its checkpoints.
  metrics::MetricsRecord measure(std::uint64_t seed, model::LayerSelector selector,
                                 const model::NeuronSubset& subset, double alpha,
                                 int encoder_epochs);

  std::filesystem::path run_dir(const std::string& hash, std::uint64_t seed) const;

  int trained() const { return trained_; }
  int reused() const { return reused_; }

 private:
  config::Config classifier_cell(int epochs) const;
  config::Config refae_cell(model::LayerSelector selector, const model::NeuronSubset& subset) const;
  config::Config cladec_cell(model::LayerSelector selector, const model::NeuronSubset& subset,
                             double alpha, int encoder_epochs) const;
  train::Checkpoint cached(const config::Config& cell, std::uint64_t seed,
                           train::CheckpointKind kind,
                           const std::function<train::Checkpoint(const train::EpochCallback&)>& fit);
  void log(const std::string& msg) const;

  void run_metric_cells(RunSummary& out);
  void run_epochs(RunSummary& out);
  void run_occlusion(RunSummary& out);
  void run_theory(RunSummary& out);
  void render_cell_grid(const std::filesystem::path& path,
                        const std::vector<std::pair<train::Checkpoint, train::Checkpoint>>& pairs);
  void write_failures(const RunSummary& out) const;
  void append_record(const std::filesystem::path& path, const metrics::MetricsRecord& r) const;

  ExperimentConfig cfg_;
  DatasetProvider provider_;
  LogFn log_;
  std::optional<data::Dataset> dataset_;
  std::optional<std::vector<float>> fill_;
  int trained_ = 0;
  int reused_ = 0;
};

/// The subsets recipe for an explicit subset list (one ClaDec decoder each).
RunSummary run_subsets(ExperimentConfig cfg, const DatasetProvider& provider, LogFn log = {});

/// Nested channel ranges of {1, 2%, 10%, 50%, 100%} of `channels`, or two
/// disjoint 2% ranges.
std::vector<model::NeuronSubset> nested_subsets(int channels);
std::vector<model::NeuronSubset> disjoint_subsets(int channels);
model::NeuronSubset parse_subset(const std::string& text);

void write_failures_json(const std::filesystem::path& path, const std::vector<Failure>& failures);

}  // namespace cladec::runner
