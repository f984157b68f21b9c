#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cladec/data.hpp"
#include "cladec/model_zoo.hpp"
#include "cladec/state.hpp"

namespace cladec::train {

enum class OptimizerKind { kSgdStep, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& text);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::kSgdStep;
  int epochs = 64;
  double base_lr = 0.1;
  std::vector<std::pair<int, double>> lr_decays{{32, 0.1}, {48, 0.1}};
  int batch_size = 128;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  /// SGD with step decay, used for classifiers.
  static TrainConfig classifier_defaults();
  /// Adam at 1e-3, used for RefAE and ClaDec decoders.
  static TrainConfig decoder_defaults();

  /// Throws model::ConfigError on an invalid combination. epochs = 0 is
  /// accepted only when `allow_untrained` is set (untrained encoders).
  void validate(bool allow_untrained = false) const;
};

/// Raised when the objective becomes non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int last_good_epoch)
      : std::runtime_error(what), last_good_epoch_(last_good_epoch) {}
  int last_good_epoch() const { return last_good_epoch_; }

 private:
  int last_good_epoch_;
};

/// One row of train_log.csv. loss = (1 - alpha) * rec_loss + alpha * cls_loss.
struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double rec_loss = 0.0;
  double cls_loss = 0.0;
  double acc = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

enum class CheckpointKind { kClassifier, kRefAE, kClaDec, kEval };

std::string to_string(CheckpointKind kind);
CheckpointKind parse_checkpoint_kind(const std::string& text);

struct CheckpointMeta {
  CheckpointKind kind = CheckpointKind::kClassifier;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string dataset;
  model::ArchSpec arch;
  model::LayerSelector selector;
  model::NeuronSubset subset;
  double alpha = 0.0;
  int epochs = 0;
  /// Epochs of the classifier a ClaDec decoder explains (-1 when not applicable).
  int encoder_epochs = -1;
  /// For evaluation classifiers: kind of the reconstructor trained on.
  std::string source;
  EpochLog final;

  std::string to_json() const;
  static CheckpointMeta from_json(const std::string& json);
};

/// Trained parameters plus provenance metadata. Reconstructor checkpoints
/// (RefAE, ClaDec) carry both the encoder and decoder.
struct Checkpoint {
  CheckpointMeta meta;
  StateDict state;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

std::unique_ptr<model::Classifier> load_classifier(const Checkpoint& ckpt);
model::Reconstructor load_reconstructor(const Checkpoint& ckpt);

/// Derives an independent stream seed from a run seed and a tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

/// Mini-batch order for one epoch.
std::vector<int> epoch_order(int count, std::uint64_t seed, int epoch);

Checkpoint train_classifier(const model::ArchSpec& arch, const data::ImageBatch& train,
                            const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Encoder prefix and decoder trained jointly on the summed squared error.
Checkpoint train_refae(const model::ArchSpec& arch, model::LayerSelector selector,
                       const model::NeuronSubset& subset, const data::ImageBatch& train,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Decoder on the frozen classifier's activations; objective
/// (1 - alpha) * SSE + alpha * CE(C(reconstruction), labels).
Checkpoint train_cladec(const Checkpoint& classifier, model::LayerSelector selector,
                        const model::NeuronSubset& subset, const data::ImageBatch& train,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

using ReconstructFn = std::function<Tensor(const Tensor&)>;

/// Fresh classifier trained on reconstructions produced batch by batch.
Checkpoint train_eval_classifier(const model::ArchSpec& arch, const ReconstructFn& reconstruct,
                                 const data::ImageBatch& train, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch = {});
Checkpoint train_eval_classifier(const Checkpoint& reconstructor, const data::ImageBatch& train,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Appends one row, writing the header when the file is new.
void append_train_log(const std::filesystem::path& path, const EpochLog& row);

}  // namespace cladec::train
