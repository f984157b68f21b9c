#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cladec/data.hpp"
#include "cladec/model_zoo.hpp"
#include "cladec/tensor.hpp"
#include "cladec/trainers.hpp"

namespace cladec::metrics {

/// Mean over samples of the per-sample mean squared pixel error.
double rec_loss(const Tensor& x, const Tensor& xhat);
/// Mean over samples of the per-sample summed squared error (training objective scale).
double rec_loss_sum(const Tensor& x, const Tensor& xhat);
/// Mean over samples of the per-sample Euclidean norm ||x - xhat||.
double rec_loss_norm(const Tensor& x, const Tensor& xhat);

/// Fraction of argmax-correct predictions.
double accuracy(std::span<const int> predictions, std::span<const int> labels);
/// Inference-mode accuracy, optionally on transformed inputs.
double accuracy(model::Classifier& classifier, const data::ImageBatch& batch,
                const train::ReconstructFn& transform = {}, int batch_size = 250);
double accuracy(const train::Checkpoint& classifier, const data::ImageBatch& batch,
                const train::ReconstructFn& transform = {}, int batch_size = 250);

/// Applies a reconstructor to a whole batch in chunks.
Tensor reconstruct_all(model::Reconstructor& r, const Tensor& x, int batch_size = 250);

struct MetricsRecord {
  std::string dataset;
  std::string arch;
  int selector = -1;
  std::string subset = "all";
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double rec_loss_cladec = 0.0;
  double rec_loss_refae = 0.0;
  double delta_rec = 0.0;
  double acc_eval_cladec = 0.0;
  double acc_eval_refae = 0.0;
  double delta_acc = 0.0;
  double classifier_acc = 0.0;

  /// Fills delta_rec and delta_acc from the other fields.
  void derive_deltas();
  /// Everything except seed and the measured values.
  std::string config_key() const;

  static const std::vector<std::string>& header();
  std::string to_csv() const;
  static MetricsRecord from_csv(const std::string& line);
};

/// Reductions recorded next to metrics.csv: summed squared error and the
/// unsquared norm, per reconstruction source.
struct AltRecLossRecord {
  std::string dataset;
  std::string arch;
  int selector = -1;
  std::string subset = "all";
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double rec_sse_cladec = 0.0;
  double rec_sse_refae = 0.0;
  double rec_norm_cladec = 0.0;
  double rec_norm_refae = 0.0;

  static const std::vector<std::string>& header();
  std::string to_csv() const;
};

double delta_rec(std::span<const MetricsRecord> records);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

struct SummaryRecord {
  std::string dataset;
  std::string arch;
  int selector = -1;
  std::string subset = "all";
  double alpha = 0.0;
  int n = 0;
  Stat rec_loss_cladec, rec_loss_refae, delta_rec, acc_eval_cladec, acc_eval_refae, delta_acc,
      classifier_acc;

  static const std::vector<std::string>& header();
  std::string to_csv() const;
};

Stat mean_std(std::span<const double> values);

/// Mean and sample std over the seeds of one configuration. Requires at least
/// two records, all sharing config_key().
SummaryRecord aggregate(std::span<const MetricsRecord> records);

/// Groups by config_key() in first-appearance order and aggregates each group
/// that has at least two seeds.
std::vector<SummaryRecord> aggregate_all(std::span<const MetricsRecord> records);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

/// Two-sided Welch t-test. Equal means with zero variance in both groups give p = 1.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

std::string format_double(double v);

/// Exclusive advisory lock (flock) on a sidecar file, held for the object's lifetime.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

/// Appends a row under an exclusive file lock, writing the header first when
/// the file is new or empty.
void append_csv_row(const std::filesystem::path& path, const std::string& header,
                    const std::string& row);
std::string join_header(const std::vector<std::string>& fields);

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);
void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRecord> rows);

}  // namespace cladec::metrics
