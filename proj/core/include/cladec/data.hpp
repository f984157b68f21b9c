#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cladec/tensor.hpp"

namespace cladec::data {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kImageSize = 32;
inline constexpr int kOcclusionSize = 12;
inline constexpr std::array<int, 4> kOcclusionOffsets{0, 6, 12, 20};

/// Images in [0,1] with shape [N, C, 32, 32] and labels in [0, classes).
struct ImageBatch {
  Tensor images;
  std::vector<int> labels;
  int classes = 0;

  int size() const { return images.empty() ? 0 : images.dim(0); }
  int channels() const { return images.dim(1); }
  ImageBatch slice(int begin, int end) const;
  ImageBatch gather(std::span<const int> indices) const;
  /// The first n samples (or all, when n <= 0 or n >= size()).
  ImageBatch head(int n) const;
};

enum class DatasetName { kMnist, kFashionMnist, kCifar100 };
enum class Split { kTrain, kTest };

struct DatasetSpec {
  DatasetName name = DatasetName::kMnist;
  Split split = Split::kTrain;

  int classes() const;
  int channels() const;
  /// Canonical split size (60000/10000 for the MNIST family, 50000/10000 for CIFAR-100).
  int expected_size() const;
};

std::string to_string(DatasetName name);
DatasetName parse_dataset_name(const std::string& text);

struct Dataset {
  DatasetName name;
  ImageBatch train;
  ImageBatch test;
};

struct LoadOptions {
  /// Reject archives whose sample count differs from the canonical split size.
  bool strict_counts = true;
};

/// Resolution order: explicit argument, then CLADEC_DATA_DIR, then ./data.
std::filesystem::path resolve_data_dir(const std::optional<std::filesystem::path>& explicit_dir);

/// Loads one split from `<dir>/<dataset-name>/`. MNIST-family archives are the
/// standard IDX files (optionally gzip-compressed); CIFAR-100 is the binary
/// version (train.bin / test.bin, fine labels).
ImageBatch load_dataset(const DatasetSpec& spec, const std::filesystem::path& data_dir,
                        const LoadOptions& options = {});

Dataset load_both(DatasetName name, const std::filesystem::path& data_dir,
                  const LoadOptions& options = {});

/// Paths the loader looks for, in order of preference.
std::vector<std::filesystem::path> expected_paths(const DatasetSpec& spec,
                                                  const std::filesystem::path& data_dir);

/// 28x28 greyscale bytes -> [N,1,32,32] by /255 and a 2-pixel zero border.
Tensor pad_grayscale(std::span<const unsigned char> pixels, int count, int rows, int cols);

/// Per-channel mean over every pixel of every sample.
std::vector<float> compute_fill_value(const ImageBatch& train);

/// Reads/updates the `fill_values.json` sidecar keyed by dataset name.
std::vector<float> cached_fill_value(const Dataset& dataset, const std::filesystem::path& cache_dir);

struct OcclusionSpec {
  int x = 0;  // column of the upper-left corner
  int y = 0;  // row of the upper-left corner
  int size = kOcclusionSize;
  std::vector<float> fill;

  bool contains(int row, int col) const {
    return row >= y && row < y + size && col >= x && col < x + size;
  }
};

/// The 16 squares at offsets {0,6,12,20} x {0,6,12,20}, row-major over (y, x).
std::vector<OcclusionSpec> occlusion_grid(const std::vector<float>& fill);

/// image: [C,H,W] or [1,C,H,W]. Returns a copy with the square set to the fill.
Tensor apply_occlusion(const Tensor& image, const OcclusionSpec& spec);

/// Writes IDX archives (used for fixtures and tooling). images: [N,rows*cols] bytes.
void write_idx_images(const std::filesystem::path& path, std::span<const unsigned char> pixels,
                      int count, int rows, int cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const unsigned char> labels);

}  // namespace cladec::data
