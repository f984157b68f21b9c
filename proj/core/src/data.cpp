#include "cladec/data.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <json.hpp>

#include "cladec/state.hpp"

namespace cladec::data {
namespace {

namespace fs = std::filesystem;

std::string read_maybe_gzip(const fs::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open dataset file " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError("corrupt dataset file " + path.string());
  return out;
}

std::uint32_t be32(const std::string& bytes, std::size_t offset) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) |
         std::uint32_t{p[3]};
}

fs::path first_existing(const std::vector<fs::path>& candidates) {
  for (const auto& p : candidates) {
    if (fs::exists(p)) return p;
  }
  throw DataError("dataset file not found; expected " + candidates.front().string());
}

std::vector<fs::path> with_gz(const fs::path& base) {
  fs::path gz = base;
  gz += ".gz";
  return {base, gz};
}

struct IdxPaths {
  std::vector<fs::path> images, labels;
};

IdxPaths idx_paths(const DatasetSpec& spec, const fs::path& data_dir) {
  const fs::path root = data_dir / to_string(spec.name);
  const std::string prefix = spec.split == Split::kTrain ? "train" : "t10k";
  return {with_gz(root / (prefix + "-images-idx3-ubyte")),
          with_gz(root / (prefix + "-labels-idx1-ubyte"))};
}

std::vector<fs::path> cifar_paths(const DatasetSpec& spec, const fs::path& data_dir) {
  const std::string file = spec.split == Split::kTrain ? "train.bin" : "test.bin";
  const fs::path root = data_dir / to_string(spec.name);
  return {root / file, root / "cifar-100-binary" / file};
}

ImageBatch load_idx(const DatasetSpec& spec, const fs::path& data_dir) {
  const IdxPaths paths = idx_paths(spec, data_dir);
  const fs::path image_path = first_existing(paths.images);
  const fs::path label_path = first_existing(paths.labels);
  const std::string images = read_maybe_gzip(image_path);
  const std::string labels = read_maybe_gzip(label_path);
  if (images.size() < 16 || be32(images, 0) != 2051) {
    throw DataError("corrupt IDX image file (bad magic): " + image_path.string());
  }
  if (labels.size() < 8 || be32(labels, 0) != 2049) {
    throw DataError("corrupt IDX label file (bad magic): " + label_path.string());
  }
  const int count = static_cast<int>(be32(images, 4));
  const int rows = static_cast<int>(be32(images, 8));
  const int cols = static_cast<int>(be32(images, 12));
  if (rows != 28 || cols != 28) throw DataError("unexpected image size in " + image_path.string());
  if (images.size() != 16 + static_cast<std::size_t>(count) * rows * cols) {
    throw DataError("truncated IDX image file: " + image_path.string());
  }
  if (static_cast<int>(be32(labels, 4)) != count || labels.size() != 8 + static_cast<std::size_t>(count)) {
    throw DataError("IDX label file does not match image count: " + label_path.string());
  }
  ImageBatch batch;
  batch.classes = spec.classes();
  batch.images = pad_grayscale(
      std::span(reinterpret_cast<const unsigned char*>(images.data()) + 16,
                static_cast<std::size_t>(count) * rows * cols),
      count, rows, cols);
  batch.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int y = static_cast<unsigned char>(labels[8 + static_cast<std::size_t>(i)]);
    if (y >= batch.classes) throw DataError("label out of range in " + label_path.string());
    batch.labels[static_cast<std::size_t>(i)] = y;
  }
  return batch;
}

ImageBatch load_cifar100(const DatasetSpec& spec, const fs::path& data_dir) {
  const fs::path path = first_existing(cifar_paths(spec, data_dir));
  const std::string bytes = read_maybe_gzip(path);
  constexpr std::size_t kRecord = 2 + 3 * 32 * 32;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw DataError("corrupt CIFAR-100 binary file: " + path.string());
  }
  const int count = static_cast<int>(bytes.size() / kRecord);
  ImageBatch batch;
  batch.classes = 100;
  batch.images = Tensor({count, 3, kImageSize, kImageSize});
  batch.labels.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + i * kRecord);
    const int fine = rec[1];
    if (fine >= 100) throw DataError("label out of range in " + path.string());
    batch.labels[static_cast<std::size_t>(i)] = fine;
    float* dst = batch.images.data() + static_cast<std::size_t>(i) * 3 * 1024;
    for (int j = 0; j < 3 * 1024; ++j) dst[j] = static_cast<float>(rec[2 + j]) / 255.0f;
  }
  return batch;
}

}  // namespace

ImageBatch ImageBatch::slice(int begin, int end) const {
  ImageBatch out;
  out.images = images.slice_batch(begin, end);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.classes = classes;
  return out;
}

ImageBatch ImageBatch::gather(std::span<const int> indices) const {
  ImageBatch out;
  out.images = images.gather_batch(indices);
  out.labels.reserve(indices.size());
  for (int i : indices) out.labels.push_back(labels.at(static_cast<std::size_t>(i)));
  out.classes = classes;
  return out;
}

ImageBatch ImageBatch::head(int n) const {
  if (n <= 0 || n >= size()) return *this;
  return slice(0, n);
}

int DatasetSpec::classes() const { return name == DatasetName::kCifar100 ? 100 : 10; }
int DatasetSpec::channels() const { return name == DatasetName::kCifar100 ? 3 : 1; }
int DatasetSpec::expected_size() const {
  if (split == Split::kTest) return 10000;
  return name == DatasetName::kCifar100 ? 50000 : 60000;
}

std::string to_string(DatasetName name) {
  switch (name) {
    case DatasetName::kMnist: return "mnist";
    case DatasetName::kFashionMnist: return "fashion-mnist";
    case DatasetName::kCifar100: return "cifar-100";
  }
  return "unknown";
}

DatasetName parse_dataset_name(const std::string& text) {
  if (text == "mnist") return DatasetName::kMnist;
  if (text == "fashion-mnist" || text == "fashionmnist" || text == "fmnist") {
    return DatasetName::kFashionMnist;
  }
  if (text == "cifar-100" || text == "cifar100") return DatasetName::kCifar100;
  throw DataError("unknown dataset '" + text + "' (expected mnist, fashion-mnist or cifar-100)");
}

fs::path resolve_data_dir(const std::optional<fs::path>& explicit_dir) {
  if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
  if (const char* env = std::getenv("CLADEC_DATA_DIR"); env && *env) return env;
  return "data";
}

std::vector<fs::path> expected_paths(const DatasetSpec& spec, const fs::path& data_dir) {
  if (spec.name == DatasetName::kCifar100) return cifar_paths(spec, data_dir);
  IdxPaths p = idx_paths(spec, data_dir);
  std::vector<fs::path> out = p.images;
  out.insert(out.end(), p.labels.begin(), p.labels.end());
  return out;
}

ImageBatch load_dataset(const DatasetSpec& spec, const fs::path& data_dir,
                        const LoadOptions& options) {
  ImageBatch batch = spec.name == DatasetName::kCifar100 ? load_cifar100(spec, data_dir)
                                                          : load_idx(spec, data_dir);
  if (options.strict_counts && batch.size() != spec.expected_size()) {
    throw DataError(to_string(spec.name) + (spec.split == Split::kTrain ? " train" : " test") +
                    " split has " + std::to_string(batch.size()) + " samples, expected " +
                    std::to_string(spec.expected_size()) + " (under " +
                    (data_dir / to_string(spec.name)).string() + ")");
  }
  return batch;
}

Dataset load_both(DatasetName name, const fs::path& data_dir, const LoadOptions& options) {
  return Dataset{name, load_dataset({name, Split::kTrain}, data_dir, options),
                 load_dataset({name, Split::kTest}, data_dir, options)};
}

Tensor pad_grayscale(std::span<const unsigned char> pixels, int count, int rows, int cols) {
  const int pad_y = (kImageSize - rows) / 2;
  const int pad_x = (kImageSize - cols) / 2;
  if (pad_y < 0 || pad_x < 0) throw DataError("image larger than 32x32");
  Tensor out({count, 1, kImageSize, kImageSize});
  for (int n = 0; n < count; ++n) {
    const unsigned char* src = pixels.data() + static_cast<std::size_t>(n) * rows * cols;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        out.at(n, 0, r + pad_y, c + pad_x) = static_cast<float>(src[r * cols + c]) / 255.0f;
      }
    }
  }
  return out;
}

std::vector<float> compute_fill_value(const ImageBatch& train) {
  if (train.size() == 0) throw DataError("compute_fill_value: empty batch");
  const int n = train.size(), c = train.channels();
  const std::size_t plane = static_cast<std::size_t>(train.images.dim(2)) * train.images.dim(3);
  std::vector<float> fill(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const float* src = train.images.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      double row = 0.0;
      for (std::size_t j = 0; j < plane; ++j) row += src[j];
      s += row;
    }
    fill[static_cast<std::size_t>(ch)] = static_cast<float>(s / (static_cast<double>(n) * plane));
  }
  return fill;
}

std::vector<float> cached_fill_value(const Dataset& dataset, const fs::path& cache_dir) {
  const fs::path path = cache_dir / "fill_values.json";
  const std::string key = to_string(dataset.name);
  nlohmann::json doc = nlohmann::json::object();
  if (fs::exists(path)) {
    doc = nlohmann::json::parse(read_file(path));
    if (doc.contains(key)) return doc[key].get<std::vector<float>>();
  }
  std::vector<float> fill = compute_fill_value(dataset.train);
  doc[key] = fill;
  write_file_atomic(path, doc.dump(2) + "\n");
  return fill;
}

std::vector<OcclusionSpec> occlusion_grid(const std::vector<float>& fill) {
  std::vector<OcclusionSpec> out;
  out.reserve(16);
  for (int y : kOcclusionOffsets) {
    for (int x : kOcclusionOffsets) out.push_back(OcclusionSpec{x, y, kOcclusionSize, fill});
  }
  return out;
}

Tensor apply_occlusion(const Tensor& image, const OcclusionSpec& spec) {
  const bool batched = image.rank() == 4;
  if (!(image.rank() == 3 || (batched && image.dim(0) == 1))) {
    throw ShapeError("apply_occlusion: expected [C,H,W] or [1,C,H,W], got " +
                     cladec::to_string(image.shape()));
  }
  const int c = image.dim(-3), h = image.dim(-2), w = image.dim(-1);
  if (static_cast<int>(spec.fill.size()) != c) {
    throw ShapeError("apply_occlusion: fill has " + std::to_string(spec.fill.size()) +
                     " channels, image has " + std::to_string(c));
  }
  Tensor out = image;
  for (int ch = 0; ch < c; ++ch) {
    float* plane = out.data() + static_cast<std::size_t>(ch) * h * w;
    for (int r = std::max(0, spec.y); r < std::min(h, spec.y + spec.size); ++r) {
      for (int col = std::max(0, spec.x); col < std::min(w, spec.x + spec.size); ++col) {
        plane[r * w + col] = spec.fill[static_cast<std::size_t>(ch)];
      }
    }
  }
  return out;
}

void write_idx_images(const fs::path& path, std::span<const unsigned char> pixels, int count,
                      int rows, int cols) {
  std::string bytes;
  auto put = [&bytes](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<char>((v >> s) & 0xff));
  };
  put(2051);
  put(static_cast<std::uint32_t>(count));
  put(static_cast<std::uint32_t>(rows));
  put(static_cast<std::uint32_t>(cols));
  bytes.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  write_file_atomic(path, bytes);
}

void write_idx_labels(const fs::path& path, std::span<const unsigned char> labels) {
  std::string bytes;
  auto put = [&bytes](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) bytes.push_back(static_cast<char>((v >> s) & 0xff));
  };
  put(2049);
  put(static_cast<std::uint32_t>(labels.size()));
  bytes.append(reinterpret_cast<const char*>(labels.data()), labels.size());
  write_file_atomic(path, bytes);
}

}  // namespace cladec::data
