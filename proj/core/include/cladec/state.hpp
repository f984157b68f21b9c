#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cladec/nn.hpp"
#include "cladec/tensor.hpp"

namespace cladec {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using StateDict = std::vector<NamedTensor>;

/// Copies every parameter and running statistic of a layer, names prefixed.
StateDict snapshot(nn::Layer& layer, const std::string& prefix = "");

/// Loads tensors named `prefix + <local name>` into the layer; every entry the
/// layer expects must be present with a matching shape.
void restore(nn::Layer& layer, const StateDict& state, const std::string& prefix = "");

/// Parameter archive plus a JSON metadata document.
struct Archive {
  std::string meta_json;
  StateDict state;
};

/// Deterministic byte encoding; equal archives encode to identical bytes.
std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);

/// Atomic write: bytes go to a temporary sibling that is renamed into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace cladec
