#pragma once

#include <string>
#include <vector>

#include "cladec/image_io.hpp"
#include "cladec/model_zoo.hpp"
#include "cladec/tensor.hpp"
#include "cladec/trainers.hpp"

namespace cladec::explain {

/// Original image with its ClaDec and RefAE reconstructions, each [C,32,32].
struct ExplanationTriplet {
  Tensor original;
  Tensor cladec_recon;
  Tensor refae_recon;
  model::LayerSelector selector;
  model::NeuronSubset subset;
  double alpha = 0.0;
};

/// Inference-mode reconstruction of x ([N,C,32,32]) by a RefAE or ClaDec checkpoint.
Tensor reconstruct(const train::Checkpoint& ckpt, const Tensor& x);

/// One triplet per sample of x, in order. Both checkpoints must explain the
/// same layer and subset.
std::vector<ExplanationTriplet> make_triplets(const Tensor& x, const train::Checkpoint& cladec,
                                              const train::Checkpoint& refae);

/// Signed refae - cladec per pixel.
Tensor difference_map(const Tensor& refae_recon, const Tensor& cladec_recon);

/// [C,H,W] or [1,C,H,W] in [0,1] to RGB; one channel is broadcast to grey.
image::RgbImage to_rgb(const Tensor& image);

/// Positive differences in red, negative in green, magnitude clamped to [0,1]
/// and averaged over channels; blue stays 0.
image::RgbImage render_difference(const Tensor& diff);

inline constexpr int kGutter = 2;

/// Tiles rows of equally sized images separated by `gutter` pixels of white.
/// A left band holds the row labels and is omitted when every label is empty.
image::RgbImage render_grid(const std::vector<std::vector<image::RgbImage>>& rows,
                            const std::vector<std::string>& labels = {}, int gutter = kGutter);

/// Width of the label band render_grid reserves for these labels.
int label_band_width(const std::vector<std::string>& labels);

/// Rows {original, RefAE, ClaDec, difference} for a list of triplets.
struct GridRows {
  std::vector<std::vector<image::RgbImage>> rows;
  std::vector<std::string> labels;
};
GridRows triplet_rows(const std::vector<ExplanationTriplet>& triplets, bool with_original = true);

}  // namespace cladec::explain
