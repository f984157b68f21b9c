#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cladec/data.hpp"
#include "cladec/model_zoo.hpp"
#include "cladec/tensor.hpp"
#include "cladec/trainers.hpp"

namespace cladec::saliency {

/// Normalized attribution over the 32x32 input plane.
struct SaliencyMap {
  Tensor values;  // [32,32] in [0,1]
  model::LayerSelector source_layer;
  int target_class = 0;
};

/// Combines a feature map and the target-logit gradient at it ([K,h,w] each):
/// channel weights are spatially averaged gradients, the weighted sum is
/// rectified, bilinearly upsampled to 32x32 and min-max normalized. A
/// constant map normalizes to all zeros.
Tensor gradcam_from(const Tensor& activation, const Tensor& gradient);

/// GradCAM for every sample of x ([N,C,32,32]) at a convolutional selector.
/// The target is the predicted class unless `targets` is given.
std::vector<SaliencyMap> gradcam(model::Classifier& classifier, model::LayerSelector selector,
                                 const Tensor& x, std::span<const int> targets = {});

/// Feature map GradCAM reads for a layer of the occlusion study: the final
/// fully connected output has no spatial extent, so it maps to the last
/// convolutional stage.
model::LayerSelector gradcam_layer_for(model::LayerSelector selector);

/// Sum of map values inside the square.
double relevance_gradcam(const SaliencyMap& map, const data::OcclusionSpec& spec);

enum class RelevanceScope { kRegion, kWholeImage };

/// Squared difference between the reconstructions of x and of x occluded,
/// summed over the pixels of the square (or the whole image).
double relevance_cladec(const train::ReconstructFn& reconstruct, const Tensor& x,
                        const data::OcclusionSpec& spec,
                        RelevanceScope scope = RelevanceScope::kRegion);

enum class Extreme { kMin, kMax };

/// Index of the smallest or largest score. Ties are broken uniformly at random
/// by scanning the scores in an order drawn from `rng`.
int select_extreme(std::span<const double> scores, Extreme mode, std::mt19937_64& rng);

enum class Method { kClaDec, kGradCam, kRandom };

std::string to_string(Method method);
Method parse_method(const std::string& text);

using Scores = std::array<double, 16>;

/// Relevance of each of the 16 occlusions, for every sample of a batch.
using Scorer = std::function<std::vector<Scores>(const Tensor& batch)>;

Scorer gradcam_scorer(model::Classifier& classifier, model::LayerSelector selector);
Scorer cladec_scorer(model::Reconstructor& reconstructor, std::vector<float> fill,
                     RelevanceScope scope = RelevanceScope::kRegion);
/// Uniform random relevances (a null baseline).
Scorer random_scorer(std::uint64_t seed);

struct RelevanceTable {
  Method method = Method::kClaDec;
  model::LayerSelector selector;
  std::vector<Scores> scores;  // one entry per test image
};

struct OcclusionOutcome {
  std::string dataset;
  std::string arch;
  int layer = -1;
  Method method = Method::kClaDec;
  double acc_occ_max = 0.0;
  double acc_occ_min = 0.0;
  double delta_acc = 0.0;  // acc_occ_min - acc_occ_max
  std::uint64_t seed = 0;
  RelevanceTable table;

  static const std::vector<std::string>& header();
  std::string to_csv() const;
};

/// Scores the occlusions of every test image, occludes the least and the most
/// relevant square and reports the classifier's accuracy on each set.
OcclusionOutcome occlusion_study(model::Classifier& classifier, const Scorer& scorer,
                                 const data::ImageBatch& test, const std::vector<float>& fill,
                                 std::uint64_t seed, int batch_size = 100);

}  // namespace cladec::saliency
