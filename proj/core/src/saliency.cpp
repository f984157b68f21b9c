#include "cladec/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cladec/loss.hpp"
#include "cladec/metrics.hpp"

namespace cladec::saliency {
namespace {

using data::kImageSize;

// Bilinear resize with half-pixel centers, edges clamped.
std::vector<float> upsample_bilinear(const std::vector<float>& src, int h, int w, int out) {
  std::vector<float> dst(static_cast<std::size_t>(out) * out);
  const float sy = static_cast<float>(h) / out, sx = static_cast<float>(w) / out;
  for (int y = 0; y < out; ++y) {
    const float fy = std::max(0.0f, (y + 0.5f) * sy - 0.5f);
    const int y0 = std::min(static_cast<int>(fy), h - 1), y1 = std::min(y0 + 1, h - 1);
    const float ty = fy - y0;
    for (int x = 0; x < out; ++x) {
      const float fx = std::max(0.0f, (x + 0.5f) * sx - 0.5f);
      const int x0 = std::min(static_cast<int>(fx), w - 1), x1 = std::min(x0 + 1, w - 1);
      const float tx = fx - x0;
      const float top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
      const float bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
      dst[static_cast<std::size_t>(y) * out + x] = top * (1 - ty) + bot * ty;
    }
  }
  return dst;
}

Tensor sample_chw(const Tensor& t, int i) {
  return t.slice_batch(i, i + 1).reshaped({t.dim(1), t.dim(2), t.dim(3)});
}

}  // namespace

Tensor gradcam_from(const Tensor& activation, const Tensor& gradient) {
  require_same_shape(activation, gradient, "gradcam_from");
  if (activation.rank() != 3) {
    throw ShapeError("gradcam_from expects [K,h,w], got " + cladec::to_string(activation.shape()));
  }
  const int k = activation.dim(0), h = activation.dim(1), w = activation.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> cam(plane, 0.0f);
  for (int c = 0; c < k; ++c) {
    const float* g = gradient.data() + c * plane;
    const float* a = activation.data() + c * plane;
    double weight = 0.0;
    for (std::size_t i = 0; i < plane; ++i) weight += g[i];
    weight /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) cam[i] += static_cast<float>(weight) * a[i];
  }
  for (float& v : cam) v = std::max(v, 0.0f);
  std::vector<float> up = upsample_bilinear(cam, h, w, kImageSize);
  const auto [lo, hi] = std::minmax_element(up.begin(), up.end());
  const float mn = *lo, mx = *hi;
  if (mx - mn > 0.0f) {
    for (float& v : up) v = std::clamp((v - mn) / (mx - mn), 0.0f, 1.0f);
  } else {
    std::fill(up.begin(), up.end(), 0.0f);
  }
  return Tensor({kImageSize, kImageSize}, std::move(up));
}

std::vector<SaliencyMap> gradcam(model::Classifier& classifier, model::LayerSelector selector,
                                 const Tensor& x, std::span<const int> targets) {
  if (selector.is_head()) {
    throw model::ConfigError("GradCAM needs a convolutional feature map; selector -1 is a vector");
  }
  const int n = x.dim(0);
  if (!targets.empty() && static_cast<int>(targets.size()) != n) {
    throw ShapeError("gradcam: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " inputs");
  }
  // In inference mode every sample is independent, so one backward pass of the
  // summed target logits yields each sample's own gradient.
  const Tensor act = classifier.forward_to_layer(x, selector, nn::Mode::kEval);
  const Tensor logits = classifier.forward(x, nn::Mode::kEval);
  const std::vector<int> chosen =
      targets.empty() ? loss::argmax_rows(logits) : std::vector<int>(targets.begin(), targets.end());
  Tensor seed(logits.shape());
  const int classes = logits.dim(1);
  for (int i = 0; i < n; ++i) seed[static_cast<std::size_t>(i) * classes + chosen[i]] = 1.0f;
  const Tensor grad = classifier.backward_to(seed, selector);
  std::vector<SaliencyMap> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out.push_back({gradcam_from(sample_chw(act, i), sample_chw(grad, i)), selector, chosen[i]});
  }
  return out;
}

model::LayerSelector gradcam_layer_for(model::LayerSelector selector) {
  return selector.is_head() ? model::LayerSelector{-2} : selector;
}

double relevance_gradcam(const SaliencyMap& map, const data::OcclusionSpec& spec) {
  double s = 0.0;
  const int h = map.values.dim(0), w = map.values.dim(1);
  for (int y = std::max(0, spec.y); y < std::min(h, spec.y + spec.size); ++y) {
    for (int x = std::max(0, spec.x); x < std::min(w, spec.x + spec.size); ++x) {
      s += map.values[static_cast<std::size_t>(y) * w + x];
    }
  }
  return s;
}

namespace {

// Squared reconstruction change over the square (or everything), for [C,H,W] images.
double change_in(const Tensor& base, const Tensor& occ, const data::OcclusionSpec& spec,
                 RelevanceScope scope) {
  const int c = base.dim(0), h = base.dim(1), w = base.dim(2);
  double s = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (scope == RelevanceScope::kRegion && !spec.contains(y, x)) continue;
        const std::size_t i = (static_cast<std::size_t>(ch) * h + y) * w + x;
        const double d = static_cast<double>(occ[i]) - base[i];
        s += d * d;
      }
    }
  }
  return s;
}

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 4) return x;
  return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
}

}  // namespace

double relevance_cladec(const train::ReconstructFn& reconstruct, const Tensor& x,
                        const data::OcclusionSpec& spec, RelevanceScope scope) {
  const Tensor xb = as_batch(x);
  if (xb.dim(0) != 1) throw ShapeError("relevance_cladec scores a single image");
  const Tensor occ = data::apply_occlusion(xb, spec);
  const std::vector<Tensor> parts{xb, occ};
  const Tensor rec = reconstruct(concat_batch(parts));
  return change_in(sample_chw(rec, 0), sample_chw(rec, 1), spec, scope);
}

int select_extreme(std::span<const double> scores, Extreme mode, std::mt19937_64& rng) {
  if (scores.empty()) throw std::invalid_argument("select_extreme: no scores");
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int best = order.front();
  for (int i : order) {
    const bool better = mode == Extreme::kMax ? scores[i] > scores[best] : scores[i] < scores[best];
    if (better) best = i;
  }
  return best;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kClaDec: return "cladec";
    case Method::kGradCam: return "gradcam";
    case Method::kRandom: return "random";
  }
  return "cladec";
}

Method parse_method(const std::string& text) {
  if (text == "cladec") return Method::kClaDec;
  if (text == "gradcam") return Method::kGradCam;
  if (text == "random") return Method::kRandom;
  throw model::ConfigError("unknown relevance method '" + text + "' (expected cladec or gradcam)");
}

Scorer gradcam_scorer(model::Classifier& classifier, model::LayerSelector selector) {
  const model::LayerSelector layer = gradcam_layer_for(selector);
  return [&classifier, layer](const Tensor& batch) {
    const auto grid = data::occlusion_grid({0.0f});
    const auto maps = gradcam(classifier, layer, batch);
    std::vector<Scores> out(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (std::size_t o = 0; o < grid.size(); ++o) out[i][o] = relevance_gradcam(maps[i], grid[o]);
    }
    return out;
  };
}

Scorer cladec_scorer(model::Reconstructor& reconstructor, std::vector<float> fill,
                     RelevanceScope scope) {
  return [&reconstructor, fill = std::move(fill), scope](const Tensor& batch) {
    const auto grid = data::occlusion_grid(fill);
    const int n = batch.dim(0);
    const Tensor base = reconstructor.reconstruct(batch);
    std::vector<Scores> out(static_cast<std::size_t>(n));
    for (std::size_t o = 0; o < grid.size(); ++o) {
      std::vector<Tensor> occluded;
      for (int i = 0; i < n; ++i) occluded.push_back(data::apply_occlusion(batch.slice_batch(i, i + 1), grid[o]));
      const Tensor rec = reconstructor.reconstruct(concat_batch(occluded));
      for (int i = 0; i < n; ++i) {
        out[i][o] = change_in(sample_chw(base, i), sample_chw(rec, i), grid[o], scope);
      }
    }
    return out;
  };
}

Scorer random_scorer(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](const Tensor& batch) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Scores> out(static_cast<std::size_t>(batch.dim(0)));
    for (auto& s : out) {
      for (double& v : s) v = u(*rng);
    }
    return out;
  };
}

const std::vector<std::string>& OcclusionOutcome::header() {
  static const std::vector<std::string> h{"dataset",     "arch",         "layer",     "method",
                                          "acc_occ_max", "acc_occ_min", "delta_acc", "seed"};
  return h;
}

std::string OcclusionOutcome::to_csv() const {
  using metrics::format_double;
  return dataset + "," + arch + "," + std::to_string(layer) + "," + to_string(method) + "," +
         format_double(acc_occ_max) + "," + format_double(acc_occ_min) + "," +
         format_double(delta_acc) + "," + std::to_string(seed);
}

OcclusionOutcome occlusion_study(model::Classifier& classifier, const Scorer& scorer,
                                 const data::ImageBatch& test, const std::vector<float>& fill,
                                 std::uint64_t seed, int batch_size) {
  if (test.size() == 0) throw data::DataError("occlusion study on an empty test set");
  const auto grid = data::occlusion_grid(fill);
  OcclusionOutcome r;
  r.seed = seed;
  std::vector<int> pred_min, pred_max;
  for (int b = 0; b < test.size(); b += batch_size) {
    const int e = std::min(test.size(), b + batch_size);
    const Tensor x = test.images.slice_batch(b, e);
    const auto scores = scorer(x);
    std::vector<Tensor> occ_min, occ_max;
    for (int i = 0; i < e - b; ++i) {
      // The same draw breaks ties for both extremes, so an all-tied image gets
      // the same square twice.
      std::mt19937_64 rng(train::derive_seed(seed, "occlusion" + std::to_string(b + i)));
      std::mt19937_64 rng_copy = rng;
      const int lo = select_extreme(scores[i], Extreme::kMin, rng);
      const int hi = select_extreme(scores[i], Extreme::kMax, rng_copy);
      const Tensor xi = x.slice_batch(i, i + 1);
      occ_min.push_back(data::apply_occlusion(xi, grid[lo]));
      occ_max.push_back(data::apply_occlusion(xi, grid[hi]));
    }
    r.table.scores.insert(r.table.scores.end(), scores.begin(), scores.end());
    const auto pmin = loss::argmax_rows(classifier.forward(concat_batch(occ_min), nn::Mode::kEval));
    const auto pmax = loss::argmax_rows(classifier.forward(concat_batch(occ_max), nn::Mode::kEval));
    pred_min.insert(pred_min.end(), pmin.begin(), pmin.end());
    pred_max.insert(pred_max.end(), pmax.begin(), pmax.end());
  }
  r.acc_occ_min = metrics::accuracy(pred_min, test.labels);
  r.acc_occ_max = metrics::accuracy(pred_max, test.labels);
  r.delta_acc = r.acc_occ_min - r.acc_occ_max;
  return r;
}

}  // namespace cladec::saliency
