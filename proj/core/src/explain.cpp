#include "cladec/explain.hpp"

#include <algorithm>
#include <cmath>

namespace cladec::explain {
namespace {

constexpr int kLabelScale = 1;
constexpr int kLabelPad = 2;

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Tensor as_chw(const Tensor& t) {
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
  throw ShapeError("expected [C,H,W] or [1,C,H,W], got " + cladec::to_string(t.shape()));
}

}  // namespace

Tensor reconstruct(const train::Checkpoint& ckpt, const Tensor& x) {
  auto r = train::load_reconstructor(ckpt);
  return r.reconstruct(x);
}

std::vector<ExplanationTriplet> make_triplets(const Tensor& x, const train::Checkpoint& cladec,
                                              const train::Checkpoint& refae) {
  if (cladec.meta.selector != refae.meta.selector || cladec.meta.subset != refae.meta.subset) {
    throw model::ConfigError("ClaDec checkpoint explains layer " +
                             std::to_string(cladec.meta.selector.index) + " (" +
                             cladec.meta.subset.label() + ") but RefAE was built for layer " +
                             std::to_string(refae.meta.selector.index) + " (" +
                             refae.meta.subset.label() + ")");
  }
  if (!cladec.meta.dataset.empty() && !refae.meta.dataset.empty() &&
      cladec.meta.dataset != refae.meta.dataset) {
    throw model::ConfigError("checkpoints were trained on different datasets: " +
                             cladec.meta.dataset + " vs " + refae.meta.dataset);
  }
  const Tensor xe = reconstruct(cladec, x);
  const Tensor xr = reconstruct(refae, x);
  std::vector<ExplanationTriplet> out;
  for (int i = 0; i < x.dim(0); ++i) {
    auto chw = [i](const Tensor& t) {
      Tensor s = t.slice_batch(i, i + 1);
      return std::move(s).reshaped({t.dim(1), t.dim(2), t.dim(3)});
    };
    out.push_back({chw(x), chw(xe), chw(xr), cladec.meta.selector, cladec.meta.subset,
                   cladec.meta.alpha});
  }
  return out;
}

Tensor difference_map(const Tensor& refae_recon, const Tensor& cladec_recon) {
  require_same_shape(refae_recon, cladec_recon, "difference_map");
  Tensor out(refae_recon.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = refae_recon[i] - cladec_recon[i];
  return out;
}

image::RgbImage to_rgb(const Tensor& t) {
  const Tensor img = as_chw(t);
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (c != 1 && c != 3) throw ShapeError("to_rgb expects 1 or 3 channels");
  image::RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::uint8_t* p = out.at(x, y);
      for (int k = 0; k < 3; ++k) {
        const int src = c == 1 ? 0 : k;
        p[k] = to_byte(img[(static_cast<std::size_t>(src) * h + y) * w + x]);
      }
    }
  }
  return out;
}

image::RgbImage render_difference(const Tensor& diff) {
  const Tensor d = as_chw(diff);
  const int c = d.dim(0), h = d.dim(1), w = d.dim(2);
  image::RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float v = 0.0f;
      for (int k = 0; k < c; ++k) v += d[(static_cast<std::size_t>(k) * h + y) * w + x];
      v /= static_cast<float>(c);
      std::uint8_t* p = out.at(x, y);
      p[0] = v > 0.0f ? to_byte(v) : 0;
      p[1] = v < 0.0f ? to_byte(-v) : 0;
      p[2] = 0;
    }
  }
  return out;
}

int label_band_width(const std::vector<std::string>& labels) {
  int widest = 0;
  for (const auto& l : labels) widest = std::max(widest, image::text_width(l, kLabelScale));
  return widest == 0 ? 0 : widest + 2 * kLabelPad;
}

image::RgbImage render_grid(const std::vector<std::vector<image::RgbImage>>& rows,
                            const std::vector<std::string>& labels, int gutter) {
  if (rows.empty() || rows.front().empty()) throw std::invalid_argument("render_grid: no images");
  if (!labels.empty() && labels.size() != rows.size()) {
    throw std::invalid_argument("render_grid: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(rows.size()) + " rows");
  }
  const int tw = rows.front().front().width, th = rows.front().front().height;
  std::size_t cols = 0;
  for (const auto& row : rows) {
    cols = std::max(cols, row.size());
    for (const auto& img : row) {
      if (img.width != tw || img.height != th) {
        throw ShapeError("render_grid: images differ in size");
      }
    }
  }
  const int n_cols = static_cast<int>(cols), n_rows = static_cast<int>(rows.size());
  const int band = label_band_width(labels);
  image::RgbImage out(band + n_cols * tw + (n_cols - 1) * gutter,
                      n_rows * th + (n_rows - 1) * gutter, 255);
  for (int r = 0; r < n_rows; ++r) {
    const int oy = r * (th + gutter);
    if (band > 0) {
      image::draw_text(out, kLabelPad, oy + (th - 5 * kLabelScale) / 2, labels[r], kLabelScale, 0,
                       0, 0);
    }
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const int ox = band + static_cast<int>(c) * (tw + gutter);
      const auto& img = rows[r][c];
      for (int y = 0; y < th; ++y) {
        std::copy_n(img.at(0, y), static_cast<std::size_t>(tw) * 3, out.at(ox, oy + y));
      }
    }
  }
  return out;
}

GridRows triplet_rows(const std::vector<ExplanationTriplet>& triplets, bool with_original) {
  GridRows g;
  if (triplets.empty()) return g;
  std::vector<image::RgbImage> orig, refae, cladec, diff;
  for (const auto& t : triplets) {
    orig.push_back(to_rgb(t.original));
    refae.push_back(to_rgb(t.refae_recon));
    cladec.push_back(to_rgb(t.cladec_recon));
    diff.push_back(render_difference(difference_map(t.refae_recon, t.cladec_recon)));
  }
  const std::string layer = "L" + std::to_string(triplets.front().selector.index);
  if (with_original) {
    g.rows.push_back(std::move(orig));
    g.labels.push_back("INPUT");
  }
  g.rows.push_back(std::move(refae));
  g.labels.push_back("REFAE " + layer);
  g.rows.push_back(std::move(cladec));
  g.labels.push_back("CLADEC " + layer);
  g.rows.push_back(std::move(diff));
  g.labels.push_back("DIFF " + layer);
  return g;
}

}  // namespace cladec::explain
