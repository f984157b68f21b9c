#include "cladec/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace cladec::nn {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

// Upper bound on the floats held by one im2col buffer; batches are processed
// in sample chunks below it.
constexpr std::size_t kMaxColFloats = std::size_t{1} << 23;

struct ConvGeometry {
  int channels, height, width;  // image side
  int kernel, stride, padding;
  int grid_h, grid_w;           // patch grid
};

// Writes the patch matrix of one image into rows [c*k*k + ky*k + kx] of a
// row-major buffer with leading dimension ld, starting at column offset.
void im2col(const float* image, const ConvGeometry& g, float* col, std::size_t ld,
            std::size_t offset) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ld + offset;
        for (int oy = 0; oy < g.grid_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          float* dst = row + static_cast<std::size_t>(oy) * g.grid_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.grid_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.grid_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-adds a patch matrix back into an image (adjoint of im2col).
void col2im(const float* col, std::size_t ld, std::size_t offset, const ConvGeometry& g,
            float* image) {
  const int k = g.kernel;
  for (int c = 0; c < g.channels; ++c) {
    float* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row =
            col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * ld + offset;
        for (int oy = 0; oy < g.grid_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const float* src = row + static_cast<std::size_t>(oy) * g.grid_w;
          float* dst = plane + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.grid_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Copies samples [n0, n0+nb) of an NCHW tensor into a [C, nb*P] matrix.
void gather_channels_major(const Tensor& t, int n0, int nb, MatRM& out) {
  const int c = t.dim(1);
  const std::size_t p = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  out.resize(c, static_cast<Eigen::Index>(nb * p));
  for (int i = 0; i < nb; ++i) {
    const float* src = t.data() + static_cast<std::size_t>(n0 + i) * c * p;
    for (int ch = 0; ch < c; ++ch) {
      std::copy_n(src + ch * p, p, out.data() + ch * out.cols() + i * p);
    }
  }
}

void scatter_channels_major(const MatRM& m, int n0, int nb, Tensor& t) {
  const int c = t.dim(1);
  const std::size_t p = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  for (int i = 0; i < nb; ++i) {
    float* dst = t.data() + static_cast<std::size_t>(n0 + i) * c * p;
    for (int ch = 0; ch < c; ++ch) {
      std::copy_n(m.data() + ch * m.cols() + i * p, p, dst + ch * p);
    }
  }
}

int chunk_samples(std::size_t col_floats_per_sample) {
  return static_cast<int>(std::max<std::size_t>(1, kMaxColFloats / std::max<std::size_t>(1, col_floats_per_sample)));
}

void init_uniform(Tensor& t, float bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.storage()) v = dist(rng);
}

void require_rank4(const Tensor& x, int channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected [N," + std::to_string(channels) +
                     ",H,W], got " + to_string(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
               std::mt19937_64& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias) {
  weight_.value = Tensor({out_, in_, kernel_, kernel_});
  weight_.grad = Tensor(weight_.value.shape());
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_ * kernel_ * kernel_));
  init_uniform(weight_.value, bound, rng);
  if (has_bias_) {
    bias_.value = Tensor({out_});
    bias_.grad = Tensor({out_});
    init_uniform(bias_.value, bound, rng);
  }
}

Tensor Conv2d::forward(const Tensor& x, Mode) {
  require_rank4(x, in_, "Conv2d");
  const int n = x.dim(0);
  const ConvGeometry g{in_, x.dim(2), x.dim(3), kernel_, stride_, padding_, out_size(x.dim(2)),
                       out_size(x.dim(3))};
  if (g.grid_h <= 0 || g.grid_w <= 0) throw ShapeError("Conv2d: input too small");
  const std::size_t kdim = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(g.grid_h) * g.grid_w;
  Tensor out({n, out_, g.grid_h, g.grid_w});
  const ConstMapRM w(weight_.value.data(), out_, static_cast<Eigen::Index>(kdim));
  const int chunk = chunk_samples(kdim * p);
  MatRM col, res;
  for (int n0 = 0; n0 < n; n0 += chunk) {
    const int nb = std::min(chunk, n - n0);
    const std::size_t ld = nb * p;
    col.resize(static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(ld));
    for (int i = 0; i < nb; ++i) {
      im2col(x.data() + static_cast<std::size_t>(n0 + i) * x.sample_size(), g, col.data(), ld,
             i * p);
    }
    res.noalias() = w * col;
    if (has_bias_) {
      for (int co = 0; co < out_; ++co) res.row(co).array() += bias_.value[co];
    }
    scatter_channels_major(res, n0, nb, out);
  }
  input_ = x;
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int n = x.dim(0);
  const ConvGeometry g{in_, x.dim(2), x.dim(3), kernel_, stride_, padding_, out_size(x.dim(2)),
                       out_size(x.dim(3))};
  if (grad_out.shape() != Shape{n, out_, g.grid_h, g.grid_w}) {
    throw ShapeError("Conv2d::backward: unexpected gradient shape " + to_string(grad_out.shape()));
  }
  const std::size_t kdim = static_cast<std::size_t>(in_) * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(g.grid_h) * g.grid_w;
  Tensor dx(x.shape());
  const ConstMapRM w(weight_.value.data(), out_, static_cast<Eigen::Index>(kdim));
  MapRM dw(weight_.grad.data(), out_, static_cast<Eigen::Index>(kdim));
  const int chunk = chunk_samples(kdim * p);
  MatRM col, gmat, dcol;
  for (int n0 = 0; n0 < n; n0 += chunk) {
    const int nb = std::min(chunk, n - n0);
    const std::size_t ld = nb * p;
    gather_channels_major(grad_out, n0, nb, gmat);
    if (!frozen_) {
      col.resize(static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(ld));
      for (int i = 0; i < nb; ++i) {
        im2col(x.data() + static_cast<std::size_t>(n0 + i) * x.sample_size(), g, col.data(), ld,
               i * p);
      }
      dw.noalias() += gmat * col.transpose();
      if (has_bias_) {
        for (int co = 0; co < out_; ++co) bias_.grad[co] += gmat.row(co).sum();
      }
    }
    dcol.noalias() = w.transpose() * gmat;
    for (int i = 0; i < nb; ++i) {
      col2im(dcol.data(), ld, i * p, g, dx.data() + static_cast<std::size_t>(n0 + i) * x.sample_size());
    }
  }
  return dx;
}

void Conv2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

void Conv2d::collect_state(const std::string& prefix, StateRefs& out) {
  out.emplace_back(prefix + "weight", &weight_.value);
  if (has_bias_) out.emplace_back(prefix + "bias", &bias_.value);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride,
                                 int padding, int output_padding, std::mt19937_64& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      output_padding_(output_padding) {
  if (output_padding_ >= stride_ && output_padding_ > 0) {
    throw ShapeError("ConvTranspose2d: output_padding must be smaller than stride");
  }
  weight_.value = Tensor({in_, out_, kernel_, kernel_});
  weight_.grad = Tensor(weight_.value.shape());
  bias_.value = Tensor({out_});
  bias_.grad = Tensor({out_});
  const float bound = 1.0f / std::sqrt(static_cast<float>(out_ * kernel_ * kernel_));
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x, Mode) {
  require_rank4(x, in_, "ConvTranspose2d");
  const int n = x.dim(0);
  const int ho = out_size(x.dim(2));
  const int wo = out_size(x.dim(3));
  if (ho <= 0 || wo <= 0) throw ShapeError("ConvTranspose2d: invalid output size");
  const ConvGeometry g{out_, ho, wo, kernel_, stride_, padding_, x.dim(2), x.dim(3)};
  const std::size_t kdim = static_cast<std::size_t>(out_) * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(g.grid_h) * g.grid_w;
  const std::size_t out_sample = static_cast<std::size_t>(out_) * ho * wo;
  Tensor out({n, out_, ho, wo});
  const ConstMapRM w(weight_.value.data(), in_, static_cast<Eigen::Index>(kdim));
  const int chunk = chunk_samples(kdim * p);
  MatRM xin, col;
  for (int n0 = 0; n0 < n; n0 += chunk) {
    const int nb = std::min(chunk, n - n0);
    gather_channels_major(x, n0, nb, xin);
    col.noalias() = w.transpose() * xin;
    for (int i = 0; i < nb; ++i) {
      col2im(col.data(), nb * p, i * p, g, out.data() + (n0 + i) * out_sample);
    }
  }
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int s = 0; s < n; ++s) {
    for (int c = 0; c < out_; ++c) {
      float* dst = out.data() + s * out_sample + c * plane;
      const float b = bias_.value[c];
      for (std::size_t i = 0; i < plane; ++i) dst[i] += b;
    }
  }
  input_ = x;
  return out;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int n = x.dim(0);
  const int ho = out_size(x.dim(2));
  const int wo = out_size(x.dim(3));
  if (grad_out.shape() != Shape{n, out_, ho, wo}) {
    throw ShapeError("ConvTranspose2d::backward: unexpected gradient shape " +
                     to_string(grad_out.shape()));
  }
  const ConvGeometry g{out_, ho, wo, kernel_, stride_, padding_, x.dim(2), x.dim(3)};
  const std::size_t kdim = static_cast<std::size_t>(out_) * kernel_ * kernel_;
  const std::size_t p = static_cast<std::size_t>(g.grid_h) * g.grid_w;
  const std::size_t out_sample = static_cast<std::size_t>(out_) * ho * wo;
  Tensor dx(x.shape());
  const ConstMapRM w(weight_.value.data(), in_, static_cast<Eigen::Index>(kdim));
  MapRM dw(weight_.grad.data(), in_, static_cast<Eigen::Index>(kdim));
  const int chunk = chunk_samples(kdim * p);
  MatRM dcol, xin, dxm;
  for (int n0 = 0; n0 < n; n0 += chunk) {
    const int nb = std::min(chunk, n - n0);
    const std::size_t ld = nb * p;
    dcol.resize(static_cast<Eigen::Index>(kdim), static_cast<Eigen::Index>(ld));
    for (int i = 0; i < nb; ++i) {
      im2col(grad_out.data() + (n0 + i) * out_sample, g, dcol.data(), ld, i * p);
    }
    if (!frozen_) {
      gather_channels_major(x, n0, nb, xin);
      dw.noalias() += xin * dcol.transpose();
    }
    dxm.noalias() = w * dcol;
    scatter_channels_major(dxm, n0, nb, dx);
  }
  if (!frozen_) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int s = 0; s < n; ++s) {
      for (int c = 0; c < out_; ++c) {
        const float* src = grad_out.data() + s * out_sample + c * plane;
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        bias_.grad[c] += static_cast<float>(acc);
      }
    }
  }
  return dx;
}

void ConvTranspose2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void ConvTranspose2d::collect_state(const std::string& prefix, StateRefs& out) {
  out.emplace_back(prefix + "weight", &weight_.value);
  out.emplace_back(prefix + "bias", &bias_.value);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_.value = Tensor({channels}, 1.0f);
  gamma_.grad = Tensor({channels});
  beta_.value = Tensor({channels});
  beta_.grad = Tensor({channels});
  running_mean_ = Tensor({channels});
  running_var_ = Tensor({channels}, 1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode) {
  require_rank4(x, channels_, "BatchNorm2d");
  const int n = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t count = n * plane;
  Tensor y(x.shape());
  xhat_ = Tensor(x.shape());
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0f);
  last_mode_ = mode;
  for (int c = 0; c < channels_; ++c) {
    float mean, var;
    if (mode == Mode::kTrain) {
      double s = 0.0, ss = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* src = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) s += src[j];
      }
      const double m = s / static_cast<double>(count);
      for (int i = 0; i < n; ++i) {
        const float* src = x.data() + (static_cast<std::size_t>(i) * channels_ + c) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = src[j] - m;
          ss += d * d;
        }
      }
      mean = static_cast<float>(m);
      var = static_cast<float>(ss / static_cast<double>(count));
      const float unbiased =
          count > 1 ? static_cast<float>(ss / static_cast<double>(count - 1)) : var;
      running_mean_[c] = (1.0f - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1.0f - momentum_) * running_var_[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const float inv = 1.0f / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const float gm = gamma_.value[c], bt = beta_.value[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const float h = (x[off + j] - mean) * inv;
        xhat_[off + j] = h;
        y[off + j] = gm * h + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  require_same_shape(grad_out, xhat_, "BatchNorm2d::backward");
  const int n = grad_out.dim(0);
  const std::size_t plane = static_cast<std::size_t>(grad_out.dim(2)) * grad_out.dim(3);
  const double count = static_cast<double>(n * plane);
  Tensor dx(grad_out.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_g += grad_out[off + j];
        sum_gx += static_cast<double>(grad_out[off + j]) * xhat_[off + j];
      }
    }
    if (!frozen_) {
      gamma_.grad[c] += static_cast<float>(sum_gx);
      beta_.grad[c] += static_cast<float>(sum_g);
    }
    const float scale = gamma_.value[c] * inv_std_[c];
    for (int i = 0; i < n; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * channels_ + c) * plane;
      if (last_mode_ == Mode::kTrain) {
        const double mg = sum_g / count, mgx = sum_gx / count;
        for (std::size_t j = 0; j < plane; ++j) {
          dx[off + j] = static_cast<float>(scale * (grad_out[off + j] - mg - xhat_[off + j] * mgx));
        }
      } else {
        for (std::size_t j = 0; j < plane; ++j) dx[off + j] = scale * grad_out[off + j];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm2d::collect_state(const std::string& prefix, StateRefs& out) {
  out.emplace_back(prefix + "weight", &gamma_.value);
  out.emplace_back(prefix + "bias", &beta_.value);
  out.emplace_back(prefix + "running_mean", &running_mean_);
  out.emplace_back(prefix + "running_var", &running_var_);
}

// ---------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x, Mode) {
  output_ = x;
  for (float& v : output_.storage()) v = v < 0.0f ? 0.0f : v;
  return output_;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  require_same_shape(grad_out, output_, "ReLU::backward");
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (output_[i] <= 0.0f) dx[i] = 0.0f;
  }
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x, Mode) {
  output_ = x;
  for (float& v : output_.storage()) v = 1.0f / (1.0f + std::exp(-v));
  return output_;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
  require_same_shape(grad_out, output_, "Sigmoid::backward");
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= output_[i] * (1.0f - output_[i]);
  return dx;
}

// --------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng)
    : in_(in_features), out_(out_features) {
  weight_.value = Tensor({out_, in_});
  weight_.grad = Tensor({out_, in_});
  bias_.value = Tensor({out_});
  bias_.grad = Tensor({out_});
  const float bound = 1.0f / std::sqrt(static_cast<float>(in_));
  init_uniform(weight_.value, bound, rng);
  init_uniform(bias_.value, bound, rng);
}

Tensor Linear::forward(const Tensor& x, Mode) {
  if (x.rank() < 2 || static_cast<int>(x.sample_size()) != in_) {
    throw ShapeError("Linear: expected " + std::to_string(in_) + " features per sample, got " +
                     to_string(x.shape()));
  }
  const int n = x.dim(0);
  Tensor y({n, out_});
  const ConstMapRM xm(x.data(), n, in_);
  const ConstMapRM w(weight_.value.data(), out_, in_);
  MapRM ym(y.data(), n, out_);
  ym.noalias() = xm * w.transpose();
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < out_; ++o) ym(i, o) += bias_.value[o];
  }
  input_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int n = input_.dim(0);
  if (grad_out.shape() != Shape{n, out_}) {
    throw ShapeError("Linear::backward: unexpected gradient shape " + to_string(grad_out.shape()));
  }
  const ConstMapRM g(grad_out.data(), n, out_);
  const ConstMapRM xm(input_.data(), n, in_);
  const ConstMapRM w(weight_.value.data(), out_, in_);
  if (!frozen_) {
    MapRM dw(weight_.grad.data(), out_, in_);
    dw.noalias() += g.transpose() * xm;
    for (int o = 0; o < out_; ++o) bias_.grad[o] += g.col(o).sum();
  }
  Tensor dx(input_.shape());
  MapRM dxm(dx.data(), n, in_);
  dxm.noalias() = g * w;
  return dx;
}

void Linear::collect_parameters(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void Linear::collect_state(const std::string& prefix, StateRefs& out) {
  out.emplace_back(prefix + "weight", &weight_.value);
  out.emplace_back(prefix + "bias", &bias_.value);
}

// ------------------------------------------------------- shape plumbing

Tensor Reshape::forward(const Tensor& x, Mode) {
  input_shape_ = x.shape();
  Shape s{x.dim(0)};
  s.insert(s.end(), sample_shape_.begin(), sample_shape_.end());
  return x.reshaped(std::move(s));
}

Tensor Reshape::backward(const Tensor& grad_out) { return grad_out.reshaped(input_shape_); }

Tensor GlobalAvgPool::forward(const Tensor& x, Mode) {
  if (x.rank() != 4) throw ShapeError("GlobalAvgPool: expected NCHW, got " + to_string(x.shape()));
  input_shape_ = x.shape();
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y({n, c});
  for (int i = 0; i < n * c; ++i) {
    double s = 0.0;
    const float* src = x.data() + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) s += src[j];
    y[i] = static_cast<float>(s / static_cast<double>(plane));
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(input_shape_);
  const int nc = input_shape_[0] * input_shape_[1];
  const std::size_t plane = static_cast<std::size_t>(input_shape_[2]) * input_shape_[3];
  const float inv = 1.0f / static_cast<float>(plane);
  for (int i = 0; i < nc; ++i) {
    std::fill_n(dx.data() + static_cast<std::size_t>(i) * plane, plane, grad_out[i] * inv);
  }
  return dx;
}

// ----------------------------------------------------------- Sequential

Sequential& Sequential::add(std::string name, LayerPtr layer) {
  layer->set_frozen(frozen_);
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Mode mode) {
  Tensor h = x;
  for (auto& [name, layer] : layers_) h = layer->forward(h, mode);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
  return g;
}

void Sequential::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& entry : layers_) entry.second->collect_parameters(out);
}

void Sequential::collect_state(const std::string& prefix, StateRefs& out) {
  for (auto& [name, layer] : layers_) layer->collect_state(prefix + name + ".", out);
}

void Sequential::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& entry : layers_) entry.second->set_frozen(frozen);
}

// -------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng) {
  main_.emplace<Conv2d>("conv1", in_channels, out_channels, 3, stride, 1, false, rng);
  main_.emplace<BatchNorm2d>("bn1", out_channels);
  main_.emplace<ReLU>("relu1");
  main_.emplace<Conv2d>("conv2", out_channels, out_channels, 3, 1, 1, false, rng);
  main_.emplace<BatchNorm2d>("bn2", out_channels);
  if (stride != 1 || in_channels != out_channels) {
    shortcut_ = std::make_unique<Sequential>();
    shortcut_->emplace<Conv2d>("conv", in_channels, out_channels, 1, stride, 0, false, rng);
    shortcut_->emplace<BatchNorm2d>("bn", out_channels);
  }
}

Tensor ResidualBlock::forward(const Tensor& x, Mode mode) {
  Tensor h = main_.forward(x, mode);
  if (shortcut_) {
    add_inplace(h, shortcut_->forward(x, mode));
  } else {
    add_inplace(h, x);
  }
  return out_relu_.forward(h, mode);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
  const Tensor g = out_relu_.backward(grad_out);
  Tensor dx = main_.backward(g);
  if (shortcut_) {
    add_inplace(dx, shortcut_->backward(g));
  } else {
    add_inplace(dx, g);
  }
  return dx;
}

void ResidualBlock::collect_parameters(std::vector<Parameter*>& out) {
  main_.collect_parameters(out);
  if (shortcut_) shortcut_->collect_parameters(out);
}

void ResidualBlock::collect_state(const std::string& prefix, StateRefs& out) {
  main_.collect_state(prefix, out);
  if (shortcut_) shortcut_->collect_state(prefix + "shortcut.", out);
}

void ResidualBlock::set_frozen(bool frozen) {
  frozen_ = frozen;
  main_.set_frozen(frozen);
  if (shortcut_) shortcut_->set_frozen(frozen);
}

std::vector<Parameter*> parameters_of(Layer& layer) {
  std::vector<Parameter*> out;
  layer.collect_parameters(out);
  return out;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->grad.zero();
}

}  // namespace cladec::nn
