#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cladec/tensor.hpp"

namespace cladec::nn {

enum class Mode { kTrain, kEval };

struct Parameter {
  Tensor value;
  Tensor grad;
};

/// (qualified name, tensor) pairs covering parameters and running statistics.
using StateRefs = std::vector<std::pair<std::string, Tensor*>>;

/// A differentiable layer with an explicit backward pass.
///
/// backward() consumes the activations cached by the most recent forward()
/// call and returns the gradient with respect to that call's input. Parameter
/// gradients are accumulated into Parameter::grad unless the layer is frozen.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::string kind() const = 0;

  virtual void collect_parameters(std::vector<Parameter*>& out) { (void)out; }
  virtual void collect_state(const std::string& prefix, StateRefs& out) {
    (void)prefix;
    (void)out;
  }

  /// Frozen layers still propagate input gradients but skip parameter gradients.
  virtual void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

 protected:
  bool frozen_ = false;
};

using LayerPtr = std::unique_ptr<Layer>;

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
         std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "conv2d"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_state(const std::string& prefix, StateRefs& out) override;

  int out_size(int in) const { return (in + 2 * padding_ - kernel_) / stride_ + 1; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  Parameter weight_;  // [out, in, k, k]
  Parameter bias_;    // [out]
  Tensor input_;
};

/// Fractionally strided convolution; weight layout [in, out, k, k].
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding,
                  int output_padding, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "conv_transpose2d"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_state(const std::string& prefix, StateRefs& out) override;

  int out_size(int in) const {
    return (in - 1) * stride_ - 2 * padding_ + kernel_ + output_padding_;
  }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_, kernel_, stride_, padding_, output_padding_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "batchnorm2d"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_state(const std::string& prefix, StateRefs& out) override;

  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  int channels_;
  float momentum_, eps_;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  Tensor xhat_;
  std::vector<float> inv_std_;
  Mode last_mode_ = Mode::kEval;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "relu"; }

 private:
  Tensor output_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "sigmoid"; }

 private:
  Tensor output_;
};

/// Fully connected layer; flattens every non-batch dimension of its input.
class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "linear"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_state(const std::string& prefix, StateRefs& out) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter weight_;  // [out, in]
  Parameter bias_;
  Tensor input_;
};

/// Reshapes each sample to a fixed per-sample shape.
class Reshape : public Layer {
 public:
  explicit Reshape(Shape sample_shape) : sample_shape_(std::move(sample_shape)) {}
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "reshape"; }

 private:
  Shape sample_shape_;
  Shape input_shape_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "global_avg_pool"; }

 private:
  Shape input_shape_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;

  Sequential& add(std::string name, LayerPtr layer);
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(name), std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "sequential"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_state(const std::string& prefix, StateRefs& out) override;
  void set_frozen(bool frozen) override;

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i).second; }
  const std::string& name_at(std::size_t i) const { return layers_.at(i).first; }

 private:
  std::vector<std::pair<std::string, LayerPtr>> layers_;
};

/// Two 3x3 conv+BN stages with an identity or 1x1-projection shortcut.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(int in_channels, int out_channels, int stride, std::mt19937_64& rng);

  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "residual_block"; }
  void collect_parameters(std::vector<Parameter*>& out) override;
  void collect_state(const std::string& prefix, StateRefs& out) override;
  void set_frozen(bool frozen) override;

  bool has_projection() const { return static_cast<bool>(shortcut_); }

 private:
  Sequential main_;
  std::unique_ptr<Sequential> shortcut_;
  ReLU out_relu_;
};

std::vector<Parameter*> parameters_of(Layer& layer);
void zero_grads(std::span<Parameter* const> params);

}  // namespace cladec::nn
