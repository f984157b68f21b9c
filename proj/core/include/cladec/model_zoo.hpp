#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cladec/nn.hpp"
#include "cladec/state.hpp"
#include "cladec/tensor.hpp"

namespace cladec::model {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ArchFamily { kVggTable1, kResNet10 };

std::string to_string(ArchFamily family);
ArchFamily parse_arch_family(const std::string& text);

struct ArchSpec {
  ArchFamily family = ArchFamily::kVggTable1;
  int in_channels = 1;
  int classes = 10;

  bool operator==(const ArchSpec&) const = default;
};

/// -1 is the final fully connected output; -2..-5 are the last four conv
/// stages (VGG) or residual blocks (ResNet), counted back from the output.
struct LayerSelector {
  int index = -1;

  static LayerSelector of(int index);
  bool is_head() const { return index == -1; }
  bool operator==(const LayerSelector&) const = default;
};

/// Spatial extent 0 marks a vector-shaped (fully connected) activation.
struct ActivationShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  bool is_vector() const { return height == 0; }
  bool operator==(const ActivationShape&) const = default;
};

/// Half-open channel range [start, end). end < 0 means "all channels".
struct NeuronSubset {
  int start = 0;
  int end = -1;

  static NeuronSubset full() { return {}; }
  /// Validates against a channel count and returns the concrete range.
  NeuronSubset resolve(int channels) const;
  bool is_full(int channels) const;
  int size(int channels) const { return resolve(channels).end - resolve(channels).start; }
  std::string label() const;
  bool operator==(const NeuronSubset&) const = default;
};

/// Activation shape at a selector for 32x32 inputs, without building the model.
ActivationShape activation_shape(const ArchSpec& arch, LayerSelector selector);

/// VGG-style or ResNet-10 classifier split into stages whose outputs are the
/// explainable layers.
class Classifier {
 public:
  Classifier(const ArchSpec& arch, std::mt19937_64& rng);

  const ArchSpec& arch() const { return arch_; }

  Tensor forward(const Tensor& x, nn::Mode mode);
  /// Runs only the stages needed to produce the selected activation.
  Tensor forward_to_layer(const Tensor& x, LayerSelector selector, nn::Mode mode);

  /// Gradient w.r.t. the input of the most recent forward()/forward_to_layer()
  /// given the gradient at `selector` (which must be where that pass stopped or
  /// be the logits of a full pass).
  Tensor backward_from(const Tensor& grad, LayerSelector selector);
  /// After a full forward(): propagates logit gradients down to `selector` and
  /// returns the gradient at that activation.
  Tensor backward_to(const Tensor& grad_logits, LayerSelector selector);

  std::vector<nn::Parameter*> parameters();
  /// Parameters that influence the activation at `selector`.
  std::vector<nn::Parameter*> parameters_up_to(LayerSelector selector);
  void set_frozen(bool frozen);

  StateDict state(const std::string& prefix = "");
  void load(const StateDict& state, const std::string& prefix = "");

  /// Number of stages (conv layers for VGG, stem + 4 blocks for ResNet).
  std::size_t stage_count() const { return stages_.size(); }
  std::size_t stage_of(LayerSelector selector) const;

 private:
  ArchSpec arch_;
  std::vector<std::unique_ptr<nn::Sequential>> stages_;
  nn::Sequential head_;
};

/// Stack of 5x5 transposed convolutions mapping an activation back to
/// [channels, 32, 32]; vector activations go through a fully connected
/// projection to [512,1,1] first.
class Decoder {
 public:
  Decoder(ActivationShape input, int out_channels, std::mt19937_64& rng);

  Tensor forward(const Tensor& code, nn::Mode mode) { return net_.forward(code, mode); }
  Tensor backward(const Tensor& grad) { return net_.backward(grad); }
  std::vector<nn::Parameter*> parameters() { return nn::parameters_of(net_); }

  const ActivationShape& input_shape() const { return input_; }
  int deconv_stages() const { return deconv_stages_; }
  int upsampling_stages() const { return upsampling_stages_; }

  StateDict state(const std::string& prefix = "") { return snapshot(net_, prefix); }
  void load(const StateDict& state, const std::string& prefix = "") { restore(net_, state, prefix); }

 private:
  ActivationShape input_;
  nn::Sequential net_;
  int deconv_stages_ = 0;
  int upsampling_stages_ = 0;
};

std::unique_ptr<Classifier> build_classifier(const ArchSpec& arch, std::uint64_t seed);
std::unique_ptr<Decoder> build_decoder(const ArchSpec& arch, LayerSelector selector,
                                       const NeuronSubset& subset, std::uint64_t seed);

/// The selected layer's activation restricted to the subset's channels.
Tensor forward_to_layer(Classifier& classifier, const Tensor& x, LayerSelector selector,
                        const NeuronSubset& subset, nn::Mode mode = nn::Mode::kEval);

/// Places a subset activation back into a zero tensor of the full layer shape.
Tensor zero_pad_subset(const Tensor& subset_activation, const NeuronSubset& subset,
                       int full_channels);

/// Encoder (classifier prefix) + decoder. Serves as both ClaDec and RefAE.
struct Reconstructor {
  std::unique_ptr<Classifier> encoder;
  std::unique_ptr<Decoder> decoder;
  LayerSelector selector;
  NeuronSubset subset;

  /// Inference-mode reconstruction of a batch.
  Tensor reconstruct(const Tensor& x);
  StateDict state();
  void load(const StateDict& state);
};

Reconstructor build_reconstructor(const ArchSpec& arch, LayerSelector selector,
                                  const NeuronSubset& subset, std::uint64_t seed);

}  // namespace cladec::model
