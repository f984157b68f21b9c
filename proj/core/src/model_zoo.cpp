#include "cladec/model_zoo.hpp"

#include <bit>

namespace cladec::model {
namespace {

struct VggStage {
  int out_channels;
  int stride;
};

// Table of the VGG-style encoder: eight 3x3 convolutions.
constexpr VggStage kVggStages[] = {{32, 2},  {64, 2},  {128, 1}, {128, 2},
                                   {256, 1}, {256, 2}, {512, 1}, {512, 2}};

struct ResStage {
  int out_channels;
  int stride;
};
constexpr ResStage kResNetBlocks[] = {{64, 1}, {128, 2}, {256, 2}, {512, 2}};
constexpr int kResNetStem = 64;

constexpr int kProjectionWidth = 512;

// Decoder output channels keyed by the resolution a stage produces.
int decoder_channels_for(int resolution, int image_channels) {
  switch (resolution) {
    case 2: return 256;
    case 4: return 128;
    case 8: return 64;
    case 16: return 32;
    default: return image_channels;
  }
}

void check_selector(LayerSelector s) {
  if (s.index > -1 || s.index < -5) {
    throw ConfigError("layer selector must be in -1..-5, got " + std::to_string(s.index));
  }
}

}  // namespace

std::string to_string(ArchFamily family) {
  return family == ArchFamily::kVggTable1 ? "vgg-table1" : "resnet10";
}

ArchFamily parse_arch_family(const std::string& text) {
  if (text == "vgg-table1" || text == "vgg" || text == "vgg11") return ArchFamily::kVggTable1;
  if (text == "resnet10" || text == "resnet") return ArchFamily::kResNet10;
  throw ConfigError("unknown architecture '" + text + "' (expected vgg-table1 or resnet10)");
}

LayerSelector LayerSelector::of(int index) {
  LayerSelector s{index};
  check_selector(s);
  return s;
}

NeuronSubset NeuronSubset::resolve(int channels) const {
  NeuronSubset r{start, end < 0 ? channels : end};
  if (r.start < 0 || r.end > channels || r.start >= r.end) {
    throw ConfigError("neuron subset [" + std::to_string(start) + "," + std::to_string(end) +
                      ") invalid for a layer with " + std::to_string(channels) + " channels");
  }
  return r;
}

bool NeuronSubset::is_full(int channels) const {
  const NeuronSubset r = resolve(channels);
  return r.start == 0 && r.end == channels;
}

std::string NeuronSubset::label() const {
  if (start == 0 && end < 0) return "all";
  return std::to_string(start) + "-" + (end < 0 ? std::string("end") : std::to_string(end));
}

ActivationShape activation_shape(const ArchSpec& arch, LayerSelector selector) {
  check_selector(selector);
  if (selector.is_head()) return {arch.classes, 0, 0};
  const int back = -selector.index - 1;  // 1 for the last stage
  if (arch.family == ArchFamily::kVggTable1) {
    int size = 32;
    std::vector<ActivationShape> shapes;
    for (const auto& st : kVggStages) {
      size = (size + 2 - 3) / st.stride + 1;
      shapes.push_back({st.out_channels, size, size});
    }
    return shapes[shapes.size() - static_cast<std::size_t>(back)];
  }
  int size = 32;
  std::vector<ActivationShape> shapes;
  for (const auto& b : kResNetBlocks) {
    size = (size + 2 - 3) / b.stride + 1;
    shapes.push_back({b.out_channels, size, size});
  }
  return shapes[shapes.size() - static_cast<std::size_t>(back)];
}

// ------------------------------------------------------------ Classifier

Classifier::Classifier(const ArchSpec& arch, std::mt19937_64& rng) : arch_(arch) {
  if (arch.in_channels <= 0 || arch.classes <= 1) {
    throw ConfigError("classifier needs positive input channels and at least two classes");
  }
  if (arch.family == ArchFamily::kVggTable1) {
    int in = arch.in_channels;
    for (const auto& st : kVggStages) {
      auto stage = std::make_unique<nn::Sequential>();
      stage->emplace<nn::Conv2d>("conv", in, st.out_channels, 3, st.stride, 1, false, rng);
      stage->emplace<nn::BatchNorm2d>("bn", st.out_channels);
      stage->emplace<nn::ReLU>("relu");
      stages_.push_back(std::move(stage));
      in = st.out_channels;
    }
    head_.emplace<nn::Linear>("fc", in, arch.classes, rng);
  } else {
    auto stem = std::make_unique<nn::Sequential>();
    stem->emplace<nn::Conv2d>("conv", arch.in_channels, kResNetStem, 3, 1, 1, false, rng);
    stem->emplace<nn::BatchNorm2d>("bn", kResNetStem);
    stem->emplace<nn::ReLU>("relu");
    stages_.push_back(std::move(stem));
    int in = kResNetStem;
    for (const auto& b : kResNetBlocks) {
      auto stage = std::make_unique<nn::Sequential>();
      stage->emplace<nn::ResidualBlock>("block", in, b.out_channels, b.stride, rng);
      stages_.push_back(std::move(stage));
      in = b.out_channels;
    }
    head_.emplace<nn::GlobalAvgPool>("pool");
    head_.emplace<nn::Linear>("fc", in, arch.classes, rng);
  }
}

std::size_t Classifier::stage_of(LayerSelector selector) const {
  check_selector(selector);
  if (selector.is_head()) return stages_.size();
  return stages_.size() - static_cast<std::size_t>(-selector.index - 2);
}

Tensor Classifier::forward(const Tensor& x, nn::Mode mode) {
  return forward_to_layer(x, LayerSelector{-1}, mode);
}

Tensor Classifier::forward_to_layer(const Tensor& x, LayerSelector selector, nn::Mode mode) {
  if (x.rank() != 4 || x.dim(1) != arch_.in_channels || x.dim(2) != 32 || x.dim(3) != 32) {
    throw ShapeError("classifier expects [N," + std::to_string(arch_.in_channels) +
                     ",32,32], got " + cladec::to_string(x.shape()));
  }
  const std::size_t last = stage_of(selector);
  Tensor h = x;
  for (std::size_t i = 0; i < stages_.size() && (i < last || selector.is_head()); ++i) {
    h = stages_[i]->forward(h, mode);
  }
  if (selector.is_head()) h = head_.forward(h, mode);
  return h;
}

Tensor Classifier::backward_from(const Tensor& grad, LayerSelector selector) {
  Tensor g = grad;
  std::size_t top;
  if (selector.is_head()) {
    g = head_.backward(g);
    top = stages_.size();
  } else {
    top = stage_of(selector);
  }
  for (std::size_t i = top; i-- > 0;) g = stages_[i]->backward(g);
  return g;
}

Tensor Classifier::backward_to(const Tensor& grad_logits, LayerSelector selector) {
  if (selector.is_head()) return grad_logits;
  Tensor g = head_.backward(grad_logits);
  const std::size_t stop = stage_of(selector);
  for (std::size_t i = stages_.size(); i-- > stop;) g = stages_[i]->backward(g);
  return g;
}

std::vector<nn::Parameter*> Classifier::parameters() {
  return parameters_up_to(LayerSelector{-1});
}

std::vector<nn::Parameter*> Classifier::parameters_up_to(LayerSelector selector) {
  std::vector<nn::Parameter*> out;
  const std::size_t last = stage_of(selector);
  for (std::size_t i = 0; i < stages_.size() && (i < last || selector.is_head()); ++i) {
    stages_[i]->collect_parameters(out);
  }
  if (selector.is_head()) head_.collect_parameters(out);
  return out;
}

void Classifier::set_frozen(bool frozen) {
  for (auto& s : stages_) s->set_frozen(frozen);
  head_.set_frozen(frozen);
}

StateDict Classifier::state(const std::string& prefix) {
  StateDict out;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    StateDict part = snapshot(*stages_[i], prefix + "stage" + std::to_string(i) + ".");
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  StateDict head = snapshot(head_, prefix + "head.");
  out.insert(out.end(), std::make_move_iterator(head.begin()), std::make_move_iterator(head.end()));
  return out;
}

void Classifier::load(const StateDict& state, const std::string& prefix) {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    restore(*stages_[i], state, prefix + "stage" + std::to_string(i) + ".");
  }
  restore(head_, state, prefix + "head.");
}

// --------------------------------------------------------------- Decoder

Decoder::Decoder(ActivationShape input, int out_channels, std::mt19937_64& rng) : input_(input) {
  if (input.channels <= 0) throw ConfigError("decoder input needs at least one channel");
  int channels = input.channels;
  int size = input.height;
  if (input.is_vector()) {
    net_.emplace<nn::Linear>("fc", input.channels, kProjectionWidth, rng);
    net_.emplace<nn::ReLU>("fc_relu");
    net_.emplace<nn::Reshape>("unflatten", Shape{kProjectionWidth, 1, 1});
    channels = kProjectionWidth;
    size = 1;
  }
  if (input.height != input.width && !input.is_vector()) {
    throw ConfigError("decoder needs a square activation");
  }
  if (size > 32 || 32 % size != 0 || !std::has_single_bit(static_cast<unsigned>(32 / size))) {
    throw ConfigError("activation of spatial size " + std::to_string(size) +
                      " cannot be upsampled to 32 by stride-2 stages");
  }
  upsampling_stages_ = std::countr_zero(static_cast<unsigned>(32 / size));
  int stage = 0;
  if (upsampling_stages_ == 0) {
    net_.emplace<nn::ConvTranspose2d>("deconv0", channels, out_channels, 5, 1, 2, 0, rng);
    stage = 1;
  }
  for (int i = 0; i < upsampling_stages_; ++i, ++stage) {
    size *= 2;
    const int out = decoder_channels_for(size, out_channels);
    net_.emplace<nn::ConvTranspose2d>("deconv" + std::to_string(stage), channels, out, 5, 2, 2, 1,
                                      rng);
    if (size != 32) net_.emplace<nn::ReLU>("relu" + std::to_string(stage));
    channels = out;
  }
  net_.emplace<nn::Sigmoid>("squash");
  deconv_stages_ = stage;
}

// ------------------------------------------------------------- builders

std::unique_ptr<Classifier> build_classifier(const ArchSpec& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return std::make_unique<Classifier>(arch, rng);
}

std::unique_ptr<Decoder> build_decoder(const ArchSpec& arch, LayerSelector selector,
                                       const NeuronSubset& subset, std::uint64_t seed) {
  ActivationShape shape = activation_shape(arch, selector);
  const NeuronSubset r = subset.resolve(shape.channels);
  shape.channels = r.end - r.start;
  std::mt19937_64 rng(seed);
  return std::make_unique<Decoder>(shape, arch.in_channels, rng);
}

Tensor forward_to_layer(Classifier& classifier, const Tensor& x, LayerSelector selector,
                        const NeuronSubset& subset, nn::Mode mode) {
  Tensor act = classifier.forward_to_layer(x, selector, mode);
  const NeuronSubset r = subset.resolve(act.dim(1));
  if (r.start == 0 && r.end == act.dim(1)) return act;
  return act.slice_channels(r.start, r.end);
}

Tensor zero_pad_subset(const Tensor& subset_activation, const NeuronSubset& subset,
                       int full_channels) {
  const NeuronSubset r = subset.resolve(full_channels);
  if (subset_activation.dim(1) != r.end - r.start) {
    throw ShapeError("zero_pad_subset: activation has " + std::to_string(subset_activation.dim(1)) +
                     " channels, subset spans " + std::to_string(r.end - r.start));
  }
  Shape s = subset_activation.shape();
  std::vector<Tensor> parts;
  if (r.start > 0) {
    s[1] = r.start;
    parts.emplace_back(s);
  }
  parts.push_back(subset_activation);
  if (r.end < full_channels) {
    s[1] = full_channels - r.end;
    parts.emplace_back(s);
  }
  return concat_channels(parts);
}

Tensor Reconstructor::reconstruct(const Tensor& x) {
  const Tensor code = forward_to_layer(*encoder, x, selector, subset, nn::Mode::kEval);
  return decoder->forward(code, nn::Mode::kEval);
}

StateDict Reconstructor::state() {
  StateDict out = encoder->state("encoder.");
  StateDict dec = decoder->state("decoder.");
  out.insert(out.end(), std::make_move_iterator(dec.begin()), std::make_move_iterator(dec.end()));
  return out;
}

void Reconstructor::load(const StateDict& state) {
  encoder->load(state, "encoder.");
  decoder->load(state, "decoder.");
}

Reconstructor build_reconstructor(const ArchSpec& arch, LayerSelector selector,
                                  const NeuronSubset& subset, std::uint64_t seed) {
  Reconstructor r;
  r.encoder = build_classifier(arch, seed);
  r.decoder = build_decoder(arch, selector, subset, seed ^ 0x9e3779b97f4a7c15ULL);
  r.selector = selector;
  r.subset = subset;
  return r;
}

}  // namespace cladec::model
