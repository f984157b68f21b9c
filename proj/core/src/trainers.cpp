#include "cladec/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cladec/loss.hpp"
#include "cladec/optim.hpp"
#include "json.hpp"

namespace cladec::train {
namespace {

using nlohmann::json;
using model::ConfigError;

std::unique_ptr<optim::Optimizer> make_optimizer(const TrainConfig& cfg,
                                                 std::vector<nn::Parameter*> params) {
  if (cfg.optimizer == OptimizerKind::kAdam) {
    return std::make_unique<optim::Adam>(std::move(params), cfg.base_lr);
  }
  return std::make_unique<optim::Sgd>(std::move(params), cfg.base_lr, cfg.momentum,
                                      cfg.weight_decay);
}

optim::StepSchedule schedule_of(const TrainConfig& cfg) {
  return {cfg.base_lr, cfg.lr_decays};
}

int count_correct(const Tensor& logits, std::span<const int> labels) {
  const auto pred = loss::argmax_rows(logits);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return correct;
}

// Accumulates per-sample sums so epoch means are exact over uneven batches.
struct EpochAccumulator {
  double loss = 0.0, rec = 0.0, cls = 0.0;
  long correct = 0, seen = 0;

  void add(int n, double l, double r, double c, int ok) {
    loss += l * n;
    rec += r * n;
    cls += c * n;
    correct += ok;
    seen += n;
  }
  EpochLog finish(int epoch) const {
    const double d = seen > 0 ? static_cast<double>(seen) : 1.0;
    return {epoch, loss / d, rec / d, cls / d, static_cast<double>(correct) / d};
  }
};

void check_finite(double value, int epoch, const char* what) {
  if (!std::isfinite(value)) {
    throw TrainingError(std::string(what) + " loss became non-finite during epoch " +
                            std::to_string(epoch + 1),
                        epoch);
  }
}

// Runs cfg.epochs passes of `step` over shuffled mini-batches. A trailing batch
// of a single sample is dropped since BatchNorm cannot normalize it.
template <typename Step>
EpochLog run_epochs(const data::ImageBatch& train, const TrainConfig& cfg,
                    optim::Optimizer* opt, const EpochCallback& on_epoch, Step&& step) {
  if (train.size() == 0) throw data::DataError("training set is empty");
  const auto schedule = schedule_of(cfg);
  EpochLog last;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (opt != nullptr) opt->set_lr(schedule.lr_at(epoch));
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    EpochAccumulator acc;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      if (end - begin < 2 && order.size() > 1) break;
      const std::span<const int> idx(order.data() + begin, end - begin);
      const data::ImageBatch batch = train.gather(idx);
      if (opt != nullptr) opt->zero_grad();
      const EpochLog r = step(batch);
      check_finite(r.loss, epoch, "training");
      if (opt != nullptr) opt->step();
      acc.add(batch.size(), r.loss, r.rec_loss, r.cls_loss, static_cast<int>(r.acc));
    }
    last = acc.finish(epoch + 1);
    if (on_epoch) on_epoch(last);
  }
  return last;
}

CheckpointMeta base_meta(CheckpointKind kind, const model::ArchSpec& arch, const TrainConfig& cfg,
                         const data::ImageBatch& train) {
  CheckpointMeta m;
  m.kind = kind;
  m.seed = cfg.seed;
  m.arch = arch;
  m.alpha = cfg.alpha;
  m.epochs = cfg.epochs;
  (void)train;
  return m;
}

void check_arch_matches(const model::ArchSpec& arch, const data::ImageBatch& train) {
  if (train.size() > 0 && (train.channels() != arch.in_channels || train.classes != arch.classes)) {
    throw ShapeError("dataset has " + std::to_string(train.channels()) + " channels and " +
                     std::to_string(train.classes) + " classes; architecture expects " +
                     std::to_string(arch.in_channels) + " and " + std::to_string(arch.classes));
  }
}

// SSE gradient at a subset activation, zero-padded to the full layer when the
// encoder produced the full layer.
Tensor to_layer_grad(const Tensor& grad, const model::NeuronSubset& subset, int channels) {
  if (subset.is_full(channels)) return grad;
  return model::zero_pad_subset(grad, subset, channels);
}

}  // namespace

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd-step";
}

OptimizerKind parse_optimizer(const std::string& text) {
  if (text == "adam") return OptimizerKind::kAdam;
  if (text == "sgd-step" || text == "sgd") return OptimizerKind::kSgdStep;
  throw ConfigError("unknown optimizer '" + text + "' (expected sgd-step or adam)");
}

TrainConfig TrainConfig::classifier_defaults() { return {}; }

TrainConfig TrainConfig::decoder_defaults() {
  TrainConfig c;
  c.optimizer = OptimizerKind::kAdam;
  c.base_lr = 1e-3;
  c.lr_decays.clear();
  c.weight_decay = 0.0;
  return c;
}

void TrainConfig::validate(bool allow_untrained) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0,1], got " + std::to_string(alpha));
  }
  if (epochs < (allow_untrained ? 0 : 1)) {
    throw ConfigError("epochs must be >= " + std::string(allow_untrained ? "0" : "1") + ", got " +
                      std::to_string(epochs));
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

std::string to_string(CheckpointKind kind) {
  switch (kind) {
    case CheckpointKind::kClassifier: return "classifier";
    case CheckpointKind::kRefAE: return "refae";
    case CheckpointKind::kClaDec: return "cladec";
    case CheckpointKind::kEval: return "eval";
  }
  return "classifier";
}

CheckpointKind parse_checkpoint_kind(const std::string& text) {
  if (text == "classifier") return CheckpointKind::kClassifier;
  if (text == "refae") return CheckpointKind::kRefAE;
  if (text == "cladec") return CheckpointKind::kClaDec;
  if (text == "eval") return CheckpointKind::kEval;
  throw ConfigError("unknown checkpoint kind '" + text + "'");
}

std::string CheckpointMeta::to_json() const {
  json j;
  j["kind"] = train::to_string(kind);
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["dataset"] = dataset;
  j["arch"] = {{"family", model::to_string(arch.family)},
               {"in_channels", arch.in_channels},
               {"classes", arch.classes}};
  j["selector"] = selector.index;
  j["subset"] = {subset.start, subset.end};
  j["alpha"] = alpha;
  j["epochs"] = epochs;
  j["encoder_epochs"] = encoder_epochs;
  j["source"] = source;
  j["final"] = {{"epoch", final.epoch},       {"loss", final.loss}, {"rec_loss", final.rec_loss},
                {"cls_loss", final.cls_loss}, {"acc", final.acc}};
  return j.dump(2);
}

CheckpointMeta CheckpointMeta::from_json(const std::string& text) {
  const json j = json::parse(text);
  CheckpointMeta m;
  m.kind = parse_checkpoint_kind(j.at("kind").get<std::string>());
  m.config_hash = j.value("config_hash", "");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.dataset = j.value("dataset", "");
  const auto& a = j.at("arch");
  m.arch.family = model::parse_arch_family(a.at("family").get<std::string>());
  m.arch.in_channels = a.at("in_channels").get<int>();
  m.arch.classes = a.at("classes").get<int>();
  m.selector.index = j.at("selector").get<int>();
  m.subset.start = j.at("subset").at(0).get<int>();
  m.subset.end = j.at("subset").at(1).get<int>();
  m.alpha = j.value("alpha", 0.0);
  m.epochs = j.value("epochs", 0);
  m.encoder_epochs = j.value("encoder_epochs", -1);
  m.source = j.value("source", "");
  if (j.contains("final")) {
    const auto& f = j["final"];
    m.final = {f.value("epoch", 0), f.value("loss", 0.0), f.value("rec_loss", 0.0),
               f.value("cls_loss", 0.0), f.value("acc", 0.0)};
  }
  return m;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_archive(path, Archive{meta.to_json(), state});
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  return {CheckpointMeta::from_json(a.meta_json), std::move(a.state)};
}

std::unique_ptr<model::Classifier> load_classifier(const Checkpoint& ckpt) {
  if (ckpt.meta.kind != CheckpointKind::kClassifier && ckpt.meta.kind != CheckpointKind::kEval) {
    throw ConfigError("checkpoint of kind " + to_string(ckpt.meta.kind) + " is not a classifier");
  }
  auto c = model::build_classifier(ckpt.meta.arch, 0);
  c->load(ckpt.state);
  return c;
}

model::Reconstructor load_reconstructor(const Checkpoint& ckpt) {
  if (ckpt.meta.kind != CheckpointKind::kRefAE && ckpt.meta.kind != CheckpointKind::kClaDec) {
    throw ConfigError("checkpoint of kind " + to_string(ckpt.meta.kind) +
                      " is not a reconstructor");
  }
  auto r = model::build_reconstructor(ckpt.meta.arch, ckpt.meta.selector, ckpt.meta.subset, 0);
  r.load(ckpt.state);
  return r;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  // FNV-1a over the tag, folded into the seed and finished with splitmix64.
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<int> epoch_order(int count, std::uint64_t seed, int epoch) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "epoch" + std::to_string(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

Checkpoint train_classifier(const model::ArchSpec& arch, const data::ImageBatch& train,
                            const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate(true);
  check_arch_matches(arch, train);
  auto net = model::build_classifier(arch, derive_seed(cfg.seed, "classifier"));
  auto opt = make_optimizer(cfg, net->parameters());
  Checkpoint ckpt;
  ckpt.meta = base_meta(CheckpointKind::kClassifier, arch, cfg, train);
  ckpt.meta.alpha = 1.0;
  ckpt.meta.final = run_epochs(train, cfg, opt.get(), on_epoch, [&](const data::ImageBatch& b) {
    const Tensor logits = net->forward(b.images, nn::Mode::kTrain);
    auto ce = loss::cross_entropy(logits, b.labels);
    net->backward_from(ce.grad, model::LayerSelector{-1});
    return EpochLog{0, ce.value, 0.0, ce.value,
                    static_cast<double>(count_correct(logits, b.labels))};
  });
  ckpt.state = net->state();
  return ckpt;
}

Checkpoint train_refae(const model::ArchSpec& arch, model::LayerSelector selector,
                       const model::NeuronSubset& subset, const data::ImageBatch& train,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  check_arch_matches(arch, train);
  const int channels = model::activation_shape(arch, selector).channels;
  subset.resolve(channels);
  auto r = model::build_reconstructor(arch, selector, subset, derive_seed(cfg.seed, "refae"));
  auto params = r.encoder->parameters_up_to(selector);
  for (auto* p : r.decoder->parameters()) params.push_back(p);
  auto opt = make_optimizer(cfg, std::move(params));

  Checkpoint ckpt;
  ckpt.meta = base_meta(CheckpointKind::kRefAE, arch, cfg, train);
  ckpt.meta.selector = selector;
  ckpt.meta.subset = subset;
  ckpt.meta.alpha = 0.0;
  ckpt.meta.final = run_epochs(train, cfg, opt.get(), on_epoch, [&](const data::ImageBatch& b) {
    const Tensor code = r.encoder->forward_to_layer(b.images, selector, nn::Mode::kTrain);
    const Tensor used = subset.is_full(channels)
                            ? code
                            : code.slice_channels(subset.resolve(channels).start,
                                                  subset.resolve(channels).end);
    const Tensor recon = r.decoder->forward(used, nn::Mode::kTrain);
    auto sse = loss::sum_squared_error(recon, b.images);
    const Tensor g_code = r.decoder->backward(sse.grad);
    r.encoder->backward_from(to_layer_grad(g_code, subset, channels), selector);
    return EpochLog{0, sse.value, sse.value, 0.0, 0.0};
  });
  ckpt.state = r.state();
  return ckpt;
}

Checkpoint train_cladec(const Checkpoint& classifier, model::LayerSelector selector,
                        const model::NeuronSubset& subset, const data::ImageBatch& train,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const model::ArchSpec& arch = classifier.meta.arch;
  check_arch_matches(arch, train);
  auto net = load_classifier(classifier);
  net->set_frozen(true);
  auto decoder = model::build_decoder(arch, selector, subset, derive_seed(cfg.seed, "cladec"));
  auto opt = make_optimizer(cfg, decoder->parameters());
  const double alpha = cfg.alpha;

  Checkpoint ckpt;
  ckpt.meta = base_meta(CheckpointKind::kClaDec, arch, cfg, train);
  ckpt.meta.selector = selector;
  ckpt.meta.subset = subset;
  ckpt.meta.encoder_epochs = classifier.meta.epochs;
  ckpt.meta.dataset = classifier.meta.dataset;
  ckpt.meta.final = run_epochs(train, cfg, opt.get(), on_epoch, [&](const data::ImageBatch& b) {
    const Tensor code = model::forward_to_layer(*net, b.images, selector, subset, nn::Mode::kEval);
    const Tensor recon = decoder->forward(code, nn::Mode::kTrain);
    auto sse = loss::sum_squared_error(recon, b.images);
    Tensor grad = std::move(sse.grad);
    double cls = 0.0;
    int correct = 0;
    if (alpha > 0.0) {
      const Tensor logits = net->forward(recon, nn::Mode::kEval);
      auto ce = loss::cross_entropy(logits, b.labels);
      cls = ce.value;
      correct = count_correct(logits, b.labels);
      const Tensor g_img = net->backward_from(ce.grad, model::LayerSelector{-1});
      scale_inplace(grad, static_cast<float>(1.0 - alpha));
      for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] += static_cast<float>(alpha) * g_img[i];
      }
    }
    decoder->backward(grad);
    return EpochLog{0, (1.0 - alpha) * sse.value + alpha * cls, sse.value, cls,
                    static_cast<double>(correct)};
  });

  model::Reconstructor r{std::move(net), std::move(decoder), selector, subset};
  ckpt.state = r.state();
  return ckpt;
}

Checkpoint train_eval_classifier(const model::ArchSpec& arch, const ReconstructFn& reconstruct,
                                 const data::ImageBatch& train, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch) {
  cfg.validate();
  check_arch_matches(arch, train);
  auto net = model::build_classifier(arch, derive_seed(cfg.seed, "eval-classifier"));
  auto opt = make_optimizer(cfg, net->parameters());
  Checkpoint ckpt;
  ckpt.meta = base_meta(CheckpointKind::kEval, arch, cfg, train);
  ckpt.meta.alpha = 1.0;
  ckpt.meta.final = run_epochs(train, cfg, opt.get(), on_epoch, [&](const data::ImageBatch& b) {
    const Tensor x = reconstruct(b.images);
    const Tensor logits = net->forward(x, nn::Mode::kTrain);
    auto ce = loss::cross_entropy(logits, b.labels);
    net->backward_from(ce.grad, model::LayerSelector{-1});
    return EpochLog{0, ce.value, 0.0, ce.value,
                    static_cast<double>(count_correct(logits, b.labels))};
  });
  ckpt.state = net->state();
  return ckpt;
}

Checkpoint train_eval_classifier(const Checkpoint& reconstructor, const data::ImageBatch& train,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch) {
  auto r = load_reconstructor(reconstructor);
  Checkpoint ckpt = train_eval_classifier(
      reconstructor.meta.arch, [&](const Tensor& x) { return r.reconstruct(x); }, train, cfg,
      on_epoch);
  ckpt.meta.source = to_string(reconstructor.meta.kind);
  ckpt.meta.selector = reconstructor.meta.selector;
  ckpt.meta.subset = reconstructor.meta.subset;
  ckpt.meta.dataset = reconstructor.meta.dataset;
  return ckpt;
}

void append_train_log(const std::filesystem::path& path, const EpochLog& row) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot append to " + path.string());
  if (fresh) f << "epoch,loss,rec_loss,cls_loss,acc\n";
  f.precision(9);
  f << row.epoch << ',' << row.loss << ',' << row.rec_loss << ',' << row.cls_loss << ','
    << row.acc << '\n';
}

}  // namespace cladec::train
