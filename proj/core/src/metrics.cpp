#include "cladec/metrics.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cladec/loss.hpp"
#include "cladec/state.hpp"

namespace cladec::metrics {
namespace {

template <typename PerSample>
double per_sample_mean(const Tensor& x, const Tensor& xhat, const char* what, PerSample&& f) {
  require_same_shape(x, xhat, what);
  const int n = x.dim(0);
  if (n == 0) return 0.0;
  const std::size_t per = x.sample_size();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double sse = 0.0;
    const std::size_t off = static_cast<std::size_t>(i) * per;
    for (std::size_t j = 0; j < per; ++j) {
      const double d = static_cast<double>(x[off + j]) - xhat[off + j];
      sse += d * d;
    }
    total += f(sse, per);
  }
  return total / n;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string stat_cells(const Stat& s) { return format_double(s.mean) + "," + format_double(s.std); }

}  // namespace

double rec_loss(const Tensor& x, const Tensor& xhat) {
  return per_sample_mean(x, xhat, "rec_loss",
                         [](double sse, std::size_t per) { return sse / static_cast<double>(per); });
}

double rec_loss_sum(const Tensor& x, const Tensor& xhat) {
  return per_sample_mean(x, xhat, "rec_loss_sum", [](double sse, std::size_t) { return sse; });
}

double rec_loss_norm(const Tensor& x, const Tensor& xhat) {
  return per_sample_mean(x, xhat, "rec_loss_norm",
                         [](double sse, std::size_t) { return std::sqrt(sse); });
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predictions[i] == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double accuracy(model::Classifier& classifier, const data::ImageBatch& batch,
                const train::ReconstructFn& transform, int batch_size) {
  std::vector<int> pred;
  pred.reserve(static_cast<std::size_t>(batch.size()));
  for (int b = 0; b < batch.size(); b += batch_size) {
    const int e = std::min(batch.size(), b + batch_size);
    Tensor x = batch.images.slice_batch(b, e);
    if (transform) x = transform(x);
    const auto p = loss::argmax_rows(classifier.forward(x, nn::Mode::kEval));
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return accuracy(pred, batch.labels);
}

double accuracy(const train::Checkpoint& classifier, const data::ImageBatch& batch,
                const train::ReconstructFn& transform, int batch_size) {
  auto net = train::load_classifier(classifier);
  return accuracy(*net, batch, transform, batch_size);
}

Tensor reconstruct_all(model::Reconstructor& r, const Tensor& x, int batch_size) {
  std::vector<Tensor> parts;
  for (int b = 0; b < x.dim(0); b += batch_size) {
    parts.push_back(r.reconstruct(x.slice_batch(b, std::min(x.dim(0), b + batch_size))));
  }
  if (parts.empty()) return Tensor(x.shape());
  return concat_batch(parts);
}

void MetricsRecord::derive_deltas() {
  delta_rec = rec_loss_cladec - rec_loss_refae;
  delta_acc = acc_eval_cladec - acc_eval_refae;
}

std::string MetricsRecord::config_key() const {
  return dataset + "|" + arch + "|" + std::to_string(selector) + "|" + subset + "|" +
         format_double(alpha);
}

const std::vector<std::string>& MetricsRecord::header() {
  static const std::vector<std::string> h{
      "dataset",         "arch",           "selector",       "subset",    "alpha",
      "seed",            "rec_loss_cladec", "rec_loss_refae", "delta_rec", "acc_eval_cladec",
      "acc_eval_refae",  "delta_acc",      "classifier_acc"};
  return h;
}

std::string MetricsRecord::to_csv() const {
  return dataset + "," + arch + "," + std::to_string(selector) + "," + subset + "," +
         format_double(alpha) + "," + std::to_string(seed) + "," + format_double(rec_loss_cladec) +
         "," + format_double(rec_loss_refae) + "," + format_double(delta_rec) + "," +
         format_double(acc_eval_cladec) + "," + format_double(acc_eval_refae) + "," +
         format_double(delta_acc) + "," + format_double(classifier_acc);
}

MetricsRecord MetricsRecord::from_csv(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != header().size()) {
    throw std::runtime_error("metrics row has " + std::to_string(f.size()) + " fields, expected " +
                             std::to_string(header().size()) + ": " + line);
  }
  MetricsRecord r;
  r.dataset = f[0];
  r.arch = f[1];
  r.selector = std::stoi(f[2]);
  r.subset = f[3];
  r.alpha = std::stod(f[4]);
  r.seed = std::stoull(f[5]);
  r.rec_loss_cladec = std::stod(f[6]);
  r.rec_loss_refae = std::stod(f[7]);
  r.delta_rec = std::stod(f[8]);
  r.acc_eval_cladec = std::stod(f[9]);
  r.acc_eval_refae = std::stod(f[10]);
  r.delta_acc = std::stod(f[11]);
  r.classifier_acc = std::stod(f[12]);
  return r;
}

const std::vector<std::string>& AltRecLossRecord::header() {
  static const std::vector<std::string> h{"dataset",       "arch",          "selector",
                                          "subset",        "alpha",         "seed",
                                          "rec_sse_cladec", "rec_sse_refae", "rec_norm_cladec",
                                          "rec_norm_refae"};
  return h;
}

std::string AltRecLossRecord::to_csv() const {
  return dataset + "," + arch + "," + std::to_string(selector) + "," + subset + "," +
         format_double(alpha) + "," + std::to_string(seed) + "," + format_double(rec_sse_cladec) +
         "," + format_double(rec_sse_refae) + "," + format_double(rec_norm_cladec) + "," +
         format_double(rec_norm_refae);
}

double delta_rec(std::span<const MetricsRecord> records) {
  if (records.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : records) s += r.rec_loss_cladec - r.rec_loss_refae;
  return s / static_cast<double>(records.size());
}

Stat mean_std(std::span<const double> values) {
  Stat s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

const std::vector<std::string>& SummaryRecord::header() {
  static const std::vector<std::string> h = [] {
    std::vector<std::string> out{"dataset", "arch", "selector", "subset", "alpha", "n"};
    for (const char* m : {"rec_loss_cladec", "rec_loss_refae", "delta_rec", "acc_eval_cladec",
                          "acc_eval_refae", "delta_acc", "classifier_acc"}) {
      out.push_back(std::string("mean_") + m);
      out.push_back(std::string("std_") + m);
    }
    return out;
  }();
  return h;
}

std::string SummaryRecord::to_csv() const {
  return dataset + "," + arch + "," + std::to_string(selector) + "," + subset + "," +
         format_double(alpha) + "," + std::to_string(n) + "," + stat_cells(rec_loss_cladec) + "," +
         stat_cells(rec_loss_refae) + "," + stat_cells(delta_rec) + "," +
         stat_cells(acc_eval_cladec) + "," + stat_cells(acc_eval_refae) + "," +
         stat_cells(delta_acc) + "," + stat_cells(classifier_acc);
}

SummaryRecord aggregate(std::span<const MetricsRecord> records) {
  if (records.size() < 2) {
    throw std::invalid_argument("aggregate needs at least two seeds, got " +
                                std::to_string(records.size()));
  }
  const std::string key = records.front().config_key();
  for (const auto& r : records) {
    if (r.config_key() != key) {
      throw std::invalid_argument("aggregate: mixed configurations " + key + " and " +
                                  r.config_key());
    }
  }
  auto column = [&](double MetricsRecord::*field) {
    std::vector<double> v;
    for (const auto& r : records) v.push_back(r.*field);
    return mean_std(v);
  };
  const auto& f = records.front();
  SummaryRecord s;
  s.dataset = f.dataset;
  s.arch = f.arch;
  s.selector = f.selector;
  s.subset = f.subset;
  s.alpha = f.alpha;
  s.n = static_cast<int>(records.size());
  s.rec_loss_cladec = column(&MetricsRecord::rec_loss_cladec);
  s.rec_loss_refae = column(&MetricsRecord::rec_loss_refae);
  s.delta_rec = column(&MetricsRecord::delta_rec);
  s.acc_eval_cladec = column(&MetricsRecord::acc_eval_cladec);
  s.acc_eval_refae = column(&MetricsRecord::acc_eval_refae);
  s.delta_acc = column(&MetricsRecord::delta_acc);
  s.classifier_acc = column(&MetricsRecord::classifier_acc);
  return s;
}

std::vector<SummaryRecord> aggregate_all(std::span<const MetricsRecord> records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<MetricsRecord>> groups;
  for (const auto& r : records) {
    auto [it, fresh] = groups.try_emplace(r.config_key());
    if (fresh) order.push_back(r.config_key());
    it->second.push_back(r);
  }
  std::vector<SummaryRecord> out;
  for (const auto& k : order) {
    if (groups[k].size() >= 2) out.push_back(aggregate(groups[k]));
  }
  return out;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) {
    throw std::invalid_argument("welch_t_test needs at least two samples per group");
  }
  const Stat sa = mean_std(a), sb = mean_std(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = sa.std * sa.std / na, vb = sb.std * sb.std / nb;
  const double diff = sa.mean - sb.mean;
  WelchResult r;
  if (va + vb == 0.0) {
    if (diff == 0.0) return r;
    r.t = diff > 0 ? INFINITY : -INFINITY;
    r.df = na + nb - 2.0;
    r.p = 0.0;
    return r;
  }
  r.t = diff / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

FileLock::FileLock(const std::filesystem::path& path) {
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd_ < 0) throw std::runtime_error("cannot open lock file " + path.string());
  if (::flock(fd_, LOCK_EX) != 0) {
    ::close(fd_);
    throw std::runtime_error("cannot lock " + path.string());
  }
}

FileLock::~FileLock() {
  ::flock(fd_, LOCK_UN);
  ::close(fd_);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string join_header(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += fields[i];
  }
  return out;
}

void append_csv_row(const std::filesystem::path& path, const std::string& header,
                    const std::string& row) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path lock_path = path;
  lock_path += ".lock";
  FileLock lock(lock_path);
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot append to " + path.string());
  if (fresh) f << header << '\n';
  f << row << '\n';
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricsRecord> records) {
  std::string out = join_header(MetricsRecord::header()) + "\n";
  for (const auto& r : records) out += r.to_csv() + "\n";
  write_file_atomic(path, out);
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != join_header(MetricsRecord::header())) {
    throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<MetricsRecord> out;
  while (std::getline(f, line)) {
    if (!line.empty()) out.push_back(MetricsRecord::from_csv(line));
  }
  return out;
}

void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRecord> rows) {
  std::string out = join_header(SummaryRecord::header()) + "\n";
  for (const auto& r : rows) out += r.to_csv() + "\n";
  write_file_atomic(path, out);
}

}  // namespace cladec::metrics
