#include "diffse/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "diffse/checkpoint.hpp"
#include "diffse/dsp.hpp"

namespace diffse {

using nn::Mat;

std::size_t NoiseEncoding::dim() const {
  return kind == EncodingKind::class_index ? std::size_t(num_classes) : latent.size();
}

std::vector<double> NoiseEncoding::vector() const {
  validate();
  if (kind == EncodingKind::latent) return latent;
  std::vector<double> v(std::size_t(num_classes), 0.0);
  v[std::size_t(class_index)] = 1.0;
  return v;
}

void NoiseEncoding::validate() const {
  if (kind == EncodingKind::class_index) {
    if (num_classes < 1 || class_index < 0 || class_index >= num_classes || !latent.empty()) {
      throw std::invalid_argument(fmt::format("invalid class encoding (label {}, N = {})", class_index, num_classes));
    }
  } else if (latent.empty() || class_index != -1) {
    throw std::invalid_argument("invalid latent encoding");
  }
}

NoiseEncoding encode_class(int label, int num_classes) {
  if (num_classes < 1 || label < 0 || label >= num_classes) {
    throw std::invalid_argument(fmt::format("noise label {} outside [0, {})", label, num_classes));
  }
  NoiseEncoding e;
  e.kind = EncodingKind::class_index;
  e.class_index = label;
  e.num_classes = num_classes;
  return e;
}

std::vector<double> noise_features(std::span<const double> noisy) {
  const MelSpectrogram mel = stft_mel(noisy);
  const int bands = mel.bands, frames = mel.frames;
  std::vector<double> f(std::size_t(3 * bands), 0.0);
  for (int b = 0; b < bands; ++b) {
    double mean = 0.0;
    for (int i = 0; i < frames; ++i) mean += mel.at(i, b);
    mean /= frames;
    double var = 0.0, delta = 0.0;
    for (int i = 0; i < frames; ++i) var += (mel.at(i, b) - mean) * (mel.at(i, b) - mean);
    for (int i = 1; i < frames; ++i) delta += std::abs(mel.at(i, b) - mel.at(i - 1, b));
    f[std::size_t(b)] = mean;
    f[std::size_t(bands + b)] = var / frames;
    f[std::size_t(2 * bands + b)] = frames > 1 ? delta / (frames - 1) : 0.0;
  }
  return f;
}

NoiseClassifier::NoiseClassifier(int num_features, const ClassifierConfig& config, Rng& rng)
    : num_features_(num_features), hidden_(config.hidden), num_classes_(config.num_classes) {
  if (num_classes_ < 2) throw std::invalid_argument("classifier needs at least two classes");
  w1_ = params_.add("fc1.weight", hidden_, num_features_);
  b1_ = params_.add("fc1.bias", hidden_, 1);
  w2_ = params_.add("fc2.weight", hidden_, hidden_);
  b2_ = params_.add("fc2.bias", hidden_, 1);
  w3_ = params_.add("head.weight", num_classes_, hidden_);
  b3_ = params_.add("head.bias", num_classes_, 1);
  nn::init_uniform(params_.value(w1_), num_features_, rng);
  nn::init_uniform(params_.value(w2_), hidden_, rng);
  nn::init_uniform(params_.value(w3_), hidden_, rng);
  mean_ = stats_.add("feature.mean", num_features_, 1);
  scale_ = stats_.add("feature.scale", num_features_, 1);
  stats_.value(scale_).setOnes();
}

Mat<double> NoiseClassifier::standardize(std::span<const double> features) const {
  if (int(features.size()) != num_features_) {
    throw std::invalid_argument(fmt::format("classifier expects {} features, got {}", num_features_, features.size()));
  }
  Mat<double> x(num_features_, 1);
  for (int i = 0; i < num_features_; ++i) {
    x(i, 0) = (features[std::size_t(i)] - stats_.value(mean_)(i, 0)) * stats_.value(scale_)(i, 0);
  }
  return x;
}

namespace {

Mat<double> softmax_columns(const Mat<double>& logits) {
  Mat<double> p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    const double mx = logits.col(c).maxCoeff();
    p.col(c) = (logits.col(c).array() - mx).exp().matrix();
    p.col(c) /= p.col(c).sum();
  }
  return p;
}

}  // namespace

std::vector<double> NoiseClassifier::probabilities_from_features(std::span<const double> features) const {
  const Mat<double> x = standardize(features);
  const Mat<double> h1 = nn::relu<double>(nn::affine<double>(params_.value(w1_), params_.value(b1_), x));
  const Mat<double> h2 = nn::relu<double>(nn::affine<double>(params_.value(w2_), params_.value(b2_), h1));
  const Mat<double> p = softmax_columns(nn::affine<double>(params_.value(w3_), params_.value(b3_), h2));
  return {p.data(), p.data() + p.size()};
}

std::vector<double> NoiseClassifier::embedding_from_features(std::span<const double> features) const {
  const Mat<double> x = standardize(features);
  const Mat<double> h1 = nn::relu<double>(nn::affine<double>(params_.value(w1_), params_.value(b1_), x));
  const Mat<double> h2 = nn::relu<double>(nn::affine<double>(params_.value(w2_), params_.value(b2_), h1));
  return {h2.data(), h2.data() + h2.size()};
}

std::vector<double> NoiseClassifier::probabilities(std::span<const double> noisy) const {
  return probabilities_from_features(noise_features(noisy));
}

int NoiseClassifier::classify(std::span<const double> noisy) const {
  const auto p = probabilities(noisy);
  // max_element returns the first maximum, i.e. the lowest index on ties.
  return int(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> NoiseClassifier::embedding(std::span<const double> noisy) const {
  return embedding_from_features(noise_features(noisy));
}

double NoiseClassifier::loss_and_grad(const Mat<double>& features, std::span<const int> labels) {
  const Eigen::Index batch = features.cols();
  Mat<double> x(num_features_, batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    x.col(c) = (features.col(c) - stats_.value(mean_)).cwiseProduct(stats_.value(scale_));
  }
  const Mat<double> z1 = nn::affine<double>(params_.value(w1_), params_.value(b1_), x);
  const Mat<double> h1 = nn::relu<double>(z1);
  const Mat<double> z2 = nn::affine<double>(params_.value(w2_), params_.value(b2_), h1);
  const Mat<double> h2 = nn::relu<double>(z2);
  const Mat<double> p = softmax_columns(nn::affine<double>(params_.value(w3_), params_.value(b3_), h2));

  double loss = 0.0;
  Mat<double> dlogits = p;
  for (Eigen::Index c = 0; c < batch; ++c) {
    const int y = labels[std::size_t(c)];
    loss -= std::log(std::max(p(y, c), 1e-300));
    dlogits(y, c) -= 1.0;
  }
  dlogits /= double(batch);
  const Mat<double> dh2 = nn::affine_backward<double>(params_.value(w3_), h2, dlogits, params_.grad(w3_), params_.grad(b3_));
  const Mat<double> dh1 = nn::affine_backward<double>(params_.value(w2_), h1, nn::relu_backward<double>(dh2, z2),
                                                      params_.grad(w2_), params_.grad(b2_));
  nn::affine_backward<double>(params_.value(w1_), x, nn::relu_backward<double>(dh1, z1), params_.grad(w1_), params_.grad(b1_));
  return loss / double(batch);
}

void NoiseClassifier::save(const std::filesystem::path& path) const {
  if (!trained_) throw std::logic_error("refusing to save an untrained classifier");
  Checkpoint ckpt;
  ckpt.set("model", "noise_classifier");
  ckpt.set("num_features", std::to_string(num_features_));
  ckpt.set("hidden", std::to_string(hidden_));
  ckpt.set("num_classes", std::to_string(num_classes_));
  store_params(params_, ckpt);
  store_params(stats_, ckpt);
  write_checkpoint(path, ckpt);
}

NoiseClassifier NoiseClassifier::load(const std::filesystem::path& path) {
  Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.get("model") != "noise_classifier") throw std::invalid_argument(fmt::format("{} is not a classifier checkpoint", path.string()));
  ClassifierConfig config;
  config.hidden = ckpt.get_int("hidden");
  config.num_classes = ckpt.get_int("num_classes");
  Rng rng(0);
  NoiseClassifier c(ckpt.get_int("num_features"), config, rng);
  Checkpoint stats;
  stats.tensors.assign(ckpt.tensors.end() - 2, ckpt.tensors.end());
  ckpt.tensors.resize(ckpt.tensors.size() - 2);
  restore_params(ckpt, c.params_);
  restore_params(stats, c.stats_);
  c.trained_ = true;
  return c;
}

namespace {

std::uint64_t fingerprint(std::span<const double> samples) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : samples) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 1099511628211ULL;
  }
  return h ^ samples.size();
}

}  // namespace

ClassifierResult train_classifier(std::span<const LabeledWaveform> data, const ClassifierConfig& config) {
  std::set<int> classes;
  for (const auto& d : data) {
    if (d.label < 0 || d.label >= config.num_classes) {
      throw std::invalid_argument(fmt::format("label {} outside [0, {})", d.label, config.num_classes));
    }
    classes.insert(d.label);
  }
  if (classes.size() < 2) throw std::invalid_argument("train_classifier needs at least two classes in the data");

  // Stratified deterministic split.
  Rng rng(config.seed);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data[i].label].push_back(i);
  std::vector<std::size_t> train_idx, held_idx;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto held = std::size_t(std::lround(config.held_out_fraction * double(idx.size())));
    held_idx.insert(held_idx.end(), idx.begin(), idx.begin() + std::ptrdiff_t(held));
    train_idx.insert(train_idx.end(), idx.begin() + std::ptrdiff_t(held), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(held_idx.begin(), held_idx.end());
  std::set<std::uint64_t> train_prints;
  for (auto i : train_idx) train_prints.insert(fingerprint(data[i].samples));
  for (auto i : held_idx) {
    if (train_prints.count(fingerprint(data[i].samples))) {
      throw std::invalid_argument("train and held-out splits share an utterance");
    }
  }
  if (train_idx.empty()) throw std::invalid_argument("train_classifier: empty training split");

  std::vector<std::vector<double>> features(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(data.size()); ++i) features[std::size_t(i)] = noise_features(data[std::size_t(i)].samples);
  const int dim = int(features.front().size());

  ClassifierResult result;
  result.classifier = NoiseClassifier(dim, config, rng);
  NoiseClassifier& clf = result.classifier;

  Mat<double> mean = Mat<double>::Zero(dim, 1), sq = Mat<double>::Zero(dim, 1);
  for (auto i : train_idx) {
    for (int d = 0; d < dim; ++d) {
      mean(d, 0) += features[i][std::size_t(d)];
      sq(d, 0) += features[i][std::size_t(d)] * features[i][std::size_t(d)];
    }
  }
  const double n = double(train_idx.size());
  for (int d = 0; d < dim; ++d) {
    const double m = mean(d, 0) / n;
    const double var = std::max(sq(d, 0) / n - m * m, 0.0);
    clf.stats_.value(clf.mean_)(d, 0) = m;
    clf.stats_.value(clf.scale_)(d, 0) = 1.0 / std::sqrt(var + 1e-8);
  }

  nn::Adam<double> adam(clf.params_, nn::AdamConfig{config.lr});
  const int batch = std::min<int>(config.batch, int(train_idx.size()));
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  Mat<double> x(dim, batch);
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int step = 0; step < config.steps; ++step) {
    for (int b = 0; b < batch; ++b) {
      const std::size_t i = train_idx[pick(rng)];
      for (int d = 0; d < dim; ++d) x(d, b) = features[i][std::size_t(d)];
      labels[std::size_t(b)] = data[i].label;
    }
    clf.params_.zero_grad();
    const double loss = clf.loss_and_grad(x, labels);
    if (!std::isfinite(loss)) throw std::runtime_error(fmt::format("classifier training diverged at step {}", step));
    adam.step(clf.params_);
  }
  clf.trained_ = true;

  int correct = 0;
  for (auto i : held_idx) {
    const auto p = clf.probabilities_from_features(features[i]);
    const int label = int(std::max_element(p.begin(), p.end()) - p.begin());
    correct += label == data[i].label;
  }
  result.train_count = int(train_idx.size());
  result.held_out_count = int(held_idx.size());
  result.held_out_accuracy = held_idx.empty() ? 0.0 : double(correct) / double(held_idx.size());
  return result;
}

NoiseEncoding encode_latent(std::span<const double> noisy, const NoiseClassifier& classifier) {
  if (!classifier.trained()) throw std::logic_error("encode_latent: classifier is not trained");
  NoiseEncoding e;
  e.kind = EncodingKind::latent;
  e.latent = classifier.embedding(noisy);
  return e;
}

NoiseEncoding encode_predicted(std::span<const double> noisy, const NoiseClassifier& classifier) {
  if (!classifier.trained()) throw std::logic_error("encode_predicted: classifier is not trained");
  return encode_class(classifier.classify(noisy), classifier.num_classes());
}

}  // namespace diffse
