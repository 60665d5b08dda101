#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "diffse/nn.hpp"
#include "diffse/types.hpp"

namespace diffse {

enum class EncodingKind { class_index, latent };

/// Global noise condition: a class label (one-hot at the model boundary) or
/// a latent embedding vector. Exactly one payload is set.
struct NoiseEncoding {
  EncodingKind kind = EncodingKind::class_index;
  int class_index = -1;
  int num_classes = 0;
  std::vector<double> latent;

  std::size_t dim() const;
  /// One-hot vector for class encodings, the embedding otherwise.
  std::vector<double> vector() const;
  void validate() const;
};

NoiseEncoding encode_class(int label, int num_classes);

/// Utterance-level log-Mel statistics: per-band mean, variance and mean
/// absolute frame-to-frame delta (3 x 80 values).
std::vector<double> noise_features(std::span<const double> noisy);

struct ClassifierConfig {
  int num_classes = 4;
  int hidden = 64;  // width of both hidden layers; the latent embedding size
  double lr = 1e-3;
  int steps = 1500;
  int batch = 32;
  double held_out_fraction = 0.2;
  std::uint64_t seed = 7;
};

struct LabeledWaveform {
  std::span<const double> samples;
  int label = 0;
};

struct ClassifierResult;
class NoiseClassifier;
ClassifierResult train_classifier(std::span<const LabeledWaveform> data, const ClassifierConfig& config);

/// Feature standardization followed by a two-hidden-layer ReLU perceptron.
class NoiseClassifier {
 public:
  NoiseClassifier() = default;
  NoiseClassifier(int num_features, const ClassifierConfig& config, Rng& rng);

  bool trained() const { return trained_; }
  int num_classes() const { return num_classes_; }
  int hidden() const { return hidden_; }

  /// Class probabilities (softmax) for a waveform.
  std::vector<double> probabilities(std::span<const double> noisy) const;
  /// Argmax label; ties go to the lowest index.
  int classify(std::span<const double> noisy) const;
  /// Last hidden layer activation.
  std::vector<double> embedding(std::span<const double> noisy) const;

  // Feature-level entry points (features as returned by noise_features).
  std::vector<double> probabilities_from_features(std::span<const double> features) const;
  std::vector<double> embedding_from_features(std::span<const double> features) const;

  /// Mean cross-entropy over a feature batch (columns) and its parameter
  /// gradient, accumulated into params().grad. Used by training and the
  /// finite-difference test.
  double loss_and_grad(const nn::Mat<double>& features, std::span<const int> labels);

  nn::ParamSet<double>& params() { return params_; }
  const nn::ParamSet<double>& params() const { return params_; }

  void save(const std::filesystem::path& path) const;
  static NoiseClassifier load(const std::filesystem::path& path);

 private:
  friend ClassifierResult train_classifier(std::span<const LabeledWaveform>, const ClassifierConfig&);
  nn::Mat<double> standardize(std::span<const double> features) const;

  nn::ParamSet<double> params_;
  nn::ParamSet<double> stats_;  // feature mean and inverse std, fixed after training
  int num_features_ = 0, hidden_ = 0, num_classes_ = 0;
  int w1_ = -1, b1_ = -1, w2_ = -1, b2_ = -1, w3_ = -1, b3_ = -1, mean_ = -1, scale_ = -1;
  bool trained_ = false;
};

struct ClassifierResult {
  NoiseClassifier classifier;
  double held_out_accuracy = 0.0;
  int train_count = 0;
  int held_out_count = 0;
};

/// Trains on a deterministic split of `data`; throws std::invalid_argument
/// if fewer than two classes are present or the split would share an
/// utterance (identical samples) between train and held-out parts.
ClassifierResult train_classifier(std::span<const LabeledWaveform> data, const ClassifierConfig& config);

/// Embedding of the classifier's last hidden layer. Throws
/// std::logic_error for an untrained classifier.
NoiseEncoding encode_latent(std::span<const double> noisy, const NoiseClassifier& classifier);

/// Predicted class as an encoding.
NoiseEncoding encode_predicted(std::span<const double> noisy, const NoiseClassifier& classifier);

}  // namespace diffse
