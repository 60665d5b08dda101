#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "diffse/conditioning.hpp"
#include "diffse/denoiser.hpp"
#include "diffse/diffusion.hpp"
#include "diffse/dsp.hpp"
#include "diffse/nn.hpp"

namespace diffse {

/// Maps a normalized noisy Mel to a normalized Mel of the same shape.
class MelTransform {
 public:
  virtual ~MelTransform() = default;
  virtual MelSpectrogram apply(const MelSpectrogram& noisy) const = 0;
};

class IdentityTransform final : public MelTransform {
 public:
  MelSpectrogram apply(const MelSpectrogram& noisy) const override { return noisy; }
};

/// Returns a fixed Mel regardless of the input (the clean Mel in oracle runs).
class FixedTransform final : public MelTransform {
 public:
  explicit FixedTransform(MelSpectrogram mel) : mel_(std::move(mel)) {}
  MelSpectrogram apply(const MelSpectrogram& noisy) const override;

 private:
  MelSpectrogram mel_;
};

// ---- 2-D convolution over (frame, band), kernel 3x3, zero padding ----
// Activations are channels x (frames * bands) with column f * bands + b.
// Weight layout: out x (9 * in), column (kf * 3 + kb) * in + c.

template <typename S>
nn::Mat<S> conv2d3_forward(const nn::Mat<S>& w, const nn::Mat<S>& b, const nn::Mat<S>& x, int frames, int bands);
template <typename S>
nn::Mat<S> conv2d3_backward(const nn::Mat<S>& w, const nn::Mat<S>& x, const nn::Mat<S>& dy, int frames, int bands,
                            nn::Mat<S>& dw, nn::Mat<S>& db);
template <typename S>
nn::Mat<S> conv2d3_forward_reference(const nn::Mat<S>& w, const nn::Mat<S>& b, const nn::Mat<S>& x, int frames,
                                     int bands);

struct EnhancerConfig {
  int layers = 4;
  int channels = 32;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Residual convolutional Mel regressor: out = in + f(in), the last layer
/// zero-initialized so an untrained enhancer is the identity.
template <typename S>
class MelEnhancerModel {
 public:
  MelEnhancerModel() = default;
  explicit MelEnhancerModel(const EnhancerConfig& config);

  const EnhancerConfig& config() const { return config_; }
  nn::ParamSet<S>& params() { return params_; }
  const nn::ParamSet<S>& params() const { return params_; }

  /// x: 1 x (frames * bands).
  nn::Mat<S> forward(const nn::Mat<S>& x, int frames, int bands) const;
  /// Returns weight * sum |forward(x) - target| and accumulates the gradient.
  double accumulate_l1(const nn::Mat<S>& x, const nn::Mat<S>& target, int frames, int bands, double weight);

 private:
  nn::Mat<S> run(const nn::Mat<S>& x, int frames, int bands, std::vector<nn::Mat<S>>* pre,
                 std::vector<nn::Mat<S>>* act) const;

  EnhancerConfig config_;
  nn::ParamSet<S> params_;
};

extern template class MelEnhancerModel<float>;
extern template class MelEnhancerModel<double>;

class MelEnhancer final : public MelTransform {
 public:
  explicit MelEnhancer(MelEnhancerModel<float> model) : model_(std::move(model)) {}
  MelSpectrogram apply(const MelSpectrogram& noisy) const override;
  const MelEnhancerModel<float>& model() const { return model_; }
  MelEnhancerModel<float>& model() { return model_; }

 private:
  MelEnhancerModel<float> model_;
};

void save_enhancer(const std::filesystem::path& path, const MelEnhancerModel<float>& model);
MelEnhancerModel<float> load_enhancer(const std::filesystem::path& path);

/// Paired normalized Mels of one utterance.
struct MelPair {
  const MelSpectrogram* noisy = nullptr;
  const MelSpectrogram* clean = nullptr;
};

struct EnhancerTrainConfig {
  double lr = 1e-3;
  int batch = 8;
  int steps = 1500;
  int crop_frames = 24;
  int log_every = 100;
  std::uint64_t seed = 0;
  void validate() const;
};

/// Minimizes the mean absolute error between the enhanced and clean Mel on
/// random frame crops. Throws TrainingDiverged on a non-finite loss.
TrainReport train_enhancer(MelEnhancerModel<float>& model, std::span<const MelPair> data,
                           const EnhancerTrainConfig& config);

/// Mean absolute difference between two Mels of equal shape.
double mel_distance(const MelSpectrogram& a, const MelSpectrogram& b);

// ---- conditioner pipelines ----

enum class VariantKind { coarse_and_refine, coarse_and_finetune, coarse_and_scratch };

VariantKind parse_variant(const std::string& name);
std::string to_string(VariantKind kind);

/// refine: generator trained on clean Mels; finetune: generator pre-trained
/// on clean Mels then fine-tuned on enhanced Mels; scratch: generator
/// trained on enhanced Mels only.
struct PipelineVariant {
  VariantKind kind = VariantKind::coarse_and_refine;
  const Denoiser* generator = nullptr;
  const MelTransform* enhancer = nullptr;
};

/// Enhances the Mel of `noisy`, then runs the sampler conditioned on it.
/// Throws std::invalid_argument when the generator or enhancer is missing.
std::vector<double> run_variant(const PipelineVariant& variant, std::span<const double> noisy,
                                const NoiseEncoding* encoding, const ScheduleTable& table,
                                const SamplerOptions& opts, std::uint64_t seed);

/// Normalized conditioning Mel of a waveform.
MelSpectrogram network_mel(std::span<const double> x);

// ---- bound study ----

struct BoundInput {
  std::string id;
  std::span<const double> clean;
  std::span<const double> noisy;
  const NoiseEncoding* encoding = nullptr;
  double snr_db = 0.0;
  std::uint64_t seed = 0;
};

struct BoundRow {
  std::string id;
  double snr_db = 0.0;
  double upper_si_sdr = 0.0, lower_si_sdr = 0.0;
  double upper_snr = 0.0, lower_snr = 0.0;
};

struct BoundSummary {
  std::string group;  // "all" or "snr=<value>"
  int count = 0;
  double upper_si_sdr = 0.0, lower_si_sdr = 0.0;
  double upper_snr = 0.0, lower_snr = 0.0;
};

struct BoundReport {
  std::vector<BoundRow> rows;
  std::vector<BoundSummary> summary;
};

/// Runs inference twice per utterance, conditioned on the clean Mel (upper)
/// and on the noisy Mel (lower), with the same sampler seed.
BoundReport bound_study(const Denoiser& generator, std::span<const BoundInput> inputs, const ScheduleTable& table,
                        const SamplerOptions& opts);

void write_bound_csv(std::ostream& out, const BoundReport& report);

}  // namespace diffse
