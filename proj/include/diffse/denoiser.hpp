#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffse/conditioning.hpp"
#include "diffse/diffusion.hpp"
#include "diffse/dsp.hpp"
#include "diffse/nn.hpp"
#include "diffse/schedule.hpp"

namespace diffse {

struct DenoiserConfig {
  int blocks = 8;
  int channels = 32;
  int dilation_cycle = 4;    // dilation of block i is 2^(i % cycle)
  int embed_dim = 128;       // sinusoidal timestep embedding
  int embed_hidden = 128;    // width of the timestep perceptron
  int encoding_dim = 4;      // 0 disables the noise-encoding branch
  int encoding_hidden = 32;  // shared first projection of the encoding
  bool use_mel = true;
  bool use_noisy_input = true;  // feed y as a second input channel
  UpsampleMode upsample = UpsampleMode::repeat;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  static DenoiserConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

/// Conditioning inputs for one utterance as seen by the network.
template <typename S>
struct DenoiserInput {
  nn::Mat<S> x;         // 1 x L noisy state
  nn::Mat<S> y;         // 1 x L noisy waveform (used when use_noisy_input)
  nn::Mat<S> mel;       // 80 x F normalized Mel frames (used when use_mel)
  nn::Mat<S> encoding;  // encoding_dim x 1 (used when encoding_dim > 0)
  int t = 1;
};

/// Residual network of dilated gated blocks with per-block Mel, noise
/// encoding and timestep projections. Parameters live in one ParamSet.
template <typename S>
class DenoiserModel {
 public:
  DenoiserModel() = default;
  explicit DenoiserModel(const DenoiserConfig& config);

  const DenoiserConfig& config() const { return config_; }
  nn::ParamSet<S>& params() { return params_; }
  const nn::ParamSet<S>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  /// 1 x L prediction.
  nn::Mat<S> forward(const DenoiserInput<S>& in) const;

  /// Returns weight * sum((forward(in) - target)^2) and accumulates its
  /// parameter gradient into params().grad.
  double accumulate_sse(const DenoiserInput<S>& in, const nn::Mat<S>& target, double weight);

  /// Copies parameters from a model of another scalar type with the same config.
  template <typename T>
  void assign_from(const DenoiserModel<T>& other) {
    params_.assign_from(other.params());
  }

 private:
  struct Block {
    int dil_w, dil_b, step_w, step_b, mel_w, mel_b, enc_w, enc_b, out_w, out_b, dilation;
  };
  struct Cache;
  nn::Mat<S> run(const DenoiserInput<S>& in, Cache* cache) const;
  void check_input(const DenoiserInput<S>& in) const;

  DenoiserConfig config_;
  nn::ParamSet<S> params_;
  int in_w_ = -1, in_b_ = -1, e1_w_ = -1, e1_b_ = -1, e2_w_ = -1, e2_b_ = -1, enc_w_ = -1, enc_b_ = -1;
  int skip_w_ = -1, skip_b_ = -1, head_w_ = -1, head_b_ = -1;
  std::vector<Block> blocks_;
};

extern template class DenoiserModel<float>;
extern template class DenoiserModel<double>;

/// Builds the network input for one utterance. `mel` must already be
/// normalized (see normalize_mel).
template <typename S>
DenoiserInput<S> make_input(const DenoiserConfig& config, std::span<const double> x_t, std::span<const double> y,
                            const MelSpectrogram* mel, const NoiseEncoding* encoding, int t);

/// Trained float network behind the sampler interface. predict is const and
/// reentrant.
class NetworkDenoiser final : public Denoiser {
 public:
  explicit NetworkDenoiser(DenoiserModel<float> model) : model_(std::move(model)) {}
  void predict(std::span<const double> x_t, const Condition& cond, int t, std::span<double> out) const override;
  const DenoiserModel<float>& model() const { return model_; }

 private:
  DenoiserModel<float> model_;
};

/// `metadata` pairs (e.g. training stage) are stored alongside the
/// architecture keys and returned by denoiser_metadata.
void save_denoiser(const std::filesystem::path& path, const DenoiserModel<float>& model,
                   const std::vector<std::pair<std::string, std::string>>& metadata = {});
DenoiserModel<float> load_denoiser(const std::filesystem::path& path);
/// Value of a metadata key, or an empty string when absent.
std::string denoiser_metadata(const std::filesystem::path& path, const std::string& key);

// ---- training ----

/// One training utterance. `mel` is the normalized conditioning Mel fed to
/// the network (clean Mel for pre-training, degraded or enhanced Mel for
/// fine-tuning).
struct TrainExample {
  std::span<const double> x0;
  std::span<const double> y;
  const MelSpectrogram* mel = nullptr;
  const NoiseEncoding* encoding = nullptr;
};

struct TrainConfig {
  double lr = 2e-4;
  int batch = 16;
  int steps = 20000;
  int segment = 512;  // samples per training crop, a multiple of the hop
  int log_every = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossPoint {
  int step = 0;
  double loss = 0.0;  // mean over the steps since the previous point
};

struct TrainReport {
  std::vector<LossPoint> curve;
  int steps_done = 0;
};

/// Raised when the loss or the parameters become non-finite. The model has
/// already been rolled back to the last finite parameters.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Minimizes the mean squared error between the prediction and
/// combined_target with t ~ U{1..T} per crop. Single-threaded and
/// deterministic for a given seed.
TrainReport train_denoiser(DenoiserModel<float>& model, std::span<const TrainExample> data,
                           const ScheduleTable& table, const TrainConfig& config);

void write_loss_csv(std::ostream& out, const TrainReport& report);

}  // namespace diffse
