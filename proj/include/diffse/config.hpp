#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffse/conditioning.hpp"
#include "diffse/dataset.hpp"
#include "diffse/denoiser.hpp"
#include "diffse/diffusion.hpp"
#include "diffse/preprocessor.hpp"
#include "diffse/schedule.hpp"

namespace diffse {

/// Every tunable of a run. Loaded from JSON (comments allowed); every key
/// is optional, unknown keys are rejected.
struct RunConfig {
  struct Schedule {
    int num_steps = 50;
    double beta_start = 1e-4;
    double beta_end = 0.035;
    std::string kind = "task_adapted";  // task_adapted | vanilla
    int t0 = 5;
    double r = 0.1;
    std::string mode = "improved";  // none | original | improved
  } schedule;
  struct Enhance {
    std::uint64_t seed = 0;
    std::string variant;  // empty: plain sampler; else coarse_and_refine | coarse_and_finetune | coarse_and_scratch
  } enhance;
  struct Model {
    int blocks = 8;
    int channels = 32;
    int dilation_cycle = 4;
    int embed_dim = 128;
    int embed_hidden = 128;
    std::string encoding = "class";  // class | latent | none
    int num_classes = 4;
    int encoding_hidden = 32;
    bool use_mel = true;
    bool use_noisy_input = true;
    std::string upsample = "repeat";  // repeat | linear
    std::uint64_t seed = 0;
  } model;
  struct Data {
    std::string corpus_dir = "corpus";
    std::string listing;  // optional external triplet listing for gen-data
    std::uint64_t seed = 1234;
    int num_train = 400;
    int num_validation = 50;
    int num_test = 50;
    double duration_s = 1.0;
  } data;
  struct Train {
    double lr = 2e-4;
    int batch = 16;
    int steps = 20000;
    int segment = 512;
    int log_every = 100;
    std::uint64_t seed = 0;
    std::string condition = "clean";            // Mel condition for pretrain: clean | noisy | enhanced
    std::string finetune_condition = "noisy";   // noisy | enhanced
    int finetune_steps = 5000;
  } train;
  struct Classifier {
    int hidden = 64;
    double lr = 1e-3;
    int steps = 1500;
    int batch = 32;
    double held_out_fraction = 0.2;
    std::uint64_t seed = 7;
  } classifier;
  struct Enhancer {
    int layers = 4;
    int channels = 32;
    double lr = 1e-3;
    int steps = 1500;
    int batch = 8;
    int crop_frames = 24;
    std::uint64_t seed = 0;
  } enhancer;
  struct Checkpoints {
    std::string denoiser;
    std::string pretrained;
    std::string classifier;
    std::string enhancer;
  } checkpoints;
  struct Simulate {
    int num_utterances = 32;
    int num_samples = 1000;
    std::uint64_t seed = 99;
  } simulate;
  struct Eval {
    std::string enhanced_dir;
  } eval;
  struct Run {
    std::string out_dir = "run";
  } run;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  ScheduleConfig schedule_config() const;
  SamplerOptions sampler_options() const;
  DenoiserConfig denoiser_config() const;
  TrainConfig train_config() const;
  ClassifierConfig classifier_config() const;
  EnhancerConfig enhancer_config() const;
  EnhancerTrainConfig enhancer_train_config() const;
  CorpusConfig corpus_config() const;
};

/// Parses JSON text (with // and /* */ comments) over the defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value" overrides; values are parsed per field type.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);

/// Effective configuration as pretty-printed JSON (all keys, defaults resolved).
std::string config_to_json(const RunConfig& config);

/// All dotted keys accepted by the parser.
std::vector<std::string> config_keys();

}  // namespace diffse
