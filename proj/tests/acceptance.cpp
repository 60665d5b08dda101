// Acceptance suite: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Trained models are written to the work
// directory; --reuse loads them instead of retraining (development only).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "diffse/conditioning.hpp"
#include "diffse/dataset.hpp"
#include "diffse/denoiser.hpp"
#include "diffse/diffusion.hpp"
#include "diffse/metrics.hpp"
#include "diffse/preprocessor.hpp"
#include "diffse/schedule.hpp"
#include "gradcheck.hpp"

namespace fs = std::filesystem;
using namespace diffse;

namespace {

// ---- budgets ----
constexpr int kMainSteps = 20000;
constexpr int kAblationSteps = 20000;
constexpr int kCleanSteps = 20000;
constexpr double kLearningRate = 1e-3;
constexpr int kTestUtterances = 24;
constexpr std::uint64_t kModelSeed = 0;
constexpr std::uint64_t kTrainSeed = 0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path cli;
  fs::path work;
  bool reuse = false;
  std::set<int> only;
};

double mean(const std::vector<double>& v) { return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

// ---- shared corpus and models ----

class Assets {
 public:
  explicit Assets(const Options& opts) : opts_(opts), table_(ScheduleTable::build(ScheduleConfig{})) {
    fs::create_directories(opts_.work);
  }

  const ScheduleTable& table() const { return table_; }

  const std::vector<Utterance>& train() {
    load_corpus();
    return train_;
  }
  const std::vector<Utterance>& test() {
    load_corpus();
    return test_;
  }
  const std::vector<NoiseEncoding>& test_truth() {
    load_corpus();
    return test_truth_;
  }
  const std::vector<MelSpectrogram>& test_noisy_mel() {
    load_corpus();
    return test_noisy_mel_;
  }
  const std::vector<MelSpectrogram>& test_clean_mel() {
    load_corpus();
    return test_clean_mel_;
  }

  /// Trains (or reloads) a denoiser with the given architecture switches.
  const NetworkDenoiser& denoiser(const std::string& name, bool use_mel, bool use_encoding, bool clean_condition,
                                  int steps, double* train_seconds = nullptr) {
    if (auto it = models_.find(name); it != models_.end()) return *it->second;
    load_corpus();
    const fs::path path = opts_.work / (name + ".ckpt");
    DenoiserConfig dc;
    dc.use_mel = use_mel;
    dc.encoding_dim = use_encoding ? kNumNoiseClasses : 0;
    dc.seed = kModelSeed;
    DenoiserModel<float> model(dc);
    if (opts_.reuse && fs::exists(path)) {
      model = load_denoiser(path);
      fmt::print("  reusing {}\n", path.string());
      if (train_seconds) *train_seconds = std::nan("");
    } else {
      const auto& mels = clean_condition ? train_clean_mel_ : train_noisy_mel_;
      std::vector<TrainExample> data;
      for (std::size_t i = 0; i < train_.size(); ++i) {
        data.push_back({train_[i].clean.view(), train_[i].noisy.view(), use_mel ? &mels[i] : nullptr,
                        use_encoding ? &train_truth_[i] : nullptr});
      }
      TrainConfig tc;
      tc.lr = kLearningRate;
      tc.steps = steps;
      tc.log_every = 1000;
      tc.seed = kTrainSeed;
      fmt::print("  training {} ({} steps, {} parameters)\n", name, steps, model.parameter_count());
      std::cout.flush();
      const auto start = Clock::now();
      const TrainReport report = train_denoiser(model, data, table_, tc);
      if (train_seconds) *train_seconds = seconds_since(start);
      fmt::print("  {} trained in {:.0f} s, final loss {:.5f}\n", name, seconds_since(start), report.curve.back().loss);
      save_denoiser(path, model, {{"stage", "pretrain"}, {"condition", clean_condition ? "clean" : "noisy"}});
      std::ofstream loss(opts_.work / (name + "_loss.csv"));
      write_loss_csv(loss, report);
    }
    auto [it, _] = models_.emplace(name, std::make_unique<NetworkDenoiser>(std::move(model)));
    return *it->second;
  }

  const NetworkDenoiser& main_model(double* train_seconds = nullptr) {
    return denoiser("main", true, true, false, kMainSteps, train_seconds);
  }

  const ClassifierResult& classifier() {
    if (classifier_) return *classifier_;
    load_corpus();
    std::vector<LabeledWaveform> data;
    for (const auto& u : train_) data.push_back({u.noisy.view(), u.noise_class});
    classifier_ = train_classifier(data, ClassifierConfig{});
    return *classifier_;
  }

  const MelEnhancer& enhancer() {
    if (enhancer_) return *enhancer_;
    load_corpus();
    const fs::path path = opts_.work / "enhancer.ckpt";
    if (opts_.reuse && fs::exists(path)) {
      enhancer_.emplace(load_enhancer(path));
    } else {
      std::vector<MelPair> pairs;
      for (std::size_t i = 0; i < train_.size(); ++i) pairs.push_back({&train_noisy_mel_[i], &train_clean_mel_[i]});
      MelEnhancerModel<float> model{EnhancerConfig{}};
      train_enhancer(model, pairs, EnhancerTrainConfig{});
      save_enhancer(path, model);
      enhancer_.emplace(std::move(model));
    }
    return *enhancer_;
  }

  /// Mean SI-SDR over the test subset for a sampler run.
  /// Results are cached under `tag`, which must identify the model and the conditioning inputs.
  double mean_si_sdr(const std::string& tag, const Denoiser& d, const SamplerOptions& opts, std::uint64_t seed,
                     const std::vector<MelSpectrogram>* mels, const std::vector<NoiseEncoding>* encs) {
    const std::string key = fmt::format("{}/{}/{}/{}/{}", tag, to_string(opts.mode), opts.r, opts.t0, seed);
    if (auto it = scores_.find(key); it != scores_.end()) return it->second;
    load_corpus();
    std::vector<EnhanceJob> jobs;
    for (std::size_t i = 0; i < test_.size(); ++i) {
      jobs.push_back({test_[i].noisy.view(), mels ? &(*mels)[i] : nullptr, encs ? &(*encs)[i] : nullptr,
                      derive_seed(seed, i)});
    }
    const auto results = reverse_enhance_batch(jobs, d, table_, opts);
    std::vector<double> scores;
    for (std::size_t i = 0; i < test_.size(); ++i) scores.push_back(si_sdr(test_[i].clean.view(), results[i].samples));
    return scores_[key] = mean(scores);
  }

  double unprocessed_si_sdr() {
    load_corpus();
    std::vector<double> scores;
    for (const auto& u : test_) scores.push_back(si_sdr(u.clean.view(), u.noisy.view()));
    return mean(scores);
  }

 private:
  void load_corpus() {
    if (loaded_) return;
    CorpusConfig cc;
    cc.num_test = kTestUtterances;
    train_ = generate_split(cc, Split::train);
    test_ = generate_split(cc, Split::test);
    for (const auto& u : train_) {
      train_noisy_mel_.push_back(network_mel(u.noisy.view()));
      train_clean_mel_.push_back(network_mel(u.clean.view()));
      train_truth_.push_back(encode_class(u.noise_class, kNumNoiseClasses));
    }
    for (const auto& u : test_) {
      test_noisy_mel_.push_back(network_mel(u.noisy.view()));
      test_clean_mel_.push_back(network_mel(u.clean.view()));
      test_truth_.push_back(encode_class(u.noise_class, kNumNoiseClasses));
    }
    loaded_ = true;
  }

  Options opts_;
  ScheduleTable table_;
  bool loaded_ = false;
  std::vector<Utterance> train_, test_;
  std::vector<MelSpectrogram> train_noisy_mel_, train_clean_mel_, test_noisy_mel_, test_clean_mel_;
  std::vector<NoiseEncoding> train_truth_, test_truth_;
  std::map<std::string, std::unique_ptr<NetworkDenoiser>> models_;
  std::optional<ClassifierResult> classifier_;
  std::optional<MelEnhancer> enhancer_;
  std::map<std::string, double> scores_;
};

SamplerOptions sampler(SamplingMode mode, double r, int t0 = 5) {
  SamplerOptions o;
  o.mode = mode;
  o.r = r;
  o.t0 = t0;
  return o;
}

// ---- criteria ----

double rel_err(long double got, long double want) {
  return double(std::abs(got - want) / std::max(std::abs(want), 1e-300L));
}

Outcome c1_schedule(Assets&) {
  const auto start = Clock::now();
  const ScheduleTable table = ScheduleTable::build(ScheduleConfig{});
  // Independent long-double marginals.
  const int T = 50;
  std::vector<long double> ab(T + 1, 1.0L), m(T + 1, 0.0L), delta(T + 1, 0.0L);
  for (int t = 1; t <= T; ++t) {
    const long double beta = 1e-4L + (0.035L - 1e-4L) * (t - 1) / (T - 1);
    ab[t] = ab[t - 1] * (1.0L - beta);
    m[t] = std::sqrt((1.0L - ab[t]) / std::sqrt(ab[t]));
    delta[t] = 1.0L - (1.0L + m[t] * m[t]) * ab[t];
  }
  double worst_chain = 0.0, worst_post = 0.0;
  for (int t = 1; t <= T; ++t) {
    const auto& tr = table.transition(t);
    worst_chain = std::max(worst_chain, rel_err(tr.a * table.mean_x0(t - 1), table.mean_x0(t)));
    worst_chain = std::max(worst_chain, rel_err(tr.a * table.mean_y(t - 1) + tr.b, table.mean_y(t)));
    worst_chain = std::max(worst_chain, rel_err(tr.a * tr.a * table.delta_bar(t - 1) + tr.var, table.delta_bar(t)));
    worst_chain = std::max(worst_chain, rel_err(table.delta_bar(t), delta[t]));
    if (t < 2) continue;
    const long double alpha = ab[t] / ab[t - 1];
    const long double a = std::sqrt(alpha) * (1 - m[t]) / (1 - m[t - 1]);
    for (double x0 : {0.37, -0.5}) {
      const double y = -0.81, offset = 0.23;
      const long double mu_prev = std::sqrt(ab[t - 1]) * ((1 - m[t - 1]) * x0 + m[t - 1] * y);
      const long double mu_t = std::sqrt(ab[t]) * ((1 - m[t]) * x0 + m[t] * y);
      const long double x_t = mu_t + offset;
      const long double want_mean = mu_prev + a * delta[t - 1] / delta[t] * (x_t - mu_t);
      const long double want_var = delta[t - 1] - a * a * delta[t - 1] * delta[t - 1] / delta[t];
      const double eps_hat = double(x_t - std::sqrt(ab[t]) * x0) / table.normalizer(t);
      const auto& c = table.reverse(t);
      worst_post = std::max(worst_post, rel_err(c.c_xt * double(x_t) + c.c_yt * y + c.c_eps * eps_hat, want_mean));
      worst_post = std::max(worst_post, rel_err(c.posterior_var, want_var));
    }
  }
  const double elapsed = seconds_since(start);
  const bool pass = worst_chain < 1e-10 && worst_post < 1e-10 && elapsed < 1.0;
  return {1, "schedule algebra", pass,
          fmt::format("max chain rel err {:.2e}, max posterior rel err {:.2e}, {:.3f} s", worst_chain, worst_post, elapsed)};
}

Outcome c2_anneal(Assets&) {
  const std::vector<double> want{0.1, 0.08, 0.06, 0.04, 0.02};
  const auto got = anneal_ratios(5, 0.1);
  return {2, "annealed interpolation ratios", got == want,
          fmt::format("[{}]", fmt::join(got, ", "))};
}

Outcome c3_oracle(Assets& assets) {
  const auto start = Clock::now();
  CorpusConfig cc;
  cc.num_test = 10;
  const auto utts = generate_split(cc, Split::test);
  double worst = kMetricCapDb;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    OracleDenoiser oracle(utts[i].clean.samples, assets.table());
    Rng rng(derive_seed(77, i));
    const auto res = reverse_enhance(Condition{utts[i].noisy.view()}, oracle, assets.table(),
                                     sampler(SamplingMode::none, 0.0), rng);
    worst = std::min(worst, si_sdr(utts[i].clean.view(), res.samples));
  }
  const double elapsed = seconds_since(start);
  return {3, "oracle closure", worst >= 40.0 && elapsed < 30.0,
          fmt::format("min SI-SDR {:.2f} dB over {} utterances, {:.2f} s", worst, utts.size(), elapsed)};
}

Outcome c4_forward_mc(Assets& assets) {
  const auto start = Clock::now();
  const int n = 100000;
  const double x0 = 0.4, y = -0.7;
  const std::vector<double> xs(std::size_t(n), x0), ys(std::size_t(n), y);
  Rng rng(4242);
  double worst = 0.0;  // largest deviation in units of the standard error
  for (int t = 1; t <= assets.table().num_steps(); ++t) {
    const auto s = forward_sample(xs, ys, t, assets.table(), rng);
    const double m = std::accumulate(s.begin(), s.end(), 0.0) / n;
    double var = 0.0;
    for (double v : s) var += (v - m) * (v - m);
    var /= n - 1;
    const double want_mean = std::sqrt(assets.table().alpha_bar(t)) *
                             ((1 - assets.table().m(t)) * x0 + assets.table().m(t) * y);
    const double want_var = assets.table().delta_bar(t);
    worst = std::max(worst, std::abs(m - want_mean) / std::sqrt(want_var / n));
    worst = std::max(worst, std::abs(var - want_var) / (want_var * std::sqrt(2.0 / (n - 1))));
  }
  const double elapsed = seconds_since(start);
  return {4, "forward marginal Monte-Carlo", worst < 4.0 && elapsed < 60.0,
          fmt::format("max deviation {:.2f} sigma over 50 steps (n=1e5), {:.2f} s", worst, elapsed)};
}

Outcome c5_gradients(Assets&) {
  const auto start = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t largest = 0;
  int tensors = 0;
  auto note = [&](const std::vector<testing::TensorCheck>& checks) {
    for (const auto& c : checks) {
      ++tensors;
      if (c.rel_error > worst) worst = c.rel_error, worst_name = c.name;
    }
  };
  auto randomize = [](auto& params, std::uint64_t seed, double scale) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& t : params.tensors())
      for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = u(rng);
  };
  auto noise = [](std::size_t n, std::uint64_t seed, double sd) {
    Rng rng(seed);
    std::vector<double> v(n);
    fill_normal(rng, v);
    for (double& x : v) x *= sd;
    return v;
  };

  for (UpsampleMode up : {UpsampleMode::repeat, UpsampleMode::linear}) {
    DenoiserConfig cfg;
    cfg.blocks = 4;  // dilations 1, 2, 4, 8
    cfg.channels = 4;
    cfg.embed_dim = 8;
    cfg.embed_hidden = 8;
    cfg.encoding_hidden = 4;
    cfg.upsample = up;
    DenoiserModel<double> model(cfg);
    randomize(model.params(), 31, 0.5);
    largest = std::max(largest, model.parameter_count());
    const auto x = noise(768, 1, 0.3), y = noise(768, 2, 0.3), target = noise(768, 3, 1.0);
    MelSpectrogram mel(3, kMelBands);
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : mel.values) v = u(rng);
    const auto enc = encode_class(1, 4);
    const auto in = make_input<double>(cfg, x, y, &mel, &enc, 17);
    nn::Mat<double> tgt(1, 768);
    for (int j = 0; j < 768; ++j) tgt(0, j) = target[std::size_t(j)];
    model.params().zero_grad();
    model.accumulate_sse(in, tgt, 1.0 / 768);
    note(testing::finite_difference_check(model.params(), testing::snapshot_grads(model.params()),
                                          [&] { return (model.forward(in) - tgt).squaredNorm() / 768; }));
  }
  {
    EnhancerConfig cfg;
    cfg.layers = 3;
    cfg.channels = 8;
    MelEnhancerModel<double> model(cfg);
    randomize(model.params(), 5, 0.3);
    largest = std::max(largest, model.params().count());
    const int frames = 4, bands = 12;
    nn::Mat<double> x(1, frames * bands), target(1, frames * bands);
    Rng rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index k = 0; k < x.size(); ++k) x(0, k) = u(rng), target(0, k) = u(rng) + 2.0;
    model.params().zero_grad();
    model.accumulate_l1(x, target, frames, bands, 1.0);
    note(testing::finite_difference_check(model.params(), testing::snapshot_grads(model.params()), [&] {
      return (model.forward(x, frames, bands) - target).cwiseAbs().sum();
    }));
  }
  const double elapsed = seconds_since(start);
  return {5, "gradient correctness", worst < 1e-4 && largest <= 10000 && elapsed < 120.0,
          fmt::format("{} tensors, worst rel err {:.2e} ({}), largest instance {} parameters, {:.1f} s", tensors, worst,
                      worst_name, largest, elapsed)};
}

Outcome c6_end_to_end(Assets& assets) {
  double train_seconds = 0.0;
  const auto& model = assets.main_model(&train_seconds);
  const auto start = Clock::now();
  const double enhanced = assets.mean_si_sdr("main", model, sampler(SamplingMode::improved, 0.1), 0,
                                             &assets.test_noisy_mel(), &assets.test_truth());
  const double infer_seconds = seconds_since(start);
  const double base = assets.unprocessed_si_sdr();
  const double gain = enhanced - base;
  const double total = train_seconds + infer_seconds;
  const bool timed = std::isnan(train_seconds) || total <= 1800.0;
  return {6, "end-to-end enhancement", gain >= 3.0 && timed,
          fmt::format("SI-SDR {:.2f} dB vs unprocessed {:.2f} dB (gain {:+.2f} dB, need +3), train {:.0f} s + "
                      "inference {:.0f} s",
                      enhanced, base, gain, train_seconds, infer_seconds)};
}

Outcome c7_ablation(Assets& assets) {
  // Ablation protocol: the original interpolation with 20% noisy signal added at the end,
  // x0 <- 0.8 * x0 + 0.2 * y in the sampler's parametrization.
  const auto opts = sampler(SamplingMode::original, 0.8);
  // The full model doubles as the mel+encoding row: same architecture, seed and budget.
  static_assert(kAblationSteps == kMainSteps);
  const auto& both = assets.main_model();
  const auto& mel = assets.denoiser("ablation_mel", true, false, false, kAblationSteps);
  const auto& none = assets.denoiser("ablation_none", false, false, false, kAblationSteps);
  const double s_both = assets.mean_si_sdr("main", both, opts, 0, &assets.test_noisy_mel(), &assets.test_truth());
  const double s_mel = assets.mean_si_sdr("ablation_mel", mel, opts, 0, &assets.test_noisy_mel(), nullptr);
  const double s_none = assets.mean_si_sdr("ablation_none", none, opts, 0, nullptr, nullptr);
  return {7, "conditioning ablation ordering", s_both >= s_mel && s_mel >= s_none,
          fmt::format("mel+encoding {:.2f} dB, mel only {:.2f} dB, none {:.2f} dB", s_both, s_mel, s_none)};
}

Outcome c8_modes(Assets& assets) {
  const auto& model = assets.main_model();
  std::vector<double> improved, original, none;
  for (std::uint64_t seed : {0, 1, 2}) {
    improved.push_back(assets.mean_si_sdr("main", model, sampler(SamplingMode::improved, 0.1), seed, &assets.test_noisy_mel(),
                                          &assets.test_truth()));
    original.push_back(assets.mean_si_sdr("main", model, sampler(SamplingMode::original, 0.2), seed, &assets.test_noisy_mel(),
                                          &assets.test_truth()));
    none.push_back(assets.mean_si_sdr("main", model, sampler(SamplingMode::none, 0.0), seed, &assets.test_noisy_mel(),
                                      &assets.test_truth()));
  }
  const double i = mean(improved), o = mean(original), n = mean(none);
  return {8, "sampler mode ordering", i >= o && o >= n,
          fmt::format("improved {:.2f} dB, original {:.2f} dB, none {:.2f} dB (3 seeds)", i, o, n)};
}

const NetworkDenoiser& clean_generator(Assets& assets) {
  return assets.denoiser("clean_mel", true, true, true, kCleanSteps);
}

Outcome c9_bounds(Assets& assets) {
  const auto& gen = clean_generator(assets);
  const auto& test = assets.test();
  bool pass = true;
  std::vector<std::string> parts;
  for (std::uint64_t seed : {0, 1, 2}) {
    std::vector<BoundInput> inputs;
    for (std::size_t i = 0; i < test.size(); ++i) {
      inputs.push_back({test[i].id, test[i].clean.view(), test[i].noisy.view(), &assets.test_truth()[i], test[i].snr_db,
                        derive_seed(seed, i)});
    }
    const BoundReport report = bound_study(gen, inputs, assets.table(), sampler(SamplingMode::improved, 0.1));
    const auto& all = report.summary.front();
    pass = pass && all.upper_si_sdr >= all.lower_si_sdr;
    parts.push_back(fmt::format("seed {}: clean {:.2f} / noisy {:.2f}", seed, all.upper_si_sdr, all.lower_si_sdr));
  }
  return {9, "bound study", pass, fmt::format("{}", fmt::join(parts, "; "))};
}

Outcome c10_variants(Assets& assets) {
  const auto& gen = clean_generator(assets);
  const auto& enh = assets.enhancer();
  const IdentityTransform identity;
  const auto& test = assets.test();
  auto score = [&](auto make_transform) {
    std::vector<double> s(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto transform = make_transform(i);
      const PipelineVariant v{VariantKind::coarse_and_refine, &gen, transform.get()};
      const auto out = run_variant(v, test[i].noisy.view(), &assets.test_truth()[i], assets.table(),
                                   sampler(SamplingMode::improved, 0.1), derive_seed(0, i));
      s[i] = si_sdr(test[i].clean.view(), out);
    }
    return mean(s);
  };
  struct Borrowed : MelTransform {
    const MelTransform* inner;
    explicit Borrowed(const MelTransform* t) : inner(t) {}
    MelSpectrogram apply(const MelSpectrogram& m) const override { return inner->apply(m); }
  };
  const double oracle = score([&](std::size_t i) -> std::unique_ptr<MelTransform> {
    return std::make_unique<FixedTransform>(assets.test_clean_mel()[i]);
  });
  const double trained = score([&](std::size_t) -> std::unique_ptr<MelTransform> { return std::make_unique<Borrowed>(&enh); });
  const double ident = score([&](std::size_t) -> std::unique_ptr<MelTransform> { return std::make_unique<Borrowed>(&identity); });
  return {10, "refine variant ordering", oracle >= trained && trained >= ident,
          fmt::format("oracle enhancer {:.2f} dB, trained enhancer {:.2f} dB, identity {:.2f} dB", oracle, trained, ident)};
}

Outcome c11_classifier(Assets& assets) {
  const auto& result = assets.classifier();
  const auto& model = assets.main_model();
  std::vector<NoiseEncoding> predicted;
  for (const auto& u : assets.test()) predicted.push_back(encode_predicted(u.noisy.view(), result.classifier));
  int correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i].class_index == assets.test()[i].noise_class;
  const auto opts = sampler(SamplingMode::improved, 0.1);
  const double truth = assets.mean_si_sdr("main", model, opts, 0, &assets.test_noisy_mel(), &assets.test_truth());
  const double pred = assets.mean_si_sdr("main_predicted", model, opts, 0, &assets.test_noisy_mel(), &predicted);
  const bool pass = result.held_out_accuracy >= 0.9 && std::abs(truth - pred) <= 0.5;
  return {11, "noise classifier", pass,
          fmt::format("held-out accuracy {:.1f}% ({} utterances), test accuracy {}/{}, SI-SDR truth {:.2f} dB vs "
                      "predicted {:.2f} dB",
                      100 * result.held_out_accuracy, result.held_out_count, correct, predicted.size(), truth, pred)};
}

Outcome c12_drift(Assets& assets) {
  const auto start = Clock::now();
  std::vector<MelSpectrogram> clean, noisy;
  for (std::size_t i = 0; i < assets.test().size(); ++i) {
    clean.push_back(assets.test_clean_mel()[i].crop(0, 62));
    noisy.push_back(assets.test_noisy_mel()[i].crop(0, 62));
  }
  const auto rows = forward_drift_stats(clean, noisy, assets.table(), 1000, 2024);
  std::vector<double> to_noisy;
  double van_clean = 0.0, van_noisy = 0.0;
  const int T = assets.table().num_steps();
  for (const auto& r : rows) {
    if (r.process == ProcessFamily::task_adapted) to_noisy.push_back(r.dist_to_noisy_centroid);
    if (r.process == ProcessFamily::vanilla && r.t == T) van_clean = r.dist_to_clean_centroid, van_noisy = r.dist_to_noisy_centroid;
  }
  bool decreasing = true;
  for (std::size_t k = 1; k < to_noisy.size(); ++k) decreasing = decreasing && to_noisy[k] < to_noisy[k - 1];
  const double gap = std::abs(van_clean - van_noisy) / std::max(van_clean, van_noisy);
  const double elapsed = seconds_since(start);
  return {12, "forward drift study", decreasing && gap <= 0.05 && elapsed < 120.0,
          fmt::format("task-adapted distance to noisy centroid {} ({:.2f} -> {:.2f}), vanilla t=T clean/noisy gap "
                      "{:.2f}%, {:.1f} s",
                      decreasing ? "strictly decreasing" : "NOT strictly decreasing", to_noisy.front(), to_noisy.back(),
                      100 * gap, elapsed)};
}

// ---- criterion 13: CLI determinism ----

int run_command(const std::string& cmd, const fs::path& log) {
  const int status = std::system((cmd + " > " + log.string() + " 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = s.str();
  }
  return files;
}

Outcome c13_determinism(Assets&, const Options& opts) {
  const fs::path root = opts.work / "cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string corpus = (root / "corpus").string();
  const std::string common = fmt::format(
      "--set data.corpus_dir={} --set data.num_train=8 --set data.num_validation=4 --set data.num_test=4 "
      "--set data.duration_s=0.5 --set model.blocks=2 --set model.channels=8 --set train.steps=20 --set train.batch=2 "
      "--set train.finetune_steps=10 --set classifier.steps=20 --set enhancer.steps=20 --set enhancer.channels=8 "
      "--set simulate.num_samples=16",
      corpus);
  const std::string ck = fmt::format(
      " --set checkpoints.denoiser={0}/pretrain/denoiser.ckpt --set checkpoints.pretrained={0}/pretrain/denoiser.ckpt "
      "--set checkpoints.classifier={0}/classifier/classifier.ckpt --set checkpoints.enhancer={0}/enhancer/enhancer.ckpt",
      root.string());
  struct Step {
    std::string name, args;
  };
  const std::vector<Step> steps = {
      {"corpus", "gen-data " + common},
      {"schedule", "schedule " + common},
      {"pretrain", "train-denoiser --stage pretrain " + common},
      {"classifier", "train-classifier " + common},
      {"enhancer", "train-enhancer " + common + ck},
      {"finetune", "train-denoiser --stage finetune --set train.finetune_condition=enhanced " + common + ck},
      {"enhance", "enhance " + common + ck},
      {"enhance_predicted", "enhance --labels predicted --mode original --r 0.2 " + common + ck},
      {"enhance_refine", "enhance --variant coarse_and_refine " + common + ck},
      {"simulate", "simulate-forward " + common},
      {"eval", "eval --enhanced " + (root / "enhance" / "enhanced").string() + " " + common},
      {"bound", "bound-study " + common + ck},
  };
  std::vector<std::string> bad;
  for (const auto& step : steps) {
    const fs::path out = root / step.name;
    std::map<std::string, std::string> first;
    for (int pass = 0; pass < 2; ++pass) {
      if (pass == 1) {
        first = snapshot(out);
        fs::remove_all(out);
      }
      const std::string cmd = fmt::format("{} {} -o {}", opts.cli.string(), step.args, out.string());
      const int code = run_command(cmd, root / (step.name + (pass ? ".2.log" : ".1.log")));
      if (code != 0) {
        bad.push_back(fmt::format("{} exited {}", step.name, code));
        break;
      }
    }
    if (!fs::exists(out)) continue;
    const auto second = snapshot(out);
    if (first.empty() || first != second) bad.push_back(step.name + " differs");
  }
  return {13, "CLI determinism", bad.empty(),
          bad.empty() ? fmt::format("{} subcommand runs reproduced byte-identical outputs", steps.size())
                      : fmt::format("{}", fmt::join(bad, "; "))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  Options opts;
  std::vector<int> only;
  app.add_option("--cli", opts.cli, "Path of the diffse executable")->required();
  app.add_option("--work", opts.work, "Work directory")->required();
  app.add_flag("--reuse", opts.reuse, "Reuse trained models found in the work directory");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  opts.only.insert(only.begin(), only.end());

  Assets assets(opts);
  const std::vector<std::pair<int, std::function<Outcome(Assets&)>>> criteria = {
      {1, c1_schedule},  {2, c2_anneal},        {3, c3_oracle},      {4, c4_forward_mc},
      {5, c5_gradients}, {12, c12_drift},       {6, c6_end_to_end},  {8, c8_modes},
      {11, c11_classifier}, {7, c7_ablation},   {9, c9_bounds},      {10, c10_variants},
      {13, [&](Assets& a) { return c13_determinism(a, opts); }},
  };
  std::vector<Outcome> outcomes;
  for (const auto& [id, fn] : criteria) {
    if (!opts.only.empty() && !opts.only.count(id)) continue;
    fmt::print("criterion {} ...\n", id);
    std::cout.flush();
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn(assets);
    } catch (const std::exception& e) {
      o = {id, "error", false, e.what()};
    }
    fmt::print("{} C{:<2} {}: {} [{:.0f} s]\n", o.pass ? "PASS" : "FAIL", o.id, o.name, o.detail, seconds_since(start));
    std::cout.flush();
    outcomes.push_back(o);
  }
  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  fmt::print("\nsummary\n");
  int failed = 0;
  for (const auto& o : outcomes) {
    fmt::print("{} C{:<2} {}: {}\n", o.pass ? "PASS" : "FAIL", o.id, o.name, o.detail);
    failed += !o.pass;
  }
  fmt::print("{} of {} criteria passed\n", outcomes.size() - std::size_t(failed), outcomes.size());
  return failed == 0 ? 0 : 1;
}
