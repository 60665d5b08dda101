// diffse command line: corpus generation, training, enhancement, studies
// and evaluation. Exit codes: 0 success, 1 invalid input or config,
// 2 runtime failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "diffse/config.hpp"
#include "diffse/conditioning.hpp"
#include "diffse/dataset.hpp"
#include "diffse/denoiser.hpp"
#include "diffse/diffusion.hpp"
#include "diffse/metrics.hpp"
#include "diffse/preprocessor.hpp"
#include "diffse/schedule.hpp"

namespace fs = std::filesystem;
using namespace diffse;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

/// Output directory plus the list of files written into it.
class Run {
 public:
  Run(RunConfig config, const std::string& out_override) : config_(std::move(config)) {
    if (!out_override.empty()) config_.run.out_dir = out_override;
    config_.validate();
    dir_ = config_.run.out_dir;
    fs::create_directories(dir_);
  }

  const RunConfig& config() const { return config_; }
  const fs::path& dir() const { return dir_; }

  fs::path file(const std::string& rel) {
    const fs::path p = dir_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    produced_.push_back(rel);
    return p;
  }

  void write_text(const std::string& rel, const std::string& text) {
    std::ofstream out(file(rel), std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", (dir_ / rel).string()));
  }

  /// Writes the effective config and the produced-files manifest.
  void finish() {
    write_text("config.json", config_to_json(config_));
    std::sort(produced_.begin(), produced_.end());
    produced_.erase(std::unique(produced_.begin(), produced_.end()), produced_.end());
    std::string text = "path,bytes,fnv1a64\n";
    for (const auto& rel : produced_) {
      std::ifstream in(dir_ / rel, std::ios::binary);
      std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::uint64_t h = 1469598103934665603ULL;
      for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ULL;
      text += fmt::format("{},{},{:016x}\n", rel, bytes.size(), h);
    }
    std::ofstream out(dir_ / "files.csv", std::ios::binary);
    out << text;
  }

 private:
  RunConfig config_;
  fs::path dir_;
  std::vector<std::string> produced_;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig config = args.config.empty() ? RunConfig{} : load_config(args.config);
  apply_overrides(config, args.overrides);
  return config;
}

Manifest corpus_manifest(const RunConfig& config) {
  const fs::path path = fs::path(config.data.corpus_dir) / "manifest.csv";
  if (!fs::exists(path)) {
    throw std::invalid_argument(fmt::format("data.corpus_dir: no manifest at {} (run gen-data first)", path.string()));
  }
  return read_manifest(path);
}

std::string require_path(const std::string& value, const char* key) {
  if (value.empty()) throw std::invalid_argument(fmt::format("config key '{}' must name a checkpoint", key));
  if (!fs::exists(value)) throw std::invalid_argument(fmt::format("config key '{}': {} does not exist", key, value));
  return value;
}

ScheduleTable build_table(const RunConfig& config) { return ScheduleTable::build(config.schedule_config()); }

/// Noise encodings for a set of utterances under the configured scheme.
std::vector<std::optional<NoiseEncoding>> make_encodings(const RunConfig& config, const std::vector<Utterance>& utts,
                                                         bool predicted_labels) {
  std::vector<std::optional<NoiseEncoding>> out(utts.size());
  if (config.model.encoding == "none") return out;
  std::optional<NoiseClassifier> classifier;
  if (config.model.encoding == "latent" || predicted_labels) {
    classifier = NoiseClassifier::load(require_path(config.checkpoints.classifier, "checkpoints.classifier"));
  }
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(utts.size()); ++i) {
    const Utterance& u = utts[std::size_t(i)];
    if (config.model.encoding == "latent") {
      out[std::size_t(i)] = encode_latent(u.noisy.view(), *classifier);
    } else if (predicted_labels) {
      out[std::size_t(i)] = encode_predicted(u.noisy.view(), *classifier);
    } else {
      out[std::size_t(i)] = encode_class(u.noise_class, config.model.num_classes);
    }
  }
  return out;
}

std::vector<MelSpectrogram> condition_mels(const std::vector<Utterance>& utts, const std::string& condition,
                                           const MelTransform* enhancer) {
  std::vector<MelSpectrogram> mels(utts.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(utts.size()); ++i) {
    const Utterance& u = utts[std::size_t(i)];
    if (condition == "clean") mels[std::size_t(i)] = network_mel(u.clean.view());
    else if (condition == "noisy") mels[std::size_t(i)] = network_mel(u.noisy.view());
    else mels[std::size_t(i)] = enhancer->apply(network_mel(u.noisy.view()));
  }
  return mels;
}

// ---- subcommands ----

void cmd_gen_data(Run& run) {
  const RunConfig& c = run.config();
  Manifest manifest;
  if (!c.data.listing.empty()) {
    manifest = import_triplets(c.data.listing);
    std::ofstream out(run.file("manifest.csv"));
    write_manifest(out, manifest);
  } else {
    manifest = build_corpus(c.corpus_config(), run.dir());
    for (const auto& r : manifest.records) {
      run.file(r.clean_path);
      run.file(r.noisy_path);
    }
    run.file("manifest.csv");
  }
  fmt::print("{} utterances -> {}\n", manifest.records.size(), (run.dir() / "manifest.csv").string());
}

void cmd_train_denoiser(Run& run, const std::string& stage) {
  const RunConfig& c = run.config();
  const Manifest manifest = corpus_manifest(c);
  const auto utts = load_split(manifest, Split::train);
  const ScheduleTable table = build_table(c);

  const std::string condition = stage == "pretrain" ? c.train.condition : c.train.finetune_condition;
  std::optional<MelEnhancer> enhancer;
  if (condition == "enhanced") enhancer.emplace(load_enhancer(require_path(c.checkpoints.enhancer, "checkpoints.enhancer")));
  const auto mels = condition_mels(utts, condition, enhancer ? &*enhancer : nullptr);
  const auto encodings = make_encodings(c, utts, false);

  DenoiserModel<float> model;
  TrainConfig tc = c.train_config();
  if (stage == "finetune") {
    model = load_denoiser(require_path(c.checkpoints.pretrained, "checkpoints.pretrained"));
    tc.steps = c.train.finetune_steps;
  } else {
    model = DenoiserModel<float>(c.denoiser_config());
  }
  std::vector<TrainExample> data;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    data.push_back({utts[i].clean.view(), utts[i].noisy.view(), c.model.use_mel ? &mels[i] : nullptr,
                    encodings[i] ? &*encodings[i] : nullptr});
  }
  fmt::print("training denoiser ({}, {} Mel, {} parameters, {} steps)\n", stage, condition, model.parameter_count(), tc.steps);

  const std::vector<std::pair<std::string, std::string>> meta = {{"stage", stage}, {"condition", condition}};
  TrainReport report;
  try {
    report = train_denoiser(model, data, table, tc);
  } catch (const TrainingDiverged& e) {
    save_denoiser(run.file("denoiser_last_good.ckpt"), model, meta);
    run.finish();
    throw;
  }
  save_denoiser(run.file("denoiser.ckpt"), model, meta);
  std::ofstream loss(run.file("loss.csv"));
  write_loss_csv(loss, report);
  if (!report.curve.empty()) fmt::print("final loss {:.6g}\n", report.curve.back().loss);
}

void cmd_train_classifier(Run& run) {
  const RunConfig& c = run.config();
  const Manifest manifest = corpus_manifest(c);
  const auto utts = load_split(manifest, Split::train);
  std::vector<LabeledWaveform> data;
  for (const auto& u : utts) data.push_back({u.noisy.view(), u.noise_class});
  const ClassifierResult result = train_classifier(data, c.classifier_config());
  result.classifier.save(run.file("classifier.ckpt"));
  run.write_text("classifier.csv", fmt::format("train_count,held_out_count,held_out_accuracy\n{},{},{:.6f}\n",
                                               result.train_count, result.held_out_count, result.held_out_accuracy));
  fmt::print("held-out accuracy {:.4f} ({} utterances)\n", result.held_out_accuracy, result.held_out_count);
}

void cmd_train_enhancer(Run& run) {
  const RunConfig& c = run.config();
  const Manifest manifest = corpus_manifest(c);
  const auto train = load_split(manifest, Split::train);
  const auto clean = condition_mels(train, "clean", nullptr);
  const auto noisy = condition_mels(train, "noisy", nullptr);
  std::vector<MelPair> pairs;
  for (std::size_t i = 0; i < train.size(); ++i) pairs.push_back({&noisy[i], &clean[i]});
  MelEnhancerModel<float> model(c.enhancer_config());
  const TrainReport report = train_enhancer(model, pairs, c.enhancer_train_config());
  save_enhancer(run.file("enhancer.ckpt"), model);
  std::ofstream loss(run.file("enhancer_loss.csv"));
  write_loss_csv(loss, report);

  const auto held = load_split(manifest, Split::validation);
  if (!held.empty()) {
    const MelEnhancer enhancer(model);
    double before = 0.0, after = 0.0;
    for (const auto& u : held) {
      const MelSpectrogram n = network_mel(u.noisy.view()), cl = network_mel(u.clean.view());
      before += mel_distance(n, cl);
      after += mel_distance(enhancer.apply(n), cl);
    }
    before /= double(held.size());
    after /= double(held.size());
    run.write_text("enhancer.csv", fmt::format("split,noisy_l1,enhanced_l1\nvalidation,{:.6f},{:.6f}\n", before, after));
    fmt::print("validation Mel L1: noisy {:.4f}, enhanced {:.4f}\n", before, after);
  }
}

void check_variant(const RunConfig& c, VariantKind kind) {
  const std::string stage = denoiser_metadata(c.checkpoints.denoiser, "stage");
  const std::string condition = denoiser_metadata(c.checkpoints.denoiser, "condition");
  bool ok = true;
  if (kind == VariantKind::coarse_and_refine) ok = stage == "pretrain" && condition == "clean";
  if (kind == VariantKind::coarse_and_finetune) ok = stage == "finetune";
  if (kind == VariantKind::coarse_and_scratch) ok = stage == "pretrain" && condition == "enhanced";
  if (!ok) {
    throw std::invalid_argument(fmt::format("checkpoints.denoiser was trained as stage={} condition={}, which does not match {}",
                                            stage, condition, to_string(kind)));
  }
}

void cmd_enhance(Run& run, const std::string& input, const std::string& labels) {
  const RunConfig& c = run.config();
  const ScheduleTable table = build_table(c);
  const SamplerOptions opts = c.sampler_options();
  const NetworkDenoiser denoiser(load_denoiser(require_path(c.checkpoints.denoiser, "checkpoints.denoiser")));
  std::optional<MelEnhancer> enhancer;
  if (!c.enhance.variant.empty()) {
    check_variant(c, parse_variant(c.enhance.variant));
    enhancer.emplace(load_enhancer(require_path(c.checkpoints.enhancer, "checkpoints.enhancer")));
  }

  std::vector<Utterance> utts;
  bool single = false;
  if (!input.empty()) {
    Utterance u;
    u.id = fs::path(input).stem().string();
    u.noisy = read_wav(input);
    u.clean = u.noisy;
    utts.push_back(std::move(u));
    single = true;
  } else {
    utts = load_split(corpus_manifest(c), Split::test);
  }
  const bool predicted = single || labels == "predicted";
  const auto encodings = make_encodings(c, utts, predicted);
  const auto mels = condition_mels(utts, enhancer ? "enhanced" : "noisy", enhancer ? &*enhancer : nullptr);

  std::vector<EnhanceJob> jobs;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    jobs.push_back({utts[i].noisy.view(), &mels[i], encodings[i] ? &*encodings[i] : nullptr, derive_seed(c.enhance.seed, i)});
  }
  const auto results = reverse_enhance_batch(jobs, denoiser, table, opts);
  for (std::size_t i = 0; i < utts.size(); ++i) {
    Waveform w;
    w.samples = results[i].samples;
    write_wav(run.file(single ? "enhanced.wav" : fmt::format("enhanced/{}.wav", utts[i].id)), w);
  }
  fmt::print("enhanced {} utterance(s), mode {}\n", utts.size(), to_string(opts.mode));
}

constexpr int kDriftFrames = 62;

void cmd_simulate_forward(Run& run) {
  const RunConfig& c = run.config();
  ScheduleConfig sc = c.schedule_config();
  sc.kind = ProcessKind::task_adapted;
  const ScheduleTable table = ScheduleTable::build(sc);
  auto utts = load_split(corpus_manifest(c), Split::test);
  if (int(utts.size()) > c.simulate.num_utterances) utts.resize(std::size_t(c.simulate.num_utterances));
  auto clean = condition_mels(utts, "clean", nullptr);
  auto noisy = condition_mels(utts, "noisy", nullptr);
  int frames = kDriftFrames;
  for (const auto& m : clean) frames = std::min(frames, m.frames);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    clean[i] = clean[i].crop(0, frames);
    noisy[i] = noisy[i].crop(0, frames);
  }
  const auto rows = forward_drift_stats(clean, noisy, table, c.simulate.num_samples, c.simulate.seed);
  std::ofstream out(run.file("drift.csv"));
  write_drift_csv(out, rows);
}

void cmd_eval(Run& run, const std::string& enhanced) {
  const RunConfig& c = run.config();
  const std::string dir = enhanced.empty() ? c.eval.enhanced_dir : enhanced;
  if (dir.empty()) throw std::invalid_argument("config key 'eval.enhanced_dir' must name the enhanced directory");
  const EvalReport report = evaluate_corpus(corpus_manifest(c), dir);
  std::ofstream out(run.file("report.csv"));
  write_report_csv(out, report);
  const auto& all = report.summaries.front();
  fmt::print("{} utterances: SI-SDR {:.3f} dB (delta {:+.3f}), SNR {:.3f} dB, Mel L1 {:.4f}\n", all.count, all.si_sdr,
             all.delta_si_sdr, all.snr, all.mel_l1);
}

void cmd_bound_study(Run& run) {
  const RunConfig& c = run.config();
  const ScheduleTable table = build_table(c);
  const NetworkDenoiser denoiser(load_denoiser(require_path(c.checkpoints.denoiser, "checkpoints.denoiser")));
  const auto utts = load_split(corpus_manifest(c), Split::test);
  const auto encodings = make_encodings(c, utts, false);
  std::vector<BoundInput> inputs;
  for (std::size_t i = 0; i < utts.size(); ++i) {
    inputs.push_back({utts[i].id, utts[i].clean.view(), utts[i].noisy.view(), encodings[i] ? &*encodings[i] : nullptr,
                      utts[i].snr_db, derive_seed(c.enhance.seed, i)});
  }
  const BoundReport report = bound_study(denoiser, inputs, table, c.sampler_options());
  std::ofstream out(run.file("bound.csv"));
  write_bound_csv(out, report);
}

void cmd_schedule(Run& run) {
  const ScheduleTable table = build_table(run.config());
  std::ofstream out(run.file("schedule.csv"));
  table.write_csv(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional diffusion speech enhancement toolkit"};
  app.require_subcommand(1);
  CommonArgs common;
  std::string stage = "pretrain", input, labels = "truth", enhanced, mode, variant;
  std::optional<double> r;
  std::optional<int> t0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", common.config, "JSON run config (comments allowed)");
    sub->add_option("--set", common.overrides, "Override a config key, e.g. --set train.steps=100");
    sub->add_option("-o,--out", common.out, "Output directory (overrides run.out_dir)");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus or import WAV triplets");
  auto* train = app.add_subcommand("train-denoiser", "Train the denoiser");
  train->add_option("--stage", stage, "pretrain or finetune")->check(CLI::IsMember({"pretrain", "finetune"}));
  auto* cls = app.add_subcommand("train-classifier", "Train the noise classifier");
  auto* enh = app.add_subcommand("train-enhancer", "Train the Mel enhancer");
  auto* run_enh = app.add_subcommand("enhance", "Enhance a WAV file or the corpus test split");
  run_enh->add_option("--input", input, "Single noisy WAV (default: corpus test split)");
  run_enh->add_option("--mode", mode, "none, original or improved");
  run_enh->add_option("--r", r, "Interpolation ratio");
  run_enh->add_option("--t0", t0, "Anchor window length");
  run_enh->add_option("--variant", variant, "coarse_and_refine, coarse_and_finetune or coarse_and_scratch");
  run_enh->add_option("--labels", labels, "Noise labels for class encodings: truth or predicted")
      ->check(CLI::IsMember({"truth", "predicted"}));
  auto* sim = app.add_subcommand("simulate-forward", "Forward drift statistics");
  auto* ev = app.add_subcommand("eval", "Score enhanced test files");
  ev->add_option("--enhanced", enhanced, "Directory of enhanced WAVs (overrides eval.enhanced_dir)");
  auto* bound = app.add_subcommand("bound-study", "Clean- vs noisy-Mel conditioned inference");
  auto* sched = app.add_subcommand("schedule", "Dump the schedule table");
  for (auto* sub : {gen, train, cls, enh, run_enh, sim, ev, bound, sched}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig config = resolve_config(common);
    if (!mode.empty()) config.schedule.mode = mode;
    if (r) config.schedule.r = *r;
    if (t0) config.schedule.t0 = *t0;
    if (!variant.empty()) config.enhance.variant = variant;
    Run run(config, common.out);

    if (*gen) cmd_gen_data(run);
    else if (*train) cmd_train_denoiser(run, stage);
    else if (*cls) cmd_train_classifier(run);
    else if (*enh) cmd_train_enhancer(run);
    else if (*run_enh) cmd_enhance(run, input, labels);
    else if (*sim) cmd_simulate_forward(run);
    else if (*ev) cmd_eval(run, enhanced);
    else if (*bound) cmd_bound_study(run);
    else if (*sched) cmd_schedule(run);
    run.finish();
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
