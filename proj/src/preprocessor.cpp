#include "diffse/preprocessor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "diffse/checkpoint.hpp"
#include "diffse/metrics.hpp"

namespace diffse {

using nn::Mat;

MelSpectrogram FixedTransform::apply(const MelSpectrogram& noisy) const {
  if (noisy.frames != mel_.frames || noisy.bands != mel_.bands) {
    throw std::invalid_argument(fmt::format("fixed Mel has {} frames, input has {}", mel_.frames, noisy.frames));
  }
  return mel_;
}

namespace {

template <typename S>
Mat<S> im2col(const Mat<S>& x, int frames, int bands) {
  const Eigen::Index in = x.rows();
  Mat<S> cols = Mat<S>::Zero(9 * in, Eigen::Index(frames) * bands);
  for (int f = 0; f < frames; ++f) {
    for (int b = 0; b < bands; ++b) {
      const Eigen::Index col = Eigen::Index(f) * bands + b;
      for (int kf = 0; kf < 3; ++kf) {
        const int sf = f + kf - 1;
        if (sf < 0 || sf >= frames) continue;
        for (int kb = 0; kb < 3; ++kb) {
          const int sb = b + kb - 1;
          if (sb < 0 || sb >= bands) continue;
          cols.block((kf * 3 + kb) * in, col, in, 1) = x.col(Eigen::Index(sf) * bands + sb);
        }
      }
    }
  }
  return cols;
}

template <typename S>
Mat<S> col2im(const Mat<S>& cols, Eigen::Index in, int frames, int bands) {
  Mat<S> x = Mat<S>::Zero(in, Eigen::Index(frames) * bands);
  for (int f = 0; f < frames; ++f) {
    for (int b = 0; b < bands; ++b) {
      const Eigen::Index col = Eigen::Index(f) * bands + b;
      for (int kf = 0; kf < 3; ++kf) {
        const int sf = f + kf - 1;
        if (sf < 0 || sf >= frames) continue;
        for (int kb = 0; kb < 3; ++kb) {
          const int sb = b + kb - 1;
          if (sb < 0 || sb >= bands) continue;
          x.col(Eigen::Index(sf) * bands + sb) += cols.block((kf * 3 + kb) * in, col, in, 1);
        }
      }
    }
  }
  return x;
}

}  // namespace

template <typename S>
Mat<S> conv2d3_forward(const Mat<S>& w, const Mat<S>& b, const Mat<S>& x, int frames, int bands) {
  if (x.cols() != Eigen::Index(frames) * bands || w.cols() != 9 * x.rows()) throw std::invalid_argument("conv2d shape mismatch");
  Mat<S> y(w.rows(), x.cols());
  y.noalias() = w * im2col(x, frames, bands);
  y.colwise() += b.col(0);
  return y;
}

template <typename S>
Mat<S> conv2d3_backward(const Mat<S>& w, const Mat<S>& x, const Mat<S>& dy, int frames, int bands, Mat<S>& dw,
                        Mat<S>& db) {
  dw.noalias() += dy * im2col(x, frames, bands).transpose();
  db.col(0) += dy.rowwise().sum();
  Mat<S> dcols(w.cols(), dy.cols());
  dcols.noalias() = w.transpose() * dy;
  return col2im(dcols, x.rows(), frames, bands);
}

template <typename S>
Mat<S> conv2d3_forward_reference(const Mat<S>& w, const Mat<S>& b, const Mat<S>& x, int frames, int bands) {
  const Eigen::Index in = x.rows();
  Mat<S> y(w.rows(), x.cols());
  for (Eigen::Index o = 0; o < w.rows(); ++o) {
    for (int f = 0; f < frames; ++f) {
      for (int bb = 0; bb < bands; ++bb) {
        S acc = b(o, 0);
        for (int kf = 0; kf < 3; ++kf) {
          for (int kb = 0; kb < 3; ++kb) {
            const int sf = f + kf - 1, sb = bb + kb - 1;
            if (sf < 0 || sf >= frames || sb < 0 || sb >= bands) continue;
            for (Eigen::Index c = 0; c < in; ++c) acc += w(o, (kf * 3 + kb) * in + c) * x(c, Eigen::Index(sf) * bands + sb);
          }
        }
        y(o, Eigen::Index(f) * bands + bb) = acc;
      }
    }
  }
  return y;
}

template Mat<float> conv2d3_forward(const Mat<float>&, const Mat<float>&, const Mat<float>&, int, int);
template Mat<double> conv2d3_forward(const Mat<double>&, const Mat<double>&, const Mat<double>&, int, int);
template Mat<float> conv2d3_backward(const Mat<float>&, const Mat<float>&, const Mat<float>&, int, int, Mat<float>&, Mat<float>&);
template Mat<double> conv2d3_backward(const Mat<double>&, const Mat<double>&, const Mat<double>&, int, int, Mat<double>&,
                                      Mat<double>&);
template Mat<float> conv2d3_forward_reference(const Mat<float>&, const Mat<float>&, const Mat<float>&, int, int);
template Mat<double> conv2d3_forward_reference(const Mat<double>&, const Mat<double>&, const Mat<double>&, int, int);

void EnhancerConfig::validate() const {
  if (layers < 2) throw std::invalid_argument(fmt::format("enhancer config: invalid layers = {}", layers));
  if (channels < 1) throw std::invalid_argument(fmt::format("enhancer config: invalid channels = {}", channels));
}

template <typename S>
MelEnhancerModel<S>::MelEnhancerModel(const EnhancerConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  for (int i = 0; i < config_.layers; ++i) {
    const int in = i == 0 ? 1 : config_.channels;
    const int out = i + 1 == config_.layers ? 1 : config_.channels;
    const int w = params_.add(fmt::format("conv{}.weight", i), out, 9 * in);
    params_.add(fmt::format("conv{}.bias", i), out, 1);
    if (i + 1 < config_.layers) nn::init_uniform(params_.value(w), 9 * in, rng);
  }
}

template <typename S>
Mat<S> MelEnhancerModel<S>::run(const Mat<S>& x, int frames, int bands, std::vector<Mat<S>>* pre,
                                std::vector<Mat<S>>* act) const {
  if (x.rows() != 1 || x.cols() != Eigen::Index(frames) * bands) throw std::invalid_argument("enhancer input shape mismatch");
  Mat<S> h = x;
  for (int i = 0; i < config_.layers; ++i) {
    if (act) act->push_back(h);
    Mat<S> z = conv2d3_forward<S>(params_.value(2 * i), params_.value(2 * i + 1), h, frames, bands);
    if (i + 1 == config_.layers) return x + z;
    h = nn::relu<S>(z);
    if (pre) pre->push_back(std::move(z));
  }
  return h;
}

template <typename S>
Mat<S> MelEnhancerModel<S>::forward(const Mat<S>& x, int frames, int bands) const {
  return run(x, frames, bands, nullptr, nullptr);
}

template <typename S>
double MelEnhancerModel<S>::accumulate_l1(const Mat<S>& x, const Mat<S>& target, int frames, int bands, double weight) {
  std::vector<Mat<S>> pre, act;
  const Mat<S> out = run(x, frames, bands, &pre, &act);
  const Mat<S> diff = out - target;
  const double loss = weight * double(diff.cwiseAbs().sum());
  Mat<S> d = diff.unaryExpr([weight](S v) { return v > S(0) ? S(weight) : (v < S(0) ? S(-weight) : S(0)); });
  for (int i = config_.layers - 1; i >= 0; --i) {
    if (i + 1 < config_.layers) d = nn::relu_backward<S>(d, pre[std::size_t(i)]);
    d = conv2d3_backward<S>(params_.value(2 * i), act[std::size_t(i)], d, frames, bands, params_.grad(2 * i),
                            params_.grad(2 * i + 1));
  }
  return loss;
}

template class MelEnhancerModel<float>;
template class MelEnhancerModel<double>;

namespace {

Mat<float> to_row(const MelSpectrogram& mel) {
  Mat<float> x(1, Eigen::Index(mel.values.size()));
  for (std::size_t i = 0; i < mel.values.size(); ++i) x(0, Eigen::Index(i)) = float(mel.values[i]);
  return x;
}

}  // namespace

MelSpectrogram MelEnhancer::apply(const MelSpectrogram& noisy) const {
  const Mat<float> out = model_.forward(to_row(noisy), noisy.frames, noisy.bands);
  MelSpectrogram mel(noisy.frames, noisy.bands);
  for (std::size_t i = 0; i < mel.values.size(); ++i) mel.values[i] = std::clamp(double(out(0, Eigen::Index(i))), 0.0, 1.0);
  return mel;
}

void save_enhancer(const std::filesystem::path& path, const MelEnhancerModel<float>& model) {
  Checkpoint ckpt;
  ckpt.set("model", "mel_enhancer");
  ckpt.set("layers", std::to_string(model.config().layers));
  ckpt.set("channels", std::to_string(model.config().channels));
  ckpt.set("seed", std::to_string(model.config().seed));
  store_params(model.params(), ckpt);
  write_checkpoint(path, ckpt);
}

MelEnhancerModel<float> load_enhancer(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.get("model") != "mel_enhancer") throw std::invalid_argument(fmt::format("{} is not an enhancer checkpoint", path.string()));
  EnhancerConfig config;
  config.layers = ckpt.get_int("layers");
  config.channels = ckpt.get_int("channels");
  config.seed = std::stoull(ckpt.get("seed"));
  MelEnhancerModel<float> model(config);
  restore_params(ckpt, model.params());
  return model;
}

void EnhancerTrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument(fmt::format("enhancer training: invalid lr = {}", lr));
  if (batch < 1) throw std::invalid_argument(fmt::format("enhancer training: invalid batch = {}", batch));
  if (steps < 0) throw std::invalid_argument(fmt::format("enhancer training: invalid steps = {}", steps));
  if (crop_frames < 1) throw std::invalid_argument(fmt::format("enhancer training: invalid crop_frames = {}", crop_frames));
  if (log_every < 1) throw std::invalid_argument(fmt::format("enhancer training: invalid log_every = {}", log_every));
}

TrainReport train_enhancer(MelEnhancerModel<float>& model, std::span<const MelPair> data, const EnhancerTrainConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train_enhancer: empty dataset");
  for (const auto& p : data) {
    if (!p.noisy || !p.clean || p.noisy->frames != p.clean->frames || p.noisy->bands != p.clean->bands) {
      throw std::invalid_argument("train_enhancer: noisy and clean Mels must be present with equal shapes");
    }
  }
  Rng rng(config.seed);
  nn::Adam<float> adam(model.params(), nn::AdamConfig{config.lr});
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  TrainReport report;
  double window = 0.0;
  int window_steps = 0;
  for (int step = 1; step <= config.steps; ++step) {
    model.params().zero_grad();
    double loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const MelPair& p = data[pick(rng)];
      const int count = std::min(config.crop_frames, p.noisy->frames);
      const int first = std::uniform_int_distribution<int>(0, p.noisy->frames - count)(rng);
      const MelSpectrogram noisy = p.noisy->crop(first, count), clean = p.clean->crop(first, count);
      const double weight = 1.0 / (double(config.batch) * double(noisy.values.size()));
      loss += model.accumulate_l1(to_row(noisy), to_row(clean), count, noisy.bands, weight);
    }
    if (!std::isfinite(loss)) throw TrainingDiverged(step, fmt::format("enhancer loss became non-finite at step {}", step));
    adam.step(model.params());
    window += loss;
    ++window_steps;
    if (step % config.log_every == 0 || step == config.steps) {
      report.curve.push_back({step, window / window_steps});
      window = 0.0;
      window_steps = 0;
    }
    report.steps_done = step;
  }
  return report;
}

double mel_distance(const MelSpectrogram& a, const MelSpectrogram& b) {
  if (a.frames != b.frames || a.bands != b.bands) throw std::invalid_argument("mel_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return a.values.empty() ? 0.0 : s / double(a.values.size());
}

VariantKind parse_variant(const std::string& name) {
  if (name == "coarse_and_refine" || name == "refine") return VariantKind::coarse_and_refine;
  if (name == "coarse_and_finetune" || name == "finetune") return VariantKind::coarse_and_finetune;
  if (name == "coarse_and_scratch" || name == "scratch") return VariantKind::coarse_and_scratch;
  throw std::invalid_argument(fmt::format("unknown pipeline variant '{}'", name));
}

std::string to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::coarse_and_refine: return "coarse_and_refine";
    case VariantKind::coarse_and_finetune: return "coarse_and_finetune";
    case VariantKind::coarse_and_scratch: return "coarse_and_scratch";
  }
  return "?";
}

MelSpectrogram network_mel(std::span<const double> x) { return normalize_mel(conditioning_mel(x)); }

std::vector<double> run_variant(const PipelineVariant& variant, std::span<const double> noisy,
                                const NoiseEncoding* encoding, const ScheduleTable& table,
                                const SamplerOptions& opts, std::uint64_t seed) {
  if (!variant.generator) throw std::invalid_argument(fmt::format("{}: generator checkpoint missing", to_string(variant.kind)));
  if (!variant.enhancer) throw std::invalid_argument(fmt::format("{}: enhancer checkpoint missing", to_string(variant.kind)));
  const MelSpectrogram enhanced = variant.enhancer->apply(network_mel(noisy));
  Condition cond{noisy, &enhanced, encoding};
  Rng rng(seed);
  return reverse_enhance(cond, *variant.generator, table, opts, rng).samples;
}

BoundReport bound_study(const Denoiser& generator, std::span<const BoundInput> inputs, const ScheduleTable& table,
                        const SamplerOptions& opts) {
  BoundReport report;
  report.rows.resize(inputs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(inputs.size()); ++i) {
    const BoundInput& in = inputs[std::size_t(i)];
    const MelSpectrogram clean_mel = network_mel(in.clean), noisy_mel = network_mel(in.noisy);
    Rng rng_upper(in.seed), rng_lower(in.seed);
    const auto upper = reverse_enhance({in.noisy, &clean_mel, in.encoding}, generator, table, opts, rng_upper).samples;
    const auto lower = reverse_enhance({in.noisy, &noisy_mel, in.encoding}, generator, table, opts, rng_lower).samples;
    BoundRow& row = report.rows[std::size_t(i)];
    row.id = in.id;
    row.snr_db = in.snr_db;
    row.upper_si_sdr = si_sdr(in.clean, upper);
    row.lower_si_sdr = si_sdr(in.clean, lower);
    row.upper_snr = snr_db(in.clean, upper);
    row.lower_snr = snr_db(in.clean, lower);
  }
  std::map<std::string, BoundSummary> groups;
  auto add = [&](const std::string& key, const BoundRow& r) {
    BoundSummary& s = groups[key];
    s.group = key;
    ++s.count;
    s.upper_si_sdr += r.upper_si_sdr;
    s.lower_si_sdr += r.lower_si_sdr;
    s.upper_snr += r.upper_snr;
    s.lower_snr += r.lower_snr;
  };
  for (const auto& r : report.rows) {
    add("all", r);
    add(fmt::format("snr={:g}", r.snr_db), r);
  }
  for (auto& [key, s] : groups) {
    s.upper_si_sdr /= s.count;
    s.lower_si_sdr /= s.count;
    s.upper_snr /= s.count;
    s.lower_snr /= s.count;
    report.summary.push_back(s);
  }
  return report;
}

void write_bound_csv(std::ostream& out, const BoundReport& report) {
  out << "group,id,snr_db,count,upper_si_sdr,lower_si_sdr,upper_snr,lower_snr\n";
  for (const auto& r : report.rows) {
    out << fmt::format("utterance,{},{:g},1,{:.6f},{:.6f},{:.6f},{:.6f}\n", r.id, r.snr_db, r.upper_si_sdr, r.lower_si_sdr,
                       r.upper_snr, r.lower_snr);
  }
  for (const auto& s : report.summary) {
    out << fmt::format("{},,,{},{:.6f},{:.6f},{:.6f},{:.6f}\n", s.group, s.count, s.upper_si_sdr, s.lower_si_sdr,
                       s.upper_snr, s.lower_snr);
  }
}

}  // namespace diffse
