#include "diffse/denoiser.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "diffse/checkpoint.hpp"

namespace diffse {

using nn::Mat;

void DenoiserConfig::validate() const {
  auto require = [](bool ok, const char* key, int value) {
    if (!ok) throw std::invalid_argument(fmt::format("denoiser config: invalid {} = {}", key, value));
  };
  require(blocks >= 1, "blocks", blocks);
  require(channels >= 1, "channels", channels);
  require(dilation_cycle >= 1 && dilation_cycle <= 16, "dilation_cycle", dilation_cycle);
  require(embed_dim >= 2 && embed_dim % 2 == 0, "embed_dim", embed_dim);
  require(embed_hidden >= 1, "embed_hidden", embed_hidden);
  require(encoding_dim >= 0, "encoding_dim", encoding_dim);
  require(encoding_hidden >= 1, "encoding_hidden", encoding_hidden);
}

std::vector<std::pair<std::string, std::string>> DenoiserConfig::to_pairs() const {
  return {{"blocks", std::to_string(blocks)},
          {"channels", std::to_string(channels)},
          {"dilation_cycle", std::to_string(dilation_cycle)},
          {"embed_dim", std::to_string(embed_dim)},
          {"embed_hidden", std::to_string(embed_hidden)},
          {"encoding_dim", std::to_string(encoding_dim)},
          {"encoding_hidden", std::to_string(encoding_hidden)},
          {"use_mel", use_mel ? "1" : "0"},
          {"use_noisy_input", use_noisy_input ? "1" : "0"},
          {"upsample", upsample == UpsampleMode::repeat ? "repeat" : "linear"},
          {"seed", std::to_string(seed)}};
}

DenoiserConfig DenoiserConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  DenoiserConfig c;
  for (const auto& [k, v] : pairs) {
    if (k == "blocks") c.blocks = std::stoi(v);
    else if (k == "channels") c.channels = std::stoi(v);
    else if (k == "dilation_cycle") c.dilation_cycle = std::stoi(v);
    else if (k == "embed_dim") c.embed_dim = std::stoi(v);
    else if (k == "embed_hidden") c.embed_hidden = std::stoi(v);
    else if (k == "encoding_dim") c.encoding_dim = std::stoi(v);
    else if (k == "encoding_hidden") c.encoding_hidden = std::stoi(v);
    else if (k == "use_mel") c.use_mel = v == "1";
    else if (k == "use_noisy_input") c.use_noisy_input = v == "1";
    else if (k == "upsample") c.upsample = v == "linear" ? UpsampleMode::linear : UpsampleMode::repeat;
    else if (k == "seed") c.seed = std::stoull(v);
  }
  c.validate();
  return c;
}

namespace {

/// Consecutive samples that read the same Mel frame; weight > 0 only for
/// single-sample runs of linear upsampling.
struct TapRun {
  Eigen::Index begin = 0, count = 0;
  int lo = 0, hi = 0;
  double weight = 0.0;
};

std::vector<TapRun> tap_runs(int frames, Eigen::Index len, UpsampleMode mode) {
  std::vector<TapRun> runs;
  for (Eigen::Index j = 0; j < len; ++j) {
    const UpsampleTap tap = upsample_tap(frames, std::size_t(j), mode);
    if (tap.weight == 0.0 && !runs.empty() && runs.back().weight == 0.0 && runs.back().lo == tap.lo) {
      ++runs.back().count;
    } else {
      runs.push_back({j, 1, tap.lo, tap.hi, tap.weight});
    }
  }
  return runs;
}

}  // namespace

template <typename S>
struct DenoiserModel<S>::Cache {
  Mat<S> xin, h0_pre, e0, z1, a1, z2, ev, u;
  std::vector<Mat<S>> hin, sg, th, gate;
  Mat<S> skip, q_pre, q;
};

template <typename S>
DenoiserModel<S>::DenoiserModel(const DenoiserConfig& config) : config_(config) {
  config_.validate();
  const int C = config_.channels;
  const int in_ch = config_.use_noisy_input ? 2 : 1;
  Rng rng(config_.seed);

  in_w_ = params_.add("input.weight", C, in_ch);
  in_b_ = params_.add("input.bias", C, 1);
  e1_w_ = params_.add("step_mlp.0.weight", config_.embed_hidden, config_.embed_dim);
  e1_b_ = params_.add("step_mlp.0.bias", config_.embed_hidden, 1);
  e2_w_ = params_.add("step_mlp.1.weight", config_.embed_hidden, config_.embed_hidden);
  e2_b_ = params_.add("step_mlp.1.bias", config_.embed_hidden, 1);
  nn::init_uniform(params_.value(in_w_), in_ch, rng);
  nn::init_uniform(params_.value(e1_w_), config_.embed_dim, rng);
  nn::init_uniform(params_.value(e2_w_), config_.embed_hidden, rng);
  if (config_.encoding_dim > 0) {
    enc_w_ = params_.add("encoding.weight", config_.encoding_hidden, config_.encoding_dim);
    enc_b_ = params_.add("encoding.bias", config_.encoding_hidden, 1);
    nn::init_uniform(params_.value(enc_w_), config_.encoding_dim, rng);
  }

  for (int i = 0; i < config_.blocks; ++i) {
    Block b{};
    const std::string p = fmt::format("block{}.", i);
    b.dilation = 1 << (i % config_.dilation_cycle);
    b.step_w = params_.add(p + "step.weight", C, config_.embed_hidden);
    b.step_b = params_.add(p + "step.bias", C, 1);
    b.dil_w = params_.add(p + "conv.weight", 2 * C, 3 * C);
    b.dil_b = params_.add(p + "conv.bias", 2 * C, 1);
    nn::init_uniform(params_.value(b.step_w), config_.embed_hidden, rng);
    nn::init_uniform(params_.value(b.dil_w), 3 * C, rng);
    b.mel_w = b.mel_b = b.enc_w = b.enc_b = -1;
    if (config_.use_mel) {
      b.mel_w = params_.add(p + "mel.weight", 2 * C, kMelBands);
      b.mel_b = params_.add(p + "mel.bias", 2 * C, 1);
      nn::init_uniform(params_.value(b.mel_w), kMelBands, rng);
    }
    if (config_.encoding_dim > 0) {
      b.enc_w = params_.add(p + "encoding.weight", 2 * C, config_.encoding_hidden);
      b.enc_b = params_.add(p + "encoding.bias", 2 * C, 1);
      nn::init_uniform(params_.value(b.enc_w), config_.encoding_hidden, rng);
    }
    b.out_w = params_.add(p + "out.weight", 2 * C, C);
    b.out_b = params_.add(p + "out.bias", 2 * C, 1);
    nn::init_uniform(params_.value(b.out_w), C, rng);
    blocks_.push_back(b);
  }
  skip_w_ = params_.add("skip.weight", C, C);
  skip_b_ = params_.add("skip.bias", C, 1);
  nn::init_uniform(params_.value(skip_w_), C, rng);
  head_w_ = params_.add("head.weight", 1, C);  // zero-initialized
  head_b_ = params_.add("head.bias", 1, 1);
}

template <typename S>
void DenoiserModel<S>::check_input(const DenoiserInput<S>& in) const {
  const Eigen::Index len = in.x.cols();
  if (in.x.rows() != 1 || len < 1) throw std::invalid_argument("denoiser input must be a non-empty 1 x L row");
  if (config_.use_noisy_input && (in.y.rows() != 1 || in.y.cols() != len)) {
    throw std::invalid_argument(fmt::format("noisy input has {} samples, state has {}", in.y.cols(), len));
  }
  if (config_.use_mel) {
    if (in.mel.rows() != kMelBands || in.mel.cols() < 1) throw std::invalid_argument("Mel condition must be 80 x F");
    if ((in.mel.cols() + 1) * kHop < len) {
      throw std::invalid_argument(fmt::format("{} Mel frames do not cover {} samples", in.mel.cols(), len));
    }
  }
  if (config_.encoding_dim > 0 && (in.encoding.rows() != config_.encoding_dim || in.encoding.cols() != 1)) {
    throw std::invalid_argument(
        fmt::format("noise encoding has dimension {}, model expects {}", in.encoding.rows(), config_.encoding_dim));
  }
  if (in.t < 1) throw std::invalid_argument("timestep must be >= 1");
}

template <typename S>
Mat<S> DenoiserModel<S>::run(const DenoiserInput<S>& in, Cache* cache) const {
  check_input(in);
  const int C = config_.channels;
  const Eigen::Index len = in.x.cols();
  const auto& P = params_;

  Mat<S> xin(config_.use_noisy_input ? 2 : 1, len);
  xin.row(0) = in.x.row(0);
  if (config_.use_noisy_input) xin.row(1) = in.y.row(0);
  Mat<S> h0_pre = nn::affine<S>(P.value(in_w_), P.value(in_b_), xin);
  Mat<S> h = nn::relu<S>(h0_pre);

  const Mat<S> e0 = nn::timestep_embedding<S>(in.t, config_.embed_dim);
  const Mat<S> z1 = nn::affine<S>(P.value(e1_w_), P.value(e1_b_), e0);
  const Mat<S> a1 = nn::silu<S>(z1);
  const Mat<S> z2 = nn::affine<S>(P.value(e2_w_), P.value(e2_b_), a1);
  const Mat<S> ev = nn::silu<S>(z2);
  Mat<S> u;
  if (config_.encoding_dim > 0) u = nn::affine<S>(P.value(enc_w_), P.value(enc_b_), in.encoding);

  if (cache) {
    cache->xin = xin;
    cache->h0_pre = h0_pre;
    cache->e0 = e0;
    cache->z1 = z1;
    cache->a1 = a1;
    cache->z2 = z2;
    cache->ev = ev;
    cache->u = u;
    cache->hin.clear();
    cache->sg.clear();
    cache->th.clear();
    cache->gate.clear();
  }

  Mat<S> skip = Mat<S>::Zero(C, len);
  const S inv_sqrt2 = S(1.0 / std::sqrt(2.0));
  const auto runs = config_.use_mel ? tap_runs(int(in.mel.cols()), len, config_.upsample) : std::vector<TapRun>{};
  for (const Block& b : blocks_) {
    Mat<S> hin = h;
    hin.colwise() += nn::affine<S>(P.value(b.step_w), P.value(b.step_b), ev).col(0);
    Mat<S> c = nn::conv3_forward<S>(P.value(b.dil_w), P.value(b.dil_b), hin, b.dilation);
    if (config_.use_mel) {
      const Mat<S> proj = nn::affine<S>(P.value(b.mel_w), P.value(b.mel_b), in.mel);
      for (const TapRun& r : runs) {
        if (r.weight == 0.0) {
          c.middleCols(r.begin, r.count).colwise() += proj.col(r.lo);
        } else {
          c.col(r.begin) += S(1.0 - r.weight) * proj.col(r.lo) + S(r.weight) * proj.col(r.hi);
        }
      }
    }
    if (config_.encoding_dim > 0) c.colwise() += nn::affine<S>(P.value(b.enc_w), P.value(b.enc_b), u).col(0);
    const Mat<S> sg = nn::sigmoid<S>(c.topRows(C));
    const Mat<S> th = nn::tanh<S>(c.bottomRows(C));
    const Mat<S> gate = sg.cwiseProduct(th);
    const Mat<S> o = nn::affine<S>(P.value(b.out_w), P.value(b.out_b), gate);
    if (cache) {
      cache->hin.push_back(std::move(hin));
      cache->sg.push_back(sg);
      cache->th.push_back(th);
      cache->gate.push_back(gate);
    }
    h = (h + o.topRows(C)) * inv_sqrt2;
    skip += o.bottomRows(C);
  }
  skip *= S(1.0 / std::sqrt(double(config_.blocks)));
  const Mat<S> q_pre = nn::affine<S>(P.value(skip_w_), P.value(skip_b_), skip);
  const Mat<S> q = nn::relu<S>(q_pre);
  if (cache) {
    cache->skip = skip;
    cache->q_pre = q_pre;
    cache->q = q;
  }
  return nn::affine<S>(P.value(head_w_), P.value(head_b_), q);
}

template <typename S>
Mat<S> DenoiserModel<S>::forward(const DenoiserInput<S>& in) const {
  return run(in, nullptr);
}

template <typename S>
double DenoiserModel<S>::accumulate_sse(const DenoiserInput<S>& in, const Mat<S>& target, double weight) {
  Cache cache;
  const Mat<S> out = run(in, &cache);
  if (target.rows() != 1 || target.cols() != out.cols()) throw std::invalid_argument("target shape mismatch");
  const Mat<S> diff = out - target;
  const double loss = weight * double(diff.squaredNorm());
  const Mat<S> dout = S(2.0 * weight) * diff;

  auto& P = params_;
  const int C = config_.channels;
  const Eigen::Index len = in.x.cols();

  const Mat<S> dq = nn::affine_backward<S>(P.value(head_w_), cache.q, dout, P.grad(head_w_), P.grad(head_b_));
  Mat<S> dskip = nn::affine_backward<S>(P.value(skip_w_), cache.skip, nn::relu_backward<S>(dq, cache.q_pre),
                                        P.grad(skip_w_), P.grad(skip_b_));
  dskip *= S(1.0 / std::sqrt(double(config_.blocks)));

  const S inv_sqrt2 = S(1.0 / std::sqrt(2.0));
  Mat<S> dh = Mat<S>::Zero(C, len);
  Mat<S> dev = Mat<S>::Zero(config_.embed_hidden, 1);
  Mat<S> du;
  if (config_.encoding_dim > 0) du = Mat<S>::Zero(config_.encoding_hidden, 1);
  const auto runs = config_.use_mel ? tap_runs(int(in.mel.cols()), len, config_.upsample) : std::vector<TapRun>{};

  for (int i = config_.blocks - 1; i >= 0; --i) {
    const Block& b = blocks_[std::size_t(i)];
    const auto k = std::size_t(i);
    Mat<S> dout_block(2 * C, len);
    dout_block.topRows(C) = dh * inv_sqrt2;
    dout_block.bottomRows(C) = dskip;
    const Mat<S> dgate = nn::affine_backward<S>(P.value(b.out_w), cache.gate[k], dout_block, P.grad(b.out_w), P.grad(b.out_b));
    Mat<S> dc(2 * C, len);
    const auto& sg = cache.sg[k];
    const auto& th = cache.th[k];
    dc.topRows(C) = (dgate.array() * th.array() * sg.array() * (S(1) - sg.array())).matrix();
    dc.bottomRows(C) = (dgate.array() * sg.array() * (S(1) - th.array().square())).matrix();

    if (config_.encoding_dim > 0) {
      const Mat<S> dsum = dc.rowwise().sum();
      du += nn::affine_backward<S>(P.value(b.enc_w), cache.u, dsum, P.grad(b.enc_w), P.grad(b.enc_b));
    }
    if (config_.use_mel) {
      Mat<S> dproj = Mat<S>::Zero(2 * C, in.mel.cols());
      for (const TapRun& r : runs) {
        if (r.weight == 0.0) {
          dproj.col(r.lo) += dc.middleCols(r.begin, r.count).rowwise().sum();
        } else {
          dproj.col(r.lo) += S(1.0 - r.weight) * dc.col(r.begin);
          dproj.col(r.hi) += S(r.weight) * dc.col(r.begin);
        }
      }
      P.grad(b.mel_w).noalias() += dproj * in.mel.transpose();
      P.grad(b.mel_b).col(0) += dproj.rowwise().sum();
    }
    const Mat<S> dhin = nn::conv3_backward<S>(P.value(b.dil_w), cache.hin[k], dc, b.dilation, P.grad(b.dil_w), P.grad(b.dil_b));
    const Mat<S> dstep = dhin.rowwise().sum();
    dev += nn::affine_backward<S>(P.value(b.step_w), cache.ev, dstep, P.grad(b.step_w), P.grad(b.step_b));
    dh = dh * inv_sqrt2 + dhin;
  }

  nn::affine_backward<S>(P.value(in_w_), cache.xin, nn::relu_backward<S>(dh, cache.h0_pre), P.grad(in_w_), P.grad(in_b_));
  const Mat<S> da1 = nn::affine_backward<S>(P.value(e2_w_), cache.a1, nn::silu_backward<S>(dev, cache.z2),
                                            P.grad(e2_w_), P.grad(e2_b_));
  nn::affine_backward<S>(P.value(e1_w_), cache.e0, nn::silu_backward<S>(da1, cache.z1), P.grad(e1_w_), P.grad(e1_b_));
  if (config_.encoding_dim > 0) {
    nn::affine_backward<S>(P.value(enc_w_), in.encoding, du, P.grad(enc_w_), P.grad(enc_b_));
  }
  return loss;
}

template class DenoiserModel<float>;
template class DenoiserModel<double>;

template <typename S>
DenoiserInput<S> make_input(const DenoiserConfig& config, std::span<const double> x_t, std::span<const double> y,
                            const MelSpectrogram* mel, const NoiseEncoding* encoding, int t) {
  DenoiserInput<S> in;
  const auto len = Eigen::Index(x_t.size());
  in.t = t;
  in.x.resize(1, len);
  for (Eigen::Index j = 0; j < len; ++j) in.x(0, j) = S(x_t[std::size_t(j)]);
  if (config.use_noisy_input) {
    if (y.size() != x_t.size()) throw std::invalid_argument(fmt::format("noisy input has {} samples, state has {}", y.size(), x_t.size()));
    in.y.resize(1, len);
    for (Eigen::Index j = 0; j < len; ++j) in.y(0, j) = S(y[std::size_t(j)]);
  }
  if (config.use_mel) {
    if (!mel) throw std::invalid_argument("model is Mel-conditioned but no Mel condition was given");
    if (mel->bands != kMelBands) throw std::invalid_argument(fmt::format("Mel condition has {} bands", mel->bands));
    in.mel.resize(kMelBands, mel->frames);
    for (int f = 0; f < mel->frames; ++f)
      for (int b = 0; b < kMelBands; ++b) in.mel(b, f) = S(mel->at(f, b));
  }
  if (config.encoding_dim > 0) {
    if (!encoding) throw std::invalid_argument("model expects a noise encoding but none was given");
    const auto v = encoding->vector();
    if (int(v.size()) != config.encoding_dim) {
      throw std::invalid_argument(fmt::format("noise encoding has dimension {}, model expects {}", v.size(), config.encoding_dim));
    }
    in.encoding.resize(config.encoding_dim, 1);
    for (int i = 0; i < config.encoding_dim; ++i) in.encoding(i, 0) = S(v[std::size_t(i)]);
  }
  return in;
}

template DenoiserInput<float> make_input<float>(const DenoiserConfig&, std::span<const double>, std::span<const double>,
                                                const MelSpectrogram*, const NoiseEncoding*, int);
template DenoiserInput<double> make_input<double>(const DenoiserConfig&, std::span<const double>, std::span<const double>,
                                                  const MelSpectrogram*, const NoiseEncoding*, int);

void NetworkDenoiser::predict(std::span<const double> x_t, const Condition& cond, int t, std::span<double> out) const {
  if (out.size() != x_t.size()) throw std::invalid_argument("prediction buffer length mismatch");
  const auto in = make_input<float>(model_.config(), x_t, cond.y, cond.mel, cond.encoding, t);
  const Mat<float> pred = model_.forward(in);
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = double(pred(0, Eigen::Index(j)));
}

void save_denoiser(const std::filesystem::path& path, const DenoiserModel<float>& model,
                   const std::vector<std::pair<std::string, std::string>>& metadata) {
  Checkpoint ckpt;
  ckpt.set("model", "denoiser");
  for (const auto& [k, v] : model.config().to_pairs()) ckpt.set(k, v);
  for (const auto& [k, v] : metadata) ckpt.set("meta." + k, v);
  store_params(model.params(), ckpt);
  write_checkpoint(path, ckpt);
}

DenoiserModel<float> load_denoiser(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.get("model") != "denoiser") throw std::invalid_argument(fmt::format("{} is not a denoiser checkpoint", path.string()));
  DenoiserModel<float> model(DenoiserConfig::from_pairs(ckpt.config));
  restore_params(ckpt, model.params());
  return model;
}

std::string denoiser_metadata(const std::filesystem::path& path, const std::string& key) {
  const Checkpoint ckpt = read_checkpoint(path);
  for (const auto& [k, v] : ckpt.config) {
    if (k == "meta." + key) return v;
  }
  return {};
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument(fmt::format("train config: invalid lr = {}", lr));
  if (batch < 1) throw std::invalid_argument(fmt::format("train config: invalid batch = {}", batch));
  if (steps < 0) throw std::invalid_argument(fmt::format("train config: invalid steps = {}", steps));
  if (segment < kHop || segment % kHop != 0) {
    throw std::invalid_argument(fmt::format("train config: segment = {} must be a positive multiple of {}", segment, kHop));
  }
  if (log_every < 1) throw std::invalid_argument(fmt::format("train config: invalid log_every = {}", log_every));
}

TrainReport train_denoiser(DenoiserModel<float>& model, std::span<const TrainExample> data,
                           const ScheduleTable& table, const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
  const DenoiserConfig& mc = model.config();
  const int seg_frames = config.segment / kHop;
  for (const auto& ex : data) {
    if (ex.x0.size() != ex.y.size()) throw std::invalid_argument("train_denoiser: clean/noisy length mismatch");
    if (int(ex.x0.size()) < config.segment) {
      throw std::invalid_argument(fmt::format("train_denoiser: utterance of {} samples is shorter than the segment", ex.x0.size()));
    }
    if (mc.use_mel && (!ex.mel || ex.mel->frames < seg_frames)) {
      throw std::invalid_argument("train_denoiser: missing or too short Mel condition");
    }
    if (mc.encoding_dim > 0 && (!ex.encoding || int(ex.encoding->dim()) != mc.encoding_dim)) {
      throw std::invalid_argument("train_denoiser: missing or mismatched noise encoding");
    }
  }

  Rng rng(config.seed);
  nn::Adam<float> adam(model.params(), nn::AdamConfig{config.lr});
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, table.num_steps());
  const double weight = 1.0 / (double(config.batch) * double(config.segment));

  TrainReport report;
  double window = 0.0;
  int window_steps = 0;
  std::vector<Mat<float>> last_good;
  std::vector<double> eps(static_cast<std::size_t>(config.segment));
  for (int step = 1; step <= config.steps; ++step) {
    model.params().zero_grad();
    double loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const TrainExample& ex = data[pick(rng)];
      int max_frame = int(ex.x0.size()) / kHop - seg_frames;
      if (mc.use_mel) max_frame = std::min(max_frame, ex.mel->frames - seg_frames);
      const int f = std::uniform_int_distribution<int>(0, max_frame)(rng);
      const int t = pick_t(rng);
      fill_normal(rng, eps);
      const auto x0 = ex.x0.subspan(std::size_t(f) * kHop, std::size_t(config.segment));
      const auto y = ex.y.subspan(std::size_t(f) * kHop, std::size_t(config.segment));
      const auto x_t = forward_sample(x0, y, t, table, eps);
      const auto target = combined_target(x0, y, eps, t, table);
      MelSpectrogram mel;
      if (mc.use_mel) mel = ex.mel->crop(f, seg_frames);
      const auto in = make_input<float>(mc, x_t, y, mc.use_mel ? &mel : nullptr, ex.encoding, t);
      Mat<float> tgt(1, config.segment);
      for (int j = 0; j < config.segment; ++j) tgt(0, j) = float(target[std::size_t(j)]);
      loss += model.accumulate_sse(in, tgt, weight);
    }
    if (!std::isfinite(loss)) {
      throw TrainingDiverged(step, fmt::format("training loss became non-finite at step {}", step));
    }
    last_good.clear();
    for (const auto& t : model.params().tensors()) last_good.push_back(t.value);
    adam.step(model.params());
    if (!nn::all_finite(model.params())) {
      auto& ts = model.params().tensors();
      for (std::size_t i = 0; i < ts.size(); ++i) ts[i].value = last_good[i];
      throw TrainingDiverged(step, fmt::format("parameters became non-finite at step {}", step));
    }
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

void write_loss_csv(std::ostream& out, const TrainReport& report) {
  out << "step,loss\n";
  for (const auto& p : report.curve) out << fmt::format("{},{:.9g}\n", p.step, p.loss);
}

}  // namespace diffse
