// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include "diffse/dataset.hpp"
#include "diffse/denoiser.hpp"
#include "diffse/diffusion.hpp"
#include "diffse/dsp.hpp"
#include "diffse/nn.hpp"

using namespace diffse;

namespace {

nn::Mat<float> random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  nn::Mat<float> m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = n(rng);
  return m;
}

void BM_conv3_gemm(benchmark::State& state) {
  const auto w = random_mat(64, 96, 1), b = random_mat(64, 1, 2), x = random_mat(32, state.range(0), 3);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv3_forward<float>(w, b, x, 4));
}

void BM_conv3_reference(benchmark::State& state) {
  const auto w = random_mat(64, 96, 1), b = random_mat(64, 1, 2), x = random_mat(32, state.range(0), 3);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv3_forward_reference<float>(w, b, x, 4));
}

std::vector<double> signal(std::size_t n) {
  MixSpec spec;
  spec.duration_s = double(n) / kSampleRate;
  return synth_clean(spec).samples;
}

void BM_stft_parallel(benchmark::State& state) {
  const auto x = signal(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(stft_mel(x));
}

void BM_stft_serial(benchmark::State& state) {
  const auto x = signal(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(stft_mel_serial(x));
}

struct SamplerFixture {
  ScheduleTable table = ScheduleTable::build(ScheduleConfig{});
  CorpusConfig corpus = [] {
    CorpusConfig c;
    c.num_test = 8;
    c.duration_s = 0.5;
    return c;
  }();
  std::vector<Utterance> utts = generate_split(corpus, Split::test);
  std::vector<MelSpectrogram> mels;
  std::vector<NoiseEncoding> encs;
  std::vector<EnhanceJob> jobs;
  NetworkDenoiser net{DenoiserModel<float>{DenoiserConfig{}}};

  SamplerFixture() {
    for (const auto& u : utts) {
      mels.push_back(normalize_mel(conditioning_mel(u.noisy.samples)));
      encs.push_back(encode_class(u.noise_class, 4));
    }
    for (std::size_t i = 0; i < utts.size(); ++i) jobs.push_back({utts[i].noisy.view(), &mels[i], &encs[i], i});
  }
};

void BM_sampler_batch(benchmark::State& state) {
  static SamplerFixture f;
  for (auto _ : state) benchmark::DoNotOptimize(reverse_enhance_batch(f.jobs, f.net, f.table, SamplerOptions{}));
}

void BM_sampler_serial(benchmark::State& state) {
  static SamplerFixture f;
  for (auto _ : state) benchmark::DoNotOptimize(reverse_enhance_serial(f.jobs, f.net, f.table, SamplerOptions{}));
}

}  // namespace

BENCHMARK(BM_conv3_gemm)->Arg(512)->Arg(4096);
BENCHMARK(BM_conv3_reference)->Arg(512)->Arg(4096);
BENCHMARK(BM_stft_parallel)->Arg(16000)->Arg(64000);
BENCHMARK(BM_stft_serial)->Arg(16000)->Arg(64000);
BENCHMARK(BM_sampler_batch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_sampler_serial)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
