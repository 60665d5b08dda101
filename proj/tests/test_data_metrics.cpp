#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include <doctest.h>

#include "diffse/dataset.hpp"
#include "diffse/dsp.hpp"
#include "diffse/metrics.hpp"

using namespace diffse;

namespace {

double mean_power(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / double(x.size());
}

std::vector<double> sine(std::size_t n, double hz) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * hz * double(i) / kSampleRate);
  return x;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "diffse_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("si_sdr of an orthogonal equal-energy error is 0 dB") {
  const auto s = sine(1600, 500.0);
  auto c = sine(1600, 1000.0);
  const double k = std::sqrt(mean_power(s) / mean_power(c));
  std::vector<double> est(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) est[i] = s[i] + k * c[i];
  CHECK(si_sdr(s, est) == doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
}

TEST_CASE("si_sdr ignores gain") {
  const auto s = sine(1600, 440.0);
  auto noisy = sine(1600, 1200.0);
  for (std::size_t i = 0; i < s.size(); ++i) noisy[i] = s[i] + 0.1 * noisy[i];
  std::vector<double> scaled(noisy);
  for (double& v : scaled) v *= 3.7;
  CHECK(si_sdr(s, scaled) == doctest::Approx(si_sdr(s, noisy)).epsilon(1e-12));
  CHECK(si_sdr(s, noisy) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("metric caps and errors") {
  const auto s = sine(800, 300.0);
  CHECK(si_sdr(s, s) == kMetricCapDb);
  CHECK(snr_db(s, s) == kMetricCapDb);
  CHECK(snr_db(s, std::vector<double>(800, 0.0)) == doctest::Approx(0.0));
  CHECK(si_sdr(s, std::vector<double>(800, 0.0)) == -kMetricCapDb);
  CHECK_THROWS_AS(si_sdr(s, std::vector<double>(10, 0.0)), std::invalid_argument);
  CHECK_THROWS_AS(si_sdr(std::vector<double>(800, 0.0), s), std::invalid_argument);
}

TEST_CASE("mel_l1 is zero for identical signals") {
  const auto s = sine(4096, 300.0);
  CHECK(mel_l1(s, s) == 0.0);
  CHECK(mel_l1(s, sine(4096, 2000.0)) > 0.5);
}

TEST_CASE("summaries group by SNR and class") {
  std::vector<EvalRow> rows(4);
  for (int i = 0; i < 4; ++i) {
    rows[std::size_t(i)].id = "u" + std::to_string(3 - i);
    rows[std::size_t(i)].noise_class = i % 2;
    rows[std::size_t(i)].input_snr_db = i < 2 ? 2.5 : 7.5;
    rows[std::size_t(i)].si_sdr = double(i);
  }
  const auto report = summarize(rows);
  CHECK(report.rows.front().id == "u0");
  REQUIRE(report.summaries.size() == 5);
  CHECK(report.summaries[0].group == "all");
  CHECK(report.summaries[0].si_sdr == doctest::Approx(1.5));
  CHECK(report.summaries[1].group == "snr=2.5");
  CHECK(report.summaries[1].si_sdr == doctest::Approx(0.5));
  CHECK(report.summaries[4].group == "class=1");
  CHECK(report.summaries[4].si_sdr == doctest::Approx(2.0));
}

}

TEST_SUITE("dataset") {

TEST_CASE("mixing hits the requested SNR") {
  MixSpec spec;
  spec.seed = 3;
  const Waveform clean = synth_clean(spec);
  for (int cls = 0; cls < kNumNoiseClasses; ++cls) {
    const Waveform noise = synth_noise(cls, 1.0, 5);
    CHECK(mean_power(noise.samples) == doctest::Approx(1.0).epsilon(1e-9));
    for (double snr : kTrainSnrs) {
      const Mixture mix = mix_at_snr(clean, noise, snr);
      std::vector<double> n(clean.size());
      for (std::size_t i = 0; i < n.size(); ++i) n[i] = mix.noisy.samples[i] - clean.samples[i];
      CHECK(10 * std::log10(mean_power(clean.samples) / mean_power(n)) == doctest::Approx(snr).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("clean synthesis is deterministic and peak normalized") {
  for (CleanKind kind : {CleanKind::harmonic, CleanKind::chirp, CleanKind::am_tone}) {
    MixSpec spec;
    spec.clean_kind = kind;
    spec.seed = 42;
    const Waveform a = synth_clean(spec), b = synth_clean(spec);
    CHECK(a.samples == b.samples);
    double peak = 0.0;
    for (double v : a.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(0.5));
  }
}

TEST_CASE("spec validation") {
  MixSpec spec;
  spec.snr_db = 3.0;
  CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("snr_db"), std::invalid_argument);
  spec.snr_db = 2.5;
  CHECK_NOTHROW(spec.validate());
  spec.noise_class = 4;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec.noise_class = 0;
  spec.duration_s = 0.2;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  CHECK_THROWS_AS(synth_noise(7, 1.0, 0), std::invalid_argument);
}

TEST_CASE("splits use their SNR sets and stratify classes") {
  CorpusConfig cfg;
  cfg.num_train = 12;
  cfg.num_test = 8;
  cfg.duration_s = 0.5;
  const auto train = generate_split(cfg, Split::train);
  const auto test = generate_split(cfg, Split::test);
  REQUIRE(train.size() == 12);
  REQUIRE(test.size() == 8);
  for (std::size_t i = 0; i < train.size(); ++i) {
    CHECK(train[i].noise_class == int(i % 4));
    CHECK(std::find(kTrainSnrs.begin(), kTrainSnrs.end(), train[i].snr_db) != kTrainSnrs.end());
  }
  for (const auto& u : test) {
    CHECK(std::find(kTestSnrs.begin(), kTestSnrs.end(), u.snr_db) != kTestSnrs.end());
    CHECK(u.id.rfind("test_", 0) == 0);
  }
  const auto again = generate_split(cfg, Split::train);
  CHECK(again[5].noisy.samples == train[5].noisy.samples);
}

TEST_CASE("corpus round trip through disk") {
  CorpusConfig cfg;
  cfg.num_train = 4;
  cfg.num_validation = 2;
  cfg.num_test = 2;
  cfg.duration_s = 0.5;
  const auto dir = fresh_dir("corpus");
  const Manifest built = build_corpus(cfg, dir);
  CHECK(built.records.size() == 8);
  const Manifest read = read_manifest(dir / "manifest.csv");
  REQUIRE(read.records.size() == 8);
  CHECK(read.split(Split::test).size() == 2);
  const auto test = load_split(read, Split::test);
  const auto mem = generate_split(cfg, Split::test);
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(test[i].id == mem[i].id);
    for (std::size_t k = 0; k < test[i].clean.size(); ++k) {
      CHECK(std::abs(test[i].clean.samples[k] - mem[i].clean.samples[k]) <= 0.5 / 32768 + 1e-12);
    }
  }
}

TEST_CASE("evaluation reports every missing file") {
  CorpusConfig cfg;
  cfg.num_train = 0;
  cfg.num_validation = 0;
  cfg.num_test = 2;
  cfg.duration_s = 0.5;
  const auto dir = fresh_dir("eval");
  const Manifest m = build_corpus(cfg, dir);
  CHECK_THROWS_WITH_AS(evaluate_corpus(m, dir / "nothing"), doctest::Contains("2 enhanced file(s) missing"),
                       std::runtime_error);
  const EvalReport report = evaluate_corpus(m, dir / "noisy");
  REQUIRE(report.rows.size() == 2);
  for (const auto& r : report.rows) CHECK(r.delta_si_sdr == 0.0);
}

TEST_CASE("external triplets measure their SNR") {
  const auto dir = fresh_dir("triplets");
  MixSpec spec;
  spec.seed = 8;
  const Waveform clean = synth_clean(spec);
  const Mixture mix = mix_at_snr(clean, synth_noise(0, 1.0, 1), 10.0);
  write_wav(dir / "c.wav", clean);
  write_wav(dir / "n.wav", mix.noisy);
  {
    std::ofstream out(dir / "list.csv");
    out << "clean_path,noisy_path,noise_class,split\nc.wav,n.wav,0,test\n";
  }
  const Manifest m = import_triplets(dir / "list.csv");
  REQUIRE(m.records.size() == 1);
  CHECK(m.records[0].snr_db == doctest::Approx(10.0).epsilon(0.01));
  {
    std::ofstream out(dir / "bad.csv");
    out << "a,b\n";
  }
  CHECK_THROWS_AS(import_triplets(dir / "bad.csv"), std::invalid_argument);
}

}
