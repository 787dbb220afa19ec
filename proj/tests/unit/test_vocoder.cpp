#include "dtts/errors.hpp"
#include "dtts/vocoder.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace dtts;
using dtts::testing::random_matrix;

namespace {

Waveform tone(double hz, double seconds, int rate, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate));
  }
  return w;
}

// Goertzel power at integer DFT bin k of an n-point signal.
double bin_power(const std::vector<double>& x, std::size_t k) {
  const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(x.size());
  const double coeff = 2.0 * std::cos(w);
  double s1 = 0.0, s2 = 0.0;
  for (double v : x) {
    const double s0 = v + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return s1 * s1 + s2 * s2 - coeff * s1 * s2;
}

MelSpectrogram silence(Index frames) {
  return {Matrix::Constant(frames, kMelChannels, std::log(kMelFloor))};
}

}  // namespace

TEST_SUITE("vocoder") {
  TEST_CASE("output length is 600 samples per frame at 48 kHz") {
    CHECK(kSamplesPerFrame == 600);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<Index> frames(1, 40);
    BaselineVocoderOptions fast;
    fast.griffin_lim_iterations = 4;
    for (int trial = 0; trial < 20; ++trial) {
      const Index T = frames(rng);
      MelSpectrogram mel{random_matrix(T, 80, rng)};
      mel.frames.array() -= 6.0;
      const Waveform w = baseline_vocode(mel, fast);
      CHECK(w.sample_rate == 48000);
      CHECK(static_cast<Index>(w.samples.size()) == 600 * T);
    }
    CHECK(baseline_vocode(silence(81)).samples.size() == 48600);
  }

  TEST_CASE("griffin-lim length re-analyses to the same frame count") {
    std::mt19937_64 rng(2);
    for (Index T : {1, 2, 7, 30}) {
      const Matrix mag = random_matrix(T, kFftBins, rng).cwiseAbs();
      const auto x = griffin_lim(mag, 3, 0);
      CHECK(static_cast<Index>(x.size()) == 200 * T - 100);
      CHECK(mel_frame_count(static_cast<Index>(x.size())) == T);
    }
  }

  TEST_CASE("mel inversion is non-negative and fits the mel") {
    const Waveform w = tone(440.0, 0.5, 16000);
    const MelSpectrogram mel = compute_mel(w);
    const Matrix lin = mel_to_linear(mel.frames, 200);
    CHECK(lin.rows() == mel.num_frames());
    CHECK(lin.cols() == kFftBins);
    CHECK(lin.minCoeff() >= 0.0);
    const Matrix energy = (mel.frames.array().exp() - kMelFloor).max(0.0).matrix();
    const Matrix fb = mel_filterbank();
    const double residual = (lin * fb.transpose() - energy).norm();
    CHECK(residual < 0.05 * energy.norm());
  }

  TEST_CASE("a 440 Hz tone survives analysis and vocoding") {
    const Waveform src = tone(440.0, 1.0, 48000);
    const MelSpectrogram mel = compute_mel(resample_48k_to_16k(src));
    const Waveform out = baseline_vocode(mel);
    REQUIRE(out.samples.size() == static_cast<std::size_t>(600 * mel.num_frames()));
    const double bin_hz = 48000.0 / static_cast<double>(out.samples.size());
    std::size_t best = 0;
    double best_power = -1.0;
    for (auto k = static_cast<std::size_t>(50.0 / bin_hz); k < static_cast<std::size_t>(4000.0 / bin_hz); ++k) {
      const double p = bin_power(out.samples, k);
      if (p > best_power) {
        best_power = p;
        best = k;
      }
    }
    const double peak_hz = static_cast<double>(best) * bin_hz;
    INFO("peak at ", peak_hz, " Hz, bin width ", bin_hz);
    CHECK(std::abs(peak_hz - 440.0) <= bin_hz);
    double peak = 0.0;
    for (double v : out.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak == doctest::Approx(0.95).epsilon(1e-12));
  }

  TEST_CASE("floor-level mel gives silence") {
    const Waveform out = baseline_vocode(silence(20));
    double energy = 0.0;
    for (double v : out.samples) energy += v * v;
    CHECK(energy == 0.0);
  }

  TEST_CASE("non-finite mel is rejected") {
    MelSpectrogram mel = silence(4);
    mel.frames(2, 7) = std::nan("");
    CHECK_THROWS_AS(baseline_vocode(mel), DataError);
    CHECK_THROWS_AS(VocoderRegistry::with_baseline().run("baseline", mel), DataError);
  }

  TEST_CASE("vocoding is deterministic for a fixed seed") {
    const MelSpectrogram mel = compute_mel(tone(300.0, 0.3, 16000));
    CHECK(baseline_vocode(mel).samples == baseline_vocode(mel).samples);
    BaselineVocoderOptions other;
    other.seed = 7;
    CHECK(baseline_vocode(mel, other).samples != baseline_vocode(mel).samples);
  }

  TEST_CASE("registry runs the baseline and enforces the contract") {
    const MelSpectrogram mel = compute_mel(tone(300.0, 0.2, 16000));
    auto registry = VocoderRegistry::with_baseline();
    CHECK(registry.contains("baseline"));
    CHECK(registry.run("baseline", mel).samples == baseline_vocode(mel).samples);

    registry.add("short", [](const MelSpectrogram& m) {
      Waveform w;
      w.sample_rate = 48000;
      w.samples.assign(static_cast<std::size_t>(599 * m.num_frames()), 0.0);
      return w;
    });
    registry.add("slow", [](const MelSpectrogram& m) {
      Waveform w;
      w.sample_rate = 16000;
      w.samples.assign(static_cast<std::size_t>(600 * m.num_frames()), 0.0);
      return w;
    });
    CHECK_THROWS_AS(registry.run("short", mel), ContractError);
    CHECK_THROWS_AS(registry.run("slow", mel), ContractError);
    CHECK_THROWS_WITH_AS(registry.run("hifi", mel), doctest::Contains("baseline"), UsageError);
    CHECK(registry.names().size() == 3);
  }

  TEST_CASE("contract check reports measured and expected lengths") {
    const MelSpectrogram mel = silence(10);
    Waveform w;
    w.sample_rate = 48000;
    w.samples.assign(5990, 0.0);
    CHECK_THROWS_WITH_AS(check_vocoder_contract(mel, w), doctest::Contains("6000"), ContractError);
    w.samples.assign(6000, 0.0);
    CHECK_NOTHROW(check_vocoder_contract(mel, w));
  }
}
