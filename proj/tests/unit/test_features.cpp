#include "dtts/errors.hpp"
#include "dtts/features.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace dtts;

namespace {

Waveform sine(double hz, int rate, Index n, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  for (Index i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
  return w;
}

// Goertzel power at bin k of an n-point DFT.
double goertzel(const std::vector<double>& x, double k) {
  const double w = 2.0 * std::numbers::pi * k / static_cast<double>(x.size());
  const double c = 2.0 * std::cos(w);
  double s1 = 0.0, s2 = 0.0;
  for (double v : x) {
    const double s0 = v + c * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return s1 * s1 + s2 * s2 - c * s1 * s2;
}

// Frequency of the strongest DFT bin in [lo, hi] Hz, 1-bin resolution.
double dominant_hz(const std::vector<double>& x, int rate, double lo, double hi) {
  const double bin_hz = static_cast<double>(rate) / static_cast<double>(x.size());
  double best = 0.0, best_p = -1.0;
  for (double k = std::ceil(lo / bin_hz); k * bin_hz <= hi; k += 1.0) {
    const double p = goertzel(x, k);
    if (p > best_p) {
      best_p = p;
      best = k * bin_hz;
    }
  }
  return best;
}

double rms(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

// HTK mel centres written out independently of the library.
std::vector<double> htk_centres() {
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  std::vector<double> c;
  for (int i = 1; i <= 80; ++i) c.push_back(inv(mel(8000.0) * i / 81.0));
  return c;
}

PitchContour contour(std::vector<double> f0) {
  PitchContour c;
  for (double f : f0) c.voiced.push_back(f > 0.0 ? 1 : 0);
  c.f0 = std::move(f0);
  return c;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("one second at 16 kHz gives 81 frames") {
    CHECK(compute_mel(sine(300.0, 16000, 16000)).num_frames() == 81);
    CHECK(mel_frame_count(16000) == 81);
  }

  TEST_CASE("frame count law over random lengths") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<Index> len(1, 9000);
    for (int i = 0; i < 50; ++i) {
      const Index n = len(rng);
      Waveform w = sine(220.0, 16000, n);
      CHECK(compute_mel(w).num_frames() == n / 200 + 1);
      CHECK(static_cast<Index>(extract_pitch(w).f0.size()) == n / 200 + 1);
    }
  }

  TEST_CASE("silence sits on the floor") {
    Waveform w;
    w.samples.assign(3000, 0.0);
    const Matrix m = compute_mel(w).frames;
    CHECK(m.cols() == 80);
    CHECK((m.array() == std::log(1e-5)).all());
    CHECK(std::log(1e-5) == doctest::Approx(-11.5129).epsilon(1e-5));
  }

  TEST_CASE("440 Hz lands in the nearest-centre channel in every frame") {
    const auto centres = htk_centres();
    int nearest = 0;
    for (int c = 1; c < 80; ++c) {
      if (std::abs(centres[c] - 440.0) < std::abs(centres[nearest] - 440.0)) nearest = c;
    }
    const auto lib = mel_center_frequencies();
    for (int c = 0; c < 80; ++c) CHECK(lib[c] == doctest::Approx(centres[c]).epsilon(1e-9));
    // The first and last two frames overlap reflect padding, which mirrors
    // the tone with a sign flip and splits its energy around 440 Hz.
    for (Index n : {16000, 15950, 16100}) {
      const Matrix m = compute_mel(sine(440.0, 16000, n)).frames;
      for (Index t = 2; t + 2 < m.rows(); ++t) {
        Index arg = 0;
        m.row(t).maxCoeff(&arg);
        CHECK(arg == nearest);
      }
    }
  }

  TEST_CASE("earlier frames ignore appended zeros") {
    std::mt19937_64 rng(12);
    Waveform w = sine(310.0, 16000, 4321);
    const Matrix a = compute_mel(w).frames;
    for (int k : {1, 3}) {
      Waveform longer = w;
      longer.samples.resize(w.samples.size() + 200 * k, 0.0);
      const Matrix b = compute_mel(longer).frames;
      CHECK(b.rows() == a.rows() + k);
      // Frames whose window lies inside the original signal are unchanged.
      for (Index t = 0; t * 200 + 400 <= 4321; ++t) {
        CHECK((a.row(t) - b.row(t)).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }

  TEST_CASE("empty waveform is rejected") {
    Waveform w;
    CHECK_THROWS_AS(compute_mel(w), DataError);
  }

  TEST_CASE("waveform validation") {
    Waveform w{{0.0, 0.1}, 22050};
    CHECK_THROWS_AS(w.validate(), DataError);
    Waveform nan{{0.0, std::nan("")}, 16000};
    CHECK_THROWS_AS(nan.validate(), DataError);
  }

  TEST_CASE("resampling zeros") {
    Waveform w{std::vector<double>(48000, 0.0), 48000};
    const Waveform out = resample_48k_to_16k(w);
    CHECK(out.sample_rate == 16000);
    CHECK(out.samples.size() == 16000);
    CHECK(rms(out.samples) == 0.0);
  }

  TEST_CASE("resampled length is ceil(n / 3)") {
    for (Index n : {1, 2, 3, 4, 299, 300, 301, 48001}) {
      Waveform w{std::vector<double>(static_cast<std::size_t>(n), 0.1), 48000};
      CHECK(static_cast<Index>(resample_48k_to_16k(w).samples.size()) == (n + 2) / 3);
    }
  }

  TEST_CASE("1 kHz survives decimation") {
    const Waveform out = resample_48k_to_16k(sine(1000.0, 48000, 48000));
    CHECK(std::abs(dominant_hz(out.samples, 16000, 0.0, 8000.0) - 1000.0) <= 1.0);
    CHECK(rms(out.samples) == doctest::Approx(0.5 / std::sqrt(2.0)).epsilon(0.02));
  }

  TEST_CASE("12 kHz is removed by the anti-alias filter") {
    CHECK(rms(resample_48k_to_16k(sine(12000.0, 48000, 48000)).samples) < 0.01);
  }

  TEST_CASE("rate mismatch is explicit") {
    const Waveform w = sine(100.0, 16000, 1000);
    try {
      resample_48k_to_16k(w);
      FAIL("expected an exception");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("rate mismatch") != std::string::npos);
    }
  }

  TEST_CASE("upsampling keeps a 1 kHz tone") {
    const Waveform up = upsample_16k_to_48k(sine(1000.0, 16000, 16000));
    CHECK(up.samples.size() == 48000);
    CHECK(std::abs(dominant_hz(up.samples, 48000, 0.0, 24000.0) - 1000.0) <= 1.0);
    std::vector<double> mid(up.samples.begin() + 1000, up.samples.end() - 1000);
    CHECK(rms(mid) == doctest::Approx(0.5 / std::sqrt(2.0)).epsilon(0.02));
  }

  TEST_CASE("200 Hz sine is voiced at 200 Hz") {
    const PitchContour c = extract_pitch(sine(200.0, 16000, 16000));
    for (std::size_t t = 0; t < c.f0.size(); ++t) {
      CHECK(c.voiced[t] == 1);
      CHECK(std::abs(c.f0[t] - 200.0) <= 5.0);
    }
  }

  TEST_CASE("tones across the search band") {
    for (double hz : {60.0, 123.0, 310.0, 640.0}) {
      const PitchContour c = extract_pitch(sine(hz, 16000, 8000));
      for (std::size_t t = 2; t + 2 < c.f0.size(); ++t) {
        CHECK(c.voiced[t] == 1);
        CHECK(std::abs(c.f0[t] - hz) < 0.01 * hz);
      }
    }
  }

  TEST_CASE("low-level white noise is mostly unvoiced") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 0.01);
    Waveform w;
    for (int i = 0; i < 32000; ++i) w.samples.push_back(n(rng));
    const PitchContour c = extract_pitch(w);
    int unvoiced = 0;
    for (auto v : c.voiced) unvoiced += v == 0;
    CHECK(unvoiced >= 0.9 * static_cast<double>(c.voiced.size()));
  }

  TEST_CASE("silence is unvoiced with zero f0") {
    Waveform w;
    w.samples.assign(8000, 0.0);
    const PitchContour c = extract_pitch(w);
    for (std::size_t t = 0; t < c.f0.size(); ++t) {
      CHECK(c.voiced[t] == 0);
      CHECK(c.f0[t] == 0.0);
    }
  }

  TEST_CASE("contour invariants on mixed audio") {
    std::mt19937_64 rng(14);
    std::normal_distribution<double> n(0.0, 0.05);
    Waveform w = sine(150.0, 16000, 12000);
    for (std::size_t i = 6000; i < w.samples.size(); ++i) w.samples[i] = n(rng);
    const PitchContour c = extract_pitch(w);
    for (std::size_t t = 0; t < c.f0.size(); ++t) {
      CHECK((c.f0[t] == 0.0) == (c.voiced[t] == 0));
      if (c.voiced[t]) CHECK((c.f0[t] >= 40.0 && c.f0[t] <= 800.0));
    }
  }

  TEST_CASE("phoneme pitch: all voiced arithmetic") {
    const std::vector<int> d = {2, 2};
    const auto p = phoneme_log_pitch(contour({100, 110, 120, 130}), d);
    CHECK(p[0] == doctest::Approx((std::log(100.0) + std::log(110.0)) / 2));
    CHECK(p[1] == doctest::Approx((std::log(120.0) + std::log(130.0)) / 2));
  }

  TEST_CASE("phoneme pitch: interpolation across a gap") {
    const std::vector<int> d = {4};
    const auto p = phoneme_log_pitch(contour({100, 0, 0, 160}), d);
    const double expect = (std::log(100.0) + std::log(120.0) + std::log(140.0) + std::log(160.0)) / 4;
    CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("phoneme pitch: edges are held") {
    const std::vector<int> d = {2, 2};
    const auto p = phoneme_log_pitch(contour({0, 100, 0, 0}), d);
    CHECK(p[0] == doctest::Approx(std::log(100.0)));
    CHECK(p[1] == doctest::Approx(std::log(100.0)));
  }

  TEST_CASE("phoneme pitch: zero-duration phoneme takes the boundary value") {
    const std::vector<int> d = {2, 0, 2};
    const auto p = phoneme_log_pitch(contour({100, 120, 140, 160}), d);
    CHECK(p[1] == doctest::Approx(std::log(130.0)));
  }

  TEST_CASE("phoneme pitch: all unvoiced normalizes to the corpus mean") {
    const std::vector<int> d = {1, 2};
    const auto raw = phoneme_log_pitch(contour({0, 0, 0}), d);
    CHECK(std::isnan(raw[0]));
    const auto z = normalize_pitch(raw, PitchStats{5.0, 0.3});
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 0.0);
  }

  TEST_CASE("phoneme pitch: length mismatch is an error") {
    const std::vector<int> d = {1, 1};
    CHECK_THROWS_AS(phoneme_log_pitch(contour({100, 100, 100}), d), DataError);
  }

  TEST_CASE("phoneme pitch commutes with reversal") {
    std::mt19937_64 rng(15);
    std::uniform_int_distribution<int> dur(0, 4);
    std::uniform_real_distribution<double> hz(80.0, 300.0);
    std::bernoulli_distribution voiced(0.6);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<int> d(6);
      int total = 0;
      for (int& v : d) total += (v = dur(rng));
      if (total == 0) continue;
      std::vector<double> f0(static_cast<std::size_t>(total));
      for (double& f : f0) f = voiced(rng) ? hz(rng) : 0.0;
      const auto fwd = phoneme_log_pitch(contour(f0), d);
      std::reverse(f0.begin(), f0.end());
      std::reverse(d.begin(), d.end());
      auto back = phoneme_log_pitch(contour(f0), d);
      std::reverse(back.begin(), back.end());
      for (std::size_t i = 0; i < fwd.size(); ++i) {
        if (std::isnan(fwd[i])) {
          CHECK(std::isnan(back[i]));
        } else {
          CHECK(back[i] == doctest::Approx(fwd[i]).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("corpus statistics and standardization") {
    const PitchStats s = pitch_stats({{1.0, 3.0}, {std::nan(""), 5.0}});
    CHECK(s.mean == doctest::Approx(3.0));
    CHECK(s.stddev == doctest::Approx(std::sqrt(8.0 / 3.0)));
    const std::vector<double> raw = {3.0, 5.0};
    const auto z = normalize_pitch(raw, s);
    CHECK(z[0] == doctest::Approx(0.0));
    CHECK(z[1] == doctest::Approx(2.0 / s.stddev));
  }
}
