#include "dtts/features.hpp"

#include "dtts/errors.hpp"
#include "dtts/fft.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace dtts {
namespace {

constexpr int kFirHalfWidth = 96;
constexpr double kFirCutoffHz = 7600.0;
constexpr double kKaiserBeta = 8.0;

double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  for (int k = 1; k < 64; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc low-pass at 48 kHz, unity DC gain.
const std::vector<double>& lowpass_48k() {
  static const std::vector<double> taps = [] {
    const double fc = kFirCutoffHz / kOutputRate;
    std::vector<double> h(2 * kFirHalfWidth + 1);
    const double denom = bessel_i0(kKaiserBeta);
    for (int k = -kFirHalfWidth; k <= kFirHalfWidth; ++k) {
      const double x = static_cast<double>(k);
      const double sinc =
          k == 0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * x) / (std::numbers::pi * x);
      const double r = x / kFirHalfWidth;
      const double window = bessel_i0(kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / denom;
      h[static_cast<std::size_t>(k + kFirHalfWidth)] = sinc * window;
    }
    const double dc = std::accumulate(h.begin(), h.end(), 0.0);
    for (double& v : h) v /= dc;
    return h;
  }();
  return taps;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_points() {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(kAnalysisRate / 2.0);
  std::vector<double> pts(kMelChannels + 2);
  for (int i = 0; i < kMelChannels + 2; ++i) {
    pts[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (kMelChannels + 1));
  }
  return pts;
}

// Mirror index without edge repetition (numpy "reflect"), periodic for
// signals shorter than the pad.
Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Window of length kWindowSamples centered on frame t's sample t * hop.
void frame_at(std::span<const double> x, Index t, std::span<double> out) {
  const Index n = static_cast<Index>(x.size());
  const Index start = t * kHopSamples - kWindowSamples / 2;
  for (Index k = 0; k < kWindowSamples; ++k) {
    out[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(reflect_index(start + k, n))];
  }
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate != kAnalysisRate && sample_rate != kOutputRate) {
    throw DataError("unsupported sample rate " + std::to_string(sample_rate) +
                    " (expected 16000 or 48000)");
  }
  for (double s : samples) {
    if (!std::isfinite(s)) throw DataError("waveform contains non-finite samples");
  }
}

void MelSpectrogram::validate() const {
  if (frames.cols() != kMelChannels) {
    throw DataError("mel must have 80 channels, got " + std::to_string(frames.cols()));
  }
  if (frames.rows() < 1) throw DataError("mel has no frames");
  if (!frames.allFinite()) throw DataError("mel contains non-finite values");
}

Index mel_frame_count(Index samples) { return samples / kHopSamples + 1; }

Waveform resample_48k_to_16k(const Waveform& w) {
  if (w.sample_rate != kOutputRate) {
    throw DataError("rate mismatch: resample_48k_to_16k expects 48000 Hz input, got " +
                    std::to_string(w.sample_rate));
  }
  const auto& h = lowpass_48k();
  const Index n = static_cast<Index>(w.samples.size());
  const Index out_len = (n + 2) / 3;
  Waveform out;
  out.sample_rate = kAnalysisRate;
  out.samples.assign(static_cast<std::size_t>(out_len), 0.0);
  for (Index m = 0; m < out_len; ++m) {
    const Index center = 3 * m;
    double acc = 0.0;
    for (int k = -kFirHalfWidth; k <= kFirHalfWidth; ++k) {
      const Index i = center - k;
      if (i >= 0 && i < n) acc += h[static_cast<std::size_t>(k + kFirHalfWidth)] * w.samples[static_cast<std::size_t>(i)];
    }
    out.samples[static_cast<std::size_t>(m)] = acc;
  }
  return out;
}

Waveform upsample_16k_to_48k(const Waveform& w) {
  if (w.sample_rate != kAnalysisRate) {
    throw DataError("rate mismatch: upsample_16k_to_48k expects 16000 Hz input, got " +
                    std::to_string(w.sample_rate));
  }
  const auto& h = lowpass_48k();
  const Index n = static_cast<Index>(w.samples.size());
  Waveform out;
  out.sample_rate = kOutputRate;
  out.samples.assign(static_cast<std::size_t>(3 * n), 0.0);
  for (Index j = 0; j < 3 * n; ++j) {
    double acc = 0.0;
    // Only taps landing on original (non-inserted) samples contribute.
    for (int k = -kFirHalfWidth; k <= kFirHalfWidth; ++k) {
      const Index i = j - k;
      if (i < 0 || i % 3 != 0 || i / 3 >= n) continue;
      acc += h[static_cast<std::size_t>(k + kFirHalfWidth)] * w.samples[static_cast<std::size_t>(i / 3)];
    }
    out.samples[static_cast<std::size_t>(j)] = 3.0 * acc;
  }
  return out;
}

const Matrix& mel_filterbank() {
  static const Matrix fb = [] {
    const auto pts = mel_points();
    Matrix m = Matrix::Zero(kMelChannels, kFftBins);
    for (int c = 0; c < kMelChannels; ++c) {
      const double lo = pts[static_cast<std::size_t>(c)];
      const double mid = pts[static_cast<std::size_t>(c + 1)];
      const double hi = pts[static_cast<std::size_t>(c + 2)];
      for (int b = 0; b < kFftBins; ++b) {
        const double f = static_cast<double>(b) * kAnalysisRate / kWindowSamples;
        const double rising = (f - lo) / (mid - lo);
        const double falling = (hi - f) / (hi - mid);
        m(c, b) = std::max(0.0, std::min(rising, falling));
      }
    }
    return m;
  }();
  return fb;
}

std::vector<double> mel_center_frequencies() {
  const auto pts = mel_points();
  return {pts.begin() + 1, pts.end() - 1};
}

const std::vector<double>& hann_window() {
  static const std::vector<double> w = [] {
    std::vector<double> v(kWindowSamples);
    for (int i = 0; i < kWindowSamples; ++i) {
      v[static_cast<std::size_t>(i)] =
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kWindowSamples);
    }
    return v;
  }();
  return w;
}

ComplexMatrix stft(std::span<const double> samples) {
  if (samples.empty()) throw DataError("cannot analyse an empty waveform");
  const Index frames = mel_frame_count(static_cast<Index>(samples.size()));
  const auto& window = hann_window();
  RealFft fft(kWindowSamples);
  std::vector<double> buf(kWindowSamples);
  std::vector<std::complex<double>> spec(kFftBins);
  ComplexMatrix out(frames, kFftBins);
  for (Index t = 0; t < frames; ++t) {
    frame_at(samples, t, buf);
    for (int i = 0; i < kWindowSamples; ++i) buf[static_cast<std::size_t>(i)] *= window[static_cast<std::size_t>(i)];
    fft.forward(buf, spec);
    for (int b = 0; b < kFftBins; ++b) out(t, b) = spec[static_cast<std::size_t>(b)];
  }
  return out;
}

Matrix stft_magnitude(std::span<const double> samples) {
  return stft(samples).cwiseAbs();
}

std::vector<double> istft(const ComplexMatrix& spectrum, Index length) {
  if (spectrum.cols() != kFftBins) throw std::invalid_argument("istft: expected 401 bins");
  const Index frames = spectrum.rows();
  const auto& window = hann_window();
  RealFft fft(kWindowSamples);
  const Index padded = kWindowSamples + kHopSamples * (frames - 1);
  std::vector<double> acc(static_cast<std::size_t>(padded), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(padded), 0.0);
  std::vector<std::complex<double>> spec(kFftBins);
  std::vector<double> buf(kWindowSamples);
  for (Index t = 0; t < frames; ++t) {
    for (int b = 0; b < kFftBins; ++b) spec[static_cast<std::size_t>(b)] = spectrum(t, b);
    fft.inverse(spec, buf);
    for (int i = 0; i < kWindowSamples; ++i) {
      const auto k = static_cast<std::size_t>(t * kHopSamples + i);
      const double w = window[static_cast<std::size_t>(i)];
      acc[k] += buf[static_cast<std::size_t>(i)] / kWindowSamples * w;
      norm[k] += w * w;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(length), 0.0);
  for (Index n = 0; n < length; ++n) {
    const Index k = n + kWindowSamples / 2;
    if (k >= padded) break;
    const auto ku = static_cast<std::size_t>(k);
    out[static_cast<std::size_t>(n)] = norm[ku] > 1e-10 ? acc[ku] / norm[ku] : 0.0;
  }
  return out;
}

MelSpectrogram compute_mel(const Waveform& w) {
  if (w.sample_rate != kAnalysisRate) {
    throw DataError("rate mismatch: compute_mel expects 16000 Hz input, got " +
                    std::to_string(w.sample_rate));
  }
  if (w.samples.empty()) throw DataError("cannot compute mel of an empty waveform");
  const Matrix mag = stft_magnitude(w.samples);
  MelSpectrogram mel;
  mel.frames = (mag * mel_filterbank().transpose()).cwiseMax(kMelFloor).array().log().matrix();
  return mel;
}

PitchContour extract_pitch(const Waveform& w) {
  if (w.sample_rate != kAnalysisRate) {
    throw DataError("rate mismatch: extract_pitch expects 16000 Hz input, got " +
                    std::to_string(w.sample_rate));
  }
  const Index frames = w.samples.empty() ? 0 : mel_frame_count(static_cast<Index>(w.samples.size()));
  const int min_lag = static_cast<int>(std::floor(kAnalysisRate / kPitchMaxHz));
  const int max_lag = static_cast<int>(std::ceil(kAnalysisRate / kPitchMinHz));
  PitchContour out;
  out.f0.assign(static_cast<std::size_t>(frames), 0.0);
  out.voiced.assign(static_cast<std::size_t>(frames), 0);
  std::vector<double> buf(kWindowSamples);
  std::vector<double> energy_prefix(kWindowSamples + 1);
  std::vector<double> r(static_cast<std::size_t>(max_lag + 2), 0.0);
  for (Index t = 0; t < frames; ++t) {
    frame_at(w.samples, t, buf);
    const double mean = std::accumulate(buf.begin(), buf.end(), 0.0) / kWindowSamples;
    for (double& v : buf) v -= mean;
    energy_prefix[0] = 0.0;
    for (int i = 0; i < kWindowSamples; ++i) {
      energy_prefix[static_cast<std::size_t>(i + 1)] = energy_prefix[static_cast<std::size_t>(i)] + buf[static_cast<std::size_t>(i)] * buf[static_cast<std::size_t>(i)];
    }
    const double rms = std::sqrt(energy_prefix.back() / kWindowSamples);
    if (rms < 1e-4) continue;

    double best = -1.0;
    for (int lag = min_lag - 1; lag <= max_lag + 1; ++lag) {
      const int n = kWindowSamples - lag;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += buf[static_cast<std::size_t>(i)] * buf[static_cast<std::size_t>(i + lag)];
      const double e0 = energy_prefix[static_cast<std::size_t>(n)];
      const double e1 = energy_prefix[kWindowSamples] - energy_prefix[static_cast<std::size_t>(lag)];
      const double norm = std::sqrt(e0 * e1);
      r[static_cast<std::size_t>(lag)] = norm > 0.0 ? acc / norm : 0.0;
      if (lag >= min_lag && lag <= max_lag) best = std::max(best, r[static_cast<std::size_t>(lag)]);
    }
    if (best < kVoicingThreshold) continue;

    // Shortest-lag local peak close to the global best suppresses octave-down errors.
    int chosen = -1;
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      const double v = r[static_cast<std::size_t>(lag)];
      if (v >= 0.9 * best && v >= kVoicingThreshold && v >= r[static_cast<std::size_t>(lag - 1)] &&
          v >= r[static_cast<std::size_t>(lag + 1)]) {
        chosen = lag;
        break;
      }
    }
    if (chosen < 0) continue;
    const double a = r[static_cast<std::size_t>(chosen - 1)];
    const double b = r[static_cast<std::size_t>(chosen)];
    const double c = r[static_cast<std::size_t>(chosen + 1)];
    const double curvature = a - 2.0 * b + c;
    const double offset = curvature < 0.0 ? std::clamp(0.5 * (a - c) / curvature, -0.5, 0.5) : 0.0;
    const double f0 = std::clamp(kAnalysisRate / (chosen + offset), kPitchMinHz, kPitchMaxHz);
    out.f0[static_cast<std::size_t>(t)] = f0;
    out.voiced[static_cast<std::size_t>(t)] = 1;
  }
  return out;
}

std::vector<double> phoneme_log_pitch(const PitchContour& contour,
                                      std::span<const int> durations) {
  const Index frames = static_cast<Index>(contour.f0.size());
  Index total = 0;
  for (int d : durations) {
    if (d < 0) throw DataError("negative phoneme duration");
    total += d;
  }
  if (total != frames) {
    throw DataError("duration/contour length mismatch: durations sum to " +
                    std::to_string(total) + " but contour has " +
                    std::to_string(frames) + " frames");
  }
  std::vector<double> result(durations.size(), std::numeric_limits<double>::quiet_NaN());

  std::vector<Index> voiced_idx;
  for (Index t = 0; t < frames; ++t) {
    if (contour.voiced[static_cast<std::size_t>(t)] && contour.f0[static_cast<std::size_t>(t)] > 0.0) voiced_idx.push_back(t);
  }
  if (voiced_idx.empty()) return result;

  // Linear interpolation in Hz across unvoiced gaps; edges held.
  std::vector<double> filled(static_cast<std::size_t>(frames));
  std::size_t next = 0;
  for (Index t = 0; t < frames; ++t) {
    while (next < voiced_idx.size() && voiced_idx[next] < t) ++next;
    if (next < voiced_idx.size() && voiced_idx[next] == t) {
      filled[static_cast<std::size_t>(t)] = contour.f0[static_cast<std::size_t>(t)];
    } else if (next == 0) {
      filled[static_cast<std::size_t>(t)] = contour.f0[static_cast<std::size_t>(voiced_idx.front())];
    } else if (next == voiced_idx.size()) {
      filled[static_cast<std::size_t>(t)] = contour.f0[static_cast<std::size_t>(voiced_idx.back())];
    } else {
      const Index a = voiced_idx[next - 1];
      const Index b = voiced_idx[next];
      const double fa = contour.f0[static_cast<std::size_t>(a)];
      const double fb = contour.f0[static_cast<std::size_t>(b)];
      filled[static_cast<std::size_t>(t)] = fa + (fb - fa) * static_cast<double>(t - a) / static_cast<double>(b - a);
    }
  }

  Index start = 0;
  for (std::size_t p = 0; p < durations.size(); ++p) {
    const int d = durations[p];
    if (d == 0) {
      // Interpolated value at the boundary between frames start-1 and start.
      const Index lo = std::clamp<Index>(start - 1, 0, frames - 1);
      const Index hi = std::clamp<Index>(start, 0, frames - 1);
      result[p] = std::log(0.5 * (filled[static_cast<std::size_t>(lo)] + filled[static_cast<std::size_t>(hi)]));
      continue;
    }
    double acc = 0.0;
    for (Index t = start; t < start + d; ++t) acc += std::log(filled[static_cast<std::size_t>(t)]);
    result[p] = acc / d;
    start += d;
  }
  return result;
}

PitchStats pitch_stats(const std::vector<std::vector<double>>& log_pitch) {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& utt : log_pitch) {
    for (double v : utt) {
      if (!std::isfinite(v)) continue;
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  PitchStats stats;
  if (n == 0) return stats;
  stats.mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - stats.mean * stats.mean);
  stats.stddev = var > 1e-12 ? std::sqrt(var) : 1.0;
  return stats;
}

std::vector<double> normalize_pitch(std::span<const double> log_pitch,
                                    const PitchStats& stats) {
  std::vector<double> out(log_pitch.size());
  for (std::size_t i = 0; i < log_pitch.size(); ++i) {
    out[i] = std::isfinite(log_pitch[i]) ? (log_pitch[i] - stats.mean) / stats.stddev : 0.0;
  }
  return out;
}

std::vector<double> phoneme_pitch_targets(const PitchContour& contour,
                                          std::span<const int> durations,
                                          const PitchStats& stats) {
  const auto raw = phoneme_log_pitch(contour, durations);
  return normalize_pitch(raw, stats);
}

}  // namespace dtts
