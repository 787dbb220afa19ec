#include "dtts/vocoder.hpp"

#include "dtts/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>

namespace dtts {
namespace {

struct InverseFilterbank {
  Matrix pinv;      // 401 x 80
  Matrix gram;      // 401 x 401, fb^T fb
  double step = 0;  // 1 / largest eigenvalue of gram
};

const InverseFilterbank& inverse_filterbank() {
  static const InverseFilterbank inv = [] {
    const Matrix& fb = mel_filterbank();
    InverseFilterbank out;
    out.pinv = fb.completeOrthogonalDecomposition().pseudoInverse();
    out.gram = fb.transpose() * fb;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(out.gram, Eigen::EigenvaluesOnly);
    out.step = 1.0 / eig.eigenvalues().maxCoeff();
    return out;
  }();
  return inv;
}

}  // namespace

Matrix mel_to_linear(const Matrix& log_mel, int iterations) {
  if (log_mel.cols() != kMelChannels) throw DataError("mel_to_linear: expected 80 channels");
  const auto& inv = inverse_filterbank();
  const Matrix& fb = mel_filterbank();
  // Energy above the floor; the floor itself maps to silence.
  Matrix y = (log_mel.array().exp() - kMelFloor).max(0.0).matrix();  // T x 80
  Matrix s = (y * inv.pinv.transpose()).cwiseMax(0.0);                // T x 401
  const Matrix target = y * fb;                                       // T x 401, fb^T y
  for (int it = 0; it < iterations; ++it) {
    s = (s - inv.step * (s * inv.gram - target)).cwiseMax(0.0);
  }
  return s;
}

std::vector<double> griffin_lim(const Matrix& magnitude, int iterations, std::uint64_t seed) {
  const Index frames = magnitude.rows();
  const Index length = kHopSamples * frames - kHopSamples / 2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  ComplexMatrix spec(frames, kFftBins);
  for (Index t = 0; t < frames; ++t) {
    for (Index b = 0; b < kFftBins; ++b) spec(t, b) = std::polar(magnitude(t, b), angle(rng));
  }
  std::vector<double> signal = istft(spec, length);
  for (int it = 0; it < iterations; ++it) {
    const ComplexMatrix rebuilt = stft(signal);
    for (Index t = 0; t < frames; ++t) {
      for (Index b = 0; b < kFftBins; ++b) {
        const std::complex<double> z = rebuilt(t, b);
        const double a = std::abs(z);
        spec(t, b) = a > 1e-12 ? magnitude(t, b) * (z / a) : std::complex<double>(magnitude(t, b), 0.0);
      }
    }
    signal = istft(spec, length);
  }
  return signal;
}

Waveform baseline_vocode(const MelSpectrogram& mel, const BaselineVocoderOptions& options) {
  mel.validate();
  const Index frames = mel.num_frames();
  const Matrix magnitude = mel_to_linear(mel.frames, options.nnls_iterations);
  Waveform low;
  low.sample_rate = kAnalysisRate;
  low.samples = griffin_lim(magnitude, options.griffin_lim_iterations, options.seed);
  Waveform out = upsample_16k_to_48k(low);
  out.samples.resize(static_cast<std::size_t>(kSamplesPerFrame * frames), 0.0);
  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : out.samples) v *= options.peak / peak;
  }
  return out;
}

void check_vocoder_contract(const MelSpectrogram& mel, const Waveform& w) {
  if (w.sample_rate != kOutputRate) {
    throw ContractError("vocoder contract: sample rate " + std::to_string(w.sample_rate) +
                        " Hz, expected 48000 Hz");
  }
  const Index expected = kSamplesPerFrame * mel.num_frames();
  const auto measured = static_cast<Index>(w.samples.size());
  if (measured != expected) {
    throw ContractError("vocoder contract: " + std::to_string(measured) + " samples, expected " +
                        std::to_string(expected) + " (600 x " +
                        std::to_string(mel.num_frames()) + ")");
  }
}

VocoderRegistry VocoderRegistry::with_baseline() {
  VocoderRegistry r;
  r.add("baseline", [](const MelSpectrogram& m) { return baseline_vocode(m); });
  return r;
}

void VocoderRegistry::add(const std::string& name, VocoderFn fn) {
  if (name.empty()) throw UsageError("vocoder name must not be empty");
  if (!fn) throw UsageError("vocoder '" + name + "' has no callable");
  vocoders_[name] = std::move(fn);
}

std::vector<std::string> VocoderRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, fn] : vocoders_) out.push_back(name);
  return out;
}

Waveform VocoderRegistry::run(const std::string& name, const MelSpectrogram& mel) const {
  const auto it = vocoders_.find(name);
  if (it == vocoders_.end()) {
    std::string known;
    for (const auto& n : names()) known += (known.empty() ? "" : ", ") + n;
    throw UsageError("unknown vocoder '" + name + "' (known: " + known + ")");
  }
  mel.validate();
  Waveform w = it->second(mel);
  check_vocoder_contract(mel, w);
  return w;
}

}  // namespace dtts
