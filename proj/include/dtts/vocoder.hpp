// 16 kHz-analysis mel in, 48 kHz waveform out. The baseline inverts the mel
// filterbank, recovers phase with Griffin-Lim and upsamples 3x; any other
// vocoder can be registered by name and is checked against the same
// length/rate contract on every call.
#pragma once

#include "dtts/features.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dtts {

inline constexpr int kSamplesPerFrame = kHopSamples * kOutputRate / kAnalysisRate;  // 600

struct BaselineVocoderOptions {
  int griffin_lim_iterations = 60;
  int nnls_iterations = 100;
  double peak = 0.95;
  std::uint64_t seed = 0;
};

/// Non-negative least-squares inverse of the mel filterbank applied to
/// exp(mel) - floor. Returns T x 401 linear magnitudes.
Matrix mel_to_linear(const Matrix& log_mel, int iterations = 100);

/// Griffin-Lim phase recovery at 16 kHz; returns 200 * T - 100 samples so
/// that re-analysis yields exactly T frames.
std::vector<double> griffin_lim(const Matrix& magnitude, int iterations, std::uint64_t seed);

Waveform baseline_vocode(const MelSpectrogram& mel, const BaselineVocoderOptions& options = {});

/// Throws ContractError unless w is 48 kHz with exactly 600 * T samples.
void check_vocoder_contract(const MelSpectrogram& mel, const Waveform& w);

using VocoderFn = std::function<Waveform(const MelSpectrogram&)>;

class VocoderRegistry {
 public:
  /// Registry pre-populated with "baseline".
  static VocoderRegistry with_baseline();

  void add(const std::string& name, VocoderFn fn);
  bool contains(const std::string& name) const { return vocoders_.count(name) != 0; }
  std::vector<std::string> names() const;
  /// Runs the named vocoder and validates its output.
  Waveform run(const std::string& name, const MelSpectrogram& mel) const;

 private:
  std::map<std::string, VocoderFn> vocoders_;
};

}  // namespace dtts
