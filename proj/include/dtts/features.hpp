// Audio and feature pipeline: resampling, log-mel analysis, F0 tracking and
// phoneme-level pitch targets. All functions are pure.
#pragma once

#include "dtts/autograd.hpp"

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace dtts {

inline constexpr int kAnalysisRate = 16000;
inline constexpr int kOutputRate = 48000;
inline constexpr int kMelChannels = 80;
inline constexpr int kHopSamples = 200;    // 12.5 ms at 16 kHz
inline constexpr int kWindowSamples = 800; // 50 ms at 16 kHz
inline constexpr int kFftBins = kWindowSamples / 2 + 1;
inline constexpr double kMelFloor = 1e-5;
inline constexpr double kPitchMinHz = 40.0;
inline constexpr double kPitchMaxHz = 800.0;
inline constexpr double kVoicingThreshold = 0.3;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kAnalysisRate;

  /// Throws DataError unless the rate is 16 or 48 kHz and samples are finite.
  void validate() const;
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// T x 80 natural-log mel energies at 16 kHz analysis, hop 200, window 800.
struct MelSpectrogram {
  Matrix frames;

  Index num_frames() const { return frames.rows(); }
  /// Throws DataError on wrong channel count, empty or non-finite content.
  void validate() const;
};

struct PitchContour {
  std::vector<double> f0;             // Hz, 0 where unvoiced
  std::vector<std::uint8_t> voiced;
};

struct PitchStats {
  double mean = 0.0;
  double stddev = 1.0;
};

/// T = floor(samples / 200) + 1.
Index mel_frame_count(Index samples);

/// Anti-aliased 3:1 decimation; output length ceil(len / 3).
Waveform resample_48k_to_16k(const Waveform& w);
/// Windowed-sinc 1:3 interpolation; output length 3 * len.
Waveform upsample_16k_to_48k(const Waveform& w);

/// 80 x 401 HTK-scale triangular filterbank spanning 0-8000 Hz.
const Matrix& mel_filterbank();
/// Center frequency in Hz of each mel channel.
std::vector<double> mel_center_frequencies();
/// Periodic Hann window of length 800.
const std::vector<double>& hann_window();

using ComplexMatrix =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Complex STFT (T x 401): periodic Hann window 800, hop 200, reflect
/// center padding.
ComplexMatrix stft(std::span<const double> samples);
/// Magnitude of stft().
Matrix stft_magnitude(std::span<const double> samples);
/// Weighted overlap-add inverse of stft(), trimmed to `length` samples.
std::vector<double> istft(const ComplexMatrix& spectrum, Index length);
MelSpectrogram compute_mel(const Waveform& w);

/// Normalized-autocorrelation F0 tracker, one value per mel frame.
PitchContour extract_pitch(const Waveform& w);

/// Per-phoneme mean log-F0 over each phoneme's frame span after linear
/// interpolation of unvoiced gaps. NaN for every phoneme when the contour
/// has no voiced frame.
std::vector<double> phoneme_log_pitch(const PitchContour& contour,
                                      std::span<const int> durations);
/// Mean and standard deviation over the finite entries of all utterances.
PitchStats pitch_stats(const std::vector<std::vector<double>>& log_pitch);
/// Standardizes log pitch; undefined (NaN) entries map to 0, the corpus mean.
std::vector<double> normalize_pitch(std::span<const double> log_pitch,
                                    const PitchStats& stats);
/// phoneme_log_pitch followed by normalize_pitch.
std::vector<double> phoneme_pitch_targets(const PitchContour& contour,
                                          std::span<const int> durations,
                                          const PitchStats& stats);

}  // namespace dtts
