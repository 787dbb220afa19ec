// Training objective: L = L_utt + L_phone + L_pitch + L_dur + L_iter + L_ssim.
#pragma once

#include "dtts/acoustic_model.hpp"
#include "dtts/autograd.hpp"

#include <json.hpp>

#include <vector>

namespace dtts {

/// Mean absolute error over valid entries; throws when nothing is valid.
Var l1(const Var& pred, const Matrix& target, const Matrix& mask);

/// Sum over blocks (not mean) of the masked L1 of each block's mel.
Var iterative_mel_loss(const std::vector<Var>& mel_per_block, const Matrix& target,
                       const Matrix& mask);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps (11, sigma 1.5).
std::vector<double> ssim_gaussian();

/// Mean SSIM of two T x 80 images after mapping [lo, hi] to [0, 1]. Local
/// statistics use a separable 11x11 Gaussian window with zero padding.
Var ssim_with_range(const Var& pred, const Var& target, double lo, double hi);

/// SSIM of pred against target, both normalized with target's min/max.
/// A constant target returns exactly 1 when pred equals it; otherwise the
/// range is floored at 1e-8.
Var ssim(const Var& pred, const Matrix& target);

struct LossWeights {
  double utterance = 1.0;
  double phoneme = 1.0;
  double pitch = 1.0;
  double duration = 1.0;
  double iterative = 1.0;
  double ssim = 1.0;
};

struct LossBreakdown {
  double l_utt = 0.0;
  double l_phone = 0.0;
  double l_pitch = 0.0;
  double l_dur = 0.0;
  double l_iter = 0.0;
  double l_ssim = 0.0;
  double total = 0.0;
  Var objective;  // differentiable total

  nlohmann::json to_json() const;
};

/// Padded targets aligned with a training forward pass.
struct LossTargets {
  Matrix mel;             // (batch * T') x 80
  Matrix mel_mask;        // same shape, 1 on valid frames
  Matrix pitch;           // (batch * N) x 1
  Matrix log_duration;    // (batch * N) x 1, ln(d + 1)
  Matrix phoneme_mask;    // (batch * N) x 1
  std::vector<Matrix> item_mels;  // valid frames per item
};

LossTargets make_loss_targets(const std::vector<PhonemeUtterance>& batch,
                              const AcousticOutputs& outputs);

/// Prosody losses compare predictors against detached reference-encoder
/// outputs; SSIM uses the final block only, averaged over items.
LossBreakdown total_loss(const AcousticOutputs& outputs, const LossTargets& targets,
                         const LossWeights& weights = {});

}  // namespace dtts
