#include "dtts/losses.hpp"

#include "dtts/variance_adaptor.hpp"

#include <cmath>
#include <stdexcept>

namespace dtts {
namespace {

// Banded Gaussian filter matrix implementing zero-padded "same" filtering.
Matrix gaussian_band(Index n) {
  const auto taps = ssim_gaussian();
  const Index half = kSsimWindow / 2;
  Matrix g = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = std::max<Index>(0, i - half); j <= std::min<Index>(n - 1, i + half); ++j) {
      g(i, j) = taps[static_cast<std::size_t>(j - i + half)];
    }
  }
  return g;
}

Var blur(const Var& x, const Var& rows, const Var& cols) {
  return ag::matmul(ag::matmul(rows, x), cols);
}

}  // namespace

Var l1(const Var& pred, const Matrix& target, const Matrix& mask) {
  return ag::masked_l1(pred, target, mask);
}

Var iterative_mel_loss(const std::vector<Var>& mel_per_block, const Matrix& target,
                       const Matrix& mask) {
  if (mel_per_block.empty()) throw std::invalid_argument("iterative_mel_loss: no blocks");
  Var total = l1(mel_per_block.front(), target, mask);
  for (std::size_t k = 1; k < mel_per_block.size(); ++k) {
    total = ag::add(total, l1(mel_per_block[k], target, mask));
  }
  return total;
}

std::vector<double> ssim_gaussian() {
  std::vector<double> g(kSsimWindow);
  double sum = 0.0;
  for (int k = 0; k < kSsimWindow; ++k) {
    const double x = k - kSsimWindow / 2;
    g[static_cast<std::size_t>(k)] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[static_cast<std::size_t>(k)];
  }
  for (double& v : g) v /= sum;
  return g;
}

Var ssim_with_range(const Var& pred, const Var& target, double lo, double hi) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw std::invalid_argument("ssim: shape mismatch");
  }
  const double range = hi - lo;
  if (!(range > 0.0)) throw std::invalid_argument("ssim: normalization range must be positive");
  Var rows = ag::constant(gaussian_band(pred.rows()));
  Var cols = ag::constant(gaussian_band(pred.cols()));
  Var x = ag::scale(ag::add_scalar(pred, -lo), 1.0 / range);
  Var y = ag::scale(ag::add_scalar(target, -lo), 1.0 / range);

  Var mu_x = blur(x, rows, cols);
  Var mu_y = blur(y, rows, cols);
  Var mu_xx = ag::mul(mu_x, mu_x);
  Var mu_yy = ag::mul(mu_y, mu_y);
  Var mu_xy = ag::mul(mu_x, mu_y);
  Var var_x = ag::sub(blur(ag::mul(x, x), rows, cols), mu_xx);
  Var var_y = ag::sub(blur(ag::mul(y, y), rows, cols), mu_yy);
  Var cov = ag::sub(blur(ag::mul(x, y), rows, cols), mu_xy);

  Var num = ag::mul(ag::add_scalar(ag::scale(mu_xy, 2.0), kSsimC1),
                    ag::add_scalar(ag::scale(cov, 2.0), kSsimC2));
  Var den = ag::mul(ag::add_scalar(ag::add(mu_xx, mu_yy), kSsimC1),
                    ag::add_scalar(ag::add(var_x, var_y), kSsimC2));
  return ag::mean(ag::div(num, den));
}

Var ssim(const Var& pred, const Matrix& target) {
  const double lo = target.minCoeff();
  const double hi = target.maxCoeff();
  if (hi - lo <= 0.0) {
    if (pred.value() == target) return ag::constant(Matrix::Ones(1, 1));
    return ssim_with_range(pred, ag::constant(target), lo, lo + 1e-8);
  }
  return ssim_with_range(pred, ag::constant(target), lo, hi);
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"l_utt", l_utt},   {"l_phone", l_phone}, {"l_pitch", l_pitch}, {"l_dur", l_dur},
          {"l_iter", l_iter}, {"l_ssim", l_ssim},   {"total", total}};
}

LossTargets make_loss_targets(const std::vector<PhonemeUtterance>& batch,
                              const AcousticOutputs& outputs) {
  const SeqLayout fl = outputs.frame_layout;
  const SeqLayout pl = outputs.phoneme_layout;
  LossTargets t;
  t.mel = Matrix::Zero(fl.rows(), 80);
  t.mel_mask = Matrix::Zero(fl.rows(), 80);
  t.pitch = Matrix::Zero(pl.rows(), 1);
  t.log_duration = Matrix::Zero(pl.rows(), 1);
  t.phoneme_mask = Matrix::Zero(pl.rows(), 1);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& u = batch[b];
    const Index item = static_cast<Index>(b);
    if (!u.mel) throw std::invalid_argument(u.utt_id + ": loss needs a target mel");
    t.mel.middleRows(item * fl.length, u.mel->rows()) = *u.mel;
    t.mel_mask.middleRows(item * fl.length, u.mel->rows()).setOnes();
    t.item_mels.push_back(*u.mel);
    for (std::size_t i = 0; i < u.phonemes.size(); ++i) {
      const Index r = item * pl.length + static_cast<Index>(i);
      t.pitch(r, 0) = u.pitch[i];
      t.log_duration(r, 0) = log_duration_target(u.durations[i]);
      t.phoneme_mask(r, 0) = 1.0;
    }
  }
  return t;
}

LossBreakdown total_loss(const AcousticOutputs& outputs, const LossTargets& targets,
                         const LossWeights& weights) {
  if (!outputs.ref_utterance.defined() || !outputs.ref_phoneme.defined()) {
    throw std::invalid_argument("total_loss needs training-mode outputs");
  }
  if (outputs.mel_per_block.empty()) throw std::invalid_argument("total_loss: no mel blocks");

  const Matrix& ref_u = outputs.ref_utterance.value();
  const Matrix& ref_p = outputs.ref_phoneme.value();
  Var l_utt = l1(outputs.pred_utterance, ref_u, Matrix::Ones(ref_u.rows(), ref_u.cols()));
  Matrix phone_mask = targets.phoneme_mask.replicate(1, ref_p.cols());
  Var l_phone = l1(outputs.pred_phoneme, ref_p, phone_mask);
  Var l_pitch = l1(outputs.pred_pitch, targets.pitch, targets.phoneme_mask);
  Var l_dur = l1(outputs.pred_log_duration, targets.log_duration, targets.phoneme_mask);
  Var l_iter = iterative_mel_loss(outputs.mel_per_block, targets.mel, targets.mel_mask);

  const Var& final_mel = outputs.final_mel();
  std::vector<Var> per_item;
  for (std::size_t b = 0; b < targets.item_mels.size(); ++b) {
    const Index len = targets.item_mels[b].rows();
    Var pred = ag::slice_rows(final_mel, static_cast<Index>(b) * outputs.frame_layout.length, len);
    per_item.push_back(ssim(pred, targets.item_mels[b]));
  }
  Var mean_ssim = ag::mean(ag::concat_rows(per_item));
  Var l_ssim = ag::add_scalar(ag::scale(mean_ssim, -1.0), 1.0);

  LossBreakdown out;
  Var total = ag::scale(l_utt, weights.utterance);
  total = ag::add(total, ag::scale(l_phone, weights.phoneme));
  total = ag::add(total, ag::scale(l_pitch, weights.pitch));
  total = ag::add(total, ag::scale(l_dur, weights.duration));
  total = ag::add(total, ag::scale(l_iter, weights.iterative));
  total = ag::add(total, ag::scale(l_ssim, weights.ssim));
  out.l_utt = l_utt.item();
  out.l_phone = l_phone.item();
  out.l_pitch = l_pitch.item();
  out.l_dur = l_dur.item();
  out.l_iter = l_iter.item();
  out.l_ssim = l_ssim.item();
  out.total = total.item();
  out.objective = total;
  return out;
}

}  // namespace dtts
