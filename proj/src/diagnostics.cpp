#include "dtts/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dtts {

double attention_toeplitz_deviation(const RelativeSelfAttention& attention, Index dim, Index length,
                                    std::uint64_t seed) {
  ag::NoGradGuard no_grad;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix row(1, dim);
  for (Index c = 0; c < dim; ++c) row(0, c) = n(rng);
  HiddenSequence x{ag::constant(row.replicate(length, 1)), SeqLayout{1, length},
                   std::vector<std::uint8_t>(static_cast<std::size_t>(length), 1)};
  ConformerTrace trace;
  attention(x, BlockContext{ForwardContext{}, &trace});
  double worst = 0.0;
  for (const Matrix& logits : trace.attention_logits) {
    for (Index offset = -(length - 1); offset < length; ++offset) {
      double sum = 0.0;
      Index count = 0;
      for (Index i = 0; i < length; ++i) {
        const Index j = i - offset;
        if (j < 0 || j >= length) continue;
        sum += logits(i, j);
        ++count;
      }
      const double mean = sum / static_cast<double>(count);
      for (Index i = 0; i < length; ++i) {
        const Index j = i - offset;
        if (j >= 0 && j < length) worst = std::max(worst, std::abs(logits(i, j) - mean));
      }
    }
  }
  return worst;
}

double padding_invariance_gap(const AcousticModel& model, const std::vector<PhonemeUtterance>& items) {
  ag::NoGradGuard no_grad;
  const AcousticOutputs batched = model.forward_train(items, ForwardContext{});
  double worst = 0.0;
  for (std::size_t b = 0; b < items.size(); ++b) {
    const AcousticOutputs solo = model.forward_train({items[b]}, ForwardContext{});
    const Matrix a = solo.item_mel(0);
    const Matrix c = batched.item_mel(static_cast<Index>(b));
    worst = std::max(worst, (a - c).cwiseAbs().maxCoeff());
  }
  return worst;
}

int inference_reference_calls(const AcousticModel& model, const std::vector<Index>& phonemes) {
  ag::NoGradGuard no_grad;
  const int before = model.reference_encoder_calls();
  model.forward_infer(phonemes, 0, 0);
  return model.reference_encoder_calls() - before;
}

nlohmann::json architecture_report(const AcousticModel& model) {
  const auto& c = model.config();
  std::vector<std::string> order;
  {
    ag::NoGradGuard no_grad;
    ConformerTrace trace;
    const Index dim = c.encoder.dim;
    HiddenSequence x{ag::constant(Matrix::Zero(4, dim)), SeqLayout{1, 4},
                     std::vector<std::uint8_t>(4, 1)};
    if (model.encoder_blocks() > 0) model.encoder().block(0)(x, BlockContext{ForwardContext{}, &trace});
    order = trace.modules;
  }
  nlohmann::json breakdown = nlohmann::json::object();
  for (const auto& [name, count] : model.parameter_breakdown()) breakdown[name] = count;
  return {{"preset", c.preset},
          {"encoder_blocks", model.encoder_blocks()},
          {"decoder_blocks", model.decoder_blocks()},
          {"dim", c.encoder.dim},
          {"ff_hidden", c.encoder.ff_hidden},
          {"dw_kernel", c.encoder.dw_kernel},
          {"heads", c.encoder.heads},
          {"mel_channels", c.mel_channels},
          {"block_order", order},
          {"parameters", model.count_parameters()},
          {"parameter_breakdown", breakdown}};
}

}  // namespace dtts
