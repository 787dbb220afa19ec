// Variance adaptor: explicit (speaker, language, pitch, duration) and
// implicit (utterance- and phoneme-level prosody) variation modelling.
//
// Training draws prosody from the two reference encoders and pitch/duration
// from ground truth; inference draws every stream from its predictor. Both
// paths run through VarianceAdaptor::operator(), which is the only place the
// streams are fused into the hidden sequence.
#pragma once

#include "dtts/conformer.hpp"
#include "dtts/nn.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dtts {

struct VarianceConfig {
  int num_speakers = 1;
  int num_languages = 1;
  int utterance_dim = 256;  // P_u
  int phoneme_dim = 32;     // P_p
  int style_tokens = 10;
  int style_heads = 4;
  std::vector<int> reference_channels = {32, 32, 64};
  int reference_gru = 128;
  int phoneme_reference_channels = 128;
  int phoneme_reference_attention = 128;
  int utterance_predictor_gru = 256;
  int utterance_bottleneck = 64;
  int phoneme_predictor_channels = 256;
  int phoneme_predictor_kernel = 3;
  int predictor_channels = 256;
  int predictor_kernel = 3;
  double predictor_dropout = 0.1;

  void validate() const;
};

/// Mel frames of a padded batch, aligned with a frame layout and mask.
struct MelBatch {
  Matrix values;  // (batch * max_frames) x 80
  SeqLayout layout;
  std::vector<std::uint8_t> mask;
  std::vector<Index> lengths;
};

struct StyleAttention {
  Var output;      // 1 x P_u
  Matrix weights;  // heads x tokens, rows sum to 1
  Matrix values;   // tokens x P_u, per-head slices are the attended values
};

/// Conv2d stack (stride 2, x3) over the mel image, GRU over the remaining
/// frames, final state as query into a multi-head style-token layer.
class UtteranceReferenceEncoder {
 public:
  UtteranceReferenceEncoder() = default;
  UtteranceReferenceEncoder(ParamStore& store, const std::string& name,
                            const VarianceConfig& cfg, Index mel_channels);
  /// mel: T x 80 for one utterance (valid frames only).
  StyleAttention operator()(const Var& mel) const;
  /// One 1 x P_u row per item, stacked to batch x P_u.
  Var operator()(const MelBatch& mel) const;
  int calls() const { return *calls_; }

 private:
  std::vector<Conv2d> convs_;
  Gru gru_;
  Linear query_, key_, value_;
  Var tokens_;
  int heads_ = 1;
  std::shared_ptr<int> calls_ = std::make_shared<int>(0);
};

struct PhonemeAttention {
  Var output;                    // (batch * N) x P_p
  std::vector<Matrix> weights;   // per item, N x max_frames
  Matrix frame_encodings;        // (batch * max_frames) x channels
  Matrix attended;               // (batch * N) x channels, before projection
};

/// Frame-level conv + GRU encoding of the mel, attended by phoneme hiddens.
class PhonemeReferenceEncoder {
 public:
  PhonemeReferenceEncoder() = default;
  PhonemeReferenceEncoder(ParamStore& store, const std::string& name,
                          const VarianceConfig& cfg, Index mel_channels, Index dim);
  PhonemeAttention operator()(const MelBatch& mel, const HiddenSequence& phonemes,
                              const ForwardContext& ctx) const;
  int calls() const { return *calls_; }

 private:
  Conv1d conv1_, conv2_;
  LayerNorm norm1_, norm2_;
  Gru gru_;
  Linear query_, key_, project_;
  std::shared_ptr<int> calls_ = std::make_shared<int>(0);
};

/// GRU over phoneme hiddens, final state through a bottleneck to P_u.
class UtteranceProsodyPredictor {
 public:
  UtteranceProsodyPredictor() = default;
  UtteranceProsodyPredictor(ParamStore& store, const std::string& name,
                            const VarianceConfig& cfg, Index dim);
  /// batch x P_u
  Var operator()(const HiddenSequence& phonemes, const std::vector<Index>& lengths) const;

 private:
  Gru gru_;
  Linear down_, up_;
};

/// Non-autoregressive: utterance vector broadcast-concatenated to every
/// phoneme, then a convolution stack.
class PhonemeProsodyPredictor {
 public:
  PhonemeProsodyPredictor() = default;
  PhonemeProsodyPredictor(ParamStore& store, const std::string& name,
                          const VarianceConfig& cfg, Index dim);
  Var operator()(const HiddenSequence& phonemes, const Var& utterance,
                 const ForwardContext& ctx) const;

 private:
  Conv1d conv1_, conv2_;
  LayerNorm norm1_, norm2_;
  Linear project_;
  double dropout_ = 0.0;
};

/// Two conv layers (ReLU, layer norm, dropout) and a scalar projection.
class VariancePredictor {
 public:
  VariancePredictor() = default;
  VariancePredictor(ParamStore& store, const std::string& name, const VarianceConfig& cfg,
                    Index dim);
  /// (batch * N) x 1, zero on padded phonemes.
  Var operator()(const HiddenSequence& phonemes, const ForwardContext& ctx) const;

 private:
  Conv1d conv1_, conv2_;
  LayerNorm norm1_, norm2_;
  Linear project_;
  double dropout_ = 0.0;
};

/// ln(d + 1)
double log_duration_target(int frames);
/// max(0, round_half_up(exp(pred) - 1))
int duration_from_log(double pred);

/// Repeats row i of each item durations[b][i] times. Input rows follow
/// phoneme_layout; the result is padded to the longest expansion. Throws
/// EmptyExpansionError when an item expands to zero frames.
struct RegulatedSequence {
  HiddenSequence frames;
  std::vector<Index> lengths;
};
RegulatedSequence length_regulate(const Var& hidden, SeqLayout phoneme_layout,
                                  const std::vector<std::vector<int>>& durations);

/// Where each stream's fused value comes from. Unset fields fall back to
/// the reference encoder (when reference_mel is given) or the predictor.
struct VarianceSources {
  const MelBatch* reference_mel = nullptr;
  std::optional<Var> utterance;                     // batch x P_u
  std::optional<Var> phoneme;                       // (batch * N) x P_p
  std::optional<Matrix> pitch;                      // (batch * N) x 1
  std::optional<std::vector<std::vector<int>>> durations;
};

struct AdaptorOutput {
  RegulatedSequence regulated;
  Var pred_utterance, pred_phoneme, pred_pitch, pred_log_duration;
  Var ref_utterance, ref_phoneme;  // undefined unless reference_mel given
  Var used_utterance, used_phoneme, used_pitch;
  std::vector<std::vector<int>> durations;
};

class VarianceAdaptor {
 public:
  VarianceAdaptor() = default;
  VarianceAdaptor(ParamStore& store, const std::string& name, const VarianceConfig& cfg,
                  Index dim, Index mel_channels);

  AdaptorOutput operator()(const HiddenSequence& phonemes, const std::vector<Index>& lengths,
                           const std::vector<Index>& speakers,
                           const std::vector<Index>& languages,
                           const VarianceSources& sources, const ForwardContext& ctx) const;

  /// Total invocations of either reference encoder.
  int reference_calls() const { return utterance_reference_.calls() + phoneme_reference_.calls(); }

  const UtteranceReferenceEncoder& utterance_reference() const { return utterance_reference_; }
  const PhonemeReferenceEncoder& phoneme_reference() const { return phoneme_reference_; }
  const UtteranceProsodyPredictor& utterance_predictor() const { return utterance_predictor_; }
  const PhonemeProsodyPredictor& phoneme_predictor() const { return phoneme_predictor_; }
  const Embedding& speakers() const { return speaker_; }
  const Embedding& languages() const { return language_; }

 private:
  Embedding speaker_, language_;
  UtteranceReferenceEncoder utterance_reference_;
  PhonemeReferenceEncoder phoneme_reference_;
  UtteranceProsodyPredictor utterance_predictor_;
  PhonemeProsodyPredictor phoneme_predictor_;
  VariancePredictor pitch_predictor_, duration_predictor_;
  Linear utterance_projection_, phoneme_projection_, pitch_projection_;
};

/// Broadcasts row b of a batch x C matrix over item b's rows of a layout.
Var broadcast_items(const Var& per_item, SeqLayout layout);

}  // namespace dtts
