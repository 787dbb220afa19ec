// Phoneme embedding -> phoneme-side Conformer stack -> variance adaptor ->
// mel-side Conformer stack with an untied 80-dim projection after every block.
#pragma once

#include "dtts/conformer.hpp"
#include "dtts/nn.hpp"
#include "dtts/variance_adaptor.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dtts {

struct ModelConfig {
  std::string preset = "paper";
  int vocab_size = 64;
  int mel_channels = 80;
  ConformerConfig encoder;
  ConformerConfig decoder;
  VarianceConfig variance;

  /// 6 + 6 blocks, D = 384, feed-forward hidden 1536, depthwise kernel 7.
  static ModelConfig paper();
  /// Desk-scale: 2 + 2 blocks, D = 64, feed-forward hidden 256.
  static ModelConfig toy();
  /// "paper" or "toy"; throws std::invalid_argument otherwise.
  static ModelConfig from_preset(const std::string& name);

  int dim() const { return encoder.dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// One training or inference item. Targets are optional at inference.
struct PhonemeUtterance {
  std::string utt_id;
  std::vector<Index> phonemes;
  Index speaker = 0;
  Index language = 0;
  std::optional<Matrix> mel;     // T x 80
  std::vector<int> durations;    // frames per phoneme, sums to T
  std::vector<double> pitch;     // normalized log-F0 per phoneme
};

struct AcousticOutputs {
  std::vector<Var> mel_per_block;  // each (batch * T') x 80, zero on padding
  Var pred_pitch, pred_log_duration;
  Var pred_utterance, pred_phoneme;
  Var ref_utterance, ref_phoneme;  // training only
  SeqLayout phoneme_layout, frame_layout;
  std::vector<std::uint8_t> phoneme_mask, frame_mask;
  std::vector<Index> phoneme_lengths, frame_lengths;
  std::vector<std::vector<int>> durations;

  const Var& final_mel() const { return mel_per_block.back(); }
  /// Valid rows of the final mel for one item.
  Matrix item_mel(Index item) const;
};

class AcousticModel {
 public:
  explicit AcousticModel(const ModelConfig& config, std::uint64_t seed = 0,
                         bool shape_only = false);
  AcousticModel(const AcousticModel&) = delete;
  AcousticModel& operator=(const AcousticModel&) = delete;
  AcousticModel(AcousticModel&&) = default;
  AcousticModel& operator=(AcousticModel&&) = default;

  /// Teacher-forced pass: prosody from the reference encoders, pitch and
  /// durations from the targets. Throws DataError naming the utterance when
  /// targets are missing or inconsistent.
  AcousticOutputs forward_train(const std::vector<PhonemeUtterance>& batch,
                                const ForwardContext& ctx,
                                ConformerTrace* trace = nullptr) const;

  /// Predictor-driven pass for a single utterance. `overrides` may pin any
  /// stream; reference encoders are never consulted unless it carries a mel.
  AcousticOutputs forward_infer(const std::vector<Index>& phonemes, Index speaker, Index language,
                                const VarianceSources* overrides = nullptr,
                                ConformerTrace* trace = nullptr) const;

  /// Final-block mel, T' x 80, computed without recording gradients.
  Matrix synthesize(const std::vector<Index>& phonemes, Index speaker, Index language) const;

  Index count_parameters() const { return store_->count(); }
  /// Parameter count per top-level submodule.
  std::map<std::string, Index> parameter_breakdown() const { return store_->count_by_prefix(1); }

  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const ModelConfig& config() const { return config_; }
  const VarianceAdaptor& adaptor() const { return adaptor_; }
  int reference_encoder_calls() const { return adaptor_.reference_calls(); }
  const ConformerStack& encoder() const { return encoder_; }
  const ConformerStack& decoder() const { return decoder_; }
  std::size_t encoder_blocks() const { return encoder_.size(); }
  std::size_t decoder_blocks() const { return decoder_.size(); }

 private:
  struct PhonemeBatch {
    HiddenSequence hidden;
    std::vector<Index> lengths, speakers, languages;
  };
  PhonemeBatch encode(const std::vector<PhonemeUtterance>& batch, const BlockContext& ctx) const;
  AcousticOutputs decode(const PhonemeBatch& enc, const VarianceSources& sources,
                         const BlockContext& ctx) const;

  ModelConfig config_;
  std::unique_ptr<ParamStore> store_;
  Embedding phoneme_embedding_;
  ConformerStack encoder_;
  VarianceAdaptor adaptor_;
  ConformerStack decoder_;
  std::vector<Linear> mel_projections_;
};

}  // namespace dtts
