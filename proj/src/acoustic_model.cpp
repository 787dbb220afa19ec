#include "dtts/acoustic_model.hpp"

#include "dtts/errors.hpp"

#include <algorithm>
#include <stdexcept>

namespace dtts {
namespace {

nlohmann::json conformer_to_json(const ConformerConfig& c) {
  return {{"num_blocks", c.num_blocks},   {"dim", c.dim},
          {"ff_hidden", c.ff_hidden},     {"ff_kernel", c.ff_kernel},
          {"dw_kernel", c.dw_kernel},     {"heads", c.heads},
          {"dropout", c.dropout},         {"max_relative_position", c.max_relative_position}};
}

ConformerConfig conformer_from_json(const nlohmann::json& j, ConformerConfig c) {
  c.num_blocks = j.value("num_blocks", c.num_blocks);
  c.dim = j.value("dim", c.dim);
  c.ff_hidden = j.value("ff_hidden", c.ff_hidden);
  c.ff_kernel = j.value("ff_kernel", c.ff_kernel);
  c.dw_kernel = j.value("dw_kernel", c.dw_kernel);
  c.heads = j.value("heads", c.heads);
  c.dropout = j.value("dropout", c.dropout);
  c.max_relative_position = j.value("max_relative_position", c.max_relative_position);
  return c;
}

}  // namespace

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.preset = "toy";
  for (auto* side : {&c.encoder, &c.decoder}) {
    side->num_blocks = 2;
    side->dim = 64;
    side->ff_hidden = 256;
    side->heads = 4;
    side->dropout = 0.0;
  }
  auto& v = c.variance;
  v.utterance_dim = 32;
  v.phoneme_dim = 8;
  v.reference_channels = {8, 8, 16};
  v.reference_gru = 32;
  v.phoneme_reference_channels = 32;
  v.phoneme_reference_attention = 32;
  v.utterance_predictor_gru = 32;
  v.utterance_bottleneck = 16;
  v.phoneme_predictor_channels = 64;
  v.predictor_channels = 64;
  v.predictor_dropout = 0.0;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "toy") return toy();
  throw std::invalid_argument("unknown preset '" + name + "' (expected paper or toy)");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  variance.validate();
  if (encoder.dim != decoder.dim) throw std::invalid_argument("encoder and decoder dims differ");
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be positive");
  if (mel_channels != 80) throw std::invalid_argument("mel_channels must be 80");
}

nlohmann::json ModelConfig::to_json() const {
  const auto& v = variance;
  return {{"preset", preset},
          {"vocab_size", vocab_size},
          {"mel_channels", mel_channels},
          {"encoder", conformer_to_json(encoder)},
          {"decoder", conformer_to_json(decoder)},
          {"variance",
           {{"num_speakers", v.num_speakers},
            {"num_languages", v.num_languages},
            {"utterance_dim", v.utterance_dim},
            {"phoneme_dim", v.phoneme_dim},
            {"style_tokens", v.style_tokens},
            {"style_heads", v.style_heads},
            {"reference_channels", v.reference_channels},
            {"reference_gru", v.reference_gru},
            {"phoneme_reference_channels", v.phoneme_reference_channels},
            {"phoneme_reference_attention", v.phoneme_reference_attention},
            {"utterance_predictor_gru", v.utterance_predictor_gru},
            {"utterance_bottleneck", v.utterance_bottleneck},
            {"phoneme_predictor_channels", v.phoneme_predictor_channels},
            {"phoneme_predictor_kernel", v.phoneme_predictor_kernel},
            {"predictor_channels", v.predictor_channels},
            {"predictor_kernel", v.predictor_kernel},
            {"predictor_dropout", v.predictor_dropout}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c = from_preset(j.value("preset", std::string("paper")));
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.mel_channels = j.value("mel_channels", c.mel_channels);
  if (j.contains("encoder")) c.encoder = conformer_from_json(j["encoder"], c.encoder);
  if (j.contains("decoder")) c.decoder = conformer_from_json(j["decoder"], c.decoder);
  if (j.contains("variance")) {
    const auto& jv = j["variance"];
    auto& v = c.variance;
    v.num_speakers = jv.value("num_speakers", v.num_speakers);
    v.num_languages = jv.value("num_languages", v.num_languages);
    v.utterance_dim = jv.value("utterance_dim", v.utterance_dim);
    v.phoneme_dim = jv.value("phoneme_dim", v.phoneme_dim);
    v.style_tokens = jv.value("style_tokens", v.style_tokens);
    v.style_heads = jv.value("style_heads", v.style_heads);
    v.reference_channels = jv.value("reference_channels", v.reference_channels);
    v.reference_gru = jv.value("reference_gru", v.reference_gru);
    v.phoneme_reference_channels = jv.value("phoneme_reference_channels", v.phoneme_reference_channels);
    v.phoneme_reference_attention = jv.value("phoneme_reference_attention", v.phoneme_reference_attention);
    v.utterance_predictor_gru = jv.value("utterance_predictor_gru", v.utterance_predictor_gru);
    v.utterance_bottleneck = jv.value("utterance_bottleneck", v.utterance_bottleneck);
    v.phoneme_predictor_channels = jv.value("phoneme_predictor_channels", v.phoneme_predictor_channels);
    v.phoneme_predictor_kernel = jv.value("phoneme_predictor_kernel", v.phoneme_predictor_kernel);
    v.predictor_channels = jv.value("predictor_channels", v.predictor_channels);
    v.predictor_kernel = jv.value("predictor_kernel", v.predictor_kernel);
    v.predictor_dropout = jv.value("predictor_dropout", v.predictor_dropout);
  }
  return c;
}

Matrix AcousticOutputs::item_mel(Index item) const {
  return final_mel().value().middleRows(item * frame_layout.length,
                                        frame_lengths[static_cast<std::size_t>(item)]);
}

AcousticModel::AcousticModel(const ModelConfig& config, std::uint64_t seed, bool shape_only)
    : config_(config), store_(std::make_unique<ParamStore>(seed, shape_only)) {
  config_.validate();
  const Index D = config_.dim();
  phoneme_embedding_ = Embedding(*store_, "phoneme_embedding", config_.vocab_size, D);
  encoder_ = ConformerStack(*store_, "encoder", config_.encoder);
  adaptor_ = VarianceAdaptor(*store_, "adaptor", config_.variance, D, config_.mel_channels);
  decoder_ = ConformerStack(*store_, "decoder", config_.decoder);
  for (int i = 0; i < config_.decoder.num_blocks; ++i) {
    mel_projections_.emplace_back(*store_, "mel_projection." + std::to_string(i), D,
                                  config_.mel_channels);
  }
}

AcousticModel::PhonemeBatch AcousticModel::encode(const std::vector<PhonemeUtterance>& batch,
                                                  const BlockContext& ctx) const {
  if (batch.empty()) throw UsageError("empty batch");
  PhonemeBatch out;
  Index longest = 0;
  for (const auto& u : batch) {
    if (u.phonemes.empty()) throw DataError(u.utt_id + ": empty phoneme sequence");
    longest = std::max<Index>(longest, static_cast<Index>(u.phonemes.size()));
    out.lengths.push_back(static_cast<Index>(u.phonemes.size()));
    out.speakers.push_back(u.speaker);
    out.languages.push_back(u.language);
  }
  SeqLayout layout{static_cast<Index>(batch.size()), longest};
  std::vector<Index> ids(static_cast<std::size_t>(layout.rows()), 0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::copy(batch[b].phonemes.begin(), batch[b].phonemes.end(),
              ids.begin() + static_cast<Index>(b) * longest);
  }
  auto mask = make_row_mask(layout, out.lengths);
  Var x = ag::mask_rows(phoneme_embedding_(ids), mask);
  HiddenSequence h{x, layout, mask};
  out.hidden = encoder_(h, ctx).output;
  return out;
}

AcousticOutputs AcousticModel::decode(const PhonemeBatch& enc, const VarianceSources& sources,
                                      const BlockContext& ctx) const {
  AdaptorOutput va = adaptor_(enc.hidden, enc.lengths, enc.speakers, enc.languages, sources,
                              ctx.forward);
  StackOutput dec = decoder_(va.regulated.frames, ctx);

  AcousticOutputs out;
  const auto& frames = va.regulated.frames;
  for (std::size_t k = 0; k < dec.per_block.size(); ++k) {
    out.mel_per_block.push_back(
        ag::mask_rows(mel_projections_[k](dec.per_block[k].values), frames.mask));
  }
  out.pred_pitch = va.pred_pitch;
  out.pred_log_duration = va.pred_log_duration;
  out.pred_utterance = va.pred_utterance;
  out.pred_phoneme = va.pred_phoneme;
  out.ref_utterance = va.ref_utterance;
  out.ref_phoneme = va.ref_phoneme;
  out.phoneme_layout = enc.hidden.layout;
  out.phoneme_mask = enc.hidden.mask;
  out.phoneme_lengths = enc.lengths;
  out.frame_layout = frames.layout;
  out.frame_mask = frames.mask;
  out.frame_lengths = va.regulated.lengths;
  out.durations = std::move(va.durations);
  return out;
}

AcousticOutputs AcousticModel::forward_train(const std::vector<PhonemeUtterance>& batch,
                                             const ForwardContext& ctx,
                                             ConformerTrace* trace) const {
  for (const auto& u : batch) {
    if (!u.mel) throw DataError(u.utt_id + ": training item has no target mel");
    if (u.mel->cols() != config_.mel_channels) throw DataError(u.utt_id + ": mel must have 80 channels");
    if (u.durations.size() != u.phonemes.size() || u.pitch.size() != u.phonemes.size()) {
      throw DataError(u.utt_id + ": durations/pitch must have one entry per phoneme");
    }
    Index total = 0;
    for (int d : u.durations) total += d;
    if (total != u.mel->rows()) {
      throw DataError(u.utt_id + ": duration/mel length mismatch (durations sum to " +
                      std::to_string(total) + ", mel has " + std::to_string(u.mel->rows()) +
                      " frames)");
    }
  }
  BlockContext bctx{ctx, trace};
  PhonemeBatch enc = encode(batch, bctx);

  MelBatch mel;
  Index longest = 0;
  for (const auto& u : batch) {
    mel.lengths.push_back(u.mel->rows());
    longest = std::max(longest, u.mel->rows());
  }
  mel.layout = {static_cast<Index>(batch.size()), longest};
  mel.mask = make_row_mask(mel.layout, mel.lengths);
  mel.values = Matrix::Zero(mel.layout.rows(), config_.mel_channels);
  Matrix pitch = Matrix::Zero(enc.hidden.layout.rows(), 1);
  std::vector<std::vector<int>> durations;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& u = batch[b];
    mel.values.middleRows(static_cast<Index>(b) * longest, u.mel->rows()) = *u.mel;
    for (std::size_t i = 0; i < u.pitch.size(); ++i) {
      pitch(static_cast<Index>(b) * enc.hidden.layout.length + static_cast<Index>(i), 0) = u.pitch[i];
    }
    durations.push_back(u.durations);
  }

  VarianceSources sources;
  sources.reference_mel = &mel;
  sources.pitch = std::move(pitch);
  sources.durations = std::move(durations);
  return decode(enc, sources, bctx);
}

AcousticOutputs AcousticModel::forward_infer(const std::vector<Index>& phonemes, Index speaker,
                                             Index language, const VarianceSources* overrides,
                                             ConformerTrace* trace) const {
  if (phonemes.empty()) throw UsageError("cannot synthesize an empty phoneme sequence");
  PhonemeUtterance u;
  u.utt_id = "<infer>";
  u.phonemes = phonemes;
  u.speaker = speaker;
  u.language = language;
  BlockContext bctx{ForwardContext{}, trace};
  PhonemeBatch enc = encode({u}, bctx);
  const VarianceSources none;
  return decode(enc, overrides != nullptr ? *overrides : none, bctx);
}

Matrix AcousticModel::synthesize(const std::vector<Index>& phonemes, Index speaker,
                                 Index language) const {
  ag::NoGradGuard no_grad;
  AcousticOutputs out = forward_infer(phonemes, speaker, language);
  return out.item_mel(0);
}

}  // namespace dtts
