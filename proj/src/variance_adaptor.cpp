#include "dtts/variance_adaptor.hpp"

#include "dtts/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dtts {

void VarianceConfig::validate() const {
  if (num_speakers < 1 || num_languages < 1) {
    throw std::invalid_argument("speaker and language tables need at least one entry");
  }
  if (utterance_dim < 1 || phoneme_dim < 1) throw std::invalid_argument("prosody dims must be positive");
  if (style_heads < 1 || utterance_dim % style_heads != 0) {
    throw std::invalid_argument("utterance_dim must be divisible by style_heads");
  }
  if (style_tokens < 1) throw std::invalid_argument("style_tokens must be positive");
  if (reference_channels.empty()) throw std::invalid_argument("reference_channels must be non-empty");
  for (int c : reference_channels) {
    if (c < 1) throw std::invalid_argument("reference channel counts must be positive");
  }
  if (predictor_kernel % 2 == 0 || phoneme_predictor_kernel % 2 == 0) {
    throw std::invalid_argument("predictor kernels must be odd");
  }
  if (predictor_dropout < 0.0 || predictor_dropout >= 1.0) {
    throw std::invalid_argument("predictor_dropout must be in [0, 1)");
  }
}

Var broadcast_items(const Var& per_item, SeqLayout layout) {
  if (per_item.rows() != layout.batch) {
    throw std::invalid_argument("broadcast_items: one row per batch item required");
  }
  std::vector<Index> index(static_cast<std::size_t>(layout.rows()));
  for (Index r = 0; r < layout.rows(); ++r) index[static_cast<std::size_t>(r)] = r / std::max<Index>(layout.length, 1);
  return ag::gather_rows(per_item, std::move(index));
}

// ---------------------------------------------------------------------------

UtteranceReferenceEncoder::UtteranceReferenceEncoder(ParamStore& store, const std::string& name,
                                                     const VarianceConfig& cfg,
                                                     Index mel_channels)
    : heads_(cfg.style_heads) {
  Index in = 1;
  Index width = mel_channels;
  for (std::size_t i = 0; i < cfg.reference_channels.size(); ++i) {
    const Index out = cfg.reference_channels[i];
    convs_.emplace_back(store, name + ".conv" + std::to_string(i), in, out, 3, 2, 1);
    in = out;
    width = (width + 2 - 3) / 2 + 1;
  }
  gru_ = Gru(store, name + ".gru", in * width, cfg.reference_gru);
  query_ = Linear(store, name + ".style.query", cfg.reference_gru, cfg.utterance_dim);
  key_ = Linear(store, name + ".style.key", cfg.utterance_dim, cfg.utterance_dim);
  value_ = Linear(store, name + ".style.value", cfg.utterance_dim, cfg.utterance_dim);
  tokens_ = store.create(name + ".style.tokens", cfg.style_tokens, cfg.utterance_dim,
                         Init::normal(0.5));
}

StyleAttention UtteranceReferenceEncoder::operator()(const Var& mel) const {
  ++*calls_;
  Index height = mel.rows();
  Index width = mel.cols();
  Var x = ag::reshape(mel, height * width, 1);
  for (const auto& conv : convs_) {
    auto out = conv(x, height, width);
    x = ag::relu(out.values);
    height = out.height;
    width = out.width;
  }
  x = ag::reshape(x, height, x.value().size() / height);
  Var states = gru_(x);
  Var summary = ag::slice_rows(states, height - 1, 1);

  Var q = query_(summary);
  Var bank = ag::tanh(tokens_);
  Var k = key_(bank);
  Var v = value_(bank);
  const Index P = q.cols();
  const Index dh = P / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::vector<std::uint8_t> all_tokens(static_cast<std::size_t>(k.rows()), 1);

  StyleAttention result;
  result.weights.resize(heads_, k.rows());
  std::vector<Var> heads;
  for (int h = 0; h < heads_; ++h) {
    Var logits = ag::scale(ag::matmul_nt(ag::slice_cols(q, h * dh, dh), ag::slice_cols(k, h * dh, dh)),
                           inv_sqrt);
    Var w = ag::masked_softmax_rows(logits, all_tokens);
    result.weights.row(h) = w.value().row(0);
    heads.push_back(ag::matmul(w, ag::slice_cols(v, h * dh, dh)));
  }
  result.output = ag::concat_cols(heads);
  result.values = v.value();
  return result;
}

Var UtteranceReferenceEncoder::operator()(const MelBatch& mel) const {
  std::vector<Var> rows;
  for (Index b = 0; b < mel.layout.batch; ++b) {
    const Index len = mel.lengths[static_cast<std::size_t>(b)];
    rows.push_back((*this)(ag::constant(mel.values.middleRows(b * mel.layout.length, len))).output);
  }
  return ag::concat_rows(rows);
}

// ---------------------------------------------------------------------------

PhonemeReferenceEncoder::PhonemeReferenceEncoder(ParamStore& store, const std::string& name,
                                                 const VarianceConfig& cfg, Index mel_channels,
                                                 Index dim)
    : conv1_(store, name + ".conv1", mel_channels, cfg.phoneme_reference_channels, 3),
      conv2_(store, name + ".conv2", cfg.phoneme_reference_channels,
             cfg.phoneme_reference_channels, 3),
      norm1_(store, name + ".norm1", cfg.phoneme_reference_channels),
      norm2_(store, name + ".norm2", cfg.phoneme_reference_channels),
      gru_(store, name + ".gru", cfg.phoneme_reference_channels, cfg.phoneme_reference_channels),
      query_(store, name + ".query", dim, cfg.phoneme_reference_attention),
      key_(store, name + ".key", cfg.phoneme_reference_channels, cfg.phoneme_reference_attention),
      project_(store, name + ".project", cfg.phoneme_reference_channels, cfg.phoneme_dim) {}

PhonemeAttention PhonemeReferenceEncoder::operator()(const MelBatch& mel,
                                                     const HiddenSequence& phonemes,
                                                     const ForwardContext& /*ctx*/) const {
  ++*calls_;
  const SeqLayout fl = mel.layout;
  Var y = ag::mask_rows(ag::constant(mel.values), mel.mask);
  y = ag::mask_rows(norm1_(ag::relu(conv1_(y, fl))), mel.mask);
  y = ag::mask_rows(norm2_(ag::relu(conv2_(y, fl))), mel.mask);

  std::vector<Var> encoded;
  for (Index b = 0; b < fl.batch; ++b) {
    const Index len = mel.lengths[static_cast<std::size_t>(b)];
    Var states = gru_(ag::slice_rows(y, b * fl.length, len));
    if (len < fl.length) {
      states = ag::concat_rows({states, ag::constant(Matrix::Zero(fl.length - len, states.cols()))});
    }
    encoded.push_back(states);
  }
  Var frames = encoded.size() == 1 ? encoded.front() : ag::concat_rows(encoded);
  Var keys = key_(frames);
  Var queries = query_(phonemes.values);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(keys.cols()));

  const SeqLayout pl = phonemes.layout;
  PhonemeAttention result;
  std::vector<Var> attended;
  for (Index b = 0; b < pl.batch; ++b) {
    Var logits = ag::scale(
        ag::matmul_nt(ag::slice_rows(queries, b * pl.length, pl.length),
                      ag::slice_rows(keys, b * fl.length, fl.length)),
        inv_sqrt);
    Var w = ag::masked_softmax_rows(logits, item_mask(mel.mask, fl, b));
    result.weights.push_back(w.value());
    attended.push_back(ag::matmul(w, ag::slice_rows(frames, b * fl.length, fl.length)));
  }
  Var summary = attended.size() == 1 ? attended.front() : ag::concat_rows(attended);
  result.frame_encodings = frames.value();
  result.attended = summary.value();
  result.output = ag::mask_rows(project_(summary), phonemes.mask);
  return result;
}

// ---------------------------------------------------------------------------

UtteranceProsodyPredictor::UtteranceProsodyPredictor(ParamStore& store, const std::string& name,
                                                     const VarianceConfig& cfg, Index dim)
    : gru_(store, name + ".gru", dim, cfg.utterance_predictor_gru),
      down_(store, name + ".bottleneck_down", cfg.utterance_predictor_gru, cfg.utterance_bottleneck),
      up_(store, name + ".bottleneck_up", cfg.utterance_bottleneck, cfg.utterance_dim) {}

Var UtteranceProsodyPredictor::operator()(const HiddenSequence& phonemes,
                                          const std::vector<Index>& lengths) const {
  std::vector<Var> finals;
  for (Index b = 0; b < phonemes.layout.batch; ++b) {
    const Index len = lengths[static_cast<std::size_t>(b)];
    Var states = gru_(ag::slice_rows(phonemes.values, b * phonemes.layout.length, len));
    finals.push_back(ag::slice_rows(states, len - 1, 1));
  }
  Var summary = finals.size() == 1 ? finals.front() : ag::concat_rows(finals);
  return up_(ag::relu(down_(summary)));
}

PhonemeProsodyPredictor::PhonemeProsodyPredictor(ParamStore& store, const std::string& name,
                                                 const VarianceConfig& cfg, Index dim)
    : conv1_(store, name + ".conv1", dim + cfg.utterance_dim, cfg.phoneme_predictor_channels,
             cfg.phoneme_predictor_kernel),
      conv2_(store, name + ".conv2", cfg.phoneme_predictor_channels,
             cfg.phoneme_predictor_channels, cfg.phoneme_predictor_kernel),
      norm1_(store, name + ".norm1", cfg.phoneme_predictor_channels),
      norm2_(store, name + ".norm2", cfg.phoneme_predictor_channels),
      project_(store, name + ".project", cfg.phoneme_predictor_channels, cfg.phoneme_dim),
      dropout_(cfg.predictor_dropout) {}

Var PhonemeProsodyPredictor::operator()(const HiddenSequence& phonemes, const Var& utterance,
                                        const ForwardContext& ctx) const {
  const auto& mask = phonemes.mask;
  Var x = ag::concat_cols({phonemes.values, broadcast_items(utterance, phonemes.layout)});
  x = ag::mask_rows(x, mask);
  x = ag::mask_rows(ctx.dropout(norm1_(ag::relu(conv1_(x, phonemes.layout))), dropout_), mask);
  x = ag::mask_rows(ctx.dropout(norm2_(ag::relu(conv2_(x, phonemes.layout))), dropout_), mask);
  return ag::mask_rows(project_(x), mask);
}

VariancePredictor::VariancePredictor(ParamStore& store, const std::string& name,
                                     const VarianceConfig& cfg, Index dim)
    : conv1_(store, name + ".conv1", dim, cfg.predictor_channels, cfg.predictor_kernel),
      conv2_(store, name + ".conv2", cfg.predictor_channels, cfg.predictor_channels,
             cfg.predictor_kernel),
      norm1_(store, name + ".norm1", cfg.predictor_channels),
      norm2_(store, name + ".norm2", cfg.predictor_channels),
      project_(store, name + ".project", cfg.predictor_channels, 1),
      dropout_(cfg.predictor_dropout) {}

Var VariancePredictor::operator()(const HiddenSequence& phonemes, const ForwardContext& ctx) const {
  const auto& mask = phonemes.mask;
  Var x = ag::mask_rows(ctx.dropout(norm1_(ag::relu(conv1_(phonemes.values, phonemes.layout))), dropout_), mask);
  x = ag::mask_rows(ctx.dropout(norm2_(ag::relu(conv2_(x, phonemes.layout))), dropout_), mask);
  return ag::mask_rows(project_(x), mask);
}

// ---------------------------------------------------------------------------

double log_duration_target(int frames) { return std::log(static_cast<double>(frames) + 1.0); }

int duration_from_log(double pred) {
  const double frames = std::floor(std::exp(pred) - 1.0 + 0.5);
  return frames > 0.0 ? static_cast<int>(std::min(frames, 1e6)) : 0;
}

RegulatedSequence length_regulate(const Var& hidden, SeqLayout phoneme_layout,
                                  const std::vector<std::vector<int>>& durations) {
  if (static_cast<Index>(durations.size()) != phoneme_layout.batch) {
    throw std::invalid_argument("length_regulate: one duration list per batch item required");
  }
  std::vector<Index> lengths;
  Index longest = 0;
  for (const auto& item : durations) {
    if (static_cast<Index>(item.size()) > phoneme_layout.length) {
      throw std::invalid_argument("length_regulate: more durations than phonemes");
    }
    Index total = 0;
    for (int d : item) {
      if (d < 0) throw DataError("negative duration");
      total += d;
    }
    if (total == 0) throw EmptyExpansionError();
    lengths.push_back(total);
    longest = std::max(longest, total);
  }
  SeqLayout frame_layout{phoneme_layout.batch, longest};
  std::vector<Index> index(static_cast<std::size_t>(frame_layout.rows()), -1);
  for (Index b = 0; b < frame_layout.batch; ++b) {
    Index t = 0;
    const auto& item = durations[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < item.size(); ++i) {
      for (int r = 0; r < item[i]; ++r, ++t) {
        index[static_cast<std::size_t>(b * longest + t)] = b * phoneme_layout.length + static_cast<Index>(i);
      }
    }
  }
  Var frames = ag::gather_rows(hidden, std::move(index));
  RegulatedSequence out;
  out.frames = {frames, frame_layout, make_row_mask(frame_layout, lengths)};
  out.lengths = std::move(lengths);
  return out;
}

// ---------------------------------------------------------------------------

VarianceAdaptor::VarianceAdaptor(ParamStore& store, const std::string& name,
                                 const VarianceConfig& cfg, Index dim, Index mel_channels)
    : speaker_(store, name + ".speaker_embedding", cfg.num_speakers, dim),
      language_(store, name + ".language_embedding", cfg.num_languages, dim),
      utterance_reference_(store, name + ".utterance_reference", cfg, mel_channels),
      phoneme_reference_(store, name + ".phoneme_reference", cfg, mel_channels, dim),
      utterance_predictor_(store, name + ".utterance_predictor", cfg, dim),
      phoneme_predictor_(store, name + ".phoneme_predictor", cfg, dim),
      pitch_predictor_(store, name + ".pitch_predictor", cfg, dim),
      duration_predictor_(store, name + ".duration_predictor", cfg, dim),
      utterance_projection_(store, name + ".utterance_projection", cfg.utterance_dim, dim),
      phoneme_projection_(store, name + ".phoneme_projection", cfg.phoneme_dim, dim),
      pitch_projection_(store, name + ".pitch_projection", 1, dim) {
  cfg.validate();
}

AdaptorOutput VarianceAdaptor::operator()(const HiddenSequence& phonemes,
                                          const std::vector<Index>& lengths,
                                          const std::vector<Index>& speakers,
                                          const std::vector<Index>& languages,
                                          const VarianceSources& sources,
                                          const ForwardContext& ctx) const {
  const SeqLayout layout = phonemes.layout;
  const auto& mask = phonemes.mask;
  AdaptorOutput out;

  // Explicit ids.
  Var ids = ag::add(speaker_(speakers), language_(languages));
  HiddenSequence h = phonemes.with_values(
      ag::mask_rows(ag::add(phonemes.values, broadcast_items(ids, layout)), mask));

  // Utterance-level prosody.
  out.pred_utterance = utterance_predictor_(h, lengths);
  if (sources.utterance) {
    out.used_utterance = *sources.utterance;
  } else if (sources.reference_mel != nullptr) {
    out.ref_utterance = utterance_reference_(*sources.reference_mel);
    out.used_utterance = out.ref_utterance;
  } else {
    out.used_utterance = out.pred_utterance;
  }
  h = h.with_values(ag::mask_rows(
      ag::add(h.values, broadcast_items(utterance_projection_(out.used_utterance), layout)), mask));

  // Phoneme-level prosody.
  out.pred_phoneme = phoneme_predictor_(h, out.used_utterance, ctx);
  if (sources.phoneme) {
    out.used_phoneme = *sources.phoneme;
  } else if (sources.reference_mel != nullptr) {
    out.ref_phoneme = phoneme_reference_(*sources.reference_mel, h, ctx).output;
    out.used_phoneme = out.ref_phoneme;
  } else {
    out.used_phoneme = out.pred_phoneme;
  }
  h = h.with_values(ag::mask_rows(ag::add(h.values, phoneme_projection_(out.used_phoneme)), mask));

  // Pitch.
  out.pred_pitch = pitch_predictor_(h, ctx);
  out.used_pitch = sources.pitch ? ag::constant(*sources.pitch) : out.pred_pitch;
  h = h.with_values(ag::mask_rows(ag::add(h.values, pitch_projection_(out.used_pitch)), mask));

  // Duration and expansion.
  out.pred_log_duration = duration_predictor_(h, ctx);
  if (sources.durations) {
    out.durations = *sources.durations;
  } else {
    out.durations.resize(static_cast<std::size_t>(layout.batch));
    for (Index b = 0; b < layout.batch; ++b) {
      auto& item = out.durations[static_cast<std::size_t>(b)];
      for (Index i = 0; i < lengths[static_cast<std::size_t>(b)]; ++i) {
        item.push_back(duration_from_log(out.pred_log_duration.value()(b * layout.length + i, 0)));
      }
    }
  }
  out.regulated = length_regulate(h.values, layout, out.durations);
  return out;
}

}  // namespace dtts
