#include "dtts/conformer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dtts {
namespace {

void log_module(const BlockContext& ctx, const char* name) {
  if (ctx.trace != nullptr) ctx.trace->modules.emplace_back(name);
}

}  // namespace

void ConformerConfig::validate() const {
  if (num_blocks < 0) throw std::invalid_argument("num_blocks must be >= 0");
  if (dim <= 0 || ff_hidden <= 0) throw std::invalid_argument("dimensions must be positive");
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("dim must be divisible by heads");
  }
  if (dw_kernel % 2 == 0 || dw_kernel <= 0) throw std::invalid_argument("dw_kernel must be odd");
  if (ff_kernel % 2 == 0 || ff_kernel <= 0) throw std::invalid_argument("ff_kernel must be odd");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (max_relative_position < 1) throw std::invalid_argument("max_relative_position must be >= 1");
}

std::vector<std::uint8_t> make_row_mask(SeqLayout layout, const std::vector<Index>& lengths) {
  if (static_cast<Index>(lengths.size()) != layout.batch) {
    throw std::invalid_argument("make_row_mask: one length per batch item required");
  }
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(layout.rows()), 0);
  for (Index b = 0; b < layout.batch; ++b) {
    const Index len = lengths[static_cast<std::size_t>(b)];
    if (len < 0 || len > layout.length) throw std::invalid_argument("make_row_mask: bad length");
    std::fill_n(mask.begin() + b * layout.length, len, std::uint8_t{1});
  }
  return mask;
}

std::vector<std::uint8_t> item_mask(const std::vector<std::uint8_t>& mask, SeqLayout layout,
                                    Index item) {
  auto first = mask.begin() + item * layout.length;
  return {first, first + layout.length};
}

ConvFeedForward::ConvFeedForward(ParamStore& store, const std::string& name,
                                 const ConformerConfig& cfg)
    : norm_(store, name + ".norm", cfg.dim),
      expand_(store, name + ".conv1", cfg.dim, cfg.ff_hidden, cfg.ff_kernel),
      project_(store, name + ".conv2", cfg.ff_hidden, cfg.dim, cfg.ff_kernel),
      dropout_(cfg.dropout) {}

HiddenSequence ConvFeedForward::operator()(const HiddenSequence& x,
                                           const BlockContext& ctx) const {
  log_module(ctx, "conv_feed_forward");
  Var y = ag::mask_rows(norm_(x.values), x.mask);
  y = ag::relu(expand_(y, x.layout));
  y = ag::mask_rows(ctx.forward.dropout(y, dropout_), x.mask);
  y = ctx.forward.dropout(project_(y, x.layout), dropout_);
  Var out = ag::add(x.values, ag::scale(y, kResidualScale));
  return x.with_values(ag::mask_rows(out, x.mask));
}

DepthwiseConvModule::DepthwiseConvModule(ParamStore& store, const std::string& name,
                                         const ConformerConfig& cfg)
    : norm_(store, name + ".norm", cfg.dim),
      pointwise_in_(store, name + ".pointwise_in", cfg.dim, 2 * cfg.dim),
      depthwise_(store, name + ".depthwise", cfg.dim, cfg.dw_kernel),
      depthwise_norm_(store, name + ".depthwise_norm", cfg.dim),
      pointwise_out_(store, name + ".pointwise_out", cfg.dim, cfg.dim),
      dropout_(cfg.dropout) {}

HiddenSequence DepthwiseConvModule::operator()(const HiddenSequence& x,
                                               const BlockContext& ctx) const {
  log_module(ctx, "depthwise_conv");
  const Index D = x.dim();
  Var y = pointwise_in_(norm_(x.values));
  // GLU over the channel axis.
  y = ag::mul(ag::slice_cols(y, 0, D), ag::sigmoid(ag::slice_cols(y, D, D)));
  y = ag::mask_rows(y, x.mask);
  y = ag::mask_rows(depthwise_(y, x.layout), x.mask);
  y = ag::relu(depthwise_norm_(y));
  y = ctx.forward.dropout(pointwise_out_(y), dropout_);
  return x.with_values(ag::mask_rows(ag::add(x.values, y), x.mask));
}

RelativeSelfAttention::RelativeSelfAttention(ParamStore& store, const std::string& name,
                                             const ConformerConfig& cfg)
    : norm_(store, name + ".norm", cfg.dim),
      query_(store, name + ".query", cfg.dim, cfg.dim),
      key_(store, name + ".key", cfg.dim, cfg.dim),
      value_(store, name + ".value", cfg.dim, cfg.dim),
      output_(store, name + ".output", cfg.dim, cfg.dim),
      position_(store, name + ".position", cfg.dim, cfg.dim, /*bias=*/false),
      content_bias_(store.create(name + ".content_bias", cfg.heads, cfg.dim / cfg.heads,
                                 Init::zeros())),
      position_bias_(store.create(name + ".position_bias", cfg.heads, cfg.dim / cfg.heads,
                                  Init::zeros())),
      heads_(cfg.heads),
      max_offset_(cfg.max_relative_position),
      dropout_(cfg.dropout) {}

Matrix RelativeSelfAttention::relative_positions(Index length, Index dim, Index max_offset) {
  const Index rows = 2 * length - 1;
  Matrix table(rows, dim);
  for (Index m = 0; m < rows; ++m) {
    const Index offset = std::clamp(m - (length - 1), -max_offset, max_offset);
    for (Index i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      table(m, i) = std::sin(static_cast<double>(offset) * freq);
      if (i + 1 < dim) table(m, i + 1) = std::cos(static_cast<double>(offset) * freq);
    }
  }
  return table;
}

HiddenSequence RelativeSelfAttention::operator()(const HiddenSequence& x,
                                                 const BlockContext& ctx) const {
  log_module(ctx, "relative_self_attention");
  const Index L = x.layout.length;
  const Index D = x.dim();
  const Index dh = D / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var y = norm_(x.values);
  Var q = query_(y);
  Var k = key_(y);
  Var v = value_(y);
  Var pos = position_(ag::constant(relative_positions(L, D, max_offset_)));

  // bd(i, j) = full(i, (i - j) + L - 1): offsets read off a (2L-1)-wide row.
  auto shift = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(L * L));
  for (Index i = 0; i < L; ++i) {
    for (Index j = 0; j < L; ++j) {
      (*shift)[static_cast<std::size_t>(i * L + j)] = i * (2 * L - 1) + (i - j) + (L - 1);
    }
  }

  std::vector<Var> items;
  items.reserve(static_cast<std::size_t>(x.layout.batch));
  for (Index b = 0; b < x.layout.batch; ++b) {
    const auto keys_valid = item_mask(x.mask, x.layout, b);
    Var qb = ag::slice_rows(q, b * L, L);
    Var kb = ag::slice_rows(k, b * L, L);
    Var vb = ag::slice_rows(v, b * L, L);
    std::vector<Var> head_out;
    head_out.reserve(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      Var qh = ag::slice_cols(qb, h * dh, dh);
      Var kh = ag::slice_cols(kb, h * dh, dh);
      Var vh = ag::slice_cols(vb, h * dh, dh);
      Var ph = ag::slice_cols(pos, h * dh, dh);
      Var content = ag::matmul_nt(ag::add_row(qh, ag::slice_rows(content_bias_, h, 1)), kh);
      Var full = ag::matmul_nt(ag::add_row(qh, ag::slice_rows(position_bias_, h, 1)), ph);
      Var position = ag::gather(full, shift, L, L);
      Var logits = ag::scale(ag::add(content, position), inv_sqrt);
      if (ctx.trace != nullptr) ctx.trace->attention_logits.push_back(logits.value());
      Var weights = ctx.forward.dropout(ag::masked_softmax_rows(logits, keys_valid), dropout_);
      head_out.push_back(ag::matmul(weights, vh));
    }
    items.push_back(ag::concat_cols(head_out));
  }
  Var attended = items.size() == 1 ? items.front() : ag::concat_rows(items);
  attended = ctx.forward.dropout(output_(ag::mask_rows(attended, x.mask)), dropout_);
  return x.with_values(ag::mask_rows(ag::add(x.values, attended), x.mask));
}

ConformerBlock::ConformerBlock(ParamStore& store, const std::string& name,
                               const ConformerConfig& cfg)
    : ff_first_(store, name + ".ff1", cfg),
      conv_(store, name + ".conv", cfg),
      attention_(store, name + ".attention", cfg),
      ff_second_(store, name + ".ff2", cfg),
      final_norm_(store, name + ".final_norm", cfg.dim) {}

HiddenSequence ConformerBlock::operator()(const HiddenSequence& x,
                                          const BlockContext& ctx) const {
  HiddenSequence h = ff_first_(x, ctx);
  h = conv_(h, ctx);
  h = attention_(h, ctx);
  h = ff_second_(h, ctx);
  log_module(ctx, "final_norm");
  return h.with_values(ag::mask_rows(final_norm_(h.values), h.mask));
}

ConformerStack::ConformerStack(ParamStore& store, const std::string& name,
                               const ConformerConfig& cfg) {
  cfg.validate();
  blocks_.reserve(static_cast<std::size_t>(cfg.num_blocks));
  for (int i = 0; i < cfg.num_blocks; ++i) {
    blocks_.emplace_back(store, name + ".blocks." + std::to_string(i), cfg);
  }
}

StackOutput ConformerStack::operator()(const HiddenSequence& x, const BlockContext& ctx) const {
  StackOutput out{x, {}};
  out.per_block.reserve(blocks_.size());
  for (const auto& block : blocks_) {
    out.output = block(out.output, ctx);
    out.per_block.push_back(out.output);
  }
  return out;
}

}  // namespace dtts
