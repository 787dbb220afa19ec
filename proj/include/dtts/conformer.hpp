// Improved Conformer block: convolutional feed-forward, depthwise
// convolution, relative-position self-attention, convolutional feed-forward,
// final layer norm. All activations are ReLU.
#pragma once

#include "dtts/autograd.hpp"
#include "dtts/nn.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dtts {

struct ConformerConfig {
  int num_blocks = 6;
  int dim = 384;
  int ff_hidden = 1536;
  int ff_kernel = 3;
  int dw_kernel = 7;
  int heads = 4;
  double dropout = 0.1;
  int max_relative_position = 1024;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Batch-major T x D values with a per-row validity mask. Masked rows are
/// exactly zero after every module.
struct HiddenSequence {
  Var values;
  SeqLayout layout;
  std::vector<std::uint8_t> mask;

  Index dim() const { return values.cols(); }
  HiddenSequence with_values(Var v) const { return {std::move(v), layout, mask}; }
};

/// Row mask for a padded batch: item b keeps its first lengths[b] rows.
std::vector<std::uint8_t> make_row_mask(SeqLayout layout, const std::vector<Index>& lengths);
/// Mask rows belonging to a single batch item.
std::vector<std::uint8_t> item_mask(const std::vector<std::uint8_t>& mask, SeqLayout layout, Index item);

/// Optional inspection hooks for tests and tooling.
struct ConformerTrace {
  /// Names of executed modules, in order.
  std::vector<std::string> modules;
  /// Pre-softmax attention logits, one matrix per (item, head) per attention call.
  std::vector<Matrix> attention_logits;
};

struct BlockContext {
  ForwardContext forward;
  ConformerTrace* trace = nullptr;
};

class ConvFeedForward {
 public:
  static constexpr double kResidualScale = 0.5;

  ConvFeedForward() = default;
  ConvFeedForward(ParamStore& store, const std::string& name, const ConformerConfig& cfg);
  HiddenSequence operator()(const HiddenSequence& x, const BlockContext& ctx) const;

 private:
  LayerNorm norm_;
  Conv1d expand_;
  Conv1d project_;
  double dropout_ = 0.0;
};

class DepthwiseConvModule {
 public:
  DepthwiseConvModule() = default;
  DepthwiseConvModule(ParamStore& store, const std::string& name, const ConformerConfig& cfg);
  HiddenSequence operator()(const HiddenSequence& x, const BlockContext& ctx) const;

 private:
  LayerNorm norm_;
  Linear pointwise_in_;
  DepthwiseConv1d depthwise_;
  LayerNorm depthwise_norm_;
  Linear pointwise_out_;
  double dropout_ = 0.0;
};

/// Multi-head self-attention with Transformer-XL relative sinusoidal
/// positions: logit(i, j) = [(q_i + u) . k_j + (q_i + v) . W_r r_{i-j}] / sqrt(d_head).
class RelativeSelfAttention {
 public:
  RelativeSelfAttention() = default;
  RelativeSelfAttention(ParamStore& store, const std::string& name, const ConformerConfig& cfg);
  HiddenSequence operator()(const HiddenSequence& x, const BlockContext& ctx) const;

  /// Sinusoidal table for offsets -(length-1) .. (length-1), clipped, row m
  /// holding offset m - (length - 1).
  static Matrix relative_positions(Index length, Index dim, Index max_offset);

 private:
  LayerNorm norm_;
  Linear query_, key_, value_, output_;
  Linear position_;
  Var content_bias_;   // u, heads x d_head
  Var position_bias_;  // v, heads x d_head
  int heads_ = 1;
  int max_offset_ = 1024;
  double dropout_ = 0.0;
};

class ConformerBlock {
 public:
  ConformerBlock() = default;
  ConformerBlock(ParamStore& store, const std::string& name, const ConformerConfig& cfg);
  HiddenSequence operator()(const HiddenSequence& x, const BlockContext& ctx) const;
  const RelativeSelfAttention& attention() const { return attention_; }

 private:
  ConvFeedForward ff_first_;
  DepthwiseConvModule conv_;
  RelativeSelfAttention attention_;
  ConvFeedForward ff_second_;
  LayerNorm final_norm_;
};

struct StackOutput {
  HiddenSequence output;
  std::vector<HiddenSequence> per_block;
};

class ConformerStack {
 public:
  ConformerStack() = default;
  ConformerStack(ParamStore& store, const std::string& name, const ConformerConfig& cfg);
  StackOutput operator()(const HiddenSequence& x, const BlockContext& ctx) const;
  std::size_t size() const { return blocks_.size(); }
  const ConformerBlock& block(std::size_t i) const { return blocks_.at(i); }

 private:
  std::vector<ConformerBlock> blocks_;
};

}  // namespace dtts
