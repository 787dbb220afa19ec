// Parameter storage and the small set of layers the acoustic model is built
// from. Layers hold Vars that alias entries of a ParamStore, so the store is
// the single owner of names, initial values and optimizer-visible state.
#pragma once

#include "dtts/autograd.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace dtts {

struct NamedParameter {
  std::string name;
  Var var;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

enum class InitKind { kZeros, kOnes, kUniform, kNormal };

struct Init {
  InitKind kind = InitKind::kZeros;
  double scale = 0.0;

  static Init zeros() { return {InitKind::kZeros, 0.0}; }
  static Init ones() { return {InitKind::kOnes, 0.0}; }
  static Init uniform(double bound) { return {InitKind::kUniform, bound}; }
  static Init normal(double stddev) { return {InitKind::kNormal, stddev}; }
  /// Glorot/Xavier uniform bound for the given fans.
  static Init xavier(Index fan_in, Index fan_out);
};

/// Owns every trainable tensor by hierarchical name. In shape-only mode no
/// storage is allocated, which lets large presets be counted and inspected
/// without materializing them.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0, bool shape_only = false);

  Var create(const std::string& name, Index rows, Index cols, Init init);

  const std::vector<NamedParameter>& parameters() const { return params_; }
  const NamedParameter* find(const std::string& name) const;
  bool shape_only() const { return shape_only_; }
  Index count() const;
  /// Parameter count grouped by the first `depth` dotted name components.
  std::map<std::string, Index> count_by_prefix(int depth) const;
  void zero_grad();
  /// Overwrites every parameter whose name starts with prefix.
  void fill_prefix(const std::string& prefix, double value);
  std::mt19937_64& init_rng() { return rng_; }

 private:
  std::vector<NamedParameter> params_;
  std::map<std::string, std::size_t> index_;
  std::mt19937_64 rng_;
  bool shape_only_;
};

/// Per-forward switches: dropout is active only when training.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  Var dropout(const Var& x, double p) const;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out,
         bool bias = true);
  Var operator()(const Var& x) const;
  const Var& weight() const { return weight_; }

 private:
  Var weight_;
  Var bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, Index dim);
  Var operator()(const Var& x) const;

 private:
  Var gamma_;
  Var beta_;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamStore& store, const std::string& name, Index in, Index out,
         Index kernel);
  Var operator()(const Var& x, SeqLayout layout) const;
  Index kernel() const { return kernel_; }

 private:
  Var weight_;
  Var bias_;
  Index kernel_ = 1;
};

class DepthwiseConv1d {
 public:
  DepthwiseConv1d() = default;
  DepthwiseConv1d(ParamStore& store, const std::string& name, Index channels,
                  Index kernel);
  Var operator()(const Var& x, SeqLayout layout) const;

 private:
  Var weight_;
  Var bias_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore& store, const std::string& name, Index count, Index dim);
  /// Throws std::out_of_range naming the table for any id outside it.
  Var operator()(const std::vector<Index>& ids) const;
  Index count() const { return count_; }

 private:
  std::string name_;
  Var table_;
  Index count_ = 0;
};

/// Single-layer GRU (reset, update, candidate gate order).
class Gru {
 public:
  Gru() = default;
  Gru(ParamStore& store, const std::string& name, Index in, Index hidden);
  /// Runs over the rows of x from a zero state; returns all hidden states.
  Var operator()(const Var& x) const;
  Index hidden() const { return hidden_; }

 private:
  Var w_ih_, w_hh_, b_ih_, b_hh_;
  Index hidden_ = 0;
};

/// 2-D convolution over an image stored as (height * width) x channels,
/// zero padding, square kernel.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, Index in, Index out,
         Index kernel, Index stride, Index padding);

  struct Output {
    Var values;
    Index height = 0;
    Index width = 0;
  };
  Output operator()(const Var& x, Index height, Index width) const;

 private:
  Var weight_;
  Var bias_;
  Index in_ = 0, kernel_ = 3, stride_ = 1, padding_ = 0;
};

}  // namespace dtts
