#include "dtts/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dtts {

Init Init::xavier(Index fan_in, Index fan_out) {
  return uniform(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

ParamStore::ParamStore(std::uint64_t seed, bool shape_only)
    : rng_(seed), shape_only_(shape_only) {}

Var ParamStore::create(const std::string& name, Index rows, Index cols,
                       Init init) {
  if (index_.count(name)) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
  Matrix value;
  if (!shape_only_) {
    value.resize(rows, cols);
    switch (init.kind) {
      case InitKind::kZeros:
        value.setZero();
        break;
      case InitKind::kOnes:
        value.setOnes();
        break;
      case InitKind::kUniform: {
        std::uniform_real_distribution<double> dist(-init.scale, init.scale);
        for (Index i = 0; i < value.size(); ++i) value.data()[i] = dist(rng_);
        break;
      }
      case InitKind::kNormal: {
        std::normal_distribution<double> dist(0.0, init.scale);
        for (Index i = 0; i < value.size(); ++i) value.data()[i] = dist(rng_);
        break;
      }
    }
  }
  Var var(std::move(value), true);
  index_[name] = params_.size();
  params_.push_back({name, var, rows, cols});
  return var;
}

const NamedParameter* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Index ParamStore::count() const {
  Index n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::map<std::string, Index> ParamStore::count_by_prefix(int depth) const {
  std::map<std::string, Index> out;
  for (const auto& p : params_) {
    std::size_t pos = 0;
    for (int d = 0; d < depth && pos != std::string::npos; ++d) {
      pos = p.name.find('.', pos == 0 ? 0 : pos + 1);
    }
    out[p.name.substr(0, pos)] += p.size();
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void ParamStore::fill_prefix(const std::string& prefix, double value) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) p.var.mutable_value().setConstant(value);
  }
}

Var ForwardContext::dropout(const Var& x, double p) const {
  if (!training || p <= 0.0) return x;
  if (rng == nullptr) throw std::logic_error("training forward needs an rng");
  return ag::dropout(x, p, true, *rng);
}

Linear::Linear(ParamStore& store, const std::string& name, Index in, Index out,
               bool bias)
    : weight_(store.create(name + ".weight", in, out, Init::xavier(in, out))) {
  if (bias) bias_ = store.create(name + ".bias", 1, out, Init::zeros());
}

Var Linear::operator()(const Var& x) const {
  Var y = ag::matmul(x, weight_);
  return bias_.defined() ? ag::add_row(y, bias_) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, Index dim)
    : gamma_(store.create(name + ".gamma", 1, dim, Init::ones())),
      beta_(store.create(name + ".beta", 1, dim, Init::zeros())) {}

Var LayerNorm::operator()(const Var& x) const {
  return ag::layer_norm(x, gamma_, beta_);
}

Conv1d::Conv1d(ParamStore& store, const std::string& name, Index in, Index out,
               Index kernel)
    : weight_(store.create(name + ".weight", kernel * in, out,
                           Init::xavier(kernel * in, kernel * out))),
      bias_(store.create(name + ".bias", 1, out, Init::zeros())),
      kernel_(kernel) {
  if (kernel % 2 == 0) throw std::invalid_argument(name + ": kernel must be odd");
}

Var Conv1d::operator()(const Var& x, SeqLayout layout) const {
  return ag::conv1d(x, weight_, bias_, layout, kernel_);
}

DepthwiseConv1d::DepthwiseConv1d(ParamStore& store, const std::string& name,
                                 Index channels, Index kernel)
    : weight_(store.create(name + ".weight", kernel, channels,
                           Init::uniform(1.0 / std::sqrt(static_cast<double>(kernel))))),
      bias_(store.create(name + ".bias", 1, channels, Init::zeros())) {
  if (kernel % 2 == 0) throw std::invalid_argument(name + ": kernel must be odd");
}

Var DepthwiseConv1d::operator()(const Var& x, SeqLayout layout) const {
  return ag::depthwise_conv1d(x, weight_, bias_, layout);
}

Embedding::Embedding(ParamStore& store, const std::string& name, Index count,
                     Index dim)
    : name_(name),
      table_(store.create(name + ".table", count, dim, Init::normal(0.3))),
      count_(count) {}

Var Embedding::operator()(const std::vector<Index>& ids) const {
  for (Index id : ids) {
    if (id < 0 || id >= count_) {
      throw std::out_of_range(name_ + ": id " + std::to_string(id) +
                              " outside table of " + std::to_string(count_));
    }
  }
  return ag::gather_rows(table_, ids);
}

Gru::Gru(ParamStore& store, const std::string& name, Index in, Index hidden)
    : w_ih_(store.create(name + ".w_ih", in, 3 * hidden, Init::xavier(in, hidden))),
      w_hh_(store.create(name + ".w_hh", hidden, 3 * hidden, Init::xavier(hidden, hidden))),
      b_ih_(store.create(name + ".b_ih", 1, 3 * hidden, Init::zeros())),
      b_hh_(store.create(name + ".b_hh", 1, 3 * hidden, Init::zeros())),
      hidden_(hidden) {}

Var Gru::operator()(const Var& x) const {
  const Index H = hidden_;
  Var gates_x = ag::add_row(ag::matmul(x, w_ih_), b_ih_);
  Var h = ag::constant(Matrix::Zero(1, H));
  std::vector<Var> states;
  states.reserve(static_cast<std::size_t>(x.rows()));
  for (Index t = 0; t < x.rows(); ++t) {
    Var gx = ag::slice_rows(gates_x, t, 1);
    Var gh = ag::add_row(ag::matmul(h, w_hh_), b_hh_);
    Var r = ag::sigmoid(ag::add(ag::slice_cols(gx, 0, H), ag::slice_cols(gh, 0, H)));
    Var z = ag::sigmoid(ag::add(ag::slice_cols(gx, H, H), ag::slice_cols(gh, H, H)));
    Var n = ag::tanh(ag::add(ag::slice_cols(gx, 2 * H, H),
                             ag::mul(r, ag::slice_cols(gh, 2 * H, H))));
    // h' = n + z * (h - n)
    h = ag::add(n, ag::mul(z, ag::sub(h, n)));
    states.push_back(h);
  }
  return ag::concat_rows(states);
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, Index in, Index out,
               Index kernel, Index stride, Index padding)
    : weight_(store.create(name + ".weight", kernel * kernel * in, out,
                           Init::xavier(kernel * kernel * in, kernel * kernel * out))),
      bias_(store.create(name + ".bias", 1, out, Init::zeros())),
      in_(in),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {}

Conv2d::Output Conv2d::operator()(const Var& x, Index height, Index width) const {
  if (x.rows() != height * width || x.cols() != in_) {
    throw std::invalid_argument("Conv2d: input shape mismatch");
  }
  const Index out_h = (height + 2 * padding_ - kernel_) / stride_ + 1;
  const Index out_w = (width + 2 * padding_ - kernel_) / stride_ + 1;
  const Index patch = kernel_ * kernel_ * in_;
  auto index = std::make_shared<std::vector<Index>>(
      static_cast<std::size_t>(out_h * out_w * patch), -1);
  std::size_t k = 0;
  for (Index oy = 0; oy < out_h; ++oy) {
    for (Index ox = 0; ox < out_w; ++ox) {
      for (Index ky = 0; ky < kernel_; ++ky) {
        for (Index kx = 0; kx < kernel_; ++kx) {
          const Index iy = oy * stride_ + ky - padding_;
          const Index ix = ox * stride_ + kx - padding_;
          const bool inside = iy >= 0 && iy < height && ix >= 0 && ix < width;
          for (Index c = 0; c < in_; ++c, ++k) {
            if (inside) (*index)[k] = (iy * width + ix) * in_ + c;
          }
        }
      }
    }
  }
  Var patches = ag::gather(x, index, out_h * out_w, patch);
  Var y = ag::add_row(ag::matmul(patches, weight_), bias_);
  return {y, out_h, out_w};
}

}  // namespace dtts
