#include "dtts/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace dtts::ag {
namespace {

thread_local bool g_grad_enabled = true;

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

// Builds a result node. The backward function is only retained when some
// parent participates in differentiation.
Var make_result(Matrix value, std::vector<Var> parents,
                std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node());
      node->backward_fn = std::move(fn);
    }
  }
  return Var(std::move(node));
}

inline bool wants(const Node& self, std::size_t i) {
  return self.parents[i]->requires_grad;
}

}  // namespace

Var::Var(Matrix value, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw std::logic_error("item() on non-scalar Var");
  }
  return node_->value(0, 0);
}

void Var::zero_grad() { node_->grad.resize(0, 0); }

void Var::backward() const {
  if (rows() != 1 || cols() != 1) {
    throw std::logic_error("backward() requires a scalar root");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer().array() += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    // Interior gradients are no longer needed once propagated.
    if (n->backward_fn) n->grad.resize(0, 0);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var detach(const Var& x) { return Var(x.value(), false); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimension mismatch");
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    const Matrix& B = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->grad_buffer().noalias() += self.grad * B.transpose();
    if (wants(self, 1)) self.parents[1]->grad_buffer().noalias() += A.transpose() * self.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  }
  Matrix out = a.value() * b.value().transpose();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& A = self.parents[0]->value;
    const Matrix& B = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->grad_buffer().noalias() += self.grad * B;
    if (wants(self, 1)) self.parents[1]->grad_buffer().noalias() += self.grad.transpose() * A;
  });
}

Var transpose(const Var& x) {
  Matrix out = x.value().transpose();
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer() += self.grad.transpose();
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->grad_buffer() += self.grad;
    if (wants(self, 1)) self.parents[1]->grad_buffer() += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->grad_buffer() += self.grad;
    if (wants(self, 1)) self.parents[1]->grad_buffer() -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0))
      self.parents[0]->grad_buffer() += self.grad.cwiseProduct(self.parents[1]->value);
    if (wants(self, 1))
      self.parents[1]->grad_buffer() += self.grad.cwiseProduct(self.parents[0]->value);
  });
}

Var div(const Var& a, const Var& b) {
  check_same_shape(a, b, "div");
  Matrix out = a.value().cwiseQuotient(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Matrix& B = self.parents[1]->value;
    if (wants(self, 0)) self.parents[0]->grad_buffer() += self.grad.cwiseQuotient(B);
    if (wants(self, 1)) {
      self.parents[1]->grad_buffer().array() -=
          self.grad.array() * self.value.array() / B.array();
    }
  });
}

Var scale(const Var& x, double s) {
  Matrix out = x.value() * s;
  return make_result(std::move(out), {x}, [s](Node& self) {
    self.parents[0]->grad_buffer() += self.grad * s;
  });
}

Var add_scalar(const Var& x, double s) {
  Matrix out = x.value().array() + s;
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer() += self.grad;
  });
}

Var add_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw std::invalid_argument("add_row: row must be 1 x cols");
  }
  Matrix out = x.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {x, row}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->grad_buffer() += self.grad;
    if (wants(self, 1)) self.parents[1]->grad_buffer() += self.grad.colwise().sum();
  });
}

Var mul_row(const Var& x, const Var& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw std::invalid_argument("mul_row: row must be 1 x cols");
  }
  Matrix out = x.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {x, row}, [](Node& self) {
    const Matrix& X = self.parents[0]->value;
    const Matrix& R = self.parents[1]->value;
    if (wants(self, 0))
      self.parents[0]->grad_buffer().array() += self.grad.array().rowwise() * R.row(0).array();
    if (wants(self, 1))
      self.parents[1]->grad_buffer() += self.grad.cwiseProduct(X).colwise().sum();
  });
}

Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer().array() +=
        (self.value.array() > 0.0).select(self.grad.array(), 0.0);
  });
}

Var sigmoid(const Var& x) {
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer().array() +=
        self.grad.array() * self.value.array() * (1.0 - self.value.array());
  });
}

Var tanh(const Var& x) {
  Matrix out = x.value().array().tanh().matrix();
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer().array() +=
        self.grad.array() * (1.0 - self.value.array().square());
  });
}

Var exp(const Var& x) {
  Matrix out = x.value().array().exp().matrix();
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer() += self.grad.cwiseProduct(self.value);
  });
}

Var log(const Var& x) {
  Matrix out = x.value().array().log().matrix();
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer() += self.grad.cwiseQuotient(self.parents[0]->value);
  });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return make_result(std::move(out), {x}, [](Node& self) {
    self.parents[0]->grad_buffer().array() += self.grad(0, 0);
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw std::invalid_argument("mean of empty matrix");
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return make_result(std::move(out), {x}, [n](Node& self) {
    self.parents[0]->grad_buffer().array() += self.grad(0, 0) / n;
  });
}

Var masked_l1(const Var& pred, const Matrix& target, const Matrix& mask) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      mask.rows() != target.rows() || mask.cols() != target.cols()) {
    throw std::invalid_argument("masked_l1: shape mismatch");
  }
  const double count = (mask.array() != 0.0).count();
  if (count == 0) throw std::invalid_argument("masked_l1: no valid elements");
  Matrix diff = pred.value() - target;
  Matrix out(1, 1);
  out(0, 0) = (mask.array() != 0.0).select(diff.array().abs(), 0.0).sum() / count;
  return make_result(std::move(out), {pred}, [diff = std::move(diff), mask, count](Node& self) {
    const double g = self.grad(0, 0) / count;
    self.parents[0]->grad_buffer().array() +=
        (mask.array() != 0.0).select(diff.array().sign() * g, 0.0);
  });
}

Var slice_rows(const Var& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw std::out_of_range("slice_rows out of range");
  }
  Matrix out = x.value().middleRows(begin, count);
  return make_result(std::move(out), {x}, [begin, count](Node& self) {
    self.parents[0]->grad_buffer().middleRows(begin, count) += self.grad;
  });
}

Var slice_cols(const Var& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) {
    throw std::out_of_range("slice_cols out of range");
  }
  Matrix out = x.value().middleCols(begin, count);
  return make_result(std::move(out), {x}, [begin, count](Node& self) {
    self.parents[0]->grad_buffer().middleCols(begin, count) += self.grad;
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Index rows = 0;
  const Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index r = 0;
    for (auto& p : self.parents) {
      const Index n = p->value.rows();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleRows(r, n);
      r += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Index cols = 0;
  const Index rows = parts.front().rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Index c = 0;
    for (auto& p : self.parents) {
      const Index n = p->value.cols();
      if (p->requires_grad) p->grad_buffer() += self.grad.middleCols(c, n);
      c += n;
    }
  });
}

Var reshape(const Var& x, Index rows, Index cols) {
  if (rows * cols != x.value().size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return make_result(std::move(out), {x}, [](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    Eigen::Map<Matrix>(g.data(), self.grad.rows(), self.grad.cols()) += self.grad;
  });
}

Var gather_rows(const Var& x, std::vector<Index> index) {
  Matrix out = Matrix::Zero(static_cast<Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) throw std::out_of_range("gather_rows index");
    if (index[i] >= 0) out.row(i) = x.value().row(index[i]);
  }
  return make_result(std::move(out), {x}, [index = std::move(index)](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) g.row(index[i]) += self.grad.row(i);
    }
  });
}

Var gather(const Var& x, std::shared_ptr<const std::vector<Index>> index,
           Index rows, Index cols) {
  if (static_cast<Index>(index->size()) != rows * cols) {
    throw std::invalid_argument("gather: index size mismatch");
  }
  Matrix out(rows, cols);
  const double* src = x.value().data();
  double* dst = out.data();
  const Index n = x.value().size();
  for (std::size_t k = 0; k < index->size(); ++k) {
    const Index i = (*index)[k];
    if (i >= n) throw std::out_of_range("gather index");
    dst[k] = i >= 0 ? src[i] : 0.0;
  }
  return make_result(std::move(out), {x}, [index](Node& self) {
    double* g = self.parents[0]->grad_buffer().data();
    const double* go = self.grad.data();
    for (std::size_t k = 0; k < index->size(); ++k) {
      const Index i = (*index)[k];
      if (i >= 0) g[i] += go[k];
    }
  });
}

Var mask_rows(const Var& x, const std::vector<std::uint8_t>& keep) {
  if (static_cast<Index>(keep.size()) != x.rows()) {
    throw std::invalid_argument("mask_rows: mask length mismatch");
  }
  Matrix out = x.value();
  for (Index r = 0; r < out.rows(); ++r) {
    if (!keep[r]) out.row(r).setZero();
  }
  return make_result(std::move(out), {x}, [keep](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (Index r = 0; r < g.rows(); ++r) {
      if (keep[r]) g.row(r) += self.grad.row(r);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 ||
      beta.cols() != cols) {
    throw std::invalid_argument("layer_norm: parameter shape mismatch");
  }
  Matrix normalized(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (row.array() - mu) * inv_std(r);
  }
  Matrix out = (normalized.array().rowwise() * gamma.value().row(0).array())
                   .rowwise() +
               beta.value().row(0).array();
  return make_result(
      std::move(out), {x, gamma, beta},
      [normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
        const Matrix& G = self.parents[1]->value;
        const Index cols = self.grad.cols();
        if (wants(self, 0)) {
          Matrix& gx = self.parents[0]->grad_buffer();
          for (Index r = 0; r < self.grad.rows(); ++r) {
            Eigen::RowVectorXd dn = self.grad.row(r).cwiseProduct(G.row(0));
            const double m1 = dn.mean();
            const double m2 = dn.cwiseProduct(normalized.row(r)).mean();
            gx.row(r).array() +=
                inv_std(r) * (dn.array() - m1 - normalized.row(r).array() * m2);
          }
          (void)cols;
        }
        if (wants(self, 1))
          self.parents[1]->grad_buffer() += self.grad.cwiseProduct(normalized).colwise().sum();
        if (wants(self, 2))
          self.parents[2]->grad_buffer() += self.grad.colwise().sum();
      });
}

Var masked_softmax_rows(const Var& x, const std::vector<std::uint8_t>& key_valid) {
  if (static_cast<Index>(key_valid.size()) != x.cols()) {
    throw std::invalid_argument("masked_softmax_rows: key mask length mismatch");
  }
  const Index rows = x.rows();
  const Index cols = x.cols();
  Matrix out = Matrix::Zero(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < cols; ++c) {
      if (key_valid[c]) mx = std::max(mx, x.value()(r, c));
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Index c = 0; c < cols; ++c) {
      if (key_valid[c]) {
        out(r, c) = std::exp(x.value()(r, c) - mx);
        z += out(r, c);
      }
    }
    out.row(r) /= z;
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Matrix& g = self.parents[0]->grad_buffer();
    for (Index r = 0; r < self.value.rows(); ++r) {
      const double dot = self.grad.row(r).dot(self.value.row(r));
      g.row(r).array() +=
          self.value.row(r).array() * (self.grad.row(r).array() - dot);
    }
  });
}

Var conv1d(const Var& x, const Var& weight, const Var& bias, SeqLayout layout,
           Index kernel) {
  const Index in = x.cols();
  const Index out_ch = weight.cols();
  if (x.rows() != layout.rows()) throw std::invalid_argument("conv1d: layout mismatch");
  if (weight.rows() != kernel * in) throw std::invalid_argument("conv1d: weight shape");
  if (bias.rows() != 1 || bias.cols() != out_ch) throw std::invalid_argument("conv1d: bias shape");
  const Index half = kernel / 2;
  const Index L = layout.length;
  Matrix out(layout.rows(), out_ch);
  out.rowwise() = bias.value().row(0);
  for (Index b = 0; b < layout.batch; ++b) {
    const Index base = b * L;
    for (Index k = 0; k < kernel; ++k) {
      const Index shift = k - half;
      const Index t0 = std::max<Index>(0, -shift);
      const Index t1 = std::min<Index>(L, L - shift);
      if (t1 <= t0) continue;
      out.middleRows(base + t0, t1 - t0).noalias() +=
          x.value().middleRows(base + t0 + shift, t1 - t0) *
          weight.value().middleRows(k * in, in);
    }
  }
  return make_result(std::move(out), {x, weight, bias}, [layout, kernel, in, half](Node& self) {
    const Matrix& X = self.parents[0]->value;
    const Matrix& W = self.parents[1]->value;
    const Index L = layout.length;
    for (Index b = 0; b < layout.batch; ++b) {
      const Index base = b * L;
      for (Index k = 0; k < kernel; ++k) {
        const Index shift = k - half;
        const Index t0 = std::max<Index>(0, -shift);
        const Index t1 = std::min<Index>(L, L - shift);
        if (t1 <= t0) continue;
        const auto g = self.grad.middleRows(base + t0, t1 - t0);
        if (wants(self, 0))
          self.parents[0]->grad_buffer().middleRows(base + t0 + shift, t1 - t0).noalias() +=
              g * W.middleRows(k * in, in).transpose();
        if (wants(self, 1))
          self.parents[1]->grad_buffer().middleRows(k * in, in).noalias() +=
              X.middleRows(base + t0 + shift, t1 - t0).transpose() * g;
      }
    }
    if (wants(self, 2)) self.parents[2]->grad_buffer() += self.grad.colwise().sum();
  });
}

Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias,
                     SeqLayout layout) {
  const Index C = x.cols();
  const Index kernel = weight.rows();
  if (weight.cols() != C || bias.cols() != C || bias.rows() != 1) {
    throw std::invalid_argument("depthwise_conv1d: parameter shape");
  }
  if (x.rows() != layout.rows()) throw std::invalid_argument("depthwise_conv1d: layout");
  const Index half = kernel / 2;
  const Index L = layout.length;
  Matrix out(layout.rows(), C);
  out.rowwise() = bias.value().row(0);
  for (Index b = 0; b < layout.batch; ++b) {
    const Index base = b * L;
    for (Index k = 0; k < kernel; ++k) {
      const Index shift = k - half;
      const Index t0 = std::max<Index>(0, -shift);
      const Index t1 = std::min<Index>(L, L - shift);
      if (t1 <= t0) continue;
      out.middleRows(base + t0, t1 - t0).array() +=
          x.value().middleRows(base + t0 + shift, t1 - t0).array().rowwise() *
          weight.value().row(k).array();
    }
  }
  return make_result(std::move(out), {x, weight, bias}, [layout, half](Node& self) {
    const Matrix& X = self.parents[0]->value;
    const Matrix& W = self.parents[1]->value;
    const Index L = layout.length;
    const Index kernel = W.rows();
    for (Index b = 0; b < layout.batch; ++b) {
      const Index base = b * L;
      for (Index k = 0; k < kernel; ++k) {
        const Index shift = k - half;
        const Index t0 = std::max<Index>(0, -shift);
        const Index t1 = std::min<Index>(L, L - shift);
        if (t1 <= t0) continue;
        const auto g = self.grad.middleRows(base + t0, t1 - t0);
        if (wants(self, 0))
          self.parents[0]->grad_buffer().middleRows(base + t0 + shift, t1 - t0).array() +=
              g.array().rowwise() * W.row(k).array();
        if (wants(self, 1))
          self.parents[1]->grad_buffer().row(k) +=
              g.cwiseProduct(X.middleRows(base + t0 + shift, t1 - t0)).colwise().sum();
      }
    }
    if (wants(self, 2)) self.parents[2]->grad_buffer() += self.grad.colwise().sum();
  });
}

Var dropout(const Var& x, double p, bool training, std::mt19937_64& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix m(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? s : 0.0;
  return mul(x, constant(std::move(m)));
}

}  // namespace dtts::ag
