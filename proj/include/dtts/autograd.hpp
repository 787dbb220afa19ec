// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Every differentiable quantity in the acoustic model is a
// Var; parameters are leaf Vars with requires_grad set.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

namespace dtts {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Rows of a batch-major sequence matrix: item b occupies rows
/// [b * length, (b + 1) * length).
struct SeqLayout {
  Index batch = 1;
  Index length = 0;
  Index rows() const { return batch * length; }
};

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  /// Empty matrix when no gradient has reached this node.
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  void zero_grad();
  /// Seeds d(this)/d(this) = 1; this must be 1x1.
  void backward() const;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Matrix value);
Var detach(const Var& x);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& x);

// Elementwise arithmetic; shapes must match.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
/// Adds a 1 x C row to every row of x.
Var add_row(const Var& x, const Var& row);
/// Multiplies every row of x elementwise by a 1 x C row.
Var mul_row(const Var& x, const Var& row);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);
/// Mean absolute error over entries where mask != 0. Throws when the mask
/// selects nothing.
Var masked_l1(const Var& pred, const Matrix& target, const Matrix& mask);

// Shape manipulation.
Var slice_rows(const Var& x, Index begin, Index count);
Var slice_cols(const Var& x, Index begin, Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var reshape(const Var& x, Index rows, Index cols);
/// out.row(i) = x.row(index[i]), or zeros where index[i] < 0.
Var gather_rows(const Var& x, std::vector<Index> index);
/// Flat gather over row-major storage: out(k) = x(index[k]) or 0 when
/// index[k] < 0.
Var gather(const Var& x, std::shared_ptr<const std::vector<Index>> index,
           Index rows, Index cols);
/// Zeroes rows whose keep flag is 0.
Var mask_rows(const Var& x, const std::vector<std::uint8_t>& keep);

// Fused layers.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
               double eps = 1e-5);
/// Row-wise softmax restricted to columns with key_valid != 0. Rows with no
/// valid column produce zeros.
Var masked_softmax_rows(const Var& x, const std::vector<std::uint8_t>& key_valid);
/// Same-padded 1-D convolution along rows, independently per batch item.
/// weight is (kernel * in) x out, laid out tap-major.
Var conv1d(const Var& x, const Var& weight, const Var& bias, SeqLayout layout,
           Index kernel);
/// Same-padded depthwise convolution; weight is kernel x channels.
Var depthwise_conv1d(const Var& x, const Var& weight, const Var& bias,
                     SeqLayout layout);
Var dropout(const Var& x, double p, bool training, std::mt19937_64& rng);

}  // namespace ag

using ag::Var;

}  // namespace dtts
