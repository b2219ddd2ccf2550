#pragma once

#include <Eigen/Dense>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "stx/errors.hpp"

namespace stx {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using ArrayXd = Eigen::ArrayXd;
using MatrixRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

Index shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

/// Dense tensor of 64-bit reals, row-major. Copies share storage; operation
/// outputs are treated as immutable. A tensor optionally carries a handle to
/// the Tape node that produced it.
class Tensor {
 public:
  Tensor() : Tensor(Shape{}, ArrayXd::Zero(1)) {}
  Tensor(Shape shape, ArrayXd data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value) { return Tensor(Shape{}, ArrayXd::Constant(1, value)); }
  static Tensor from_matrix(const Eigen::Ref<const MatrixRM>& m);
  static Tensor from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_->size(); }
  Index dim(Index axis) const;

  Index rows() const;  // rank-2 only
  Index cols() const;

  const ArrayXd& array() const { return *data_; }
  /// Direct write access; single-writer by contract (optimizer updates,
  /// initialization). Never mutate an operation output that is on a tape.
  ArrayXd& mutable_array() { return *data_; }

  double value() const;  // scalar tensors

  ConstMatMap mat() const;  // rank-2 view
  ConstVecMap vec() const { return ConstVecMap(data_->data(), data_->size()); }

  bool all_finite() const { return data_->isFinite().all(); }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<ArrayXd> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Define-by-run gradient tape. Records one node per operation output in
/// topological order; backward() sweeps the nodes once in reverse.
/// A tape and the tensors recorded on it are confined to one execution
/// context; run independent tapes in parallel threads freely.
class Tape {
 public:
  using BackFn = std::function<void(const ArrayXd& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a watched input; the returned tensor shares storage
  /// with `value`. Mutating that storage between forward and backward is
  /// undefined.
  Tensor leaf(const Tensor& value);

  /// Runs reverse-mode accumulation from a scalar loss recorded on this tape.
  void backward(const Tensor& loss);

  /// Gradient of the last backward() loss w.r.t. `t`. Tensors not reachable
  /// from the loss get a zero gradient.
  const ArrayXd& grad(const Tensor& t) const;

  int num_nodes() const { return static_cast<int>(nodes_.size()); }

  // Recording interface used by the operation library.
  int record(Index num_values, std::vector<int> parents, BackFn back);
  void attach(Tensor& t, std::vector<int> parents, BackFn back);
  ArrayXd& grad_buffer(int node);

 private:
  struct Node {
    Index num_values;
    std::vector<int> parents;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::vector<ArrayXd> grads_;
  bool have_grads_ = false;
};

// ---- Operation library -----------------------------------------------------
// Free functions; each validates shapes, computes the value with Eigen and,
// when an input is on a tape, records the matching backward step. Mixing
// tensors from two different tapes is a contract error. There is no implicit
// broadcasting anywhere.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// a: [m, n], bias: [n]; adds bias to every row.
Tensor add_rowwise(const Tensor& a, const Tensor& bias);
Tensor scale(const Tensor& a, double c);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& a, Index axis, Index begin, Index len);
Tensor slice_rows(const Tensor& a, Index begin, Index len);
Tensor slice_cols(const Tensor& a, Index begin, Index len);
Tensor reshape(const Tensor& a, Shape shape);
Tensor softmax(const Tensor& a, Index axis);
Tensor log_softmax(const Tensor& a, Index axis);
/// Normalizes over the last axis (length >= 2): per-slice mean 0 / variance 1
/// up to the stabilizer, then gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max_over_axis(const Tensor& a, Index axis);
/// out[i] = dot(a.row(i), b.row(i)).
Tensor row_dot(const Tensor& a, const Tensor& b);
/// Elementwise sqrt of max(a, 0); the gradient denominator is clamped to
/// max(value, 1e-8) so the zero-value singularity stays finite.
Tensor sqrt_clamped(const Tensor& a);
/// Squared unsigned scalar triple products from pairwise dot products:
/// given X = P L1^T, Y = P L2^T, Z = L1 L2^T and squared row norms pp, l1, l2,
/// returns S[i, j*M2+k] = X(i,j)^2 l2(k) + Z(j,k)^2 pp(i) + Y(i,k)^2 l1(j)
///                        - 2 X(i,j) Y(i,k) Z(j,k).
Tensor triple_poly(const Tensor& x, const Tensor& y, const Tensor& z,
                   const Tensor& pp, const Tensor& l1, const Tensor& l2);
/// b3: [d, d, d] (indices: u, v, out); u: [mu, d]; v: [mv, d].
/// Returns [mu*mv, d] with row j*mv+k equal to B(u_j (x) v_k); the u index is
/// contracted first.
Tensor bilinear_pairs(const Tensor& b3, const Tensor& u, const Tensor& v);
/// x: [h, w, c] -> [(h-kh+1)*(w-kw+1), kh*kw*c], patches row-major.
Tensor im2col(const Tensor& x, Index kh, Index kw);
/// logits: [n, c]; labels: one class id per row. Mean negative log-likelihood.
Tensor cross_entropy_with_logits(const Tensor& logits,
                                 const std::vector<int>& labels);

}  // namespace stx
