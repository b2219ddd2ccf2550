#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <vector>

#include "stx/tensor.hpp"

namespace stx::ga {

/// Element of the Clifford algebra Cl(R^dim) with the Euclidean relation
/// vw + wv = 2 (v. w) 1. Coefficients are kept sparsely per basis blade;
/// a blade is the bitset of basis vectors it contains (bit i = e_{i+1}),
/// and absent blades have coefficient zero. Oracle-scale only: dim <= 12.
class Multivector {
 public:
  explicit Multivector(int dim);
  static Multivector scalar(int dim, double value);
  static Multivector basis_vector(int dim, int i);  // e_{i+1}, 0-based i
  static Multivector from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);

  int dim() const { return dim_; }
  double coeff(std::uint32_t blade) const;
  void set_coeff(std::uint32_t blade, double value);
  const std::map<std::uint32_t, double>& coefficients() const { return coeff_; }

  Multivector operator+(const Multivector& other) const;
  Multivector operator-(const Multivector& other) const;
  Multivector scaled(double s) const;

  /// Projection onto blades of size k.
  Multivector grade(int k) const;
  /// Reverses the factor order of every blade.
  Multivector reversion() const;
  /// Coefficient of the empty blade.
  double scalar_part() const;
  /// sqrt of the grade-0 part of A^dagger A.
  double magnitude() const;

 private:
  int dim_;
  std::map<std::uint32_t, double> coeff_;
  void prune(std::uint32_t blade);
};

/// Geometric product with sign bookkeeping by transposition parity; e_i^2 = 1.
Multivector clifford_multiply(const Multivector& a, const Multivector& b);

/// Sign of e_A e_B in the canonical blade basis (+1 metric).
int blade_product_sign(std::uint32_t a, std::uint32_t b);

/// Unsigned scalar triple product |(a.b)c - (a.c)b + (b.c)a|.
double triple_product(const Eigen::Ref<const Eigen::VectorXd>& a,
                      const Eigen::Ref<const Eigen::VectorXd>& b,
                      const Eigen::Ref<const Eigen::VectorXd>& c);

/// The same quantity squared, as a polynomial in the pairwise dot products:
/// (a.b)^2 (c.c) + (b.c)^2 (a.a) + (a.c)^2 (b.b) - 2 (a.b)(a.c)(b.c).
double triple_product_squared_poly(const Eigen::Ref<const Eigen::VectorXd>& a,
                                   const Eigen::Ref<const Eigen::VectorXd>& b,
                                   const Eigen::Ref<const Eigen::VectorXd>& c);

/// k-fold unsigned scalar product: sqrt of the sum over i < k of the squared
/// magnitude of the grade-i part of the Clifford product v_1 ... v_k.
/// Vectors in more than 12 dimensions are first expressed in an orthonormal
/// basis of their span (a QR factor), which preserves all grade magnitudes;
/// after that reduction the oracle requires k <= 12.
double unsigned_scalar_product(const std::vector<Eigen::VectorXd>& vs);

/// Batched triple products <p_i, l1_j, l2_k> computed from pairwise dot
/// products and differentiable through the tensor module.
/// p: [N, d], l1: [M1, d], l2: [M2, d] -> [N, M1*M2] with the (j, k) pair
/// index in lexicographic order.
Tensor triple_logits(const Tensor& p, const Tensor& l1, const Tensor& l2);

}  // namespace stx::ga
