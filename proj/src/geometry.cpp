#include "stx/geometry.hpp"

#include <bit>
#include <cmath>

#include "stx/errors.hpp"

namespace stx::ga {

namespace {
constexpr int kMaxOracleDim = 12;
}

Multivector::Multivector(int dim) : dim_(dim) {
  if (dim < 1 || dim > kMaxOracleDim) {
    throw ValueError("Multivector: dim " + std::to_string(dim) + " outside oracle range [1," +
                     std::to_string(kMaxOracleDim) + "]");
  }
}

Multivector Multivector::scalar(int dim, double value) {
  Multivector m(dim);
  m.set_coeff(0, value);
  return m;
}

Multivector Multivector::basis_vector(int dim, int i) {
  if (i < 0 || i >= dim) throw ValueError("Multivector::basis_vector: index out of range");
  Multivector m(dim);
  m.set_coeff(std::uint32_t{1} << i, 1.0);
  return m;
}

Multivector Multivector::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Multivector m(static_cast<int>(v.size()));
  for (int i = 0; i < v.size(); ++i) m.set_coeff(std::uint32_t{1} << i, v(i));
  return m;
}

double Multivector::coeff(std::uint32_t blade) const {
  auto it = coeff_.find(blade);
  return it == coeff_.end() ? 0.0 : it->second;
}

void Multivector::set_coeff(std::uint32_t blade, double value) {
  if (blade >= (std::uint32_t{1} << dim_)) throw ValueError("Multivector: blade outside algebra");
  if (value == 0.0) {
    coeff_.erase(blade);
  } else {
    coeff_[blade] = value;
  }
}

void Multivector::prune(std::uint32_t blade) {
  auto it = coeff_.find(blade);
  if (it != coeff_.end() && it->second == 0.0) coeff_.erase(it);
}

Multivector Multivector::operator+(const Multivector& other) const {
  if (dim_ != other.dim_) throw ValueError("Multivector: dim mismatch");
  Multivector r = *this;
  for (const auto& [blade, c] : other.coeff_) {
    r.coeff_[blade] += c;
    r.prune(blade);
  }
  return r;
}

Multivector Multivector::operator-(const Multivector& other) const {
  return *this + other.scaled(-1.0);
}

Multivector Multivector::scaled(double s) const {
  Multivector r(dim_);
  if (s == 0.0) return r;
  for (const auto& [blade, c] : coeff_) r.coeff_[blade] = c * s;
  return r;
}

Multivector Multivector::grade(int k) const {
  if (k < 0 || k > dim_) throw ValueError("Multivector::grade: k out of range");
  Multivector r(dim_);
  for (const auto& [blade, c] : coeff_) {
    if (std::popcount(blade) == k) r.coeff_[blade] = c;
  }
  return r;
}

Multivector Multivector::reversion() const {
  Multivector r(dim_);
  for (const auto& [blade, c] : coeff_) {
    const int m = std::popcount(blade);
    const int sign = ((m * (m - 1) / 2) % 2 == 0) ? 1 : -1;
    r.coeff_[blade] = sign * c;
  }
  return r;
}

double Multivector::scalar_part() const { return coeff(0); }

double Multivector::magnitude() const {
  const double sq = clifford_multiply(reversion(), *this).scalar_part();
  return std::sqrt(std::max(sq, 0.0));
}

int blade_product_sign(std::uint32_t a, std::uint32_t b) {
  // Number of transpositions needed to interleave b's generators into a.
  int swaps = 0;
  for (std::uint32_t t = a >> 1; t != 0; t >>= 1) swaps += std::popcount(t & b);
  return (swaps % 2 == 0) ? 1 : -1;
}

Multivector clifford_multiply(const Multivector& a, const Multivector& b) {
  if (a.dim() != b.dim()) throw ValueError("clifford_multiply: dim mismatch");
  Multivector r(a.dim());
  for (const auto& [ba, ca] : a.coefficients()) {
    for (const auto& [bb, cb] : b.coefficients()) {
      const std::uint32_t blade = ba ^ bb;
      const double term = blade_product_sign(ba, bb) * ca * cb;
      r.set_coeff(blade, r.coeff(blade) + term);
    }
  }
  return r;
}

double triple_product(const Eigen::Ref<const Eigen::VectorXd>& a,
                      const Eigen::Ref<const Eigen::VectorXd>& b,
                      const Eigen::Ref<const Eigen::VectorXd>& c) {
  if (a.size() != b.size() || b.size() != c.size() || a.size() < 1) {
    throw ValueError("triple_product: dim mismatch");
  }
  const Eigen::VectorXd m = a.dot(b) * c - a.dot(c) * b + b.dot(c) * a;
  return m.norm();
}

double triple_product_squared_poly(const Eigen::Ref<const Eigen::VectorXd>& a,
                                   const Eigen::Ref<const Eigen::VectorXd>& b,
                                   const Eigen::Ref<const Eigen::VectorXd>& c) {
  if (a.size() != b.size() || b.size() != c.size() || a.size() < 1) {
    throw ValueError("triple_product_squared_poly: dim mismatch");
  }
  const double ab = a.dot(b), ac = a.dot(c), bc = b.dot(c);
  const double aa = a.dot(a), bb = b.dot(b), cc = c.dot(c);
  return ab * ab * cc + bc * bc * aa + ac * ac * bb - 2.0 * ab * ac * bc;
}

double unsigned_scalar_product(const std::vector<Eigen::VectorXd>& vs) {
  if (vs.empty()) throw ValueError("unsigned_scalar_product: need k >= 1 vectors");
  const Eigen::Index n = vs[0].size();
  for (const auto& v : vs) {
    if (v.size() != n) throw ValueError("unsigned_scalar_product: dim mismatch");
  }
  const int k = static_cast<int>(vs.size());

  std::vector<Eigen::VectorXd> reduced;
  const std::vector<Eigen::VectorXd>* use = &vs;
  if (n > kMaxOracleDim) {
    if (k > kMaxOracleDim) {
      throw ValueError("unsigned_scalar_product: k > " + std::to_string(kMaxOracleDim) +
                       " vectors in a large ambient dimension");
    }
    // Express the vectors in an orthonormal basis of their span; grade
    // magnitudes of the Clifford product are invariant under this isometry.
    Eigen::MatrixXd m(n, k);
    for (int i = 0; i < k; ++i) m.col(i) = vs[static_cast<std::size_t>(i)];
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd r =
        qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    reduced.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) reduced.push_back(r.col(i));
    use = &reduced;
  }

  Multivector prod = Multivector::from_vector((*use)[0]);
  for (std::size_t i = 1; i < use->size(); ++i) {
    prod = clifford_multiply(prod, Multivector::from_vector((*use)[i]));
  }
  double sumsq = 0.0;
  for (int i = 0; i < k && i <= prod.dim(); ++i) {
    const double mag = prod.grade(i).magnitude();
    sumsq += mag * mag;
  }
  return std::sqrt(sumsq);
}

Tensor triple_logits(const Tensor& p, const Tensor& l1, const Tensor& l2) {
  if (p.rank() != 2 || l1.rank() != 2 || l2.rank() != 2 || p.cols() != l1.cols() ||
      l1.cols() != l2.cols()) {
    throw ShapeError("triple_logits: vectors must share one dimension");
  }
  Tensor x = matmul(p, transpose(l1));
  Tensor y = matmul(p, transpose(l2));
  Tensor z = matmul(l1, transpose(l2));
  Tensor pp = row_dot(p, p);
  Tensor n1 = row_dot(l1, l1);
  Tensor n2 = row_dot(l2, l2);
  return sqrt_clamped(triple_poly(x, y, z, pp, n1, n2));
}

}  // namespace stx::ga
