#include <doctest.h>

#include <cmath>

#include "stx/errors.hpp"
#include "stx/geometry.hpp"
#include "test_util.hpp"

using namespace stx;
using namespace stx::ga;
using test::random_tensor;

namespace {

Eigen::VectorXd random_vec(Eigen::Index n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("clifford product basics") {
  Multivector e1 = Multivector::basis_vector(3, 0);
  Multivector e2 = Multivector::basis_vector(3, 1);

  Multivector sq = clifford_multiply(e1, e1);
  CHECK(sq.scalar_part() == 1.0);
  CHECK(sq.coefficients().size() == 1);

  Multivector anti = clifford_multiply(e1, e2) + clifford_multiply(e2, e1);
  CHECK(anti.coefficients().empty());  // e1 e2 + e2 e1 = 0

  CHECK_THROWS_AS(Multivector(13), ValueError);
  CHECK_THROWS_AS(clifford_multiply(e1, Multivector::basis_vector(4, 0)), ValueError);
  CHECK_THROWS_AS(e1.grade(4), ValueError);
}

TEST_CASE("reversion contracts a vector product to the product of norms") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Eigen::VectorXd> vs;
    double norm_product = 1.0;
    Multivector prod = Multivector::scalar(6, 1.0);
    for (int k = 0; k < 4; ++k) {
      Eigen::VectorXd v = random_vec(6, rng);
      norm_product *= v.squaredNorm();
      prod = clifford_multiply(prod, Multivector::from_vector(v));
      vs.push_back(v);
    }
    const double got = clifford_multiply(prod.reversion(), prod).scalar_part();
    CHECK(got == doctest::Approx(norm_product).epsilon(1e-9));
  }
}

TEST_CASE("magnitude of a plain vector is its norm") {
  Rng rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd v = random_vec(7, rng);
    CHECK(Multivector::from_vector(v).magnitude() == doctest::Approx(v.norm()).epsilon(1e-12));
  }
}

TEST_CASE("magnitude decomposes over grades") {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    Multivector a(5);
    for (std::uint32_t blade = 0; blade < 32; ++blade) {
      if (rng.bernoulli(0.5)) a.set_coeff(blade, rng.uniform(-2, 2));
    }
    double sum_sq = 0.0;
    for (int k = 0; k <= 5; ++k) {
      const double m = a.grade(k).magnitude();
      sum_sq += m * m;
    }
    const double mag = a.magnitude();
    CHECK(mag * mag == doctest::Approx(sum_sq).epsilon(1e-12));
  }
}

TEST_CASE("top-grade part matches the minor-determinant expansion") {
  Rng rng(34);
  const int n = 4, k = 3;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::VectorXd> vs;
    Multivector prod = Multivector::scalar(n, 1.0);
    for (int i = 0; i < k; ++i) {
      Eigen::VectorXd v = random_vec(n, rng);
      vs.push_back(v);
      prod = clifford_multiply(prod, Multivector::from_vector(v));
    }
    // Oracle: sum over column subsets of squared k x k determinants.
    Eigen::MatrixXd m(k, n);
    for (int i = 0; i < k; ++i) m.row(i) = vs[static_cast<std::size_t>(i)];
    double want = 0.0;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        for (int c = b + 1; c < n; ++c) {
          Eigen::Matrix3d sub;
          sub.col(0) = m.col(a);
          sub.col(1) = m.col(b);
          sub.col(2) = m.col(c);
          const double det = sub.determinant();
          want += det * det;
        }
      }
    }
    const double top = prod.grade(k).magnitude();
    CHECK(top * top == doctest::Approx(want).epsilon(1e-9));
  }
}

TEST_CASE("triple product hand values") {
  Eigen::Vector3d e1(1, 0, 0), e2(0, 1, 0), e3(0, 0, 1);
  CHECK(triple_product(e1, e2, e3) == doctest::Approx(0.0).epsilon(0));

  Eigen::Vector3d a(2, 0, 0);
  CHECK(triple_product(a, a, a) == doctest::Approx(8.0).epsilon(1e-12));

  Eigen::Vector2d short_vec(1, 2);
  CHECK_THROWS_AS(triple_product(e1, e2, short_vec), ValueError);
}

TEST_CASE("triple product routes agree: norm form, polynomial, Clifford oracle") {
  Rng rng(35);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd a = random_vec(8, rng), b = random_vec(8, rng), c = random_vec(8, rng);
    const double norm_form = triple_product(a, b, c);
    const double poly = std::sqrt(std::max(0.0, triple_product_squared_poly(a, b, c)));
    CHECK(test::rel_err(norm_form, poly, 1e-9) <= 1e-9);

    // |[abc]_1| from the Clifford product.
    Multivector prod = clifford_multiply(
        clifford_multiply(Multivector::from_vector(a), Multivector::from_vector(b)),
        Multivector::from_vector(c));
    const double oracle = prod.grade(1).magnitude();
    CHECK(test::rel_err(norm_form, oracle, 1e-9) <= 1e-9);
  }
}

TEST_CASE("k-fold unsigned scalar product") {
  Eigen::Vector2d a(1, 2), b(3, 4);
  CHECK(unsigned_scalar_product({a, b}) == doctest::Approx(11.0).epsilon(1e-12));

  Rng rng(36);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x = random_vec(6, rng), y = random_vec(6, rng), z = random_vec(6, rng);
    const double via_oracle = unsigned_scalar_product({x, y, z});
    const double via_triple = triple_product(x, y, z);
    CHECK(test::rel_err(via_oracle, via_triple, 1e-9) <= 1e-9);
  }

  CHECK_THROWS_AS(unsigned_scalar_product({}), ValueError);
  CHECK_THROWS_AS(unsigned_scalar_product({a, Eigen::Vector3d(1, 2, 3)}), ValueError);
}

TEST_CASE("squared product equals norm product minus squared simplex volume") {
  Rng rng(37);
  for (int k = 2; k <= 3; ++k) {
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<Eigen::VectorXd> vs;
      Multivector prod = Multivector::scalar(5, 1.0);
      double norm_sq = 1.0;
      for (int i = 0; i < k; ++i) {
        Eigen::VectorXd v = random_vec(5, rng);
        vs.push_back(v);
        norm_sq *= v.squaredNorm();
        prod = clifford_multiply(prod, Multivector::from_vector(v));
      }
      const double usp = unsigned_scalar_product(vs);
      const double top = prod.grade(k).magnitude();  // = k! Vol_k
      CHECK(usp * usp + top * top == doctest::Approx(norm_sq).epsilon(1e-9));
    }
  }
}

TEST_CASE("attention-kernel bounds and symmetries across dimensions") {
  Rng rng(38);
  for (Eigen::Index dim : {3, 8, 48}) {
    for (int trial = 0; trial < 1000; ++trial) {
      Eigen::VectorXd a = random_vec(dim, rng), b = random_vec(dim, rng), c = random_vec(dim, rng);
      const double norms = a.norm() * b.norm() * c.norm();
      const double val = unsigned_scalar_product({a, b, c});

      // (i) bounds
      CHECK(val >= 0.0);
      CHECK(val <= norms + 1e-9);

      // (iv) permutation invariance
      const double perm = unsigned_scalar_product({c, a, b});
      CHECK(std::abs(val - perm) <= 1e-12 * std::max(1.0, val));

      // (v) scaling homogeneity
      const double l1 = rng.uniform(-2, 2), l2 = rng.uniform(-2, 2), l3 = rng.uniform(-2, 2);
      const double scaled = unsigned_scalar_product(
          {(a * l1).eval(), (b * l2).eval(), (c * l3).eval()});
      CHECK(std::abs(scaled - std::abs(l1 * l2 * l3) * val) <=
            1e-12 * std::max(1.0, std::abs(scaled)));
    }
    // (ii) pairwise orthogonal triples vanish: orthonormalize three vectors.
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::MatrixXd m(dim, 3);
      for (int i = 0; i < 3; ++i) m.col(i) = random_vec(dim, rng);
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(dim, 3);
      const double la = rng.uniform(0.5, 2), lb = rng.uniform(0.5, 2), lc = rng.uniform(0.5, 2);
      const double val = unsigned_scalar_product(
          {(q.col(0) * la).eval(), (q.col(1) * lb).eval(), (q.col(2) * lc).eval()});
      CHECK(val <= 1e-9 * la * lb * lc);
    }
    // (iii) linearly dependent triples attain the product of norms.
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd v1 = random_vec(dim, rng), v2 = random_vec(dim, rng);
      Eigen::VectorXd v3 = rng.uniform(-2, 2) * v1 + rng.uniform(-2, 2) * v2;
      const double norms = v1.norm() * v2.norm() * v3.norm();
      const double val = unsigned_scalar_product({v1, v2, v3});
      CHECK(std::abs(val - norms) <= 1e-9 * std::max(1.0, norms));
    }
  }
}

TEST_CASE("dimension-3 cross-product oracle") {
  // <a,b,c>^2 = |a|^2|b|^2|c|^2 - (a . (b x c))^2, i.e. the angle form
  // |a||b||c| sqrt(1 - sin^2(theta_bc) cos^2(phi)) with phi the angle between
  // a and b x c.
  Rng rng(39);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::Vector3d a = random_vec(3, rng), b = random_vec(3, rng), c = random_vec(3, rng);
    const double val = triple_product(a, b, c);
    const Eigen::Vector3d bxc = b.cross(c);
    const double det = a.dot(bxc);
    const double expect_sq = a.squaredNorm() * b.squaredNorm() * c.squaredNorm() - det * det;
    CHECK(test::rel_err(val * val, expect_sq, 1e-9) <= 1e-9);

    if (bxc.norm() > 1e-6) {
      const double sin_bc = bxc.norm() / (b.norm() * c.norm());
      const double cos_phi = det / (a.norm() * bxc.norm());
      const double angle_form =
          a.norm() * b.norm() * c.norm() * std::sqrt(std::max(0.0, 1.0 - sin_bc * sin_bc * cos_phi * cos_phi));
      CHECK(test::rel_err(val, angle_form, 1e-9) <= 1e-9);
    }
  }
}

TEST_CASE("triple_logits batches the scalar triple product") {
  Rng rng(40);
  const Index n = 4, m = 3, d = 8;
  Tensor p = random_tensor({n, d}, rng);
  Tensor l1 = random_tensor({m, d}, rng);
  Tensor l2 = random_tensor({m, d}, rng);
  Tensor out = triple_logits(p, l1, l2);
  CHECK(out.shape() == Shape{n, m * m});
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      for (Index k = 0; k < m; ++k) {
        const double want = triple_product(p.mat().row(i).transpose(),
                                           l1.mat().row(j).transpose(),
                                           l2.mat().row(k).transpose());
        CHECK(test::rel_err(out.array()(i * m * m + j * m + k), want, 1e-9) <= 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(triple_logits(p, random_tensor({m, d + 1}, rng), l2), ShapeError);
}

TEST_CASE("triple_logits factors out vector lengths") {
  Rng rng(41);
  const Index d = 8;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor p = random_tensor({1, d}, rng);
    Tensor l1 = random_tensor({1, d}, rng);
    Tensor l2 = random_tensor({1, d}, rng);
    const double la = rng.uniform(-3, 3), lb = rng.uniform(-3, 3), lc = rng.uniform(-3, 3);
    const double base = triple_logits(p, l1, l2).value();
    const double scaled =
        triple_logits(scale(p, la), scale(l1, lb), scale(l2, lc)).value();
    CHECK(test::rel_err(scaled, std::abs(la * lb * lc) * base, 1e-9) <= 1e-9);
  }
}

TEST_CASE("triple_logits vanishes on an all-orthogonal batch") {
  const Index d = 6;
  Tensor p = Tensor::zeros({2, d});
  Tensor l1 = Tensor::zeros({2, d});
  Tensor l2 = Tensor::zeros({2, d});
  // p along e0/e1, l1 along e2/e3, l2 along e4/e5.
  p.mutable_array()(0) = 1.3;
  p.mutable_array()(d + 1) = -0.7;
  l1.mutable_array()(2) = 2.0;
  l1.mutable_array()(d + 3) = 1.1;
  l2.mutable_array()(4) = -1.9;
  l2.mutable_array()(d + 5) = 0.4;
  Tensor out = triple_logits(p, l1, l2);
  CHECK(out.array().cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("triple_logits gradient away from the zero singularity") {
  Rng rng(42);
  const Index n = 2, m = 2, d = 6;
  int done = 0;
  while (done < 10) {
    Tensor p = random_tensor({n, d}, rng);
    Tensor l1 = random_tensor({m, d}, rng);
    Tensor l2 = random_tensor({m, d}, rng);
    if (triple_logits(p, l1, l2).array().minCoeff() < 1e-3) continue;  // resample near zero
    const Tensor w = random_tensor({n, m * m}, rng);
    const double err = test::gradcheck(
        [&](const std::vector<Tensor>& q) { return sum(mul(triple_logits(q[0], q[1], q[2]), w)); },
        {p, l1, l2});
    CHECK(err < 1e-4);
    ++done;
  }
}
