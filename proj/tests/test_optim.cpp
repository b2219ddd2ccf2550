#include <doctest.h>

#include <cmath>

#include "stx/errors.hpp"
#include "stx/optim.hpp"
#include "test_util.hpp"

using namespace stx;
using namespace stx::nn;
using test::random_tensor;

TEST_CASE("zero gradient leaves parameters fixed while the accumulator decays") {
  RmsProp opt;
  Tensor p = Tensor::full({3}, 2.0);
  ArrayXd g = ArrayXd::Constant(3, 1.0);
  std::vector<std::pair<std::string, Tensor*>> params{{"p", &p}};
  opt.step(params, {&g});
  const double r1 = opt.accumulator("p")(0);
  CHECK(r1 == doctest::Approx(0.01).epsilon(1e-12));

  ArrayXd zero = ArrayXd::Zero(3);
  const ArrayXd before = p.array();
  opt.step(params, {&zero});
  CHECK((p.array() - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK(opt.accumulator("p")(0) == doctest::Approx(0.99 * r1).epsilon(1e-12));
}

TEST_CASE("one scalar step from rest") {
  RmsConfig cfg;
  cfg.lr = 1.0;
  cfg.decay = 0.99;
  cfg.eps = 0.1;
  RmsProp opt(cfg);
  Tensor p = Tensor::full({1}, 0.0);
  ArrayXd g = ArrayXd::Constant(1, 1.0);
  opt.step({{"p", &p}}, {&g});
  CHECK(opt.accumulator("p")(0) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(p.array()(0) == doctest::Approx(-1.0 / std::sqrt(0.11)).epsilon(1e-15));
}

TEST_CASE("update equals the sigmoid-clipped Rprop form along a whole trajectory") {
  Rng rng(71);
  RmsConfig cfg;
  cfg.lr = 3e-3;
  RmsProp opt(cfg);
  Tensor p = random_tensor({8}, rng);
  // Shadow state for the dual form k (g/sqrt(r)) S(sqrt(r/eps)).
  ArrayXd shadow = p.array();
  ArrayXd r = ArrayXd::Zero(8);
  for (int step_i = 0; step_i < 100; ++step_i) {
    ArrayXd g(8);
    for (Index i = 0; i < 8; ++i) g(i) = rng.uniform(-2, 2);
    opt.step({{"p", &p}}, {&g});
    for (Index i = 0; i < 8; ++i) {
      r(i) = cfg.decay * r(i) + (1 - cfg.decay) * g(i) * g(i);
      shadow(i) -= cfg.lr * (g(i) / std::sqrt(r(i))) * clip_factor(r(i), cfg.eps);
    }
    CHECK((p.array() - shadow).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("clip factor boundary values") {
  CHECK(clip_factor(0.1, 0.1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(clip_factor(1e12, 0.1) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(clip_factor(0.0, 0.1) == 0.0);
  CHECK_THROWS_AS(clip_factor(1.0, 0.0), ContractError);
  CHECK_THROWS_AS(clip_factor(-1.0, 0.1), ContractError);
}

TEST_CASE("dual-form identity over random samples") {
  Rng rng(72);
  for (int i = 0; i < 20000; ++i) {
    const double g = rng.uniform(-4, 4);
    const double r = rng.uniform(1e-12, 5.0);
    const double eps = rng.uniform(1e-4, 2.0);
    const double direct = g / std::sqrt(r + eps);
    const double dual = (g / std::sqrt(r)) * clip_factor(r, eps);
    CHECK(std::abs(direct - dual) <= 1e-12 * std::max(1.0, std::abs(direct)));
  }
}

TEST_CASE("small-eps limit recovers the Rprop magnitude") {
  RmsConfig cfg;
  cfg.lr = 1.0;
  cfg.eps = 1e-12;
  RmsProp opt(cfg);
  Tensor p = Tensor::full({1}, 0.0);
  // Stabilize the accumulator with a constant gradient.
  ArrayXd g = ArrayXd::Constant(1, 0.5);
  for (int i = 0; i < 2000; ++i) opt.step({{"p", &p}}, {&g});
  const double r = opt.accumulator("p")(0);
  const double before = p.array()(0);
  opt.step({{"p", &p}}, {&g});
  const double update = before - p.array()(0);
  CHECK(update == doctest::Approx(cfg.lr * 0.5 / std::sqrt(r)).epsilon(1e-6));
}

TEST_CASE("per-parameter independence under reordering") {
  Rng rng(73);
  Tensor a1 = random_tensor({4}, rng), b1 = random_tensor({3}, rng);
  Tensor a2 = a1, b2 = b1;
  a2 = Tensor(a1.shape(), ArrayXd(a1.array()));
  b2 = Tensor(b1.shape(), ArrayXd(b1.array()));
  ArrayXd ga(4), gb(3);
  for (Index i = 0; i < 4; ++i) ga(i) = rng.uniform(-1, 1);
  for (Index i = 0; i < 3; ++i) gb(i) = rng.uniform(-1, 1);

  RmsProp o1, o2;
  o1.step({{"a", &a1}, {"b", &b1}}, {&ga, &gb});
  o2.step({{"b", &b2}, {"a", &a2}}, {&gb, &ga});
  CHECK((a1.array() - a2.array()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b1.array() - b2.array()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-finite gradients abort before any update") {
  RmsProp opt;
  Tensor a = Tensor::full({2}, 1.0);
  Tensor b = Tensor::full({2}, 2.0);
  ArrayXd good = ArrayXd::Constant(2, 0.5);
  ArrayXd bad = ArrayXd::Constant(2, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(opt.step({{"a", &a}, {"b", &b}}, {&good, &bad}), ContractError);
  CHECK(a.array()(0) == 1.0);  // untouched, including the earlier-listed parameter
  CHECK(b.array()(0) == 2.0);
}

TEST_CASE("optimizer state round-trips through tensors") {
  RmsProp opt;
  Tensor p = Tensor::full({3}, 1.0);
  ArrayXd g = ArrayXd::Constant(3, 0.7);
  opt.step({{"p", &p}}, {&g});
  auto state = opt.state_tensors();
  RmsProp restored;
  restored.load_state(state);
  CHECK((restored.accumulator("p") - opt.accumulator("p")).cwiseAbs().maxCoeff() == 0.0);
}
