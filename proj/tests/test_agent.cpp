#include <doctest.h>

#include <cmath>

#include "stx/agent.hpp"
#include "stx/boxworld.hpp"
#include "stx/errors.hpp"
#include "test_util.hpp"

using namespace stx;
using namespace stx::nn;

namespace {

Image random_obs(int rows, int cols, Rng& rng) {
  Image img = make_image(rows, cols);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

Image board_obs(std::uint64_t seed) {
  env::EpisodeConfig cfg;
  cfg.solution_length = 2;
  cfg.bridge = env::BridgeSpec{1, 3};
  return env::render(env::generate(cfg, seed));
}

}  // namespace

TEST_CASE("entity index formula and its inverse") {
  CHECK(entity_of_tile(1, 1, 7, 9) == 0);
  CHECK(entity_of_tile(2, 1, 7, 9) == 8);
  CHECK(entity_of_tile(5, 8, 7, 9) == 39);
  CHECK_THROWS_AS(entity_of_tile(6, 1, 7, 9), ValueError);
  CHECK_THROWS_AS(entity_of_tile(1, 9, 7, 9), ValueError);
  for (int y = 1; y <= 5; ++y) {
    for (int x = 1; x <= 8; ++x) {
      const auto [yy, xx] = tile_of_entity(entity_of_tile(y, x, 7, 9), 7, 9);
      CHECK(yy == y);
      CHECK(xx == x);
    }
  }
}

TEST_CASE("the 7x10 observation yields 40 entities") {
  Rng rng(80);
  AgentWeights w = AgentWeights::init(AgentConfig::simplicial(), rng);
  AgentOutput out = forward(board_obs(1), w, /*want_maps=*/true);
  CHECK(out.logits.shape() == Shape{1, 4});
  CHECK(out.value.shape() == Shape{1});
  REQUIRE(out.maps.size() == 2);  // two block iterations
  const AttentionMaps& maps = out.maps[0][0];
  CHECK(maps.one[0].std_probs.rows() == 40);
  CHECK(maps.one[0].virt_probs.rows() == 2);
  CHECK(maps.one[0].virt_probs.cols() == 42);
  CHECK(maps.two_probs.rows() == 4);
  CHECK(maps.two_probs.cols() == 40);
}

TEST_CASE("forward rejects observations that are too small") {
  Rng rng(81);
  AgentWeights w = AgentWeights::init(AgentConfig::relational(), rng);
  Image tiny = make_image(3, 5);
  CHECK_THROWS_AS(forward(tiny, w), ShapeError);
}

TEST_CASE("shape chain holds across board sizes") {
  Rng rng(82);
  AgentWeights w = AgentWeights::init(AgentConfig::simplicial(), rng);
  for (auto [r, c] : {std::pair{4, 3}, {4, 12}, {7, 9}, {9, 5}, {12, 3}, {12, 12}}) {
    Image obs = random_obs(r, c + 1, rng);
    AgentOutput out = forward(obs, w, true);
    const Index n = (r - 2) * (c - 1);
    CHECK(out.maps[0][0].one[0].std_probs.rows() == n);
    CHECK(out.maps[0][0].two_probs.cols() == n);
    CHECK(out.logits.all_finite());
    CHECK(out.value.all_finite());
  }
}

TEST_CASE("an all-zero image ignores the convolution kernels") {
  Rng rng(83);
  for (Variant variant : {Variant::Relational, Variant::Simplicial}) {
    AgentConfig cfg = variant == Variant::Simplicial ? AgentConfig::simplicial()
                                                     : AgentConfig::relational();
    AgentWeights w = AgentWeights::init(cfg, rng);
    AgentWeights zeroed = w;
    zeroed.conv1_k = Tensor::zeros(w.conv1_k.shape());
    zeroed.conv2_k = Tensor::zeros(w.conv2_k.shape());
    Image black = make_image(7, 10);
    AgentOutput a = forward(black, w);
    AgentOutput b = forward(black, zeroed);
    CHECK((a.logits.array() - b.logits.array()).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.value.array() - b.value.array()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("batched forward equals per-sample forwards") {
  Rng rng(84);
  AgentWeights w = AgentWeights::init(AgentConfig::simplicial(), rng);
  std::vector<Image> obs;
  for (std::uint64_t s = 0; s < 3; ++s) obs.push_back(board_obs(s));
  std::vector<const Image*> ptrs{&obs[0], &obs[1], &obs[2]};
  AgentOutput batched = forward_batch(ptrs, w);
  for (Index i = 0; i < 3; ++i) {
    AgentOutput single = forward(obs[static_cast<std::size_t>(i)], w);
    CHECK((batched.logits.mat().row(i) - single.logits.mat().row(0)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::abs(batched.value.array()(i) - single.value.array()(0)) <= 1e-12);
  }
}

TEST_CASE("agent gradients match finite differences for every parameter group") {
  Image obs = board_obs(17);
  for (int seed = 0; seed < 2; ++seed) {
    Rng rng(90 + seed);
    AgentWeights w = AgentWeights::init(AgentConfig::simplicial(), rng);
    auto params = w.named_params();
    std::vector<Tensor> values;
    for (auto& [name, t] : params) values.push_back(*t);
    auto build = [&](const std::vector<Tensor>& p) {
      AgentWeights wt = w;
      auto target = wt.named_params();
      for (std::size_t i = 0; i < target.size(); ++i) *target[i].second = p[i];
      AgentOutput out = forward(obs, wt);
      return add(sum(out.logits), sum(out.value));
    };
    Rng sampler(900 + seed);
    const double err = test::gradcheck(build, values, 1e-5, 3, &sampler);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("relational agent reproduces a simplicial agent with zeroed extras") {
  Rng rng(85);
  AgentWeights simp = AgentWeights::init(AgentConfig::simplicial(), rng);
  simp.block.b3 = Tensor::zeros(simp.block.b3.shape());
  simp.block.wu = Tensor::zeros(simp.block.wu.shape());

  AgentWeights rel = AgentWeights::init(AgentConfig::relational(), rng);
  rel.conv1_k = simp.conv1_k;
  rel.conv1_b = simp.conv1_b;
  rel.conv2_k = simp.conv2_k;
  rel.conv2_b = simp.conv2_b;
  rel.proj = simp.proj;
  rel.trunk_w = simp.trunk_w;
  rel.trunk_b = simp.trunk_b;
  rel.policy_w = simp.policy_w;
  rel.value_w = simp.value_w;
  rel.block.one_heads = simp.block.one_heads;
  rel.block.ff2_w = simp.block.ff2_w;
  rel.block.ff2_b = simp.block.ff2_b;
  rel.block.ln_in_gain = simp.block.ln_in_gain;
  rel.block.ln_in_bias = simp.block.ln_in_bias;
  rel.block.ln_out_gain = simp.block.ln_out_gain;
  rel.block.ln_out_bias = simp.block.ln_out_bias;
  // Fold the constant 2-simplicial branch (the normalized zero vector, i.e.
  // the ln_two bias) into the feedforward bias; widths then match.
  const Index one_w = simp.block.config.one_width();
  const Index two_d = simp.block.config.two_dim;
  rel.block.ff1_w = Tensor::from_matrix(simp.block.ff1_w.mat().topRows(one_w));
  Eigen::RowVectorXd shift = Tensor(simp.block.ln_two_bias).mat().reshaped(1, two_d) *
                             simp.block.ff1_w.mat().bottomRows(two_d);
  rel.block.ff1_b = Tensor::from_vector(
      (simp.block.ff1_b.mat().reshaped(1, simp.block.config.ff_hidden) + shift).transpose());

  Image obs = board_obs(23);
  AgentOutput a = forward(obs, simp);
  AgentOutput b = forward(obs, rel);
  CHECK((a.logits.array() - b.logits.array()).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((a.value.array() - b.value.array()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("action selection") {
  Rng rng(86);
  ArrayXd spiked(4);
  spiked << 10, 0, 0, 0;
  CHECK(sample_action(spiked, rng, ActMode::Greedy) == env::Action::Left);

  ArrayXd uniform = ArrayXd::Zero(4);
  std::array<int, 4> counts{};
  for (int i = 0; i < 100000; ++i) {
    ++counts[static_cast<std::size_t>(sample_action(uniform, rng, ActMode::Sample))];
  }
  for (int c : counts) {
    CHECK(std::abs(c / 100000.0 - 0.25) <= 0.01);
  }
}

TEST_CASE("fixed seeds reproduce action sequences") {
  Rng rng(87);
  AgentWeights w = AgentWeights::init(AgentConfig::simplicial(), rng);
  Image obs = board_obs(3);
  std::vector<env::Action> first, second;
  {
    Rng r1(1234);
    for (int i = 0; i < 20; ++i) first.push_back(act(obs, w, r1, ActMode::Sample));
  }
  {
    Rng r2(1234);
    for (int i = 0; i < 20; ++i) second.push_back(act(obs, w, r2, ActMode::Sample));
  }
  CHECK(first == second);
}
