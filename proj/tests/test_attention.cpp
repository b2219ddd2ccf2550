#include <doctest.h>

#include <cmath>

#include "stx/attention.hpp"
#include "stx/errors.hpp"
#include "test_util.hpp"

using namespace stx;
using namespace stx::nn;
using test::gradcheck;
using test::random_tensor;

namespace {

BlockConfig small_config(Index entity_dim = 10, Index head_dim = 4, Index two_dim = 6,
                         Index m = 2) {
  BlockConfig c;
  c.entity_dim = entity_dim;
  c.one_head_dim = head_dim;
  c.num_one_heads = 2;
  c.two_dim = two_dim;
  c.num_virtual = m;
  c.ff_hidden = 8;
  return c;
}

}  // namespace

TEST_CASE("one head with a single entity returns its value vector") {
  Rng rng(50);
  OneHeadWeights head;
  head.wq = random_tensor({6, 4}, rng);
  head.wk = random_tensor({6, 4}, rng);
  head.wv = random_tensor({6, 4}, rng);
  Tensor x = random_tensor({1, 6}, rng);
  Tensor out = one_simplicial_attention(x, 1, head);
  Tensor v = matmul(x, head.wv);
  CHECK((out.mat() - v.mat()).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("uniform logits average the admissible value vectors") {
  Rng rng(51);
  OneHeadWeights head;
  head.wq = Tensor::zeros({6, 4});  // all logits zero
  head.wk = random_tensor({6, 4}, rng);
  head.wv = random_tensor({6, 4}, rng);
  const Index n = 3, m = 2;
  Tensor x = random_tensor({n + m, 6}, rng);
  HeadMap map;
  Tensor out = one_simplicial_attention(x, n, head, &map);
  Tensor v = matmul(x, head.wv);
  // Standard queries: mean over the n standard values only.
  Eigen::RowVectorXd std_mean = v.mat().topRows(n).colwise().mean();
  for (Index i = 0; i < n; ++i) {
    CHECK((out.mat().row(i) - std_mean).cwiseAbs().maxCoeff() <= 1e-12);
  }
  // Virtual queries: mean over all n+m values.
  Eigen::RowVectorXd all_mean = v.mat().colwise().mean();
  for (Index i = n; i < n + m; ++i) {
    CHECK((out.mat().row(i) - all_mean).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("one-simplicial attention matches a per-row loop oracle") {
  Rng rng(52);
  const Index n = 3, m = 2, d = 8, hd = 4;
  OneHeadWeights head;
  head.wq = random_tensor({d, hd}, rng);
  head.wk = random_tensor({d, hd}, rng);
  head.wv = random_tensor({d, hd}, rng);
  Tensor x = random_tensor({n + m, d}, rng);
  HeadMap map;
  Tensor out = one_simplicial_attention(x, n, head, &map);

  auto q = matmul(x, head.wq).mat();
  auto k = matmul(x, head.wk).mat();
  auto v = matmul(x, head.wv).mat();
  for (Index i = 0; i < n + m; ++i) {
    const Index keys = i < n ? n : n + m;
    Eigen::VectorXd logits(keys);
    for (Index j = 0; j < keys; ++j) logits(j) = q.row(i).dot(k.row(j));
    Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp();
    p /= p.sum();
    Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(hd);
    for (Index j = 0; j < keys; ++j) want += p(j) * v.row(j);
    CHECK((out.mat().row(i) - want).cwiseAbs().maxCoeff() <= 1e-12);
  }
  // Masking: zero mass on virtual keys for standard queries, by construction.
  MatrixRM padded = map.padded_probs();
  CHECK(padded.topRightCorner(n, m).cwiseAbs().maxCoeff() == 0.0);
  for (Index r = 0; r < n + m; ++r) CHECK(std::abs(padded.row(r).sum() - 1.0) <= 1e-12);
}

TEST_CASE("two-simplicial attention with equal logits averages the pair messages") {
  Rng rng(53);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  w.wp = Tensor::zeros({cfg.entity_dim, cfg.two_dim});  // p_i = 0: all logits 0
  const Index n = 3;
  Tensor x = random_tensor({n + cfg.num_virtual, cfg.entity_dim}, rng);
  MatrixRM probs;
  Tensor out = two_simplicial_attention(x, n, w, &probs);

  Tensor xv = slice_rows(x, n, cfg.num_virtual);
  Tensor u = matmul(xv, w.wu);
  Tensor pairs = bilinear_pairs(w.b3, u, u);
  Eigen::RowVectorXd mean_msg = pairs.mat().colwise().mean();
  for (Index i = 0; i < n; ++i) {
    CHECK((out.mat().row(i) - mean_msg).cwiseAbs().maxCoeff() <= 1e-12);
  }
  for (Index c = 0; c < probs.cols(); ++c) {
    CHECK(std::abs(probs.col(c).sum() - 1.0) <= 1e-12);
  }
}

TEST_CASE("a dominant pair routes its tensor-product message") {
  // Query aligned with l1 of virtual 0 and l2 of virtual 1 makes the (0,1)
  // logit the product of norms while every other pair stays near zero;
  // with a sharp scale the output is then B(u_0 (x) u_1).
  const Index d = 6, h2 = 3, n = 1, m = 2;
  BlockConfig cfg = small_config(d, 2, h2, m);
  Rng rng(54);
  BlockWeights w = BlockWeights::init(cfg, rng);
  // Entities are unit rows: x_std = e0, virtual = e1, e2.
  Tensor x = Tensor::zeros({n + m, d});
  x.mutable_array()(0) = 1.0;
  x.mutable_array()(d + 1) = 1.0;
  x.mutable_array()(2 * d + 2) = 1.0;
  auto set_row = [](Tensor& t, Index row, double a, double b, double c) {
    t.mutable_array()(row * 3 + 0) = a;
    t.mutable_array()(row * 3 + 1) = b;
    t.mutable_array()(row * 3 + 2) = c;
  };
  w.wp = Tensor::zeros({d, h2});
  set_row(w.wp, 0, 1, 0, 0);  // p = (1,0,0)
  w.wl1 = Tensor::zeros({d, h2});
  set_row(w.wl1, 1, 12, 0, 0);     // l1 of virtual 0: strongly aligned
  set_row(w.wl1, 2, 0, 1e-3, 0);   // l1 of virtual 1: tiny, orthogonal
  w.wl2 = Tensor::zeros({d, h2});
  set_row(w.wl2, 1, 0, 0, 1e-3);   // l2 of virtual 0: tiny, orthogonal
  set_row(w.wl2, 2, 12, 0, 0);     // l2 of virtual 1: strongly aligned

  MatrixRM probs;
  Tensor out = two_simplicial_attention(x, n, w, &probs);
  CHECK(probs(1, 0) == doctest::Approx(1.0).epsilon(1e-9));  // pair (0,1) in lexicographic order

  Tensor xv = slice_rows(x, n, m);
  Tensor u = matmul(xv, w.wu);
  Tensor pairs = bilinear_pairs(w.b3, u, u);
  CHECK((out.mat().row(0) - pairs.mat().row(1)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("two-simplicial attention requires a virtual entity") {
  Rng rng(55);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  Tensor x = random_tensor({3, cfg.entity_dim}, rng);
  CHECK_THROWS_AS(two_simplicial_attention(x, 3, w), ContractError);
}

TEST_CASE("simplicial block preserves shape and matches the op composition") {
  Rng rng(56);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  const Index n = 4, m = cfg.num_virtual;
  Tensor e = random_tensor({n + m, cfg.entity_dim}, rng);
  std::vector<AttentionMaps> maps;
  Tensor out = simplicial_block(e, 1, n, w, &maps);
  CHECK(out.shape() == e.shape());
  REQUIRE(maps.size() == 1);

  // Oracle: assemble the same block from the standalone operations.
  Tensor x = layer_norm(e, w.ln_in_gain, w.ln_in_bias);
  std::vector<Tensor> heads;
  for (const OneHeadWeights& h : w.one_heads) heads.push_back(one_simplicial_attention(x, n, h));
  Tensor a1 = concat(heads, 1);
  Tensor two = two_simplicial_attention(x, n, w);
  Tensor u = matmul(slice_rows(x, n, m), w.wu);
  Tensor a2 = layer_norm(concat({two, u}, 0), w.ln_two_gain, w.ln_two_bias);
  Tensor ff_in = concat({a1, a2}, 1);
  Tensor hidden = relu(add_rowwise(matmul(ff_in, w.ff1_w), w.ff1_b));
  Tensor ff_out = add_rowwise(matmul(hidden, w.ff2_w), w.ff2_b);
  Tensor want = layer_norm(add(e, ff_out), w.ln_out_gain, w.ln_out_bias);
  CHECK((out.mat() - want.mat()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("batched block equals per-sample blocks") {
  Rng rng(57);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  const Index n = 3, g = n + cfg.num_virtual, batch = 4;
  Tensor e = random_tensor({batch * g, cfg.entity_dim}, rng);
  Tensor out = simplicial_block(e, batch, n, w);
  for (Index s = 0; s < batch; ++s) {
    Tensor sample = slice_rows(e, s * g, g);
    Tensor single = simplicial_block(sample, 1, n, w);
    CHECK((out.mat().middleRows(s * g, g) - single.mat()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("zeroing the value paths reduces the block to a constant-input feedforward") {
  Rng rng(58);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  for (OneHeadWeights& h : w.one_heads) h.wv = Tensor::zeros({cfg.entity_dim, cfg.one_head_dim});
  w.b3 = Tensor::zeros({cfg.two_dim, cfg.two_dim, cfg.two_dim});
  w.wu = Tensor::zeros({cfg.entity_dim, cfg.two_dim});
  const Index n = 4;
  Tensor e = random_tensor({n + cfg.num_virtual, cfg.entity_dim}, rng);
  Tensor out = simplicial_block(e, 1, n, w);

  // The attention branches contribute a constant row: zeros from the
  // 1-simplicial heads, the ln_two bias from the normalized zero vector.
  Eigen::RowVectorXd const_row(cfg.ff_input_width());
  const_row.setZero();
  const_row.tail(cfg.two_dim) = Tensor(w.ln_two_bias).mat().reshaped(1, cfg.two_dim);
  Eigen::RowVectorXd hidden =
      (const_row * w.ff1_w.mat() + w.ff1_b.mat().reshaped(1, cfg.ff_hidden)).cwiseMax(0.0);
  Eigen::RowVectorXd ff = hidden * w.ff2_w.mat() + w.ff2_b.mat().reshaped(1, cfg.entity_dim);
  MatrixRM residual = e.mat();
  residual.rowwise() += ff;
  Tensor want = layer_norm(Tensor::from_matrix(residual), w.ln_out_gain, w.ln_out_bias);
  CHECK((out.mat() - want.mat()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("relational block: shape, degenerate case, and simplicial equivalence") {
  Rng rng(59);
  BlockConfig rcfg = small_config();
  rcfg.num_virtual = 0;
  BlockWeights rw = BlockWeights::init(rcfg, rng);

  Tensor e1 = random_tensor({1, rcfg.entity_dim}, rng);
  Tensor out1 = relational_block(e1, 1, rw);
  CHECK(out1.shape() == e1.shape());
  {
    // N = 1: the attention output is exactly the value vector path.
    Tensor x = layer_norm(e1, rw.ln_in_gain, rw.ln_in_bias);
    std::vector<Tensor> heads;
    for (const OneHeadWeights& h : rw.one_heads) heads.push_back(matmul(x, h.wv));
    Tensor a1 = concat(heads, 1);
    Tensor hidden = relu(add_rowwise(matmul(a1, rw.ff1_w), rw.ff1_b));
    Tensor ff = add_rowwise(matmul(hidden, rw.ff2_w), rw.ff2_b);
    Tensor want = layer_norm(add(e1, ff), rw.ln_out_gain, rw.ln_out_bias);
    CHECK((out1.mat() - want.mat()).cwiseAbs().maxCoeff() <= 1e-12);
  }

  // A simplicial block with its 2-simplicial extras zeroed agrees with a
  // relational block whose feedforward absorbs the constant branch.
  BlockConfig scfg = small_config();
  BlockWeights sw = BlockWeights::init(scfg, rng);
  sw.b3 = Tensor::zeros({scfg.two_dim, scfg.two_dim, scfg.two_dim});
  sw.wu = Tensor::zeros({scfg.entity_dim, scfg.two_dim});

  BlockWeights eq = rw;
  eq.one_heads = sw.one_heads;
  eq.ff2_w = sw.ff2_w;
  eq.ff2_b = sw.ff2_b;
  eq.ln_in_gain = sw.ln_in_gain;
  eq.ln_in_bias = sw.ln_in_bias;
  eq.ln_out_gain = sw.ln_out_gain;
  eq.ln_out_bias = sw.ln_out_bias;
  eq.ff1_w = Tensor::from_matrix(sw.ff1_w.mat().topRows(scfg.one_width()));
  Eigen::RowVectorXd bias_shift =
      Tensor(sw.ln_two_bias).mat().reshaped(1, scfg.two_dim) * sw.ff1_w.mat().bottomRows(scfg.two_dim);
  eq.ff1_b = Tensor::from_vector((sw.ff1_b.mat().reshaped(1, scfg.ff_hidden) + bias_shift).transpose());

  const Index n = 5;
  Tensor e = random_tensor({n, scfg.entity_dim}, rng);
  Tensor virt = random_tensor({scfg.num_virtual, scfg.entity_dim}, rng);
  Tensor simp_out = simplicial_block(concat({e, virt}, 0), 1, n, sw);
  Tensor rel_out = relational_block(e, 1, eq);
  CHECK((simp_out.mat().topRows(n) - rel_out.mat()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("blocks are equivariant under standard-entity permutation") {
  Rng rng(60);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  const Index n = 5, m = cfg.num_virtual;
  Tensor e = random_tensor({n + m, cfg.entity_dim}, rng);
  Tensor out = simplicial_block(e, 1, n, w);

  std::vector<Index> perm{3, 0, 4, 1, 2};
  MatrixRM permuted = e.mat();
  for (Index i = 0; i < n; ++i) permuted.row(i) = e.mat().row(perm[static_cast<std::size_t>(i)]);
  Tensor out_p = simplicial_block(Tensor::from_matrix(permuted), 1, n, w);
  for (Index i = 0; i < n; ++i) {
    CHECK((out_p.mat().row(i) - out.mat().row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <=
          1e-9);
  }
  // Virtual rows are unaffected by the permutation of standard entities.
  CHECK((out_p.mat().bottomRows(m) - out.mat().bottomRows(m)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("block gradients pass finite differences through two iterations") {
  BlockConfig cfg = small_config(8, 3, 4, 2);
  const Index n = 3;
  for (int seed = 0; seed < 3; ++seed) {
    Rng rng(100 + seed);
    BlockWeights w = BlockWeights::init(cfg, rng);
    Tensor e = random_tensor({n + cfg.num_virtual, cfg.entity_dim}, rng);
    const Tensor mix = random_tensor({n + cfg.num_virtual, cfg.entity_dim}, rng);
    // Stacked twice with shared weights; probe the entities plus a
    // representative weight from each branch of the block.
    auto build = [&](const std::vector<Tensor>& p) {
      BlockWeights wt = w;
      wt.ff1_w = p[1];
      wt.b3 = p[2];
      wt.one_heads[0].wv = p[3];
      wt.ln_two_gain = p[4];
      Tensor out = simplicial_block(p[0], 1, n, wt);
      out = simplicial_block(out, 1, n, wt);
      return sum(mul(out, mix));
    };
    Rng sampler(200 + seed);
    const double err = gradcheck(build, {e, w.ff1_w, w.b3, w.one_heads[0].wv, w.ln_two_gain},
                                 1e-5, 12, &sampler);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("attention maps equal recomputation from dumped logits") {
  Rng rng(62);
  BlockConfig cfg = small_config();
  BlockWeights w = BlockWeights::init(cfg, rng);
  const Index n = 4, m = cfg.num_virtual;
  Tensor e = random_tensor({n + m, cfg.entity_dim}, rng);
  std::vector<AttentionMaps> maps;
  simplicial_block(e, 1, n, w, &maps);
  const AttentionMaps& am = maps[0];
  for (const HeadMap& hm : am.one) {
    for (Index i = 0; i < hm.std_logits.rows(); ++i) {
      Eigen::RowVectorXd p =
          (hm.std_logits.row(i).array() - hm.std_logits.row(i).maxCoeff()).exp();
      p /= p.sum();
      CHECK((p - hm.std_probs.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    for (Index i = 0; i < hm.virt_logits.rows(); ++i) {
      Eigen::RowVectorXd p =
          (hm.virt_logits.row(i).array() - hm.virt_logits.row(i).maxCoeff()).exp();
      p /= p.sum();
      CHECK((p - hm.virt_probs.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  for (Index c = 0; c < am.two_logits.cols(); ++c) {
    Eigen::VectorXd col = am.two_logits.col(c);
    Eigen::VectorXd p = (col.array() - col.maxCoeff()).exp();
    p /= p.sum();
    CHECK((p - am.two_probs.col(c)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}
