#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stx/rng.hpp"
#include "stx/tensor.hpp"

namespace stx::nn {

struct BlockConfig {
  Index entity_dim = 64;
  Index one_head_dim = 32;
  Index num_one_heads = 2;
  Index two_dim = 48;
  Index num_virtual = 2;  // M; 0 = relational (no 2-simplicial branch)
  Index ff_hidden = 64;

  Index one_width() const { return one_head_dim * num_one_heads; }
  Index ff_input_width() const {
    return one_width() + (num_virtual > 0 ? two_dim : 0);
  }
};

struct OneHeadWeights {
  Tensor wq, wk, wv;  // [entity_dim, one_head_dim], bias-free
};

/// All learned parameters of one Transformer block; the same instance serves
/// every iteration of the block (weights are shared between iterations).
struct BlockWeights {
  BlockConfig config;
  std::vector<OneHeadWeights> one_heads;
  // 2-simplicial maps (empty tensors when num_virtual == 0), bias-free.
  Tensor wp, wl1, wl2, wu;  // [entity_dim, two_dim]
  Tensor b3;                // [two_dim, two_dim, two_dim]: (u, v, out)
  // Feedforward: ff_input -> ff_hidden (relu) -> entity_dim, with biases.
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
  // Layer norms: block entry, 2-simplicial output, post-residual.
  Tensor ln_in_gain, ln_in_bias;
  Tensor ln_two_gain, ln_two_bias;
  Tensor ln_out_gain, ln_out_bias;

  static BlockWeights init(const BlockConfig& config, Rng& rng);
  /// Copy whose tensors are watched leaves of `tape` (storage is shared).
  BlockWeights watch(Tape& tape) const;
  void named_tensors(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out);
};

/// Softmax matrices exactly as used in a forward pass, one per head.
struct HeadMap {
  MatrixRM std_probs;   // [N, N]: standard queries over standard keys
  MatrixRM std_logits;  // [N, N]
  MatrixRM virt_probs;  // [M, N+M]: virtual queries over all keys
  MatrixRM virt_logits;
  /// [N+M, N+M] row-stochastic view; standard-query rows carry exact zeros
  /// on the virtual key columns.
  MatrixRM padded_probs() const;
};

struct AttentionMaps {
  std::vector<HeadMap> one;  // per 1-simplicial head
  MatrixRM two_probs;        // [M*M, N]: rows = (j,k) lexicographic, cols = queries
  MatrixRM two_logits;
};

/// One head of dot-product attention over pre-normalized entities
/// x: [N+M, entity_dim] with the first n_std rows standard. Standard queries
/// mix values over standard keys only; virtual queries mix over all keys.
Tensor one_simplicial_attention(const Tensor& x, Index n_std,
                                const OneHeadWeights& head, HeadMap* map = nullptr);

/// Triple-product attention of the standard entities over virtual pairs.
/// Returns [n_std, two_dim]; requires at least one virtual entity.
Tensor two_simplicial_attention(const Tensor& x, Index n_std, const BlockWeights& w,
                                MatrixRM* probs = nullptr, MatrixRM* logits = nullptr);

/// Full 2-simplicial Transformer block over a stacked batch.
/// e: [batch*(n_std+M), entity_dim]; returns the same shape. `maps`, when
/// given, receives one AttentionMaps per batch element.
Tensor simplicial_block(const Tensor& e, Index batch, Index n_std, const BlockWeights& w,
                        std::vector<AttentionMaps>* maps = nullptr);

/// Purely 1-simplicial block (the baseline agent), M = 0.
Tensor relational_block(const Tensor& e, Index batch, const BlockWeights& w,
                        std::vector<AttentionMaps>* maps = nullptr);

/// Glorot-style uniform limit for a fan pair.
double glorot_limit(Index fan_in, Index fan_out);
Tensor glorot_tensor(Shape shape, Index fan_in, Index fan_out, Rng& rng);

}  // namespace stx::nn
