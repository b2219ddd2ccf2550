#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stx/attention.hpp"
#include "stx/boxworld.hpp"
#include "stx/image.hpp"
#include "stx/rng.hpp"
#include "stx/tensor.hpp"

namespace stx::nn {

enum class Variant { Relational, Simplicial };

std::string variant_str(Variant v);
Variant variant_from(const std::string& s);

struct AgentConfig {
  Variant variant = Variant::Simplicial;
  Index conv1_features = 12;
  Index conv2_features = 24;
  Index proj_dim = 62;  // + 2 positional dims = entity_dim
  Index entity_dim = 64;
  Index trunk_width = 256;
  Index trunk_layers = 4;
  Index num_actions = 4;
  Index block_iterations = 2;
  BlockConfig block;  // num_virtual forced to 0 for the relational variant

  static AgentConfig relational();
  static AgentConfig simplicial();
  Index num_virtual() const { return variant == Variant::Simplicial ? block.num_virtual : 0; }
};

/// Every learned parameter of the agent of either variant. Copies share
/// storage; watch() yields a copy whose tensors are leaves of a tape.
struct AgentWeights {
  AgentConfig config;
  Tensor conv1_k, conv1_b;  // [2,2,3,f1], [f1]
  Tensor conv2_k, conv2_b;  // [2,2,f1,f2], [f2]
  Tensor proj;              // [f2, proj_dim], bias-free
  Tensor virt_embed;        // [M, entity_dim] (simplicial only)
  BlockWeights block;       // shared between iterations
  std::vector<Tensor> trunk_w, trunk_b;
  Tensor policy_w;  // [trunk_width, num_actions], bias-free
  Tensor value_w;   // [trunk_width, 1], bias-free

  static AgentWeights init(const AgentConfig& config, Rng& rng);
  AgentWeights watch(Tape& tape) const;
  std::vector<std::pair<std::string, Tensor*>> named_params();
};

struct AgentOutput {
  Tensor logits;  // [batch, num_actions]
  Tensor value;   // [batch]
  // One entry per block iteration per batch element (when requested).
  std::vector<std::vector<AttentionMaps>> maps;
};

/// Full forward pass over a batch of equally-sized observations.
/// Gradients flow when `w` was watched on a tape.
AgentOutput forward_batch(const std::vector<const Image*>& obs, const AgentWeights& w,
                          bool want_maps = false);
AgentOutput forward(const Image& obs, const AgentWeights& w, bool want_maps = false);

/// Entity index of board tile (y, x), 1-indexed, for a board with R rows and
/// C playing columns: x + (C-1)(y-1) - 1.
int entity_of_tile(int y, int x, int rows, int cols);
/// Inverse of entity_of_tile.
std::pair<int, int> tile_of_entity(int index, int rows, int cols);

enum class ActMode { Sample, Greedy };
/// Greedy argmax (lowest index on ties) or a draw from softmax(logits).
env::Action sample_action(const ArrayXd& logits, Rng& rng, ActMode mode);
env::Action act(const Image& obs, const AgentWeights& w, Rng& rng, ActMode mode);

}  // namespace stx::nn
