#include "stx/agent.hpp"

#include <cmath>

#include "stx/errors.hpp"

namespace stx::nn {

std::string variant_str(Variant v) {
  return v == Variant::Relational ? "relational" : "simplicial";
}

Variant variant_from(const std::string& s) {
  if (s == "relational") return Variant::Relational;
  if (s == "simplicial") return Variant::Simplicial;
  throw ValueError("unknown agent variant: " + s);
}

AgentConfig AgentConfig::relational() {
  AgentConfig c;
  c.variant = Variant::Relational;
  c.block.num_virtual = 0;
  return c;
}

AgentConfig AgentConfig::simplicial() {
  AgentConfig c;
  c.variant = Variant::Simplicial;
  c.block.num_virtual = 2;
  return c;
}

AgentWeights AgentWeights::init(const AgentConfig& config, Rng& rng) {
  AgentWeights w;
  w.config = config;
  const Index f1 = config.conv1_features, f2 = config.conv2_features;
  w.conv1_k = glorot_tensor({2, 2, 3, f1}, 2 * 2 * 3, 2 * 2 * f1, rng);
  w.conv1_b = Tensor::zeros({f1});
  w.conv2_k = glorot_tensor({2, 2, f1, f2}, 2 * 2 * f1, 2 * 2 * f2, rng);
  w.conv2_b = Tensor::zeros({f2});
  w.proj = glorot_tensor({f2, config.proj_dim}, f2, config.proj_dim, rng);
  if (config.variant == Variant::Simplicial) {
    // Small Gaussian start for the virtual-entity embeddings.
    w.virt_embed = Tensor::zeros({config.block.num_virtual, config.entity_dim});
    ArrayXd& a = w.virt_embed.mutable_array();
    for (Index i = 0; i < a.size(); ++i) a(i) = 0.1 * rng.normal();
  }
  w.block = BlockWeights::init(config.block, rng);
  Index in = config.entity_dim;
  for (Index l = 0; l < config.trunk_layers; ++l) {
    w.trunk_w.push_back(glorot_tensor({in, config.trunk_width}, in, config.trunk_width, rng));
    w.trunk_b.push_back(Tensor::zeros({config.trunk_width}));
    in = config.trunk_width;
  }
  w.policy_w = glorot_tensor({config.trunk_width, config.num_actions}, config.trunk_width,
                             config.num_actions, rng);
  w.value_w = glorot_tensor({config.trunk_width, 1}, config.trunk_width, 1, rng);
  return w;
}

AgentWeights AgentWeights::watch(Tape& tape) const {
  AgentWeights w = *this;
  w.conv1_k = tape.leaf(w.conv1_k);
  w.conv1_b = tape.leaf(w.conv1_b);
  w.conv2_k = tape.leaf(w.conv2_k);
  w.conv2_b = tape.leaf(w.conv2_b);
  w.proj = tape.leaf(w.proj);
  if (config.variant == Variant::Simplicial) w.virt_embed = tape.leaf(w.virt_embed);
  w.block = block.watch(tape);
  for (Tensor& t : w.trunk_w) t = tape.leaf(t);
  for (Tensor& t : w.trunk_b) t = tape.leaf(t);
  w.policy_w = tape.leaf(w.policy_w);
  w.value_w = tape.leaf(w.value_w);
  return w;
}

std::vector<std::pair<std::string, Tensor*>> AgentWeights::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("conv1/kernel", &conv1_k);
  out.emplace_back("conv1/bias", &conv1_b);
  out.emplace_back("conv2/kernel", &conv2_k);
  out.emplace_back("conv2/bias", &conv2_b);
  out.emplace_back("proj", &proj);
  if (config.variant == Variant::Simplicial) out.emplace_back("virtual_embeddings", &virt_embed);
  block.named_tensors("block/", out);
  for (std::size_t l = 0; l < trunk_w.size(); ++l) {
    out.emplace_back("trunk" + std::to_string(l) + "/w", &trunk_w[l]);
    out.emplace_back("trunk" + std::to_string(l) + "/b", &trunk_b[l]);
  }
  out.emplace_back("policy/w", &policy_w);
  out.emplace_back("value/w", &value_w);
  return out;
}

int entity_of_tile(int y, int x, int rows, int cols) {
  if (y < 1 || y > rows - 2 || x < 1 || x > cols - 1) {
    throw ValueError("entity_of_tile: (y,x) outside [1,R-2]x[1,C-1]");
  }
  return x + (cols - 1) * (y - 1) - 1;
}

std::pair<int, int> tile_of_entity(int index, int rows, int cols) {
  const int gc = cols - 1;
  if (index < 0 || index >= (rows - 2) * gc) throw ValueError("tile_of_entity: index out of range");
  return {index / gc + 1, index % gc + 1};
}

namespace {

Tensor conv2x2_relu(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  const Index h = x.dim(0), w = x.dim(1);
  const Index cin = kernel.dim(2), cout = kernel.dim(3);
  Tensor patches = im2col(x, 2, 2);  // [(h-1)(w-1), 4*cin]
  Tensor kflat = reshape(kernel, {2 * 2 * cin, cout});
  Tensor out = add_rowwise(matmul(patches, kflat), bias);
  return relu(reshape(out, {h - 1, w - 1, cout}));
}

Tensor positional_encoding(Index grid_rows, Index grid_cols) {
  Tensor enc = Tensor::zeros({grid_rows * grid_cols, 2});
  ArrayXd& a = enc.mutable_array();
  for (Index y = 0; y < grid_rows; ++y) {
    for (Index x = 0; x < grid_cols; ++x) {
      const Index i = y * grid_cols + x;
      a(2 * i) = grid_rows > 1 ? -1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(grid_rows - 1) : 0.0;
      a(2 * i + 1) = grid_cols > 1 ? -1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(grid_cols - 1) : 0.0;
    }
  }
  return enc;
}

Tensor obs_tensor(const Image& obs) {
  Tensor x = Tensor::zeros({obs.rows, obs.cols, 3});
  ArrayXd& a = x.mutable_array();
  for (std::size_t i = 0; i < obs.rgb.size(); ++i) {
    a(static_cast<Index>(i)) = static_cast<double>(obs.rgb[i]) / 255.0;
  }
  return x;
}

}  // namespace

AgentOutput forward_batch(const std::vector<const Image*>& obs, const AgentWeights& w,
                          bool want_maps) {
  if (obs.empty()) throw ContractError("forward_batch: empty batch");
  const Index rows = obs[0]->rows, cols = obs[0]->cols;
  if (rows < 4 || cols < 3) throw ShapeError("forward: observation too small");
  for (const Image* im : obs) {
    if (im->rows != rows || im->cols != cols) throw ShapeError("forward_batch: mixed sizes");
  }
  const Index batch = static_cast<Index>(obs.size());
  const Index grid_rows = rows - 2, grid_cols = cols - 2 + 1;  // valid 2x2 convs, twice
  const Index n_entities = grid_rows * (cols - 2);

  // Front end per sample, stacked into one entity tensor.
  const Tensor pos = positional_encoding(grid_rows, cols - 2);
  (void)grid_cols;
  const Index m = w.config.num_virtual();
  std::vector<Tensor> entity_blocks;
  for (const Image* im : obs) {
    Tensor x = obs_tensor(*im);
    Tensor c1 = conv2x2_relu(x, w.conv1_k, w.conv1_b);
    Tensor c2 = conv2x2_relu(c1, w.conv2_k, w.conv2_b);
    Tensor flat = reshape(c2, {n_entities, w.config.conv2_features});
    Tensor projected = matmul(flat, w.proj);
    Tensor entities = concat({projected, pos}, 1);  // [N, entity_dim]
    if (m > 0) entities = concat({entities, w.virt_embed}, 0);
    entity_blocks.push_back(entities);
  }
  Tensor e = batch == 1 ? entity_blocks[0] : concat(entity_blocks, 0);

  AgentOutput out;
  if (want_maps) out.maps.resize(static_cast<std::size_t>(w.config.block_iterations));
  for (Index it = 0; it < w.config.block_iterations; ++it) {
    std::vector<AttentionMaps>* maps =
        want_maps ? &out.maps[static_cast<std::size_t>(it)] : nullptr;
    e = w.config.variant == Variant::Simplicial
            ? simplicial_block(e, batch, n_entities, w.block, maps)
            : relational_block(e, batch, w.block, maps);
  }

  // Discard virtual entities; max-pool each sample over its entity dimension.
  const Index group = n_entities + m;
  std::vector<Tensor> pooled;
  for (Index s = 0; s < batch; ++s) {
    Tensor sample = slice_rows(e, s * group, n_entities);
    pooled.push_back(reshape(max_over_axis(sample, 0), {1, w.config.entity_dim}));
  }
  Tensor v = batch == 1 ? pooled[0] : concat(pooled, 0);  // [batch, entity_dim]

  for (std::size_t l = 0; l < w.trunk_w.size(); ++l) {
    v = relu(add_rowwise(matmul(v, w.trunk_w[l]), w.trunk_b[l]));
  }
  out.logits = matmul(v, w.policy_w);
  out.value = reshape(matmul(v, w.value_w), {batch});
  return out;
}

AgentOutput forward(const Image& obs, const AgentWeights& w, bool want_maps) {
  return forward_batch({&obs}, w, want_maps);
}

env::Action sample_action(const ArrayXd& logits, Rng& rng, ActMode mode) {
  if (mode == ActMode::Greedy) {
    Index best = 0;
    for (Index i = 1; i < logits.size(); ++i) {
      if (logits(i) > logits(best)) best = i;
    }
    return static_cast<env::Action>(best);
  }
  ArrayXd p = (logits - logits.maxCoeff()).exp();
  p /= p.sum();
  double r = rng.uniform();
  for (Index i = 0; i < p.size(); ++i) {
    r -= p(i);
    if (r < 0.0) return static_cast<env::Action>(i);
  }
  return static_cast<env::Action>(p.size() - 1);
}

env::Action act(const Image& obs, const AgentWeights& w, Rng& rng, ActMode mode) {
  AgentOutput out = forward(obs, w);
  return sample_action(out.logits.array(), rng, mode);
}

}  // namespace stx::nn
