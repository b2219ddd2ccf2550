#include "stx/attention.hpp"

#include <cmath>

#include "stx/errors.hpp"
#include "stx/geometry.hpp"

namespace stx::nn {

double glorot_limit(Index fan_in, Index fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor glorot_tensor(Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  const double limit = glorot_limit(fan_in, fan_out);
  Tensor t = Tensor::zeros(std::move(shape));
  ArrayXd& a = t.mutable_array();
  for (Index i = 0; i < a.size(); ++i) a(i) = rng.uniform(-limit, limit);
  return t;
}

BlockWeights BlockWeights::init(const BlockConfig& config, Rng& rng) {
  BlockWeights w;
  w.config = config;
  const Index d = config.entity_dim;
  for (Index h = 0; h < config.num_one_heads; ++h) {
    OneHeadWeights head;
    head.wq = glorot_tensor({d, config.one_head_dim}, d, config.one_head_dim, rng);
    head.wk = glorot_tensor({d, config.one_head_dim}, d, config.one_head_dim, rng);
    head.wv = glorot_tensor({d, config.one_head_dim}, d, config.one_head_dim, rng);
    w.one_heads.push_back(std::move(head));
  }
  if (config.num_virtual > 0) {
    const Index h2 = config.two_dim;
    w.wp = glorot_tensor({d, h2}, d, h2, rng);
    w.wl1 = glorot_tensor({d, h2}, d, h2, rng);
    w.wl2 = glorot_tensor({d, h2}, d, h2, rng);
    w.wu = glorot_tensor({d, h2}, d, h2, rng);
    w.b3 = glorot_tensor({h2, h2, h2}, h2 * h2, h2, rng);
    w.ln_two_gain = Tensor::full({h2}, 1.0);
    w.ln_two_bias = Tensor::zeros({h2});
  }
  const Index ffin = config.ff_input_width();
  w.ff1_w = glorot_tensor({ffin, config.ff_hidden}, ffin, config.ff_hidden, rng);
  w.ff1_b = Tensor::zeros({config.ff_hidden});
  w.ff2_w = glorot_tensor({config.ff_hidden, d}, config.ff_hidden, d, rng);
  w.ff2_b = Tensor::zeros({d});
  w.ln_in_gain = Tensor::full({d}, 1.0);
  w.ln_in_bias = Tensor::zeros({d});
  w.ln_out_gain = Tensor::full({d}, 1.0);
  w.ln_out_bias = Tensor::zeros({d});
  return w;
}

BlockWeights BlockWeights::watch(Tape& tape) const {
  BlockWeights w = *this;
  for (OneHeadWeights& h : w.one_heads) {
    h.wq = tape.leaf(h.wq);
    h.wk = tape.leaf(h.wk);
    h.wv = tape.leaf(h.wv);
  }
  if (config.num_virtual > 0) {
    w.wp = tape.leaf(w.wp);
    w.wl1 = tape.leaf(w.wl1);
    w.wl2 = tape.leaf(w.wl2);
    w.wu = tape.leaf(w.wu);
    w.b3 = tape.leaf(w.b3);
    w.ln_two_gain = tape.leaf(w.ln_two_gain);
    w.ln_two_bias = tape.leaf(w.ln_two_bias);
  }
  w.ff1_w = tape.leaf(w.ff1_w);
  w.ff1_b = tape.leaf(w.ff1_b);
  w.ff2_w = tape.leaf(w.ff2_w);
  w.ff2_b = tape.leaf(w.ff2_b);
  w.ln_in_gain = tape.leaf(w.ln_in_gain);
  w.ln_in_bias = tape.leaf(w.ln_in_bias);
  w.ln_out_gain = tape.leaf(w.ln_out_gain);
  w.ln_out_bias = tape.leaf(w.ln_out_bias);
  return w;
}

void BlockWeights::named_tensors(const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor*>>& out) {
  for (std::size_t h = 0; h < one_heads.size(); ++h) {
    const std::string hp = prefix + "one_head" + std::to_string(h) + "/";
    out.emplace_back(hp + "wq", &one_heads[h].wq);
    out.emplace_back(hp + "wk", &one_heads[h].wk);
    out.emplace_back(hp + "wv", &one_heads[h].wv);
  }
  if (config.num_virtual > 0) {
    out.emplace_back(prefix + "wp", &wp);
    out.emplace_back(prefix + "wl1", &wl1);
    out.emplace_back(prefix + "wl2", &wl2);
    out.emplace_back(prefix + "wu", &wu);
    out.emplace_back(prefix + "b3", &b3);
    out.emplace_back(prefix + "ln_two_gain", &ln_two_gain);
    out.emplace_back(prefix + "ln_two_bias", &ln_two_bias);
  }
  out.emplace_back(prefix + "ff1_w", &ff1_w);
  out.emplace_back(prefix + "ff1_b", &ff1_b);
  out.emplace_back(prefix + "ff2_w", &ff2_w);
  out.emplace_back(prefix + "ff2_b", &ff2_b);
  out.emplace_back(prefix + "ln_in_gain", &ln_in_gain);
  out.emplace_back(prefix + "ln_in_bias", &ln_in_bias);
  out.emplace_back(prefix + "ln_out_gain", &ln_out_gain);
  out.emplace_back(prefix + "ln_out_bias", &ln_out_bias);
}

MatrixRM HeadMap::padded_probs() const {
  const Index n = std_probs.rows();
  const Index m = virt_probs.rows();
  MatrixRM p = MatrixRM::Zero(n + m, n + m);
  p.topLeftCorner(n, n) = std_probs;
  if (m > 0) p.bottomRows(m) = virt_probs;
  return p;
}

Tensor one_simplicial_attention(const Tensor& x, Index n_std, const OneHeadWeights& head,
                                HeadMap* map) {
  const Index total = x.rows();
  if (n_std < 1 || n_std > total) throw ShapeError("one_simplicial_attention: bad n_std");
  const Index m = total - n_std;

  Tensor q = matmul(x, head.wq);
  Tensor k = matmul(x, head.wk);
  Tensor v = matmul(x, head.wv);

  Tensor q_std = slice_rows(q, 0, n_std);
  Tensor k_std = slice_rows(k, 0, n_std);
  Tensor v_std = slice_rows(v, 0, n_std);
  Tensor std_logits = matmul(q_std, transpose(k_std));
  Tensor std_probs = softmax(std_logits, 1);
  Tensor out_std = matmul(std_probs, v_std);

  if (map) {
    map->std_probs = std_probs.mat();
    map->std_logits = std_logits.mat();
  }
  if (m == 0) return out_std;

  Tensor q_virt = slice_rows(q, n_std, m);
  Tensor virt_logits = matmul(q_virt, transpose(k));
  Tensor virt_probs = softmax(virt_logits, 1);
  Tensor out_virt = matmul(virt_probs, v);
  if (map) {
    map->virt_probs = virt_probs.mat();
    map->virt_logits = virt_logits.mat();
  }
  return concat({out_std, out_virt}, 0);
}

Tensor two_simplicial_attention(const Tensor& x, Index n_std, const BlockWeights& w,
                                MatrixRM* probs, MatrixRM* logits) {
  const Index total = x.rows();
  const Index m = total - n_std;
  if (m < 1) throw ContractError("two_simplicial_attention: requires at least one virtual entity");

  Tensor x_std = slice_rows(x, 0, n_std);
  Tensor x_virt = slice_rows(x, n_std, m);
  Tensor p = matmul(x_std, w.wp);
  Tensor l1 = matmul(x_virt, w.wl1);
  Tensor l2 = matmul(x_virt, w.wl2);
  Tensor u = matmul(x_virt, w.wu);

  Tensor lg = ga::triple_logits(p, l1, l2);  // [n_std, m*m]
  Tensor a = softmax(lg, 1);
  Tensor pairs = bilinear_pairs(w.b3, u, u);  // [m*m, two_dim]
  if (probs) *probs = a.mat().transpose();    // columns = queries, as visualized
  if (logits) *logits = lg.mat().transpose();
  return matmul(a, pairs);
}

namespace {

// Shared implementation of both block flavours over a stacked batch.
// When `two_simplicial` is false the feedforward input is just the
// concatenated 1-simplicial heads.
Tensor block_forward(const Tensor& e, Index batch, Index n_std, const BlockWeights& w,
                     bool two_simplicial, std::vector<AttentionMaps>* maps) {
  const BlockConfig& cfg = w.config;
  const Index m = two_simplicial ? cfg.num_virtual : 0;
  const Index group = n_std + m;
  if (e.rank() != 2 || e.cols() != cfg.entity_dim || e.rows() != batch * group) {
    throw ShapeError("block: entities " + shape_str(e.shape()) + " do not match batch " +
                     std::to_string(batch) + " x " + std::to_string(group));
  }
  if (maps) maps->assign(static_cast<std::size_t>(batch), AttentionMaps{});

  Tensor x = layer_norm(e, w.ln_in_gain, w.ln_in_bias);

  // 1-simplicial heads; projections batched, attention per sample.
  std::vector<Tensor> head_outputs;
  for (std::size_t h = 0; h < w.one_heads.size(); ++h) {
    const OneHeadWeights& head = w.one_heads[h];
    Tensor q = matmul(x, head.wq);
    Tensor k = matmul(x, head.wk);
    Tensor v = matmul(x, head.wv);
    std::vector<Tensor> per_sample;
    for (Index s = 0; s < batch; ++s) {
      HeadMap* hm = nullptr;
      if (maps) {
        (*maps)[static_cast<std::size_t>(s)].one.resize(w.one_heads.size());
        hm = &(*maps)[static_cast<std::size_t>(s)].one[h];
      }
      Tensor q_std = slice_rows(q, s * group, n_std);
      Tensor k_std = slice_rows(k, s * group, n_std);
      Tensor v_std = slice_rows(v, s * group, n_std);
      Tensor std_logits = matmul(q_std, transpose(k_std));
      Tensor std_probs = softmax(std_logits, 1);
      Tensor out_std = matmul(std_probs, v_std);
      if (hm) {
        hm->std_probs = std_probs.mat();
        hm->std_logits = std_logits.mat();
      }
      if (m == 0) {
        per_sample.push_back(out_std);
        continue;
      }
      Tensor q_virt = slice_rows(q, s * group + n_std, m);
      Tensor k_all = slice_rows(k, s * group, group);
      Tensor v_all = slice_rows(v, s * group, group);
      Tensor virt_logits = matmul(q_virt, transpose(k_all));
      Tensor virt_probs = softmax(virt_logits, 1);
      Tensor out_virt = matmul(virt_probs, v_all);
      if (hm) {
        hm->virt_probs = virt_probs.mat();
        hm->virt_logits = virt_logits.mat();
      }
      per_sample.push_back(concat({out_std, out_virt}, 0));
    }
    head_outputs.push_back(batch == 1 ? per_sample[0] : concat(per_sample, 0));
  }
  Tensor a1 = head_outputs.size() == 1 ? head_outputs[0] : concat(head_outputs, 1);

  Tensor ff_in = a1;
  if (two_simplicial) {
    Tensor p = matmul(x, w.wp);
    Tensor l1 = matmul(x, w.wl1);
    Tensor l2 = matmul(x, w.wl2);
    Tensor u = matmul(x, w.wu);
    std::vector<Tensor> two_per_sample;
    for (Index s = 0; s < batch; ++s) {
      Tensor p_std = slice_rows(p, s * group, n_std);
      Tensor l1_virt = slice_rows(l1, s * group + n_std, m);
      Tensor l2_virt = slice_rows(l2, s * group + n_std, m);
      Tensor u_virt = slice_rows(u, s * group + n_std, m);
      Tensor lg = ga::triple_logits(p_std, l1_virt, l2_virt);
      Tensor a2p = softmax(lg, 1);
      Tensor pairs = bilinear_pairs(w.b3, u_virt, u_virt);
      Tensor out2 = matmul(a2p, pairs);
      if (maps) {
        (*maps)[static_cast<std::size_t>(s)].two_probs = a2p.mat().transpose();
        (*maps)[static_cast<std::size_t>(s)].two_logits = lg.mat().transpose();
      }
      // Virtual rows carry u_i: the recurrence term of the virtual update.
      two_per_sample.push_back(concat({out2, u_virt}, 0));
    }
    Tensor a2 = batch == 1 ? two_per_sample[0] : concat(two_per_sample, 0);
    Tensor a2n = layer_norm(a2, w.ln_two_gain, w.ln_two_bias);
    ff_in = concat({a1, a2n}, 1);
  }

  Tensor hidden = relu(add_rowwise(matmul(ff_in, w.ff1_w), w.ff1_b));
  Tensor ff_out = add_rowwise(matmul(hidden, w.ff2_w), w.ff2_b);
  Tensor residual = add(e, ff_out);
  return layer_norm(residual, w.ln_out_gain, w.ln_out_bias);
}

}  // namespace

Tensor simplicial_block(const Tensor& e, Index batch, Index n_std, const BlockWeights& w,
                        std::vector<AttentionMaps>* maps) {
  if (w.config.num_virtual < 1) {
    throw ContractError("simplicial_block: config has no virtual entities");
  }
  return block_forward(e, batch, n_std, w, true, maps);
}

Tensor relational_block(const Tensor& e, Index batch, const BlockWeights& w,
                        std::vector<AttentionMaps>* maps) {
  if (e.rank() != 2 || e.rows() % batch != 0) throw ShapeError("relational_block: bad batch");
  return block_forward(e, batch, e.rows() / batch, w, false, maps);
}

}  // namespace stx::nn
