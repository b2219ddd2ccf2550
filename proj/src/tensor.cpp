#include "stx/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stx {

Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, ArrayXd data)
    : shape_(std::move(shape)),
      data_(std::make_shared<ArrayXd>(std::move(data))) {
  for (Index d : shape_) {
    if (d <= 0) throw ShapeError("Tensor: extents must be positive, got " + shape_str(shape_));
  }
  if (shape_size(shape_) != data_->size()) {
    throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_->size()) + " values");
  }
}

Tensor Tensor::zeros(Shape shape) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), ArrayXd::Zero(n));
}

Tensor Tensor::full(Shape shape, double value) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), ArrayXd::Constant(n, value));
}

Tensor Tensor::from_matrix(const Eigen::Ref<const MatrixRM>& m) {
  ArrayXd d(m.size());
  MatMap(d.data(), m.rows(), m.cols()) = m;
  return Tensor(Shape{m.rows(), m.cols()}, std::move(d));
}

Tensor Tensor::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
  ArrayXd d = v.array();
  return Tensor(Shape{v.size()}, std::move(d));
}

Index Tensor::dim(Index axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("Tensor::dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

Index Tensor::rows() const {
  if (rank() != 2) throw ShapeError("Tensor::rows: want rank 2, have " + shape_str(shape_));
  return shape_[0];
}

Index Tensor::cols() const {
  if (rank() != 2) throw ShapeError("Tensor::cols: want rank 2, have " + shape_str(shape_));
  return shape_[1];
}

double Tensor::value() const {
  if (size() != 1) throw ShapeError("Tensor::value: not a scalar: " + shape_str(shape_));
  return (*data_)(0);
}

ConstMatMap Tensor::mat() const {
  if (rank() != 2) throw ShapeError("Tensor::mat: want rank 2, have " + shape_str(shape_));
  return ConstMatMap(data_->data(), shape_[0], shape_[1]);
}

// ---- Tape ------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
  if (value.on_tape()) throw ContractError("Tape::leaf: value is already on a tape");
  Tensor t = value;  // shares storage
  attach(t, {}, nullptr);
  return t;
}

int Tape::record(Index num_values, std::vector<int> parents, BackFn back) {
  if (have_grads_) throw ContractError("Tape: recording after backward()");
  // Inputs that are not on the tape carry node id -1; they are not parents.
  std::erase_if(parents, [](int p) { return p < 0; });
  nodes_.push_back(Node{num_values, std::move(parents), std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::attach(Tensor& t, std::vector<int> parents, BackFn back) {
  t.tape_ = this;
  t.node_ = record(t.size(), std::move(parents), std::move(back));
}

ArrayXd& Tape::grad_buffer(int node) { return grads_[static_cast<std::size_t>(node)]; }

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ContractError("Tape::backward: loss is not on this tape");
  if (loss.size() != 1) throw ContractError("Tape::backward: loss must be scalar");
  if (have_grads_) throw ContractError("Tape::backward: already ran");

  const int n = num_nodes();
  const int root = loss.node();
  std::vector<char> reached(static_cast<std::size_t>(n), 0);
  reached[static_cast<std::size_t>(root)] = 1;
  for (int i = root; i >= 0; --i) {
    if (!reached[static_cast<std::size_t>(i)]) continue;
    for (int p : nodes_[static_cast<std::size_t>(i)].parents) reached[static_cast<std::size_t>(p)] = 1;
  }

  grads_.clear();
  grads_.reserve(static_cast<std::size_t>(n));
  for (const Node& node : nodes_) grads_.push_back(ArrayXd::Zero(node.num_values));
  have_grads_ = true;

  grads_[static_cast<std::size_t>(root)](0) = 1.0;
  for (int i = root; i >= 0; --i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (reached[static_cast<std::size_t>(i)] && node.back) {
      node.back(grads_[static_cast<std::size_t>(i)], *this);
    }
  }
}

const ArrayXd& Tape::grad(const Tensor& t) const {
  if (t.tape() != this) throw ContractError("Tape::grad: tensor is not on this tape");
  if (!have_grads_) throw ContractError("Tape::grad: backward() has not run");
  return grads_[static_cast<std::size_t>(t.node())];
}

// ---- Operation helpers -------------------------------------------------------

namespace {

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->on_tape()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw ContractError("operation mixes tensors from two tapes");
    }
  }
  return tape;
}

struct AxisSplit {
  Index outer, len, inner;
};

AxisSplit split_at(const Shape& s, Index axis) {
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) r.inner *= s[static_cast<std::size_t>(i)];
  return r;
}

void accumulate(Tape& tape, const Tensor& parent, const ArrayXd& g) {
  if (parent.on_tape()) tape.grad_buffer(parent.node()) += g;
}

}  // namespace

// ---- Operations --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const Index m = a.rows(), n = b.cols();
  ArrayXd out(m * n);
  MatMap(out.data(), m, n).noalias() = a.mat() * b.mat();
  Tensor r(Shape{m, n}, std::move(out));
  if (Tape* tape = common_tape({&a, &b})) {
    tape->attach(r, {a.node(), b.node()}, [a, b, m, n](const ArrayXd& g, Tape& tp) {
      ConstMatMap gm(g.data(), m, n);
      if (a.on_tape()) {
        MatMap ga(tp.grad_buffer(a.node()).data(), a.rows(), a.cols());
        ga.noalias() += gm * b.mat().transpose();
      }
      if (b.on_tape()) {
        MatMap gb(tp.grad_buffer(b.node()).data(), b.rows(), b.cols());
        gb.noalias() += a.mat().transpose() * gm;
      }
    });
  }
  return r;
}

Tensor transpose(const Tensor& a) {
  const Index m = a.rows(), n = a.cols();
  ArrayXd out(m * n);
  MatMap(out.data(), n, m) = a.mat().transpose();
  Tensor r(Shape{n, m}, std::move(out));
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a, m, n](const ArrayXd& g, Tape& tp) {
      ConstMatMap gm(g.data(), n, m);
      MatMap(tp.grad_buffer(a.node()).data(), m, n) += gm.transpose();
    });
  }
  return r;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor r(a.shape(), a.array() + b.array());
  if (Tape* tape = common_tape({&a, &b})) {
    tape->attach(r, {a.node(), b.node()}, [a, b](const ArrayXd& g, Tape& tp) {
      accumulate(tp, a, g);
      accumulate(tp, b, g);
    });
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.rank() != 1 || bias.dim(0) != a.cols()) {
    throw ShapeError("add_rowwise: " + shape_str(a.shape()) + " + " + shape_str(bias.shape()));
  }
  const Index m = a.rows(), n = a.cols();
  ArrayXd out(m * n);
  MatMap(out.data(), m, n) = a.mat().rowwise() + bias.vec().transpose();
  Tensor r(a.shape(), std::move(out));
  if (Tape* tape = common_tape({&a, &bias})) {
    tape->attach(r, {a.node(), bias.node()}, [a, bias, m, n](const ArrayXd& g, Tape& tp) {
      accumulate(tp, a, g);
      if (bias.on_tape()) {
        ConstMatMap gm(g.data(), m, n);
        Eigen::Map<Eigen::VectorXd>(tp.grad_buffer(bias.node()).data(), n) +=
            gm.colwise().sum().transpose();
      }
    });
  }
  return r;
}

Tensor scale(const Tensor& a, double c) {
  Tensor r(a.shape(), a.array() * c);
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a, c](const ArrayXd& g, Tape& tp) {
      tp.grad_buffer(a.node()) += c * g;
    });
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor r(a.shape(), a.array() * b.array());
  if (Tape* tape = common_tape({&a, &b})) {
    tape->attach(r, {a.node(), b.node()}, [a, b](const ArrayXd& g, Tape& tp) {
      if (a.on_tape()) tp.grad_buffer(a.node()) += g * b.array();
      if (b.on_tape()) tp.grad_buffer(b.node()) += g * a.array();
    });
  }
  return r;
}

Tensor relu(const Tensor& a) {
  Tensor r(a.shape(), a.array().max(0.0));
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a](const ArrayXd& g, Tape& tp) {
      // Subgradient 0 at the kink.
      tp.grad_buffer(a.node()) += g * (a.array() > 0.0).cast<double>();
    });
  }
  return r;
}

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  Shape out_shape = ref;
  Index total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != parts[0].rank()) throw ShapeError("concat: rank mismatch");
    for (Index ax = 0; ax < p.rank(); ++ax) {
      if (ax != axis && p.shape()[static_cast<std::size_t>(ax)] != ref[static_cast<std::size_t>(ax)]) {
        throw ShapeError("concat: shape mismatch at axis " + std::to_string(ax));
      }
    }
    total += p.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit sp = split_at(out_shape, axis);
  ArrayXd out(shape_size(out_shape));

  Index offset = 0;
  std::vector<Index> offsets;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const Index len = p.dim(axis);
    for (Index o = 0; o < sp.outer; ++o) {
      out.segment((o * sp.len + offset) * sp.inner, len * sp.inner) =
          p.array().segment(o * len * sp.inner, len * sp.inner);
    }
    offset += len;
  }
  Tensor r(out_shape, std::move(out));

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  Tape* tape = nullptr;
  for (const Tensor* p : ptrs) {
    if (p->on_tape()) {
      if (tape && tape != p->tape()) throw ContractError("concat mixes tapes");
      tape = p->tape();
    }
  }
  if (tape) {
    std::vector<int> parent_ids;
    for (const Tensor& p : parts)
      if (p.on_tape()) parent_ids.push_back(p.node());
    std::vector<Tensor> captured = parts;
    tape->attach(r, std::move(parent_ids), [captured, offsets, sp, axis](const ArrayXd& g, Tape& tp) {
      for (std::size_t pi = 0; pi < captured.size(); ++pi) {
        const Tensor& p = captured[pi];
        if (!p.on_tape()) continue;
        const Index len = p.dim(axis);
        ArrayXd& gp = tp.grad_buffer(p.node());
        for (Index o = 0; o < sp.outer; ++o) {
          gp.segment(o * len * sp.inner, len * sp.inner) +=
              g.segment((o * sp.len + offsets[pi]) * sp.inner, len * sp.inner);
        }
      }
    });
  }
  return r;
}

Tensor slice(const Tensor& a, Index axis, Index begin, Index len) {
  const AxisSplit sp = split_at(a.shape(), axis);
  if (begin < 0 || len <= 0 || begin + len > sp.len) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(begin + len) +
                     ") out of bounds for axis length " + std::to_string(sp.len));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  ArrayXd out(shape_size(out_shape));
  for (Index o = 0; o < sp.outer; ++o) {
    out.segment(o * len * sp.inner, len * sp.inner) =
        a.array().segment((o * sp.len + begin) * sp.inner, len * sp.inner);
  }
  Tensor r(out_shape, std::move(out));
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a, sp, begin, len](const ArrayXd& g, Tape& tp) {
      ArrayXd& ga = tp.grad_buffer(a.node());
      for (Index o = 0; o < sp.outer; ++o) {
        ga.segment((o * sp.len + begin) * sp.inner, len * sp.inner) +=
            g.segment(o * len * sp.inner, len * sp.inner);
      }
    });
  }
  return r;
}

Tensor slice_rows(const Tensor& a, Index begin, Index len) { return slice(a, 0, begin, len); }

Tensor slice_cols(const Tensor& a, Index begin, Index len) {
  if (a.rank() != 2) throw ShapeError("slice_cols: want rank 2");
  return slice(a, 1, begin, len);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes size");
  }
  Tensor r(std::move(shape), a.array());
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a](const ArrayXd& g, Tape& tp) {
      tp.grad_buffer(a.node()) += g;
    });
  }
  return r;
}

Tensor softmax(const Tensor& a, Index axis) {
  const AxisSplit sp = split_at(a.shape(), axis);
  if (sp.len < 1) throw ShapeError("softmax: empty axis");
  ArrayXd out(a.size());
  const ArrayXd& x = a.array();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index t = 0; t < sp.len; ++t) mx = std::max(mx, x((o * sp.len + t) * sp.inner + i));
      double denom = 0.0;
      for (Index t = 0; t < sp.len; ++t) {
        const double e = std::exp(x((o * sp.len + t) * sp.inner + i) - mx);
        out((o * sp.len + t) * sp.inner + i) = e;
        denom += e;
      }
      for (Index t = 0; t < sp.len; ++t) out((o * sp.len + t) * sp.inner + i) /= denom;
    }
  }
  Tensor r(a.shape(), std::move(out));
  if (Tape* tape = common_tape({&a})) {
    const ArrayXd s = r.array();
    tape->attach(r, {a.node()}, [a, s, sp](const ArrayXd& g, Tape& tp) {
      ArrayXd& ga = tp.grad_buffer(a.node());
      for (Index o = 0; o < sp.outer; ++o) {
        for (Index i = 0; i < sp.inner; ++i) {
          double dot = 0.0;
          for (Index t = 0; t < sp.len; ++t) {
            const Index idx = (o * sp.len + t) * sp.inner + i;
            dot += g(idx) * s(idx);
          }
          for (Index t = 0; t < sp.len; ++t) {
            const Index idx = (o * sp.len + t) * sp.inner + i;
            ga(idx) += s(idx) * (g(idx) - dot);
          }
        }
      }
    });
  }
  return r;
}

Tensor log_softmax(const Tensor& a, Index axis) {
  const AxisSplit sp = split_at(a.shape(), axis);
  if (sp.len < 1) throw ShapeError("log_softmax: empty axis");
  ArrayXd out(a.size());
  const ArrayXd& x = a.array();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index t = 0; t < sp.len; ++t) mx = std::max(mx, x((o * sp.len + t) * sp.inner + i));
      double denom = 0.0;
      for (Index t = 0; t < sp.len; ++t) denom += std::exp(x((o * sp.len + t) * sp.inner + i) - mx);
      const double lse = mx + std::log(denom);
      for (Index t = 0; t < sp.len; ++t) {
        const Index idx = (o * sp.len + t) * sp.inner + i;
        out(idx) = x(idx) - lse;
      }
    }
  }
  Tensor r(a.shape(), std::move(out));
  if (Tape* tape = common_tape({&a})) {
    const ArrayXd logp = r.array();
    tape->attach(r, {a.node()}, [a, logp, sp](const ArrayXd& g, Tape& tp) {
      ArrayXd& ga = tp.grad_buffer(a.node());
      for (Index o = 0; o < sp.outer; ++o) {
        for (Index i = 0; i < sp.inner; ++i) {
          double gsum = 0.0;
          for (Index t = 0; t < sp.len; ++t) gsum += g((o * sp.len + t) * sp.inner + i);
          for (Index t = 0; t < sp.len; ++t) {
            const Index idx = (o * sp.len + t) * sp.inner + i;
            ga(idx) += g(idx) - std::exp(logp(idx)) * gsum;
          }
        }
      }
    });
  }
  return r;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank >= 1 required");
  const Index d = x.shape().back();
  if (d < 2) throw ShapeError("layer_norm: last axis must have length >= 2");
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
  }
  const Index slices = x.size() / d;
  ArrayXd xhat(x.size());
  ArrayXd istd(slices);
  const ArrayXd& xv = x.array();
  for (Index s = 0; s < slices; ++s) {
    auto seg = xv.segment(s * d, d);
    const double mu = seg.mean();
    const double var = (seg - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    istd(s) = is;
    xhat.segment(s * d, d) = (seg - mu) * is;
  }
  ArrayXd out(x.size());
  for (Index s = 0; s < slices; ++s) {
    out.segment(s * d, d) = xhat.segment(s * d, d) * gain.array() + bias.array();
  }
  Tensor r(x.shape(), std::move(out));
  if (Tape* tape = common_tape({&x, &gain, &bias})) {
    tape->attach(r, {x.node(), gain.node(), bias.node()},
                 [x, gain, bias, xhat, istd, d, slices](const ArrayXd& g, Tape& tp) {
      for (Index s = 0; s < slices; ++s) {
        auto gseg = g.segment(s * d, d);
        auto xh = xhat.segment(s * d, d);
        if (gain.on_tape()) tp.grad_buffer(gain.node()) += gseg * xh;
        if (bias.on_tape()) tp.grad_buffer(bias.node()) += gseg;
        if (x.on_tape()) {
          const double is = istd(s);
          ArrayXd dxhat = gseg * gain.array();
          const double mean_dxhat = dxhat.mean();
          const double mean_dxhat_xhat = (dxhat * xh).mean();
          // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          tp.grad_buffer(x.node()).segment(s * d, d) +=
              is * (dxhat - mean_dxhat - xh * mean_dxhat_xhat);
        }
      }
    });
  }
  return r;
}

Tensor sum(const Tensor& a) {
  Tensor r(Shape{}, ArrayXd::Constant(1, a.array().sum()));
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a](const ArrayXd& g, Tape& tp) {
      tp.grad_buffer(a.node()) += g(0);
    });
  }
  return r;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  Tensor r(Shape{}, ArrayXd::Constant(1, a.array().sum() / n));
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a, n](const ArrayXd& g, Tape& tp) {
      tp.grad_buffer(a.node()) += g(0) / n;
    });
  }
  return r;
}

Tensor max_over_axis(const Tensor& a, Index axis) {
  const AxisSplit sp = split_at(a.shape(), axis);
  Shape out_shape;
  for (Index ax = 0; ax < a.rank(); ++ax) {
    if (ax != axis) out_shape.push_back(a.shape()[static_cast<std::size_t>(ax)]);
  }
  ArrayXd out(sp.outer * sp.inner);
  std::vector<Index> argmax(static_cast<std::size_t>(sp.outer * sp.inner));
  const ArrayXd& x = a.array();
  for (Index o = 0; o < sp.outer; ++o) {
    for (Index i = 0; i < sp.inner; ++i) {
      Index best = 0;
      double bv = x((o * sp.len) * sp.inner + i);
      for (Index t = 1; t < sp.len; ++t) {
        const double v = x((o * sp.len + t) * sp.inner + i);
        if (v > bv) {
          bv = v;
          best = t;
        }
      }
      out(o * sp.inner + i) = bv;
      argmax[static_cast<std::size_t>(o * sp.inner + i)] = best;
    }
  }
  Tensor r(out_shape, std::move(out));
  if (Tape* tape = common_tape({&a})) {
    tape->attach(r, {a.node()}, [a, sp, argmax](const ArrayXd& g, Tape& tp) {
      ArrayXd& ga = tp.grad_buffer(a.node());
      for (Index o = 0; o < sp.outer; ++o) {
        for (Index i = 0; i < sp.inner; ++i) {
          const Index t = argmax[static_cast<std::size_t>(o * sp.inner + i)];
          ga((o * sp.len + t) * sp.inner + i) += g(o * sp.inner + i);
        }
      }
    });
  }
  return r;
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError("row_dot: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Index m = a.rows(), n = a.cols();
  ArrayXd out(m);
  for (Index i = 0; i < m; ++i) {
    out(i) = (a.array().segment(i * n, n) * b.array().segment(i * n, n)).sum();
  }
  Tensor r(Shape{m}, std::move(out));
  if (Tape* tape = common_tape({&a, &b})) {
    tape->attach(r, {a.node(), b.node()}, [a, b, m, n](const ArrayXd& g, Tape& tp) {
      for (Index i = 0; i < m; ++i) {
        if (a.on_tape()) tp.grad_buffer(a.node()).segment(i * n, n) += g(i) * b.array().segment(i * n, n);
        if (b.on_tape()) tp.grad_buffer(b.node()).segment(i * n, n) += g(i) * a.array().segment(i * n, n);
      }
    });
  }
  return r;
}

Tensor sqrt_clamped(const Tensor& a) {
  Tensor r(a.shape(), a.array().max(0.0).sqrt());
  if (Tape* tape = common_tape({&a})) {
    const ArrayXd v = r.array();
    tape->attach(r, {a.node()}, [a, v](const ArrayXd& g, Tape& tp) {
      tp.grad_buffer(a.node()) += g / (2.0 * v.max(1e-8));
    });
  }
  return r;
}

Tensor triple_poly(const Tensor& x, const Tensor& y, const Tensor& z,
                   const Tensor& pp, const Tensor& l1, const Tensor& l2) {
  const Index n = x.rows(), m1 = x.cols(), m2 = y.cols();
  if (y.rows() != n || z.rows() != m1 || z.cols() != m2 || pp.rank() != 1 ||
      pp.dim(0) != n || l1.rank() != 1 || l1.dim(0) != m1 || l2.rank() != 1 || l2.dim(0) != m2) {
    throw ShapeError("triple_poly: inconsistent input shapes");
  }
  auto X = x.mat();
  auto Y = y.mat();
  auto Z = z.mat();
  const ArrayXd& P = pp.array();
  const ArrayXd& L1 = l1.array();
  const ArrayXd& L2 = l2.array();
  ArrayXd out(n * m1 * m2);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m1; ++j) {
      for (Index k = 0; k < m2; ++k) {
        out((i * m1 + j) * m2 + k) = X(i, j) * X(i, j) * L2(k) + Z(j, k) * Z(j, k) * P(i) +
                                     Y(i, k) * Y(i, k) * L1(j) - 2.0 * X(i, j) * Y(i, k) * Z(j, k);
      }
    }
  }
  Tensor r(Shape{n, m1 * m2}, std::move(out));
  if (Tape* tape = common_tape({&x, &y, &z, &pp, &l1, &l2})) {
    tape->attach(r, {x.node(), y.node(), z.node(), pp.node(), l1.node(), l2.node()},
                 [x, y, z, pp, l1, l2, n, m1, m2](const ArrayXd& g, Tape& tp) {
      auto X = x.mat();
      auto Y = y.mat();
      auto Z = z.mat();
      const ArrayXd& P = pp.array();
      const ArrayXd& L1 = l1.array();
      const ArrayXd& L2 = l2.array();
      for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < m1; ++j) {
          for (Index k = 0; k < m2; ++k) {
            const double gi = g((i * m1 + j) * m2 + k);
            if (gi == 0.0) continue;
            if (x.on_tape())
              tp.grad_buffer(x.node())(i * m1 + j) += gi * (2.0 * X(i, j) * L2(k) - 2.0 * Y(i, k) * Z(j, k));
            if (y.on_tape())
              tp.grad_buffer(y.node())(i * m2 + k) += gi * (2.0 * Y(i, k) * L1(j) - 2.0 * X(i, j) * Z(j, k));
            if (z.on_tape())
              tp.grad_buffer(z.node())(j * m2 + k) += gi * (2.0 * Z(j, k) * P(i) - 2.0 * X(i, j) * Y(i, k));
            if (pp.on_tape()) tp.grad_buffer(pp.node())(i) += gi * Z(j, k) * Z(j, k);
            if (l1.on_tape()) tp.grad_buffer(l1.node())(j) += gi * Y(i, k) * Y(i, k);
            if (l2.on_tape()) tp.grad_buffer(l2.node())(k) += gi * X(i, j) * X(i, j);
          }
        }
      }
    });
  }
  return r;
}

Tensor bilinear_pairs(const Tensor& b3, const Tensor& u, const Tensor& v) {
  if (b3.rank() != 3 || b3.dim(0) != b3.dim(1) || b3.dim(1) != b3.dim(2)) {
    throw ShapeError("bilinear_pairs: b3 must be [d,d,d], got " + shape_str(b3.shape()));
  }
  const Index d = b3.dim(0);
  if (u.rank() != 2 || v.rank() != 2 || u.cols() != d || v.cols() != d) {
    throw ShapeError("bilinear_pairs: u/v must have " + std::to_string(d) + " columns");
  }
  const Index mu = u.rows(), mv = v.rows();
  ConstMatMap bmat(b3.array().data(), d, d * d);  // row a, col b*d+c
  ArrayXd out(mu * mv * d);
  MatrixRM t(d, d);  // per-j contraction of the u index: t(b,c)
  for (Index j = 0; j < mu; ++j) {
    Eigen::Map<MatrixRM>(t.data(), 1, d * d).noalias() = u.mat().row(j) * bmat;
    for (Index k = 0; k < mv; ++k) {
      MatMap(out.data() + (j * mv + k) * d, 1, d).noalias() = v.mat().row(k) * t;
    }
  }
  Tensor r(Shape{mu * mv, d}, std::move(out));
  if (Tape* tape = common_tape({&b3, &u, &v})) {
    tape->attach(r, {b3.node(), u.node(), v.node()}, [b3, u, v, d, mu, mv](const ArrayXd& g, Tape& tp) {
      ConstMatMap bmat(b3.array().data(), d, d * d);
      ConstMatMap gm(g.data(), mu * mv, d);
      MatrixRM t(d, d);
      MatrixRM s(d, d);  // s(b,c) = sum_k v(k,b) g((j,k),c)
      for (Index j = 0; j < mu; ++j) {
        s.setZero();
        for (Index k = 0; k < mv; ++k) {
          s.noalias() += v.mat().row(k).transpose() * gm.row(j * mv + k);
        }
        Eigen::Map<const Eigen::RowVectorXd> sflat(s.data(), d * d);
        if (b3.on_tape()) {
          MatMap gb(tp.grad_buffer(b3.node()).data(), d, d * d);
          gb.noalias() += u.mat().row(j).transpose() * sflat;
        }
        if (u.on_tape()) {
          MatMap gu(tp.grad_buffer(u.node()).data(), mu, d);
          gu.row(j).noalias() += sflat * bmat.transpose();
        }
        if (v.on_tape()) {
          Eigen::Map<MatrixRM>(t.data(), 1, d * d).noalias() = u.mat().row(j) * bmat;
          MatMap gv(tp.grad_buffer(v.node()).data(), mv, d);
          for (Index k = 0; k < mv; ++k) {
            gv.row(k).noalias() += gm.row(j * mv + k) * t.transpose();
          }
        }
      }
    });
  }
  return r;
}

Tensor im2col(const Tensor& x, Index kh, Index kw) {
  if (x.rank() != 3) throw ShapeError("im2col: want [h,w,c], got " + shape_str(x.shape()));
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (kh < 1 || kw < 1 || kh > h || kw > w) throw ShapeError("im2col: kernel larger than input");
  const Index oh = h - kh + 1, ow = w - kw + 1;
  ArrayXd out(oh * ow * kh * kw * c);
  const ArrayXd& xv = x.array();
  Index pos = 0;
  for (Index py = 0; py < oh; ++py) {
    for (Index px = 0; px < ow; ++px) {
      for (Index di = 0; di < kh; ++di) {
        for (Index dj = 0; dj < kw; ++dj) {
          out.segment(pos, c) = xv.segment(((py + di) * w + (px + dj)) * c, c);
          pos += c;
        }
      }
    }
  }
  Tensor r(Shape{oh * ow, kh * kw * c}, std::move(out));
  if (Tape* tape = common_tape({&x})) {
    tape->attach(r, {x.node()}, [x, h, w, c, kh, kw, oh, ow](const ArrayXd& g, Tape& tp) {
      (void)h;
      ArrayXd& gx = tp.grad_buffer(x.node());
      Index pos = 0;
      for (Index py = 0; py < oh; ++py) {
        for (Index px = 0; px < ow; ++px) {
          for (Index di = 0; di < kh; ++di) {
            for (Index dj = 0; dj < kw; ++dj) {
              gx.segment(((py + di) * w + (px + dj)) * c, c) += g.segment(pos, c);
              pos += c;
            }
          }
        }
      }
    });
  }
  return r;
}

Tensor cross_entropy_with_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_with_logits: want [n,c] logits");
  const Index n = logits.rows(), c = logits.cols();
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("cross_entropy_with_logits: label count mismatch");
  }
  for (int l : labels) {
    if (l < 0 || l >= c) throw ContractError("cross_entropy_with_logits: label out of range");
  }
  const ArrayXd& x = logits.array();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    auto row = x.segment(i * c, c);
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row - mx).exp().sum());
    total += lse - row(labels[static_cast<std::size_t>(i)]);
  }
  Tensor r(Shape{}, ArrayXd::Constant(1, total / static_cast<double>(n)));
  if (Tape* tape = common_tape({&logits})) {
    tape->attach(r, {logits.node()}, [logits, labels, n, c](const ArrayXd& g, Tape& tp) {
      const ArrayXd& x = logits.array();
      ArrayXd& gl = tp.grad_buffer(logits.node());
      const double scale = g(0) / static_cast<double>(n);
      for (Index i = 0; i < n; ++i) {
        auto row = x.segment(i * c, c);
        const double mx = row.maxCoeff();
        ArrayXd p = (row - mx).exp();
        p /= p.sum();
        gl.segment(i * c, c) += scale * p;
        gl(i * c + labels[static_cast<std::size_t>(i)]) -= scale;
      }
    });
  }
  return r;
}

}  // namespace stx
