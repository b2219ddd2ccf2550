#pragma once

#include <functional>
#include <vector>

#include "stx/rng.hpp"
#include "stx/tensor.hpp"

namespace stx::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  ArrayXd& a = t.mutable_array();
  for (Index i = 0; i < a.size(); ++i) a(i) = rng.uniform(lo, hi);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

/// Central-difference check of the gradients of `build` w.r.t. every listed
/// parameter. `build` is called with watched copies for the analytic pass and
/// with perturbed plain tensors for the numeric one. Returns the worst
/// relative error; samples `sample_per_param` random elements per parameter
/// when positive, otherwise checks all of them.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& build,
                        const std::vector<Tensor>& params, double h = 1e-5,
                        int sample_per_param = 0, Rng* rng = nullptr) {
  Tape tape;
  std::vector<Tensor> watched;
  watched.reserve(params.size());
  for (const Tensor& p : params) watched.push_back(tape.leaf(p));
  Tensor loss = build(watched);
  tape.backward(loss);
  std::vector<ArrayXd> grads;
  grads.reserve(params.size());
  for (const Tensor& w : watched) grads.push_back(tape.grad(w));

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    std::vector<Index> indices;
    if (sample_per_param > 0 && params[pi].size() > sample_per_param) {
      for (int s = 0; s < sample_per_param; ++s) {
        indices.push_back(static_cast<Index>(rng->below(static_cast<std::uint64_t>(params[pi].size()))));
      }
    } else {
      for (Index i = 0; i < params[pi].size(); ++i) indices.push_back(i);
    }
    for (Index i : indices) {
      std::vector<Tensor> up = params, dn = params;
      ArrayXd u = params[pi].array(), d = params[pi].array();
      u(i) += h;
      d(i) -= h;
      up[pi] = Tensor(params[pi].shape(), std::move(u));
      dn[pi] = Tensor(params[pi].shape(), std::move(d));
      const double fd = (build(up).value() - build(dn).value()) / (2.0 * h);
      worst = std::max(worst, rel_err(fd, grads[pi](i)));
    }
  }
  return worst;
}

}  // namespace stx::test
