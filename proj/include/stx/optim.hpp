#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stx/tensor.hpp"

namespace stx::nn {

/// RMSProp with the epsilon inside the square root:
///   r <- p r + (1-p) g^2
///   x <- x - k g / sqrt(r + eps)
/// Large eps makes this a smoothed-clipping variant of Rprop; see clip_factor.
struct RmsConfig {
  double lr = 2e-4;     // k
  double decay = 0.99;  // p
  double eps = 0.1;
  // Momentum 0 by construction; a momentum term is deliberately not supported.
};

/// S(sqrt(r/eps)) with the sigmoid S(u) = u / sqrt(1 + u^2): the effective
/// multiplicative clipping applied to the Rprop-style update k g / sqrt(r).
double clip_factor(double r, double eps);

class RmsProp {
 public:
  explicit RmsProp(RmsConfig config = {}) : config_(config) {}

  const RmsConfig& config() const { return config_; }

  /// Applies one update in place. `grads[i]` pairs with `params[i]`;
  /// accumulators are keyed by parameter name and created at zero on first
  /// use. Any non-finite gradient aborts before touching any parameter.
  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<const ArrayXd*>& grads);

  const ArrayXd& accumulator(const std::string& name) const;

  /// Accumulators as named tensors for serialization alongside the weights.
  std::vector<std::pair<std::string, Tensor>> state_tensors() const;
  void load_state(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  RmsConfig config_;
  std::map<std::string, ArrayXd> accum_;
};

}  // namespace stx::nn
