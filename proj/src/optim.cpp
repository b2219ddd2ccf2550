#include "stx/optim.hpp"

#include <cmath>

#include "stx/errors.hpp"

namespace stx::nn {

double clip_factor(double r, double eps) {
  if (eps <= 0.0) throw ContractError("clip_factor: eps must be positive");
  if (r < 0.0) throw ContractError("clip_factor: accumulator must be nonnegative");
  const double u = std::sqrt(r / eps);
  return u / std::sqrt(1.0 + u * u);
}

void RmsProp::step(const std::vector<std::pair<std::string, Tensor*>>& params,
                   const std::vector<const ArrayXd*>& grads) {
  if (params.size() != grads.size()) throw ContractError("RmsProp::step: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i]->size() != params[i].second->size()) {
      throw ShapeError("RmsProp::step: gradient shape mismatch for " + params[i].first);
    }
    if (!grads[i]->isFinite().all()) {
      throw ContractError("RmsProp::step: non-finite gradient for " + params[i].first);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ArrayXd& g = *grads[i];
    ArrayXd& r = accum_.try_emplace(params[i].first, ArrayXd::Zero(g.size())).first->second;
    if (r.size() != g.size()) throw ShapeError("RmsProp::step: accumulator shape changed");
    r = config_.decay * r + (1.0 - config_.decay) * g.square();
    params[i].second->mutable_array() -= config_.lr * g / (r + config_.eps).sqrt();
  }
}

const ArrayXd& RmsProp::accumulator(const std::string& name) const {
  auto it = accum_.find(name);
  if (it == accum_.end()) throw ContractError("RmsProp: no accumulator named " + name);
  return it->second;
}

std::vector<std::pair<std::string, Tensor>> RmsProp::state_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [name, r] : accum_) {
    out.emplace_back(name, Tensor(Shape{r.size()}, r));
  }
  return out;
}

void RmsProp::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
  accum_.clear();
  for (const auto& [name, t] : state) accum_[name] = t.array();
}

}  // namespace stx::nn
