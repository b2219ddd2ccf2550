#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stx/agent.hpp"
#include "stx/optim.hpp"
#include "stx/tensor.hpp"

namespace stx::nn {

/// Weights-file container: <stem>.json manifest (name, shape, byte offset per
/// tensor) plus <stem>.bin, one raw little-endian f64 blob. Round-trips are
/// bit-exact.
struct WeightsFile {
  std::string variant;  // "relational" | "simplicial" | "" for plain bundles
  int num_virtual = 0;
  nlohmann::ordered_json metadata;  // run configuration and the like
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_weights(const std::string& stem, const WeightsFile& file);
WeightsFile load_weights(const std::string& stem);

/// Saves agent weights (and optimizer accumulators, when given) with the
/// variant and virtual-entity count recorded in the manifest.
void save_agent(const std::string& stem, AgentWeights& weights, const RmsProp* optimizer,
                nlohmann::ordered_json metadata);

struct LoadedAgent {
  AgentWeights weights;
  std::vector<std::pair<std::string, Tensor>> optimizer_state;  // empty if none saved
  nlohmann::ordered_json metadata;
};

LoadedAgent load_agent(const std::string& stem);

}  // namespace stx::nn
