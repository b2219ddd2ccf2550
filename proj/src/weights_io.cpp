#include "stx/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "stx/errors.hpp"
#include "stx/version.hpp"

namespace stx::nn {

using ordered_json = nlohmann::ordered_json;

namespace {

void write_le(std::ofstream& out, const ArrayXd& a) {
  for (Index i = 0; i < a.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(a(i));
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    out.write(bytes, 8);
  }
}

ArrayXd read_le(std::ifstream& in, Index count) {
  ArrayXd a(count);
  for (Index i = 0; i < count; ++i) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    a(i) = std::bit_cast<double>(bits);
  }
  return a;
}

}  // namespace

void save_weights(const std::string& stem, const WeightsFile& file) {
  ordered_json manifest;
  manifest["format"] = "stx-weights-v1";
  manifest["code_version"] = kCodeVersion;
  manifest["variant"] = file.variant;
  manifest["num_virtual"] = file.num_virtual;
  manifest["metadata"] = file.metadata.is_null() ? ordered_json::object() : file.metadata;
  ordered_json tensors = ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    tensors.push_back(e);
    offset += static_cast<std::uint64_t>(t.size()) * 8;
  }
  manifest["tensors"] = tensors;

  std::ofstream mj(stem + ".json");
  if (!mj) throw ValueError("save_weights: cannot open " + stem + ".json");
  mj << manifest.dump(2) << "\n";

  std::ofstream blob(stem + ".bin", std::ios::binary);
  if (!blob) throw ValueError("save_weights: cannot open " + stem + ".bin");
  for (const auto& [name, t] : file.tensors) write_le(blob, t.array());
  if (!blob) throw ValueError("save_weights: blob write failed");
}

WeightsFile load_weights(const std::string& stem) {
  std::ifstream mj(stem + ".json");
  if (!mj) throw ValueError("load_weights: cannot open " + stem + ".json");
  ordered_json manifest = ordered_json::parse(mj);
  if (manifest.at("format") != "stx-weights-v1") {
    throw ValueError("load_weights: not an stx weights file");
  }
  WeightsFile file;
  file.variant = manifest.at("variant").get<std::string>();
  file.num_virtual = manifest.at("num_virtual").get<int>();
  file.metadata = manifest.at("metadata");

  std::ifstream blob(stem + ".bin", std::ios::binary);
  if (!blob) throw ValueError("load_weights: cannot open " + stem + ".bin");
  for (const auto& e : manifest.at("tensors")) {
    const std::string name = e.at("name").get<std::string>();
    const Shape shape = e.at("shape").get<Shape>();
    const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
    blob.seekg(static_cast<std::streamoff>(offset));
    ArrayXd data = read_le(blob, shape_size(shape));
    if (!blob) throw ValueError("load_weights: blob truncated at tensor " + name);
    file.tensors.emplace_back(name, Tensor(shape, std::move(data)));
  }
  return file;
}

void save_agent(const std::string& stem, AgentWeights& weights, const RmsProp* optimizer,
                ordered_json metadata) {
  WeightsFile file;
  file.variant = variant_str(weights.config.variant);
  file.num_virtual = static_cast<int>(weights.config.num_virtual());
  file.metadata = std::move(metadata);
  for (auto& [name, t] : weights.named_params()) file.tensors.emplace_back(name, *t);
  if (optimizer) {
    for (auto& [name, t] : optimizer->state_tensors()) {
      file.tensors.emplace_back("optim/" + name, t);
    }
  }
  save_weights(stem, file);
}

LoadedAgent load_agent(const std::string& stem) {
  WeightsFile file = load_weights(stem);
  AgentConfig config = file.variant == "simplicial" ? AgentConfig::simplicial()
                                                    : AgentConfig::relational();
  Rng rng(0);
  LoadedAgent out{AgentWeights::init(config, rng), {}, file.metadata};
  auto params = out.weights.named_params();
  std::size_t found = 0;
  for (const auto& [name, t] : file.tensors) {
    if (name.rfind("optim/", 0) == 0) {
      out.optimizer_state.emplace_back(name.substr(6), t);
      continue;
    }
    bool matched = false;
    for (auto& [pname, p] : params) {
      if (pname != name) continue;
      if (p->shape() != t.shape()) {
        throw ValueError("load_agent: shape mismatch for " + name);
      }
      *p = t;
      matched = true;
      ++found;
      break;
    }
    if (!matched) throw ValueError("load_agent: unknown tensor " + name);
  }
  if (found != params.size()) throw ValueError("load_agent: missing tensors in " + stem);
  return out;
}

}  // namespace stx::nn
