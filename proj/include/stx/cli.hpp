#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stx/agent.hpp"
#include "stx/boxworld.hpp"
#include "stx/logic.hpp"

namespace stx::cli {

using ordered_json = nlohmann::ordered_json;

std::string action_name(env::Action a);
env::Action action_from(const ordered_json& token);
void write_actions(const std::string& path, const std::vector<env::Action>& actions,
                   const ordered_json& run_config);
std::vector<env::Action> read_actions(const std::string& path);

ordered_json load_json(const std::string& path);
void write_json(const std::string& path, const ordered_json& doc);

/// Episode-distribution settings shared by gen, eval and train-ac.
struct SampleSpec {
  int rows = 7;
  int cols = 9;
  int solution_length = 0;  // 0 = uniform in [1, max_a]
  int max_a = 3;
  double bridge_fraction = 0.5;
  std::optional<env::BridgeSpec> forced_bridge;  // requires fixed solution_length
  bool standard_mode = false;
  int distractors = 0;
  std::optional<int> horizon;

  ordered_json to_json() const;
};
env::EpisodeConfig sample_config(const SampleSpec& spec, Rng& rng);
/// Parses "a,b,c"; c = 0 means bridge-free with fixed a; empty = sampled.
void apply_type(SampleSpec& spec, const std::string& type);

// ---- gen --------------------------------------------------------------------

struct GenConfig {
  std::uint64_t seed = 0;
  int count = 10;
  SampleSpec sample;
  bool frames = true;
  bool solver_actions = false;
  std::string out_dir = "out/gen";
};

struct GenReport {
  int episodes = 0;
  int bridges = 0;
  std::vector<std::string> episode_files;
};

GenReport cmd_gen(const GenConfig& config);

// ---- render -----------------------------------------------------------------

struct RenderConfig {
  std::string episode_path;
  std::string actions_path;  // optional; only the initial frame without it
  std::string out_dir = "out/render";
};

int cmd_render(const RenderConfig& config);  // frames written

// ---- train-bc ---------------------------------------------------------------

struct TrainBcConfig {
  std::uint64_t seed = 1;
  int episodes = 5000;
  std::string type = "1,1,2";
  SampleSpec sample;
  std::string variant = "simplicial";
  int epochs = 3;
  int batch_size = 64;
  double lr = 1e-3;
  double holdout_fraction = 0.1;
  double stop_at_accuracy = 0.0;  // 0 = never stop early
  std::string out_stem = "out/bc_model";
  std::string metrics_path = "out/bc_metrics.jsonl";
  std::optional<std::string> resume_stem;
};

struct TrainBcReport {
  double final_loss = 0.0;
  double holdout_accuracy = 0.0;
  int epochs_run = 0;
  std::vector<double> epoch_losses;
  std::vector<double> epoch_accuracies;
};

TrainBcReport cmd_train_bc(const TrainBcConfig& config);

// ---- train-ac ---------------------------------------------------------------

struct TrainAcConfig {
  std::uint64_t seed = 1;
  SampleSpec sample;  // defaults overridden to the small board by the CLI
  std::string variant = "simplicial";
  std::int64_t total_steps = 200000;
  int num_envs = 8;
  int unroll = 40;
  double gamma = 0.99;
  double entropy_coef = 5e-3;
  double value_coef = 0.5;
  double lr = 2e-4;
  int eval_every = 0;  // steps between greedy evals; 0 = off
  int eval_episodes = 50;
  int eval_horizon = 200;
  std::string out_stem = "out/ac_model";
  std::string metrics_path = "out/ac_metrics.jsonl";
};

struct TrainAcReport {
  std::int64_t steps = 0;
  int episodes = 0;
  double final_window_win_rate = 0.0;  // completed episodes, trailing window
  double final_entropy = 0.0;
  double mean_entropy_last_tenth = 0.0;
};

TrainAcReport cmd_train_ac(const TrainAcConfig& config);

// ---- eval -------------------------------------------------------------------

struct EvalConfig {
  std::uint64_t seed = 7;
  int episodes = 100;
  SampleSpec sample;
  std::string policy = "greedy";  // greedy | sample | solver | random
  std::string weights_stem;       // for greedy/sample
  std::optional<int> horizon;     // overrides sample.horizon when set
  std::string report_path = "out/eval_report.json";
};

struct TypeStats {
  int episodes = 0;
  int wins = 0;
  int bridge_opened = 0;
  int truncated = 0;
  double total_reward = 0.0;
  std::int64_t total_length = 0;
  double win_rate() const { return episodes ? static_cast<double>(wins) / episodes : 0.0; }
};

struct EvalReport {
  std::map<std::string, TypeStats> per_type;
  TypeStats overall;
};

EvalReport cmd_eval(const EvalConfig& config);

// ---- attn-dump --------------------------------------------------------------

struct AttnDumpConfig {
  std::string weights_stem;
  std::string episode_path;
  std::string actions_path;  // empty = use solver actions
  double sharpen = 1.0;      // logit multiplier for overlays only
  std::string out_dir = "out/attn";
};

struct AttnDumpReport {
  int timesteps = 0;
  int records = 0;
  int overlays = 0;
};

AttnDumpReport cmd_attn_dump(const AttnDumpConfig& config);

// ---- check-logic ------------------------------------------------------------

struct CheckLogicConfig {
  std::string episode_path;
  std::string actions_path;  // empty = use solver actions
  std::string out_path;      // optional JSON output
};

struct CheckLogicReport {
  bool proved = false;
  std::string text;  // proof tree or failure description
  logic::ProofResult result;
};

CheckLogicReport cmd_check_logic(const CheckLogicConfig& config);

// ---- selftest ---------------------------------------------------------------

int cmd_selftest();

}  // namespace stx::cli
