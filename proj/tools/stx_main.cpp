#include <CLI11.hpp>
#include <iostream>

#include "stx/cli.hpp"
#include "stx/errors.hpp"
#include "stx/version.hpp"

namespace {

using stx::cli::ordered_json;

// Values from --config file.json become defaults; explicit flags override them.
ordered_json maybe_config(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") return stx::cli::load_json(argv[i + 1]);
  }
  return ordered_json::object();
}

template <typename T>
void from_config(const ordered_json& cfg, const char* key, T& value) {
  if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

void add_sample_flags(CLI::App* cmd, stx::cli::SampleSpec& spec, std::string& type,
                      const ordered_json& cfg) {
  from_config(cfg, "rows", spec.rows);
  from_config(cfg, "cols", spec.cols);
  from_config(cfg, "bridge_fraction", spec.bridge_fraction);
  from_config(cfg, "type", type);
  from_config(cfg, "standard_mode", spec.standard_mode);
  from_config(cfg, "distractors", spec.distractors);
  cmd->add_option("--rows", spec.rows, "playing-area rows");
  cmd->add_option("--cols", spec.cols, "playing-area columns");
  cmd->add_option("--bridge-fraction", spec.bridge_fraction, "probability an episode has a bridge");
  cmd->add_option("--type", type, "puzzle type a,b,c (c=0: bridge-free; empty: sampled)");
  cmd->add_flag("--standard", spec.standard_mode, "standard single-lock BoxWorld");
  cmd->add_option("--distractors", spec.distractors, "distractor boxes (standard mode)");
}

void finish_sample(stx::cli::SampleSpec& spec, const std::string& type, int horizon) {
  stx::cli::apply_type(spec, type);
  if (horizon > 0) spec.horizon = horizon;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2-simplicial Transformer workbench: bridge BoxWorld, agents, analysis"};
  app.set_version_flag("--version", std::string(stx::kCodeVersion));
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values");

  const ordered_json cfg = maybe_config(argc, argv);

  // gen
  auto* gen = app.add_subcommand("gen", "generate seeded episodes");
  stx::cli::GenConfig genc;
  std::string gen_type;
  int gen_horizon = 0;
  from_config(cfg, "seed", genc.seed);
  from_config(cfg, "count", genc.count);
  from_config(cfg, "out_dir", genc.out_dir);
  gen->add_option("--seed", genc.seed);
  gen->add_option("--count", genc.count);
  gen->add_option("--out", genc.out_dir);
  gen->add_flag("--no-frames{false}", genc.frames, "skip PPM frames");
  gen->add_flag("--solver-actions", genc.solver_actions, "also write solver trajectories");
  gen->add_option("--horizon", gen_horizon);
  add_sample_flags(gen, genc.sample, gen_type, cfg);

  // render
  auto* render = app.add_subcommand("render", "render an episode (and a trajectory) to PPM frames");
  stx::cli::RenderConfig renderc;
  render->add_option("--episode", renderc.episode_path)->required();
  render->add_option("--actions", renderc.actions_path);
  render->add_option("--out", renderc.out_dir);

  // train-bc
  auto* bc = app.add_subcommand("train-bc", "behaviour cloning on solver trajectories");
  stx::cli::TrainBcConfig bcc;
  int bc_horizon = 0;
  from_config(cfg, "seed", bcc.seed);
  from_config(cfg, "episodes", bcc.episodes);
  from_config(cfg, "variant", bcc.variant);
  from_config(cfg, "epochs", bcc.epochs);
  from_config(cfg, "lr", bcc.lr);
  bc->add_option("--seed", bcc.seed);
  bc->add_option("--episodes", bcc.episodes);
  bc->add_option("--variant", bcc.variant)->check(CLI::IsMember({"relational", "simplicial"}));
  bc->add_option("--epochs", bcc.epochs);
  bc->add_option("--batch-size", bcc.batch_size);
  bc->add_option("--lr", bcc.lr);
  bc->add_option("--holdout", bcc.holdout_fraction);
  bc->add_option("--stop-at", bcc.stop_at_accuracy, "stop once held-out accuracy reaches this");
  bc->add_option("--out", bcc.out_stem);
  bc->add_option("--metrics", bcc.metrics_path);
  std::string bc_resume;
  bc->add_option("--resume", bc_resume, "weights stem to resume from");
  add_sample_flags(bc, bcc.sample, bcc.type, cfg);

  // train-ac
  auto* ac = app.add_subcommand("train-ac", "single-process advantage actor-critic");
  stx::cli::TrainAcConfig acc;
  acc.sample.rows = 5;
  acc.sample.cols = 5;
  acc.sample.solution_length = 1;
  acc.sample.bridge_fraction = 0.0;
  std::string ac_type;
  int ac_horizon = 0;
  ac->add_option("--seed", acc.seed);
  ac->add_option("--variant", acc.variant)->check(CLI::IsMember({"relational", "simplicial"}));
  ac->add_option("--steps", acc.total_steps);
  ac->add_option("--envs", acc.num_envs);
  ac->add_option("--unroll", acc.unroll);
  ac->add_option("--gamma", acc.gamma);
  ac->add_option("--entropy-coef", acc.entropy_coef);
  ac->add_option("--value-coef", acc.value_coef);
  ac->add_option("--lr", acc.lr);
  ac->add_option("--eval-every", acc.eval_every);
  ac->add_option("--out", acc.out_stem);
  ac->add_option("--metrics", acc.metrics_path);
  ac->add_option("--horizon", ac_horizon);
  add_sample_flags(ac, acc.sample, ac_type, cfg);

  // eval
  auto* ev = app.add_subcommand("eval", "roll out a policy over seeded episode sets");
  stx::cli::EvalConfig evc;
  std::string ev_type;
  int ev_horizon = 0;
  ev->add_option("--seed", evc.seed);
  ev->add_option("--episodes", evc.episodes);
  ev->add_option("--policy", evc.policy)->check(CLI::IsMember({"greedy", "sample", "solver", "random"}));
  ev->add_option("--weights", evc.weights_stem);
  ev->add_option("--report", evc.report_path);
  ev->add_option("--horizon", ev_horizon);
  add_sample_flags(ev, evc.sample, ev_type, cfg);

  // attn-dump
  auto* ad = app.add_subcommand("attn-dump", "serialize attention maps and board overlays");
  stx::cli::AttnDumpConfig adc;
  ad->add_option("--weights", adc.weights_stem)->required();
  ad->add_option("--episode", adc.episode_path)->required();
  ad->add_option("--actions", adc.actions_path, "defaults to the solver trajectory");
  ad->add_option("--sharpen", adc.sharpen, "overlay logit multiplier (visualisation only)");
  ad->add_option("--out", adc.out_dir);

  // check-logic
  auto* clc = app.add_subcommand("check-logic", "trajectory to linear-logic proof tree");
  stx::cli::CheckLogicConfig clcc;
  clc->add_option("--episode", clcc.episode_path)->required();
  clc->add_option("--actions", clcc.actions_path, "defaults to the solver trajectory");
  clc->add_option("--out", clcc.out_path);

  auto* st = app.add_subcommand("selftest", "fast end-to-end sanity battery");

  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      finish_sample(genc.sample, gen_type, gen_horizon);
      auto r = stx::cli::cmd_gen(genc);
      std::cout << "wrote " << r.episodes << " episodes (" << r.bridges << " with a bridge) to "
                << genc.out_dir << "\n";
    } else if (*render) {
      std::cout << "wrote " << stx::cli::cmd_render(renderc) << " frames to " << renderc.out_dir << "\n";
    } else if (*bc) {
      if (!bc_resume.empty()) bcc.resume_stem = bc_resume;
      if (bc_horizon > 0) bcc.sample.horizon = bc_horizon;
      auto r = stx::cli::cmd_train_bc(bcc);
      std::cout << "train-bc: " << r.epochs_run << " epochs, loss " << r.final_loss
                << ", held-out accuracy " << r.holdout_accuracy << "\n";
    } else if (*ac) {
      finish_sample(acc.sample, ac_type, ac_horizon);
      auto r = stx::cli::cmd_train_ac(acc);
      std::cout << "train-ac: " << r.steps << " steps, " << r.episodes
                << " episodes, window win rate " << r.final_window_win_rate << "\n";
    } else if (*ev) {
      finish_sample(evc.sample, ev_type, ev_horizon);
      if (ev_horizon > 0) evc.horizon = ev_horizon;
      auto r = stx::cli::cmd_eval(evc);
      std::cout << "eval: win rate " << r.overall.win_rate() << " over " << r.overall.episodes
                << " episodes";
      if (!evc.report_path.empty()) std::cout << " (report: " << evc.report_path << ")";
      std::cout << "\n";
    } else if (*ad) {
      auto r = stx::cli::cmd_attn_dump(adc);
      std::cout << "attn-dump: " << r.records << " records, " << r.overlays << " overlays over "
                << r.timesteps << " timesteps in " << adc.out_dir << "\n";
    } else if (*clc) {
      auto r = stx::cli::cmd_check_logic(clcc);
      std::cout << r.text;
      if (!r.proved) {
        std::cout << "\n";
        return 1;
      }
    } else if (*st) {
      return stx::cli::cmd_selftest();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
