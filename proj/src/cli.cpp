#include "stx/cli.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "stx/errors.hpp"
#include "stx/geometry.hpp"
#include "stx/optim.hpp"
#include "stx/version.hpp"
#include "stx/weights_io.hpp"

namespace stx::cli {

namespace fs = std::filesystem;

std::string action_name(env::Action a) {
  switch (a) {
    case env::Action::Left: return "left";
    case env::Action::Up: return "up";
    case env::Action::Right: return "right";
    default: return "down";
  }
}

env::Action action_from(const ordered_json& token) {
  if (token.is_number_integer()) {
    const int v = token.get<int>();
    if (v < 0 || v >= env::kNumActions) throw ValueError("action index out of range");
    return static_cast<env::Action>(v);
  }
  const std::string s = token.get<std::string>();
  if (s == "left") return env::Action::Left;
  if (s == "up") return env::Action::Up;
  if (s == "right") return env::Action::Right;
  if (s == "down") return env::Action::Down;
  throw ValueError("unknown action: " + s);
}

ordered_json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open " + path);
  return ordered_json::parse(in);
}

void write_json(const std::string& path, const ordered_json& doc) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw ValueError("cannot open " + path + " for writing");
  out << doc.dump(2) << "\n";
}

void write_actions(const std::string& path, const std::vector<env::Action>& actions,
                   const ordered_json& run_config) {
  ordered_json doc;
  doc["format"] = "stx-actions-v1";
  doc["code_version"] = kCodeVersion;
  doc["run_config"] = run_config;
  ordered_json arr = ordered_json::array();
  for (env::Action a : actions) arr.push_back(action_name(a));
  doc["actions"] = arr;
  write_json(path, doc);
}

std::vector<env::Action> read_actions(const std::string& path) {
  const ordered_json doc = load_json(path);
  std::vector<env::Action> out;
  for (const auto& t : doc.at("actions")) out.push_back(action_from(t));
  return out;
}

ordered_json SampleSpec::to_json() const {
  ordered_json j;
  j["rows"] = rows;
  j["cols"] = cols;
  j["solution_length"] = solution_length;
  j["max_a"] = max_a;
  j["bridge_fraction"] = bridge_fraction;
  if (forced_bridge) {
    j["bridge"] = ordered_json{{"source", forced_bridge->source}, {"target", forced_bridge->target}};
  } else {
    j["bridge"] = nullptr;
  }
  j["standard_mode"] = standard_mode;
  j["distractors"] = distractors;
  j["horizon"] = horizon ? ordered_json(*horizon) : ordered_json(nullptr);
  return j;
}

env::EpisodeConfig sample_config(const SampleSpec& spec, Rng& rng) {
  env::EpisodeConfig cfg;
  cfg.rows = spec.rows;
  cfg.cols = spec.cols;
  cfg.horizon = spec.horizon;
  cfg.bridge_mode = !spec.standard_mode;
  cfg.distractors = spec.standard_mode ? spec.distractors : 0;
  cfg.solution_length = spec.solution_length > 0
                            ? spec.solution_length
                            : static_cast<int>(rng.uniform_int(1, spec.max_a));
  if (cfg.bridge_mode) {
    if (spec.forced_bridge) {
      cfg.bridge = spec.forced_bridge;
    } else if (rng.bernoulli(spec.bridge_fraction)) {
      const int a = cfg.solution_length;
      env::BridgeSpec b;
      b.source = static_cast<int>(rng.uniform_int(1, a));
      b.target = static_cast<int>(rng.uniform_int(a + 1, 2 * a));
      cfg.bridge = b;
    }
  }
  return cfg;
}

void apply_type(SampleSpec& spec, const std::string& type) {
  if (type.empty()) return;
  std::istringstream in(type);
  int a = 0, b = 0, c = 0;
  char comma;
  if (!(in >> a)) throw ValueError("bad puzzle type: " + type);
  if (in >> comma >> b >> comma >> c) {
    // full tuple
  }
  spec.solution_length = a;
  if (b > 0 && c > 0) {
    spec.forced_bridge = env::BridgeSpec{b, c};
  } else {
    spec.forced_bridge.reset();
    spec.bridge_fraction = 0.0;
  }
}

// ---- gen ----------------------------------------------------------------------

namespace {

ordered_json gen_run_config(const GenConfig& c) {
  ordered_json j;
  j["command"] = "gen";
  j["seed"] = c.seed;
  j["count"] = c.count;
  j["sample"] = c.sample.to_json();
  j["frames"] = c.frames;
  j["solver_actions"] = c.solver_actions;
  j["out_dir"] = c.out_dir;
  return j;
}

std::string seed_name(std::uint64_t seed) {
  std::ostringstream os;
  os << "ep_s" << seed;
  return os.str();
}

}  // namespace

GenReport cmd_gen(const GenConfig& config) {
  fs::create_directories(config.out_dir);
  const ordered_json run_config = gen_run_config(config);
  GenReport report;
  for (int i = 0; i < config.count; ++i) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(i);
    Rng rng(seed);
    const env::EpisodeConfig cfg = sample_config(config.sample, rng);
    env::EpisodeState state = env::generate(cfg, seed);
    if (cfg.bridge) ++report.bridges;

    ordered_json doc = env::to_json(state);
    doc["code_version"] = kCodeVersion;
    doc["run_config"] = run_config;
    const std::string stem = config.out_dir + "/" + seed_name(seed);
    write_json(stem + ".json", doc);
    report.episode_files.push_back(stem + ".json");
    if (config.frames) write_ppm(env::render(state), stem + ".ppm");
    if (config.solver_actions) {
      const env::SolveResult sr = env::solve(state);
      if (sr.solvable) write_actions(stem + "_actions.json", sr.actions, run_config);
    }
    ++report.episodes;
  }
  return report;
}

// ---- render -------------------------------------------------------------------

int cmd_render(const RenderConfig& config) {
  fs::create_directories(config.out_dir);
  env::EpisodeState state = env::episode_from_json(load_json(config.episode_path));
  auto frame_path = [&](int t) {
    std::ostringstream os;
    os << config.out_dir << "/frame_" << std::setw(4) << std::setfill('0') << t << ".ppm";
    return os.str();
  };
  int frames = 0;
  write_ppm(env::render(state), frame_path(frames++));
  if (!config.actions_path.empty()) {
    for (env::Action a : read_actions(config.actions_path)) {
      env::step(state, a);
      write_ppm(env::render(state), frame_path(frames++));
    }
  }
  return frames;
}

// ---- behaviour cloning ----------------------------------------------------------

namespace {

struct BcSample {
  Image obs;
  int action;
};
using Trajectory = std::vector<BcSample>;

std::vector<Trajectory> build_bc_dataset(const SampleSpec& spec, std::uint64_t seed, int episodes) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    Rng rng(s);
    const env::EpisodeConfig cfg = sample_config(spec, rng);
    env::EpisodeState state = env::generate(cfg, s);
    const env::SolveResult sr = env::solve(state);
    if (!sr.solvable) throw ValueError("build_bc_dataset: generator produced an unsolvable episode");
    Trajectory traj;
    for (env::Action a : sr.actions) {
      traj.push_back(BcSample{env::render(state), static_cast<int>(a)});
      env::step(state, a);
    }
    out.push_back(std::move(traj));
  }
  return out;
}

nn::AgentConfig config_for_variant(const std::string& variant) {
  return nn::variant_from(variant) == nn::Variant::Simplicial ? nn::AgentConfig::simplicial()
                                                              : nn::AgentConfig::relational();
}

double bc_accuracy(const nn::AgentWeights& w, const std::vector<Trajectory>& trajs,
                   std::size_t begin, std::size_t end) {
  std::vector<const Image*> obs;
  std::vector<int> labels;
  std::int64_t correct = 0, total = 0;
  auto flush = [&]() {
    if (obs.empty()) return;
    nn::AgentOutput out = nn::forward_batch(obs, w);
    auto logits = out.logits.mat();
    for (Index i = 0; i < logits.rows(); ++i) {
      Index best = 0;
      for (Index a = 1; a < logits.cols(); ++a) {
        if (logits(i, a) > logits(i, best)) best = a;
      }
      correct += (static_cast<int>(best) == labels[static_cast<std::size_t>(i)]) ? 1 : 0;
      ++total;
    }
    obs.clear();
    labels.clear();
  };
  for (std::size_t t = begin; t < end && t < trajs.size(); ++t) {
    for (const BcSample& s : trajs[t]) {
      obs.push_back(&s.obs);
      labels.push_back(s.action);
      if (obs.size() == 256) flush();
    }
  }
  flush();
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

ordered_json train_bc_run_config(const TrainBcConfig& c) {
  ordered_json j;
  j["command"] = "train-bc";
  j["seed"] = c.seed;
  j["episodes"] = c.episodes;
  j["type"] = c.type;
  j["sample"] = c.sample.to_json();
  j["variant"] = c.variant;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["holdout_fraction"] = c.holdout_fraction;
  j["stop_at_accuracy"] = c.stop_at_accuracy;
  return j;
}

}  // namespace

TrainBcReport cmd_train_bc(const TrainBcConfig& config) {
  SampleSpec spec = config.sample;
  apply_type(spec, config.type);
  const std::vector<Trajectory> trajs = build_bc_dataset(spec, config.seed, config.episodes);
  if (trajs.empty()) throw ValueError("cmd_train_bc: empty dataset");
  const std::size_t holdout =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.holdout_fraction *
                                                                    static_cast<double>(trajs.size()))));
  const std::size_t train_count = trajs.size() - holdout;

  Rng rng(config.seed ^ 0x5bd1e995u);
  nn::AgentWeights weights = nn::AgentWeights::init(config_for_variant(config.variant), rng);
  nn::RmsConfig rc;
  rc.lr = config.lr;
  nn::RmsProp optim(rc);
  if (config.resume_stem) {
    nn::LoadedAgent loaded = nn::load_agent(*config.resume_stem);
    weights = loaded.weights;
    optim.load_state(loaded.optimizer_state);
  }

  std::vector<std::pair<std::size_t, std::size_t>> samples;  // (trajectory, step)
  for (std::size_t t = 0; t < train_count; ++t) {
    for (std::size_t s = 0; s < trajs[t].size(); ++s) samples.emplace_back(t, s);
  }

  const fs::path metrics_path(config.metrics_path);
  if (metrics_path.has_parent_path()) fs::create_directories(metrics_path.parent_path());
  std::ofstream metrics(config.metrics_path);

  TrainBcReport report;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(samples);
    double loss_sum = 0.0;
    std::int64_t batches = 0;
    for (std::size_t at = 0; at < samples.size(); at += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(samples.size(), at + static_cast<std::size_t>(config.batch_size));
      std::vector<const Image*> obs;
      std::vector<int> labels;
      for (std::size_t i = at; i < end; ++i) {
        const BcSample& s = trajs[samples[i].first][samples[i].second];
        obs.push_back(&s.obs);
        labels.push_back(s.action);
      }
      Tape tape;
      nn::AgentWeights watched = weights.watch(tape);
      nn::AgentOutput out = nn::forward_batch(obs, watched);
      Tensor loss = cross_entropy_with_logits(out.logits, labels);
      tape.backward(loss);
      auto watched_params = watched.named_params();
      std::vector<const ArrayXd*> grads;
      grads.reserve(watched_params.size());
      for (auto& [name, t] : watched_params) grads.push_back(&tape.grad(*t));
      optim.step(weights.named_params(), grads);
      loss_sum += loss.value();
      ++batches;
    }
    const double epoch_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    const double acc = bc_accuracy(weights, trajs, train_count, trajs.size());
    report.epoch_losses.push_back(epoch_loss);
    report.epoch_accuracies.push_back(acc);
    report.final_loss = epoch_loss;
    report.holdout_accuracy = acc;
    report.epochs_run = epoch + 1;
    ordered_json line;
    line["epoch"] = epoch;
    line["loss"] = epoch_loss;
    line["holdout_accuracy"] = acc;
    metrics << line.dump() << "\n";
    metrics.flush();
    if (config.stop_at_accuracy > 0.0 && acc >= config.stop_at_accuracy) break;
  }

  ordered_json meta = train_bc_run_config(config);
  meta["holdout_accuracy"] = report.holdout_accuracy;
  nn::save_agent(config.out_stem, weights, &optim, meta);
  return report;
}

// ---- actor-critic ----------------------------------------------------------------

EvalReport eval_with_weights(const EvalConfig& config, const nn::AgentWeights* weights);

namespace {

ordered_json train_ac_run_config(const TrainAcConfig& c) {
  ordered_json j;
  j["command"] = "train-ac";
  j["seed"] = c.seed;
  j["sample"] = c.sample.to_json();
  j["variant"] = c.variant;
  j["total_steps"] = c.total_steps;
  j["num_envs"] = c.num_envs;
  j["unroll"] = c.unroll;
  j["gamma"] = c.gamma;
  j["entropy_coef"] = c.entropy_coef;
  j["value_coef"] = c.value_coef;
  j["lr"] = c.lr;
  return j;
}

}  // namespace

TrainAcReport cmd_train_ac(const TrainAcConfig& config) {
  Rng rng(config.seed);
  nn::AgentWeights weights = nn::AgentWeights::init(config_for_variant(config.variant), rng);
  nn::RmsConfig rc;
  rc.lr = config.lr;
  nn::RmsProp optim(rc);

  Rng seed_rng(config.seed ^ 0xda3e39cb94b95bdbULL);
  auto fresh_env = [&]() {
    const std::uint64_t s = seed_rng.raw();
    Rng r(s);
    return env::generate(sample_config(config.sample, r), s);
  };
  std::vector<env::EpisodeState> envs;
  for (int e = 0; e < config.num_envs; ++e) envs.push_back(fresh_env());

  const fs::path metrics_path(config.metrics_path);
  if (metrics_path.has_parent_path()) fs::create_directories(metrics_path.parent_path());
  std::ofstream metrics(config.metrics_path);

  const int n = config.num_envs, T = config.unroll;
  std::deque<bool> window;  // completed-episode outcomes
  TrainAcReport report;
  std::vector<double> entropy_history;

  while (report.steps < config.total_steps) {
    std::vector<std::vector<Image>> obs(static_cast<std::size_t>(n));
    std::vector<std::vector<int>> acts(static_cast<std::size_t>(n));
    std::vector<std::vector<double>> rews(static_cast<std::size_t>(n));
    std::vector<std::vector<bool>> dones(static_cast<std::size_t>(n));

    for (int t = 0; t < T; ++t) {
      std::vector<const Image*> batch_obs;
      std::vector<Image> frames;
      frames.reserve(static_cast<std::size_t>(n));
      for (int e = 0; e < n; ++e) frames.push_back(env::render(envs[static_cast<std::size_t>(e)]));
      for (int e = 0; e < n; ++e) batch_obs.push_back(&frames[static_cast<std::size_t>(e)]);
      nn::AgentOutput out = nn::forward_batch(batch_obs, weights);
      auto logits = out.logits.mat();
      for (int e = 0; e < n; ++e) {
        ArrayXd row = logits.row(e).array().transpose();
        ArrayXd p = (row - row.maxCoeff()).exp();
        p /= p.sum();
        double r = rng.uniform();
        int action = env::kNumActions - 1;
        for (int a = 0; a < env::kNumActions; ++a) {
          r -= p(a);
          if (r < 0.0) {
            action = a;
            break;
          }
        }
        const env::StepResult sr = env::step(envs[static_cast<std::size_t>(e)], static_cast<env::Action>(action));
        obs[static_cast<std::size_t>(e)].push_back(std::move(frames[static_cast<std::size_t>(e)]));
        acts[static_cast<std::size_t>(e)].push_back(action);
        rews[static_cast<std::size_t>(e)].push_back(sr.reward);
        dones[static_cast<std::size_t>(e)].push_back(sr.done);
        if (sr.done) {
          window.push_back(envs[static_cast<std::size_t>(e)].won);
          if (window.size() > 100) window.pop_front();
          ++report.episodes;
          envs[static_cast<std::size_t>(e)] = fresh_env();
        }
      }
      report.steps += n;
    }

    // Bootstrap values for the post-rollout states.
    std::vector<Image> tail_frames;
    std::vector<const Image*> tail_ptrs;
    for (int e = 0; e < n; ++e) tail_frames.push_back(env::render(envs[static_cast<std::size_t>(e)]));
    for (int e = 0; e < n; ++e) tail_ptrs.push_back(&tail_frames[static_cast<std::size_t>(e)]);
    const ArrayXd bootstrap = nn::forward_batch(tail_ptrs, weights).value.array();

    // Discounted returns, resetting across episode boundaries.
    std::vector<double> returns(static_cast<std::size_t>(n * T));
    for (int e = 0; e < n; ++e) {
      double ret = bootstrap(e);
      for (int t = T - 1; t >= 0; --t) {
        const std::size_t se = static_cast<std::size_t>(e);
        ret = dones[se][static_cast<std::size_t>(t)]
                  ? rews[se][static_cast<std::size_t>(t)]
                  : rews[se][static_cast<std::size_t>(t)] + config.gamma * ret;
        returns[static_cast<std::size_t>(e * T + t)] = ret;
      }
    }

    // One recorded pass over the whole rollout.
    Tape tape;
    nn::AgentWeights watched = weights.watch(tape);
    std::vector<const Image*> all_obs;
    std::vector<int> all_actions;
    for (int e = 0; e < n; ++e) {
      for (int t = 0; t < T; ++t) {
        all_obs.push_back(&obs[static_cast<std::size_t>(e)][static_cast<std::size_t>(t)]);
        all_actions.push_back(acts[static_cast<std::size_t>(e)][static_cast<std::size_t>(t)]);
      }
    }
    const Index batch = static_cast<Index>(all_obs.size());
    nn::AgentOutput out = nn::forward_batch(all_obs, watched);

    Tensor onehot = Tensor::zeros({batch, env::kNumActions});
    for (Index i = 0; i < batch; ++i) {
      onehot.mutable_array()(i * env::kNumActions + all_actions[static_cast<std::size_t>(i)]) = 1.0;
    }
    Tensor ret_t(Shape{batch}, Eigen::Map<const ArrayXd>(returns.data(), batch));
    ArrayXd adv = ret_t.array() - out.value.array();
    Tensor adv_t(Shape{batch}, adv);

    Tensor logp = log_softmax(out.logits, 1);
    Tensor sel = row_dot(logp, onehot);
    Tensor pg = scale(sum(mul(sel, adv_t)), -1.0 / static_cast<double>(batch));
    Tensor vdiff = sub(out.value, ret_t);
    Tensor vloss = scale(sum(mul(vdiff, vdiff)), 1.0 / static_cast<double>(batch));
    Tensor probs = softmax(out.logits, 1);
    Tensor entropy = scale(sum(mul(probs, logp)), -1.0 / static_cast<double>(batch));
    Tensor loss = add(add(pg, scale(vloss, config.value_coef)), scale(entropy, -config.entropy_coef));

    if (!std::isfinite(loss.value())) {
      nn::save_agent(config.out_stem + "_abort", weights, &optim, train_ac_run_config(config));
      throw ValueError("cmd_train_ac: non-finite loss; state dumped to " + config.out_stem + "_abort");
    }
    tape.backward(loss);
    auto watched_params = watched.named_params();
    std::vector<const ArrayXd*> grads;
    for (auto& [name, t] : watched_params) grads.push_back(&tape.grad(*t));
    optim.step(weights.named_params(), grads);

    double win_rate = 0.0;
    if (!window.empty()) {
      win_rate = static_cast<double>(std::count(window.begin(), window.end(), true)) /
                 static_cast<double>(window.size());
    }
    entropy_history.push_back(entropy.value());
    report.final_window_win_rate = win_rate;
    report.final_entropy = entropy.value();

    ordered_json line;
    line["steps"] = report.steps;
    line["episodes"] = report.episodes;
    line["loss"] = loss.value();
    line["entropy"] = entropy.value();
    line["win_rate_window"] = win_rate;
    metrics << line.dump() << "\n";
    metrics.flush();

    if (config.eval_every > 0 && report.steps % config.eval_every < static_cast<std::int64_t>(n * T)) {
      EvalConfig ec;
      ec.seed = config.seed + 977;
      ec.episodes = config.eval_episodes;
      ec.sample = config.sample;
      ec.policy = "greedy";
      ec.horizon = config.eval_horizon;
      ec.report_path.clear();
      EvalReport er = eval_with_weights(ec, &weights);  // forward declaration below
      ordered_json eline;
      eline["steps"] = report.steps;
      eline["eval_win_rate"] = er.overall.win_rate();
      metrics << eline.dump() << "\n";
      metrics.flush();
    }
  }

  const std::size_t tail = std::max<std::size_t>(1, entropy_history.size() / 10);
  double s = 0.0;
  for (std::size_t i = entropy_history.size() - tail; i < entropy_history.size(); ++i) s += entropy_history[i];
  report.mean_entropy_last_tenth = s / static_cast<double>(tail);

  nn::save_agent(config.out_stem, weights, &optim, train_ac_run_config(config));
  return report;
}

// ---- eval --------------------------------------------------------------------

namespace {

ordered_json eval_run_config(const EvalConfig& c) {
  ordered_json j;
  j["command"] = "eval";
  j["seed"] = c.seed;
  j["episodes"] = c.episodes;
  j["sample"] = c.sample.to_json();
  j["policy"] = c.policy;
  j["weights"] = c.weights_stem;
  j["horizon"] = c.horizon ? ordered_json(*c.horizon) : ordered_json(nullptr);
  return j;
}

}  // namespace

EvalReport eval_with_weights(const EvalConfig& config, const nn::AgentWeights* weights) {
  if ((config.policy == "greedy" || config.policy == "sample") && !weights) {
    throw ValueError("cmd_eval: policy '" + config.policy + "' needs weights");
  }
  EvalReport report;
  Rng policy_rng(config.seed ^ 0xa0761d6478bd642fULL);
  constexpr std::int64_t kSafetyCap = 1000000;
  for (int i = 0; i < config.episodes; ++i) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(i);
    Rng rng(seed);
    SampleSpec spec = config.sample;
    if (config.horizon) spec.horizon = config.horizon;
    const env::EpisodeConfig cfg = sample_config(spec, rng);
    env::EpisodeState state = env::generate(cfg, seed);
    const std::string type = env::puzzle_type(cfg).str();

    bool bridge_opened = false;
    bool truncated = false;
    if (config.policy == "solver") {
      const env::SolveResult sr = env::solve(state);
      for (env::Action a : sr.actions) env::step(state, a);
    } else {
      std::int64_t guard = 0;
      while (!state.done && guard++ < kSafetyCap) {
        env::Action a;
        if (config.policy == "random") {
          a = static_cast<env::Action>(policy_rng.below(env::kNumActions));
        } else {
          a = nn::act(env::render(state), *weights, policy_rng,
                      config.policy == "greedy" ? nn::ActMode::Greedy : nn::ActMode::Sample);
        }
        const env::StepResult sr = env::step(state, a);
        if (sr.event == env::EventKind::OpenedBridge) bridge_opened = true;
        if (sr.event == env::EventKind::Truncated) truncated = true;
      }
      if (!state.done) truncated = true;
    }

    auto bump = [&](TypeStats& t) {
      ++t.episodes;
      t.wins += state.won ? 1 : 0;
      t.bridge_opened += bridge_opened ? 1 : 0;
      t.truncated += truncated ? 1 : 0;
      t.total_reward += state.total_reward;
      t.total_length += state.steps;
    };
    bump(report.per_type[type]);
    bump(report.overall);
  }

  if (!config.report_path.empty()) {
    ordered_json doc;
    doc["format"] = "stx-eval-v1";
    doc["code_version"] = kCodeVersion;
    doc["run_config"] = eval_run_config(config);
    auto stats_json = [](const TypeStats& t) {
      ordered_json j;
      j["episodes"] = t.episodes;
      j["wins"] = t.wins;
      j["win_rate"] = t.win_rate();
      j["mean_reward"] = t.episodes ? t.total_reward / t.episodes : 0.0;
      j["mean_length"] = t.episodes ? static_cast<double>(t.total_length) / t.episodes : 0.0;
      j["bridge_open_rate"] = t.episodes ? static_cast<double>(t.bridge_opened) / t.episodes : 0.0;
      j["truncated"] = t.truncated;
      return j;
    };
    ordered_json per;
    for (const auto& [type, stats] : report.per_type) per[type] = stats_json(stats);
    doc["per_type"] = per;
    doc["overall"] = stats_json(report.overall);
    write_json(config.report_path, doc);
  }
  return report;
}

EvalReport cmd_eval(const EvalConfig& config) {
  if (config.policy == "greedy" || config.policy == "sample") {
    nn::LoadedAgent loaded = nn::load_agent(config.weights_stem);
    return eval_with_weights(config, &loaded.weights);
  }
  return eval_with_weights(config, nullptr);
}

// ---- attn-dump -----------------------------------------------------------------

namespace {

ordered_json matrix_json(const MatrixRM& m) {
  ordered_json rows = ordered_json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

AttnDumpReport cmd_attn_dump(const AttnDumpConfig& config) {
  fs::create_directories(config.out_dir);
  nn::LoadedAgent loaded = nn::load_agent(config.weights_stem);
  env::EpisodeState state = env::episode_from_json(load_json(config.episode_path));
  std::vector<env::Action> actions;
  if (!config.actions_path.empty()) {
    actions = read_actions(config.actions_path);
  } else {
    const env::SolveResult sr = env::solve(state);
    if (!sr.solvable) throw ValueError("cmd_attn_dump: episode is unsolvable and no actions given");
    actions = sr.actions;
  }

  ordered_json run_config;
  run_config["command"] = "attn-dump";
  run_config["weights"] = config.weights_stem;
  run_config["episode"] = config.episode_path;
  run_config["actions"] = config.actions_path;
  run_config["sharpen"] = config.sharpen;

  std::ofstream records(config.out_dir + "/attn.jsonl");
  if (!records) throw ValueError("cmd_attn_dump: cannot open output");
  ordered_json header;
  header["record"] = "header";
  header["code_version"] = kCodeVersion;
  header["run_config"] = run_config;
  records << header.dump() << "\n";

  AttnDumpReport report;
  const int grid_rows = state.config.rows - 2;
  const int grid_cols = state.config.cols - 1;  // two valid 2x2 convs over C+1 columns

  for (std::size_t t = 0; t <= actions.size(); ++t) {
    const Image frame = env::render(state);
    write_ppm(frame, config.out_dir + "/frame_" + std::to_string(t) + ".ppm");
    nn::AgentOutput out = nn::forward(frame, loaded.weights, /*want_maps=*/true);
    for (std::size_t block = 0; block < out.maps.size(); ++block) {
      const nn::AttentionMaps& maps = out.maps[block][0];
      for (std::size_t h = 0; h < maps.one.size(); ++h) {
        const nn::HeadMap& hm = maps.one[h];
        ordered_json rec;
        rec["record"] = "attention";
        rec["timestep"] = t;
        rec["block"] = block;
        rec["head"] = "1-simplicial/" + std::to_string(h);
        MatrixRM padded = hm.padded_probs();
        rec["rows"] = padded.rows();
        rec["cols"] = padded.cols();
        rec["probs"] = matrix_json(padded);
        rec["std_logits"] = matrix_json(hm.std_logits);
        if (hm.virt_probs.rows() > 0) rec["virt_logits"] = matrix_json(hm.virt_logits);
        records << rec.dump() << "\n";
        ++report.records;
      }
      if (maps.two_probs.rows() > 0) {
        ordered_json rec;
        rec["record"] = "attention";
        rec["timestep"] = t;
        rec["block"] = block;
        rec["head"] = "2-simplicial";
        rec["rows"] = maps.two_probs.rows();
        rec["cols"] = maps.two_probs.cols();
        rec["probs"] = matrix_json(maps.two_probs);
        rec["logits"] = matrix_json(maps.two_logits);
        records << rec.dump() << "\n";
        ++report.records;
      }
    }

    // Board overlays for the virtual entities' 1-simplicial attention in the
    // first block iteration.
    if (!out.maps.empty() && !out.maps[0][0].one.empty() &&
        out.maps[0][0].one[0].virt_probs.rows() > 0) {
      const nn::AttentionMaps& maps = out.maps[0][0];
      for (std::size_t h = 0; h < maps.one.size(); ++h) {
        const nn::HeadMap& hm = maps.one[h];
        for (Index z = 0; z < hm.virt_probs.rows(); ++z) {
          Eigen::RowVectorXd logits = hm.virt_logits.row(z) * config.sharpen;
          Eigen::RowVectorXd probs = (logits.array() - logits.maxCoeff()).exp();
          probs /= probs.sum();
          Image overlay = make_image(grid_rows, grid_cols);
          for (int y = 1; y <= grid_rows; ++y) {
            for (int x = 1; x <= grid_cols; ++x) {
              const int e = nn::entity_of_tile(y, x, state.config.rows, state.config.cols);
              const double a = probs(e);
              const auto px = frame.at(y - 1, x - 1);
              overlay.set(y - 1, x - 1,
                          static_cast<std::uint8_t>(std::floor(a * px[0] + 0.5)),
                          static_cast<std::uint8_t>(std::floor(a * px[1] + 0.5)),
                          static_cast<std::uint8_t>(std::floor(a * px[2] + 0.5)));
            }
          }
          write_ppm(overlay, config.out_dir + "/overlay_t" + std::to_string(t) + "_b0_h" +
                                 std::to_string(h) + "_v" + std::to_string(z) + ".ppm");
          ++report.overlays;
        }
      }
    }

    ++report.timesteps;
    if (t < actions.size()) env::step(state, actions[t]);
  }
  return report;
}

// ---- check-logic ---------------------------------------------------------------

CheckLogicReport cmd_check_logic(const CheckLogicConfig& config) {
  env::EpisodeState state = env::episode_from_json(load_json(config.episode_path));
  std::vector<env::Action> actions;
  if (!config.actions_path.empty()) {
    actions = read_actions(config.actions_path);
  } else {
    const env::SolveResult sr = env::solve(state);
    actions = sr.actions;
  }
  CheckLogicReport report{false, "", logic::ProofFailure{}};
  report.result = logic::trajectory_to_proof(state, actions);
  ordered_json doc;
  doc["format"] = "stx-proof-v1";
  doc["code_version"] = kCodeVersion;
  ordered_json run_config;
  run_config["command"] = "check-logic";
  run_config["episode"] = config.episode_path;
  run_config["actions"] = config.actions_path;
  doc["run_config"] = run_config;
  if (std::holds_alternative<logic::ProofPtr>(report.result)) {
    const auto& proof = std::get<logic::ProofPtr>(report.result);
    report.proved = true;
    report.text = logic::proof_text(proof);
    doc["result"] = "proof";
    doc["conclusion"] = proof->conclusion.str();
    doc["leaves"] = logic::leaf_count(proof);
    doc["proof"] = logic::proof_json(proof);
  } else {
    const auto& fail = std::get<logic::ProofFailure>(report.result);
    report.text = fail.str();
    doc["result"] = "failure";
    doc["reason"] = fail.str();
  }
  if (!config.out_path.empty()) write_json(config.out_path, doc);
  return report;
}

// ---- selftest ------------------------------------------------------------------

int cmd_selftest() {
  int failures = 0;
  auto check = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "[ok]   " : "[FAIL] ") << what << "\n";
    if (!ok) ++failures;
  };

  {  // tape gradient vs finite differences on a small composite
    Rng rng(11);
    auto random_tensor = [&](Shape shape) {
      Tensor t = Tensor::zeros(std::move(shape));
      for (Index i = 0; i < t.size(); ++i) t.mutable_array()(i) = rng.uniform(-2, 2);
      return t;
    };
    Tensor a = random_tensor({4, 5});
    Tensor b = random_tensor({5, 3});
    Tape tape;
    Tensor aw = tape.leaf(a);
    Tensor loss = sum(relu(matmul(aw, b)));
    tape.backward(loss);
    const ArrayXd g = tape.grad(aw);
    double worst = 0.0;
    const double h = 1e-5;
    for (Index i = 0; i < a.size(); ++i) {
      ArrayXd up = a.array(), dn = a.array();
      up(i) += h;
      dn(i) -= h;
      const double lu = sum(relu(matmul(Tensor(a.shape(), up), b))).value();
      const double ld = sum(relu(matmul(Tensor(a.shape(), dn), b))).value();
      const double fd = (lu - ld) / (2 * h);
      worst = std::max(worst, std::abs(fd - g(i)) / std::max({1e-3, std::abs(fd), std::abs(g(i))}));
    }
    check(worst < 1e-4, "tape matmul/relu gradient vs central differences");
  }
  {  // triple product routes agree
    Rng rng(12);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXd a(6), b(6), c(6);
      for (int i = 0; i < 6; ++i) {
        a(i) = rng.uniform(-2, 2);
        b(i) = rng.uniform(-2, 2);
        c(i) = rng.uniform(-2, 2);
      }
      const double norm_form = ga::triple_product(a, b, c);
      const double poly = std::sqrt(std::max(0.0, ga::triple_product_squared_poly(a, b, c)));
      const double oracle = ga::unsigned_scalar_product({a, b, c});
      worst = std::max(worst, std::abs(norm_form - poly) / std::max(1.0, norm_form));
      worst = std::max(worst, std::abs(norm_form - oracle) / std::max(1.0, norm_form));
    }
    check(worst < 1e-9, "triple product: norm form vs polynomial vs Clifford oracle");
  }
  {  // optimizer dual form
    Rng rng(13);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const double g = rng.uniform(-3, 3);
      const double r = rng.uniform(0.0, 4.0) + 1e-12;
      const double eps = rng.uniform(1e-3, 1.0);
      const double direct = g / std::sqrt(r + eps);
      const double sigmoid = g / std::sqrt(r) * nn::clip_factor(r, eps);
      worst = std::max(worst, std::abs(direct - sigmoid) / std::max(1e-6, std::abs(direct)));
    }
    check(worst < 1e-12, "RMSProp dual-form identity");
  }
  {  // environment reward identity and solver success
    bool ok = true;
    for (std::uint64_t seed = 0; seed < 50 && ok; ++seed) {
      Rng rng(seed);
      SampleSpec spec;
      const env::EpisodeConfig cfg = sample_config(spec, rng);
      env::EpisodeState state = env::generate(cfg, seed);
      const env::SolveResult sr = env::solve(state);
      if (!sr.solvable) {
        ok = false;
        break;
      }
      double reward = 0.0;
      for (env::Action a : sr.actions) reward += env::step(state, a).reward;
      const int a = cfg.solution_length;
      if (!state.won || reward != 2.0 * a + 10.0) ok = false;
    }
    check(ok, "solver solves seeded episodes with return 2a+10");
  }
  {  // logic matches the generator
    bool ok = true;
    for (std::uint64_t seed = 100; seed < 120 && ok; ++seed) {
      Rng rng(seed);
      SampleSpec spec;
      const env::EpisodeConfig cfg = sample_config(spec, rng);
      env::EpisodeState state = env::generate(cfg, seed);
      ok = logic::provable(logic::state_sequents(state), logic::Formula::gem());
    }
    check(ok, "provable(Gamma, G) on generated episodes");
  }

  std::cout << (failures ? "selftest: FAILED\n" : "selftest: all checks passed\n");
  return failures ? 1 : 0;
}

}  // namespace stx::cli
