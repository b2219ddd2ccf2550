#include "stx/boxworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <nlohmann/json.hpp>

#include "stx/errors.hpp"

namespace stx::env {

using ordered_json = nlohmann::ordered_json;

std::array<std::uint8_t, 3> colour_rgb(int colour) {
  if (colour < 0 || colour >= kNumColours) throw ValueError("colour_rgb: colour out of range");
  const double h = 18.0 * colour / 60.0;  // hue sextant
  const double s = 0.7, v = 0.8;
  const int i = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  double r, g, b;
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::floor(255.0 * x + 0.5)); };
  return {byte(r), byte(g), byte(b)};
}

std::string PuzzleType::str() const {
  return "(" + std::to_string(a) + "," + std::to_string(b) + "," + std::to_string(c) + ")";
}

PuzzleType puzzle_type(const EpisodeConfig& config) {
  PuzzleType t;
  t.a = config.solution_length;
  if (config.bridge) {
    t.b = config.bridge->source;
    t.c = config.bridge->target;
  }
  return t;
}

namespace {

struct TileRef {
  enum Kind { Floor, LooseKeyTile, BoxKeyTile, BoxLockTile, GemFace, GemLock } kind = Floor;
  int index = -1;  // object index; for GemLock, the lock row (0 = top)
};

TileRef tile_at(const EpisodeState& s, int y, int x) {
  for (std::size_t i = 0; i < s.keys.size(); ++i) {
    const LooseKey& k = s.keys[i];
    if (!k.taken && k.y == y && k.x == x) return {TileRef::LooseKeyTile, static_cast<int>(i)};
  }
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const Box& b = s.boxes[i];
    if (b.opened) continue;
    if (b.y == y && b.x == x) return {TileRef::BoxKeyTile, static_cast<int>(i)};
    if (b.y == y && b.x + 1 == x) return {TileRef::BoxLockTile, static_cast<int>(i)};
  }
  if (!s.gem.opened) {
    for (int i = 0; i < s.gem.height(); ++i) {
      if (s.gem.y + i == y && s.gem.x == x) return {TileRef::GemFace, i};
      if (s.gem.y + i == y && s.gem.x + 1 == x) return {TileRef::GemLock, i};
    }
  }
  return {TileRef::Floor, -1};
}

bool inside(const EpisodeConfig& c, int y, int x) {
  return y >= 1 && y <= c.rows && x >= 1 && x <= c.cols;
}

constexpr std::array<std::array<int, 2>, 4> kDeltas{{{0, -1}, {-1, 0}, {0, 1}, {1, 0}}};

void validate_config(const EpisodeConfig& c) {
  if (c.rows < 3 || c.cols < 3) throw ValueError("EpisodeConfig: board too small");
  if (c.solution_length < 1) throw ValueError("EpisodeConfig: solution length must be >= 1");
  const int a = c.solution_length;
  if (2 * a > kNumColours) throw ValueError("EpisodeConfig: not enough colours");
  if (c.bridge) {
    if (!c.bridge_mode) throw ValueError("EpisodeConfig: bridge requires bridge mode");
    if (c.bridge->source < 1 || c.bridge->source > a || c.bridge->target < a + 1 ||
        c.bridge->target > 2 * a) {
      throw ValueError("EpisodeConfig: bridge spec outside puzzle-type range");
    }
  }
  if (c.bridge_mode && c.distractors > 0) {
    throw ValueError("EpisodeConfig: distractors are a standard-mode feature");
  }
  if (!c.bridge_mode && a + c.distractors > kNumColours) {
    throw ValueError("EpisodeConfig: not enough colours for distractors");
  }
}

struct Placement {
  bool ok = false;
  EpisodeState state;
};

Placement try_generate(const EpisodeConfig& config, std::uint64_t seed, Rng& rng) {
  Placement out;
  EpisodeState s;
  s.config = config;
  s.seed = seed;
  const int a = config.solution_length;

  std::vector<int> palette(kNumColours);
  for (int i = 0; i < kNumColours; ++i) palette[static_cast<std::size_t>(i)] = i;
  rng.shuffle(palette);

  // Gem block: all tiles stay off the rightmost column and bottom row.
  const int gem_h = config.bridge_mode ? 2 : 1;
  const int gy = static_cast<int>(rng.uniform_int(1, config.rows - gem_h));
  const int gx = static_cast<int>(rng.uniform_int(1, config.cols - 2));
  s.gem.y = gy;
  s.gem.x = gx;

  auto on_gem = [&](int y, int x) {
    return y >= gy && y < gy + gem_h && x >= gx && x <= gx + 1;
  };

  // Admissible key slots (y, x) = (2r, 3c - 1).
  std::vector<std::pair<int, int>> box_slots, key_slots;
  for (int y = 2; y <= config.rows; y += 2) {
    for (int x = 2; x <= config.cols; x += 3) {
      if (on_gem(y, x)) continue;
      if (x + 1 <= config.cols && !on_gem(y, x + 1)) box_slots.emplace_back(y, x);
      key_slots.emplace_back(y, x);
    }
  }
  rng.shuffle(box_slots);

  const int num_keys = config.bridge_mode ? 2 : 1;
  int num_boxes = config.bridge_mode ? 2 * (a - 1) + (config.bridge ? 1 : 0)
                                     : (a - 1) + config.distractors;
  if (static_cast<int>(box_slots.size()) < num_boxes) return out;

  std::size_t next_box = 0;
  auto place_box = [&](int key_colour, int lock_colour, BoxKind kind) {
    Box b;
    b.key_colour = key_colour;
    b.lock_colour = lock_colour;
    b.kind = kind;
    b.y = box_slots[next_box].first;
    b.x = box_slots[next_box].second;
    ++next_box;
    s.boxes.push_back(b);
  };

  std::vector<int> loose_colours;
  if (config.bridge_mode) {
    // top[i] = t_{i+1}, bottom[i] = u_{i+1}; index grows away from the gem.
    const std::vector<int> top(palette.begin(), palette.begin() + a);
    const std::vector<int> bottom(palette.begin() + a, palette.begin() + 2 * a);
    s.gem.lock_colours = {top[0], bottom[0]};
    for (int i = 1; i < a; ++i) place_box(top[static_cast<std::size_t>(i - 1)], top[static_cast<std::size_t>(i)], BoxKind::Path);
    for (int i = 1; i < a; ++i) place_box(bottom[static_cast<std::size_t>(i - 1)], bottom[static_cast<std::size_t>(i)], BoxKind::Path);
    if (config.bridge) {
      const int lock = top[static_cast<std::size_t>(config.bridge->source - 1)];
      const int key = bottom[static_cast<std::size_t>(config.bridge->target - a - 1)];
      place_box(key, lock, BoxKind::Bridge);
    }
    loose_colours = {top[static_cast<std::size_t>(a - 1)], bottom[static_cast<std::size_t>(a - 1)]};
  } else {
    const std::vector<int> path(palette.begin(), palette.begin() + a);
    s.gem.lock_colours = {path[0]};
    for (int i = 1; i < a; ++i) place_box(path[static_cast<std::size_t>(i - 1)], path[static_cast<std::size_t>(i)], BoxKind::Path);
    for (int d = 0; d < config.distractors; ++d) {
      const int lock = path[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(a)))];
      const int key = palette[static_cast<std::size_t>(a + d)];  // unused colour
      place_box(key, lock, BoxKind::Distractor);
    }
    loose_colours = {path[static_cast<std::size_t>(a - 1)]};
  }

  // Loose keys on the remaining slots.
  std::vector<std::pair<int, int>> free_key_slots;
  for (const auto& slot : key_slots) {
    bool used = false;
    for (const Box& b : s.boxes) {
      if (b.y == slot.first && b.x == slot.second) used = true;
    }
    if (!used) free_key_slots.push_back(slot);
  }
  if (static_cast<int>(free_key_slots.size()) < num_keys) return out;
  rng.shuffle(free_key_slots);
  for (int i = 0; i < num_keys; ++i) {
    LooseKey k;
    k.colour = loose_colours[static_cast<std::size_t>(i)];
    k.y = free_key_slots[static_cast<std::size_t>(i)].first;
    k.x = free_key_slots[static_cast<std::size_t>(i)].second;
    s.keys.push_back(k);
  }

  // Player start: uniform over floor tiles.
  std::vector<std::pair<int, int>> floor;
  for (int y = 1; y <= config.rows; ++y) {
    for (int x = 1; x <= config.cols; ++x) {
      if (tile_at(s, y, x).kind == TileRef::Floor) floor.emplace_back(y, x);
    }
  }
  if (floor.empty()) return out;
  const auto& start = floor[static_cast<std::size_t>(rng.below(floor.size()))];
  s.player_y = start.first;
  s.player_x = start.second;

  out.ok = true;
  out.state = std::move(s);
  return out;
}

}  // namespace

EpisodeState generate(const EpisodeConfig& config, std::uint64_t seed) {
  validate_config(config);
  Rng rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Placement p = try_generate(config, seed, rng);
    if (!p.ok) continue;
    if (!solve(p.state).solvable) continue;  // pathological geometry; resample
    return p.state;
  }
  throw ValueError("generate: unsatisfiable placement for this configuration");
}

StepResult step(EpisodeState& s, Action action) {
  if (s.done) throw ContractError("step: episode is finished");
  StepResult res;
  const auto& d = kDeltas[static_cast<std::size_t>(action)];
  const int ny = s.player_y + d[0];
  const int nx = s.player_x + d[1];

  auto inv_find = [&](int colour) {
    return std::find(s.inventory.begin(), s.inventory.end(), colour);
  };

  if (inside(s.config, ny, nx)) {
    const TileRef tile = tile_at(s, ny, nx);
    switch (tile.kind) {
      case TileRef::Floor:
        s.player_y = ny;
        s.player_x = nx;
        break;
      case TileRef::LooseKeyTile: {
        LooseKey& k = s.keys[static_cast<std::size_t>(tile.index)];
        k.taken = true;
        s.inventory.push_back(k.colour);
        s.player_y = ny;
        s.player_x = nx;
        res.reward = 1.0;
        res.event = EventKind::PickedKey;
        res.key_index = tile.index;
        break;
      }
      case TileRef::BoxKeyTile:
        break;  // box contents are not traversable
      case TileRef::BoxLockTile: {
        Box& b = s.boxes[static_cast<std::size_t>(tile.index)];
        auto it = inv_find(b.lock_colour);
        if (it == s.inventory.end()) break;  // lock stays shut
        *it = b.key_colour;  // the used key is replaced in its slot
        b.opened = true;
        s.player_y = ny;
        s.player_x = nx;
        res.box_index = tile.index;
        if (b.kind == BoxKind::Path) {
          res.reward = 1.0;
          res.event = EventKind::OpenedBox;
        } else {
          res.reward = -1.0;
          res.event = b.kind == BoxKind::Bridge ? EventKind::OpenedBridge
                                                : EventKind::OpenedDistractor;
          s.done = true;
        }
        break;
      }
      case TileRef::GemFace:
        break;
      case TileRef::GemLock: {
        bool have_all = true;
        for (int c : s.gem.lock_colours) {
          if (inv_find(c) == s.inventory.end()) have_all = false;
        }
        if (!have_all) break;
        s.gem.opened = true;
        s.player_y = ny;
        s.player_x = nx;
        res.reward = 10.0;
        res.event = EventKind::OpenedGem;
        s.done = true;
        s.won = true;
        break;
      }
    }
  }

  ++s.steps;
  if (!s.done && s.config.horizon && s.steps >= *s.config.horizon) {
    s.done = true;
    res.event = EventKind::Truncated;
  }
  res.done = s.done;
  s.total_reward += res.reward;
  return res;
}

Image render(const EpisodeState& s) {
  Image img = make_image(s.config.rows, s.config.cols + 1);
  for (int y = 0; y < img.rows; ++y) {
    for (int x = 0; x < img.cols; ++x) img.set(y, x, kFloorRgb[0], kFloorRgb[1], kFloorRgb[2]);
  }
  auto paint = [&](int y, int x, const std::array<std::uint8_t, 3>& c) {
    img.set(y - 1, x - 1, c[0], c[1], c[2]);
  };
  for (const LooseKey& k : s.keys) {
    if (!k.taken) paint(k.y, k.x, colour_rgb(k.colour));
  }
  for (const Box& b : s.boxes) {
    if (b.opened) continue;
    paint(b.y, b.x, colour_rgb(b.key_colour));
    paint(b.y, b.x + 1, colour_rgb(b.lock_colour));
  }
  if (!s.gem.opened) {
    for (int i = 0; i < s.gem.height(); ++i) {
      paint(s.gem.y + i, s.gem.x, kGemRgb);
      paint(s.gem.y + i, s.gem.x + 1, colour_rgb(s.gem.lock_colours[static_cast<std::size_t>(i)]));
    }
  }
  paint(s.player_y, s.player_x, kPlayerRgb);
  // Inventory column fills from the top.
  for (std::size_t i = 0; i < s.inventory.size(); ++i) {
    const auto c = colour_rgb(s.inventory[i]);
    img.set(static_cast<int>(i), s.config.cols, c[0], c[1], c[2]);
  }
  return img;
}

std::optional<std::vector<Action>> find_path(const EpisodeState& s, int ty, int tx) {
  if (!inside(s.config, ty, tx)) return std::nullopt;
  if (s.player_y == ty && s.player_x == tx) return std::vector<Action>{};
  const int rows = s.config.rows, cols = s.config.cols;
  auto idx = [&](int y, int x) { return (y - 1) * cols + (x - 1); };
  std::vector<int> prev_action(static_cast<std::size_t>(rows * cols), -1);
  std::vector<int> prev_cell(static_cast<std::size_t>(rows * cols), -1);
  std::vector<char> seen(static_cast<std::size_t>(rows * cols), 0);
  std::deque<std::pair<int, int>> queue;
  queue.emplace_back(s.player_y, s.player_x);
  seen[static_cast<std::size_t>(idx(s.player_y, s.player_x))] = 1;
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    for (int a = 0; a < kNumActions; ++a) {
      const int ny = y + kDeltas[static_cast<std::size_t>(a)][0];
      const int nx = x + kDeltas[static_cast<std::size_t>(a)][1];
      if (!inside(s.config, ny, nx)) continue;
      if (seen[static_cast<std::size_t>(idx(ny, nx))]) continue;
      const bool is_target = (ny == ty && nx == tx);
      if (!is_target && tile_at(s, ny, nx).kind != TileRef::Floor) continue;
      seen[static_cast<std::size_t>(idx(ny, nx))] = 1;
      prev_action[static_cast<std::size_t>(idx(ny, nx))] = a;
      prev_cell[static_cast<std::size_t>(idx(ny, nx))] = idx(y, x);
      if (is_target) {
        std::vector<Action> path;
        int cur = idx(ny, nx);
        while (cur != idx(s.player_y, s.player_x)) {
          path.push_back(static_cast<Action>(prev_action[static_cast<std::size_t>(cur)]));
          cur = prev_cell[static_cast<std::size_t>(cur)];
        }
        std::reverse(path.begin(), path.end());
        return path;
      }
      queue.emplace_back(ny, nx);
    }
  }
  return std::nullopt;
}

SolveResult solve(const EpisodeState& state) {
  if (state.done) return {state.won, {}};
  EpisodeState sim = state;
  std::vector<Action> actions;

  auto goto_tile = [&](int ty, int tx) -> bool {
    auto path = find_path(sim, ty, tx);
    if (!path) return false;
    for (Action a : *path) {
      step(sim, a);
      actions.push_back(a);
      if (sim.done && !sim.won) return false;
    }
    return true;
  };
  auto inv_has = [&](int colour) {
    return std::find(sim.inventory.begin(), sim.inventory.end(), colour) != sim.inventory.end();
  };

  for (int branch = 0; branch < sim.gem.height(); ++branch) {
    const int gem_colour = sim.gem.lock_colours[static_cast<std::size_t>(branch)];
    // Chain of colours away from the gem over unopened path boxes;
    // chain_boxes[i] yields chain[i] and is locked by chain[i+1].
    std::vector<int> chain{gem_colour};
    std::vector<int> chain_boxes;
    for (;;) {
      int found = -1;
      for (std::size_t i = 0; i < sim.boxes.size(); ++i) {
        const Box& b = sim.boxes[i];
        if (!b.opened && b.kind == BoxKind::Path && b.key_colour == chain.back()) {
          found = static_cast<int>(i);
          break;
        }
      }
      if (found < 0) break;
      chain_boxes.push_back(found);
      chain.push_back(sim.boxes[static_cast<std::size_t>(found)].lock_colour);
    }

    int entry = -1;
    for (std::size_t j = 0; j < chain.size(); ++j) {
      if (inv_has(chain[j])) {
        entry = static_cast<int>(j);
        break;
      }
    }
    if (entry < 0) {
      int key_index = -1;
      for (std::size_t i = 0; i < sim.keys.size(); ++i) {
        if (!sim.keys[i].taken && sim.keys[i].colour == chain.back()) key_index = static_cast<int>(i);
      }
      if (key_index < 0) return {};  // branch broken: no way to enter the chain
      const LooseKey& k = sim.keys[static_cast<std::size_t>(key_index)];
      if (!goto_tile(k.y, k.x)) return {};
      entry = static_cast<int>(chain.size()) - 1;
    }
    for (int j = entry - 1; j >= 0; --j) {
      const Box& b = sim.boxes[static_cast<std::size_t>(chain_boxes[static_cast<std::size_t>(j)])];
      if (!goto_tile(b.y, b.x + 1)) return {};
    }
    if (!goto_tile(sim.gem.y + branch, sim.gem.x + 1)) return {};
  }
  if (!sim.won) return {};
  return {true, actions};
}

// ---- Serialization -----------------------------------------------------------

namespace {

std::string kind_str(BoxKind k) {
  switch (k) {
    case BoxKind::Path: return "path";
    case BoxKind::Bridge: return "bridge";
    default: return "distractor";
  }
}

BoxKind kind_from(const std::string& s) {
  if (s == "path") return BoxKind::Path;
  if (s == "bridge") return BoxKind::Bridge;
  if (s == "distractor") return BoxKind::Distractor;
  throw ValueError("episode_from_json: unknown box kind " + s);
}

std::vector<std::vector<std::string>> grid_tokens(const EpisodeState& s) {
  std::vector<std::vector<std::string>> grid(
      static_cast<std::size_t>(s.config.rows),
      std::vector<std::string>(static_cast<std::size_t>(s.config.cols), "."));
  auto put = [&](int y, int x, const std::string& tok) {
    grid[static_cast<std::size_t>(y - 1)][static_cast<std::size_t>(x - 1)] = tok;
  };
  for (const LooseKey& k : s.keys) {
    if (!k.taken) put(k.y, k.x, "k" + std::to_string(k.colour));
  }
  for (const Box& b : s.boxes) {
    if (b.opened) continue;
    put(b.y, b.x, "bk" + std::to_string(b.key_colour));
    put(b.y, b.x + 1, "bl" + std::to_string(b.lock_colour));
  }
  if (!s.gem.opened) {
    for (int i = 0; i < s.gem.height(); ++i) {
      put(s.gem.y + i, s.gem.x, "G");
      put(s.gem.y + i, s.gem.x + 1, "gl" + std::to_string(s.gem.lock_colours[static_cast<std::size_t>(i)]));
    }
  }
  put(s.player_y, s.player_x, "P");
  return grid;
}

}  // namespace

ordered_json to_json(const EpisodeState& s) {
  ordered_json j;
  j["format"] = "stx-episode-v1";
  j["seed"] = s.seed;
  ordered_json cfg;
  cfg["rows"] = s.config.rows;
  cfg["cols"] = s.config.cols;
  cfg["solution_length"] = s.config.solution_length;
  cfg["mode"] = s.config.bridge_mode ? "bridge" : "standard";
  if (s.config.bridge) {
    cfg["bridge"] = ordered_json{{"source", s.config.bridge->source}, {"target", s.config.bridge->target}};
  } else {
    cfg["bridge"] = nullptr;
  }
  cfg["distractors"] = s.config.distractors;
  if (s.config.horizon) {
    cfg["horizon"] = *s.config.horizon;
  } else {
    cfg["horizon"] = nullptr;
  }
  j["config"] = cfg;
  ordered_json st;
  st["player"] = {s.player_y, s.player_x};
  st["inventory"] = s.inventory;
  st["steps"] = s.steps;
  st["done"] = s.done;
  st["won"] = s.won;
  st["total_reward"] = s.total_reward;
  ordered_json boxes = ordered_json::array();
  for (const Box& b : s.boxes) {
    boxes.push_back(ordered_json{{"key", b.key_colour},
                                 {"lock", b.lock_colour},
                                 {"y", b.y},
                                 {"x", b.x},
                                 {"kind", kind_str(b.kind)},
                                 {"opened", b.opened}});
  }
  st["boxes"] = boxes;
  ordered_json keys = ordered_json::array();
  for (const LooseKey& k : s.keys) {
    keys.push_back(ordered_json{{"colour", k.colour}, {"y", k.y}, {"x", k.x}, {"taken", k.taken}});
  }
  st["loose_keys"] = keys;
  st["gem"] = ordered_json{
      {"locks", s.gem.lock_colours}, {"y", s.gem.y}, {"x", s.gem.x}, {"opened", s.gem.opened}};
  j["state"] = st;
  j["grid"] = grid_tokens(s);  // derived; readers use the structured state
  return j;
}

EpisodeState episode_from_json(const ordered_json& j) {
  if (!j.contains("format") || j["format"] != "stx-episode-v1") {
    throw ValueError("episode_from_json: not an stx episode file");
  }
  EpisodeState s;
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& cfg = j.at("config");
  s.config.rows = cfg.at("rows").get<int>();
  s.config.cols = cfg.at("cols").get<int>();
  s.config.solution_length = cfg.at("solution_length").get<int>();
  s.config.bridge_mode = cfg.at("mode").get<std::string>() == "bridge";
  if (!cfg.at("bridge").is_null()) {
    BridgeSpec b;
    b.source = cfg.at("bridge").at("source").get<int>();
    b.target = cfg.at("bridge").at("target").get<int>();
    s.config.bridge = b;
  }
  s.config.distractors = cfg.at("distractors").get<int>();
  if (!cfg.at("horizon").is_null()) s.config.horizon = cfg.at("horizon").get<int>();
  const auto& st = j.at("state");
  s.player_y = st.at("player")[0].get<int>();
  s.player_x = st.at("player")[1].get<int>();
  s.inventory = st.at("inventory").get<std::vector<int>>();
  s.steps = st.at("steps").get<int>();
  s.done = st.at("done").get<bool>();
  s.won = st.at("won").get<bool>();
  s.total_reward = st.at("total_reward").get<double>();
  for (const auto& b : st.at("boxes")) {
    Box box;
    box.key_colour = b.at("key").get<int>();
    box.lock_colour = b.at("lock").get<int>();
    box.y = b.at("y").get<int>();
    box.x = b.at("x").get<int>();
    box.kind = kind_from(b.at("kind").get<std::string>());
    box.opened = b.at("opened").get<bool>();
    s.boxes.push_back(box);
  }
  for (const auto& k : st.at("loose_keys")) {
    LooseKey key;
    key.colour = k.at("colour").get<int>();
    key.y = k.at("y").get<int>();
    key.x = k.at("x").get<int>();
    key.taken = k.at("taken").get<bool>();
    s.keys.push_back(key);
  }
  const auto& g = st.at("gem");
  s.gem.lock_colours = g.at("locks").get<std::vector<int>>();
  s.gem.y = g.at("y").get<int>();
  s.gem.x = g.at("x").get<int>();
  s.gem.opened = g.at("opened").get<bool>();
  return s;
}

}  // namespace stx::env
