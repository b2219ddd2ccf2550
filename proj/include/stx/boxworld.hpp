#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stx/image.hpp"
#include "stx/rng.hpp"

namespace stx::env {

inline constexpr int kNumColours = 20;

/// RGB of colour k: hue 18k degrees, saturation 0.7, brightness 0.8,
/// channels rounded half-up to bytes.
std::array<std::uint8_t, 3> colour_rgb(int colour);

// Fixed tile shades (not part of the key palette).
inline constexpr std::array<std::uint8_t, 3> kFloorRgb{220, 220, 220};
inline constexpr std::array<std::uint8_t, 3> kPlayerRgb{77, 77, 77};
inline constexpr std::array<std::uint8_t, 3> kGemRgb{255, 255, 255};

enum class Action { Left = 0, Up = 1, Right = 2, Down = 3 };
inline constexpr int kNumActions = 4;

struct BridgeSpec {
  int source = 1;  // b in [1, a]: index on the top path, increasing away from the gem
  int target = 2;  // c in [a+1, 2a]: a + index on the bottom path
};

struct EpisodeConfig {
  int rows = 7;  // playing area; the observation adds one inventory column
  int cols = 9;
  int solution_length = 1;  // a
  bool bridge_mode = true;  // two locks on the gem, two solution paths
  std::optional<BridgeSpec> bridge;  // bridge box present iff set (bridge mode)
  int distractors = 0;               // standard mode only
  std::optional<int> horizon;        // step cap; unlimited when unset
};

enum class BoxKind { Path, Bridge, Distractor };

struct Box {
  int key_colour = -1;   // left tile: the box contents
  int lock_colour = -1;  // right tile
  int y = 0, x = 0;      // key tile position, 1-indexed
  BoxKind kind = BoxKind::Path;
  bool opened = false;
};

struct LooseKey {
  int colour = -1;
  int y = 0, x = 0;
  bool taken = false;
};

struct Gem {
  std::vector<int> lock_colours;  // [top] or [top, bottom]
  int y = 0, x = 0;               // top face tile, 1-indexed; locks at x+1
  bool opened = false;
  int height() const { return static_cast<int>(lock_colours.size()); }
};

struct EpisodeState {
  EpisodeConfig config;
  std::uint64_t seed = 0;
  std::vector<Box> boxes;
  std::vector<LooseKey> keys;
  Gem gem;
  int player_y = 1, player_x = 1;
  std::vector<int> inventory;  // colour per slot, fills from the top
  int steps = 0;
  bool done = false;
  bool won = false;
  double total_reward = 0.0;
};

enum class EventKind {
  None,
  PickedKey,
  OpenedBox,
  OpenedGem,
  OpenedBridge,
  OpenedDistractor,
  Truncated,
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
  EventKind event = EventKind::None;
  int box_index = -1;  // for Opened* events
  int key_index = -1;  // for PickedKey
};

/// Builds a seeded episode: colour-disjoint solution paths to the gem locks,
/// keys and boxes on the admissible key slots, uniform player start, validated
/// solvable. Deterministic in (config, seed).
EpisodeState generate(const EpisodeConfig& config, std::uint64_t seed);

/// Applies one action. Movement onto a wall edge, a box key tile, a lock
/// without its key, or the gem without the needed keys is a no-op.
StepResult step(EpisodeState& state, Action action);

/// One pixel per tile, [rows, cols+1, 3], rightmost column = inventory.
Image render(const EpisodeState& state);

struct SolveResult {
  bool solvable = false;
  std::vector<Action> actions;
};

/// Scripted oracle: collects each gem key by walking its branch chain in
/// dependency order, touching a gem lock at the end of every branch, and
/// never opens a bridge or distractor. Unsolvable when a needed chain is
/// broken or a target cannot be reached.
SolveResult solve(const EpisodeState& state);

/// Canonical shortest path of moves ending on tile (ty, tx); all other object
/// tiles are treated as walls. Neighbour expansion follows action order.
std::optional<std::vector<Action>> find_path(const EpisodeState& state, int ty, int tx);

/// Puzzle type tuple; b and c are 0 for bridge-free episodes.
struct PuzzleType {
  int a = 1, b = 0, c = 0;
  std::string str() const;
};
PuzzleType puzzle_type(const EpisodeConfig& config);

nlohmann::ordered_json to_json(const EpisodeState& state);
EpisodeState episode_from_json(const nlohmann::ordered_json& doc);

}  // namespace stx::env
