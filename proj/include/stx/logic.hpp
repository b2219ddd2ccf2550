#pragma once

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stx/boxworld.hpp"

namespace stx::logic {

/// Formula of the episode fragment: colour atoms, the Gem, linear conjunction
/// and linear implication. Immutable value type.
class Formula {
 public:
  enum class Kind { Atom, Gem, Tensor, Lollipop };

  static Formula atom(int colour);
  static Formula gem();
  static Formula tensor(Formula left, Formula right);
  static Formula lollipop(Formula left, Formula right);

  Kind kind() const { return kind_; }
  int colour() const;
  const Formula& left() const;
  const Formula& right() const;

  bool operator==(const Formula& other) const;
  /// Leaf formulas of the tensor tree, as a sorted multiset key; two tensor
  /// formulas agree on this iff they are equal up to exchange.
  std::vector<std::string> atom_multiset() const;
  std::string str() const;  // e.g. "C3", "G", "(C1*C2)", "(C1 -o C2)"

 private:
  Formula() : kind_(Kind::Gem) {}
  Kind kind_;
  int colour_ = -1;
  std::shared_ptr<const Formula> left_, right_;
};

/// Antecedent multiset and succedent.
struct Sequent {
  std::vector<Formula> antecedent;
  Formula succedent = Formula::gem();
  std::string str() const;
  bool operator==(const Sequent& other) const;
};

/// Tensor of `colours` in slot order, left-associated; nullopt when empty.
std::optional<Formula> inventory_formula(const std::vector<int>& colours);

struct Axiom {
  enum class Source { LooseKey, Box, Gem };
  Source source = Source::Box;
  int object_index = -1;  // key/box index in the episode; -1 for the gem
  Sequent sequent;
};

/// The multiset of axioms an episode presents: |- C per untaken loose key,
/// C |- C' per unopened box (bridges and distractors included), and the gem
/// sequent (key colours in top-first order).
std::vector<Axiom> axioms_of(const env::EpisodeState& episode);

/// axioms_of plus one |- C per key currently in the inventory: the hypotheses
/// available from an arbitrary mid-episode state.
std::vector<Sequent> state_sequents(const env::EpisodeState& episode);

struct ProofNode;
using ProofPtr = std::shared_ptr<const ProofNode>;

/// Nodes: a box axiom, the inventory-carrying step A (x) X |- A (x) Y built
/// from a box axiom, or a cut. The inventory step is kept atomic; its inner
/// tensor-rule subtree is not expanded.
struct ProofNode {
  enum class Kind { Axiom, InventoryStep, Cut };
  Kind kind = Kind::Axiom;
  Sequent conclusion;
  Axiom axiom;                       // Axiom / InventoryStep
  std::optional<Formula> inventory;  // InventoryStep: the formula A
  ProofPtr left, right;              // Cut
  std::optional<Formula> cut_formula;
};

ProofPtr make_axiom(Axiom axiom);
ProofPtr make_inventory_step(Formula inventory, Axiom axiom);
/// Cuts left's succedent against a matching antecedent element of right
/// (matching up to exchange inside tensor formulas).
ProofPtr make_cut(ProofPtr left, ProofPtr right);

int leaf_count(const ProofPtr& proof);
std::string proof_text(const ProofPtr& proof);
nlohmann::ordered_json proof_json(const ProofPtr& proof);

struct ProofFailure {
  enum class Reason { Bridge, Distractor, Incomplete };
  Reason reason = Reason::Incomplete;
  int step_index = -1;  // first violating step; actions.size() when the
                        // trajectory simply ends short
  std::string str() const;
};

using ProofResult = std::variant<ProofPtr, ProofFailure>;

/// Replays a trajectory from a fresh episode and builds the cut tree whose
/// leaves are the opened boxes' axioms in order, with inventory steps carrying
/// the inventory formula. Bridge or distractor openings and trajectories that
/// stall yield a ProofFailure instead.
ProofResult trajectory_to_proof(const env::EpisodeState& episode,
                                const std::vector<env::Action>& actions);

/// Decision oracle for the episode fragment: can the goal be derived from
/// some sub-multiset of gamma? Exhaustive search over inventory-token states;
/// unused axioms may be left aside (a strategy need not open every box).
bool provable(const std::vector<Sequent>& gamma, const Formula& goal);

/// Appendix-style bridge locator: a source is a box pair with equal lock
/// colours and distinct keys, a sink a pair with equal keys and distinct
/// locks. When both exist and a unique box lies in both, that box is the
/// bridge. Returns the box index, or nullopt (Unknown).
std::optional<int> find_bridge_by_source_sink(const env::EpisodeState& episode);

}  // namespace stx::logic
