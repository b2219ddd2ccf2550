#include "stx/logic.hpp"

#include <algorithm>
#include <map>
#include <nlohmann/json.hpp>
#include <set>

#include "stx/errors.hpp"

namespace stx::logic {

using ordered_json = nlohmann::ordered_json;

Formula Formula::atom(int colour) {
  Formula f;
  f.kind_ = Kind::Atom;
  f.colour_ = colour;
  return f;
}

Formula Formula::gem() {
  Formula f;
  f.kind_ = Kind::Gem;
  return f;
}

Formula Formula::tensor(Formula left, Formula right) {
  Formula f;
  f.kind_ = Kind::Tensor;
  f.left_ = std::make_shared<Formula>(std::move(left));
  f.right_ = std::make_shared<Formula>(std::move(right));
  return f;
}

Formula Formula::lollipop(Formula left, Formula right) {
  Formula f;
  f.kind_ = Kind::Lollipop;
  f.left_ = std::make_shared<Formula>(std::move(left));
  f.right_ = std::make_shared<Formula>(std::move(right));
  return f;
}

int Formula::colour() const {
  if (kind_ != Kind::Atom) throw ContractError("Formula::colour on a non-atom");
  return colour_;
}

const Formula& Formula::left() const {
  if (!left_) throw ContractError("Formula::left on a leaf");
  return *left_;
}

const Formula& Formula::right() const {
  if (!right_) throw ContractError("Formula::right on a leaf");
  return *right_;
}

bool Formula::operator==(const Formula& other) const {
  if (kind_ != other.kind_) return false;
  switch (kind_) {
    case Kind::Atom: return colour_ == other.colour_;
    case Kind::Gem: return true;
    default: return left() == other.left() && right() == other.right();
  }
}

std::vector<std::string> Formula::atom_multiset() const {
  std::vector<std::string> out;
  if (kind_ == Kind::Tensor) {
    auto l = left().atom_multiset();
    auto r = right().atom_multiset();
    out.insert(out.end(), l.begin(), l.end());
    out.insert(out.end(), r.begin(), r.end());
  } else {
    out.push_back(str());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string Formula::str() const {
  switch (kind_) {
    case Kind::Atom: return "C" + std::to_string(colour_);
    case Kind::Gem: return "G";
    case Kind::Tensor: return "(" + left().str() + "*" + right().str() + ")";
    default: return "(" + left().str() + " -o " + right().str() + ")";
  }
}

std::string Sequent::str() const {
  std::string s;
  for (std::size_t i = 0; i < antecedent.size(); ++i) {
    if (i) s += ", ";
    s += antecedent[i].str();
  }
  s += s.empty() ? "|- " : " |- ";
  s += succedent.str();
  return s;
}

bool Sequent::operator==(const Sequent& other) const {
  if (!(succedent == other.succedent) || antecedent.size() != other.antecedent.size()) return false;
  // Multiset comparison via sorted print forms.
  std::vector<std::string> a, b;
  for (const Formula& f : antecedent) a.push_back(f.str());
  for (const Formula& f : other.antecedent) b.push_back(f.str());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b;
}

std::optional<Formula> inventory_formula(const std::vector<int>& colours) {
  if (colours.empty()) return std::nullopt;
  Formula f = Formula::atom(colours[0]);
  for (std::size_t i = 1; i < colours.size(); ++i) {
    f = Formula::tensor(std::move(f), Formula::atom(colours[i]));
  }
  return f;
}

std::vector<Axiom> axioms_of(const env::EpisodeState& episode) {
  std::vector<Axiom> out;
  for (std::size_t i = 0; i < episode.keys.size(); ++i) {
    const env::LooseKey& k = episode.keys[i];
    if (k.taken) continue;
    Axiom a;
    a.source = Axiom::Source::LooseKey;
    a.object_index = static_cast<int>(i);
    a.sequent = Sequent{{}, Formula::atom(k.colour)};
    out.push_back(std::move(a));
  }
  for (std::size_t i = 0; i < episode.boxes.size(); ++i) {
    const env::Box& b = episode.boxes[i];
    if (b.opened) continue;
    Axiom a;
    a.source = Axiom::Source::Box;
    a.object_index = static_cast<int>(i);
    a.sequent = Sequent{{Formula::atom(b.lock_colour)}, Formula::atom(b.key_colour)};
    out.push_back(std::move(a));
  }
  if (!episode.gem.opened) {
    Axiom a;
    a.source = Axiom::Source::Gem;
    Formula keys = *inventory_formula(episode.gem.lock_colours);
    a.sequent = Sequent{{std::move(keys)}, Formula::gem()};
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<Sequent> state_sequents(const env::EpisodeState& episode) {
  std::vector<Sequent> out;
  for (const Axiom& a : axioms_of(episode)) out.push_back(a.sequent);
  for (int c : episode.inventory) out.push_back(Sequent{{}, Formula::atom(c)});
  return out;
}

ProofPtr make_axiom(Axiom axiom) {
  auto node = std::make_shared<ProofNode>();
  node->kind = ProofNode::Kind::Axiom;
  node->conclusion = axiom.sequent;
  node->axiom = std::move(axiom);
  return node;
}

ProofPtr make_inventory_step(Formula inventory, Axiom axiom) {
  auto node = std::make_shared<ProofNode>();
  node->kind = ProofNode::Kind::InventoryStep;
  // pi^beta_A: A (x) X |- A (x) Y, with an empty X collapsing to A |- A (x) Y.
  const Sequent& box = axiom.sequent;
  Formula lhs = box.antecedent.empty()
                    ? inventory
                    : Formula::tensor(inventory, box.antecedent[0]);
  Formula rhs = Formula::tensor(inventory, box.succedent);
  node->conclusion = Sequent{{std::move(lhs)}, std::move(rhs)};
  node->axiom = std::move(axiom);
  node->inventory = std::move(inventory);
  return node;
}

ProofPtr make_cut(ProofPtr left, ProofPtr right) {
  if (!left || !right) throw ContractError("make_cut: null premise");
  if (!left->conclusion.antecedent.empty()) {
    throw ContractError("make_cut: left premise must have an empty antecedent");
  }
  const Formula& cut = left->conclusion.succedent;
  const auto cut_atoms = cut.atom_multiset();
  int match = -1;
  for (std::size_t i = 0; i < right->conclusion.antecedent.size(); ++i) {
    if (right->conclusion.antecedent[i].atom_multiset() == cut_atoms) {
      match = static_cast<int>(i);
      break;
    }
  }
  if (match < 0) {
    throw ContractError("make_cut: no antecedent matches cut formula " + cut.str());
  }
  auto node = std::make_shared<ProofNode>();
  node->kind = ProofNode::Kind::Cut;
  Sequent conclusion = right->conclusion;
  conclusion.antecedent.erase(conclusion.antecedent.begin() + match);
  node->conclusion = std::move(conclusion);
  node->cut_formula = cut;
  node->left = std::move(left);
  node->right = std::move(right);
  return node;
}

int leaf_count(const ProofPtr& proof) {
  if (!proof) return 0;
  if (proof->kind == ProofNode::Kind::Cut) {
    return leaf_count(proof->left) + leaf_count(proof->right);
  }
  return 1;
}

namespace {

void proof_text_rec(const ProofPtr& p, int depth, std::string& out) {
  out.append(static_cast<std::size_t>(2 * depth), ' ');
  switch (p->kind) {
    case ProofNode::Kind::Axiom:
      out += "axiom  " + p->conclusion.str() + "\n";
      return;
    case ProofNode::Kind::InventoryStep:
      out += "inv[" + p->inventory->str() + "]  " + p->conclusion.str() +
             "  (box " + p->axiom.sequent.str() + ")\n";
      return;
    case ProofNode::Kind::Cut:
      out += "cut on " + p->cut_formula->str() + "  =>  " + p->conclusion.str() + "\n";
      proof_text_rec(p->left, depth + 1, out);
      proof_text_rec(p->right, depth + 1, out);
      return;
  }
}

}  // namespace

std::string proof_text(const ProofPtr& proof) {
  if (!proof) return "";
  std::string out;
  proof_text_rec(proof, 0, out);
  return out;
}

ordered_json proof_json(const ProofPtr& proof) {
  if (!proof) return nullptr;
  ordered_json j;
  switch (proof->kind) {
    case ProofNode::Kind::Axiom:
      j["kind"] = "axiom";
      j["sequent"] = proof->conclusion.str();
      break;
    case ProofNode::Kind::InventoryStep:
      j["kind"] = "inventory_step";
      j["inventory"] = proof->inventory->str();
      j["box"] = proof->axiom.sequent.str();
      j["sequent"] = proof->conclusion.str();
      break;
    case ProofNode::Kind::Cut:
      j["kind"] = "cut";
      j["cut_formula"] = proof->cut_formula->str();
      j["sequent"] = proof->conclusion.str();
      j["left"] = proof_json(proof->left);
      j["right"] = proof_json(proof->right);
      break;
  }
  return j;
}

std::string ProofFailure::str() const {
  std::string why;
  switch (reason) {
    case Reason::Bridge: why = "bridge"; break;
    case Reason::Distractor: why = "distractor"; break;
    case Reason::Incomplete: why = "incomplete"; break;
  }
  return "failure(" + why + " at step " + std::to_string(step_index) + ")";
}

ProofResult trajectory_to_proof(const env::EpisodeState& episode,
                                const std::vector<env::Action>& actions) {
  if (episode.steps != 0 || !episode.inventory.empty() || episode.done) {
    throw ContractError("trajectory_to_proof: expects a fresh episode");
  }
  env::EpisodeState sim = episode;
  ProofPtr tree;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const std::vector<int> inv_before = sim.inventory;
    const env::StepResult r = env::step(sim, actions[i]);
    switch (r.event) {
      case env::EventKind::None:
        break;
      case env::EventKind::PickedKey: {
        Axiom ax;
        ax.source = Axiom::Source::LooseKey;
        ax.object_index = r.key_index;
        ax.sequent = Sequent{{}, Formula::atom(sim.keys[static_cast<std::size_t>(r.key_index)].colour)};
        if (!tree) {
          tree = make_axiom(std::move(ax));
        } else {
          Formula a = *inventory_formula(inv_before);
          tree = make_cut(tree, make_inventory_step(std::move(a), std::move(ax)));
        }
        break;
      }
      case env::EventKind::OpenedBox: {
        const env::Box& b = sim.boxes[static_cast<std::size_t>(r.box_index)];
        Axiom ax;
        ax.source = Axiom::Source::Box;
        ax.object_index = r.box_index;
        ax.sequent = Sequent{{Formula::atom(b.lock_colour)}, Formula::atom(b.key_colour)};
        // The step consumed the first inventory slot holding the lock colour.
        std::vector<int> rest = inv_before;
        auto it = std::find(rest.begin(), rest.end(), b.lock_colour);
        if (it == rest.end() || !tree) throw ContractError("trajectory_to_proof: inconsistent replay");
        rest.erase(it);
        if (rest.empty()) {
          tree = make_cut(tree, make_axiom(std::move(ax)));
        } else {
          tree = make_cut(tree, make_inventory_step(*inventory_formula(rest), std::move(ax)));
        }
        break;
      }
      case env::EventKind::OpenedGem: {
        Axiom ax;
        ax.source = Axiom::Source::Gem;
        // Instantiated with the keys in inventory order so the cut is exact.
        std::vector<int> held;
        for (int c : inv_before) {
          if (std::find(sim.gem.lock_colours.begin(), sim.gem.lock_colours.end(), c) !=
              sim.gem.lock_colours.end()) {
            held.push_back(c);
          }
        }
        ax.sequent = Sequent{{*inventory_formula(held)}, Formula::gem()};
        if (!tree) throw ContractError("trajectory_to_proof: inconsistent replay");
        tree = make_cut(tree, make_axiom(std::move(ax)));
        if (i + 1 != actions.size()) {
          throw ContractError("trajectory_to_proof: actions continue past the end of the episode");
        }
        return tree;
      }
      case env::EventKind::OpenedBridge:
        return ProofFailure{ProofFailure::Reason::Bridge, static_cast<int>(i)};
      case env::EventKind::OpenedDistractor:
        return ProofFailure{ProofFailure::Reason::Distractor, static_cast<int>(i)};
      case env::EventKind::Truncated:
        return ProofFailure{ProofFailure::Reason::Incomplete, static_cast<int>(i)};
    }
  }
  return ProofFailure{ProofFailure::Reason::Incomplete, static_cast<int>(actions.size())};
}

namespace {

struct FragmentAxiom {
  enum class Kind { Key, Box, Goal } kind = Kind::Key;
  int in_a = -1, in_b = -1;  // consumed atoms (colour ids)
  int out = -1;              // produced atom, for Key/Box
};

// Validates the episode shapes and compiles to token rules.
std::vector<FragmentAxiom> compile_fragment(const std::vector<Sequent>& gamma) {
  std::vector<FragmentAxiom> rules;
  for (const Sequent& s : gamma) {
    FragmentAxiom r;
    if (s.succedent.kind() == Formula::Kind::Atom) {
      if (s.antecedent.empty()) {
        r.kind = FragmentAxiom::Kind::Key;
        r.out = s.succedent.colour();
      } else if (s.antecedent.size() == 1 && s.antecedent[0].kind() == Formula::Kind::Atom) {
        r.kind = FragmentAxiom::Kind::Box;
        r.in_a = s.antecedent[0].colour();
        r.out = s.succedent.colour();
      } else {
        throw ValueError("provable: sequent outside the episode fragment: " + s.str());
      }
    } else if (s.succedent.kind() == Formula::Kind::Gem && s.antecedent.size() == 1) {
      const Formula& f = s.antecedent[0];
      r.kind = FragmentAxiom::Kind::Goal;
      if (f.kind() == Formula::Kind::Atom) {
        r.in_a = f.colour();
      } else if (f.kind() == Formula::Kind::Tensor && f.left().kind() == Formula::Kind::Atom &&
                 f.right().kind() == Formula::Kind::Atom) {
        r.in_a = f.left().colour();
        r.in_b = f.right().colour();
      } else {
        throw ValueError("provable: gem sequent outside the episode fragment: " + s.str());
      }
    } else {
      throw ValueError("provable: sequent outside the episode fragment: " + s.str());
    }
    rules.push_back(r);
  }
  return rules;
}

using TokenState = std::pair<std::vector<int>, std::uint32_t>;  // sorted tokens, unused mask

bool search(const std::vector<FragmentAxiom>& rules, std::vector<int>& tokens,
            std::uint32_t unused, const Formula& goal, std::set<TokenState>& seen) {
  if (goal.kind() == Formula::Kind::Atom &&
      std::find(tokens.begin(), tokens.end(), goal.colour()) != tokens.end()) {
    return true;
  }
  TokenState key{tokens, unused};
  if (!seen.insert(key).second) return false;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (!(unused & (std::uint32_t{1} << i))) continue;
    const FragmentAxiom& r = rules[i];
    const std::uint32_t next_unused = unused & ~(std::uint32_t{1} << i);
    std::vector<int> next = tokens;
    if (r.kind == FragmentAxiom::Kind::Key) {
      next.push_back(r.out);
    } else {
      auto a = std::find(next.begin(), next.end(), r.in_a);
      if (a == next.end()) continue;
      next.erase(a);
      if (r.in_b >= 0) {
        auto b = std::find(next.begin(), next.end(), r.in_b);
        if (b == next.end()) continue;
        next.erase(b);
      }
      if (r.kind == FragmentAxiom::Kind::Goal) {
        if (goal.kind() == Formula::Kind::Gem) return true;
        continue;  // a gem token is of no further use toward an atom goal
      }
      next.push_back(r.out);
    }
    std::sort(next.begin(), next.end());
    if (search(rules, next, next_unused, goal, seen)) return true;
  }
  return false;
}

}  // namespace

bool provable(const std::vector<Sequent>& gamma, const Formula& goal) {
  if (gamma.size() > 32) throw ValueError("provable: fragment search supports at most 32 axioms");
  if (goal.kind() != Formula::Kind::Gem && goal.kind() != Formula::Kind::Atom) {
    throw ValueError("provable: goal must be the gem or an atom");
  }
  const std::vector<FragmentAxiom> rules = compile_fragment(gamma);
  std::vector<int> tokens;
  std::set<TokenState> seen;
  const std::uint32_t unused =
      gamma.size() == 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << gamma.size()) - 1;
  return search(rules, tokens, unused, goal, seen);
}

std::optional<int> find_bridge_by_source_sink(const env::EpisodeState& episode) {
  std::vector<int> boxes;
  for (std::size_t i = 0; i < episode.boxes.size(); ++i) {
    if (!episode.boxes[i].opened) boxes.push_back(static_cast<int>(i));
  }
  std::set<int> source_members, sink_members;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      const env::Box& a = episode.boxes[static_cast<std::size_t>(boxes[i])];
      const env::Box& b = episode.boxes[static_cast<std::size_t>(boxes[j])];
      if (a.lock_colour == b.lock_colour && a.key_colour != b.key_colour) {
        source_members.insert(boxes[i]);
        source_members.insert(boxes[j]);
      }
      if (a.key_colour == b.key_colour && a.lock_colour != b.lock_colour) {
        sink_members.insert(boxes[i]);
        sink_members.insert(boxes[j]);
      }
    }
  }
  if (source_members.empty() || sink_members.empty()) return std::nullopt;
  std::vector<int> common;
  std::set_intersection(source_members.begin(), source_members.end(), sink_members.begin(),
                        sink_members.end(), std::back_inserter(common));
  if (common.size() != 1) return std::nullopt;
  return common[0];
}

}  // namespace stx::logic
