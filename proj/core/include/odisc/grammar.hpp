#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "odisc/common.hpp"

namespace odisc {

// Grammar symbol: either a terminal (quoted in grammar files) or a
// nonterminal. `id` indexes Grammar::term_names / Grammar::nt_names.
struct Symbol {
  bool terminal = false;
  int id = 0;
  bool operator==(const Symbol&) const = default;
};

// One production rule. Indices are 1-based and follow file order; the
// padding rule is always last and has no grammatical content.
struct ProductionRule {
  int index = 0;
  int lhs = 0;                // nonterminal id; -1 for the padding rule
  std::vector<Symbol> rhs;    // empty for the padding rule
  double prob = -1.0;         // negative when the grammar is unweighted
  bool padding = false;
};

// A leftmost-derivation rule sequence, padded to n_max with the padding
// rule index. n_rules counts the real (non-padding) prefix.
struct RuleSequence {
  std::vector<int> indices;
  int n_rules = 0;
};

struct SampleLimits {
  int max_length = 0;  // 0: use the grammar's n_max
  int max_depth = 30;
  int max_retries = 100;
};

class Grammar {
 public:
  std::vector<std::string> nt_names;
  std::vector<std::string> term_names;
  std::vector<ProductionRule> rules;  // 1-based indices, padding last
  int start_nt = 0;
  int n_max = 0;
  int padding_index = 0;  // == rules.size()
  bool probabilistic = false;

  int total_rules() const { return static_cast<int>(rules.size()); }
  const ProductionRule& rule(int index_1based) const;
  const std::vector<int>& rules_for(int nt) const { return rules_by_lhs_[nt]; }
  std::optional<int> find_nonterminal(const std::string& name) const;

  // Minimal number of rule applications needed to expand `nt` to a
  // terminal-only string. Used for budget-aware decoding.
  int min_close(int nt) const { return min_close_[nt]; }

  std::uint64_t hash() const;
  std::string canonical_text() const;
  std::string rule_string(int index_1based) const;

  // Tokenize against the terminal alphabet, whitespace-insensitive,
  // longest match first for multi-character terminals.
  std::vector<int> tokenize(const std::string& text) const;

  bool sequence_valid(const std::vector<int>& indices) const;
  RuleSequence pad_sequence(std::vector<int> indices) const;

  friend Grammar load_grammar(const std::string& text, int n_max);

 private:
  std::vector<std::vector<int>> rules_by_lhs_;
  std::vector<int> min_close_;
  std::vector<int> min_tokens_;
  friend class ChartParser;
  void finalize();
};

Grammar load_grammar(const std::string& text, int n_max);
Grammar load_grammar_file(const std::string& path, int n_max);

// Leftmost parse. Deterministic: at every choice point the applicable
// rule with the lowest index wins, split positions are explored
// left-shortest first. Throws not_in_language / sequence_length.
RuleSequence parse(const Grammar& g, const std::string& text);

// Replays a rule sequence into its terminal string (tokens joined by
// single spaces). Throws invalid_sequence on any mismatch.
std::string generate(const Grammar& g, const RuleSequence& seq);
std::string generate(const Grammar& g, const std::vector<int>& indices);

// Top-down sampling honoring rule weights when present (uniform
// otherwise). Resamples on limit violations; throws sample_retries
// after limits.max_retries failed attempts.
RuleSequence sample(const Grammar& g, std::mt19937_64& rng,
                    const SampleLimits& limits = {});

using OneHotMatrix = Eigen::MatrixXd;  // n_max x |rules|, rows one-hot

OneHotMatrix encode_one_hot(const Grammar& g, const RuleSequence& seq);
RuleSequence decode_one_hot(const Grammar& g, const OneHotMatrix& m);

// Mask over rule indices (size |rules|, 1-based rule k at slot k-1):
// with a stack-top nonterminal only that nonterminal's rules are legal,
// with an empty stack only the padding rule is.
std::vector<bool> valid_rule_mask(const Grammar& g,
                                  std::optional<int> stack_top_nt);

// Incremental leftmost-derivation state over the nonterminal stack.
// Terminals are discharged eagerly so the top of the stack is always
// the leftmost pending nonterminal.
class DerivationState {
 public:
  explicit DerivationState(const Grammar& g);

  std::optional<int> top() const;
  bool done() const { return stack_.empty(); }

  // Rules applied so far, padding applications included; equals the next
  // row position when building a one-hot sequence.
  int applied() const { return applied_; }

  // Total minimal rule count needed to close the current stack.
  int min_close_total() const;

  // Whether applying rule `index` keeps the derivation closable within
  // `remaining` further rule slots (including the slot this rule uses).
  bool feasible(int index, int remaining) const;

  void apply(int index);

 private:
  const Grammar* g_;
  std::vector<int> stack_;  // nonterminal ids, top at back
  int applied_ = 0;
};

}  // namespace odisc
