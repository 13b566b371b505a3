#include "odisc/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace odisc {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const ProductionRule& Grammar::rule(int index_1based) const {
  if (index_1based < 1 || index_1based > total_rules())
    throw Error(Error::Code::invalid_sequence,
                "rule index out of range: " + std::to_string(index_1based));
  return rules[static_cast<std::size_t>(index_1based - 1)];
}

std::optional<int> Grammar::find_nonterminal(const std::string& name) const {
  for (std::size_t i = 0; i < nt_names.size(); ++i)
    if (nt_names[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

std::string Grammar::rule_string(int index_1based) const {
  const ProductionRule& r = rule(index_1based);
  if (r.padding) return "Nothing -> None";
  std::ostringstream os;
  os << nt_names[r.lhs] << " ->";
  for (const Symbol& s : r.rhs) {
    if (s.terminal)
      os << " '" << term_names[s.id] << "'";
    else
      os << " " << nt_names[s.id];
  }
  return os.str();
}

std::string Grammar::canonical_text() const {
  std::ostringstream os;
  for (const ProductionRule& r : rules) {
    os << rule_string(r.index);
    if (r.prob >= 0.0) os << " [" << format_double(r.prob) << "]";
    os << "\n";
  }
  return os.str();
}

std::uint64_t Grammar::hash() const { return fnv1a(canonical_text()); }

void Grammar::finalize() {
  rules_by_lhs_.assign(nt_names.size(), {});
  for (const ProductionRule& r : rules)
    if (!r.padding) rules_by_lhs_[r.lhs].push_back(r.index);

  const int inf = std::numeric_limits<int>::max() / 4;
  min_close_.assign(nt_names.size(), inf);
  min_tokens_.assign(nt_names.size(), inf);
  bool changed = true;
  while (changed) {
    changed = false;
    for (const ProductionRule& r : rules) {
      if (r.padding) continue;
      int cost = 1;
      int toks = 0;
      bool ok = true;
      for (const Symbol& s : r.rhs) {
        if (s.terminal) {
          toks += 1;
        } else if (min_close_[s.id] >= inf) {
          ok = false;
          break;
        } else {
          cost += min_close_[s.id];
          toks += min_tokens_[s.id];
        }
      }
      if (!ok) continue;
      if (cost < min_close_[r.lhs]) {
        min_close_[r.lhs] = cost;
        changed = true;
      }
      if (toks < min_tokens_[r.lhs]) {
        min_tokens_[r.lhs] = toks;
        changed = true;
      }
    }
  }
  for (std::size_t i = 0; i < nt_names.size(); ++i)
    if (min_close_[i] >= inf)
      throw Error(Error::Code::grammar_syntax,
                  "nonterminal cannot derive a terminal string: " + nt_names[i]);
}

std::vector<int> Grammar::tokenize(const std::string& text) const {
  // Longest-match lexing over the terminal alphabet.
  std::vector<int> order(term_names.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return term_names[a].size() > term_names[b].size();
  });

  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
      continue;
    }
    int hit = -1;
    for (int id : order) {
      const std::string& t = term_names[id];
      if (!t.empty() && text.compare(pos, t.size(), t) == 0) {
        hit = id;
        break;
      }
    }
    if (hit < 0)
      throw Error(Error::Code::not_in_language,
                  "unknown token at character " + std::to_string(pos) + ": '" +
                      text.substr(pos, 8) + "'");
    out.push_back(hit);
    pos += term_names[hit].size();
  }
  return out;
}

RuleSequence Grammar::pad_sequence(std::vector<int> indices) const {
  if (static_cast<int>(indices.size()) > n_max)
    throw Error(Error::Code::sequence_length,
                "derivation needs " + std::to_string(indices.size()) +
                    " rules, limit is " + std::to_string(n_max));
  RuleSequence seq;
  seq.n_rules = static_cast<int>(indices.size());
  seq.indices = std::move(indices);
  seq.indices.resize(static_cast<std::size_t>(n_max), padding_index);
  return seq;
}

bool Grammar::sequence_valid(const std::vector<int>& indices) const {
  DerivationState st(*this);
  for (int idx : indices) {
    if (idx < 1 || idx > total_rules()) return false;
    if (idx == padding_index) {
      if (!st.done()) return false;
      continue;
    }
    if (st.done()) return false;
    const ProductionRule& r = rules[static_cast<std::size_t>(idx - 1)];
    if (r.lhs != st.top().value()) return false;
    st.apply(idx);
  }
  return st.done();
}

// ---------------------------------------------------------------------------
// Grammar file format: one stanza per nonterminal,
//   lhs -> sym sym ... | sym ... [weight]
// with quoted terminals. An optional final "Nothing -> None" stanza names
// the padding rule; it is synthesized when absent. '#' starts a comment.

Grammar load_grammar(const std::string& text, int n_max) {
  if (n_max <= 0)
    throw Error(Error::Code::grammar_syntax, "n_max must be positive");

  struct RawAlt {
    std::vector<std::pair<bool, std::string>> syms;  // (quoted, name)
    double prob = -1.0;
    int line = 0;
  };
  struct RawStanza {
    std::string lhs;
    std::vector<RawAlt> alts;
    int line = 0;
    bool padding = false;
  };

  std::vector<RawStanza> stanzas;
  std::map<std::string, int> seen_lhs;

  std::istringstream in(text);
  std::string raw_line;
  int line_no = 0;
  while (std::getline(in, raw_line)) {
    ++line_no;
    std::string line = raw_line;
    if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
    line = trim(line);
    if (line.empty()) continue;

    std::size_t arrow = line.find("->");
    if (arrow == std::string::npos)
      throw Error(Error::Code::grammar_syntax,
                  "line " + std::to_string(line_no) + ": missing '->'");
    RawStanza st;
    st.lhs = trim(line.substr(0, arrow));
    st.line = line_no;
    if (st.lhs.empty() || st.lhs.find('\'') != std::string::npos)
      throw Error(Error::Code::grammar_syntax,
                  "line " + std::to_string(line_no) + ": bad rule head");
    if (seen_lhs.count(st.lhs))
      throw Error(Error::Code::grammar_syntax,
                  "line " + std::to_string(line_no) + ": duplicate rules for " +
                      st.lhs);
    seen_lhs[st.lhs] = line_no;

    std::string body = line.substr(arrow + 2);
    std::vector<std::string> alt_texts;
    std::string cur;
    bool in_quote = false;
    for (char c : body) {
      if (c == '\'') in_quote = !in_quote;
      if (c == '|' && !in_quote) {
        alt_texts.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    alt_texts.push_back(cur);
    if (in_quote)
      throw Error(Error::Code::grammar_syntax,
                  "line " + std::to_string(line_no) + ": unterminated quote");

    for (std::string& at : alt_texts) {
      RawAlt alt;
      alt.line = line_no;
      std::string a = trim(at);
      if (a.empty())
        throw Error(Error::Code::grammar_syntax,
                    "line " + std::to_string(line_no) + ": empty rule body");
      // Optional trailing [weight].
      if (a.back() == ']') {
        std::size_t lb = a.rfind('[');
        if (lb == std::string::npos)
          throw Error(Error::Code::grammar_syntax,
                      "line " + std::to_string(line_no) + ": unmatched ']'");
        std::string w = trim(a.substr(lb + 1, a.size() - lb - 2));
        try {
          std::size_t used = 0;
          alt.prob = std::stod(w, &used);
          if (used != w.size()) throw std::invalid_argument(w);
        } catch (const std::exception&) {
          throw Error(Error::Code::grammar_syntax,
                      "line " + std::to_string(line_no) + ": bad weight '" + w +
                          "'");
        }
        if (alt.prob < 0.0 || alt.prob > 1.0)
          throw Error(Error::Code::grammar_syntax,
                      "line " + std::to_string(line_no) +
                          ": weight outside [0,1]");
        a = trim(a.substr(0, lb));
        if (a.empty())
          throw Error(Error::Code::grammar_syntax,
                      "line " + std::to_string(line_no) + ": empty rule body");
      }
      // Split into symbols: quoted terminals or bare nonterminal names.
      std::size_t p = 0;
      while (p < a.size()) {
        if (std::isspace(static_cast<unsigned char>(a[p]))) {
          ++p;
          continue;
        }
        if (a[p] == '\'') {
          std::size_t q = a.find('\'', p + 1);
          if (q == std::string::npos)
            throw Error(Error::Code::grammar_syntax,
                        "line " + std::to_string(line_no) +
                            ": unterminated quote");
          std::string t = a.substr(p + 1, q - p - 1);
          if (t.empty())
            throw Error(Error::Code::grammar_syntax,
                        "line " + std::to_string(line_no) + ": empty terminal");
          alt.syms.emplace_back(true, t);
          p = q + 1;
        } else {
          std::size_t q = p;
          while (q < a.size() &&
                 !std::isspace(static_cast<unsigned char>(a[q])) &&
                 a[q] != '\'')
            ++q;
          alt.syms.emplace_back(false, a.substr(p, q - p));
          p = q;
        }
      }
      st.alts.push_back(std::move(alt));
    }
    st.padding = st.lhs == "Nothing" && st.alts.size() == 1 &&
                 st.alts[0].syms.size() == 1 && !st.alts[0].syms[0].first &&
                 st.alts[0].syms[0].second == "None";
    stanzas.push_back(std::move(st));
  }

  if (stanzas.empty())
    throw Error(Error::Code::grammar_syntax, "grammar has no rules");
  for (std::size_t i = 0; i + 1 < stanzas.size(); ++i)
    if (stanzas[i].padding)
      throw Error(Error::Code::grammar_syntax,
                  "line " + std::to_string(stanzas[i].line) +
                      ": padding rule must come last");

  Grammar g;
  g.n_max = n_max;

  // Nonterminals are every stanza head, in file order.
  for (const RawStanza& st : stanzas)
    if (!st.padding) g.nt_names.push_back(st.lhs);

  auto nt_id = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < g.nt_names.size(); ++i)
      if (g.nt_names[i] == name) return static_cast<int>(i);
    return -1;
  };
  std::map<std::string, int> term_ids;
  auto term_id = [&](const std::string& name) -> int {
    auto it = term_ids.find(name);
    if (it != term_ids.end()) return it->second;
    int id = static_cast<int>(g.term_names.size());
    g.term_names.push_back(name);
    term_ids[name] = id;
    return id;
  };

  bool any_prob = false, any_plain = false;
  for (const RawStanza& st : stanzas) {
    if (st.padding) continue;
    int lhs = nt_id(st.lhs);
    for (const RawAlt& alt : st.alts) {
      ProductionRule r;
      r.index = static_cast<int>(g.rules.size()) + 1;
      r.lhs = lhs;
      r.prob = alt.prob;
      (alt.prob >= 0.0 ? any_prob : any_plain) = true;
      for (const auto& [quoted, name] : alt.syms) {
        if (quoted) {
          r.rhs.push_back(Symbol{true, term_id(name)});
        } else {
          int id = nt_id(name);
          if (id < 0)
            throw Error(Error::Code::grammar_syntax,
                        "line " + std::to_string(alt.line) +
                            ": undefined nonterminal '" + name + "'");
          r.rhs.push_back(Symbol{false, id});
        }
      }
      g.rules.push_back(std::move(r));
    }
  }
  if (any_prob && any_plain)
    throw Error(Error::Code::grammar_syntax,
                "weights must be given for all rules or none");
  g.probabilistic = any_prob;

  ProductionRule pad;
  pad.index = static_cast<int>(g.rules.size()) + 1;
  pad.lhs = -1;
  pad.padding = true;
  pad.prob = g.probabilistic ? 1.0 : -1.0;
  g.rules.push_back(pad);
  g.padding_index = pad.index;
  g.start_nt = 0;

  if (g.probabilistic) {
    for (std::size_t nt = 0; nt < g.nt_names.size(); ++nt) {
      double sum = 0.0;
      for (const ProductionRule& r : g.rules)
        if (!r.padding && r.lhs == static_cast<int>(nt)) sum += r.prob;
      if (std::abs(sum - 1.0) > 1e-9)
        throw Error(Error::Code::grammar_syntax,
                    "weights for " + g.nt_names[nt] + " sum to " +
                        format_double(sum, 12) + ", expected 1");
    }
  }

  g.finalize();
  return g;
}

Grammar load_grammar_file(const std::string& path, int n_max) {
  return load_grammar(read_text_file(path), n_max);
}

// ---------------------------------------------------------------------------
// Chart parser: Earley recognition followed by deterministic derivation
// extraction (lowest rule index first, split points left-shortest first).

class ChartParser {
 public:
  ChartParser(const Grammar& g, std::vector<int> tokens)
      : g_(g), tokens_(std::move(tokens)), n_(static_cast<int>(tokens_.size())) {}

  std::vector<int> run() {
    recognize();
    int nts = static_cast<int>(g_.nt_names.size());
    auto& starts = ends_[key(g_.start_nt, 0)];
    (void)nts;
    if (!std::binary_search(starts.begin(), starts.end(), n_))
      throw Error(Error::Code::not_in_language,
                  "not in language (parse stuck at token " +
                      std::to_string(furthest_) + " of " + std::to_string(n_) +
                      ")");
    std::vector<int> out;
    Node root = build(g_.start_nt, 0, n_);
    emit(root, out);
    return out;
  }

 private:
  struct Item {
    int rule;    // 1-based
    int dot;
    int origin;
  };
  struct Node {
    int rule = 0;
    std::vector<Node> children;
  };

  static std::uint64_t key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }
  static std::uint64_t item_key(const Item& it) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(it.rule))
            << 42) ^
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(it.dot))
            << 21) ^
           static_cast<std::uint32_t>(it.origin);
  }

  void add_item(int set, const Item& it) {
    if (seen_[set].insert(item_key(it)).second) sets_[set].push_back(it);
  }

  void recognize() {
    sets_.assign(n_ + 1, {});
    seen_.assign(n_ + 1, {});
    for (int r : g_.rules_for(g_.start_nt)) add_item(0, Item{r, 0, 0});

    for (int k = 0; k <= n_; ++k) {
      // Predict / complete to fixpoint within set k (no empty rules, so
      // completions always span at least one token).
      for (std::size_t i = 0; i < sets_[k].size(); ++i) {
        Item it = sets_[k][i];
        const ProductionRule& r = g_.rule(it.rule);
        if (it.dot < static_cast<int>(r.rhs.size())) {
          const Symbol& s = r.rhs[static_cast<std::size_t>(it.dot)];
          if (!s.terminal)
            for (int pr : g_.rules_for(s.id)) add_item(k, Item{pr, 0, k});
        } else {
          int lhs = r.lhs;
          auto& e = ends_[key(lhs, it.origin)];
          if (!std::binary_search(e.begin(), e.end(), k))
            e.insert(std::lower_bound(e.begin(), e.end(), k), k);
          for (const Item& w : sets_[it.origin]) {
            const ProductionRule& wr = g_.rule(w.rule);
            if (w.dot < static_cast<int>(wr.rhs.size())) {
              const Symbol& ws = wr.rhs[static_cast<std::size_t>(w.dot)];
              if (!ws.terminal && ws.id == lhs)
                add_item(k, Item{w.rule, w.dot + 1, w.origin});
            }
          }
        }
      }
      if (k == n_) break;
      // Scan.
      for (const Item& it : sets_[k]) {
        const ProductionRule& r = g_.rule(it.rule);
        if (it.dot < static_cast<int>(r.rhs.size())) {
          const Symbol& s = r.rhs[static_cast<std::size_t>(it.dot)];
          if (s.terminal && s.id == tokens_[static_cast<std::size_t>(k)]) {
            add_item(k + 1, Item{it.rule, it.dot + 1, it.origin});
            furthest_ = std::max(furthest_, k + 1);
          }
        }
      }
    }
  }

  int min_span(const ProductionRule& r, int from_dot) const {
    int m = 0;
    for (std::size_t d = static_cast<std::size_t>(from_dot); d < r.rhs.size();
         ++d)
      m += r.rhs[d].terminal ? 1 : g_.min_tokens_[r.rhs[d].id];
    return m;
  }

  Node build(int nt, int i, int j) {
    std::uint64_t mk = (key(nt, i) << 16) ^ static_cast<std::uint32_t>(j);
    if (!in_progress_.insert(mk).second)
      throw Error(Error::Code::not_in_language, "cyclic derivation");
    Node out;
    bool ok = false;
    for (int ridx : g_.rules_for(nt)) {
      const ProductionRule& r = g_.rule(ridx);
      std::vector<Node> children;
      if (match_seq(r, 0, i, j, children)) {
        out.rule = ridx;
        out.children = std::move(children);
        ok = true;
        break;
      }
    }
    in_progress_.erase(mk);
    if (!ok)
      throw Error(Error::Code::not_in_language, "no derivation for span");
    return out;
  }

  bool match_seq(const ProductionRule& r, int dot, int pos, int j,
                 std::vector<Node>& children) {
    if (dot == static_cast<int>(r.rhs.size())) return pos == j;
    const Symbol& s = r.rhs[static_cast<std::size_t>(dot)];
    if (s.terminal) {
      if (pos < j && tokens_[static_cast<std::size_t>(pos)] == s.id)
        return match_seq(r, dot + 1, pos + 1, j, children);
      return false;
    }
    auto it = ends_.find(key(s.id, pos));
    if (it == ends_.end()) return false;
    int tail = min_span(r, dot + 1);
    for (int e : it->second) {
      if (e > j - tail) break;
      if (dot + 1 == static_cast<int>(r.rhs.size()) && e != j) continue;
      Node child;
      try {
        child = build(s.id, pos, e);
      } catch (const Error&) {
        continue;
      }
      children.push_back(std::move(child));
      if (match_seq(r, dot + 1, e, j, children)) return true;
      children.pop_back();
    }
    return false;
  }

  void emit(const Node& n, std::vector<int>& out) const {
    out.push_back(n.rule);
    for (const Node& c : n.children) emit(c, out);
  }

  const Grammar& g_;
  std::vector<int> tokens_;
  int n_;
  int furthest_ = 0;
  std::vector<std::vector<Item>> sets_;
  std::vector<std::unordered_set<std::uint64_t>> seen_;
  std::unordered_map<std::uint64_t, std::vector<int>> ends_;
  std::unordered_set<std::uint64_t> in_progress_;
};

RuleSequence parse(const Grammar& g, const std::string& text) {
  ChartParser p(g, g.tokenize(text));
  return g.pad_sequence(p.run());
}

// ---------------------------------------------------------------------------

std::string generate(const Grammar& g, const std::vector<int>& indices) {
  std::vector<Symbol> stack;
  stack.push_back(Symbol{false, g.start_nt});
  std::vector<std::string> out;

  auto flush = [&]() {
    while (!stack.empty() && stack.back().terminal) {
      out.push_back(g.term_names[static_cast<std::size_t>(stack.back().id)]);
      stack.pop_back();
    }
  };

  for (std::size_t i = 0; i < indices.size(); ++i) {
    int idx = indices[i];
    if (idx < 1 || idx > g.total_rules())
      throw Error(Error::Code::invalid_sequence,
                  "rule index out of range at position " + std::to_string(i));
    flush();
    if (idx == g.padding_index) {
      if (!stack.empty())
        throw Error(Error::Code::invalid_sequence,
                    "padding at position " + std::to_string(i) +
                        " with nonterminals pending");
      continue;
    }
    if (stack.empty())
      throw Error(Error::Code::invalid_sequence,
                  "rule at position " + std::to_string(i) +
                      " after derivation finished");
    const ProductionRule& r = g.rule(idx);
    if (r.lhs != stack.back().id)
      throw Error(Error::Code::invalid_sequence,
                  "rule " + std::to_string(idx) + " does not expand " +
                      g.nt_names[static_cast<std::size_t>(stack.back().id)]);
    stack.pop_back();
    for (auto it = r.rhs.rbegin(); it != r.rhs.rend(); ++it) stack.push_back(*it);
  }
  flush();
  if (!stack.empty())
    throw Error(Error::Code::invalid_sequence, "derivation incomplete");

  std::string s;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i) s.push_back(' ');
    s += out[i];
  }
  return s;
}

std::string generate(const Grammar& g, const RuleSequence& seq) {
  return generate(g, seq.indices);
}

RuleSequence sample(const Grammar& g, std::mt19937_64& rng,
                    const SampleLimits& limits) {
  int cap = g.n_max;
  if (limits.max_length > 0) cap = std::min(cap, limits.max_length);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int attempt = 0; attempt < limits.max_retries; ++attempt) {
    std::vector<int> out;
    bool dead = false;
    // Explicit stack of (nonterminal, depth), leftmost first.
    std::vector<std::pair<int, int>> stack{{g.start_nt, 1}};
    while (!stack.empty()) {
      auto [nt, depth] = stack.back();
      stack.pop_back();
      if (depth > limits.max_depth ||
          static_cast<int>(out.size()) >= cap) {
        dead = true;
        break;
      }
      const std::vector<int>& cand = g.rules_for(nt);
      int pick = cand.front();
      if (g.probabilistic) {
        double u = unif(rng);
        double acc = 0.0;
        for (int ridx : cand) {
          acc += g.rule(ridx).prob;
          pick = ridx;
          if (u < acc) break;
        }
      } else if (cand.size() > 1) {
        std::uniform_int_distribution<std::size_t> d(0, cand.size() - 1);
        pick = cand[d(rng)];
      }
      out.push_back(pick);
      const ProductionRule& r = g.rule(pick);
      for (auto it = r.rhs.rbegin(); it != r.rhs.rend(); ++it)
        if (!it->terminal) stack.emplace_back(it->id, depth + 1);
    }
    if (!dead && static_cast<int>(out.size()) <= cap) return g.pad_sequence(out);
  }
  throw Error(Error::Code::sample_retries,
              "no admissible sample within " +
                  std::to_string(limits.max_retries) + " attempts");
}

OneHotMatrix encode_one_hot(const Grammar& g, const RuleSequence& seq) {
  if (static_cast<int>(seq.indices.size()) != g.n_max)
    throw Error(Error::Code::sequence_length,
                "sequence not padded to n_max");
  OneHotMatrix m = OneHotMatrix::Zero(g.n_max, g.total_rules());
  for (int i = 0; i < g.n_max; ++i) {
    int idx = seq.indices[static_cast<std::size_t>(i)];
    if (idx < 1 || idx > g.total_rules())
      throw Error(Error::Code::invalid_sequence,
                  "rule index out of range at row " + std::to_string(i));
    m(i, idx - 1) = 1.0;
  }
  return m;
}

RuleSequence decode_one_hot(const Grammar& g, const OneHotMatrix& m) {
  if (m.rows() != g.n_max || m.cols() != g.total_rules())
    throw Error(Error::Code::invalid_sequence, "one-hot shape mismatch");
  RuleSequence seq;
  seq.indices.resize(static_cast<std::size_t>(g.n_max));
  for (int i = 0; i < g.n_max; ++i) {
    int hot = -1;
    for (int c = 0; c < m.cols(); ++c) {
      double v = m(i, c);
      if (std::abs(v) <= 1e-9) continue;
      if (std::abs(v - 1.0) <= 1e-9 && hot < 0) {
        hot = c;
      } else {
        hot = -2;
        break;
      }
    }
    if (hot < 0)
      throw Error(Error::Code::invalid_sequence,
                  "row " + std::to_string(i) + " is not one-hot");
    seq.indices[static_cast<std::size_t>(i)] = hot + 1;
  }
  int n = 0;
  while (n < g.n_max &&
         seq.indices[static_cast<std::size_t>(n)] != g.padding_index)
    ++n;
  seq.n_rules = n;
  return seq;
}

std::vector<bool> valid_rule_mask(const Grammar& g,
                                  std::optional<int> stack_top_nt) {
  std::vector<bool> mask(static_cast<std::size_t>(g.total_rules()), false);
  if (!stack_top_nt.has_value()) {
    mask[static_cast<std::size_t>(g.padding_index - 1)] = true;
    return mask;
  }
  for (int ridx : g.rules_for(*stack_top_nt))
    mask[static_cast<std::size_t>(ridx - 1)] = true;
  return mask;
}

DerivationState::DerivationState(const Grammar& g) : g_(&g) {
  stack_.push_back(g.start_nt);
}

std::optional<int> DerivationState::top() const {
  if (stack_.empty()) return std::nullopt;
  return stack_.back();
}

int DerivationState::min_close_total() const {
  int total = 0;
  for (int nt : stack_) total += g_->min_close(nt);
  return total;
}

bool DerivationState::feasible(int index, int remaining) const {
  if (index == g_->padding_index) return stack_.empty();
  if (stack_.empty()) return false;
  const ProductionRule& r = g_->rule(index);
  if (r.lhs != stack_.back()) return false;
  int cost = min_close_total() - g_->min_close(stack_.back());
  for (const Symbol& s : r.rhs)
    if (!s.terminal) cost += g_->min_close(s.id);
  return cost <= remaining - 1;
}

void DerivationState::apply(int index) {
  if (index == g_->padding_index) {
    if (!stack_.empty())
      throw Error(Error::Code::invalid_sequence,
                  "padding applied with nonterminals pending");
    ++applied_;
    return;
  }
  if (stack_.empty())
    throw Error(Error::Code::invalid_sequence, "derivation already finished");
  const ProductionRule& r = g_->rule(index);
  if (r.lhs != stack_.back())
    throw Error(Error::Code::invalid_sequence,
                "rule " + std::to_string(index) + " does not expand stack top");
  stack_.pop_back();
  for (auto it = r.rhs.rbegin(); it != r.rhs.rend(); ++it)
    if (!it->terminal) stack_.push_back(it->id);
  ++applied_;
}

}  // namespace odisc
