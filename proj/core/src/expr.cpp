#include "odisc/expr.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace odisc {

namespace {

using Kind = ExprNode::Kind;
using Fun = ExprNode::Fun;

// --------------------------------------------------------------------------
// Expression lexer.

struct Tok {
  enum class Type { num, ident, op, end };
  Type type = Type::end;
  double num = 0.0;
  std::string text;
  std::size_t pos = 0;
};

std::vector<Tok> lex(const std::string& s) {
  std::vector<Tok> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Tok t;
    t.pos = i;
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < s.size() &&
         std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      std::size_t used = 0;
      t.type = Tok::Type::num;
      t.num = std::stod(s.substr(i), &used);
      t.text = s.substr(i, used);
      i += used;
    } else if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) ++j;
      t.type = Tok::Type::ident;
      t.text = s.substr(i, j - i);
      i = j;
    } else if (std::string("+-*/^(),").find(c) != std::string::npos) {
      t.type = Tok::Type::op;
      t.text = std::string(1, c);
      ++i;
    } else {
      throw Error(Error::Code::interpret,
                  "unexpected character '" + std::string(1, c) +
                      "' at position " + std::to_string(i));
    }
    out.push_back(std::move(t));
  }
  Tok end;
  end.pos = s.size();
  out.push_back(end);
  return out;
}

// --------------------------------------------------------------------------
// Precedence-climbing parser.

class ExprParser {
 public:
  explicit ExprParser(const std::string& text) : toks_(lex(text)) {}

  OdeExpr run() {
    OdeExpr e;
    e.root = parse_expr(0);
    expect_end();
    e.n_constants = n_constants_;
    e.order = node_order(e.root);
    return e;
  }

  static int node_order(const ExprNode& n) {
    int o = -1;
    if (n.kind == Kind::d1) o = 1;
    if (n.kind == Kind::d2) o = 2;
    if (n.kind == Kind::state_u) o = 0;
    for (const ExprNode& c : n.children) o = std::max(o, node_order(c));
    return std::max(o, 0);
  }

 private:
  const Tok& peek() const { return toks_[pos_]; }
  Tok take() { return toks_[pos_++]; }

  [[noreturn]] void fail(const std::string& what, const Tok& t) const {
    throw Error(Error::Code::interpret,
                what + " at position " + std::to_string(t.pos));
  }

  void expect_op(const std::string& op) {
    Tok t = take();
    if (t.type != Tok::Type::op || t.text != op)
      fail("expected '" + op + "'", t);
  }

  void expect_end() {
    if (peek().type != Tok::Type::end) fail("trailing input", peek());
  }

  static int bin_prec(const std::string& op) {
    if (op == "+" || op == "-") return 1;
    if (op == "*" || op == "/") return 2;
    if (op == "^") return 3;
    return -1;
  }

  ExprNode parse_expr(int min_prec) {
    ExprNode lhs = parse_unary();
    for (;;) {
      const Tok& t = peek();
      if (t.type != Tok::Type::op) break;
      int prec = bin_prec(t.text);
      if (prec < min_prec || prec < 1) break;
      std::string op = take().text;
      if (op == "^") {
        ExprNode ex = parse_unary();
        double expo;
        if (ex.kind == Kind::num) {
          expo = ex.value;
        } else if (ex.kind == Kind::neg && ex.children.size() == 1 &&
                   ex.children[0].kind == Kind::num) {
          expo = -ex.children[0].value;
        } else {
          fail("exponent must be a number", t);
        }
        ExprNode p;
        p.kind = Kind::pow;
        p.expo = expo;
        p.children.push_back(std::move(lhs));
        lhs = std::move(p);
        continue;
      }
      ExprNode rhs = parse_expr(prec + 1);
      ExprNode b;
      b.kind = op == "+"   ? Kind::add
               : op == "-" ? Kind::sub
               : op == "*" ? Kind::mul
                           : Kind::div;
      b.children.push_back(std::move(lhs));
      b.children.push_back(std::move(rhs));
      lhs = std::move(b);
    }
    return lhs;
  }

  ExprNode parse_unary() {
    const Tok& t = peek();
    if (t.type == Tok::Type::op && t.text == "-") {
      take();
      ExprNode n;
      n.kind = Kind::neg;
      n.children.push_back(parse_unary());
      return n;
    }
    return parse_atom();
  }

  ExprNode parse_diff() {
    // diff ( u , t ) or diff ( diff ( u , t ) , t )
    expect_op("(");
    ExprNode inner = parse_expr(0);
    expect_op(",");
    Tok v = take();
    if (v.type != Tok::Type::ident || v.text != "t")
      fail("derivative variable must be t", v);
    expect_op(")");
    ExprNode n;
    if (inner.kind == Kind::state_u) {
      n.kind = Kind::d1;
    } else if (inner.kind == Kind::d1) {
      n.kind = Kind::d2;
    } else {
      throw Error(Error::Code::arity,
                  "diff applies to u or diff(u,t) only");
    }
    return n;
  }

  ExprNode parse_atom() {
    Tok t = take();
    if (t.type == Tok::Type::num) {
      ExprNode n;
      n.kind = Kind::num;
      n.value = t.num;
      return n;
    }
    if (t.type == Tok::Type::op && t.text == "(") {
      ExprNode inner = parse_expr(0);
      expect_op(")");
      return inner;
    }
    if (t.type == Tok::Type::ident) {
      if (t.text == "C") {
        ExprNode n;
        n.kind = Kind::cplace;
        n.cidx = n_constants_++;
        return n;
      }
      if (t.text == "t") {
        ExprNode n;
        n.kind = Kind::var_t;
        return n;
      }
      if (t.text == "u") {
        ExprNode n;
        n.kind = Kind::state_u;
        return n;
      }
      if (t.text == "diff") return parse_diff();
      Fun f;
      if (t.text == "sin")
        f = Fun::sin;
      else if (t.text == "cos")
        f = Fun::cos;
      else if (t.text == "exp")
        f = Fun::exp;
      else if (t.text == "log")
        f = Fun::log;
      else
        fail("unknown identifier '" + t.text + "'", t);
      expect_op("(");
      ExprNode arg = parse_expr(0);
      expect_op(")");
      ExprNode n;
      n.kind = Kind::fun;
      n.fun = f;
      n.children.push_back(std::move(arg));
      return n;
    }
    fail("unexpected token '" + t.text + "'", t);
  }

  std::vector<Tok> toks_;
  std::size_t pos_ = 0;
  int n_constants_ = 0;
};

int precedence(Kind k) {
  switch (k) {
    case Kind::add:
    case Kind::sub:
      return 1;
    case Kind::mul:
    case Kind::div:
      return 2;
    case Kind::neg:
      return 2;
    case Kind::pow:
      return 3;
    default:
      return 9;
  }
}

std::string render_number(double v, int precision) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
    return buf;
  }
  return format_double(v, precision);
}

void render_node(const ExprNode& n, std::ostringstream& os, int precision);

void render_child(const ExprNode& c, std::ostringstream& os, int precision,
                  bool need_parens) {
  if (need_parens) {
    os << "( ";
    render_node(c, os, precision);
    os << " )";
  } else {
    render_node(c, os, precision);
  }
}

void render_node(const ExprNode& n, std::ostringstream& os, int precision) {
  int p = precedence(n.kind);
  switch (n.kind) {
    case Kind::add:
    case Kind::sub:
    case Kind::mul:
    case Kind::div: {
      const char* op = n.kind == Kind::add   ? "+"
                       : n.kind == Kind::sub ? "-"
                       : n.kind == Kind::mul ? "*"
                                             : "/";
      render_child(n.children[0], os, precision,
                   precedence(n.children[0].kind) < p);
      os << " " << op << " ";
      render_child(n.children[1], os, precision,
                   precedence(n.children[1].kind) <= p);
      break;
    }
    case Kind::neg:
      // Parens around any non-atom child, pow included: "- u ^ 2" would
      // reparse as (-u)^2.
      os << "- ";
      render_child(n.children[0], os, precision,
                   precedence(n.children[0].kind) <= 3);
      break;
    case Kind::pow:
      render_child(n.children[0], os, precision,
                   precedence(n.children[0].kind) <= p);
      os << " ^ " << render_number(n.expo, precision);
      break;
    case Kind::fun: {
      const char* f = n.fun == Fun::sin   ? "sin"
                      : n.fun == Fun::cos ? "cos"
                      : n.fun == Fun::exp ? "exp"
                                          : "log";
      os << f << " ( ";
      render_node(n.children[0], os, precision);
      os << " )";
      break;
    }
    case Kind::num:
      os << render_number(n.value, precision);
      break;
    case Kind::cplace:
      if (n.bound)
        os << render_number(n.value, precision);
      else
        os << "C";
      break;
    case Kind::var_t:
      os << "t";
      break;
    case Kind::state_u:
      os << "u";
      break;
    case Kind::d1:
      os << "diff ( u , t )";
      break;
    case Kind::d2:
      os << "diff ( diff ( u , t ) , t )";
      break;
  }
}

double eval_node(const ExprNode& n, double t, double u, double du, double ddu,
                 const double* consts) {
  switch (n.kind) {
    case Kind::add:
      return eval_node(n.children[0], t, u, du, ddu, consts) +
             eval_node(n.children[1], t, u, du, ddu, consts);
    case Kind::sub:
      return eval_node(n.children[0], t, u, du, ddu, consts) -
             eval_node(n.children[1], t, u, du, ddu, consts);
    case Kind::mul:
      return eval_node(n.children[0], t, u, du, ddu, consts) *
             eval_node(n.children[1], t, u, du, ddu, consts);
    case Kind::div:
      return eval_node(n.children[0], t, u, du, ddu, consts) /
             eval_node(n.children[1], t, u, du, ddu, consts);
    case Kind::pow: {
      double b = eval_node(n.children[0], t, u, du, ddu, consts);
      if (n.expo == std::floor(n.expo) && std::abs(n.expo) <= 16.0) {
        long long k = static_cast<long long>(n.expo);
        bool inv = k < 0;
        if (inv) k = -k;
        double r = 1.0;
        for (long long i = 0; i < k; ++i) r *= b;
        return inv ? 1.0 / r : r;
      }
      return std::pow(b, n.expo);
    }
    case Kind::neg:
      return -eval_node(n.children[0], t, u, du, ddu, consts);
    case Kind::fun: {
      double a = eval_node(n.children[0], t, u, du, ddu, consts);
      switch (n.fun) {
        case Fun::sin:
          return std::sin(a);
        case Fun::cos:
          return std::cos(a);
        case Fun::exp:
          return std::exp(a);
        case Fun::log:
          return std::log(a);
      }
      return std::numeric_limits<double>::quiet_NaN();
    }
    case Kind::num:
      return n.value;
    case Kind::cplace:
      if (n.bound) return n.value;
      if (consts) return consts[n.cidx];
      throw Error(Error::Code::interpret, "unbound constant in evaluation");
    case Kind::var_t:
      return t;
    case Kind::state_u:
      return u;
    case Kind::d1:
      return du;
    case Kind::d2:
      return ddu;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

void bind_node(ExprNode& n, const std::vector<double>& values) {
  if (n.kind == Kind::cplace) {
    n.bound = true;
    n.value = values[static_cast<std::size_t>(n.cidx)];
  }
  for (ExprNode& c : n.children) bind_node(c, values);
}

// --------------------------------------------------------------------------
// Term decomposition used by normalization and the trivial filter.

struct Term {
  double sign = 1.0;
  const ExprNode* node = nullptr;
};

void flatten_terms(const ExprNode& n, double sign, std::vector<Term>& out) {
  if (n.kind == Kind::add) {
    flatten_terms(n.children[0], sign, out);
    flatten_terms(n.children[1], sign, out);
  } else if (n.kind == Kind::sub) {
    flatten_terms(n.children[0], sign, out);
    flatten_terms(n.children[1], -sign, out);
  } else if (n.kind == Kind::neg) {
    flatten_terms(n.children[0], -sign, out);
  } else {
    out.push_back(Term{sign, &n});
  }
}

int term_order(const ExprNode& n) {
  int o = -1;
  if (n.kind == Kind::d2) return 2;
  if (n.kind == Kind::d1) o = std::max(o, 1);
  if (n.kind == Kind::state_u) o = std::max(o, 0);
  for (const ExprNode& c : n.children) o = std::max(o, term_order(c));
  return o;
}

bool numeric_only(const ExprNode& n) {
  switch (n.kind) {
    case Kind::num:
      return true;
    case Kind::cplace:
      return n.bound;
    case Kind::var_t:
    case Kind::state_u:
    case Kind::d1:
    case Kind::d2:
      return false;
    default:
      for (const ExprNode& c : n.children)
        if (!numeric_only(c)) return false;
      return true;
  }
}

// Accumulates the numeric factors (and unbound placeholder factors) of a
// product/quotient chain.
void collect_factors(const ExprNode& n, double& lit, std::vector<int>& cf) {
  switch (n.kind) {
    case Kind::mul:
      collect_factors(n.children[0], lit, cf);
      collect_factors(n.children[1], lit, cf);
      return;
    case Kind::div:
      collect_factors(n.children[0], lit, cf);
      if (numeric_only(n.children[1]))
        lit /= eval_node(n.children[1], 0, 0, 0, 0, nullptr);
      return;
    case Kind::neg:
      lit = -lit;
      collect_factors(n.children[0], lit, cf);
      return;
    case Kind::num:
      lit *= n.value;
      return;
    case Kind::cplace:
      if (n.bound)
        lit *= n.value;
      else
        cf.push_back(n.cidx);
      return;
    default:
      if (numeric_only(n)) lit *= eval_node(n, 0, 0, 0, 0, nullptr);
      return;
  }
}

const ExprNode* leading_term(const ExprNode& root, double* sign_out) {
  std::vector<Term> terms;
  flatten_terms(root, 1.0, terms);
  int best_order = -2;
  for (const Term& t : terms) best_order = std::max(best_order, term_order(*t.node));
  for (const Term& t : terms) {
    if (term_order(*t.node) == best_order) {
      if (sign_out) *sign_out = t.sign;
      return t.node;
    }
  }
  return nullptr;
}

// Divides one additive term by s in place: rescales its first numeric
// factor, or wraps the term in (1/s) * term when it has none.
void divide_term(ExprNode& n, double s, bool& done) {
  if (done) return;
  switch (n.kind) {
    case Kind::mul:
      divide_term(n.children[0], s, done);
      if (!done) divide_term(n.children[1], s, done);
      return;
    case Kind::div:
      divide_term(n.children[0], s, done);
      if (!done && n.children[1].kind == Kind::num) {
        n.children[1].value *= s;
        done = true;
      }
      return;
    case Kind::neg:
      divide_term(n.children[0], s, done);
      return;
    case Kind::num:
      n.value /= s;
      done = true;
      return;
    case Kind::cplace:
      if (n.bound) {
        n.value /= s;
        done = true;
      }
      return;
    default:
      return;
  }
}

// Drops factors that became exactly 1 after rescaling: 1 * x -> x, x / 1 -> x.
void drop_unit_factors(ExprNode& n) {
  for (ExprNode& c : n.children) drop_unit_factors(c);
  if (n.kind == Kind::mul) {
    if (n.children[0].kind == Kind::num && n.children[0].value == 1.0) {
      ExprNode keep = std::move(n.children[1]);
      n = std::move(keep);
    } else if (n.children[1].kind == Kind::num && n.children[1].value == 1.0) {
      ExprNode keep = std::move(n.children[0]);
      n = std::move(keep);
    }
  } else if (n.kind == Kind::div && n.children[1].kind == Kind::num &&
             n.children[1].value == 1.0) {
    ExprNode keep = std::move(n.children[0]);
    n = std::move(keep);
  }
}

int count_nodes(const ExprNode& n) {
  switch (n.kind) {
    case Kind::num:
    case Kind::cplace:
    case Kind::var_t:
      return 1;
    case Kind::state_u:
      return 2;
    case Kind::d1:
      return 6;
    case Kind::d2:
      return 10;
    case Kind::pow:
      return 2 + count_nodes(n.children[0]);  // operator plus exponent
    default: {
      int c = 1;
      for (const ExprNode& ch : n.children) c += count_nodes(ch);
      return c;
    }
  }
}

nlohmann::json node_to_json(const ExprNode& n) {
  nlohmann::json j;
  switch (n.kind) {
    case Kind::add: j["op"] = "add"; break;
    case Kind::sub: j["op"] = "sub"; break;
    case Kind::mul: j["op"] = "mul"; break;
    case Kind::div: j["op"] = "div"; break;
    case Kind::pow: j["op"] = "pow"; j["exp"] = n.expo; break;
    case Kind::neg: j["op"] = "neg"; break;
    case Kind::fun:
      j["op"] = "fun";
      j["fun"] = n.fun == Fun::sin   ? "sin"
                 : n.fun == Fun::cos ? "cos"
                 : n.fun == Fun::exp ? "exp"
                                     : "log";
      break;
    case Kind::num: j["op"] = "num"; j["value"] = n.value; break;
    case Kind::cplace:
      j["op"] = "const";
      j["index"] = n.cidx;
      if (n.bound) j["value"] = n.value;
      break;
    case Kind::var_t: j["op"] = "t"; break;
    case Kind::state_u: j["op"] = "u"; break;
    case Kind::d1: j["op"] = "du"; break;
    case Kind::d2: j["op"] = "ddu"; break;
  }
  if (!n.children.empty()) {
    nlohmann::json args = nlohmann::json::array();
    for (const ExprNode& c : n.children) args.push_back(node_to_json(c));
    j["args"] = args;
  }
  return j;
}

ExprNode node_from_json(const nlohmann::json& j) {
  ExprNode n;
  std::string op = j.at("op").get<std::string>();
  if (op == "add") n.kind = Kind::add;
  else if (op == "sub") n.kind = Kind::sub;
  else if (op == "mul") n.kind = Kind::mul;
  else if (op == "div") n.kind = Kind::div;
  else if (op == "neg") n.kind = Kind::neg;
  else if (op == "pow") { n.kind = Kind::pow; n.expo = j.at("exp").get<double>(); }
  else if (op == "fun") {
    n.kind = Kind::fun;
    std::string f = j.at("fun").get<std::string>();
    n.fun = f == "sin" ? Fun::sin : f == "cos" ? Fun::cos : f == "exp" ? Fun::exp : Fun::log;
    if (f != "sin" && f != "cos" && f != "exp" && f != "log")
      throw Error(Error::Code::interpret, "bad function in expression json");
  } else if (op == "num") { n.kind = Kind::num; n.value = j.at("value").get<double>(); }
  else if (op == "const") {
    n.kind = Kind::cplace;
    n.cidx = j.at("index").get<int>();
    if (j.contains("value")) { n.bound = true; n.value = j.at("value").get<double>(); }
  } else if (op == "t") n.kind = Kind::var_t;
  else if (op == "u") n.kind = Kind::state_u;
  else if (op == "du") n.kind = Kind::d1;
  else if (op == "ddu") n.kind = Kind::d2;
  else throw Error(Error::Code::interpret, "bad op in expression json: " + op);

  if (j.contains("args"))
    for (const auto& a : j.at("args")) n.children.push_back(node_from_json(a));
  return n;
}

int max_const_index(const ExprNode& n) {
  int m = -1;
  if (n.kind == Kind::cplace) m = n.cidx;
  for (const ExprNode& c : n.children) m = std::max(m, max_const_index(c));
  return m;
}

// Structural affinity in the given derivative kind.
enum class Aff { absent, linear, nonlinear };

Aff affinity(const ExprNode& n, Kind top) {
  if (n.kind == top) return Aff::linear;
  switch (n.kind) {
    case Kind::add:
    case Kind::sub: {
      Aff a = affinity(n.children[0], top);
      Aff b = affinity(n.children[1], top);
      if (a == Aff::nonlinear || b == Aff::nonlinear) return Aff::nonlinear;
      if (a == Aff::linear || b == Aff::linear) return Aff::linear;
      return Aff::absent;
    }
    case Kind::mul: {
      Aff a = affinity(n.children[0], top);
      Aff b = affinity(n.children[1], top);
      if (a == Aff::nonlinear || b == Aff::nonlinear) return Aff::nonlinear;
      if (a == Aff::linear && b == Aff::linear) return Aff::nonlinear;
      if (a == Aff::linear || b == Aff::linear) return Aff::linear;
      return Aff::absent;
    }
    case Kind::div: {
      Aff a = affinity(n.children[0], top);
      Aff b = affinity(n.children[1], top);
      if (b != Aff::absent) return Aff::nonlinear;
      return a;
    }
    case Kind::neg:
      return affinity(n.children[0], top);
    case Kind::pow: {
      Aff a = affinity(n.children[0], top);
      if (a == Aff::absent) return Aff::absent;
      if (a == Aff::linear && n.expo == 1.0) return Aff::linear;
      return Aff::nonlinear;
    }
    case Kind::fun: {
      Aff a = affinity(n.children[0], top);
      return a == Aff::absent ? Aff::absent : Aff::nonlinear;
    }
    default:
      return Aff::absent;
  }
}

}  // namespace

// --------------------------------------------------------------------------

OdeExpr interpret(const std::string& text) { return ExprParser(text).run(); }

std::string render(const OdeExpr& e, int precision) {
  std::ostringstream os;
  render_node(e.root, os, precision);
  return os.str();
}

OdeExpr bind_constants(const OdeExpr& e, const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != e.n_constants)
    throw Error(Error::Code::arity,
                "expected " + std::to_string(e.n_constants) + " constants, got " +
                    std::to_string(values.size()));
  OdeExpr out = e;
  bind_node(out.root, values);
  return out;
}

double eval(const OdeExpr& e, double t, double u, double du, double ddu,
            const double* consts) {
  return eval_node(e.root, t, u, du, ddu, consts);
}

ResidualResult eval_residual(const OdeExpr& e, const Trajectory& traj,
                             const ForceFn& force) {
  if (e.order >= 1 && !traj.has_du())
    throw Error(Error::Code::missing_channel, "trajectory lacks du channel");
  if (e.order >= 2 && !traj.has_ddu())
    throw Error(Error::Code::missing_channel, "trajectory lacks ddu channel");

  ResidualResult out;
  Eigen::Index n = traj.size();
  out.residuals.resize(n);
  out.finite = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    double r = eval_node(e.root, traj.t[i], traj.u[i],
                         traj.has_du() ? traj.du[i] : 0.0,
                         traj.has_ddu() ? traj.ddu[i] : 0.0, nullptr);
    if (force) r -= force(traj.t[i]);
    out.residuals[i] = r;
    if (!std::isfinite(r)) out.finite = false;
  }
  out.l_de = out.finite ? std::sqrt(out.residuals.squaredNorm() /
                                    static_cast<double>(n))
                        : std::numeric_limits<double>::infinity();
  return out;
}

double LeadingScale::value(const double* consts) const {
  double v = literal;
  for (int c : const_factors) {
    if (!consts)
      throw Error(Error::Code::interpret, "leading scale needs constants");
    v *= consts[c];
  }
  return v;
}

LeadingScale leading_scale(const OdeExpr& e) {
  LeadingScale s;
  double sign = 1.0;
  const ExprNode* lead = leading_term(e.root, &sign);
  if (!lead) {
    s.degenerate = true;
    return s;
  }
  s.literal = sign;
  collect_factors(*lead, s.literal, s.const_factors);
  s.degenerate = s.literal == 0.0;
  return s;
}

OdeExpr normalize_highest_derivative(const OdeExpr& e) {
  LeadingScale s = leading_scale(e);
  if (!s.const_factors.empty())
    throw Error(Error::Code::interpret,
                "normalization requires bound constants");
  if (s.degenerate || !std::isfinite(s.literal))
    throw Error(Error::Code::degenerate,
                "highest-derivative coefficient is zero");
  if (s.literal == 1.0) {
    OdeExpr out = e;
    drop_unit_factors(out.root);
    return out;
  }

  std::vector<Term> terms;
  flatten_terms(e.root, 1.0, terms);
  std::vector<std::pair<double, ExprNode>> scaled;
  for (const Term& t : terms) {
    ExprNode n = *t.node;
    bool done = false;
    divide_term(n, s.literal, done);
    if (!done) {
      ExprNode wrap;
      wrap.kind = Kind::mul;
      ExprNode k;
      k.kind = Kind::num;
      k.value = 1.0 / s.literal;
      wrap.children.push_back(std::move(k));
      wrap.children.push_back(std::move(n));
      n = std::move(wrap);
    }
    scaled.emplace_back(t.sign, std::move(n));
  }

  OdeExpr out = e;
  ExprNode acc;
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    auto& [sign, node] = scaled[i];
    if (i == 0) {
      if (sign < 0) {
        ExprNode neg;
        neg.kind = Kind::neg;
        neg.children.push_back(std::move(node));
        acc = std::move(neg);
      } else {
        acc = std::move(node);
      }
      continue;
    }
    ExprNode bin;
    bin.kind = sign < 0 ? Kind::sub : Kind::add;
    bin.children.push_back(std::move(acc));
    bin.children.push_back(std::move(node));
    acc = std::move(bin);
  }
  out.root = std::move(acc);
  drop_unit_factors(out.root);
  return out;
}

int complexity(const OdeExpr& e) { return count_nodes(e.root); }

const std::vector<TrivialProbe>& default_trivial_probes() {
  static const std::vector<TrivialProbe> probes = {
      {"t", [](double t) { return t; }, [](double) { return 1.0; },
       [](double) { return 0.0; }},
      {"-2.5t", [](double t) { return -2.5 * t; }, [](double) { return -2.5; },
       [](double) { return 0.0; }},
      {"sin(3t)", [](double t) { return std::sin(3 * t); },
       [](double t) { return 3 * std::cos(3 * t); },
       [](double t) { return -9 * std::sin(3 * t); }},
      {"2cos(t/4)+t/3",
       [](double t) { return 2 * std::cos(t / 4) + t / 3; },
       [](double t) { return -0.5 * std::sin(t / 4) + 1.0 / 3.0; },
       [](double t) { return -0.125 * std::cos(t / 4); }},
  };
  return probes;
}

bool is_trivial(const OdeExpr& e, const ForceFn& force,
                const TrivialFilterConfig& cfg) {
  LeadingScale ls = leading_scale(e);
  double scale = 1.0;
  if (!ls.degenerate && ls.const_factors.empty() && std::isfinite(ls.literal))
    scale = ls.literal;

  const auto& probes = default_trivial_probes();
  double acc = 0.0;
  for (const TrivialProbe& p : probes) {
    double mean_abs = 0.0;
    for (int i = 0; i < cfg.n_points; ++i) {
      double t = cfg.t0 + (cfg.t1 - cfg.t0) * i /
                              static_cast<double>(cfg.n_points - 1);
      double r = eval_node(e.root, t, p.u(t), p.du(t), p.ddu(t), nullptr);
      if (force) r -= force(t);
      r /= scale;
      if (!std::isfinite(r)) return false;
      mean_abs += std::abs(r);
    }
    acc += mean_abs / cfg.n_points;
  }
  return acc / static_cast<double>(probes.size()) <= cfg.eps;
}

std::string expr_to_json(const OdeExpr& e) {
  nlohmann::json j;
  j["ast"] = node_to_json(e.root);
  j["order"] = e.order;
  j["n_constants"] = e.n_constants;
  return j.dump();
}

OdeExpr expr_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  OdeExpr e;
  e.root = node_from_json(j.at("ast"));
  e.order = j.at("order").get<int>();
  e.n_constants = j.at("n_constants").get<int>();
  int maxc = max_const_index(e.root);
  if (maxc + 1 > e.n_constants) e.n_constants = maxc + 1;
  return e;
}

// --------------------------------------------------------------------------

CompiledResidual::CompiledResidual(const OdeExpr& e)
    : scale_(leading_scale(e)),
      order_(e.order),
      n_constants_(e.n_constants) {
  // Post-order flattening; children are pushed before their parent so
  // evaluation is a single stack pass.
  struct Frame {
    const ExprNode* node;
    std::size_t next_child;
  };
  std::vector<Frame> st{{&e.root, 0}};
  while (!st.empty()) {
    Frame& f = st.back();
    if (f.next_child < f.node->children.size()) {
      const ExprNode* c = &f.node->children[f.next_child++];
      st.push_back(Frame{c, 0});
      continue;
    }
    const ExprNode& n = *f.node;
    Op op;
    op.kind = n.kind;
    op.fun = n.fun;
    op.imm = n.value;
    op.cidx = n.kind == ExprNode::Kind::cplace && !n.bound ? n.cidx : -1;
    op.iexp = 9999;
    if (n.kind == ExprNode::Kind::pow) {
      op.imm = n.expo;
      if (n.expo == std::floor(n.expo) && std::abs(n.expo) <= 16.0)
        op.iexp = static_cast<int>(n.expo);
    }
    ops_.push_back(op);
    st.pop_back();
  }
  stack_.resize(ops_.size() + 1);

  Kind top = order_ >= 2 ? Kind::d2 : Kind::d1;
  affine_ = order_ >= 1 && affinity(e.root, top) != Aff::nonlinear;
}

double CompiledResidual::eval_point(double t, double u, double du, double ddu,
                                    const double* consts) const {
  std::size_t sp = 0;
  double* s = stack_.data();
  for (const Op& op : ops_) {
    switch (op.kind) {
      case Kind::add:
        s[sp - 2] = s[sp - 2] + s[sp - 1];
        --sp;
        break;
      case Kind::sub:
        s[sp - 2] = s[sp - 2] - s[sp - 1];
        --sp;
        break;
      case Kind::mul:
        s[sp - 2] = s[sp - 2] * s[sp - 1];
        --sp;
        break;
      case Kind::div:
        s[sp - 2] = s[sp - 2] / s[sp - 1];
        --sp;
        break;
      case Kind::neg:
        s[sp - 1] = -s[sp - 1];
        break;
      case Kind::pow: {
        double b = s[sp - 1];
        if (op.iexp != 9999) {
          int k = op.iexp < 0 ? -op.iexp : op.iexp;
          double r = 1.0;
          for (int i = 0; i < k; ++i) r *= b;
          s[sp - 1] = op.iexp < 0 ? 1.0 / r : r;
        } else {
          s[sp - 1] = std::pow(b, op.imm);
        }
        break;
      }
      case Kind::fun:
        switch (op.fun) {
          case Fun::sin: s[sp - 1] = std::sin(s[sp - 1]); break;
          case Fun::cos: s[sp - 1] = std::cos(s[sp - 1]); break;
          case Fun::exp: s[sp - 1] = std::exp(s[sp - 1]); break;
          case Fun::log: s[sp - 1] = std::log(s[sp - 1]); break;
        }
        break;
      case Kind::num:
        s[sp++] = op.imm;
        break;
      case Kind::cplace:
        s[sp++] = op.cidx >= 0 ? consts[op.cidx] : op.imm;
        break;
      case Kind::var_t:
        s[sp++] = t;
        break;
      case Kind::state_u:
        s[sp++] = u;
        break;
      case Kind::d1:
        s[sp++] = du;
        break;
      case Kind::d2:
        s[sp++] = ddu;
        break;
    }
  }
  return s[0];
}

}  // namespace odisc
