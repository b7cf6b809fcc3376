/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <utility>

namespace charflow {
namespace detail {

enum class Kind {
  Constant,
  StateVar,
  ControlVar,
  TimeVar,
  Add,
  Sub,
  Mul,
  Div,
  Pow,
  Neg,
  Sin,
  Cos,
  Exp,
  Log,
  Sqrt,
  Abs,
  Tanh,
  Min,
  Max,
  // Internal 4-ary node used by derivatives of abs/min/max:
  // sel(p, q, a, b) evaluates a when p <= q, else b. Printable and
  // re-parseable so derivative trees still round-trip.
  Select,
};

struct ExprNode {
  Kind kind;
  double value = 0.0;  // Constant
  int index = -1;      // StateVar / ControlVar
  std::shared_ptr<const ExprNode> a, b, c, d;
};

using NodePtr = std::shared_ptr<const ExprNode>;

namespace {

std::shared_ptr<ExprNode> make(Kind k) {
  auto n = std::make_shared<ExprNode>();
  n->kind = k;
  return n;
}

NodePtr make_const(double v) {
  auto n = make(Kind::Constant);
  n->value = v;
  return n;
}

bool is_const(const NodePtr& n, double v) {
  return n->kind == Kind::Constant && n->value == v;
}

bool is_any_const(const NodePtr& n) { return n->kind == Kind::Constant; }

std::string print(const ExprNode* n);

[[noreturn]] void fault(const ExprNode* n, const std::string& reason) {
  throw EvalError("domain fault: " + reason + " in subexpression '" + print(n) + "'");
}

double check_finite(double v, const ExprNode* n) {
  if (!std::isfinite(v)) fault(n, "non-finite result");
  return v;
}

double evaluate(const ExprNode* n, const EvalEnv& env) {
  switch (n->kind) {
    case Kind::Constant:
      return n->value;
    case Kind::StateVar:
      if (n->index >= env.x.size()) fault(n, "state vector too short");
      return env.x[n->index];
    case Kind::ControlVar:
      if (n->index >= env.u.size()) fault(n, "control vector too short");
      return env.u[n->index];
    case Kind::TimeVar:
      return env.t;
    case Kind::Add:
      return check_finite(evaluate(n->a.get(), env) + evaluate(n->b.get(), env), n);
    case Kind::Sub:
      return check_finite(evaluate(n->a.get(), env) - evaluate(n->b.get(), env), n);
    case Kind::Mul:
      return check_finite(evaluate(n->a.get(), env) * evaluate(n->b.get(), env), n);
    case Kind::Div: {
      const double den = evaluate(n->b.get(), env);
      if (den == 0.0) fault(n, "division by zero");
      return check_finite(evaluate(n->a.get(), env) / den, n);
    }
    case Kind::Pow:
      return check_finite(std::pow(evaluate(n->a.get(), env), evaluate(n->b.get(), env)), n);
    case Kind::Neg:
      return -evaluate(n->a.get(), env);
    case Kind::Sin:
      return std::sin(evaluate(n->a.get(), env));
    case Kind::Cos:
      return std::cos(evaluate(n->a.get(), env));
    case Kind::Exp:
      return check_finite(std::exp(evaluate(n->a.get(), env)), n);
    case Kind::Log: {
      const double arg = evaluate(n->a.get(), env);
      if (arg <= 0.0) fault(n, "log of non-positive argument");
      return check_finite(std::log(arg), n);
    }
    case Kind::Sqrt: {
      const double arg = evaluate(n->a.get(), env);
      if (arg < 0.0) fault(n, "sqrt of negative argument");
      return std::sqrt(arg);
    }
    case Kind::Abs:
      return std::abs(evaluate(n->a.get(), env));
    case Kind::Tanh:
      return std::tanh(evaluate(n->a.get(), env));
    case Kind::Min:
      return std::min(evaluate(n->a.get(), env), evaluate(n->b.get(), env));
    case Kind::Max:
      return std::max(evaluate(n->a.get(), env), evaluate(n->b.get(), env));
    case Kind::Select:
      // Lazy in the untaken branch so its domain faults do not surface.
      return evaluate(n->a.get(), env) <= evaluate(n->b.get(), env)
                 ? evaluate(n->c.get(), env)
                 : evaluate(n->d.get(), env);
  }
  throw EvalError("corrupt expression node");
}

std::string fmt_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

std::string print(const ExprNode* n) {
  switch (n->kind) {
    case Kind::Constant:
      return fmt_number(n->value);
    case Kind::StateVar:
      return "x" + std::to_string(n->index);
    case Kind::ControlVar:
      return "u" + std::to_string(n->index);
    case Kind::TimeVar:
      return "t";
    case Kind::Add:
      return "(" + print(n->a.get()) + "+" + print(n->b.get()) + ")";
    case Kind::Sub:
      return "(" + print(n->a.get()) + "-" + print(n->b.get()) + ")";
    case Kind::Mul:
      return "(" + print(n->a.get()) + "*" + print(n->b.get()) + ")";
    case Kind::Div:
      return "(" + print(n->a.get()) + "/" + print(n->b.get()) + ")";
    case Kind::Pow:
      return "(" + print(n->a.get()) + "^" + print(n->b.get()) + ")";
    case Kind::Neg:
      return "(-" + print(n->a.get()) + ")";
    case Kind::Sin:
      return "sin(" + print(n->a.get()) + ")";
    case Kind::Cos:
      return "cos(" + print(n->a.get()) + ")";
    case Kind::Exp:
      return "exp(" + print(n->a.get()) + ")";
    case Kind::Log:
      return "log(" + print(n->a.get()) + ")";
    case Kind::Sqrt:
      return "sqrt(" + print(n->a.get()) + ")";
    case Kind::Abs:
      return "abs(" + print(n->a.get()) + ")";
    case Kind::Tanh:
      return "tanh(" + print(n->a.get()) + ")";
    case Kind::Min:
      return "min(" + print(n->a.get()) + "," + print(n->b.get()) + ")";
    case Kind::Max:
      return "max(" + print(n->a.get()) + "," + print(n->b.get()) + ")";
    case Kind::Select:
      return "sel(" + print(n->a.get()) + "," + print(n->b.get()) + "," +
             print(n->c.get()) + "," + print(n->d.get()) + ")";
  }
  return "?";
}

bool structurally_equal(const ExprNode* a, const ExprNode* b) {
  if (a == b) return true;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case Kind::Constant:
      return a->value == b->value;
    case Kind::StateVar:
    case Kind::ControlVar:
      return a->index == b->index;
    case Kind::TimeVar:
      return true;
    default:
      break;
  }
  if (static_cast<bool>(a->a) != static_cast<bool>(b->a)) return false;
  if (a->a && !structurally_equal(a->a.get(), b->a.get())) return false;
  if (static_cast<bool>(a->b) != static_cast<bool>(b->b)) return false;
  if (a->b && !structurally_equal(a->b.get(), b->b.get())) return false;
  if (static_cast<bool>(a->c) != static_cast<bool>(b->c)) return false;
  if (a->c && !structurally_equal(a->c.get(), b->c.get())) return false;
  if (static_cast<bool>(a->d) != static_cast<bool>(b->d)) return false;
  if (a->d && !structurally_equal(a->d.get(), b->d.get())) return false;
  return true;
}

// --- folding builders -------------------------------------------------------
//
// Constant folding only: constant subtrees collapse to literals, and the
// additive/multiplicative identities are applied so derivative trees stay
// manageable. A constant subtree whose evaluation faults (e.g. 1/0) is kept
// unfolded; the fault then surfaces at eval time per the eval contract.

NodePtr binary(Kind k, NodePtr a, NodePtr b);

NodePtr try_fold_const(NodePtr n) {
  bool all_const = true;
  for (const NodePtr* child : {&n->a, &n->b, &n->c, &n->d}) {
    if (*child && !is_any_const(*child)) all_const = false;
  }
  if (!all_const || !n->a) return n;
  try {
    EvalEnv env;
    const double v = evaluate(n.get(), env);
    if (std::isfinite(v)) return make_const(v);
  } catch (const EvalError&) {
  }
  return n;
}

NodePtr unary(Kind k, NodePtr a) {
  if (k == Kind::Neg) {
    if (a->kind == Kind::Constant) return make_const(-a->value);
    if (a->kind == Kind::Neg) return a->a;
  }
  auto n = make(k);
  n->a = std::move(a);
  return try_fold_const(n);
}

NodePtr binary(Kind k, NodePtr a, NodePtr b) {
  switch (k) {
    case Kind::Add:
      if (is_const(a, 0.0)) return b;
      if (is_const(b, 0.0)) return a;
      break;
    case Kind::Sub:
      if (is_const(b, 0.0)) return a;
      if (is_const(a, 0.0)) return unary(Kind::Neg, std::move(b));
      break;
    case Kind::Mul:
      if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
      if (is_const(a, 1.0)) return b;
      if (is_const(b, 1.0)) return a;
      break;
    case Kind::Div:
      if (is_const(b, 1.0)) return a;
      if (is_const(a, 0.0) && !is_const(b, 0.0)) return make_const(0.0);
      break;
    case Kind::Pow:
      if (is_const(b, 1.0)) return a;
      if (is_const(b, 0.0)) return make_const(1.0);
      break;
    default:
      break;
  }
  auto n = make(k);
  n->a = std::move(a);
  n->b = std::move(b);
  return try_fold_const(n);
}

NodePtr select(NodePtr p, NodePtr q, NodePtr yes, NodePtr no) {
  if (structurally_equal(yes.get(), no.get())) return yes;
  if (is_any_const(p) && is_any_const(q)) return p->value <= q->value ? yes : no;
  auto n = make(Kind::Select);
  n->a = std::move(p);
  n->b = std::move(q);
  n->c = std::move(yes);
  n->d = std::move(no);
  return n;
}

NodePtr derivative(const NodePtr& n, VarRef var) {
  const auto d = [&var](const NodePtr& e) { return derivative(e, var); };
  switch (n->kind) {
    case Kind::Constant:
      return make_const(0.0);
    case Kind::StateVar:
      return make_const(var.kind == VarKind::State && var.index == n->index ? 1.0 : 0.0);
    case Kind::ControlVar:
      return make_const(var.kind == VarKind::Control && var.index == n->index ? 1.0 : 0.0);
    case Kind::TimeVar:
      return make_const(var.kind == VarKind::Time ? 1.0 : 0.0);
    case Kind::Add:
      return binary(Kind::Add, d(n->a), d(n->b));
    case Kind::Sub:
      return binary(Kind::Sub, d(n->a), d(n->b));
    case Kind::Mul:
      return binary(Kind::Add, binary(Kind::Mul, d(n->a), n->b),
                    binary(Kind::Mul, n->a, d(n->b)));
    case Kind::Div:
      // (a'b - ab') / b^2
      return binary(Kind::Div,
                    binary(Kind::Sub, binary(Kind::Mul, d(n->a), n->b),
                           binary(Kind::Mul, n->a, d(n->b))),
                    binary(Kind::Mul, n->b, n->b));
    case Kind::Pow:
      if (is_any_const(n->b)) {
        // c * a^(c-1) * a'  (avoids log, valid a.e. for integer exponents)
        return binary(Kind::Mul,
                      binary(Kind::Mul, n->b,
                             binary(Kind::Pow, n->a, make_const(n->b->value - 1.0))),
                      d(n->a));
      }
      // a^b * (b' log a + b a'/a)
      return binary(
          Kind::Mul, binary(Kind::Pow, n->a, n->b),
          binary(Kind::Add, binary(Kind::Mul, d(n->b), unary(Kind::Log, n->a)),
                 binary(Kind::Div, binary(Kind::Mul, n->b, d(n->a)), n->a)));
    case Kind::Neg:
      return unary(Kind::Neg, d(n->a));
    case Kind::Sin:
      return binary(Kind::Mul, unary(Kind::Cos, n->a), d(n->a));
    case Kind::Cos:
      return unary(Kind::Neg, binary(Kind::Mul, unary(Kind::Sin, n->a), d(n->a)));
    case Kind::Exp:
      return binary(Kind::Mul, unary(Kind::Exp, n->a), d(n->a));
    case Kind::Log:
      return binary(Kind::Div, d(n->a), n->a);
    case Kind::Sqrt:
      return binary(Kind::Div, d(n->a),
                    binary(Kind::Mul, make_const(2.0), unary(Kind::Sqrt, n->a)));
    case Kind::Abs:
      // a.e. rule, tie at 0 toward the right branch: 0 <= a -> a'
      return select(make_const(0.0), n->a, d(n->a), unary(Kind::Neg, d(n->a)));
    case Kind::Tanh: {
      auto th = unary(Kind::Tanh, n->a);
      return binary(Kind::Mul,
                    binary(Kind::Sub, make_const(1.0), binary(Kind::Mul, th, th)),
                    d(n->a));
    }
    case Kind::Min:
      // tie toward the first argument
      return select(n->a, n->b, d(n->a), d(n->b));
    case Kind::Max:
      return select(n->b, n->a, d(n->a), d(n->b));
    case Kind::Select:
      return select(n->a, n->b, d(n->c), d(n->d));
  }
  throw Error("corrupt expression node in derivative");
}

void scan(const ExprNode* n, bool* time, int* max_x, int* max_u) {
  switch (n->kind) {
    case Kind::TimeVar:
      *time = true;
      break;
    case Kind::StateVar:
      *max_x = std::max(*max_x, n->index);
      break;
    case Kind::ControlVar:
      *max_u = std::max(*max_u, n->index);
      break;
    default:
      break;
  }
  for (const NodePtr* child : {&n->a, &n->b, &n->c, &n->d})
    if (*child) scan(child->get(), time, max_x, max_u);
}

// --- parser -----------------------------------------------------------------

class Parser {
 public:
  Parser(std::string_view text, Dims dims) : text_(text), dims_(dims) {}

  NodePtr run() {
    if (text_.empty()) throw ParseError("empty expression", 0);
    NodePtr e = additive();
    skip_space();
    if (pos_ != text_.size()) throw ParseError("unexpected trailing input", pos_);
    return e;
  }

 private:
  std::string_view text_;
  Dims dims_;
  std::size_t pos_ = 0;

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool accept(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) throw ParseError(std::string("expected '") + c + "'", pos_);
  }

  char peek() {
    skip_space();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  NodePtr additive() {
    NodePtr e = multiplicative();
    for (;;) {
      if (accept('+'))
        e = binary(Kind::Add, e, multiplicative());
      else if (accept('-'))
        e = binary(Kind::Sub, e, multiplicative());
      else
        return e;
    }
  }

  NodePtr multiplicative() {
    NodePtr e = unary_expr();
    for (;;) {
      if (accept('*'))
        e = binary(Kind::Mul, e, unary_expr());
      else if (accept('/'))
        e = binary(Kind::Div, e, unary_expr());
      else
        return e;
    }
  }

  NodePtr unary_expr() {
    if (accept('-')) return unary(Kind::Neg, unary_expr());
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return binary(Kind::Pow, base, unary_expr());  // right-assoc
    return base;
  }

  NodePtr primary() {
    skip_space();
    if (pos_ >= text_.size()) throw ParseError("unexpected end of expression", pos_);
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr e = additive();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c))) return identifier();
    throw ParseError("unexpected character", pos_);
  }

  NodePtr number() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.'))
      ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t e = pos_ + 1;
      if (e < text_.size() && (text_[e] == '+' || text_[e] == '-')) ++e;
      if (e < text_.size() && std::isdigit(static_cast<unsigned char>(text_[e]))) {
        pos_ = e;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      }
    }
    const std::string token(text_.substr(start, pos_ - start));
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) throw ParseError("malformed number", start);
      return make_const(v);
    } catch (const std::exception&) {
      throw ParseError("malformed number", start);
    }
  }

  NodePtr identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string name(text_.substr(start, pos_ - start));

    if (name == "t") return make(Kind::TimeVar);
    if ((name[0] == 'x' || name[0] == 'u') && name.size() > 1 &&
        std::all_of(name.begin() + 1, name.end(),
                    [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
      const int idx = std::stoi(name.substr(1));
      const bool is_state = name[0] == 'x';
      const int limit = is_state ? dims_.n : dims_.m;
      if (idx >= limit)
        throw ParseError((is_state ? std::string("state") : std::string("control")) +
                             " variable index out of range: " + name,
                         start);
      auto n = make(is_state ? Kind::StateVar : Kind::ControlVar);
      n->index = idx;
      return n;
    }

    static const std::pair<const char*, Kind> kUnary[] = {
        {"sin", Kind::Sin}, {"cos", Kind::Cos},   {"exp", Kind::Exp}, {"log", Kind::Log},
        {"sqrt", Kind::Sqrt}, {"abs", Kind::Abs}, {"tanh", Kind::Tanh}};
    for (const auto& [fn, kind] : kUnary) {
      if (name == fn) {
        expect('(');
        NodePtr a = additive();
        expect(')');
        return unary(kind, std::move(a));
      }
    }
    if (name == "min" || name == "max") {
      const Kind kind = name == "min" ? Kind::Min : Kind::Max;
      expect('(');
      NodePtr a = additive();
      expect(',');
      NodePtr b = additive();
      expect(')');
      return binary(kind, std::move(a), std::move(b));
    }
    if (name == "sel") {
      expect('(');
      NodePtr p = additive();
      expect(',');
      NodePtr q = additive();
      expect(',');
      NodePtr yes = additive();
      expect(',');
      NodePtr no = additive();
      expect(')');
      return select(std::move(p), std::move(q), std::move(yes), std::move(no));
    }
    throw ParseError("unknown identifier '" + name + "'", start);
  }
};

}  // namespace
}  // namespace detail

double Expr::eval(const EvalEnv& env) const {
  if (!node_) throw EvalError("evaluating an empty expression");
  return detail::evaluate(node_.get(), env);
}

Expr Expr::diff(VarRef var) const {
  if (!node_) throw Error("differentiating an empty expression");
  return Expr(detail::derivative(node_, var));
}

std::string Expr::str() const {
  if (!node_) return "<empty>";
  return detail::print(node_.get());
}

bool Expr::same_structure(const Expr& other) const {
  if (!node_ || !other.node_) return node_ == other.node_;
  return detail::structurally_equal(node_.get(), other.node_.get());
}

bool Expr::constant_value(double* out) const {
  if (node_ && node_->kind == detail::Kind::Constant) {
    if (out) *out = node_->value;
    return true;
  }
  return false;
}

bool Expr::uses_time() const {
  bool time = false;
  int mx = -1, mu = -1;
  if (node_) detail::scan(node_.get(), &time, &mx, &mu);
  return time;
}

int Expr::max_state_index() const {
  bool time = false;
  int mx = -1, mu = -1;
  if (node_) detail::scan(node_.get(), &time, &mx, &mu);
  return mx;
}

int Expr::max_control_index() const {
  bool time = false;
  int mx = -1, mu = -1;
  if (node_) detail::scan(node_.get(), &time, &mx, &mu);
  return mu;
}

Expr Expr::constant(double v) { return Expr(detail::make_const(v)); }

Expr Expr::state(int i) {
  auto n = detail::make(detail::Kind::StateVar);
  n->index = i;
  return Expr(std::move(n));
}

Expr Expr::control(int j) {
  auto n = detail::make(detail::Kind::ControlVar);
  n->index = j;
  return Expr(std::move(n));
}

Expr Expr::time() { return Expr(detail::make(detail::Kind::TimeVar)); }

Expr operator+(const Expr& a, const Expr& b) {
  return Expr(detail::binary(detail::Kind::Add, a.node_, b.node_));
}
Expr operator-(const Expr& a, const Expr& b) {
  return Expr(detail::binary(detail::Kind::Sub, a.node_, b.node_));
}
Expr operator*(const Expr& a, const Expr& b) {
  return Expr(detail::binary(detail::Kind::Mul, a.node_, b.node_));
}
Expr operator/(const Expr& a, const Expr& b) {
  return Expr(detail::binary(detail::Kind::Div, a.node_, b.node_));
}
Expr operator-(const Expr& a) { return Expr(detail::unary(detail::Kind::Neg, a.node_)); }

Expr Expr::pow(const Expr& base, const Expr& exponent) {
  return Expr(detail::binary(detail::Kind::Pow, base.node_, exponent.node_));
}

Expr Expr::apply(const std::string& fn, const Expr& a) {
  using detail::Kind;
  Kind k;
  if (fn == "sin") k = Kind::Sin;
  else if (fn == "cos") k = Kind::Cos;
  else if (fn == "exp") k = Kind::Exp;
  else if (fn == "log") k = Kind::Log;
  else if (fn == "sqrt") k = Kind::Sqrt;
  else if (fn == "abs") k = Kind::Abs;
  else if (fn == "tanh") k = Kind::Tanh;
  else if (fn == "neg") k = Kind::Neg;
  else throw Error("unknown unary function: " + fn);
  return Expr(detail::unary(k, a.node_));
}

Expr Expr::apply2(const std::string& fn, const Expr& a, const Expr& b) {
  using detail::Kind;
  Kind k;
  if (fn == "min") k = Kind::Min;
  else if (fn == "max") k = Kind::Max;
  else throw Error("unknown binary function: " + fn);
  return Expr(detail::binary(k, a.node_, b.node_));
}

Expr parse_expression(std::string_view text, Dims dims) {
  detail::Parser p(text, dims);
  return Expr(p.run());
}

}  // namespace charflow
