/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "charflow/types.hpp"

namespace charflow {

/// Evaluation point for a scalar expression: state x, control u, time t.
struct EvalEnv {
  Vector x;
  Vector u;
  double t = 0.0;
};

/// Declared dimensions (n states, m controls) an expression may reference.
struct Dims {
  int n = 0;
  int m = 0;
};

enum class VarKind { State, Control, Time };

/// Identifies a differentiation variable: x[index], u[index], or t.
struct VarRef {
  VarKind kind;
  int index = 0;

  static VarRef state(int i) { return {VarKind::State, i}; }
  static VarRef control(int j) { return {VarKind::Control, j}; }
  static VarRef time() { return {VarKind::Time, 0}; }
};

namespace detail {
struct ExprNode;
}

/// Immutable scalar expression over variables x0.., u0.., t.
///
/// Grammar (no implicit multiplication): binary + - * / ^ with precedence
/// ^ > unary- > */ > +-, all left-associative except ^ (right-associative);
/// functions sin cos exp log sqrt abs tanh (unary) and min max (binary).
/// Evaluation is IEEE double; any operation producing NaN or infinity raises
/// EvalError naming the offending subexpression. Symbolic differentiation
/// handles abs/min/max by their almost-everywhere rule with ties broken toward
/// the first argument. Expressions are immutable after construction and safe
/// to evaluate concurrently.
class Expr {
 public:
  Expr() = default;

  bool valid() const { return node_ != nullptr; }

  double eval(const EvalEnv& env) const;

  /// Exact symbolic partial derivative. Applies constant folding only (no
  /// further simplification).
  Expr diff(VarRef var) const;

  /// Round-trip printable form: parse(str()) is structurally equal to *this.
  std::string str() const;

  bool same_structure(const Expr& other) const;

  /// True when the tree folded to a single numeric literal; the value is
  /// stored in *out.
  bool constant_value(double* out) const;

  bool uses_time() const;
  int max_state_index() const;    // -1 when no state variable appears
  int max_control_index() const;  // -1 when no control variable appears

  // Builders (apply constant folding).
  static Expr constant(double v);
  static Expr state(int i);
  static Expr control(int j);
  static Expr time();
  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a);
  static Expr pow(const Expr& base, const Expr& exponent);
  static Expr apply(const std::string& fn, const Expr& a);            // unary
  static Expr apply2(const std::string& fn, const Expr& a, const Expr& b);

  explicit Expr(std::shared_ptr<const detail::ExprNode> node) : node_(std::move(node)) {}
  const detail::ExprNode* node() const { return node_.get(); }

 private:
  std::shared_ptr<const detail::ExprNode> node_;
};

/// Parse an expression over x0..x{n-1}, u0..u{m-1}, t.
/// Throws ParseError (with byte offset) on syntax errors, unknown identifiers,
/// and variable indices outside the declared dimensions.
Expr parse_expression(std::string_view text, Dims dims);

}  // namespace charflow
