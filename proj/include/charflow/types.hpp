/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace charflow {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed textual input (expression, spec file, CSV). Carries a byte offset
/// into the offending text where the parser gave up.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t offset_)
      : Error(what + " (byte " + std::to_string(offset_) + ")"), offset(offset_) {}
  std::size_t offset;
};

/// Domain fault while evaluating an expression (log of non-positive, division
/// by zero, overflow). Raised instead of returning NaN/inf.
struct EvalError : Error {
  using Error::Error;
};

/// Invalid user input or configuration (dimension mismatch, CFL violation,
/// infeasible transport instance, point outside the seed hull, ...).
struct UserError : Error {
  using Error::Error;
};

/// A numerical procedure failed (unbounded Hamiltonian maximization,
/// characteristic escaping the domain, excessive skipped mass, ...).
struct NumericError : Error {
  using Error::Error;
};

/// Axis-aligned box in state space. Used both for the computational domain
/// and for seed/node grids.
struct Box {
  Vector lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double width(int d) const { return hi[d] - lo[d]; }
  double max_width() const { return (hi - lo).maxCoeff(); }

  bool contains(const Vector& x, double tol = 0.0) const {
    for (Index d = 0; d < lo.size(); ++d)
      if (x[d] < lo[d] - tol || x[d] > hi[d] + tol) return false;
    return true;
  }

  Vector clamp(Vector x) const {
    for (Index d = 0; d < lo.size(); ++d) x[d] = std::clamp(x[d], lo[d], hi[d]);
    return x;
  }

  /// Reduce x into [lo, hi) componentwise, treating the box as a torus.
  Vector wrap(Vector x) const {
    for (Index d = 0; d < lo.size(); ++d) {
      const double w = hi[d] - lo[d];
      double y = std::fmod(x[d] - lo[d], w);
      if (y < 0) y += w;
      x[d] = lo[d] + y;
    }
    return x;
  }

  static Box make(Vector lo, Vector hi) {
    if (lo.size() != hi.size() || lo.size() == 0)
      throw UserError("box bounds must be non-empty and of equal dimension");
    for (Index d = 0; d < lo.size(); ++d) {
      if (!(lo[d] < hi[d])) throw UserError("box requires lo < hi in every component");
      if (!std::isfinite(lo[d]) || !std::isfinite(hi[d]))
        throw UserError("box bounds must be finite");
    }
    return Box{std::move(lo), std::move(hi)};
  }
};

enum class BoundaryMode { Clamp, Periodic };

}  // namespace charflow
