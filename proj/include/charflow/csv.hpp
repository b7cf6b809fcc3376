/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <cstdio>
#include <string>

#include "charflow/types.hpp"

namespace charflow {

/// Format a double with 17 significant digits (round-trip safe). Infinities
/// print as "inf"/"-inf", which is also the serialized form of INFEASIBLE
/// cost-matrix entries.
inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline std::string fmt17(const Vector& v, char sep = ',') {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += fmt17(v[i]);
  }
  return out;
}

}  // namespace charflow
