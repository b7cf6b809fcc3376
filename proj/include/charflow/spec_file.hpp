/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "charflow/problem.hpp"
#include "charflow/transport.hpp"
#include "charflow/types.hpp"

namespace charflow {

/// Problem-spec file: sections of key/value pairs. Two interchangeable
/// surface syntaxes, auto-detected: an INI-style text format
///
///     [problem]
///     state_dim = 1
///     dynamics = ["u0"]
///     control_lo = [-inf]
///     horizon = 1.0
///
/// and JSON with the same section/key structure (infinite bounds spelled as
/// the strings "inf"/"-inf"). The schema is documented in the README.
class SpecFile {
 public:
  static SpecFile load(const std::string& path);
  static SpecFile parse(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  double number(const std::string& section, const std::string& key) const;
  double number_or(const std::string& section, const std::string& key, double fallback) const;
  std::string text(const std::string& section, const std::string& key) const;
  std::string text_or(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  std::vector<double> numbers(const std::string& section, const std::string& key) const;
  std::vector<std::string> texts(const std::string& section, const std::string& key) const;

  /// Build the ControlProblem from the [problem] section.
  ControlProblem build_problem() const;
  Dims dims() const;

  /// Load a measure from the [transport] section: either `<name>_file`
  /// pointing at a CSV (columns x0[,x1],weight) or inline `<name>_atoms`
  /// (flat, state_dim entries per atom) plus `<name>_weights`.
  DiscreteMeasure load_measure(const std::string& name, const std::string& base_dir) const;

 private:
  struct Value {
    std::vector<double> nums;
    std::vector<std::string> strs;
    bool is_list = false;
    bool is_text = false;
  };
  std::map<std::string, std::map<std::string, Value>> sections_;

  const Value* find(const std::string& section, const std::string& key) const;
};

/// Measure CSV reader/writer (header x0[,x1],weight; 17 significant digits).
DiscreteMeasure read_measure_csv(const std::string& path);
void write_measure_csv(const std::string& path, const DiscreteMeasure& mu);

}  // namespace charflow
