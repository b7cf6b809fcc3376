/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/spec_file.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "charflow/csv.hpp"

namespace charflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::optional<double> parse_number_token(const std::string& token) {
  if (token == "inf" || token == "+inf") return kInf;
  if (token == "-inf") return -kInf;
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used == token.size()) return v;
  } catch (const std::exception&) {
  }
  return std::nullopt;
}

}  // namespace

const SpecFile::Value* SpecFile::find(const std::string& section,
                                      const std::string& key) const {
  const auto sit = sections_.find(section);
  if (sit == sections_.end()) return nullptr;
  const auto kit = sit->second.find(key);
  return kit == sit->second.end() ? nullptr : &kit->second;
}

bool SpecFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

double SpecFile::number(const std::string& section, const std::string& key) const {
  const Value* v = find(section, key);
  if (!v || v->is_text || v->nums.size() != 1)
    throw UserError("spec: expected a number at [" + section + "] " + key);
  return v->nums[0];
}

double SpecFile::number_or(const std::string& section, const std::string& key,
                           double fallback) const {
  return has(section, key) ? number(section, key) : fallback;
}

std::string SpecFile::text(const std::string& section, const std::string& key) const {
  const Value* v = find(section, key);
  if (!v || !v->is_text || v->strs.size() != 1)
    throw UserError("spec: expected a string at [" + section + "] " + key);
  return v->strs[0];
}

std::string SpecFile::text_or(const std::string& section, const std::string& key,
                              const std::string& fallback) const {
  return has(section, key) ? text(section, key) : fallback;
}

std::vector<double> SpecFile::numbers(const std::string& section,
                                      const std::string& key) const {
  const Value* v = find(section, key);
  if (!v || v->is_text)
    throw UserError("spec: expected a number list at [" + section + "] " + key);
  return v->nums;
}

std::vector<std::string> SpecFile::texts(const std::string& section,
                                         const std::string& key) const {
  const Value* v = find(section, key);
  if (!v || !v->is_text)
    throw UserError("spec: expected a string list at [" + section + "] " + key);
  return v->strs;
}

SpecFile SpecFile::parse(const std::string& content) {
  SpecFile spec;

  // JSON alternative: first meaningful character is '{'.
  std::size_t first = content.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && content[first] == '{') {
    nlohmann::json root;
    try {
      root = nlohmann::json::parse(content);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("spec JSON: ") + e.what(), first);
    }
    for (const auto& [section, body] : root.items()) {
      if (!body.is_object())
        throw UserError("spec JSON: section '" + section + "' must be an object");
      for (const auto& [key, raw] : body.items()) {
        Value v;
        const auto push_scalar = [&](const nlohmann::json& item) {
          if (item.is_number()) {
            v.nums.push_back(item.get<double>());
          } else if (item.is_string()) {
            const auto num = parse_number_token(item.get<std::string>());
            if (num && (std::isinf(*num))) {
              v.nums.push_back(*num);  // "inf"/"-inf" spell infinite bounds
            } else {
              v.is_text = true;
              v.strs.push_back(item.get<std::string>());
            }
          } else if (item.is_boolean()) {
            v.nums.push_back(item.get<bool>() ? 1.0 : 0.0);
          } else {
            throw UserError("spec JSON: unsupported value type at " + section + "." + key);
          }
        };
        if (raw.is_array()) {
          v.is_list = true;
          for (const auto& item : raw) push_scalar(item);
        } else {
          push_scalar(raw);
        }
        spec.sections_[section][key] = std::move(v);
      }
    }
    return spec;
  }

  // INI-style text.
  std::istringstream in(content);
  std::string line, section;
  std::size_t offset = 0, line_start = 0;
  while (std::getline(in, line)) {
    line_start = offset;
    offset += line.size() + 1;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    if (stripped.front() == '[') {
      if (stripped.back() != ']')
        throw ParseError("spec: unterminated section header", line_start);
      section = trim(stripped.substr(1, stripped.size() - 2));
      continue;
    }
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError("spec: expected 'key = value'", line_start);
    const std::string key = trim(stripped.substr(0, eq));
    std::string rhs = trim(stripped.substr(eq + 1));
    if (key.empty() || rhs.empty())
      throw ParseError("spec: empty key or value", line_start);
    if (section.empty()) throw ParseError("spec: key outside any [section]", line_start);

    Value v;
    const auto push_token = [&](std::string token) {
      token = trim(token);
      if (token.empty()) throw ParseError("spec: empty list element", line_start);
      if (token.front() == '"') {
        if (token.size() < 2 || token.back() != '"')
          throw ParseError("spec: unterminated string", line_start);
        v.is_text = true;
        v.strs.push_back(token.substr(1, token.size() - 2));
        return;
      }
      const auto num = parse_number_token(token);
      if (num) {
        v.nums.push_back(*num);
      } else {
        v.is_text = true;
        v.strs.push_back(token);
      }
    };
    if (rhs.front() == '[') {
      if (rhs.back() != ']') throw ParseError("spec: unterminated list", line_start);
      v.is_list = true;
      std::string body = rhs.substr(1, rhs.size() - 2);
      std::string token;
      bool in_quotes = false;
      for (char c : body) {
        if (c == '"') in_quotes = !in_quotes;
        if (c == ',' && !in_quotes) {
          push_token(token);
          token.clear();
        } else {
          token += c;
        }
      }
      if (!trim(token).empty()) push_token(token);
    } else {
      push_token(rhs);
    }
    spec.sections_[section][key] = std::move(v);
  }
  return spec;
}

SpecFile SpecFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open spec file: " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

Dims SpecFile::dims() const {
  return Dims{static_cast<int>(number("problem", "state_dim")),
              static_cast<int>(number("problem", "control_dim"))};
}

ControlProblem SpecFile::build_problem() const {
  const Dims d = dims();
  const auto dyn_texts = texts("problem", "dynamics");
  if (static_cast<int>(dyn_texts.size()) != d.n)
    throw UserError("spec: dynamics must list exactly state_dim expressions");
  std::vector<Expr> f;
  for (const auto& s : dyn_texts) f.push_back(parse_expression(s, d));
  Expr lagrangian = parse_expression(text("problem", "lagrangian"), d);

  const auto to_vector = [](const std::vector<double>& v) {
    Vector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i];
    return out;
  };
  const Vector ulo = to_vector(numbers("problem", "control_lo"));
  const Vector uhi = to_vector(numbers("problem", "control_hi"));
  if (ulo.size() != d.m || uhi.size() != d.m)
    throw UserError("spec: control bounds must have control_dim entries");
  const Vector xlo = to_vector(numbers("problem", "domain_lo"));
  const Vector xhi = to_vector(numbers("problem", "domain_hi"));
  if (xlo.size() != d.n || xhi.size() != d.n)
    throw UserError("spec: domain bounds must have state_dim entries");

  const std::string boundary = text_or("problem", "boundary", "clamp");
  BoundaryMode mode;
  if (boundary == "clamp")
    mode = BoundaryMode::Clamp;
  else if (boundary == "periodic")
    mode = BoundaryMode::Periodic;
  else
    throw UserError("spec: boundary must be \"clamp\" or \"periodic\"");

  return ControlProblem(std::move(f), std::move(lagrangian),
                        ControlSet::box(ulo, uhi), Box::make(xlo, xhi),
                        number("problem", "horizon"), mode);
}

DiscreteMeasure SpecFile::load_measure(const std::string& name,
                                       const std::string& base_dir) const {
  if (has("transport", name + "_file")) {
    std::string path = text("transport", name + "_file");
    if (!path.empty() && path.front() != '/' && !base_dir.empty())
      path = base_dir + "/" + path;
    return read_measure_csv(path);
  }
  if (!has("transport", name + "_atoms"))
    throw UserError("spec: transport section needs " + name + "_file or " + name +
                    "_atoms");
  const auto flat = numbers("transport", name + "_atoms");
  const auto ws = numbers("transport", name + "_weights");
  const int n = dims().n;
  if (flat.size() != ws.size() * static_cast<std::size_t>(n))
    throw UserError("spec: " + name + "_atoms must hold state_dim entries per atom");
  std::vector<Vector> atoms;
  for (std::size_t i = 0; i < ws.size(); ++i) {
    Vector a(n);
    for (int dcomp = 0; dcomp < n; ++dcomp)
      a[dcomp] = flat[i * static_cast<std::size_t>(n) + dcomp];
    atoms.push_back(std::move(a));
  }
  Vector w(ws.size());
  for (std::size_t i = 0; i < ws.size(); ++i) w[i] = ws[i];
  return DiscreteMeasure::create(std::move(atoms), std::move(w));
}

DiscreteMeasure read_measure_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open measure file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw UserError("empty measure file: " + path);
  int columns = 1;
  for (char c : header)
    if (c == ',') ++columns;
  const int dim = columns - 1;
  if (dim < 1) throw UserError("measure file needs columns x0[,x1],weight: " + path);

  std::vector<Vector> atoms;
  std::vector<double> weights;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    std::istringstream row(stripped);
    std::string cell;
    std::vector<double> values;
    while (std::getline(row, cell, ',')) {
      const auto num = parse_number_token(trim(cell));
      if (!num)
        throw UserError(path + ":" + std::to_string(line_no) + ": malformed number");
      values.push_back(*num);
    }
    if (static_cast<int>(values.size()) != columns)
      throw UserError(path + ":" + std::to_string(line_no) + ": wrong column count");
    Vector a(dim);
    for (int d = 0; d < dim; ++d) a[d] = values[d];
    atoms.push_back(std::move(a));
    weights.push_back(values.back());
  }
  Vector w(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) w[i] = weights[i];
  return DiscreteMeasure::create(std::move(atoms), std::move(w));
}

void write_measure_csv(const std::string& path, const DiscreteMeasure& mu) {
  std::ofstream out(path);
  if (!out) throw UserError("cannot write measure file: " + path);
  for (int d = 0; d < mu.dim(); ++d) out << "x" << d << ",";
  out << "weight\n";
  for (std::size_t i = 0; i < mu.size(); ++i) {
    for (int d = 0; d < mu.dim(); ++d) out << fmt17(mu.atoms[i][d]) << ",";
    out << fmt17(mu.weights[static_cast<Index>(i)]) << "\n";
  }
}

}  // namespace charflow
