#pragma once

// JSON model files.
//
//   {
//     "name": "...",                        optional
//     "ndof": 2,
//     "mass": [[..], ..],                   ndof x ndof, symmetric positive definite
//     "stiffness": [[..], ..],              ndof x ndof, symmetric positive semi-definite
//     "damping": [[..], ..]                 explicit matrix, or
//              | {"proportional": {"D1": 0.01, "mode": 1}},   C = 2 D1 / omega_mode K
//     "elements": [{"kind": "cubic_spring", "coordinate": 1, "k_nl": 0.5 | "lambda"}],
//     "excitation": {"cosine": [..], "sine": [..]},   entries are numbers or "lambda"
//     "monitor": 2                          optional default coordinate for reports
//   }
//
// Coordinates are 1-based. Unknown keys are rejected.

#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "resonance_tracer/error.hpp"
#include "resonance_tracer/model.hpp"

namespace rtrace {

struct ModelFile {
  Model model;
  std::string name;
  std::optional<int> monitor;  // 0-based
};

namespace detail {

using json = nlohmann::json;

[[noreturn]] inline void schema(const std::string& where, const std::string& what) {
  fail(ErrorKind::schema_violation, where + ": " + what);
}

inline void only_keys(const json& obj, const std::string& where,
                      std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) schema(where, "expected an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* key : allowed) ok = ok || item.key() == key;
    if (!ok) schema(where, "unknown key '" + item.key() + "'");
  }
}

inline const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) schema(where, std::string("missing key '") + key + "'");
  return *it;
}

inline double number(const json& v, const std::string& where) {
  if (!v.is_number()) schema(where, "expected a number");
  return v.get<double>();
}

inline Parameter parameter(const json& v, const std::string& where) {
  if (v.is_string()) {
    if (v.get<std::string>() != "lambda") schema(where, "only the string \"lambda\" is allowed");
    return Parameter::lambda();
  }
  return Parameter(number(v, where));
}

inline Matrix matrix(const json& v, int n, const std::string& where) {
  if (!v.is_array() || static_cast<int>(v.size()) != n) schema(where, "expected " + std::to_string(n) + " rows");
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<int>(row.size()) != n)
      schema(where, "row " + std::to_string(i + 1) + " must have " + std::to_string(n) + " entries");
    for (int j = 0; j < n; ++j) m(i, j) = number(row[static_cast<std::size_t>(j)], where);
  }
  return m;
}

inline std::vector<Parameter> parameter_vector(const json& v, int n, const std::string& where) {
  if (!v.is_array() || static_cast<int>(v.size()) != n)
    schema(where, "expected " + std::to_string(n) + " entries");
  std::vector<Parameter> out;
  for (const auto& e : v) out.push_back(parameter(e, where));
  return out;
}

inline int coordinate(const json& v, int n, const std::string& where) {
  if (!v.is_number_integer()) schema(where, "coordinate must be an integer");
  const int c = v.get<int>();
  if (c < 1 || c > n) schema(where, "coordinate must lie in [1, ndof]");
  return c - 1;
}

}  // namespace detail

inline ModelFile model_from_json(const nlohmann::json& doc) {
  using detail::require;
  using detail::schema;
  detail::only_keys(doc, "model",
                    {"name", "ndof", "mass", "stiffness", "damping", "elements", "excitation",
                     "monitor"});
  const auto& nd = require(doc, "ndof", "model");
  if (!nd.is_number_integer() || nd.get<int>() < 1) schema("ndof", "must be a positive integer");
  const int n = nd.get<int>();

  Matrix mass = detail::matrix(require(doc, "mass", "model"), n, "mass");
  Matrix stiffness = detail::matrix(require(doc, "stiffness", "model"), n, "stiffness");

  Matrix damping;
  const auto& dj = require(doc, "damping", "model");
  if (dj.is_object()) {
    detail::only_keys(dj, "damping", {"proportional"});
    const auto& pj = require(dj, "proportional", "damping");
    detail::only_keys(pj, "damping.proportional", {"D1", "mode"});
    const double d1 = detail::number(require(pj, "D1", "damping.proportional"), "damping.proportional.D1");
    int mode = 1;
    if (pj.contains("mode")) mode = detail::coordinate(pj["mode"], n, "damping.proportional.mode") + 1;
    try {
      const Vector w = natural_frequencies(mass, stiffness);
      damping = build_proportional_damping(stiffness, d1, w[mode - 1]);
    } catch (const Error& e) {
      schema("damping.proportional", e.what());
    }
  } else {
    damping = detail::matrix(dj, n, "damping");
  }

  std::vector<NonlinearElement> elements;
  if (doc.contains("elements")) {
    const auto& ej = doc["elements"];
    if (!ej.is_array()) schema("elements", "expected a list");
    for (std::size_t i = 0; i < ej.size(); ++i) {
      const std::string where = "elements[" + std::to_string(i) + "]";
      const auto& e = ej[i];
      detail::only_keys(e, where, {"kind", "coordinate", "k_nl"});
      const auto& kind = require(e, "kind", where);
      if (!kind.is_string() || kind.get<std::string>() != CubicSpring::kind)
        schema(where, "unsupported element kind");
      CubicSpring spring;
      spring.coordinate = detail::coordinate(require(e, "coordinate", where), n, where);
      spring.k_nl = detail::parameter(require(e, "k_nl", where), where + ".k_nl");
      elements.emplace_back(spring);
    }
  }

  const auto& xj = require(doc, "excitation", "model");
  detail::only_keys(xj, "excitation", {"cosine", "sine"});
  HarmonicExcitation excitation;
  excitation.cosine = xj.contains("cosine") ? detail::parameter_vector(xj["cosine"], n, "excitation.cosine")
                                            : std::vector<Parameter>(static_cast<std::size_t>(n));
  excitation.sine = xj.contains("sine") ? detail::parameter_vector(xj["sine"], n, "excitation.sine")
                                        : std::vector<Parameter>(static_cast<std::size_t>(n));

  std::optional<int> monitor;
  if (doc.contains("monitor")) monitor = detail::coordinate(doc["monitor"], n, "monitor");
  std::string name;
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) schema("name", "expected a string");
    name = doc["name"].get<std::string>();
  }

  try {
    return ModelFile{Model(std::move(mass), std::move(damping), std::move(stiffness),
                           std::move(elements), std::move(excitation)),
                     std::move(name), monitor};
  } catch (const Error& e) {
    schema("model", e.what());
  }
}

inline ModelFile parse_model(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    detail::schema("model", std::string("malformed JSON: ") + e.what());
  }
  return model_from_json(doc);
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::file_not_found, path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

}  // namespace rtrace
