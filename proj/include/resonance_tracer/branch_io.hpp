#pragma once

// Branch writers. CSV columns are
//   point_index, parameter, omega, amplitude, phase, residual_norm
// followed, with full_state, by q_0 .. q_{n-1} (the unknown vector: harmonic
// blocks, then omega_res for resonance curves). Floats use 17 significant
// digits; JSON carries the same rows plus the study descriptor and per-point
// Newton iteration counts.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "resonance_tracer/continuation.hpp"
#include "resonance_tracer/error.hpp"

namespace rtrace {

enum class OutputFormat { csv, json };

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_branch_csv(const Branch& branch, std::ostream& out, bool full_state = false) {
  out << "point_index,parameter,omega,amplitude,phase,residual_norm";
  const Eigen::Index width = branch.empty() ? 0 : branch.points.front().u.size();
  if (full_state)
    for (Eigen::Index j = 0; j < width; ++j) out << ",q_" << j;
  out << '\n';
  for (std::size_t i = 0; i < branch.points.size(); ++i) {
    const BranchPoint& p = branch.points[i];
    out << i << ',' << format_double(p.parameter) << ',' << format_double(p.omega) << ','
        << format_double(p.amplitude) << ',' << format_double(p.phase) << ','
        << format_double(p.residual_norm);
    if (full_state)
      for (Eigen::Index j = 0; j < p.u.size(); ++j) out << ',' << format_double(p.u[j]);
    out << '\n';
  }
}

namespace detail {

inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

inline double from_json_number(const nlohmann::json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace detail

inline nlohmann::json branch_to_json(const Branch& branch, bool full_state = false) {
  using nlohmann::json;
  const StudyDescriptor& s = branch.study;
  json study = {{"kind", s.kind},
                {"parameter", s.parameter},
                {"method", s.method},
                {"coordinate", s.coordinate + 1},
                {"nh", s.nh},
                {"nt", s.nt},
                {"ndof", s.ndof},
                {"window", {detail::json_number(s.window_min), detail::json_number(s.window_max)}},
                {"lambda", detail::json_number(s.lambda)}};
  json points = json::array();
  for (std::size_t i = 0; i < branch.points.size(); ++i) {
    const BranchPoint& p = branch.points[i];
    json row = {{"point_index", i},
                {"parameter", detail::json_number(p.parameter)},
                {"omega", detail::json_number(p.omega)},
                {"amplitude", detail::json_number(p.amplitude)},
                {"phase", detail::json_number(p.phase)},
                {"residual_norm", detail::json_number(p.residual_norm)},
                {"newton_iters", p.iterations},
                {"step", detail::json_number(p.step)}};
    if (full_state) {
      json q = json::array();
      for (Eigen::Index j = 0; j < p.u.size(); ++j) q.push_back(detail::json_number(p.u[j]));
      row["state"] = std::move(q);
    }
    points.push_back(std::move(row));
  }
  return {{"study", std::move(study)},
          {"complete", branch.complete},
          {"closed", branch.closed},
          {"diagnostic", branch.diagnostic},
          {"points", std::move(points)}};
}

inline Branch branch_from_json(const nlohmann::json& doc) {
  Branch b;
  try {
    const auto& s = doc.at("study");
    b.study.kind = s.at("kind").get<std::string>();
    b.study.parameter = s.at("parameter").get<std::string>();
    b.study.method = s.at("method").get<std::string>();
    b.study.coordinate = s.at("coordinate").get<int>() - 1;
    b.study.nh = s.at("nh").get<int>();
    b.study.nt = s.at("nt").get<int>();
    b.study.ndof = s.at("ndof").get<int>();
    b.study.window_min = detail::from_json_number(s.at("window").at(0));
    b.study.window_max = detail::from_json_number(s.at("window").at(1));
    b.study.lambda = detail::from_json_number(s.at("lambda"));
    b.complete = doc.at("complete").get<bool>();
    b.closed = doc.at("closed").get<bool>();
    b.diagnostic = doc.at("diagnostic").get<std::string>();
    for (const auto& row : doc.at("points")) {
      BranchPoint p;
      p.parameter = detail::from_json_number(row.at("parameter"));
      p.omega = detail::from_json_number(row.at("omega"));
      p.amplitude = detail::from_json_number(row.at("amplitude"));
      p.phase = detail::from_json_number(row.at("phase"));
      p.residual_norm = detail::from_json_number(row.at("residual_norm"));
      p.iterations = row.at("newton_iters").get<int>();
      p.step = detail::from_json_number(row.at("step"));
      if (row.contains("state")) {
        const auto& q = row["state"];
        p.u.resize(static_cast<Eigen::Index>(q.size()));
        for (std::size_t j = 0; j < q.size(); ++j)
          p.u[static_cast<Eigen::Index>(j)] = detail::from_json_number(q[j]);
      }
      b.points.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema_violation, std::string("branch file: ") + e.what());
  }
  return b;
}

inline void write_branch_json(const Branch& branch, std::ostream& out, bool full_state = false) {
  // nlohmann emits the shortest representation that round-trips bit-exactly.
  out << branch_to_json(branch, full_state).dump(1) << '\n';
}

inline void write_branch(const Branch& branch, OutputFormat format, const std::string& path,
                         bool full_state = false) {
  if (branch.empty()) fail(ErrorKind::invalid_argument, "branch is empty");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io_failure, "cannot open " + path);
  if (format == OutputFormat::csv)
    write_branch_csv(branch, out, full_state);
  else
    write_branch_json(branch, out, full_state);
  out.flush();
  if (!out) fail(ErrorKind::io_failure, "write failed: " + path);
}

inline Branch read_branch_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::file_not_found, path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::schema_violation, std::string("branch file: ") + e.what());
  }
  return branch_from_json(doc);
}

}  // namespace rtrace
