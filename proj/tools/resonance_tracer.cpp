// resonance-tracer: batch front end for the solver library.
//
//   resonance-tracer <study> --model <path> [options] [-o <path>]
//
// Exit status: 0 when every requested point converged, 1 on a study failure
// (partial results are still written), 2 on a usage error, 3 when a file is
// missing, 4 on a malformed model file. Failures print one line on stderr:
//   error kind=<kind> message="<text>"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "resonance_tracer/resonance_tracer.hpp"

namespace {

using namespace rtrace;

struct Options {
  std::string model_path;
  int nh = 3;
  int coord = 0;  // 1-based; 0 means the model's "monitor" entry, else 1
  std::string window;
  double step = 1e-3;
  std::string method = "phase-lag";
  std::string format = "csv";
  bool full_state = false;
  std::string output;
  double lambda = 0.0;
  double lambda_star = 0.93;
  std::vector<double> lambdas;
  int mode = 1;
  std::string continuation;
  std::string phase_form = "normalized";
  std::string omega_range;
  double max_step = 5e-2;
  int max_halvings = -1;
  int ndof = 1;
  int samples = 100;
  unsigned seed = 1;
  double tolerance = 1e-6;
  double connect_tolerance = 1e-3;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

Range parse_range(const std::string& text, const char* what) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) fail(ErrorKind::invalid_argument, std::string(what) + " must be a:b");
  const std::string a = text.substr(0, colon);
  const std::string b = text.substr(colon + 1);
  char* end_a = nullptr;
  char* end_b = nullptr;
  const double lo = std::strtod(a.c_str(), &end_a);
  const double hi = std::strtod(b.c_str(), &end_b);
  if (a.empty() || b.empty() || *end_a != '\0' || *end_b != '\0' || !std::isfinite(lo) ||
      !std::isfinite(hi))
    fail(ErrorKind::invalid_argument, std::string(what) + " must be a:b with finite numbers");
  if (!(hi >= lo)) fail(ErrorKind::invalid_argument, std::string(what) + " is empty (b < a)");
  return {lo, hi};
}

OutputFormat output_format(const Options& o) {
  return o.format == "json" ? OutputFormat::json : OutputFormat::csv;
}

std::string extension(const Options& o) { return o.format == "json" ? ".json" : ".csv"; }

// "<dir>/<stem><tag><ext>" next to the main output path.
std::string sibling_path(const Options& o, const std::string& tag) {
  if (o.output.empty()) fail(ErrorKind::invalid_argument, "this study writes several files; pass -o");
  const std::filesystem::path p(o.output);
  return (p.parent_path() / (p.stem().string() + tag + extension(o))).string();
}

void emit(const Branch& b, const Options& o, const std::string& path) {
  if (path.empty()) {
    if (b.empty()) fail(ErrorKind::invalid_argument, "branch is empty");
    if (output_format(o) == OutputFormat::json)
      write_branch_json(b, std::cout, o.full_state);
    else
      write_branch_csv(b, std::cout, o.full_state);
    return;
  }
  write_branch(b, output_format(o), path, o.full_state);
}

void emit(const Branch& b, const Options& o) { emit(b, o, o.output); }

ModelFile load(const Options& o) {
  if (o.model_path.empty()) fail(ErrorKind::invalid_argument, "--model is required");
  return load_model(o.model_path);
}

int coordinate(const Options& o, const ModelFile& mf) {
  const int k = o.coord > 0 ? o.coord - 1 : mf.monitor.value_or(0);
  if (k < 0 || k >= mf.model.ndof()) fail(ErrorKind::index_out_of_range, "--coord out of range");
  return k;
}

ResonanceMethod method(const Options& o) {
  return o.method == "tangent" ? ResonanceMethod::horizontal_tangent : ResonanceMethod::phase_lag;
}

// Default admissible resonance range: [0.5, 2.5] times the traced mode's
// natural frequency.
Range omega_range(const Options& o, const Model& model) {
  if (!o.omega_range.empty()) return parse_range(o.omega_range, "--omega-range");
  const Vector w = natural_frequencies(model.mass(), model.stiffness());
  const int m = std::clamp(o.mode, 1, static_cast<int>(w.size())) - 1;
  return {0.5 * w[m], 2.5 * w[m]};
}

ContinuationSettings arclength_settings(const Options& o, Range window) {
  ContinuationSettings s;
  s.window_min = window.lo;
  s.window_max = window.hi;
  s.max_step = o.max_step;
  const double width = window.hi - window.lo;
  s.initial_step = width > 0.0 ? std::min(o.step / width, s.max_step) : s.max_step;
  s.min_step = std::min(s.min_step, s.initial_step);
  s.validate();
  return s;
}

void check_common(const Options& o) {
  if (o.nh < 1) fail(ErrorKind::invalid_argument, "--nh must be >= 1");
  if (!(o.step > 0.0)) fail(ErrorKind::invalid_argument, "--step must be positive");
}

struct Traced {
  ResonanceProblem problem;
  Branch branch;
};

StudyDescriptor curve_descriptor(const ResonanceProblem& rp, Range window, const std::string& kind) {
  StudyDescriptor d;
  d.kind = kind;
  d.parameter = "lambda";
  d.method = std::string(to_string(rp.method()));
  d.coordinate = rp.monitored();
  d.nh = rp.layout().nh;
  d.nt = rp.grid().nt();
  d.ndof = rp.layout().ndof;
  d.window_min = window.lo;
  d.window_max = window.hi;
  return d;
}

Traced trace(const Options& o, const ModelFile& mf, Range window, bool arclength) {
  check_common(o);
  const int k = coordinate(o, mf);
  const PhaseForm form = o.phase_form == "tangent" ? PhaseForm::tangent : PhaseForm::normalized;
  LinearReferenceOptions ref_opt;
  ref_opt.lambda = window.lo;
  Traced t{make_resonance_problem(mf.model, o.nh, method(o), o.mode - 1, k, form, ref_opt), {}};
  const Range wr = omega_range(o, mf.model);
  t.problem.set_omega_range(wr.lo, wr.hi);
  const LinearReference ref = linear_reference_phase(mf.model, o.mode - 1, k, ref_opt);
  const Vector x0 = linear_resonance_state(mf.model, o.nh, ref).to_vector();
  const ContinuationProblem cp = resonance_curve_problem(t.problem);
  if (arclength) {
    t.branch = arclength_continuation(cp, x0, window.lo, arclength_settings(o, window));
  } else {
    const int halvings =
        o.max_halvings >= 0 ? o.max_halvings : (t.problem.method() == ResonanceMethod::phase_lag ? 0 : 20);
    t.branch = sequential_continuation(cp, x0, window.lo, window.hi, o.step, {}, halvings);
  }
  t.branch.study = curve_descriptor(t.problem, window, "resonance-curve");
  return t;
}

int report_branch(const Branch& b) {
  if (b.complete) return 0;
  std::cerr << "error kind=study-failure message=\"" << b.diagnostic << "\" points=" << b.size()
            << '\n';
  return 1;
}

// ---------------------------------------------------------------------------

int run_frf(const Options& o) {
  check_common(o);
  const ModelFile mf = load(o);
  const Range window = parse_range(o.window.empty() ? "0.5:2.5" : o.window, "--window");
  if (!(window.lo > 0.0)) fail(ErrorKind::invalid_argument, "omega window must be positive");
  const FrfSystem sys(mf.model, o.nh, coordinate(o, mf), o.lambda);
  Branch b;
  if (o.continuation == "sequential") {
    b = sequential_continuation(frf_problem(sys), sys.linear_guess(window.lo), window.lo, window.hi,
                                o.step, {}, std::max(o.max_halvings, 0));
    b.study = frf_descriptor(sys, window.lo, window.hi);
  } else {
    b = frequency_response(sys, arclength_settings(o, window));
  }
  if (!b.empty()) emit(b, o);
  return report_branch(b);
}

int run_trace(const Options& o, ResonanceMethod m) {
  Options opt = o;
  opt.method = m == ResonanceMethod::phase_lag ? "phase-lag" : "tangent";
  const ModelFile mf = load(opt);
  const Range window = parse_range(opt.window.empty() ? "0:2" : opt.window, "--window");
  const Traced t = trace(opt, mf, window, opt.continuation == "arclength");
  if (!t.branch.empty()) emit(t.branch, opt);
  return report_branch(t.branch);
}

Branch points_branch(const Traced& t, const std::vector<ResonancePoint>& pts, double lambda_star) {
  Branch out;
  out.study = t.branch.study;
  out.study.kind = "solutions-at";
  out.study.lambda = lambda_star;
  for (const ResonancePoint& p : pts) {
    BranchPoint bp;
    bp.u = ExtendedState{p.q, p.omega_res}.to_vector();
    bp.parameter = p.lambda;
    bp.omega = p.omega_res;
    bp.amplitude = p.amplitude;
    bp.phase = p.phase;
    bp.residual_norm = p.residual_norm;
    bp.iterations = p.iterations;
    out.points.push_back(bp);
  }
  return out;
}

std::vector<ResonancePoint> solutions(const Options& o, const ModelFile& mf, Traced& t) {
  const Range window = parse_range(o.window.empty() ? "0:5" : o.window, "--window");
  if (o.lambda_star < window.lo || o.lambda_star > window.hi)
    fail(ErrorKind::invalid_argument, "--lambda-star lies outside --window");
  t = trace(o, mf, window, o.continuation != "sequential");
  return solutions_at_parameter(t.branch, o.lambda_star, t.problem);
}

int run_solutions_at(const Options& o) {
  const ModelFile mf = load(o);
  Traced t{make_resonance_problem(mf.model, o.nh, method(o), o.mode - 1, coordinate(o, mf)), {}};
  const std::vector<ResonancePoint> pts = solutions(o, mf, t);
  if (!pts.empty()) emit(points_branch(t, pts, o.lambda_star), o);
  int status = report_branch(t.branch);
  if (pts.empty()) {
    std::cerr << "error kind=study-failure message=\"no resonance point at lambda "
              << format_double(o.lambda_star) << "\"\n";
    status = 1;
  }
  std::cout << "solutions " << pts.size() << '\n';
  return status;
}

// Resonance points at lambda*, the FRF through each, the primary FRF grown
// from the window start, and their pairwise connectivity.
int run_branch_probe(const Options& o) {
  const ModelFile mf = load(o);
  Traced t{make_resonance_problem(mf.model, o.nh, method(o), o.mode - 1, coordinate(o, mf)), {}};
  const std::vector<ResonancePoint> pts = solutions(o, mf, t);
  int status = report_branch(t.branch);
  if (pts.empty()) {
    std::cerr << "error kind=study-failure message=\"no resonance point at lambda "
              << format_double(o.lambda_star) << "\"\n";
    return 1;
  }
  emit(points_branch(t, pts, o.lambda_star), o);

  const Range wr = omega_range(o, mf.model);
  const ContinuationSettings s = arclength_settings(o, wr);
  const FrfSystem sys(mf.model, o.nh, t.problem.monitored(), o.lambda_star);
  std::vector<Branch> frfs;
  frfs.push_back(frequency_response(sys, s));
  for (const ResonancePoint& p : pts) frfs.push_back(frequency_response_from(sys, p.q.values(), p.omega_res, s));

  for (std::size_t i = 0; i < frfs.size(); ++i) {
    const Branch& b = frfs[i];
    const std::string tag = i == 0 ? ".primary" : ".seed" + std::to_string(i);
    if (!b.empty()) emit(b, o, sibling_path(o, tag));
    double wmin = INFINITY, wmax = -INFINITY;
    for (const auto& p : b.points) {
      wmin = std::min(wmin, p.omega);
      wmax = std::max(wmax, p.omega);
    }
    std::cout << "branch " << i << " source=" << (i == 0 ? "window-start" : "seed" + std::to_string(i))
              << " points=" << b.size() << " closed=" << b.closed << " complete=" << b.complete
              << " omega_min=" << format_double(wmin) << " omega_max=" << format_double(wmax)
              << " maxima=" << detect_local_maxima(b).size() << '\n';
    if (!b.complete) status = std::max(status, report_branch(b));
  }
  for (std::size_t i = 0; i < frfs.size(); ++i)
    for (std::size_t j = i + 1; j < frfs.size(); ++j) {
      const Connectivity c = branch_connectivity(frfs[i], frfs[j], o.connect_tolerance);
      std::cout << "connectivity " << i << ' ' << j << " connected=" << c.connected
                << " distance=" << format_double(c.min_distance) << '\n';
    }
  return status;
}

int run_verify_jacobian(const Options& o) {
  check_common(o);
  const ModelFile mf = load(o);
  const Model& model = mf.model;
  const int k = coordinate(o, mf);
  const HarmonicLayout layout{o.nh, model.ndof()};
  const AftGrid grid = AftGrid::for_model(model, o.nh);
  const Range wr = omega_range(o, model);
  const PhaseLagCondition cond{linear_reference_phase(model, o.mode - 1, k).phi_ref, k};
  std::mt19937 rng(o.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> om(wr.lo, wr.hi);
  double dq = 0.0, dw = 0.0, ext = 0.0;
  for (int trial = 0; trial < o.samples; ++trial) {
    Vector q(layout.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = 2.0 * unit(rng);
    const double w = om(rng);
    dq = std::max(dq, verify_jacobian(
                          [&](const Vector& v) { return hbm_residual({layout, v}, w, o.lambda, model, grid); },
                          [&](const Vector& v) { return hbm_jacobians({layout, v}, w, o.lambda, model, grid).dq; },
                          q));
    dw = std::max(dw, verify_jacobian(
                          [&](const Vector& v) { return hbm_residual({layout, q}, v[0], o.lambda, model, grid); },
                          [&](const Vector& v) {
                            return Matrix(hbm_jacobians({layout, q}, v[0], o.lambda, model, grid).domega);
                          },
                          Vector::Constant(1, w)));
    Vector x(layout.size() + 1);
    x << q, w;
    ext = std::max(ext, verify_jacobian(
                            [&](const Vector& v) {
                              return phase_lag_residual(ExtendedState::from_vector(layout, v), o.lambda,
                                                        cond, model, grid);
                            },
                            [&](const Vector& v) {
                              return phase_lag_jacobian(ExtendedState::from_vector(layout, v), o.lambda,
                                                        cond, model, grid);
                            },
                            x));
  }
  std::cout << "dR/dQ max_discrepancy=" << format_double(dq) << '\n'
            << "dR/domega max_discrepancy=" << format_double(dw) << '\n'
            << "phase-lag-extended max_discrepancy=" << format_double(ext) << '\n';
  const double worst = std::max({dq, dw, ext});
  if (worst < o.tolerance) return 0;
  std::cerr << "error kind=study-failure message=\"jacobian discrepancy " << format_double(worst)
            << " exceeds " << format_double(o.tolerance) << "\"\n";
  return 1;
}

int run_complexity(const Options& o) {
  const ComplexityRatios r = complexity_ratios(o.nh, o.ndof);
  std::cout << "Z_a=" << format_double(r.additions) << " Z_m=" << format_double(r.multiplications)
            << '\n';
  return 0;
}

unsigned thread_cap() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("RESONANCE_TRACER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      fail(ErrorKind::invalid_argument, "RESONANCE_TRACER_THREADS must be a positive integer");
    cap = static_cast<unsigned>(v);
  }
  return cap;
}

// Independent FRFs at several lambda values, run concurrently.
int run_frf_batch(const Options& o) {
  check_common(o);
  if (o.lambdas.empty()) fail(ErrorKind::invalid_argument, "--lambdas is required");
  const ModelFile mf = load(o);
  const Range window = parse_range(o.window.empty() ? "0.5:2.5" : o.window, "--window");
  if (!(window.lo > 0.0)) fail(ErrorKind::invalid_argument, "omega window must be positive");
  const ContinuationSettings s = arclength_settings(o, window);
  const int k = coordinate(o, mf);
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < o.lambdas.size(); ++i) paths.push_back(sibling_path(o, ".lambda" + std::to_string(i)));

  std::vector<Branch> results(o.lambdas.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < results.size(); i = next++) {
      const FrfSystem sys(mf.model, o.nh, k, o.lambdas[i]);
      results[i] = frequency_response(sys, s);
    }
  };
  const unsigned n = std::min<unsigned>(thread_cap(), static_cast<unsigned>(results.size()));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  int status = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].empty()) emit(results[i], o, paths[i]);
    std::cout << "lambda " << format_double(o.lambdas[i]) << " points=" << results[i].size()
              << " complete=" << results[i].complete << " file=" << paths[i] << '\n';
    status = std::max(status, report_branch(results[i]));
  }
  return status;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::file_not_found: return 3;
    case ErrorKind::schema_violation: return 4;
    case ErrorKind::invalid_argument:
    case ErrorKind::index_out_of_range: return 2;
    default: return 1;
  }
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '"', '\'');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Harmonic balance frequency responses and resonance-curve tracing."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every study");

  auto model_opt = [&](CLI::App* s) {
    s->add_option("--model", o.model_path, "Model JSON file")->required();
    s->add_option("--nh", o.nh, "Harmonic order")->capture_default_str();
    s->add_option("--coord", o.coord, "Monitored coordinate, 1-based (default: model 'monitor', else 1)");
  };
  auto output_opts = [&](CLI::App* s) {
    s->add_option("--format", o.format, "Output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    s->add_flag("--full-state", o.full_state, "Append the full unknown vector to every row");
    s->add_option("-o,--output", o.output, "Output file (default: stdout)");
  };
  auto step_opts = [&](CLI::App* s) {
    s->add_option("--step", o.step,
                  "Sequential step, or initial arclength step, in parameter units")
        ->capture_default_str();
    s->add_option("--max-step", o.max_step, "Largest arclength step, as a fraction of the window")
        ->capture_default_str();
    s->add_option("--max-halvings", o.max_halvings,
                  "Sequential step halvings after a failure (default: 0 phase-lag, 20 tangent)");
  };
  auto resonance_opts = [&](CLI::App* s) {
    s->add_option("--mode", o.mode, "Mode whose linear resonance sets phi_ref, 1-based")
        ->capture_default_str();
    s->add_option("--phase-form", o.phase_form, "Phase condition form")
        ->check(CLI::IsMember({"normalized", "tangent"}))
        ->capture_default_str();
    s->add_option("--omega-range", o.omega_range,
                  "Admissible resonance frequencies a:b (default: 0.5:2.5 times the mode's natural frequency)");
  };

  CLI::App* frf = app.add_subcommand("frf", "Frequency response at fixed lambda over an omega window");
  model_opt(frf);
  output_opts(frf);
  step_opts(frf);
  frf->add_option("--window", o.window, "Omega window a:b (default 0.5:2.5)");
  frf->add_option("--lambda", o.lambda, "Nonlinearity parameter")->capture_default_str();
  frf->add_option("--continuation", o.continuation, "arclength (default) or sequential")
      ->check(CLI::IsMember({"arclength", "sequential"}));

  CLI::App* pl = app.add_subcommand("trace-phase-lag", "Resonance curve in lambda, phase-lag condition");
  CLI::App* ht = app.add_subcommand("trace-tangent", "Resonance curve in lambda, horizontal-tangent condition");
  for (CLI::App* s : {pl, ht}) {
    model_opt(s);
    output_opts(s);
    step_opts(s);
    resonance_opts(s);
    s->add_option("--window", o.window, "Lambda window a:b (default 0:2)");
    s->add_option("--continuation", o.continuation, "sequential (default) or arclength")
        ->check(CLI::IsMember({"arclength", "sequential"}));
  }

  CLI::App* sa = app.add_subcommand("solutions-at", "All resonance points at lambda-star on a traced curve");
  CLI::App* bp = app.add_subcommand(
      "branch-probe", "FRFs grown from every resonance point at lambda-star, with connectivity");
  for (CLI::App* s : {sa, bp}) {
    model_opt(s);
    output_opts(s);
    step_opts(s);
    resonance_opts(s);
    s->add_option("--window", o.window, "Lambda window of the traced curve a:b (default 0:5)");
    s->add_option("--lambda-star", o.lambda_star, "Lambda value to probe")->capture_default_str();
    s->add_option("--method", o.method, "Resonance condition")
        ->check(CLI::IsMember({"phase-lag", "tangent"}))
        ->capture_default_str();
    s->add_option("--continuation", o.continuation, "arclength (default) or sequential")
        ->check(CLI::IsMember({"arclength", "sequential"}));
  }
  bp->add_option("--connect-tolerance", o.connect_tolerance,
                 "Normalized distance below which two FRF branches count as connected")
      ->capture_default_str();

  CLI::App* vj = app.add_subcommand("verify-jacobian", "Compare analytical Jacobians with central differences");
  model_opt(vj);
  resonance_opts(vj);
  vj->add_option("--lambda", o.lambda, "Nonlinearity parameter")->capture_default_str();
  vj->add_option("--samples", o.samples, "Random states")->capture_default_str();
  vj->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  vj->add_option("--tolerance", o.tolerance, "Largest accepted relative discrepancy")->capture_default_str();

  CLI::App* cx = app.add_subcommand("complexity", "Operation-count ratios of the two resonance conditions");
  cx->add_option("--nh", o.nh, "Harmonic order")->capture_default_str();
  cx->add_option("--ndof", o.ndof, "Degrees of freedom")->capture_default_str();

  CLI::App* fb = app.add_subcommand("frf-batch", "Frequency responses at several lambda values, concurrently");
  model_opt(fb);
  output_opts(fb);
  step_opts(fb);
  fb->add_option("--window", o.window, "Omega window a:b (default 0.5:2.5)");
  fb->add_option("--lambdas", o.lambdas, "Lambda values")->required()->delimiter(',');
  fb->footer("Writes <output stem>.lambda<i>.<ext> per value. RESONANCE_TRACER_THREADS caps the thread count.");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error kind=usage message=\"" << one_line(e.what()) << "\"\n";
    return 2;
  }

  try {
    if (frf->parsed()) return run_frf(o);
    if (pl->parsed()) return run_trace(o, ResonanceMethod::phase_lag);
    if (ht->parsed()) return run_trace(o, ResonanceMethod::horizontal_tangent);
    if (sa->parsed()) return run_solutions_at(o);
    if (bp->parsed()) return run_branch_probe(o);
    if (vj->parsed()) return run_verify_jacobian(o);
    if (cx->parsed()) return run_complexity(o);
    if (fb->parsed()) return run_frf_batch(o);
  } catch (const Error& e) {
    std::cerr << "error kind=" << to_string(e.kind()) << " message=\"" << one_line(e.what()) << "\"\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 2;
}
