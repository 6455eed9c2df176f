#pragma once

// Metrics over network solutions versus solver references: optimality gap,
// box/branch satisfaction percentages, load-serving mismatch, wall-time
// benchmarks with speedup, best-of-many inference, and study reports in
// CSV/text table form.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "acopf/inference.hpp"

namespace acopf {

inline double optimality_gap(double obj_dnn, double obj_ref) {
  if (!(obj_ref > 0.0))
    throw std::invalid_argument("reference objective must be positive");
  return 100.0 * (obj_dnn - obj_ref) / obj_ref;
}

struct SatisfactionPct {
  double p_g = 100.0, q_g = 100.0, s_line = 100.0;
};

// Percentage of active bounds / reactive bounds / branch limits satisfied to
// 1e-6 p.u. Unlimited branches (s_max = 0) are vacuously satisfied; a case
// with no limited branch scores 100.
inline SatisfactionPct constraint_satisfaction(const DnnSolution& sol,
                                               const NetworkCase& c,
                                               const AdmittanceMatrix& a,
                                               double tol = 1e-6) {
  SatisfactionPct pct;
  int ok_p = 0, ok_q = 0;
  for (int g = 0; g < c.n_gen(); ++g) {
    const auto& gen = c.generators[g];
    if (sol.p_g[g] >= gen.p_min / c.base_mva - tol &&
        sol.p_g[g] <= gen.p_max / c.base_mva + tol)
      ++ok_p;
    if (sol.q_g[g] >= gen.q_min / c.base_mva - tol &&
        sol.q_g[g] <= gen.q_max / c.base_mva + tol)
      ++ok_q;
  }
  if (c.n_gen() > 0) {
    pct.p_g = 100.0 * ok_p / c.n_gen();
    pct.q_g = 100.0 * ok_q / c.n_gen();
  }
  int limited = 0, ok_s = 0;
  for (const auto& bf : branch_flows(sol.voltages, c, a)) {
    if (bf.limit_pu <= 0.0) continue;
    ++limited;
    if (bf.max_end() <= bf.limit_pu + tol) ++ok_s;
  }
  if (limited > 0) pct.s_line = 100.0 * ok_s / limited;
  return pct;
}

struct MismatchPct {
  double p = 0.0, q = 0.0;                // 100·Σ|residual| / Σ|load|
  double p_signed = 0.0, q_signed = 0.0;  // 100·Σ residual / Σ|load|
};

// Unserved-load percentage at pure load buses. Zero total load with zero
// residual is 0%; nonzero residual against zero load is undefined (NaN).
inline MismatchPct load_mismatch(const DnnSolution& sol,
                                 const Eigen::VectorXd& load_p,
                                 const Eigen::VectorXd& load_q) {
  MismatchPct m;
  auto one = [](const Eigen::VectorXd& resid, const Eigen::VectorXd& load,
                double& abs_pct, double& signed_pct) {
    const double total = load.cwiseAbs().sum();
    if (total <= 0.0) {
      const bool clean = resid.cwiseAbs().maxCoeff() == 0.0;
      abs_pct = clean ? 0.0 : std::numeric_limits<double>::quiet_NaN();
      signed_pct = abs_pct;
      return;
    }
    abs_pct = 100.0 * resid.cwiseAbs().sum() / total;
    signed_pct = 100.0 * resid.sum() / total;
  };
  one(sol.residual_p, load_p, m.p, m.p_signed);
  one(sol.residual_q, load_q, m.q, m.q_signed);
  return m;
}

struct EvaluationReport {
  std::string tag;
  int sample_count = 0;
  double eta_opt = 0.0;
  double eta_pg = 0.0, eta_qg = 0.0, eta_sl = 0.0;
  double eta_pd = 0.0, eta_qd = 0.0;
  double eta_pd_signed = 0.0, eta_qd_signed = 0.0;
  double t_solver_ms = 0.0, t_dnn_ms = 0.0;
  double speedup = 0.0;  // t_solver_ms / t_dnn_ms; 0 when solver path skipped
  bool has_reference = true;  // false on non-convergent studies: no eta_opt
};

struct BenchmarkOptions {
  InputMode mode = InputMode::augmented;
  bool time_solver = true;   // re-run the solver per sample for t_solver
  bool measure_latency = true;  // false: zero wall times, deterministic report
  OpfOptions solver;
  std::string per_sample_csv;  // raw rows persisted here when non-empty
};

inline EvaluationReport benchmark(const MlpModel& model, const Dataset& test,
                                  const NetworkCase& c,
                                  const AdmittanceMatrix& a,
                                  const BenchmarkOptions& opt = {}) {
  if (test.records.empty()) throw std::invalid_argument("empty test set");
  EvaluationReport rep;
  rep.sample_count = static_cast<int>(test.records.size());

  std::ofstream raw;
  if (!opt.per_sample_csv.empty()) {
    raw.open(opt.per_sample_csv, std::ios::trunc);
    if (!raw)
      throw std::runtime_error("cannot open " + opt.per_sample_csv +
                               " for writing");
    raw << "sample,obj_dnn,obj_ref,eta_opt,eta_pg,eta_qg,eta_sl,eta_pd,eta_qd,"
           "t_dnn_us,t_solver_us\n";
  }

  int with_ref = 0;
  for (std::size_t i = 0; i < test.records.size(); ++i) {
    const auto& rec = test.records[i];
    const DnnSolution sol =
        solve_dnn(c, a, model, rec.load_p, rec.load_q, rec.x0, opt.mode);
    const SatisfactionPct sat = constraint_satisfaction(sol, c, a);
    const MismatchPct mis = load_mismatch(sol, rec.load_p, rec.load_q);
    rep.eta_pg += sat.p_g;
    rep.eta_qg += sat.q_g;
    rep.eta_sl += sat.s_line;
    rep.eta_pd += mis.p;
    rep.eta_qd += mis.q;
    rep.eta_pd_signed += mis.p_signed;
    rep.eta_qd_signed += mis.q_signed;
    const double lat_us = opt.measure_latency ? sol.latency_us : 0.0;
    rep.t_dnn_ms += lat_us / 1000.0;

    double gap = std::numeric_limits<double>::quiet_NaN();
    double t_solver_us = 0.0;
    if (rec.converged) {
      gap = optimality_gap(sol.objective, rec.objective);
      rep.eta_opt += gap;
      ++with_ref;
    }
    if (opt.time_solver) {
      const auto t0 = std::chrono::steady_clock::now();
      const OpfProblem prob = assemble_problem(c, rec.load_p, rec.load_q);
      solve_opf(prob, rec.x0, opt.solver);
      const auto t1 = std::chrono::steady_clock::now();
      t_solver_us = std::chrono::duration<double, std::micro>(t1 - t0).count();
      rep.t_solver_ms += t_solver_us / 1000.0;
    }
    if (raw.is_open())
      raw << i << ',' << sol.objective << ',' << rec.objective << ',' << gap
          << ',' << sat.p_g << ',' << sat.q_g << ',' << sat.s_line << ','
          << mis.p << ',' << mis.q << ',' << lat_us << ','
          << t_solver_us << '\n';
  }

  const double n = static_cast<double>(rep.sample_count);
  rep.eta_pg /= n;
  rep.eta_qg /= n;
  rep.eta_sl /= n;
  rep.eta_pd /= n;
  rep.eta_qd /= n;
  rep.eta_pd_signed /= n;
  rep.eta_qd_signed /= n;
  rep.t_dnn_ms /= n;
  rep.has_reference = with_ref > 0;
  rep.eta_opt = rep.has_reference ? rep.eta_opt / with_ref
                                  : std::numeric_limits<double>::quiet_NaN();
  if (opt.time_solver) {
    rep.t_solver_ms /= n;
    if (rep.t_dnn_ms > 0.0) rep.speedup = rep.t_solver_ms / rep.t_dnn_ms;
  }
  return rep;
}

// Evaluate the full inference path for each initial point and return the
// least-cost solution; ties go to the lowest input index.
inline DnnSolution parallel_best_of(const NetworkCase& c,
                                    const AdmittanceMatrix& a,
                                    const MlpModel& model,
                                    const Eigen::VectorXd& load_p,
                                    const Eigen::VectorXd& load_q,
                                    const std::vector<InitialPoint>& starts,
                                    InputMode mode = InputMode::augmented) {
  if (starts.empty())
    throw std::invalid_argument("need at least one initial point");
  DnnSolution best;
  bool have = false;
  for (const auto& x0 : starts) {
    DnnSolution sol = solve_dnn(c, a, model, load_p, load_q, x0, mode);
    if (!have || sol.objective < best.objective) {
      best = std::move(sol);
      have = true;
    }
  }
  return best;
}

// ---- study reports ----------------------------------------------------------

struct StudyColumn {
  std::string name;  // e.g. "augmented/balanced"
  EvaluationReport report;
};

namespace eval_detail {

inline std::string fmt(double v, bool present) {
  if (!present || std::isnan(v)) return "-";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

}  // namespace eval_detail

// Metric-per-row comparison table across schemes/datasets, as CSV and
// aligned text. Non-convergent columns print "-" for reference-dependent
// rows (optimality gap, solver time, speedup).
inline void write_study_report(const std::vector<StudyColumn>& cols,
                               const std::string& csv_path,
                               const std::string& text_path) {
  if (cols.empty()) throw std::invalid_argument("no study columns");
  using eval_detail::fmt;
  struct Row {
    const char* label;
    std::function<std::string(const EvaluationReport&)> cell;
  };
  const std::vector<Row> rows = {
      {"eta_opt_pct", [](const EvaluationReport& r) {
         return fmt(r.eta_opt, r.has_reference);
       }},
      {"eta_pg_pct", [](const EvaluationReport& r) { return fmt(r.eta_pg, true); }},
      {"eta_qg_pct", [](const EvaluationReport& r) { return fmt(r.eta_qg, true); }},
      {"eta_sl_pct", [](const EvaluationReport& r) { return fmt(r.eta_sl, true); }},
      {"eta_pd_pct", [](const EvaluationReport& r) {
         return fmt(r.eta_pd_signed, true);
       }},
      {"eta_qd_pct", [](const EvaluationReport& r) {
         return fmt(r.eta_qd_signed, true);
       }},
      {"eta_pd_abs_pct", [](const EvaluationReport& r) { return fmt(r.eta_pd, true); }},
      {"eta_qd_abs_pct", [](const EvaluationReport& r) { return fmt(r.eta_qd, true); }},
      {"t_solver_ms", [](const EvaluationReport& r) {
         return fmt(r.t_solver_ms, r.t_solver_ms > 0.0);
       }},
      {"t_dnn_ms", [](const EvaluationReport& r) { return fmt(r.t_dnn_ms, true); }},
      {"speedup", [](const EvaluationReport& r) {
         return fmt(r.speedup, r.speedup > 0.0);
       }},
      {"samples", [](const EvaluationReport& r) {
         return std::to_string(r.sample_count);
       }},
  };

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  csv << "metric";
  for (const auto& c : cols) csv << ',' << c.name;
  csv << '\n';
  for (const auto& row : rows) {
    csv << row.label;
    for (const auto& c : cols) csv << ',' << row.cell(c.report);
    csv << '\n';
  }

  std::ofstream txt(text_path, std::ios::trunc);
  if (!txt) throw std::runtime_error("cannot open " + text_path);
  auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(s.size() < w ? w - s.size() : 1, ' ');
  };
  txt << pad("metric", 16);
  for (const auto& c : cols) txt << pad(c.name, 24);
  txt << '\n';
  for (const auto& row : rows) {
    txt << pad(row.label, 16);
    for (const auto& c : cols) txt << pad(row.cell(c.report), 24);
    txt << '\n';
  }
}

// Plot data for the two-branch illustration on a two-bus fixture: sweep the
// load and record, per grid point, the solver's two branch voltages (found
// from a high- and a low-voltage start) and each model's prediction from the
// same starts. Columns read as CSV for external plotting.
inline void write_branch_curve_csv(const NetworkCase& c,
                                   const AdmittanceMatrix& a,
                                   const MlpModel& augmented,
                                   const MlpModel* baseline,
                                   const std::vector<double>& load_scales,
                                   int probe_bus, const std::string& path,
                                   const OpfOptions& solver = {}) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "scale,qd_pu,v_ref_high,v_ref_low,v_aug_high_start,v_aug_low_start,"
         "v_baseline\n";
  for (double s : load_scales) {
    Eigen::VectorXd lp = Eigen::VectorXd::Zero(c.n_bus());
    Eigen::VectorXd lq = Eigen::VectorXd::Zero(c.n_bus());
    for (const auto& b : c.buses) {
      lp[b.id] = b.default_pd / c.base_mva * s;
      lq[b.id] = b.default_qd / c.base_mva * s;
    }
    auto start_at = [&](double vm_probe) {
      InitialPoint x0;
      x0.p_g = Eigen::VectorXd::Zero(c.n_gen());
      x0.q_g = Eigen::VectorXd::Zero(c.n_gen());
      x0.vm = Eigen::VectorXd::Ones(c.n_bus());
      x0.va = Eigen::VectorXd::Zero(c.n_bus());
      for (int g = 0; g < c.n_gen(); ++g)
        x0.p_g[g] = 0.5 * (c.generators[g].p_min + c.generators[g].p_max) /
                    c.base_mva;
      for (const auto& b : c.buses)
        x0.vm[b.id] = 0.5 * (b.v_min + b.v_max);
      x0.vm[probe_bus] = vm_probe;
      return x0;
    };
    const InitialPoint hi = start_at(c.buses[probe_bus].v_max * 0.95);
    const InitialPoint lo = start_at(c.buses[probe_bus].v_min * 1.3);

    const OpfProblem prob = assemble_problem(c, lp, lq);
    const OpfOutcome ref_hi = solve_opf(prob, hi, solver);
    const OpfOutcome ref_lo = solve_opf(prob, lo, solver);
    const DnnSolution aug_hi = solve_dnn(c, a, augmented, lp, lq, hi);
    const DnnSolution aug_lo = solve_dnn(c, a, augmented, lp, lq, lo);

    auto cell = [&](bool ok, double v) {
      return eval_detail::fmt(v, ok);
    };
    out << s << ',' << lq[probe_bus] << ','
        << cell(ref_hi.converged, ref_hi.solution.v.vm[probe_bus]) << ','
        << cell(ref_lo.converged, ref_lo.solution.v.vm[probe_bus]) << ','
        << aug_hi.voltages.vm[probe_bus] << ','
        << aug_lo.voltages.vm[probe_bus] << ',';
    if (baseline) {
      const DnnSolution b =
          solve_dnn(c, a, *baseline, lp, lq, hi, InputMode::load_only);
      out << b.voltages.vm[probe_bus];
    } else {
      out << '-';
    }
    out << '\n';
  }
}

}  // namespace acopf
