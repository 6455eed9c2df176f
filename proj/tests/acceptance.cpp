// Acceptance study for the AC-OPF learning pipeline.
//
// Each numbered check prints exactly one PASS/FAIL line with the measured
// quantities; the process exits with the number of failed checks. Sizes,
// seeds, and reduced training schedules are read from configs/acceptance.json
// so the exact configuration of every run is recorded alongside the code.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acopf/evaluation.hpp"
#include "oracles.hpp"

using json = nlohmann::json;
using namespace acopf;

namespace {

std::string data_path(const std::string& name) {
  return std::string(ACOPF_DATA_DIR) + "/" + name;
}

NetworkCase load_fixture(const std::string& name) {
  return parse_case(oracle::read_file(data_path(name)));
}

struct Tally {
  int failed = 0;
  std::vector<std::pair<int, std::string>> lines;
  void report(int id, const std::string& name, bool pass,
              const std::string& detail) {
    std::ostringstream ss;
    ss << (pass ? "PASS" : "FAIL") << "  criterion " << id << " — " << name
       << ": " << detail;
    lines.emplace_back(id, ss.str());
    std::cerr << ss.str() << std::endl;  // progress echo in run order
    failed += !pass;
  }
  void print_sorted() {
    std::sort(lines.begin(), lines.end());
    for (const auto& [id, line] : lines) std::cout << line << "\n";
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss.precision(prec);
  ss << v;
  return ss.str();
}

// ---- shared model fitting ------------------------------------------------

MlpModel fit_model(const NetworkCase& c,
                   const std::vector<const SampleRecord*>& recs, InputMode mode,
                   const std::vector<int>& hidden, int epochs, double lr,
                   std::uint64_t init_seed, AdamState* adam_out = nullptr) {
  const OutputCodec codec = voltage_codec(c);
  std::vector<Eigen::VectorXd> ins, outs;
  for (const auto* r : recs) {
    ins.push_back(raw_input(r->load_p, r->load_q, r->x0, mode));
    outs.push_back(codec.encode(voltage_target(c, r->solution.v)));
  }
  std::vector<int> sizes = {static_cast<int>(ins[0].size())};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output_dim(c));
  MlpModel m = init_mlp(sizes, init_seed);
  m.codec = codec;
  m.input_scaler = fit_scaler(ins);
  m.output_scaler = fit_scaler(outs);

  Eigen::MatrixXd x(m.d_in(), static_cast<Eigen::Index>(ins.size()));
  Eigen::MatrixXd y(m.d_out(), static_cast<Eigen::Index>(ins.size()));
  for (std::size_t k = 0; k < ins.size(); ++k) {
    x.col(static_cast<Eigen::Index>(k)) = scale_input(m, ins[k]);
    y.col(static_cast<Eigen::Index>(k)) =
        encode_target(m, voltage_target(c, recs[k]->solution.v));
  }
  AdamState st = init_adam(m);
  TrainConfig tc;
  tc.batch_size = 50;
  tc.max_epochs = epochs;
  tc.learning_rate = lr;
  train(m, st, x, y, Eigen::MatrixXd(), Eigen::MatrixXd(), tc);
  if (adam_out) *adam_out = st;
  return m;
}

std::vector<const SampleRecord*> converged_records(const Dataset& ds) {
  std::vector<const SampleRecord*> out;
  for (const auto& r : ds.records)
    if (r.converged) out.push_back(&r);
  return out;
}

// ---- criterion 1: two-bus bistability vs the quadratic oracle -------------

void criterion_1(Tally& t, const json& cfg) {
  const NetworkCase c = load_fixture("case2.m");
  const AdmittanceMatrix a = build_admittance(c);
  const double pd = cfg.at("p_d");
  const double tol = cfg.at("tol");
  const double x_line = c.branches[0].x;
  const double v1 = 0.9;

  int tested = 0;
  double worst_pf = 0.0, worst_opf = 0.0;
  bool all_converged = true;
  for (int k = 0; k < cfg.at("q_count").get<int>(); ++k) {
    const double qd =
        cfg.at("q_start").get<double>() + cfg.at("q_step").get<double>() * k;
    const auto roots = oracle::two_bus_roots(v1, 0.0, x_line, pd, qd);
    if (!roots.exists || roots.u_low <= 0.0) continue;
    ++tested;

    PfSpec spec;
    spec.slack = 0;
    spec.vm_set = Eigen::Vector2d(v1, 0.0);
    spec.p_set = Eigen::Vector2d(0.0, -pd);
    spec.q_set = Eigen::Vector2d(0.0, -qd);

    Eigen::VectorXd lp = Eigen::VectorXd::Zero(2), lq = Eigen::VectorXd::Zero(2);
    lp[1] = pd;
    lq[1] = qd;
    const OpfProblem prob = assemble_problem(c, lp, lq);

    for (bool high : {true, false}) {
      const double u = high ? roots.u_high : roots.u_low;
      const double vm = std::sqrt(u);
      const double va = oracle::two_bus_angle(v1, 0.0, x_line, pd, qd, u);

      VoltageProfile start = VoltageProfile::flat(2, v1);
      start.vm[1] = vm * (high ? 1.02 : 0.98);
      start.va[1] = va;
      const auto pf = solve_powerflow(c, a, spec, start);
      all_converged = all_converged && pf.converged;
      if (pf.converged)
        worst_pf = std::max(worst_pf, std::abs(pf.voltages.vm[1] - vm));

      PrimalStart s;
      s.p_g = Eigen::VectorXd::Constant(1, pd);
      // the lossless line still consumes reactive power: x |I|^2
      s.q_g = Eigen::VectorXd::Constant(
          1, qd + x_line * (pd * pd + qd * qd) / u);
      s.vm = Eigen::Vector2d(v1, vm);
      s.va = Eigen::Vector2d(0.0, va);
      const OpfOutcome out = solve_opf(prob, s);
      all_converged = all_converged && out.converged;
      if (out.converged)
        worst_opf = std::max(worst_opf, std::abs(out.solution.v.vm[1] - vm));
    }
  }
  const bool pass = tested >= 100 && all_converged && worst_pf < tol &&
                    worst_opf < tol;
  t.report(1, "two-bus bistability matches the quadratic root oracle", pass,
           std::to_string(tested) + " load points, both roots recovered; max "
           "|vm error| power flow " + fmt(worst_pf) + ", opf " +
           fmt(worst_opf) + " (tol " + fmt(tol) + ")");
}

// ---- criteria 2 & 6 share the two-bus labeled-generation machinery --------

struct BranchStudy {
  Dataset train_ds, test_ds;
  MlpModel aug, base;
};

BranchStudy run_branch_study(const NetworkCase& c, const json& cfg,
                             int mix_low, int mix_high) {
  LoadProfile prof = synth_load_profile(
      c, cfg.at("n_loads"), daily_curve_11(), cfg.at("jitter"),
      cfg.at("profile_seed").get<std::uint64_t>());
  GenerateOptions go;
  go.workers = cfg.at("workers");
  Dataset ds = generate_dataset(c, prof, cfg.at("k_init"),
                                cfg.at("gen_seed").get<std::uint64_t>(), go);
  ClassifyRule rule;
  rule.bus = 1;
  rule.threshold = cfg.at("label_threshold");
  rule.dead_band = 1e-6;
  label_records(ds, rule);
  Dataset mixed = mix_dataset(ds, mix_low, mix_high);

  BranchStudy st;
  std::tie(st.train_ds, st.test_ds) =
      split_dataset(mixed, cfg.at("split_fraction"),
                    cfg.at("split_seed").get<std::uint64_t>());
  const auto recs = converged_records(st.train_ds);
  const std::vector<int> hidden = cfg.at("hidden").get<std::vector<int>>();
  const int epochs = cfg.at("epochs");
  const double lr = cfg.at("learning_rate");
  const std::uint64_t seed = cfg.value("init_seed", std::uint64_t{3});
  st.aug = fit_model(c, recs, InputMode::augmented, hidden, epochs, lr, seed);
  st.base = fit_model(c, recs, InputMode::load_only, hidden, epochs, lr, seed);
  return st;
}

// Branch-conditional |V2| errors of a model over a record set.
struct BranchRmse {
  double overall = 0.0, low = 0.0, high = 0.0;
  int n = 0;
};

BranchRmse branch_rmse(const NetworkCase& c, const AdmittanceMatrix& a,
                       const MlpModel& m, InputMode mode, const Dataset& ds) {
  double se = 0.0, se_low = 0.0, se_high = 0.0;
  int n = 0, n_low = 0, n_high = 0;
  for (const auto& r : ds.records) {
    if (!r.converged) continue;
    const DnnSolution s = solve_dnn(c, a, m, r.load_p, r.load_q, r.x0, mode);
    const double e = s.voltages.vm[1] - r.solution.v.vm[1];
    se += e * e;
    ++n;
    if (r.label == BranchLabel::low_cost) {
      se_low += e * e;
      ++n_low;
    } else {
      se_high += e * e;
      ++n_high;
    }
  }
  BranchRmse out;
  out.overall = std::sqrt(se / std::max(1, n));
  out.low = std::sqrt(se_low / std::max(1, n_low));
  out.high = std::sqrt(se_high / std::max(1, n_high));
  out.n = n;
  return out;
}

void criterion_2(Tally& t, const json& cfg, const NetworkCase& c,
                 const AdmittanceMatrix& a, const BranchStudy& st) {
  // generalization gap between the two schemes: held-out RMSE ratio
  const BranchRmse test_aug =
      branch_rmse(c, a, st.aug, InputMode::augmented, st.test_ds);
  const BranchRmse test_base =
      branch_rmse(c, a, st.base, InputMode::load_only, st.test_ds);
  // representational fit: can the scheme reproduce both solution branches
  // it was shown? (the load-only baseline cannot fit even its training
  // data — the branches are a multi-valued function of the load alone)
  const BranchRmse fit_aug =
      branch_rmse(c, a, st.aug, InputMode::augmented, st.train_ds);

  const double ratio = test_base.overall / test_aug.overall;
  const double ratio_min = cfg.at("rmse_ratio_min");
  const double branch_max = cfg.at("branch_rmse_max");
  const int total = test_aug.n + fit_aug.n;
  const bool pass = test_aug.n >= 400 && total >= 2000 && ratio >= ratio_min &&
                    fit_aug.low < branch_max && fit_aug.high < branch_max;
  t.report(2, "load-only baseline fails where the augmented model learns",
           pass,
           std::to_string(total) + " balanced samples; held-out |V2| rmse "
           "baseline " + fmt(test_base.overall) + " vs augmented " +
               fmt(test_aug.overall) + " (ratio " + fmt(ratio) +
               ", need >= " + fmt(ratio_min) +
               "); fitted branch-conditional rmse low " + fmt(fit_aug.low) +
               " / high " + fmt(fit_aug.high) + " (need < " + fmt(branch_max) +
               "; held-out conditional low " + fmt(test_aug.low) + " / high " +
               fmt(test_aug.high) + ")");
}

// ---- criterion 3: 39-bus convergence + independent certificate ------------

Dataset generate_population(const NetworkCase& c, const json& cfg) {
  LoadProfile prof = synth_load_profile(
      c, cfg.at("n_loads"), daily_curve_11(), cfg.at("jitter"),
      cfg.at("profile_seed").get<std::uint64_t>());
  GenerateOptions go;
  go.workers = cfg.at("workers");
  go.angle_range = cfg.at("angle_range");
  return generate_dataset(c, prof, cfg.at("k_init"),
                          cfg.at("gen_seed").get<std::uint64_t>(), go);
}

void criterion_3(Tally& t, const json& cfg, const NetworkCase& c,
                 const Dataset& ds) {
  const int total = static_cast<int>(ds.records.size());
  std::vector<const SampleRecord*> conv = converged_records(ds);

  // re-solve every converged sample and run the independent certificate
  std::atomic<int> next{0}, certified{0};
  const int n_threads = std::max(1, cfg.at("workers").get<int>());
  std::vector<std::thread> pool;
  for (int w = 0; w < n_threads; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < static_cast<int>(conv.size());
           i = next.fetch_add(1)) {
        const SampleRecord& r = *conv[i];
        const OpfProblem prob = assemble_problem(c, r.load_p, r.load_q);
        const OpfOutcome o = solve_opf(prob, r.x0);
        if (o.converged && check_kkt_certificate(c, r.load_p, r.load_q, o).ok)
          certified.fetch_add(1);
      }
    });
  for (auto& th : pool) th.join();

  const double frac = static_cast<double>(conv.size()) / total;
  const double min_frac = cfg.at("min_converged_fraction");
  const bool pass = total >= 500 && frac >= min_frac &&
                    certified.load() == static_cast<int>(conv.size());
  t.report(3, "39-bus solver population converges and certifies", pass,
           std::to_string(conv.size()) + "/" + std::to_string(total) +
               " converged (" + fmt(100 * frac) + "%, need >= " +
               fmt(100 * min_frac) + "%); " +
               std::to_string(certified.load()) + "/" +
               std::to_string(conv.size()) + " pass the KKT certificate");
}

// ---- criterion 4: repeated solves give bitwise-identical digests ----------

void criterion_4(Tally& t, const json& cfg) {
  const NetworkCase c = load_fixture("case2r.m");
  Rng rng(cfg.at("seed").get<std::uint64_t>());
  const int n_inputs = cfg.at("n_inputs");
  const int repeats = cfg.at("repeats");
  int solves = 0, stable = 0;
  for (int i = 0; i < n_inputs; ++i) {
    Eigen::VectorXd lp = Eigen::VectorXd::Zero(2), lq = Eigen::VectorXd::Zero(2);
    const double scale = rng.uniform(0.7, 1.15);
    lp[1] = 0.5 * scale;
    lq[1] = 0.3 * scale;
    const InitialPoint x0 = sample_initial_point(c, rng);
    const OpfProblem prob = assemble_problem(c, lp, lq);
    const OpfOutcome first = solve_opf(prob, x0);
    ++solves;
    bool same = true;
    for (int r = 1; r < repeats; ++r) {
      const OpfOutcome again = solve_opf(prob, x0);
      ++solves;
      same = same && again.trajectory_digest == first.trajectory_digest &&
             again.iterations == first.iterations;
    }
    stable += same;
  }
  const bool pass = solves >= 1000 && stable == n_inputs;
  t.report(4, "repeated solves are bitwise-identical", pass,
           std::to_string(solves) + " solves over " +
               std::to_string(n_inputs) + " random inputs; " +
               std::to_string(stable) + "/" + std::to_string(n_inputs) +
               " inputs gave one trajectory digest each");
}

// ---- criterion 5: finite-difference gradient checks -----------------------

Eigen::VectorXd pack_params(const MlpModel& m) {
  Eigen::VectorXd theta(parameter_count(m));
  int at = 0;
  for (int l = 0; l < m.n_layers(); ++l) {
    for (int i = 0; i < m.weights[l].rows(); ++i)
      for (int j = 0; j < m.weights[l].cols(); ++j)
        theta[at++] = m.weights[l](i, j);
    for (int i = 0; i < m.biases[l].size(); ++i) theta[at++] = m.biases[l][i];
  }
  return theta;
}

void unpack_params(MlpModel& m, const Eigen::VectorXd& theta) {
  int at = 0;
  for (int l = 0; l < m.n_layers(); ++l) {
    for (int i = 0; i < m.weights[l].rows(); ++i)
      for (int j = 0; j < m.weights[l].cols(); ++j)
        m.weights[l](i, j) = theta[at++];
    for (int i = 0; i < m.biases[l].size(); ++i) m.biases[l][i] = theta[at++];
  }
}

Eigen::VectorXd pack_grads(const MlpModel& m, const Gradients& g) {
  Eigen::VectorXd v(parameter_count(m));
  int at = 0;
  for (int l = 0; l < m.n_layers(); ++l) {
    for (int i = 0; i < g.d_w[l].rows(); ++i)
      for (int j = 0; j < g.d_w[l].cols(); ++j) v[at++] = g.d_w[l](i, j);
    for (int i = 0; i < g.d_b[l].size(); ++i) v[at++] = g.d_b[l][i];
  }
  return v;
}

// Smallest |pre-activation| over hidden units: finite differences across a
// ReLU kink measure a one-sided slope no subgradient convention matches, so
// trials re-draw their data until every unit is safely off its kink.
double kink_distance(const MlpModel& m, const Eigen::MatrixXd& x) {
  double dist = 1e300;
  Eigen::MatrixXd a = x;
  for (int l = 0; l < m.n_layers(); ++l) {
    a = (m.weights[l] * a).colwise() + m.biases[l];
    if (l + 1 < m.n_layers()) {
      dist = std::min(dist, a.cwiseAbs().minCoeff());
      a = a.cwiseMax(0.0);
    }
  }
  return dist;
}

double network_fd_error(std::uint64_t seed, double fd_step) {
  Rng arch(seed);
  std::vector<int> sizes;
  const int depth = 2 + static_cast<int>(arch.uniform(0.0, 3.0));
  for (int l = 0; l < depth; ++l)
    sizes.push_back(2 + static_cast<int>(arch.uniform(0.0, 6.0)));
  const int n_samples = 2 + static_cast<int>(arch.uniform(0.0, 4.0));

  MlpModel m = init_mlp(sizes, seed);
  Rng brng(seed + 500);
  for (auto& b : m.biases)
    for (int i = 0; i < b.size(); ++i) b[i] = 0.3 * brng.normal();

  Eigen::MatrixXd x(sizes.front(), n_samples), y(sizes.back(), n_samples);
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(seed + 1000 + attempt * 7919);
    for (int k = 0; k < n_samples; ++k) {
      for (int i = 0; i < x.rows(); ++i) x(i, k) = rng.normal();
      for (int i = 0; i < y.rows(); ++i) y(i, k) = rng.normal();
    }
    if (kink_distance(m, x) > 1e-3) break;
  }
  Gradients g;
  backward(m, x, y, g);
  const Eigen::VectorXd analytic = pack_grads(m, g);
  const Eigen::VectorXd theta0 = pack_params(m);
  auto loss_at = [&](const Eigen::VectorXd& theta) {
    MlpModel probe = m;
    unpack_params(probe, theta);
    return mse_loss(forward_batch(probe, x), y);
  };
  const Eigen::VectorXd fd = oracle::fd_gradient(loss_at, theta0, fd_step);
  double worst = 0.0;
  for (int i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) /
                                std::max(1e-8, std::abs(fd[i])));
  return worst;
}

void criterion_5(Tally& t, const json& cfg) {
  const int trials = cfg.at("trials");
  const double tol = cfg.at("tol");
  const double fd_step = cfg.at("fd_step");

  double worst_net = 0.0;
  for (int i = 0; i < trials; ++i)
    worst_net = std::max(worst_net, network_fd_error(9000 + i, fd_step));

  const NetworkCase c = load_fixture("case2r.m");
  Eigen::VectorXd lp = Eigen::VectorXd::Zero(2), lq = Eigen::VectorXd::Zero(2);
  lp[1] = 0.5;
  lq[1] = 0.3;
  const OpfProblem p = assemble_problem(c, lp, lq);
  Rng rng(77);
  double worst_grad = 0.0, worst_hess = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    PrimalStart s = sample_initial_point(c, rng);
    NewtonState st = init_state(p, s);
    for (int i = p.n_primal; i < p.n_primal + p.n_eq; ++i)
      st.z_full[i] = rng.uniform(-1.0, 1.0);
    for (int i = p.n_primal + p.n_eq; i < p.z_dim(); ++i)
      st.z_full[i] = rng.uniform(0.5, 2.0);
    const double mu = rng.uniform(0.1, 1.0);

    const Eigen::VectorXd g = grad_lagrangian(p, st.z_full, mu);
    auto lag = [&](const Eigen::VectorXd& z_full) {
      const auto x = z_full.segment(0, p.n_primal);
      const auto lam = z_full.segment(p.n_primal, p.n_eq);
      const auto z = z_full.segment(p.n_primal + p.n_eq, p.n_ineq);
      const auto sl =
          z_full.segment(p.n_primal + p.n_eq + p.n_ineq, p.n_ineq);
      const ConstraintEval ev = eval_constraints(p, x);
      return eval_objective(p, x) - lam.dot(ev.c_eq) - z.dot(ev.c_in - sl) -
             mu * sl.array().log().sum();
    };
    const Eigen::VectorXd fd = oracle::fd_gradient(lag, st.z_full, fd_step);
    worst_grad = std::max(worst_grad,
                          (g - fd).cwiseAbs().maxCoeff() /
                              std::max(1.0, g.cwiseAbs().maxCoeff()));

    const Eigen::MatrixXd h = hess_lagrangian(p, st.z_full, mu);
    auto grad_at = [&](const Eigen::VectorXd& z) {
      return grad_lagrangian(p, z, mu);
    };
    const Eigen::MatrixXd fdh = oracle::fd_jacobian(grad_at, st.z_full, fd_step);
    worst_hess = std::max(worst_hess,
                          (h - fdh).cwiseAbs().maxCoeff() /
                              std::max(1.0, h.cwiseAbs().maxCoeff()));
  }
  const bool pass = worst_net < tol && worst_grad < tol && worst_hess < tol;
  t.report(5, "analytic gradients match central finite differences", pass,
           std::to_string(trials) + " trials each; worst relative error — "
           "network backward " + fmt(worst_net) + ", solver gradient " +
               fmt(worst_grad) + ", solver hessian " + fmt(worst_hess) +
               " (tol " + fmt(tol) + ")");
}

// ---- criterion 6: desk-scale optimality/mismatch table analogue -----------

void criterion_6(Tally& t, const json& cfg, const NetworkCase& c,
                 const AdmittanceMatrix& a) {
  json bcfg = cfg;
  bcfg["label_threshold"] = 0.45;
  bcfg["split_fraction"] = 0.8;
  bcfg["split_seed"] = 5;
  bcfg["init_seed"] = 3;

  BenchmarkOptions bo;
  bo.time_solver = false;
  bo.measure_latency = false;
  auto etas = [&](const BranchStudy& st) {
    bo.mode = InputMode::augmented;
    const EvaluationReport ra = benchmark(st.aug, st.test_ds, c, a, bo);
    bo.mode = InputMode::load_only;
    const EvaluationReport rb = benchmark(st.base, st.test_ds, c, a, bo);
    return std::make_pair(ra, rb);
  };

  const BranchStudy bal = run_branch_study(c, bcfg, 1, 1);
  const auto [bal_aug, bal_base] = etas(bal);
  const BranchStudy unb =
      run_branch_study(c, bcfg, cfg.at("unbalanced_low"),
                       cfg.at("unbalanced_high"));
  const auto [unb_aug, unb_base] = etas(unb);

  const double floor = cfg.at("eta_opt_floor");
  const bool pass = std::abs(bal_aug.eta_opt) < std::abs(bal_base.eta_opt) &&
                    bal_aug.eta_opt > floor &&
                    bal_aug.eta_qd < bal_base.eta_qd &&
                    unb_aug.eta_qd < unb_base.eta_qd;
  t.report(6, "augmented scheme beats the baseline on the table analogue",
           pass,
           "balanced eta_opt aug " + fmt(bal_aug.eta_opt) + "% vs base " +
               fmt(bal_base.eta_opt) + "% (floor " + fmt(floor) +
               "%); eta_qd aug/base balanced " + fmt(bal_aug.eta_qd) + "/" +
               fmt(bal_base.eta_qd) + "%, unbalanced " + fmt(unb_aug.eta_qd) +
               "/" + fmt(unb_base.eta_qd) + "%");
}

// ---- criterion 7: inference speedup over the cold solver ------------------

void criterion_7(Tally& t, const json& cfg, const NetworkCase& c,
                 const AdmittanceMatrix& a, const Dataset& pop) {
  const MlpModel model = fit_model(
      c, converged_records(pop), InputMode::augmented,
      cfg.at("hidden").get<std::vector<int>>(), cfg.at("epochs"),
      cfg.at("learning_rate"), 1);

  Dataset subset;
  subset.meta = pop.meta;
  const int n = cfg.at("n_timed_samples");
  for (const auto& r : pop.records) {
    if (!r.converged) continue;
    subset.records.push_back(r);
    if (static_cast<int>(subset.records.size()) == n) break;
  }
  BenchmarkOptions bo;
  bo.mode = InputMode::augmented;
  bo.time_solver = true;
  bo.measure_latency = true;
  const EvaluationReport rep = benchmark(model, subset, c, a, bo);
  const double min_speedup = cfg.at("min_speedup");
  const bool pass = static_cast<int>(subset.records.size()) == n &&
                    rep.speedup >= min_speedup;
  t.report(7, "single-sample inference outruns a cold solver solve", pass,
           "mean over " + std::to_string(subset.records.size()) +
               " samples: solver " + fmt(rep.t_solver_ms) + " ms vs dnn " +
               fmt(rep.t_dnn_ms) + " ms — speedup " + fmt(rep.speedup) +
               "x (need >= " + fmt(min_speedup) + "x)");
}

// ---- criterion 8: usable answers where the solver fails --------------------

void criterion_8(Tally& t, const json& cfg, const NetworkCase& c,
                 const AdmittanceMatrix& a) {
  const Dataset ds = generate_population(c, cfg);
  std::vector<const SampleRecord*> train_recs = converged_records(ds);
  std::vector<const SampleRecord*> hard;
  for (const auto& r : ds.records)
    if (!r.converged) hard.push_back(&r);

  const int min_hard = cfg.at("min_nonconverged");
  if (static_cast<int>(hard.size()) < min_hard || train_recs.empty()) {
    t.report(8, "model stays accurate on solver-divergent inputs", false,
             "only " + std::to_string(hard.size()) +
                 " non-convergent samples generated (need >= " +
                 std::to_string(min_hard) + ")");
    return;
  }

  const MlpModel model = fit_model(
      c, train_recs, InputMode::augmented,
      cfg.at("hidden").get<std::vector<int>>(), cfg.at("epochs"),
      cfg.at("learning_rate"), 1);

  double sum_pd = 0.0, sum_qd = 0.0;
  int in_box = 0;
  for (const auto* r : hard) {
    const DnnSolution sol =
        solve_dnn(c, a, model, r->load_p, r->load_q, r->x0,
                  InputMode::augmented);
    const MismatchPct mm = load_mismatch(sol, r->load_p, r->load_q);
    sum_pd += mm.p;
    sum_qd += mm.q;
    bool ok = true;
    for (int g = 0; g < c.n_gen(); ++g) {
      const auto& gen = c.generators[g];
      ok = ok && sol.p_g[g] >= gen.p_min / c.base_mva - 1e-12 &&
           sol.p_g[g] <= gen.p_max / c.base_mva + 1e-12 &&
           sol.q_g[g] >= gen.q_min / c.base_mva - 1e-12 &&
           sol.q_g[g] <= gen.q_max / c.base_mva + 1e-12;
    }
    for (int b = 0; b < c.n_bus(); ++b)
      ok = ok && sol.voltages.vm[b] >= c.buses[b].v_min - 1e-12 &&
           sol.voltages.vm[b] <= c.buses[b].v_max + 1e-12;
    in_box += ok;
  }
  const double mean_pd = sum_pd / hard.size();
  const double mean_qd = sum_qd / hard.size();
  const double bar = cfg.at("max_mean_mismatch_pct");
  const bool pass = in_box == static_cast<int>(hard.size()) &&
                    mean_pd < bar && mean_qd < bar;
  t.report(8, "model stays accurate on solver-divergent inputs", pass,
           std::to_string(hard.size()) + " non-convergent inputs (trained on " +
               std::to_string(train_recs.size()) + " convergent); " +
               std::to_string(in_box) + " fully inside boxes; mean |eta_PD| " +
               fmt(mean_pd) + "%, |eta_QD| " + fmt(mean_qd) + "% (need < " +
               fmt(bar) + "%)");
}

// ---- criterion 9: end-to-end byte-identical reproducibility ---------------

struct PipelineBytes {
  std::string dataset, checkpoint, report_csv, report_txt, per_sample;
};

PipelineBytes run_pipeline(const NetworkCase& c, const AdmittanceMatrix& a,
                           const json& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  LoadProfile prof =
      synth_load_profile(c, cfg.at("n_loads"), daily_curve_11(), 0.02,
                         cfg.at("seed").get<std::uint64_t>());
  GenerateOptions go;
  go.workers = 1;
  Dataset ds = generate_dataset(c, prof, cfg.at("k_init"),
                                cfg.at("seed").get<std::uint64_t>(), go);
  auto [train_ds, test_ds] = split_dataset(ds, 0.8, 1);

  AdamState st;
  const MlpModel m = fit_model(
      c, converged_records(train_ds), InputMode::augmented,
      cfg.at("hidden").get<std::vector<int>>(), cfg.at("epochs"),
      cfg.at("learning_rate"), 1, &st);

  BenchmarkOptions bo;
  bo.mode = InputMode::augmented;
  bo.time_solver = false;
  bo.measure_latency = false;
  bo.per_sample_csv = dir + "/per_sample.csv";
  StudyColumn col{"augmented/test", benchmark(m, test_ds, c, a, bo)};
  col.report.tag = col.name;
  write_study_report({col}, dir + "/report.csv", dir + "/report.txt");

  PipelineBytes out;
  out.dataset = serialize_dataset(ds, c.n_bus(), c.n_gen());
  out.checkpoint = serialize_model(m, st, 0);
  out.report_csv = oracle::read_file(dir + "/report.csv");
  out.report_txt = oracle::read_file(dir + "/report.txt");
  out.per_sample = oracle::read_file(dir + "/per_sample.csv");
  return out;
}

void criterion_9(Tally& t, const json& cfg) {
  const NetworkCase c = load_fixture("case2r.m");
  const AdmittanceMatrix a = build_admittance(c);
  const std::string base =
      (std::filesystem::temp_directory_path() / "acopf_acceptance").string();
  const PipelineBytes r1 = run_pipeline(c, a, cfg, base + "/run1");
  const PipelineBytes r2 = run_pipeline(c, a, cfg, base + "/run2");
  const bool ds_ok = r1.dataset == r2.dataset;
  const bool ck_ok = r1.checkpoint == r2.checkpoint;
  const bool rp_ok = r1.report_csv == r2.report_csv &&
                     r1.report_txt == r2.report_txt &&
                     r1.per_sample == r2.per_sample;
  t.report(9, "generate→train→evaluate reruns are byte-identical",
           ds_ok && ck_ok && rp_ok,
           std::string("dataset ") + (ds_ok ? "identical" : "DIFFERS") +
               ", checkpoint " + (ck_ok ? "identical" : "DIFFERS") +
               ", reports " + (rp_ok ? "identical" : "DIFFER"));
}

}  // namespace

int main(int argc, char** argv) {
  // optional argv[1]: alternate config path (defaults to the recorded one)
  const std::string cfg_path =
      argc > 1 ? argv[1] : std::string(ACOPF_CONFIG_DIR) + "/acceptance.json";
  json cfg;
  {
    std::ifstream in(cfg_path);
    if (!in) {
      std::cerr << "cannot open " << cfg_path << "\n";
      return 64;
    }
    in >> cfg;
  }

  Tally t;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  criterion_1(t, cfg.at("two_bus_grid"));

  {
    const NetworkCase c2r = load_fixture("case2r.m");
    const AdmittanceMatrix a2r = build_admittance(c2r);
    json bcfg = cfg.at("branch_learning");
    const BranchStudy st = run_branch_study(c2r, bcfg, 1, 1);
    criterion_2(t, bcfg, c2r, a2r, st);
    std::cerr << "[t=" << fmt(elapsed()) << "s]\n";
    criterion_6(t, cfg.at("table_analogue"), c2r, a2r);
    std::cerr << "[t=" << fmt(elapsed()) << "s]\n";
  }

  {
    const NetworkCase c39 = load_fixture("case39.m");
    const AdmittanceMatrix a39 = build_admittance(c39);
    const Dataset pop = generate_population(c39, cfg.at("solver_population"));
    criterion_3(t, cfg.at("solver_population"), c39, pop);
    std::cerr << "[t=" << fmt(elapsed()) << "s]\n";
    criterion_7(t, cfg.at("speedup"), c39, a39, pop);
    std::cerr << "[t=" << fmt(elapsed()) << "s]\n";
    criterion_8(t, cfg.at("robustness"), c39, a39);
    std::cerr << "[t=" << fmt(elapsed()) << "s]\n";
  }

  criterion_4(t, cfg.at("digest_uniqueness"));
  criterion_5(t, cfg.at("gradient_checks"));
  criterion_9(t, cfg.at("reproducibility"));
  std::cerr << "[total " << fmt(elapsed()) << "s]\n";

  t.print_sorted();
  if (t.failed) std::cout << t.failed << " criteria failed\n";
  else std::cout << "all 9 criteria passed\n";
  return t.failed;
}
