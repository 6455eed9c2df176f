// Command-line entry point for the whole pipeline:
//   parse     validate a case file and print a summary
//   generate  synthesize a (load, initial point) -> solution dataset
//   train     fit a network on a dataset file and write a checkpoint
//   evaluate  metric/timing study over datasets, or a solver-only audit
//   solve     one-shot solve of a single input (solver, dnn, or best-of-k)
//
// Settings come from a JSON config file (--config) with flag overrides;
// flags win. Every run writes its resolved config and digest next to its
// outputs. Exit codes: 0 success, 2 config error, 3 data/file error,
// 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "acopf/evaluation.hpp"

using json = nlohmann::ordered_json;
using namespace acopf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& what) : std::runtime_error(what), code(c) {}
};

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError(kExitData, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw CliError(kExitConfig, path + ": " + e.what());
  }
}

std::uint64_t digest_of(const json& resolved) {
  const std::string dump = resolved.dump();
  Fnv1a h;
  h.update(dump.data(), dump.size());
  return h.digest();
}

void write_resolved_config(json resolved, const std::string& dir) {
  std::filesystem::create_directories(dir);
  resolved["config_digest"] = digest_of(resolved);
  std::ofstream out(std::filesystem::path(dir) / "config.json",
                    std::ios::trunc);
  if (!out) throw CliError(kExitData, "cannot write resolved config in " + dir);
  out << resolved.dump(2) << '\n';
}

NetworkCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError(kExitData, "cannot open case file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  NetworkCase c;
  try {
    c = parse_case(text);
  } catch (const std::exception& e) {
    throw CliError(kExitData, path + ": " + e.what());
  }
  const ValidationReport rep = validate_case(c);
  if (!rep.ok()) {
    std::string msg = path + ": invalid case";
    for (const auto& v : rep.violations) msg += "\n  - " + v;
    throw CliError(kExitData, msg);
  }
  return c;
}

Eigen::VectorXd vec_from_json(const json& j) {
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

InitialPoint x0_from_json(const json& j) {
  InitialPoint x0;
  x0.p_g = vec_from_json(j.at("p_g"));
  x0.q_g = vec_from_json(j.at("q_g"));
  x0.vm = vec_from_json(j.at("vm"));
  x0.va = vec_from_json(j.at("va"));
  return x0;
}

InputMode mode_of(const MlpModel& m, const NetworkCase& c) {
  return m.d_in() == 2 * c.n_bus() ? InputMode::load_only
                                   : InputMode::augmented;
}

// ---- generate ----------------------------------------------------------------

int cmd_generate(const json& cfg, const json& resolved_base) {
  std::string case_path = cfg.value("case", "");
  if (case_path.empty()) throw CliError(kExitConfig, "generate: 'case' required");
  const int n = cfg.value("n_instances", 2760);
  const double granularity = cfg.value("granularity_s", 30.0);
  const double jitter = cfg.value("jitter", 0.0);
  const int k_init = cfg.value("k_init", 40);
  const std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
  GenerateOptions opt;
  opt.angle_range = cfg.value("angle_range", M_PI / 6);
  opt.workers = cfg.value("workers", 1);
  const std::string out = cfg.value("out", "");
  if (out.empty()) throw CliError(kExitConfig, "generate: 'out' required");
  if (k_init < 1) throw CliError(kExitConfig, "generate: k_init must be >= 1");
  if (n < 1) throw CliError(kExitConfig, "generate: n_instances must be >= 1");

  std::vector<double> curve = daily_curve_11();
  if (cfg.contains("curve")) curve = cfg.at("curve").get<std::vector<double>>();

  const NetworkCase c = load_case(case_path);
  const LoadProfile prof =
      synth_load_profile(c, n, curve, jitter, seed, granularity);
  Dataset ds = generate_dataset(c, prof, k_init, seed, opt);
  ds.meta.config_digest = digest_of(resolved_base);

  if (cfg.contains("label")) {
    const json& l = cfg.at("label");
    ClassifyRule rule;
    rule.bus = l.value("bus", 1);
    rule.threshold = l.at("threshold").get<double>();
    rule.dead_band = l.value("dead_band", 1e-9);
    rule.above_is_low_cost = l.value("above_is_low_cost", true);
    label_records(ds, rule);
  }
  if (cfg.contains("mix")) {
    const json& m = cfg.at("mix");
    ds = mix_dataset(ds, m.value("low", 1), m.value("high", 1));
    ds.meta.config_digest = digest_of(resolved_base);
  }

  const std::string dir =
      std::filesystem::path(out).parent_path().string().empty()
          ? "."
          : std::filesystem::path(out).parent_path().string();
  write_resolved_config(resolved_base, dir);

  if (cfg.contains("split")) {
    const json& s = cfg.at("split");
    const auto [train_ds, test_ds] = split_dataset(
        ds, s.value("train_fraction", 0.8), s.value("seed", std::uint64_t{1}));
    save_dataset(train_ds, c.n_bus(), c.n_gen(), s.at("train_out"));
    save_dataset(test_ds, c.n_bus(), c.n_gen(), s.at("test_out"));
    std::cout << "wrote " << train_ds.records.size() << " train / "
              << test_ds.records.size() << " test records\n";
  }
  save_dataset(ds, c.n_bus(), c.n_gen(), out);
  if (cfg.contains("csv")) export_csv(ds, cfg.at("csv"));
  std::cout << "wrote " << ds.records.size() << " records to " << out << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(const json& cfg, const json& resolved_base) {
  const std::string case_path = cfg.value("case", "");
  const std::string ds_path = cfg.value("dataset", "");
  const std::string out = cfg.value("out", "");
  if (case_path.empty() || ds_path.empty() || out.empty())
    throw CliError(kExitConfig, "train: 'case', 'dataset', and 'out' required");
  const std::string mode_str = cfg.value("mode", "augmented");
  if (mode_str != "augmented" && mode_str != "load_only")
    throw CliError(kExitConfig, "train: mode must be augmented or load_only");
  const InputMode mode =
      mode_str == "augmented" ? InputMode::augmented : InputMode::load_only;

  std::vector<int> hidden = {1024, 768, 512};
  if (cfg.contains("hidden")) hidden = cfg.at("hidden").get<std::vector<int>>();
  TrainConfig tc;
  tc.batch_size = cfg.value("batch_size", 50);
  tc.max_epochs = cfg.value("epochs", 4000);
  tc.learning_rate = cfg.value("learning_rate", 1e-4);
  tc.shuffle_seed = cfg.value("shuffle_seed", std::uint64_t{1});
  const std::uint64_t init_seed = cfg.value("init_seed", std::uint64_t{1});
  const double val_fraction = cfg.value("val_fraction", 0.1);
  std::cout << "batch_size=" << tc.batch_size << " epochs=" << tc.max_epochs
            << " learning_rate=" << tc.learning_rate << "\n";

  const NetworkCase c = load_case(case_path);
  int nb = 0, ng = 0;
  const Dataset ds = load_dataset(ds_path, &nb, &ng);
  if (nb != c.n_bus() || ng != c.n_gen())
    throw CliError(kExitData, "train: dataset dimensions do not match case");

  // converged records only; targets are the solver's voltage solutions
  std::vector<const SampleRecord*> recs;
  for (const auto& r : ds.records)
    if (r.converged) recs.push_back(&r);
  if (recs.empty()) throw CliError(kExitData, "train: no converged records");

  // validation = last 10% of distinct load instances (history only)
  std::vector<int> loads;
  for (const auto* r : recs) loads.push_back(r->load_index);
  std::sort(loads.begin(), loads.end());
  loads.erase(std::unique(loads.begin(), loads.end()), loads.end());
  const int n_val_loads =
      std::min(static_cast<int>(loads.size()) - 1,
               static_cast<int>(val_fraction * loads.size()));
  const int val_from =
      n_val_loads > 0 ? loads[loads.size() - n_val_loads] : loads.back() + 1;

  std::vector<const SampleRecord*> tr, va;
  for (const auto* r : recs)
    (r->load_index >= val_from ? va : tr).push_back(r);

  const OutputCodec codec = voltage_codec(c);
  std::vector<Eigen::VectorXd> ins, outs;
  for (const auto* r : tr) {
    ins.push_back(raw_input(r->load_p, r->load_q, r->x0, mode));
    outs.push_back(codec.encode(voltage_target(c, r->solution.v)));
  }

  std::vector<int> sizes = {static_cast<int>(ins[0].size())};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(output_dim(c));
  MlpModel model = init_mlp(sizes, init_seed);
  model.codec = codec;
  model.input_scaler = fit_scaler(ins);
  model.output_scaler = fit_scaler(outs);

  auto pack = [&](const std::vector<const SampleRecord*>& rs,
                  Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
    x.resize(model.d_in(), rs.size());
    y.resize(model.d_out(), rs.size());
    for (std::size_t k = 0; k < rs.size(); ++k) {
      x.col(k) = scale_input(
          model, raw_input(rs[k]->load_p, rs[k]->load_q, rs[k]->x0, mode));
      y.col(k) =
          encode_target(model, voltage_target(c, rs[k]->solution.v));
    }
  };
  Eigen::MatrixXd x, y, xv, yv;
  pack(tr, x, y);
  pack(va, xv, yv);

  AdamState st = init_adam(model);
  TrainHistory hist;
  try {
    hist = train(model, st, x, y, xv, yv, tc);
  } catch (const std::exception& e) {
    throw CliError(kExitNumerical, e.what());
  }

  const std::string dir =
      std::filesystem::path(out).parent_path().string().empty()
          ? "."
          : std::filesystem::path(out).parent_path().string();
  write_resolved_config(resolved_base, dir);
  save_model(model, st, out, digest_of(resolved_base));
  if (cfg.contains("history")) {
    std::ofstream h(cfg.at("history").get<std::string>(), std::ios::trunc);
    h << "epoch,train_mse,val_mse\n";
    for (std::size_t e = 0; e < hist.train_mse.size(); ++e)
      h << e << ',' << hist.train_mse[e] << ',' << hist.val_mse[e] << '\n';
  }
  std::cout << "trained on " << tr.size() << " samples (" << va.size()
            << " validation), final train mse "
            << (hist.train_mse.empty() ? 0.0 : hist.train_mse.back())
            << ", checkpoint " << out << "\n";
  return 0;
}

// ---- evaluate -------------------------------------------------------------------

int solver_audit(const NetworkCase& c, const Dataset& ds,
                 const std::string& out_path) {
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw CliError(kExitData, "cannot write " + out_path);
  out << "sample,converged,certified,objective,iterations,kkt_residual\n";
  int conv = 0, cert = 0;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const OpfProblem prob = assemble_problem(c, r.load_p, r.load_q);
    const OpfOutcome o = solve_opf(prob, r.x0);
    const bool ok =
        o.converged && check_kkt_certificate(c, r.load_p, r.load_q, o).ok;
    conv += o.converged;
    cert += ok;
    out << i << ',' << o.converged << ',' << ok << ',' << o.objective << ','
        << o.iterations << ',' << o.kkt_residual << '\n';
  }
  std::cout << "audit: " << conv << "/" << ds.records.size() << " converged, "
            << cert << " certified -> " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const json& cfg, const json& resolved_base) {
  const std::string case_path = cfg.value("case", "");
  const std::string out_dir = cfg.value("out_dir", "");
  if (case_path.empty() || out_dir.empty())
    throw CliError(kExitConfig, "evaluate: 'case' and 'out_dir' required");
  if (!cfg.contains("datasets") || cfg.at("datasets").empty())
    throw CliError(kExitConfig, "evaluate: 'datasets' list required");

  const NetworkCase c = load_case(case_path);
  const AdmittanceMatrix a = build_admittance(c);
  std::filesystem::create_directories(out_dir);
  write_resolved_config(resolved_base, out_dir);

  auto load_model_at = [&](const std::string& path) {
    if (!std::filesystem::exists(path))
      throw CliError(kExitData, "model file not found: " + path);
    return load_model(path);
  };

  std::optional<MlpModel> model, baseline;
  if (cfg.contains("model")) model = load_model_at(cfg.at("model"));
  if (cfg.contains("baseline")) baseline = load_model_at(cfg.at("baseline"));

  std::vector<StudyColumn> cols;
  for (const auto& d : cfg.at("datasets")) {
    const std::string name = d.at("name");
    int nb = 0, ng = 0;
    const Dataset ds = load_dataset(d.at("path"), &nb, &ng);
    if (ds.records.empty())
      throw CliError(kExitData, "evaluate: empty test set " + name);

    if (!model) {  // solver-only mode: feasibility/KKT audit
      solver_audit(c, ds,
                   (std::filesystem::path(out_dir) / ("audit_" + name + ".csv"))
                       .string());
      continue;
    }
    BenchmarkOptions opt;
    opt.time_solver = d.value("time_solver", true);
    opt.measure_latency = d.value("measure_latency", true);
    auto run = [&](const MlpModel& m, const std::string& scheme) {
      opt.mode = mode_of(m, c);
      opt.per_sample_csv =
          (std::filesystem::path(out_dir) /
           ("per_sample_" + scheme + "_" + name + ".csv")).string();
      cols.push_back({scheme + "/" + name, benchmark(m, ds, c, a, opt)});
      cols.back().report.tag = cols.back().name;
    };
    run(*model, "augmented");
    if (baseline) run(*baseline, "baseline");
  }

  if (model) {
    write_study_report(
        cols, (std::filesystem::path(out_dir) / "report.csv").string(),
        (std::filesystem::path(out_dir) / "report.txt").string());
    std::cout << "wrote report for " << cols.size() << " columns to "
              << out_dir << "\n";
  }
  if (cfg.contains("branch_curve") && model) {
    const json& bc = cfg.at("branch_curve");
    write_branch_curve_csv(
        c, a, *model, baseline ? &*baseline : nullptr,
        bc.at("scales").get<std::vector<double>>(), bc.value("probe_bus", 1),
        (std::filesystem::path(out_dir) / "branch_curve.csv").string());
  }
  return 0;
}

// ---- solve --------------------------------------------------------------------

int cmd_solve(const std::string& case_path, const std::string& load_path,
              const std::string& x0_path, const std::string& mode,
              const std::string& model_path, const std::string& out_path) {
  const NetworkCase c = load_case(case_path);
  const json jload = load_json(load_path);
  const Eigen::VectorXd lp = vec_from_json(jload.at("p"));
  const Eigen::VectorXd lq = vec_from_json(jload.at("q"));
  if (lp.size() != c.n_bus() || lq.size() != c.n_bus())
    throw CliError(kExitData, "load vector length does not match case");

  const json jx0 = load_json(x0_path);
  std::vector<InitialPoint> starts;
  if (jx0.is_array())
    for (const auto& e : jx0) starts.push_back(x0_from_json(e));
  else
    starts.push_back(x0_from_json(jx0));
  if (starts.empty()) throw CliError(kExitConfig, "no initial points given");

  json rec;
  rec["mode"] = mode;
  int exit_code = 0;
  if (mode == "solver") {
    const OpfProblem prob = assemble_problem(c, lp, lq);
    const OpfOutcome o = solve_opf(prob, starts[0]);
    rec["converged"] = o.converged;
    rec["objective"] = o.objective;
    rec["iterations"] = o.iterations;
    rec["kkt_residual"] = o.kkt_residual;
    rec["certified"] =
        o.converged && check_kkt_certificate(c, lp, lq, o).ok;
    rec["trajectory_digest"] = o.trajectory_digest;
    rec["p_g"] = vec_to_json(o.solution.p_g);
    rec["q_g"] = vec_to_json(o.solution.q_g);
    rec["vm"] = vec_to_json(o.solution.v.vm);
    rec["va"] = vec_to_json(o.solution.v.va);
    if (!o.converged) exit_code = kExitNumerical;
  } else if (mode == "dnn" || mode == "best-of-k") {
    if (model_path.empty())
      throw CliError(kExitConfig, "--model required for mode " + mode);
    if (!std::filesystem::exists(model_path))
      throw CliError(kExitData, "model file not found: " + model_path);
    const MlpModel m = load_model(model_path);
    const AdmittanceMatrix a = build_admittance(c);
    const DnnSolution sol =
        mode == "dnn"
            ? solve_dnn(c, a, m, lp, lq, starts[0], mode_of(m, c))
            : parallel_best_of(c, a, m, lp, lq, starts, mode_of(m, c));
    rec["objective"] = sol.objective;
    rec["latency_us"] = sol.latency_us;
    rec["p_g"] = vec_to_json(sol.p_g);
    rec["q_g"] = vec_to_json(sol.q_g);
    rec["vm"] = vec_to_json(sol.voltages.vm);
    rec["va"] = vec_to_json(sol.voltages.va);
    rec["residual_p"] = vec_to_json(sol.residual_p);
    rec["residual_q"] = vec_to_json(sol.residual_q);
    json clips = json::array();
    for (const auto& e : sol.clip_events)
      clips.push_back({{"variable", e.variable}, {"amount", e.amount}});
    rec["clip_events"] = clips;
  } else {
    throw CliError(kExitConfig, "mode must be solver, dnn, or best-of-k");
  }

  if (out_path.empty()) {
    std::cout << rec.dump(2) << '\n';
  } else {
    std::ofstream out(out_path, std::ios::trunc);
    out << rec.dump(2) << '\n';
  }
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AC optimal power flow learning pipeline"};
  app.require_subcommand(1);

  std::string config_path, case_path, load_path, x0_path, out_path, model_path;
  std::string mode = "solver";

  auto* parse_cmd = app.add_subcommand("parse", "validate a case file");
  parse_cmd->add_option("case", case_path, "case file path")->required();

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
  };
  auto* gen_cmd = app.add_subcommand("generate", "synthesize a dataset");
  add_config(gen_cmd);
  std::string gen_case, gen_out;
  int gen_k = -1, gen_n = -1, gen_workers = -1;
  std::uint64_t gen_seed = 0;
  auto* o_case = gen_cmd->add_option("--case", gen_case, "case file");
  auto* o_out = gen_cmd->add_option("--out", gen_out, "dataset output path");
  auto* o_k = gen_cmd->add_option("--k-init", gen_k, "initial points per load");
  auto* o_n = gen_cmd->add_option("--n", gen_n, "load instances");
  auto* o_seed = gen_cmd->add_option("--seed", gen_seed, "generation seed");
  auto* o_workers = gen_cmd->add_option("--workers", gen_workers, "worker count");

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_config(train_cmd);
  std::string tr_dataset, tr_out;
  int tr_epochs = -1;
  auto* t_ds = train_cmd->add_option("--dataset", tr_dataset, "dataset file");
  auto* t_out = train_cmd->add_option("--out", tr_out, "checkpoint path");
  auto* t_ep = train_cmd->add_option("--epochs", tr_epochs, "training epochs");

  auto* eval_cmd = app.add_subcommand("evaluate", "run a metric study");
  add_config(eval_cmd);

  auto* solve_cmd = app.add_subcommand("solve", "solve a single input");
  solve_cmd->add_option("case", case_path, "case file path")->required();
  solve_cmd->add_option("--load", load_path, "load JSON {p:[],q:[]}")
      ->required();
  solve_cmd->add_option("--x0", x0_path, "initial point JSON (or array)")
      ->required();
  solve_cmd->add_option("--mode", mode, "solver | dnn | best-of-k");
  solve_cmd->add_option("--model", model_path, "model checkpoint");
  solve_cmd->add_option("--out", out_path, "output JSON path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (parse_cmd->parsed()) {
      const NetworkCase c = load_case(case_path);
      std::cout << c.name << ": " << c.n_bus() << " buses, " << c.n_branch()
                << (c.n_branch() == 1 ? " branch, " : " branches, ")
                << c.n_gen() << (c.n_gen() == 1 ? " generator" : " generators")
                << "\n";
      return 0;
    }

    json cfg = json::object();
    if (!config_path.empty()) cfg = load_json(config_path);

    if (gen_cmd->parsed()) {
      if (o_case->count()) cfg["case"] = gen_case;
      if (o_out->count()) cfg["out"] = gen_out;
      if (o_k->count()) cfg["k_init"] = gen_k;
      if (o_n->count()) cfg["n_instances"] = gen_n;
      if (o_seed->count()) cfg["seed"] = gen_seed;
      if (o_workers->count()) cfg["workers"] = gen_workers;
      return cmd_generate(cfg, cfg);
    }
    if (train_cmd->parsed()) {
      if (t_ds->count()) cfg["dataset"] = tr_dataset;
      if (t_out->count()) cfg["out"] = tr_out;
      if (t_ep->count()) cfg["epochs"] = tr_epochs;
      return cmd_train(cfg, cfg);
    }
    if (eval_cmd->parsed()) return cmd_evaluate(cfg, cfg);
    if (solve_cmd->parsed())
      return cmd_solve(case_path, load_path, x0_path, mode, model_path,
                       out_path);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
