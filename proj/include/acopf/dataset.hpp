#pragma once

// Dataset pipeline: daily load profiles, random initial points, solver
// labeling, branch classification, mixing to a target ratio, and train/test
// splitting. Generation is deterministic for a fixed (case, seed, config)
// regardless of worker count, and dataset files are byte-identical across
// regenerations.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "acopf/case.hpp"
#include "acopf/opf.hpp"
#include "acopf/rng.hpp"

namespace acopf {

// The augmented input X0 has exactly the shape of a primal start.
using InitialPoint = PrimalStart;

struct LoadProfile {
  // per-instance per-bus demand, p.u.
  std::vector<Eigen::VectorXd> p, q;
  double granularity_s = 30.0;

  int size() const { return static_cast<int>(p.size()); }
};

// A fixed in-repo daily demand shape: 11 points over [0h, 24h], linearly
// interpolated, spanning [0.8, 1.1] of default load (morning ramp, evening
// peak, overnight trough).
inline const std::vector<double>& daily_curve_11() {
  static const std::vector<double> c = {0.80, 0.82, 0.88, 0.95, 1.00, 1.04,
                                        1.07, 1.10, 1.02, 0.92, 0.84};
  return c;
}

inline double curve_value(const std::vector<double>& curve, double hours) {
  if (curve.empty()) throw std::invalid_argument("empty demand curve");
  if (curve.size() == 1) return curve[0];
  const double span = 24.0 / static_cast<double>(curve.size() - 1);
  double t = hours / span;
  const int lo = std::min(static_cast<int>(curve.size()) - 2,
                          std::max(0, static_cast<int>(t)));
  const double frac = std::min(1.0, std::max(0.0, t - lo));
  return curve[lo] + frac * (curve[lo + 1] - curve[lo]);
}

inline LoadProfile synth_load_profile(const NetworkCase& c, int n,
                                      const std::vector<double>& curve,
                                      double jitter, std::uint64_t seed,
                                      double granularity_s = 30.0) {
  if (n < 1) throw std::invalid_argument("instance count must be >= 1");
  for (double v : curve)
    if (v <= 0.0) throw std::invalid_argument("demand curve values must be > 0");

  LoadProfile prof;
  prof.granularity_s = granularity_s;
  prof.p.reserve(n);
  prof.q.reserve(n);
  Rng rng(seed);
  for (int k = 0; k < n; ++k) {
    const double scale = curve_value(curve, k * granularity_s / 3600.0);
    Eigen::VectorXd lp = Eigen::VectorXd::Zero(c.n_bus());
    Eigen::VectorXd lq = Eigen::VectorXd::Zero(c.n_bus());
    for (const auto& b : c.buses) {
      const double noise = jitter == 0.0 ? 0.0 : jitter * rng.uniform(-1.0, 1.0);
      lp[b.id] = b.default_pd / c.base_mva * scale * (1.0 + noise);
      lq[b.id] = b.default_qd / c.base_mva * scale * (1.0 + noise);
    }
    prof.p.push_back(std::move(lp));
    prof.q.push_back(std::move(lq));
  }
  return prof;
}

inline InitialPoint sample_initial_point(const NetworkCase& c, Rng& rng,
                                         double angle_range = M_PI / 6) {
  InitialPoint x0;
  x0.p_g.resize(c.n_gen());
  x0.q_g.resize(c.n_gen());
  for (int g = 0; g < c.n_gen(); ++g) {
    const auto& gen = c.generators[g];
    x0.p_g[g] = rng.uniform(gen.p_min, gen.p_max) / c.base_mva;
    x0.q_g[g] = rng.uniform(gen.q_min, gen.q_max) / c.base_mva;
  }
  x0.vm.resize(c.n_bus());
  x0.va.resize(c.n_bus());
  for (const auto& b : c.buses) {
    x0.vm[b.id] = rng.uniform(b.v_min, b.v_max);
    x0.va[b.id] = b.bus_type == BusType::slack
                      ? 0.0
                      : rng.uniform(-angle_range, angle_range);
  }
  return x0;
}

enum class BranchLabel : std::int8_t {
  unlabeled = -1,
  low_cost = 0,
  high_cost = 1,
};

struct SampleRecord {
  int load_index = 0;  // which profile instance produced this record
  Eigen::VectorXd load_p, load_q;
  InitialPoint x0;
  PrimalPoint solution;  // last iterate when converged == false
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  BranchLabel label = BranchLabel::unlabeled;
};

struct ScalerStats {
  Eigen::VectorXd mean, scale;  // scale is never zero (degenerate -> 1)
};

struct DatasetMeta {
  std::string case_name;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  int mix_low = 0, mix_high = 0;  // 0:0 = unmixed
  ScalerStats input_scaler, output_scaler;  // empty until training-side fit
};

struct Dataset {
  DatasetMeta meta;
  std::vector<SampleRecord> records;
};

struct GenerateOptions {
  double angle_range = M_PI / 6;
  int workers = 1;
  OpfOptions solver;
};

// Order-preserving parallel map over (load, x0) pairs. The x0 for global
// sample index i is drawn from Rng::stream(seed, i), and results are
// committed by index, so the output is identical for any worker count.
inline Dataset generate_dataset(const NetworkCase& c, const LoadProfile& prof,
                                int k_init, std::uint64_t seed,
                                const GenerateOptions& opt = {}) {
  if (k_init < 1) throw std::invalid_argument("k_init must be >= 1");
  const int total = prof.size() * k_init;
  Dataset ds;
  ds.meta.case_name = c.name;
  ds.meta.seed = seed;
  ds.records.resize(total);

  const int workers = std::max(1, opt.workers);
  auto run = [&](int w) {
    for (int i = w; i < total; i += workers) {
      const int load_idx = i / k_init;
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
      SampleRecord rec;
      rec.load_index = load_idx;
      rec.load_p = prof.p[load_idx];
      rec.load_q = prof.q[load_idx];
      rec.x0 = sample_initial_point(c, rng, opt.angle_range);
      const OpfProblem prob = assemble_problem(c, rec.load_p, rec.load_q);
      const OpfOutcome out = solve_opf(prob, rec.x0, opt.solver);
      rec.solution = out.solution;
      rec.objective = out.objective;
      rec.converged = out.converged;
      rec.iterations = out.iterations;
      ds.records[i] = std::move(rec);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  return ds;
}

// Threshold rule on one bus's solved voltage magnitude. On the two-bus
// fixtures the high-voltage root is the low-loss, low-cost solution.
struct ClassifyRule {
  int bus = 1;
  double threshold = 0.0;
  double dead_band = 1e-9;
  bool above_is_low_cost = true;
};

inline BranchLabel classify_branch(const SampleRecord& rec,
                                   const ClassifyRule& rule) {
  const double v = rec.solution.v.vm[rule.bus];
  if (std::abs(v - rule.threshold) <= rule.dead_band)
    return BranchLabel::unlabeled;
  const bool above = v > rule.threshold;
  return (above == rule.above_is_low_cost) ? BranchLabel::low_cost
                                           : BranchLabel::high_cost;
}

inline void label_records(Dataset& ds, const ClassifyRule& rule) {
  for (auto& rec : ds.records)
    rec.label = rec.converged ? classify_branch(rec, rule)
                              : BranchLabel::unlabeled;
}

// Per load instance, subsample labeled records to an exact low:high count
// ratio: with t = max integer such that low*t and high*t are available,
// keep the first low*t low-cost and high*t high-cost records (input order).
inline Dataset mix_dataset(const Dataset& ds, int ratio_low, int ratio_high) {
  if (ratio_low < 0 || ratio_high < 0 || (ratio_low == 0 && ratio_high == 0))
    throw std::invalid_argument("mix ratio must have a positive side");
  Dataset out;
  out.meta = ds.meta;
  out.meta.mix_low = ratio_low;
  out.meta.mix_high = ratio_high;

  int max_load = -1;
  for (const auto& r : ds.records) max_load = std::max(max_load, r.load_index);
  for (int load = 0; load <= max_load; ++load) {
    std::vector<const SampleRecord*> low, high;
    for (const auto& r : ds.records) {
      if (r.load_index != load) continue;
      if (r.label == BranchLabel::low_cost) low.push_back(&r);
      if (r.label == BranchLabel::high_cost) high.push_back(&r);
    }
    if (low.empty() && high.empty()) continue;  // load with no labeled records
    std::size_t t = SIZE_MAX;
    if (ratio_low > 0) t = std::min(t, low.size() / ratio_low);
    if (ratio_high > 0) t = std::min(t, high.size() / ratio_high);
    if (t == 0)
      throw std::runtime_error(
          "load instance " + std::to_string(load) +
          " lacks records of a branch required by the mix ratio");
    for (std::size_t i = 0; i < t * ratio_low; ++i)
      out.records.push_back(*low[i]);
    for (std::size_t i = 0; i < t * ratio_high; ++i)
      out.records.push_back(*high[i]);
  }
  return out;
}

// Split by load instance: every record of one load lands on the same side.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds,
                                                 double train_fraction,
                                                 std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train fraction must be in (0, 1)");
  std::vector<int> loads;
  for (const auto& r : ds.records)
    if (loads.empty() || loads.back() != r.load_index)
      loads.push_back(r.load_index);
  std::sort(loads.begin(), loads.end());
  loads.erase(std::unique(loads.begin(), loads.end()), loads.end());

  Rng rng(seed);
  for (int i = static_cast<int>(loads.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform(0.0, i + 1.0));
    std::swap(loads[i], loads[std::min(j, i)]);
  }
  const int n_train =
      static_cast<int>(train_fraction * static_cast<double>(loads.size()) + 0.5);
  if (n_train == 0 || n_train == static_cast<int>(loads.size()))
    throw std::invalid_argument("split would leave one side empty");

  std::vector<bool> is_train_load(
      *std::max_element(loads.begin(), loads.end()) + 1, false);
  for (int i = 0; i < n_train; ++i) is_train_load[loads[i]] = true;

  std::pair<Dataset, Dataset> out;
  out.first.meta = ds.meta;
  out.second.meta = ds.meta;
  for (const auto& r : ds.records)
    (is_train_load[r.load_index] ? out.first : out.second).records.push_back(r);
  return out;
}

// ---- binary file format ("ACDS") -----------------------------------------
//
// Header: magic "ACDS", u32 version, u32 name length + bytes, u64 seed,
// u64 config digest, i32 mix_low, i32 mix_high, u32 n_bus, u32 n_gen,
// u64 record count, then two scaler blocks (u64 length + doubles for mean
// and scale each; length 0 = absent).
// Record (fixed width given n_bus/n_gen): load_p, load_q [n_bus each];
// x0 p_g, q_g [n_gen], vm, va [n_bus]; solution in the same layout;
// objective (f64); converged (u8); iterations (i32); label (i8);
// load_index (i32). All values little-endian IEEE doubles.

namespace dataset_detail {

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

inline void put_vec(std::string& buf, const Eigen::VectorXd& v) {
  buf.append(reinterpret_cast<const char*>(v.data()),
             sizeof(double) * v.size());
}

template <typename T>
T take(std::istream& in) {
  char raw[sizeof(T)];
  in.read(raw, sizeof(T));
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

inline Eigen::VectorXd take_vec(std::istream& in, std::int64_t n) {
  Eigen::VectorXd v(n);
  in.read(reinterpret_cast<char*>(v.data()), sizeof(double) * n);
  return v;
}

inline void put_scaler(std::string& buf, const ScalerStats& s) {
  put<std::uint64_t>(buf, s.mean.size());
  put_vec(buf, s.mean);
  put_vec(buf, s.scale);
}

inline ScalerStats take_scaler(std::istream& in) {
  ScalerStats s;
  const auto n = take<std::uint64_t>(in);
  s.mean = take_vec(in, n);
  s.scale = take_vec(in, n);
  return s;
}

}  // namespace dataset_detail

inline std::string serialize_dataset(const Dataset& ds, int n_bus, int n_gen) {
  using namespace dataset_detail;
  std::string buf;
  buf.append("ACDS", 4);
  put<std::uint32_t>(buf, 1);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.meta.case_name.size()));
  buf.append(ds.meta.case_name);
  put<std::uint64_t>(buf, ds.meta.seed);
  put<std::uint64_t>(buf, ds.meta.config_digest);
  put<std::int32_t>(buf, ds.meta.mix_low);
  put<std::int32_t>(buf, ds.meta.mix_high);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(n_bus));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(n_gen));
  put<std::uint64_t>(buf, ds.records.size());
  put_scaler(buf, ds.meta.input_scaler);
  put_scaler(buf, ds.meta.output_scaler);
  for (const auto& r : ds.records) {
    put_vec(buf, r.load_p);
    put_vec(buf, r.load_q);
    put_vec(buf, r.x0.p_g);
    put_vec(buf, r.x0.q_g);
    put_vec(buf, r.x0.vm);
    put_vec(buf, r.x0.va);
    put_vec(buf, r.solution.p_g);
    put_vec(buf, r.solution.q_g);
    put_vec(buf, r.solution.v.vm);
    put_vec(buf, r.solution.v.va);
    put<double>(buf, r.objective);
    put<std::uint8_t>(buf, r.converged ? 1 : 0);
    put<std::int32_t>(buf, r.iterations);
    put<std::int8_t>(buf, static_cast<std::int8_t>(r.label));
    put<std::int32_t>(buf, r.load_index);
  }
  return buf;
}

inline void save_dataset(const Dataset& ds, int n_bus, int n_gen,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  const std::string buf = serialize_dataset(ds, n_bus, n_gen);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write to " + path);
}

inline Dataset load_dataset(const std::string& path, int* n_bus_out = nullptr,
                            int* n_gen_out = nullptr) {
  using namespace dataset_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, "ACDS", 4) != 0)
    throw std::runtime_error(path + ": not a dataset file");
  const auto version = take<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error(path + ": unsupported dataset version");
  Dataset ds;
  const auto name_len = take<std::uint32_t>(in);
  ds.meta.case_name.resize(name_len);
  in.read(ds.meta.case_name.data(), name_len);
  ds.meta.seed = take<std::uint64_t>(in);
  ds.meta.config_digest = take<std::uint64_t>(in);
  ds.meta.mix_low = take<std::int32_t>(in);
  ds.meta.mix_high = take<std::int32_t>(in);
  const int n_bus = take<std::uint32_t>(in);
  const int n_gen = take<std::uint32_t>(in);
  const auto count = take<std::uint64_t>(in);
  ds.meta.input_scaler = take_scaler(in);
  ds.meta.output_scaler = take_scaler(in);
  ds.records.resize(count);
  for (auto& r : ds.records) {
    r.load_p = take_vec(in, n_bus);
    r.load_q = take_vec(in, n_bus);
    r.x0.p_g = take_vec(in, n_gen);
    r.x0.q_g = take_vec(in, n_gen);
    r.x0.vm = take_vec(in, n_bus);
    r.x0.va = take_vec(in, n_bus);
    r.solution.p_g = take_vec(in, n_gen);
    r.solution.q_g = take_vec(in, n_gen);
    r.solution.v.vm = take_vec(in, n_bus);
    r.solution.v.va = take_vec(in, n_bus);
    r.objective = take<double>(in);
    r.converged = take<std::uint8_t>(in) != 0;
    r.iterations = take<std::int32_t>(in);
    r.label = static_cast<BranchLabel>(take<std::int8_t>(in));
    r.load_index = take<std::int32_t>(in);
  }
  if (!in) throw std::runtime_error(path + ": truncated dataset file");
  if (n_bus_out) *n_bus_out = n_bus;
  if (n_gen_out) *n_gen_out = n_gen;
  return ds;
}

// Lossless CSV export for inspection: %.17g round-trips doubles exactly.
inline void export_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char num[40];
  auto emit = [&](double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    out << ',' << num;
  };
  out << "load_index,converged,iterations,label,objective,"
         "load_p...,load_q...,x0...,solution...\n";
  for (const auto& r : ds.records) {
    out << r.load_index << ',' << (r.converged ? 1 : 0) << ',' << r.iterations
        << ',' << static_cast<int>(r.label);
    std::snprintf(num, sizeof(num), "%.17g", r.objective);
    out << ',' << num;
    for (const Eigen::VectorXd* v :
         {&r.load_p, &r.load_q, &r.x0.p_g, &r.x0.q_g, &r.x0.vm, &r.x0.va,
          &r.solution.p_g, &r.solution.q_g, &r.solution.v.vm,
          &r.solution.v.va})
      for (int i = 0; i < v->size(); ++i) emit((*v)[i]);
    out << '\n';
  }
}

// Per-coordinate affine standardization; degenerate coordinates get scale 1
// so the map stays invertible.
inline ScalerStats fit_scaler(const std::vector<Eigen::VectorXd>& rows) {
  if (rows.empty()) throw std::invalid_argument("cannot fit scaler on nothing");
  const auto dim = rows[0].size();
  ScalerStats s;
  s.mean = Eigen::VectorXd::Zero(dim);
  for (const auto& r : rows) s.mean += r;
  s.mean /= static_cast<double>(rows.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& r : rows) var += (r - s.mean).cwiseAbs2();
  var /= static_cast<double>(rows.size());
  s.scale = var.cwiseSqrt();
  for (int i = 0; i < s.scale.size(); ++i)
    if (s.scale[i] < 1e-12) s.scale[i] = 1.0;
  return s;
}

}  // namespace acopf
