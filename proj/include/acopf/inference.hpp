#pragma once

// End-to-end network solution path: assemble the (load, initial point)
// feature vector, predict bus voltages, reconstruct injections and
// generations from the balance equations, and clip the result into the
// generation and voltage boxes. Branch-flow violations and load-bus
// residuals are reported, never repaired.

#include <chrono>
#include <stdexcept>
#include <string>
#include <vector>

#include "acopf/dataset.hpp"
#include "acopf/mlp.hpp"
#include "acopf/powerflow.hpp"

namespace acopf {

enum class InputMode {
  augmented,  // [load P ‖ load Q ‖ x0 p_g ‖ x0 q_g ‖ x0 vm ‖ x0 va]
  load_only,  // [load P ‖ load Q] — the comparison baseline
};

struct ClipEvent {
  std::string variable;  // e.g. "p_g[3]"
  double amount = 0.0;   // magnitude of the adjustment, p.u.
};

struct DnnSolution {
  VoltageProfile voltages;
  Eigen::VectorXd p_g, q_g;  // per generator, p.u.
  // Unserved load per bus: -(injection + demand); zero at generator buses
  // where the demand is absorbed into the reconstructed generation.
  Eigen::VectorXd residual_p, residual_q;
  double objective = 0.0;  // $
  std::vector<ClipEvent> clip_events;
  double latency_us = 0.0;
};

inline Eigen::VectorXd raw_input(const Eigen::VectorXd& load_p,
                                 const Eigen::VectorXd& load_q,
                                 const InitialPoint& x0, InputMode mode) {
  const Eigen::Index n_load = load_p.size() + load_q.size();
  const Eigen::Index n_x0 = mode == InputMode::augmented
                                ? x0.p_g.size() + x0.q_g.size() +
                                      x0.vm.size() + x0.va.size()
                                : 0;
  Eigen::VectorXd raw(n_load + n_x0);
  raw.head(load_p.size()) = load_p;
  raw.segment(load_p.size(), load_q.size()) = load_q;
  if (mode == InputMode::augmented) {
    Eigen::Index at = n_load;
    for (const Eigen::VectorXd* v : {&x0.p_g, &x0.q_g, &x0.vm, &x0.va}) {
      raw.segment(at, v->size()) = *v;
      at += v->size();
    }
  }
  return raw;
}

inline Eigen::VectorXd assemble_input(const MlpModel& m,
                                      const Eigen::VectorXd& load_p,
                                      const Eigen::VectorXd& load_q,
                                      const InitialPoint& x0, InputMode mode) {
  const Eigen::VectorXd raw = raw_input(load_p, load_q, x0, mode);
  if (raw.size() != m.d_in() || m.input_scaler.mean.size() != m.d_in())
    throw std::invalid_argument(
        "feature length " + std::to_string(raw.size()) +
        " does not match model input dimension " + std::to_string(m.d_in()));
  return scale_input(m, raw);
}

// ---- model output layout ---------------------------------------------------
//
// The network predicts [vm for every bus ‖ va for every non-slack bus];
// magnitudes are squashed onto [v_min, v_max] by the output codec, angles
// pass through raw, and the slack angle is fixed to 0 by convention.

inline int output_dim(const NetworkCase& c) { return 2 * c.n_bus() - 1; }

inline OutputCodec voltage_codec(const NetworkCase& c) {
  OutputCodec codec = identity_codec(output_dim(c));
  for (const auto& b : c.buses) {
    codec.lo[b.id] = b.v_min;
    codec.hi[b.id] = b.v_max;
  }
  return codec;
}

inline Eigen::VectorXd voltage_target(const NetworkCase& c,
                                      const VoltageProfile& v) {
  Eigen::VectorXd t(output_dim(c));
  t.head(c.n_bus()) = v.vm;
  int at = c.n_bus();
  for (const auto& b : c.buses)
    if (b.id != c.slack_bus()) t[at++] = v.va[b.id];
  return t;
}

inline VoltageProfile voltages_from_output(const NetworkCase& c,
                                           const Eigen::VectorXd& raw_out) {
  if (raw_out.size() != output_dim(c))
    throw std::invalid_argument("model output dimension mismatch");
  VoltageProfile v;
  v.vm = raw_out.head(c.n_bus());
  v.va = Eigen::VectorXd::Zero(c.n_bus());
  int at = c.n_bus();
  for (const auto& b : c.buses)
    if (b.id != c.slack_bus()) v.va[b.id] = raw_out[at++];
  return v;
}

// ---- reconstruction ---------------------------------------------------------

// Invert the balance equations at the predicted voltages: at generator buses
// the bus generation total is injection + demand, split across co-located
// units proportionally to capacity range (equal split on zero-range ties);
// at pure load buses the imbalance is reported as unserved load.
inline void reconstruct(const NetworkCase& c, const AdmittanceMatrix& a,
                        const VoltageProfile& v, const Eigen::VectorXd& load_p,
                        const Eigen::VectorXd& load_q, DnnSolution& sol) {
  if ((v.vm.array() <= 0.0).any())
    throw std::invalid_argument("voltage magnitudes must be positive");
  Eigen::VectorXd p_inj, q_inj;
  bus_injections(v, a, c, p_inj, q_inj);

  sol.p_g = Eigen::VectorXd::Zero(c.n_gen());
  sol.q_g = Eigen::VectorXd::Zero(c.n_gen());
  sol.residual_p = Eigen::VectorXd::Zero(c.n_bus());
  sol.residual_q = Eigen::VectorXd::Zero(c.n_bus());

  std::vector<std::vector<int>> gens_at(c.n_bus());
  for (int g = 0; g < c.n_gen(); ++g)
    gens_at[c.generators[g].bus].push_back(g);

  for (const auto& b : c.buses) {
    const auto& gens = gens_at[b.id];
    if (gens.empty()) {
      sol.residual_p[b.id] = -(p_inj[b.id] + load_p[b.id]);
      sol.residual_q[b.id] = -(q_inj[b.id] + load_q[b.id]);
      continue;
    }
    const double bus_p = p_inj[b.id] + load_p[b.id];
    const double bus_q = q_inj[b.id] + load_q[b.id];
    double p_range = 0.0, q_range = 0.0;
    for (int g : gens) {
      p_range += c.generators[g].p_max - c.generators[g].p_min;
      q_range += c.generators[g].q_max - c.generators[g].q_min;
    }
    for (int g : gens) {
      const double wp = p_range > 0.0
                            ? (c.generators[g].p_max - c.generators[g].p_min) /
                                  p_range
                            : 1.0 / static_cast<double>(gens.size());
      const double wq = q_range > 0.0
                            ? (c.generators[g].q_max - c.generators[g].q_min) /
                                  q_range
                            : 1.0 / static_cast<double>(gens.size());
      sol.p_g[g] = wp * bus_p;
      sol.q_g[g] = wq * bus_q;
    }
  }
}

namespace inference_detail {
inline void clip(DnnSolution& sol, double& value, double lo, double hi,
                 const std::string& name) {
  const double clipped = std::min(hi, std::max(lo, value));
  if (clipped != value) {
    sol.clip_events.push_back({name, std::abs(clipped - value)});
    value = clipped;
  }
}
}  // namespace inference_detail

// Clip voltage magnitudes into their buses' boxes, auditing every
// adjustment. Pinned buses (v_min == v_max) bypass the output squashing, so
// this is what keeps an unconverged model's magnitudes physical.
inline void clip_voltages(DnnSolution& sol, const NetworkCase& c) {
  for (const auto& b : c.buses)
    inference_detail::clip(sol, sol.voltages.vm[b.id], b.v_min, b.v_max,
                           "vm[" + std::to_string(b.id) + "]");
}

// Clip generation and voltage magnitudes into their boxes, auditing every
// adjustment. Idempotent: a second pass records nothing.
inline void post_process(DnnSolution& sol, const NetworkCase& c) {
  for (int g = 0; g < c.n_gen(); ++g) {
    const auto& gen = c.generators[g];
    inference_detail::clip(sol, sol.p_g[g], gen.p_min / c.base_mva,
                           gen.p_max / c.base_mva,
                           "p_g[" + std::to_string(g) + "]");
    inference_detail::clip(sol, sol.q_g[g], gen.q_min / c.base_mva,
                           gen.q_max / c.base_mva,
                           "q_g[" + std::to_string(g) + "]");
  }
  clip_voltages(sol, c);
}

// The full deployable path: scale, forward, decode, reconstruct, clip.
// Latency covers exactly this chain (not model load or case parsing).
inline DnnSolution solve_dnn(const NetworkCase& c, const AdmittanceMatrix& a,
                             const MlpModel& m, const Eigen::VectorXd& load_p,
                             const Eigen::VectorXd& load_q,
                             const InitialPoint& x0,
                             InputMode mode = InputMode::augmented) {
  const auto start = std::chrono::steady_clock::now();
  DnnSolution sol;
  const Eigen::VectorXd features =
      assemble_input(m, load_p, load_q, x0, mode);
  const Eigen::VectorXd out = decode_output(m, forward(m, features));
  sol.voltages = voltages_from_output(c, out);
  // Clip magnitudes first so the reconstructed injections, residuals and
  // objective all correspond to the voltages actually reported.
  clip_voltages(sol, c);
  reconstruct(c, a, sol.voltages, load_p, load_q, sol);
  post_process(sol, c);
  sol.objective = objective(c, sol.p_g * c.base_mva);
  const auto stop = std::chrono::steady_clock::now();
  sol.latency_us =
      std::chrono::duration<double, std::micro>(stop - start).count();
  return sol;
}

}  // namespace acopf
