#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "acopf/case.hpp"
#include "acopf/powerflow.hpp"
#include "acopf/rng.hpp"

namespace acopf {

// Quadratic generation cost in $, taking active generation in MW.
inline double objective(const NetworkCase& c, const Eigen::VectorXd& p_g_mw) {
  if (p_g_mw.size() != c.n_gen())
    throw std::invalid_argument("p_g length must equal generator count");
  double total = 0.0;
  for (int g = 0; g < c.n_gen(); ++g) {
    const double p = p_g_mw[g];
    const auto& gen = c.generators[g];
    total += gen.cost_c2 * p * p + gen.cost_c1 * p + gen.cost_c0;
  }
  return total;
}

// Primal starting point: full per-generator / per-bus vectors in p.u.;
// coordinates that are pinned in the problem layout are ignored.
struct PrimalStart {
  Eigen::VectorXd p_g, q_g;  // per generator
  Eigen::VectorXd vm, va;    // per bus
};

// Variable layout and constraint set for one (case, load) instance.
//
// Primal order: per generator [P, Q] (free coordinates only), then per bus
// vm (free only), then per non-slack bus va. Degenerate boxes (min == max)
// and the slack angle are pinned and removed from the variable space, so the
// equality block stays exactly the 2N power balances.
// Inequality order: variable bounds in variable order (lower then upper,
// finite bounds only), then branch-flow limits (from end, then to end) for
// every branch with s_max > 0.
struct OpfProblem {
  const NetworkCase* net = nullptr;
  AdmittanceMatrix ybus;
  Eigen::VectorXd load_p, load_q;  // per bus, p.u.

  int n_primal = 0, n_eq = 0, n_ineq = 0;

  std::vector<int> gen_p_var, gen_q_var;  // -1 when pinned
  std::vector<int> vm_var, va_var;
  Eigen::VectorXd gen_p_fix, gen_q_fix, vm_fix;  // values for pinned coords

  struct Bound {
    int var;
    double value;
    bool is_lower;
  };
  struct FlowCon {
    int branch;
    bool from_end;
    double limit_pu;
  };
  std::vector<Bound> bounds;
  std::vector<FlowCon> flows;

  int z_dim() const { return n_primal + n_eq + 2 * n_ineq; }
};

namespace opf_detail {
constexpr double kInfiniteBoundMw = 1e7;
}  // namespace opf_detail

// Smoothing added under the square root of |S| in the branch-flow
// constraint so it stays twice differentiable at zero flow.
constexpr double kFlowSmoothing = 1e-12;

namespace opf_detail {
}

inline OpfProblem assemble_problem(const NetworkCase& c,
                                   const Eigen::VectorXd& load_p,
                                   const Eigen::VectorXd& load_q) {
  if (load_p.size() != c.n_bus() || load_q.size() != c.n_bus())
    throw std::invalid_argument("load dimension must equal bus count");
  OpfProblem p;
  p.net = &c;
  p.ybus = build_admittance(c);
  p.load_p = load_p;
  p.load_q = load_q;

  const double base = c.base_mva;
  int v = 0;
  p.gen_p_var.assign(c.n_gen(), -1);
  p.gen_q_var.assign(c.n_gen(), -1);
  p.gen_p_fix = Eigen::VectorXd::Zero(c.n_gen());
  p.gen_q_fix = Eigen::VectorXd::Zero(c.n_gen());
  auto bound_pair = [&](int var, double lo, double hi) {
    const double inf_pu = opf_detail::kInfiniteBoundMw / base;
    if (std::abs(lo) < inf_pu) p.bounds.push_back({var, lo, true});
    if (std::abs(hi) < inf_pu) p.bounds.push_back({var, hi, false});
  };
  for (int g = 0; g < c.n_gen(); ++g) {
    const auto& gen = c.generators[g];
    if (gen.p_min == gen.p_max) {
      p.gen_p_fix[g] = gen.p_min / base;
    } else {
      p.gen_p_var[g] = v++;
      bound_pair(p.gen_p_var[g], gen.p_min / base, gen.p_max / base);
    }
    if (gen.q_min == gen.q_max) {
      p.gen_q_fix[g] = gen.q_min / base;
    } else {
      p.gen_q_var[g] = v++;
      bound_pair(p.gen_q_var[g], gen.q_min / base, gen.q_max / base);
    }
  }
  p.vm_var.assign(c.n_bus(), -1);
  p.va_var.assign(c.n_bus(), -1);
  p.vm_fix = Eigen::VectorXd::Zero(c.n_bus());
  for (int i = 0; i < c.n_bus(); ++i) {
    const auto& b = c.buses[i];
    if (b.v_min == b.v_max) {
      p.vm_fix[i] = b.v_min;
    } else {
      p.vm_var[i] = v++;
      p.bounds.push_back({p.vm_var[i], b.v_min, true});
      p.bounds.push_back({p.vm_var[i], b.v_max, false});
    }
  }
  const int slack = c.slack_bus();
  for (int i = 0; i < c.n_bus(); ++i)
    if (i != slack) p.va_var[i] = v++;

  for (int k = 0; k < c.n_branch(); ++k) {
    const double lim = c.branches[k].s_max / base;
    if (lim > 0.0) {
      p.flows.push_back({k, true, lim});
      p.flows.push_back({k, false, lim});
    }
  }

  p.n_primal = v;
  p.n_eq = 2 * c.n_bus();
  p.n_ineq = static_cast<int>(p.bounds.size() + p.flows.size());
  return p;
}

// Full per-bus / per-generator vectors implied by a primal vector x.
struct PrimalPoint {
  Eigen::VectorXd p_g, q_g;  // p.u.
  VoltageProfile v;
};

inline PrimalPoint expand_primal(const OpfProblem& p, const Eigen::VectorXd& x) {
  const NetworkCase& c = *p.net;
  PrimalPoint out;
  out.p_g.resize(c.n_gen());
  out.q_g.resize(c.n_gen());
  out.v.vm.resize(c.n_bus());
  out.v.va.resize(c.n_bus());
  for (int g = 0; g < c.n_gen(); ++g) {
    out.p_g[g] = p.gen_p_var[g] >= 0 ? x[p.gen_p_var[g]] : p.gen_p_fix[g];
    out.q_g[g] = p.gen_q_var[g] >= 0 ? x[p.gen_q_var[g]] : p.gen_q_fix[g];
  }
  for (int i = 0; i < c.n_bus(); ++i) {
    out.v.vm[i] = p.vm_var[i] >= 0 ? x[p.vm_var[i]] : p.vm_fix[i];
    out.v.va[i] = p.va_var[i] >= 0 ? x[p.va_var[i]] : 0.0;
  }
  return out;
}

inline Eigen::VectorXd pack_primal(const OpfProblem& p, const PrimalStart& s) {
  const NetworkCase& c = *p.net;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(p.n_primal);
  for (int g = 0; g < c.n_gen(); ++g) {
    if (p.gen_p_var[g] >= 0) x[p.gen_p_var[g]] = s.p_g[g];
    if (p.gen_q_var[g] >= 0) x[p.gen_q_var[g]] = s.q_g[g];
  }
  for (int i = 0; i < c.n_bus(); ++i) {
    if (p.vm_var[i] >= 0) x[p.vm_var[i]] = s.vm[i];
    if (p.va_var[i] >= 0) x[p.va_var[i]] = s.va[i];
  }
  return x;
}

// Constraint values, Jacobians, and the weighted curvature of the Lagrangian
// x-block at one primal point.
struct ConstraintEval {
  Eigen::VectorXd c_eq;   // 2N power balances
  Eigen::MatrixXd j_eq;   // n_eq x n_primal
  Eigen::VectorXd c_in;   // n_ineq, feasible when >= 0
  Eigen::MatrixXd j_in;   // n_ineq x n_primal
};

namespace opf_detail {

// order [vm_f, vm_t, va_f, va_t] -> primal var indices (-1 = pinned)
inline void branch_var_map(const OpfProblem& p, int branch, int idx[4]) {
  const auto& br = p.net->branches[branch];
  idx[0] = p.vm_var[br.from_bus];
  idx[1] = p.vm_var[br.to_bus];
  idx[2] = p.va_var[br.from_bus];
  idx[3] = p.va_var[br.to_bus];
}

struct FlowEnd {
  double p, q;
  Eigen::Vector4d gp, gq;
  Eigen::Matrix4d hp, hq;
};

inline FlowEnd eval_flow_end(const OpfProblem& p, const PrimalPoint& pt,
                             int branch, bool from_end) {
  const auto& br = p.net->branches[branch];
  const int f = br.from_bus, t = br.to_bus;
  EndFlow e = from_end
                  ? end_flow(p.ybus.yff[branch], p.ybus.yft[branch], pt.v.vm[f],
                             pt.v.vm[t], pt.v.va[f], pt.v.va[t])
                  : end_flow(p.ybus.ytt[branch], p.ybus.ytf[branch], pt.v.vm[t],
                             pt.v.vm[f], pt.v.va[t], pt.v.va[f]);
  FlowEnd out;
  out.p = e.p;
  out.q = e.q;
  if (from_end) {
    out.gp = e.gp;
    out.gq = e.gq;
    out.hp = e.hp;
    out.hq = e.hq;
  } else {
    // permute [vm_t, vm_f, va_t, va_f] -> [vm_f, vm_t, va_f, va_t]
    const int perm[4] = {1, 0, 3, 2};
    for (int i = 0; i < 4; ++i) {
      out.gp[i] = e.gp[perm[i]];
      out.gq[i] = e.gq[perm[i]];
      for (int j = 0; j < 4; ++j) {
        out.hp(i, j) = e.hp(perm[i], perm[j]);
        out.hq(i, j) = e.hq(perm[i], perm[j]);
      }
    }
  }
  return out;
}

}  // namespace opf_detail

inline ConstraintEval eval_constraints(const OpfProblem& p,
                                       const Eigen::VectorXd& x) {
  const NetworkCase& c = *p.net;
  const int n = c.n_bus();
  const PrimalPoint pt = expand_primal(p, x);

  ConstraintEval ev;
  Eigen::VectorXd p_inj, q_inj;
  bus_injections(pt.v, p.ybus, c, p_inj, q_inj);
  ev.c_eq.resize(p.n_eq);
  for (int i = 0; i < n; ++i) {
    double pg = 0.0, qg = 0.0;
    for (int g = 0; g < c.n_gen(); ++g)
      if (c.generators[g].bus == i) {
        pg += pt.p_g[g];
        qg += pt.q_g[g];
      }
    ev.c_eq[i] = p_inj[i] - pg + p.load_p[i];
    ev.c_eq[n + i] = q_inj[i] - qg + p.load_q[i];
  }

  const InjectionJacobian ij = injection_jacobian(pt.v, p.ybus, c);
  ev.j_eq = Eigen::MatrixXd::Zero(p.n_eq, p.n_primal);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      if (p.vm_var[k] >= 0) {
        ev.j_eq(i, p.vm_var[k]) = ij.dp_dvm(i, k);
        ev.j_eq(n + i, p.vm_var[k]) = ij.dq_dvm(i, k);
      }
      if (p.va_var[k] >= 0) {
        ev.j_eq(i, p.va_var[k]) = ij.dp_dva(i, k);
        ev.j_eq(n + i, p.va_var[k]) = ij.dq_dva(i, k);
      }
    }
  }
  for (int g = 0; g < c.n_gen(); ++g) {
    const int b = c.generators[g].bus;
    if (p.gen_p_var[g] >= 0) ev.j_eq(b, p.gen_p_var[g]) = -1.0;
    if (p.gen_q_var[g] >= 0) ev.j_eq(n + b, p.gen_q_var[g]) = -1.0;
  }

  ev.c_in.resize(p.n_ineq);
  ev.j_in = Eigen::MatrixXd::Zero(p.n_ineq, p.n_primal);
  int r = 0;
  for (const auto& bd : p.bounds) {
    if (bd.is_lower) {
      ev.c_in[r] = x[bd.var] - bd.value;
      ev.j_in(r, bd.var) = 1.0;
    } else {
      ev.c_in[r] = bd.value - x[bd.var];
      ev.j_in(r, bd.var) = -1.0;
    }
    ++r;
  }
  for (const auto& fc : p.flows) {
    const auto fe = opf_detail::eval_flow_end(p, pt, fc.branch, fc.from_end);
    // magnitude form lim - |S|: linear growth away from the feasible set,
    // which keeps violations (and Newton steps) sanely scaled from arbitrary
    // starts; smoothed at |S| = 0 where the bare norm is non-differentiable
    const double m = std::sqrt(fe.p * fe.p + fe.q * fe.q + kFlowSmoothing);
    ev.c_in[r] = fc.limit_pu - m;
    int idx[4];
    opf_detail::branch_var_map(p, fc.branch, idx);
    for (int i = 0; i < 4; ++i)
      if (idx[i] >= 0)
        ev.j_in(r, idx[i]) = -(fe.p * fe.gp[i] + fe.q * fe.gq[i]) / m;
    ++r;
  }
  return ev;
}

// Objective in $ as a function of the primal vector, with derivatives in p.u.
inline double eval_objective(const OpfProblem& p, const Eigen::VectorXd& x,
                             Eigen::VectorXd* grad = nullptr,
                             Eigen::VectorXd* hess_diag = nullptr) {
  const NetworkCase& c = *p.net;
  const double base = c.base_mva;
  const PrimalPoint pt = expand_primal(p, x);
  if (grad) *grad = Eigen::VectorXd::Zero(p.n_primal);
  if (hess_diag) *hess_diag = Eigen::VectorXd::Zero(p.n_primal);
  double total = 0.0;
  for (int g = 0; g < c.n_gen(); ++g) {
    const auto& gen = c.generators[g];
    const double pmw = pt.p_g[g] * base;
    total += gen.cost_c2 * pmw * pmw + gen.cost_c1 * pmw + gen.cost_c0;
    if (p.gen_p_var[g] >= 0) {
      if (grad)
        (*grad)[p.gen_p_var[g]] += (2.0 * gen.cost_c2 * pmw + gen.cost_c1) * base;
      if (hess_diag)
        (*hess_diag)[p.gen_p_var[g]] += 2.0 * gen.cost_c2 * base * base;
    }
  }
  return total;
}

// Curvature of f(x) - lambda' c_E(x) - z' c_I(x) in the x block.
inline Eigen::MatrixXd lagrangian_curvature(const OpfProblem& p,
                                            const Eigen::VectorXd& x,
                                            const Eigen::VectorXd& lambda,
                                            const Eigen::VectorXd& z) {
  const NetworkCase& c = *p.net;
  const int n = c.n_bus();
  const PrimalPoint pt = expand_primal(p, x);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(p.n_primal, p.n_primal);

  Eigen::VectorXd hess_diag;
  eval_objective(p, x, nullptr, &hess_diag);
  w.diagonal() += hess_diag;

  auto scatter4 = [&](const int idx[4], const Eigen::Matrix4d& h, double wgt) {
    if (wgt == 0.0) return;
    for (int i = 0; i < 4; ++i) {
      if (idx[i] < 0) continue;
      for (int j = 0; j < 4; ++j)
        if (idx[j] >= 0) w(idx[i], idx[j]) += wgt * h(i, j);
    }
  };

  // power-balance curvature: sum over branch ends and shunts
  for (int k = 0; k < c.n_branch(); ++k) {
    const auto& br = c.branches[k];
    int idx[4];
    opf_detail::branch_var_map(p, k, idx);
    const EndFlow ff =
        end_flow(p.ybus.yff[k], p.ybus.yft[k], pt.v.vm[br.from_bus],
                 pt.v.vm[br.to_bus], pt.v.va[br.from_bus], pt.v.va[br.to_bus]);
    scatter4(idx, ff.hp, -lambda[br.from_bus]);
    scatter4(idx, ff.hq, -lambda[n + br.from_bus]);
    const EndFlow tt =
        end_flow(p.ybus.ytt[k], p.ybus.ytf[k], pt.v.vm[br.to_bus],
                 pt.v.vm[br.from_bus], pt.v.va[br.to_bus], pt.v.va[br.from_bus]);
    const int perm[4] = {1, 0, 3, 2};
    Eigen::Matrix4d hp, hq;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        hp(perm[i], perm[j]) = tt.hp(i, j);
        hq(perm[i], perm[j]) = tt.hq(i, j);
      }
    scatter4(idx, hp, -lambda[br.to_bus]);
    scatter4(idx, hq, -lambda[n + br.to_bus]);
  }
  for (const auto& b : c.buses) {
    if (p.vm_var[b.id] < 0) continue;
    const int vi = p.vm_var[b.id];
    w(vi, vi) += -lambda[b.id] * 2.0 * b.shunt_g;
    w(vi, vi) += -lambda[n + b.id] * (-2.0 * b.shunt_b);
  }

  // branch-flow inequality curvature (magnitude form, see eval_constraints)
  int r = static_cast<int>(p.bounds.size());
  for (const auto& fc : p.flows) {
    const double zk = z[r++];
    if (zk == 0.0) continue;
    const auto fe = opf_detail::eval_flow_end(p, pt, fc.branch, fc.from_end);
    int idx[4];
    opf_detail::branch_var_map(p, fc.branch, idx);
    const double m =
        std::sqrt(fe.p * fe.p + fe.q * fe.q + kFlowSmoothing);
    const Eigen::Vector4d gm = (fe.p * fe.gp + fe.q * fe.gq) / m;
    const Eigen::Matrix4d hm =
        (fe.gp * fe.gp.transpose() + fe.p * fe.hp + fe.gq * fe.gq.transpose() +
         fe.q * fe.hq) /
            m -
        gm * gm.transpose() / m;
    scatter4(idx, -hm, -zk);
  }
  return w;
}

// Interior-point state over Z = [x; lambda; z; s].
struct NewtonState {
  Eigen::VectorXd z_full;
  double barrier_mu = 1.0;
  int t = 0;
  double alpha = 0.0;

  Eigen::Ref<Eigen::VectorXd> x(const OpfProblem& p) {
    return z_full.segment(0, p.n_primal);
  }
  Eigen::Ref<Eigen::VectorXd> lambda(const OpfProblem& p) {
    return z_full.segment(p.n_primal, p.n_eq);
  }
  Eigen::Ref<Eigen::VectorXd> mult(const OpfProblem& p) {
    return z_full.segment(p.n_primal + p.n_eq, p.n_ineq);
  }
  Eigen::Ref<Eigen::VectorXd> slack(const OpfProblem& p) {
    return z_full.segment(p.n_primal + p.n_eq + p.n_ineq, p.n_ineq);
  }
};

// Initialization from a primal start only: slacks from clipped constraint
// values, unit inequality multipliers, zero equality multipliers. This makes
// the whole trajectory a function of (x0, load).
inline NewtonState init_state(const OpfProblem& p, const PrimalStart& start) {
  NewtonState st;
  st.z_full = Eigen::VectorXd::Zero(p.z_dim());
  st.x(p) = pack_primal(p, start);
  st.mult(p).setOnes();
  const ConstraintEval ev = eval_constraints(p, st.x(p));
  // |c| rather than c for violated constraints: a slack comparable to the
  // violation keeps the fraction-to-boundary rule from collapsing the step
  // when the start is far outside the feasible set.
  st.slack(p) = ev.c_in.cwiseAbs().cwiseMax(0.1);
  st.barrier_mu = 1.0;
  return st;
}

// Gradient of the barrier Lagrangian
//   L = f - lambda' c_E - z'(c_I - s) - mu sum log s
// over Z = [x; lambda; z; s].
inline Eigen::VectorXd grad_lagrangian(const OpfProblem& p,
                                       const Eigen::VectorXd& z_full,
                                       double mu) {
  const auto x = z_full.segment(0, p.n_primal);
  const auto lambda = z_full.segment(p.n_primal, p.n_eq);
  const auto z = z_full.segment(p.n_primal + p.n_eq, p.n_ineq);
  const auto s = z_full.segment(p.n_primal + p.n_eq + p.n_ineq, p.n_ineq);

  const ConstraintEval ev = eval_constraints(p, x);
  Eigen::VectorXd fgrad;
  eval_objective(p, x, &fgrad);

  Eigen::VectorXd g(p.z_dim());
  g.segment(0, p.n_primal) =
      fgrad - ev.j_eq.transpose() * lambda - ev.j_in.transpose() * z;
  g.segment(p.n_primal, p.n_eq) = -ev.c_eq;
  g.segment(p.n_primal + p.n_eq, p.n_ineq) = -(ev.c_in - s);
  g.segment(p.n_primal + p.n_eq + p.n_ineq, p.n_ineq) =
      z - mu * s.cwiseInverse();
  return g;
}

inline Eigen::MatrixXd hess_lagrangian(const OpfProblem& p,
                                       const Eigen::VectorXd& z_full,
                                       double mu) {
  const auto x = z_full.segment(0, p.n_primal);
  const auto lambda = z_full.segment(p.n_primal, p.n_eq);
  const auto z = z_full.segment(p.n_primal + p.n_eq, p.n_ineq);
  const auto s = z_full.segment(p.n_primal + p.n_eq + p.n_ineq, p.n_ineq);

  const ConstraintEval ev = eval_constraints(p, x);
  const int nx = p.n_primal, ne = p.n_eq, ni = p.n_ineq;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p.z_dim(), p.z_dim());
  h.block(0, 0, nx, nx) = lagrangian_curvature(p, x, lambda, z);
  h.block(0, nx, nx, ne) = -ev.j_eq.transpose();
  h.block(nx, 0, ne, nx) = -ev.j_eq;
  h.block(0, nx + ne, nx, ni) = -ev.j_in.transpose();
  h.block(nx + ne, 0, ni, nx) = -ev.j_in;
  h.block(nx + ne, nx + ne + ni, ni, ni).setIdentity();
  h.block(nx + ne + ni, nx + ne, ni, ni).setIdentity();
  h.block(nx + ne + ni, nx + ne + ni, ni, ni) =
      (mu * s.cwiseAbs2().cwiseInverse()).asDiagonal();
  return h;
}

struct KktResiduals {
  double stationarity = 0.0;   // inf-norm of the x block of grad L
  double eq_feas = 0.0;        // inf-norm of power-balance residuals
  double ineq_violation = 0.0; // worst violation of c_I >= 0
  double slack_gap = 0.0;      // inf-norm of c_I - s
  // worst of s_k z_k and z_k max(c_k, 0), each scaled by 1/(1 + z_k)
  double complementarity = 0.0;
  double scale = 1.0;
};

inline KktResiduals eval_kkt(const OpfProblem& p, const NewtonState& state) {
  NewtonState st = state;  // non-const segment views
  const Eigen::VectorXd g = grad_lagrangian(p, st.z_full, 0.0);
  KktResiduals r;
  r.stationarity =
      p.n_primal ? g.segment(0, p.n_primal).cwiseAbs().maxCoeff() : 0.0;
  r.eq_feas = p.n_eq ? g.segment(p.n_primal, p.n_eq).cwiseAbs().maxCoeff() : 0.0;
  const ConstraintEval ev = eval_constraints(p, st.z_full.segment(0, p.n_primal));
  if (p.n_ineq) {
    r.ineq_violation = std::max(0.0, -ev.c_in.minCoeff());
    r.slack_gap = (ev.c_in - st.slack(p)).cwiseAbs().maxCoeff();
    for (int k = 0; k < p.n_ineq; ++k) {
      const double zk = st.mult(p)[k];
      const double worst =
          std::max(std::abs(st.slack(p)[k] * zk), zk * std::max(ev.c_in[k], 0.0));
      r.complementarity = std::max(r.complementarity, worst / (1.0 + zk));
    }
  }
  r.scale = std::max(
      {1.0, p.n_eq ? st.lambda(p).cwiseAbs().maxCoeff() : 0.0,
       p.n_ineq ? st.mult(p).cwiseAbs().maxCoeff() : 0.0});
  return r;
}

// Solves A dz = rhs, escalating diagonal regularization on failure.
// Returns false when the system stays numerically singular at delta = 1e-2:
// a regularized solution that makes no progress on the original residual is
// treated as a singularity signal, not a step.
inline bool regularized_solve(const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& rhs, Eigen::VectorXd& dz) {
  const double rhs_norm = std::max(1.0, rhs.norm());
  for (double delta = 0.0; ; delta = delta == 0.0 ? 1e-8 : delta * 2.0) {
    Eigen::MatrixXd ar = a;
    ar.diagonal().array() += delta;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(ar);
    dz = lu.solve(rhs);
    if (dz.allFinite() && (ar * dz - rhs).norm() <= 1e-10 * rhs_norm &&
        (a * dz - rhs).norm() <= 0.5 * rhs.norm())
      return true;
    if (delta >= 1e-2) return false;
  }
}

// One Newton step on the perturbed KKT system. The first three residual
// blocks match grad_lagrangian; the complementarity block uses the
// symmetrized form S z - mu e (the standard primal-dual linearization, and
// the one MATPOWER-family solvers take). The raw barrier row z - mu/s has a
// mu/s^2 diagonal that destroys conditioning whenever a slack approaches the
// boundary far from the central path, which is exactly the regime an
// arbitrary initial point puts us in.
inline bool newton_step(const OpfProblem& p, const NewtonState& state,
                        Eigen::VectorXd& dz) {
  NewtonState st = state;  // non-const segment views
  const double mu = state.barrier_mu;
  const int nx = p.n_primal, ne = p.n_eq, ni = p.n_ineq;

  Eigen::MatrixXd h = hess_lagrangian(p, state.z_full, mu);
  Eigen::VectorXd f = grad_lagrangian(p, state.z_full, mu);
  // overwrite the complementarity row: residual S z - mu e, Jacobian [S, Z]
  const auto s = st.slack(p);
  const auto z = st.mult(p);
  f.segment(nx + ne + ni, ni) = s.cwiseProduct(z).array() - mu;
  h.block(nx + ne + ni, nx + ne, ni, ni) = Eigen::MatrixXd(s.asDiagonal());
  h.block(nx + ne + ni, nx + ne + ni, ni, ni) = Eigen::MatrixXd(z.asDiagonal());
  return regularized_solve(h, -f, dz);
}

struct OpfOptions {
  double kkt_tol = 1e-8;
  double feas_tol = 1e-6;
  int max_iter = 150;
  double sigma = 0.1;            // centering factor for the barrier update
  double boundary_frac = 0.9995; // fraction-to-boundary factor
  double max_primal_step = 2.0;  // step clipping on the primal block
};

struct OpfOutcome {
  PrimalPoint solution;
  double objective = 0.0;  // $
  bool converged = false;
  int iterations = 0;
  double kkt_residual = 0.0;
  std::uint64_t trajectory_digest = 0;
  Eigen::VectorXd multipliers;  // inequality multipliers at the final iterate
  Eigen::VectorXd x_final;      // final primal vector
};

inline OpfOutcome solve_opf(const OpfProblem& p, const PrimalStart& x0,
                            const OpfOptions& opt = {},
                            std::vector<std::string>* trace = nullptr) {
  NewtonState st = init_state(p, x0);
  Fnv1a digest;
  OpfOutcome out;

  for (st.t = 0; st.t <= opt.max_iter; ++st.t) {
    const KktResiduals r = eval_kkt(p, st);
    digest.update(st.z_full.data(), sizeof(double) * st.z_full.size());
    digest.update_double(st.alpha);
    if (trace) {
      std::ostringstream line;
      line.precision(6);
      line << st.t << " " << st.alpha << " " << r.stationarity << " "
           << r.eq_feas << " " << r.ineq_violation << " " << r.complementarity;
      trace->push_back(line.str());
    }
    out.kkt_residual =
        std::max(r.stationarity / r.scale, r.complementarity);
    if (r.stationarity <= opt.kkt_tol * r.scale &&
        r.complementarity <= opt.kkt_tol && r.eq_feas <= opt.feas_tol &&
        r.ineq_violation <= opt.feas_tol && r.slack_gap <= opt.feas_tol) {
      out.converged = true;
      break;
    }
    if (st.t == opt.max_iter) break;

    Eigen::VectorXd dz;
    if (!newton_step(p, st, dz)) break;  // singular even when regularized

    // Fraction-to-boundary, split into a primal step (x and s) and a dual
    // step (lambda and z). A single shared step lets one multiplier pinned
    // near its boundary freeze the whole iteration from infeasible starts.
    double a_pri = 1.0, a_dual = 1.0;
    const int ni = p.n_ineq;
    const auto dzm = dz.segment(p.n_primal + p.n_eq, ni);
    const auto dsl = dz.segment(p.n_primal + p.n_eq + ni, ni);
    for (int k = 0; k < ni; ++k) {
      if (dzm[k] < 0.0)
        a_dual = std::min(a_dual, -opt.boundary_frac * st.mult(p)[k] / dzm[k]);
      if (dsl[k] < 0.0)
        a_pri = std::min(a_pri, -opt.boundary_frac * st.slack(p)[k] / dsl[k]);
    }
    const double dx_max =
        p.n_primal ? dz.segment(0, p.n_primal).cwiseAbs().maxCoeff() : 0.0;
    if (dx_max * a_pri > opt.max_primal_step)
      a_pri = opt.max_primal_step / dx_max;
    // keep voltage magnitudes positive
    for (int i = 0; i < p.net->n_bus(); ++i) {
      const int vi = p.vm_var[i];
      if (vi < 0 || dz[vi] >= 0.0) continue;
      const double cap = (st.x(p)[vi] - 1e-3) / (-dz[vi]);
      a_pri = std::min(a_pri, cap);
    }

    st.z_full.segment(0, p.n_primal) += a_pri * dz.segment(0, p.n_primal);
    st.lambda(p) += a_dual * dz.segment(p.n_primal, p.n_eq);
    st.mult(p) += a_dual * dzm;
    st.slack(p) += a_pri * dsl;
    // Centrality floor: the boundary rule can slash a slack to 0.0005 of its
    // value in one hit, after which that coordinate throttles every later
    // step. Keeping s_k >= mu/z_k is a no-op on the central path (s z = mu)
    // and only lifts slacks that fell below it.
    for (int k = 0; k < ni; ++k)
      st.slack(p)[k] = std::max(st.slack(p)[k], st.barrier_mu / st.mult(p)[k]);
    st.alpha = a_pri;
    digest.update_double(a_dual);
    const double gap =
        ni ? st.slack(p).dot(st.mult(p)) / static_cast<double>(ni) : 0.0;
    st.barrier_mu = std::max(1e-14, std::min(st.barrier_mu, opt.sigma * gap));
  }

  out.iterations = st.t;
  out.trajectory_digest = digest.digest();
  out.x_final = st.z_full.segment(0, p.n_primal);
  out.solution = expand_primal(p, out.x_final);
  out.multipliers = st.mult(p);
  out.objective = eval_objective(p, out.x_final);
  return out;
}

// Independent certificate: re-derives every quantity through the powerflow
// module rather than trusting the solver's residual bookkeeping.
struct CertificateReport {
  bool ok = true;
  std::vector<std::string> failures;
};

inline CertificateReport check_kkt_certificate(const NetworkCase& c,
                                               const Eigen::VectorXd& load_p,
                                               const Eigen::VectorXd& load_q,
                                               const OpfOutcome& outcome,
                                               double feas_tol = 1e-6,
                                               double comp_tol = 1e-8) {
  CertificateReport rep;
  auto fail = [&](const std::string& s) {
    rep.ok = false;
    rep.failures.push_back(s);
  };
  const AdmittanceMatrix y = build_admittance(c);
  const PrimalPoint& sol = outcome.solution;

  Eigen::VectorXd p_inj, q_inj;
  bus_injections(sol.v, y, c, p_inj, q_inj);
  for (int i = 0; i < c.n_bus(); ++i) {
    double pg = 0.0, qg = 0.0;
    for (int g = 0; g < c.n_gen(); ++g)
      if (c.generators[g].bus == i) {
        pg += sol.p_g[g];
        qg += sol.q_g[g];
      }
    if (std::abs(p_inj[i] - pg + load_p[i]) > feas_tol)
      fail("P balance violated at bus " + std::to_string(i));
    if (std::abs(q_inj[i] - qg + load_q[i]) > feas_tol)
      fail("Q balance violated at bus " + std::to_string(i));
  }
  const double base = c.base_mva;
  for (int g = 0; g < c.n_gen(); ++g) {
    const auto& gen = c.generators[g];
    if (sol.p_g[g] < gen.p_min / base - feas_tol ||
        sol.p_g[g] > gen.p_max / base + feas_tol)
      fail("P bound violated at generator " + std::to_string(g));
    if (sol.q_g[g] < gen.q_min / base - feas_tol ||
        sol.q_g[g] > gen.q_max / base + feas_tol)
      fail("Q bound violated at generator " + std::to_string(g));
  }
  for (const auto& b : c.buses)
    if (sol.v.vm[b.id] < b.v_min - feas_tol || sol.v.vm[b.id] > b.v_max + feas_tol)
      fail("voltage bound violated at bus " + std::to_string(b.ext_id));
  for (const auto& bf : branch_flows(sol.v, c, y))
    if (bf.violated(feas_tol)) fail("branch flow limit violated");

  // complementarity via re-evaluated constraint values
  const OpfProblem prob = assemble_problem(c, load_p, load_q);
  if (outcome.multipliers.size() == prob.n_ineq && prob.n_ineq > 0) {
    const ConstraintEval ev = eval_constraints(prob, outcome.x_final);
    for (int k = 0; k < prob.n_ineq; ++k) {
      const double prod = outcome.multipliers[k] * std::max(ev.c_in[k], 0.0);
      if (prod > comp_tol * (1.0 + outcome.multipliers[k]))
        fail("complementarity violated at inequality " + std::to_string(k));
    }
  }
  return rep;
}

}  // namespace acopf
