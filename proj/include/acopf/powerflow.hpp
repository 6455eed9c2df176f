#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <complex>
#include <stdexcept>
#include <vector>

#include "acopf/case.hpp"

namespace acopf {

using Complex = std::complex<double>;

struct AdmittanceMatrix {
  int n = 0;
  Eigen::SparseMatrix<Complex> y;
  // per-branch pi-model blocks, tap on the from side
  std::vector<Complex> yff, yft, ytf, ytt;
};

struct VoltageProfile {
  Eigen::VectorXd vm;  // p.u.
  Eigen::VectorXd va;  // radians

  static VoltageProfile flat(int n, double mag = 1.0) {
    VoltageProfile v;
    v.vm = Eigen::VectorXd::Constant(n, mag);
    v.va = Eigen::VectorXd::Zero(n);
    return v;
  }
  Eigen::VectorXcd complex() const {
    Eigen::VectorXcd out(vm.size());
    for (Eigen::Index i = 0; i < vm.size(); ++i)
      out[i] = std::polar(vm[i], va[i]);
    return out;
  }
};

inline AdmittanceMatrix build_admittance(const NetworkCase& c) {
  AdmittanceMatrix a;
  a.n = c.n_bus();
  std::vector<Eigen::Triplet<Complex>> trips;
  for (const auto& br : c.branches) {
    if (br.r == 0.0 && br.x == 0.0)
      throw std::invalid_argument("branch with r = x = 0");
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex bc(0.0, br.b_charging / 2.0);
    const double tau = br.tap_ratio;
    const Complex yff = (ys + bc) / (tau * tau);
    const Complex yft = -ys / tau;
    const Complex ytf = -ys / tau;
    const Complex ytt = ys + bc;
    a.yff.push_back(yff);
    a.yft.push_back(yft);
    a.ytf.push_back(ytf);
    a.ytt.push_back(ytt);
    trips.emplace_back(br.from_bus, br.from_bus, yff);
    trips.emplace_back(br.from_bus, br.to_bus, yft);
    trips.emplace_back(br.to_bus, br.from_bus, ytf);
    trips.emplace_back(br.to_bus, br.to_bus, ytt);
  }
  for (const auto& b : c.buses)
    trips.emplace_back(b.id, b.id, Complex(b.shunt_g, b.shunt_b));
  a.y.resize(a.n, a.n);
  a.y.setFromTriplets(trips.begin(), trips.end());
  return a;
}

// Complex power entering one end of a branch, with analytic first and second
// derivatives in the variable order [vm_self, vm_other, va_self, va_other].
struct EndFlow {
  double p = 0.0, q = 0.0;
  Eigen::Vector4d gp = Eigen::Vector4d::Zero();
  Eigen::Vector4d gq = Eigen::Vector4d::Zero();
  Eigen::Matrix4d hp = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d hq = Eigen::Matrix4d::Zero();
};

inline EndFlow end_flow(Complex y_self, Complex y_mut, double vm_s, double vm_o,
                        double va_s, double va_o) {
  EndFlow f;
  const double a = y_self.real(), cc = y_self.imag();
  const double g = y_mut.real(), b = y_mut.imag();
  const double th = va_s - va_o;
  const double t1 = g * std::cos(th) + b * std::sin(th);
  const double t2 = g * std::sin(th) - b * std::cos(th);
  const double vv = vm_s * vm_o;

  f.p = a * vm_s * vm_s + vv * t1;
  f.q = -cc * vm_s * vm_s + vv * t2;

  f.gp << 2.0 * a * vm_s + vm_o * t1, vm_s * t1, -vv * t2, vv * t2;
  f.gq << -2.0 * cc * vm_s + vm_o * t2, vm_s * t2, vv * t1, -vv * t1;

  f.hp(0, 0) = 2.0 * a;
  f.hp(0, 1) = f.hp(1, 0) = t1;
  f.hp(0, 2) = f.hp(2, 0) = -vm_o * t2;
  f.hp(0, 3) = f.hp(3, 0) = vm_o * t2;
  f.hp(1, 2) = f.hp(2, 1) = -vm_s * t2;
  f.hp(1, 3) = f.hp(3, 1) = vm_s * t2;
  f.hp(2, 2) = f.hp(3, 3) = -vv * t1;
  f.hp(2, 3) = f.hp(3, 2) = vv * t1;

  f.hq(0, 0) = -2.0 * cc;
  f.hq(0, 1) = f.hq(1, 0) = t2;
  f.hq(0, 2) = f.hq(2, 0) = vm_o * t1;
  f.hq(0, 3) = f.hq(3, 0) = -vm_o * t1;
  f.hq(1, 2) = f.hq(2, 1) = vm_s * t1;
  f.hq(1, 3) = f.hq(3, 1) = -vm_s * t1;
  f.hq(2, 2) = f.hq(3, 3) = -vv * t2;
  f.hq(2, 3) = f.hq(3, 2) = vv * t2;
  return f;
}

// Canonical (polar) bus injection evaluation: for each branch end and shunt,
// accumulate the complex power flowing from the bus into the network.
inline void bus_injections(const VoltageProfile& v, const AdmittanceMatrix& a,
                           const NetworkCase& c, Eigen::VectorXd& p_inj,
                           Eigen::VectorXd& q_inj) {
  if (v.vm.size() != a.n || v.va.size() != a.n)
    throw std::invalid_argument("voltage profile dimension mismatch");
  p_inj = Eigen::VectorXd::Zero(a.n);
  q_inj = Eigen::VectorXd::Zero(a.n);
  for (std::size_t k = 0; k < c.branches.size(); ++k) {
    const auto& br = c.branches[k];
    const EndFlow ff = end_flow(a.yff[k], a.yft[k], v.vm[br.from_bus],
                                v.vm[br.to_bus], v.va[br.from_bus],
                                v.va[br.to_bus]);
    const EndFlow ft = end_flow(a.ytt[k], a.ytf[k], v.vm[br.to_bus],
                                v.vm[br.from_bus], v.va[br.to_bus],
                                v.va[br.from_bus]);
    p_inj[br.from_bus] += ff.p;
    q_inj[br.from_bus] += ff.q;
    p_inj[br.to_bus] += ft.p;
    q_inj[br.to_bus] += ft.q;
  }
  for (const auto& b : c.buses) {
    p_inj[b.id] += b.shunt_g * v.vm[b.id] * v.vm[b.id];
    q_inj[b.id] += -b.shunt_b * v.vm[b.id] * v.vm[b.id];
  }
}

// Rectangular cross-check path: S = V .* conj(Y V). Test-only companion to
// the polar path above.
inline void bus_injections_rect(const VoltageProfile& v,
                                const AdmittanceMatrix& a,
                                Eigen::VectorXd& p_inj,
                                Eigen::VectorXd& q_inj) {
  const Eigen::VectorXcd vc = v.complex();
  const Eigen::VectorXcd s = vc.array() * (a.y * vc).conjugate().array();
  p_inj = s.real();
  q_inj = s.imag();
}

struct BranchFlow {
  double s_from = 0.0, s_to = 0.0;  // apparent power magnitude, p.u.
  double limit_pu = 0.0;  // 0 = unlimited
  double max_end() const { return std::max(s_from, s_to); }
  bool violated(double tol = 0.0) const {
    return limit_pu > 0.0 && max_end() > limit_pu + tol;
  }
};

inline std::vector<BranchFlow> branch_flows(const VoltageProfile& v,
                                            const NetworkCase& c,
                                            const AdmittanceMatrix& a) {
  std::vector<BranchFlow> out(c.branches.size());
  for (std::size_t k = 0; k < c.branches.size(); ++k) {
    const auto& br = c.branches[k];
    const Complex vf = std::polar(v.vm[br.from_bus], v.va[br.from_bus]);
    const Complex vt = std::polar(v.vm[br.to_bus], v.va[br.to_bus]);
    const Complex sf = vf * std::conj(a.yff[k] * vf + a.yft[k] * vt);
    const Complex st = vt * std::conj(a.ytf[k] * vf + a.ytt[k] * vt);
    out[k].s_from = std::abs(sf);
    out[k].s_to = std::abs(st);
    out[k].limit_pu = br.s_max / c.base_mva;
  }
  return out;
}

// Dense injection Jacobian blocks; adequate at the bus counts this library
// targets and keeps the factorization ordering trivially deterministic.
struct InjectionJacobian {
  Eigen::MatrixXd dp_dvm, dp_dva, dq_dvm, dq_dva;
};

inline InjectionJacobian injection_jacobian(const VoltageProfile& v,
                                            const AdmittanceMatrix& a,
                                            const NetworkCase& c) {
  const int n = a.n;
  InjectionJacobian j;
  j.dp_dvm = Eigen::MatrixXd::Zero(n, n);
  j.dp_dva = Eigen::MatrixXd::Zero(n, n);
  j.dq_dvm = Eigen::MatrixXd::Zero(n, n);
  j.dq_dva = Eigen::MatrixXd::Zero(n, n);
  auto add_end = [&](int self, int other, const EndFlow& f) {
    j.dp_dvm(self, self) += f.gp[0];
    j.dp_dvm(self, other) += f.gp[1];
    j.dp_dva(self, self) += f.gp[2];
    j.dp_dva(self, other) += f.gp[3];
    j.dq_dvm(self, self) += f.gq[0];
    j.dq_dvm(self, other) += f.gq[1];
    j.dq_dva(self, self) += f.gq[2];
    j.dq_dva(self, other) += f.gq[3];
  };
  for (std::size_t k = 0; k < c.branches.size(); ++k) {
    const auto& br = c.branches[k];
    add_end(br.from_bus, br.to_bus,
            end_flow(a.yff[k], a.yft[k], v.vm[br.from_bus], v.vm[br.to_bus],
                     v.va[br.from_bus], v.va[br.to_bus]));
    add_end(br.to_bus, br.from_bus,
            end_flow(a.ytt[k], a.ytf[k], v.vm[br.to_bus], v.vm[br.from_bus],
                     v.va[br.to_bus], v.va[br.from_bus]));
  }
  for (const auto& b : c.buses) {
    j.dp_dvm(b.id, b.id) += 2.0 * b.shunt_g * v.vm[b.id];
    j.dq_dvm(b.id, b.id) += -2.0 * b.shunt_b * v.vm[b.id];
  }
  return j;
}

// Bus roles for the power-flow subproblem: net active injection is specified
// everywhere except the slack; reactive injection only at PQ buses; voltage
// magnitude fixed at the slack and PV buses.
struct PfSpec {
  int slack = 0;
  std::vector<int> pv_buses;
  Eigen::VectorXd vm_set;  // used at slack and PV buses
  Eigen::VectorXd p_set;   // specified net P injection, p.u.
  Eigen::VectorXd q_set;   // specified net Q injection, p.u. (PQ buses)
};

struct PowerFlowSolution {
  VoltageProfile voltages;
  Eigen::VectorXd p_inj, q_inj;
  int iterations = 0;
  bool converged = false;
  bool singular = false;
  double max_mismatch = 0.0;
};

inline PowerFlowSolution solve_powerflow(const NetworkCase& c,
                                         const AdmittanceMatrix& a,
                                         const PfSpec& spec,
                                         const VoltageProfile& start,
                                         double tol = 1e-8,
                                         int max_iter = 50) {
  const int n = c.n_bus();
  if ((start.vm.array() <= 0.0).any())
    throw std::invalid_argument("start must have positive magnitudes");

  std::vector<char> is_pv(n, 0);
  for (int b : spec.pv_buses) is_pv[b] = 1;

  std::vector<int> va_vars, vm_vars;
  for (int i = 0; i < n; ++i) {
    if (i != spec.slack) va_vars.push_back(i);
    if (i != spec.slack && !is_pv[i]) vm_vars.push_back(i);
  }
  const int nv = static_cast<int>(va_vars.size() + vm_vars.size());

  PowerFlowSolution sol;
  sol.voltages = start;
  sol.voltages.vm[spec.slack] = spec.vm_set[spec.slack];
  sol.voltages.va[spec.slack] = 0.0;
  for (int b : spec.pv_buses) sol.voltages.vm[b] = spec.vm_set[b];

  for (int iter = 0; iter <= max_iter; ++iter) {
    bus_injections(sol.voltages, a, c, sol.p_inj, sol.q_inj);
    Eigen::VectorXd f(nv);
    int r = 0;
    for (int i : va_vars) f[r++] = sol.p_inj[i] - spec.p_set[i];
    for (int i : vm_vars) f[r++] = sol.q_inj[i] - spec.q_set[i];
    sol.max_mismatch = nv == 0 ? 0.0 : f.cwiseAbs().maxCoeff();
    sol.iterations = iter;
    if (sol.max_mismatch <= tol) {
      sol.converged = true;
      return sol;
    }
    if (iter == max_iter) break;

    const InjectionJacobian ij = injection_jacobian(sol.voltages, a, c);
    Eigen::MatrixXd jac(nv, nv);
    for (std::size_t ri = 0; ri < va_vars.size(); ++ri) {
      for (std::size_t ci = 0; ci < va_vars.size(); ++ci)
        jac(ri, ci) = ij.dp_dva(va_vars[ri], va_vars[ci]);
      for (std::size_t ci = 0; ci < vm_vars.size(); ++ci)
        jac(ri, va_vars.size() + ci) = ij.dp_dvm(va_vars[ri], vm_vars[ci]);
    }
    for (std::size_t ri = 0; ri < vm_vars.size(); ++ri) {
      for (std::size_t ci = 0; ci < va_vars.size(); ++ci)
        jac(va_vars.size() + ri, ci) = ij.dq_dva(vm_vars[ri], va_vars[ci]);
      for (std::size_t ci = 0; ci < vm_vars.size(); ++ci)
        jac(va_vars.size() + ri, va_vars.size() + ci) =
            ij.dq_dvm(vm_vars[ri], vm_vars[ci]);
    }

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    Eigen::VectorXd dx = lu.solve(-f);
    const double resid = (jac * dx + f).norm();
    if (!dx.allFinite() || resid > 1e-8 * std::max(1.0, f.norm())) {
      sol.singular = true;
      return sol;
    }
    r = 0;
    for (int i : va_vars) sol.voltages.va[i] += dx[r++];
    for (int i : vm_vars) {
      sol.voltages.vm[i] += dx[r++];
      if (sol.voltages.vm[i] < 1e-4) sol.voltages.vm[i] = 1e-4;
    }
  }
  return sol;
}

}  // namespace acopf
