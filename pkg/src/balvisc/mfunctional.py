"""Rescaled viscous dissipation functional and its vanishing-viscosity limit.

For tau > 0 the rescaled functional is

    M_eps = R0(q,z') + (eps/tau) Vz(q,z') + (eps^a/tau) Vu(q,u')
          + (tau/eps) Wz*(q,zeta) + (tau/eps^a) Vu*(q,eta),

with Wz* the conjugate of R0 + Vz.  Its limit M0 as eps -> 0 splits into a
rate-independent branch for tau > 0 and three jump-regime branches at tau = 0
depending on whether the rate exponent is above, at, or below 1.  The limit is
extended-valued; infinite values carry an explicit branch/reason tag rather
than a large float.

The case split is discontinuous, so every zero test is gated by ``tol0``
scaled by the local magnitudes, and the gate margin is reported so borderline
arguments are visible to callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .energy import EnergyModel
from .potentials import (ConfigurationError, PotentialSet, _as_array,
                         conj_Wz, dist_to_K, eval_R0, project_K)
from .reparam import ParameterizedCurve

__all__ = [
    "MArgs", "MValue", "eval_Meps", "eval_M0", "duality_gap", "recovery_tau",
    "gamma_pointwise_check", "GammaReport", "parameterized_energy_residual",
    "ParamResidualReport", "SnapGates",
]

DEFAULT_TOL0 = 1e-9


@dataclass(frozen=True)
class MArgs:
    """Argument tuple (q, tau, q', xi) with q' = (u', z'), xi = (eta, zeta).

    Along curves the force convention is xi = -D_q E.
    """

    q: np.ndarray
    tau: float
    uprime: np.ndarray
    zprime: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _as_array(self.q))
        object.__setattr__(self, "uprime", _as_array(self.uprime))
        object.__setattr__(self, "zprime", _as_array(self.zprime))
        object.__setattr__(self, "eta", _as_array(self.eta))
        object.__setattr__(self, "zeta", _as_array(self.zeta))
        if self.tau < 0 or not np.isfinite(self.tau):
            raise ConfigurationError("tau must be finite and >= 0")

    def scaled(self, lam: float) -> "MArgs":
        return MArgs(self.q, lam * self.tau, lam * self.uprime,
                     lam * self.zprime, self.eta, self.zeta)

    def with_tau(self, tau: float) -> "MArgs":
        return MArgs(self.q, tau, self.uprime, self.zprime, self.eta, self.zeta)

    def pairing(self) -> float:
        return float(self.eta @ self.uprime) + float(self.zeta @ self.zprime)


@dataclass(frozen=True)
class MValue:
    """Extended value: finite nonnegative number or +inf with a reason tag."""

    value: float
    branch: str
    reason: Optional[str] = None
    margin: float = math.nan

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def __float__(self) -> float:
        return self.value


def _terms(pots: PotentialSet, args: MArgs):
    q = args.q
    r0v = eval_R0(pots.r0, q, args.zprime)
    vz = pots.vz.eval(q, args.zprime)
    vu = pots.vu.eval(q, args.uprime)
    wz = conj_Wz(pots.r0, pots.vz, q, args.zeta)
    vus = pots.vu.conj(q, args.eta)
    return r0v, vz, vu, wz, vus


def eval_Meps(pots: PotentialSet, args: MArgs, eps: float, alpha: float) -> float:
    """Value of the rescaled viscous functional; requires tau > 0."""
    if args.tau <= 0:
        raise ConfigurationError(
            "M_eps needs tau > 0 (the limit object handles tau = 0)")
    if eps <= 0 or alpha <= 0:
        raise ConfigurationError("need eps > 0 and alpha > 0")
    r0v, vz, vu, wz, vus = _terms(pots, args)
    tau = args.tau
    epsa = eps ** alpha
    return (r0v + (eps / tau) * vz + (epsa / tau) * vu
            + (tau / eps) * wz + (tau / epsa) * vus)


def eval_M0(pots: PotentialSet, args: MArgs, alpha: float,
            tol0: float = DEFAULT_TOL0) -> MValue:
    """Limit functional M0 = R0 + reduced part, with the alpha case table.

    tau > 0: reduced part is 0 when both dual terms vanish, +inf otherwise.
    tau = 0, alpha > 1: 2 sqrt(Vu Vu*) when z' = 0, 2 sqrt(Vz Wz*) when
        Vu* = 0, +inf when Vz * Vu* > 0.
    tau = 0, alpha = 1: 2 sqrt((Vz + Vu)(Wz* + Vu*)).
    tau = 0, alpha < 1: the mirror of alpha > 1 with (Vu, Wz*) in the gate.
    """
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    r0v, vz, vu, wz, vus = _terms(pots, args)

    if args.tau > 0:
        dual = wz + vus
        gate = tol0 * (1.0 + wz + vus)
        if dual <= gate:
            return MValue(r0v, "rate-independent", margin=dual)
        return MValue(math.inf, "rate-independent",
                      reason="Wz*+Vu* > 0 with tau > 0", margin=dual)

    if alpha > 1:
        vz_zero = vz <= tol0 * (1.0 + vz + vu)
        vus_zero = vus <= tol0 * (1.0 + wz + vus)
        if vz_zero:
            return MValue(r0v + 2.0 * math.sqrt(vu * vus), "fast-u", margin=vz)
        if vus_zero:
            return MValue(r0v + 2.0 * math.sqrt(vz * wz), "fast-z", margin=vus)
        return MValue(math.inf, "mixed-viscosity",
                      reason="Vz * Vu* > 0 at tau = 0 (alpha > 1)",
                      margin=vz * vus)
    if alpha == 1:
        return MValue(r0v + 2.0 * math.sqrt((vz + vu) * (wz + vus)),
                      "joint-viscous", margin=math.nan)
    # 0 < alpha < 1
    wz_zero = wz <= tol0 * (1.0 + wz + vus)
    vu_zero = vu <= tol0 * (1.0 + vz + vu)
    if wz_zero:
        return MValue(r0v + 2.0 * math.sqrt(vu * vus), "fast-u", margin=wz)
    if vu_zero:
        return MValue(r0v + 2.0 * math.sqrt(vz * wz), "fast-z", margin=vu)
    return MValue(math.inf, "mixed-viscosity",
                  reason="Vu * Wz* > 0 at tau = 0 (alpha < 1)", margin=vu * wz)


def duality_gap(pots: PotentialSet, args: MArgs, alpha: float,
                tol0: float = DEFAULT_TOL0) -> MValue:
    """M0 minus the duality pairing <q', xi>; nonnegative, zero on the
    contact set."""
    m0 = eval_M0(pots, args, alpha, tol0)
    if not m0.is_finite:
        return MValue(math.inf, m0.branch, reason=m0.reason, margin=m0.margin)
    return MValue(m0.value - args.pairing(), m0.branch, margin=m0.margin)


def recovery_tau(pots: PotentialSet, args: MArgs, eps: float,
                 alpha: float) -> float:
    """Time-rescaling recovery value tau_eps at a tau = 0 target.

    This is the minimizer of M_eps over tau: tau* = sqrt(A/B) with
    A = eps Vz + eps^a Vu and B = Wz*/eps + Vu*/eps^a, which reproduces the
    alpha = 1 and alpha > 1 closed forms and makes M_eps(tau*) converge to M0
    on the finite branches and diverge at the sharp rate on the infinite one.
    """
    if eps <= 0 or alpha <= 0:
        raise ConfigurationError("need eps > 0 and alpha > 0")
    _, vz, vu, wz, vus = _terms(pots, args)
    epsa = eps ** alpha
    B = wz / eps + vus / epsa
    if B <= 0.0:
        raise ConfigurationError(
            "recovery tau undefined: dual terms vanish; use tau arbitrary")
    A = eps * vz + epsa * vu
    return math.sqrt(A / B)


@dataclass
class GammaReport:
    eps_list: List[float]
    values: List[float]
    taus: List[float]
    target: MValue
    converged: Optional[bool]
    monotone: bool
    fitted_slope: Optional[float]
    divergence_exponent: Optional[float]

    def ok(self, slope_target: Optional[float] = None,
           slope_tol: float = 0.1) -> bool:
        if self.target.is_finite:
            good = bool(self.converged)
        else:
            good = (self.divergence_exponent is not None
                    and self.values[-1] > self.values[0])
        if good and slope_target is not None:
            fitted = (self.fitted_slope if self.target.is_finite
                      else self.divergence_exponent)
            good = fitted is not None and abs(fitted - slope_target) <= slope_tol
        return good


def gamma_pointwise_check(pots: PotentialSet, args: MArgs, alpha: float,
                          eps_list: Sequence[float],
                          tol0: float = DEFAULT_TOL0) -> GammaReport:
    """Pointwise convergence/divergence study of M_eps against M0.

    For tau > 0 arguments M_eps is evaluated in place; for tau = 0 targets it
    is evaluated along the recovery rescaling.  Finite targets report the
    fitted error-decay slope in eps; infinite targets report the fitted
    divergence exponent of M_eps in 1/eps.
    """
    eps_list = list(eps_list)
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ConfigurationError("eps_list must be strictly decreasing")
    target = eval_M0(pots, args, alpha, tol0)
    values, taus = [], []
    for eps in eps_list:
        if args.tau > 0:
            tau = args.tau
        else:
            try:
                tau = recovery_tau(pots, args, eps, alpha)
            except ConfigurationError:
                tau = eps
            if tau <= 0.0:
                tau = eps  # no primal terms either; any vanishing tau works
        taus.append(tau)
        values.append(eval_Meps(pots, args.with_tau(tau), eps, alpha))

    vals = np.array(values)
    eps_arr = np.array(eps_list)
    monotone = bool(np.all(np.diff(vals) <= 1e-12 * (1.0 + np.abs(vals[:-1]))))
    converged = None
    fitted_slope = None
    divergence_exponent = None
    if target.is_finite:
        errs = np.abs(vals - target.value)
        scale = 1.0 + abs(target.value)
        converged = bool(errs[-1] <= max(1e-9 * scale, 0.05 * errs[0])
                         or np.all(errs <= 1e-12 * scale))
        pos = errs > 1e-15 * scale
        if np.count_nonzero(pos) >= 2:
            fitted_slope = float(np.polyfit(np.log(eps_arr[pos]),
                                            np.log(errs[pos]), 1)[0])
    else:
        divergence_exponent = float(np.polyfit(np.log(1.0 / eps_arr),
                                               np.log(vals), 1)[0])
    return GammaReport(eps_list=eps_list, values=values, taus=taus,
                       target=target, converged=converged, monotone=monotone,
                       fitted_slope=fitted_slope,
                       divergence_exponent=divergence_exponent)


# ---------------------------------------------------------------------------
# parameterized energy identity along curves


@dataclass(frozen=True)
class SnapGates:
    """Finite-eps gating when evaluating the limit functional along curves.

    Curves computed at positive viscosity violate the exact-zero constraints
    of the case table by O(eps); nodes are snapped before evaluation:
    tau := 0 below ``tau_gate``, forces inside the blurred stable set are
    projected onto it, and near-zero forces/velocities are zeroed.  These are
    smoothing parameters of the artifact, not of the limit functional.
    """

    tau_gate: float = 0.03
    force_tol: float = 0.02
    vel_tol: float = 1e-7


def snap_args(pots: PotentialSet, q, tprime, uprime, zprime, eta, zeta,
              gates: SnapGates) -> MArgs:
    q = _as_array(q)
    eta = _as_array(eta).copy()
    zeta = _as_array(zeta).copy()
    uprime = _as_array(uprime).copy()
    zprime = _as_array(zprime).copy()
    w_scale = float(np.mean(pots.r0.weights_at(q)))
    f_gate = gates.force_tol * w_scale
    if np.linalg.norm(eta) <= f_gate:
        eta[:] = 0.0
    if dist_to_K(pots.r0, q, zeta) <= f_gate:
        zeta = project_K(pots.r0, pots.vz, q, zeta)
    if np.linalg.norm(uprime) <= gates.vel_tol:
        uprime[:] = 0.0
    if np.linalg.norm(zprime) <= gates.vel_tol:
        zprime[:] = 0.0
    tau = 0.0 if tprime <= gates.tau_gate else float(tprime)
    return MArgs(q, tau, uprime, zprime, eta, zeta)


@dataclass
class ParamResidualReport:
    residual: float
    relative: float
    dissipation: float
    violations: List[int]

    @property
    def n_violations(self) -> int:
        return len(self.violations)


def parameterized_energy_residual(curve: ParameterizedCurve,
                                  model: EnergyModel, pots: PotentialSet,
                                  alpha: float,
                                  s1: Optional[float] = None,
                                  s2: Optional[float] = None,
                                  gates: SnapGates = SnapGates(),
                                  tol0: float = DEFAULT_TOL0
                                  ) -> ParamResidualReport:
    """Defect of the limit energy identity along a parameterized curve.

    Forces are xi(s) = -D_q E(t(s), q(s)).  Nodes where M0 is infinite after
    snapping are excluded from the quadrature and reported as violations.
    """
    s = curve.s
    i1 = 0 if s1 is None else int(np.searchsorted(s, s1))
    i2 = s.size - 1 if s2 is None else int(np.searchsorted(s, s2))
    i2 = min(i2, s.size - 1)
    if i1 > i2:
        raise ConfigurationError("need s1 <= s2")
    if i1 == i2:
        return ParamResidualReport(0.0, 0.0, 0.0, [])

    idx = np.arange(i1, i2 + 1)
    m0_vals = np.empty(idx.size)
    power = np.empty(idx.size)
    violations = []
    for j, k in enumerate(idx):
        uk, zk = curve.u[k], curve.z[k]
        tk = curve.t[k]
        eta = -_as_array(model.du_E(tk, uk, zk))
        zeta = -_as_array(model.dz_E(tk, uk, zk))
        args = snap_args(pots, curve.q(k), curve.dt[k], curve.du[k],
                         curve.dz[k], eta, zeta, gates)
        val = eval_M0(pots, args, alpha, tol0)
        if val.is_finite:
            m0_vals[j] = val.value
        else:
            m0_vals[j] = math.nan
            violations.append(int(k))
        power[j] = model.dt_E(tk, uk, zk) * curve.dt[k]

    ss = s[idx]
    finite = np.isfinite(m0_vals)
    diss = _masked_trapezoid(m0_vals, ss, finite)
    pw = float(np.trapezoid(power, ss))
    e2 = float(model.E(curve.t[i2], curve.u[i2], curve.z[i2]))
    e1 = float(model.E(curve.t[i1], curve.u[i1], curve.z[i1]))
    residual = abs(e2 + diss - e1 - pw)
    return ParamResidualReport(residual, residual / max(diss, 1e-300), diss,
                               violations)


def _masked_trapezoid(y, x, mask) -> float:
    """Trapezoid over the sub-intervals whose both endpoints are valid."""
    total = 0.0
    for k in range(x.size - 1):
        if mask[k] and mask[k + 1]:
            total += 0.5 * (y[k] + y[k + 1]) * (x[k + 1] - x[k])
    return float(total)
