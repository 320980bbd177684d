"""Regime classification of parameterized curves.

Each node of a curve is matched against the jump/sliding regimes admissible
for its rate exponent: equilibrated or viscous u, and rate-independent,
viscous, or blocked z.  The switching parameters (theta_u, theta_z) of the
subdifferential reformulation are recovered per node by small least-squares /
bisection problems, and per-node duality gaps certify contact-set membership.

At positive viscosity the regimes are blurred by O(eps); all thresholds here
are smoothing parameters of the artifact (gates are relative to per-curve
force/velocity scales, plus a minimum-run filter and a minimum segment
fraction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .energy import EnergyModel, equilibrium_map
from .mfunctional import SnapGates, duality_gap, eval_M0, snap_args
from .potentials import (ConfigurationError, PotentialSet, _as_array,
                         dist_to_K, dist_to_subdiff)
from .reparam import ParameterizedCurve

__all__ = [
    "EU_RZ", "VU_BZ", "EU_VZ", "VU_VZ", "BU_VZ", "VU_RZ", "STATIONARY",
    "UNCLASSIFIED", "admissible_labels", "ThetaPair", "RegimeSegment",
    "ClassifyGates", "recover_theta_u", "recover_theta_z", "classify_point",
    "check_alpha_constraints", "segment_curve", "NodeClassification",
    "verify_relaxation_structure", "RelaxationReport",
]

EU_RZ = "EuRz"          # u equilibrated, z rate-independent (also sticking)
VU_BZ = "VuBz"          # u viscous, z blocked
EU_VZ = "EuVz"          # u equilibrated, z viscous
VU_VZ = "VuVz"          # both viscous (alpha = 1 jumps)
BU_VZ = "BuVz"          # u blocked, z viscous
VU_RZ = "VuRz"          # u viscous, z rate-independent
STATIONARY = "Stationary"
UNCLASSIFIED = "Unclassified"


def admissible_labels(alpha: float) -> tuple:
    if alpha > 1:
        return (EU_RZ, VU_BZ, EU_VZ)
    if alpha == 1:
        return (EU_RZ, VU_VZ)
    return (EU_RZ, BU_VZ, VU_RZ)


@dataclass
class ThetaPair:
    theta_u: float
    theta_z: float
    residual_u: float
    residual_z: float


@dataclass
class RegimeSegment:
    s_a: float
    s_b: float
    label: str
    theta_u: float
    theta_z: float
    max_residual: float

    def to_dict(self):
        return {"s_a": self.s_a, "s_b": self.s_b, "label": self.label,
                "theta_u": self.theta_u, "theta_z": self.theta_z,
                "max_residual": self.max_residual}


@dataclass(frozen=True)
class ClassifyGates:
    """Thresholds for finite-viscosity regime identification.

    ``tau_gate`` separates jumping from sliding nodes on normalized curves
    (t' of a genuine jump scales like eps, t' of sliding stays order one).
    Force gates are relative to the dissipation threshold scale; velocity
    gates are absolute fractions of the unit combined speed.
    """

    tau_gate: float = 0.03
    force_tol: float = 0.1
    vel_tol: float = 0.1
    res_tol: float = 0.05
    gap_tol: float = 0.1

    def snap(self) -> SnapGates:
        return SnapGates(tau_gate=self.tau_gate, force_tol=self.force_tol,
                         vel_tol=self.vel_tol)


def recover_theta_u(pots: PotentialSet, q, uprime, eta):
    """Least-squares switching parameter for the u-inclusion.

    Solves min over theta in [0,1] of |theta Vu u' - (1-theta) eta|, which is
    the closed form <eta, Vu u' + eta> / |Vu u' + eta|^2 clamped to [0,1].
    Residual is relative to |Vu u'| + |eta|.  Degenerate data (u' = 0 and
    eta = 0, or exactly opposed vectors) returns theta = 0.
    """
    uprime = _as_array(uprime)
    eta = _as_array(eta)
    a = pots.vu.matrix_at(_as_array(q)) @ uprime
    denom_vec = a + eta
    nd = float(denom_vec @ denom_vec)
    scale = float(np.linalg.norm(a) + np.linalg.norm(eta)) + 1e-300
    if nd <= 1e-300:
        return 0.0, float(np.linalg.norm(eta)) / scale
    theta = float(eta @ denom_vec) / nd
    theta = min(max(theta, 0.0), 1.0)
    res = float(np.linalg.norm(theta * a - (1.0 - theta) * eta)) / scale
    return theta, res


def _scaled_subdiff_dist(pots: PotentialSet, q, zprime, x, shrink, vel_tol):
    """Distance from x to shrink * dR0(q, z') (shrink in [0, 1])."""
    zprime = _as_array(zprime)
    x = _as_array(x)
    w = pots.r0.weights_at(q) * shrink
    if pots.r0.mode == "l1":
        d2 = 0.0
        for i in range(zprime.size):
            if abs(zprime[i]) > vel_tol:
                d2 += (x[i] - w[i] * np.sign(zprime[i])) ** 2
            else:
                d2 += max(abs(x[i]) - w[i], 0.0) ** 2
        return math.sqrt(d2)
    speed = np.linalg.norm(zprime)
    if speed > vel_tol:
        return float(np.linalg.norm(x - w[0] * zprime / speed))
    return float(max(np.linalg.norm(x) - w[0], 0.0))


def recover_theta_z(pots: PotentialSet, q, zprime, zeta,
                    tol: float = 1e-9, vel_tol: float = 0.0,
                    grid: int = 257):
    """Smallest theta in [0,1] bringing the z-inclusion within tolerance.

    The inclusion reads (1-theta) zeta - theta Vz z' in (1-theta) dR0(q, z').
    A coarse ascending scan locates the first admissible theta, refined by
    bisection; when no theta is admissible the minimizing theta and its
    residual are returned.
    """
    q = _as_array(q)
    zprime = _as_array(zprime)
    zeta = _as_array(zeta)
    vzv = pots.vz.matrix_at(q) @ zprime
    scale = float(np.linalg.norm(zeta) + np.linalg.norm(vzv)) + 1e-300

    def res(theta):
        x = (1.0 - theta) * zeta - theta * vzv
        return _scaled_subdiff_dist(pots, q, zprime, x, 1.0 - theta,
                                    vel_tol) / scale

    thetas = np.linspace(0.0, 1.0, grid)
    vals = np.array([res(th) for th in thetas])
    hit = np.nonzero(vals <= tol)[0]
    if hit.size == 0:
        k = int(np.argmin(vals))
        return float(thetas[k]), float(vals[k])
    k = int(hit[0])
    if k == 0:
        return 0.0, float(vals[0])
    lo, hi = thetas[k - 1], thetas[k]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if res(mid) <= tol:
            hi = mid
        else:
            lo = mid
    return float(hi), float(res(hi))


def check_alpha_constraints(pair: ThetaPair, tprime: float, alpha: float,
                            tol: float) -> bool:
    """Switching (t' theta = 0) plus the exponent-specific theta relation."""
    if abs(tprime * pair.theta_u) > tol or abs(tprime * pair.theta_z) > tol:
        return False
    if alpha > 1:
        return pair.theta_u * (1.0 - pair.theta_z) <= tol
    if alpha == 1:
        return abs(pair.theta_u - pair.theta_z) <= tol
    return pair.theta_z * (1.0 - pair.theta_u) <= tol


def _joint_theta(pots, q, uprime, zprime, eta, zeta, vel_tol, grid: int = 129):
    """Common theta for the alpha = 1 jump regime (both inclusions at once)."""
    q = _as_array(q)
    a = pots.vu.matrix_at(q) @ _as_array(uprime)
    vzv = pots.vz.matrix_at(q) @ _as_array(zprime)
    su = float(np.linalg.norm(a) + np.linalg.norm(eta)) + 1e-300
    sz = float(np.linalg.norm(zeta) + np.linalg.norm(vzv)) + 1e-300

    def res(theta):
        ru = np.linalg.norm(theta * a - (1.0 - theta) * _as_array(eta)) / su
        x = (1.0 - theta) * _as_array(zeta) - theta * vzv
        rz = _scaled_subdiff_dist(pots, q, zprime, x, 1.0 - theta, vel_tol) / sz
        return max(ru, rz)

    thetas = np.linspace(0.0, 1.0, grid)
    vals = np.array([res(th) for th in thetas])
    k = int(np.argmin(vals))
    lo = thetas[max(k - 1, 0)]
    hi = thetas[min(k + 1, grid - 1)]
    for _ in range(40):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if res(m1) <= res(m2):
            hi = m2
        else:
            lo = m1
    theta = 0.5 * (lo + hi)
    return float(theta), float(res(theta))


def classify_point(pots: PotentialSet, model_forces, q, tprime, uprime,
                   zprime, alpha: float, gates: ClassifyGates):
    """Classify one curve node.  ``model_forces`` is the pair (eta, zeta).

    Returns (label, ThetaPair, gap) where gap is the duality gap of the
    snapped argument tuple (infinite when the node is out of contact).
    """
    eta, zeta = (_as_array(model_forces[0]), _as_array(model_forces[1]))
    q = _as_array(q)
    uprime = _as_array(uprime)
    zprime = _as_array(zprime)
    w_scale = float(np.mean(pots.r0.weights_at(q)))
    f_gate = gates.force_tol * w_scale
    v_gate = gates.vel_tol

    theta_u, res_u = recover_theta_u(pots, q, uprime, eta)
    theta_z, res_z = recover_theta_z(pots, q, zprime, zeta,
                                     tol=gates.res_tol, vel_tol=v_gate)
    pair = ThetaPair(theta_u, theta_z, res_u, res_z)

    args = snap_args(pots, q, tprime, uprime, zprime, eta, zeta, gates.snap())
    gap_val = duality_gap(pots, args, alpha)
    gap = gap_val.value

    eta_small = float(np.linalg.norm(eta)) <= f_gate
    zeta_ri = dist_to_subdiff(pots.r0, q, zprime, zeta,
                              vel_tol=v_gate) <= f_gate
    u_still = float(np.linalg.norm(uprime)) <= v_gate
    z_still = float(np.linalg.norm(zprime)) <= v_gate

    if tprime > gates.tau_gate:
        if eta_small and zeta_ri:
            return EU_RZ, ThetaPair(0.0, 0.0, res_u, res_z), gap
        return UNCLASSIFIED, pair, gap

    if u_still and z_still:
        return STATIONARY, pair, gap

    if alpha > 1:
        if z_still and res_u <= gates.res_tol:
            return VU_BZ, pair, gap
        if eta_small and res_z <= gates.res_tol:
            return EU_VZ, pair, gap
        return UNCLASSIFIED, pair, gap
    if alpha == 1:
        theta, res = _joint_theta(pots, q, uprime, zprime, eta, zeta, v_gate)
        if res <= gates.res_tol:
            return VU_VZ, ThetaPair(theta, theta, res, res), gap
        return UNCLASSIFIED, pair, gap
    # alpha < 1
    if u_still and res_z <= gates.res_tol:
        return BU_VZ, pair, gap
    if zeta_ri and res_u <= gates.res_tol:
        return VU_RZ, pair, gap
    return UNCLASSIFIED, pair, gap


@dataclass
class NodeClassification:
    labels_raw: List[str]
    labels: List[str]
    theta_u: np.ndarray
    theta_z: np.ndarray
    residual: np.ndarray
    gap: np.ndarray
    gap_tol: np.ndarray

    def classified_mask(self) -> np.ndarray:
        return np.array([lb != UNCLASSIFIED for lb in self.labels_raw])

    def contact_mask(self) -> np.ndarray:
        return self.gap <= self.gap_tol


def _min_run_filter(labels: List[str], min_run: int) -> List[str]:
    """Absorb runs shorter than min_run into the longer neighboring run."""
    labels = list(labels)
    while True:
        runs = _runs(labels)
        if len(runs) <= 1:
            return labels
        short = [r for r in runs if r[1] - r[0] < min_run]
        if not short:
            return labels
        # handle the shortest first for determinism
        short.sort(key=lambda r: (r[1] - r[0], r[0]))
        a, b, _ = short[0]
        runs_idx = runs.index(short[0])
        prev_run = runs[runs_idx - 1] if runs_idx > 0 else None
        next_run = runs[runs_idx + 1] if runs_idx + 1 < len(runs) else None
        if prev_run is None:
            new = next_run[2]
        elif next_run is None:
            new = prev_run[2]
        else:
            new = (prev_run[2]
                   if (prev_run[1] - prev_run[0]) >= (next_run[1] - next_run[0])
                   else next_run[2])
        for k in range(a, b):
            labels[k] = new


def _runs(labels: List[str]):
    runs = []
    start = 0
    for k in range(1, len(labels) + 1):
        if k == len(labels) or labels[k] != labels[start]:
            runs.append((start, k, labels[start]))
            start = k
    return runs


def segment_curve(curve: ParameterizedCurve, model: EnergyModel,
                  pots: PotentialSet, alpha: float,
                  gates: ClassifyGates = ClassifyGates(),
                  min_run: int = 5, min_frac: float = 0.02):
    """Classify every node, smooth, and merge into maximal segments.

    Smoothing: a minimum-run-length filter suppresses chatter at regime
    boundaries, stationary runs are absorbed into their neighbors, and
    segments shorter than ``min_frac`` of the total parameter length are
    merged away (finite-viscosity transients, e.g. an unprepared initial
    state, otherwise show up as spurious micro-segments).
    """
    N = curve.n_nodes
    labels_raw: List[str] = []
    th_u = np.empty(N)
    th_z = np.empty(N)
    residual = np.empty(N)
    gap = np.empty(N)
    gap_tol = np.empty(N)

    for k in range(N):
        tk = curve.t[k]
        uk, zk = curve.u[k], curve.z[k]
        eta = -_as_array(model.du_E(tk, uk, zk))
        zeta = -_as_array(model.dz_E(tk, uk, zk))
        label, pair, g = classify_point(
            pots, (eta, zeta), curve.q(k), curve.dt[k], curve.du[k],
            curve.dz[k], alpha, gates)
        labels_raw.append(label)
        th_u[k] = pair.theta_u
        th_z[k] = pair.theta_z
        residual[k] = max(pair.residual_u, pair.residual_z)
        gap[k] = g
        pairing = float(eta @ curve.du[k]) + float(zeta @ curve.dz[k])
        gap_tol[k] = gates.gap_tol * (1.0 + abs(pairing))

    labels = _min_run_filter(labels_raw, min_run)

    # stationary nodes merge into the preceding regime (or following at s=0)
    runs = _runs(labels)
    for idx, (a, b, lb) in enumerate(runs):
        if lb == STATIONARY:
            new = runs[idx - 1][2] if idx > 0 else (
                runs[idx + 1][2] if idx + 1 < len(runs) else EU_RZ)
            for k in range(a, b):
                labels[k] = new
    labels = _min_run_filter(labels, min_run)

    # drop micro-segments below the minimal parameter fraction
    changed = True
    while changed:
        changed = False
        runs = _runs(labels)
        if len(runs) > 1:
            for idx, (a, b, lb) in enumerate(runs):
                frac = (curve.s[b - 1] - curve.s[a]) / max(curve.S, 1e-300)
                if frac < min_frac:
                    new = runs[idx - 1][2] if idx > 0 else runs[idx + 1][2]
                    for k in range(a, b):
                        labels[k] = new
                    changed = True
                    break

    segments = []
    for a, b, lb in _runs(labels):
        segments.append(RegimeSegment(
            s_a=float(curve.s[a]), s_b=float(curve.s[b - 1]), label=lb,
            theta_u=float(np.mean(th_u[a:b])),
            theta_z=float(np.mean(th_z[a:b])),
            max_residual=float(np.max(residual[a:b]))))
    nodes = NodeClassification(labels_raw=labels_raw, labels=labels,
                               theta_u=th_u, theta_z=th_z, residual=residual,
                               gap=gap, gap_tol=gap_tol)
    return segments, nodes


@dataclass
class RelaxationReport:
    applicable: bool
    equilibrium_set_empty: bool = False
    is_terminal: bool = False
    s_star: float = math.nan
    spurious_pre_nodes: int = 0
    pre_max_dz: float = math.nan
    pre_max_dt: float = math.nan
    post_max_equilibrium_gap: float = math.nan
    reduced_residual: float = math.nan
    reduced_relative: float = math.nan
    reduced_violations: int = 0
    pre_segment_label: Optional[str] = None


def verify_relaxation_structure(curve: ParameterizedCurve, model: EnergyModel,
                                pots: PotentialSet, alpha: float,
                                eq_tol: float = 1e-3,
                                segments: Optional[List[RegimeSegment]] = None,
                                gates: SnapGates = SnapGates()
                                ) -> RelaxationReport:
    """Structure of the equilibrium set for fast-relaxing u (alpha > 1).

    Checks that {s : |D_u E| <= eq_tol} is a terminal interval [s*, S], that
    t and z are frozen before s* while u relaxes, that u matches the
    u-equilibrium map after s*, and that the pair (t, z) satisfies the
    energy identity of the reduced system driven by min_u E on [s*, S].
    """
    if alpha <= 1:
        return RelaxationReport(applicable=False)
    N = curve.n_nodes
    du_norm = np.empty(N)
    for k in range(N):
        du_norm[k] = np.linalg.norm(
            _as_array(model.du_E(curve.t[k], curve.u[k], curve.z[k])))
    mask = du_norm <= eq_tol
    if not np.any(mask):
        return RelaxationReport(applicable=True, equilibrium_set_empty=True)
    false_idx = np.nonzero(~mask)[0]
    i_star = int(false_idx[-1]) + 1 if false_idx.size else 0
    spurious = int(np.sum(mask[:i_star]))
    is_terminal = bool(mask[-1]) and spurious == 0

    report = RelaxationReport(
        applicable=True, is_terminal=is_terminal,
        s_star=float(curve.s[i_star]) if i_star < N else float(curve.S),
        spurious_pre_nodes=spurious)

    if i_star > 0:
        report.pre_max_dz = float(np.max(np.linalg.norm(
            curve.z[:i_star] - curve.z[0], axis=1)))
        report.pre_max_dt = float(np.max(np.abs(curve.t[:i_star]
                                                - curve.t[0])))
    else:
        report.pre_max_dz = 0.0
        report.pre_max_dt = 0.0

    if segments:
        report.pre_segment_label = segments[0].label if i_star > 0 else None

    if i_star >= N:
        return report

    # post-s* checks against the u-equilibrium map and the reduced system
    idx = np.arange(i_star, N)
    eq_gap = 0.0
    I_vals = np.empty(idx.size)
    dtI = np.empty(idx.size)
    m0_vals = np.empty(idx.size)
    violations = 0
    for j, k in enumerate(idx):
        tk, zk = curve.t[k], curve.z[k]
        u_eq = equilibrium_map(model, tk, zk, curve.u[k])
        eq_gap = max(eq_gap, float(np.linalg.norm(curve.u[k] - u_eq)))
        I_vals[j] = float(model.E(tk, u_eq, zk))
        dtI[j] = float(model.dt_E(tk, u_eq, zk))
        zeta_red = -_as_array(model.dz_E(tk, u_eq, zk))
        q_red = np.concatenate([u_eq, zk])
        args = snap_args(pots, q_red, curve.dt[k], np.zeros(model.n),
                         curve.dz[k], np.zeros(model.n), zeta_red, gates)
        val = eval_M0(pots, args, alpha)
        if val.is_finite:
            m0_vals[j] = val.value
        else:
            m0_vals[j] = math.nan
            violations += 1

    ss = curve.s[idx]
    finite = np.isfinite(m0_vals)
    from .mfunctional import _masked_trapezoid
    diss = _masked_trapezoid(m0_vals, ss, finite)
    power = float(np.trapezoid(dtI * curve.dt[idx], ss))
    resid = abs(I_vals[-1] + diss - I_vals[0] - power)

    report.post_max_equilibrium_gap = eq_gap
    report.reduced_residual = resid
    report.reduced_relative = resid / max(diss, 1e-300)
    report.reduced_violations = violations
    return report
