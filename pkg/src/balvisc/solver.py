"""Adaptive semi-implicit integration of the viscously regularized system.

The system is

    eps^alpha * Vu(q) u' + D_u E(t, u, z)  = 0
    dR0(q, z') + eps * Vz(q) z' + D_z E(t, u, z) ∋ 0

integrated by operator splitting: an implicit (Newton) u-update with z frozen,
followed by the exact resolvent of the z-inclusion with the gradient frozen at
the updated u.  Steps are accepted when the state increment respects the
velocity cap and the inclusion residual stays below tolerance; this resolves
jump transients whose duration scales like eps^alpha or eps without any stiff
solver machinery.

Built-in models with constant scalar potentials dispatch to the compiled
kernel in :mod:`balvisc.kernels`; everything else runs the identical
object-based loop below.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .energy import EnergyModel
from .potentials import (ConfigurationError, NumericalError, PotentialSet,
                         _as_array, dist_to_subdiff, eval_R0, prox_z, conj_Wz)

__all__ = [
    "RateParams", "SolverConfig", "Trajectory", "StepDiagnostics",
    "step", "integrate", "energy_balance_residual", "apriori_diagnostics",
    "count_jump_clusters", "well_preparedness",
]


@dataclass(frozen=True)
class RateParams:
    """Viscosity eps > 0 and rate exponent alpha > 0."""

    eps: float
    alpha: float

    def __post_init__(self):
        if self.eps <= 0 or self.alpha <= 0:
            raise ConfigurationError("RateParams requires eps > 0 and alpha > 0")

    @property
    def regime(self) -> str:
        if self.alpha > 1:
            return "alpha>1"
        if self.alpha == 1:
            return "alpha=1"
        return "alpha<1"


@dataclass(frozen=True)
class SolverConfig:
    h0: float = 1e-6
    h_min: float = 1e-16
    h_max: float = 2.5e-3
    delta_max: float = 2.5e-3
    newton_tol: float = 1e-10
    newton_maxit: int = 60
    incl_tol: float = 2.5e-4
    bias_tol: float = 1e-4
    grow_every: int = 5
    grow_factor: float = 1.5
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not (0 < self.h_min <= self.h0 <= self.h_max):
            raise ConfigurationError("need 0 < h_min <= h0 <= h_max")
        if self.delta_max <= 0:
            raise ConfigurationError("delta_max must be positive")

    def scaled(self, rho: float) -> "SolverConfig":
        """Uniformly refined copy.

        Step-size controls scale linearly; the dual-bias tolerance scales
        quadratically because the bias it bounds is quadratic in the force
        residuals, so a rho-refinement of the step sizes shrinks it by rho^2.
        """
        return SolverConfig(
            h0=self.h0 * rho, h_min=self.h_min, h_max=self.h_max * rho,
            delta_max=self.delta_max * rho, newton_tol=self.newton_tol,
            newton_maxit=self.newton_maxit, incl_tol=self.incl_tol * rho,
            bias_tol=self.bias_tol * rho * rho,
            grow_every=self.grow_every, grow_factor=self.grow_factor,
            max_steps=self.max_steps)


@dataclass
class StepDiagnostics:
    dq: float
    incl_res: float
    newton_iters: int
    spurious_rate: float = 0.0
    rate_scale: float = 1.0


@dataclass
class Trajectory:
    """Sampled viscous solution with per-node energy/dissipation diagnostics.

    Velocities are forward difference quotients attributed to the left node
    (last node repeats).  The five dissipation columns are the integrands of
    the discrete energy identity: R0, the two scaled primal viscous terms, and
    the two scaled dual terms.
    """

    t: np.ndarray
    u: np.ndarray
    z: np.ndarray
    du: np.ndarray
    dz: np.ndarray
    E: np.ndarray
    dtE: np.ndarray
    DuE: np.ndarray
    DzE: np.ndarray
    h: np.ndarray
    incl_res: np.ndarray
    r0_term: Optional[np.ndarray] = None
    vz_term: Optional[np.ndarray] = None
    vu_term: Optional[np.ndarray] = None
    wz_term: Optional[np.ndarray] = None
    vus_term: Optional[np.ndarray] = None
    params: Optional[RateParams] = None
    model_name: str = ""
    status: int = kernels.STATUS_OK

    @property
    def n_samples(self) -> int:
        return self.t.size

    @property
    def n(self) -> int:
        return self.u.shape[1]

    @property
    def m(self) -> int:
        return self.z.shape[1]

    def q(self, k: int) -> np.ndarray:
        return np.concatenate([self.u[k], self.z[k]])

    def q_all(self) -> np.ndarray:
        return np.hstack([self.u, self.z])

    def dq_all(self) -> np.ndarray:
        return np.hstack([self.du, self.dz])

    def has_integrands(self) -> bool:
        return self.r0_term is not None

    def ensure_integrands(self, pots: PotentialSet, params: RateParams):
        """Recompute dissipation columns (used after CSV round trips)."""
        if self.has_integrands():
            return self
        K = self.n_samples
        eps, alpha = params.eps, params.alpha
        r0t = np.empty(K); vzt = np.empty(K); vut = np.empty(K)
        wzt = np.empty(K); vust = np.empty(K)
        for k in range(K):
            qk = self.q(k)
            r0t[k] = eval_R0(pots.r0, qk, self.dz[k])
            vzt[k] = eps * pots.vz.eval(qk, self.dz[k])
            vut[k] = eps ** alpha * pots.vu.eval(qk, self.du[k])
            wzt[k] = conj_Wz(pots.r0, pots.vz, qk, -self.DzE[k]) / eps
            vust[k] = pots.vu.conj(qk, -self.DuE[k]) / eps ** alpha
        self.r0_term, self.vz_term, self.vu_term = r0t, vzt, vut
        self.wz_term, self.vus_term = wzt, vust
        return self

    # -- CSV interface (schema: t, u_*, z_*, du_*, dz_*, E, dtE, DuE_*, DzE_*,
    #    h, incl_residual; floats printed with 17 significant digits) --

    def to_csv(self, path):
        n, m = self.n, self.m
        cols = (["t"] + [f"u_{i+1}" for i in range(n)]
                + [f"z_{j+1}" for j in range(m)]
                + [f"du_{i+1}" for i in range(n)]
                + [f"dz_{j+1}" for j in range(m)]
                + ["E", "dtE"]
                + [f"DuE_{i+1}" for i in range(n)]
                + [f"DzE_{j+1}" for j in range(m)]
                + ["h", "incl_residual"])
        data = np.hstack([self.t[:, None], self.u, self.z, self.du, self.dz,
                          self.E[:, None], self.dtE[:, None],
                          self.DuE, self.DzE,
                          self.h[:, None], self.incl_res[:, None]])
        _write_csv(path, cols, data)

    @classmethod
    def from_csv(cls, path, n: Optional[int] = None, m: Optional[int] = None):
        header, data = _read_csv(path)
        if n is None:
            n = sum(1 for c in header if c.startswith("u_"))
        if m is None:
            m = sum(1 for c in header if c.startswith("z_"))
        expected = 1 + 2 * (n + m) + 2 + (n + m) + 2
        if len(header) != expected:
            raise ConfigurationError(
                f"trajectory CSV has {len(header)} columns, expected {expected}")
        k = 0
        t = data[:, k]; k += 1
        u = data[:, k:k + n]; k += n
        z = data[:, k:k + m]; k += m
        du = data[:, k:k + n]; k += n
        dz = data[:, k:k + m]; k += m
        E = data[:, k]; k += 1
        dtE = data[:, k]; k += 1
        DuE = data[:, k:k + n]; k += n
        DzE = data[:, k:k + m]; k += m
        h = data[:, k]; k += 1
        res = data[:, k]
        return cls(t=t, u=u, z=z, du=du, dz=dz, E=E, dtE=dtE, DuE=DuE,
                   DzE=DzE, h=h, incl_res=res)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _write_csv(path, cols, data):
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in data:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def _read_csv(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        bad = next(i for i, ln in enumerate(lines[1:], start=2)
                   if any(not _is_float(v) for v in ln.split(",")))
        raise ConfigurationError(f"{path}: parse error at line {bad}") from exc
    return header, data


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def step(model: EnergyModel, pots: PotentialSet, params: RateParams,
         t: float, u, z, h: float, cfg: SolverConfig):
    """One semi-implicit step of size h.  Returns (u_new, z_new, diagnostics).

    Raises NumericalError when the u-Newton does not converge; the adaptive
    driver treats that as a rejection.
    """
    if h <= 0:
        raise ConfigurationError("step size must be positive")
    u = _as_array(u); z = _as_array(z)
    eps, alpha = params.eps, params.alpha
    epsa = eps ** alpha
    t_new = t + h
    q0 = np.concatenate([u, z])
    vu_mat = pots.vu.matrix_at(q0)

    un = u.copy()
    r = epsa * (vu_mat @ (un - u)) / h + _as_array(model.du_E(t_new, un, z))
    iters = 0
    # residual floor from the state granularity under the stiff 1/h factor
    fac_scale = epsa * float(np.max(np.abs(vu_mat))) / h
    tol_eff = cfg.newton_tol + 6.4e-15 * fac_scale * (1.0 + float(np.max(np.abs(u))))
    while np.linalg.norm(r) > tol_eff:
        if iters >= cfg.newton_maxit:
            raise NumericalError(
                f"u-Newton stalled at |r|={np.linalg.norm(r):.3e} (t={t}, h={h})")
        jac = epsa * vu_mat / h + np.asarray(model.duu_E(t_new, un, z))
        delta = np.linalg.solve(jac, -r)
        s = 1.0
        nr = np.linalg.norm(r)
        while True:
            u_try = un + s * delta
            r_try = (epsa * (vu_mat @ (u_try - u)) / h
                     + _as_array(model.du_E(t_new, u_try, z)))
            if np.linalg.norm(r_try) <= (1.0 - 0.5 * s) * nr or s < 1e-8:
                break
            s *= 0.5
        un, r = u_try, r_try
        iters += 1

    q_half = np.concatenate([un, z])
    g = _as_array(model.dz_E(t_new, un, z))
    v = prox_z(pots.r0, pots.vz, q_half, g, eps)
    zn = z + h * v

    g_new = _as_array(model.dz_E(t_new, un, zn))
    xi = -eps * (pots.vz.matrix_at(q_half) @ v) - g_new
    res = dist_to_subdiff(pots.r0, q_half, v, xi)
    dq = math.sqrt(float(np.sum((un - u) ** 2)) + float(np.sum((zn - z) ** 2)))

    # spurious dual dissipation rate injected by the split (see kernels)
    res_u_vec = (epsa * (vu_mat @ (un - u)) / h
                 + _as_array(model.du_E(t_new, un, zn)))
    vz_mat = pots.vz.matrix_at(q_half)
    spur = (0.5 * res * res / (eps * float(np.linalg.eigvalsh(vz_mat)[0]))
            + pots.vu.conj(q_half, res_u_vec) / epsa)
    rate_scale = 1.0 + eval_R0(pots.r0, q_half, v)
    return un, zn, StepDiagnostics(dq=dq, incl_res=res, newton_iters=iters,
                                   spurious_rate=spur, rate_scale=rate_scale)


def _fast_path_args(model: EnergyModel, pots: PotentialSet):
    """Kernel arguments when the configuration is kernel-eligible, else None."""
    if model.name not in ("example1", "example2"):
        return None
    if model.n != 1 or model.m != 1:
        return None
    r0, vu, vz = pots.r0, pots.vu, pots.vz
    if not (r0.is_constant and vu.is_constant and vz.is_constant):
        return None
    if not (vu.is_diagonal and vz.is_diagonal):
        return None
    if r0.mode not in ("l1", "iso"):
        return None
    model_id = 1 if model.name == "example1" else 2
    if model_id == 2:
        spline = model.extras["F_spline"]
        fx0 = float(spline.x[0])
        fstep = float(spline.x[1] - spline.x[0])
        fcoef = np.ascontiguousarray(spline.c)
    else:
        fx0, fstep, fcoef = 0.0, 1.0, np.zeros((4, 1))
    return (model_id, fx0, fstep, fcoef, float(r0.weights[0]),
            float(vu.matrix[0, 0]), float(vz.matrix[0, 0]))


def integrate(model: EnergyModel, pots: PotentialSet, params: RateParams,
              cfg: SolverConfig, t0: float, q0, T: float,
              path: str = "auto") -> Trajectory:
    """Integrate from (t0, q0) to T adaptively.  See module docstring.

    ``path`` forces the implementation: "fast" (compiled kernel, built-in
    models only), "general" (object loop), or "auto".
    """
    if T <= t0:
        raise ConfigurationError("need T > t0")
    q0 = _as_array(q0)
    if q0.size != model.n + model.m or not np.all(np.isfinite(q0)):
        raise ConfigurationError(f"initial state {q0} invalid for model dims")
    fast = _fast_path_args(model, pots)
    if path == "fast" and fast is None:
        raise ConfigurationError("fast path not available for this setup")
    if path not in ("auto", "fast", "general"):
        raise ConfigurationError(f"unknown path {path!r}")

    if fast is not None and path in ("auto", "fast"):
        model_id, fx0, fstep, fcoef, w, vu_s, vz_s = fast
        rec, status = kernels.integrate_builtin(
            model_id, fx0, fstep, fcoef, w, vu_s, vz_s,
            params.eps, params.alpha, t0, T, float(q0[0]), float(q0[1]),
            cfg.h0, cfg.h_min, cfg.h_max, cfg.delta_max,
            cfg.newton_tol, cfg.newton_maxit, cfg.incl_tol, cfg.bias_tol,
            cfg.grow_every, cfg.grow_factor, cfg.max_steps)
        traj = Trajectory(
            t=rec[:, 0].copy(), u=rec[:, 1:2].copy(), z=rec[:, 2:3].copy(),
            du=rec[:, 3:4].copy(), dz=rec[:, 4:5].copy(),
            E=rec[:, 5].copy(), dtE=rec[:, 6].copy(),
            DuE=rec[:, 7:8].copy(), DzE=rec[:, 8:9].copy(),
            h=rec[:, 14].copy(), incl_res=rec[:, 15].copy(),
            r0_term=rec[:, 9].copy(), vz_term=rec[:, 10].copy(),
            vu_term=rec[:, 11].copy(), wz_term=rec[:, 12].copy(),
            vus_term=rec[:, 13].copy(), params=params, model_name=model.name,
            status=status)
    else:
        traj = _integrate_general(model, pots, params, cfg, t0, q0, T)

    if traj.status != kernels.STATUS_OK:
        reason = {kernels.STATUS_STEP_UNDERFLOW: "step size underflow",
                  kernels.STATUS_MAX_STEPS: "maximum step count reached",
                  kernels.STATUS_NEWTON_FAIL: "u-Newton failure"}[traj.status]
        err = NumericalError(
            f"integration stopped at t={traj.t[-1]:.6g} of {T}: {reason}")
        err.partial_trajectory = traj
        raise err
    return traj


def _integrate_general(model, pots, params, cfg, t0, q0, T) -> Trajectory:
    eps, alpha = params.eps, params.alpha
    u = q0[:model.n].copy()
    z = q0[model.n:].copy()
    t = t0

    rows_t, rows_u, rows_z = [t0], [u.copy()], [z.copy()]
    rows_du, rows_dz, rows_h, rows_res = [], [], [], []
    rows_E, rows_dtE, rows_DuE, rows_DzE = [], [], [], []
    rows_r0, rows_vz, rows_vu, rows_wz, rows_vus = [], [], [], [], []

    def node_forces(tk, uk, zk):
        qk = np.concatenate([uk, zk])
        rows_E.append(float(model.E(tk, uk, zk)))
        rows_dtE.append(float(model.dt_E(tk, uk, zk)))
        due = _as_array(model.du_E(tk, uk, zk))
        dze = _as_array(model.dz_E(tk, uk, zk))
        rows_DuE.append(due)
        rows_DzE.append(dze)
        rows_wz.append(conj_Wz(pots.r0, pots.vz, qk, -dze) / eps)
        rows_vus.append(pots.vu.conj(qk, -due) / eps ** alpha)

    node_forces(t, u, z)
    span_tiny = 1e-12 * max(T - t0, 1.0)
    h = min(cfg.h0, cfg.h_max)
    accepts = 0
    attempts = 0
    status = kernels.STATUS_OK

    while t < T - span_tiny:
        attempts += 1
        if attempts > cfg.max_steps:
            status = kernels.STATUS_MAX_STEPS
            break
        h = min(h, T - t)
        try:
            un, zn, diag = step(model, pots, params, t, u, z, h, cfg)
            newton_failed = False
        except NumericalError:
            newton_failed = True
        g_scale = 1.0 + float(np.linalg.norm(rows_DzE[-1]))
        if (newton_failed or diag.dq > cfg.delta_max
                or diag.incl_res > cfg.incl_tol * g_scale
                or diag.spurious_rate > cfg.bias_tol * diag.rate_scale):
            accepts = 0
            h *= 0.5
            if h < cfg.h_min:
                status = (kernels.STATUS_NEWTON_FAIL if newton_failed
                          else kernels.STATUS_STEP_UNDERFLOW)
                break
            continue

        qk = np.concatenate([u, z])
        du_k = (un - u) / h
        dz_k = (zn - z) / h
        rows_du.append(du_k)
        rows_dz.append(dz_k)
        rows_r0.append(eval_R0(pots.r0, qk, dz_k))
        rows_vz.append(eps * pots.vz.eval(qk, dz_k))
        rows_vu.append(eps ** alpha * pots.vu.eval(qk, du_k))
        rows_h.append(h)
        rows_res.append(diag.incl_res)

        t, u, z = t + h, un, zn
        rows_t.append(t)
        rows_u.append(u.copy())
        rows_z.append(z.copy())
        node_forces(t, u, z)
        accepts += 1
        if accepts >= cfg.grow_every:
            h = min(h * cfg.grow_factor, cfg.h_max)
            accepts = 0

    K = len(rows_t)
    if K >= 2:
        rows_du.append(rows_du[-1]); rows_dz.append(rows_dz[-1])
        rows_r0.append(rows_r0[-1]); rows_vz.append(rows_vz[-1])
        rows_vu.append(rows_vu[-1]); rows_h.append(rows_h[-1])
        rows_res.append(rows_res[-1])
    else:
        rows_du.append(np.zeros(model.n)); rows_dz.append(np.zeros(model.m))
        rows_r0.append(0.0); rows_vz.append(0.0); rows_vu.append(0.0)
        rows_h.append(cfg.h0); rows_res.append(0.0)

    return Trajectory(
        t=np.array(rows_t), u=np.vstack(rows_u), z=np.vstack(rows_z),
        du=np.vstack(rows_du), dz=np.vstack(rows_dz),
        E=np.array(rows_E), dtE=np.array(rows_dtE),
        DuE=np.vstack(rows_DuE), DzE=np.vstack(rows_DzE),
        h=np.array(rows_h), incl_res=np.array(rows_res),
        r0_term=np.array(rows_r0), vz_term=np.array(rows_vz),
        vu_term=np.array(rows_vu), wz_term=np.array(rows_wz),
        vus_term=np.array(rows_vus), params=params, model_name=model.name,
        status=status)


@dataclass
class EnergyResidual:
    absolute: float
    relative: float
    dissipation: float


def energy_balance_residual(traj: Trajectory, model: EnergyModel,
                            pots: PotentialSet, params: RateParams,
                            k1: int = 0, k2: Optional[int] = None) -> EnergyResidual:
    """Defect of the discrete energy-dissipation identity over [t_k1, t_k2].

    Trapezoidal quadrature of the stored integrands; reported absolutely and
    relative to the total dissipation on the window.
    """
    if k2 is None:
        k2 = traj.n_samples - 1
    if not 0 <= k1 <= k2 < traj.n_samples:
        raise ConfigurationError(f"bad index window [{k1}, {k2}]")
    if k1 == k2:
        return EnergyResidual(0.0, 0.0, 0.0)
    traj.ensure_integrands(pots, params)
    sl = slice(k1, k2 + 1)
    tt = traj.t[sl]
    diss_nodes = (traj.r0_term[sl] + traj.vz_term[sl] + traj.vu_term[sl]
                  + traj.wz_term[sl] + traj.vus_term[sl])
    dissipation = float(np.trapezoid(diss_nodes, tt))
    power = float(np.trapezoid(traj.dtE[sl], tt))
    lhs = traj.E[k2] + dissipation
    rhs = traj.E[k1] + power
    absolute = abs(lhs - rhs)
    return EnergyResidual(absolute, absolute / max(dissipation, 1e-300),
                          dissipation)


@dataclass
class AprioriDiagnostics:
    sup_E: float
    sup_q: float
    total_var_z: float
    total_var_u: float


def apriori_diagnostics(traj: Trajectory) -> AprioriDiagnostics:
    """Uniform-bound monitors: energy sup, state sup, variation of both blocks."""
    if traj.n_samples == 0:
        raise ConfigurationError("empty trajectory")
    q = traj.q_all()
    tv_z = float(np.sum(np.linalg.norm(np.diff(traj.z, axis=0), axis=1)))
    tv_u = float(np.sum(np.linalg.norm(np.diff(traj.u, axis=0), axis=1)))
    return AprioriDiagnostics(
        sup_E=float(np.max(traj.E)),
        sup_q=float(np.max(np.linalg.norm(q, axis=1))),
        total_var_z=tv_z, total_var_u=tv_u)


def count_jump_clusters(traj: Trajectory, speed_factor: float = 20.0,
                        gap: Optional[float] = None) -> int:
    """Number of clusters of jump transients.

    A node counts as jumping when the state speed exceeds ``speed_factor``
    times the average speed of the run: jump transients move at 1/eps-scale
    velocity, sliding and sticking at order one.  (The velocity cap itself is
    not a reliable marker: at stiff spots the inclusion-residual control
    binds before the cap does.)
    """
    dq = np.linalg.norm(np.diff(traj.q_all(), axis=0), axis=1)
    speed = np.linalg.norm(traj.dq_all(), axis=1)[:-1]
    span = traj.t[-1] - traj.t[0]
    ref_speed = max(float(np.sum(dq)) / max(span, 1e-300), 1e-300)
    active = speed >= speed_factor * ref_speed
    if not np.any(active):
        return 0
    if gap is None:
        gap = 0.01 * span
    times = traj.t[:-1][active]
    return int(1 + np.sum(np.diff(times) > gap))


def well_preparedness(model: EnergyModel, params: RateParams,
                      t0: float, q0, C: float = 10.0):
    """Monitor |D_u E(t0, q0)| <= C eps^alpha (reported, never enforced)."""
    q0 = _as_array(q0)
    u, z = model.split(q0)
    value = float(np.linalg.norm(_as_array(model.du_E(t0, u, z))))
    bound = C * params.eps ** params.alpha
    return value, bound, value <= bound
