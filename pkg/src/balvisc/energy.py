"""Energy models E(t, u, z): evaluators, assumption diagnostics, reduced energy.

A model carries first derivatives (time power, both partial gradients), the
two second derivatives used by the solver and the u-equilibrium Newton, and
declared constants for the sampled assumption checks.  Two built-in models
ship with the package:

* ``example1`` -- quadratic coupling, E = 0.5(u-z)^2 + 0.5 z^2 - t u.
* ``example2`` -- nonconvex coupling through g(z) = 4z^3 - 4z and a potential
  F reconstructed from its derivative by quadrature (fixed F(-1.2) = 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .potentials import ConfigurationError, NumericalError, _as_array

__all__ = [
    "EnergyModel",
    "example1",
    "example2",
    "get_model",
    "eval_energy",
    "check_assumptions",
    "finite_difference_report",
    "equilibrium_map",
    "reduced_I",
]


@dataclass(frozen=True)
class EnergyModel:
    """Smooth energy on [t0, T] x R^n x R^m with explicit derivatives."""

    name: str
    n: int
    m: int
    E: Callable[[float, np.ndarray, np.ndarray], float]
    dt_E: Callable[[float, np.ndarray, np.ndarray], float]
    du_E: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    dz_E: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    duu_E: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    duz_E: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    c0: Optional[float] = None          # coercivity: E >= c0|q|^2 - c0_offset
    c0_offset: Optional[float] = None
    c1: Optional[float] = None          # power control: |dtE| <= c1 * (E + shift)
    mu: Optional[float] = None          # uniform convexity modulus in u
    extras: dict = field(default_factory=dict, compare=False)

    def split(self, q):
        q = _as_array(q)
        return q[: self.n], q[self.n:]

    def dq_E(self, t, u, z):
        return np.concatenate([_as_array(self.du_E(t, u, z)),
                               _as_array(self.dz_E(t, u, z))])


def example1() -> EnergyModel:
    """Quadratic 1+1-dimensional model with linear loading."""

    def E(t, u, z):
        return 0.5 * (u[0] - z[0]) ** 2 + 0.5 * z[0] ** 2 - t * u[0]

    return EnergyModel(
        name="example1", n=1, m=1,
        E=E,
        dt_E=lambda t, u, z: -u[0],
        du_E=lambda t, u, z: np.array([u[0] - z[0] - t]),
        dz_E=lambda t, u, z: np.array([2.0 * z[0] - u[0]]),
        duu_E=lambda t, u, z: np.array([[1.0]]),
        duz_E=lambda t, u, z: np.array([[-1.0]]),
        c0=0.05, c0_offset=15.0, c1=6.0, mu=1.0,
    )


def _fprime(z):
    """Derivative of the nonconvex on-site potential of example 2."""
    zp = z + 1.0
    return -1.0 + zp * zp * (-40.0 + 10.0 * zp * zp
                             + 38.0 * np.exp(-10.0 * (z + 0.5) ** 2))


def _build_F_cache(lo: float, hi: float, step: float, z_ref: float):
    """Cumulative Gauss-Legendre quadrature of F' on a dense grid + cubic fit.

    Only energy differences matter downstream, so the additive constant is
    fixed by F(z_ref) = 0.
    """
    n_cells = int(round((hi - lo) / step))
    grid = lo + step * np.arange(n_cells + 1)
    # 5-point Gauss-Legendre per cell, vectorized over all cells
    nodes, wts = np.polynomial.legendre.leggauss(5)
    mid = 0.5 * (grid[:-1] + grid[1:])
    half = 0.5 * step
    cell = np.zeros(n_cells)
    for x, w in zip(nodes, wts):
        cell += w * _fprime(mid + half * x)
    cell *= half
    F = np.concatenate([[0.0], np.cumsum(cell)])
    spline = CubicSpline(grid, F)
    F -= float(spline(z_ref))
    spline = CubicSpline(grid, F)
    return grid, F, spline


def example2(grid_lo: float = -3.7, grid_hi: float = 3.7,
             grid_step: float = 1e-4, z_ref: float = -1.2) -> EnergyModel:
    """Nonconvex 1+1-dimensional model; F cached by quadrature at build time."""

    grid, F_vals, F = _build_F_cache(grid_lo, grid_hi, grid_step, z_ref)

    def g(z):
        return 4.0 * z ** 3 - 4.0 * z

    def gp(z):
        return 12.0 * z ** 2 - 4.0

    def _F(z):
        if z < grid_lo or z > grid_hi:
            raise ConfigurationError(
                f"z={z} outside the F cache range [{grid_lo}, {grid_hi}]")
        return float(F(z))

    def E(t, u, z):
        return 0.5 * (u[0] - g(z[0])) ** 2 + _F(z[0]) - t * u[0]

    return EnergyModel(
        name="example2", n=1, m=1,
        E=E,
        dt_E=lambda t, u, z: -u[0],
        du_E=lambda t, u, z: np.array([u[0] - g(z[0]) - t]),
        dz_E=lambda t, u, z: np.array(
            [_fprime(z[0]) + gp(z[0]) * (g(z[0]) - u[0])]),
        duu_E=lambda t, u, z: np.array([[1.0]]),
        duz_E=lambda t, u, z: np.array([[-gp(z[0])]]),
        c0=0.001, c0_offset=60.0, c1=10.0, mu=1.0,
        extras={"F_grid": grid, "F_values": F_vals, "F_spline": F,
                "g": g, "gp": gp, "fprime": _fprime},
    )


_BUILTINS = {"example1": example1, "example2": example2}


def get_model(name: str) -> EnergyModel:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown model {name!r}; built-ins: {sorted(_BUILTINS)}") from None


def eval_energy(model: EnergyModel, t: float, q):
    """Return (E, dtE, DuE, DzE) at (t, q); rejects non-finite output."""
    u, z = model.split(q)
    vals = (float(model.E(t, u, z)), float(model.dt_E(t, u, z)),
            _as_array(model.du_E(t, u, z)), _as_array(model.dz_E(t, u, z)))
    if not (math.isfinite(vals[0]) and math.isfinite(vals[1])
            and np.all(np.isfinite(vals[2])) and np.all(np.isfinite(vals[3]))):
        raise NumericalError(f"non-finite energy output at t={t}, q={q}")
    return vals


@dataclass
class AssumptionReport:
    coercivity_margin: float
    coercivity_ok: Optional[bool]
    power_ratio: float
    power_shift: float
    power_ok: Optional[bool]
    convexity_min: float
    convexity_ok: Optional[bool]
    mixed_derivative_max: float

    def all_ok(self) -> bool:
        checks = [self.coercivity_ok, self.power_ok, self.convexity_ok]
        return all(c is not False for c in checks)


def _sample_box(box, samples, seed):
    (t_lo, t_hi), q_lo, q_hi = box
    q_lo, q_hi = _as_array(q_lo), _as_array(q_hi)
    rng = np.random.default_rng(seed)
    ts = t_lo + (t_hi - t_lo) * rng.random(samples)
    qs = q_lo + (q_hi - q_lo) * rng.random((samples, q_lo.size))
    return ts, qs


def check_assumptions(model: EnergyModel, box, samples: int = 10_000,
                      seed: int = 0, shift: Optional[float] = None) -> AssumptionReport:
    """Sampled worst-case checks of coercivity, power control, u-convexity.

    The power-control ratio is formed after shifting E to be >= 1 on the box
    (a constant shift leaves the evolution unchanged).  Report-only; declared
    constants turn the raw numbers into pass/fail flags.
    """
    ts, qs = _sample_box(box, samples, seed)
    E_vals = np.empty(samples)
    dt_vals = np.empty(samples)
    conv_min = np.inf
    mixed_max = 0.0
    for k in range(samples):
        u, z = model.split(qs[k])
        E_vals[k] = model.E(ts[k], u, z)
        dt_vals[k] = model.dt_E(ts[k], u, z)
        hess = np.asarray(model.duu_E(ts[k], u, z))
        conv_min = min(conv_min, float(np.linalg.eigvalsh(hess)[0]))
        mixed_max = max(mixed_max, float(np.max(np.abs(model.duz_E(ts[k], u, z)))))

    q_sq = np.sum(qs * qs, axis=1)
    if model.c0 is not None:
        off = model.c0_offset if model.c0_offset is not None else 0.0
        margin = float(np.min(E_vals - (model.c0 * q_sq - off)))
        co_ok = margin >= 0.0
    else:
        margin, co_ok = float(np.min(E_vals)), None

    if shift is None:
        shift = max(0.0, 1.0 - float(np.min(E_vals)))
    ratio = float(np.max(np.abs(dt_vals) / (E_vals + shift)))
    p_ok = (ratio <= model.c1) if model.c1 is not None else None
    cv_ok = (conv_min >= model.mu - 1e-9) if model.mu is not None else None
    return AssumptionReport(margin, co_ok, ratio, shift, p_ok, conv_min, cv_ok,
                            mixed_max)


def finite_difference_report(model: EnergyModel, box, samples: int = 100,
                             h: float = 1e-5, seed: int = 1):
    """Max relative error of declared first derivatives vs central differences."""
    ts, qs = _sample_box(box, samples, seed)
    worst = {"dt": 0.0, "du": 0.0, "dz": 0.0}
    for k in range(samples):
        t = ts[k]
        u, z = model.split(qs[k])
        scale = 1.0 + abs(model.E(t, u, z))
        fd_t = (model.E(t + h, u, z) - model.E(t - h, u, z)) / (2 * h)
        worst["dt"] = max(worst["dt"], abs(fd_t - model.dt_E(t, u, z)) / scale)
        for i in range(model.n):
            e = np.zeros(model.n); e[i] = h
            fd = (model.E(t, u + e, z) - model.E(t, u - e, z)) / (2 * h)
            worst["du"] = max(worst["du"],
                              abs(fd - model.du_E(t, u, z)[i]) / scale)
        for j in range(model.m):
            e = np.zeros(model.m); e[j] = h
            fd = (model.E(t, u, z + e) - model.E(t, u, z - e)) / (2 * h)
            worst["dz"] = max(worst["dz"],
                              abs(fd - model.dz_E(t, u, z)[j]) / scale)
    return worst


def equilibrium_map(model: EnergyModel, t: float, z, u_guess,
                    tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Unique solution u of D_u E(t, u, z) = 0, by damped Newton.

    Requires a declared uniform convexity modulus; convexity makes the
    residual norm a valid line-search merit function.
    """
    if model.mu is None or model.mu <= 0:
        raise ConfigurationError(
            f"model {model.name!r} declares no uniform convexity modulus")
    z = _as_array(z)
    u = _as_array(u_guess).astype(float).copy()
    r = _as_array(model.du_E(t, u, z))
    for _ in range(max_iter):
        nr = np.linalg.norm(r)
        if nr <= tol:
            return u
        hess = np.asarray(model.duu_E(t, u, z))
        step = np.linalg.solve(hess, -r)
        s = 1.0
        for _ in range(60):
            u_try = u + s * step
            r_try = _as_array(model.du_E(t, u_try, z))
            if np.linalg.norm(r_try) <= (1.0 - 0.5 * s) * nr:
                break
            s *= 0.5
        u, r = u_try, r_try
    if np.linalg.norm(r) <= tol:
        return u
    raise NumericalError(
        f"equilibrium Newton stalled at residual {np.linalg.norm(r):.3e}, "
        f"last iterate {u}")


def reduced_I(model: EnergyModel, t: float, z, u_guess=None):
    """Reduced energy min_u E(t, u, z) and its z-gradient (envelope formula)."""
    z = _as_array(z)
    if u_guess is None:
        u_guess = np.zeros(model.n)
    u = equilibrium_map(model, t, z, u_guess)
    I_val = float(model.E(t, u, z))
    dz_I = _as_array(model.dz_E(t, u, z))
    return I_val, dz_I, u
