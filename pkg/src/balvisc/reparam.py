"""Reparameterization of trajectories into curves (s, t(s), q(s)).

Jumps of the vanishing-viscosity limit are resolved by switching from the
external time t to a curve parameter s in which the combined speed stays
bounded.  Supported speeds: arc length (1 + |q'|), the plotting speed
max(floor, |u'|, |z'|), and posterior normalization to t' + |q'| = 1.

Curves are resampled onto a uniform s-grid (monotone piecewise-cubic for
t(s), cubic splines for q(s)); derivatives are central differences on that
grid, one-sided at the endpoints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .potentials import ConfigurationError, _as_array
from .solver import Trajectory, _read_csv, _write_csv

__all__ = ["ParameterizedCurve", "arclength_reparam", "custom_reparam",
           "normalize", "sup_distance"]

DEFAULT_NODES = 4096


@dataclass
class ParameterizedCurve:
    s: np.ndarray
    t: np.ndarray
    u: np.ndarray
    z: np.ndarray
    dt: np.ndarray
    du: np.ndarray
    dz: np.ndarray
    tag: str = "arclength"

    @property
    def S(self) -> float:
        return float(self.s[-1])

    @property
    def n(self) -> int:
        return self.u.shape[1]

    @property
    def m(self) -> int:
        return self.z.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.s.size

    def q(self, k: int) -> np.ndarray:
        return np.concatenate([self.u[k], self.z[k]])

    def speed(self) -> np.ndarray:
        """Combined parameterization speed t' + |q'| per node."""
        dq = np.hstack([self.du, self.dz])
        return self.dt + np.linalg.norm(dq, axis=1)

    def to_csv(self, path):
        n, m = self.n, self.m
        cols = (["s", "t"] + [f"u_{i+1}" for i in range(n)]
                + [f"z_{j+1}" for j in range(m)] + ["dt"]
                + [f"du_{i+1}" for i in range(n)]
                + [f"dz_{j+1}" for j in range(m)])
        data = np.hstack([self.s[:, None], self.t[:, None], self.u, self.z,
                          self.dt[:, None], self.du, self.dz])
        _write_csv(path, cols, data)

    @classmethod
    def from_csv(cls, path, tag: str = "arclength"):
        header, data = _read_csv(path)
        n = sum(1 for c in header if c.startswith("u_"))
        m = sum(1 for c in header if c.startswith("z_"))
        if len(header) != 3 + 2 * (n + m):
            raise ConfigurationError(f"curve CSV {path}: unexpected column set")
        k = 2 + n + m
        return cls(s=data[:, 0], t=data[:, 1], u=data[:, 2:2 + n],
                   z=data[:, 2 + n:2 + n + m], dt=data[:, k],
                   du=data[:, k + 1:k + 1 + n], dz=data[:, k + 1 + n:],
                   tag=tag)


def _central_diff(y: np.ndarray, ds: float) -> np.ndarray:
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * ds)
    d[0] = (y[1] - y[0]) / ds
    d[-1] = (y[-1] - y[-2]) / ds
    return d


def _resample(sig, t, q, n_nodes, tag):
    """Interpolate (t, q) sampled at parameter values ``sig`` onto a uniform
    grid; duplicate parameter values (plateaus) are collapsed first."""
    keep = np.concatenate([[True], np.diff(sig) > 1e-14 * max(sig[-1], 1.0)])
    sig, t, q = sig[keep], t[keep], q[keep]
    if sig.size < 2 or sig[-1] <= 0:
        raise ConfigurationError("degenerate curve: zero total parameter length")
    s = np.linspace(0.0, sig[-1], n_nodes)
    t_i = PchipInterpolator(sig, t)(s)
    # monotone interpolation can still produce tiny negative increments from
    # roundoff; clamp them so downstream monotonicity checks are exact
    t_i = np.maximum.accumulate(t_i)
    q_i = np.empty((n_nodes, q.shape[1]))
    for j in range(q.shape[1]):
        q_i[:, j] = CubicSpline(sig, q[:, j])(s)
    # pin endpoints exactly
    t_i[0], t_i[-1] = t[0], t[-1]
    q_i[0], q_i[-1] = q[0], q[-1]
    ds = s[1] - s[0]
    dt = _central_diff(t_i, ds)
    dq = np.column_stack([_central_diff(q_i[:, j], ds)
                          for j in range(q.shape[1])])
    n = q.shape[1]  # caller splits
    return s, t_i, q_i, dt, dq


def _build(sig, traj: Trajectory, n_nodes, tag) -> ParameterizedCurve:
    q = traj.q_all()
    s, t_i, q_i, dt, dq = _resample(sig, traj.t, q, n_nodes, tag)
    n = traj.n
    return ParameterizedCurve(s=s, t=t_i, u=q_i[:, :n], z=q_i[:, n:],
                              dt=dt, du=dq[:, :n], dz=dq[:, n:], tag=tag)


def arclength_reparam(traj: Trajectory, n_nodes: int = DEFAULT_NODES
                      ) -> ParameterizedCurve:
    """Reparameterize by sigma(t) = int_0^t (1 + |q'(r)|) dr (trapezoid)."""
    if traj.n_samples < 2:
        raise ConfigurationError("need at least two trajectory samples")
    speed = 1.0 + np.linalg.norm(traj.dq_all(), axis=1)
    sig = np.concatenate([[0.0], np.cumsum(
        0.5 * (speed[:-1] + speed[1:]) * np.diff(traj.t))])
    return _build(sig, traj, n_nodes, "arclength")


def custom_reparam(traj: Trajectory, floor: float = 0.5,
                   n_nodes: int = DEFAULT_NODES) -> ParameterizedCurve:
    """Reparameterize by the plotting speed max(floor, |u'(t)|, |z'(t)|)."""
    if floor <= 0:
        raise ConfigurationError("floor must be positive")
    du = np.linalg.norm(traj.du, axis=1)
    dz = np.linalg.norm(traj.dz, axis=1)
    speed = np.maximum(floor, np.maximum(du, dz))
    sig = np.concatenate([[0.0], np.cumsum(
        0.5 * (speed[:-1] + speed[1:]) * np.diff(traj.t))])
    return _build(sig, traj, n_nodes, "custom")


def normalize(curve: ParameterizedCurve,
              n_nodes: Optional[int] = None) -> ParameterizedCurve:
    """Reparameterize onto sigma(s) = int (t' + |q'|) ds, so the output obeys
    t' + |q'| = 1 up to discretization; constant plateaus collapse to points.
    """
    if n_nodes is None:
        n_nodes = curve.n_nodes
    speed = curve.speed()
    ds = np.diff(curve.s)
    sig = np.concatenate([[0.0], np.cumsum(
        0.5 * (speed[:-1] + speed[1:]) * ds)])
    if sig[-1] <= 0:
        raise ConfigurationError("totally degenerate curve (zero speed)")
    q = np.hstack([curve.u, curve.z])
    s, t_i, q_i, dt, dq = _resample(sig, curve.t, q, n_nodes, "normalized")
    n = curve.n
    return ParameterizedCurve(s=s, t=t_i, u=q_i[:, :n], z=q_i[:, n:],
                              dt=dt, du=dq[:, :n], dz=dq[:, n:],
                              tag="normalized")


def sup_distance(a: ParameterizedCurve, b: ParameterizedCurve,
                 n_nodes: int = 2048) -> float:
    """Sup distance between two curves in (t, q), compared on the common
    relative parameter s/S (numerical proxy for uniform convergence)."""
    grid = np.linspace(0.0, 1.0, n_nodes)

    def eval_curve(c):
        s = c.s / c.S
        cols = [np.interp(grid, s, c.t)]
        for j in range(c.n):
            cols.append(np.interp(grid, s, c.u[:, j]))
        for j in range(c.m):
            cols.append(np.interp(grid, s, c.z[:, j]))
        return np.column_stack(cols)

    va, vb = eval_curve(a), eval_curve(b)
    return float(np.max(np.linalg.norm(va - vb, axis=1)))
