"""Dissipation potentials: 1-homogeneous part, quadratic viscous forms, conjugates.

The rate-independent dissipation is a state-dependent weighted norm, either a
weighted l1 sum or an isotropic (Euclidean) norm.  Both families give a
closed-form stable set ``K(q)`` (box resp. ball), closed-form projections onto
it in the relevant metric, and a closed-form resolvent (shrinkage) for the
viscously regularized inclusion.  Viscous potentials are quadratic forms
``v -> 0.5 <M(q) v, v>`` with symmetric positive definite ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

__all__ = [
    "ConfigurationError",
    "NumericalError",
    "R0Spec",
    "QuadraticFormSpec",
    "PotentialSet",
    "eval_R0",
    "in_subdiff_R0",
    "conj_V",
    "project_K",
    "conj_Wz",
    "prox_z",
    "dist_to_K",
    "dist_to_subdiff",
]


class ConfigurationError(ValueError):
    """Raised when a spec or config is inconsistent (bad weights, dims, ...)."""


class NumericalError(RuntimeError):
    """Raised when an inner solver fails (singular matrix, iteration limit)."""


ArrayLike = Union[np.ndarray, float, list]
WeightFn = Callable[[np.ndarray], np.ndarray]
MatrixFn = Callable[[np.ndarray], np.ndarray]


def _as_array(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class R0Spec:
    """Rate-independent dissipation ``R0(q, v)``.

    mode "l1":  R0(q, v) = sum_i w_i(q) |v_i|, stable set is the box
                prod [-w_i(q), w_i(q)].
    mode "iso": R0(q, v) = w(q) |v|_2, stable set is the ball of radius w(q).

    ``weights`` is either a constant array (length m for "l1", length 1 for
    "iso") or a callable of the full state q returning such an array.  Weights
    must stay positive; declared bounds c0/c1 can be validated by sampling.
    """

    mode: str
    weights: Union[np.ndarray, WeightFn]
    m: int
    c0: Optional[float] = None
    c1: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("l1", "iso"):
            raise ConfigurationError(f"unknown R0 mode {self.mode!r}")
        if not callable(self.weights):
            w = _as_array(self.weights)
            expected = self.m if self.mode == "l1" else 1
            if w.shape != (expected,):
                raise ConfigurationError(
                    f"R0 weights shape {w.shape} incompatible with mode "
                    f"{self.mode!r} and m={self.m}")
            if np.any(w <= 0):
                raise ConfigurationError("R0 weights must be positive")
            object.__setattr__(self, "weights", w)

    @property
    def is_constant(self) -> bool:
        return not callable(self.weights)

    def weights_at(self, q) -> np.ndarray:
        if callable(self.weights):
            w = _as_array(self.weights(np.asarray(q, dtype=float)))
            if np.any(w <= 0):
                raise ConfigurationError(
                    f"nonpositive R0 weight {w} at state {np.asarray(q)}")
            return w
        return self.weights

    def check_bounds(self, box_lo, box_hi, samples: int = 10_000, seed: int = 0):
        """Sample the working box and report the observed weight range.

        Returns ``(w_min, w_max, ok)`` where ``ok`` is None unless declared
        bounds are present, in which case it flags whether they hold on the
        sample.
        """
        lo, hi = _as_array(box_lo), _as_array(box_hi)
        rng = np.random.default_rng(seed)
        pts = lo + (hi - lo) * rng.random((samples, lo.size))
        w_min, w_max = np.inf, -np.inf
        for p in pts:
            w = self.weights_at(p)
            w_min = min(w_min, float(np.min(w)))
            w_max = max(w_max, float(np.max(w)))
        ok = None
        if self.c0 is not None and self.c1 is not None:
            ok = (w_min >= self.c0) and (w_max <= self.c1)
        return w_min, w_max, ok


@dataclass(frozen=True)
class QuadraticFormSpec:
    """Quadratic viscous potential ``V(q, v) = 0.5 <M(q) v, v>`` with SPD M."""

    matrix: Union[np.ndarray, MatrixFn]
    dim: int
    constant_flag: bool = True
    c0: Optional[float] = None
    c1: Optional[float] = None

    def __post_init__(self):
        if not callable(self.matrix):
            mat = np.asarray(self.matrix, dtype=float)
            if mat.ndim == 1:
                mat = np.diag(mat)
            if mat.shape != (self.dim, self.dim):
                raise ConfigurationError(
                    f"form matrix shape {mat.shape} != ({self.dim}, {self.dim})")
            _require_spd(mat)
            object.__setattr__(self, "matrix", mat)
        elif self.constant_flag:
            raise ConfigurationError(
                "constant_flag=True requires a constant matrix, not a callable")

    @property
    def is_constant(self) -> bool:
        return not callable(self.matrix)

    @property
    def is_diagonal(self) -> bool:
        if not self.is_constant:
            return False
        m = self.matrix
        return bool(np.all(m == np.diag(np.diag(m))))

    def matrix_at(self, q) -> np.ndarray:
        if callable(self.matrix):
            mat = np.asarray(self.matrix(np.asarray(q, dtype=float)), dtype=float)
            _require_spd(mat)
            return mat
        return self.matrix

    def eval(self, q, v) -> float:
        v = _as_array(v)
        mat = self.matrix_at(q)
        return 0.5 * float(v @ (mat @ v))

    def conj(self, q, xi) -> float:
        """Conjugate 0.5 <M(q)^{-1} xi, xi> of the form (Legendre transform)."""
        xi = _as_array(xi)
        mat = self.matrix_at(q)
        try:
            sol = np.linalg.solve(mat, xi)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"singular viscous form matrix, cond={np.linalg.cond(mat):.3e}"
            ) from exc
        return 0.5 * float(xi @ sol)

    def check_bounds(self, box_lo, box_hi, samples: int = 10_000, seed: int = 0):
        """Sampled eigenvalue range of 0.5*M(q) (coefficients of |v|^2)."""
        lo, hi = _as_array(box_lo), _as_array(box_hi)
        rng = np.random.default_rng(seed)
        if self.is_constant:
            pts = [lo]
        else:
            pts = lo + (hi - lo) * rng.random((samples, lo.size))
        e_min, e_max = np.inf, -np.inf
        for p in pts:
            ev = np.linalg.eigvalsh(self.matrix_at(p))
            e_min = min(e_min, 0.5 * float(ev[0]))
            e_max = max(e_max, 0.5 * float(ev[-1]))
        ok = None
        if self.c0 is not None and self.c1 is not None:
            ok = (e_min >= self.c0) and (e_max <= self.c1)
        return e_min, e_max, ok


def _require_spd(mat: np.ndarray):
    if not np.allclose(mat, mat.T, rtol=1e-12, atol=1e-12):
        raise ConfigurationError("viscous form matrix is not symmetric")
    ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if ev[0] <= 0:
        raise ConfigurationError(
            f"viscous form matrix is not positive definite (min eig {ev[0]:.3e})")


@dataclass(frozen=True)
class PotentialSet:
    """Bundle of the three dissipation ingredients for one system."""

    r0: R0Spec
    vu: QuadraticFormSpec
    vz: QuadraticFormSpec

    @property
    def n(self) -> int:
        return self.vu.dim

    @property
    def m(self) -> int:
        return self.r0.m


def unit_potentials(n: int = 1, m: int = 1, mode: str = "l1") -> PotentialSet:
    """Unit weights and identity viscous forms; the configuration of both
    built-in experiments."""
    return PotentialSet(
        r0=R0Spec(mode=mode, weights=np.ones(m if mode == "l1" else 1), m=m,
                  c0=0.5, c1=2.0),
        vu=QuadraticFormSpec(matrix=np.eye(n), dim=n, c0=0.25, c1=1.0),
        vz=QuadraticFormSpec(matrix=np.eye(m), dim=m, c0=0.25, c1=1.0),
    )


# ---------------------------------------------------------------------------
# operations on the 1-homogeneous part


def eval_R0(r0: R0Spec, q, v) -> float:
    v = _as_array(v)
    w = r0.weights_at(q)
    if r0.mode == "l1":
        return float(np.sum(w * np.abs(v)))
    return float(w[0] * np.linalg.norm(v))


def dist_to_K(r0: R0Spec, q, zeta) -> float:
    """Euclidean distance from a force to the stable set K(q)."""
    zeta = _as_array(zeta)
    w = r0.weights_at(q)
    if r0.mode == "l1":
        excess = np.maximum(np.abs(zeta) - w, 0.0)
        return float(np.linalg.norm(excess))
    return float(max(np.linalg.norm(zeta) - w[0], 0.0))


def _project_K_euclid(r0: R0Spec, q, zeta) -> np.ndarray:
    zeta = _as_array(zeta)
    w = r0.weights_at(q)
    if r0.mode == "l1":
        return np.clip(zeta, -w, w)
    nrm = np.linalg.norm(zeta)
    if nrm <= w[0]:
        return zeta.copy()
    return zeta * (w[0] / nrm)


def dist_to_subdiff(r0: R0Spec, q, v, zeta, vel_tol: float = 0.0) -> float:
    """Euclidean distance from ``zeta`` to the subdifferential of R0(q, .) at v.

    Coordinates with |v_i| <= vel_tol are treated as stationary, where the
    subdifferential is the full interval [-w_i, w_i]; moving coordinates pin
    the face value w_i * sign(v_i).
    """
    v = _as_array(v)
    zeta = _as_array(zeta)
    w = r0.weights_at(q)
    if r0.mode == "l1":
        d2 = 0.0
        for i in range(v.size):
            if abs(v[i]) > vel_tol:
                d2 += (zeta[i] - w[i] * np.sign(v[i])) ** 2
            else:
                d2 += max(abs(zeta[i]) - w[i], 0.0) ** 2
        return float(np.sqrt(d2))
    speed = np.linalg.norm(v)
    if speed > vel_tol:
        return float(np.linalg.norm(zeta - w[0] * v / speed))
    return float(max(np.linalg.norm(zeta) - w[0], 0.0))


def in_subdiff_R0(r0: R0Spec, q, v, zeta, tol: float) -> bool:
    """Membership test ``zeta in dR0(q, v)`` within ``tol``.

    Uses the two defining conditions of the subdifferential of a
    1-homogeneous convex function: zeta lies in K(q) and the pairing with v
    attains the potential value.
    """
    if tol < 0:
        raise ConfigurationError("tol must be nonnegative")
    v = _as_array(v)
    zeta = _as_array(zeta)
    if dist_to_K(r0, q, zeta) > tol:
        return False
    return float(zeta @ v) >= eval_R0(r0, q, v) - tol


def conj_V(form: QuadraticFormSpec, q, xi) -> float:
    """Conjugate of a quadratic viscous form; see QuadraticFormSpec.conj."""
    return form.conj(q, xi)


def project_K(r0: R0Spec, vz: QuadraticFormSpec, q, zeta,
              tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """Projection of ``zeta`` onto K(q) in the V_z(q)^{-1} metric.

    Closed form whenever the metric is separable over the set (diagonal V_z
    with a box K, or scalar V_z with a ball K); otherwise a projected-gradient
    iteration with closed-form Euclidean projections inside.
    """
    zeta = _as_array(zeta)
    w = r0.weights_at(q)
    mat = vz.matrix_at(q)
    diagonal = np.all(mat == np.diag(np.diag(mat)))
    if r0.mode == "l1" and diagonal:
        return np.clip(zeta, -w, w)
    if r0.mode == "iso" and diagonal and np.allclose(np.diag(mat), mat[0, 0]):
        return _project_K_euclid(r0, q, zeta)

    # projected gradient on 0.5 <Vz^{-1}(zeta-om), zeta-om> over K(q)
    a = np.linalg.inv(mat)
    gamma = 1.0 / np.linalg.eigvalsh(a)[-1]
    om = _project_K_euclid(r0, q, zeta)
    stop = tol * (1.0 + np.linalg.norm(zeta))
    for _ in range(max_iter):
        om_next = _project_K_euclid(r0, q, om + gamma * (a @ (zeta - om)))
        if np.linalg.norm(om_next - om) <= stop:
            return om_next
        om = om_next
    raise NumericalError(
        f"project_K did not converge within {max_iter} iterations")


def conj_Wz(r0: R0Spec, vz: QuadraticFormSpec, q, zeta) -> float:
    """Conjugate of R0 + V_z at ``zeta``: min over K(q) of V_z*(q, zeta - om).

    Vanishes exactly when zeta is locally stable (inside K).
    """
    zeta = _as_array(zeta)
    om = project_K(r0, vz, q, zeta)
    return vz.conj(q, zeta - om)


def prox_z(r0: R0Spec, vz: QuadraticFormSpec, q, g, eps: float) -> np.ndarray:
    """Resolvent of the stationary inclusion ``0 in dR0(q,v) + eps Vz(q) v + g``.

    The unique solution is v = Vz(q)^{-1}(-g - om*)/eps where om* is the
    projection of -g onto K(q) in the Vz^{-1} metric; with diagonal Vz and l1
    weights this reduces to coordinatewise shrinkage.
    """
    if eps <= 0:
        raise ConfigurationError("prox_z requires eps > 0")
    g = _as_array(g)
    om = project_K(r0, vz, q, -g)
    rhs = -g - om
    if not np.any(rhs):
        return np.zeros_like(g)
    mat = vz.matrix_at(q)
    return np.linalg.solve(mat, rhs) / eps
