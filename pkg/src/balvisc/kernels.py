"""Hot integration kernels for the built-in models.

The adaptive semi-implicit stepper spends essentially all runtime in a scalar
loop (both built-in experiments are 1+1 dimensional with constant unit
potentials), so that loop lives here in numba-compiled form.  Setting the
environment variable ``BALVISC_DISABLE_NUMBA=1`` before import selects the
identical pure-Python/numpy code path instead; ``benchmarks/bench_solver.py``
compares the two.

General models (state-dependent potentials, arbitrary dimensions, user
callables) take the object-based path in :mod:`balvisc.solver`, which runs the
same algorithm.
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = ["NUMBA_ACTIVE", "NUMBA_DISABLED", "integrate_builtin", "REC_COLUMNS",
           "STATUS_OK", "STATUS_STEP_UNDERFLOW", "STATUS_MAX_STEPS",
           "STATUS_NEWTON_FAIL"]

_flag = os.environ.get("BALVISC_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _flag in {"1", "true", "yes", "on"}

try:
    if NUMBA_DISABLED:
        raise ImportError("numba disabled by BALVISC_DISABLE_NUMBA")
    from numba import njit as _njit
    NUMBA_ACTIVE = True
except ImportError:
    NUMBA_ACTIVE = False

    def _njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(f):
            return f

        return deco


# record layout of one trajectory node
REC_COLUMNS = ("t", "u", "z", "du", "dz", "E", "dtE", "DuE", "DzE",
               "r0_term", "vz_term", "vu_term", "wz_term", "vus_term",
               "h", "incl_res")
_NC = len(REC_COLUMNS)

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2
STATUS_NEWTON_FAIL = 3


@_njit(cache=True)
def _f_spline(zv, fx0, fstep, fc):
    """Piecewise-cubic evaluation of the cached potential F of example 2."""
    ncell = fc.shape[1]
    i = int((zv - fx0) / fstep)
    if i < 0:
        i = 0
    if i > ncell - 1:
        i = ncell - 1
    dx = zv - (fx0 + i * fstep)
    return ((fc[0, i] * dx + fc[1, i]) * dx + fc[2, i]) * dx + fc[3, i]


@_njit(cache=True)
def _du_e(model_id, t, u, z):
    if model_id == 1:
        return u - z - t
    g = 4.0 * z ** 3 - 4.0 * z
    return u - g - t


@_njit(cache=True)
def _dz_e(model_id, t, u, z):
    if model_id == 1:
        return 2.0 * z - u
    g = 4.0 * z ** 3 - 4.0 * z
    gp = 12.0 * z ** 2 - 4.0
    zp = z + 1.0
    fp = -1.0 + zp * zp * (-40.0 + 10.0 * zp * zp
                           + 38.0 * math.exp(-10.0 * (z + 0.5) ** 2))
    return fp + gp * (g - u)


@_njit(cache=True)
def _energy(model_id, t, u, z, fx0, fstep, fc):
    if model_id == 1:
        return 0.5 * (u - z) ** 2 + 0.5 * z * z - t * u
    g = 4.0 * z ** 3 - 4.0 * z
    return 0.5 * (u - g) ** 2 + _f_spline(z, fx0, fstep, fc) - t * u


@_njit(cache=True)
def _grow(rec, n):
    out = np.empty((2 * rec.shape[0], rec.shape[1]))
    out[:n] = rec[:n]
    return out


@_njit(cache=True)
def integrate_builtin(model_id, fx0, fstep, fc,
                      w, vu, vz, eps, alpha, t0, t_end, u0, z0,
                      h0, h_min, h_max, delta_max,
                      newton_tol, newton_maxit, incl_tol, bias_tol,
                      grow_every, grow_fac, max_steps):
    """Adaptive semi-implicit integration of one built-in 1+1-d system.

    Per attempted step: implicit (Newton) u-update with z frozen, then exact
    shrinkage for the z-velocity with the gradient frozen at the updated u.
    A step is accepted when (a) the state increment stays under ``delta_max``,
    (b) the discrete inclusion residual stays under ``incl_tol`` relative to
    the local force scale, and (c) the spurious dual dissipation rate induced
    by the splitting (the end-of-step force residuals fed through the
    conjugate viscous forms, which carry 1/eps^alpha and 1/eps factors) stays
    under ``bias_tol``; the last check is what keeps the discrete energy
    identity tight.  Rejection halves h, five consecutive accepts grow it.

    Returns ``(rec, status)`` where rec rows follow REC_COLUMNS.  Velocities
    are forward difference quotients attributed to the left node; the final
    node repeats the last quotient.
    """
    epsa = eps ** alpha
    cap = 4096
    rec = np.empty((cap, _NC))

    t = t0
    u = u0
    z = z0

    # node 0, force-dependent columns
    rec[0, 0] = t
    rec[0, 1] = u
    rec[0, 2] = z
    rec[0, 5] = _energy(model_id, t, u, z, fx0, fstep, fc)
    rec[0, 6] = -u
    rec[0, 7] = _du_e(model_id, t, u, z)
    rec[0, 8] = _dz_e(model_id, t, u, z)
    dist = abs(-rec[0, 8]) - w
    if dist < 0.0:
        dist = 0.0
    rec[0, 12] = 0.5 * dist * dist / vz / eps
    rec[0, 13] = 0.5 * rec[0, 7] * rec[0, 7] / vu / epsa
    n = 1

    span = t_end - t0
    tiny = 1e-12 * (span if span > 1.0 else 1.0)
    h = h0
    if h > h_max:
        h = h_max
    accepts = 0
    attempts = 0
    status = STATUS_OK

    while t < t_end - tiny:
        attempts += 1
        if attempts > max_steps:
            status = STATUS_MAX_STEPS
            break
        if h > t_end - t:
            h = t_end - t
        t_new = t + h

        # implicit u-substep (both built-ins are convex in u with D2uu = 1)
        fac = epsa * vu / h
        un = u
        newton_ok = False
        # the residual cannot drop below the granularity fac * ulp(u)
        tol_eff = newton_tol + 6.4e-15 * fac * (1.0 + abs(u))
        for _ in range(newton_maxit):
            r = fac * (un - u) + _du_e(model_id, t_new, un, z)
            if abs(r) <= tol_eff:
                newton_ok = True
                break
            un -= r / (fac + 1.0)
        if not newton_ok:
            accepts = 0
            h *= 0.5
            if h < h_min:
                status = STATUS_NEWTON_FAIL
                break
            continue

        # z-substep: exact resolvent with the gradient frozen at (t_new, un, z)
        g = _dz_e(model_id, t_new, un, z)
        s = -g
        if abs(s) <= w:
            v = 0.0
        elif s > 0.0:
            v = (s - w) / (eps * vz)
        else:
            v = (s + w) / (eps * vz)
        zn = z + h * v

        dq = math.sqrt((un - u) ** 2 + (zn - z) ** 2)
        g_new = _dz_e(model_id, t_new, un, zn)
        xi = -eps * vz * v - g_new
        if v > 0.0:
            res = abs(xi - w)
        elif v < 0.0:
            res = abs(xi + w)
        else:
            res = abs(xi) - w
            if res < 0.0:
                res = 0.0

        # end-of-step force residuals, fed through the conjugate forms: the
        # spurious dual dissipation rate the split step would inject
        res_u = fac * (un - u) + _du_e(model_id, t_new, un, zn)
        spur = (0.5 * res * res / (eps * vz)
                + 0.5 * res_u * res_u / (epsa * vu))
        rate_scale = 1.0 + w * abs(v)

        if (dq > delta_max or res > incl_tol * (1.0 + abs(g_new))
                or spur > bias_tol * rate_scale):
            accepts = 0
            h *= 0.5
            if h < h_min:
                status = STATUS_STEP_UNDERFLOW
                break
            continue

        # accept: velocity columns belong to the left node
        du_k = (un - u) / h
        dz_k = (zn - z) / h
        rec[n - 1, 3] = du_k
        rec[n - 1, 4] = dz_k
        rec[n - 1, 9] = w * abs(dz_k)
        rec[n - 1, 10] = eps * 0.5 * vz * dz_k * dz_k
        rec[n - 1, 11] = epsa * 0.5 * vu * du_k * du_k
        rec[n - 1, 14] = h
        rec[n - 1, 15] = res

        if n >= rec.shape[0]:
            rec = _grow(rec, n)
        rec[n, 0] = t_new
        rec[n, 1] = un
        rec[n, 2] = zn
        rec[n, 5] = _energy(model_id, t_new, un, zn, fx0, fstep, fc)
        rec[n, 6] = -un
        rec[n, 7] = _du_e(model_id, t_new, un, zn)
        rec[n, 8] = g_new
        dist = abs(-g_new) - w
        if dist < 0.0:
            dist = 0.0
        rec[n, 12] = 0.5 * dist * dist / vz / eps
        rec[n, 13] = 0.5 * rec[n, 7] * rec[n, 7] / vu / epsa

        t = t_new
        u = un
        z = zn
        n += 1
        accepts += 1
        if accepts >= grow_every:
            h *= grow_fac
            if h > h_max:
                h = h_max
            accepts = 0

    # last node repeats the previous difference quotient
    if n >= 2:
        for c in (3, 4, 9, 10, 11, 14, 15):
            rec[n - 1, c] = rec[n - 2, c]
    else:
        for c in (3, 4, 9, 10, 11, 15):
            rec[0, c] = 0.0
        rec[0, 14] = h0
    return rec[:n].copy(), status
