"""BFGS minimiser with a strong-Wolfe line search (cubic interpolation zoom).

Shared by the trivariate estimator and the SEM fit. Objective callables
return ``(f, grad)``; non-finite values are treated as failed trial points so
the search backs off instead of crashing.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    iterations: int
    converged: bool
    message: str
    evaluations: int
    history: list[float]


def _cubic_min(a0, f0, d0, a1, f1, d1):
    """Minimiser of the cubic matching values and slopes at a0 and a1, or None."""
    t1 = d0 + d1 - 3.0 * (f0 - f1) / (a0 - a1)
    disc = t1 * t1 - d0 * d1
    if disc < 0 or not math.isfinite(disc):
        return None
    t2 = math.copysign(math.sqrt(disc), a1 - a0)
    denom = d1 - d0 + 2.0 * t2
    if denom == 0:
        return None
    return a1 - (a1 - a0) * (d1 + t2 - t1) / denom


def line_search(fg, x, f0, g0, direction, alpha0=1.0, c1=1e-4, c2=0.9, max_iter=40, alpha_max=1e10):
    """Strong-Wolfe step along ``direction``; returns (alpha, f, g, evals) or None."""
    dphi0 = float(g0 @ direction)
    evals = 0

    def phi(a):
        nonlocal evals
        evals += 1
        f, g = fg(x + a * direction)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            return math.inf, None, math.nan
        return f, g, float(g @ direction)

    def zoom(lo, f_lo, d_lo, g_lo, hi, f_hi, d_hi):
        for _ in range(max_iter):
            a = None
            if math.isfinite(f_hi) and math.isfinite(d_hi):
                a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            left, right = min(lo, hi), max(lo, hi)
            margin = 0.1 * (right - left)
            if a is None or not (left + margin <= a <= right - margin):
                a = 0.5 * (lo + hi)
            f, g, d = phi(a)
            if f > f0 + c1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, d
            else:
                if abs(d) <= -c2 * dphi0:
                    return a, f, g
                if d * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo, g_lo = a, f, d, g
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        if lo > 0 and f_lo < f0:
            # sufficient decrease holds even if curvature could not be met
            return lo, f_lo, g_lo
        return None

    a_prev, f_prev, d_prev, g_prev = 0.0, f0, dphi0, g0
    a = alpha0
    for i in range(max_iter):
        f, g, d = phi(a)
        if not math.isfinite(f):
            a = a_prev + 0.25 * (a - a_prev)
            continue
        if f > f0 + c1 * a * dphi0 or (i > 0 and f >= f_prev):
            out = zoom(a_prev, f_prev, d_prev, g_prev, a, f, d)
            return None if out is None else (*out, evals)
        if abs(d) <= -c2 * dphi0:
            return a, f, g, evals
        if d >= 0:
            out = zoom(a, f, d, g, a_prev, f_prev, d_prev)
            return None if out is None else (*out, evals)
        a_prev, f_prev, d_prev, g_prev = a, f, d, g
        a = min(2.0 * a, alpha_max)
    return None


def bfgs(fg, x0, gtol=1e-6, max_iter=500, inv_hessian=None, callback=None) -> OptimizeResult:
    """Minimise ``fg`` from ``x0``; convergence is max |grad| <= gtol.

    ``inv_hessian`` optionally seeds the curvature approximation.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fg(x)
    evals = 1
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise FloatingPointError("objective is not finite at the starting point")
    n = x.size
    seeded = inv_hessian is not None
    inv_h = np.array(inv_hessian, dtype=float) if seeded else np.eye(n)
    scaled = seeded
    history = [float(f)]
    resets = 0
    for it in range(max_iter):
        if np.max(np.abs(g), initial=0.0) <= gtol:
            return OptimizeResult(x, f, g, it, True, "gradient tolerance reached", evals, history)
        direction = -inv_h @ g
        if g @ direction >= 0:
            inv_h = np.eye(n)
            direction = -g
        alpha0 = 1.0 if scaled else min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-12))
        step = line_search(fg, x, f, g, direction, alpha0=alpha0)
        if step is None:
            if resets == 0 and scaled:
                logger.debug("line search failed at iteration %d; resetting curvature", it)
                inv_h = np.eye(n)
                scaled = False
                resets += 1
                continue
            ok = np.max(np.abs(g), initial=0.0) <= gtol
            return OptimizeResult(x, f, g, it, ok, "line search failed", evals, history)
        alpha, f_new, g_new, used = step
        evals += used
        s = alpha * direction
        y = g_new - g
        x = x + s
        f, g = f_new, g_new
        history.append(float(f))
        resets = 0
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                inv_h = np.eye(n) * sy / float(y @ y)
                scaled = True
            rho = 1.0 / sy
            hy = inv_h @ y
            inv_h = (inv_h - rho * (np.outer(s, hy) + np.outer(hy, s))
                     + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
        if callback is not None:
            callback(x, f, g)
    ok = np.max(np.abs(g), initial=0.0) <= gtol
    return OptimizeResult(x, f, g, max_iter, ok, "iteration limit reached", evals, history)


def numeric_hessian(grad_fn, x, rel_step=1e-5):
    """Symmetrised central differences of an analytic gradient."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h_mat = np.empty((n, n))
    for j in range(n):
        h = rel_step * max(1.0, abs(x[j]))
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        h_mat[:, j] = (grad_fn(up) - grad_fn(dn)) / (2.0 * h)
    return 0.5 * (h_mat + h_mat.T)
