"""Closed-form log-likelihood of the recursive continuous/ordinal/ordinal system.

Conditioning on the continuous outcome y1 leaves a recursive bivariate ordered
probit in (y2*, y3*). Substituting y2* into the y3* equation gives a reduced
form whose two errors are bivariate normal; standardising them yields the
scale factors ``lambda2``, ``lambda3`` and the correlation ``rho_tilde`` so
every (y2, y3) cell is a four-corner sum of standard bivariate normal CDFs.

The score is analytic. It is checked against central differences in the tests
and the numeric route stays available through ``loglik_gradient(method=...)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import bvn_cdf, bvn_pdf
from .model import (
    Dataset,
    Design,
    ModelSpec,
    ParameterSet,
    SpecError,
    angles_jacobian,
    build_design,
    constrain,
)

PROB_FLOOR = 1e-300
CHUNK_ROWS = 8192
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ConditionalTerms:
    h2: np.ndarray | float
    h3: np.ndarray | float
    lambda2: float
    lambda3: float
    rho_tilde: float


def reduced_form_scales(theta23: float, rho12: float, rho13: float, rho23: float):
    """(lambda2, lambda3, rho_tilde) normalising the reduced-form errors."""
    c12 = 1.0 - rho12 * rho12
    q = rho23 - rho12 * rho13
    v3 = theta23 * theta23 * c12 + 2.0 * theta23 * q + 1.0 - rho13 * rho13
    lam2 = 1.0 / math.sqrt(c12)
    lam3 = 1.0 / math.sqrt(v3)
    return lam2, lam3, lam2 * lam3 * (theta23 * c12 + q)


def _scale_partials(theta23, rho12, rho13, rho23):
    """Partials of (lambda2, lambda3, rho_tilde) w.r.t. (theta23, rho12, rho13, rho23)."""
    c12 = 1.0 - rho12 * rho12
    q = rho23 - rho12 * rho13
    v3 = theta23 * theta23 * c12 + 2.0 * theta23 * q + 1.0 - rho13 * rho13
    cov = theta23 * c12 + q
    lam2 = c12 ** -0.5
    lam3 = v3 ** -0.5
    d_lam2 = np.array([0.0, rho12 * c12 ** -1.5, 0.0, 0.0])
    d_v3 = np.array([
        2.0 * theta23 * c12 + 2.0 * q,
        -2.0 * theta23 * theta23 * rho12 - 2.0 * theta23 * rho13,
        -2.0 * theta23 * rho12 - 2.0 * rho13,
        2.0 * theta23,
    ])
    d_lam3 = -0.5 * v3 ** -1.5 * d_v3
    d_cov = np.array([c12, -2.0 * theta23 * rho12 - rho13, -rho12, 1.0])
    d_rt = d_lam2 * lam3 * cov + lam2 * d_lam3 * cov + lam2 * lam3 * d_cov
    return d_lam2, d_lam3, d_rt


def conditional_terms(p: ParameterSet, x1, x2, x3, y1) -> ConditionalTerms:
    """h2, h3 and the reduced-form scales for one row or a block of rows.

    ``x1``, ``x2``, ``x3`` are design rows (or matrices) matching the
    specification, intercept included.
    """
    x1, x2, x3 = (np.asarray(x, dtype=float) for x in (x1, x2, x3))
    if x1.shape[-1] != p.gamma1.size or x2.shape[-1] != p.gamma2.size or x3.shape[-1] != p.gamma3.size:
        raise SpecError("design row dimensions do not match the parameter set")
    z = (y1 - x1 @ p.gamma1) / p.sigma1
    h2 = x2 @ p.gamma2 + p.theta12 * y1 + p.rho12 * z
    h3 = x3 @ p.gamma3 + p.theta13 * y1 + p.rho13 * z
    lam2, lam3, rt = reduced_form_scales(p.theta23, p.rho12, p.rho13, p.rho23)
    return ConditionalTerms(h2, h3, lam2, lam3, rt)


def _limits(terms: ConditionalTerms, theta23: float, lo2, hi2, lo3, hi3):
    g3 = terms.h3 + theta23 * terms.h2
    return (
        (lo2 - terms.h2) * terms.lambda2,
        (hi2 - terms.h2) * terms.lambda2,
        (lo3 - g3) * terms.lambda3,
        (hi3 - g3) * terms.lambda3,
    )


def _reflect(lo, hi):
    """Flip an interval into the lower tail when its centre is positive."""
    with np.errstate(invalid="ignore"):
        flip = (lo + hi) > 0
    return flip, np.where(flip, -hi, lo), np.where(flip, -lo, hi)


def _rectangle(a_lo, a_hi, b_lo, b_hi, rho, grad=False):
    """P(a_lo < X <= a_hi, b_lo < Y <= b_hi) for standard bivariate normals.

    Each axis is reflected into the lower tail first, which keeps the
    four-corner differences from cancelling when the cell is far out.
    With ``grad`` the partials w.r.t. the four limits and rho are returned too.
    """
    fx, a_lo, a_hi = _reflect(np.asarray(a_lo, float), np.asarray(a_hi, float))
    fy, b_lo, b_hi = _reflect(np.asarray(b_lo, float), np.asarray(b_hi, float))
    sign = np.where(fx != fy, -1.0, 1.0)
    r = sign * rho
    n = a_lo.shape[0]
    f = bvn_cdf(np.concatenate([a_hi, a_lo, a_hi, a_lo]),
                np.concatenate([b_hi, b_hi, b_lo, b_lo]),
                np.concatenate([r, r, r, r]))
    prob = f[:n] - f[n:2 * n] - f[2 * n:3 * n] + f[3 * n:]
    if not grad:
        return prob
    fa_hh, fb_hh, fr_hh = _bvn_partials(a_hi, b_hi, r)
    fa_lh, fb_lh, fr_lh = _bvn_partials(a_lo, b_hi, r)
    fa_hl, fb_hl, fr_hl = _bvn_partials(a_hi, b_lo, r)
    fa_ll, fb_ll, fr_ll = _bvn_partials(a_lo, b_lo, r)
    da_hi, da_lo = fa_hh - fa_hl, fa_ll - fa_lh
    db_hi, db_lo = fb_hh - fb_lh, fb_ll - fb_hl
    # undo the reflections: a flipped upper limit was the negated lower one
    da_hi, da_lo = np.where(fx, -da_lo, da_hi), np.where(fx, -da_hi, da_lo)
    db_hi, db_lo = np.where(fy, -db_lo, db_hi), np.where(fy, -db_hi, db_lo)
    d_rho = sign * (fr_hh - fr_lh - fr_hl + fr_ll)
    return prob, (da_lo, da_hi, db_lo, db_hi, d_rho)


def _four_corners(a_lo, a_hi, b_lo, b_hi, rho):
    n = np.shape(a_lo)[0]
    return _rectangle(a_lo, a_hi, b_lo, b_hi, np.full(n, float(rho)))


def cell_probability(terms: ConditionalTerms, p: ParameterSet, j2: int, j3: int) -> float:
    """P(y2 = j2, y3 = j3 | y1) for a single row."""
    c2, c3 = p.cut_points(2), p.cut_points(3)
    if not (1 <= j2 <= c2.size - 1 and 1 <= j3 <= c3.size - 1):
        raise ValueError(f"level ({j2}, {j3}) outside 1..{c2.size - 1} x 1..{c3.size - 1}")
    lims = _limits(terms, p.theta23, c2[j2 - 1], c2[j2], c3[j3 - 1], c3[j3])
    lims = [np.atleast_1d(np.asarray(v, dtype=float)) for v in lims]
    return float(max(_four_corners(*lims, terms.rho_tilde)[0], 0.0))


def cell_grid(terms: ConditionalTerms, p: ParameterSet) -> np.ndarray:
    """Full J2 x J3 grid of conditional cell probabilities for one row."""
    c2, c3 = p.cut_points(2), p.cut_points(3)
    j2s, j3s = np.meshgrid(np.arange(1, c2.size), np.arange(1, c3.size), indexing="ij")
    j2s, j3s = j2s.ravel(), j3s.ravel()
    h2 = np.full(j2s.size, float(terms.h2))
    h3 = np.full(j2s.size, float(terms.h3))
    t = ConditionalTerms(h2, h3, terms.lambda2, terms.lambda3, terms.rho_tilde)
    lims = _limits(t, p.theta23, c2[j2s - 1], c2[j2s], c3[j3s - 1], c3[j3s])
    return np.maximum(_four_corners(*lims, t.rho_tilde), 0.0).reshape(c2.size - 1, c3.size - 1)


def _obs_terms(p: ParameterSet, d: Design):
    terms = conditional_terms(p, d.x1, d.x2, d.x3, d.y1)
    c2, c3 = p.cut_points(2), p.cut_points(3)
    lims = _limits(terms, p.theta23, c2[d.y2 - 1], c2[d.y2], c3[d.y3 - 1], c3[d.y3])
    prob = _four_corners(*lims, terms.rho_tilde)
    z = (d.y1 - d.x1 @ p.gamma1) / p.sigma1
    marginal = -math.log(p.sigma1) - _HALF_LOG_2PI - 0.5 * z * z
    return terms, lims, prob, z, marginal


def _obs_loglik_design(p: ParameterSet, d: Design) -> np.ndarray:
    _, _, prob, _, marginal = _obs_terms(p, d)
    return np.log(np.maximum(prob, PROB_FLOOR)) + marginal


def obs_loglik(p: ParameterSet, data: Dataset | Design, spec: ModelSpec | None = None) -> np.ndarray:
    """Per-observation log-likelihood contributions."""
    d = data if isinstance(data, Design) else build_design(data, spec)
    return _obs_loglik_design(p, d)


def _chunks(n: int):
    return [slice(i, min(i + CHUNK_ROWS, n)) for i in range(0, n, CHUNK_ROWS)]


def _map_chunks(fn, d: Design, workers: int):
    parts = [d.take(s) for s in _chunks(d.n)]
    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, parts))
    return [fn(part) for part in parts]


def total_loglik(p: ParameterSet, data: Dataset | Design, spec: ModelSpec | None = None,
                 workers: int = 1) -> float:
    """Sum of per-row contributions in fixed chunks; the reduction order never
    depends on ``workers``."""
    d = data if isinstance(data, Design) else build_design(data, spec)
    total = 0.0
    for part in _map_chunks(lambda c: float(np.sum(_obs_loglik_design(p, c))), d, workers):
        total += part
    return total


def _bvn_partials(a, b, rho):
    """dF/da, dF/db, dF/drho of the bivariate CDF, zero at infinite corners."""
    s = np.sqrt(1.0 - rho * rho)
    with np.errstate(invalid="ignore"):
        fa = np.where(np.isfinite(a), np.exp(-0.5 * a * a) * special.ndtr((b - rho * a) / s), 0.0)
        fb = np.where(np.isfinite(b), np.exp(-0.5 * b * b) * special.ndtr((a - rho * b) / s), 0.0)
    fa = np.nan_to_num(fa) / math.sqrt(2.0 * math.pi)
    fb = np.nan_to_num(fb) / math.sqrt(2.0 * math.pi)
    return fa, fb, bvn_pdf(a, b, rho)


def _finite_times(x, y):
    return np.where(np.isfinite(x), np.nan_to_num(x, posinf=0.0, neginf=0.0) * y, 0.0)


def _score_design(p: ParameterSet, d: Design):
    """(loglik, natural-parameter partials) for one block of rows."""
    terms = conditional_terms(p, d.x1, d.x2, d.x3, d.y1)
    c2, c3 = p.cut_points(2), p.cut_points(3)
    a_lo, a_hi, b_lo, b_hi = _limits(terms, p.theta23, c2[d.y2 - 1], c2[d.y2], c3[d.y3 - 1], c3[d.y3])
    rt = terms.rho_tilde
    prob, (da_lo, da_hi, db_lo, db_hi, d_rho) = _rectangle(
        a_lo, a_hi, b_lo, b_hi, np.full(d.n, rt), grad=True)
    z = (d.y1 - d.x1 @ p.gamma1) / p.sigma1
    marginal = -math.log(p.sigma1) - _HALF_LOG_2PI - 0.5 * z * z
    lam2, lam3 = terms.lambda2, terms.lambda3
    ok = prob > PROB_FLOOR
    ll = float(np.sum(np.log(np.maximum(prob, PROB_FLOOR)) + marginal))
    inv_p = np.where(ok, 1.0 / np.where(ok, prob, 1.0), 0.0)

    da_hi, da_lo, db_hi, db_lo = (v * inv_p for v in (da_hi, da_lo, db_hi, db_lo))
    d_rt = np.sum(d_rho * inv_p)

    d_g3 = -lam3 * (db_hi + db_lo)
    d_h2 = -lam2 * (da_hi + da_lo) + p.theta23 * d_g3
    d_lam2 = np.sum(_finite_times(a_hi, da_hi) + _finite_times(a_lo, da_lo)) / lam2
    d_lam3 = np.sum(_finite_times(b_hi, db_hi) + _finite_times(b_lo, db_lo)) / lam3

    # thresholds: level j is bounded by mu[j-2] below and mu[j-1] above
    j2, j3 = p.mu2.size + 1, p.mu3.size + 1
    up2, lo2 = d.y2 <= j2 - 1, d.y2 >= 2
    d_mu2 = (np.bincount(d.y2[up2] - 1, lam2 * da_hi[up2], minlength=j2 - 1)
             + np.bincount(d.y2[lo2] - 2, lam2 * da_lo[lo2], minlength=j2 - 1))
    up3, lo3 = d.y3 <= j3 - 1, d.y3 >= 2
    d_mu3 = (np.bincount(d.y3[up3] - 1, lam3 * db_hi[up3], minlength=j3 - 1)
             + np.bincount(d.y3[lo3] - 2, lam3 * db_lo[lo3], minlength=j3 - 1))

    s = p.sigma1
    d_z = d_h2 * p.rho12 + d_g3 * p.rho13 - z
    g = {
        "gamma1": d.x1.T @ (-d_z / s),
        "gamma2": d.x2.T @ d_h2,
        "gamma3": d.x3.T @ d_g3,
        "theta12": float(d_h2 @ d.y1),
        "theta13": float(d_g3 @ d.y1),
        "theta23": float(d_g3 @ terms.h2),
        "sigma1": float(np.sum(-d_z * z) / s - d.n / s),
        "rho12": float(d_h2 @ z),
        "rho13": float(d_g3 @ z),
        "rho23": 0.0,
        "scales": np.array([d_lam2, d_lam3, d_rt]),
        "mu2": d_mu2,
        "mu3": d_mu3,
    }
    return ll, g


def _sum_scores(parts):
    ll = 0.0
    acc = None
    for part_ll, g in parts:
        ll += part_ll
        if acc is None:
            acc = {k: np.array(v, dtype=float) for k, v in g.items()}
        else:
            for k, v in g.items():
                acc[k] = acc[k] + v
    return ll, acc


def loglik_and_gradient(u: np.ndarray, design: Design, spec: ModelSpec, workers: int = 1):
    """Total log-likelihood and its analytic gradient in unconstrained coordinates."""
    p = constrain(u, spec)
    ll, g = _sum_scores(_map_chunks(lambda c: _score_design(p, c), design, workers))
    d_lam2, d_lam3, d_rt = g["scales"]
    j_lam2, j_lam3, j_rt = _scale_partials(p.theta23, p.rho12, p.rho13, p.rho23)
    via_scales = d_lam2 * j_lam2 + d_lam3 * j_lam3 + d_rt * j_rt  # (theta23, rho12, rho13, rho23)

    sl = spec.slices()
    grad = np.zeros(spec.n_params)
    grad[sl["gamma1"]] = g["gamma1"]
    grad[sl["gamma2"]] = g["gamma2"]
    grad[sl["gamma3"]] = g["gamma3"]
    grad[sl["theta"]] = [g["theta12"], g["theta13"], g["theta23"] + via_scales[0]]
    grad[sl["log_sigma1"]] = g["sigma1"] * p.sigma1
    d_rho = np.array([g["rho12"], g["rho13"], g["rho23"]]) + via_scales[1:]
    grad[sl["angles"]] = angles_jacobian(u[sl["angles"]]).T @ d_rho
    for name in ("mu2", "mu3"):
        s = sl[name]
        d_mu = g[name][1:]  # the first threshold is pinned
        # mu[m] = sum_{i < m} exp(v_i)  =>  d/dv_i = exp(v_i) * sum_{m > i} d_mu[m]
        grad[s] = np.exp(u[s]) * np.cumsum(d_mu[::-1])[::-1]
    return ll, grad


def numeric_gradient(fn, u: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step rel_step * max(1, |u_i|)."""
    u = np.asarray(u, dtype=float)
    grad = np.empty_like(u)
    for i in range(u.size):
        h = rel_step * max(1.0, abs(u[i]))
        up, dn = u.copy(), u.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fn(up) - fn(dn)) / (2.0 * h)
    return grad


def loglik_gradient(u: np.ndarray, data: Dataset | Design, spec: ModelSpec,
                    method: str = "analytic", workers: int = 1) -> np.ndarray:
    """Gradient of ``total_loglik . constrain`` at ``u``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.n_params,):
        raise SpecError(f"expected {spec.n_params} parameters, got {u.shape}")
    d = data if isinstance(data, Design) else build_design(data, spec)
    if method == "analytic":
        return loglik_and_gradient(u, d, spec, workers)[1]
    if method == "numeric":
        return numeric_gradient(lambda v: total_loglik(constrain(v, spec), d, workers=workers), u)
    raise ValueError(f"unknown gradient method {method!r}")
