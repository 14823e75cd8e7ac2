"""Standard-normal primitives, the bivariate normal CDF and the chi-square tail.

The bivariate CDF follows Drezner & Wesolowsky (1990) as refined by Genz
(2004): Gauss-Legendre quadrature over the correlation, with a transformed
integrand when |rho| > 0.925. Everything here is vectorised over numpy
broadcasting and has no state.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

__all__ = [
    "std_normal_pdf",
    "std_normal_cdf",
    "std_normal_quantile",
    "bvn_cdf",
    "bvn_pdf",
    "chisq_sf",
    "chisq_cdf",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TWO_PI = 2.0 * math.pi


def _positive_half(n):
    x, w = leggauss(n)
    keep = x > 0
    return x[keep], w[keep]


# (abscissae, weights) for the 6-, 12- and 20-point rules, positive half only
_GL = [_positive_half(6), _positive_half(12), _positive_half(20)]


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


def std_normal_cdf(x):
    """Phi(x), computed through erfc so both tails keep full relative precision."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def std_normal_quantile(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(p)
    return out if out.ndim else float(out)


def bvn_pdf(a, b, rho):
    a, b, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, rho)))
    one_m = 1.0 - rho * rho
    with np.errstate(invalid="ignore", over="ignore"):
        q = (a * a - 2.0 * rho * a * b + b * b) / one_m
        out = np.exp(-0.5 * q) / (_TWO_PI * np.sqrt(one_m))
    out = np.where(np.isfinite(a) & np.isfinite(b), out, 0.0)
    return out if out.ndim else float(out)


def _upper_finite(h, k, r, xs, ws):
    """P(X > h, Y > k) for finite h, k and 0 < |r| < 1 (1-D arrays)."""
    hk = h * k
    out = np.empty_like(h)

    mid = np.abs(r) < 0.925
    if np.any(mid):
        hm, km, rm, hkm = h[mid], k[mid], r[mid], hk[mid]
        hs = 0.5 * (hm * hm + km * km)
        asr = 0.5 * np.arcsin(rm)
        nodes = np.concatenate([1.0 - xs, 1.0 + xs])
        weights = np.concatenate([ws, ws])
        sn = np.sin(asr[:, None] * nodes[None, :])
        terms = np.exp((sn * hkm[:, None] - hs[:, None]) / (1.0 - sn * sn))
        out[mid] = (terms @ weights) * asr / _TWO_PI + special.ndtr(-hm) * special.ndtr(-km)

    hi = ~mid
    if np.any(hi):
        hh, kk, rr = h[hi], k[hi].copy(), r[hi]
        neg = rr < 0
        kk[neg] = -kk[neg]
        hkh = hh * kk
        a_s = 1.0 - rr * rr
        a = np.sqrt(a_s)
        bs = (hh - kk) ** 2
        c = (4.0 - hkh) / 8.0
        d = (12.0 - hkh) / 80.0
        asr = -0.5 * (bs / a_s + hkh)
        bvn = np.where(
            asr > -100.0,
            a * np.exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s),
            0.0,
        )
        b = np.sqrt(bs)
        sp = math.sqrt(_TWO_PI) * special.ndtr(-b / a)
        tail = np.exp(-0.5 * hkh) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
        bvn = bvn - np.where(hkh > -100.0, tail, 0.0)

        half = a / 2.0
        nodes = np.concatenate([1.0 - xs, 1.0 + xs])
        weights = np.concatenate([ws, ws])
        x2 = (half[:, None] * nodes[None, :]) ** 2
        asr2 = -0.5 * (bs[:, None] / x2 + hkh[:, None])
        sp2 = 1.0 + c[:, None] * x2 * (1.0 + 5.0 * d[:, None] * x2)
        rs = np.sqrt(1.0 - x2)
        ep = np.exp(-(hkh[:, None] / 2.0) * x2 / (1.0 + rs) ** 2) / rs
        with np.errstate(under="ignore"):
            integrand = np.where(asr2 > -100.0, np.exp(asr2) * (sp2 - ep), 0.0)
        bvn = (half * (integrand @ weights) - bvn) / _TWO_PI

        pos = ~neg
        res = np.empty_like(hh)
        res[pos] = bvn[pos] + special.ndtr(-np.maximum(hh[pos], kk[pos]))
        hn, kn, bn = hh[neg], kk[neg], bvn[neg]
        lower = np.where(hn < 0.0, special.ndtr(kn) - special.ndtr(hn), special.ndtr(-hn) - special.ndtr(-kn))
        res[neg] = np.where(hn >= kn, -bn, lower - bn)
        out[hi] = res
    return out


def bvn_cdf(a, b, rho):
    """P(X <= a, Y <= b) for a standard bivariate normal with correlation rho.

    Infinite limits are resolved analytically; rho = 0 and |rho| = 1 use their
    closed forms. The argument order never changes the value: the quadrature is
    evaluated on the (min, max) ordered pair.
    """
    a, b, rho = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, rho)))
    scalar = a.ndim == 0
    shape = a.shape
    a, b, rho = (np.atleast_1d(v).ravel() for v in (a, b, rho))
    if np.isnan(a).any() or np.isnan(b).any() or np.isnan(rho).any():
        raise ValueError("bvn_cdf: NaN argument")
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("bvn_cdf: correlation outside [-1, 1]")

    # symmetric by construction
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    out = np.zeros(a.shape)

    done = (lo == -np.inf)  # probability 0
    inf_hi = ~done & (hi == np.inf)
    out[inf_hi] = special.ndtr(lo[inf_hi])
    done |= inf_hi

    zero = ~done & (rho == 0.0)
    out[zero] = special.ndtr(lo[zero]) * special.ndtr(hi[zero])
    done |= zero

    one = ~done & (rho == 1.0)
    out[one] = special.ndtr(lo[one])
    done |= one

    mone = ~done & (rho == -1.0)
    out[mone] = np.maximum(special.ndtr(lo[mone]) - special.ndtr(-hi[mone]), 0.0)
    done |= mone

    rest = ~done
    if np.any(rest):
        h, k, r = -lo[rest], -hi[rest], rho[rest]
        ar = np.abs(r)
        val = np.empty_like(h)
        for cls, (xs, ws) in zip(
            (ar < 0.3, (ar >= 0.3) & (ar < 0.75), ar >= 0.75), _GL
        ):
            if np.any(cls):
                val[cls] = _upper_finite(h[cls], k[cls], r[cls], xs, ws)
        out[rest] = val
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out.reshape(shape)


def chisq_sf(x, df):
    """Upper-tail probability of the chi-square distribution."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("chisq_sf requires x >= 0")
    if np.any(np.asarray(df) < 1):
        raise ValueError("chisq_sf requires df >= 1")
    out = special.chdtrc(df, x)
    return out if np.ndim(out) else float(out)


def chisq_cdf(x, df):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chisq_cdf requires x >= 0")
    out = special.chdtr(df, x)
    return out if np.ndim(out) else float(out)
