"""Post-estimation: marginal effects, likelihood-ratio tests and fit statistics.

Marginal effects use the single-equation ordered-probit probabilities that
result from treating the error correlations as zero, with the stacked index
kappa'm holding the equation's own coefficients and its direct structural
effects. ``y1`` names the continuous outcome as a regressor and ``y2_star``
the latent propensity of the second equation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import chisq_sf, std_normal_cdf, std_normal_pdf
from .model import CONSTANT, DataError, Dataset, ModelSpec, ParameterSet, SpecError

LR_SLACK = 1e-6
Y1 = "y1"
Y2_STAR = "y2_star"


class InversionError(ValueError):
    """Restricted log-likelihood exceeds the unrestricted one."""


@dataclass(frozen=True)
class LRTest:
    statistic: float
    df: int
    p_value: float


def lr_test(loglik_unrestricted: float, loglik_restricted: float, df: int) -> LRTest:
    if df < 1:
        raise ValueError("df must be at least 1")
    stat = -2.0 * (loglik_restricted - loglik_unrestricted)
    if stat < -LR_SLACK:
        raise InversionError(
            f"restricted loglik {loglik_restricted} exceeds unrestricted {loglik_unrestricted}; "
            "arguments swapped?")
    stat = max(stat, 0.0)
    return LRTest(stat, int(df), chisq_sf(stat, df))


@dataclass(frozen=True)
class FitStats:
    loglik: float
    n: int
    k_free: int
    rho_c_sq: float
    aic_per_obs: float
    bic_per_obs: float
    loglik_constants_only: float | None = None


def fit_stats_from(loglik: float, n: int, k_free: int,
                   loglik_constants_only: float | None = None) -> FitStats:
    """Per-observation AIC/BIC and the likelihood-ratio index."""
    if n <= 0:
        raise ValueError("fit statistics need n > 0")
    aic = (2.0 * k_free - 2.0 * loglik) / n
    bic = (k_free * math.log(n) - 2.0 * loglik) / n
    rho = math.nan if not loglik_constants_only else 1.0 - loglik / loglik_constants_only
    return FitStats(float(loglik), int(n), int(k_free), rho, aic, bic, loglik_constants_only)


def fit_stats(result, data=None, spec=None, loglik_constants_only: float | None = None) -> FitStats:
    """Fit statistics of an estimation result (``data``/``spec`` kept for symmetry)."""
    return fit_stats_from(result.loglik, result.n, result.k_free, loglik_constants_only)


def _params(result) -> ParameterSet:
    return result if isinstance(result, ParameterSet) else result.params


def _coefficients(p: ParameterSet, spec: ModelSpec, q: int) -> dict[str, float]:
    """Stacked index coefficients of ordinal equation q, keyed by column."""
    if q not in (2, 3):
        raise SpecError(f"marginal effects are defined for equations 2 and 3, not {q}")
    gamma = p.gamma2 if q == 2 else p.gamma3
    coef = dict(zip(spec.coef_names(q), gamma))
    if q == 2:
        coef[Y1] = p.theta12
    else:
        coef[Y1] = p.theta13
        coef[Y2_STAR] = p.theta23
    return coef


def index_inputs(p: ParameterSet, spec: ModelSpec, data: Dataset, q: int) -> dict[str, np.ndarray]:
    """Columns entering the index of equation q.

    ``y2_star`` is taken from the data when present, otherwise predicted
    as gamma2'w + theta12*y1 from the same rows.
    """
    coef = _coefficients(p, spec, q)
    cols: dict[str, np.ndarray] = {}
    for name in coef:
        if name == CONSTANT:
            cols[name] = np.ones(data.n)
        elif name == Y1:
            cols[name] = np.asarray(data[data.y1_col], float)
        elif name == Y2_STAR:
            if Y2_STAR in data:
                cols[name] = np.asarray(data[Y2_STAR], float)
            else:
                base = index_inputs(p, spec, data, 2)
                cols[name] = linear_index(_coefficients(p, spec, 2), base)
        else:
            cols[name] = np.asarray(data[name], float)
    return cols


def linear_index(coef: dict[str, float], cols: dict[str, np.ndarray]) -> np.ndarray:
    out = 0.0
    for name, c in coef.items():
        out = out + c * cols[name]
    return np.asarray(out, dtype=float)


def level_probabilities(index: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Ordered-probit probabilities, shape (..., J)."""
    cuts = np.concatenate([[-np.inf], mu, [np.inf]])
    cdf = std_normal_cdf(cuts - np.asarray(index, float)[..., None])
    return np.diff(cdf, axis=-1)


def predicted_probabilities(result, spec: ModelSpec, data: Dataset, q: int,
                            overrides: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """n x J probabilities of equation q, optionally with some index inputs replaced."""
    p = _params(result)
    cols = index_inputs(p, spec, data, q)
    for k, v in (overrides or {}).items():
        if k not in cols:
            raise SpecError(f"{k!r} does not enter equation {q}")
        cols[k] = np.broadcast_to(np.asarray(v, float), (data.n,))
    mu = p.mu2 if q == 2 else p.mu3
    return level_probabilities(linear_index(_coefficients(p, spec, q), cols), mu)


def _kappa(p: ParameterSet, spec: ModelSpec, variable: str, q: int) -> float:
    coef = _coefficients(p, spec, q)
    if variable == CONSTANT or variable not in coef:
        raise SpecError(f"variable {variable!r} does not enter equation {q}")
    return float(coef[variable])


def marginal_effect_continuous(result, data: Dataset, spec: ModelSpec, variable: str, q: int) -> np.ndarray:
    """Sample-average derivative of each level probability (length J)."""
    p = _params(result)
    kappa = _kappa(p, spec, variable, q)
    if data.n == 0:
        raise DataError("marginal effects need at least one row")
    index = linear_index(_coefficients(p, spec, q), index_inputs(p, spec, data, q))
    mu = p.mu2 if q == 2 else p.mu3
    cuts = np.concatenate([[-np.inf], mu, [np.inf]])
    dens = std_normal_pdf(cuts - index[:, None])
    dens[:, [0, -1]] = 0.0
    per_row = (dens[:, :-1] - dens[:, 1:]) * kappa
    return per_row.mean(axis=0)


def _is_binary(values: np.ndarray) -> bool:
    v = values[~np.isnan(values)]
    return v.size > 0 and bool(np.all((v == 0.0) | (v == 1.0)))


def marginal_effect_dummy(result, data: Dataset, spec: ModelSpec, variable: str, q: int) -> np.ndarray:
    """P(level | dummy = 1) - P(level | dummy = 0) with other inputs at sample means."""
    p = _params(result)
    kappa = _kappa(p, spec, variable, q)
    if variable in (Y1, Y2_STAR):
        raise DataError(f"{variable!r} is continuous")
    if not _is_binary(np.asarray(data[variable], float)):
        raise DataError(f"column {variable!r} is not 0/1-valued")
    coef = _coefficients(p, spec, q)
    cols = index_inputs(p, spec, data, q)
    base = sum(c * float(np.mean(cols[k])) for k, c in coef.items() if k != variable)
    mu = p.mu2 if q == 2 else p.mu3
    # change from 0 to 1: the index shifts by +kappa
    return level_probabilities(np.array(base + kappa), mu) - level_probabilities(np.array(base), mu)


@dataclass
class MarginalEffect:
    variable: str
    equation: int
    kind: str
    effects: np.ndarray


@dataclass
class MarginalEffectsTable:
    entries: list[MarginalEffect] = field(default_factory=list)

    def get(self, variable: str, equation: int) -> MarginalEffect:
        for e in self.entries:
            if e.variable == variable and e.equation == equation:
                return e
        raise KeyError((variable, equation))

    def rows(self) -> list[tuple[str, int, str, int, float]]:
        """Long format: (variable, equation, kind, level, effect)."""
        return [(e.variable, e.equation, e.kind, j + 1, float(v))
                for e in self.entries for j, v in enumerate(e.effects)]

    def check_sums(self, tol: float = 1e-8) -> None:
        for e in self.entries:
            if abs(float(np.sum(e.effects))) > tol:
                raise ValueError(f"effects of {e.variable} in equation {e.equation} do not sum to zero")


def marginal_effects_table(result, data: Dataset, spec: ModelSpec,
                           variables: list[str] | None = None) -> MarginalEffectsTable:
    """Effects for every (variable, ordinal equation) pair; 0/1 columns use the dummy form."""
    p = _params(result)
    table = MarginalEffectsTable()
    for q in (2, 3):
        names = [k for k in _coefficients(p, spec, q) if k != CONSTANT]
        for name in names:
            if variables is not None and name not in variables:
                continue
            dummy = name not in (Y1, Y2_STAR) and _is_binary(np.asarray(data[name], float))
            if dummy:
                eff = marginal_effect_dummy(p, data, spec, name, q)
            else:
                eff = marginal_effect_continuous(p, data, spec, name, q)
            table.entries.append(MarginalEffect(name, q, "dummy" if dummy else "continuous", eff))
    return table
