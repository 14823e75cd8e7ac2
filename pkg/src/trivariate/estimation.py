"""Full-information maximum likelihood for the recursive trivariate model."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy import special

from .likelihood import loglik_and_gradient, numeric_gradient, total_loglik
from .model import (
    Dataset,
    Design,
    ModelSpec,
    ParameterSet,
    build_design,
    constrain,
    constrain_jacobian,
    natural_labels,
)
from .optimize import bfgs, numeric_hessian
from .simulation import generator

if TYPE_CHECKING:
    from .inference import FitStats

logger = logging.getLogger(__name__)

RESTRICTIONS = ("full", "independent", "nonrecursive", "constants_only")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class EstimationOptions:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    multistart_count: int = 1
    seed: int = 0
    start: np.ndarray | None = None
    workers: int = 1
    gradient: str = "analytic"
    std_errors: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.multistart_count < 1:
            raise ValueError("multistart_count must be >= 1")
        if self.gradient not in ("analytic", "numeric"):
            raise ValueError("gradient must be 'analytic' or 'numeric'")


@dataclass
class EstimationResult:
    params: ParameterSet
    spec: ModelSpec
    labels: list[str]
    estimates: np.ndarray
    std_errors: np.ndarray | None
    t_stats: np.ndarray | None
    fixed: np.ndarray
    loglik: float
    n: int
    k_free: int
    iterations: int
    converged: bool
    best_start_index: int
    gradient_norm: float
    restriction: str = "full"
    unconstrained: np.ndarray | None = None
    message: str = ""
    start_logliks: list[float] = field(default_factory=list)
    fit: "FitStats | None" = None

    def table(self) -> list[tuple[str, float, float | None, float | None]]:
        rows = []
        for i, name in enumerate(self.labels):
            se = None if self.std_errors is None or self.fixed[i] else float(self.std_errors[i])
            t = None if se is None or se == 0 else float(self.estimates[i] / se)
            rows.append((name, float(self.estimates[i]), se, t))
        return rows

    def std_error(self, label: str) -> float | None:
        i = self.labels.index(label)
        if self.std_errors is None or self.fixed[i]:
            return None
        return float(self.std_errors[i])

    def estimate(self, label: str) -> float:
        return float(self.estimates[self.labels.index(label)])


def _collinear_columns(x: np.ndarray, names: list[str]) -> list[str]:
    """Columns lying in the span of the columns before them."""
    bad = []
    kept = []
    for j in range(x.shape[1]):
        cand = x[:, kept + [j]]
        if np.linalg.matrix_rank(cand) < len(kept) + 1:
            bad.append(names[j])
        else:
            kept.append(j)
    return bad


def _check_rank(design: Design, spec: ModelSpec):
    for eq, x in zip((1, 2, 3), (design.x1, design.x2, design.x3)):
        if x.shape[1] and np.linalg.matrix_rank(x) < x.shape[1]:
            bad = _collinear_columns(x, spec.coef_names(eq))
            raise EstimationError(f"equation {eq}: design is singular; collinear columns {bad}")


def fit_ordered_probit(x: np.ndarray, y: np.ndarray, levels: int, max_iter: int = 200):
    """Univariate ordered probit with the first threshold pinned at zero.

    Returns (coefficients, thresholds). Used for starting values only.
    """
    k = x.shape[1]

    def unpack(v):
        return v[:k], np.concatenate([[0.0], np.cumsum(np.exp(v[k:]))])

    def fg(v):
        beta, mu = unpack(v)
        cuts = np.concatenate([[-np.inf], mu, [np.inf]])
        idx = x @ beta
        hi, lo = cuts[y] - idx, cuts[y - 1] - idx
        # reflected so upper-tail cells keep precision
        p = np.where(lo > -hi, special.ndtr(-lo) - special.ndtr(-hi), special.ndtr(hi) - special.ndtr(lo))
        p = np.maximum(p, 1e-300)
        with np.errstate(invalid="ignore"):
            d_hi = np.where(np.isfinite(hi), np.exp(-0.5 * hi * hi), 0.0) / np.sqrt(2 * np.pi) / p
            d_lo = np.where(np.isfinite(lo), np.exp(-0.5 * lo * lo), 0.0) / np.sqrt(2 * np.pi) / p
        d_idx = -(d_hi - d_lo)
        g_beta = x.T @ d_idx
        d_mu = (np.bincount(y[y <= levels - 1] - 1, d_hi[y <= levels - 1], minlength=levels - 1)
                - np.bincount(y[y >= 2] - 2, d_lo[y >= 2], minlength=levels - 1))
        g_inc = np.exp(v[k:]) * np.cumsum(d_mu[1:][::-1])[::-1]
        n = y.size
        return -np.sum(np.log(p)) / n, -np.concatenate([g_beta, g_inc]) / n

    v0 = np.zeros(k + levels - 2)
    res = bfgs(fg, v0, gtol=1e-8, max_iter=max_iter)
    return unpack(res.x)


def _free_mask(spec: ModelSpec, restriction: str) -> np.ndarray:
    sl = spec.slices()
    mask = np.ones(spec.n_params, dtype=bool)
    if restriction in ("independent", "constants_only"):
        mask[sl["angles"]] = False
    if restriction in ("nonrecursive", "constants_only"):
        mask[sl["theta"]] = False
    return mask


def constants_only_spec(spec: ModelSpec) -> ModelSpec:
    return replace(spec, covariates_eq1=(), covariates_eq2=(), covariates_eq3=(),
                   include_constant_eq1=True, include_constant_eq2=True, include_constant_eq3=True)


def _check_preconditions(design: Design, spec: ModelSpec, k_free: int):
    if design.n <= k_free:
        raise EstimationError(f"need more observations ({design.n}) than free parameters ({k_free})")
    for name, y, levels in (("y2", design.y2, spec.j2), ("y3", design.y3, spec.j3)):
        seen = np.bincount(y, minlength=levels + 1)[1:]
        missing = [j + 1 for j in range(levels) if seen[j] == 0]
        if missing:
            raise EstimationError(f"ordinal outcome {name}: levels {missing} never observed")


def default_start(data: Dataset | Design, spec: ModelSpec) -> np.ndarray:
    """OLS for the continuous equation, univariate ordered probits for the others."""
    d = data if isinstance(data, Design) else build_design(data, spec)
    _check_rank(d, spec)
    sl = spec.slices()
    u = np.zeros(spec.n_params)
    if d.x1.shape[1]:
        g1, *_ = np.linalg.lstsq(d.x1, d.y1, rcond=None)
    else:
        g1 = np.zeros(0)
    resid = d.y1 - d.x1 @ g1
    u[sl["gamma1"]] = g1
    u[sl["log_sigma1"]] = np.log(max(np.std(resid), 1e-8))
    for eq, x, y, levels, name in ((2, d.x2, d.y2, spec.j2, "gamma2"), (3, d.x3, d.y3, spec.j3, "gamma3")):
        beta, mu = fit_ordered_probit(x, y, levels)
        u[sl[name]] = beta
        u[sl[f"mu{eq}"]] = np.log(np.maximum(np.diff(mu), 1e-8))
    return u


def _objective(design: Design, spec: ModelSpec, u_fixed: np.ndarray, free: np.ndarray,
               options: EstimationOptions):
    n = design.n

    def full(v):
        u = u_fixed.copy()
        u[free] = v
        return u

    if options.gradient == "analytic":
        def fg(v):
            ll, g = loglik_and_gradient(full(v), design, spec, options.workers)
            return -ll / n, -g[free] / n
    else:
        def f_only(v):
            return -total_loglik(constrain(full(v), spec), design, workers=options.workers) / n

        def fg(v):
            return f_only(v), numeric_gradient(f_only, v)
    return fg, full


def _initial_curvature(fg, v0):
    """Inverse of a finite-difference Hessian at the start, if it is positive definite."""
    try:
        hess = numeric_hessian(lambda v: fg(v)[1], v0)
        np.linalg.cholesky(hess)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError):
        return None
    if not np.all(np.isfinite(hess)):
        return None
    return np.linalg.inv(hess)


def estimate(data: Dataset | Design, spec: ModelSpec, options: EstimationOptions | None = None,
             restriction: str = "full") -> EstimationResult:
    """Maximise the log-likelihood by BFGS from the default and perturbed starts."""
    options = options or EstimationOptions()
    if restriction not in RESTRICTIONS:
        raise ValueError(f"unknown restriction {restriction!r}")
    if restriction == "constants_only":
        spec = constants_only_spec(spec)
    d = data if isinstance(data, Design) else build_design(data, spec)
    free = _free_mask(spec, restriction)
    _check_preconditions(d, spec, int(free.sum()))

    base = default_start(d, spec) if options.start is None else np.asarray(options.start, float).copy()
    if base.shape != (spec.n_params,):
        raise EstimationError(f"start vector has {base.size} entries, expected {spec.n_params}")
    base[~free] = 0.0

    starts = [base]
    for k in range(1, options.multistart_count):
        noise = generator(options.seed, k).uniform(-0.5, 0.5, spec.n_params)
        starts.append(np.where(free, base + noise, base))

    best = None
    start_lls = []
    for idx, start in enumerate(starts):
        fg, full = _objective(d, spec, start, free, options)
        try:
            res = bfgs(fg, start[free], gtol=options.gradient_tolerance,
                       max_iter=options.max_iterations, inv_hessian=_initial_curvature(fg, start[free]))
        except FloatingPointError:
            logger.warning("start %d: objective not finite, skipped", idx)
            start_lls.append(float("nan"))
            continue
        ll = -res.fun * d.n
        start_lls.append(ll)
        logger.info("start %d: loglik %.6f after %d iterations (%s)", idx, ll, res.iterations, res.message)
        # ties go to the lowest start index
        if best is None or ll > best[0]:
            best = (ll, idx, res, full(res.x))
    if best is None:
        raise EstimationError("no start produced a finite log-likelihood")
    _, best_idx, res, u_hat = best

    params = constrain(u_hat, spec)
    loglik = total_loglik(params, d, workers=options.workers)
    estimates = params.natural_vector()
    jac = constrain_jacobian(u_hat, spec)[:, free]
    fixed = np.all(jac == 0.0, axis=1)

    std_errors = t_stats = None
    if options.std_errors:
        std_errors = _standard_errors(d, spec, u_hat, free, jac, options)
        if std_errors is not None:
            with np.errstate(divide="ignore", invalid="ignore"):
                t_stats = np.where(fixed | (std_errors == 0), np.nan, estimates / std_errors)

    return EstimationResult(
        params=params, spec=spec, labels=natural_labels(spec), estimates=estimates,
        std_errors=std_errors, t_stats=t_stats, fixed=fixed, loglik=loglik, n=d.n,
        k_free=int(free.sum()), iterations=res.iterations, converged=res.converged,
        best_start_index=best_idx, gradient_norm=float(np.max(np.abs(res.grad), initial=0.0)),
        restriction=restriction, unconstrained=u_hat, message=res.message,
        start_logliks=start_lls,
    )


def _standard_errors(d, spec, u_hat, free, jac, options):
    """Delta-method standard errors from the inverse observed information."""
    def grad_free(v):
        u = u_hat.copy()
        u[free] = v
        return loglik_and_gradient(u, d, spec, options.workers)[1][free]

    hess = numeric_hessian(grad_free, u_hat[free])
    info = -hess
    try:
        np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        logger.warning("observed information is not positive definite; standard errors unavailable")
        return None
    cov_u = np.linalg.inv(info)
    cov = jac @ cov_u @ jac.T
    return np.sqrt(np.maximum(np.diag(cov), 0.0))


def estimate_restricted(data, spec, options=None, restriction="independent") -> EstimationResult:
    """Same likelihood with named parameters pinned at zero.

    ``independent`` pins the three error correlations, ``nonrecursive`` the
    three structural effects, ``constants_only`` both and drops covariates.
    """
    if restriction == "full":
        raise ValueError("use estimate() for the unrestricted model")
    return estimate(data, spec, options, restriction=restriction)
