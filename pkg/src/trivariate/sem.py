"""Covariance-structure SEM with latent variables (first stage).

Measurement: u = omega z + e,  e ~ N(0, diag(theta)).
Structural:  z = tau x + nu,   nu ~ N(0, Sigma_nu), unit diagonal.

Parameters are fitted by minimising the normal-theory ML discrepancy
between the sample covariance of (u, x) and the implied covariance, with
the x block held at its sample value.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .distributions import chisq_sf
from .model import DataError, Dataset, SpecError
from .optimize import bfgs, numeric_hessian
from .simulation import generator

logger = logging.getLogger(__name__)


class SemError(RuntimeError):
    pass


@dataclass(frozen=True)
class SemSpec:
    indicators: tuple[str, ...]
    exogenous: tuple[str, ...]
    latents: tuple[str, ...]
    loading_pattern: np.ndarray
    structural_pattern: np.ndarray
    free_latent_covariances: bool = False

    def __post_init__(self):
        for name in ("indicators", "exogenous", "latents"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        lp = np.asarray(self.loading_pattern, dtype=bool).reshape(len(self.indicators), len(self.latents))
        sp = np.asarray(self.structural_pattern, dtype=bool).reshape(len(self.latents), len(self.exogenous))
        lp.setflags(write=False)
        sp.setflags(write=False)
        object.__setattr__(self, "loading_pattern", lp)
        object.__setattr__(self, "structural_pattern", sp)
        if not self.indicators or not self.latents:
            raise SpecError("SEM needs at least one indicator and one latent")
        names = self.indicators + self.exogenous
        if len(set(names)) != len(names):
            raise SpecError("indicator and exogenous columns must be distinct")
        empty_latent = [self.latents[l] for l in range(lp.shape[1]) if not lp[:, l].any()]
        if empty_latent:
            raise SpecError(f"latents without indicators: {empty_latent}")
        orphan = [self.indicators[r] for r in range(lp.shape[0]) if not lp[r].any()]
        if orphan:
            raise SpecError(f"indicators loading on no latent: {orphan}")

    @property
    def n_indicators(self) -> int:
        return len(self.indicators)

    @property
    def n_exogenous(self) -> int:
        return len(self.exogenous)

    @property
    def n_latents(self) -> int:
        return len(self.latents)

    def _nu_pairs(self):
        if not self.free_latent_covariances:
            return []
        L = self.n_latents
        return [(i, j) for i in range(L) for j in range(i)]

    def n_free(self) -> int:
        return (int(self.loading_pattern.sum()) + int(self.structural_pattern.sum())
                + self.n_indicators + len(self._nu_pairs()))

    def degrees_of_freedom(self) -> int:
        p = self.n_indicators + self.n_exogenous
        k = self.n_exogenous
        # the x block is reproduced exactly, so its moments count as parameters
        return p * (p + 1) // 2 - self.n_free() - k * (k + 1) // 2

    @classmethod
    def from_blocks(cls, blocks: dict[str, list[str]], exogenous: dict[str, list[str]] | list[str],
                    free_latent_covariances: bool = False) -> "SemSpec":
        """Build from ``{latent: [indicators]}`` and ``{latent: [exogenous]}``."""
        latents = tuple(blocks)
        indicators = tuple(dict.fromkeys(c for cols in blocks.values() for c in cols))
        if isinstance(exogenous, dict):
            xs = tuple(dict.fromkeys(c for cols in exogenous.values() for c in cols))
        else:
            xs = tuple(exogenous)
            exogenous = {l: list(xs) for l in latents}
        unknown = set(exogenous) - set(latents)
        if unknown:
            raise SpecError(f"structural block names unknown latents {sorted(unknown)}")
        lp = np.array([[r in blocks[l] for l in latents] for r in indicators], dtype=bool)
        sp = np.array([[k in exogenous.get(l, ()) for k in xs] for l in latents], dtype=bool)
        return cls(indicators, xs, latents, lp, sp, free_latent_covariances)


@dataclass
class SemParams:
    omega: np.ndarray
    tau: np.ndarray
    theta_diag: np.ndarray
    nu_cov: np.ndarray

    def check(self, spec: SemSpec):
        R, L, K = spec.n_indicators, spec.n_latents, spec.n_exogenous
        shapes = {"omega": (R, L), "tau": (L, K), "theta_diag": (R,), "nu_cov": (L, L)}
        for name, shape in shapes.items():
            if np.shape(getattr(self, name)) != shape:
                raise SpecError(f"{name} has shape {np.shape(getattr(self, name))}, expected {shape}")
        if np.any(self.omega[~spec.loading_pattern] != 0) or np.any(self.tau[~spec.structural_pattern] != 0):
            raise SpecError("parameters are non-zero outside the free pattern")


def implied_covariance(spec: SemSpec, params: SemParams, sx: np.ndarray) -> np.ndarray:
    """Implied covariance of (indicators, exogenous)."""
    params.check(spec)
    sx = np.asarray(sx, dtype=float).reshape(spec.n_exogenous, spec.n_exogenous)
    om, tau = params.omega, params.tau
    phi = tau @ sx @ tau.T + params.nu_cov
    suu = om @ phi @ om.T + np.diag(params.theta_diag)
    sux = om @ tau @ sx
    sigma = np.block([[suu, sux], [sux.T, sx]])
    return 0.5 * (sigma + sigma.T)


def discrepancy(sigma: np.ndarray, s: np.ndarray) -> float:
    """ML discrepancy ln|Sigma| + tr(S Sigma^-1) - ln|S| - p; inf if Sigma is not PD."""
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return np.inf
    _, logdet_s = np.linalg.slogdet(s)
    return float(logdet + np.trace(np.linalg.solve(sigma, s)) - logdet_s - s.shape[0])


class _Packer:
    """Free parameters <-> SemParams; error variances travel on the log scale."""

    def __init__(self, spec: SemSpec):
        self.spec = spec
        self.om_idx = np.nonzero(spec.loading_pattern)
        self.tau_idx = np.nonzero(spec.structural_pattern)
        self.pairs = spec._nu_pairs()
        self.n_om = self.om_idx[0].size
        self.n_tau = self.tau_idx[0].size
        self.size = spec.n_free()

    def unpack(self, v, log_theta=True) -> SemParams:
        s = self.spec
        om = np.zeros((s.n_indicators, s.n_latents))
        tau = np.zeros((s.n_latents, s.n_exogenous))
        a, b = self.n_om, self.n_om + self.n_tau
        om[self.om_idx] = v[:a]
        tau[self.tau_idx] = v[a:b]
        th = v[b:b + s.n_indicators]
        nu = np.eye(s.n_latents)
        for (i, j), val in zip(self.pairs, v[b + s.n_indicators:]):
            nu[i, j] = nu[j, i] = val
        return SemParams(om, tau, np.exp(th) if log_theta else th.copy(), nu)

    def pack(self, p: SemParams, log_theta=True) -> np.ndarray:
        th = np.log(p.theta_diag) if log_theta else p.theta_diag
        nu = [p.nu_cov[i, j] for i, j in self.pairs]
        return np.concatenate([p.omega[self.om_idx], p.tau[self.tau_idx], th, nu])

    def labels(self) -> list[str]:
        s = self.spec
        out = [f"omega[{s.indicators[r]},{s.latents[l]}]" for r, l in zip(*self.om_idx)]
        out += [f"tau[{s.latents[l]},{s.exogenous[k]}]" for l, k in zip(*self.tau_idx)]
        out += [f"theta[{r}]" for r in s.indicators]
        out += [f"nu[{s.latents[i]},{s.latents[j]}]" for i, j in self.pairs]
        return out


def _natural_gradient(packer: _Packer, p: SemParams, s: np.ndarray, sx: np.ndarray):
    """F and dF/d(natural free parameters)."""
    spec = packer.spec
    sigma = implied_covariance(spec, p, sx)
    f = discrepancy(sigma, s)
    if not np.isfinite(f):
        return f, np.full(packer.size, np.nan)
    inv = np.linalg.inv(sigma)
    g = inv @ (sigma - s) @ inv
    R = spec.n_indicators
    guu, gux = g[:R, :R], g[:R, R:]
    om, tau = p.omega, p.tau
    phi = tau @ sx @ tau.T + p.nu_cov
    d_om = 2.0 * guu @ om @ phi + 2.0 * gux @ sx @ tau.T
    m = om.T @ guu @ om
    d_tau = 2.0 * m @ tau @ sx + 2.0 * om.T @ gux @ sx
    d_th = np.diag(guu).copy()
    d_nu = [2.0 * m[i, j] for i, j in packer.pairs]
    return f, np.concatenate([d_om[packer.om_idx], d_tau[packer.tau_idx], d_th, d_nu])


@dataclass(frozen=True)
class SemOptions:
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-7
    std_errors: bool = True


@dataclass
class SemFit:
    chi_square: float
    df: int
    p_value: float
    gfi: float
    agfi: float
    srmr: float
    rmsea: float


@dataclass
class SemResult:
    spec: SemSpec
    omega: np.ndarray
    tau: np.ndarray
    theta_diag: np.ndarray
    nu_cov: np.ndarray
    f_min: float
    fit: SemFit
    n: int
    labels: list[str]
    estimates: np.ndarray
    std_errors: np.ndarray | None
    u_mean: np.ndarray
    x_mean: np.ndarray
    sx: np.ndarray
    sample_cov: np.ndarray
    converged: bool
    iterations: int
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def params(self) -> SemParams:
        return SemParams(self.omega, self.tau, self.theta_diag, self.nu_cov)

    def implied(self) -> np.ndarray:
        return implied_covariance(self.spec, self.params, self.sx)

    def std_error(self, label: str) -> float:
        if self.std_errors is None:
            raise SemError("standard errors were not computed")
        return float(self.std_errors[self.labels.index(label)])


def fit_indices(s: np.ndarray, sigma: np.ndarray, n: int, df: int) -> SemFit:
    """Chi-square, GFI, AGFI, SRMR and RMSEA from sample and implied covariances."""
    p = s.shape[0]
    f = max(discrepancy(sigma, s), 0.0)
    chi2 = (n - 1) * f
    a = np.linalg.solve(sigma, s)
    resid = a - np.eye(p)
    gfi = 1.0 - np.trace(resid @ resid) / np.trace(a @ a)
    agfi = 1.0 - p * (p + 1) / (2.0 * df) * (1.0 - gfi) if df > 0 else gfi
    sd = np.sqrt(np.diag(s))
    std_resid = (s - sigma) / np.outer(sd, sd)
    low = np.tril_indices(p)
    srmr = float(np.sqrt(np.mean(std_resid[low] ** 2)))
    rmsea = float(np.sqrt(max(chi2 - df, 0.0) / (df * (n - 1)))) if df > 0 else 0.0
    p_value = chisq_sf(chi2, df) if df > 0 else 1.0
    return SemFit(float(chi2), int(df), float(p_value), float(gfi), float(agfi), srmr, rmsea)


def _matrices(data: Dataset, spec: SemSpec):
    cols = spec.indicators + spec.exogenous
    try:
        m = np.column_stack([np.asarray(data[c], dtype=float) for c in cols])
    except SpecError as exc:
        raise SpecError(f"SEM: {exc}") from None
    keep = ~np.isnan(m).any(axis=1)
    if not keep.all():
        logger.info("SEM: dropped %d rows with missing values", int((~keep).sum()))
    return m[keep], keep


def _start(spec: SemSpec, s: np.ndarray) -> SemParams:
    """Per-latent principal components of the indicator covariance."""
    R, L = spec.n_indicators, spec.n_latents
    om = np.zeros((R, L))
    suu = s[:R, :R]
    for l in range(L):
        idx = np.nonzero(spec.loading_pattern[:, l])[0]
        vals, vecs = np.linalg.eigh(suu[np.ix_(idx, idx)])
        v = vecs[:, -1] * np.sqrt(max(vals[-1], 1e-8))
        if len(idx) == 1:
            v = v * np.sqrt(0.5)
        if v[0] < 0:
            v = -v
        om[idx, l] = v
    om[~spec.loading_pattern] = 0.0
    communal = np.sum(om ** 2, axis=1)
    th = np.maximum(np.diag(suu) - communal, 0.1 * np.diag(suu))
    tau = np.zeros((L, spec.n_exogenous))
    return SemParams(om, tau, th, np.eye(L))


def _normalize_signs(spec: SemSpec, p: SemParams) -> SemParams:
    """Flip each latent so its first free loading is positive."""
    om, tau, nu = p.omega.copy(), p.tau.copy(), p.nu_cov.copy()
    for l in range(spec.n_latents):
        r = np.nonzero(spec.loading_pattern[:, l])[0][0]
        if om[r, l] < 0:
            om[:, l] *= -1
            tau[l] *= -1
            nu[l, :] *= -1
            nu[:, l] *= -1
    return SemParams(om, tau, p.theta_diag, nu)


def fit_sem(data: Dataset, spec: SemSpec, options: SemOptions | None = None) -> SemResult:
    """Maximum-likelihood fit, fit indices, standard errors and factor scores."""
    options = options or SemOptions()
    df = spec.degrees_of_freedom()
    if df < 0:
        raise SpecError(f"SEM is under-identified: {df} degrees of freedom")
    m, _ = _matrices(data, spec)
    n = m.shape[0]
    packer = _Packer(spec)
    if n <= packer.size:
        raise DataError(f"SEM needs more rows ({n}) than free parameters ({packer.size})")
    s = np.cov(m, rowvar=False).reshape(m.shape[1], m.shape[1])
    eig = np.linalg.eigvalsh(s)
    if not eig[0] > 1e-10 * max(eig[-1], 0.0):
        raise DataError("sample covariance of indicators and exogenous variables is not positive definite")
    R = spec.n_indicators
    sx = s[R:, R:]

    def fg(v):
        p = packer.unpack(v)
        f, g = _natural_gradient(packer, p, s, sx)
        # chain rule for log error variances
        a = packer.n_om + packer.n_tau
        g[a:a + R] *= p.theta_diag
        return f, g

    v0 = packer.pack(_start(spec, s))
    res = bfgs(fg, v0, gtol=options.gradient_tolerance, max_iter=options.max_iterations)
    if not res.converged:
        logger.warning("SEM fit stopped early: %s (max |grad| %.3g)", res.message, np.max(np.abs(res.grad)))
    params = _normalize_signs(spec, packer.unpack(res.x))
    sigma = implied_covariance(spec, params, sx)
    fit = fit_indices(s, sigma, n, df)
    estimates = packer.pack(params, log_theta=False)

    std_errors = None
    if options.std_errors:
        def grad_nat(v):
            return _natural_gradient(packer, packer.unpack(v, log_theta=False), s, sx)[1]
        hess = numeric_hessian(grad_nat, estimates)
        try:
            np.linalg.cholesky(hess)
            cov = 2.0 / (n - 1) * np.linalg.inv(hess)
            std_errors = np.sqrt(np.maximum(np.diag(cov), 0.0))
        except np.linalg.LinAlgError:
            logger.warning("SEM information matrix is not positive definite; no standard errors")

    result = SemResult(
        spec=spec, omega=params.omega, tau=params.tau, theta_diag=params.theta_diag,
        nu_cov=params.nu_cov, f_min=max(float(res.fun), 0.0), fit=fit, n=n, labels=packer.labels(),
        estimates=estimates, std_errors=std_errors, u_mean=m[:, :R].mean(axis=0),
        x_mean=m[:, R:].mean(axis=0), sx=sx, sample_cov=s, converged=res.converged,
        iterations=res.iterations,
    )
    result.scores = factor_scores(data, spec, result)
    return result


def factor_scores(data: Dataset, spec: SemSpec, result: SemResult) -> np.ndarray:
    """Regression scores E[z | u, x]; rows with missing inputs score NaN."""
    cols = spec.indicators + spec.exogenous
    m = np.column_stack([np.asarray(data[c], dtype=float) for c in cols])
    R = spec.n_indicators
    u, x = m[:, :R], m[:, R:]
    om, tau, nu = result.omega, result.tau, result.nu_cov
    vuu = om @ nu @ om.T + np.diag(result.theta_diag)
    try:
        w = np.linalg.solve(vuu, om @ nu).T
    except np.linalg.LinAlgError:
        raise SemError("conditional indicator covariance is singular") from None
    resid = (u - result.u_mean) - (x - result.x_mean) @ (om @ tau).T
    return x @ tau.T + resid @ w.T


def score_columns(data: Dataset, spec: SemSpec, result: SemResult) -> Dataset:
    """Dataset with one appended column of scores per latent."""
    z = factor_scores(data, spec, result)
    return data.with_columns(**{name: z[:, l] for l, name in enumerate(spec.latents)})


def sample_sem(spec: SemSpec, params: SemParams, x: dict[str, np.ndarray], seed: int,
               intercepts: np.ndarray | None = None) -> tuple[Dataset, np.ndarray]:
    """Draw indicators for given exogenous columns; returns (data, true latents)."""
    params.check(spec)
    xm = np.column_stack([np.asarray(x[c], float) for c in spec.exogenous]) if spec.exogenous else None
    n = len(next(iter(x.values()))) if x else None
    if n is None:
        raise SpecError("sample_sem needs at least one column to fix the row count")
    rng = generator(seed, 0)
    nu = rng.standard_normal((n, spec.n_latents)) @ np.linalg.cholesky(params.nu_cov).T
    z = nu if xm is None else xm @ params.tau.T + nu
    e = rng.standard_normal((n, spec.n_indicators)) * np.sqrt(params.theta_diag)
    u = z @ params.omega.T + e
    if intercepts is not None:
        u = u + intercepts
    cols = dict(x)
    cols.update({name: u[:, r] for r, name in enumerate(spec.indicators)})
    return Dataset(cols), z
