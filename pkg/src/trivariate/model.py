"""Dataset container, equation specification and parameter representations.

Parameters live in two coordinate systems. ``ParameterSet`` holds the
structural quantities (coefficients, thresholds, sigma1, error correlations).
The optimiser works on a flat unconstrained vector in which sigma1 is logged,
thresholds are log increments above a first threshold pinned at zero, and the
3x3 error correlation matrix is written through the angles of its Cholesky
factor so every vector maps to a positive definite matrix.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class SpecError(ValueError):
    """A model specification does not match the data or the parameter vector."""


class DataError(ValueError):
    """Data violate a structural requirement (ordinal coding, missing values)."""


class ValidationError(ValueError):
    """A parameter set violates its invariants."""


CONSTANT = "const"


@dataclass(frozen=True)
class Dataset:
    columns: Mapping[str, np.ndarray]
    y1_col: str = "y1"
    y2_col: str = "y2"
    y3_col: str = "y3"

    def __post_init__(self):
        cols = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        lengths = {v.shape[0] for v in cols.values()}
        if len(lengths) > 1:
            raise DataError(f"columns have unequal lengths: {sorted(lengths)}")
        for k, v in cols.items():
            if v.ndim != 1:
                raise DataError(f"column {k!r} is not one-dimensional")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        if not self.columns:
            return 0
        return next(iter(self.columns.values())).shape[0]

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SpecError(f"column {name!r} not found in dataset") from None

    def __contains__(self, name: str) -> bool:
        return name in self.columns

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def take(self, index) -> "Dataset":
        return replace(self, columns={k: v[index] for k, v in self.columns.items()})

    def with_columns(self, **new: np.ndarray) -> "Dataset":
        cols = dict(self.columns)
        cols.update(new)
        return replace(self, columns=cols)

    def dropna(self, names: Sequence[str]) -> "Dataset":
        """Listwise deletion over ``names``; the number of dropped rows is logged."""
        if self.n == 0:
            return self
        keep = np.ones(self.n, dtype=bool)
        for name in names:
            keep &= ~np.isnan(self[name])
        dropped = int(self.n - keep.sum())
        if dropped:
            logger.info("listwise deletion removed %d of %d rows", dropped, self.n)
            return self.take(keep)
        return self


@dataclass(frozen=True)
class ModelSpec:
    covariates_eq1: tuple[str, ...] = ()
    covariates_eq2: tuple[str, ...] = ()
    covariates_eq3: tuple[str, ...] = ()
    j2: int = 5
    j3: int = 5
    include_constant_eq1: bool = True
    include_constant_eq2: bool = True
    include_constant_eq3: bool = True

    def __post_init__(self):
        for i in (1, 2, 3):
            names = tuple(getattr(self, f"covariates_eq{i}"))
            object.__setattr__(self, f"covariates_eq{i}", names)
            if len(set(names)) != len(names):
                dup = sorted({c for c in names if names.count(c) > 1})
                raise SpecError(f"equation {i}: duplicate covariates {dup}")
            if CONSTANT in names:
                raise SpecError(f"equation {i}: {CONSTANT!r} is reserved for the intercept")
        if self.j2 < 2 or self.j3 < 2:
            raise SpecError("ordinal outcomes need at least two levels")

    def coef_names(self, eq: int) -> list[str]:
        names = list(getattr(self, f"covariates_eq{eq}"))
        if getattr(self, f"include_constant_eq{eq}"):
            names.insert(0, CONSTANT)
        return names

    @property
    def k(self) -> tuple[int, int, int]:
        return tuple(len(self.coef_names(i)) for i in (1, 2, 3))

    @property
    def n_params(self) -> int:
        k1, k2, k3 = self.k
        return k1 + k2 + k3 + 3 + 1 + 3 + (self.j2 - 2) + (self.j3 - 2)

    def columns_used(self) -> list[str]:
        seen: dict[str, None] = {}
        for eq in (1, 2, 3):
            for c in getattr(self, f"covariates_eq{eq}"):
                seen[c] = None
        return list(seen)

    def param_labels(self) -> list[str]:
        """Labels of the unconstrained coordinates, in vector order."""
        labels = [f"eq{eq}:{c}" for eq in (1, 2, 3) for c in self.coef_names(eq)]
        labels += ["theta12", "theta13", "theta23", "log_sigma1",
                   "angle_rho12", "angle_rho13", "angle_rho23"]
        labels += [f"log_dmu2_{j}" for j in range(2, self.j2)]
        labels += [f"log_dmu3_{j}" for j in range(2, self.j3)]
        return labels

    def slices(self) -> dict[str, slice]:
        k1, k2, k3 = self.k
        pos = 0
        out = {}
        for name, size in (("gamma1", k1), ("gamma2", k2), ("gamma3", k3), ("theta", 3),
                           ("log_sigma1", 1), ("angles", 3), ("mu2", self.j2 - 2),
                           ("mu3", self.j3 - 2)):
            out[name] = slice(pos, pos + size)
            pos += size
        return out


@dataclass(frozen=True)
class Design:
    """Per-equation design matrices plus the outcome vectors."""

    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    def take(self, index) -> "Design":
        return Design(*(getattr(self, f)[index] for f in ("x1", "x2", "x3", "y1", "y2", "y3")))


def _design_matrix(data: Dataset, spec: ModelSpec, eq: int) -> np.ndarray:
    names = getattr(spec, f"covariates_eq{eq}")
    cols = [data[c] for c in names]
    if getattr(spec, f"include_constant_eq{eq}"):
        cols.insert(0, np.ones(data.n))
    if not cols:
        return np.empty((data.n, 0))
    return np.column_stack(cols)


def _ordinal(values: np.ndarray, levels: int, name: str) -> np.ndarray:
    if np.isnan(values).any():
        raise DataError(f"ordinal column {name!r} contains missing values")
    as_int = np.rint(values)
    bad = (as_int != values) | (as_int < 1) | (as_int > levels)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"ordinal column {name!r} row {row}: value {values[row]!r} outside 1..{levels}"
        )
    return as_int.astype(np.int64)


def build_design(data: Dataset, spec: ModelSpec) -> Design:
    """Assemble the three design matrices (intercept first, then spec order)."""
    for name in [data.y1_col, data.y2_col, data.y3_col, *spec.columns_used()]:
        if name not in data:
            raise SpecError(f"column {name!r} not found in dataset")
    x1, x2, x3 = (_design_matrix(data, spec, eq) for eq in (1, 2, 3))
    for eq, x in zip((1, 2, 3), (x1, x2, x3)):
        if np.isnan(x).any():
            raise DataError(f"equation {eq}: design contains missing values")
    y1 = data[data.y1_col]
    if np.isnan(y1).any():
        raise DataError(f"continuous outcome {data.y1_col!r} contains missing values")
    y2 = _ordinal(data[data.y2_col], spec.j2, data.y2_col)
    y3 = _ordinal(data[data.y3_col], spec.j3, data.y3_col)
    return Design(x1, x2, x3, y1.copy(), y2, y3)


@dataclass(frozen=True)
class ParameterSet:
    gamma1: np.ndarray
    gamma2: np.ndarray
    gamma3: np.ndarray
    theta12: float = 0.0
    theta13: float = 0.0
    theta23: float = 0.0
    sigma1: float = 1.0
    rho12: float = 0.0
    rho13: float = 0.0
    rho23: float = 0.0
    mu2: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    mu3: np.ndarray = field(default_factory=lambda: np.array([0.0]))

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3", "mu2", "mu3"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).copy())
        for name in ("theta12", "theta13", "theta23", "sigma1", "rho12", "rho13", "rho23"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def covariance(self) -> np.ndarray:
        """Error covariance of (eps1, eps2, eps3)."""
        s = self.sigma1
        return np.array([
            [s * s, self.rho12 * s, self.rho13 * s],
            [self.rho12 * s, 1.0, self.rho23],
            [self.rho13 * s, self.rho23, 1.0],
        ])

    @property
    def correlation(self) -> np.ndarray:
        return np.array([
            [1.0, self.rho12, self.rho13],
            [self.rho12, 1.0, self.rho23],
            [self.rho13, self.rho23, 1.0],
        ])

    def cut_points(self, eq: int) -> np.ndarray:
        """Thresholds with the -inf / +inf sentinels attached (length J + 1)."""
        mu = self.mu2 if eq == 2 else self.mu3
        return np.concatenate([[-np.inf], mu, [np.inf]])

    def validate(self, spec: ModelSpec | None = None) -> None:
        if spec is not None:
            k1, k2, k3 = spec.k
            if (self.gamma1.size, self.gamma2.size, self.gamma3.size) != (k1, k2, k3):
                raise SpecError("coefficient vector lengths do not match the specification")
            if self.mu2.size != spec.j2 - 1 or self.mu3.size != spec.j3 - 1:
                raise SpecError("threshold vector lengths do not match the specification")
        if not self.sigma1 > 0:
            raise ValidationError("sigma1 must be positive")
        for name in ("mu2", "mu3"):
            mu = getattr(self, name)
            if mu.size == 0 or mu[0] != 0.0:
                raise ValidationError(f"{name}[0] must be fixed at zero")
            if np.any(np.diff(mu) <= 0):
                raise ValidationError(f"{name} must be strictly increasing")
        try:
            np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError:
            raise ValidationError("error covariance is not positive definite") from None

    def as_dict(self) -> dict:
        return {
            "gamma1": self.gamma1.tolist(), "gamma2": self.gamma2.tolist(),
            "gamma3": self.gamma3.tolist(), "theta12": self.theta12,
            "theta13": self.theta13, "theta23": self.theta23, "sigma1": self.sigma1,
            "rho12": self.rho12, "rho13": self.rho13, "rho23": self.rho23,
            "mu2": self.mu2.tolist(), "mu3": self.mu3.tolist(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParameterSet":
        return cls(**{k: d[k] for k in (
            "gamma1", "gamma2", "gamma3", "theta12", "theta13", "theta23", "sigma1",
            "rho12", "rho13", "rho23", "mu2", "mu3")})

    def natural_vector(self) -> np.ndarray:
        """Flat vector in reporting order: gammas, thetas, sigma1, rhos, free thresholds."""
        return np.concatenate([
            self.gamma1, self.gamma2, self.gamma3,
            [self.theta12, self.theta13, self.theta23, self.sigma1,
             self.rho12, self.rho13, self.rho23],
            self.mu2[1:], self.mu3[1:],
        ])


def natural_labels(spec: ModelSpec) -> list[str]:
    labels = [f"eq{eq}:{c}" for eq in (1, 2, 3) for c in spec.coef_names(eq)]
    labels += ["theta12", "theta13", "theta23", "sigma1", "rho12", "rho13", "rho23"]
    labels += [f"mu2_{j}" for j in range(2, spec.j2)]
    labels += [f"mu3_{j}" for j in range(2, spec.j3)]
    return labels


# Angle coordinates: an unconstrained u maps to the angle pi/2 - arctan(u), so
# cos(angle) = u / sqrt(1 + u^2) and sin(angle) = 1 / sqrt(1 + u^2). u = 0 is a
# right angle, i.e. zero correlation.

def _cos_sin(u):
    r = np.sqrt(1.0 + u * u)
    return u / r, 1.0 / r


def angles_to_corr(u: np.ndarray) -> tuple[float, float, float]:
    """(rho12, rho13, rho23) from the three angle coordinates."""
    ca, sa = _cos_sin(u[0])
    cb, sb = _cos_sin(u[1])
    cc, _ = _cos_sin(u[2])
    return float(ca), float(cb), float(ca * cb + sa * sb * cc)


def angles_jacobian(u: np.ndarray) -> np.ndarray:
    """d(rho12, rho13, rho23) / d(u_a, u_b, u_c)."""
    ca, sa = _cos_sin(u[0])
    cb, sb = _cos_sin(u[1])
    cc, _ = _cos_sin(u[2])
    dc = [(1.0 + x * x) ** -1.5 for x in u]       # d cos / du
    ds = [-x * (1.0 + x * x) ** -1.5 for x in u]  # d sin / du
    jac = np.zeros((3, 3))
    jac[0, 0] = dc[0]
    jac[1, 1] = dc[1]
    jac[2, 0] = dc[0] * cb + ds[0] * sb * cc
    jac[2, 1] = ca * dc[1] + sa * ds[1] * cc
    jac[2, 2] = sa * sb * dc[2]
    return jac


def corr_to_angles(rho12: float, rho13: float, rho23: float) -> np.ndarray:
    if not (abs(rho12) < 1 and abs(rho13) < 1):
        raise ValidationError("correlations must lie strictly inside (-1, 1)")
    partial = (rho23 - rho12 * rho13) / np.sqrt((1 - rho12 ** 2) * (1 - rho13 ** 2))
    if not abs(partial) < 1:
        raise ValidationError("error correlation matrix is not positive definite")
    return np.array([r / np.sqrt(1.0 - r * r) for r in (rho12, rho13, partial)])


def _thresholds(v: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.exp(v))])


def constrain(u: np.ndarray, spec: ModelSpec) -> ParameterSet:
    """Map an unconstrained vector to a valid ``ParameterSet``."""
    u = np.asarray(u, dtype=float)
    if u.shape != (spec.n_params,):
        raise SpecError(f"expected {spec.n_params} unconstrained parameters, got {u.shape}")
    sl = spec.slices()
    th = u[sl["theta"]]
    rho12, rho13, rho23 = angles_to_corr(u[sl["angles"]])
    return ParameterSet(
        gamma1=u[sl["gamma1"]], gamma2=u[sl["gamma2"]], gamma3=u[sl["gamma3"]],
        theta12=th[0], theta13=th[1], theta23=th[2],
        sigma1=float(np.exp(u[sl["log_sigma1"]][0])),
        rho12=rho12, rho13=rho13, rho23=rho23,
        mu2=_thresholds(u[sl["mu2"]]), mu3=_thresholds(u[sl["mu3"]]),
    )


def unconstrain(p: ParameterSet, spec: ModelSpec) -> np.ndarray:
    p.validate(spec)
    return np.concatenate([
        p.gamma1, p.gamma2, p.gamma3,
        [p.theta12, p.theta13, p.theta23, np.log(p.sigma1)],
        corr_to_angles(p.rho12, p.rho13, p.rho23),
        np.log(np.diff(p.mu2)), np.log(np.diff(p.mu3)),
    ])


def constrain_jacobian(u: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """d natural_vector / d u, used for delta-method standard errors."""
    sl = spec.slices()
    p = constrain(u, spec)
    n = spec.n_params
    jac = np.zeros((n, n))
    k = sl["theta"].start
    jac[:k, :k] = np.eye(k)
    jac[k:k + 3, k:k + 3] = np.eye(3)
    jac[k + 3, k + 3] = p.sigma1
    jac[k + 4:k + 7, k + 4:k + 7] = angles_jacobian(u[sl["angles"]])
    for name in ("mu2", "mu3"):
        s = sl[name]
        inc = np.exp(u[s])
        # mu_j = sum_{i <= j} exp(v_i)
        block = np.tril(np.ones((inc.size, inc.size))) * inc[None, :]
        jac[s, s] = block
    return jac
