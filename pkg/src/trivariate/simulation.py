"""Synthetic data for the trivariate model and Monte Carlo cell oracles.

All randomness comes from Philox (counter-based) generators keyed by
``SeedSequence([seed, block])`` so a dataset is identical however the row
blocks are scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .model import Dataset, ModelSpec, ParameterSet, ValidationError

BLOCK_ROWS = 65536


class ConfigError(ValueError):
    pass


def generator(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def columns(self, name):
        return [name]

    def draw(self, rng, n):
        return [(rng.random(n) < self.p).astype(float)]


@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    sd: float = 1.0

    def columns(self, name):
        return [name]

    def draw(self, rng, n):
        return [self.mean + self.sd * rng.standard_normal(n)]


@dataclass(frozen=True)
class Categorical:
    """Draw one category per row.

    ``encode="dummies"`` emits one 0/1 column per label named ``name_label``;
    ``encode="value"`` emits a single column holding the (numeric) label.
    """

    shares: Mapping[str | float, float]
    encode: str = "dummies"

    def __post_init__(self):
        total = sum(self.shares.values())
        if abs(total - 1.0) > 1e-6 or any(v < 0 for v in self.shares.values()):
            raise ConfigError(f"categorical shares must be non-negative and sum to 1 (got {total})")
        if self.encode not in ("dummies", "value"):
            raise ConfigError(f"unknown categorical encoding {self.encode!r}")

    def columns(self, name):
        if self.encode == "value":
            return [name]
        return [f"{name}_{label}" for label in self.shares]

    def draw(self, rng, n):
        labels = list(self.shares)
        cum = np.cumsum(list(self.shares.values()))
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(n), side="right")
        if self.encode == "value":
            return [np.asarray(labels, dtype=float)[idx]]
        return [(idx == i).astype(float) for i in range(len(labels))]


def recipe_from_dict(d: Mapping) -> Bernoulli | Normal | Categorical:
    kind = d.get("kind")
    args = {k: v for k, v in d.items() if k != "kind"}
    try:
        if kind == "bernoulli":
            return Bernoulli(**args)
        if kind == "normal":
            return Normal(**args)
        if kind == "categorical":
            return Categorical(**args)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} recipe: {exc}") from None
    raise ConfigError(f"unknown recipe kind {kind!r}")


def recipe_to_dict(r) -> dict:
    if isinstance(r, Bernoulli):
        return {"kind": "bernoulli", "p": r.p}
    if isinstance(r, Normal):
        return {"kind": "normal", "mean": r.mean, "sd": r.sd}
    return {"kind": "categorical", "shares": dict(r.shares), "encode": r.encode}


@dataclass(frozen=True)
class SimConfig:
    n: int
    seed: int
    true_params: ParameterSet
    spec: ModelSpec
    covariate_recipes: Mapping[str, Bernoulli | Normal | Categorical] = field(default_factory=dict)
    keep_latent: bool = False

    def validate(self):
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        self.true_params.validate(self.spec)
        provided = {c for name, r in self.covariate_recipes.items() for c in r.columns(name)}
        missing = [c for c in self.spec.columns_used() if c not in provided]
        if missing:
            raise ConfigError(f"no recipe produces columns {missing}")


def _index(gamma: np.ndarray, cols, names, include_constant, n: int) -> np.ndarray:
    out = np.zeros(n)
    offset = 0
    if include_constant:
        out = out + gamma[0]
        offset = 1
    for j, name in enumerate(names):
        out = out + gamma[offset + j] * cols[name]
    return out


def sample_dataset(config: SimConfig) -> Dataset:
    """Draw covariates, correlated errors and the recursive outcomes."""
    config.validate()
    p, spec = config.true_params, config.spec
    chol = np.linalg.cholesky(p.covariance)
    blocks = []
    for b, start in enumerate(range(0, config.n, BLOCK_ROWS)):
        n = min(BLOCK_ROWS, config.n - start)
        rng = generator(config.seed, b)
        cols: dict[str, np.ndarray] = {}
        for name, recipe in config.covariate_recipes.items():
            for cname, values in zip(recipe.columns(name), recipe.draw(rng, n)):
                cols[cname] = values
        eps = rng.standard_normal((n, 3)) @ chol.T
        y1 = _index(p.gamma1, cols, spec.covariates_eq1, spec.include_constant_eq1, n) + eps[:, 0]
        y2s = (_index(p.gamma2, cols, spec.covariates_eq2, spec.include_constant_eq2, n)
               + p.theta12 * y1 + eps[:, 1])
        y3s = (_index(p.gamma3, cols, spec.covariates_eq3, spec.include_constant_eq3, n)
               + p.theta13 * y1 + p.theta23 * y2s + eps[:, 2])
        cols["y1"] = y1
        cols["y2"] = discretize(y2s, p.mu2).astype(float)
        cols["y3"] = discretize(y3s, p.mu3).astype(float)
        if config.keep_latent:
            cols["y2_star"], cols["y3_star"] = y2s, y3s
            cols["eps1"], cols["eps2"], cols["eps3"] = eps.T
        blocks.append(cols)
    names = list(blocks[0])
    return Dataset({k: np.concatenate([blk[k] for blk in blocks]) for k in names})


def discretize(latent: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Ordinal level j (1-based) such that mu[j-2] < latent <= mu[j-1]."""
    return np.searchsorted(mu, latent, side="left") + 1


def reduced_form_covariance(p: ParameterSet) -> np.ndarray:
    """Covariance of (eta2, eta3 + theta23 * eta2) given y1."""
    c12 = 1.0 - p.rho12 ** 2
    q = p.rho23 - p.rho12 * p.rho13
    cov = p.theta23 * c12 + q
    var3 = p.theta23 ** 2 * c12 + 2.0 * p.theta23 * q + 1.0 - p.rho13 ** 2
    return np.array([[c12, cov], [cov, var3]])


def structural_conditional_covariance(p: ParameterSet) -> np.ndarray:
    """Covariance of (eta2, eta3) = (eps2, eps3) given eps1."""
    q = p.rho23 - p.rho12 * p.rho13
    return np.array([[1.0 - p.rho12 ** 2, q], [q, 1.0 - p.rho13 ** 2]])


def mc_cell_probability(h2: float, h3: float, p: ParameterSet, draws: int, seed: int,
                        form: str = "reduced", chunk: int = 1_000_000):
    """Monte Carlo J2 x J3 cell frequencies and binomial standard errors.

    ``form="reduced"`` draws (eta2, eta3~) jointly from the reduced-form
    covariance; ``form="structural"`` draws (eta2, eta3) and applies the
    recursion y3* = h3 + theta23 * y2* + eta3 explicitly.
    """
    if draws < 10_000:
        raise ValueError("mc_cell_probability needs at least 1e4 draws")
    cov = reduced_form_covariance(p) if form == "reduced" else structural_conditional_covariance(p)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValidationError(f"{form}-form error covariance is not positive definite") from None
    j2, j3 = p.mu2.size + 1, p.mu3.size + 1
    counts = np.zeros(j2 * j3, dtype=np.int64)
    rng = generator(seed, 0)
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        e = rng.standard_normal((m, 2)) @ chol.T
        y2s = h2 + e[:, 0]
        if form == "reduced":
            y3s = h3 + p.theta23 * h2 + e[:, 1]
        else:
            y3s = h3 + p.theta23 * y2s + e[:, 1]
        cell = (discretize(y2s, p.mu2) - 1) * j3 + (discretize(y3s, p.mu3) - 1)
        counts += np.bincount(cell, minlength=j2 * j3)
        done += m
    freq = (counts / draws).reshape(j2, j3)
    se = np.sqrt(freq * (1.0 - freq) / draws)
    return freq, se


# Reference sample shares (3,574 respondents). Count
# variables use small categorical supports matched to the reference mean and sd.
# The three latent-score columns stand in for first-stage factor scores.
def paper_like_recipes() -> dict[str, Bernoulli | Normal | Categorical]:
    return {
        "female": Bernoulli(0.5039),
        "race": Categorical({"white": 0.6623, "asian": 0.1382, "african_american": 0.0322,
                             "native": 0.0115, "other": 0.1558}),
        "edu": Categorical({"hs_or_less": 0.0686, "below_college": 0.2882,
                            "college": 0.3246, "postgrad": 0.3186}),
        "emp": Categorical({"full_time": 0.4827, "self": 0.0638, "part_time": 0.1097,
                            "not_employed": 0.3438}),
        "children": Categorical({0.0: 0.80, 1.0: 0.11, 2.0: 0.06, 3.0: 0.03}, encode="value"),
        "teens": Categorical({0.0: 0.91, 1.0: 0.075, 2.0: 0.015}, encode="value"),
        "adults": Categorical({1.0: 0.25, 2.0: 0.55, 3.0: 0.14, 4.0: 0.06}, encode="value"),
        "income": Categorical({"low": 0.4233, "medium": 0.4799, "high": 0.0968}),
        "free_parking": Bernoulli(0.9334),
        "parking_cost": Normal(0.502, 7.336),
        "decision": Categorical({"sole": 0.4617, "primary": 0.2429, "equal": 0.2954}),
        "veh_cost": Normal(1.5, 0.3),
        "veh_reliability": Normal(0.0, 0.5),
        "shared_mobility": Normal(0.0, 0.8),
    }


def paper_like_spec() -> ModelSpec:
    """Reference equation layout (terms without a coefficient are left out)."""
    return ModelSpec(
        covariates_eq1=("race_white", "edu_below_college", "edu_college", "edu_postgrad",
                        "emp_full_time", "income_low", "free_parking", "parking_cost",
                        "decision_sole"),
        covariates_eq2=("veh_reliability", "shared_mobility", "female", "race_white",
                        "edu_postgrad", "decision_equal"),
        covariates_eq3=("veh_cost", "race_asian", "emp_full_time", "emp_self", "children",
                        "teens", "income_low", "income_high", "free_parking", "decision_equal"),
        j2=5, j3=5,
    )


def paper_like_params(sigma1: float = 1.0) -> ParameterSet:
    """Reference point estimates; sigma1 has no reference value and defaults to 1."""
    return ParameterSet(
        gamma1=[7.681, 0.124, 0.291, 0.445, 0.374, 0.270, -0.104, 0.473, -0.021, -0.188],
        gamma2=[3.270, -0.251, -0.259, 0.198, -0.069, -0.096, -0.112],
        gamma3=[5.378, -1.019, 0.239, 0.096, 0.115, 0.067, 0.132, -0.098, 0.155, -0.153, -0.150],
        theta12=-0.171, theta13=-0.233, theta23=-0.661, sigma1=sigma1,
        rho12=0.248, rho13=0.352, rho23=0.530,
        mu2=[0.0, 0.488, 1.018, 1.878], mu3=[0.0, 0.432, 0.931, 1.552],
    )


def paper_like_config(n: int, seed: int, **kwargs) -> SimConfig:
    return SimConfig(n=n, seed=seed, true_params=paper_like_params(), spec=paper_like_spec(),
                     covariate_recipes=paper_like_recipes(), **kwargs)
