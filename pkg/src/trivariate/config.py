"""Run configuration (YAML) and column transforms.

Unknown keys anywhere in the document are errors. Relative paths resolve
against the directory holding the configuration file.
"""
from __future__ import annotations

import graphlib
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .estimation import RESTRICTIONS, EstimationOptions
from .fileio import Table, sha256_hex
from .model import DataError, Dataset, ModelSpec, ParameterSet
from .sem import SemOptions, SemSpec
from .simulation import (
    ConfigError,
    SimConfig,
    paper_like_params,
    paper_like_recipes,
    paper_like_spec,
    recipe_from_dict,
    recipe_to_dict,
)

_REQUIRED = object()
TRANSFORM_OPS = ("log", "dummy", "standardize")


def _take(block: Any, schema: dict[str, Any], where: str) -> dict[str, Any]:
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(block).__name__}")
    unknown = sorted(set(block) - set(schema))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    out = {}
    for key, default in schema.items():
        if key in block:
            out[key] = block[key]
        elif default is _REQUIRED:
            raise ConfigError(f"{where}: missing required key {key!r}")
        else:
            out[key] = default
    return out


def _str_list(value, where) -> list[str]:
    if value is None:
        return []
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{where}: expected a list of column names")
    return list(value)


def _int(value, where, lo=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{where}: must be >= {lo}")
    return value


def _bool(value, where) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true or false, got {value!r}")
    return value


def _float(value, where) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _defaults(cls) -> dict[str, Any]:
    return {f.name: f.default if f.default_factory is MISSING else f.default_factory() for f in fields(cls)}


def level_label(value) -> str:
    """Canonical text for a category: integral numbers lose the '.0'."""
    if isinstance(value, str):
        return value
    x = float(value)
    return str(int(x)) if x.is_integer() else repr(x)


@dataclass(frozen=True)
class Transform:
    source: str
    op: str
    target: str
    reference: str | None = None

    def outputs(self, levels: list[str] | None = None) -> list[str]:
        if self.op != "dummy":
            return [self.target]
        return [f"{self.target}_{lv}" for lv in (levels or []) if lv != self.reference]


@dataclass(frozen=True)
class SemBlock:
    latents: dict[str, list[str]]
    exogenous: dict[str, list[str]]
    free_latent_covariances: bool = False
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-7

    def spec(self) -> SemSpec:
        return SemSpec.from_blocks(self.latents, self.exogenous, self.free_latent_covariances)

    def options(self) -> SemOptions:
        return SemOptions(self.max_iterations, self.gradient_tolerance)


@dataclass(frozen=True)
class ModelBlock:
    y1: str = "y1"
    y2: str = "y2"
    y3: str = "y3"
    eq1: list[str] = field(default_factory=list)
    eq2: list[str] = field(default_factory=list)
    eq3: list[str] = field(default_factory=list)
    j2: int = 5
    j3: int = 5
    constant_eq1: bool = True
    constant_eq2: bool = True
    constant_eq3: bool = True

    def spec(self) -> ModelSpec:
        return ModelSpec(tuple(self.eq1), tuple(self.eq2), tuple(self.eq3), self.j2, self.j3,
                         self.constant_eq1, self.constant_eq2, self.constant_eq3)

    def columns(self) -> list[str]:
        return list(dict.fromkeys([self.y1, self.y2, self.y3, *self.eq1, *self.eq2, *self.eq3]))


@dataclass(frozen=True)
class EstimationBlock:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    multistart_count: int = 1
    gradient: str = "analytic"
    std_errors: bool = True
    restrictions: list[str] = field(default_factory=lambda: ["independent", "nonrecursive"])
    constants_only: bool = True

    def options(self, seed: int, workers: int = 1) -> EstimationOptions:
        return EstimationOptions(max_iterations=self.max_iterations,
                                 gradient_tolerance=self.gradient_tolerance,
                                 multistart_count=self.multistart_count, seed=seed,
                                 workers=workers, gradient=self.gradient, std_errors=self.std_errors)


@dataclass(frozen=True)
class OutputsBlock:
    report: str | None = None
    result: str | None = None
    margins: str | None = None
    scores: str | None = None
    quarantine: str | None = None


@dataclass(frozen=True)
class SimulationBlock:
    n: int
    preset: str | None = None
    params: dict | None = None
    recipes: dict | None = None


@dataclass(frozen=True)
class RunConfig:
    data_path: str | None
    data_format: str = "csv"
    seed: int = 0
    transforms: tuple[Transform, ...] = ()
    sem: SemBlock | None = None
    model: ModelBlock = field(default_factory=ModelBlock)
    estimation: EstimationBlock = field(default_factory=EstimationBlock)
    outputs: OutputsBlock = field(default_factory=OutputsBlock)
    simulation: SimulationBlock | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        """Fully resolved configuration (defaults filled in), as embedded in outputs."""
        d: dict[str, Any] = {
            "seed": self.seed,
            "data": {"path": self.data_path, "format": self.data_format},
            "transforms": [
                {k: v for k, v in asdict(t).items() if not (k == "reference" and v is None)}
                for t in self.transforms
            ],
            "sem": None if self.sem is None else asdict(self.sem),
            "model": asdict(self.model),
            "estimation": asdict(self.estimation),
            "outputs": asdict(self.outputs),
        }
        if self.simulation is not None:
            d["simulation"] = asdict(self.simulation)
        return d

    def hash(self) -> str:
        return sha256_hex(json.dumps(self.to_dict(), sort_keys=True).encode())

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | str = ".") -> "RunConfig":
        top = _take(raw, {"seed": 0, "data": None, "transforms": None, "sem": None, "model": None,
                          "estimation": None, "outputs": None, "simulation": None}, "config")
        seed = _int(top["seed"], "seed", lo=0)

        data_path, data_format = None, "csv"
        if top["data"] is not None:
            data = _take(top["data"], {"path": _REQUIRED, "format": "csv"}, "data")
            if data["format"] != "csv":
                raise ConfigError(f"data.format: only 'csv' is supported, got {data['format']!r}")
            data_path, data_format = str(data["path"]), data["format"]

        transforms = []
        raw_t = top["transforms"] or []
        if not isinstance(raw_t, list):
            raise ConfigError("transforms: expected a list")
        for i, t in enumerate(raw_t):
            t = _take(t, {"source": _REQUIRED, "op": _REQUIRED, "target": _REQUIRED, "reference": None},
                      f"transforms[{i}]")
            if t["op"] not in TRANSFORM_OPS:
                raise ConfigError(f"transforms[{i}].op: expected one of {TRANSFORM_OPS}, got {t['op']!r}")
            if t["op"] == "dummy" and t["reference"] is None:
                raise ConfigError(f"transforms[{i}]: dummy encoding needs a reference level")
            if t["op"] != "dummy" and t["reference"] is not None:
                raise ConfigError(f"transforms[{i}]: 'reference' only applies to dummy encoding")
            ref = None if t["reference"] is None else level_label(t["reference"])
            transforms.append(Transform(str(t["source"]), t["op"], str(t["target"]), ref))

        sem = None
        if top["sem"] is not None:
            s = _take(top["sem"], {"latents": _REQUIRED, "exogenous": None,
                                   "free_latent_covariances": False, "max_iterations": 2000,
                                   "gradient_tolerance": 1e-7}, "sem")
            if not isinstance(s["latents"], dict) or not s["latents"]:
                raise ConfigError("sem.latents: expected a mapping of latent -> indicator list")
            latents = {str(k): _str_list(v, f"sem.latents.{k}") for k, v in s["latents"].items()}
            exo = s["exogenous"]
            if isinstance(exo, list) or exo is None:
                cols = _str_list(exo, "sem.exogenous")
                exo = {k: list(cols) for k in latents}
            elif isinstance(exo, dict):
                exo = {str(k): _str_list(v, f"sem.exogenous.{k}") for k, v in exo.items()}
            else:
                raise ConfigError("sem.exogenous: expected a list or a mapping")
            sem = SemBlock(latents, exo, _bool(s["free_latent_covariances"], "sem.free_latent_covariances"),
                           _int(s["max_iterations"], "sem.max_iterations", lo=1),
                           _float(s["gradient_tolerance"], "sem.gradient_tolerance"))

        m = _take(top["model"], _defaults(ModelBlock), "model")
        model = ModelBlock(
            y1=str(m["y1"]), y2=str(m["y2"]), y3=str(m["y3"]),
            eq1=_str_list(m["eq1"], "model.eq1"), eq2=_str_list(m["eq2"], "model.eq2"),
            eq3=_str_list(m["eq3"], "model.eq3"),
            j2=_int(m["j2"], "model.j2", lo=2), j3=_int(m["j3"], "model.j3", lo=2),
            constant_eq1=_bool(m["constant_eq1"], "model.constant_eq1"),
            constant_eq2=_bool(m["constant_eq2"], "model.constant_eq2"),
            constant_eq3=_bool(m["constant_eq3"], "model.constant_eq3"),
        )

        e = _take(top["estimation"], _defaults(EstimationBlock), "estimation")
        restrictions = _str_list(e["restrictions"], "estimation.restrictions")
        bad = [r for r in restrictions if r not in RESTRICTIONS or r in ("full", "constants_only")]
        if bad:
            raise ConfigError(f"estimation.restrictions: unknown {bad}; use independent or nonrecursive")
        if e["gradient"] not in ("analytic", "numeric"):
            raise ConfigError("estimation.gradient: expected 'analytic' or 'numeric'")
        estimation = EstimationBlock(
            max_iterations=_int(e["max_iterations"], "estimation.max_iterations", lo=1),
            gradient_tolerance=_float(e["gradient_tolerance"], "estimation.gradient_tolerance"),
            multistart_count=_int(e["multistart_count"], "estimation.multistart_count", lo=1),
            gradient=e["gradient"], std_errors=_bool(e["std_errors"], "estimation.std_errors"),
            restrictions=restrictions, constants_only=_bool(e["constants_only"], "estimation.constants_only"),
        )

        o = _take(top["outputs"], {"report": None, "result": None, "margins": None, "scores": None,
                                   "quarantine": None}, "outputs")
        outputs = OutputsBlock(**{k: None if v is None else str(v) for k, v in o.items()})

        simulation = None
        if top["simulation"] is not None:
            s = _take(top["simulation"], {"n": _REQUIRED, "preset": None, "params": None, "recipes": None},
                      "simulation")
            if s["preset"] not in (None, "paper_like"):
                raise ConfigError(f"simulation.preset: unknown preset {s['preset']!r}")
            if s["preset"] is None and (s["params"] is None or s["recipes"] is None):
                raise ConfigError("simulation: give a preset or both params and recipes")
            simulation = SimulationBlock(_int(s["n"], "simulation.n", lo=1), s["preset"], s["params"], s["recipes"])

        return cls(data_path, data_format, seed, tuple(transforms), sem, model, estimation, outputs,
                   simulation, Path(base_dir))

    def sim_config(self) -> SimConfig:
        """Simulation settings.

        A preset generates with its own equation layout, parameters and
        recipes (explicit ``recipes`` entries are added on top); the model
        block then only drives estimation. Without a preset the model block
        defines the generating equations and ``params`` must match it.
        """
        if self.simulation is None:
            raise ConfigError("config has no simulation block")
        s = self.simulation
        if s.preset == "paper_like":
            if s.params is not None:
                raise ConfigError("simulation: 'params' cannot be combined with a preset")
            spec, params, recipes = paper_like_spec(), paper_like_params(), paper_like_recipes()
        else:
            spec, params, recipes = self.model.spec(), None, {}
        if s.params is not None:
            try:
                params = ParameterSet.from_dict(s.params)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"simulation.params: {exc}") from None
        if s.recipes is not None:
            if not isinstance(s.recipes, dict):
                raise ConfigError("simulation.recipes: expected a mapping")
            recipes = dict(recipes)
            recipes.update({k: recipe_from_dict(v) for k, v in s.recipes.items()})
        return SimConfig(n=s.n, seed=self.seed, true_params=params, spec=spec, covariate_recipes=recipes)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from None
    if raw is None:
        raw = {}
    return RunConfig.from_dict(raw, base_dir=path.parent)


def _order(transforms: tuple[Transform, ...], available: set[str]) -> list[Transform]:
    """Dependency order of the transforms; cycles and clashing targets are errors."""
    producer: dict[str, int] = {}
    for i, t in enumerate(transforms):
        if t.target in producer:
            raise ConfigError(f"transform target {t.target!r} is produced twice")
        producer[t.target] = i
    graph = graphlib.TopologicalSorter()
    for i, t in enumerate(transforms):
        # a transform may overwrite its own source column
        deps = [producer[t.source]] if producer.get(t.source, i) != i else []
        graph.add(i, *deps)
    try:
        order = list(graph.static_order())
    except graphlib.CycleError as exc:
        raise ConfigError(f"transforms form a cycle: {exc.args[1]}") from None
    for i in order:
        t = transforms[i]
        if t.source not in available and t.source not in producer:
            raise ConfigError(f"transform source column {t.source!r} not found")
    return [transforms[i] for i in order]


def apply_transforms(table: Table, transforms: tuple[Transform, ...], keep_text=False) -> Table:
    """Apply log / dummy / standardize transforms in dependency order."""
    numeric = dict(table.numeric)
    text = dict(table.text)
    names = list(table.names)
    for t in _order(transforms, set(names)):
        if t.op == "dummy":
            if t.source in text:
                raw = [None if v is None else level_label(v) for v in text[t.source]]
            else:
                raw = [None if math.isnan(v) else level_label(v) for v in numeric[t.source]]
            levels = sorted({v for v in raw if v is not None})
            if t.reference not in levels:
                raise DataError(f"dummy encoding of {t.source!r}: reference level {t.reference!r} "
                                f"not among observed levels {levels}")
            for lv in levels:
                if lv == t.reference:
                    continue
                name = f"{t.target}_{lv}"
                if name in numeric or name in text:
                    raise ConfigError(f"dummy column {name!r} clashes with an existing column")
                numeric[name] = np.array([math.nan if v is None else float(v == lv) for v in raw])
                names.append(name)
            continue
        if t.source in text:
            raise ConfigError(f"transform {t.op} needs a numeric source, {t.source!r} is text")
        if t.target in numeric and t.target != t.source:
            raise ConfigError(f"transform target {t.target!r} clashes with an existing column")
        x = numeric[t.source]
        if t.op == "log":
            bad = np.flatnonzero(~np.isnan(x) & ~(x > 0))
            if bad.size:
                raise DataError(f"log transform of {t.source!r}: non-positive value {x[bad[0]]!r} "
                                f"at data row {int(bad[0]) + 1}")
            with np.errstate(invalid="ignore"):
                y = np.log(x)
        else:
            sd = np.nanstd(x, ddof=1)
            if not sd > 0:
                raise DataError(f"standardize {t.source!r}: zero or undefined spread")
            y = (x - np.nanmean(x)) / sd
        if t.target not in numeric:
            names.append(t.target)
        numeric[t.target] = y
    if not keep_text:
        for k in text:
            names.remove(k)
        text = {}
    return Table(names, numeric, text, table.n)


def text_sources(config: RunConfig, header: list[str]) -> list[str]:
    """Raw columns that are dummy-encoded, read as text so labels survive."""
    return [t.source for t in config.transforms if t.op == "dummy" and t.source in header]


def table_to_dataset(table: Table, model: ModelBlock) -> Dataset:
    return Dataset({k: table.numeric[k] for k in table.names},
                   y1_col=model.y1, y2_col=model.y2, y3_col=model.y3)


def recipes_to_dict(recipes) -> dict:
    return {k: recipe_to_dict(v) for k, v in recipes.items()}
