"""Two-step run: optional SEM scores, then joint estimation, tests and margins.

Every artifact is derived from a single JSON result document. The text
report is rendered from that document alone, so reloading a saved result
and rendering again reproduces the report byte for byte.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, apply_transforms, table_to_dataset, text_sources
from .estimation import EstimationResult, estimate
from .fileio import atomic_write_text, csv_text, dumps, file_sha256, read_header, read_table
from .inference import fit_stats_from, lr_test, marginal_effects_table
from .model import Dataset
from .sem import SemResult, fit_sem

logger = logging.getLogger(__name__)

FORMAT = "trivariate-result/1"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.message = message


def estimation_doc(res: EstimationResult) -> dict:
    se = res.std_errors
    rows = []
    for i, label in enumerate(res.labels):
        s = None if se is None or res.fixed[i] else float(se[i])
        t = None if s is None or s == 0 else float(res.estimates[i] / s)
        rows.append({"label": label, "estimate": float(res.estimates[i]), "std_error": s,
                     "t_stat": t, "fixed": bool(res.fixed[i])})
    return {
        "restriction": res.restriction,
        "loglik": res.loglik, "n": res.n, "k_free": res.k_free,
        "converged": res.converged, "iterations": res.iterations,
        "gradient_norm": res.gradient_norm, "message": res.message,
        "best_start_index": res.best_start_index,
        "spec": asdict(res.spec), "params": res.params.as_dict(), "estimates": rows,
    }


def sem_doc(res: SemResult) -> dict:
    se = res.std_errors
    rows = [{"label": label, "estimate": float(res.estimates[i]),
             "std_error": None if se is None else float(se[i]),
             "t_stat": None if se is None or se[i] == 0 else float(res.estimates[i] / se[i])}
            for i, label in enumerate(res.labels)]
    return {
        "indicators": list(res.spec.indicators), "exogenous": list(res.spec.exogenous),
        "latents": list(res.spec.latents), "n": res.n, "f_min": res.f_min,
        "converged": res.converged, "iterations": res.iterations,
        "fit": asdict(res.fit), "estimates": rows,
        "omega": res.omega, "tau": res.tau, "theta_diag": res.theta_diag, "nu_cov": res.nu_cov,
    }


@dataclass
class PipelineOutcome:
    document: dict
    report: str
    margins_csv: str | None
    scores_csv: str | None
    written: list[Path] = field(default_factory=list)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except (ValueError, RuntimeError, OSError, KeyError, np.linalg.LinAlgError) as exc:
                raise PipelineError(name, str(exc)) from exc
        return inner
    return wrap


@_stage("load")
def _load(config: RunConfig):
    if config.data_path is None:
        raise ValueError("config has no data block")
    path = config.resolve(config.data_path)
    table = read_table(path, text_sources(config, read_header(path)))
    return table, file_sha256(path)


@_stage("transform")
def _transform(config: RunConfig, table):
    table = apply_transforms(table, config.transforms)
    return table_to_dataset(table, config.model)


@_stage("sem")
def _sem(config: RunConfig, data: Dataset):
    spec = config.sem.spec()
    res = fit_sem(data, spec, config.sem.options())
    data = data.with_columns(**{name: res.scores[:, l] for l, name in enumerate(spec.latents)})
    return res, data


@_stage("estimate")
def _estimate(config: RunConfig, data: Dataset, workers: int):
    model = config.model
    missing = [c for c in model.columns() if c not in data]
    if missing:
        raise ValueError(f"model references missing columns {missing}")
    data = data.dropna(model.columns())
    spec = model.spec()
    opts = config.estimation.options(config.seed, workers)
    full = estimate(data, spec, opts)
    restricted = {r: estimate(data, spec, opts, restriction=r) for r in config.estimation.restrictions}
    const = None
    if config.estimation.constants_only:
        const = estimate(data, spec, _no_se(opts), restriction="constants_only")
    return data, spec, full, restricted, const


def _no_se(opts):
    return replace(opts, std_errors=False)


@_stage("margins")
def _margins(full: EstimationResult, data: Dataset, spec):
    table = marginal_effects_table(full, data, spec)
    table.check_sums(1e-8)
    return table


def run_pipeline(config: RunConfig, workers: int = 1, write: bool = True) -> PipelineOutcome:
    """Execute every stage and write the requested artifacts atomically.

    On failure the partial result document is written to the quarantine
    directory and the stage-tagged error is re-raised.
    """
    doc: dict = {
        "format": FORMAT, "version": __version__, "seed": config.seed,
        "config_hash": config.hash(), "config": config.to_dict(),
    }
    try:
        table, data_hash = _load(config)
        doc["data"] = {"path": config.data_path, "sha256": data_hash, "rows": table.n}
        data = _transform(config, table)
        sem_res = None
        if config.sem is not None:
            sem_res, data = _sem(config, data)
            doc["sem"] = sem_doc(sem_res)
        else:
            doc["sem"] = None
        used, spec, full, restricted, const = _estimate(config, data, workers)
        doc["data"]["rows_used"] = used.n
        doc["models"] = {"full": estimation_doc(full)}
        doc["models"].update({k: estimation_doc(v) for k, v in restricted.items()})
        if const is not None:
            doc["models"]["constants_only"] = estimation_doc(const)
        fit = fit_stats_from(full.loglik, full.n, full.k_free, None if const is None else const.loglik)
        doc["fit"] = asdict(fit)
        doc["tests"] = []
        for name, res in restricted.items():
            df = full.k_free - res.k_free
            t = _stage("tests")(lr_test)(full.loglik, res.loglik, df)
            doc["tests"].append({"restricted": name, "statistic": t.statistic, "df": t.df,
                                 "p_value": t.p_value})
        margins = _margins(full, used, spec)
        doc["marginal_effects"] = [
            {"variable": e.variable, "equation": e.equation, "kind": e.kind, "effects": e.effects}
            for e in margins.entries
        ]
        # render from the serialised form so a reloaded document renders identically
        doc = json.loads(dumps(doc))
        report = render_report(doc)
        margins_csv = margins_table_csv(doc)
        scores_csv = None
        if sem_res is not None:
            scores_csv = csv_text({name: sem_res.scores[:, l] for l, name in enumerate(sem_res.spec.latents)})
    except PipelineError as exc:
        doc["error"] = {"stage": exc.stage, "message": exc.message}
        if write:
            _quarantine(config, doc)
        raise
    outcome = PipelineOutcome(doc, report, margins_csv, scores_csv)
    if write:
        outcome.written = _write_outputs(config, outcome)
    return outcome


def _write_outputs(config: RunConfig, outcome: PipelineOutcome) -> list[Path]:
    out = config.outputs
    plan = [(out.result, dumps(outcome.document)), (out.report, outcome.report),
            (out.margins, outcome.margins_csv), (out.scores, outcome.scores_csv)]
    written = []
    try:
        for path, text in plan:
            if path is None or text is None:
                continue
            target = config.resolve(path)
            atomic_write_text(target, text)
            written.append(target)
    except OSError as exc:
        outcome.document["error"] = {"stage": "write", "message": str(exc)}
        _quarantine(config, outcome.document)
        raise PipelineError("write", str(exc)) from exc
    return written


def quarantine_dir(config: RunConfig) -> Path:
    if config.outputs.quarantine is not None:
        return config.resolve(config.outputs.quarantine)
    anchor = config.outputs.result or config.outputs.report
    base = config.resolve(anchor).parent if anchor else config.base_dir
    return base / "quarantine"


def _quarantine(config: RunConfig, doc: dict) -> None:
    path = quarantine_dir(config) / f"partial-{doc['config_hash'][:12]}.json"
    try:
        atomic_write_text(path, dumps(doc))
        logger.error("partial results written to %s", path)
    except OSError as exc:
        logger.error("could not write quarantine file %s: %s", path, exc)


# ---------------------------------------------------------------- rendering

def _num(x, width=9, digits=3) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-".rjust(width)
    return f"{x:{width}.{digits}f}"


def _pair(row) -> str:
    if row is None:
        return " " * 18
    return _num(row["estimate"]) + _num(row["t_stat"], digits=2)


def margins_table_csv(doc: dict) -> str:
    cols: dict[str, list] = {"variable": [], "equation": [], "kind": [], "level": [], "effect": []}
    for e in doc.get("marginal_effects", []):
        for j, v in enumerate(e["effects"], start=1):
            cols["variable"].append(e["variable"])
            cols["equation"].append(e["equation"])
            cols["kind"].append(e["kind"])
            cols["level"].append(j)
            cols["effect"].append(repr(float(v)))
    return csv_text({k: np.array(v, dtype=object) for k, v in cols.items()})


def _model_table(m: dict, cfg_model: dict, latents: list[str]) -> list[str]:
    by_label = {r["label"]: r for r in m["estimates"]}
    names = [cfg_model["y1"], cfg_model["y2"], cfg_model["y3"]]
    lines = [f"{'':34s}" + "".join(f"{n[:18]:>18s}" for n in names),
             f"{'':34s}" + "     coef.   t-stat" * 3]

    def row(label, cells):
        lines.append(f"  {label[:32]:32s}" + "".join(_pair(c) for c in cells))

    lines.append("Endogenous variables")
    row(cfg_model["y1"], [None, by_label.get("theta12"), by_label.get("theta13")])
    row(f"{cfg_model['y2']} (latent)", [None, None, by_label.get("theta23")])
    spec = m["spec"]
    covs = [list(spec["covariates_eq1"]), list(spec["covariates_eq2"]), list(spec["covariates_eq3"])]
    ordered = list(dict.fromkeys(c for cs in covs for c in cs))
    latent_vars = [c for c in ordered if c in latents]
    exo_vars = [c for c in ordered if c not in latents]
    if latent_vars:
        lines.append("Latent variables")
        for c in latent_vars:
            row(c, [by_label.get(f"eq{q}:{c}") for q in (1, 2, 3)])
    lines.append("Exogenous variables")
    if any(spec[f"include_constant_eq{q}"] for q in (1, 2, 3)):
        row("constant", [by_label.get(f"eq{q}:const") for q in (1, 2, 3)])
    for c in exo_vars:
        row(c, [by_label.get(f"eq{q}:{c}") for q in (1, 2, 3)])
    lines.append("Error correlations")
    for lab in ("rho12", "rho13", "rho23"):
        r = by_label.get(lab)
        lines.append(f"  {lab:32s}" + _pair(r) + ("  (fixed)" if r and r["fixed"] else ""))
    lines.append(f"  {'sigma1':32s}" + _pair(by_label.get("sigma1")))
    lines.append("Thresholds")
    for eq in (2, 3):
        lines.append(f"  {f'mu{eq}_1':32s}" + _num(0.0) + "  (fixed)")
        for lab in sorted((k for k in by_label if k.startswith(f"mu{eq}_")), key=lambda s: int(s.split("_")[1])):
            lines.append(f"  {lab:32s}" + _pair(by_label[lab]))
    return lines


def render_report(doc: dict) -> str:
    """Plain-text report laid out as a conventional estimation table."""
    cfg = doc["config"]
    lines = ["Recursive trivariate model (one continuous, two ordinal outcomes)",
             f"version {doc['version']}  seed {doc['seed']}  config sha256 {doc['config_hash']}"]
    data = doc.get("data") or {}
    if data:
        lines.append(f"data {data.get('path')}  sha256 {data.get('sha256')}  "
                     f"rows {data.get('rows')}  used {data.get('rows_used')}")
    lines.append("")
    sem = doc.get("sem")
    latents = []
    if sem:
        latents = sem["latents"]
        lines.append("Step 1: measurement and structural equations of the latent variables")
        lines.append(f"{'':44s}{'coef.':>10s}{'t-stat':>10s}")
        for r in sem["estimates"]:
            lines.append(f"  {r['label'][:42]:42s}" + _num(r["estimate"], 10) + _num(r["t_stat"], 10, 2))
        f = sem["fit"]
        lines.append(f"Note: chi-square = {f['chi_square']:.3f} (df {f['df']}, p = {f['p_value']:.3g}), "
                     f"GFI = {f['gfi']:.3f}, AGFI = {f['agfi']:.3f}, SRMR = {f['srmr']:.3f}, "
                     f"RMSEA = {f['rmsea']:.3f}, N = {sem['n']}")
        lines.append("")
    models = doc.get("models", {})
    if "full" in models:
        full = models["full"]
        lines.append("Step 2: joint model (full information maximum likelihood)")
        lines.extend(_model_table(full, cfg["model"], latents))
        fit = doc.get("fit", {})
        rho = fit.get("rho_c_sq")
        lines.append(
            f"Note: LL = {full['loglik']:.3f}, rho_c^2 = {'n/a' if rho is None else f'{rho:.3f}'}, "
            f"AIC = {fit.get('aic_per_obs', float('nan')):.3f}, BIC = {fit.get('bic_per_obs', float('nan')):.3f} "
            f"(per observation), N = {full['n']}, free parameters = {full['k_free']}")
        lines.append(f"Convergence: {full['message']}, {full['iterations']} iterations, "
                     f"max |gradient| = {full['gradient_norm']:.2e}")
        lines.append("")
    tests = doc.get("tests") or []
    if tests:
        lines.append("Likelihood ratio tests against the full model")
        for t in tests:
            m = models[t["restricted"]]
            th = {r["label"]: r["estimate"] for r in m["estimates"]}
            lines.append(f"  {t['restricted']:14s} LL = {m['loglik']:.3f}  LR = {t['statistic']:.3f}  "
                         f"df = {t['df']}  p = {t['p_value']:.3g}  theta23 = {th['theta23']:.3f}")
        lines.append("")
    effects = doc.get("marginal_effects") or []
    if effects:
        lines.append("Average marginal effects on ordinal level probabilities")
        width = max(len(e["effects"]) for e in effects)
        lines.append(f"  {'variable':28s}{'eq':>3s} {'kind':10s}" + "".join(f"{f'level {j}':>10s}" for j in range(1, width + 1)))
        for e in effects:
            lines.append(f"  {e['variable'][:28]:28s}{e['equation']:>3d} {e['kind']:10s}"
                         + "".join(_num(v, 10, 4) for v in e["effects"]))
    return "\n".join(lines) + "\n"
