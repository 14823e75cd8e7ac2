"""Command-line entry point (``trivariate``)."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from . import __version__
from .config import apply_transforms, load_config, table_to_dataset, text_sources
from .fileio import atomic_write_text, csv_text, dumps, read_header, read_json, read_table, write_csv
from .inference import lr_test
from .pipeline import PipelineError, render_report, run_pipeline, sem_doc
from .sem import fit_sem
from .simulation import sample_dataset

logger = logging.getLogger("trivariate")


class CliError(Exception):
    pass


def _cmd_estimate(args) -> int:
    config = load_config(args.config)
    outcome = run_pipeline(config, workers=args.workers)
    for path in outcome.written:
        print(f"wrote {path}")
    if not outcome.written:
        sys.stdout.write(outcome.report)
    return 0


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    sim = config.sim_config()
    if args.n is not None or args.seed is not None:
        from dataclasses import replace
        sim = replace(sim, n=args.n if args.n is not None else sim.n,
                      seed=args.seed if args.seed is not None else sim.seed)
    data = sample_dataset(sim)
    write_csv(args.out, data)
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def _cmd_sem(args) -> int:
    config = load_config(args.config)
    if config.sem is None:
        raise CliError("config has no sem block")
    path = config.resolve(config.data_path)
    table = apply_transforms(read_table(path, text_sources(config, read_header(path))), config.transforms)
    data = table_to_dataset(table, config.model)
    spec = config.sem.spec()
    res = fit_sem(data, spec, config.sem.options())
    doc = {"version": __version__, "seed": config.seed, "config_hash": config.hash(), "sem": sem_doc(res)}
    scores_path = args.scores or (config.resolve(config.outputs.scores) if config.outputs.scores else None)
    if scores_path is None:
        raise CliError("no scores path: pass --scores or set outputs.scores")
    atomic_write_text(scores_path, csv_text({n: res.scores[:, l] for l, n in enumerate(spec.latents)}))
    if args.out:
        atomic_write_text(args.out, dumps(doc))
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(dumps(doc))
    print(f"wrote {scores_path}", file=sys.stderr)
    return 0


def _cmd_margins(args) -> int:
    doc = read_json(args.result)
    for e in doc.get("marginal_effects", []):
        if e["variable"] == args.variable and e["equation"] == args.equation:
            print(f"variable {e['variable']}  equation {e['equation']}  kind {e['kind']}")
            for j, v in enumerate(e["effects"], start=1):
                print(f"level {j}\t{v!r}")
            return 0
    raise CliError(f"no marginal effect for {args.variable!r} in equation {args.equation} in {args.result}")


def _loglik_arg(value: str, default_model: str) -> float:
    """A number, a result path, or ``path#model``."""
    try:
        return float(value)
    except ValueError:
        pass
    path, _, model = value.partition("#")
    doc = read_json(path)
    models = doc.get("models") or {}
    if not model:
        model = default_model
        if default_model == "restricted":
            others = [k for k in models if k not in ("full", "constants_only")]
            if len(others) != 1:
                raise CliError(f"{path}: choose a restricted model with '#name' from {sorted(models)}")
            model = others[0]
    if model not in models:
        raise CliError(f"{path}: no model {model!r} (available: {sorted(models)})")
    return float(models[model]["loglik"])


def _cmd_compare(args) -> int:
    full = _loglik_arg(args.full, "full")
    restricted = _loglik_arg(args.restricted, "restricted")
    t = lr_test(full, restricted, args.df)
    print(f"LR statistic {t.statistic:.10g}  df {t.df}  p-value {t.p_value:.6g}")
    return 0


def _sniff_text(path) -> list[str]:
    table = read_table(path, read_header(path))
    out = []
    for name, cells in table.text.items():
        for c in cells:
            if c is None:
                continue
            try:
                float(c)
            except ValueError:
                out.append(name)
                break
    return out


def _cmd_describe(args) -> int:
    table = read_table(args.data, _sniff_text(args.data))
    print(f"rows {table.n}")
    print(f"{'column':28s}{'n':>8s}{'missing':>9s}  summary")
    for name in table.names:
        if name in table.text:
            cells = [c for c in table.text[name] if c is not None]
            levels = sorted(set(cells))
            shares = "  ".join(f"{lv} {cells.count(lv)} ({100 * cells.count(lv) / len(cells):.2f}%)"
                               for lv in levels)
            print(f"{name[:28]:28s}{len(cells):8d}{table.n - len(cells):9d}  {shares}")
            continue
        x = table.numeric[name]
        v = x[~np.isnan(x)]
        miss = x.size - v.size
        if v.size == 0:
            print(f"{name[:28]:28s}{0:8d}{miss:9d}  all missing")
        elif np.all((v == 0) | (v == 1)):
            k = int(v.sum())
            print(f"{name[:28]:28s}{v.size:8d}{miss:9d}  share of 1: {k} ({100 * k / v.size:.2f}%)")
        else:
            sd = float(np.std(v, ddof=1)) if v.size > 1 else math.nan
            print(f"{name[:28]:28s}{v.size:8d}{miss:9d}  mean {v.mean():.4f}  sd {sd:.4f}  "
                  f"min {v.min():.4g}  max {v.max():.4g}")
    return 0


def _cmd_report(args) -> int:
    sys.stdout.write(render_report(read_json(args.result)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trivariate", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("estimate", help="run the full pipeline from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=1, help="threads for likelihood evaluation")
    s.set_defaults(fn=_cmd_estimate)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(fn=_cmd_simulate)

    s = sub.add_parser("margins", help="marginal effects stored in a result document")
    s.add_argument("--result", required=True)
    s.add_argument("--variable", required=True)
    s.add_argument("--equation", type=int, choices=(2, 3), required=True)
    s.set_defaults(fn=_cmd_margins)

    s = sub.add_parser("compare", help="likelihood ratio test")
    s.add_argument("--full", required=True, help="log-likelihood, result path, or path#model")
    s.add_argument("--restricted", required=True, help="log-likelihood, result path, or path#model")
    s.add_argument("--df", type=int, required=True)
    s.set_defaults(fn=_cmd_compare)

    s = sub.add_parser("sem", help="fit the latent-variable stage only")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--scores")
    s.set_defaults(fn=_cmd_sem)

    s = sub.add_parser("describe", help="column summaries of a CSV file")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=_cmd_describe)

    s = sub.add_parser("report", help="re-render the text report from a result document")
    s.add_argument("--result", required=True)
    s.set_defaults(fn=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CliError, ValueError, RuntimeError, OSError, KeyError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
