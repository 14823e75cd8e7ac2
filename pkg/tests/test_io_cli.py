import json
import re

import numpy as np
import pytest
import yaml

from trivariate.cli import main as cli_main
from trivariate.config import ConfigError, RunConfig, Transform, apply_transforms, load_config
from trivariate.estimation import EstimationError
from trivariate.fileio import FormatError, Table, csv_text, dumps, load_csv, read_table, write_csv
from trivariate.model import DataError, Dataset
from trivariate.pipeline import PipelineError, run_pipeline
from trivariate.sem import SemParams, SemSpec, sample_sem
from trivariate.simulation import sample_dataset

from conftest import SMALL_SPEC, small_config

# ---------------------------------------------------------------- CSV


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    cols = {"a": rng.normal(size=50) * 1e-7, "b": rng.normal(size=50) * 1e9, "c": np.full(50, np.pi)}
    cols["a"][3] = np.nan
    write_csv(tmp_path / "x.csv", cols)
    back = load_csv(tmp_path / "x.csv")
    for k, v in cols.items():
        assert np.array_equal(back[k], v, equal_nan=True)
    assert csv_text(Dataset(cols)) == (tmp_path / "x.csv").read_text()


def test_header_only_file_then_estimation_fails_cleanly(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("x1,d1,x2,x3,d2,y1,y2,y3\n")
    data = load_csv(path)
    assert data.n == 0
    from trivariate.estimation import estimate
    with pytest.raises(EstimationError):
        estimate(data, SMALL_SPEC)


def test_unparseable_cell_reports_coordinates(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(FormatError, match=r"line 3, column 'b'.*'oops'"):
        read_table(path)


@pytest.mark.parametrize("content,pattern", [
    ("a,a\n1,2\n", "duplicate column 'a'"),
    ("", "empty"),
    ("a,b\n1,2,3\n", "line 2 has 3 fields"),
])
def test_malformed_files(tmp_path, content, pattern):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(FormatError, match=pattern):
        read_table(path)


def test_text_columns_need_encoding(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("g,v\nred,1\n,2\nblue,3\n")
    table = read_table(path, ["g"])
    assert table.text["g"] == ["red", None, "blue"]
    with pytest.raises(FormatError, match="dummy-encode"):
        table.to_dataset()


def test_json_dumps_handles_nan_and_arrays():
    text = dumps({"a": np.array([1.0, np.nan]), "b": np.float64(0.1), "c": np.int64(3)})
    assert json.loads(text) == {"a": [1.0, None], "b": 0.1, "c": 3}


# ---------------------------------------------------------------- config


def test_unknown_config_keys_rejected():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict({"data": {"path": "x.csv"}, "colour": "red"})
    with pytest.raises(ConfigError, match="estimation"):
        RunConfig.from_dict({"estimation": {"tolerance": 1e-6}})
    with pytest.raises(ConfigError, match="restrictions"):
        RunConfig.from_dict({"estimation": {"restrictions": ["full"]}})
    with pytest.raises(ConfigError, match="reference"):
        RunConfig.from_dict({"transforms": [{"source": "g", "op": "dummy", "target": "g"}]})


def test_config_hash_ignores_location_and_tracks_content(tmp_path):
    a = RunConfig.from_dict({"seed": 1, "data": {"path": "d.csv"}}, base_dir=tmp_path)
    b = RunConfig.from_dict({"data": {"path": "d.csv"}, "seed": 1}, base_dir="/elsewhere")
    c = RunConfig.from_dict({"seed": 2, "data": {"path": "d.csv"}})
    assert a.hash() == b.hash() != c.hash()
    assert RunConfig.from_dict(a.to_dict()).hash() == a.hash()


def _table(**cols):
    numeric = {k: np.asarray(v, float) for k, v in cols.items() if not isinstance(v[0], str)}
    text = {k: list(v) for k, v in cols.items() if isinstance(v[0], str)}
    return Table(list(cols), numeric, text, len(next(iter(cols.values()))))


def test_log_transform_rejects_non_positive():
    t = _table(v=[1.0, 0.0, 2.0])
    with pytest.raises(DataError, match="row 2"):
        apply_transforms(t, (Transform("v", "log", "lv"),))


def test_log_transform_keeps_missing():
    out = apply_transforms(_table(v=[1.0, np.nan, np.e]), (Transform("v", "log", "lv"),))
    assert np.allclose(out.numeric["lv"], [0.0, np.nan, 1.0], equal_nan=True)


def test_dummy_encoding_drops_reference():
    t = _table(g=["a", "b", "c", "b"])
    out = apply_transforms(t, (Transform("g", "dummy", "g", "a"),))
    assert out.names == ["g_b", "g_c"]
    assert out.numeric["g_b"].tolist() == [0, 1, 0, 1]
    with pytest.raises(DataError, match="reference level 'z'"):
        apply_transforms(t, (Transform("g", "dummy", "g", "z"),))


def test_transforms_run_in_dependency_order():
    t = _table(v=[1.0, 2.0, 4.0])
    steps = (Transform("lv", "standardize", "zlv"), Transform("v", "log", "lv"))
    out = apply_transforms(t, steps)
    assert out.numeric["zlv"].mean() == pytest.approx(0.0, abs=1e-15)


def test_transform_cycle_and_clash():
    t = _table(v=[1.0, 2.0])
    with pytest.raises(ConfigError, match="cycle"):
        apply_transforms(t, (Transform("a", "log", "b"), Transform("b", "log", "a")))
    with pytest.raises(ConfigError, match="twice"):
        apply_transforms(t, (Transform("v", "log", "a"), Transform("v", "standardize", "a")))
    with pytest.raises(ConfigError, match="'w'"):
        apply_transforms(t, (Transform("w", "log", "a"),))


# ---------------------------------------------------------------- pipeline and CLI


def _write_run(tmp_path, with_sem=False, extra_model=None, outputs=None):
    data = sample_dataset(small_config(n=1200, seed=31))
    cols = dict(data.columns)
    cols["y1"] = np.exp(cols["y1"])  # stored in levels, logged by a transform
    region = np.where(cols["d2"] > 0, "north", "south")
    model = {"y1": "log_y1", "eq1": ["x1", "region_south"], "eq2": ["x2", "d1"], "eq3": ["x3"],
             "j2": 4, "j3": 5}
    cfg = {"seed": 3, "data": {"path": "data.csv"},
           "transforms": [{"source": "y1", "op": "log", "target": "log_y1"},
                          {"source": "region", "op": "dummy", "target": "region", "reference": "north"}],
           "model": model,
           "estimation": {"restrictions": ["independent"]},
           "outputs": outputs or {"result": "out/result.json", "report": "out/report.txt",
                                  "margins": "out/margins.csv"}}
    if with_sem:
        spec = SemSpec.from_blocks({"att": ["u1", "u2", "u3"]}, ["x2"])
        params = SemParams(np.array([[0.9], [0.7], [0.5]]), np.array([[0.4]]), np.full(3, 0.3), np.eye(1))
        sem_data, _ = sample_sem(spec, params, {"x2": cols["x2"]}, seed=4)
        cols.update({k: sem_data[k] for k in ("u1", "u2", "u3")})
        cfg["sem"] = {"latents": {"att": ["u1", "u2", "u3"]}, "exogenous": ["x2"]}
        model["eq3"] = ["x3", "att"]
        cfg["outputs"]["scores"] = "out/scores.csv"
    if extra_model:
        model.update(extra_model)
    header = list(cols) + ["region"]
    lines = [",".join(header)]
    for i in range(data.n):
        lines.append(",".join([repr(float(cols[k][i])) for k in cols] + [region[i]]))
    (tmp_path / "data.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "run.yaml").write_text(yaml.safe_dump(cfg))
    return tmp_path / "run.yaml"


def test_pipeline_end_to_end_and_report_rerender(tmp_path, capsys):
    path = _write_run(tmp_path)
    assert cli_main(["estimate", "--config", str(path)]) == 0
    doc = json.loads((tmp_path / "out/result.json").read_text())
    assert doc["format"] == "trivariate-result/1"
    assert doc["config_hash"] == load_config(path).hash()
    assert set(doc["models"]) == {"full", "independent", "constants_only"}
    assert doc["tests"][0]["df"] == 3
    assert doc["sem"] is None
    report = (tmp_path / "out/report.txt").read_text()
    assert "region_south" in report and "Error correlations" in report
    capsys.readouterr()
    assert cli_main(["report", "--result", str(tmp_path / "out/result.json")]) == 0
    assert capsys.readouterr().out == report
    margins = (tmp_path / "out/margins.csv").read_text().splitlines()
    assert margins[0].startswith("variable,equation")
    assert cli_main(["margins", "--result", str(tmp_path / "out/result.json"),
                     "--variable", "x3", "--equation", "3"]) == 0
    assert "level 5" in capsys.readouterr().out
    assert cli_main(["compare", "--full", str(tmp_path / "out/result.json"),
                     "--restricted", str(tmp_path / "out/result.json"), "--df", "3"]) == 0
    assert "LR statistic" in capsys.readouterr().out


def test_pipeline_with_sem_stage(tmp_path):
    path = _write_run(tmp_path, with_sem=True)
    outcome = run_pipeline(load_config(path))
    doc = outcome.document
    assert doc["sem"]["latents"] == ["att"]
    # 10 moments, 7 free parameters, 1 exogenous variance
    assert doc["sem"]["fit"]["df"] == 2
    assert any(r["label"] == "eq3:att" for r in doc["models"]["full"]["estimates"])
    scores = read_table(tmp_path / "out/scores.csv")
    assert scores.names == ["att"] and scores.n == 1200


def test_pipeline_failure_is_quarantined(tmp_path, capsys):
    path = _write_run(tmp_path, extra_model={"eq2": ["x2", "no_such_column"]})
    assert cli_main(["estimate", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    assert "no_such_column" in err and "[estimate]" in err
    assert not (tmp_path / "out/result.json").exists()
    partial = list((tmp_path / "out/quarantine").glob("partial-*.json"))
    assert len(partial) == 1
    doc = json.loads(partial[0].read_text())
    assert doc["error"]["stage"] == "estimate"
    assert doc["data"]["rows"] == 1200


def test_pipeline_error_names_stage(tmp_path):
    path = _write_run(tmp_path)
    (tmp_path / "data.csv").write_text("y1,region\n-1,north\n")
    with pytest.raises(PipelineError) as info:
        run_pipeline(load_config(path), write=False)
    assert info.value.stage == "transform"


def test_cli_compare_numbers(capsys):
    assert cli_main(["compare", "--full", "-16946", "--restricted", "-17119", "--df", "3"]) == 0
    assert re.search(r"LR statistic 346\s+df 3", capsys.readouterr().out)
    assert cli_main(["compare", "--full", "-17119", "--restricted", "-16946", "--df", "3"]) == 1
    assert "exceeds" in capsys.readouterr().err


def test_cli_simulate_and_describe(tmp_path, capsys):
    cfg = tmp_path / "sim.yaml"
    cfg.write_text("seed: 2\nsimulation: {n: 60000, preset: paper_like}\n")
    out = tmp_path / "sim.csv"
    assert cli_main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    capsys.readouterr()
    assert cli_main(["describe", "--data", str(out)]) == 0
    text = capsys.readouterr().out
    share = float(re.search(r"^female .*\(([\d.]+)%\)", text, re.M).group(1))
    assert share == pytest.approx(50.39, abs=0.6)
    assert text.startswith("rows 60000")


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert cli_main(["estimate", "--config", str(tmp_path / "missing.yaml")]) == 1
    assert "cannot read config" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nmodle: {}\n")
    assert cli_main(["estimate", "--config", str(bad)]) == 1
    assert "modle" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli_main(["--version"])
