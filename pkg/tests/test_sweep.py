import csv
import json
import math

import pytest

from dwdr import cli
from dwdr.config import RunConfig
from dwdr.errors import ConfigError
from dwdr.sweep import CSV_COLUMNS, aggregate, job_config, parse_sweep, run_sweep, write_results

SPEC = """
[sweep]
seeds = 0, 1
data.num_classes = 10
data.train_classes = 5
data.drone_per_class = 2
train.epochs = 1
train.batch_size = 4

[arm:instance_only]
train.loss_arm = instance_only

[arm:id_dwdr]
train.loss_arm = instance_plus_dwdr

[arm:broken]
train.batch_size = 3
"""


def test_parse_sweep():
    spec = parse_sweep(SPEC)
    assert spec.seeds == (0, 1) and spec.workers == 1
    assert list(spec.arms) == ["instance_only", "id_dwdr", "broken"]
    assert spec.common["train.epochs"] == "1"


def test_default_seeds():
    assert parse_sweep("[arm:a]\ntrain.epochs = 1\n").seeds == (0, 1, 2, 3, 4)


@pytest.mark.parametrize("text, match", [
    ("[sweep]\nseeds = 0\n", "no \\[arm"),
    ("[arm:a]\nseed = 3\n", "seeds list"),
    ("[arm:a]\ntrain.nope = 3\n", "train.nope"),
    ("[other]\nx = 1\n[arm:a]\n", "unexpected section"),
    ("[sweep]\nseeds = a\n[arm:a]\n", "integers"),
    ("[sweep]\nworkers = 0\n[arm:a]\n", "workers"),
    ("[arm:a]\nx\n", "line +2"),
])
def test_sweep_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_sweep(text)


def test_job_config_layers():
    spec = parse_sweep(SPEC)
    cfg = job_config(RunConfig(), spec, "id_dwdr", 1)
    assert cfg.seed == 1 and cfg.train.seed == 1
    assert cfg.train.loss_arm == "instance_plus_dwdr" and cfg.synth.num_classes == 10


def test_aggregate_stats():
    runs = [{"arm": "a", "seed": s, "ok": True, "d2s_R@1": v, "s2d_R@1": v, "d2s_AP": v, "s2d_AP": v,
             "mean_abs_offdiag": v, "count_above": v} for s, v in enumerate([0.2, 0.4, 0.9])]
    row = aggregate("a", runs)
    assert row["d2s_R@1_mean"] == pytest.approx(0.5)
    assert row["d2s_R@1_std"] == pytest.approx(0.360555127546, abs=1e-10)
    assert aggregate("a", runs[:1])["d2s_R@1_std"] == 0.0
    failed = aggregate("a", [{"arm": "a", "seed": 0, "ok": False, "error": "boom"}])
    assert failed["n_ok"] == 0 and math.isnan(failed["d2s_AP_mean"]) and "boom" in failed["status"]


@pytest.fixture(scope="module")
def swept(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    rows, results = run_sweep(parse_sweep(SPEC))
    return rows, results, write_results(rows, results, str(out))


def test_sweep_rows_and_failures(swept):
    rows, results, _ = swept
    assert [r["arm"] for r in rows] == ["instance_only", "id_dwdr", "broken"]
    assert len(results) == 6
    ok = {r["arm"]: r for r in rows}
    assert ok["instance_only"]["n_ok"] == 2 and ok["instance_only"]["status"] == "ok"
    assert ok["broken"]["n_ok"] == 0 and "ConfigError" in ok["broken"]["status"]


def test_sweep_files(swept):
    rows, _, (csv_path, json_path) = swept
    with open(csv_path, newline="") as fh:
        table = list(csv.reader(fh))
    assert tuple(table[0]) == CSV_COLUMNS and len(table) == 4
    doc = json.loads(open(json_path).read())
    assert doc["columns"] == list(CSV_COLUMNS)
    assert doc["arms"][2]["d2s_R@1_mean"] is None
    assert doc["arms"][0]["d2s_R@1_mean"] == rows[0]["d2s_R@1_mean"]


def test_parallel_matches_serial(swept):
    rows, _, _ = swept
    spec = parse_sweep(SPEC)
    spec.workers = 2
    par, _ = run_sweep(spec)
    for a, b in zip(rows, par):
        assert a.keys() == b.keys()
        for k in a:
            assert a[k] == b[k] or (isinstance(a[k], float) and math.isnan(a[k]) and math.isnan(b[k]))


def test_sweep_cli(tmp_path, capsys):
    spec = tmp_path / "s.ini"
    spec.write_text(SPEC.replace("seeds = 0, 1", "seeds = 0"))
    out = tmp_path / "out"
    # one arm fails, so the exit status reports it
    assert cli.main(["sweep", str(spec), "--out", str(out)]) == 2
    assert (out / "sweep.csv").exists() and (out / "sweep.json").exists()
    assert "instance_only" in capsys.readouterr().out
    assert cli.main(["sweep", str(spec), "--workers", "0"]) == 1
