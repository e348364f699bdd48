"""Ablation sweeps: every arm x seed, aggregated to one row per arm.

Sweep spec (INI)::

    [sweep]
    seeds = 0,1,2,3,4        # default 0..4
    workers = 1              # >1 runs jobs in separate processes
    train.epochs = 60        # any run-config key applies to all arms

    [arm:instance_only]
    train.loss_arm = instance_only

Arms are kept in file order. A failing job is recorded on its arm's row and
the sweep continues.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from dwdr.config import KEYS, RunConfig
from dwdr.errors import ConfigError

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
METRICS = ("d2s_R@1", "s2d_R@1", "d2s_AP", "s2d_AP", "mean_abs_offdiag", "count_above")
CSV_COLUMNS = ("arm", "seeds", "n_ok") + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "std")) + ("status",)


@dataclass
class SweepSpec:
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    workers: int = 1
    common: dict[str, str] = field(default_factory=dict)
    arms: dict[str, dict[str, str]] = field(default_factory=dict)


def _check_keys(keys, where: str) -> None:
    for key in keys:
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        if key == "seed":
            raise ConfigError(f"{where}: 'seed' is set per job; use the seeds list")


def parse_sweep(text: str, source: str = "<sweep>") -> SweepSpec:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    spec = SweepSpec()
    for name in parser.sections():
        body = dict(parser[name])
        if name == "sweep":
            if "seeds" in body:
                try:
                    spec.seeds = tuple(int(t) for t in body.pop("seeds").replace(",", " ").split())
                except ValueError:
                    raise ConfigError(f"{source}: seeds must be integers") from None
            if "workers" in body:
                try:
                    spec.workers = int(body.pop("workers"))
                except ValueError:
                    raise ConfigError(f"{source}: workers must be an integer") from None
            _check_keys(body, f"{source} [sweep]")
            spec.common = body
        elif name.startswith("arm:") and name[4:].strip():
            _check_keys(body, f"{source} [{name}]")
            spec.arms[name[4:].strip()] = body
        else:
            raise ConfigError(f"{source}: unexpected section [{name}] (use [sweep] or [arm:<name>])")
    if not spec.arms:
        raise ConfigError(f"{source}: no [arm:<name>] sections")
    if not spec.seeds:
        raise ConfigError(f"{source}: empty seed list")
    if spec.workers < 1:
        raise ConfigError(f"{source}: workers must be >= 1")
    return spec


def load_sweep(path: str) -> SweepSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_sweep(fh.read(), path)


def job_config(base: RunConfig, spec: SweepSpec, arm: str, seed: int) -> RunConfig:
    return base.with_overrides({**spec.common, **spec.arms[arm], "seed": str(seed)})


def _run_job(args) -> dict:
    # module-level so it pickles into worker processes
    from dwdr.experiment import run_experiment

    arm, seed, cfg = args
    try:
        return {"arm": arm, "seed": seed, "ok": True, **run_experiment(cfg).summary()}
    except Exception as exc:  # recorded per row; the sweep keeps going
        return {"arm": arm, "seed": seed, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


def _stats(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def aggregate(arm: str, runs: list[dict]) -> dict:
    ok = [r for r in runs if r["ok"]]
    row: dict = {"arm": arm, "seeds": ",".join(str(r["seed"]) for r in runs), "n_ok": len(ok)}
    for m in METRICS:
        row[f"{m}_mean"], row[f"{m}_std"] = _stats([r[m] for r in ok])
    failed = [r for r in runs if not r["ok"]]
    row["status"] = "ok" if not failed else f"failed {len(failed)}/{len(runs)}: seed {failed[0]['seed']}: {failed[0]['error']}"
    return row


def run_sweep(spec: SweepSpec, base: RunConfig | None = None) -> tuple[list[dict], list[dict]]:
    """Returns (one aggregate row per arm, every per-job result)."""
    base = base or RunConfig()
    jobs = []
    for arm in spec.arms:
        for seed in spec.seeds:
            try:
                jobs.append((arm, seed, job_config(base, spec, arm, seed)))
            except ConfigError as exc:
                jobs.append((arm, seed, exc))
    todo = [j for j in jobs if isinstance(j[2], RunConfig)]
    if spec.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            done = list(pool.map(_run_job, todo))
    else:
        done = [_run_job(j) for j in todo]
    it = iter(done)
    results = []
    for arm, seed, cfg in jobs:
        if isinstance(cfg, RunConfig):
            results.append(next(it))
        else:
            results.append({"arm": arm, "seed": seed, "ok": False, "error": f"ConfigError: {cfg}"})
    rows = [aggregate(arm, [r for r in results if r["arm"] == arm]) for arm in spec.arms]
    return rows, results


def _cell(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def _json_safe(row: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}


def write_results(rows: list[dict], results: list[dict], out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    json_path = os.path.join(out_dir, "sweep.json")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in CSV_COLUMNS])
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"columns": list(CSV_COLUMNS), "arms": [_json_safe(r) for r in rows], "runs": results}, fh,
                  indent=2, allow_nan=False)
        fh.write("\n")
    return csv_path, json_path
