"""``dwdr`` command line: gen-data, train, eval, gradcheck, sweep.

Exit codes: 0 success, 1 usage or config error, 2 numeric failure, 3 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from dwdr import checkpoint as ckpt
from dwdr.config import RunConfig, format_config, load_config
from dwdr.data import read_manifest, write_manifest
from dwdr.errors import ConfigError, DataError, DegenerateBatchError, DimensionError, NumericError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

TRAIN_MANIFEST = "train.manifest"
TEST_MANIFEST = "test.manifest"
CHECKPOINT = "checkpoint.txt"
TRAIN_LOG = "train_log.jsonl"
METRICS = "metrics.json"
EMBEDDINGS = "embeddings.txt"

log = logging.getLogger("dwdr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for numeric failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--print-defaults", action="store_true",
                   help="print the effective configuration (defaults plus overrides) and exit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dwdr", description="Decorrelation-regularized cross-view retrieval on synthetic data.")
    parser.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate train/test manifests")
    _common(p)

    p = sub.add_parser("train", help="train on the train manifest; write checkpoint and JSON-lines log")
    _common(p)
    p.add_argument("--train-manifest", help=f"default: <out>/{TRAIN_MANIFEST}")

    p = sub.add_parser("eval", help="bidirectional retrieval metrics for a checkpoint or embedding file")
    _common(p)
    p.add_argument("--checkpoint", help=f"default: <out>/{CHECKPOINT}")
    p.add_argument("--test-manifest", help=f"default: <out>/{TEST_MANIFEST}")
    p.add_argument("--embeddings", help="evaluate this embedding file instead of embedding the test manifest")

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss and the full composite")
    _common(p)
    p.add_argument("--instances", type=int, default=100, help="random instances per loss (default 100)")
    p.add_argument("--composite-instances", type=int, help="instances for the full composite (default: --instances)")
    p.add_argument("--batch", type=int, default=8, help="batch rows b")
    p.add_argument("--dim", type=int, default=6, help="feature dimension d")
    p.add_argument("--classes", type=int, default=5, help="classes C")

    p = sub.add_parser("sweep", help="run an ablation sweep; write CSV and JSON")
    _common(p)
    p.add_argument("spec", nargs="?", help="sweep spec (INI)")
    p.add_argument("--workers", type=int, help="override the sweep file's worker count")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    return cfg.with_overrides(overrides) if overrides else cfg


def _path(value: str | None, cfg: RunConfig, default: str) -> str:
    return value if value else os.path.join(cfg.out, default)


def cmd_gen_data(cfg: RunConfig, args) -> int:
    from dwdr.experiment import make_datasets

    train_ds, test_ds = make_datasets(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    paths = {}
    for name, ds, fname in (("train", train_ds, TRAIN_MANIFEST), ("test", test_ds, TEST_MANIFEST)):
        path = os.path.join(cfg.out, fname)
        write_manifest(ds, path)
        paths[name] = path
        print(f"{name}: {ds.num_classes} classes, {len(ds.satellite_ids())} satellite, "
              f"{len(ds.drone_ids())} drone items -> {path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from dwdr.trainer import init_state, train_epoch

    ds = read_manifest(_path(args.train_manifest, cfg, TRAIN_MANIFEST))
    os.makedirs(cfg.out, exist_ok=True)
    state = init_state(cfg.train, ds.dim, ds.num_classes)
    log_path = os.path.join(cfg.out, TRAIN_LOG)
    with open(log_path, "w", encoding="utf-8") as fh:
        for epoch in range(cfg.train.epochs):
            row = train_epoch(state, ds, cfg.train, epoch)
            fh.write(json.dumps(row) + "\n")
            fh.flush()
            log.info("epoch %d l_total=%.4f mean|rho|=%.3f", epoch, row["l_total"], row["mean_abs_offdiag_rho"])
    ck_path = os.path.join(cfg.out, CHECKPOINT)
    ckpt.save_checkpoint(ckpt.Checkpoint(state.encoder, state.classifier, state.epoch), ck_path)
    print(f"trained {cfg.train.epochs} epochs ({cfg.train.loss_arm}, {cfg.train.sampling}) -> {ck_path}, {log_path}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from dwdr.experiment import evaluate_checkpoint, metrics_from_embeddings
    from dwdr.retrieval import read_embeddings, write_embeddings

    if args.embeddings:
        sets = read_embeddings(args.embeddings)
        if set(sets) != {"sat", "drone"}:
            raise DataError(f"{args.embeddings}: need both 'sat' and 'drone' rows, found {sorted(sets)}")
        metrics = metrics_from_embeddings(sets["sat"], sets["drone"], cfg.ks, cfg.tau, cfg.seed, cfg.train.dwdr.eps)
    else:
        ck = ckpt.load_checkpoint(_path(args.checkpoint, cfg, CHECKPOINT))
        test = read_manifest(_path(args.test_manifest, cfg, TEST_MANIFEST))
        if test.dim != ck.encoder.input_dim:
            raise DimensionError(f"checkpoint expects {ck.encoder.input_dim} input features, manifest has {test.dim}")
        metrics, sat, drone = evaluate_checkpoint(ck, test, cfg)
        os.makedirs(cfg.out, exist_ok=True)
        write_embeddings([sat, drone], os.path.join(cfg.out, EMBEDDINGS))
    text = json.dumps(metrics, indent=2)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, METRICS), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from dwdr.gradcheck import run_suite

    reports = run_suite(seed=cfg.seed, instances=args.instances, b=args.batch, d=args.dim, c=args.classes,
                        composite_instances=args.composite_instances)
    for rep in reports:
        print(rep.line())
    ok = all(r.passed for r in reports)
    print("gradcheck: " + ("all passed" if ok else "FAILURES"))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_sweep(cfg: RunConfig, args) -> int:
    from dwdr.sweep import CSV_COLUMNS, load_sweep, run_sweep, write_results

    if not args.spec:
        raise UsageError("dwdr sweep: a sweep spec path is required")
    spec = load_sweep(args.spec)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        spec.workers = args.workers
    rows, results = run_sweep(spec, cfg)
    csv_path, json_path = write_results(rows, results, cfg.out)
    for row in rows:
        print(f"{row['arm']:<24} d2s R@1={row['d2s_R@1_mean']:.3f}±{row['d2s_R@1_std']:.3f} "
              f"s2d R@1={row['s2d_R@1_mean']:.3f}±{row['s2d_R@1_std']:.3f} "
              f"mean|rho|={row['mean_abs_offdiag_mean']:.3f} [{row['status']}]")
    print(f"wrote {csv_path} and {json_path} ({len(CSV_COLUMNS)} columns)")
    return EXIT_OK if all(r["n_ok"] for r in rows) else EXIT_NUMERIC


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            if args.print_defaults:
                sys.stdout.write(format_config(RunConfig()))
                return EXIT_OK
            raise UsageError("dwdr: choose a command: " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
        if args.print_defaults:
            sys.stdout.write(format_config(cfg))
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, DimensionError, DegenerateBatchError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
