"""Command-line interface.

::

    rrda gen-data      --out data/
    rrda train-source  --data data/ --out source.json
    rrda rrda          --snapshot source.json --target data/target.feat --out run/
    rrda eval          --snapshot run/model.json --target data/target.feat
    rrda sweep k-prime --out sweep.csv

Global flags (``--config``, ``--seed``, ``--set section.key=value``, ``--out``)
are accepted by every command.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import aggregate
from .config import ConfigError, RunConfig, apply_overrides, dump_config, load_config, stage_seed
from .data import FeatureFileError, LabeledSet, generate_scenario, read_features, write_features
from .metrics import open_set_metrics, threshold_predict
from .model import load_snapshot, save_snapshot
from .pipeline import RRDA, SourceModel
from .sweep import DEFAULT_GRIDS, SWEEP_KINDS, sweep, sweep_csv

log = logging.getLogger("rrda")


class CommandError(Exception):
    pass


def _settings(args) -> RunConfig:
    cfg = load_config(args.config)
    apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg.run.seed = args.seed
    return cfg


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"cannot write {path}: {exc}") from None


def cmd_gen_data(args, cfg: RunConfig) -> None:
    out = _out_dir(args.out or "data")
    source, target = generate_scenario(cfg.scenario, cfg.seed)
    write_features(out / "source.feat", source)
    write_features(out / "target.feat", target)
    print(f"wrote {out / 'source.feat'} ({len(source)} rows) and {out / 'target.feat'} ({len(target)} rows)")


def cmd_train_source(args, cfg: RunConfig) -> None:
    path = Path(args.source) if args.source else Path(args.data) / "source.feat"
    data = read_features(path)
    if data.y is None:
        raise CommandError(f"{path} has no labels; source training needs labeled data")
    model = SourceModel(cfg.source, random_state=stage_seed(cfg.seed, "source")).fit(data.x, data.y)
    out = Path(args.out or "source.json")
    save_snapshot(model.snapshot_, out)
    acc = float(np.mean(model.predict(data.x) == data.y))
    print(f"source accuracy {100 * acc:.1f}; snapshot written to {out}")


def cmd_rrda(args, cfg: RunConfig) -> None:
    snap = load_snapshot(args.snapshot)
    if snap.k_prime:
        raise CommandError(f"{args.snapshot} is not a source snapshot (stage {snap.stage!r})")
    target = read_features(args.target)
    out = _out_dir(args.out or "run")
    est = RRDA(SourceModel.from_snapshot(snap), cfg.synth, cfg.classifier, cfg.adapt, random_state=cfg.seed)
    est.fit(target.unlabeled().x, eval_labels=target.y)
    model = est.model_
    model.meta = {"synthetic_rows": len(est.synthetic_set_), "missing_known_classes": est.synthetic_set_.missing_classes}
    save_snapshot(model, out / "model.json")
    ss = est.synthetic_set_
    write_features(out / "synthetic.feat", LabeledSet(ss.features, ss.labels))
    _write(out / "trace.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in est.trace_))
    _write(out / "config.ini", dump_config(cfg))
    print(f"adapted model written to {out / 'model.json'} ({len(ss)} synthetic rows, stage {model.stage})")


def cmd_eval(args, cfg: RunConfig) -> None:
    snap = load_snapshot(args.snapshot)
    target = read_features(args.target)
    if target.y is None:
        raise CommandError(f"{args.target} has no labels to evaluate against")
    logits = snap.logits(target.x)
    if snap.k_prime:
        pred = aggregate(np.argmax(logits, axis=1), snap.n_known)
    else:
        pred = threshold_predict(logits, args.tau if args.tau is not None else cfg.run.eval_tau)
    m = open_set_metrics(pred, target.y, snap.n_known)
    print(" ".join(f"{k}={100 * m[k]:.1f}" for k in ("os_star", "unk", "hos")))
    if args.out:
        _write(Path(args.out), "os_star,unk,hos\n" + ",".join(f"{m[k]:.6f}" for k in ("os_star", "unk", "hos")) + "\n")


def cmd_sweep(args, cfg: RunConfig) -> None:
    grid = [g.strip() for g in args.grid.split(",")] if args.grid else list(DEFAULT_GRIDS[args.kind])
    rows = sweep(args.kind, grid, cfg)
    out = Path(args.out or f"sweep_{args.kind}.csv")
    _write(out, sweep_csv(rows))
    for r in rows:
        if r["status"] == "ok":
            print(f"{args.kind}={r['point']}: hos={100 * r['hos']:.1f}")
        else:
            print(f"{args.kind}={r['point']}: {r['status']}")
    print(f"wrote {out}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies suppress their defaults so flags given before the
    # subcommand are not overwritten
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file", **kw)
    common.add_argument("--seed", type=int, help="root seed (overrides run.seed)", **kw)
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable", **kw)
    common.add_argument("--out", help="output file or directory", **kw)
    common.add_argument("-v", "--verbose", action="store_true", **kw)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="rrda",
        description="Source-free open-set adaptation toolkit.",
        parents=[_global_flags(suppress=False)],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write source/target feature files")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", parents=[common], help="train the source model")
    p.add_argument("--data", default="data", help="directory holding source.feat")
    p.add_argument("--source", help="explicit source feature file")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("rrda", parents=[common], help="synthesize, train target head, adapt")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--target", required=True)
    p.set_defaults(func=cmd_rrda)

    p = sub.add_parser("eval", parents=[common], help="open-set metrics of a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--tau", type=float, help="entropy threshold fraction for source snapshots")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="sensitivity sweep to CSV")
    p.add_argument("kind", choices=SWEEP_KINDS)
    p.add_argument("--grid", help="comma-separated grid points")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _settings(args)
        args.func(args, cfg)
    except (CommandError, ConfigError, FeatureFileError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
