"""Command-line driver: ``tiersim generate|run|compare|model-study``.

Every command writes a ``manifest.json`` next to its outputs and exits with
status 0 on success.  Failures print one ``error: <kind>: <message>`` line
to stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .experiments import (HOUR, ablation_configs, accuracy_timeline, holdout_study)
from .metrics import BinAggregate, percent_reduction
from .replay import DOWNGRADE_POLICIES, UPGRADE_POLICIES, make_downgrade, make_upgrade, replay
from .simcore import ClusterConfig, PlacementMode
from .workload import (WorkloadSpec, generate, generate_switching, load_trace, preset,
                       save_trace, trace_stats)
from .xgb import XgbPolicyConfig


class CliError(Exception):
    pass


def _write_manifest(out: Path, command: str, **fields: Any) -> None:
    out.mkdir(parents=True, exist_ok=True)
    doc = {"tool": "tiersim", "version": __version__, "command": command, **fields}
    (out / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=2, default=str) + "\n")


def _cluster(args: argparse.Namespace) -> ClusterConfig:
    cfg = ClusterConfig.load(args.cluster) if args.cluster else ClusterConfig()
    changes: dict[str, Any] = {"seed": args.seed}
    if getattr(args, "tier_aware", False):
        changes["tier_aware"] = True
    if getattr(args, "placement", None):
        changes["placement"] = PlacementMode(args.placement)
    return replace(cfg, **changes)


def _spec(args: argparse.Namespace) -> WorkloadSpec:
    if args.spec:
        spec = WorkloadSpec.load(args.spec)
    else:
        spec = preset(args.preset)
    changes: dict[str, Any] = {"seed": args.seed}
    if args.jobs is not None:
        changes["job_count"] = args.jobs
    if args.hours is not None:
        changes["duration"] = args.hours * HOUR
    spec = replace(spec, **changes)
    spec.validate()
    return spec


# -- commands ----------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> None:
    spec = _spec(args)
    events = generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trace(events, out)
    stats = trace_stats(events)
    manifest_dir = out.parent
    _write_manifest(manifest_dir, "generate", workload=spec.to_dict(), trace=str(out),
                    stats=stats.to_dict())
    print(f"wrote {len(events)} events ({stats.jobs} jobs, {stats.files} files) to {out}")


def cmd_run(args: argparse.Namespace) -> None:
    events = load_trace(args.trace)
    config = _cluster(args)
    down = make_downgrade(args.down, seed=args.seed)
    up = make_upgrade(args.up, seed=args.seed)
    result = replay(events, config, down, up, measure_from=args.measure_from,
                    log_events=args.event_log)
    out = Path(args.out)
    result.write(out)
    for name, p in (("downgrade", down), ("upgrade", up)):
        fn = getattr(p, "diagnostics", None)
        if fn is not None:
            (out / f"{name}_model.json").write_text(json.dumps(fn(), sort_keys=True, indent=2) + "\n")
    _write_manifest(out, "run", trace=args.trace, cluster=config.to_dict(), down=args.down,
                    up=args.up, seed=args.seed, measure_from=args.measure_from)
    rep = result.report
    print(f"{args.down}+{args.up}: {rep.jobs} jobs, memory BHR {_fmt(rep.bhr_access)}, "
          f"HR {_fmt(rep.hr_access)}")


def _fmt(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def _parse_pair(item: str, default_up: str) -> tuple[str, str]:
    down, _, up = item.partition("+")
    return down, (up or default_up)


def cmd_compare(args: argparse.Namespace) -> None:
    events = load_trace(args.trace)
    config = _cluster(args)
    names = [s for s in args.policies.split(",") if s]
    if not names:
        raise CliError("no policies given")
    runs: dict[str, Any] = {}
    baseline_key = args.baseline
    wanted = sorted(set(names) | {baseline_key})
    for name in wanted:
        if name == "hdfs":
            cfg = replace(config, placement=PlacementMode.HDFS_ALL_HDD)
            runs[name] = replay(events, cfg, measure_from=args.measure_from)
            continue
        down, up = _parse_pair(name, args.up)
        runs[name] = replay(events, config, make_downgrade(down, seed=args.seed),
                            make_upgrade(up, seed=args.seed), measure_from=args.measure_from)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = {k: BinAggregate(**v) for k, v in runs[baseline_key].report.bins.items()}
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("policy", "bin", "completion_reduction_pct", "machine_time_reduction_pct",
                    "mean_completion", "machine_time"))
        for name in sorted(names):
            bins = {k: BinAggregate(**v) for k, v in runs[name].report.bins.items()}
            comp = percent_reduction(bins, base, "mean_completion")
            mach = percent_reduction(bins, base, "machine_time")
            for lbl in sorted(bins):
                w.writerow((name, lbl, comp[lbl], mach[lbl], bins[lbl].mean_completion,
                            bins[lbl].machine_time))
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("policy", "hr_access", "hr_location", "bhr_access", "bhr_location", "bac",
                    "bco", "upgraded_bytes", "downgraded_bytes"))
        for name in wanted:
            r = runs[name].report
            w.writerow((name, r.hr_access, r.hr_location, r.bhr_access, r.bhr_location, r.bac,
                        r.bco, r.upgraded_bytes, r.downgraded_bytes))
    _write_manifest(out, "compare", trace=args.trace, cluster=config.to_dict(), policies=names,
                    baseline=baseline_key, default_up=args.up, seed=args.seed,
                    measure_from=args.measure_from)
    print(f"compared {len(names)} policies against {baseline_key}; see {out / 'comparison.csv'}")


def cmd_model_study(args: argparse.Namespace) -> None:
    w = args.window * 60.0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or 1000
    rate = jobs / (6 * HOUR)
    spec = preset(args.preset, seed=args.seed)
    if args.mode == "mix":
        first = replace(spec, job_count=jobs, duration=6 * HOUR)
        other = "cmu" if args.preset == "fb" else "fb"
        second = preset(other, seed=args.seed + 1, job_count=jobs, duration=6 * HOUR)
        events = generate_switching(first, second)
        rows = accuracy_timeline(events, w, origin=0.0, seed=args.seed)
        _write_timeline(out / "accuracy.csv", rows)
        _write_manifest(out, "model-study", mode="mix", window=w, first=first.to_dict(),
                        second=second.to_dict(), seed=args.seed)
        print(f"wrote {len(rows)} hourly rows to {out / 'accuracy.csv'}")
        return
    duration = 6 * HOUR + w
    spec = replace(spec, job_count=int(round(rate * duration)), duration=duration)
    events = generate(spec)
    if args.mode == "ablation":
        with open(out / "ablation.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("variant", "test_auc", "test_accuracy", "validation_auc",
                         "validation_accuracy"))
            for name, fcfg in ablation_configs().items():
                r = holdout_study(events, w, feature_cfg=fcfg, seed=args.seed)
                wr.writerow((name, r.test.auc, r.test.accuracy, r.validation.auc,
                             r.validation.accuracy))
        _write_manifest(out, "model-study", mode="ablation", window=w, workload=spec.to_dict(),
                        seed=args.seed)
        print(f"wrote {out / 'ablation.csv'}")
        return
    study = holdout_study(events, w, seed=args.seed)
    rows = accuracy_timeline(events, w, seed=args.seed, modes=(args.mode,))
    _write_timeline(out / "accuracy.csv", rows)
    with open(out / "roc.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("fpr", "tpr"))
        wr.writerows(study.test.roc)
    (out / "study.json").write_text(json.dumps(study.to_dict(), sort_keys=True, indent=2) + "\n")
    _write_manifest(out, "model-study", mode=args.mode, window=w, workload=spec.to_dict(),
                    seed=args.seed)
    print(f"test AUC {_fmt(study.test.auc)}, accuracy {_fmt(study.test.accuracy)}")


def _write_timeline(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("hour", "incremental", "oneshot", "retrain", "points"))
        for r in rows:
            wr.writerow((r.hour, r.incremental, r.oneshot, r.retrain, r.n))


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiersim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def workload_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--preset", default="fb", choices=("fb", "cmu"))
        sp.add_argument("--spec", help="YAML workload spec (overrides --preset)")
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--hours", type=float)

    def sim_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--trace", required=True)
        sp.add_argument("--cluster", help="YAML cluster config")
        sp.add_argument("--tier-aware", action="store_true")
        sp.add_argument("--placement", choices=[m.value for m in PlacementMode])
        sp.add_argument("--measure-from", type=float, default=0.0,
                        help="only score jobs starting at or after this time (seconds)")

    g = sub.add_parser("generate", help="write a synthetic trace")
    workload_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="trace file (JSON Lines)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="replay a trace under one policy pair")
    sim_flags(r)
    r.add_argument("--down", default="none", choices=DOWNGRADE_POLICIES)
    r.add_argument("--up", default="none", choices=UPGRADE_POLICIES)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--event-log", action="store_true", help="also write events.jsonl")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="replay a trace under several policies")
    sim_flags(c)
    c.add_argument("--policies", required=True,
                   help="comma list of DOWN or DOWN+UP names, e.g. lru,xgb,xgb+xgb")
    c.add_argument("--up", default="none", choices=UPGRADE_POLICIES,
                   help="upgrade policy for entries without +UP")
    c.add_argument("--baseline", default="hdfs",
                   help="entry to compare against; 'hdfs' means all replicas on HDD, no policies")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    m = sub.add_parser("model-study", help="offline accuracy/ROC studies of the access models")
    m.add_argument("--mode", required=True,
                   choices=("incremental", "oneshot", "retrain", "mix", "ablation"))
    m.add_argument("--preset", default="fb", choices=("fb", "cmu"))
    m.add_argument("--jobs", type=int, help="jobs per 6 hours (default 1000)")
    m.add_argument("--window", type=float, default=30.0, help="class window in minutes")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_model_study)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # one machine-parsable line, no traceback
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
