"""Drive a trace through the cluster, the policies and the metric collectors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from .metrics import AccessRecord, JobRecord, RunReport, build_report, write_jsonl
from .classic import ClassicDowngrade, ClassicParams, ClassicUpgrade
from .policyapi import DowngradePolicy, Move, PolicyThresholds, ReplicationManager, UpgradePolicy
from .simcore import Cluster, ClusterConfig, FileMeta, PlacementMode, SimError
from .workload import EventKind, TraceEvent, bin_of
from .xgb import XgbDowngrade, XgbPolicyConfig, XgbUpgrade

DEFAULT_UPGRADE_INTERVAL = 60.0


class MalformedTrace(ValueError):
    pass


DOWNGRADE_POLICIES = ("none",) + ClassicDowngrade.KINDS + ("xgb",)
UPGRADE_POLICIES = ("none",) + ClassicUpgrade.KINDS + ("xgb",)


def make_downgrade(name: str, *, seed: int = 0, params: ClassicParams | None = None,
                   xgb_cfg: XgbPolicyConfig | None = None,
                   thresholds: PolicyThresholds | None = None) -> DowngradePolicy | None:
    if name == "none":
        return None
    if name == "xgb":
        return XgbDowngrade(xgb_cfg or XgbPolicyConfig(), seed=seed, thresholds=thresholds)
    if name in ClassicDowngrade.KINDS:
        return ClassicDowngrade(name, params, thresholds)
    raise ValueError(f"unknown downgrade policy {name!r}; choose from {', '.join(DOWNGRADE_POLICIES)}")


def make_upgrade(name: str, *, seed: int = 0, params: ClassicParams | None = None,
                 xgb_cfg: XgbPolicyConfig | None = None) -> UpgradePolicy | None:
    if name == "none":
        return None
    if name == "xgb":
        return XgbUpgrade(xgb_cfg or XgbPolicyConfig(), seed=seed)
    if name in ClassicUpgrade.KINDS:
        return ClassicUpgrade(name, params)
    raise ValueError(f"unknown upgrade policy {name!r}; choose from {', '.join(UPGRADE_POLICIES)}")


def move_to_dict(m: Move) -> dict[str, Any]:
    return {"t": m.t, "file": m.file_id, "direction": m.direction, "size": m.size,
            "src": [m.src[0], m.src[1].label],
            "dst": None if m.dst is None else [m.dst[0], m.dst[1].label]}


@dataclass
class _Job:
    start: float
    cpu: float = 0.0
    reads: list[float] = field(default_factory=list)
    bytes: int = 0


@dataclass
class RunResult:
    report: RunReport
    records: list[AccessRecord]
    jobs: list[JobRecord]
    moves: list[dict[str, Any]]
    cluster: Cluster
    manager: ReplicationManager

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.report.to_json() + "\n")
        self.report.write_csv(out / "report.csv")
        write_jsonl((r.to_dict() for r in self.records), out / "accesses.jsonl")
        write_jsonl((j.to_dict() for j in self.jobs), out / "jobs.jsonl")
        write_jsonl(self.moves, out / "moves.jsonl")
        decisions = []
        for p in (self.manager.downgrade, self.manager.upgrade):
            log = getattr(p, "decisions", None)
            if log is not None:
                decisions.extend(log.rows)
        if decisions:
            write_jsonl(decisions, out / "decisions.jsonl")
        if self.cluster.log_events:
            self.cluster.write_event_log(out / "events.jsonl")


def validate_trace(events: Sequence[TraceEvent]) -> None:
    live: set[int] = set()
    seen: set[int] = set()
    last = -math.inf
    for i, ev in enumerate(events):
        if ev.t < last:
            raise MalformedTrace(f"event {i} at t={ev.t} is out of order")
        last = ev.t
        if ev.kind is EventKind.CREATE:
            if ev.file in seen:
                raise MalformedTrace(f"event {i} recreates file {ev.file}")
            if ev.size <= 0:
                raise MalformedTrace(f"event {i} creates file {ev.file} with size {ev.size}")
            seen.add(ev.file)
            live.add(ev.file)
        elif ev.kind in (EventKind.READ, EventKind.DELETE):
            if ev.file not in live:
                raise MalformedTrace(f"event {i} references missing file {ev.file}")
            if ev.kind is EventKind.DELETE:
                live.discard(ev.file)


def replay(events: Sequence[TraceEvent], config: ClusterConfig | None = None,
           downgrade: DowngradePolicy | None = None, upgrade: UpgradePolicy | None = None, *,
           upgrade_interval: float = DEFAULT_UPGRADE_INTERVAL, measure_from: float = 0.0,
           log_events: bool = False,
           step_hook: Callable[[TraceEvent, ReplicationManager], None] | None = None) -> RunResult:
    """Replay ``events``; only jobs starting at or after ``measure_from`` are scored.

    The periodic upgrade check and the learners' sweeps run on a tick every
    ``upgrade_interval`` seconds of simulated time.  ``step_hook`` is called
    after each event has been fully applied, policies included.
    """
    validate_trace(events)
    config = config or ClusterConfig()
    cluster = Cluster(config, log_events=log_events)
    manager = ReplicationManager(cluster, downgrade, upgrade)
    tickers = [p for p in (downgrade, upgrade) if p is not None and hasattr(p, "on_tick")]
    mode = config.placement
    records: list[AccessRecord] = []
    jobs: dict[int, _Job] = {}
    job_order: list[int] = []
    reads: list[tuple[int, int, float, int, Any, Any, float]] = []
    next_tick = upgrade_interval if upgrade_interval > 0 else math.inf

    def tick(t: float) -> None:
        cluster.now = t
        for p in tickers:
            p.on_tick(t)
        manager.run_upgrade(None, None)

    for ev in events:
        while next_tick <= ev.t:
            tick(next_tick)
            next_tick += upgrade_interval
        cluster.now = ev.t
        if ev.kind is EventKind.JOB_START:
            jobs[ev.job] = _Job(ev.t, ev.cpu)
            job_order.append(ev.job)
        elif ev.kind is EventKind.CREATE:
            meta = FileMeta(ev.file, ev.size, ev.t, k=config.k)
            try:
                placed = cluster.create_file(meta, mode=mode)
            except SimError as exc:
                raise MalformedTrace(f"cannot place file {ev.file}: {exc}") from exc
            manager.after_create(placed)
        elif ev.kind is EventKind.READ:
            best = cluster.best_tier(ev.file)
            serving, service = cluster.read_file(ev.file, ev.t)
            size = cluster.files[ev.file].size
            job = jobs.get(ev.job)
            if job is None:
                job = jobs[ev.job] = _Job(ev.t)
                job_order.append(ev.job)
            job.reads.append(service)
            job.bytes += size
            reads.append((ev.job, ev.file, ev.t, size, serving[1], best, service))
            manager.run_upgrade(None, ev.file)
        elif ev.kind is EventKind.DELETE:
            cluster.delete_file(ev.file)
        if step_hook is not None:
            step_hook(ev, manager)

    job_records = []
    for jid in job_order:
        j = jobs[jid]
        if j.start < measure_from:
            continue
        io = sum(j.reads)
        job_records.append(JobRecord(jid, bin_of(j.bytes), j.start, j.cpu, io,
                                     (max(j.reads) if j.reads else 0.0) + j.cpu))
    for jid, fid, t, size, served, best, service in reads:
        j = jobs[jid]
        if j.start < measure_from:
            continue
        records.append(AccessRecord(fid, size, served, best, jid, bin_of(j.bytes), t, service))
    moves = [move_to_dict(m) for m in manager.moves if m.t >= measure_from]
    diag: dict[str, Any] = {
        "placement": mode.value if isinstance(mode, PlacementMode) else str(mode),
        "tier_aware": config.tier_aware,
        "measure_from": measure_from,
        "upgrade_interval": upgrade_interval,
        "warnings": len(manager.warnings),
        "downgrade": getattr(downgrade, "name", "none"),
        "upgrade": getattr(upgrade, "name", "none"),
    }
    for key, p in (("downgrade_model", downgrade), ("upgrade_model", upgrade)):
        fn = getattr(p, "diagnostics", None)
        if fn is not None:
            d = fn()
            # wall-clock timings stay out of the report so reruns are byte-identical
            d.pop("timeline", None)
            d.pop("train_seconds", None)
            diag[key] = d
    report = build_report(records, job_records, moves, diag)
    return RunResult(report, records, job_records, moves, cluster, manager)

