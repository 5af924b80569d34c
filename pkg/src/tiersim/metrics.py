"""Hit ratios, prefetch quality and per-bin job cost aggregates.

Every number in a :class:`RunReport` is a pure function of the access log,
the job log and the move log, so reports can be rebuilt from the JSON Lines
files a run writes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .simcore import TierKind
from .workload import BIN_EDGES

BIN_LABELS = tuple(lbl for lbl, _, _ in BIN_EDGES)


class MetricsError(ValueError):
    pass


class Empty(MetricsError):
    pass


class BinMismatch(MetricsError):
    pass


@dataclass(frozen=True)
class AccessRecord:
    file_id: int
    bytes: int
    served_tier: TierKind
    best_tier: TierKind
    job: int
    bin: str
    t: float
    service: float

    def __post_init__(self) -> None:
        if self.bytes <= 0:
            raise MetricsError("access records need a positive byte count")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["served_tier"] = self.served_tier.label
        d["best_tier"] = self.best_tier.label
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AccessRecord":
        return cls(int(d["file_id"]), int(d["bytes"]), TierKind.parse(d["served_tier"]),
                   TierKind.parse(d["best_tier"]), int(d["job"]), d["bin"], float(d["t"]),
                   float(d["service"]))


@dataclass(frozen=True)
class JobRecord:
    job: int
    bin: str
    start: float
    cpu: float
    io_time: float
    completion: float

    @property
    def machine_time(self) -> float:
        return self.io_time + self.cpu

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "JobRecord":
        return cls(int(d["job"]), d["bin"], float(d["start"]), float(d["cpu"]),
                   float(d["io_time"]), float(d["completion"]))


def _tier_of(rec: AccessRecord, basis: str) -> TierKind:
    if basis == "access":
        return rec.served_tier
    if basis == "location":
        return rec.best_tier
    raise ValueError(f"basis must be 'access' or 'location', not {basis!r}")


def hit_ratio(records: Sequence[AccessRecord], tier: TierKind = TierKind.MEMORY,
              basis: str = "access") -> float:
    if not records:
        raise Empty("no access records")
    return sum(1 for r in records if _tier_of(r, basis) == tier) / len(records)


def byte_hit_ratio(records: Sequence[AccessRecord], tier: TierKind = TierKind.MEMORY,
                   basis: str = "access") -> float:
    if not records:
        raise Empty("no access records")
    total = sum(r.bytes for r in records)
    return sum(r.bytes for r in records if _tier_of(r, basis) == tier) / total


def byte_accuracy_coverage(upgraded_bytes: int, records: Sequence[AccessRecord]
                           ) -> tuple[float | None, float]:
    """(BAc, BCo); BAc is None without upgrades, BCo is 0 without reads."""
    mem = sum(r.bytes for r in records if r.served_tier is TierKind.MEMORY)
    total = sum(r.bytes for r in records)
    bac = mem / upgraded_bytes if upgraded_bytes > 0 else None
    bco = mem / total if total > 0 else 0.0
    return bac, bco


def tier_distribution(records: Sequence[AccessRecord], basis: str = "access"
                      ) -> dict[str, dict[str, float]]:
    """Per bin, the fraction of accesses served by each tier."""
    out: dict[str, dict[str, float]] = {}
    for lbl in BIN_LABELS:
        recs = [r for r in records if r.bin == lbl]
        if not recs:
            continue
        out[lbl] = {t.label: sum(1 for r in recs if _tier_of(r, basis) == t) / len(recs)
                    for t in TierKind}
    return out


@dataclass(frozen=True)
class BinAggregate:
    jobs: int
    mean_completion: float
    machine_time: float
    io_time: float


def efficiency_and_completion(jobs: Iterable[JobRecord]) -> dict[str, BinAggregate]:
    groups: dict[str, list[JobRecord]] = {}
    for j in jobs:
        if j.bin not in BIN_LABELS:
            raise BinMismatch(f"job {j.job} has unknown bin {j.bin!r}")
        groups.setdefault(j.bin, []).append(j)
    out = {}
    for lbl in BIN_LABELS:
        g = groups.get(lbl)
        if g:
            out[lbl] = BinAggregate(len(g), sum(j.completion for j in g) / len(g),
                                    sum(j.machine_time for j in g), sum(j.io_time for j in g))
    return out


def percent_reduction(run: dict[str, BinAggregate], baseline: dict[str, BinAggregate],
                      attr: str = "mean_completion") -> dict[str, float]:
    """Per bin, how much lower ``attr`` is than in the baseline, in percent."""
    if set(run) != set(baseline):
        raise BinMismatch(f"bins differ: {sorted(run)} vs {sorted(baseline)}")
    out = {}
    for lbl in run:
        base = getattr(baseline[lbl], attr)
        out[lbl] = 0.0 if base == 0 else 100.0 * (base - getattr(run[lbl], attr)) / base
    return out


@dataclass
class RunReport:
    accesses: int = 0
    jobs: int = 0
    hr_access: float | None = None
    hr_location: float | None = None
    bhr_access: float | None = None
    bhr_location: float | None = None
    bac: float | None = None
    bco: float | None = None
    memory_read_bytes: int = 0
    total_read_bytes: int = 0
    upgraded_bytes: int = 0
    downgraded_bytes: int = 0
    moved_bytes: dict[str, int] = field(default_factory=dict)
    bins: dict[str, dict[str, float]] = field(default_factory=dict)
    tier_distribution: dict[str, dict[str, float]] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_rows(self) -> list[tuple[str, str, Any]]:
        rows: list[tuple[str, str, Any]] = []
        for key in ("accesses", "jobs", "hr_access", "hr_location", "bhr_access", "bhr_location",
                    "bac", "bco", "memory_read_bytes", "total_read_bytes", "upgraded_bytes",
                    "downgraded_bytes"):
            rows.append(("all", key, getattr(self, key)))
        for lbl, agg in self.bins.items():
            for key, val in agg.items():
                rows.append((lbl, key, val))
        for lbl, dist in self.tier_distribution.items():
            for tier, frac in dist.items():
                rows.append((lbl, f"share_{tier}", frac))
        return rows

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("bin", "metric", "value"))
            for row in self.csv_rows():
                w.writerow(["" if v is None else v for v in row])


def build_report(records: Sequence[AccessRecord], jobs: Sequence[JobRecord],
                 moves: Sequence[dict[str, Any]], diagnostics: dict[str, Any] | None = None
                 ) -> RunReport:
    """``moves`` are plain dicts with at least ``direction``, ``size``, ``src`` and ``dst``."""
    upgraded = sum(m["size"] for m in moves
                   if m["direction"] == "up" and m["dst"] is not None and m["dst"][1] == "memory")
    downgraded = sum(m["size"] for m in moves if m["direction"] == "down")
    moved: dict[str, int] = {}
    for m in moves:
        key = f"{m['src'][1]}->{m['dst'][1] if m['dst'] is not None else 'deleted'}"
        moved[key] = moved.get(key, 0) + m["size"]
    rep = RunReport(accesses=len(records), jobs=len(jobs), upgraded_bytes=upgraded,
                    downgraded_bytes=downgraded, moved_bytes=dict(sorted(moved.items())),
                    diagnostics=diagnostics or {})
    rep.memory_read_bytes = sum(r.bytes for r in records if r.served_tier is TierKind.MEMORY)
    rep.total_read_bytes = sum(r.bytes for r in records)
    if records:
        rep.hr_access = hit_ratio(records, basis="access")
        rep.hr_location = hit_ratio(records, basis="location")
        rep.bhr_access = byte_hit_ratio(records, basis="access")
        rep.bhr_location = byte_hit_ratio(records, basis="location")
    rep.bac, rep.bco = byte_accuracy_coverage(upgraded, records)
    rep.bins = {lbl: asdict(agg) for lbl, agg in efficiency_and_completion(jobs).items()}
    rep.tier_distribution = tier_distribution(records)
    return rep


def write_jsonl(rows: Iterable[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def report_from_logs(access_log: str | Path, job_log: str | Path, move_log: str | Path,
                     diagnostics: dict[str, Any] | None = None) -> RunReport:
    records = [AccessRecord.from_dict(d) for d in read_jsonl(access_log)]
    jobs = [JobRecord.from_dict(d) for d in read_jsonl(job_log)]
    return build_report(records, jobs, read_jsonl(move_log), diagnostics)
