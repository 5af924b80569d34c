"""Synthetic job traces shaped like production Hadoop workloads.

Each job reads one input file and writes one output file.  Inputs come from
three sources, in priority order:

1. outputs of earlier jobs that are still waiting for their first read
   (oldest first, same size bin);
2. re-reads of already-consumed files, Zipf-distributed over popularity rank;
3. freshly ingested files, created just before the job starts.

A share of outputs is flagged as never read again so that the fraction of
created-but-unread files hits ``never_reaccessed_frac``.
"""
from __future__ import annotations

import bisect
import heapq
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .simcore import GB, MB

HOUR = 3600.0


class SpecInvalid(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class EventKind(str, Enum):
    JOB_START = "JobStart"
    CREATE = "Create"
    READ = "Read"
    DELETE = "Delete"


@dataclass(frozen=True)
class TraceEvent:
    t: float
    kind: EventKind
    job: int = -1
    file: int = -1
    size: int = 0
    cpu: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"t": self.t, "kind": self.kind.value, "job": self.job, "file": self.file,
                "size": self.size, "cpu": self.cpu}


@dataclass(frozen=True)
class BinSpec:
    label: str
    lo: int
    hi: int
    fraction: float


BIN_EDGES = (
    ("A", 0, 128 * MB),
    ("B", 128 * MB, 512 * MB),
    ("C", 512 * MB, 1 * GB),
    ("D", 1 * GB, 2 * GB),
    ("E", 2 * GB, 5 * GB),
    ("F", 5 * GB, 10 * GB),
)
# sizes in bin A are drawn from [1MB, 128MB]; a zero-byte file has no bandwidth cost
MIN_FILE_SIZE = 1 * MB


def make_bins(fractions: Sequence[float]) -> tuple[BinSpec, ...]:
    return tuple(BinSpec(lbl, lo, hi, f) for (lbl, lo, hi), f in zip(BIN_EDGES, fractions))


def bin_of(size: int) -> str:
    for lbl, lo, hi in BIN_EDGES:
        if size <= hi:
            return lbl
    return BIN_EDGES[-1][0]


@dataclass(frozen=True)
class WorkloadSpec:
    job_count: int = 1000
    duration: float = 6 * HOUR
    bins: tuple[BinSpec, ...] = field(default_factory=lambda: make_bins(
        (0.744, 0.162, 0.040, 0.030, 0.016, 0.008)))
    popularity_zipf_s: float = 1.1
    popularity: str = "recency"
    never_reaccessed_frac: float = 0.23
    reuse_prob: float = 0.75
    cpu_range: tuple[float, float] = (10.0, 300.0)
    size_scale: float = 1.0
    seed: int = 0
    name: str = "custom"

    def validate(self) -> None:
        if self.job_count < 0 or self.duration <= 0:
            raise SpecInvalid("job_count must be >= 0 and duration > 0")
        if not self.bins:
            raise SpecInvalid("at least one bin required")
        total = sum(b.fraction for b in self.bins)
        if abs(total - 1.0) > 1e-9:
            raise SpecInvalid(f"bin fractions sum to {total}, not 1")
        if any(b.fraction < 0 or b.hi <= b.lo for b in self.bins):
            raise SpecInvalid("bins need non-negative fractions and lo < hi")
        if not 0 <= self.never_reaccessed_frac < 1:
            raise SpecInvalid("never_reaccessed_frac must lie in [0, 1)")
        if self.popularity not in ("static", "recency"):
            raise SpecInvalid("popularity must be 'static' or 'recency'")
        if not 0 <= self.reuse_prob <= 1:
            raise SpecInvalid("reuse_prob must lie in [0, 1]")
        if self.popularity_zipf_s <= 0 or self.size_scale <= 0:
            raise SpecInvalid("zipf exponent and size scale must be positive")
        lo, hi = self.cpu_range
        if not 0 < lo <= hi:
            raise SpecInvalid("cpu_range must satisfy 0 < lo <= hi")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["bins"] = [asdict(b) for b in self.bins]
        d["cpu_range"] = list(self.cpu_range)
        return d

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "WorkloadSpec":
        data = dict(data)
        base = preset(data.pop("preset")) if "preset" in data else cls()
        if "bins" in data:
            bins = data.pop("bins")
            if bins and isinstance(bins[0], dict):
                data["bins"] = tuple(BinSpec(b["label"], int(b["lo"]), int(b["hi"]), float(b["fraction"]))
                                     for b in bins)
            else:
                data["bins"] = make_bins([float(f) for f in bins])
        if "cpu_range" in data:
            data["cpu_range"] = tuple(float(v) for v in data["cpu_range"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecInvalid(f"unknown workload keys: {sorted(unknown)}")
        spec = replace(base, **data)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "WorkloadSpec":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh) or {})


PRESETS: dict[str, WorkloadSpec] = {
    "fb": WorkloadSpec(name="fb"),
    "cmu": WorkloadSpec(bins=make_bins((0.634, 0.291, 0.009, 0.049, 0.015, 0.002)),
                        never_reaccessed_frac=0.18, name="cmu"),
}


def preset(name: str, **overrides: Any) -> WorkloadSpec:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise SpecInvalid(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(spec, **overrides) if overrides else spec


class _Pool:
    """Consumed files of one bin in popularity-rank order.

    ``static``: a file gets a random rank when first consumed and keeps it.
    ``recency``: rank is recency of use, most recent first.
    """

    def __init__(self, mode: str, rng: np.random.Generator) -> None:
        self.mode = mode
        self.rng = rng
        self.files: list[int] = []
        self._keys: list[float] = []
        self._known: set[int] = set()

    def touch(self, fid: int) -> None:
        if self.mode == "recency":
            if fid in self._known:
                self.files.remove(fid)
            self.files.insert(0, fid)
            self._known.add(fid)
        elif fid not in self._known:
            key = float(self.rng.random())
            i = bisect.bisect(self._keys, key)
            self._keys.insert(i, key)
            self.files.insert(i, fid)
            self._known.add(fid)


def _zipf_rank(rng: np.random.Generator, n: int, s: float, cache: dict) -> int:
    cdf = cache.get(n)
    if cdf is None:
        w = np.arange(1, n + 1, dtype=float) ** -s
        cdf = np.cumsum(w / w.sum())
        cache[n] = cdf
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), n - 1))


def generate(spec: WorkloadSpec, *, file_offset: int = 0, job_offset: int = 0,
             t_offset: float = 0.0) -> list[TraceEvent]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = [b.label for b in spec.bins]
    fracs = np.array([b.fraction for b in spec.bins])
    fracs = fracs / fracs.sum()
    bins = {b.label: b for b in spec.bins}
    cpu_lo, cpu_hi = spec.cpu_range

    def draw_size(label: str) -> int:
        b = bins[label]
        lo = max(b.lo, MIN_FILE_SIZE)
        v = math.exp(rng.uniform(math.log(lo), math.log(b.hi)))
        return max(1, int(v * spec.size_scale))

    # (created_at, file_id) heaps of outputs awaiting their first read
    owed: dict[str, list[tuple[float, int]]] = {lbl: [] for lbl in labels}
    pools: dict[str, _Pool] = {lbl: _Pool(spec.popularity, rng) for lbl in labels}
    zipf_cache: dict[int, np.ndarray] = {}
    sizes: dict[int, int] = {}
    events: list[tuple[float, int, TraceEvent]] = []
    seq = 0
    next_file = file_offset
    created = flagged = 0

    def emit(ev: TraceEvent) -> None:
        nonlocal seq
        events.append((ev.t, seq, ev))
        seq += 1

    def new_file(t: float, label: str) -> int:
        nonlocal next_file, created
        fid = next_file
        next_file += 1
        created += 1
        sizes[fid] = draw_size(label)
        emit(TraceEvent(t, EventKind.CREATE, file=fid, size=sizes[fid]))
        return fid

    slot = spec.duration / spec.job_count if spec.job_count else 0.0
    for j in range(spec.job_count):
        t = t_offset + (j + rng.random()) * slot
        job = job_offset + j
        label = labels[int(rng.choice(len(labels), p=fracs))]
        cpu = float(math.exp(rng.uniform(math.log(cpu_lo), math.log(cpu_hi))))
        emit(TraceEvent(t, EventKind.JOB_START, job=job, cpu=cpu))
        pool = pools[label]
        if owed[label] and owed[label][0][0] < t:
            fid = heapq.heappop(owed[label])[1]
        elif pool.files and rng.random() < spec.reuse_prob:
            fid = pool.files[_zipf_rank(rng, len(pool.files), spec.popularity_zipf_s, zipf_cache)]
        else:
            fid = new_file(t, label)
        emit(TraceEvent(t, EventKind.READ, job=job, file=fid, size=sizes[fid]))
        pool.touch(fid)
        out_label = labels[int(rng.choice(len(labels), p=fracs))]
        out = new_file(t + cpu, out_label)
        # unread outputs still waiting in a queue count toward the unread share
        outstanding = sum(len(q) for q in owed.values())
        if flagged + outstanding < spec.never_reaccessed_frac * created:
            flagged += 1
        else:
            heapq.heappush(owed[out_label], (t + cpu, out))
    events.sort(key=lambda e: (e[0], e[1]))
    return [e[2] for e in events]


def generate_switching(first: WorkloadSpec, second: WorkloadSpec) -> list[TraceEvent]:
    """Run ``first`` then ``second`` back to back with disjoint file and job ids."""
    a = generate(first)
    files = max((e.file for e in a), default=-1) + 1
    b = generate(second, file_offset=files, job_offset=first.job_count, t_offset=first.duration)
    return a + b


def _coerce(obj: Any, lineno: int) -> TraceEvent:
    if not isinstance(obj, dict):
        raise ParseError(lineno, "expected a JSON object")
    try:
        kind = EventKind(obj["kind"])
    except KeyError:
        raise ParseError(lineno, "missing field 'kind'") from None
    except ValueError:
        raise ParseError(lineno, f"unknown kind {obj['kind']!r}") from None
    try:
        return TraceEvent(float(obj["t"]), kind, int(obj.get("job", -1)), int(obj.get("file", -1)),
                          int(obj.get("size", 0)), float(obj.get("cpu", 0.0)))
    except KeyError:
        raise ParseError(lineno, "missing field 't'") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(lineno, str(exc)) from None


def load_trace(path: str | Path) -> list[TraceEvent]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from None
            out.append(_coerce(obj, lineno))
    return out


def save_trace(events: Iterable[TraceEvent], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict()) + "\n")


@dataclass
class TraceStats:
    jobs: int
    files: int
    bin_share: dict[str, float]
    never_read_frac: float
    over_5_reads_frac: float
    total_bytes: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def trace_stats(events: Sequence[TraceEvent]) -> TraceStats:
    reads: dict[int, int] = {}
    sizes: dict[int, int] = {}
    job_bins: dict[str, int] = {lbl: 0 for lbl, _, _ in BIN_EDGES}
    jobs = 0
    for ev in events:
        if ev.kind is EventKind.CREATE:
            sizes[ev.file] = ev.size
            reads.setdefault(ev.file, 0)
        elif ev.kind is EventKind.READ:
            reads[ev.file] = reads.get(ev.file, 0) + 1
            job_bins[bin_of(sizes[ev.file])] += 1
        elif ev.kind is EventKind.JOB_START:
            jobs += 1
    n = len(sizes)
    total_reads = sum(job_bins.values())
    return TraceStats(
        jobs=jobs,
        files=n,
        bin_share={k: (v / total_reads if total_reads else 0.0) for k, v in job_bins.items()},
        never_read_frac=(sum(1 for v in reads.values() if v == 0) / n) if n else 0.0,
        over_5_reads_frac=(sum(1 for v in reads.values() if v > 5) / n) if n else 0.0,
        total_bytes=sum(sizes.values()),
    )
