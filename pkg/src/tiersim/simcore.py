"""Discrete-event model of a cluster with memory/SSD/HDD tiers on every node.

Files are placed whole (one replica = one full copy on a ``(node, tier)``
pair).  The cluster keeps a replica map, per-tier byte accounting and a
ledger of background bytes moved between tiers.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import json
from collections import OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

import numpy as np
import yaml

MB = 1 << 20
GB = 1 << 30


class SimError(Exception):
    """Base class for simulator errors."""


class CapacityExhausted(SimError):
    pass


class DuplicateFile(SimError):
    pass


class UnknownFile(SimError):
    pass


class InvalidMove(SimError):
    pass


class LastReplica(SimError):
    pass


class TierKind(enum.IntEnum):
    """Storage tiers; a larger value is a higher (faster) tier."""

    HDD = 0
    SSD = 1
    MEMORY = 2

    @property
    def label(self) -> str:
        return {TierKind.HDD: "hdd", TierKind.SSD: "ssd", TierKind.MEMORY: "memory"}[self]

    def lower(self) -> "TierKind | None":
        return TierKind(self - 1) if self > TierKind.HDD else None

    def higher(self) -> "TierKind | None":
        return TierKind(self + 1) if self < TierKind.MEMORY else None

    @classmethod
    def parse(cls, name: str) -> "TierKind":
        aliases = {"mem": "memory", "ram": "memory"}
        name = aliases.get(name.lower(), name.lower())
        for t in cls:
            if t.label == name:
                return t
        raise ValueError(f"unknown tier {name!r}")


TIERS_HIGH_TO_LOW = (TierKind.MEMORY, TierKind.SSD, TierKind.HDD)


class PlacementMode(str, enum.Enum):
    HDFS_ALL_HDD = "hdfs"
    STATIC_TIERED = "tiered"
    ALL_HDD_UPGRADE = "all-hdd"


Placement = tuple[int, TierKind]


@dataclass
class TierState:
    capacity: int
    read_bw: float
    write_bw: float
    used: int = 0

    @property
    def free(self) -> int:
        return self.capacity - self.used


@dataclass
class Node:
    node_id: int
    tiers: dict[TierKind, TierState]


@dataclass
class FileMeta:
    file_id: int
    size: int
    created_at: float
    k: int = 12
    access_times: deque = field(default_factory=deque)
    total_access_count: int = 0

    def __post_init__(self) -> None:
        self.access_times = deque(self.access_times, maxlen=self.k)

    @property
    def last_access(self) -> float | None:
        return self.access_times[-1] if self.access_times else None

    @property
    def last_use(self) -> float:
        """Most recent of creation and last access (never-read files age from creation)."""
        return self.access_times[-1] if self.access_times else self.created_at

    def record_access(self, t: float) -> None:
        if self.access_times and t < self.access_times[-1]:
            raise ValueError("access times must be non-decreasing")
        self.access_times.append(t)
        self.total_access_count += 1

    def snapshot(self) -> "FileMeta":
        return FileMeta(self.file_id, self.size, self.created_at, self.k,
                        deque(self.access_times), self.total_access_count)


DEFAULT_TIERS = {
    # capacity bytes, read MB/s, write MB/s
    TierKind.MEMORY: (4 * GB, 2000.0, 1000.0),
    TierKind.SSD: (64 * GB, 500.0, 300.0),
    TierKind.HDD: (400 * GB, 150.0, 90.0),
}


@dataclass
class ClusterConfig:
    nodes: int = 11
    tiers: dict[TierKind, tuple[int, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_TIERS))
    k: int = 12
    seed: int = 0
    replication: int = 3
    placement: PlacementMode = PlacementMode.STATIC_TIERED
    tier_aware: bool = False

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "ClusterConfig":
        cfg = cls()
        data = dict(data or {})
        tiers = dict(cfg.tiers)
        for name, spec in (data.pop("tiers", None) or {}).items():
            kind = TierKind.parse(name)
            cap, rbw, wbw = tiers[kind]
            if "capacity_gb" in spec:
                cap = int(float(spec["capacity_gb"]) * GB)
            if "capacity" in spec:
                cap = int(spec["capacity"])
            rbw = float(spec.get("read_mbps", rbw))
            wbw = float(spec.get("write_mbps", wbw))
            tiers[kind] = (cap, rbw, wbw)
        cfg.tiers = tiers
        for key in ("nodes", "k", "seed", "replication"):
            if key in data:
                setattr(cfg, key, int(data.pop(key)))
        if "placement" in data:
            cfg.placement = PlacementMode(data.pop("placement"))
        if "tier_aware" in data:
            cfg.tier_aware = bool(data.pop("tier_aware"))
        if data:
            raise ValueError(f"unknown cluster config keys: {sorted(data)}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ClusterConfig":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": self.nodes,
            "k": self.k,
            "seed": self.seed,
            "replication": self.replication,
            "placement": self.placement.value,
            "tier_aware": self.tier_aware,
            "tiers": {
                t.label: {"capacity": cap, "read_mbps": r, "write_mbps": w}
                for t, (cap, r, w) in sorted(self.tiers.items(), reverse=True)
            },
        }


class SimClock:
    """Event queue ordered by (time, insertion sequence)."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, Any]] = []
        self._seq = itertools.count()

    def schedule(self, t: float, payload: Any) -> None:
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} before now={self.now}")
        heapq.heappush(self._heap, (t, next(self._seq), payload))

    def __len__(self) -> int:
        return len(self._heap)

    def pop(self) -> tuple[float, Any]:
        t, _, payload = heapq.heappop(self._heap)
        self.now = t
        return t, payload

    def drain(self) -> Iterator[tuple[float, Any]]:
        while self._heap:
            yield self.pop()


class Cluster:
    """Nodes, tiers and the replica map.

    Observers registered with :meth:`subscribe` receive ``on_create``,
    ``on_access`` and ``on_delete`` notifications, once per event.
    """

    def __init__(self, config: ClusterConfig | None = None, log_events: bool = False):
        self.config = config or ClusterConfig()
        self.nodes = [
            Node(i, {t: TierState(cap, rbw * MB, wbw * MB)
                     for t, (cap, rbw, wbw) in self.config.tiers.items()})
            for i in range(self.config.nodes)
        ]
        self.files: dict[int, FileMeta] = {}
        self.placements: dict[int, set[Placement]] = {}
        self.on_tier: dict[TierKind, set[int]] = {t: set() for t in TierKind}
        # least recently used first, keyed by FileMeta.last_use
        self.recency: OrderedDict[int, None] = OrderedDict()
        self.moved_bytes: dict[str, int] = {}
        self.rng = np.random.default_rng(self.config.seed)
        self.log_events = log_events
        self.events: list[dict[str, Any]] = []
        self._observers: list[Any] = []
        self.now = 0.0

    # -- observers -------------------------------------------------------
    def subscribe(self, observer: Any) -> None:
        self._observers.append(observer)

    def _notify(self, hook: str, *args: Any) -> None:
        for obs in self._observers:
            fn: Callable | None = getattr(obs, hook, None)
            if fn is not None:
                fn(*args)

    def _log(self, op: str, **fields: Any) -> None:
        if self.log_events:
            self.events.append({"seq": len(self.events), "t": self.now, "op": op, **fields})

    # -- queries ---------------------------------------------------------
    def tier(self, node: int, kind: TierKind) -> TierState:
        return self.nodes[node].tiers[kind]

    def tier_usage(self, kind: TierKind) -> float:
        used = sum(n.tiers[kind].used for n in self.nodes)
        cap = sum(n.tiers[kind].capacity for n in self.nodes)
        return used / cap if cap else 0.0

    def files_on(self, kind: TierKind, node: int | None = None) -> list[FileMeta]:
        ids = self.on_tier[kind]
        if node is None:
            return [self.files[f] for f in sorted(ids)]
        return [self.files[f] for f in sorted(ids) if (node, kind) in self.placements[f]]

    def best_tier(self, file_id: int) -> TierKind:
        return max(t for _, t in self.placements[file_id])

    def has_tier(self, file_id: int, kind: TierKind) -> bool:
        return file_id in self.on_tier[kind]

    def lru_order(self) -> Iterator[int]:
        return iter(self.recency)

    def mru_order(self) -> Iterator[int]:
        return reversed(self.recency)

    def total_used(self) -> int:
        return sum(ts.used for n in self.nodes for ts in n.tiers.values())

    # -- mutation helpers ------------------------------------------------
    def _add(self, file_id: int, placement: Placement) -> None:
        node, kind = placement
        ts = self.tier(node, kind)
        size = self.files[file_id].size
        if ts.free < size:
            raise CapacityExhausted(f"node {node} {kind.label} lacks {size} bytes")
        ts.used += size
        self.placements[file_id].add(placement)
        self.on_tier[kind].add(file_id)

    def _remove(self, file_id: int, placement: Placement) -> None:
        node, kind = placement
        self.placements[file_id].remove(placement)
        self.tier(node, kind).used -= self.files[file_id].size
        if not any(t == kind for _, t in self.placements[file_id]):
            self.on_tier[kind].discard(file_id)

    def _pick_node(self, kind: TierKind, size: int, exclude: Iterable[int]) -> int | None:
        excluded = set(exclude)
        best, best_free = None, -1
        for n in self.nodes:
            if n.node_id in excluded:
                continue
            free = n.tiers[kind].free
            if free >= size and free > best_free:
                best, best_free = n.node_id, free
        return best

    # -- operations ------------------------------------------------------
    def create_file(self, meta: FileMeta, replication: int | None = None,
                    mode: PlacementMode | None = None) -> set[Placement]:
        replication = replication or self.config.replication
        mode = mode or self.config.placement
        if meta.file_id in self.files:
            raise DuplicateFile(str(meta.file_id))
        if replication > len(self.nodes):
            raise CapacityExhausted("replication exceeds node count")
        if mode is PlacementMode.STATIC_TIERED:
            wanted = [TIERS_HIGH_TO_LOW[min(i, 2)] for i in range(replication)]
        else:
            wanted = [TierKind.HDD] * replication
        chosen: list[Placement] = []
        for want in wanted:
            kind: TierKind | None = want
            node = None
            while kind is not None:
                node = self._pick_node(kind, meta.size, (n for n, _ in chosen))
                if node is not None:
                    break
                kind = kind.lower()
            if node is None or kind is None:
                raise CapacityExhausted(f"no room for file {meta.file_id} ({meta.size} bytes)")
            chosen.append((node, kind))
        self.files[meta.file_id] = meta
        self.placements[meta.file_id] = set()
        for p in chosen:
            self._add(meta.file_id, p)
        self.recency[meta.file_id] = None
        self._log("create", file=meta.file_id, size=meta.size,
                  placements=[[n, t.label] for n, t in sorted(chosen)])
        self._notify("on_create", meta)
        return set(chosen)

    def read_file(self, file_id: int, at: float,
                  tier_aware: bool | None = None) -> tuple[Placement, float]:
        if file_id not in self.files:
            raise UnknownFile(str(file_id))
        tier_aware = self.config.tier_aware if tier_aware is None else tier_aware
        meta = self.files[file_id]
        options = sorted(self.placements[file_id], key=lambda p: (-p[1], p[0]))
        if tier_aware:
            serving = options[0]
        else:
            serving = options[int(self.rng.integers(len(options)))]
        service = meta.size / self.tier(*serving).read_bw
        meta.record_access(at)
        self.recency.move_to_end(file_id)
        self._log("read", file=file_id, node=serving[0], tier=serving[1].label,
                  service=service)
        self._notify("on_access", meta, at)
        return serving, service

    def move_replica(self, file_id: int, src: Placement, dst: Placement) -> None:
        if file_id not in self.files:
            raise UnknownFile(str(file_id))
        current = self.placements[file_id]
        if src not in current:
            raise InvalidMove(f"file {file_id} has no replica at {src}")
        if dst[0] != src[0] and any(n == dst[0] for n, _ in current):
            raise InvalidMove(f"node {dst[0]} already holds file {file_id}")
        if dst == src:
            raise InvalidMove("source equals destination")
        size = self.files[file_id].size
        if self.tier(*dst).free < size:
            raise CapacityExhausted(f"node {dst[0]} {dst[1].label} lacks {size} bytes")
        self._remove(file_id, src)
        self._add(file_id, dst)
        key = f"{src[1].label}->{dst[1].label}"
        self.moved_bytes[key] = self.moved_bytes.get(key, 0) + size
        self._log("move", file=file_id, src=[src[0], src[1].label], dst=[dst[0], dst[1].label])

    def delete_replica(self, file_id: int, placement: Placement) -> None:
        if file_id not in self.files:
            raise UnknownFile(str(file_id))
        if placement not in self.placements[file_id]:
            raise InvalidMove(f"file {file_id} has no replica at {placement}")
        if len(self.placements[file_id]) < 2:
            raise LastReplica(str(file_id))
        self._remove(file_id, placement)
        key = f"{placement[1].label}->deleted"
        self.moved_bytes[key] = self.moved_bytes.get(key, 0) + self.files[file_id].size
        self._log("delete_replica", file=file_id, node=placement[0], tier=placement[1].label)

    def delete_file(self, file_id: int) -> None:
        if file_id not in self.files:
            raise UnknownFile(str(file_id))
        for p in sorted(self.placements[file_id]):
            self._remove(file_id, p)
        meta = self.files.pop(file_id)
        del self.placements[file_id]
        self.recency.pop(file_id, None)
        self._log("delete", file=file_id)
        self._notify("on_delete", meta)

    def write_event_log(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
