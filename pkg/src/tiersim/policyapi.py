"""Decision-point contract for tier policies and the manager that drives them.

A downgrade policy answers four questions for a tier: should we start,
which file goes, where does it go, should we stop.  Upgrade policies answer
the mirror-image questions.  :class:`ReplicationManager` runs both loops
against a :class:`~tiersim.simcore.Cluster`.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .simcore import Cluster, FileMeta, Placement, TierKind

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyThresholds:
    start_downgrade_frac: float = 0.90
    stop_downgrade_frac: float = 0.85

    def __post_init__(self) -> None:
        if not 0 < self.stop_downgrade_frac < self.start_downgrade_frac <= 1:
            raise ValueError("need 0 < stop < start <= 1")


@dataclass(frozen=True)
class PolicyDecision:
    start: bool
    selected_file: int | None = None
    target_tier: TierKind | None = None
    stop: bool = True

    def __post_init__(self) -> None:
        if self.start and not self.stop and self.selected_file is None:
            raise ValueError("an active decision must name a file")


@dataclass(frozen=True)
class Move:
    file_id: int
    src: Placement
    dst: Placement | None  # None means the replica was deleted
    direction: str
    t: float
    size: int


class DowngradePolicy:
    name = "base"

    def __init__(self, thresholds: PolicyThresholds | None = None):
        self.thresholds = thresholds or PolicyThresholds()
        self.cluster: Cluster | None = None
        self.manager: ReplicationManager | None = None

    def bind(self, cluster: Cluster, manager: "ReplicationManager") -> None:
        self.cluster = cluster
        self.manager = manager

    def start_downgrade(self, tier: TierKind) -> bool:
        return self.cluster.tier_usage(tier) > self.thresholds.start_downgrade_frac

    def select_file_to_downgrade(self, tier: TierKind, candidates: Sequence[FileMeta]) -> int:
        raise NotImplementedError

    def select_downgrade_tier(self, file_id: int, src: Placement) -> Placement | None:
        return self.manager.select_target_tier(file_id, "down", src)

    def stop_downgrade(self, tier: TierKind) -> bool:
        return self.cluster.tier_usage(tier) <= self.thresholds.stop_downgrade_frac


class UpgradePolicy:
    name = "base"

    def __init__(self) -> None:
        self.cluster: Cluster | None = None
        self.manager: ReplicationManager | None = None

    def bind(self, cluster: Cluster, manager: "ReplicationManager") -> None:
        self.cluster = cluster
        self.manager = manager

    def start_upgrade(self, tier: TierKind | None, accessed: int | None) -> bool:
        raise NotImplementedError

    def select_file_to_upgrade(self, tier: TierKind | None) -> int | None:
        raise NotImplementedError

    def select_upgrade_tier(self, file_id: int, src: Placement) -> Placement | None:
        return self.manager.select_target_tier(file_id, "up", src)

    def stop_upgrade(self, tier: TierKind | None) -> bool:
        raise NotImplementedError


class _LruFallback(DowngradePolicy):
    name = "lru"

    def select_file_to_downgrade(self, tier, candidates):
        return min(candidates, key=lambda m: (m.last_use, m.file_id)).file_id


class ReplicationManager:
    """Runs the downgrade and upgrade loops and records every executed move."""

    def __init__(self, cluster: Cluster, downgrade: DowngradePolicy | None = None,
                 upgrade: UpgradePolicy | None = None):
        self.cluster = cluster
        self.downgrade = downgrade
        self.upgrade = upgrade
        # evictions needed to make room for an upgrade follow the downgrade
        # policy's ordering; without one, LRU order is used
        self.evictor = downgrade or _LruFallback()
        self.evictor.bind(cluster, self)
        if upgrade is not None:
            upgrade.bind(cluster, self)
        for p in (downgrade, upgrade):
            if p is not None:
                cluster.subscribe(p)
        self.moves: list[Move] = []
        self.warnings: list[str] = []
        self._protected: set[int] = set()

    # -- placement heuristic ---------------------------------------------
    def select_target_tier(self, file_id: int, direction: str, src: Placement) -> Placement | None:
        """Tier instance with the most free bytes; ties go to the lowest node id.

        Downgrades look one tier below ``src``; upgrades always target memory.
        Nodes already holding the file are excluded except the source node.
        """
        c = self.cluster
        size = c.files[file_id].size
        if direction == "down":
            kind = src[1].lower()
            if kind is None:
                return None
        elif direction == "up":
            kind = TierKind.MEMORY
            if src[1] >= kind:
                return None
        else:
            raise ValueError(direction)
        holders = {n for n, _ in c.placements[file_id]} - {src[0]}
        best, best_free = None, -1
        for node in c.nodes:
            if node.node_id in holders:
                continue
            free = node.tiers[kind].free
            if free >= size and free > best_free:
                best, best_free = node.node_id, free
        return None if best is None else (best, kind)

    # -- helpers -----------------------------------------------------------
    def _record(self, move: Move) -> None:
        self.moves.append(move)

    def _warn(self, msg: str) -> None:
        log.debug(msg)  # counted in the report; too frequent for stderr
        self.warnings.append(msg)

    def _source_on(self, file_id: int, tier: TierKind, node: int | None = None) -> Placement:
        opts = [p for p in self.cluster.placements[file_id]
                if p[1] == tier and (node is None or p[0] == node)]
        # the fullest node gives up its copy first
        return min(opts, key=lambda p: (self.cluster.tier(*p).free, p[0]))

    def _candidates(self, tier: TierKind, node: int | None, skip: set[int]) -> list[FileMeta]:
        c = self.cluster
        out = []
        for m in c.files_on(tier, node):
            fid = m.file_id
            if fid in skip or fid in self._protected:
                continue
            if tier is TierKind.HDD and len(c.placements[fid]) < 2:
                continue
            out.append(m)
        return out

    def _downgrade_one(self, policy: DowngradePolicy, file_id: int, src: Placement) -> bool:
        c = self.cluster
        dst = policy.select_downgrade_tier(file_id, src)
        size = c.files[file_id].size
        if dst is not None:
            c.move_replica(file_id, src, dst)
            self._record(Move(file_id, src, dst, "down", c.now, size))
            return True
        if len(c.placements[file_id]) >= 2:
            c.delete_replica(file_id, src)
            self._record(Move(file_id, src, None, "down", c.now, size))
            return True
        self._warn(f"file {file_id} has no downgrade target from {src[1].label}; skipped")
        return False

    # -- downgrade loop ------------------------------------------------------
    def run_downgrade(self, tier: TierKind) -> list[Move]:
        policy = self.downgrade
        if policy is None or not policy.start_downgrade(tier):
            return []
        done: list[Move] = []
        skip: set[int] = set()
        while True:
            cands = self._candidates(tier, None, skip)
            if not cands:
                self._warn(f"no downgrade candidates left on {tier.label}")
                break
            fid = policy.select_file_to_downgrade(tier, cands)
            src = self._source_on(fid, tier)
            if self._downgrade_one(policy, fid, src):
                done.append(self.moves[-1])
            else:
                skip.add(fid)
                continue
            if policy.stop_downgrade(tier):
                break
        # the tier below just received data and may need its own pass
        lower = tier.lower()
        if done and lower is not None and any(m.dst is not None for m in done):
            done.extend(self.run_downgrade(lower))
        return done

    # -- room making for upgrades --------------------------------------------
    def _upgrade_node(self, file_id: int, src: Placement) -> int | None:
        """Memory node an upgrade would land on once room is made."""
        c = self.cluster
        size = c.files[file_id].size
        holders = {n for n, _ in c.placements[file_id]} - {src[0]}
        best, best_free = None, -1
        for node in c.nodes:
            ts = node.tiers[TierKind.MEMORY]
            if node.node_id in holders or ts.capacity < size:
                continue
            if ts.free > best_free:
                best, best_free = node.node_id, ts.free
        return best

    def upgrade_source(self, file_id: int) -> Placement:
        return min(self.cluster.placements[file_id], key=lambda p: (p[1], p[0]))

    def upgrade_headroom(self, file_id: int) -> int:
        node = self._upgrade_node(file_id, self.upgrade_source(file_id))
        return -1 if node is None else self.cluster.tier(node, TierKind.MEMORY).free

    def preview_evictions(self, file_id: int) -> list[int] | None:
        """Files the evictor would push out of memory to fit ``file_id``.

        Returns None when no amount of eviction makes room.
        """
        c = self.cluster
        node = self._upgrade_node(file_id, self.upgrade_source(file_id))
        if node is None:
            return None
        need = c.files[file_id].size - c.tier(node, TierKind.MEMORY).free
        cands = self._candidates(TierKind.MEMORY, node, {file_id})
        victims: list[int] = []
        while need > 0:
            if not cands:
                return None
            fid = self.evictor.select_file_to_downgrade(TierKind.MEMORY, cands)
            victims.append(fid)
            need -= c.files[fid].size
            cands = [m for m in cands if m.file_id != fid]
        return victims

    def make_room(self, file_id: int, src: Placement) -> bool:
        c = self.cluster
        node = self._upgrade_node(file_id, src)
        if node is None:
            return False
        size = c.files[file_id].size
        ts = c.tier(node, TierKind.MEMORY)
        skip = {file_id}
        while ts.free < size:
            cands = self._candidates(TierKind.MEMORY, node, skip)
            if not cands:
                return False
            fid = self.evictor.select_file_to_downgrade(TierKind.MEMORY, cands)
            if not self._downgrade_one(self.evictor, fid, self._source_on(fid, TierKind.MEMORY, node)):
                skip.add(fid)
        return True

    # -- upgrade loop ---------------------------------------------------------
    def run_upgrade(self, tier: TierKind | None = None, accessed: int | None = None) -> list[Move]:
        policy = self.upgrade
        if policy is None or not policy.start_upgrade(tier, accessed):
            return []
        c = self.cluster
        done: list[Move] = []
        self._protected = set()
        try:
            while True:
                fid = policy.select_file_to_upgrade(tier)
                if fid is None:
                    break
                if fid in c.files and not c.has_tier(fid, TierKind.MEMORY):
                    src = self.upgrade_source(fid)
                    dst = policy.select_upgrade_tier(fid, src)
                    if dst is None and self.make_room(fid, src):
                        dst = policy.select_upgrade_tier(fid, src)
                    if dst is None:
                        self._warn(f"no memory room for file {fid}; upgrade skipped")
                    else:
                        c.move_replica(fid, src, dst)
                        mv = Move(fid, src, dst, "up", c.now, c.files[fid].size)
                        self._record(mv)
                        done.append(mv)
                        self._protected.add(fid)
                if policy.stop_upgrade(tier):
                    break
        finally:
            self._protected = set()
        if done:
            self.run_downgrade(TierKind.MEMORY)
        return done

    def after_create(self, placements: set[Placement]) -> None:
        for kind in sorted({k for _, k in placements}, reverse=True):
            self.run_downgrade(kind)
