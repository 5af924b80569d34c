import pytest

from conftest import meta, small_config
from tiersim.classic import ClassicDowngrade, ClassicUpgrade
from tiersim.policyapi import PolicyDecision, PolicyThresholds, ReplicationManager
from tiersim.simcore import GB, MB, Cluster, PlacementMode, TierKind


def test_thresholds_validation():
    assert PolicyThresholds().start_downgrade_frac == 0.90
    with pytest.raises(ValueError):
        PolicyThresholds(0.8, 0.9)
    with pytest.raises(ValueError):
        PolicyDecision(start=True, stop=False)


def _fill_memory(c, frac, size=100 * MB, start_id=0):
    """Single-replica files on node memories until usage reaches ``frac``."""
    fid = start_id
    cap = sum(n.tiers[TierKind.MEMORY].capacity for n in c.nodes)
    while c.tier_usage(TierKind.MEMORY) + size / cap <= frac + 1e-12:
        m = meta(fid, size, float(fid))
        c.create_file(m, replication=1)
        fid += 1
    return fid


def test_no_moves_below_start_threshold():
    c = Cluster(small_config(nodes=1, mem=1 * GB))
    mgr = ReplicationManager(c, ClassicDowngrade("lru"))
    _fill_memory(c, 0.89, size=10 * MB)
    assert c.tier_usage(TierKind.MEMORY) <= 0.90
    assert mgr.run_downgrade(TierKind.MEMORY) == []


def test_downgrade_runs_until_stop_threshold():
    c = Cluster(small_config(nodes=1, mem=1 * GB))
    mgr = ReplicationManager(c, ClassicDowngrade("lru"))
    _fill_memory(c, 0.92, size=10 * MB)
    assert c.tier_usage(TierKind.MEMORY) > 0.90
    moves = mgr.run_downgrade(TierKind.MEMORY)
    assert moves
    assert c.tier_usage(TierKind.MEMORY) <= 0.85
    # least recently used files leave first
    assert [m.file_id for m in moves if m.src[1] is TierKind.MEMORY][:3] == [0, 1, 2]
    # one fewer move would have left usage above the stop threshold
    cap = c.nodes[0].tiers[TierKind.MEMORY].capacity
    assert c.tier_usage(TierKind.MEMORY) + 10 * MB / cap > 0.85


def test_empty_candidate_set_terminates():
    c = Cluster(small_config(nodes=1, hdd=1 * GB))
    mgr = ReplicationManager(c, ClassicDowngrade("lru"))
    for f in range(93):
        c.create_file(meta(f, 10 * MB), replication=1, mode=PlacementMode.HDFS_ALL_HDD)
    assert c.tier_usage(TierKind.HDD) > 0.9
    # single-replica files are exempt from HDD downgrade
    assert mgr.run_downgrade(TierKind.HDD) == []
    assert mgr.warnings


def test_hdd_downgrade_deletes_extra_replicas():
    c = Cluster(small_config(nodes=3, hdd=1 * GB))
    mgr = ReplicationManager(c, ClassicDowngrade("lru"))
    for f in range(31):
        c.create_file(meta(f, 30 * MB, float(f)), mode=PlacementMode.HDFS_ALL_HDD)
    assert c.tier_usage(TierKind.HDD) > 0.9
    moves = mgr.run_downgrade(TierKind.HDD)
    assert moves and all(m.dst is None for m in moves)
    assert all(len(p) >= 1 for p in c.placements.values())
    assert c.tier_usage(TierKind.HDD) <= 0.85


def test_select_target_tier_max_free_and_ties():
    c = Cluster(small_config(nodes=4))
    mgr = ReplicationManager(c)
    c.create_file(meta(1, 64 * MB), replication=1)
    src = next(iter(c.placements[1]))
    assert src == (0, TierKind.MEMORY)
    c.nodes[1].tiers[TierKind.SSD].used = 54 * GB   # 10GB free
    c.nodes[2].tiers[TierKind.SSD].used = 62 * GB   # 2GB free
    c.nodes[3].tiers[TierKind.SSD].used = 63 * GB
    c.nodes[0].tiers[TierKind.SSD].used = 60 * GB
    assert mgr.select_target_tier(1, "down", src) == (1, TierKind.SSD)
    # equal free space: lowest node id wins
    c.nodes[3].tiers[TierKind.SSD].used = 54 * GB
    assert mgr.select_target_tier(1, "down", src) == (1, TierKind.SSD)
    assert mgr.select_target_tier(1, "down", (0, TierKind.HDD)) is None


def test_upgrade_target_excludes_holders():
    c = Cluster(small_config(nodes=4))
    mgr = ReplicationManager(c)
    c.create_file(meta(1, 64 * MB), mode=PlacementMode.HDFS_ALL_HDD)
    holders = {n for n, _ in c.placements[1]}
    src = min(c.placements[1])
    node, tier = mgr.select_target_tier(1, "up", src)
    assert tier is TierKind.MEMORY
    assert node not in holders - {src[0]}


def test_osa_upgrade_moves_hdd_to_memory_only():
    c = Cluster(small_config(nodes=3, placement=PlacementMode.ALL_HDD_UPGRADE))
    mgr = ReplicationManager(c, None, ClassicUpgrade("osa"))
    c.create_file(meta(1, 64 * MB))
    c.read_file(1, 1.0)
    moves = mgr.run_upgrade(None, 1)
    assert len(moves) == 1
    assert moves[0].src[1] is TierKind.HDD and moves[0].dst[1] is TierKind.MEMORY
    c.read_file(1, 2.0)
    assert mgr.run_upgrade(None, 1) == []
    # periodic invocation does nothing for access-driven policies
    assert mgr.run_upgrade(None, None) == []


def test_upgrade_makes_room_with_lru_when_no_downgrade_policy():
    c = Cluster(small_config(nodes=1, mem=1 * GB, placement=PlacementMode.ALL_HDD_UPGRADE))
    mgr = ReplicationManager(c, None, ClassicUpgrade("osa"))
    for f in range(4):
        c.create_file(meta(f, 300 * MB, float(f)), replication=1)
        c.read_file(f, 10.0 + f)
        mgr.run_upgrade(None, f)
    mem = {m.file_id for m in c.files_on(TierKind.MEMORY)}
    assert 3 in mem and 0 not in mem
    assert all(p for p in c.placements.values())


def test_exd_upgrade_compares_against_eviction_preview():
    c = Cluster(small_config(nodes=1, mem=1 * GB, placement=PlacementMode.ALL_HDD_UPGRADE))
    down = ClassicDowngrade("exd")
    up = ClassicUpgrade("exd")
    mgr = ReplicationManager(c, down, up)
    c.create_file(meta(0, 900 * MB, 0.0), replication=1)
    c.read_file(0, 1.0)
    assert mgr.run_upgrade(None, 0)  # fits in headroom
    c.create_file(meta(1, 500 * MB, 2.0), replication=1)
    c.read_file(1, 3.0)
    # weight 2 vs the 900MB file's weight 2 -> not strictly higher
    assert mgr.run_upgrade(None, 1) == []
    c.read_file(1, 4.0)
    assert mgr.run_upgrade(None, 1)
    assert c.has_tier(1, TierKind.MEMORY) and not c.has_tier(0, TierKind.MEMORY)
