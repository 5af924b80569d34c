import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from tiersim.simcore import GB, MB, Cluster, ClusterConfig, FileMeta, TierKind  # noqa: E402


def small_config(nodes=3, mem=4 * GB, ssd=64 * GB, hdd=400 * GB, **kw):
    return ClusterConfig(nodes=nodes, tiers={
        TierKind.MEMORY: (mem, 2000.0, 1000.0),
        TierKind.SSD: (ssd, 500.0, 300.0),
        TierKind.HDD: (hdd, 150.0, 90.0),
    }, **kw)


@pytest.fixture
def cluster3():
    return Cluster(small_config())


def meta(fid, size=64 * MB, t=0.0, accesses=(), k=12):
    m = FileMeta(fid, size, t, k=k)
    for a in accesses:
        m.record_access(a)
    return m


# acceptance verdicts, echoed again at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
