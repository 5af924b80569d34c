import json

import pytest

from tiersim.workload import (BIN_EDGES, EventKind, ParseError, SpecInvalid, TraceEvent,
                              WorkloadSpec, bin_of, generate, generate_switching, load_trace,
                              preset, save_trace, trace_stats)
from tiersim.simcore import GB, MB

# chi-square critical value, 5 degrees of freedom, p = 0.001
CHI2_CRIT_5DF = 20.515


@pytest.fixture(scope="module")
def fb10k():
    return generate(preset("fb", job_count=10_000, duration=60 * 3600.0, seed=3))


def test_bin_of_edges():
    assert bin_of(1) == "A"
    assert bin_of(128 * MB) == "A"
    assert bin_of(128 * MB + 1) == "B"
    assert bin_of(10 * GB) == "F"


def test_spec_validation():
    with pytest.raises(SpecInvalid):
        WorkloadSpec(job_count=-1).validate()
    with pytest.raises(SpecInvalid):
        preset("nope")
    with pytest.raises(SpecInvalid):
        WorkloadSpec.from_mapping({"bins": [0.5, 0.5, 0.5, 0, 0, 0]})
    with pytest.raises(SpecInvalid):
        WorkloadSpec.from_mapping({"colour": "red"})
    spec = WorkloadSpec.from_mapping({"preset": "cmu", "job_count": 10})
    assert spec.never_reaccessed_frac == 0.18 and spec.job_count == 10


def test_round_trip(tmp_path):
    events = generate(preset("fb", job_count=50, seed=1))
    save_trace(events, tmp_path / "t.jsonl")
    assert load_trace(tmp_path / "t.jsonl") == events
    first = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    assert set(first) == {"t", "kind", "job", "file", "size", "cpu"}


def test_parse_errors(tmp_path):
    good = json.dumps(TraceEvent(0.0, EventKind.JOB_START, 0).to_dict())
    path = tmp_path / "bad.jsonl"
    path.write_text("\n".join([good] * 6 + ["{not json"]) + "\n")
    with pytest.raises(ParseError) as info:
        load_trace(path)
    assert info.value.line == 7
    path.write_text(json.dumps({"t": 0, "kind": "Teleport"}) + "\n")
    with pytest.raises(ParseError) as info:
        load_trace(path)
    assert info.value.line == 1


def test_deterministic_under_seed():
    spec = preset("fb", job_count=200, seed=9)
    assert generate(spec) == generate(spec)
    assert generate(spec) != generate(preset("fb", job_count=200, seed=10))


def test_trace_is_well_formed():
    events = generate(preset("cmu", job_count=500, seed=2))
    live, last = set(), 0.0
    for ev in events:
        assert ev.t >= last
        last = ev.t
        if ev.kind is EventKind.CREATE:
            assert ev.file not in live and ev.size >= MB
            live.add(ev.file)
        elif ev.kind in (EventKind.READ, EventKind.DELETE):
            assert ev.file in live
    jobs = [e for e in events if e.kind is EventKind.JOB_START]
    assert len(jobs) == 500
    assert all(10.0 <= e.cpu <= 300.0 for e in jobs)


def test_fb_1000_jobs_bin_a_share():
    st = trace_stats(generate(preset("fb", seed=0)))
    assert st.bin_share["A"] == pytest.approx(0.744, abs=0.02)
    assert st.never_read_frac == pytest.approx(0.23, abs=0.02)


def test_bin_shares_chi_square(fb10k):
    st = trace_stats(fb10k)
    n = st.jobs
    expected = dict(zip([b[0] for b in BIN_EDGES], (0.744, 0.162, 0.040, 0.030, 0.016, 0.008)))
    chi2 = sum((st.bin_share[k] * n - expected[k] * n) ** 2 / (expected[k] * n) for k in expected)
    assert chi2 < CHI2_CRIT_5DF


def test_top_bin_byte_share_is_heavy(fb10k):
    sizes = {e.file: e.size for e in fb10k if e.kind is EventKind.CREATE}
    read_sizes = [sizes[e.file] for e in fb10k if e.kind is EventKind.READ]
    f_bytes = sum(s for s in read_sizes if bin_of(s) == "F")
    f_jobs = sum(1 for s in read_sizes if bin_of(s) == "F")
    assert f_bytes / sum(read_sizes) > 10 * f_jobs / len(read_sizes)


def test_switching_keeps_ids_disjoint():
    a = preset("fb", job_count=100, duration=3600.0, seed=0)
    b = preset("cmu", job_count=100, duration=3600.0, seed=1)
    events = generate_switching(a, b)
    files = [e.file for e in events if e.kind is EventKind.CREATE]
    assert len(files) == len(set(files))
    assert all(e.t >= 3600.0 for e in events if e.job >= 100)
    assert len({e.job for e in events if e.kind is EventKind.JOB_START}) == 200
