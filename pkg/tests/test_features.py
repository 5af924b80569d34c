import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import meta
from tiersim.features import (MONTH, FeatureConfig, FutureWindow, InvalidReference, TooYoung,
                              build_features, dump_points, label, load_points,
                              on_access_positive_sample, sample_training_point)
from tiersim.simcore import GB, MB

HOUR = 3600.0


def test_three_accesses_fill_five_deltas():
    m = meta(1, 1 * GB, 0.0, accesses=(100.0, 250.0, 600.0))
    x = build_features(m, 1000.0)
    assert len(x) == 15
    missing = x == -1.0
    assert missing.sum() == 9
    # size + 5 time deltas are populated
    assert (~missing).sum() == 6
    assert x[0] == pytest.approx(0.1)
    assert x[1] == pytest.approx(1000 / MONTH)
    assert x[2] == pytest.approx(400 / MONTH)
    assert x[3] == pytest.approx(100 / MONTH)
    assert x[4] == pytest.approx(350 / MONTH)  # most recent gap first
    assert x[5] == pytest.approx(150 / MONTH)


def test_never_accessed_file():
    x = build_features(meta(1, 64 * MB, 0.0), 50.0)
    assert (x[2:] == -1.0).all()
    assert x[0] > 0 and x[1] > 0


def test_clamping_and_errors():
    m = meta(1, 20 * GB, 0.0, accesses=(10.0,))
    x = build_features(m, 2 * MONTH)
    assert x[0] == 1.0 and x[1] == 1.0 and x[2] == 1.0
    with pytest.raises(InvalidReference):
        build_features(meta(1, t=100.0), 50.0)
    with pytest.raises(ValueError):
        FeatureConfig(missing=0.5)


def test_only_accesses_before_reference_are_used():
    m = meta(1, accesses=(10.0, 20.0, 30.0))
    x = build_features(m, 20.0)
    assert x[2] == pytest.approx(10 / MONTH)
    assert x[4] == -1.0


def test_label_window_is_half_open():
    m = meta(1, accesses=(100.0,))
    assert label(m, 100.0, 50.0) == 0
    assert label(m, 60.0, 50.0) == 1
    assert label(m, 50.0, 50.0) == 1
    assert label(m, 40.0, 50.0) == 0
    with pytest.raises(FutureWindow):
        label(m, 90.0, 50.0, now=100.0)


def test_sample_training_point():
    w = 30 * 60.0
    m = meta(1, t=0.0, accesses=(5000.0,))
    p = sample_training_point(m, 5000.0 + 600, w)
    assert p.label == 1 and p.reference_time == pytest.approx(5600 - w)
    p = sample_training_point(m, 5000.0 + 2 * w, w)
    assert p.label == 0
    with pytest.raises(TooYoung):
        sample_training_point(meta(2, t=100.0), 200.0, w)


def test_positive_sample_excludes_trigger_from_features():
    w = HOUR
    m = meta(1, t=0.0, accesses=(1000.0, 2000.0, 9000.0))
    p = on_access_positive_sample(m, 9000.0, w)
    assert p.label == 1
    # t_ref = 5400: the two older accesses are history, the trigger is future
    assert p.features[2] == pytest.approx((5400 - 2000) / MONTH)
    assert p.features[3] == pytest.approx(1000 / MONTH)
    assert p.features[4] == pytest.approx(1000 / MONTH)
    assert p.features[5] == -1.0


def test_ablation_switches():
    m = meta(1, accesses=(10.0,))
    x = build_features(m, 20.0, FeatureConfig(use_size=False, use_creation=False))
    assert x[0] == -1.0 and x[1] == -1.0 and x[3] == -1.0 and x[2] >= 0


def test_points_round_trip(tmp_path):
    m = meta(1, t=0.0, accesses=(10.0, 40.0))
    pts = [sample_training_point(m, 100.0, 50.0), sample_training_point(m, 60.0, 30.0)]
    path = tmp_path / "pts.jsonl"
    dump_points(pts, path)
    assert load_points(path) == pts
    assert set(json.loads(path.read_text().splitlines()[0])) >= {"features", "label", "t_ref"}


times = st.lists(st.floats(0, 1e6, allow_nan=False), max_size=20).map(sorted)


@given(times, st.floats(0, 2e6), st.integers(1, 15))
def test_features_in_range_and_pure(acc, t_ref, k):
    m = meta(1, 3 * GB, 0.0, accesses=acc, k=k)
    cfg = FeatureConfig(k=k)
    x = build_features(m, t_ref, cfg)
    assert len(x) == k + 3
    assert np.all((x == -1.0) | ((x >= 0) & (x <= 1)))
    assert np.array_equal(x, build_features(m.snapshot(), t_ref, cfg))


@given(times, st.floats(0, 1e6), st.floats(1, 1e5))
def test_label_matches_brute_force(acc, t_ref, w):
    m = meta(1, accesses=acc, k=len(acc) or 1)
    assert label(m, t_ref, w) == int(any(t_ref < a <= t_ref + w for a in acc))


@given(times, st.floats(0, 1e6), st.floats(0, 1e5))
def test_recency_delta_grows_with_reference(acc, t_ref, step):
    m = meta(1, accesses=acc)
    before = [a for a in acc if a < t_ref]
    if not before:
        return
    t2 = t_ref + step
    if any(t_ref <= a < t2 for a in acc):
        return
    assert build_features(m, t2)[2] >= build_features(m, t_ref)[2]
