import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pfgspf.errors import InvalidArgument
from pfgspf.metrics import (
    TrialRecord,
    aggregate,
    format_mean_sd,
    lost_track,
    mse,
    mse_table,
    omat,
    omat_series,
    omat_table,
    rows_to_csv,
    squared_error_series,
)


def brute_force_omat(a, b, p=1):
    M = len(a)
    best = math.inf
    for perm in itertools.permutations(range(M)):
        c = sum(np.linalg.norm(a[i] - b[perm[i]]) ** p for i in range(M)) / M
        best = min(best, c)
    return best ** (1.0 / p)


def _record(errors, status="ok"):
    errors = np.asarray(errors, dtype=float)
    T = len(errors)
    z = np.zeros((T, 2))
    return TrialRecord(z, z, errors, np.ones(T), status=status)


points = st.integers(1, 4).flatmap(
    lambda m: st.tuples(
        arrays(float, (m, 2), elements=st.floats(-10, 10)),
        arrays(float, (m, 2), elements=st.floats(-10, 10)),
        arrays(float, (m, 2), elements=st.floats(-10, 10)),
    )
)


def test_identical_sets_are_zero():
    x = np.array([[0.0, 1.0], [3.0, 4.0], [-2.0, 5.0]])
    assert omat(x, x[::-1]) == 0.0


def test_single_target_offset():
    assert omat([[1.0, 1.0]], [[4.0, 5.0]]) == pytest.approx(5.0)
    assert omat([[1.0, 1.0]], [[4.0, 5.0]], p=2) == pytest.approx(5.0)


def test_assignment_beats_index_order():
    est = np.array([[10.0, 0.0], [0.0, 0.0]])
    true = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert omat(est, true) == 0.0


@pytest.mark.parametrize("a, b, p", [(np.zeros((2, 2)), np.zeros((3, 2)), 1),
                                     (np.zeros((0, 2)), np.zeros((0, 2)), 1),
                                     (np.zeros((2, 2)), np.zeros((2, 2)), 0.5)])
def test_bad_inputs(a, b, p):
    with pytest.raises(InvalidArgument):
        omat(a, b, p)


@settings(max_examples=200, deadline=None)
@given(points, st.sampled_from([1, 2, 3]))
def test_matches_brute_force(sets, p):
    a, b, _ = sets
    assert omat(a, b, p) == pytest.approx(brute_force_omat(a, b, p), rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(points, st.sampled_from([1, 2]))
def test_metric_properties(sets, p):
    a, b, c = sets
    assert omat(a, b, p) == pytest.approx(omat(b, a, p), abs=1e-12)
    assert omat(a, c, p) <= omat(a, b, p) + omat(b, c, p) + 1e-9
    perm = np.random.default_rng(0).permutation(len(a))
    assert omat(a[perm], b, p) == pytest.approx(omat(a, b, p), abs=1e-12)


def test_omat_series_selects_positions():
    # two targets, state blocks (x, y, vx, vy)
    idx = np.array([[0, 1], [4, 5]])
    est = np.zeros((3, 8))
    true = np.zeros((3, 8))
    true[:, 4] = 3.0
    est[:, 2:4] = 100.0  # velocities are ignored
    np.testing.assert_allclose(omat_series(est, true, idx), 1.5)


def test_squared_error_series():
    np.testing.assert_allclose(squared_error_series([[1.0, 3.0]], [[0.0, 0.0]]), [5.0])


def test_lost_track_threshold_is_strict():
    assert not lost_track(_record([2.0, 2.0]), 2.0)
    assert lost_track(_record([2.5, 2.5]), 2.0)


def test_mse_of_constant_error():
    c = 0.7
    est = np.full((5, 3), c)
    rec = TrialRecord(est, np.zeros((5, 3)), squared_error_series(est, np.zeros((5, 3))), np.ones(5))
    assert mse(rec) == pytest.approx(c * c)


def test_aggregate_mean_and_sample_sd():
    s = aggregate([_record([1.0]), _record([3.0])])
    assert (s.mean, s.sd, s.n_included) == (2.0, pytest.approx(math.sqrt(2.0)), 2)
    s = aggregate([_record([1.0]), _record([2.0]), _record([3.0])])
    assert s.sd == pytest.approx(1.0)


def test_aggregate_excludes_lost_and_failed():
    trials = [_record([1.0]), _record([3.0]), _record([9.0]), _record([], status="failed")]
    s = aggregate(trials, threshold=5.0)
    assert (s.mean, s.lost_tracks, s.failed, s.n_total, s.n_included) == (2.0, 1, 1, 4, 2)
    assert s.lost_rate == pytest.approx(1 / 3)
    s = aggregate(trials)
    assert s.lost_tracks == 0 and s.mean == pytest.approx(13 / 3)


def test_aggregate_empty_raises():
    with pytest.raises(InvalidArgument):
        aggregate([])


def test_aggregate_single_trial_has_nan_sd():
    s = aggregate([_record([1.0])])
    assert s.mean == 1.0 and math.isnan(s.sd)


def test_tables():
    rows = [
        dict(algorithm="PFGSPF", G=5, Np_star=500, Np=2500, mean=0.5, sd=0.1, lost_tracks=0, failed=0),
        dict(algorithm="PFGPF", G=1, Np_star=2500, Np=2500, mean=0.7, sd=0.2, lost_tracks=2, failed=0),
    ]
    text = omat_table(rows)
    assert "0.50 +- 0.10" in text and text.splitlines()[-1].split()[-2] == "2"
    text = mse_table(rows)
    assert "(500x5)" in text and "(2500x1)" in text
    assert rows_to_csv(rows, ["algorithm", "mean"]) == "algorithm,mean\nPFGSPF,0.5\nPFGPF,0.7\n"
    assert format_mean_sd(math.nan, 1.0) == "n/a"
