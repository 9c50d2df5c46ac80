from __future__ import annotations

import numpy as np
import pytest

from sotifreq.bayes import (PartitionProbabilityTable, PartitionScheme, RiskBudget, equivalent_risk,
                            inject_fn_and_simulate, partition_probabilities)
from sotifreq.errors import ConfigError, EmptyInput, ZeroProbability
from sotifreq.scenarios import extract_following_pairs
from sotifreq.traffic import highway_meta, make_track, speed_profile
from sotifreq.trajectory import TrackSet


def _four_pairs():
    """Equal-speed pairs at 30 m/s with gaps 20, 60, 110 and 160 m, one after another."""
    meta = highway_meta(25.0)
    n = 151
    tracks = {}
    for k, gap in enumerate((20.0, 60.0, 110.0, 160.0)):
        xr, vr = speed_profile(30.0, n, meta.dt)
        y = meta.lane_center(3)
        tracks[2 * k + 1] = make_track(2 * k + 1, meta, 200 * k, xr, y, vr, 0.0)
        tracks[2 * k + 2] = make_track(2 * k + 2, meta, 200 * k, xr + 4.5 + gap, y, vr, 0.0)
    ts = TrackSet(meta, tracks)
    return ts, extract_following_pairs(ts, 5.0)


def test_four_pairs_one_relevant():
    ts, pairs = _four_pairs()
    assert len(pairs) == 4
    tab = partition_probabilities(pairs, ts, [1.0, 2.0])
    np.testing.assert_allclose(tab.row(1.0), [0.25, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_allclose(tab.row(2.0), [0.25, 0, 0.25, 0, 0, 0, 0, 0])
    assert tab.n_total == 4


def test_relevance_grows_with_duration():
    ts, pairs = _four_pairs()
    tab = partition_probabilities(pairs, ts, [0.0, 0.5, 1.0, 2.0, 3.0])
    totals = tab.probs.sum(axis=1)
    assert np.all(np.diff(totals) >= 0)


def test_onset_gap_and_front_modes():
    ts, pairs = _four_pairs()
    out = inject_fn_and_simulate(pairs[0], ts, 1.0)
    assert out.relevant and out.d_a_at_onset == pytest.approx(20.0)
    assert out.delta_v > 0
    # the recorded leader never brakes, so nothing is relevant in replay mode
    assert not inject_fn_and_simulate(pairs[0], ts, 1.0, front="replay").relevant
    with pytest.raises(ConfigError):
        inject_fn_and_simulate(pairs[0], ts, 1.0, front="cruise")


def test_equivalent_risk():
    assert equivalent_risk(6.8e-7, 1.0, 1.0) == pytest.approx(6.8e-7)
    assert equivalent_risk(6.8e-7, 0.5, 0.2) == pytest.approx(6.8e-6)
    with pytest.raises(ZeroProbability):
        equivalent_risk(6.8e-7, 0.0, 1.0)
    assert RiskBudget().lambda_prime == pytest.approx(6.8e-7)


def test_partition_scheme():
    s = PartitionScheme()
    assert s.index(0.0) == 0 and s.index(24.999) == 0 and s.index(25.0) == 1
    assert s.index(199.9) == 7 and s.index(200.0) is None and s.index(-1.0) is None
    assert s.label(1) == "[25,50)"


def test_table_roundtrips():
    ts, pairs = _four_pairs()
    tab = partition_probabilities(pairs, ts, [1.0])
    back = PartitionProbabilityTable.from_csv(tab.to_csv())
    np.testing.assert_array_equal(back.probs, tab.probs)
    back = PartitionProbabilityTable.from_dict(tab.to_dict())
    np.testing.assert_array_equal(back.probs, tab.probs)
    assert back.durations == [1.0]
    with pytest.raises(KeyError):
        tab.row(5.0)


def test_empty_inputs_rejected():
    ts, pairs = _four_pairs()
    with pytest.raises(EmptyInput):
        partition_probabilities([], ts, [1.0])
    with pytest.raises(EmptyInput):
        partition_probabilities(pairs, ts, [])
    with pytest.raises(ValueError):
        PartitionProbabilityTable([1.0], np.full((1, 8), 0.5), 2)
