import numpy as np
import pytest

from dgrcl.enhance import (EnhancedPanel, distribution_distance, enhance, fft_magnitude, raw_features,
                           regime_label, segment_summary, split_objective, split_periods, compute_splits)
from dgrcl.errors import Infeasible, UnknownMetric

from conftest import make_panel
from oracles import dft_magnitudes, exhaustive_two_split


def test_fft_summary_edge_cases():
    np.testing.assert_array_equal(fft_magnitude(np.full(16, 3.0), 8), np.zeros(8))
    np.testing.assert_array_equal(fft_magnitude([5.0], 8), np.zeros(8))


@pytest.mark.parametrize("f", [1, 2, 3, 5])
def test_cosine_peaks_at_its_frequency(f):
    n, m = 32, 8
    x = np.cos(2 * np.pi * f * np.arange(n) / n)
    summary = fft_magnitude(x, m)
    assert int(np.argmax(summary)) == f
    ref = dft_magnitudes(x - x.mean())[:m]
    ref[0] = 0.0
    np.testing.assert_allclose(summary, ref / np.linalg.norm(ref), atol=1e-12)


def test_summary_matches_dft_with_padding(rng):
    x = rng.normal(size=11)
    padded = np.zeros(16)
    padded[:11] = x - x.mean()
    ref = dft_magnitudes(padded)[:8]
    ref[0] = 0
    np.testing.assert_allclose(fft_magnitude(x, 8), ref / np.linalg.norm(ref), atol=1e-12)


def test_distances():
    a = np.array([0.2, 0.3, 0.5])
    for metric in ("euclidean", "js"):
        assert distribution_distance(a, a, metric) == 0
    assert distribution_distance([1, 0], [0, 1]) == pytest.approx(np.sqrt(2), abs=1e-15)
    assert distribution_distance([1, 0], [0, 1], "js") == pytest.approx(np.log(2), abs=1e-15)
    with pytest.raises(UnknownMetric):
        distribution_distance(a, a, "cosine")


def test_split_finds_regime_change(rng):
    T = 120
    x = np.concatenate([rng.normal(size=T // 2), 5 * np.sin(2 * np.pi * 6 * np.arange(T // 2) / 60)])
    sp = split_periods(x, k0=2, min_len=10, max_len=T, grid=5)
    oracle, best = exhaustive_two_split(lambda b: split_objective(x, b), T, 10, T, 5)
    assert sp.boundaries[1] == oracle
    assert sp.objective == pytest.approx(best, abs=1e-12)
    assert abs(sp.boundaries[1] - T / 2) <= 0.1 * T


def test_homogeneous_series_split_is_feasible_and_deterministic(rng):
    x = rng.normal(size=100)
    a = split_periods(x, k0=2, min_len=10, max_len=100)
    b = split_periods(x, k0=2, min_len=10, max_len=100)
    assert a == b
    assert all(10 < q - p < 100 for p, q in a.periods())


def test_default_split_respects_bounds(rng):
    x = np.cumsum(rng.normal(size=90))
    sp = split_periods(x)
    assert 2 <= sp.k <= 5
    assert all(10 < q - p < 45 for p, q in sp.periods())
    assert sp.boundaries[0] == 0 and sp.boundaries[-1] == 90


def test_infeasible():
    with pytest.raises(Infeasible):
        split_periods(np.arange(22.0), min_len=10)


def test_regime_labels():
    rising = make_panel([np.linspace(10, 12, 10)])
    assert regime_label(rising, 0, (0, 10), 0.01) == "rising"
    flat = make_panel([[10, 11, 9, 10]])
    assert regime_label(flat, 0, (0, 4), 0.01) == "fluctuating"
    assert regime_label(make_panel([[100, 97, 95]]), 0, (0, 3), 0.01) == "falling"


def test_enhance_shapes_and_missing_regimes(tmp_path):
    t = np.arange(80)
    close = np.vstack([10 * np.exp(0.01 * t) * (1 + 0.01 * np.sin(t)), 10 * np.exp(0.01 * t) * (1 + 0.01 * np.sin(t))])
    panel = make_panel(close)
    splits = compute_splits(panel, k0=3, min_len=10, max_len=60)
    ep = enhance(panel, splits, m=4, eps=0.02)
    assert ep.values.shape == (2, 80, 17)
    assert all(tag == "rising" for tag in ep.regime_tags[0])
    np.testing.assert_array_equal(ep.values[0, :, 9:], 0.0)
    np.testing.assert_array_equal(ep.values[0], ep.values[1])
    ep.save(tmp_path / "f.bin")
    back = EnhancedPanel.load(tmp_path / "f.bin")
    np.testing.assert_array_equal(back.values, ep.values)
    assert back.regime_tags == ep.regime_tags
    assert raw_features(panel).values.shape == (2, 80, 5)


def test_multichannel_summary_is_unit_norm(rng):
    s = segment_summary(rng.normal(size=(20, 5)), 8)
    assert np.linalg.norm(s) == pytest.approx(1.0)
