import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgrcl.errors import EmptySeries, NoRoot, TooShort
from dgrcl.graphs import (CostMatrix, DynamicGraphSequence, build_cost_matrices, build_graph_sequence,
                          calibrate_exponent, dtw_cost, edge_budget, select_edges, threshold_graphs,
                          volume_volatility, zipf_expected_edges, zipf_pmf)

from conftest import make_panel
from oracles import dtw_brute_force

series = st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=6)


def test_volume_volatility_rules():
    np.testing.assert_allclose(volume_volatility(make_panel([[1, 1]], [[100, 110]])), [[1.1]])
    np.testing.assert_array_equal(volume_volatility(make_panel([[1, 1, 1]], [[100, 0, 50]])), [[0.0, 10.0]])
    np.testing.assert_array_equal(volume_volatility(make_panel([[1, 1, 1]], [[0, 0, 5]]), cap=7), [[1.0, 7.0]])
    np.testing.assert_array_equal(volume_volatility(make_panel([[1] * 5], [[42] * 5])), [[1.0] * 4])


def test_dtw_examples():
    assert dtw_cost([0, 0], [1, 1]) == 2
    assert dtw_cost([1, 3, 2], [1, 2]) == 1
    with pytest.raises(EmptySeries):
        dtw_cost([], [1.0])


@settings(max_examples=200, deadline=None)
@given(series, series)
def test_dtw_matches_path_enumeration(a, b):
    assert dtw_cost(a, b) == dtw_brute_force(a, b)
    assert dtw_cost(a, a) == 0.0
    assert dtw_cost(a, b) == dtw_cost(b, a)


def test_cost_matrices_shape_and_identity(rng):
    sig = rng.uniform(0.5, 2, size=(3, 25))
    sig[2] = sig[0]
    cms = build_cost_matrices(sig, 20)
    assert [c.step for c in cms] == list(range(20, 26))
    for cm in cms:
        assert cm.costs.shape == (3, 3)
        assert np.count_nonzero(np.triu(cm.costs, 1) > 0) <= 3
        assert cm.costs[0, 2] == 0.0
        np.testing.assert_array_equal(cm.costs, cm.costs.T)
    assert cms[0].costs[0, 1] == dtw_cost(sig[0, 0:20], sig[1, 0:20])
    with pytest.raises(TooShort):
        build_cost_matrices(sig, 30)


def test_matrix_count_follows_panel_length(rng):
    panel = make_panel(rng.uniform(10, 20, size=(2, 60)), rng.uniform(1e3, 2e3, size=(2, 60)))
    seq = build_graph_sequence(panel, 20, 1.0)
    assert len(seq) == 60 - 20
    assert seq.steps[0] == 20 and seq.steps[-1] == 59


def test_zipf():
    assert zipf_expected_edges(1, 2.3) == 1.0
    assert abs(zipf_expected_edges(2, 1.0) - 4 / 3) < 1e-15
    np.testing.assert_allclose(zipf_pmf(2, 1.0), [2 / 3, 1 / 3])
    s = calibrate_exponent(1026, 164)
    assert abs(zipf_expected_edges(1026, s) - 164) <= 2
    assert abs(zipf_expected_edges(1737, calibrate_exponent(1737, 255)) - 255) <= 0.5
    with pytest.raises(NoRoot):
        calibrate_exponent(50, 50)


def test_expected_edges_decrease_in_s():
    vals = [zipf_expected_edges(100, s) for s in np.linspace(0.1, 5, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert edge_budget(20, 0.93) == 6


def test_select_edges_examples():
    costs = np.array([[0, 0.1, 0.5], [0.1, 0, 0.9], [0.5, 0.9, 0]])
    i, j = select_edges(costs, 2)
    assert set(zip(i.tolist(), j.tolist())) == {(0, 1), (0, 2)}
    seq = threshold_graphs([CostMatrix(5, costs)], 0)
    assert seq.graphs[0].sum() == 0
    seq = threshold_graphs([CostMatrix(5, costs)], 10)
    np.testing.assert_array_equal(seq.graphs[0], 1 - np.eye(3))


def test_graph_sequence_round_trip(tmp_path, rng):
    panel = make_panel(rng.uniform(10, 20, size=(5, 40)), rng.uniform(1e3, 2e3, size=(5, 40)))
    seq = build_graph_sequence(panel, 10, 0.93)
    for g in seq.graphs:
        assert np.array_equal(g, g.T) and not np.diag(g).any()
        assert g.sum() == 2 * seq.edge_budget
    seq.save(tmp_path / "g")
    back = DynamicGraphSequence.load(tmp_path / "g")
    assert back.steps == seq.steps and back.edge_budget == seq.edge_budget
    for a, b in zip(seq.graphs, back.graphs):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.at(seq.steps[3]), seq.graphs[3])
