import math

import numpy as np
import pytest

from dgrcl.config import RunConfig
from dgrcl.errors import EmptyEvaluation
from dgrcl.evaluation import (ConfusionCounts, build_features, confusion_counts, evaluate_predictions,
                              label_matrix, metrics, run_ablation, run_sweep, sweep_grid,
                              synth_generate, train_config)

from oracles import metrics_by_hand

FAST = {"graph.s": 0.93, "model.cell_kind": "gru", "model.cell_layers": 1, "model.hidden_width": 4,
        "model.embed_width": 4, "train.epochs": 1, "enhance.enabled": False}


def test_worked_metric_example():
    acc, f1, mcc = metrics(ConfusionCounts(3, 4, 1, 2))
    assert acc == pytest.approx(0.7, abs=1e-4)
    assert f1 == pytest.approx(0.6667, abs=1e-4)
    assert mcc == pytest.approx(0.4082, abs=1e-4)


def test_metric_degenerate_cases():
    assert metrics(ConfusionCounts(0, 5, 0, 0)) == (1.0, 0.0, 0.0)
    assert metrics(ConfusionCounts(5, 0, 0, 0)) == (1.0, 1.0, 0.0)
    with pytest.raises(EmptyEvaluation):
        metrics(ConfusionCounts(0, 0, 0, 0))


def test_metrics_match_hand_computation(rng):
    for k in range(50):
        if k < 5:
            counts = [0, 0, 0, 0]
            counts[k % 4] = int(rng.integers(1, 20))
        else:
            counts = [int(x) for x in rng.integers(0, 20, 4)]
            counts[0] += 1
        assert metrics(ConfusionCounts(*counts)) == metrics_by_hand(*counts)


def test_confusion_counts_and_evaluate(rng):
    preds, labels = rng.integers(0, 2, 200), rng.integers(0, 2, 200)
    c = confusion_counts(preds, labels)
    assert c.total == 200
    assert c.tp == np.sum((preds == 1) & (labels == 1))
    assert c.fn == np.sum((preds == 0) & (labels == 1))
    out = evaluate_predictions(preds, labels)
    assert out["accuracy"] == pytest.approx(np.mean(preds == labels))
    assert out["n"] == 200
    assert (c + c).total == 400


def test_synth_shape_and_determinism():
    p1, r1 = synth_generate(12, 60, seed=3)
    p2, r2 = synth_generate(12, 60, seed=3)
    assert (p1.n_stocks, p1.n_days) == (12, 60)
    np.testing.assert_array_equal(p1.close, p2.close)
    np.testing.assert_array_equal(r1.entries, r2.entries)
    v = p1.values
    assert np.all(v[:, :, 2] <= v[:, :, 3]) and np.all(v[:, :, 3] <= v[:, :, 1])
    assert not np.any(r1.entries[np.arange(12), np.arange(12)])
    p3, _ = synth_generate(12, 60, seed=4)
    assert not np.array_equal(p1.close, p3.close)


def test_synth_without_signal_is_a_coin_flip():
    panel, _ = synth_generate(20, 400, seed=0, planted_signal_strength=0.0)
    up = label_matrix(panel)[:, :-1].mean()
    assert abs(up - 0.5) < 0.03


def test_synth_rejects_bad_arguments():
    with pytest.raises(ValueError):
        synth_generate(1, 60)
    with pytest.raises(ValueError):
        synth_generate(10, 25)
    with pytest.raises(ValueError):
        synth_generate(10, 60, planted_signal_strength=1.5)


def test_sweep_grid_contents():
    grid = sweep_grid()
    assert len(grid) == 25 and len(set(grid)) == 25
    assert set(grid) == {(a, b) for a in (0.1, 0.3, 0.5, 0.7, 0.9) for b in (0.1, 0.3, 0.5, 0.7, 0.9)}


@pytest.fixture(scope="module")
def small_market():
    return synth_generate(8, 60, seed=1)


def test_single_cell_and_duplicate_cells_agree(small_market):
    panel, rel = small_market
    res = run_sweep(panel, rel, RunConfig(FAST), grid=[(0.3, 0.7), (0.3, 0.7)])
    assert len(res) == 2 and not res.errors
    assert res.scores[0] == res.scores[1]
    assert 0 <= res.scores[0] <= 1


def test_sweep_rejects_out_of_range(small_market):
    with pytest.raises(ValueError):
        run_sweep(*small_market, RunConfig(FAST), grid=[(1.0, 0.5)])


def test_ablation_variants(small_market, tmp_path):
    cfg = RunConfig(FAST).with_values({"enhance.enabled": True})
    table = run_ablation(cfg, data=small_market, seeds=[0, 1])
    assert [r["variant"] for r in table.rows] == ["full", "w/o EE", "w/o CCT", "w/o EE & CCT"]
    for r in table.rows:
        assert r["n_seeds"] == 2 and not math.isnan(r["f1"])
    table.to_csv(tmp_path / "a.csv")
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 6


def test_double_ablation_uses_raw_features_and_no_contrastive_term(small_market):
    panel, _ = small_market
    cfg = RunConfig(FAST).with_values({"enhance.enabled": False, "cct.enabled": False})
    assert train_config(cfg).lam == 0.0
    assert build_features(panel, cfg, 30).values.shape[2] == 5
