import numpy as np
import pytest

from dgrcl import autodiff as ad
from dgrcl import model as mdl
from dgrcl.errors import AsymmetricInput, Misaligned, ShapeMismatch
from dgrcl.evaluation import label_matrix, synth_generate
from dgrcl.enhance import raw_features
from dgrcl.graphs import build_graph_sequence

from model_fixtures import full_model_gradient_error, gradient_pairs, random_instance
from oracles import power_iteration_radius


def test_normalize_adjacency_examples():
    np.testing.assert_array_equal(mdl.normalize_adjacency([[0.0]]), [[1.0]])
    np.testing.assert_allclose(mdl.normalize_adjacency([[0, 1], [1, 0]]), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    with pytest.raises(AsymmetricInput):
        mdl.normalize_adjacency([[0, 1], [0, 0]])


def test_normalize_adjacency_symmetric_and_bounded(rng):
    for _ in range(20):
        n = int(rng.integers(1, 30))
        a = np.triu(rng.random((n, n)) < rng.random(), 1).astype(float)
        a = a + a.T
        a_hat = mdl.normalize_adjacency(a)
        assert np.abs(a_hat - a_hat.T).max() == 0
        assert power_iteration_radius(a_hat) <= 1 + 1e-10


def test_gcn_layer(rng):
    h = rng.random((4, 3))
    out = mdl.gcn_layer(np.eye(4), ad.tensor(h), ad.tensor(np.eye(3)))
    np.testing.assert_array_equal(out.data, h)
    assert not mdl.gcn_layer(np.eye(4), ad.tensor(np.zeros((4, 3))), ad.tensor(rng.normal(size=(3, 2)))).data.any()
    a = mdl.normalize_adjacency(random_instance(seed=3).adj[0])
    h, w = rng.normal(size=(4, 3)), rng.normal(size=(3, 2))
    expected = np.zeros((4, 2))
    for i in range(4):
        for j in range(2):
            expected[i, j] = max(0.0, sum(a[i, k] * h[k, m] * w[m, j] for k in range(4) for m in range(3)))
    np.testing.assert_allclose(mdl.gcn_layer(a, ad.tensor(h), ad.tensor(w)).data, expected, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        mdl.gcn_layer(a, ad.tensor(h), ad.tensor(rng.normal(size=(2, 2))))


@pytest.mark.parametrize("kind", ["gru", "lstm"])
@pytest.mark.parametrize("variant", ["state_only", "input_summarized"])
def test_evolve_shape_and_determinism(kind, variant, rng):
    cells = [mdl.MatrixCell(kind, 5, 3, np.random.default_rng(0))]
    w = ad.tensor(rng.normal(size=(5, 3)))
    state = [(w, ad.tensor(np.zeros((5, 3))) if kind == "lstm" else None)]
    h = ad.tensor(rng.normal(size=(6, 5)))
    scorer = ad.tensor(rng.normal(size=(5, 1)))
    w1, _ = mdl.evolve_weights(h, w, state, cells, variant, scorer)
    w2, _ = mdl.evolve_weights(h, w, state, cells, variant, scorer)
    assert w1.shape == (5, 3)
    np.testing.assert_array_equal(w1.data, w2.data)


def test_zero_gru_halves_the_weights(rng):
    cell = mdl.MatrixCell("gru", 4, 2, rng)
    for p in cell.parameters():
        p.data[:] = 0
    w = ad.tensor(rng.normal(size=(4, 2)))
    w_next, _ = mdl.evolve_weights(None, w, [(w, None)], [cell], "state_only")
    np.testing.assert_allclose(w_next.data, 0.5 * w.data, atol=1e-15)


def test_summarize_top_rows_and_short_inputs(rng):
    h = ad.tensor(rng.normal(size=(5, 3)))
    p = ad.tensor(np.array([[1.0], [0.0], [0.0]]))
    out = mdl.summarize(h, p, 2)
    order = np.argsort(-h.data[:, 0])[:2]
    expected = (h.data[order] * np.tanh(h.data[order, :1])).T
    np.testing.assert_allclose(out.data, expected, atol=1e-15)
    short = mdl.summarize(ad.tensor(h.data[:2]), p, 4)
    assert short.shape == (3, 4)
    np.testing.assert_array_equal(short.data[:, 2], short.data[:, 3])


def test_predict_and_losses(rng):
    h = ad.tensor(rng.normal(size=(6, 4)))
    zero = mdl.predict(h, ad.tensor(np.zeros((4, 2))), ad.tensor(np.zeros((1, 2))))
    np.testing.assert_array_equal(zero.data, 0.5)
    w, b = rng.normal(size=(4, 2)), rng.normal(size=(1, 2))
    probs = mdl.predict(h, ad.tensor(w), ad.tensor(b))
    np.testing.assert_allclose(probs.data.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(probs.data.argmax(axis=1), (h.data @ w + b).argmax(axis=1))
    labels = np.array([0, 1, 1, 0, 1, 0])
    lp = mdl.prediction_loss(probs, labels)
    assert mdl.total_loss(probs, labels, ad.tensor([[-2.0]]), 0.0).item() == lp.item()
    assert mdl.total_loss(probs, labels, ad.tensor([[-2.0]]), 0.1).item() == pytest.approx(lp.item() + 0.2)
    onehot = np.eye(2)[labels]
    assert mdl.prediction_loss(ad.tensor(onehot), labels).item() == 0.0


def test_defaults():
    cfg = mdl.TrainConfig()
    assert (cfg.lam, cfg.delta, cfg.cell_kind, cfg.cell_layers) == (0.1, 20, "lstm", 2)
    assert cfg.evolve_variant == "input_summarized"
    with pytest.raises(ValueError):
        mdl.TrainConfig(lam=-1)


def test_gru_stack_gradient_check():
    err, n = full_model_gradient_error(seed=0, cell_kind="gru", cell_layers=2, hidden_width=4, embed_width=3)
    assert n > 1000
    assert err < 1e-4


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_lstm_stack_gradients_agree_up_to_roundoff(seed):
    """Default LSTM stack on arbitrary seeds; tiny coordinates are judged in absolute terms."""
    data = random_instance(seed=seed)
    state = mdl.ModelState(7, mdl.TrainConfig(delta=6, hidden_width=4, embed_width=3, seed=seed))
    a, n = gradient_pairs(state, lambda: mdl.batch_loss(state, data, [5], 0, 6)[0])
    assert np.all(np.abs(a - n) <= 1e-4 * np.abs(a) + 1e-9)


def test_cct_off_reduces_to_prediction_loss():
    data = random_instance(seed=1)
    on = mdl.ModelState(7, mdl.TrainConfig(delta=6, hidden_width=4, embed_width=3, seed=1))
    off = mdl.ModelState(7, mdl.TrainConfig(delta=6, hidden_width=4, embed_width=3, seed=1, lam=0.0,
                                            use_cct=False))
    loss_off, parts_off = mdl.batch_loss(off, data, [5], 0, 6)
    loss_on, parts_on = mdl.batch_loss(on, data, [5], 0, 6)
    assert parts_off["L_cl"] == 0.0
    assert loss_off.item() == parts_off["L_pred"] == parts_on["L_pred"]
    assert loss_on.item() == pytest.approx(parts_on["L_pred"] - 0.1 * parts_on["L_cl"], abs=1e-12)


def test_misaligned_window():
    data = random_instance(seed=0)
    state = mdl.ModelState(7, mdl.TrainConfig(delta=6, hidden_width=4, embed_width=3))
    with pytest.raises(Misaligned):
        mdl.batch_loss(state, data, [3], 0, 6)


@pytest.fixture(scope="module")
def synth_data():
    panel, rel = synth_generate(20, 80, seed=0)
    seq = build_graph_sequence(panel, 20, 0.93)
    return mdl.prepare_training_data(seq, raw_features(panel).values, rel, label_matrix(panel), 50)


def small_cfg(**kw):
    base = dict(hidden_width=8, embed_width=8, cell_kind="gru", cell_layers=1, learning_rate=0.1, seed=0)
    base.update(kw)
    return mdl.TrainConfig(**base)


def mean_loss(state, data, days):
    return np.mean([mdl.batch_loss(state, data, b)[0].item() for b in mdl._batches(days, state.cfg.batch_days)])


def test_one_epoch_decreases_training_loss(synth_data):
    state = mdl.ModelState(synth_data.features.shape[2], small_cfg())
    days = list(range(39, 49))
    before = mean_loss(state, synth_data, days)
    _, metrics = mdl.train_epoch(state, synth_data, days, 0)
    assert mean_loss(state, synth_data, days) < before
    assert metrics["seconds"] > 0
    assert set(metrics) == {"epoch", "L_pred", "L_cl", "total", "seconds"}


def test_training_is_deterministic_and_checkpoints_round_trip(synth_data, tmp_path):
    days = list(range(39, 45))
    finals = []
    for _ in range(2):
        state = mdl.ModelState(synth_data.features.shape[2], small_cfg())
        mdl.fit(state, synth_data, days, 2)
        finals.append([p.data.copy() for p in state.parameters()])
    for a, b in zip(*finals):
        np.testing.assert_array_equal(a, b)
    state.save(tmp_path / "m.bin")
    back = mdl.ModelState.load(tmp_path / "m.bin")
    for a, b in zip(state.parameters(), back.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    p1 = mdl.predict_days(state, synth_data, [50, 51])
    p2 = mdl.predict_days(back, synth_data, [50, 51])
    np.testing.assert_array_equal(p1[51], p2[51])
