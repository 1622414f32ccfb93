import math

import numpy as np
import pytest

from dgrcl import autodiff as ad
from dgrcl.cct import (ContrastiveConfig, EdgeCentrality, Projection, contrastive_loss, edge_retention,
                       pairwise_objective, pairwise_objectives, relation_degree_centrality,
                       retention_probability, sample_view)
from dgrcl.data import RelationTensor


def rel_tensor(n, r, pairs):
    e = np.zeros((n, n, r), dtype=np.uint8)
    for i, j, k in pairs:
        e[i, j, k] = e[j, i, k] = 1
    return RelationTensor(e, [f"r{k}" for k in range(r)])


def test_centrality_examples(rng):
    rel = rel_tensor(3, 5, [(0, 1, k) for k in range(4)])
    c = relation_degree_centrality(rel, [(0, 1), (1, 2)])
    np.testing.assert_array_equal(c.w, [4.0, 0.0])
    e = (rng.random((6, 6, 4)) < 0.4).astype(np.uint8)
    e = e | e.transpose(1, 0, 2)
    for k in range(6):
        e[k, k] = 0
    rel = RelationTensor(e, list("abcd"))
    edges = [(i, j) for i in range(6) for j in range(i + 1, 6)]
    c = relation_degree_centrality(rel, edges)
    for (i, j), w in zip(edges, c.w):
        assert w == 0.5 * (sum(e[j, i, r] for r in range(4)) + sum(e[i, j, r] for r in range(4)))


def test_retention_examples():
    cent = EdgeCentrality([(0, 1), (0, 2), (1, 2)], np.array([0.0, 2.0, 4.0]))
    cfg = ContrastiveConfig(p_e=0.3, p_tau=0.5)
    assert retention_probability(4.0, cent, cfg) == 1.0
    mu = cent.w_mu
    assert retention_probability(mu, cent, cfg) == pytest.approx(0.7, abs=1e-15)
    for w in np.linspace(0, 4, 17):
        assert retention_probability(w, cent, cfg) >= 1 - cfg.p_tau


def test_euler_factor_scales_removal():
    cent = EdgeCentrality([(0, 1), (0, 2)], np.array([1.0, 3.0]))
    on = retention_probability(1.0, cent, ContrastiveConfig(p_e=0.1, p_tau=0.9, euler_factor=True))
    off = retention_probability(1.0, cent, ContrastiveConfig(p_e=0.1, p_tau=0.9))
    assert on < off


def test_config_validation():
    for kw in ({"p_e": 0}, {"p_tau": 1.0}, {"tau": 0}, {"p_f": 1.0}):
        with pytest.raises(ValueError):
            ContrastiveConfig(**kw)


def test_views():
    adj = np.zeros((4, 4))
    adj[0, 1] = adj[1, 0] = adj[2, 3] = adj[3, 2] = 1
    x = np.arange(12.0).reshape(4, 3)
    cfg = ContrastiveConfig(p_f=0.0)
    view, feats = sample_view(adj, np.ones((4, 4)), x, cfg, 0)
    np.testing.assert_array_equal(view, adj)
    np.testing.assert_array_equal(feats, x)
    view, _ = sample_view(adj, np.zeros((4, 4)), x, cfg, 0)
    assert view.sum() == 0


def test_keep_rate_monte_carlo():
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    probs = np.full((2, 2), 0.7)
    rng = np.random.default_rng(7)
    cfg = ContrastiveConfig(p_f=0.0)
    kept = sum(sample_view(adj, probs, np.ones((2, 1)), cfg, rng)[0][0, 1] for _ in range(10_000))
    assert abs(kept / 10_000 - 0.7) < 0.02


def test_edge_retention_is_symmetric(rng):
    adj = (rng.random((6, 6)) < 0.5).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    rel = rel_tensor(6, 2, [(0, 1, 0), (0, 1, 1), (2, 3, 0)])
    p = edge_retention(adj, rel, ContrastiveConfig())
    np.testing.assert_array_equal(p, p.T)
    assert (p[adj == 0] == 0).all()


def test_pairwise_objective_examples(rng):
    z = rng.normal(size=(1, 4))
    assert pairwise_objective(z, rng.normal(size=(1, 4)), 0, 0.4) == 0.0
    same = np.ones((2, 3))
    assert pairwise_objective(same, same, 0, 0.4) == pytest.approx(-math.log(3), abs=1e-12)
    za, zb = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    perm = np.array([1, 0, 2, 3, 4])
    base = pairwise_objectives(za, zb, 0.4).data[:, 0]
    swapped = pairwise_objectives(za[perm], zb[perm], 0.4).data[:, 0]
    np.testing.assert_allclose(swapped, base[perm], atol=1e-12)


def test_loss_examples(rng):
    assert contrastive_loss(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), 0.4).item() == 0.0
    same = np.ones((2, 3))
    assert contrastive_loss(same, same, 0.4).item() == pytest.approx(-math.log(3), abs=1e-10)


def test_loss_gradient(rng):
    za, zb = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    err = ad.finite_diff_check(lambda a: ad.scalar_mul(contrastive_loss(a, ad.tensor(zb), 0.4), -1.0), za)
    assert err < 1e-4
    proj = Projection(3, np.random.default_rng(0))
    err = ad.finite_diff_check(lambda a: contrastive_loss(a, ad.tensor(zb), 0.4, proj), za)
    assert err < 1e-4
