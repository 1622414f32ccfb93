"""Relation-constrained edge augmentation and the symmetric contrastive objective."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import RelationTensor


@dataclass
class ContrastiveConfig:
    p_e: float = 0.3
    p_tau: float = 0.7
    tau: float = 0.4
    euler_factor: bool = False
    p_f: float = 0.1

    def __post_init__(self):
        if not 0 < self.p_e < 1:
            raise ValueError(f"p_e must lie in (0, 1), got {self.p_e}")
        if not 0 < self.p_tau < 1:
            raise ValueError(f"p_tau must lie in (0, 1), got {self.p_tau}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0 <= self.p_f < 1:
            raise ValueError(f"p_f must lie in [0, 1), got {self.p_f}")


@dataclass
class EdgeCentrality:
    edges: list
    w: np.ndarray

    @property
    def w_max(self):
        return float(self.w.max()) if self.w.size else 0.0

    @property
    def w_mu(self):
        return float(self.w.mean()) if self.w.size else 0.0


def relation_degree_centrality(relations: RelationTensor, edges) -> EdgeCentrality:
    """Per-edge relation count: (sum_r A[j,i,r] + sum_r A[i,j,r]) / 2."""
    edges = [(int(i), int(j)) for i, j in edges]
    if not edges:
        return EdgeCentrality([], np.zeros(0))
    i, j = np.array(edges).T
    ent = relations.entries
    w = 0.5 * (ent[j, i].sum(axis=1, dtype=np.float64) + ent[i, j].sum(axis=1, dtype=np.float64))
    return EdgeCentrality(edges, w)


def retention_probability(w, centrality: EdgeCentrality, cfg: ContrastiveConfig):
    """Keep probability of an edge with centrality ``w``; lies in [1 - p_tau, 1].

    Logs use ``w + 1`` so relation-less edges (w = 0) are admissible.  When
    every edge is equally central the normalised term is taken as 1.
    """
    factor = math.e if cfg.euler_factor else 1.0
    w = np.asarray(w, dtype=np.float64)
    w_max, w_mu = centrality.w_max, centrality.w_mu
    if w_max == w_mu:
        scaled = np.full(w.shape, factor * cfg.p_e)
    else:
        norm = (np.log(w_max + 1) - np.log(w + 1)) / (np.log(w_max + 1) - np.log(w_mu + 1))
        scaled = norm * factor * cfg.p_e
    p = 1.0 - np.minimum(scaled, cfg.p_tau)
    p = np.clip(p, 1.0 - cfg.p_tau, 1.0)
    return float(p) if p.ndim == 0 else p


def edge_retention(adj, relations: RelationTensor, cfg: ContrastiveConfig):
    """Symmetric N x N matrix of keep probabilities for the edges of ``adj``."""
    i, j = np.nonzero(np.triu(adj, 1))
    cent = relation_degree_centrality(relations, list(zip(i, j)))
    probs = np.zeros(adj.shape)
    if cent.w.size:
        p = retention_probability(cent.w, cent, cfg)
        probs[i, j] = p
        probs[j, i] = p
    return probs


def sample_view(adj, probabilities, features, cfg: ContrastiveConfig, seed):
    """Drop each edge independently and zero feature columns with prob ``p_f``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    adj = np.asarray(adj, dtype=np.float64)
    n = adj.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    draws = rng.random(len(iu))
    present = adj[iu, ju] > 0
    keep = present & (draws < probabilities[iu, ju])
    view = np.zeros_like(adj)
    view[iu[keep], ju[keep]] = adj[iu[keep], ju[keep]]
    view[ju[keep], iu[keep]] = adj[iu[keep], ju[keep]]
    feats = np.asarray(features, dtype=np.float64)
    if cfg.p_f > 0:
        mask = rng.random(feats.shape[1]) >= cfg.p_f
        feats = feats * mask[None, :]
    else:
        feats = feats.copy()
    return view, feats


# ------------------------------------------------------------ objective

class Projection:
    """Two-layer perceptron applied before cosine similarity."""

    def __init__(self, width, rng):
        scale = math.sqrt(2.0 / (width + width))
        self.w1 = ad.parameter(rng.normal(0, scale, (width, width)), "proj.w1")
        # positive bias keeps projections of all-zero (dead ReLU) embeddings
        # away from the zero vector, where row normalisation has a kink
        self.b1 = ad.parameter(np.full((1, width), 0.1), "proj.b1")
        self.w2 = ad.parameter(rng.normal(0, scale, (width, width)), "proj.w2")
        self.b2 = ad.parameter(np.zeros((1, width)), "proj.b2")

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def __call__(self, z):
        ones = ad.tensor(np.ones((z.shape[0], 1)))
        h = ad.relu(ad.add(ad.matmul(z, self.w1), ad.matmul(ones, self.b1)))
        return ad.add(ad.matmul(h, self.w2), ad.matmul(ones, self.b2))


def _project(z, projection):
    z = z if isinstance(z, ad.Tensor) else ad.tensor(z)
    p = projection(z) if projection is not None else z
    return ad.l2_normalize_rows(p)


def _directional(pa, pb, tau):
    """Column of l(z_a^i, z_b^i) for unit-normalised projections."""
    # written as -log sum exp((theta_neg - theta_pos) / tau) so the positive
    # term cancels exactly (N = 1 gives 0, not a rounding residue)
    n = pa.shape[0]
    ones_col = ad.tensor(np.ones((n, 1)))
    ones_row = ad.tensor(np.ones((1, n)))
    eye = np.eye(n)
    inv = 1.0 / tau
    s_ab = ad.matmul(pa, ad.transpose(pb))
    s_aa = ad.matmul(pa, ad.transpose(pa))
    pos = ad.matmul(ad.matmul(ad.hadamard(s_ab, ad.tensor(eye)), ones_col), ones_row)
    e_ab = ad.exp(ad.scalar_mul(ad.subtract(s_ab, pos), inv))
    e_aa = ad.hadamard(ad.exp(ad.scalar_mul(ad.subtract(s_aa, pos), inv)), ad.tensor(1.0 - eye))
    denom = ad.add(ad.matmul(e_ab, ones_col), ad.matmul(e_aa, ones_col))
    return ad.scalar_mul(ad.log(denom), -1.0)


def pairwise_objectives(z_a, z_b, tau, projection=None):
    """N x 1 tensor of l(z_a^i, z_b^i) with inter- and intra-view negatives."""
    return _directional(_project(z_a, projection), _project(z_b, projection), tau)


def pairwise_objective(z_a, z_b, i, tau, projection=None) -> float:
    return float(pairwise_objectives(z_a, z_b, tau, projection).data[i, 0])


def contrastive_loss(z_a, z_b, tau, projection=None):
    """Symmetric objective L_cl (to be maximised); a 1 x 1 tensor, always <= 0."""
    pa, pb = _project(z_a, projection), _project(z_b, projection)
    n = pa.shape[0]
    both = ad.add(_directional(pa, pb, tau), _directional(pb, pa, tau))
    return ad.scalar_mul(ad.sum(both), 1.0 / (2 * n))
