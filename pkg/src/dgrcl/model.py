"""GCN encoder whose layer weights evolve through a recurrent cell.

At every graph step the weights of each layer are advanced by a (stacked)
GRU or LSTM cell that treats the weight matrix as its hidden state; the
node embeddings of the final layer feed a two-class softmax head.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cct import ContrastiveConfig, Projection, contrastive_loss, edge_retention, sample_view
from .errors import AsymmetricInput, Misaligned, ShapeMismatch

CELL_KINDS = ("gru", "lstm")
VARIANTS = ("state_only", "input_summarized")
_GATES = {"gru": ("z", "r", "h"), "lstm": ("i", "f", "o", "g")}


@dataclass
class TrainConfig:
    delta: int = 20
    lam: float = 0.1
    learning_rate: float = 1e-2
    epochs: int = 50
    hidden_width: int = 64
    embed_width: int = 64
    cell_kind: str = "lstm"
    cell_layers: int = 2
    evolve_variant: str = "input_summarized"
    batch_days: int = 8
    clip_norm: float = 5.0
    use_cct: bool = True
    cl_all_steps: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {CELL_KINDS}")
        if self.evolve_variant not in VARIANTS:
            raise ValueError(f"evolve_variant must be one of {VARIANTS}")
        for name in ("learning_rate", "hidden_width", "embed_width", "cell_layers",
                     "batch_days", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


# --------------------------------------------------------------- graph ops

def normalize_adjacency(A) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise AsymmetricInput("adjacency is not symmetric")
    if (A < 0).any() or np.diag(A).any():
        raise ValueError("adjacency must be non-negative with zero diagonal")
    At = A + np.eye(A.shape[0])
    d = 1.0 / np.sqrt(At.sum(axis=1))
    out = At * d[:, None] * d[None, :]
    return 0.5 * (out + out.T)


def gcn_layer(A_hat, H, W):
    """ReLU(A_hat @ H @ W)."""
    A_hat = A_hat if isinstance(A_hat, ad.Tensor) else ad.tensor(A_hat)
    return ad.relu(ad.matmul(ad.matmul(A_hat, H), W))


# -------------------------------------------------------------- recurrence

class MatrixCell:
    """GRU/LSTM acting on matrices: gates are sigma(U X + V H + B), U, V square."""

    def __init__(self, kind, rows, cols, rng, name=""):
        self.kind = kind
        scale = 1.0 / math.sqrt(rows)
        self.params = {}
        for g in _GATES[kind]:
            self.params[f"U{g}"] = ad.parameter(rng.normal(0, scale, (rows, rows)), f"{name}.U{g}")
            self.params[f"V{g}"] = ad.parameter(rng.normal(0, scale, (rows, rows)), f"{name}.V{g}")
            self.params[f"B{g}"] = ad.parameter(np.zeros((rows, cols)), f"{name}.B{g}")

    def parameters(self):
        return list(self.params.values())

    def _pre(self, g, X, H):
        p = self.params
        return ad.add(ad.add(ad.matmul(p[f"U{g}"], X), ad.matmul(p[f"V{g}"], H)), p[f"B{g}"])

    def __call__(self, X, state):
        h, c = state
        if self.kind == "gru":
            z = ad.sigmoid(self._pre("z", X, h))
            r = ad.sigmoid(self._pre("r", X, h))
            cand = ad.tanh(self._pre("h", X, ad.hadamard(r, h)))
            h_new = ad.add(ad.subtract(h, ad.hadamard(z, h)), ad.hadamard(z, cand))
            return h_new, (h_new, None)
        i = ad.sigmoid(self._pre("i", X, h))
        f = ad.sigmoid(self._pre("f", X, h))
        o = ad.sigmoid(self._pre("o", X, h))
        g = ad.tanh(self._pre("g", X, h))
        c_new = ad.add(ad.hadamard(f, c), ad.hadamard(i, g))
        h_new = ad.hadamard(o, ad.tanh(c_new))
        return h_new, (h_new, c_new)


def summarize(H, p, k):
    """Top-k rows of H scored by H p / |p|, gated by tanh(score); returned as cols x k.

    When H has fewer than k rows the last selected row is repeated.
    """
    n, width = H.shape
    p_unit = ad.transpose(ad.l2_normalize_rows(ad.transpose(p)))
    y = ad.matmul(H, p_unit)
    order = np.argsort(-y.data[:, 0], kind="stable")[:k]
    if len(order) < k:
        order = np.concatenate([order, np.full(k - len(order), order[-1])])
    select = np.zeros((k, n))
    select[np.arange(k), order] = 1.0
    gate = ad.matmul(ad.tanh(y), ad.tensor(np.ones((1, width))))
    picked = ad.matmul(ad.tensor(select), ad.hadamard(H, gate))
    return ad.transpose(picked)


def evolve_weights(H, W_prev, cell_state, cells, variant, scorer=None):
    """Advance one layer's weights by one graph step.

    ``cell_state`` is a list of (h, c) pairs, one per stacked cell, whose
    last ``h`` equals ``W_prev``.  Returns ``(W_next, new_state)``.
    """
    rows, cols = W_prev.shape
    if variant == "state_only":
        X = ad.tensor(np.zeros((rows, cols)))
    elif variant == "input_summarized":
        if H.shape[1] != rows:
            raise ShapeMismatch(f"embedding width {H.shape[1]} does not match weight rows {rows}")
        X = summarize(H, scorer, cols)
    else:
        raise ValueError(f"unknown evolve variant {variant!r}")
    new_state = []
    inp = X
    for cell, st in zip(cells, cell_state):
        inp, st_new = cell(inp, st)
        new_state.append(st_new)
    return inp, new_state


# -------------------------------------------------------------- the model

class ModelState:
    """All trainable tensors: initial layer weights, cells, scorers, head, projection."""

    def __init__(self, in_width, cfg: TrainConfig):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.widths = [in_width, cfg.hidden_width, cfg.embed_width]
        self.w0, self.cells, self.scorers = [], [], []
        for l in range(2):
            r, c = self.widths[l], self.widths[l + 1]
            bound = math.sqrt(6.0 / (r + c))
            self.w0.append(ad.parameter(rng.uniform(-bound, bound, (r, c)), f"W0.{l}"))
            self.cells.append([MatrixCell(cfg.cell_kind, r, c, rng, f"cell{l}.{k}")
                               for k in range(cfg.cell_layers)])
            self.scorers.append(ad.parameter(rng.normal(0, 1.0 / math.sqrt(r), (r, 1)), f"score.{l}"))
        e = cfg.embed_width
        bound = math.sqrt(6.0 / (e + 2))
        self.head_w = ad.parameter(rng.uniform(-bound, bound, (e, 2)), "head.w")
        self.head_b = ad.parameter(np.zeros((1, 2)), "head.b")
        self.projection = Projection(e, rng)

    def parameters(self):
        out = list(self.w0) + list(self.scorers)
        for layer in self.cells:
            for cell in layer:
                out.extend(cell.parameters())
        out += [self.head_w, self.head_b]
        out += self.projection.parameters()
        return out

    def named_parameters(self):
        return [(p.name, p) for p in self.parameters()]

    def initial_state(self):
        states = []
        for l in range(2):
            zeros = np.zeros(self.w0[l].shape)
            c0 = ad.tensor(zeros) if self.cfg.cell_kind == "lstm" else None
            states.append([(self.w0[l], c0) for _ in range(self.cfg.cell_layers)])
        return states

    def step(self, A_hat, X, states):
        """One graph step: evolve both layers' weights and propagate."""
        H = X
        weights, new_states = [], []
        for l in range(2):
            W_prev = states[l][-1][0]
            W, st = evolve_weights(H, W_prev, states[l], self.cells[l], self.cfg.evolve_variant,
                                   self.scorers[l])
            H = gcn_layer(A_hat, H, W)
            weights.append(W)
            new_states.append(st)
        return H, weights, new_states

    # checkpoints
    def save(self, path, extra=None):
        path = Path(path)
        params = self.parameters()
        with open(path, "wb") as fh:
            for p in params:
                fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        manifest = {
            "in_width": self.widths[0],
            "config": asdict(self.cfg),
            "parameters": [{"name": p.name, "shape": list(p.shape)} for p in params],
            **(extra or {}),
        }
        path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        state = cls(manifest["in_width"], TrainConfig(**manifest["config"]))
        raw = np.frombuffer(path.read_bytes(), dtype="<f8")
        pos = 0
        for p, spec in zip(state.parameters(), manifest["parameters"]):
            if p.name != spec["name"] or list(p.shape) != spec["shape"]:
                raise ShapeMismatch(f"checkpoint parameter {spec['name']} does not match model")
            n = p.data.size
            p.data = raw[pos:pos + n].reshape(p.shape).copy()
            pos += n
        return state


def predict(H_final, head_w, head_b):
    """Row-wise softmax of H_final @ head_w + head_b -> N x 2 probabilities."""
    ones = ad.tensor(np.ones((H_final.shape[0], 1)))
    return ad.softmax_rows(ad.add(ad.matmul(H_final, head_w), ad.matmul(ones, head_b)))


def prediction_loss(probs, labels):
    """Mean cross-entropy against 0/1 labels."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.zeros(probs.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    picked = ad.matmul(ad.hadamard(probs, ad.tensor(onehot)), ad.tensor(np.ones((2, 1))))
    return ad.scalar_mul(ad.sum(ad.log(picked)), -1.0 / len(labels))


def total_loss(pred_probs, labels, L_cl, lam):
    """L_pred + lam * (-L_cl): the quantity minimised (L_cl itself is maximised)."""
    lp = prediction_loss(pred_probs, labels)
    if lam == 0 or L_cl is None:
        return lp
    return ad.add(lp, ad.scalar_mul(L_cl, -float(lam)))


# ---------------------------------------------------------------- training

@dataclass
class TrainingData:
    """Aligned model inputs.  ``adj[t]`` / ``a_hat[t]`` exist for every graph step."""

    adj: dict
    a_hat: dict
    features: np.ndarray
    labels: np.ndarray
    relations: object
    cct: ContrastiveConfig = field(default_factory=ContrastiveConfig)

    @property
    def first_step(self):
        return min(self.adj)

    @property
    def last_step(self):
        return max(self.adj)


def standardize_features(values, fit_stop, n_raw=5):
    """Model-ready features.

    Prices become log ratios to the previous close, volume becomes log volume
    relative to the stock's mean over the fit days; each raw column is then
    z-scored over all stocks and fit days.  Extra (static per-stock) columns
    are z-scored across stocks.
    """
    v = np.asarray(values, dtype=np.float64)
    N, T, D = v.shape
    out = np.empty_like(v)
    prev_close = np.concatenate([v[:, :1, 0], v[:, :-1, 3]], axis=1)
    out[:, :, :4] = np.log(v[:, :, :4] / prev_close[:, :, None])
    lv = np.log1p(v[:, :, 4])
    out[:, :, 4] = lv - lv[:, :fit_stop].mean(axis=1, keepdims=True)
    for c in range(n_raw):
        col = out[:, :fit_stop, c]
        sd = col.std()
        out[:, :, c] = (out[:, :, c] - col.mean()) / sd if sd > 0 else 0.0
    if D > n_raw:
        static = v[:, 0, n_raw:]
        mu, sd = static.mean(axis=0), static.std(axis=0)
        z = np.where(sd > 0, (static - mu) / np.where(sd > 0, sd, 1.0), 0.0)
        out[:, :, n_raw:] = z[:, None, :]
    return out


def prepare_training_data(sequence, feature_values, relations, labels, fit_stop,
                          cct_cfg=None, standardize=True) -> TrainingData:
    feats = standardize_features(feature_values, fit_stop) if standardize else np.asarray(feature_values)
    N, T, _ = feats.shape
    if sequence.n_nodes != N or labels.shape[0] != N:
        raise Misaligned("graphs, features and labels disagree on the number of stocks")
    if sequence.steps and sequence.steps[-1] >= T:
        raise Misaligned("graph steps extend beyond the feature panel")
    adj = {s: g for s, g in zip(sequence.steps, sequence.graphs)}
    a_hat = {s: normalize_adjacency(g) for s, g in adj.items()}
    return TrainingData(adj, a_hat, feats, labels, relations, cct_cfg or ContrastiveConfig())


def prediction_days(data: TrainingData, window: int):
    """Days with a full graph window and a label."""
    first = data.first_step + window - 1
    last = min(data.last_step, data.labels.shape[1] - 1)
    return [t for t in range(first, last + 1) if (data.labels[:, t] >= 0).all()]


def _batches(days, size):
    days = sorted(days)
    out, cur = [], []
    for d in days:
        if cur and (d != cur[-1] + 1 or len(cur) == size):
            out.append(cur)
            cur = []
        cur.append(d)
    if cur:
        out.append(cur)
    return out


def _view_seed(seed, epoch, day, which):
    return np.random.SeedSequence([seed, epoch, day, which])


def encode(state: ModelState, A_hat, X, weights):
    H = ad.tensor(X)
    for W in weights:
        H = gcn_layer(A_hat, H, W)
    return H


def batch_loss(state: ModelState, data: TrainingData, days, epoch=0, window=None):
    """Loss of one mini-batch of consecutive days sharing a single rollout.

    The rollout starts ``window`` steps before the first day from the learned
    initial weights; each day's prediction is read at its own step.
    Returns ``(loss, parts)`` where parts holds the mean L_pred and L_cl.
    """
    cfg = state.cfg
    window = window or cfg.delta
    start = days[0] - window + 1
    if start < data.first_step or days[-1] > data.last_step:
        raise Misaligned(f"days {days[0]}..{days[-1]} need graph steps from {start}")
    use_cl = cfg.use_cct and cfg.lam > 0
    states = state.initial_state()
    day_set = set(days)
    terms, lp_vals, lcl_vals = [], [], []
    cl_terms = []
    for t in range(start, days[-1] + 1):
        A_hat = ad.tensor(data.a_hat[t])
        H, weights, states = state.step(A_hat, ad.tensor(data.features[:, t]), states)
        if use_cl and (t in day_set or cfg.cl_all_steps):
            cl = _step_contrastive(state, data, t, weights, cfg.seed, epoch)
            cl_terms.append(cl)
            lcl_vals.append(cl.item())
        if t in day_set:
            probs = predict(H, state.head_w, state.head_b)
            lp = prediction_loss(probs, data.labels[:, t])
            lp_vals.append(lp.item())
            terms.append(lp)
    loss = terms[0]
    for term in terms[1:]:
        loss = ad.add(loss, term)
    loss = ad.scalar_mul(loss, 1.0 / len(terms))
    if cl_terms:
        cl_sum = cl_terms[0]
        for term in cl_terms[1:]:
            cl_sum = ad.add(cl_sum, term)
        loss = ad.add(loss, ad.scalar_mul(cl_sum, -cfg.lam / len(cl_terms)))
    parts = {"L_pred": float(np.mean(lp_vals)),
             "L_cl": float(np.mean(lcl_vals)) if lcl_vals else 0.0}
    return loss, parts


def _step_contrastive(state, data, t, weights, seed, epoch):
    probs = edge_retention(data.adj[t], data.relations, data.cct)
    X = data.features[:, t]
    views = []
    for which in (0, 1):
        rng = np.random.default_rng(_view_seed(seed, epoch, t, which))
        v_adj, v_x = sample_view(data.adj[t], probs, X, data.cct, rng)
        views.append(encode(state, ad.tensor(normalize_adjacency(v_adj)), v_x, weights))
    return contrastive_loss(views[0], views[1], data.cct.tau, state.projection)


def clip_gradients(params, max_norm):
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * scale
    return total


def train_epoch(state: ModelState, data: TrainingData, days, epoch=0, window=None):
    """One pass of gradient descent over ``days`` in mini-batches.

    Returns ``(state, metrics)`` with mean L_pred, L_cl, total loss and the
    wall-clock seconds of the epoch.
    """
    cfg = state.cfg
    params = state.parameters()
    t0 = time.perf_counter()
    lp, lcl, tot, weights = [], [], [], []
    for batch in _batches(days, cfg.batch_days):
        with ad.Tape() as tape:
            loss, parts = batch_loss(state, data, batch, epoch, window)
        ad.backward(loss)
        tape.clear()
        for p in params:
            if p.grad is None:  # e.g. the projection when the contrastive term is off
                p.grad = np.zeros_like(p.data)
        clip_gradients(params, cfg.clip_norm)
        for p in params:
            p.data -= cfg.learning_rate * p.grad
            p.grad = None
        lp.append(parts["L_pred"])
        lcl.append(parts["L_cl"])
        tot.append(loss.item())
        weights.append(len(batch))
    seconds = time.perf_counter() - t0
    w = np.asarray(weights, dtype=np.float64)
    metrics = {"epoch": epoch, "L_pred": float(np.average(lp, weights=w)),
               "L_cl": float(np.average(lcl, weights=w)), "total": float(np.average(tot, weights=w)),
               "seconds": max(seconds, 1e-9)}
    return state, metrics


def predict_days(state: ModelState, data: TrainingData, days, window=None):
    """{day: N x 2 probabilities} computed without recording a tape."""
    cfg = state.cfg
    window = window or cfg.delta
    out = {}
    for batch in _batches(days, cfg.batch_days):
        states = state.initial_state()
        for t in range(batch[0] - window + 1, batch[-1] + 1):
            H, _, states = state.step(ad.tensor(data.a_hat[t]), ad.tensor(data.features[:, t]), states)
            if t in batch:
                out[t] = predict(H, state.head_w, state.head_b).data
    return out


def fit(state: ModelState, data: TrainingData, days, epochs=None, window=None, log=None):
    epochs = state.cfg.epochs if epochs is None else epochs
    history = []
    for epoch in range(epochs):
        _, metrics = train_epoch(state, data, days, epoch, window)
        history.append(metrics)
        if log is not None:
            log(metrics)
    return history
