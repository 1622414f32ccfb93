"""Metrics, the synthetic planted-signal market, experiment/sweep/ablation runners."""
from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .cct import ContrastiveConfig
from .config import RunConfig
from .data import RelationTensor, StockPanel, movement_labels, split_chronological, split_days
from .enhance import compute_splits, enhance, raw_features
from .errors import EmptyEvaluation
from .graphs import build_graph_sequence, calibrate_exponent

log = logging.getLogger(__name__)

ABLATIONS = (
    ("full", True, True),
    ("w/o EE", False, True),
    ("w/o CCT", True, False),
    ("w/o EE & CCT", False, False),
)


# ------------------------------------------------------------------ metrics

@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def confusion_counts(predictions, labels) -> ConfusionCounts:
    p = np.asarray(predictions).astype(bool).reshape(-1)
    y = np.asarray(labels).astype(bool).reshape(-1)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    return ConfusionCounts(int((p & y).sum()), int((~p & ~y).sum()),
                           int((p & ~y).sum()), int((~p & y).sum()))


def metrics(counts: ConfusionCounts):
    """(accuracy, F1 of the up class, MCC); MCC is 0 when its denominator is 0."""
    tp, tn, fp, fn = counts.tp, counts.tn, counts.fp, counts.fn
    total = tp + tn + fp + fn
    if total <= 0:
        raise EmptyEvaluation("no evaluated windows")
    acc = (tp + tn) / total
    f1_den = 2 * tp + fp + fn
    f1 = 2 * tp / f1_den if f1_den else 0.0
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(den) if den else 0.0
    return acc, f1, mcc


def evaluate_predictions(predictions, labels):
    """Metrics plus a recount check that the counts cover every sample."""
    counts = confusion_counts(predictions, labels)
    if counts.total != np.asarray(labels).size:
        raise AssertionError("confusion counts do not cover every sample")
    acc, f1, mcc = metrics(counts)
    return {"accuracy": acc, "f1": f1, "mcc": mcc, "n": counts.total, "counts": counts}


# ---------------------------------------------------------------- synthetic

def synth_generate(n_nodes=20, n_days=120, seed=0, planted_signal_strength=0.8,
                   n_communities=4, delta=20, volume_noise=0.5):
    """Geometric random walks with a planted, graph-visible next-day signal.

    Nodes are split into communities; each community has a latent direction
    f[g, t] in {-1, +1} that shows up in day t's log volume of its members
    (so their volume ratios co-move and DTW tends to link them) and drives
    the sign of their day t+1 return.  Community 0 is contrarian (its
    returns move against its volume cue), so per-stock identity matters.
    Members of a community share one relation type; ``volume_noise`` sets
    how often DTW also links unrelated stocks.  With strength 0 volumes and
    returns are pure noise.
    """
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    if n_days < delta + 10:
        raise ValueError(f"n_days must be >= delta + 10 = {delta + 10}")
    s = float(planted_signal_strength)
    if not 0 <= s <= 1:
        raise ValueError("planted_signal_strength must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    G = max(1, min(n_communities, n_nodes // 2))
    community = np.arange(n_nodes) % G
    polarity = np.where(np.arange(G) == 0, -1.0, 1.0)
    direction = rng.choice([-1.0, 1.0], size=(G, n_days))
    sigma = 0.02

    base_vol = rng.uniform(np.log(2e5), np.log(2e6), n_nodes)
    vol_noise = rng.normal(size=(n_nodes, n_days))
    log_vol = base_vol[:, None] + 0.4 * (s * direction[community] + volume_noise * vol_noise)
    volume = np.round(np.exp(log_vol))

    eps = rng.normal(size=(n_nodes, n_days))
    ret = np.zeros((n_nodes, n_days))
    drive = polarity[community][:, None] * direction[community][:, :-1]
    ret[:, 1:] = sigma * (s * drive + (1 - s) * eps[:, 1:])
    close = rng.uniform(20, 200, n_nodes)[:, None] * np.exp(np.cumsum(ret, axis=1))
    prev = np.concatenate([close[:, :1] * np.exp(-ret[:, :1]), close[:, :-1]], axis=1)
    open_ = prev * np.exp(0.2 * sigma * rng.normal(size=(n_nodes, n_days)))
    high = np.maximum(open_, close) * np.exp(np.abs(0.5 * sigma * rng.normal(size=(n_nodes, n_days))))
    low = np.minimum(open_, close) * np.exp(-np.abs(0.5 * sigma * rng.normal(size=(n_nodes, n_days))))
    values = np.stack([open_, high, low, close, volume], axis=2)

    width = len(str(n_nodes - 1))
    tickers = [f"S{i:0{width}d}" for i in range(n_nodes)]
    start = _dt.date(2013, 1, 2)
    dates, day = [], start
    while len(dates) < n_days:
        if day.weekday() < 5:
            dates.append(day.isoformat())
        day += _dt.timedelta(days=1)
    panel = StockPanel(tickers, dates, values).validate()

    names = [f"sector_{g}" for g in range(G)] + [f"industry_{k}" for k in range(3)]
    entries = np.zeros((n_nodes, n_nodes, len(names)), dtype=np.uint8)
    for g in range(G):
        members = np.flatnonzero(community == g)
        for a in members:
            for b in members:
                if a != b:
                    entries[a, b, g] = 1
    for k in range(3):
        pairs = rng.random((n_nodes, n_nodes)) < 0.08
        pairs = np.triu(pairs, 1)
        pairs = pairs | pairs.T
        entries[:, :, G + k] = pairs
    return panel, RelationTensor(entries, names)


# --------------------------------------------------------------- experiment

@dataclass
class ExperimentResult:
    config: RunConfig
    history: list
    scores: dict
    days: dict
    edge_budget: int
    s: float
    state: object = None
    extra: dict = field(default_factory=dict)


def zipf_exponent(cfg: RunConfig) -> float:
    s = cfg["graph.s"]
    if s is None:
        s = calibrate_exponent(cfg["graph.target_nodes"], cfg["graph.target_edges"])
    return float(s)


def train_config(cfg: RunConfig, in_width=None) -> mdl.TrainConfig:
    lam = cfg["train.lambda"] if cfg["cct.enabled"] else 0.0
    return mdl.TrainConfig(
        delta=cfg["graph.delta"], lam=lam, learning_rate=cfg["train.learning_rate"],
        epochs=cfg["train.epochs"], hidden_width=cfg["model.hidden_width"],
        embed_width=cfg["model.embed_width"], cell_kind=cfg["model.cell_kind"],
        cell_layers=cfg["model.cell_layers"], evolve_variant=cfg["model.evolve_variant"],
        batch_days=cfg["train.batch_days"], clip_norm=cfg["train.clip_norm"],
        use_cct=cfg["cct.enabled"], cl_all_steps=cfg["train.cl_all_steps"], seed=cfg["run.seed"])


def contrastive_config(cfg: RunConfig) -> ContrastiveConfig:
    return ContrastiveConfig(p_e=cfg["cct.p_e"], p_tau=cfg["cct.p_tau"], tau=cfg["cct.tau"],
                             euler_factor=cfg["cct.euler_factor"], p_f=cfg["cct.p_f"])


def model_days(n_days, delta, window=None):
    """First and last prediction day with a full graph window and a label."""
    window = window or delta
    return delta + window - 1, n_days - 2


def plan_splits(n_days, cfg: RunConfig):
    first, last = model_days(n_days, cfg["graph.delta"], cfg["model.window"])
    fr = (cfg["split.train"], cfg["split.valid"], cfg["split.test"])
    return split_chronological(range(first, last + 1), fr)


def build_features(panel, cfg: RunConfig, fit_stop):
    if not cfg["enhance.enabled"]:
        return raw_features(panel)
    splits = compute_splits(panel, stop=fit_stop, k0=cfg["enhance.k0"], min_len=cfg["enhance.min_len"],
                            max_len=cfg["enhance.max_len"], metric=cfg["enhance.metric"],
                            m=cfg["enhance.m"], grid=cfg["enhance.grid"])
    return enhance(panel, splits, m=cfg["enhance.m"], eps=cfg["enhance.eps"])


def label_matrix(panel):
    labels = np.full((panel.n_stocks, panel.n_days), -1, dtype=np.int64)
    labels[:, :-1] = movement_labels(panel)
    return labels


def score_days(state, data, days, window=None):
    if not days:
        return None
    probs = mdl.predict_days(state, data, days, window)
    preds = np.concatenate([probs[t].argmax(axis=1) for t in days])
    labels = np.concatenate([data.labels[:, t] for t in days])
    return evaluate_predictions(preds, labels)


def run_experiment(panel: StockPanel, relations: RelationTensor, cfg: RunConfig,
                   graphs=None, features=None, log_fn=None) -> ExperimentResult:
    """Build graphs and features, train, and score train/valid/test days."""
    delta = cfg["graph.delta"]
    s = zipf_exponent(cfg)
    if graphs is None:
        graphs = build_graph_sequence(panel, delta, s, cfg["graph.band"], cfg["graph.volume_cap"])
    splits = plan_splits(panel.n_days, cfg)
    fit_stop = splits.train.stop
    if features is None:
        features = build_features(panel, cfg, fit_stop)
    tcfg = train_config(cfg)
    data = mdl.prepare_training_data(graphs, features.values, relations, label_matrix(panel),
                                     fit_stop, contrastive_config(cfg))
    state = mdl.ModelState(data.features.shape[2], tcfg)
    window = cfg["model.window"]
    days = {name: split_days(splits, name) for name in ("train", "valid", "test")}
    history = mdl.fit(state, data, days["train"], tcfg.epochs, window, log_fn)
    scores = {name: score_days(state, data, d, window) for name, d in days.items()}
    return ExperimentResult(cfg, history, scores, days, graphs.edge_budget, s, state,
                            {"splits": splits, "features": features, "graphs": graphs})


# -------------------------------------------------------------------- sweep

@dataclass
class SweepResult:
    grid: list
    scores: list
    errors: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.grid)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["p_e", "p_tau", "f1"])
            for (pe, pt), f1 in zip(self.grid, self.scores):
                w.writerow([pe, pt, f1])


def sweep_grid(values=(0.1, 0.3, 0.5, 0.7, 0.9), p_tau_values=None):
    p_tau_values = values if p_tau_values is None else p_tau_values
    return [(float(pe), float(pt)) for pe in values for pt in p_tau_values]


def _sweep_cell(args):
    panel, relations, cfg, pe, pt, graphs, features = args
    try:
        res = run_experiment(panel, relations, cfg.with_values({"cct.p_e": pe, "cct.p_tau": pt}),
                             graphs=graphs, features=features)
        return res.scores["valid"]["f1"], None
    except Exception as exc:  # recorded per cell, not fatal
        return float("nan"), f"{type(exc).__name__}: {exc}"


def run_sweep(panel, relations, base_cfg: RunConfig, grid=None, workers=1) -> SweepResult:
    """Validation F1 for every (p_e, p_tau) cell, all sharing one seed."""
    grid = sweep_grid(base_cfg["sweep.values"]) if grid is None else [tuple(g) for g in grid]
    for pe, pt in grid:
        if not (0 < pe < 1 and 0 < pt < 1):
            raise ValueError(f"grid value ({pe}, {pt}) outside (0, 1)")
    # graphs and features do not depend on p_e / p_tau
    s = zipf_exponent(base_cfg)
    graphs = build_graph_sequence(panel, base_cfg["graph.delta"], s, base_cfg["graph.band"],
                                  base_cfg["graph.volume_cap"])
    features = build_features(panel, base_cfg, plan_splits(panel.n_days, base_cfg).train.stop)
    jobs = [(panel, relations, base_cfg, pe, pt, graphs, features) for pe, pt in grid]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_sweep_cell, jobs))
    else:
        outcomes = [_sweep_cell(j) for j in jobs]
    result = SweepResult(list(grid), [o[0] for o in outcomes])
    for cell, (_, err) in zip(grid, outcomes):
        if err is not None:
            log.warning("sweep cell %s failed: %s", cell, err)
            result.errors[cell] = err
    return result


# ----------------------------------------------------------------- ablation

@dataclass
class AblationTable:
    rows: list
    per_seed: dict
    split: str

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"# {self.split} split; mean and sample std over seeds"])
            w.writerow(["variant", "accuracy", "accuracy_std", "f1", "f1_std", "mcc", "mcc_std", "n_seeds"])
            for r in self.rows:
                w.writerow([r["variant"], r["accuracy"], r["accuracy_std"], r["f1"], r["f1_std"],
                            r["mcc"], r["mcc_std"], r["n_seeds"]])


class _FixedData:
    # picklable stand-in for ``lambda seed: data`` so worker processes can use it
    def __init__(self, data):
        self.data = data

    def __call__(self, _seed):
        return self.data


def _ablation_cell(args):
    name, ee, cct, cfg, seed, make_data = args
    panel, relations = make_data(seed)
    run_cfg = cfg.with_values({"enhance.enabled": ee, "cct.enabled": cct, "run.seed": seed})
    if not cct:
        run_cfg = run_cfg.with_values({"train.lambda": 0.0})
    res = run_experiment(panel, relations, run_cfg)
    return name, seed, res.scores


def run_ablation(cfg: RunConfig, data=None, seeds=None, split="valid", make_data=None,
                 workers=1) -> AblationTable:
    """Four runs per seed differing only in the EE and CCT toggles.

    Either pass a fixed ``data=(panel, relations)`` or ``make_data(seed)``
    to regenerate the market for every seed.
    """
    seeds = list(cfg["ablation.seeds"] if seeds is None else seeds)
    if make_data is None:
        if data is None:
            raise ValueError("run_ablation needs data or make_data")
        make_data = _FixedData(data)
    jobs = [(name, ee, cct, cfg, seed, make_data) for seed in seeds for name, ee, cct in ABLATIONS]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_ablation_cell, jobs))
    else:
        outcomes = [_ablation_cell(j) for j in jobs]
    per_seed = {name: {} for name, _, _ in ABLATIONS}
    for name, seed, scores in outcomes:
        per_seed[name][seed] = scores
    rows = []
    for name, _, _ in ABLATIONS:
        vals = {k: [per_seed[name][s][split][k] for s in seeds] for k in ("accuracy", "f1", "mcc")}
        row = {"variant": name, "n_seeds": len(seeds)}
        for k, v in vals.items():
            row[k] = float(np.mean(v))
            row[f"{k}_std"] = float(np.std(v, ddof=1)) if len(v) > 1 else 0.0
        rows.append(row)
    return AblationTable(rows, per_seed, split)


def write_metrics_csv(scores: dict, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "accuracy", "f1", "mcc", "n"])
        for name in ("train", "valid", "test"):
            sc = scores.get(name)
            if sc is not None:
                w.writerow([name, sc["accuracy"], sc["f1"], sc["mcc"], sc["n"]])


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "L_pred", "L_cl", "total", "seconds"])
        for h in history:
            w.writerow([h["epoch"], h["L_pred"], h["L_cl"], h["total"], h["seconds"]])
