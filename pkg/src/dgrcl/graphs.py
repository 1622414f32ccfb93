"""Dynamic stock graphs from DTW costs of volume volatility under a Zipf edge budget."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .data import StockPanel
from .errors import EmptySeries, NoRoot, TooShort

VOLUME_RATIO_CAP = 10.0
S_RANGE = (0.01, 10.0)


@dataclass
class CostMatrix:
    step: int
    costs: np.ndarray


@dataclass
class DynamicGraphSequence:
    """Binary symmetric adjacency per step; ``steps[k]`` is the day of ``graphs[k]``."""

    graphs: list
    edge_budget: int
    steps: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.graphs)

    @property
    def n_nodes(self):
        return self.graphs[0].shape[0] if self.graphs else self.meta.get("n_nodes", 0)

    def at(self, day):
        return self.graphs[day - self.steps[0]]

    def edges(self, k):
        i, j = np.nonzero(np.triu(self.graphs[k], 1))
        return list(zip(i.tolist(), j.tolist()))

    def save(self, path):
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        for old in out.glob("edges_*.csv"):
            old.unlink()
        for k, step in enumerate(self.steps):
            with open(out / f"edges_{step:05d}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "i", "j"])
                for i, j in self.edges(k):
                    w.writerow([step, i, j])
        manifest = {"n_nodes": int(self.n_nodes), "budget": int(self.edge_budget),
                    "s": self.meta.get("s"), "delta": self.meta.get("delta"),
                    "steps": [int(s) for s in self.steps]}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        src = Path(path)
        manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
        n = manifest["n_nodes"]
        graphs = []
        for step in manifest["steps"]:
            a = np.zeros((n, n))
            with open(src / f"edges_{step:05d}.csv", newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                next(reader)
                for row in reader:
                    i, j = int(row[1]), int(row[2])
                    a[i, j] = a[j, i] = 1.0
            graphs.append(a)
        meta = {k: manifest[k] for k in ("s", "delta", "n_nodes")}
        return cls(graphs, manifest["budget"], list(manifest["steps"]), meta)


# ------------------------------------------------------------------- signals

def volume_volatility(panel: StockPanel, cap: float = VOLUME_RATIO_CAP) -> np.ndarray:
    """``vol[t+1] / vol[t]`` per stock; 0/x -> 0, x/0 -> cap, 0/0 -> 1."""
    vol = panel.volume
    num, den = vol[:, 1:], vol[:, :-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num / den
    ratio = np.where(den == 0, np.where(num == 0, 1.0, cap), ratio)
    return ratio


def dtw_cost(a, b, band=None) -> float:
    """Classic DTW with |a_i - b_j| local cost and match/insert/delete steps."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptySeries("DTW needs two non-empty series")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("DTW series must be finite")
    return float(_kernels.dtw(a, b, -1 if band is None else int(band)))


def build_cost_matrices(signals, delta: int, band=None) -> list:
    """One cost matrix per step t in [delta, T-1] for an N x (T-1) signal.

    The matrix at step t compares the windows of signal indices
    ``t-delta .. t-1``, i.e. volume ratios of days ``t-delta+1 .. t``.
    """
    signals = np.ascontiguousarray(signals, dtype=np.float64)
    if signals.ndim != 2:
        raise ValueError("signals must be an N x (T-1) matrix")
    if delta < 1 or signals.shape[1] < delta:
        raise TooShort(f"signal length {signals.shape[1]} shorter than delta {delta}")
    stack = _kernels.dtw_cost_matrices(signals, int(delta), -1 if band is None else int(band))
    return [CostMatrix(step=s + delta, costs=stack[s]) for s in range(stack.shape[0])]


# ---------------------------------------------------------------------- zipf

def zipf_pmf(n_outcomes: int, s: float) -> np.ndarray:
    n = np.arange(1, n_outcomes + 1, dtype=np.float64)
    w = n ** -s
    return w / math.fsum(w)


def zipf_expected_edges(n_nodes: int, s: float) -> float:
    """Expectation of a Zipf(s) variable over outcomes 1..n_nodes."""
    if n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    if s <= 0:
        raise ValueError("s must be positive")
    n = np.arange(1, n_nodes + 1, dtype=np.float64)
    w = n ** -s
    return math.fsum(n * w) / math.fsum(w)


def calibrate_exponent(n_nodes: int, target_edges: float, tol: float = 0.5) -> float:
    """Bisect s in (0.01, 10) so that E(X) matches ``target_edges`` within ``tol``.

    E(X) decreases monotonically in s, from near (N+1)/2 down to near 1.
    """
    lo, hi = S_RANGE
    e_lo, e_hi = zipf_expected_edges(n_nodes, lo), zipf_expected_edges(n_nodes, hi)
    if not (e_hi - tol <= target_edges <= e_lo + tol):
        raise NoRoot(f"{target_edges} edges unreachable for {n_nodes} nodes "
                     f"(range {e_hi:.3f}..{e_lo:.3f})")
    if target_edges >= e_lo:
        return lo
    if target_edges <= e_hi:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        e = zipf_expected_edges(n_nodes, mid)
        if e > target_edges:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def edge_budget(n_nodes: int, s: float) -> int:
    return int(round(zipf_expected_edges(n_nodes, s)))


# --------------------------------------------------------------- thresholding

def select_edges(costs, budget: int):
    """The ``budget`` lowest-cost pairs i<j; ties go to the smaller (i, j)."""
    n = costs.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    if budget <= 0 or len(iu) == 0:
        return iu[:0], ju[:0]
    order = np.lexsort((ju, iu, costs[iu, ju]))[:budget]
    return iu[order], ju[order]


def threshold_graphs(costs: list, budget: int, meta=None) -> DynamicGraphSequence:
    if budget < 0:
        raise ValueError("budget must be >= 0")
    graphs, steps = [], []
    for cm in costs:
        n = cm.costs.shape[0]
        a = np.zeros((n, n))
        i, j = select_edges(cm.costs, budget)
        a[i, j] = 1.0
        a[j, i] = 1.0
        graphs.append(a)
        steps.append(int(cm.step))
    meta = dict(meta or {})
    if costs:
        meta.setdefault("n_nodes", costs[0].costs.shape[0])
    return DynamicGraphSequence(graphs, int(budget), steps, meta)


def build_graph_sequence(panel: StockPanel, delta: int, s: float, band=None,
                         cap: float = VOLUME_RATIO_CAP) -> DynamicGraphSequence:
    signals = volume_volatility(panel, cap)
    costs = build_cost_matrices(signals, delta, band)
    budget = edge_budget(panel.n_stocks, s)
    return threshold_graphs(costs, budget, {"s": s, "delta": delta, "n_nodes": panel.n_stocks})
