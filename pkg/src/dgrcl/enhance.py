"""Spectral period splitting and regime-pooled feature enhancement.

Each stock's close series is cut into its most mutually dissimilar periods
(distance between FFT magnitude summaries), every period is tagged as
rising, falling or fluctuating, and the per-regime mean summaries are
appended to the stock's raw OHLCV rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .data import CLOSE, StockPanel
from .errors import Infeasible, UnknownMetric

REGIMES = ("rising", "falling", "fluctuating")
METRICS = ("euclidean", "js")


@dataclass
class PeriodSplit:
    k: int
    boundaries: list
    objective: float

    def periods(self):
        return list(zip(self.boundaries[:-1], self.boundaries[1:]))


@dataclass
class EnhancedPanel:
    values: np.ndarray
    m: int
    regime_tags: list = field(default_factory=list)
    splits: list = field(default_factory=list)

    @property
    def n_features(self):
        return self.values.shape[2]

    def save(self, path):
        """Little-endian float64 payload after an int64 header (N, T, D', m)."""
        path = Path(path)
        n, t, d = self.values.shape
        with open(path, "wb") as fh:
            fh.write(np.array([n, t, d, self.m], dtype="<i8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        sidecar = {
            "m": self.m,
            "stocks": [
                {"boundaries": [int(b) for b in sp.boundaries], "k": sp.k,
                 "objective": sp.objective, "regimes": tags}
                for sp, tags in zip(self.splits, self.regime_tags)
            ],
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        path = Path(path)
        raw = path.read_bytes()
        n, t, d, m = np.frombuffer(raw[:32], dtype="<i8").tolist()
        values = np.frombuffer(raw[32:], dtype="<f8").reshape(n, t, d).copy()
        side = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
        splits = [PeriodSplit(s["k"], s["boundaries"], s["objective"]) for s in side["stocks"]]
        return cls(values, m, [s["regimes"] for s in side["stocks"]], splits)


# ----------------------------------------------------------------- spectrum

def _next_pow2(n):
    p = 1
    while p < n:
        p <<= 1
    return p


def fft_magnitude(segment, m: int = 8) -> np.ndarray:
    """First ``m`` DFT magnitudes of the mean-removed segment, unit L2 norm.

    The segment is zero-padded to the next power of two that is at least
    ``2m``.  Constant segments (and single samples) give the zero vector.
    """
    x = np.asarray(segment, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("segment must be non-empty")
    x = x - x.mean()
    scale = max(1.0, float(np.abs(segment).max()))
    if np.abs(x).max() <= 1e-12 * scale:
        return np.zeros(m)
    n = _next_pow2(max(x.size, 2 * m))
    buf = np.zeros(n, dtype=np.complex128)
    buf[: x.size] = x
    mags = np.abs(_kernels.fft_radix2(buf))[:m]
    mags[0] = 0.0  # DC is zero by construction after mean removal
    norm = np.sqrt((mags * mags).sum())
    return mags / norm if norm > 0 else np.zeros(m)


def segment_summary(segment, m: int = 8) -> np.ndarray:
    """Summary of a (length,) or (length, channels) segment; channels are averaged."""
    seg = np.asarray(segment, dtype=np.float64)
    if seg.ndim == 1:
        return fft_magnitude(seg, m)
    pooled = np.mean([fft_magnitude(seg[:, c], m) for c in range(seg.shape[1])], axis=0)
    norm = np.sqrt((pooled * pooled).sum())
    return pooled / norm if norm > 0 else pooled


def distribution_distance(a, b, metric: str = "euclidean") -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("summaries must have the same length")
    if metric == "euclidean":
        return float(np.sqrt(((a - b) ** 2).sum()))
    if metric == "js":
        p, q = _as_distribution(a), _as_distribution(b)
        mid = 0.5 * (p + q)
        return float(0.5 * _kl(p, mid) + 0.5 * _kl(q, mid))
    raise UnknownMetric(f"unknown metric {metric!r}; expected one of {METRICS}")


def _as_distribution(v):
    total = v.sum()
    return v / total if total > 0 else np.full(v.shape, 1.0 / v.size)


def _kl(p, q):
    nz = p > 0
    return (p[nz] * np.log(p[nz] / q[nz])).sum()


# ----------------------------------------------------------- period search

def split_objective(series, boundaries, metric="euclidean", m=8, _cache=None) -> float:
    """(1/k) * sum over ordered pairs i != j of d(FFT(seg_i), FFT(seg_j))."""
    x = np.asarray(series, dtype=np.float64)
    k = len(boundaries) - 1
    if k < 2:
        return 0.0
    sums = []
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        key = (a, b)
        if _cache is not None and key in _cache:
            sums.append(_cache[key])
            continue
        s = segment_summary(x[a:b], m)
        if _cache is not None:
            _cache[key] = s
        sums.append(s)
    total = 0.0
    for i in range(k):
        for j in range(i + 1, k):
            total += distribution_distance(sums[i], sums[j], metric)
    return 2.0 * total / k


def split_periods(series, k0: int = 5, min_len: int = 10, max_len=None,
                  metric: str = "euclidean", m: int = 8, grid: int = 5) -> PeriodSplit:
    """Greedy grid search for the most dissimilar periods.

    Boundaries are restricted to multiples of ``grid``.  The best single cut
    is chosen first, then the best additional cut, up to ``k0`` segments;
    every intermediate split keeps segments longer than ``min_len`` and the
    best split whose segments also stay shorter than ``max_len`` wins.
    ``max_len`` defaults to half the series length.
    """
    x = np.asarray(series, dtype=np.float64)
    T = x.shape[0]
    if metric not in METRICS:
        raise UnknownMetric(f"unknown metric {metric!r}")
    if k0 < 2:
        raise ValueError("k0 must be >= 2")
    if max_len is None:
        max_len = T / 2
    if T <= 2 * (min_len + 1):
        raise Infeasible(f"series of length {T} cannot hold two periods longer than {min_len}")

    def admissible(bounds):
        return all(min_len < b - a < max_len for a, b in zip(bounds[:-1], bounds[1:]))

    cache: dict = {}
    candidates = list(range(grid, T, grid))
    bounds = [0, T]
    best = None
    if admissible(bounds):
        best = PeriodSplit(1, list(bounds), 0.0)
    for k in range(2, k0 + 1):
        pick, pick_obj = None, -np.inf
        for c in candidates:
            if c in bounds:
                continue
            trial = sorted(bounds + [c])
            if any(b - a <= min_len for a, b in zip(trial[:-1], trial[1:])):
                continue
            obj = split_objective(x, trial, metric, m, cache)
            if obj > pick_obj:
                pick, pick_obj = trial, obj
        if pick is None:
            break
        bounds = pick
        if admissible(bounds) and (best is None or pick_obj > best.objective):
            best = PeriodSplit(k, list(bounds), float(pick_obj))
    if best is None:
        raise Infeasible(f"no split of length {T} satisfies {min_len} < length < {max_len}")
    return best


def regime_label(panel: StockPanel, stock: int, period, eps: float = 0.02) -> str:
    a, b = period
    if b <= a:
        raise ValueError("period must be non-empty")
    close = panel.values[stock, a:b, CLOSE]
    ret = float(np.log(close[-1] / close[0]))
    if ret > eps:
        return "rising"
    if ret < -eps:
        return "falling"
    return "fluctuating"


# ------------------------------------------------------------- enhancement

def compute_splits(panel: StockPanel, stop=None, k0=5, min_len=10, max_len=None,
                   metric="euclidean", m=8, grid=5) -> list:
    """Per-stock period splits of the close series over days ``[0, stop)``."""
    stop = panel.n_days if stop is None else int(stop)
    return [split_periods(panel.values[i, :stop, CLOSE], k0, min_len, max_len, metric, m, grid)
            for i in range(panel.n_stocks)]


def enhance(panel: StockPanel, splits: list, m: int = 8, eps: float = 0.02) -> EnhancedPanel:
    """Append per-regime mean spectral summaries (3m values) to every day.

    ``splits`` may cover only a prefix of the timeline (e.g. the training
    days); the resulting per-stock block is repeated on all days.
    """
    N, T, D = panel.values.shape
    if len(splits) != N:
        raise ValueError(f"need one split per stock, got {len(splits)} for {N}")
    extra = np.zeros((N, 3 * m))
    tags = []
    for i, sp in enumerate(splits):
        if sp.boundaries[-1] > T:
            raise ValueError(f"split of stock {i} extends past the panel")
        pooled = {r: [] for r in REGIMES}
        stock_tags = []
        for period in sp.periods():
            label = regime_label(panel, i, period, eps)
            stock_tags.append(label)
            a, b = period
            pooled[label].append(segment_summary(panel.values[i, a:b, :], m))
        for r, regime in enumerate(REGIMES):
            if pooled[regime]:
                extra[i, r * m:(r + 1) * m] = np.mean(pooled[regime], axis=0)
        tags.append(stock_tags)
    values = np.concatenate([panel.values, np.repeat(extra[:, None, :], T, axis=1)], axis=2)
    return EnhancedPanel(values, m, tags, list(splits))


def raw_features(panel: StockPanel) -> EnhancedPanel:
    """Feature panel with enhancement switched off (D' = 5)."""
    return EnhancedPanel(panel.values.copy(), 0, [[] for _ in range(panel.n_stocks)],
                         [PeriodSplit(1, [0, panel.n_days], 0.0) for _ in range(panel.n_stocks)])
