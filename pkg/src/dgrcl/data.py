"""OHLCV panels, relation tensors, movement labels and chronological splits."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (BadFractions, CalendarMismatch, EmptySplit, MalformedRow,
                     NegativePrice, SelfRelation, TooShort, UnknownTicker)

log = logging.getLogger(__name__)

FEATURES = ("open", "high", "low", "close", "volume")
OPEN, HIGH, LOW, CLOSE, VOLUME = range(5)
PRICE_HEADER = ["date", *FEATURES]
RELATION_HEADER = ["ticker_a", "ticker_b", "relation"]
MAX_MISSING_FRACTION = 0.2


@dataclass
class StockPanel:
    """``values[i, t, :]`` holds (open, high, low, close, volume) of stock i on day t."""

    tickers: list
    dates: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def n_stocks(self):
        return self.values.shape[0]

    @property
    def n_days(self):
        return self.values.shape[1]

    @property
    def close(self):
        return self.values[:, :, CLOSE]

    @property
    def volume(self):
        return self.values[:, :, VOLUME]

    def validate(self):
        v = self.values
        if v.ndim != 3 or v.shape[2] != len(FEATURES):
            raise MalformedRow(f"panel values must be N x T x 5, got {v.shape}")
        if v.shape[0] != len(self.tickers) or v.shape[1] != len(self.dates):
            raise MalformedRow("panel axes do not match tickers/dates")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise MalformedRow("dates must be strictly increasing")
        if not np.isfinite(v).all():
            raise MalformedRow("panel contains missing or non-finite cells")
        if (v[:, :, :4] <= 0).any() or (v[:, :, VOLUME] < 0).any():
            raise NegativePrice("prices must be positive and volume non-negative")
        o, h, lo, c = (v[:, :, k] for k in (OPEN, HIGH, LOW, CLOSE))
        if (h < np.maximum(o, c)).any() or (lo > np.minimum(o, c)).any():
            raise MalformedRow("high/low inconsistent with open/close")
        return self

    def subset_days(self, stop):
        return StockPanel(list(self.tickers), list(self.dates[:stop]), self.values[:, :stop].copy())


@dataclass
class RelationTensor:
    """Symmetric binary N x N x R relation indicators with zero diagonal."""

    entries: np.ndarray
    relation_names: list

    @property
    def n_relations(self):
        return len(self.relation_names)

    def counts(self):
        """N x N matrix of shared relation counts."""
        return self.entries.sum(axis=2, dtype=np.int64)


@dataclass
class LabeledWindowSet:
    """All (stock, end-day) windows with their next-day movement label.

    A window ending at day ``t`` covers days ``t - delta + 1 .. t``; valid
    end days are ``delta .. T - 2`` so the first ratio of the window's
    volume signal and the label day ``t + 1`` both exist.
    """

    panel: StockPanel
    delta: int
    stocks: np.ndarray
    end_days: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def window(self, k):
        i, t = int(self.stocks[k]), int(self.end_days[k])
        return self.panel.values[i, t - self.delta + 1:t + 1]

    def label_matrix(self):
        """N x T array of labels (-1 where no window ends)."""
        out = np.full((self.panel.n_stocks, self.panel.n_days), -1, dtype=np.int64)
        out[self.stocks, self.end_days] = self.labels
        return out


@dataclass
class Splits:
    train: range
    valid: range
    test: range
    meta: dict = field(default_factory=dict)

    def as_dict(self):
        def span(r):
            return [r.start, r.stop - 1]
        return {"train": span(self.train), "valid": span(self.valid), "test": span(self.test)}

    def to_json(self, path):
        Path(path).write_text(json.dumps({**self.as_dict(), **self.meta}, indent=2) + "\n", encoding="utf-8")

    def which(self, day):
        for name in ("train", "valid", "test"):
            if day in getattr(self, name):
                return name
        return None


# ------------------------------------------------------------------ ingestion

def _read_price_file(path):
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != PRICE_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(PRICE_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise MalformedRow(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                day = _dt.date.fromisoformat(row[0].strip()).isoformat()
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise MalformedRow(f"{path}:{lineno}: non-finite value")
            if min(vals[:4]) <= 0 or vals[4] < 0:
                raise NegativePrice(f"{path}:{lineno}: non-positive price or negative volume")
            if day in rows:
                raise MalformedRow(f"{path}:{lineno}: duplicate date {day}")
            rows[day] = vals
    if not rows:
        raise MalformedRow(f"{path}: no data rows")
    return rows


def load_panel(path) -> StockPanel:
    """Read one ``<TICKER>.csv`` per stock from ``path`` and align them.

    The calendar is every date seen in any file inside the overlap of all
    files' date ranges.  Gaps are forward-filled from the previous close with
    zero volume; stocks missing more than 20% of calendar days are dropped.
    """
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() == ".csv")
    if not files:
        raise CalendarMismatch(f"no CSV files in {path}")
    data = {p.stem: _read_price_file(p) for p in files}
    start = max(min(r) for r in data.values())
    stop = min(max(r) for r in data.values())
    if start > stop:
        raise CalendarMismatch("ticker date ranges do not overlap")
    calendar = sorted({d for r in data.values() for d in r if start <= d <= stop})

    tickers, blocks = [], []
    for ticker in sorted(data):
        rows = data[ticker]
        missing = sum(d not in rows for d in calendar)
        if missing > MAX_MISSING_FRACTION * len(calendar):
            log.warning("dropping %s: %d of %d calendar days missing", ticker, missing, len(calendar))
            continue
        before = [d for d in rows if d < start]
        last = rows[max(before)] if before else None
        block = np.empty((len(calendar), 5))
        for k, day in enumerate(calendar):
            if day in rows:
                last = rows[day]
                block[k] = last
            else:
                c = last[CLOSE]
                block[k] = (c, c, c, c, 0.0)
        tickers.append(ticker)
        blocks.append(block)
    if not tickers:
        raise CalendarMismatch("every ticker was dropped for missing days")
    return StockPanel(tickers, calendar, np.stack(blocks)).validate()


def write_panel(panel: StockPanel, path):
    """Inverse of :func:`load_panel`: one CSV per ticker."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for i, ticker in enumerate(panel.tickers):
        with open(out / f"{ticker}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(PRICE_HEADER)
            for t, day in enumerate(panel.dates):
                w.writerow([day, *(repr(float(x)) for x in panel.values[i, t])])


def load_relations(path, tickers) -> RelationTensor:
    index = {t: k for k, t in enumerate(tickers)}
    triples = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != RELATION_HEADER:
            raise MalformedRow(f"{path}: expected header {','.join(RELATION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(f"{path}:{lineno}: expected 3 fields")
            a, b, rel = (x.strip() for x in row)
            for t in (a, b):
                if t not in index:
                    raise UnknownTicker(f"{path}:{lineno}: unknown ticker {t!r}")
            if a == b:
                raise SelfRelation(f"{path}:{lineno}: {a} related to itself")
            triples.add((index[a], index[b], rel))
    names = sorted({r for _, _, r in triples})
    rindex = {r: k for k, r in enumerate(names)}
    entries = np.zeros((len(tickers), len(tickers), len(names)), dtype=np.uint8)
    for i, j, rel in triples:
        entries[i, j, rindex[rel]] = 1
        entries[j, i, rindex[rel]] = 1
    return RelationTensor(entries, names)


def write_relations(rel: RelationTensor, tickers, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RELATION_HEADER)
        n = len(tickers)
        for i in range(n):
            for j in range(i + 1, n):
                for r in np.flatnonzero(rel.entries[i, j]):
                    w.writerow([tickers[i], tickers[j], rel.relation_names[r]])


# -------------------------------------------------------------------- labels

def compute_labels(panel: StockPanel, delta: int) -> LabeledWindowSet:
    """Label 1 iff close(t+1) - close(t) > 0; ties and drops are 0."""
    T = panel.n_days
    if delta < 1:
        raise ValueError("delta must be >= 1")
    if T < delta + 1:
        raise TooShort(f"{T} days is shorter than delta + 1 = {delta + 1}")
    end_days = np.arange(delta, T - 1)
    close = panel.close
    up = (close[:, end_days + 1] - close[:, end_days]) > 0
    n = panel.n_stocks
    stocks = np.repeat(np.arange(n), len(end_days))
    days = np.tile(end_days, n)
    return LabeledWindowSet(panel, delta, stocks, days, up.reshape(-1).astype(np.int64))


def movement_labels(panel: StockPanel):
    """N x (T-1) labels for end days 0..T-2."""
    c = panel.close
    return (np.diff(c, axis=1) > 0).astype(np.int64)


# -------------------------------------------------------------------- splits

def split_chronological(days, fractions=(0.65, 0.1, 0.25)) -> Splits:
    """Contiguous train/valid/test ranges over ``days`` (a count or a range).

    Train and validation sizes are rounded down; the remainder is test.
    """
    if isinstance(days, (int, np.integer)):
        days = range(int(days))
    days = range(days.start, days.stop) if isinstance(days, range) else range(days[0], days[-1] + 1)
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three positive values summing to 1, got {fractions}")
    n = len(days)
    # nudge before flooring so exact products like 10*0.2 do not land on 1.9999
    n_train = int(np.floor(n * fr[0] + 1e-9))
    n_valid = int(np.floor(n * fr[1] + 1e-9))
    n_test = n - n_train - n_valid
    for name, size in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        if size <= 0:
            raise EmptySplit(f"{name} split is empty for {n} days with fractions {fr}")
    a = days.start
    return Splits(range(a, a + n_train), range(a + n_train, a + n_train + n_valid),
                  range(a + n_train + n_valid, days.stop))


def split_days(splits: Splits, name: str):
    """End days of ``name`` whose label day does not spill into a later split."""
    r = getattr(splits, name)
    later = {"train": splits.valid.start, "valid": splits.test.start, "test": None}[name]
    return [t for t in r if later is None or t + 1 < later]

