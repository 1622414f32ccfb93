import numpy as np
import pytest

from dgrcl.data import StockPanel


def make_panel(close, volume=None, tickers=None, start="2020-01-0"):
    close = np.atleast_2d(np.asarray(close, dtype=np.float64))
    n, t = close.shape
    volume = np.full((n, t), 1000.0) if volume is None else np.atleast_2d(np.asarray(volume, float))
    values = np.stack([close, close * 1.01, close * 0.99, close, volume], axis=2)
    tickers = tickers or [f"T{i}" for i in range(n)]
    dates = [f"2020-{1 + d // 28:02d}-{1 + d % 28:02d}" for d in range(t)]
    return StockPanel(tickers, dates, values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
