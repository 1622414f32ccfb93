import os
import subprocess
import sys

import numpy as np
import pytest

from dgrcl import _kernels
from dgrcl._kernels import _fallback


def test_backend_is_reported():
    assert _kernels.BACKEND in ("cython", "python")


def test_env_var_forces_fallback():
    out = subprocess.run([sys.executable, "-c", "import dgrcl._kernels as k; print(k.BACKEND)"],
                         env={**os.environ, "DGRCL_PURE_PYTHON": "1"}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("band", [-1, 0, 2])
def test_compiled_and_fallback_agree_exactly(rng, band):
    sig = rng.normal(size=(6, 30))
    a = _kernels.dtw_cost_matrices(sig, 8, band)
    b = _fallback.dtw_cost_matrices(sig, 8, band)
    assert a.shape == (23, 6, 6)
    np.testing.assert_array_equal(a, b)
    x, y = rng.normal(size=9), rng.normal(size=5)
    assert _kernels.dtw(x, y, band) == _fallback.dtw(x, y, band)


def test_fft_matches_numpy(rng):
    for n in (1, 2, 8, 64):
        x = rng.normal(size=n) + 1j * rng.normal(size=n)
        np.testing.assert_allclose(_kernels.fft_radix2(x), np.fft.fft(x), atol=1e-12)
        np.testing.assert_allclose(_fallback.fft_radix2(x), np.fft.fft(x), atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        _kernels.fft_radix2(np.ones(6, dtype=complex))
