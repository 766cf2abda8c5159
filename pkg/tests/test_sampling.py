import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from approx.sampling import chunk_bounds, low_discrepancy, parallel_chunks, sample_unit, wilson_interval


def test_sobol_is_seeded_and_in_unit_cube():
    a = low_discrepancy(1000, 3, seed=7)
    b = low_discrepancy(1000, 3, seed=7)
    c = low_discrepancy(1000, 3, seed=8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.min() >= 0.0 and a.max() < 1.0


def test_sobol_discrepancy_beats_random():
    # low-discrepancy points estimate the mean of x*y far better than iid points
    s = sample_unit(4096, 2, 0)
    r = sample_unit(4096, 2, 0, kind="random")
    err_s = abs(np.mean(s[:, 0] * s[:, 1]) - 0.25)
    err_r = abs(np.mean(r[:, 0] * r[:, 1]) - 0.25)
    assert err_s < 1e-3
    assert err_s < err_r


def test_unknown_sampler():
    with pytest.raises(ValueError):
        sample_unit(10, 1, 0, kind="halton-ish")


def _wilson_closed_form(k, n, z=1.959963984540054):
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return mid - half, mid + half


@given(st.integers(1, 5000), st.data())
def test_wilson_matches_closed_form(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    elo, ehi = _wilson_closed_form(k, n)
    assert lo == pytest.approx(elo, abs=1e-9)
    assert hi == pytest.approx(ehi, abs=1e-9)
    assert 0.0 <= lo <= k / n <= hi <= 1.0


def test_wilson_rejects_empty():
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


@settings(max_examples=50)
@given(st.integers(0, 3000), st.integers(1, 700))
def test_chunks_cover_range_in_order(n, chunk):
    b = chunk_bounds(n, chunk)
    flat = [i for lo, hi in b for i in range(lo, hi)]
    assert flat == list(range(n))


def test_parallel_chunks_keep_order():
    out = parallel_chunks(lambda lo, hi: list(range(lo, hi)), 2000, jobs=4, chunk=128)
    assert sum(out, []) == list(range(2000))
