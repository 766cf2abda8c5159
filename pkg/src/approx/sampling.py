"""Seeded samplers, confidence intervals and order-preserving parallel maps."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.stats import binomtest, qmc


def low_discrepancy(n, dim, seed):
    """First ``n`` points of a scrambled Sobol sequence in ``[0, 1)^dim``."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # balance-property warning for n != 2^m
        return qmc.Sobol(dim, scramble=True, seed=np.random.default_rng(seed)).random(n)


def uniform(n, dim, seed):
    return np.random.default_rng(seed).random((n, dim))


def sample_unit(n, dim, seed, kind="sobol"):
    if kind == "sobol":
        return low_discrepancy(n, dim, seed)
    if kind == "random":
        return uniform(n, dim, seed)
    raise ValueError(f"unknown sampler {kind!r}")


def wilson_interval(k, n, confidence=0.95):
    """Wilson score interval for ``k`` successes out of ``n`` trials."""
    if n <= 0:
        raise ValueError("n must be positive")
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def default_jobs():
    return max(1, int(os.environ.get("APPROX_JOBS", "1")))


def chunk_bounds(n, chunk=512):
    """Fixed chunk boundaries; independent of the worker count."""
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def parallel_chunks(func, n, jobs=1, chunk=512):
    """Apply ``func(lo, hi)`` over fixed chunks of ``range(n)``; results in chunk order."""
    bounds = chunk_bounds(n, chunk)
    if jobs <= 1 or len(bounds) == 1:
        return [func(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda b: func(*b), bounds))
