"""Batch trajectory kernels and backend selection.

Fields from the zoo advertise a ``native`` description ``(kind, params)``
that the compiled kernel evaluates without calling back into Python.  Any
other field is integrated by the numpy lockstep fallback through its
``eval`` method.  Set ``APPROX_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _batch_py

KIND_POLY_COS = 1  # scale * (c0 + c1 x + c2 x^2 + c3 x^3 + a cos(b x)), 1-D
KIND_POLAR = 2  # planar polar cycle / ring; params below

POLY_COS_PARAMS = ("scale", "c0", "c1", "c2", "c3", "a", "b")
POLAR_PARAMS = ("scale", "kappa", "omega", "beta", "eps_t", "k", "cx", "cy")

try:
    if os.environ.get("APPROX_BACKEND", "").lower() == "python":
        raise ImportError("python backend forced")
    from . import _batch_c
except ImportError:
    _batch_c = None

BACKEND = "cython" if _batch_c is not None else "python"


def scale_native(kind, params, c):
    p = np.array(params, dtype=float)
    p[0] *= c
    return kind, tuple(p)


def sum_native(natives, weights):
    """Combine native descriptions of a weighted sum when the kernel can
    represent it (polynomial-cosine fields sharing the cosine frequency);
    otherwise ``None``."""
    if any(n is None or n[0] != KIND_POLY_COS for n in natives):
        return None
    coef = np.zeros(5)
    freq = None
    for (_, p), w in zip(natives, weights):
        s = w * p[0]
        coef[:4] += s * np.asarray(p[1:5])
        if p[5] * s != 0.0:
            if freq is not None and p[6] != freq:
                return None
            freq = p[6]
            coef[4] += s * p[5]
    return KIND_POLY_COS, (1.0, *coef[:4], coef[4], 0.0 if freq is None else freq)


def native_eval(kind, params, x):
    """Reference numpy evaluation of a native description (used in tests)."""
    x = np.asarray(x, dtype=float)
    p = params
    if kind == KIND_POLY_COS:
        s = x[..., 0]
        v = p[1] + s * (p[2] + s * (p[3] + s * p[4])) + p[5] * np.cos(p[6] * s)
        return (p[0] * v)[..., None]
    if kind == KIND_POLAR:
        X = x[..., 0] - p[6]
        Y = x[..., 1] - p[7]
        r2 = X * X + Y * Y
        thdot = p[2] * (1.0 + p[3] * (np.sqrt(r2) - 1.0))
        if p[4] != 0.0:
            thdot = thdot - p[4] * np.sin(p[5] * np.arctan2(Y, X))
        rad = p[1] * (1.0 - r2)
        return p[0] * np.stack([rad * X - thdot * Y, rad * Y + thdot * X], axis=-1)
    raise ValueError(f"unknown native kind {kind}")


@dataclass
class BatchResult:
    states: np.ndarray  # (n, m, d)
    last_step: np.ndarray  # (n,)
    status: np.ndarray  # (n,) int8: 0 ok, 1 escaped, 2 underflow
    nfev: int


def batch_grid(field, x0s, t_grid, cfg, domain=None, h0=None, backend=None):
    """Integrate ``field`` from every row of ``x0s`` and sample on ``t_grid``.

    ``h0`` carries step sizes between successive calls so a long horizon can
    be processed in time chunks.  ``backend`` overrides the import-time
    choice ("cython" or "python").
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[1] != field.dim:
        raise ValueError(f"states have dimension {x0s.shape[1]}, field has {field.dim}")
    lo, hi = (None, None) if domain is None else (domain.lo, domain.hi)
    backend = backend or BACKEND
    native = getattr(field, "native", None)
    if backend == "cython" and native is not None:
        if _batch_c is None:
            raise RuntimeError("compiled kernel not available")
        kind, params = native
        out, h, st, nfev = _batch_c.integrate_grid(kind, params, x0s, t_grid, cfg.rtol, cfg.atol,
                                                   float(cfg.max_step), lo, hi, h0)
    else:
        out, h, st, nfev = _batch_py.integrate_grid(field.eval, x0s, t_grid, cfg.rtol, cfg.atol,
                                                    float(cfg.max_step), lo, hi, h0)
    return BatchResult(out, h, st, int(nfev))
