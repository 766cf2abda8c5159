"""Concrete target systems, perturbation families, approximants and bumps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .dynsys import Domain, ScaledField, SumField, VectorField, c1_distance_estimate
from .kernels import KIND_POLAR, KIND_POLY_COS
from .sampling import low_discrepancy

__all__ = [
    "PolyCosField", "double_well", "cos_perturbation", "PerturbationFamily", "make_perturbed",
    "RadialCycleField", "RingAttractorField", "MultiCycleField", "LineAttractorField",
    "IsochronousCylinderField", "RbfApproximant", "fit_rbf", "IllConditionedFit",
    "smoothstep5", "BumpFunction", "VectorBump", "make_vector_bump", "scale_field",
    "MultiplicativeCorrectedField", "AdditiveCorrectedField",
    "corrected_field_multiplicative", "corrected_field_additive", "make_field", "FIELD_IDS",
]


# ---------------------------------------------------------------- 1-D fields

class PolyCosField(VectorField):
    """``x' = scale * (c0 + c1 x + c2 x^2 + c3 x^3 + a cos(b x))`` on the line."""

    dim = 1

    def __init__(self, c0=0.0, c1=0.0, c2=0.0, c3=0.0, a=0.0, b=0.0, scale=1.0):
        self.params = (float(scale), float(c0), float(c1), float(c2), float(c3), float(a), float(b))
        self.native = (KIND_POLY_COS, self.params)

    def eval(self, x):
        s, c0, c1, c2, c3, a, b = self.params
        u = x[..., 0]
        v = c0 + u * (c1 + u * (c2 + u * c3)) + a * np.cos(b * u)
        return (s * v)[..., None]

    def jacobian(self, x):
        s, c0, c1, c2, c3, a, b = self.params
        u = x[..., 0]
        dv = c1 + u * (2 * c2 + 3 * c3 * u) - a * b * np.sin(b * u)
        return (s * dv)[..., None, None]


def double_well():
    """``x' = x - x^3``: sinks at +-1, source at 0."""
    return PolyCosField(c1=1.0, c3=-1.0)


def cos_perturbation(freq=2.0):
    """``g(x) = -cos(freq * x)``."""
    return PolyCosField(a=-1.0, b=freq)


def make_perturbed(base, g, nu):
    """Pointwise ``base + nu * g``."""
    if nu < 0:
        raise ValueError("perturbation amplitude must be nonnegative")
    return SumField([base, g], [1.0, nu])


@dataclass(frozen=True)
class PerturbationFamily:
    base: VectorField
    g: VectorField

    def at(self, nu):
        return make_perturbed(self.base, self.g, nu)


# ----------------------------------------------------------- planar cycles

def _polar_parts(x, kappa, omega, beta, eps_t, k, center):
    X = x[..., 0] - center[0]
    Y = x[..., 1] - center[1]
    r2 = X * X + Y * Y
    r = np.sqrt(r2)
    thdot = omega * (1.0 + beta * (r - 1.0))
    if eps_t != 0.0:
        thdot = thdot - eps_t * np.sin(k * np.arctan2(Y, X))
    return X, Y, r2, r, thdot, kappa * (1.0 - r2)


class RadialCycleField(VectorField):
    """Planar field ``r' = kappa r (1 - r^2)``, ``theta' = omega (1 + beta (r - 1))``,
    optionally with a tangential term ``-eps_t sin(k theta)``.

    The unit circle is a cycle of period ``2 pi / omega`` when ``eps_t = 0``.
    The tangential and shear terms are not differentiable at the center,
    which is never visited by the experiments.
    """

    dim = 2

    def __init__(self, kappa=1.0, omega=1.0, beta=0.0, center=(0.0, 0.0), eps_t=0.0, k=1,
                 scale=1.0):
        self.kappa, self.omega, self.beta = float(kappa), float(omega), float(beta)
        self.eps_t, self.k = float(eps_t), int(k)
        self.center = (float(center[0]), float(center[1]))
        self.scale = float(scale)
        self.native = (KIND_POLAR, (self.scale, self.kappa, self.omega, self.beta, self.eps_t,
                                    float(self.k), *self.center))

    @property
    def period(self):
        return 2 * math.pi / (self.scale * self.omega) if self.omega and not self.eps_t else math.inf

    @property
    def floquet_multiplier(self):
        return math.exp(-2 * self.kappa * self.scale * self.period)

    def eval(self, x):
        X, Y, r2, r, thdot, rad = _polar_parts(x, self.kappa, self.omega, self.beta, self.eps_t,
                                               self.k, self.center)
        return self.scale * np.stack([rad * X - thdot * Y, rad * Y + thdot * X], axis=-1)

    def jacobian(self, x):
        X, Y, r2, r, thdot, rad = _polar_parts(x, self.kappa, self.omega, self.beta, self.eps_t,
                                               self.k, self.center)
        with np.errstate(divide="ignore", invalid="ignore"):
            rs = np.where(r > 0, r, 1.0)
            dth_x = self.omega * self.beta * X / rs
            dth_y = self.omega * self.beta * Y / rs
            if self.eps_t != 0.0:
                c = -self.eps_t * self.k * np.cos(self.k * np.arctan2(Y, X))
                r2s = np.where(r2 > 0, r2, 1.0)
                dth_x = dth_x + c * (-Y / r2s)
                dth_y = dth_y + c * (X / r2s)
        drx, dry = -2 * self.kappa * X, -2 * self.kappa * Y
        J = np.empty(X.shape + (2, 2))
        J[..., 0, 0] = rad + X * drx - Y * dth_x
        J[..., 0, 1] = X * dry - thdot - Y * dth_y
        J[..., 1, 0] = Y * drx + thdot + X * dth_x
        J[..., 1, 1] = rad + Y * dry + X * dth_y
        return self.scale * J


class RingAttractorField(RadialCycleField):
    """Unit circle of non-isolated equilibria: ``r' = kappa r (1 - r^2)``, ``theta' = 0``."""

    def __init__(self, kappa=1.0, center=(0.0, 0.0)):
        super().__init__(kappa=kappa, omega=0.0, center=center)


def smoothstep5(s):
    """C^2 quintic ramp: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (s * (6 * s - 15) + 10)


def smoothstep5_deriv(s):
    inside = (s > 0) & (s < 1)
    s = np.clip(s, 0.0, 1.0)
    return np.where(inside, 30 * s * s * (s - 1) ** 2, 0.0)


class MultiCycleField(VectorField):
    """Several radial cycles with centers on the x-axis, glued by a smooth
    partition of unity that is exactly one near each cycle.

    Between two neighbors the weight ramps over ``|d_j - d_i| < band`` where
    ``d`` is the distance to each center.
    """

    dim = 2

    def __init__(self, centers=((-1.75, 0.0), (1.75, 0.0)), omegas=None, kappa=1.0, beta=0.0,
                 band=0.25):
        self.centers = [tuple(map(float, c)) for c in centers]
        n = len(self.centers)
        if n < 1:
            raise ValueError("need at least one cycle")
        omegas = [1.0] * n if omegas is None else [float(w) for w in omegas]
        if len(omegas) != n:
            raise ValueError("one angular rate per cycle required")
        self.omegas = omegas
        self.kappa, self.beta, self.band = float(kappa), float(beta), float(band)
        self.parts = [RadialCycleField(kappa, w, beta, c) for c, w in zip(self.centers, omegas)]
        ctr = np.array(self.centers)
        dists = np.linalg.norm(ctr[:, None] - ctr[None], axis=-1) + np.diag(np.full(n, np.inf))
        # unit-radius cycles: gap between circles
        self.separation = float(dists.min() - 2.0) if n > 1 else math.inf
        if n > 1 and self.separation <= 0:
            raise ValueError("cycles overlap")

    @property
    def periods(self):
        return [2 * math.pi / w for w in self.omegas]

    def _weights(self, x):
        ctr = np.array(self.centers)
        diff = x[..., None, :] - ctr  # (..., n, 2)
        d = np.linalg.norm(diff, axis=-1)
        n = len(self.centers)
        if n == 1:
            return np.ones(d.shape), np.zeros(d.shape + (2,))
        ds = np.sort(d, axis=-1)
        if np.all(ds[..., 1] - ds[..., 0] >= 0.5 * self.band):
            # every point is outside the blend bands: weights are exactly one-hot
            w = (d == ds[..., :1]).astype(float)
            return w, np.zeros(d.shape + (2,))
        # weight of cycle i: product over j of ramp((d_j - d_i)/band + 1/2)
        w = np.ones(d.shape)
        gw = np.zeros(d.shape + (2,))
        with np.errstate(divide="ignore", invalid="ignore"):
            gd = diff / np.where(d > 0, d, 1.0)[..., None]
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                s = (d[..., j] - d[..., i]) / self.band + 0.5
                ps = smoothstep5(s)
                dps = smoothstep5_deriv(s) / self.band
                gw[..., i, :] = gw[..., i, :] * ps[..., None] + (w[..., i] * dps)[..., None] * (
                    gd[..., j, :] - gd[..., i, :])
                w[..., i] = w[..., i] * ps
        tot = w.sum(axis=-1)
        gtot = gw.sum(axis=-2)
        wn = w / tot[..., None]
        gwn = (gw - wn[..., None] * gtot[..., None, :]) / tot[..., None, None]
        return wn, gwn

    def eval(self, x):
        w, _ = self._weights(x)
        out = np.zeros(x.shape)
        for i, part in enumerate(self.parts):
            if np.any(w[..., i]):
                out = out + w[..., i, None] * part.eval(x)
        return out

    def jacobian(self, x):
        w, gw = self._weights(x)
        J = np.zeros(x.shape + (2,))
        for i, part in enumerate(self.parts):
            J = J + w[..., i, None, None] * part.jacobian(x)
            J = J + part.eval(x)[..., :, None] * gw[..., i, None, :]
        return J


# ----------------------------------------------------- line and cylinder

def _tiled(u, n_gaps, eps_t):
    """``-eps_t sin(2 pi u)`` on ``[0, n_gaps]``, continued linearly (C^1) outside.

    Sinks sit at the integers ``0..n_gaps``, saddles at the half-integers.
    """
    inside = (u >= 0) & (u <= n_gaps)
    lin = -eps_t * 2 * np.pi * np.where(u < 0, u, u - n_gaps)
    val = np.where(inside, -eps_t * np.sin(2 * np.pi * u), lin)
    der = np.where(inside, -eps_t * 2 * np.pi * np.cos(2 * np.pi * u), -eps_t * 2 * np.pi)
    return val, der


class LineAttractorField(VectorField):
    """Planar field whose attractor is the segment ``[a, b] x {0}`` of equilibria.

    ``x' = -kappa ((x - b)_+^3 - (a - x)_+^3)``, ``y' = -kappa y``.  With
    ``tiles = k >= 2`` and ``eps_t > 0`` the segment is replaced by k sinks at
    ``a + j (b - a)/(k - 1)`` separated by saddles.
    """

    dim = 2

    def __init__(self, a=-1.0, b=1.0, kappa=1.0, tiles=0, eps_t=0.0):
        if not b > a:
            raise ValueError("need a < b")
        self.a, self.b, self.kappa = float(a), float(b), float(kappa)
        self.tiles, self.eps_t = int(tiles), float(eps_t)

    @property
    def sinks(self):
        if self.tiles < 2:
            return None
        return np.linspace(self.a, self.b, self.tiles)

    def _axial(self, x):
        u = x[..., 0]
        hi = np.maximum(u - self.b, 0.0)
        lo = np.maximum(self.a - u, 0.0)
        val = -self.kappa * (hi**3 - lo**3)
        der = -3 * self.kappa * (hi**2 + lo**2)
        if self.tiles >= 2 and self.eps_t > 0:
            sp = (self.b - self.a) / (self.tiles - 1)
            tv, td = _tiled((u - self.a) / sp, self.tiles - 1, self.eps_t)
            val = val + tv
            der = der + td / sp
        return val, der

    def eval(self, x):
        val, _ = self._axial(x)
        return np.stack([val, -self.kappa * x[..., 1]], axis=-1)

    def jacobian(self, x):
        _, der = self._axial(x)
        J = np.zeros(x.shape + (2,))
        J[..., 0, 0] = der
        J[..., 1, 1] = -self.kappa
        return J


class IsochronousCylinderField(VectorField):
    """3-D field: a radial cycle in (x, y) for every height z.

    ``theta' = omega (1 + eta z)``; ``eta = 0`` makes all circles share the
    period ``2 pi / omega``.  Axially the field is neutral on ``[z_lo, z_hi]``
    (cubic confinement outside), or tiled: ``z' = -eps_t sin(2 pi (z - z_lo)/dz)``
    with k levels ``z_lo + j dz`` when ``tiles = k``.  ``eta`` models a
    frequency-gradient approximation error.
    """

    dim = 3

    def __init__(self, kappa=1.0, omega=1.0, z_lo=-0.5, z_hi=0.5, tiles=0, eps_t=0.0, eta=0.0,
                 mu=1.0):
        self.kappa, self.omega = float(kappa), float(omega)
        self.z_lo, self.z_hi = float(z_lo), float(z_hi)
        self.tiles, self.eps_t, self.eta, self.mu = int(tiles), float(eps_t), float(eta), float(mu)

    @property
    def levels(self):
        if self.tiles < 2:
            return None
        return np.linspace(self.z_lo, self.z_hi, self.tiles)

    def period_at(self, z):
        return 2 * math.pi / (self.omega * (1.0 + self.eta * z))

    def _axial(self, z):
        hi = np.maximum(z - self.z_hi, 0.0)
        lo = np.maximum(self.z_lo - z, 0.0)
        val = -self.mu * (hi**3 - lo**3)
        der = -3 * self.mu * (hi**2 + lo**2)
        if self.tiles >= 2 and self.eps_t > 0:
            dz = (self.z_hi - self.z_lo) / (self.tiles - 1)
            tv, td = _tiled((z - self.z_lo) / dz, self.tiles - 1, self.eps_t)
            val, der = val + tv, der + td / dz
        return val, der

    def eval(self, x):
        X, Y, z = x[..., 0], x[..., 1], x[..., 2]
        rad = self.kappa * (1.0 - X * X - Y * Y)
        w = self.omega * (1.0 + self.eta * z)
        zv, _ = self._axial(z)
        return np.stack([rad * X - w * Y, rad * Y + w * X, zv], axis=-1)

    def jacobian(self, x):
        X, Y, z = x[..., 0], x[..., 1], x[..., 2]
        rad = self.kappa * (1.0 - X * X - Y * Y)
        w = self.omega * (1.0 + self.eta * z)
        _, zd = self._axial(z)
        J = np.zeros(x.shape + (3,))
        J[..., 0, 0] = rad - 2 * self.kappa * X * X
        J[..., 0, 1] = -2 * self.kappa * X * Y - w
        J[..., 0, 2] = -self.omega * self.eta * Y
        J[..., 1, 0] = -2 * self.kappa * X * Y + w
        J[..., 1, 1] = rad - 2 * self.kappa * Y * Y
        J[..., 1, 2] = self.omega * self.eta * X
        J[..., 2, 2] = zd
        return J


# ------------------------------------------------------------ approximant

class IllConditionedFit(np.linalg.LinAlgError):
    def __init__(self, cond):
        self.cond = float(cond)
        super().__init__(f"regularized least-squares system ill-conditioned (cond ~ {cond:.3e}); "
                         "increase the ridge parameter or reduce the number of centers")


class RbfApproximant(VectorField):
    """Gaussian radial-basis field ``sum_k w_k exp(-|x - c_k|^2 / (2 width^2))``."""

    def __init__(self, centers, width, weights, fit_report=None):
        self.centers = np.asarray(centers, dtype=float)
        self.width = float(width)
        self.weights = np.asarray(weights, dtype=float)
        self.dim = self.centers.shape[1]
        self.fit_report = dict(fit_report or {})

    def _phi(self, x):
        diff = x[..., None, :] - self.centers
        return np.exp(-np.sum(diff**2, axis=-1) / (2 * self.width**2)), diff

    def eval(self, x):
        phi, _ = self._phi(x)
        return phi @ self.weights

    def jacobian(self, x):
        phi, diff = self._phi(x)
        # d phi_k / dx_j = -phi_k (x_j - c_kj) / width^2
        return -np.einsum("...k,ki,...kj->...ij", phi, self.weights, diff) / self.width**2


def _grid_centers(domain, n_centers, pad):
    per = max(2, int(round(n_centers ** (1.0 / domain.dim))))
    axes = [np.linspace(a - pad, b + pad, per) for a, b in zip(domain.lower, domain.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)


def fit_rbf(target, domain: Domain, n_centers=25, width=0.4, ridge=1e-10, n_samples=2048, seed=0,
            max_cond=1e12, pad=2.0):
    """Ridge least-squares Gaussian RBF fit of ``target`` on ``domain``.

    Centers lie on a regular grid extending ``pad * width`` beyond the box
    (this removes most of the edge error); training points are a scrambled Sobol set
    plus the box corners.  The returned approximant carries the sampled
    ``(c0, c1)`` distance to the target in ``fit_report``.
    """
    if n_centers < 4:
        raise ValueError("need at least 4 centers")
    centers = _grid_centers(domain, n_centers, pad * width)
    pts = np.vstack([domain.scale_unit(low_discrepancy(n_samples, domain.dim, seed)),
                     domain.corners()])
    vals = target(pts)
    phi = np.exp(-np.sum((pts[:, None, :] - centers) ** 2, axis=-1) / (2 * width**2))
    nc = len(centers)
    aug = np.vstack([phi, math.sqrt(ridge) * np.eye(nc)])
    rhs = np.vstack([vals, np.zeros((nc, vals.shape[1]))])
    weights, _, rank, sv = np.linalg.lstsq(aug, rhs, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if cond > max_cond or rank < nc:
        raise IllConditionedFit(cond)
    resid = phi @ weights - vals
    approx = RbfApproximant(centers, width, weights)
    c0, c1 = c1_distance_estimate(target, approx, domain, n_samples=max(1024, n_samples // 2),
                                  seed=seed + 1)
    approx.fit_report = dict(n_centers=nc, width=width, ridge=ridge, cond=float(cond),
                             train_rms=float(np.sqrt(np.mean(resid**2))), c0=c0, c1=c1)
    return approx


# ------------------------------------------------------------------ bumps

def _orbit_points(cycle):
    pts = getattr(cycle, "orbit", cycle)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise ValueError("need a sampled closed orbit of at least 3 points")
    return pts


def polyline_distance(x, pts, chunk=4096):
    """Distance from each point of ``x`` (n, d) to the closed polyline ``pts``
    and the unit vector pointing from the nearest polyline point to ``x``."""
    a = pts
    b = np.roll(pts, -1, axis=0)
    ab = b - a
    L2 = np.sum(ab**2, axis=-1)
    L2 = np.where(L2 > 0, L2, 1.0)
    n = len(x)
    dist = np.empty(n)
    direc = np.zeros_like(x)
    for s in range(0, n, chunk):
        q = x[s:s + chunk]
        t = np.clip(np.einsum("nmd,md->nm", q[:, None, :] - a, ab) / L2, 0.0, 1.0)
        proj = a + t[..., None] * ab
        d2 = np.sum((q[:, None, :] - proj) ** 2, axis=-1)
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(q))
        dd = np.sqrt(d2[rows, j])
        dist[s:s + chunk] = dd
        with np.errstate(invalid="ignore", divide="ignore"):
            v = (q - proj[rows, j]) / dd[:, None]
        direc[s:s + chunk] = np.where(dd[:, None] > 0, v, 0.0)
    return dist, direc


@dataclass(frozen=True)
class BumpFunction:
    """Scalar tube bump around a sampled closed orbit.

    Exactly 1 within ``r_in`` of the orbit polyline, exactly 0 beyond
    ``r_out``, quintic ramp in between.
    """

    orbit: np.ndarray = field(repr=False)
    r_in: float
    r_out: float

    def __post_init__(self):
        object.__setattr__(self, "orbit", _orbit_points(self.orbit))
        if not (0 <= self.r_in < self.r_out):
            raise ValueError("need 0 <= r_in < r_out")
        lo = self.orbit.min(axis=0) - self.r_out
        hi = self.orbit.max(axis=0) + self.r_out
        object.__setattr__(self, "_box", (lo, hi))
        seg = np.linalg.norm(np.roll(self.orbit, -1, axis=0) - self.orbit, axis=1)
        object.__setattr__(self, "_half_seg", 0.5 * float(seg.max()))
        object.__setattr__(self, "_tree", cKDTree(self.orbit))

    def _flat(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        return x.reshape(-1, x.shape[-1]), shape

    def value_and_grad(self, x):
        xf, shape = self._flat(x)
        val = np.zeros(len(xf))
        grad = np.zeros_like(xf)
        lo, hi = self._box
        near = np.all((xf >= lo) & (xf <= hi), axis=1)
        if np.any(near):
            # nearest-vertex distance dv bounds the polyline distance d:
            # dv - half_seg <= d <= dv, which settles both plateaus exactly
            idx = np.nonzero(near)[0]
            dv, _ = self._tree.query(xf[idx])
            val[idx[dv <= self.r_in]] = 1.0
            ramp = idx[(dv > self.r_in) & (dv - self._half_seg < self.r_out)]
            if ramp.size:
                d, u = polyline_distance(xf[ramp], self.orbit)
                s = (self.r_out - d) / (self.r_out - self.r_in)
                val[ramp] = smoothstep5(s)
                grad[ramp] = -(smoothstep5_deriv(s) / (self.r_out - self.r_in))[:, None] * u
        return val.reshape(shape), grad.reshape(shape + (xf.shape[1],))

    def __call__(self, x):
        return self.value_and_grad(x)[0]

    def leakage(self, other_orbit):
        """Max of the bump over another sampled orbit."""
        return float(np.max(self(_orbit_points(other_orbit))))


class VectorBump(VectorField):
    """``psi * f`` (aligned) or ``psi * f / |f|^2`` (normalized)."""

    def __init__(self, base: VectorField, bump: BumpFunction, normalized=False):
        self.base, self.bump, self.normalized = base, bump, bool(normalized)
        self.dim = base.dim
        self.alignment_error = 0.0
        self.leakage = 0.0
        self.near_boundary = False

    def eval(self, x):
        psi = self.bump(x)
        if not np.any(psi):
            return np.zeros(np.shape(x))
        f = self.base.eval(x)
        if self.normalized:
            n2 = np.sum(f * f, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                f = np.where(psi[..., None] > 0, f / n2[..., None], 0.0)
        return psi[..., None] * f

    def jacobian(self, x):
        psi, gpsi = self.bump.value_and_grad(x)
        if not (np.any(psi) or np.any(gpsi)):
            return np.zeros(np.shape(x) + (self.dim,))
        f = self.base.eval(x)
        J = self.base.jacobian(x)
        if self.normalized:
            n2 = np.sum(f * f, axis=-1)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = np.where(psi > 0, 1.0 / n2, 0.0)
            # d(f/|f|^2) = J/|f|^2 - 2 f (f^T J)/|f|^4
            fJ = np.einsum("...i,...ij->...j", f, J)
            J = inv[..., None, None] * J - 2 * (inv**2)[..., None, None] * f[..., :, None] * fJ[..., None, :]
            f = inv[..., None] * f
        return psi[..., None, None] * J + f[..., :, None] * gpsi[..., None, :]


def make_vector_bump(base, cycle, r_in, r_out, normalized=False, others=(), domain=None):
    """Vector bump around ``cycle`` with measured alignment error and leakage.

    ``alignment_error`` is the max deviation of the bump from its ideal
    (``f`` or ``f/|f|^2``) on the cycle; ``leakage`` is the max norm of the
    bump on the ``others`` cycles; ``near_boundary`` flags a tube that reaches
    within ``r_out`` of the domain boundary.
    """
    pts = _orbit_points(cycle)
    vb = VectorBump(base, BumpFunction(pts, r_in, r_out), normalized)
    f = base(pts)
    ideal = f / np.sum(f * f, axis=-1, keepdims=True) if normalized else f
    vb.alignment_error = float(np.max(np.linalg.norm(vb(pts) - ideal, axis=-1)))
    vb.leakage = max([float(np.max(np.linalg.norm(vb(_orbit_points(o)), axis=-1)))
                      for o in others], default=0.0)
    if domain is not None:
        gap = np.minimum(pts - domain.lo, domain.hi - pts).min()
        vb.near_boundary = bool(gap < r_out)
    return vb


def scale_field(field, c):
    """``c * field``; orbits are unchanged as sets and periods divide by c."""
    if not c > 0:
        raise ValueError("scale must be positive")
    return ScaledField(field, c)


class MultiplicativeCorrectedField(VectorField):
    """``(1 + sum_i alpha_i psi_i) * f``."""

    def __init__(self, base, bumps, alpha, check_points=None):
        self.base = base
        self.bumps = list(bumps)
        self.alpha = np.asarray(alpha, dtype=float).ravel()
        if len(self.bumps) != len(self.alpha):
            raise ValueError("one coefficient per bump required")
        self.dim = base.dim
        pts = [b.orbit for b in self.bumps]
        if check_points is not None:
            pts.append(np.asarray(check_points, dtype=float))
        pts = np.vstack(pts) if pts else np.empty((0, self.dim))
        if len(pts):
            fac = self.factor(pts)
            bad = np.nonzero(fac <= 0)[0]
            if bad.size:
                raise ValueError(f"correction factor {fac[bad[0]]:.3g} <= 0 at {pts[bad[0]].tolist()}")

    def factor(self, x):
        out = np.ones(np.shape(x)[:-1])
        for a, b in zip(self.alpha, self.bumps):
            if a != 0.0:
                out = out + a * b(x)
        return out

    def eval(self, x):
        return self.factor(x)[..., None] * self.base.eval(x)

    def jacobian(self, x):
        fac = np.ones(np.shape(x)[:-1])
        g = np.zeros(np.shape(x))
        for a, b in zip(self.alpha, self.bumps):
            if a != 0.0:
                v, gv = b.value_and_grad(x)
                fac = fac + a * v
                g = g + a * gv
        return fac[..., None, None] * self.base.jacobian(x) + self.base.eval(x)[..., :, None] * g[..., None, :]


class AdditiveCorrectedField(VectorField):
    """``f + sum_j alpha_j Phi_j``."""

    def __init__(self, base, bump_fields, alpha):
        self.base = base
        self.bump_fields = list(bump_fields)
        self.alpha = np.asarray(alpha, dtype=float).ravel()
        if len(self.bump_fields) != len(self.alpha):
            raise ValueError("one coefficient per bump field required")
        self.dim = base.dim

    def eval(self, x):
        out = self.base.eval(x)
        for a, phi in zip(self.alpha, self.bump_fields):
            if a != 0.0:
                out = out + a * phi.eval(x)
        return out

    def jacobian(self, x):
        out = self.base.jacobian(x)
        for a, phi in zip(self.alpha, self.bump_fields):
            if a != 0.0:
                out = out + a * phi.jacobian(x)
        return out


def corrected_field_multiplicative(base, bumps, alpha, check_points=None):
    return MultiplicativeCorrectedField(base, bumps, alpha, check_points)


def corrected_field_additive(base, bump_fields, alpha):
    return AdditiveCorrectedField(base, bump_fields, alpha)


# --------------------------------------------------------------- registry

def _dw(params):
    nu = float(params.pop("nu", 0.0))
    f = double_well()
    if nu:
        f = make_perturbed(f, cos_perturbation(float(params.pop("freq", 2.0))), nu)
    return f, Domain((-2.0,), (2.0,))


def _radial(params):
    f = RadialCycleField(**params)
    return f, Domain((-2.0, -2.0), (2.0, 2.0))


def _multi(params):
    f = MultiCycleField(**params)
    xs = [c[0] for c in f.centers]
    return f, Domain((min(xs) - 2.0, -2.0), (max(xs) + 2.0, 2.0))


def _ring(params):
    return RingAttractorField(**params), Domain((-2.0, -2.0), (2.0, 2.0))


def _cyl(params):
    f = IsochronousCylinderField(**params)
    return f, Domain((-2.0, -2.0, f.z_lo - 1.0), (2.0, 2.0, f.z_hi + 1.0))


_REGISTRY = {
    "double-well": _dw,
    "radial-cycle": _radial,
    "multi-cycle-2": _multi,
    "ring": _ring,
    "iso-cylinder": _cyl,
}
FIELD_IDS = tuple(_REGISTRY)


def make_field(field_id, **params):
    """Build a zoo field and its default domain from a string id."""
    try:
        builder = _REGISTRY[field_id]
    except KeyError:
        raise KeyError(f"unknown field id {field_id!r}; known: {', '.join(FIELD_IDS)}") from None
    return builder(dict(params))
