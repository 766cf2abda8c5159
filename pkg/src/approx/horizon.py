"""Attractor registries and the chunked, convergence-detecting batch integration
shared by basin labeling and the flow-closeness estimators.

The infinite-horizon supremum is replaced by a per-sample stopping rule:
integrate in checkpoints of length ``chunk`` until both trajectories sit in
capture sets of registered attractors and the per-checkpoint max distance has
been stable for ``stable_checkpoints`` consecutive checkpoints, then continue
for one relaxation time as a guard.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynsys import SWEEP, Domain, IntegratorConfig
from .kernels import batch_grid
from .sampling import parallel_chunks

UNRESOLVED = -1


@dataclass(frozen=True)
class Attractor:
    id: int
    kind: str  # "point" or "cycle"
    points: np.ndarray = field(repr=False)  # (1, d) for a point, (M, d) for a cycle
    relaxation_time: float = 1.0

    @property
    def location(self):
        return self.points.mean(axis=0) if self.kind == "cycle" else self.points[0]

    def distance(self, X):
        X = np.atleast_2d(X)
        if self.kind == "point":
            return np.linalg.norm(X - self.points[0], axis=1)
        out = np.empty(len(X))
        for s in range(0, len(X), 2048):
            q = X[s:s + 2048]
            out[s:s + 2048] = np.sqrt(np.min(np.sum((q[:, None, :] - self.points) ** 2, -1), axis=1))
        return out


def _set_distance(a: Attractor, b: Attractor):
    return float(np.min(b.distance(a.points)))


class TopologyChanged(RuntimeError):
    """Attractors of two fields cannot be paired one-to-one."""


@dataclass
class AttractorRegistry:
    """Stable attractors with disjoint capture sets of radius ``capture_radius``."""

    attractors: list
    capture_radius: float

    def __post_init__(self):
        if not self.attractors:
            raise ValueError("registry needs at least one attractor")
        if not self.capture_radius > 0:
            raise ValueError("capture radius must be positive")
        sep = self.min_separation
        if sep <= 2 * self.capture_radius:
            raise ValueError(f"capture sets overlap (separation {sep:.3g}, radius {self.capture_radius:.3g})")

    @property
    def min_separation(self):
        n = len(self.attractors)
        if n < 2:
            return math.inf
        return min(_set_distance(self.attractors[i], self.attractors[j])
                   for i in range(n) for j in range(i + 1, n))

    @property
    def relaxation_time(self):
        return max(a.relaxation_time for a in self.attractors)

    @property
    def ids(self):
        return [a.id for a in self.attractors]

    @classmethod
    def build(cls, attractors, radius=None, default_radius=0.1):
        """Capture radius defaults to a tenth of the smallest attractor separation."""
        tmp = cls.__new__(cls)
        tmp.attractors = list(attractors)
        sep = AttractorRegistry.min_separation.fget(tmp)
        if radius is None:
            radius = 0.1 * sep if math.isfinite(sep) else default_radius
        return cls(list(attractors), float(radius))

    @classmethod
    def from_fixed_points(cls, fixed_points, radius=None, relax_factor=3.0):
        """Stable fixed points only; relaxation time ``relax_factor / spectral gap``."""
        atts = []
        for fp in fixed_points:
            if fp.classification != "stable":
                continue
            gap = float(np.min(np.abs(np.real(fp.eigenvalues))))
            atts.append(Attractor(len(atts), "point", np.atleast_2d(fp.location), relax_factor / gap))
        return cls.build(atts, radius)

    @classmethod
    def from_cycles(cls, cycles, radius=None, relax_factor=3.0, extra_points=()):
        atts = []
        for c in cycles:
            if not c.stable:
                raise ValueError("registry attractors must be stable")
            mu = np.max(np.abs(c.nontrivial_multipliers))
            rate = -math.log(mu) / c.period if mu > 0 else 1.0 / c.period
            atts.append(Attractor(len(atts), "cycle", np.asarray(c.orbit), relax_factor / rate))
        for fp in extra_points:
            gap = float(np.min(np.abs(np.real(fp.eigenvalues))))
            atts.append(Attractor(len(atts), "point", np.atleast_2d(fp.location), relax_factor / gap))
        return cls.build(atts, radius)

    def capture(self, X):
        """Attractor id whose capture set contains each row of ``X`` (or -1)."""
        X = np.atleast_2d(X)
        out = np.full(len(X), UNRESOLVED, dtype=np.int64)
        for a in self.attractors:
            out[a.distance(X) < self.capture_radius] = a.id
        return out

    def match(self, other: "AttractorRegistry"):
        """Nearest-neighbour pairing ``{id_self: id_other}``; raises
        :class:`TopologyChanged` on count mismatch or a pairing farther than
        half the smallest separation."""
        if len(self.attractors) != len(other.attractors):
            raise TopologyChanged(f"attractor count changed: {len(self.attractors)} -> "
                                  f"{len(other.attractors)}")
        limit = 0.5 * min(self.min_separation, other.min_separation)
        pairs = {}
        for a in self.attractors:
            d = [_set_distance(a, b) for b in other.attractors]
            j = int(np.argmin(d))
            if d[j] > limit and math.isfinite(limit):
                raise TopologyChanged(f"attractor {a.id} moved {d[j]:.3g} (> {limit:.3g})")
            pairs[a.id] = other.attractors[j].id
        if len(set(pairs.values())) != len(pairs):
            raise TopologyChanged("pairing is not one-to-one")
        return pairs


@dataclass(frozen=True)
class HorizonPolicy:
    chunk: float = 1.0
    points_per_chunk: int = 32
    stable_checkpoints: int = 5
    stable_rtol: float = 1e-3
    stable_atol: float = 1e-6
    guard: float | None = None  # defaults to the registries' relaxation time
    max_time: float = 400.0
    limsup_factor: float = 2.0
    limsup_tol: float = 0.05
    batch: int = 512

    def to_dict(self):
        return asdict(self)


@dataclass
class PairRun:
    """Per-sample results of :func:`run_pair` (arrays of length n)."""

    x0: np.ndarray
    sup: np.ndarray
    sup_coarse: np.ndarray
    label_a: np.ndarray
    label_b: np.ndarray
    horizon: np.ndarray
    escaped: np.ndarray
    lp: dict  # p -> time average at the stabilized horizon
    lp_long: dict  # p -> time average at limsup_factor * horizon
    policy: HorizonPolicy
    nfev: int = 0

    @property
    def n(self):
        return len(self.sup)


def _advance(field, X, t0, policy, cfg, domain, h):
    grid = t0 + np.linspace(0.0, policy.chunk, policy.points_per_chunk + 1)
    res = batch_grid(field, X, grid, cfg, domain, h)
    return grid, res


def _run_pair_block(fa, fb, X, reg_a, reg_b, domain, policy, cfg, ps):
    n = len(X)
    D = domain.diameter
    same = fb is fa
    guard = policy.guard if policy.guard is not None else max(reg_a.relaxation_time,
                                                              reg_b.relaxation_time)
    guard_chunks = int(math.ceil(guard / policy.chunk - 1e-12))
    max_chunks = int(math.ceil(policy.max_time / policy.chunk - 1e-12))
    dt = policy.chunk / policy.points_per_chunk
    w = np.full(policy.points_per_chunk + 1, dt)
    w[0] = w[-1] = 0.5 * dt

    xa = X.copy()
    xb = X.copy()
    sup = np.zeros(n)
    sup_c = np.zeros(n)
    integ = {p: np.zeros(n) for p in ps}
    integ_T = {p: np.zeros(n) for p in ps}
    lab_a = np.full(n, UNRESOLVED)
    lab_b = np.full(n, UNRESOLVED)
    prev_cap_a = np.full(n, UNRESOLVED)
    prev_cap_b = np.full(n, UNRESOLVED)
    prev_win = np.full(n, np.nan)
    count = np.zeros(n, dtype=np.int64)
    held_run = np.zeros(n, dtype=np.int64)  # consecutive chunks inside one capture set
    guard_left = np.full(n, -1, dtype=np.int64)
    stop_chunk = np.full(n, -1, dtype=np.int64)  # chunk index where the horizon was fixed
    end_chunk = np.full(n, max_chunks, dtype=np.int64)
    escaped = np.zeros(n, dtype=bool)
    horizon = np.full(n, float(max_chunks) * policy.chunk)
    active = np.ones(n, dtype=bool)
    ha = np.zeros(n)
    hb = np.zeros(n)
    nfev = 0

    k = 0
    while np.any(active) and k < int(policy.limsup_factor * max_chunks) + 1:
        idx = np.nonzero(active)[0]
        t0 = k * policy.chunk
        _, ra = _advance(fa, xa[idx], t0, policy, cfg, domain, ha[idx])
        nfev += ra.nfev
        if same:
            rb = ra
        else:
            _, rb = _advance(fb, xb[idx], t0, policy, cfg, domain, hb[idx])
            nfev += rb.nfev
        xa[idx] = ra.states[:, -1]
        xb[idx] = rb.states[:, -1]
        ha[idx] = ra.last_step
        hb[idx] = rb.last_step
        dist = np.linalg.norm(ra.states - rb.states, axis=-1)  # (na, m+1)
        win = dist.max(axis=1)
        sup[idx] = np.maximum(sup[idx], win)
        sup_c[idx] = np.maximum(sup_c[idx], dist[:, ::2].max(axis=1))
        for p in ps:
            integ[p][idx] += (dist**p) @ w
        bad = (ra.status != 0) | (rb.status != 0)
        if np.any(bad):
            bi = idx[bad]
            escaped[bi] = True
            sup[bi] = D
            sup_c[bi] = D
            lab_a[bi] = UNRESOLVED
            lab_b[bi] = UNRESOLVED
            horizon[bi] = t0 + policy.chunk
            for p in ps:
                integ[p][bi] = D**p * horizon[bi]
                integ_T[p][bi] = integ[p][bi]
            active[bi] = False
        ok = ~bad
        idx, win = idx[ok], win[ok]
        fixing = stop_chunk[idx] < 0
        if np.any(fixing):
            fi = idx[fixing]
            ca = reg_a.capture(xa[fi])
            cb = ca if same else reg_b.capture(xb[fi])
            pw = prev_win[fi]
            stable = np.abs(win[fixing] - pw) <= policy.stable_atol + policy.stable_rtol * win[fixing]
            held = (ca >= 0) & (cb >= 0) & (ca == prev_cap_a[fi]) & (cb == prev_cap_b[fi])
            cond = held & stable
            held_run[fi] = np.where(held, held_run[fi] + 1, 0)
            count[fi] = np.where(cond, count[fi] + 1, 0)
            in_guard = guard_left[fi] >= 0
            # losing the capture during the guard restarts the detection
            guard_left[fi] = np.where(in_guard & ~held, -1, guard_left[fi])
            start = (count[fi] >= policy.stable_checkpoints) & (guard_left[fi] < 0)
            guard_left[fi] = np.where(start, guard_chunks, guard_left[fi])
            tick = (guard_left[fi] >= 0) & ~start
            guard_left[fi] = np.where(tick, guard_left[fi] - 1, guard_left[fi])
            done = (guard_left[fi] == 0) & held
            prev_cap_a[fi] = ca
            prev_cap_b[fi] = cb
            prev_win[fi] = win[fixing]
            di = fi[done]
            if di.size:
                stop_chunk[di] = k
                horizon[di] = t0 + policy.chunk
                lab_a[di] = ca[done]
                lab_b[di] = cb[done]
                for p in ps:
                    integ_T[p][di] = integ[p][di]
                end_chunk[di] = int(math.ceil(policy.limsup_factor * (k + 1) - 1e-9)) - 1
            timed_out = (k + 1 >= max_chunks) & (stop_chunk[fi] < 0)
            ti = fi[timed_out]
            if ti.size:
                # the error never stabilized (e.g. phase drift on a cycle), but a
                # trajectory pair that kept its capture sets for the guard time
                # is still labeled
                settled = held_run[ti] >= max(1, guard_chunks)
                lab_a[ti] = np.where(settled, ca[timed_out], UNRESOLVED)
                lab_b[ti] = np.where(settled, cb[timed_out], UNRESOLVED)
                stop_chunk[ti] = k
                horizon[ti] = t0 + policy.chunk
                for p in ps:
                    integ_T[p][ti] = integ[p][ti]
                end_chunk[ti] = k
        finished = idx[(stop_chunk[idx] >= 0) & (k >= end_chunk[idx])]
        active[finished] = False
        k += 1

    long_T = np.where(escaped, horizon, (end_chunk + 1) * policy.chunk)
    lp = {p: integ_T[p] / horizon for p in ps}
    lp_long = {p: np.where(escaped, D**p, integ[p] / long_T) for p in ps}
    return dict(sup=sup, sup_coarse=sup_c, label_a=lab_a, label_b=lab_b, horizon=horizon,
                escaped=escaped, lp=lp, lp_long=lp_long, nfev=nfev)


def run_pair(field_a, field_b, X, reg_a, reg_b, domain: Domain, policy=HorizonPolicy(),
             cfg: IntegratorConfig = SWEEP, ps=(1, 2), jobs=1):
    """Integrate both fields from every row of ``X`` under the horizon policy.

    Passing the same object as both fields integrates once.  Work is split
    into fixed blocks of ``policy.batch`` samples, so results do not depend on
    ``jobs``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ps = tuple(sorted(set(ps)))

    def block(lo, hi):
        return _run_pair_block(field_a, field_b, X[lo:hi], reg_a, reg_b, domain, policy, cfg, ps)

    parts = parallel_chunks(block, len(X), jobs, policy.batch)
    cat = {k: np.concatenate([r[k] for r in parts]) for k in
           ("sup", "sup_coarse", "label_a", "label_b", "horizon", "escaped")}
    lp = {p: np.concatenate([r["lp"][p] for r in parts]) for p in ps}
    lp_long = {p: np.concatenate([r["lp_long"][p] for r in parts]) for p in ps}
    return PairRun(X, cat["sup"], cat["sup_coarse"], cat["label_a"], cat["label_b"],
                   cat["horizon"], cat["escaped"], lp, lp_long, policy,
                   int(sum(r["nfev"] for r in parts)))


def run_single(field, X, registry, domain, policy=HorizonPolicy(), cfg=SWEEP, jobs=1):
    """Basin labels for one field: a sample is labeled once it stays in one
    capture set for the guard time; otherwise it is ``UNRESOLVED``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    guard = policy.guard if policy.guard is not None else registry.relaxation_time
    guard_chunks = max(1, int(math.ceil(guard / policy.chunk - 1e-12)))
    max_chunks = int(math.ceil(policy.max_time / policy.chunk - 1e-12))
    coarse = HorizonPolicy(**{**policy.to_dict(), "points_per_chunk": 1})

    def block(lo, hi):
        x = X[lo:hi].copy()
        n = len(x)
        lab = np.full(n, UNRESOLVED)
        prev = np.full(n, UNRESOLVED)
        held = np.zeros(n, dtype=np.int64)
        esc = np.zeros(n, dtype=bool)
        t_cap = np.full(n, np.nan)
        h = np.zeros(n)
        active = np.ones(n, dtype=bool)
        for k in range(max_chunks):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            _, r = _advance(field, x[idx], k * coarse.chunk, coarse, cfg, domain, h[idx])
            x[idx] = r.states[:, -1]
            h[idx] = r.last_step
            bad = r.status != 0
            esc[idx[bad]] = True
            active[idx[bad]] = False
            idx = idx[~bad]
            cap = registry.capture(x[idx])
            same = (cap >= 0) & (cap == prev[idx])
            held[idx] = np.where(same, held[idx] + 1, np.where(cap >= 0, 1, 0))
            first = (cap >= 0) & (held[idx] == 1)
            t_cap[idx[first]] = (k + 1) * coarse.chunk
            prev[idx] = cap
            done = held[idx] > guard_chunks
            lab[idx[done]] = cap[done]
            active[idx[done]] = False
        return lab, esc, t_cap

    parts = parallel_chunks(block, len(X), jobs, policy.batch)
    return (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]))
