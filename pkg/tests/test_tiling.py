import math
import warnings

import numpy as np
import pytest

from approx.tiling import (NormalHyperbolicityWarning, NotIsochronous, TiledRingField, TilingReport,
                           TilingSpec, check_isochrony, measure_dtype_error, ring_samples,
                           tile_iso_cylinder, tile_line, tile_ring)
from approx.invariants import find_fixed_points
from approx.dynsys import Domain
from approx.zoo import IsochronousCylinderField, LineAttractorField, RingAttractorField


def test_spec_validation():
    with pytest.raises(ValueError):
        TilingSpec("torus", 4)
    with pytest.raises(ValueError):
        TilingSpec("ring", 1)
    with pytest.raises(ValueError):
        TilingSpec("ring", 8, eps_t=0.0)


def test_ring_tiles_are_hyperbolic_sinks_and_saddles():
    ring = RingAttractorField(kappa=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        t = tile_ring(ring, TilingSpec("ring", 8))
    assert t.normally_hyperbolic
    assert np.allclose(t(t.sinks), 0.0, atol=1e-14)
    assert np.allclose(t(t.saddles), 0.0, atol=1e-14)
    for s in t.sinks:
        assert np.all(np.linalg.eigvals(t.jacobian(s)).real < 0)
    for s in t.saddles:
        ev = np.sort(np.linalg.eigvals(t.jacobian(s)).real)
        assert ev[0] < 0 < ev[1]
    assert t.spacing == pytest.approx(2 * math.pi / 8)


def test_strong_tiling_warns():
    with pytest.warns(NormalHyperbolicityWarning):
        t = tile_ring(RingAttractorField(kappa=1.0), TilingSpec("ring", 8, eps_t=0.5))
    assert not t.normally_hyperbolic
    with pytest.warns(NormalHyperbolicityWarning):
        tile_line(LineAttractorField(), TilingSpec("line", 5, eps_t=1.0))


def test_line_tiling_sinks():
    t = tile_line(LineAttractorField(), TilingSpec("line", 5))
    assert t.normally_hyperbolic
    fps = find_fixed_points(t, Domain((-1.5, -1.0), (1.5, 1.0)), per_axis=41)
    sinks = sorted(fp.location[0] for fp in fps if fp.stable)
    assert np.allclose(sinks, np.linspace(-1, 1, 5), atol=1e-9)
    assert sum(fp.classification == "saddle" for fp in fps) == 4


def test_samples_on_sinks_do_not_move():
    ring = RingAttractorField()
    t = tile_ring(ring, TilingSpec("ring", 16))
    rep = measure_dtype_error(ring, t, t.sinks)
    assert not rep.unresolved.any()
    # zero up to the sweep integration tolerance (rtol 1e-6)
    assert np.all(rep.displacements < 1e-6)


def test_displacement_bounded_by_spacing_on_ring():
    ring = RingAttractorField()
    X = ring_samples(300, seed=1)
    r = np.linalg.norm(X, axis=1)
    assert r.min() >= 0.5 and r.max() <= 1.5
    rep = measure_dtype_error(ring, tile_ring(ring, TilingSpec("ring", 16)), X)
    assert rep.resolved.size >= 295
    # the captured sink is at most half a spacing away along the circle
    assert rep.max <= 2 * math.sin(rep.spacing / 4) + 1e-6
    assert rep.frac_within == 1.0


def test_line_displacement():
    line = LineAttractorField()
    t = tile_line(line, TilingSpec("line", 9))
    X = np.column_stack([np.linspace(-0.95, 0.95, 40), np.full(40, 0.3)])
    rep = measure_dtype_error(line, t, X)
    assert rep.spacing == pytest.approx(0.25)
    assert rep.max <= 0.125 + 1e-6


def test_report_serialization():
    rep = TilingReport(4, 0.5, np.array([0.1, 0.6, np.nan]), np.array([False, False, True]))
    assert rep.max == 0.6 and rep.frac_exceeding == 0.5
    d = rep.to_dict()
    assert d["n_unresolved"] == 1 and d["n"] == 3
    assert rep.to_csv().splitlines()[0] == "displacement,unresolved"


def test_isochrony_check():
    p = check_isochrony(IsochronousCylinderField())
    assert np.allclose(p, 2 * math.pi, rtol=1e-10)
    with pytest.raises(NotIsochronous):
        check_isochrony(IsochronousCylinderField(eta=0.05))


def test_cylinder_tiling_restores_common_period():
    ct = tile_iso_cylinder(IsochronousCylinderField(), TilingSpec("iso-cylinder", 3))
    assert ct.tiled.levels.tolist() == [-0.5, 0.0, 0.5]
    assert np.ptp(ct.uncorrected_periods) > 1e-3  # the model error is visible before correction
    assert np.allclose(ct.periods, ct.target, rtol=1e-9)
    assert isinstance(ct.tiled, IsochronousCylinderField)
    assert not isinstance(ct.tiled, TiledRingField)
