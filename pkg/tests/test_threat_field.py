import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pmppinn import autodiff as ad
from pmppinn.threat_field import RadialBasis, ThreatField, random_field

coord = st.floats(-15.0, 15.0)


def _field(temporal="static", seed=7, n=4):
    return random_field(np.random.default_rng(seed), n, temporal=temporal)


def test_empty_field_is_one():
    f = ThreatField()
    assert f.value((3.0, -2.0), 1.5) == 1.0
    assert f.grad_x((3.0, -2.0)) == (0.0, 0.0)


def test_peak_at_center():
    f = ThreatField((RadialBasis(0.7, (1.0, 2.0), ((0.3, 0.1), (0.1, 0.2))),))
    assert f.value((1.0, 2.0)) == pytest.approx(1.0 + 5.0 * 0.7, abs=1e-15)
    assert f.grad_x((1.0, 2.0)) == (0.0, 0.0)


def test_unit_offset_value():
    # 1 + 5 exp(-1/2), written out independently
    f = ThreatField((RadialBasis(1.0, (0.0, 0.0)),))
    assert f.value((1.0, 0.0)) == pytest.approx(4.032653298563167, abs=1e-12)


@pytest.mark.parametrize("temporal", ["static", "cosine"])
def test_gradient_matches_finite_differences(temporal, rng):
    f = _field(temporal)
    pts = rng.uniform(-15, 15, size=(1000, 2))
    ts = rng.uniform(0, 5, size=1000)
    h = 1e-6
    g1, g2 = f.grad_x(pts, ts)
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    fd1 = (f.value(pts + e1, ts) - f.value(pts - e1, ts)) / (2 * h)
    fd2 = (f.value(pts + e2, ts) - f.value(pts - e2, ts)) / (2 * h)
    floor = 1e-2  # rounding of c/h dominates for tiny gradients
    assert np.all(np.abs(g1 - fd1) <= 1e-7 * np.maximum(np.abs(fd1), floor))
    assert np.all(np.abs(g2 - fd2) <= 1e-7 * np.maximum(np.abs(fd2), floor))


def test_time_derivative_matches_finite_differences(rng):
    f = _field("cosine")
    pts = rng.uniform(-15, 15, size=(1000, 2))
    ts = rng.uniform(0.01, 5, size=1000)
    h = 1e-6
    fd = (f.value(pts, ts + h) - f.value(pts, ts - h)) / (2 * h)
    ct = f.dc_dt(pts, ts)
    assert np.all(np.abs(ct - fd) <= 1e-7 * np.maximum(np.abs(fd), 1e-2))
    assert np.all(f.dc_dt(pts, 0.0) == 0.0)


def test_static_field_has_no_time_dependence(rng):
    f = _field()
    pts = rng.uniform(-15, 15, size=(50, 2))
    assert np.array_equal(f.value(pts, 0.0), f.value(pts, 3.7))
    assert np.all(f.dc_dt(pts, 2.0) == 0.0)


def test_cosine_scale_formula():
    f = ThreatField((RadialBasis(1.2, (0.0, 0.0)),), temporal="cosine")
    t = 0.9
    assert f.value((0.0, 0.0), t) == pytest.approx(1 + 5 * 0.6 * (1.5 + math.cos(1.2 * t)), abs=1e-14)


@given(x1=coord, x2=coord, perm_seed=st.integers(0, 1000))
def test_permutation_invariance(x1, x2, perm_seed):
    f = _field(n=5)
    order = np.random.default_rng(perm_seed).permutation(5)
    g = ThreatField(tuple(f.bases[i] for i in order))
    assert g.value((x1, x2)) == pytest.approx(f.value((x1, x2)), rel=1e-14, abs=1e-14)


@given(x1=coord, x2=coord, t=st.floats(0.0, 5.0))
def test_backends_agree(x1, x2, t):
    f = _field("cosine")
    ref = f.value((x1, x2), t)
    arr = f.value(np.array([x1, x2]), t)
    ten = f.value(torch.tensor([x1, x2], dtype=torch.float64), torch.tensor(t, dtype=torch.float64))
    with ad.Tape() as tape:
        v = f.value((tape.var(x1), tape.var(x2)), tape.var(t))
    for other in (float(arr), float(ten), v.value):
        assert other == pytest.approx(ref, rel=1e-13)


def test_autodiff_gradient_agrees_with_analytic():
    f = _field("cosine")
    with ad.Tape() as tape:
        x1, x2, t = tape.var(2.0), tape.var(-3.0), tape.var(0.8)
        d1, d2, dt = ad.gradient(f.value((x1, x2), t), [x1, x2, t])
    g1, g2 = f.grad_x((2.0, -3.0), 0.8)
    assert d1 == pytest.approx(g1, rel=1e-12)
    assert d2 == pytest.approx(g2, rel=1e-12)
    assert dt == pytest.approx(f.dc_dt((2.0, -3.0), 0.8), rel=1e-12)


def test_invalid_bases_rejected():
    with pytest.raises(ValueError):
        RadialBasis(1.0, (0, 0), ((1.0, 0.2), (0.3, 1.0)))
    with pytest.raises(ValueError):
        RadialBasis(1.0, (0, 0), ((1.0, 2.0), (2.0, 1.0)))
    with pytest.raises(ValueError):
        ThreatField(temporal="linear")


def test_validate_rejects_negative_field():
    bad = ThreatField((RadialBasis(-1.0, (0.0, 0.0)),))
    with pytest.raises(ValueError, match="not positive"):
        bad.validate((-15, 15))
    _field().validate((-15, 15))


def test_row_round_trip():
    f = _field()
    for b in f.bases:
        assert RadialBasis.from_row(b.as_row()) == b
