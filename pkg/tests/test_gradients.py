"""Weighted, pathwise, and finite-difference gradient estimators."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wavebismut.controls import ControlRequest, build_control, direction_from_a
from wavebismut.errors import UnsupportedFunctional, WindowMismatch
from wavebismut.gradients import (GradientReport, TestFunctional,
                                  append_report_csv, estimate_gradient_bismut,
                                  estimate_gradient_fd,
                                  estimate_gradient_pathwise,
                                  skorokhod_integral)
from wavebismut.paths import SimConfig, simulate_reference
from wavebismut.spectral import (HVector, ModelParams, apply_semigroup,
                                 build_basis)


def wave_basis(n=4):
    return build_basis(ModelParams(kind="Wave", N=n, delta=2.0, T=2.0))


def cvec(n, c1=None, c2=None):
    v1 = np.zeros(n) if c1 is None else np.asarray(c1, float)
    v2 = np.zeros(n) if c2 is None else np.asarray(c2, float)
    return HVector(v1, v2)


@pytest.mark.parametrize("form", ["Linear", "Quadratic", "BoundedSmooth",
                                  "PolyGrowth"])
def test_dvalue_matches_finite_difference(form):
    n = 3
    f = TestFunctional(form=form, c=cvec(n, [1.0, -0.5, 0.2], [0.3, 0, 0.1]),
                       K=3)
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 2, n))
    eps = 1e-6
    dX = eps * np.broadcast_to(f.c.as_array(), X.shape)
    fd = (f.value(X + dX) - f.value(X - dX)) / (2 * eps)
    cn = float((f.c.c1**2).sum() + (f.c.c2**2).sum())
    assert np.allclose(fd, f.dvalue(X) * cn, atol=1e-5 * max(1, cn))


def test_clamp_has_no_gradient():
    f = TestFunctional(form="BoundedNonsmooth", c=cvec(2, [1, 0]))
    assert not f.differentiable
    with pytest.raises(UnsupportedFunctional):
        f.dvalue(np.zeros((1, 2, 2)))
    assert f.sup_norm == 1.0
    X = np.full((1, 2, 2), 5.0)
    assert f.value(X)[0] == 1.0


def test_unbounded_sup_norm_raises():
    f = TestFunctional(form="Quadratic", c=cvec(2, [1, 0]))
    with pytest.raises(UnsupportedFunctional):
        f.sup_norm


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 200))
def test_skorokhod_integral_moments(seed):
    """delta(u) is centred Gaussian with variance ||u||^2."""
    basis = wave_basis(2)
    cfg = SimConfig(steps=32, M=8000, seed=seed, t_end=0.6)
    h = direction_from_a(basis, "WaveJ", np.array([1.0, 0.4]))
    ctrl = build_control(basis, ControlRequest("WaveJ", h, 0.0, 0.6),
                         with_samples=False)
    bundle = simulate_reference(basis, cfg, HVector.zero(2),
                                store_paths=False)
    delta = skorokhod_integral(ctrl, bundle)
    se = ctrl.l2norm**2 * np.sqrt(2.0 / cfg.M)
    assert abs(delta.mean()) <= 4.0 * ctrl.l2norm / np.sqrt(cfg.M)
    assert abs(delta.var(ddof=1) - ctrl.l2norm**2) <= 4.0 * se


def test_window_mismatch():
    basis = wave_basis(2)
    cfg = SimConfig(steps=8, M=10, seed=0, t_end=0.5)
    h = direction_from_a(basis, "WaveJ", np.array([1.0, 0.0]))
    ctrl = build_control(basis, ControlRequest("WaveJ", h, 0.0, 1.0),
                         with_samples=False)
    bundle = simulate_reference(basis, cfg, HVector.zero(2),
                                store_paths=False)
    with pytest.raises(WindowMismatch):
        skorokhod_integral(ctrl, bundle)


def test_linear_functional_weighted_estimator_unbiased():
    basis = wave_basis(2)
    cfg = SimConfig(steps=32, M=20000, seed=3, t_end=0.5)
    a = np.array([1.0, 0.0])
    h = direction_from_a(basis, "WaveJ", a)
    f = TestFunctional(form="Linear", c=cvec(2, [1.0, 0], [0.7, 0]))
    ctrl = build_control(basis, ControlRequest("WaveJ", h, 0.0, 0.5),
                         with_samples=False)
    x = HVector.zero(2)
    rep = estimate_gradient_bismut(basis, cfg, x, f, ctrl, h)
    eh = apply_semigroup(basis, 0.5, h).as_array()
    exact = float(eh[0] @ f.c.c1 + eh[1] @ f.c.c2)
    assert abs(rep.estimate - exact) <= 4.0 * rep.stderr
    assert rep.method == "bismut"
    assert rep.bound_value < np.inf


def test_three_estimators_agree_on_smooth_functional():
    basis = wave_basis(2)
    cfg = SimConfig(steps=32, M=20000, seed=8, t_end=0.5)
    h = direction_from_a(basis, "WaveJ", np.array([1.0, 0.0]))
    f = TestFunctional(form="BoundedSmooth", c=cvec(2, [0.8, 0], [0.2, 0]))
    ctrl = build_control(basis, ControlRequest("WaveJ", h, 0.0, 0.5),
                         with_samples=False)
    x = HVector(np.array([0.3, 0.0]), np.array([0.1, 0.0]))
    bundle = simulate_reference(basis, cfg, x, store_paths=False)
    r1 = estimate_gradient_bismut(basis, cfg, x, f, ctrl, h, bundle=bundle)
    r2 = estimate_gradient_pathwise(basis, cfg, x, f, h, bundle=bundle)
    r3 = estimate_gradient_fd(basis, cfg, x, f, h, 1e-4, bundle=bundle)
    for a, b in ((r1, r2), (r1, r3), (r2, r3)):
        comb = np.hypot(a.stderr, b.stderr)
        assert abs(a.estimate - b.estimate) <= 4.0 * max(comb, 1e-6)


def test_pathwise_needs_smooth_functional():
    basis = wave_basis(2)
    cfg = SimConfig(steps=4, M=10, seed=0, t_end=0.5)
    f = TestFunctional(form="BoundedNonsmooth", c=cvec(2, [1, 0]))
    h = direction_from_a(basis, "WaveJ", np.array([1.0, 0.0]))
    with pytest.raises(UnsupportedFunctional):
        estimate_gradient_pathwise(basis, cfg, HVector.zero(2), f, h)


def test_fd_uses_common_noise():
    """With shared paths the FD of a linear functional is exact, not noisy."""
    basis = wave_basis(2)
    cfg = SimConfig(steps=8, M=100, seed=5, t_end=0.5)
    f = TestFunctional(form="Linear", c=cvec(2, [1.0, 0], [0.5, 0]))
    h = direction_from_a(basis, "WaveJ", np.array([1.0, 0.0]))
    rep = estimate_gradient_fd(basis, cfg, HVector.zero(2), f, h, 0.1)
    eh = apply_semigroup(basis, 0.5, h).as_array()
    exact = float(eh[0] @ f.c.c1 + eh[1] @ f.c.c2)
    assert abs(rep.estimate - exact) <= 1e-12 * abs(exact)
    assert rep.stderr <= 1e-12


def test_report_csv_append(tmp_path):
    out = tmp_path / "grad.csv"
    rep = GradientReport(estimate=1.5, stderr=0.1, M=100, method="bismut",
                         bound_value=2.0, s=0.0, t=1.0)
    append_report_csv(rep, out)
    append_report_csv(rep, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "method,t,s,M,estimate,stderr,bound"
    assert len(lines) == 3
    assert lines[1].startswith("bismut,1.0,0.0,100,1.5,0.1,2.0")
