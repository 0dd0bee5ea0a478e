"""Reproducing-control construction: residuals, norms, and structure."""

import numpy as np
import pytest
import scipy.integrate
import sympy
from hypothesis import given, settings, strategies as st

from wavebismut.controls import (ControlRequest, VARIANTS, _phi_family,
                                 _simpson_weights, build_control, bump_profile,
                                 control_norm_scaling, direction_from_a,
                                 export_control_csv, noise_cols_grid,
                                 reproducing_residual)
from wavebismut.errors import (InvalidParams, InvalidTime,
                               UnsupportedDirection)
from wavebismut.spectral import HVector, ModelParams, SigmaSpec, build_basis


def make_basis(variant, n=4, delta=2.0, allow_degenerate=False, **kw):
    kind = {"WaveK": "Wave", "WaveJ": "Wave", "DampedJ": "Damped",
            "SmoothedJ": "DampedSmoothed", "SmoothedJ1": "DampedSmoothed"}[variant]
    extra = {}
    if kind != "Wave":
        extra = {"rho": kw.pop("rho", 1.0), "alpha": kw.pop("alpha", 0.6)}
        if kind == "DampedSmoothed":
            extra["eps"] = kw.pop("eps", 0.2)
    return build_basis(ModelParams(kind=kind, N=n, delta=delta, T=2.0,
                                   **extra, **kw),
                       allow_degenerate=allow_degenerate)


def make_direction(basis, variant, seed=0):
    rng = np.random.default_rng(seed)
    if variant == "WaveK":
        return HVector(rng.standard_normal(basis.N),
                       rng.standard_normal(basis.N))
    return direction_from_a(basis, variant, rng.standard_normal(basis.N))


def test_bump_normalisation_and_endpoints():
    t_end = 0.7
    taus = np.linspace(0.0, t_end, 2001)
    phi, dphi = bump_profile(t_end, taus)
    integral = scipy.integrate.simpson(phi, x=taus)
    assert abs(integral - 1.0) <= 1e-10
    assert phi[0] == phi[-1] == 0.0
    assert dphi[0] == dphi[-1] == 0.0
    with pytest.raises(InvalidTime):
        bump_profile(t_end, np.array([-0.1]))


def test_bump_derivative_symbolic():
    """The returned dphi is the exact tau-derivative of phi."""
    tau, L = sympy.symbols("tau L", positive=True)
    phi = 30 * tau**2 * (L - tau) ** 2 / L**5
    dphi = sympy.diff(phi, tau)
    f = sympy.lambdify((tau, L), dphi, "numpy")
    ts = np.linspace(1e-6, 0.9, 57)
    _, got = bump_profile(0.9, ts)
    assert np.allclose(got, f(ts, 0.9), rtol=1e-12)


def test_phi_family_against_quadrature():
    for w in (0.0 + 0j, 2.3 - 1.1j, -12.0 + 0j, 40.0 + 5j, -0.003 + 0.002j):
        phis = _phi_family(np.array([w]), mmax=6)
        for m in range(7):
            re = scipy.integrate.quad(
                lambda u: (u**m * np.exp(w * u)).real, 0, 1)[0]
            im = scipy.integrate.quad(
                lambda u: (u**m * np.exp(w * u)).imag, 0, 1)[0]
            assert abs(phis[m, 0] - (re + 1j * im)) <= 1e-11 * max(
                1.0, abs(re + 1j * im))


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("t", [0.05, 0.8])
def test_reproducing_identity(variant, t):
    basis = make_basis(variant)
    h = make_direction(basis, variant, seed=3)
    req = ControlRequest(variant, h, 0.0, t)
    ctrl = build_control(basis, req, with_samples=False)
    res = reproducing_residual(basis, ctrl, req, 512)
    assert res <= 1e-8


def test_reproducing_identity_with_jordan_mode():
    basis = make_basis("DampedJ", n=8, alpha=0.75, allow_degenerate=True)
    assert basis.degenerate.any()
    h = make_direction(basis, "DampedJ", seed=1)
    req = ControlRequest("DampedJ", h, 0.0, 0.6)
    ctrl = build_control(basis, req, with_samples=False)
    assert reproducing_residual(basis, ctrl, req, 1024) <= 1e-8


def test_reproducing_identity_nonzero_start_and_varying_sigma():
    sigma = SigmaSpec(form="cosine", base=1.0, amp=0.4, freq=3.0)
    basis = build_basis(ModelParams(kind="Wave", N=3, delta=2.0, T=2.0,
                                    sigma=sigma))
    h = make_direction(basis, "WaveJ", seed=5)
    req = ControlRequest("WaveJ", h, 0.3, 1.1)
    ctrl = build_control(basis, req, with_samples=False)
    assert reproducing_residual(basis, ctrl, req, 1024) <= 1e-8


def test_residual_panel_refinement_is_fourth_order():
    basis = make_basis("WaveJ")
    h = make_direction(basis, "WaveJ", seed=2)
    req = ControlRequest("WaveJ", h, 0.0, 1.0)
    ctrl = build_control(basis, req, with_samples=False)
    r1 = reproducing_residual(basis, ctrl, req, 64)
    r2 = reproducing_residual(basis, ctrl, req, 128)
    assert r1 / r2 >= 8.0


@pytest.mark.parametrize("variant", VARIANTS)
def test_exact_l2_norm_matches_quadrature(variant):
    basis = make_basis(variant)
    h = make_direction(basis, variant, seed=4)
    req = ControlRequest(variant, h, 0.0, 0.9)
    ctrl = build_control(basis, req, sample_steps=4096)
    wts = _simpson_weights(4096, 0.9 / 4096)
    quad = np.sqrt(float(wts @ (ctrl.samples**2).sum(axis=1)))
    assert abs(ctrl.l2norm - quad) <= 1e-8 * quad


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 50), a=st.floats(-3.0, 3.0), b=st.floats(-3.0, 3.0))
def test_control_is_linear_in_direction(seed, a, b):
    basis = make_basis("DampedJ")
    rng = np.random.default_rng(seed)
    h1 = direction_from_a(basis, "DampedJ", rng.standard_normal(basis.N))
    h2 = direction_from_a(basis, "DampedJ", rng.standard_normal(basis.N))
    taus = np.linspace(0.05, 0.75, 9)

    def u(h):
        req = ControlRequest("DampedJ", h, 0.0, 0.8)
        return build_control(basis, req, with_samples=False).evaluate(taus)

    combo = u(a * h1 + b * h2)
    ref = a * u(h1) + b * u(h2)
    scale = np.abs(ref).max() + 1e-30
    assert np.abs(combo - ref).max() <= 1e-12 * scale


def test_control_time_translation_invariance():
    """With constant sigma, the window (s, t) control is the shifted (0, t-s) one."""
    basis = make_basis("WaveJ")
    h = make_direction(basis, "WaveJ", seed=6)
    base = build_control(basis, ControlRequest("WaveJ", h, 0.0, 0.7),
                         with_samples=False)
    shifted = build_control(basis, ControlRequest("WaveJ", h, 0.5, 1.2),
                            with_samples=False)
    taus = np.linspace(0.01, 0.69, 11)
    ref = base.evaluate(taus)
    got = shifted.evaluate(0.5 + taus)
    assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()
    assert abs(base.l2norm - shifted.l2norm) <= 1e-12 * base.l2norm


def test_control_vanishes_outside_window():
    basis = make_basis("WaveJ")
    h = make_direction(basis, "WaveJ", seed=0)
    ctrl = build_control(basis, ControlRequest("WaveJ", h, 0.2, 0.8),
                         with_samples=False)
    vals = ctrl.evaluate(np.array([0.0, 0.1, 0.2, 0.8, 0.95]))
    assert np.all(vals == 0.0)


def test_direction_domain_errors():
    basis = make_basis("WaveJ")
    bad = HVector(np.ones(basis.N), np.zeros(basis.N))
    with pytest.raises(UnsupportedDirection):
        build_control(basis, ControlRequest("WaveJ", bad, 0.0, 1.0))
    damped = make_basis("DampedJ")
    h = make_direction(damped, "DampedJ")
    with pytest.raises(UnsupportedDirection):
        build_control(basis, ControlRequest("DampedJ", h, 0.0, 1.0))
    with pytest.raises(InvalidTime):
        ControlRequest("WaveJ", make_direction(basis, "WaveJ"), 0.5, 0.5)
    with pytest.raises(InvalidTime):
        build_control(basis, ControlRequest(
            "WaveJ", make_direction(basis, "WaveJ"), 0.0, 5.0))


def test_smoothedj1_direction_scaling():
    basis = make_basis("SmoothedJ1", eps=0.25)
    a = np.ones(basis.N)
    h = direction_from_a(basis, "SmoothedJ1", a)
    assert np.allclose(h.c2, basis.mu**0.25)
    assert np.all(h.c1 == 0.0)


def test_noise_cols_match_semigroup_column():
    from wavebismut.spectral import semigroup_blocks
    for variant in ("WaveJ", "DampedJ"):
        basis = make_basis(variant)
        us = np.array([0.0, 0.13, 0.9])
        cols = noise_cols_grid(basis, us)
        for i, u in enumerate(us):
            ref = semigroup_blocks(basis, float(u))[:, :, 1].T
            assert np.allclose(cols[i], ref, rtol=1e-12, atol=1e-14)


def test_scaling_requires_two_decades():
    basis = make_basis("WaveJ")
    with pytest.raises(InvalidParams):
        control_norm_scaling(basis, "WaveJ", np.ones(basis.N),
                             np.array([0.1, 1.0]))


def test_export_control_csv(tmp_path):
    basis = make_basis("WaveJ", n=2)
    ctrl = build_control(basis, ControlRequest(
        "WaveJ", make_direction(basis, "WaveJ"), 0.0, 0.5), sample_steps=8)
    out = tmp_path / "ctrl.csv"
    export_control_csv(ctrl, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "tau,mode,coefficient"
    assert len(lines) == 1 + 9 * 2
