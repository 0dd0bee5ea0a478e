"""Eigenstructure, semigroup, and norm checks against dense linear algebra."""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from wavebismut.errors import DegenerateMode, InvalidParams, SingularProjection
from wavebismut.spectral import (HVector, ModelParams, SigmaSpec,
                                 apply_generator, apply_semigroup, build_basis,
                                 check_trace_condition, hs_norm_squared,
                                 mode_project, propagate_grid,
                                 semigroup_blocks)


def wave_params(n=6, delta=2.0):
    return ModelParams(kind="Wave", N=n, delta=delta, T=2.0)


def damped_params(n=6, delta=2.0, rho=1.0, alpha=0.6, kind="Damped", eps=None):
    return ModelParams(kind=kind, N=n, delta=delta, T=2.0, rho=rho,
                       alpha=alpha, eps=eps)


def rand_h(n, seed=0):
    rng = np.random.default_rng(seed)
    return HVector(rng.standard_normal(n), rng.standard_normal(n))


def test_mu_powers_exact():
    basis = build_basis(wave_params(5, delta=1.5))
    assert np.array_equal(basis.mu, np.arange(1, 6.0) ** 1.5)


def test_param_validation():
    with pytest.raises(InvalidParams):
        ModelParams(kind="Heat", N=4, delta=2.0, T=1.0)
    with pytest.raises(InvalidParams):
        ModelParams(kind="Wave", N=0, delta=2.0, T=1.0)
    with pytest.raises(InvalidParams):
        ModelParams(kind="Wave", N=4, delta=2.0, T=1.0, rho=1.0)
    with pytest.raises(InvalidParams):
        ModelParams(kind="Damped", N=4, delta=2.0, T=1.0, rho=1.0, alpha=1.5)
    with pytest.raises(InvalidParams):
        ModelParams(kind="Damped", N=4, delta=2.0, T=1.0, rho=1.0, alpha=0.5,
                    eps=0.1)
    with pytest.raises(InvalidParams):
        ModelParams(kind="DampedSmoothed", N=4, delta=2.0, T=1.0, rho=1.0,
                    alpha=0.5, eps=0.7)
    with pytest.raises(InvalidParams):
        ModelParams(kind="Wave", N=4, delta=2.0, T=1.0,
                    sigma=SigmaSpec(form="cosine", base=1.0, amp=2.0))


@pytest.mark.parametrize("kind,extra", [
    ("Wave", {}),
    ("Damped", {"rho": 1.0, "alpha": 0.6}),
    ("DampedSmoothed", {"rho": 0.8, "alpha": 0.3, "eps": 0.2}),
])
@pytest.mark.parametrize("t", [0.0, 0.05, 0.7, 1.9])
def test_semigroup_matches_dense_expm(kind, extra, t):
    """Closed-form per-mode exponentials agree with scipy's expm."""
    params = ModelParams(kind=kind, N=6, delta=2.0, T=2.0, **extra)
    basis = build_basis(params)
    blocks = basis.generator_blocks()
    e = semigroup_blocks(basis, t)
    for n in range(basis.N):
        ref = scipy.linalg.expm(t * blocks[n])
        assert np.allclose(e[n], ref, rtol=1e-12, atol=1e-13)


def test_jordan_mode_semigroup_matches_expm():
    # delta=2, alpha=0.75, rho=1 puts mode 4 exactly on the degeneracy locus
    params = ModelParams(kind="Damped", N=8, delta=2.0, T=2.0, rho=1.0,
                         alpha=0.75)
    with pytest.raises(DegenerateMode):
        build_basis(params)
    basis = build_basis(params, allow_degenerate=True)
    assert basis.degenerate[3] and basis.degenerate.sum() == 1
    blocks = basis.generator_blocks()
    for t in (0.1, 1.0, 1.7):
        e = semigroup_blocks(basis, t)
        for n in range(8):
            assert np.allclose(e[n], scipy.linalg.expm(t * blocks[n]),
                               rtol=1e-12, atol=1e-13)


def test_damped_eigenvalue_relations():
    basis = build_basis(damped_params(20, delta=2.5, rho=0.7, alpha=0.4))
    lp, lm = basis.lam_plus, basis.lam_minus
    # Vieta: product mu, sum -rho mu^alpha
    assert np.allclose(lp * lm, basis.mu, rtol=1e-12)
    assert np.allclose(lp + lm, -0.7 * basis.mu**0.4, rtol=1e-12)
    assert np.all(lp.real < 0) and np.all(lm.real < 0)


def test_overdamped_small_root_accuracy():
    # strongly overdamped modes: lam_plus ~ -mu^(1-alpha)/rho without cancellation
    basis = build_basis(damped_params(5, delta=4.0, rho=10.0, alpha=0.9))
    lp = basis.lam_plus
    resid = lp**2 + 10.0 * basis.mu**0.9 * lp + basis.mu
    assert np.all(np.abs(resid) <= 1e-10 * basis.mu)


@settings(max_examples=30, deadline=None)
@given(t1=st.floats(0.01, 1.0), t2=st.floats(0.01, 1.0),
       seed=st.integers(0, 10))
def test_semigroup_property(t1, t2, seed):
    basis = build_basis(damped_params())
    h = rand_h(basis.N, seed)
    one = apply_semigroup(basis, t1 + t2, h)
    two = apply_semigroup(basis, t1, apply_semigroup(basis, t2, h))
    assert float(basis.norm_h(one - two)) <= 1e-12 * float(basis.norm_h(h))


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.0, 2.0), seed=st.integers(0, 10))
def test_wave_group_preserves_h_norm(t, seed):
    basis = build_basis(wave_params())
    h = rand_h(basis.N, seed)
    before = float(basis.norm_h(h))
    after = float(basis.norm_h(apply_semigroup(basis, t, h)))
    assert abs(after - before) <= 1e-12 * before


def test_generator_is_semigroup_derivative():
    basis = build_basis(damped_params())
    h = rand_h(basis.N, 3)
    eps = 1e-6
    fd = (1.0 / (2 * eps)) * (apply_semigroup(basis, 2 * eps, h)
                              - apply_semigroup(basis, 0.0, h))
    ex = apply_semigroup(basis, eps, apply_generator(basis, h))
    assert float(basis.norm_h(fd - ex)) <= 1e-7 * float(basis.norm_h(h))


def test_propagate_grid_matches_pointwise():
    for params in (wave_params(), damped_params()):
        basis = build_basis(params)
        h = rand_h(basis.N, 5)
        taus = np.linspace(0.0, 1.5, 7)
        grid = propagate_grid(basis, taus, h)
        for i, t in enumerate(taus):
            ref = apply_semigroup(basis, float(t), h).as_array()
            assert np.allclose(grid[i], ref, rtol=1e-12, atol=1e-14)


def test_mode_project_reconstructs():
    basis = build_basis(damped_params(8, rho=0.5, alpha=0.35))
    h = rand_h(8, 7)
    hp, hm = mode_project(basis, h)
    rec = (hp * basis.vec_plus + hm * basis.vec_minus).real
    assert np.allclose(rec[0], h.c1, atol=1e-10)
    assert np.allclose(rec[1], h.c2, atol=1e-10)


def test_mode_project_refuses_jordan_modes():
    params = ModelParams(kind="Damped", N=8, delta=2.0, T=1.0, rho=1.0,
                         alpha=0.75)
    basis = build_basis(params, allow_degenerate=True)
    with pytest.raises(SingularProjection):
        mode_project(basis, rand_h(8))


def test_wave_hs_norm_is_sum_of_inverse_mu():
    basis = build_basis(wave_params(12, delta=2.0))
    ref = float((1.0 / basis.mu).sum())
    for t in np.linspace(0.01, 2.0, 17):
        assert abs(hs_norm_squared(basis, float(t)) - ref) <= 1e-10 * ref


def test_hs_norm_quadrature_oracle():
    """HS norm of e^{tA}J agrees with a dense-matrix evaluation per mode."""
    basis = build_basis(damped_params(6, rho=1.2, alpha=0.45))
    t = 0.37
    blocks = basis.generator_blocks()
    total = 0.0
    for n in range(6):
        col = scipy.linalg.expm(t * blocks[n])[:, 1]
        total += (basis.u_weight[n] * col[0]) ** 2 \
            + (basis.v_weight[n] * col[1]) ** 2
    assert abs(hs_norm_squared(basis, t) - total) <= 1e-12 * total


def test_trace_conditions():
    assert check_trace_condition(wave_params(delta=1.5))
    assert not check_trace_condition(ModelParams(kind="Wave", N=4, delta=0.9,
                                                 T=1.0))
    assert check_trace_condition(damped_params(delta=2.5, alpha=0.5))
    assert not check_trace_condition(damped_params(delta=1.8, alpha=0.5))
    assert check_trace_condition(damped_params(delta=1.8, alpha=0.4,
                                               kind="DampedSmoothed", eps=0.2))


def test_norm_weights_by_kind():
    wave = build_basis(wave_params(4))
    assert np.allclose(wave.v_weight, wave.mu**-0.5)
    damped = build_basis(damped_params(4))
    assert np.array_equal(damped.u_weight, np.ones(4))
    sm = build_basis(damped_params(4, kind="DampedSmoothed", alpha=0.4,
                                   eps=0.2))
    assert np.allclose(sm.u_weight, sm.mu**-0.2)
    assert np.allclose(sm.v_weight, sm.mu**-0.2)


def test_k_norm_wave_only():
    wave = build_basis(wave_params(4))
    h = HVector(np.array([1.0, 0, 0, 0]), np.array([0.0, 2, 0, 0]))
    assert abs(float(wave.norm_k(h)) - np.sqrt(wave.mu[0] + 4.0)) <= 1e-14
    with pytest.raises(InvalidParams):
        build_basis(damped_params(4)).norm_k(h)
