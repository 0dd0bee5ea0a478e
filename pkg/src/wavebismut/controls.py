"""Reproducing controls for the degenerate-noise gradient identity.

A control for direction h on the window (s, t) is a deterministic U-valued
function u with

    int_s^t e^{(t-tau)A} J sigma(tau) u(tau) dtau  =  e^{(t-s)A} h.

Construction: u(tau) = sigma(tau)^-1 (K1 psi(tau) + K2 psi'(tau)) with
psi(tau) = Phi_{t-s}(tau-s) e^{(tau-s)A} h and a quartic bump Phi that
vanishes to first order at both window ends.  Per mode the K rows reduce to
two scalars, so u is an exponential-polynomial whose L2 norm is computed in
closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidParams, InvalidTime, UnsupportedDirection
from .spectral import HVector, ModeBasis, semigroup_blocks

VARIANTS = ("WaveK", "WaveJ", "DampedJ", "SmoothedJ", "SmoothedJ1")

_VARIANT_KIND = {
    "WaveK": "Wave",
    "WaveJ": "Wave",
    "DampedJ": "Damped",
    "SmoothedJ": "DampedSmoothed",
    "SmoothedJ1": "DampedSmoothed",
}


def bump_profile(t_end, tau):
    """Normalised quartic bump on [0, t_end] and its derivative.

    Phi(tau) = 30 tau^2 (t_end - tau)^2 / t_end^5, so that int Phi = 1 and
    Phi, Phi' vanish at both endpoints.
    """
    if not t_end > 0:
        raise InvalidTime("bump window must have positive length")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or np.any(tau > t_end):
        raise InvalidTime("bump argument outside [0, t_end]")
    c = 30.0 / t_end**5
    phi = c * tau**2 * (t_end - tau) ** 2
    dphi = c * (2.0 * tau * (t_end - tau) ** 2 - 2.0 * tau**2 * (t_end - tau))
    return phi, dphi


def _bump_coeffs(L):
    """Monomial coefficients of Phi_L and Phi_L' on [0, L] (degree 4)."""
    c = 30.0 / L**5
    phi = np.array([0.0, 0.0, c * L**2, -2.0 * c * L, c])
    dphi = np.array([0.0, 2.0 * c * L**2, -6.0 * c * L, 4.0 * c, 0.0])
    return phi, dphi


@dataclass(frozen=True)
class ControlRequest:
    """Direction and window for a reproducing-control build."""

    variant: str
    h: HVector
    s: float
    t: float

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParams(f"unknown control variant {self.variant!r}")
        if not 0.0 <= self.s < self.t:
            raise InvalidTime("need 0 <= s < t")


def direction_from_a(basis: ModeBasis, variant: str, a) -> HVector:
    """Direction vector h for a U-coefficient vector a under the variant's map.

    The noise map sends a to (0, a); the rough-direction variant SmoothedJ1
    uses the unsmoothed map a -> (0, mu^eps a).
    """
    a = np.asarray(a, dtype=float)
    if variant == "SmoothedJ1":
        return HVector(np.zeros_like(a), basis.mu ** basis.params.smoothing_eps * a)
    return HVector(np.zeros_like(a), a)


def _check_direction(basis: ModeBasis, req: ControlRequest):
    kind = _VARIANT_KIND[req.variant]
    if basis.kind != kind:
        raise UnsupportedDirection(
            f"variant {req.variant} needs a {kind} basis, got {basis.kind}")
    if req.variant != "WaveK" and np.any(req.h.c1 != 0.0):
        raise UnsupportedDirection(
            "noise-range variants need a direction with zero first component")
    if req.t > basis.params.T + 1e-12:
        raise InvalidTime("control window exceeds the model horizon")


def _branch_data(basis: ModeBasis, h: HVector):
    """Eigen-branch decomposition of the per-mode control integrand.

    Returns lam, A0, B0, A1, B1 of shape (2, N) complex such that, before
    the sigma factor,

      u_n(tau) = Re sum_b e^{lam_b tau} ((A0 + A1 tau) Phi + (B0 + B1 tau) Phi').

    The tau-linear terms are only populated on Jordan (double-eigenvalue)
    modes, whose flow is e^{lam tau}(h + tau Nil h).
    """
    mu = basis.mu
    zeros = np.zeros((2, basis.N), dtype=complex)
    if basis.kind == "Wave":
        w = np.sqrt(mu)
        a, b = h.c1, h.c2
        hp = 0.5 * (a - 1j * b / w)
        lam = np.stack([1j * w, -1j * w])
        A0 = np.stack([b + 1j * w * a, np.conj(b + 1j * w * a)])
        B0 = np.stack([hp, np.conj(hp)])
        return lam, A0, B0, zeros, zeros.copy()
    rho, alpha = basis.params.rho, basis.params.alpha
    k1row = np.stack([rho * mu ** (alpha - 0.5), np.ones_like(mu)])
    k2row = mu ** (-0.5)  # second entry of the K2 row is zero
    lam = np.stack([basis.lam_plus, basis.lam_minus])
    A0, B0 = zeros.copy(), zeros.copy()
    A1, B1 = zeros.copy(), zeros.copy()
    degen = basis.degenerate
    ok = ~degen
    # eigen split on the non-Jordan modes
    vp, vm = basis.vec_plus, basis.vec_minus
    det = vp[0] * vm[1] - vm[0] * vp[1]
    det = np.where(degen, 1.0, det)
    hp = (h.c1 * vm[1] - h.c2 * vm[0]) / det
    hm = (h.c2 * vp[0] - h.c1 * vp[1]) / det
    for b, (hc, vec) in enumerate(((hp, vp), (hm, vm))):
        k1v = k1row[0] * vec[0] + k1row[1] * vec[1]
        k2v = k2row * vec[0]
        A0[b] = np.where(ok, hc * (k1v + lam[b] * k2v), 0.0)
        B0[b] = np.where(ok, hc * k2v, 0.0)
    if degen.any():
        g0 = h.as_array()
        g1 = np.einsum("nij,jn->in", basis.nil, g0)
        k1g0 = k1row[0] * g0[0] + k1row[1] * g0[1]
        k2g0 = k2row * g0[0]
        k1g1 = k1row[0] * g1[0] + k1row[1] * g1[1]
        k2g1 = k2row * g1[0]
        A0[0] = np.where(degen, k1g0 + lam[0] * k2g0 + k2g1, A0[0])
        B0[0] = np.where(degen, k2g0, B0[0])
        A1[0] = np.where(degen, k1g1 + lam[0] * k2g1, A1[0])
        B1[0] = np.where(degen, k2g1, B1[0])
    return lam, A0, B0, A1, B1


@dataclass
class Control:
    """A built reproducing control: exact evaluator, cached samples, L2 norm."""

    req: ControlRequest
    basis: ModeBasis = field(repr=False)
    lam: np.ndarray = field(repr=False)
    coefA0: np.ndarray = field(repr=False)
    coefB0: np.ndarray = field(repr=False)
    coefA1: np.ndarray = field(repr=False)
    coefB1: np.ndarray = field(repr=False)
    l2norm: float = 0.0
    grid: np.ndarray | None = None
    samples: np.ndarray | None = None

    def evaluate(self, taus) -> np.ndarray:
        """U-coefficients of the control at times taus; zero outside (s, t)."""
        taus = np.asarray(taus, dtype=float)
        scalar = taus.ndim == 0
        taus = np.atleast_1d(taus)
        s, t = self.req.s, self.req.t
        L = t - s
        tp = np.clip(taus - s, 0.0, L)
        phi, dphi = bump_profile(L, tp)
        out = np.zeros((taus.size, self.basis.N))
        for b in range(2):
            eb = np.exp(np.multiply.outer(tp, self.lam[b]))
            pa = (self.coefA0[b][None, :]
                  + np.multiply.outer(tp, self.coefA1[b]))
            pb = (self.coefB0[b][None, :]
                  + np.multiply.outer(tp, self.coefB1[b]))
            out += (eb * (phi[:, None] * pa + dphi[:, None] * pb)).real
        inside = (taus > s) & (taus < t)
        out *= inside[:, None] / self.basis.sigma(taus)[:, None]
        return out[0] if scalar else out


def _phi_family(w, mmax=8, split=8.0, terms=48):
    """phi_m(w) = int_0^1 u^m e^{wu} du for m = 0..mmax, complex w array.

    Taylor series for |w| <= split, upward recurrence from phi_0 otherwise.
    """
    w = np.asarray(w, dtype=complex)
    out = np.empty((mmax + 1,) + w.shape, dtype=complex)
    small = np.abs(w) <= split
    ws = np.where(small, w, 0.0)
    # Taylor: phi_m = sum_j w^j / (j! (m + j + 1))
    pow_fact = np.ones_like(ws)
    acc = np.zeros((mmax + 1,) + w.shape, dtype=complex)
    for j in range(terms):
        for m in range(mmax + 1):
            acc[m] += pow_fact / (m + j + 1)
        pow_fact = pow_fact * ws / (j + 1)
    wl = np.where(small, 1.0, w)
    ew = np.exp(np.where(small, 0.0, w))
    rec = np.empty_like(acc)
    rec[0] = (ew - 1.0) / wl
    for m in range(1, mmax + 1):
        rec[m] = (ew - m * rec[m - 1]) / wl
    for m in range(mmax + 1):
        out[m] = np.where(small, acc[m], rec[m])
    return out


def _exact_l2norm_sq(lam, A0, B0, A1, B1, L):
    """Exact int_0^L sum_n u_n^2 for the exponential-polynomial control."""
    phi_c, dphi_c = _bump_coeffs(L)
    # per-branch degree-5 polynomial coefficients, shape (2, 6, N)
    P = np.zeros((2, 6) + lam.shape[1:], dtype=complex)
    P[:, :5] += (A0[:, None, :] * phi_c[None, :, None]
                 + B0[:, None, :] * dphi_c[None, :, None])
    P[:, 1:] += (A1[:, None, :] * phi_c[None, :, None]
                 + B1[:, None, :] * dphi_c[None, :, None])
    total = 0.0
    powers = L ** (np.arange(11) + 1)
    for j in range(2):
        for k in range(2):
            w = (lam[j] + lam[k]) * L
            prod = np.zeros((11,) + lam.shape[1:], dtype=complex)
            for m in range(6):
                for n in range(6):
                    prod[m + n] += P[j, m] * P[k, n]
            phis = _phi_family(w, mmax=10)
            total += (prod * phis * powers[:, None]).sum().real
    return max(total, 0.0)


def build_control(basis: ModeBasis, req: ControlRequest,
                  sample_steps: int = 512, with_samples: bool = True) -> Control:
    """Build the reproducing control for the requested direction and window."""
    _check_direction(basis, req)
    lam, A0, B0, A1, B1 = _branch_data(basis, req.h)
    ctrl = Control(req=req, basis=basis, lam=lam,
                   coefA0=A0, coefB0=B0, coefA1=A1, coefB1=B1)
    L = req.t - req.s
    if basis.sigma.is_constant:
        sig = float(basis.sigma(0.0))
        ctrl.l2norm = math.sqrt(_exact_l2norm_sq(lam, A0, B0, A1, B1, L)) / sig
    else:
        panels = 1024
        taus = req.s + L * np.arange(panels + 1) / panels
        vals = ctrl.evaluate(taus)
        wts = _simpson_weights(panels, L / panels)
        ctrl.l2norm = math.sqrt(max(float((wts @ (vals**2).sum(axis=1))), 0.0))
    if with_samples:
        ctrl.grid = req.s + L * np.arange(sample_steps + 1) / sample_steps
        ctrl.samples = ctrl.evaluate(ctrl.grid)
    return ctrl


def _simpson_weights(panels, dx):
    if panels % 2 or panels < 2:
        raise InvalidParams("Simpson rule needs an even panel count >= 2")
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (dx / 3.0)


def noise_cols_grid(basis: ModeBasis, us) -> np.ndarray:
    """Second columns (rows 1,2) of e^{uA} per mode over a grid of times u.

    Returns shape (P, 2, N): the image of a unit second-component impulse.
    """
    us = np.asarray(us, dtype=float)
    if basis.kind == "Wave":
        w = np.sqrt(basis.mu)
        th = np.multiply.outer(us, w)
        out = np.empty((us.size, 2, basis.N))
        out[:, 0, :] = np.sin(th) / w
        out[:, 1, :] = np.cos(th)
        return out
    # second columns of the rank-one outer products (plus the Jordan part)
    cp = np.ascontiguousarray(basis.outer_plus[:, :, 1].T)  # (2, N)
    cm = np.ascontiguousarray(basis.outer_minus[:, :, 1].T)
    ep = np.exp(np.multiply.outer(us, basis.lam_plus))
    em = np.exp(np.multiply.outer(us, basis.lam_minus))
    out = (ep[:, None, :] * cp[None] + em[:, None, :] * cm[None]).real
    if basis.degenerate.any():
        cn = basis.nil[:, :, 1].T
        tep = us[:, None] * np.exp(np.multiply.outer(us, basis.lam_plus.real))
        out = out + tep[:, None, :] * cn[None]
    return out


def reproducing_residual(basis: ModeBasis, ctrl: Control, req: ControlRequest,
                         panels: int) -> float:
    """Relative quadrature residual of the reproducing identity.

    |int_s^t e^{(t-tau)A} J sigma(tau) u(tau) dtau - e^{(t-s)A} h|_H / |h|_H
    by composite Simpson.
    """
    if panels % 2 or panels < 8:
        raise InvalidParams("panels must be even and >= 8")
    hnorm = float(basis.norm_h(req.h))
    if hnorm == 0.0:
        return 0.0
    s, t = req.s, req.t
    dx = (t - s) / panels
    taus = s + dx * np.arange(panels + 1)
    uvals = ctrl.evaluate(taus) * basis.sigma(taus)[:, None]  # (P+1, N)
    cols = noise_cols_grid(basis, t - taus)  # (P+1, 2, N)
    wts = _simpson_weights(panels, dx)
    integral = np.einsum("p,pin,pn->in", wts, cols, uvals)
    e = semigroup_blocks(basis, t - s)
    target = np.einsum("nij,jn->in", e, req.h.as_array())
    return float(basis.norm_h(integral - target)) / hnorm


def control_norm_scaling(basis: ModeBasis, variant: str, a, t_grid):
    """Fit log ||u_t|| against log t over a grid of window lengths.

    Returns (slope, intercept, norms) from an ordinary least-squares line.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size < 2 or t_grid.max() / t_grid.min() < 100.0 * (1 - 1e-9):
        raise InvalidParams("t_grid must span at least two decades")
    if variant == "WaveK":
        h = HVector.from_array(np.asarray(a, dtype=float))
    else:
        h = direction_from_a(basis, variant, a)
    norms = np.empty(t_grid.size)
    for i, t in enumerate(t_grid):
        req = ControlRequest(variant=variant, h=h, s=0.0, t=float(t))
        norms[i] = build_control(basis, req, with_samples=False).l2norm
    slope, intercept = np.polyfit(np.log(t_grid), np.log(norms), 1)
    return float(slope), float(intercept), norms


def export_control_csv(ctrl: Control, path):
    """Write the sampled control as CSV rows (tau, mode, coefficient)."""
    if ctrl.samples is None:
        raise InvalidParams("control was built without samples")
    with open(path, "w") as fh:
        fh.write("tau,mode,coefficient\n")
        for i, tau in enumerate(ctrl.grid):
            for n in range(ctrl.samples.shape[1]):
                fh.write(f"{tau!r},{n + 1},{ctrl.samples[i, n]!r}\n")
