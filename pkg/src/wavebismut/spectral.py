"""Finite spectral truncation of the wave / damped-wave generators.

State space is the product H of two scalar-mode families.  A state is a pair
of length-N coefficient arrays (c1, c2) written in the eigenbasis {e_n} of the
elliptic operator, with mode-dependent norm weights encoding which concrete
product space H is meant:

  Wave            H = U x V',        weights (1, mu_n^-1/2)
  Damped          H = U x U,         weights (1, 1)
  DampedSmoothed  H = V_eps x V_eps, weights (mu_n^-eps, mu_n^-eps)

Per mode the generator is a 2x2 block:

  Wave    [[0, 1], [-mu, 0]]           (position / velocity coordinates)
  Damped  [[0, w], [-w, -rho mu^a]]    with w = mu^1/2 (symmetrised coordinates)

Semigroups are evaluated in closed form: a rotation for the wave group, a
complex eigen-decomposition of the 2x2 block for the damped kinds, with a
Jordan branch e^{lam t}(I + t Nil) for modes whose two eigenvalues collide.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateMode, InvalidParams, InvalidTime, SingularProjection

KINDS = ("Wave", "Damped", "DampedSmoothed")

_DEGENERACY_RTOL = 1e-10
_EIG_RTOL = 1e-12
_SIGMA_GRID = 512


@dataclass(frozen=True)
class SigmaSpec:
    """Serialisable description of the scalar noise intensity sigma(t).

    form "const": sigma(t) = value.
    form "cosine": sigma(t) = base + amp*cos(freq*t), requires base > |amp|.
    """

    form: str = "const"
    value: float = 1.0
    base: float = 1.0
    amp: float = 0.0
    freq: float = 1.0

    def __call__(self, t):
        if self.form == "const":
            return self.value * np.ones_like(np.asarray(t, dtype=float))
        return self.base + self.amp * np.cos(self.freq * np.asarray(t, dtype=float))

    @property
    def is_constant(self):
        return self.form == "const" or self.amp == 0.0

    def bounds(self):
        if self.form == "const":
            return self.value, self.value
        return self.base - abs(self.amp), self.base + abs(self.amp)

    def to_dict(self):
        if self.form == "const":
            return {"form": "const", "value": self.value}
        return {"form": "cosine", "base": self.base, "amp": self.amp, "freq": self.freq}

    @staticmethod
    def from_dict(d):
        d = dict(d)
        form = d.pop("form", "const")
        if form == "const":
            value = d.pop("value", 1.0)
            if d:
                raise InvalidParams(f"unknown sigma keys: {sorted(d)}")
            return SigmaSpec(form="const", value=float(value))
        if form == "cosine":
            base = float(d.pop("base", 1.0))
            amp = float(d.pop("amp", 0.0))
            freq = float(d.pop("freq", 1.0))
            if d:
                raise InvalidParams(f"unknown sigma keys: {sorted(d)}")
            return SigmaSpec(form="cosine", base=base, amp=amp, freq=freq)
        raise InvalidParams(f"unknown sigma form {form!r}")


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the truncated model; validated on construction."""

    kind: str
    N: int
    delta: float
    T: float
    sigma: SigmaSpec = field(default_factory=SigmaSpec)
    rho: float | None = None
    alpha: float | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParams(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise InvalidParams("N must be a positive integer")
        if not self.delta > 0:
            raise InvalidParams("delta must be > 0")
        if not self.T > 0:
            raise InvalidParams("T must be > 0")
        if self.kind == "Wave":
            if self.rho is not None or self.alpha is not None or self.eps is not None:
                raise InvalidParams("rho/alpha/eps are not wave parameters")
        else:
            if self.rho is None or not self.rho > 0:
                raise InvalidParams("damped kinds need rho > 0")
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise InvalidParams("damped kinds need alpha in (0,1)")
            if self.kind == "DampedSmoothed":
                if self.eps is None or not 0.0 <= self.eps < 0.5:
                    raise InvalidParams("DampedSmoothed needs eps in [0, 1/2)")
            elif self.eps is not None:
                raise InvalidParams("eps is only a DampedSmoothed parameter")
        # sigma bounds, sampled on a dense grid
        lo, hi = self.sigma.bounds()
        if not lo > 0:
            raise InvalidParams("sigma must be bounded below by a positive constant")
        ts = np.linspace(0.0, self.T, _SIGMA_GRID)
        vals = self.sigma(ts)
        if np.any(vals < lo - 1e-12) or np.any(vals > hi + 1e-12):
            raise InvalidParams("sigma samples violate the declared bounds")

    @property
    def sigma_min(self):
        return self.sigma.bounds()[0]

    @property
    def sigma_max(self):
        return self.sigma.bounds()[1]

    @property
    def smoothing_eps(self):
        return self.eps if self.kind == "DampedSmoothed" else 0.0


@dataclass(frozen=True)
class HVector:
    """A state in H: two length-N coefficient arrays in the e_n basis."""

    c1: np.ndarray
    c2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c1", np.asarray(self.c1, dtype=float))
        object.__setattr__(self, "c2", np.asarray(self.c2, dtype=float))
        if self.c1.shape != self.c2.shape or self.c1.ndim != 1:
            raise InvalidParams("c1 and c2 must be equal-length 1-d arrays")

    @staticmethod
    def zero(n):
        return HVector(np.zeros(n), np.zeros(n))

    @staticmethod
    def from_array(a):
        a = np.asarray(a, dtype=float)
        return HVector(a[0], a[1])

    def as_array(self):
        return np.stack([self.c1, self.c2])

    def __add__(self, other):
        return HVector(self.c1 + other.c1, self.c2 + other.c2)

    def __sub__(self, other):
        return HVector(self.c1 - other.c1, self.c2 - other.c2)

    def __mul__(self, a):
        return HVector(a * self.c1, a * self.c2)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ModeBasis:
    """Eigenstructure and norm weights of the truncated generator.

    For damped kinds `lam_plus/lam_minus` hold the per-mode eigenvalues
    (equal on Jordan modes) and `vec_plus/vec_minus` the unit-H-norm
    eigenvectors as complex (2, N) arrays.  The semigroup is evaluated as

        e^{tA_n} = Re(O+_n e^{lam+ t} + O-_n e^{lam- t}) + t e^{lam+ t} Nil_n

    with rank-one outer products O+- and a nilpotent Nil_n that is zero off
    the Jordan modes.  The wave kind carries no eigen data and uses the
    rotation formula.
    """

    params: ModelParams
    mu: np.ndarray
    u_weight: np.ndarray
    v_weight: np.ndarray
    lam_plus: np.ndarray | None = None
    lam_minus: np.ndarray | None = None
    vec_plus: np.ndarray | None = None
    vec_minus: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    outer_plus: np.ndarray | None = field(default=None, repr=False)
    outer_minus: np.ndarray | None = field(default=None, repr=False)
    nil: np.ndarray | None = field(default=None, repr=False)

    @property
    def kind(self):
        return self.params.kind

    @property
    def N(self):
        return self.params.N

    @property
    def sigma(self):
        return self.params.sigma

    def norm_h(self, h):
        """Weighted H-norm of an HVector or a (..., 2, N) coefficient array."""
        a = h.as_array() if isinstance(h, HVector) else np.asarray(h)
        q = (self.u_weight * a[..., 0, :]) ** 2 + (self.v_weight * a[..., 1, :]) ** 2
        return np.sqrt(q.sum(axis=-1))

    def norm_k(self, h):
        """K = V x U norm (wave only): weights (mu^1/2, 1)."""
        if self.kind != "Wave":
            raise InvalidParams("the K-norm is a wave-kind notion")
        a = h.as_array() if isinstance(h, HVector) else np.asarray(h)
        q = self.mu * a[..., 0, :] ** 2 + a[..., 1, :] ** 2
        return np.sqrt(q.sum(axis=-1))

    def generator_blocks(self):
        """Per-mode 2x2 generator blocks, shape (N, 2, 2)."""
        n = self.N
        g = np.zeros((n, 2, 2))
        if self.kind == "Wave":
            g[:, 0, 1] = 1.0
            g[:, 1, 0] = -self.mu
        else:
            w = np.sqrt(self.mu)
            g[:, 0, 1] = w
            g[:, 1, 0] = -w
            g[:, 1, 1] = -self.params.rho * self.mu ** self.params.alpha
        return g


def _damped_eigen(mu, rho, alpha):
    """Roots of lam^2 + rho*mu^a*lam + mu = 0.

    Uses the product relation lam+*lam- = mu for the small real root so the
    overdamped branch stays accurate.
    """
    b = rho * mu**alpha
    disc = b * b - 4.0 * mu
    sq = np.sqrt(disc.astype(complex))
    lam_p = np.where(disc >= 0, -2.0 * mu / (b + np.sqrt(np.maximum(disc, 0.0))),
                     (-b + sq) / 2.0)
    lam_m = np.where(disc >= 0, -(b + np.sqrt(np.maximum(disc, 0.0))) / 2.0,
                     (-b - sq) / 2.0)
    return lam_p.astype(complex), lam_m.astype(complex)


def build_basis(params: ModelParams, allow_degenerate: bool = False) -> ModeBasis:
    """Construct the truncated mode basis with verified eigen data.

    Modes on the double-eigenvalue locus 4 mu^(1-2a) = rho^2 raise
    DegenerateMode unless allow_degenerate is set, in which case they are
    represented by their Jordan form and excluded from the eigen split.
    """
    n = np.arange(1, params.N + 1, dtype=float)
    mu = n**params.delta
    if params.kind == "Wave":
        uw = np.ones_like(mu)
        vw = mu ** (-0.5)
        return ModeBasis(params=params, mu=mu, u_weight=uw, v_weight=vw)

    rho, alpha = params.rho, params.alpha
    gap = np.abs(4.0 * mu ** (1.0 - 2.0 * alpha) - rho**2)
    degen = gap <= _DEGENERACY_RTOL * rho**2
    if degen.any() and not allow_degenerate:
        raise DegenerateMode(int(np.nonzero(degen)[0][0]) + 1)

    eps = params.smoothing_eps
    if params.kind == "Damped":
        uw = np.ones_like(mu)
        vw = np.ones_like(mu)
    else:
        uw = mu ** (-eps)
        vw = mu ** (-eps)

    lam_p, lam_m = _damped_eigen(mu, rho, alpha)
    w = np.sqrt(mu)
    dbl = (-0.5 * rho * mu**alpha).astype(complex)
    lam_p = np.where(degen, dbl, lam_p)
    lam_m = np.where(degen, dbl, lam_m)

    raw_p = np.stack([w.astype(complex), lam_p])  # (2, N)
    raw_m = np.stack([w.astype(complex), lam_m])

    def normalise(v):
        nrm = np.sqrt((uw * np.abs(v[0])) ** 2 + (vw * np.abs(v[1])) ** 2)
        return v / nrm

    vec_p = normalise(raw_p)
    vec_m = normalise(raw_m)

    # eigen residual check against the 2x2 block (Jordan modes excluded)
    blocks = np.zeros((params.N, 2, 2))
    blocks[:, 0, 1] = w
    blocks[:, 1, 0] = -w
    blocks[:, 1, 1] = -rho * mu**alpha
    ok = ~degen
    for lam, vec in ((lam_p, vec_p), (lam_m, vec_m)):
        res = np.einsum("nij,jn->in", blocks, vec) - lam * vec
        rnorm = np.sqrt(np.abs(res[0]) ** 2 + np.abs(res[1]) ** 2)
        if np.any(rnorm[ok] > _EIG_RTOL * np.abs(lam[ok])):
            k = int(np.argmax(np.where(ok, rnorm / np.abs(lam), 0.0)))
            raise InvalidParams(f"eigen residual too large at mode {k + 1}")
    if np.any(lam_p.real >= 0) or np.any(lam_m.real >= 0):
        raise InvalidParams("damped eigenvalues must have negative real part")

    # V diag(e^{lam t}) V^{-1} decomposed into two rank-one outer products;
    # Jordan modes carry identity + nilpotent instead
    det = vec_p[0] * vec_m[1] - vec_m[0] * vec_p[1]
    det_safe = np.where(degen, 1.0, det)
    if np.any(np.abs(det_safe) < 1e-300):
        raise SingularProjection("eigenvector matrix is singular")
    # rows of V^{-1}: w_p = ( vm2, -vm1)/det ; w_m = (-vp2, vp1)/det
    wp = np.stack([vec_m[1], -vec_m[0]]) / det_safe
    wm = np.stack([-vec_p[1], vec_p[0]]) / det_safe
    outer_p = np.einsum("in,jn->nij", vec_p, wp)
    outer_m = np.einsum("in,jn->nij", vec_m, wm)
    eye = np.broadcast_to(np.eye(2), (params.N, 2, 2))
    outer_p = np.where(degen[:, None, None], eye.astype(complex), outer_p)
    outer_m = np.where(degen[:, None, None], 0.0 + 0.0j, outer_m)
    nil = np.where(degen[:, None, None],
                   blocks - dbl.real[:, None, None] * eye, 0.0)

    return ModeBasis(
        params=params, mu=mu, u_weight=uw, v_weight=vw,
        lam_plus=lam_p, lam_minus=lam_m, vec_plus=vec_p, vec_minus=vec_m,
        degenerate=degen, outer_plus=outer_p, outer_minus=outer_m, nil=nil,
    )


def semigroup_blocks(basis: ModeBasis, t: float) -> np.ndarray:
    """Per-mode 2x2 matrices of e^{tA}, shape (N, 2, 2)."""
    mu = basis.mu
    if basis.kind == "Wave":
        w = np.sqrt(mu)
        c, s = np.cos(w * t), np.sin(w * t)
        e = np.empty((basis.N, 2, 2))
        e[:, 0, 0] = c
        e[:, 0, 1] = s / w
        e[:, 1, 0] = -w * s
        e[:, 1, 1] = c
        return e
    ep = np.exp(basis.lam_plus * t)[:, None, None]
    em = np.exp(basis.lam_minus * t)[:, None, None]
    out = (basis.outer_plus * ep + basis.outer_minus * em).real
    if basis.degenerate.any():
        out = out + t * np.exp(basis.lam_plus.real * t)[:, None, None] * basis.nil
    return out


def apply_semigroup(basis: ModeBasis, t: float, h):
    """Apply e^{tA}; accepts an HVector or a (..., 2, N) array."""
    if t < 0:
        raise InvalidTime("semigroup time must be >= 0")
    e = semigroup_blocks(basis, t)
    if isinstance(h, HVector):
        a = np.einsum("nij,jn->in", e, h.as_array())
        return HVector(a[0], a[1])
    return np.einsum("nij,...jn->...in", e, np.asarray(h))


def apply_generator(basis: ModeBasis, h):
    """Apply the truncated generator A; accepts HVector or (..., 2, N)."""
    g = basis.generator_blocks()
    if isinstance(h, HVector):
        a = np.einsum("nij,jn->in", g, h.as_array())
        return HVector(a[0], a[1])
    return np.einsum("nij,...jn->...in", g, np.asarray(h))


def propagate_grid(basis: ModeBasis, taus, h) -> np.ndarray:
    """Evaluate e^{tau A} h over a time grid; returns (P, 2, N)."""
    taus = np.asarray(taus, dtype=float)
    a = h.as_array() if isinstance(h, HVector) else np.asarray(h)
    if basis.kind == "Wave":
        w = np.sqrt(basis.mu)
        th = np.multiply.outer(taus, w)  # (P, N)
        c, s = np.cos(th), np.sin(th)
        out = np.empty((taus.size, 2, basis.N))
        out[:, 0, :] = c * a[0] + (s / w) * a[1]
        out[:, 1, :] = -(w * s) * a[0] + c * a[1]
        return out
    gp = np.einsum("nij,jn->in", basis.outer_plus, a.astype(complex))
    gm = np.einsum("nij,jn->in", basis.outer_minus, a.astype(complex))
    ep = np.exp(np.multiply.outer(taus, basis.lam_plus))  # (P, N)
    em = np.exp(np.multiply.outer(taus, basis.lam_minus))
    out = (ep[:, None, :] * gp[None] + em[:, None, :] * gm[None]).real
    if basis.degenerate.any():
        gn = np.einsum("nij,jn->in", basis.nil, a)
        tep = taus[:, None] * np.exp(np.multiply.outer(taus, basis.lam_plus.real))
        out = out + tep[:, None, :] * gn[None]
    return out


def mode_project(basis: ModeBasis, h: HVector):
    """Coefficients (h+_n, h-_n) of h in the eigenvector split (damped kinds).

    Solves the per-mode 2x2 system [vec+ | vec-] (h+, h-) = h_n.
    """
    if basis.kind == "Wave":
        raise InvalidParams("mode_project needs a damped-kind basis")
    if basis.degenerate.any():
        raise SingularProjection("eigen split undefined on Jordan modes")
    vp, vm = basis.vec_plus, basis.vec_minus
    det = vp[0] * vm[1] - vm[0] * vp[1]
    # condition estimate of the per-mode eigenvector matrix (Frobenius based)
    fro2 = (np.abs(vp) ** 2).sum(axis=0) + (np.abs(vm) ** 2).sum(axis=0)
    cond = fro2 / np.maximum(np.abs(det), 1e-300)
    if np.any(cond > 1e12):
        raise SingularProjection(
            f"eigenvector condition number {cond.max():.3e} exceeds 1e12")
    hp = (h.c1 * vm[1] - h.c2 * vm[0]) / det
    hm = (h.c2 * vp[0] - h.c1 * vp[1]) / det
    return hp, hm


def hs_norm_squared(basis: ModeBasis, t: float) -> float:
    """Squared Hilbert-Schmidt norm of e^{tA} J over the noise basis (sigma=1).

    Sums |e^{tA} J e_n|_H^2 over the orthonormal U-basis; per mode J e_n has
    coefficient column (0, 1).
    """
    if not t > 0:
        raise InvalidParams("hs_norm_squared needs t > 0")
    e = semigroup_blocks(basis, t)
    col1, col2 = e[:, 0, 1], e[:, 1, 1]
    return float(((basis.u_weight * col1) ** 2 + (basis.v_weight * col2) ** 2).sum())


def check_trace_condition(params: ModelParams) -> bool:
    """Trace-class condition making the stochastic convolution well defined."""
    if params.kind == "Wave":
        return params.delta > 1.0
    if params.kind == "Damped":
        return params.delta > 1.0 / params.alpha
    return params.delta > 1.0 / (2.0 * params.eps + params.alpha)
