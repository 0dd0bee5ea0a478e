"""Sampling of mild solutions driven by truncated cylindrical noise.

The scheme is exponential Euler with the per-step stochastic convolution drawn
jointly with the Brownian increment from its exact per-mode Gaussian law:

    X_{k+1} = e^{dt A} X_k + dt e^{dt A} J Bbar(t_k, X_k) + sigma(t_k) conv_k,

so the driftless trajectories carry no time-discretisation bias.  Randomness
comes from counter-based Philox streams keyed by (seed, path-chunk index) with
a fixed chunk width, which makes results independent of scheduling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .controls import _simpson_weights, noise_cols_grid
from .errors import (GirsanovOverflow, InvalidParams, NonDifferentiableDrift,
                     WindowMismatch)
from .spectral import HVector, ModeBasis, semigroup_blocks

_CHUNK = 16384
_COV_PANELS = 64


@dataclass(frozen=True)
class SimConfig:
    """Discretisation and sample-size settings for one simulation window."""

    steps: int
    M: int
    seed: int
    s: float = 0.0
    t_end: float = 1.0

    def __post_init__(self):
        if not (isinstance(self.steps, (int, np.integer)) and self.steps >= 1):
            raise InvalidParams("steps must be a positive integer")
        if not (isinstance(self.M, (int, np.integer)) and self.M >= 1):
            raise InvalidParams("M must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise InvalidParams("seed must fit in 64 bits")
        if not 0.0 <= self.s < self.t_end:
            raise InvalidParams("need 0 <= s < t_end")

    @property
    def dt(self):
        return (self.t_end - self.s) / self.steps

    def times(self):
        return self.s + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class DriftSpec:
    """Bounded Lipschitz drift acting through the noise map J.

    Zero: Bbar = 0.  Saturating: Bbar(t, x)_n = amplitude * tanh(x1_n),
    a componentwise saturation of the first state component, with
    |Bbar|_U <= amplitude * sqrt(N) and Lipschitz constant amplitude.
    """

    form: str = "Zero"
    amplitude: float = 0.0

    def __post_init__(self):
        if self.form not in ("Zero", "Saturating"):
            raise InvalidParams(f"unknown drift form {self.form!r}")
        if self.form == "Saturating" and not self.amplitude > 0:
            raise InvalidParams("Saturating drift needs a positive amplitude")

    @property
    def is_zero(self):
        return self.form == "Zero" or self.amplitude == 0.0

    @property
    def lipschitz(self):
        return 0.0 if self.is_zero else self.amplitude

    def bound(self, n_modes):
        return 0.0 if self.is_zero else self.amplitude * np.sqrt(n_modes)

    def bbar(self, t, x1):
        """Drift U-coefficients from the first-component coefficients x1."""
        if self.is_zero:
            return np.zeros_like(x1)
        return self.amplitude * np.tanh(x1)

    def dbbar(self, t, x1):
        """Diagonal of the drift Jacobian in the first component."""
        if self.is_zero:
            return np.zeros_like(x1)
        return self.amplitude / np.cosh(x1) ** 2


@dataclass
class PathBundle:
    """Simulated trajectories plus the Gaussian increments that drove them."""

    basis: ModeBasis = field(repr=False)
    cfg: SimConfig
    measure: str
    x0: np.ndarray = field(repr=False)
    dW: np.ndarray = field(repr=False)          # (M, steps, N)
    x_final: np.ndarray = field(repr=False)     # (M, 2, N)
    X: np.ndarray | None = field(default=None, repr=False)  # (M, steps+1, 2, N)


def _conv_covariance(basis: ModeBasis, dt: float):
    """Per-mode Cholesky factors of the joint law of (dW, conv), shape (N,3,3).

    conv is the unit-sigma stochastic convolution over one step; its 2x2
    covariance and the 2-vector cross-covariance with dW are Simpson
    integrals of the impulse-response column of the semigroup.
    """
    us = dt * np.arange(_COV_PANELS + 1) / _COV_PANELS
    cols = noise_cols_grid(basis, us)  # (P+1, 2, N)
    wts = _simpson_weights(_COV_PANELS, dt / _COV_PANELS)
    cvec = np.einsum("p,pin->in", wts, cols)              # (2, N)
    cmat = np.einsum("p,pin,pjn->ijn", wts, cols, cols)   # (2, 2, N)
    n = basis.N
    sig = np.empty((n, 3, 3))
    sig[:, 0, 0] = dt
    sig[:, 0, 1:] = cvec.T
    sig[:, 1:, 0] = cvec.T
    sig[:, 1:, 1:] = cmat.transpose(2, 0, 1)
    # tiny diagonal lift guards modes whose convolution is nearly deterministic
    sig += 1e-300 * np.eye(3)
    try:
        chol = np.linalg.cholesky(sig)
    except np.linalg.LinAlgError:
        lift = 1e-14 * np.maximum(sig[:, None, 1, 1], sig[:, None, 2, 2])
        sig[:, 1:, 1:] += lift[..., None] * np.eye(2)
        chol = np.linalg.cholesky(sig)
    return chol


def _chunk_rng(seed, chunk_index):
    key = np.array([seed, chunk_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _simulate(basis: ModeBasis, cfg: SimConfig, drift: DriftSpec, x0: HVector,
              store_paths: bool) -> PathBundle:
    dt = cfg.dt
    n, m, steps = basis.N, cfg.M, cfg.steps
    ts = cfg.times()
    E = semigroup_blocks(basis, dt)              # (N, 2, 2)
    ecol = E[:, :, 1].T                          # (2, N): one-step image of J
    chol = _conv_covariance(basis, dt)
    sig_left = basis.sigma(ts[:-1])              # sigma frozen per step

    dW = np.empty((m, steps, n))
    x_final = np.empty((m, 2, n))
    X = np.empty((m, steps + 1, 2, n)) if store_paths else None
    x0a = x0.as_array()

    for c0 in range(0, m, _CHUNK):
        c1 = min(c0 + _CHUNK, m)
        rng = _chunk_rng(cfg.seed, c0 // _CHUNK)
        x = np.broadcast_to(x0a, (c1 - c0, 2, n)).copy()
        if store_paths:
            X[c0:c1, 0] = x
        for k in range(steps):
            z = rng.standard_normal((c1 - c0, 3, n))
            y = np.einsum("nij,cjn->cin", chol, z)
            dW[c0:c1, k] = y[:, 0]
            conv = y[:, 1:]
            xn = np.einsum("nij,cjn->cin", E, x) + sig_left[k] * conv
            if not drift.is_zero:
                g = drift.bbar(ts[k], x[:, 0])
                xn += dt * g[:, None, :] * ecol[None]
            x = xn
            if store_paths:
                X[c0:c1, k + 1] = x
        x_final[c0:c1] = x

    measure = "Reference" if drift.is_zero else "Drifted"
    return PathBundle(basis=basis, cfg=cfg, measure=measure, x0=x0a,
                      dW=dW, x_final=x_final, X=X)


def simulate_reference(basis: ModeBasis, cfg: SimConfig, x0: HVector,
                       store_paths: bool = True) -> PathBundle:
    """Sample driftless mild solutions (reference measure)."""
    return _simulate(basis, cfg, DriftSpec(), x0, store_paths)


def simulate_drifted(basis: ModeBasis, cfg: SimConfig, drift: DriftSpec,
                     x0: HVector, store_paths: bool = True) -> PathBundle:
    """Sample mild solutions with the left-point drift increment."""
    return _simulate(basis, cfg, drift, x0, store_paths)


def girsanov_weight(bundle: PathBundle, drift: DriftSpec) -> np.ndarray:
    """Per-path density mapping reference expectations to drifted-law ones.

    w = exp(sum <sigma^-1 Bbar(t_k, X_k), dW_k> - dt/2 sum |sigma^-1 Bbar|^2)
    on a Reference bundle with stored trajectories.
    """
    if bundle.measure != "Reference":
        raise WindowMismatch("Girsanov weights need a Reference bundle")
    if bundle.X is None:
        raise WindowMismatch("Girsanov weights need stored trajectories")
    if drift.is_zero:
        return np.ones(bundle.cfg.M)
    cfg = bundle.cfg
    ts = cfg.times()
    logw = np.zeros(cfg.M)
    for k in range(cfg.steps):
        g = drift.bbar(ts[k], bundle.X[:, k, 0]) / bundle.basis.sigma(ts[k])
        logw += (g * bundle.dW[:, k]).sum(axis=1)
        logw -= 0.5 * cfg.dt * (g**2).sum(axis=1)
    if np.any(np.abs(logw) > 700.0):
        raise GirsanovOverflow(
            f"log-weight magnitude {np.abs(logw).max():.1f} exceeds 700")
    return np.exp(logw)


def first_variation(basis: ModeBasis, bundle: PathBundle, drift: DriftSpec,
                    h: HVector) -> np.ndarray:
    """Directional state sensitivity along each path, shape (M, steps+1, 2, N).

    Solves Xi_{k+1} = e^{dtA} Xi_k + dt e^{dtA} J dBbar(t_k, X_k) Xi_k with
    Xi_0 = h; for zero drift this is the deterministic flow e^{t A} h.
    """
    if drift.form == "Saturating" or drift.is_zero:
        pass
    else:
        raise NonDifferentiableDrift(f"no Jacobian for drift {drift.form!r}")
    cfg = bundle.cfg
    dt = cfg.dt
    ts = cfg.times()
    E = semigroup_blocks(basis, dt)
    ecol = E[:, :, 1].T
    m, n = cfg.M, basis.N
    out = np.empty((m, cfg.steps + 1, 2, n))
    out[:, 0] = h.as_array()
    if not drift.is_zero and bundle.X is None:
        raise WindowMismatch("first variation under drift needs stored paths")
    for k in range(cfg.steps):
        xi = out[:, k]
        nxt = np.einsum("nij,cjn->cin", E, xi)
        if not drift.is_zero:
            jac = drift.dbbar(ts[k], bundle.X[:, k, 0])
            nxt += dt * (jac * xi[:, 0])[:, None, :] * ecol[None]
        out[:, k + 1] = nxt
    return out


def dump_trajectories(bundle: PathBundle, path):
    """Binary trajectory dump: header (N, steps, M, seed) as little-endian
    int64/uint64, then path-major little-endian float64 states."""
    if bundle.X is None:
        raise WindowMismatch("binary dump needs stored trajectories")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qqqQ", bundle.basis.N, bundle.cfg.steps,
                             bundle.cfg.M, bundle.cfg.seed))
        fh.write(np.ascontiguousarray(bundle.X, dtype="<f8").tobytes())


def load_trajectories(path):
    """Read a binary trajectory dump; returns (meta dict, (M,steps+1,2,N))."""
    with open(path, "rb") as fh:
        n, steps, m, seed = struct.unpack("<qqqQ", fh.read(32))
        data = np.frombuffer(fh.read(), dtype="<f8")
    X = data.reshape(m, steps + 1, 2, n)
    return {"N": n, "steps": steps, "M": m, "seed": seed}, X


def export_moment_csv(bundle: PathBundle, path):
    """CSV of componentwise means and standard deviations at the endpoint."""
    mean = bundle.x_final.mean(axis=0)
    std = bundle.x_final.std(axis=0, ddof=1)
    with open(path, "w") as fh:
        fh.write("component,mode,mean,std\n")
        for i in range(2):
            for nn in range(bundle.basis.N):
                fh.write(f"{i + 1},{nn + 1},{mean[i, nn]!r},{std[i, nn]!r}\n")
