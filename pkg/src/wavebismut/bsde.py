"""Least-squares Monte Carlo solver for the backward equation, the semilinear
gradient formula, the Z-identification check, and the mild Kolmogorov
residual.

The forward paths are always simulated under the reference (driftless)
measure; a nonzero drift enters the backward generator through the
Z sigma^-1 Bbar correction term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controls import ControlRequest, build_control
from .errors import (IllConditionedRegression, InvalidParams,
                     NonLipschitzGenerator, UnsupportedFunctional,
                     WindowMismatch, BudgetExceeded)
from .gradients import GradientReport, TestFunctional, skorokhod_integral
from .paths import DriftSpec, PathBundle, SimConfig, simulate_reference
from .spectral import HVector, ModeBasis, apply_semigroup

_COND_LIMIT = 1e10
GENERATOR_FORMS = ("Zero", "AffineY", "LipschitzNonlinear")


@dataclass(frozen=True)
class GeneratorSpec:
    """Backward-equation driver psi(t, x, y, z).

    Zero: psi = 0.  AffineY: psi = lam * y.  LipschitzNonlinear:
    psi = amplitude * tanh(y + mean(z)), a bounded composition with slope
    at most `amplitude` in y and amplitude/N per z component.
    """

    form: str = "Zero"
    lam: float = 0.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.form not in GENERATOR_FORMS:
            raise InvalidParams(f"unknown generator form {self.form!r}")

    @property
    def lipschitz(self):
        if self.form == "Zero":
            return 0.0
        if self.form == "AffineY":
            return abs(self.lam)
        return 2.0 * abs(self.amplitude)

    @property
    def growth_bound(self):
        """K_psi with |psi(t,x,0,0)| <= K_psi (the built-ins have m = 0)."""
        return abs(self.amplitude) if self.form == "LipschitzNonlinear" else 0.0

    def evaluate(self, t, x, y, z):
        """psi on arrays: x (M,2,N), y (M,), z (M,N) -> (M,)."""
        if self.form == "Zero":
            return np.zeros_like(y)
        if self.form == "AffineY":
            return self.lam * y
        return self.amplitude * np.tanh(y + z.mean(axis=-1))

    def validate_by_sampling(self, rng, n_modes, trials=256):
        """Randomised check of the declared Lipschitz and growth constants."""
        y = rng.standard_normal((trials, 2)) * 3.0
        z = rng.standard_normal((trials, 2, n_modes)) * 3.0
        x = np.zeros((trials, 2, n_modes))
        p1 = self.evaluate(0.0, x, y[:, 0], z[:, 0])
        p2 = self.evaluate(0.0, x, y[:, 1], z[:, 1])
        lhs = np.abs(p1 - p2)
        rhs = self.lipschitz * (np.abs(y[:, 0] - y[:, 1])
                                + np.sqrt(((z[:, 0] - z[:, 1]) ** 2).sum(axis=1)))
        if np.any(lhs > rhs + 1e-12):
            raise NonLipschitzGenerator("sampled Lipschitz violation")
        z0 = self.evaluate(0.0, x, np.zeros(trials), np.zeros((trials, n_modes)))
        if np.any(np.abs(z0) > self.growth_bound + 1e-12):
            raise NonLipschitzGenerator("sampled growth-bound violation")


@dataclass(frozen=True)
class TerminalSpec:
    """Terminal condition phi with its polynomial growth constant."""

    phi: TestFunctional
    K_phi: float = 1.0


@dataclass
class BsdeSolution:
    """Backward-solution grids plus regression diagnostics."""

    basis: ModeBasis = field(repr=False)
    cfg: SimConfig
    drift: DriftSpec
    gen: GeneratorSpec
    term: TerminalSpec
    bundle: PathBundle = field(repr=False)
    Y: np.ndarray = field(repr=False)          # (M, steps+1)
    Z: np.ndarray = field(repr=False)          # (M, steps, N)
    y0: float = 0.0
    z0: np.ndarray | None = None               # (N,)
    cond_max: float = 0.0
    basis_description: str = ""

    @property
    def mean_y(self):
        return self.Y.mean(axis=0)

    @property
    def mean_z(self):
        return self.Z.mean(axis=0)


def _features(basis: ModeBasis, X, phi: TestFunctional):
    """Regression design matrix: affine + quadratic in the leading modes of
    both components, plus the terminal functional's own profile."""
    nmod = min(basis.N, 4)
    cols = [np.ones(X.shape[0])]
    for comp in (0, 1):
        for n in range(nmod):
            cols.append(X[:, comp, n])
    for comp in (0, 1):
        for n in range(nmod):
            cols.append(X[:, comp, n] ** 2)
    desc = f"1 + linear/quadratic in first {nmod} modes of both components + phi"
    F = np.stack(cols, axis=1)
    # centre and normalise the non-constant columns; drop degenerate ones
    mean = F.mean(axis=0)
    std = F.std(axis=0)
    keep = std > 1e-10 * np.maximum(np.abs(mean), 1.0)
    keep[0] = True
    F = F[:, keep]
    mean, std = mean[keep], std[keep]
    F = np.concatenate(
        [F[:, :1], (F[:, 1:] - mean[1:]) / std[1:]], axis=1)
    # the functional's own profile enters residualised against the polynomial
    # part (it is often nearly quadratic), and is dropped when redundant
    p = phi.value(X)
    coef, *_ = np.linalg.lstsq(F, p, rcond=None)
    r = p - F @ coef
    rstd = r.std()
    if rstd > 1e-6 * max(p.std(), 1e-12):
        F = np.concatenate([F, (r / rstd)[:, None]], axis=1)
    return F, desc


def _regress(Fs, targets):
    """Fitted values of targets on pre-scaled features via normal equations.

    Returns (fitted (M, k), condition number).
    """
    G = Fs.T @ Fs
    ev = np.linalg.eigvalsh(G)
    cond = float(ev[-1] / max(ev[0], 1e-300))
    if cond > _COND_LIMIT:
        raise IllConditionedRegression(
            f"normal-equation condition {cond:.3e} exceeds {_COND_LIMIT:.0e}")
    rhs = Fs.T @ targets
    coef = np.linalg.solve(G, rhs)
    return Fs @ coef, cond


def solve_lsmc(basis: ModeBasis, cfg: SimConfig, drift: DriftSpec, x0: HVector,
               gen: GeneratorSpec, term: TerminalSpec,
               bundle: PathBundle | None = None) -> BsdeSolution:
    """Backward regression solution of the FBSDE on reference paths.

    Z_k is the regression of Y_{k+1} dW_k / dt on state features; Y_k adds
    the generator and the drift-correction term Z sigma^-1 Bbar.  At the
    initial time the state is deterministic, so plain means replace the
    regressions, with a centred estimator for Z_0.
    """
    if bundle is None:
        bundle = simulate_reference(basis, cfg, x0, store_paths=True)
    if bundle.X is None:
        raise WindowMismatch("LSMC needs stored trajectories")
    m, steps, n = cfg.M, cfg.steps, basis.N
    dt = cfg.dt
    ts = cfg.times()
    phi = term.phi
    Y = np.empty((m, steps + 1))
    Z = np.zeros((m, steps, n))
    Y[:, steps] = phi.value(bundle.X[:, steps])
    cond_max = 0.0
    desc = ""
    for k in range(steps - 1, 0, -1):
        F, desc = _features(basis, bundle.X[:, k], phi)
        zt = Y[:, k + 1, None] * bundle.dW[:, k] / dt
        zfit, c1 = _regress(F, zt)
        cfit, c2 = _regress(F, Y[:, k + 1])
        cond_max = max(cond_max, c1, c2)
        Z[:, k] = zfit
        corr = np.zeros(m)
        if not drift.is_zero:
            g = drift.bbar(ts[k], bundle.X[:, k, 0]) / basis.sigma(ts[k])
            corr = (zfit * g).sum(axis=1)
        Y[:, k] = cfit + dt * (gen.evaluate(ts[k], bundle.X[:, k], cfit, zfit)
                               + corr)
    # initial slice: deterministic state, plain means
    c0 = Y[:, 1].mean()
    z0 = ((Y[:, 1] - c0)[:, None] * bundle.dW[:, 0]).mean(axis=0) / dt
    Z[:, 0] = z0
    corr0 = 0.0
    if not drift.is_zero:
        g0 = drift.bbar(ts[0], bundle.x0[0]) / float(basis.sigma(ts[0]))
        corr0 = float(z0 @ g0)
    x0arr = bundle.x0[None]
    y0 = c0 + dt * (float(gen.evaluate(ts[0], x0arr, np.array([c0]),
                                       z0[None])[0]) + corr0)
    Y[:, 0] = y0
    return BsdeSolution(basis=basis, cfg=cfg, drift=drift, gen=gen, term=term,
                        bundle=bundle, Y=Y, Z=Z, y0=float(y0), z0=z0,
                        cond_max=cond_max, basis_description=desc)


def _control_family(basis: ModeBasis, cfg: SimConfig, h: HVector, variant: str):
    """Controls reproducing e^{(t_k - s)A} h on (s, t_k) for every grid node."""
    ts = cfg.times()
    fam = {}
    for k in range(1, cfg.steps + 1):
        req = ControlRequest(variant, h, cfg.s, float(ts[k]))
        fam[k] = build_control(basis, req, with_samples=False)
    return fam


def default_variant(basis: ModeBasis) -> str:
    return {"Wave": "WaveK", "Damped": "DampedJ",
            "DampedSmoothed": "SmoothedJ"}[basis.kind]


def semilinear_bismut(basis: ModeBasis, cfg: SimConfig, sol: BsdeSolution,
                      h: HVector, variant: str | None = None) -> GradientReport:
    """Gradient of the semilinear Kolmogorov solution at the initial point.

    Three-term weighted average over the solution's own paths: the generator
    term and the drift-correction term are integrated against the running
    Skorokhod weight of the window-(s, r) control, the terminal term against
    the full-window weight.  The deterministic-flow terminal value is
    subtracted as a control variate.
    """
    if sol.cfg is not cfg and (sol.cfg.steps != cfg.steps
                               or sol.cfg.M != cfg.M
                               or sol.cfg.seed != cfg.seed):
        raise WindowMismatch("solution was computed with a different grid")
    if variant is None:
        variant = default_variant(basis)
    bundle = sol.bundle
    m, steps = cfg.M, cfg.steps
    dt = cfg.dt
    ts = cfg.times()
    fam = _control_family(basis, cfg, h, variant)
    phi = sol.term.phi
    totals = np.zeros(m)
    # running weights S_k = sum_{j<k} <u_{t_k}(t_j), dW_j>, one control per k
    for k in range(1, steps + 1):
        uv = fam[k].evaluate(ts[:k])  # (k, N)
        S = np.einsum("mjn,jn->m", bundle.dW[:, :k], uv)
        # trapezoid weights in r (the integrand vanishes at r = s)
        zk = sol.Z[:, min(k, steps - 1)]
        psi = sol.gen.evaluate(ts[k], bundle.X[:, k], sol.Y[:, k], zk)
        if not sol.drift.is_zero:
            g = (sol.drift.bbar(ts[k], bundle.X[:, k, 0])
                 / basis.sigma(ts[k]))
            psi = psi + (zk * g).sum(axis=1)
        wk = dt if k < steps else 0.5 * dt
        totals += wk * psi * S
        if k == steps:
            centre = phi.value(apply_semigroup(basis, cfg.t_end - cfg.s,
                                               HVector.from_array(bundle.x0)
                                               ).as_array())
            totals += (phi.value(bundle.X[:, steps]) - centre) * S
    est = float(totals.mean())
    se = float(totals.std(ddof=1) / math.sqrt(m))
    return GradientReport(estimate=est, stderr=se, M=m, method="semilinear",
                          bound_value=math.inf, s=cfg.s, t=cfg.t_end)


def z_identification_check(basis: ModeBasis, sol: BsdeSolution,
                           grad_through_j: np.ndarray) -> float:
    """Relative L2 gap between the initial regression Z and sigma(s) times
    the gradient of Y through the noise map, mode by mode."""
    target = float(basis.sigma(sol.cfg.s)) * np.asarray(grad_through_j, float)
    denom = np.linalg.norm(target)
    if denom == 0.0:
        return float(np.linalg.norm(sol.z0))
    return float(np.linalg.norm(sol.z0 - target) / denom)


def y_gradient_scaling(basis: ModeBasis, make_cfg, gen: GeneratorSpec,
                       term: TerminalSpec, a, s_grid, T: float,
                       drift: DriftSpec | None = None,
                       variant: str | None = None):
    """Slope of log |<grad Y_s, Ja>| against log (T - s) near the horizon.

    make_cfg(s) supplies the per-window simulation settings; a is the
    U-direction of the noise-range perturbation.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    gaps = T - s_grid
    if gaps.min() <= 0 or gaps.max() / gaps.min() < 10 ** 1.5 * (1 - 1e-9):
        raise InvalidParams("s_grid must approach T over >= 1.5 decades")
    if drift is None:
        drift = DriftSpec()
    from .controls import direction_from_a
    if variant is None:
        variant = {"Wave": "WaveJ", "Damped": "DampedJ",
                   "DampedSmoothed": "SmoothedJ"}[basis.kind]
    h = direction_from_a(basis, variant, np.asarray(a, dtype=float))
    vals = np.empty(s_grid.size)
    for i, s in enumerate(s_grid):
        cfg = make_cfg(float(s))
        sol = solve_lsmc(basis, cfg, drift, HVector.zero(basis.N), gen, term)
        rep = semilinear_bismut(basis, cfg, sol, h, variant=variant)
        vals[i] = abs(rep.estimate)
    slope, intercept = np.polyfit(np.log(gaps), np.log(np.maximum(vals, 1e-300)), 1)
    return float(slope), float(intercept), vals


def kolmogorov_residual(basis: ModeBasis, cfg: SimConfig, drift: DriftSpec,
                        gen: GeneratorSpec, term: TerminalSpec,
                        points, tolerance: float = math.inf):
    """Mild-formulation residual v - P phi - int P[psi(...)] at probe points.

    Each probe (s, x) reuses one LSMC solve: the transition expectations are
    the path averages of the generator along the solution's own trajectories.
    Returns a list of dicts with the residual and its error budget.
    """
    out = []
    for (s, x) in points:
        c = SimConfig(steps=cfg.steps, M=cfg.M, seed=cfg.seed, s=float(s),
                      t_end=cfg.t_end)
        sol = solve_lsmc(basis, c, drift, x, gen, term)
        phi_T = term.phi.value(sol.bundle.X[:, c.steps])
        ts = c.times()
        inner = np.zeros(c.M)
        for k in range(c.steps):
            psi = gen.evaluate(ts[k], sol.bundle.X[:, k], sol.Y[:, k],
                               sol.Z[:, k])
            if not drift.is_zero:
                g = drift.bbar(ts[k], sol.bundle.X[:, k, 0]) / basis.sigma(ts[k])
                psi = psi + (sol.Z[:, k] * g).sum(axis=1)
            inner += c.dt * psi
        per_path = phi_T + inner
        budget = float(per_path.std(ddof=1) / math.sqrt(c.M))
        if budget > tolerance:
            raise BudgetExceeded(
                f"residual error budget {budget:.3e} exceeds {tolerance:.3e}")
        out.append({"s": float(s), "residual": float(sol.y0 - per_path.mean()),
                    "budget": budget, "y0": sol.y0})
    return out


def export_bsde_csv(sol: BsdeSolution, path):
    """Per-time CSV: t, mean Y, mean Z per mode, regression condition."""
    ts = sol.cfg.times()
    my = sol.mean_y
    mz = sol.mean_z
    with open(path, "w") as fh:
        zcols = ",".join(f"meanZ{n + 1}" for n in range(sol.basis.N))
        fh.write(f"t,meanY,{zcols},cond\n")
        for k in range(sol.cfg.steps + 1):
            z = mz[min(k, sol.cfg.steps - 1)]
            zs = ",".join(repr(v) for v in z)
            fh.write(f"{ts[k]!r},{my[k]!r},{zs},{sol.cond_max!r}\n")
