"""Monte Carlo semigroup-gradient estimators with Malliavin weights.

The weighted estimator pairs the test functional with the Wiener integral of
a reproducing control, so no derivative of the functional is ever taken; a
pathwise estimator (for smooth functionals) and a common-random-number
central difference serve as cross-checks.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .controls import Control
from .errors import InvalidParams, UnsupportedFunctional, WindowMismatch
from .paths import PathBundle, SimConfig, simulate_reference
from .spectral import HVector, ModeBasis, apply_semigroup

FORMS = ("Linear", "Quadratic", "BoundedSmooth", "BoundedNonsmooth", "PolyGrowth")


@dataclass(frozen=True)
class TestFunctional:
    """Scalar cylinder functional f(x) = g(<c, x>) with c an H-vector.

    Linear: g(d)=d.  Quadratic: d^2.  BoundedSmooth: cos d.
    BoundedNonsmooth: clamp(d, -1, 1).  PolyGrowth: d^K.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    form: str
    c: HVector
    K: int = 1

    def __post_init__(self):
        if self.form not in FORMS:
            raise InvalidParams(f"unknown functional form {self.form!r}")
        if self.form == "PolyGrowth" and not (isinstance(self.K, (int, np.integer))
                                              and self.K >= 1):
            raise InvalidParams("PolyGrowth needs integer K >= 1")

    @property
    def bounded(self):
        return self.form in ("BoundedSmooth", "BoundedNonsmooth")

    @property
    def differentiable(self):
        return self.form != "BoundedNonsmooth"

    @property
    def growth(self):
        """Polynomial growth exponent."""
        return {"Linear": 1, "Quadratic": 2, "BoundedSmooth": 0,
                "BoundedNonsmooth": 0, "PolyGrowth": self.K}[self.form]

    def project(self, X):
        """<c, x> for states of shape (..., 2, N) (plain coefficient dot)."""
        X = np.asarray(X)
        return X[..., 0, :] @ self.c.c1 + X[..., 1, :] @ self.c.c2

    def value(self, X):
        d = self.project(X)
        if self.form == "Linear":
            return d
        if self.form == "Quadratic":
            return d**2
        if self.form == "BoundedSmooth":
            return np.cos(d)
        if self.form == "BoundedNonsmooth":
            return np.clip(d, -1.0, 1.0)
        return d**self.K

    def dvalue(self, X):
        """Derivative g'(<c, x>); the gradient of f is g' * c."""
        if not self.differentiable:
            raise UnsupportedFunctional("clamped functional has no gradient")
        d = self.project(X)
        if self.form == "Linear":
            return np.ones_like(d)
        if self.form == "Quadratic":
            return 2.0 * d
        if self.form == "BoundedSmooth":
            return -np.sin(d)
        return self.K * d ** (self.K - 1)

    @property
    def sup_norm(self):
        if not self.bounded:
            raise UnsupportedFunctional(f"{self.form} is unbounded")
        return 1.0

    def ck_norm(self, basis: ModeBasis):
        """Upper bound for sup |f| / (1 + |x|^2)^(K/2) via the dual norm of c."""
        dual = np.sqrt(((self.c.c1 / basis.u_weight) ** 2
                        + (self.c.c2 / basis.v_weight) ** 2).sum())
        if self.form == "Linear":
            return dual
        if self.form == "Quadratic":
            return dual**2
        if self.bounded:
            return 1.0
        return dual**self.K


@dataclass(frozen=True)
class GradientReport:
    """One gradient estimate with its sampling error and a priori bound."""

    estimate: float
    stderr: float
    M: int
    method: str
    bound_value: float
    s: float = 0.0
    t: float = 1.0


def append_report_csv(report: GradientReport, path):
    """Append a gradient report row; writes the header on first use."""
    new = not os.path.exists(path)
    with open(path, "a") as fh:
        if new:
            fh.write("method,t,s,M,estimate,stderr,bound\n")
        fh.write(f"{report.method},{report.t!r},{report.s!r},{report.M},"
                 f"{report.estimate!r},{report.stderr!r},{report.bound_value!r}\n")


def skorokhod_integral(ctrl: Control, bundle: PathBundle) -> np.ndarray:
    """Per-path Wiener integral sum_k <u(t_k), dW_k> of a deterministic control."""
    cfg = bundle.cfg
    tol = 1e-9 * (cfg.t_end - cfg.s)
    if ctrl.req.s < cfg.s - tol or ctrl.req.t > cfg.t_end + tol:
        raise WindowMismatch("control window not covered by the path bundle")
    uvals = ctrl.evaluate(cfg.times()[:-1])  # (steps, N)
    return np.einsum("mkn,kn->m", bundle.dW, uvals)


def _gradient_bound(basis, f: TestFunctional, x: HVector, ctrl: Control):
    if f.bounded:
        return f.sup_norm * ctrl.l2norm
    xn = float(basis.norm_h(x))
    return f.ck_norm(basis) * (1.0 + xn**2) ** (f.growth / 2.0) * ctrl.l2norm


def estimate_gradient_bismut(basis: ModeBasis, cfg: SimConfig, x: HVector,
                             f: TestFunctional, ctrl: Control, h: HVector,
                             bundle: PathBundle | None = None) -> GradientReport:
    """Weighted estimator mean[(f(X_t) - f(e^{(t-s)A}x)) * delta(u)].

    Subtracting the deterministic-flow value is free of bias because the
    weight is centred, and it removes the dominant variance term at small
    windows.
    """
    if bundle is None:
        bundle = simulate_reference(basis, cfg, x, store_paths=False)
    elif bundle.measure != "Reference":
        raise WindowMismatch("weighted estimator needs a Reference bundle")
    delta = skorokhod_integral(ctrl, bundle)
    t, s = ctrl.req.t, ctrl.req.s
    centre = f.value(apply_semigroup(basis, t - s, x).as_array())
    vals = (f.value(bundle.x_final) - centre) * delta
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(cfg.M))
    return GradientReport(estimate=est, stderr=se, M=cfg.M, method="bismut",
                          bound_value=_gradient_bound(basis, f, x, ctrl),
                          s=s, t=t)


def estimate_gradient_pathwise(basis: ModeBasis, cfg: SimConfig, x: HVector,
                               f: TestFunctional, h: HVector,
                               bundle: PathBundle | None = None) -> GradientReport:
    """Pathwise estimator mean[grad f(X_t) . e^{(t-s)A} h] (smooth f, no drift)."""
    if not f.differentiable:
        raise UnsupportedFunctional("pathwise estimator needs a smooth functional")
    if bundle is None:
        bundle = simulate_reference(basis, cfg, x, store_paths=False)
    eh = apply_semigroup(basis, cfg.t_end - cfg.s, h).as_array()
    ceh = float(eh[0] @ f.c.c1 + eh[1] @ f.c.c2)
    vals = f.dvalue(bundle.x_final) * ceh
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(cfg.M))
    return GradientReport(estimate=est, stderr=se, M=cfg.M, method="pathwise",
                          bound_value=math.inf, s=cfg.s, t=cfg.t_end)


def estimate_gradient_fd(basis: ModeBasis, cfg: SimConfig, x: HVector,
                         f: TestFunctional, h: HVector, epsilon: float,
                         bundle: PathBundle | None = None) -> GradientReport:
    """Central finite difference with common noise across the two start points.

    Driftless trajectories shift deterministically in the initial state, so a
    single bundle provides both perturbed simulations exactly.
    """
    if not epsilon > 0:
        raise InvalidParams("epsilon must be positive")
    if bundle is None:
        bundle = simulate_reference(basis, cfg, x, store_paths=False)
    eh = apply_semigroup(basis, cfg.t_end - cfg.s, h).as_array()
    vals = (f.value(bundle.x_final + epsilon * eh)
            - f.value(bundle.x_final - epsilon * eh)) / (2.0 * epsilon)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(cfg.M))
    return GradientReport(estimate=est, stderr=se, M=cfg.M, method="fd",
                          bound_value=math.inf, s=cfg.s, t=cfg.t_end)
