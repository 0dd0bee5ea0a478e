"""Named experiment suites behind the command-line driver.

Each runner computes its tables, writes CSV/JSON artifacts into the output
directory, and reports whether the configured quality thresholds hold.
"""

from __future__ import annotations

import json
import math
import os
import time

import numpy as np

from . import __version__
from .bsde import (GeneratorSpec, TerminalSpec, semilinear_bismut, solve_lsmc,
                   y_gradient_scaling, z_identification_check,
                   kolmogorov_residual, export_bsde_csv)
from .config import (ExperimentConfig, config_hash, drift_from_dict,
                     functional_from_dict, generator_from_dict)
from .controls import (ControlRequest, build_control, control_norm_scaling,
                       direction_from_a, reproducing_residual)
from .errors import InvalidParams, WavebismutError
from .gradients import (GradientReport, TestFunctional, append_report_csv,
                        estimate_gradient_bismut, estimate_gradient_fd,
                        estimate_gradient_pathwise, skorokhod_integral)
from .paths import DriftSpec, SimConfig, girsanov_weight, simulate_drifted, \
    simulate_reference
from .spectral import (HVector, ModeBasis, apply_semigroup, build_basis,
                       hs_norm_squared, semigroup_blocks)


def _param_rng(seed):
    return np.random.Generator(np.random.Philox(key=np.array(
        [seed, 0xD1CE], dtype=np.uint64)))


def _direction(basis: ModeBasis, variant: str, params) -> HVector:
    """Direction vector from config: an explicit U-vector or a seeded draw."""
    if "direction_a" in params:
        a = np.asarray(params["direction_a"], dtype=float)
        if variant == "WaveK":
            raise InvalidParams("WaveK takes direction_h, not direction_a")
        return direction_from_a(basis, variant, a)
    if "direction_h" in params:
        d = params["direction_h"]
        return HVector(np.asarray(d["c1"], float), np.asarray(d["c2"], float))
    rng = _param_rng(int(params.get("direction_seed", 1)))
    if variant == "WaveK":
        h = HVector(rng.standard_normal(basis.N), rng.standard_normal(basis.N))
        return (1.0 / float(basis.norm_k(h))) * h
    a = rng.standard_normal(basis.N)
    return direction_from_a(basis, variant, a / np.linalg.norm(a))


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")


def run_identity(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    variant = p["variant"]
    times = [float(t) for t in p.get("times", [0.1, 1.0])]
    panels = int(p.get("panels", 2048))
    h = _direction(basis, variant, p)
    rows = []
    ok = True
    for t in times:
        req = ControlRequest(variant, h, 0.0, t)
        ctrl = build_control(basis, req, with_samples=False)
        r1 = reproducing_residual(basis, ctrl, req, panels)
        r2 = reproducing_residual(basis, ctrl, req, 2 * panels)
        rows.append((t, panels, r1))
        rows.append((t, 2 * panels, r2))
        if "max_residual" in p and r1 > float(p["max_residual"]):
            ok = False
        if "min_ratio" in p and r1 / max(r2, 1e-300) < float(p["min_ratio"]):
            ok = False
    _write_csv(os.path.join(outdir, "identity.csv"), "t,panels,residual", rows)
    return ok, {"rows": len(rows)}


def run_scaling(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    variant = p["variant"]
    t_grid = np.logspace(math.log10(float(p.get("t_min", 1e-3))),
                         math.log10(float(p.get("t_max", 1.0))),
                         int(p.get("points", 20)))
    direction = p.get("direction", "ones")
    if isinstance(direction, list):
        a = np.asarray(direction, dtype=float)
    elif direction == "invsqrt":
        a = np.arange(1, basis.N + 1, dtype=float) ** -0.5
    else:
        a = np.ones(basis.N)
    if variant == "WaveK":
        h = _direction(basis, variant, p)
        a = h.as_array()
    slope, icpt, norms = control_norm_scaling(basis, variant, a, t_grid)
    _write_csv(os.path.join(outdir, "scaling.csv"), "t,norm",
               list(zip(t_grid.tolist(), norms.tolist())))
    _write_csv(os.path.join(outdir, "scaling_fit.csv"), "slope,intercept",
               [(slope, icpt)])
    ok = True
    if "expected_slope" in p:
        ok = abs(slope - float(p["expected_slope"])) <= float(p["slope_tol"])
    return ok, {"slope": slope}


def run_hsnorm(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    t_grid = np.logspace(math.log10(float(p.get("t_min", 1e-3))),
                         math.log10(float(p.get("t_max", 0.1))),
                         int(p.get("points", 20)))
    vals = np.array([hs_norm_squared(basis, float(t)) for t in t_grid])
    _write_csv(os.path.join(outdir, "hsnorm.csv"), "t,hs_norm_squared",
               list(zip(t_grid.tolist(), vals.tolist())))
    slope, icpt = np.polyfit(np.log(t_grid), np.log(vals), 1)
    _write_csv(os.path.join(outdir, "hsnorm_fit.csv"), "slope,intercept",
               [(float(slope), float(icpt))])
    ok = True
    if p.get("check_constant", False):
        ref = float((1.0 / basis.mu).sum())
        ok = bool(np.all(np.abs(vals - ref) <= 1e-10 * ref))
    if "expected_slope" in p:
        ok = ok and abs(float(slope) - float(p["expected_slope"])) \
            <= float(p["slope_tol"])
    return ok, {"slope": float(slope)}


def run_gradient(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    sim = cfg.sim
    check = p.get("check", "bismut")
    variant = p.get("variant", "WaveJ" if basis.kind == "Wave" else "DampedJ")
    h = _direction(basis, variant, p)
    req = ControlRequest(variant, h, sim.s, sim.t_end)
    ctrl = build_control(basis, req, with_samples=False)
    csv_path = os.path.join(outdir, "gradient.csv")
    if os.path.exists(csv_path):
        os.remove(csv_path)
    if check == "isometry":
        bundle = simulate_reference(basis, sim, HVector.zero(basis.N),
                                    store_paths=False)
        delta = skorokhod_integral(ctrl, bundle)
        var = float(delta.var(ddof=1))
        ref = ctrl.l2norm**2
        rel = abs(var - ref) / ref
        _write_csv(os.path.join(outdir, "isometry.csv"),
                   "sample_variance,norm_squared,rel_error", [(var, ref, rel)])
        ok = rel <= float(p.get("rel_tol", 0.02))
        return ok, {"rel_error": rel}
    f = functional_from_dict(p["functional"])
    x = HVector.zero(basis.N)
    if "x0" in p:
        x = HVector(np.asarray(p["x0"]["c1"], float),
                    np.asarray(p["x0"]["c2"], float))
    bundle = simulate_reference(basis, sim, x, store_paths=False)
    rep = estimate_gradient_bismut(basis, sim, x, f, ctrl, h, bundle=bundle)
    append_report_csv(rep, csv_path)
    ok = True
    summary = {"estimate": rep.estimate, "stderr": rep.stderr}
    if check == "bismut" and f.form == "Linear":
        eh = apply_semigroup(basis, sim.t_end - sim.s, h).as_array()
        exact = float(eh[0] @ f.c.c1 + eh[1] @ f.c.c2)
        append_report_csv(GradientReport(exact, 0.0, sim.M, "exact", math.inf,
                                         sim.s, sim.t_end), csv_path)
        ok = abs(rep.estimate - exact) <= 3.0 * rep.stderr
        if "max_stderr_ratio" in p:
            ok = ok and rep.stderr / abs(exact) <= float(p["max_stderr_ratio"])
        summary["exact"] = exact
    elif check == "fd":
        fd_seed = int(p.get("fd_seed", sim.seed + 1))
        sim_fd = SimConfig(steps=sim.steps, M=sim.M, seed=fd_seed, s=sim.s,
                           t_end=sim.t_end)
        rep_fd = estimate_gradient_fd(basis, sim_fd, x, f, h,
                                      float(p.get("epsilon", 1e-2)))
        append_report_csv(rep_fd, csv_path)
        comb = math.hypot(rep.stderr, rep_fd.stderr)
        ok = abs(rep.estimate - rep_fd.estimate) <= 3.0 * comb
        summary["fd"] = rep_fd.estimate
    elif check == "three-way":
        rep_pw = estimate_gradient_pathwise(basis, sim, x, f, h, bundle=bundle)
        sim_fd = SimConfig(steps=sim.steps, M=sim.M, seed=sim.seed + 1,
                           s=sim.s, t_end=sim.t_end)
        rep_fd = estimate_gradient_fd(basis, sim_fd, x, f, h,
                                      float(p.get("epsilon", 1e-3)))
        append_report_csv(rep_pw, csv_path)
        append_report_csv(rep_fd, csv_path)
        for other in (rep_pw, rep_fd):
            comb = math.hypot(rep.stderr, other.stderr)
            ok = ok and abs(rep.estimate - other.estimate) <= 3.0 * comb
    return ok, summary


def run_girsanov(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    sim = cfg.sim
    f = functional_from_dict(p["functional"])
    drift = drift_from_dict(p.get("drift", {"form": "Saturating",
                                            "amplitude": 0.5}))
    x = HVector.zero(basis.N)
    ref = simulate_reference(basis, sim, x, store_paths=True)
    w = girsanov_weight(ref, drift)
    m = sim.M
    wmean, wse = float(w.mean()), float(w.std(ddof=1) / math.sqrt(m))
    fv = f.value(ref.x_final) * w
    e1, se1 = float(fv.mean()), float(fv.std(ddof=1) / math.sqrt(m))
    dri = simulate_drifted(basis, sim, drift, x, store_paths=False)
    gv = f.value(dri.x_final)
    e2, se2 = float(gv.mean()), float(gv.std(ddof=1) / math.sqrt(m))
    _write_csv(os.path.join(outdir, "girsanov.csv"), "estimator,value,stderr",
               [("weighted_reference", e1, se1), ("drifted", e2, se2),
                ("weight_mean", wmean, wse)])
    ok = (abs(e1 - e2) <= 3.0 * math.hypot(se1, se2)
          and abs(wmean - 1.0) <= 3.0 * wse)
    return ok, {"weighted": e1, "drifted": e2, "weight_mean": wmean}


def _bsde_pieces(basis, p):
    gen = generator_from_dict(p.get("generator", {"form": "Zero"}))
    phi = functional_from_dict(p["functional"])
    term = TerminalSpec(phi=phi)
    drift = drift_from_dict(p.get("drift", {"form": "Zero"}))
    x0 = HVector.zero(basis.N)
    if "x0" in p:
        x0 = HVector(np.asarray(p["x0"]["c1"], float),
                     np.asarray(p["x0"]["c2"], float))
    return gen, term, drift, x0


def run_bsde(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    sim = cfg.sim
    gen, term, drift, x0 = _bsde_pieces(basis, p)
    sol = solve_lsmc(basis, sim, drift, x0, gen, term)
    export_bsde_csv(sol, os.path.join(outdir, "bsde.csv"))
    ok = True
    summary = {"y0": sol.y0, "cond": sol.cond_max}
    if p.get("closed_form_check", False):
        if gen.form not in ("Zero", "AffineY") or not drift.is_zero:
            raise InvalidParams("closed-form check needs zero drift and an "
                                "affine-in-y generator")
        lam = gen.lam if gen.form == "AffineY" else 0.0
        phi_mean = float(term.phi.value(sol.bundle.X[:, sim.steps]).mean())
        ref = math.exp(lam * (sim.t_end - sim.s)) * phi_mean
        rel = abs(sol.y0 - ref) / abs(ref)
        _write_csv(os.path.join(outdir, "bsde_check.csv"),
                   "y0,reference,rel_error", [(sol.y0, ref, rel)])
        ok = rel <= float(p.get("rel_tol", 0.01))
        summary["rel_error"] = rel
    return ok, summary


def run_zcheck(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    sim = cfg.sim
    gen, term, drift, x0 = _bsde_pieces(basis, p)
    if gen.form != "Zero" or term.phi.form != "Linear" or not drift.is_zero:
        raise InvalidParams("zcheck needs zero generator/drift and linear phi")
    sol = solve_lsmc(basis, sim, drift, x0, gen, term)
    # closed form: grad of Y through J is the second row of E(T-s)^T c
    E = semigroup_blocks(basis, sim.t_end - sim.s)
    carr = term.phi.c.as_array()
    grad_j = np.einsum("nij,in->jn", E, carr)[1]
    rel = z_identification_check(basis, sol, grad_j)
    sig = float(basis.sigma(sim.s))
    target = sig * grad_j
    rows = [(n + 1, float(sol.z0[n]), float(target[n]))
            for n in range(basis.N)]
    _write_csv(os.path.join(outdir, "zcheck.csv"), "mode,z0,target", rows)
    # sigma-doubling exactness on the closed-form side
    doubling_gap = float(np.max(np.abs(2.0 * target - (2.0 * sig) * grad_j)))
    _write_csv(os.path.join(outdir, "zcheck_summary.csv"),
               "rel_error,doubling_gap", [(rel, doubling_gap)])
    ok = rel <= float(p.get("rel_tol", 0.1)) and doubling_gap <= 1e-12
    return ok, {"rel_error": rel, "doubling_gap": doubling_gap}


def run_kolmogorov(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    sim = cfg.sim
    gen, term, drift, x0 = _bsde_pieces(basis, p)
    probe_s = [float(v) for v in p.get("probe_s", [sim.s])]
    rng = _param_rng(int(p.get("probe_seed", 7)))
    scale = float(p.get("probe_scale", 0.0))
    points = []
    for s in probe_s:
        x = x0
        if scale > 0:
            x = HVector(x0.c1 + scale * rng.standard_normal(basis.N),
                        x0.c2 + scale * rng.standard_normal(basis.N))
        points.append((s, x))
    recs = kolmogorov_residual(basis, sim, drift, gen, term, points,
                               tolerance=float(p.get("budget_tol", math.inf)))
    with open(os.path.join(outdir, "kolmogorov.jsonl"), "w") as fh:
        for r in recs:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    tol = float(p.get("residual_tol_sigma", 3.0))
    rel = float(p.get("rel_tol", 0.05))
    ok = all(abs(r["residual"]) <= max(tol * r["budget"], rel * abs(r["y0"]))
             for r in recs)
    return ok, {"max_residual": max(abs(r["residual"]) for r in recs)}


def run_ygrad_scaling(basis, cfg: ExperimentConfig, outdir):
    p = cfg.params
    sim = cfg.sim
    gen, term, drift, _ = _bsde_pieces(basis, p)
    T = sim.t_end
    gaps = np.logspace(math.log10(float(p.get("gap_min", 0.02))),
                       math.log10(float(p.get("gap_max", 0.8))),
                       int(p.get("points", 8)))
    s_grid = T - gaps
    a = np.asarray(p.get("direction_a", np.ones(basis.N).tolist()), float)

    def make_cfg(s):
        return SimConfig(steps=sim.steps, M=sim.M, seed=sim.seed, s=s, t_end=T)

    slope, icpt, vals = y_gradient_scaling(
        basis, make_cfg, gen, term, a, s_grid, T, drift=drift,
        variant=p.get("variant"))
    _write_csv(os.path.join(outdir, "ygrad.csv"), "gap,gradient",
               list(zip(gaps.tolist(), vals.tolist())))
    _write_csv(os.path.join(outdir, "ygrad_fit.csv"), "slope,intercept",
               [(slope, icpt)])
    ok = True
    if "min_slope" in p:
        ok = slope >= float(p["min_slope"])
    return ok, {"slope": slope}


_RUNNERS = {
    "identity": run_identity,
    "scaling": run_scaling,
    "hsnorm": run_hsnorm,
    "gradient": run_gradient,
    "girsanov": run_girsanov,
    "bsde": run_bsde,
    "zcheck": run_zcheck,
    "kolmogorov": run_kolmogorov,
    "ygrad-scaling": run_ygrad_scaling,
}

_NEEDS_SIM = {"gradient", "girsanov", "bsde", "zcheck", "kolmogorov",
              "ygrad-scaling"}


def run(cfg: ExperimentConfig, outdir=None, seed=None):
    """Execute one experiment; returns (ok, summary dict) and writes artifacts.

    The manifest records the config hash, effective seed, component versions,
    and wall time next to the result files.
    """
    t0 = time.time()
    outdir = outdir or cfg.out
    if cfg.experiment in _NEEDS_SIM and cfg.sim is None:
        raise InvalidParams(f"experiment {cfg.experiment} needs a sim section")
    if seed is not None and cfg.sim is not None:
        sim = SimConfig(steps=cfg.sim.steps, M=cfg.sim.M, seed=int(seed),
                        s=cfg.sim.s, t_end=cfg.sim.t_end)
        cfg = ExperimentConfig(experiment=cfg.experiment, model=cfg.model,
                               sim=sim, params=cfg.params, out=cfg.out)
    basis = build_basis(cfg.model, allow_degenerate=True)
    os.makedirs(outdir, exist_ok=True)
    ok, summary = _RUNNERS[cfg.experiment](basis, cfg, outdir)
    manifest = {
        "config_hash": config_hash(cfg),
        "seed": cfg.sim.seed if cfg.sim is not None else None,
        "versions": {
            "wavebismut": __version__,
            "numpy": np.__version__,
        },
        "wall_time_s": time.time() - t0,
        "experiment": cfg.experiment,
        "ok": bool(ok),
        "summary": summary,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return bool(ok), summary
