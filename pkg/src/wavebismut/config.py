"""Serialisation of experiment configurations.

Configs are JSON with a fixed schema; unknown keys anywhere are rejected so a
config file round-trips losslessly and typos fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .bsde import GeneratorSpec, TerminalSpec
from .errors import InvalidParams
from .gradients import TestFunctional
from .paths import DriftSpec, SimConfig
from .spectral import HVector, ModelParams, SigmaSpec

EXPERIMENTS = ("identity", "scaling", "hsnorm", "gradient", "girsanov",
               "bsde", "kolmogorov", "zcheck", "ygrad-scaling")


def _reject_unknown(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise InvalidParams(f"unknown keys in {where}: {sorted(extra)}")


def model_to_dict(m: ModelParams):
    d = {"kind": m.kind, "N": m.N, "delta": m.delta, "T": m.T,
         "sigma": m.sigma.to_dict()}
    for k in ("rho", "alpha", "eps"):
        v = getattr(m, k)
        if v is not None:
            d[k] = v
    return d


def model_from_dict(d) -> ModelParams:
    _reject_unknown(d, ("kind", "N", "delta", "rho", "alpha", "eps",
                        "sigma", "T"), "model")
    try:
        kind = d["kind"]
        n = int(d["N"])
        delta = float(d["delta"])
        t = float(d["T"])
    except KeyError as e:
        raise InvalidParams(f"model is missing key {e}")
    sigma = SigmaSpec.from_dict(d.get("sigma", {"form": "const", "value": 1.0}))
    opt = {k: (float(d[k]) if k in d else None) for k in ("rho", "alpha", "eps")}
    return ModelParams(kind=kind, N=n, delta=delta, T=t, sigma=sigma, **opt)


def sim_to_dict(s: SimConfig):
    return {"steps": s.steps, "M": s.M, "seed": s.seed,
            "s": s.s, "t_end": s.t_end}


def sim_from_dict(d) -> SimConfig:
    _reject_unknown(d, ("steps", "M", "seed", "s", "t_end"), "sim")
    try:
        return SimConfig(steps=int(d["steps"]), M=int(d["M"]),
                         seed=int(d["seed"]), s=float(d.get("s", 0.0)),
                         t_end=float(d["t_end"]))
    except KeyError as e:
        raise InvalidParams(f"sim is missing key {e}")


def functional_from_dict(d) -> TestFunctional:
    _reject_unknown(d, ("form", "c1", "c2", "K"), "functional")
    try:
        c = HVector(np.asarray(d["c1"], dtype=float),
                    np.asarray(d["c2"], dtype=float))
        return TestFunctional(form=d["form"], c=c, K=int(d.get("K", 1)))
    except KeyError as e:
        raise InvalidParams(f"functional is missing key {e}")


def functional_to_dict(f: TestFunctional):
    d = {"form": f.form, "c1": list(f.c.c1), "c2": list(f.c.c2)}
    if f.form == "PolyGrowth":
        d["K"] = f.K
    return d


def drift_from_dict(d) -> DriftSpec:
    _reject_unknown(d, ("form", "amplitude"), "drift")
    return DriftSpec(form=d.get("form", "Zero"),
                     amplitude=float(d.get("amplitude", 0.0)))


def drift_to_dict(d: DriftSpec):
    out = {"form": d.form}
    if d.form != "Zero":
        out["amplitude"] = d.amplitude
    return out


def generator_from_dict(d) -> GeneratorSpec:
    _reject_unknown(d, ("form", "lam", "amplitude"), "generator")
    return GeneratorSpec(form=d.get("form", "Zero"),
                         lam=float(d.get("lam", 0.0)),
                         amplitude=float(d.get("amplitude", 0.0)))


def generator_to_dict(g: GeneratorSpec):
    out = {"form": g.form}
    if g.form == "AffineY":
        out["lam"] = g.lam
    if g.form == "LipschitzNonlinear":
        out["amplitude"] = g.amplitude
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A named experiment with its model, simulation, and tuning parameters."""

    experiment: str
    model: ModelParams
    sim: SimConfig | None = None
    params: dict = field(default_factory=dict)
    out: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidParams(f"unknown experiment {self.experiment!r}")
        if not isinstance(self.params, dict):
            raise InvalidParams("params must be a mapping")

    def to_dict(self):
        d = {"experiment": self.experiment, "model": model_to_dict(self.model),
             "params": self.params, "out": self.out}
        if self.sim is not None:
            d["sim"] = sim_to_dict(self.sim)
        return d

    @staticmethod
    def from_dict(d) -> "ExperimentConfig":
        _reject_unknown(d, ("experiment", "model", "sim", "params", "out"),
                        "config")
        try:
            exp = d["experiment"]
            model = model_from_dict(d["model"])
        except KeyError as e:
            raise InvalidParams(f"config is missing key {e}")
        sim = sim_from_dict(d["sim"]) if "sim" in d else None
        params = d.get("params", {})
        return ExperimentConfig(experiment=exp, model=model, sim=sim,
                                params=params, out=d.get("out", "results"))


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidParams(f"cannot read config {path}: {e}")
    if not isinstance(raw, dict):
        raise InvalidParams("config root must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def save_config(cfg: ExperimentConfig, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
