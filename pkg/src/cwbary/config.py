"""Experiment configuration: strict YAML schema and source construction.

Unknown keys anywhere in the file are errors, so a typo in an epsilon
never silently runs with a default.  Weights are normalized after parse;
everything else is validated against the owning module's preconditions
by building the real objects eagerly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import yaml

from . import measures
from .dual_solver import PotentialSpec
from .regularization import ENTROPIC, QUADRATIC, RegularizerSpec

RECOVERY_METHODS = ("grid", "mcmc", "bproj", "gradmap", "mongenet")
ORACLES = ("gaussian-fixed-point", "none")


def _check_keys(mapping, allowed, context: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ValueError(
            f"unknown config key(s) {unknown} in {context}; "
            f"allowed: {sorted(allowed)}"
        )


def _require(mapping, key, context: str):
    if key not in mapping:
        raise ValueError(f"missing required key {key!r} in {context}")
    return mapping[key]


@dataclass(frozen=True)
class PreprocessSettings:
    center: bool = True
    margin: float = measures.DEFAULT_MARGIN
    n_probe: int = measures.DEFAULT_N_PROBE


@dataclass(frozen=True)
class SolverSettings:
    parameterization: PotentialSpec = field(default_factory=PotentialSpec)
    batch_size: int = 1024
    total_steps: int = 4000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    log_interval: int = 100
    checkpoint_interval: int = 0


@dataclass(frozen=True)
class McmcSettings:
    proposal_sigma: Optional[float] = None
    burn_in: int = 2000
    thin: int = 10
    chains: int = 16


@dataclass(frozen=True)
class MongeSettings:
    batch_size: int = 1024
    total_steps: int = 2000
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class RecoverySettings:
    method: str = "gradmap"
    n_total: int = 20000
    grid_resolution: tuple = (64, 64)
    grid_samples: int = 2048
    bproj_samples: int = 4096
    mcmc: McmcSettings = field(default_factory=McmcSettings)
    monge: MongeSettings = field(default_factory=MongeSettings)

    def __post_init__(self):
        if self.method not in RECOVERY_METHODS:
            raise ValueError(
                f"unknown recovery method {self.method!r}; "
                f"choose from {RECOVERY_METHODS}"
            )
        object.__setattr__(self, "grid_resolution", tuple(self.grid_resolution))


@dataclass(frozen=True)
class EvalSettings:
    oracle: str = "gaussian-fixed-point"
    n_eval_samples: int = 20000
    trials: int = 1
    w2_sizes: tuple = ()
    w2_trials: int = 5

    def __post_init__(self):
        if self.oracle not in ORACLES:
            raise ValueError(f"unknown oracle {self.oracle!r}; choose from {ORACLES}")
        object.__setattr__(self, "w2_sizes", tuple(self.w2_sizes))


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    dimension: int
    weights: tuple
    source_specs: tuple
    base_dir: str = "."
    regularizer: RegularizerSpec = field(
        default_factory=lambda: RegularizerSpec(QUADRATIC, 1e-4, scale_by_diagonal=True)
    )
    preprocess: PreprocessSettings = field(default_factory=PreprocessSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    recovery: RecoverySettings = field(default_factory=RecoverySettings)
    evaluation: EvalSettings = field(default_factory=EvalSettings)

    def config_hash(self) -> str:
        payload = {
            "seed": self.seed,
            "dimension": self.dimension,
            "weights": list(self.weights),
            "sources": list(self.source_specs),
            "regularizer": {
                "family": self.regularizer.family,
                "epsilon": self.regularizer.epsilon,
                "scale_by_diagonal": self.regularizer.scale_by_diagonal,
            },
            "preprocess": self.preprocess.__dict__,
            "solver": {
                **{
                    k: v
                    for k, v in self.solver.__dict__.items()
                    if k != "parameterization"
                },
                "parameterization": self.solver.parameterization.__dict__,
            },
            "recovery": {
                **{
                    k: v
                    for k, v in self.recovery.__dict__.items()
                    if k not in ("mcmc", "monge")
                },
                "grid_resolution": list(self.recovery.grid_resolution),
                "mcmc": self.recovery.mcmc.__dict__,
                "monge": self.recovery.monge.__dict__,
            },
            "evaluation": {
                **self.evaluation.__dict__,
                "w2_sizes": list(self.evaluation.w2_sizes),
            },
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _parse_gaussian(spec, context):
    _check_keys(spec, {"kind", "mean", "cov"}, context)
    return measures.Gaussian(
        _require(spec, "mean", context), _require(spec, "cov", context)
    )


def build_source(spec: dict, dimension: int, base_dir: str, context: str):
    kind = _require(spec, "kind", context)
    if kind == "gaussian":
        src = _parse_gaussian(spec, context)
    elif kind == "gaussian-mixture":
        _check_keys(spec, {"kind", "weights", "components"}, context)
        comps = [
            _parse_gaussian(c, f"{context}.components[{k}]")
            for k, c in enumerate(_require(spec, "components", context))
        ]
        src = measures.GaussianMixture(comps, _require(spec, "weights", context))
    elif kind == "uniform-box":
        _check_keys(spec, {"kind", "lo", "hi"}, context)
        src = measures.UniformBox(
            measures.Box(_require(spec, "lo", context), _require(spec, "hi", context))
        )
    elif kind == "annulus":
        _check_keys(spec, {"kind", "center", "r_inner", "r_outer"}, context)
        src = measures.Annulus(
            _require(spec, "center", context),
            _require(spec, "r_inner", context),
            _require(spec, "r_outer", context),
        )
    elif kind == "ellipse":
        _check_keys(spec, {"kind", "center", "semi_axes", "angle"}, context)
        src = measures.Ellipse(
            _require(spec, "center", context),
            _require(spec, "semi_axes", context),
            spec.get("angle", 0.0),
        )
    elif kind == "raster":
        _check_keys(spec, {"kind", "intensities", "lo", "hi"}, context)
        src = measures.RasterShape(
            _require(spec, "intensities", context),
            measures.Box(
                _require(spec, "lo", context), _require(spec, "hi", context)
            ),
        )
    elif kind == "empirical":
        _check_keys(spec, {"kind", "points"}, context)
        src = measures.Empirical(_require(spec, "points", context))
    elif kind == "csv":
        _check_keys(spec, {"kind", "path"}, context)
        path = os.path.join(base_dir, _require(spec, "path", context))
        if not os.path.exists(path):
            raise ValueError(f"{context}: file not found: {path}")
        src = measures.load_csv(path)
    else:
        raise ValueError(f"{context}: unknown source kind {kind!r}")
    if src.d != dimension:
        raise ValueError(
            f"{context}: source dimension {src.d} != problem dimension {dimension}"
        )
    return src


def build_sources(config: ExperimentConfig):
    return [
        build_source(dict(spec), config.dimension, config.base_dir, f"sources[{i}]")
        for i, spec in enumerate(config.source_specs)
    ]


def _parse_parameterization(raw, context) -> PotentialSpec:
    _check_keys(raw, {"kind", "n_features", "freq_scale"}, context)
    return PotentialSpec(
        kind=raw.get("kind", "mlp"),
        n_features=int(raw.get("n_features", 2048)),
        freq_scale=float(raw.get("freq_scale", 1.0)),
    )


def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    _check_keys(
        raw,
        {"seed", "output_dir", "problem", "regularizer", "preprocess",
         "solver", "recovery", "evaluation"},
        "top level",
    )
    problem = _require(raw, "problem", "top level")
    _check_keys(problem, {"dimension", "weights", "sources"}, "problem")
    dimension = int(_require(problem, "dimension", "problem"))
    sources = _require(problem, "sources", "problem")
    if not sources:
        raise ValueError("problem.sources must be nonempty")
    weights = [float(w) for w in _require(problem, "weights", "problem")]
    if len(weights) != len(sources):
        raise ValueError("problem.weights must match problem.sources in length")
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("problem.weights must be nonnegative with positive sum")
    total = sum(weights)
    weights = tuple(w / total for w in weights)

    pp = raw.get("preprocess", {})
    _check_keys(pp, {"center", "margin", "n_probe"}, "preprocess")
    preprocess = PreprocessSettings(
        center=bool(pp.get("center", True)),
        margin=float(pp.get("margin", measures.DEFAULT_MARGIN)),
        n_probe=int(pp.get("n_probe", measures.DEFAULT_N_PROBE)),
    )

    rg = raw.get("regularizer", {})
    _check_keys(rg, {"family", "epsilon", "scale_by_diagonal"}, "regularizer")
    family = rg.get("family", QUADRATIC)
    if family not in (ENTROPIC, QUADRATIC):
        raise ValueError(
            f"regularizer.family must be one of ({ENTROPIC}, {QUADRATIC})"
        )
    regularizer = RegularizerSpec(
        family,
        float(rg.get("epsilon", 1e-4)),
        scale_by_diagonal=bool(rg.get("scale_by_diagonal", True)),
    )

    so = raw.get("solver", {})
    _check_keys(
        so,
        {"parameterization", "batch_size", "total_steps", "learning_rate",
         "beta1", "beta2", "eps_adam", "log_interval", "checkpoint_interval"},
        "solver",
    )
    solver = SolverSettings(
        parameterization=_parse_parameterization(
            so.get("parameterization", {}), "solver.parameterization"
        ),
        batch_size=int(so.get("batch_size", 1024)),
        total_steps=int(so.get("total_steps", 4000)),
        learning_rate=float(so.get("learning_rate", 1e-3)),
        beta1=float(so.get("beta1", 0.9)),
        beta2=float(so.get("beta2", 0.999)),
        eps_adam=float(so.get("eps_adam", 1e-8)),
        log_interval=int(so.get("log_interval", 100)),
        checkpoint_interval=int(so.get("checkpoint_interval", 0)),
    )

    rc = raw.get("recovery", {})
    _check_keys(
        rc,
        {"method", "n_total", "grid_resolution", "grid_samples",
         "bproj_samples", "mcmc", "monge"},
        "recovery",
    )
    mc = rc.get("mcmc", {})
    _check_keys(mc, {"proposal_sigma", "burn_in", "thin", "chains"}, "recovery.mcmc")
    mo = rc.get("monge", {})
    _check_keys(
        mo, {"batch_size", "total_steps", "learning_rate"}, "recovery.monge"
    )
    recovery = RecoverySettings(
        method=rc.get("method", "gradmap"),
        n_total=int(rc.get("n_total", 20000)),
        grid_resolution=tuple(rc.get("grid_resolution", (64, 64))),
        grid_samples=int(rc.get("grid_samples", 2048)),
        bproj_samples=int(rc.get("bproj_samples", 4096)),
        mcmc=McmcSettings(
            proposal_sigma=(
                None if mc.get("proposal_sigma") is None
                else float(mc["proposal_sigma"])
            ),
            burn_in=int(mc.get("burn_in", 2000)),
            thin=int(mc.get("thin", 10)),
            chains=int(mc.get("chains", 16)),
        ),
        monge=MongeSettings(
            batch_size=int(mo.get("batch_size", 1024)),
            total_steps=int(mo.get("total_steps", 2000)),
            learning_rate=float(mo.get("learning_rate", 1e-3)),
        ),
    )

    ev = raw.get("evaluation", {})
    _check_keys(
        ev,
        {"oracle", "n_eval_samples", "trials", "w2_sizes", "w2_trials"},
        "evaluation",
    )
    evaluation = EvalSettings(
        oracle=ev.get("oracle", "gaussian-fixed-point"),
        n_eval_samples=int(ev.get("n_eval_samples", 20000)),
        trials=int(ev.get("trials", 1)),
        w2_sizes=tuple(int(m) for m in ev.get("w2_sizes", ())),
        w2_trials=int(ev.get("w2_trials", 5)),
    )

    config = ExperimentConfig(
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw.get("output_dir", "out")),
        dimension=dimension,
        weights=weights,
        source_specs=tuple(json.loads(json.dumps(s)) for s in sources),
        base_dir=base_dir,
        regularizer=regularizer,
        preprocess=preprocess,
        solver=solver,
        recovery=recovery,
        evaluation=evaluation,
    )
    build_sources(config)  # fail fast: files exist, dimensions line up
    return config


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"config root must be a mapping: {path}")
    return parse_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))
