"""Experiment configuration: one JSON document, validated before anything runs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rdeepc.controllers import DeepcConfig
from rdeepc.errors import RdeepcError
from rdeepc.ltisim import InnovationLti, benchmark_system
from rdeepc.recursion import ALGORITHMS, CLOSED_LOOP, OPEN_LOOP, ConsistencyConfig

EXPERIMENTS = ("simulate", "consistency", "svd_bench", "equivalence")


class ConfigError(RdeepcError):
    """Invalid experiment configuration; ``where`` names the line or field."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class SimulateSettings:
    algorithms: tuple = ("baseline_alg1", "efficient_alg3")
    steps: int = 300
    bootstrap: int = 200
    bootstrap_var: float = 1.0
    reference_before: float = 10.0
    reference_after: float = 0.0
    switch_step: int | None = None
    alpha: float = 0.99


@dataclass(frozen=True)
class ConsistencySettings:
    modes: tuple = (OPEN_LOOP, CLOSED_LOOP)
    n_init: int = 50
    n_pred: int = 50
    checkpoints: tuple = (500, 1000, 2000, 5000)
    input_var: float = 1.0
    feedback_weight: float = 100.0
    dither_var: float = 1.0
    svd_source: str = "fresh"

    def to_consistency_config(self) -> ConsistencyConfig:
        return ConsistencyConfig(n_init=self.n_init, n_pred=self.n_pred, checkpoints=tuple(self.checkpoints),
                                 input_var=self.input_var, feedback_weight=self.feedback_weight,
                                 dither_var=self.dither_var, svd_source=self.svd_source)


@dataclass(frozen=True)
class SvdBenchSettings:
    modes: tuple = ("grow", "forget", "slide")
    rows: int = 40
    seed_cols: int = 60
    appends: int = 500
    alpha: float = 0.99


@dataclass(frozen=True)
class EquivalenceSettings:
    instances: int = 50
    loop_steps: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    system: object = "paper_benchmark"
    seed: int = 0
    monte_carlo_runs: int = 10
    output_dir: str = "results"
    parallel: int = 1
    controller: DeepcConfig = field(default_factory=DeepcConfig)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    consistency: ConsistencySettings = field(default_factory=ConsistencySettings)
    svd_bench: SvdBenchSettings = field(default_factory=SvdBenchSettings)
    equivalence: EquivalenceSettings = field(default_factory=EquivalenceSettings)
    base_dir: str = "."

    def resolved_system(self) -> InnovationLti:
        if self.system == "paper_benchmark":
            return benchmark_system()
        return load_system(Path(self.base_dir) / self.system["file"])

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {"controller": DeepcConfig, "simulate": SimulateSettings, "consistency": ConsistencySettings,
             "svd_bench": SvdBenchSettings, "equivalence": EquivalenceSettings}
_TOP = {"experiment", "system", "seed", "monte_carlo_runs", "output_dir", "parallel", *_SECTIONS}


def load_system(path: Path) -> InnovationLti:
    """System from a JSON file with keys A, B, C, D, K and optional noise_var."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("system.file", f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}", exc.msg) from exc
    missing = [k for k in "ABCDK" if k not in doc]
    if missing:
        raise ConfigError("system.file", f"{path} lacks matrices {missing}")
    try:
        return InnovationLti(*(np.array(doc[k], dtype=float) for k in "ABCDK"),
                             noise_var=float(doc.get("noise_var", 0.0)))
    except (RdeepcError, ValueError, TypeError) as exc:
        raise ConfigError("system.file", str(exc)) from exc


def _build(cls, section: str, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(section, "must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown field")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except (RdeepcError, ValueError, TypeError) as exc:
        raise ConfigError(section, str(exc)) from exc


def _check_int(value, where, low=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    if low is not None and value < low:
        raise ConfigError(where, f"must be >= {low}")
    return value


def parse_config(doc: dict, base_dir: str = ".", overrides: dict | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    doc = {**doc, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    unknown = sorted(set(doc) - _TOP)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    exp = doc.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {EXPERIMENTS}, got {exp!r}")
    kwargs = {"experiment": exp, "base_dir": str(base_dir)}
    for key, low in (("seed", 0), ("monte_carlo_runs", 1), ("parallel", 1)):
        if key in doc:
            kwargs[key] = _check_int(doc[key], key, low)
    if "output_dir" in doc:
        if not isinstance(doc["output_dir"], str) or not doc["output_dir"]:
            raise ConfigError("output_dir", "must be a non-empty string")
        kwargs["output_dir"] = doc["output_dir"]
    system = doc.get("system", "paper_benchmark")
    if system != "paper_benchmark":
        if not (isinstance(system, dict) and set(system) == {"file"} and isinstance(system["file"], str)):
            raise ConfigError("system", 'must be "paper_benchmark" or {"file": "<path>"}')
        if not (Path(base_dir) / system["file"]).is_file():
            raise ConfigError("system.file", f"no such file: {system['file']}")
    kwargs["system"] = system
    for name, cls in _SECTIONS.items():
        if name in doc:
            kwargs[name] = _build(cls, name, doc[name])
    cfg = ExperimentConfig(**kwargs)
    _validate_sections(cfg)
    if system != "paper_benchmark":
        cfg.resolved_system()
    return cfg


def _validate_sections(cfg: ExperimentConfig):
    sim = cfg.simulate
    bad = [a for a in sim.algorithms if a not in ALGORITHMS]
    if bad or not sim.algorithms:
        raise ConfigError("simulate.algorithms", f"unknown or empty algorithm list {list(sim.algorithms)}")
    _check_int(sim.steps, "simulate.steps", 1)
    _check_int(sim.bootstrap, "simulate.bootstrap", cfg.controller.n_init + cfg.controller.n_pred)
    if not 0 < sim.alpha < 1:
        raise ConfigError("simulate.alpha", "must lie in (0, 1)")
    con = cfg.consistency
    bad = [m for m in con.modes if m not in (OPEN_LOOP, CLOSED_LOOP)]
    if bad or not con.modes:
        raise ConfigError("consistency.modes", f"modes must be {OPEN_LOOP!r}/{CLOSED_LOOP!r}")
    try:
        con.to_consistency_config()
    except RdeepcError as exc:
        raise ConfigError("consistency", str(exc)) from exc
    sb = cfg.svd_bench
    if any(m not in ("grow", "forget", "slide") for m in sb.modes):
        raise ConfigError("svd_bench.modes", "modes must be grow/forget/slide")
    for k in ("rows", "seed_cols", "appends"):
        _check_int(getattr(sb, k), f"svd_bench.{k}", 1)
    if not 0 < sb.alpha < 1:
        raise ConfigError("svd_bench.alpha", "must lie in (0, 1)")
    _check_int(cfg.equivalence.instances, "equivalence.instances", 1)
    _check_int(cfg.equivalence.loop_steps, "equivalence.loop_steps", 1)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from exc
    return parse_config(doc, base_dir=str(path.parent), overrides=overrides)
