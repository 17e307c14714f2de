"""Experiment configuration files (TOML).

A config has a ``[model]`` table, a ``[solver]`` table and optional
``[compare]`` / ``[sweep]`` tables::

    seed = 42

    [model]
    kind = "kohn_sham_1d"        # quadratic | hartree | kohn_sham_1d
    n_points = 128
    length = 20.0                # or: spacing = ...
    n_orb = 2
    nuclei = [[3.0, -1.5], [1.0, 1.5]]

    [solver]
    method = "opi"               # opi | midpoint | retraction
    dt = 0.01
    epsilon = 1e-8

Unknown keys are rejected; every error names the offending field.
"""

from __future__ import annotations

import itertools
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from .flow import FlowConfig
from .models import Grid1D, KohnSham1D, KohnSham1DSpec

MODEL_KINDS = ("quadratic", "hartree", "kohn_sham_1d")
METHODS = ("opi", "midpoint", "retraction")
INITIAL_KINDS = ("random", "ground_state")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    n_points: int
    n_orb: int
    spacing: float
    origin: float
    nuclei: tuple[tuple[float, float], ...] = ()
    soft_core: float = 1.0
    hartree_soft_core: float = 1.0
    hartree_scale: float = 1.0
    exchange: bool = True
    correlation: bool = True

    def build(self) -> KohnSham1D:
        spec = KohnSham1DSpec(
            Grid1D(self.n_points, self.spacing, self.origin),
            self.n_orb,
            self.nuclei,
            self.soft_core,
            self.hartree_soft_core,
            self.hartree_scale,
            self.exchange,
            self.correlation,
        )
        if self.kind == "quadratic":
            spec = spec.linear()
        elif self.kind == "hartree":
            spec = spec.without_xc()
        return KohnSham1D(spec)


@dataclass(frozen=True)
class SolverConfig:
    method: str
    flow: FlowConfig


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    solver: SolverConfig
    seed: int = 0
    initial: str = "random"
    output_dir: str | None = None
    compare: tuple[str, ...] = ()
    sweep: dict[str, tuple] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        """Normalized form; parsing the dumped dict yields an equal config."""
        m = self.model
        model = {
            "kind": m.kind,
            "n_points": m.n_points,
            "n_orb": m.n_orb,
            "spacing": m.spacing,
            "origin": m.origin,
            "nuclei": [list(n) for n in m.nuclei],
            "soft_core": m.soft_core,
            "hartree_soft_core": m.hartree_soft_core,
            "hartree_scale": m.hartree_scale,
            "exchange": m.exchange,
            "correlation": m.correlation,
        }
        solver = {"method": self.solver.method}
        solver.update({f.name: getattr(self.solver.flow, f.name) for f in fields(FlowConfig)})
        out: dict[str, Any] = {"seed": self.seed, "initial": self.initial}
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        out["model"] = model
        out["solver"] = solver
        if self.compare:
            out["compare"] = {"solvers": list(self.compare)}
        if self.sweep:
            out["sweep"] = {k: list(v) for k, v in self.sweep.items()}
        return out

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_solver(self, method: str | None = None, **flow_overrides) -> "ExperimentConfig":
        flow = replace(self.solver.flow, **flow_overrides) if flow_overrides else self.solver.flow
        return replace(self, solver=SolverConfig(method or self.solver.method, flow), compare=(), sweep={})

    def sweep_points(self) -> list[dict[str, Any]]:
        if not self.sweep:
            return [{}]
        keys = list(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]


_FLOW_TYPES = {f.name: f.type for f in fields(FlowConfig)}
_SWEEPABLE = set(_FLOW_TYPES) | {"method", "seed"}


def _take(table: dict, key: str, where: str, kind, required: bool = False, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"missing required field `{where}.{key}`")
        return default
    value = table[key]
    name = f"`{where}.{key}`"
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
    elif kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer")
    elif kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        value = float(value)
    elif kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
    return value


def _reject_unknown(table: dict, allowed, where: str) -> None:
    for key in table:
        if key not in allowed:
            label = f"`{where}.{key}`" if where else f"`{key}`"
            raise ConfigError(f"unknown field {label}")


_MODEL_KEYS = {
    "kind", "n_points", "n_orb", "spacing", "length", "origin", "nuclei",
    "soft_core", "hartree_soft_core", "hartree_scale", "exchange", "correlation",
}  # fmt: skip


def _parse_model(t: dict) -> ModelConfig:
    _reject_unknown(t, _MODEL_KEYS, "model")
    kind = _take(t, "kind", "model", str, required=True)
    if kind not in MODEL_KINDS:
        raise ConfigError(f"`model.kind` must be one of {', '.join(MODEL_KINDS)}; got {kind!r}")
    n_points = _take(t, "n_points", "model", int, required=True)
    n_orb = _take(t, "n_orb", "model", int, required=True)
    spacing = _take(t, "spacing", "model", float)
    length = _take(t, "length", "model", float)
    if (spacing is None) == (length is None):
        raise ConfigError("exactly one of `model.spacing` and `model.length` is required")
    if spacing is None:
        spacing = length / (n_points + 1)
    origin = _take(t, "origin", "model", float)
    if origin is None:
        origin = -0.5 * spacing * (n_points + 1)
    nuclei = t.get("nuclei", [])
    try:
        nuclei = tuple((float(z), float(r)) for z, r in nuclei)
    except (TypeError, ValueError):
        raise ConfigError("`model.nuclei` must be a list of [charge, position] pairs") from None
    cfg = ModelConfig(
        kind=kind,
        n_points=n_points,
        n_orb=n_orb,
        spacing=spacing,
        origin=origin,
        nuclei=nuclei,
        soft_core=_take(t, "soft_core", "model", float, default=1.0),
        hartree_soft_core=_take(t, "hartree_soft_core", "model", float, default=1.0),
        hartree_scale=_take(t, "hartree_scale", "model", float, default=1.0),
        exchange=_take(t, "exchange", "model", bool, default=True),
        correlation=_take(t, "correlation", "model", bool, default=True),
    )
    try:
        cfg.build()
    except ValueError as exc:
        raise ConfigError(f"invalid `model`: {exc}") from None
    return cfg


def _parse_flow(t: dict, where: str = "solver") -> dict:
    kw = {}
    for name, typ in _FLOW_TYPES.items():
        kind = {"float": float, "int": int, "str": str, "bool": bool}[typ]
        required = name in ("dt", "epsilon")
        value = _take(t, name, where, kind, required=required)
        if value is not None:
            kw[name] = value
    return kw


def _parse_solver(t: dict) -> SolverConfig:
    _reject_unknown(t, set(_FLOW_TYPES) | {"method"}, "solver")
    method = _take(t, "method", "solver", str, required=True)
    if method not in METHODS:
        raise ConfigError(f"`solver.method` must be one of {', '.join(METHODS)}; got {method!r}")
    kw = _parse_flow(t)
    if method == "midpoint":
        kw.setdefault("inner_mode", "to_tolerance")
    # dt bounds default around the given dt so a bare config is valid
    kw.setdefault("dt_max", max(kw["dt"], FlowConfig.dt_max))
    kw.setdefault("dt_min", min(kw["dt"], FlowConfig.dt_min))
    try:
        flow = FlowConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"invalid `solver`: {exc}") from None
    if method == "midpoint" and flow.inner_mode != "to_tolerance":
        raise ConfigError("`solver.inner_mode` must be 'to_tolerance' for the midpoint method")
    return SolverConfig(method, flow)


def parse_config(data: dict) -> ExperimentConfig:
    _reject_unknown(data, {"seed", "initial", "output_dir", "model", "solver", "compare", "sweep"}, "")
    for section in ("model", "solver"):
        if section not in data:
            raise ConfigError(f"missing required table `[{section}]`")
        if not isinstance(data[section], dict):
            raise ConfigError(f"`{section}` must be a table")
    model = _parse_model(data["model"])
    solver = _parse_solver(data["solver"])
    seed = _take(data, "seed", "", int, default=0) if "seed" in data else 0
    initial = data.get("initial", "random")
    if initial not in INITIAL_KINDS:
        raise ConfigError(f"`initial` must be one of {', '.join(INITIAL_KINDS)}; got {initial!r}")
    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("`output_dir` must be a string")

    compare: tuple[str, ...] = ()
    if "compare" in data:
        c = data["compare"]
        _reject_unknown(c, {"solvers"}, "compare")
        solvers = c.get("solvers")
        if not isinstance(solvers, list) or len(solvers) != 2:
            raise ConfigError("`compare.solvers` must list exactly two methods")
        for s in solvers:
            if s not in METHODS:
                raise ConfigError(f"`compare.solvers` entry {s!r} is not one of {', '.join(METHODS)}")
        compare = tuple(solvers)

    sweep: dict[str, tuple] = {}
    if "sweep" in data:
        s = data["sweep"]
        _reject_unknown(s, _SWEEPABLE, "sweep")
        for key, values in s.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"`sweep.{key}` must be a non-empty list")
            sweep[key] = tuple(values)

    cfg = ExperimentConfig(model, solver, seed, initial, output_dir, compare, sweep)
    if initial == "ground_state" and model.kind != "quadratic":
        raise ConfigError("`initial = \"ground_state\"` needs `model.kind = \"quadratic\"`")
    for point in cfg.sweep_points():
        try:
            point_config(cfg, point)
        except ConfigError as exc:
            raise ConfigError(f"sweep point {point}: {exc}") from None
    return cfg


def point_config(cfg: ExperimentConfig, point: dict[str, Any]) -> ExperimentConfig:
    """The single-run config for one sweep grid point."""
    if not point:
        return replace(cfg, sweep={})
    solver = {"method": cfg.solver.method}
    solver.update({f.name: getattr(cfg.solver.flow, f.name) for f in fields(FlowConfig)})
    seed = cfg.seed
    for key, value in point.items():
        if key == "seed":
            seed = value
        else:
            solver[key] = value
    # a swept dt may leave the fixed bounds; widen them rather than fail
    solver["dt_max"] = max(solver["dt_max"], solver["dt"])
    solver["dt_min"] = min(solver["dt_min"], solver["dt"])
    if solver["method"] == "midpoint":
        solver["inner_mode"] = "to_tolerance"
    elif "inner_mode" not in point and cfg.solver.method == "midpoint":
        solver["inner_mode"] = "fixed_count"
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("`seed` must be an integer")
    return replace(cfg, solver=_parse_solver(solver), seed=seed, sweep={}, compare=())


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(data)


def initial_orbitals(cfg: ExperimentConfig, model: KohnSham1D) -> np.ndarray:
    """Seeded Gaussian start, or the exact linear ground space."""
    if cfg.initial == "ground_state":
        from .baselines import dense_ground_space

        return dense_ground_space(model.hamiltonian(), model.quadrature, model.n_orb)[1]
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal(model.dimension)
