"""Experiment configuration: schema, validation and construction of solver objects.

Configs are YAML (JSON is accepted as a subset). Every model rejects unknown
keys, and defaults are materialized by :meth:`Config.canonical`, which is
what the CLI echoes next to its outputs.
"""

from __future__ import annotations

import hashlib
import json
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .coefficients import PowerRate, make_coefficients
from .dynamics import Scenario
from .monotone import ConvexDomain, DomainEmptyError, MonotoneOperator
from .paths import ControlPath, TimeGrid

EXPERIMENT_KINDS = ("limit", "simulate", "skeleton", "mdp-skeleton", "rate", "ldp", "mdp", "laplace", "converge")
SCAN_KINDS = ("ldp", "mdp", "laplace", "converge")


class ConfigError(ValueError):
    """Validation failure; ``errors`` is a list of ``(key path, message)``."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("invalid config:\n" + "\n".join(f"  {p}: {m}" for p, m in errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


Vector = list[float] | float


class DomainSpec(_Strict):
    kind: Literal["whole-space", "half-line", "half-space", "box", "ball", "polyhedron"] = "whole-space"
    normal: list[float] | None = None
    offset: float = 0.0
    lower: list[float] | None = None
    upper: list[float] | None = None
    center: list[float] | None = None
    radius: float | None = None
    normals: list[list[float]] | None = None
    offsets: list[float] | None = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = {"half-space": ("normal",), "box": ("lower", "upper"), "ball": ("center", "radius"),
                "polyhedron": ("normals", "offsets")}.get(self.kind, ())
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"domain kind {self.kind!r} requires {', '.join(missing)}")
        return self

    def build(self, dim: int) -> ConvexDomain:
        if self.kind == "whole-space":
            return ConvexDomain.whole_space(dim)
        if self.kind == "half-line":
            if dim != 1:
                raise ValueError("half-line domain needs dim 1")
            return ConvexDomain.half_line()
        if self.kind == "half-space":
            return ConvexDomain.half_space(self.normal, self.offset)
        if self.kind == "box":
            return ConvexDomain.box(self.lower, self.upper)
        if self.kind == "ball":
            return ConvexDomain.ball(self.center, self.radius)
        return ConvexDomain.polyhedron(self.normals, self.offsets)


class OperatorSpec(_Strict):
    kind: Literal["zero", "indicator", "linear", "sum"] = "zero"
    domain: DomainSpec | None = None
    matrix: list[list[float]] | float | None = None

    @model_validator(mode="after")
    def _parts(self):
        if self.kind in ("indicator", "sum") and self.domain is None:
            raise ValueError(f"operator kind {self.kind!r} requires a domain")
        if self.kind in ("linear", "sum") and self.matrix is None:
            raise ValueError(f"operator kind {self.kind!r} requires a matrix")
        return self

    def build(self, dim: int) -> MonotoneOperator:
        M = None
        if self.matrix is not None:
            M = np.asarray(self.matrix, dtype=float)
            M = M * np.eye(dim) if M.ndim == 0 else M
        if self.kind == "zero":
            return MonotoneOperator.zero(dim)
        if self.kind == "indicator":
            return MonotoneOperator.indicator(self.domain.build(dim))
        if self.kind == "linear":
            return MonotoneOperator.linear(M)
        return MonotoneOperator.sum(self.domain.build(dim), M)


class FamilySpec(_Strict):
    family: str
    params: dict[str, Vector | list[list[float]]] = Field(default_factory=dict)


class RhoSpec(_Strict):
    coef: float = 0.0
    power: float = 1.0


class PerturbationSpec(_Strict):
    rho_b: RhoSpec = Field(default_factory=RhoSpec)
    rho_sigma: RhoSpec = Field(default_factory=RhoSpec)


class ScenarioSpec(_Strict):
    dim: int = Field(1, ge=1)
    operator: OperatorSpec = Field(default_factory=OperatorSpec)
    drift: FamilySpec = Field(default_factory=lambda: FamilySpec(family="constant"))
    diffusion: FamilySpec = Field(default_factory=lambda: FamilySpec(family="constant"))
    perturbation: PerturbationSpec = Field(default_factory=PerturbationSpec)
    h: list[float] = Field(default_factory=lambda: [0.0])
    horizon: float = Field(1.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    particles: int = Field(1000, ge=1)
    replicas: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _dims(self):
        if len(self.h) != self.dim:
            raise ValueError(f"h has {len(self.h)} entries but dim is {self.dim}")
        return self


class EventSpec(_Strict):
    kind: Literal["terminal-half-space", "terminal-ball", "tube"]
    normal: list[float] | None = None
    level: float | None = None
    center: list[float] | Literal["limit", "zero"] | None = None
    radius: float | None = None

    @model_validator(mode="after")
    def _fields(self):
        need = {"terminal-half-space": ("normal", "level"), "terminal-ball": ("center", "radius"),
                "tube": ("radius",)}[self.kind]
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"event kind {self.kind!r} requires {', '.join(missing)}")
        if self.kind == "terminal-ball" and isinstance(self.center, str):
            raise ValueError("terminal-ball center must be a vector")
        return self


class ControlSpec(_Strict):
    kind: Literal["zero", "constant", "ramp", "sinusoid", "csv"] = "zero"
    value: list[float] | None = None
    start: list[float] | None = None
    stop: list[float] | None = None
    amplitude: list[float] | None = None
    frequency: float = 1.0
    phase: float = 0.0
    path: str | None = None

    @model_validator(mode="after")
    def _fields(self):
        need = {"constant": ("value",), "ramp": ("start", "stop"), "sinusoid": ("amplitude",),
                "csv": ("path",)}.get(self.kind, ())
        missing = [k for k in need if getattr(self, k) is None]
        if missing:
            raise ValueError(f"control kind {self.kind!r} requires {', '.join(missing)}")
        return self

    def build(self, grid: TimeGrid, dim: int) -> ControlPath:
        if self.kind == "zero":
            return ControlPath.zeros(grid, dim)
        if self.kind == "constant":
            return ControlPath.constant(grid, self.value)
        if self.kind == "ramp":
            return ControlPath.ramp(grid, self.start, self.stop)
        if self.kind == "sinusoid":
            return ControlPath.sinusoid(grid, self.amplitude, self.frequency, self.phase)
        return ControlPath.from_csv(self.path, grid)


class FunctionalSpec(_Strict):
    kind: Literal["zero", "capped-square", "escape-reward"] = "zero"
    scale: float = 1.0
    cap: float = 1.0


class RateOptions(_Strict):
    segments: int = Field(50, ge=1)
    restarts: int = Field(2, ge=0)
    maxiter: int = Field(500, ge=1)


class ExperimentSpec(_Strict):
    kind: Literal[EXPERIMENT_KINDS]  # type: ignore[valid-type]
    eps: float = Field(0.1, ge=0, le=1)
    eps_grid: list[float] | None = None
    lambda_power: float = Field(0.25, gt=0, lt=0.5)
    lam: float | None = Field(None, gt=0, le=1)
    regime: Literal["LDP", "MDP"] = "LDP"
    event: EventSpec | None = None
    control: ControlSpec = Field(default_factory=ControlSpec)
    functional: FunctionalSpec = Field(default_factory=FunctionalSpec)
    tolerance: float = Field(0.1, gt=0)
    fit: Literal["linear", "log-corrected"] = "log-corrected"
    save_particles: int = Field(10, ge=0)
    rate: RateOptions = Field(default_factory=RateOptions)

    @field_validator("eps_grid")
    @classmethod
    def _grid(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("eps_grid must not be empty")
        if any(not 0 < e < 1 for e in v):
            raise ValueError("eps_grid values must lie strictly inside (0, 1)")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps_grid must be strictly decreasing (eps -> 0 along the grid)")
        return v

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind in SCAN_KINDS and self.eps_grid is None:
            raise ValueError(f"experiment kind {self.kind!r} requires eps_grid")
        if self.kind in ("ldp", "mdp", "rate") and self.event is None:
            raise ValueError(f"experiment kind {self.kind!r} requires an event")
        return self


class OutputSpec(_Strict):
    directory: str = "out"
    create: bool = False
    formats: list[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class Config(_Strict):
    seed: int = Field(0, ge=0)
    scenario: ScenarioSpec = Field(default_factory=ScenarioSpec)
    experiment: ExperimentSpec
    output: OutputSpec = Field(default_factory=OutputSpec)

    def canonical(self) -> dict:
        """All fields with defaults filled in, as plain JSON types."""
        return self.model_dump(mode="json")

    def canonical_text(self) -> str:
        return json.dumps(self.canonical(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        """sha256 of the canonical config without the output block."""
        doc = self.canonical()
        doc.pop("output")
        return hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    # -- construction -------------------------------------------------------------

    def grid(self) -> TimeGrid:
        return TimeGrid.from_step(self.scenario.horizon, self.scenario.dt)

    def build_scenario(self) -> Scenario:
        s = self.scenario
        coeffs = make_coefficients(s.drift.family, s.diffusion.family, s.dim, s.drift.params, s.diffusion.params)
        pb, ps = s.perturbation.rho_b, s.perturbation.rho_sigma
        if pb.coef or ps.coef:
            coeffs = coeffs.with_perturbation(PowerRate(pb.coef, pb.power), PowerRate(ps.coef, ps.power))
        return Scenario(s.operator.build(s.dim), coeffs, s.h, self.grid(), particles=s.particles,
                        replicas=s.replicas, seed=self.seed)


def _loc(loc) -> str:
    return ".".join(str(p) for p in loc if not str(p).startswith(("function-", "literal")))


def parse_config(text: str, seed: int | None = None, out: str | None = None) -> Config:
    """Parse and validate YAML config text.

    ``seed``/``out`` override the corresponding keys. Raises
    :class:`ConfigError` listing every problem with the dotted path of the
    offending key.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<document>", f"not valid YAML: {exc}")]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([("<document>", "top level must be a mapping")])
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw.setdefault("output", {})
        if not isinstance(raw["output"], dict):
            raise ConfigError([("output", "must be a mapping")])
        raw["output"]["directory"] = out
    try:
        cfg = Config.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError([(_loc(e["loc"]) or "<document>", e["msg"]) for e in exc.errors()]) from None
    errors = []
    try:
        op = cfg.scenario.operator.build(cfg.scenario.dim)
    except (ValueError, DomainEmptyError) as exc:
        raise ConfigError([("scenario.operator", str(exc))]) from None
    if not bool(op.closure_domain.contains(np.asarray(cfg.scenario.h), tol=1e-12)):
        errors.append(("scenario.h", f"initial point {cfg.scenario.h} lies outside the closure of the "
                                      "operator domain"))
    try:
        cfg.grid()
    except ValueError as exc:
        errors.append(("scenario.dt", str(exc)))
    fam = cfg.scenario
    try:
        make_coefficients(fam.drift.family, fam.diffusion.family, fam.dim, fam.drift.params, fam.diffusion.params)
    except (ValueError, TypeError) as exc:
        errors.append(("scenario.drift", str(exc)))
    ex = cfg.experiment
    if ex.kind == "mdp" and ex.eps_grid:
        for e in ex.eps_grid:
            lam = e**ex.lambda_power
            if e / lam**2 > 1:
                errors.append(("experiment.lambda_power", f"eps/lambda^2 exceeds 1 at eps={e}"))
                break
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, seed: int | None = None, out: str | None = None) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), seed=seed, out=out)


def config_schema() -> dict:
    return Config.model_json_schema()
