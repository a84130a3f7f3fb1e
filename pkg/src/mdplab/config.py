"""Run configuration: TOML parsing, schema validation, and object builders.

A config file has the sections ``[model]``, ``[noise]``, ``[scale]``,
``[solver]``, ``[experiment]``, ``[seed]`` and ``[output]``.  Unknown keys are
rejected, and every schema violation is reported in one error.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .model import ModelSpec
from .models import LinearConfig, Nse2dConfig, SabraConfig, build_linear, build_nse2d, build_sabra
from .noise import Control, JumpCoefficient, MarkSpace
from .solvers import DEFAULT_EPS_CEILING
from .streams import stream
from .timegrid import TimeGrid


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    kind: Literal["nse2d", "sabra", "linear-test"]
    # linear-test
    eigenvalues: list[float] = Field(default_factory=lambda: [1.0])
    # nse2d
    K: int = 4
    truncation: Literal["square", "disk"] = "square"
    max_triads: int = 2_000_000
    # shared by nse2d and sabra
    visc: Optional[float] = None
    # sabra
    n_shells: int = 16
    k0: float = 1.0
    lam: float = 2.0
    coeff_a: float = 1.0
    coeff_b: float = -0.5
    coeff_c: float = -0.5
    boundary: Literal["zero", "broken"] = "zero"
    # initial state: explicit, or random with the given H-norm
    u0: Optional[list[float]] = None
    u0_norm: float = 1.0

    @field_validator("eigenvalues")
    @classmethod
    def _positive(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError("eigenvalues must be a non-empty list of positive numbers")
        return v

    @field_validator("visc")
    @classmethod
    def _visc(cls, v):
        if v is not None and not v > 0:
            raise ValueError("visc must be positive")
        return v


class NoiseSection(_Section):
    # "vectors": G(u, z_k) = g_k + s_k u with g_k = g_vectors[k]
    # "per-coordinate": one mark per coordinate, G(u, z_i) = g_amplitude e_i + s_i u
    g_kind: Literal["vectors", "per-coordinate"] = "per-coordinate"
    mark_weights: list[float] = Field(default_factory=lambda: [1.0])
    g_vectors: Optional[list[list[float]]] = None
    g_amplitude: float = 1.0
    g_multipliers: Optional[list[float]] = None

    @field_validator("mark_weights")
    @classmethod
    def _weights(cls, v):
        if not v or any(x <= 0 for x in v):
            raise ValueError("mark_weights must be a non-empty list of positive numbers")
        return v

    @model_validator(mode="after")
    def _vectors(self):
        if self.g_kind == "vectors":
            if self.g_vectors is None:
                raise ValueError("g_kind='vectors' requires g_vectors")
            if len(self.g_vectors) != len(self.mark_weights):
                raise ValueError("g_vectors needs one row per mark weight")
        return self


class ScaleSection(_Section):
    gamma: float = 0.3
    epsilon: list[float] = Field(default_factory=lambda: [2.0 ** -k for k in range(4, 11)])
    eps_ceiling: float = DEFAULT_EPS_CEILING
    mode: Literal["mdp", "clt"] = "mdp"

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v):
        if not 0.0 < v < 0.5:
            raise ValueError("gamma must lie in (0, 0.5)")
        return v

    @model_validator(mode="after")
    def _grid(self):
        eps = self.epsilon
        if not eps:
            raise ValueError("epsilon grid must be non-empty")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilon grid must be strictly decreasing")
        if any(e <= 0 or e > self.eps_ceiling for e in eps):
            raise ValueError(f"epsilon values must lie in (0, eps_ceiling={self.eps_ceiling}]")
        return self


class SolverSection(_Section):
    T: float = 1.0
    h: float = 1e-3

    @model_validator(mode="after")
    def _positive(self):
        if not (self.T > 0 and self.h > 0):
            raise ValueError("T and h must be positive")
        if self.h > self.T:
            raise ValueError("h must not exceed T")
        return self


class ExperimentSection(_Section):
    name: Literal["lln", "mdp1", "mdp2", "tail"] = "lln"
    replicas: int = Field(10_000, ge=1)
    chunk_size: int = Field(500, ge=1)
    thresholds: dict[str, Union[bool, float, None]] = Field(default_factory=dict)
    m: float = Field(1.0, gt=0)
    target: Optional[list[float]] = None
    delta: float = Field(0.25, gt=0)
    tilt_bound: float = Field(10.0, ge=1)
    phi: float = 1.0  # constant control phi(t, z) for mdp1 / mdp2 / skeleton
    freqs: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    rho: Optional[list[float]] = None
    beta: float = Field(1.0, gt=0)
    n_samples: int = Field(1000, ge=1)  # assumption checks


class SeedSection(_Section):
    master: int = Field(0, ge=0)


class OutputSection(_Section):
    directory: str = "out"
    formats: list[Literal["jsonl", "csv"]] = Field(default_factory=lambda: ["jsonl", "csv"])


class RunConfig(_Section):
    model: ModelSection
    noise: NoiseSection = Field(default_factory=NoiseSection)
    scale: ScaleSection = Field(default_factory=ScaleSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    seed: SeedSection = Field(default_factory=SeedSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return self.model_dump(mode="json", exclude_none=True)

    @property
    def run_id(self) -> str:
        return run_id(self)


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"].removeprefix("Value error, ")
        out.append(f"{loc}: {msg}")
    return out


def config_from_dict(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        violations = _format_errors(err)
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(violations), violations)


def parse_config_text(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as err:
        # tomli reports "(at line L, column C)", which covers duplicate keys
        raise ConfigError(f"cannot parse config: {err}", [str(err)]) from None
    return config_from_dict(data)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}", [f"missing file {path}"])
    return parse_config_text(path.read_text(encoding="utf-8"))


def serialize(config: RunConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def canonical_dict(config: RunConfig) -> dict:
    """Config contents that define a run: everything except the output directory."""
    data = config.to_dict()
    data["output"].pop("directory", None)
    return data


def run_id(config: RunConfig) -> str:
    """Content hash of the canonical config; equal ids imply equal configs."""
    canon = json.dumps(canonical_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# builders


def build_model(config: RunConfig) -> ModelSpec:
    m = config.model
    if m.kind == "linear-test":
        return build_linear(LinearConfig(tuple(m.eigenvalues)))
    if m.kind == "nse2d":
        visc = 0.05 if m.visc is None else m.visc
        return build_nse2d(Nse2dConfig(K=m.K, visc=visc, truncation=m.truncation,
                                       max_triads=m.max_triads))
    visc = 1e-3 if m.visc is None else m.visc
    return build_sabra(SabraConfig(n_shells=m.n_shells, k0=m.k0, lam=m.lam, visc=visc,
                                   coeff_a=m.coeff_a, coeff_b=m.coeff_b, coeff_c=m.coeff_c,
                                   boundary=m.boundary))


def build_noise(config: RunConfig, model: ModelSpec) -> tuple[MarkSpace, JumpCoefficient]:
    nz = config.noise
    n = model.dim
    if nz.g_kind == "vectors":
        vectors = np.asarray(nz.g_vectors, dtype=float)
        if vectors.shape != (len(nz.mark_weights), n):
            raise ConfigError("noise.g_vectors has the wrong shape",
                              [f"noise.g_vectors: expected {len(nz.mark_weights)} x {n}, "
                               f"got {vectors.shape}"])
        weights = np.asarray(nz.mark_weights, dtype=float)
    else:
        vectors = nz.g_amplitude * np.eye(n)
        w = np.asarray(nz.mark_weights, dtype=float)
        if w.size not in (1, n):
            raise ConfigError("noise.mark_weights has the wrong length",
                              [f"noise.mark_weights: expected 1 or {n} entries, got {w.size}"])
        weights = np.broadcast_to(w, (n,)).copy()
    mult = None
    if nz.g_multipliers is not None:
        mult = np.asarray(nz.g_multipliers, dtype=float)
        if mult.size == 1:
            mult = np.full(weights.size, float(mult[0]))
        if mult.size != weights.size:
            raise ConfigError("noise.g_multipliers has the wrong length",
                              [f"noise.g_multipliers: expected 1 or {weights.size} entries"])
    space = MarkSpace(weights)
    return space, JumpCoefficient.affine(space, vectors, mult)


def build_u0(config: RunConfig, model: ModelSpec) -> np.ndarray:
    if config.model.u0 is not None:
        return model.check_state(np.asarray(config.model.u0, dtype=float), "model.u0")
    rng = stream(config.seed.master, 0, "u0")
    x = rng.standard_normal(model.dim) / np.sqrt(model.a_eigenvalues)
    return config.model.u0_norm * x / np.linalg.norm(x)


def build_grid(config: RunConfig) -> TimeGrid:
    return TimeGrid.uniform(config.solver.T, config.solver.h)


def build_phi(config: RunConfig, grid: TimeGrid, space: MarkSpace) -> Control:
    return Control(grid, np.full((grid.M, space.K), float(config.experiment.phi)))


def build_experiment(config: RunConfig):
    """ExperimentConfig plus the model objects it references."""
    from .experiments import ExperimentConfig

    model = build_model(config)
    space, g = build_noise(config, model)
    ex = config.experiment
    target = None if ex.target is None else np.asarray(ex.target, dtype=float)
    return ExperimentConfig(
        name=ex.name, model=model, g=g, space=space, u0=build_u0(config, model),
        T=config.solver.T, h=config.solver.h, eps_grid=tuple(config.scale.epsilon),
        gamma=config.scale.gamma, scale_mode=config.scale.mode, replicas=ex.replicas,
        m=ex.m, target=target, delta=ex.delta, tilt_bound=ex.tilt_bound,
        master_seed=config.seed.master, thresholds=dict(ex.thresholds),
        chunk_size=ex.chunk_size, eps_ceiling=config.scale.eps_ceiling,
        echo=canonical_dict(config))
