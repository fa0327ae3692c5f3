"""Experiment configuration: strict JSON schema and object construction."""

import hashlib
import json
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import domain as dm
from .errors import DomainError, EllipticityError, ShapeError
from .model import DiffusionField, GainTuple, SystemModel

Matrix = List[List[float]]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, strict=True)


def _increasing(v, name):
    if v is not None and any(b <= a for a, b in zip(v, v[1:])):
        raise ValueError(f"{name} must be strictly increasing")
    return v


class ConstantSigma(_Strict):
    kind: Literal["constant"]
    matrix: Matrix
    kappa: float = Field(1e-10, gt=0)


class AffineSigma(_Strict):
    kind: Literal["diagonal_affine"]
    c: List[float]
    s: List[float]
    kappa: float = Field(1e-10, gt=0)


class ModelSpec(_Strict):
    A: Matrix
    B: List[Matrix]
    sigma: Annotated[Union[ConstantSigma, AffineSigma], Field(discriminator="kind")]


class IntervalSpec(_Strict):
    kind: Literal["interval"]
    a: float
    b: float


class BoxSpec(_Strict):
    kind: Literal["box"]
    lower: List[float]
    upper: List[float]


class BallSpec(_Strict):
    kind: Literal["ball"]
    center: List[float]
    radius: float


DomainSpec = Annotated[Union[IntervalSpec, BoxSpec, BallSpec], Field(discriminator="kind")]


class SdeSection(_Strict):
    epsilon: float = Field(gt=0)
    dt: float = Field(gt=0)
    t_max: float = Field(gt=0)
    n_traj: int = Field(10000, ge=100)
    T_list: Optional[List[float]] = None
    stream_id: int = Field(0, ge=0)
    n_paths: int = Field(1, ge=1)
    deterministic: bool = False
    exit_correction: Literal["linear", "bridge"] = "linear"

    @field_validator("T_list")
    @classmethod
    def _times(cls, v):
        return _increasing(v, "T_list")


class EigenSection(_Strict):
    points_per_axis: Union[int, List[int]]
    epsilon_list: List[float]
    tol: Optional[float] = None
    refine_tol: float = 0.02

    @field_validator("epsilon_list")
    @classmethod
    def _decreasing(cls, v):
        if not v or any(b >= a for a, b in zip(v, v[1:])) or min(v) <= 0:
            raise ValueError("epsilon_list must be positive and strictly decreasing")
        return v


class RateSection(_Strict):
    T_list: List[float] = [5.0, 10.0, 20.0, 40.0]
    n_per_T: int = Field(64, ge=1)
    margin: float = Field(0.0, ge=0)
    levels: int = Field(7, ge=3)
    converge_tol: float = 0.05
    pinned: bool = False
    pinned_points: int = Field(5, ge=3)
    lemma3_delta: Optional[float] = None

    @field_validator("T_list")
    @classmethod
    def _sweep(cls, v):
        _increasing(v, "T_list")
        if len(v) < 3:
            raise ValueError("T_list needs at least 3 entries")
        return v


class SearchSection(_Strict):
    lower: List[Matrix]
    upper: List[Matrix]
    mask: Optional[List[List[List[bool]]]] = None
    resolution: float = Field(gt=0)
    cap: int = 10000
    refine: bool = True
    budget: int = 200
    rate: Optional[RateSection] = None
    rank_epsilon: Optional[float] = None
    objective: Literal["variational", "eigen"] = "variational"


class LemmaSection(_Strict):
    epsilon: float = Field(gt=0)
    delta: float = Field(gt=0)
    gamma_per_T: float = Field(gt=0)
    T: float = Field(gt=0)
    dt: float = Field(1e-3, gt=0)
    n_traj: int = Field(100000, ge=100)
    n_per_T: int = 64
    stream_id: int = 1_000_000_000


class VerifySection(_Strict):
    epsilon: float = Field(gt=0)
    dt: float = Field(gt=0)
    n_traj: int = Field(ge=100)
    T_list: List[float]
    points_per_axis: Union[int, List[int]]
    epsilon_list: List[float]
    rate: RateSection = RateSection()
    lemma: Optional[LemmaSection] = None
    stream_id: int = 0

    @field_validator("T_list")
    @classmethod
    def _times(cls, v):
        return _increasing(v, "T_list")


class ExperimentConfig(_Strict):
    model: ModelSpec
    domain: DomainSpec
    gains: Optional[List[Matrix]] = None
    x0: Optional[List[float]] = None
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: Optional[str] = None
    sde: Optional[SdeSection] = None
    eigen: Optional[EigenSection] = None
    rate: Optional[RateSection] = None
    search: Optional[SearchSection] = None
    verify: Optional[VerifySection] = None

    def canonical(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _format_pydantic(exc):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(text):
    """Parse and validate config JSON text; raises ConfigError."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<config>: invalid JSON: {exc}") from exc
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_pydantic(exc)) from exc
    build(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


class Built:
    """Numerical objects constructed from a validated config."""

    def __init__(self, model, dom, gains, x0):
        self.model = model
        self.dom = dom
        self.gains = gains
        self.x0 = x0


def build(cfg):
    try:
        s = cfg.model.sigma
        if s.kind == "constant":
            sigma = DiffusionField.constant(s.matrix, s.kappa)
        else:
            sigma = DiffusionField.diagonal_affine(s.c, s.s, s.kappa)
    except (ShapeError, EllipticityError, ValueError) as exc:
        raise ConfigError(f"model.sigma: {exc}") from exc
    try:
        model = SystemModel(cfg.model.A, cfg.model.B, sigma)
    except (ShapeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    try:
        d = cfg.domain
        if d.kind == "interval":
            dom = dm.interval(d.a, d.b)
        elif d.kind == "box":
            dom = dm.box(d.lower, d.upper)
        else:
            dom = dm.ball(d.center, d.radius)
    except (DomainError, ShapeError) as exc:
        raise ConfigError(f"domain: {exc}") from exc
    if dom.d != model.d:
        raise ConfigError(f"domain: dimension {dom.d} does not match model dimension {model.d}")
    if cfg.gains is None:
        gains = GainTuple.zeros(model)
    else:
        gains = GainTuple(tuple(cfg.gains))
        from .model import closed_loop_matrix

        try:
            closed_loop_matrix(model, gains)
        except ShapeError as exc:
            raise ConfigError(f"gains: {exc}") from exc
    if cfg.x0 is None:
        x0 = np.array(dom.center, dtype=float)
    else:
        x0 = np.asarray(cfg.x0, dtype=float)
        if x0.size != model.d:
            raise ConfigError(f"x0: has dimension {x0.size}, model has {model.d}")
        if not bool(dom.contains(x0)):
            raise ConfigError(f"x0: {x0.tolist()} is not inside the domain")
    if cfg.sde is not None and cfg.sde.T_list is not None and cfg.sde.T_list[-1] > cfg.sde.t_max:
        raise ConfigError("sde.T_list: last entry exceeds sde.t_max")
    if cfg.search is not None:
        sr = cfg.search
        if len(sr.lower) != model.m or len(sr.upper) != model.m:
            raise ConfigError(f"search: bounds must list {model.m} gain matrices")
        for i, (lo, r) in enumerate(zip(sr.lower, model.input_dims)):
            if np.array(lo, ndmin=2).shape != (r, model.d):
                raise ConfigError(f"search.lower[{i}]: expected shape {(r, model.d)}")
    return Built(model, dom, gains, x0)
