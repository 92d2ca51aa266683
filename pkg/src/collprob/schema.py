"""Versioned JSON formats for scenarios, candidate batches and risk reports.

Validation errors are reported with the JSON path and the line/column of the
offending value in the source text.
"""
from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import CollprobError, SchemaError
from .gaussian import PoseVelocityGaussian
from .geometry import Shape
from .prediction import DEFAULT_SHAPE, AgentSpec, GaussianTrajectory, ScenarioSpec, forecast_uncertainty

FORMAT_VERSION = 1

Vector5 = list[float]
Matrix5 = list[list[float]]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)


class ShapeModel(_Model):
    length: float = Field(DEFAULT_SHAPE.length, gt=0)
    width: float = Field(DEFAULT_SHAPE.width, gt=0)


def _check_vector(v, n=5):
    if len(v) != n:
        raise ValueError(f"expected {n} values, got {len(v)}")
    return v


def _check_matrix(m, n=5):
    if len(m) != n or any(len(r) != n for r in m):
        raise ValueError(f"expected a {n}x{n} matrix")
    return m


class AgentModel(_Model):
    """Initial state of one agent: mean and covariance over (x, y, theta, vx, vy)."""

    name: str = ""
    shape: ShapeModel = ShapeModel()
    mean: Vector5
    cov: Matrix5

    _v = field_validator("mean")(_check_vector)
    _m = field_validator("cov")(_check_matrix)

    @model_validator(mode="after")
    def _valid_gaussian(self):
        try:
            PoseVelocityGaussian(self.mean, self.cov)
        except CollprobError as exc:
            raise ValueError(f"cov: {exc}") from None
        return self


class ScenarioModel(_Model):
    format_version: Literal[1]
    name: str = ""
    dt: float = Field(gt=0)
    horizon: float = Field(ge=0)
    orientation_enabled: bool = False
    ego: AgentModel
    obstacles: list[AgentModel] = []
    meta: dict[str, Any] = {}


class TrajectoryModel(_Model):
    """Explicit per-step states; covariances default to zero (a planned intention)."""

    name: str = ""
    shape: ShapeModel = ShapeModel()
    states: list[Vector5] = Field(min_length=1)
    covs: Optional[list[Matrix5]] = None

    @field_validator("states")
    @classmethod
    def _states(cls, v):
        for s in v:
            _check_vector(s)
        return v

    @model_validator(mode="after")
    def _covs(self):
        if self.covs is not None:
            if len(self.covs) != len(self.states):
                raise ValueError("covs must have one matrix per state")
            for c in self.covs:
                _check_matrix(c)
        return self


class ForecastModel(_Model):
    """Obstacle forecast from an initial mean with symmetric position/velocity uncertainty."""

    name: str = ""
    shape: ShapeModel = ShapeModel()
    initial: Vector5
    sigma_pos: float = Field(0.3, gt=0)
    sigma_v: float = Field(0.15, gt=0)

    _v = field_validator("initial")(_check_vector)


class BatchConfigModel(_Model):
    quad_order: int = Field(51, ge=2)
    theta_enabled: bool = True
    n_sigma: float = Field(3.0, gt=0)


class BatchModel(_Model):
    format_version: Literal[1]
    method: Literal["overlap-max", "overlap-independent", "boundary-crossing", "conservative-obb"] = "boundary-crossing"
    dt: float = Field(gt=0)
    candidates: list[TrajectoryModel] = Field(min_length=1)
    obstacles: list[Union[ForecastModel, TrajectoryModel]] = []
    config: BatchConfigModel = BatchConfigModel()
    meta: dict[str, Any] = {}


class CandidateResult(_Model):
    index: int
    combined: float
    per_obstacle: list[float]
    feasible: Optional[bool] = None


class ReportModel(_Model):
    format_version: Literal[1]
    method: str
    wall_time_s: float
    candidate_count: int
    feasible_count: Optional[int] = None
    ranking: list[int]
    candidates: list[CandidateResult]


# ------------------------------------------------------------ source locations


def _value_positions(text: str) -> dict[tuple, int]:
    """Offsets of every JSON value in ``text``, keyed by its path."""
    decoder = json.JSONDecoder()
    ws = " \t\n\r"
    out: dict[tuple, int] = {}

    def skip(i):
        while i < len(text) and text[i] in ws:
            i += 1
        return i

    def value(i, path):
        i = skip(i)
        out[path] = i
        ch = text[i]
        if ch == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = json.decoder.scanstring(text, skip(i) + 1)
                i = skip(i) + 1  # ':'
                i = skip(value(i, path + (key,)))
                if text[i] == "}":
                    return i + 1
                i += 1  # ','
        if ch == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(value(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        _, end = decoder.raw_decode(text, i)
        return end

    value(0, ())
    return out


def _line_col(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    return line, offset - (text.rfind("\n", 0, offset) + 1) + 1


def _schema_error(text: str, source: str, exc: ValidationError) -> SchemaError:
    positions = None
    messages = []
    first_loc = None
    for err in exc.errors():
        loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p in ("ForecastModel", "TrajectoryModel")))
        if positions is None:
            positions = _value_positions(text)
        probe = loc
        while probe not in positions and probe:
            probe = probe[:-1]
        line, col = _line_col(text, positions.get(probe, 0))
        path = ".".join(str(p) for p in loc) or "<root>"
        where = f"{source}:{line}:{col}"
        first_loc = first_loc or where
        messages.append(f"{where}: {path}: {err['msg']}")
    return SchemaError("; ".join(messages), location=None)


def parse(model: type[BaseModel], text: str, source: str = "<string>"):
    """Validate JSON ``text`` against ``model`` with line-precise errors."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise _schema_error(text, source, exc) from None


def load(model: type[BaseModel], path) -> BaseModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from None
    return parse(model, text, str(path))


_NUMBER_LIST = re.compile(r"\[\s*([-+0-9.eE]+(?:,\s*[-+0-9.eE]+)*)\s*\]")


def dumps(model: BaseModel) -> str:
    """Indented JSON with innermost numeric arrays kept on one line; floats use shortest repr."""
    text = json.dumps(model.model_dump(mode="json"), indent=2)
    return _NUMBER_LIST.sub(lambda m: "[" + ", ".join(x.strip() for x in m.group(1).split(",")) + "]", text) + "\n"


# ------------------------------------------------------------ conversions


def _agent_to_model(a: AgentSpec) -> AgentModel:
    return AgentModel(
        name=a.name,
        shape=ShapeModel(length=a.shape.length, width=a.shape.width),
        mean=[float(x) for x in a.initial.mean],
        cov=[[float(x) for x in row] for row in a.initial.cov],
    )


def _agent_from_model(m: AgentModel) -> AgentSpec:
    return AgentSpec(PoseVelocityGaussian(m.mean, m.cov), Shape(m.shape.length, m.shape.width), m.name)


def scenario_to_model(spec: ScenarioSpec) -> ScenarioModel:
    return ScenarioModel(
        format_version=FORMAT_VERSION,
        name=spec.name,
        dt=spec.dt,
        horizon=spec.horizon,
        orientation_enabled=spec.orientation_enabled,
        ego=_agent_to_model(spec.ego),
        obstacles=[_agent_to_model(o) for o in spec.obstacles],
        meta=dict(spec.meta),
    )


def scenario_from_model(m: ScenarioModel) -> ScenarioSpec:
    return ScenarioSpec(
        _agent_from_model(m.ego),
        tuple(_agent_from_model(o) for o in m.obstacles),
        m.dt,
        m.horizon,
        m.orientation_enabled,
        m.name,
        dict(m.meta),
    )


def dump_scenario(spec: ScenarioSpec) -> str:
    return dumps(scenario_to_model(spec))


def load_scenario(path) -> ScenarioSpec:
    return scenario_from_model(load(ScenarioModel, path))


def _trajectory_from_model(m: TrajectoryModel, dt: float) -> GaussianTrajectory:
    covs = m.covs if m.covs is not None else [np.zeros((5, 5))] * len(m.states)
    states = tuple(PoseVelocityGaussian(s, c) for s, c in zip(m.states, covs))
    return GaussianTrajectory(dt, states, Shape(m.shape.length, m.shape.width))


def _trajectory_to_model(t: GaussianTrajectory, name: str = "", with_covs: bool = True) -> TrajectoryModel:
    covs = t.covs()
    keep = with_covs and np.any(covs != 0.0)
    return TrajectoryModel(
        name=name,
        shape=ShapeModel(length=t.shape.length, width=t.shape.width),
        states=[[float(x) for x in s] for s in t.means()],
        covs=[[[float(x) for x in r] for r in c] for c in covs] if keep else None,
    )


def batch_from_model(m: BatchModel):
    """``(CandidateBatch, RiskConfig)`` for a validated batch file."""
    from .riskeval import CandidateBatch, RiskConfig

    candidates = [_trajectory_from_model(c, m.dt) for c in m.candidates]
    horizon = m.dt * (len(m.candidates[0].states) - 1)
    obstacles = []
    for o in m.obstacles:
        if isinstance(o, ForecastModel):
            obstacles.append(
                forecast_uncertainty(o.initial, m.dt, horizon, o.sigma_pos, o.sigma_v, Shape(o.shape.length, o.shape.width))
            )
        else:
            obstacles.append(_trajectory_from_model(o, m.dt))
    cfg = RiskConfig(m.config.quad_order, m.config.theta_enabled, m.config.n_sigma)
    return CandidateBatch(candidates, obstacles, m.method), cfg


def batch_to_model(batch, config=None, meta=None) -> BatchModel:
    from .riskeval import RiskConfig

    config = config or RiskConfig()
    return BatchModel(
        format_version=FORMAT_VERSION,
        method=batch.method,
        dt=batch.candidates[0].dt,
        candidates=[_trajectory_to_model(c) for c in batch.candidates],
        obstacles=[_trajectory_to_model(o) for o in batch.obstacles],
        config=BatchConfigModel(quad_order=config.quadrature_order, theta_enabled=config.theta_enabled, n_sigma=config.n_sigma),
        meta=meta or {},
    )


def report_to_model(report, ranking) -> ReportModel:
    feasible = report.feasible
    return ReportModel(
        format_version=FORMAT_VERSION,
        method=report.method,
        wall_time_s=report.wall_time,
        candidate_count=len(report),
        feasible_count=report.feasible_count,
        ranking=list(ranking),
        candidates=[
            CandidateResult(
                index=i,
                combined=float(report.combined[i]),
                per_obstacle=[float(p) for p in report.per_obstacle[i]],
                feasible=None if feasible is None else bool(feasible[i]),
            )
            for i in range(len(report))
        ],
    )


def cut_in_batch_model(params=None, method: str = "boundary-crossing") -> BatchModel:
    """The cut-in fixture as a batch file: explicit candidates, forecast obstacles."""
    from .riskeval import CutInParams, _candidate

    p = params or CutInParams()
    candidates = [
        _trajectory_to_model(_candidate(a, o, p), name=f"a={a:+.3f} offset={o:+.3f}")
        for a in p.accelerations
        for o in p.lateral_offsets
    ]
    obstacles = []
    for name, start, speed, lateral in (
        ("merging", p.merge_start, p.merge_speed, p.merge_lateral_speed),
        ("lead", p.lead_start, p.lead_speed, 0.0),
        ("adjacent", p.adjacent_start, p.adjacent_speed, 0.0),
    ):
        heading = math.atan2(lateral, speed)
        obstacles.append(
            ForecastModel(
                name=name,
                initial=[float(start[0]), float(start[1]), heading, float(speed), float(lateral)],
                sigma_pos=p.sigma_pos,
                sigma_v=p.sigma_v,
            )
        )
    return BatchModel(
        format_version=FORMAT_VERSION,
        method=method,
        dt=p.dt,
        candidates=candidates,
        obstacles=obstacles,
        meta={"fixture": "cut-in", "description": "ego in the right lane, a vehicle merging in from the left ahead"},
    )
