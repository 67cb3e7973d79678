"""Experiment configuration: a versioned JSON document validated by pydantic."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..algorithms import Variant

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised with every problem found in a config, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("\n".join(problems))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ObjectiveConfig(_Strict):
    kind: Literal["ridge", "logistic", "mlp"] = "ridge"
    lam: float = Field(0.1, ge=0.0)
    # linear models: how many leading features the client block sees
    n_client_features: int = Field(8, ge=1)
    # MLP layer widths and the number of client-side layers
    widths: list[int] = Field(default_factory=lambda: [2, 8, 2])
    cut: int = Field(1, ge=1)
    init_scale: float = Field(0.0, ge=0.0)


class DataConfig(_Strict):
    N: int = Field(10, ge=1)
    beta: Union[float, Literal["iid"]] = 0.1
    classes: int = Field(10, ge=1)
    samples_per_class: int = Field(100, ge=1)
    dim: int = Field(20, ge=1)
    margin: float = 1.0
    blob_std: float = Field(1.0, ge=0.0)
    balanced: bool = False
    target_noise: float = Field(0.1, ge=0.0)
    label_shift: float = Field(1.0, ge=0.0)

    @model_validator(mode="after")
    def _beta_positive(self):
        if self.beta != "iid" and not self.beta > 0:
            raise ValueError("data.beta must be > 0 or 'iid'")
        return self


class ScheduleConfig(_Strict):
    kind: Literal["constant", "diminishing"] = "constant"
    eta: float = Field(0.01, gt=0.0)
    beta_ss: float | None = Field(None, gt=0.0)
    gamma: float | None = Field(None, gt=0.0)
    tau_ref: int | None = Field(None, ge=1)


class EmitConfig(_Strict):
    trace_csv: bool = True
    bounds_json: bool = True
    summary_json: bool = True


class ExperimentConfig(_Strict):
    schema_version: Literal[1]
    name: str = "experiment"
    variant: Variant = Variant.SFL_V1
    T: int = Field(200, ge=1)
    b_s: int = Field(128, ge=1)
    E: int = Field(5, ge=1)
    # None: derive tau from E local epochs over the largest shard
    tau: int | None = Field(None, ge=1)
    tau_tilde: int | None = Field(None, ge=1)
    q: Union[float, list[float], None] = None
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    partial_form: Literal["delta", "model"] = "delta"
    server_weighting: Literal["unit", "weighted"] = "unit"
    v2_order: Literal["client_major", "iteration_major"] = "client_major"
    redraw_order: bool = True
    sampling: Literal["replacement", "epoch"] = "replacement"
    record_drift: bool = False
    strict_stepsize: bool = False
    objective: ObjectiveConfig = Field(default_factory=ObjectiveConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    seeds: list[int] | None = None
    # dotted config path -> values, e.g. {"data.beta": ["iid", 0.1], "q": [1.0, 0.5]}
    sweep: dict[str, list] = Field(default_factory=dict)
    sigma_samples: int = Field(20, ge=2)
    out_dir: str = "out"
    emit: EmitConfig = Field(default_factory=EmitConfig)

    @model_validator(mode="after")
    def _cross_field(self):
        problems = cross_field_problems(self.model_dump(mode="json"))
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def with_updates(self, updates: dict) -> "ExperimentConfig":
        """Copy with dotted-path overrides, revalidated."""
        doc = self.model_dump(mode="json")
        for path, value in updates.items():
            node = doc
            keys = path.split(".")
            for k in keys[:-1]:
                node = node[k]
            if keys[-1] not in node:
                raise ConfigError([f"{path}: unknown config field"])
            node[keys[-1]] = value
        return parse_config(doc)


def cross_field_problems(doc: dict) -> list[str]:
    """Constraints spanning several fields; tolerant of a partially invalid doc."""
    problems = []
    variant = doc.get("variant", Variant.SFL_V1.value)
    if doc.get("tau_tilde") is not None and variant != Variant.SFL_V1.value:
        problems.append("tau_tilde only applies to variant SFL_V1")
    data = doc.get("data") if isinstance(doc.get("data"), dict) else {}
    obj = doc.get("objective") if isinstance(doc.get("objective"), dict) else {}
    N = data.get("N", 10)
    q = doc.get("q")
    qs = [] if q is None else (q if isinstance(q, list) else [q])
    try:
        if any(not 0.0 < float(v) <= 1.0 for v in qs):
            problems.append("q: participation probabilities must lie in (0, 1]")
    except (TypeError, ValueError):
        pass
    if isinstance(q, list) and len(q) != N:
        problems.append(f"q: expected {N} entries, got {len(q)}")
    dim, classes = data.get("dim", 20), data.get("classes", 10)
    if obj.get("kind", "ridge") == "mlp":
        w = obj.get("widths", [2, 8, 2])
        cut = obj.get("cut", 1)
        if len(w) < 3 or not 1 <= cut < len(w) - 1:
            problems.append("objective: MLP needs >= 1 hidden layer and 1 <= cut < len(widths) - 1")
        elif w[0] != dim or w[-1] != classes:
            problems.append("objective.widths must start at data.dim and end at data.classes")
    elif not obj.get("n_client_features", 8) < dim:
        problems.append("objective.n_client_features must be < data.dim")
    return problems


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def parse_config(doc) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as err:
        problems = _format_errors(err)
        if isinstance(doc, dict) and not any(p.startswith("<root>") for p in problems):
            try:
                problems += [f"<root>: {p}" for p in cross_field_problems(doc)]
            except (TypeError, AttributeError):
                pass
        raise ConfigError(problems) from None


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError([f"{path}: line {err.lineno}, column {err.colno}: {err.msg}"]) from None
    return parse_config(doc)
