"""Scenario files: YAML with a strict schema.

Example::

    workspace: [-15, 15]
    speed: 10
    bolza: 0
    seed: 0
    x0: [-10, -5]
    xf: [8, 6]
    field:
      amplitude: 5
      offset: 1
      temporal: static        # or cosine
      bases:                  # rows of (peak, centre, shape); or use `random`
        - {peak: 1.0, center: [0, 0], shape: [[0.1, 0], [0, 0.1]]}
    train:                    # optional TrainConfig overrides
      max_epochs: 3000
      mode: single            # or conditioned

Unknown keys anywhere are rejected.  Validation errors carry the YAML line.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .pmp import Scenario
from .threat_field import RadialBasis, ThreatField, random_field


class ScenarioError(ValueError):
    """Raised for unreadable or schema-violating scenario files."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=False)


Pair = tuple[float, float]


class BasisSpec(_Strict):
    peak: float
    center: Pair
    shape: tuple[Pair, Pair] = ((1.0, 0.0), (0.0, 1.0))


class RandomSpec(_Strict):
    n_bases: int = Field(ge=0)
    seed: int = 0
    peak_range: Pair = (0.5, 1.5)
    spread_range: Pair = (3.0, 6.0)


class FieldSpec(_Strict):
    amplitude: float = 5.0
    offset: float = 1.0
    temporal: Literal["static", "cosine"] = "static"
    bases: list[BasisSpec] = []
    random: Optional[RandomSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.random is not None and self.bases:
            raise ValueError("give either explicit bases or a random block, not both")
        return self


class TrainSpec(_Strict):
    mode: Literal["single", "conditioned"] = "single"
    n_points: Optional[int] = Field(default=None, ge=2)
    max_epochs: Optional[int] = Field(default=None, ge=0)
    lr: Optional[float] = Field(default=None, gt=0)
    decay_epoch: Optional[int] = Field(default=None, ge=0)
    decay_factor: Optional[float] = Field(default=None, gt=0)
    anneal: Optional[bool] = None
    anneal_alpha: Optional[float] = Field(default=None, ge=0, le=1)
    anneal_every: Optional[int] = Field(default=None, ge=1)
    anneal_cost: Optional[bool] = None
    anneal_bounds: Optional[Pair] = None
    stop_threshold: Optional[float] = None
    width: Optional[int] = Field(default=None, ge=1)
    state_depth: Optional[int] = Field(default=None, ge=1)
    costate_depth: Optional[int] = Field(default=None, ge=1)
    n_initial: Optional[int] = Field(default=None, ge=1)
    log_every: Optional[int] = Field(default=None, ge=1)
    weights: Optional[list[float]] = None

    def overrides(self) -> dict:
        skip = {"mode", "weights"}
        return {k: v for k, v in self.model_dump().items() if v is not None and k not in skip}


class ScenarioFile(_Strict):
    workspace: Pair = (-15.0, 15.0)
    speed: float = 10.0
    bolza: float = 0.0
    seed: int = 0
    x0: Pair
    xf: Pair
    field: FieldSpec = FieldSpec()
    train: TrainSpec = TrainSpec()

    def build_field(self) -> ThreatField:
        f = self.field
        if f.random is not None:
            r = f.random
            drawn = random_field(
                np.random.default_rng(r.seed), r.n_bases, self.workspace, f.temporal,
                r.peak_range, r.spread_range,
            )
            bases = drawn.bases
        else:
            bases = tuple(RadialBasis(b.peak, b.center, b.shape) for b in f.bases)
        field = ThreatField(bases, f.amplitude, f.offset, f.temporal)
        field.validate(self.workspace)
        return field

    def build(self) -> Scenario:
        return Scenario(self.x0, self.xf, self.build_field(), self.speed, self.bolza, self.workspace)


def _line_of(root: yaml.Node | None, loc: tuple) -> int | None:
    node = root
    line = None if node is None else node.start_mark.line + 1
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
            if nxt is None:
                nxt = next((k for k, _ in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def parse(text: str, source: str = "<string>") -> ScenarioFile:
    try:
        data = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: YAML syntax error: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    try:
        spec = ScenarioFile.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            where = ".".join(str(p) for p in loc) or "<root>"
            ln = _line_of(root, loc)
            lines.append(f"{source}:{ln if ln else '?'}: {where}: {err['msg']}")
        raise ScenarioError("\n".join(lines)) from exc
    try:
        spec.build()
    except ValueError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    return spec


def load(path) -> ScenarioFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    return parse(text, str(path))


def dump(spec: ScenarioFile) -> str:
    """YAML text that parses back to an equal ScenarioFile."""
    data: dict[str, Any] = spec.model_dump(mode="json", exclude_none=True)
    train = {k: v for k, v in data["train"].items() if v is not None}
    data["train"] = train
    if not data["field"].get("random"):
        data["field"].pop("random", None)
    return yaml.safe_dump(data, sort_keys=False)
