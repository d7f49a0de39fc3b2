"""Campaign configuration: a YAML file (JSON is accepted as well).

Layout::

    scenario:
      kind: acoustic            # acoustic | sensor_net | linear
      params: {horizon: 40}     # fields of the scenario config
    campaign:
      trajectories: 20
      runs: 2
      seed: 1
      output: results/acoustic
      threads: 1
      omat_order: 1
      lost_track_threshold: 2.0 # null disables lost-track exclusion
    flow:                       # shared defaults for every cell
      n_lambda: 29
      lambda_ratio: 1.2
    cells:
      - {filter: PFGSPF, G: 5, Np_star: 500}
      - {filter: PFGPF, Np_star: 2500}

Every error carries the line and field that caused it.
"""

from dataclasses import dataclass, field, fields, replace
import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import yaml

from ..errors import ConfigError, FilterError
from ..filters import FilterConfig, FilterKind
from ..scenarios import (
    AcousticScenarioConfig,
    SensorNetScenarioConfig,
    build_acoustic,
    build_linear_gaussian,
    build_sensor_net,
)
from ..scenarios.common import config_from_dict, config_to_dict

SCENARIO_KINDS = ("acoustic", "sensor_net", "linear")


class _Located(dict):
    """Mapping that remembers the source line of each key (and of itself)."""

    line = None
    key_lines: dict


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Located()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _line(mapping, key=None):
    if isinstance(mapping, _Located):
        if key is not None and key in mapping.key_lines:
            return mapping.key_lines[key]
        return mapping.line
    return None


@dataclass(frozen=True)
class LinearScenarioConfig:
    dim: int = 4
    horizon: int = 20
    prior_jitter_scale: float = 0.0

    def __post_init__(self):
        if self.dim < 1 or self.horizon < 1:
            from ..errors import InvalidArgument

            raise InvalidArgument("dim and horizon must be positive")


@dataclass(frozen=True)
class Cell:
    kind: FilterKind
    G: int = 1
    Np_star: int = 100
    n_lambda: Optional[int] = None
    lambda_ratio: Optional[float] = None
    label: str = ""

    @property
    def Np(self):
        return self.G * self.Np_star

    @property
    def algorithm(self):
        return self.label or self.kind.value


@dataclass(frozen=True)
class Campaign:
    scenario_kind: str
    scenario: object
    cells: tuple
    trajectories: int = 1
    runs: int = 1
    seed: int = 0
    output: str = "results"
    threads: Optional[int] = None
    omat_order: float = 1.0
    lost_track_threshold: Optional[float] = 2.0
    flow: dict = field(default_factory=dict)

    @property
    def metric(self):
        return "omat" if self.scenario_kind == "acoustic" else "se"

    def filter_config(self, cell):
        base = FilterConfig(kind=cell.kind, n_components=cell.G, particles_per_component=cell.Np_star,
                            **self.flow)
        changes = {}
        if cell.n_lambda is not None:
            changes["n_lambda"] = cell.n_lambda
        if cell.lambda_ratio is not None:
            changes["lambda_ratio"] = cell.lambda_ratio
        return replace(base, **changes) if changes else base

    def build_scenario(self):
        if self.scenario_kind == "acoustic":
            return build_acoustic(self.scenario)
        if self.scenario_kind == "sensor_net":
            return build_sensor_net(self.scenario)
        cfg = self.scenario
        return build_linear_gaussian(dim=cfg.dim, horizon=cfg.horizon)

    @property
    def prior_jitter_scale(self):
        return float(getattr(self.scenario, "prior_jitter_scale", 0.0))

    def to_dict(self):
        return {
            "scenario": {"kind": self.scenario_kind, "params": config_to_dict(self.scenario)},
            "campaign": {
                "trajectories": self.trajectories,
                "runs": self.runs,
                "seed": self.seed,
                "output": self.output,
                "threads": self.threads,
                "omat_order": self.omat_order,
                "lost_track_threshold": self.lost_track_threshold,
            },
            "flow": dict(self.flow),
            "cells": [
                {k: v for k, v in (
                    ("filter", c.kind.value), ("G", c.G), ("Np_star", c.Np_star),
                    ("n_lambda", c.n_lambda), ("lambda_ratio", c.lambda_ratio),
                    ("label", c.label or None),
                ) if v is not None}
                for c in self.cells
            ],
        }

    def fingerprint(self):
        """Short hash of everything that determines the results (not output/threads)."""
        d = self.to_dict()
        d["campaign"].pop("output")
        d["campaign"].pop("threads")
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SCENARIO_CLASSES = {
    "acoustic": AcousticScenarioConfig,
    "sensor_net": SensorNetScenarioConfig,
    "linear": LinearScenarioConfig,
}
_CAMPAIGN_KEYS = {"trajectories", "runs", "seed", "output", "threads", "omat_order",
                  "lost_track_threshold"}
_FLOW_KEYS = {"n_lambda", "lambda_ratio", "resample_threshold", "jitter", "chunk_size"}
_CELL_KEYS = {"filter", "G", "Np_star", "n_lambda", "lambda_ratio", "label"}


def _section(doc, name, required=True):
    if name not in doc:
        if required:
            raise ConfigError("missing required section", field=name, line=_line(doc))
        return _Located()
    sec = doc[name]
    if sec is None:
        return _Located()
    if not isinstance(sec, dict):
        raise ConfigError("expected a mapping", field=name, line=_line(doc, name))
    return sec


def _reject_unknown(mapping, allowed, prefix):
    for key in mapping:
        if key not in allowed:
            raise ConfigError(
                f"unknown key (allowed: {', '.join(sorted(allowed))})",
                field=f"{prefix}.{key}", line=_line(mapping, key),
            )


def _int(mapping, key, prefix, default=None, minimum=1):
    if key not in mapping or mapping[key] is None:
        if default is None:
            raise ConfigError("required", field=f"{prefix}.{key}", line=_line(mapping))
        return default
    v = mapping[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"expected an integer >= {minimum}, got {v!r}",
                          field=f"{prefix}.{key}", line=_line(mapping, key))
    return v


def _number(mapping, key, prefix, default):
    if key not in mapping:
        return default
    v = mapping[key]
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {v!r}", field=f"{prefix}.{key}",
                          line=_line(mapping, key))
    return float(v)


def parse_config(doc):
    """Validate a parsed document and return a :class:`Campaign`."""
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a mapping", line=1)
    _reject_unknown(doc, {"scenario", "campaign", "flow", "cells"}, "")

    sc = _section(doc, "scenario")
    _reject_unknown(sc, {"kind", "params"}, "scenario")
    kind = sc.get("kind")
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"expected one of {', '.join(SCENARIO_KINDS)}, got {kind!r}",
                          field="scenario.kind", line=_line(sc, "kind"))
    params = _section(sc, "params", required=False)
    cls = _SCENARIO_CLASSES[kind]
    names = {f.name for f in fields(cls)}
    for key in params:
        if key not in names:
            raise ConfigError(f"unknown {kind} scenario parameter", field=f"scenario.params.{key}",
                              line=_line(params, key))
    try:
        scenario = config_from_dict(cls, dict(params))
    except (FilterError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="scenario.params", line=_line(sc, "params")) from exc

    cp = _section(doc, "campaign")
    _reject_unknown(cp, _CAMPAIGN_KEYS, "campaign")
    trajectories = _int(cp, "trajectories", "campaign", 1)
    runs = _int(cp, "runs", "campaign", 1)
    seed = _int(cp, "seed", "campaign", 0, minimum=0)
    output = cp.get("output", "results")
    if not isinstance(output, str) or not output:
        raise ConfigError("expected a path string", field="campaign.output",
                          line=_line(cp, "output"))
    threads = cp.get("threads")
    if threads is not None:
        threads = _int(cp, "threads", "campaign")
    omat_order = _number(cp, "omat_order", "campaign", 1.0)
    if omat_order is None or omat_order < 1:
        raise ConfigError("must be >= 1", field="campaign.omat_order",
                          line=_line(cp, "omat_order"))
    threshold = _number(cp, "lost_track_threshold", "campaign", 2.0 if kind == "acoustic" else None)

    fl = _section(doc, "flow", required=False)
    _reject_unknown(fl, _FLOW_KEYS, "flow")
    flow = {}
    for key in ("n_lambda", "chunk_size"):
        if key in fl:
            flow[key] = _int(fl, key, "flow")
    for key in ("lambda_ratio", "resample_threshold", "jitter"):
        if key in fl:
            flow[key] = _number(fl, key, "flow", None)

    raw_cells = doc.get("cells")
    if not isinstance(raw_cells, list) or not raw_cells:
        raise ConfigError("expected a non-empty list of filter cells", field="cells",
                          line=_line(doc, "cells"))
    cells = []
    for i, c in enumerate(raw_cells):
        prefix = f"cells[{i}]"
        if not isinstance(c, dict):
            raise ConfigError("expected a mapping", field=prefix, line=_line(doc, "cells"))
        _reject_unknown(c, _CELL_KEYS, prefix)
        try:
            fk = FilterKind.parse(c.get("filter"))
        except FilterError as exc:
            raise ConfigError(str(exc), field=f"{prefix}.filter", line=_line(c, "filter")) from exc
        cell = Cell(
            kind=fk,
            G=_int(c, "G", prefix, 1),
            Np_star=_int(c, "Np_star", prefix),
            n_lambda=_int(c, "n_lambda", prefix) if "n_lambda" in c else None,
            lambda_ratio=_number(c, "lambda_ratio", prefix, None),
            label=str(c.get("label") or ""),
        )
        if fk == FilterKind.KF_ORACLE and kind != "linear":
            raise ConfigError("the Kalman oracle needs the linear scenario",
                              field=f"{prefix}.filter", line=_line(c, "filter"))
        cells.append(cell)

    campaign = Campaign(kind, scenario, tuple(cells), trajectories, runs, seed, output, threads,
                        omat_order, threshold, flow)
    for i, cell in enumerate(cells):
        try:
            campaign.filter_config(cell)
        except (FilterError, TypeError) as exc:
            raise ConfigError(str(exc), field=f"cells[{i}]", line=_line(raw_cells[i])) from exc
    return campaign


def load_config(path):
    """Read and validate a campaign file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ConfigError(f"parse error: {exc.problem}",
                          line=mark.line + 1 if mark is not None else None) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return parse_config(doc)
