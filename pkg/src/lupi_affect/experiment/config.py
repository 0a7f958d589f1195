"""Declarative experiment configuration (YAML or JSON) and its schema."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigurationError, SchemaError
from ..synthetic import GeneratorConfig
from ..training import TrainConfig

TASKS = ("classification", "regression")
DIMENSIONS = ("arousal", "valence")
WINDOW_LENGTHS = (1.0, 2.0, 3.0)
ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
TEACHERS = ("privnet", "fusionnet")
MODELS = ("pixelnet", "privnet", "fusionnet", "student")


@dataclass(frozen=True)
class FoldSettings:
    k: int = 5
    seed: int = 0
    sweep_repeats: int = 1
    compare_repeats: int = 5


@dataclass(frozen=True)
class LabelSettings:
    split_t: float | None = None
    epsilon: float = 0.1


# (key, type, default, help); nested sections are documented in SECTION_SCHEMAS
SCHEMA = (
    ("name", "str", None, "run name; results go to <runs root>/<name>"),
    ("corpus", "str", None, "path to a corpus in the adapter format (exclusive with 'generator')"),
    ("generator", "section", None, "synthetic corpus settings (exclusive with 'corpus')"),
    ("task", "str", None, f"one of {list(TASKS)}"),
    ("dimension", "str", "arousal", f"one of {list(DIMENSIONS)}; selects annotations_<dimension>.csv if present"),
    ("window_lengths", "list[float]", [1.0], f"subset of {list(WINDOW_LENGTHS)} seconds"),
    ("step", "float", 0.4, "window hop in seconds, <= the shortest window"),
    ("alphas", "list[float]", list(ALPHAS), f"subset of {list(ALPHAS)}"),
    ("teachers", "list[str]", list(TEACHERS), f"subset of {list(TEACHERS)}"),
    ("models", "list[str]", list(MODELS), f"subset of {list(MODELS)}"),
    ("training", "section", {}, "optimiser and early-stopping settings"),
    ("folds", "section", {}, "grouped cross-validation settings"),
    ("labeling", "section", {}, "classification threshold and uncertainty band"),
    ("jobs", "int", 1, "parallel worker processes for independent cells"),
)

SECTION_SCHEMAS = {
    "generator": GeneratorConfig,
    "training": TrainConfig,
    "folds": FoldSettings,
    "labeling": LabelSettings,
}


def _type_ok(value, kind):
    if kind == "str":
        return isinstance(value, str)
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if kind.startswith("list["):
        inner = kind[5:-1]
        return isinstance(value, list) and all(_type_ok(v, inner) for v in value)
    if kind == "section":
        return isinstance(value, dict)
    return True


def _section(cls, data, prefix):
    if cls is GeneratorConfig:
        try:
            return GeneratorConfig.from_dict(data)
        except SchemaError as exc:
            raise SchemaError(f"{prefix}.{exc.field}", str(exc).split(": ", 1)[1]) from None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in fields:
            raise SchemaError(f"{prefix}.{key}", "unknown field")
        default = fields[key].default
        if isinstance(default, bool) or (isinstance(default, int) and not isinstance(default, bool)):
            if not _type_ok(value, "int"):
                raise SchemaError(f"{prefix}.{key}", f"expected an integer, got {value!r}")
        elif isinstance(default, float) or (default is None and value is not None):
            if not _type_ok(value, "float"):
                raise SchemaError(f"{prefix}.{key}", f"expected a number, got {value!r}")
        elif isinstance(default, str) and not isinstance(value, str):
            raise SchemaError(f"{prefix}.{key}", f"expected a string, got {value!r}")
    try:
        return cls(**data)
    except ConfigurationError as exc:
        raise SchemaError(prefix, str(exc)) from None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    task: str
    corpus: str | None = None
    generator: GeneratorConfig | None = None
    dimension: str = "arousal"
    window_lengths: tuple = (1.0,)
    step: float = 0.4
    alphas: tuple = ALPHAS
    teachers: tuple = TEACHERS
    models: tuple = MODELS
    training: TrainConfig = field(default_factory=TrainConfig)
    folds: FoldSettings = field(default_factory=FoldSettings)
    labeling: LabelSettings = field(default_factory=LabelSettings)
    jobs: int = 1

    def __post_init__(self):
        for name in ("window_lengths", "alphas", "teachers", "models"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "window_lengths", tuple(float(v) for v in self.window_lengths))
        object.__setattr__(self, "alphas", tuple(float(v) for v in self.alphas))
        if (self.corpus is None) == (self.generator is None):
            raise SchemaError("corpus", "give exactly one of 'corpus' and 'generator'")
        if self.task not in TASKS:
            raise SchemaError("task", f"must be one of {list(TASKS)}, got {self.task!r}")
        if self.dimension not in DIMENSIONS:
            raise SchemaError("dimension", f"must be one of {list(DIMENSIONS)}, got {self.dimension!r}")
        for name, allowed in (("window_lengths", WINDOW_LENGTHS), ("alphas", ALPHAS),
                              ("teachers", TEACHERS), ("models", MODELS)):
            values = getattr(self, name)
            if not values:
                raise SchemaError(name, "selection must not be empty")
            bad = [v for v in values if v not in allowed]
            if bad:
                raise SchemaError(name, f"{bad} not in {list(allowed)}")
            if len(set(values)) != len(values):
                raise SchemaError(name, "duplicate entries")
        if not 0 < self.step <= min(self.window_lengths):
            raise SchemaError("step", f"must lie in (0, {min(self.window_lengths)}]")
        if self.jobs < 1:
            raise SchemaError("jobs", "must be >= 1")
        if "student" in self.models and not self.teachers:
            raise SchemaError("teachers", "students need at least one teacher")
        if self.folds.k < 2 or self.folds.sweep_repeats < 1 or self.folds.compare_repeats < 1:
            raise SchemaError("folds", "need k >= 2 and at least one repeat")
        if self.labeling.epsilon < 0:
            raise SchemaError("labeling.epsilon", "must be >= 0")

    @classmethod
    def from_dict(cls, data, base_dir=None):
        if not isinstance(data, dict):
            raise SchemaError("<root>", "config must be a mapping")
        known = {key: kind for key, kind, _, _ in SCHEMA}
        for key, value in data.items():
            if key not in known:
                raise SchemaError(key, "unknown field")
            if value is not None and not _type_ok(value, known[key]):
                raise SchemaError(key, f"expected {known[key]}, got {value!r}")
        for key in ("name", "task"):
            if key not in data:
                raise SchemaError(key, "required field missing")
        kwargs = {k: v for k, v in data.items() if k not in SECTION_SCHEMAS}
        for key, cls_ in SECTION_SCHEMAS.items():
            if data.get(key) is not None:
                kwargs[key] = _section(cls_, data[key], key)
        if kwargs.get("corpus") and base_dir is not None and not Path(kwargs["corpus"]).is_absolute():
            kwargs["corpus"] = str(Path(base_dir) / kwargs["corpus"])
        return cls(**kwargs)

    def to_dict(self):
        d = {
            "name": self.name,
            "task": self.task,
            "dimension": self.dimension,
            "window_lengths": list(self.window_lengths),
            "step": self.step,
            "alphas": list(self.alphas),
            "teachers": list(self.teachers),
            "models": list(self.models),
            "training": dataclasses.asdict(self.training),
            "folds": dataclasses.asdict(self.folds),
            "labeling": dataclasses.asdict(self.labeling),
            "jobs": self.jobs,
        }
        if self.corpus is not None:
            d["corpus"] = self.corpus
        else:
            d["generator"] = self.generator.to_dict()
        return d

    def hash(self):
        """Hash of everything that affects results (``jobs`` excluded)."""
        d = self.to_dict()
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())  # JSON is a subset of YAML
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: cannot parse ({exc})") from None
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def load_generator_config(path) -> GeneratorConfig:
    """A generator config file: either a bare mapping or one under a ``generator`` key."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file {path} not found")
    data = yaml.safe_load(path.read_text())
    if isinstance(data, dict) and isinstance(data.get("generator"), dict):
        data = data["generator"]
    if not isinstance(data, dict):
        raise SchemaError("<root>", "generator config must be a mapping")
    return GeneratorConfig.from_dict(data)


def schema_text():
    """Human-readable schema, printed by ``--print-schema``."""
    lines = ["# experiment config (YAML or JSON)"]
    for key, kind, default, help_ in SCHEMA:
        req = "required" if key in ("name", "task") else f"default {json.dumps(default)}"
        lines.append(f"{key}: {kind}  # {help_}; {req}")
        if kind == "section":
            for f in dataclasses.fields(SECTION_SCHEMAS[key]):
                dflt = "required" if f.default is dataclasses.MISSING else f"default {json.dumps(f.default)}"
                lines.append(f"  {f.name}: {f.type}  # {dflt}")
    return "\n".join(lines) + "\n"
