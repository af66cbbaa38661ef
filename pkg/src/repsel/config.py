"""Plain-text ``key = value`` experiment configuration.

Keys mirror ``ExperimentConfig``; nested settings use a dotted prefix::

    # WARD-style balanced run
    method = proposed
    seeds = 0, 1, 2, 3, 4
    trials = 5
    synthetic.identities = 50
    pool.mode = balanced
    embedding.method = tsne
    coding_solver.max_iter = 200

Blank lines and ``#`` comments are ignored. ``methods`` (a comma list) and
``axis`` / ``grid_points`` are run options rather than experiment fields.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path

from repsel.data import PoolSpec
from repsel.embed import EmbeddingConfig
from repsel.errors import ConfigError
from repsel.pipeline import METHODS, ExperimentConfig, SyntheticSpec
from repsel.solver import SolverConfig

NESTED = {
    "synthetic": SyntheticSpec,
    "pool": PoolSpec,
    "embedding": EmbeddingConfig,
    "selection_solver": SolverConfig,
    "coding_solver": SolverConfig,
}
RUN_KEYS = ("methods", "axis", "grid_points")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig
    methods: tuple = ()
    axis: str = "queries"
    grid_points: int = 51

    @property
    def method_list(self) -> tuple:
        return self.methods or (self.experiment.method,)


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _coerce(key, hint, text):
    """Turn ``text`` into a value of type ``hint``."""
    args = typing.get_args(hint)
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        if text.lower() in ("none", "null", ""):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(key, inner[0], text)
    if hint is bool:
        return _parse_bool(text)
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if hint is tuple or typing.get_origin(hint) is tuple:
        if key == "tiers":
            # fraction:count pairs, e.g. "0.2:10, 0.5:4, 0.3:2"
            pairs = []
            for item in _split(text):
                frac, count = item.split(":")
                pairs.append((float(frac), int(count)))
            return tuple(pairs)
        if key == "early_exaggeration":
            factor, duration = _split(text)
            return (float(factor), int(duration))
        return tuple(int(t) for t in _split(text))
    raise ValueError(f"unsupported field type {hint!r}")


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config(text: str) -> RunConfig:
    """Parse config text; errors name the offending line."""
    top, nested, run = {}, {name: {} for name in NESTED}, {}
    top_hints = _hints(ExperimentConfig)
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        try:
            if key in RUN_KEYS:
                if key == "methods":
                    methods = tuple(_split(value))
                    bad = [m for m in methods if m not in METHODS]
                    if bad:
                        raise ValueError(f"unknown method {bad[0]!r}, expected one of {METHODS}")
                    run[key] = methods
                elif key == "axis":
                    if value not in ("queries", "total_labeled"):
                        raise ValueError("axis must be 'queries' or 'total_labeled'")
                    run[key] = value
                else:
                    run[key] = int(value)
            elif "." in key:
                prefix, name = key.split(".", 1)
                if prefix not in NESTED:
                    raise KeyError(key)
                hints = _hints(NESTED[prefix])
                if name not in hints:
                    raise KeyError(key)
                nested[prefix][name] = _coerce(name, hints[name], value)
            else:
                if key not in top_hints or key in NESTED:
                    raise KeyError(key)
                top[key] = _coerce(key, top_hints[key], value)
        except KeyError:
            raise ConfigError(f"line {lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None

    try:
        for prefix, values in nested.items():
            if values:
                top[prefix] = NESTED[prefix](**values)
        if "seeds" in top and "trials" not in top:
            top["trials"] = len(top["seeds"])
        if "trials" in top and "seeds" not in top:
            top["seeds"] = tuple(range(top["trials"]))
        cfg = ExperimentConfig(**top)
        return RunConfig(experiment=cfg, **run)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dumps_config(cfg: ExperimentConfig) -> str:
    """Render ``cfg`` in the same format; ``parse_config`` reads it back."""

    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            if v and isinstance(v[0], tuple):
                return ", ".join(f"{a!r}:{b!r}" for a, b in v)
            return ", ".join(repr(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in NESTED:
            for g in dataclasses.fields(value):
                lines.append(f"{f.name}.{g.name} = {fmt(getattr(value, g.name))}")
        else:
            lines.append(f"{f.name} = {fmt(value)}")
    return "\n".join(lines) + "\n"
