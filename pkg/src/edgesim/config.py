"""Run configuration: one YAML file plus ``--set key=value`` overrides.

Layout::

    seed: 1
    scheduler: greedy_eft
    agents: 24
    output_dir: out
    workload_dir: null          # load CSVs instead of generating
    generation: {...}           # GenConfig fields (tier profiles under iot/mec/cloud_profile)
    engine: {...}               # EngineConfig fields
    window: {...}               # WindowConfig fields
    churn: {...}                # ChurnConfig fields, plus ``script`` (CSV path)

Every key is checked against the dataclass it feeds; unknown keys are an
error. The ``SCHEDGE_SEED`` environment variable overrides ``seed``.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Sequence

import yaml

from .churn import ChurnConfig, ChurnScriptError, load_script
from .dataflow import WindowConfig
from .datagen import GenConfig
from .engine import EngineConfig
from .model import Tier
from .scheduling import SCHEDULERS

SEED_ENV = "SCHEDGE_SEED"

# Sections map onto GenConfig, EngineConfig, WindowConfig and ChurnConfig.
_SECTIONS = ("generation", "engine", "window", "churn")
_TOP_LEVEL = {"seed", "scheduler", "agents", "agent_workers", "output_dir", "workload_dir",
              "record_wall_time", "sweep_seeds", *_SECTIONS}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 1
    scheduler: str = "greedy_eft"
    agents: int = 24
    # Threads in the agent worker pool; None means one per agent, 0 runs agents inline.
    agent_workers: Optional[int] = None
    output_dir: str = "out"
    workload_dir: Optional[str] = None
    # False leaves wall_time_s empty in cycles.csv so reruns export identical bytes.
    record_wall_time: bool = True
    # Seeds per probability for ``sweep`` (seed, seed + 1, ...).
    sweep_seeds: int = 10
    generation: GenConfig = field(default_factory=GenConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    churn_script: Optional[str] = None


# --- type coercion -----------------------------------------------------------------

def _coerce(value: Any, tp, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        return _build(tp, value, where)
    if origin in (tuple, typing.Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if origin in (dict, typing.Dict):
        if not isinstance(value, Mapping):
            raise ConfigError(f"{where}: expected a mapping")
        kt, vt = args
        return {_coerce(k, kt, f"{where}.{k}"): _coerce(v, vt, f"{where}.{k}") for k, v in value.items()}
    if tp is Tier:
        try:
            return Tier(value)
        except ValueError:
            raise ConfigError(f"{where}: unknown tier {value!r}") from None
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, data: Mapping, where: str, skip=frozenset(), extra=None):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init and not f.name.startswith("_")}
    kwargs = {}
    for key, value in data.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in names or key in skip:
            raise ConfigError(f"unknown config key {path!r}")
        kwargs[key] = _coerce(value, hints[key], path)
    kwargs.update(extra or {})
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


# --- loading -----------------------------------------------------------------------------

def apply_override(raw: Dict[str, Any], assignment: str) -> None:
    """Set ``a.b.c=value`` in a nested mapping; the value is parsed as YAML."""
    key, sep, text = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {assignment!r} is not key=value")
    try:
        value = yaml.safe_load(text) if text.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        child = node.setdefault(p, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {assignment!r}: {p} is not a section")
        node = child
    node[parts[-1]] = value


def read_raw(path) -> Dict[str, Any]:
    """Parse the YAML file; I/O errors propagate as ``OSError``."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def build_config(raw: Mapping[str, Any], base_dir: str = ".",
                 env: Optional[Mapping[str, str]] = None) -> RunConfig:
    env = os.environ if env is None else env
    unknown = sorted(set(raw) - _TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for name in _SECTIONS:
        if raw.get(name) is not None and not isinstance(raw[name], Mapping):
            raise ConfigError(f"{name}: expected a mapping")

    seed = _coerce(raw.get("seed", 1), int, "seed")
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None

    scheduler = _coerce(raw.get("scheduler", "greedy_eft"), str, "scheduler")
    if scheduler not in SCHEDULERS:
        raise ConfigError(f"unknown scheduler {scheduler!r}; valid names: {', '.join(sorted(SCHEDULERS))}")
    agents = _coerce(raw.get("agents", 24), int, "agents")
    if agents < 1:
        raise ConfigError("agents must be at least 1")
    workers = _coerce(raw.get("agent_workers"), Optional[int], "agent_workers")
    if workers is not None and workers < 0:
        raise ConfigError("agent_workers must be non-negative")
    sweep_seeds = _coerce(raw.get("sweep_seeds", 10), int, "sweep_seeds")
    if sweep_seeds < 1:
        raise ConfigError("sweep_seeds must be at least 1")

    def resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base_dir, p)

    workload_dir = resolve(_coerce(raw.get("workload_dir"), Optional[str], "workload_dir"))
    if workload_dir is not None and not os.path.isdir(workload_dir):
        raise ConfigError(f"workload_dir {workload_dir!r} does not exist")

    gen = _build(GenConfig, raw.get("generation") or {}, "generation", {"seed"}, {"seed": seed})
    try:
        gen.validate()
    except ValueError as exc:
        raise ConfigError(f"generation: {exc}") from None
    window = _build(WindowConfig, raw.get("window") or {}, "window")

    churn_raw = dict(raw.get("churn") or {})
    script = resolve(_coerce(churn_raw.pop("script", None), Optional[str], "churn.script"))
    directives = ()
    if script is not None:
        if not os.path.isfile(script):
            raise ConfigError(f"churn.script {script!r} does not exist")
        try:
            directives = load_script(script)
        except ChurnScriptError as exc:
            raise ConfigError(str(exc)) from None
    churn = _build(ChurnConfig, churn_raw, "churn", {"manual_script"}, {"manual_script": directives})

    engine = _build(EngineConfig, raw.get("engine") or {}, "engine", {"seed", "window", "churn"},
                    {"seed": seed, "window": window, "churn": churn})

    return RunConfig(
        seed=seed,
        scheduler=scheduler,
        agents=agents,
        agent_workers=workers,
        output_dir=resolve(_coerce(raw.get("output_dir", "out"), str, "output_dir")),
        workload_dir=workload_dir,
        record_wall_time=_coerce(raw.get("record_wall_time", True), bool, "record_wall_time"),
        sweep_seeds=sweep_seeds,
        generation=gen,
        engine=engine,
        churn_script=script,
    )


def load_config(path, overrides: Sequence[str] = (), env: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Read ``path``, apply ``key=value`` overrides and the seed variable, and validate.

    Relative paths in the file resolve against the current directory.
    """
    raw = read_raw(path)
    for o in overrides:
        apply_override(raw, o)
    return build_config(raw, ".", env)


def default_raw() -> Dict[str, Any]:
    """The built-in defaults in config-file form (handy for writing a starter file)."""
    gen = GenConfig()
    eng = EngineConfig()
    win = WindowConfig()
    churn = ChurnConfig()

    def plain(x):
        if dataclasses.is_dataclass(x):
            return {f.name: plain(getattr(x, f.name)) for f in dataclasses.fields(x)
                    if not f.name.startswith("_")}
        if isinstance(x, tuple):
            return [plain(v) for v in x]
        if isinstance(x, dict):
            return {plain(k): plain(v) for k, v in x.items()}
        if isinstance(x, Tier):
            return x.value
        return x

    generation = plain(gen)
    generation.pop("seed")
    engine = plain(eng)
    for k in ("seed", "window", "churn"):
        engine.pop(k)
    churn_d = plain(churn)
    churn_d.pop("manual_script")
    return {
        "seed": 1,
        "scheduler": "greedy_eft",
        "agents": 24,
        "output_dir": "out",
        "workload_dir": None,
        "record_wall_time": True,
        "sweep_seeds": 10,
        "generation": generation,
        "engine": engine,
        "window": plain(win),
        "churn": churn_d,
    }


__all__ = ["RunConfig", "ConfigError", "load_config", "build_config", "apply_override",
           "read_raw", "default_raw", "SEED_ENV"]
