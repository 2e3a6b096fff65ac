"""Run configuration: an INI-style file with [env], [objective], [train] and [output].

Grammar
-------
Lines are ``key = value``; ``#`` and ``;`` start comments.  Keys placed
before any section header are shorthands: ``env = set`` sets
``[env] kind`` and ``objective = revkl`` sets ``[objective] kind``.
Every key not listed in :data:`SCHEMA` is rejected.

    env = set
    objective = renyi

    [env]
    D = 12
    N = 6

    [objective]
    alpha = 0.5
    cv = on

    [train]
    steps = 512
    seeds = 0,1,2
"""

from __future__ import annotations

import configparser
import re
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .envs import (
    BananaEnv,
    GaussianMixtureEnv,
    PhyloEnv,
    SeqEnv,
    SetEnv,
    random_topology,
    read_phylo_data,
    simulate_jc69,
)
from .errors import ConfigurationError
from .objectives import KINDS, DivergenceSpec
from .train import TrainSettings
from .varred import CVConfig

ENV_KINDS = ("set", "seq", "phylo", "gm", "banana")
TOP = "__top__"


class ConfigError(ConfigurationError):
    """A configuration file problem, located by line where possible."""


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _flag(text: str) -> bool:
    low = text.strip().lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _opt_str(text: str):
    return None if text.strip().lower() in ("", "none", "default") else text.strip()


SCHEMA = {
    "env": {
        "kind": str,
        "D": int,
        "N": int,
        "f": _floats,
        "g": _floats,
        "seed": int,
        "species": int,
        "sites": int,
        "rate": float,
        "branch_length": float,
        "data": str,
        "variance": float,
        "enum_cap": float,
    },
    "objective": {
        "kind": str,
        "alpha": float,
        "cv": _flag,
        "loo": _flag,
        "epsilon": float,
        "self_normalize": _flag,
        "batch_shift": _flag,
    },
    "train": {
        "steps": int,
        "batch": int,
        "lr": float,
        "lr_log_z": float,
        "power": float,
        "seeds": _ints,
        "metric_every": int,
        "pt_mode": str,
        "K": int,
        "jsd_samples": int,
        "arch": _opt_str,
        "hidden": int,
        "jobs": int,
    },
    "variance": {
        "batches": _ints,
        "repetitions": int,
        "estimators": lambda s: tuple(v.strip() for v in s.split(",") if v.strip()),
    },
    "sweep": {
        "alphas": _floats,
        "samples": int,
    },
    "output": {"dir": str},
}

ENV_DEFAULTS = {
    "set": {"D": 32, "N": 16},
    "seq": {"D": 8, "N": 6},
    "phylo": {"species": 7, "sites": 25, "rate": 0.3, "branch_length": 1.0},
    "gm": {"variance": 0.1},
    "banana": {},
}


@dataclass
class EnvConfig:
    kind: str = "set"
    D: int | None = None
    N: int | None = None
    f: tuple | None = None
    g: tuple | None = None
    seed: int = 0
    species: int | None = None
    sites: int | None = None
    rate: float | None = None
    branch_length: float | None = None
    data: str | None = None
    variance: float | None = None
    enum_cap: float = 2e6


@dataclass
class ObjectiveConfig:
    kind: str = "revkl"
    alpha: float = 0.5
    cv: bool = True
    loo: bool = True
    epsilon: float = 1e-8
    self_normalize: bool = True
    batch_shift: bool = False


@dataclass
class TrainConfig:
    steps: int = 512
    batch: int | None = None
    lr: float = 1e-3
    lr_log_z: float = 1e-1
    power: float = 1.0
    seeds: tuple = (0, 1, 2)
    metric_every: int = 16
    pt_mode: str = "exact"
    K: int = 64
    jsd_samples: int = 4096
    arch: str | None = None
    hidden: int = 64
    jobs: int = 1


@dataclass
class VarianceConfig:
    batches: tuple = (32, 64, 128, 256, 512, 1024)
    repetitions: int = 100
    estimators: tuple = ("revkl", "renyi", "tsallis")


@dataclass
class SweepConfig:
    alphas: tuple = (-2.0, 0.5, 2.0)
    samples: int = 2048


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    variance: VarianceConfig = field(default_factory=VarianceConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: str = "runs/out"

    # -- derived objects ------------------------------------------------
    def divergence(self) -> DivergenceSpec:
        o = self.objective
        return DivergenceSpec(o.kind, o.alpha, CVConfig(o.cv, o.loo, o.epsilon), o.self_normalize, o.batch_shift)

    def settings(self) -> TrainSettings:
        t = self.train
        return TrainSettings(
            t.steps, t.batch, t.lr, t.lr_log_z, t.power, t.metric_every, t.pt_mode, t.K, t.jsd_samples, t.arch, t.hidden
        )

    def build_env(self):
        return build_env(self.env)

    def flat(self) -> dict:
        """Every resolved setting as ``section.key -> value``."""
        out = {}
        for section in ("env", "objective", "train", "variance", "sweep"):
            for key, value in asdict(getattr(self, section)).items():
                out[f"{section}.{key}"] = value
        out["output.dir"] = self.output
        return out


def build_env(e: EnvConfig):
    rng = np.random.default_rng(e.seed)
    if e.kind == "set":
        f = e.f if e.f is not None else rng.uniform(-1, 1, e.D)
        return SetEnv(e.D, e.N, f)
    if e.kind == "seq":
        f = e.f if e.f is not None else rng.uniform(-1, 1, e.D)
        g = e.g if e.g is not None else rng.uniform(-1, 1, e.N)
        return SeqEnv(e.D, e.N, f, g)
    if e.kind == "phylo":
        if e.data:
            names, data = read_phylo_data(e.data)
        else:
            tree = random_topology(e.species, rng)
            data = simulate_jc69(tree, e.rate, e.branch_length, e.sites, e.seed)
            names = None
        return PhyloEnv(data, e.rate, e.branch_length, names)
    if e.kind == "gm":
        return GaussianMixtureEnv(variance=e.variance)
    if e.kind == "banana":
        return BananaEnv()
    raise ConfigurationError(f"unknown environment {e.kind!r}")


def _line_of(lines: list[str], section: str, key: str) -> int | None:
    current = TOP
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*[=:]", re.IGNORECASE)
    for number, line in enumerate(lines, 1):
        header = re.match(r"^\s*\[([^\]]+)\]", line)
        if header:
            current = header.group(1).strip()
        elif current == section and pattern.match(line):
            return number
    return None


def _fail(path, line, message):
    where = f"{path}:{line}: " if line else f"{path}: "
    raise ConfigError(where + message)


def parse_text(text: str, path: str = "<config>") -> RunConfig:
    lines = text.splitlines()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(f"[{TOP}]\n" + text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raw: dict = {name: {} for name in SCHEMA}
    for section in parser.sections():
        for key, value in parser.items(section):
            if section == TOP:
                if key not in ("env", "objective"):
                    _fail(path, _line_of(lines, TOP, key), f"unknown top-level key {key!r}")
                raw[key]["kind"] = (value, _line_of(lines, TOP, key))
                continue
            if section not in SCHEMA:
                _fail(path, _line_of(lines, section, key), f"unknown section [{section}]")
            if key not in SCHEMA[section]:
                _fail(path, _line_of(lines, section, key), f"unknown key {key!r} in [{section}]")
            raw[section][key] = (value, _line_of(lines, section, key))
    return _resolve(raw, path)


def _convert(raw, section, path):
    out = {}
    for key, (value, line) in raw[section].items():
        try:
            out[key] = SCHEMA[section][key](value)
        except ValueError as exc:
            _fail(path, line, f"bad value for {section}.{key}: {exc}")
    return out


def _resolve(raw, path) -> RunConfig:
    env_vals = _convert(raw, "env", path)
    kind = env_vals.get("kind", "set")
    if kind not in ENV_KINDS:
        _fail(path, raw["env"].get("kind", (None, None))[1], f"unknown env kind {kind!r}; choose from {ENV_KINDS}")
    merged = dict(ENV_DEFAULTS[kind])
    merged.update(env_vals)
    env = EnvConfig(**merged)
    if kind in ("set", "seq"):
        if env.D < 1 or env.N < 1:
            _fail(path, raw["env"].get("D", (None, None))[1], "D and N must be positive")
        if kind == "set" and env.D < env.N:
            _fail(path, raw["env"].get("D", raw["env"].get("N", (None, None)))[1], f"set env needs D >= N (D={env.D}, N={env.N})")
        if env.f is not None and len(env.f) != env.D:
            _fail(path, raw["env"]["f"][1], f"f must list D={env.D} values")
        if env.g is not None and len(env.g) != env.N:
            _fail(path, raw["env"]["g"][1], f"g must list N={env.N} values")

    obj = ObjectiveConfig(**_convert(raw, "objective", path))
    if obj.kind not in KINDS:
        _fail(path, raw["objective"].get("kind", (None, None))[1], f"unknown objective {obj.kind!r}; choose from {KINDS}")
    if obj.kind in ("renyi", "tsallis") and obj.alpha == 1.0:
        _fail(path, raw["objective"].get("alpha", (None, None))[1], "alpha = 1 is not allowed for Renyi/Tsallis")
    if obj.epsilon <= 0:
        _fail(path, raw["objective"]["epsilon"][1], "epsilon must be positive")

    train = TrainConfig(**_convert(raw, "train", path))
    if train.batch is None:
        train = replace(train, batch=64 if kind == "phylo" else 128)
    if train.pt_mode not in ("exact", "mc"):
        _fail(path, raw["train"]["pt_mode"][1], "pt_mode must be exact or mc")
    for key in ("steps", "batch", "K", "jsd_samples", "hidden", "jobs"):
        if getattr(train, key) < 1:
            _fail(path, raw["train"].get(key, (None, None))[1], f"{key} must be at least 1")
    if train.batch < 2:
        _fail(path, raw["train"]["batch"][1], "batch must hold at least two trajectories")
    if not train.seeds:
        _fail(path, raw["train"]["seeds"][1], "at least one seed is required")

    variance = VarianceConfig(**_convert(raw, "variance", path))
    if variance.repetitions < 2:
        _fail(path, raw["variance"]["repetitions"][1], "variance repetitions must be at least 2")
    sweep = SweepConfig(**_convert(raw, "sweep", path))
    if 1.0 in sweep.alphas:
        _fail(path, raw["sweep"]["alphas"][1], "alpha = 1 is not allowed in a sweep")
    output = _convert(raw, "output", path).get("dir", "runs/out")
    return RunConfig(env, obj, train, variance, sweep, output)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    return parse_text(path.read_text(), str(path))


def default_config(env: str = "set", objective: str = "revkl") -> RunConfig:
    return parse_text(f"env = {env}\nobjective = {objective}\n")


def with_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply ``section.key=value`` overrides by re-parsing through the schema."""
    text = _to_text(cfg)
    extra: dict = {}
    for pair in pairs:
        if "=" not in pair or "." not in pair.split("=", 1)[0]:
            raise ConfigError(f"override {pair!r} must look like section.key=value")
        lhs, value = pair.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        extra.setdefault(section, {})[key] = value.strip()
    return parse_text(_merge_text(text, extra), "<overrides>")


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def _to_text(cfg: RunConfig) -> dict:
    out: dict = {}
    for section in ("env", "objective", "train", "variance", "sweep"):
        sec = getattr(cfg, section)
        out[section] = {f.name: _fmt(getattr(sec, f.name)) for f in fields(sec) if getattr(sec, f.name) is not None}
    out["output"] = {"dir": cfg.output}
    return out


def _merge_text(base: dict, extra: dict) -> str:
    # a changed env kind resets the env-specific defaults
    if "kind" in extra.get("env", {}) and extra["env"]["kind"] != base["env"].get("kind"):
        base["env"] = {"kind": extra["env"]["kind"], "seed": base["env"].get("seed", "0")}
    if "kind" in extra.get("env", {}) and "batch" not in extra.get("train", {}):
        base["train"].pop("batch", None)
    lines = []
    for section in sorted(set(base) | set(extra)):
        lines.append(f"[{section}]")
        merged = dict(base.get(section, {}))
        merged.update(extra.get(section, {}))
        lines.extend(f"{k} = {v}" for k, v in merged.items())
    return "\n".join(lines) + "\n"
