"""Experiment configuration: dataclasses plus an INI-style loader.

A config file has up to seven sections. Every key is optional and values
are Python literals (numbers, booleans, lists, tuples) or bare words.

    [experiment]   experiment, episodes, eval_every, eval_runs, seed, ...
    [plant]        preset (siso | miso) followed by PlantConfig field overrides
    [disturbance]  DisturbanceProfile fields
    [pid]          PidGains fields
    [td3]          Td3Config fields
    [variant]      name, or pretrain / training / controller / specialized
    [iohmm]        n_states, restarts, tolerance, max_iters
"""
from __future__ import annotations

import ast
import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import plant as P
from .pid import PidGains
from .td3 import Td3Config

EXPERIMENTS = ("exp1_sync", "exp2_activation", "exp3_ablation")
PRETRAIN = ("none", "bc", "col")
TRAINING = ("none", "q+a", "col")
CONTROLLERS = ("expert", "agent", "expert+agent")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Variant:
    name: str
    pretrain: str = "none"
    training: str = "none"
    controller: str = "expert"
    specialized: bool = False

    @property
    def key(self) -> tuple:
        return (self.pretrain, self.training, self.controller, self.specialized)

    @property
    def residual(self) -> bool:
        return self.controller == "expert+agent"

    @property
    def mode(self) -> str:
        return {"expert": "pid_only", "agent": "drl_only", "expert+agent": "residual"}[self.controller]


# the ablation matrix, one row per (pretrain, training, controller, specialized) tuple
VARIANTS = (
    Variant("CoL+SRPTD3", "col", "col", "expert+agent", True),
    Variant("BC+SRPTD3", "bc", "q+a", "expert+agent", True),
    Variant("SRPTD3", "none", "q+a", "expert+agent", True),
    Variant("STD3", "none", "q+a", "agent", True),
    Variant("BC+STD3", "bc", "q+a", "agent", True),
    Variant("PID", "none", "none", "expert", False),
    Variant("CoL+STD3", "col", "col", "agent", True),
    Variant("CoL", "col", "col", "agent", False),
    Variant("CoL+RPTD3", "col", "col", "expert+agent", False),
    Variant("BC", "bc", "none", "agent", False),
    Variant("TD3", "none", "q+a", "agent", False),
    Variant("BC+TD3", "bc", "q+a", "agent", False),
    Variant("BC+RPTD3", "bc", "q+a", "expert+agent", False),
    Variant("RPTD3", "none", "q+a", "expert+agent", False),
)
_BY_NAME = {v.name: v for v in VARIANTS}
_BY_KEY = {v.key: v for v in VARIANTS}


def variant(name: str) -> Variant:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; known: {', '.join(_BY_NAME)}") from None


def variant_from_tuple(pretrain: str, training: str, controller: str, specialized: bool) -> Variant:
    for val, allowed, what in ((pretrain, PRETRAIN, "pretrain"), (training, TRAINING, "training"),
                               (controller, CONTROLLERS, "controller")):
        if val not in allowed:
            raise ConfigError(f"{what} must be one of {allowed}, got {val!r}")
    try:
        return _BY_KEY[(pretrain, training, controller, bool(specialized))]
    except KeyError:
        raise ConfigError(f"({pretrain}, {training}, {controller}, specialized={specialized}) "
                          "is not a row of the ablation matrix") from None


@dataclass
class IohmmSettings:
    n_states: int = 4
    restarts: int = 5
    tolerance: float = 10.0
    max_iters: int = 100


@dataclass
class ExperimentConfig:
    experiment: str = "exp1_sync"
    plant: P.PlantConfig = field(default_factory=P.siso_config)
    disturbance: P.DisturbanceProfile = field(
        default_factory=lambda: P.DisturbanceProfile(0.65, rng_window=((50, 250), (250, 450))))
    pid: PidGains = field(default_factory=PidGains)
    td3: Td3Config = field(default_factory=lambda: Td3Config(lr_actor=1e-3, reward_scale=0.1))
    iohmm: IohmmSettings = field(default_factory=IohmmSettings)
    variant: Variant | None = None
    episodes: int = 150
    eval_every: int = 5
    eval_runs: int = 10
    # periodic checks on held-out seeds; keep_best restores the best-scoring actor
    trace_runs: int = 3
    keep_best: bool = True
    seed: int = 0
    # magnitudes evaluated in addition to the trained one
    eval_magnitudes: tuple = (0.65, 0.70)
    expert_episodes: int = 5
    pretrain_steps: int = 2000
    value_steps: int = 2000
    expert_ratio: float = 0.25
    init_fraction: float = 0.1
    # agent-buffer fill before online updates start
    learn_start: int = 48
    # first online updates fit the critics to the pretrained policy, actor frozen
    critic_warmup: int = 0
    variants: tuple = ()

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        for name in ("episodes", "expert_episodes", "pretrain_steps", "value_steps", "learn_start",
                     "critic_warmup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.eval_runs < 1 or self.eval_every < 1 or self.trace_runs < 1:
            raise ConfigError("eval_runs, eval_every and trace_runs must be >= 1")
        if not 0.0 <= self.expert_ratio <= 1.0:
            raise ConfigError("expert_ratio must lie in [0, 1]")
        if not 0.0 <= self.init_fraction < 1.0:
            raise ConfigError("init_fraction must lie in [0, 1)")
        try:
            self.plant.validate()
            self.disturbance.validate(self.plant.n_steps, self.plant.m_y)
        except P.PlantError as e:
            raise ConfigError(str(e)) from None
        for name in self.variants:
            variant(name)


def exp1_config(**kw) -> ExperimentConfig:
    return ExperimentConfig(**kw)


def miso_disturbance(magnitude: float = 0.65) -> P.DisturbanceProfile:
    # starts in the first half and lasts until the end of the episode
    return P.DisturbanceProfile(magnitude, rng_window=((25, 125), (250, 251)))


def exp2_config(**kw) -> ExperimentConfig:
    base = dict(experiment="exp2_activation", plant=P.miso_config(), disturbance=miso_disturbance(),
                episodes=50, eval_magnitudes=(0.65,), variant=variant("CoL+SRPTD3"))
    base.update(kw)
    return ExperimentConfig(**base)


def exp3_config(**kw) -> ExperimentConfig:
    base = dict(experiment="exp3_ablation", plant=P.miso_config(), disturbance=miso_disturbance(),
                episodes=300, eval_magnitudes=(0.65,), variants=tuple(v.name for v in VARIANTS))
    base.update(kw)
    return ExperimentConfig(**base)


PRESETS = {"exp1_sync": exp1_config, "exp2_activation": exp2_config, "exp3_ablation": exp3_config}


def _literal(raw: str):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw.strip()


def _apply(obj, section: str, items: dict, path):
    names = {f.name for f in fields(obj)}
    kw = {}
    for k, raw in items.items():
        if k not in names:
            raise ConfigError(f"{path}: unknown key {k!r} in [{section}]; allowed: {', '.join(sorted(names))}")
        kw[k] = _literal(raw)
    try:
        return replace(obj, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: bad value in [{section}]: {e}") from None


SECTIONS = ("experiment", "plant", "disturbance", "pid", "td3", "variant", "iohmm")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path)
    except configparser.Error as e:
        raise ConfigError(f"{path}: malformed config: {e}") from None
    for s in cp.sections():
        if s not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{s}]; allowed: {', '.join(SECTIONS)}")
    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    kind = _literal(exp.get("experiment", "exp1_sync"))
    if kind not in PRESETS:
        raise ConfigError(f"{path}: experiment must be one of {EXPERIMENTS}, got {kind!r}")
    cfg = PRESETS[kind]()

    if cp.has_section("plant"):
        items = dict(cp["plant"])
        preset = _literal(items.pop("preset", "siso" if kind == "exp1_sync" else "miso"))
        if preset not in ("siso", "miso"):
            raise ConfigError(f"{path}: plant preset must be siso or miso, got {preset!r}")
        base = P.siso_config() if preset == "siso" else P.miso_config()
        cfg.plant = _apply(base, "plant", items, path)
        cfg.plant.__post_init__()
    if cp.has_section("disturbance"):
        cfg.disturbance = _apply(cfg.disturbance, "disturbance", dict(cp["disturbance"]), path)
    if cp.has_section("pid"):
        cfg.pid = _apply(cfg.pid, "pid", dict(cp["pid"]), path)
    if cp.has_section("td3"):
        try:
            cfg.td3 = _apply(cfg.td3, "td3", dict(cp["td3"]), path)
        except Exception as e:
            raise ConfigError(str(e)) from None
    if cp.has_section("iohmm"):
        cfg.iohmm = _apply(cfg.iohmm, "iohmm", dict(cp["iohmm"]), path)
    if cp.has_section("variant"):
        items = {k: _literal(v) for k, v in cp["variant"].items()}
        if "name" in items:
            cfg.variant = variant(str(items["name"]))
        else:
            cfg.variant = variant_from_tuple(items.get("pretrain", "none"), items.get("training", "none"),
                                             items.get("controller", "expert"),
                                             bool(items.get("specialized", False)))
    cfg = _apply(cfg, "experiment", exp, path)
    cfg.variants = tuple(cfg.variants)
    cfg.eval_magnitudes = tuple(cfg.eval_magnitudes)
    cfg.validate()
    return cfg


def read_matrix(path) -> list[Variant]:
    """Variant names, one per line; blank lines and '#' comments are ignored."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"matrix file not found: {path}")
    out = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            out.append(variant(line))
    if not out:
        raise ConfigError(f"matrix file {path} lists no variants")
    return out
