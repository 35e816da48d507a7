"""Experiment configuration: a flat INI file with typed sections.

The schema is documented in docs/config_schema.md and exercised by the
shipped presets. Unknown keys fail loudly with the section and key named, so
typos do not silently fall back to defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from delayopt.core import ContractError
from delayopt.delays import DelaySchedule
from delayopt.optimizers import AlgorithmConfig, make_algorithm


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names section and key."""


@dataclass
class DelaySpec:
    kind: str = "constant"
    d: int = 0
    d_max: int = 0
    lam: float = 1.0
    d_high: int = 40
    block_len: int = 10

    def schedule(self, seed: int) -> DelaySchedule:
        return DelaySchedule(kind=self.kind, d=self.d, d_max=self.d_max, lam=self.lam,
                             d_high=self.d_high, block_len=self.block_len, seed=seed)

    def describe(self) -> str:
        return self.schedule(0).describe()


@dataclass
class StabilitySettings:
    eta_lo: float = 1e-4
    eta_hi: float = 8.0
    resolution: float = 0.001
    horizon: int = 500
    delays: list[int] = field(default_factory=lambda: [1, 10, 20, 40])


@dataclass
class CompareSettings:
    treatment: str = ""
    control: str = ""


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    environment: str = "hard_quadratic"
    env_args: dict[str, Any] = field(default_factory=dict)
    rounds: int = 100
    seeds: list[int] = field(default_factory=lambda: [0])
    summary_window: int = 200
    out_dir: str = "results"
    delays: list[DelaySpec] = field(default_factory=lambda: [DelaySpec()])
    algorithms: list[AlgorithmConfig] = field(default_factory=list)
    stability: Optional[StabilitySettings] = None
    compare: Optional[CompareSettings] = None

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError("[experiment] rounds must be >= 1")
        if not self.seeds:
            raise ConfigError("[experiment] seeds must be non-empty")
        if not self.algorithms:
            raise ConfigError("at least one [algorithm.*] section is required")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigError("algorithm names must be unique")
        if self.compare is not None:
            for role, nm in (("treatment", self.compare.treatment), ("control", self.compare.control)):
                if nm not in names:
                    raise ConfigError(f"[compare] {role} {nm!r} does not match any [algorithm.*] section")

    def hash(self) -> str:
        """Stable digest of the full configuration for CSV headers."""
        blob = io.StringIO()
        for f in dataclasses.fields(self):
            blob.write(f"{f.name}={getattr(self, f.name)!r}\n")
        return hashlib.sha256(blob.getvalue().encode()).hexdigest()[:12]


_INT_KEYS = {"rounds", "summary_window", "d", "d_max", "d_high", "block_len", "horizon"}
_FLOAT_KEYS = {"lam", "eta_lo", "eta_hi", "resolution"}


def _coerce(value: str) -> Any:
    text = value.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _int_list(text: str, where: str) -> list[int]:
    try:
        return [int(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"{where}: expected a list of integers, got {text!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    cfg = ExperimentConfig(algorithms=[])
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key == "name":
                cfg.name = raw.strip()
            elif key == "environment":
                cfg.environment = raw.strip()
            elif key == "rounds":
                cfg.rounds = int(raw)
            elif key == "seeds":
                cfg.seeds = _int_list(raw, "[experiment] seeds")
            elif key == "summary_window":
                cfg.summary_window = int(raw)
            elif key == "out":
                cfg.out_dir = raw.strip()
            else:
                raise ConfigError(f"[experiment] unknown key {key!r}")

    if parser.has_section("environment.args"):
        cfg.env_args = {k: _coerce(v) for k, v in parser.items("environment.args")}

    if parser.has_section("delay"):
        spec = DelaySpec()
        sweep: Optional[list[int]] = None
        for key, raw in parser.items("delay"):
            if key == "sweep":
                sweep = _int_list(raw, "[delay] sweep")
            elif key in ("kind",):
                spec.kind = raw.strip()
            elif key in _INT_KEYS:
                setattr(spec, key, int(raw))
            elif key in _FLOAT_KEYS:
                setattr(spec, key, float(raw))
            else:
                raise ConfigError(f"[delay] unknown key {key!r}")
        if sweep is not None:
            if spec.kind != "constant":
                raise ConfigError("[delay] sweep lists are only supported for constant delays")
            cfg.delays = [dataclasses.replace(spec, d=d) for d in sweep]
        else:
            cfg.delays = [spec]

    for section in parser.sections():
        if not section.startswith("algorithm."):
            continue
        label = section.split(".", 1)[1]
        items = dict(parser.items(section))
        kind = items.pop("kind", label)
        overrides: dict[str, Any] = {}
        for key, raw in items.items():
            if key not in {f.name for f in dataclasses.fields(AlgorithmConfig)}:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            val = _coerce(raw)
            if key == "clip_norm" and isinstance(val, str) and val.lower() == "none":
                val = None
            overrides[key] = val
        try:
            algo = make_algorithm(kind, **overrides)
        except (ContractError, TypeError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
        algo = dataclasses.replace(algo, name=label)
        cfg.algorithms.append(algo)

    if parser.has_section("stability"):
        st = StabilitySettings()
        for key, raw in parser.items("stability"):
            if key == "delays":
                st.delays = _int_list(raw, "[stability] delays")
            elif key in ("eta_lo", "eta_hi", "resolution"):
                setattr(st, key, float(raw))
            elif key == "horizon":
                st.horizon = int(raw)
            else:
                raise ConfigError(f"[stability] unknown key {key!r}")
        cfg.stability = st

    if parser.has_section("compare"):
        cmp_ = CompareSettings()
        for key, raw in parser.items("compare"):
            if key in ("treatment", "control"):
                setattr(cmp_, key, raw.strip())
            else:
                raise ConfigError(f"[compare] unknown key {key!r}")
        cfg.compare = cmp_

    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    return parse_config(text)


def apply_env_overrides(cfg: ExperimentConfig, environ=os.environ) -> ExperimentConfig:
    """DELAYOPT_OUT and DELAYOPT_SEEDS mirror the corresponding CLI flags."""
    out = environ.get("DELAYOPT_OUT")
    seeds = environ.get("DELAYOPT_SEEDS")
    if out:
        cfg.out_dir = out
    if seeds:
        cfg.seeds = _int_list(seeds, "DELAYOPT_SEEDS")
    return cfg
