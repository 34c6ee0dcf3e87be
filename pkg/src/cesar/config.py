"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Every error names the line it
comes from. Example::

    n = 48
    k = 3
    method = random
    beta_target = 0.30
    masking_requirement = 1
    rounds = 100
    seeds = 1, 2, 3, 4, 5
    output_dir = runs/k3
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .analysis import calibrate_alpha
from .errors import ConfigError, InvalidRegularity
from .protocol import Averaging, RoundConfig
from .sparsifier import Method, SelectionSpec
from .trainlab import Algorithm, PartitionMode, TrainConfig

OUTPUT_ENV = "CESAR_OUTPUT_DIR"


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.replace(",", " ").split())


# key -> parser; defaults live on ExperimentConfig
_PARSERS = {
    "n": int,
    "k": int,
    "graph_seed": int,
    "method": Method,
    "alpha": float,
    "beta_target": float,
    "masking_requirement": int,
    "averaging": Averaging,
    "features": int,
    "classes": int,
    "train_samples": int,
    "test_samples": int,
    "separation": float,
    "partition": PartitionMode,
    "lr": float,
    "batch_size": int,
    "local_steps": int,
    "rounds": int,
    "eval_every": int,
    "seeds": _int_list,
    "algorithms": lambda v: tuple(Algorithm(a) for a in _str_list(v)),
    "output_dir": str,
}


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 48
    k: int = 3
    graph_seed: int = 0
    method: Method = Method.RANDOM
    alpha: float | None = None
    beta_target: float | None = None
    masking_requirement: int = 1
    averaging: Averaging = Averaging.METROPOLIS_HASTINGS
    features: int = 32
    classes: int = 10
    train_samples: int = 4800
    test_samples: int = 2000
    separation: float = 3.0
    partition: PartitionMode = PartitionMode.NON_IID
    lr: float = 0.05
    batch_size: int = 8
    local_steps: int = 5
    rounds: int = 100
    eval_every: int = 10
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    algorithms: tuple[Algorithm, ...] = (Algorithm.CESAR, Algorithm.DPSGD)
    output_dir: str = "runs"

    @property
    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return calibrate_alpha(self.beta_target, self.k, self.masking_requirement)

    def round_config(self) -> RoundConfig:
        return RoundConfig(self.masking_requirement, SelectionSpec(self.method, self.resolved_alpha),
                           self.averaging)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.features, self.classes, self.train_samples, self.test_samples,
                           self.separation, self.partition, self.lr, self.batch_size, self.local_steps)

    def output_path(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def echo(self) -> str:
        """Resolved configuration in the same flat format; it parses back to the same run.

        A beta target is kept as a comment next to the alpha it resolved to.
        """
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "alpha":
                v = self.resolved_alpha
            if f.name == "beta_target":
                if v is not None:
                    lines.append(f"# beta_target = {v!r}")
                continue
            if isinstance(v, tuple):
                v = ", ".join(x.value if hasattr(x, "value") else str(x) for x in v)
            elif hasattr(v, "value"):
                v = v.value
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def validate(cfg: ExperimentConfig, lines: dict[str, int] | None = None) -> ExperimentConfig:
    lines = lines or {}

    def fail(msg: str, *keys: str, exc=ConfigError):
        line = next((lines[k] for k in keys if k in lines), None)
        raise exc(msg, line)

    if cfg.k < 0 or cfg.k >= cfg.n or (cfg.n * cfg.k) % 2:
        fail(f"no simple {cfg.k}-regular graph on {cfg.n} nodes (regularity needs n*k even and 0 <= k < n)",
             "k", "n", exc=InvalidRegularity)
    if cfg.masking_requirement < 1:
        fail("masking_requirement must be >= 1", "masking_requirement")
    if (cfg.alpha is None) == (cfg.beta_target is None):
        fail("give exactly one of alpha or beta_target", "alpha", "beta_target")
    if cfg.alpha is not None and not 0.0 < cfg.alpha <= 1.0:
        fail(f"alpha must be in (0, 1], got {cfg.alpha}", "alpha")
    if cfg.beta_target is not None:
        try:
            calibrate_alpha(cfg.beta_target, cfg.k, cfg.masking_requirement)
        except ConfigError as e:
            fail(str(e), "beta_target", exc=type(e))
    if cfg.rounds < 1 or cfg.eval_every < 1:
        fail("rounds and eval_every must be >= 1", "rounds", "eval_every")
    if not cfg.seeds:
        fail("seeds must not be empty", "seeds")
    if not cfg.algorithms:
        fail("algorithms must not be empty", "algorithms")
    if cfg.train_samples < 2 * cfg.n:
        fail(f"train_samples must be >= 2n = {2 * cfg.n}", "train_samples")
    try:
        cfg.train_config()
    except ConfigError as e:
        fail(str(e))
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {value!r} ({e})", lineno) from None
        lines[key] = lineno
    return validate(ExperimentConfig(**values), lines)


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())
