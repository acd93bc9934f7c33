"""Run configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .exceptions import ConfigError
from .rollout import RetrievalMode

ALGORITHMS = ("grpo", "step_credit_only", "slea", "slea_task")


@dataclass
class RunConfig:
    seed: int = 0
    algorithm: str = "slea"
    # rollout / optimisation
    G: int = 8
    epochs: int = 60
    tasks_per_epoch: int = 4
    gamma: float = 0.95
    epsilon_clip: float = 0.2
    beta_kl: float = 0.01
    w: float = 1.0
    learning_rate: float = 1.0
    std_floor: float = 1e-8
    # retrieval
    delta: float = 0.85
    best_match: bool = False
    W: int = 5
    C_min: int = 10
    k_plus: int = 2
    k_minus: int = 1
    k_fallback: int = 3
    B_max: int = 200
    # library evolution
    capacities: dict = field(default_factory=lambda: {"strategy": 100, "warning": 50})
    novelty_threshold: float = 0.85
    K_traj: int = 5
    K_strat: int = 10
    K_warn: int = 5
    eta: Union[str, float] = "batch_median"
    evolve_every: int = 1
    extractor: str = "rule_based"
    extractor_timeout: float = 30.0
    extractor_retries: int = 2
    # environment
    env: str = "keychest"
    n_rooms: int = 6
    t_max: int = 20
    variant: str = "standard"
    # evaluation / output
    n_val_tasks: int = 32
    dump_trajectories: bool = False
    output_dir: Optional[str] = None

    @property
    def mode(self) -> RetrievalMode:
        return {
            "grpo": RetrievalMode.OFF,
            "step_credit_only": RetrievalMode.OFF,
            "slea": RetrievalMode.STEP,
            "slea_task": RetrievalMode.TASK,
        }[self.algorithm]

    @property
    def effective_w(self) -> float:
        return 0.0 if self.algorithm == "grpo" else self.w

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        need(self.env == "keychest", f"unknown env {self.env!r}")
        need(self.variant in ("standard", "long"), f"unknown variant {self.variant!r}")
        need(self.n_rooms >= 3, "n_rooms must be >= 3")
        need(self.t_max >= 1, "t_max must be >= 1")
        need(self.G >= 2, "G must be >= 2 for training")
        need(self.epochs >= 0 and self.tasks_per_epoch >= 1, "epochs >= 0 and tasks_per_epoch >= 1 required")
        need(0.0 < self.gamma <= 1.0, "gamma must lie in (0, 1]")
        need(self.epsilon_clip > 0 and self.learning_rate > 0 and self.std_floor > 0,
             "epsilon_clip, learning_rate and std_floor must be > 0")
        need(self.beta_kl >= 0 and self.w >= 0, "beta_kl and w must be >= 0")
        need(0.0 < self.delta <= 1.0, "delta must lie in (0, 1]")
        need(0.0 < self.novelty_threshold <= 1.0, "novelty_threshold must lie in (0, 1]")
        need(min(self.W, self.C_min, self.k_plus, self.k_minus, self.k_fallback, self.B_max) >= 0,
             "retrieval settings must be >= 0")
        need(set(self.capacities) == {"strategy", "warning"}, "capacities needs keys 'strategy' and 'warning'")
        need(all(isinstance(v, int) and v >= 1 for v in self.capacities.values()), "capacities must be positive integers")
        need(min(self.K_traj, self.K_strat, self.K_warn, self.evolve_every) >= 1, "K_* and evolve_every must be >= 1")
        need(self.eta == "batch_median" or isinstance(self.eta, (int, float)), "eta must be 'batch_median' or a number")
        need(self.extractor in ("rule_based", "external"), f"unknown extractor {self.extractor!r}")
        need(self.n_val_tasks >= 0, "n_val_tasks must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc).validate()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(doc)

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()

    def env_params(self) -> dict:
        return {"env": self.env, "n_rooms": self.n_rooms, "t_max": self.t_max, "variant": self.variant}
