"""Experience-augmented episodes against abstract environments and policies."""

from __future__ import annotations

import abc
import enum
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np

from .clustering import EMPTY_SET, ClusterIndex, ExperienceSet, RetrievalSource, retrieve_step
from .exceptions import InvalidArgumentError
from .library import ExperienceLibrary
from .rng import SplitMix64

STRATEGY_HEADER = "[Helpful Strategies]"
WARNING_HEADER = "[Common Pitfalls]"


class RetrievalMode(str, enum.Enum):
    STEP = "step"
    TASK = "task"
    OFF = "off"


class Environment(abc.ABC):
    """Deterministic episodic text environment."""

    #: set by ``step`` when the episode ended on the environment's own step limit
    truncated: bool = False

    @abc.abstractmethod
    def reset(self, task_seed: int) -> tuple[str, str]:
        """Start a task; return ``(task description, initial observation)``."""

    @abc.abstractmethod
    def step(self, action: str) -> tuple[str, float, bool]:
        """Apply ``action``; return ``(observation, reward, done)``."""

    @abc.abstractmethod
    def action_set(self) -> list[str]:
        ...


class Policy(abc.ABC):
    """Stochastic policy over a finite action set."""

    actions: list[str]

    @abc.abstractmethod
    def log_probs(self, prompt: "AugmentedPrompt") -> np.ndarray:
        """Log-probabilities over ``self.actions``."""

    def sample(self, prompt: "AugmentedPrompt", rng: SplitMix64) -> int:
        probs = np.exp(self.log_probs(prompt))
        u = rng.random()
        cdf = 0.0
        for k, p in enumerate(probs):
            cdf += p
            if u < cdf:
                return k
        return len(probs) - 1

    def greedy(self, prompt: "AugmentedPrompt", rng: SplitMix64) -> int:
        """Argmax action; exact ties are broken uniformly with ``rng``."""
        logp = self.log_probs(prompt)
        best = np.flatnonzero(logp == logp.max())
        if len(best) == 1:
            return int(best[0])
        return int(best[rng.randrange(len(best))])


@dataclass(frozen=True)
class AugmentedPrompt:
    system_segment: str
    observation_segment: str
    task_segment: str


@dataclass
class Step:
    observation: str
    prompt: AugmentedPrompt
    action: str
    log_prob_old: float
    reward: float
    retrieved: ExperienceSet = EMPTY_SET
    cluster_id: Optional[int] = None


@dataclass
class Trajectory:
    task: str
    steps: list[Step] = field(default_factory=list)
    terminal_reward: float = 0.0
    truncated: bool = False
    task_seed: Optional[int] = None
    task_cluster_id: Optional[int] = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]

    def visited_clusters(self) -> list[int]:
        """Distinct cluster ids touched by this trajectory, in first-visit order."""
        seen = []
        for cid in [self.task_cluster_id] + [s.cluster_id for s in self.steps]:
            if cid is not None and cid not in seen:
                seen.append(cid)
        return seen

    def to_dict(self) -> dict:
        return {
            "task_seed": self.task_seed,
            "terminal_reward": self.terminal_reward,
            "truncated": self.truncated,
            "steps": [
                {
                    "obs": s.prompt.observation_segment,
                    "sys": s.prompt.system_segment,
                    "action": s.action,
                    "logp_old": s.log_prob_old,
                    "reward": s.reward,
                    "cluster_id": s.cluster_id,
                    "retrieved_ids": s.retrieved.ids,
                }
                for s in self.steps
            ],
        }


def retrieval_gate(epoch: int, library_size: int, warmup: int, min_library: int) -> bool:
    """Retrieval is on once ``epoch >= warmup`` and the library holds more than ``min_library`` entries."""
    return epoch >= warmup and library_size > min_library


def _template() -> tuple[str, str, str]:
    text = resources.files("slea.prompts").joinpath("prompt_a.txt").read_text(encoding="utf-8")
    head, rest = text.split("{retrieved_golden_strategies}")
    middle, tail = rest.split("{retrieved_warnings}")
    return head, middle, tail.rstrip("\n")


_HEAD, _MIDDLE, _TAIL = _template()


def _render(strategies, warnings) -> str:
    def block(entries):
        return "\n".join(f"- {e.text}" for e in entries) if entries else "(none)"

    return _HEAD + block(strategies) + _MIDDLE + block(warnings) + _TAIL


def count_tokens(text: str) -> int:
    return len(text.split())


def render_experiences(eset: ExperienceSet, budget: int) -> str:
    """Render the retrieved set into the system segment within ``budget`` tokens.

    Whole experiences are dropped lowest score first (warnings before
    strategies on equal score, newer before older) until the text fits.
    """
    if budget < 0:
        raise InvalidArgumentError("token budget must be >= 0")
    strategies = sorted(eset.strategies, key=lambda e: (-e.score, e.id))
    warnings = sorted(eset.warnings, key=lambda e: (-e.score, e.id))
    drop_order = sorted(
        [(e.score, 0, -e.id, e) for e in warnings] + [(e.score, 1, -e.id, e) for e in strategies],
        key=lambda t: t[:3],
    )
    dropped = set()
    for _, _, _, victim in [(None, None, None, None)] + drop_order:
        if victim is not None:
            dropped.add(victim.id)
        kept_s = [e for e in strategies if e.id not in dropped]
        kept_w = [e for e in warnings if e.id not in dropped]
        if not kept_s and not kept_w:
            return ""
        text = _render(kept_s, kept_w)
        if count_tokens(text) <= budget:
            return text
    return ""


def augment(obs: str, task: str, eset: ExperienceSet, budget: int) -> AugmentedPrompt:
    if not obs:
        raise InvalidArgumentError("observation must be non-empty")
    return AugmentedPrompt(render_experiences(eset, budget), obs, task)


@dataclass(frozen=True)
class RetrievalSettings:
    k_plus: int = 2
    k_minus: int = 1
    k_fallback: int = 3
    budget: int = 200


def run_episode(
    env: Environment,
    policy: Policy,
    index: ClusterIndex,
    lib: ExperienceLibrary,
    gate: bool,
    mode: RetrievalMode | str,
    rng: SplitMix64,
    t_max: int,
    task_seed: int,
    retrieval: RetrievalSettings = RetrievalSettings(),
    greedy: bool = False,
) -> Trajectory:
    """Roll out one episode. The index and library are only read."""
    if t_max < 1:
        raise InvalidArgumentError("t_max must be >= 1")
    mode = RetrievalMode(mode)
    task, obs = env.reset(task_seed)
    traj = Trajectory(task=task, task_seed=task_seed)

    def fetch(text):
        return retrieve_step(
            index, lib, text, retrieval.k_plus, retrieval.k_minus, retrieval.k_fallback, mutate=False
        )

    frozen = fetch(task) if gate and mode is RetrievalMode.TASK else EMPTY_SET
    done = False
    while not done and len(traj.steps) < t_max:
        if gate and mode is RetrievalMode.STEP:
            eset = fetch(obs)
        else:
            eset = frozen
        prompt = augment(obs, task, eset, retrieval.budget)
        logp = policy.log_probs(prompt)
        a = policy.greedy(prompt, rng) if greedy else policy.sample(prompt, rng)
        action = policy.actions[a]
        next_obs, reward, done = env.step(action)
        traj.steps.append(Step(obs, prompt, action, float(logp[a]), float(reward), eset))
        obs = next_obs

    traj.terminal_reward = float(sum(traj.rewards))
    traj.truncated = (not done) or bool(getattr(env, "truncated", False))
    return traj


def replay_assignments(
    trajectories: Sequence[Trajectory],
    index: ClusterIndex,
    mode: RetrievalMode | str = RetrievalMode.STEP,
) -> None:
    """Assign recorded observations to clusters in trajectory order.

    Fallback retrievals made during rollout are linked to the cluster the
    observation lands in, so later rollouts reuse them from the pool.
    """
    mode = RetrievalMode(mode)
    for traj in trajectories:
        if mode is RetrievalMode.TASK:
            first = traj.steps[0].retrieved if traj.steps else EMPTY_SET
            traj.task_cluster_id = _assign_and_link(index, traj.task, first)
        for step in traj.steps:
            eset = step.retrieved if mode is RetrievalMode.STEP else EMPTY_SET
            step.cluster_id = _assign_and_link(index, step.observation, eset)


def _assign_and_link(index: ClusterIndex, text: str, eset: ExperienceSet) -> int:
    cid, _ = index.assign(text)
    if eset.source is RetrievalSource.FALLBACK:
        for e in eset.strategies + eset.warnings:
            index.link(cid, e)
    return cid


def run_group(
    env_factory: Callable[[], Environment],
    policy: Policy,
    index: ClusterIndex,
    lib: ExperienceLibrary,
    task_seed: int,
    group_size: int,
    rng: SplitMix64,
    gate: bool = False,
    mode: RetrievalMode | str = RetrievalMode.OFF,
    t_max: int = 20,
    retrieval: RetrievalSettings = RetrievalSettings(),
    greedy: bool = False,
    replay: bool = True,
) -> list[Trajectory]:
    """Roll out ``group_size`` episodes of one task, then replay cluster assignment."""
    if group_size < 1:
        raise InvalidArgumentError("group size must be >= 1")
    streams = [rng.spawn() for _ in range(group_size)]
    lib_before, index_before = lib.mutations, index.mutations
    trajectories = [
        run_episode(env_factory(), policy, index, lib, gate, mode, s, t_max, task_seed, retrieval, greedy)
        for s in streams
    ]
    assert lib.mutations == lib_before and index.mutations == index_before, "rollout mutated shared state"
    if replay:
        replay_assignments(trajectories, index, mode)
    return trajectories
