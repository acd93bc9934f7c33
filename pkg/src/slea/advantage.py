"""Episode- and step-level group-relative advantages and the clipped objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numpy as np

from .exceptions import InvalidArgumentError, NumericError
from .rollout import Trajectory


@dataclass(frozen=True)
class OptimConfig:
    gamma: float = 0.95
    epsilon_clip: float = 0.2
    beta_kl: float = 0.01
    w: float = 1.0
    learning_rate: float = 1.0
    std_floor: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise InvalidArgumentError("gamma must lie in (0, 1]")
        if self.epsilon_clip <= 0:
            raise InvalidArgumentError("epsilon_clip must be > 0")
        if self.beta_kl < 0 or self.w < 0:
            raise InvalidArgumentError("beta_kl and w must be >= 0")
        if self.learning_rate <= 0 or self.std_floor <= 0:
            raise InvalidArgumentError("learning_rate and std_floor must be > 0")


@dataclass
class StepGroup:
    cluster_id: Hashable
    members: list[tuple[int, int, str, float]] = field(default_factory=list)


@dataclass
class AdvantageTable:
    episode: list[float]
    step: list[list[float]]
    combined: list[list[float]]
    w: float


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    if not 0.0 < gamma <= 1.0:
        raise InvalidArgumentError("gamma must lie in (0, 1]")
    out = [0.0] * len(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def _normalize(values: Sequence[float], std_floor: float) -> list[float]:
    x = np.asarray(values, dtype=float)
    mean = x.mean()
    std = math.sqrt(float(((x - mean) ** 2).mean()))
    if std < std_floor:
        return [0.0] * len(x)
    return ((x - mean) / std).tolist()


def episode_advantages(rewards: Sequence[float], std_floor: float = 1e-8) -> list[float]:
    """Group-normalized trajectory rewards (population std)."""
    if len(rewards) < 2:
        raise InvalidArgumentError("episode advantages need a group of at least 2")
    return _normalize(rewards, std_floor)


def step_groups(trajectories: Sequence[Trajectory], gamma: float = 0.95) -> list[StepGroup]:
    """Group every step of the rollout group by its cluster, members in (i, t) order."""
    groups: dict = {}
    for i, traj in enumerate(trajectories):
        returns = discounted_returns(traj.rewards, gamma)
        for t, step in enumerate(traj.steps):
            if step.cluster_id is None:
                raise InvalidArgumentError(f"step ({i}, {t}) has no cluster assignment")
            group = groups.get(step.cluster_id)
            if group is None:
                group = groups[step.cluster_id] = StepGroup(step.cluster_id)
            group.members.append((i, t, step.action, returns[t]))
    return list(groups.values())


def step_advantages(group: StepGroup, std_floor: float = 1e-8) -> list[float]:
    if len(group.members) < 2:
        return [0.0] * len(group.members)
    return _normalize([m[3] for m in group.members], std_floor)


def step_table(trajectories: Sequence[Trajectory], groups: Sequence[StepGroup], std_floor: float) -> list[list[float]]:
    table = [[0.0] * len(traj.steps) for traj in trajectories]
    for group in groups:
        for (i, t, _, _), adv in zip(group.members, step_advantages(group, std_floor)):
            table[i][t] = adv
    return table


def combine(episode: Sequence[float], step: Sequence[Sequence[float]], w: float) -> AdvantageTable:
    if len(episode) != len(step):
        raise InvalidArgumentError(f"shape mismatch: {len(episode)} episode rows vs {len(step)} step rows")
    combined = [[episode[i] + w * a for a in row] for i, row in enumerate(step)]
    return AdvantageTable(list(episode), [list(r) for r in step], combined, w)


def advantage_table(trajectories: Sequence[Trajectory], cfg: OptimConfig) -> AdvantageTable:
    episode = episode_advantages([t.terminal_reward for t in trajectories], cfg.std_floor)
    groups = step_groups(trajectories, cfg.gamma)
    return combine(episode, step_table(trajectories, groups, cfg.std_floor), cfg.w)


@dataclass
class ObjectiveResult:
    value: float
    grad: Optional[np.ndarray]
    mean_ratio: float
    clip_fraction: float
    kl: float
    per_step: list[dict]


def _surrogate(ratio: float, adv: float, eps: float) -> tuple[float, bool]:
    """Return the clipped surrogate and whether the unclipped branch is the minimum."""
    unclipped = ratio * adv
    clipped = min(max(ratio, 1.0 - eps), 1.0 + eps) * adv
    if unclipped <= clipped:
        return unclipped, True
    return clipped, False


def evaluate_objective(
    trajectories: Sequence[Trajectory],
    table: AdvantageTable,
    policy,
    policy_ref,
    cfg: OptimConfig,
    theta: Optional[np.ndarray] = None,
    with_grad: bool = True,
) -> ObjectiveResult:
    """Clipped surrogate averaged per trajectory then over the group, minus beta * mean KL.

    ``policy`` must provide ``features(prompt)`` and ``log_probs(prompt, theta)``;
    ``policy_ref`` only ``log_probs(prompt)``.
    """
    theta = policy.theta if theta is None else theta
    G = len(trajectories)
    if G == 0:
        raise InvalidArgumentError("objective needs at least one trajectory")
    grad = np.zeros_like(theta) if with_grad else None
    surrogate_total = 0.0
    kl_total = 0.0
    n_steps = 0
    n_clipped = 0
    ratio_total = 0.0
    per_step = []
    kl_grad = np.zeros_like(theta) if with_grad else None

    for i, traj in enumerate(trajectories):
        T = len(traj.steps)
        traj_sum = 0.0
        for t, step in enumerate(traj.steps):
            if step.log_prob_old is None:
                raise NumericError(f"missing log_prob_old at step ({i}, {t})")
            a = policy.actions.index(step.action)
            logp = policy.log_probs(step.prompt, theta)
            ratio = math.exp(logp[a] - step.log_prob_old)
            adv = table.combined[i][t]
            value, unclipped = _surrogate(ratio, adv, cfg.epsilon_clip)
            probs = np.exp(logp)
            ref_logp = policy_ref.log_probs(step.prompt)
            kl = float(probs @ (logp - ref_logp))
            if not (math.isfinite(value) and math.isfinite(kl)):
                raise NumericError(f"non-finite objective term at step ({i}, {t})")
            traj_sum += value
            kl_total += kl
            ratio_total += ratio
            n_clipped += not unclipped
            n_steps += 1
            per_step.append({"i": i, "t": t, "ratio": ratio, "advantage": adv, "surrogate": value, "kl": kl})
            if with_grad:
                phi = policy.features(step.prompt)
                centered = phi - probs @ phi
                if unclipped:
                    grad += (adv * ratio / (G * T)) * centered[a]
                kl_grad += (probs * (logp - ref_logp)) @ centered
        surrogate_total += traj_sum / T
    mean_kl = kl_total / n_steps
    value = surrogate_total / G - cfg.beta_kl * mean_kl
    if with_grad:
        grad -= cfg.beta_kl * kl_grad / n_steps
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite gradient")
    return ObjectiveResult(value, grad, ratio_total / n_steps, n_clipped / n_steps, mean_kl, per_step)


def objective(trajectories, table, policy, policy_ref, cfg: OptimConfig) -> tuple[float, list[dict]]:
    res = evaluate_objective(trajectories, table, policy, policy_ref, cfg, with_grad=False)
    return res.value, res.per_step


def grad_step(policy, trajectories, table, policy_ref, cfg: OptimConfig) -> ObjectiveResult:
    """One gradient-ascent step on the objective; mutates ``policy.theta``."""
    res = evaluate_objective(trajectories, table, policy, policy_ref, cfg)
    policy.theta = policy.theta + cfg.learning_rate * res.grad
    return res
