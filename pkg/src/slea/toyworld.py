"""KeyChest ring-of-rooms environment and a log-linear softmax policy."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import InvalidActionError, InvalidArgumentError
from .rng import SplitMix64
from .rollout import STRATEGY_HEADER, WARNING_HEADER, AugmentedPrompt, Environment, Policy

ACTIONS = ["left", "right", "pick", "open", "look"]
TASK_TEXT = "Find the key and open the chest."
# contents phrases differ in several tokens so rooms cluster by what they hold
KEY_PHRASE = "a small brass key"
CHEST_PHRASE = "a large locked chest"
CONTENTS = ("nothing", KEY_PHRASE, CHEST_PHRASE)
VARIANTS = ("standard", "long")


@dataclass
class KeyChestState:
    n_rooms: int
    agent_room: int
    key_room: int
    chest_room: int
    holding_key: bool = False
    opened: bool = False
    steps_used: int = 0


def layout(task_seed: int, n_rooms: int, variant: str = "standard") -> KeyChestState:
    """Draw the room layout for ``task_seed``."""
    if n_rooms < 3:
        raise InvalidArgumentError(f"KeyChest needs at least 3 rooms, got {n_rooms}")
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown KeyChest variant {variant!r}")
    rng = SplitMix64(task_seed)
    key = rng.randrange(n_rooms)
    if variant == "long":
        # chest roughly opposite the key on the ring
        offset = n_rooms // 2 - 1 + rng.randrange(3) if n_rooms >= 5 else n_rooms // 2
    else:
        offset = 1 + rng.randrange(n_rooms - 1)
    chest = (key + offset) % n_rooms
    agent = rng.randrange(n_rooms)
    return KeyChestState(n_rooms, agent, key, chest)


def render_observation(state: KeyChestState) -> str:
    r = state.agent_room
    if r == state.key_room and not state.holding_key:
        contents = KEY_PHRASE
    elif r == state.chest_room:
        contents = CHEST_PHRASE
    else:
        contents = "nothing"
    obs = f"You are in room {r + 1}. You see {contents}."
    if state.holding_key:
        obs += " You are holding the key."
    return obs


def transition(state: KeyChestState, action: str) -> float:
    """Apply ``action`` in place and return the reward."""
    if action == "left":
        state.agent_room = (state.agent_room - 1) % state.n_rooms
    elif action == "right":
        state.agent_room = (state.agent_room + 1) % state.n_rooms
    elif action == "pick":
        if state.agent_room == state.key_room and not state.holding_key:
            state.holding_key = True
    elif action == "open":
        if state.agent_room == state.chest_room and state.holding_key:
            state.opened = True
    elif action != "look":
        raise InvalidActionError(f"unknown action {action!r}")
    state.steps_used += 1
    return 1.0 if state.opened else 0.0


class KeyChestEnv(Environment):
    """Find the key somewhere on a ring of rooms, carry it to the chest, open it."""

    def __init__(self, n_rooms: int = 6, t_max: int = 20, variant: str = "standard"):
        if n_rooms < 3:
            raise InvalidArgumentError(f"KeyChest needs at least 3 rooms, got {n_rooms}")
        if variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown KeyChest variant {variant!r}")
        self.n_rooms = n_rooms
        self.t_max = t_max
        self.variant = variant
        self.state: Optional[KeyChestState] = None
        self.done = True
        self.truncated = False

    def action_set(self) -> list[str]:
        return list(ACTIONS)

    def reset(self, task_seed: int) -> tuple[str, str]:
        self.state = layout(task_seed, self.n_rooms, self.variant)
        self.done = False
        self.truncated = False
        return TASK_TEXT, render_observation(self.state)

    def step(self, action: str) -> tuple[str, float, bool]:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        if action not in ACTIONS:
            raise InvalidActionError(f"unknown action {action!r}")
        reward = transition(self.state, action)
        if self.state.opened:
            self.done = True
        elif self.state.steps_used >= self.t_max:
            self.done = self.truncated = True
        return render_observation(self.state), reward, self.done


def keychest_reset(task_seed: int, n_rooms: int, variant: str = "standard") -> tuple[str, str]:
    return KeyChestEnv(n_rooms, variant=variant).reset(task_seed)


_OBS_RE = re.compile(r"You are in room (\d+)\. You see (" + "|".join(CONTENTS) + r")\.")
_PUNCT = ".,;:!?\"'()[]"


def advice_actions(system_segment: str, actions) -> tuple[set[str], set[str]]:
    """Action tokens named under the strategies and the pitfalls headers."""
    if not system_segment:
        return set(), set()
    pos, neg = set(), set()
    section = None
    for line in system_segment.splitlines():
        head = line.strip()
        if head == STRATEGY_HEADER:
            section = pos
            continue
        if head == WARNING_HEADER:
            section = neg
            continue
        if head.startswith("---"):
            section = None
            continue
        if section is not None:
            section.update(tok.strip(_PUNCT) for tok in head.split())
    return pos & set(actions), neg & set(actions)


class LogLinearPolicy(Policy):
    """Softmax over per-action linear scores of prompt features.

    State features (bias, room one-hot, visible object, holding the key)
    get one weight per action. Two extra weights are shared by all actions:
    one fires when the action is named under the strategies header of the
    system segment, the other when it is named under the pitfalls header.
    """

    def __init__(self, actions=None, n_rooms: int = 6, weights: Optional[np.ndarray] = None):
        self.actions = list(actions) if actions is not None else list(ACTIONS)
        self.n_rooms = n_rooms
        self.state_features = (
            ["bias"] + [f"room_{r + 1}" for r in range(n_rooms)] + ["sees_nothing", "sees_key", "sees_chest", "holding"]
        )
        self.n_params = len(self.state_features) * len(self.actions) + 2
        self.theta = np.zeros(self.n_params) if weights is None else np.array(weights, dtype=float)
        if self.theta.shape != (self.n_params,):
            raise InvalidArgumentError(f"expected {self.n_params} weights, got shape {self.theta.shape}")
        self._cache: dict[AugmentedPrompt, np.ndarray] = {}

    def copy(self) -> "LogLinearPolicy":
        return LogLinearPolicy(self.actions, self.n_rooms, self.theta.copy())

    def param_names(self) -> list[str]:
        names = [f"{f}:{a}" for a in self.actions for f in self.state_features]
        return names + ["advice_positive", "advice_negative"]

    def state_vector(self, observation: str) -> np.ndarray:
        s = np.zeros(len(self.state_features))
        s[0] = 1.0
        m = _OBS_RE.search(observation)
        if m:
            room = int(m.group(1))
            if 1 <= room <= self.n_rooms:
                s[room] = 1.0
            what = m.group(2)
            s[1 + self.n_rooms + CONTENTS.index(what)] = 1.0
        if "holding the key" in observation:
            s[-1] = 1.0
        return s

    def features(self, prompt: AugmentedPrompt) -> np.ndarray:
        """Feature matrix with one row per action."""
        phi = self._cache.get(prompt)
        if phi is not None:
            return phi
        s = self.state_vector(prompt.observation_segment)
        pos, neg = advice_actions(prompt.system_segment, self.actions)
        n_s = len(s)
        phi = np.zeros((len(self.actions), self.n_params))
        for k, a in enumerate(self.actions):
            phi[k, k * n_s:(k + 1) * n_s] = s
            phi[k, -2] = 1.0 if a in pos else 0.0
            phi[k, -1] = 1.0 if a in neg else 0.0
        phi.flags.writeable = False
        if len(self._cache) > 200_000:
            self._cache.clear()
        self._cache[prompt] = phi
        return phi

    def log_probs(self, prompt: AugmentedPrompt, theta: Optional[np.ndarray] = None) -> np.ndarray:
        logits = self.features(prompt) @ (self.theta if theta is None else theta)
        logits = logits - logits.max()
        return logits - np.log(np.exp(logits).sum())

    def grad_log_prob(self, prompt: AugmentedPrompt, action: int, theta: Optional[np.ndarray] = None) -> np.ndarray:
        """Gradient of ``log pi(action | prompt)`` w.r.t. the weights."""
        phi = self.features(prompt)
        probs = np.exp(self.log_probs(prompt, theta))
        return phi[action] - probs @ phi

    def to_dict(self) -> dict:
        return {"actions": self.actions, "n_rooms": self.n_rooms, "weights": self.theta.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "LogLinearPolicy":
        return cls(doc["actions"], int(doc["n_rooms"]), np.asarray(doc["weights"], dtype=float))


def policy_log_probs(policy: LogLinearPolicy, prompt: AugmentedPrompt) -> np.ndarray:
    return policy.log_probs(prompt)


def policy_grad_logp(policy: LogLinearPolicy, prompt: AugmentedPrompt, action: int) -> np.ndarray:
    return policy.grad_log_prob(prompt, action)
