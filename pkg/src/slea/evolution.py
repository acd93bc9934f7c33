"""Library evolution: outcome partitioning, selective extraction, admission."""

from __future__ import annotations

import abc
import hashlib
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence, Union

from .clustering import ClusterIndex
from .exceptions import InvalidArgumentError, TransportError
from .library import AdmitStatus, Experience, ExperienceLibrary, Level, Zone
from .rollout import Trajectory

logger = logging.getLogger(__name__)

SUCCESS = "success"
FAILURE = "failure"
EXTRACTOR_URL_ENV = "SLEA_EXTRACTOR_URL"


@dataclass(frozen=True)
class EvolutionConfig:
    k_traj: int = 5
    k_strat: int = 10
    k_warn: int = 5
    eta: Union[str, float] = "batch_median"

    def __post_init__(self):
        if min(self.k_traj, self.k_strat, self.k_warn) < 1:
            raise InvalidArgumentError("k_traj, k_strat and k_warn must be >= 1")
        if isinstance(self.eta, str) and self.eta != "batch_median":
            raise InvalidArgumentError(f"eta must be 'batch_median' or a number, got {self.eta!r}")


@dataclass
class ExperienceCandidate:
    text: str
    level: Level
    zone: Zone
    score: float
    source_cluster_ids: list[int] = field(default_factory=list)


@dataclass
class EvolutionReport:
    eta: float = 0.0
    n_success: int = 0
    n_failure: int = 0
    generated_success: int = 0
    generated_failure: int = 0
    admitted: int = 0
    admitted_strategies: int = 0
    admitted_warnings: int = 0
    rejected_duplicate: int = 0
    rejected_low_score: int = 0
    evicted: int = 0


def partition(trajectories: Sequence[Trajectory], eta_mode: Union[str, float] = "batch_median"):
    """Split around ``eta``: strictly above goes to the success side.

    The batch median is the lower middle element for even counts.
    """
    if not trajectories:
        raise InvalidArgumentError("partition needs at least one trajectory")
    rewards = [t.terminal_reward for t in trajectories]
    if eta_mode == "batch_median":
        eta = sorted(rewards)[(len(rewards) - 1) // 2]
    else:
        eta = float(eta_mode)
    plus = [t for t in trajectories if t.terminal_reward > eta]
    minus = [t for t in trajectories if t.terminal_reward <= eta]
    return plus, minus, eta


def select(plus: Sequence[Trajectory], minus: Sequence[Trajectory], k_traj: int):
    best = sorted(range(len(plus)), key=lambda k: (-plus[k].terminal_reward, k))[:k_traj]
    worst = sorted(range(len(minus)), key=lambda k: (minus[k].terminal_reward, k))[:k_traj]
    return [plus[k] for k in best], [minus[k] for k in worst]


class Extractor(abc.ABC):
    @abc.abstractmethod
    def extract(self, trajectory: Trajectory, outcome: str) -> list[ExperienceCandidate]:
        ...


def situation_digest(prototype: str) -> str:
    return "s" + hashlib.sha1(prototype.encode("utf-8")).hexdigest()[:6]


class RuleBasedExtractor(Extractor):
    """Deterministic offline extractor keyed on the clusters a trajectory visited.

    Texts are kept to a handful of tokens so that two experiences differing
    in one action or one situation stay below the novelty threshold.
    """

    def __init__(self, index: ClusterIndex):
        self.index = index

    def _digest(self, cluster_id) -> str:
        return situation_digest(self.index[cluster_id].prototype)

    def extract(self, trajectory: Trajectory, outcome: str) -> list[ExperienceCandidate]:
        if not trajectory.steps:
            raise InvalidArgumentError("cannot extract from an empty trajectory")
        score = trajectory.terminal_reward
        visited = trajectory.visited_clusters()
        out = []
        if outcome == SUCCESS:
            seen = set()
            for step in trajectory.steps:
                pair = (step.cluster_id, step.action)
                if pair in seen:
                    continue
                seen.add(pair)
                out.append(ExperienceCandidate(
                    f"in situation {self._digest(step.cluster_id)} prefer {step.action}",
                    Level.PATTERN, Zone.STRATEGY, score, [step.cluster_id],
                ))
            sequence = " ".join(s.action for s in trajectory.steps)
            out.append(ExperienceCandidate(
                f"winning sequence: {sequence}", Level.PRINCIPLE, Zone.STRATEGY, score, visited,
            ))
        elif outcome == FAILURE:
            seen = set()
            steps = trajectory.steps
            for t in range(1, len(steps)):
                if steps[t].action != steps[t - 1].action:
                    continue
                pair = (steps[t - 1].cluster_id, steps[t].action)
                if pair in seen:
                    continue
                seen.add(pair)
                out.append(ExperienceCandidate(
                    f"avoid repeating {steps[t].action} in situation {self._digest(pair[0])}",
                    Level.PATTERN, Zone.WARNING, score, [pair[0]],
                ))
            if trajectory.truncated:
                counts = Counter(s.action for s in steps)
                top = max(counts, key=lambda a: (counts[a], -[s.action for s in steps].index(a)))
                out.append(ExperienceCandidate(
                    f"step limit hit after {len(steps)} steps; overused {top}",
                    Level.PRINCIPLE, Zone.WARNING, score, visited,
                ))
        else:
            raise InvalidArgumentError(f"unknown outcome {outcome!r}")
        return out


# -- external extractor ----------------------------------------------------------

_SUCCESS_MARKERS = {"principle": Level.PRINCIPLE, "method": Level.PATTERN, "pattern": Level.PATTERN, "example": Level.EXAMPLE}
_FAILURE_MARKERS = {"diagnostic": Level.PRINCIPLE, "pattern": Level.PATTERN, "mistake": Level.EXAMPLE}
_MARKER_RE = re.compile(
    r"^[\s\-*\d.)]*(?:\*\*)?(?:\[(principle|method|pattern|example|mistake|diagnostic)\]\s*[:\-]?"
    r"|(principle|method|pattern|example|mistake|diagnostic)(?:\*\*)?\s*[:\-])(?:\*\*)?\s*(.*)$",
    re.I,
)
_BULLET_RE = re.compile(r"^[\s\-*•]*(?:\d+[.)])?\s*")


def load_prompt(name: str) -> str:
    return resources.files("slea.prompts").joinpath(name).read_text(encoding="utf-8")


def trajectory_text(trajectory: Trajectory) -> str:
    lines = [f"Task: {trajectory.task}"]
    for t, step in enumerate(trajectory.steps):
        lines.append(f"Step {t}: observation: {step.observation} | action: {step.action} | reward: {step.reward:g}")
    return "\n".join(lines)


def parse_completion(text: str, outcome: str, score: float, source_cluster_ids=()) -> list[ExperienceCandidate]:
    """Parse one candidate per non-empty line; level markers pick the level."""
    markers = _SUCCESS_MARKERS if outcome == SUCCESS else _FAILURE_MARKERS
    zone = Zone.STRATEGY if outcome == SUCCESS else Zone.WARNING
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        m = _MARKER_RE.match(line)
        if m:
            marker, body = (m.group(1) or m.group(2)).lower(), m.group(3).strip()
            level = markers.get(marker)
            if level is None or not body:
                logger.warning("skipping malformed extractor line %d: %r", lineno, line)
                continue
        else:
            body = _BULLET_RE.sub("", line, count=1).strip()
            level = Level.PATTERN
            if not body or body.endswith(":"):
                logger.warning("skipping malformed extractor line %d: %r", lineno, line)
                continue
        out.append(ExperienceCandidate(body, level, zone, score, list(source_cluster_ids)))
    return out


class HttpCompletionClient:
    """POST ``{"prompt", "max_tokens"}`` and read the body as completion text."""

    def __init__(self, url: Optional[str] = None, timeout: float = 30.0, retries: int = 2, max_tokens: int = 512):
        self.url = url or os.environ.get(EXTRACTOR_URL_ENV)
        if not self.url:
            raise InvalidArgumentError(f"no extractor endpoint configured (set {EXTRACTOR_URL_ENV})")
        self.timeout = timeout
        self.retries = retries
        self.max_tokens = max_tokens

    def complete(self, prompt: str) -> str:
        body = json.dumps({"prompt": prompt, "max_tokens": self.max_tokens}).encode("utf-8")
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=body, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return resp.read().decode("utf-8")
            except (urllib.error.URLError, OSError) as exc:
                last = exc
                logger.warning("extractor request failed (attempt %d/%d): %s", attempt + 1, self.retries + 1, exc)
                if attempt < self.retries:
                    time.sleep(min(0.1 * 2 ** attempt, 2.0))
        raise TransportError(f"extractor endpoint {self.url} unreachable after {self.retries + 1} attempts: {last}")


class ExternalExtractor(Extractor):
    def __init__(self, client: HttpCompletionClient):
        self.client = client

    def render(self, trajectory: Trajectory, outcome: str) -> str:
        template = load_prompt("prompt_b.txt" if outcome == SUCCESS else "prompt_c.txt")
        return template.format(reward=f"{trajectory.terminal_reward:g}", trajectory_text=trajectory_text(trajectory))

    def extract(self, trajectory: Trajectory, outcome: str) -> list[ExperienceCandidate]:
        completion = self.client.complete(self.render(trajectory, outcome))
        out = parse_completion(completion, outcome, trajectory.terminal_reward, trajectory.visited_clusters())
        if not out:
            logger.warning("extractor response yielded no candidates (parse degraded)")
        return out


def extract_rule_based(trajectory: Trajectory, outcome: str, index: ClusterIndex) -> list[ExperienceCandidate]:
    return RuleBasedExtractor(index).extract(trajectory, outcome)


def extract_external(trajectory: Trajectory, outcome: str, client: HttpCompletionClient) -> list[ExperienceCandidate]:
    return ExternalExtractor(client).extract(trajectory, outcome)


def evolve(
    lib: ExperienceLibrary,
    index: ClusterIndex,
    trajectories: Sequence[Trajectory],
    cfg: EvolutionConfig,
    extractor: Extractor,
    epoch: int = 0,
) -> EvolutionReport:
    """Run one evolution step over an epoch's trajectories."""
    plus, minus, eta = partition(trajectories, cfg.eta)
    best, worst = select(plus, minus, cfg.k_traj)
    success = [c for traj in best for c in extractor.extract(traj, SUCCESS)][: cfg.k_strat]
    failure = [c for traj in worst for c in extractor.extract(traj, FAILURE)][: cfg.k_warn]

    report = EvolutionReport(eta=eta, n_success=len(plus), n_failure=len(minus),
                             generated_success=len(success), generated_failure=len(failure))
    for cand in success + failure:
        outcome = lib.admit(Experience(cand.text, cand.level, cand.zone, cand.score, epoch))
        if outcome.status is AdmitStatus.REJECTED_DUPLICATE:
            report.rejected_duplicate += 1
            continue
        if outcome.status is AdmitStatus.REJECTED_LOW_SCORE:
            report.rejected_low_score += 1
            continue
        report.admitted += 1
        if cand.zone is Zone.STRATEGY:
            report.admitted_strategies += 1
        else:
            report.admitted_warnings += 1
        if outcome.evicted_id is not None:
            report.evicted += 1
        admitted = lib.get(outcome.id)
        for cid in cand.source_cluster_ids:
            index.link(cid, admitted)
    return report
