"""Observation cluster index and cluster-indexed experience retrieval."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .exceptions import InvalidArgumentError, SchemaError, UnknownClusterError
from .library import Experience, ExperienceLibrary, Zone
from .similarity import reaches, similarity

__all__ = [
    "Cluster",
    "ClusterIndex",
    "ExperienceSet",
    "RetrievalSource",
    "similarity",
    "topk",
    "retrieve_step",
]


@dataclass
class Cluster:
    id: int
    prototype: str
    strategy_pool: list[int] = field(default_factory=list)
    warning_pool: list[int] = field(default_factory=list)
    hit_count: int = 0


class RetrievalSource(str, enum.Enum):
    CLUSTER = "cluster"
    FALLBACK = "fallback"
    EMPTY = "empty"


@dataclass(frozen=True)
class ExperienceSet:
    strategies: tuple[Experience, ...] = ()
    warnings: tuple[Experience, ...] = ()
    source: RetrievalSource = RetrievalSource.EMPTY
    cluster_id: Optional[int] = None

    def __bool__(self) -> bool:
        return bool(self.strategies or self.warnings)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.strategies] + [e.id for e in self.warnings]


EMPTY_SET = ExperienceSet()


@dataclass
class ClusterIndex:
    delta: float
    clusters: list[Cluster] = field(default_factory=list)
    best_match: bool = False
    mutations: int = field(default=0, compare=False)

    def __post_init__(self):
        if not 0.0 < self.delta <= 1.0:
            raise InvalidArgumentError(f"delta must lie in (0, 1], got {self.delta!r}")
        self._by_id = {c.id: c for c in self.clusters}

    def __len__(self) -> int:
        return len(self.clusters)

    def __getitem__(self, cluster_id: int) -> Cluster:
        try:
            return self._by_id[cluster_id]
        except KeyError:
            raise UnknownClusterError(cluster_id) from None

    def lookup(self, obs: str) -> Optional[Cluster]:
        """Return the cluster ``obs`` would join, without touching the index."""
        if self.best_match:
            best, best_sim = None, -1.0
            for c in self.clusters:
                s = similarity(obs, c.prototype)
                if s >= self.delta and s > best_sim:
                    best, best_sim = c, s
            return best
        for c in self.clusters:
            if reaches(obs, c.prototype, self.delta):
                return c
        return None

    def assign(self, obs: str) -> tuple[int, bool]:
        """Assign ``obs`` to the first cluster within ``delta``, else open a new one."""
        if not obs:
            raise InvalidArgumentError("observation must be non-empty")
        hit = self.lookup(obs)
        self.mutations += 1
        if hit is not None:
            hit.hit_count += 1
            return hit.id, False
        cluster = Cluster(id=len(self.clusters), prototype=obs)
        self.clusters.append(cluster)
        self._by_id[cluster.id] = cluster
        return cluster.id, True

    def link(self, cluster_id: int, experience: Experience) -> None:
        cluster = self[cluster_id]
        pool = cluster.strategy_pool if Zone(experience.zone) is Zone.STRATEGY else cluster.warning_pool
        if experience.id not in pool:
            pool.append(experience.id)
            self.mutations += 1

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "best_match": self.best_match,
            "clusters": [
                {
                    "id": c.id,
                    "prototype": c.prototype,
                    "strategy_pool": list(c.strategy_pool),
                    "warning_pool": list(c.warning_pool),
                    "hit_count": c.hit_count,
                }
                for c in self.clusters
            ],
        }

    @classmethod
    def from_dict(cls, doc) -> "ClusterIndex":
        if not isinstance(doc, dict):
            raise SchemaError("index", "expected an object")
        delta = doc.get("delta")
        if isinstance(delta, bool) or not isinstance(delta, (int, float)):
            raise SchemaError("index.delta", "expected a number")
        raw = doc.get("clusters")
        if not isinstance(raw, list):
            raise SchemaError("index.clusters", "expected an array")
        clusters = []
        for k, c in enumerate(raw):
            try:
                clusters.append(
                    Cluster(
                        id=int(c["id"]),
                        prototype=str(c["prototype"]),
                        strategy_pool=[int(i) for i in c["strategy_pool"]],
                        warning_pool=[int(i) for i in c["warning_pool"]],
                        hit_count=int(c["hit_count"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"index.clusters[{k}]", f"bad cluster record ({exc})") from None
        return cls(delta=float(delta), clusters=clusters, best_match=bool(doc.get("best_match", False)))


def topk(pool: Iterable[Experience], k: int) -> list[Experience]:
    """Highest-score entries first, ascending id on ties."""
    if k < 0:
        raise InvalidArgumentError("k must be >= 0")
    return sorted(pool, key=lambda e: (-e.score, e.id))[:k]


def _resolve(ids: list[int], lib: ExperienceLibrary, prune: bool) -> list[Experience]:
    found = [lib.get(i) for i in ids]
    if prune and any(e is None for e in found):
        ids[:] = [i for i, e in zip(ids, found) if e is not None]
    return [e for e in found if e is not None]


def fallback_scan(lib: ExperienceLibrary, obs: str, delta: float, k: int) -> list[Experience]:
    return topk((e for e in lib if reaches(obs, e.text, delta, strict=True)), k)


def retrieve_step(
    index: ClusterIndex,
    lib: ExperienceLibrary,
    obs: str,
    k_plus: int,
    k_minus: int,
    k_fallback: int,
    mutate: bool = True,
) -> ExperienceSet:
    """Retrieve experiences for one observation.

    With ``mutate=False`` the index is only read: no cluster is created, no
    hit is counted and fallback results are not linked. Rollouts use this
    mode and replay the mutations afterwards in trajectory order.
    """
    if not obs:
        raise InvalidArgumentError("observation must be non-empty")
    if mutate:
        cluster = index[index.assign(obs)[0]]
    else:
        cluster = index.lookup(obs)

    if cluster is not None:
        strategies = _resolve(cluster.strategy_pool, lib, prune=mutate)
        warnings = _resolve(cluster.warning_pool, lib, prune=mutate)
        if strategies or warnings:
            return ExperienceSet(
                tuple(topk(strategies, k_plus)),
                tuple(topk(warnings, k_minus)),
                RetrievalSource.CLUSTER,
                cluster.id,
            )

    found = fallback_scan(lib, obs, index.delta, k_fallback)
    cluster_id = cluster.id if cluster is not None else None
    if not found:
        return ExperienceSet(cluster_id=cluster_id)
    if mutate:
        for e in found:
            index.link(cluster.id, e)
    return ExperienceSet(
        tuple(e for e in found if e.zone is Zone.STRATEGY),
        tuple(e for e in found if e.zone is Zone.WARNING),
        RetrievalSource.FALLBACK,
        cluster_id,
    )
