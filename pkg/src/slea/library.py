"""Bounded two-zone experience library with score-gated admission."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .exceptions import InvalidArgumentError, ParseError, SchemaError
from .similarity import reaches


class Zone(str, enum.Enum):
    STRATEGY = "strategy"
    WARNING = "warning"


class Level(str, enum.Enum):
    PRINCIPLE = "principle"
    PATTERN = "pattern"
    EXAMPLE = "example"


ZONES = (Zone.STRATEGY, Zone.WARNING)
LEVELS = (Level.PRINCIPLE, Level.PATTERN, Level.EXAMPLE)


@dataclass
class Experience:
    """One textual strategy or warning.

    ``id`` is ``None`` for a candidate that has not been admitted yet; the
    library assigns it on admission.
    """

    text: str
    level: Level
    zone: Zone
    score: float
    source_epoch: int = 0
    id: Optional[int] = None


class AdmitStatus(str, enum.Enum):
    ADMITTED = "admitted"
    REJECTED_DUPLICATE = "rejected_duplicate"
    REJECTED_LOW_SCORE = "rejected_low_score"


@dataclass(frozen=True)
class AdmitOutcome:
    status: AdmitStatus
    evicted_id: Optional[int] = None
    id: Optional[int] = None


@dataclass
class ExperienceLibrary:
    capacity: dict[tuple[Zone, Level], int]
    novelty_threshold: float
    next_id: int = 0
    zones: dict[tuple[Zone, Level], list[Experience]] = field(default_factory=dict)
    mutations: int = field(default=0, compare=False)

    def __post_init__(self):
        for key in self.capacity:
            self.zones.setdefault(key, [])
        self._by_id = {e.id: e for entries in self.zones.values() for e in entries}

    def __len__(self) -> int:
        return sum(len(entries) for entries in self.zones.values())

    def __iter__(self) -> Iterator[Experience]:
        for zone in ZONES:
            for level in LEVELS:
                yield from self.zones[zone, level]

    def __contains__(self, exp_id: int) -> bool:
        return exp_id in self._by_id

    def get(self, exp_id: int) -> Optional[Experience]:
        return self._by_id.get(exp_id)

    def entries(self, zone: Zone, level: Level) -> list[Experience]:
        return self.zones[Zone(zone), Level(level)]

    def min_score(self, zone: Zone, level: Level) -> Optional[float]:
        entries = self.entries(zone, level)
        if not entries:
            return None
        return min(e.score for e in entries)

    def admit(self, candidate: Experience) -> AdmitOutcome:
        """Admit ``candidate`` subject to the novelty gate and the score floor."""
        if not candidate.text or not candidate.text.strip():
            raise InvalidArgumentError("experience text must be non-empty")
        if not math.isfinite(candidate.score):
            raise InvalidArgumentError("experience score must be finite")
        zone, level = Zone(candidate.zone), Level(candidate.level)
        entries = self.zones[zone, level]

        for entry in entries:
            if reaches(candidate.text, entry.text, self.novelty_threshold):
                return AdmitOutcome(AdmitStatus.REJECTED_DUPLICATE)

        evicted = None
        if len(entries) >= self.capacity[zone, level]:
            # lowest score, oldest id on ties
            victim = min(entries, key=lambda e: (e.score, e.id))
            if not candidate.score > victim.score:
                return AdmitOutcome(AdmitStatus.REJECTED_LOW_SCORE)
            entries.remove(victim)
            del self._by_id[victim.id]
            evicted = victim.id

        exp = Experience(
            text=candidate.text,
            level=level,
            zone=zone,
            score=float(candidate.score),
            source_epoch=int(candidate.source_epoch),
            id=self.next_id,
        )
        self.next_id += 1
        entries.append(exp)
        self._by_id[exp.id] = exp
        self.mutations += 1
        return AdmitOutcome(AdmitStatus.ADMITTED, evicted_id=evicted, id=exp.id)

    # -- persistence --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "novelty_threshold": self.novelty_threshold,
            "next_id": self.next_id,
            "capacities": {
                z.value: {lv.value: self.capacity[z, lv] for lv in LEVELS} for z in ZONES
            },
            "zones": {
                z.value: {
                    lv.value: [
                        {"id": e.id, "text": e.text, "score": e.score, "source_epoch": e.source_epoch}
                        for e in self.zones[z, lv]
                    ]
                    for lv in LEVELS
                }
                for z in ZONES
            },
        }

    @classmethod
    def from_dict(cls, doc) -> "ExperienceLibrary":
        if not isinstance(doc, dict):
            raise SchemaError("<root>", "expected an object")
        threshold = _number(doc, "novelty_threshold", "novelty_threshold")
        next_id = _integer(doc, "next_id", "next_id")
        caps = _object(doc, "capacities", "capacities")
        zones_doc = _object(doc, "zones", "zones")

        capacity, zones, seen = {}, {}, set()
        for z in ZONES:
            cap_z = _object(caps, z.value, f"capacities.{z.value}")
            zone_z = _object(zones_doc, z.value, f"zones.{z.value}")
            for lv in LEVELS:
                path = f"{z.value}.{lv.value}"
                cap = _integer(cap_z, lv.value, f"capacities.{path}")
                if cap < 1:
                    raise SchemaError(f"capacities.{path}", "must be >= 1")
                capacity[z, lv] = cap
                raw = zone_z.get(lv.value)
                if not isinstance(raw, list):
                    raise SchemaError(f"zones.{path}", "expected an array")
                if len(raw) > cap:
                    raise SchemaError(f"zones.{path}", "more entries than capacity")
                entries = []
                for k, item in enumerate(raw):
                    where = f"zones.{path}[{k}]"
                    if not isinstance(item, dict):
                        raise SchemaError(where, "expected an object")
                    exp_id = _integer(item, "id", f"{where}.id")
                    text = item.get("text")
                    if not isinstance(text, str) or not text.strip():
                        raise SchemaError(f"{where}.text", "expected a non-empty string")
                    score = _number(item, "score", f"{where}.score")
                    epoch = _integer(item, "source_epoch", f"{where}.source_epoch")
                    if exp_id in seen:
                        raise SchemaError(f"{where}.id", f"duplicate id {exp_id}")
                    seen.add(exp_id)
                    entries.append(Experience(text, lv, z, score, epoch, exp_id))
                zones[z, lv] = entries
        if seen and next_id <= max(seen):
            raise SchemaError("next_id", "must exceed every entry id")
        return cls(capacity=capacity, novelty_threshold=threshold, next_id=next_id, zones=zones)

    def export(self) -> bytes:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False).encode("utf-8")


def new_library(capacity_strategy: int, capacity_warning: int, novelty_threshold: float) -> ExperienceLibrary:
    """Create an empty library with uniform per-level capacities in each zone."""
    for name, cap in (("capacity_strategy", capacity_strategy), ("capacity_warning", capacity_warning)):
        if isinstance(cap, bool) or not isinstance(cap, int) or cap < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {cap!r}")
    if not 0.0 < novelty_threshold <= 1.0:
        raise InvalidArgumentError(f"novelty_threshold must lie in (0, 1], got {novelty_threshold!r}")
    capacity = {}
    for lv in LEVELS:
        capacity[Zone.STRATEGY, lv] = capacity_strategy
        capacity[Zone.WARNING, lv] = capacity_warning
    return ExperienceLibrary(capacity=capacity, novelty_threshold=float(novelty_threshold))


def import_library(data: bytes | str) -> ExperienceLibrary:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("invalid UTF-8", exc.start) from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.pos) from exc
    return ExperienceLibrary.from_dict(doc)


def export_library(lib: ExperienceLibrary) -> bytes:
    return lib.export()


def _object(doc: dict, key: str, path: str) -> dict:
    value = doc.get(key)
    if not isinstance(value, dict):
        raise SchemaError(path, "expected an object")
    return value


def _integer(doc: dict, key: str, path: str) -> int:
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, "expected an integer")
    return value


def _number(doc: dict, key: str, path: str) -> float:
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise SchemaError(path, "expected a finite number")
    return float(value)
