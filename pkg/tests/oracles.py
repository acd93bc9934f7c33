"""Independent reference implementations used as test oracles.

None of these import from the package under test except plain data types.
"""

from __future__ import annotations

import math


def ro_matches(a: list, b: list) -> int:
    """Ratcliff/Obershelp matched-token count by direct recursion.

    Longest common contiguous run (earliest in ``a``, then earliest in ``b``),
    then recurse on the unmatched left and right remainders.
    """
    if not a or not b:
        return 0
    best = (0, 0, 0)
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            if k > best[2]:
                best = (i, j, k)
    i, j, k = best
    if k == 0:
        return 0
    return k + ro_matches(a[:i], b[:j]) + ro_matches(a[i + k:], b[j + k:])


def ro_similarity(x: str, y: str) -> float:
    a, b = x.split(), y.split()
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    if b < a:
        a, b = b, a
    return 2.0 * ro_matches(a, b) / (len(a) + len(b))


def replay_admissions(candidates, capacity: int, threshold: float, sim=ro_similarity):
    """Replay admission rules over a candidate history for one (zone, level) list.

    ``candidates`` are ``(text, score)`` pairs. Returns the retained list of
    ``(id, text, score)`` and the per-candidate outcomes.
    """
    kept = []
    outcomes = []
    next_id = 0
    for text, score in candidates:
        if any(sim(text, t) >= threshold for _, t, _ in kept):
            outcomes.append(("rejected_duplicate", None))
            continue
        evicted = None
        if len(kept) >= capacity:
            low = min(s for _, _, s in kept)
            if not score > low:
                outcomes.append(("rejected_low_score", None))
                continue
            victim = min((e for e in kept if e[2] == low), key=lambda e: e[0])
            kept.remove(victim)
            evicted = victim[0]
        kept.append((next_id, text, score))
        outcomes.append(("admitted", evicted))
        next_id += 1
    return kept, outcomes


def mean_std(values):
    n = len(values)
    m = sum(values) / n
    return m, math.sqrt(sum((v - m) ** 2 for v in values) / n)


def forward_returns(rewards, gamma):
    return [sum(gamma ** (k - t) * rewards[k] for k in range(t, len(rewards))) for t in range(len(rewards))]


def random_walk_success(n_rooms, agent, key, chest, t_max, n_actions=5):
    """Exact probability that a uniform random policy opens the chest within ``t_max`` steps.

    Forward dynamic program over (room, holding) with an absorbing success state.
    """
    dist = {(agent, False): 1.0}
    done = 0.0
    for _ in range(t_max):
        nxt = {}
        for (room, holding), p in dist.items():
            q = p / n_actions
            moves = [((room - 1) % n_rooms, holding), ((room + 1) % n_rooms, holding)]
            moves.append((room, True) if room == key else (room, holding))  # pick
            if room == chest and holding:
                done += q  # open
            else:
                moves.append((room, holding))
            moves.append((room, holding))  # look
            for s in moves:
                nxt[s] = nxt.get(s, 0.0) + q
        dist = nxt
    return done


def replay_library(candidates, capacities, threshold: float, sim=ro_similarity):
    """Replay admissions over a whole two-zone library.

    ``candidates`` are ``(zone, level, text, score)``; ``capacities`` maps zone
    to the per-level capacity. Ids are global and assigned on admission only.
    Returns ``{(zone, level): [(id, text, score), ...]}`` and per-candidate outcomes.
    """
    lists = {}
    outcomes = []
    next_id = 0
    for zone, level, text, score in candidates:
        kept = lists.setdefault((zone, level), [])
        if any(sim(text, t) >= threshold for _, t, _ in kept):
            outcomes.append(("rejected_duplicate", None))
            continue
        evicted = None
        if len(kept) >= capacities[zone]:
            low = min(s for _, _, s in kept)
            if not score > low:
                outcomes.append(("rejected_low_score", None))
                continue
            victim = min((e for e in kept if e[2] == low), key=lambda e: e[0])
            kept.remove(victim)
            evicted = victim[0]
        kept.append((next_id, text, score))
        outcomes.append(("admitted", evicted))
        next_id += 1
    return lists, outcomes
