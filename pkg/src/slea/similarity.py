"""Token-level Ratcliff/Obershelp similarity."""

from __future__ import annotations

from difflib import SequenceMatcher
from collections import Counter
from functools import lru_cache


def tokenize(text: str) -> tuple[str, ...]:
    return tuple(text.split())


@lru_cache(maxsize=1 << 16)
def _token_ratio(a: tuple[str, ...], b: tuple[str, ...]) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    # difflib's block search is not order-symmetric on ties; canonical order fixes that
    if b < a:
        a, b = b, a
    matched = sum(block.size for block in SequenceMatcher(None, a, b, autojunk=False).get_matching_blocks())
    return 2.0 * matched / (len(a) + len(b))


def similarity(a: str, b: str) -> float:
    """Return ``2*M / (|a| + |b|)`` over whitespace tokens.

    ``M`` is the total length of the matching blocks found by recursively
    taking the longest common contiguous token run. Symmetric, in [0, 1],
    and ``similarity("", "") == 1``.
    """
    return _token_ratio(tokenize(a), tokenize(b))


@lru_cache(maxsize=1 << 16)
def _bag(tokens: tuple[str, ...]) -> Counter:
    return Counter(tokens)


def reaches(a: str, b: str, threshold: float, strict: bool = False) -> bool:
    """``similarity(a, b) >= threshold`` (``>`` when ``strict``), with cheap upper bounds first.

    Matched tokens can exceed neither the shorter length nor the multiset
    overlap, so most dissimilar pairs are settled without a block search.
    """
    ta, tb = tokenize(a), tokenize(b)
    total = len(ta) + len(tb)
    if total and ta != tb:
        passes = (lambda s: s > threshold) if strict else (lambda s: s >= threshold)
        if not passes(2.0 * min(len(ta), len(tb)) / total):
            return False
        if not passes(2.0 * sum((_bag(ta) & _bag(tb)).values()) / total):
            return False
    s = _token_ratio(ta, tb)
    return s > threshold if strict else s >= threshold
