import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ro_similarity
from slea.clustering import ClusterIndex, RetrievalSource, fallback_scan, retrieve_step, topk
from slea.exceptions import InvalidArgumentError, UnknownClusterError
from slea.library import Experience, Level, Zone, new_library
from slea.similarity import reaches, similarity

WORDS = st.lists(st.sampled_from(["you", "are", "in", "room", "3", "5", "key", "a", "see"]), max_size=10).map(" ".join)


def exp(i, score, zone=Zone.STRATEGY, text=None):
    return Experience(text or f"entry {i}", Level.PATTERN, zone, score, 0, i)


class TestSimilarity:
    def test_identity(self):
        assert similarity("you are in room 3", "you are in room 3") == 1.0

    def test_disjoint(self):
        assert similarity("alpha beta", "gamma delta") == 0.0

    def test_one_token_substitution(self):
        a = "you are in room 3 you see a key"
        b = "you are in room 5 you see a key"
        # frozen from the recursive oracle: 8 of 9 tokens matched on each side
        assert ro_similarity(a, b) == pytest.approx(16 / 18)
        assert similarity(a, b) == pytest.approx(16 / 18, abs=1e-15)

    def test_empty_strings(self):
        assert similarity("", "") == 1.0
        assert similarity("", "word") == 0.0

    @settings(max_examples=300, deadline=None)
    @given(WORDS, WORDS)
    def test_matches_oracle_and_is_symmetric(self, a, b):
        s = similarity(a, b)
        assert 0.0 <= s <= 1.0
        assert s == similarity(b, a)
        assert s == pytest.approx(ro_similarity(a, b), abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(WORDS, WORDS, st.sampled_from([0.0, 0.3, 0.5, 0.85, 1.0]))
    def test_bounded_check_agrees_with_full_ratio(self, a, b, thr):
        s = similarity(a, b)
        assert reaches(a, b, thr) == (s >= thr)
        assert reaches(a, b, thr, strict=True) == (s > thr)


class TestAssign:
    def test_empty_index_creates_cluster_zero(self):
        index = ClusterIndex(0.85)
        assert index.assign("You are in room 1.") == (0, True)

    def test_identical_observation_joins(self):
        index = ClusterIndex(0.85)
        index.assign("You are in room 1. You see nothing.")
        assert index.assign("You are in room 1. You see nothing.") == (0, False)
        assert index[0].hit_count == 1
        assert len(index) == 1

    def test_below_threshold_opens_new_cluster(self):
        index = ClusterIndex(0.85)
        proto = "a b c d e f"
        obs = "a b c d e f x y"
        # 2*6/14 = 0.857 joins; drop one more shared token to fall below
        assert similarity(proto, obs) == pytest.approx(12 / 14)
        obs_far = "a b c d e x y z"
        s = similarity(proto, obs_far)
        assert s == pytest.approx(10 / 14) and s < 0.85
        index.assign(proto)
        assert index.assign(obs) == (0, False)
        assert index.assign(obs_far) == (1, True)

    def test_threshold_boundary(self):
        # 2*M/(|a|+|b|) = 0.84 with M = 21 tokens of 25 on each side
        a = " ".join(f"t{i}" for i in range(25))
        b = " ".join([f"t{i}" for i in range(21)] + ["u1", "u2", "u3", "u4"])
        assert similarity(a, b) == pytest.approx(0.84)
        index = ClusterIndex(0.85)
        index.assign(a)
        assert index.assign(b) == (1, True)

    def test_first_match_not_best_match(self):
        index = ClusterIndex(0.5)
        index.assign("a b c d")
        index.assign("x y z w")
        index.assign("a b c d e f")  # sim 0.8 with cluster 0 -> joins 0
        assert len(index) == 2
        assert index.assign("a b c d e f") == (0, False)

    def test_empty_observation_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ClusterIndex(0.85).assign("")

    @settings(max_examples=100, deadline=None)
    @given(st.lists(WORDS.filter(bool), min_size=1, max_size=30))
    def test_stability_and_monotone_count(self, observations):
        index = ClusterIndex(0.85)
        last = 0
        for obs in observations:
            cid, _ = index.assign(obs)
            again, created = index.assign(obs)
            assert not created and again == cid
            assert len(index) >= last
            last = len(index)


class TestTopK:
    def test_picks_highest_scores(self):
        pool = [exp(0, 0.2), exp(1, 0.9), exp(2, 0.5)]
        assert [e.score for e in topk(pool, 2)] == [0.9, 0.5]

    def test_zero_and_underfull(self):
        pool = [exp(0, 0.3)]
        assert topk(pool, 0) == []
        assert topk(pool, 3) == pool

    def test_ties_by_id(self):
        pool = [exp(5, 1.0), exp(2, 1.0), exp(9, 0.1)]
        assert [e.id for e in topk(pool, 3)] == [2, 5, 9]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), max_size=40), st.integers(0, 45))
    def test_matches_full_sort(self, scores, k):
        pool = [exp(i, s) for i, s in enumerate(scores)]
        random.Random(len(scores)).shuffle(pool)
        expected = sorted(pool, key=lambda e: (-e.score, e.id))[:k]
        assert topk(pool, k) == expected


class TestLink:
    def test_idempotent(self):
        index = ClusterIndex(0.85)
        index.assign("obs")
        e = exp(5, 1.0)
        index.link(0, e)
        index.link(0, e)
        assert index[0].strategy_pool == [5]

    def test_zone_routing(self):
        index = ClusterIndex(0.85)
        index.assign("obs")
        index.link(0, exp(7, 0.0, zone=Zone.WARNING))
        assert index[0].warning_pool == [7] and index[0].strategy_pool == []

    def test_unknown_cluster(self):
        with pytest.raises(UnknownClusterError):
            ClusterIndex(0.85).link(99, exp(1, 1.0))


class TestRetrieve:
    def test_empty_library(self):
        lib = new_library(10, 10, 0.85)
        out = retrieve_step(ClusterIndex(0.85), lib, "some observation", 2, 1, 3)
        assert out.strategies == () and out.warnings == ()
        assert out.source is RetrievalSource.EMPTY

    def test_cluster_path_uses_pools(self):
        lib = new_library(10, 10, 0.85)
        ids = [lib.admit(Experience(t, Level.PATTERN, Zone.STRATEGY, s)).id
               for t, s in [("alpha", 1.0), ("beta", 0.8), ("gamma", 0.6)]]
        index = ClusterIndex(0.85)
        index.assign("the observation")
        for i in ids:
            index.link(0, lib.get(i))
        out = retrieve_step(index, lib, "the observation", 2, 1, 3)
        assert out.source is RetrievalSource.CLUSTER
        assert [e.score for e in out.strategies] == [1.0, 0.8]
        assert out.warnings == ()

    def test_fallback_links_then_cluster_reuse(self):
        lib = new_library(10, 10, 0.85)
        obs = "a b c d e f g h i j"
        text = "a b c d e f g h i k"  # 9 of 10 tokens shared -> 0.9
        assert similarity(obs, text) == pytest.approx(0.9)
        lib.admit(Experience(text, Level.EXAMPLE, Zone.WARNING, 0.0))
        index = ClusterIndex(0.85)
        first = retrieve_step(index, lib, obs, 2, 1, 3)
        assert first.source is RetrievalSource.FALLBACK
        assert [e.text for e in first.warnings] == [text]
        assert index[first.cluster_id].warning_pool == [0]
        second = retrieve_step(index, lib, obs, 2, 1, 3)
        assert second.source is RetrievalSource.CLUSTER
        assert second.ids == first.ids

    def test_read_only_mode_does_not_mutate(self):
        lib = new_library(10, 10, 0.85)
        lib.admit(Experience("a b c d e f g h i k", Level.EXAMPLE, Zone.WARNING, 0.0))
        index = ClusterIndex(0.85)
        out = retrieve_step(index, lib, "a b c d e f g h i j", 2, 1, 3, mutate=False)
        assert out.source is RetrievalSource.FALLBACK
        assert len(index) == 0 and index.mutations == 0

    def test_dangling_ids_are_skipped_and_pruned(self):
        lib = new_library(1, 1, 0.85)
        old = lib.admit(Experience("old text", Level.PATTERN, Zone.STRATEGY, 0.1))
        index = ClusterIndex(0.85)
        index.assign("obs here")
        index.link(0, lib.get(old.id))
        new = lib.admit(Experience("brand new words", Level.PATTERN, Zone.STRATEGY, 0.9))
        assert new.evicted_id == old.id
        index.link(0, lib.get(new.id))
        out = retrieve_step(index, lib, "obs here", 2, 1, 3)
        assert out.ids == [new.id]
        assert index[0].strategy_pool == [new.id]

    def test_budget_respected(self):
        rng = random.Random(7)
        lib = new_library(50, 50, 0.99)
        index = ClusterIndex(0.85)
        index.assign("obs")
        for i in range(40):
            zone = Zone.STRATEGY if i % 2 else Zone.WARNING
            out = lib.admit(Experience(f"entry number {i}", Level.PATTERN, zone, rng.random()))
            index.link(0, lib.get(out.id))
        got = retrieve_step(index, lib, "obs", 2, 1, 3)
        assert len(got.strategies) == 2 and len(got.warnings) == 1

    def test_deterministic(self):
        lib = new_library(10, 10, 0.85)
        for t in ["x y z", "p q r"]:
            lib.admit(Experience(t, Level.PATTERN, Zone.STRATEGY, 0.5))
        a = ClusterIndex(0.85)
        b = ClusterIndex(0.85)
        for idx in (a, b):
            idx.assign("obs")
            for e in lib:
                idx.link(0, e)
        assert retrieve_step(a, lib, "obs", 2, 1, 3) == retrieve_step(b, lib, "obs", 2, 1, 3)


def brute_force_fallback(entries, obs, delta, k):
    hits = [e for e in entries if ro_similarity(obs, e.text) > delta]
    hits.sort(key=lambda e: (-e.score, e.id))
    return hits[:k]


def random_library(rng, n):
    vocab = ["you", "are", "in", "room", "1", "2", "see", "key", "chest", "nothing"]
    lib = new_library(1000, 1000, 1.0)
    for _ in range(n):
        text = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 6)))
        zone = rng.choice([Zone.STRATEGY, Zone.WARNING])
        level = rng.choice(list(Level))
        lib.admit(Experience(text, level, zone, round(rng.random(), 2)))
    return lib


def test_fallback_matches_brute_force():
    rng = random.Random(99)
    for _ in range(30):
        lib = random_library(rng, rng.randint(0, 300))
        obs = " ".join(rng.choice(["you", "are", "in", "room", "1", "key"]) for _ in range(rng.randint(1, 6)))
        delta = rng.choice([0.3, 0.5, 0.85])
        k = rng.randint(0, 6)
        assert fallback_scan(lib, obs, delta, k) == brute_force_fallback(list(lib), obs, delta, k)
