import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import make_instance
from oracles import forward_returns, mean_std
from slea.advantage import (
    AdvantageTable,
    OptimConfig,
    StepGroup,
    _surrogate,
    combine,
    discounted_returns,
    episode_advantages,
    evaluate_objective,
    grad_step,
    step_advantages,
    step_groups,
)
from slea.exceptions import InvalidArgumentError
from slea.rollout import AugmentedPrompt, Step, Trajectory
from slea.toyworld import ACTIONS, LogLinearPolicy


def test_discounted_returns_examples():
    assert discounted_returns([0, 0, 1], 0.5) == [0.25, 0.5, 1.0]
    assert discounted_returns([1, 1], 0.9) == pytest.approx([1.9, 1.0])
    assert discounted_returns([], 0.9) == []


@given(st.lists(st.floats(-5, 5), max_size=25), st.floats(0.01, 1.0))
def test_discounted_returns_match_forward_sum(rewards, gamma):
    assert discounted_returns(rewards, gamma) == pytest.approx(forward_returns(rewards, gamma), abs=1e-9)


def test_discounted_returns_rejects_bad_gamma():
    with pytest.raises(InvalidArgumentError):
        discounted_returns([1.0], 0.0)


def test_episode_advantages_example():
    assert episode_advantages([1, 0, 0, 1]) == [1.0, -1.0, -1.0, 1.0]


def test_episode_advantages_constant_group_is_zero():
    assert episode_advantages([0.3, 0.3, 0.3]) == [0.0, 0.0, 0.0]


def test_episode_advantages_need_two():
    with pytest.raises(InvalidArgumentError):
        episode_advantages([1.0])


@settings(max_examples=200)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=16))
def test_episode_advantages_normalized(rewards):
    adv = episode_advantages(rewards)
    _, std = mean_std(rewards)
    if std >= 1e-8 * 1e3:
        m, s = mean_std(adv)
        assert abs(m) <= 1e-9 and abs(s - 1) <= 1e-9
    elif std < 1e-8:
        assert adv == [0.0] * len(rewards)


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=16), st.floats(0.1, 10), st.floats(-5, 5))
def test_episode_advantages_affine_invariant(rewards, a, b):
    _, std = mean_std(rewards)
    if std < 1e-3:
        return
    assert episode_advantages([a * r + b for r in rewards]) == pytest.approx(episode_advantages(rewards), abs=1e-7)


def test_singleton_step_group_is_zero():
    assert step_advantages(StepGroup(0, [(0, 0, "left", 3.0)])) == [0.0]


def make_traj(rewards, clusters, actions=None):
    actions = actions or ["look"] * len(rewards)
    steps = [
        Step("obs", AugmentedPrompt("", "obs", "task"), a, math.log(0.2), r, None, c)
        for r, c, a in zip(rewards, clusters, actions)
    ]
    return Trajectory(task="task", steps=steps, terminal_reward=float(sum(rewards)))


def test_step_groups_match_brute_force_scan():
    rng = np.random.default_rng(3)
    for _ in range(50):
        trajs = [
            make_traj(rng.integers(0, 2, n).astype(float).tolist(), rng.integers(0, 4, n).tolist())
            for n in rng.integers(1, 8, 5)
        ]
        groups = step_groups(trajs, 0.9)
        got = {g.cluster_id: [(i, t, R) for i, t, _, R in g.members] for g in groups}
        expected = {}
        for i, tr in enumerate(trajs):
            R = forward_returns(tr.rewards, 0.9)
            for t, s in enumerate(tr.steps):
                expected.setdefault(s.cluster_id, []).append((i, t, R[t]))
        assert got.keys() == expected.keys()
        for c in got:
            assert [(i, t) for i, t, _ in got[c]] == [(i, t) for i, t, _ in expected[c]]
            assert [r for *_, r in got[c]] == pytest.approx([r for *_, r in expected[c]])


def test_step_groups_need_cluster_ids():
    with pytest.raises(InvalidArgumentError):
        step_groups([make_traj([0.0], [None])])


def test_combine_example():
    table = combine([0.5], [[-0.25]], 2.0)
    assert table.combined == [[0.0]]


def test_combine_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        combine([0.5, 0.1], [[0.0]], 1.0)


@pytest.mark.parametrize(
    "ratio,adv,expected",
    [(1.5, 1.0, 1.2), (0.5, 1.0, 0.5), (0.5, -1.0, -0.8), (1.5, -1.0, -1.5), (1.0, 3.0, 3.0)],
)
def test_surrogate_clip_cases(ratio, adv, expected):
    assert _surrogate(ratio, adv, 0.2)[0] == pytest.approx(expected)


def test_objective_is_zero_at_identity_with_zero_advantage():
    trajs = [make_traj([0.0, 1.0], [0, 1]), make_traj([0.0], [0])]
    pol = LogLinearPolicy(ACTIONS, 6)
    table = AdvantageTable([0.0, 0.0], [[0.0, 0.0], [0.0]], [[0.0, 0.0], [0.0]], 1.0)
    res = evaluate_objective(trajs, table, pol, pol.copy(), OptimConfig())
    assert res.value == 0.0 and res.kl == 0.0
    assert res.mean_ratio == pytest.approx(1.0) and res.clip_fraction == 0.0


def finite_difference(trajs, table, pol, ref, cfg, theta, h=1e-5):
    grad = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        up = evaluate_objective(trajs, table, pol, ref, cfg, theta + e, with_grad=False).value
        down = evaluate_objective(trajs, table, pol, ref, cfg, theta - e, with_grad=False).value
        grad[k] = (up - down) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(8))
def test_gradient_matches_finite_differences(seed):
    trajs, table, pol, ref, cfg, theta = make_instance(seed)
    res = evaluate_objective(trajs, table, pol, ref, cfg, theta)
    num = finite_difference(trajs, table, pol, ref, cfg, theta)
    assert np.linalg.norm(res.grad - num) <= 1e-4 * max(np.linalg.norm(num), 1e-8)


def test_instances_exercise_both_clip_branches():
    clipped = unclipped = 0
    for s in range(8):
        trajs, table, pol, ref, cfg, theta = make_instance(s)
        res = evaluate_objective(trajs, table, pol, ref, cfg, theta, with_grad=False)
        clipped += res.clip_fraction > 0
        unclipped += res.clip_fraction < 1
    assert clipped and unclipped


def test_kl_only_step_reduces_kl():
    trajs, table, pol, ref, _, theta = make_instance(1)
    zero = AdvantageTable(table.episode, table.step, [[0.0] * len(r) for r in table.combined], 1.0)
    cfg = OptimConfig(beta_kl=1.0, learning_rate=0.1)
    pol.theta = theta
    before = evaluate_objective(trajs, zero, pol, ref, cfg, with_grad=False).kl
    grad_step(pol, trajs, zero, ref, cfg)
    after = evaluate_objective(trajs, zero, pol, ref, cfg, with_grad=False).kl
    assert after < before


def test_grad_step_moves_theta_by_lr_times_grad():
    trajs, table, pol, ref, cfg, _ = make_instance(2)
    theta0 = pol.theta.copy()
    res = grad_step(pol, trajs, table, ref, cfg)
    assert np.allclose(pol.theta, theta0 + cfg.learning_rate * res.grad)
