"""Random small training instances shared by the unit and acceptance tests."""

import numpy as np

from slea.advantage import OptimConfig, advantage_table
from slea.clustering import ClusterIndex
from slea.library import Experience, Level, Zone, new_library
from slea.rng import SplitMix64
from slea.rollout import run_group
from slea.toyworld import ACTIONS, KeyChestEnv, LogLinearPolicy


def advice_library():
    lib = new_library(100, 50, 0.85)
    for text, zone in [
        ("You are in room 2. You see a small brass key. pick", Zone.STRATEGY),
        ("You are in room 3. You see nothing. right", Zone.STRATEGY),
        ("You are in room 4. You see a large locked chest. look", Zone.WARNING),
    ]:
        lib.admit(Experience(text, Level.EXAMPLE, zone, 0.7))
    return lib


def make_instance(seed, group_size=4, beta=0.05, shift=0.6, t_max=6):
    """Roll out a group under one policy, then move theta so ratios leave the clip band."""
    rng = np.random.default_rng(seed)
    base = LogLinearPolicy(ACTIONS, 6, rng.normal(scale=0.5, size=LogLinearPolicy(ACTIONS, 6).n_params))
    ref = LogLinearPolicy(ACTIONS, 6, rng.normal(scale=0.5, size=base.n_params))
    trajs = run_group(lambda: KeyChestEnv(6, t_max=t_max), base, ClusterIndex(0.85), advice_library(),
                      int(rng.integers(0, 1000)), group_size, SplitMix64(seed), gate=True, mode="step", t_max=t_max)
    if len({t.terminal_reward for t in trajs}) == 1:
        trajs[0].terminal_reward += 1.0  # keep episode advantages non-degenerate
    cfg = OptimConfig(beta_kl=beta, w=float(rng.uniform(0, 2)))
    table = advantage_table(trajs, cfg)
    theta = base.theta + rng.normal(scale=shift, size=base.n_params)
    return trajs, table, base, ref, cfg, theta
