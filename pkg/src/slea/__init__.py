"""Step-level experience-augmented group-relative policy optimization at desk scale."""

from .advantage import (
    AdvantageTable,
    OptimConfig,
    StepGroup,
    combine,
    discounted_returns,
    episode_advantages,
    grad_step,
    objective,
    step_advantages,
    step_groups,
)
from .clustering import Cluster, ClusterIndex, ExperienceSet, RetrievalSource, retrieve_step, similarity, topk
from .config import RunConfig
from .evolution import EvolutionConfig, EvolutionReport, evolve, partition, select
from .harness import ablate, evaluate, library_inspect, load_checkpoint, train
from .library import (
    AdmitOutcome,
    AdmitStatus,
    Experience,
    ExperienceLibrary,
    Level,
    Zone,
    export_library,
    import_library,
    new_library,
)
from .rng import SplitMix64
from .rollout import AugmentedPrompt, Step, Trajectory, augment, render_experiences, retrieval_gate, run_episode, run_group
from .toyworld import KeyChestEnv, LogLinearPolicy

__version__ = "0.1.0"
