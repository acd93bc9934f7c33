"""Training loop, evaluation, checkpoints and ablations."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .advantage import OptimConfig, advantage_table, grad_step
from .clustering import ClusterIndex, RetrievalSource
from .config import RunConfig
from .evolution import EvolutionConfig, ExternalExtractor, HttpCompletionClient, RuleBasedExtractor, evolve
from .exceptions import CheckpointCorruptError, ConfigError, NumericError, SchemaError
from .library import LEVELS, ZONES, ExperienceLibrary, new_library
from .rng import SplitMix64
from .rollout import RetrievalMode, RetrievalSettings, Trajectory, retrieval_gate, run_group
from .toyworld import KeyChestEnv, LogLinearPolicy

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "slea-checkpoint/1"
_VAL_SALT = 0x5EED_0F_7A11


@dataclass
class RunState:
    config: RunConfig
    policy: LogLinearPolicy
    reference: LogLinearPolicy
    library: ExperienceLibrary
    index: ClusterIndex
    rng: SplitMix64
    epochs_completed: int = 0
    metrics: list[dict] = field(default_factory=list)
    updates: list[dict] = field(default_factory=list)

    def env_factory(self):
        cfg = self.config
        return lambda: KeyChestEnv(cfg.n_rooms, cfg.t_max, cfg.variant)

    def retrieval(self) -> RetrievalSettings:
        cfg = self.config
        return RetrievalSettings(cfg.k_plus, cfg.k_minus, cfg.k_fallback, cfg.B_max)

    def gate(self, epoch: int) -> bool:
        cfg = self.config
        return cfg.mode is not RetrievalMode.OFF and retrieval_gate(epoch, len(self.library), cfg.W, cfg.C_min)

    def checkpoint(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "epochs_completed": self.epochs_completed,
            "policy": self.policy.to_dict(),
            "reference_policy": self.reference.to_dict(),
            "library": self.library.to_dict(),
            "index": self.index.to_dict(),
            "rng_state": self.rng.getstate(),
        }


def init_state(cfg: RunConfig) -> RunState:
    cfg.validate()
    actions = KeyChestEnv(cfg.n_rooms, cfg.t_max, cfg.variant).action_set()
    policy = LogLinearPolicy(actions, cfg.n_rooms)
    return RunState(
        config=cfg,
        policy=policy,
        reference=policy.copy(),
        library=new_library(cfg.capacities["strategy"], cfg.capacities["warning"], cfg.novelty_threshold),
        index=ClusterIndex(cfg.delta, best_match=cfg.best_match),
        rng=SplitMix64(cfg.seed),
    )


def optim_config(cfg: RunConfig) -> OptimConfig:
    return OptimConfig(cfg.gamma, cfg.epsilon_clip, cfg.beta_kl, cfg.effective_w, cfg.learning_rate, cfg.std_floor)


def make_extractor(cfg: RunConfig, index: ClusterIndex):
    if cfg.extractor == "external":
        return ExternalExtractor(HttpCompletionClient(timeout=cfg.extractor_timeout, retries=cfg.extractor_retries))
    return RuleBasedExtractor(index)


def validation_seeds(seed: int, n: int) -> list[int]:
    rng = SplitMix64(seed ^ _VAL_SALT)
    return [rng.next_u64() >> 32 for _ in range(n)]


def greedy_rollouts(state: RunState, task_seeds: Sequence[int], gate: bool, rng: SplitMix64) -> list[Trajectory]:
    """Argmax rollouts without learning or index mutation."""
    cfg = state.config
    out = []
    for task_seed in task_seeds:
        out.extend(run_group(
            state.env_factory(), state.policy, state.index, state.library, task_seed, 1, rng,
            gate=gate, mode=cfg.mode, t_max=cfg.t_max, retrieval=state.retrieval(), greedy=True, replay=False,
        ))
    return out


def summarize(trajectories: Sequence[Trajectory]) -> dict:
    if not trajectories:
        return {"n_tasks": 0}
    steps = [s for t in trajectories for s in t.steps]
    hits = sum(s.retrieved.source is RetrievalSource.CLUSTER for s in steps)
    return {
        "n_tasks": len(trajectories),
        "success_rate": float(np.mean([t.terminal_reward > 0 for t in trajectories])),
        "mean_len": float(np.mean([len(t.steps) for t in trajectories])),
        "retrieval_hit_rate": hits / len(steps) if steps else 0.0,
    }


def run_epoch(state: RunState, epoch: int, dump: Optional[io.TextIOBase] = None) -> dict:
    cfg = state.config
    opt = optim_config(cfg)
    gate = state.gate(epoch)
    epoch_trajs: list[Trajectory] = []
    diags = []
    for g in range(cfg.tasks_per_epoch):
        task_seed = state.rng.next_u64() >> 32
        group_rng = state.rng.spawn()
        trajs = run_group(
            state.env_factory(), state.policy, state.index, state.library, task_seed, cfg.G, group_rng,
            gate=gate, mode=cfg.mode, t_max=cfg.t_max, retrieval=state.retrieval(),
        )
        table = advantage_table(trajs, opt)
        try:
            res = grad_step(state.policy, trajs, table, state.reference, opt)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}, group {g}: {exc}") from exc
        row = {
            "epoch": epoch,
            "group": g,
            "J": res.value,
            "mean_ratio": res.mean_ratio,
            "clip_fraction": res.clip_fraction,
            "kl": res.kl,
            "grad_norm": float(np.linalg.norm(res.grad)),
        }
        state.updates.append(row)
        diags.append(row)
        epoch_trajs.extend(trajs)
        if dump is not None:
            for t in trajs:
                dump.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")

    if cfg.mode is not RetrievalMode.OFF and (epoch + 1) % cfg.evolve_every == 0:
        lib_before = state.library.mutations
        evolve(state.library, state.index, epoch_trajs,
               EvolutionConfig(cfg.K_traj, cfg.K_strat, cfg.K_warn, cfg.eta),
               make_extractor(cfg, state.index), epoch)
        logger.debug("epoch %d: library %d -> %d mutations", epoch, lib_before, state.library.mutations)
    state.epochs_completed = epoch + 1

    val = summarize(greedy_rollouts(
        state, validation_seeds(cfg.seed, cfg.n_val_tasks), state.gate(epoch + 1),
        SplitMix64((cfg.seed << 20) ^ (epoch + 1)),
    ))
    steps = [s for t in epoch_trajs for s in t.steps]
    row = {
        "epoch": epoch,
        "train_success": float(np.mean([t.terminal_reward > 0 for t in epoch_trajs])),
        "val_success": val.get("success_rate", 0.0),
        "mean_len": float(np.mean([len(t.steps) for t in epoch_trajs])),
        "lib_size": len(state.library),
        "n_clusters": len(state.index),
        "retrieval_hit_rate": sum(s.retrieved.source is RetrievalSource.CLUSTER for s in steps) / len(steps),
        "J": float(np.mean([d["J"] for d in diags])),
        "kl": float(np.mean([d["kl"] for d in diags])),
        "clip_fraction": float(np.mean([d["clip_fraction"] for d in diags])),
    }
    state.metrics.append(row)
    return row


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def train(cfg: RunConfig, out_dir: Union[str, Path, None] = None) -> RunState:
    """Run the full loop: rollout, advantages, one update per group, evolve once per epoch."""
    cfg.validate()
    out_dir = out_dir if out_dir is not None else cfg.output_dir
    state = init_state(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text("", encoding="utf-8")
        if cfg.dump_trajectories:
            (out / "trajectories").mkdir(exist_ok=True)
    for epoch in range(cfg.epochs):
        dump = None
        if out is not None and cfg.dump_trajectories:
            dump = (out / "trajectories" / f"epoch_{epoch:04d}.jsonl").open("w", encoding="utf-8")
        try:
            row = run_epoch(state, epoch, dump)
        finally:
            if dump is not None:
                dump.close()
        logger.info("epoch %d: train %.3f val %.3f lib %d clusters %d",
                    epoch, row["train_success"], row["val_success"], row["lib_size"], row["n_clusters"])
        if out is not None:
            with (out / "metrics.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(dumps(row) + "\n")
    if out is not None:
        with (out / "updates.jsonl").open("w", encoding="utf-8") as fh:
            for row in state.updates:
                fh.write(dumps(row) + "\n")
        save_checkpoint(state, out / "checkpoint.json")
    return state


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(state: RunState, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(state.checkpoint(), sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(source: Union[str, Path, dict]) -> RunState:
    try:
        doc = source if isinstance(source, dict) else json.loads(Path(source).read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointCorruptError(f"unsupported checkpoint format {doc.get('format')!r}")
        cfg = RunConfig.from_dict(doc["config"])
        state = RunState(
            config=cfg,
            policy=LogLinearPolicy.from_dict(doc["policy"]),
            reference=LogLinearPolicy.from_dict(doc["reference_policy"]),
            library=ExperienceLibrary.from_dict(doc["library"]),
            index=ClusterIndex.from_dict(doc["index"]),
            rng=SplitMix64(int(doc["rng_state"])),
            epochs_completed=int(doc["epochs_completed"]),
        )
    except CheckpointCorruptError:
        raise
    except (OSError, ValueError, KeyError, TypeError, AttributeError, SchemaError, ConfigError) as exc:
        raise CheckpointCorruptError(f"cannot load checkpoint: {exc}") from exc
    return state


def evaluate(
    checkpoint: Union[str, Path, dict, RunState],
    n_tasks: int,
    seed: int = 0,
    env_params: Optional[dict] = None,
) -> dict:
    """Greedy evaluation on ``n_tasks`` fresh tasks; the checkpoint is not modified."""
    state = checkpoint if isinstance(checkpoint, RunState) else load_checkpoint(checkpoint)
    if env_params:
        expected = state.config.env_params()
        mismatch = {k: v for k, v in env_params.items() if expected.get(k) != v}
        if mismatch:
            raise ConfigError(f"environment parameters {mismatch} do not match checkpoint {expected}")
    if n_tasks <= 0:
        return {"n_tasks": 0}
    rng = SplitMix64(seed)
    seeds = [rng.next_u64() >> 32 for _ in range(n_tasks)]
    return summarize(greedy_rollouts(state, seeds, state.gate(state.epochs_completed), rng.spawn()))


def library_inspect(checkpoint: Union[str, Path, dict, RunState]) -> str:
    state = checkpoint if isinstance(checkpoint, RunState) else load_checkpoint(checkpoint)
    lib, index = state.library, state.index
    lines = [f"library: {len(lib)} entries, novelty threshold {lib.novelty_threshold}"]
    for zone in ZONES:
        for level in LEVELS:
            entries = lib.entries(zone, level)
            lines.append(f"[{zone.value}/{level.value}] {len(entries)}/{lib.capacity[zone, level]}")
            for e in entries:
                lines.append(f"  #{e.id} score={e.score:g} epoch={e.source_epoch}  {e.text}")
    lines.append(f"clusters: {len(index)} (delta {index.delta})")
    for c in index.clusters:
        lines.append(f"  c{c.id} hits={c.hit_count} strategies={c.strategy_pool} warnings={c.warning_pool}  {c.prototype}")
    return "\n".join(lines)


# -- ablations ----------------------------------------------------------------------

GRID_KEYS = ("algorithm", "w", "capacity", "seeds")


def ablate(cfg: RunConfig, grid: dict) -> list[dict]:
    """Train once per grid point (algorithm x w x capacity x seed) and collect final metrics."""
    unknown = sorted(set(grid) - set(GRID_KEYS))
    if unknown:
        raise ConfigError(f"invalid grid keys {unknown}; allowed: {list(GRID_KEYS)}")
    axes = {
        "algorithm": grid.get("algorithm", [cfg.algorithm]),
        "w": grid.get("w", [cfg.w]),
        "capacity": grid.get("capacity", [None]),
        "seed": grid.get("seeds", [cfg.seed]),
    }
    rows = []
    for algorithm, w, capacity, seed in itertools.product(*axes.values()):
        changes = {"algorithm": algorithm, "w": w, "seed": seed, "output_dir": None}
        if capacity is not None:
            changes["capacities"] = {"strategy": capacity, "warning": capacity}
        run = train(cfg.replace(**changes))
        last = run.metrics[-1] if run.metrics else {}
        rows.append({
            "algorithm": algorithm,
            "w": w,
            "capacity": capacity if capacity is not None else cfg.capacities["strategy"],
            "seed": seed,
            "val_success": last.get("val_success", 0.0),
            "train_success": last.get("train_success", 0.0),
            "mean_len": last.get("mean_len", 0.0),
            "lib_size": last.get("lib_size", 0),
            "n_clusters": last.get("n_clusters", 0),
        })
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def pivot(rows: Sequence[dict], column: str, value: str = "val_success", index: str = "seed") -> str:
    """Wide CSV: one row per ``index`` value, one column per ``column`` value."""
    cols = sorted({r[column] for r in rows}, key=str)
    idx = sorted({r[index] for r in rows}, key=str)
    table = {(r[index], r[column]): r[value] for r in rows}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([index] + [f"{column}={c}" for c in cols])
    for i in idx:
        writer.writerow([i] + [table.get((i, c), "") for c in cols])
    return buf.getvalue()
