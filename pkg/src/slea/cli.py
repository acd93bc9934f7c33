"""Command-line entry point: train, eval, library and ablate subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .exceptions import SleaError
from .harness import (
    ablate,
    evaluate,
    library_inspect,
    load_checkpoint,
    pivot,
    rows_to_csv,
    save_checkpoint,
    train,
)
from .library import export_library, import_library

logger = logging.getLogger("slea")


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.load(path) if path else RunConfig()


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if changes:
        cfg = cfg.replace(**changes)
    out = args.out or cfg.output_dir or "runs/latest"
    state = train(cfg, out)
    last = state.metrics[-1] if state.metrics else {}
    print(json.dumps({"out": str(out), "epochs": state.epochs_completed, **{
        k: last[k] for k in ("train_success", "val_success", "lib_size", "n_clusters") if k in last
    }}))
    return 0


def cmd_eval(args) -> int:
    env = {}
    if args.n_rooms is not None:
        env["n_rooms"] = args.n_rooms
    if args.variant is not None:
        env["variant"] = args.variant
    summary = evaluate(args.checkpoint, args.n_tasks, seed=args.seed, env_params=env or None)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_library(args) -> int:
    if args.action == "inspect":
        print(library_inspect(args.checkpoint))
        return 0
    state = load_checkpoint(args.checkpoint)
    if args.action == "export":
        data = export_library(state.library)
        if args.out:
            Path(args.out).write_bytes(data)
        else:
            sys.stdout.write(data.decode("utf-8") + "\n")
        return 0
    # import: swap the checkpoint's library; pools pointing at missing ids are pruned on retrieval
    if not args.library:
        raise SystemExit("library import needs --library <path>")
    state.library = import_library(Path(args.library).read_bytes())
    save_checkpoint(state, args.out or args.checkpoint)
    print(f"imported {len(state.library)} entries into {args.out or args.checkpoint}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config)
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    rows = ablate(cfg, grid)
    text = rows_to_csv(rows)
    if args.pivot:
        text = pivot(rows, args.pivot)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slea", description="Step-level experience-augmented RL on toy text worlds.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop and write metrics and a checkpoint")
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="output directory (default: config output_dir or runs/latest)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint on fresh tasks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-tasks", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-rooms", type=int)
    p.add_argument("--variant", choices=["standard", "long"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("library", help="inspect, export or import a checkpoint's experience library")
    p.add_argument("action", choices=["inspect", "export", "import"])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--library", help="library JSON to import")
    p.add_argument("--out", help="export target, or checkpoint path to write after import")
    p.set_defaults(func=cmd_library)

    p = sub.add_parser("ablate", help="train once per grid point and print a CSV table")
    p.add_argument("--config", help="JSON file with RunConfig fields")
    p.add_argument("--grid", required=True, help="JSON object with any of: algorithm, w, capacity, seeds")
    p.add_argument("--pivot", help="emit a wide table with one column per value of this grid key")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SleaError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
