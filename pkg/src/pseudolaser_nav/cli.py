"""CLI entry point for pseudolaser-nav."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional

LOG_LEVEL_ENV = "PLNAV_LOG_LEVEL"


def setup_logging(verbose: bool = False) -> None:
    if verbose:
        level = logging.DEBUG
    else:
        name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
        level = getattr(logging, name, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%H:%M:%S",
    )


def _load_config(args: argparse.Namespace):
    from pseudolaser_nav.config import load_config

    config = load_config(args.config)
    sensing = getattr(args, "sensing", None)
    if sensing:
        config = config.replace(sensing=dataclasses.replace(config.sensing, mode=sensing))
    return config


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_train(args: argparse.Namespace) -> int:
    from pseudolaser_nav.trainer import CheckpointError, train

    config = _load_config(args)
    try:
        trainer = train(
            config,
            output_dir=Path(args.output),
            stage=args.stage,
            resume=args.resume,
            max_updates=args.max_updates,
        )
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print(f"Episodes: {trainer.episodes}")
    print(f"Updates: {trainer.updates}")
    print(f"Final stage: {trainer.stage_name}")
    print(f"Output: {args.output}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from pseudolaser_nav.evaluation import PolicyController, run_eval, run_waypoint_loop
    from pseudolaser_nav.export import export_trajectories, write_json, write_matrix_csv
    from pseudolaser_nav.scenarios import UnknownScenarioError
    from pseudolaser_nav.trainer import CheckpointError

    config = _load_config(args) if args.config else None
    output_dir = Path(args.output)
    controller = PolicyController(args.checkpoint, config)

    masks: list = []

    def dump_mask(ctrl: PolicyController) -> None:
        if ctrl.last_mask is not None:
            masks.append(ctrl.last_mask)

    logs: Optional[list] = [] if args.export_trajectories else None
    try:
        controller.load()
        config = config or controller.config
        if args.sensing:
            config = config.replace(sensing=dataclasses.replace(config.sensing, mode=args.sensing))
        seed = config.eval.seed if args.seed is None else args.seed
        if args.waypoints:
            laps = args.trials or config.eval.n_waypoint_laps
            metrics = run_waypoint_loop(controller, laps, config, seed)
        else:
            n_trials = args.trials or (
                config.eval.n_trials_single_obstacle
                if args.scenario.startswith("single_obstacle")
                else config.eval.n_trials
            )
            metrics = run_eval(
                controller, args.scenario, n_trials, seed, config, logs=logs,
                on_first_step=dump_mask if args.dump_mask else None,
            )
    except (CheckpointError, FileNotFoundError, UnknownScenarioError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    finally:
        controller.unload()

    write_json(output_dir / "metrics.json", {"scenario": args.scenario, **metrics.to_dict()})
    if logs:
        export_trajectories(logs, output_dir / "trajectories")
    for trial, mask in enumerate(masks):
        for agent, values in mask.items():
            write_matrix_csv(output_dir / "masks" / f"trial_{trial:04d}_agent_{agent}.csv", values)

    print(f"Trials: {metrics.n_trials}")
    print(f"Success rate: {metrics.success_rate:.3f}")
    print(f"Collisions: {metrics.n_collision}  Timeouts: {metrics.n_timeout}")
    if metrics.average_time is not None:
        print(f"Average time: {metrics.average_time:.2f}s")
    print(f"Output: {output_dir}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from pseudolaser_nav.evaluation import (
        ABLATION_HEADER,
        AblationSpec,
        MissingCheckpointError,
        ablation_rows,
        run_ablation,
    )
    from pseudolaser_nav.export import format_table, write_table_csv
    from pseudolaser_nav.trainer import CheckpointError

    config = _load_config(args)
    try:
        specs = [
            AblationSpec(architecture=a, fov=int(f), sensing=s, augmentation=not args.no_augmentation)
            for a in args.architectures.split(",")
            for f in args.fovs.split(",")
            for s in args.sensing_modes.split(",")
        ]
        rows = run_ablation(
            specs, args.scenarios.split(","), args.trials or config.eval.n_trials, config,
            checkpoint_dir=args.checkpoint_dir,
        )
    except (MissingCheckpointError, CheckpointError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    table = ablation_rows(rows)
    output = Path(args.output)
    write_table_csv(output / "ablation.csv", ABLATION_HEADER, table)
    text = format_table(ABLATION_HEADER, table)
    (output / "ablation.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_limit_sweep(args: argparse.Namespace) -> int:
    from pseudolaser_nav.evaluation import SWEEP_HEADER, run_limitation_sweep, sweep_rows
    from pseudolaser_nav.export import format_table, write_table_csv
    from pseudolaser_nav.trainer import CheckpointError

    config = _load_config(args) if args.config else None
    try:
        cells = run_limitation_sweep(
            args.checkpoint, _floats(args.widths), _floats(args.distances), config,
            n_trials=args.trials, offset=args.offset,
        )
    except (CheckpointError, FileNotFoundError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    rows = sweep_rows(cells)
    write_table_csv(Path(args.output) / "limitation_sweep.csv", SWEEP_HEADER, rows)
    print(format_table(SWEEP_HEADER, rows), end="")
    return 0


def cmd_render_slice(args: argparse.Namespace) -> int:
    from pseudolaser_nav.camera import render_hits
    from pseudolaser_nav.export import write_matrix_csv, write_pgm
    from pseudolaser_nav.scenarios import SpawnError, UnknownScenarioError, spawn_scenario
    from pseudolaser_nav.sensing import Sensor

    config = _load_config(args)
    try:
        world = spawn_scenario(args.scenario, args.seed, config.world)
    except (UnknownScenarioError, SpawnError, FileNotFoundError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    if not 0 <= args.agent < len(world.agents):
        print(f"Error: scenario has {len(world.agents)} agent(s), no agent {args.agent}", file=sys.stderr)
        return 1
    if args.pose:
        x, y, heading = args.pose
        world.agents[args.agent] = dataclasses.replace(
            world.agents[args.agent], position=(x, y), heading=heading
        )

    hits = render_hits(world, args.agent, config.camera)
    depth, mask = hits.depth(), hits.traversability()
    laser = Sensor(config.camera, config.sensing, config.noise).measure(world, args.agent)

    output = Path(args.output)
    write_pgm(output / "depth.pgm", depth.values, config.camera.max_range)
    write_pgm(output / "mask.pgm", mask.values, 1.0)
    write_matrix_csv(output / "depth.csv", depth.values)
    write_matrix_csv(output / "mask.csv", mask.values)
    write_matrix_csv(output / "laser.csv", laser.ranges)
    print(f"Sensing: {config.sensing.mode}")
    print(f"Nearest range: {laser.ranges.min():.3f} m")
    print(f"Output: {output}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    import numpy as np

    from pseudolaser_nav.export import read_laser_csv, write_matrix_csv
    from pseudolaser_nav.pseudolaser import PseudoLaser, augment_noise

    config = _load_config(args)
    try:
        ranges = read_laser_csv(args.input)
        laser = PseudoLaser(ranges, config.camera.max_range)
    except (FileNotFoundError, ValueError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    noisy = augment_noise(laser, config.noise, np.random.default_rng(args.seed))
    write_matrix_csv(args.output, noisy.ranges)
    print(f"Output: {args.output}")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    from pseudolaser_nav.config import ARCHITECTURES, SENSING_MODES

    parser = argparse.ArgumentParser(
        prog="plnav",
        description="Monocular pseudo-laser navigation: training, evaluation and ablations",
    )
    parser.add_argument(
        "-v", "--verbose",
        action="store_true",
        help=f"Enable debug logging (otherwise ${LOG_LEVEL_ENV}, default INFO)",
    )
    parser.add_argument(
        "-c", "--config",
        help="JSON config file (defaults for every missing field)",
    )

    subparsers = parser.add_subparsers(dest="command")

    train_parser = subparsers.add_parser("train", help="Train a policy with PPO")
    train_parser.add_argument("--stage", help="Start from this curriculum stage")
    train_parser.add_argument("--resume", help="Checkpoint to resume from")
    train_parser.add_argument("-o", "--output", default="runs/train", help="Output directory")
    train_parser.add_argument("--max-updates", type=int, help="Stop after this many updates")
    train_parser.add_argument(
        "-c", "--config", default=argparse.SUPPRESS, help="JSON config file (same as the global option)"
    )
    train_parser.set_defaults(func=cmd_train)

    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint on a scenario")
    eval_parser.add_argument("checkpoint", help="Checkpoint file")
    eval_parser.add_argument("-s", "--scenario", default="test_crossing", help="Scenario id")
    eval_parser.add_argument("-n", "--trials", type=int, help="Number of trials")
    eval_parser.add_argument("--seed", type=int, help="First trial seed")
    eval_parser.add_argument("--sensing", choices=SENSING_MODES, help="Override sensing variant")
    eval_parser.add_argument("--waypoints", action="store_true", help="Run the corridor waypoint loop")
    eval_parser.add_argument("--export-trajectories", action="store_true", help="Write trajectory CSVs")
    eval_parser.add_argument("--dump-mask", action="store_true", help="Write the first-step FEG mask")
    eval_parser.add_argument("-o", "--output", default="runs/eval", help="Output directory")
    eval_parser.set_defaults(func=cmd_eval)

    ablate_parser = subparsers.add_parser("ablate", help="Run an ablation table")
    ablate_parser.add_argument("checkpoint_dir", help="Directory of <arch>_fov<deg>[_noaug].pt files")
    ablate_parser.add_argument("--architectures", default=",".join(ARCHITECTURES))
    ablate_parser.add_argument("--fovs", default="90")
    ablate_parser.add_argument("--sensing-modes", default="depth_minpool_semantic")
    ablate_parser.add_argument("--no-augmentation", action="store_true")
    ablate_parser.add_argument("--scenarios", default="test_crossing,test_walls,test_random")
    ablate_parser.add_argument("-n", "--trials", type=int)
    ablate_parser.add_argument("-o", "--output", default="runs/ablation")
    ablate_parser.set_defaults(func=cmd_ablate)

    sweep_parser = subparsers.add_parser("limit-sweep", help="Wall width/distance limitation sweep")
    sweep_parser.add_argument("checkpoint")
    sweep_parser.add_argument("--widths", default="0.5,1.0,2.0,3.0,4.0")
    sweep_parser.add_argument("--distances", default="0.6,1.0,2.0,3.0")
    sweep_parser.add_argument("--offset", type=float, default=0.0)
    sweep_parser.add_argument("-n", "--trials", type=int, default=10)
    sweep_parser.add_argument("-o", "--output", default="runs/limitation")
    sweep_parser.set_defaults(func=cmd_limit_sweep)

    render_parser = subparsers.add_parser("render-slice", help="Dump depth, mask and pseudo-laser")
    render_parser.add_argument("-s", "--scenario", default="single_obstacle:table")
    render_parser.add_argument("--seed", type=int, default=0)
    render_parser.add_argument("--agent", type=int, default=0)
    render_parser.add_argument("--pose", type=float, nargs=3, metavar=("X", "Y", "HEADING"))
    render_parser.add_argument("--sensing", choices=SENSING_MODES)
    render_parser.add_argument("-o", "--output", default="runs/render")
    render_parser.set_defaults(func=cmd_render_slice)

    augment_parser = subparsers.add_parser("augment", help="Apply the laser noise model to a CSV")
    augment_parser.add_argument("input", help="Laser CSV")
    augment_parser.add_argument("output", help="Noisy laser CSV")
    augment_parser.add_argument("--seed", type=int, default=0)
    augment_parser.set_defaults(func=cmd_augment)

    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    if args.command is None:
        parser.print_help()
        return 1

    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
