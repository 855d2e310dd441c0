import sys
import os

# Add the 'src' directory to the Python path
current_dir = os.path.dirname(os.path.abspath(__file__))
src_dir = os.path.join(current_dir, '..')
sys.path.append(src_dir)

import argparse
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import pandas as pd

from estimation.errors import DiffusionError, NumericalError
from runner.components.csv_output import emit_csv, emit_summary
from runner.components.plot_script import emit_plot_script
from runner.components.state_dump import dump_states
from runner.config import ConfigError, load_config, serialize_config
from simulator.pipelines import diffusion_config, run_seed_batch
from simulator.scenario import build_network

logger = logging.getLogger("runner")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


def build_parser():
    parser = argparse.ArgumentParser(
        prog="diffusion-sim",
        description="Seeded simulations of Bayesian diffusion estimation over ad-hoc networks.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the configured pipelines and write CSV metrics")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (default: config, then $DIFFUSION_OUTPUT_DIR)")
    run.add_argument("--seeds", type=int, help="seed-batch size")
    run.add_argument("--sequential", action="store_true", default=None,
                     help="run seeds one after another")
    run.add_argument("--dump-state", action="store_true", default=None,
                     help="write the final statistics of every node")

    validate = commands.add_parser("validate", help="check a scenario file")
    validate.add_argument("config")

    weights = commands.add_parser("weights", help="print the materialized c and a tables")
    weights.add_argument("config")
    return parser


def _apply_overrides(run_config, args):
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    if args.sequential:
        overrides["sequential"] = True
    if args.dump_state:
        overrides["dump_state"] = True
    return replace(run_config, **overrides)


def command_run(args):
    scenario, run_config = load_config(args.config)
    run_config = _apply_overrides(run_config, args)
    out_dir = Path(run_config.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "scenario.yaml").write_text(serialize_config(scenario, run_config))
    except OSError as exc:
        raise OSError(f"cannot prepare output directory {out_dir}: {exc}") from exc

    if run_config.sequential:
        batch = run_seed_batch(scenario, run_config.seeds, run_config.pipelines)
    else:
        with ThreadPoolExecutor() as executor:
            batch = run_seed_batch(scenario, run_config.seeds, run_config.pipelines, executor)

    for seed, result in batch.items():
        csv_path = emit_csv(result.rows, out_dir / f"metrics_seed{seed}.csv")
        emit_plot_script(csv_path)
        if run_config.dump_state:
            for pipeline, final_stats in result.final_stats.items():
                dump_states(final_stats, out_dir / f"seed_{seed}", pipeline)
    if len(batch) > 1:
        emit_summary(batch, out_dir / "summary.csv")
    return EXIT_OK


def command_validate(args):
    scenario, run_config = load_config(args.config)
    print(f"{args.config}: ok ({scenario.node_count} nodes, n={scenario.order}, "
          f"T={scenario.steps}, pipelines {', '.join(run_config.pipelines)})")
    return EXIT_OK


def command_weights(args):
    scenario, _ = load_config(args.config)
    net = build_network(scenario)
    cfg = diffusion_config(scenario, net)
    with pd.option_context("display.width", 200, "display.max_columns", None):
        print(f"incremental weights c ({scenario.incremental_weights.value}), row k over l:")
        print(cfg.incremental_weights.to_frame().to_string(float_format="{:.6f}".format))
        print()
        print(f"spatial weights a ({scenario.spatial_weights.value}), row k over l:")
        print(cfg.spatial_weights.to_frame().to_string(float_format="{:.6f}".format))
    return EXIT_OK


COMMANDS = {"run": command_run, "validate": command_validate, "weights": command_weights}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="[%(levelname)s] %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        logger.error("numerical error: %s", exc)
        return EXIT_NUMERICAL
    except DiffusionError as exc:
        logger.error("invalid scenario: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
