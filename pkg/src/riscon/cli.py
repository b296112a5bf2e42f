"""Command-line entry points: simulate, oracle, validate."""

from __future__ import annotations

import argparse
import json
import sys

from .phase_opt import lookahead_on_grid
from .reporting import emit_outputs
from .scenario import POLICY_NAMES, ConfigError, generate_scenario, load_config
from .simulate import SimulationError, build_runtime, prepare_oracle, run_experiment

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _fail(code, kind, message):
    print(json.dumps({"error": kind, "detail": str(message)}), file=sys.stderr)
    return code


def _cmd_simulate(args):
    cfg = load_config(args.config)
    if args.policy:
        cfg["policies"] = list(dict.fromkeys(args.policy))
    if args.replications is not None:
        cfg["replications"] = args.replications
    if args.seed is not None:
        cfg["seed"] = args.seed
    scenario = generate_scenario(cfg)
    result = run_experiment(scenario)
    paths = emit_outputs(result, args.out)
    for policy in result.policies:
        final = result.cost_to_come_matrix(policy).mean(axis=0)[-1]
        print(f"{policy}: mean final cost-to-come {final:.6g} "
              f"over {result.replications} replications")
    for name, path in sorted(paths.items()):
        print(f"wrote {name}: {path}")
    return EXIT_OK


def _cmd_oracle(args):
    cfg = load_config(args.config)
    scenario = generate_scenario(cfg)
    runtime = build_runtime(scenario)
    table = prepare_oracle(runtime)
    greedy_indices, greedy_value = lookahead_on_grid(
        scenario.models, runtime.oracle_grid, runtime.oracle_pe_table, scenario.T
    )
    print(f"grid: {len(runtime.oracle_grid)} phase vectors, horizon {scenario.T}")
    print(f"oracle value: {table.best_value:.10g}")
    print(f"oracle sequence: {table.best_indices}")
    print(f"lookahead value: {greedy_value:.10g}")
    print(f"lookahead sequence: {greedy_indices}")
    gap = greedy_value - table.best_value
    rel = gap / abs(table.best_value) if table.best_value else 0.0
    print(f"lookahead gap: {gap:.10g} ({rel:.4%})")
    return EXIT_OK


def _cmd_validate(args):
    load_config(args.config)
    print("ok")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="riscon",
        description="Simulate surface-assisted networked control and compare phase policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run replications and write CSV/figure outputs")
    sim.add_argument("config", help="path to a JSON configuration (or a run manifest)")
    sim.add_argument("--policy", action="append", choices=POLICY_NAMES,
                     help="override the configured policy list (repeatable)")
    sim.add_argument("--replications", type=int, help="override the replication count")
    sim.add_argument("--seed", type=int, help="override the scenario seed")
    sim.add_argument("--out", default="out", help="output directory (default: out)")
    sim.set_defaults(func=_cmd_simulate)

    orc = sub.add_parser("oracle", help="enumerate the optimal phase sequence on a small grid")
    orc.add_argument("config", help="path to a JSON configuration")
    orc.set_defaults(func=_cmd_oracle)

    val = sub.add_parser("validate", help="schema-check a configuration and exit")
    val.add_argument("config", help="path to a JSON configuration")
    val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except FileNotFoundError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except SimulationError as exc:
        detail = {
            "policy": exc.policy, "replication": exc.replication, "slot": exc.slot,
        }
        print(json.dumps({"error": "simulation", "detail": str(exc), **detail}),
              file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        return _fail(EXIT_RUNTIME, "runtime", exc)


if __name__ == "__main__":
    sys.exit(main())
