"""Command line entry point: run, replay, list-presets, validate-config."""
from __future__ import annotations

import argparse
import json
import sys

from .config import ExperimentConfig
from .errors import ConfigError, DomainError, HypothesisError, ShapeError

EXIT_PASS, EXIT_FAIL, EXIT_HYPOTHESIS, EXIT_IO = 0, 1, 2, 3


def _load(args):
    cfg = ExperimentConfig.from_yaml(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    if getattr(args, "out", None) is not None:
        cfg.output = args.out
    ExperimentConfig.from_mapping(cfg.to_dict())
    return cfg


def _report(summary):
    for name, suite in summary["suites"].items():
        print(f"{name}: {'PASS' if suite['passed'] else 'FAIL'}")
    if "local_time" in summary:
        print(f"local time: {summary['local_time']['t_loc']:.6g} ({summary['local_time']['binding']})")


def cmd_run(args):
    from .harness import run
    cfg = _load(args)
    result = run(cfg)
    _report(result.summary)
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_replay(args):
    from .harness import Runner, prepare, _h_modes, _main_grid, run
    from .noise import WienerIncrements
    from .semilinear import kappa_and_radius, local_time
    cfg = _load(args)
    exp = prepare(cfg)
    if exp.is_semilinear:
        kappa = kappa_and_radius(exp.problem)[0]
        horizon = local_time(exp.problem, kappa,
                             contraction_target=exp.settings.get("contraction_target", 1.0)).t_loc
    else:
        horizon = exp.linear.horizon
    grid = _main_grid(exp, horizon)
    inc = WienerIncrements.read_csv(args.increments, grid, _h_modes(exp), exp.replicas, cfg.seed)
    result = run(cfg, increments=inc)
    _report(result.summary)
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_list(args):
    from .presets import PRESETS, build
    for name in PRESETS:
        exp = build(name)
        print(f"{name:18s} suites: {', '.join(exp.suites)}")
    return EXIT_PASS


def cmd_validate(args):
    from .harness import prepare
    cfg = _load(args)
    exp = prepare(cfg)
    print(json.dumps({"preset": cfg.preset, "valid": True, "suites": list(exp.suites)}))
    return EXIT_PASS


def build_parser():
    parser = argparse.ArgumentParser(prog="spdelab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, outputs=True):
        p.add_argument("--config", required=True, help="YAML experiment file")
        if outputs:
            p.add_argument("--seed", type=int, help="override the configured seed")
            p.add_argument("--workers", type=int, help="replica-parallel worker threads")
            p.add_argument("--out", help="artifact directory")

    common(sub.add_parser("run", help="solve and run the configured suites"))
    replay = sub.add_parser("replay", help="rerun with exported Wiener increments")
    common(replay)
    replay.add_argument("--increments", required=True, help="increments.csv from an earlier run")
    sub.add_parser("list-presets", help="show the named experiments")
    common(sub.add_parser("validate-config", help="check a config without solving"), outputs=False)
    return parser


COMMANDS = {"run": cmd_run, "replay": cmd_replay, "list-presets": cmd_list, "validate-config": cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (HypothesisError, DomainError, ShapeError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
