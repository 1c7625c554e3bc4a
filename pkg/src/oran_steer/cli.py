"""Command-line entry point.

Every subcommand reads an optional YAML experiment config; flags override it.
On failure a one-line JSON object ``{"error": <category>, "message": ...}``
is written to stderr and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import harness
from .dqn import DqnError
from .nbc import NbcError
from .scenario import ScenarioError
from .topology import TopologyError
from .traffic import TrafficError

EXIT_CODES = {
    "config": 2,
    "scenario": 3,
    "generation": 4,
    "topology": 4,
    "checkpoint": 5,
    "nbc": 6,
    "io": 7,
    "harness": 8,
    "internal": 1,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oran-steer", description="O-RAN traffic-steering experiments")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="mode", required=True)
    for mode, help_ in [
        ("gen", "generate a scenario file"),
        ("train-nbc", "simulate an unsteered day and fit per-VNF classifiers"),
        ("eval-nbc", "score saved classifiers on the held-out window"),
        ("train-agent", "train the DQN steering agent"),
        ("evaluate", "compare the agent with the reactive baseline on paired traffic"),
        ("pipeline", "run gen, train-nbc, train-agent and evaluate in sequence"),
    ]:
        s = sub.add_parser(mode, help=help_, parents=[common])
        s.add_argument("-c", "--config", help="experiment config YAML")
        s.add_argument("-o", "--output-dir")
        s.add_argument("--scenario", help="scenario YAML (default <output-dir>/scenario.yaml)")
        s.add_argument("--preset", choices=harness.PRESETS)
        s.add_argument("--traffic-seed", type=int)
        s.add_argument("--placement-seed", type=int)
        s.add_argument("--agent-seed", type=int)
        s.add_argument("--episodes", type=int)
    return p


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.scenario:
        cfg.scenario = args.scenario
    if args.preset:
        cfg.preset = args.preset
    for name in ("traffic", "placement", "agent"):
        val = getattr(args, f"{name}_seed")
        if val is not None:
            setattr(cfg.seeds, name, val)
    if args.episodes is not None:
        cfg.dqn = replace(cfg.dqn, episodes=args.episodes)
    return cfg


def _category(exc: BaseException) -> str:
    if isinstance(exc, harness.HarnessError):
        return exc.category
    if isinstance(exc, ScenarioError):
        return "scenario"
    if isinstance(exc, TopologyError):
        return "topology"
    if isinstance(exc, DqnError):
        return "checkpoint"
    if isinstance(exc, NbcError):
        return "nbc"
    if isinstance(exc, TrafficError):
        return "scenario"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def run(mode: str, cfg: harness.ExperimentConfig) -> dict:
    if mode == "gen":
        return {"scenario": str(harness.gen_scenario(cfg))}
    if mode == "train-nbc":
        ev = harness.train_nbc(cfg)
        return {"mean_auc": ev.mean_auc, "auc": ev.auc}
    if mode == "eval-nbc":
        ev = harness.eval_nbc(cfg)
        return {"mean_auc": ev.mean_auc, "auc": ev.auc}
    if mode == "train-agent":
        res = harness.train_agent(cfg)
        return {"episodes": len(res.returns), "final_return": res.returns[-1] if res.returns else None}
    if mode == "evaluate":
        return harness.run_evaluation(cfg).to_dict()
    if mode == "pipeline":
        return harness.run_pipeline(cfg).to_dict()
    raise harness.ConfigError(f"unknown mode {mode!r}")


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        result = run(args.mode, cfg)
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable category
        cat = _category(exc)
        if cat == "internal":
            logging.getLogger(__name__).exception("unexpected failure")
        print(json.dumps({"error": cat, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[cat]
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
