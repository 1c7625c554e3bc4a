"""Run the whole pipeline on the three-VNF preset and print the report.

    python demos/quickstart.py [output_dir]
"""

import sys

from oran_steer import harness


def main(out: str = "out/quickstart") -> None:
    cfg = harness.ExperimentConfig.from_dict(
        {"output_dir": out, "preset": "tiny", "overrides": {"dqn": {"episodes": 20, "use_action_mask": False}}}
    )
    report = harness.run_pipeline(cfg)
    print(report.summary())
    print(f"\nartifacts under {cfg.out}/ (scenario.yaml, nbc/, agent/, eval/)")


if __name__ == "__main__":
    main(*sys.argv[1:])
