import json
import shutil

import numpy as np
import pytest

from oran_steer import cli, harness
from oran_steer.env import OranEnv
from oran_steer.traffic import read_delay_csv


def tiny_config(tmp_path, episodes=2, **kw):
    return harness.ExperimentConfig.from_dict(
        {
            "output_dir": str(tmp_path),
            "preset": "tiny",
            "overrides": {"dqn": {"episodes": episodes, "warmup": 64}},
            **kw,
        }
    )


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = tiny_config(out)
    return cfg, harness.run_pipeline(cfg)


class TestImprovement:
    def test_headline_example(self):
        assert harness.percent_improvement(1.0, 0.8419) == pytest.approx(15.81, abs=1e-9)

    def test_trivial(self):
        assert harness.percent_improvement(5.0, 5.0) == 0.0
        assert harness.percent_improvement(5.0, 0.0) == 100.0
        assert harness.percent_improvement(5.0, 10.0) == -100.0

    def test_zero_baseline(self):
        with pytest.raises(ValueError):
            harness.percent_improvement(0.0, 1.0)


class TestConfig:
    def test_defaults(self):
        cfg = harness.ExperimentConfig()
        assert (cfg.seeds.traffic, cfg.seeds.placement, cfg.seeds.agent) == (0, 0, 0)
        assert cfg.dqn.episodes == 50 and cfg.dqn.gamma == 0.95 and cfg.dqn.lr == 0.005

    def test_yaml_round_trip(self, tmp_path):
        import yaml

        cfg = tiny_config(tmp_path, seeds={"traffic": 4, "agent": 9})
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        again = harness.ExperimentConfig.load(path)
        assert again.to_dict() == cfg.to_dict()
        assert again.seeds.traffic == 4 and again.dqn.episodes == 2

    def test_unknown_key(self):
        with pytest.raises(harness.ConfigError, match="unknown config keys"):
            harness.ExperimentConfig.from_dict({"seed": 1})

    def test_unknown_override(self):
        with pytest.raises(harness.ConfigError):
            harness.ExperimentConfig.from_dict({"overrides": {"dqn": {"learning_rate": 1}}})

    def test_unknown_preset(self):
        with pytest.raises(harness.ConfigError):
            harness.ExperimentConfig.from_dict({"preset": "huge"})


class TestEvaluation:
    def test_identical_policies_give_zero(self, tiny_deployment, tiny_models):
        arm = harness.run_baseline_arm(OranEnv(tiny_deployment, tiny_models), day=1)
        report = harness.compare(arm, arm, 1.0, 0, 1)
        assert report.improvement_pct == 0.0

    def test_arms_must_share_traffic(self, tiny_deployment, tiny_models):
        a = harness.run_baseline_arm(OranEnv(tiny_deployment, tiny_models), day=1)
        b = harness.run_baseline_arm(OranEnv(tiny_deployment, tiny_models), day=2)
        a.traffic_hash, b.traffic_hash = "x", "y"
        with pytest.raises(harness.HarnessError, match="different traffic"):
            harness.compare(a, b, 1.0, 0, 1)

    def test_pipeline_artifacts(self, tiny_run):
        cfg, report = tiny_run
        out = cfg.out
        for rel in (
            "scenario.yaml", "nbc/telemetry.csv", "nbc/delays.csv", "nbc/models.json", "nbc/auc.csv",
            "agent/checkpoint.json", "agent/returns.csv", "eval/delays_agent.csv", "eval/delays_baseline.csv",
            "eval/trace_agent.jsonl", "eval/trace_baseline.jsonl", "eval/per_vnf.csv", "eval/report.json",
            "eval/summary.txt",
        ):
            assert (out / rel).is_file(), rel
        assert report.eval_day == harness.EVAL_DAY_OFFSET

    def test_report_recomputed_from_csv(self, tiny_run):
        cfg, report = tiny_run
        agent = read_delay_csv(cfg.out / "eval" / "delays_agent.csv")
        base = read_delay_csv(cfg.out / "eval" / "delays_baseline.csv")
        assert agent.shape == (1440, 3)
        assert report.agent_mean_ms == agent.mean()
        assert report.baseline_mean_ms == base.mean()
        np.testing.assert_array_equal(report.per_vnf_agent_ms, agent.mean(axis=0))
        if base.mean() > 0:
            assert report.improvement_pct == harness.percent_improvement(base.mean(), agent.mean())

    def test_report_round_trip(self, tiny_run):
        cfg, report = tiny_run
        assert harness.load_report(cfg.out / "eval" / "report.json") == report

    def test_evaluate_is_repeatable(self, tiny_run):
        cfg, report = tiny_run
        assert harness.run_evaluation(cfg) == report


class TestCli:
    def run(self, capsys, *argv):
        code = cli.main(list(argv))
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    def test_stages(self, tmp_path, capsys):
        out = str(tmp_path)
        code, stdout, _ = self.run(capsys, "gen", "-o", out, "--preset", "tiny")
        assert code == 0 and json.loads(stdout)["scenario"].endswith("scenario.yaml")
        code, stdout, _ = self.run(capsys, "train-nbc", "-o", out)
        assert code == 0 and json.loads(stdout)["mean_auc"] > 0.5
        code, stdout, _ = self.run(capsys, "eval-nbc", "-o", out)
        assert code == 0
        code, stdout, _ = self.run(capsys, "train-agent", "-o", out, "--episodes", "1", "-v")
        assert code == 0 and json.loads(stdout)["episodes"] == 1
        code, stdout, _ = self.run(capsys, "evaluate", "-o", out)
        assert code == 0 and "improvement_pct" in json.loads(stdout)

    def test_missing_scenario(self, tmp_path, capsys):
        code, _, err = self.run(capsys, "train-nbc", "-o", str(tmp_path))
        assert code == 2 and json.loads(err)["error"] == "config"

    def test_bad_config(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("seeds: {traffic: 1}\nbogus: 2\n")
        code, _, err = self.run(capsys, "gen", "-c", str(tmp_path / "c.yaml"))
        assert code == 2 and "bogus" in json.loads(err)["message"]

    def test_missing_models(self, tmp_path, capsys):
        self.run(capsys, "gen", "-o", str(tmp_path), "--preset", "tiny")
        code, _, err = self.run(capsys, "train-agent", "-o", str(tmp_path))
        assert code == 7 and json.loads(err)["error"] == "io"

    def test_malformed_scenario(self, tmp_path, capsys):
        (tmp_path / "scenario.yaml").write_text("schema_version: 1\nservers: [\n")
        code, _, err = self.run(capsys, "train-nbc", "-o", str(tmp_path))
        assert code == 3 and json.loads(err)["error"] == "scenario"

    def test_checkpoint_mismatch(self, tiny_run, tmp_path, capsys):
        out = str(tmp_path)
        self.run(capsys, "gen", "-o", out)
        self.run(capsys, "train-nbc", "-o", out)
        (tmp_path / "agent").mkdir()
        shutil.copy(tiny_run[0].out / "agent" / "checkpoint.json", tmp_path / "agent" / "checkpoint.json")
        code, _, err = self.run(capsys, "evaluate", "-o", out)
        assert code == 5
        msg = json.loads(err)
        assert msg["error"] == "checkpoint" and "21 VNFs" in msg["message"]
