import numpy as np
import pytest

from oran_steer import harness
from oran_steer.scenario import BackupSpec, ScenarioError, deploy, load_scenario, parse_scenario
from oran_steer.topology import PlacementInfeasible, Vnf, VnfKind

TINY = """\
schema_version: 1
name: hand
seeds: {topology: 1, placement: 2, traffic: 3}
servers:
  count: 3
  link_probability: 1.0
  cpu_capacity: [8, 8]
vnfs:
  - {id: 0, kind: NearRtRic, service_rate_ppm: 1000, cpu_demand: 1}
  - {id: 1, kind: OCU, service_rate_ppm: 1000, cpu_demand: 1}
  - {id: 2, kind: ODU, service_rate_ppm: 1000, cpu_demand: 1}
chains:
  - id: 0
    members: [0, 1, 2]
    traffic_class: ArVr
    latency_bound_ms: 8
    reliability_bound: 1.0e-4
    profile:
      base_rate_ppm: 500
      peaks: [[600, 30, 200]]
      spikes: [[900, 10, 2.0]]
      noise: false
"""


def with_line(text, old, new):
    assert old in text
    return text.replace(old, new)


class TestParse:
    def test_minimal_scenario(self):
        sc = parse_scenario(TINY)
        assert sc.name == "hand"
        assert sc.seeds == {"topology": 1, "placement": 2, "traffic": 3}
        assert [v.kind for v in sc.vnfs] == [VnfKind.NEAR_RT_RIC, VnfKind.OCU, VnfKind.ODU]
        assert sc.profiles[0].spikes == ((900.0, 10.0, 2.0),)
        assert not sc.profiles[0].noise

    def test_round_trip(self, tmp_path):
        sc = parse_scenario(TINY)
        path = tmp_path / "s.yaml"
        sc.save(path)
        assert load_scenario(path) == sc

    def test_generated_round_trip(self, full_scenario, tmp_path):
        path = tmp_path / "full.yaml"
        full_scenario.save(path)
        assert load_scenario(path) == full_scenario

    def test_round_trip_with_backups(self, tmp_path):
        sc = parse_scenario(TINY)
        sc.backups = [BackupSpec(Vnf(3, VnfKind.OCU, 1000.0, 1.0), 1)]
        path = tmp_path / "b.yaml"
        sc.save(path)
        again = load_scenario(path)
        assert again == sc
        dep = deploy(again)
        assert dep.topology.placement.host(3) != dep.topology.placement.host(1)

    @pytest.mark.parametrize(
        "old, new, line, needle",
        [
            ("kind: OCU", "kind: OCX", 10, "unknown VNF kind"),
            ("members: [0, 1, 2]", "members: [0, 2, 1]", 14, "slot 1"),
            ("latency_bound_ms: 8", "latency_bound_ms: 20", 16, "latency bound"),
            ("traffic_class: ArVr", "traffic_class: Gaming", 15, "unknown traffic class"),
            ("count: 3", "count: 0", 5, ">= 1"),
            ("{id: 1, kind", "{id: 4, kind", 10, "dense"),
            ("reliability_bound: 1.0e-4", "reliability_bound: 2", 17, "(0, 1)"),
        ],
    )
    def test_errors_carry_line(self, old, new, line, needle):
        with pytest.raises(ScenarioError) as info:
            parse_scenario(with_line(TINY, old, new), "s.yaml")
        assert info.value.line == line
        assert needle in str(info.value)
        assert "s.yaml" in str(info.value)

    def test_missing_key(self):
        text = TINY.replace("    reliability_bound: 1.0e-4\n", "")
        with pytest.raises(ScenarioError, match="reliability_bound"):
            parse_scenario(text)

    def test_link_error_rate_checked_against_class(self):
        text = TINY.replace("name: hand", "name: hand\nlink_error_rate: 0.01")
        with pytest.raises(ScenarioError, match="link_error_rate"):
            parse_scenario(text)

    def test_malformed_yaml(self):
        with pytest.raises(ScenarioError, match="malformed"):
            parse_scenario("servers: [1, 2\n")

    def test_negative_profile_rejected(self):
        text = TINY.replace("peaks: [[600, 30, 200]]", "peaks: [[600, 30, -900]]")
        with pytest.raises(ScenarioError):
            parse_scenario(text)


class TestDeploy:
    def test_placement_infeasible(self):
        text = TINY.replace("cpu_capacity: [8, 8]", "cpu_capacity: [0.5, 0.5]")
        with pytest.raises(PlacementInfeasible):
            deploy(parse_scenario(text))

    def test_threshold_percentile(self):
        dep = deploy(parse_scenario(TINY))
        expected = np.percentile(dep.topology.graph.mttf_hours, 20)
        assert dep.topology.mttf_threshold_hours == expected


class TestGenerate:
    def test_full_scale(self, full_scenario, full_deployment):
        assert full_scenario.servers.count == 50
        kinds = [v.kind for v in full_scenario.vnfs]
        assert len(kinds) == 21
        assert {k: kinds.count(k) for k in VnfKind} == {k: 7 for k in VnfKind}
        assert len(full_scenario.chains) == 7
        assert full_deployment.topology.graph.n_servers == 50

    def test_same_seed_identical_files(self, tmp_path):
        a = harness.generate_scenario("full", 3, 4).dumps()
        b = harness.generate_scenario("full", 3, 4).dumps()
        assert a == b

    def test_different_seed_differs(self):
        assert harness.generate_scenario("full", 1, 0).dumps() != harness.generate_scenario("full", 2, 0).dumps()

    def test_tiny_preset(self):
        sc = harness.generate_scenario("tiny")
        assert (sc.servers.count, len(sc.vnfs), len(sc.chains)) == (4, 3, 1)

    def test_every_vnf_congests_in_both_windows(self, full_day):
        assert harness.congestion_coverage(full_day) == []

    def test_unknown_preset(self):
        with pytest.raises(harness.GenerationError, match="unknown preset"):
            harness.generate_scenario("huge")
