"""Experiment pipeline: scenario generation, classifier and agent training,
and the paired agent-versus-reactive-baseline evaluation.

All randomness derives from three named seeds (traffic, placement, agent).
Day indices used for traffic noise::

    classifier training day   traffic
    agent episode e           traffic + 1 + e
    evaluation day            traffic + EVAL_DAY_OFFSET
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import dqn, nbc
from .baseline import ReactivePolicy
from .env import EnvConfig, OranEnv, write_trace
from .scenario import Deployment, Scenario, ServerSpec, deploy, load_scenario
from .topology import ServiceChain, TopologyError, Vnf, VnfKind
from .traffic import (
    MINUTES_PER_DAY,
    TRAFFIC_CLASSES,
    ArrivalProfile,
    DayLog,
    expected_rates,
    simulate_day,
    write_delay_csv,
)

log = logging.getLogger(__name__)

EVAL_DAY_OFFSET = 100_000
PRESETS = ("full", "tiny")


class HarnessError(RuntimeError):
    category = "harness"


class ConfigError(HarnessError):
    category = "config"


class GenerationError(HarnessError):
    category = "generation"


class CheckpointMismatch(HarnessError):
    category = "checkpoint"


def percent_improvement(baseline_mean: float, agent_mean: float) -> float:
    """Relative queuing-delay reduction of the agent, in percent."""
    if not baseline_mean > 0:
        raise ValueError("baseline mean delay must be positive")
    return (baseline_mean - agent_mean) / baseline_mean * 100.0


# --------------------------------------------------------------------------
# scenario generation


def _tiny_scenario(traffic_seed: int, placement_seed: int) -> Scenario:
    vnfs = [
        Vnf(0, VnfKind.NEAR_RT_RIC, 1000.0, 2.0),
        Vnf(1, VnfKind.OCU, 1000.0, 2.0),
        Vnf(2, VnfKind.ODU, 1000.0, 2.0),
    ]
    chain = ServiceChain(0, (0, 1, 2), 8.0, 1e-4, "ArVr")
    profile = ArrivalProfile(
        base_rate_ppm=500.0,
        spikes=((240, 30, 3.0), (600, 20, 3.0), (900, 40, 3.0), (1100, 30, 3.0), (1300, 20, 3.0)),
        noise=False,
        noise_seed=traffic_seed,
    )
    return Scenario(
        name="tiny",
        servers=ServerSpec(count=4, link_probability=1.0, cpu_capacity=(8.0, 8.0), mttf_hours=(20_000.0, 40_000.0)),
        vnfs=vnfs,
        chains=[chain],
        profiles={0: profile},
        seeds={"topology": placement_seed, "placement": placement_seed, "traffic": traffic_seed},
    )


def _full_draw(rng: np.random.Generator, traffic_seed: int, placement_seed: int) -> Scenario:
    n_chains = 7
    classes = ("ArVr", "AutonomousVehicle", "AutomatedIndustry")
    chains, profiles, vnfs = [], {}, []
    rates = np.zeros(3 * n_chains)
    for k in range(n_chains):
        base = float(rng.uniform(400, 800))
        peaks = (
            (rng.uniform(420, 560), rng.uniform(25, 60), base * rng.uniform(0.8, 1.5)),
            (rng.uniform(1040, 1180), rng.uniform(25, 60), base * rng.uniform(0.8, 1.5)),
        )
        # one flash crowd riding each diurnal peak, so every VNF congests in both halves of the day
        spikes = tuple(
            (float(np.floor(c - rng.uniform(0, w))), float(rng.integers(8, 25)), rng.uniform(1.7, 2.2))
            for c, w, _ in peaks
        )
        profile = ArrivalProfile(
            base_rate_ppm=round(base, 3),
            peaks=tuple(tuple(round(float(x), 3) for x in p) for p in peaks),
            spikes=tuple(tuple(round(float(x), 3) for x in s) for s in spikes),
            noise=True,
            noise_seed=int(traffic_seed) * 1000 + k,
        )
        profiles[k] = profile
        diurnal_peak = float(expected_rates(ArrivalProfile(profile.base_rate_ppm, profile.peaks)).max())
        for slot in range(3):
            rates[slot * n_chains + k] = round(diurnal_peak * rng.uniform(0.75, 1.6))
        tc = TRAFFIC_CLASSES[classes[k % 3]]
        lo, hi = tc.latency_range_ms
        bound = round(float(rng.uniform(lo, hi)), 2) if hi > lo else lo
        reliability = float(np.sqrt(tc.error_rate_bound[0] * tc.error_rate_bound[1]))
        chains.append(ServiceChain(k, (k, n_chains + k, 2 * n_chains + k), bound, reliability, tc.name))
    kinds = (VnfKind.NEAR_RT_RIC, VnfKind.OCU, VnfKind.ODU)
    for i in range(3 * n_chains):
        vnfs.append(Vnf(i, kinds[i // n_chains], float(rates[i]), round(float(rng.uniform(1.0, 4.0)), 3)))
    return Scenario(
        name="full",
        servers=ServerSpec(count=50, link_probability=0.3),
        vnfs=vnfs,
        chains=chains,
        profiles=profiles,
        seeds={"topology": placement_seed, "placement": placement_seed, "traffic": traffic_seed},
        backups=[],
    )


def congestion_coverage(day: DayLog, lead: int = nbc.DEFAULT_LEAD, train_fraction: float = nbc.DEFAULT_TRAIN_FRACTION):
    """VNFs whose lead-shifted labels are single-class in the train or test window."""
    labels = day.congested[lead:]
    cut = nbc.chronological_split(labels.shape[0], train_fraction)
    bad = []
    for v in range(day.n_vnfs):
        for window in (labels[:cut, v], labels[cut:, v]):
            if window.min() == window.max():
                bad.append(v)
                break
    return bad


def generate_scenario(preset: str = "full", traffic_seed: int = 0, placement_seed: int = 0, max_attempts: int = 25) -> Scenario:
    """Draw a scenario and check it before returning.

    A draw is kept when placement succeeds, the initial chains meet their
    bounds and, on an unsteered day, every VNF is congested at least once in
    both the classifier's training and test windows.
    """
    if preset not in PRESETS:
        raise GenerationError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    if preset == "tiny":
        sc = _tiny_scenario(traffic_seed, placement_seed)
        deploy(sc)
        return sc
    rng = np.random.default_rng([placement_seed, traffic_seed])
    problems = []
    for attempt in range(max_attempts):
        sc = _full_draw(rng, traffic_seed, placement_seed)
        try:
            dep = deploy(sc)
        except TopologyError as exc:
            problems.append(f"attempt {attempt}: {exc}")
            log.info("scenario draw %d rejected: %s", attempt, exc)
            continue
        day = nbc_day(dep)
        bad = congestion_coverage(day)
        if bad:
            problems.append(f"attempt {attempt}: VNFs {bad} lack congestion in a classifier window")
            log.info("scenario draw %d rejected: VNFs %s never congest in a window", attempt, bad)
            continue
        return sc
    raise GenerationError("no valid scenario after %d attempts:\n  %s" % (max_attempts, "\n  ".join(problems)))


# --------------------------------------------------------------------------
# configuration


@dataclass
class Seeds:
    traffic: int = 0
    placement: int = 0
    agent: int = 0


@dataclass
class NbcSettings:
    lead: int = nbc.DEFAULT_LEAD
    train_fraction: float = nbc.DEFAULT_TRAIN_FRACTION
    var_smoothing: float = nbc.DEFAULT_VAR_SMOOTHING


@dataclass
class ExperimentConfig:
    output_dir: str = "out"
    scenario: str | None = None  # defaults to <output_dir>/scenario.yaml
    preset: str = "full"
    seeds: Seeds = field(default_factory=Seeds)
    nbc: NbcSettings = field(default_factory=NbcSettings)
    env: EnvConfig = field(default_factory=EnvConfig)
    dqn: dqn.DqnConfig = field(default_factory=dqn.DqnConfig)
    baseline_cooldown: int = 0

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def scenario_path(self) -> Path:
        return Path(self.scenario) if self.scenario else self.out / "scenario.yaml"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)} | {"overrides"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        over = d.pop("overrides", {}) or {}
        try:
            cfg = cls(
                output_dir=str(d.get("output_dir", "out")),
                scenario=d.get("scenario"),
                preset=d.get("preset", "full"),
                seeds=Seeds(**(d.get("seeds") or {})),
                nbc=NbcSettings(**(over.get("nbc") or {})),
                env=EnvConfig(**(over.get("env") or {})),
                dqn=_dqn_config(over.get("dqn") or {}),
                baseline_cooldown=int((over.get("baseline") or {}).get("cooldown", 0)),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if cfg.preset not in PRESETS:
            raise ConfigError(f"unknown preset {cfg.preset!r}")
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        dq = asdict(self.dqn)
        dq["hidden"] = list(dq["hidden"])
        return {
            "output_dir": self.output_dir,
            "scenario": self.scenario,
            "preset": self.preset,
            "seeds": asdict(self.seeds),
            "overrides": {
                "nbc": asdict(self.nbc),
                "env": asdict(self.env),
                "dqn": dq,
                "baseline": {"cooldown": self.baseline_cooldown},
            },
        }


def _dqn_config(d: dict) -> dqn.DqnConfig:
    d = dict(d)
    if "hidden" in d:
        d["hidden"] = tuple(d["hidden"])
    return dqn.DqnConfig(**d)


# --------------------------------------------------------------------------
# pipeline stages


def gen_scenario(config: ExperimentConfig) -> Path:
    sc = generate_scenario(config.preset, config.seeds.traffic, config.seeds.placement)
    config.out.mkdir(parents=True, exist_ok=True)
    path = config.scenario_path
    path.parent.mkdir(parents=True, exist_ok=True)
    sc.save(path)
    log.info("wrote %s", path)
    return path


def load_deployment(config: ExperimentConfig) -> Deployment:
    path = config.scenario_path
    if not path.exists():
        raise ConfigError(f"scenario file {path} does not exist; run 'gen' first")
    return deploy(load_scenario(path))


def nbc_day(dep: Deployment, day: int | None = None) -> DayLog:
    """Unsteered day used to train the classifiers."""
    sc = dep.scenario
    return simulate_day(
        dep.topology,
        dep.chains,
        sc.profiles,
        day=sc.seeds["traffic"] if day is None else day,
        rho_threshold=sc.rho_threshold,
        buffer_minutes=sc.buffer_minutes,
        processing_ms=sc.processing_ms,
    )


def train_nbc(config: ExperimentConfig, dep: Deployment | None = None) -> nbc.NbcEvaluation:
    dep = dep or load_deployment(config)
    day = nbc_day(dep)
    s = config.nbc
    ev = nbc.fit_day(day, s.lead, s.train_fraction, s.var_smoothing)
    out = config.out / "nbc"
    out.mkdir(parents=True, exist_ok=True)
    day.write_telemetry_csv(out / "telemetry.csv")
    day.write_delay_csv(out / "delays.csv")
    nbc.save_models(out / "models.json", ev.models, s.lead, train_fraction=s.train_fraction)
    _write_auc(out / "auc.csv", ev.auc)
    log.info("classifiers trained; mean test AUC %.4f", ev.mean_auc)
    return ev


def _write_auc(path: Path, scores) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("vnf_id", "auc"))
        for v, a in enumerate(scores):
            w.writerow((v, repr(float(a))))


def eval_nbc(config: ExperimentConfig) -> nbc.NbcEvaluation:
    """Score the saved classifiers on the test window of the saved telemetry."""
    out = config.out / "nbc"
    models, lead = nbc.load_models(out / "models.json")
    day = _telemetry(out / "telemetry.csv")
    scores = []
    for v, model in enumerate(models):
        X, y = nbc.training_set(day, v, lead)
        cut = nbc.chronological_split(len(y), config.nbc.train_fraction)
        yt = y[cut:]
        scores.append(float("nan") if yt.min() == yt.max() else nbc.auc(nbc.posterior(model, X[cut:]), yt))
    _write_auc(out / "auc.csv", scores)
    return nbc.NbcEvaluation(models, scores, lead)


def _telemetry(path: Path) -> DayLog:
    from .traffic import read_telemetry_csv

    return read_telemetry_csv(path)


def make_env(config: ExperimentConfig, dep: Deployment, models) -> OranEnv:
    return OranEnv(dep, models, config.env)


def train_agent(config: ExperimentConfig, dep: Deployment | None = None, models=None) -> dqn.TrainResult:
    dep = dep or load_deployment(config)
    if models is None:
        models, _ = nbc.load_models(config.out / "nbc" / "models.json")
    env = make_env(config, dep, models)
    t0 = config.seeds.traffic
    days = [t0 + 1 + e for e in range(config.dqn.episodes)]
    result = dqn.train(env, config.dqn, seed=config.seeds.agent, days=days)
    out = config.out / "agent"
    out.mkdir(parents=True, exist_ok=True)
    dqn.save_checkpoint(out / "checkpoint.json", result, scenario=dep.scenario.name)
    with open(out / "returns.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("episode", "return", "discounted_return", "mean_loss"))
        for e, (r, d, l) in enumerate(zip(result.returns, result.discounted, result.mean_loss)):
            w.writerow((e, repr(r), repr(d), repr(l)))
    return result


@dataclass
class ArmResult:
    delays_ms: np.ndarray  # (1440, V)
    rewards: list[float]
    trace: list
    traffic_hash: str
    steerings: int

    @property
    def per_vnf_mean(self) -> np.ndarray:
        return self.delays_ms.mean(axis=0)

    @property
    def mean_delay(self) -> float:
        return float(self.delays_ms.mean())


def traffic_hash(env: OranEnv) -> str:
    h = hashlib.sha256()
    for cid in sorted(env.sim._series):
        h.update(np.ascontiguousarray(env.sim._series[cid]).tobytes())
    return h.hexdigest()


def run_agent_arm(env: OranEnv, net: dqn.QNetwork, encoder: dqn.FeatureEncoder, day: int, use_mask: bool = True) -> ArmResult:
    rewards, delays = dqn.run_episode(env, dqn.greedy_policy(net, encoder, use_mask), day)
    return ArmResult(delays, rewards, list(env.trace), traffic_hash(env), sum(r.accepted for r in env.trace))


def run_baseline_arm(env: OranEnv, day: int, cooldown: int = 0) -> ArmResult:
    policy = ReactivePolicy(env.topology.service_rates, cooldown)

    def act(env_: OranEnv, obs) -> int:
        stats = env_.last_stats
        if stats is None:
            return 0
        return policy.react(stats.records(), env_.action_mask(obs), stats.arrivals)

    rewards, delays = dqn.run_episode(env, act, day)
    return ArmResult(delays, rewards, list(env.trace), traffic_hash(env), sum(r.accepted for r in env.trace))


@dataclass
class ComparisonReport:
    per_vnf_agent_ms: list[float]
    per_vnf_baseline_ms: list[float]
    agent_mean_ms: float
    baseline_mean_ms: float
    improvement_pct: float
    nbc_auc: float
    convergence_episode: int
    agent_steerings: int
    baseline_steerings: int
    traffic_hash: str
    eval_day: int

    def to_dict(self) -> dict:
        return asdict(self)

    def summary(self) -> str:
        return "\n".join(
            [
                f"evaluation day            {self.eval_day}",
                f"baseline mean delay (ms)  {self.baseline_mean_ms:.3f}",
                f"agent mean delay (ms)     {self.agent_mean_ms:.3f}",
                f"improvement (%)           {self.improvement_pct:.2f}",
                f"classifier mean AUC       {self.nbc_auc:.4f}",
                f"convergence episode       {self.convergence_episode}",
                f"steerings agent/baseline  {self.agent_steerings}/{self.baseline_steerings}",
                f"traffic hash              {self.traffic_hash[:16]}",
            ]
        )


def compare(agent: ArmResult, baseline: ArmResult, nbc_auc: float, convergence: int, eval_day: int) -> ComparisonReport:
    if agent.traffic_hash != baseline.traffic_hash:
        raise HarnessError("evaluation arms saw different traffic")
    return ComparisonReport(
        per_vnf_agent_ms=agent.per_vnf_mean.tolist(),
        per_vnf_baseline_ms=baseline.per_vnf_mean.tolist(),
        agent_mean_ms=agent.mean_delay,
        baseline_mean_ms=baseline.mean_delay,
        improvement_pct=percent_improvement(baseline.mean_delay, agent.mean_delay),
        nbc_auc=nbc_auc,
        convergence_episode=convergence,
        agent_steerings=agent.steerings,
        baseline_steerings=baseline.steerings,
        traffic_hash=agent.traffic_hash,
        eval_day=eval_day,
    )


def run_evaluation(config: ExperimentConfig, dep: Deployment | None = None, models=None, checkpoint: dqn.Checkpoint | None = None) -> ComparisonReport:
    dep = dep or load_deployment(config)
    nbc_dir = config.out / "nbc"
    if models is None:
        models, _ = nbc.load_models(nbc_dir / "models.json")
    if checkpoint is None:
        try:
            checkpoint = dqn.load_checkpoint(config.out / "agent" / "checkpoint.json", dep.topology.n_vnfs, len(dep.chains))
        except dqn.DqnError as exc:
            raise CheckpointMismatch(str(exc)) from None
    elif checkpoint.encoder.n_vnfs != dep.topology.n_vnfs:
        raise CheckpointMismatch(
            f"checkpoint expects {checkpoint.encoder.n_vnfs} VNFs; scenario has {dep.topology.n_vnfs}"
        )
    day = config.seeds.traffic + EVAL_DAY_OFFSET
    agent = run_agent_arm(make_env(config, dep, models), checkpoint.net, checkpoint.encoder, day, checkpoint.config.use_action_mask)
    base = run_baseline_arm(make_env(config, dep, models), day, config.baseline_cooldown)
    auc_path = nbc_dir / "auc.csv"
    mean_auc = float("nan")
    if auc_path.exists():
        with open(auc_path) as fh:
            vals = [float(r["auc"]) for r in csv.DictReader(fh)]
        mean_auc = float(np.nanmean(vals))
    curve = checkpoint.greedy_returns or checkpoint.returns
    report = compare(agent, base, mean_auc, dqn.convergence_episode(curve), day)
    write_report(config.out / "eval", report, agent, base)
    return report


def write_report(out: Path, report: ComparisonReport, agent: ArmResult, base: ArmResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_delay_csv(out / "delays_agent.csv", agent.delays_ms)
    write_delay_csv(out / "delays_baseline.csv", base.delays_ms)
    write_trace(out / "trace_agent.jsonl", agent.trace)
    write_trace(out / "trace_baseline.jsonl", base.trace)
    with open(out / "per_vnf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("vnf_id", "agent_mean_delay_ms", "baseline_mean_delay_ms"))
        for v, (a, b) in enumerate(zip(report.per_vnf_agent_ms, report.per_vnf_baseline_ms)):
            w.writerow((v, repr(a), repr(b)))
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=1))
    (out / "summary.txt").write_text(report.summary() + "\n")


def load_report(path: str | Path) -> ComparisonReport:
    """Read ``report.json`` written by :func:`write_report`."""
    return ComparisonReport(**json.loads(Path(path).read_text()))


def run_pipeline(config: ExperimentConfig) -> ComparisonReport:
    """gen -> train-nbc -> train-agent -> evaluate from one config."""
    gen_scenario(config)
    dep = load_deployment(config)
    ev = train_nbc(config, dep)
    train_agent(config, dep, ev.models)
    return run_evaluation(config, dep, ev.models)


__all__ = [
    "ComparisonReport",
    "ExperimentConfig",
    "gen_scenario",
    "generate_scenario",
    "load_report",
    "eval_nbc",
    "percent_improvement",
    "run_evaluation",
    "run_pipeline",
    "train_agent",
    "train_nbc",
    "MINUTES_PER_DAY",
]
