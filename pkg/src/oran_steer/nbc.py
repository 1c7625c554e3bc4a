"""Per-VNF Gaussian naive Bayes congestion classifier.

Features are the DCAE per-minute aggregates ``(avg_packets_per_min,
avg_latency_ms)``; the target is the congestion label ``lead`` minutes later.
Class-conditional densities are products of univariate normals (diagonal
covariance) and posteriors are computed in log space.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .traffic import DayLog, TelemetryRecord

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_VAR_SMOOTHING = 1e-9
DEFAULT_LEAD = 1
DEFAULT_TRAIN_FRACTION = 0.7

NOT_CONGESTED, CONGESTED = 0, 1


class NbcError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NbcModel:
    """Priors ``(2,)``, means ``(2, K)`` and variances ``(2, K)``; row 1 is *congested*."""

    priors: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        for name in ("priors", "means", "variances"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.priors.shape != (2,) or self.means.shape != self.variances.shape or self.means.shape[0] != 2:
            raise NbcError("malformed model arrays")
        if abs(self.priors.sum() - 1.0) > 1e-12 or np.any(self.priors <= 0):
            raise NbcError("priors must be positive and sum to 1")
        if np.any(~(self.variances > 0)):
            raise NbcError("variances must be positive")

    def to_dict(self) -> dict:
        return {
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NbcModel":
        return cls(np.array(d["priors"]), np.array(d["means"]), np.array(d["variances"]))


def fit(features, labels, var_smoothing: float = DEFAULT_VAR_SMOOTHING) -> NbcModel:
    """Maximum-likelihood Gaussian NB fit.

    The variance floor is ``var_smoothing`` times each feature's overall
    variance, so the fit is invariant under affine rescaling of a feature.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels).astype(int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise NbcError("features must be (n, K) with one label per row")
    if not np.isin(y, (0, 1)).all():
        raise NbcError("labels must be 0 or 1")
    counts = np.bincount(y, minlength=2)
    if counts.min() == 0:
        raise NbcError(
            "training data holds a single class; widen the training window so both "
            "congested and uncongested minutes are present"
        )
    scale2 = X.var(axis=0)
    scale2 = np.where(scale2 > 0, scale2, np.where(np.abs(X).max(axis=0) > 0, np.abs(X).max(axis=0) ** 2, 1.0))
    floor = var_smoothing * scale2
    means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([np.maximum(X[y == c].var(axis=0), floor) for c in (0, 1)])
    return NbcModel(counts / counts.sum(), means, variances)


def log_joint(model: NbcModel, X) -> np.ndarray:
    """``log p(x | c) + log p(c)`` for every row of ``X``; shape ``(n, 2)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    var = model.variances
    ll = -0.5 * (np.log(2 * np.pi * var)[None] + (X[:, None, :] - model.means[None]) ** 2 / var[None]).sum(axis=2)
    return ll + np.log(model.priors)[None]


def posterior(model: NbcModel, x):
    """Posterior probability of *congested*; scalar for one sample, array for many."""
    lj = log_joint(model, x)
    p = np.exp(lj[:, 1] - logsumexp(lj, axis=1))
    return float(p[0]) if np.ndim(x) == 1 else p


def classify(model: NbcModel, x):
    """Arg-max class; ties go to *congested*."""
    lj = log_joint(model, x)
    out = (lj[:, 1] >= lj[:, 0]).astype(int)
    return int(out[0]) if np.ndim(x) == 1 else out


def auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic with midranks."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise NbcError("AUC needs both labels present")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def features_of(arrivals, latency_ms) -> np.ndarray:
    return np.column_stack([np.asarray(arrivals, dtype=float), np.asarray(latency_ms, dtype=float)])


def training_set(day: DayLog, vnf: int, lead: int = DEFAULT_LEAD) -> tuple[np.ndarray, np.ndarray]:
    """Features at minute ``t`` paired with the label at ``t + lead``."""
    if lead < 0:
        raise NbcError("lead must be non-negative")
    n = day.n_minutes - lead
    X = features_of(day.arrivals[:n, vnf], day.latency_ms[:n, vnf])
    return X, day.congested[lead:, vnf].astype(int)


def chronological_split(n: int, train_fraction: float = DEFAULT_TRAIN_FRACTION) -> int:
    """Index of the first test row of a chronological split."""
    if not 0 < train_fraction < 1:
        raise NbcError("train_fraction must lie in (0, 1)")
    return int(round(n * train_fraction))


@dataclass
class NbcEvaluation:
    models: list[NbcModel]
    auc: list[float]  # nan where the test window holds a single class
    lead: int

    @property
    def mean_auc(self) -> float:
        return float(np.nanmean(self.auc))


def fit_day(
    day: DayLog,
    lead: int = DEFAULT_LEAD,
    train_fraction: float = DEFAULT_TRAIN_FRACTION,
    var_smoothing: float = DEFAULT_VAR_SMOOTHING,
) -> NbcEvaluation:
    """Fit one model per VNF on the head of the day and score the tail."""
    models, scores = [], []
    for v in range(day.n_vnfs):
        X, y = training_set(day, v, lead)
        cut = chronological_split(len(y), train_fraction)
        try:
            model = fit(X[:cut], y[:cut], var_smoothing)
        except NbcError as exc:
            raise NbcError(f"VNF {v}: {exc}") from None
        models.append(model)
        y_test = y[cut:]
        if y_test.min() == y_test.max():
            scores.append(float("nan"))
        else:
            scores.append(auc(posterior(model, X[cut:]), y_test))
    return NbcEvaluation(models, scores, lead)


def predict_day(
    models: Sequence[NbcModel],
    records: Sequence[TelemetryRecord],
    previous: np.ndarray | None = None,
) -> np.ndarray:
    """Congestion flags (one per VNF) for the next minute from this minute's telemetry.

    A VNF without offered traffic is never flagged.  A VNF missing from
    ``records`` keeps its previous flag.
    """
    n = len(models)
    flags = np.zeros(n, dtype=np.int8) if previous is None else np.array(previous, dtype=np.int8)
    seen = set()
    for r in records:
        seen.add(r.vnf_id)
        if r.avg_packets_per_min <= 0:
            flags[r.vnf_id] = 0
        else:
            flags[r.vnf_id] = classify(models[r.vnf_id], np.array([r.avg_packets_per_min, r.avg_latency_ms]))
    missing = sorted(set(range(n)) - seen)
    if missing:
        log.warning("no telemetry for VNF(s) %s; carrying previous flags", missing)
    return flags


class CongestionPredictor:
    """Vectorised :func:`predict_day` over stacked per-VNF models."""

    def __init__(self, models: Sequence[NbcModel]):
        self.models = list(models)
        self._means = np.stack([m.means for m in models])  # (V, 2, K)
        self._vars = np.stack([m.variances for m in models])
        self._const = (np.log(np.stack([m.priors for m in models]))
                       - 0.5 * np.log(2 * np.pi * self._vars).sum(axis=2))  # (V, 2)

    def __len__(self) -> int:
        return len(self.models)

    def log_odds(self, arrivals, latency_ms) -> np.ndarray:
        x = features_of(arrivals, latency_ms)[:, None, :]  # (V, 1, K)
        lj = self._const - 0.5 * ((x - self._means) ** 2 / self._vars).sum(axis=2)
        return lj[:, 1] - lj[:, 0]

    def predict(self, arrivals, latency_ms) -> np.ndarray:
        flags = (self.log_odds(arrivals, latency_ms) >= 0).astype(np.int8)
        flags[np.asarray(arrivals) <= 0] = 0
        return flags


def save_models(path: str | Path, models: Sequence[NbcModel], lead: int = DEFAULT_LEAD, **meta) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "oran_steer.nbc",
        "lead": lead,
        "features": ["avg_packets_per_min", "avg_latency_ms"],
        "meta": meta,
        "models": [dict(vnf_id=i, **m.to_dict()) for i, m in enumerate(models)],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_models(path: str | Path) -> tuple[list[NbcModel], int]:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise NbcError(f"{path}: unsupported schema_version {doc.get('schema_version')}")
    models = sorted(doc["models"], key=lambda m: m["vnf_id"])
    if [m["vnf_id"] for m in models] != list(range(len(models))):
        raise NbcError(f"{path}: VNF ids must be dense")
    return [NbcModel.from_dict(m) for m in models], int(doc["lead"])
