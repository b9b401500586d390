"""Second-level aggregation: one sequence-level score from per-frame scores.

The first-level network emits a score per frame; a sequence's prediction is
either the plain maximum of those scores or a model (Gaussian process, SVR,
or SVC) applied to summary statistics of them. Statistic inputs are
standardized with the training fold's scaler, which travels with the model.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import serialize
from .gp import GpHyper, GpModel, fit as gp_fit, gp_from_dict, gp_to_dict, predict_mean
from .svm import (
    KernelSpec,
    SolverParams,
    SvcModel,
    SvrModel,
    decision_value,
    predict_svr,
    svc_from_dict,
    svc_to_dict,
    svr_from_dict,
    svr_to_dict,
    train_svc,
    train_svr,
)

AGGREGATOR_KINDS = ("max", "gp", "svr", "svc")

N_STATS = 5


@dataclass(frozen=True)
class SequenceStats:
    """Summary statistics of one sequence's frame scores."""

    minimum: float
    maximum: float
    mean: float
    median: float
    variance: float

    @property
    def vector(self) -> np.ndarray:
        return np.array(
            [self.minimum, self.maximum, self.mean, self.median, self.variance]
        )


def sequence_stats(scores: Sequence[float] | np.ndarray) -> SequenceStats:
    """Exact order statistics; even-count median is the midpoint average and
    the variance is the population variance (divide by n)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("cannot summarize an empty score sequence")
    # summing in sorted order makes every statistic exactly symmetric
    s = np.sort(s)
    return SequenceStats(
        minimum=float(s.min()),
        maximum=float(s.max()),
        mean=float(s.mean()),
        median=float(np.median(s)),
        variance=float(s.var()),
    )


def aggregate_max(scores: Sequence[float] | np.ndarray) -> float:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("cannot aggregate an empty score sequence")
    return float(s.max())


def stats_matrix(score_lists: Sequence[Sequence[float] | np.ndarray]) -> np.ndarray:
    """Stack sequence_stats vectors for many sequences: (n_sequences, 5)."""
    return np.array([sequence_stats(s).vector for s in score_lists])


@dataclass(frozen=True)
class StatsScaler:
    """Column standardization fitted on the training fold."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


def fit_scaler(X: np.ndarray) -> StatsScaler:
    X = np.asarray(X, dtype=np.float64)
    std = X.std(axis=0)
    # constant columns (e.g. variance of constant sequences) pass through
    return StatsScaler(mean=X.mean(axis=0), std=np.where(std < 1e-12, 1.0, std))


@dataclass
class Aggregator:
    """A trained second-level model of one of the four kinds."""

    kind: str
    scaler: StatsScaler | None = None
    gp: GpModel | None = None
    svr: SvrModel | None = None
    svc: SvcModel | None = None


def _as_signs(labels: Sequence[Any] | np.ndarray) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype == bool:
        return np.where(y, 1.0, -1.0)
    y = y.astype(np.float64)
    if set(np.unique(y)) <= {0.0, 1.0}:
        return np.where(y > 0, 1.0, -1.0)
    if set(np.unique(y)) <= {-1.0, 1.0}:
        return y
    raise ValueError("classification labels must be boolean, 0/1, or -1/+1")


def train_aggregator(
    kind: str,
    stats: np.ndarray,
    labels: Sequence[Any] | np.ndarray,
    *,
    kernel: KernelSpec | None = None,
    svm_params: SolverParams | None = None,
    epsilon: float = 0.01,
    gp_steps: int = 100,
    gp_init: GpHyper | None = None,
) -> Aggregator:
    """Fit one aggregator on (n_sequences, 5) statistic rows.

    ``labels`` are scaled scores in [0, 1] for the regression kinds and
    binary classes for "svc". "max" needs no training and ignores the data.
    """
    if kind not in AGGREGATOR_KINDS:
        raise ValueError(f"unknown aggregator kind {kind!r}")
    if kind == "max":
        return Aggregator(kind="max")
    X = np.asarray(stats, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_STATS:
        raise ValueError(f"stats must be (n, {N_STATS}), got {X.shape}")
    scaler = fit_scaler(X)
    Xs = scaler.transform(X)
    kernel = kernel if kernel is not None else KernelSpec.rbf()
    params = svm_params if svm_params is not None else SolverParams(C=10.0)
    if kind == "gp":
        model = gp_fit(
            Xs, np.asarray(labels, dtype=np.float64), init=gp_init,
            optimize=gp_steps > 0, steps=max(gp_steps, 1),
        )
        return Aggregator(kind="gp", scaler=scaler, gp=model)
    if kind == "svr":
        model = train_svr(
            Xs, np.asarray(labels, dtype=np.float64),
            params=params, epsilon=epsilon, kernel=kernel,
        )
        return Aggregator(kind="svr", scaler=scaler, svr=model)
    model = train_svc(Xs, _as_signs(labels), params=params, kernel=kernel)
    return Aggregator(kind="svc", scaler=scaler, svc=model)


def predict_sequence(agg: Aggregator, scores: Sequence[float] | np.ndarray) -> float:
    """One sequence-level value: the score for regression kinds, the raw
    decision value for "svc" (threshold at 0 for the class; keep raw for
    ranking)."""
    if agg.kind == "max":
        return aggregate_max(scores)
    x = agg.scaler.transform(sequence_stats(scores).vector.reshape(1, -1))[0]
    if agg.kind == "gp":
        return float(predict_mean(agg.gp, x))
    if agg.kind == "svr":
        return float(predict_svr(agg.svr, x))
    return float(decision_value(agg.svc, x))


def classify_sequence(agg: Aggregator, scores: Sequence[float] | np.ndarray) -> bool:
    """Class decision for an "svc" aggregator: decision value >= 0."""
    if agg.kind != "svc":
        raise ValueError(f"classify_sequence needs an svc aggregator, got {agg.kind!r}")
    return predict_sequence(agg, scores) >= 0.0


def clamp_unit(values: np.ndarray | float) -> np.ndarray | float:
    """Clamp predictions to [0, 1] (applied before raw-scale error reporting)."""
    return np.clip(values, 0.0, 1.0)


def _scaler_to_dict(scaler: StatsScaler) -> dict[str, Any]:
    return {
        "mean": serialize.encode_f64(scaler.mean),
        "std": serialize.encode_f64(scaler.std),
    }


def _scaler_from_dict(doc: dict[str, Any]) -> StatsScaler:
    return StatsScaler(
        mean=serialize.decode_f64(doc["mean"]), std=serialize.decode_f64(doc["std"])
    )


def aggregator_to_dict(agg: Aggregator) -> dict[str, Any]:
    payload: dict[str, Any] = {"aggregator_kind": agg.kind}
    if agg.scaler is not None:
        payload["scaler"] = _scaler_to_dict(agg.scaler)
    if agg.gp is not None:
        payload["model"] = gp_to_dict(agg.gp)
    elif agg.svr is not None:
        payload["model"] = svr_to_dict(agg.svr)
    elif agg.svc is not None:
        payload["model"] = svc_to_dict(agg.svc)
    return serialize.wrap("aggregator", payload)


def aggregator_from_dict(doc: dict[str, Any]) -> Aggregator:
    payload = serialize.unwrap(doc, "aggregator")
    kind = payload.get("aggregator_kind")
    if kind not in AGGREGATOR_KINDS:
        raise serialize.EnvelopeError(f"unknown aggregator kind {kind!r}")
    if kind == "max":
        return Aggregator(kind="max")
    scaler = _scaler_from_dict(payload["scaler"])
    if kind == "gp":
        return Aggregator(kind=kind, scaler=scaler, gp=gp_from_dict(payload["model"]))
    if kind == "svr":
        return Aggregator(kind=kind, scaler=scaler, svr=svr_from_dict(payload["model"]))
    return Aggregator(kind=kind, scaler=scaler, svc=svc_from_dict(payload["model"]))
