"""Multiple-instance learning over frame bags.

A sequence becomes a bag of k sampled frames (random, uniform, or
temporal-cluster sampling); bags inherit the sequence's binary label
(significant pain). MI-SVM trains a classifier under the assumption that a
positive bag contains at least one positive instance: each positive bag is
summarized by a representative instance, the classifier is fit on negatives
plus representatives, and representatives are reassigned to the
highest-scoring instance until the assignment stops changing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import serialize
from .dataset import SequenceSample, write_feature_matrix
from .svm import (
    KernelSpec,
    SolverParams,
    SvcModel,
    decision_values,
    svc_from_dict,
    svc_to_dict,
    train_svc,
)

log = logging.getLogger(__name__)

SAMPLER_STRATEGIES = ("random", "uniform", "cluster")

MAX_MISVM_ITERATIONS = 20


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 30
    strategy: str = "cluster"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.strategy not in SAMPLER_STRATEGIES:
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")


@dataclass(frozen=True)
class Bag:
    """min(k, n) temporally ordered frames standing in for a sequence."""

    bag_id: str
    patient_id: int
    instances: np.ndarray  # (k', d)
    label: bool
    source_indices: tuple[int, ...]  # original frame positions, increasing

    def __post_init__(self):
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValueError("a bag needs at least one instance row")
        if len(self.source_indices) != self.instances.shape[0]:
            raise ValueError("one source index per instance is required")
        if any(b <= a for a, b in zip(self.source_indices, self.source_indices[1:])):
            raise ValueError("source indices must be strictly increasing")


def sample_random(sample: SequenceSample, k: int, seed: int) -> np.ndarray:
    """First min(k, n) entries of a seeded permutation, back in time order."""
    n = sample.n_frames
    rng = np.random.default_rng(seed)
    picked = rng.permutation(n)[: min(k, n)]
    return np.sort(picked)


def sample_uniform(sample: SequenceSample, k: int) -> np.ndarray:
    """Indices floor(i*n/k), deduplicated; equal gaps, no randomness."""
    n = sample.n_frames
    idx = (np.arange(k) * n) // k
    return np.unique(idx[idx < n])


def sample_cluster(sample: SequenceSample, k: int) -> np.ndarray:
    """Temporal-midpoint frames of min(k, n) contiguous segments.

    Segments come from agglomerative clustering restricted to temporally
    adjacent merges: repeatedly join the adjacent pair of segments whose
    centroids (Euclidean, raw feature space) are closest, earliest pair on
    ties, until min(k, n) segments remain.
    """
    X = sample.frames
    n = X.shape[0]
    target = min(k, n)
    # segment state: contiguous [start, end) intervals in temporal order
    starts = list(range(n))
    ends = list(range(1, n + 1))
    centroids = [X[i].astype(np.float64) for i in range(n)]
    sizes = [1] * n
    gaps = [float(np.linalg.norm(centroids[i + 1] - centroids[i]))
            for i in range(n - 1)]
    while len(starts) > target:
        j = int(np.argmin(gaps))  # earliest minimal adjacent pair
        total = sizes[j] + sizes[j + 1]
        centroids[j] = (sizes[j] * centroids[j] + sizes[j + 1] * centroids[j + 1]) / total
        sizes[j] = total
        ends[j] = ends[j + 1]
        del starts[j + 1], ends[j + 1], centroids[j + 1], sizes[j + 1], gaps[j]
        if j > 0:
            gaps[j - 1] = float(np.linalg.norm(centroids[j] - centroids[j - 1]))
        if j < len(gaps):
            gaps[j] = float(np.linalg.norm(centroids[j + 1] - centroids[j]))
    return np.array(
        [(s + e - 1) // 2 for s, e in zip(starts, ends)], dtype=np.int64
    )


def make_bag(sample: SequenceSample, config: SamplerConfig) -> Bag:
    if config.strategy == "random":
        idx = sample_random(sample, config.k, config.seed)
    elif config.strategy == "uniform":
        idx = sample_uniform(sample, config.k)
    else:
        idx = sample_cluster(sample, config.k)
    return Bag(
        bag_id=sample.sequence_id,
        patient_id=sample.patient_id,
        instances=sample.frames[idx],
        label=sample.label.significant,
        source_indices=tuple(int(i) for i in idx),
    )


def make_bags(samples: Iterable[SequenceSample], config: SamplerConfig) -> list[Bag]:
    return [make_bag(s, config) for s in samples]


@dataclass
class MilModel:
    svc: SvcModel
    positive_bag_ids: tuple[str, ...]
    witness_history: list[tuple[int, ...]] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    @property
    def witnesses(self) -> dict[str, int]:
        """Final representative instance index per positive bag."""
        if not self.witness_history:
            return {}
        return dict(zip(self.positive_bag_ids, self.witness_history[-1]))


def train_misvm(
    bags: Sequence[Bag],
    params: SolverParams = SolverParams(),
    kernel: KernelSpec = KernelSpec.rbf(),
) -> MilModel:
    """Alternate SVC training and representative reassignment, at most
    MAX_MISVM_ITERATIONS rounds, stopping when assignments repeat."""
    positives = [b for b in bags if b.label]
    negatives = [b for b in bags if not b.label]
    if not positives or not negatives:
        raise ValueError("MI-SVM needs at least one bag of each class")
    neg_X = np.vstack([b.instances for b in negatives])
    reps = np.array([b.instances.mean(axis=0) for b in positives])
    y = np.concatenate([-np.ones(neg_X.shape[0]), np.ones(len(positives))])

    svc = None
    history: list[tuple[int, ...]] = []
    converged = False
    iterations = 0
    for iterations in range(1, MAX_MISVM_ITERATIONS + 1):
        svc = train_svc(np.vstack([neg_X, reps]), y, params=params, kernel=kernel)
        assign = tuple(
            int(np.argmax(decision_values(svc, b.instances))) for b in positives
        )
        if history and assign == history[-1]:
            converged = True
            break
        history.append(assign)
        reps = np.array([b.instances[i] for b, i in zip(positives, assign)])
    else:
        log.warning("MI-SVM assignment did not settle in %d rounds", iterations)
    return MilModel(
        svc=svc,
        positive_bag_ids=tuple(b.bag_id for b in positives),
        witness_history=history,
        converged=converged,
        iterations=iterations,
    )


def predict_bag(model: MilModel, bag: Bag) -> float:
    """Bag decision value: the maximum instance decision value."""
    d = model.svc.support_vectors.shape[1]
    if bag.instances.shape[1] != d:
        raise ValueError(
            f"bag instances have dimension {bag.instances.shape[1]}, model expects {d}"
        )
    return float(np.max(decision_values(model.svc, bag.instances)))


def predict_bags(model: MilModel, bags: Sequence[Bag]) -> np.ndarray:
    return np.array([predict_bag(model, b) for b in bags])


def dump_bag_matrix(path, bag: Bag) -> None:
    """Write a bag's instance rows in the shared columnar binary layout."""
    write_feature_matrix(path, bag.instances)


def mil_to_dict(model: MilModel) -> dict[str, Any]:
    return serialize.wrap("misvm", {
        "svc": svc_to_dict(model.svc),
        "positive_bag_ids": list(model.positive_bag_ids),
        "witness_history": [list(row) for row in model.witness_history],
        "converged": model.converged,
        "iterations": model.iterations,
    })


def mil_from_dict(doc: dict[str, Any]) -> MilModel:
    payload = serialize.unwrap(doc, "misvm")
    return MilModel(
        svc=svc_from_dict(payload["svc"]),
        positive_bag_ids=tuple(payload["positive_bag_ids"]),
        witness_history=[tuple(row) for row in payload["witness_history"]],
        converged=bool(payload["converged"]),
        iterations=int(payload["iterations"]),
    )
