"""Patient-disjoint evaluation: splits, metrics, and the experiment grid.

Folds are defined purely by patient id — leave-one-subject-out or repeated
random patient-level splits — so no patient ever contributes to both sides.
Regression runs report MAE on the raw 0–10 scale; binary runs report ROC
AUC per fold and pooled. The experiment runner crosses feature kinds with
methods (two-level variants and the bag-based classifiers), deriving one
sub-seed per (kind, fold) so folds can run in any order or in parallel
without changing the numbers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .aggregate import clamp_unit, stats_matrix, train_aggregator, predict_sequence
from .dataset import FeatureKind, SequenceSample
from .mil import SamplerConfig, make_bags, predict_bags, train_misvm
from .mlp import MlpConfig, train_first_level, predict_frames
from .svm import KernelSpec, SolverParams

REGRESSION_METHODS = ("dfl-max", "dfl-gp", "dfl-svr")
BINARY_METHODS = ("dfl-svc", "mil-random", "mil-uniform", "mil-cluster")
ALL_METHODS = REGRESSION_METHODS + BINARY_METHODS


# ---------------------------------------------------------------------------
# split plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    fold_id: str
    train_patients: frozenset[int]
    test_patients: frozenset[int]

    def __post_init__(self):
        if self.train_patients & self.test_patients:
            raise ValueError(f"fold {self.fold_id}: train and test patients overlap")


@dataclass(frozen=True)
class SplitPlan:
    scheme: str  # "loso" or "random"
    folds: tuple[Fold, ...]


def _patient_ids(samples: Iterable[SequenceSample]) -> list[int]:
    return sorted({s.patient_id for s in samples})


def loso_folds(samples: Sequence[SequenceSample]) -> SplitPlan:
    """One fold per patient; that patient's sequences are the test set."""
    patients = _patient_ids(samples)
    if len(patients) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 patients")
    folds = tuple(
        Fold(
            fold_id=f"loso-{p}",
            train_patients=frozenset(q for q in patients if q != p),
            test_patients=frozenset([p]),
        )
        for p in patients
    )
    return SplitPlan(scheme="loso", folds=folds)


def random_patient_splits(
    samples: Sequence[SequenceSample], ratio: float, repetitions: int, seed: int
) -> SplitPlan:
    """``repetitions`` independent shuffles of the patient list; the first
    ceil(ratio * P) patients train, the rest test."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be strictly between 0 and 1")
    if repetitions < 1:
        raise ValueError("at least one repetition is required")
    patients = _patient_ids(samples)
    if len(patients) < 2:
        raise ValueError("patient-level splits need at least 2 patients")
    n_train = math.ceil(ratio * len(patients))
    if n_train == 0 or n_train == len(patients):
        raise ValueError(
            f"ratio {ratio} leaves an empty side for {len(patients)} patients"
        )
    folds = []
    for rep in range(repetitions):
        rng = np.random.default_rng(derive_seed(seed, rep))
        order = [patients[i] for i in rng.permutation(len(patients))]
        folds.append(Fold(
            fold_id=f"split-{rep}",
            train_patients=frozenset(order[:n_train]),
            test_patients=frozenset(order[n_train:]),
        ))
    return SplitPlan(scheme="random", folds=tuple(folds))


def split_samples(
    samples: Sequence[SequenceSample], fold: Fold
) -> tuple[list[SequenceSample], list[SequenceSample]]:
    train = [s for s in samples if s.patient_id in fold.train_patients]
    test = [s for s in samples if s.patient_id in fold.test_patients]
    return train, test


def derive_seed(master: int, index: int) -> int:
    """Stable 64-bit sub-seed: splitmix-style avalanche of master and index."""
    z = (master + 0x9E3779B97F4A7C15 * (index + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def mae(preds: Sequence[float] | np.ndarray, targets: Sequence[float] | np.ndarray) -> float:
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"prediction/target shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValueError("MAE of an empty prediction set is undefined")
    return float(np.abs(p - t).mean())


def raw_scale(scaled_preds: np.ndarray) -> np.ndarray:
    """Scaled [0,1] predictions to the raw 0–10 scale, clamped first."""
    return np.asarray(clamp_unit(np.asarray(scaled_preds, dtype=np.float64))) * 10.0


@dataclass(frozen=True)
class RocCurve:
    points: np.ndarray  # (m, 2) rows of (false-positive rate, true-positive rate)
    auc: float


def roc_auc(decisions: Sequence[float] | np.ndarray, labels: Sequence[bool] | np.ndarray) -> RocCurve:
    """Threshold sweep over the unique decision values, AUC by trapezoid.

    Tied decision values collapse to one sweep point, which credits ties at
    one half — so the area equals the pairwise concordance probability.
    """
    d = np.asarray(decisions, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if d.shape != y.shape or d.ndim != 1:
        raise ValueError("decisions and labels must be equal-length vectors")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one example of each class")
    order = np.argsort(-d, kind="stable")
    d_sorted, y_sorted = d[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # keep only the last index of each run of equal decision values
    last_of_run = np.append(d_sorted[1:] != d_sorted[:-1], True)
    tpr = np.concatenate([[0.0], tp[last_of_run] / n_pos])
    fpr = np.concatenate([[0.0], fp[last_of_run] / n_neg])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(points=np.column_stack([fpr, tpr]), auc=auc)


# ---------------------------------------------------------------------------
# experiment grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    kinds: tuple[str, ...] = ("keypoints2d",)
    methods: tuple[str, ...] = ALL_METHODS
    scheme: str = "loso"
    ratio: float = 0.8
    repetitions: int = 10
    seed: int = 0
    mlp_epochs: int = 50
    mlp_hidden: tuple[int, int, int] = (200, 100, 50)
    mlp_learning_rate: float = 1e-3
    mlp_dropout: float = 0.5
    mlp_batch_size: int = 64
    mlp_frames_per_sequence: int = 16
    svm_c: float = 10.0
    svm_gamma: float | None = None
    svr_epsilon: float = 0.01
    gp_steps: int = 50
    sampler_k: int = 30
    workers: int = 1
    allow_partial: bool = False

    def __post_init__(self):
        for kind in self.kinds:
            FeatureKind.from_key(kind)  # raises on unknown keys
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.scheme not in ("loso", "random"):
            raise ValueError(f"unknown split scheme {self.scheme!r}")


@dataclass(frozen=True)
class PredictionRow:
    sequence_id: str
    fold_id: str
    true_raw: int
    predicted: float  # raw-scale score (regression) or class 0/1 (binary)
    decision: float | None  # raw decision value for binary methods


@dataclass(frozen=True)
class FoldFailure:
    fold_id: str
    reason: str


@dataclass
class CellResult:
    kind: str
    method: str
    task: str  # "regression" or "binary"
    fold_ids: list[str] = field(default_factory=list)
    fold_values: list[float] = field(default_factory=list)
    aggregate: float = float("nan")
    pooled: float = float("nan")
    rows: list[PredictionRow] = field(default_factory=list)
    failures: list[FoldFailure] = field(default_factory=list)


@dataclass
class EvalReport:
    config: ExperimentConfig
    scheme: str
    n_folds: int
    cells: list[CellResult]

    def cell(self, kind: str, method: str) -> CellResult:
        for c in self.cells:
            if c.kind == kind and c.method == method:
                return c
        raise KeyError(f"no cell for kind {kind!r} method {method!r}")


def method_task(method: str) -> str:
    return "regression" if method in REGRESSION_METHODS else "binary"


def _mlp_config(config: ExperimentConfig, dim: int, seed: int) -> MlpConfig:
    return MlpConfig(
        input_dim=dim,
        hidden=config.mlp_hidden,
        dropout_rate=config.mlp_dropout,
        learning_rate=config.mlp_learning_rate,
        epochs=config.mlp_epochs,
        batch_size=config.mlp_batch_size,
        frames_per_sequence_per_epoch=config.mlp_frames_per_sequence,
        seed=seed & 0x7FFFFFFF,
    )


def _solver_params(config: ExperimentConfig, seed: int) -> SolverParams:
    return SolverParams(C=config.svm_c, seed=seed & 0x7FFFFFFF)


def _kernel(config: ExperimentConfig) -> KernelSpec:
    return KernelSpec.rbf(config.svm_gamma)


class FoldError(RuntimeError):
    """A module error, annotated with the (kind, fold) it occurred in."""


def _evaluate_fold(
    samples: Sequence[SequenceSample],
    fold: Fold,
    kind: str,
    methods: Sequence[str],
    config: ExperimentConfig,
    fold_seed: int,
) -> dict[str, tuple[list[PredictionRow], str | None]]:
    """Run every requested method on one fold.

    Returns, per method, (prediction rows, failure reason or None). Rows are
    empty when the failure precedes prediction. Data-dependent degeneracies
    (empty side, single-class training data) become recorded failures;
    anything else raises FoldError.
    """
    train, test = split_samples(samples, fold)
    out: dict[str, tuple[list[PredictionRow], str | None]] = {}
    if not train or not test:
        reason = "no training sequences" if not train else "no test sequences"
        return {m: ([], reason) for m in methods}

    dfl_methods = [m for m in methods if m.startswith("dfl-")]
    mil_methods = [m for m in methods if m.startswith("mil-")]

    try:
        if dfl_methods:
            dim = FeatureKind.from_key(kind).dim
            mlp, _ = train_first_level(
                train, _mlp_config(config, dim, derive_seed(fold_seed, 1))
            )
            train_scores = [predict_frames(mlp, s) for s in train]
            test_scores = [predict_frames(mlp, s) for s in test]
            stats = stats_matrix(train_scores)
            scaled = np.array([s.label.scaled for s in train])
            for method in dfl_methods:
                agg_kind = method.removeprefix("dfl-")
                if agg_kind == "svc":
                    classes = {s.label.significant for s in train}
                    if len(classes) < 2:
                        out[method] = ([], "single-class training labels")
                        continue
                    agg = train_aggregator(
                        "svc", stats, [s.label.significant for s in train],
                        kernel=_kernel(config),
                        svm_params=_solver_params(config, derive_seed(fold_seed, 2)),
                    )
                    rows = []
                    for s, scores in zip(test, test_scores):
                        value = predict_sequence(agg, scores)
                        rows.append(PredictionRow(
                            sequence_id=s.sequence_id, fold_id=fold.fold_id,
                            true_raw=s.label.raw,
                            predicted=float(value >= 0), decision=float(value),
                        ))
                    out[method] = (rows, None)
                else:
                    agg = train_aggregator(
                        agg_kind, stats, scaled,
                        kernel=_kernel(config),
                        svm_params=_solver_params(config, derive_seed(fold_seed, 2)),
                        epsilon=config.svr_epsilon,
                        gp_steps=config.gp_steps,
                    )
                    rows = []
                    for s, scores in zip(test, test_scores):
                        value = raw_scale(np.array([predict_sequence(agg, scores)]))[0]
                        rows.append(PredictionRow(
                            sequence_id=s.sequence_id, fold_id=fold.fold_id,
                            true_raw=s.label.raw,
                            predicted=float(value), decision=None,
                        ))
                    out[method] = (rows, None)

        for method in mil_methods:
            strategy = method.removeprefix("mil-")
            sampler = SamplerConfig(
                k=config.sampler_k, strategy=strategy,
                seed=derive_seed(fold_seed, 3) & 0x7FFFFFFF,
            )
            train_bags = make_bags(train, sampler)
            classes = {b.label for b in train_bags}
            if len(classes) < 2:
                out[method] = ([], "single-class training bags")
                continue
            model = train_misvm(
                train_bags,
                params=_solver_params(config, derive_seed(fold_seed, 4)),
                kernel=_kernel(config),
            )
            test_bags = make_bags(test, sampler)
            decisions = predict_bags(model, test_bags)
            rows = [
                PredictionRow(
                    sequence_id=b.bag_id, fold_id=fold.fold_id,
                    true_raw=s.label.raw,
                    predicted=float(d >= 0), decision=float(d),
                )
                for b, s, d in zip(test_bags, test, decisions)
            ]
            out[method] = (rows, None)
    except (FoldError, ValueError, ArithmeticError) as exc:
        raise FoldError(f"kind {kind}, fold {fold.fold_id}: {exc}") from exc
    return out


def _fold_job(args):
    samples, fold, kind, methods, config, fold_seed = args
    return kind, fold.fold_id, _evaluate_fold(
        samples, fold, kind, methods, config, fold_seed
    )


def build_split_plan(
    samples: Sequence[SequenceSample], config: ExperimentConfig
) -> SplitPlan:
    if config.scheme == "loso":
        return loso_folds(samples)
    return random_patient_splits(
        samples, config.ratio, config.repetitions, config.seed
    )


def run_experiment(
    samples_by_kind: dict[str, Sequence[SequenceSample]],
    config: ExperimentConfig,
) -> EvalReport:
    """Cross feature kinds with methods under one split plan per kind.

    ``samples_by_kind`` maps feature-kind keys to their sequence samples
    (patients should coincide across kinds but folds are computed per kind
    so partial modalities still evaluate).
    """
    for kind in config.kinds:
        if kind not in samples_by_kind:
            raise ValueError(f"no samples provided for feature kind {kind!r}")

    jobs = []
    plans: dict[str, SplitPlan] = {}
    for k_index, kind in enumerate(config.kinds):
        samples = list(samples_by_kind[kind])
        plan = build_split_plan(samples, config)
        plans[kind] = plan
        kind_seed = derive_seed(config.seed, k_index)
        for f_index, fold in enumerate(plan.folds):
            jobs.append((
                samples, fold, kind, tuple(config.methods), config,
                derive_seed(kind_seed, f_index),
            ))

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]

    by_key: dict[tuple[str, str], dict] = {
        (kind, fold_id): fold_out for kind, fold_id, fold_out in results
    }

    cells = []
    for kind in config.kinds:
        for method in config.methods:
            cell = CellResult(kind=kind, method=method, task=method_task(method))
            for fold in plans[kind].folds:
                rows, failure = by_key[(kind, fold.fold_id)][method]
                if failure is not None:
                    cell.failures.append(FoldFailure(fold.fold_id, failure))
                    continue
                cell.rows.extend(rows)
                if cell.task == "regression":
                    value = mae(
                        [r.predicted for r in rows], [r.true_raw for r in rows]
                    )
                else:
                    labels = [r.true_raw > 4 for r in rows]
                    if len(set(labels)) < 2:
                        cell.failures.append(FoldFailure(
                            fold.fold_id, "single-class test fold; pooled only"
                        ))
                        continue
                    value = roc_auc([r.decision for r in rows], labels).auc
                cell.fold_ids.append(fold.fold_id)
                cell.fold_values.append(value)
            _finish_cell(cell)
            if not config.allow_partial and not cell.fold_values:
                raise FoldError(
                    f"kind {kind}, method {method}: every fold failed "
                    f"({cell.failures[0].reason if cell.failures else 'no folds'})"
                )
            cells.append(cell)
    any_plan = plans[config.kinds[0]]
    return EvalReport(
        config=config,
        scheme=config.scheme,
        n_folds=len(any_plan.folds),
        cells=cells,
    )


def _finish_cell(cell: CellResult) -> None:
    if cell.task == "regression":
        if cell.rows:
            cell.pooled = mae(
                [r.predicted for r in cell.rows], [r.true_raw for r in cell.rows]
            )
            cell.aggregate = cell.pooled
    else:
        if cell.fold_values:
            cell.aggregate = float(np.mean(cell.fold_values))
        labels = [r.true_raw > 4 for r in cell.rows]
        if len(set(labels)) == 2:
            cell.pooled = roc_auc([r.decision for r in cell.rows], labels).auc
