"""Splits, metrics, and the experiment grid.

AUC is checked against the brute-force pairwise concordance oracle; MAE
against hand-computed values. Experiment runs use a tiny synthetic corpus
built directly in memory (no disk round trip).
"""
import dataclasses

import numpy as np
import pytest

from painface.dataset import FeatureKind, SequenceSample, make_label
from painface.evaluate import (
    ALL_METHODS,
    ExperimentConfig,
    Fold,
    FoldError,
    derive_seed,
    loso_folds,
    mae,
    method_task,
    random_patient_splits,
    raw_scale,
    roc_auc,
    run_experiment,
    split_samples,
)

from oracles import pairwise_auc

BLEND = FeatureKind.from_key("blendshapes")


def make_sample(patient, seq, raw, frames):
    return SequenceSample(
        patient_id=patient,
        sequence_id=f"p{patient}-s{seq}",
        kind=BLEND,
        frames=np.asarray(frames, dtype=np.float64),
        label=make_label(raw),
    )


def flat_sample(patient, seq, raw, n_frames=4, value=0.5):
    return make_sample(patient, seq, raw, np.full((n_frames, BLEND.dim), value))


# ---------------------------------------------------------------------------
# MAE
# ---------------------------------------------------------------------------

class TestMae:
    def test_hand_case(self):
        # |5-3| = 2 and |5-9| = 4 average to 3
        assert mae([5.0, 5.0], [3.0, 9.0]) == 3.0

    def test_zero_for_exact(self):
        assert mae([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    def test_translation_equivariant(self):
        rng = np.random.default_rng(7)
        p, t = rng.normal(size=20), rng.normal(size=20)
        assert mae(p + 13.5, t + 13.5) == pytest.approx(mae(p, t), abs=1e-12)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            mae([], [])

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError):
            mae([1.0], [1.0, 2.0])

    def test_raw_scale_clamps_then_scales(self):
        out = raw_scale(np.array([-0.2, 0.0, 0.5, 1.0, 1.7]))
        assert np.array_equal(out, [0.0, 0.0, 5.0, 10.0, 10.0])


# ---------------------------------------------------------------------------
# ROC / AUC
# ---------------------------------------------------------------------------

class TestRocAuc:
    def test_perfect_separation(self):
        curve = roc_auc([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
        assert curve.auc == 1.0

    def test_perfectly_reversed(self):
        curve = roc_auc([0.1, 0.2, 0.8, 0.9], [True, True, False, False])
        assert curve.auc == 0.0

    def test_constant_decisions_give_half(self):
        curve = roc_auc([0.3, 0.3, 0.3, 0.3], [True, False, True, False])
        assert curve.auc == pytest.approx(0.5, abs=1e-12)

    def test_tie_hand_case(self):
        # pairs: (2,1)+, (2,0)+, (1,1) tie, (1,0)+ -> 3.5/4
        curve = roc_auc([2.0, 1.0, 1.0, 0.0], [True, True, False, False])
        assert curve.auc == pytest.approx(0.875, abs=1e-12)

    def test_matches_pairwise_concordance(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = 40
            # one-decimal rounding forces plenty of ties
            d = np.round(rng.normal(size=n), 1)
            y = rng.random(n) < 0.4
            if y.all() or not y.any():
                continue
            assert roc_auc(d, y).auc == pytest.approx(
                pairwise_auc(d, y), abs=1e-12
            )

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(3)
        d = rng.normal(size=30)
        y = rng.random(30) < 0.5
        base = roc_auc(d, y).auc
        for fn in (np.exp, lambda x: 2 * x + 7, lambda x: x**3):
            assert roc_auc(fn(d), y).auc == pytest.approx(base, abs=1e-12)

    def test_curve_runs_corner_to_corner(self):
        rng = np.random.default_rng(5)
        curve = roc_auc(rng.normal(size=25), rng.random(25) < 0.5)
        assert np.array_equal(curve.points[0], [0.0, 0.0])
        assert np.array_equal(curve.points[-1], [1.0, 1.0])
        assert np.all(np.diff(curve.points[:, 0]) >= 0)
        assert np.all(np.diff(curve.points[:, 1]) >= 0)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="each class"):
            roc_auc([0.1, 0.2], [True, True])

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1], [True, False])


# ---------------------------------------------------------------------------
# split plans
# ---------------------------------------------------------------------------

def patient_corpus(patient_ids, seqs_per_patient=2):
    return [
        flat_sample(p, s, raw=3)
        for p in patient_ids
        for s in range(seqs_per_patient)
    ]


class TestLoso:
    def test_one_fold_per_patient(self):
        samples = patient_corpus([4, 1, 9])
        plan = loso_folds(samples)
        assert plan.scheme == "loso"
        assert [sorted(f.test_patients) for f in plan.folds] == [[1], [4], [9]]
        for fold in plan.folds:
            assert fold.train_patients == {1, 4, 9} - fold.test_patients

    def test_every_sequence_tested_exactly_once(self):
        samples = patient_corpus([2, 5, 7, 8], seqs_per_patient=3)
        plan = loso_folds(samples)
        seen = []
        for fold in plan.folds:
            _, test = split_samples(samples, fold)
            seen.extend(s.sequence_id for s in test)
        assert sorted(seen) == sorted(s.sequence_id for s in samples)

    def test_needs_two_patients(self):
        with pytest.raises(ValueError, match="at least 2"):
            loso_folds(patient_corpus([3]))


class TestRandomSplits:
    def test_counts_and_disjointness(self):
        samples = patient_corpus(range(10))
        plan = random_patient_splits(samples, ratio=0.8, repetitions=5, seed=0)
        assert plan.scheme == "random"
        assert len(plan.folds) == 5
        for fold in plan.folds:
            assert len(fold.train_patients) == 8
            assert len(fold.test_patients) == 2
            assert fold.train_patients | fold.test_patients == set(range(10))
            assert not fold.train_patients & fold.test_patients

    def test_train_size_is_ceiling(self):
        samples = patient_corpus(range(7))
        plan = random_patient_splits(samples, ratio=0.5, repetitions=1, seed=1)
        assert len(plan.folds[0].train_patients) == 4  # ceil(3.5)

    def test_same_seed_same_plan(self):
        samples = patient_corpus(range(9))
        a = random_patient_splits(samples, 0.7, 4, seed=42)
        b = random_patient_splits(samples, 0.7, 4, seed=42)
        assert a == b

    def test_different_seeds_differ(self):
        samples = patient_corpus(range(20))
        a = random_patient_splits(samples, 0.5, 3, seed=1)
        b = random_patient_splits(samples, 0.5, 3, seed=2)
        assert any(
            fa.train_patients != fb.train_patients
            for fa, fb in zip(a.folds, b.folds)
        )

    def test_repetitions_draw_different_shuffles(self):
        samples = patient_corpus(range(20))
        plan = random_patient_splits(samples, 0.5, 6, seed=0)
        trains = {f.train_patients for f in plan.folds}
        assert len(trains) > 1

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.5, 2.0])
    def test_ratio_must_be_interior(self, ratio):
        with pytest.raises(ValueError):
            random_patient_splits(patient_corpus(range(5)), ratio, 2, 0)

    def test_ratio_leaving_empty_test_rejected(self):
        with pytest.raises(ValueError, match="empty side"):
            random_patient_splits(patient_corpus(range(3)), 0.99, 2, 0)

    def test_repetitions_must_be_positive(self):
        with pytest.raises(ValueError):
            random_patient_splits(patient_corpus(range(5)), 0.5, 0, 0)


class TestFoldPieces:
    def test_fold_rejects_overlap(self):
        with pytest.raises(ValueError, match="overlap"):
            Fold("bad", frozenset([1, 2]), frozenset([2, 3]))

    def test_split_samples_partitions(self):
        samples = patient_corpus([1, 2, 3])
        fold = Fold("f", frozenset([1, 3]), frozenset([2]))
        train, test = split_samples(samples, fold)
        assert {s.patient_id for s in train} == {1, 3}
        assert {s.patient_id for s in test} == {2}
        assert len(train) + len(test) == len(samples)

    def test_derive_seed_deterministic_and_spread(self):
        grid = {derive_seed(m, i) for m in range(4) for i in range(16)}
        assert len(grid) == 64  # no collisions on a small grid
        assert all(0 <= v < 2**64 for v in grid)
        assert derive_seed(123, 5) == derive_seed(123, 5)


# ---------------------------------------------------------------------------
# experiment grid
# ---------------------------------------------------------------------------

def separated_corpus(rng, patient_labels):
    """Per patient, one sequence per listed raw label. High-label sequences
    get a block of clearly shifted frames so every method has signal."""
    samples = []
    for patient, labels in patient_labels.items():
        for j, raw in enumerate(labels):
            frames = rng.normal(0.15, 0.03, size=(10, BLEND.dim))
            if raw > 4:
                frames[4:8] += 0.6
            samples.append(make_sample(patient, j, raw, np.clip(frames, 0, 1)))
    return samples


def small_config(**overrides):
    base = dict(
        kinds=("blendshapes",),
        methods=("dfl-max", "dfl-svr", "dfl-svc", "mil-uniform"),
        scheme="loso",
        seed=5,
        mlp_epochs=8,
        mlp_hidden=(16, 8, 4),
        mlp_batch_size=16,
        mlp_frames_per_sequence=4,
        gp_steps=5,
        sampler_k=5,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(99)
    return separated_corpus(rng, {
        1: [1, 8, 3],
        2: [7, 2, 9],
        3: [0, 6, 4],
        4: [8, 1, 5],
    })


class TestRunExperiment:
    def test_report_structure(self, corpus):
        config = small_config()
        report = run_experiment({"blendshapes": corpus}, config)
        assert report.scheme == "loso"
        assert report.n_folds == 4
        assert len(report.cells) == len(config.kinds) * len(config.methods)
        for method in config.methods:
            cell = report.cell("blendshapes", method)
            assert cell.task == method_task(method)
            assert len(cell.rows) == len(corpus)
            assert np.isfinite(cell.aggregate)
            assert np.isfinite(cell.pooled)
            assert {r.fold_id for r in cell.rows} == {
                f"loso-{p}" for p in (1, 2, 3, 4)
            }

    def test_regression_cells_report_raw_scale_mae(self, corpus):
        report = run_experiment({"blendshapes": corpus}, small_config())
        cell = report.cell("blendshapes", "dfl-max")
        assert all(0.0 <= r.predicted <= 10.0 for r in cell.rows)
        truths = {r.sequence_id: r.true_raw for r in cell.rows}
        assert truths["p1-s1"] == 8
        # pooled MAE is the plain mean absolute error over all rows
        expected = mae(
            [r.predicted for r in cell.rows], [r.true_raw for r in cell.rows]
        )
        assert cell.pooled == pytest.approx(expected, abs=1e-12)
        assert cell.aggregate == cell.pooled

    def test_binary_cells_report_fold_mean_and_pooled(self, corpus):
        report = run_experiment({"blendshapes": corpus}, small_config())
        cell = report.cell("blendshapes", "dfl-svc")
        assert cell.aggregate == pytest.approx(np.mean(cell.fold_values))
        assert 0.0 <= cell.pooled <= 1.0
        assert all(r.decision is not None for r in cell.rows)
        assert all(r.predicted in (0.0, 1.0) for r in cell.rows)

    def test_deterministic_across_runs(self, corpus):
        a = run_experiment({"blendshapes": corpus}, small_config())
        b = run_experiment({"blendshapes": corpus}, small_config())
        for ca, cb in zip(a.cells, b.cells):
            assert ca.fold_values == cb.fold_values
            assert ca.rows == cb.rows

    def test_workers_do_not_change_numbers(self, corpus):
        serial = run_experiment({"blendshapes": corpus}, small_config(workers=1))
        parallel = run_experiment({"blendshapes": corpus}, small_config(workers=2))
        for cs, cp in zip(serial.cells, parallel.cells):
            assert cs.fold_values == cp.fold_values
            assert cs.rows == cp.rows

    def test_single_class_test_fold_excluded_from_fold_auc(self):
        rng = np.random.default_rng(17)
        corpus = separated_corpus(rng, {
            1: [2, 3],        # all negative: its LOSO fold has one class
            2: [8, 1],
            3: [7, 2],
            4: [1, 9],
        })
        report = run_experiment(
            {"blendshapes": corpus},
            small_config(methods=("dfl-svc",)),
        )
        cell = report.cell("blendshapes", "dfl-svc")
        assert [f.fold_id for f in cell.failures] == ["loso-1"]
        assert "single-class test" in cell.failures[0].reason
        assert len(cell.fold_values) == 3
        # its rows still feed the pooled number
        assert len(cell.rows) == 8
        assert np.isfinite(cell.pooled)

    def test_all_folds_failing_raises_unless_partial(self):
        rng = np.random.default_rng(23)
        corpus = separated_corpus(rng, {1: [1, 2], 2: [3, 0], 3: [2, 4]})
        with pytest.raises(FoldError, match="single-class"):
            run_experiment(
                {"blendshapes": corpus}, small_config(methods=("mil-uniform",))
            )
        report = run_experiment(
            {"blendshapes": corpus},
            small_config(methods=("mil-uniform",), allow_partial=True),
        )
        cell = report.cell("blendshapes", "mil-uniform")
        assert len(cell.failures) == 3
        assert cell.fold_values == []
        assert np.isnan(cell.aggregate)

    def test_random_scheme_runs(self, corpus):
        report = run_experiment(
            {"blendshapes": corpus},
            small_config(
                methods=("dfl-max",), scheme="random",
                ratio=0.75, repetitions=3,
            ),
        )
        assert report.n_folds == 3
        cell = report.cell("blendshapes", "dfl-max")
        assert len(cell.fold_ids) == 3

    def test_missing_kind_samples_rejected(self, corpus):
        with pytest.raises(ValueError, match="keypoints2d"):
            run_experiment(
                {"blendshapes": corpus}, small_config(kinds=("keypoints2d",))
            )

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown methods"):
            small_config(methods=("dfl-max", "boosting"))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            small_config(kinds=("pixels",))

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValueError, match="scheme"):
            small_config(scheme="kfold")

    def test_config_is_frozen(self):
        config = small_config()
        with pytest.raises(dataclasses.FrozenInstanceError):
            config.seed = 9
