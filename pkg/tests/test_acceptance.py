"""Release gate: one numbered end-to-end check per guarantee the library makes.

Run with ``pytest -v tests/test_acceptance.py`` to get one pass/fail line per
check. Every test here exercises public entry points only; the heavy
multiple-instance benchmark (checks 8 and 9) runs once in a shared fixture.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from painface.aggregate import (
    predict_sequence,
    stats_matrix,
    train_aggregator,
)
from painface.codec import (
    FaceChunk,
    FaceFrame,
    FormatError,
    decode_packed_array,
    encode_face_chunk,
    parse_face_chunk,
)
from painface.cli import main as cli_main
from painface.dataset import FeatureKind, SequenceSample, make_label, normalize_2d
from painface.evaluate import (
    derive_seed,
    loso_folds,
    random_patient_splits,
    roc_auc,
    split_samples,
)
from painface.gp import (
    GpHyper,
    ard_kernel_matrix,
    fit as gp_fit,
    log_marginal_likelihood,
    predict_means,
)
from painface.mil import (
    SamplerConfig,
    make_bags,
    predict_bags,
    sample_cluster,
    sample_random,
    sample_uniform,
    train_misvm,
)
from painface.mlp import MlpConfig, gradient_check, init_model, predict_frames, train_first_level
from painface.svm import (
    KernelSpec,
    SolverParams,
    decision_values,
    kernel_matrix,
    train_svc,
)
from painface.synth import SynthConfig, generate_dataset, witness_recovery_rate

from fixtures import chunk_doc, dump, make_vertices, vertices_buffer
from oracles import (
    central_difference_gradient,
    check_svc_kkt,
    grid_max_dual,
    max_relative_error,
    pairwise_auc,
    svc_dual_objective,
    svc_model_dual_objective,
)
from test_mlp import nudge_away_from_kinks
from test_svm import separable_blobs

N_VERTICES = 1220


def _sequence(frames, patient=1, seq="p1_c1_r1", raw=8):
    return SequenceSample(
        patient_id=patient,
        sequence_id=seq,
        kind=FeatureKind.BLEND_SHAPES,
        frames=np.asarray(frames, dtype=np.float64),
        label=make_label(raw),
    )


def _random_chunk(rng, index):
    n_loc = int(rng.integers(1, 60))
    n_frames = int(rng.integers(1, 4))
    n_tris = int(rng.integers(0, 8))
    times = np.cumsum(rng.uniform(0.01, 0.2, n_frames)) + float(rng.uniform(0, 100))
    frames = tuple(
        FaceFrame(
            timestamp=float(t),
            transform=rng.normal(size=(4, 4)),
            camera_transform=rng.normal(size=(4, 4)),
            left_eye_transform=rng.normal(size=(4, 4)),
            right_eye_transform=rng.normal(size=(4, 4)),
            look_at_point=rng.normal(size=3),
            blend_shapes=rng.uniform(-2, 2, n_loc).astype(np.float32),
            vertices=rng.normal(size=(N_VERTICES, 3)).astype(np.float32),
            texture_coordinates=rng.random((N_VERTICES, 2)).astype(np.float32),
            triangle_indices=rng.integers(0, N_VERTICES, (n_tris, 3)).astype(np.int16),
        )
        for t in times
    )
    return FaceChunk(
        patient=int(rng.integers(1, 60)),
        collection=int(rng.integers(1, 10)),
        rating=int(rng.integers(0, 11)),
        start=f"2024-03-0{1 + index % 9}T12:00:00.{index % 1000:03d}Z",
        blend_shape_locations=tuple(f"shape{i}" for i in range(n_loc)),
        data=frames,
    )


def test_a01_chunk_codec_round_trip_is_bit_identical():
    """1: encode -> parse -> encode over 100 randomized chunks, in bounded time."""
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    for index in range(100):
        chunk = _random_chunk(rng, index)
        text = encode_face_chunk(chunk)
        parsed = parse_face_chunk(text)
        assert parsed == chunk
        assert encode_face_chunk(parsed) == text
    assert time.perf_counter() - t0 < 10.0


def test_a02_vertex_padding_discarded_and_length_faults_rejected():
    """2: the 4-stride vertex layout loses its padding, and truncated,
    miscounted, or unparsable buffers all raise FormatError."""
    verts = make_vertices(seed=9)
    buffer = vertices_buffer(verts, padding=123.25)
    decoded = decode_packed_array(buffer, "float32", 3, 4, name="vertices")
    assert decoded.shape == (N_VERTICES, 3)
    np.testing.assert_array_equal(decoded, verts)

    # whole-document path: padding invisible after parsing
    chunk = parse_face_chunk(dump(chunk_doc()))
    assert all(f.vertices.shape == (N_VERTICES, 3) for f in chunk.data)

    def corrupted(buffer_value):
        doc = chunk_doc()
        doc["data"][0]["vertices"] = buffer_value
        return dump(doc)

    wrong_count = vertices_buffer(verts[:-1], padding=0.0)
    with pytest.raises(FormatError):
        parse_face_chunk(corrupted(wrong_count))
    one_extra = vertices_buffer(np.vstack([verts, verts[:1]]), padding=0.0)
    with pytest.raises(FormatError):
        parse_face_chunk(corrupted(one_extra))

    import base64
    raw = base64.b64decode(buffer)
    truncated = base64.b64encode(raw[:-3]).decode("ascii")
    with pytest.raises(FormatError):
        parse_face_chunk(corrupted(truncated))
    with pytest.raises(FormatError):
        parse_face_chunk(corrupted("!!!not-base64!!!"))


def test_a03_keypoint_normalization_invariances_and_label_rule():
    """3: bounding-box normalization is idempotent and invariant to
    translation and positive scaling to 1e-6 over 1000 frames; scores above
    4 are the significant class."""
    rng = np.random.default_rng(303)
    worst_idem = worst_moved = 0.0
    for _ in range(1000):
        pts = np.empty((70, 3))
        pts[:, 0] = rng.uniform(-50, 50) + rng.uniform(0.5, 300) * rng.random(70)
        pts[:, 1] = rng.uniform(-50, 50) + rng.uniform(0.5, 300) * rng.random(70)
        pts[:, 2] = rng.uniform(0.05, 1.0, 70)
        base = normalize_2d(pts).values
        again = normalize_2d(base.reshape(70, 3)).values
        worst_idem = max(worst_idem, float(np.max(np.abs(again - base))))

        moved = pts.copy()
        moved[:, :2] = moved[:, :2] * rng.uniform(0.1, 10.0) + rng.uniform(-100, 100, 2)
        shifted = normalize_2d(moved).values
        worst_moved = max(worst_moved, float(np.max(np.abs(shifted - base))))
    assert worst_idem <= 1e-6
    assert worst_moved <= 1e-6

    for raw in range(11):
        assert make_label(raw).significant == (raw > 4)


def test_a04_mlp_analytic_gradients_match_finite_differences():
    """4: backprop agrees with central differences to 1e-4 relative error on
    20 random architectures, in bounded time."""
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        config = MlpConfig(
            input_dim=int(rng.integers(2, 9)),
            hidden=tuple(int(rng.integers(2, 10)) for _ in range(3)),
            dropout_rate=0.0,
            learning_rate=0.01,
            epochs=1,
            batch_size=4,
            frames_per_sequence_per_epoch=1,
            seed=int(rng.integers(0, 2**31)),
        )
        model = init_model(config)
        x = rng.normal(size=config.input_dim)
        nudge_away_from_kinks(model, x)
        worst = max(worst, gradient_check(model, x, float(rng.normal())))
    assert worst < 1e-4
    assert time.perf_counter() - t0 < 30.0


def test_a05_svm_dual_matches_brute_force_and_kkt_holds():
    """5: the solver's dual value matches grid search on every problem small
    enough to brute-force, satisfies the KKT conditions on 50 separable
    sets, and never decreases its objective."""
    rng = np.random.default_rng(505)
    for trial in range(20):
        m = int(rng.integers(2, 6))
        X = rng.normal(size=(m, 2))
        y = np.where(rng.random(m) < 0.5, -1.0, 1.0)
        y[0], y[1] = -1.0, 1.0
        C = float(rng.choice([0.5, 1.0, 4.0]))
        kernel = KernelSpec.rbf(1.0) if trial % 2 else KernelSpec.linear()
        model = train_svc(X, y, SolverParams(C=C, tolerance=1e-5), kernel)
        K = kernel_matrix(model.kernel, X, X)
        w_oracle = grid_max_dual(svc_dual_objective(K, y), y, C)
        w_model = svc_model_dual_objective(model, kernel_matrix)
        assert w_model == pytest.approx(w_oracle, abs=1e-2)

    tol = 1e-3
    for trial in range(50):
        X, y = separable_blobs(rng, n_per=int(rng.integers(4, 11)))
        model = train_svc(X, y, SolverParams(C=1.0, tolerance=tol), KernelSpec.rbf(0.5))
        assert model.converged
        alpha = np.zeros(y.size)
        for sv, coef in zip(model.support_vectors, model.dual_coef):
            idx = np.flatnonzero(np.all(X == sv, axis=1))[0]
            alpha[idx] = abs(coef)
        problems = check_svc_kkt(
            decision_values(model, X), y, alpha, 1.0, slack=tol + 1e-6
        )
        assert not problems, problems
        history = np.asarray(model.objective_history)
        assert history.size >= 1
        assert np.all(np.diff(history) >= -1e-9)


def test_a06_gp_interpolates_and_likelihood_gradients_check_out():
    """6: a noise-free fit interpolates its training targets to 1e-6, the
    marginal-likelihood gradient matches finite differences to 1e-5, and a
    three-point fit matches a hand-rolled dense solve to 1e-8."""
    rng = np.random.default_rng(606)
    for _ in range(5):
        m, d = int(rng.integers(4, 9)), int(rng.integers(1, 4))
        X = rng.normal(size=(m, d))
        y = rng.normal(size=m)
        model = gp_fit(X, y, init=GpHyper(np.ones(d), 1.0, 0.0), optimize=False)
        assert float(np.max(np.abs(predict_means(model, X) - y))) <= 1e-6

    for _ in range(5):
        d = 2
        X = rng.normal(size=(6, d))
        y = rng.normal(size=6)
        theta = rng.uniform(-0.5, 0.5, d + 2)

        def lml_at(t):
            hyper = GpHyper(np.exp(t[:d]), float(np.exp(t[d])), float(np.exp(t[d + 1])))
            return log_marginal_likelihood(X, y, hyper)

        hyper = GpHyper(
            np.exp(theta[:d]), float(np.exp(theta[d])), float(np.exp(theta[d + 1]))
        )
        _, grad = log_marginal_likelihood(X, y, hyper, with_gradients=True)
        numeric = central_difference_gradient(lml_at, theta)
        assert max_relative_error(grad, numeric) < 1e-5

    X = rng.normal(size=(3, 2))
    y = rng.normal(size=3)
    hyper = GpHyper(rng.uniform(0.5, 2.0, 2), 1.3, 0.4)
    model = gp_fit(X, y, init=hyper, optimize=False)
    K = ard_kernel_matrix(hyper, X, X) + hyper.noise_variance * np.eye(3)
    alpha = np.linalg.solve(K, y - y.mean())
    queries = rng.normal(size=(5, 2))
    expected = ard_kernel_matrix(hyper, queries, X) @ alpha + y.mean()
    np.testing.assert_allclose(predict_means(model, queries), expected, atol=1e-8)


def test_a07_roc_auc_equals_pairwise_concordance():
    """7: the trapezoid AUC equals the positive/negative pair concordance
    (ties worth half) to 1e-12 on 1000 random score sets, and is invariant
    under strictly increasing transforms."""
    rng = np.random.default_rng(707)
    worst = 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 31))
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = rng.normal(size=n)
        if trial % 3 == 0:
            scores = np.round(scores, 1)  # provoke ties
        worst = max(worst, abs(roc_auc(scores, labels).auc - pairwise_auc(scores, labels)))
    assert worst <= 1e-12

    for _ in range(50):
        n = int(rng.integers(4, 25))
        labels = rng.random(n) < 0.5
        labels[0], labels[1] = True, False
        scores = rng.normal(size=n)
        base = roc_auc(scores, labels).auc
        for transform in (np.exp, lambda s: 3.0 * s + 11.0, lambda s: s**3):
            assert abs(roc_auc(transform(scores), labels).auc - base) <= 1e-12


@pytest.fixture(scope="module")
def planted_benchmark():
    """Ten seeded runs on synthetic data with planted witness frames.

    Each run holds out a quarter of the patients, trains the
    multiple-instance classifier on cluster-sampled bags, and trains the
    weakly-labeled frame-score pipeline on the same split for comparison.
    """
    mil_aucs, recoveries, weak_aucs = [], [], []
    mil_seconds = 0.0
    for seed in range(10):
        config = SynthConfig(
            patients=12,
            sequences_per_patient=10,
            frames_per_sequence=300,
            witness_fraction=0.05,
            noise_scale=0.30,
            kinds=("blendshapes",),
            seed=seed,
        )
        t0 = time.perf_counter()
        samples_by_kind, truth = generate_dataset(config)
        samples = samples_by_kind["blendshapes"]
        plan = random_patient_splits(samples, ratio=0.75, repetitions=1, seed=seed)
        train, test = split_samples(samples, plan.folds[0])

        sampler = SamplerConfig(
            k=30, strategy="cluster", seed=derive_seed(seed, 3) & 0x7FFFFFFF
        )
        train_bags = make_bags(train, sampler)
        test_bags = make_bags(test, sampler)
        mil = train_misvm(
            train_bags,
            SolverParams(C=10.0, seed=derive_seed(seed, 4) & 0x7FFFFFFF),
            KernelSpec.rbf(),
        )
        scores = predict_bags(mil, test_bags)
        mil_aucs.append(roc_auc(scores, [b.label for b in test_bags]).auc)
        recoveries.append(witness_recovery_rate(mil, train_bags, truth))
        mil_seconds += time.perf_counter() - t0

        mlp_config = MlpConfig(input_dim=52, seed=derive_seed(seed, 1) & 0x7FFFFFFF)
        frame_model, _ = train_first_level(train, mlp_config)
        stats = stats_matrix([predict_frames(frame_model, s) for s in train])
        aggregator = train_aggregator(
            "svc",
            stats,
            [s.label.significant for s in train],
            svm_params=SolverParams(C=10.0, seed=derive_seed(seed, 2) & 0x7FFFFFFF),
        )
        decisions = [
            predict_sequence(aggregator, predict_frames(frame_model, s)) for s in test
        ]
        weak_aucs.append(roc_auc(decisions, [s.label.significant for s in test]).auc)
    return {
        "mil": np.array(mil_aucs),
        "recovery": np.array(recoveries),
        "weak": np.array(weak_aucs),
        "mil_seconds": mil_seconds,
    }


def test_a08_mil_recovers_planted_witnesses_on_held_out_patients(planted_benchmark):
    """8: on 12x10x300 synthetic data with 5% witness frames, held-out bag
    AUC averages at least 0.9 over 10 seeds, at least 80% of positive bags
    resolve to a planted witness, and the whole benchmark stays under 10
    minutes."""
    assert float(planted_benchmark["mil"].mean()) >= 0.9
    assert float(planted_benchmark["recovery"].mean()) >= 0.8
    assert planted_benchmark["mil_seconds"] < 600.0


def test_a09_mil_outperforms_weak_label_classifier(planted_benchmark):
    """9: on the same splits, the multiple-instance classifier beats the
    weakly-labeled frame-score pipeline by at least 0.05 mean AUC."""
    gap = float(planted_benchmark["mil"].mean() - planted_benchmark["weak"].mean())
    assert gap >= 0.05


def test_a10_samplers_honor_spacing_and_segment_contracts():
    """10: uniform sampling lands on floor(i*n/k) exactly, cluster sampling
    recovers a planted two-segment boundary, and every strategy returns
    min(k, n) strictly increasing in-range indices."""
    rng = np.random.default_rng(1010)
    for _ in range(100):
        n = int(rng.integers(1, 400))
        k = int(rng.integers(1, 50))
        sample = _sequence(rng.normal(size=(n, 3)))
        idx = sample_uniform(sample, k)
        expected = np.unique([(i * n) // k for i in range(k) if (i * n) // k < n])
        np.testing.assert_array_equal(idx, expected)

    d = 4
    for _ in range(100):
        n = int(rng.integers(8, 61))
        boundary = int(rng.integers(2, n - 1))
        center = rng.normal(size=d)
        offset = rng.normal(size=d)
        offset *= 10.0 / np.linalg.norm(offset)
        frames = np.vstack([
            center + 0.01 * rng.normal(size=(boundary, d)),
            center + offset + 0.01 * rng.normal(size=(n - boundary, d)),
        ])
        idx = sample_cluster(_sequence(frames), 2)
        np.testing.assert_array_equal(
            idx, [(boundary - 1) // 2, (boundary + n - 1) // 2]
        )

    for n in (1, 5, 17):
        sample = _sequence(rng.normal(size=(n, 3)))
        for k in (1, 2, n, n + 7, 3 * n + 1):
            picks = (
                sample_uniform(sample, k),
                sample_random(sample, k, seed=7),
                sample_cluster(sample, k),
            )
            for idx in picks:
                assert idx.shape == (min(k, n),)
                assert np.all(np.diff(idx) > 0)
                assert idx[0] >= 0 and idx[-1] < n


def test_a11_splits_never_leak_patients():
    """11: leave-one-subject-out and 100 random splits keep every fold's
    train and test patients disjoint, and leave-one-subject-out tests each
    patient exactly once."""
    rng = np.random.default_rng(1111)
    samples = [
        _sequence(rng.normal(size=(4, 3)), patient=p, seq=f"p{p}_c{c}_r0", raw=6)
        for p in range(1, 13)
        for c in range(3)
    ]
    all_patients = frozenset(range(1, 13))

    plan = loso_folds(samples)
    assert len(plan.folds) == 12
    tested = []
    for fold in plan.folds:
        assert not fold.train_patients & fold.test_patients
        assert fold.train_patients | fold.test_patients == all_patients
        tested.extend(fold.test_patients)
    assert sorted(tested) == sorted(all_patients)

    plan = random_patient_splits(samples, ratio=0.7, repetitions=100, seed=11)
    assert len(plan.folds) == 100
    for fold in plan.folds:
        assert not fold.train_patients & fold.test_patients
        assert fold.train_patients | fold.test_patients == all_patients
        train, test = split_samples(samples, fold)
        assert {s.patient_id for s in train}.isdisjoint(s.patient_id for s in test)
        assert len(train) + len(test) == len(samples)


def test_a12_pipeline_reports_are_reproducible(tmp_path):
    """12: running the bundled smoke config twice produces byte-identical
    reports, figures, and predictions; only the generation timestamp in the
    JSON document may differ."""
    config = Path(__file__).resolve().parents[1] / "configs" / "synth-smoke.json"
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert cli_main(["run", str(config), "--out", str(first)]) == 0
    assert cli_main(["run", str(config), "--out", str(second)]) == 0

    for name in ("report.txt", "predictions.csv", "mae.png", "auc.png", "roc.png"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name

    doc_first = json.loads((first / "report.json").read_text())
    doc_second = json.loads((second / "report.json").read_text())
    assert isinstance(doc_first.pop("generated_at"), str)
    assert isinstance(doc_second.pop("generated_at"), str)
    assert doc_first == doc_second
