"""Synthetic dataset generator with planted pain-witness frames.

Produces recordings in the same on-disk layout the codec reads — video-info
JSON, ten-second face chunks with packed Base64 buffers, per-frame pose
JSON, clip markers, and a label CSV — plus a ground-truth manifest for test
harnesses. Even-indexed sequences are positive (raw score 5–10) and carry a
contiguous block of frames drawn around the pain center; everything else is
drawn around the neutral center. A fast in-memory path skips the files but
reproduces the exact same feature tensors, float32 rounding included.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import serialize
from .codec import (
    ClipMarkers,
    FaceChunk,
    FaceFrame,
    PoseFrame,
    PosePerson,
    VideoInfo,
    encode_clip_markers,
    encode_face_chunk,
    encode_pose_frame,
    encode_video_info,
    recording_basename,
)
from .dataset import (
    FeatureKind,
    N_BLEND_SHAPES,
    N_FACE_KEYPOINTS,
    N_MESH_VERTICES,
    SequenceSample,
    make_label,
    normalize_2d,
    write_label_table,
)
from .mil import Bag, MilModel

FPS = 30.0
CHUNK_FRAMES = 300  # ten seconds at 30 fps
CLIP_PAD = 6  # neutral lead-in/lead-out frames trimmed by the clip markers
POSE_OFFSET = np.array([100.0, 50.0])
POSE_SCALE = 200.0
POSE_CONFIDENCE = 0.9

# The 52 face-tracking coefficient names, canonical capture order.
BLEND_LOCATIONS = (
    "browDownLeft", "browDownRight", "browInnerUp",
    "browOuterUpLeft", "browOuterUpRight",
    "cheekPuff", "cheekSquintLeft", "cheekSquintRight",
    "eyeBlinkLeft", "eyeBlinkRight",
    "eyeLookDownLeft", "eyeLookDownRight", "eyeLookInLeft", "eyeLookInRight",
    "eyeLookOutLeft", "eyeLookOutRight", "eyeLookUpLeft", "eyeLookUpRight",
    "eyeSquintLeft", "eyeSquintRight", "eyeWideLeft", "eyeWideRight",
    "jawForward", "jawLeft", "jawOpen", "jawRight",
    "mouthClose", "mouthDimpleLeft", "mouthDimpleRight",
    "mouthFrownLeft", "mouthFrownRight", "mouthFunnel", "mouthLeft",
    "mouthLowerDownLeft", "mouthLowerDownRight",
    "mouthPressLeft", "mouthPressRight", "mouthPucker", "mouthRight",
    "mouthRollLower", "mouthRollUpper", "mouthShrugLower", "mouthShrugUpper",
    "mouthSmileLeft", "mouthSmileRight",
    "mouthStretchLeft", "mouthStretchRight",
    "mouthUpperUpLeft", "mouthUpperUpRight",
    "noseSneerLeft", "noseSneerRight",
    "tongueOut",
)
assert len(BLEND_LOCATIONS) == N_BLEND_SHAPES

# Coefficients that rise under pain: brow lowering, orbital tightening,
# nose wrinkling, eye closure.
_PAIN_BLENDS = (
    "browDownLeft", "browDownRight", "cheekSquintLeft", "cheekSquintRight",
    "eyeSquintLeft", "eyeSquintRight", "eyeBlinkLeft", "eyeBlinkRight",
    "noseSneerLeft", "noseSneerRight",
)


def _grid(n: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(n)
    return idx % cols, idx // cols


def default_centers() -> dict[str, "CenterPair"]:
    """Neutral/pain center pairs for all three feature spaces.

    Blend shapes: pain raises the pain-related coefficients. Mesh: pain
    drops the jaw-region vertices. 2D keypoints (in box-normalized units):
    pain pulls the brow band downward.
    """
    neutral_blend = np.full(N_BLEND_SHAPES, 0.06)
    pain_blend = neutral_blend.copy()
    for name in _PAIN_BLENDS:
        pain_blend[BLEND_LOCATIONS.index(name)] = 0.75

    gx, gy = _grid(N_MESH_VERTICES, 61)  # 61 x 20 grid
    neutral_mesh = np.column_stack([
        gx / 60.0 * 0.16 - 0.08,
        gy / 19.0 * 0.22 - 0.11,
        0.02 * np.cos(gx / 60.0 * np.pi),
    ])
    pain_mesh = neutral_mesh.copy()
    pain_mesh[720:840, 2] += 0.05  # jaw band pushes forward
    pain_mesh[720:840, 1] -= 0.03

    kx, ky = _grid(N_FACE_KEYPOINTS, 10)  # 10 x 7 grid in unit box
    neutral_u = np.column_stack([kx / 9.0, ky / 6.0])
    pain_u = neutral_u.copy()
    pain_u[10:30, 1] += 0.08  # brow/eye band shifts
    pain_u = np.clip(pain_u, 0.0, 1.0)

    return {
        "blendshapes": CenterPair(neutral_blend, pain_blend),
        "keypoints3d": CenterPair(neutral_mesh, pain_mesh),
        "keypoints2d": CenterPair(neutral_u, pain_u),
    }


@dataclass(frozen=True)
class CenterPair:
    neutral: np.ndarray
    pain: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.neutral, dtype=np.float64)
        p = np.asarray(self.pain, dtype=np.float64)
        if n.shape != p.shape:
            raise ValueError("neutral and pain centers must have equal shapes")
        object.__setattr__(self, "neutral", n)
        object.__setattr__(self, "pain", p)


@dataclass(frozen=True)
class SynthConfig:
    patients: int = 12
    sequences_per_patient: int = 10
    frames_per_sequence: int = 300
    kinds: tuple[str, ...] = ("keypoints2d", "keypoints3d", "blendshapes")
    witness_fraction: float = 0.05
    noise_scale: float = 0.02
    seed: int = 0
    # optional per-space overrides, keyed like `kinds`
    neutral_center: Mapping[str, np.ndarray] | None = None
    pain_center: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.patients < 1 or self.sequences_per_patient < 1:
            raise ValueError("patients and sequences_per_patient must be positive")
        if self.frames_per_sequence < 1:
            raise ValueError("frames_per_sequence must be positive")
        if not 0 < self.witness_fraction <= 1:
            raise ValueError("witness_fraction must be in (0, 1]")
        if self.witness_fraction * self.frames_per_sequence < 1:
            raise ValueError(
                "witness_fraction * frames_per_sequence must be at least 1"
            )
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        for kind in self.kinds:
            FeatureKind.from_key(kind)

    @property
    def witness_count(self) -> int:
        return math.ceil(self.witness_fraction * self.frames_per_sequence)


def resolve_centers(config: SynthConfig) -> dict[str, CenterPair]:
    centers = default_centers()
    for mapping, attr in ((config.neutral_center, "neutral"),
                          (config.pain_center, "pain")):
        if mapping is None:
            continue
        for key, value in mapping.items():
            if key not in centers:
                raise ValueError(f"unknown feature space {key!r} in center override")
            base = centers[key]
            value = np.asarray(value, dtype=np.float64).reshape(
                base.neutral.shape
            )
            centers[key] = CenterPair(
                neutral=value if attr == "neutral" else base.neutral,
                pain=value if attr == "pain" else base.pain,
            )
    return centers


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SequenceTruth:
    sequence_id: str
    patient: int
    collection: int
    rating: int
    raw: int
    witnesses: tuple[int, ...]  # frame indices into the clipped sequence

    def __post_init__(self):
        make_label(self.raw)
        if self.raw <= 4 and self.witnesses:
            raise ValueError("negative sequences must have no witness frames")
        if self.raw > 4 and not self.witnesses:
            raise ValueError("positive sequences must have witness frames")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.patient, self.collection, self.rating)


@dataclass(frozen=True)
class GroundTruth:
    sequences: tuple[SequenceTruth, ...]

    def by_id(self) -> dict[str, SequenceTruth]:
        return {t.sequence_id: t for t in self.sequences}

    def label_table(self) -> dict[tuple[int, int, int], int]:
        return {t.key: t.raw for t in self.sequences}


def truth_to_dict(truth: GroundTruth) -> dict:
    return serialize.wrap("groundtruth", {
        "sequences": [
            {
                "sequence_id": t.sequence_id,
                "patient": t.patient,
                "collection": t.collection,
                "rating": t.rating,
                "raw": t.raw,
                "witnesses": list(t.witnesses),
            }
            for t in truth.sequences
        ],
    })


def truth_from_dict(doc: dict) -> GroundTruth:
    payload = serialize.unwrap(doc, "groundtruth")
    return GroundTruth(sequences=tuple(
        SequenceTruth(
            sequence_id=str(t["sequence_id"]),
            patient=int(t["patient"]),
            collection=int(t["collection"]),
            rating=int(t["rating"]),
            raw=int(t["raw"]),
            witnesses=tuple(int(i) for i in t["witnesses"]),
        )
        for t in payload["sequences"]
    ))


# ---------------------------------------------------------------------------
# the draw routine shared by both emission paths
# ---------------------------------------------------------------------------

@dataclass
class _SequenceDraw:
    truth: SequenceTruth
    start: str
    timestamps: np.ndarray  # (n_total,) capture-clock seconds
    blend: np.ndarray  # (n_total, 52) float32
    vertices: np.ndarray  # (n_total, 1220, 3) float32
    pose: np.ndarray  # (n_total, 70, 3) float64 pixels + confidence

    @property
    def clip_slice(self) -> slice:
        return slice(CLIP_PAD, CLIP_PAD + self.truth_frames)

    @property
    def truth_frames(self) -> int:
        return self.timestamps.size - 2 * CLIP_PAD


def _draw_sequence(
    config: SynthConfig,
    centers: dict[str, CenterPair],
    patient: int,
    index: int,
) -> _SequenceDraw:
    """All randomness for one sequence, in one fixed draw order.

    The emitted span is the target frames plus CLIP_PAD neutral frames on
    each side (removed again by the clip markers); witness indices refer to
    the clipped sequence.
    """
    rng = np.random.default_rng([config.seed, patient, index])
    n = config.frames_per_sequence
    n_total = n + 2 * CLIP_PAD
    positive = index % 2 == 0

    if positive:
        raw = int(rng.integers(5, 11))
        w = config.witness_count
        w_start = int(rng.integers(0, n - w + 1))
        witnesses = tuple(range(w_start, w_start + w))
    else:
        raw = int(rng.integers(0, 5))
        witnesses = ()

    blend_noise = rng.standard_normal((n_total, N_BLEND_SHAPES))
    vert_noise = rng.standard_normal((n_total, N_MESH_VERTICES, 3))
    u_noise = rng.standard_normal((n_total, N_FACE_KEYPOINTS, 2))

    mask = np.zeros(n_total, dtype=bool)
    for i in witnesses:
        mask[CLIP_PAD + i] = True

    cb, cm, cu = centers["blendshapes"], centers["keypoints3d"], centers["keypoints2d"]
    blend64 = np.where(mask[:, None], cb.pain, cb.neutral)
    blend64 = np.clip(blend64 + config.noise_scale * blend_noise, 0.0, 1.0)

    verts64 = np.where(mask[:, None, None], cm.pain, cm.neutral)
    verts64 = verts64 + config.noise_scale * vert_noise

    u = np.where(mask[:, None, None], cu.pain, cu.neutral)
    u = np.clip(u + config.noise_scale * u_noise, 0.0, 1.0)
    # corner anchors pin the bounding box, so normalization recovers u
    u[:, 0, :] = 0.0
    u[:, -1, :] = 1.0
    pose = np.empty((n_total, N_FACE_KEYPOINTS, 3))
    pose[:, :, :2] = POSE_OFFSET + POSE_SCALE * u
    pose[:, :, 2] = POSE_CONFIDENCE

    collection, rating = 1, index + 1
    start_dt = datetime(2021, 3, 1, 9, 0, 0) + timedelta(
        days=patient - 1, minutes=index
    )
    start = start_dt.isoformat(timespec="milliseconds") + "Z"
    truth = SequenceTruth(
        sequence_id=f"{patient}_{collection}_{rating}",
        patient=patient,
        collection=collection,
        rating=rating,
        raw=raw,
        witnesses=witnesses,
    )
    return _SequenceDraw(
        truth=truth,
        start=start,
        timestamps=100.0 + np.arange(n_total) / FPS,
        blend=blend64.astype(np.float32),
        vertices=verts64.astype(np.float32),
        pose=pose,
    )


def _iter_draws(config: SynthConfig):
    centers = resolve_centers(config)
    for patient in range(1, config.patients + 1):
        for index in range(config.sequences_per_patient):
            yield _draw_sequence(config, centers, patient, index)


# ---------------------------------------------------------------------------
# in-memory fast path
# ---------------------------------------------------------------------------

def generate_dataset(
    config: SynthConfig,
) -> tuple[dict[str, list[SequenceSample]], GroundTruth]:
    """Build feature tensors directly, bypassing the files.

    Bit-identical to parsing a generated tree: float32 rounding is applied
    where the packed buffers would, and 2D frames run through the same
    bounding-box normalization as parsed pose documents.
    """
    samples: dict[str, list[SequenceSample]] = {k: [] for k in config.kinds}
    truths = []
    for draw in _iter_draws(config):
        truths.append(draw.truth)
        label = make_label(draw.truth.raw)
        clip = draw.clip_slice
        for kind_key in config.kinds:
            kind = FeatureKind.from_key(kind_key)
            if kind is FeatureKind.BLEND_SHAPES:
                frames = draw.blend[clip].astype(np.float64)
            elif kind is FeatureKind.KEYPOINTS_3D:
                frames = draw.vertices[clip].astype(np.float64).reshape(-1, kind.dim)
            else:
                frames = np.stack([
                    normalize_2d(frame).values for frame in draw.pose[clip]
                ])
            samples[kind_key].append(SequenceSample(
                patient_id=draw.truth.patient,
                sequence_id=draw.truth.sequence_id,
                kind=kind,
                frames=frames,
                label=label,
            ))
    return samples, GroundTruth(sequences=tuple(truths))


# ---------------------------------------------------------------------------
# on-disk emission
# ---------------------------------------------------------------------------

_TEX_X, _TEX_Y = _grid(N_MESH_VERTICES, 61)
_TEXTURE = np.column_stack([_TEX_X / 60.0, _TEX_Y / 19.0]).astype(np.float32)
_TRIANGLES = np.array([[0, 1, 61], [1, 62, 61], [2, 3, 63]], dtype=np.int16)
_IDENTITY4 = np.eye(4)
_LOOK_AT = np.array([0.0, 0.0, 0.3])


def _face_frames(draw: _SequenceDraw) -> list[FaceFrame]:
    return [
        FaceFrame(
            timestamp=float(draw.timestamps[i]),
            transform=_IDENTITY4,
            camera_transform=_IDENTITY4,
            left_eye_transform=_IDENTITY4,
            right_eye_transform=_IDENTITY4,
            look_at_point=_LOOK_AT,
            blend_shapes=draw.blend[i],
            vertices=draw.vertices[i],
            texture_coordinates=_TEXTURE,
            triangle_indices=_TRIANGLES,
        )
        for i in range(draw.timestamps.size)
    ]


def _write_sequence(root: Path, draw: _SequenceDraw) -> None:
    t = draw.truth
    base = recording_basename(t.patient, t.collection, t.rating, draw.start)
    rec_dir = root / f"p{t.patient}" / str(t.collection) / str(t.rating)
    rec_dir.mkdir(parents=True, exist_ok=True)

    n_total = draw.timestamps.size
    info = VideoInfo(
        patient=t.patient,
        collection=t.collection,
        rating=t.rating,
        start=draw.start,
        duration=n_total / FPS,
        timestamp=float(draw.timestamps[0]),
        frame_timestamps=draw.timestamps,
    )
    (rec_dir / f"{base}.json").write_text(encode_video_info(info))

    frames = _face_frames(draw)
    for c, lo in enumerate(range(0, n_total, CHUNK_FRAMES)):
        chunk = FaceChunk(
            patient=t.patient,
            collection=t.collection,
            rating=t.rating,
            start=draw.start,
            blend_shape_locations=BLEND_LOCATIONS,
            data=tuple(frames[lo:lo + CHUNK_FRAMES]),
        )
        (rec_dir / f"{base}_face_{c}.json").write_text(encode_face_chunk(chunk))

    pose_dir = root / "pose" / f"p{t.patient}" / str(t.collection) / str(t.rating) / base
    pose_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_total):
        frame = PoseFrame(people=(PosePerson(
            person_id=0,
            pose_keypoints=np.zeros((25, 3)),
            face_keypoints=draw.pose[i],
        ),))
        (pose_dir / f"{base}_{i:012d}.json").write_text(encode_pose_frame(frame))

    stage_dir = root / "stage" / f"p{t.patient}"
    stage_dir.mkdir(parents=True, exist_ok=True)
    markers = ClipMarkers(
        start=(CLIP_PAD - 0.5) / FPS,
        end=(CLIP_PAD + draw.truth_frames - 0.5) / FPS,
    )
    (stage_dir / f"{base}-clip.json").write_text(encode_clip_markers(markers))


def generate(
    config: SynthConfig, root: str | Path, force: bool = False
) -> GroundTruth:
    """Emit a full dataset tree under ``root`` and return its ground truth.

    Refuses a non-empty target unless ``force`` is set. Also writes
    ``labels.csv`` and a ``ground_truth.json`` manifest (the manifest is for
    test harnesses; the pipeline never reads it).
    """
    root = Path(root)
    if root.exists() and any(root.iterdir()) and not force:
        raise FileExistsError(
            f"target {root} is not empty; pass force=True to overwrite"
        )
    root.mkdir(parents=True, exist_ok=True)

    truths = []
    for draw in _iter_draws(config):
        truths.append(draw.truth)
        _write_sequence(root, draw)
    truth = GroundTruth(sequences=tuple(truths))
    write_label_table(root / "labels.csv", truth.label_table())
    serialize.save_json(root / "ground_truth.json", truth_to_dict(truth))
    return truth


# ---------------------------------------------------------------------------
# witness recovery
# ---------------------------------------------------------------------------

def witness_recovery_rate(
    model: MilModel, bags: Sequence[Bag], truth: GroundTruth
) -> float:
    """Fraction of the model's positive training bags whose final
    representative maps back to a planted witness frame.

    ``bags`` must be the training bags (their source_indices supply the
    instance-to-frame mapping).
    """
    by_id = {b.bag_id: b for b in bags}
    truth_map = truth.by_id()
    hits = 0
    reps = model.witnesses
    if not reps:
        raise ValueError("model has no positive bags")
    for bag_id, rep in reps.items():
        if bag_id not in by_id:
            raise ValueError(f"missing index metadata: bag {bag_id!r} not supplied")
        if bag_id not in truth_map:
            raise ValueError(f"no ground truth for bag {bag_id!r}")
        source = int(by_id[bag_id].source_indices[rep])
        if source in truth_map[bag_id].witnesses:
            hits += 1
    return hits / len(reps)
