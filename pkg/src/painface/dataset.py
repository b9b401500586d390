"""Feature spaces, labels, and sequence assembly.

Three per-frame feature spaces are derived from a recording:

* 2D keypoints: 70 detector points, bounding-box normalized, with
  confidences -> 210 values,
* 3D keypoints: the 1220-vertex face mesh flattened row-major -> 3660 values,
* blend shapes: 52 facial-action coefficients in [0, 1].

Pain scores are 11-point numeric ratings (0-10); models consume the score
divided by 10, and the binary task calls a sequence significant when the raw
score exceeds 4.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import FormatError, Recording

log = logging.getLogger(__name__)

N_FACE_KEYPOINTS = 70
N_MESH_VERTICES = 1220
N_BLEND_SHAPES = 52


class FeatureKind(Enum):
    """The three per-frame feature spaces and their dimensionalities."""

    KEYPOINTS_2D = ("keypoints2d", 3 * N_FACE_KEYPOINTS)
    KEYPOINTS_3D = ("keypoints3d", 3 * N_MESH_VERTICES)
    BLEND_SHAPES = ("blendshapes", N_BLEND_SHAPES)

    def __init__(self, key: str, dim: int):
        self.key = key
        self.dim = dim

    @classmethod
    def from_key(cls, key: str) -> "FeatureKind":
        for kind in cls:
            if kind.key == key:
                return kind
        raise ValueError(f"unknown feature kind {key!r}")


class DegenerateFrameError(ValueError):
    """A frame whose 2D keypoints admit no valid bounding-box normalization."""


@dataclass(frozen=True)
class PainLabel:
    """A sequence's pain rating in its three consumed forms."""

    raw: int          # 0..10 as reported
    scaled: float     # raw / 10, the regression target
    significant: bool  # raw > 4, the binary-task class


def make_label(raw: int) -> PainLabel:
    if not isinstance(raw, (int, np.integer)) or isinstance(raw, bool):
        raise ValueError(f"raw pain score must be an integer, got {raw!r}")
    if not 0 <= raw <= 10:
        raise ValueError(f"raw pain score must be in 0..10, got {raw}")
    return PainLabel(raw=int(raw), scaled=raw / 10.0, significant=raw > 4)


@dataclass(frozen=True)
class FrameFeatureVector:
    """One frame in one feature space."""

    kind: FeatureKind
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.shape != (self.kind.dim,):
            raise ValueError(
                f"{self.kind.key} vector must have {self.kind.dim} values, "
                f"got shape {v.shape}"
            )


@dataclass
class SequenceSample:
    """One recording's frames in one feature space, with its label."""

    patient_id: int
    sequence_id: str
    kind: FeatureKind
    frames: np.ndarray  # (n_frames, kind.dim) float64, temporal order
    label: PainLabel

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def select_largest_face(people: Sequence[np.ndarray]) -> np.ndarray | None:
    """Pick the detected face with the largest confident-point bounding box.

    ``people`` holds one (70, 3) [x, y, confidence] array per detected person
    (empty arrays allowed). Returns None when nobody has face keypoints.
    Area ties keep the first occurrence.
    """
    best, best_area = None, -1.0
    for pts in people:
        pts = np.asarray(pts, dtype=np.float64)
        if pts.size == 0:
            continue
        conf = pts[:, 2] > 0
        if np.any(conf):
            xs, ys = pts[conf, 0], pts[conf, 1]
            area = float((xs.max() - xs.min()) * (ys.max() - ys.min()))
        else:
            area = 0.0
        if area > best_area:
            best, best_area = pts, area
    return best


def normalize_2d(points: np.ndarray) -> FrameFeatureVector:
    """Bounding-box normalize one frame of 2D keypoints.

    The box is the tight axis-aligned bounding box of the points with
    confidence > 0; x and y are mapped to [0, 1] relative to the box edges,
    confidences pass through unscaled. Points with zero confidence (the
    detector's not-found convention is x = y = 0) are emitted as (0, 0, 0).
    The output interleaves (x1, y1, c1, x2, y2, c2, ...).

    Raises:
        DegenerateFrameError: fewer than two distinct confident x or y
            coordinates (the box has no width or no height).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_FACE_KEYPOINTS, 3):
        raise ValueError(f"expected ({N_FACE_KEYPOINTS}, 3) keypoints, got {pts.shape}")
    conf = pts[:, 2] > 0
    if np.unique(pts[conf, 0]).size < 2 or np.unique(pts[conf, 1]).size < 2:
        raise DegenerateFrameError("confident keypoints span no bounding box")
    xs, ys = pts[conf, 0], pts[conf, 1]
    x0, y0 = xs.min(), ys.min()
    w, h = xs.max() - x0, ys.max() - y0
    out = np.zeros_like(pts)
    out[conf, 0] = (pts[conf, 0] - x0) / w
    out[conf, 1] = (pts[conf, 1] - y0) / h
    out[conf, 2] = pts[conf, 2]
    return FrameFeatureVector(FeatureKind.KEYPOINTS_2D, out.ravel())


def flatten_3d(vertices: np.ndarray) -> FrameFeatureVector:
    """Flatten a (1220, 3) mesh row-major: x1, y1, z1, x2, y2, z2, ..."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.shape != (N_MESH_VERTICES, 3):
        raise ValueError(f"expected ({N_MESH_VERTICES}, 3) vertices, got {v.shape}")
    return FrameFeatureVector(FeatureKind.KEYPOINTS_3D, v.ravel())


def blendshape_vector(
    coefficients: np.ndarray,
    locations: Sequence[str],
    canonical: Sequence[str],
) -> FrameFeatureVector:
    """Reorder blend-shape coefficients into the canonical location order.

    Values outside [0, 1] are clamped with a warning; an unknown location or
    a count mismatch is an error.
    """
    coeffs = np.asarray(coefficients, dtype=np.float64).ravel()
    if len(locations) != len(canonical) or coeffs.size != len(canonical):
        raise FormatError(
            f"expected {len(canonical)} blend shapes, got {coeffs.size} values "
            f"for {len(locations)} locations"
        )
    index = {name: i for i, name in enumerate(canonical)}
    out = np.empty(len(canonical))
    for name, value in zip(locations, coeffs):
        if name not in index:
            raise FormatError(f"unknown blend-shape location {name!r}")
        out[index[name]] = value
    if np.any(out < 0) or np.any(out > 1):
        log.warning(
            "clamping %d blend-shape values outside [0, 1]",
            int(np.sum((out < 0) | (out > 1))),
        )
        out = np.clip(out, 0.0, 1.0)
    return FrameFeatureVector(FeatureKind.BLEND_SHAPES, out)


@dataclass
class ExclusionRecord:
    """Why a recording contributed no sample (or a frame was dropped)."""

    sequence_id: str
    reason: str


def build_sequences(
    recordings: Iterable[Recording],
    kind: FeatureKind,
) -> tuple[list[SequenceSample], list[ExclusionRecord]]:
    """Extract per-frame features of one kind from each recording.

    Frames lacking the modality are skipped, 2D frames failing bounding-box
    normalization are dropped, and recordings that end up with zero frames
    (or carry no label) are excluded and reported. Frame order is temporal.
    """
    samples: list[SequenceSample] = []
    excluded: list[ExclusionRecord] = []
    # blend-shape order is pinned by the first recording seen; later
    # recordings are reordered to match it
    canonical: tuple[str, ...] | None = None
    for rec in recordings:
        sid = rec.sequence_id
        if rec.raw_pain is None:
            excluded.append(ExclusionRecord(sid, "no pain score attached"))
            continue
        rows = []
        dropped = 0
        for frame in rec.aligned_frames:
            if kind is FeatureKind.KEYPOINTS_2D:
                if frame.face2d is None:
                    continue
                try:
                    rows.append(normalize_2d(frame.face2d).values)
                except DegenerateFrameError:
                    dropped += 1
            elif kind is FeatureKind.KEYPOINTS_3D:
                if frame.face is None:
                    continue
                rows.append(flatten_3d(frame.face.vertices).values)
            else:
                if frame.face is None:
                    continue
                if canonical is None:
                    canonical = _frame_locations(rec)
                rows.append(blendshape_vector(
                    frame.face.blend_shapes, _frame_locations(rec), canonical
                ).values)
        if dropped:
            log.info("%s: dropped %d degenerate 2D frames", sid, dropped)
        if not rows:
            excluded.append(ExclusionRecord(sid, f"no usable {kind.key} frames"))
            continue
        samples.append(SequenceSample(
            patient_id=rec.patient,
            sequence_id=sid,
            kind=kind,
            frames=np.asarray(rows, dtype=np.float64),
            label=make_label(rec.raw_pain),
        ))
    return samples, excluded


def _frame_locations(rec: Recording) -> tuple[str, ...]:
    # Location names travel on the chunk, not the frame; load_recording copies
    # them onto the Recording.
    if rec.blend_shape_locations is None:
        raise FormatError(
            f"{rec.sequence_id}: no blend-shape location names available"
        )
    return rec.blend_shape_locations


# ---------------------------------------------------------------------------
# label table
# ---------------------------------------------------------------------------

LABEL_HEADER = ["patient", "collection", "rating", "score"]


def read_label_table(path: str | Path) -> dict[tuple[int, int, int], int]:
    """Read the label CSV (header patient,collection,rating,score)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != LABEL_HEADER:
            raise FormatError(
                f"label table header must be {','.join(LABEL_HEADER)}, got {header}"
            )
        table = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"label table row has {len(row)} fields: {row}")
            p, c, r, s = (int(v) for v in row)
            make_label(s)  # range-check
            table[(p, c, r)] = s
    return table


def write_label_table(path: str | Path, table: dict[tuple[int, int, int], int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_HEADER)
        for (p, c, r), s in sorted(table.items()):
            writer.writerow([p, c, r, s])


def attach_labels(
    recordings: Iterable[Recording],
    table: dict[tuple[int, int, int], int],
) -> list[Recording]:
    """Return recordings with raw_pain filled from the label table (missing
    entries leave raw_pain None; build_sequences reports those)."""
    out = []
    for rec in recordings:
        if rec.key in table:
            out.append(replace(rec, raw_pain=table[rec.key]))
        else:
            out.append(rec)
    return out


# ---------------------------------------------------------------------------
# feature cache (columnar binary)
# ---------------------------------------------------------------------------

_CACHE_MAGIC = b"PFM1"
# kind tag byte; 0 is reserved for raw (kind-less) matrices such as bag dumps
_KIND_TAGS = {
    FeatureKind.KEYPOINTS_2D: 1,
    FeatureKind.KEYPOINTS_3D: 2,
    FeatureKind.BLEND_SHAPES: 3,
}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def write_feature_matrix(
    path: str | Path, matrix: np.ndarray, kind: FeatureKind | None = None
) -> None:
    """Write a feature matrix as magic, kind tag, row count, dim, then
    little-endian float32 values."""
    mat = np.ascontiguousarray(matrix, dtype="<f4")
    if mat.ndim != 2:
        raise ValueError("feature matrix must be 2-dimensional")
    tag = 0 if kind is None else _KIND_TAGS[kind]
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<BII", tag, mat.shape[0], mat.shape[1]))
        fh.write(mat.tobytes())


def read_feature_matrix(path: str | Path) -> tuple[np.ndarray, FeatureKind | None]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CACHE_MAGIC:
            raise FormatError(f"{path}: not a feature-matrix file")
        tag, rows, dim = struct.unpack("<BII", fh.read(9))
        if tag and tag not in _TAG_KINDS:
            raise FormatError(f"{path}: unknown feature-kind tag {tag}")
        payload = fh.read()
    if len(payload) != 4 * rows * dim:
        raise FormatError(
            f"{path}: payload length {len(payload)} does not match "
            f"{rows} rows x {dim} columns"
        )
    mat = np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float64)
    return mat, _TAG_KINDS.get(tag)
