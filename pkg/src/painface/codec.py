"""Parsing and encoding of facial-recording captures.

A capture session produces, per recorded video:

* one video-info JSON (identifiers, start time, per-frame capture timestamps),
* a series of face-mesh chunk JSONs, one per ten seconds of video, whose
  per-frame buffers (mesh vertices, texture coordinates, blend-shape
  coefficients, triangle indices) are Base64-encoded packed little-endian
  binary,
* one pose JSON per video frame (third-party 2D keypoint detector output),
* optionally clip markers trimming the usable span of the video.

Files are named ``A_B_C_YYYY-MM-DD_HH-MM-SS*`` where A/B/C are patient,
collection, and rating ids, and live in a ``pA/B/C`` directory hierarchy.
Staged transfer archives (``*-face.zip``, ``*-pose.zip``) bundle the same
documents. This module parses and re-encodes all of those forms, merges
chunked face streams, aligns face and pose streams to video frames, and
applies clip markers. GPG-encrypted archive variants are out of scope.
"""
from __future__ import annotations

import base64
import binascii
import json
import re
import zipfile
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

EXPECTED_VERTEX_COUNT = 1220

# element name -> (numpy little-endian dtype, bytes per element)
_ELEMENTS = {"float32": ("<f4", 4), "int16": ("<i2", 2)}


class FormatError(ValueError):
    """Raised when a document does not conform to the recording format."""


# ---------------------------------------------------------------------------
# packed binary buffers
# ---------------------------------------------------------------------------

def decode_packed_array(
    data: str, element: str, components: int, stride: int, *, name: str = "buffer"
) -> np.ndarray:
    """Decode a Base64 packed little-endian buffer into an (n, components) array.

    ``stride`` is the number of stored elements per row; trailing
    ``stride - components`` elements per row are alignment padding and are
    discarded (mesh vertices are stored as 3 coordinates plus one padding
    float).

    Args:
        data: Base64 text.
        element: ``"float32"`` or ``"int16"``.
        components: meaningful elements per row.
        stride: stored elements per row, >= components.
        name: field name used in error messages.

    Raises:
        FormatError: invalid Base64, or byte length not divisible by the
            row size ``stride * elementsize``.
    """
    if element not in _ELEMENTS:
        raise FormatError(f"{name}: unknown element type {element!r}")
    if not (0 < components <= stride):
        raise FormatError(f"{name}: need 0 < components <= stride")
    dtype, esize = _ELEMENTS[element]
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise FormatError(f"{name}: invalid Base64: {exc}") from exc
    row = stride * esize
    if len(raw) % row != 0:
        raise FormatError(
            f"{name}: byte length {len(raw)} not divisible by row size {row}"
        )
    mat = np.frombuffer(raw, dtype=dtype).reshape(-1, stride)
    return mat[:, :components].copy()


def encode_packed_array(mat: np.ndarray, element: str, stride: int) -> str:
    """Inverse of :func:`decode_packed_array`; padding elements written as zero."""
    if element not in _ELEMENTS:
        raise FormatError(f"unknown element type {element!r}")
    dtype, _ = _ELEMENTS[element]
    mat = np.asarray(mat)
    if mat.ndim != 2:
        raise FormatError("packed array must be 2-dimensional")
    n, components = mat.shape
    if components > stride:
        raise FormatError("components exceed stride")
    out = np.zeros((n, stride), dtype=dtype)
    out[:, :components] = mat
    return base64.b64encode(out.tobytes()).decode("ascii")


# ---------------------------------------------------------------------------
# document types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VideoInfo:
    """Per-video metadata: identifiers, wall-clock start, capture timestamps."""

    patient: int
    collection: int
    rating: int
    start: str  # ISO-8601 UTC, millisecond precision
    duration: float  # seconds
    timestamp: float  # capture-clock seconds at video start
    frame_timestamps: np.ndarray  # float64, strictly increasing

    def __post_init__(self) -> None:
        ts = np.asarray(self.frame_timestamps, dtype=np.float64)
        object.__setattr__(self, "frame_timestamps", ts)
        if self.duration <= 0:
            raise FormatError("duration must be positive")
        if ts.size and np.any(np.diff(ts) <= 0):
            raise FormatError("frameTimestamps must be strictly increasing")
        if ts.size and np.any(ts < self.timestamp):
            raise FormatError("frameTimestamps must not precede the video timestamp")
        parse_start_time(self.start)  # validates the ISO form

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VideoInfo):
            return NotImplemented
        return (
            (self.patient, self.collection, self.rating, self.start) ==
            (other.patient, other.collection, other.rating, other.start)
            and self.duration == other.duration
            and self.timestamp == other.timestamp
            and np.array_equal(self.frame_timestamps, other.frame_timestamps)
        )


@dataclass(frozen=True, eq=False)
class FaceFrame:
    """One captured face-mesh frame."""

    timestamp: float
    transform: np.ndarray  # (4, 4)
    camera_transform: np.ndarray  # (4, 4)
    left_eye_transform: np.ndarray  # (4, 4)
    right_eye_transform: np.ndarray  # (4, 4)
    look_at_point: np.ndarray  # (3,)
    blend_shapes: np.ndarray  # (n_locations,) float32
    vertices: np.ndarray  # (1220, 3) float32
    texture_coordinates: np.ndarray  # (1220, 2) float32
    triangle_indices: np.ndarray  # (n_triangles, 3) int16

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FaceFrame):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in (
                    "transform", "camera_transform", "left_eye_transform",
                    "right_eye_transform", "look_at_point", "blend_shapes",
                    "vertices", "texture_coordinates", "triangle_indices",
                )
            )
        )


@dataclass(frozen=True, eq=False)
class FaceChunk:
    """A ten-second slice of the face-mesh stream."""

    patient: int
    collection: int
    rating: int
    start: str
    blend_shape_locations: tuple[str, ...]
    data: tuple[FaceFrame, ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FaceChunk):
            return NotImplemented
        return (
            (self.patient, self.collection, self.rating, self.start,
             self.blend_shape_locations) ==
            (other.patient, other.collection, other.rating, other.start,
             other.blend_shape_locations)
            and self.data == other.data
        )


@dataclass(frozen=True)
class PosePerson:
    """One detected person in a pose frame."""

    person_id: int
    pose_keypoints: np.ndarray  # (n, 3) float64 [x, y, confidence]
    face_keypoints: np.ndarray  # (70, 3) or (0, 3) float64

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PosePerson):
            return NotImplemented
        return (
            self.person_id == other.person_id
            and np.array_equal(self.pose_keypoints, other.pose_keypoints)
            and np.array_equal(self.face_keypoints, other.face_keypoints)
        )


@dataclass(frozen=True)
class PoseFrame:
    """Pose-detector output for one video frame (possibly nobody detected)."""

    people: tuple[PosePerson, ...]


@dataclass(frozen=True)
class ClipMarkers:
    """Usable span of a video, in seconds relative to its first frame."""

    start: float
    end: float

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise FormatError("clip markers must satisfy 0 <= start < end")


@dataclass(frozen=True, eq=False)
class AlignedFrame:
    """One video frame with whatever modalities aligned to it."""

    video_timestamp: float
    face: FaceFrame | None
    face2d: np.ndarray | None  # (70, 3) raw pixel keypoints

    def has_face(self) -> bool:
        return self.face is not None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AlignedFrame):
            return NotImplemented
        if self.video_timestamp != other.video_timestamp or self.face != other.face:
            return False
        if (self.face2d is None) != (other.face2d is None):
            return False
        return self.face2d is None or np.array_equal(self.face2d, other.face2d)


@dataclass(frozen=True)
class Recording:
    """A fully assembled sequence: aligned frames plus identity and label."""

    patient: int
    collection: int
    rating: int
    origin: float  # capture-clock seconds of the first video frame
    duration: float
    aligned_frames: tuple[AlignedFrame, ...]
    raw_pain: int | None = None
    blend_shape_locations: tuple[str, ...] | None = None

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.patient, self.collection, self.rating)

    @property
    def sequence_id(self) -> str:
        return f"{self.patient}_{self.collection}_{self.rating}"


# ---------------------------------------------------------------------------
# JSON parsing / encoding
# ---------------------------------------------------------------------------

def _as_mapping(doc: str | bytes | Mapping[str, Any], what: str) -> Mapping[str, Any]:
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{what}: invalid JSON: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise FormatError(f"{what}: expected a JSON object")
    return doc


def _require(doc: Mapping[str, Any], key: str, what: str) -> Any:
    if key not in doc:
        raise FormatError(f"{what}: missing required property {key!r}")
    return doc[key]


def parse_start_time(start: str) -> datetime:
    """Parse the ISO-8601 start string (trailing 'Z' accepted) to a datetime."""
    if not isinstance(start, str):
        raise FormatError("start must be an ISO-8601 string")
    text = start[:-1] + "+00:00" if start.endswith("Z") else start
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise FormatError(f"start is not a valid ISO-8601 timestamp: {start!r}") from exc


def parse_video_info(doc: str | bytes | Mapping[str, Any]) -> VideoInfo:
    """Parse a video-info JSON document."""
    obj = _as_mapping(doc, "video info")
    return VideoInfo(
        patient=int(_require(obj, "patient", "video info")),
        collection=int(_require(obj, "collection", "video info")),
        rating=int(_require(obj, "rating", "video info")),
        start=_require(obj, "start", "video info"),
        duration=float(_require(obj, "duration", "video info")),
        timestamp=float(_require(obj, "timestamp", "video info")),
        frame_timestamps=np.asarray(
            _require(obj, "frameTimestamps", "video info"), dtype=np.float64
        ),
    )


def encode_video_info(info: VideoInfo) -> str:
    return json.dumps({
        "patient": info.patient,
        "collection": info.collection,
        "rating": info.rating,
        "start": info.start,
        "duration": info.duration,
        "timestamp": info.timestamp,
        "frameTimestamps": info.frame_timestamps.tolist(),
    })


def _parse_transform(doc: Mapping[str, Any], key: str, what: str) -> np.ndarray:
    mat = np.asarray(_require(doc, key, what), dtype=np.float64)
    if mat.shape != (4, 4):
        raise FormatError(f"{what}: {key} must be a 4x4 matrix, found shape {mat.shape}")
    return mat


def _parse_face_entry(doc: Mapping[str, Any], n_locations: int, what: str) -> FaceFrame:
    blend = decode_packed_array(
        _require(doc, "blendShapes", what), "float32", 1, 1, name=f"{what}.blendShapes"
    ).ravel()
    if blend.size != n_locations:
        raise FormatError(
            f"{what}: {blend.size} blend-shape values for {n_locations} locations"
        )
    # simd_float3 layout: 3 coordinates + 4 bytes padding per vertex
    verts = decode_packed_array(
        _require(doc, "vertices", what), "float32", 3, 4, name=f"{what}.vertices"
    )
    if verts.shape[0] != EXPECTED_VERTEX_COUNT:
        raise FormatError(
            f"{what}: expected {EXPECTED_VERTEX_COUNT} vertices, found {verts.shape[0]}"
        )
    tex = decode_packed_array(
        _require(doc, "textureCoordinates", what), "float32", 2, 2,
        name=f"{what}.textureCoordinates",
    )
    if tex.shape[0] != EXPECTED_VERTEX_COUNT:
        raise FormatError(
            f"{what}: expected {EXPECTED_VERTEX_COUNT} texture coordinates, "
            f"found {tex.shape[0]}"
        )
    tris = decode_packed_array(
        _require(doc, "triangleIndices", what), "int16", 3, 3,
        name=f"{what}.triangleIndices",
    )
    if tris.size and (tris.min() < 0 or tris.max() >= EXPECTED_VERTEX_COUNT):
        raise FormatError(f"{what}: triangle indices out of vertex range")
    look = np.asarray(_require(doc, "lookAtPoint", what), dtype=np.float64)
    if look.shape != (3,):
        raise FormatError(f"{what}: lookAtPoint must have 3 components")
    return FaceFrame(
        timestamp=float(_require(doc, "timestamp", what)),
        transform=_parse_transform(doc, "transform", what),
        camera_transform=_parse_transform(doc, "cameraTransform", what),
        left_eye_transform=_parse_transform(doc, "leftEyeTransform", what),
        right_eye_transform=_parse_transform(doc, "rightEyeTransform", what),
        look_at_point=look,
        blend_shapes=blend,
        vertices=verts,
        texture_coordinates=tex,
        triangle_indices=tris,
    )


def parse_face_chunk(doc: str | bytes | Mapping[str, Any]) -> FaceChunk:
    """Parse one face-mesh chunk document, decoding all packed buffers."""
    obj = _as_mapping(doc, "face chunk")
    locations = _require(obj, "blendShapeLocations", "face chunk")
    if not isinstance(locations, Sequence) or isinstance(locations, (str, bytes)):
        raise FormatError("face chunk: blendShapeLocations must be a list of names")
    locations = tuple(str(s) for s in locations)
    entries = _require(obj, "data", "face chunk")
    frames = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise FormatError(f"face chunk: data[{i}] is not an object")
        frames.append(_parse_face_entry(entry, len(locations), f"data[{i}]"))
    ts = np.array([f.timestamp for f in frames])
    if ts.size and np.any(np.diff(ts) <= 0):
        raise FormatError("face chunk: frame timestamps must be strictly increasing")
    return FaceChunk(
        patient=int(_require(obj, "patient", "face chunk")),
        collection=int(_require(obj, "collection", "face chunk")),
        rating=int(_require(obj, "rating", "face chunk")),
        start=str(_require(obj, "start", "face chunk")),
        blend_shape_locations=locations,
        data=tuple(frames),
    )


def encode_face_chunk(chunk: FaceChunk) -> str:
    entries = []
    for f in chunk.data:
        entries.append({
            "timestamp": f.timestamp,
            "transform": f.transform.tolist(),
            "cameraTransform": f.camera_transform.tolist(),
            "leftEyeTransform": f.left_eye_transform.tolist(),
            "rightEyeTransform": f.right_eye_transform.tolist(),
            "lookAtPoint": f.look_at_point.tolist(),
            "blendShapes": encode_packed_array(
                np.asarray(f.blend_shapes, dtype="<f4").reshape(-1, 1), "float32", 1
            ),
            "vertices": encode_packed_array(f.vertices, "float32", 4),
            "textureCoordinates": encode_packed_array(f.texture_coordinates, "float32", 2),
            "triangleIndices": encode_packed_array(f.triangle_indices, "int16", 3),
        })
    return json.dumps({
        "patient": chunk.patient,
        "collection": chunk.collection,
        "rating": chunk.rating,
        "start": chunk.start,
        "blendShapeLocations": list(chunk.blend_shape_locations),
        "data": entries,
    })


def merge_face_chunks(chunks: Iterable[FaceChunk]) -> list[FaceFrame]:
    """Concatenate chunked face streams into one timestamp-ordered frame list.

    Chunks must share patient/collection/rating/start identifiers and
    blend-shape locations; input file order is irrelevant (chunks are ordered
    by their first frame timestamp). Overlapping chunks are rejected.
    """
    chunks = [c for c in chunks if c.data]
    if not chunks:
        return []
    ident = (chunks[0].patient, chunks[0].collection, chunks[0].rating, chunks[0].start)
    for c in chunks[1:]:
        if (c.patient, c.collection, c.rating, c.start) != ident:
            raise FormatError("face chunks with mismatched identifiers cannot be merged")
        if c.blend_shape_locations != chunks[0].blend_shape_locations:
            raise FormatError("face chunks with differing blendShapeLocations")
    chunks.sort(key=lambda c: c.data[0].timestamp)
    frames: list[FaceFrame] = []
    for c in chunks:
        if frames and c.data[0].timestamp <= frames[-1].timestamp:
            raise FormatError("face chunks overlap in time")
        frames.extend(c.data)
    return frames


def parse_pose_frame(doc: str | bytes | Mapping[str, Any]) -> PoseFrame:
    """Parse one pose-detector output document (one video frame)."""
    obj = _as_mapping(doc, "pose frame")
    people_raw = _require(obj, "people", "pose frame")
    people = []
    for i, person in enumerate(people_raw):
        if not isinstance(person, Mapping):
            raise FormatError(f"pose frame: people[{i}] is not an object")
        pid = person.get("person_id", -1)
        if isinstance(pid, Sequence) and not isinstance(pid, (str, bytes)):
            pid = pid[0] if len(pid) else -1
        pose = np.asarray(person.get("pose_keypoints_2d", []), dtype=np.float64)
        if pose.size % 3 != 0:
            raise FormatError(f"pose frame: people[{i}] pose keypoints not x,y,c triples")
        face = np.asarray(person.get("face_keypoints_2d", []), dtype=np.float64)
        if face.size not in (0, 210):
            raise FormatError(
                f"pose frame: people[{i}] face keypoints length {face.size}, "
                "expected 0 or 210"
            )
        people.append(PosePerson(
            person_id=int(pid),
            pose_keypoints=pose.reshape(-1, 3),
            face_keypoints=face.reshape(-1, 3),
        ))
    return PoseFrame(people=tuple(people))


def encode_pose_frame(frame: PoseFrame) -> str:
    return json.dumps({
        "version": 1.3,
        "people": [
            {
                "person_id": [p.person_id],
                "pose_keypoints_2d": p.pose_keypoints.ravel().tolist(),
                "face_keypoints_2d": p.face_keypoints.ravel().tolist(),
            }
            for p in frame.people
        ],
    })


def parse_clip_markers(doc: str | bytes | Mapping[str, Any]) -> ClipMarkers:
    obj = _as_mapping(doc, "clip markers")
    return ClipMarkers(
        start=float(_require(obj, "start", "clip markers")),
        end=float(_require(obj, "end", "clip markers")),
    )


def encode_clip_markers(markers: ClipMarkers) -> str:
    return json.dumps({"start": markers.start, "end": markers.end})


# ---------------------------------------------------------------------------
# alignment and clipping
# ---------------------------------------------------------------------------

def _match_tolerance(frame_timestamps: np.ndarray) -> float:
    # Half the median inter-frame interval; degenerate single-frame videos
    # fall back to exact-match only.
    if frame_timestamps.size < 2:
        return 0.0
    return 0.5 * float(np.median(np.diff(frame_timestamps)))


def align_streams(
    info: VideoInfo,
    face_frames: Sequence[FaceFrame],
    pose_frames: Sequence[PoseFrame] | None,
) -> Recording:
    """Pair every video frame with its nearest face frame and its 2D face.

    A face frame is attached to a video frame when their capture timestamps
    differ by at most half the median video inter-frame interval, and each
    face frame is used at most once (nearest wins; earlier video frame wins
    ties). ``pose_frames`` must contain one entry per video frame (the pose
    detector runs per frame) or be None when the pose stream is absent.
    """
    from .dataset import select_largest_face  # deferred: dataset builds on codec

    ts = info.frame_timestamps
    n = ts.size
    if pose_frames is not None and len(pose_frames) != n:
        raise FormatError(
            f"expected {n} pose frames (one per video frame), found {len(pose_frames)}"
        )
    face_ts = np.array([f.timestamp for f in face_frames], dtype=np.float64)
    if face_ts.size and np.any(np.diff(face_ts) <= 0):
        raise FormatError("face frames must be strictly increasing in time")
    tol = _match_tolerance(ts)

    # nearest face frame per video frame, then drop duplicate claims
    chosen = np.full(n, -1, dtype=np.int64)
    if face_ts.size:
        pos = np.searchsorted(face_ts, ts)
        for i in range(n):
            best, best_dt = -1, np.inf
            for j in (pos[i] - 1, pos[i]):
                if 0 <= j < face_ts.size:
                    dt = abs(face_ts[j] - ts[i])
                    if dt < best_dt:
                        best, best_dt = j, dt
            if best >= 0 and best_dt <= tol:
                chosen[i] = best
        claimed: dict[int, int] = {}
        for i in range(n):
            j = chosen[i]
            if j < 0:
                continue
            if j in claimed:
                prev = claimed[j]
                if abs(face_ts[j] - ts[i]) < abs(face_ts[j] - ts[prev]):
                    chosen[prev] = -1
                    claimed[j] = i
                else:
                    chosen[i] = -1
            else:
                claimed[j] = i

    frames = []
    for i in range(n):
        face = face_frames[chosen[i]] if chosen[i] >= 0 else None
        face2d = None
        if pose_frames is not None:
            face2d = select_largest_face(
                [p.face_keypoints for p in pose_frames[i].people]
            )
        frames.append(AlignedFrame(
            video_timestamp=float(ts[i]), face=face, face2d=face2d,
        ))
    origin = float(ts[0]) if n else info.timestamp
    return Recording(
        patient=info.patient,
        collection=info.collection,
        rating=info.rating,
        origin=origin,
        duration=info.duration,
        aligned_frames=tuple(frames),
    )


def apply_clip(rec: Recording, markers: ClipMarkers) -> Recording:
    """Retain only frames whose time relative to the recording origin lies in
    [markers.start, markers.end]. Idempotent: the origin is kept, so a second
    application selects the same frames."""
    kept = tuple(
        f for f in rec.aligned_frames
        if markers.start <= f.video_timestamp - rec.origin <= markers.end
    )
    return replace(rec, aligned_frames=kept)


# ---------------------------------------------------------------------------
# file naming and tree discovery
# ---------------------------------------------------------------------------

_INFO_RE = re.compile(
    r"^(\d+)_(\d+)_(\d+)_(\d{4}-\d{2}-\d{2}_\d{2}-\d{2}-\d{2})\.json$"
)
_CHUNK_RE = re.compile(
    r"^(\d+)_(\d+)_(\d+)_(\d{4}-\d{2}-\d{2}_\d{2}-\d{2}-\d{2})_face_(\d+)\.json$"
)
_POSE_FILE_RE = re.compile(r"_(\d{12})\.json$")
_STAGE_RE = re.compile(
    r"^(\d+)_(\d+)_(\d+)_(\d{4}-\d{2}-\d{2}_\d{2}-\d{2}-\d{2})"
    r"-(clip\.json|face\.zip|pose\.zip)$"
)


def start_to_stamp(start: str) -> str:
    """Render an ISO start string as the YYYY-MM-DD_HH-MM-SS used in file names."""
    dt = parse_start_time(start)
    return dt.strftime("%Y-%m-%d_%H-%M-%S")


def recording_basename(patient: int, collection: int, rating: int, start: str) -> str:
    return f"{patient}_{collection}_{rating}_{start_to_stamp(start)}"


@dataclass
class RecordingPaths:
    """Where one recording's documents live inside a data tree."""

    patient: int
    collection: int
    rating: int
    basename: str
    info_path: Path | None = None
    chunk_paths: list[Path] = field(default_factory=list)
    pose_dir: Path | None = None
    clip_path: Path | None = None
    face_zip: Path | None = None
    pose_zip: Path | None = None


def discover_recordings(root: str | Path) -> list[RecordingPaths]:
    """Scan a data tree (``pA/B/C`` hierarchy plus pose/ and stage/ siblings)
    and return one entry per recording found, sorted by identifiers."""
    root = Path(root)
    found: dict[str, RecordingPaths] = {}

    def entry(p: int, c: int, r: int, basename: str) -> RecordingPaths:
        if basename not in found:
            found[basename] = RecordingPaths(p, c, r, basename)
        return found[basename]

    for info_path in sorted(root.glob("p*/*/*/*.json")):
        m = _INFO_RE.match(info_path.name)
        if m:
            e = entry(int(m.group(1)), int(m.group(2)), int(m.group(3)),
                      info_path.name[:-len(".json")])
            e.info_path = info_path
            continue
        m = _CHUNK_RE.match(info_path.name)
        if m:
            base = f"{m.group(1)}_{m.group(2)}_{m.group(3)}_{m.group(4)}"
            e = entry(int(m.group(1)), int(m.group(2)), int(m.group(3)), base)
            e.chunk_paths.append(info_path)
    # recordings may exist only as staged archives
    for p in sorted(root.glob("stage/p*/*")):
        m = _STAGE_RE.match(p.name)
        if m:
            base = f"{m.group(1)}_{m.group(2)}_{m.group(3)}_{m.group(4)}"
            entry(int(m.group(1)), int(m.group(2)), int(m.group(3)), base)
    for e in found.values():
        e.chunk_paths.sort(key=lambda p: int(_CHUNK_RE.match(p.name).group(5)))
        pose_dir = (
            root / "pose" / f"p{e.patient}" / str(e.collection) / str(e.rating)
            / e.basename
        )
        if pose_dir.is_dir():
            e.pose_dir = pose_dir
        stage = root / "stage" / f"p{e.patient}"
        for suffix, attr in (("-clip.json", "clip_path"),
                             ("-face.zip", "face_zip"),
                             ("-pose.zip", "pose_zip")):
            p = stage / (e.basename + suffix)
            if p.is_file():
                setattr(e, attr, p)
    return sorted(found.values(), key=lambda e: (e.patient, e.collection, e.rating))


def read_face_zip(path: str | Path) -> tuple[VideoInfo | None, list[FaceChunk]]:
    """Read a staged ``*-face.zip``: the video-info JSON plus face chunks."""
    info = None
    chunks = []
    with zipfile.ZipFile(path) as zf:
        for name in sorted(zf.namelist()):
            leaf = Path(name).name
            if _INFO_RE.match(leaf):
                info = parse_video_info(zf.read(name))
            elif _CHUNK_RE.match(leaf):
                chunks.append((int(_CHUNK_RE.match(leaf).group(5)), zf.read(name)))
    chunks.sort(key=lambda t: t[0])
    return info, [parse_face_chunk(raw) for _, raw in chunks]


def read_pose_zip(path: str | Path) -> list[PoseFrame]:
    """Read a staged ``*-pose.zip``: per-frame pose JSONs, frame order."""
    frames = []
    with zipfile.ZipFile(path) as zf:
        for name in zf.namelist():
            m = _POSE_FILE_RE.search(Path(name).name)
            if m:
                frames.append((int(m.group(1)), zf.read(name)))
    frames.sort(key=lambda t: t[0])
    return [parse_pose_frame(raw) for _, raw in frames]


def _read_pose_dir(pose_dir: Path) -> list[PoseFrame]:
    frames = []
    for p in pose_dir.iterdir():
        m = _POSE_FILE_RE.search(p.name)
        if m:
            frames.append((int(m.group(1)), p))
    frames.sort(key=lambda t: t[0])
    return [parse_pose_frame(p.read_bytes()) for _, p in frames]


def load_recording(paths: RecordingPaths) -> Recording:
    """Assemble one aligned (and clipped, when markers exist) recording.

    Plain-tree documents are preferred; staged zip archives are the fallback
    for whichever stream has no plain files.
    """
    if paths.info_path is not None:
        info = parse_video_info(paths.info_path.read_bytes())
        chunks = [parse_face_chunk(p.read_bytes()) for p in paths.chunk_paths]
    elif paths.face_zip is not None:
        info, chunks = read_face_zip(paths.face_zip)
    else:
        info, chunks = None, []
    if info is None:
        raise FormatError(f"recording {paths.basename}: no video-info document found")
    if not chunks and paths.face_zip is not None:
        _, chunks = read_face_zip(paths.face_zip)

    if paths.pose_dir is not None:
        pose = _read_pose_dir(paths.pose_dir)
    elif paths.pose_zip is not None:
        pose = read_pose_zip(paths.pose_zip)
    else:
        pose = None

    rec = align_streams(info, merge_face_chunks(chunks), pose)
    if chunks:
        rec = replace(rec, blend_shape_locations=chunks[0].blend_shape_locations)
    if paths.clip_path is not None:
        rec = apply_clip(rec, parse_clip_markers(paths.clip_path.read_bytes()))
    return rec


@dataclass
class ValidationIssue:
    path: str
    message: str


@dataclass
class ValidationReport:
    files_checked: int = 0
    recordings: int = 0
    issues: list[ValidationIssue] = field(default_factory=list)
    checked: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_tree(root: str | Path) -> ValidationReport:
    """Parse every recognized document under a data tree, collecting failures.

    I/O errors on individual files are recorded as issues; the sweep never
    aborts early.
    """
    root = Path(root)
    report = ValidationReport()

    def check(path: Path, fn) -> Any:
        report.files_checked += 1
        report.checked.append(str(path))
        try:
            return fn()
        except (FormatError, OSError, zipfile.BadZipFile) as exc:
            report.issues.append(ValidationIssue(str(path), str(exc)))
            return None

    for e in discover_recordings(root):
        report.recordings += 1
        chunks = []
        if e.info_path is not None:
            p = e.info_path
            check(p, lambda p=p: parse_video_info(p.read_bytes()))
        for p in e.chunk_paths:
            c = check(p, lambda p=p: parse_face_chunk(p.read_bytes()))
            if c is not None:
                chunks.append(c)
        try:
            merge_face_chunks(chunks)
        except FormatError as exc:
            report.issues.append(ValidationIssue(e.basename, str(exc)))
        if e.pose_dir is not None:
            for p in sorted(e.pose_dir.iterdir()):
                if _POSE_FILE_RE.search(p.name):
                    check(p, lambda p=p: parse_pose_frame(p.read_bytes()))
        if e.clip_path is not None:
            p = e.clip_path
            check(p, lambda p=p: parse_clip_markers(p.read_bytes()))
        for zp, reader in ((e.face_zip, read_face_zip), (e.pose_zip, read_pose_zip)):
            if zp is not None:
                check(zp, lambda zp=zp, reader=reader: reader(zp))
    return report
