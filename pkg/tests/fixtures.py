"""Hand-rolled document builders for parser tests.

Buffers are packed with ``struct`` (not numpy) so the test fixtures stay
independent of the library's decode path.
"""
import base64
import json
import struct

import numpy as np

N_VERTICES = 1220

LOCATIONS = ("browDownLeft", "browDownRight", "jawOpen")


def pack_f32(values):
    return base64.b64encode(struct.pack(f"<{len(values)}f", *values)).decode("ascii")


def pack_i16(values):
    return base64.b64encode(struct.pack(f"<{len(values)}h", *values)).decode("ascii")


def identity4():
    return [[1.0 if i == j else 0.0 for j in range(4)] for i in range(4)]


def make_vertices(seed=0, n=N_VERTICES):
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.1, 0.1, size=(n, 3)).astype(np.float32)


def vertices_buffer(verts, padding=0.0):
    """Pack (n, 3) vertices in the on-disk 4-stride layout."""
    flat = []
    for row in np.asarray(verts, dtype=np.float32):
        flat.extend(float(v) for v in row)
        flat.append(padding)
    return pack_f32(flat)


def face_entry_doc(timestamp, blend=None, verts=None, seed=0):
    if blend is None:
        blend = [0.1, 0.5, 0.9][: len(LOCATIONS)]
    if verts is None:
        verts = make_vertices(seed)
    tex = np.linspace(0.0, 1.0, 2 * N_VERTICES, dtype=np.float32)
    return {
        "timestamp": timestamp,
        "transform": identity4(),
        "cameraTransform": identity4(),
        "leftEyeTransform": identity4(),
        "rightEyeTransform": identity4(),
        "lookAtPoint": [0.0, 0.0, 0.3],
        "blendShapes": pack_f32(list(blend)),
        "vertices": vertices_buffer(verts, padding=7.5),
        "textureCoordinates": pack_f32([float(v) for v in tex]),
        "triangleIndices": pack_i16([0, 1, 2, 2, 1, 3]),
    }


def chunk_doc(patient=1, collection=2, rating=3, start="2024-05-01T12:00:00.000Z",
              timestamps=(10.0, 10.1), seed=0):
    return {
        "patient": patient,
        "collection": collection,
        "rating": rating,
        "start": start,
        "blendShapeLocations": list(LOCATIONS),
        "data": [
            face_entry_doc(ts, seed=seed + i) for i, ts in enumerate(timestamps)
        ],
    }


def video_info_doc(patient=1, collection=2, rating=3,
                   start="2024-05-01T12:00:00.000Z", timestamps=(10.0, 10.1, 10.2)):
    return {
        "patient": patient,
        "collection": collection,
        "rating": rating,
        "start": start,
        "duration": float(timestamps[-1] - timestamps[0] + 0.1),
        "timestamp": float(timestamps[0]),
        "frameTimestamps": list(timestamps),
    }


def pose_person_doc(person_id=0, face_points=None):
    """face_points: (70, 3) array-like or None for a faceless detection."""
    face = [] if face_points is None else [
        float(v) for row in face_points for v in row
    ]
    return {
        "person_id": [person_id],
        "pose_keypoints_2d": [1.0, 2.0, 0.9] * 25,
        "face_keypoints_2d": face,
    }


def pose_frame_doc(people):
    return {"version": 1.3, "people": people}


def square_face(offset_x=0.0, offset_y=0.0, scale=1.0, conf=0.9):
    """70 confident keypoints on a grid — safely non-degenerate."""
    pts = np.zeros((70, 3))
    xs = np.tile(np.arange(10, dtype=float), 7)
    ys = np.repeat(np.arange(7, dtype=float), 10)
    pts[:, 0] = offset_x + scale * xs
    pts[:, 1] = offset_y + scale * ys
    pts[:, 2] = conf
    return pts


def dump(doc):
    return json.dumps(doc)
