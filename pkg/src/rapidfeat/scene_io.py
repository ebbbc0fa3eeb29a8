"""Scan ingestion, synthetic scene generation, and feature persistence.

On-disk formats:

* KITTI scan (.bin): packed little-endian float32, four per point, in the
  order x, y, z, remission.
* KITTI label (.label): packed little-endian uint32 per point; the low 16
  bits are the semantic class, the high 16 bits (instance id) are discarded.
* Feature/weight container (.rapd): magic "RAPD", uint32 version, uint32
  header length, UTF-8 JSON header, then a raw little-endian payload of the
  arrays the header describes. One container format serves RAPiD matrices,
  the scan-level pointwise record, and named weight tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .cloud import PointCloud, SensorGeometry
from .errors import (
    EmptySceneError,
    FormatError,
    LabelMismatchError,
    MalformedScanError,
)
from .geometry import RigidTransform
from .partition import PointwiseFeatureSet, cylindrical_bins
from .rapid import RapidMatrix, ReflectivityScale

MAGIC = b"RAPD"
CONTAINER_VERSION = 1

PathLike = Union[str, Path]


# ---------------------------------------------------------------------------
# KITTI formats
# ---------------------------------------------------------------------------


def load_kitti_scan(path: PathLike) -> PointCloud:
    """Decode a packed float32 scan; point order is preserved.

    Errors on a file size that is not a multiple of 16 bytes and on
    non-finite values (reporting the offending point indices).
    """
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise MalformedScanError(
            f"{path}: size {len(raw)} is not a multiple of 16 bytes"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.isfinite(data).all(axis=1)
    if not finite.all():
        bad = np.flatnonzero(~finite)
        raise MalformedScanError(
            f"{path}: non-finite values at point indices {bad[:8].tolist()}"
        )
    return PointCloud(points=data[:, :3], remission=data[:, 3])


def save_kitti_scan(cloud: PointCloud, path: PathLike) -> None:
    data = np.column_stack([cloud.points, cloud.remission]).astype("<f4")
    Path(path).write_bytes(data.tobytes())


def load_label_array(path: PathLike) -> np.ndarray:
    """Semantic class ids from a label file (low 16 bits of each uint32)."""
    raw = Path(path).read_bytes()
    if len(raw) % 4 != 0:
        raise MalformedScanError(f"{path}: size {len(raw)} is not a multiple of 4")
    values = np.frombuffer(raw, dtype="<u4")
    return (values & 0xFFFF).astype(np.int32)


def load_kitti_labels(path: PathLike, cloud: PointCloud) -> PointCloud:
    """Attach semantic labels to a cloud; errors on a count mismatch."""
    labels = load_label_array(path)
    if len(labels) != len(cloud):
        raise LabelMismatchError(
            f"{path}: {len(labels)} labels for a {len(cloud)}-point cloud"
        )
    return cloud.with_labels(labels)


def save_kitti_labels(labels: np.ndarray, path: PathLike) -> None:
    Path(path).write_bytes(np.asarray(labels).astype("<u4").tobytes())


def load_csv_cloud(path: PathLike) -> PointCloud:
    """CSV converter route for clouds not in the KITTI binary layout.

    Expects a header line naming at least x, y, z, remission; optional ring
    and label columns are picked up by name.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = [c.strip().lower() for c in fh.readline().split(",")]
    required = ("x", "y", "z", "remission")
    if any(c not in header for c in required):
        raise MalformedScanError(f"{path}: header must name x, y, z, remission")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise MalformedScanError(f"{path}: row width does not match the header")
    col = {name: data[:, i] for i, name in enumerate(header)}
    return PointCloud(
        points=np.column_stack([col["x"], col["y"], col["z"]]),
        remission=col["remission"],
        ring=col["ring"].astype(np.int32) if "ring" in col else None,
        label=col["label"].astype(np.int32) if "label" in col else None,
    )


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanePrimitive:
    """Rectangular patch origin + a*u_axis + b*v_axis, a,b uniform."""

    origin: tuple[float, float, float]
    u_axis: tuple[float, float, float]
    v_axis: tuple[float, float, float]
    extent_u: float
    extent_v: float
    count: int
    class_id: int
    reflectivity: float

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        a = rng.uniform(-self.extent_u, self.extent_u, self.count)
        b = rng.uniform(-self.extent_v, self.extent_v, self.count)
        origin = np.asarray(self.origin, dtype=np.float64)
        return (
            origin
            + a[:, None] * np.asarray(self.u_axis, dtype=np.float64)
            + b[:, None] * np.asarray(self.v_axis, dtype=np.float64)
        )


@dataclass(frozen=True)
class BoxPrimitive:
    """Points on the surface of an axis-aligned box, area-weighted per face."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    count: int
    class_id: int
    reflectivity: float

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        sx, sy, sz = self.size
        areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
        faces = rng.choice(6, size=self.count, p=areas / areas.sum())
        a = rng.uniform(-0.5, 0.5, self.count)
        b = rng.uniform(-0.5, 0.5, self.count)
        pts = np.empty((self.count, 3), dtype=np.float64)
        half = np.array([sx, sy, sz]) / 2.0
        for f in range(6):
            m = faces == f
            axis = f // 2
            sign = 1.0 if f % 2 == 0 else -1.0
            others = [i for i in range(3) if i != axis]
            pts[m, axis] = sign * half[axis]
            pts[m, others[0]] = a[m] * self.size[others[0]]
            pts[m, others[1]] = b[m] * self.size[others[1]]
        return pts + np.asarray(self.center, dtype=np.float64)


@dataclass(frozen=True)
class CylinderPrimitive:
    """Points on the lateral surface of a vertical cylinder."""

    center: tuple[float, float, float]
    radius: float
    height: float
    count: int
    class_id: int
    reflectivity: float

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(0.0, 2.0 * np.pi, self.count)
        z = rng.uniform(-self.height / 2.0, self.height / 2.0, self.count)
        pts = np.stack(
            [self.radius * np.cos(theta), self.radius * np.sin(theta), z], axis=1
        )
        return pts + np.asarray(self.center, dtype=np.float64)


Primitive = Union[PlanePrimitive, BoxPrimitive, CylinderPrimitive]


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Deterministic scene: the seed fully determines the output cloud."""

    primitives: tuple[Primitive, ...]
    geometry: SensorGeometry
    sensor_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def synthesize_scene(spec: SyntheticSceneSpec) -> PointCloud:
    """Sample every primitive in order, express coordinates in the sensor
    frame, add measurement noise, and assign ring ids by cylindrical
    quantization clipped to [0, B)."""
    if not spec.primitives:
        raise EmptySceneError("scene needs at least one primitive")
    rng = np.random.default_rng(spec.seed)
    chunks, labels, refl = [], [], []
    for prim in spec.primitives:
        pts = prim.sample(rng)
        chunks.append(pts)
        labels.append(np.full(len(pts), prim.class_id, dtype=np.int32))
        refl.append(np.full(len(pts), prim.reflectivity, dtype=np.float64))
    world = np.concatenate(chunks, axis=0)
    pose = spec.sensor_pose
    local = (world - pose.translation) @ pose.rotation
    if spec.noise_sigma > 0:
        local = local + rng.normal(0.0, spec.noise_sigma, local.shape)
    _, phi_bin = cylindrical_bins(local, spec.geometry)
    ring = np.clip(phi_bin, 0, spec.geometry.beam_count - 1).astype(np.int32)
    return PointCloud(
        points=local,
        remission=np.concatenate(refl),
        ring=ring,
        label=np.concatenate(labels),
    )


_PRIMITIVE_TYPES = {
    "plane": PlanePrimitive,
    "box": BoxPrimitive,
    "cylinder": CylinderPrimitive,
}


def scene_spec_from_dict(d: dict, geometry: SensorGeometry) -> SyntheticSceneSpec:
    """Build a scene spec from a config-file dictionary."""
    prims = []
    for p in d.get("primitives", []):
        kind = p.get("type")
        if kind not in _PRIMITIVE_TYPES:
            raise FormatError(f"unknown primitive type {kind!r}")
        kwargs = {k: v for k, v in p.items() if k != "type"}
        for key in ("origin", "u_axis", "v_axis", "center", "size"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        prims.append(_PRIMITIVE_TYPES[kind](**kwargs))
    pose = d.get("pose")
    if pose is None:
        transform = RigidTransform.identity()
    else:
        transform = RigidTransform(
            rotation=np.asarray(pose.get("rotation", np.eye(3).tolist())),
            translation=np.asarray(pose.get("translation", [0.0, 0.0, 0.0])),
        )
    return SyntheticSceneSpec(
        primitives=tuple(prims),
        geometry=geometry,
        sensor_pose=transform,
        noise_sigma=float(d.get("noise_sigma", 0.0)),
        seed=int(d.get("seed", 0)),
    )


# ---------------------------------------------------------------------------
# feature / weight container
# ---------------------------------------------------------------------------


class _PayloadBuilder:
    def __init__(self) -> None:
        self.chunks: list[bytes] = []
        self.offset = 0

    def add(self, array: np.ndarray, dtype: str) -> dict:
        data = np.ascontiguousarray(array, dtype=np.dtype(dtype)).tobytes()
        desc = {
            "dtype": dtype,
            "shape": list(np.asarray(array).shape),
            "offset": self.offset,
        }
        self.chunks.append(data)
        self.offset += len(data)
        return desc


def _write_container(path: PathLike, header: dict, payload: bytes) -> None:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, len(head)))
        fh.write(head)
        fh.write(payload)


def _read_container(path: PathLike) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a RAPD container")
    version, head_len = struct.unpack("<II", raw[4:12])
    if version != CONTAINER_VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if len(raw) < 12 + head_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    return header, raw[12 + head_len :]


def _read_array(payload: bytes, desc: dict) -> np.ndarray:
    dtype = np.dtype(desc["dtype"])
    shape = tuple(desc["shape"])
    nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
    start = desc["offset"]
    if start + nbytes > len(payload):
        raise FormatError("truncated payload")
    return np.frombuffer(payload[start : start + nbytes], dtype=dtype).reshape(shape)


def _matrix_record(builder: _PayloadBuilder, mat: RapidMatrix) -> dict:
    return {
        "type": "matrix",
        "roi_id": mat.roi_id,
        "k": mat.k,
        "scale": {
            "r_min": mat.scale.r_min,
            "r_max": mat.scale.r_max,
            "d_min": mat.scale.d_min,
            "d_max": mat.scale.d_max,
        },
        "arrays": {
            "values": builder.add(mat.values, "<f4"),
            "anchors": builder.add(mat.anchors, "<i8"),
        },
    }


def _matrix_from_record(rec: dict, payload: bytes) -> RapidMatrix:
    s = rec["scale"]
    return RapidMatrix(
        values=_read_array(payload, rec["arrays"]["values"]).astype(np.float64),
        roi_id=rec["roi_id"],
        k=int(rec["k"]),
        scale=ReflectivityScale(s["r_min"], s["r_max"], s["d_min"], s["d_max"]),
        anchors=_read_array(payload, rec["arrays"]["anchors"]).astype(np.int64),
    )


def save_features(matrices: Sequence[RapidMatrix], path: PathLike) -> None:
    """Persist RAPiD matrices; the round trip is lossless at float32."""
    builder = _PayloadBuilder()
    records = [_matrix_record(builder, m) for m in matrices]
    header = {"kind": "rapid-features", "meta": {}, "records": records}
    _write_container(path, header, b"".join(builder.chunks))


@dataclass(frozen=True)
class FeatureFile:
    """Decoded feature container: per-region matrices plus the optional
    scan-level pointwise record written by the extract command."""

    matrices: tuple[RapidMatrix, ...]
    pointwise: Optional[PointwiseFeatureSet]
    meta: dict


def save_feature_file(
    path: PathLike,
    matrices: Sequence[RapidMatrix],
    pointwise: Optional[PointwiseFeatureSet] = None,
    meta: Optional[dict] = None,
) -> None:
    builder = _PayloadBuilder()
    records = [_matrix_record(builder, m) for m in matrices]
    if pointwise is not None:
        records.append(
            {
                "type": "pointwise",
                "arrays": {
                    "values": builder.add(pointwise.values, "<f4"),
                    "roi": builder.add(pointwise.roi, "<i4"),
                    "valid_width": builder.add(pointwise.valid_width, "<i4"),
                },
            }
        )
    header = {"kind": "rapid-features", "meta": meta or {}, "records": records}
    _write_container(path, header, b"".join(builder.chunks))


def load_feature_file(path: PathLike) -> FeatureFile:
    header, payload = _read_container(path)
    if header.get("kind") != "rapid-features":
        raise FormatError(f"{path}: container holds {header.get('kind')!r}, not features")
    matrices = []
    pointwise = None
    for rec in header.get("records", []):
        if rec["type"] == "matrix":
            matrices.append(_matrix_from_record(rec, payload))
        elif rec["type"] == "pointwise":
            pointwise = PointwiseFeatureSet(
                values=_read_array(payload, rec["arrays"]["values"]).astype(np.float64),
                roi=_read_array(payload, rec["arrays"]["roi"]).astype(np.int32),
                valid_width=_read_array(payload, rec["arrays"]["valid_width"]).astype(
                    np.int32
                ),
            )
        else:
            raise FormatError(f"{path}: unknown record type {rec['type']!r}")
    if pointwise is not None:
        pointwise = PointwiseFeatureSet(
            values=pointwise.values,
            roi=pointwise.roi,
            valid_width=pointwise.valid_width,
            matrices=tuple(matrices),
        )
    return FeatureFile(
        matrices=tuple(matrices), pointwise=pointwise, meta=header.get("meta", {})
    )


def load_features(path: PathLike) -> list[RapidMatrix]:
    """Matrices of a feature container (pointwise records are skipped)."""
    return list(load_feature_file(path).matrices)


def save_tensors(path: PathLike, tensors: dict[str, np.ndarray], meta: dict) -> None:
    """Named float64 tensor records (weight files)."""
    builder = _PayloadBuilder()
    records = [
        {"type": "tensor", "name": name, "arrays": {"data": builder.add(t, "<f8")}}
        for name, t in sorted(tensors.items())
    ]
    header = {"kind": "weights", "meta": meta, "records": records}
    _write_container(path, header, b"".join(builder.chunks))


def load_tensors(path: PathLike) -> tuple[dict[str, np.ndarray], dict]:
    header, payload = _read_container(path)
    if header.get("kind") != "weights":
        raise FormatError(f"{path}: container holds {header.get('kind')!r}, not weights")
    tensors = {
        rec["name"]: _read_array(payload, rec["arrays"]["data"]).astype(np.float64)
        for rec in header.get("records", [])
    }
    return tensors, header.get("meta", {})


def write_pgm(values01: np.ndarray, path: PathLike) -> None:
    """Binary PGM (P5) of a matrix with values in [0, 1] mapped to 0..255.

    Image width is the column count and height the row count, so a u x k
    matrix becomes a k x u image with row order preserved.
    """
    v = np.asarray(values01, dtype=np.float64)
    gray = np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
