"""Procedural primitive assemblies and the line-delimited dataset format."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DatasetParseError, InvalidInputError, SchemaVersionError
from .geometry import (
    Assembly,
    PointCloud,
    Primitive,
    assembly_surface,
    canonicalize,
    normalize_to_unit_cube,
    num_classes,
    support,
    wrap_angle,
)
from .tokenization import sort_assembly

SCHEMA_VERSION = 1

# Share of cuboids / elliptical cylinders / ellipsoids among annotated primitives.
DEFAULT_CLASS_PROBS = (0.852, 0.118, 0.030)


@dataclass(frozen=True)
class GeneratorConfig:
    count_range: tuple = (1, 8)
    class_probs: tuple = DEFAULT_CLASS_PROBS
    scale_range: tuple = (0.08, 0.45)
    attach_probability: float = 0.75
    jitter: float = 0.1
    axis_aligned_probability: float = 0.8
    uniform_placement: bool = False
    canonicalize: bool = True
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.count_range
        if int(lo) < 1 or int(hi) < int(lo):
            raise InvalidInputError(f"invalid count_range {self.count_range}")
        probs = np.asarray(self.class_probs, dtype=float)
        if probs.shape != (num_classes(),) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"class_probs must be {num_classes()} nonnegative values summing to 1")
        s_lo, s_hi = self.scale_range
        if not 0.0 < s_lo <= s_hi:
            raise InvalidInputError(f"invalid scale_range {self.scale_range}")
        for name in ("attach_probability", "axis_aligned_probability"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1]")
        if self.jitter < 0:
            raise InvalidInputError("jitter must be nonnegative")


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    id: str
    assembly: Assembly
    points: PointCloud | None = None
    labels: np.ndarray | None = field(default=None, repr=False)

    @property
    def point_count(self):
        return 0 if self.points is None else len(self.points)


def _draw_rotation(cfg, rng):
    if rng.random() < cfg.axis_aligned_probability:
        return rng.integers(-2, 2, size=3) * (math.pi / 2)
    return rng.uniform(-math.pi, math.pi, size=3)


def _place(new, placed, cfg, rng):
    if not placed:
        return rng.normal(0.0, cfg.jitter, size=3)
    if cfg.uniform_placement or rng.random() >= cfg.attach_probability:
        return rng.uniform(-1.0, 1.0, size=3)
    anchor = placed[rng.integers(len(placed))]
    axis = rng.integers(3)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    direction = sign * anchor.rotation_matrix[:, axis]
    at_origin = new.replace(translation=(0.0, 0.0, 0.0))
    distance = support(anchor, direction) + support(at_origin, -direction)
    slide = rng.normal(0.0, cfg.jitter, size=3)
    slide -= direction * (slide @ direction)
    return np.asarray(anchor.translation) + direction * distance + slide


def generate_assembly(cfg: GeneratorConfig, rng) -> Assembly:
    """Draw one structure-like assembly, normalised to the unit cube, canonical and sorted."""
    rng = np.random.default_rng(rng)
    lo, hi = cfg.count_range
    n = int(rng.integers(int(lo), int(hi) + 1))
    classes = rng.choice(len(cfg.class_probs), size=n, p=np.asarray(cfg.class_probs))
    prims = []
    for cls in classes:
        scale = rng.uniform(*cfg.scale_range, size=3)
        rotation = wrap_angle(_draw_rotation(cfg, rng))
        new = Primitive(int(cls), scale, rotation, (0.0, 0.0, 0.0))
        prims.append(new.replace(translation=_place(new, prims, cfg, rng)))

    normalized, factor, _ = normalize_to_unit_cube(Assembly(tuple(prims)))
    if any(max(p.scale) > 1.0 for p in normalized):
        # a diagonal rotation can leave a half-extent longer than the box; straighten it
        prims = [
            p.replace(rotation=rng.integers(-2, 2, size=3) * (math.pi / 2)) if max(p.scale) * factor > 1.0 else p
            for p in prims
        ]
        normalized, _, _ = normalize_to_unit_cube(Assembly(tuple(prims)))
    prims = [
        p.replace(
            scale=np.minimum(p.scale, 1.0),
            rotation=wrap_angle(np.asarray(p.rotation)),
            translation=np.clip(p.translation, -1.0, 1.0),
        )
        for p in normalized
    ]
    if cfg.canonicalize:
        prims = [canonicalize(p) for p in prims]
    return sort_assembly(prims)


def build_record(a: Assembly, n_points, rng, record_id="0") -> DatasetRecord:
    """Sample the conditioning cloud of an assembly; labels are kept beside the cloud."""
    cloud = assembly_surface(a, n_points, rng)
    return DatasetRecord(str(record_id), a, PointCloud(cloud.points), cloud.labels)


def record_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def generate_dataset(cfg: GeneratorConfig, count, n_points=2048, start=0, id_prefix="syn"):
    """Records ``start .. start+count-1``; each index has its own stream derived from ``cfg.seed``."""
    records = []
    for index in range(start, start + count):
        rng = record_rng(cfg.seed, index)
        assembly = generate_assembly(cfg, rng)
        records.append(build_record(assembly, n_points, rng, f"{id_prefix}{index:06d}"))
    return records


# ---------------------------------------------------------------------------
# serialisation

def read_points_file(path):
    """Binary little-endian float32 xyz triples (``.bin``), ASCII PLY, ``.npy`` or whitespace text."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return _read_ascii_ply(path)
    if suffix == ".npy":
        pts = np.load(path)
    elif suffix in (".xyz", ".txt", ".csv"):
        pts = np.loadtxt(path, delimiter="," if suffix == ".csv" else None)
    else:
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % 3:
            raise DatasetParseError(f"{path}: float32 count {raw.size} is not a multiple of 3")
        pts = raw.reshape(-1, 3)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DatasetParseError(f"{path}: expected N x 3 points, got shape {pts.shape}")
    return pts


def write_points_file(path, points):
    """Inverse of :func:`read_points_file` for ``.npy``, text and raw binary suffixes."""
    path = Path(path)
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    suffix = path.suffix.lower()
    if suffix == ".npy":
        np.save(path, pts)
    elif suffix in (".xyz", ".txt", ".csv"):
        np.savetxt(path, pts, delimiter="," if suffix == ".csv" else " ")
    else:
        pts.astype("<f4").tofile(path)


def _read_ascii_ply(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise DatasetParseError(f"{path}: missing ply magic")
    n_vertex = None
    props = []
    in_vertex = False
    body = None
    for i, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise DatasetParseError(f"{path}: only ASCII PLY is supported")
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertex = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body = i + 1
            break
    if n_vertex is None or body is None or not {"x", "y", "z"} <= set(props):
        raise DatasetParseError(f"{path}: malformed PLY header")
    cols = [props.index(c) for c in ("x", "y", "z")]
    rows = [lines[body + k].split() for k in range(n_vertex)]
    return np.array([[float(r[c]) for c in cols] for r in rows])


def record_to_json(record: DatasetRecord, points_file=None):
    obj = {"version": SCHEMA_VERSION, "id": record.id, "primitives": record.assembly.to_list()}
    if points_file is not None:
        obj["points_file"] = points_file
    elif record.points is not None:
        obj["points"] = record.points.points.tolist()
    if record.labels is not None:
        obj["labels"] = np.asarray(record.labels).tolist()
    return obj


def write_dataset(records, path, external_points=False):
    """Write one JSON object per line.

    With ``external_points`` the clouds go to float32 ``.bin`` files next to the
    dataset and are referenced by relative path (lossy to float32).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points_dir = path.parent / (path.stem + "_points")
    with open(path, "w") as fh:
        for record in records:
            rel = None
            if external_points and record.points is not None:
                points_dir.mkdir(exist_ok=True)
                target = points_dir / f"{record.id}.bin"
                write_points_file(target, record.points.points)
                rel = os.path.relpath(target, path.parent)
            fh.write(json.dumps(record_to_json(record, rel)) + "\n")


def _as_triple(value, what, line):
    if not isinstance(value, list) or len(value) != 3:
        raise DatasetParseError(f"{what} must be a list of 3 numbers", line)
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise DatasetParseError(f"{what} must be numeric", line) from None


def record_from_json(obj, base_dir=".", line=None) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise DatasetParseError("record must be a JSON object", line)
    version = obj.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"line {line}: schema version {version!r}, expected {SCHEMA_VERSION}")
    if "primitives" not in obj:
        raise DatasetParseError("missing 'primitives'", line)
    try:
        prims = []
        for k, item in enumerate(obj["primitives"]):
            prims.append(
                Primitive(
                    int(item["class"]),
                    _as_triple(item["scale"], f"primitive {k} scale", line),
                    _as_triple(item["rotation"], f"primitive {k} rotation", line),
                    _as_triple(item["translation"], f"primitive {k} translation", line),
                )
            )
    except DatasetParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetParseError(f"bad primitive: {exc}", line) from None
    points = None
    if "points" in obj:
        try:
            points = PointCloud(np.asarray(obj["points"], dtype=float))
        except (ValueError, TypeError) as exc:
            raise DatasetParseError(f"bad points: {exc}", line) from None
    elif "points_file" in obj:
        points = PointCloud(read_points_file(Path(base_dir) / obj["points_file"]))
    labels = None
    if "labels" in obj:
        labels = np.asarray(obj["labels"], dtype=np.int64)
        if points is not None and len(labels) != len(points):
            raise DatasetParseError("labels and points differ in length", line)
    return DatasetRecord(str(obj.get("id", line)), Assembly(tuple(prims)), points, labels)


def iter_dataset(path):
    path = Path(path)
    with open(path) as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise DatasetParseError(f"invalid JSON ({exc.msg})", lineno) from None
            yield record_from_json(obj, path.parent, lineno)


def read_dataset(path):
    return list(iter_dataset(path))


def write_assembly_json(path, assembly: Assembly, record_id="assembly", extra=None):
    obj = {"version": SCHEMA_VERSION, "id": record_id, "primitives": assembly.to_list()}
    if extra:
        obj.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


def read_assembly_json(path) -> DatasetRecord:
    """Read a single-record JSON file (pretty-printed or one line)."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    return record_from_json(obj, path.parent, 1)
