"""Primitive geometry: classes, transforms, symmetries, canonical form and surface sampling.

Conventions used everywhere in the package:

* Euler angles are extrinsic x, then y, then z: ``R = Rz(rz) @ Ry(ry) @ Rx(rx)``.
* Standard primitives live in their local frame: the cuboid is ``[-1, 1]^3``,
  the ellipsoid is the unit sphere and the elliptical cylinder has radius 1,
  half-height 1 and its axis on ``+z``.  Scale is therefore a half-extent.
* A primitive maps a local point ``x`` to ``R @ diag(s) @ x + t``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from .exceptions import (
    DegenerateInputError,
    EmptyAssemblyError,
    InvalidInputError,
    UnknownClassError,
)

TWO_PI = 2.0 * math.pi
CANONICAL_TIE_TOL = 1e-9
GIMBAL_TOL = 1e-7

CUBOID = 0
ELLIPTICAL_CYLINDER = 1
ELLIPSOID = 2


# ---------------------------------------------------------------------------
# standard meshes and bounding functions

def _cuboid_mesh(resolution):
    verts = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))
    # index = 4*ix + 2*iy + iz with i* in {0: -1, 1: +1}
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces.append((a, b, c))
        faces.append((a, c, d))
    return verts, np.array(faces, dtype=np.int64)


def _sphere_mesh(resolution):
    n_lat = max(int(resolution), 2)
    # 4x longitudinal segments keeps chord sag of the implicit value below 1e-3 at 64 bands
    n_lon = max(4 * int(resolution), 3)
    theta = np.linspace(0.0, math.pi, n_lat + 1)[1:-1]
    phi = np.linspace(0.0, TWO_PI, n_lon, endpoint=False)
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    ring = np.stack(
        [st * np.cos(phi)[None, :], st * np.sin(phi)[None, :], np.broadcast_to(ct, (len(theta), n_lon))],
        axis=-1,
    ).reshape(-1, 3)
    north = len(ring)
    south = north + 1
    verts = np.vstack([ring, [[0.0, 0.0, 1.0]], [[0.0, 0.0, -1.0]]])

    def vid(i, j):
        return i * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append((north, vid(0, j), vid(0, j + 1)))
        faces.append((south, vid(n_lat - 2, j + 1), vid(n_lat - 2, j)))
    for i in range(n_lat - 2):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    return verts, np.array(faces, dtype=np.int64)


def _cylinder_mesh(resolution):
    n = max(int(resolution), 3)
    phi = np.linspace(0.0, TWO_PI, n, endpoint=False)
    circle = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    bottom = np.hstack([circle, -np.ones((n, 1))])
    top = np.hstack([circle, np.ones((n, 1))])
    verts = np.vstack([bottom, top, [[0.0, 0.0, -1.0]], [[0.0, 0.0, 1.0]]])
    cb, ct = 2 * n, 2 * n + 1
    faces = []
    for j in range(n):
        k = (j + 1) % n
        faces.append((j, k, n + k))
        faces.append((j, n + k, n + j))
        faces.append((cb, k, j))
        faces.append((ct, n + j, n + k))
    return verts, np.array(faces, dtype=np.int64)


def _cuboid_half_extents(m):
    return np.abs(m).sum(axis=-1)


def _ellipsoid_half_extents(m):
    return np.sqrt((m ** 2).sum(axis=-1))


def _cylinder_half_extents(m):
    return np.sqrt(m[..., 0] ** 2 + m[..., 1] ** 2) + np.abs(m[..., 2])


@dataclass(frozen=True)
class PrimitiveClass:
    """A registered standard primitive.

    ``symmetry_orders`` holds the order of the cyclic rotation symmetry about the
    local x, y and z axes, counting rotations that are equivalent up to an axis
    permutation of the scale.
    """

    id: int
    name: str
    symmetry_orders: tuple
    mesh_fn: Callable = field(repr=False, compare=False)
    half_extents_fn: Callable = field(repr=False, compare=False)


_REGISTRY: dict[int, PrimitiveClass] = {}


def register_class(primitive_class: PrimitiveClass, *, replace=False):
    if primitive_class.id in _REGISTRY and not replace:
        raise InvalidInputError(f"class id {primitive_class.id} already registered")
    _REGISTRY[primitive_class.id] = primitive_class
    symmetry_set.cache_clear()
    symmetry_group.cache_clear()
    _local_mesh.cache_clear()


def get_class(class_label) -> PrimitiveClass:
    try:
        return _REGISTRY[int(class_label)]
    except (KeyError, TypeError, ValueError):
        raise UnknownClassError(f"unknown primitive class {class_label!r}") from None


def registered_classes():
    return [_REGISTRY[k] for k in sorted(_REGISTRY)]


def num_classes():
    return len(_REGISTRY)


def class_name(class_label):
    return get_class(class_label).name


for _cls in (
    PrimitiveClass(CUBOID, "cuboid", (4, 4, 4), _cuboid_mesh, _cuboid_half_extents),
    PrimitiveClass(ELLIPTICAL_CYLINDER, "elliptical_cylinder", (2, 2, 4), _cylinder_mesh, _cylinder_half_extents),
    PrimitiveClass(ELLIPSOID, "ellipsoid", (4, 4, 4), _sphere_mesh, _ellipsoid_half_extents),
):
    _REGISTRY[_cls.id] = _cls
del _cls


# ---------------------------------------------------------------------------
# value types

def wrap_angle(angle):
    """Wrap angles into ``[-pi, pi)``."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + math.pi, TWO_PI) - math.pi
    # mod can round up to exactly 2*pi for inputs just below -pi
    wrapped = np.where(wrapped >= math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def _triple(values, name):
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise InvalidInputError(f"{name} must have 3 components, got shape {np.shape(values)}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite, got {arr.tolist()}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class Primitive:
    """One transformed standard primitive."""

    class_label: int
    scale: tuple
    rotation: tuple
    translation: tuple

    def __post_init__(self):
        get_class(self.class_label)
        object.__setattr__(self, "class_label", int(self.class_label))
        object.__setattr__(self, "scale", _triple(self.scale, "scale"))
        object.__setattr__(self, "rotation", _triple(self.rotation, "rotation"))
        object.__setattr__(self, "translation", _triple(self.translation, "translation"))
        if min(self.scale) <= 0.0:
            raise InvalidInputError(f"scale must be strictly positive, got {self.scale}")

    @property
    def rotation_matrix(self):
        return euler_to_matrix(self.rotation)

    @property
    def linear_map(self):
        """``R @ diag(s)``."""
        return self.rotation_matrix * np.asarray(self.scale)[None, :]

    def invariant_violations(self):
        problems = []
        if any(s > 1.0 for s in self.scale):
            problems.append(f"scale {self.scale} outside (0, 1]")
        if any(r < -math.pi or r >= math.pi for r in self.rotation):
            problems.append(f"rotation {self.rotation} outside [-pi, pi)")
        if any(abs(t) > 1.0 for t in self.translation):
            problems.append(f"translation {self.translation} outside [-1, 1]")
        return problems

    def is_valid(self):
        return not self.invariant_violations()

    def replace(self, **changes):
        values = dict(
            class_label=self.class_label, scale=self.scale, rotation=self.rotation, translation=self.translation
        )
        values.update(changes)
        return Primitive(**values)

    def to_dict(self):
        return {
            "class": self.class_label,
            "scale": list(self.scale),
            "rotation": list(self.rotation),
            "translation": list(self.translation),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["class"]), data["scale"], data["rotation"], data["translation"])


@dataclass(frozen=True)
class Assembly:
    """Ordered collection of primitives approximating one shape."""

    primitives: tuple = ()

    def __post_init__(self):
        prims = tuple(self.primitives)
        for p in prims:
            if not isinstance(p, Primitive):
                raise InvalidInputError(f"expected Primitive, got {type(p).__name__}")
        object.__setattr__(self, "primitives", prims)

    def __len__(self):
        return len(self.primitives)

    def __iter__(self):
        return iter(self.primitives)

    def __getitem__(self, index):
        return self.primitives[index]

    def to_list(self):
        return [p.to_dict() for p in self.primitives]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(Primitive.from_dict(d) for d in items))


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 1:
            raise InvalidInputError(f"point cloud must be N x 3 with N >= 1, got shape {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if len(labels) != len(pts):
                raise InvalidInputError(f"{len(labels)} labels for {len(pts)} points")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class SymmetryElement:
    rotation_matrix: np.ndarray
    scale_permutation: tuple

    def apply_to_scale(self, scale):
        return tuple(float(np.asarray(scale)[i]) for i in self.scale_permutation)


# ---------------------------------------------------------------------------
# rotations

def _axis_rotation(axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    if axis == 0:
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == 1:
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(rotation):
    """Rotation matrix ``Rz @ Ry @ Rx`` for Euler angles ``(rx, ry, rz)``.

    Accepts a single triple or an ``(..., 3)`` array.
    """
    r = np.asarray(rotation, dtype=float)
    if r.shape[-1:] != (3,):
        raise InvalidInputError(f"rotation must have trailing dimension 3, got {r.shape}")
    cx, cy, cz = np.cos(r[..., 0]), np.cos(r[..., 1]), np.cos(r[..., 2])
    sx, sy, sz = np.sin(r[..., 0]), np.sin(r[..., 1]), np.sin(r[..., 2])
    m = np.empty(r.shape[:-1] + (3, 3))
    m[..., 0, 0] = cz * cy
    m[..., 0, 1] = cz * sy * sx - sz * cx
    m[..., 0, 2] = cz * sy * cx + sz * sx
    m[..., 1, 0] = sz * cy
    m[..., 1, 1] = sz * sy * sx + cz * cx
    m[..., 1, 2] = sz * sy * cx - cz * sx
    m[..., 2, 0] = -sy
    m[..., 2, 1] = cy * sx
    m[..., 2, 2] = cy * cx
    return m


def _matrices_to_euler(m):
    """Vectorised inverse of :func:`euler_to_matrix`; no validation."""
    ry = np.arctan2(-m[..., 2, 0], np.hypot(m[..., 0, 0], m[..., 1, 0]))
    rx = np.arctan2(m[..., 2, 1], m[..., 2, 2])
    rz = np.arctan2(m[..., 1, 0], m[..., 0, 0])
    locked = np.abs(np.abs(ry) - math.pi / 2) < GIMBAL_TOL
    if np.any(locked):
        rx = np.where(locked, 0.0, rx)
        rz = np.where(locked, np.arctan2(-m[..., 0, 1], m[..., 1, 1]), rz)
    return wrap_angle(np.stack([rx, ry, rz], axis=-1))


def matrix_to_euler(matrix, tol=1e-6):
    """Euler angles ``(rx, ry, rz)`` with ``ry`` in ``[-pi/2, pi/2]``.

    At gimbal lock the solution with ``rx = 0`` is returned.
    """
    m = np.asarray(matrix, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise InvalidInputError(f"expected a finite 3x3 matrix, got shape {m.shape}")
    if np.abs(m.T @ m - np.eye(3)).max() > tol or abs(np.linalg.det(m) - 1.0) > tol:
        raise InvalidInputError("matrix is not a proper rotation")
    return tuple(float(v) for v in _matrices_to_euler(m))


def transform_points(p: Primitive, local_points):
    local = np.asarray(local_points, dtype=float)
    return local @ p.linear_map.T + np.asarray(p.translation)


def transform_point(p: Primitive, x):
    return transform_points(p, np.asarray(x, dtype=float).reshape(1, 3))[0]


# ---------------------------------------------------------------------------
# symmetries and canonical form

def _scale_permutation(q):
    # diag(s) Q = Q diag(sigma(s))  =>  sigma(s)_j = s_{row of nonzero in column j}
    return tuple(int(np.flatnonzero(q[:, j])[0]) for j in range(3))


def _make_element(q):
    q = np.array(q, dtype=float)
    q.setflags(write=False)
    return SymmetryElement(q, _scale_permutation(q))


@lru_cache(maxsize=None)
def symmetry_set(class_label):
    """Union over the principal axes of the cyclic rotation symmetries of a class."""
    cls = get_class(class_label)
    mats = []
    for axis, order in enumerate(cls.symmetry_orders):
        for k in range(order):
            q = np.rint(_axis_rotation(axis, TWO_PI * k / order))
            if not any(np.array_equal(q, other) for other in mats):
                mats.append(q)
    return tuple(_make_element(q) for q in mats)


@lru_cache(maxsize=None)
def symmetry_group(class_label):
    """Closure of :func:`symmetry_set` under composition.

    The per-axis union is not closed (e.g. it misses 120 degree turns about the
    cube diagonals), and canonicalising over a non-closed set is not idempotent.
    """
    mats = [e.rotation_matrix.copy() for e in symmetry_set(class_label)]
    keys = {m.astype(int).tobytes() for m in mats}
    frontier = list(mats)
    generators = list(mats)
    while frontier:
        new = []
        for a in frontier:
            for b in generators:
                c = np.rint(a @ b)
                key = c.astype(int).tobytes()
                if key not in keys:
                    keys.add(key)
                    new.append(c)
        mats.extend(new)
        frontier = new
    return tuple(_make_element(q) for q in mats)


def _group_arrays(elements):
    qs = np.stack([e.rotation_matrix for e in elements])
    perms = np.array([e.scale_permutation for e in elements])
    return qs, perms


def canonicalize_arrays(class_label, scale, rotation, elements=None, return_index=False):
    """Vectorised canonical form for many primitives of one class.

    ``scale`` and ``rotation`` are ``(P, 3)`` arrays.  Returns the canonical
    ``(scale, rotation)`` arrays (and the selected element indices).
    """
    if elements is None:
        elements = symmetry_group(class_label)
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    rotation = np.atleast_2d(np.asarray(rotation, dtype=float))
    qs, perms = _group_arrays(elements)
    rmats = euler_to_matrix(rotation)  # (P, 3, 3)
    cand = np.einsum("pij,gjk->pgik", rmats, qs)
    cand_rot = _matrices_to_euler(cand)  # (P, G, 3)
    cand_scale = scale[:, perms]  # (P, G, 3)
    l1 = np.abs(cand_rot).sum(axis=-1)
    best = l1.min(axis=1, keepdims=True)
    tied = l1 <= best + CANONICAL_TIE_TOL
    choice = np.argmin(np.where(tied, l1, np.inf), axis=1)
    multi = np.flatnonzero(tied.sum(axis=1) > 1)
    for p in multi:
        options = np.flatnonzero(tied[p])
        choice[p] = min(options, key=lambda g: (tuple(cand_rot[p, g]), tuple(cand_scale[p, g])))
    idx = np.arange(len(scale))
    out = (cand_scale[idx, choice], cand_rot[idx, choice])
    if return_index:
        return out + (choice,)
    return out


def canonicalize(p: Primitive, elements=None, return_element=False):
    """Pick the symmetry-equivalent parameterisation with minimal L1 rotation norm.

    Ties within 1e-9 are broken by the lexicographically smallest
    ``(rotation, scale)``.  Translation is unchanged.
    """
    if elements is None:
        elements = symmetry_group(p.class_label)
    scale, rot, index = canonicalize_arrays(p.class_label, [p.scale], [p.rotation], elements, return_index=True)
    out = Primitive(p.class_label, scale[0], rot[0], p.translation)
    if return_element:
        return out, elements[int(index[0])]
    return out


def is_canonical(p: Primitive, atol=1e-9):
    c = canonicalize(p)
    return bool(
        np.allclose(c.rotation, p.rotation, rtol=0.0, atol=atol)
        and np.allclose(c.scale, p.scale, rtol=0.0, atol=atol)
    )


def canonicalize_assembly(a: Assembly):
    return Assembly(tuple(canonicalize(p) for p in a))


# ---------------------------------------------------------------------------
# meshes and sampling

@lru_cache(maxsize=64)
def _local_mesh(class_label, resolution):
    verts, faces = get_class(class_label).mesh_fn(resolution)
    verts = np.ascontiguousarray(verts, dtype=float)
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return verts, faces


def local_mesh(class_label, resolution=64):
    """Mesh of the standard (untransformed) primitive."""
    if int(resolution) < 1:
        raise InvalidInputError("resolution must be >= 1")
    return _local_mesh(int(class_label), int(resolution))


def primitive_mesh(p: Primitive, resolution=64):
    """Watertight triangle mesh ``(vertices, faces)`` of a transformed primitive."""
    verts, faces = local_mesh(p.class_label, resolution)
    return transform_points(p, verts), faces.copy()


def triangle_areas(vertices, faces):
    tri = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def mesh_area(p: Primitive, resolution=64):
    return float(triangle_areas(*primitive_mesh(p, resolution)).sum())


def _sample_mesh(vertices, faces, n, rng):
    areas = triangle_areas(vertices, faces)
    face_idx = rng.choice(len(faces), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    su = np.sqrt(u)
    tri = vertices[faces[face_idx]]
    return (
        (1.0 - su)[:, None] * tri[:, 0]
        + (su * (1.0 - v))[:, None] * tri[:, 1]
        + (su * v)[:, None] * tri[:, 2]
    )


def sample_surface(p: Primitive, n, rng, resolution=64) -> PointCloud:
    """Uniform area-weighted samples on the transformed primitive surface."""
    if int(n) < 1:
        raise InvalidInputError("sample count must be >= 1")
    rng = np.random.default_rng(rng)
    verts, faces = primitive_mesh(p, resolution)
    return PointCloud(_sample_mesh(verts, faces, int(n), rng))


def largest_remainder(weights, n):
    """Split ``n`` into integer counts proportional to ``weights``."""
    w = np.asarray(weights, dtype=float)
    quota = n * w / w.sum()
    counts = np.floor(quota).astype(np.int64)
    short = int(n - counts.sum())
    if short > 0:
        order = np.argsort(-(quota - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def assembly_surface(a: Assembly, n, rng, resolution=64) -> PointCloud:
    """Area-proportional samples over every primitive; labels are primitive indices."""
    if len(a) == 0:
        raise EmptyAssemblyError("cannot sample an empty assembly")
    if int(n) < 1:
        raise InvalidInputError("sample count must be >= 1")
    rng = np.random.default_rng(rng)
    meshes = [primitive_mesh(p, resolution) for p in a]
    areas = [triangle_areas(v, f).sum() for v, f in meshes]
    counts = largest_remainder(areas, int(n))
    points, labels = [], []
    for index, ((verts, faces), count) in enumerate(zip(meshes, counts)):
        if count == 0:
            continue
        points.append(_sample_mesh(verts, faces, int(count), rng))
        labels.append(np.full(count, index, dtype=np.int64))
    return PointCloud(np.vstack(points), np.concatenate(labels))


def primitive_bounds(p: Primitive):
    """Exact axis-aligned bounding box ``(lo, hi)`` of a transformed primitive."""
    half = get_class(p.class_label).half_extents_fn(p.linear_map)
    t = np.asarray(p.translation)
    return t - half, t + half


def assembly_bounds(a: Assembly):
    if len(a) == 0:
        raise EmptyAssemblyError("empty assembly has no bounds")
    lows, highs = zip(*(primitive_bounds(p) for p in a))
    return np.min(lows, axis=0), np.max(highs, axis=0)


def _normalization(lo, hi):
    extent = (hi - lo).max()
    if not np.isfinite(extent) or extent <= 0.0:
        raise DegenerateInputError("bounding box has zero extent")
    factor = 2.0 / extent
    offset = -factor * (lo + hi) / 2.0
    return factor, offset


def normalize_to_unit_cube(obj):
    """Isotropically map the bounding box center to the origin and the largest extent to [-1, 1].

    Accepts an ``(N, 3)`` array, a :class:`PointCloud` or an :class:`Assembly` and
    returns ``(normalized, factor, offset)`` with ``normalized = factor * x + offset``.
    """
    if isinstance(obj, Assembly):
        factor, offset = _normalization(*assembly_bounds(obj))
        prims = tuple(
            p.replace(
                scale=tuple(factor * np.asarray(p.scale)),
                translation=tuple(factor * np.asarray(p.translation) + offset),
            )
            for p in obj
        )
        return Assembly(prims), factor, offset
    if isinstance(obj, PointCloud):
        normalized, factor, offset = normalize_to_unit_cube(obj.points)
        return PointCloud(normalized, obj.labels), factor, offset
    pts = np.asarray(obj, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise InvalidInputError(f"expected N x 3 points, got shape {pts.shape}")
    factor, offset = _normalization(pts.min(axis=0), pts.max(axis=0))
    return pts * factor + offset, factor, offset


def support(p: Primitive, direction):
    """Support function ``max_x <d, x - t>`` over the primitive surface."""
    d = np.asarray(direction, dtype=float)
    local = p.linear_map.T @ d
    kind = p.class_label
    if kind == CUBOID:
        return float(np.abs(local).sum())
    if kind == ELLIPSOID:
        return float(np.linalg.norm(local))
    if kind == ELLIPTICAL_CYLINDER:
        return float(math.hypot(local[0], local[1]) + abs(local[2]))
    # registered extension classes: use the local mesh hull
    verts, _ = local_mesh(kind, 32)
    return float((verts @ local).max())


def as_assembly(obj) -> Assembly:
    if isinstance(obj, Assembly):
        return obj
    if isinstance(obj, Iterable):
        return Assembly(tuple(obj))
    raise InvalidInputError(f"cannot interpret {type(obj).__name__} as an Assembly")


def farthest_point_sample(points, n, start=0):
    """Indices of ``n`` points chosen greedily to maximise the minimum pairwise distance.

    When ``n >= len(points)`` every index is returned in order.
    """
    pts = np.asarray(points, dtype=float)
    total = len(pts)
    if n >= total:
        return np.arange(total)
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = int(start) % total
    dist = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for i in range(1, n):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.sum((pts - pts[chosen[i]]) ** 2, axis=1))
    return chosen


__all__: Sequence[str] = [
    "CUBOID",
    "ELLIPTICAL_CYLINDER",
    "ELLIPSOID",
    "PrimitiveClass",
    "Primitive",
    "Assembly",
    "PointCloud",
    "SymmetryElement",
    "register_class",
    "get_class",
    "registered_classes",
    "num_classes",
    "wrap_angle",
    "euler_to_matrix",
    "matrix_to_euler",
    "transform_point",
    "transform_points",
    "symmetry_set",
    "symmetry_group",
    "canonicalize",
    "canonicalize_arrays",
    "is_canonical",
    "primitive_mesh",
    "local_mesh",
    "sample_surface",
    "assembly_surface",
    "normalize_to_unit_cube",
    "farthest_point_sample",
]
