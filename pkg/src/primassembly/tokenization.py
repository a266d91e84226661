"""Discretisation of primitive attributes and sequence framing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolationError, InvalidInputError
from .geometry import Assembly, PointCloud, Primitive, get_class, is_canonical

logger = logging.getLogger(__name__)

ATTRIBUTE_KINDS = ("translation", "rotation", "scale")

# column layout of a token row, following the cascade order
CLASS_COL = 0
TRANSLATION_COLS = slice(1, 4)
ROTATION_COLS = slice(4, 7)
SCALE_COLS = slice(7, 10)
TOKEN_WIDTH = 10


@dataclass(frozen=True)
class Discretizer:
    rotation_levels: int = 180
    scale_levels: int = 128
    translation_levels: int = 128

    def __post_init__(self):
        for kind in ATTRIBUTE_KINDS:
            levels = self.levels(kind)
            if int(levels) != levels or levels < 1:
                raise InvalidInputError(f"{kind} levels must be a positive integer, got {levels}")

    def levels(self, kind):
        if kind == "rotation":
            return self.rotation_levels
        if kind == "scale":
            return self.scale_levels
        if kind == "translation":
            return self.translation_levels
        raise InvalidInputError(f"unknown attribute kind {kind!r}")

    @staticmethod
    def value_range(kind):
        if kind == "rotation":
            return -math.pi, math.pi
        if kind == "scale":
            return 0.0, 1.0
        if kind == "translation":
            return -1.0, 1.0
        raise InvalidInputError(f"unknown attribute kind {kind!r}")

    def bin_width(self, kind):
        lo, hi = self.value_range(kind)
        return (hi - lo) / self.levels(kind)

    def bin_centers(self, kind):
        lo, _ = self.value_range(kind)
        return lo + (np.arange(self.levels(kind)) + 0.5) * self.bin_width(kind)

    def to_dict(self):
        return {
            "rotation_levels": self.rotation_levels,
            "scale_levels": self.scale_levels,
            "translation_levels": self.translation_levels,
        }


DEFAULT_DISCRETIZER = Discretizer()


def quantize(value, kind, discretizer=DEFAULT_DISCRETIZER, return_clamped=False):
    """Uniform bin index ``floor((v - lo) / (hi - lo) * L)`` clamped to ``[0, L-1]``.

    Values outside the attribute range are clamped first and counted; a warning is
    logged whenever that happens.
    """
    v = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"cannot quantize non-finite {kind} value")
    lo, hi = discretizer.value_range(kind)
    levels = discretizer.levels(kind)
    outside = (v < lo) | (v > hi)
    n_clamped = int(np.count_nonzero(outside))
    if n_clamped:
        logger.warning("clamped %d %s value(s) into [%g, %g]", n_clamped, kind, lo, hi)
        v = np.clip(v, lo, hi)
    bins = np.floor((v - lo) / (hi - lo) * levels).astype(np.int64)
    bins = np.clip(bins, 0, levels - 1)
    if bins.ndim == 0:
        bins = int(bins)
    if return_clamped:
        return bins, n_clamped
    return bins


def dequantize(bins, kind, discretizer=DEFAULT_DISCRETIZER):
    """Bin center ``lo + (b + 0.5) * (hi - lo) / L``."""
    b = np.asarray(bins)
    levels = discretizer.levels(kind)
    if b.dtype.kind not in "iu":
        if not np.all(np.isfinite(b)) or not np.all(np.asarray(b, dtype=float) == np.floor(b)):
            raise InvalidInputError(f"{kind} bins must be integers")
        b = b.astype(np.int64)
    if np.any(b < 0) or np.any(b >= levels):
        raise InvalidInputError(f"{kind} bin out of range [0, {levels})")
    lo, _ = discretizer.value_range(kind)
    out = lo + (b + 0.5) * discretizer.bin_width(kind)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class TokenizedPrimitive:
    class_index: int
    scale_bins: tuple
    rotation_bins: tuple
    translation_bins: tuple

    def as_row(self):
        return np.array(
            [self.class_index, *self.translation_bins, *self.rotation_bins, *self.scale_bins], dtype=np.int64
        )

    @classmethod
    def from_row(cls, row):
        row = [int(v) for v in np.asarray(row).reshape(-1)]
        if len(row) != TOKEN_WIDTH:
            raise InvalidInputError(f"token row must have {TOKEN_WIDTH} entries, got {len(row)}")
        return cls(row[CLASS_COL], tuple(row[SCALE_COLS]), tuple(row[ROTATION_COLS]), tuple(row[TRANSLATION_COLS]))

    def validate(self, discretizer=DEFAULT_DISCRETIZER):
        get_class(self.class_index)
        for kind, bins in (
            ("scale", self.scale_bins),
            ("rotation", self.rotation_bins),
            ("translation", self.translation_bins),
        ):
            levels = discretizer.levels(kind)
            if len(bins) != 3 or any(b < 0 or b >= levels for b in bins):
                raise InvalidInputError(f"{kind} bins {bins} out of range [0, {levels})")


@dataclass(frozen=True, eq=False)
class SequenceSample:
    tokens: tuple
    terminated: bool = True
    condition: PointCloud | None = None
    sample_id: str | None = None

    def __len__(self):
        return len(self.tokens)

    def as_array(self):
        if not self.tokens:
            return np.zeros((0, TOKEN_WIDTH), dtype=np.int64)
        return np.stack([t.as_row() for t in self.tokens])


def _centroid_key(p: Primitive):
    x, y, z = p.translation
    return (z, y, x)


def sort_assembly(a) -> Assembly:
    """Stable sort by centroid, z first, then y, then x, lowest first."""
    return Assembly(tuple(sorted(a, key=_centroid_key)))


def is_sorted(a):
    keys = [_centroid_key(p) for p in a]
    return all(k0 <= k1 for k0, k1 in zip(keys, keys[1:]))


def tokenize_primitive(p: Primitive, discretizer=DEFAULT_DISCRETIZER):
    return TokenizedPrimitive(
        p.class_label,
        tuple(int(b) for b in quantize(p.scale, "scale", discretizer)),
        tuple(int(b) for b in quantize(p.rotation, "rotation", discretizer)),
        tuple(int(b) for b in quantize(p.translation, "translation", discretizer)),
    )


def detokenize_primitive(tp: TokenizedPrimitive, discretizer=DEFAULT_DISCRETIZER):
    get_class(tp.class_index)
    return Primitive(
        tp.class_index,
        dequantize(np.asarray(tp.scale_bins), "scale", discretizer),
        dequantize(np.asarray(tp.rotation_bins), "rotation", discretizer),
        dequantize(np.asarray(tp.translation_bins), "translation", discretizer),
    )


def encode_assembly(
    a,
    discretizer=DEFAULT_DISCRETIZER,
    *,
    condition=None,
    sample_id=None,
    require_canonical=True,
) -> SequenceSample:
    """Quantise a canonical, z-y-x sorted assembly into a terminated token sequence.

    ``require_canonical=False`` exists for the no-canonicalisation ablation only.
    """
    prims = tuple(a)
    if require_canonical:
        for index, p in enumerate(prims):
            if not is_canonical(p):
                raise ContractViolationError(f"primitive {index} is not in canonical form")
    if not is_sorted(prims):
        raise ContractViolationError("assembly is not sorted in z-y-x centroid order")
    tokens = tuple(tokenize_primitive(p, discretizer) for p in prims)
    return SequenceSample(tokens, True, condition, sample_id)


def decode_sequence(sample, discretizer=DEFAULT_DISCRETIZER) -> Assembly:
    """Dequantise every token; no canonicalisation is re-applied."""
    tokens = sample.tokens if isinstance(sample, SequenceSample) else tuple(sample)
    return Assembly(tuple(detokenize_primitive(t, discretizer) for t in tokens))
