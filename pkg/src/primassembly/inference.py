"""Autoregressive generation of primitive assemblies from a point cloud."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import ConfigError, InsufficientInputError, InvalidInputError
from .geometry import Assembly, canonicalize
from .model import MIN_CONDITION_POINTS, PrimitiveTransformer
from .tokenization import (
    CLASS_COL,
    DEFAULT_DISCRETIZER,
    ROTATION_COLS,
    SCALE_COLS,
    TOKEN_WIDTH,
    TRANSLATION_COLS,
    SequenceSample,
    TokenizedPrimitive,
    decode_sequence,
    sort_assembly,
)
from .training import condition_array

MODES = ("greedy", "temperature", "top-k")


@dataclass
class SamplingConfig:
    mode: str = "greedy"
    temperature: float = 1.0
    k: int = 10
    eos_threshold: float = 0.5
    max_len: int = 64
    seed: int = 0
    recanonicalize: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"sampling.mode must be one of {MODES}, got {self.mode!r}")
        if not self.temperature > 0:
            raise ConfigError("sampling.temperature must be positive")
        if int(self.k) < 1:
            raise ConfigError("sampling.k must be >= 1")
        if not 0.0 < self.eos_threshold < 1.0:
            raise ConfigError("sampling.eos_threshold must lie in (0, 1)")
        if int(self.max_len) < 0:
            raise ConfigError("sampling.max_len must be >= 0")


@dataclass
class GenerationResult:
    assembly: Assembly
    tokens: np.ndarray
    eos_probabilities: list = field(default_factory=list)
    terminated_by_eos: bool = False
    terminated_by_limit: bool = False

    @property
    def sequence(self):
        return SequenceSample(tuple(TokenizedPrimitive.from_row(r) for r in self.tokens), self.terminated_by_eos)


def _condition_tensor(model, cloud):
    # same fixed-size subsample (or repeat-pad) the training loop feeds the encoder
    pts = np.asarray(cloud.points if hasattr(cloud, "points") else cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"expected N x 3 points, got shape {pts.shape}")
    if len(pts) < MIN_CONDITION_POINTS:
        raise InsufficientInputError(f"need at least {MIN_CONDITION_POINTS} points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("point cloud contains non-finite coordinates")
    pts = condition_array(pts, model.cfg.condition_points)
    return torch.as_tensor(pts, dtype=model.sos.dtype, device=model.device)


def _pick(logits, sc: SamplingConfig, generator):
    """Choose an index along the last axis for every leading position."""
    if sc.mode == "greedy":
        return logits.argmax(dim=-1)
    scaled = logits / sc.temperature
    if sc.mode == "top-k":
        k = min(int(sc.k), scaled.shape[-1])
        kth = torch.topk(scaled, k, dim=-1).values[..., -1:]
        scaled = scaled.masked_fill(scaled < kth, float("-inf"))
    probs = torch.softmax(scaled, dim=-1)
    flat = probs.reshape(-1, probs.shape[-1])
    return torch.multinomial(flat, 1, generator=generator).reshape(probs.shape[:-1])


@torch.no_grad()
def generate_batch(clouds, model: PrimitiveTransformer, sc: SamplingConfig | None = None,
                   discretizer=DEFAULT_DISCRETIZER, prefixes=None):
    """Generate one assembly per cloud.

    Each step runs the backbone over the whole prefix, reads the EOS probability of
    the newest feature, and otherwise samples class, translation, rotation and scale
    in cascade order, feeding each choice to the next head.  ``prefixes`` optionally
    forces the first primitives (token rows) of each sequence.
    """
    sc = sc or SamplingConfig()
    if not model.cfg.matches(discretizer):
        raise ConfigError("model level counts do not match the discretizer")
    model.eval()
    clouds = list(clouds)
    b = len(clouds)
    generator = torch.Generator().manual_seed(int(sc.seed))
    points = torch.stack([_condition_tensor(model, c) for c in clouds])
    condition = model.encode_condition(points)
    prefixes = prefixes or [np.zeros((0, TOKEN_WIDTH), dtype=np.int64)] * b
    rows = [list(np.asarray(p, dtype=np.int64).reshape(-1, TOKEN_WIDTH)) for p in prefixes]
    eos_probs = [[] for _ in range(b)]
    by_eos = [False] * b
    active = [len(r) < sc.max_len for r in rows]
    while any(active):
        m = max(len(r) for r in rows)
        tokens = np.zeros((b, m, TOKEN_WIDTH), dtype=np.int64)
        for i, r in enumerate(rows):
            if r:
                tokens[i, : len(r)] = np.stack(r)
        h = model.embed_primitive(torch.as_tensor(tokens))
        feats = model.forward_sequence(condition, h)
        f = feats[torch.arange(b), torch.as_tensor([len(r) for r in rows])]
        out = model.decode_attributes(f)
        p_eos = torch.sigmoid(out["eos"])
        c = _pick(out["class"], sc, generator)
        t = _pick(model.decode_attributes(f, {"class": c})["translation"], sc, generator)
        r_ = _pick(model.decode_attributes(f, {"class": c, "translation": t})["rotation"], sc, generator)
        s = _pick(
            model.decode_attributes(f, {"class": c, "translation": t, "rotation": r_})["scale"], sc, generator
        )
        for i in range(b):
            if not active[i]:
                continue
            eos_probs[i].append(float(p_eos[i]))
            if p_eos[i] >= sc.eos_threshold:
                by_eos[i] = True
                active[i] = False
                continue
            row = np.zeros(TOKEN_WIDTH, dtype=np.int64)
            row[CLASS_COL] = int(c[i])
            row[TRANSLATION_COLS] = t[i].numpy()
            row[ROTATION_COLS] = r_[i].numpy()
            row[SCALE_COLS] = s[i].numpy()
            rows[i].append(row)
            if len(rows[i]) >= sc.max_len:
                active[i] = False
    results = []
    for i in range(b):
        arr = np.stack(rows[i]) if rows[i] else np.zeros((0, TOKEN_WIDTH), dtype=np.int64)
        assembly = decode_sequence([TokenizedPrimitive.from_row(r) for r in arr], discretizer)
        if sc.recanonicalize:
            assembly = sort_assembly(canonicalize(p) for p in assembly)
        results.append(GenerationResult(assembly, arr, eos_probs[i], by_eos[i], not by_eos[i]))
    return results


def generate(points, model: PrimitiveTransformer, sc: SamplingConfig | None = None,
             discretizer=DEFAULT_DISCRETIZER, prefix=None) -> GenerationResult:
    prefixes = None if prefix is None else [prefix]
    return generate_batch([points], model, sc, discretizer, prefixes)[0]


@torch.no_grad()
def step_logits(points, model: PrimitiveTransformer, tokens):
    """Class/EOS logits at every step position of a forced token sequence (diagnostics)."""
    model.eval()
    cond = model.encode_condition(_condition_tensor(model, points).unsqueeze(0))
    arr = torch.as_tensor(np.asarray(tokens, dtype=np.int64).reshape(1, -1, TOKEN_WIDTH))
    feats = model.forward_sequence(cond, model.embed_primitive(arr))
    return model.decode_attributes(feats[0])
