"""Shape-conditioned autoregressive primitive transformer."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import (
    ConfigError,
    ContractViolationError,
    InsufficientInputError,
    InvalidInputError,
    SequenceLengthError,
)
from .geometry import farthest_point_sample, num_classes
from .tokenization import CLASS_COL, ROTATION_COLS, SCALE_COLS, TOKEN_WIDTH, TRANSLATION_COLS, Discretizer

CHECKPOINT_FORMAT = "primassembly-checkpoint"
CHECKPOINT_VERSION = 1
MIN_CONDITION_POINTS = 4


@dataclass
class ModelConfig:
    layers: int = 4
    hidden_size: int = 192
    attention_heads: int = 4
    condition_tokens: int = 64
    condition_points: int = 1024
    num_classes: int = 3
    class_embed_dim: int = 48
    attribute_embed_dim: int = 16
    rotation_levels: int = 180
    scale_levels: int = 128
    translation_levels: int = 128
    max_sequence: int = 64
    ffn_multiplier: int = 4
    fourier_frequencies: int = 8
    encoder_layers: int = 1
    cascade: bool = True
    condition_bidirectional: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        ints = (
            "layers", "hidden_size", "attention_heads", "condition_tokens", "condition_points",
            "num_classes", "class_embed_dim", "attribute_embed_dim", "rotation_levels",
            "scale_levels", "translation_levels", "max_sequence", "ffn_multiplier", "encoder_layers",
        )
        for name in ints:
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}")
        if self.fourier_frequencies < 0:
            raise ConfigError("model.fourier_frequencies must be >= 0")
        if self.hidden_size % self.attention_heads:
            raise ConfigError(
                f"model.hidden_size ({self.hidden_size}) must be divisible by attention_heads ({self.attention_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout must lie in [0, 1)")

    @classmethod
    def full_scale(cls, **overrides):
        """12 layers, hidden 768, 12 heads."""
        return cls(**{"layers": 12, "hidden_size": 768, "attention_heads": 12, **overrides})

    @property
    def primitive_embed_dim(self):
        return self.class_embed_dim + 9 * self.attribute_embed_dim

    def levels(self, kind):
        return getattr(self, f"{kind}_levels")

    def matches(self, discretizer: Discretizer):
        return all(self.levels(k) == discretizer.levels(k) for k in ("rotation", "scale", "translation"))

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


def _mlp(in_dim, hidden, out_dim):
    return nn.Sequential(nn.Linear(in_dim, hidden), nn.GELU(), nn.Linear(hidden, out_dim))


def fourier_features(xyz, frequencies):
    if frequencies == 0:
        return xyz
    scales = (2.0 ** torch.arange(frequencies, dtype=xyz.dtype, device=xyz.device)) * math.pi
    angles = xyz[..., None] * scales  # (..., 3, F)
    angles = angles.flatten(-2)
    return torch.cat([xyz, torch.sin(angles), torch.cos(angles)], dim=-1)


class PointConditionEncoder(nn.Module):
    """Point set to ``K`` condition tokens: pointwise lift, then learned-query cross-attention."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_size
        in_dim = 3 + 6 * cfg.fourier_frequencies
        self.lift = _mlp(in_dim, h, h)
        self.queries = nn.Parameter(torch.randn(cfg.condition_tokens, h) * 0.02)
        self.query_norm = nn.LayerNorm(h)
        self.point_norm = nn.LayerNorm(h)
        self.cross = nn.MultiheadAttention(h, cfg.attention_heads, dropout=cfg.dropout, batch_first=True)
        self.refine = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(
                h, cfg.attention_heads, cfg.ffn_multiplier * h, cfg.dropout,
                activation="gelu", batch_first=True, norm_first=True,
            ),
            cfg.encoder_layers,
            enable_nested_tensor=False,
        )
        self.out_norm = nn.LayerNorm(h)

    def forward(self, points):
        """``points``: ``(B, N, 3)`` tensor -> ``(B, K, hidden)``."""
        feats = self.point_norm(self.lift(fourier_features(points, self.cfg.fourier_frequencies)))
        q = self.query_norm(self.queries).unsqueeze(0).expand(points.shape[0], -1, -1)
        attended, _ = self.cross(q, feats, feats, need_weights=False)
        tokens = self.queries.unsqueeze(0) + attended
        return self.out_norm(self.refine(tokens))


class PrimitiveEmbedding(nn.Module):
    """Attribute embedding tables plus the linear primitive encoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.attribute_embed_dim
        self.class_table = nn.Embedding(cfg.num_classes, cfg.class_embed_dim)
        self.translation_tables = nn.ModuleList(nn.Embedding(cfg.translation_levels, d) for _ in range(3))
        self.rotation_tables = nn.ModuleList(nn.Embedding(cfg.rotation_levels, d) for _ in range(3))
        self.scale_tables = nn.ModuleList(nn.Embedding(cfg.scale_levels, d) for _ in range(3))
        self.encoder = nn.Linear(cfg.primitive_embed_dim, cfg.hidden_size)

    @staticmethod
    def _per_dim(tables, bins):
        return torch.cat([tables[k](bins[..., k]) for k in range(3)], dim=-1)

    def embed_class(self, c):
        return self.class_table(c)

    def embed_translation(self, bins):
        return self._per_dim(self.translation_tables, bins)

    def embed_rotation(self, bins):
        return self._per_dim(self.rotation_tables, bins)

    def embed_scale(self, bins):
        return self._per_dim(self.scale_tables, bins)

    def check_tokens(self, tokens):
        cfg = self.cfg
        limits = (
            (tokens[..., CLASS_COL], cfg.num_classes, "class"),
            (tokens[..., TRANSLATION_COLS], cfg.translation_levels, "translation"),
            (tokens[..., ROTATION_COLS], cfg.rotation_levels, "rotation"),
            (tokens[..., SCALE_COLS], cfg.scale_levels, "scale"),
        )
        for values, limit, name in limits:
            if values.numel() and (values.min() < 0 or values.max() >= limit):
                raise InvalidInputError(f"{name} token out of range [0, {limit})")

    def forward(self, tokens):
        """``tokens``: ``(..., 10)`` int tensor -> primitive tokens ``(..., hidden)``."""
        if tokens.shape[-1] != TOKEN_WIDTH:
            raise InvalidInputError(f"tokens must have trailing size {TOKEN_WIDTH}")
        self.check_tokens(tokens)
        parts = torch.cat(
            [
                self.embed_class(tokens[..., CLASS_COL]),
                self.embed_scale(tokens[..., SCALE_COLS]),
                self.embed_rotation(tokens[..., ROTATION_COLS]),
                self.embed_translation(tokens[..., TRANSLATION_COLS]),
            ],
            dim=-1,
        )
        return self.encoder(parts)


class CascadedDecoder(nn.Module):
    """Class -> translation -> rotation -> scale heads plus the EOS head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        h, ce, ae = cfg.hidden_size, cfg.class_embed_dim, 3 * cfg.attribute_embed_dim
        extra_t, extra_r, extra_s = (ce, ce + ae, ce + 2 * ae) if cfg.cascade else (0, 0, 0)
        self.class_head = _mlp(h, h, cfg.num_classes)
        self.translation_head = _mlp(h + extra_t, h, 3 * cfg.translation_levels)
        self.rotation_head = _mlp(h + extra_r, h, 3 * cfg.rotation_levels)
        self.scale_head = _mlp(h + extra_s, h, 3 * cfg.scale_levels)
        self.eos_head = _mlp(h, h, 1)

    def _inputs(self, f, parts):
        if not self.cfg.cascade:
            return f
        return torch.cat([f, *parts], dim=-1)

    def class_logits(self, f):
        return self.class_head(f)

    def translation_logits(self, f, e_c):
        out = self.translation_head(self._inputs(f, [e_c]))
        return out.unflatten(-1, (3, self.cfg.translation_levels))

    def rotation_logits(self, f, e_c, e_t):
        out = self.rotation_head(self._inputs(f, [e_c, e_t]))
        return out.unflatten(-1, (3, self.cfg.rotation_levels))

    def scale_logits(self, f, e_c, e_t, e_r):
        out = self.scale_head(self._inputs(f, [e_c, e_t, e_r]))
        return out.unflatten(-1, (3, self.cfg.scale_levels))

    def eos_logit(self, f):
        return self.eos_head(f).squeeze(-1)


class PrimitiveTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        h = cfg.hidden_size
        self.condition_encoder = PointConditionEncoder(cfg)
        self.embedding = PrimitiveEmbedding(cfg)
        self.sos = nn.Parameter(torch.randn(h) * 0.02)
        self.condition_segment = nn.Parameter(torch.randn(h) * 0.02)
        self.positions = nn.Embedding(cfg.max_sequence + 1, h)
        self.backbone = nn.TransformerEncoder(
            nn.TransformerEncoderLayer(
                h, cfg.attention_heads, cfg.ffn_multiplier * h, cfg.dropout,
                activation="gelu", batch_first=True, norm_first=True,
            ),
            cfg.layers,
            enable_nested_tensor=False,
        )
        self.final_norm = nn.LayerNorm(h)
        self.decoder = CascadedDecoder(cfg)
        self._masks = {}

    @property
    def device(self):
        return self.sos.device

    # -- condition -----------------------------------------------------------
    def prepare_points(self, points, seed=None):
        """Farthest-point subsample a cloud to ``condition_points``; returns a float tensor."""
        pts = np.asarray(points.points if hasattr(points, "points") else points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InvalidInputError(f"expected N x 3 points, got shape {pts.shape}")
        if len(pts) < MIN_CONDITION_POINTS:
            raise InsufficientInputError(f"need at least {MIN_CONDITION_POINTS} points, got {len(pts)}")
        if len(pts) > self.cfg.condition_points:
            start = 0 if seed is None else int(np.random.default_rng(seed).integers(len(pts)))
            pts = pts[farthest_point_sample(pts, self.cfg.condition_points, start)]
        return torch.as_tensor(pts, dtype=torch.get_default_dtype(), device=self.device)

    def encode_condition(self, points):
        """``(B, N, 3)`` tensor, or one cloud, to condition tokens ``(B, K, hidden)``."""
        if not torch.is_tensor(points):
            points = self.prepare_points(points).unsqueeze(0)
        if points.shape[-2] < MIN_CONDITION_POINTS:
            raise InsufficientInputError(f"need at least {MIN_CONDITION_POINTS} points")
        return self.condition_encoder(points.to(self.sos.dtype))

    # -- sequence --------------------------------------------------------------
    def embed_primitive(self, tokens):
        return self.embedding(tokens)

    def _attention_mask(self, length):
        key = (length, str(self.device))
        if key not in self._masks:
            mask = torch.triu(torch.ones(length, length, dtype=torch.bool, device=self.device), diagonal=1)
            if self.cfg.condition_bidirectional:
                k = self.cfg.condition_tokens
                mask[:k, :k] = False
            self._masks[key] = torch.zeros(length, length, device=self.device).masked_fill(mask, float("-inf"))
        return self._masks[key].to(self.sos.dtype)

    def forward_sequence(self, condition, primitive_tokens):
        """Run the backbone over ``[C, SOS, h_1 .. h_m]``.

        ``condition``: ``(B, K, H)``; ``primitive_tokens``: ``(B, m, H)``.  Returns the
        ``m + 1`` step features at SOS .. h_m; feature ``j`` predicts primitive ``j + 1``.
        """
        b, m = primitive_tokens.shape[0], primitive_tokens.shape[1]
        if m > self.cfg.max_sequence:
            raise SequenceLengthError(f"sequence of {m} primitives exceeds max_sequence {self.cfg.max_sequence}")
        sos = self.sos.expand(b, 1, -1)
        seq = torch.cat([sos, primitive_tokens], dim=1) + self.positions.weight[: m + 1]
        cond = condition + self.condition_segment
        x = torch.cat([cond, seq], dim=1)
        x = self.backbone(x, mask=self._attention_mask(x.shape[1]))
        return self.final_norm(x[:, condition.shape[1]:])

    # -- heads -----------------------------------------------------------------
    def decode_attributes(self, f, known=None):
        """Fill attribute logits in cascade order given already decoded attributes.

        ``known`` may hold ``class`` (``(...)`` ints), ``translation`` and ``rotation``
        (``(..., 3)`` ints).  Returns a dict with ``class`` and ``eos`` logits plus every
        spatial head whose inputs are available.
        """
        known = known or {}
        order = ("class", "translation", "rotation")
        present = [k in known for k in order]
        for i in range(1, len(order)):
            if present[i] and not all(present[:i]):
                raise ContractViolationError(
                    f"cascade order is class -> translation -> rotation -> scale; got {sorted(known)}"
                )
        emb = self.embedding
        out = {"class": self.decoder.class_logits(f), "eos": self.decoder.eos_logit(f)}
        if "class" in known:
            e_c = emb.embed_class(known["class"])
            out["translation"] = self.decoder.translation_logits(f, e_c)
            if "translation" in known:
                e_t = emb.embed_translation(known["translation"])
                out["rotation"] = self.decoder.rotation_logits(f, e_c, e_t)
                if "rotation" in known:
                    e_r = emb.embed_rotation(known["rotation"])
                    out["scale"] = self.decoder.scale_logits(f, e_c, e_t, e_r)
        return out

    def forward(self, points, tokens):
        """Teacher-forced logits for a padded batch.

        ``points``: ``(B, N, 3)``; ``tokens``: ``(B, M, 10)`` (padding rows may hold any
        valid bins).  Returns logits at the ``M + 1`` step positions; the cascade at
        position ``j`` is fed the ground-truth attributes of token ``j``.
        """
        condition = self.encode_condition(points)
        h = self.embed_primitive(tokens)
        f = self.forward_sequence(condition, h)
        pad = torch.zeros_like(tokens[:, :1])
        targets = torch.cat([tokens, pad], dim=1)
        known = {
            "class": targets[..., CLASS_COL],
            "translation": targets[..., TRANSLATION_COLS],
            "rotation": targets[..., ROTATION_COLS],
        }
        return self.decode_attributes(f, known)


def count_parameters(model: nn.Module):
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, model: PrimitiveTransformer, discretizer: Discretizer, extra=None):
    params = {name: t.detach().cpu() for name, t in model.state_dict().items()}
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.cfg),
        "discretizer": discretizer.to_dict(),
        "parameters": params,
        "parameter_shapes": {name: list(t.shape) for name, t in params.items()},
    }
    if extra:
        payload["extra"] = extra
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, map_location="cpu"):
    """Returns ``(model, discretizer, extra)``."""
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a primassembly checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: checkpoint version {payload.get('version')} unsupported")
    cfg = ModelConfig.from_dict(payload["model_config"])
    discretizer = Discretizer(**payload["discretizer"])
    model = PrimitiveTransformer(cfg)
    for name, shape in payload["parameter_shapes"].items():
        if list(payload["parameters"][name].shape) != shape:
            raise ConfigError(f"{path}: parameter {name} has shape {list(payload['parameters'][name].shape)}")
    model.load_state_dict(payload["parameters"])
    model.eval()
    return model, discretizer, payload.get("extra", {})


def default_model_config(discretizer: Discretizer | None = None, **overrides):
    d = discretizer or Discretizer()
    base = dict(
        num_classes=num_classes(),
        rotation_levels=d.rotation_levels,
        scale_levels=d.scale_levels,
        translation_levels=d.translation_levels,
    )
    base.update(overrides)
    return ModelConfig(**base)
