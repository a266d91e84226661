"""Teacher-forced training with cross-entropy, EOS and differentiable Chamfer terms."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import ConfigError, ContractViolationError, InvalidInputError, NonFiniteLossError
from .geometry import Assembly, Primitive, farthest_point_sample, sample_surface
from .model import PrimitiveTransformer, load_checkpoint, save_checkpoint
from .tokenization import (
    CLASS_COL,
    DEFAULT_DISCRETIZER,
    ROTATION_COLS,
    SCALE_COLS,
    TRANSLATION_COLS,
    Discretizer,
    SequenceSample,
)

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l_ce", "l_eos", "l_cd", "total", "lr", "temperature")
SPATIAL = (("translation", TRANSLATION_COLS), ("rotation", ROTATION_COLS), ("scale", SCALE_COLS))


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    grad_accumulation: int = 1
    epochs: int = 1
    max_steps: int | None = None
    gumbel_start: float = 2.0
    gumbel_end: float = 0.5
    gumbel_decay_steps: int | None = None
    gumbel_hard: bool = False
    cd_points_per_primitive: int = 256
    cd_pairing: str = "per_step"
    weight_ce: float = 1.0
    weight_eos: float = 1.0
    weight_cd: float = 1.0
    grad_clip: float | None = 1.0
    lr_schedule: str = "constant"
    warmup_steps: int = 0
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be positive")
        for name in ("batch_size", "grad_accumulation", "cd_points_per_primitive"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if int(self.epochs) < 0:
            raise ConfigError("train.epochs must be >= 0")
        if not (self.gumbel_start > 0 and self.gumbel_end > 0):
            raise ConfigError("gumbel temperatures must stay positive")
        if self.cd_pairing not in ("per_step", "union"):
            raise ConfigError("train.cd_pairing must be 'per_step' or 'union'")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("train.lr_schedule must be 'constant' or 'cosine'")
        for name in ("weight_ce", "weight_eos", "weight_cd"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be nonnegative")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class LossBreakdown:
    l_ce: float
    l_eos: float
    l_cd: float
    total: float
    parts: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# differentiable sampling

def gumbel_noise(shape, generator=None, dtype=None, device=None):
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    tiny = torch.finfo(u.dtype).tiny
    neg_log = (-torch.log(u.clamp_min(tiny))).clamp_min(tiny)
    return -torch.log(neg_log)


def gumbel_softmax(logits, temperature, generator=None, hard=False, noise=None):
    """Relaxed categorical sample over the last axis.

    With ``hard`` the forward value is the one-hot argmax while gradients flow
    through the soft sample (straight-through).
    """
    if not temperature > 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    if noise is None:
        noise = gumbel_noise(logits.shape, generator, logits.dtype, logits.device)
    soft = torch.softmax((logits + noise) / temperature, dim=-1)
    if not hard:
        return soft
    index = soft.argmax(dim=-1, keepdim=True)
    one_hot = torch.zeros_like(soft).scatter_(-1, index, 1.0)
    # soft - soft.detach() is exactly zero, so the forward value stays an exact one-hot
    return one_hot + (soft - soft.detach())


def bin_centers_tensor(kind, discretizer=DEFAULT_DISCRETIZER, dtype=None, device=None):
    return torch.as_tensor(discretizer.bin_centers(kind), dtype=dtype or torch.get_default_dtype(), device=device)


def soft_dequantize(soft, kind, discretizer=DEFAULT_DISCRETIZER):
    """Expected bin center under simplex weights ``soft`` (last axis = bins)."""
    centers = bin_centers_tensor(kind, discretizer, soft.dtype, soft.device)
    return (soft * centers).sum(dim=-1)


def dequantize_tensor(bins, kind, discretizer=DEFAULT_DISCRETIZER, dtype=None):
    lo, _ = discretizer.value_range(kind)
    return lo + (bins.to(dtype or torch.get_default_dtype()) + 0.5) * discretizer.bin_width(kind)


# ---------------------------------------------------------------------------
# Chamfer guidance

def euler_to_matrix_torch(r):
    cx, cy, cz = torch.cos(r[..., 0]), torch.cos(r[..., 1]), torch.cos(r[..., 2])
    sx, sy, sz = torch.sin(r[..., 0]), torch.sin(r[..., 1]), torch.sin(r[..., 2])
    row0 = torch.stack([cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx], dim=-1)
    row1 = torch.stack([sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx], dim=-1)
    row2 = torch.stack([-sy, cy * sx, cy * cx], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


@lru_cache(maxsize=32)
def _canonical_points(class_label, n):
    identity = Primitive(class_label, (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    return sample_surface(identity, n, np.random.default_rng(1000 + class_label), resolution=32).points


def canonical_points(classes, n, dtype=None, device=None):
    """Fixed local surface samples per class, stacked for each entry of ``classes``."""
    classes = [int(c) for c in np.asarray(classes).reshape(-1)]
    pts = np.stack([_canonical_points(c, int(n)) for c in classes]) if classes else np.zeros((0, n, 3))
    return torch.as_tensor(pts, dtype=dtype or torch.get_default_dtype(), device=device)


def transform_local(local, scale, rotation, translation):
    """``R(rotation) diag(scale) x + translation`` for ``local`` of shape ``(S, P, 3)``."""
    rot = euler_to_matrix_torch(rotation)
    return torch.einsum("sij,spj->spi", rot, local * scale[:, None, :]) + translation[:, None, :]


def chamfer_distance_sets(a, b):
    """Symmetric mean squared nearest-neighbour distance for batched sets ``(S, P, 3)``, ``(S, Q, 3)``."""
    d = (
        (a * a).sum(-1)[:, :, None]
        + (b * b).sum(-1)[:, None, :]
        - 2.0 * torch.bmm(a, b.transpose(1, 2))
    ).clamp_min(0.0)
    return d.min(dim=2).values.mean(dim=1) + d.min(dim=1).values.mean(dim=1)


def _gt_attributes(gt, discretizer, dtype, device):
    if isinstance(gt, (Assembly, list, tuple)):
        prims = list(gt)
        return {
            "class": torch.as_tensor([p.class_label for p in prims], dtype=torch.long, device=device),
            "scale": torch.as_tensor([p.scale for p in prims], dtype=dtype, device=device).reshape(-1, 3),
            "rotation": torch.as_tensor([p.rotation for p in prims], dtype=dtype, device=device).reshape(-1, 3),
            "translation": torch.as_tensor([p.translation for p in prims], dtype=dtype, device=device).reshape(-1, 3),
        }
    return gt


def chamfer_loss(
    soft,
    gt,
    discretizer=DEFAULT_DISCRETIZER,
    cd_points=256,
    pairing="per_step",
    sample_index=None,
):
    """Chamfer guidance between soft-sampled and ground-truth primitives.

    ``soft`` maps ``translation``/``rotation``/``scale`` to ``(S, 3, L)`` simplex weights
    for ``S`` teacher-forced steps.  ``gt`` is an :class:`Assembly` of ``S`` primitives or
    a dict of ``class`` ``(S,)`` and continuous ``(S, 3)`` attributes.  The class is
    taken from the ground truth.  ``pairing="union"`` compares the union clouds of each
    sample (grouped by ``sample_index``) instead of step pairs.
    """
    ref = soft["translation"]
    gt = _gt_attributes(gt, discretizer, ref.dtype, ref.device)
    steps = ref.shape[0]
    if any(soft[k].shape[0] != steps for k in ("rotation", "scale")) or gt["class"].shape[0] != steps:
        raise ContractViolationError(f"{steps} predicted steps vs {gt['class'].shape[0]} ground-truth primitives")
    if steps == 0:
        return ref.sum() * 0.0
    local = canonical_points(gt["class"].cpu().numpy(), cd_points, ref.dtype, ref.device)
    pred = transform_local(
        local,
        soft_dequantize(soft["scale"], "scale", discretizer),
        soft_dequantize(soft["rotation"], "rotation", discretizer),
        soft_dequantize(soft["translation"], "translation", discretizer),
    )
    target = transform_local(local, gt["scale"], gt["rotation"], gt["translation"])
    if pairing == "per_step":
        return chamfer_distance_sets(pred, target).mean()
    if sample_index is None:
        sample_index = torch.zeros(steps, dtype=torch.long)
    losses = []
    for sid in torch.unique(sample_index):
        sel = sample_index == sid
        losses.append(chamfer_distance_sets(pred[sel].reshape(1, -1, 3), target[sel].reshape(1, -1, 3)))
    return torch.cat(losses).mean()


# ---------------------------------------------------------------------------
# batches and losses

@dataclass
class Batch:
    points: torch.Tensor  # (B, N, 3)
    tokens: torch.Tensor  # (B, M, 10)
    lengths: torch.Tensor  # (B,)
    ids: list


def condition_array(cloud, n_points, seed=0):
    """Fixed-size conditioning array: farthest-point subsample or seeded repeat-pad."""
    pts = np.asarray(cloud.points if hasattr(cloud, "points") else cloud, dtype=float)
    if len(pts) >= n_points:
        return pts[farthest_point_sample(pts, n_points, 0)]
    extra = np.random.default_rng(seed).integers(len(pts), size=n_points - len(pts))
    return np.vstack([pts, pts[extra]])


def collate(samples, condition_points, dtype=None):
    """Stack ``SequenceSample``s whose ``condition`` is already ``condition_points`` long."""
    dtype = dtype or torch.get_default_dtype()
    lengths = [len(s) for s in samples]
    m = max(lengths) if lengths else 0
    tokens = np.zeros((len(samples), m, 10), dtype=np.int64)
    for i, s in enumerate(samples):
        if len(s):
            tokens[i, : len(s)] = s.as_array()
    points = []
    for s in samples:
        pts = s.condition.points if hasattr(s.condition, "points") else s.condition
        if len(pts) != condition_points:
            pts = condition_array(pts, condition_points)
        points.append(pts)
    return Batch(
        torch.as_tensor(np.stack(points), dtype=dtype),
        torch.as_tensor(tokens),
        torch.as_tensor(lengths, dtype=torch.long),
        [s.sample_id for s in samples],
    )


def teacher_forced_losses(
    model: PrimitiveTransformer,
    batch: Batch,
    cfg: TrainConfig,
    generator=None,
    temperature=None,
    discretizer=DEFAULT_DISCRETIZER,
    logits=None,
):
    """Returns ``(total_tensor, LossBreakdown)``.

    ``logits`` may be supplied to bypass the model forward (used by tests that
    probe the loss with hand-built logits).
    """
    if logits is None:
        logits = model(batch.points, batch.tokens)
    b, m = batch.tokens.shape[:2]
    steps = torch.arange(m + 1)
    lengths = batch.lengths[:, None]
    attr_mask = steps[None, :m] < lengths  # (B, M)
    eos_mask = steps[None, :] <= lengths  # (B, M+1)
    eos_target = (steps[None, :] == lengths).to(logits["eos"].dtype)

    tokens = batch.tokens[attr_mask]  # (S, 10)
    parts = {}
    ce_terms = []
    cls_logits = logits["class"][:, :m][attr_mask]
    ce = F.cross_entropy(cls_logits, tokens[:, CLASS_COL], reduction="none") if len(tokens) else cls_logits.sum(-1)
    parts["ce_class"] = ce
    ce_terms.append(ce)
    for kind, cols in SPATIAL:
        lg = logits[kind][:, :m][attr_mask]  # (S, 3, L)
        for d in range(3):
            term = F.cross_entropy(lg[:, d], tokens[:, cols][:, d], reduction="none") if len(tokens) else lg[:, d].sum(-1)
            parts[f"ce_{kind}_{d}"] = term
            ce_terms.append(term)
    l_ce = torch.stack(ce_terms, dim=0).mean() if len(tokens) else logits["class"].sum() * 0.0

    eos_logits = logits["eos"][eos_mask]
    l_eos = F.binary_cross_entropy_with_logits(eos_logits, eos_target[eos_mask])

    if cfg.weight_cd > 0 and len(tokens):
        tau = cfg.gumbel_start if temperature is None else temperature
        soft = {
            kind: gumbel_softmax(logits[kind][:, :m][attr_mask], tau, generator, cfg.gumbel_hard)
            for kind, _ in SPATIAL
        }
        gt = {"class": tokens[:, CLASS_COL]}
        for kind, cols in SPATIAL:
            gt[kind] = dequantize_tensor(tokens[:, cols], kind, discretizer, soft[kind].dtype)
        sample_index = torch.arange(b)[:, None].expand(b, m)[attr_mask]
        l_cd = chamfer_loss(soft, gt, discretizer, cfg.cd_points_per_primitive, cfg.cd_pairing, sample_index)
    else:
        l_cd = l_ce.new_zeros(())

    total = cfg.weight_ce * l_ce + cfg.weight_eos * l_eos + cfg.weight_cd * l_cd
    v_ce, v_eos, v_cd = float(l_ce.detach()), float(l_eos.detach()), float(l_cd.detach())
    summary = {k: float(v.detach().mean()) if v.numel() else 0.0 for k, v in parts.items()}
    breakdown = LossBreakdown(
        v_ce, v_eos, v_cd, cfg.weight_ce * v_ce + cfg.weight_eos * v_eos + cfg.weight_cd * v_cd, summary
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# loop

def temperature_at(cfg: TrainConfig, step, total_steps):
    horizon = cfg.gumbel_decay_steps or max(total_steps, 1)
    frac = min(max(step / horizon, 0.0), 1.0)
    return cfg.gumbel_start + (cfg.gumbel_end - cfg.gumbel_start) * frac


def learning_rate_at(cfg: TrainConfig, step, total_steps):
    lr = cfg.learning_rate
    if cfg.warmup_steps and step < cfg.warmup_steps:
        return lr * (step + 1) / cfg.warmup_steps
    if cfg.lr_schedule == "cosine" and total_steps > 0:
        frac = min(step / total_steps, 1.0)
        return lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return lr


def _epoch_order(seed, epoch, n):
    return np.random.default_rng([int(seed), 7919, int(epoch)]).permutation(n)


def _step_generator(seed, step):
    return torch.Generator().manual_seed(int(seed) * 1_000_003 + int(step))


def planned_steps(n_samples, cfg: TrainConfig):
    batches = math.ceil(n_samples / cfg.batch_size)
    per_epoch = math.ceil(batches / cfg.grad_accumulation)
    total = per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    return total, per_epoch


@dataclass
class TrainResult:
    model: PrimitiveTransformer
    log: list
    steps: int


def _write_log(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def train(
    dataset,
    model: PrimitiveTransformer,
    cfg: TrainConfig,
    discretizer=DEFAULT_DISCRETIZER,
    resume_from=None,
    stop_after=None,
    callback=None,
):
    """Adam with gradient accumulation over teacher-forced batches.

    ``dataset`` is a sequence of :class:`SequenceSample` whose ``condition`` holds
    ``model.cfg.condition_points`` points.  Batch order and Gumbel noise are pure
    functions of ``(cfg.seed, epoch)`` and ``(cfg.seed, step)``, so a resumed run
    continues exactly where the checkpoint left off.  ``stop_after`` ends the run
    early after that many optimiser steps (the schedule still uses the full plan).
    """
    samples = list(dataset)
    if not samples:
        raise InvalidInputError("cannot train on an empty dataset")
    n_points = model.cfg.condition_points
    conditioned = [
        SequenceSample(s.tokens, s.terminated, condition_array(s.condition, n_points), s.sample_id) for s in samples
    ]
    total_steps, per_epoch = planned_steps(len(samples), cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    step, log = 0, []
    if resume_from is not None:
        state = torch.load(resume_from, map_location="cpu", weights_only=False)
        model.load_state_dict(state["parameters"])
        train_state = state["extra"]["train_state"]
        optimizer.load_state_dict(train_state["optimizer"])
        step = int(train_state["step"])
        log = list(train_state.get("log", []))
    model.train()

    batches_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    last = total_steps if stop_after is None else min(total_steps, step + stop_after)
    while step < last:
        epoch, in_epoch = divmod(step, per_epoch)
        order = _epoch_order(cfg.seed, epoch, len(samples))
        first_batch = in_epoch * cfg.grad_accumulation
        batch_ids = range(first_batch, min(first_batch + cfg.grad_accumulation, batches_per_epoch))
        tau = temperature_at(cfg, step, total_steps)
        lr = learning_rate_at(cfg, step, total_steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        generator = _step_generator(cfg.seed, step)
        optimizer.zero_grad(set_to_none=True)
        parts = []
        for bi in batch_ids:
            idx = order[bi * cfg.batch_size:(bi + 1) * cfg.batch_size]
            batch = collate([conditioned[i] for i in idx], n_points)
            total, breakdown = teacher_forced_losses(model, batch, cfg, generator, tau, discretizer)
            if not torch.isfinite(total):
                raise NonFiniteLossError(step, batch.ids, breakdown)
            (total / len(batch_ids)).backward()
            parts.append(breakdown)
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        row = {
            "step": step,
            "l_ce": float(np.mean([p.l_ce for p in parts])),
            "l_eos": float(np.mean([p.l_eos for p in parts])),
            "l_cd": float(np.mean([p.l_cd for p in parts])),
            "total": float(np.mean([p.total for p in parts])),
            "lr": lr,
            "temperature": tau,
        }
        log.append(row)
        step += 1
        if callback is not None:
            callback(row)
        if cfg.checkpoint_every and cfg.checkpoint_dir and step % cfg.checkpoint_every == 0:
            save_training_checkpoint(Path(cfg.checkpoint_dir) / f"step_{step:07d}.pt", model, optimizer, step, cfg, discretizer, log)
    if cfg.log_path:
        _write_log(cfg.log_path, log)
    model.eval()
    return TrainResult(model, log, step)


def save_training_checkpoint(path, model, optimizer, step, cfg, discretizer, log=None):
    extra = {
        "train_state": {
            "step": step,
            "optimizer": optimizer.state_dict(),
            "train_config": asdict(cfg),
            "log": list(log or []),
        }
    }
    save_checkpoint(path, model, discretizer, extra)


def resume_model(path):
    """Model, discretizer and train config stored in a training checkpoint."""
    model, discretizer, extra = load_checkpoint(path)
    cfg = TrainConfig.from_dict(extra["train_state"]["train_config"])
    return model, discretizer, cfg
