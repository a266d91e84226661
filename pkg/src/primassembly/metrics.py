"""Geometric and segmentation metrics between predicted and reference shapes."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .exceptions import InvalidInputError
from .geometry import Assembly, PointCloud, assembly_surface, farthest_point_sample

logger = logging.getLogger(__name__)

DEFAULT_EVAL_POINTS = 10_000
DEFAULT_EMD_POINTS = 256
DEFAULT_VOXEL_RESOLUTION = 32


def _points(cloud, name="cloud"):
    pts = np.asarray(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InvalidInputError(f"{name} must be an N x 3 array, got shape {pts.shape}")
    if len(pts) == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError(f"{name} contains non-finite coordinates")
    return pts


def _nearest(a, b):
    """Distance from every point of ``a`` to its nearest neighbour in ``b``."""
    return cKDTree(b).query(a, k=1)[0]


def chamfer_distance(a, b):
    """Symmetric Chamfer distance with squared distances, averaged per direction."""
    a, b = _points(a, "A"), _points(b, "B")
    return float(np.mean(_nearest(a, b) ** 2) + np.mean(_nearest(b, a) ** 2))


def hausdorff(a, b):
    a, b = _points(a, "A"), _points(b, "B")
    return float(max(_nearest(a, b).max(), _nearest(b, a).max()))


def emd(a, b, n_sub=DEFAULT_EMD_POINTS):
    """Mean matched distance of the optimal one-to-one assignment.

    Both clouds are first reduced to ``n_sub`` points by farthest-point sampling
    (clouds that are already small enough are used whole, truncated to the smaller size).
    """
    a, b = _points(a, "A"), _points(b, "B")
    if int(n_sub) < 1:
        raise InvalidInputError("n_sub must be positive")
    n = min(int(n_sub), len(a), len(b))
    a = a[farthest_point_sample(a, n)] if len(a) > n else a
    b = b[farthest_point_sample(b, n)] if len(b) > n else b
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def occupancy_grid(cloud, resolution=DEFAULT_VOXEL_RESOLUTION):
    """Boolean ``resolution``³ occupancy over ``[-1, 1]³``; ``+1`` lands in the last cell."""
    pts = _points(cloud)
    res = int(resolution)
    if res < 1:
        raise InvalidInputError("resolution must be positive")
    outside = np.any((pts < -1.0) | (pts > 1.0), axis=1)
    if outside.any():
        logger.warning("clamped %d point(s) outside [-1, 1]^3 into boundary cells", int(outside.sum()))
    idx = np.floor((pts + 1.0) / 2.0 * res).astype(np.int64)
    idx = np.clip(idx, 0, res - 1)
    grid = np.zeros((res, res, res), dtype=bool)
    grid[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return grid


def voxel_iou(a, b, resolution=DEFAULT_VOXEL_RESOLUTION):
    ga, gb = occupancy_grid(a, resolution), occupancy_grid(b, resolution)
    union = np.count_nonzero(ga | gb)
    return float(np.count_nonzero(ga & gb) / union)


def transfer_labels(gt, pred, n_pred_points=DEFAULT_EVAL_POINTS, rng=None):
    """Label every reference point with the index of the nearest predicted primitive."""
    pts = _points(gt, "gt")
    pred = Assembly(tuple(pred))
    if len(pred) == 0:
        raise InvalidInputError("predicted assembly is empty")
    rng = rng if rng is not None else np.random.default_rng(0)
    sampled = assembly_surface(pred, int(n_pred_points), rng)
    _, nearest = cKDTree(sampled.points).query(pts, k=1)
    return np.asarray(sampled.labels)[nearest]


# -- segmentation ----------------------------------------------------------------
def _label_pair(x, y):
    x, y = np.asarray(x).reshape(-1), np.asarray(y).reshape(-1)
    if len(x) != len(y):
        raise InvalidInputError(f"label arrays differ in length: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise InvalidInputError("need at least two labelled points")
    return x, y


def contingency(x, y):
    """Joint count table between the two partitions."""
    x, y = _label_pair(x, y)
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    table = np.zeros((xi.max() + 1, yi.max() + 1), dtype=np.int64)
    np.add.at(table, (xi, yi), 1)
    return table


def _pairs(counts):
    counts = np.asarray(counts, dtype=float)
    return float(np.sum(counts * (counts - 1) / 2))


def rand_index(x, y):
    table = contingency(x, y)
    n = table.sum()
    total = n * (n - 1) / 2
    same_both = _pairs(table)
    same_x = _pairs(table.sum(axis=1))
    same_y = _pairs(table.sum(axis=0))
    different_both = total - same_x - same_y + same_both
    return float((same_both + different_both) / total)


def variation_of_information(x, y):
    """``H(X) + H(Y) - 2 I(X; Y)`` in nats."""
    table = contingency(x, y).astype(float)
    joint = table / table.sum()
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    h_xy = -np.sum(joint[nz] * np.log(joint[nz]))
    h_x = -np.sum(px * np.log(px))
    h_y = -np.sum(py * np.log(py))
    # VOI = 2 H(X,Y) - H(X) - H(Y)
    return float(max(2.0 * h_xy - h_x - h_y, 0.0))


def segmentation_covering(x, y):
    """Size-weighted best IoU of each reference segment ``x`` against predicted segments ``y``."""
    table = contingency(x, y).astype(float)
    n = table.sum()
    size_x = table.sum(axis=1, keepdims=True)
    size_y = table.sum(axis=0, keepdims=True)
    iou = table / (size_x + size_y - table)
    return float(np.sum(size_x[:, 0] / n * iou.max(axis=1)))


# -- full protocol ---------------------------------------------------------------
@dataclass
class EvalConfig:
    n_points: int = DEFAULT_EVAL_POINTS
    emd_points: int = DEFAULT_EMD_POINTS
    voxel_resolution: int = DEFAULT_VOXEL_RESOLUTION
    seed: int = 0

    def __post_init__(self):
        for name in ("n_points", "emd_points", "voxel_resolution"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"eval.{name} must be positive")


@dataclass
class EvalReport:
    cd: float
    emd: float
    hausdorff: float
    voxel_iou: float
    ri: float | None = None
    voi: float | None = None
    sc: float | None = None
    sample_id: str | None = None

    def to_dict(self):
        return asdict(self)


METRIC_FIELDS = ("cd", "emd", "hausdorff", "voxel_iou", "ri", "voi", "sc")


def evaluate(pred, gt, cfg: EvalConfig | None = None, sample_id=None) -> EvalReport:
    """Sample both surfaces with the same seed and score the prediction.

    ``gt`` is either an :class:`Assembly` (sampled like the prediction, labels are
    primitive indices) or a :class:`PointCloud`; segmentation scores are filled in
    whenever reference labels exist.
    """
    cfg = cfg or EvalConfig()
    pred = Assembly(tuple(pred))
    if len(pred) == 0:
        raise InvalidInputError("predicted assembly is empty")
    pred_cloud = assembly_surface(pred, cfg.n_points, np.random.default_rng(cfg.seed))
    if isinstance(gt, PointCloud):
        gt_cloud = gt
    else:
        gt = Assembly(tuple(gt))
        if len(gt) == 0:
            raise InvalidInputError("reference assembly is empty")
        gt_cloud = assembly_surface(gt, cfg.n_points, np.random.default_rng(cfg.seed))
    report = EvalReport(
        cd=chamfer_distance(pred_cloud, gt_cloud),
        emd=emd(pred_cloud, gt_cloud, cfg.emd_points),
        hausdorff=hausdorff(pred_cloud, gt_cloud),
        voxel_iou=voxel_iou(pred_cloud, gt_cloud, cfg.voxel_resolution),
        sample_id=sample_id,
    )
    if gt_cloud.labels is not None and len(gt_cloud.points) >= 2:
        transferred = transfer_labels(gt_cloud, pred, cfg.n_points, np.random.default_rng(cfg.seed))
        labels = np.asarray(gt_cloud.labels)
        report.ri = rand_index(labels, transferred)
        report.voi = variation_of_information(labels, transferred)
        report.sc = segmentation_covering(labels, transferred)
    return report


def aggregate(reports):
    """Per-metric mean over the reports that carry the metric."""
    reports = list(reports)
    out = {}
    for name in METRIC_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = float(np.mean(values)) if values else None
    out["count"] = len(reports)
    return out


def write_report_csv(path, reports):
    reports = list(reports)
    columns = [f.name for f in fields(EvalReport)]
    summary = aggregate(reports)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.to_dict())
        writer.writerow({**{k: summary[k] for k in METRIC_FIELDS}, "sample_id": "mean"})


def write_report_json(path, reports):
    reports = list(reports)
    payload = {"samples": [r.to_dict() for r in reports], "aggregate": aggregate(reports)}

    def _clean(v):
        return None if isinstance(v, float) and not math.isfinite(v) else v

    payload["samples"] = [{k: _clean(v) for k, v in s.items()} for s in payload["samples"]]
    Path(path).write_text(json.dumps(payload, indent=2))
