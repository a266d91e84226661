"""End-to-end acceptance checks; each prints one ``ACCEPTANCE <n>: PASS|FAIL`` line."""
import itertools
import math
import os
import time
import warnings

import numpy as np
import pytest
import torch
from scipy.optimize import linprog
from scipy.spatial.transform import Rotation

from primassembly import PrimitiveAssembler
from primassembly.data import GeneratorConfig, generate_dataset
from primassembly.geometry import (
    CUBOID,
    ELLIPSOID,
    ELLIPTICAL_CYLINDER,
    Assembly,
    Primitive,
    assembly_surface,
    canonicalize,
    canonicalize_arrays,
    euler_to_matrix,
    sample_surface,
    symmetry_group,
    symmetry_set,
)
from primassembly.inference import SamplingConfig, generate
from primassembly.metrics import (
    chamfer_distance,
    emd,
    evaluate,
    hausdorff,
    rand_index,
    segmentation_covering,
    variation_of_information,
    voxel_iou,
)
from primassembly.model import ModelConfig, PrimitiveTransformer
from primassembly.tokenization import Discretizer, dequantize, encode_assembly, quantize, sort_assembly
from primassembly.training import chamfer_loss, condition_array, dequantize_tensor, gumbel_noise, gumbel_softmax

from test_geometry import _distance_to_standard_surface
from test_metrics import _ri_pairs, _sc_sets, _voi_dict

LEVELS = {"translation": 128, "rotation": 180, "scale": 128}
OVERFIT_STEPS = 500
GENERALIZATION_ENV = "PRIMASSEMBLY_GENERALIZATION"


@pytest.fixture
def report(request):
    terminal = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(criterion, ok, detail):
        line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
        if terminal is not None:
            terminal.write_line("")
            terminal.write_line(line)
        else:
            print(line)
        return ok

    return emit


def _wrap(angles):
    return (np.asarray(angles) + math.pi) % (2 * math.pi) - math.pi


# -- 1 ----------------------------------------------------------------------------------------
def test_criterion_1_canonicalization_suite(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {"idempotence": 0.0, "orbit": 0.0, "shape": 0.0, "minimality": 0.0}
    n = 10_000
    for c in (CUBOID, ELLIPTICAL_CYLINDER, ELLIPSOID):
        scale = rng.uniform(0.05, 1.0, (n, 3))
        rotation = rng.uniform(-math.pi, math.pi, (n, 3))
        cs, cr, index = canonicalize_arrays(c, scale, rotation, return_index=True)
        again_s, again_r = canonicalize_arrays(c, cs, cr)
        worst["idempotence"] = max(worst["idempotence"], np.abs(again_r - cr).max(), np.abs(again_s - cs).max())

        group = symmetry_group(c)
        rmats = euler_to_matrix(rotation)
        variant_l1 = []
        for e in group:
            # independent Euler extraction for every orbit member
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                vr = _wrap(Rotation.from_matrix(rmats @ e.rotation_matrix).as_euler("xyz"))
            vs = scale[:, list(e.scale_permutation)]
            variant_l1.append(np.abs(vr).sum(axis=1))
            os_, or_ = canonicalize_arrays(c, vs, vr)
            worst["orbit"] = max(worst["orbit"], np.abs(or_ - cr).max(), np.abs(os_ - cs).max())
        lhs = euler_to_matrix(cr) * cs[:, None, :]
        qs = np.stack([group[i].rotation_matrix for i in index])
        rhs = (rmats * scale[:, None, :]) @ qs
        worst["shape"] = max(worst["shape"], np.abs(lhs - rhs).max())
        excess = np.abs(cr).sum(axis=1) - np.min(variant_l1, axis=0)
        worst["minimality"] = max(worst["minimality"], excess.max())
    elapsed = time.perf_counter() - start
    ok = (
        worst["idempotence"] <= 1e-9
        and worst["orbit"] <= 1e-6
        and worst["shape"] <= 1e-6
        and worst["minimality"] <= 1e-9
        and elapsed < 60
    )
    detail = ", ".join(f"{k} {v:.2e}" for k, v in worst.items())
    assert report(1, ok, f"({detail}; {elapsed:.1f}s)")


# -- 2 ----------------------------------------------------------------------------------------
def test_criterion_2_symmetry_sets(report):
    start = time.perf_counter()
    expected = {CUBOID: 10, ELLIPSOID: 10, ELLIPTICAL_CYLINDER: 6}
    counts, worst = {}, 0.0
    for c, count in expected.items():
        elements = symmetry_set(c)
        counts[c] = len({e.rotation_matrix.astype(int).tobytes() for e in elements})
        pts = sample_surface(Primitive(c, (1, 1, 1), (0, 0, 0), (0, 0, 0)), 4096, np.random.default_rng(c)).points
        for e in elements:
            worst = max(worst, _distance_to_standard_surface(c, pts @ e.rotation_matrix.T).max())
    elapsed = time.perf_counter() - start
    ok = counts == expected and worst < 1e-2 and elapsed < 60
    assert report(2, ok, f"(cuboid {counts[CUBOID]}, cylinder {counts[ELLIPTICAL_CYLINDER]}, "
                         f"ellipsoid {counts[ELLIPSOID]}; directed Hausdorff {worst:.2e}; {elapsed:.1f}s)")


# -- 3 ----------------------------------------------------------------------------------------
def test_criterion_3_quantization_roundtrip(report):
    rng = np.random.default_rng(3)
    n = 100_000
    samples = {
        "rotation": np.concatenate([rng.uniform(-math.pi, math.pi, n), [-math.pi, math.pi - 1e-12]]),
        "translation": np.concatenate([rng.uniform(-1, 1, n), [-1.0, 1.0]]),
        "scale": np.concatenate([rng.uniform(0, 1, n), [1e-9, 1.0]]),
    }
    bounds = {"rotation": math.pi / 180, "translation": 1 / 128, "scale": 1 / 256}
    errors, bins_used = {}, {}
    for kind, values in samples.items():
        bins = quantize(values, kind)
        errors[kind] = np.abs(values - dequantize(bins, kind)).max()
        bins_used[kind] = len(np.unique(bins))
    d = Discretizer()
    levels = {k: d.levels(k) for k in LEVELS}
    ok = (
        all(errors[k] <= bounds[k] + 1e-12 for k in bounds)
        and levels == LEVELS
        and bins_used == LEVELS
    )
    detail = ", ".join(f"{k} {errors[k]:.3e}<= {bounds[k]:.3e} ({levels[k]} bins)" for k in bounds)
    assert report(3, ok, f"({detail})")


# -- 4 ----------------------------------------------------------------------------------------
def _gradient_check(seed):
    rng = np.random.default_rng(seed)
    s = 2
    logits = {k: torch.as_tensor(rng.normal(size=(s, 3, LEVELS[k])) * 2) for k in LEVELS}
    noise = {k: gumbel_noise(v.shape, torch.Generator().manual_seed(seed), torch.float64) for k, v in logits.items()}
    gt = {"class": torch.as_tensor(rng.integers(3, size=s))}
    for k in LEVELS:
        gt[k] = dequantize_tensor(torch.as_tensor(rng.integers(LEVELS[k], size=(s, 3))), k, dtype=torch.float64)

    def loss_of(lg):
        return chamfer_loss({k: gumbel_softmax(lg[k], 1.0, noise=noise[k]) for k in lg}, gt, cd_points=32)

    kind = ("translation", "rotation", "scale")[seed % 3]
    leaf = {k: v.clone().requires_grad_(k == kind) for k, v in logits.items()}
    loss_of(leaf).backward()
    grad = leaf[kind].grad
    idx = np.unravel_index(int(grad.abs().argmax()), grad.shape)
    plus = {k: v.clone() for k, v in logits.items()}
    minus = {k: v.clone() for k, v in logits.items()}
    plus[kind][idx] += 1e-4
    minus[kind][idx] -= 1e-4
    numeric = (loss_of(plus) - loss_of(minus)).item() / 2e-4
    return abs(numeric - grad[idx].item()) / max(abs(numeric), 1e-12)


def test_criterion_4_chamfer_gradient(report):
    errors, times = [], []
    for seed in range(20):
        start = time.perf_counter()
        errors.append(_gradient_check(seed))
        times.append(time.perf_counter() - start)
    ok = max(errors) < 1e-2 and max(times) <= 5.0
    assert report(4, ok, f"(max relative error {max(errors):.2e} over 20 configs; slowest {max(times):.2f}s)")


# -- 5 ----------------------------------------------------------------------------------------
def test_criterion_5_metric_oracles(report):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    checks = {}

    a, b = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    d2 = ((a[:, None] - b[None]) ** 2).sum(-1)
    checks["cd"] = abs(chamfer_distance(a, b) - (d2.min(1).mean() + d2.min(0).mean())) <= 1e-12
    checks["hausdorff"] = abs(hausdorff(a, b) - math.sqrt(max(d2.min(1).max(), d2.min(0).max()))) <= 1e-12

    ok_emd = True
    for n in range(1, 9):
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        cost = np.linalg.norm(a[:, None] - b[None], axis=-1)
        best = min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))
        ok_emd &= abs(emd(a, b) - best) <= 1e-12
    checks["emd_bruteforce"] = ok_emd
    n = 64
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    cost = np.linalg.norm(a[:, None] - b[None], axis=-1)
    lp = linprog(
        cost.ravel(),
        A_eq=np.vstack([np.kron(np.eye(n), np.ones(n)), np.kron(np.ones(n), np.eye(n))]),
        b_eq=np.ones(2 * n),
        bounds=(0, None),
        method="highs",
    )
    checks["emd_exact_64"] = abs(emd(a, b) - lp.fun / n) <= 1e-9

    ok_seg = True
    for size in (2, 17, 100, 200):
        x = rng.integers(0, 5, size).tolist()
        y = rng.integers(0, 4, size).tolist()
        ok_seg &= abs(rand_index(x, y) - _ri_pairs(x, y)) <= 1e-9
        ok_seg &= abs(variation_of_information(x, y) - _voi_dict(x, y)) <= 1e-9
        ok_seg &= abs(segmentation_covering(x, y) - _sc_sets(x, y)) <= 1e-9
    checks["segmentation"] = ok_seg

    def cell(i, j, k):
        return -1 + (np.array([i, j, k]) + 0.5) / 16

    grids = [
        # {0,1,2} vs {2,(5,5,5)}: 1 shared of 4
        (np.stack([cell(0, 0, 0), cell(1, 0, 0), cell(2, 0, 0)]), np.stack([cell(2, 0, 0), cell(5, 5, 5)]), 0.25),
        # identical two-cell sets, duplicates inside a cell
        (np.stack([cell(3, 3, 3), cell(3, 3, 3), cell(9, 9, 9)]), np.stack([cell(9, 9, 9), cell(3, 3, 3)]), 1.0),
        # {a,b,c,d} vs {c,d,e}: 2 shared of 5
        (
            np.stack([cell(0, 0, 0), cell(0, 0, 1), cell(0, 1, 0), cell(1, 0, 0)]),
            np.stack([cell(0, 1, 0), cell(1, 0, 0), cell(31, 31, 31)]),
            0.4,
        ),
    ]
    checks["voxel_iou"] = all(voxel_iou(p, q) == want for p, q, want in grids)
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    assert report(5, ok, f"({len(checks) - len(failed)}/{len(checks)} oracle groups agree{'; failed ' + ', '.join(failed) if failed else ''}; {elapsed:.1f}s)")


# -- 6 and 9: overfit runs --------------------------------------------------------------------
def _overfit_records(canonical=True):
    return generate_dataset(GeneratorConfig(count_range=(1, 6), seed=1, canonicalize=canonical), 64, 2048)


def _fit(records, **flags):
    est = PrimitiveAssembler(max_steps=OVERFIT_STEPS, epochs=10**6, batch_size=16, learning_rate=1e-3, random_state=0, **flags)
    start = time.perf_counter()
    est.fit([r.points.points for r in records], [r.assembly for r in records])
    return est, time.perf_counter() - start


def _mean_scores(est, records, gt_records=None):
    gt_records = gt_records or records
    preds = est.predict([r.points.points for r in records])
    reports = [evaluate(p, g.assembly) if len(p) else None for p, g in zip(preds, gt_records)]
    iou = np.mean([r.voxel_iou if r else 0.0 for r in reports])
    ri = np.mean([r.ri if r else 0.0 for r in reports])
    return float(iou), float(ri)


@pytest.fixture(scope="module")
def overfit():
    records = _overfit_records()
    est, seconds = _fit(records)
    return records, est, seconds


def test_criterion_6_overfit(report, overfit):
    records, est, seconds = overfit
    targets = [encode_assembly(sort_assembly(canonicalize(p) for p in r.assembly)).as_array() for r in records]
    results = est.generate([r.points.points for r in records])
    exact = np.mean([np.array_equal(res.tokens, t) and res.terminated_by_eos for res, t in zip(results, targets)])
    iou, ri = _mean_scores(est, records)
    ok = exact >= 0.9 and iou >= 0.8 and ri >= 0.9 and seconds <= 30 * 60
    assert report(6, ok, f"(exact sequences {exact:.1%}, mean voxel IoU {iou:.3f}, mean RI {ri:.3f}, "
                         f"{OVERFIT_STEPS} steps in {seconds / 60:.1f} min)")


def test_trained_encoder_separates_shapes(overfit):
    records, est, _ = overfit
    model = est.model_
    rng = np.random.default_rng(11)
    same, other = [], []

    def pooled(points):
        arr = torch.as_tensor(condition_array(points, model.cfg.condition_points), dtype=torch.float32)
        with torch.no_grad():
            return model.encode_condition(arr[None]).mean(dim=1)[0]

    for i in range(20):
        a, b = records[2 * i], records[2 * i + 1]
        resample = assembly_surface(a.assembly, 2048, rng).points
        base = pooled(a.points.points)
        same.append(torch.cosine_similarity(base, pooled(resample), dim=0).item())
        other.append(torch.cosine_similarity(base, pooled(b.points.points), dim=0).item())
    assert np.mean(other) < np.mean(same), (np.mean(other), np.mean(same))


def test_criterion_9_ablations(report, overfit):
    records, full, _ = overfit
    full_iou, _ = _mean_scores(full, records)
    scores = {}
    raw = _overfit_records(canonical=False)
    est, _ = _fit(raw, canonicalize=False)
    scores["no canonicalization"] = _mean_scores(est, raw, records)[0]
    est, _ = _fit(records, cascade=False)
    scores["no cascade"] = _mean_scores(est, records)[0]
    est, _ = _fit(records, use_cd_loss=False)
    scores["no CD loss"] = _mean_scores(est, records)[0]
    ok = all(full_iou >= v for v in scores.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in scores.items())
    assert report(9, ok, f"(full voxel IoU {full_iou:.3f}; {detail})")


# -- 7 ----------------------------------------------------------------------------------------
def _bounding_box_baseline(points):
    lo, hi = points.min(axis=0), points.max(axis=0)
    half = np.clip((hi - lo) / 2, 1e-3, 1.0)
    return Assembly((Primitive(CUBOID, half, (0, 0, 0), (hi + lo) / 2),))


def test_criterion_7_generalization(report):
    if os.environ.get(GENERALIZATION_ENV) != "1":
        report(7, False, f"(not run: set {GENERALIZATION_ENV}=1; needs an overnight CPU budget)")
        pytest.skip(f"set {GENERALIZATION_ENV}=1 to run the generalization smoke")
    steps = int(os.environ.get(f"{GENERALIZATION_ENV}_STEPS", "20000"))
    gen = GeneratorConfig(seed=7)
    train_records = generate_dataset(gen, 5000, 2048)
    held_out = generate_dataset(gen, 200, 2048, start=5000)
    est = PrimitiveAssembler(max_steps=steps, epochs=10**6, batch_size=16, lr_schedule="cosine", random_state=0)
    start = time.perf_counter()
    est.fit([r.points.points for r in train_records], [r.assembly for r in train_records])
    hours = (time.perf_counter() - start) / 3600
    preds = est.predict([r.points.points for r in held_out])
    ious, base, count_ok = [], [], []
    for pred, rec in zip(preds, held_out):
        ious.append(evaluate(pred, rec.assembly).voxel_iou if len(pred) else 0.0)
        base.append(evaluate(_bounding_box_baseline(rec.points.points), rec.assembly).voxel_iou)
        count_ok.append(abs(len(pred) - len(rec.assembly)) <= 1)
    gain = np.mean(ious) - np.mean(base)
    ok = gain >= 0.10 and np.mean(count_ok) >= 0.7
    assert report(7, ok, f"(voxel IoU {np.mean(ious):.3f} vs box {np.mean(base):.3f}, gain {gain:+.3f}; "
                         f"count within 1 for {np.mean(count_ok):.1%}; {steps} steps in {hours:.2f} h)")


# -- 8 ----------------------------------------------------------------------------------------
def test_criterion_8_causality_and_determinism(report):
    violations = 0
    cfg = ModelConfig()
    for seed in range(20):
        torch.manual_seed(seed)
        model = PrimitiveTransformer(cfg).eval()
        cond = torch.randn(1, cfg.condition_tokens, cfg.hidden_size)
        h = torch.randn(1, 6, cfg.hidden_size)
        with torch.no_grad():
            base = model.forward_sequence(cond, h)
            for j in range(6):
                moved = h.clone()
                moved[0, j] += torch.randn(cfg.hidden_size) * 5
                out = model.forward_sequence(cond, moved)
                # primitive j enters at step position j + 1
                if (out[0, : j + 1] - base[0, : j + 1]).abs().max() >= 1e-5:
                    violations += 1
                if (out[0, j + 1:] - base[0, j + 1:]).abs().max() <= 1e-6:
                    violations += 1
    torch.manual_seed(0)
    model = PrimitiveTransformer(cfg).eval()
    cloud = assembly_surface(_overfit_records()[0].assembly, 2048, np.random.default_rng(0)).points
    sc = SamplingConfig(max_len=8, eos_threshold=0.999)
    runs = [generate(cloud, model, sc) for _ in range(3)]
    stable = all(
        np.array_equal(r.tokens, runs[0].tokens) and r.eos_probabilities == runs[0].eos_probabilities for r in runs
    )
    ok = violations == 0 and stable
    assert report(8, ok, f"({violations} causality violations over 20 models x 6 positions; "
                         f"greedy decoding {'bit-stable' if stable else 'NOT stable'} over 3 runs)")
