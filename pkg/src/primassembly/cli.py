"""Command line: gen-data, train, infer, eval, canon, export-mesh."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import data as data_mod
from .config import RunConfig, dump_config, resolve_config
from .exceptions import (
    ConfigError,
    DatasetParseError,
    NonFiniteLossError,
    PrimAssemblyError,
    SchemaVersionError,
)
from .geometry import Assembly, PointCloud, canonicalize, class_name, primitive_mesh
from .inference import generate
from .metrics import aggregate, evaluate, write_report_csv, write_report_json
from .model import PrimitiveTransformer, load_checkpoint, save_checkpoint
from .tokenization import DEFAULT_DISCRETIZER, encode_assembly, sort_assembly
from .training import train

logger = logging.getLogger("primassembly")

OUT_ENV = "PRIMASSEMBLY_OUT"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_PARSE = 4
EXIT_VALIDATION = 5
EXIT_RUNTIME = 6


class CliError(Exception):
    def __init__(self, kind, code, message):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _classify(exc):
    if isinstance(exc, CliError):
        return exc.kind, exc.code
    if isinstance(exc, FileNotFoundError):
        return "file_not_found", EXIT_NOT_FOUND
    if isinstance(exc, (DatasetParseError, SchemaVersionError, json.JSONDecodeError)):
        return "parse_error", EXIT_PARSE
    if isinstance(exc, ConfigError):
        return "config_error", EXIT_VALIDATION
    if isinstance(exc, NonFiniteLossError):
        return "non_finite_loss", EXIT_RUNTIME
    if isinstance(exc, (PrimAssemblyError, ValueError)):
        return "validation_error", EXIT_VALIDATION
    return "internal_error", EXIT_INTERNAL


# -- helpers -----------------------------------------------------------------------
def _out_dir(args, command):
    root = args.out or os.environ.get(OUT_ENV) or str(Path("runs") / command)
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _training_target(assembly, canonical):
    if canonical:
        assembly = Assembly(tuple(canonicalize(p) for p in assembly))
    return sort_assembly(assembly)


def _records_from(path):
    """Records from a dataset file or from a directory of single-record JSON files."""
    path = _require(path, "dataset")
    if path.is_dir():
        return [data_mod.read_assembly_json(f) for f in sorted(path.glob("*.json"))]
    return data_mod.read_dataset(path)


# -- commands ----------------------------------------------------------------------
def cmd_gen_data(cfg: RunConfig, out: Path, args):
    records = data_mod.generate_dataset(
        cfg.data.generator, cfg.data.count, cfg.data.n_points, id_prefix=cfg.data.id_prefix
    )
    target = out / "dataset.jsonl"
    data_mod.write_dataset(records, target, external_points=cfg.data.external_points)
    return {"dataset": str(target), "records": len(records)}


def cmd_train(cfg: RunConfig, out: Path, args):
    dataset_path = args.data or cfg.paths.dataset
    if dataset_path is None:
        raise CliError("usage_error", EXIT_USAGE, "train needs --data or paths.dataset")
    records = _records_from(dataset_path)
    canonical = cfg.data.generator.canonicalize
    samples = []
    for r in records:
        if r.points is None:
            raise CliError("validation_error", EXIT_VALIDATION, f"record {r.id} has no point cloud")
        target = _training_target(r.assembly, canonical)
        samples.append(encode_assembly(target, condition=r.points, sample_id=r.id, require_canonical=canonical))
    train_cfg = cfg.train
    train_cfg.log_path = str(out / "train_log.csv")
    if train_cfg.checkpoint_every and not train_cfg.checkpoint_dir:
        train_cfg.checkpoint_dir = str(out / "checkpoints")
    torch.manual_seed(cfg.seed)
    if args.resume:
        model, _, _ = load_checkpoint(_require(args.resume, "checkpoint"))
    else:
        model = PrimitiveTransformer(cfg.model)
    result = train(samples, model, train_cfg, DEFAULT_DISCRETIZER, resume_from=args.resume)
    target = out / "model.pt"
    save_checkpoint(target, result.model, DEFAULT_DISCRETIZER, {"run_config": cfg.to_dict()})
    return {"checkpoint": str(target), "steps": result.steps, "final_loss": result.log[-1]["total"] if result.log else None}


def cmd_infer(cfg: RunConfig, out: Path, args):
    ckpt = args.checkpoint or cfg.paths.checkpoint
    if ckpt is None:
        raise CliError("usage_error", EXIT_USAGE, "infer needs --checkpoint or paths.checkpoint")
    model, discretizer, _ = load_checkpoint(_require(ckpt, "checkpoint"))
    written = []
    for item in args.inputs:
        path = _require(item, "point file")
        points = data_mod.read_points_file(path)
        result = generate(points, model, cfg.sampling, discretizer)
        target = out / f"{path.stem}.json"
        data_mod.write_assembly_json(
            target,
            result.assembly,
            record_id=path.stem,
            extra={
                "diagnostics": {
                    "eos_probabilities": result.eos_probabilities,
                    "tokens": result.tokens.tolist(),
                    "terminated_by_eos": result.terminated_by_eos,
                    "terminated_by_limit": result.terminated_by_limit,
                }
            },
        )
        written.append(str(target))
    return {"assemblies": written}


def cmd_eval(cfg: RunConfig, out: Path, args):
    pred_dir = _require(args.pred, "prediction directory")
    gt = {r.id: r for r in _records_from(args.gt)}
    reports = []
    for f in sorted(pred_dir.glob("*.json")):
        pred = data_mod.read_assembly_json(f)
        key = pred.id if pred.id in gt else f.stem
        if key not in gt:
            raise CliError("validation_error", EXIT_VALIDATION, f"no ground truth for prediction {f.name}")
        ref = gt[key]
        if len(ref.assembly):
            reference = ref.assembly
        elif ref.points is not None:
            reference = PointCloud(ref.points.points, ref.labels)
        else:
            raise CliError("validation_error", EXIT_VALIDATION, f"ground truth {key} has neither primitives nor points")
        reports.append(evaluate(pred.assembly, reference, cfg.eval, sample_id=key))
    if not reports:
        raise CliError("validation_error", EXIT_VALIDATION, f"no prediction files in {pred_dir}")
    write_report_csv(out / "report.csv", reports)
    write_report_json(out / "report.json", reports)
    return {"report": str(out / "report.json"), **aggregate(reports)}


def cmd_canon(cfg: RunConfig, out: Path, args):
    src = _require(args.assembly, "assembly file")
    record = data_mod.read_assembly_json(src)
    assembly = Assembly(tuple(canonicalize(p) for p in record.assembly))
    if args.sort:
        assembly = sort_assembly(assembly)
    target = out / src.name
    data_mod.write_assembly_json(target, assembly, record_id=record.id)
    return {"assembly": str(target)}


def write_obj(path, assembly: Assembly, resolution=16):
    """One ``g prim_<index>_<class>`` group per primitive, 1-based shared vertex indices."""
    lines = []
    offset = 1
    for index, p in enumerate(assembly):
        vertices, faces = primitive_mesh(p, resolution)
        lines.append(f"g prim_{index}_{class_name(p.class_label)}")
        lines.extend(f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in vertices)
        lines.extend(f"f {a + offset} {b + offset} {c + offset}" for a, b, c in faces)
        offset += len(vertices)
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_export_mesh(cfg: RunConfig, out: Path, args):
    src = _require(args.assembly, "assembly file")
    record = data_mod.read_assembly_json(src)
    target = out / f"{src.stem}.obj"
    write_obj(target, record.assembly, args.resolution)
    return {"mesh": str(target), "primitives": len(record.assembly)}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "canon": cmd_canon,
    "export-mesh": cmd_export_mesh,
}


# -- argument parsing ----------------------------------------------------------------
class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage_error", EXIT_USAGE, message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file")
    common.add_argument("--seed", type=int, help="seed for every stochastic stage")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or runs/<command>)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _ArgumentParser(prog="primassembly", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", help="dataset file or directory")
    p.add_argument("--resume", help="training checkpoint to continue from")
    p = sub.add_parser("infer", parents=[common], help="generate assemblies for point files")
    p.add_argument("--checkpoint")
    p.add_argument("inputs", nargs="+", help="point files (.bin, .ply, .npy, .xyz)")
    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred", help="directory of predicted assembly JSON files")
    p.add_argument("gt", help="ground-truth dataset file or directory")
    p = sub.add_parser("canon", parents=[common], help="canonicalize every primitive of an assembly")
    p.add_argument("assembly")
    p.add_argument("--sort", action="store_true", help="also sort primitives by centroid")
    p = sub.add_parser("export-mesh", parents=[common], help="write an assembly as OBJ")
    p.add_argument("assembly")
    p.add_argument("--resolution", type=int, default=16)
    return parser


def split_overrides(argv):
    """Separate ``--section.key value`` pairs from ordinary arguments."""
    rest, overrides = [], []
    i = 0
    while i < len(argv):
        arg = argv[i]
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            key, eq, value = arg[2:].partition("=")
            if not eq:
                if i + 1 >= len(argv):
                    raise CliError("usage_error", EXIT_USAGE, f"override {arg} needs a value")
                value = argv[i + 1]
                i += 1
            overrides.append((key, value))
        else:
            rest.append(arg)
        i += 1
    return rest, overrides


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    rest, overrides = split_overrides(argv)
    args = build_parser().parse_args(rest)
    if args.seed is not None:
        for key in ("seed", "train.seed", "data.generator.seed", "sampling.seed", "eval.seed"):
            overrides.append((key, args.seed))
    config_file = None
    if args.config:
        config_file = _require(args.config, "config file")
    cfg = resolve_config(config_file, overrides)
    out = _out_dir(args, args.command)
    dump_config(cfg, out / "config.yaml")
    summary = COMMANDS[args.command](cfg, out, args)
    print(json.dumps({"status": "ok", "command": args.command, **summary}, default=_json_default))
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    return str(obj)


def main(argv=None):
    verbose = argv is not None and ("-v" in argv or "--verbose" in argv)
    verbose = verbose or (argv is None and ("-v" in sys.argv or "--verbose" in sys.argv))
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        kind, code = _classify(exc)
        message = str(exc).replace("\n", " ")
        print(json.dumps({"status": "error", "error": kind, "exit_code": code, "message": message}), file=sys.stderr)
        if code == EXIT_INTERNAL:
            logger.debug("internal error", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
