"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Failures print one machine-readable line to stderr:
``error\t{"code": ..., "message": ...}``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NonFiniteGradientError
from .brep import (GeometryError, SchemaError, UnsupportedPrimitiveError,
                   brep_to_doc, load_brep, parse_brep)
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (FAMILIES, PartRecord, build_dataset, even_counts,
                     generate_corpus, load_dataset, normalize_part,
                     save_dataset)
from .geometry import SamplingError
from .training import (TrainConfig, accuracy_curve, embed_all, evaluate_model,
                       load_codes, pretrain, random_codes, save_codes,
                       train_fewshot, write_curve_table, write_report)

USAGE_EXIT = 1
DATA_EXIT = 2
NUMERIC_EXIT = 3

_DATA_ERRORS = (SchemaError, UnsupportedPrimitiveError, GeometryError,
                SamplingError, FileNotFoundError, NotADirectoryError,
                json.JSONDecodeError, KeyError, ValueError)
_NUMERIC_ERRORS = (NonFiniteGradientError, FloatingPointError,
                   ZeroDivisionError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail("usage", message, USAGE_EXIT)


def _fail(code: str, message: str, exit_code: int):
    line = json.dumps({"code": code, "message": str(message)})
    print(f"error\t{line}", file=sys.stderr)
    raise SystemExit(exit_code)


def _load_config(args) -> TrainConfig:
    doc = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
    cfg = TrainConfig.from_doc(doc)
    for name in ("lr", "epochs", "seed", "hidden", "batch_parts", "patience",
                 "lam", "head_epochs", "head_patience", "threads"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    return cfg


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    families = args.families.split(",") if args.families else list(FAMILIES)
    unknown = [f for f in families if f not in FAMILIES]
    if unknown:
        raise ValueError(f"unknown families: {unknown}")
    counts = {f: 0 for f in FAMILIES}
    share = even_counts(args.count)
    order = [f for f in FAMILIES if f in families]
    base = args.count // len(order)
    for f in order:
        counts[f] = base
    for f in order[: args.count - base * len(order)]:
        counts[f] += 1
    records = generate_corpus(counts, args.seed)

    out = Path(args.out)
    (out / "parts").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        doc = brep_to_doc(rec.brep, extra={
            "face_labels": [int(x) for x in rec.face_labels],
            "part_label": int(rec.part_label),
            "split": rec.split,
        })
        (out / "parts" / f"{rec.name}.json").write_text(
            json.dumps(doc, indent=1, sort_keys=True) + "\n")
        entries.append({"name": rec.name, "family": FAMILIES[rec.part_label],
                        "split": rec.split})
    manifest = {"generator": "brepfields", "version": __version__,
                "seed": args.seed, "counts": {f: counts[f] for f in order},
                "parts": entries}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"generated {len(records)} parts in {out}")
    return 0


def _load_gen_dir(path: Path) -> list:
    manifest = json.loads((path / "manifest.json").read_text())
    records = []
    for entry in manifest["parts"]:
        doc = json.loads((path / "parts" / f"{entry['name']}.json").read_text())
        brep = parse_brep(doc)
        records.append(PartRecord(brep, list(doc["face_labels"]),
                                  int(doc["part_label"]), doc["split"]))
    return records


def cmd_dataset(args) -> int:
    records = _load_gen_dir(Path(getattr(args, "in")))
    ds = build_dataset(records, seed=args.seed, n_keep=args.samples,
                       threads=args.threads)
    save_dataset(ds, args.out)
    n_err = len(ds.sampling_errors)
    print(f"dataset: {len(ds.parts)} parts, {ds.total_faces()} faces, "
          f"{n_err} sampling errors -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    ds = load_dataset(args.dataset)
    cfg = _load_config(args)
    ck, report = pretrain(ds, cfg, progress=args.progress)
    save_checkpoint(args.out, ck.params, ck.adam, cfg.to_doc())
    report_path = args.report or (str(args.out) + ".report.json")
    write_report(report, report_path)
    if report.aborted:
        _fail("aborted", report.aborted, NUMERIC_EXIT)
    metrics = evaluate_model(ck.params, ds, "val")
    print(f"pretrained: best val loss {report.final_metrics['best_val_loss']:.3e} "
          f"val xyz {metrics['xyz_error']:.4f} sdf {metrics['sdf_error']:.4f}")
    return 0


def cmd_embed(args) -> int:
    ds = load_dataset(args.dataset)
    ck = load_checkpoint(args.ckpt)
    store = embed_all(ck.params, ds)
    save_codes(store, args.out)
    n = sum(len(v) for v in store.values())
    print(f"embedded {n} faces over {len(store)} parts -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    if args.random_codes:
        codes = random_codes(ds, seed=args.seed)
    else:
        codes = load_codes(args.codes)
    cfg = _load_config(args)
    result = train_fewshot(ds, codes, args.task, args.size, args.seed, cfg)
    if args.out:
        save_checkpoint(args.out, result.head_params, None,
                        {"task": args.task, "size": args.size,
                         "seed": args.seed})
    print(f"task {args.task} size {args.size} seed {args.seed} "
          f"accuracy {result.accuracy:.4f}")
    return 0


def cmd_curve(args) -> int:
    ds = load_dataset(args.dataset)
    codes = load_codes(args.codes)
    sizes = [int(s) for s in args.sizes.split(",")]
    cfg = _load_config(args)
    points = accuracy_curve(ds, codes, args.task, sizes, n_seeds=args.seeds,
                            config=cfg)
    write_curve_table(points, args.out)
    for p in points:
        print(f"size {p.train_size}: mean {p.mean:.4f} "
              f"ci [{p.ci_lo:.4f}, {p.ci_hi:.4f}]")
    return 0


def cmd_raster(args) -> int:
    from .rasterize import export_obj, rasterize_part

    ds = load_dataset(args.dataset)
    ck = load_checkpoint(args.ckpt)
    names = [p.name for p in ds.parts]
    if args.part not in names:
        raise ValueError(f"part {args.part!r} not in dataset")
    store = embed_all(ck.params, ds)
    meshes = rasterize_part(ck.params, store[args.part], resolution=args.res)
    export_obj(meshes, args.out)
    kept = sum(len(m.vertices) for m in meshes)
    print(f"rasterized {args.part} at {args.res}x{args.res}: "
          f"{kept} vertices -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    from .shapefit import FitProblem, fit, load_cloud

    ck = load_checkpoint(args.ckpt)
    brep = load_brep(args.part)
    norm, _ = normalize_part(brep)
    target = load_cloud(args.target)
    problem = FitProblem(norm, args.free.split(","), target, tau=args.tau,
                         step_size=args.step_size, steps=args.steps)
    trace, fitted = fit(problem, ck.params)
    from .brep import save_brep
    save_brep(fitted, args.out)
    if args.trace:
        doc = {"losses": trace.losses, "notes": trace.notes,
               "chamfer_initial": trace.chamfer_initial,
               "chamfer_final": trace.chamfer_final}
        Path(args.trace).write_text(json.dumps(doc, indent=1, sort_keys=True)
                                    + "\n")
    print(f"fit: chamfer {trace.chamfer_initial:.6f} -> "
          f"{trace.chamfer_final:.6f} over {len(trace.losses)} steps")
    return 0


def cmd_validate(args) -> int:
    brep = load_brep(getattr(args, "in"))
    v, e, f = brep.counts()
    print(f"{f} faces, {e} edges, {v} vertices")
    return 0


# -- wiring ------------------------------------------------------------------------

def build_parser() -> _Parser:
    p = _Parser(prog="brepfields",
                description="Self-supervised per-face geometry embeddings "
                            "for CAD boundary representations.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_flags(sp):
        sp.add_argument("--config", help="JSON config file (TrainConfig keys)")
        sp.add_argument("--lr", type=float, help="learning rate")
        sp.add_argument("--epochs", type=int, help="pretraining epochs")
        sp.add_argument("--seed", type=int, default=None, help="run seed")
        sp.add_argument("--hidden", type=int, help="decoder hidden width")
        sp.add_argument("--batch-parts", dest="batch_parts", type=int,
                        help="parts per optimizer step")
        sp.add_argument("--patience", type=int,
                        help="early-stop patience (validation evaluations)")
        sp.add_argument("--lam", type=float, help="sdf loss weight")
        sp.add_argument("--head-epochs", dest="head_epochs", type=int,
                        help="head training epochs")
        sp.add_argument("--head-patience", dest="head_patience", type=int,
                        help="head early-stop patience")
        sp.add_argument("--threads", type=int, help="worker thread cap")

    sp = sub.add_parser("gen", help="generate a synthetic labeled corpus")
    sp.add_argument("--families", help="comma list (default: all families)")
    sp.add_argument("--count", type=int, required=True, help="total parts")
    sp.add_argument("--seed", type=int, default=0, help="generator seed")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("dataset", help="normalize parts and sample faces")
    sp.add_argument("--in", required=True, help="gen output directory")
    sp.add_argument("--out", required=True, help="dataset directory")
    sp.add_argument("--seed", type=int, default=0, help="sampling seed")
    sp.add_argument("--samples", type=int, default=500,
                    help="kept samples per face")
    sp.add_argument("--threads", type=int, default=1, help="worker thread cap")
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("pretrain", help="train the encoder/decoder")
    sp.add_argument("--dataset", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--report", help="run report path")
    sp.add_argument("--progress", action="store_true",
                    help="print per-epoch progress")
    add_config_flags(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("embed", help="compute and store face codes")
    sp.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    sp.add_argument("--dataset", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="face-code store path")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("train", help="train a few-shot head")
    sp.add_argument("--task", choices=("seg", "cls", "mlp"), required=True,
                    help="task head")
    sp.add_argument("--size", type=int, required=True,
                    help="training parts drawn from the train split")
    sp.add_argument("--dataset", required=True, help="dataset directory")
    sp.add_argument("--codes", help="face-code store path")
    sp.add_argument("--random-codes", action="store_true",
                    help="use frozen random codes (baseline)")
    sp.add_argument("--out", help="head checkpoint path")
    add_config_flags(sp)
    sp.set_defaults(func=cmd_train, seed=0)

    sp = sub.add_parser("curve", help="accuracy vs train size with CIs")
    sp.add_argument("--task", choices=("seg", "cls", "mlp"), required=True,
                    help="task head")
    sp.add_argument("--sizes", required=True, help="comma list, e.g. 10,50")
    sp.add_argument("--seeds", type=int, default=10, help="training runs per size")
    sp.add_argument("--dataset", required=True, help="dataset directory")
    sp.add_argument("--codes", required=True, help="face-code store path")
    sp.add_argument("--out", required=True, help="TSV table path")
    add_config_flags(sp)
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("raster", help="rasterize a part to OBJ")
    sp.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    sp.add_argument("--dataset", required=True, help="dataset directory")
    sp.add_argument("--part", required=True, help="part name")
    sp.add_argument("--res", type=int, default=100, help="grid resolution")
    sp.add_argument("--out", required=True, help="OBJ path")
    sp.set_defaults(func=cmd_raster)

    sp = sub.add_parser("fit", help="fit shape parameters to a point cloud")
    sp.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    sp.add_argument("--part", required=True, help="B-Rep document")
    sp.add_argument("--target", required=True, help="XYZ or PLY cloud")
    sp.add_argument("--free", required=True,
                    help="comma list, e.g. face:1:origin,face:1:axis")
    sp.add_argument("--steps", type=int, default=200, help="SGD steps")
    sp.add_argument("--step-size", dest="step_size", type=float, default=1e-2, help="SGD step size")
    sp.add_argument("--tau", type=float, default=0.02, help="soft clip-filter temperature")
    sp.add_argument("--out", required=True, help="fitted B-Rep document")
    sp.add_argument("--trace", help="fit trace JSON path")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("validate", help="parse and validate a document")
    sp.add_argument("--in", required=True, help="B-Rep document")
    sp.set_defaults(func=cmd_validate)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except _NUMERIC_ERRORS as exc:
        _fail(type(exc).__name__, exc, NUMERIC_EXIT)
    except _DATA_ERRORS as exc:
        _fail(type(exc).__name__, exc, DATA_EXIT)
    return 0


if __name__ == "__main__":
    sys.exit(main())
