"""Command-line entry point.

Exit codes: 0 success, 2 configuration / input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import io
from .anchors import CropConfig, propose
from .config import RunConfig, load_config, parse_config
from .data import LabeledSet, generate, load_image_dir, save_image_dir, split
from .errors import ConfigError, MGMLError, ParseError
from .model import MGMLNet, parse_branches
from .tensor import Tensor
from .training import EvalReport, evaluate, metrics_csv, repeated_runs, train

log = logging.getLogger("mgml")

ABLATION_VARIANTS = (
    ("baseline", "mb"),
    ("+FFB", "mb,ffb"),
    ("+FEM", "mb,fem"),
    ("full", "mb,ffb,fem"),
)


def _write(path: Path, data: bytes | str) -> None:
    """Atomic write: readers never see a half-written file."""
    if isinstance(data, str):
        data = data.encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def build_datasets(cfg: RunConfig) -> tuple[LabeledSet, LabeledSet]:
    d = cfg.data
    if d.source == "synthetic":
        full = generate(d.scene, d.per_class)
    else:
        full = load_image_dir(d.directory, d.manifest or None)
    if full.num_classes != cfg.model.num_classes:
        raise ConfigError(f"num_classes = {cfg.model.num_classes} but the dataset has {full.num_classes} classes")
    size = full.images.shape[2:]
    if tuple(size) != tuple(cfg.model.input_size):
        raise ConfigError(f"images are {size[0]}x{size[1]} but data.image_size is {cfg.model.input_size[0]}")
    return split(full, d.training_rate, d.seed)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=getattr(args, "seed", None), branches=getattr(args, "branches", None),
                              strategy=getattr(args, "strategy", None), sigma=getattr(args, "sigma", None),
                              k=getattr(args, "k", None))


def _model_from_checkpoint(path) -> tuple[RunConfig, MGMLNet]:
    text, params = io.load_checkpoint(path)
    cfg = parse_config(text, f"{path} (embedded config)")
    model = MGMLNet(cfg.model)
    io.load_into(model, params)
    return cfg, model


# ---------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out)
    train_set, test_set = build_datasets(cfg)
    model = MGMLNet(cfg.model)
    result = train(model, train_set, cfg.train, test_set, cfg.branches)
    report = evaluate(model, test_set, cfg.branches)
    params = [(name, p.data) for name, p in model.named_parameters()]
    _write(out / "checkpoint.mgc", io.checkpoint_to_bytes(params, cfg.text))
    _write(out / "metrics.csv", metrics_csv(result.rows))
    _write(out / "summary.txt", "[config]\n" + cfg.text + "\n[test]\n" + report.summary())
    print(f"trained {cfg.train.epochs} epochs; test OA {report.mean:.2f}%; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg, model = _model_from_checkpoint(args.checkpoint)
    if args.config:
        cfg = _load_run_config(args)
    branches = parse_branches(args.branches) if args.branches else cfg.branches
    _, test_set = build_datasets(cfg)
    report = evaluate(model, test_set, branches)
    text = report.summary()
    sys.stdout.write(text)
    if args.out:
        _write(Path(args.out) / "eval.txt", text)
    return 0


def ablation_table(rows: list[tuple[str, EvalReport]]) -> str:
    width = max(len(name) for name, _ in rows)
    lines = [f"{'model':<{width}}  {'mean_oa':>8}  {'std_oa':>7}  {'pair_oa':>8}"]
    for name, rep in rows:
        lines.append(f"{name:<{width}}  {rep.mean:8.2f}  {rep.std:7.2f}  {rep.mean_pair_accuracy():8.2f}")
    return "\n".join(lines) + "\n"


def ablation_csv(rows: list[tuple[str, EvalReport]]) -> str:
    lines = ["model,mean_oa,std_oa,pair_oa,oa_runs"]
    for name, rep in rows:
        runs = " ".join(repr(float(v)) for v in rep.oa_runs)
        lines.append(f"{name},{rep.mean!r},{rep.std!r},{rep.mean_pair_accuracy()!r},{runs}")
    return "\n".join(lines) + "\n"


def run_ablation(cfg: RunConfig, compare_crops: bool = False) -> list[tuple[str, EvalReport]]:
    """Four branch variants, or (with ``compare_crops``) the full model under 7-crop and 9-crop."""
    train_set, test_set = build_datasets(cfg)
    rows = []
    if compare_crops:
        preset = "tiny" if cfg.model.backbone.stages[0].out_channels == 16 else "resnet34-like"
        for label, crop in (("7crop", CropConfig("seven_crop", cfg.model.crop.sigma)),
                            ("9crop", CropConfig("grid_crop", cfg.model.crop.sigma, 2))):
            model_cfg = replace(cfg.model, crop=crop)
            rep, _ = repeated_runs(model_cfg, cfg.train, train_set, test_set, cfg.branches)
            rows.append((f"MGML-FENet({preset})-{label}", rep))
        return rows
    for name, branches in ABLATION_VARIANTS:
        rep, _ = repeated_runs(cfg.model, cfg.train, train_set, test_set, branches)
        rows.append((name, rep))
    return rows


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    rows = run_ablation(cfg, args.compare_crops)
    table = ablation_table(rows)
    sys.stdout.write(table)
    if args.out:
        stem = "crops" if args.compare_crops else "ablation"
        _write(Path(args.out) / f"{stem}.txt", table)
        _write(Path(args.out) / f"{stem}.csv", ablation_csv(rows))
    return 0


def cmd_inspect_anchors(args) -> int:
    crop = CropConfig(args.strategy, args.sigma, args.k)
    for a in propose(crop, args.h, args.w):
        print(a)
    return 0


FEATURE_NAMES = [f"F{i}" for i in range(5)] + [f"G{i}" for i in range(5)] + ["v3", "v4"]


def cmd_dump_features(args) -> int:
    cfg, model = _model_from_checkpoint(args.checkpoint)
    train_set, test_set = build_datasets(cfg)
    data = test_set if args.split == "test" else train_set
    if not 0 <= args.index < len(data):
        raise ConfigError(f"sample index {args.index} out of range for {len(data)} {args.split} samples")
    x = Tensor(data.images[args.index : args.index + 1])
    out = model.forward_ensemble(x, keep_features=True)
    target = Path(args.out)
    for name in FEATURE_NAMES:
        _write(target / f"{name}.mgt", io.tensor_to_bytes(out.features[name]))
    lines = [f"label {int(data.labels[args.index])}", f"predicted {int(out.predict()[0])}"]
    for name, p in (("p_mb", out.p_mb), ("p_ffb", out.p_ffb), ("p_fem3", out.p_fem3),
                    ("p_fem4", out.p_fem4), ("p_sum", out.p_sum)):
        lines.append(name + " " + " ".join(repr(float(v)) for v in p[0]))
    _write(target / "probabilities.txt", "\n".join(lines) + "\n")
    print(f"wrote {len(FEATURE_NAMES)} tensors and probabilities.txt to {target}")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    if cfg.data.source != "synthetic":
        raise ConfigError("gen-data needs data.source = synthetic")
    ds = generate(cfg.data.scene, cfg.data.per_class)
    manifest = save_image_dir(ds, args.out)
    print(f"wrote {len(ds)} images; manifest {manifest}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgml", description="Multi-granularity multi-level feature ensemble network")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def overrides(sp, crop=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--branches", help="comma list from mb,ffb,fem")
        if crop:
            sp.add_argument("--strategy", choices=["7crop", "grid"])
            sp.add_argument("--sigma", type=float)
            sp.add_argument("--k", type=int)

    sp = sub.add_parser("train", help="train one model")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    overrides(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on its test split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out")
    overrides(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="baseline / +FFB / +FEM / full comparison over repeated runs")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out")
    sp.add_argument("--compare-crops", action="store_true", help="compare 7-crop and 9-crop instead")
    overrides(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("inspect-anchors", help="print crop anchors as x1,y1,x2,y2")
    sp.add_argument("--h", type=int, required=True)
    sp.add_argument("--w", type=int, required=True)
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--strategy", choices=["7crop", "grid"], default="7crop")
    sp.add_argument("--k", type=int, default=2)
    sp.set_defaults(func=cmd_inspect_anchors)

    sp = sub.add_parser("dump-features", help="write per-level feature tensors of one sample")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--split", choices=["train", "test"], default="test")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_dump_features)

    sp = sub.add_parser("gen-data", help="write the synthetic dataset as PPM files")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    overrides(sp, crop=False)
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"mgml: error: {exc}", file=sys.stderr)
        return 2
    except (MGMLError, FloatingPointError, MemoryError) as exc:
        print(f"mgml: runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
