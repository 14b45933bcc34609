"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (collected again in
the terminal summary). Criteria 6 and 7 train 20 tiny models on one core and
take roughly 18 minutes together.
"""
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from mgml.anchors import CropConfig, propose_grid, propose_seven
from mgml.cli import build_datasets, main, run_ablation
from mgml.config import load_config
from mgml.generators import cs_fg, fc_fg
from mgml.gradcheck import check_gradients
from mgml.model import BackboneConfig, MGMLNet, ModelConfig, ffb_shape_plan, fem_widths
from mgml.nn import conv2d, linear, softmax_cross_entropy
from mgml.tensor import (Tensor, adaptive_avg_pool, add, concat_channels, crop_spatial, global_avg_pool, max_pool2,
                         relu, scale, slice_channels, sum_all, weighted_sum)
from mgml.training import objective, repeated_runs

from test_anchors import SIGMAS, oracle_grid, oracle_seven

DESK = Path(__file__).resolve().parent.parent / "configs" / "desk.cfg"
SEVEN = CropConfig("seven_crop", 0.5)


def test_criterion_1_anchor_oracle(report_line):
    start = time.perf_counter()
    mismatches = 0
    for sigma, (p, q) in SIGMAS.items():
        for h in range(4, 65):
            for w in range(4, 65):
                mismatches += [tuple(a) for a in propose_seven(h, w, sigma)] != oracle_seven(h, w, p, q)
                for k in (1, 2, 3):
                    mismatches += [tuple(a) for a in propose_grid(h, w, sigma, k)] != oracle_grid(h, w, p, q, k)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 10
    report_line(1, ok, f"{mismatches} mismatching anchor lists over 3x61x61 frames x 4 strategies, {elapsed:.1f}s")
    assert ok


def test_criterion_2_channel_partition(report_line):
    details = []
    ok = True
    for c in (7, 8, 64, 512):
        out = cs_fg(Tensor(np.zeros((1, c, 4, 4))), SEVEN)
        r = out.patch_channel_ranges
        partition = [i for lo, hi in r for i in range(lo, hi)] == list(range(c))
        last = r[-1][1] - r[-1][0]
        ok &= out.tensor.shape.c == c and partition and last == c - 6 * (c // 7)
        details.append(f"C={c} last={last}")
    ok &= details[-1] == "C=512 last=74"
    report_line(2, ok, ", ".join(details))
    assert ok


def test_criterion_3_shape_contracts(report_line):
    ok = True
    for c, h, w in ((64, 16, 16), (16, 5, 5), (32, 9, 6)):
        f = Tensor(np.zeros((1, c, h, w)))
        ok &= tuple(cs_fg(f, SEVEN).tensor.shape) == (1, c, h // 2, w // 2)
        ok &= tuple(fc_fg(f, SEVEN).tensor.shape) == (1, 7 * c, 1, 1)
        ok &= fc_fg(f, CropConfig("grid", 0.5, 2)).tensor.shape.c == 9 * c
    widths = fem_widths(BackboneConfig.preset("tiny"), SEVEN, (64, 64))
    ok &= widths == (448, 896)
    legal = 0
    for preset in ("tiny", "resnet34-like"):
        for size in range(64, 257, 32):
            plan = ffb_shape_plan(BackboneConfig.preset(preset), SEVEN, (size, size))
            legal += all(e[1] == e[2] for e in plan[:3])
    ok &= legal == 14
    report_line(3, ok, f"v3,v4 = {widths}; fusion recurrence legal for {legal}/14 preset x input-size cases")
    assert ok


def _op_cases(rng):
    w = Tensor(rng.standard_normal((3, 4, 3, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((1, 3, 1, 1)), requires_grad=True)
    lw = Tensor(rng.standard_normal((5, 4 * 36, 1, 1)), requires_grad=True)
    lb = Tensor(rng.standard_normal((1, 5, 1, 1)), requires_grad=True)
    other = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
    return {
        "crop_spatial": (lambda x: crop_spatial(x, (1, 2, 5, 6)), []),
        "slice_channels": (lambda x: slice_channels(x, 1, 3), []),
        "concat_channels": (lambda x: concat_channels([x, other]), [("other", other)]),
        "adaptive_avg_pool": (lambda x: adaptive_avg_pool(x, 4, 3), []),
        "global_avg_pool": (global_avg_pool, []),
        "add": (lambda x: add(x, other), [("other", other)]),
        "scale": (lambda x: scale(x, -1.7), []),
        "sum_all": (sum_all, []),
        "relu": (relu, []),
        "max_pool2": (max_pool2, []),
        "conv2d": (lambda x: conv2d(x, w, b, 2), [("weight", w), ("bias", b)]),
        "linear": (lambda x: linear(x, lw, lb), [("weight", lw), ("bias", lb)]),
        "cs_fg": (lambda x: cs_fg(concat_channels([x, x]), SEVEN).tensor, []),
        "fc_fg": (lambda x: fc_fg(x, SEVEN).tensor, []),
    }


def test_criterion_4_gradients(report_line):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_op = 0.0
    for name, (fn, extra) in _op_cases(rng).items():
        x = Tensor(rng.standard_normal((2, 4, 6, 6)), requires_grad=True)
        proj = rng.standard_normal(fn(x).data.shape)
        for r in check_gradients(lambda: weighted_sum(fn(x), proj), [("x", x)] + extra):
            worst_op = max(worst_op, r.max_rel_error)
    z = Tensor(rng.standard_normal((3, 6, 1, 1)), requires_grad=True)
    (r,) = check_gradients(lambda: softmax_cross_entropy(z, [0, 5, 2])[0], [("logits", z)])
    worst_op = max(worst_op, r.max_rel_error)

    model = MGMLNet(ModelConfig(seed=11))
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (2, 3, 64, 64)), requires_grad=True)
    labels = [3, 6]
    tensors = [("input", x)] + list(model.named_parameters())
    results = check_gradients(lambda: objective(model(x).logits, labels), tensors, max_coords=4, seed=2)
    worst_net = max(r.max_rel_error for r in results)
    probed = sum(r.checked for r in results)
    elapsed = time.perf_counter() - start
    ok = worst_op < 1e-6 and worst_net < 1e-5 and elapsed < 60
    report_line(4, ok, f"max rel err per-op {worst_op:.2e}, full network {worst_net:.2e} "
                       f"({probed} coords over {len(results)} tensors), {elapsed:.1f}s")
    assert ok


def test_criterion_5_objective(report_line):
    z = Tensor(np.zeros((1, 45, 1, 1)))
    loss = objective({k: z for k in ("mb", "ffb", "fem3", "fem4")}, [0], (1.0, 0.5, 0.2, 0.5)).data.item()
    err = abs(loss - 2.2 * math.log(45))
    report_line(5, err < 1e-9, f"L = {loss:.12f}, 2.2 ln 45 = {2.2 * math.log(45):.12f}, |diff| = {err:.1e}")
    assert err < 1e-9


@pytest.fixture(scope="module")
def ablation():
    """All four variants over the configured seeds; the full variant is timed on its own."""
    cfg = load_config(DESK)
    train_set, test_set = build_datasets(cfg)
    rows, seconds = {}, {}
    for name, branches in (("full", "mb,ffb,fem"), ("baseline", "mb"), ("+FFB", "mb,ffb"), ("+FEM", "mb,fem")):
        start = time.perf_counter()
        rows[name], _ = repeated_runs(cfg.model, cfg.train, train_set, test_set, branches)
        seconds[name] = time.perf_counter() - start
    return cfg, rows, seconds


@pytest.mark.slow
def test_criterion_6_toy_task_learning(ablation, report_line):
    cfg, rows, seconds = ablation
    full = rows["full"]
    ok = full.mean >= 95.0 and cfg.train.epochs <= 60 and len(full.oa_runs) == 5 and seconds["full"] <= 15 * 60
    runs = ", ".join(f"{v:.1f}" for v in full.oa_runs)
    report_line(6, ok, f"ensemble OA {full.mean:.2f} +/- {full.std:.2f} over runs [{runs}], "
                       f"{cfg.train.epochs} epochs, {seconds['full'] / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_direction(ablation, report_line):
    _, rows, _ = ablation
    m = {k: r.mean for k, r in rows.items()}
    pair = {k: r.mean_pair_accuracy() for k, r in rows.items()}
    gap = m["full"] - m["baseline"]
    pair_gap = pair["full"] - pair["baseline"]
    ok = (m["full"] >= m["baseline"] - 0.5 and m["full"] >= max(m["+FFB"], m["+FEM"]) - 0.5 and pair_gap >= 2.0)
    table = ", ".join(f"{k} {m[k]:.2f}" for k in ("baseline", "+FFB", "+FEM", "full"))
    report_line(7, ok, f"mean OA {table}; full-baseline {gap:+.2f}; confusable-pair accuracy "
                       f"full {pair['full']:.2f} vs baseline {pair['baseline']:.2f} ({pair_gap:+.2f})")
    assert ok


@pytest.mark.slow
def test_criterion_8_crop_comparison(tmp_path, report_line):
    # a short schedule: the harness contract is the point, not the accuracy
    text = DESK.read_text().replace("schedule.epochs = 60", "schedule.epochs = 3").replace(
        "train.runs = 5", "train.runs = 2")
    cfg_path = tmp_path / "short.cfg"
    cfg_path.write_text(text)
    cfg = load_config(cfg_path)
    rows = run_ablation(cfg, compare_crops=True)
    names = [n for n, _ in rows]
    # same seeds as a plain full-model run of the same config
    train_set, test_set = build_datasets(cfg)
    seven, _ = repeated_runs(replace(cfg.model, crop=SEVEN), cfg.train, train_set, test_set)
    out = tmp_path / "out"
    code = main(["ablate", "--config", str(cfg_path), "--compare-crops", "--out", str(out)])
    lines = (out / "crops.txt").read_text().splitlines()
    ok = (names == ["MGML-FENet(tiny)-7crop", "MGML-FENet(tiny)-9crop"] and rows[0][1].oa_runs == seven.oa_runs
          and code == 0 and len(lines) == 3)
    report_line(8, ok, " | ".join(f"{n} {r.mean:.2f}+/-{r.std:.2f}" for n, r in rows) + " (3-epoch harness run)")
    assert ok


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path, report_line):
    text = DESK.read_text().replace("schedule.epochs = 60", "schedule.epochs = 3").replace(
        "train.eval_every_epoch = false", "train.eval_every_epoch = true").replace("train.runs = 5", "train.runs = 2")
    cfg = tmp_path / "short.cfg"
    cfg.write_text(text)
    same = []
    for tag in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / tag)]) == 0
        assert main(["eval", "--checkpoint", str(tmp_path / tag / "checkpoint.mgc"),
                     "--out", str(tmp_path / tag / "eval")]) == 0
        assert main(["ablate", "--config", str(cfg), "--branches", "mb", "--out", str(tmp_path / tag / "abl")]) == 0
    for rel in ("metrics.csv", "checkpoint.mgc", "summary.txt", "eval/eval.txt", "abl/ablation.csv"):
        same.append((tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes())
    ok = all(same)
    report_line(9, ok, f"{sum(same)}/{len(same)} artifacts byte-identical across repeated commands")
    assert ok
