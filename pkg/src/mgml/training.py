"""Weighted multi-branch objective, the SGD training loop and OA evaluation."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import LabeledSet
from .errors import ConfigError, DivergenceError
from .model import BRANCHES, MGMLNet, ModelConfig, parse_branches, selected_heads
from .nn import OptimizerState, lr_schedule, sgd_step, softmax_cross_entropy
from .tensor import Tensor, add, scale

log = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "lr", "train_loss", "oa_mb", "oa_ffb", "oa_fem3", "oa_fem4", "oa_ensemble")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    base_lr: float = 0.005
    milestones: tuple[int, ...] = (90, 150)
    lr_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lambdas: tuple[float, float, float, float] = (1.0, 0.5, 0.2, 0.5)
    seed: int = 0
    runs: int = 5
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.runs < 1:
            raise ConfigError("epochs, batch_size and runs must all be >= 1")
        if any(l < 0 for l in self.lambdas):
            raise ConfigError(f"lambda weights must be non-negative, got {self.lambdas}")

    @classmethod
    def paper(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        base = dict(epochs=60, batch_size=16, base_lr=0.005, milestones=(30, 45))
        base.update(kw)
        return cls(**base)


def objective(logits: dict[str, Tensor], labels, lambdas=(1.0, 0.5, 0.2, 0.5)) -> Tensor:
    """``sum_b lambda_b * CE(logits_b, labels)`` over the branches present in ``logits``."""
    if len(lambdas) != 4 or any(l < 0 for l in lambdas):
        raise ConfigError(f"lambda must be four non-negative weights, got {tuple(lambdas)}")
    total = None
    for key, lam in zip(BRANCHES, lambdas):
        if key not in logits:
            continue
        loss, _ = softmax_cross_entropy(logits[key], labels)
        term = scale(loss, lam)
        total = term if total is None else add(total, term)
    if total is None:
        raise ConfigError("objective needs at least one branch's logits")
    return total


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    oa_runs: list[float]
    branch_oa: dict[str, list[float]]
    confusion: np.ndarray
    pair_accuracy: dict[tuple[int, int], list[float]] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.oa_runs))

    @property
    def std(self) -> float:
        """Population standard deviation over runs."""
        return float(np.std(self.oa_runs))

    def mean_pair_accuracy(self) -> float:
        if not self.pair_accuracy:
            return float("nan")
        return float(np.mean([np.mean(v) for v in self.pair_accuracy.values()]))

    @classmethod
    def combine(cls, reports: list["EvalReport"]) -> "EvalReport":
        branch = {}
        for r in reports:
            for k, v in r.branch_oa.items():
                branch.setdefault(k, []).extend(v)
        pairs = {}
        for r in reports:
            for k, v in r.pair_accuracy.items():
                pairs.setdefault(k, []).extend(v)
        return cls([oa for r in reports for oa in r.oa_runs], branch,
                   sum(r.confusion for r in reports), pairs)

    def summary(self) -> str:
        lines = [
            f"runs = {len(self.oa_runs)}",
            "oa_runs = [" + ", ".join(f"{v:.4f}" for v in self.oa_runs) + "]",
            f"oa_mean = {self.mean:.4f}",
            f"oa_std = {self.std:.4f}",
        ]
        for k in BRANCHES:
            if k in self.branch_oa:
                lines.append(f"oa_{k}_mean = {np.mean(self.branch_oa[k]):.4f}")
        if self.pair_accuracy:
            for (a, b), v in sorted(self.pair_accuracy.items()):
                lines.append(f"pair_{a}_{b}_accuracy = {np.mean(v):.4f}")
        lines.append("confusion = " + "; ".join(" ".join(str(int(x)) for x in row) for row in self.confusion))
        return "\n".join(lines) + "\n"


def predict_all(model: MGMLNet, images: np.ndarray, branches, chunk: int = 64):
    """Per-branch probabilities and their sum for every image, without recording a trace."""
    probs: dict[str, list[np.ndarray]] = {}
    for start in range(0, images.shape[0], chunk):
        out = model.ablation_select(Tensor(images[start : start + chunk]), branches)
        for k, p in out.probs().items():
            probs.setdefault(k, []).append(p)
    probs = {k: np.concatenate(v) for k, v in probs.items()}
    p_sum = probs["mb"].copy()
    for k in BRANCHES[1:]:
        if k in probs:
            p_sum = p_sum + probs[k]
    return probs, p_sum


def _oa(pred: np.ndarray, labels: np.ndarray) -> float:
    return 100.0 * float(np.mean(pred == labels))


def pairwise_accuracy(p_sum: np.ndarray, labels: np.ndarray, a: int, b: int) -> float:
    """Accuracy on samples of classes ``a``/``b`` when the decision is restricted to ``{a, b}``."""
    sel = (labels == a) | (labels == b)
    if not sel.any():
        return float("nan")
    # ties go to the lower index, matching the ensemble argmax
    pick_a = p_sum[sel, a] >= p_sum[sel, b]
    pred = np.where(pick_a, a, b)
    return _oa(pred, labels[sel])


def evaluate(model: MGMLNet, dataset: LabeledSet, branches=None) -> EvalReport:
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    branches = parse_branches(branches) if not isinstance(branches, frozenset) else branches
    probs, p_sum = predict_all(model, dataset.images, branches)
    labels = dataset.labels
    pred = np.argmax(p_sum, axis=1)
    k = p_sum.shape[1]
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, pred), 1)
    branch_oa = {key: [_oa(np.argmax(p, axis=1), labels)] for key, p in probs.items()}
    pairs = {(a, b): [pairwise_accuracy(p_sum, labels, a, b)] for a, b in dataset.confusable_pairs}
    return EvalReport([_oa(pred, labels)], branch_oa, confusion, pairs)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: MGMLNet
    rows: list[dict]

    @property
    def losses(self) -> list[float]:
        return [r["train_loss"] for r in self.rows]


def train(model: MGMLNet, train_set: LabeledSet, cfg: TrainConfig, test_set: LabeledSet | None = None,
          branches=None) -> TrainResult:
    """Mini-batch SGD over ``cfg.epochs`` epochs; deterministic given ``cfg.seed``.

    Only parameters of the selected branches are updated. Each epoch appends a
    metrics row (see ``CSV_COLUMNS``); branches not selected get ``None``.
    """
    if len(train_set) == 0:
        raise ConfigError("training set is empty")
    branches = parse_branches(branches) if not isinstance(branches, frozenset) else branches
    heads = selected_heads(branches)
    named = model.parameters_for(branches)
    params = [p for _, p in named]
    state = OptimizerState(cfg.base_lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(train_set)
    rows = []
    for epoch in range(cfg.epochs):
        state.learning_rate = lr_schedule(epoch, cfg.base_lr, cfg.milestones, cfg.lr_factor)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = Tensor(train_set.images[idx])
            y = train_set.labels[idx]
            for p in params:
                p.grad = None
            out = model.ablation_select(x, branches)
            loss = objective(out.logits, y, cfg.lambdas)
            value = loss.data.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite loss {value} at epoch {epoch}, batch starting {start}; "
                    f"lr={state.learning_rate}. Lower the learning rate."
                )
            loss.backward()
            sgd_step(state, params)
            total += value * idx.size
        row = {"epoch": epoch, "lr": state.learning_rate, "train_loss": total / n}
        for key in BRANCHES:
            row[f"oa_{key}"] = None
        row["oa_ensemble"] = None
        if test_set is not None and (cfg.eval_every_epoch or epoch == cfg.epochs - 1):
            rep = evaluate(model, test_set, branches)
            for key in heads:
                row[f"oa_{key}"] = rep.branch_oa[key][0]
            row["oa_ensemble"] = rep.oa_runs[0]
        log.debug("epoch %d lr %.6g loss %.6f oa %s", epoch, row["lr"], row["train_loss"], row["oa_ensemble"])
        rows.append(row)
    return TrainResult(model, rows)


def metrics_csv(rows: list[dict]) -> str:
    def fmt(v):
        if v is None:
            return ""
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return repr(float(v))

    lines = [",".join(CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join(fmt(r[c]) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- repeated runs

def run_seed(base_seed: int, run: int) -> int:
    return int(base_seed) * 1000 + run


def _single_run(args):
    model_cfg, train_cfg, train_set, test_set, branches, run = args
    seed = run_seed(train_cfg.seed, run)
    model = MGMLNet(replace(model_cfg, seed=seed))
    result = train(model, train_set, replace(train_cfg, seed=seed), test_set, branches)
    return evaluate(result.model, test_set, branches), result.rows


def repeated_runs(model_cfg: ModelConfig, train_cfg: TrainConfig, train_set: LabeledSet,
                  test_set: LabeledSet, branches=None, runs: int | None = None,
                  workers: int | None = None) -> tuple[EvalReport, list[list[dict]]]:
    """Train ``runs`` independently seeded models and pool their test reports.

    Runs execute in a process pool of ``workers`` (default: ``MGML_THREADS`` or 1).
    Results are ordered by run index, so the report does not depend on scheduling.
    """
    runs = train_cfg.runs if runs is None else runs
    branches = parse_branches(branches) if not isinstance(branches, frozenset) else branches
    workers = workers or int(os.environ.get("MGML_THREADS", "1"))
    jobs = [(model_cfg, train_cfg, train_set, test_set, branches, r) for r in range(runs)]
    if workers > 1 and runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
            results = list(pool.map(_single_run, jobs))
    else:
        results = [_single_run(j) for j in jobs]
    return EvalReport.combine([r for r, _ in results]), [rows for _, rows in results]

