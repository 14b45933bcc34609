"""Main branch alone against the full ensemble on the synthetic scenes.

Each class pairs two motifs in two regions; classes 2i and 2i+1 swap the
regions, so only spatial arrangement tells them apart. Both models get the
same seed and schedule; pass a smaller epoch count to go faster:

    python demos/toy_training.py 20
"""
import sys
import time

from mgml.data import SceneSpec, generate, split
from mgml.model import MGMLNet, ModelConfig
from mgml.training import TrainConfig, evaluate, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 60
scenes = generate(SceneSpec(noise_std=0.15, jitter=6), 50)
train_set, test_set = split(scenes, 0.5, seed=0)
cfg = TrainConfig.desk(epochs=epochs, milestones=(epochs // 2, 3 * epochs // 4), eval_every_epoch=False)

for branches in ("mb", "mb,ffb,fem"):
    start = time.perf_counter()
    model = MGMLNet(ModelConfig(seed=0))
    result = train(model, train_set, cfg, branches=branches)
    report = evaluate(model, test_set, branches)
    per_branch = "  ".join(f"{k} {v[0]:.1f}" for k, v in report.branch_oa.items())
    print(f"[{branches}] {time.perf_counter() - start:.0f}s  final loss {result.losses[-1]:.4f}")
    print(f"  OA {report.mean:.1f}  confusable pairs {report.mean_pair_accuracy():.1f}  ({per_branch})")
