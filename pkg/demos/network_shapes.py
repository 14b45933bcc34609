"""One forward pass of the tiny network, level by level.

Prints the shape of every main-branch map F0..F4, every fusion map G0..G4,
the two pooled crop vectors, and the four branch probabilities for one
untrained sample. The ensemble prediction is the argmax of their sum.
"""
import numpy as np

from mgml.model import MGMLNet, ModelConfig, main_shapes
from mgml.tensor import Tensor

cfg = ModelConfig(seed=0)
print("predicted from config alone:", main_shapes(cfg.backbone, cfg.input_size))

net = MGMLNet(cfg)
print("parameters:", sum(p.data.size for p in net.parameters()))
x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 64, 64)))
out = net(x, keep_features=True)
for name, t in out.features.items():
    print(f"  {name:<3} {tuple(t.shape)[1:]}")

np.set_printoptions(precision=3, suppress=True)
for name, p in out.probs().items():
    print(f"p_{name:<5}", p[0])
print("p_sum  ", out.p_sum[0], "-> class", int(out.predict()[0]))
