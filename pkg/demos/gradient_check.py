"""Checking backprop against central differences.

Builds a residual block followed by the channel-separate generator, sums the
result against a fixed random projection and compares every gradient with a
numerical estimate.
"""
import numpy as np

from mgml.anchors import CropConfig
from mgml.generators import cs_fg
from mgml.gradcheck import check_gradients
from mgml.nn import ConvBlock
from mgml.tensor import Tensor, weighted_sum

rng = np.random.default_rng(0)
block = ConvBlock(7, 14, stride=1, has_residual=True, seed=0, name="demo")
x = Tensor(rng.standard_normal((2, 7, 8, 8)), requires_grad=True)
crop = CropConfig("7crop", 0.5)


def forward():
    return cs_fg(block(x), crop).tensor


probe = rng.standard_normal(forward().data.shape)
results = check_gradients(lambda: weighted_sum(forward(), probe), [("x", x)] + list(block.named_parameters()))
for r in results:
    print(f"{r.name:<14} {r.checked:5d} coords  rel err {r.max_rel_error:.2e}")

# a deliberately wrong gradient shows what a failure looks like
x.grad = None
loss = weighted_sum(forward(), probe)
loss.backward()
bad = x.grad * 1.01
numeric = np.zeros_like(bad)
flat = x.data.reshape(-1)
for i in range(flat.size):
    orig = flat[i]
    flat[i] = orig + 1e-5
    up = weighted_sum(forward(), probe).data.item()
    flat[i] = orig - 1e-5
    down = weighted_sum(forward(), probe).data.item()
    flat[i] = orig
    numeric.reshape(-1)[i] = (up - down) / 2e-5
print("gradient scaled by 1.01:", f"{np.linalg.norm(bad - numeric) / np.linalg.norm(numeric):.2e}")
