"""The two crop-based feature generators on a hand-made feature map.

Channel j of the input is filled with the value j, except for a bright spot
in the top-left corner of every channel. The channel-separate generator hands
each crop its own block of channels, so the spot survives only in the first
block; the full-channel generator reports a mean per crop and channel.
"""
import numpy as np

from mgml.anchors import CropConfig
from mgml.generators import cs_fg, fc_fg
from mgml.tensor import Tensor

C, H, W = 8, 8, 8
f = np.broadcast_to(np.arange(C, dtype=float).reshape(1, C, 1, 1), (1, C, H, W)).copy()
f[:, :, 0:2, 0:2] += 10.0

crop = CropConfig("7crop", 0.5)
cs = cs_fg(Tensor(f), crop)
print("channel blocks per crop:", cs.patch_channel_ranges)
print("output shape:", cs.tensor.shape)
for j, (lo, hi) in enumerate(cs.patch_channel_ranges):
    print(f"  crop {j} channel {lo}:", np.round(cs.tensor.data[0, lo], 2).tolist())

fc = fc_fg(Tensor(f), crop).tensor.data.reshape(7, C)
print("\nfull-channel vector as (crop, channel) means:")
print(np.round(fc, 2))
