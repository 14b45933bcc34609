"""The synthetic scene classes, drawn as text.

Every class is two motifs in two of five regions. Consecutive classes share
their motifs and differ only in placement, which is why their mean pixel
values match exactly.
"""
import numpy as np

from mgml.data import SceneSpec, generate, render

spec = SceneSpec()
shades = " .:-=+*#%@"
for label in range(spec.num_classes):
    img = render(spec, label).mean(axis=0)[::4, ::2]
    idx = np.clip(((img - img.min()) / (np.ptp(img) + 1e-12) * 9).round().astype(int), 0, 9)
    print(f"class {label}: {spec.layouts[label]}")
    print("\n".join("  " + "".join(shades[v] for v in row) for row in idx))

ds = generate(spec, 1)
means = ds.images.mean(axis=(1, 2, 3))
for a, b in spec.confusable_pairs():
    print(f"classes {a}/{b}: mean pixel {means[a]:.6f} vs {means[b]:.6f}")
