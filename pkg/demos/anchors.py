"""Where the crop windows fall on a small feature map.

Prints the seven-crop and 3x3 sliding-window anchors for a 12x12 map and
draws how many windows cover each cell.
"""
import numpy as np

from mgml.anchors import propose_grid, propose_seven


def coverage(anchors, h, w):
    counts = np.zeros((h, w), dtype=int)
    for a in anchors:
        counts[a.y1 : a.y2, a.x1 : a.x2] += 1
    return counts


h = w = 12
seven = propose_seven(h, w, 0.5)
names = ["top-left", "bottom-left", "top-right", "bottom-right", "centre", "row band", "column band"]
print("seven-crop, sigma 0.5 (x1,y1,x2,y2):")
for name, a in zip(names, seven):
    print(f"  {name:<12} {a}  ({a.width}x{a.height})")
print(coverage(seven, h, w))

# the middle of the frame is seen four times, the corners twice
grid = propose_grid(h, w, 0.5, 2)
print("\nsliding windows, k = 2:")
print("  " + "  ".join(str(a) for a in grid))
print(coverage(grid, h, w))

# sigma trades window size against overlap
for sigma in (0.3, 0.5, 0.7):
    c = propose_seven(h, w, sigma)[4]
    print(f"sigma {sigma}: centre window {c}")
