"""Fixed-position crop anchors over a feature map.

Two strategies are supported: ``seven_crop`` (four corners, centre, middle-row
band, middle-column band) and ``grid_crop``, a ``(k+1) x (k+1)`` sliding window.
Anchors are half-open integer rectangles ``(x1, y1, x2, y2)``.

Crop coordinates are evaluated in exact rational arithmetic and then floored,
with ``sigma`` read as the decimal it prints as (``0.7`` means 7/10), so no
binary rounding can move a boundary by a pixel.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

from .errors import ConfigError

STRATEGIES = ("seven_crop", "grid_crop")
_ALIASES = {"7crop": "seven_crop", "seven_crop": "seven_crop", "grid": "grid_crop",
            "grid_crop": "grid_crop", "9crop": "grid_crop"}


class Anchor(NamedTuple):
    x1: int
    y1: int
    x2: int
    y2: int

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    def __str__(self) -> str:
        return f"{self.x1},{self.y1},{self.x2},{self.y2}"


@dataclass(frozen=True)
class CropConfig:
    strategy: str = "seven_crop"
    sigma: float = 0.5
    grid_k: int = 2

    def __post_init__(self):
        strategy = _ALIASES.get(self.strategy)
        if strategy is None:
            raise ConfigError(f"unknown crop strategy {self.strategy!r}; use 7crop or grid")
        object.__setattr__(self, "strategy", strategy)
        if not 0 < self.sigma < 1:
            raise ConfigError(f"crop sigma must lie in (0, 1), got {self.sigma}")
        if self.grid_k < 1:
            raise ConfigError(f"grid k must be >= 1, got {self.grid_k}")

    @property
    def num_patches(self) -> int:
        return 7 if self.strategy == "seven_crop" else (self.grid_k + 1) ** 2


def _ratio(sigma: float) -> tuple[int, int]:
    """sigma as an exact fraction p/q, so every coordinate floors with integer arithmetic."""
    s = Fraction(repr(float(sigma)))
    return s.numerator, s.denominator


def _check_window(h: int, w: int, p: int, q: int) -> None:
    if w * p // q < 1 or h * p // q < 1:
        raise ConfigError(
            f"crop window floor({w}*{p / q}) x floor({h}*{p / q}) is empty; "
            "use a larger sigma or a larger feature map"
        )


@lru_cache(maxsize=None)
def propose_seven(h: int, w: int, sigma: float = 0.5) -> tuple[Anchor, ...]:
    p, q = _ratio(sigma)
    _check_window(h, w, p, q)
    win_w, win_h = w * p // q, h * p // q
    far_w, far_h = w * (q - p) // q, h * (q - p) // q
    # middle bands span [x(1 - s)/2, x(1 + s)/2)
    lo_w, hi_w = w * (q - p) // (2 * q), w * (q + p) // (2 * q)
    lo_h, hi_h = h * (q - p) // (2 * q), h * (q + p) // (2 * q)
    return (
        Anchor(0, 0, win_w, win_h),
        Anchor(0, far_h, win_w, h),
        Anchor(far_w, 0, w, win_h),
        Anchor(far_w, far_h, w, h),
        Anchor(lo_w, lo_h, hi_w, hi_h),
        Anchor(0, lo_h, w, hi_h),
        Anchor(lo_w, 0, hi_w, h),
    )


@lru_cache(maxsize=None)
def propose_grid(h: int, w: int, sigma: float = 0.5, k: int = 2) -> tuple[Anchor, ...]:
    if k < 1:
        raise ConfigError(f"grid k must be >= 1, got {k}")
    p, q = _ratio(sigma)
    _check_window(h, w, p, q)
    # stride is x(1 - s)/k; scale everything by k*q so offsets stay integral before flooring
    den = k * q
    step_w, step_h = w * (q - p), h * (q - p)
    span_w, span_h = k * w * p, k * h * p
    anchors = []
    for m in range(k + 1):
        for n in range(k + 1):
            x, y = m * step_w, n * step_h
            anchors.append(Anchor(x // den, y // den, (x + span_w) // den, (y + span_h) // den))
    return tuple(anchors)


def propose(cfg: CropConfig, h: int, w: int) -> tuple[Anchor, ...]:
    if cfg.strategy == "seven_crop":
        return propose_seven(h, w, cfg.sigma)
    return propose_grid(h, w, cfg.sigma, cfg.grid_k)
