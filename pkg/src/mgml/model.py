"""The multi-granularity multi-level feature ensemble network.

Four prediction branches share one staged backbone (the main branch):

* ``mb``   - global average pool of the last stage, linear head.
* ``ffb``  - fusion branch: ``G0 = cs_fg(F0)``, ``G[i+1] = cs_fg(F[i+1]) + g_i(G[i])``,
  ``G4 = g_3(G3)``, then pool and a linear head. Each ``g_i`` copies the
  configuration of main stage ``i+1`` with its own parameters.
* ``fem3``/``fem4`` - ``fc_fg`` vectors of the last two stages, one linear head each.

The vote is the element-wise sum of the branch softmax probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .anchors import CropConfig, propose
from .errors import ConfigError, ShapeError
from .generators import channel_ranges, cs_fg, fc_fg
from .nn import Conv, ConvBlock, LinearHead, Module, softmax
from .tensor import Tensor, add, global_avg_pool, max_pool2, relu

BRANCH_GROUPS = ("mb", "ffb", "fem")
BRANCHES = ("mb", "ffb", "fem3", "fem4")
DEFAULT_LAMBDA = (1.0, 0.5, 0.2, 0.5)


@dataclass(frozen=True)
class StageSpec:
    blocks: int
    out_channels: int
    stride: int
    residual: bool = True


@dataclass(frozen=True)
class BackboneConfig:
    stem_kernel: int = 3
    stem_stride: int = 2
    stem_pool: bool = True
    stages: tuple[StageSpec, ...] = ()
    in_channels: int = 3

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigError(f"backbone needs exactly 4 stages, got {len(self.stages)}")
        for i, st in enumerate(self.stages, 1):
            if st.stride not in (1, 2):
                raise ConfigError(f"stage {i} stride must be 1 or 2, got {st.stride}")
            if st.blocks < 1:
                raise ConfigError(f"stage {i} needs at least one block")
        if self.stem_kernel not in (3, 7):
            raise ConfigError(f"stem kernel must be 3 or 7, got {self.stem_kernel}")

    @classmethod
    def preset(cls, name: str) -> "BackboneConfig":
        if name == "tiny":
            return cls(3, 2, True, tuple(StageSpec(1, c, s) for c, s in
                                         zip((16, 32, 64, 128), (1, 2, 2, 2))))
        if name in ("resnet34-like", "resnet34"):
            return cls(7, 2, True, tuple(StageSpec(b, c, s) for b, c, s in
                                         zip((3, 4, 6, 3), (64, 128, 256, 512), (1, 2, 2, 2))))
        raise ConfigError(f"unknown backbone preset {name!r}; use tiny or resnet34-like")


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=lambda: BackboneConfig.preset("tiny"))
    crop: CropConfig = field(default_factory=CropConfig)
    num_classes: int = 8
    lambdas: tuple[float, float, float, float] = DEFAULT_LAMBDA
    input_size: tuple[int, int] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.lambdas) != 4 or any(l < 0 for l in self.lambdas):
            raise ConfigError(f"lambda must be four non-negative weights, got {self.lambdas}")


def parse_branches(spec: str | Iterable[str] | None) -> frozenset[str]:
    """``"mb,ffb"`` -> ``{"mb", "ffb"}``. ``None`` selects every branch."""
    if spec is None:
        return frozenset(BRANCH_GROUPS)
    items = [s.strip() for s in (spec.split(",") if isinstance(spec, str) else spec)]
    items = [s for s in items if s]
    if not items:
        raise ConfigError("branch selection is empty")
    bad = [s for s in items if s not in BRANCH_GROUPS]
    if bad:
        raise ConfigError(f"unknown branch(es) {bad}; choose from {','.join(BRANCH_GROUPS)}")
    if "mb" not in items:
        raise ConfigError("the main branch 'mb' must always be selected")
    return frozenset(items)


def selected_heads(branches: frozenset[str]) -> tuple[str, ...]:
    heads = ["mb"]
    if "ffb" in branches:
        heads.append("ffb")
    if "fem" in branches:
        heads += ["fem3", "fem4"]
    return tuple(heads)


# ---------------------------------------------------------------- shape algebra

def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def main_shapes(backbone: BackboneConfig, hw: tuple[int, int]) -> list[tuple[int, int, int]]:
    """``(C, H, W)`` of F0..F4 for an input of spatial size ``hw``."""
    h, w = hw
    h, w = _ceil_div(h, backbone.stem_stride), _ceil_div(w, backbone.stem_stride)
    if backbone.stem_pool:
        h, w = h // 2, w // 2
    if h < 1 or w < 1:
        raise ShapeError(f"input {hw} collapses to nothing in the stem")
    shapes = [(backbone.stages[0].out_channels, h, w)]
    for st in backbone.stages:
        h, w = _ceil_div(h, st.stride), _ceil_div(w, st.stride)
        shapes.append((st.out_channels, h, w))
    return shapes


def ffb_shape_plan(backbone: BackboneConfig, crop: CropConfig, hw: tuple[int, int]) -> list[tuple]:
    """Shapes of ``(cs_fg(F[i+1]), g_i(G[i]))`` for i = 0, 1, 2, plus G4.

    Raises :class:`ShapeError` naming the level whose addition would be illegal.
    """
    F = main_shapes(backbone, hw)
    for i, (c, h, w) in enumerate(F[:4]):
        if h < 2 or w < 2:
            raise ShapeError(f"level {i}: feature map {c}x{h}x{w} too small for channel-separate crops")
        channel_ranges(c, crop.num_patches)
        propose(crop, h, w)
    cs = [(c, h // 2, w // 2) for c, h, w in F[:4]]
    plan = []
    g = cs[0]
    for i in range(4):
        st = backbone.stages[i]
        if g[0] != (backbone.stages[i - 1].out_channels if i else F[0][0]):
            raise ShapeError(f"level {i}: G has {g[0]} channels, g_{i} expects a different width")
        g_out = (st.out_channels, _ceil_div(g[1], st.stride), _ceil_div(g[2], st.stride))
        if i == 3:
            plan.append(("G4", g_out))
            break
        if cs[i + 1] != g_out:
            raise ShapeError(
                f"level {i}: cs_fg(F{i + 1}) has shape {cs[i + 1]} but g_{i}(G{i}) has shape {g_out}"
            )
        plan.append((f"level{i}", cs[i + 1], g_out))
        g = g_out
    return plan


def fem_widths(backbone: BackboneConfig, crop: CropConfig, hw: tuple[int, int]) -> tuple[int, int]:
    F = main_shapes(backbone, hw)
    widths = []
    for c, h, w in F[3:]:
        widths.append(c * len(propose(crop, h, w)))
    return widths[0], widths[1]


# ---------------------------------------------------------------- network

class Stage(Module):
    def __init__(self, in_channels: int, spec: StageSpec, seed: int, name: str):
        self.blocks = []
        for b in range(spec.blocks):
            self.blocks.append(ConvBlock(in_channels if b == 0 else spec.out_channels, spec.out_channels,
                                         spec.stride if b == 0 else 1, spec.residual, seed, f"{name}.{b}"))

    def __call__(self, x: Tensor) -> Tensor:
        for blk in self.blocks:
            x = blk(x)
        return x


@dataclass
class BranchOutputs:
    """Per-branch probabilities (``None`` when a branch was not run) and their sum."""

    p_mb: np.ndarray
    p_ffb: np.ndarray | None
    p_fem3: np.ndarray | None
    p_fem4: np.ndarray | None
    p_sum: np.ndarray
    logits: dict[str, Tensor]
    features: dict[str, Tensor] = field(default_factory=dict)

    def probs(self) -> dict[str, np.ndarray]:
        out = {"mb": self.p_mb, "ffb": self.p_ffb, "fem3": self.p_fem3, "fem4": self.p_fem4}
        return {k: v for k, v in out.items() if v is not None}

    def predict(self) -> np.ndarray:
        """argmax of ``p_sum``; ``np.argmax`` already breaks ties at the lowest index."""
        return np.argmax(self.p_sum, axis=1)


class MGMLNet(Module):
    def __init__(self, config: ModelConfig):
        self.config = config
        bb, seed = config.backbone, config.seed
        # fail at construction, not mid-forward, if the fusion recurrence is shape-illegal
        self.ffb_plan = ffb_shape_plan(bb, config.crop, config.input_size)
        self.fem_widths = fem_widths(bb, config.crop, config.input_size)

        c0 = bb.stages[0].out_channels
        self.stem = Conv(bb.in_channels, c0, bb.stem_kernel, bb.stem_stride, seed, "main.stem")
        self.stages = []
        self.ffb_convs = []
        cin = c0
        for i, st in enumerate(bb.stages):
            self.stages.append(Stage(cin, st, seed, f"main.stage{i + 1}"))
            self.ffb_convs.append(Stage(cin, st, seed, f"ffb.g{i}"))
            cin = st.out_channels
        k = config.num_classes
        self.head_mb = LinearHead(cin, k, seed, "head.mb")
        self.head_ffb = LinearHead(cin, k, seed, "head.ffb")
        self.head_fem3 = LinearHead(self.fem_widths[0], k, seed, "head.fem3")
        self.head_fem4 = LinearHead(self.fem_widths[1], k, seed, "head.fem4")

    def parameters_for(self, branches: frozenset[str]) -> list[tuple[str, Tensor]]:
        """Named parameters that receive gradients under a branch selection."""
        keep = ["stem", "stages", "head_mb"]
        if "ffb" in branches:
            keep += ["ffb_convs", "head_ffb"]
        if "fem" in branches:
            keep += ["head_fem3", "head_fem4"]
        return [(n, p) for n, p in self.named_parameters() if n.split(".")[0] in keep]

    def forward_main(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        bb = self.config.backbone
        if x.shape.c != bb.in_channels:
            raise ShapeError(f"stem expects {bb.in_channels} input channels, got tensor {x.shape}")
        f = relu(self.stem(x))
        if bb.stem_pool:
            f = max_pool2(f)
        feats = [f]
        for stage in self.stages:
            f = stage(f)
            feats.append(f)
        return feats, self.head_mb(global_avg_pool(feats[4]))

    def forward_ffb(self, feats: list[Tensor]) -> tuple[list[Tensor], Tensor]:
        crop = self.config.crop
        G = [cs_fg(feats[0], crop).tensor]
        for i in range(3):
            h = cs_fg(feats[i + 1], crop).tensor
            g = self.ffb_convs[i](G[i])
            if h.shape != g.shape:
                raise ShapeError(f"level {i}: cs_fg(F{i + 1}) is {h.shape} but g_{i}(G{i}) is {g.shape}")
            G.append(add(h, g))
        G.append(self.ffb_convs[3](G[3]))
        return G, self.head_ffb(global_avg_pool(G[4]))

    def forward_fem(self, f3: Tensor, f4: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        v3 = fc_fg(f3, self.config.crop).tensor
        v4 = fc_fg(f4, self.config.crop).tensor
        return v3, v4, self.head_fem3(v3), self.head_fem4(v4)

    def ablation_select(self, x: Tensor, branches=None, keep_features: bool = False) -> BranchOutputs:
        branches = parse_branches(branches) if not isinstance(branches, frozenset) else branches
        if "mb" not in branches:
            raise ConfigError("the main branch 'mb' must always be selected")
        feats, z_mb = self.forward_main(x)
        logits = {"mb": z_mb}
        features = {}
        if keep_features:
            features.update({f"F{i}": t for i, t in enumerate(feats)})
        if "ffb" in branches:
            G, logits["ffb"] = self.forward_ffb(feats)
            if keep_features:
                features.update({f"G{i}": t for i, t in enumerate(G)})
        if "fem" in branches:
            v3, v4, logits["fem3"], logits["fem4"] = self.forward_fem(feats[3], feats[4])
            if keep_features:
                features.update({"v3": v3, "v4": v4})
        probs = {k: softmax(z.data) for k, z in logits.items()}
        p_sum = probs["mb"].copy()
        for key in BRANCHES[1:]:
            if key in probs:
                p_sum = p_sum + probs[key]
        return BranchOutputs(probs["mb"], probs.get("ffb"), probs.get("fem3"), probs.get("fem4"),
                             p_sum, logits, features)

    def forward_ensemble(self, x: Tensor, keep_features: bool = False) -> BranchOutputs:
        return self.ablation_select(x, frozenset(BRANCH_GROUPS), keep_features)

    __call__ = forward_ensemble
