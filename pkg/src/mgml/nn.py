"""Trainable layers, classification loss and SGD.

Parameters are ordinary :class:`~mgml.tensor.Tensor` leaves with
``requires_grad=True``. Shapes are kept rank-4 throughout: convolution weights
are ``(out, in, k, k)``, linear weights ``(out, in, 1, 1)`` and every bias is
``(1, out, 1, 1)``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, DomainError, ShapeError, UsageError
from .tensor import Tensor, _result, add, relu


def init_param(seed: int, name: str, shape, std: float) -> Tensor:
    """Seeded normal init; a pure function of ``(seed, name, shape, std)``."""
    rng = np.random.default_rng([int(seed), zlib.crc32(name.encode())])
    return Tensor(rng.standard_normal(tuple(shape)) * std, requires_grad=True)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """Same-padded 2-D cross-correlation; output spatial size is ``ceil(h / stride)``."""
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv expects {ci} input channels, got tensor {x.shape}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv kernel must be square and odd, got {k}x{k2}")
    pad = k // 2
    oh, ow = -(-h // stride), -(-w // stride)
    # channel-last patches: cols[n, y, x, i, j, c] = xpad[n, c, y*s + i, x*s + j]
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    xp[:, pad : pad + h, pad : pad + w, :] = x.data.transpose(0, 2, 3, 1)
    cols = np.empty((n, oh, ow, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :]
    cols = cols.reshape(n * oh * ow, k * k * c)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(o, k * k * c)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data.reshape(1, o)
    out = out.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, o)
        if weight.requires_grad:
            dw = (gmat.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
            weight._accumulate(np.ascontiguousarray(dw))
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=0).reshape(bias.data.shape))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(n, oh, ow, k, k, c)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += dcols[:, :, :, i, j, :]
            x._accumulate(np.ascontiguousarray(dxp[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def linear(v: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``y = W v + b`` with ``v`` flattened per batch element; returns ``(n, out, 1, 1)``."""
    n = v.shape.n
    o, i = weight.shape.n, weight.shape.c
    if v.shape.size // n != i:
        raise ShapeError(f"linear layer expects {i} features, got tensor {v.shape}")
    vm = v.data.reshape(n, i)
    wm = weight.data.reshape(o, i)
    out = (vm @ wm.T + bias.data.reshape(1, o)).reshape(n, o, 1, 1)

    def backward(g):
        gm = g.reshape(n, o)
        if weight.requires_grad:
            weight._accumulate((gm.T @ vm).reshape(weight.data.shape))
        if bias.requires_grad:
            bias._accumulate(gm.sum(axis=0).reshape(bias.data.shape))
        if v.requires_grad:
            v._accumulate((gm @ wm).reshape(v.data.shape))

    return _result(out, (v, weight, bias), backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over axis 1 of an ``(n, k, 1, 1)`` or ``(n, k)`` array."""
    z = logits.reshape(logits.shape[0], -1)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Batch-mean cross-entropy of ``logits`` against integer ``labels``.

    Returns the scalar loss tensor and the ``(n, num_classes)`` probabilities.
    """
    n, k, h, w = logits.shape
    if h != 1 or w != 1:
        raise ShapeError(f"logits must be (n, classes, 1, 1), got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != n:
        raise ShapeError(f"{labels.size} labels for a batch of {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise DomainError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    z = logits.data.reshape(n, k)
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    rows = np.arange(n)
    loss = np.full((1, 1, 1, 1), np.mean(lse - z[rows, labels]))
    probs = softmax(z)

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        logits._accumulate((d * (g.item() / n)).reshape(n, k, 1, 1))

    return _result(loss, (logits,), backward), probs


class Module:
    """Minimal parameter container; subclasses register params and child modules as attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int,
                 seed: int, name: str, gain: float = 2.0):
        fan_in = in_channels * kernel * kernel
        self.stride = stride
        self.weight = init_param(seed, name + ".weight", (out_channels, in_channels, kernel, kernel),
                                 np.sqrt(gain / fan_in))
        self.bias = Tensor(np.zeros((1, out_channels, 1, 1)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride)


class ConvBlock(Module):
    """3x3 conv + ReLU, or a basic residual block when ``has_residual`` is set.

    The residual form is ``relu(conv(relu(conv(x))) + shortcut(x))`` where the
    shortcut is the identity, or a strided 1x1 projection when the shape changes.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 has_residual: bool = False, seed: int = 0, name: str = "block"):
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.has_residual = has_residual
        self.conv1 = Conv(in_channels, out_channels, 3, stride, seed, name + ".conv1")
        if has_residual:
            # halved gain on the residual tail keeps the un-normalised stack stable
            self.conv2 = Conv(out_channels, out_channels, 3, 1, seed, name + ".conv2", gain=1.0)
            if stride != 1 or in_channels != out_channels:
                self.proj = Conv(in_channels, out_channels, 1, stride, seed, name + ".proj", gain=1.0)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape.c != self.in_channels:
            raise ShapeError(f"block expects {self.in_channels} channels, got tensor {x.shape}")
        y = self.conv1(x)
        if not self.has_residual:
            return relu(y)
        y = self.conv2(relu(y))
        shortcut = self.proj(x) if hasattr(self, "proj") else x
        return relu(add(y, shortcut))


class LinearHead(Module):
    def __init__(self, in_features: int, out_features: int, seed: int = 0, name: str = "head"):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = init_param(seed, name + ".weight", (out_features, in_features, 1, 1),
                                 np.sqrt(1.0 / in_features))
        self.bias = Tensor(np.zeros((1, out_features, 1, 1)), requires_grad=True)

    def __call__(self, v: Tensor) -> Tensor:
        return linear(v, self.weight, self.bias)


@dataclass
class OptimizerState:
    """SGD with momentum; weight decay is folded into the velocity update."""

    learning_rate: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(state: OptimizerState, params) -> None:
    """``v <- m*v + (g + wd*p)``; ``p <- p - lr*v``. Updates ``params`` in place."""
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise UsageError(f"parameter {i} {p.shape} has no gradient; run backward() first")
    for i, p in enumerate(params):
        v = state.velocity.get(i)
        if v is None:
            v = np.zeros_like(p.data)
        elif v.shape != p.data.shape:
            raise ShapeError(f"velocity buffer {v.shape} does not match parameter {p.shape}")
        v = state.momentum * v + (p.grad + state.weight_decay * p.data)
        state.velocity[i] = v
        p.data = p.data - state.learning_rate * v


def lr_schedule(epoch: int, base_lr: float, milestones=(90, 150), factor: float = 10.0) -> float:
    passed = sum(1 for m in milestones if epoch >= m)
    return base_lr / factor**passed
