"""Tensor ops with reverse-mode gradients, finite-difference checking, and Adam.

Tensors are ``torch.Tensor``; reverse-mode differentiation is torch autograd.
The wrappers below add the shape and finiteness contracts the model relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

Tensor = torch.Tensor


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite values in {what}")
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims {tuple(a.shape)} @ {tuple(b.shape)}")
    return a @ b


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError as exc:
        raise ShapeError(f"add: cannot broadcast {tuple(a.shape)} and {tuple(b.shape)}") from exc
    return a + b


def scale(a: Tensor, s: float) -> Tensor:
    return a * s


def softmax(x: Tensor, mask: Tensor | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` is boolean, True where attention is allowed."""
    if mask is not None:
        x = x.masked_fill(~mask, float("-inf"))
    return check_finite(torch.softmax(x, dim=-1), "softmax")


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (biased) variance, then scale and shift."""
    if gain is not None and gain.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm gain {tuple(gain.shape)} vs features {x.shape[-1]}")
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def dropout(x: Tensor, rate: float, train: bool, generator: torch.Generator | None = None) -> Tensor:
    """Inverted dropout: zero a ``rate`` fraction and rescale survivors by ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) >= rate
    return x * keep / (1.0 - rate)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other)) if i != axis % len(ref)):
            raise ShapeError(f"concat: incompatible shapes {ref} and {other} along axis {axis}")
    return torch.cat(list(tensors), dim=axis)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start <= stop <= x.shape[-2]:
        raise ShapeError(f"slice [{start}, {stop}) out of range for {x.shape[-2]} rows")
    return x[..., start:stop, :]


def transpose(x: Tensor) -> Tensor:
    return x.transpose(-2, -1)


def reduce_mean_sq(x: Tensor) -> Tensor:
    return check_finite((x**2).mean(), "mean square")


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Relative discrepancy between autograd and central differences.

    ``f`` must be a deterministic closure returning a scalar built from
    ``params`` (double precision leaf tensors with ``requires_grad``). The
    error is ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||)`` over all parameters
    concatenated, so parameters whose true gradient is exactly zero (e.g. key
    biases under softmax shift invariance) do not turn round-off into 100%.
    """
    for p in params:
        p.grad = None
    f().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            g_fd = torch.empty_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = f().item()
                flat[i] = orig - h
                down = f().item()
                flat[i] = orig
                g_fd[i] = (up - down) / (2 * h)
            numeric.append(g_fd)
    g_ad = torch.cat([g.reshape(-1) for g in analytic])
    g_fd = torch.cat(numeric)
    denom = max(g_ad.norm().item(), g_fd.norm().item())
    return 0.0 if denom == 0.0 else (g_ad - g_fd).norm().item() / denom


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    step: int = 0
    m: list[Tensor] = field(default_factory=list)
    v: list[Tensor] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[Tensor | None], state: AdamState) -> AdamState:
    """One in-place Adam update with bias correction. ``None`` grads count as zero."""
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("params, grads and optimizer state disagree in length")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            if g.shape != p.shape or m.shape != p.shape:
                raise ShapeError(f"gradient {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            denom = (v / bc2).sqrt_().add_(state.eps)
            p.addcdiv_(m, denom, value=-state.lr / bc1)
    return state


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` evaluations without improvement."""

    def __init__(self, state: AdamState, factor: float = 0.5, patience: int = 5, min_lr: float = 1e-7):
        self.state = state
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.stale = 0

    def update(self, metric: float) -> bool:
        """Record ``metric``; return True if it is a new best."""
        if metric < self.best:
            self.best = metric
            self.stale = 0
            return True
        self.stale += 1
        if self.stale >= self.patience:
            self.state.lr = max(self.state.lr * self.factor, self.min_lr)
            self.stale = 0
        return False
