"""Reverse-mode differentiation entry points.

The tensor engine itself is torch's autograd; this module pins the contract
the rest of the package relies on (scalar losses only, explicit leaf
discovery) and carries the finite-difference checker used by the tests.
"""

from __future__ import annotations

import torch


class GradientError(RuntimeError):
    pass


def reachable_leaves(loss: torch.Tensor) -> list[torch.Tensor]:
    """Leaf tensors with ``requires_grad`` that ``loss`` depends on, in discovery order."""
    leaves, seen, stack = [], set(), [loss.grad_fn]
    while stack:
        fn = stack.pop()
        if fn is None or fn in seen:
            continue
        seen.add(fn)
        var = getattr(fn, "variable", None)
        if var is not None:
            leaves.append(var)
        stack.extend(next_fn for next_fn, _ in fn.next_functions)
    return leaves


def backward(loss: torch.Tensor, retain_graph: bool = False) -> list[torch.Tensor]:
    """Populate ``.grad`` on every parameter reachable from a scalar ``loss``.

    Returns the reached leaves.  The graph is freed unless ``retain_graph``.
    """
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        shape = tuple(loss.shape) if isinstance(loss, torch.Tensor) else type(loss).__name__
        raise GradientError(f"backward needs a scalar loss, got shape {shape}")
    if loss.grad_fn is None:
        raise GradientError("loss has no recorded computation graph")
    leaves = reachable_leaves(loss)
    loss.backward(retain_graph=retain_graph)
    return leaves


def numerical_gradient(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central finite differences of scalar ``fn`` at ``x`` (use float64)."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        with torch.no_grad():
            hi = float(fn(x))
        flat[i] = orig - eps
        with torch.no_grad():
            lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def max_relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-6) -> float:
    """max |a - b| / max(|b|_inf, floor) -- relative to the gradient's scale."""
    scale = max(float(b.abs().max()), floor)
    return float((a - b).abs().max()) / scale
