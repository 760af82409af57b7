"""Shared test oracles: finite-difference gradients and brute-force references.

These deliberately re-derive results through independent routes (python
loops, explicit recurrences) so the library implementations are checked
against something other than themselves.
"""
from __future__ import annotations

import copy
import math

import numpy as np
import torch


def gradient_errors(module, x, h):
    """Compare autograd gradients against central finite differences.

    Returns ``(max_abs_diff, grad_inf_norm)`` over every learnable element.
    The scalar loss is a fixed random weighting of the module output, and the
    module runs in eval mode so repeated forwards are deterministic.  The
    difference quotients are evaluated on a float64 copy of the module at the
    module's own weight values: that isolates finite-difference truncation
    from accumulation rounding, so the analytic gradients of a 32-bit module
    are still checked at their own precision.
    """
    module.eval()
    gen = torch.Generator().manual_seed(1234)
    with torch.no_grad():
        out_shape = module(x).shape
    weights = torch.randn(out_shape, dtype=torch.float64, generator=gen)

    for p in module.parameters():
        p.grad = None
    loss = (module(x).double() * weights).sum()
    loss.backward()
    analytic = [p.grad.detach().double().reshape(-1).clone() for p in module.parameters()]

    fd_module = copy.deepcopy(module).double().eval()
    fd_x = x.double()

    def loss_value() -> float:
        with torch.no_grad():
            return float((fd_module(fd_x) * weights).sum())

    max_diff, grad_norm = 0.0, 0.0
    for grads, p in zip(analytic, fd_module.parameters()):
        grad_norm = max(grad_norm, float(grads.abs().max()))
        flat = p.data.reshape(-1)
        for i in range(flat.numel()):
            orig = float(flat[i])
            step = h * max(1.0, abs(orig))
            flat[i] = orig + step
            f_plus = loss_value()
            flat[i] = orig - step
            f_minus = loss_value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * step)
            max_diff = max(max_diff, abs(fd - float(grads[i])))
    return max_diff, grad_norm


def otsu_reference(gray: np.ndarray) -> tuple[int, np.ndarray]:
    """Exhaustive threshold search maximizing between-class variance, plain loops.

    Returns (threshold, mask) with the same degenerate rule as the library:
    a single-level histogram yields an all-zero mask (threshold -1).
    """
    levels = np.rint(np.asarray(gray, dtype=np.float64) * 255.0).astype(int)
    hist = [0] * 256
    for v in levels.ravel():
        hist[v] += 1
    total = levels.size
    best_t, best_var = -1, 0.0
    for t in range(256):
        w0 = sum(hist[: t + 1]) / total
        w1 = 1.0 - w0
        if w0 == 0.0 or w1 == 0.0:
            continue
        mu0 = sum(i * hist[i] for i in range(t + 1)) / (w0 * total)
        mu1 = sum(i * hist[i] for i in range(t + 1, 256)) / (w1 * total)
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best_var:
            best_t, best_var = t, var
    if best_t < 0:
        return -1, np.zeros(levels.shape, dtype=np.uint8)
    return best_t, (levels > best_t).astype(np.uint8)


def mae_reference(a: np.ndarray, b: np.ndarray) -> float:
    """Double-loop mean absolute error in 8-bit units."""
    total = 0.0
    rows, cols = a.shape
    for i in range(rows):
        for j in range(cols):
            total += abs(float(a[i, j]) - float(b[i, j])) * 255.0
    return total / (rows * cols * 256.0)


def bce_reference(pred: np.ndarray, target: np.ndarray, eps: float = 1e-7) -> float:
    """Scalar-loop binary cross-entropy with clipping."""
    total, count = 0.0, 0
    for p, t in zip(pred.ravel(), target.ravel()):
        p = min(max(float(p), eps), 1.0 - eps)
        total += -(float(t) * math.log(p) + (1.0 - float(t)) * math.log(1.0 - p))
        count += 1
    return total / count


def fp_stack_receptive_field(dilation: int, convs: int = 3, kernel: int = 3) -> int:
    """Receptive-field recurrence rf += dilation * (kernel - 1) over a conv stack."""
    rf = 1
    for _ in range(convs):
        rf += dilation * (kernel - 1)
    return rf
