"""Dense numeric primitives and a finite-difference gradient harness.

All primitives act on ``torch.Tensor`` values whose last two axes are the
matrix axes; leading axes are treated as a batch. Reverse-mode gradients come
from torch autograd, and :func:`grad_check` verifies them against central
differences computed without autograd.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import torch
import torch.nn.functional as F

LAYER_NORM_EPS = 1e-5


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class AllMaskedError(ValueError):
    """Every key of at least one softmax row is masked out.

    ``rows`` holds the leading (batch) indices whose key set is empty.
    """

    def __init__(self, rows: list[tuple[int, ...]]):
        self.rows = rows
        super().__init__(f"all keys masked for {len(rows)} row group(s), first {rows[:3]}")


class GradCheckError(RuntimeError):
    def __init__(self, message: str, index: int | None = None, name: str | None = None):
        self.index = index
        self.name = name
        super().__init__(message)


def affine(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight + bias`` with an explicit shape contract."""
    if x.shape[-1] != weight.shape[0] or weight.dim() != 2:
        raise DimensionError(
            f"affine: input {tuple(x.shape)} does not conform to weight {tuple(weight.shape)}"
        )
    if bias is not None and tuple(bias.shape) != (weight.shape[1],):
        raise DimensionError(
            f"affine: bias {tuple(bias.shape)} does not match weight {tuple(weight.shape)}"
        )
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def masked_softmax(scores: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis restricted to keys where ``key_mask`` is true.

    ``key_mask`` has shape ``(..., k)`` and is broadcast over the query axis.
    Masked keys get probability exactly 0. Raises :class:`AllMaskedError`
    instead of producing NaN when a row group has no valid key.
    """
    key_mask = key_mask.to(torch.bool)
    if key_mask.shape[-1] != scores.shape[-1]:
        raise DimensionError(
            f"masked_softmax: mask {tuple(key_mask.shape)} vs scores {tuple(scores.shape)}"
        )
    empty = ~key_mask.any(dim=-1)
    if bool(empty.any()):
        rows = [tuple(int(i) for i in idx) for idx in empty.nonzero()]
        raise AllMaskedError(rows)
    mask = key_mask.unsqueeze(-2)
    filled = scores.masked_fill(~mask, float("-inf"))
    shift = filled.amax(dim=-1, keepdim=True).detach()
    e = torch.exp(filled - shift)
    return e / e.sum(dim=-1, keepdim=True)


def layer_norm(
    x: torch.Tensor, gain: torch.Tensor, shift: torch.Tensor, eps: float = LAYER_NORM_EPS
) -> torch.Tensor:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gain.shape[-1] != x.shape[-1] or shift.shape[-1] != x.shape[-1]:
        raise DimensionError(
            f"layer_norm: gain {tuple(gain.shape)} / shift {tuple(shift.shape)} vs input {tuple(x.shape)}"
        )
    return F.layer_norm(x, (x.shape[-1],), gain, shift, eps)


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def central_difference(
    op: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    step: float,
    coords: Iterable[int] | None = None,
) -> dict[int, float]:
    """Numeric partial derivatives of scalar ``op`` at ``x`` for each flat coordinate."""
    flat = x.detach().clone().reshape(-1)
    out = {}
    idx = range(flat.numel()) if coords is None else coords
    with torch.no_grad():
        for i in idx:
            orig = flat[i].item()
            flat[i] = orig + step
            fp = float(op(flat.view_as(x)))
            flat[i] = orig - step
            fm = float(op(flat.view_as(x)))
            flat[i] = orig
            out[int(i)] = (fp - fm) / (2.0 * step)
    return out


def grad_check(
    op: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    step: float = 1e-6,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between autograd and central differences.

    ``op`` maps a tensor shaped like ``x`` to a scalar. Evaluation happens in
    float64. Only ``coords`` (flat indices) are compared when given.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    x64 = x.detach().to(torch.float64)
    leaf = x64.clone().requires_grad_(True)
    y = op(leaf)
    if y.numel() != 1:
        raise ValueError("grad_check needs a scalar-valued op")
    if y.requires_grad:
        (g,) = torch.autograd.grad(y, leaf, allow_unused=True)
    else:
        g = None
    g = torch.zeros_like(x64) if g is None else g.detach()
    g = g.reshape(-1)
    bad = (~torch.isfinite(g)).nonzero()
    if len(bad):
        i = int(bad[0])
        raise GradCheckError(f"non-finite analytic gradient at coordinate {i}", index=i)
    numeric = central_difference(op, x64, step, coords)
    worst = 0.0
    for i, n in numeric.items():
        worst = max(worst, _relative_error(float(g[i]), n))
    return worst


def param_grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: dict[str, torch.Tensor],
    step: float = 1e-6,
    coords_per_param: int | None = None,
    generator: torch.Generator | None = None,
) -> dict[str, float]:
    """Per-parameter max relative error for ``loss_fn`` over named leaf tensors.

    The tensors in ``params`` are perturbed in place, so ``loss_fn`` must read
    them on every call. With ``coords_per_param`` set, that many coordinates of
    each tensor are drawn at random instead of checking all of them.
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    report = {}
    for (name, p), g in zip(params.items(), grads):
        g = torch.zeros_like(p) if g is None else g.detach()
        g = g.reshape(-1)
        bad = (~torch.isfinite(g)).nonzero()
        if len(bad):
            i = int(bad[0])
            raise GradCheckError(f"non-finite analytic gradient in {name}[{i}]", index=i, name=name)
        n = p.numel()
        if coords_per_param is None or coords_per_param >= n:
            coords = range(n)
        else:
            coords = torch.randperm(n, generator=generator)[:coords_per_param].tolist()
        flat = p.data.view(-1)
        worst = 0.0
        with torch.no_grad():
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + step
                fp = float(loss_fn())
                flat[i] = orig - step
                fm = float(loss_fn())
                flat[i] = orig
                worst = max(worst, _relative_error(float(g[i]), (fp - fm) / (2.0 * step)))
        report[name] = worst
    return report
