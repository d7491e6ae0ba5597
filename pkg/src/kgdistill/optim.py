"""Adam over named parameter tables, L2 penalty, finite-difference checker.

Parameters travel as ``dict[str, torch.Tensor]`` of float64 leaf tensors.
Losses are built with torch autograd; :func:`grad_check` is the independent
oracle that compares analytic gradients against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .errors import NumericalError

Params = Mapping[str, torch.Tensor]
Grads = Mapping[str, "torch.Tensor | None"]


@dataclass
class AdamState:
    """First/second moment tables and step counter for Adam."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


def init_adam(params: Params, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = torch.zeros_like(p)
        state.v[name] = torch.zeros_like(p)
    return state


def adam_step(params: Params, grads: Grads, state: AdamState) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; parameters are updated in place.

    A missing (None) gradient is treated as all-zero.  Non-finite gradients
    abort with diagnostics rather than poisoning the moments.
    """
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            bad = int((~torch.isfinite(g)).sum())
            raise NumericalError(
                f"adam_step: {bad} non-finite gradient entries in {name!r} at step {state.t + 1}"
            )
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    with torch.no_grad():
        for name, p in params.items():
            g = grads.get(name)
            m, v = state.m[name], state.v[name]
            if g is None:
                m.mul_(state.beta1)
                v.mul_(state.beta2)
            else:
                m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
                v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(state.lr * (m / bc1) / ((v / bc2).sqrt() + state.eps))
    return params, state


def l2_penalty(params: Params, lam: float) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """lam * sum(theta^2) with its closed-form gradient 2*lam*theta.

    The returned loss stays in the autograd graph when the parameters
    require grad, so it can be folded into a training objective directly.
    """
    if lam < 0:
        raise ValueError(f"regularization weight must be >= 0, got {lam}")
    tensors = list(params.values())
    if tensors:
        loss = lam * sum(p.pow(2).sum() for p in tensors)
    else:
        loss = torch.zeros((), dtype=torch.float64)
    if not torch.is_tensor(loss):
        loss = torch.as_tensor(loss, dtype=torch.float64)
    grads = {name: 2.0 * lam * p.detach() for name, p in params.items()}
    return loss, grads


def analytic_grads(loss_fn: Callable[[], torch.Tensor], params: Params) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of loss_fn w.r.t. every parameter table."""
    named = list(params.items())
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    return {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(named, grads)
    }


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Params,
    step: float = 1e-6,
    max_coords_per_param: int = 24,
    seed: int = 0,
    grad_fn: Callable[[], Mapping[str, torch.Tensor]] | None = None,
) -> float:
    """Worst relative error between analytic and central-difference grads.

    loss_fn must be pure and deterministic in the parameters.  Coordinates
    are subsampled per table (seeded) when tables are large.  Relative
    error uses denominator max(|analytic|, |numeric|, 1e-5); the floor
    keeps finite-difference noise on near-zero gradients from registering
    as disagreement.
    """
    grads = dict(grad_fn()) if grad_fn is not None else analytic_grads(loss_fn, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.detach().reshape(-1)
        n = flat.numel()
        if n <= max_coords_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        g_flat = grads[name].reshape(-1)
        for idx in coords:
            idx = int(idx)
            orig = float(flat[idx])
            with torch.no_grad():
                flat[idx] = orig + step
                plus = float(loss_fn())
                flat[idx] = orig - step
                minus = float(loss_fn())
                flat[idx] = orig
            numeric = (plus - minus) / (2.0 * step)
            analytic = float(g_flat[idx])
            denom = max(abs(analytic), abs(numeric), 1e-5)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
