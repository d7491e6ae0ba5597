"""Poincare-ball primitives with trainable curvature.

Convention: the ball of curvature -c (c > 0) is {x : sqrt(c) * ||x|| < 1}.
All functions take ``c`` as a positive scalar or a tensor broadcastable
against the trailing singleton axis of the point tensors, so batched
per-query curvatures work with shape (..., 1).

Curvature positivity is maintained by storing an unconstrained raw
parameter and mapping it through softplus; see :func:`curvature_from_raw`.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import NumericalError

# Interior margin: points are kept at sqrt(c)*||x|| <= 1 - BALL_EPS.
BALL_EPS = 1e-5
# atanh argument cap; absorbs points sitting on the projection boundary.
ATANH_MAX = 1.0 - 1e-10
# Norm floor so that v / ||v|| has a finite (zero) gradient at v = 0.
MIN_NORM = 1e-15
# Moebius denominators below this are treated as degenerate.
DEGENERACY_EPS = 1e-15


def _as_c(c, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(c, dtype=like.dtype, device=like.device)


def _sqnorm(x: torch.Tensor) -> torch.Tensor:
    return x.pow(2).sum(dim=-1, keepdim=True)


def _norm(x: torch.Tensor) -> torch.Tensor:
    return _sqnorm(x).clamp_min(MIN_NORM**2).sqrt()


def curvature_from_raw(raw: torch.Tensor) -> torch.Tensor:
    """c = softplus(raw) > 0; gradient-safe curvature parameterization."""
    return F.softplus(raw)


def raw_from_curvature(c: float) -> float:
    """Inverse of :func:`curvature_from_raw` for initialization."""
    if c <= 0:
        raise ValueError(f"curvature must be positive, got {c}")
    return math.log(math.expm1(c))


def project_to_ball(x: torch.Tensor, c) -> torch.Tensor:
    """Rescale x to norm (1 - eps)/sqrt(c) whenever sqrt(c)*||x|| >= 1 - eps.

    Interior points pass through unchanged.
    """
    if not torch.isfinite(x).all():
        raise NumericalError("project_to_ball: non-finite input")
    c = _as_c(c, x)
    norm = _norm(x)
    max_norm = (1.0 - BALL_EPS) / c.sqrt()
    return torch.where(norm >= max_norm, x / norm * max_norm, x)


def mobius_add(x: torch.Tensor, y: torch.Tensor, c) -> torch.Tensor:
    """Moebius addition on the ball:

        x (+) y = ((1 + 2c<x,y> + c||y||^2) x + (1 - c||x||^2) y)
                  / (1 + 2c<x,y> + c^2 ||x||^2 ||y||^2)

    The result is projected back into the ball.  Reduces to x + y as c -> 0.
    """
    c = _as_c(c, x)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    xy = (x * y).sum(dim=-1, keepdim=True)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    denom = 1.0 + 2.0 * c * xy + c.pow(2) * x2 * y2
    if denom.min() < DEGENERACY_EPS:
        raise NumericalError(
            f"mobius_add: degenerate denominator {float(denom.min()):.3e} "
            "(inputs outside the ball?)"
        )
    return project_to_ball(num / denom, c)


def hyp_distance(x: torch.Tensor, y: torch.Tensor, c) -> torch.Tensor:
    """Hyperbolic distance  d(x, y) = 2/sqrt(c) * atanh(sqrt(c) ||-x (+) y||).

    Returns a tensor with the trailing coordinate axis reduced away.  The
    atanh argument is clamped to [0, 1 - 1e-10] so boundary points stay
    finite.
    """
    c = _as_c(c, x)
    sqrt_c = c.sqrt()
    diff = mobius_add(-x, y, c)
    arg = (sqrt_c * _norm(diff)).clamp(max=ATANH_MAX)
    return (2.0 / sqrt_c * torch.atanh(arg)).squeeze(-1)


def expmap0(v: torch.Tensor, c) -> torch.Tensor:
    """Exponential map at the origin: tanh(sqrt(c)||v||) * v / (sqrt(c)||v||).

    Maps any finite tangent vector strictly inside the ball; expmap0(0) = 0.
    """
    c = _as_c(c, v)
    sqrt_c = c.sqrt()
    vn = _norm(v)
    out = torch.tanh(sqrt_c * vn) * v / (sqrt_c * vn)
    return project_to_ball(out, c)
