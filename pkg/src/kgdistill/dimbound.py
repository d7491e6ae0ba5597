"""Minimum embedding dimension from a model-entropy argument.

For embedding vectors spread uniformly on a d-sphere of radius sqrt(d),
the squared distance between a query vector and an entity vector is
D = 2d(1 - eta) with eta the cosine of the angle between them, whose
density is

    p_d(eta) = Gamma(d/2) / (Gamma((d-1)/2) sqrt(pi)) * (1 - eta^2)^((d-3)/2).

With triple plausibility proportional to e^{D}, the model entropy over the
N = N_e^2 * N_r query/entity pairs is

    H_M ~= log N + log A - B/A,   A = E[e^{D}],  B = E[e^{D} D],

and h_d = H_M - log N turns out to be almost exactly linear in d.  The
fitted slope epsilon (~ -0.4703 over d in 8..128) yields the bound

    d > (-1/epsilon) * log(N_e^2 N_r).

A variant with plausibility proportional to e^{-D} is available behind
``sign="-"``; because p_d is even in eta, the substitution eta -> -eta maps
one variant onto the other and both produce identical h_d, hence identical
fitted slopes.  Expectations reach e^{4d}, so everything is computed in
log space over a composite Gauss-Legendre rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ConfigError, QuadratureError

PAPER_EPSILON = -0.471
DEFAULT_NODES = 200_000
DEFAULT_FIT_DIMS = (8, 16, 32, 64, 128)
_PANEL_ORDER = 64


@dataclass(frozen=True)
class BoundParams:
    """Slope constant and quadrature resolution for the dimension bound.

    The accommodate constant is derived as -1/epsilon so the pair stays
    exactly consistent; with the default epsilon it is ~2.123.
    """

    epsilon: float = PAPER_EPSILON
    nodes: int = DEFAULT_NODES

    def __post_init__(self):
        if self.epsilon >= 0:
            raise ConfigError(f"epsilon must be negative, got {self.epsilon}")

    @property
    def alpha(self) -> float:
        return -1.0 / self.epsilon


@dataclass(frozen=True)
class EntropyEstimate:
    d: int
    pair_count: float  # N = N_e^2 * N_r
    h_m: float  # model entropy
    h_d: float  # h_m - log(pair_count); independent of the pair count


@lru_cache(maxsize=8)
def _panel_rule(total_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [-1, 1] with ~total_nodes nodes."""
    panels = max(1, -(-total_nodes // _PANEL_ORDER))  # ceil division
    x0, w0 = np.polynomial.legendre.leggauss(_PANEL_ORDER)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    weights = (half[:, None] * w0[None, :]).ravel()
    return nodes, weights


def log_angle_density(eta: np.ndarray, d: int) -> np.ndarray:
    """log p_d(eta), evaluated through log-gamma to stay finite for large d."""
    if d < 3:
        raise ConfigError(f"angle density requires d >= 3, got {d}")
    eta = np.asarray(eta, dtype=np.float64)
    if np.any(np.abs(eta) > 1.0):
        raise ConfigError("angle cosine must lie in [-1, 1]")
    norm = gammaln(d / 2.0) - gammaln((d - 1) / 2.0) - 0.5 * np.log(np.pi)
    with np.errstate(divide="ignore"):
        return norm + ((d - 3) / 2.0) * np.log1p(-eta**2)


def angle_density(eta, d: int):
    """Density of the cosine of the angle between two uniform directions."""
    return np.exp(log_angle_density(eta, d))


def _h_d_once(d: int, nodes: int, sign: float) -> float:
    eta, w = _panel_rule(nodes)
    base = np.log(w) + log_angle_density(eta, d) + sign * 2.0 * d * (1.0 - eta)
    log_a = logsumexp(base)
    dist = 2.0 * d * (1.0 - eta)
    with np.errstate(divide="ignore"):
        log_dist = np.log(np.maximum(dist, 1e-300))
    tilted_mean = np.exp(logsumexp(base + log_dist) - log_a)  # E[e^{sD} D] / E[e^{sD}]
    return float(log_a - sign * tilted_mean)


def _parse_sign(sign: str) -> float:
    if sign in ("+", "plus"):
        return 1.0
    if sign in ("-", "minus"):
        return -1.0
    raise ConfigError(f"sign must be '+' or '-', got {sign!r}")


def model_entropy(
    d: int,
    n_entities: int,
    n_relations: int,
    nodes: int = DEFAULT_NODES,
    sign: str = "+",
    tol: float = 1e-6,
    max_refinements: int = 3,
) -> EntropyEstimate:
    """Entropy of the pair-plausibility model at dimension d.

    The quadrature is refined by node doubling until the h_d estimate moves
    by less than ``tol``; failing that, a QuadratureError reports the last
    residual.
    """
    if d < 3:
        raise ConfigError(f"model entropy requires d >= 3, got {d}")
    if nodes < 10_000:
        raise ConfigError(f"need at least 10^4 quadrature nodes, got {nodes}")
    s = _parse_sign(sign)
    current = _h_d_once(d, nodes, s)
    residual = float("inf")
    for _ in range(max(max_refinements, 1)):
        nodes *= 2
        refined = _h_d_once(d, nodes, s)
        residual = abs(refined - current)
        current = refined
        if residual < tol:
            pair_count = float(n_entities) ** 2 * float(n_relations)
            return EntropyEstimate(
                d=d, pair_count=pair_count, h_m=float(np.log(pair_count) + current), h_d=current
            )
    raise QuadratureError(
        f"entropy quadrature did not converge at d={d}: residual {residual:.3e} > {tol}"
    )


def least_squares_line(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """(slope, intercept, R^2) of an ordinary least-squares line fit."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise ConfigError("line fit needs at least two points")
    design = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - (slope * x + intercept)
    ss_res = float(np.sum(residuals**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 and ss_res < 1e-12 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(r2)


def fit_epsilon(
    d_values: Sequence[int],
    n_entities: int,
    n_relations: int,
    nodes: int = DEFAULT_NODES,
    sign: str = "+",
) -> tuple[float, float]:
    """Least-squares slope of h_d against d, with its R^2."""
    dims = sorted(set(int(d) for d in d_values))
    if len(dims) < 3:
        raise ConfigError(f"slope fit needs >= 3 distinct dimensions, got {dims}")
    hs = [model_entropy(d, n_entities, n_relations, nodes=nodes, sign=sign).h_d for d in dims]
    slope, _, r2 = least_squares_line(dims, hs)
    return slope, r2


def bound_from_pair_count(pair_count: float, params: BoundParams = BoundParams()) -> float:
    """Lower dimension bound alpha * ln(pair_count)."""
    if pair_count < 1:
        raise ConfigError(f"pair count must be >= 1, got {pair_count}")
    return params.alpha * float(np.log(pair_count))


def min_dimension(
    n_entities: int, n_relations: int, params: BoundParams = BoundParams()
) -> float:
    """Minimum embedding dimension bound alpha * ln(N_e^2 * N_r)."""
    if n_entities < 1 or n_relations < 1:
        raise ConfigError("entity and relation counts must be >= 1")
    return bound_from_pair_count(float(n_entities) ** 2 * float(n_relations), params)
