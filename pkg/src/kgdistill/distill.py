"""Multi-teacher distillation: slates, soft/hard losses, teacher fusion.

The student ("junior") proposes its current top-K candidates for each
(head, relation) query.  A frozen teacher ensemble scores exactly those
candidates; a trainable integration layer (the "senior") rescales each
teacher row by a per-(relation, teacher) sigmoid gate and fuses the rows
into soft labels with a similarity-based attention over teachers.  The
junior learns from the fused labels (KL) plus conventional negative
sampling (BCE); the gates learn from a cross-entropy over the summed
scaled rows.  All three losses are combined into one objective and
minimized jointly.

Gradient routing is deliberate and asymmetric:

* soft labels supervise the junior only (the fused label vector is a
  constant w.r.t. both teacher gates and junior),
* the attention weights are constants (computed from unscaled teacher
  rows against detached junior scores),
* the senior cross-entropy reaches only the gate matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .errors import ConfigError, DataError
from .models import DTYPE, ModelState, score, score_all, score_candidates

K_GRID = (100, 300, 500)
ALPHA_GRID = (0.01, 0.1, 0.5)
NEGATIVE_GRID = (8, 50, 255)
LR_GRID = (0.0005, 0.001, 0.005)
TEACHER_DIM_GRID = (64, 128, 256, 512)


@dataclass(frozen=True)
class TeacherEnsemble:
    """Frozen scoring models sharing one vocabulary."""

    teachers: tuple[ModelState, ...]

    def __post_init__(self):
        if not self.teachers:
            raise ConfigError("an ensemble needs at least one teacher")
        first = self.teachers[0]
        for t in self.teachers[1:]:
            if (t.n_entities, t.n_relations) != (first.n_entities, first.n_relations):
                raise DataError("teachers disagree on entity/relation counts")
        hashes = {t.vocab_hash for t in self.teachers if t.vocab_hash}
        if len(hashes) > 1:
            raise DataError(f"teachers were trained on different vocabularies: {sorted(hashes)}")
        for t in self.teachers:
            t.requires_grad_(False)

    @property
    def m(self) -> int:
        return len(self.teachers)

    @property
    def n_entities(self) -> int:
        return self.teachers[0].n_entities

    @property
    def n_relations(self) -> int:
        return self.teachers[0].n_relations


@dataclass
class SeniorState:
    """Trainable per-(relation, teacher) gate matrix plus the flattening
    temperature schedule for the teacher attention."""

    w_rel: torch.Tensor  # (N_r, m) unconstrained; sigmoid maps into (0, 1)
    gamma0: float = 1.0
    growth: float = 1.1
    epoch: int = 0


def init_senior(n_relations: int, m: int, gamma0: float = 1.0, growth: float = 1.1) -> SeniorState:
    return SeniorState(
        w_rel=torch.zeros((n_relations, m), dtype=DTYPE), gamma0=gamma0, growth=growth
    )


@dataclass(frozen=True)
class CandidateSlate:
    """Everything one query contributes to an iteration."""

    query: tuple[int, int]
    c_top: np.ndarray  # (K,) candidate entity ids, junior's current best
    s_top: np.ndarray  # (K,) junior scores of those candidates
    s_teachers: np.ndarray  # (m, K) frozen teacher scores on the slate
    l_top: np.ndarray  # (K,) fused soft labels


@dataclass
class DistillConfig:
    """Hyperparameters of a distillation run (student side)."""

    dim: int = 32
    K: int = 300
    alpha: float = 0.1
    negatives: int = 50
    reg: float = 0.0
    lr: float = 0.001
    epochs: int = 100
    batch_size: int = 512
    seed: int = 42
    gamma0: float = 1.0
    gamma_growth: float = 1.1
    candidate_strategy: str = "topk"  # "topk" | "random" (ablation)
    use_contrast_attention: bool = True
    use_relation_scale: bool = True
    valid_every: int = 1
    self_check: bool = True
    eval_chunk: int = 2048
    entity_space: str = "tangent"
    use_biases: bool = True
    curvature_mode: str = "per_relation"
    filter_scope: str = "full"
    tie: str = "pessimistic"

    def validate(self, n_entities: int) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.K > n_entities:
            raise ConfigError(f"K={self.K} exceeds entity count {n_entities}")
        if self.negatives >= n_entities:
            raise ConfigError(f"negatives={self.negatives} must be < N_e={n_entities}")
        if self.reg < 0:
            raise ConfigError("reg must be >= 0")
        if self.gamma0 <= 0 or self.gamma_growth <= 1:
            raise ConfigError("gamma schedule needs gamma0 > 0 and growth > 1")
        if self.candidate_strategy not in ("topk", "random"):
            raise ConfigError(f"unknown candidate strategy {self.candidate_strategy!r}")


# ---------------------------------------------------------------------------
# Slate construction
# ---------------------------------------------------------------------------


def stable_topk(scores: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the k largest entries per row; ties go to the smaller id."""
    order = torch.argsort(scores, dim=-1, descending=True, stable=True)
    return order[..., :k]


def topk_candidates(junior: ModelState, query: tuple[int, int], k: int) -> tuple[np.ndarray, np.ndarray]:
    """The junior's current K best candidates for one query.

    The gold target is not injected: teachers judge exactly what the junior
    proposes.
    """
    if k > junior.n_entities:
        raise ConfigError(f"K={k} exceeds entity count {junior.n_entities}")
    head, rel = query
    scores = score_all(junior, torch.tensor([head]), torch.tensor([rel]))[0]
    idx = stable_topk(scores, k)
    return idx.numpy().copy(), scores[idx].numpy().copy()


def teacher_scores(
    ensemble: TeacherEnsemble, query: tuple[int, int], c_top: np.ndarray
) -> np.ndarray:
    """(m, K) matrix; row i holds teacher i's scores on exactly c_top."""
    head, rel = query
    return np.stack([score(t, head, rel, c_top).scores for t in ensemble.teachers])


def ensemble_score(
    ensemble: TeacherEnsemble, query: tuple[int, int], candidates: Sequence[int]
) -> np.ndarray:
    """Additive ensemble baseline: elementwise sum of teacher score rows."""
    return teacher_scores(ensemble, query, np.asarray(list(candidates), dtype=np.int64)).sum(axis=0)


# ---------------------------------------------------------------------------
# Senior integration
# ---------------------------------------------------------------------------


def relation_scale(s_teachers: torch.Tensor, senior: SeniorState, rel) -> torch.Tensor:
    """Multiply teacher row i by sigmoid(w_rel[rel, i]).

    Positive per-row scaling: within-row orderings are untouched.  Accepts
    (m, K) with an int relation or (m, B, K) with a (B,) relation tensor.
    """
    gate = torch.sigmoid(senior.w_rel[rel])  # (m,) or (B, m)
    if s_teachers.dim() == 2:
        return s_teachers * gate.unsqueeze(-1)
    return s_teachers * gate.permute(1, 0).unsqueeze(-1)


def kl_between_logits(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """KL(softmax(p) || softmax(q)) along the last axis."""
    p = torch.softmax(p_logits, dim=-1)
    return (p * (torch.log_softmax(p_logits, dim=-1) - torch.log_softmax(q_logits, dim=-1))).sum(-1)


def contrast_attention(
    s_scaled: torch.Tensor,
    s_teachers: torch.Tensor,
    s_junior: torch.Tensor,
    gamma: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Fuse scaled teacher rows into soft labels, weighting teachers by
    similarity to the junior's current distribution.

    Teacher i's distance is the length-normalized KL between its (unscaled)
    row and the junior scores; weights are softmax(-distance / gamma) * m.
    As gamma grows the weights flatten to uniform and the fusion approaches
    a plain sum.  Returns (fused labels, weights); both carry no gradient
    into the junior, and the weights none into the gates either.

    Shapes: (m, K)/(K,) for a single query or (m, B, K)/(B, K) batched.
    """
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    m = s_scaled.shape[0]
    k = s_scaled.shape[-1]
    with torch.no_grad():
        p = kl_between_logits(s_teachers, s_junior.detach().unsqueeze(0)) / k  # (m,) | (m, B)
        weights = torch.softmax(-p / gamma, dim=0) * m
    l_top = (s_scaled * weights.unsqueeze(-1)).sum(dim=0)
    return l_top, weights


def gamma_schedule(epoch: int, gamma0: float = 1.0, growth: float = 1.1) -> float:
    """Exponentially increasing attention temperature, gamma0 * growth^epoch."""
    if gamma0 <= 0 or growth <= 1:
        raise ConfigError("gamma schedule needs gamma0 > 0 and growth > 1")
    return gamma0 * growth**epoch


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def soft_label_loss(l_top: torch.Tensor, s_top: torch.Tensor) -> torch.Tensor:
    """KL(softmax(labels) || softmax(junior scores)), averaged over queries.

    The label side is detached: this loss teaches the junior only.
    """
    return kl_between_logits(l_top.detach(), s_top).mean()


def negative_sample(
    query: tuple[int, int],
    target: int,
    n: int,
    rng: np.random.Generator,
    n_entities: int,
) -> np.ndarray:
    """n entity ids drawn uniformly without replacement from E \\ {target}."""
    if n >= n_entities:
        raise ConfigError(f"cannot draw {n} negatives from {n_entities - 1} non-targets")
    draws = rng.choice(n_entities - 1, size=n, replace=False)
    draws[draws >= target] += 1
    return draws.astype(np.int64)


def hard_label_loss(s_neg: torch.Tensor, l_neg: torch.Tensor) -> torch.Tensor:
    """Mean per-element sigmoid binary cross-entropy.

    s_neg holds the target's score plus the sampled negatives' scores;
    l_neg is the matching one-hot labels.
    """
    return torch.nn.functional.binary_cross_entropy_with_logits(s_neg, l_neg, reduction="mean")


def junior_loss(soft: torch.Tensor, hard: torch.Tensor, alpha: float) -> torch.Tensor:
    """alpha * soft + (1 - alpha) * hard."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * soft + (1.0 - alpha) * hard


def senior_loss(s_scaled: torch.Tensor, c_top, target) -> torch.Tensor:
    """Cross-entropy of the summed scaled teacher rows against the target's
    slate position; queries whose target is absent contribute zero.

    Gradients flow only into the gate matrix (teacher rows are constants).
    Single query: s_scaled (m, K), c_top (K,) ids, target int.
    Batched: s_scaled (m, B, K), c_top (B, K), target (B,).
    """
    total = s_scaled.sum(dim=0)  # (K,) | (B, K)
    logp = torch.log_softmax(total, dim=-1)
    if total.dim() == 1:
        hit = torch.as_tensor(np.asarray(c_top) == int(target))
        if not bool(hit.any()):
            return torch.zeros((), dtype=s_scaled.dtype)
        return -logp[hit.nonzero(as_tuple=True)[0][0]]
    c_top = torch.as_tensor(np.asarray(c_top))
    hit = c_top == torch.as_tensor(np.asarray(target)).unsqueeze(-1)  # (B, K)
    per_query = -(logp * hit).sum(dim=-1)  # zero where target absent
    return per_query.mean()
