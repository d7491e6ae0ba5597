"""Scoring models: hyperbolic Trans/Dist/Rot/Ref and their Euclidean twins.

Every model scores a candidate tail e against an (h, r) query as

    score = -D(q, e)^2 + b_head[h] + b_tail[e]

where q is the relation-transformed head point and D is the hyperbolic
distance (ball models) or the Euclidean distance (twin models).  Higher
score means more plausible.  Entity parameters live in the tangent space
at the origin by default and are mapped into the ball at lookup time;
``entity_space="ball"`` stores ball points directly instead.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from . import manifold
from .errors import ConfigError
from .kgdata import Vocab

HYPERBOLIC_FAMILIES = ("TransH", "DistH", "RotH", "RefH")
EUCLIDEAN_FAMILIES = ("TransE", "DistE", "RotE", "RefE")
FAMILIES = HYPERBOLIC_FAMILIES + EUCLIDEAN_FAMILIES

DTYPE = torch.float64
INIT_RANGE = 1e-3


@dataclass(frozen=True)
class ModelKind:
    family: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(
                f"unknown model family {self.family!r}; expected one of {FAMILIES}"
            )

    @property
    def geometry(self) -> str:
        return "hyperbolic" if self.family.endswith("H") else "euclidean"

    @property
    def transform(self) -> str:
        # Trans -> addition, Dist -> elementwise product, Rot/Ref -> 2x2 blocks
        return self.family[:-1]

    @classmethod
    def parse(cls, name: str) -> "ModelKind":
        return cls(name.rstrip("_"))

    def __str__(self) -> str:
        return self.family


@dataclass
class ModelState:
    """Embedding tables and metadata for one scoring model."""

    kind: ModelKind
    dim: int
    n_entities: int
    n_relations: int
    seed: int
    entity_emb: torch.Tensor  # (N_e, d)
    rel_emb: torch.Tensor  # (N_r, d)
    rel_rot: torch.Tensor  # (N_r, d // 2) block angles, Rot/Ref kinds
    curv_raw: torch.Tensor  # (N_r,) per-relation or (1,) global, softplus-coded
    bias_head: torch.Tensor  # (N_e,)
    bias_tail: torch.Tensor  # (N_e,)
    entity_space: str = "tangent"  # "tangent" | "ball"
    use_biases: bool = True
    curvature_mode: str = "per_relation"  # "per_relation" | "global"
    vocab_hash: str | None = None

    def tables(self) -> dict[str, torch.Tensor]:
        return {
            "entity_emb": self.entity_emb,
            "rel_emb": self.rel_emb,
            "rel_rot": self.rel_rot,
            "curv_raw": self.curv_raw,
            "bias_head": self.bias_head,
            "bias_tail": self.bias_tail,
        }

    def trainable_parameters(self) -> dict[str, torch.Tensor]:
        """The tables the scoring function of this kind actually uses."""
        out = {"entity_emb": self.entity_emb}
        if self.kind.transform in ("Trans", "Dist"):
            out["rel_emb"] = self.rel_emb
        else:
            out["rel_rot"] = self.rel_rot
        if self.kind.geometry == "hyperbolic":
            out["curv_raw"] = self.curv_raw
        if self.use_biases:
            out["bias_head"] = self.bias_head
            out["bias_tail"] = self.bias_tail
        return out

    def requires_grad_(self, flag: bool) -> "ModelState":
        for p in self.trainable_parameters().values():
            p.requires_grad_(flag)
        return self

    def clone(self) -> "ModelState":
        kwargs = {name: t.detach().clone() for name, t in self.tables().items()}
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ScoreBatch:
    query: tuple[int, int]
    candidates: np.ndarray  # (K,) entity ids
    scores: np.ndarray  # (K,) float64, higher = more plausible


def init_model(
    kind: ModelKind | str,
    dim: int,
    vocab: "Vocab | tuple[int, int]",
    seed: int,
    entity_space: str = "tangent",
    use_biases: bool = True,
    curvature_mode: str = "per_relation",
) -> ModelState:
    """Seeded uniform [-0.001, 0.001] embeddings, zero biases, curvature 1."""
    if isinstance(kind, str):
        kind = ModelKind.parse(kind)
    if isinstance(vocab, Vocab):
        n_entities, n_relations = vocab.n_entities, vocab.n_relations
    else:
        n_entities, n_relations = vocab
    if dim < 2:
        raise ConfigError(f"embedding dimension must be >= 2, got {dim}")
    if kind.transform in ("Rot", "Ref") and dim % 2 != 0:
        raise ConfigError(f"{kind} needs an even dimension (2x2 blocks), got {dim}")
    if entity_space not in ("tangent", "ball"):
        raise ConfigError(f"unknown entity_space {entity_space!r}")
    if curvature_mode not in ("per_relation", "global"):
        raise ConfigError(f"unknown curvature_mode {curvature_mode!r}")

    gen = torch.Generator().manual_seed(seed)

    def uniform(*shape):
        return torch.empty(*shape, dtype=DTYPE).uniform_(-INIT_RANGE, INIT_RANGE, generator=gen)

    curv_len = n_relations if curvature_mode == "per_relation" else 1
    return ModelState(
        kind=kind,
        dim=dim,
        n_entities=n_entities,
        n_relations=n_relations,
        seed=seed,
        entity_emb=uniform(n_entities, dim),
        rel_emb=uniform(n_relations, dim),
        rel_rot=uniform(n_relations, dim // 2),
        curv_raw=torch.full((curv_len,), manifold.raw_from_curvature(1.0), dtype=DTYPE),
        bias_head=torch.zeros(n_entities, dtype=DTYPE),
        bias_tail=torch.zeros(n_entities, dtype=DTYPE),
        entity_space=entity_space,
        use_biases=use_biases,
        curvature_mode=curvature_mode,
    )


def apply_rotation(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Block-diagonal 2x2 rotation of x by per-block angles (norm-preserving)."""
    return _block_transform(x, angles, reflect=False)


def apply_reflection(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    """Block-diagonal 2x2 reflection of x by per-block angles (an involution)."""
    return _block_transform(x, angles, reflect=True)


def _block_transform(x: torch.Tensor, angles: torch.Tensor, reflect: bool) -> torch.Tensor:
    d = x.shape[-1]
    if d % 2 != 0:
        raise ConfigError(f"block transform needs an even dimension, got {d}")
    xb = x.reshape(*x.shape[:-1], d // 2, 2)
    cos, sin = torch.cos(angles), torch.sin(angles)
    a, b = xb[..., 0], xb[..., 1]
    if reflect:
        # [[cos,  sin], [sin, -cos]]
        ya = a * cos + b * sin
        yb = a * sin - b * cos
    else:
        # [[cos, -sin], [sin,  cos]]
        ya = a * cos - b * sin
        yb = a * sin + b * cos
    return torch.stack((ya, yb), dim=-1).reshape(x.shape)


def relation_curvature(state: ModelState, rels: torch.Tensor) -> torch.Tensor:
    """Positive curvature per query, shape (..., 1)."""
    if state.curvature_mode == "per_relation":
        raw = state.curv_raw[rels]
    else:
        raw = state.curv_raw[0].expand(rels.shape)
    return manifold.curvature_from_raw(raw).unsqueeze(-1)


def _entity_points(state: ModelState, ids: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    vec = state.entity_emb[ids]
    if state.kind.geometry == "euclidean":
        return vec
    if state.entity_space == "tangent":
        return manifold.expmap0(vec, c)
    return manifold.project_to_ball(vec, c)


def _transform_heads(
    state: ModelState, heads: torch.Tensor, rels: torch.Tensor, c: torch.Tensor
) -> torch.Tensor:
    h = _entity_points(state, heads, c)
    transform = state.kind.transform
    if state.kind.geometry == "hyperbolic":
        if transform == "Trans":
            r = manifold.expmap0(state.rel_emb[rels], c)
            return manifold.mobius_add(h, r, c)
        if transform == "Dist":
            return manifold.project_to_ball(h * state.rel_emb[rels], c)
        if transform == "Rot":
            return apply_rotation(h, state.rel_rot[rels])
        return apply_reflection(h, state.rel_rot[rels])
    if transform == "Trans":
        return h + state.rel_emb[rels]
    if transform == "Dist":
        return h * state.rel_emb[rels]
    if transform == "Rot":
        return apply_rotation(h, state.rel_rot[rels])
    return apply_reflection(h, state.rel_rot[rels])


def transform_head(state: ModelState, head: int, rel: int) -> np.ndarray:
    """Relation-transformed head point for one query (detached copy)."""
    _check_ids(state, [head], [rel])
    heads = torch.tensor([head])
    rels = torch.tensor([rel])
    with torch.no_grad():
        c = relation_curvature(state, rels)
        q = _transform_heads(state, heads, rels, c)
    return q[0].numpy().copy()


def score_candidates(
    state: ModelState,
    heads: torch.Tensor,
    rels: torch.Tensor,
    cands: torch.Tensor,
) -> torch.Tensor:
    """Differentiable scores for candidate tails.

    heads, rels: (B,) int64; cands: (B, K) int64 -> (B, K) float64 scores.
    """
    c = relation_curvature(state, rels)  # (B, 1)
    q = _transform_heads(state, heads, rels, c)  # (B, d)
    if state.kind.geometry == "hyperbolic":
        c_k = c.unsqueeze(1)  # (B, 1, 1)
        t = _entity_points(state, cands, c_k)  # (B, K, d)
        sq_dist = manifold.hyp_distance(q.unsqueeze(1), t, c_k).pow(2)  # (B, K)
    else:
        t = state.entity_emb[cands]
        sq_dist = (q.unsqueeze(1) - t).pow(2).sum(-1)
    scores = -sq_dist
    if state.use_biases:
        scores = scores + state.bias_head[heads].unsqueeze(1) + state.bias_tail[cands]
    return scores


def score_all(
    state: ModelState,
    heads: torch.Tensor,
    rels: torch.Tensor,
    chunk: int = 2048,
) -> torch.Tensor:
    """Scores against every entity, (B, N_e), computed without gradients."""
    b = heads.shape[0]
    out = torch.empty((b, state.n_entities), dtype=DTYPE)
    with torch.no_grad():
        for start in range(0, state.n_entities, chunk):
            ids = torch.arange(start, min(start + chunk, state.n_entities))
            cands = ids.unsqueeze(0).expand(b, -1)
            out[:, start : start + ids.numel()] = score_candidates(state, heads, rels, cands)
    return out


def score(state: ModelState, head: int, rel: int, candidates: Sequence[int]) -> ScoreBatch:
    """Score one (head, rel) query against an explicit candidate list."""
    cand = np.asarray(list(candidates), dtype=np.int64)
    _check_ids(state, [head], [rel], cand)
    with torch.no_grad():
        s = score_candidates(
            state,
            torch.tensor([head]),
            torch.tensor([rel]),
            torch.from_numpy(cand).unsqueeze(0),
        )
    return ScoreBatch(query=(head, rel), candidates=cand, scores=s[0].numpy().copy())


def _check_ids(state: ModelState, heads, rels, cands=None) -> None:
    if min(heads) < 0 or max(heads) >= state.n_entities:
        raise ConfigError("head id out of range")
    if min(rels) < 0 or max(rels) >= state.n_relations:
        raise ConfigError("relation id out of range")
    if cands is not None and cands.size and (cands.min() < 0 or cands.max() >= state.n_entities):
        raise ConfigError("candidate id out of range")
