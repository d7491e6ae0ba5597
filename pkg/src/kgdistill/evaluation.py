"""Filtered link-prediction evaluation: MRR and Hits@N.

Each triple of a (reciprocal-augmented) split is treated as a tail query;
head prediction arrives through the reverse relations.  Known-true tails
other than the query target are removed from the ranking ("filtered"
protocol).  Ties are resolved pessimistically by default: entities tied
with the target count as ranked above it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .errors import ConfigError
from .kgdata import FilterIndex, Triple, triples_to_array
from .models import ModelState, score_all

TIE_MODES = ("pessimistic", "optimistic", "mean")


@dataclass(frozen=True)
class Metrics:
    mrr: float
    hits: dict[int, float]
    n_queries: int
    ranks: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {"mrr": self.mrr, "n_queries": self.n_queries}
        for n, v in sorted(self.hits.items()):
            out[f"hits@{n}"] = v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def rank_filtered(
    scores: np.ndarray,
    target: int,
    query: tuple[int, int],
    filter_index: FilterIndex,
    tie: str = "pessimistic",
) -> float:
    """Filtered rank (>= 1) of the target entity under the given scores.

    Entities listed in the filter for this query are removed from the
    ranking, except the target itself, which is always exempt.
    """
    if tie not in TIE_MODES:
        raise ConfigError(f"unknown tie mode {tie!r}; expected one of {TIE_MODES}")
    removed = filter_index.tails(*query)
    s_target = scores[target]
    allowed = np.ones(scores.shape[0], dtype=bool)
    allowed[removed] = False
    allowed[target] = False  # the target is never filtered away, nor self-counted
    greater = int(np.count_nonzero(scores[allowed] > s_target))
    if tie == "optimistic":
        return 1.0 + greater
    tied = int(np.count_nonzero(scores[allowed] == s_target))
    if tie == "pessimistic":
        return 1.0 + greater + tied
    return 1.0 + greater + tied / 2.0


Scorer = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def as_scorer(model: "ModelState | Sequence[ModelState] | Scorer", chunk: int = 2048) -> Scorer:
    """Adapt a model, a list of models (additive ensemble), or a callable."""
    if isinstance(model, ModelState):
        return lambda heads, rels: score_all(model, heads, rels, chunk=chunk)
    if callable(model):
        return model
    states = list(model)
    if not states:
        raise ConfigError("empty model list")

    def ensemble(heads, rels):
        total = score_all(states[0], heads, rels, chunk=chunk)
        for st in states[1:]:
            total = total + score_all(st, heads, rels, chunk=chunk)
        return total

    return ensemble


def evaluate(
    model: "ModelState | Sequence[ModelState] | Scorer",
    split: Sequence[Triple],
    filter_index: FilterIndex,
    hits_at: Sequence[int] = (1, 3, 10),
    tie: str = "pessimistic",
    batch_size: int = 512,
    collect_ranks: bool = False,
    chunk: int = 2048,
) -> Metrics:
    """Filtered MRR / Hits@N over a split of tail queries."""
    if len(split) == 0:
        raise ConfigError("evaluate: empty split")
    scorer = as_scorer(model, chunk=chunk)
    arr = triples_to_array(split)
    ranks = np.empty(arr.shape[0], dtype=np.float64)
    for start in range(0, arr.shape[0], batch_size):
        rows = arr[start : start + batch_size]
        heads = torch.from_numpy(rows[:, 0])
        rels = torch.from_numpy(rows[:, 1])
        with torch.no_grad():
            scores = scorer(heads, rels).numpy()
        for i, (h, r, t) in enumerate(rows):
            ranks[start + i] = rank_filtered(
                scores[i], int(t), (int(h), int(r)), filter_index, tie=tie
            )
    return Metrics(
        mrr=float(np.mean(1.0 / ranks)),
        hits={int(n): float(np.mean(ranks <= n)) for n in hits_at},
        n_queries=int(arr.shape[0]),
        ranks=ranks if collect_ranks else None,
    )


def dump_ranks(metrics: Metrics, split: Sequence[Triple], path, vocab=None) -> None:
    """Per-query TSV dump: head, relation, tail, rank."""
    if metrics.ranks is None:
        raise ConfigError("metrics were computed without collect_ranks=True")
    with open(path, "w", encoding="utf-8") as fh:
        for (h, r, t), rank in zip(split, metrics.ranks):
            if vocab is not None:
                h, r, t = vocab.entities[h], vocab.relations[r], vocab.entities[t]
            rank_txt = f"{int(rank)}" if float(rank).is_integer() else f"{rank:g}"
            fh.write(f"{h}\t{r}\t{t}\t{rank_txt}\n")
