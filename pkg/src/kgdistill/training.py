"""Training loops: teacher pre-training and iterative distillation.

Both loops share the same skeleton: shuffle the augmented training queries,
assemble per-batch losses, take one Adam step per batch, log validation
MRR per epoch, and keep the checkpoint with the best validation MRR.
Neither loop ever reads validation or test labels into a gradient.

A startup self-test compares the analytic gradient of every loss term
against central finite differences on a small probe batch and refuses to
train on disagreement.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .distill import (
    DistillConfig,
    SeniorState,
    TeacherEnsemble,
    contrast_attention,
    gamma_schedule,
    hard_label_loss,
    init_senior,
    junior_loss,
    relation_scale,
    senior_loss,
    soft_label_loss,
    stable_topk,
)
from .errors import ConfigError, DataError, GradCheckError, NumericalError
from .evaluation import evaluate
from .kgdata import Dataset, build_filter, triples_to_array
from .models import DTYPE, ModelKind, ModelState, init_model, score_candidates, score_all
from .optim import adam_step, analytic_grads, grad_check, init_adam, l2_penalty

GRAD_CHECK_TOL = 1e-4


@dataclass
class PretrainConfig:
    """Hyperparameters for hard-label pre-training of a single model."""

    lr: float = 0.001
    negatives: int = 50
    reg: float = 0.0
    epochs: int = 100
    batch_size: int = 512
    seed: int = 42
    valid_every: int = 1
    self_check: bool = True
    eval_chunk: int = 2048
    entity_space: str = "tangent"
    use_biases: bool = True
    curvature_mode: str = "per_relation"
    filter_scope: str = "train-only"
    tie: str = "pessimistic"


def _require_augmented(dataset: Dataset) -> None:
    if not dataset.reciprocals_added:
        raise ConfigError("training requires a reciprocal-augmented dataset")


def _sample_negative_block(
    rng: np.random.Generator, targets: np.ndarray, n: int, n_entities: int
) -> np.ndarray:
    """(B, n) negatives, uniform without replacement, excluding each target."""
    out = np.empty((targets.shape[0], n), dtype=np.int64)
    for i, t in enumerate(targets):
        draws = rng.choice(n_entities - 1, size=n, replace=False)
        draws[draws >= t] += 1
        out[i] = draws
    return out


def _hard_loss_for_batch(
    model: ModelState,
    heads: torch.Tensor,
    rels: torch.Tensor,
    targets: torch.Tensor,
    negatives: torch.Tensor,
) -> torch.Tensor:
    cols = torch.cat([targets.unsqueeze(1), negatives], dim=1)  # target first
    s_neg = score_candidates(model, heads, rels, cols)
    labels = torch.zeros_like(s_neg)
    labels[:, 0] = 1.0
    return hard_label_loss(s_neg, labels)


def _check_finite(loss: torch.Tensor, context: str) -> None:
    if not torch.isfinite(loss):
        raise NumericalError(f"{context}: loss diverged to {float(loss)}")


def _log_record(log_path, record: dict) -> None:
    if log_path is not None:
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def _probe_batch(train_arr: np.ndarray, size: int = 6) -> np.ndarray:
    return train_arr[: min(size, train_arr.shape[0])]


def _self_check_pretrain(model: ModelState, train_arr: np.ndarray, config: PretrainConfig) -> None:
    rows = _probe_batch(train_arr)
    rng = np.random.default_rng(10_007)  # independent of the training stream
    n = min(config.negatives, model.n_entities - 1)
    negs = torch.from_numpy(_sample_negative_block(rng, rows[:, 2], n, model.n_entities))
    heads = torch.from_numpy(rows[:, 0])
    rels = torch.from_numpy(rows[:, 1])
    targets = torch.from_numpy(rows[:, 2])
    params = model.trainable_parameters()

    def loss_fn():
        loss = _hard_loss_for_batch(model, heads, rels, targets, negs)
        if config.reg > 0:
            loss = loss + l2_penalty(params, config.reg)[0]
        return loss

    err = grad_check(loss_fn, params)
    if err > GRAD_CHECK_TOL:
        raise GradCheckError(
            f"hard-label loss failed the startup gradient check: {err:.3e} > {GRAD_CHECK_TOL}"
        )


def pretrain_teacher(
    kind: ModelKind | str,
    dim: int,
    dataset: Dataset,
    config: PretrainConfig,
    log_path: "str | Path | None" = None,
) -> tuple[ModelState, list[dict]]:
    """Train one model with negative-sampling BCE (plus optional L2).

    Returns the state with the best validation MRR and the per-epoch log.
    """
    _require_augmented(dataset)
    vocab = dataset.vocab
    if config.negatives >= vocab.n_entities:
        raise ConfigError("negatives must be < N_e")
    model = init_model(
        kind,
        dim,
        vocab,
        config.seed,
        entity_space=config.entity_space,
        use_biases=config.use_biases,
        curvature_mode=config.curvature_mode,
    )
    model.vocab_hash = vocab.digest()
    train_arr = triples_to_array(dataset.train)
    if train_arr.shape[0] == 0:
        raise ConfigError("empty training split")
    if config.self_check:
        model.requires_grad_(True)
        _self_check_pretrain(model, train_arr, config)
        model.requires_grad_(False)

    params = model.trainable_parameters()
    for p in params.values():
        p.requires_grad_(True)
    adam = init_adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    filter_index = build_filter(dataset, config.filter_scope)

    best_state: ModelState | None = None
    best_mrr = -1.0
    records: list[dict] = []
    for epoch in range(config.epochs):
        perm = rng.permutation(train_arr.shape[0])
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, perm.size, config.batch_size):
            rows = train_arr[perm[start : start + config.batch_size]]
            negs = _sample_negative_block(rng, rows[:, 2], config.negatives, model.n_entities)
            loss = _hard_loss_for_batch(
                model,
                torch.from_numpy(rows[:, 0]),
                torch.from_numpy(rows[:, 1]),
                torch.from_numpy(rows[:, 2]),
                torch.from_numpy(negs),
            )
            if config.reg > 0:
                loss = loss + l2_penalty(params, config.reg)[0]
            _check_finite(loss, f"pretrain epoch {epoch}")
            grads = analytic_grads(lambda: loss, params)
            adam_step(params, grads, adam)
            epoch_loss += float(loss)
            n_batches += 1

        record = {
            "epoch": epoch,
            "loss_J": epoch_loss / max(n_batches, 1),
            "loss_S": None,
            "valid_MRR": None,
            "valid_hits1": None,
            "valid_hits10": None,
            "gamma": None,
        }
        if dataset.valid and (epoch % config.valid_every == 0 or epoch == config.epochs - 1):
            metrics = evaluate(
                model, dataset.valid, filter_index, tie=config.tie, chunk=config.eval_chunk
            )
            record.update(
                valid_MRR=metrics.mrr,
                valid_hits1=metrics.hits[1],
                valid_hits10=metrics.hits[10],
            )
            if metrics.mrr > best_mrr:
                best_mrr = metrics.mrr
                best_state = model.clone()
        records.append(record)
        _log_record(log_path, record)

    final = best_state if best_state is not None else model.clone()
    final.vocab_hash = model.vocab_hash
    return final, records


# ---------------------------------------------------------------------------
# Distillation
# ---------------------------------------------------------------------------


def _slate_for_batch(
    junior: ModelState,
    config: DistillConfig,
    heads: torch.Tensor,
    rels: torch.Tensor,
    rng: np.random.Generator,
) -> torch.Tensor:
    """(B, K) candidate ids: junior top-K, or uniform random for the ablation."""
    if config.candidate_strategy == "topk":
        s_all = score_all(junior, heads, rels, chunk=config.eval_chunk)
        return stable_topk(s_all, config.K)
    b = heads.shape[0]
    cands = np.stack(
        [rng.choice(junior.n_entities, size=config.K, replace=False) for _ in range(b)]
    )
    return torch.from_numpy(cands)


def _distill_batch_losses(
    junior: ModelState,
    ensemble: TeacherEnsemble,
    senior: SeniorState,
    config: DistillConfig,
    gamma: float,
    heads: torch.Tensor,
    rels: torch.Tensor,
    targets: torch.Tensor,
    c_top: torch.Tensor,
    negatives: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """(junior loss, senior loss) for one batch with fixed slates/negatives."""
    s_top = score_candidates(junior, heads, rels, c_top)  # (B, K), junior grad
    with torch.no_grad():
        s_teachers = torch.stack(
            [score_candidates(t, heads, rels, c_top) for t in ensemble.teachers]
        )  # (m, B, K)

    if config.use_relation_scale:
        s_scaled = relation_scale(s_teachers, senior, rels)
    else:
        s_scaled = s_teachers

    if config.alpha > 0.0:
        if config.use_contrast_attention:
            l_top, _ = contrast_attention(s_scaled, s_teachers, s_top, gamma)
        else:
            l_top = s_scaled.sum(dim=0)
        soft = soft_label_loss(l_top, s_top)
    else:
        soft = torch.zeros((), dtype=DTYPE)

    hard = _hard_loss_for_batch(junior, heads, rels, targets, negatives)
    loss_j = junior_loss(soft, hard, config.alpha)

    if config.use_relation_scale:
        loss_s = senior_loss(s_scaled, c_top, targets)
    else:
        loss_s = torch.zeros((), dtype=DTYPE)
    return loss_j, loss_s


def _self_check_distill(
    junior: ModelState,
    ensemble: TeacherEnsemble,
    senior: SeniorState,
    config: DistillConfig,
    train_arr: np.ndarray,
) -> None:
    """Gradient-check each loss surface on a probe batch before training."""
    rows = _probe_batch(train_arr)
    rng = np.random.default_rng(10_007)
    heads = torch.from_numpy(rows[:, 0])
    rels = torch.from_numpy(rows[:, 1])
    targets = torch.from_numpy(rows[:, 2])
    k = min(config.K, junior.n_entities)
    n = min(config.negatives, junior.n_entities - 1)
    c_top = _slate_for_batch(
        junior, DistillConfig(**{**asdict(config), "K": k}), heads, rels, rng
    )
    negs = torch.from_numpy(_sample_negative_block(rng, rows[:, 2], n, junior.n_entities))
    gamma = gamma_schedule(0, config.gamma0, config.gamma_growth)

    junior_params = junior.trainable_parameters()
    surfaces = {"junior": junior_params}
    if config.use_relation_scale:
        surfaces["senior"] = {"w_rel": senior.w_rel}
    surfaces["combined"] = {**junior_params, **surfaces.get("senior", {})}

    def total_loss():
        loss_j, loss_s = _distill_batch_losses(
            junior, ensemble, senior, config, gamma, heads, rels, targets, c_top, negs
        )
        loss = loss_s + loss_j
        if config.reg > 0:
            loss = loss + l2_penalty(surfaces["combined"], config.reg)[0]
        return loss

    for name, params in surfaces.items():
        err = grad_check(total_loss, params)
        if err > GRAD_CHECK_TOL:
            raise GradCheckError(
                f"{name} parameters failed the startup gradient check: "
                f"{err:.3e} > {GRAD_CHECK_TOL}"
            )


def distill_student(
    config: DistillConfig,
    junior_kind: ModelKind | str,
    ensemble: TeacherEnsemble,
    dataset: Dataset,
    log_path: "str | Path | None" = None,
) -> tuple[ModelState, list[dict]]:
    """Joint iterative distillation of a fresh student against frozen teachers.

    Per batch: the junior proposes candidate slates, frozen teachers score
    them, gates rescale, attention fuses labels, and a single Adam step
    updates junior parameters and gates together on the combined objective.
    """
    _require_augmented(dataset)
    vocab = dataset.vocab
    config.validate(vocab.n_entities)
    if (ensemble.n_entities, ensemble.n_relations) != (vocab.n_entities, vocab.n_relations):
        raise DataError(
            f"teacher/vocab mismatch: teachers expect "
            f"({ensemble.n_entities}, {ensemble.n_relations}) entities/relations, "
            f"dataset has ({vocab.n_entities}, {vocab.n_relations})"
        )
    vocab_hash = vocab.digest()
    teacher_hashes = {t.vocab_hash for t in ensemble.teachers if t.vocab_hash}
    if teacher_hashes and teacher_hashes != {vocab_hash}:
        raise DataError(
            f"teacher vocab hash {sorted(teacher_hashes)} != dataset vocab hash {vocab_hash}"
        )

    junior = init_model(
        junior_kind,
        config.dim,
        vocab,
        config.seed,
        entity_space=config.entity_space,
        use_biases=config.use_biases,
        curvature_mode=config.curvature_mode,
    )
    junior.vocab_hash = vocab_hash
    senior = init_senior(vocab.n_relations, ensemble.m, config.gamma0, config.gamma_growth)
    train_arr = triples_to_array(dataset.train)
    if train_arr.shape[0] == 0:
        raise ConfigError("empty training split")

    if config.self_check:
        junior.requires_grad_(True)
        senior.w_rel.requires_grad_(True)
        _self_check_distill(junior, ensemble, senior, config, train_arr)
        junior.requires_grad_(False)
        senior.w_rel.requires_grad_(False)

    params = dict(junior.trainable_parameters())
    if config.use_relation_scale:
        params["w_rel"] = senior.w_rel
    for p in params.values():
        p.requires_grad_(True)
    adam = init_adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    filter_index = build_filter(dataset, config.filter_scope)

    best_state: ModelState | None = None
    best_mrr = -1.0
    records: list[dict] = []
    for epoch in range(config.epochs):
        senior.epoch = epoch
        gamma = gamma_schedule(epoch, config.gamma0, config.gamma_growth)
        perm = rng.permutation(train_arr.shape[0])
        sums = {"loss_J": 0.0, "loss_S": 0.0}
        n_batches = 0
        for start in range(0, perm.size, config.batch_size):
            rows = train_arr[perm[start : start + config.batch_size]]
            heads = torch.from_numpy(rows[:, 0])
            rels = torch.from_numpy(rows[:, 1])
            targets = torch.from_numpy(rows[:, 2])
            c_top = _slate_for_batch(junior, config, heads, rels, rng)
            negs = torch.from_numpy(
                _sample_negative_block(rng, rows[:, 2], config.negatives, junior.n_entities)
            )
            loss_j, loss_s = _distill_batch_losses(
                junior, ensemble, senior, config, gamma, heads, rels, targets, c_top, negs
            )
            loss = loss_s + loss_j
            if config.reg > 0:
                loss = loss + l2_penalty(params, config.reg)[0]
            _check_finite(loss, f"distill epoch {epoch}")
            grads = analytic_grads(lambda: loss, params)
            adam_step(params, grads, adam)
            sums["loss_J"] += float(loss_j)
            sums["loss_S"] += float(loss_s)
            n_batches += 1

        record = {
            "epoch": epoch,
            "loss_J": sums["loss_J"] / max(n_batches, 1),
            "loss_S": sums["loss_S"] / max(n_batches, 1),
            "valid_MRR": None,
            "valid_hits1": None,
            "valid_hits10": None,
            "gamma": gamma,
        }
        if dataset.valid and (epoch % config.valid_every == 0 or epoch == config.epochs - 1):
            metrics = evaluate(
                junior, dataset.valid, filter_index, tie=config.tie, chunk=config.eval_chunk
            )
            record.update(
                valid_MRR=metrics.mrr,
                valid_hits1=metrics.hits[1],
                valid_hits10=metrics.hits[10],
            )
            if metrics.mrr > best_mrr:
                best_mrr = metrics.mrr
                best_state = junior.clone()
        records.append(record)
        _log_record(log_path, record)

    final = best_state if best_state is not None else junior.clone()
    final.vocab_hash = vocab_hash
    return final, records
