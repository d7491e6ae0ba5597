"""Command-line entry points: pretrain, distill, eval, dimbound.

Options can come from a flat `key = value` config file (--config) with
command-line flags taking precedence.  Every run writes a `run-config`
snapshot of the fully resolved options next to its outputs.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .distill import DistillConfig, TeacherEnsemble
from .dimbound import (
    DEFAULT_FIT_DIMS,
    DEFAULT_NODES,
    BoundParams,
    fit_epsilon,
    min_dimension,
)
from .errors import ConfigError, DataError, KGDistillError, NumericalError
from .evaluation import dump_ranks, evaluate
from .kgdata import add_reciprocals, build_filter, load_dataset
from .models import FAMILIES
from .training import PretrainConfig, distill_student, pretrain_teacher

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _read_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"missing config file: {p}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{p}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config_file(
    parser: argparse.ArgumentParser,
    subparsers: dict[str, argparse.ArgumentParser],
    argv: list[str],
) -> argparse.Namespace:
    """Parse argv, letting a --config file supply defaults for its subcommand."""
    args, _ = parser.parse_known_args(argv)
    config_path = getattr(args, "config", None)
    if config_path:
        sub = subparsers[args.command]
        file_values = _read_config_file(config_path)
        known = {a.dest for a in sub._actions}  # noqa: SLF001
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"{config_path}: unknown config keys {sorted(unknown)}")
        sub.set_defaults(**{k: _coerce(sub, k, v) for k, v in file_values.items()})
    return parser.parse_args(argv)


def _coerce(subparser: argparse.ArgumentParser, dest: str, value: str):
    for action in subparser._actions:  # noqa: SLF001
        if action.dest != dest:
            continue
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            return value.lower() in ("1", "true", "yes", "on")
        if action.type is not None:
            if action.nargs in ("+", "*"):
                return [action.type(v) for v in value.split(",")]
            return action.type(value)
        return value
    return value


def _default_threads() -> int:
    try:
        import psutil

        n = psutil.cpu_count(logical=False)
        if n:
            return n
    except ImportError:
        pass
    return os.cpu_count() or 1


def _set_threads(n: int) -> None:
    import torch

    torch.set_num_threads(max(1, n))


def _write_snapshot(outdir: Path, command: str, args: argparse.Namespace) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {command}", f"version = {__version__}"]
    for key, value in sorted(vars(args).items()):
        if key in ("func", "command", "config"):
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    (outdir / "run-config").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_augmented(data_dir: str):
    return add_reciprocals(load_dataset(data_dir))


def cmd_pretrain(args: argparse.Namespace) -> int:
    dataset = _load_augmented(args.data)
    config = PretrainConfig(
        lr=args.lr,
        negatives=args.negatives,
        reg=args.reg,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        valid_every=args.valid_every,
        self_check=not args.no_self_check,
        eval_chunk=args.eval_chunk,
        entity_space=args.entity_space,
        use_biases=not args.no_biases,
        curvature_mode=args.curvature_mode,
        filter_scope=args.filter_scope,
    )
    outdir = Path(args.out)
    _write_snapshot(outdir, "pretrain", args)
    state, _ = pretrain_teacher(
        args.kind, args.dim, dataset, config, log_path=outdir / "train-log.jsonl"
    )
    save_checkpoint(state, outdir / "checkpoint")
    print(f"checkpoint written to {outdir / 'checkpoint'}")
    return EXIT_OK


def cmd_distill(args: argparse.Namespace) -> int:
    if not args.teacher:
        raise ConfigError("distillation needs at least one --teacher checkpoint")
    dataset = _load_augmented(args.data)
    ensemble = TeacherEnsemble(tuple(load_checkpoint(p) for p in args.teacher))
    config = DistillConfig(
        dim=args.dim,
        K=args.K,
        alpha=args.alpha,
        negatives=args.negatives,
        reg=args.reg,
        lr=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        gamma0=args.gamma0,
        gamma_growth=args.gamma_growth,
        candidate_strategy=args.candidates,
        use_contrast_attention=not args.no_contrast_attention,
        use_relation_scale=not args.no_relation_scale,
        valid_every=args.valid_every,
        self_check=not args.no_self_check,
        eval_chunk=args.eval_chunk,
        entity_space=args.entity_space,
        use_biases=not args.no_biases,
        curvature_mode=args.curvature_mode,
        filter_scope=args.filter_scope,
    )
    outdir = Path(args.out)
    _write_snapshot(outdir, "distill", args)
    state, _ = distill_student(
        config, args.kind, ensemble, dataset, log_path=outdir / "train-log.jsonl"
    )
    save_checkpoint(state, outdir / "checkpoint")
    print(f"checkpoint written to {outdir / 'checkpoint'}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = _load_augmented(args.data)
    states = [load_checkpoint(p) for p in args.checkpoint]
    for state, path in zip(states, args.checkpoint):
        if (state.n_entities, state.n_relations) != (
            dataset.vocab.n_entities,
            dataset.vocab.n_relations,
        ):
            raise DataError(f"checkpoint {path} does not match the dataset vocabulary sizes")
    filter_index = build_filter(dataset, args.filter_scope)
    split = dataset.splits[args.split]
    model = states[0] if len(states) == 1 else states
    metrics = evaluate(
        model,
        split,
        filter_index,
        tie=args.tie,
        chunk=args.eval_chunk,
        collect_ranks=args.dump_ranks is not None,
    )
    print(metrics.to_json())
    if args.dump_ranks is not None:
        dump_ranks(metrics, split, args.dump_ranks, vocab=dataset.vocab)
    return EXIT_OK


def cmd_dimbound(args: argparse.Namespace) -> int:
    if args.data is not None:
        dataset = load_dataset(args.data)
        n_entities, n_relations = dataset.vocab.n_entities, dataset.vocab.n_relations
    elif args.Ne is not None and args.Nr is not None:
        n_entities, n_relations = args.Ne, args.Nr
    else:
        raise ConfigError("dimbound needs either --data or both --Ne and --Nr")
    if n_entities < 1 or n_relations < 1:
        raise ConfigError("entity and relation counts must be positive")

    import numpy as np

    paper = BoundParams()
    log_n = float(np.log(float(n_entities) ** 2 * float(n_relations)))
    rows = [
        ("N_e", f"{n_entities}"),
        ("N_r", f"{n_relations}"),
        ("log N", f"{log_n:.4f}"),
        (f"bound (paper alpha={paper.alpha:.4f})", f"{min_dimension(n_entities, n_relations, paper):.2f}"),
    ]
    eps_hats = {}
    for sign in ("+", "-"):
        eps_hat, r2 = fit_epsilon(args.d_values, n_entities, n_relations, nodes=args.nodes, sign=sign)
        eps_hats[sign] = (eps_hat, r2)
        rows.append((f"fitted epsilon (e^({sign}D) variant)", f"{eps_hat:.6f} (R^2 = {r2:.6f})"))
    fitted = BoundParams(epsilon=eps_hats[args.sign][0], nodes=args.nodes)
    rows.append(
        (
            f"bound (fitted alpha={fitted.alpha:.4f}, {args.sign} variant)",
            f"{min_dimension(n_entities, n_relations, fitted):.2f}",
        )
    )
    width = max(len(label) for label, _ in rows)
    for label, value in rows:
        print(f"{label:<{width}}  {value}")
    return EXIT_OK


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="kgdistill",
        description="Train, distill and evaluate low-dimensional knowledge-graph embeddings.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, scope_default: str) -> None:
        p.add_argument("--config", help="flat key = value config file; flags override")
        p.add_argument("--data", required=True, help="directory with train/valid/test .txt files")
        p.add_argument("--seed", type=int, default=42)
        p.add_argument("--threads", type=int, default=_default_threads())
        p.add_argument("--eval-chunk", type=int, default=2048)
        p.add_argument(
            "--filter-scope", choices=("train-only", "full"), default=scope_default
        )
        p.add_argument("--tie", choices=("pessimistic", "optimistic", "mean"), default="pessimistic")

    def add_train_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--kind", choices=FAMILIES, required=True)
        p.add_argument("--dim", type=int, required=True)
        p.add_argument("--lr", type=float, default=0.001)
        p.add_argument("--negatives", type=int, default=50)
        p.add_argument("--reg", type=float, default=0.0)
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=512)
        p.add_argument("--valid-every", type=int, default=1)
        p.add_argument("--no-self-check", action="store_true")
        p.add_argument("--no-biases", action="store_true")
        p.add_argument("--entity-space", choices=("tangent", "ball"), default="tangent")
        p.add_argument(
            "--curvature-mode", choices=("per_relation", "global"), default="per_relation"
        )
        p.add_argument("--out", required=True, help="output directory")

    p_pre = sub.add_parser("pretrain", help="pre-train one teacher/baseline model")
    add_common(p_pre, "train-only")
    add_train_common(p_pre)
    p_pre.set_defaults(func=cmd_pretrain)

    p_dis = sub.add_parser("distill", help="distill teachers into a student")
    add_common(p_dis, "full")
    add_train_common(p_dis)
    p_dis.add_argument("--teacher", action="append", default=[], help="teacher checkpoint dir (repeatable)")
    p_dis.add_argument("-K", "--K", type=int, default=300, dest="K")
    p_dis.add_argument("--alpha", type=float, default=0.1)
    p_dis.add_argument("--gamma0", type=float, default=1.0)
    p_dis.add_argument("--gamma-growth", type=float, default=1.1)
    p_dis.add_argument("--candidates", choices=("topk", "random"), default="topk")
    p_dis.add_argument("--no-contrast-attention", action="store_true")
    p_dis.add_argument("--no-relation-scale", action="store_true")
    p_dis.set_defaults(func=cmd_distill)

    p_eval = sub.add_parser("eval", help="evaluate checkpoints (several = additive ensemble)")
    add_common(p_eval, "full")
    p_eval.add_argument("--checkpoint", action="append", required=True, help="checkpoint dir (repeatable)")
    p_eval.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p_eval.add_argument("--dump-ranks", help="write per-query ranks to this TSV file")
    p_eval.set_defaults(func=cmd_eval)

    p_dim = sub.add_parser("dimbound", help="minimum embedding dimension estimate")
    p_dim.add_argument("--config", help="flat key = value config file; flags override")
    p_dim.add_argument("--data", help="read entity/relation counts from this dataset directory")
    p_dim.add_argument("--Ne", type=int, help="entity count")
    p_dim.add_argument("--Nr", type=int, help="relation count")
    p_dim.add_argument("--nodes", type=int, default=DEFAULT_NODES)
    p_dim.add_argument(
        "--d-values", type=int, nargs="+", default=list(DEFAULT_FIT_DIMS), help="dimensions for the slope fit"
    )
    p_dim.add_argument("--sign", choices=("+", "-"), default="+")
    p_dim.set_defaults(func=cmd_dimbound)
    return parser, {"pretrain": p_pre, "distill": p_dis, "eval": p_eval, "dimbound": p_dim}


def main(argv: "list[str] | None" = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()
    try:
        args = _apply_config_file(parser, subparsers, argv)
        if getattr(args, "threads", None):
            _set_threads(args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KGDistillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
