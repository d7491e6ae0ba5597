"""Checkpoint directories: a text manifest plus one raw table per file.

Layout:
    <dir>/manifest         key = value lines (kind, dim, counts, seed, ...)
    <dir>/<table>.bin      little-endian float64, row-major, no header

The manifest records every table's shape so truncated or resized files are
rejected before any training or evaluation touches them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .models import DTYPE, ModelKind, ModelState

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest"


def save_checkpoint(state: ModelState, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tables = {name: t.detach().numpy() for name, t in state.tables().items()}
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"kind = {state.kind.family}",
        f"dim = {state.dim}",
        f"n_entities = {state.n_entities}",
        f"n_relations = {state.n_relations}",
        f"seed = {state.seed}",
        f"entity_space = {state.entity_space}",
        f"use_biases = {state.use_biases}",
        f"curvature_mode = {state.curvature_mode}",
        f"vocab_hash = {state.vocab_hash or ''}",
    ]
    for name, arr in tables.items():
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"table.{name} = {shape}")
        with open(directory / f"{name}.bin", "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def _parse_manifest(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise CheckpointError(f"missing manifest: {path}")
    entries: dict[str, str] = {}
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}: malformed manifest line {raw!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_checkpoint(directory: str | Path) -> ModelState:
    directory = Path(directory)
    entries = _parse_manifest(directory / MANIFEST_NAME)
    version = entries.get("format_version")
    if version != str(FORMAT_VERSION):
        raise CheckpointError(
            f"{directory}: unsupported checkpoint format version {version!r} "
            f"(this build reads version {FORMAT_VERSION})"
        )
    try:
        kind = ModelKind.parse(entries["kind"])
        dim = int(entries["dim"])
        n_entities = int(entries["n_entities"])
        n_relations = int(entries["n_relations"])
        seed = int(entries["seed"])
    except KeyError as exc:
        raise CheckpointError(f"{directory}: manifest missing key {exc.args[0]!r}") from exc

    tables: dict[str, torch.Tensor] = {}
    for key, value in entries.items():
        if not key.startswith("table."):
            continue
        name = key[len("table.") :]
        shape = tuple(int(s) for s in value.split("x"))
        path = directory / f"{name}.bin"
        if not path.is_file():
            raise CheckpointError(f"{directory}: missing table file {name}.bin")
        data = np.frombuffer(path.read_bytes(), dtype="<f8")
        expected = int(np.prod(shape))
        if data.size != expected:
            raise CheckpointError(
                f"{directory}: table {name} has {data.size} values, expected {expected}"
            )
        tables[name] = torch.from_numpy(data.reshape(shape).copy()).to(DTYPE)

    required = {"entity_emb", "rel_emb", "rel_rot", "curv_raw", "bias_head", "bias_tail"}
    missing = required - tables.keys()
    if missing:
        raise CheckpointError(f"{directory}: manifest lists no {sorted(missing)} tables")
    if tables["entity_emb"].shape != (n_entities, dim):
        raise CheckpointError(f"{directory}: entity table shape mismatch with manifest")

    return ModelState(
        kind=kind,
        dim=dim,
        n_entities=n_entities,
        n_relations=n_relations,
        seed=seed,
        entity_space=entries.get("entity_space", "tangent"),
        use_biases=entries.get("use_biases", "True") == "True",
        curvature_mode=entries.get("curvature_mode", "per_relation"),
        vocab_hash=entries.get("vocab_hash") or None,
        **tables,
    )
