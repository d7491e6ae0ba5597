"""Triple-file loading, vocabularies, reciprocal augmentation, filter index.

Triple files are UTF-8 text, one `head<TAB>relation<TAB>tail` line per fact
(the WN18RR / FB15k-237 layout).  Entity and relation ids are assigned by
lexicographic sort of the names so that id assignment is deterministic
across platforms and input orderings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, ParseError, VocabError

RECIPROCAL_SUFFIX = "_reverse"


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


@dataclass(frozen=True)
class Vocab:
    """Bijective name<->id maps with dense ids 0..N-1."""

    entity_to_id: Mapping[str, int]
    relation_to_id: Mapping[str, int]

    @property
    def n_entities(self) -> int:
        return len(self.entity_to_id)

    @property
    def n_relations(self) -> int:
        return len(self.relation_to_id)

    @property
    def entities(self) -> list[str]:
        return sorted(self.entity_to_id, key=self.entity_to_id.get)

    @property
    def relations(self) -> list[str]:
        return sorted(self.relation_to_id, key=self.relation_to_id.get)

    def dump(self, entity_path: str | Path, relation_path: str | Path) -> None:
        """Write two-column `name<TAB>id` TSV dumps."""
        for path, mapping in (
            (entity_path, self.entity_to_id),
            (relation_path, self.relation_to_id),
        ):
            with open(path, "w", encoding="utf-8") as fh:
                for name, idx in sorted(mapping.items(), key=lambda kv: kv[1]):
                    fh.write(f"{name}\t{idx}\n")

    def digest(self) -> str:
        """Stable SHA-256 over the full name->id assignment."""
        h = hashlib.sha256()
        for name, idx in sorted(self.entity_to_id.items(), key=lambda kv: kv[1]):
            h.update(f"e\t{name}\t{idx}\n".encode("utf-8"))
        for name, idx in sorted(self.relation_to_id.items(), key=lambda kv: kv[1]):
            h.update(f"r\t{name}\t{idx}\n".encode("utf-8"))
        return h.hexdigest()


@dataclass(frozen=True)
class Dataset:
    train: tuple[Triple, ...]
    valid: tuple[Triple, ...]
    test: tuple[Triple, ...]
    vocab: Vocab
    reciprocals_added: bool = False

    @property
    def splits(self) -> dict[str, tuple[Triple, ...]]:
        return {"train": self.train, "valid": self.valid, "test": self.test}


@dataclass(frozen=True)
class FilterIndex:
    """(head-id, rel-id) -> sorted array of tail-ids known to be true."""

    index: Mapping[tuple[int, int], np.ndarray]
    scope: str  # "train-only" | "full"

    def tails(self, head: int, rel: int) -> np.ndarray:
        return self.index.get((head, rel), _EMPTY_IDS)


_EMPTY_IDS = np.empty(0, dtype=np.int64)


def _parse_lines(path: str | Path) -> list[tuple[str, str, str]]:
    rows: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str, str]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            row = (fields[0], fields[1], fields[2])
            # duplicates carry no information for ranking losses; keep first
            if row not in seen:
                seen.add(row)
                rows.append(row)
    return rows


def _build_vocab(rows: Iterable[tuple[str, str, str]]) -> Vocab:
    ents: set[str] = set()
    rels: set[str] = set()
    for h, r, t in rows:
        ents.add(h)
        ents.add(t)
        rels.add(r)
    return Vocab(
        entity_to_id={name: i for i, name in enumerate(sorted(ents))},
        relation_to_id={name: i for i, name in enumerate(sorted(rels))},
    )


def _index_rows(rows: Sequence[tuple[str, str, str]], vocab: Vocab, path) -> list[Triple]:
    triples = []
    for h, r, t in rows:
        try:
            triples.append(
                Triple(vocab.entity_to_id[h], vocab.relation_to_id[r], vocab.entity_to_id[t])
            )
        except KeyError as exc:
            raise VocabError(f"{path}: name {exc.args[0]!r} not in fixed vocabulary") from exc
    return triples


def load_triples(path: str | Path, vocab: Vocab | None = None) -> tuple[list[Triple], Vocab]:
    """Load one triple file.

    With ``vocab=None`` a vocabulary is built from this file alone; with a
    fixed vocabulary, unseen names raise :class:`VocabError`.
    """
    rows = _parse_lines(path)
    if vocab is None:
        vocab = _build_vocab(rows)
    return _index_rows(rows, vocab, path), vocab


def load_dataset(
    directory: str | Path,
    filenames: Mapping[str, str] | None = None,
) -> Dataset:
    """Load train/valid/test files from a directory into one Dataset.

    The vocabulary covers the union of all three splits, matching how
    dataset statistics are conventionally reported.
    """
    directory = Path(directory)
    names = dict(filenames or {"train": "train.txt", "valid": "valid.txt", "test": "test.txt"})
    paths = {split: directory / fname for split, fname in names.items()}
    for split, p in paths.items():
        if not p.is_file():
            raise ConfigError(f"missing {split} file: {p}")
    rows = {split: _parse_lines(p) for split, p in paths.items()}
    vocab = _build_vocab(r for split_rows in rows.values() for r in split_rows)
    splits = {s: tuple(_index_rows(rows[s], vocab, paths[s])) for s in ("train", "valid", "test")}
    _check_disjoint(splits)
    return Dataset(vocab=vocab, **splits)


def _check_disjoint(splits: Mapping[str, tuple[Triple, ...]]) -> None:
    names = list(splits)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            overlap = set(splits[a]) & set(splits[b])
            if overlap:
                raise DataError(
                    f"splits {a!r} and {b!r} share {len(overlap)} triples; splits must be disjoint"
                )


def dataset_from_triples(
    train: Sequence[Triple],
    valid: Sequence[Triple],
    test: Sequence[Triple],
    vocab: Vocab,
) -> Dataset:
    """Assemble a Dataset from already-indexed triples (id-range checked)."""
    ne, nr = vocab.n_entities, vocab.n_relations
    for split_name, triples in (("train", train), ("valid", valid), ("test", test)):
        for tr in triples:
            if not (0 <= tr.head < ne and 0 <= tr.tail < ne and 0 <= tr.rel < nr):
                raise DataError(f"{split_name} triple {tr} outside vocab ranges")
    ds = Dataset(train=tuple(train), valid=tuple(valid), test=tuple(test), vocab=vocab)
    _check_disjoint(ds.splits)
    return ds


def add_reciprocals(dataset: Dataset) -> Dataset:
    """Add a reverse triple (t, r+N_r, h) for every (h, r, t); N_r doubles.

    Head prediction then reduces to tail prediction under the reverse
    relation.  Applying this twice is an error.
    """
    if dataset.reciprocals_added:
        raise ConfigError("dataset already augmented with reciprocal relations")
    nr = dataset.vocab.n_relations
    rel_map = dict(dataset.vocab.relation_to_id)
    for name, idx in dataset.vocab.relation_to_id.items():
        rel_map[name + RECIPROCAL_SUFFIX] = idx + nr
    vocab = Vocab(entity_to_id=dataset.vocab.entity_to_id, relation_to_id=rel_map)

    def augment(triples: tuple[Triple, ...]) -> tuple[Triple, ...]:
        out = list(triples)
        out.extend(Triple(t, r + nr, h) for h, r, t in triples)
        return tuple(out)

    return Dataset(
        train=augment(dataset.train),
        valid=augment(dataset.valid),
        test=augment(dataset.test),
        vocab=vocab,
        reciprocals_added=True,
    )


def build_filter(dataset: Dataset, scope: str) -> FilterIndex:
    """Build the filtered-evaluation index over the requested scope.

    ``train-only`` covers exactly the training triples (the protocol for
    pre-trained models); ``full`` covers train, valid and test.
    """
    if not dataset.reciprocals_added:
        raise ConfigError("build_filter requires a reciprocal-augmented dataset")
    if scope == "train-only":
        sources = (dataset.train,)
    elif scope == "full":
        sources = (dataset.train, dataset.valid, dataset.test)
    else:
        raise ConfigError(f"unknown filter scope {scope!r}")
    acc: dict[tuple[int, int], set[int]] = {}
    for triples in sources:
        for h, r, t in triples:
            acc.setdefault((h, r), set()).add(t)
    index = {key: np.array(sorted(vals), dtype=np.int64) for key, vals in acc.items()}
    return FilterIndex(index=index, scope=scope)


def write_triples(triples: Sequence[Triple], vocab: Vocab, path: str | Path) -> None:
    """Write indexed triples back to the tab-separated text format."""
    ent = vocab.entities
    rel = vocab.relations
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{ent[h]}\t{rel[r]}\t{ent[t]}\n")


def triples_to_array(triples: Sequence[Triple]) -> np.ndarray:
    """(Q, 3) int64 array of (head, rel, tail) rows."""
    if not triples:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(triples, dtype=np.int64)
