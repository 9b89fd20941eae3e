"""Triple storage, ingestion, filtered membership and relation statistics."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .rng import substream

SPLITS = ("train", "valid", "test")
# key spaces up to this size get a dense membership bitmap
_BITMAP_LIMIT = 1 << 24
ID_BINARY_MAGIC = "kge-ids v1"


class FormatError(ValueError):
    """Raised when an input file does not parse under its declared format."""


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


def _as_triples(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return arr.reshape(-1, 3)


class Vocabulary:
    """Dense id spaces for entities and relations.

    Labelled vocabularies keep a bijection between names and ids. Vocabularies
    read from ``id-binary`` files carry only counts; the name of an id is its
    decimal string.
    """

    def __init__(self, n_entities: int, n_relations: int,
                 entity_names: Sequence[str] | None = None,
                 relation_names: Sequence[str] | None = None):
        if entity_names is not None and len(entity_names) != n_entities:
            raise ValueError("entity_names length does not match n_entities")
        if relation_names is not None and len(relation_names) != n_relations:
            raise ValueError("relation_names length does not match n_relations")
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        self._entity_names = list(entity_names) if entity_names is not None else None
        self._relation_names = list(relation_names) if relation_names is not None else None
        self._entity_ids = None
        self._relation_ids = None
        if self._entity_names is not None and len(set(self._entity_names)) != n_entities:
            raise ValueError("duplicate entity names")
        if self._relation_names is not None and len(set(self._relation_names)) != n_relations:
            raise ValueError("duplicate relation names")

    @classmethod
    def from_names(cls, entity_names: Sequence[str], relation_names: Sequence[str]) -> "Vocabulary":
        return cls(len(entity_names), len(relation_names), entity_names, relation_names)

    @property
    def labelled(self) -> bool:
        return self._entity_names is not None

    def entity_name(self, i: int) -> str:
        if self._entity_names is None:
            return str(i)
        return self._entity_names[i]

    def relation_name(self, i: int) -> str:
        if self._relation_names is None:
            return str(i)
        return self._relation_names[i]

    def entity_id(self, name: str) -> int:
        if self._entity_ids is None:
            names = self._entity_names or [str(i) for i in range(self.n_entities)]
            self._entity_ids = {n: i for i, n in enumerate(names)}
        return self._entity_ids[name]

    def relation_id(self, name: str) -> int:
        if self._relation_ids is None:
            names = self._relation_names or [str(i) for i in range(self.n_relations)]
            self._relation_ids = {n: i for i, n in enumerate(names)}
        return self._relation_ids[name]

    @property
    def entity_names(self) -> list[str]:
        return list(self._entity_names) if self._entity_names is not None else [
            str(i) for i in range(self.n_entities)]

    @property
    def relation_names(self) -> list[str]:
        return list(self._relation_names) if self._relation_names is not None else [
            str(i) for i in range(self.n_relations)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (self.n_entities == other.n_entities and self.n_relations == other.n_relations
                and self.entity_names == other.entity_names
                and self.relation_names == other.relation_names)

    def __repr__(self) -> str:
        return f"Vocabulary(n_entities={self.n_entities}, n_relations={self.n_relations})"


@dataclass(frozen=True, eq=False)
class TripleStore:
    """Integer-coded triples split into train/valid/test.

    Each split is an ``(n, 3)`` int64 array of ``(head, relation, tail)`` rows.
    Duplicates are kept exactly as loaded.
    """

    vocab: Vocabulary
    train: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    test: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))

    def __post_init__(self):
        for name in SPLITS:
            arr = _as_triples(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            if len(arr):
                if arr.min() < 0:
                    raise ValueError(f"negative id in {name} split")
                ent = max(arr[:, 0].max(), arr[:, 2].max())
                if ent >= self.vocab.n_entities:
                    raise ValueError(f"entity id {ent} out of range in {name} split")
                if arr[:, 1].max() >= self.vocab.n_relations:
                    raise ValueError(f"relation id {arr[:, 1].max()} out of range in {name} split")

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    @property
    def n_triples(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    def same_ids(self, other: "TripleStore") -> bool:
        return (self.n_entities == other.n_entities and self.n_relations == other.n_relations
                and all(np.array_equal(self.split(s), other.split(s)) for s in SPLITS))

    def summary(self) -> dict:
        return {
            "entities": self.n_entities,
            "relations": self.n_relations,
            "edges": self.n_triples,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
        }


# ---------------------------------------------------------------------------
# ingestion / export

def _tsv_split_files(path: Path) -> list[tuple[str, Path]]:
    if path.is_dir():
        found = []
        for name in SPLITS:
            for suffix in (".tsv", ".txt"):
                p = path / f"{name}{suffix}"
                if p.exists():
                    found.append((name, p))
                    break
        if not found:
            raise FormatError(f"{path}: directory holds no train/valid/test .tsv files")
        return found
    return [("train", path)]


def _read_tsv_labels(path: Path) -> TripleStore:
    entity_ids: dict[str, int] = {}
    relation_ids: dict[str, int] = {}
    splits: dict[str, list] = {name: [] for name in SPLITS}
    for split, fpath in _tsv_split_files(path):
        rows = splits[split]
        with open(fpath, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for lineno, line in enumerate(lines, start=1):
            if line.endswith("\r"):
                line = line[:-1]
            parts = line.split("\t")
            if len(parts) != 3 or not all(parts):
                raise FormatError(f"{fpath}:{lineno}: expected 3 non-empty tab-separated fields")
            h, r, t = parts
            hid = entity_ids.setdefault(h, len(entity_ids))
            rid = relation_ids.setdefault(r, len(relation_ids))
            tid = entity_ids.setdefault(t, len(entity_ids))
            rows.append((hid, rid, tid))
    vocab = Vocabulary.from_names(list(entity_ids), list(relation_ids))
    return TripleStore(vocab, **{k: _as_triples(v) for k, v in splits.items()})


def _read_id_binary(path: Path) -> TripleStore:
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    try:
        header = data[:nl].decode("utf-8").split(" ")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not UTF-8") from exc
    if len(header) != 7 or " ".join(header[:2]) != ID_BINARY_MAGIC:
        raise FormatError(f"{path}: bad header, expected '{ID_BINARY_MAGIC} <entities> <relations> "
                          "<n_train> <n_valid> <n_test>'")
    try:
        n_ent, n_rel, *counts = (int(x) for x in header[2:])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer field in header") from exc
    if min(n_ent, n_rel, *counts) < 0:
        raise FormatError(f"{path}: negative count in header")
    body = data[nl + 1:]
    expected = 12 * sum(counts)
    if len(body) != expected:
        raise FormatError(f"{path}: body holds {len(body)} bytes, header declares {expected}")
    ids = np.frombuffer(body, dtype="<u4").astype(np.int64).reshape(-1, 3)
    limits = np.array([n_ent, n_rel, n_ent])
    bad = np.nonzero((ids >= limits).any(axis=1))[0]
    if len(bad):
        row = int(bad[0])
        col = int(np.nonzero(ids[row] >= limits)[0][0])
        offset = nl + 1 + 12 * row + 4 * col
        raise FormatError(f"{path}: id {ids[row, col]} out of range at byte offset {offset}")
    out = {}
    start = 0
    for name, n in zip(SPLITS, counts):
        out[name] = ids[start:start + n]
        start += n
    return TripleStore(Vocabulary(n_ent, n_rel), **out)


def sniff_format(path) -> str:
    path = Path(path)
    if path.is_dir():
        return "tsv-labels"
    with open(path, "rb") as fh:
        head = fh.read(len(ID_BINARY_MAGIC))
    return "id-binary" if head == ID_BINARY_MAGIC.encode() else "tsv-labels"


def load_triples(path, format: str = "auto") -> TripleStore:
    """Load a triple store.

    Parameters
    ----------
    path : path-like
        ``tsv-labels``: a single file (all rows go to ``train``) or a directory
        with ``train.tsv``, ``valid.tsv`` and ``test.tsv``. ``id-binary``: one file.
    format : {"auto", "tsv-labels", "id-binary"}
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format == "auto":
        format = sniff_format(path)
    if format == "tsv-labels":
        return _read_tsv_labels(path)
    if format == "id-binary":
        return _read_id_binary(path)
    raise ValueError(f"unknown format {format!r}")


def id_binary_bytes(store: TripleStore) -> bytes:
    counts = [len(store.split(s)) for s in SPLITS]
    header = f"{ID_BINARY_MAGIC} {store.n_entities} {store.n_relations} " + " ".join(map(str, counts))
    body = store.all_triples().astype("<u4").tobytes()
    return header.encode("utf-8") + b"\n" + body


def write_id_binary(store: TripleStore, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(id_binary_bytes(store))
    os.replace(tmp, path)


def write_tsv(store: TripleStore, path) -> None:
    """Write one ``<split>.tsv`` per split into directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ents = store.vocab.entity_names
    rels = store.vocab.relation_names
    for name in SPLITS:
        with open(path / f"{name}.tsv", "w", encoding="utf-8", newline="") as fh:
            for h, r, t in store.split(name):
                fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


# ---------------------------------------------------------------------------
# filtered membership

class FilterIndex:
    """Set of every triple appearing in any split.

    Triples are packed into int64 keys; two sorted key orders support both
    ``(h, r, ?)`` and ``(?, r, t)`` lookups.
    """

    def __init__(self, triples: np.ndarray, n_entities: int, n_relations: int):
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        if self.n_entities ** 2 * max(self.n_relations, 1) >= 2 ** 63:
            raise ValueError("id space too large for 64-bit triple keys")
        triples = _as_triples(triples)
        h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
        n = self.n_entities
        self._hrt = np.unique((h * self.n_relations + r) * n + t)
        self._rth = np.unique((r * n + t) * n + h)
        self._bitmap = None

    def __len__(self) -> int:
        return len(self._hrt)

    def sorted_keys(self) -> np.ndarray:
        """Sorted packed keys ``(h * n_relations + r) * n_entities + t``."""
        return self._hrt

    def contains_keys(self, keys) -> np.ndarray:
        """Membership of packed keys (see :meth:`sorted_keys`); keys must be in range."""
        keys = np.asarray(keys, dtype=np.int64)
        if len(self._hrt) == 0:
            return np.zeros(keys.shape, dtype=bool)
        space = self.n_entities * self.n_entities * self.n_relations
        if space <= _BITMAP_LIMIT:
            if self._bitmap is None:
                self._bitmap = np.zeros(space, dtype=bool)
                self._bitmap[self._hrt] = True
            return self._bitmap[keys]
        i = np.searchsorted(self._hrt, keys)
        np.minimum(i, len(self._hrt) - 1, out=i)
        return self._hrt[i] == keys

    def _key(self, h, r, t):
        return (np.asarray(h, np.int64) * self.n_relations + np.asarray(r, np.int64)) * self.n_entities \
            + np.asarray(t, np.int64)

    def contains(self, triple) -> bool:
        h, r, t = (int(x) for x in triple)
        if not (0 <= h < self.n_entities and 0 <= t < self.n_entities and 0 <= r < self.n_relations):
            return False
        key = self._key(h, r, t)
        i = np.searchsorted(self._hrt, key)
        return bool(i < len(self._hrt) and self._hrt[i] == key)

    __contains__ = contains

    def contains_many(self, heads, relations, tails) -> np.ndarray:
        keys = self._key(heads, relations, tails)
        idx = np.searchsorted(self._hrt, keys)
        idx = np.minimum(idx, max(len(self._hrt) - 1, 0))
        if len(self._hrt) == 0:
            return np.zeros(np.shape(keys), dtype=bool)
        return self._hrt[idx] == keys

    def tails_of(self, head: int, relation: int) -> np.ndarray:
        lo = (head * self.n_relations + relation) * self.n_entities
        a, b = np.searchsorted(self._hrt, [lo, lo + self.n_entities])
        return self._hrt[a:b] - lo

    def heads_of(self, relation: int, tail: int) -> np.ndarray:
        lo = (relation * self.n_entities + tail) * self.n_entities
        a, b = np.searchsorted(self._rth, [lo, lo + self.n_entities])
        return self._rth[a:b] - lo

    def true_entities(self, triple, side: str) -> np.ndarray:
        """Entities ``e`` such that substituting ``e`` on ``side`` yields a known triple."""
        h, r, t = (int(x) for x in triple)
        if side == "head":
            return self.heads_of(r, t)
        if side == "tail":
            return self.tails_of(h, r)
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}")


def build_filter_index(store: TripleStore) -> FilterIndex:
    return FilterIndex(store.all_triples(), store.n_entities, store.n_relations)


# ---------------------------------------------------------------------------
# relation statistics

@dataclass(frozen=True)
class RelationCardinality:
    relation: int
    n_triples: int
    tails_per_head: float
    heads_per_tail: float
    category: str


@dataclass(frozen=True)
class RelationStats:
    threshold: float
    relations: tuple[RelationCardinality, ...]

    def category(self, relation: int) -> str:
        return self.relations[relation].category

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rc in self.relations:
            out[rc.category] = out.get(rc.category, 0) + 1
        return out


def _category(tails_per_head: float, heads_per_tail: float, threshold: float) -> str:
    left = "N" if heads_per_tail >= threshold else "1"
    right = "N" if tails_per_head >= threshold else "1"
    return f"{left}-to-{right}"


def relation_stats(store: TripleStore, threshold: float = 1.5) -> RelationStats:
    """Per-relation cardinality over the training split.

    ``tails_per_head`` is the number of train triples of the relation divided
    by its distinct heads; ``heads_per_tail`` likewise. A ratio at or above
    ``threshold`` puts that side in the "N" class. Relations without training
    triples are reported as ``"undefined"``.
    """
    train = store.train
    out = []
    for rel in range(store.n_relations):
        rows = train[train[:, 1] == rel]
        if len(rows) == 0:
            out.append(RelationCardinality(rel, 0, math.nan, math.nan, "undefined"))
            continue
        tph = len(rows) / len(np.unique(rows[:, 0]))
        hpt = len(rows) / len(np.unique(rows[:, 2]))
        out.append(RelationCardinality(rel, len(rows), tph, hpt, _category(tph, hpt, threshold)))
    return RelationStats(threshold, tuple(out))


def relations_per_pair(triples: np.ndarray) -> dict[tuple[int, int], int]:
    """Number of distinct relations on each ordered ``(head, tail)`` pair."""
    triples = _as_triples(triples)
    if len(triples) == 0:
        return {}
    uniq = np.unique(triples, axis=0)
    pairs, counts = np.unique(uniq[:, [0, 2]], axis=0, return_counts=True)
    return {(int(h), int(t)): int(c) for (h, t), c in zip(pairs, counts)}


def multi_relation_pairs(triples: np.ndarray) -> tuple[int, int]:
    """Return ``(pairs with >= 2 distinct relations, total distinct pairs)``."""
    per_pair = relations_per_pair(triples)
    return sum(1 for c in per_pair.values() if c >= 2), len(per_pair)


# ---------------------------------------------------------------------------
# synthetic graphs

CATEGORIES = ("1-to-1", "1-to-N", "N-to-1", "N-to-N")


@dataclass(frozen=True)
class GeneratorSpec:
    """Recipe for a synthetic knowledge graph.

    Pairs are generated in blocks shaped by a cardinality category: a single
    pair (1-to-1), one head with ``fanout`` tails (1-to-N), the mirror
    (N-to-1), or a complete ``fanout x fanout`` bipartite block (N-to-N). A
    block is either single-relation or carries ``relations_per_pair``
    distinct relations, so every pair in it has several relations at once.

    With ``categories=None`` relations are free: each block draws a shape
    uniformly (among shapes that fit the remaining pair budget) and its
    relations from the whole relation set. With explicit ``categories`` each
    relation only ever appears on blocks of its own shape, so the measured
    cardinality matches the declaration.
    """

    n_entities: int
    n_relations: int
    n_pairs: int | None = None
    multi_relation_fraction: float = 1.0
    relations_per_pair: int = 2
    categories: tuple[str, ...] | None = None
    fanout: int = 3
    holdout_fraction: float = 0.1

    def resolved_pairs(self) -> int:
        return self.n_pairs if self.n_pairs is not None else 3 * self.n_entities

    def validate(self) -> None:
        if self.n_entities < 2:
            raise ValueError("n_entities must be at least 2")
        if self.n_relations < 1:
            raise ValueError("n_relations must be at least 1")
        if not 0.0 <= self.multi_relation_fraction <= 1.0:
            raise ValueError("multi_relation_fraction must lie in [0, 1]")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if self.relations_per_pair < 1:
            raise ValueError("relations_per_pair must be positive")
        if self.fanout < 2:
            raise ValueError("fanout must be at least 2")
        if self.resolved_pairs() < 1:
            raise ValueError("n_pairs must be positive")
        bundling = self.multi_relation_fraction > 0 and self.relations_per_pair > 1
        if bundling and self.relations_per_pair > self.n_relations:
            raise ValueError(f"relations_per_pair={self.relations_per_pair} exceeds "
                             f"n_relations={self.n_relations}")
        shapes = CATEGORIES
        if self.categories is not None:
            cats = tuple(self.categories)
            if len(cats) != self.n_relations:
                raise ValueError("categories must list one entry per relation")
            unknown = set(cats) - set(CATEGORIES)
            if unknown:
                raise ValueError(f"unknown categories {sorted(unknown)}")
            if bundling and max(cats.count(c) for c in set(cats)) < self.relations_per_pair:
                raise ValueError("no category has relations_per_pair relations to bundle")
            shapes = tuple(set(cats))
        fits = [sum(_block_shape(c, self.fanout)) <= self.n_entities for c in shapes]
        if not all(fits) if self.categories is not None else not any(fits):
            raise ValueError("fanout too large for the entity count")


def _block_shape(category: str, fanout: int) -> tuple[int, int]:
    return {
        "1-to-1": (1, 1),
        "1-to-N": (1, fanout),
        "N-to-1": (fanout, 1),
        "N-to-N": (fanout, fanout),
    }[category]


def _withhold(rng, triples: list[tuple[int, int, int]], pattern: str, fraction: float) -> set[int]:
    """Choose held-out rows that remain inferable from the rows left in train.

    A multi-relation row needs another relation on its pair to stay; a row of
    a complete N-to-N block needs its head and its tail to keep other partners
    under the same relation. Other rows have no such evidence and are never
    held out.
    """
    target = int(round(fraction * len(triples)))
    if target == 0:
        return set()
    multi = pattern.startswith("multi")
    nn = pattern.endswith("N-to-N")
    if not (multi or nn):
        return set()
    held: set[int] = set()
    pair_rels: dict[tuple[int, int], int] = {}
    head_deg: dict[tuple[int, int], int] = {}
    tail_deg: dict[tuple[int, int], int] = {}
    for h, r, t in triples:
        pair_rels[(h, t)] = pair_rels.get((h, t), 0) + 1
        head_deg[(h, r)] = head_deg.get((h, r), 0) + 1
        tail_deg[(r, t)] = tail_deg.get((r, t), 0) + 1
    for i in rng.permutation(len(triples)):
        h, r, t = triples[i]
        ok = False
        if multi and pair_rels[(h, t)] >= 2:
            ok = True
        if nn and head_deg[(h, r)] >= 2 and tail_deg[(r, t)] >= 2:
            ok = True
        if not ok:
            continue
        held.add(int(i))
        pair_rels[(h, t)] -= 1
        head_deg[(h, r)] -= 1
        tail_deg[(r, t)] -= 1
        if len(held) >= target:
            break
    return held


def generate_synthetic_kg(spec: GeneratorSpec, seed: int = 0) -> TripleStore:
    """Generate a deterministic synthetic knowledge graph.

    The held-out rows (split evenly between ``valid`` and ``test``) are a
    uniform random ``holdout_fraction`` of each pattern's rows, restricted to
    rows whose evidence stays in ``train``.
    """
    spec.validate()
    rng = substream(seed, "synthetic-kg")
    all_rels = list(range(spec.n_relations))
    if spec.categories is None:
        pools = {c: all_rels for c in CATEGORIES}
    else:
        pools = {}
        for rel, c in enumerate(spec.categories):
            pools.setdefault(c, []).append(rel)
    shapes = sorted(pools)
    bundle_ok = {c: len(pools[c]) >= spec.relations_per_pair for c in shapes}
    free = spec.categories is None

    target_pairs = spec.resolved_pairs()
    if target_pairs > spec.n_entities * (spec.n_entities - 1) // 2:
        raise ValueError(f"n_pairs={target_pairs} too dense for {spec.n_entities} entities")
    used: set[tuple[int, int]] = set()
    patterns: dict[str, list[tuple[int, int, int]]] = {}
    n_pairs = n_multi = 0
    attempts = 0
    while n_pairs < target_pairs:
        attempts += 1
        if attempts > 100 * target_pairs + 1000:
            raise ValueError("could not place enough disjoint pairs; lower n_pairs or fanout")
        remaining = target_pairs - n_pairs
        options = shapes
        if free:
            options = [c for c in shapes
                       if np.prod(_block_shape(c, spec.fanout)) <= remaining
                       and sum(_block_shape(c, spec.fanout)) <= spec.n_entities]
        if spec.categories is None:
            cat = options[rng.integers(len(options))]
        else:
            # weight declared categories by how many relations they hold
            w = np.array([len(pools[c]) for c in options], dtype=float)
            cat = options[rng.choice(len(options), p=w / w.sum())]
        nh, nt = _block_shape(cat, spec.fanout)
        ents = rng.choice(spec.n_entities, size=nh + nt, replace=False)
        block = [(int(h), int(t)) for h in ents[:nh] for t in ents[nh:]]
        if any(p in used for p in block):
            continue
        size = len(block)
        want_multi = (spec.relations_per_pair > 1 and spec.multi_relation_fraction > 0
                      and n_multi < spec.multi_relation_fraction * (n_pairs + size))
        if want_multi and not bundle_ok[cat]:
            continue
        if want_multi:
            rels = sorted(rng.choice(pools[cat], size=spec.relations_per_pair, replace=False).tolist())
            n_multi += size
            key = f"multi {cat}"
        else:
            rels = [int(rng.choice(pools[cat]))]
            key = f"single {cat}"
        used.update(block)
        n_pairs += size
        patterns.setdefault(key, []).extend((h, r, t) for h, t in block for r in rels)

    train, held = [], []
    for key in sorted(patterns):
        rows = patterns[key]
        out = _withhold(rng, rows, key, spec.holdout_fraction)
        for i, row in enumerate(rows):
            (held if i in out else train).append(row)
    held = [held[i] for i in rng.permutation(len(held))]
    half = (len(held) + 1) // 2
    vocab = Vocabulary(spec.n_entities, spec.n_relations,
                       [f"e{i}" for i in range(spec.n_entities)],
                       [f"r{i}" for i in range(spec.n_relations)])
    return TripleStore(vocab, train=_as_triples(train), valid=_as_triples(held[:half]),
                       test=_as_triples(held[half:]))


def permute_entities(store: TripleStore, perm: np.ndarray) -> TripleStore:
    """Relabel entity ``i`` as ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    names = store.vocab.entity_names
    new_names = [""] * store.n_entities
    for old, new in enumerate(perm):
        new_names[new] = names[old]

    def relabel(a):
        a = a.copy()
        a[:, 0] = perm[a[:, 0]]
        a[:, 2] = perm[a[:, 2]]
        return a

    vocab = Vocabulary(store.n_entities, store.n_relations, new_names, store.vocab.relation_names)
    return TripleStore(vocab, **{s: relabel(store.split(s)) for s in SPLITS})


def iter_triples(arr: np.ndarray) -> Iterable[Triple]:
    for h, r, t in arr:
        yield Triple(int(h), int(r), int(t))
