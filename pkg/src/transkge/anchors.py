"""Fixed-size entity vocabulary built from anchors.

A small set of anchor entities is chosen once; every entity is then described
by its ``m`` nearest anchors in the undirected training graph together with
the hop distance to each. Entity vectors are the mean of
``anchor_embedding + distance_embedding`` over those tokens, so the number of
trainable entity parameters depends on the anchor count only.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .kg import TripleStore
from .rng import substream

PAD = -1
_PAD_U32 = 0xFFFFFFFF
ANCHOR_MAGIC = "kge-anchors v1"


@dataclass(frozen=True, eq=False)
class AnchorVocab:
    """Anchors and per-entity ``(anchor index, distance)`` tokens.

    ``token_anchor[e, j]`` indexes into ``anchors`` (``-1`` for padding) and
    ``token_dist[e, j]`` is the hop distance, ``max_distance`` for padding.
    Tokens of an entity are ordered by ``(distance, anchor index)``.
    """

    anchors: np.ndarray
    token_anchor: np.ndarray
    token_dist: np.ndarray
    max_distance: int
    strategy: str = "top-degree"
    seed: int = 0

    @property
    def k(self) -> int:
        return len(self.anchors)

    @property
    def m(self) -> int:
        return self.token_anchor.shape[1]

    @property
    def n_entities(self) -> int:
        return self.token_anchor.shape[0]

    def tokens(self, entity: int) -> list[tuple[int, int]]:
        """Tokens of ``entity`` as ``(anchor entity id or -1, distance)``."""
        out = []
        for a, dist in zip(self.token_anchor[entity], self.token_dist[entity]):
            out.append((int(self.anchors[a]) if a >= 0 else PAD, int(dist)))
        return out

    def parameter_count(self, dim: int, n_relations: int, relation_tables: int = 3,
                        entity_tables: int = 2) -> int:
        return entity_tables * self.k * dim + relation_tables * n_relations * dim \
            + (self.max_distance + 1) * dim

    def __eq__(self, other):
        if not isinstance(other, AnchorVocab):
            return NotImplemented
        return (np.array_equal(self.anchors, other.anchors)
                and np.array_equal(self.token_anchor, other.token_anchor)
                and np.array_equal(self.token_dist, other.token_dist)
                and self.max_distance == other.max_distance
                and self.strategy == other.strategy and self.seed == other.seed)


def degrees(store: TripleStore) -> np.ndarray:
    """Undirected multigraph degree over the training split."""
    tr = store.train
    return np.bincount(np.concatenate([tr[:, 0], tr[:, 2]]), minlength=store.n_entities)


def select_anchors(store: TripleStore, k: int, strategy: str = "top-degree", seed: int = 0) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be positive")
    if k > store.n_entities:
        raise ValueError(f"k={k} exceeds entity count {store.n_entities}")
    if strategy == "top-degree":
        deg = degrees(store)
        order = np.lexsort((np.arange(store.n_entities), -deg))
        return order[:k].astype(np.int64)
    if strategy == "uniform-random":
        rng = substream(seed, "anchors")
        return rng.choice(store.n_entities, size=k, replace=False).astype(np.int64)
    raise ValueError(f"unknown anchor strategy {strategy!r}")


def _undirected_csr(store: TripleStore) -> tuple[np.ndarray, np.ndarray]:
    tr = store.train
    n = store.n_entities
    src = np.concatenate([tr[:, 0], tr[:, 2]])
    dst = np.concatenate([tr[:, 2], tr[:, 0]])
    pairs = np.unique(src * n + dst)
    src, dst = pairs // n, pairs % n
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst


def tokenize_entities(store: TripleStore, anchors, m: int = 20, max_distance: int = 10):
    """Nearest-anchor tokens per entity via multi-source BFS.

    Only anchors closer than ``max_distance`` hops are kept; remaining slots
    hold the padding token. Returns ``(token_anchor, token_dist)``, each of
    shape ``(n_entities, m)``.
    """
    anchors = np.asarray(anchors, dtype=np.int64)
    if len(anchors) == 0:
        raise ValueError("anchors must be non-empty")
    if m < 1 or not 1 <= max_distance <= 255:
        raise ValueError("m must be positive and max_distance in [1, 255]")
    n, k = store.n_entities, len(anchors)
    indptr, nbr = _undirected_csr(store)

    counts = np.zeros(n, dtype=np.int64)
    lab_node = [anchors]
    lab_anchor = [np.arange(k, dtype=np.int64)]
    lab_dist = [np.zeros(k, dtype=np.int64)]
    np.add.at(counts, anchors, 1)
    known = np.sort(anchors * k + np.arange(k))
    front_node, front_anchor = anchors, np.arange(k, dtype=np.int64)

    for level in range(1, max_distance):
        if len(front_node) == 0:
            break
        deg = indptr[front_node + 1] - indptr[front_node]
        total = int(deg.sum())
        if total == 0:
            break
        starts = np.repeat(indptr[front_node], deg)
        offs = np.arange(total) - np.repeat(np.cumsum(deg) - deg, deg)
        v = nbr[starts + offs]
        a = np.repeat(front_anchor, deg)
        keys = np.unique(v * k + a)
        pos = np.searchsorted(known, keys)
        pos = np.minimum(pos, len(known) - 1)
        keys = keys[known[pos] != keys]
        v, a = keys // k, keys % k
        room = counts[v] < m
        keys, v, a = keys[room], v[room], a[room]
        if len(keys) == 0:
            break
        # keys are sorted by (node, anchor): rank inside each node's group
        uniq, first = np.unique(v, return_index=True)
        group = np.searchsorted(uniq, v)
        rank = np.arange(len(v)) - first[group]
        keep = rank < (m - counts[v])
        v, a, keys = v[keep], a[keep], keys[keep]
        np.add.at(counts, v, 1)
        lab_node.append(v)
        lab_anchor.append(a)
        lab_dist.append(np.full(len(v), level, dtype=np.int64))
        known = np.union1d(known, keys)
        front_node, front_anchor = v, a

    node = np.concatenate(lab_node)
    anc = np.concatenate(lab_anchor)
    dist = np.concatenate(lab_dist)
    order = np.lexsort((anc, dist, node))
    node, anc, dist = node[order], anc[order], dist[order]
    token_anchor = np.full((n, m), PAD, dtype=np.int64)
    token_dist = np.full((n, m), max_distance, dtype=np.int64)
    uniq, first = np.unique(node, return_index=True)
    slot = np.arange(len(node)) - first[np.searchsorted(uniq, node)]
    token_anchor[node, slot] = anc
    token_dist[node, slot] = dist
    return token_anchor, token_dist


def build_anchor_vocab(store: TripleStore, k: int = 20000, m: int = 20, max_distance: int = 10,
                       strategy: str = "top-degree", seed: int = 0) -> AnchorVocab:
    anchors = select_anchors(store, k, strategy, seed)
    ta, td = tokenize_entities(store, anchors, m, max_distance)
    return AnchorVocab(anchors, ta, td, max_distance, strategy, seed)


# ---------------------------------------------------------------------------
# composition and its gradient

def compose_entity_vector(tokens, anchor_table: np.ndarray, dist_table: np.ndarray) -> np.ndarray:
    """Mean of ``anchor_table[a] + dist_table[min(d, d_max)]`` over ``(a, d)`` tokens.

    ``a`` indexes rows of ``anchor_table``; ``a = -1`` is padding and
    contributes the distance row only.
    """
    anchor_table = np.asarray(anchor_table, dtype=np.float64)
    dist_table = np.asarray(dist_table, dtype=np.float64)
    if anchor_table.shape[1] != dist_table.shape[1]:
        raise ValueError("anchor and distance tables disagree on dimension")
    dmax = dist_table.shape[0] - 1
    acc = np.zeros(anchor_table.shape[1])
    for a, dist in tokens:
        row = dist_table[min(int(dist), dmax)]
        acc = acc + (row if a == PAD else anchor_table[int(a)] + row)
    return acc / len(tokens)


def compose_entities(vocab: AnchorVocab, anchor_table: np.ndarray, dist_table: np.ndarray,
                     ids=None) -> np.ndarray:
    """Vectorised :func:`compose_entity_vector` over many entities."""
    ta, td = vocab.token_anchor, vocab.token_dist
    if ids is not None:
        ta, td = ta[ids], td[ids]
    padded = np.vstack([anchor_table, np.zeros((1, anchor_table.shape[1]))])
    dmax = dist_table.shape[0] - 1
    vecs = padded[np.where(ta < 0, len(anchor_table), ta)] + dist_table[np.minimum(td, dmax)]
    return vecs.sum(axis=-2) / vocab.m


def scatter_entity_grad(vocab: AnchorVocab, entity: int, grad: np.ndarray,
                        anchor_grad: np.ndarray, dist_grad: np.ndarray) -> None:
    scatter_entity_grads(vocab, np.array([entity]), grad[None, :], anchor_grad, dist_grad)


def scatter_entity_grads(vocab: AnchorVocab, entities: np.ndarray, grads: np.ndarray,
                         anchor_grad: np.ndarray, dist_grad: np.ndarray) -> None:
    """Back-propagate entity-vector gradients to anchor and distance rows."""
    g = grads / vocab.m
    ta = vocab.token_anchor[entities]
    td = np.minimum(vocab.token_dist[entities], dist_grad.shape[0] - 1)
    gg = np.broadcast_to(g[:, None, :], ta.shape + (g.shape[1],))
    real = ta >= 0
    np.add.at(anchor_grad, ta[real], gg[real])
    np.add.at(dist_grad, td.ravel(), gg.reshape(-1, g.shape[1]))


# ---------------------------------------------------------------------------
# persistence

def save_anchor_vocab(vocab: AnchorVocab, path) -> None:
    header = {"format": ANCHOR_MAGIC, "k": vocab.k, "m": vocab.m, "max_distance": vocab.max_distance,
              "strategy": vocab.strategy, "seed": vocab.seed, "n_entities": vocab.n_entities}
    rec = np.zeros((vocab.n_entities, vocab.m), dtype=[("a", "<u4"), ("d", "u1")])
    rec["a"] = np.where(vocab.token_anchor < 0, _PAD_U32, vocab.token_anchor)
    rec["d"] = vocab.token_dist
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(vocab.anchors.astype("<u4").tobytes())
        fh.write(rec.tobytes())
    os.replace(tmp, path)


def load_anchor_vocab(path) -> AnchorVocab:
    with open(path, "rb") as fh:
        data = fh.read()
    nl = data.index(b"\n")
    header = json.loads(data[:nl])
    if header.get("format") != ANCHOR_MAGIC:
        raise ValueError(f"{path}: not an anchor vocabulary file")
    k, m, n = header["k"], header["m"], header["n_entities"]
    off = nl + 1
    anchors = np.frombuffer(data, dtype="<u4", count=k, offset=off).astype(np.int64)
    off += 4 * k
    rec = np.frombuffer(data, dtype=[("a", "<u4"), ("d", "u1")], count=n * m, offset=off).reshape(n, m)
    ta = rec["a"].astype(np.int64)
    ta[rec["a"] == _PAD_U32] = PAD
    return AnchorVocab(anchors, ta, rec["d"].astype(np.int64), header["max_distance"],
                       header["strategy"], header["seed"])
