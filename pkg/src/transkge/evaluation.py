"""Filtered link-prediction ranking: MRR and Hits@K.

Each evaluated triple is ranked twice, once replacing its head and once its
tail. Candidates whose substitution is a known triple are filtered out. Ties
are resolved by expected rank, ``1 + #greater + #equal / 2``.

Two protocols are supported: ``exhaustive`` ranks against every entity, and
``sampled`` ranks against ``n_eval_negatives`` distinct filtered entities per
query (or a caller-supplied candidate list).
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .kg import FilterIndex, TripleStore, build_filter_index
from .rng import substream
from .scoring import SCORER_CODES, ModelParams, check_norm, check_scorer, check_tables

MODES = ("sampled", "exhaustive")
SIDE_CHOICES = ("head", "tail", "both")
HITS_AT = (1, 3, 10)
_SIDE_CODE = {"head": 0, "tail": 1}

# upper bound on candidate scores materialised per kernel call
_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class EvalConfig:
    n_eval_negatives: int = 1000
    mode: str = "sampled"
    sides: str = "both"
    seed: int = 0
    tie_rule: str = "expected-rank"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sides not in SIDE_CHOICES:
            raise ValueError(f"sides must be one of {SIDE_CHOICES}, got {self.sides!r}")
        if self.n_eval_negatives < 1:
            raise ValueError("n_eval_negatives must be positive")
        if self.tie_rule != "expected-rank":
            raise ValueError("only the expected-rank tie rule is supported")

    def side_list(self) -> tuple[str, ...]:
        return ("head", "tail") if self.sides == "both" else (self.sides,)


def _metrics(ranks: np.ndarray) -> dict:
    if len(ranks) == 0:
        return {"mrr": float("nan"), **{f"hits@{k}": float("nan") for k in HITS_AT}, "n": 0}
    out = {"mrr": float(np.mean(1.0 / ranks))}
    for k in HITS_AT:
        out[f"hits@{k}"] = float(np.mean(ranks <= k))
    out["n"] = int(len(ranks))
    return out


@dataclass
class EvalReport:
    """Aggregate ranking metrics over all evaluated ``(triple, side)`` queries."""

    mrr: float
    hits: dict[int, float]
    per_side: dict[str, dict]
    n_evaluated: int
    mode: str
    split: str = "valid"
    shortfall: int = 0
    short_queries: int = 0
    ranks: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_ranks(cls, ranks_by_side: dict[str, np.ndarray], mode: str, split: str,
                   shortfall: int = 0, short_queries: int = 0) -> "EvalReport":
        allr = np.concatenate([np.asarray(r, dtype=np.float64) for r in ranks_by_side.values()])
        m = _metrics(allr)
        return cls(m["mrr"], {k: m[f"hits@{k}"] for k in HITS_AT},
                   {s: _metrics(np.asarray(r, dtype=np.float64)) for s, r in ranks_by_side.items()},
                   m["n"], mode, split, shortfall, short_queries, allr)

    def to_dict(self) -> dict:
        d = {"mrr": self.mrr, **{f"hits@{k}": v for k, v in self.hits.items()},
             "n_evaluated": self.n_evaluated, "mode": self.mode, "split": self.split,
             "shortfall": self.shortfall, "short_queries": self.short_queries,
             "per_side": self.per_side}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(d["mrr"], {k: d[f"hits@{k}"] for k in HITS_AT}, d["per_side"], d["n_evaluated"],
                   d["mode"], d.get("split", "valid"), d.get("shortfall", 0), d.get("short_queries", 0))


class EvalNegatives(NamedTuple):
    entities: np.ndarray
    shortfall: int


def sample_eval_negatives(triple, side: str, n: int, filter: FilterIndex, seed: int = 0) -> EvalNegatives:
    """Draw ``n`` distinct entities whose substitution on ``side`` is not a known triple.

    If fewer than ``n`` such entities exist, all of them are returned and the
    difference is reported as ``shortfall``. Deterministic per
    ``(seed, triple, side)``.
    """
    if side not in _SIDE_CODE:
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}")
    h, r, t = (int(x) for x in triple)
    N = filter.n_entities
    banned = np.unique(filter.true_entities((h, r, t), side))
    # the evaluated entity is never its own negative, even if unseen in the index
    banned = np.union1d(banned, [h if side == "head" else t])
    n_valid = N - len(banned)
    rng = substream(seed, "eval", h, r, t, _SIDE_CODE[side])
    if n >= n_valid:
        valid = np.setdiff1d(np.arange(N), banned, assume_unique=True)
        return EvalNegatives(valid.astype(np.int64), n - n_valid)
    if 4 * n > n_valid:
        valid = np.setdiff1d(np.arange(N), banned, assume_unique=True)
        return EvalNegatives(np.sort(rng.choice(valid, size=n, replace=False)).astype(np.int64), 0)
    # rejection sampling keeps the cost independent of N
    got = np.zeros(0, dtype=np.int64)
    while len(got) < n:
        draw = rng.integers(0, N, size=2 * (n - len(got)) + 16)
        draw = draw[~np.isin(draw, banned)]
        got = np.concatenate([got, draw])
        _, first = np.unique(got, return_index=True)
        got = got[np.sort(first)]
    return EvalNegatives(np.sort(got[:n]), 0)


def rank(positive_score: float, candidate_scores) -> float:
    """Expected rank of ``positive_score`` among ``candidate_scores``."""
    c = np.asarray(candidate_scores, dtype=np.float64)
    return 1.0 + float(np.count_nonzero(c > positive_score)) + 0.5 * float(np.count_nonzero(c == positive_score))


class _View:
    """Kernel-ready tables for a scorer, composing anchor-mode entities on demand."""

    def __init__(self, params: ModelParams, scorer: str, backend):
        self.params = params
        self.scorer = scorer
        self.code = SCORER_CODES[scorer]
        self.kern = kernels.get(backend)
        self._full = None if params.anchor_mode else params.kernel_tables(scorer)

    def score(self, p, heads, rels, tails, cands, corrupt_head) -> np.ndarray:
        if self._full is not None:
            tabs, heads_, tails_, cands_ = self._full, heads, tails, cands
        else:
            ids, inv = np.unique(np.concatenate([heads, tails, cands.ravel()]), return_inverse=True)
            tabs = self.params.kernel_tables(self.scorer, ids)
            Q = len(heads)
            heads_, tails_ = inv[:Q], inv[Q:2 * Q]
            cands_ = inv[2 * Q:].reshape(cands.shape)
        return self.kern.score_candidates(self.code, p, *tabs, kernels.as_index(heads_), kernels.as_index(rels),
                                          kernels.as_index(tails_), kernels.as_index(cands_),
                                          kernels.as_flags(corrupt_head))


def _load_candidates(path) -> dict[str, np.ndarray]:
    data = np.load(path)
    out = {}
    for side in ("head", "tail"):
        for key in (side, f"{side}_neg"):
            if key in data:
                out[side] = np.asarray(data[key], dtype=np.int64)
                break
    if not out:
        raise ValueError(f"{path}: expected arrays named 'head'/'tail' (or 'head_neg'/'tail_neg')")
    return out


def evaluate(params: ModelParams, store: TripleStore, split: str = "valid", cfg: EvalConfig | None = None,
             scorer: str | None = None, p: int = 1, filter: FilterIndex | None = None,
             candidates=None, rank_dump=None, backend: str | None = None) -> EvalReport:
    """Filtered ranking metrics of ``params`` on one split.

    Parameters
    ----------
    candidates : str or dict, optional
        Fixed negative candidates per query, as a ``.npz`` path or a mapping
        ``{"head": (Q, C), "tail": (Q, C)}`` aligned with the split rows. Only
        used in sampled mode; candidates that form known triples are skipped.
    rank_dump : str, optional
        Write one CSV row per query: ``head,relation,tail,side,rank``.
    """
    cfg = cfg or EvalConfig()
    scorer = check_scorer(scorer or params.scorer)
    check_norm(p)
    check_tables(params, scorer)
    triples = store.split(split)
    if len(triples) == 0:
        raise ValueError(f"split {split!r} is empty")
    if filter is None:
        filter = build_filter_index(store)
    if isinstance(candidates, (str, bytes)) or hasattr(candidates, "__fspath__"):
        candidates = _load_candidates(candidates)
    view = _View(params, scorer, backend)
    N = store.n_entities
    ranks_by_side, shortfall, short_q = {}, 0, 0
    for side in cfg.side_list():
        if cfg.mode == "exhaustive":
            ranks = _rank_exhaustive(view, p, triples, side, filter, N)
        else:
            fixed = None if candidates is None else candidates.get(side)
            ranks, sf, sq = _rank_sampled(view, p, triples, side, filter, cfg, fixed)
            shortfall += sf
            short_q += sq
        ranks_by_side[side] = ranks
    if rank_dump is not None:
        with open(rank_dump, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["head", "relation", "tail", "side", "rank"])
            for side, ranks in ranks_by_side.items():
                for (h, r, t), rk in zip(triples.tolist(), ranks.tolist()):
                    w.writerow([h, r, t, side, repr(rk)])
    return EvalReport.from_ranks(ranks_by_side, cfg.mode, split, shortfall, short_q)


def _rank_exhaustive(view: _View, p, triples, side, filter: FilterIndex, N) -> np.ndarray:
    Q = len(triples)
    out = np.empty(Q)
    step = max(1, _CHUNK_ELEMS // max(N, 1))
    ch = side == "head"
    slot = 0 if ch else 2
    everyone = np.arange(N, dtype=np.int64)
    for a in range(0, Q, step):
        tri = triples[a:a + step]
        q = len(tri)
        cands = np.broadcast_to(everyone, (q, N))
        scores = view.score(p, tri[:, 0], tri[:, 1], tri[:, 2], np.ascontiguousarray(cands),
                            np.full(q, ch, dtype=np.uint8))
        for i in range(q):
            row = scores[i]
            target = tri[i, slot]
            pos = row[target]
            keep = np.ones(N, dtype=bool)
            keep[filter.true_entities(tri[i], side)] = False
            keep[target] = False
            out[a + i] = rank(pos, row[keep])
    return out


def _rank_sampled(view: _View, p, triples, side, filter: FilterIndex, cfg: EvalConfig, fixed):
    Q = len(triples)
    ch = side == "head"
    slot = 0 if ch else 2
    lists, shortfall, short_q = [], 0, 0
    for i, tri in enumerate(triples):
        if fixed is not None:
            c = np.asarray(fixed[i], dtype=np.int64)
            hs = c if ch else np.full(len(c), tri[0])
            ts = np.full(len(c), tri[2]) if ch else c
            bad = filter.contains_many(hs, np.full(len(c), tri[1]), ts) | (c == tri[slot])
            c = c[~bad]
        else:
            c, sf = sample_eval_negatives(tri, side, cfg.n_eval_negatives, filter, cfg.seed)
            if sf:
                shortfall += sf
                short_q += 1
        # the true entity goes first so the positive is scored by the same kernel call
        lists.append(np.concatenate([[tri[slot]], c]))
    out = np.empty(Q)
    width = max(len(x) for x in lists)
    step = max(1, _CHUNK_ELEMS // width)
    for a in range(0, Q, step):
        block = lists[a:a + step]
        q = len(block)
        cands = np.empty((q, width), dtype=np.int64)
        for i, x in enumerate(block):
            cands[i, :len(x)] = x
            cands[i, len(x):] = x[0]
        tri = triples[a:a + q]
        scores = view.score(p, tri[:, 0], tri[:, 1], tri[:, 2], cands, np.full(q, ch, dtype=np.uint8))
        for i, x in enumerate(block):
            out[a + i] = rank(scores[i, 0], scores[i, 1:len(x)])
    return out, shortfall, short_q
