"""Negative sampling and the margin-based logistic loss.

For a positive triple with distance ``d_pos`` and ``n`` corrupted triples with
distances ``d_i`` the loss is::

    L = -log sigmoid(gamma - d_pos) - sum_i w_i log sigmoid(d_i - gamma)

with ``w_i = 1/n`` (uniform) or ``w = softmax(T * score_i)`` where
``score_i = -d_i`` (self-adversarial). Self-adversarial weights are treated
as constants when differentiating.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import FilterIndex, Triple
from .rng import substream
from .scoring import ModelParams, check_norm, check_scorer, grad_score, resolve_and_score, scatter_role_grads

WEIGHTINGS = ("uniform", "self-adversarial")
SLOTS = ("head", "tail")


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 6.0
    n_negatives: int = 128
    weighting: str = "self-adversarial"
    adversarial_temperature: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if int(self.n_negatives) != self.n_negatives or self.n_negatives < 1:
            raise ValueError(f"n_negatives must be a positive integer, got {self.n_negatives}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")
        if not self.adversarial_temperature > 0:
            raise ValueError(f"adversarial_temperature must be positive, got {self.adversarial_temperature}")

    @property
    def self_adversarial(self) -> bool:
        return self.weighting == "self-adversarial"


@dataclass(frozen=True)
class NegativeBatch:
    """Corruptions of one positive triple in a single slot."""

    positive: Triple
    entities: np.ndarray
    slot: str

    def __len__(self) -> int:
        return len(self.entities)

    def triples(self) -> np.ndarray:
        out = np.tile(np.asarray(self.positive, dtype=np.int64), (len(self.entities), 1))
        out[:, 0 if self.slot == "head" else 2] = self.entities
        return out


def corrupt(positive, n: int, slot: str, n_entities: int, filter: FilterIndex | None = None,
            seed: int = 0, rng: np.random.Generator | None = None) -> NegativeBatch:
    """Replace the ``slot`` entity of ``positive`` by ``n`` uniformly drawn entities.

    Sampling is with replacement. With a ``filter`` every draw that yields a
    known triple is redrawn, so no returned negative is in the index.

    Raises
    ------
    ValueError
        If there are fewer than two entities, or every candidate is filtered.
    """
    if slot not in SLOTS:
        raise ValueError(f"slot must be 'head' or 'tail', got {slot!r}")
    if n_entities < 2:
        raise ValueError("corruption needs at least two entities")
    if n < 0:
        raise ValueError("n must be non-negative")
    positive = Triple(*(int(x) for x in positive))
    if rng is None:
        rng = substream(seed, "corrupt", *positive)
    ents = rng.integers(0, n_entities, size=n)
    if filter is not None:
        banned = np.unique(filter.true_entities(positive, slot))
        if len(banned) >= n_entities:
            raise ValueError(f"no valid {slot} corruption exists for {tuple(positive)}")
        if len(banned):
            bad = np.isin(ents, banned)
            while bad.any():
                ents[bad] = rng.integers(0, n_entities, size=int(bad.sum()))
                bad = np.isin(ents, banned)
    return NegativeBatch(positive, ents.astype(np.int64), slot)


def negative_weights(d_negs, cfg: LossConfig, neg_scores=None) -> np.ndarray:
    """Per-negative loss weights; sums to one."""
    d_negs = np.asarray(d_negs, dtype=np.float64)
    n = d_negs.shape[-1]
    if not cfg.self_adversarial:
        return np.full(d_negs.shape, 1.0 / n)
    s = -d_negs if neg_scores is None else np.asarray(neg_scores, dtype=np.float64)
    x = cfg.adversarial_temperature * s
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def loss(d_pos: float, d_negs, cfg: LossConfig, neg_scores=None) -> float:
    """Loss of one positive against its negatives.

    Parameters
    ----------
    d_pos : float
        Distance of the positive triple.
    d_negs : array_like, shape (n,)
        Distances of the negatives; ``n`` must equal ``cfg.n_negatives``.
    cfg : LossConfig
    neg_scores : array_like, optional
        Scores used for self-adversarial weighting; defaults to ``-d_negs``.
    """
    d_negs = np.asarray(d_negs, dtype=np.float64).reshape(-1)
    d_pos = float(d_pos)
    if np.isnan(d_pos) or np.isnan(d_negs).any():
        raise ValueError("distances must not be NaN")
    if d_pos < 0 or (d_negs < 0).any():
        raise ValueError("distances must be non-negative")
    if len(d_negs) != cfg.n_negatives:
        raise ValueError(f"expected {cfg.n_negatives} negative distances, got {len(d_negs)}")
    if neg_scores is not None:
        neg_scores = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
        if neg_scores.shape != d_negs.shape or np.isnan(neg_scores).any():
            raise ValueError("neg_scores must match d_negs and contain no NaN")
    w = negative_weights(d_negs, cfg, neg_scores)
    return float(-_log_sigmoid(cfg.gamma - d_pos) - np.sum(w * _log_sigmoid(d_negs - cfg.gamma)))


def loss_grad(params: ModelParams, positive, negatives: NegativeBatch, cfg: LossConfig,
              scorer: str | None = None, p: int = 1) -> tuple[float, dict[str, np.ndarray]]:
    """Loss of one positive and its gradient with respect to every table.

    Reference implementation on top of :func:`~transkge.scoring.grad_score`;
    training uses the batched kernels instead. Returns ``(loss, grads)`` where
    ``grads`` maps table names to arrays shaped like ``params.tables``.
    """
    scorer = check_scorer(scorer or params.scorer)
    check_norm(p)
    positive = Triple(*(int(x) for x in positive))
    neg = negatives.triples()
    d_pos = -float(resolve_and_score(params, np.asarray([positive]), scorer, p)[0])
    d_negs = -resolve_and_score(params, neg, scorer, p)
    value = loss(d_pos, d_negs, cfg)
    w = negative_weights(d_negs, cfg)
    grads = {k: np.zeros_like(v) for k, v in params.tables.items()}
    # d(-log sigmoid(gamma - d))/d(score) = -sigmoid(d - gamma) since d = -score
    scatter_role_grads(params, positive, grad_score(params, positive, scorer, p), grads,
                       scale=-_sigmoid(d_pos - cfg.gamma))
    for tri, wi, di in zip(neg, w, d_negs):
        scatter_role_grads(params, tri, grad_score(params, tri, scorer, p), grads,
                           scale=wi * _sigmoid(cfg.gamma - di))
    return value, grads
