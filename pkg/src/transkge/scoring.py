"""Embedding tables and transition-based scoring functions.

Every scorer has the shape ``-|| R_h - R_t + R_r ||_p``:

============  ====================  ====================  ==============================
scorer        R_h                   R_t                   R_r
============  ====================  ====================  ==============================
``transe``    h                     t                     r
``interht``   h * (t_aux + 1)       t * (h_aux + 1)       r
``trans``     h * (t_aux + 1)       t * (h_aux + 1)       r_head * h + r + r_tail * t
``triplere``  h * r_head            t * r_tail            r
============  ====================  ====================  ==============================

All products are elementwise. The residual is always evaluated as
``(R_h - R_t) + R_r`` so the reductions ``trans -> interht -> transe`` hold
with exact floating-point equality, and norms reduce with numpy's summation
order, which the compiled kernels replicate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCORERS = ("trans", "transe", "interht", "triplere")
SCORER_CODES = {"transe": 0, "interht": 1, "trans": 2, "triplere": 3}

# table names per scorer, in checkpoint order
SCORER_TABLES = {
    "transe": ("entity", "relation"),
    "interht": ("entity", "entity_aux", "relation"),
    "trans": ("entity", "entity_aux", "relation", "relation_head", "relation_tail"),
    "triplere": ("entity", "relation", "relation_head", "relation_tail"),
}

# vector roles each scorer reads
SCORER_ROLES = {
    "transe": ("h", "t", "r"),
    "interht": ("h", "h_aux", "t", "t_aux", "r"),
    "trans": ("h", "h_aux", "t", "t_aux", "r", "r_head", "r_tail"),
    "triplere": ("h", "t", "r", "r_head", "r_tail"),
}

ENTITY_ROLES = {"h": ("head", "entity"), "t": ("tail", "entity"),
                "h_aux": ("head", "entity_aux"), "t_aux": ("tail", "entity_aux")}
RELATION_ROLES = {"r": "relation", "r_head": "relation_head", "r_tail": "relation_tail"}


def check_scorer(scorer: str) -> str:
    if scorer not in SCORER_CODES:
        raise ValueError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")
    return scorer


def check_norm(p: int) -> int:
    if p not in (1, 2):
        raise ValueError(f"norm order must be 1 or 2, got {p!r}")
    return p


# ---------------------------------------------------------------------------
# residuals and norms (vectorised over leading axes)

def _norm(res: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return np.sum(np.abs(res), axis=-1)
    return np.sqrt(np.sum(res * res, axis=-1))


def trans_residual(h, h_aux, t, t_aux, r_head, r, r_tail):
    return (h * (t_aux + 1.0) - t * (h_aux + 1.0)) + ((r_head * h + r) + r_tail * t)


def interht_residual(h, h_aux, t, t_aux, r):
    return (h * (t_aux + 1.0) - t * (h_aux + 1.0)) + r


def transe_residual(h, r, t):
    return (h - t) + r


def triplere_residual(h, t, r_head, r_tail, r):
    return (h * r_head - t * r_tail) + r


def _checked(*vectors):
    arrs = [np.asarray(v, dtype=np.float64) for v in vectors]
    shape = arrs[0].shape
    for a in arrs[1:]:
        if a.shape != shape:
            raise ValueError(f"dimension mismatch: {a.shape} vs {shape}")
    for a in arrs:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input vector")
    return arrs


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def score_trans(h, h_aux, t, t_aux, r_head, r, r_tail, p: int = 1):
    """TranS score ``-|| h*(t_aux+e) - t*(h_aux+e) + (r_head*h + r + r_tail*t) ||_p``."""
    check_norm(p)
    h, h_aux, t, t_aux, r_head, r, r_tail = _checked(h, h_aux, t, t_aux, r_head, r, r_tail)
    return _out(-_norm(trans_residual(h, h_aux, t, t_aux, r_head, r, r_tail), p))


def score_transe(h, r, t, p: int = 1):
    check_norm(p)
    h, r, t = _checked(h, r, t)
    return _out(-_norm(transe_residual(h, r, t), p))


def score_interht(h, h_aux, t, t_aux, r, p: int = 1):
    check_norm(p)
    h, h_aux, t, t_aux, r = _checked(h, h_aux, t, t_aux, r)
    return _out(-_norm(interht_residual(h, h_aux, t, t_aux, r), p))


def score_triplere(h, t, r_head, r_tail, r, p: int = 1):
    """TripleRE score ``-|| h*r_head - t*r_tail + r ||_p``."""
    check_norm(p)
    h, t, r_head, r_tail, r = _checked(h, t, r_head, r_tail, r)
    return _out(-_norm(triplere_residual(h, t, r_head, r_tail, r), p))


def residual(scorer: str, v: dict) -> np.ndarray:
    if scorer == "trans":
        return trans_residual(v["h"], v["h_aux"], v["t"], v["t_aux"], v["r_head"], v["r"], v["r_tail"])
    if scorer == "interht":
        return interht_residual(v["h"], v["h_aux"], v["t"], v["t_aux"], v["r"])
    if scorer == "transe":
        return transe_residual(v["h"], v["r"], v["t"])
    if scorer == "triplere":
        return triplere_residual(v["h"], v["t"], v["r_head"], v["r_tail"], v["r"])
    raise ValueError(f"unknown scorer {scorer!r}")


# ---------------------------------------------------------------------------
# parameters

@dataclass
class ModelParams:
    """Named embedding tables for one scorer.

    In direct mode entity vectors live in ``entity``/``entity_aux``. In anchor
    mode those tables are replaced by ``anchor``/``anchor_aux`` plus a shared
    ``distance`` table, and entity vectors are composed through ``anchors``
    (an :class:`~transkge.anchors.AnchorVocab`).
    """

    scorer: str
    tables: dict[str, np.ndarray]
    anchors: object | None = None
    n_entities: int = 0
    n_relations: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        check_scorer(self.scorer)
        dims = {t.shape[1] for t in self.tables.values()}
        if len(dims) != 1:
            raise ValueError(f"tables disagree on dimension: {sorted(dims)}")
        if not self.n_relations and "relation" in self.tables:
            self.n_relations = self.tables["relation"].shape[0]
        if not self.n_entities:
            if self.anchors is not None:
                self.n_entities = self.anchors.n_entities
            else:
                self.n_entities = self.tables["entity"].shape[0]

    @property
    def dim(self) -> int:
        return next(iter(self.tables.values())).shape[1]

    @property
    def anchor_mode(self) -> bool:
        return self.anchors is not None

    def table_names(self) -> tuple[str, ...]:
        return tuple(self.tables)

    def parameter_count(self) -> int:
        return int(sum(t.size for t in self.tables.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.scorer, {k: v.copy() for k, v in self.tables.items()},
                           self.anchors, self.n_entities, self.n_relations)

    def has_entity_aux(self) -> bool:
        return ("anchor_aux" if self.anchor_mode else "entity_aux") in self.tables

    def entity_table(self, which: str = "entity", ids=None) -> np.ndarray:
        """Rows of the main (``"entity"``) or auxiliary (``"entity_aux"``) entity table.

        In anchor mode the rows are composed from anchor and distance embeddings.
        """
        if not self.anchor_mode:
            table = self.tables[which]
            return table if ids is None else table[ids]
        from .anchors import compose_entities
        source = "anchor" if which == "entity" else "anchor_aux"
        return compose_entities(self.anchors, self.tables[source], self.tables["distance"], ids)

    def kernel_tables(self, scorer: str | None = None, entity_ids=None):
        """Dense float64 tables in kernel argument order.

        Returns ``(ent, ent_aux, rel, rel_head, rel_tail)``; tables a scorer does
        not read are empty ``(0, d)`` arrays.
        """
        scorer = check_scorer(scorer or self.scorer)
        d = self.dim
        empty = np.zeros((0, d))
        need = SCORER_TABLES[scorer]
        ent = np.ascontiguousarray(self.entity_table("entity", entity_ids))
        ent_aux = (np.ascontiguousarray(self.entity_table("entity_aux", entity_ids))
                   if "entity_aux" in need else empty)
        rel = self.tables["relation"]
        rh = self.tables["relation_head"] if "relation_head" in need else empty
        rt = self.tables["relation_tail"] if "relation_tail" in need else empty
        return ent, ent_aux, rel, rh, rt


def check_tables(params: ModelParams, scorer: str) -> None:
    for name in SCORER_TABLES[scorer]:
        if name in ("entity", "entity_aux") and params.anchor_mode:
            name = "anchor" if name == "entity" else "anchor_aux"
        if name not in params.tables:
            raise ValueError(f"scorer {scorer!r} needs table {name!r}, which "
                             f"{params.scorer!r} parameters do not have")


def _check_ids(params: ModelParams, triples: np.ndarray) -> np.ndarray:
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        return triples
    ents = triples[:, [0, 2]]
    if ents.min() < 0 or ents.max() >= params.n_entities:
        raise IndexError(f"entity id out of range [0, {params.n_entities})")
    rels = triples[:, 1]
    if rels.min() < 0 or rels.max() >= params.n_relations:
        raise IndexError(f"relation id out of range [0, {params.n_relations})")
    return triples


def lookup(params: ModelParams, triples: np.ndarray, scorer: str) -> dict[str, np.ndarray]:
    """Resolve role vectors for a batch of triples."""
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    out = {}
    for role in SCORER_ROLES[scorer]:
        if role in ENTITY_ROLES:
            side, table = ENTITY_ROLES[role]
            out[role] = params.entity_table(table, h if side == "head" else t)
        else:
            out[role] = params.tables[RELATION_ROLES[role]][r]
    return out


def resolve_and_score(params: ModelParams, triples, scorer: str | None = None, p: int = 1) -> np.ndarray:
    """Score each row of an ``(n, 3)`` id array; order is preserved."""
    scorer = check_scorer(scorer or params.scorer)
    check_norm(p)
    check_tables(params, scorer)
    triples = _check_ids(params, triples)
    if len(triples) == 0:
        return np.zeros(0)
    return -_norm(residual(scorer, lookup(params, triples, scorer)), p)


def _dnorm(res: np.ndarray, p: int) -> np.ndarray:
    """Derivative of ``||res||_p`` with sign(0) = 0 and a zero gradient at res = 0."""
    if p == 1:
        return np.sign(res)
    n = np.sqrt(np.sum(res * res, axis=-1, keepdims=True))
    return np.divide(res, n, out=np.zeros_like(res), where=n > 0)


def role_partials(scorer: str, v: dict) -> dict[str, np.ndarray]:
    """Elementwise derivative of the residual with respect to each role vector."""
    one = np.ones_like(v["h"])
    if scorer == "transe":
        return {"h": one, "t": -one, "r": one}
    if scorer == "triplere":
        return {"h": v["r_head"], "t": -v["r_tail"], "r": one,
                "r_head": v["h"], "r_tail": -v["t"]}
    out = {"h": v["t_aux"] + 1.0, "t_aux": v["h"], "t": -(v["h_aux"] + 1.0),
           "h_aux": -v["t"], "r": one}
    if scorer == "trans":
        out["h"] = out["h"] + v["r_head"]
        out["t"] = out["t"] + v["r_tail"]
        out["r_head"] = v["h"]
        out["r_tail"] = v["t"]
    return out


def grad_score(params: ModelParams, triple, scorer: str | None = None, p: int = 1) -> dict[str, np.ndarray]:
    """Gradient of the score of one triple with respect to each role vector.

    Keys are role names (``h``, ``h_aux``, ``t``, ``t_aux``, ``r``, ``r_head``,
    ``r_tail``) restricted to the roles the scorer reads. For ``p = 1`` the
    subgradient uses ``sign(0) = 0``.
    """
    scorer = check_scorer(scorer or params.scorer)
    check_norm(p)
    check_tables(params, scorer)
    triples = _check_ids(params, np.asarray(triple).reshape(1, 3))
    v = {k: x[0] for k, x in lookup(params, triples, scorer).items()}
    res = residual(scorer, v)
    dscore = -_dnorm(res, p)
    return {role: dscore * part for role, part in role_partials(scorer, v).items()}


def scatter_role_grads(params: ModelParams, triple, role_grads: dict[str, np.ndarray],
                       out: dict[str, np.ndarray] | None = None, scale: float = 1.0) -> dict[str, np.ndarray]:
    """Accumulate role gradients of one triple into dense table-shaped arrays."""
    if out is None:
        out = {k: np.zeros_like(v) for k, v in params.tables.items()}
    h, r, t = (int(x) for x in triple)
    for role, g in role_grads.items():
        g = scale * g
        if role in RELATION_ROLES:
            out[RELATION_ROLES[role]][r] += g
            continue
        side, table = ENTITY_ROLES[role]
        ent = h if side == "head" else t
        if params.anchor_mode:
            from .anchors import scatter_entity_grad
            source = "anchor" if table == "entity" else "anchor_aux"
            scatter_entity_grad(params.anchors, ent, g, out[source], out["distance"])
        else:
            out[table][ent] += g
    return out
