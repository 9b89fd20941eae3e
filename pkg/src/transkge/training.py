"""Minibatch training with lazy Adam, dropout and periodic validation.

Each step draws ``batch_size`` positives uniformly with replacement from the
training split, corrupts every positive ``n_negatives`` times (heads for even
batch positions, tails for odd ones) and takes one Adam step on the rows the
batch touched. Every random draw comes from a named sub-stream of the run
seed keyed by the step number, so a run is reproducible from its config.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple

import numpy as np

from . import kernels
from .anchors import AnchorVocab, scatter_entity_grads
from .checkpoint import save_checkpoint
from .evaluation import EvalConfig, evaluate
from .kg import FilterIndex, TripleStore, build_filter_index
from .rng import keep_mask, stream_key, substream
from .sampling import WEIGHTINGS, LossConfig
from .scoring import SCORER_CODES, SCORER_TABLES, ModelParams, check_norm, check_scorer

# entity tables up to this many values get dense per-step gradients
_DENSE_LIMIT = 1 << 22


class NonFiniteGradientError(FloatingPointError):
    """A gradient handed to :func:`adam_step` contains NaN or infinity."""

    def __init__(self, table: str):
        super().__init__(f"non-finite gradient in table {table!r}")
        self.table = table


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient stops being finite.

    ``params`` holds the last parameters for which the step was finite and
    ``result`` the partial :class:`TrainResult`.
    """

    def __init__(self, step: int, reason: str, params: ModelParams, result: "TrainResult"):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step
        self.params = params
        self.result = result


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 512
    dropout_rate: float = 0.1
    n_negatives: int = 128
    dim: int = 200
    max_steps: int = 800_000
    validate_every: int = 20_000
    gamma: float = 6.0
    p: int = 1
    weighting: str = "self-adversarial"
    adversarial_temperature: float = 1.0
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    filter_negatives: bool = True
    n_eval_negatives: int = 1000

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.n_negatives < 1 or self.dim < 1:
            raise ValueError("batch_size, n_negatives and dim must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.max_steps < 0 or self.validate_every < 1:
            raise ValueError("max_steps must be >= 0 and validate_every >= 1")
        if 0 < self.max_steps < self.validate_every:
            raise ValueError("max_steps must be at least validate_every")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0 and self.adam_epsilon > 0):
            raise ValueError("Adam betas must lie in [0, 1) and epsilon must be positive")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.n_eval_negatives < 1:
            raise ValueError("n_eval_negatives must be positive")
        check_norm(self.p)
        self.loss_config()

    def loss_config(self) -> LossConfig:
        return LossConfig(self.gamma, self.n_negatives, self.weighting, self.adversarial_temperature)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------------------
# parameters and optimiser

def init_params(n_entities: int, n_relations: int, dim: int, scorer: str = "trans", seed: int = 0,
                anchors: AnchorVocab | None = None) -> ModelParams:
    """Fresh parameters: main tables uniform in ``[-1/sqrt(d), 1/sqrt(d)]``, auxiliaries zero.

    With zero auxiliaries the ``trans`` and ``interht`` scorers start out
    identical to ``transe``. TripleRE's head and tail relation tables start at
    one, which makes it equal to TransE as well.
    """
    scorer = check_scorer(scorer)
    if dim <= 0:
        raise ValueError("dim must be positive")
    rng = substream(seed, "init")
    b = 1.0 / math.sqrt(dim)
    need = SCORER_TABLES[scorer]
    tables = {}
    if anchors is None:
        tables["entity"] = rng.uniform(-b, b, (n_entities, dim))
        if "entity_aux" in need:
            tables["entity_aux"] = np.zeros((n_entities, dim))
    else:
        tables["anchor"] = rng.uniform(-b, b, (anchors.k, dim))
        if "entity_aux" in need:
            tables["anchor_aux"] = np.zeros((anchors.k, dim))
        tables["distance"] = np.zeros((anchors.max_distance + 1, dim))
    tables["relation"] = rng.uniform(-b, b, (n_relations, dim))
    fill = 1.0 if scorer == "triplere" else 0.0
    for name in ("relation_head", "relation_tail"):
        if name in need:
            tables[name] = np.full((n_relations, dim), fill)
    return ModelParams(scorer, tables, anchors, n_entities if anchors is None else anchors.n_entities,
                       n_relations)


class SparseGrad(NamedTuple):
    """Gradient rows ``values`` for table rows ``rows``."""

    rows: np.ndarray
    values: np.ndarray


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in params.tables.items()},
                   {k: np.zeros_like(t) for k, t in params.tables.items()})


def adam_step(params: ModelParams, state: AdamState, grads: dict, cfg: TrainConfig) -> None:
    """One lazy Adam update in place.

    ``grads`` maps table names to either a dense array shaped like the table or
    a :class:`SparseGrad`. Only the listed rows (for dense gradients: rows with
    a non-zero entry) have their moments and values updated; bias correction
    uses the global step count.

    Raises
    ------
    NonFiniteGradientError
        Before any table is modified, if some gradient is not finite.
    """
    prepared = []
    for name, g in grads.items():
        if name not in params.tables:
            raise KeyError(f"gradient for unknown table {name!r}")
        table = params.tables[name]
        if isinstance(g, SparseGrad):
            rows, vals = np.asarray(g.rows, dtype=np.int64), np.asarray(g.values, dtype=np.float64)
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != table.shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, table has {table.shape}")
            if not np.isfinite(g).all():
                raise NonFiniteGradientError(name)
            rows = np.flatnonzero(np.any(g != 0.0, axis=1))
            vals = g[rows]
        if vals.shape != (len(rows), table.shape[1]):
            raise ValueError(f"gradient rows for {name!r} do not match the table width")
        if not np.isfinite(vals).all():
            raise NonFiniteGradientError(name)
        prepared.append((name, rows, vals))
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1, bc2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for name, rows, g in prepared:
        if len(rows) == 0:
            continue
        m = b1 * state.m[name][rows] + (1.0 - b1) * g
        v = b2 * state.v[name][rows] + (1.0 - b2) * (g * g)
        state.m[name][rows] = m
        state.v[name][rows] = v
        params.tables[name][rows] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)


def apply_dropout(x, rate: float, key: tuple[int, int] = (0, 0), training: bool = True,
                  component: int = 0) -> np.ndarray:
    """Zero each component with probability ``rate`` and rescale survivors by ``1/(1-rate)``.

    The mask is a hash of ``(key, flat index, component)``, the same function
    the training kernels use. Identity when ``training`` is false or ``rate`` is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    keep = keep_mask(key, np.arange(x.size).reshape(x.shape), component, rate)
    return np.where(keep, x * (1.0 / (1.0 - rate)), 0.0)


# ---------------------------------------------------------------------------
# metrics

class MetricRecord(NamedTuple):
    step: int
    loss: float
    valid_mrr: float
    wallclock: float


class MetricsLog:
    """Append-only validation records, optionally mirrored to a JSON-lines file.

    The file holds ``step``, ``loss`` and ``valid_mrr``; wall-clock time is kept
    in memory only so that files from identical runs are byte-identical.
    """

    def __init__(self, path=None):
        self.records: list[MetricRecord] = []
        self.path = path
        if path is not None:
            open(path, "w").close()

    def append(self, step: int, loss: float, valid_mrr: float, wallclock: float = 0.0) -> None:
        if self.records and step <= self.records[-1].step:
            raise ValueError(f"metrics steps must increase: {step} after {self.records[-1].step}")
        rec = MetricRecord(int(step), float(loss), float(valid_mrr), float(wallclock))
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(self.line(rec) + "\n")

    @staticmethod
    def line(rec: MetricRecord) -> str:
        return json.dumps({"step": rec.step, "loss": rec.loss, "valid_mrr": rec.valid_mrr}, sort_keys=True)

    def to_jsonl(self) -> str:
        return "".join(self.line(r) + "\n" for r in self.records)

    @classmethod
    def read(cls, path) -> "MetricsLog":
        log = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    log.append(d["step"], d["loss"], d["valid_mrr"])
        return log

    def best(self) -> MetricRecord | None:
        if not self.records:
            return None
        return max(self.records, key=lambda r: (r.valid_mrr, -r.step))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class TrainResult:
    params: ModelParams
    last_params: ModelParams
    metrics: MetricsLog
    losses: np.ndarray
    best_step: int = 0
    best_mrr: float = float("nan")
    steps: int = 0
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# the loop

def _draw_negatives(rng, B, n, N, heads, rels, tails, ch, filt):
    negs = rng.integers(0, N, size=(B, n))
    if filt is None or len(filt) == 0:
        return negs
    # key of the corrupted triple is base + step * entity, see FilterIndex._key
    R = filt.n_relations
    base = np.where(ch, rels * N + tails, (heads * R + rels) * N)[:, None]
    step = np.where(ch, R * N, 1)[:, None]
    bad = filt.contains_keys(base + step * negs)
    for _ in range(1000):
        if not bad.any():
            return negs
        rows = np.nonzero(bad)[0]
        fresh = rng.integers(0, N, size=len(rows))
        negs[bad] = fresh
        still = filt.contains_keys(base[rows, 0] + step[rows, 0] * fresh)
        bad[bad] = still
    raise ValueError("could not draw filtered negatives; some positive has no valid corruption")


class _Stepper:
    """Gradient of one batch in kernel form, for direct or anchor-mode parameters."""

    def __init__(self, params: ModelParams, cfg: TrainConfig, backend=None):
        self.params = params
        self.cfg = cfg
        self.kern = kernels.get(backend)
        self.code = SCORER_CODES[params.scorer]
        self.need = SCORER_TABLES[params.scorer]
        self.loss_cfg = cfg.loss_config()
        self.N = params.n_entities
        d = params.dim
        self.empty = np.zeros((0, d))
        self.dense = not params.anchor_mode and self.N * d <= _DENSE_LIMIT

    def _rel_tables(self):
        t = self.params.tables
        rh = t["relation_head"] if "relation_head" in self.need else self.empty
        rt = t["relation_tail"] if "relation_tail" in self.need else self.empty
        return t["relation"], rh, rt

    def __call__(self, heads, rels, tails, negs, ch, key) -> tuple[float, dict]:
        cfg, params = self.cfg, self.params
        has_aux = "entity_aux" in self.need
        ids = np.concatenate([heads, tails, negs.ravel()])
        touched = np.flatnonzero(np.bincount(ids, minlength=self.N))
        if self.dense:
            ent = params.tables["entity"]
            ent_aux = params.tables["entity_aux"] if has_aux else self.empty
            h_, t_, n_ = heads, tails, negs
        else:
            lut = np.empty(self.N, dtype=np.int64)
            lut[touched] = np.arange(len(touched))
            h_, t_, n_ = lut[heads], lut[tails], lut[negs]
            ent = params.entity_table("entity", touched)
            ent_aux = params.entity_table("entity_aux", touched) if has_aux else self.empty
        ent = np.ascontiguousarray(ent)
        ent_aux = np.ascontiguousarray(ent_aux)
        rel, rh, rt = self._rel_tables()
        g_ent = np.zeros_like(ent)
        g_ent_aux = np.zeros_like(ent_aux)
        g_rel = np.zeros_like(rel)
        g_rh = np.zeros_like(rh)
        g_rt = np.zeros_like(rt)
        lc = self.loss_cfg
        # overflow surfaces as a non-finite loss or gradient, which the caller reports
        with np.errstate(over="ignore", invalid="ignore"):
            loss = self.kern.loss_and_grad(
                self.code, cfg.p, ent, ent_aux, rel, rh, rt,
                kernels.as_index(h_), kernels.as_index(rels), kernels.as_index(t_), kernels.as_index(n_),
                kernels.as_flags(ch), lc.gamma, lc.self_adversarial, lc.adversarial_temperature,
                cfg.dropout_rate, key[0], key[1], g_ent, g_ent_aux, g_rel, g_rh, g_rt)

        rel_rows = np.flatnonzero(np.bincount(rels, minlength=params.n_relations))
        grads = {"relation": SparseGrad(rel_rows, g_rel[rel_rows])}
        if "relation_head" in self.need:
            grads["relation_head"] = SparseGrad(rel_rows, g_rh[rel_rows])
            grads["relation_tail"] = SparseGrad(rel_rows, g_rt[rel_rows])
        if not params.anchor_mode:
            rows_g = g_ent[touched] if self.dense else g_ent
            grads["entity"] = SparseGrad(touched, rows_g)
            if has_aux:
                grads["entity_aux"] = SparseGrad(touched, g_ent_aux[touched] if self.dense else g_ent_aux)
            return loss, grads
        vocab = params.anchors
        dist_g = np.zeros_like(params.tables["distance"])
        anchor_rows = np.unique(vocab.token_anchor[touched])
        anchor_rows = anchor_rows[anchor_rows >= 0]
        for src, g in (("anchor", g_ent), ("anchor_aux", g_ent_aux if has_aux else None)):
            if g is None:
                continue
            ag = np.zeros_like(params.tables[src])
            scatter_entity_grads(vocab, touched, g, ag, dist_g)
            grads[src] = SparseGrad(anchor_rows, ag[anchor_rows])
        grads["distance"] = SparseGrad(np.arange(len(dist_g)), dist_g)
        return loss, grads


def train(store: TripleStore, cfg: TrainConfig, scorer: str = "trans", anchors: AnchorVocab | None = None,
          checkpoint_path=None, metrics_path=None, anchors_path=None, backend: str | None = None,
          config_echo: dict | None = None, on_validate: Callable | None = None) -> TrainResult:
    """Train a model and keep the parameters with the best validation MRR.

    Validation runs every ``cfg.validate_every`` steps and after the last
    step, using the sampled protocol with ``cfg.n_eval_negatives`` candidates.
    If ``checkpoint_path`` is given the best parameters are written there on
    every improvement (and the initial parameters when no step is run).

    Raises
    ------
    TrainingDiverged
        When a step yields a non-finite loss or gradient. The best checkpoint
        on disk is left untouched; if none was written yet, the last finite
        parameters are saved.
    """
    scorer = check_scorer(scorer)
    cfg.validate()
    if len(store.train) == 0:
        raise ValueError("training split is empty")
    if cfg.max_steps > 0 and len(store.valid) == 0:
        raise ValueError("validation split is empty")
    if anchors is not None and anchors.n_entities != store.n_entities:
        raise ValueError("anchor vocabulary does not cover the store's entities")

    params = init_params(store.n_entities, store.n_relations, cfg.dim, scorer, cfg.seed, anchors)
    state = AdamState.zeros_like(params)
    metrics = MetricsLog(metrics_path)
    echo = config_echo if config_echo is not None else {"scorer": scorer, **cfg.to_dict()}
    filt = build_filter_index(store)
    # negatives are filtered against training triples only; held-out splits must not leak into training
    neg_filter = FilterIndex(store.train, store.n_entities, store.n_relations) if cfg.filter_negatives else None
    eval_cfg = EvalConfig(n_eval_negatives=cfg.n_eval_negatives, mode="sampled", seed=cfg.seed)
    step_fn = _Stepper(params, cfg, backend)

    B, n, N = cfg.batch_size, cfg.n_negatives, store.n_entities
    train_rows = store.train
    ch = (np.arange(B) % 2 == 0)
    losses = np.empty(cfg.max_steps)
    best = params.copy()
    best_step, best_mrr = 0, -math.inf
    saved = False
    window = []
    t0 = time.perf_counter()

    def save(p, step, mrr):
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, p, step, echo, mrr, anchors_path)

    for step in range(1, cfg.max_steps + 1):
        idx = substream(cfg.seed, "batch", step).integers(0, len(train_rows), size=B)
        batch = train_rows[idx]
        heads, rels, tails = batch[:, 0].copy(), batch[:, 1].copy(), batch[:, 2].copy()
        negs = _draw_negatives(substream(cfg.seed, "corrupt", step), B, n, N, heads, rels, tails, ch, neg_filter)
        key = stream_key(cfg.seed, "dropout", step)
        loss, grads = step_fn(heads, rels, tails, negs, ch, key)
        reason = None
        if not math.isfinite(loss):
            reason = "non-finite loss"
        else:
            try:
                adam_step(params, state, grads, cfg)
            except NonFiniteGradientError as exc:
                reason = str(exc)
        if reason is not None:
            result = TrainResult(best, params, metrics, losses[:step - 1], best_step,
                                 best_mrr if saved else float("nan"), step - 1)
            # adam_step validates before writing, so params still hold the last finite state
            if checkpoint_path is not None and not saved:
                save(params, step - 1, None)
            raise TrainingDiverged(step, reason, params, result)
        losses[step - 1] = loss
        window.append(loss)
        if step % cfg.validate_every == 0 or step == cfg.max_steps:
            mrr = evaluate(params, store, "valid", eval_cfg, scorer, cfg.p, filter=filt, backend=backend).mrr
            metrics.append(step, float(np.mean(window)), mrr, time.perf_counter() - t0)
            window = []
            if mrr > best_mrr:
                best, best_step, best_mrr = params.copy(), step, mrr
                save(best, step, mrr)
                saved = True
            if on_validate is not None:
                on_validate(metrics.records[-1])
    if cfg.max_steps == 0:
        save(params, 0, None)
    return TrainResult(best, params, metrics, losses, best_step,
                       best_mrr if saved else float("nan"), cfg.max_steps)
