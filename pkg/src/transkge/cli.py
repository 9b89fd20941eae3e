"""Command-line entry point: ``transkge {ingest,train,eval,stats}``.

Runs are driven by a flat JSON config (``--config``); any field can be
overridden by the matching ``--flag``. Exit codes: 0 success, 1 usage or
configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields

from .anchors import build_anchor_vocab, save_anchor_vocab
from .checkpoint import load_checkpoint, read_header
from .evaluation import EvalConfig, evaluate
from .kg import FormatError, load_triples, multi_relation_pairs, relation_stats, write_id_binary
from .scoring import SCORERS
from .training import TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Every setting of a run, flat so it maps one-to-one onto JSON and flags."""

    # data and outputs
    data: str = ""
    data_format: str = "auto"
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.jsonl"
    report: str = ""
    # model
    scorer: str = "trans"
    dim: int = 200
    p: int = 1
    # loss
    gamma: float = 6.0
    n_negatives: int = 128
    weighting: str = "self-adversarial"
    adversarial_temperature: float = 1.0
    filter_negatives: bool = True
    # optimisation
    learning_rate: float = 0.0005
    batch_size: int = 512
    dropout_rate: float = 0.1
    max_steps: int = 800_000
    validate_every: int = 20_000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # evaluation
    n_eval_negatives: int = 1000
    eval_mode: str = "sampled"
    eval_sides: str = "both"
    eval_split: str = "valid"
    candidates: str = ""
    rank_dump: str = ""
    # anchors
    anchor_mode: bool = False
    n_anchors: int = 20_000
    anchor_tokens: int = 20
    anchor_max_distance: int = 10
    anchor_strategy: str = "top-degree"
    anchors: str = ""
    # reproducibility
    seed: int = 0
    threads: int = 1
    backend: str = "auto"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls()
        for f in fields(cls):
            if f.name in d:
                setattr(cfg, f.name, _coerce(f.name, type(getattr(cfg, f.name)), d[f.name]))
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig.from_dict(self.to_dict())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def eval_config(self) -> EvalConfig:
        try:
            return EvalConfig(self.n_eval_negatives, self.eval_mode, self.eval_sides, self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self) -> None:
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.backend not in ("auto", "numpy", "cython"):
            raise ConfigError("backend must be auto, numpy or cython")
        if self.eval_split not in ("train", "valid", "test"):
            raise ConfigError("eval_split must be train, valid or test")
        if self.anchor_strategy not in ("top-degree", "uniform-random"):
            raise ConfigError("anchor_strategy must be top-degree or uniform-random")
        self.train_config()
        self.eval_config()


def _coerce(name, typ, value):
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{name} must be true or false")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{name} must be an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string")
    return value


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser, names=None) -> None:
    defaults = RunConfig()
    for f in fields(RunConfig):
        if names is not None and f.name not in names:
            continue
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            parser.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(_flag(f.name), dest=f.name, type=type(default), default=None,
                                metavar=f.name.upper())


def _resolve(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    cfg = RunConfig.from_dict(base)
    cfg.validate()
    return cfg


def _require_file(path: str, what: str) -> None:
    if not path:
        raise ConfigError(f"no {what} given")
    if not os.path.exists(path):
        raise ConfigError(f"{what} not found: {path}")


def _require_parent(path: str, what: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError(f"directory for {what} does not exist: {parent}")


def _out(text: str = "") -> None:
    sys.stdout.write(text + "\n")
    sys.stdout.flush()


# ---------------------------------------------------------------------------
# commands

def cmd_ingest(args) -> int:
    store = load_triples(args.input, args.format)
    _require_parent(args.output, "output")
    write_id_binary(store, args.output)
    with open(args.output, "rb") as fh:
        _out(fh.readline().decode("ascii").rstrip("\n"))
    s = store.summary()
    _out(f"entities  {s['entities']}")
    _out(f"relations {s['relations']}")
    _out(f"triples   {s['edges']}")
    return EXIT_OK


def cmd_stats(args) -> int:
    store = load_triples(args.data, args.format)
    if store.n_triples == 0:
        raise ValueError(f"{args.data}: dataset is empty")
    s = store.summary()
    _out(f"entities   {s['entities']}")
    _out(f"relations  {s['relations']}")
    _out(f"edges      {s['edges']}")
    _out(f"train      {s['train']}")
    _out(f"valid      {s['valid']}")
    _out(f"test       {s['test']}")
    multi, total = multi_relation_pairs(store.all_triples())
    _out(f"multi-relation pairs {multi} of {total}")
    stats = relation_stats(store, args.threshold)
    _out("")
    _out(f"{'relation':<24} {'triples':>9} {'tails/head':>11} {'heads/tail':>11}  category")
    for rid, rc in enumerate(stats.relations):
        _out(f"{store.vocab.relation_name(rid):<24} {rc.n_triples:>9} {rc.tails_per_head:>11.3f} "
             f"{rc.heads_per_tail:>11.3f}  {rc.category}")
    _out("")
    _out("  ".join(f"{k}: {v}" for k, v in stats.counts().items()))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve(args)
    _require_file(cfg.data, "data")
    _require_parent(cfg.checkpoint, "checkpoint")
    _require_parent(cfg.metrics, "metrics")
    tcfg = cfg.train_config()
    echo = cfg.to_dict()
    _out("# run " + json.dumps(echo, sort_keys=True))
    store = load_triples(cfg.data, cfg.data_format)
    anchors = anchors_path = None
    if cfg.anchor_mode:
        if cfg.n_anchors > store.n_entities:
            raise ConfigError(f"n_anchors={cfg.n_anchors} exceeds entity count {store.n_entities}")
        anchors = build_anchor_vocab(store, cfg.n_anchors, cfg.anchor_tokens, cfg.anchor_max_distance,
                                     cfg.anchor_strategy, cfg.seed)
        anchors_path = cfg.anchors or cfg.checkpoint + ".anchors"
        save_anchor_vocab(anchors, anchors_path)
    backend = None if cfg.backend == "auto" else cfg.backend

    def report(rec):
        _out(f"step {rec.step}  loss {rec.loss:.6f}  valid_mrr {rec.valid_mrr:.6f}")

    try:
        result = train(store, tcfg, cfg.scorer, anchors, cfg.checkpoint, cfg.metrics, anchors_path,
                       backend, echo, report)
    except TrainingDiverged as exc:
        sys.stderr.write(f"transkge: {exc}; checkpoint kept at {cfg.checkpoint}\n")
        return EXIT_RUNTIME
    if result.steps:
        _out(f"best step {result.best_step}  valid_mrr {result.best_mrr:.6f}")
    _out(f"checkpoint {cfg.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    _require_file(args.checkpoint, "checkpoint")
    _require_file(cfg.data, "data")
    header = read_header(args.checkpoint)
    scorer = args.scorer or header["scorer"]
    if scorer != header["scorer"]:
        raise ConfigError(f"checkpoint was trained with scorer {header['scorer']!r}, "
                          f"but scorer {scorer!r} was requested")
    if cfg.candidates:
        _require_file(cfg.candidates, "candidates")
    ckpt = load_checkpoint(args.checkpoint)
    store = load_triples(cfg.data, cfg.data_format)
    if store.n_entities != ckpt.params.n_entities or store.n_relations != ckpt.params.n_relations:
        raise ConfigError("checkpoint and data disagree on entity or relation counts")
    p = ckpt.config.get("p", cfg.p) if args.p is None else cfg.p
    backend = None if cfg.backend == "auto" else cfg.backend
    report = evaluate(ckpt.params, store, cfg.eval_split, cfg.eval_config(), scorer, p,
                      candidates=cfg.candidates or None, rank_dump=cfg.rank_dump or None, backend=backend)
    text = report.to_json()
    _out(text)
    if cfg.report:
        with open(cfg.report, "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="transkge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="convert triples to the id-binary format")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--format", default="auto", choices=["auto", "tsv-labels", "id-binary"])
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="counts and relation cardinality table")
    p.add_argument("data")
    p.add_argument("--format", default="auto", choices=["auto", "tsv-labels", "id-binary"])
    p.add_argument("--threshold", type=float, default=1.5)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank a split with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    eval_fields = {"data", "data_format", "report", "scorer", "p", "n_eval_negatives", "eval_mode",
                   "eval_sides", "eval_split", "candidates", "rank_dump", "seed", "threads", "backend"}
    _add_config_flags(p, eval_fields)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"transkge: {exc}\n")
        return EXIT_USAGE
    except (FormatError, ValueError, OSError, KeyError, IndexError) as exc:
        sys.stderr.write(f"transkge: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
