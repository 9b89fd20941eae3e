import json

import numpy as np
import pytest

from transkge.checkpoint import load_checkpoint, save_checkpoint
from transkge.cli import ConfigError, RunConfig, main
from transkge.kg import GeneratorSpec, TripleStore, Vocabulary, generate_synthetic_kg, write_id_binary, write_tsv
from transkge.training import init_params


@pytest.fixture(scope="module")
def kg_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("kg")
    store = generate_synthetic_kg(GeneratorSpec(40, 4, multi_relation_fraction=0.5), seed=2)
    write_tsv(store, root / "tsv")
    write_id_binary(store, root / "kg.bin")
    return root


def _write_config(path, **kw):
    path.write_text(json.dumps(kw))
    return str(path)


def _train_args(kg_dir, tmp_path, **extra):
    cfg = dict(data=str(kg_dir / "kg.bin"), checkpoint=str(tmp_path / "m.ckpt"),
               metrics=str(tmp_path / "m.jsonl"), dim=8, batch_size=16, n_negatives=4,
               max_steps=20, validate_every=10, n_eval_negatives=20)
    cfg.update(extra)
    return ["train", "--config", _write_config(tmp_path / "run.json", **cfg)]


class TestIngest:
    def test_two_line_tsv(self, tmp_path, capsys):
        (tmp_path / "a.tsv").write_text("A\tlikes\tB\nB\tlikes\tA\n")
        assert main(["ingest", str(tmp_path / "a.tsv"), str(tmp_path / "a.bin")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "kge-ids v1 2 1 2 0 0"
        assert (tmp_path / "a.bin").read_bytes().startswith(b"kge-ids v1 2 1 2 0 0\n")
        assert "entities  2" in out and "relations 1" in out and "triples   2" in out

    def test_idempotent(self, tmp_path, kg_dir):
        assert main(["ingest", str(kg_dir / "kg.bin"), str(tmp_path / "again.bin")]) == 0
        assert (tmp_path / "again.bin").read_bytes() == (kg_dir / "kg.bin").read_bytes()

    def test_parse_error_exit_code(self, tmp_path, capsys):
        (tmp_path / "bad.tsv").write_text("a\tb\n")
        assert main(["ingest", str(tmp_path / "bad.tsv"), str(tmp_path / "o.bin")]) == 2
        assert ":1:" in capsys.readouterr().err


class TestStats:
    def test_figure_style_pairs(self, tmp_path, capsys):
        rows = [f"x\tr{i}\ty" for i in range(5)] + [f"u\tr{i}\tv" for i in range(2)]
        (tmp_path / "f.tsv").write_text("\n".join(rows) + "\n")
        assert main(["stats", str(tmp_path / "f.tsv")]) == 0
        out = capsys.readouterr().out
        assert "multi-relation pairs 2 of 2" in out
        assert "1-to-1" in out

    def test_empty_dataset(self, tmp_path):
        (tmp_path / "e.tsv").write_text("")
        assert main(["stats", str(tmp_path / "e.tsv")]) == 2

    def test_declared_categories(self, tmp_path, capsys):
        cats = ("1-to-1", "1-to-N", "N-to-1", "N-to-N")
        store = generate_synthetic_kg(GeneratorSpec(300, 4, multi_relation_fraction=0.0, categories=cats, fanout=4),
                                      seed=1)
        write_id_binary(store, tmp_path / "c.bin")
        assert main(["stats", str(tmp_path / "c.bin")]) == 0
        rows = [l.split() for l in capsys.readouterr().out.splitlines() if l[:1].isdigit() and len(l.split()) == 5]
        assert [r[-1] for r in rows] == list(cats)


class TestRunConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            RunConfig.from_dict({"bogus": 1})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"dim": "large"})
        with pytest.raises(ConfigError):
            RunConfig.from_dict({"anchor_mode": 1})

    def test_echo_round_trip(self):
        cfg = RunConfig.from_dict({"dim": 16, "gamma": 3, "scorer": "transe"})
        again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        assert again == cfg and isinstance(again.gamma, float)

    def test_invalid_values(self):
        for bad in ({"scorer": "rotate"}, {"dropout_rate": 1.5}, {"eval_mode": "all"}, {"threads": 0}):
            with pytest.raises(ConfigError):
                RunConfig.from_dict(bad).validate()


class TestTrain:
    def test_default_echo(self, tmp_path, kg_dir, capsys):
        assert main(_train_args(kg_dir, tmp_path, max_steps=0)) == 0
        first = capsys.readouterr().out.splitlines()[0]
        assert first.startswith("# run ")
        echo = json.loads(first[len("# run "):])
        assert (echo["learning_rate"], echo["batch_size"], echo["gamma"]) == (0.0005, 16, 6.0)
        assert RunConfig.from_dict(echo).to_dict() == echo
        defaults = RunConfig()
        assert (defaults.learning_rate, defaults.batch_size, defaults.dim, defaults.gamma) == (0.0005, 512, 200, 6.0)

    def test_zero_steps_checkpoint(self, tmp_path, kg_dir):
        assert main(_train_args(kg_dir, tmp_path, max_steps=0)) == 0
        ck = load_checkpoint(tmp_path / "m.ckpt")
        init = init_params(40, 4, 8, "trans", seed=0)
        for k, v in init.tables.items():
            np.testing.assert_array_equal(ck.params.tables[k], v)
        assert (tmp_path / "m.jsonl").read_text() == ""

    def test_rerun_identical_metrics(self, tmp_path, kg_dir):
        outs = []
        for _ in range(2):
            assert main(_train_args(kg_dir, tmp_path)) == 0
            outs.append(((tmp_path / "m.jsonl").read_bytes(), (tmp_path / "m.ckpt").read_bytes()))
        assert outs[0] == outs[1]
        assert len(outs[0][0].splitlines()) == 2

    def test_flag_overrides_config(self, tmp_path, kg_dir):
        args = _train_args(kg_dir, tmp_path, max_steps=0) + ["--dim", "4", "--scorer", "transe"]
        assert main(args) == 0
        ck = load_checkpoint(tmp_path / "m.ckpt")
        assert ck.params.dim == 4 and ck.params.scorer == "transe"

    def test_config_errors_exit_1(self, tmp_path, kg_dir):
        assert main(_train_args(kg_dir, tmp_path, unknown_field=3)) == 1
        assert main(_train_args(kg_dir, tmp_path, data=str(tmp_path / "missing.bin"))) == 1
        assert main(_train_args(kg_dir, tmp_path, checkpoint=str(tmp_path / "no" / "dir" / "m.ckpt"))) == 1
        with pytest.raises(SystemExit) as exc:
            main(["train", "--dim", "abc"])
        assert exc.value.code == 1

    def test_divergence_exit_2(self, tmp_path, kg_dir, capsys):
        assert main(_train_args(kg_dir, tmp_path, learning_rate=1e300, dropout_rate=0.0,
                                max_steps=50, validate_every=50)) == 2
        assert "diverged" in capsys.readouterr().err
        assert load_checkpoint(tmp_path / "m.ckpt").params is not None

    def test_anchor_mode(self, tmp_path, kg_dir):
        args = _train_args(kg_dir, tmp_path, anchor_mode=True, n_anchors=10, anchor_tokens=4,
                           anchor_max_distance=5)
        assert main(args) == 0
        ck = load_checkpoint(tmp_path / "m.ckpt")
        assert ck.params.parameter_count() == 2 * 10 * 8 + 3 * 4 * 8 + 6 * 8


class TestEval:
    def _perfect(self, tmp_path):
        store = TripleStore(Vocabulary(3, 1), train=[(0, 0, 1)], valid=[(1, 0, 2)], test=[(0, 0, 1)])
        write_id_binary(store, tmp_path / "p.bin")
        params = init_params(3, 1, 1, "transe")
        params.tables["entity"][:, 0] = [0.0, 10.0, 20.0]
        params.tables["relation"][:] = 10.0
        save_checkpoint(tmp_path / "p.ckpt", params, config={"p": 1})
        return ["eval", "--checkpoint", str(tmp_path / "p.ckpt"), "--data", str(tmp_path / "p.bin")]

    def test_perfect_checkpoint(self, tmp_path, capsys):
        assert main(self._perfect(tmp_path) + ["--report", str(tmp_path / "r.json")]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["mrr"] == 1.0 and rep["hits@1"] == 1.0
        assert json.loads((tmp_path / "r.json").read_text()) == rep

    def test_scorer_mismatch_names_both(self, tmp_path, capsys):
        assert main(self._perfect(tmp_path) + ["--scorer", "trans"]) == 1
        err = capsys.readouterr().err
        assert "'transe'" in err and "'trans'" in err

    def test_exhaustive_equals_full_sampled(self, tmp_path, kg_dir, capsys):
        main(_train_args(kg_dir, tmp_path))
        capsys.readouterr()
        base = ["eval", "--checkpoint", str(tmp_path / "m.ckpt"), "--data", str(kg_dir / "kg.bin")]
        assert main(base + ["--eval-mode", "exhaustive"]) == 0
        ex = json.loads(capsys.readouterr().out)
        assert main(base + ["--n-eval-negatives", "40"]) == 0
        sa = json.loads(capsys.readouterr().out)
        assert ex["mrr"] == sa["mrr"]

    def test_random_checkpoint_near_uniform(self, tmp_path, kg_dir, capsys):
        main(_train_args(kg_dir, tmp_path, max_steps=0))
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "m.ckpt"), "--data", str(kg_dir / "kg.bin"),
                     "--eval-mode", "exhaustive", "--eval-split", "test"]) == 0
        rep = json.loads(capsys.readouterr().out)
        # ~39 candidates per query: uniform-rank expectation is H_40 / 40, about 0.107
        assert 0.02 < rep["mrr"] < 0.3

    def test_missing_checkpoint(self, tmp_path, kg_dir):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(kg_dir / "kg.bin")]) == 1
