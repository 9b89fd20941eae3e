import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_params, random_store
from transkge.kg import FilterIndex, Triple, build_filter_index
from transkge.sampling import LossConfig, NegativeBatch, corrupt, loss, loss_grad, negative_weights
from transkge.scoring import SCORERS, resolve_and_score
from transkge.training import init_params


def _closed_form(gamma, d_pos, d_negs):
    # independent scalar oracle for the uniform-weight loss
    def log_sig(x):
        return -math.log1p(math.exp(-x)) if x >= 0 else x - math.log1p(math.exp(x))

    return -log_sig(gamma - d_pos) - sum(log_sig(d - gamma) for d in d_negs) / len(d_negs)


class TestLossConfig:
    @pytest.mark.parametrize("kwargs", [dict(gamma=0.0), dict(n_negatives=0), dict(weighting="softmax"),
                                        dict(adversarial_temperature=0.0), dict(n_negatives=2.5)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)

    def test_defaults(self):
        cfg = LossConfig()
        assert (cfg.gamma, cfg.n_negatives, cfg.weighting, cfg.adversarial_temperature) == \
            (6.0, 128, "self-adversarial", 1.0)


class TestLoss:
    def test_worked_case(self):
        value = loss(0.0, [12.0], LossConfig(6.0, 1, "uniform"))
        assert abs(value - 0.0049514) < 1e-6
        assert_allclose(value, 2 * math.log1p(math.exp(-6.0)), rtol=1e-14)

    @pytest.mark.parametrize("weighting", ["uniform", "self-adversarial"])
    def test_all_at_margin(self, weighting):
        assert_allclose(loss(6.0, [6.0] * 4, LossConfig(6.0, 4, weighting)), 2 * math.log(2), rtol=1e-15)

    def test_identical_negatives_mode_independent(self, rng):
        for n in (1, 3, 17):
            d = [rng.uniform(0, 10)] * n
            assert loss(2.0, d, LossConfig(6.0, n, "uniform")) == loss(2.0, d, LossConfig(6.0, n))

    def test_matches_closed_form(self, rng):
        for _ in range(200):
            g = rng.uniform(0.5, 12)
            n = int(rng.integers(1, 6))
            dp, dn = rng.uniform(0, 20), rng.uniform(0, 20, n)
            assert abs(loss(dp, dn, LossConfig(g, n, "uniform")) - _closed_form(g, dp, dn)) < 1e-10

    def test_self_adversarial_weights(self):
        cfg = LossConfig(6.0, 3, adversarial_temperature=0.5)
        d = np.array([1.0, 2.0, 4.0])
        w = negative_weights(d, cfg)
        e = np.exp(-0.5 * d)
        assert_allclose(w, e / e.sum(), rtol=1e-15)
        expected = -math.log(1 / (1 + math.exp(-(6 - 0.5)))) - sum(
            wi * math.log(1 / (1 + math.exp(-(di - 6)))) for wi, di in zip(w, d))
        assert_allclose(loss(0.5, d, cfg), expected, rtol=1e-13)

    def test_explicit_scores_drive_weights(self):
        cfg = LossConfig(6.0, 2)
        a = loss(1.0, [3.0, 9.0], cfg, neg_scores=[0.0, 0.0])
        b = loss(1.0, [3.0, 9.0], LossConfig(6.0, 2, "uniform"))
        assert a == b

    def test_monotone(self):
        cfg = LossConfig(6.0, 2, "uniform")
        assert loss(1.0, [5.0, 7.0], cfg) < loss(2.0, [5.0, 7.0], cfg)
        assert loss(1.0, [5.0, 7.0], cfg) > loss(1.0, [6.0, 7.0], cfg)

    def test_vanishes_for_perfect_separation(self):
        assert 0 < loss(0.0, [1e3], LossConfig(6.0, 1)) < 1e-2

    @pytest.mark.parametrize("args", [(np.nan, [1.0]), (1.0, [np.nan]), (-1.0, [1.0]), (1.0, [1.0, 2.0])])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            loss(*args, LossConfig(6.0, 1))


class TestCorrupt:
    def test_single_candidate(self):
        idx = FilterIndex(np.array([(0, 0, 1)]), 2, 1)
        nb = corrupt((0, 0, 1), 20, "head", 2, filter=idx, seed=1)
        assert_array_equal(nb.entities, 1)

    def test_shape_unfiltered(self):
        nb = corrupt((3, 1, 4), 128, "tail", 10, seed=0)
        tri = nb.triples()
        assert tri.shape == (128, 3)
        assert (tri[:, 0] == 3).all() and (tri[:, 1] == 1).all()
        assert_array_equal(tri[:, 2], nb.entities)

    def test_filtered_no_known_triples(self, rng):
        store = random_store(rng, 30, 2, 1000)
        idx = build_filter_index(store)
        known = set(map(tuple, store.all_triples().tolist()))
        total = 0
        for i, pos in enumerate(store.train[:20]):
            for slot in ("head", "tail"):
                nb = corrupt(pos, 250, slot, 30, filter=idx, seed=i)
                total += len(nb)
                assert not any(tuple(t) in known for t in nb.triples().tolist())
        assert total == 10_000

    def test_deterministic(self):
        a = corrupt((0, 0, 1), 10, "tail", 50, seed=3).entities
        assert_array_equal(a, corrupt((0, 0, 1), 10, "tail", 50, seed=3).entities)
        assert not np.array_equal(a, corrupt((0, 0, 1), 10, "tail", 50, seed=4).entities)

    def test_no_valid_candidate(self):
        idx = FilterIndex(np.array([(0, 0, 0), (1, 0, 0)]), 2, 1)
        with pytest.raises(ValueError, match="no valid"):
            corrupt((0, 0, 0), 3, "head", 2, filter=idx)

    def test_errors(self):
        with pytest.raises(ValueError):
            corrupt((0, 0, 0), 3, "head", 1)
        with pytest.raises(ValueError):
            corrupt((0, 0, 1), 3, "relation", 5)


def _fd_table_grads(params, pos, nb, cfg, scorer, p, eps=1e-6):
    """Central differences of the loss with negative weights frozen at ``params``."""
    frozen = resolve_and_score(params, nb.triples(), scorer, p)

    def f(prm):
        d_pos = -resolve_and_score(prm, [pos], scorer, p)[0]
        d_negs = -resolve_and_score(prm, nb.triples(), scorer, p)
        return loss(d_pos, d_negs, cfg, neg_scores=frozen)

    out = {}
    for name, table in params.tables.items():
        g = np.zeros_like(table)
        for idx in np.ndindex(table.shape):
            hi, lo = params.copy(), params.copy()
            hi.tables[name][idx] += eps
            lo.tables[name][idx] -= eps
            g[idx] = (f(hi) - f(lo)) / (2 * eps)
        out[name] = g
    return out


class TestLossGrad:
    def test_positive_scale_at_margin(self):
        # d_pos = gamma: positive-term gradient is 0.5 * d(d_pos)
        params = init_params(3, 1, 2, "transe")
        params.tables["entity"][:] = [[0.0, 0.0], [3.0, 3.0], [40.0, 40.0]]
        params.tables["relation"][:] = 0.0
        pos = Triple(0, 0, 1)
        nb = NegativeBatch(pos, np.array([2]), "tail")
        _, g = loss_grad(params, pos, nb, LossConfig(6.0, 1, "uniform"))
        # d(d_pos)/dr = sign(h - t + r) = -1; negative term is saturated
        assert_allclose(g["relation"][0], -0.5 + 1 / (1 + math.exp(74.0)) * 1, rtol=1e-12)

    def test_zero_params_zero_grad(self):
        params = init_params(4, 2, 3, "trans")
        for v in params.tables.values():
            v[...] = 0.0
        pos = Triple(0, 1, 2)
        _, g = loss_grad(params, pos, corrupt(pos, 4, "tail", 4, seed=0), LossConfig(6.0, 4))
        for v in g.values():
            assert_array_equal(v, 0.0)

    @pytest.mark.parametrize("scorer", SCORERS)
    @pytest.mark.parametrize("weighting", ["uniform", "self-adversarial"])
    def test_finite_differences(self, rng, scorer, weighting):
        params = random_params(rng, scorer, 5, 2, 4)
        pos = Triple(0, 1, 3)
        nb = NegativeBatch(pos, np.array([1, 2, 4]), "tail")
        cfg = LossConfig(1.5, 3, weighting)
        _, g = loss_grad(params, pos, nb, cfg, scorer)
        num = _fd_table_grads(params, pos, nb, cfg, scorer, 1)
        for name in g:
            assert_allclose(g[name], num[name], rtol=1e-4, atol=1e-8, err_msg=name)
