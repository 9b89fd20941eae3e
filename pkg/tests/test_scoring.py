import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_params
from transkge.scoring import (SCORERS, ModelParams, grad_score, resolve_and_score, score_interht,
                              score_trans, score_transe, score_triplere)
from transkge.training import init_params


class TestScoreFunctions:
    def test_trans_worked_example(self):
        s = score_trans(h=[1, 0], h_aux=[0, 0], t=[0, 1], t_aux=[1, 1],
                        r_head=[1, 0], r=[0, 0], r_tail=[0, 1], p=1)
        # R_h = [2, 0], R_t = [0, 1], R_r = [1, 1]
        assert s == -3.0

    def test_trans_reduces_at_translation_identity(self):
        z = [0, 0]
        assert score_trans([1, 2], z, [2, 1], z, z, [1, -1], z) == 0.0

    def test_zero_inputs(self):
        z = np.zeros(3)
        assert score_trans(z, z, z, z, z, z, z) == 0.0
        assert score_interht(z, z, z, z, z) == 0.0
        assert score_transe(z, z, z) == 0.0

    def test_transe_examples(self):
        assert score_transe([1, 0], [0, 1], [1, 1]) == 0.0
        assert score_transe([1, 1], [1, 1], [0, 0], p=1) == -4.0
        assert score_transe([3, 0], [0, 4], [0, 0], p=2) == -5.0

    def test_interht_spot_values(self):
        h, t, t_aux, h_aux, r = [1, 2], [0, 1], [1, 0], [0, 1], [1, 1]
        z = [0, 0]
        assert score_interht(h, h_aux, t, t_aux, r) == score_trans(h, h_aux, t, t_aux, z, r, z)
        assert score_interht(h, z, t, z, r) == score_transe(h, r, t)

    def test_triplere_examples(self):
        assert score_triplere([1, 1], [1, 1], [2, 0], [1, 1], [0, 1], p=1) == -1.0
        h, t, r = [0.3, -2.0], [1.5, 0.25], [0.5, 0.5]
        assert score_triplere(h, t, [1, 1], [1, 1], r) == score_transe(h, r, t)
        assert score_triplere(h, t, [0, 0], [0, 0], [0, 0]) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            score_transe([1, 2], [1, 2, 3], [1, 2])

    def test_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            score_trans([np.nan], [0], [0], [0], [0], [0], [0])

    def test_bad_norm(self):
        with pytest.raises(ValueError):
            score_transe([1], [1], [1], p=3)

    def test_translation_symmetry(self, rng):
        h, r, t, c = rng.normal(size=(4, 8))
        # exact equality is not guaranteed after adding c; compare to rounding
        assert_allclose(score_transe(h + c, r, t + c), score_transe(h, r, t), rtol=1e-12)

    def test_score_non_positive(self, rng):
        for _ in range(100):
            v = rng.normal(size=(7, 5))
            assert score_trans(*v) <= 0.0


class TestResolveAndScore:
    @pytest.mark.parametrize("scorer", SCORERS)
    def test_matches_loop(self, rng, scorer):
        params = random_params(rng, scorer, 30, 4, 16)
        tri = np.stack([rng.integers(0, 30, 100), rng.integers(0, 4, 100), rng.integers(0, 30, 100)], 1)
        batch = resolve_and_score(params, tri, scorer)
        T = params.tables
        loop = []
        for h, r, t in tri:
            if scorer == "trans":
                s = score_trans(T["entity"][h], T["entity_aux"][h], T["entity"][t], T["entity_aux"][t],
                                T["relation_head"][r], T["relation"][r], T["relation_tail"][r])
            elif scorer == "interht":
                s = score_interht(T["entity"][h], T["entity_aux"][h], T["entity"][t], T["entity_aux"][t],
                                  T["relation"][r])
            elif scorer == "transe":
                s = score_transe(T["entity"][h], T["relation"][r], T["entity"][t])
            else:
                s = score_triplere(T["entity"][h], T["entity"][t], T["relation_head"][r],
                                   T["relation_tail"][r], T["relation"][r])
            loop.append(s)
        assert_array_equal(batch, loop)

    def test_permutation(self, rng):
        params = random_params(rng, "trans", 10, 2, 4)
        tri = np.stack([rng.integers(0, 10, 20), rng.integers(0, 2, 20), rng.integers(0, 10, 20)], 1)
        perm = rng.permutation(20)
        assert_array_equal(resolve_and_score(params, tri[perm]), resolve_and_score(params, tri)[perm])

    def test_errors(self, rng):
        params = random_params(rng, "trans", 5, 2, 4)
        with pytest.raises(IndexError):
            resolve_and_score(params, [(0, 2, 1)])
        with pytest.raises(IndexError):
            resolve_and_score(params, [(5, 0, 1)])
        with pytest.raises(ValueError, match="unknown scorer"):
            resolve_and_score(params, [(0, 0, 1)], "rotate")
        transe = random_params(rng, "transe", 5, 2, 4)
        with pytest.raises(ValueError, match="entity_aux"):
            resolve_and_score(transe, [(0, 0, 1)], "trans")

    def test_trans_equals_transe_at_init(self, rng):
        params = init_params(20, 3, 8, "trans", seed=1)
        tri = np.stack([rng.integers(0, 20, 50), rng.integers(0, 3, 50), rng.integers(0, 20, 50)], 1)
        assert_array_equal(resolve_and_score(params, tri, "trans"), resolve_and_score(params, tri, "transe"))
        assert_array_equal(resolve_and_score(params, tri, "interht"), resolve_and_score(params, tri, "transe"))

    def test_param_dimension_check(self):
        with pytest.raises(ValueError, match="dimension"):
            ModelParams("transe", {"entity": np.zeros((2, 3)), "relation": np.zeros((1, 4))})


def _fd_role_grads(params, triple, scorer, p, eps=1e-6):
    h, r, t = triple
    out = {}
    base = params.copy()
    roles = {"h": ("entity", h), "t": ("entity", t), "h_aux": ("entity_aux", h), "t_aux": ("entity_aux", t),
             "r": ("relation", r), "r_head": ("relation_head", r), "r_tail": ("relation_tail", r)}
    for role, (table, row) in roles.items():
        if table not in base.tables:
            continue
        if role in ("t", "t_aux") and h == t:
            continue
        g = np.zeros(base.dim)
        for k in range(base.dim):
            hi, lo = base.copy(), base.copy()
            hi.tables[table][row, k] += eps
            lo.tables[table][row, k] -= eps
            g[k] = (resolve_and_score(hi, [triple], scorer, p)[0] - resolve_and_score(lo, [triple], scorer, p)[0]) \
                / (2 * eps)
        out[role] = g
    return out


class TestGradScore:
    def test_relation_gradient_is_negative_sign(self, rng):
        params = random_params(rng, "trans", 4, 1, 6)
        g = grad_score(params, (0, 0, 1))
        T = params.tables
        res = (T["entity"][0] * (T["entity_aux"][1] + 1) - T["entity"][1] * (T["entity_aux"][0] + 1)) \
            + (T["relation_head"][0] * T["entity"][0] + T["relation"][0] + T["relation_tail"][0] * T["entity"][1])
        assert_array_equal(g["r"], -np.sign(res))

    def test_zero_params_zero_gradient(self):
        params = init_params(3, 1, 4, "trans")
        for v in params.tables.values():
            v[...] = 0.0
        for g in grad_score(params, (0, 0, 1)).values():
            assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("scorer", SCORERS)
    @pytest.mark.parametrize("p", [1, 2])
    def test_finite_differences(self, rng, scorer, p):
        for _ in range(5):
            params = random_params(rng, scorer, 5, 2, 4)
            tri = (int(rng.integers(5)), int(rng.integers(2)), int(rng.integers(5)))
            if tri[0] == tri[2]:
                continue
            analytic = grad_score(params, tri, scorer, p)
            numeric = _fd_role_grads(params, tri, scorer, p)
            for role, g in numeric.items():
                assert_allclose(analytic[role], g, rtol=1e-4, atol=1e-7)
