"""Agreement between the compiled kernels, the numpy fallback and the reference loss."""
import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from conftest import random_params
from transkge import kernels
from transkge.kg import Triple
from transkge.sampling import LossConfig, NegativeBatch, loss_grad
from transkge.scoring import SCORER_CODES, SCORERS, resolve_and_score

BACKENDS = sorted(kernels.BACKENDS)
needs_compiled = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled extension not built")


def _batch(rng, N=12, R=3, B=6, n=5):
    heads = rng.integers(0, N, B)
    rels = rng.integers(0, R, B)
    tails = rng.integers(0, N, B)
    negs = rng.integers(0, N, (B, n))
    ch = (np.arange(B) % 2 == 0).astype(np.uint8)
    return heads, rels, tails, negs, ch


def _run(kern, scorer, p, params, batch, gamma=6.0, adv=True, temp=1.0, dropout=0.0, key=(3, 4)):
    tabs = params.kernel_tables(scorer)
    grads = [np.zeros_like(t) for t in tabs]
    loss = kern.loss_and_grad(SCORER_CODES[scorer], p, *tabs, *batch, gamma, adv, temp, dropout,
                              key[0], key[1], *grads)
    return loss, grads


class TestBackendSelection:
    def test_numpy_always_available(self):
        assert "numpy" in kernels.BACKENDS
        assert kernels.get("numpy").BACKEND == "numpy"

    def test_active_prefers_compiled(self):
        expected = "cython" if "cython" in kernels.BACKENDS else "numpy"
        assert kernels.BACKEND == expected
        assert kernels.get() is kernels.active

    def test_unknown_backend(self):
        with pytest.raises(ValueError, match="not available"):
            kernels.get("fortran")


@pytest.mark.parametrize("backend", BACKENDS)
class TestAgainstReference:
    """Kernel output against the per-triple reference built on grad_score."""

    @pytest.mark.parametrize("scorer", SCORERS)
    @pytest.mark.parametrize("p", [1, 2])
    @pytest.mark.parametrize("weighting", ["uniform", "self-adversarial"])
    def test_loss_and_grad(self, rng, backend, scorer, p, weighting):
        params = random_params(rng, scorer, 12, 3, 6)
        batch = _batch(rng)
        heads, rels, tails, negs, ch = batch
        cfg = LossConfig(gamma=2.0, n_negatives=negs.shape[1], weighting=weighting)
        loss, grads = _run(kernels.get(backend), scorer, p, params, batch, gamma=2.0,
                           adv=cfg.self_adversarial)
        ref_loss = 0.0
        ref = {k: np.zeros_like(v) for k, v in params.tables.items()}
        B = len(heads)
        for b in range(B):
            pos = Triple(int(heads[b]), int(rels[b]), int(tails[b]))
            nb = NegativeBatch(pos, negs[b], "head" if ch[b] else "tail")
            lb, gb = loss_grad(params, pos, nb, cfg, scorer, p)
            ref_loss += lb / B
            for k in ref:
                ref[k] += gb[k] / B
        assert_allclose(loss, ref_loss, rtol=1e-12)
        for name, g in zip(("entity", "entity_aux", "relation", "relation_head", "relation_tail"), grads):
            if name in ref:
                assert_allclose(g, ref[name], rtol=1e-10, atol=1e-14, err_msg=name)
            else:
                assert g.size == 0

    @pytest.mark.parametrize("scorer", SCORERS)
    @pytest.mark.parametrize("p", [1, 2])
    def test_score_candidates(self, rng, backend, scorer, p):
        params = random_params(rng, scorer, 15, 3, 8)
        heads, rels, tails, _, ch = _batch(rng, N=15, B=7)
        cands = rng.integers(0, 15, (7, 9))
        out = kernels.get(backend).score_candidates(SCORER_CODES[scorer], p, *params.kernel_tables(scorer),
                                                    heads, rels, tails, cands, ch)
        for q in range(7):
            tri = np.tile([heads[q], rels[q], tails[q]], (9, 1))
            tri[:, 0 if ch[q] else 2] = cands[q]
            # same accumulation order as the numpy reference: exact agreement
            assert_array_equal(out[q], resolve_and_score(params, tri, scorer, p))


@needs_compiled
class TestCompiledParity:
    @pytest.mark.parametrize("scorer", SCORERS)
    @pytest.mark.parametrize("p", [1, 2])
    @pytest.mark.parametrize("dropout", [0.0, 0.1, 0.5])
    def test_loss_and_grad(self, rng, scorer, p, dropout):
        params = random_params(rng, scorer, 40, 4, 33)
        batch = _batch(rng, N=40, R=4, B=16, n=11)
        lc, gc = _run(kernels.get("cython"), scorer, p, params, batch, dropout=dropout, key=(77, 99))
        lp, gp = _run(kernels.get("numpy"), scorer, p, params, batch, dropout=dropout, key=(77, 99))
        assert_allclose(lc, lp, rtol=1e-13)
        for a, b in zip(gc, gp):
            assert_allclose(a, b, rtol=1e-10, atol=1e-15)

    @pytest.mark.parametrize("scorer", SCORERS)
    def test_scores_bitwise(self, rng, scorer):
        params = random_params(rng, scorer, 50, 5, 200)
        heads, rels, tails, _, ch = _batch(rng, N=50, R=5, B=9)
        cands = rng.integers(0, 50, (9, 31))
        args = (SCORER_CODES[scorer], 1, *params.kernel_tables(scorer), heads, rels, tails, cands, ch)
        assert_array_equal(kernels.get("cython").score_candidates(*args),
                           kernels.get("numpy").score_candidates(*args))

    def test_empty_batch(self):
        tabs = [np.zeros((3, 2))] * 2 + [np.zeros((1, 2))] * 3
        grads = [np.zeros_like(t) for t in tabs]
        e = np.zeros(0, dtype=np.int64)
        loss = kernels.get("cython").loss_and_grad(2, 1, *tabs, e, e, e, np.zeros((0, 2), np.int64),
                                                   np.zeros(0, np.uint8), 6.0, True, 1.0, 0.0, 0, 0, *grads)
        assert np.isnan(loss)


class TestDropoutInKernel:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_dropout_changes_loss_deterministically(self, rng, backend):
        params = random_params(rng, "trans", 12, 3, 16)
        batch = _batch(rng)
        kern = kernels.get(backend)
        a = _run(kern, "trans", 1, params, batch, dropout=0.3, key=(1, 2))[0]
        b = _run(kern, "trans", 1, params, batch, dropout=0.3, key=(1, 2))[0]
        c = _run(kern, "trans", 1, params, batch, dropout=0.3, key=(1, 3))[0]
        d = _run(kern, "trans", 1, params, batch, dropout=0.0)[0]
        assert a == b
        assert a != c and a != d
