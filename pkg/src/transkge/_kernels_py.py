"""Pure-numpy implementation of the training and ranking kernels.

Mirrors ``_kernels.pyx`` argument for argument. Scores agree bitwise with the
compiled version; losses and gradients agree to rounding (transcendental
functions and scatter order differ).
"""
from __future__ import annotations

import numpy as np

from .rng import keep_mask

TRANSE, INTERHT, TRANS, TRIPLERE = 0, 1, 2, 3
BACKEND = "numpy"


def _norm(res, p):
    if p == 1:
        return np.sum(np.abs(res), axis=-1)
    return np.sqrt(np.sum(res * res, axis=-1))


def _parts(scorer, ent, ent_aux, rel, rel_head, rel_tail, H, R, T):
    h, t = ent[H], ent[T]
    r = rel[R]
    v = {"h": h, "t": t, "r": r}
    if scorer in (INTERHT, TRANS):
        v["hx"], v["tx"] = ent_aux[H], ent_aux[T]
        Rh = h * (v["tx"] + 1.0)
        Rt = t * (v["hx"] + 1.0)
        if scorer == TRANS:
            v["ra"], v["rb"] = rel_head[R], rel_tail[R]
            Rr = (v["ra"] * h + r) + v["rb"] * t
        else:
            Rr = r
    elif scorer == TRIPLERE:
        v["ra"], v["rb"] = rel_head[R], rel_tail[R]
        Rh, Rt, Rr = h * v["ra"], t * v["rb"], r
    else:
        Rh, Rt, Rr = h, t, r
    return v, Rh, Rt, Rr


def _expand(heads, rels, tails, negs, corrupt_head):
    B, n = negs.shape
    H = np.repeat(heads[:, None], n + 1, axis=1)
    T = np.repeat(tails[:, None], n + 1, axis=1)
    ch = corrupt_head.astype(bool)
    H[ch, 1:] = negs[ch]
    T[~ch, 1:] = negs[~ch]
    R = np.repeat(rels[:, None], n + 1, axis=1)
    return H, R, T


def _log1pexp(x):
    # log(1 + exp(x)), i.e. -log(sigmoid(-x))
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loss_and_grad(scorer, p, ent, ent_aux, rel, rel_head, rel_tail,
                  heads, rels, tails, negs, corrupt_head,
                  gamma, self_adversarial, adv_temperature,
                  dropout_rate, key_lo, key_hi,
                  g_ent, g_ent_aux, g_rel, g_rel_head, g_rel_tail):
    """Mean loss over the batch; gradients are accumulated into the ``g_*`` tables."""
    B, n = negs.shape
    J = n + 1
    d = ent.shape[1]
    H, R, T = _expand(heads, rels, tails, negs, corrupt_head)
    v, Rh, Rt, Rr = _parts(scorer, ent, ent_aux, rel, rel_head, rel_tail, H, R, T)
    if dropout_rate > 0.0:
        ctr = np.arange(B * J * d, dtype=np.int64).reshape(B, J, d)
        scale = 1.0 / (1.0 - dropout_rate)
        m1, m2, m3 = (np.where(keep_mask((key_lo, key_hi), ctr, c, dropout_rate), scale, 0.0)
                      for c in range(3))
        res = (Rh * m1 - Rt * m2) + Rr * m3
    else:
        m1 = m2 = m3 = None
        res = (Rh - Rt) + Rr
    dist = _norm(res, p)
    d0, dn = dist[:, 0], dist[:, 1:]
    if self_adversarial:
        x = -adv_temperature * dn
        x = x - x.max(axis=1, keepdims=True)
        e = np.exp(x)
        w = e / np.sum(e, axis=1, keepdims=True)
    else:
        w = np.full((B, n), 1.0 / n)
    per = _log1pexp(d0 - gamma) + np.sum(w * _log1pexp(gamma - dn), axis=1)
    loss = np.sum(per) / B

    coef = np.empty((B, J))
    coef[:, 0] = _sigmoid(d0 - gamma)
    coef[:, 1:] = -w * _sigmoid(gamma - dn)
    coef /= B
    if p == 1:
        G = coef[:, :, None] * np.sign(res)
    else:
        safe = np.where(dist > 0, dist, 1.0)
        G = np.where(dist[:, :, None] > 0, coef[:, :, None] * (res / safe[:, :, None]), 0.0)
    if m1 is not None:
        gRh, gRt, gRr = G * m1, -(G * m2), G * m3
    else:
        gRh, gRt, gRr = G, -G, G

    h, t = v["h"], v["t"]
    if scorer == TRANSE:
        gh, gt = gRh, gRt
    elif scorer == TRIPLERE:
        gh, gt = gRh * v["ra"], gRt * v["rb"]
        np.add.at(g_rel_head, R.ravel(), (gRh * h).reshape(-1, d))
        np.add.at(g_rel_tail, R.ravel(), (gRt * t).reshape(-1, d))
    else:
        gh = gRh * (v["tx"] + 1.0)
        gt = gRt * (v["hx"] + 1.0)
        if scorer == TRANS:
            gh = gh + gRr * v["ra"]
            gt = gt + gRr * v["rb"]
            np.add.at(g_rel_head, R.ravel(), (gRr * h).reshape(-1, d))
            np.add.at(g_rel_tail, R.ravel(), (gRr * t).reshape(-1, d))
        np.add.at(g_ent_aux, T.ravel(), (gRh * h).reshape(-1, d))
        np.add.at(g_ent_aux, H.ravel(), (gRt * t).reshape(-1, d))
    np.add.at(g_ent, H.ravel(), gh.reshape(-1, d))
    np.add.at(g_ent, T.ravel(), gt.reshape(-1, d))
    np.add.at(g_rel, R.ravel(), gRr.reshape(-1, d))
    return float(loss)


def score_candidates(scorer, p, ent, ent_aux, rel, rel_head, rel_tail,
                     heads, rels, tails, cands, corrupt_head):
    """Scores of ``(cand, r, t)`` (head side) or ``(h, r, cand)`` (tail side), shape ``(Q, C)``."""
    Q, C = cands.shape
    H = np.repeat(heads[:, None], C, axis=1)
    T = np.repeat(tails[:, None], C, axis=1)
    ch = corrupt_head.astype(bool)
    H[ch] = cands[ch]
    T[~ch] = cands[~ch]
    R = np.repeat(rels[:, None], C, axis=1)
    _, Rh, Rt, Rr = _parts(scorer, ent, ent_aux, rel, rel_head, rel_tail, H, R, T)
    return -_norm((Rh - Rt) + Rr, p)
