# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training and ranking kernels; see ``_kernels_py`` for the reference.

The loops live in ``kernel_core.h``. Norm reductions reproduce numpy's
pairwise summation so scores match the numpy path bit for bit.
"""
import numpy as np

from libc.stdint cimport int64_t, uint8_t, uint32_t

BACKEND = "cython"


cdef extern from "kernel_core.h" nogil:
    ctypedef struct kge_tables:
        const double* ent
        const double* ent_aux
        const double* rel
        const double* rel_head
        const double* rel_tail
        double* g_ent
        double* g_ent_aux
        double* g_rel
        double* g_rel_head
        double* g_rel_tail

    double kge_loss_grad(int scorer, int p, Py_ssize_t d, const kge_tables* tb,
                         Py_ssize_t B, Py_ssize_t n,
                         const int64_t* heads, const int64_t* rels, const int64_t* tails,
                         const int64_t* negs, const uint8_t* corrupt_head,
                         double gamma, int self_adversarial, double adv_temperature,
                         double dropout_rate, uint32_t key_lo, uint32_t key_hi, int* status)
    int kge_score(int scorer, int p, Py_ssize_t d, const kge_tables* tb, Py_ssize_t Q, Py_ssize_t C,
                  const int64_t* heads, const int64_t* rels, const int64_t* tails,
                  const int64_t* cands, const uint8_t* corrupt_head, double* out)


cdef inline const double* _ptr(const double[:, ::1] a) noexcept:
    if a.shape[0] == 0 or a.shape[1] == 0:
        return NULL
    return &a[0, 0]


cdef inline double* _gptr(double[:, ::1] a) noexcept:
    if a.shape[0] == 0 or a.shape[1] == 0:
        return NULL
    return &a[0, 0]


cdef inline const int64_t* _iptr(const int64_t[::1] a) noexcept:
    if a.shape[0] == 0:
        return NULL
    return &a[0]


cdef void _fill(kge_tables* tb, const double[:, ::1] ent, const double[:, ::1] ent_aux,
                const double[:, ::1] rel, const double[:, ::1] rel_head,
                const double[:, ::1] rel_tail) noexcept:
    tb.ent = _ptr(ent)
    tb.ent_aux = _ptr(ent_aux)
    tb.rel = _ptr(rel)
    tb.rel_head = _ptr(rel_head)
    tb.rel_tail = _ptr(rel_tail)
    tb.g_ent = NULL
    tb.g_ent_aux = NULL
    tb.g_rel = NULL
    tb.g_rel_head = NULL
    tb.g_rel_tail = NULL


def loss_and_grad(int scorer, int p,
                  const double[:, ::1] ent, const double[:, ::1] ent_aux,
                  const double[:, ::1] rel, const double[:, ::1] rel_head, const double[:, ::1] rel_tail,
                  const int64_t[::1] heads, const int64_t[::1] rels, const int64_t[::1] tails,
                  const int64_t[:, ::1] negs, const uint8_t[::1] corrupt_head,
                  double gamma, bint self_adversarial, double adv_temperature,
                  double dropout_rate, uint32_t key_lo, uint32_t key_hi,
                  double[:, ::1] g_ent, double[:, ::1] g_ent_aux, double[:, ::1] g_rel,
                  double[:, ::1] g_rel_head, double[:, ::1] g_rel_tail):
    """Mean loss over the batch; gradients are accumulated into the ``g_*`` tables."""
    cdef Py_ssize_t B = negs.shape[0], n = negs.shape[1], d = ent.shape[1]
    cdef kge_tables tb
    cdef int status = 0
    cdef double loss
    if B == 0:
        return float("nan")
    _fill(&tb, ent, ent_aux, rel, rel_head, rel_tail)
    tb.g_ent = _gptr(g_ent)
    tb.g_ent_aux = _gptr(g_ent_aux)
    tb.g_rel = _gptr(g_rel)
    tb.g_rel_head = _gptr(g_rel_head)
    tb.g_rel_tail = _gptr(g_rel_tail)
    with nogil:
        loss = kge_loss_grad(scorer, p, d, &tb, B, n, &heads[0], &rels[0], &tails[0],
                             &negs[0, 0] if n > 0 else NULL, &corrupt_head[0],
                             gamma, self_adversarial, adv_temperature,
                             dropout_rate, key_lo, key_hi, &status)
    if status != 0:
        raise MemoryError()
    return loss


def score_candidates(int scorer, int p,
                     const double[:, ::1] ent, const double[:, ::1] ent_aux,
                     const double[:, ::1] rel, const double[:, ::1] rel_head, const double[:, ::1] rel_tail,
                     const int64_t[::1] heads, const int64_t[::1] rels, const int64_t[::1] tails,
                     const int64_t[:, ::1] cands, const uint8_t[::1] corrupt_head):
    """Scores of ``(cand, r, t)`` (head side) or ``(h, r, cand)`` (tail side), shape ``(Q, C)``."""
    cdef Py_ssize_t Q = cands.shape[0], C = cands.shape[1], d = ent.shape[1]
    cdef kge_tables tb
    cdef int status = 0
    out_arr = np.empty((Q, C), dtype=np.float64)
    if Q == 0 or C == 0:
        return out_arr
    cdef double[:, ::1] out = out_arr
    _fill(&tb, ent, ent_aux, rel, rel_head, rel_tail)
    with nogil:
        status = kge_score(scorer, p, d, &tb, Q, C, &heads[0], &rels[0], &tails[0],
                           &cands[0, 0], &corrupt_head[0], &out[0, 0])
    if status != 0:
        raise MemoryError()
    return out_arr
