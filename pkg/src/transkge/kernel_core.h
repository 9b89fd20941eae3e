/* Hot loops behind _kernels.pyx.
 *
 * Residuals are evaluated with the same operation order as the numpy
 * reference and norms with numpy's pairwise summation, so scores are
 * bit-identical across backends (build with -ffp-contract=off).
 */
#ifndef TRANSKGE_KERNEL_CORE_H
#define TRANSKGE_KERNEL_CORE_H

#include <math.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>

#define KGE_TRANSE 0
#define KGE_INTERHT 1
#define KGE_TRANS 2
#define KGE_TRIPLERE 3

#if defined(__GNUC__)
#define KGE_INLINE static inline __attribute__((always_inline))
#else
#define KGE_INLINE static inline
#endif

static double kge_pairwise_sum(const double *a, ptrdiff_t n)
{
    if (n < 8) {
        double res = -0.0;
        for (ptrdiff_t i = 0; i < n; i++)
            res += a[i];
        return res;
    }
    else if (n <= 128) {
        double r0 = a[0], r1 = a[1], r2 = a[2], r3 = a[3];
        double r4 = a[4], r5 = a[5], r6 = a[6], r7 = a[7];
        ptrdiff_t i;
        for (i = 8; i < n - (n % 8); i += 8) {
            r0 += a[i + 0]; r1 += a[i + 1]; r2 += a[i + 2]; r3 += a[i + 3];
            r4 += a[i + 4]; r5 += a[i + 5]; r6 += a[i + 6]; r7 += a[i + 7];
        }
        double res = ((r0 + r1) + (r2 + r3)) + ((r4 + r5) + (r6 + r7));
        for (; i < n; i++)
            res += a[i];
        return res;
    }
    ptrdiff_t n2 = n / 2;
    n2 -= n2 % 8;
    return kge_pairwise_sum(a, n2) + kge_pairwise_sum(a + n2, n - n2);
}

/* keep in sync with rng.keep_mask */
KGE_INLINE uint32_t kge_hash(uint32_t lo, uint32_t hi, uint32_t ctr, uint32_t comp)
{
    uint32_t x = (ctr * 3u + comp) * 0x9E3779B9u + lo;
    x ^= hi;
    x ^= x >> 16;
    x *= 0x85EBCA6Bu;
    x ^= x >> 13;
    x *= 0xC2B2AE35u;
    x ^= x >> 16;
    return x;
}

KGE_INLINE double kge_log1pexp(double x)
{
    /* numpy's logaddexp(0, x) */
    if (x == 0.0)
        return 0.693147180559945309417232121458176568;
    if (x < 0.0)
        return log1p(exp(x));
    return x + log1p(exp(-x));
}

KGE_INLINE double kge_sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + exp(-x));
    double e = exp(x);
    return e / (1.0 + e);
}

/* Residual split into its three composed parts. */
KGE_INLINE void kge_parts(int scorer, ptrdiff_t d,
                          const double *restrict h, const double *restrict hx,
                          const double *restrict t, const double *restrict tx,
                          const double *restrict r, const double *restrict ra,
                          const double *restrict rb,
                          double *restrict Rh, double *restrict Rt, double *restrict Rr)
{
    for (ptrdiff_t k = 0; k < d; k++) {
        if (scorer == KGE_TRANSE) {
            Rh[k] = h[k]; Rt[k] = t[k]; Rr[k] = r[k];
        } else if (scorer == KGE_INTERHT) {
            Rh[k] = h[k] * (tx[k] + 1.0); Rt[k] = t[k] * (hx[k] + 1.0); Rr[k] = r[k];
        } else if (scorer == KGE_TRANS) {
            Rh[k] = h[k] * (tx[k] + 1.0); Rt[k] = t[k] * (hx[k] + 1.0);
            Rr[k] = (ra[k] * h[k] + r[k]) + rb[k] * t[k];
        } else {
            Rh[k] = h[k] * ra[k]; Rt[k] = t[k] * rb[k]; Rr[k] = r[k];
        }
    }
}

KGE_INLINE void kge_residual(int scorer, ptrdiff_t d,
                             const double *restrict h, const double *restrict hx,
                             const double *restrict t, const double *restrict tx,
                             const double *restrict r, const double *restrict ra,
                             const double *restrict rb, double *restrict out)
{
    for (ptrdiff_t k = 0; k < d; k++) {
        if (scorer == KGE_TRANSE)
            out[k] = (h[k] - t[k]) + r[k];
        else if (scorer == KGE_INTERHT)
            out[k] = (h[k] * (tx[k] + 1.0) - t[k] * (hx[k] + 1.0)) + r[k];
        else if (scorer == KGE_TRANS)
            out[k] = (h[k] * (tx[k] + 1.0) - t[k] * (hx[k] + 1.0)) + ((ra[k] * h[k] + r[k]) + rb[k] * t[k]);
        else
            out[k] = (h[k] * ra[k] - t[k] * rb[k]) + r[k];
    }
}

KGE_INLINE double kge_norm(const double *restrict res, double *restrict tmp, ptrdiff_t d, int p)
{
    if (p == 1) {
        for (ptrdiff_t k = 0; k < d; k++)
            tmp[k] = fabs(res[k]);
        return kge_pairwise_sum(tmp, d);
    }
    for (ptrdiff_t k = 0; k < d; k++)
        tmp[k] = res[k] * res[k];
    return sqrt(kge_pairwise_sum(tmp, d));
}

KGE_INLINE void kge_backward_row(int scorer, int p, ptrdiff_t d, double c, double dj,
                                 const double *restrict rj, const double *restrict m1,
                                 const double *restrict m2, const double *restrict m3,
                                 const double *restrict h, const double *restrict hx,
                                 const double *restrict t, const double *restrict tx,
                                 const double *restrict ra, const double *restrict rb,
                                 double *restrict gH, double *restrict gT,
                                 double *restrict gHx, double *restrict gTx,
                                 double *restrict aR, double *restrict aRa, double *restrict aRb)
{
    for (ptrdiff_t k = 0; k < d; k++) {
        double x = rj[k], g;
        if (p == 1)
            g = c * ((double)(x > 0.0) - (double)(x < 0.0));
        else
            g = c * (x / dj);
        double gRh = g * m1[k], gRt = -(g * m2[k]), gRr = g * m3[k];
        if (scorer == KGE_TRANSE) {
            gH[k] += gRh;
            gT[k] += gRt;
        } else if (scorer == KGE_TRIPLERE) {
            gH[k] += gRh * ra[k];
            gT[k] += gRt * rb[k];
            aRa[k] += gRh * h[k];
            aRb[k] += gRt * t[k];
        } else if (scorer == KGE_INTERHT) {
            gH[k] += gRh * (tx[k] + 1.0);
            gT[k] += gRt * (hx[k] + 1.0);
            gTx[k] += gRh * h[k];
            gHx[k] += gRt * t[k];
        } else {
            gH[k] += gRh * (tx[k] + 1.0) + gRr * ra[k];
            gT[k] += gRt * (hx[k] + 1.0) + gRr * rb[k];
            gTx[k] += gRh * h[k];
            gHx[k] += gRt * t[k];
            aRa[k] += gRr * h[k];
            aRb[k] += gRr * t[k];
        }
        aR[k] += gRr;
    }
}

#define ROW(base, i) ((base) ? (base) + (ptrdiff_t)(i) * d : NULL)

typedef struct {
    const double *ent, *ent_aux, *rel, *rel_head, *rel_tail;
    double *g_ent, *g_ent_aux, *g_rel, *g_rel_head, *g_rel_tail;
} kge_tables;

KGE_INLINE double kge_loss_grad_impl(
    int scorer, int p, ptrdiff_t d, const kge_tables *tb,
    ptrdiff_t B, ptrdiff_t n,
    const int64_t *heads, const int64_t *rels, const int64_t *tails,
    const int64_t *negs, const uint8_t *corrupt_head,
    double gamma, int self_adversarial, double adv_temperature,
    double dropout_rate, uint32_t key_lo, uint32_t key_hi, int *status)
{
    const ptrdiff_t J = n + 1;
    const int drop = dropout_rate > 0.0;
    const double scale = drop ? 1.0 / (1.0 - dropout_rate) : 1.0;
    double th = dropout_rate * 4294967296.0 + 0.5;
    const uint32_t thr = (uint32_t)(th < 4294967295.0 ? th : 4294967295.0);
    const ptrdiff_t Jd = J * d;
    const ptrdiff_t big = d > J ? d : J;

    double *res = malloc(sizeof(double) * Jd);
    double *M1 = malloc(sizeof(double) * Jd);
    double *M2 = malloc(sizeof(double) * Jd);
    double *M3 = malloc(sizeof(double) * Jd);
    double *Rh = malloc(sizeof(double) * d);
    double *Rt = malloc(sizeof(double) * d);
    double *Rr = malloc(sizeof(double) * d);
    double *tmp = malloc(sizeof(double) * big);
    double *dist = malloc(sizeof(double) * J);
    double *coef = malloc(sizeof(double) * J);
    double *w = malloc(sizeof(double) * (n > 0 ? n : 1));
    double *per = malloc(sizeof(double) * (B > 0 ? B : 1));
    double *acc = calloc(5 * d, sizeof(double));
    if (!(res && M1 && M2 && M3 && Rh && Rt && Rr && tmp && dist && coef && w && per && acc)) {
        *status = -1;
        free(res); free(M1); free(M2); free(M3); free(Rh); free(Rt); free(Rr);
        free(tmp); free(dist); free(coef); free(w); free(per); free(acc);
        return 0.0;
    }
    double *accF = acc, *accFx = acc + d, *accR = acc + 2 * d, *accRa = acc + 3 * d, *accRb = acc + 4 * d;
    if (!drop) {
        for (ptrdiff_t i = 0; i < Jd; i++) {
            M1[i] = 1.0; M2[i] = 1.0; M3[i] = 1.0;
        }
    }

    for (ptrdiff_t b = 0; b < B; b++) {
        const int64_t ri = rels[b];
        const int ch = corrupt_head[b] != 0;
        const int64_t fixed = ch ? tails[b] : heads[b];
        const double *r = ROW(tb->rel, ri), *ra = ROW(tb->rel_head, ri), *rb = ROW(tb->rel_tail, ri);
        const double *f = ROW(tb->ent, fixed), *fx = ROW(tb->ent_aux, fixed);

        if (drop) {
            const uint32_t base = (uint32_t)(b * Jd);
            for (ptrdiff_t i = 0; i < Jd; i++) {
                uint32_t c = base + (uint32_t)i;
                M1[i] = kge_hash(key_lo, key_hi, c, 0) >= thr ? scale : 0.0;
                M2[i] = kge_hash(key_lo, key_hi, c, 1) >= thr ? scale : 0.0;
                M3[i] = kge_hash(key_lo, key_hi, c, 2) >= thr ? scale : 0.0;
            }
        }

        for (ptrdiff_t j = 0; j < J; j++) {
            int64_t v = j == 0 ? (ch ? heads[b] : tails[b]) : negs[b * n + j - 1];
            const double *vv = ROW(tb->ent, v), *vx = ROW(tb->ent_aux, v);
            const double *h = ch ? vv : f, *hx = ch ? vx : fx;
            const double *t = ch ? f : vv, *tx = ch ? fx : vx;
            double *rj = res + j * d;
            const double *m1 = M1 + j * d, *m2 = M2 + j * d, *m3 = M3 + j * d;
            kge_parts(scorer, d, h, hx, t, tx, r, ra, rb, Rh, Rt, Rr);
            for (ptrdiff_t k = 0; k < d; k++)
                rj[k] = (Rh[k] * m1[k] - Rt[k] * m2[k]) + Rr[k] * m3[k];
            dist[j] = kge_norm(rj, tmp, d, p);
        }

        if (self_adversarial) {
            double mx = -adv_temperature * dist[1];
            for (ptrdiff_t j = 2; j < J; j++) {
                double x = -adv_temperature * dist[j];
                if (x > mx)
                    mx = x;
            }
            for (ptrdiff_t j = 1; j < J; j++)
                w[j - 1] = exp(-adv_temperature * dist[j] - mx);
            double s = kge_pairwise_sum(w, n);
            for (ptrdiff_t i = 0; i < n; i++)
                w[i] = w[i] / s;
        } else {
            for (ptrdiff_t i = 0; i < n; i++)
                w[i] = 1.0 / (double)n;
        }
        for (ptrdiff_t i = 0; i < n; i++)
            tmp[i] = w[i] * kge_log1pexp(gamma - dist[i + 1]);
        per[b] = kge_log1pexp(dist[0] - gamma) + kge_pairwise_sum(tmp, n);
        coef[0] = kge_sigmoid(dist[0] - gamma) / (double)B;
        for (ptrdiff_t j = 1; j < J; j++)
            coef[j] = (-w[j - 1] * kge_sigmoid(gamma - dist[j])) / (double)B;

        memset(acc, 0, sizeof(double) * 5 * d);
        for (ptrdiff_t j = 0; j < J; j++) {
            int64_t v = j == 0 ? (ch ? heads[b] : tails[b]) : negs[b * n + j - 1];
            const double *vv = ROW(tb->ent, v), *vx = ROW(tb->ent_aux, v);
            double *gv = ROW(tb->g_ent, v), *gvx = ROW(tb->g_ent_aux, v);
            const double *h = ch ? vv : f, *hx = ch ? vx : fx;
            const double *t = ch ? f : vv, *tx = ch ? fx : vx;
            /* the corrupted slot writes straight into the table, the fixed one into accumulators */
            kge_backward_row(scorer, p, d, dist[j] > 0.0 || p == 1 ? coef[j] : 0.0,
                             dist[j] > 0.0 ? dist[j] : 1.0, res + j * d,
                             M1 + j * d, M2 + j * d, M3 + j * d, h, hx, t, tx, ra, rb,
                             ch ? gv : accF, ch ? accF : gv, ch ? gvx : accFx, ch ? accFx : gvx,
                             accR, accRa, accRb);
        }
        {
            double *gf = ROW(tb->g_ent, fixed), *gfx = ROW(tb->g_ent_aux, fixed);
            double *gr = ROW(tb->g_rel, ri), *gra = ROW(tb->g_rel_head, ri), *grb = ROW(tb->g_rel_tail, ri);
            for (ptrdiff_t k = 0; k < d; k++) {
                gf[k] += accF[k];
                gr[k] += accR[k];
            }
            if (scorer == KGE_INTERHT || scorer == KGE_TRANS)
                for (ptrdiff_t k = 0; k < d; k++)
                    gfx[k] += accFx[k];
            if (scorer == KGE_TRANS || scorer == KGE_TRIPLERE)
                for (ptrdiff_t k = 0; k < d; k++) {
                    gra[k] += accRa[k];
                    grb[k] += accRb[k];
                }
        }
    }
    double loss = kge_pairwise_sum(per, B) / (double)B;
    free(res); free(M1); free(M2); free(M3); free(Rh); free(Rt); free(Rr);
    free(tmp); free(dist); free(coef); free(w); free(per); free(acc);
    *status = 0;
    return loss;
}

static double kge_loss_grad(
    int scorer, int p, ptrdiff_t d, const kge_tables *tb,
    ptrdiff_t B, ptrdiff_t n,
    const int64_t *heads, const int64_t *rels, const int64_t *tails,
    const int64_t *negs, const uint8_t *corrupt_head,
    double gamma, int self_adversarial, double adv_temperature,
    double dropout_rate, uint32_t key_lo, uint32_t key_hi, int *status)
{
#define KGE_CALL(S, P) kge_loss_grad_impl(S, P, d, tb, B, n, heads, rels, tails, negs, corrupt_head, \
                                          gamma, self_adversarial, adv_temperature, dropout_rate, \
                                          key_lo, key_hi, status)
    switch (scorer * 2 + (p == 2)) {
    case 0: return KGE_CALL(KGE_TRANSE, 1);
    case 1: return KGE_CALL(KGE_TRANSE, 2);
    case 2: return KGE_CALL(KGE_INTERHT, 1);
    case 3: return KGE_CALL(KGE_INTERHT, 2);
    case 4: return KGE_CALL(KGE_TRANS, 1);
    case 5: return KGE_CALL(KGE_TRANS, 2);
    case 6: return KGE_CALL(KGE_TRIPLERE, 1);
    default: return KGE_CALL(KGE_TRIPLERE, 2);
    }
#undef KGE_CALL
}

KGE_INLINE void kge_score_impl(int scorer, int p, ptrdiff_t d, const kge_tables *tb,
                               ptrdiff_t Q, ptrdiff_t C,
                               const int64_t *heads, const int64_t *rels, const int64_t *tails,
                               const int64_t *cands, const uint8_t *corrupt_head,
                               double *res, double *tmp, double *out)
{
    for (ptrdiff_t q = 0; q < Q; q++) {
        const int64_t ri = rels[q];
        const double *r = ROW(tb->rel, ri), *ra = ROW(tb->rel_head, ri), *rb = ROW(tb->rel_tail, ri);
        for (ptrdiff_t c = 0; c < C; c++) {
            int64_t hi = heads[q], ti = tails[q];
            if (corrupt_head[q])
                hi = cands[q * C + c];
            else
                ti = cands[q * C + c];
            kge_residual(scorer, d, ROW(tb->ent, hi), ROW(tb->ent_aux, hi), ROW(tb->ent, ti),
                         ROW(tb->ent_aux, ti), r, ra, rb, res);
            out[q * C + c] = -kge_norm(res, tmp, d, p);
        }
    }
}

static int kge_score(int scorer, int p, ptrdiff_t d, const kge_tables *tb, ptrdiff_t Q, ptrdiff_t C,
                     const int64_t *heads, const int64_t *rels, const int64_t *tails,
                     const int64_t *cands, const uint8_t *corrupt_head, double *out)
{
    double *res = malloc(sizeof(double) * (d > 0 ? d : 1));
    double *tmp = malloc(sizeof(double) * (d > 0 ? d : 1));
    if (!(res && tmp)) {
        free(res); free(tmp);
        return -1;
    }
#define KGE_SCORE(S, P) kge_score_impl(S, P, d, tb, Q, C, heads, rels, tails, cands, corrupt_head, res, tmp, out)
    switch (scorer * 2 + (p == 2)) {
    case 0: KGE_SCORE(KGE_TRANSE, 1); break;
    case 1: KGE_SCORE(KGE_TRANSE, 2); break;
    case 2: KGE_SCORE(KGE_INTERHT, 1); break;
    case 3: KGE_SCORE(KGE_INTERHT, 2); break;
    case 4: KGE_SCORE(KGE_TRANS, 1); break;
    case 5: KGE_SCORE(KGE_TRANS, 2); break;
    case 6: KGE_SCORE(KGE_TRIPLERE, 1); break;
    default: KGE_SCORE(KGE_TRIPLERE, 2); break;
    }
#undef KGE_SCORE
    free(res); free(tmp);
    return 0;
}

#undef ROW
#endif
