# Compiled log-space dynamic programs.  Every ``cum`` argument is a cumulative
# emission table: cum[s + d, j] - cum[s, j] is the log density of frames
# [s, s + d) under letter j.  ``logdur[j, d]`` is the log duration pmf (d >= 1).

import math

import numpy as np
from numba import njit

NEG_INF = -np.inf


@njit(cache=True, nogil=True)
def _lse(buf, n):
    m = NEG_INF
    for i in range(n):
        if buf[i] > m:
            m = buf[i]
    if m == NEG_INF:
        return NEG_INF
    s = 0.0
    for i in range(n):
        s += math.exp(buf[i] - m)
    return m + math.log(s)


@njit(cache=True, nogil=True)
def word_alpha(cum, logdur, letters, start, max_dur, alpha):
    """Fill alpha[t, k] = log P(frames start..start+t, first k letters done at t).

    Rows 0..max_dur of ``alpha`` (shape >= (max_dur + 1, L + 1)) are written.
    """
    L = letters.shape[0]
    dl = logdur.shape[1] - 1
    for t in range(max_dur + 1):
        for k in range(L + 1):
            alpha[t, k] = NEG_INF
    alpha[0, 0] = 0.0
    buf = np.empty(dl)
    for k in range(1, L + 1):
        j = letters[k - 1]
        for t in range(k, max_dur + 1):
            hi = min(dl, t - k + 1)
            end = cum[start + t, j]
            for dp in range(1, hi + 1):
                prev = alpha[t - dp, k - 1]
                if prev == NEG_INF:
                    buf[dp - 1] = NEG_INF
                else:
                    buf[dp - 1] = prev + logdur[j, dp] + end - cum[start + t - dp, j]
            alpha[t, k] = _lse(buf, hi)


@njit(cache=True, nogil=True)
def word_lik_table(cum, logdur, words_flat, word_offsets, T, d_max, out):
    """out[i, a, d] = log P(frames a..a+d | word i occupies exactly that window)."""
    n_words = word_offsets.shape[0] - 1
    dl = logdur.shape[1] - 1
    out[:, :, :] = NEG_INF
    for i in range(n_words):
        letters = words_flat[word_offsets[i]:word_offsets[i + 1]]
        L = letters.shape[0]
        alpha = np.empty((d_max + 1, L + 1))
        for a in range(T):
            md = min(d_max, T - a, L * dl)
            if md < L:
                continue
            word_alpha(cum, logdur, letters, a, md, alpha)
            for d in range(L, md + 1):
                out[i, a, d] = alpha[d, L]


@njit(cache=True, nogil=True)
def backward_messages(W, log_trans, T, d_max):
    """Log backward messages over word boundaries.

    b[t, i]: frames t..T given a word i ended at t.  b_star[t, i]: frames
    t..T given word i starts at t.  b[T] = 0.
    """
    n = W.shape[0]
    b = np.full((T + 1, n), NEG_INF)
    b_star = np.full((T + 1, n), NEG_INF)
    b[T, :] = 0.0
    buf = np.empty(max(d_max, n))
    for t in range(T - 1, -1, -1):
        hi = min(d_max, T - t)
        for i in range(n):
            for d in range(1, hi + 1):
                w = W[i, t, d]
                if w == NEG_INF or b[t + d, i] == NEG_INF:
                    buf[d - 1] = NEG_INF
                else:
                    buf[d - 1] = w + b[t + d, i]
            b_star[t, i] = _lse(buf, hi)
        for i in range(n):
            for j in range(n):
                lt = log_trans[i, j]
                if lt == NEG_INF or b_star[t, j] == NEG_INF:
                    buf[j] = NEG_INF
                else:
                    buf[j] = lt + b_star[t, j]
            b[t, i] = _lse(buf, n)
    return b, b_star


@njit(cache=True, nogil=True)
def letter_hsmm_forward(cum, logdur, log_init, log_trans, start, dur, l_max):
    """Forward pass of a letter-level HSMM restricted to one window.

    F[t, k, j]: frames start..start+t emitted by exactly k letters, the last
    being j and ending at t.  H[t, k, j]: frames before t emitted by k - 1
    letters and letter k is j, starting at t.
    """
    J = log_init.shape[0]
    dl = logdur.shape[1] - 1
    F = np.full((dur + 1, l_max + 1, J), NEG_INF)
    H = np.full((dur + 1, l_max + 1, J), NEG_INF)
    for j in range(J):
        H[0, 1, j] = log_init[j]
    buf = np.empty(max(dl, J))
    for t in range(1, dur + 1):
        hi = min(dl, t)
        for k in range(1, l_max + 1):
            for j in range(J):
                end = cum[start + t, j]
                for dp in range(1, hi + 1):
                    h = H[t - dp, k, j]
                    if h == NEG_INF:
                        buf[dp - 1] = NEG_INF
                    else:
                        buf[dp - 1] = h + logdur[j, dp] + end - cum[start + t - dp, j]
                F[t, k, j] = _lse(buf, hi)
        if t < dur:
            for k in range(1, l_max):
                for j in range(J):
                    for jp in range(J):
                        f = F[t, k, jp]
                        lt = log_trans[jp, j]
                        if f == NEG_INF or lt == NEG_INF:
                            buf[jp] = NEG_INF
                        else:
                            buf[jp] = f + lt
                    H[t, k + 1, j] = _lse(buf, J)
    return F, H


@njit(cache=True, nogil=True)
def window_logliks(cum, logdur, cand_flat, cand_offsets, starts, durs):
    """out[c, m] = log P(window m | candidate letter sequence c)."""
    K = cand_offsets.shape[0] - 1
    M = starts.shape[0]
    dl = logdur.shape[1] - 1
    out = np.full((K, M), NEG_INF)
    max_dur = 0
    for m in range(M):
        if durs[m] > max_dur:
            max_dur = durs[m]
    for c in range(K):
        letters = cand_flat[cand_offsets[c]:cand_offsets[c + 1]]
        L = letters.shape[0]
        alpha = np.empty((max_dur + 1, L + 1))
        for m in range(M):
            d = durs[m]
            if d < L or d > L * dl:
                continue
            word_alpha(cum, logdur, letters, starts[m], d, alpha)
            out[c, m] = alpha[d, L]
    return out
