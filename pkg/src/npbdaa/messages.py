"""Backward filtering over latent words and the in-word letter DP.

The likelihood of a word occupying a window sums over every way of splitting
the window among the word's letters; it is computed by a forward recursion
over (frame offset, letters finished).  Word-level backward messages then
marginalize word durations exactly as in an explicit-duration HSMM.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .model import FeatureSequence, LetterParams, ModelState
from .primitives import log_sum_exp


class SizeLimitError(ValueError):
    """Instance too large for exhaustive enumeration."""


def cache_emissions(seq: FeatureSequence, letters: Sequence[LetterParams]) -> np.ndarray:
    """(T, J) table of per-frame log emission densities."""
    if letters and letters[0].mean.shape[0] != seq.dim:
        raise ValueError("letter and feature dimensions differ")
    return np.stack([lp.log_density(seq.frames) for lp in letters], axis=1)


def cumulative(emissions: np.ndarray) -> np.ndarray:
    cum = np.zeros((emissions.shape[0] + 1, emissions.shape[1]))
    np.cumsum(emissions, axis=0, out=cum[1:])
    return cum


def flatten_words(words: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = [len(w) for w in words]
    flat = np.fromiter(itertools.chain.from_iterable(words), dtype=np.int64, count=sum(lengths))
    offsets = np.zeros(len(words) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return flat, offsets


def word_alpha_table(word: Sequence[int], start: int, max_duration: int,
                     emissions: np.ndarray, logdur: np.ndarray) -> np.ndarray:
    """(max_duration + 1, L + 1) forward table of one word anchored at ``start``."""
    T = emissions.shape[0]
    if start < 0 or max_duration < 0 or start + max_duration > T:
        raise ValueError("window exceeds the sequence")
    letters = np.asarray(word, dtype=np.int64)
    alpha = np.empty((max_duration + 1, letters.size + 1))
    cum = cumulative(emissions[start:start + max_duration])
    _kernels.word_alpha(cum, logdur, letters, 0, max_duration, alpha)
    return alpha


def word_log_likelihood(word: Sequence[int], start: int, duration: int,
                        emissions: np.ndarray, model: ModelState) -> float:
    """log P(frames start..start+duration | the word fills exactly that window)."""
    if not 1 <= duration <= model.hyper.d_max_word:
        raise ValueError(f"duration {duration} outside [1, {model.hyper.d_max_word}]")
    if start < 0 or start + duration > emissions.shape[0]:
        raise ValueError("window exceeds the sequence")
    if duration < len(word):
        return -np.inf
    alpha = word_alpha_table(word, start, duration, emissions, model.log_duration_table())
    return float(alpha[duration, len(word)])


@dataclass
class MessageBoard:
    """Backward messages and cached likelihood tables for one sequence.

    ``word_lik[i, a, d]`` is the log likelihood of word ``i`` filling frames
    ``a .. a+d-1``; ``b`` and ``b_star`` have T + 1 rows with ``b[T] = 0``.
    """

    b: np.ndarray
    b_star: np.ndarray
    emissions: np.ndarray
    word_lik: np.ndarray
    log_initial: np.ndarray
    log_trans: np.ndarray

    @property
    def T(self) -> int:
        return self.b.shape[0] - 1

    @property
    def log_evidence(self) -> float:
        return log_sum_exp(self.log_initial + self.b_star[0])

    def word_log_likelihood(self, i: int, start: int, duration: int) -> float:
        if duration >= self.word_lik.shape[2]:
            return -np.inf
        return float(self.word_lik[i, start, duration])


def compute_backward_messages(seq: FeatureSequence, model: ModelState,
                              emissions: np.ndarray | None = None,
                              logdur: np.ndarray | None = None) -> MessageBoard:
    if emissions is None:
        emissions = cache_emissions(seq, model.letters)
    if logdur is None:
        logdur = model.log_duration_table()
    T = seq.T
    d_max = min(model.hyper.d_max_word, T)
    flat, offsets = flatten_words(model.inventory.words)
    W = np.empty((model.n_words, T, d_max + 1))
    _kernels.word_lik_table(cumulative(emissions), logdur, flat, offsets, T, d_max, W)
    tr = model.transitions
    with np.errstate(divide="ignore"):
        log_trans = np.log(tr.pi_lm)
        log_initial = np.log(tr.pi_lm_initial)
    b, b_star = _kernels.backward_messages(W, log_trans, T, d_max)
    return MessageBoard(b, b_star, emissions, W, log_initial, log_trans)


# exhaustive enumeration oracle

BRUTE_FORCE_LIMITS = {"T": 8, "n_words": 3, "d_max_letter": 4}


def _compositions(total: int, parts: int, cap: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        if 1 <= total <= cap:
            yield (total,)
        return
    for first in range(1, min(cap, total - parts + 1) + 1):
        for rest in _compositions(total - first, parts - 1, cap):
            yield (first,) + rest


def enumerate_segmentations(seq: FeatureSequence, model: ModelState,
                            limits: dict | None = None):
    """Yield ``(word_ids, letter_durations, log_prob)`` for every complete labeling.

    Uses scipy densities directly so it shares no code with the message passing.
    """
    limits = {**BRUTE_FORCE_LIMITS, **(limits or {})}
    hyper = model.hyper
    if seq.T > limits["T"] or model.n_words > limits["n_words"] \
            or hyper.d_max_letter > limits["d_max_letter"]:
        raise SizeLimitError(f"instance exceeds brute-force limits {limits}")
    T, dl = seq.T, hyper.d_max_letter
    log_emit = np.array([[stats.multivariate_normal.logpdf(y, lp.mean, lp.cov)
                          for lp in model.letters] for y in seq.frames]).reshape(T, -1)
    support = np.arange(1, dl + 1)
    log_dur = []
    for lp in model.letters:
        pmf = stats.poisson.pmf(support, lp.omega)
        log_dur.append(np.concatenate([[-np.inf], np.log(pmf / pmf.sum())]))
    tr = model.transitions
    with np.errstate(divide="ignore"):
        log_init, log_trans = np.log(tr.pi_lm_initial), np.log(tr.pi_lm)

    def word_terms(i, t, d):
        word = model.inventory[i]
        for parts in _compositions(d, len(word), dl):
            lp, u = 0.0, t
            for j, r in zip(word, parts):
                lp += log_dur[j][r] + log_emit[u:u + r, j].sum()
                u += r
            yield parts, lp

    def rec(t, prev):
        if t == T:
            yield (), (), 0.0
            return
        for i in range(model.n_words):
            lt = log_init[i] if prev is None else log_trans[prev, i]
            if lt == -np.inf:
                continue
            for d in range(1, min(hyper.d_max_word, T - t) + 1):
                for parts, lw in word_terms(i, t, d):
                    for ids, durs, lr in rec(t + d, i):
                        yield (i,) + ids, (parts,) + durs, lt + lw + lr

    yield from rec(0, None)


def brute_force_evidence(seq: FeatureSequence, model: ModelState, limits: dict | None = None) -> float:
    """Exact log evidence by summing over every segmentation."""
    terms = [lp for _, _, lp in enumerate_segmentations(seq, model, limits)]
    if not terms:
        return -math.inf
    return log_sum_exp(terms)
