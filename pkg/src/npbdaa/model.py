"""HDP-HLM state, prior sampling and forward simulation.

Words are latent super states; each word expands into a fixed sequence of
letters, and each letter emits a Gaussian frame for a Poisson-distributed
number of frames.  Indices are 0-based throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .primitives import (
    GammaParams,
    NiwParams,
    sample_categorical_log,
    sample_dirichlet,
    sample_gamma,
    sample_niw,
    truncated_poisson_logpmf,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Hyperparameters:
    gamma_lm: float = 10.0
    alpha_lm: float = 10.0
    gamma_wm: float = 10.0
    alpha_wm: float = 10.0
    n_words_max: int = 6
    n_letters_max: int = 7
    duration_prior: GammaParams = field(default_factory=lambda: GammaParams(50.0, 10.0))
    emission_prior: NiwParams = field(
        default_factory=lambda: NiwParams(np.zeros(1), 0.01, 1.0, np.eye(1)))
    word_len_max: int = 8
    d_max_letter: int | None = None
    d_max_word: int | None = None

    def __post_init__(self):
        if self.d_max_letter is None:
            object.__setattr__(self, "d_max_letter",
                               max(1, int(round(4 * self.duration_prior.mean))))
        if self.d_max_word is None:
            object.__setattr__(self, "d_max_word", self.word_len_max * self.d_max_letter)
        for name in ("gamma_lm", "alpha_lm", "gamma_wm", "alpha_wm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("n_words_max", "n_letters_max", "word_len_max", "d_max_letter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.d_max_word < self.d_max_letter:
            raise ValueError("d_max_word must be >= d_max_letter")

    @property
    def dim(self) -> int:
        return self.emission_prior.dim


@dataclass(frozen=True)
class LetterParams:
    mean: np.ndarray
    cov: np.ndarray
    omega: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if not self.omega > 0:
            raise ValueError("omega must be positive")

    def log_density(self, frames: np.ndarray) -> np.ndarray:
        """Per-frame Gaussian log density; raises FloatingPointError for a non-PD covariance."""
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError("emission covariance is not positive definite") from exc
        diff = np.atleast_2d(frames) - self.mean
        sol = np.linalg.solve(chol, diff.T)
        D = self.mean.shape[0]
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (D * LOG_2PI + logdet + np.sum(sol * sol, axis=0))


@dataclass(frozen=True)
class WordInventory:
    words: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "words", tuple(tuple(int(c) for c in w) for w in self.words))
        if any(len(w) == 0 for w in self.words):
            raise ValueError("words must contain at least one letter")

    def __len__(self):
        return len(self.words)

    def __getitem__(self, i) -> tuple[int, ...]:
        return self.words[i]

    @property
    def lengths(self) -> list[int]:
        return [len(w) for w in self.words]


@dataclass(frozen=True)
class TransitionModel:
    """Weak-limit language-model and word-model transition parameters.

    ``pi_lm`` is the word bigram actually used by the sampler (self transitions
    removed); ``pi_lm_full`` keeps the underlying Dirichlet rows including the
    diagonal, which the auxiliary-variable resampling of ``beta_lm`` needs.
    """

    beta_lm: np.ndarray
    pi_lm: np.ndarray
    pi_lm_full: np.ndarray
    pi_lm_initial: np.ndarray
    beta_wm: np.ndarray
    pi_wm: np.ndarray
    pi_wm_initial: np.ndarray


@dataclass(frozen=True)
class ModelState:
    transitions: TransitionModel
    inventory: WordInventory
    letters: tuple[LetterParams, ...]
    hyper: Hyperparameters

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple(self.letters))

    @property
    def n_words(self) -> int:
        return len(self.inventory)

    @property
    def n_letters(self) -> int:
        return len(self.letters)

    def log_duration_table(self) -> np.ndarray:
        """(n_letters, d_max_letter + 1) truncated-Poisson log pmf per letter."""
        return np.stack([truncated_poisson_logpmf(lp.omega, self.hyper.d_max_letter)
                         for lp in self.letters])

    def word_log_prior(self, word: Sequence[int]) -> float:
        """log P(w): uniform length times the letter bigram chain."""
        tr = self.transitions
        with np.errstate(divide="ignore"):
            lp = -np.log(self.hyper.word_len_max) + np.log(tr.pi_wm_initial[word[0]])
            for a, b in zip(word[:-1], word[1:]):
                lp += np.log(tr.pi_wm[a, b])
        return float(lp)

    def with_(self, **changes) -> "ModelState":
        return replace(self, **changes)


@dataclass(frozen=True)
class FeatureSequence:
    frames: np.ndarray
    frame_rate: float = 100.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim == 1:
            frames = frames[:, None]
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError("frames must be a nonempty T x D matrix")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames must be finite")
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class Segmentation:
    """Word sequence with per-word letter plans for one feature sequence."""

    word_ids: tuple[int, ...]
    word_durations: tuple[int, ...]
    letter_ids: tuple[tuple[int, ...], ...]
    letter_durations: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "word_ids", tuple(int(z) for z in self.word_ids))
        object.__setattr__(self, "word_durations", tuple(int(d) for d in self.word_durations))
        object.__setattr__(self, "letter_ids",
                           tuple(tuple(int(c) for c in w) for w in self.letter_ids))
        object.__setattr__(self, "letter_durations",
                           tuple(tuple(int(c) for c in w) for w in self.letter_durations))
        n = len(self.word_ids)
        if not (len(self.word_durations) == len(self.letter_ids) == len(self.letter_durations) == n):
            raise ValueError("segmentation fields have inconsistent lengths")
        for D, ls, ds in zip(self.word_durations, self.letter_ids, self.letter_durations):
            if len(ls) != len(ds) or len(ls) == 0:
                raise ValueError("letter plan must pair each letter with a duration")
            if min(ds) < 1 or sum(ds) != D:
                raise ValueError("letter durations must be >= 1 and sum to the word duration")

    @property
    def T(self) -> int:
        return sum(self.word_durations)

    @property
    def word_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.word_durations)[:-1]]).astype(int)

    @property
    def boundaries(self) -> list[list[tuple[int, int]]]:
        """Inclusive (start, end) frame of every letter, grouped by word."""
        out, t = [], 0
        for ds in self.letter_durations:
            spans = []
            for d in ds:
                spans.append((t, t + d - 1))
                t += d
            out.append(spans)
        return out

    @property
    def frame_letter_labels(self) -> np.ndarray:
        return np.repeat(np.concatenate([np.asarray(l, dtype=int) for l in self.letter_ids]),
                         np.concatenate([np.asarray(d, dtype=int) for d in self.letter_durations]))

    @property
    def frame_word_labels(self) -> np.ndarray:
        return np.repeat(np.asarray(self.word_ids, dtype=int),
                         np.asarray(self.word_durations, dtype=int))

    def check_against(self, model: ModelState, T: int | None = None) -> None:
        if T is not None and self.T != T:
            raise ValueError(f"segmentation covers {self.T} frames, sequence has {T}")
        for z, ls in zip(self.word_ids, self.letter_ids):
            if not 0 <= z < model.n_words:
                raise ValueError(f"word id {z} out of range")
            if ls != model.inventory[z]:
                raise ValueError(f"letter plan {ls} does not match inventory word {z}")


def _without_self_transitions(full: np.ndarray) -> np.ndarray:
    n = full.shape[0]
    if n == 1:
        return np.ones((1, 1))
    out = full.copy()
    np.fill_diagonal(out, 0.0)
    return out / out.sum(axis=1, keepdims=True)


def _draw_rows(alpha: float, beta: np.ndarray, n_rows: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([sample_dirichlet(alpha * beta, rng) for _ in range(n_rows)])


def sample_word_from_prior(hyper: Hyperparameters, pi_wm_initial: np.ndarray,
                           pi_wm: np.ndarray, rng: np.random.Generator) -> tuple[int, ...]:
    L = int(rng.integers(1, hyper.word_len_max + 1))
    with np.errstate(divide="ignore"):
        word = [sample_categorical_log(np.log(pi_wm_initial), rng)]
        for _ in range(L - 1):
            word.append(sample_categorical_log(np.log(pi_wm[word[-1]]), rng))
    return tuple(word)


def sample_letter_from_prior(hyper: Hyperparameters, rng: np.random.Generator) -> LetterParams:
    mean, cov = sample_niw(hyper.emission_prior, rng)
    return LetterParams(mean, cov, sample_gamma(hyper.duration_prior, rng))


def sample_model_from_prior(hyper: Hyperparameters, rng: np.random.Generator) -> ModelState:
    N, J = hyper.n_words_max, hyper.n_letters_max
    beta_lm = sample_dirichlet(np.full(N, hyper.gamma_lm / N), rng)
    pi_lm_full = _draw_rows(hyper.alpha_lm, beta_lm, N, rng)
    pi_lm_initial = sample_dirichlet(hyper.alpha_lm * beta_lm, rng)
    beta_wm = sample_dirichlet(np.full(J, hyper.gamma_wm / J), rng)
    pi_wm = _draw_rows(hyper.alpha_wm, beta_wm, J, rng)
    pi_wm_initial = sample_dirichlet(hyper.alpha_wm * beta_wm, rng)
    transitions = TransitionModel(beta_lm, _without_self_transitions(pi_lm_full), pi_lm_full,
                                  pi_lm_initial, beta_wm, pi_wm, pi_wm_initial)
    words = [sample_word_from_prior(hyper, pi_wm_initial, pi_wm, rng) for _ in range(N)]
    letters = [sample_letter_from_prior(hyper, rng) for _ in range(J)]
    return ModelState(transitions, WordInventory(words), tuple(letters), hyper)


def sample_word_ids(model: ModelState, n: int, rng: np.random.Generator) -> list[int]:
    """A length-``n`` word chain from the language model (initial row, then pi_lm)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    tr = model.transitions
    cum_init = np.cumsum(tr.pi_lm_initial)
    cum_rows = np.cumsum(tr.pi_lm, axis=1)
    u = rng.random(n)
    z = [min(int(np.searchsorted(cum_init, u[0] * cum_init[-1], side="right")), model.n_words - 1)]
    for k in range(1, n):
        row = cum_rows[z[-1]]
        z.append(min(int(np.searchsorted(row, u[k] * row[-1], side="right")), model.n_words - 1))
    return z


def sample_letter_durations(omegas: Sequence[float], d_max_letter: int,
                            rng: np.random.Generator) -> list[int]:
    return [sample_categorical_log(truncated_poisson_logpmf(w, d_max_letter), rng)
            for w in omegas]


def generate_sequence(model: ModelState, word_id_sequence: Sequence[int],
                      rng: np.random.Generator) -> tuple[FeatureSequence, Segmentation]:
    """Simulate frames for a given word sequence; returns observations and ground truth."""
    if len(word_id_sequence) == 0:
        raise ValueError("word sequence must be nonempty")
    hyper = model.hyper
    chunks, letter_ids, letter_durs = [], [], []
    for z in word_id_sequence:
        if not 0 <= z < model.n_words:
            raise ValueError(f"word id {z} out of range")
        word = model.inventory[z]
        omegas = [model.letters[j].omega for j in word]
        while True:
            durs = sample_letter_durations(omegas, hyper.d_max_letter, rng)
            if sum(durs) <= hyper.d_max_word:
                break
        for j, d in zip(word, durs):
            lp = model.letters[j]
            chunks.append(rng.multivariate_normal(lp.mean, lp.cov, size=d))
        letter_ids.append(word)
        letter_durs.append(tuple(durs))
    seg = Segmentation(tuple(word_id_sequence), tuple(sum(d) for d in letter_durs),
                       tuple(letter_ids), tuple(letter_durs))
    return FeatureSequence(np.concatenate(chunks)), seg


EXPERIMENT1_WORDS = ((0, 2, 4), (2, 1), (3, 0, 4, 1), (0, 4))


def experiment1_word_sequences(rng: np.random.Generator) -> list[tuple[int, ...]]:
    """All 16 ordered word pairs followed by 4 random three-word sentences."""
    n = len(EXPERIMENT1_WORDS)
    pairs = list(itertools.product(range(n), repeat=2))
    triples = [tuple(int(x) for x in rng.integers(0, n, size=3)) for _ in range(4)]
    return pairs + triples


def make_experiment1_dataset(sigma2: float, rng: np.random.Generator,
                             d_max_letter: int = 20):
    """Synthetic double-articulation data: 5 letters with means 5, 10, .., 25 and 4 words.

    Letter ``j`` (0-based) has mean ``5 * (j + 1)``.  Letter duration rates are
    drawn from Gamma(50, 10).  Returns ``(sequences, segmentations, truth)``
    with 40 sequences (20 word sequences, two observations each).
    """
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    n_letters, n_words = 5, len(EXPERIMENT1_WORDS)
    duration_prior = GammaParams(50.0, 10.0)
    hyper = Hyperparameters(n_words_max=n_words, n_letters_max=n_letters, word_len_max=4,
                            duration_prior=duration_prior, d_max_letter=d_max_letter)
    letters = tuple(
        LetterParams(np.array([5.0 * (j + 1)]), np.array([[sigma2]]),
                     sample_gamma(duration_prior, rng))
        for j in range(n_letters))
    # Nominal transitions: word sequences are fixed by design, not sampled.
    uniform_w = np.full((n_words, n_words), 1.0 / n_words)
    uniform_l = np.full((n_letters, n_letters), 1.0 / n_letters)
    transitions = TransitionModel(
        np.full(n_words, 1.0 / n_words), uniform_w, uniform_w, np.full(n_words, 1.0 / n_words),
        np.full(n_letters, 1.0 / n_letters), uniform_l, np.full(n_letters, 1.0 / n_letters))
    truth = ModelState(transitions, WordInventory(EXPERIMENT1_WORDS), letters, hyper)
    sequences, segs = [], []
    for words in experiment1_word_sequences(rng):
        for _ in range(2):
            seq, seg = generate_sequence(truth, words, rng)
            sequences.append(seq)
            segs.append(seg)
    return sequences, segs, truth


def joint_log_likelihood(model: ModelState, dataset: Sequence[FeatureSequence],
                         segmentations: Sequence[Segmentation]) -> float:
    """log P(words, durations, frames | model) summed over sequences."""
    if len(dataset) != len(segmentations):
        raise ValueError("dataset and segmentations differ in length")
    tr = model.transitions
    logdur = model.log_duration_table()
    per_sequence = []
    with np.errstate(divide="ignore"):
        log_init = np.log(tr.pi_lm_initial)
        log_trans = np.log(tr.pi_lm)
        for seq, seg in zip(dataset, segmentations):
            seg.check_against(model, seq.T)
            lp = log_init[seg.word_ids[0]]
            for a, b in zip(seg.word_ids[:-1], seg.word_ids[1:]):
                lp += log_trans[a, b]
            for ls, ds in zip(seg.letter_ids, seg.letter_durations):
                for j, d in zip(ls, ds):
                    lp += logdur[j, d] if d < logdur.shape[1] else -np.inf
            labels = seg.frame_letter_labels
            for j in np.unique(labels):
                lp += model.letters[j].log_density(seq.frames[labels == j]).sum()
            per_sequence.append(float(lp))
    # fsum makes the total independent of dataset order
    return math.fsum(per_sequence)
