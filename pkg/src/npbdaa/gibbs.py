"""Blocked Gibbs sampler for the HDP-HLM.

One sweep:

1. backward filtering over words and forward sampling of word ids/durations,
   per sequence;
2. sampling-importance-resampling of each word's letter sequence;
3. letter-duration plans for every word occurrence, conditioned on the
   (new) inventory word;
4. conjugate updates of the letter emission/duration parameters;
5. language-model and word-model transition updates.

All randomness comes from streams derived from ``(seed, iteration, stage,
index)`` so a run resumed from a snapshot reproduces an uninterrupted run.
"""

from __future__ import annotations

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .evaluation import dataset_ari
from .messages import MessageBoard, compute_backward_messages, flatten_words
from .model import (
    FeatureSequence,
    Hyperparameters,
    LetterParams,
    ModelState,
    Segmentation,
    TransitionModel,
    WordInventory,
    _without_self_transitions,
    joint_log_likelihood,
    sample_letter_from_prior,
    sample_model_from_prior,
    sample_word_from_prior,
)
from .primitives import (
    DegenerateDistributionError,
    GaussianStats,
    gamma_poisson_posterior,
    log_sum_exp,
    niw_posterior,
    sample_categorical_log,
    sample_crt,
    sample_dirichlet,
    sample_gamma,
    sample_niw,
)

log = logging.getLogger(__name__)

Window = tuple[int, int, int]  # (sequence index, start frame, duration)

# random segmentations tried per sequence before falling back to a prior draw
INIT_ATTEMPTS = 50


class ResampleError(RuntimeError):
    """Forward sampling hit a conditional with no mass."""


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 100
    seed: int = 0
    sir_candidates_per_occurrence: int = 1
    trial_count: int = 1
    record_every: int = 1
    init: str = "random"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.sir_candidates_per_occurrence < 1:
            raise ValueError("sir_candidates_per_occurrence must be >= 1")
        if self.trial_count < 1 or self.record_every < 1:
            raise ValueError("trial_count and record_every must be >= 1")
        if self.init not in ("random", "prior"):
            raise ValueError("init must be 'random' or 'prior'")


@dataclass
class GibbsTrace:
    iteration: list[int] = field(default_factory=list)
    log_likelihood: list[float] = field(default_factory=list)
    letter_ari: list[float | None] = field(default_factory=list)
    word_ari: list[float | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, iteration, ll, letter_ari, word_ari, seconds):
        self.iteration.append(iteration)
        self.log_likelihood.append(ll)
        self.letter_ari.append(letter_ari)
        self.word_ari.append(word_ari)
        self.seconds.append(seconds)

    def __len__(self):
        return len(self.iteration)


def derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


class _Frames:
    """All sequences' log emissions laid out in one array.

    Sequence m occupies rows ``base[m] .. base[m] + T_m`` of ``cum`` with its
    own cumulative sum starting at zero, so windows from different sequences
    can be scored in one compiled call without losing precision.
    """

    def __init__(self, dataset: Sequence[FeatureSequence]):
        self.lengths = np.array([s.T for s in dataset], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        self.base = self.offsets[:-1] + np.arange(len(dataset))
        self.frames = np.concatenate([s.frames for s in dataset])

    def update(self, letters: Sequence[LetterParams]):
        self.emissions = np.stack([lp.log_density(self.frames) for lp in letters], axis=1)
        J = self.emissions.shape[1]
        self.cum = np.zeros((self.frames.shape[0] + len(self.lengths), J))
        for m, (o, T) in enumerate(zip(self.offsets[:-1], self.lengths)):
            b = self.base[m]
            np.cumsum(self.emissions[o:o + T], axis=0, out=self.cum[b + 1:b + T + 1])
        return self

    def seq_emissions(self, m: int) -> np.ndarray:
        return self.emissions[self.offsets[m]:self.offsets[m + 1]]

    def seq_cum(self, m: int) -> np.ndarray:
        return self.cum[self.base[m]:self.base[m] + self.lengths[m] + 1]

    def window_start(self, w: Window) -> int:
        return int(self.base[w[0]] + w[1])


# word-level forward sampling

def forward_sample_words(seq: FeatureSequence, board: MessageBoard, model: ModelState,
                         rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Sample word ids and durations left to right from exact conditionals."""
    T = board.T
    d_max = board.word_lik.shape[2] - 1
    word_ids, durations = [], []
    t, prev = 0, None
    while t < T:
        log_prior = board.log_initial if prev is None else board.log_trans[prev]
        weights = log_prior + board.b_star[t]
        try:
            i = sample_categorical_log(weights, rng)
        except DegenerateDistributionError as exc:
            raise ResampleError(
                f"no word can start at frame {t} of {T} (previous word {prev})") from exc
        hi = min(d_max, T - t)
        dw = board.word_lik[i, t, 1:hi + 1] + board.b[t + 1:t + hi + 1, i]
        d = 1 + sample_categorical_log(dw, rng)
        word_ids.append(i)
        durations.append(d)
        t += d
        prev = i
    return word_ids, durations


# letter-level sampling within one word window

def _sample_partition(cum: np.ndarray, logdur: np.ndarray, word: Sequence[int],
                      start: int, duration: int, rng: np.random.Generator) -> tuple[int, ...]:
    letters = np.asarray(word, dtype=np.int64)
    L = letters.size
    dl = logdur.shape[1] - 1
    if duration < L or duration > L * dl:
        raise ValueError(f"word of {L} letters cannot fill {duration} frames")
    alpha = np.empty((duration + 1, L + 1))
    _kernels.word_alpha(cum, logdur, letters, start, duration, alpha)
    if alpha[duration, L] == -np.inf:
        raise ValueError("window has zero likelihood under this word")
    durs = [0] * L
    t = duration
    for k in range(L, 0, -1):
        j = letters[k - 1]
        hi = min(dl, t - k + 1)
        dps = np.arange(1, hi + 1)
        w = (alpha[t - dps, k - 1] + logdur[j, dps]
             + cum[start + t, j] - cum[start + t - dps, j])
        dp = int(dps[sample_categorical_log(w, rng)])
        durs[k - 1] = dp
        t -= dp
    return tuple(durs)


def sample_letter_plan(window_emissions: np.ndarray, word: Sequence[int], logdur: np.ndarray,
                       rng: np.random.Generator) -> tuple[int, ...]:
    """Letter durations for ``word`` filling the window, from their exact posterior."""
    cum = np.zeros((window_emissions.shape[0] + 1, window_emissions.shape[1]))
    np.cumsum(window_emissions, axis=0, out=cum[1:])
    return _sample_partition(cum, logdur, word, 0, window_emissions.shape[0], rng)


def sample_word_proposal(cum: np.ndarray, logdur: np.ndarray, model: ModelState,
                         start: int, duration: int, rng: np.random.Generator):
    """Draw a letter sequence from P(w | window) with letter identities free.

    Returns ``(word, letter_durations, log_evidence, log_proposal)`` where
    ``log_evidence`` is log P(window) and ``log_proposal`` is log P(w | window).
    """
    tr = model.transitions
    l_max = min(model.hyper.word_len_max, duration)
    with np.errstate(divide="ignore"):
        log_init = np.log(tr.pi_wm_initial)
        log_trans = np.log(tr.pi_wm)
    F, H = _kernels.letter_hsmm_forward(cum, logdur, log_init, log_trans, start, duration, l_max)
    log_len = -np.log(model.hyper.word_len_max)
    final = F[duration, 1:, :]
    log_evidence = log_sum_exp(final) + log_len
    if log_evidence == -np.inf:
        raise DegenerateDistributionError("window has zero likelihood under every letter sequence")
    dl = logdur.shape[1] - 1
    J = log_init.size
    flat = sample_categorical_log(final.ravel(), rng)
    k, j = divmod(flat, J)
    k += 1
    t = duration
    word, durs = [], []
    while True:
        hi = min(dl, t)
        dps = np.arange(1, hi + 1)
        w = (H[t - dps, k, j] + logdur[j, dps]
             + cum[start + t, j] - cum[start + t - dps, j])
        dp = int(dps[sample_categorical_log(w, rng)])
        word.append(int(j))
        durs.append(dp)
        t -= dp
        k -= 1
        if k == 0:
            break
        j = sample_categorical_log(F[t, k, :] + log_trans[:, j], rng)
    word.reverse()
    durs.reverse()
    log_lik = _kernels.window_logliks(cum, logdur, *flatten_words([word]),
                                      np.array([start], dtype=np.int64),
                                      np.array([duration], dtype=np.int64))[0, 0]
    log_proposal = model.word_log_prior(word) + log_lik - log_evidence
    return tuple(word), tuple(durs), log_evidence, log_proposal


# word inventory

def _sir_select(model, cum, logdur, starts, durs, current, n_cand, rng):
    cands, log_ev, log_prop = [], [], []
    for m in range(len(starts)):
        for _ in range(n_cand):
            w, _, ev, lq = sample_word_proposal(cum, logdur, model, int(starts[m]),
                                                int(durs[m]), rng)
            cands.append(w)
            log_ev.append(ev)
            log_prop.append(lq)
    source = np.repeat(np.arange(len(starts)), n_cand)
    ll = _kernels.window_logliks(cum, logdur, *flatten_words(cands), starts, durs)
    total = ll.sum(axis=1)
    # P(y^j) * prod_{i != j} P(y^i | w) for a candidate proposed from occurrence j
    weights = np.array(log_ev) + total - ll[np.arange(len(cands)), source]
    weights[~np.isfinite(total)] = -np.inf
    if np.any(np.isfinite(weights)):
        return cands[sample_categorical_log(weights, rng)]
    if current is not None:
        cur = _kernels.window_logliks(cum, logdur, *flatten_words([current]), starts, durs)
        if np.all(np.isfinite(cur)):
            log.warning("SIR weights degenerate for a word with %d occurrences; keeping %s",
                        len(starts), current)
            return tuple(current)
    log.warning("SIR weights degenerate for a word with %d occurrences; "
                "using the most probable proposal", len(starts))
    return cands[int(np.argmax(log_prop))]


def resample_word_inventory_sir(occurrences: dict[int, list[Window]],
                                dataset: Sequence[FeatureSequence], model: ModelState,
                                rng: np.random.Generator, candidates_per_occurrence: int = 1,
                                frames: _Frames | None = None) -> WordInventory:
    """Resample every word's letter sequence given the windows it currently covers."""
    if frames is None:
        frames = _Frames(dataset).update(model.letters)
    logdur = model.log_duration_table()
    tr = model.transitions
    words = []
    for i in range(model.n_words):
        windows = occurrences.get(i, [])
        if not windows:
            words.append(sample_word_from_prior(model.hyper, tr.pi_wm_initial, tr.pi_wm, rng))
            continue
        starts = np.array([frames.window_start(w) for w in windows], dtype=np.int64)
        durs = np.array([w[2] for w in windows], dtype=np.int64)
        words.append(_sir_select(model, frames.cum, logdur, starts, durs, model.inventory[i],
                                 candidates_per_occurrence, rng))
    return WordInventory(words)


# parameter updates

def resample_acoustic_params(segmentations: Sequence[Segmentation],
                             dataset: Sequence[FeatureSequence], hyper: Hyperparameters,
                             rng: np.random.Generator) -> tuple[LetterParams, ...]:
    J, D = hyper.n_letters_max, hyper.dim
    frames = np.concatenate([s.frames for s in dataset])
    labels = np.concatenate([seg.frame_letter_labels for seg in segmentations])
    if labels.size != frames.shape[0]:
        raise ValueError("letter plans do not cover all frames")
    durations = defaultdict(list)
    for seg in segmentations:
        for ls, ds in zip(seg.letter_ids, seg.letter_durations):
            for j, d in zip(ls, ds):
                durations[j].append(d)
    letters = []
    for j in range(J):
        mask = labels == j
        if not mask.any():
            letters.append(sample_letter_from_prior(hyper, rng))
            continue
        post = niw_posterior(hyper.emission_prior, GaussianStats.from_data(frames[mask], D))
        mean, cov = sample_niw(post, rng)
        omega = sample_gamma(gamma_poisson_posterior(hyper.duration_prior, durations[j]), rng)
        letters.append(LetterParams(mean, cov, omega))
    return tuple(letters)


def _transition_counts(sequences, n):
    trans = np.zeros((n, n), dtype=np.int64)
    init = np.zeros(n, dtype=np.int64)
    for s in sequences:
        if len(s) == 0:
            continue
        init[s[0]] += 1
        for a, b in zip(s[:-1], s[1:]):
            trans[a, b] += 1
    return trans, init


def _resample_hdp_rows(trans, init, gamma, alpha, beta_old, rng):
    n = trans.shape[0]
    m = sample_crt(trans, alpha * beta_old[None, :], rng).sum(axis=0)
    m += sample_crt(init, alpha * beta_old, rng)
    beta = sample_dirichlet(gamma / n + m, rng)
    rows = np.stack([sample_dirichlet(alpha * beta + trans[i], rng) for i in range(n)])
    initial = sample_dirichlet(alpha * beta + init, rng)
    return beta, rows, initial


def resample_transition_models(word_sequences: Sequence[Sequence[int]], inventory: WordInventory,
                               hyper: Hyperparameters, rng: np.random.Generator,
                               current: TransitionModel | None = None) -> TransitionModel:
    """Weak-limit HDP updates of the word bigram and the letter bigram.

    Word self transitions are excluded; the diagonal of the underlying
    Dirichlet rows is filled in with geometric auxiliary counts so that the
    global word weights can be resampled with CRT table counts.
    """
    N, J = hyper.n_words_max, hyper.n_letters_max
    trans, init = _transition_counts(word_sequences, N)
    if current is not None:
        beta_lm_old, full_old = current.beta_lm, current.pi_lm_full
    else:
        beta_lm_old, full_old = np.full(N, 1.0 / N), None
    aug = trans.copy()
    if full_old is not None and N > 1:
        for i in range(N):
            leaving = int(trans[i].sum())
            if leaving:
                p_stay = min(full_old[i, i], 1.0 - 1e-12)
                aug[i, i] += rng.negative_binomial(leaving, 1.0 - p_stay)
    beta_lm, full, init_lm = _resample_hdp_rows(aug, init, hyper.gamma_lm, hyper.alpha_lm,
                                                beta_lm_old, rng)
    wtrans, winit = _transition_counts(inventory.words, J)
    beta_wm_old = current.beta_wm if current is not None else np.full(J, 1.0 / J)
    beta_wm, pi_wm, init_wm = _resample_hdp_rows(wtrans, winit, hyper.gamma_wm, hyper.alpha_wm,
                                                 beta_wm_old, rng)
    return TransitionModel(beta_lm, _without_self_transitions(full), full, init_lm,
                           beta_wm, pi_wm, init_wm)


# sweeps

def _plan_segmentations(word_seqs, dur_seqs, inventory, frames, logdur, seed, iteration):
    segs = []
    for m, (z, dz) in enumerate(zip(word_seqs, dur_seqs)):
        rng = derived_rng(seed, iteration, 2, m)
        cum = frames.seq_cum(m)
        starts = np.concatenate([[0], np.cumsum(dz)[:-1]])
        plans = [_sample_partition(cum, logdur, inventory[i], int(a), int(d), rng)
                 for i, a, d in zip(z, starts, dz)]
        segs.append(Segmentation(z, dz, [inventory[i] for i in z], plans))
    return segs


def _update_parameters(segs, dataset, model, seed, iteration):
    hyper = model.hyper
    letters = resample_acoustic_params(segs, dataset, hyper, derived_rng(seed, iteration, 1, 1))
    transitions = resample_transition_models([s.word_ids for s in segs], model.inventory, hyper,
                                             derived_rng(seed, iteration, 1, 2),
                                             current=model.transitions)
    return model.with_(letters=letters, transitions=transitions)


def gibbs_sweep(dataset: Sequence[FeatureSequence], model: ModelState, seed: int,
                iteration: int, candidates_per_occurrence: int = 1):
    """One full sweep; returns the updated model and segmentations."""
    frames = _Frames(dataset).update(model.letters)
    logdur = model.log_duration_table()
    word_seqs, dur_seqs = [], []
    occurrences: dict[int, list[Window]] = defaultdict(list)
    for m, seq in enumerate(dataset):
        try:
            board = compute_backward_messages(seq, model, frames.seq_emissions(m), logdur)
            z, dz = forward_sample_words(seq, board, model, derived_rng(seed, iteration, 0, m))
        except ResampleError as exc:
            raise ResampleError(f"iteration {iteration}, sequence {m}: {exc}") from exc
        word_seqs.append(z)
        dur_seqs.append(dz)
        t = 0
        for i, d in zip(z, dz):
            occurrences[i].append((m, t, d))
            t += d
    inventory = resample_word_inventory_sir(occurrences, dataset, model,
                                            derived_rng(seed, iteration, 1, 0),
                                            candidates_per_occurrence, frames)
    segs = _plan_segmentations(word_seqs, dur_seqs, inventory, frames, logdur, seed, iteration)
    model = _update_parameters(segs, dataset, model.with_(inventory=inventory), seed, iteration)
    return model, segs


def _random_partition(total, parts, cap, rng):
    """Uniform composition of ``total`` into ``parts`` pieces, each <= cap."""
    while True:
        cuts = np.sort(rng.choice(np.arange(1, total), size=parts - 1, replace=False))
        p = np.diff(np.concatenate([[0], cuts, [total]]))
        if p.max() <= cap:
            return tuple(int(x) for x in p)


def _random_words(T, lengths, hyper, mean_word, rng):
    dl = hyper.d_max_letter
    z, dz, t = [], [], 0
    while t < T:
        rest = T - t
        ok = [i for i, L in enumerate(lengths) if L <= rest and (not z or i != z[-1])]
        if not ok:
            # fold the tail into the previous word when it can absorb it
            if z and dz[-1] + rest <= min(lengths[z[-1]] * dl, hyper.d_max_word):
                dz[-1] += rest
                return z, dz
            return None
        i = int(rng.choice(ok))
        L = lengths[i]
        hi = min(L * dl, hyper.d_max_word, rest)
        d = int(np.clip(rng.geometric(1.0 / mean_word), L, hi))
        z.append(i)
        dz.append(d)
        t += d
    return z, dz


def _initial_from_model(dataset, model, seed):
    frames = _Frames(dataset).update(model.letters)
    logdur = model.log_duration_table()
    word_seqs, dur_seqs = [], []
    for m, seq in enumerate(dataset):
        board = compute_backward_messages(seq, model, frames.seq_emissions(m), logdur)
        z, dz = forward_sample_words(seq, board, model, derived_rng(seed, 0, 0, m))
        word_seqs.append(z)
        dur_seqs.append(dz)
    segs = _plan_segmentations(word_seqs, dur_seqs, model.inventory, frames, logdur, seed, 0)
    return _update_parameters(segs, dataset, model, seed, 0), segs


def initialize_state(dataset: Sequence[FeatureSequence], hyper: Hyperparameters, seed: int,
                     how: str = "random"):
    """Initial (model, segmentations).

    ``random``: words of geometric length (mean = prior mean word duration)
    with random ids and random letter splits, then one conditional update of
    all parameters.  ``prior``: model drawn from the prior and a first
    segmentation sampled from it.
    """
    rng = derived_rng(seed, 0, 3, 0)
    model = sample_model_from_prior(hyper, rng)
    if how == "prior":
        return _initial_from_model(dataset, model, seed)
    mean_word = 0.5 * (hyper.word_len_max + 1) * hyper.duration_prior.mean
    lengths = model.inventory.lengths
    word_seqs, dur_seqs = [], []
    for seq in dataset:
        for _ in range(INIT_ATTEMPTS):
            drawn = _random_words(seq.T, lengths, hyper, mean_word, rng)
            if drawn is not None:
                break
        if drawn is None:
            log.warning("random initialization infeasible for a %d-frame sequence; "
                        "initializing from the prior instead", seq.T)
            return _initial_from_model(dataset, model, seed)
        word_seqs.append(drawn[0])
        dur_seqs.append(drawn[1])
    segs = []
    for z, dz in zip(word_seqs, dur_seqs):
        plans = [_random_partition(d, lengths[i], hyper.d_max_letter, rng) if lengths[i] > 1
                 else (d,) for i, d in zip(z, dz)]
        segs.append(Segmentation(z, dz, [model.inventory[i] for i in z], plans))
    return _update_parameters(segs, dataset, model, seed, 0), segs


def run_gibbs(dataset: Sequence[FeatureSequence], hyper: Hyperparameters, config: GibbsConfig,
              truth: Sequence[Segmentation] | None = None,
              init: tuple[ModelState, list[Segmentation]] | None = None,
              start_iteration: int = 1):
    """Run ``config.iterations`` sweeps; returns ``(model, segmentations, trace)``."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if init is None:
        model, segs = initialize_state(dataset, hyper, config.seed, config.init)
    else:
        model, segs = init
    trace = GibbsTrace()
    for it in range(start_iteration, start_iteration + config.iterations):
        tic = time.perf_counter()
        model, segs = gibbs_sweep(dataset, model, config.seed, it,
                                  config.sir_candidates_per_occurrence)
        elapsed = time.perf_counter() - tic
        if (it - start_iteration + 1) % config.record_every == 0 \
                or it == start_iteration + config.iterations - 1:
            ll = joint_log_likelihood(model, dataset, segs)
            la, wa = dataset_ari(segs, truth) if truth is not None else (None, None)
            trace.append(it, ll, la, wa, elapsed)
            log.debug("iter %d ll=%.3f letter_ari=%s word_ari=%s (%.2fs)", it, ll, la, wa, elapsed)
    return model, segs, trace


def select_map_trial(results: Sequence[tuple]) -> int:
    """Index of the trial whose final joint log-likelihood is highest (first on ties)."""
    if len(results) == 0:
        raise ValueError("no trials to select from")
    finals = [r[2].log_likelihood[-1] for r in results]
    return int(np.argmax(finals))
