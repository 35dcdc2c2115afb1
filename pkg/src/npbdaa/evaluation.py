"""Frame-level clustering scores for estimated letters and words."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Segmentation


@dataclass(frozen=True)
class FrameLabeling:
    letter_labels: np.ndarray
    word_labels: np.ndarray

    def __post_init__(self):
        if len(self.letter_labels) != len(self.word_labels):
            raise ValueError("letter and word labels differ in length")


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index from the pair-counting contingency table."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label arrays differ in length: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("labels must be nonempty")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_cells = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(a.size)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (all-singletons or one cluster) and equal
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


def frame_labels_from_segmentation(seg: Segmentation) -> FrameLabeling:
    return FrameLabeling(seg.frame_letter_labels, seg.frame_word_labels)


def _as_labeling(x) -> FrameLabeling:
    return x if isinstance(x, FrameLabeling) else frame_labels_from_segmentation(x)


def dataset_ari(estimated: Sequence[Segmentation | FrameLabeling],
                truth: Sequence[Segmentation | FrameLabeling]) -> tuple[float, float]:
    """(letter ARI, word ARI) over frames concatenated across all sequences."""
    if len(estimated) != len(truth):
        raise ValueError("estimated and truth datasets differ in size")
    est = [_as_labeling(s) for s in estimated]
    tru = [_as_labeling(s) for s in truth]
    for i, (e, t) in enumerate(zip(est, tru)):
        if len(e.letter_labels) != len(t.letter_labels):
            raise ValueError(f"sequence {i}: {len(e.letter_labels)} estimated frames "
                             f"vs {len(t.letter_labels)} true frames")
    letter = adjusted_rand_index(np.concatenate([f.letter_labels for f in est]),
                                 np.concatenate([f.letter_labels for f in tru]))
    word = adjusted_rand_index(np.concatenate([f.word_labels for f in est]),
                               np.concatenate([f.word_labels for f in tru]))
    return letter, word
