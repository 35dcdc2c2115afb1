import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from npbdaa.evaluation import (
    FrameLabeling,
    adjusted_rand_index,
    dataset_ari,
    frame_labels_from_segmentation,
)
from npbdaa.model import Segmentation, make_experiment1_dataset

from oracles import ari_pairs

labels = st.lists(st.integers(0, 5), min_size=2, max_size=60)


def test_identical_is_one():
    assert adjusted_rand_index([0, 0, 1, 2, 2], [0, 0, 1, 2, 2]) == 1.0
    assert adjusted_rand_index([3, 3, 7], [0, 0, 1]) == 1.0


def test_one_cluster_vs_many_is_zero():
    assert adjusted_rand_index([0] * 6, [0, 1, 2, 3, 4, 5]) == 0.0
    assert adjusted_rand_index([0] * 6, [0, 0, 1, 1, 2, 2]) == 0.0


def test_small_fixture_against_pair_oracle():
    a, b = (0, 0, 1, 1), (0, 0, 1, 2)
    assert adjusted_rand_index(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)
    # pairs: 1 agreeing same-same; sums over rows 2, over columns 1, total 6
    assert adjusted_rand_index(a, b) == pytest.approx((1 - 2 / 6) / (1.5 - 2 / 6), abs=1e-12)


def test_length_mismatch_and_empty():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        adjusted_rand_index([], [])


@given(labels, st.data())
def test_matches_pair_oracle(a, data):
    b = data.draw(st.lists(st.integers(0, 5), min_size=len(a), max_size=len(a)))
    assert adjusted_rand_index(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)


@given(labels, st.data())
def test_symmetric(a, data):
    b = data.draw(st.lists(st.integers(0, 5), min_size=len(a), max_size=len(a)))
    assert adjusted_rand_index(a, b) == adjusted_rand_index(b, a)


@given(labels, st.data(), st.permutations(range(6)), st.permutations(range(6)))
def test_relabeling_invariance(a, data, pa, pb):
    b = data.draw(st.lists(st.integers(0, 5), min_size=len(a), max_size=len(a)))
    ra = [pa[x] for x in a]
    rb = [pb[x] for x in b]
    assert adjusted_rand_index(ra, rb) == adjusted_rand_index(a, b)


def test_random_labelings_near_zero():
    rng = np.random.default_rng(0)
    vals = [adjusted_rand_index(rng.integers(0, 5, 1000), rng.integers(0, 5, 1000))
            for _ in range(100)]
    assert -0.05 <= np.mean(vals) <= 0.05


def test_frame_labels_expansion():
    fl = frame_labels_from_segmentation(Segmentation((4,), (5,), ((3, 2),), ((2, 3),)))
    assert fl.letter_labels.tolist() == [3, 3, 2, 2, 2]
    assert fl.word_labels.tolist() == [4] * 5


def test_frame_labels_constant_within_words_and_round_trip():
    _, segs, _ = make_experiment1_dataset(0.5, np.random.default_rng(1))
    for seg in segs:
        fl = frame_labels_from_segmentation(seg)
        assert np.array_equal(fl.letter_labels, seg.frame_letter_labels)
        for (a, b), z in zip(zip(seg.word_starts, seg.word_starts + seg.word_durations),
                             seg.word_ids):
            assert np.all(fl.word_labels[a:b] == z)


def test_dataset_ari_truth_and_permutation():
    _, segs, _ = make_experiment1_dataset(0.5, np.random.default_rng(2))
    assert dataset_ari(segs, segs) == (1.0, 1.0)
    perm = {0: 3, 1: 0, 2: 1, 3: 2}
    swapped = [Segmentation([perm[z] for z in s.word_ids], s.word_durations, s.letter_ids,
                            s.letter_durations) for s in segs]
    assert dataset_ari(swapped, segs)[1] == 1.0


def test_dataset_ari_fixture_against_oracle():
    est = [Segmentation((0,), (4,), ((0, 1),), ((2, 2),)),
           Segmentation((1, 0), (2, 3), ((2,), (0, 1)), ((2,), (1, 2)))]
    tru = [FrameLabeling(np.array([0, 0, 0, 1]), np.array([5, 5, 5, 5])),
           FrameLabeling(np.array([2, 2, 0, 1, 1]), np.array([6, 6, 5, 5, 5]))]
    letter, word = dataset_ari(est, tru)
    el = np.concatenate([s.frame_letter_labels for s in est])
    tl = np.concatenate([t.letter_labels for t in tru])
    ew = np.concatenate([s.frame_word_labels for s in est])
    tw = np.concatenate([t.word_labels for t in tru])
    assert letter == pytest.approx(ari_pairs(el, tl), abs=1e-12)
    assert word == pytest.approx(ari_pairs(ew, tw), abs=1e-12)


def test_dataset_ari_shape_mismatch():
    seg = Segmentation((0,), (3,), ((0,),), ((3,),))
    with pytest.raises(ValueError):
        dataset_ari([seg], [seg, seg])
    with pytest.raises(ValueError):
        dataset_ari([seg], [FrameLabeling(np.zeros(4, int), np.zeros(4, int))])
