import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from npbdaa.gibbs import GibbsConfig, GibbsTrace, run_gibbs
from npbdaa.io import (
    DatasetManifest,
    FormatError,
    ParseError,
    hyper_to_dict,
    read_feature_csv,
    read_label_csv,
    read_manifest,
    read_metrics_csv,
    read_model_snapshot,
    snapshot_from_text,
    snapshot_to_text,
    write_feature_csv,
    write_label_csv,
    write_manifest,
    write_metrics_csv,
    write_model_snapshot,
)
from npbdaa.model import (
    FeatureSequence,
    Hyperparameters,
    make_experiment1_dataset,
    sample_model_from_prior,
)


def test_read_simple_csv(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("1,2\n3,4\n5,6")
    seq = read_feature_csv(p)
    assert seq.T == 3 and seq.dim == 2
    assert seq.frames.tolist() == [[1, 2], [3, 4], [5, 6]]


def test_header_is_optional(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("mfcc1,mfcc2\n1,2\n")
    assert read_feature_csv(p).frames.tolist() == [[1, 2]]


@pytest.mark.parametrize("text,line", [
    ("1,2\nNaN,4\n", 2),
    ("1,2\n3,inf\n", 2),
    ("1,2\n3\n", 2),
    ("1,2\n3,4\n5,x\n", 3),
])
def test_bad_rows_name_the_line(tmp_path, text, line):
    p = tmp_path / "f.csv"
    p.write_text(text)
    with pytest.raises(ParseError, match=f":{line}:"):
        read_feature_csv(p)


def test_empty_file_rejected(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("")
    with pytest.raises(ParseError):
        read_feature_csv(p)


@settings(max_examples=50, deadline=None)
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 3)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_feature_round_trip_exact(tmp_path_factory, frames):
    p = tmp_path_factory.mktemp("rt") / "f.csv"
    write_feature_csv(FeatureSequence(frames), p)
    assert np.array_equal(read_feature_csv(p).frames, frames)


def test_label_round_trip(tmp_path):
    _, segs, _ = make_experiment1_dataset(0.5, np.random.default_rng(0))
    p = tmp_path / "l.csv"
    write_label_csv(segs[3], p)
    fl = read_label_csv(p)
    assert np.array_equal(fl.letter_labels, segs[3].frame_letter_labels)
    assert np.array_equal(fl.word_labels, segs[3].frame_word_labels)
    assert p.read_text().splitlines()[0] == "frame,letter_label,word_label"


def test_label_reader_rejects_gaps(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("frame,letter_label,word_label\n0,1,1\n2,1,1\n")
    with pytest.raises(ParseError, match=":3:"):
        read_label_csv(p)


def test_manifest_round_trip_and_missing_labels(tmp_path):
    seqs, segs, _ = make_experiment1_dataset(0.5, np.random.default_rng(1))
    entries = []
    for k in range(3):
        f, l = tmp_path / f"s{k}.csv", tmp_path / f"s{k}.labels.csv"
        write_feature_csv(seqs[k], f)
        if k != 1:
            write_label_csv(segs[k], l)
        entries.append((f"s{k}", f, l))
    write_manifest(DatasetManifest(tuple(entries), 1), tmp_path / "manifest.json")
    man = read_manifest(tmp_path / "manifest.json")
    assert man.dim == 1 and len(man.entries) == 3
    assert [s.T for s in man.load_features()] == [s.T for s in seqs[:3]]
    assert man.missing_labels() == [str(tmp_path / "s1.labels.csv")]


def _assert_models_equal(a, b):
    assert hyper_to_dict(a.hyper) == hyper_to_dict(b.hyper)
    assert a.inventory == b.inventory
    for name in ("beta_lm", "pi_lm", "pi_lm_full", "pi_lm_initial", "beta_wm", "pi_wm",
                 "pi_wm_initial"):
        assert np.array_equal(getattr(a.transitions, name), getattr(b.transitions, name))
    for la, lb in zip(a.letters, b.letters):
        assert np.array_equal(la.mean, lb.mean) and np.array_equal(la.cov, lb.cov)
        assert la.omega == lb.omega


def test_snapshot_round_trip_prior_model(tmp_path):
    m = sample_model_from_prior(Hyperparameters(), np.random.default_rng(2))
    _, segs, _ = make_experiment1_dataset(0.5, np.random.default_rng(3))
    p = tmp_path / "m.snapshot"
    write_model_snapshot(m, segs, p, meta={"seed": 4})
    m2, segs2, meta = read_model_snapshot(p)
    _assert_models_equal(m, m2)
    assert segs2 == segs and meta == {"seed": 4}
    assert p.read_text().startswith("NPBDAA-SNAPSHOT 1\n")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_snapshot_round_trip_property(seed):
    m = sample_model_from_prior(Hyperparameters(n_words_max=3, n_letters_max=4),
                                np.random.default_rng(seed))
    text = snapshot_to_text(m, [])
    m2, _, _ = snapshot_from_text(text)
    _assert_models_equal(m, m2)
    assert snapshot_to_text(m2, []) == text


def test_snapshot_rejects_unknown_version_and_truncation():
    m = sample_model_from_prior(Hyperparameters(), np.random.default_rng(5))
    text = snapshot_to_text(m, [])
    with pytest.raises(FormatError, match="version"):
        snapshot_from_text(text.replace("NPBDAA-SNAPSHOT 1", "NPBDAA-SNAPSHOT 2", 1))
    with pytest.raises(FormatError):
        snapshot_from_text(text[: len(text) // 2])
    with pytest.raises(FormatError):
        snapshot_from_text("hello\n{}")


def test_metrics_csv(tmp_path):
    seqs, segs, _ = make_experiment1_dataset(0.5, np.random.default_rng(6))
    _, _, trace = run_gibbs(seqs[:4], Hyperparameters(), GibbsConfig(iterations=3), truth=segs[:4])
    p = tmp_path / "metrics.csv"
    write_metrics_csv(trace, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "iteration,joint_log_likelihood,letter_ari,word_ari,seconds"
    assert len(lines) == 4
    back = read_metrics_csv(p)
    assert back.iteration == trace.iteration
    assert back.log_likelihood == trace.log_likelihood
    assert back.word_ari == trace.word_ari


def test_metrics_hundred_rows_and_missing_truth(tmp_path):
    t = GibbsTrace()
    for k in range(1, 101):
        t.append(k, -float(k), None, None, 0.01)
    p = tmp_path / "m.csv"
    write_metrics_csv(t, p)
    lines = p.read_text().splitlines()
    assert len(lines) == 101
    assert lines[1] == "1,-1,,,0.01"
    back = read_metrics_csv(p)
    assert back.letter_ari[0] is None and back.word_ari[0] is None


def test_writers_are_byte_deterministic(tmp_path):
    seqs, segs, truth = make_experiment1_dataset(0.5, np.random.default_rng(7))
    for k in range(2):
        write_feature_csv(seqs[0], tmp_path / f"f{k}.csv")
        write_label_csv(segs[0], tmp_path / f"l{k}.csv")
        write_model_snapshot(truth, segs, tmp_path / f"m{k}.snapshot")
    for stem in ("f{}.csv", "l{}.csv", "m{}.snapshot"):
        assert (tmp_path / stem.format(0)).read_bytes() == (tmp_path / stem.format(1)).read_bytes()
