"""File formats: feature/label CSVs, dataset manifests, model snapshots, metric traces.

Writers are deterministic (fixed key order, 17 significant digits) and write
through a temporary file that is renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import FrameLabeling
from .gibbs import GibbsTrace
from .model import (
    FeatureSequence,
    Hyperparameters,
    LetterParams,
    ModelState,
    Segmentation,
    TransitionModel,
    WordInventory,
)
from .primitives import GammaParams, NiwParams

SNAPSHOT_MAGIC = "NPBDAA-SNAPSHOT"
SNAPSHOT_VERSION = 1
MANIFEST_FORMAT = "npbdaa-manifest"
MANIFEST_VERSION = 1
METRICS_COLUMNS = ("iteration", "joint_log_likelihood", "letter_ari", "word_ari", "seconds")
LABEL_COLUMNS = ("frame", "letter_label", "word_label")


class ParseError(ValueError):
    pass


class FormatError(ValueError):
    pass


def fmt(x: float) -> str:
    return "%.17g" % x


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# features

def _parse_float(cell: str, path, lineno: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"{path}:{lineno}: non-numeric cell {cell!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{path}:{lineno}: non-finite value {cell!r}")
    return v


def _is_header(cells: list[str]) -> bool:
    for c in cells:
        try:
            float(c)
        except ValueError:
            continue
        return False
    return True


def read_feature_csv(path, frame_rate: float = 100.0) -> FeatureSequence:
    """Rows are frames, columns are feature dimensions; an all-text first row is a header."""
    path = Path(path)
    rows, width = [], None
    with open(path, newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            cells = [c.strip() for c in cells]
            if lineno == 1 and _is_header(cells):
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} columns, found {len(cells)}")
            rows.append([_parse_float(c, path, lineno) for c in cells])
    if not rows:
        raise ParseError(f"{path}: no feature rows")
    return FeatureSequence(np.array(rows), frame_rate)


def write_feature_csv(seq: FeatureSequence, path) -> None:
    lines = [",".join(fmt(v) for v in row) for row in seq.frames]
    atomic_write_text(path, "\n".join(lines) + "\n")


# labels

def write_label_csv(seg: Segmentation, path) -> None:
    out = [",".join(LABEL_COLUMNS)]
    for t, (l, w) in enumerate(zip(seg.frame_letter_labels, seg.frame_word_labels)):
        out.append(f"{t},{l},{w}")
    atomic_write_text(path, "\n".join(out) + "\n")


def read_label_csv(path) -> FrameLabeling:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != LABEL_COLUMNS:
            raise ParseError(f"{path}:1: expected header {','.join(LABEL_COLUMNS)}")
        letters, words = [], []
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 columns, found {len(cells)}")
            try:
                t, l, w = (int(c) for c in cells)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: labels must be integers") from None
            if t != len(letters):
                raise ParseError(f"{path}:{lineno}: frame index {t} out of order")
            letters.append(l)
            words.append(w)
    if not letters:
        raise ParseError(f"{path}: no label rows")
    return FrameLabeling(np.array(letters), np.array(words))


# manifest

@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[tuple[str, Path, Path | None], ...]
    dim: int
    frame_rate: float = 100.0

    def load_features(self) -> list[FeatureSequence]:
        seqs = []
        for sid, fpath, _ in self.entries:
            seq = read_feature_csv(fpath, self.frame_rate)
            if seq.dim != self.dim:
                raise FormatError(f"sequence {sid}: dimension {seq.dim}, manifest says {self.dim}")
            seqs.append(seq)
        return seqs

    def missing_labels(self) -> list[str]:
        return [str(lp) if lp is not None else f"<no label file for {sid}>"
                for sid, _, lp in self.entries if lp is None or not Path(lp).exists()]

    def load_labels(self) -> list[FrameLabeling]:
        missing = self.missing_labels()
        if missing:
            raise FileNotFoundError("missing label files: " + ", ".join(missing))
        return [read_label_csv(lp) for _, _, lp in self.entries]


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    root = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return str(p.relative_to(root))
        except ValueError:
            return str(p)

    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "dim": manifest.dim,
        "frame_rate": manifest.frame_rate,
        "sequences": [{"id": sid, "features": rel(f), "labels": rel(l) if l else None}
                      for sid, f, l in manifest.entries],
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a manifest ({exc})") from None
    if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest format/version")
    root = path.parent
    entries = []
    for s in doc["sequences"]:
        fpath = root / s["features"]
        if not fpath.exists():
            raise FileNotFoundError(f"{path}: feature file {fpath} does not exist")
        entries.append((s["id"], fpath, root / s["labels"] if s.get("labels") else None))
    return DatasetManifest(tuple(entries), int(doc["dim"]), float(doc.get("frame_rate", 100.0)))


# snapshots

def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def hyper_to_dict(h: Hyperparameters) -> dict:
    return {
        "gamma_lm": h.gamma_lm, "alpha_lm": h.alpha_lm,
        "gamma_wm": h.gamma_wm, "alpha_wm": h.alpha_wm,
        "n_words_max": h.n_words_max, "n_letters_max": h.n_letters_max,
        "duration_prior": {"shape": h.duration_prior.shape, "rate": h.duration_prior.rate},
        "emission_prior": {"mu0": _arr(h.emission_prior.mu0),
                           "kappa0": h.emission_prior.kappa0,
                           "nu0": h.emission_prior.nu0,
                           "psi0": _arr(h.emission_prior.psi0)},
        "word_len_max": h.word_len_max,
        "d_max_letter": h.d_max_letter,
        "d_max_word": h.d_max_word,
    }


def hyper_from_dict(d: dict) -> Hyperparameters:
    d = dict(d)
    d["duration_prior"] = GammaParams(**d["duration_prior"])
    ep = d["emission_prior"]
    d["emission_prior"] = NiwParams(np.array(ep["mu0"]), ep["kappa0"], ep["nu0"],
                                    np.array(ep["psi0"]))
    return Hyperparameters(**d)


def _segmentation_to_dict(s: Segmentation) -> dict:
    return {"word_ids": list(s.word_ids), "word_durations": list(s.word_durations),
            "letter_ids": [list(x) for x in s.letter_ids],
            "letter_durations": [list(x) for x in s.letter_durations]}


def _segmentation_from_dict(d: dict) -> Segmentation:
    return Segmentation(d["word_ids"], d["word_durations"], d["letter_ids"], d["letter_durations"])


def snapshot_to_text(model: ModelState, segmentations: Sequence[Segmentation],
                     meta: dict | None = None) -> str:
    tr = model.transitions
    doc = {
        "hyper": hyper_to_dict(model.hyper),
        "transitions": {
            "beta_lm": _arr(tr.beta_lm), "pi_lm": _arr(tr.pi_lm),
            "pi_lm_full": _arr(tr.pi_lm_full), "pi_lm_initial": _arr(tr.pi_lm_initial),
            "beta_wm": _arr(tr.beta_wm), "pi_wm": _arr(tr.pi_wm),
            "pi_wm_initial": _arr(tr.pi_wm_initial),
        },
        "inventory": [list(w) for w in model.inventory.words],
        "letters": [{"mean": _arr(lp.mean), "cov": _arr(lp.cov), "omega": lp.omega}
                    for lp in model.letters],
        "segmentations": [_segmentation_to_dict(s) for s in segmentations],
        "meta": meta or {},
    }
    # json writes floats with repr(), the shortest string that round-trips exactly
    return f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}\n" + json.dumps(doc, indent=1) + "\n"


def snapshot_from_text(text: str, source="<snapshot>"):
    head, _, body = text.partition("\n")
    parts = head.split()
    if len(parts) != 2 or parts[0] != SNAPSHOT_MAGIC:
        raise FormatError(f"{source}: not an NPB-DAA snapshot")
    if parts[1] != str(SNAPSHOT_VERSION):
        raise FormatError(f"{source}: unsupported snapshot version {parts[1]}")
    try:
        doc = json.loads(body)
        t = doc["transitions"]
        transitions = TransitionModel(*(np.array(t[k]) for k in (
            "beta_lm", "pi_lm", "pi_lm_full", "pi_lm_initial", "beta_wm", "pi_wm",
            "pi_wm_initial")))
        letters = tuple(LetterParams(np.array(l["mean"]), np.array(l["cov"]), l["omega"])
                        for l in doc["letters"])
        model = ModelState(transitions, WordInventory(doc["inventory"]), letters,
                           hyper_from_dict(doc["hyper"]))
        segs = [_segmentation_from_dict(s) for s in doc["segmentations"]]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{source}: truncated or malformed snapshot ({exc})") from None
    return model, segs, doc.get("meta", {})


def write_model_snapshot(model: ModelState, segmentations: Sequence[Segmentation], path,
                         meta: dict | None = None) -> None:
    atomic_write_text(path, snapshot_to_text(model, segmentations, meta))


def read_model_snapshot(path):
    """Returns ``(model, segmentations, meta)``."""
    path = Path(path)
    return snapshot_from_text(path.read_text(), path)


# metrics

def _cell(x) -> str:
    return "" if x is None else fmt(x)


def write_metrics_csv(trace: GibbsTrace, path) -> None:
    buf = io.StringIO()
    buf.write(",".join(METRICS_COLUMNS) + "\n")
    for row in zip(trace.iteration, trace.log_likelihood, trace.letter_ari, trace.word_ari,
                   trace.seconds):
        buf.write(f"{row[0]}," + ",".join(_cell(x) for x in row[1:]) + "\n")
    try:
        atomic_write_text(path, buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics_csv(path) -> GibbsTrace:
    trace = GibbsTrace()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise ParseError(f"{path}:1: unexpected metrics header")
        for lineno, cells in enumerate(reader, start=2):
            if len(cells) != len(METRICS_COLUMNS):
                raise ParseError(f"{path}:{lineno}: expected {len(METRICS_COLUMNS)} columns")
            vals = [None if c == "" else float(c) for c in cells[1:]]
            trace.append(int(cells[0]), *vals)
    return trace
