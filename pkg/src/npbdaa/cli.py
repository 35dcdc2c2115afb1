"""Command-line driver: generate | train | eval | report."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from . import io as nio
from .evaluation import dataset_ari
from .experiment import RunConfig, map_index, run_trials, trial_seed
from .model import joint_log_likelihood, make_experiment1_dataset

log = logging.getLogger("npbdaa")

SUMMARY_COLUMNS = ("trial", "seed", "status", "final_log_likelihood", "letter_ari", "word_ari",
                   "map")
REPORT_COLUMNS = ("condition", "trials", "completed", "letter_ari_mean", "letter_ari_sd",
                  "word_ari_mean", "word_ari_sd", "map_trial", "map_letter_ari", "map_word_ari",
                  "final_log_likelihood_mean")


class CliError(Exception):
    pass


@contextmanager
def staged_dir(out: Path, force: bool):
    """Yield a temp directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise CliError(f"{out} exists and is not empty (use --force to overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=out.parent, prefix=f".{out.name}."))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else nio.fmt(x)


# generate

def cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    seqs, segs, truth = make_experiment1_dataset(args.sigma2, rng)
    with staged_dir(args.out, args.force) as tmp:
        entries = []
        for k, (seq, seg) in enumerate(zip(seqs, segs)):
            fpath = tmp / f"seq_{k:03d}.csv"
            lpath = tmp / f"seq_{k:03d}.labels.csv"
            nio.write_feature_csv(seq, fpath)
            nio.write_label_csv(seg, lpath)
            entries.append((f"seq_{k:03d}", fpath, lpath))
        nio.write_manifest(nio.DatasetManifest(tuple(entries), seqs[0].dim, seqs[0].frame_rate),
                           tmp / "manifest.json")
        nio.write_model_snapshot(truth, segs, tmp / "truth.snapshot",
                                 meta={"sigma2": args.sigma2, "seed": args.seed})
    print(f"wrote {len(seqs)} sequences to {args.out}")
    return 0


# train

def _config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in RunConfig.keys()}
    cfg = RunConfig.load(args.config, overrides)
    if cfg.manifest is None:
        raise CliError("no manifest given (set 'manifest' in the config or pass --manifest)")
    return cfg


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    manifest = nio.read_manifest(cfg.manifest)
    dataset = manifest.load_features()
    truth = manifest.load_labels() if not manifest.missing_labels() else None
    hyper = cfg.hyper(manifest.dim)
    results = run_trials(dataset, hyper, cfg.gibbs(), truth=truth, jobs=cfg.jobs)
    best = map_index(results)
    failed = 0
    with staged_dir(args.out, args.force) as tmp:
        resolved = cfg.to_dict()
        resolved["manifest"] = str(Path(cfg.manifest).resolve())
        nio.atomic_write_text(tmp / "run.yaml", yaml.safe_dump(resolved, sort_keys=False))
        rows = []
        for k, res in enumerate(results):
            tdir = tmp / f"trial_{k:03d}"
            tdir.mkdir()
            seed = trial_seed(cfg.seed, k)
            if isinstance(res, BaseException):
                failed += 1
                nio.atomic_write_text(tdir / "error.txt", f"{type(res).__name__}: {res}\n")
                rows.append([k, seed, "failed", "", "", "", 0])
                continue
            model, segs, trace = res
            nio.write_metrics_csv(trace, tdir / "metrics.csv")
            nio.write_model_snapshot(model, segs, tdir / "final.snapshot",
                                     meta={"seed": seed, "iteration": trace.iteration[-1],
                                           "condition": cfg.condition})
            rows.append([k, seed, "ok", _num(trace.log_likelihood[-1]),
                         _num(trace.letter_ari[-1]), _num(trace.word_ari[-1]),
                         int(k == best)])
        nio.atomic_write_text(tmp / "summary.csv", _csv_text(SUMMARY_COLUMNS, rows))
    print(f"{len(results) - failed}/{len(results)} trials completed; MAP trial: {best}")
    if failed:
        log.error("%d trial(s) failed; see error.txt in their directories", failed)
        return 1
    return 0


# eval

def cmd_eval(args) -> int:
    model, segs, _ = nio.read_model_snapshot(args.snapshot)
    manifest = nio.read_manifest(args.truth)
    missing = manifest.missing_labels()
    if missing:
        raise CliError("missing label files: " + ", ".join(missing))
    labels = manifest.load_labels()
    dataset = manifest.load_features()
    if len(segs) != len(labels):
        raise CliError(f"snapshot has {len(segs)} sequences, manifest has {len(labels)}")
    for k, (s, l) in enumerate(zip(segs, labels)):
        if s.T != len(l.letter_labels):
            raise CliError(f"sequence {k}: snapshot covers {s.T} frames, labels {len(l.letter_labels)}")
    letter, word = dataset_ari(segs, labels)
    ll = joint_log_likelihood(model, dataset, segs)
    out = Path(args.out) if args.out else Path(args.snapshot).with_suffix(".eval.csv")
    nio.atomic_write_text(out, _csv_text(("metric", "value"), [
        ("letter_ari", _num(letter)), ("word_ari", _num(word)),
        ("joint_log_likelihood", _num(ll))]))
    print(f"letter_ari={letter:.6f} word_ari={word:.6f} joint_log_likelihood={ll:.6f}")
    return 0


# report

def _run_dirs(root: Path) -> list[Path]:
    if (root / "summary.csv").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "summary.csv").exists())
    if not dirs:
        raise CliError(f"no training runs (summary.csv) found under {root}")
    return dirs


def _report_run(run: Path, figures: bool) -> list:
    from . import plotting

    meta = yaml.safe_load((run / "run.yaml").read_text()) if (run / "run.yaml").exists() else {}
    condition = meta.get("condition") or run.name
    with open(run / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    ok = [r for r in summary if r["status"] == "ok"]
    traces = [nio.read_metrics_csv(run / f"trial_{int(r['trial']):03d}" / "metrics.csv") for r in ok]

    def col(name):
        return np.array([np.nan if r[name] == "" else float(r[name]) for r in ok])

    la, wa, ll = col("letter_ari"), col("word_ari"), col("final_log_likelihood")
    best = [r for r in ok if r["map"] == "1"]
    row = [condition, len(summary), len(ok),
           _num(np.nanmean(la)) if la.size and not np.all(np.isnan(la)) else "",
           _num(np.nanstd(la)) if la.size and not np.all(np.isnan(la)) else "",
           _num(np.nanmean(wa)) if wa.size and not np.all(np.isnan(wa)) else "",
           _num(np.nanstd(wa)) if wa.size and not np.all(np.isnan(wa)) else "",
           best[0]["trial"] if best else "",
           best[0]["letter_ari"] if best else "", best[0]["word_ari"] if best else "",
           _num(float(np.mean(ll))) if ll.size else ""]
    if figures and traces:
        plotting.plot_loglik_profile(traces, run / "loglik_profile.png", title=condition)
        plotting.plot_ari_profile(traces, run / "ari_profile.png", title=condition)
        mpath = meta.get("manifest")
        if best and mpath and Path(mpath).exists():
            manifest = nio.read_manifest(mpath)
            _, segs, _ = nio.read_model_snapshot(
                run / f"trial_{int(best[0]['trial']):03d}" / "final.snapshot")
            k = 0
            frames = nio.read_feature_csv(manifest.entries[k][1]).frames
            rows = []
            if manifest.entries[k][2] is not None and Path(manifest.entries[k][2]).exists():
                lab = nio.read_label_csv(manifest.entries[k][2])
                rows += [("true letters", lab.letter_labels % 10), ("true words", lab.word_labels % 10)]
            rows += [("letters", segs[k].frame_letter_labels % 10),
                     ("words", segs[k].frame_word_labels % 10)]
            plotting.plot_segmentation(frames, rows, run / "segmentation.png",
                                       title=f"{condition}: {manifest.entries[k][0]}")
    return row


def cmd_report(args) -> int:
    root = Path(args.runs)
    if not root.is_dir():
        raise CliError(f"{root} is not a directory")
    rows = [_report_run(run, not args.no_figures) for run in _run_dirs(root)]
    out = Path(args.out) if args.out else root / "report.csv"
    text = _csv_text(REPORT_COLUMNS, rows)
    nio.atomic_write_text(out, text)
    sys.stdout.write(text)
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="npbdaa", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write the synthetic 40-sequence dataset")
    g.add_argument("--sigma2", type=float, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", type=Path, required=True)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="run independent Gibbs chains")
    t.add_argument("--config", type=Path)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--force", action="store_true")
    t.add_argument("--trials", type=int)
    for key in RunConfig.keys():
        if key != "trials":
            t.add_argument(f"--{key}", default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a snapshot against ground-truth labels")
    e.add_argument("--snapshot", type=Path, required=True)
    e.add_argument("--truth", type=Path, required=True, help="dataset manifest with label files")
    e.add_argument("--out", type=Path)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="aggregate training runs into a summary table and figures")
    r.add_argument("--runs", type=Path, required=True)
    r.add_argument("--out", type=Path)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, nio.ParseError, nio.FormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
