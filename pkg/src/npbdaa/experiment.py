"""Multi-trial runs and run configuration."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .gibbs import GibbsConfig, run_gibbs, select_map_trial
from .model import FeatureSequence, Hyperparameters
from .primitives import GammaParams, NiwParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """Flat run settings; defaults reproduce the synthetic-data experiment."""

    gamma_lm: float = 10.0
    alpha_lm: float = 10.0
    gamma_wm: float = 10.0
    alpha_wm: float = 10.0
    n_words_max: int = 6
    n_letters_max: int = 7
    duration_shape: float = 50.0
    duration_rate: float = 10.0
    mu0: float = 0.0
    sigma0_sq: float = 1.0
    kappa0: float = 0.01
    nu0: float = 1.0
    word_len_max: int = 8
    d_max_letter: int | None = None
    d_max_word: int | None = None
    iterations: int = 100
    seed: int = 0
    trials: int = 1
    sir_candidates_per_occurrence: int = 1
    record_every: int = 1
    init: str = "random"
    jobs: int = 1
    manifest: str | None = None
    condition: str = ""

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "RunConfig":
        unknown = set(values) - set(cls.keys())
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        types = {f.name: f.type for f in fields(cls)}
        clean = {}
        for k, v in values.items():
            if v is None:
                clean[k] = None
            elif "int" in str(types[k]):
                clean[k] = int(v)
            elif "float" in str(types[k]):
                clean[k] = float(v)
            else:
                clean[k] = str(v)
        cfg = cls(**clean)
        cfg.hyper(1)
        cfg.gibbs()
        return cfg

    @classmethod
    def load(cls, path, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        values = {}
        if path is not None:
            with open(path) as fh:
                values = yaml.safe_load(fh) or {}
            if not isinstance(values, dict):
                raise ValueError(f"{path}: config must be a flat key-value mapping")
            if values.get("manifest") is not None:
                mp = Path(values["manifest"])
                if not mp.is_absolute():
                    values["manifest"] = str(Path(path).parent / mp)
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def hyper(self, dim: int) -> Hyperparameters:
        return Hyperparameters(
            gamma_lm=self.gamma_lm, alpha_lm=self.alpha_lm,
            gamma_wm=self.gamma_wm, alpha_wm=self.alpha_wm,
            n_words_max=self.n_words_max, n_letters_max=self.n_letters_max,
            duration_prior=GammaParams(self.duration_shape, self.duration_rate),
            emission_prior=NiwParams(np.full(dim, self.mu0), self.kappa0, self.nu0,
                                     self.sigma0_sq * np.eye(dim)),
            word_len_max=self.word_len_max,
            d_max_letter=self.d_max_letter, d_max_word=self.d_max_word)

    def gibbs(self) -> GibbsConfig:
        return GibbsConfig(iterations=self.iterations, seed=self.seed,
                           sir_candidates_per_occurrence=self.sir_candidates_per_occurrence,
                           trial_count=self.trials, record_every=self.record_every,
                           init=self.init)

    def to_dict(self) -> dict:
        return asdict(self)


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _run_one(args):
    dataset, hyper, config, truth = args
    return run_gibbs(dataset, hyper, config, truth=truth)


def run_trials(dataset: Sequence[FeatureSequence], hyper: Hyperparameters, config: GibbsConfig,
               truth=None, jobs: int = 1) -> list[tuple]:
    """Independent chains with seeds derived from ``(config.seed, trial)``.

    Returns one ``(model, segmentations, trace)`` per trial, or the raised
    exception for a trial that failed.
    """
    configs = [replace(config, seed=trial_seed(config.seed, k)) for k in range(config.trial_count)]
    jobs = max(1, min(jobs, len(configs), os.cpu_count() or 1))
    work = [(dataset, hyper, c, truth) for c in configs]
    results = []
    if jobs == 1:
        for k, w in enumerate(work):
            try:
                results.append(_run_one(w))
            except Exception as exc:  # reported per trial, others continue
                log.error("trial %d failed: %s", k, exc)
                results.append(exc)
        return results
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_one, w) for w in work]
        for k, f in enumerate(futures):
            try:
                results.append(f.result())
            except Exception as exc:
                log.error("trial %d failed: %s", k, exc)
                results.append(exc)
    return results


def map_index(results: Sequence) -> int | None:
    ok = [(k, r) for k, r in enumerate(results) if not isinstance(r, BaseException)]
    if not ok:
        return None
    return ok[select_map_trial([r for _, r in ok])][0]


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
