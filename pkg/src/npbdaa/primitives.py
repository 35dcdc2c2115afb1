"""Conjugate updates, weak-limit Dirichlet draws and log-space sampling helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaln


class DegenerateDistributionError(ValueError):
    """Raised when asked to sample from a distribution with no mass."""


@dataclass(frozen=True)
class NiwParams:
    """Normal-inverse-Wishart hyperparameters."""

    mu0: np.ndarray
    kappa0: float
    nu0: float
    psi0: np.ndarray

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        psi0 = np.atleast_2d(np.asarray(self.psi0, dtype=float))
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "psi0", psi0)
        D = mu0.shape[0]
        if psi0.shape != (D, D):
            raise ValueError(f"psi0 must be {D}x{D}, got {psi0.shape}")
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be positive")
        if not self.nu0 > D - 1:
            raise ValueError(f"nu0 must exceed D-1={D - 1}")
        if not np.allclose(psi0, psi0.T):
            raise ValueError("psi0 must be symmetric")
        try:
            np.linalg.cholesky(psi0)
        except np.linalg.LinAlgError as exc:
            raise ValueError("psi0 must be positive definite") from exc

    @property
    def dim(self) -> int:
        return self.mu0.shape[0]

    @classmethod
    def isotropic(cls, dim: int, mu0: float = 0.0, sigma2: float = 1.0,
                  kappa0: float = 0.01, nu0: float | None = None) -> "NiwParams":
        if nu0 is None:
            nu0 = dim + 2.0
        return cls(np.full(dim, float(mu0)), float(kappa0), float(nu0), sigma2 * np.eye(dim))


@dataclass(frozen=True)
class GammaParams:
    """Gamma(shape, rate) prior over a Poisson rate."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class GaussianStats:
    """Sufficient statistics of a batch of D-dimensional observations."""

    count: int
    total: np.ndarray
    outer: np.ndarray

    @classmethod
    def from_data(cls, data, dim: int | None = None) -> "GaussianStats":
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None] if dim in (None, 1) else data.reshape(-1, dim)
        if data.shape[0] == 0:
            d = dim if dim is not None else data.shape[1]
            return cls.empty(d)
        return cls(data.shape[0], data.sum(axis=0), data.T @ data)

    @classmethod
    def empty(cls, dim: int) -> "GaussianStats":
        return cls(0, np.zeros(dim), np.zeros((dim, dim)))

    def __add__(self, other: "GaussianStats") -> "GaussianStats":
        return GaussianStats(self.count + other.count, self.total + other.total,
                             self.outer + other.outer)


def sample_dirichlet(concentration, rng: np.random.Generator) -> np.ndarray:
    """Draw from a Dirichlet, stable for very small concentrations.

    Gamma variates are drawn in log space (``log G(a) = log G(a+1) + log(U)/a``)
    so tiny concentrations do not collapse the whole vector to zeros.
    """
    alpha = np.asarray(concentration, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ValueError("concentration must be a nonempty vector")
    if not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
        raise ValueError("all concentration entries must be positive and finite")
    log_g = np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(alpha.size)) / alpha
    p = np.exp(log_g - log_g.max())
    return p / p.sum()


def niw_posterior(prior: NiwParams, stats_: GaussianStats) -> NiwParams:
    """Conjugate NIW update from count / sum / outer-product sum."""
    D = prior.dim
    total = np.atleast_1d(np.asarray(stats_.total, dtype=float))
    outer = np.atleast_2d(np.asarray(stats_.outer, dtype=float))
    if total.shape != (D,) or outer.shape != (D, D):
        raise ValueError(f"sufficient statistics do not match dimension {D}")
    n = stats_.count
    if n < 0:
        raise ValueError("count must be nonnegative")
    if n == 0:
        return prior
    ybar = total / n
    scatter = outer - n * np.outer(ybar, ybar)
    kappa_n = prior.kappa0 + n
    diff = ybar - prior.mu0
    mu_n = (prior.kappa0 * prior.mu0 + total) / kappa_n
    psi_n = prior.psi0 + scatter + (prior.kappa0 * n / kappa_n) * np.outer(diff, diff)
    psi_n = 0.5 * (psi_n + psi_n.T)
    return NiwParams(mu_n, kappa_n, prior.nu0 + n, psi_n)


def sample_niw(params: NiwParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw (mean, covariance) from a NIW distribution."""
    if params.dim == 1:
        sigma2 = params.psi0[0, 0] / rng.chisquare(params.nu0)
        cov = np.array([[sigma2]])
    else:
        cov = np.atleast_2d(stats.invwishart.rvs(df=params.nu0, scale=params.psi0, random_state=rng))
    mean = rng.multivariate_normal(params.mu0, cov / params.kappa0)
    return mean, cov


def gamma_poisson_posterior(prior: GammaParams, durations) -> GammaParams:
    """Conjugate Gamma update for a Poisson rate."""
    d = np.asarray(list(durations), dtype=np.int64)
    if d.size == 0:
        return prior
    if np.any(d < 1):
        raise ValueError("durations must be >= 1")
    return GammaParams(prior.shape + float(d.sum()), prior.rate + float(d.size))


def sample_gamma(params: GammaParams, rng: np.random.Generator) -> float:
    return float(rng.gamma(params.shape, 1.0 / params.rate))


def log_sum_exp(values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return -np.inf
    m = v.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(v - m))))


def sample_categorical_log(weights, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to ``exp(weights)``."""
    w = np.asarray(weights, dtype=float).ravel()
    m = w.max() if w.size else -np.inf
    if not np.isfinite(m):
        raise DegenerateDistributionError("all log weights are -inf")
    p = np.exp(w - m)
    c = np.cumsum(p)
    idx = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
    return min(idx, w.size - 1)


def sample_crt(counts, concentration, rng: np.random.Generator) -> np.ndarray:
    """Chinese-restaurant-table counts: number of tables for n customers at concentration a."""
    counts = np.asarray(counts, dtype=np.int64)
    conc = np.broadcast_to(np.asarray(concentration, dtype=float), counts.shape)
    out = np.zeros(counts.shape, dtype=np.int64)
    for idx in zip(*np.nonzero(counts)):
        n = counts[idx]
        a = conc[idx]
        out[idx] = int(np.sum(rng.random(n) < a / (a + np.arange(n))))
    return out


def truncated_poisson_logpmf(rate: float, d_max: int) -> np.ndarray:
    """Poisson log pmf renormalized to support {1..d_max}; index 0 is -inf.

    Returns a length ``d_max + 1`` array.
    """
    d = np.arange(d_max + 1)
    lp = d * np.log(rate) - rate - gammaln(d + 1.0)
    lp[0] = -np.inf
    return lp - log_sum_exp(lp[1:])


def poisson_truncation_mass(rate: float, d_max: int) -> float:
    """Probability mass of an untruncated Poisson falling outside {1..d_max}."""
    return float(stats.poisson.pmf(0, rate) + stats.poisson.sf(d_max, rate))
