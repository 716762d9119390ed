"""Statistical engine: covariance estimation, Gaussian density, local-limit
tables, reproducible counter-based RNG streams, and goodness-of-fit tests.

Every estimator is deterministic given an RngSpec: all randomness flows from a
single Philox counter-based stream in a fixed draw order, and reductions use
numpy's pairwise summation on arrays in a fixed order, so results do not
depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

FLAG_SIGMAS = 3.0  # flagging threshold
HARD_SIGMAS = 4.0  # hard test-failure threshold


class SingularSigma(ValueError):
    pass


class NotPositiveDefinite(ValueError):
    def __init__(self, eigenvalues):
        self.eigenvalues = eigenvalues
        super().__init__(f"covariance not positive definite: eigenvalues {eigenvalues}")


@dataclass(frozen=True)
class RngSpec:
    """Counter-based stream key: (seed, stream) pairs never collide."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngSpec):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, int):
        return RngSpec(rng).generator()
    raise TypeError(f"cannot interpret {rng!r} as an RNG")


@dataclass
class EstimateWithCI:
    """Monte Carlo estimate with its standard error."""

    value: float
    stderr: float
    n_samples: int
    censored: int = 0

    def agrees(self, other: float, sigmas: float = HARD_SIGMAS) -> bool:
        return abs(self.value - other) <= sigmas * self.stderr

    def as_dict(self):
        return {
            "value": self.value,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "censored": self.censored,
        }


def mean_estimate(samples: np.ndarray, censored: int = 0) -> EstimateWithCI:
    """iid mean with its standard error (samples are independent draws)."""
    n = samples.shape[0]
    value = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimateWithCI(value=value, stderr=stderr, n_samples=n, censored=censored)


def binomial_estimate(hits: int, n: int, censored: int = 0) -> EstimateWithCI:
    p = hits / n
    return EstimateWithCI(
        value=p,
        stderr=math.sqrt(max(p * (1.0 - p), 0.0) / n),
        n_samples=n,
        censored=censored,
    )


@dataclass
class CovarianceMatrix:
    """2x2 symmetric positive-definite matrix with per-entry standard errors."""

    matrix: np.ndarray
    stderr: np.ndarray | None = None
    n_samples: int = 0
    n_steps: int = 0

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if np.abs(m - m.T).max() > 1e-12:
            raise ValueError("covariance matrix not symmetric")
        eig = np.linalg.eigvalsh(m)
        if eig.min() <= 0.0:
            raise NotPositiveDefinite(eig)
        self.matrix = m

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def det_stderr(self) -> float:
        """First-order propagation: det = ab - c^2 over entries (a,b,c)."""
        if self.stderr is None:
            return 0.0
        a, b = self.matrix[0, 0], self.matrix[1, 1]
        c = self.matrix[0, 1]
        sa, sb = self.stderr[0, 0], self.stderr[1, 1]
        sc = self.stderr[0, 1]
        return math.sqrt((b * sa) ** 2 + (a * sb) ** 2 + (2 * c * sc) ** 2)


def gaussian_density(x, sigma: CovarianceMatrix | np.ndarray) -> float:
    """Density of the centered planar Gaussian with covariance Sigma.

    exp(-<Sigma^-1 x, x>/2) / (2 pi sqrt(det Sigma)).  The inverse-covariance
    exponent is the convention fixed empirically by the lattice-walk ratio
    test at off-center cells; at x = 0 both readings coincide.
    """
    m = sigma.matrix if isinstance(sigma, CovarianceMatrix) else np.asarray(sigma)
    det = float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])
    if det <= 1e-14:
        raise SingularSigma(f"det Sigma = {det:.3e}")
    x = np.asarray(x, dtype=np.float64)
    inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    expo = -0.5 * float(x @ inv @ x)
    return math.exp(expo) / (2.0 * math.pi * math.sqrt(det))


def llt_constant(sigma: CovarianceMatrix | np.ndarray, period: int = 1) -> float:
    """Limit of n * P(S_n = 0) along attainable times: period * Phi_B(0)."""
    return period * gaussian_density((0.0, 0.0), sigma)


def estimate_sigma(
    system,
    n_sigma: int,
    n_samples: int,
    rng,
    n_batches: int = 20,
) -> CovarianceMatrix:
    """Empirical covariance of S_n / sqrt(n) over independent samples.

    Standard errors come from fixed-order batch means (20 batches); a drift
    check asserts |mean(S_n)| / n stays within 4 batch-mean standard errors
    of zero.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    gen = as_generator(rng)
    batch = system.sample_batch(n_samples, gen)
    _, sums = system.trace_checkpoints(batch, [n_sigma], gen)
    s = sums[:, 0, :].astype(np.float64)

    scaled = s / math.sqrt(n_sigma)
    mean = scaled.mean(axis=0)
    centered = scaled - mean
    cov = (centered.T @ centered) / (n_samples - 1)

    splits = np.array_split(np.arange(n_samples), n_batches)
    cov_b = []
    mean_b = []
    for idx in splits:
        sb = scaled[idx]
        mb = sb.mean(axis=0)
        cb = (sb - mb).T @ (sb - mb) / (len(idx) - 1)
        cov_b.append(cb)
        mean_b.append(mb)
    cov_b = np.array(cov_b)
    mean_b = np.array(mean_b)
    stderr = cov_b.std(axis=0, ddof=1) / math.sqrt(n_batches)
    mean_se = mean_b.std(axis=0, ddof=1) / math.sqrt(n_batches)

    drift = np.abs(mean)
    if (drift > HARD_SIGMAS * np.maximum(mean_se, 1e-300)).any():
        raise ValueError(
            f"drift check failed: mean(S_n)/sqrt(n) = {mean}, se = {mean_se}"
        )
    return CovarianceMatrix(
        matrix=cov, stderr=stderr, n_samples=n_samples, n_steps=n_sigma
    )


def empirical_cell_prob(system, n: int, cell, n_samples: int, rng) -> EstimateWithCI:
    """Fraction of mu-bar samples with S_n = cell, binomial standard error."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    gen = as_generator(rng)
    batch = system.sample_batch(n_samples, gen)
    _, sums = system.trace_checkpoints(batch, [n], gen)
    cell = np.asarray(cell, dtype=np.int64)
    hits = int((sums[:, 0, :] == cell).all(axis=1).sum())
    return binomial_estimate(hits, n_samples)


def empirical_cell_probs(system, n_list, cells, n_samples: int, rng):
    """Shared-sample (common random numbers) version over an n grid."""
    gen = as_generator(rng)
    batch = system.sample_batch(n_samples, gen)
    n_list = sorted(n_list)
    _, sums = system.trace_checkpoints(batch, n_list, gen)
    out = {}
    for i, n in enumerate(n_list):
        for cell in cells:
            c = np.asarray(cell, dtype=np.int64)
            hits = int((sums[:, i, :] == c).all(axis=1).sum())
            out[(n, tuple(cell))] = binomial_estimate(hits, n_samples)
    return out


@dataclass
class LltRow:
    n: int
    cell: tuple[int, int]
    n_phat: float
    phi_b: float
    ratio: float
    stderr: float
    exact: bool
    flag: bool

    def as_csv_row(self):
        return [
            self.n,
            self.cell[0],
            self.cell[1],
            f"{self.n_phat:.10g}",
            f"{self.phi_b:.10g}",
            f"{self.ratio:.10g}",
            f"{self.stderr:.4g}",
            int(self.flag),
        ]


LLT_CSV_HEADER = ["n", "lx", "ly", "n_phat", "phi_b", "ratio", "stderr", "flag"]


def llt_report(
    system,
    n_list,
    cells,
    n_samples: int,
    sigma: CovarianceMatrix,
    rng=None,
    exact: bool = False,
    ratio_tol: float | None = None,
):
    """Compare n * P(S_n = cell) against the Gaussian local-limit profile.

    The target column is period * Phi_B(cell / sqrt(n)): for an aperiodic
    system this is the plain density value; a lattice period g multiplies the
    density by g on attainable times (off-lattice rows are skipped).  Monte
    Carlo rows are flagged at 3 * n * stderr; exact rows (stderr 0) use
    ratio_tol when given.
    """
    g = getattr(system, "lattice_period", 1)
    rows = []
    if exact:
        from . import markov

        for n in sorted(n_list):
            dist = markov.exact_distribution(system, n)
            for cell in cells:
                p = dist.q(cell)
                if p == 0.0:
                    continue  # off the attainable sublattice at this n
                x = np.asarray(cell, dtype=np.float64) / math.sqrt(n)
                target = g * gaussian_density(x, sigma)
                ratio = n * p / target
                flag = ratio_tol is not None and abs(ratio - 1.0) > ratio_tol
                rows.append(
                    LltRow(n, tuple(cell), n * p, target, ratio, 0.0, True, flag)
                )
        return rows

    est = empirical_cell_probs(system, n_list, cells, n_samples, rng)
    for (n, cell), e in sorted(est.items()):
        x = np.asarray(cell, dtype=np.float64) / math.sqrt(n)
        target = g * gaussian_density(x, sigma)
        n_phat = n * e.value
        flag = abs(n_phat - target) > FLAG_SIGMAS * n * e.stderr
        ratio = n_phat / target if target else math.inf
        rows.append(LltRow(n, cell, n_phat, target, ratio, e.stderr, False, flag))
    return rows


def ks_test(sample, cdf) -> tuple[float, float]:
    """Two-sided one-sample Kolmogorov-Smirnov test, asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = x.shape[0]
    if n < 100:
        raise ValueError("sample size must be >= 100")
    f = cdf(x)
    grid = np.arange(1, n + 1) / n
    d_plus = float((grid - f).max())
    d_minus = float((f - (grid - 1.0 / n)).max())
    d = max(d_plus, d_minus)
    p = float(special.kolmogorov(math.sqrt(n) * d))
    return d, p
