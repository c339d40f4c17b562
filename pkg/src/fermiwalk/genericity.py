"""Haar-random unitaries and empirical checks that minors and assumptions are generic."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import ConfigurationError

MAX_SCAN_SITES = 8


@dataclass(frozen=True)
class HaarSample:
    seed: int
    index: int
    U: np.ndarray = field(repr=False)


def sample_rng(seed, index=0):
    """Independent generator for sample ``index`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def haar_unitary(d, rng):
    """Ginibre matrix, QR, and the phase fix that makes the law exactly Haar."""
    if d < 1:
        raise ConfigurationError("d must be >= 1")
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def haar_sample(d, seed, index=0):
    return HaarSample(int(seed), int(index), haar_unitary(d, sample_rng(seed, index)))


@dataclass(frozen=True)
class MinorScan:
    minima: dict
    argmin: dict

    @property
    def overall_min(self):
        return min(self.minima.values())


def minor_scan(U, n_max=None):
    """Smallest |det U[rows, cols]| over all n x n minors, for n = 1..n_max."""
    U = np.asarray(U, dtype=complex)
    d = U.shape[0]
    if d > MAX_SCAN_SITES:
        raise ConfigurationError(f"full minor scans are limited to d <= {MAX_SCAN_SITES}")
    n_max = d if n_max is None else n_max
    if not 1 <= n_max <= d:
        raise ConfigurationError(f"n_max must be in 1..{d}")
    minima, argmin = {}, {}
    for n in range(1, n_max + 1):
        subsets = np.array(list(combinations(range(d), n)))
        rows = U[subsets]  # (m, n, d)
        vals = np.stack([np.abs(np.linalg.det(rows[:, :, c])) for c in subsets], axis=1)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        minima[n] = float(vals[i, j])
        argmin[n] = (tuple(int(x) + 1 for x in subsets[i]), tuple(int(x) + 1 for x in subsets[j]))
    return MinorScan(minima, argmin)


def run_samples(fn, d, seed, count, threads=1):
    """Apply fn(HaarSample) to samples 0..count-1; order of results is the sample order."""
    samples = (haar_sample(d, seed, i) for i in range(count))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, samples))
    return [fn(s) for s in samples]


def pass_rate(flags):
    flags = list(flags)
    return sum(bool(f) for f in flags) / len(flags) if flags else float("nan")
