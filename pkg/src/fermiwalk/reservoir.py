"""Quasi-free reservoir symbol K and the Gaussian path weights it induces.

Only finite sections ``K_ij = <delta_i, K delta_j>``, ``1 <= i, j <= t`` are ever
needed, so a symbol is a pure kernel function plus a cache of its largest
evaluated section. Kernels are real and symmetric.
"""

import threading
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

KINDS = ("identity", "diagonal", "thermal", "kernel-table", "custom")
LOWER_BOUND_TOL = 1e-10
THERMAL_POINTS = 2048
THERMAL_STABLE_TOL = 1e-10
THERMAL_MAX_POINTS = 1 << 20


class SymbolLowerBoundWarning(UserWarning):
    """The evaluated section of K has an eigenvalue below 1."""


@dataclass(frozen=True)
class Dispersion:
    """Translation-invariant reservoir Hamiltonian, omega(q) = E0 - 2 J cos q."""

    E0: float
    J: float = 0.0

    def __call__(self, q):
        return self.E0 - 2.0 * self.J * np.cos(q)

    @property
    def minimum(self):
        return self.E0 - 2.0 * abs(self.J)

    @classmethod
    def from_dict(cls, desc):
        kind = desc.get("type", "flat")
        if kind == "flat":
            return cls(E0=float(desc["E0"]))
        if kind == "cosine":
            return cls(E0=float(desc["E0"]), J=float(desc.get("J", 0.0)))
        raise ConfigurationError(f"unknown dispersion type {kind!r} (expected 'flat' or 'cosine')")

    def to_dict(self):
        if self.J == 0.0:
            return {"type": "flat", "E0": self.E0}
        return {"type": "cosine", "E0": self.E0, "J": self.J}


@dataclass(eq=False)
class ReservoirSymbol:
    kind: str
    params: dict = field(default_factory=dict)
    kernel_fn: object = field(default=None, repr=False)
    _section: np.ndarray = field(default=None, init=False, repr=False)
    _lock: object = field(default_factory=threading.Lock, init=False, repr=False)

    def kernel(self, i, j):
        """<delta_i, K delta_j> for sites i, j >= 1."""
        if i < 1 or j < 1:
            raise ConfigurationError("reservoir sites are indexed from 1")
        return float(self.kernel_fn(int(i), int(j)))

    def section(self, t):
        """The t x t matrix (K_ij), computed once per symbol and cached."""
        sec = self._section
        if sec is not None and sec.shape[0] >= t:
            return sec[:t, :t]
        with self._lock:
            sec = self._section
            if sec is None or sec.shape[0] < t:
                sec = np.array([[self.kernel(i, j) for j in range(1, t + 1)]
                                for i in range(1, t + 1)], dtype=float).reshape(t, t)
                sec.setflags(write=False)
                self._section = sec
        return sec[:t, :t]

    @property
    def is_diagonal(self):
        if self.kind == "thermal":
            return "J" not in self.params["dispersion"]
        return self.kind in ("identity", "diagonal")

    def diagonal_values(self, t):
        return np.array([self.kernel(j, j) for j in range(1, t + 1)])

    def to_dict(self):
        out = {"kind": self.kind}
        out.update(self.params)
        return out


def identity_symbol():
    return ReservoirSymbol("identity", {}, lambda i, j: 1.0 if i == j else 0.0)


def diagonal_symbol(k):
    """K delta_j = k_j delta_j; a scalar k means the same value on every site."""
    if np.isscalar(k):
        k = float(k)
        if k < 1 - LOWER_BOUND_TOL:
            warnings.warn(f"diagonal symbol value {k} < 1", SymbolLowerBoundWarning, stacklevel=2)
        return ReservoirSymbol("diagonal", {"k": k}, lambda i, j: k if i == j else 0.0)
    values = tuple(float(x) for x in k)
    if not values:
        raise ConfigurationError("diagonal symbol needs at least one value")

    def kern(i, j):
        if i != j:
            return 0.0
        if i > len(values):
            raise ConfigurationError(f"diagonal symbol defined on sites 1..{len(values)}, site {i} requested")
        return values[i - 1]

    return ReservoirSymbol("diagonal", {"k": list(values)}, kern)


def table_symbol(table):
    """Explicit t_max x t_max kernel table (real symmetric)."""
    table = np.array(table, dtype=float)
    if table.ndim != 2 or table.shape[0] != table.shape[1]:
        raise ConfigurationError("kernel table must be square")
    if np.abs(table - table.T).max() > 1e-12:
        raise ConfigurationError("kernel table must be symmetric")
    tmax = table.shape[0]

    def kern(i, j):
        if i > tmax or j > tmax:
            raise ConfigurationError(f"kernel table covers sites 1..{tmax}, ({i}, {j}) requested")
        return table[i - 1, j - 1]

    return ReservoirSymbol("kernel-table", {"table": table.tolist()}, kern)


def custom_symbol(fn, symmetric_check=8):
    """Symbol from an arbitrary real kernel function fn(i, j)."""
    for i in range(1, symmetric_check + 1):
        for j in range(i + 1, symmetric_check + 1):
            if abs(fn(i, j) - fn(j, i)) > 1e-12:
                raise ConfigurationError("custom kernel must be symmetric")
    return ReservoirSymbol("custom", {}, fn)


def _thermal_coefficients(beta, mu, disp, n_points):
    q = 2 * np.pi * np.arange(n_points) / n_points
    x = beta * (disp(q) - mu) / 2
    g = 1.0 / np.tanh(x)
    return np.fft.fft(g).real / n_points


def thermal_kernel(beta, mu, dispersion):
    """Gibbs state symbol K = coth(beta (H_B - mu)/2) for a translation-invariant H_B.

    ``dispersion`` is a :class:`Dispersion` or a dict descriptor. Entries are the
    Fourier coefficients of coth on the torus, from a periodic trapezoid rule that
    is doubled until the first coefficients stabilise.
    """
    if not beta > 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    disp = dispersion if isinstance(dispersion, Dispersion) else Dispersion.from_dict(dispersion)
    if not disp.minimum - mu > 0:
        raise ConfigurationError(
            f"invalid thermal parameters: H_B - mu must be positive (min dispersion {disp.minimum} <= mu={mu})"
        )
    if disp.J == 0.0:
        value = 1.0 / np.tanh(beta * (disp.E0 - mu) / 2)
        coeffs = np.zeros(1)
        coeffs[0] = value
    else:
        n = THERMAL_POINTS
        coeffs = _thermal_coefficients(beta, mu, disp, n)
        while True:
            finer = _thermal_coefficients(beta, mu, disp, 2 * n)
            m = n // 2
            if np.abs(finer[:m] - coeffs[:m]).max() <= THERMAL_STABLE_TOL:
                coeffs = finer[:n]
                break
            if 2 * n >= THERMAL_MAX_POINTS:
                raise ConfigurationError("thermal kernel quadrature did not converge")
            coeffs, n = finer, 2 * n
        coeffs = coeffs[: n // 2]

    def kern(i, j):
        m = abs(i - j)
        if m >= len(coeffs):
            if disp.J == 0.0:
                return 0.0
            raise ConfigurationError("thermal kernel requested beyond the resolved range")
        return coeffs[m]

    return ReservoirSymbol("thermal", {"beta": float(beta), "mu": float(mu),
                                       "dispersion": disp.to_dict()}, kern)


def symbol_from_dict(desc):
    """Build a symbol from a config descriptor {"kind": ..., parameters...}."""
    kind = desc.get("kind")
    if kind == "identity":
        return identity_symbol()
    if kind == "diagonal":
        return diagonal_symbol(desc["k"])
    if kind == "thermal":
        return thermal_kernel(desc["beta"], desc.get("mu", 0.0), desc["dispersion"])
    if kind == "kernel-table":
        return table_symbol(desc["table"])
    raise ConfigurationError(f"unknown reservoir kind {kind!r}; expected one of identity, diagonal, thermal, kernel-table")


def _as_theta(theta):
    if isinstance(theta, dict):
        if not theta:
            return np.zeros(0)
        t = max(theta)
        out = np.zeros(t)
        for site, val in theta.items():
            if site < 1:
                raise ConfigurationError("theta sites are indexed from 1")
            out[site - 1] = val
        return out
    return np.asarray(theta, dtype=float).reshape(-1)


def quadratic_form(sym, theta):
    theta = _as_theta(theta)
    support = np.flatnonzero(theta)
    if len(support) == 0:
        return 0.0
    sec = sym.section(int(support[-1]) + 1)
    th = theta[: sec.shape[0]]
    return float(th @ sec @ th)


def gaussian_weight(sym, theta, lam):
    """exp(-lam^2/4 <theta, K theta>) for a finitely supported theta on sites 1..t."""
    q = quadratic_form(sym, theta)
    return float(np.exp(-(lam ** 2) / 4 * q))


def check_symbol_lower_bound(sym, t):
    """Smallest eigenvalue of the t-section; warns when below 1."""
    if t < 1:
        raise ConfigurationError("t must be >= 1")
    lo = float(np.linalg.eigvalsh(sym.section(t)).min())
    if lo < 1 - LOWER_BOUND_TOL:
        warnings.warn(f"K >= 1 violated on the {t}-section (min eigenvalue {lo:.6g})",
                      SymbolLowerBoundWarning, stacklevel=2)
    return lo
