"""Coupling operator T = dGamma(tau), its spectral projectors and minimal gap."""

from dataclasses import dataclass, field

import numpy as np

from . import fock
from ._linalg import as_square, require_hermitian
from .errors import DegeneracyAmbiguityError, DegenerateCouplingError, ConfigurationError

CLUSTER_TOL = 1e-8


@dataclass(frozen=True)
class SpectralDecomposition:
    """Distinct eigenvalues (ascending) with their orthogonal projectors."""

    eigenvalues: np.ndarray
    projectors: tuple = field(repr=False)
    multiplicities: tuple

    def __len__(self):
        return len(self.eigenvalues)

    def reconstruct(self):
        return sum(mu * p for mu, p in zip(self.eigenvalues, self.projectors))

    def index_of(self, value, tol=CLUSTER_TOL):
        hits = np.flatnonzero(np.abs(self.eigenvalues - value) <= 10 * tol)
        if len(hits) != 1:
            raise KeyError(f"{value} is not in the spectrum {self.eigenvalues}")
        return int(hits[0])

    def projector(self, value):
        return self.projectors[self.index_of(value)]


def _cluster(values, tol):
    """Group sorted values into chains whose consecutive gaps are <= tol.

    Returns (representatives, labels) with labels indexing the representatives.
    """
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    labels = np.empty(len(values), dtype=int)
    reps, members = [], []
    for pos, i in enumerate(order):
        if pos and values[i] - values[order[pos - 1]] <= tol:
            members[-1].append(i)
        else:
            members.append([i])
        labels[i] = len(members) - 1
    reps = np.array([values[m].mean() for m in members])
    close = np.flatnonzero(np.diff(reps) < 10 * tol)
    if len(close):
        k = close[0]
        raise DegeneracyAmbiguityError(
            f"eigenvalue clusters {reps[k]:.12g} and {reps[k + 1]:.12g} are closer than "
            f"10*cluster_tol={10 * tol:g} but were not merged"
        )
    return reps, labels


def spectral_decompose(h, cluster_tol=CLUSTER_TOL):
    """Spectral decomposition of a Hermitian matrix with eigenvalue clustering."""
    if cluster_tol <= 0:
        raise ConfigurationError("cluster_tol must be positive")
    h = require_hermitian(h)
    w, v = np.linalg.eigh(h)
    reps, labels = _cluster(w, cluster_tol)
    projectors = []
    mult = []
    for k in range(len(reps)):
        cols = v[:, labels == k]
        projectors.append(cols @ cols.conj().T)
        mult.append(cols.shape[1])
    return SpectralDecomposition(reps, tuple(projectors), tuple(mult))


def _gap(eigenvalues):
    if len(eigenvalues) < 2:
        return float("inf")
    return float(np.min(np.diff(eigenvalues)))


@dataclass(frozen=True)
class CouplingModel:
    """Coupling operator on Fock space with its spectral data.

    ``labels[i]`` is the index into ``spec.eigenvalues`` of the i-th wedge basis
    vector ``^f_J`` (only for second-quantized couplings; None otherwise).
    """

    basis: fock.FockBasis = field(repr=False)
    tau: np.ndarray | None = field(repr=False)
    f: np.ndarray | None = field(repr=False)
    single_particle_eigs: np.ndarray | None
    T: np.ndarray = field(repr=False)
    spec: SpectralDecomposition = field(repr=False)
    gap: float
    labels: np.ndarray | None = field(repr=False, default=None)
    frame: np.ndarray | None = field(repr=False, default=None)

    @property
    def is_second_quantized(self):
        return self.tau is not None

    @property
    def spectrum(self):
        return self.spec.eigenvalues

    @property
    def projectors(self):
        return self.spec.projectors

    def index_set(self, n, k):
        """Multi-indices J in sector n whose eigenvalue is spec.eigenvalues[k]."""
        sl = self.basis.sector(n)
        states = self.basis.states[sl]
        return [s for s, lab in zip(states, self.labels[sl]) if lab == k]

    def sector_spectrum(self, n):
        """Indices of the spectral values present in sector n."""
        if self.labels is not None:
            return sorted(set(self.labels[self.basis.sector(n)].tolist()))
        sl = self.basis.sector(n)
        return [k for k, p in enumerate(self.projectors) if np.trace(p[sl, sl]).real > 0.5]


def build_coupling(tau, basis, cluster_tol=CLUSTER_TOL):
    """T = dGamma(tau) with projectors built from the wedge eigenbasis of tau."""
    tau = require_hermitian(tau, name="tau")
    if tau.shape[0] != basis.d:
        raise ConfigurationError(f"tau must be {basis.d}x{basis.d}")
    eps, f = np.linalg.eigh(tau)
    return _from_eigensystem(basis, tau, f, eps, cluster_tol)


def _from_eigensystem(basis, tau, f, eps, cluster_tol):
    if np.max(np.abs(eps)) <= cluster_tol:
        raise DegenerateCouplingError("tau = 0 gives a single spectral value; the gap is undefined")
    # structural degeneracies such as eps1 + eps2 = 0 must be exact, so the
    # many-particle sums are formed from clustered one-particle values
    eps_reps, eps_labels = _cluster(eps, cluster_tol)
    eps_clean = eps_reps[eps_labels]
    mu = np.array([sum(eps_clean[j - 1] for j in s) for s in basis.states])
    reps, labels = _cluster(mu, cluster_tol)
    frame = fock.second_quantize_unitary(basis, f)
    projectors, mult = [], []
    for k in range(len(reps)):
        cols = frame[:, labels == k]
        projectors.append(cols @ cols.conj().T)
        mult.append(cols.shape[1])
    spec = SpectralDecomposition(reps, tuple(projectors), tuple(mult))
    T = fock.second_quantize_generator(basis, tau, check=False)
    err = np.abs(spec.reconstruct() - T).max()
    if err > 1e-8 * max(1.0, np.abs(T).max()):
        raise DegeneracyAmbiguityError(f"projector reconstruction of T failed (error {err:.3e})")
    return CouplingModel(
        basis=basis,
        tau=tau,
        f=f,
        single_particle_eigs=np.asarray(eps, dtype=float),
        T=T,
        spec=spec,
        gap=_gap(reps),
        labels=labels,
        frame=frame,
    )


def coupling_from_operator(T, basis, cluster_tol=CLUSTER_TOL):
    """Coupling given directly as a Hermitian operator on Fock space.

    The large-coupling results do not need the second-quantized structure, but
    the assumption checkers in :mod:`fermiwalk.spectral` refuse such models.
    """
    T = require_hermitian(T, name="T")
    if T.shape[0] != basis.dim:
        raise ConfigurationError(f"T must be {basis.dim}x{basis.dim}")
    spec = spectral_decompose(T, cluster_tol)
    if len(spec) < 2:
        raise DegenerateCouplingError("T has a single spectral value; the gap is undefined")
    return CouplingModel(basis=basis, tau=None, f=None, single_particle_eigs=None,
                         T=as_square(T), spec=spec, gap=_gap(spec.eigenvalues))


def hop_tau(d, phi=0.0):
    tau = np.zeros((d, d), dtype=complex)
    tau[1, 0] = np.exp(1j * phi)
    tau[0, 1] = np.exp(-1j * phi)
    return tau


def hop_eigenbasis(d, phi=0.0):
    """Columns f_1 = (e1 + e^{i phi} e2)/sqrt2, f_2 = (e1 - e^{i phi} e2)/sqrt2, f_j = e_j."""
    f = np.eye(d, dtype=complex)
    s = 1 / np.sqrt(2)
    f[:2, :2] = [[s, s], [s * np.exp(1j * phi), -s * np.exp(1j * phi)]]
    return f


def build_T_hop(d, phi=0.0, basis=None, cluster_tol=CLUSTER_TOL):
    """Hopping coupling between sites 1 and 2 with Peierls phase phi (d >= 3)."""
    if d < 3:
        raise ConfigurationError(f"the hopping model needs d >= 3, got {d}")
    basis = basis or fock.enumerate_basis(d)
    eps = np.zeros(d)
    eps[:2] = [1.0, -1.0]
    return _from_eigensystem(basis, hop_tau(d, phi), hop_eigenbasis(d, phi), eps, cluster_tol)


def hop_projectors_closed_form(basis, phi=0.0):
    """B+ = n+(1-n-), B- = n-(1-n+), B0 = 1 - B+ - B- from the f_1, f_2 number operators."""
    f = hop_eigenbasis(basis.d, phi)
    a_plus = fock.annihilation_op_vec(basis, f[:, 0])
    a_minus = fock.annihilation_op_vec(basis, f[:, 1])
    n_plus = a_plus.conj().T @ a_plus
    n_minus = a_minus.conj().T @ a_minus
    one = np.eye(basis.dim)
    b_plus = n_plus @ (one - n_minus)
    b_minus = n_minus @ (one - n_plus)
    return {1.0: b_plus, -1.0: b_minus, 0.0: one - b_plus - b_minus}


@dataclass(frozen=True)
class MNDReport:
    per_sector: dict
    holds: bool
    tau_not_scalar: bool | None


def check_MND(model):
    """T restricted to each sector 0 < n < d must not be a multiple of the identity."""
    d = model.basis.d
    per_sector = {n: len(model.sector_spectrum(n)) >= 2 for n in range(1, d)}
    tau_ok = None
    if model.tau is not None:
        c = np.trace(model.tau).real / d
        tau_ok = bool(np.abs(model.tau - c * np.eye(d)).max() > CLUSTER_TOL)
    return MNDReport(per_sector=per_sector, holds=all(per_sector.values()), tau_not_scalar=tau_ok)
