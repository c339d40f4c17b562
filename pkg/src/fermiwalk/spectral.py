"""Spectral analysis of the infinite-coupling map V o Phi and the genericity assumptions.

The contraction V o Phi is non-normal, so invariant subspaces come from ordered
complex Schur forms, never from eigenvector matrices.
"""

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.linalg import schur

from . import fock
from ._linalg import dagger, op_norm, require_unitary
from .errors import (ClassificationAmbiguityError, ConfigurationError, HypothesisViolationError,
                     UnsupportedCouplingError)

CIRCLE_TOL = 1e-9
ASSUMPTION_TOL = 1e-10
GAMMA_MARGIN = 0.99
PERIPHERAL_CLUSTER_TOL = 1e-6
BOUND_STEPS = 200
DECAY_FLOOR = 1e-12  # decaying moduli below this are treated as exact zeros


@dataclass
class ContractionSplit:
    peripheral_eigenvalues: np.ndarray
    peripheral_multiplicities: tuple
    peripheral_projectors: tuple = field(repr=False)
    P_circle: np.ndarray = field(repr=False)
    P_less: np.ndarray = field(repr=False)
    gamma_raw: float
    gamma: float
    C_bound: float | None
    eigenvalues: np.ndarray = field(repr=False)
    n_peripheral: int
    commutation_error: float

    def projector_for(self, value, tol=PERIPHERAL_CLUSTER_TOL):
        hits = np.flatnonzero(np.abs(self.peripheral_eigenvalues - value) <= tol)
        if len(hits) != 1:
            return None
        return self.peripheral_projectors[hits[0]]

    def multiplicity_of(self, value, tol=PERIPHERAL_CLUSTER_TOL):
        hits = np.flatnonzero(np.abs(self.peripheral_eigenvalues - value) <= tol)
        return int(sum(self.peripheral_multiplicities[h] for h in hits))

    @property
    def subdominant_modulus(self):
        return math.exp(-self.gamma_raw) if math.isfinite(self.gamma_raw) else 0.0


def _cluster_on_circle(values, tol):
    reps, members = [], []
    for i, v in enumerate(values):
        for k, r in enumerate(reps):
            if abs(v - r) <= tol:
                members[k].append(i)
                break
        else:
            reps.append(v)
            members.append([i])
    reps = [np.mean(values[m]) for m in members]
    order = sorted(range(len(reps)), key=lambda k: (round(np.angle(reps[k]) % (2 * np.pi), 9), k))
    return [reps[k] for k in order], [members[k] for k in order]


def split_contraction(maps, circle_tol=CIRCLE_TOL, bound_steps=BOUND_STEPS, compute_bound=True):
    """Peripheral / decaying decomposition of V o Phi with decay rate and fitted constant."""
    M = maps.superop_VPhi
    n = M.shape[0]
    T, Z, sdim = schur(M, output="complex", sort=lambda z: abs(z) >= 1 - circle_tol)
    eigs = np.diag(T).copy()
    mod = np.abs(eigs)
    band = (mod >= 1 - 10 * circle_tol) & (mod < 1 - circle_tol)
    if band.any():
        bad = eigs[band][0]
        raise ClassificationAmbiguityError(
            f"eigenvalue {bad:.12g} (modulus {abs(bad):.12g}) lies in the ambiguous band "
            f"[1-{10 * circle_tol:g}, 1-{circle_tol:g})")
    Zp = Z[:, :sdim]
    P_circle = Zp @ dagger(Zp)
    P_less = np.eye(n) - P_circle
    comm = float(np.abs(M @ P_circle - P_circle @ M).max()) if sdim else 0.0

    projs, reps, mults = [], [], []
    if sdim:
        A = dagger(Zp) @ M @ Zp
        TA, W = schur(A, output="complex")
        vals = np.diag(TA)
        reps, members = _cluster_on_circle(vals, PERIPHERAL_CLUSTER_TOL)
        for m in members:
            cols = Zp @ W[:, m]
            projs.append(cols @ dagger(cols))
            mults.append(len(m))
    rest = mod[sdim:]
    gamma_raw = -math.log(rest.max()) if len(rest) and rest.max() > DECAY_FLOOR else math.inf
    gamma = GAMMA_MARGIN * gamma_raw
    c_bound = None
    if compute_bound:
        c_bound = decay_constant(M, P_less, gamma, bound_steps)
    return ContractionSplit(
        peripheral_eigenvalues=np.array(reps, dtype=complex),
        peripheral_multiplicities=tuple(mults),
        peripheral_projectors=tuple(projs),
        P_circle=P_circle,
        P_less=P_less,
        gamma_raw=gamma_raw,
        gamma=gamma,
        C_bound=c_bound,
        eigenvalues=eigs,
        n_peripheral=int(sdim),
        commutation_error=comm,
    )


def decay_constant(M, P_less, gamma, steps=BOUND_STEPS):
    """Smallest C with ||(M P_less)^k|| <= C e^{-gamma k} for k = 1..steps (fitted, not proven)."""
    if not math.isfinite(gamma):
        return 0.0
    A = M @ P_less
    Ak = A.copy()
    best = -math.inf
    for k in range(1, steps + 1):
        nrm = op_norm(Ak)
        if nrm == 0.0:
            break
        best = max(best, math.log(nrm) + gamma * k)
        Ak = A @ Ak
    if best == -math.inf:
        return 0.0
    return math.exp(best) if best < 700 else math.inf


def peripheral_residuals(maps, split):
    """max ||V(X) - e^{i theta} X|| and ||Phi(X) - X|| over peripheral eigenvectors X."""
    res_v, res_phi = 0.0, 0.0
    for z, P in zip(split.peripheral_eigenvalues, split.peripheral_projectors):
        w, U = np.linalg.eigh(P)
        cols = U[:, w > 0.5]
        for x in cols.T:
            res_v = max(res_v, float(np.linalg.norm(maps.superop_V @ x - z * x)))
            res_phi = max(res_phi, float(np.linalg.norm(maps.superop_Phi @ x - x)))
    return res_v, res_phi


def filled_state_in_kernel(coupling, tol=1e-8):
    """Whether the fully occupied state F lies in ker T."""
    F = np.zeros(coupling.basis.dim, dtype=complex)
    F[-1] = 1.0
    return bool(np.linalg.norm(coupling.T @ F) <= tol)


def predicted_peripheral(V, coupling):
    det = complex(np.linalg.det(V))
    if filled_state_in_kernel(coupling):
        return [1.0 + 0j, det, det.conjugate()]
    return [1.0 + 0j]


def compare_peripheral(split, predicted, tol=1e-8):
    """Max distance between the computed peripheral set and the predicted one (as sets)."""
    found = list(split.peripheral_eigenvalues)
    pred = []
    for z in predicted:
        if all(abs(z - p) > tol for p in pred):
            pred.append(z)
    if not found or not pred:
        return math.inf if found or pred else 0.0
    a = max(min(abs(f - p) for p in pred) for f in found)
    b = max(min(abs(f - p) for f in found) for p in pred)
    return float(max(a, b))


def eigensystem_of_unitary(V):
    """Phases alpha_k and orthonormal eigenvectors psi_k (columns) of a unitary V."""
    V = require_unitary(V, name="V")
    T, W = schur(V, output="complex")
    return np.angle(np.diag(T)), W


def _circ(x):
    return np.abs((x + np.pi) % (2 * np.pi) - np.pi)


def _min_circular_gap(phases):
    p = np.sort(np.mod(phases, 2 * np.pi))
    if len(p) < 2:
        return math.inf
    gaps = np.diff(p)
    return float(min(gaps.min(), 2 * np.pi - (p[-1] - p[0])))


@dataclass
class SNDReport:
    holds: bool
    min_distance: float
    literal_holds: bool
    literal_min_distance: float
    phases: np.ndarray = field(repr=False)


def check_SND(V, tol=ASSUMPTION_TOL, literal=True):
    """Spectral non-degeneracy of X -> Gamma(V)^* X Gamma(V) beyond the trivial degeneracy.

    The eigenvalue of |psi_J><psi_I| is exp(-i(sum_J alpha - sum_I alpha)) and only
    depends on the disjoint pair (J \\ I, I \\ J). ``holds`` requires those reduced
    phases, including 0 for the diagonal class, to be pairwise distinct mod 2 pi.
    ``literal_holds`` applies the condition to every ordered pair (I, J) instead;
    it fails for every d >= 2 because, e.g., |psi_2><Omega| and |psi_12><psi_1|
    share a phase.
    """
    alpha, _ = eigensystem_of_unitary(V)
    d = len(alpha)
    phases = np.array([sum(alpha[j] if c == 1 else -alpha[j] if c == 2 else 0.0
                           for j, c in enumerate(code))
                       for code in product((0, 1, 2), repeat=d)])
    gap = _min_circular_gap(phases)
    lit_holds, lit_gap = None, None
    if literal:
        if d > 8:
            raise ConfigurationError("the literal check enumerates 4^d pairs; use d <= 8")
        sums = np.array([sum(alpha[j] for j in range(d) if m >> j & 1) for m in range(1 << d)])
        diff = (sums[:, None] - sums[None, :])
        off = diff[~np.eye(1 << d, dtype=bool)]
        lit_gap = min(_min_circular_gap(off), float(_circ(off).min()))
        lit_holds = lit_gap > tol
    return SNDReport(holds=gap > tol, min_distance=gap, literal_holds=lit_holds,
                     literal_min_distance=lit_gap, phases=alpha)


def _require_second_quantized(coupling):
    if not coupling.is_second_quantized:
        raise UnsupportedCouplingError("assumption checks need a coupling of the form dGamma(tau)")


@dataclass
class MatrixElementReport:
    holds: bool
    minimum: float
    values: dict = field(repr=False)
    C_matrix: np.ndarray = field(repr=False)
    minor_consistency: float


def _wedge_frame(V, coupling):
    """Gamma(W) for V's eigenvectors, C = F^* W, and the direct/minor consistency error."""
    basis = coupling.basis
    _, W = eigensystem_of_unitary(V)
    psi = fock.second_quantize_unitary(basis, W, check=False)
    C = dagger(coupling.f) @ W
    minors = fock.second_quantize_unitary(basis, C, check=False)
    direct = dagger(coupling.frame) @ psi
    return basis, psi, C, minors, float(np.abs(direct - minors).max())


def check_Diag(V, coupling, tol=ASSUMPTION_TOL):
    """|<psi_k, B^mu psi_k>| > tol for 1 <= n <= d-1, k in I_n, mu in sigma(T|_n).

    Values come from sums of squared minors sum_{J in I_n^mu} |c_J(k)|^2 and are
    cross-checked against direct matrix elements.
    """
    _require_second_quantized(coupling)
    basis, psi, C, minors, consistency = _wedge_frame(V, coupling)
    values = {}
    for n in range(1, basis.d):
        sl = basis.sector(n)
        for k_idx, k in enumerate(basis.sector_states(n)):
            col = sl.start + k_idx
            for mu in coupling.sector_spectrum(n):
                mask = coupling.labels[sl] == mu
                via_minor = float(np.sum(np.abs(minors[sl, col][mask]) ** 2))
                direct = abs(psi[:, col].conj() @ coupling.projectors[mu] @ psi[:, col])
                consistency = max(consistency, abs(direct - via_minor))
                values[(n, k, float(coupling.spectrum[mu]))] = via_minor
    low = min(values.values()) if values else math.inf
    return MatrixElementReport(low > tol, low, values, C, consistency)


def check_OffDiag(V, coupling, tol=ASSUMPTION_TOL):
    """For k != l in I_n some mu has |<psi_k, B^mu psi_l>| > tol (1 <= n <= d-1)."""
    _require_second_quantized(coupling)
    basis, psi, C, minors, consistency = _wedge_frame(V, coupling)
    values = {}
    for n in range(1, basis.d):
        sl = basis.sector(n)
        states = basis.sector_states(n)
        block = minors[sl, sl]
        elems = []
        for mu in coupling.sector_spectrum(n):
            mask = coupling.labels[sl] == mu
            sub = block[mask]
            elems.append(dagger(sub) @ sub)
            direct = dagger(psi[sl, sl]) @ coupling.projectors[mu][sl, sl] @ psi[sl, sl]
            consistency = max(consistency, float(np.abs(direct - elems[-1]).max()))
        best = np.max(np.abs(np.array(elems)), axis=0)
        for a in range(len(states)):
            for b in range(len(states)):
                if a != b:
                    values[(n, states[a], states[b])] = float(best[a, b])
    low = min(values.values()) if values else math.inf
    return MatrixElementReport(low > tol, low, values, C, consistency)


@dataclass
class CycSector:
    status: str  # "true", "false" or "inconclusive"
    per_mu: dict


@dataclass
class CycReport:
    sectors: dict

    @property
    def holds(self):
        if any(s.status == "false" for s in self.sectors.values()):
            return False
        if any(s.status == "inconclusive" for s in self.sectors.values()):
            return None
        return True


def _algebra_dimension(gens, cap, tol=1e-9):
    """Dimension of the span of all words in gens up to length cap; (dim, converged)."""
    r = gens[0].shape[0]
    basis = []
    letters = list(gens) + [dagger(g) for g in gens]

    def add(m):
        v = m.reshape(-1)
        nrm = np.linalg.norm(v)
        if nrm < 1e-12:
            return None
        v = v / nrm
        for _ in range(2):
            for b in basis:
                v = v - (b.conj() @ v) * b
        res = np.linalg.norm(v)
        if res <= tol:
            return None
        v = v / res
        basis.append(v)
        return m

    frontier = [m for m in (add(g) for g in letters) if m is not None]
    length = 1
    while frontier and len(basis) < r * r and length < cap:
        length += 1
        nxt = []
        for m in frontier:
            for g in letters:
                new = add(g @ m)
                if new is not None:
                    nxt.append(new)
                    if len(basis) == r * r:
                        break
        frontier = nxt
    converged = not frontier or len(basis) == r * r
    return len(basis), converged


def check_Cyc(V, coupling, tol=ASSUMPTION_TOL):
    """For each 2 <= n <= d-1, some mu makes the *-algebra generated by
    B Gamma_n(V) B, B Gamma_n(V) B^nu Gamma_n(V) B and B Gamma_n(V) B^nu' Gamma_n(V) B
    (B = B_n^mu, compressed to ran B_n^mu) equal to the full matrix algebra there."""
    _require_second_quantized(coupling)
    basis = coupling.basis
    G = fock.second_quantize_unitary(basis, require_unitary(V, name="V"))
    sectors = {}
    for n in range(2, basis.d):
        sl = basis.sector(n)
        present = coupling.sector_spectrum(n)
        if len(present) != 3:
            raise UnsupportedCouplingError(
                f"sector {n} carries {len(present)} spectral values; the cyclicity check needs 3")
        Gn = G[sl, sl]
        P = {mu: coupling.projectors[mu][sl, sl] for mu in present}
        per_mu = {}
        for mu in present:
            w, U = np.linalg.eigh(P[mu])
            Q = U[:, w > 0.5]
            r = Q.shape[1]
            others = [nu for nu in present if nu != mu]
            gens = [dagger(Q) @ Gn @ Q] + [dagger(Q) @ Gn @ P[nu] @ Gn @ Q for nu in others]
            dim, converged = _algebra_dimension(gens, cap=2 * r * r)
            status = "true" if dim == r * r else ("false" if converged else "inconclusive")
            per_mu[float(coupling.spectrum[mu])] = (status, dim, r * r)
        statuses = [s for s, _, _ in per_mu.values()]
        status = "true" if "true" in statuses else ("inconclusive" if "inconclusive" in statuses else "false")
        sectors[n] = CycSector(status, per_mu)
    return CycReport(sectors)


@dataclass
class AssumptionReport:
    snd: SNDReport
    mnd: object
    diag: MatrixElementReport
    offdiag: MatrixElementReport
    cyc: CycReport | None

    @property
    def main_assumptions(self):
        """SND + Diag + OffDiag, the hypotheses of the steady-state result."""
        return bool(self.snd.holds and self.diag.holds and self.offdiag.holds)

    def to_dict(self):
        return {
            "snd": {"holds": self.snd.holds, "min_distance": self.snd.min_distance,
                    "literal_holds": self.snd.literal_holds,
                    "literal_min_distance": self.snd.literal_min_distance},
            "mnd": {"holds": self.mnd.holds, "per_sector": {str(k): v for k, v in self.mnd.per_sector.items()},
                    "tau_not_scalar": self.mnd.tau_not_scalar},
            "diag": {"holds": self.diag.holds, "minimum": self.diag.minimum,
                     "minor_consistency": self.diag.minor_consistency},
            "offdiag": {"holds": self.offdiag.holds, "minimum": self.offdiag.minimum,
                        "minor_consistency": self.offdiag.minor_consistency},
            "cyc": None if self.cyc is None else {
                "holds": self.cyc.holds,
                "sectors": {str(n): {"status": s.status,
                                     "per_mu": {str(mu): {"status": v[0], "dim": v[1], "full": v[2]}
                                                for mu, v in s.per_mu.items()}}
                            for n, s in self.cyc.sectors.items()}},
        }


def assumption_report(V, coupling, tol=ASSUMPTION_TOL, cyc=True, literal_snd=True):
    from .coupling import check_MND

    cyc_report = None
    if cyc:
        try:
            cyc_report = check_Cyc(V, coupling, tol)
        except UnsupportedCouplingError:
            cyc_report = None
    return AssumptionReport(
        snd=check_SND(V, tol, literal=literal_snd),
        mnd=check_MND(coupling),
        diag=check_Diag(V, coupling, tol),
        offdiag=check_OffDiag(V, coupling, tol),
        cyc=cyc_report,
    )


def sector_average(basis, rho):
    """The direct sum of binom(d, n)^{-1} tr(rho|_n) 1_n."""
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    for n in range(basis.d + 1):
        sl = basis.sector(n)
        out[sl, sl] = np.trace(rho[sl, sl]) / basis.sector_size(n) * np.eye(basis.sector_size(n))
    return out


@dataclass
class SteadyState:
    closed_form: np.ndarray = field(repr=False)
    projected: np.ndarray = field(repr=False)
    discrepancy: float
    rate: float


def steady_state(rho0, split, coupling, tol=ASSUMPTION_TOL):
    """Long-time state: closed sector average and the eigenvalue-1 projection P_1(rho0)."""
    basis = coupling.basis
    rho0 = np.asarray(rho0, dtype=complex)
    if rho0.shape != (basis.dim, basis.dim):
        raise ConfigurationError(f"density matrix must be {basis.dim}x{basis.dim}")
    if filled_state_in_kernel(coupling):
        coh = max(abs(rho0[0, -1]), abs(rho0[-1, 0]))
        if coh > tol:
            raise HypothesisViolationError(
                f"the initial state must satisfy <F|rho|Omega> = <Omega|rho|F> = 0 when the filled "
                f"state F lies in ker T (found coherence {coh:.3e})")
    P1 = split.projector_for(1.0)
    if P1 is None:
        raise HypothesisViolationError("1 is not a peripheral eigenvalue of the contraction")
    D = basis.dim
    projected = (P1 @ rho0.reshape(-1)).reshape(D, D)
    closed = sector_average(basis, rho0)
    return SteadyState(closed, projected, op_norm(closed - projected), split.gamma / 2)


def spectrum_table(split):
    """Rows (re, im, modulus, phase, classification) for the full spectrum of V o Phi."""
    rows = []
    for i, z in enumerate(split.eigenvalues):
        rows.append((float(z.real), float(z.imag), float(abs(z)), float(np.angle(z)),
                     "peripheral" if i < split.n_peripheral else "decaying"))
    rows.sort(key=lambda r: (-r[2], r[3]))
    return rows
