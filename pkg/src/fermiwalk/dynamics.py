"""Reduced Heisenberg dynamics of fermionic observables.

Operators on Fock space are vectorised row-major, so a superoperator is a
``(D*D, D*D)`` matrix acting on ``X.reshape(-1)`` and the Hilbert-Schmidt
product is the Euclidean one. ``X -> A X B`` has matrix ``kron(A, B.T)``.

The path sum over (mu, nu) in sigma(T)^t x sigma(T)^t is regrouped by the
differences theta_j = mu_j - nu_j, because the Gaussian weight depends on the
path only through theta. ``G[theta] = V o sum_{mu - nu = theta} B^{mu nu}`` is
one slot of the expansion; ``G[0]`` is the infinite-coupling map V o Phi.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import fock
from ._linalg import dagger, op_norm, require_hermitian, require_unitary, superop_from_sandwich
from .errors import (BudgetExceededError, ConfigurationError, FermiwalkError,
                     InvalidDensityMatrixError)
from .reservoir import LOWER_BOUND_TOL

MAX_CHANNEL_SITES = 5
STRUCTURE_TOL = 1e-10
DEFAULT_BUDGET = 10 ** 7
CHUNK_ENTRIES = 1 << 22
TASK_SPLIT = 64
THETA_TOL = 1e-11


class ChannelStructureError(FermiwalkError):
    """Built channel maps violate a structural identity they must satisfy."""


@dataclass(frozen=True)
class ThetaGroup:
    value: float
    pairs: tuple
    matrix: np.ndarray = field(repr=False)

    @property
    def multiplicity(self):
        return len(self.pairs)


@dataclass(eq=False)
class ChannelMaps:
    """Free evolution, pinching and the B^{mu nu} family for one (V, T) instance."""

    basis: fock.FockBasis = field(repr=False)
    coupling: object = field(repr=False)
    V: np.ndarray = field(repr=False)
    V_free: np.ndarray = field(repr=False)
    superop_V: np.ndarray = field(repr=False)
    superop_Phi: np.ndarray = field(repr=False)

    @property
    def dim(self):
        return self.basis.dim

    @property
    def projectors(self):
        return self.coupling.projectors

    def superop_B(self, i, j):
        """Matrix of X -> B^{mu_i} X B^{mu_j} (indices into the sorted spectrum)."""
        return superop_from_sandwich(self.projectors[i], self.projectors[j])

    @cached_property
    def superop_VPhi(self):
        return self.superop_V @ self.superop_Phi

    @cached_property
    def theta_groups(self):
        mus = self.coupling.spectrum
        pairs = sorted(((mus[i] - mus[j], i, j) for i in range(len(mus)) for j in range(len(mus))))
        groups = []
        for diff, i, j in pairs:
            if groups and diff - groups[-1][0][-1] <= THETA_TOL:
                groups[-1][0].append(diff)
                groups[-1][1].append((i, j))
            else:
                groups.append(([diff], [(i, j)]))
        out = []
        for diffs, members in groups:
            value = 0.0 if any(i == j for i, j in members) else float(np.mean(diffs))
            bsum = sum(self.superop_B(i, j) for i, j in members)
            out.append(ThetaGroup(value, tuple(members), self.superop_V @ bsum))
        return tuple(out)

    @cached_property
    def zero_group(self):
        return next(k for k, g in enumerate(self.theta_groups) if g.value == 0.0)

    def structure_errors(self, full=False):
        """Deviations from the identities the maps satisfy by construction.

        With ``full=True`` the B^{mu nu} superoperator family itself is checked
        (|sigma|^4 products); otherwise it is checked through the projectors.
        """
        D = self.dim
        n = D * D
        sv, sp = self.superop_V, self.superop_Phi
        one = np.eye(D).reshape(-1)
        projs = self.projectors
        errs = {
            "V_unitary": np.abs(dagger(sv) @ sv - np.eye(n)).max(),
            "Phi_idempotent": np.abs(sp @ sp - sp).max(),
            "Phi_selfadjoint": np.abs(sp - dagger(sp)).max(),
            "VPhi_unital": np.abs(self.superop_VPhi @ one - one).max(),
            "projector_algebra": max(
                np.abs(projs[a] @ projs[b] - (projs[a] if a == b else 0)).max()
                for a in range(len(projs)) for b in range(len(projs))),
            "projector_completeness": np.abs(sum(projs) - np.eye(D)).max(),
        }
        if full:
            k = len(projs)
            bs = {(a, b): self.superop_B(a, b) for a in range(k) for b in range(k)}
            errs["B_completeness"] = np.abs(sum(bs.values()) - np.eye(n)).max()
            errs["B_orthogonality"] = max(
                np.abs(bs[p] @ bs[q] - (bs[p] if p == q else 0)).max() for p in bs for q in bs)
            errs["B_selfadjoint"] = max(np.abs(b - dagger(b)).max() for b in bs.values())
        return {key: float(v) for key, v in errs.items()}


def build_channel_maps(V, coupling, basis=None, verify=True):
    """Assemble V (X -> Gamma(V)^* X Gamma(V)), Phi and the B^{mu nu} family."""
    basis = basis or coupling.basis
    if basis.d > MAX_CHANNEL_SITES:
        raise ConfigurationError(f"superoperators are limited to d <= {MAX_CHANNEL_SITES}")
    V = require_unitary(V, name="V")
    if V.shape[0] != basis.d:
        raise ConfigurationError(f"V must be {basis.d}x{basis.d}")
    g = fock.second_quantize_unitary(basis, V)
    sv = superop_from_sandwich(dagger(g), g)
    sphi = sum(superop_from_sandwich(b, b) for b in coupling.projectors)
    maps = ChannelMaps(basis=basis, coupling=coupling, V=V, V_free=g, superop_V=sv, superop_Phi=sphi)
    if verify:
        bad = {k: v for k, v in maps.structure_errors().items() if v > STRUCTURE_TOL}
        if bad:
            raise ChannelStructureError(f"channel maps violate structural identities: {bad}")
    return maps


@dataclass
class PropagatorResult:
    result: np.ndarray = field(repr=False)
    paths_summed: int
    pruned_mass: float
    mode: str
    t: int
    lam: float
    order: int | None = None
    remainder_bound: float | None = None


@dataclass(frozen=True)
class RemainderCertificate:
    """Fitted constant for the bound C * t^2 e^{-gamma t/2} e^{-gap lam^2 (s+1)/4} ||X||."""

    c_fit: float
    gamma: float
    gap: float
    order: int
    fitted_slope: float | None = None

    def bound(self, t, lam, x_norm):
        return (self.c_fit * t ** 2 * math.exp(-self.gamma * t / 2)
                * math.exp(-self.gap * lam ** 2 * (self.order + 1) / 4) * x_norm)


def _kahan_sum(parts):
    total = None
    comp = None
    for p in parts:
        if total is None:
            total = p.copy()
            comp = np.zeros_like(p)
            continue
        y = p - comp
        s = total + y
        comp = (s - total) - y
        total = s
    return total


class _PathSum:
    """Batched depth-first evaluation of the theta-grouped path tree."""

    def __init__(self, maps, sym, t, lam, max_offdiag, prune_tol, adjoint):
        self.t = t
        self.lam = float(lam)
        self.groups = maps.theta_groups
        self.theta = np.array([g.value for g in self.groups])
        self.mult = np.array([g.multiplicity for g in self.groups], dtype=np.int64)
        self.mats = [dagger(g.matrix) if adjoint else g.matrix for g in self.groups]
        self.max_offdiag = t if max_offdiag is None else max_offdiag
        self.K = np.array(sym.section(t)) if t else np.zeros((0, 0))
        # slots in application order; the innermost slot t acts on X first
        self.slots = list(range(1, t + 1)) if adjoint else list(range(t, 0, -1))
        self.prune_tol = prune_tol
        if prune_tol > 0 and t:
            lo = float(np.linalg.eigvalsh(self.K).min())
            if lo < 1 - LOWER_BOUND_TOL:
                warnings.warn("K >= 1 fails on the evaluated section; pruning disabled", stacklevel=3)
                self.prune_tol = 0.0
        c = self.lam ** 2 / 4
        self.slot_mass = float(np.sum(self.mult * np.exp(-c * self.theta ** 2)))
        self.pruned_mass = 0.0
        self.paths = 0

    def run(self, cols, threads=1):
        n_rows = cols.shape[0] * cols.shape[1]
        root = dict(Y=cols[None], th=np.zeros((1, 0)), q=np.zeros(1), nsq=np.zeros(1),
                    mult=np.ones(1, dtype=np.int64), noff=np.zeros(1, dtype=np.int64))
        nodes, level = root, 0
        while level < self.t and len(nodes["q"]) < TASK_SPLIT:
            nodes = self._children(nodes, level)
            level += 1
        count = len(nodes["q"])
        if count == 0:
            return np.zeros_like(cols)
        size = max(1, -(-count // TASK_SPLIT))
        tasks = [_take(nodes, slice(a, a + size)) for a in range(0, count, size)]
        workers = _Worker(self, n_rows)
        if threads > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outs = list(pool.map(lambda tk: workers.expand(tk, level), tasks))
        else:
            outs = [workers.expand(tk, level) for tk in tasks]
        for o in outs:
            self.pruned_mass += o[1]
            self.paths += o[2]
        return _kahan_sum([o[0] for o in outs])

    def _children(self, nodes, level, acc=None):
        slot = self.slots[level]
        c = self.lam ** 2 / 4
        K = self.K
        prev = self.slots[:level]
        cross = nodes["th"] @ K[slot - 1, [p - 1 for p in prev]] if prev else np.zeros(len(nodes["q"]))
        out = {k: [] for k in nodes}
        remaining = self.t - level - 1
        for a, th in enumerate(self.theta):
            noff = nodes["noff"] + (th != 0)
            keep = noff <= self.max_offdiag
            q = nodes["q"] + 2 * th * cross + K[slot - 1, slot - 1] * th ** 2
            nsq = nodes["nsq"] + th ** 2
            mult = nodes["mult"] * self.mult[a]
            if self.prune_tol > 0:
                bound = np.exp(-c * nsq)
                cut = keep & (bound < self.prune_tol)
                if cut.any():
                    mass = float(np.sum(mult[cut] * bound[cut])) * self.slot_mass ** remaining
                    if acc is None:
                        self.pruned_mass += mass
                    else:
                        acc[1] += mass
                keep &= ~cut
            if not keep.any():
                continue
            Y = nodes["Y"][keep]
            out["Y"].append(self.mats[a] @ Y)
            out["th"].append(np.column_stack([nodes["th"][keep], np.full(keep.sum(), th)]))
            out["q"].append(q[keep])
            out["nsq"].append(nsq[keep])
            out["mult"].append(mult[keep])
            out["noff"].append(noff[keep])
        if not out["q"]:
            shape = nodes["Y"].shape[1:]
            return dict(Y=np.zeros((0,) + shape, dtype=complex), th=np.zeros((0, level + 1)),
                        q=np.zeros(0), nsq=np.zeros(0), mult=np.zeros(0, dtype=np.int64),
                        noff=np.zeros(0, dtype=np.int64))
        return {k: np.concatenate(v) for k, v in out.items()}


def _take(nodes, sl):
    return {k: v[sl] for k, v in nodes.items()}


class _Worker:
    def __init__(self, ps, n_rows):
        self.ps = ps
        self.n_rows = n_rows

    def expand(self, nodes, level):
        acc = [None, 0.0, 0]
        total = self._expand(nodes, level, acc)
        return total, acc[1], acc[2]

    def _expand(self, nodes, level, acc):
        ps = self.ps
        count = len(nodes["q"])
        shape = nodes["Y"].shape[1:]
        if count == 0:
            return np.zeros(shape, dtype=complex)
        if level == ps.t:
            w = np.exp(-ps.lam ** 2 / 4 * nodes["q"])
            acc[2] += int(nodes["mult"].sum())
            return np.einsum("n,nij->ij", w, nodes["Y"])
        per_node = len(ps.theta) * self.n_rows
        if count > 1 and count * per_node > CHUNK_ENTRIES:
            size = max(1, CHUNK_ENTRIES // per_node)
            parts = [self._expand(_take(nodes, slice(a, a + size)), level, acc)
                     for a in range(0, count, size)]
            return _kahan_sum(parts)
        return self._expand(ps._children(nodes, level, acc), level + 1, acc)


def _as_columns(X, dim):
    X = np.asarray(X, dtype=complex)
    if X.shape != (dim, dim):
        raise ConfigurationError(f"observable must be {dim}x{dim}, got {X.shape}")
    return X.reshape(-1, 1)


def path_pair_count(n_spec, t, order=None):
    """Number of (mu, nu) path pairs with at most ``order`` off-diagonal slots."""
    if order is None or order >= t:
        return n_spec ** (2 * t)
    off = n_spec * (n_spec - 1)
    return sum(math.comb(t, k) * off ** k * n_spec ** (t - k) for k in range(order + 1))


def _check_budget(maps, t, order, budget):
    n = path_pair_count(len(maps.coupling.spectrum), t, order)
    if n > budget:
        raise BudgetExceededError(
            f"{n} path pairs exceed the budget of {budget}; use truncated mode with a small order "
            f"or the repeated-interaction mode for diagonal symbols")


def _path_sum(maps, sym, cols, t, lam, order=None, prune_tol=0.0, adjoint=False, threads=1):
    ps = _PathSum(maps, sym, t, lam, order, prune_tol, adjoint)
    out = ps.run(cols, threads=threads)
    return out, ps.paths, ps.pruned_mass


def _check_t(t):
    if not isinstance(t, (int, np.integer)) or t < 0:
        raise ConfigurationError(f"t must be a non-negative integer, got {t!r}")
    return int(t)


def exact_propagate(maps, sym, X, t, lam, prune_tol=0.0, budget=DEFAULT_BUDGET, threads=1):
    """T_t(X) as the full weighted path sum; pruned paths are accounted in pruned_mass."""
    t = _check_t(t)
    _check_budget(maps, t, None, budget)
    D = maps.dim
    if t == 0:
        return PropagatorResult(np.array(X, dtype=complex), 1, 0.0, "exact", 0, lam)
    out, paths, pruned = _path_sum(maps, sym, _as_columns(X, D), t, lam, None, prune_tol, threads=threads)
    return PropagatorResult(out.reshape(D, D), paths, pruned, "exact", t, lam)


def truncated_propagate(maps, sym, X, t, lam, order, certificate=None, budget=DEFAULT_BUDGET, threads=1):
    """Large-coupling expansion keeping terms with at most ``order`` off-diagonal slots."""
    t = _check_t(t)
    if not 0 <= order <= t:
        raise ConfigurationError(f"truncation order must satisfy 0 <= s <= t, got s={order}, t={t}")
    _check_budget(maps, t, order, budget)
    D = maps.dim
    if t == 0:
        return PropagatorResult(np.array(X, dtype=complex), 1, 0.0, "truncated", 0, lam, order, 0.0)
    out, paths, _ = _path_sum(maps, sym, _as_columns(X, D), t, lam, order, 0.0, threads=threads)
    bound = None
    if order == t:
        bound = 0.0
    elif certificate is not None:
        bound = certificate.bound(t, lam, op_norm(X))
    return PropagatorResult(out.reshape(D, D), paths, 0.0, "truncated", t, lam, order, bound)


def ris_step_matrix(maps, k, lam):
    """V o B with B = sum kappa^{(mu-nu)^2} B^{mu nu} and kappa = e^{-lam^2 k/4}."""
    kappa = math.exp(-lam ** 2 * k / 4)
    return sum((kappa ** (g.value ** 2)) * g.matrix for g in maps.theta_groups)


def ris_step_matrices(maps, sym, t, lam):
    """Per-slot matrices for slots 1..t, generated lazily and shared between equal k_j."""
    if not sym.is_diagonal:
        raise ConfigurationError(f"the repeated-interaction mode needs a diagonal symbol, got {sym.kind!r}")
    cache = {}
    for j in range(1, t + 1):
        k = sym.kernel(j, j)
        if k not in cache:
            cache[k] = ris_step_matrix(maps, k, lam)
        yield cache[k]


def ris_propagate(maps, sym, X, t, lam):
    """T_t(X) = V B_1 V B_2 ... V B_t (X) for a diagonal reservoir symbol."""
    t = _check_t(t)
    D = maps.dim
    steps = list(ris_step_matrices(maps, sym, t, lam))
    y = np.asarray(X, dtype=complex).reshape(-1)
    for m in reversed(steps):
        y = m @ y
    n_spec = len(maps.coupling.spectrum)
    return PropagatorResult(y.reshape(D, D), n_spec ** (2 * t), 0.0, "ris", t, lam)


def limit_propagate(maps, X, t):
    """(V Phi)^t (X), the infinite-coupling dynamics."""
    D = maps.dim
    y = np.asarray(X, dtype=complex).reshape(-1)
    m = maps.superop_VPhi
    for _ in range(_check_t(t)):
        y = m @ y
    return y.reshape(D, D)


def propagator_matrix(maps, sym, t, lam, mode="exact", order=None, threads=1, budget=DEFAULT_BUDGET):
    """Superoperator matrix of T_t in the given mode."""
    t = _check_t(t)
    n = maps.dim ** 2
    if mode == "limit":
        return np.linalg.matrix_power(maps.superop_VPhi, t)
    if mode == "ris":
        out = np.eye(n, dtype=complex)
        for m in ris_step_matrices(maps, sym, t, lam):
            out = out @ m
        return out
    if t == 0:
        return np.eye(n, dtype=complex)
    if mode == "exact":
        order = None
    elif mode != "truncated":
        raise ConfigurationError(f"unknown propagation mode {mode!r}")
    _check_budget(maps, t, order, budget)
    out, _, _ = _path_sum(maps, sym, np.eye(n, dtype=complex), t, lam, order, threads=threads)
    return out


def fit_certificate(maps, sym, X, t, order, lambdas, gamma, threads=1):
    """Fit the remainder constant of the order-s expansion from exact data.

    The actual remainders are regressed in log space against lam^2; the returned
    constant is the smallest one whose bound dominates every sampled remainder.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    x_norm = op_norm(X)
    gap = maps.coupling.gap
    ratios, logs = [], []
    for lam in lambdas:
        ex = exact_propagate(maps, sym, X, t, lam, threads=threads).result
        tr = truncated_propagate(maps, sym, X, t, lam, order, threads=threads).result
        r = op_norm(ex - tr)
        shape = t ** 2 * math.exp(-gamma * t / 2) * math.exp(-gap * lam ** 2 * (order + 1) / 4) * x_norm
        ratios.append(r / shape if shape > 0 else 0.0)
        logs.append(math.log(r) if r > 0 else -np.inf)
    logs = np.array(logs)
    slope = None
    ok = np.isfinite(logs)
    if ok.sum() >= 2:
        slope = float(np.polyfit(lambdas[ok] ** 2, logs[ok], 1)[0])
    return RemainderCertificate(float(max(ratios)), float(gamma), float(gap), int(order), slope)


def _check_density(rho, dim, tol=1e-10):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise InvalidDensityMatrixError(f"density matrix must be {dim}x{dim}")
    try:
        rho = require_hermitian(rho, name="rho")
    except ConfigurationError as exc:
        raise InvalidDensityMatrixError(str(exc)) from None
    if abs(np.trace(rho) - 1) > tol:
        raise InvalidDensityMatrixError(f"density matrix must have unit trace, got {np.trace(rho).real:.12g}")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise InvalidDensityMatrixError("density matrix is not positive semidefinite")
    return rho


def evolve_state(maps, sym, rho, t, lam, mode="exact", order=None, prune_tol=0.0, threads=1,
                 budget=DEFAULT_BUDGET):
    """Schroedinger-picture state at time t: the HS adjoint of T_t applied to rho."""
    D = maps.dim
    rho = _check_density(rho, D)
    t = _check_t(t)
    if t == 0:
        return rho.copy()
    y = rho.reshape(-1)
    if mode == "limit":
        m = dagger(maps.superop_VPhi)
        for _ in range(t):
            y = m @ y
        return y.reshape(D, D)
    if mode == "ris":
        for m in ris_step_matrices(maps, sym, t, lam):
            y = dagger(m) @ y
        return y.reshape(D, D)
    if mode == "exact":
        order = None
    elif mode != "truncated":
        raise ConfigurationError(f"unknown propagation mode {mode!r}")
    _check_budget(maps, t, order, budget)
    out, _, _ = _path_sum(maps, sym, y.reshape(-1, 1), t, lam, order, prune_tol, adjoint=True,
                          threads=threads)
    return out.reshape(D, D)


@dataclass(frozen=True)
class CPTPReport:
    unital_error: float
    trace_error: float
    choi_min_eig: float
    choi_hermiticity_error: float

    def passed(self, tol=1e-10):
        return self.unital_error <= tol and self.trace_error <= tol and self.choi_min_eig >= -tol


def choi_matrix(M, dim):
    """Choi matrix sum_ij E_ij (x) M(E_ij) of a superoperator in row-major vec form."""
    return np.asarray(M).reshape(dim, dim, dim, dim).transpose(2, 0, 3, 1).reshape(dim * dim, dim * dim)


def cptp_verify(M, dim):
    """Unitality, trace preservation of the HS adjoint, and Choi positivity."""
    M = np.asarray(M, dtype=complex)
    one = np.eye(dim).reshape(-1)
    unital = op_norm((M @ one - one).reshape(dim, dim))
    traces = one @ dagger(M)
    trace_err = float(np.abs(traces - one).max())
    choi = choi_matrix(M, dim)
    herm = float(np.abs(choi - dagger(choi)).max())
    min_eig = float(np.linalg.eigvalsh((choi + dagger(choi)) / 2).min())
    return CPTPReport(unital, trace_err, min_eig, herm)


def state_trajectory(maps, sym, rho, t_max, lam, mode="ris", order=None, stride=1, threads=1,
                     budget=DEFAULT_BUDGET):
    """Yield (t, rho_t) for t = 0, stride, 2*stride, ..., t_max.

    The limit and repeated-interaction modes advance one step at a time; the path
    sum modes have no such recursion (non-diagonal K couples all slots) and are
    recomputed for every reported t.
    """
    D = maps.dim
    rho = _check_density(rho, D)
    if mode in ("limit", "ris"):
        y = rho.reshape(-1)
        if mode == "limit":
            steps = (maps.superop_VPhi for _ in range(t_max))
        else:
            steps = ris_step_matrices(maps, sym, t_max, lam)
        yield 0, rho.copy()
        for t, m in enumerate(steps, start=1):
            y = np.conj(np.conj(y) @ m)
            if t % stride == 0 or t == t_max:
                yield t, y.reshape(D, D)
        return
    for t in range(0, t_max + 1):
        if t % stride == 0 or t == t_max:
            yield t, evolve_state(maps, sym, rho, t, lam, mode, order, threads=threads, budget=budget)
