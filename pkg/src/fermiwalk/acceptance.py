"""The nine acceptance criteria as callable checks.

Each ``criterion_N`` returns a :class:`CriterionResult` with the measured
quantities; thresholds are the stated ones and are never adjusted.
"""

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cli, config, dynamics, fock, genericity, reservoir, spectral
from ._linalg import dagger, op_norm
from .coupling import build_coupling, build_T_hop

SEED = 2024


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number}: {self.title} ({self.elapsed:.1f}s)"

    def to_dict(self):
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "elapsed": self.elapsed, "metrics": self.metrics}


def _timed(number, title):
    def wrap(fn):
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            passed, metrics = fn(*args, **kwargs)
            return CriterionResult(number, title, bool(passed), metrics, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return wrap


def random_hermitian_1p(d, rng):
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (a + a.conj().T) / 2


def passing_unitaries(d, seed, count, coupling=None, tol=spectral.ASSUMPTION_TOL, max_tries=10_000):
    """First ``count`` Haar samples (by index) satisfying SND + Diag + OffDiag."""
    coupling = coupling or build_T_hop(d)
    out, idx = [], 0
    while len(out) < count:
        if idx >= max_tries:
            raise RuntimeError("too few Haar samples satisfy the assumptions")
        U = genericity.haar_sample(d, seed, idx).U
        if spectral.assumption_report(U, coupling, tol, cyc=False, literal_snd=False).main_assumptions:
            out.append((idx, U))
        idx += 1
    return out


@_timed(1, "CAR and second quantization, d in {2,3,4}, <= 1e-10")
def criterion_1(seed=SEED):
    worst = {"car": 0.0, "homomorphism": 0.0, "bogoliubov": 0.0, "minor_vs_product": 0.0}
    for d in (2, 3, 4):
        basis = fock.enumerate_basis(d)
        D = basis.dim
        a = [fock.annihilation_op(basis, j) for j in range(1, d + 1)]
        for i in range(d):
            for j in range(d):
                anti = a[i] @ dagger(a[j]) + dagger(a[j]) @ a[i]
                worst["car"] = max(worst["car"], np.abs(anti - (i == j) * np.eye(D)).max(),
                                   np.abs(a[i] @ a[j] + a[j] @ a[i]).max())
        rng = genericity.sample_rng(seed, d)
        U = genericity.haar_unitary(d, rng)
        W = genericity.haar_unitary(d, rng)
        gU, gW = fock.second_quantize_unitary(basis, U), fock.second_quantize_unitary(basis, W)
        worst["homomorphism"] = max(
            worst["homomorphism"],
            np.abs(gU @ gW - fock.second_quantize_unitary(basis, U @ W)).max(),
            np.abs(fock.second_quantize_unitary(basis, dagger(U)) - dagger(gU)).max(),
            np.abs(fock.second_quantize_unitary(basis, np.eye(d)) - np.eye(D)).max())
        phi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        for op in (fock.creation_op_vec, fock.annihilation_op_vec):
            lhs = gU @ op(basis, phi) @ dagger(gU)
            worst["bogoliubov"] = max(worst["bogoliubov"], np.abs(lhs - op(basis, U @ phi)).max())
        lifted = [fock.creation_op_vec(basis, U[:, j]) for j in range(d)]
        for J in basis.states:
            v = basis.vector(())
            for j in reversed(J):
                v = lifted[j - 1] @ v
            worst["minor_vs_product"] = max(worst["minor_vs_product"],
                                            np.abs(gU[:, basis.index_of[J]] - v).max())
    worst = {k: float(v) for k, v in worst.items()}
    return all(v <= 1e-10 for v in worst.values()), worst


def _random_symbol(kind, t, rng):
    if kind == "identity":
        return reservoir.identity_symbol()
    if kind == "diagonal":
        return reservoir.diagonal_symbol(list(1 + 2 * rng.random(t)))
    if kind == "thermal":
        return reservoir.thermal_kernel(0.5 + 1.5 * rng.random(), 0.0, {"type": "cosine", "E0": 3.0, "J": 0.5})
    a = rng.standard_normal((t, t))
    return reservoir.table_symbol(np.eye(t) + a @ a.T / t)


def random_instances(count, seed):
    """Reproducible (maps, symbol, t, lam, label) instances with d <= 3 and t <= 4."""
    kinds = ("identity", "diagonal", "thermal", "kernel-table")
    out = []
    for i in range(count):
        rng = genericity.sample_rng(seed, 500 + i)
        if i % 5 == 4:
            d, t = 3, int(rng.integers(1, 3))
            coupling = build_coupling(random_hermitian_1p(3, rng), fock.enumerate_basis(3))
        elif i % 2:
            d, t = 2, int(rng.integers(1, 5))
            coupling = build_coupling(random_hermitian_1p(2, rng), fock.enumerate_basis(2))
        else:
            d, t = 3, int(rng.integers(1, 5))
            coupling = build_T_hop(3, float(rng.uniform(0, 2 * np.pi)))
        V = genericity.haar_unitary(d, rng)
        maps = dynamics.build_channel_maps(V, coupling)
        kind = kinds[i % len(kinds)]
        out.append((maps, _random_symbol(kind, t, rng), t, float(rng.uniform(0.5, 3.0)), f"d={d},t={t},{kind}"))
    return out


@_timed(2, "channel structure and CPTP propagators on 20 random instances")
def criterion_2(seed=SEED, count=20):
    structure, unital, trace, choi = 0.0, 0.0, 0.0, 0.0
    for maps, sym, t, lam, _ in random_instances(count, seed):
        structure = max(structure, max(maps.structure_errors(full=True).values()))
        rep = dynamics.cptp_verify(dynamics.propagator_matrix(maps, sym, t, lam), maps.dim)
        unital, trace = max(unital, rep.unital_error), max(trace, rep.trace_error)
        choi = min(choi, rep.choi_min_eig)
    metrics = {"structure_error": structure, "unital_error": unital, "trace_error": trace,
               "choi_min_eig": choi, "instances": count}
    ok = structure <= 1e-10 and unital <= 1e-10 and trace <= 1e-10 and choi >= -1e-10
    return ok, metrics


def _unit_observable(dim, rng):
    return config.random_hermitian(dim, rng)


@_timed(3, "exact = truncated(s=t) = repeated interaction, d=3, t<=5, <= 1e-12")
def criterion_3(seed=SEED):
    basis = fock.enumerate_basis(3)
    hop = build_T_hop(3, 0.3, basis)
    rng = genericity.sample_rng(seed, 3)
    tau = random_hermitian_1p(3, rng)
    generic = build_coupling(tau, basis)
    err_trunc, err_ris = 0.0, 0.0
    cases = []
    for k in range(3):
        V = genericity.haar_unitary(3, rng)
        cases.append((dynamics.build_channel_maps(V, hop), 5))
    cases.append((dynamics.build_channel_maps(genericity.haar_unitary(3, rng), generic), 2))
    symbols = [reservoir.identity_symbol(), reservoir.diagonal_symbol(list(1 + 2 * rng.random(5))),
               reservoir.thermal_kernel(1.0, 0.0, {"type": "cosine", "E0": 2.5, "J": 0.4})]
    for maps, t_max in cases:
        X = _unit_observable(maps.dim, rng)
        for sym in symbols:
            for t in range(1, t_max + 1):
                lam = float(rng.uniform(0.5, 3.0))
                ex = dynamics.exact_propagate(maps, sym, X, t, lam).result
                tr = dynamics.truncated_propagate(maps, sym, X, t, lam, t).result
                err_trunc = max(err_trunc, float(np.abs(ex - tr).max()))
                if sym.is_diagonal:
                    ri = dynamics.ris_propagate(maps, sym, X, t, lam).result
                    err_ris = max(err_ris, float(np.abs(ex - ri).max()))
    return err_trunc <= 1e-12 and err_ris <= 1e-12, {"exact_vs_truncated": err_trunc, "exact_vs_ris": err_ris}


@_timed(4, "lambda = 0 reduces to free evolution, <= 1e-12")
def criterion_4(seed=SEED):
    rng = genericity.sample_rng(seed, 4)
    worst = 0.0
    setups = [(build_T_hop(3), 5, reservoir.identity_symbol()),
              (build_T_hop(4), 3, reservoir.thermal_kernel(1.0, 0.0, {"type": "cosine", "E0": 3.0, "J": 0.5})),
              (build_coupling(random_hermitian_1p(2, rng), fock.enumerate_basis(2)), 4,
               reservoir.diagonal_symbol(2.0))]
    for coupling, t_max, sym in setups:
        d = coupling.basis.d
        maps = dynamics.build_channel_maps(genericity.haar_unitary(d, rng), coupling)
        X = _unit_observable(maps.dim, rng)
        G = maps.V_free
        free = X
        for t in range(1, t_max + 1):
            free = dagger(G) @ free @ G
            res = dynamics.exact_propagate(maps, sym, X, t, 0.0).result
            worst = max(worst, float(np.abs(res - free).max()))
    return worst <= 1e-12, {"max_error": worst}


@_timed(5, "large-coupling decay slopes, hopping model d=3, t=4")
def criterion_5(seed=SEED):
    coupling = build_T_hop(3)
    (idx, V), = passing_unitaries(3, seed, 1, coupling)
    maps = dynamics.build_channel_maps(V, coupling)
    sym = reservoir.identity_symbol()
    X = _unit_observable(maps.dim, genericity.sample_rng(seed, config.OBSERVABLE_STREAM))
    t = 4
    lams = np.linspace(2.5, 4.0, 7)
    limit = dynamics.limit_propagate(maps, X, t)
    full, rem = [], []
    for lam in lams:
        ex = dynamics.exact_propagate(maps, sym, X, t, lam).result
        first = dynamics.truncated_propagate(maps, sym, X, t, lam, 1).result
        full.append(op_norm(ex - limit))
        rem.append(op_norm(ex - first))
    s_full = float(np.polyfit(lams ** 2, np.log(full), 1)[0])
    s_rem = float(np.polyfit(lams ** 2, np.log(rem), 1)[0])
    gap = coupling.gap
    metrics = {"V_index": idx, "slope_full": s_full, "slope_remainder": s_rem,
               "threshold_full": -gap / 4 * 0.95, "threshold_remainder": -gap / 2 * 0.95}
    return s_full <= -gap / 4 * 0.95 and s_rem <= -gap / 2 * 0.95, metrics


@_timed(6, "peripheral spectrum on 50 Haar instances, d in {3,4}")
def criterion_6(seed=77, per_d=25):
    dist, mult_ok, moduli = 0.0, True, []
    for d in (3, 4):
        coupling = build_T_hop(d)
        for _, V in passing_unitaries(d, seed, per_d, coupling):
            maps = dynamics.build_channel_maps(V, coupling)
            split = spectral.split_contraction(maps, compute_bound=False)
            dist = max(dist, spectral.compare_peripheral(split, spectral.predicted_peripheral(V, coupling)))
            mult_ok &= split.multiplicity_of(1.0) == d + 1
            moduli.append(split.subdominant_modulus)
    metrics = {"peripheral_distance": dist, "multiplicity_is_d_plus_1": bool(mult_ok),
               "max_decaying_modulus": float(max(moduli)), "decaying_moduli": [float(m) for m in moduli]}
    return dist <= 1e-8 and mult_ok and max(moduli) <= 1 - 1e-3, metrics


def _sector_state(basis, n, rng):
    D = basis.dim
    sl = basis.sector(n)
    m = basis.sector_size(n)
    a = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    block = a @ dagger(a)
    rho = np.zeros((D, D), dtype=complex)
    rho[sl, sl] = block / np.trace(block)
    return rho


@_timed(7, "steady state: limit, lambda = 6 dynamics, P_1 and one-particle observables")
def criterion_7(seed=SEED):
    coupling = build_T_hop(3)
    basis = coupling.basis
    (idx, V), = passing_unitaries(3, seed, 1, coupling)
    maps = dynamics.build_channel_maps(V, coupling)
    split = spectral.split_contraction(maps)
    C, gamma = split.C_bound, split.gamma
    t_star = math.ceil(2 * math.log(max(C, 1e-300) / 1e-6) / gamma) + 1
    assert C * math.exp(-gamma * t_star / 2) < 1e-6
    _, W = spectral.eigensystem_of_unitary(V)
    psi = fock.second_quantize_unitary(basis, W)
    rng = genericity.sample_rng(seed, 7)
    v = psi[:, basis.index_of[(1,)]]
    states = [(1, np.outer(v, v.conj())), (2, _sector_state(basis, 2, rng))]
    sym = reservoir.identity_symbol()
    limit_err, exact_err, p1_err, obs_err = 0.0, 0.0, 0.0, 0.0
    P1 = split.projector_for(1.0)
    for n, rho in states:
        target = np.zeros_like(rho)
        sl = basis.sector(n)
        target[sl, sl] = np.eye(basis.sector_size(n)) / basis.sector_size(n)
        rho_lim = dynamics.evolve_state(maps, sym, rho, t_star, 0.0, mode="limit")
        rho_ex = dynamics.evolve_state(maps, sym, rho, t_star, 6.0, mode="ris")
        limit_err = max(limit_err, op_norm(rho_lim - target))
        exact_err = max(exact_err, op_norm(rho_ex - target))
        p1_err = max(p1_err, spectral.steady_state(rho, split, coupling).discrepancy)
    rho1 = states[0][1]
    for _ in range(3):
        X = np.zeros((basis.dim, basis.dim), dtype=complex)
        for n in range(basis.d + 1):
            sl = basis.sector(n)
            X[sl, sl] = random_hermitian_1p(basis.sector_size(n), rng)
        limit_value = np.trace(rho1 @ (P1 @ X.reshape(-1)).reshape(basis.dim, basis.dim))
        sl1 = basis.sector(1)
        obs_err = max(obs_err, abs(limit_value - np.trace(X[sl1, sl1]) / basis.d))
    metrics = {"V_index": idx, "t_star": t_star, "C_fit": C, "gamma": gamma,
               "limit_error": limit_err, "lambda6_error": exact_err,
               "closed_vs_P1": p1_err, "one_particle_limit_error": float(obs_err)}
    ok = limit_err < 1e-6 and exact_err < 1e-3 and p1_err <= 1e-8 and obs_err <= 1e-8
    return ok, metrics


@_timed(8, "genericity: 1000 Haar samples at d=4")
def criterion_8(seed=1, samples=1000, threads=1):
    coupling = build_T_hop(4)

    def one(sample):
        scan = genericity.minor_scan(sample.U)
        rep = spectral.assumption_report(sample.U, coupling, spectral.ASSUMPTION_TOL, cyc=False,
                                         literal_snd=False)
        return scan.overall_min, rep.main_assumptions

    res = genericity.run_samples(one, 4, seed, samples, threads)
    small = sum(m < 1e-12 for m, _ in res)
    rate = genericity.pass_rate(ok for _, ok in res)
    metrics = {"samples": samples, "samples_with_small_minor": small, "pass_rate": rate,
               "smallest_minor": float(min(m for m, _ in res))}
    return small == 0 and rate > 0.99, metrics


DETERMINISM_GENERICITY = """d: 4
seed: 5
genericity: {samples: 60, assumptions: true}
"""


@_timed(9, "byte-identical outputs for --threads 1, 4, 8")
def criterion_9(thread_counts=(1, 4, 8)):
    digests = {}
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        gen_cfg = tmp / "genericity.yaml"
        gen_cfg.write_text(DETERMINISM_GENERICITY)
        for th in thread_counts:
            out = tmp / f"run{th}"
            codes = [cli.main(["propagate", "--config", "determinism", "--threads", str(th), "--out", str(out)]),
                     cli.main(["genericity", "--config", str(gen_cfg), "--threads", str(th), "--out", str(out)])]
            if any(codes):
                return False, {"exit_codes": codes}
            digests[th] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    ref = digests[thread_counts[0]]
    same = all(digests[th] == ref for th in thread_counts)
    return same, {"files": sorted(ref), "identical": same}


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9)


def run_all(threads=1, echo=False):
    results = []
    for fn in CRITERIA:
        res = fn(threads=threads) if fn is criterion_8 else fn()
        if echo:
            print(res.line(), flush=True)
        results.append(res)
    return results
