from itertools import product

import numpy as np
import pytest

from fermiwalk import coupling as cpl, dynamics as dyn, fock, reservoir as rv, spectral
from fermiwalk.errors import BudgetExceededError, ConfigurationError, InvalidDensityMatrixError

from conftest import random_hermitian, scipy_unitary


def brute_force(V, model, sym, X, t, lam):
    """Naive path sum: every (mu, nu) pair of paths, slot t acting on X first."""
    g = fock.second_quantize_unitary(model.basis, V)
    mus = model.spectrum
    P = model.projectors
    K = sym.section(t)
    out = np.zeros_like(X, dtype=complex)
    idx = range(len(mus))
    for mu in product(idx, repeat=t):
        for nu in product(idx, repeat=t):
            theta = np.array([mus[a] - mus[b] for a, b in zip(mu, nu)])
            w = np.exp(-lam ** 2 / 4 * theta @ K @ theta)
            Y = X
            for j in reversed(range(t)):
                Y = g.conj().T @ P[mu[j]] @ Y @ P[nu[j]] @ g
            out += w * Y
    return out


@pytest.fixture
def hop3():
    model = cpl.build_T_hop(3, 0.3)
    return dyn.build_channel_maps(scipy_unitary(3, 5), model), model


@pytest.fixture
def X3(rng):
    return random_hermitian(8, rng)


def test_free_identity():
    model = cpl.build_T_hop(3)
    maps = dyn.build_channel_maps(np.eye(3), model)
    assert np.array_equal(maps.superop_V, np.eye(64))


def test_nine_term_example(rng):
    b = fock.enumerate_basis(2)
    model = cpl.build_coupling(np.diag([1.0, -1.0]), b)
    maps = dyn.build_channel_maps(np.eye(2), model)
    X = random_hermitian(4, rng)
    # explicit sum over (mu, nu) in {-1, 0, 1}^2 with weight exp(-(mu - nu)^2)
    P = {mu: model.spec.projector(mu) for mu in (-1.0, 0.0, 1.0)}
    ref = sum(np.exp(-(m - n) ** 2) * P[m] @ X @ P[n] for m in P for n in P)
    res = dyn.exact_propagate(maps, rv.identity_symbol(), X, 1, 2.0)
    assert np.abs(res.result - ref).max() < 1e-14
    assert res.paths_summed == 9


@pytest.mark.parametrize("t", [1, 2, 3])
def test_exact_vs_brute_force_nondiagonal(hop3, X3, t):
    maps, model = hop3
    sym = rv.thermal_kernel(0.8, 0.0, {"type": "cosine", "E0": 1.5, "J": 0.3})
    res = dyn.exact_propagate(maps, sym, X3, t, 1.7)
    assert np.abs(res.result - brute_force(maps.V, model, sym, X3, t, 1.7)).max() < 1e-12
    assert res.pruned_mass == 0.0


def test_truncated_vs_brute_force(hop3, X3):
    maps, model = hop3
    sym = rv.diagonal_symbol([1.0, 2.0, 1.5])
    t, lam = 3, 1.3
    g = fock.second_quantize_unitary(model.basis, maps.V)
    mus, P, K = model.spectrum, model.projectors, sym.section(t)
    idx = range(len(mus))
    ref = np.zeros((8, 8), dtype=complex)
    for mu in product(idx, repeat=t):
        for nu in product(idx, repeat=t):
            if sum(a != b for a, b in zip(mu, nu)) > 1:
                continue
            theta = np.array([mus[a] - mus[b] for a, b in zip(mu, nu)])
            Y = X3
            for j in reversed(range(t)):
                Y = g.conj().T @ P[mu[j]] @ Y @ P[nu[j]] @ g
            ref += np.exp(-lam ** 2 / 4 * theta @ K @ theta) * Y
    res = dyn.truncated_propagate(maps, sym, X3, t, lam, 1)
    assert np.abs(res.result - ref).max() < 1e-12
    assert res.paths_summed == dyn.path_pair_count(3, t, 1)


def test_lambda_zero_is_free(hop3, X3):
    maps, model = hop3
    g = maps.V_free
    for t in range(4):
        ref = X3
        for _ in range(t):
            ref = g.conj().T @ ref @ g
        res = dyn.exact_propagate(maps, rv.identity_symbol(), X3, t, 0.0).result
        assert np.abs(res - ref).max() < 1e-12


def test_unital(hop3):
    maps, _ = hop3
    res = dyn.exact_propagate(maps, rv.diagonal_symbol(1.4), np.eye(8), 3, 1.0).result
    assert np.abs(res - np.eye(8)).max() < 1e-12
    res = dyn.ris_propagate(maps, rv.identity_symbol(), np.eye(8), 1, 1.0).result
    assert np.abs(res - np.eye(8)).max() < 1e-12


def test_order_zero_is_limit(hop3, X3):
    maps, _ = hop3
    sym = rv.identity_symbol()
    res = dyn.truncated_propagate(maps, sym, X3, 3, 2.0, 0).result
    assert np.abs(res - dyn.limit_propagate(maps, X3, 3)).max() < 1e-12


@pytest.mark.parametrize("t", [1, 3, 5])
def test_mode_equivalence(hop3, X3, t):
    maps, _ = hop3
    sym = rv.diagonal_symbol([1.0, 1.3, 2.0, 1.1, 1.7])
    ex = dyn.exact_propagate(maps, sym, X3, t, 1.5).result
    assert np.abs(ex - dyn.truncated_propagate(maps, sym, X3, t, 1.5, t).result).max() < 1e-12
    assert np.abs(ex - dyn.ris_propagate(maps, sym, X3, t, 1.5).result).max() < 1e-12


def test_ris_large_k_is_limit(hop3, X3):
    maps, _ = hop3
    res = dyn.ris_propagate(maps, rv.diagonal_symbol(1e4), X3, 4, 2.0).result
    assert np.abs(res - dyn.limit_propagate(maps, X3, 4)).max() < 1e-12


def test_ris_rejects_nondiagonal(hop3, X3):
    maps, _ = hop3
    sym = rv.table_symbol(np.eye(3) + 0.1)
    with pytest.raises(ConfigurationError):
        dyn.ris_propagate(maps, sym, X3, 2, 1.0)


def test_monotone_in_lambda(hop3, X3):
    maps, _ = hop3
    lim = dyn.limit_propagate(maps, X3, 3)
    errs = [np.linalg.norm(dyn.exact_propagate(maps, rv.identity_symbol(), X3, 3, lam).result - lim, 2)
            for lam in (0.5, 1.0, 2.0, 3.0, 4.0)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_pruning_accounted(hop3, X3):
    maps, _ = hop3
    sym = rv.identity_symbol()
    full = dyn.exact_propagate(maps, sym, X3, 4, 2.5).result
    pr = dyn.exact_propagate(maps, sym, X3, 4, 2.5, prune_tol=1e-3)
    assert pr.pruned_mass > 0
    assert pr.paths_summed < 3 ** 8
    assert np.linalg.norm(full - pr.result) <= pr.pruned_mass * np.linalg.norm(X3)


def test_pruning_disabled_when_k_below_one(hop3, X3):
    maps, _ = hop3
    sym = rv.table_symbol([[1.0, 0.5], [0.5, 1.0]])
    with pytest.warns(UserWarning):
        res = dyn.exact_propagate(maps, sym, X3, 2, 2.0, prune_tol=0.5)
    assert res.pruned_mass == 0.0


def test_budget(hop3, X3):
    maps, _ = hop3
    with pytest.raises(BudgetExceededError):
        dyn.exact_propagate(maps, rv.identity_symbol(), X3, 3, 1.0, budget=100)
    with pytest.raises(BudgetExceededError):
        dyn.truncated_propagate(maps, rv.identity_symbol(), X3, 9, 1.0, 2, budget=1000)


def test_path_pair_count():
    assert dyn.path_pair_count(3, 4) == 3 ** 8
    assert dyn.path_pair_count(3, 4, 0) == 3 ** 4
    assert dyn.path_pair_count(3, 2, 1) == 9 + 2 * 3 * 6


def test_truncation_order_checked(hop3, X3):
    maps, _ = hop3
    with pytest.raises(ConfigurationError):
        dyn.truncated_propagate(maps, rv.identity_symbol(), X3, 2, 1.0, 3)


def test_structure(hop3):
    maps, _ = hop3
    errs = maps.structure_errors(full=True)
    assert max(errs.values()) < 1e-10
    assert np.abs(maps.superop_Phi @ np.eye(8).reshape(-1) - np.eye(8).reshape(-1)).max() < 1e-14


def test_cptp_limit_and_exact():
    b = fock.enumerate_basis(2)
    model = cpl.build_coupling(np.diag([0.7, -0.4]), b)
    maps = dyn.build_channel_maps(scipy_unitary(2, 9), model)
    assert dyn.cptp_verify(maps.superop_VPhi, 4).passed()
    M = dyn.propagator_matrix(maps, rv.identity_symbol(), 3, 1.0)
    assert dyn.cptp_verify(M, 4).passed()


def test_choi_matrix_convention():
    # Choi of the identity channel is the unnormalized maximally entangled projector
    c = dyn.choi_matrix(np.eye(9), 3)
    v = np.eye(3).reshape(-1)
    assert np.allclose(c, np.outer(v, v))


def test_corrupted_map_negative_control(hop3):
    maps, model = hop3
    lam = 1.0
    k = len(model.spectrum)
    total = np.zeros((64, 64), dtype=complex)
    for a in range(k):
        for b in range(k):
            w = np.exp(-lam ** 2 / 4 * (model.spectrum[a] - model.spectrum[b]) ** 2)
            sign = -1 if a == b == 0 else 1
            total += sign * w * maps.superop_B(a, b)
    rep = dyn.cptp_verify(maps.superop_V @ total, 8)
    assert rep.choi_min_eig < -0.01
    assert not rep.passed()


def test_evolve_state_examples(hop3, rng):
    maps, model = hop3
    b = model.basis
    sym = rv.identity_symbol()
    psi = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    psi[b.particle_number != 1] = 0
    rho = np.outer(psi, psi.conj()) / np.vdot(psi, psi)
    assert np.array_equal(dyn.evolve_state(maps, sym, rho, 0, 1.0), rho)
    mixed = np.eye(8) / 8
    assert np.abs(dyn.evolve_state(maps, sym, mixed, 3, 1.0) - mixed).max() < 1e-14
    out = dyn.evolve_state(maps, sym, rho, 3, 1.0)
    s1 = b.sector(1)
    assert np.trace(out[s1, s1]).real == pytest.approx(1, abs=1e-12)
    assert np.abs(out).sum() == pytest.approx(np.abs(out[s1, s1]).sum(), abs=1e-12)


@pytest.mark.parametrize("bad", [
    np.eye(8),
    np.diag([1.5, -0.5, 0, 0, 0, 0, 0, 0]),
    np.triu(np.ones((8, 8))) / 8,
    np.eye(4) / 4,
])
def test_evolve_state_invalid(hop3, bad):
    maps, _ = hop3
    with pytest.raises(InvalidDensityMatrixError):
        dyn.evolve_state(maps, rv.identity_symbol(), bad, 1, 1.0)


def test_adjoint_consistency(hop3, X3, rng):
    maps, _ = hop3
    sym = rv.thermal_kernel(1.0, 0.0, {"type": "flat", "E0": 1.0})
    a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    for mode in ("exact", "ris", "limit"):
        lhs = np.trace(dyn.evolve_state(maps, sym, rho, 3, 1.2, mode) @ X3)
        if mode == "limit":
            tx = dyn.limit_propagate(maps, X3, 3)
        else:
            tx = dyn.exact_propagate(maps, sym, X3, 3, 1.2).result
        assert lhs == pytest.approx(np.trace(rho @ tx), abs=1e-12)


def test_trajectory_matches_evolve(hop3, rng):
    maps, _ = hop3
    sym = rv.identity_symbol()
    rho = np.diag(rng.dirichlet(np.ones(8))).astype(complex)
    traj = dict(dyn.state_trajectory(maps, sym, rho, 4, 1.5, mode="ris", stride=2))
    assert sorted(traj) == [0, 2, 4]
    assert np.abs(traj[4] - dyn.evolve_state(maps, sym, rho, 4, 1.5, "exact")).max() < 1e-12


def test_threads_bitwise(hop3, X3):
    maps, _ = hop3
    sym = rv.thermal_kernel(1.0, 0.0, {"type": "cosine", "E0": 2.0, "J": 0.3})
    ref = dyn.exact_propagate(maps, sym, X3, 5, 1.3, threads=1).result
    for threads in (2, 4, 8):
        assert np.array_equal(ref, dyn.exact_propagate(maps, sym, X3, 5, 1.3, threads=threads).result)


def test_chunking_does_not_change_result(hop3, X3, monkeypatch):
    maps, _ = hop3
    sym = rv.identity_symbol()
    ref = dyn.exact_propagate(maps, sym, X3, 4, 1.0).result
    monkeypatch.setattr(dyn, "CHUNK_ENTRIES", 1000)
    assert np.abs(ref - dyn.exact_propagate(maps, sym, X3, 4, 1.0).result).max() < 1e-13


def test_fit_certificate_dominates(hop3, X3):
    maps, _ = hop3
    sym = rv.identity_symbol()
    lams = [2.0, 2.5, 3.0]
    cert = dyn.fit_certificate(maps, sym, X3, 3, 1, lams, gamma=0.1)
    for lam in lams:
        res = dyn.truncated_propagate(maps, sym, X3, 3, lam, 1, certificate=cert)
        ex = dyn.exact_propagate(maps, sym, X3, 3, lam).result
        assert np.linalg.norm(ex - res.result, 2) <= res.remainder_bound * (1 + 1e-9)
    assert cert.fitted_slope < 0


def test_channel_size_limit():
    with pytest.raises(ConfigurationError):
        dyn.build_channel_maps(np.eye(6), cpl.build_T_hop(6))
