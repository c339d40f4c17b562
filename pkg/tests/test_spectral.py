from itertools import product
from math import comb
from types import SimpleNamespace

import numpy as np
import pytest

from fermiwalk import coupling as cpl, dynamics as dyn, fock, genericity, spectral as sp
from fermiwalk.errors import ClassificationAmbiguityError, HypothesisViolationError, UnsupportedCouplingError

from conftest import random_hermitian


def passing_V(d, model, start=0):
    for idx in range(start, start + 200):
        V = genericity.haar_sample(d, 99, idx).U
        if sp.assumption_report(V, model, cyc=False, literal_snd=False).main_assumptions:
            return V
    raise AssertionError("no passing sample")


def f_diagonal(model, phases):
    f = model.f
    return f @ np.diag(np.exp(1j * np.asarray(phases))) @ f.conj().T


@pytest.fixture(scope="module")
def hop3_instance():
    model = cpl.build_T_hop(3, 0.2)
    V = passing_V(3, model)
    maps = dyn.build_channel_maps(V, model)
    return V, model, maps, sp.split_contraction(maps)


def test_identity_split():
    model = cpl.build_T_hop(3)
    split = sp.split_contraction(dyn.build_channel_maps(np.eye(3), model))
    assert np.allclose(split.peripheral_eigenvalues, [1])
    assert split.gamma == np.inf and split.C_bound == 0.0
    assert split.n_peripheral == sum(m ** 2 for m in model.spec.multiplicities)


def test_split_projectors(hop3_instance):
    _, _, maps, split = hop3_instance
    n = maps.dim ** 2
    pc, pl = split.P_circle, split.P_less
    assert np.abs(pc - pc.conj().T).max() < 1e-8
    assert np.abs(pc @ pl).max() < 1e-8
    assert np.abs(pc + pl - np.eye(n)).max() < 1e-12
    assert split.commutation_error < 1e-8
    for a, p in enumerate(split.peripheral_projectors):
        assert np.abs(p @ p - p).max() < 1e-8
        assert np.abs(p - p.conj().T).max() < 1e-8
        for b, q in enumerate(split.peripheral_projectors):
            if a != b:
                assert np.abs(p @ q).max() < 1e-8
        # no nilpotent part on the circle
        z = split.peripheral_eigenvalues[a]
        assert np.abs(maps.superop_VPhi @ p - z * p).max() < 1e-8


def test_peripheral_set_hop(hop3_instance):
    V, model, maps, split = hop3_instance
    det = np.linalg.det(V)
    assert sp.compare_peripheral(split, [1, det, det.conjugate()]) < 1e-8
    assert split.multiplicity_of(1.0) == 4
    assert split.subdominant_modulus < 1 - 1e-3
    rv, rphi = sp.peripheral_residuals(maps, split)
    assert rv < 1e-8 and rphi < 1e-8


def test_P1_is_sector_average(hop3_instance):
    _, model, _, split = hop3_instance
    b = model.basis
    vecs = []
    for n in range(4):
        e = b.sector_projector(n).reshape(-1)
        vecs.append(e / np.linalg.norm(e))
    ref = sum(np.outer(v, v.conj()) for v in vecs)
    assert np.abs(split.projector_for(1.0) - ref).max() < 1e-8


def test_decay_bound(hop3_instance):
    _, _, maps, split = hop3_instance
    A = maps.superop_VPhi @ split.P_less
    Ak = np.eye(A.shape[0])
    for k in range(1, 201):
        Ak = A @ Ak
        assert np.linalg.norm(Ak, 2) <= split.C_bound * np.exp(-split.gamma * k) * (1 + 1e-9)


def test_ambiguity_band():
    fake = SimpleNamespace(superop_VPhi=np.diag([1.0, 1 - 5e-9, 0.5]).astype(complex))
    with pytest.raises(ClassificationAmbiguityError):
        sp.split_contraction(fake)


def test_pinching_fixed_points(rng):
    model = cpl.build_T_hop(3)
    maps = dyn.build_channel_maps(np.eye(3), model)
    phi_map = maps.superop_Phi

    def fixed(x, y):
        m = np.outer(x, y.conj()).reshape(-1)
        return np.linalg.norm(phi_map @ m - m) < 1e-10

    for P in model.projectors:
        x = P @ (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        y = P @ (rng.standard_normal(8) + 1j * rng.standard_normal(8))
        assert fixed(x, y)
    P0, P1 = model.projectors[0], model.projectors[1]
    x = P0 @ rng.standard_normal(8)
    y = P1 @ rng.standard_normal(8)
    assert not fixed(x, y)
    z = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    assert not fixed(z, z)


def snd_oracle(alpha):
    """Min distance between eigenvalue classes of X -> G* X G, by brute force over all pairs."""
    d = len(alpha)
    classes = {}
    for I in product((0, 1), repeat=d):
        for J in product((0, 1), repeat=d):
            key = (tuple(j and not i for i, j in zip(I, J)), tuple(i and not j for i, j in zip(I, J)))
            if not any(key[0]) and not any(key[1]):
                key = "diagonal"
            classes[key] = np.exp(-1j * sum(a * (j - i) for a, i, j in zip(alpha, I, J)))
    vals = list(classes.values())
    return min(abs(a - b) for k, a in enumerate(vals) for b in vals[:k])


def test_snd_against_oracle():
    for d, seed in [(2, 1), (3, 2), (3, 3), (4, 4)]:
        V = genericity.haar_sample(d, seed).U
        rep = sp.check_SND(V)
        ref = snd_oracle(rep.phases)
        # chord vs arc length
        assert 2 * np.sin(rep.min_distance / 2) == pytest.approx(ref, rel=1e-9)
        assert rep.holds


def test_snd_examples():
    assert not sp.check_SND(np.eye(3)).holds
    alpha = [1.0, np.sqrt(2), np.pi / np.e]
    rep = sp.check_SND(np.diag(np.exp(1j * np.array(alpha))))
    assert rep.holds
    assert rep.literal_holds is False
    failures = sum(not sp.check_SND(genericity.haar_sample(4, 5, i).U, literal=False).holds for i in range(100))
    assert failures == 0


def test_literal_snd_never_holds():
    for d in (2, 3, 4):
        assert sp.check_SND(genericity.haar_sample(d, 8).U).literal_holds is False


def test_diag_counterexample():
    model = cpl.build_T_hop(3)
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, np.exp(0.7j)]])
    V = model.f @ swap @ model.f.conj().T
    rep = sp.check_Diag(V, model)
    assert not rep.holds
    assert rep.minimum < 1e-12
    assert rep.minor_consistency < 1e-10


def test_diag_offdiag_hold_for_haar(hop3_instance):
    V, model, _, _ = hop3_instance
    diag, off = sp.check_Diag(V, model), sp.check_OffDiag(V, model)
    assert diag.holds and off.holds
    C = diag.C_matrix
    assert np.abs(C.conj().T @ C - np.eye(3)).max() < 1e-10
    assert diag.minor_consistency < 1e-10 and off.minor_consistency < 1e-10
    assert cpl.check_MND(model).holds


def test_offdiag_implies_mnd():
    b = fock.enumerate_basis(3)
    model = cpl.build_coupling(np.eye(3), b)
    V = genericity.haar_sample(3, 0).U
    assert not sp.check_OffDiag(V, model).holds


def test_checks_refuse_generic_operator(rng):
    b = fock.enumerate_basis(2)
    model = cpl.coupling_from_operator(random_hermitian(4, rng), b)
    with pytest.raises(UnsupportedCouplingError):
        sp.check_Diag(np.eye(2), model)


def test_cyc():
    model4 = cpl.build_T_hop(4)
    rep = sp.check_Cyc(genericity.haar_sample(4, 3).U, model4)
    assert rep.holds is True
    rep = sp.check_Cyc(f_diagonal(model4, [0.3, 1.1, 2.0, -0.4]), model4)
    assert rep.holds is False
    # sector 2 of the d=3 hopping model has a rank-one B^+ corner
    model3 = cpl.build_T_hop(3)
    rep = sp.check_Cyc(f_diagonal(model3, [0.3, 1.1, 2.0]), model3)
    assert rep.sectors[2].per_mu[1.0] == ("true", 1, 1)


def test_steady_state(hop3_instance):
    V, model, maps, split = hop3_instance
    b = model.basis
    _, W = sp.eigensystem_of_unitary(V)
    psi = fock.second_quantize_unitary(b, W)[:, b.index_of[(2,)]]
    rho = np.outer(psi, psi.conj())
    ss = sp.steady_state(rho, split, model)
    s1 = b.sector(1)
    ref = np.zeros((8, 8), dtype=complex)
    ref[s1, s1] = np.eye(3) / comb(3, 1)
    assert np.abs(ss.closed_form - ref).max() < 1e-14
    assert ss.discrepancy < 1e-8
    mixed = np.eye(8) / 8
    assert np.abs(sp.steady_state(mixed, split, model).closed_form - mixed).max() < 1e-14


def test_steady_state_hypothesis():
    model = cpl.build_T_hop(3)
    maps = dyn.build_channel_maps(np.eye(3), model)
    split = sp.split_contraction(maps)
    v = (fock.enumerate_basis(3).vector(()) + fock.enumerate_basis(3).vector((1, 2, 3))) / np.sqrt(2)
    with pytest.raises(HypothesisViolationError, match="Omega"):
        sp.steady_state(np.outer(v, v.conj()), split, model)


def test_report_dict(hop3_instance):
    V, model, _, _ = hop3_instance
    rep = sp.assumption_report(V, model)
    d = rep.to_dict()
    assert d["snd"]["holds"] and d["diag"]["holds"]
    assert rep.main_assumptions


def test_spectrum_table_order(hop3_instance):
    *_, split = hop3_instance
    rows = sp.spectrum_table(split)
    assert len(rows) == 64
    mods = [r[2] for r in rows]
    assert mods == sorted(mods, reverse=True)
    assert sum(r[4] == "peripheral" for r in rows) == split.n_peripheral
