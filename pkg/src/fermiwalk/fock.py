"""Antisymmetric Fock space over a d-dimensional one-particle space.

Basis vectors are wedge products ``f_{i1} ^ ... ^ f_{in}`` of the canonical
one-particle basis, labelled by strictly increasing 1-based tuples. The
ordering is sector-major (particle number ascending) and lexicographic within
a sector, so every matrix built here is reproducible bit-for-bit.

Operators are plain dense ``complex`` arrays of shape ``(2**d, 2**d)``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations, permutations
from math import comb

import numpy as np

from ._linalg import as_square, require_hermitian, require_unitary
from .errors import ConfigurationError

MAX_SITES = 12


@dataclass(frozen=True)
class FockBasis:
    d: int
    states: tuple = field(repr=False)
    index_of: dict = field(repr=False, compare=False)
    sector_offsets: tuple = field(repr=False)

    @property
    def dim(self):
        return 1 << self.d

    def sector(self, n):
        """Slice of basis indices spanning the n-particle sector."""
        return slice(self.sector_offsets[n], self.sector_offsets[n + 1])

    def sector_states(self, n):
        return self.states[self.sector(n)]

    def sector_size(self, n):
        return self.sector_offsets[n + 1] - self.sector_offsets[n]

    @cached_property
    def particle_number(self):
        """Particle number of every basis vector, in basis order."""
        return np.array([len(s) for s in self.states])

    @cached_property
    def masks(self):
        return tuple(_to_mask(s) for s in self.states)

    def sector_projector(self, n):
        p = np.zeros((self.dim, self.dim), dtype=complex)
        sl = self.sector(n)
        p[sl, sl] = np.eye(self.sector_size(n))
        return p

    def vector(self, multi_index):
        """Basis vector for a wedge product given by a 1-based increasing tuple."""
        v = np.zeros(self.dim, dtype=complex)
        v[self.index_of[tuple(multi_index)]] = 1.0
        return v


def enumerate_basis(d):
    """Build the Fock basis for ``d`` sites (1 <= d <= 12)."""
    if not isinstance(d, (int, np.integer)) or isinstance(d, bool) or not 1 <= d <= MAX_SITES:
        raise ConfigurationError(f"site count d must be an integer in 1..{MAX_SITES}, got {d!r}")
    d = int(d)
    states = []
    offsets = [0]
    for n in range(d + 1):
        states.extend(combinations(range(1, d + 1), n))
        offsets.append(len(states))
    states = tuple(states)
    return FockBasis(
        d=d,
        states=states,
        index_of={s: i for i, s in enumerate(states)},
        sector_offsets=tuple(offsets),
    )


def _to_mask(state):
    m = 0
    for j in state:
        m |= 1 << (j - 1)
    return m


def _from_mask(mask, d):
    return tuple(j for j in range(1, d + 1) if mask >> (j - 1) & 1)


def _check_site(basis, j):
    if not isinstance(j, (int, np.integer)) or not 1 <= j <= basis.d:
        raise ConfigurationError(f"site index must be in 1..{basis.d}, got {j!r}")
    return int(j)


def _create(mask, j):
    """Apply a*_j to a basis mask; returns (sign, new_mask) or None."""
    bit = 1 << (j - 1)
    if mask & bit:
        return None
    sign = -1 if bin(mask & (bit - 1)).count("1") % 2 else 1
    return sign, mask | bit


def _annihilate(mask, j):
    bit = 1 << (j - 1)
    if not mask & bit:
        return None
    sign = -1 if bin(mask & (bit - 1)).count("1") % 2 else 1
    return sign, mask & ~bit


def creation_op(basis, j):
    """Matrix of a*_j; ``f_j ^ f_I`` is reordered into increasing order with its sign."""
    j = _check_site(basis, j)
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    lookup = {m: i for i, m in enumerate(basis.masks)}
    for col, mask in enumerate(basis.masks):
        hit = _create(mask, j)
        if hit is not None:
            out[lookup[hit[1]], col] = hit[0]
    return out


def annihilation_op(basis, j):
    j = _check_site(basis, j)
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    lookup = {m: i for i, m in enumerate(basis.masks)}
    for col, mask in enumerate(basis.masks):
        hit = _annihilate(mask, j)
        if hit is not None:
            out[lookup[hit[1]], col] = hit[0]
    return out


def number_op(basis, j):
    j = _check_site(basis, j)
    bit = 1 << (j - 1)
    return np.diag([1.0 + 0j if m & bit else 0j for m in basis.masks])


def creation_op_vec(basis, phi):
    """a*(phi) = sum_j phi_j a*_j for a one-particle vector phi."""
    phi = np.asarray(phi, dtype=complex)
    if phi.shape != (basis.d,):
        raise ConfigurationError(f"one-particle vector must have length {basis.d}")
    return sum(phi[j - 1] * creation_op(basis, j) for j in range(1, basis.d + 1))


def annihilation_op_vec(basis, phi):
    """a(phi), the adjoint of a*(phi); antilinear in phi."""
    return creation_op_vec(basis, phi).conj().T


def wedge_gram(u_list, v_list):
    """Scalar product <u1^...^un | v1^...^vn> as the determinant of the Gram matrix."""
    u = np.atleast_2d(np.asarray(u_list, dtype=complex))
    v = np.atleast_2d(np.asarray(v_list, dtype=complex))
    if len(u_list) == 0 or len(v_list) == 0:
        raise ConfigurationError("wedge products need at least one factor")
    if u.shape != v.shape:
        raise ConfigurationError(f"length mismatch: {u.shape[0]} vs {v.shape[0]} factors")
    return complex(np.linalg.det(u.conj() @ v.T))


def antisymmetrized_tensor(vectors):
    """Explicit u1^...^un in the n-fold tensor product, with the 1/sqrt(n!) weight."""
    vectors = [np.asarray(x, dtype=complex) for x in vectors]
    n = len(vectors)
    out = 0
    for perm in permutations(range(n)):
        sign = _perm_sign(perm)
        t = vectors[perm[0]]
        for k in perm[1:]:
            t = np.multiply.outer(t, vectors[k])
        out = out + sign * t
    return out / np.sqrt(float(np.prod(range(1, n + 1))))


def _perm_sign(perm):
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def second_quantize_unitary(basis, u, check=True):
    """Gamma(U): block-diagonal over sectors with entries given by n x n minors of U."""
    u = require_unitary(u, name="U") if check else as_square(u, "U")
    if u.shape[0] != basis.d:
        raise ConfigurationError(f"U must be {basis.d}x{basis.d}")
    return _compound(basis, u)


def second_quantize_contraction(basis, a):
    """Gamma(A) for any d x d matrix; used for non-unitary frame changes."""
    a = as_square(a, "A")
    if a.shape[0] != basis.d:
        raise ConfigurationError(f"A must be {basis.d}x{basis.d}")
    return _compound(basis, a)


def _compound(basis, a):
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    out[0, 0] = 1.0
    for n in range(1, basis.d + 1):
        sl = basis.sector(n)
        idx = np.array(basis.sector_states(n)) - 1
        if n == basis.d:
            out[sl, sl] = np.linalg.det(a)
            continue
        rows = a[idx]  # (m, n, d)
        for c, cols in enumerate(idx):
            out[sl.start:sl.stop, sl.start + c] = np.linalg.det(rows[:, :, cols])
    return out


def second_quantize_generator(basis, h, check=True):
    """dGamma(H) = sum_ij <f_i, H f_j> a*_i a_j."""
    h = require_hermitian(h, name="H") if check else as_square(h, "H")
    if h.shape[0] != basis.d:
        raise ConfigurationError(f"H must be {basis.d}x{basis.d}")
    d = basis.d
    out = np.zeros((basis.dim, basis.dim), dtype=complex)
    lookup = {m: i for i, m in enumerate(basis.masks)}
    for col, mask in enumerate(basis.masks):
        for j in range(1, d + 1):
            hit = _annihilate(mask, j)
            if hit is None:
                continue
            s1, m1 = hit
            for i in range(1, d + 1):
                if h[i - 1, j - 1] == 0:
                    continue
                hit2 = _create(m1, i)
                if hit2 is None:
                    continue
                s2, m2 = hit2
                out[lookup[m2], col] += s1 * s2 * h[i - 1, j - 1]
    return out


def sector_sizes(d):
    return tuple(comb(d, n) for n in range(d + 1))
