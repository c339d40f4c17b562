"""Fermionic quantum walks locally coupled to a bosonic quantum-walk reservoir."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .coupling import build_coupling, build_T_hop, coupling_from_operator, spectral_decompose
from .dynamics import (build_channel_maps, cptp_verify, evolve_state, exact_propagate,
                       propagator_matrix, ris_propagate, truncated_propagate)
from .fock import enumerate_basis, second_quantize_generator, second_quantize_unitary
from .reservoir import diagonal_symbol, identity_symbol, thermal_kernel

__all__ = [
    "__version__",
    "build_T_hop", "build_channel_maps", "build_coupling", "coupling_from_operator",
    "cptp_verify", "diagonal_symbol", "enumerate_basis", "evolve_state", "exact_propagate",
    "identity_symbol", "propagator_matrix", "ris_propagate", "second_quantize_generator",
    "second_quantize_unitary", "spectral_decompose", "thermal_kernel", "truncated_propagate",
]
