"""Experiment configuration: YAML schema, validation with line numbers, instance building."""

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import coupling as cpl
from . import dynamics, fock, genericity, reservoir, spectral
from .errors import ConfigurationError
from .io import matrix_from_json

OBSERVABLE_STREAM = 1_000_003
MAX_SELECTION_TRIES = 200


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VSpec(_Strict):
    source: Literal["haar", "matrix", "phases", "identity"] = "haar"
    seed: int | None = None
    index: int = 0
    require_assumptions: bool = False
    matrix: list | None = None
    phases: list[float] | None = None

    @model_validator(mode="after")
    def _fields(self):
        if self.source == "matrix" and self.matrix is None:
            raise ValueError("V source 'matrix' needs a 'matrix' entry")
        if self.source == "phases" and self.phases is None:
            raise ValueError("V source 'phases' needs a 'phases' list")
        return self


class CouplingSpec(_Strict):
    kind: Literal["hop", "tau", "operator"] = "hop"
    phi: float = 0.0
    matrix: list | None = None

    @model_validator(mode="after")
    def _fields(self):
        if self.kind != "hop" and self.matrix is None:
            raise ValueError(f"coupling kind '{self.kind}' needs a 'matrix' entry")
        return self


class ReservoirSpec(_Strict):
    kind: Literal["identity", "diagonal", "thermal", "kernel-table"] = "identity"
    k: float | list[float] | None = None
    beta: float | None = None
    mu: float = 0.0
    dispersion: dict | None = None
    table: list[list[float]] | None = None

    @model_validator(mode="after")
    def _fields(self):
        need = {"diagonal": "k", "thermal": "beta", "kernel-table": "table"}.get(self.kind)
        if need and getattr(self, need) is None:
            raise ValueError(f"reservoir kind '{self.kind}' needs '{need}'")
        if self.kind == "thermal" and self.dispersion is None:
            raise ValueError("reservoir kind 'thermal' needs a 'dispersion' descriptor")
        return self

    def descriptor(self):
        out = {"kind": self.kind}
        if self.kind == "diagonal":
            out["k"] = self.k
        elif self.kind == "thermal":
            out.update(beta=self.beta, mu=self.mu, dispersion=self.dispersion)
        elif self.kind == "kernel-table":
            out["table"] = self.table
        return out


class ObservableSpec(_Strict):
    kind: Literal["random-hermitian", "number", "identity", "matrix"] = "random-hermitian"
    site: int = 1
    seed: int | None = None
    matrix: list | None = None


class StateSpec(_Strict):
    kind: Literal["maximally-mixed", "eigenvector", "basis", "matrix"] = "eigenvector"
    index: list[int] = Field(default_factory=lambda: [1])
    matrix: list | None = None


class Tolerances(_Strict):
    cluster: float = Field(cpl.CLUSTER_TOL, gt=0)
    circle: float = Field(spectral.CIRCLE_TOL, gt=0)
    assumption: float = Field(spectral.ASSUMPTION_TOL, gt=0)
    prune: float = Field(0.0, ge=0)


class ConvergeSpec(_Strict):
    lam: float = 6.0
    mode: Literal["ris", "exact", "truncated", "limit"] = "ris"
    t_max: int | None = None
    stride: int = Field(1, ge=1)
    target: float = Field(1e-6, gt=0)


class GenericitySpec(_Strict):
    samples: int = Field(1000, ge=1)
    n_max: int | None = None
    assumptions: bool = True


class OutputSpec(_Strict):
    matrices: bool = False


class ExperimentConfig(_Strict):
    d: int = Field(3, ge=1, le=fock.MAX_SITES)
    seed: int = 0
    V: VSpec = Field(default_factory=VSpec)
    coupling: CouplingSpec = Field(default_factory=CouplingSpec)
    reservoir: ReservoirSpec = Field(default_factory=ReservoirSpec)
    observable: ObservableSpec = Field(default_factory=ObservableSpec)
    rho0: StateSpec = Field(default_factory=StateSpec)
    lambdas: list[float] = Field(default_factory=lambda: [2.0])
    times: list[int] = Field(default_factory=lambda: [1])
    mode: Literal["exact", "truncated", "ris", "limit"] = "exact"
    order: int | None = None
    budget: int = Field(dynamics.DEFAULT_BUDGET, ge=1)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    converge: ConvergeSpec = Field(default_factory=ConvergeSpec)
    genericity: GenericitySpec = Field(default_factory=GenericitySpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @model_validator(mode="after")
    def _consistency(self):
        if self.mode == "truncated" and self.order is None:
            raise ValueError("mode 'truncated' needs an 'order'")
        if any(t < 0 for t in self.times):
            raise ValueError("times must be non-negative")
        return self


def _locate(node, loc):
    """Line (1-based) of the YAML node addressed by a pydantic error location."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


def load_config(text, source="<config>", overrides=None):
    """Parse and validate YAML text; errors carry the offending line numbers."""
    try:
        data = yaml.safe_load(text) or {}
        tree = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{source}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{source}: top level must be a mapping")
    data.update(overrides or {})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(p for p in err["loc"] if not isinstance(p, str) or not p.startswith("function-"))
            where = ".".join(str(p) for p in loc) or "(top level)"
            ln = _locate(tree, loc)
            prefix = f"{source}:{ln}" if ln else source
            lines.append(f"{prefix}: {where}: {err['msg']}")
        raise ConfigurationError("invalid configuration\n" + "\n".join(lines)) from None


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("fermiwalk.presets").iterdir()
                  if p.name.endswith(".yaml"))


def preset_text(name):
    res = resources.files("fermiwalk.presets") / f"{name}.yaml"
    if not res.is_file():
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res.read_text(encoding="utf-8")


def load_config_source(ref, overrides=None):
    """A file path, or a preset name (optionally written as 'preset:NAME')."""
    if ref.startswith("preset:"):
        name = ref.split(":", 1)[1]
        return load_config(preset_text(name), f"preset:{name}", overrides)
    path = Path(ref)
    if path.is_file():
        return load_config(path.read_text(encoding="utf-8"), str(path), overrides)
    if ref in preset_names():
        return load_config(preset_text(ref), f"preset:{ref}", overrides)
    raise ConfigurationError(f"config {ref!r} is neither a file nor a preset")


def resolved_dict(cfg):
    return cfg.model_dump(mode="json")


def random_hermitian(dim, rng):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = (a + a.conj().T) / 2
    return h / np.linalg.norm(h, 2)


@dataclass(eq=False)
class Instance:
    """Concrete objects built from a config."""

    cfg: ExperimentConfig
    basis: fock.FockBasis = field(repr=False)
    coupling: object = field(repr=False)
    V: np.ndarray = field(repr=False)
    V_index: int | None = None

    @cached_property
    def maps(self):
        return dynamics.build_channel_maps(self.V, self.coupling, self.basis)

    @cached_property
    def symbol(self):
        return reservoir.symbol_from_dict(self.cfg.reservoir.descriptor())

    @cached_property
    def observable(self):
        spec, D = self.cfg.observable, self.basis.dim
        if spec.kind == "identity":
            return np.eye(D, dtype=complex)
        if spec.kind == "number":
            return fock.number_op(self.basis, spec.site)
        if spec.kind == "matrix":
            X = matrix_from_json(spec.matrix)
            if X.shape != (D, D):
                raise ConfigurationError(f"observable must be {D}x{D}")
            return X
        seed = self.cfg.seed if spec.seed is None else spec.seed
        return random_hermitian(D, genericity.sample_rng(seed, OBSERVABLE_STREAM))

    @cached_property
    def rho0(self):
        spec, basis = self.cfg.rho0, self.basis
        D = basis.dim
        if spec.kind == "maximally-mixed":
            return np.eye(D, dtype=complex) / D
        if spec.kind == "matrix":
            return matrix_from_json(spec.matrix)
        idx = tuple(spec.index)
        if idx not in basis.index_of:
            raise ConfigurationError(f"rho0 index {list(idx)} is not an increasing multi-index in 1..{basis.d}")
        if spec.kind == "basis":
            v = basis.vector(idx)
        else:
            _, W = spectral.eigensystem_of_unitary(self.V)
            v = fock.second_quantize_unitary(basis, W, check=False)[:, basis.index_of[idx]]
        return np.outer(v, v.conj())


def _passes(V, coupling, tol):
    rep = spectral.assumption_report(V, coupling, tol, cyc=False, literal_snd=False)
    return rep.main_assumptions


def build_instance(cfg):
    basis = fock.enumerate_basis(cfg.d)
    tol = cfg.tolerances
    c = cfg.coupling
    if c.kind == "hop":
        coupling = cpl.build_T_hop(cfg.d, c.phi, basis, tol.cluster)
    elif c.kind == "tau":
        coupling = cpl.build_coupling(matrix_from_json(c.matrix), basis, tol.cluster)
    else:
        coupling = cpl.coupling_from_operator(matrix_from_json(c.matrix), basis, tol.cluster)
    vs = cfg.V
    index = None
    if vs.source == "identity":
        V = np.eye(cfg.d, dtype=complex)
    elif vs.source == "matrix":
        V = matrix_from_json(vs.matrix)
    elif vs.source == "phases":
        if len(vs.phases) != cfg.d:
            raise ConfigurationError(f"V phases must have length d={cfg.d}")
        V = np.diag(np.exp(1j * np.array(vs.phases)))
    else:
        seed = cfg.seed if vs.seed is None else vs.seed
        index = vs.index
        V = genericity.haar_sample(cfg.d, seed, index).U
        if vs.require_assumptions:
            tries = 0
            while not _passes(V, coupling, tol.assumption):
                tries += 1
                if tries >= MAX_SELECTION_TRIES:
                    raise ConfigurationError("no Haar sample satisfying the assumptions was found")
                index += 1
                V = genericity.haar_sample(cfg.d, seed, index).U
    if V.shape != (cfg.d, cfg.d):
        raise ConfigurationError(f"V must be {cfg.d}x{cfg.d}")
    return Instance(cfg, basis, coupling, V, index)
