"""Composite Hilbert space: qubit 1 (3 levels), qubits 2..n (4 levels), one cavity mode.

Site ordering is fixed as ``(qubit 1, qubit 2, ..., qubit n, cavity)`` with the
cavity index varying fastest in the flat index (C order).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

MAX_DENSE_DIM = 2048


class BasisError(ValueError):
    """Invalid basis construction or mismatched operands."""


@dataclass(frozen=True)
class CompositeBasis:
    """Tensor-product basis for ``n_qubits`` qubit systems and a truncated cavity.

    Parameters
    ----------
    n_qubits : int
        Total number of qubit systems, including the three-level qubit 1.
    n_max : int
        Highest retained photon number; the cavity dimension is ``n_max + 1``.
    """

    n_qubits: int
    n_max: int = 2

    def __post_init__(self):
        if int(self.n_qubits) != self.n_qubits or self.n_qubits < 2:
            raise BasisError(f"n_qubits must be an integer >= 2, got {self.n_qubits!r}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise BasisError(f"n_max must be an integer >= 1, got {self.n_max!r}")

    @property
    def levels_per_site(self) -> tuple[int, ...]:
        return (3,) + (4,) * (self.n_qubits - 1)

    @property
    def cavity_dim(self) -> int:
        return self.n_max + 1

    @property
    def dims(self) -> tuple[int, ...]:
        return self.levels_per_site + (self.cavity_dim,)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_sites(self) -> int:
        return self.n_qubits + 1

    @property
    def cavity_site(self) -> int:
        return self.n_qubits

    def qubit_site(self, j: int) -> int:
        """Site index of qubit ``j`` (1-based label as in the protocol)."""
        if not 1 <= j <= self.n_qubits:
            raise BasisError(f"qubit label {j} outside 1..{self.n_qubits}")
        return j - 1

    def site_dim(self, site: int) -> int:
        self._check_site(site)
        return self.dims[site]

    def index(self, levels) -> int:
        """Flat index of the basis state with the given local levels."""
        levels = tuple(int(x) for x in levels)
        if len(levels) != self.n_sites:
            raise BasisError(f"expected {self.n_sites} local levels, got {len(levels)}")
        for lv, d in zip(levels, self.dims):
            if not 0 <= lv < d:
                raise BasisError(f"level {lv} out of range for local dimension {d}")
        return int(np.ravel_multi_index(levels, self.dims))

    def levels(self, index: int) -> tuple[int, ...]:
        if not 0 <= index < self.dim:
            raise BasisError(f"index {index} outside 0..{self.dim - 1}")
        return tuple(int(x) for x in np.unravel_index(index, self.dims))

    def level_table(self) -> np.ndarray:
        """Array of shape ``(dim, n_sites)`` with the local levels of every basis state."""
        grids = np.indices(self.dims).reshape(self.n_sites, -1)
        return grids.T.copy()

    def _check_site(self, site: int):
        if not 0 <= site < self.n_sites:
            raise BasisError(f"site {site} outside 0..{self.n_sites - 1}")

    def describe(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "n_max": self.n_max,
            "dims": list(self.dims),
            "ordering": "qubit1,qubit2..qubitn,cavity (cavity fastest)",
        }


def build_basis(n: int, n_max: int = 2) -> CompositeBasis:
    return CompositeBasis(n, n_max)


@dataclass
class StateVector:
    """Complex amplitudes over a :class:`CompositeBasis`.

    The norm is tracked, never silently renormalized.
    """

    amplitudes: np.ndarray
    basis: CompositeBasis = field(repr=False)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (self.basis.dim,):
            raise BasisError(
                f"amplitude count {self.amplitudes.shape} does not match basis dimension {self.basis.dim}"
            )

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def copy(self) -> "StateVector":
        return StateVector(self.amplitudes.copy(), self.basis)

    def probabilities(self) -> np.ndarray:
        """``|amplitude|^2`` reshaped to the site dimensions."""
        return (np.abs(self.amplitudes) ** 2).reshape(self.basis.dims)

    def with_amplitudes(self, amplitudes) -> "StateVector":
        return StateVector(amplitudes, self.basis)


# -- local operators -------------------------------------------------------


def ket_bra(dim: int, k: int, l: int) -> sp.csr_matrix:
    """``|k><l|`` on a single site of dimension ``dim``."""
    if not (0 <= k < dim and 0 <= l < dim):
        raise BasisError(f"levels ({k}, {l}) out of range for dimension {dim}")
    return sp.csr_matrix(([1.0 + 0j], ([k], [l])), shape=(dim, dim))


def projector(dim: int, k: int) -> sp.csr_matrix:
    return ket_bra(dim, k, k)


def destroy(dim: int) -> sp.csr_matrix:
    """Truncated annihilation operator ``a`` on ``dim`` Fock states."""
    n = np.arange(1, dim)
    return sp.csr_matrix((np.sqrt(n).astype(complex), (n - 1, n)), shape=(dim, dim))


def number(dim: int) -> sp.csr_matrix:
    return sp.diags(np.arange(dim).astype(complex), format="csr")


# -- embedding -------------------------------------------------------------


def embed(op, site: int, basis: CompositeBasis) -> sp.csr_matrix:
    """Embed a single-site operator into the full space (identity elsewhere)."""
    return embed_product({site: op}, basis)


def embed_product(ops: dict, basis: CompositeBasis) -> sp.csr_matrix:
    """Embed a product of operators acting on distinct sites.

    ``ops`` maps site index to a local (sparse or dense) operator.
    """
    factors = []
    for site, d in enumerate(basis.dims):
        op = ops.get(site)
        if op is None:
            factors.append(sp.identity(d, dtype=complex, format="csr"))
            continue
        op = sp.csr_matrix(op, dtype=complex)
        if op.shape != (d, d):
            raise BasisError(f"operator shape {op.shape} does not match site {site} dimension {d}")
        factors.append(op)
    for site in ops:
        basis._check_site(site)
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), factors).tocsr()


def to_dense(op, max_dim: int = MAX_DENSE_DIM) -> np.ndarray:
    """Materialize a sparse operator, refusing above ``max_dim``."""
    if op.shape[0] > max_dim:
        raise BasisError(f"dense materialization refused for dimension {op.shape[0]} > {max_dim}")
    return op.toarray() if sp.issparse(op) else np.asarray(op)


def hermiticity_error(op) -> float:
    """``max |H - H^dagger|`` over entries."""
    diff = op - op.conj().T
    if sp.issparse(diff):
        return float(abs(diff).max()) if diff.nnz else 0.0
    return float(np.max(np.abs(diff))) if diff.size else 0.0


# -- states ----------------------------------------------------------------


def basis_state(basis: CompositeBasis, levels) -> StateVector:
    amps = np.zeros(basis.dim, dtype=complex)
    amps[basis.index(levels)] = 1.0
    return StateVector(amps, basis)


def product_state(basis: CompositeBasis, local_states) -> StateVector:
    """Tensor product of local state vectors, one per site (cavity last)."""
    if len(local_states) != basis.n_sites:
        raise BasisError(f"expected {basis.n_sites} local states, got {len(local_states)}")
    vecs = []
    for v, d in zip(local_states, basis.dims):
        v = np.asarray(v, dtype=complex)
        if v.shape != (d,):
            raise BasisError(f"local state of shape {v.shape} for site dimension {d}")
        vecs.append(v)
    return StateVector(reduce(np.kron, vecs), basis)


def initial_product_state(basis: CompositeBasis) -> StateVector:
    """Every qubit in ``(|0> + |1>)/sqrt(2)``, cavity in vacuum."""
    local = []
    for d in basis.levels_per_site:
        v = np.zeros(d, dtype=complex)
        v[:2] = 1 / np.sqrt(2)
        local.append(v)
    vac = np.zeros(basis.cavity_dim, dtype=complex)
    vac[0] = 1.0
    return product_state(basis, local + [vac])


def population(psi: StateVector, site: int, level: int) -> float:
    """Probability that ``site`` is found in ``level``."""
    basis = psi.basis
    d = basis.site_dim(site)
    if not 0 <= level < d:
        raise BasisError(f"level {level} out of range for site {site} (dimension {d})")
    return float(site_populations(psi, site)[level])


def site_populations(psi: StateVector, site: int) -> np.ndarray:
    """Marginal level populations of one site."""
    psi.basis._check_site(site)
    probs = psi.probabilities()
    axes = tuple(a for a in range(probs.ndim) if a != site)
    return probs.sum(axis=axes)


def overlap(psi: StateVector, phi: StateVector) -> complex:
    """``<phi|psi>``."""
    if psi.basis != phi.basis:
        raise BasisError("states live on different bases")
    return complex(np.vdot(phi.amplitudes, psi.amplitudes))
