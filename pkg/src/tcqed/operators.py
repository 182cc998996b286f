"""Operators on composite cavity-qudit Hilbert spaces.

The subsystem ordering is fixed throughout the package: the cavity is
subsystem 0, followed by the qubits in chip order.  Product-basis indices are
row-major over ``subsystem_dims``, so the last qubit varies fastest.

Density matrices are vectorized row-major (``rho.ravel()``), for which
``vec(A @ X @ B) == kron(A, B.T) @ vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

DENSE_LIMIT = 512
EIGEN_RESIDUAL_TOL = 1e-9
HERMITIAN_FLAG_TOL = 1e-12
HERMITIAN_INPUT_TOL = 1e-10


@dataclass(frozen=True)
class HilbertLayout:
    subsystem_dims: tuple[int, ...]

    def __init__(self, subsystem_dims: Sequence[int]):
        dims = tuple(int(d) for d in subsystem_dims)
        if not dims:
            raise ValueError("layout needs at least one subsystem")
        if any(d < 2 for d in dims):
            raise ValueError(f"every subsystem dimension must be >= 2, got {dims}")
        object.__setattr__(self, "subsystem_dims", dims)

    @property
    def dim(self) -> int:
        return prod(self.subsystem_dims)

    def __len__(self) -> int:
        return len(self.subsystem_dims)

    def basis_states(self) -> np.ndarray:
        """Occupation tuple of every product-basis state, shape ``(dim, n_subsystems)``."""
        grids = np.indices(self.subsystem_dims).reshape(len(self), -1)
        return grids.T.copy()


def _norm(m) -> float:
    if sp.issparse(m):
        return float(sp.linalg.norm(m))
    return float(np.linalg.norm(m))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Complex square matrix tied to a :class:`HilbertLayout`.

    Storage is dense up to ``DENSE_LIMIT`` and CSR sparse above; use
    :meth:`dense` or :meth:`sparse` when a specific representation is needed.
    """

    layout: HilbertLayout
    data: object
    hermitian: bool = field(default=False)

    def __post_init__(self):
        data = self.data
        n = self.layout.dim
        if data.shape != (n, n):
            raise ValueError(f"operator shape {data.shape} does not match layout dim {n}")
        if n > DENSE_LIMIT:
            data = sp.csr_matrix(data, dtype=complex)
        elif sp.issparse(data):
            data = data.toarray().astype(complex)
        else:
            data = np.asarray(data, dtype=complex)
        object.__setattr__(self, "data", data)
        if self.hermitian:
            scale = max(_norm(data), 1.0)
            if _norm(data - data.conj().T) > HERMITIAN_FLAG_TOL * scale:
                raise ValueError("operator flagged Hermitian but H != H^dagger")

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.data)

    def dense(self) -> np.ndarray:
        return self.data.toarray() if self.is_sparse else self.data

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.data)

    def dag(self) -> OperatorMatrix:
        return OperatorMatrix(self.layout, self.data.conj().T, self.hermitian)

    def norm(self) -> float:
        return _norm(self.data)

    def diagonal(self) -> np.ndarray:
        return np.asarray(self.data.diagonal())

    def _check(self, other: OperatorMatrix):
        if other.layout != self.layout:
            raise ValueError(f"layout mismatch: {self.layout} vs {other.layout}")

    def __add__(self, other):
        if isinstance(other, OperatorMatrix):
            self._check(other)
            return OperatorMatrix(self.layout, self.data + other.data)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, OperatorMatrix):
            self._check(other)
            return OperatorMatrix(self.layout, self.data - other.data)
        return NotImplemented

    def __neg__(self):
        return OperatorMatrix(self.layout, -self.data, self.hermitian)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return OperatorMatrix(self.layout, self.data * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            self._check(other)
            return OperatorMatrix(self.layout, self.data @ other.data)
        return NotImplemented

    def commutator(self, other: OperatorMatrix) -> OperatorMatrix:
        return self @ other - other @ self


@dataclass(frozen=True)
class EigenDecomposition:
    """Ascending real eigenvalues (units of the decomposed matrix) and
    orthonormal eigenvectors stored as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def destroy(n_levels: int) -> np.ndarray:
    """Lowering operator truncated to ``n_levels`` with ``<n-1|a|n> = sqrt(n)``."""
    if n_levels < 2:
        raise ValueError(f"n_levels must be >= 2, got {n_levels}")
    return np.diag(np.sqrt(np.arange(1, n_levels, dtype=float)), 1).astype(complex)


def number(n_levels: int) -> np.ndarray:
    return np.diag(np.arange(n_levels, dtype=float)).astype(complex)


def embed(local_op, subsystem_index: int, layout: HilbertLayout) -> OperatorMatrix:
    """Return ``I x ... x local_op x ... x I`` in the layout's ordering."""
    local = np.asarray(local_op.toarray() if sp.issparse(local_op) else local_op, dtype=complex)
    if not 0 <= subsystem_index < len(layout):
        raise ValueError(f"subsystem index {subsystem_index} outside layout of {len(layout)} subsystems")
    d = layout.subsystem_dims[subsystem_index]
    if local.shape != (d, d):
        raise ValueError(
            f"local operator shape {local.shape} does not match subsystem "
            f"{subsystem_index} of dimension {d}"
        )
    left = prod(layout.subsystem_dims[:subsystem_index])
    right = prod(layout.subsystem_dims[subsystem_index + 1:])
    if layout.dim > DENSE_LIMIT:
        out = sp.kron(sp.kron(sp.identity(left), sp.csr_matrix(local)), sp.identity(right), format="csr")
    else:
        out = np.kron(np.kron(np.eye(left), local), np.eye(right))
    return OperatorMatrix(layout, out)


def identity(layout: HilbertLayout) -> OperatorMatrix:
    if layout.dim > DENSE_LIMIT:
        return OperatorMatrix(layout, sp.identity(layout.dim, dtype=complex, format="csr"), True)
    return OperatorMatrix(layout, np.eye(layout.dim, dtype=complex), True)


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    # first component above noise made real positive, for reproducible labels
    out = vecs.copy()
    for k in range(out.shape[1]):
        col = out[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-12 * np.abs(col).max())[0]
        out[:, k] = col * (abs(col[idx]) / col[idx])
    return out


def diagonalize(h) -> EigenDecomposition:
    """Exact Hermitian diagonalization with verified residuals.

    Accepts an :class:`OperatorMatrix` or a plain square array.  Raises
    ``ValueError`` if the input is not Hermitian to 1e-10 relative.
    """
    m = h.dense() if isinstance(h, OperatorMatrix) else np.asarray(h, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.linalg.norm(m), np.finfo(float).tiny)
    if np.linalg.norm(m - m.conj().T) > HERMITIAN_INPUT_TOL * scale:
        raise ValueError("diagonalize requires a Hermitian matrix")
    m = 0.5 * (m + m.conj().T)
    vals, vecs = scipy.linalg.eigh(m)
    vecs = _fix_phases(vecs)
    resid = np.linalg.norm(m @ vecs - vecs * vals, axis=0)
    if np.any(resid > EIGEN_RESIDUAL_TOL * scale):
        raise RuntimeError(f"eigen residual {resid.max():.3e} exceeds tolerance")
    return EigenDecomposition(vals, vecs)


def vectorized_liouvillian(h: OperatorMatrix, collapse_ops=()) -> sp.csr_matrix:
    """Lindblad generator ``L`` with ``vec(drho/dt) = L @ vec(rho)``.

    Parameters
    ----------
    h
        Hamiltonian (angular units; ``drho/dt = -i[h, rho] + ...``).
    collapse_ops
        Iterable of ``(operator, rate)`` pairs; each contributes
        ``rate * (c rho c^dag - {c^dag c, rho}/2)``.
    """
    layout = h.layout
    n = layout.dim
    eye = sp.identity(n, dtype=complex, format="csr")
    hs = h.sparse()
    liou = -1j * (sp.kron(hs, eye) - sp.kron(eye, hs.T))
    for op, rate in collapse_ops:
        if op.layout != layout:
            raise ValueError("collapse operator layout does not match Hamiltonian")
        if rate < 0:
            raise ValueError(f"collapse rate must be >= 0, got {rate}")
        if rate == 0:
            continue
        c = op.sparse()
        cdc = (c.conj().T @ c).tocsr()
        liou = liou + rate * (
            sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, eye) - 0.5 * sp.kron(eye, cdc.T)
        )
    return sp.csr_matrix(liou)
