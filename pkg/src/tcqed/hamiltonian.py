"""Tavis-Cummings and three-level cavity Hamiltonians, excitation manifolds,
and closed-form splittings.

All Hamiltonians here are ``H/h`` in GHz (cyclic).  Couplings are passed as
g/2pi in MHz and converted internally.  Detunings follow ``Delta = w_q - w_r``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .operators import (
    HilbertLayout,
    OperatorMatrix,
    destroy,
    diagonalize,
    embed,
    number,
)

LEVEL_NAMES = "gefhij"
MANIFOLD_TOL = 1e-10


@dataclass(frozen=True)
class TCModel:
    omega_r: float
    omega_q: tuple[float, ...]
    g: tuple[float, ...]
    layout: HilbertLayout

    def __post_init__(self):
        object.__setattr__(self, "omega_q", tuple(float(w) for w in self.omega_q))
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        if len(self.omega_q) != len(self.g):
            raise ValueError("omega_q and g must have equal lengths")
        if any(x <= 0 for x in self.g):
            raise ValueError("couplings must be positive")

    @classmethod
    def create(cls, omega_r, omega_q, g, n_cavity: int = 3) -> TCModel:
        omega_q = tuple(np.atleast_1d(omega_q)) if np.ndim(omega_q) else (float(omega_q),)
        g = tuple(np.atleast_1d(g))
        return cls(omega_r, omega_q, g, HilbertLayout([n_cavity] + [2] * len(omega_q)))


@dataclass(frozen=True)
class ThreeLevelModel:
    """Cavity coupled to anharmonic qudits with ground-referenced level energies.

    ``levels[i]`` holds ``(0, w_e, w_f[, ...])`` in GHz for qudit ``i``;
    ``g_ge`` and ``g_ef`` are MHz.
    """

    omega_r: float
    levels: tuple[tuple[float, ...], ...]
    g_ge: tuple[float, ...]
    g_ef: tuple[float, ...]
    n_cavity: int = 4

    def __post_init__(self):
        levels = tuple(tuple(float(x) for x in lv) for lv in self.levels)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "g_ge", tuple(float(x) for x in self.g_ge))
        object.__setattr__(self, "g_ef", tuple(float(x) for x in self.g_ef))
        if not (len(levels) == len(self.g_ge) == len(self.g_ef)):
            raise ValueError("levels, g_ge and g_ef need one entry per qudit")
        for lv in levels:
            if lv[0] != 0.0:
                raise ValueError("levels must be ground-referenced")
            if len(lv) >= 3 and not lv[2] < 2 * lv[1]:
                raise ValueError("transmon levels need negative anharmonicity (w_f < 2 w_e)")

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout([self.n_cavity] + [len(lv) for lv in self.levels])


@dataclass(frozen=True, eq=False)
class ManifoldBlock:
    n_excitations: int
    basis_labels: tuple[str, ...]
    block: np.ndarray
    indices: np.ndarray  # product-basis indices, in label order

    def eigenvalues(self) -> np.ndarray:
        return diagonalize(self.block).eigenvalues


def excitation_operator(layout: HilbertLayout) -> OperatorMatrix:
    """Total excitation number: photons plus qudit level indices."""
    total = embed(number(layout.subsystem_dims[0]), 0, layout)
    for k in range(1, len(layout)):
        total = total + embed(number(layout.subsystem_dims[k]), k, layout)
    return total


def excitation_numbers(layout: HilbertLayout) -> np.ndarray:
    return layout.basis_states().sum(axis=1)


def build_tc_hamiltonian(model: TCModel) -> OperatorMatrix:
    """``w_r a^dag a + sum_i (w_i/2) sz_i + sum_i g_i (a^dag s-_i + a s+_i)`` in GHz."""
    layout = model.layout
    n_q = len(model.omega_q)
    if len(layout) != n_q + 1 or any(d != 2 for d in layout.subsystem_dims[1:]):
        raise ValueError(f"layout {layout.subsystem_dims} does not fit a cavity plus {n_q} two-level qubits")
    a = embed(destroy(layout.subsystem_dims[0]), 0, layout)
    h = model.omega_r * (a.dag() @ a)
    sz = np.diag([-1.0, 1.0])
    for i, (w, g) in enumerate(zip(model.omega_q, model.g)):
        sm = embed(destroy(2), i + 1, layout)
        h = h + (w / 2) * embed(sz, i + 1, layout)
        h = h + (g * 1e-3) * (a.dag() @ sm + a @ sm.dag())
    return OperatorMatrix(layout, h.data, hermitian=True)


def _ladder_couplings(n_levels: int, g_ge: float, g_ef: float) -> np.ndarray:
    c = np.zeros((n_levels, n_levels), dtype=complex)
    if n_levels >= 2:
        c[0, 1] = g_ge
    if n_levels >= 3:
        c[1, 2] = g_ef
    return c  # upper triangle: <i| lowering |j>, adjacent levels only


def build_three_level_hamiltonian(model: ThreeLevelModel) -> OperatorMatrix:
    """Multi-level qudit Hamiltonian in the rotating-wave form.

    Only adjacent-level couplings are kept (g_gf = 0), and of the
    ``(a^dag + a) |i><j|`` products only the excitation-conserving ones
    ``a^dag |i><j|`` (i below j) and their conjugates survive.
    """
    layout = model.layout
    a = embed(destroy(model.n_cavity), 0, layout)
    h = model.omega_r * (a.dag() @ a)
    for k, lv in enumerate(model.levels):
        q = k + 1
        h = h + embed(np.diag(np.asarray(lv, dtype=complex)), q, layout)
        low = _ladder_couplings(len(lv), model.g_ge[k] * 1e-3, model.g_ef[k] * 1e-3)
        lower = embed(low, q, layout)
        h = h + a.dag() @ lower + a @ lower.dag()
    return OperatorMatrix(layout, h.data, hermitian=True)


def _label(state: Sequence[int]) -> str:
    qubits = ",".join(LEVEL_NAMES[s] for s in state[1:])
    return f"|{qubits},{state[0]}>" if qubits else f"|{state[0]}>"


def manifold_block(h: OperatorMatrix, n_exc: int) -> ManifoldBlock:
    """Restriction of an excitation-conserving Hamiltonian to ``n_exc`` excitations.

    Basis states are ordered by qudit levels (lexicographic), so for a single
    qudit the order is ``|g,n>, |e,n-1>, |f,n-2>, ...``.
    """
    layout = h.layout
    n_op = excitation_operator(layout)
    comm = h.commutator(n_op).norm()
    if comm > MANIFOLD_TOL * max(h.norm(), 1.0):
        raise ValueError(f"Hamiltonian does not conserve excitation number (|[H,N]| = {comm:.2e})")
    states = layout.basis_states()
    exc = states.sum(axis=1)
    if n_exc < 0 or n_exc > layout.subsystem_dims[0] - 1:
        raise ValueError(f"manifold {n_exc} is truncated by the cavity cutoff {layout.subsystem_dims[0]}")
    idx = np.flatnonzero(exc == n_exc)
    order = sorted(idx, key=lambda i: tuple(states[i][1:]))
    idx = np.array(order, dtype=int)
    dense = h.dense()
    block = dense[np.ix_(idx, idx)]
    labels = tuple(_label(states[i]) for i in idx)
    return ManifoldBlock(n_exc, labels, block, idx)


@dataclass(frozen=True)
class TransitionLine:
    label: str
    lower: tuple[int, int]  # (manifold, eigen-index)
    upper: tuple[int, int]
    freq: float  # GHz


def transition_frequencies(blocks: Sequence[ManifoldBlock]) -> list[TransitionLine]:
    """All differences between eigenvalues of consecutive excitation manifolds."""
    blocks = sorted(blocks, key=lambda b: b.n_excitations)
    ns = [b.n_excitations for b in blocks]
    if ns != list(range(ns[0], ns[0] + len(ns))):
        raise ValueError(f"manifolds must be consecutive, got {ns}")
    energies = [b.eigenvalues() for b in blocks]
    lines = []
    for lo in range(len(blocks) - 1):
        n = ns[lo]
        for i, e_lo in enumerate(energies[lo]):
            for j, e_hi in enumerate(energies[lo + 1]):
                lines.append(TransitionLine(f"{n}.{i}->{n + 1}.{j}", (n, i), (n + 1, j), float(e_hi - e_lo)))
    return lines


def jc_eigenvalues(omega_r: float, omega_e: float, g: float) -> tuple[float, float]:
    """Dressed one-excitation energies ``(E-, E+)`` in GHz for coupling g (MHz)."""
    if g <= 0:
        raise ValueError("g must be positive")
    mean = (omega_r + omega_e) / 2
    half = 0.5 * np.sqrt(4 * (g * 1e-3) ** 2 + (omega_r - omega_e) ** 2)
    return mean - half, mean + half


def collective_splitting(g_list: Sequence[float]) -> float:
    """Resonant bright-doublet splitting ``2 sqrt(sum g_i^2)`` in MHz."""
    g = np.asarray(g_list, dtype=float)
    if g.size == 0:
        raise ValueError("need at least one coupling")
    return float(2.0 * np.sqrt(np.sum(g**2)))


def dispersive_drift(g_list: Sequence[float], delta_list: Sequence[float]) -> float:
    """``sum g_i^2 / Delta_i`` in MHz, with g in MHz and Delta = w_i - w_r in GHz.

    The cavity itself moves by minus this amount.
    """
    g = np.asarray(g_list, dtype=float)
    d = np.asarray(delta_list, dtype=float)
    if g.shape != d.shape:
        raise ValueError("g_list and delta_list must have equal lengths")
    if np.any(d == 0):
        raise ValueError("dispersive drift is undefined for a resonant qubit (Delta = 0)")
    return float(np.sum(g**2 / (d * 1e3)))


def one_excitation_block(omega_r: float, omega_q: Sequence[float], g: Sequence[float]) -> np.ndarray:
    """Single-excitation block of the TC Hamiltonian in the basis ``|g..g,1>, |e..,0>, ...``,
    energies measured from the vacuum (GHz)."""
    n = len(omega_q)
    m = np.zeros((n + 1, n + 1))
    m[0, 0] = omega_r
    m[0, 1:] = m[1:, 0] = np.asarray(g, dtype=float) * 1e-3
    m[1:, 1:] = np.diag(np.asarray(omega_q, dtype=float))
    return m


def cavity_like_frequency(omega_r: float, omega_q: Sequence[float], g: Sequence[float]) -> float:
    """Eigenfrequency of the one-excitation block with the largest photon weight."""
    dec = diagonalize(one_excitation_block(omega_r, omega_q, g))
    k = int(np.argmax(np.abs(dec.eigenvectors[0]) ** 2))
    return float(dec.eigenvalues[k])

