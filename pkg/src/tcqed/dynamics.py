"""Driven-dissipative steady states and transmission spectra.

Internally everything is solved in angular units of rad/ns: Hamiltonians in
GHz are multiplied by 2pi, rates in 1/s by 1e-9.  The probe frame is applied
at solve time, ``H_rot = H - f_p N_exc + eta (a + a^dag)``, so a
:class:`LindbladModel` stores the lab-frame Hamiltonian once and is reused
across probe frequencies.

The cavity energy decay rate in the master equation is ``2 gamma0`` (the
field decays at ``gamma0``), which makes the bare-cavity ``|<a>|`` a
Lorentzian of half-width ``gamma0``.  Transmission is normalized as
``s21 = i gamma0 <a> / eta`` so that the bare-cavity peak equals one.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .device import (
    BiasVector,
    DeviceConfig,
    bose_occupation,
    flux_from_currents,
    qubit_levels_at_flux,
)
from .fano import apply_background
from .hamiltonian import ThreeLevelModel, build_three_level_hamiltonian, dispersive_drift, excitation_numbers
from .operators import HilbertLayout, OperatorMatrix, destroy, embed, number, vectorized_liouvillian
from .traces import SpectrumMap, TransmissionTrace

TWO_PI = 2 * np.pi
PER_S_TO_PER_NS = 1e-9
MAX_STEADY_DIM = 100
AUTO_STEADY_DIM = 24
RESIDUAL_TOL = 1e-9
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-10
DEFAULT_PHOTONS = 0.01


class SteadyStateError(RuntimeError):
    """The Liouvillian has no unique steady state."""

    def __init__(self, message: str, null_dim: int | None = None):
        super().__init__(message)
        self.null_dim = null_dim


@dataclass(frozen=True, eq=False)
class LindbladModel:
    """Undriven cavity-qubit system.

    ``hamiltonian`` is the lab-frame, excitation-conserving Hamiltonian in
    GHz; the probe frame is applied by the solvers.  ``collapse_channels``
    holds ``(operator, rate in 1/s)`` pairs.  ``gamma0`` is the cavity field
    decay rate into the line (MHz), used for transmission normalization.
    """

    hamiltonian: OperatorMatrix
    collapse_channels: tuple = ()
    n_thermal: float = 0.0
    gamma0: float = 1.0
    cavity_index: int = 0

    def __post_init__(self):
        chans = tuple((op, float(r)) for op, r in self.collapse_channels)
        for op, r in chans:
            if r < 0:
                raise ValueError(f"collapse rate must be >= 0, got {r}")
            if op.layout != self.hamiltonian.layout:
                raise ValueError("collapse operator layout does not match the Hamiltonian")
        if self.n_thermal < 0:
            raise ValueError("n_thermal must be >= 0")
        object.__setattr__(self, "collapse_channels", chans)

    @property
    def layout(self) -> HilbertLayout:
        return self.hamiltonian.layout

    @property
    def dim(self) -> int:
        return self.layout.dim

    def annihilation(self) -> OperatorMatrix:
        return embed(destroy(self.layout.subsystem_dims[self.cavity_index]), self.cavity_index, self.layout)

    def field_decay_rate(self) -> float:
        """Cavity field decay in rad/ns."""
        return TWO_PI * self.gamma0 * 1e-3


@dataclass(frozen=True)
class DriveSpec:
    probe_freq: float  # GHz
    amplitude: float  # rad/s

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("drive amplitude must be >= 0")

    @classmethod
    def for_photon_number(cls, probe_freq: float, gamma0_mhz: float, n_photons: float = DEFAULT_PHOTONS) -> DriveSpec:
        """Drive that puts ``n_photons`` coherent photons in the resonantly driven bare cavity."""
        return cls(probe_freq, drive_for_photons(gamma0_mhz, n_photons))


def drive_for_photons(gamma0_mhz: float, n_photons: float) -> float:
    return float(np.sqrt(n_photons) * TWO_PI * gamma0_mhz * 1e6)


def bare_cavity_photons(amplitude: float, gamma0_mhz: float) -> float:
    """Coherent photon number of the bare cavity driven on resonance."""
    return float((amplitude / (TWO_PI * gamma0_mhz * 1e6)) ** 2)


@dataclass(frozen=True, eq=False)
class SteadyStateResult:
    rho: np.ndarray
    a_expectation: complex
    photon_number: float
    residual: float = 0.0

    def __post_init__(self):
        rho = self.rho
        tr = np.trace(rho)
        if abs(tr - 1) > TRACE_TOL:
            raise ValueError(f"steady state trace {tr} differs from 1")
        if np.linalg.norm(rho - rho.conj().T) > 1e-12:
            raise ValueError("steady state is not Hermitian")
        lam = np.linalg.eigvalsh(rho).min()
        if lam < -POSITIVITY_TOL:
            raise ValueError(f"steady state has negative eigenvalue {lam:.3e}")


# ---------------------------------------------------------------------------
# channels and model construction


def _model_qubits(config: DeviceConfig, qubits: Sequence[int] | None) -> list[int]:
    qubits = list(range(len(config.qubits))) if qubits is None else [int(q) for q in qubits]
    if len(set(qubits)) != len(qubits):
        raise ValueError("qubit indices must be distinct")
    for q in qubits:
        if not 0 <= q < len(config.qubits):
            raise IndexError(f"qubit index {q} out of range")
    return qubits


def device_layout(config: DeviceConfig, qubits: Sequence[int] | None = None) -> HilbertLayout:
    qubits = _model_qubits(config, qubits)
    return HilbertLayout([config.resonator.n_truncation] + [config.qubits[q].n_levels for q in qubits])


def dephasing_rate(t1: float, t2: float) -> float:
    """Pure dephasing rate ``1/T_phi = 1/T2 - 1/(2 T1)`` in 1/s."""
    if t2 > 2 * t1 * (1 + 1e-12):
        raise ValueError(f"T2 = {t2:.3g} s exceeds 2*T1 = {2 * t1:.3g} s")
    return max(1.0 / t2 - 1.0 / (2.0 * t1), 0.0)


def collapse_channels_for(config: DeviceConfig, bias: BiasVector | None = None, qubits: Sequence[int] | None = None,
                          *, qubit_thermal: bool = False) -> list[tuple[OperatorMatrix, float]]:
    """Dissipators for the cavity and each modelled qubit, rates in 1/s.

    Cavity: ``a`` at ``kappa (1 + n)`` and ``a^dag`` at ``kappa n`` with
    ``kappa = 2 * 2pi * gamma0``.  Qubits: the ladder lowering operator at
    ``1/T1`` and ``sqrt(2) b^dag b`` at ``1/T_phi``; for two levels the
    latter equals ``sz/sqrt(2)``, so coherences decay at ``1/(2 T1) + 1/T_phi
    = 1/T2``.  With ``qubit_thermal`` the qubits also get thermal excitation
    at their Bose factor (this needs ``bias``).  Zero-rate channels are
    dropped.
    """
    qubits = _model_qubits(config, qubits)
    layout = device_layout(config, qubits)
    nbar = config.cavity_n_thermal()
    kappa = 2 * TWO_PI * config.resonator.gamma0 * 1e6
    a = embed(destroy(layout.subsystem_dims[0]), 0, layout)
    chans = [(a, kappa * (1 + nbar))]
    if nbar > 0:
        chans.append((a.dag(), kappa * nbar))
    phis = None
    if qubit_thermal:
        if bias is None:
            raise ValueError("qubit thermal channels need the bias point")
        phis = flux_from_currents(config.mutuals, bias)
    for slot, q in enumerate(qubits, start=1):
        spec = config.qubits[q]
        b = embed(destroy(spec.n_levels), slot, layout)
        n_q = 0.0
        if qubit_thermal and config.temperature_mk > 0:
            f_q = qubit_levels_at_flux(spec, phis[q], 2)[1]
            n_q = bose_occupation(f_q, config.temperature_mk)
        chans.append((b, (1 + n_q) / spec.t1))
        if n_q > 0:
            chans.append((b.dag(), n_q / spec.t1))
        g_phi = dephasing_rate(spec.t1, spec.t2)
        if g_phi > 0:
            chans.append((np.sqrt(2.0) * embed(number(spec.n_levels), slot, layout), g_phi))
    return chans


def build_model(config: DeviceConfig, bias: BiasVector, qubits: Sequence[int] | None = None, *,
                fold_dispersive: bool = False, qubit_thermal: bool = False) -> LindbladModel:
    """Lindblad model of the cavity and the listed qubits at one bias point.

    Qubit levels come from the charge-basis transmon model at the flux set by
    ``bias``.  With ``fold_dispersive`` the qubits left out of the simulation
    pull the cavity frequency by their dispersive shift ``-sum g^2/Delta``.
    """
    qubits = _model_qubits(config, qubits)
    phis = flux_from_currents(config.mutuals, bias)
    omega_r = config.resonator.omega_r
    levels, g_ge, g_ef = [], [], []
    for q in qubits:
        spec = config.qubits[q]
        levels.append(tuple(qubit_levels_at_flux(spec, phis[q], spec.n_levels)))
        g_ge.append(spec.g_ge)
        g_ef.append(spec.g_ef_mhz)
    if fold_dispersive:
        rest = [q for q in range(len(config.qubits)) if q not in qubits]
        if rest:
            f_rest = [qubit_levels_at_flux(config.qubits[q], phis[q], 2)[1] for q in rest]
            drift = dispersive_drift([config.qubits[q].g_ge for q in rest], [f - omega_r for f in f_rest])
            omega_r = omega_r - drift * 1e-3
    h = build_three_level_hamiltonian(ThreeLevelModel(omega_r, tuple(levels), tuple(g_ge), tuple(g_ef),
                                                      config.resonator.n_truncation))
    return LindbladModel(h, tuple(collapse_channels_for(config, bias, qubits, qubit_thermal=qubit_thermal)),
                         config.cavity_n_thermal(), config.resonator.gamma0)


# ---------------------------------------------------------------------------
# solvers


def _channels_internal(model: LindbladModel):
    return [(op, r * PER_S_TO_PER_NS) for op, r in model.collapse_channels]


def _vec_sector(layout: HilbertLayout) -> np.ndarray:
    """``N_left - N_right`` for every row-major vec index."""
    n = excitation_numbers(layout)
    return (n[:, None] - n[None, :]).ravel()


def null_space_dimension(liou, rel_tol: float = 1e-10) -> int:
    """Number of singular values below ``rel_tol * s_max`` (dense SVD)."""
    m = liou.toarray() if sp.issparse(liou) else np.asarray(liou)
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s <= rel_tol * s[0]))


def _unitary_null_dim(h: np.ndarray) -> int:
    vals = np.linalg.eigvalsh(h)
    tol = 1e-9 * max(1.0, np.abs(vals).max())
    _, counts = np.unique(np.round(vals / tol).astype(np.int64), return_counts=True)
    return int(np.sum(counts**2))


def _pinned_solve(liou: sp.spmatrix, pin: int = 0) -> np.ndarray:
    """Kernel vector of ``liou`` with component ``pin`` set to one.

    The pinned row belongs to a population equation, which is redundant
    because populations sum to the conserved trace.
    """
    a = sp.lil_matrix(liou)
    a[pin, :] = 0
    a[pin, pin] = 1.0
    rhs = np.zeros(liou.shape[0], dtype=complex)
    rhs[pin] = 1.0
    try:
        lu = spla.splu(sp.csc_matrix(a))
    except RuntimeError as exc:
        null_dim = None
        if liou.shape[0] <= 2500:
            null_dim = null_space_dimension(liou)
        raise SteadyStateError(f"steady state is not unique (null-space dimension "
                               f"{null_dim if null_dim is not None else '>= 2'})", null_dim) from exc
    return lu.solve(rhs)


def _finish_rho(x: np.ndarray, n: int) -> np.ndarray:
    rho = x.reshape(n, n)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


class _SteadySolver:
    """Full Liouvillian steady state of one model at fixed drive amplitude."""

    def __init__(self, model: LindbladModel, amplitude: float):
        if model.dim > MAX_STEADY_DIM:
            raise ValueError(f"Hilbert dimension {model.dim} exceeds the steady-state limit {MAX_STEADY_DIM}")
        self.model = model
        self.eta = amplitude * PER_S_TO_PER_NS
        chans = _channels_internal(model)
        if not any(r > 0 for _, r in chans):
            h = TWO_PI * model.hamiltonian.dense()
            d = _unitary_null_dim(h)
            raise SteadyStateError(f"no dissipation: steady state is not unique (null-space dimension {d})", d)
        a = model.annihilation()
        h = TWO_PI * model.hamiltonian + self.eta * (a + a.dag())
        self.base = vectorized_liouvillian(OperatorMatrix(model.layout, h.data), chans)
        self.frame = sp.diags(1j * TWO_PI * _vec_sector(model.layout).astype(complex))
        self.a = a.dense()
        self.n_op = (a.dag() @ a).dense()

    def liouvillian(self, probe_freq: float) -> sp.csr_matrix:
        return sp.csr_matrix(self.base + probe_freq * self.frame)

    def solve(self, probe_freq: float) -> SteadyStateResult:
        liou = self.liouvillian(probe_freq)
        n = self.model.dim
        x = _pinned_solve(liou)
        rho = _finish_rho(x, n)
        scale = spla.norm(liou)
        resid = float(np.linalg.norm(liou @ rho.ravel()))
        if resid > RESIDUAL_TOL * scale:
            raise SteadyStateError(f"steady-state residual {resid:.3e} exceeds {RESIDUAL_TOL:g} * |L|")
        return SteadyStateResult(rho, complex(np.trace(self.a @ rho)), float(np.trace(self.n_op @ rho).real),
                                 resid / scale)


def steady_state(model: LindbladModel, drive: DriveSpec) -> SteadyStateResult:
    """Unique steady state of the driven model in the frame of the probe.

    Solves ``L vec(rho) = 0`` by sparse LU with one population equation
    replaced by ``rho_00 = 1``, then normalizes the trace.  Raises
    :class:`SteadyStateError` when the kernel is degenerate.
    """
    return _SteadySolver(model, drive.amplitude).solve(drive.probe_freq)


def liouvillian(model: LindbladModel, drive: DriveSpec) -> sp.csr_matrix:
    """Probe-frame Liouvillian in rad/ns."""
    return _SteadySolver(model, drive.amplitude).liouvillian(drive.probe_freq)


class LinearResponse:
    """Weak-drive cavity response from the excitation-number sectors of ``L``.

    The undriven Liouvillian conserves ``k = N_left - N_right``.  The zeroth
    order state lives in ``k = 0``; the drive couples it to ``k = +1``, where
    the probe frame only shifts the diagonal by ``i w_p``.  One Schur
    decomposition of that sector then gives ``<a>/eta`` at any probe
    frequency from a triangular solve, exact to first order in ``eta``.
    """

    def __init__(self, model: LindbladModel):
        self.model = model
        layout = model.layout
        n = model.dim
        chans = _channels_internal(model)
        liou = vectorized_liouvillian(OperatorMatrix(layout, TWO_PI * model.hamiltonian.data), chans).tocsr()
        k = _vec_sector(layout)
        s0 = np.flatnonzero(k == 0)
        s1 = np.flatnonzero(k == 1)
        l00 = liou[s0][:, s0]
        pin = int(np.flatnonzero(s0 == 0)[0])
        x0 = _pinned_solve(l00, pin)
        full = np.zeros(n * n, dtype=complex)
        full[s0] = x0
        rho0 = _finish_rho(full, n)
        resid = float(np.linalg.norm(liou @ rho0.ravel()))
        scale = spla.norm(liou)
        if resid > RESIDUAL_TOL * scale:
            raise SteadyStateError(f"undriven steady-state residual {resid:.3e} exceeds tolerance")
        self.rho0 = rho0
        self.residual = resid / scale
        a = model.annihilation().dense()
        self.a = a
        source = (a.conj().T @ rho0 - rho0 @ a.conj().T).ravel()[s1]
        readout = a.T.ravel()[s1]
        l11 = liou[s1][:, s1].toarray()
        t, z = scipy.linalg.schur(l11, output="complex")
        self._t = t
        self._u = z.conj().T @ source
        self._v = z.T @ readout
        self.photon_number = float(np.trace(a.conj().T @ a @ rho0).real)

    def field_per_drive(self, probe_freq) -> np.ndarray:
        """``<a>/eta`` in ns (first order in the drive), for each probe frequency in GHz."""
        freqs = np.atleast_1d(np.asarray(probe_freq, dtype=float))
        out = np.empty(freqs.size, dtype=complex)
        work = np.empty_like(self._t)
        diag = np.arange(self._t.shape[0]) * (self._t.shape[0] + 1)
        for i, f in enumerate(freqs):
            np.copyto(work, self._t)
            work.flat[diag] += 1j * TWO_PI * f
            y = scipy.linalg.solve_triangular(work, self._u, check_finite=False)
            out[i] = 1j * (self._v @ y)
        return out

    def transmission(self, probe_freq) -> np.ndarray:
        return 1j * self.model.field_decay_rate() * self.field_per_drive(probe_freq)


def _resolve_amplitude(config: DeviceConfig, drive) -> float:
    if drive is None:
        return drive_for_photons(config.resonator.gamma0, DEFAULT_PHOTONS)
    amp = float(drive.amplitude if isinstance(drive, DriveSpec) else drive)
    if amp < 0:
        raise ValueError("drive amplitude must be >= 0")
    n = bare_cavity_photons(amp, config.resonator.gamma0)
    if n > 0.5:
        raise ValueError(f"drive gives {n:.2f} photons on bare resonance; keep it <= 0.5 (single-photon regime)")
    return amp


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def model_transmission(model: LindbladModel, probe_grid, amplitude: float, method: str = "auto",
                       threads: int = 1) -> np.ndarray:
    """Normalized ``s21 = i gamma0 <a>/eta`` of a model over a probe grid."""
    grid = np.asarray(probe_grid, dtype=float)
    if method == "auto":
        method = "steady" if model.dim <= AUTO_STEADY_DIM else "linear"
    if method not in ("steady", "linear"):
        raise ValueError(f"unknown method {method!r}")
    if amplitude == 0:
        return np.zeros(grid.size, dtype=complex)
    if method == "linear":
        return LinearResponse(model).transmission(grid)
    solver = _SteadySolver(model, amplitude)
    eta = amplitude * PER_S_TO_PER_NS
    results = _map(solver.solve, grid, threads)
    field = np.array([r.a_expectation for r in results])
    return 1j * model.field_decay_rate() * field / eta


def transmission_spectrum(config: DeviceConfig, bias: BiasVector, probe_grid, drive=None, *,
                          qubits: Sequence[int] | None = None, method: str = "auto", fold_dispersive: bool = False,
                          with_background: bool = False, qubit_thermal: bool = False, coil: int | None = None,
                          threads: int = 1) -> TransmissionTrace:
    """Steady-state transmission of the device at one bias point.

    ``drive`` is a :class:`DriveSpec` or an amplitude in rad/s (default: 0.01
    photons in the bare cavity on resonance, well inside the linear regime of
    a three-level cavity truncation).  ``method`` selects the full
    steady state (``"steady"``), first-order response (``"linear"``) or the
    former for small Hilbert spaces (``"auto"``).  The background term of the
    configured epsilon is added when ``with_background`` is set.  ``coil``
    names the coil whose current is recorded as ``bias_current``.
    """
    grid = np.asarray(probe_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("probe grid must be strictly increasing")
    amp = _resolve_amplitude(config, drive)
    model = build_model(config, bias, qubits, fold_dispersive=fold_dispersive, qubit_thermal=qubit_thermal)
    s21 = model_transmission(model, grid, amp, method, threads)
    if with_background:
        s21 = apply_background(s21, 1.0, config.epsilon)
    meta = {"bias_A": [float(x) for x in bias.currents], "drive_rad_s": amp, "method": method,
            "qubits": list(_model_qubits(config, qubits)), "background": bool(with_background)}
    current = float(bias.currents[coil]) if coil is not None else 0.0
    return TransmissionTrace(grid, s21, current, meta)


def transmission_map(config: DeviceConfig, coil: int, currents, probe_grid, base_bias: BiasVector | None = None,
                     drive=None, *, threads: int = 1, **kwargs) -> SpectrumMap:
    """Transmission over a sweep of one coil current, other coils held at ``base_bias``."""
    base = base_bias if base_bias is not None else BiasVector.zeros(config.n_coils)
    currents = np.asarray(currents, dtype=float)

    def one(i_c):
        return transmission_spectrum(config, base.with_current(coil, i_c), probe_grid, drive, coil=coil, **kwargs)

    traces = _map(one, currents, threads)
    return SpectrumMap.from_traces(traces, {"coil": coil, **traces[0].meta})


def thermal_populations(nbar: float, n_levels: int) -> np.ndarray:
    """Truncated geometric distribution with ratio ``nbar/(1+nbar)``."""
    x = nbar / (1 + nbar)
    p = x ** np.arange(n_levels)
    return p / p.sum()


def manifold_flow_imbalance(model: LindbladModel, rho: np.ndarray) -> float:
    """Largest net jump flow across an excitation-number cut, relative to the total flow.

    In an undriven steady state each manifold population is stationary and
    jumps change the excitation number by at most one, so the upward and
    downward flows across every cut balance.  Returns 0 when nothing jumps.
    """
    n_exc = excitation_numbers(model.layout)
    top = int(n_exc.max())
    up = np.zeros(top + 1)
    down = np.zeros(top + 1)
    for op, rate in model.collapse_channels:
        if rate == 0:
            continue
        m = op.dense()
        for src in range(top + 1):
            cols = n_exc == src
            for dst in (src - 1, src + 1):
                if not 0 <= dst <= top:
                    continue
                rows = n_exc == dst
                block = m[np.ix_(rows, cols)]
                if not block.any():
                    continue
                flow = rate * float(np.trace(block @ rho[np.ix_(cols, cols)] @ block.conj().T).real)
                if dst > src:
                    up[src] += flow
                else:
                    down[dst] += flow
    total = up.sum() + down.sum()
    if total == 0:
        return 0.0
    return float(np.max(np.abs(up - down)) / total)


@dataclass(frozen=True)
class StateDiagnostics:
    trace_error: float
    hermiticity: float
    min_eigenvalue: float
    flow_imbalance: float

    @property
    def ok(self) -> bool:
        return (self.trace_error < TRACE_TOL and self.hermiticity < 1e-12
                and self.min_eigenvalue > -POSITIVITY_TOL and self.flow_imbalance < 1e-8)


def state_diagnostics(model: LindbladModel) -> StateDiagnostics:
    """Trace, Hermiticity and positivity of the undriven steady state plus its flow balance."""
    if model.dim <= MAX_STEADY_DIM:
        rho = _SteadySolver(model, 0.0).solve(0.0).rho
    else:
        rho = LinearResponse(model).rho0
    return StateDiagnostics(float(abs(np.trace(rho) - 1)), float(np.linalg.norm(rho - rho.conj().T)),
                            float(np.linalg.eigvalsh(rho).min()), manifold_flow_imbalance(model, rho))
