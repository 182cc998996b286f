"""Chip description: transmons, resonator, flux lines and mutual inductances.

Frequencies are cyclic (GHz unless a name says otherwise), couplings are
g/2pi in MHz, fluxes are in units of the flux quantum and currents in amperes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

DEFAULT_N_CHARGE = 30
CONVERGENCE_TOL_GHZ = 1e-6


@dataclass(frozen=True)
class TransmonSpec:
    ej_max: float  # GHz
    ec: float  # GHz
    g_ge: float  # MHz
    n_levels: int = 2
    t1: float = 65e-9  # s
    t2: float = 32.5e-9  # s
    g_ef: float | None = None  # MHz, defaults to sqrt(2) * g_ge

    def __post_init__(self):
        if self.ej_max / self.ec <= 20:
            raise ValueError(f"E_J/E_C = {self.ej_max / self.ec:.1f} is outside the transmon regime (> 20)")
        if self.g_ge <= 0:
            raise ValueError("g_ge must be positive")
        if self.n_levels not in (2, 3):
            raise ValueError("n_levels must be 2 or 3")
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError("T1 and T2 must be positive")
        if self.t2 > 2 * self.t1 * (1 + 1e-12):
            raise ValueError(f"T2 = {self.t2:.3g} s exceeds 2*T1 = {2 * self.t1:.3g} s")

    @property
    def g_ef_mhz(self) -> float:
        return np.sqrt(2.0) * self.g_ge if self.g_ef is None else self.g_ef


@dataclass(frozen=True)
class ResonatorSpec:
    omega_r: float  # GHz
    gamma0: float  # MHz, field decay rate into the line
    n_truncation: int = 3

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")
        if self.n_truncation < 2:
            raise ValueError("n_truncation must be >= 2")


@dataclass(frozen=True, eq=False)
class MutualMatrix:
    """Normalized mutual-inductance matrix.

    ``ratios[i, k] = M_ik / M_ii``: row ``i`` is a qubit, column ``k`` a flux
    line, and every row is divided by the qubit's own-line mutual inductance.
    ``diagonal_mutuals[i] = M_ii`` in flux quanta per ampere.
    """

    ratios: np.ndarray
    diagonal_mutuals: np.ndarray

    def __post_init__(self):
        r = np.array(self.ratios, dtype=float)
        d = np.array(self.diagonal_mutuals, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError(f"ratio matrix must be square, got {r.shape}")
        if d.shape != (r.shape[0],):
            raise ValueError("need one diagonal mutual per row")
        if not np.array_equal(np.diag(r), np.ones(len(d))):
            raise ValueError("ratio matrix must have an exact unit diagonal")
        off = r[~np.eye(len(d), dtype=bool)]
        if np.any(np.abs(off) >= 1):
            raise ValueError("off-diagonal ratios must satisfy |M_ik/M_ii| < 1")
        r.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "ratios", r)
        object.__setattr__(self, "diagonal_mutuals", d)

    @property
    def size(self) -> int:
        return len(self.diagonal_mutuals)

    def full(self) -> np.ndarray:
        """Un-normalized matrix ``M`` in flux quanta per ampere."""
        return self.diagonal_mutuals[:, None] * self.ratios

    @classmethod
    def identity(cls, size: int = 8, diagonal: float = 1.0) -> MutualMatrix:
        return cls(np.eye(size), np.full(size, diagonal))

    @classmethod
    def from_full(cls, m) -> MutualMatrix:
        m = np.asarray(m, dtype=float)
        d = np.diag(m).copy()
        r = m / d[:, None]
        np.fill_diagonal(r, 1.0)
        return cls(r, d)


@dataclass(frozen=True, eq=False)
class DeviceConfig:
    resonator: ResonatorSpec
    qubits: tuple[TransmonSpec, ...]
    mutuals: MutualMatrix
    epsilon: complex = 0j
    temperature_mk: float = 0.0
    n_thermal: float | None = None
    synthetic: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        if len(self.qubits) > 8:
            raise ValueError("at most 8 qubits are supported")
        if self.mutuals.size < len(self.qubits):
            raise ValueError("mutual matrix smaller than the number of qubits")
        if abs(self.epsilon) >= 0.3:
            raise ValueError(f"|epsilon| = {abs(self.epsilon):.3f} is not a weak background coupling")
        if self.n_thermal is not None and self.n_thermal < 0:
            raise ValueError("n_thermal must be >= 0")

    @property
    def n_coils(self) -> int:
        return self.mutuals.size

    def cavity_n_thermal(self) -> float:
        """Mean thermal photon number: explicit override, else Bose factor at ``temperature_mk``."""
        if self.n_thermal is not None:
            return float(self.n_thermal)
        return bose_occupation(self.resonator.omega_r, self.temperature_mk)

    def with_qubits(self, qubits) -> DeviceConfig:
        return DeviceConfig(self.resonator, tuple(qubits), self.mutuals, self.epsilon,
                            self.temperature_mk, self.n_thermal, self.synthetic)

    def with_mutuals(self, mutuals: MutualMatrix) -> DeviceConfig:
        return DeviceConfig(self.resonator, self.qubits, mutuals, self.epsilon,
                            self.temperature_mk, self.n_thermal, self.synthetic)


@dataclass(frozen=True, eq=False)
class BiasVector:
    currents: np.ndarray

    def __post_init__(self):
        c = np.array(self.currents, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise ValueError("bias currents must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "currents", c)

    @classmethod
    def zeros(cls, n: int = 8) -> BiasVector:
        return cls(np.zeros(n))

    def with_current(self, coil: int, value: float) -> BiasVector:
        c = self.currents.copy()
        c[coil] = value
        return BiasVector(c)


H_OVER_KB_GHZ_MK = 47.99243073  # h * 1 GHz / k_B in mK


def bose_occupation(freq_ghz: float, temperature_mk: float) -> float:
    if temperature_mk <= 0:
        return 0.0
    return float(1.0 / np.expm1(H_OVER_KB_GHZ_MK * freq_ghz / temperature_mk))


def flux_from_currents(mutuals: MutualMatrix, delta_i) -> np.ndarray:
    """Flux change through every qubit, ``M @ delta_I``, in flux quanta."""
    currents = delta_i.currents if isinstance(delta_i, BiasVector) else np.asarray(delta_i, dtype=float)
    if currents.shape[-1] != mutuals.size:
        raise ValueError(f"expected {mutuals.size} currents, got {currents.shape[-1]}")
    return currents @ mutuals.full().T


def ej_of_flux(ej_max, phi):
    """Symmetric-SQUID Josephson energy ``E_Jmax |cos(pi phi)|``."""
    return ej_max * np.abs(np.cos(np.pi * np.asarray(phi, dtype=float)))


def _charge_levels(ej: float, ec: float, n_charge: int, n_levels: int, ng: float) -> np.ndarray:
    n = np.arange(-n_charge, n_charge + 1, dtype=float)
    diag = 4.0 * ec * (n - ng) ** 2
    off = np.full(len(n) - 1, -ej / 2.0)
    vals = scipy.linalg.eigvalsh_tridiagonal(diag, off, select="i", select_range=(0, n_levels - 1))
    return vals - vals[0]


def transmon_levels(ej: float, ec: float, n_charge: int = DEFAULT_N_CHARGE, n_levels: int = 3,
                    ng: float = 0.5, check: bool = True) -> np.ndarray:
    """Ground-referenced level frequencies of ``4E_C(n - n_g)^2 - E_J cos(phi)``.

    Parameters
    ----------
    ej, ec
        Josephson and charging energies over h, in GHz.
    n_charge
        Charge-basis cutoff; states ``-n_charge..n_charge`` are kept.
    n_levels
        Number of levels returned (ground level included, always 0).
    check
        Re-diagonalize with a doubled cutoff and raise if any level moves by
        more than 1e-6 GHz.
    """
    if n_charge < 15:
        raise ValueError("n_charge must be >= 15")
    if not 1 <= n_levels <= 5:
        raise ValueError("n_levels must be between 1 and 5")
    if ej / ec <= 5:
        raise ValueError(f"E_J/E_C = {ej / ec:.2f} too small for the charge-basis transmon model")
    levels = _charge_levels(ej, ec, n_charge, n_levels, ng)
    if check:
        ref = _charge_levels(ej, ec, 2 * n_charge, n_levels, ng)
        shift = np.max(np.abs(ref - levels))
        if shift > CONVERGENCE_TOL_GHZ:
            raise ValueError(f"charge basis not converged: levels shift {shift:.2e} GHz when n_charge doubles")
    return levels


@lru_cache(maxsize=4096)
def _levels_cached(ej: float, ec: float, n_levels: int) -> tuple[float, ...]:
    return tuple(transmon_levels(ej, ec, n_levels=n_levels))


def qubit_levels_at_flux(spec: TransmonSpec, phi: float, n_levels: int | None = None) -> np.ndarray:
    n = spec.n_levels if n_levels is None else n_levels
    ej = float(ej_of_flux(spec.ej_max, phi))
    return np.array(_levels_cached(ej, spec.ec, n))


def qubit_freq_at_flux(spec: TransmonSpec, phi: float) -> float:
    return float(qubit_levels_at_flux(spec, phi, 2)[1])


def multiphoton_lines(spec: TransmonSpec, phi: float, k_max: int) -> np.ndarray:
    """Drive frequencies ``(E_k - E_0)/k`` of the k-photon transitions, k = 1..k_max."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    levels = qubit_levels_at_flux(spec, phi, k_max + 1)
    k = np.arange(1, k_max + 1)
    return levels[1:] / k


def qubit_flux(config: DeviceConfig, qubit: int, bias: BiasVector) -> float:
    if not 0 <= qubit < len(config.qubits):
        raise IndexError(f"qubit index {qubit} out of range for {len(config.qubits)} qubits")
    return float(flux_from_currents(config.mutuals, bias)[qubit])


def qubit_freq_of_current(config: DeviceConfig, qubit: int, bias: BiasVector) -> float:
    """g-e transition frequency (GHz) of ``qubit`` at the given bias currents."""
    return qubit_freq_at_flux(config.qubits[qubit], qubit_flux(config, qubit, bias))


def flux_for_frequency(spec: TransmonSpec, freq_ghz: float) -> float:
    """Smallest non-negative flux at which the qubit's g-e frequency equals ``freq_ghz``."""
    f_max = qubit_freq_at_flux(spec, 0.0)
    if freq_ghz > f_max:
        raise ValueError(f"{freq_ghz} GHz is above the qubit's maximum {f_max:.4f} GHz")
    if freq_ghz == f_max:
        return 0.0
    # stay inside the range where E_J/E_C > 5
    phi_hi = np.arccos(5.0 * spec.ec / spec.ej_max * (1 + 1e-9)) / np.pi
    if qubit_freq_at_flux(spec, phi_hi) > freq_ghz:
        raise ValueError(f"{freq_ghz} GHz is below the tunable range of the model")
    return float(brentq(lambda p: qubit_freq_at_flux(spec, p) - freq_ghz, 0.0, phi_hi, xtol=1e-15, rtol=1e-15))


def bias_for_frequencies(config: DeviceConfig, targets: dict[int, float]) -> BiasVector:
    """Currents that put each listed qubit at its target frequency.

    Qubits not listed keep zero flux.  Crosstalk is compensated exactly by
    solving ``M @ I = phi`` with the full mutual matrix.
    """
    phi = np.zeros(config.n_coils)
    for q, f in targets.items():
        phi[q] = flux_for_frequency(config.qubits[q], f)
    return BiasVector(np.linalg.solve(config.mutuals.full(), phi))


def frequency_sensitivity(spec: TransmonSpec, freq_ghz: float, dphi: float) -> float:
    """Frequency change (GHz) when the flux moves by ``dphi`` away from the sweet spot,
    starting at the operating point where the qubit sits at ``freq_ghz``."""
    phi0 = flux_for_frequency(spec, freq_ghz)
    return qubit_freq_at_flux(spec, phi0) - qubit_freq_at_flux(spec, phi0 + dphi)


def ej_max_for_frequency(ec: float, f_max: float) -> float:
    """Invert the charge-basis model: the E_Jmax that puts the sweet spot at ``f_max``."""
    lo = (f_max + ec) ** 2 / (8 * ec) * 0.8
    hi = lo * 2
    return float(brentq(lambda ej: transmon_levels(ej, ec, n_levels=2)[1] - f_max, lo, hi, xtol=1e-13))


def device_qubit_freqs(config: DeviceConfig, bias: BiasVector) -> np.ndarray:
    return np.array([qubit_freq_of_current(config, q, bias) for q in range(len(config.qubits))])

