"""Flux-crosstalk calibration from two-coil transmission scans.

A qubit's transmission at a fixed probe frequency only depends on its own
flux ``phi_j = sum_k M_jk I_k``, so in a scan over coils ``x`` and ``y`` the
high-transmission ridge of qubit ``j`` follows ``M_jx dI_x + M_jy dI_y = 0``.
For ``j = y`` the ridge slope ``dI_y/dI_x`` is ``-M_yx/M_yy``; for ``j = x``
the ridge is nearly vertical and is fitted transposed, ``dI_x/dI_y =
-M_xy/M_xx``.  Either way the normalized matrix entry is minus the slope.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.interpolate import CubicSpline

from .device import BiasVector, DeviceConfig, MutualMatrix, flux_for_frequency, qubit_freq_at_flux
from .dynamics import _map, transmission_spectrum
from .hamiltonian import jc_eigenvalues

COIL_LABELS = string.ascii_lowercase[:8]
PROBE_OFFSET_GHZ = 0.020
MAX_CONDITION = 1e8


def coil_label(k: int) -> str:
    return COIL_LABELS[k]


@dataclass(frozen=True, eq=False)
class TwoCoilScan:
    """``response[i, j]``: |s21| at ``currents_y[i]``, ``currents_x[j]``.

    The x axis sweeps the current vector ``x_vector`` (the unit vector on
    ``coil_x`` unless a compensated direction is used); the y axis sweeps
    ``coil_y`` directly.  Both axes are currents in A added to the base bias
    recorded in ``meta``.
    """

    coil_x: int
    coil_y: int
    target_qubit: int
    currents_x: np.ndarray
    currents_y: np.ndarray
    response: np.ndarray
    probe_freq: float
    x_vector: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.response, dtype=float)
        cx = np.asarray(self.currents_x, dtype=float)
        cy = np.asarray(self.currents_y, dtype=float)
        if r.shape != (cy.size, cx.size):
            raise ValueError(f"response shape {r.shape} is not (len(y), len(x)) = ({cy.size}, {cx.size})")
        if cx.size < 2 or cy.size < 2 or np.any(np.diff(cx) <= 0) or np.any(np.diff(cy) <= 0):
            raise ValueError("scan axes need at least two strictly increasing currents")
        if not np.isfinite(self.probe_freq):
            raise ValueError("probe frequency must be recorded")
        object.__setattr__(self, "response", r)
        object.__setattr__(self, "currents_x", cx)
        object.__setattr__(self, "currents_y", cy)


@dataclass(frozen=True)
class RidgeFit:
    """Straight-line fit of a ridge.

    ``slope`` is ``dI_y/dI_x`` or, when ``transposed``, ``dI_x/dI_y``; the
    intercept (A) and rms residual (A) refer to the same orientation.
    """

    slope: float
    intercept: float
    residual: float
    coil_x: int = 0
    coil_y: int = 1
    target_qubit: int = 1
    transposed: bool = False

    def __post_init__(self):
        if not np.isfinite(self.slope):
            raise ValueError("ridge slope must be finite")

    @property
    def other_coil(self) -> int:
        return self.coil_y if self.target_qubit == self.coil_x else self.coil_x

    @property
    def ratio(self) -> float:
        """Normalized mutual ``M[target, other] / M[target, target]`` implied by the ridge."""
        return -self.slope


@dataclass(frozen=True, eq=False)
class CompensationPlan:
    target_qubit: int
    delta_i: np.ndarray  # A per A of target-coil current
    condition: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.delta_i, dtype=float)
        if d[self.target_qubit] != 1.0:
            raise ValueError("plan must have unit target component")
        object.__setattr__(self, "delta_i", d)


# ---------------------------------------------------------------------------
# synthesis


class _FluxResponse:
    """Fast ridge model: JC doublet of the target qubit seen at a fixed probe.

    Each branch contributes a Lorentzian weighted by its photon content,
    with half-width mixing the cavity field decay and the qubit coherence
    decay ``1/(2 pi T2)``.  The qubit frequency versus flux is a cubic
    spline of the exact charge-basis model over the needed flux range.
    """

    def __init__(self, config: DeviceConfig, qubit: int, phi_lo: float, phi_hi: float, n_knots: int = 401):
        spec = config.qubits[qubit]
        pad = 0.05 * (phi_hi - phi_lo) + 1e-6
        knots = np.linspace(phi_lo - pad, phi_hi + pad, n_knots)
        self.spline = CubicSpline(knots, [qubit_freq_at_flux(spec, p) for p in knots])
        self.omega_r = config.resonator.omega_r
        self.g = spec.g_ge
        self.gamma0 = config.resonator.gamma0
        self.gamma_q = 1e-6 / (2 * np.pi * spec.t2)  # MHz

    def __call__(self, phi, probe: float) -> np.ndarray:
        wq = self.spline(phi)
        lo, up = jc_eigenvalues(self.omega_r, wq, self.g)
        out = np.zeros(np.shape(phi), dtype=complex)
        for e, sign in ((lo, -1), (up, 1)):
            # photon weight of each dressed state
            d = wq - self.omega_r
            s = np.sqrt(d**2 + 4 * (self.g * 1e-3) ** 2)
            w_ph = 0.5 * (1 - sign * d / s)
            hw = w_ph * self.gamma0 + (1 - w_ph) * self.gamma_q
            out += w_ph * self.gamma0 / (hw + 1j * (e - probe) * 1e3)
        return np.abs(out)


def probe_for_target(config: DeviceConfig, qubit: int) -> float:
    """Probe 20 MHz below the lower branch with ``qubit`` tuned onto the resonator."""
    lo, _ = jc_eigenvalues(config.resonator.omega_r, config.resonator.omega_r, config.qubits[qubit].g_ge)
    return lo - PROBE_OFFSET_GHZ


def _ridge_flux(config: DeviceConfig, qubit: int, probe: float) -> tuple[float, float]:
    """Flux at which the lower branch meets ``probe``, and the ridge half-width in flux."""
    wr = config.resonator.omega_r
    spec = config.qubits[qubit]
    g = spec.g_ge * 1e-3
    # (E - w_r)(E - w_q) = g^2 at E = probe
    x = wr - probe
    if x <= 0:
        raise ValueError("probe must lie below the resonator for a lower-branch ridge")
    wq = probe + g**2 / x
    phi = flux_for_frequency(spec, wq)
    dphi = 1e-6
    dw = (qubit_freq_at_flux(spec, phi + dphi) - qubit_freq_at_flux(spec, phi - dphi)) / (2 * dphi)
    d = wq - wr
    s = np.sqrt(d**2 + 4 * g**2)
    de_dw = 0.5 * (1 - d / s)
    w_ph = 0.5 * (1 + d / s)
    hw = (w_ph * config.resonator.gamma0 + (1 - w_ph) * 1e-6 / (2 * np.pi * spec.t2)) * 1e-3
    return phi, abs(hw / (de_dw * dw))


def default_grid(config: DeviceConfig, coil_x: int, coil_y: int, target: int, probe: float,
                 n_x: int = 401, n_y: int = 401, x_span: float = 300e-6) -> tuple[np.ndarray, np.ndarray]:
    """Grid centred on the predicted ridge.

    ``x`` covers ``+-x_span`` around zero; ``y`` is wide enough for a 10%
    crosstalk tilt plus six ridge half-widths.
    """
    m = config.mutuals.full()
    phi, hw_phi = _ridge_flux(config, target, probe)
    xs = np.linspace(-x_span, x_span, n_x)
    if target == coil_y:
        centre = phi / m[target, coil_y]
        half = 0.1 * x_span + 6 * hw_phi / m[target, coil_y]
    else:
        centre = 0.0
        half = 0.1 * x_span + 6 * hw_phi / m[target, target]
        xs = phi / m[target, target] + np.linspace(-half, half, n_x)
        half = x_span
    ys = centre + np.linspace(-half, half, n_y)
    return xs, ys


def synthesize_two_coil_scan(config: DeviceConfig, coil_x: int, coil_y: int, probe_freq: float | None = None,
                             grid=None, *, target: int | None = None, mode: str = "fast",
                             base_bias: BiasVector | None = None, x_vector=None, noise: float = 0.0,
                             rng=None, threads: int = 1) -> TwoCoilScan:
    """Transmission of one target qubit over a two-coil current grid.

    The target defaults to qubit ``coil_y``.  ``grid`` is ``(currents_x,
    currents_y)``; by default it is centred on the expected ridge.  ``mode``
    is ``"fast"`` (ridge model) or ``"full"`` (steady-state simulation of the
    cavity plus target qubit).  ``noise`` adds Gaussian noise with standard
    deviation ``noise`` times the noiseless ridge contrast.
    """
    if coil_x == coil_y:
        raise ValueError("coil_x and coil_y must differ")
    target = coil_y if target is None else target
    if target not in (coil_x, coil_y):
        raise ValueError("target qubit must be one of the scanned coils")
    n = config.n_coils
    probe = probe_for_target(config, target) if probe_freq is None else float(probe_freq)
    if grid is None:
        xs, ys = default_grid(config, coil_x, coil_y, target, probe)
    else:
        xs, ys = (np.asarray(g, dtype=float) for g in grid)
    vx = np.zeros(n)
    vx[coil_x] = 1.0
    if x_vector is not None:
        vx = np.asarray(x_vector, dtype=float)
    base = np.zeros(n) if base_bias is None else base_bias.currents.copy()
    m = config.mutuals.full()
    phi0 = m[target] @ base
    phi = phi0 + (m[target] @ vx) * xs[None, :] + m[target, coil_y] * ys[:, None]
    wq = _qubit_freq_range(config, target, phi)
    wr = config.resonator.omega_r
    g = config.qubits[target].g_ge * 1e-3
    lower = (wq + wr) / 2 - np.sqrt(4 * g**2 + (wq - wr) ** 2) / 2
    if not (lower.min() < probe < lower.max()):
        raise ValueError(f"no qubit branch crosses the probe frequency {probe:.4f} GHz inside the scan grid")
    if mode == "fast":
        resp = _FluxResponse(config, target, phi.min(), phi.max())(phi, probe)
    elif mode == "full":
        def column(j):
            out = np.empty(ys.size)
            for i, y in enumerate(ys):
                cur = base + vx * xs[j]
                cur[coil_y] += y
                tr = transmission_spectrum(config, BiasVector(cur), [probe], qubits=[target], method="steady")
                out[i] = abs(tr.s21[0])
            return out

        resp = np.column_stack(_map(column, range(xs.size), threads))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if noise:
        rng = rng or np.random.default_rng()
        contrast = resp.max() - resp.min()
        resp = resp + rng.normal(0, noise * contrast, resp.shape)
    return TwoCoilScan(coil_x, coil_y, target, xs, ys, resp, probe, vx,
                       {"mode": mode, "noise": noise, "base_bias_A": base.tolist()})


def _qubit_freq_range(config: DeviceConfig, qubit: int, phi: np.ndarray) -> np.ndarray:
    spec = config.qubits[qubit]
    lo, hi = float(phi.min()), float(phi.max())
    if hi - lo < 1e-12:
        return np.full(phi.shape, qubit_freq_at_flux(spec, lo))
    knots = np.linspace(lo, hi, 65)
    return CubicSpline(knots, [qubit_freq_at_flux(spec, p) for p in knots])(phi)


# ---------------------------------------------------------------------------
# analysis


def _peak_position(profile: np.ndarray, axis: np.ndarray) -> float:
    """Argmax refined by a least-squares parabola through the samples above half maximum."""
    k = int(np.argmax(profile))
    floor = np.median(profile)
    half = floor + 0.5 * (profile[k] - floor)
    lo = k
    while lo > 0 and profile[lo - 1] >= half:
        lo -= 1
    hi = k
    while hi < profile.size - 1 and profile[hi + 1] >= half:
        hi += 1
    lo, hi = min(lo, max(k - 1, 0)), max(hi, min(k + 1, profile.size - 1))
    if hi - lo < 2:
        return float(axis[k])
    x = axis[lo:hi + 1]
    c = np.polyfit(x - axis[k], profile[lo:hi + 1], 2)
    if c[0] >= 0:
        return float(axis[k])
    pos = axis[k] - c[1] / (2 * c[0])
    return float(np.clip(pos, x[0], x[-1]))


def ridge_contrast(scan: TwoCoilScan) -> tuple[float, float]:
    """(median per-line peak contrast, noise floor) along the ridge search direction."""
    r = scan.response if scan.target_qubit == scan.coil_y else scan.response.T
    contrast = float(np.median(r.max(axis=0) - np.median(r, axis=0)))
    noise = float(1.4826 * np.median(np.abs(np.diff(r, axis=0))) / np.sqrt(2))
    return contrast, noise


def extract_slope(scan: TwoCoilScan) -> RidgeFit:
    """Locate the ridge line by line and fit a straight line through the maxima.

    For a ridge of qubit ``coil_y`` each fixed-x column is searched along y;
    for qubit ``coil_x`` each fixed-y row is searched along x and the fit is
    returned transposed.
    """
    contrast, noise = ridge_contrast(scan)
    if contrast < 3 * noise or contrast <= 0:
        raise ValueError(f"ridge contrast {contrast:.3g} is below three times the noise floor {noise:.3g}")
    transposed = scan.target_qubit == scan.coil_x
    if transposed:
        indep, dep, lines = scan.currents_y, scan.currents_x, scan.response
    else:
        indep, dep, lines = scan.currents_x, scan.currents_y, scan.response.T
    pos = np.array([_peak_position(line, dep) for line in lines])
    slope, intercept = np.polyfit(indep, pos, 1)
    resid = float(np.sqrt(np.mean((pos - (slope * indep + intercept)) ** 2)))
    return RidgeFit(float(slope), float(intercept), resid, scan.coil_x, scan.coil_y, scan.target_qubit, transposed)


def build_mutual_matrix(fits, diagonal_mutuals, size: int = 8) -> MutualMatrix:
    """Assemble the normalized matrix from ridge fits.

    Every ordered entry ``(target, other)`` must be covered, i.e. both ridges
    of all ``size * (size - 1) / 2`` coil pairs.
    """
    r = np.eye(size)
    seen = set()
    for fit in fits:
        j, o = fit.target_qubit, fit.other_coil
        r[j, o] = fit.ratio
        seen.add((j, o))
    missing = [(a, b) for a, b in combinations(range(size), 2) if (a, b) not in seen or (b, a) not in seen]
    if missing:
        names = ", ".join(f"{coil_label(a)}{coil_label(b)}" for a, b in missing)
        raise ValueError(f"missing ridge fits for coil pairs: {names}")
    return MutualMatrix(r, diagonal_mutuals)


def solve_compensation(matrix: MutualMatrix, target: int) -> CompensationPlan:
    """Counter-currents that keep every other qubit's flux fixed per unit target current.

    Solves ``sum_{k != t} R_jk dI_k = -R_jt`` for all ``j != t``.
    """
    r = matrix.ratios
    n = matrix.size
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range")
    rest = [k for k in range(n) if k != target]
    a = r[np.ix_(rest, rest)]
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ValueError(f"compensation system is ill-conditioned (condition number {cond:.3g})")
    sol = np.linalg.solve(a, -r[rest, target])
    plan = np.zeros(n)
    plan[target] = 1.0
    plan[rest] = sol
    resid = r[rest] @ plan
    scale = np.abs(r[rest]) @ np.abs(plan)
    if np.any(np.abs(resid) > 1e-10 * np.maximum(scale, 1.0)):
        raise RuntimeError("compensation solve did not satisfy the linear system")
    return CompensationPlan(target, plan, cond)


def plan_residual_flux(mutuals: MutualMatrix, plan: CompensationPlan) -> float:
    """Largest off-target flux per unit target flux produced by a plan."""
    phi = mutuals.full() @ plan.delta_i
    t = plan.target_qubit
    off = np.delete(phi, t)
    return float(np.max(np.abs(off)) / abs(phi[t]))


def verify_isolation(config: DeviceConfig, plan: CompensationPlan, coil_pair, **scan_kwargs) -> RidgeFit:
    """Ridge of the partner qubit while sweeping along the compensated direction.

    ``coil_pair`` holds the plan's target coil and a partner coil.  The x
    axis drives the full plan vector, the y axis the partner coil, and the
    partner qubit's ridge is fitted.  A calibrated plan gives zero slope; an
    uncompensated one returns the raw crosstalk slope.
    """
    t = plan.target_qubit
    pair = tuple(coil_pair)
    if t not in pair or len(pair) != 2:
        raise ValueError("coil pair must contain the plan's target coil")
    partner = pair[0] if pair[1] == t else pair[1]
    scan = synthesize_two_coil_scan(config, t, partner, target=partner, x_vector=plan.delta_i, **scan_kwargs)
    return extract_slope(scan)


@dataclass
class CalibrationResult:
    matrix: MutualMatrix
    fits: list[RidgeFit]
    plans: list[CompensationPlan]

    def report(self) -> str:
        lines = ["normalized mutual-inductance matrix (rows: qubits 1-8, columns: coils a-h)"]
        lines += ["  " + " ".join(f"{v:+.5f}" for v in row) for row in self.matrix.ratios]
        lines.append(f"pair fits: {len(self.fits)} ridges from {len(self.fits) // 2} coil pairs")
        for f in self.fits:
            kind = "dI_x/dI_y" if f.transposed else "dI_y/dI_x"
            lines.append(f"  pair {coil_label(f.coil_x)}{coil_label(f.coil_y)} qubit {f.target_qubit + 1}: "
                         f"{kind} = {f.slope:+.6f} (rms {f.residual:.3e} A)")
        lines.append("compensation plans (A per A of target current)")
        for p in self.plans:
            lines.append(f"  qubit {p.target_qubit + 1} (cond {p.condition:.3f}): "
                         + " ".join(f"{v:+.5f}" for v in p.delta_i))
        return "\n".join(lines) + "\n"


def calibrate(config: DeviceConfig, *, noise: float = 0.0, seed: int | None = None, mode: str = "fast",
              threads: int = 1, diagonal_mutuals=None, **scan_kwargs) -> CalibrationResult:
    """Full campaign: two ridges for each of the coil pairs, matrix assembly and plans.

    Noise for each scan comes from its own child of ``seed`` in a fixed
    order, so results do not depend on ``threads``.
    """
    n = config.n_coils
    jobs = [(x, y, tgt) for x, y in combinations(range(n), 2) for tgt in (y, x)]
    seeds = np.random.SeedSequence(seed).spawn(len(jobs))

    def run(k):
        x, y, tgt = jobs[k]
        scan = synthesize_two_coil_scan(config, x, y, target=tgt, mode=mode, noise=noise,
                                        rng=np.random.default_rng(seeds[k]), **scan_kwargs)
        return extract_slope(scan)

    fits = _map(run, range(len(jobs)), threads)
    diag = config.mutuals.diagonal_mutuals if diagonal_mutuals is None else diagonal_mutuals
    matrix = build_mutual_matrix(fits, diag, n)
    plans = [solve_compensation(matrix, t) for t in range(n)]
    return CalibrationResult(matrix, fits, plans)
