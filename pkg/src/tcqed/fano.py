"""Input-output relations with a weak direct background channel.

With no input on the far port, the transmitted field is::

    s21 = sqrt(kappa_c) <a> / <a_in> - 2i eps / (1 + 2i eps)

and the fitted signal model (frequencies in GHz, rates in MHz) is::

    s12(w) = 2 eps / (i - 2 eps) + p kappa_c / (kappa_c + gamma_eff + i (w0 - w))

The two background expressions are algebraically identical.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .fitting import FitError, FitResult, least_squares
from .traces import TransmissionTrace

MHZ_PER_GHZ = 1e3


@dataclass(frozen=True)
class BackgroundModel:
    epsilon: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "epsilon", complex(self.epsilon))
        if abs(self.epsilon) >= 0.3:
            raise ValueError(f"|epsilon| = {abs(self.epsilon):.3f} is outside the weak-background regime (< 0.3)")

    def term(self) -> complex:
        return background_term(self.epsilon)


def background_term(eps: complex) -> complex:
    """Flat transmission far from any resonance, ``-2i eps / (1 + 2i eps)``."""
    eps = complex(eps)
    return -2j * eps / (1 + 2j * eps)


def _eps(eps) -> complex:
    return eps.epsilon if isinstance(eps, BackgroundModel) else BackgroundModel(eps).epsilon


def apply_background(cavity_field, input_amplitude: complex = 1.0, eps=0j, kappa_c: float = 1.0) -> np.ndarray:
    """Transmission from the intracavity field: ``sqrt(kappa_c) <a>/<a_in>`` plus the background."""
    field = np.asarray(cavity_field, dtype=complex)
    return np.sqrt(kappa_c) * field / input_amplitude + background_term(_eps(eps))


def subtract_background(trace: TransmissionTrace, eps=0j, kappa_c: float = 1.0,
                        input_amplitude: complex = 1.0) -> TransmissionTrace:
    """Exact inverse of :func:`apply_background`, returning the cavity field trace.

    ``sqrt(kappa_c) <a> = s21 <a_in> + 2i eps/(1 + 2i eps) <a_in>``.
    """
    e = _eps(eps)
    field = (trace.s21 - background_term(e)) * input_amplitude / np.sqrt(kappa_c)
    return trace.replace_s21(field, background_subtracted=True)


@dataclass(frozen=True)
class SignalParams:
    p: float
    gamma_eff: float  # MHz
    kappa_c: float  # MHz
    omega0: float  # GHz

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p = {self.p} is not a probability")
        if self.gamma_eff < 0:
            raise ValueError("gamma_eff must be >= 0")
        if self.kappa_c <= 0:
            raise ValueError("kappa_c must be positive")


PARAM_NAMES = tuple(f.name for f in fields(SignalParams))


def _cavity_term(omega, p, gamma_eff, kappa_c, omega0):
    return p * kappa_c / (kappa_c + gamma_eff + 1j * (omega0 - np.asarray(omega, dtype=float)) * MHZ_PER_GHZ)


def signal_model(omega, params: SignalParams, eps=0j):
    """Complex transmission of one dressed resonance on top of the background."""
    e = _eps(eps)
    bg = 2 * e / (1j - 2 * e)
    return bg + _cavity_term(omega, params.p, params.gamma_eff, params.kappa_c, params.omega0)


def signal_jacobian(omega, params: SignalParams) -> np.ndarray:
    """Complex derivatives w.r.t. ``(p, gamma_eff, kappa_c, omega0)``, shape ``(len(omega), 4)``."""
    return _raw_jacobian(np.asarray(omega, dtype=float), {n: getattr(params, n) for n in PARAM_NAMES})


def signal_strength(params: SignalParams) -> float:
    """On-resonance height of the cavity term, ``p kappa_c / (kappa_c + gamma_eff)``."""
    return params.p * params.kappa_c / (params.kappa_c + params.gamma_eff)


def symmetry_metric(trace: TransmissionTrace, omega0: float | None = None) -> float:
    """Relative asymmetry of ``|s21|`` about ``omega0`` (peak location by default).

    ``max |A(w0 + d) - A(w0 - d)| / max A`` over offsets inside the sampled
    window, with the mirrored side linearly interpolated.
    """
    f = trace.probe_freq
    amp = np.abs(trace.s21)
    if omega0 is None:
        omega0 = float(f[np.argmax(amp)])
    half = min(omega0 - f[0], f[-1] - omega0)
    if half <= 0:
        raise ValueError("omega0 must lie inside the sampled window")
    d = np.linspace(0, half, 201)
    right = np.interp(omega0 + d, f, amp)
    left = np.interp(omega0 - d, f, amp)
    return float(np.max(np.abs(right - left)) / amp.max())


def _initial_signal(trace: TransmissionTrace, eps: complex, kappa_c: float | None):
    cav = trace.s21 - background_term(eps)
    amp = np.abs(cav)
    k = int(np.argmax(amp))
    w0 = trace.probe_freq[k]
    half = amp >= amp[k] / np.sqrt(2)
    # contiguous half-power region around the maximum
    lo = k
    while lo > 0 and half[lo - 1]:
        lo -= 1
    hi = k
    while hi < amp.size - 1 and half[hi + 1]:
        hi += 1
    width = max(0.5 * (trace.probe_freq[hi] - trace.probe_freq[lo]) * MHZ_PER_GHZ,
                np.min(np.diff(trace.probe_freq)) * MHZ_PER_GHZ)
    kap = kappa_c if kappa_c is not None else width
    gam = max(width - kap, 0.0)
    p = float(np.clip(amp[k] * width / kap, 0.0, 1.0))
    return {"p": p, "gamma_eff": gam, "kappa_c": kap, "omega0": float(w0)}


def extract_signal_params(trace: TransmissionTrace, eps=0j, *, kappa_c: float | None = None,
                          fixed: dict | None = None, init: SignalParams | dict | None = None,
                          max_iter: int = 200) -> tuple[SignalParams, dict, FitResult]:
    """Least-squares fit of :func:`signal_model` to both quadratures of a trace.

    Only ``p kappa_c`` and ``kappa_c + gamma_eff`` are identifiable from a
    single resonance, so at least one of ``p``, ``gamma_eff`` and ``kappa_c``
    must be held fixed.  Passing ``kappa_c`` fixes it (the usual case); any
    other parameter can be fixed through ``fixed``.  If nothing is fixed,
    ``kappa_c`` is fixed at its initial estimate.

    Returns the parameters, a dict of standard errors (0 for fixed
    parameters) and the raw :class:`FitResult`.
    """
    e = _eps(eps)
    fixed = dict(fixed or {})
    if kappa_c is not None:
        fixed["kappa_c"] = float(kappa_c)
    unknown = set(fixed) - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown parameters {sorted(unknown)}")
    start = _initial_signal(trace, e, fixed.get("kappa_c"))
    if init is not None:
        start.update(init if isinstance(init, dict) else {n: getattr(init, n) for n in PARAM_NAMES})
    start.update(fixed)
    if not ({"p", "gamma_eff", "kappa_c"} & set(fixed)):
        fixed["kappa_c"] = start["kappa_c"]
    free = [n for n in PARAM_NAMES if n not in fixed]
    cols = [PARAM_NAMES.index(n) for n in free]
    omega = trace.probe_freq
    data = trace.s21

    def unpack(x):
        v = dict(start)
        v.update(zip(free, x))
        return v

    def resid(x):
        v = unpack(x)
        r = 2 * e / (1j - 2 * e) + _cavity_term(omega, v["p"], v["gamma_eff"], v["kappa_c"], v["omega0"]) - data
        return np.concatenate([r.real, r.imag])

    def jac(x):
        j = _raw_jacobian(omega, unpack(x))[:, cols]
        return np.vstack([j.real, j.imag])

    res = least_squares(resid, [start[n] for n in free], jac, max_iter=max_iter, names=tuple(free))
    if not res.converged:
        raise FitError(f"signal fit did not converge after {res.iterations} iterations "
                       f"(rms residual {res.residual_rms:.3e})")
    v = unpack(res.values)
    v["gamma_eff"] = abs(v["gamma_eff"])
    params = SignalParams(**v)
    errs = dict.fromkeys(PARAM_NAMES, 0.0)
    errs.update(zip(free, res.stderr))
    res.params = params
    return params, errs, res


def _raw_jacobian(omega, v: dict) -> np.ndarray:
    p, gam, kap, w0 = v["p"], v["gamma_eff"], v["kappa_c"], v["omega0"]
    den = kap + gam + 1j * (w0 - omega) * MHZ_PER_GHZ
    return np.column_stack([kap / den, -p * kap / den**2, p / den - p * kap / den**2,
                            -1j * MHZ_PER_GHZ * p * kap / den**2])


def synthetic_signal_trace(params: SignalParams, eps=0j, n_points: int = 401, span_linewidths: float = 10.0,
                           noise: float = 0.0, rng=None) -> TransmissionTrace:
    """Trace sampled from :func:`signal_model` over ``+-span_linewidths`` half-widths,
    with optional complex Gaussian noise of standard deviation ``noise`` per quadrature."""
    width = (params.kappa_c + params.gamma_eff) / MHZ_PER_GHZ
    omega = params.omega0 + np.linspace(-span_linewidths, span_linewidths, n_points) * width
    s = signal_model(omega, params, eps)
    if noise:
        rng = rng or np.random.default_rng()
        s = s + rng.normal(0, noise, n_points) + 1j * rng.normal(0, noise, n_points)
    return TransmissionTrace(omega, s, meta={"epsilon": complex(_eps(eps))})
