"""Anticrossing peak tracking and coupling extraction.

Branch models (frequencies in GHz, currents in A, g/2pi in MHz)::

    f_pm(I) = (f_r + aI + b)/2 +- sqrt(4 G^2 + (f_r - aI - b)^2)/2,   G = g/1000

The ensemble model keeps ``f_+`` and shifts the lower branch by
``I -> I + i_shift`` and ``f -> f - f_shift``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np
from scipy.signal import find_peaks

from .traces import SpectrumMap


class FitError(RuntimeError):
    """Raised when a fit does not converge."""


@dataclass
class FitResult:
    params: object
    values: np.ndarray
    covariance: np.ndarray
    residual_rms: float
    iterations: int
    converged: bool
    names: tuple[str, ...] = ()
    condition: float = np.nan
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def stderr_of(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])


# ---------------------------------------------------------------------------
# damped Gauss-Newton core


def numeric_jacobian(fun: Callable, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a real vector function."""
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        h = rel_step * max(abs(x[k]), 1e-8)
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2 * h))
    return np.column_stack(cols)


def least_squares(residual: Callable, x0, jac: Callable | None = None, *, xtol: float = 1e-10,
                  ftol: float = 1e-12, max_iter: int = 200, names=()) -> FitResult:
    """Minimize ``sum(residual(x)**2)`` by Levenberg-Marquardt damped Gauss-Newton.

    The first trial step of every iteration is undamped; damping is raised
    only when a step fails to lower the cost.  Convergence is declared when
    the scaled step ``|D dx| < xtol |D x|`` or when an accepted step lowers the
    cost by less than ``ftol`` relative.  Hitting ``max_iter`` returns a result
    with ``converged=False`` rather than raising.

    The covariance is ``s^2 (J^T J)^-1`` with ``s^2 = SSR / (m - n)``.
    """
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial parameters must be finite")
    jac = jac or (lambda p: numeric_jacobian(residual, p))
    r = np.asarray(residual(x), dtype=float)
    cost = float(r @ r)
    n = x.size
    diag = np.zeros(n)
    converged = False
    message = "iteration cap reached"
    it = 0
    for it in range(1, max_iter + 1):
        jm = np.asarray(jac(x), dtype=float)
        diag = np.maximum(diag, np.sum(jm**2, axis=0))
        scale = np.sqrt(np.where(diag > 0, diag, 1.0))
        lam = 0.0
        accepted = False
        for _ in range(40):
            if lam == 0.0:
                a_mat, rhs = jm, -r
            else:
                a_mat = np.vstack([jm, np.diag(np.sqrt(lam) * scale)])
                rhs = np.concatenate([-r, np.zeros(n)])
            step = np.linalg.lstsq(a_mat, rhs, rcond=None)[0]
            x_new = x + step
            r_new = np.asarray(residual(x_new), dtype=float)
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new <= cost:
                accepted = True
                break
            lam = 1e-3 if lam == 0.0 else lam * 10.0
        if not accepted:
            converged = True
            message = "no downhill step: at a minimum to machine precision"
            break
        small_step = np.linalg.norm(scale * step) <= xtol * (np.linalg.norm(scale * x) + xtol)
        small_gain = (cost - cost_new) <= ftol * cost
        x, r, cost = x_new, r_new, cost_new
        if small_step or small_gain or cost == 0.0:
            converged = True
            message = "step tolerance" if small_step else "cost tolerance"
            break
    jm = np.asarray(jac(x), dtype=float)
    m = r.size
    jtj = jm.T @ jm
    sigma2 = cost / max(m - n, 1)
    cov = np.linalg.pinv(jtj) * sigma2
    d = np.sqrt(np.diag(jtj))
    d[d == 0] = 1.0
    cond = float(np.linalg.cond(jtj / np.outer(d, d)))
    return FitResult(params=x.copy(), values=x.copy(), covariance=cov, residual_rms=float(np.sqrt(cost / m)),
                     iterations=it, converged=converged, names=tuple(names), condition=cond, message=message)


# ---------------------------------------------------------------------------
# anticrossing models


@dataclass(frozen=True)
class SingleFitParams:
    a: float  # GHz/A
    b: float  # GHz
    f_r: float  # GHz
    g: float  # MHz

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)


@dataclass(frozen=True)
class EnsembleFitParams:
    a: float
    b: float
    f_r: float
    g: float
    i_shift: float = 0.0  # A
    f_shift: float = 0.0  # GHz

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)


SINGLE_NAMES = tuple(f.name for f in fields(SingleFitParams))
ENSEMBLE_NAMES = tuple(f.name for f in fields(EnsembleFitParams))


def branch_frequencies(current, a, b, f_r, g):
    """``(f_-, f_+)`` of the single-qubit anticrossing model."""
    current = np.asarray(current, dtype=float)
    u = f_r - a * current - b
    s = np.sqrt(4 * (g * 1e-3) ** 2 + u**2)
    mid = (f_r + a * current + b) / 2
    return mid - s / 2, mid + s / 2


def branch_jacobian(current, a, b, f_r, g):
    """Derivatives of ``(f_-, f_+)`` w.r.t. ``(a, b, f_r, g)``, each shaped ``(len(I), 4)``."""
    current = np.asarray(current, dtype=float)
    gg = g * 1e-3
    u = f_r - a * current - b
    s = np.sqrt(4 * gg**2 + u**2)
    q = u / (2 * s)
    dg = 2 * gg * 1e-3 / s
    upper = np.column_stack([current / 2 - q * current, 0.5 - q, 0.5 + q, dg])
    lower = np.column_stack([current / 2 + q * current, 0.5 + q, 0.5 - q, -dg])
    return lower, upper


def ensemble_branches(current, a, b, f_r, g, i_shift, f_shift):
    _, upper = branch_frequencies(current, a, b, f_r, g)
    lower, _ = branch_frequencies(np.asarray(current, dtype=float) + i_shift, a, b, f_r, g)
    return lower - f_shift, upper


def ensemble_jacobian(current, a, b, f_r, g, i_shift, f_shift):
    current = np.asarray(current, dtype=float)
    _, up = branch_jacobian(current, a, b, f_r, g)
    upper = np.column_stack([up, np.zeros((current.size, 2))])
    shifted = current + i_shift
    lo, _ = branch_jacobian(shifted, a, b, f_r, g)
    gg = g * 1e-3
    u = f_r - a * shifted - b
    s = np.sqrt(4 * gg**2 + u**2)
    d_ishift = a / 2 + a * u / (2 * s)
    lower = np.column_stack([lo, d_ishift, -np.ones(current.size)])
    return lower, upper


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class AnticrossingData:
    bias_current: np.ndarray
    upper_branch: np.ndarray
    lower_branch: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.bias_current, dtype=float).ravel()
        up = np.asarray(self.upper_branch, dtype=float).ravel()
        lo = np.asarray(self.lower_branch, dtype=float).ravel()
        if not (i.size == up.size == lo.size):
            raise ValueError("current and branch arrays must have equal lengths")
        d = np.diff(i)
        if i.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("bias currents must be strictly monotone")
        both = ~np.isnan(up) & ~np.isnan(lo)
        if np.any(up[both] < lo[both]):
            raise ValueError("upper branch below lower branch")
        object.__setattr__(self, "bias_current", i)
        object.__setattr__(self, "upper_branch", up)
        object.__setattr__(self, "lower_branch", lo)

    def min_gap(self) -> tuple[float, int]:
        gap = self.upper_branch - self.lower_branch
        if np.all(np.isnan(gap)):
            raise ValueError("no column has both branches")
        k = int(np.nanargmin(gap))
        return float(gap[k]), k


def _refine(y: np.ndarray, k: int) -> float:
    if k == 0 or k == y.size - 1:
        return float(k)
    y0, y1, y2 = y[k - 1], y[k], y[k + 1]
    den = y0 - 2 * y1 + y2
    if den >= 0:
        return float(k)
    return float(k + 0.5 * (y0 - y2) / den)


def _column_peaks(col: np.ndarray, rel_height: float, min_sep: int) -> list[int]:
    idx, props = find_peaks(col, height=rel_height * col.max())
    order = idx[np.argsort(props["peak_heights"])[::-1]]
    chosen: list[int] = []
    for k in order:
        if all(abs(k - c) >= min_sep for c in chosen):
            chosen.append(int(k))
        if len(chosen) == 2:
            break
    return chosen


def track_peaks(spectrum: SpectrumMap, *, rel_height: float = 0.05, min_separation: int = 3,
                refine: bool = True, single_peak: str = "lower") -> AnticrossingData:
    """Follow the two anticrossing branches through a bias-versus-frequency map.

    In every bias column the two largest local maxima of ``|s21|`` that are at
    least ``min_separation`` bins apart (and above ``rel_height`` of the
    column maximum) are kept.  The higher one is the upper branch.  A column
    with a single peak records it on the lower branch and leaves the upper
    one NaN; with ``single_peak="continuity"`` it instead joins whichever
    branch of the nearest two-peak column it is closer to.  ``refine`` adds a three-point parabolic sub-bin
    correction, which leaves a peak centred on a bin unchanged.
    """
    if single_peak not in ("lower", "continuity"):
        raise ValueError("single_peak must be 'lower' or 'continuity'")
    amp = np.abs(spectrum.s21)
    f = spectrum.probe_freq
    n = amp.shape[0]
    upper = np.full(n, np.nan)
    lower = np.full(n, np.nan)
    singles = []
    for i, col in enumerate(amp):
        peaks = _column_peaks(col, rel_height, min_separation)
        pos = [_refine(col, k) if refine else float(k) for k in peaks]
        freqs = [np.interp(p, np.arange(f.size), f) for p in pos]
        if len(freqs) == 2:
            lower[i], upper[i] = sorted(freqs)
        elif len(freqs) == 1:
            singles.append((i, freqs[0]))
    n_two = int(np.sum(~np.isnan(upper)))
    if n - n_two > 0.4 * n:
        raise ValueError(f"only {n_two} of {n} bias columns show two resolvable branches")
    pair_cols = np.flatnonzero(~np.isnan(upper))
    for i, fr in singles:
        if single_peak == "lower" or pair_cols.size == 0:
            lower[i] = fr
            continue
        j = pair_cols[np.argmin(np.abs(pair_cols - i))]
        if abs(fr - upper[j]) < abs(fr - lower[j]):
            upper[i] = fr
        else:
            lower[i] = fr
    return AnticrossingData(spectrum.bias_current, upper, lower)


# ---------------------------------------------------------------------------
# fits


def initial_guess(data: AnticrossingData) -> SingleFitParams:
    """Derivative-free warm start from the data alone.

    The resonator frequency is the mid-point of the minimum gap and ``g`` half
    that gap.  The bare-qubit line runs through the farthest qubit-like points
    on either side: the branch that has moved farther from ``f_r``.
    """
    gap, k = data.min_gap()
    i_star = data.bias_current[k]
    f_r = 0.5 * (data.upper_branch[k] + data.lower_branch[k])
    pts = []
    for side in (np.arange(0, k), np.arange(k + 1, data.bias_current.size)):
        best = None
        for j in side:
            for branch in (data.upper_branch, data.lower_branch):
                v = branch[j]
                if np.isnan(v):
                    continue
                dist = abs(data.bias_current[j] - i_star)
                if best is None or (dist, abs(v - f_r)) > (best[0], abs(best[2] - f_r)):
                    best = (dist, data.bias_current[j], v)
        if best is not None:
            pts.append(best)
    if len(pts) < 2:
        raise ValueError("need data on both sides of the minimum gap to initialise the fit")
    (_, i1, q1), (_, i2, q2) = pts
    a = (q2 - q1) / (i2 - i1)
    b = f_r - a * i_star
    return SingleFitParams(a=a, b=b, f_r=f_r, g=gap / 2 * 1e3)


def _select(data: AnticrossingData, p, window: float | None):
    i = data.bias_current
    keep = np.ones(i.size, dtype=bool)
    if window is not None:
        keep = np.abs(p.a * i + p.b - p.f_r) <= window * 2 * abs(p.g) * 1e-3
    up = keep & ~np.isnan(data.upper_branch)
    lo = keep & ~np.isnan(data.lower_branch)
    return up, lo


def _finish(res: FitResult, kind: str) -> FitResult:
    if not res.converged:
        raise FitError(f"{kind} fit did not converge after {res.iterations} iterations "
                       f"(rms residual {res.residual_rms:.3e} GHz)")
    return res


def fit_single(data: AnticrossingData, init: SingleFitParams | None = None, *, window: float | None = 3.0,
               max_iter: int = 200) -> FitResult:
    """Joint fit of both branches to the single-qubit anticrossing model.

    Only points whose initial-guess qubit detuning lies within ``window``
    minimum gaps of the resonator are used (``window=None`` keeps all).
    """
    p0 = init or initial_guess(data)
    up, lo = _select(data, p0, window)
    i_up, f_up = data.bias_current[up], data.upper_branch[up]
    i_lo, f_lo = data.bias_current[lo], data.lower_branch[lo]

    def resid(x):
        return np.concatenate([branch_frequencies(i_up, *x)[1] - f_up, branch_frequencies(i_lo, *x)[0] - f_lo])

    def jac(x):
        return np.vstack([branch_jacobian(i_up, *x)[1], branch_jacobian(i_lo, *x)[0]])

    res = least_squares(resid, p0.vector(), jac, max_iter=max_iter, names=SINGLE_NAMES)
    _finish(res, "single-qubit")
    v = res.values.copy()
    v[3] = abs(v[3])
    res.values = v
    res.params = SingleFitParams(*v)
    res.extra["n_points"] = int(up.sum() + lo.sum())
    return res


def fit_ensemble(data: AnticrossingData, init: EnsembleFitParams | None = None, *, window: float | None = 3.0,
                 max_iter: int = 200, fix_shifts: bool = False) -> FitResult:
    """Fit the ensemble anticrossing model with lower-branch shifts.

    ``fix_shifts`` freezes ``i_shift`` and ``f_shift`` at their initial values.
    A ``UserWarning`` is emitted when the data spans less than twice the
    minimum gap in detuning, where the shifts are poorly constrained; the
    scaled normal-matrix condition number is returned in ``condition``.
    """
    if init is None:
        s = initial_guess(data)
        init = EnsembleFitParams(s.a, s.b, s.f_r, s.g)
    up, lo = _select(data, init, window)
    i_up, f_up = data.bias_current[up], data.upper_branch[up]
    i_lo, f_lo = data.bias_current[lo], data.lower_branch[lo]
    free = slice(0, 4) if fix_shifts else slice(0, 6)
    base = init.vector()

    def full(x):
        v = base.copy()
        v[free] = x
        return v

    def resid(x):
        v = full(x)
        return np.concatenate([ensemble_branches(i_up, *v)[1] - f_up, ensemble_branches(i_lo, *v)[0] - f_lo])

    def jac(x):
        v = full(x)
        j = np.vstack([ensemble_jacobian(i_up, *v)[1], ensemble_jacobian(i_lo, *v)[0]])
        return j[:, free]

    res = least_squares(resid, base[free], jac, max_iter=max_iter, names=ENSEMBLE_NAMES[free])
    _finish(res, "ensemble")
    v = full(res.values)
    v[3] = abs(v[3])
    res.values = v
    if fix_shifts:
        cov = np.zeros((6, 6))
        cov[:4, :4] = res.covariance
        res.covariance = cov
        res.names = ENSEMBLE_NAMES
    res.params = EnsembleFitParams(*v)
    used = np.concatenate([i_up, i_lo])
    span = abs(v[0]) * (used.max() - used.min()) if used.size else 0.0
    res.extra["detuning_span_ghz"] = span
    if span < 2 * 2 * v[3] * 1e-3:
        warnings.warn(f"data spans {span * 1e3:.1f} MHz of detuning, less than twice the minimum gap; "
                      f"normal-matrix condition number {res.condition:.3g}", UserWarning, stacklevel=2)
    return res


def effective_coupling(fit: EnsembleFitParams) -> float:
    """Half the branch distance at ``I* = (f_r - b)/a - i_shift/2``, in MHz."""
    if isinstance(fit, FitResult):
        fit = fit.params
    i_star = (fit.f_r - fit.b) / fit.a - fit.i_shift / 2
    lo, up = ensemble_branches(i_star, fit.a, fit.b, fit.f_r, fit.g, fit.i_shift, fit.f_shift)
    return float((up - lo) / 2 * 1e3)


def synthetic_anticrossing(params, currents, noise_ghz: float = 0.0, rng=None) -> AnticrossingData:
    """Branch data generated from the single or ensemble model, with optional Gaussian noise."""
    currents = np.asarray(currents, dtype=float)
    if isinstance(params, SingleFitParams):
        lo, up = branch_frequencies(currents, *params.vector())
    else:
        lo, up = ensemble_branches(currents, *params.vector())
    if noise_ghz:
        rng = rng or np.random.default_rng()
        lo = lo + rng.normal(0, noise_ghz, lo.size)
        up = up + rng.normal(0, noise_ghz, up.size)
        up = np.maximum(up, lo)
    return AnticrossingData(currents, up, lo)
