import numpy as np
import pytest

from tcqed.fitting import (
    ENSEMBLE_NAMES,
    AnticrossingData,
    EnsembleFitParams,
    SingleFitParams,
    branch_frequencies,
    branch_jacobian,
    effective_coupling,
    ensemble_branches,
    ensemble_jacobian,
    fit_ensemble,
    fit_single,
    initial_guess,
    least_squares,
    synthetic_anticrossing,
    track_peaks,
)
from tcqed.hamiltonian import one_excitation_block
from tcqed.traces import SpectrumMap

TRUE = SingleFitParams(a=-2000.0, b=6.0, f_r=6.0, g=114.8)
CURRENTS = np.linspace(-1.5e-4, 1.5e-4, 201)
STEPS = [1e-3, 1e-7, 1e-7, 1e-4, 1e-10, 1e-7]


def central_difference(fun, x, steps):
    cols = []
    for k, h in enumerate(steps):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.column_stack(cols)


def assert_columns_close(ana, num, rtol=1e-6):
    for k in range(ana.shape[1]):
        scale = np.abs(ana[:, k]).max()
        assert np.max(np.abs(ana[:, k] - num[:, k])) <= rtol * scale


# --- least-squares core -------------------------------------------------------


def test_linear_problem_converges_in_two_iterations(rng):
    a = rng.normal(size=(30, 3))
    y = a @ np.array([1.0, -2.0, 0.5]) + 0.01 * rng.normal(size=30)
    res = least_squares(lambda x: a @ x - y, np.zeros(3), lambda x: a)
    assert res.converged
    assert res.iterations <= 2
    np.testing.assert_allclose(res.values, np.linalg.lstsq(a, y, rcond=None)[0], rtol=1e-10)


def test_rosenbrock():
    res = least_squares(lambda x: np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]]), [-1.0, 1.0])
    assert res.converged
    np.testing.assert_allclose(res.values, [1.0, 1.0], atol=1e-8)


def test_covariance_of_linear_fit(rng):
    # straight line: compare to the textbook parameter covariance
    x = np.linspace(0, 1, 40)
    y = 2 * x + 1 + 0.1 * rng.normal(size=x.size)
    a = np.column_stack([x, np.ones_like(x)])
    res = least_squares(lambda p: a @ p - y, [0.0, 0.0], lambda p: a, names=("m", "c"))
    r = a @ res.values - y
    cov = np.linalg.inv(a.T @ a) * (r @ r) / (x.size - 2)
    np.testing.assert_allclose(res.covariance, cov, rtol=1e-8)
    assert res.stderr_of("m") == pytest.approx(np.sqrt(cov[0, 0]), rel=1e-8)


def test_non_finite_start_is_rejected():
    with pytest.raises(ValueError):
        least_squares(lambda x: x, [np.nan])


# --- model Jacobians -------------------------------------------------------------


@pytest.mark.parametrize("branch", [0, 1])
def test_branch_jacobian(branch):
    x0 = TRUE.vector()
    num = central_difference(lambda x: branch_frequencies(CURRENTS, *x)[branch], x0, STEPS[:4])
    assert_columns_close(branch_jacobian(CURRENTS, *x0)[branch], num)


@pytest.mark.parametrize("branch", [0, 1])
def test_ensemble_jacobian(branch):
    x0 = np.array([-2000.0, 6.0, 6.0, 114.8, 5e-6, 2e-3])
    num = central_difference(lambda x: ensemble_branches(CURRENTS, *x)[branch], x0, STEPS)
    ana = ensemble_jacobian(CURRENTS, *x0)[branch]
    if branch == 1:
        assert np.all(ana[:, 4:] == 0)
        ana, num = ana[:, :4], num[:, :4]
    assert_columns_close(ana, num)


def test_branches_at_resonance():
    lo, up = branch_frequencies(0.0, *TRUE.vector())
    assert up - lo == pytest.approx(2 * TRUE.g * 1e-3, rel=1e-13)


# --- single-qubit fits ---------------------------------------------------------------


def test_noiseless_single_fit():
    res = fit_single(synthetic_anticrossing(TRUE, CURRENTS))
    assert res.converged
    np.testing.assert_allclose(res.values, TRUE.vector(), rtol=1e-6)


def test_initial_guess_is_close():
    p = initial_guess(synthetic_anticrossing(TRUE, CURRENTS))
    assert p.g == pytest.approx(TRUE.g, rel=1e-3)
    assert p.f_r == pytest.approx(TRUE.f_r, abs=1e-9)
    assert p.a == pytest.approx(TRUE.a, rel=0.2)


def test_noisy_fit_error_bars_cover_truth():
    covered, close = 0, 0
    for seed in range(100):
        data = synthetic_anticrossing(TRUE, CURRENTS, noise_ghz=1e-3, rng=np.random.default_rng(seed))
        res = fit_single(data)
        err = abs(res.params.g - TRUE.g)
        covered += err <= 2 * res.stderr_of("g")
        close += err <= 0.01 * TRUE.g
    assert close == 100
    assert covered >= 88


def test_error_bar_scales_as_inverse_sqrt_points():
    sig = []
    for n in (50, 200, 800):
        vals = []
        for seed in range(10):
            data = synthetic_anticrossing(TRUE, np.linspace(-1.5e-4, 1.5e-4, n), 1e-3, np.random.default_rng(seed))
            vals.append(fit_single(data).stderr_of("g"))
        sig.append(np.mean(vals))
    assert sig[0] / sig[1] == pytest.approx(2.0, rel=0.15)
    assert sig[1] / sig[2] == pytest.approx(2.0, rel=0.15)


def test_data_validation():
    with pytest.raises(ValueError):
        AnticrossingData([0.0, 1.0], [1.0], [0.0])
    with pytest.raises(ValueError):
        AnticrossingData([0.0, 1.0, 0.5], [1.0] * 3, [0.0] * 3)
    with pytest.raises(ValueError):
        AnticrossingData([0.0, 1.0], [0.0, 0.0], [1.0, 1.0])


# --- ensemble fits ---------------------------------------------------------------------


def test_frozen_shifts_reproduce_single_fit():
    data = synthetic_anticrossing(TRUE, CURRENTS, 1e-3, np.random.default_rng(2))
    single = fit_single(data)
    ens = fit_ensemble(data, fix_shifts=True)
    np.testing.assert_allclose(ens.values[:4], single.values, rtol=1e-8)
    assert ens.values[4] == ens.values[5] == 0.0
    assert ens.names == ENSEMBLE_NAMES


def test_injected_shifts_recovered():
    truth = EnsembleFitParams(TRUE.a, TRUE.b, TRUE.f_r, TRUE.g, i_shift=5e-6, f_shift=2e-3)
    res = fit_ensemble(synthetic_anticrossing(truth, CURRENTS))
    assert res.params.i_shift == pytest.approx(5e-6, rel=0.01)
    assert res.params.f_shift == pytest.approx(2e-3, rel=0.01)
    assert res.params.g == pytest.approx(TRUE.g, rel=0.01)


def test_frequency_shift_enters_coupling_at_half_weight():
    base = EnsembleFitParams(TRUE.a, TRUE.b, TRUE.f_r, TRUE.g, i_shift=5e-6)
    moved = EnsembleFitParams(TRUE.a, TRUE.b, TRUE.f_r, TRUE.g, i_shift=5e-6, f_shift=2e-3)
    assert effective_coupling(moved) - effective_coupling(base) == pytest.approx(1.0, abs=1e-9)


def test_effective_coupling_without_shifts_is_g():
    assert effective_coupling(EnsembleFitParams(*TRUE.vector())) == pytest.approx(TRUE.g, rel=1e-12)


def test_effective_coupling_reparameterization(rng):
    for _ in range(100):
        p = EnsembleFitParams(rng.uniform(-3e3, -500), rng.uniform(5, 7), rng.uniform(5.5, 6.5),
                              rng.uniform(50, 300), rng.uniform(-1e-5, 1e-5), rng.uniform(-5e-3, 5e-3))
        c = 10 ** rng.uniform(-3, 3)
        q = EnsembleFitParams(p.a / c, p.b, p.f_r, p.g, p.i_shift * c, p.f_shift)
        assert effective_coupling(q) == pytest.approx(effective_coupling(p), rel=1e-10)


def test_narrow_span_warns():
    data = synthetic_anticrossing(TRUE, np.linspace(-4e-5, 4e-5, 41))
    with pytest.warns(UserWarning, match="less than twice"):
        res = fit_ensemble(data)
    assert np.isfinite(res.condition)


def test_five_qubit_collective_coupling(paper_config):
    g = [q.g_ge for q in paper_config.qubits[:5]]
    f_r = 6.0
    # oracle: half the bright-doublet gap of the resonant one-excitation block
    ev = np.linalg.eigvalsh(one_excitation_block(f_r, [f_r] * 5, g))
    oracle = (ev[-1] - ev[0]) / 2 * 1e3
    assert oracle == pytest.approx(256.5, rel=2e-3)
    currents = np.linspace(-4e-4, 4e-4, 201)
    lo, up = [], []
    for i in currents:
        e = np.linalg.eigvalsh(one_excitation_block(f_r, [f_r + TRUE.a * i] * 5, g))
        lo.append(e[0])
        up.append(e[-1])
    res = fit_ensemble(AnticrossingData(currents, up, lo))
    assert effective_coupling(res.params) == pytest.approx(oracle, rel=0.02)


# --- peak tracking ----------------------------------------------------------------------


def bump(k, centre, height=1.0, width=2.0):
    # compact symmetric peak, so neighbouring peaks do not pull each other
    x = (k - centre) / width
    return height * np.where(np.abs(x) < 5, np.exp(-(x**2)), 0.0)


def two_peak_map(lower_bins, upper_bins, n_freq=400):
    f = np.linspace(5.8, 6.2, n_freq)
    k = np.arange(n_freq)
    rows = []
    for lb, ub in zip(lower_bins, upper_bins):
        row = np.zeros(n_freq)
        for b in (lb, ub):
            if b is not None:
                row += bump(k, b)
        rows.append(row)
    return SpectrumMap(np.arange(len(rows)) * 1e-6, f, np.array(rows)), f


def test_peaks_on_bins_are_located_exactly():
    lower = np.arange(100, 140, 2)
    upper = np.arange(300, 260, -2)
    smap, f = two_peak_map(lower, upper)
    data = track_peaks(smap)
    np.testing.assert_allclose(data.lower_branch, f[lower], rtol=0, atol=1e-12)
    np.testing.assert_allclose(data.upper_branch, f[upper], rtol=0, atol=1e-12)


def test_unequal_heights_do_not_swap_branches():
    f = np.linspace(5.8, 6.2, 400)
    k = np.arange(400)
    rows = [bump(k, 150) + bump(k, 250, 0.4), bump(k, 150, 0.4) + bump(k, 250)]
    data = track_peaks(SpectrumMap([0.0, 1e-6], f, np.array(rows)))
    np.testing.assert_allclose(data.lower_branch, f[150], atol=1e-12)
    np.testing.assert_allclose(data.upper_branch, f[250], atol=1e-12)


def test_single_peak_columns_go_to_lower_branch():
    lower = [120] * 10
    upper = [280] * 7 + [None] * 3
    smap, f = two_peak_map(lower, upper)
    data = track_peaks(smap)
    assert np.all(np.isnan(data.upper_branch[7:]))
    np.testing.assert_allclose(data.lower_branch, f[120], atol=1e-12)


def test_continuity_assigns_single_peak_to_nearest_branch():
    lower = [120] * 7 + [None] * 3
    upper = [280] * 10
    smap, f = two_peak_map(lower, upper)
    data = track_peaks(smap, single_peak="continuity")
    np.testing.assert_allclose(data.upper_branch, f[280], atol=1e-12)
    assert np.all(np.isnan(data.lower_branch[7:]))


def test_too_few_two_peak_columns():
    smap, _ = two_peak_map([120] * 10, [280] * 5 + [None] * 5)
    with pytest.raises(ValueError, match="two resolvable"):
        track_peaks(smap)
