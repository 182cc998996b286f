import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcqed.fano import (
    PARAM_NAMES,
    BackgroundModel,
    SignalParams,
    apply_background,
    background_term,
    extract_signal_params,
    signal_jacobian,
    signal_model,
    signal_strength,
    subtract_background,
    symmetry_metric,
    synthetic_signal_trace,
)
from tcqed.traces import TransmissionTrace

PAPER_LIKE = SignalParams(0.6, 1.5, 0.35, 6.0)


def central_difference(fun, x, steps):
    cols = []
    for k, h in enumerate(steps):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        cols.append((fun(xp) - fun(xm)) / (2 * h))
    return np.column_stack(cols)


def random_eps(rng, size=None, r_max=0.3):
    r = r_max * np.sqrt(rng.uniform(0, 0.999, size))
    return r * np.exp(2j * np.pi * rng.uniform(size=size))


def lorentzian_field(omega, omega0=6.0, width_mhz=0.7):
    return width_mhz / (width_mhz + 1j * (omega0 - omega) * 1e3)


# --- background algebra -----------------------------------------------------


def test_background_expressions_agree(rng):
    for eps in random_eps(rng, 1000):
        assert background_term(eps) == pytest.approx(2 * eps / (1j - 2 * eps), rel=1e-13, abs=1e-16)


def test_zero_background_leaves_cavity_response():
    omega = np.linspace(5.99, 6.01, 51)
    field = lorentzian_field(omega)
    np.testing.assert_array_equal(apply_background(field, 1.0, 0j), field)


def test_flat_background_off_resonance():
    eps = 0.05 + 0.02j
    s = apply_background(np.zeros(5), 1.0, eps)
    np.testing.assert_allclose(s, -2j * eps / (1 + 2j * eps), rtol=1e-15)


def test_real_eps_makes_lineshape_asymmetric():
    omega = np.linspace(5.99, 6.01, 4001)
    field = lorentzian_field(omega)
    sym = np.abs(apply_background(field, 1.0, 0.0))
    fano = np.abs(apply_background(field, 1.0, 0.05))
    assert omega[np.argmax(sym)] == pytest.approx(6.0, abs=1e-9)
    shift_max = omega[np.argmax(fano)] - 6.0
    shift_min = omega[np.argmin(fano)] - 6.0
    assert abs(shift_max) > 1e-5
    assert np.sign(shift_max) != np.sign(shift_min)
    tr = TransmissionTrace(omega, apply_background(field, 1.0, 0.05))
    assert symmetry_metric(tr, 6.0) > 0.05


def test_round_trip_example():
    omega = np.linspace(5.99, 6.01, 401)
    eps = 0.1 + 0.05j
    tr = TransmissionTrace(omega, apply_background(lorentzian_field(omega), 1.0, eps, kappa_c=0.49))
    back = subtract_background(tr, eps, kappa_c=0.49)
    assert np.max(np.abs(back.s21 - lorentzian_field(omega))) < 1e-12


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    n = 64
    omega = np.sort(rng.uniform(5.9, 6.1, n)) + np.arange(n) * 1e-9
    field = rng.normal(size=n) + 1j * rng.normal(size=n)
    eps = complex(random_eps(rng))
    kappa = rng.uniform(0.1, 2.0)
    a_in = complex(rng.uniform(0.5, 2) * np.exp(1j * rng.uniform(0, 2 * np.pi)))
    s = apply_background(field, a_in, eps, kappa)
    back = subtract_background(TransmissionTrace(omega, s), eps, kappa, a_in)
    assert np.max(np.abs(back.s21 - field)) <= 1e-12 * max(1.0, np.abs(field).max())


def test_subtracting_zero_background_is_identity():
    omega = np.linspace(5.99, 6.01, 11)
    tr = TransmissionTrace(omega, lorentzian_field(omega))
    np.testing.assert_array_equal(subtract_background(tr, 0j).s21, tr.s21)


def test_subtraction_restores_symmetry():
    omega = np.linspace(5.99, 6.01, 2001)
    tr = TransmissionTrace(omega, apply_background(lorentzian_field(omega), 1.0, 0.05))
    assert symmetry_metric(tr, 6.0) > 0.05
    assert symmetry_metric(subtract_background(tr, 0.05), 6.0) < 0.01


def test_background_model_limits_eps():
    with pytest.raises(ValueError):
        BackgroundModel(0.3)
    with pytest.raises(ValueError):
        apply_background([0.0], 1.0, 0.25j + 0.25)
    assert BackgroundModel(0.1).term() == background_term(0.1)


# --- signal model --------------------------------------------------------------


def test_perfect_transmission_on_resonance():
    assert signal_model(6.0, SignalParams(1.0, 0.0, 0.7, 6.0)) == pytest.approx(1.0, abs=1e-15)


def test_background_limit_far_from_resonance():
    eps = 0.05 - 0.01j
    far = signal_model(np.array([-1e6, 1e6]), PAPER_LIKE, eps)
    np.testing.assert_allclose(far, 2 * eps / (1j - 2 * eps), atol=1e-8)


def test_on_resonance_cavity_term():
    assert signal_model(6.0, SignalParams(0.6, 0.35, 0.35, 6.0)) == pytest.approx(0.3, abs=1e-15)


@settings(max_examples=100)
@given(st.floats(0.05, 5.0), st.floats(0.0, 5.0), st.floats(5.0, 7.0))
def test_lorentzian_half_width(kappa, gamma, omega0):
    params = SignalParams(1.0, gamma, kappa, omega0)
    peak = abs(signal_model(omega0, params)) ** 2
    for sign in (-1, 1):
        w = omega0 + sign * (kappa + gamma) * 1e-3
        assert abs(signal_model(w, params)) ** 2 == pytest.approx(peak / 2, rel=1e-9)


def test_signal_strength_examples():
    assert signal_strength(SignalParams(1.0, 0.0, 0.7, 6.0)) == 1.0
    assert signal_strength(SignalParams(1.0, 0.7, 0.7, 6.0)) == 0.5


@settings(max_examples=100)
@given(st.floats(0.01, 1.0), st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_halving_kappa_lowers_signal(p, gamma, kappa):
    full = signal_strength(SignalParams(p, gamma, kappa, 6.0))
    half = signal_strength(SignalParams(p, gamma, kappa / 2, 6.0))
    assert half < full


def test_signal_params_validation():
    with pytest.raises(ValueError):
        SignalParams(1.2, 0.0, 0.7, 6.0)
    with pytest.raises(ValueError):
        SignalParams(0.5, -1.0, 0.7, 6.0)
    with pytest.raises(ValueError):
        SignalParams(0.5, 0.0, 0.0, 6.0)


def test_signal_jacobian_matches_finite_differences():
    omega = PAPER_LIKE.omega0 + np.linspace(-0.02, 0.02, 81)
    x0 = np.array([getattr(PAPER_LIKE, n) for n in PARAM_NAMES])

    def fun(x):
        s = signal_model(omega, SignalParams(*x))
        return np.concatenate([s.real, s.imag])

    # steps small against the 1.85 MHz linewidth; omega0 is in GHz
    num = central_difference(fun, x0, [1e-6, 1e-6, 1e-6, 1e-9])
    ana = signal_jacobian(omega, PAPER_LIKE)
    ana = np.vstack([ana.real, ana.imag])
    for k in range(4):
        scale = np.abs(ana[:, k]).max()
        assert np.max(np.abs(ana[:, k] - num[:, k])) <= 1e-6 * scale


# --- parameter extraction ------------------------------------------------------


@pytest.mark.parametrize("eps", [0j, 0.05, 0.05 - 0.03j])
def test_noiseless_recovery(eps):
    tr = synthetic_signal_trace(PAPER_LIKE, eps)
    params, errs, res = extract_signal_params(tr, eps, kappa_c=PAPER_LIKE.kappa_c)
    assert res.converged
    for name in PARAM_NAMES:
        assert getattr(params, name) == pytest.approx(getattr(PAPER_LIKE, name), rel=1e-6)
    assert errs["kappa_c"] == 0.0


def test_noisy_p_within_5_percent_in_95_of_100_runs():
    hits = 0
    for seed in range(100):
        tr = synthetic_signal_trace(PAPER_LIKE, 0.05, noise=0.01, rng=np.random.default_rng(seed))
        params, _, _ = extract_signal_params(tr, 0.05, kappa_c=PAPER_LIKE.kappa_c)
        hits += abs(params.p - PAPER_LIKE.p) <= 0.05 * PAPER_LIKE.p
    assert hits >= 95


def test_reported_errors_cover_monte_carlo_spread():
    ps, sig = [], []
    for seed in range(100):
        tr = synthetic_signal_trace(PAPER_LIKE, 0.0, noise=0.01, rng=np.random.default_rng(1000 + seed))
        params, errs, _ = extract_signal_params(tr, 0.0, kappa_c=PAPER_LIKE.kappa_c)
        ps.append(params.p)
        sig.append(errs["p"])
    assert np.std(ps) == pytest.approx(np.median(sig), rel=0.3)


def test_bare_cavity_coupling_recovered():
    bare = SignalParams(1.0, 0.0, 0.7, 6.0)
    params, _, _ = extract_signal_params(synthetic_signal_trace(bare), 0j, fixed={"p": 1.0, "gamma_eff": 0.0})
    assert params.kappa_c == pytest.approx(0.7, rel=1e-9)


@settings(max_examples=25)
@given(st.floats(-0.5, 0.5))
def test_fit_is_translation_equivariant(shift):
    tr = synthetic_signal_trace(PAPER_LIKE, 0.05, noise=0.005, rng=np.random.default_rng(3))
    moved = TransmissionTrace(tr.probe_freq + shift, tr.s21)
    a, _, _ = extract_signal_params(tr, 0.05, kappa_c=0.35)
    b, _, _ = extract_signal_params(moved, 0.05, kappa_c=0.35)
    assert b.omega0 - a.omega0 == pytest.approx(shift, abs=1e-9)
    assert b.p == pytest.approx(a.p, rel=1e-7)
    assert b.gamma_eff == pytest.approx(a.gamma_eff, rel=1e-6)


def test_unknown_fixed_parameter():
    with pytest.raises(ValueError):
        extract_signal_params(synthetic_signal_trace(PAPER_LIKE), fixed={"q": 1.0})


def test_symmetry_metric_of_lorentzian_is_zero():
    omega = np.linspace(5.99, 6.01, 2001)
    assert symmetry_metric(TransmissionTrace(omega, lorentzian_field(omega))) < 1e-12
