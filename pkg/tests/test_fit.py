import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares

from vbhbn import fit, ratemodel, spectra
from vbhbn.config import RunConfig


def make_spectrum(boron="10B", nitrogen="15N", noise=0.0, seed=0, polarization=0.0):
    cfg = RunConfig.load(overrides={"spectra": {"boron": boron}, "model": {"nitrogen": nitrogen}})
    n = cfg.nitrogen()
    a = cfg.nitrogen_tensor().azz
    lines = spectra.nitrogen_lines(n, a)
    sigma = cfg.line_sigma()
    amp = cfg.get("spectra", "amplitude")
    grid = cfg.spectrum_grid()
    spec = spectra.synthesize_polarized(lines, polarization, sigma, cfg.line_center(), amp, grid, spin=n.spin)
    if noise:
        rng = np.random.default_rng(seed)
        # noise relative to the deepest dip
        spec.signal = spec.signal + rng.normal(0, noise * -spec.signal.min(), spec.signal.size)
    return spec, abs(a), sigma, cfg.line_center(), len(lines)


@pytest.mark.parametrize("boron", ["10B", "11B"])
@pytest.mark.parametrize("nitrogen", ["14N", "15N"])
def test_noiseless_round_trip(boron, nitrogen):
    spec, a, sigma, center, n = make_spectrum(boron, nitrogen)
    res = fit.fit_mixture(spec, n)
    assert res.converged
    assert res.splitting_mhz == pytest.approx(a, rel=1e-6)
    assert res.sigma_mhz == pytest.approx(sigma, rel=1e-6)
    assert res.center_mhz == pytest.approx(center, rel=1e-9)
    assert res.offset == pytest.approx(0, abs=1e-9)
    assert np.allclose(res.evaluate(spec.freq_mhz), spec.signal, atol=1e-9)


def test_fwhm_report():
    spec, a, sigma, _, n = make_spectrum("11B", "15N")
    res = fit.fit_mixture(spec, n)
    assert res.fwhm_mhz == pytest.approx(52.9, abs=1e-4)


def test_noisy_splitting_within_half_mhz():
    errs = []
    for seed in range(100):
        spec, a, *_ = make_spectrum("10B", "15N", noise=0.05, seed=seed)
        errs.append(fit.fit_mixture(spec, 4).splitting_mhz - a)
    assert np.max(np.abs(errs)) < 0.5


def test_shift_and_scale_invariance():
    spec, *_ = make_spectrum("10B", "15N", noise=0.05, seed=3)
    base = fit.fit_mixture(spec, 4)
    shifted = fit.fit_mixture(spectra.Spectrum(spec.freq_mhz + 137.0, spec.signal), 4)
    assert shifted.center_mhz - base.center_mhz == pytest.approx(137.0, abs=1e-6)
    assert shifted.splitting_mhz == pytest.approx(base.splitting_mhz, abs=1e-6)
    assert shifted.sigma_mhz == pytest.approx(base.sigma_mhz, abs=1e-6)
    scaled = fit.fit_mixture(spectra.Spectrum(spec.freq_mhz, 7.5 * spec.signal), 4)
    assert scaled.splitting_mhz == pytest.approx(base.splitting_mhz, abs=1e-6)
    assert scaled.sigma_mhz == pytest.approx(base.sigma_mhz, abs=1e-6)
    assert np.allclose(scaled.amplitudes, 7.5 * base.amplitudes, rtol=1e-6)


def test_agrees_with_scipy_least_squares():
    spec, *_ = make_spectrum("11B", "14N", noise=0.05, seed=11)
    res = fit.fit_mixture(spec, 7)
    x0 = np.r_[res.center_mhz + 3, res.splitting_mhz * 1.02, res.sigma_mhz * 0.95, 0.0, res.amplitudes]
    ref = least_squares(
        lambda t: fit.mixture_model(t, spec.freq_mhz, 7) - spec.signal, x0,
        method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
    )  # fmt: skip
    mine = np.r_[res.center_mhz, res.splitting_mhz, res.sigma_mhz, res.offset, res.amplitudes]
    assert np.allclose(mine, ref.x, rtol=1e-6, atol=1e-9)
    assert res.rss == pytest.approx(2 * ref.cost, rel=1e-9)


def test_analytic_jacobian_matches_finite_differences():
    theta = np.array([3300.0, 64.1, 18.0, 0.001, 0.01, 0.03, 0.02, 0.005])
    f = np.linspace(3000, 3600, 301)
    j = fit._mixture_jacobian(theta, f, 4)
    h = 1e-6 * np.maximum(np.abs(theta), 1)
    num = np.column_stack([
        (fit.mixture_model(theta + h[i] * np.eye(8)[i], f, 4) - fit.mixture_model(theta - h[i] * np.eye(8)[i], f, 4)) / (2 * h[i])
        for i in range(8)
    ])  # fmt: skip
    assert np.allclose(j, num, atol=1e-8)


def test_stderr_reflects_noise():
    spec, *_ = make_spectrum("10B", "15N", noise=0.05, seed=5)
    res = fit.fit_mixture(spec, 4)
    err = res.stderr
    assert 0 < err["splitting_mhz"] < 0.5
    assert set(err) >= {"center_mhz", "splitting_mhz", "sigma_mhz", "offset"}


def test_free_mode():
    spec, a, sigma, _, _ = make_spectrum("10B", "15N")
    res = fit.fit_mixture(spec, 4, shared=False)
    assert res.splitting_mhz == pytest.approx(a, rel=1e-4)
    assert res.sigma_mhz == pytest.approx(sigma, rel=1e-4)


def test_user_init():
    spec, a, *_ = make_spectrum("10B", "15N")
    res = fit.fit_mixture(spec, 4, init={"splitting_mhz": 60.0, "sigma_mhz": 20.0})
    assert res.splitting_mhz == pytest.approx(a, rel=1e-6)


def test_fit_errors():
    spec, *_ = make_spectrum("10B", "15N")
    with pytest.raises(ValueError, match="2..9"):
        fit.fit_mixture(spec, 1)
    flat = spectra.Spectrum(spec.freq_mhz, np.zeros_like(spec.signal))
    with pytest.raises(ValueError, match="zero amplitude range"):
        fit.fit_mixture(flat, 4)
    noisy, *_ = make_spectrum("10B", "15N", noise=0.05, seed=1)
    with pytest.raises(fit.FitError) as info:
        fit.fit_mixture(noisy, 4, init={"splitting_mhz": 40.0}, max_iter=2)
    assert info.value.best is not None and info.value.best.n_iter == 2


def test_areas_keyed_by_projection():
    spec, *_ = make_spectrum("10B", "15N", polarization=0.3)
    res = fit.fit_mixture(spec, 4)
    s = res.areas_by_mi()
    assert s[Fraction(3, 2)] / s[Fraction(-3, 2)] == pytest.approx((1.3 / 0.7) ** 3, rel=1e-6)
    flipped = res.areas_by_mi(descending=True)
    assert flipped[Fraction(-3, 2)] == s[Fraction(3, 2)]


def test_polarization_from_areas_trivial():
    m = [Fraction(k, 2) for k in (-3, -1, 1, 3)]
    assert fit.polarization_from_areas(dict(zip(m, [1, 1, 1, 1]))) == 0
    assert fit.polarization_from_areas(dict(zip(m, [0, 0, 0, 2]))) == 1
    assert fit.polarization_from_areas(dict(zip(m, [5, 0, 0, 0]))) == -1
    with pytest.raises(ValueError):
        fit.polarization_from_areas(dict(zip(m, [0, 0, 0, 0])))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3), st.floats(0.1, 10))
def test_polarization_from_areas_bounded_and_homogeneous(areas, k):
    m = [Fraction(j, 2) for j in (-3, -1, 1, 3)]
    p = fit.polarization_from_areas(dict(zip(m, areas)))
    assert -1 - 1e-12 <= p <= 1 + 1e-12
    assert fit.polarization_from_areas(dict(zip(m, [k * a for a in areas]))) == pytest.approx(p)


POWERS = np.linspace(0.0, 10.0, 21)


def test_saturation_exact_round_trip():
    pol = fit.saturation_curve(POWERS, 0.226, 1.1)
    res = fit.fit_saturation(POWERS, pol)
    assert res.p_max == pytest.approx(0.226, abs=1e-8)
    assert res.p_sat == pytest.approx(1.1, abs=1e-8)
    assert res.well_determined


def test_saturation_noisy_trials():
    rng = np.random.default_rng(2024)
    clean = fit.saturation_curve(POWERS, 0.226, 1.1)
    est = []
    for _ in range(50):
        noisy = clean + rng.normal(0, 0.05 * 0.226, POWERS.size)
        r = fit.fit_saturation(POWERS, noisy)
        est.append((r.p_max, r.p_sat))
    est = np.array(est)
    assert abs(est[:, 0].mean() - 0.226) < 0.007
    assert abs(est[:, 1].mean() - 1.1) < 0.2


def test_saturation_degenerate_data_warns():
    p = np.array([200.0, 300.0, 400.0, 500.0])
    pol = fit.saturation_curve(p, 0.226, 1.1) + np.array([1e-3, -1e-3, 1e-3, -1e-3])
    with pytest.warns(fit.FitWarning, match="poorly constrained"):
        res = fit.fit_saturation(p, pol)
    assert not res.well_determined
    assert res.stderr[1] > 0.5 * res.p_sat


def test_saturation_from_rate_model():
    cfg = RunConfig.load()
    t = cfg.nitrogen_tensor()
    limit = ratemodel.saturation_polarization(t.a_plus, t.a_minus)
    k = cfg.get("ratemodel", "k_mhz_per_mw")
    curve = ratemodel.polarization_vs_power(cfg.four_level_template(), POWERS, k)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        res = fit.fit_saturation(POWERS, curve)
    assert abs(res.p_max - limit) < 0.1 * limit
    assert res.p_sat == pytest.approx(1.1, rel=1e-6)


def test_saturation_input_errors():
    with pytest.raises(ValueError):
        fit.fit_saturation([1.0, 1.0, 2.0], [0.1, 0.1, 0.2])
    with pytest.raises(ValueError):
        fit.fit_saturation([1.0, 2.0], [0.1, 0.2, 0.3])
