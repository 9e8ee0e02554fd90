import numpy as np
import pytest

import condspec as cs
from condspec.basis import build_tensor_basis
from condspec.dataset import OutcomeTransform
from condspec.errors import ValidationError
from condspec.sampler import ModelConfig, PosteriorDraws
from condspec.summaries import (band_coherence, band_coherence_derivative,
                                band_frequencies, band_measures, band_power,
                                band_ratio, central_difference, coherence_surface,
                                evaluate_spectrum_draw, log_spectrum_surface,
                                percentile_bounds, surface_summaries)


def synthetic_draws(n_draws=40, n=30, p=3, n_j=2, n_h=2, seed=0, scale=0.1,
                    outcomes=None, eta_builder=None):
    """Hand-built PosteriorDraws with controllable coefficients."""
    rng = np.random.default_rng(seed)
    u = np.linspace(0.1, 1.0, 4) if outcomes is None else np.asarray(outcomes)
    basis = build_tensor_basis(n, u, n_j=n_j, n_h=n_h)
    k_dim = basis.block_map.total
    blocks = [(2, 1), (3, 1), (3, 2)][: {1: 0, 2: 1, 3: 3}[p]]

    def build(kind, key):
        if eta_builder is not None:
            return eta_builder(kind, key, n_draws, k_dim, rng)
        return rng.standard_normal((n_draws, k_dim)) * scale

    eta_r = {kl: build("r", kl) for kl in blocks}
    eta_i = {kl: build("i", kl) for kl in blocks}
    eta_d = {k: build("d", k) for k in range(1, p + 1)}
    config = ModelConfig(iterations=n_draws + 1, burn_in=1, n_j=n_j, n_h=n_h, seed=seed)
    return PosteriorDraws(config=config, basis=basis, n_channels=p, n_time=n,
                          outcomes=u, outcome_transform=OutcomeTransform(0.0, 1.0),
                          eta_r=eta_r, eta_i=eta_i, eta_d=eta_d, tau2={},
                          acceptance={k: 0.5 for k in range(1, p + 1)})


def zero_draws(**kw):
    return synthetic_draws(eta_builder=lambda kind, key, s, k, rng: np.zeros((s, k)), **kw)


class TestPercentiles:
    def test_order_statistic_convention_1500(self):
        rng = np.random.default_rng(1)
        vals = rng.permutation(1500).astype(float)[:, None]
        lo, hi = percentile_bounds(vals)
        srt = np.sort(vals[:, 0])
        assert lo[0] == srt[37]      # ceil(0.025 * 1500) = 38 -> 0-based 37
        assert hi[0] == srt[1462]    # ceil(0.975 * 1500) = 1463

    def test_bounds_ordered(self):
        rng = np.random.default_rng(2)
        lo, hi = percentile_bounds(rng.standard_normal((200, 7)))
        assert np.all(lo <= hi)


class TestEvaluateSpectrum:
    def test_zero_coefficients_identity(self):
        draws = zero_draws()
        f = evaluate_spectrum_draw(draws, 0, [(0.1, 0.2), (0.3, 0.9), (0.45, 0.0)])
        assert f.shape == (3, 3, 3)
        for t in range(3):
            assert np.allclose(f[t], np.eye(3), atol=1e-12)

    def test_training_point_consistency(self):
        draws = synthetic_draws(seed=3)
        basis = draws.basis
        om = basis.freq_basis.points
        u = draws.outcomes
        s = 7
        f = evaluate_spectrum_draw(draws, s, [(om[2], u[1])])
        row = basis.Q[basis.row_index(1, 2)]
        theta = {kl: row @ (draws.eta_r[kl][s] + 1j * draws.eta_i[kl][s])
                 for kl in draws.eta_r}
        psi_inv = {k: np.exp(row @ draws.eta_d[k][s]) for k in draws.eta_d}
        ref = cs.whittle.spectra_from_components(theta, psi_inv, 3)
        assert np.allclose(f[0], ref, atol=1e-10)

    def test_p1_scalar_inversion(self):
        draws = synthetic_draws(p=1, seed=4)
        om = draws.basis.freq_basis.points
        f = evaluate_spectrum_draw(draws, 5, [(om[1], 0.33)])
        rows = draws.basis.rows_at(np.array([om[1]]), np.array([0.33]))
        expected = np.exp(-(rows[0] @ draws.eta_d[1][5]))
        assert f[0, 0, 0].real == pytest.approx(expected, rel=1e-12)
        assert abs(f[0, 0, 0].imag) < 1e-15

    def test_every_draw_hermitian_pd(self):
        draws = synthetic_draws(seed=5, scale=0.3)
        om = draws.basis.freq_basis.points
        f = evaluate_spectrum_draw(draws, 0, [(om[0], 0.0), (om[-1], 1.0)])
        for t in range(2):
            assert np.allclose(f[t], f[t].conj().T, atol=1e-12)
            assert np.linalg.eigvalsh(f[t]).min() > 0


class TestSurfaces:
    def test_log_spectrum_shape_and_order(self):
        draws = synthetic_draws(seed=6)
        surf = log_spectrum_surface(draws, 1, us=np.linspace(0, 1, 5))
        assert surf.mean.shape == (draws.basis.freq_basis.points.size, 5)
        assert np.all(surf.lower95 <= surf.upper95)
        assert surf.scale == "log-spectrum"

    def test_coherence_zero_cross_spectrum_clamped(self):
        draws = zero_draws()
        surf = coherence_surface(draws, 1, 2, us=np.linspace(0, 1, 3))
        assert np.all(np.isfinite(surf.mean))
        assert np.all(surf.mean < -20)      # logit of clamped ~1e-12

    def test_coherence_in_unit_interval(self):
        draws = synthetic_draws(seed=7, scale=0.4)
        surf = coherence_surface(draws, 1, 3, us=np.linspace(0, 1, 3), scale="linear")
        assert np.all(surf.mean >= 0) and np.all(surf.mean <= 1)

    def test_surface_summaries_batch_matches_single(self):
        draws = synthetic_draws(seed=8)
        us = np.linspace(0, 1, 4)
        batch = surface_summaries(draws, us=us)
        single = log_spectrum_surface(draws, 2, us=us)
        assert np.allclose(batch[("logspec", 2)].mean, single.mean, atol=1e-12)
        single_c = coherence_surface(draws, 1, 2, us=us)
        assert np.allclose(batch[("coherence", 1, 2)].mean, single_c.mean, atol=1e-12)

    def test_same_channel_coherence_rejected(self):
        with pytest.raises(ValidationError):
            coherence_surface(synthetic_draws(), 2, 2)


class TestBandFrequencies:
    def test_hf_count_n300(self):
        grid = cs.FrequencyGrid.for_length(300)
        idx = band_frequencies(grid.omegas, (0.15, 0.40))
        assert idx.size == 75
        assert idx[0] == 44       # omega_45 = 0.15 (0-based index 44)
        assert idx[-1] == 118     # omega_119 < 0.40, omega_120 excluded

    def test_boundary_goes_to_upper_band(self):
        grid = cs.FrequencyGrid.for_length(300)
        lf = band_frequencies(grid.omegas, (0.04, 0.15))
        hf = band_frequencies(grid.omegas, (0.15, 0.40))
        assert 44 not in lf and 44 in hf

    def test_empty_band_rejected(self):
        grid = cs.FrequencyGrid.for_length(300)
        with pytest.raises(ValidationError):
            band_frequencies(grid.omegas, (0.40001, 0.40002))

    def test_bad_band_rejected(self):
        with pytest.raises(ValidationError):
            band_frequencies(np.array([0.1]), (0.3, 0.2))


class TestBandCurves:
    def test_constant_spectrum_band_power_exact(self):
        draws = zero_draws()
        curve = band_power(draws, 2, us=np.linspace(0, 1, 7))
        assert np.allclose(curve.mean, 1.0, atol=1e-12)
        assert np.allclose(curve.lower95, 1.0, atol=1e-12)

    def test_flat_spectrum_ratio_is_one(self):
        draws = zero_draws()
        curve = band_ratio(draws, 1, us=np.linspace(0, 1, 5))
        assert np.allclose(curve.mean, 1.0, atol=1e-12)

    def test_ratio_positive(self):
        draws = synthetic_draws(seed=9, scale=0.3)
        curve = band_ratio(draws, 3, us=np.linspace(0, 1, 5))
        assert np.all(curve.mean > 0) and np.all(curve.lower95 > 0)

    def test_zero_cross_spectrum_coherence_zero(self):
        draws = zero_draws()
        curve = band_coherence(draws, 1, 2, us=np.linspace(0, 1, 5))
        assert np.allclose(curve.mean, 0.0, atol=1e-12)

    def test_constant_in_frequency_equals_pointwise(self):
        # only the a-block intercept is nonzero, so components are constant in
        # omega and u: band coherence must equal the pointwise value
        def builder(kind, key, s, k, rng):
            eta = np.zeros((s, k))
            eta[:, 0] = 0.4 if kind != "d" else -0.2
            return eta
        draws = synthetic_draws(eta_builder=builder)
        us = np.linspace(0, 1, 3)
        curve = band_coherence(draws, 1, 2, us=us)
        f = evaluate_spectrum_draw(draws, 0, [(0.2, 0.5)])[0]
        rho2 = abs(f[0, 1]) ** 2 / (f[0, 0].real * f[1, 1].real)
        assert np.allclose(curve.mean, rho2, atol=1e-10)

    def test_band_coherence_unit_interval_random(self):
        draws = synthetic_draws(seed=10, scale=0.5)
        curve = band_coherence(draws, 2, 3, us=np.linspace(0, 1, 4))
        assert np.all(curve.mean >= 0) and np.all(curve.mean <= 1)
        assert np.all(curve.upper95 <= 1.0 + 1e-12)

    def test_single_frequency_band_reduces_to_pointwise(self):
        draws = synthetic_draws(seed=11)
        om = draws.basis.freq_basis.points
        target = om[5]
        band = (target - 1e-6, target + 1e-6)
        curve = band_power(draws, 1, band=band, us=np.array([0.0, 0.5, 1.0]))
        for j, u in enumerate((0.0, 0.5, 1.0)):
            f = evaluate_spectrum_draw(draws, 0, [(target, u)])
            vals = [evaluate_spectrum_draw(draws, s, [(target, u)])[0, 0, 0].real
                    for s in range(draws.n_retained)]
            assert curve.mean[j] == pytest.approx(np.mean(vals), rel=1e-10)

    def test_band_measures_matches_individual_ops(self):
        draws = synthetic_draws(seed=12, scale=0.2)
        us = np.linspace(0, 1, 5)
        batch = band_measures(draws, us=us)
        assert np.allclose(batch[("hf", 2)].mean, band_power(draws, 2, us=us).mean)
        assert np.allclose(batch[("lfhf", 1)].mean, band_ratio(draws, 1, us=us).mean)
        assert np.allclose(batch[("cohhf", 1, 3)].mean,
                           band_coherence(draws, 1, 3, us=us).mean)


class TestDerivative:
    def test_central_difference_exact_for_lines(self):
        u = np.linspace(0, 1, 11)
        vals = 3.5 * u - 1.0
        d = central_difference(vals, u[1] - u[0])
        assert np.allclose(d, 3.5, atol=1e-12)

    def test_central_difference_constant_zero(self):
        d = central_difference(np.full(9, 2.2), 0.1)
        assert np.allclose(d, 0.0, atol=1e-12)

    def test_quadratic_interior_second_order(self):
        u = np.linspace(0, 1, 101)
        vals = u ** 2
        d = central_difference(vals, u[1] - u[0])
        assert np.max(np.abs(d[1:-1] - 2 * u[1:-1])) < 1e-10  # exact for quadratics inside

    def test_constant_coherence_derivative_zero(self):
        def builder(kind, key, s, k, rng):
            eta = np.zeros((s, k))
            eta[:, 0] = 0.3 if kind != "d" else 0.1
            return eta
        draws = synthetic_draws(eta_builder=builder)
        curve = band_coherence_derivative(draws, 1, 2, us=np.linspace(0, 1, 21))
        assert np.max(np.abs(curve.mean)) < 1e-9

    def test_grid_too_coarse_rejected(self):
        draws = synthetic_draws(seed=13)
        with pytest.raises(ValidationError):
            band_coherence_derivative(draws, 1, 2, us=np.linspace(0, 1, 4))

    def test_uneven_grid_rejected(self):
        draws = synthetic_draws(seed=14)
        with pytest.raises(ValidationError):
            band_coherence_derivative(draws, 1, 2, us=np.array([0, 0.1, 0.3, 0.6, 1.0]))


class TestAgainstFit:
    """Checks that need a real fitted chain (shared session fixture)."""

    def test_ma2_fit_band_curves_near_truth(self, ma2_fit_small, ma2_data_small):
        from condspec.simstudy import true_band_measures, coverage
        us = ma2_data_small.outcomes
        est = band_measures(ma2_fit_small, us=us)
        truth = true_band_measures(300, us)
        # posterior means of coherence measures recover rho(u)^2 within loose bounds
        for p, q in ((1, 2), (2, 3), (1, 3)):
            err = np.max(np.abs(est[("cohhf", p, q)].mean - truth[f"cohhf_{p}{q}"]))
            assert err < 0.15

    def test_ma2_fit_derivative_sign_pattern(self, ma2_fit_small):
        # d/du rho(u)^2 = 2 rho(u) (-0.25 pi sin(pi u)) < 0 on (0, 1)
        us = np.linspace(0, 1, 21)
        curve = band_coherence_derivative(ma2_fit_small, 1, 2, us=us)
        interior = slice(3, 18)
        assert np.mean(curve.mean[interior] < 0) > 0.8
        truth = 2 * (0.6 + 0.25 * np.cos(np.pi * us)) * (-0.25 * np.pi * np.sin(np.pi * us))
        inside = np.mean((curve.lower95 <= truth) & (truth <= curve.upper95))
        assert inside > 0.7

    def test_training_point_cache_consistency(self, ma2_fit_small):
        draws = ma2_fit_small
        om = draws.basis.freq_basis.points
        u = draws.outcomes
        f = evaluate_spectrum_draw(draws, draws.n_retained - 1, [(om[10], u[3])])
        row = draws.basis.Q[draws.basis.row_index(3, 10)]
        s = draws.n_retained - 1
        theta = {kl: row @ (draws.eta_r[kl][s] + 1j * draws.eta_i[kl][s]) for kl in draws.eta_r}
        psi = {k: np.exp(row @ draws.eta_d[k][s]) for k in draws.eta_d}
        ref = cs.whittle.spectra_from_components(theta, psi, 3)
        assert np.allclose(f[0], ref, atol=1e-10)
