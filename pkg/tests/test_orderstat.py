import numpy as np
import pytest
from scipy.special import ndtr

from models import DrawScheme, NormalMixture
from orderstat import (
    BetaDrawBank, OrderStatKernel, a_coeff, beta_sample, component_mixture, mixture_cdf, mixture_pdf,
    mixture_quantile, threshold_below_prob, threshold_exceed_prob
)
from tests.conftest import small_economy

TWO_TYPES = NormalMixture([0.5, 1.0], 1.0, [0.5, 0.5])


def stratified_bank(n_draws=2000):
    return BetaDrawBank(n_draws, DrawScheme.STRATIFIED)


class TestMixture:
    def test_single_component_is_normal(self):
        mix = NormalMixture([0.3], 2.0, [1.0])
        x = np.linspace(-4, 4, 9)
        np.testing.assert_allclose(mixture_cdf(x, mix), ndtr((x - 0.3) / 2.0))

    def test_zero_weight_components_ignored(self):
        mix = NormalMixture([0.0, 50.0], 1.0, [1.0, 0.0])
        assert mixture_cdf(0.0, mix) == pytest.approx(0.5)

    def test_pdf_integrates_to_one(self):
        x = np.linspace(-10, 12, 20001)
        assert np.trapz(mixture_pdf(x, TWO_TYPES), x) == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("p", [1e-6, 0.01, 0.37, 0.5, 0.99, 1 - 1e-6])
    def test_quantile_inverts_cdf(self, p):
        assert mixture_cdf(mixture_quantile(p, TWO_TYPES), TWO_TYPES) == pytest.approx(p, abs=1e-9)

    def test_far_apart_components(self):
        mix = NormalMixture([-30.0, 30.0], 1.0, [0.5, 0.5])
        x = mixture_quantile(np.array([0.25, 0.75]), mix)
        np.testing.assert_allclose(mixture_cdf(x, mix), [0.25, 0.75], atol=1e-9)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, np.nan])
    def test_quantile_rejects_boundary(self, p):
        with pytest.raises(ValueError):
            mixture_quantile(p, TWO_TYPES)

    def test_component_mixture(self):
        cfg = small_economy(beta=2.0)
        mix = component_mixture(cfg.q, cfg)
        np.testing.assert_allclose(mix.means, [1.0, 2.0])
        assert mix.sd == cfg.sigma
        np.testing.assert_allclose(component_mixture([0.0, 1.0], cfg, beta=0.0).means, [0.0, 0.0])


class TestBetaDraws:
    def test_beta_sample_moments(self, rng):
        draws = beta_sample(2.0, 5.0, rng, size=100_000)
        assert draws.mean() == pytest.approx(2.0 / 7.0, abs=5e-3)
        assert np.all((draws > 0) & (draws < 1))

    def test_beta_sample_shapes_checked(self, rng):
        with pytest.raises(ValueError):
            beta_sample(0.0, 1.0, rng)

    def test_random_bank_needs_generator(self):
        with pytest.raises(ValueError):
            BetaDrawBank(10, DrawScheme.RANDOM)

    def test_bank_is_frozen(self, rng):
        bank = BetaDrawBank(50, DrawScheme.RANDOM, rng)
        first = bank.order_stats(2, 5).copy()
        np.testing.assert_array_equal(bank.order_stats(2, 5), first)
        np.testing.assert_array_equal(BetaDrawBank(50, DrawScheme.RANDOM, np.random.default_rng(2024)).uniforms,
                                      bank.uniforms)

    def test_bank_order_stats_are_monotone_in_rank(self):
        bank = stratified_bank(200)
        assert np.all(bank.order_stats(2, 6) <= bank.order_stats(3, 6))


class TestThresholdProbabilities:
    @pytest.mark.parametrize("kappa,n", [(1, 5), (3, 5), (5, 5), (7, 20)])
    def test_exchangeable_rank(self, kappa, n):
        mix = NormalMixture([0.4], 1.0, [1.0])
        assert a_coeff(kappa, n, 0, mix, bank=stratified_bank()) == pytest.approx(kappa / (n + 1), abs=1e-3)

    def test_matches_direct_simulation(self):
        rng = np.random.default_rng(99)
        reps, n, kappa = 200_000, 5, 3
        comp = rng.random((reps, n)) < 0.5
        x = np.where(comp, 1.0, 0.5) + rng.standard_normal((reps, n))
        threshold = np.sort(x, axis=1)[:, kappa - 1]
        v = 1.0 + rng.standard_normal(reps)
        direct = np.mean(v < threshold)
        assert a_coeff(kappa, n, 1, TWO_TYPES, bank=stratified_bank()) == pytest.approx(direct, abs=0.01)

    def test_fresh_draws(self, rng):
        mix = NormalMixture([0.0], 1.0, [1.0])
        assert a_coeff(2, 3, 0, mix, n_draws=20_000, rng=rng) == pytest.approx(0.5, abs=0.01)

    def test_rank_and_source_checked(self):
        with pytest.raises(ValueError):
            a_coeff(0, 3, 0, TWO_TYPES, bank=stratified_bank())
        with pytest.raises(ValueError, match="rng or bank"):
            a_coeff(1, 3, 0, TWO_TYPES)

    def test_rank_edges(self):
        bank = stratified_bank()
        assert threshold_below_prob(0, 4, 0, TWO_TYPES, bank=bank) == 0.0
        assert threshold_below_prob(5, 4, 0, TWO_TYPES, bank=bank) == 1.0
        assert threshold_exceed_prob(0, 4, 1, TWO_TYPES, bank=bank) == 1.0
        inner = threshold_below_prob(2, 4, 1, TWO_TYPES, bank=bank)
        assert inner + threshold_exceed_prob(2, 4, 1, TWO_TYPES, bank=bank) == pytest.approx(1.0)

    def test_larger_means_fall_below_less_often(self):
        bank = stratified_bank()
        low = a_coeff(3, 6, 0, TWO_TYPES, bank=bank)
        high = a_coeff(3, 6, 1, TWO_TYPES, bank=bank)
        assert high < low


class TestOrderStatKernel:
    def test_kernel_matches_a_coeff(self):
        bank = stratified_bank()
        kernel = OrderStatKernel(1.0, bank, DrawScheme.STRATIFIED)
        probs = kernel.below_prob(3, 6, TWO_TYPES)
        for m in range(2):
            assert probs[m] == pytest.approx(a_coeff(3, 6, m, TWO_TYPES, bank=bank), abs=1e-12)

    def test_edges_and_complement(self):
        kernel = OrderStatKernel(1.0, stratified_bank(), DrawScheme.STRATIFIED)
        np.testing.assert_array_equal(kernel.below_prob(0, 4, TWO_TYPES), [0.0, 0.0])
        np.testing.assert_array_equal(kernel.below_prob(5, 4, TWO_TYPES), [1.0, 1.0])
        np.testing.assert_allclose(kernel.exceed_prob(2, 4, TWO_TYPES), 1.0 - kernel.below_prob(2, 4, TWO_TYPES))

    @pytest.mark.parametrize("kappa,n", [(1, 3), (4, 9), (20, 40), (40, 40)])
    def test_quadrature_agrees_with_stratified(self, kappa, n):
        sampled = OrderStatKernel(1.0, stratified_bank(4000), DrawScheme.STRATIFIED)
        quad = OrderStatKernel(1.0, scheme=DrawScheme.QUADRATURE)
        np.testing.assert_allclose(quad.below_prob(kappa, n, TWO_TYPES),
                                   sampled.below_prob(kappa, n, TWO_TYPES), atol=2e-3)

    def test_sampling_schemes_need_bank(self):
        with pytest.raises(ValueError):
            OrderStatKernel(1.0, None, DrawScheme.RANDOM)

    def test_cache_is_reused_and_cleared(self):
        kernel = OrderStatKernel(1.0, stratified_bank(100), DrawScheme.STRATIFIED)
        first = kernel.below_prob(2, 5, TWO_TYPES)
        assert kernel.below_prob(2, 5, TWO_TYPES) is first
        kernel.clear()
        assert kernel.below_prob(2, 5, TWO_TYPES) is not first
