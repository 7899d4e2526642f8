import numpy as np
import pytest

import levypricer as lp
from levypricer.monte_carlo import (MCConfig, RegressionBasis, estimate_premium_mc,
                                    premium_sweep, price_american_ls,
                                    price_european_mc)
from levypricer.pide import Grid
from oracles import bs_put, crr_american_put

SPOT = 100.0


class TestEuropean:
    def test_black_scholes(self, bs_model, put_1d):
        est = price_european_mc(bs_model, put_1d, 0.0, [SPOT], 1.0, 1_000_000, seed=41)
        exact = bs_put(SPOT, 100.0, 1.0, 0.05, 0.2)
        assert abs(est.mean - exact) < 3 * est.stderr
        assert est.stderr < 0.02

    def test_constant_payoff_exact(self, bs_model):
        const = lp.Payoff.constant(3.0, 1)
        est = price_european_mc(bs_model, const, 0.0, [SPOT], 2.0, 1000, seed=1)
        assert est.mean == pytest.approx(3.0 * np.exp(-0.05 * 2.0), rel=1e-14)
        assert est.stderr < 1e-12  # all samples identical up to summation round-off

    def test_matches_pide_for_merton(self, merton_model, put_1d, merton_solves):
        _, _, _, eur = merton_solves
        est = price_european_mc(merton_model, put_1d, 0.0, [SPOT], 1.0, 400_000, seed=42)
        assert abs(est.mean - eur.value_at_spot()) < 3 * est.stderr + 1e-2

    def test_estimate_fields(self, bs_model, put_1d):
        est = price_european_mc(bs_model, put_1d, 0.0, [SPOT], 1.0, 5000, seed=4)
        assert est.n_paths == 5000 and est.seed == 4
        assert np.isfinite(est.mean) and est.stderr >= 0


class TestLongstaffSchwartz:
    def test_binomial_oracle(self, bs_model, put_1d):
        est = price_american_ls(bs_model, put_1d, 0.0, [SPOT], 1.0, 50, 100_000,
                                RegressionBasis(), seed=43)
        crr = crr_american_put(SPOT, 100.0, 1.0, 0.05, 0.2, 5000)
        assert abs(est.mean - crr) < 0.01 * crr + 3 * est.stderr

    def test_zero_rates_reduce_to_european(self, zero_rate_model, put_1d):
        amer = price_american_ls(zero_rate_model, put_1d, 0.0, [SPOT], 1.0, 20,
                                 50_000, RegressionBasis(), seed=44)
        eur = price_european_mc(zero_rate_model, put_1d, 0.0, [SPOT], 1.0,
                                50_000, seed=45)
        combined = np.hypot(amer.stderr, eur.stderr)
        assert abs(amer.mean - eur.mean) < 3 * combined

    def test_ordering_dominates_european(self, merton_model, put_1d):
        amer = price_american_ls(merton_model, put_1d, 0.0, [SPOT], 1.0, 25,
                                 50_000, RegressionBasis(), seed=46)
        eur = price_european_mc(merton_model, put_1d, 0.0, [SPOT], 1.0,
                                50_000, seed=47)
        assert amer.mean >= eur.mean - 3 * np.hypot(amer.stderr, eur.stderr)

    def test_low_bias_vs_pide(self, merton_solves, merton_model, put_1d):
        _, _, amer_pide, _ = merton_solves
        est = price_american_ls(merton_model, put_1d, 0.0, [SPOT], 1.0, 50,
                                50_000, RegressionBasis(), seed=48)
        assert est.mean <= amer_pide.value_at_spot() + 3 * est.stderr

    def test_needs_enough_dates(self, bs_model, put_1d):
        with pytest.raises(ValueError):
            price_american_ls(bs_model, put_1d, 0.0, [SPOT], 1.0, 5, 1000,
                              RegressionBasis(), seed=0)

    def test_basis_shrinks_on_thin_itm_set(self, bs_model, caplog):
        # far OTM put: almost no ITM paths, the degree must shrink without
        # crashing and the estimate stays finite
        po = lp.Payoff.min_put(40.0, 1)
        import logging
        with caplog.at_level(logging.WARNING, logger="levypricer.monte_carlo"):
            est = price_american_ls(bs_model, po, 0.0, [SPOT], 1.0, 12, 512,
                                    RegressionBasis(degree=3), seed=49)
        assert np.isfinite(est.mean) and est.mean >= 0

    def test_deep_itm_immediate_exercise_region(self, bs_model):
        po = lp.Payoff.min_put(200.0, 1)
        est = price_american_ls(bs_model, po, 0.0, [SPOT], 1.0, 25, 20_000,
                                RegressionBasis(), seed=50)
        # deep ITM American put is worth at least intrinsic
        assert est.mean >= 100.0 - 3 * est.stderr - 1.0

    def test_basis_design_columns(self):
        basis = RegressionBasis(degree=3)
        assert basis.n_columns(1) == 5   # 1, z, z^2, z^3, psi
        assert basis.n_columns(2) == 11  # 10 monomials + psi
        z = np.random.default_rng(0).normal(size=(50, 2))
        design = basis.design(z, np.abs(z[:, 0]), np.zeros(2))
        assert design.shape == (50, 11)


class TestPremiumEstimator:
    def test_zero_for_zero_rates(self, zero_rate_solves, zero_rate_model, put_1d):
        grid, _, amer, _ = zero_rate_solves
        est = estimate_premium_mc(zero_rate_model, put_1d, amer, 0.0, [SPOT], 1.0,
                                  20_000, grid.n_time, seed=51)
        assert est.mean == 0.0 and est.stderr == 0.0

    def test_bs_premium_matches_oracles(self, bs_solves, bs_model, put_1d):
        grid, _, amer, _ = bs_solves
        est = estimate_premium_mc(bs_model, put_1d, amer, 0.0, [SPOT], 1.0,
                                  100_000, grid.n_time, seed=52)
        crr = crr_american_put(SPOT, 100.0, 1.0, 0.05, 0.2, 5000)
        exact_eur = bs_put(SPOT, 100.0, 1.0, 0.05, 0.2)
        target = crr - exact_eur
        assert abs(est.mean - target) < max(0.005 * crr, 3 * est.stderr)

    def test_integrand_nonnegative_on_exercise_set(self, merton_solves, merton_model,
                                                   put_1d):
        # Psi^- - L_I u >= 0 on the sampled exercise region
        grid, op, amer, _ = merton_solves
        k = grid.n_time // 2
        mask = amer.exercise_set[k]
        assert mask.any()
        prices = np.exp(grid.axes[0][mask])
        psim = put_1d.psi_minus(prices[:, None], merton_model.rates,
                                merton_model.gaussian)
        jf = amer.jump_field[k][mask]
        assert (psim - jf).min() > -1e-3

    def test_time_grid_must_match(self, bs_solves, bs_model, put_1d):
        grid, _, amer, _ = bs_solves
        with pytest.raises(ValueError):
            estimate_premium_mc(bs_model, put_1d, amer, 0.0, [SPOT], 1.0,
                                1000, grid.n_time + 1, seed=0)

    def test_grid_coverage_guard(self, bs_model, put_1d):
        # deliberately narrow lattice: most paths leave it
        grid = Grid(dim=1, T=1.0, n_space=51, n_time=20,
                    z_min=[np.log(SPOT) - 0.05], z_max=[np.log(SPOT) + 0.05],
                    z_center=[np.log(SPOT)])
        op = lp.assemble(bs_model, grid)
        amer = lp.solve_american_penalty(bs_model, put_1d, grid, op)
        with pytest.raises(lp.GridCoverageTooSmall):
            estimate_premium_mc(bs_model, put_1d, amer, 0.0, [SPOT], 1.0,
                                5000, 20, seed=53)

    def test_sweep_tolerance_keys(self, bs_solves, bs_model, put_1d):
        grid, _, amer, _ = bs_solves
        out = premium_sweep(bs_model, put_1d, amer, 0.0, [SPOT], 1.0, 10_000,
                            seed=54, exercise_tols=(1e-5, 1e-6))
        assert set(out) == {1e-5, 1e-6, "exit_fraction"}
        assert out[1e-5].mean >= out[1e-6].mean - 1e-12  # wider band, larger set


class TestDeterminism:
    def test_european_thread_invariance(self, merton_model, put_1d):
        a = price_european_mc(merton_model, put_1d, 0.0, [SPOT], 1.0, 64_000,
                              seed=55, n_threads=1)
        b = price_european_mc(merton_model, put_1d, 0.0, [SPOT], 1.0, 64_000,
                              seed=55, n_threads=4)
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_lsmc_thread_invariance(self, bs_model, put_1d):
        kw = dict(s=0.0, x=[SPOT], T=1.0, n_steps=15, n_paths=30_000,
                  basis=RegressionBasis(), seed=56)
        a = price_american_ls(bs_model, put_1d, n_threads=1, **kw)
        b = price_american_ls(bs_model, put_1d, n_threads=3, **kw)
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_premium_thread_invariance(self, bs_solves, bs_model, put_1d):
        grid, _, amer, _ = bs_solves
        kw = dict(n_paths=20_000, n_steps=grid.n_time, seed=57)
        a = estimate_premium_mc(bs_model, put_1d, amer, 0.0, [SPOT], 1.0,
                                n_threads=1, **kw)
        b = estimate_premium_mc(bs_model, put_1d, amer, 0.0, [SPOT], 1.0,
                                n_threads=4, **kw)
        assert a.mean == b.mean and a.stderr == b.stderr


def test_mc_config_roundtrip():
    cfg = MCConfig(n_paths=5000, n_steps=25, seed=99, basis_degree=2)
    again = MCConfig.from_dict(cfg.to_dict())
    assert (again.n_paths, again.n_steps, again.seed, again.basis_degree) == \
        (5000, 25, 99, 2)
