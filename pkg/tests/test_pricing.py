import io
import math

import numpy as np
import pytest

from fixtures import MEIXNER_MARKET, meixner_model, two_poisson_model
from levybsde.errors import DomainError
from levybsde.models import (
    Atom,
    LevyModel,
    martingale_residual,
    risk_neutral_drift,
)
from levybsde.pricing import (
    MarketSpec,
    Payoff,
    check_martingale_condition,
    export_price_report,
    export_price_surface_csv,
    make_pricing_grid,
    price_mc,
    price_pide,
)
from levybsde.simulate import TimeGrid, terminal_states

# Exact reference prices for the desk market (alpha=0.5, beta=0, delta=1,
# S0=100, K=100, r=0.05, T=1): quadrature of the payoff against the
# closed-form time-T marginal density (parameters delta*T, mu*T, location
# fixed by the martingale identity), mpmath at 30 digits.  Note the density
# normalization is 2*alpha*pi*Gamma(2*delta); the transcription with
# alpha*pi*Gamma(2*delta) integrates to 2.
TRUE_CALL = 15.8277633596
TRUE_PUT = 10.9507058097

# Regression values generated once by price_mc at 10^6 paths (seed
# 20240517, eps=2e-3) and frozen; byte-stable across runs by the seeded
# chunked sampler contract.
GOLDEN_CALL = 15.805591818281854
GOLDEN_CALL_SE = 0.029563621858179987
GOLDEN_PUT = 10.940666982442735
GOLDEN_PUT_SE = 0.014943623933693034


@pytest.fixture(scope="module")
def market():
    base = meixner_model(MEIXNER_MARKET)
    model = base.with_drift(risk_neutral_drift(base))
    return MarketSpec(model, (100.0,), 0.05, 1.0)


class TestMartingaleCondition:
    def test_zero_model(self):
        model = LevyModel.from_atoms([], drift=(0.0,), n=1)
        assert check_martingale_condition(model) == pytest.approx([0.0])

    def test_unit_poisson_residual(self):
        lam = 1.3
        model = LevyModel.from_atoms([Atom((1.0,), lam)], drift=(0.0,), n=1)
        assert check_martingale_condition(model) == pytest.approx(
            [lam * (math.e - 2.0)]
        )

    def test_meixner_after_risk_neutral_drift(self, market):
        assert np.max(np.abs(check_martingale_condition(market.model))) < 1e-8

    def test_market_check_raises_without_drift(self):
        model = meixner_model(MEIXNER_MARKET)  # drift 0: not risk neutral
        spec = MarketSpec(model, (100.0,), 0.05, 1.0)
        with pytest.raises(DomainError):
            spec.check()

    def test_discounted_stock_martingale(self, market):
        xt = terminal_states(market.model, 1.0, 2e-3, 100_000, seed=31)
        disc = 100.0 * np.exp(xt[:, 0])  # e^{-rT} S_T = S0 e^{X_T}
        se = disc.std(ddof=1) / math.sqrt(len(disc))
        assert abs(disc.mean() - 100.0) <= 3.0 * se


class TestPriceMc:
    def test_constant_payoff_exact(self, market):
        price, se = price_mc(market, Payoff.constant(7.0), 5000, seed=1)
        assert price == pytest.approx(7.0 * math.exp(-0.05))
        assert se == 0.0

    def test_deep_itm_call_is_spot(self, market):
        price, se = price_mc(market, Payoff.call(0, 1e-9), 200_000, seed=3)
        assert abs(price - 100.0) <= 3.0 * se

    def test_golden_regression(self, market):
        price, se = price_mc(market, Payoff.call(0, 100.0), 1_000_000, seed=20240517)
        assert price == GOLDEN_CALL and se == GOLDEN_CALL_SE

    def test_put_call_parity(self, market):
        call, _ = price_mc(market, Payoff.call(0, 100.0), 300_000, seed=5)
        put, _ = price_mc(market, Payoff.put(0, 100.0), 300_000, seed=5)
        resid = call - put - (100.0 - 100.0 * math.exp(-0.05))
        assert abs(resid) < 0.005 * 100.0

    def test_strike_monotonicity(self, market):
        prices = [
            price_mc(market, Payoff.call(0, k), 100_000, seed=9)[0]
            for k in (80.0, 90.0, 100.0, 110.0, 120.0)
        ]
        assert all(a >= b for a, b in zip(prices, prices[1:]))

    def test_matches_exact_density_oracle(self, market):
        price, se = price_mc(market, Payoff.call(0, 100.0), 400_000, seed=13)
        # truncation keeps a small negative variance bias; 3 SE plus the
        # documented eps-linear bound covers it
        assert abs(price - TRUE_CALL) <= 3.0 * se + 0.08

    def test_basket_payoff_2d(self):
        model = two_poisson_model(0.3, 0.3, 0.1)
        model = model.with_drift(risk_neutral_drift(model))
        market2 = MarketSpec(model, (50.0, 60.0), 0.02, 1.0)
        price, se = price_mc(market2, Payoff.basket_call([0.5, 0.5], 55.0), 50_000, seed=2)
        assert price > 0
        deep, sed = price_mc(market2, Payoff.basket_call([0.5, 0.5], 1e-9), 100_000, seed=4)
        assert abs(deep - 55.0) <= 3.0 * sed


class TestPricePide:
    def test_constant_payoff_discount_curve(self, market):
        res = price_pide(
            market,
            Payoff.constant(4.0),
            space=make_pricing_grid(market, Payoff.constant(4.0), num=201),
            tgrid=TimeGrid(1.0, 32),
        )
        assert res.price == pytest.approx(4.0 * math.exp(-0.05), abs=1e-8)
        for t, _, v in res.value_surface():
            assert np.max(np.abs(v - 4.0 * math.exp(-0.05 * (1.0 - t)))) < 1e-8

    def test_call_against_exact_density_oracle(self, market):
        res = price_pide(market, Payoff.call(0, 100.0))
        assert abs(res.price - TRUE_CALL) / TRUE_CALL < 0.005

    def test_put_call_parity(self, market):
        call = price_pide(market, Payoff.call(0, 100.0))
        put = price_pide(market, Payoff.put(0, 100.0))
        resid = call.price - put.price - (100.0 - 100.0 * math.exp(-0.05))
        assert abs(resid) < 0.005 * 100.0

    def test_strike_ladder_monotone(self, market):
        prices = [
            price_pide(market, Payoff.call(0, k), num=401).price
            for k in (85.0, 100.0, 115.0)
        ]
        assert prices[0] >= prices[1] >= prices[2]

    def test_strike_snapped_to_node(self, market):
        payoff = Payoff.call(0, 117.0)
        grid = make_pricing_grid(market, payoff, num=401)
        x_kink = math.log(117.0 / 100.0) - 0.05
        offset = (x_kink - grid.lo[0]) / grid.h[0]
        assert abs(offset - round(offset)) < 1e-9

    @pytest.mark.slow
    def test_cross_agreement_with_mc(self, market):
        mc, se = price_mc(market, Payoff.call(0, 100.0), 1_000_000, seed=20240517)
        pide = price_pide(market, Payoff.call(0, 100.0))
        assert abs(pide.price - mc) / mc < 0.01


class TestReports:
    def test_price_report_deterministic(self, market):
        out1, out2 = io.StringIO(), io.StringIO()
        for out in (out1, out2):
            export_price_report(
                out, market, Payoff.call(0, 100.0), 15.5, 0.01, "mc", 7, {"paths": 10}
            )
        assert out1.getvalue() == out2.getvalue()
        assert '"model_hash"' in out1.getvalue()

    def test_surface_csv(self, market):
        res = price_pide(
            market,
            Payoff.call(0, 100.0),
            space=make_pricing_grid(market, Payoff.call(0, 100.0), num=101),
            tgrid=TimeGrid(1.0, 16),
        )
        buf = io.StringIO()
        export_price_surface_csv(res, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "t,S,V"
        assert len(lines) == 1 + 17 * res.solution.space.num[0]
