import io
import math

import numpy as np
import pytest

from fixtures import (
    MEIXNER_STD,
    meixner_copula_model,
    meixner_model,
    poisson_copula_model,
    two_poisson_model,
)
from levybsde.errors import DomainError
from levybsde.models import (
    Atom,
    LevyModel,
    compensator_mean,
    moment,
)
from levybsde.orthobasis import build_basis
from levybsde.simulate import (
    TimeGrid,
    dump_paths_csv,
    jump_sum_representation_check,
    power_jump_sum,
    simulate_path,
    simulate_paths,
    stock_paths,
    terminal_states,
    teugels_increments,
    teugels_increments_batch,
    truncation_variance_proxy,
)


def se(x):
    return np.std(x, ddof=1) / math.sqrt(len(x))


class TestSimulatePath:
    def test_zero_measure_pure_drift(self):
        model = LevyModel.from_atoms([], drift=(0.4, -0.2), n=2)
        path = simulate_path(model, T=2.0, eps=1e-3, seed=5)
        assert path.times.size == 0
        assert path.state_at(1.5) == pytest.approx([0.6, -0.3])

    def test_atomic_jump_count_mean(self):
        model = poisson_copula_model()  # intensity 0.25, T=4 -> mean 1.0
        counts = np.array(
            [simulate_path(model, 4.0, 1e-3, seed=11, index=i).times.size
             for i in range(20000)],
            dtype=float,
        )
        assert abs(counts.mean() - 1.0) <= 3.0 * se(counts)

    def test_eps_validation(self):
        with pytest.raises(ValueError):
            simulate_path(meixner_model(), 1.0, eps=0.0, seed=1)

    def test_reproducible_and_index_independent(self):
        model = meixner_model()
        a = simulate_path(model, 1.0, 0.01, seed=42, index=3)
        b = simulate_path(model, 1.0, 0.01, seed=42, index=3)
        c = simulate_path(model, 1.0, 0.01, seed=42, index=4)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.jumps, b.jumps)
        assert not np.array_equal(a.times, c.times)

    def test_meixner_mean_matches_compensator(self):
        model = meixner_model(MEIXNER_STD)
        xt = terminal_states(model, T=1.0, eps=0.05, n_paths=100_000, seed=7)
        target = compensator_mean(model)[0]
        assert abs(xt[:, 0].mean() - target) <= 3.0 * se(xt[:, 0])

    def test_state_at_conventions(self):
        model = two_poisson_model()
        path = simulate_path(model, 3.0, 1e-3, seed=9)
        assert path.state_at(0.0) == pytest.approx([0.0, 0.0])
        if path.times.size:
            t = path.times[0] * 0.5
            assert path.state_at(t) == pytest.approx(path.effective_drift * t)
        with pytest.raises(DomainError):
            path.state_at(3.5)

    def test_jumps_respect_cutoff(self):
        model = meixner_model()
        path = simulate_path(model, 1.0, eps=0.05, seed=3)
        assert np.all(np.abs(path.jumps) >= 0.05 * (1 - 1e-9))


class TestPowerJumpSum:
    def test_no_jumps(self):
        model = LevyModel.from_atoms([], drift=(0.0,), n=1)
        path = simulate_path(model, 1.0, 1e-3, seed=0)
        assert power_jump_sum(path, (2,), 1.0) == 0.0

    def test_atomic_counts(self):
        model = poisson_copula_model()
        path = simulate_path(model, 8.0, 1e-3, seed=21)
        k = path.times.size
        for p in [(1, 0), (2, 3), (1, 1)]:
            assert power_jump_sum(path, p, 8.0) == pytest.approx(k)

    def test_compensated_mean_matches_moment(self):
        model = meixner_model()
        m2 = moment(model, (2,))
        sums = np.array(
            [
                power_jump_sum(simulate_path(model, 1.0, 0.01, seed=13, index=i), (2,), 1.0)
                for i in range(4000)
            ]
        )
        assert abs(sums.mean() - m2) <= 3.0 * se(sums)

    def test_monotone_for_even_powers(self):
        model = meixner_model()
        path = simulate_path(model, 1.0, 0.02, seed=2)
        vals = [power_jump_sum(path, (2,), t) for t in np.linspace(0, 1, 11)]
        assert np.all(np.diff(vals) >= 0)


class TestTeugelsIncrements:
    def test_poisson_increments_by_hand(self):
        lam = 1.0
        model = LevyModel.from_atoms([Atom((1.0,), lam)], n=1)
        basis = build_basis(model, 3)
        assert basis.kept_indices == [(1,)]
        grid = TimeGrid(T=2.0, steps=4)
        path = simulate_path(model, 2.0, 1e-3, seed=17)
        inc = teugels_increments(path, basis, grid, model, orthonormal=False)
        counts = np.histogram(path.times, bins=grid.times)[0]
        # H^(1) = X(t) - t*E[X(1)]; with a=0 the mean rate is zero and
        # X(t) = N(t) - lam*t, so each increment is dN - lam*dt
        assert inc[:, 0] == pytest.approx(counts - lam * grid.dt)

    def test_martingale_mean_and_bracket(self):
        model = meixner_model()
        basis = build_basis(model, 2)
        grid = TimeGrid(T=1.0, steps=8)
        paths = simulate_paths(model, 1.0, 0.02, n_paths=6000, seed=23)
        incs = teugels_increments_batch(paths, basis, grid, model)  # (M, N, P)
        flat = incs.reshape(-1, incs.shape[2])
        for j in range(flat.shape[1]):
            assert abs(flat[:, j].mean()) <= 3.0 * se(flat[:, j])
        for a in range(flat.shape[1]):
            for b in range(a, flat.shape[1]):
                prod = flat[:, a] * flat[:, b]
                target = grid.dt if a == b else 0.0
                assert abs(prod.mean() - target) <= 3.0 * se(prod)

    def test_telescoping_to_horizon(self):
        model = two_poisson_model()
        basis = build_basis(model, 2)
        grid_fine = TimeGrid(T=1.0, steps=16)
        grid_one = TimeGrid(T=1.0, steps=1)
        path = simulate_path(model, 1.0, 1e-3, seed=31)
        fine = teugels_increments(path, basis, grid_fine, model).sum(axis=0)
        once = teugels_increments(path, basis, grid_one, model)[0]
        assert fine == pytest.approx(once, abs=1e-12)


class TestStockPaths:
    def test_zero_process(self):
        model = LevyModel.from_atoms([], drift=(0.0,), n=1)
        grid = TimeGrid(T=1.0, steps=4)
        path = simulate_path(model, 1.0, 1e-3, seed=1)
        s = stock_paths(model, [100.0], 0.05, path, grid)
        assert s[:, 0] == pytest.approx(100.0 * np.exp(0.05 * grid.times))

    def test_positive_and_initial(self):
        model = two_poisson_model()
        grid = TimeGrid(T=1.0, steps=8)
        path = simulate_path(model, 1.0, 1e-3, seed=2)
        s = stock_paths(model, [50.0, 80.0], 0.01, path, grid)
        assert s[0] == pytest.approx([50.0, 80.0])
        assert np.all(s > 0)


class TestTerminalStates:
    def test_determinism_across_calls(self):
        model = meixner_model()
        a = terminal_states(model, 1.0, 0.05, 70_000, seed=3)  # crosses a chunk
        b = terminal_states(model, 1.0, 0.05, 70_000, seed=3)
        assert np.array_equal(a, b)
        assert not np.array_equal(a[:100], terminal_states(model, 1.0, 0.05, 100, seed=4))

    def test_atomic_moments(self):
        model = two_poisson_model()
        xt = terminal_states(model, 2.0, 1e-3, 40_000, seed=5)
        target = 2.0 * compensator_mean(model)
        for d in range(2):
            assert abs(xt[:, d].mean() - target[d]) <= 3.0 * se(xt[:, d])

    def test_copula_sampler_covariance(self):
        # validates the closed-form conditional sampling against the
        # quadrature moment m_(1,1): Cov(X1(T), X2(T)) = T * m11
        model = meixner_copula_model(mu=1.0, eta=1.0)
        T = 1.0
        xt = terminal_states(model, T, 0.02, 30_000, seed=11)
        m11 = moment(model, (1, 1))
        prod = (xt[:, 0] - xt[:, 0].mean()) * (xt[:, 1] - xt[:, 1].mean())
        assert abs(prod.mean() - T * m11) <= 3.0 * se(prod)

    def test_copula_sampler_means(self):
        model = meixner_copula_model(mu=1.0, eta=1.0)
        xt = terminal_states(model, 1.0, 0.02, 30_000, seed=13)
        target = compensator_mean(model)
        for d in range(2):
            assert abs(xt[:, d].mean() - target[d]) <= 3.5 * se(xt[:, d])


class TestTruncation:
    def test_proxy_positive_and_shrinks(self):
        model = meixner_model()
        p1 = truncation_variance_proxy(model, 0.05)
        p2 = truncation_variance_proxy(model, 0.025)
        assert 0 < p2 < p1

    def test_mean_shift_within_bound(self):
        model = meixner_model(MEIXNER_STD)
        a = terminal_states(model, 1.0, 0.05, 50_000, seed=17)[:, 0]
        b = terminal_states(model, 1.0, 0.025, 50_000, seed=18)[:, 0]
        bound = truncation_variance_proxy(model, 0.05)
        mc = 3.0 * (se(a) + se(b))
        assert abs(a.mean() - b.mean()) <= bound + mc


class TestRepresentationCheck:
    def test_zero_function(self):
        model = two_poisson_model()
        basis = build_basis(model, 2)
        grid = TimeGrid(T=1.0, steps=8)
        paths = simulate_paths(model, 1.0, 1e-3, 50, seed=19)
        res = jump_sum_representation_check(
            paths, lambda y: np.zeros(len(y)), basis, grid, model
        )
        assert res == pytest.approx(0.0, abs=1e-12)

    def test_polynomial_h_exact_on_atoms(self):
        # h = orthogonal polynomial of a kept index: the identity collapses
        # to a single martingale term and the residual is pure roundoff
        from levybsde.orthobasis import evaluate_polynomial

        model = two_poisson_model()
        basis = build_basis(model, 2)
        grid = TimeGrid(T=1.0, steps=8)
        paths = simulate_paths(model, 1.0, 1e-3, 200, seed=29)
        pstar = basis.kept_indices[-1]
        res = jump_sum_representation_check(
            paths, lambda y: evaluate_polynomial(basis, pstar, y), basis, grid, model
        )
        assert res < 1e-10

    @pytest.mark.slow
    def test_capped_quadratic_decreasing_in_degree(self):
        # skewed marginal so odd-degree elements carry nonzero loadings
        from fixtures import MEIXNER_SKEW

        model = meixner_model(MEIXNER_SKEW)
        grid = TimeGrid(T=1.0, steps=20)
        paths = simulate_paths(model, 1.0, 0.02, 400, seed=37)

        def h(y):
            y = y[:, 0]
            return np.minimum(y * y, np.abs(y))

        residuals = []
        for D in (1, 2, 3, 4):
            basis = build_basis(model, D)
            residuals.append(
                jump_sum_representation_check(paths, h, basis, grid, model)
            )
        assert residuals[-1] < residuals[0]
        assert sorted(residuals, reverse=True) == residuals


class TestDump:
    def test_csv_deterministic(self):
        model = two_poisson_model()
        paths = simulate_paths(model, 1.0, 1e-3, 3, seed=41)
        out1, out2 = io.StringIO(), io.StringIO()
        dump_paths_csv(paths, out1, seed=41, eps=1e-3)
        dump_paths_csv(paths, out2, seed=41, eps=1e-3)
        assert out1.getvalue() == out2.getvalue()
        assert out1.getvalue().startswith("# seed=41 eps=0.001\n")
