import math

import numpy as np
import pytest

from fixtures import (
    MEIXNER_SKEW,
    MEIXNER_STD,
    meixner_model,
    poisson_copula_model,
    two_poisson_model,
)
from levybsde.errors import CflError, DegenerateBasisError
from levybsde.models import compensator_mean
from levybsde.orthobasis import build_basis, degree1_inverse
from levybsde.pdie import (
    DriverFunction,
    GridSolution,
    SpaceGrid,
    clark_ocone_coefficients,
    solve_linear_pdie,
    solve_nonlinear_pdie,
    theta1,
)
from levybsde.simulate import TimeGrid, terminal_states


def grid_1d(lo=-8.0, hi=8.0, num=241):
    return SpaceGrid((lo,), (hi,), (num,))


class TestLinearSolver:
    def test_constant_terminal(self):
        model = meixner_model()
        sol = solve_linear_pdie(
            model, lambda x: np.full(x.shape[:-1], 7.0), grid_1d(), TimeGrid(0.5, 40)
        )
        assert np.max(np.abs(sol.values - 7.0)) < 1e-10

    def test_affine_terminal_1d(self):
        # theta(t, x) = x + a~ (T - t); integral term vanishes on affine
        model = meixner_model(MEIXNER_SKEW, drift=(0.3,))
        at = compensator_mean(model)[0]
        T = 0.5
        tg = TimeGrid(T, 50)
        sol = solve_linear_pdie(model, lambda x: x[..., 0], grid_1d(), tg)
        xs = sol.space.meshgrid()[..., 0]
        for j, t in enumerate(tg.times):
            expect = xs + at * (T - t)
            assert np.max(np.abs(sol.values[j][..., 0] - expect)) < 1e-8

    def test_affine_terminal_2d_atomic(self):
        model = two_poisson_model()
        at = compensator_mean(model)
        space = SpaceGrid((-4.0, -4.0), (6.0, 6.0), (21, 21))
        tg = TimeGrid(1.0, 20)
        sol = solve_linear_pdie(model, lambda x: x[..., 0] + x[..., 1], space, tg)
        xs = space.meshgrid()
        for j, t in enumerate(tg.times):
            expect = xs[..., 0] + xs[..., 1] + (at[0] + at[1]) * (1.0 - t)
            assert np.max(np.abs(sol.values[j][..., 0] - expect)) < 1e-8

    def test_cfl_rejected_with_suggestion(self):
        model = meixner_model()
        with pytest.raises(CflError) as err:
            solve_linear_pdie(
                model, lambda x: x[..., 0], grid_1d(num=401), TimeGrid(1.0, 4)
            )
        assert err.value.suggested_dt is not None
        assert 0 < err.value.suggested_dt < 0.25

    @pytest.mark.slow
    def test_feynman_kac_meixner(self):
        # theta(0, x0) vs Monte-Carlo mean of g(X(T)); softplus terminal
        model = meixner_model(MEIXNER_SKEW)
        T = 0.5
        x0 = 0.3

        def g(x):
            return np.logaddexp(0.0, x[..., 0])

        sol = solve_linear_pdie(model, g, grid_1d(-10, 10, 401), TimeGrid(T, 64))
        value = float(sol.interp_slice(0, np.array([x0]), k=0))
        xt = terminal_states(model, T, 0.005, 100_000, seed=101)
        payoff = np.logaddexp(0.0, x0 + xt[:, 0])
        mc = payoff.mean()
        tol = max(0.01 * abs(mc), 3.0 * payoff.std(ddof=1) / math.sqrt(len(payoff)))
        assert abs(value - mc) <= tol

    def test_feynman_kac_atomic_2d(self):
        model = poisson_copula_model()  # atom (1,1) intensity 0.25
        T = 1.0
        x0 = np.array([0.25, -0.25])  # grid node

        def g(x):
            return np.tanh(x[..., 0] + 0.5 * x[..., 1])

        space = SpaceGrid((-4.0, -4.0), (8.0, 8.0), (97, 97))
        sol = solve_linear_pdie(model, g, space, TimeGrid(T, 100))
        value = float(sol.interp_slice(0, x0, k=0))
        # exact oracle: X(T) = x0 + a (T) + k * (1,1), k ~ Poisson(c T)
        a = np.array(model.drift)
        c = model.atoms[0].intensity
        from scipy.stats import poisson as poisson_dist

        ks = np.arange(0, 60)
        weights = poisson_dist.pmf(ks, c * T)
        pts = x0[None, :] + a[None, :] * T + ks[:, None] * 1.0
        oracle = float(np.sum(weights * np.tanh(pts[:, 0] + 0.5 * pts[:, 1])))
        assert value == pytest.approx(oracle, abs=5e-3)

    @pytest.mark.slow
    def test_grid_convergence_order(self):
        model = meixner_model(MEIXNER_STD)
        T = 0.25

        def g(x):
            return np.tanh(x[..., 0])

        ref = solve_linear_pdie(model, g, grid_1d(-9, 9, 1153), TimeGrid(T, 128))
        x_probe = np.array([[0.4]])
        truth = float(ref.interp_slice(0, x_probe, k=0))
        errs = []
        for num, steps in [(145, 16), (289, 32)]:
            sol = solve_linear_pdie(model, g, grid_1d(-9, 9, num), TimeGrid(T, steps))
            errs.append(abs(float(sol.interp_slice(0, x_probe, k=0)) - truth))
        assert errs[0] / errs[1] >= 1.7


class TestTheta1:
    def build_quadratic_solution(self):
        model = two_poisson_model()
        space = SpaceGrid((-3.0, -3.0), (3.0, 3.0), (25, 25))
        tg = TimeGrid(1.0, 2)
        vals = np.empty((3,) + space.shape + (1,))
        xs = space.meshgrid()
        vals[:] = (xs[..., 0] ** 2)[None, ..., None]
        return GridSolution(space=space, tgrid=tg, values=vals, model=model)

    def test_affine_gives_zero(self):
        model = meixner_model()
        space = grid_1d(-2, 2, 41)
        tg = TimeGrid(1.0, 2)
        xs = space.meshgrid()
        vals = np.tile((2.0 * xs[..., 0] + 1.0)[None, ..., None], (3, 1, 1))
        sol = GridSolution(space=space, tgrid=tg, values=vals, model=model)
        assert theta1(sol, 0, 0.0, np.array([0.3]), np.array([0.9])) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_quadratic_exact_step(self):
        sol = self.build_quadratic_solution()
        h = sol.space.h[0]
        x = np.array([0.0, 0.0])
        val = theta1(sol, 0, 0.0, x, np.array([h, 0.0]))
        assert val == pytest.approx(h * h, rel=1e-10)

    def test_zero_offset(self):
        sol = self.build_quadratic_solution()
        assert theta1(sol, 0, 0.0, np.array([0.1, 0.2]), np.zeros(2)) == 0.0


class TestClarkOconeCoefficients:
    def test_constant_solution_all_zero(self):
        model = two_poisson_model()
        basis = build_basis(model, 2)
        space = SpaceGrid((-3.0, -3.0), (3.0, 3.0), (25, 25))
        tg = TimeGrid(1.0, 2)
        vals = np.full((3,) + space.shape + (1,), 4.2)
        sol = GridSolution(space=space, tgrid=tg, values=vals, model=model)
        z = clark_ocone_coefficients(sol, basis, k=0, t_index=0, x=np.array([0.0, 0.0]))
        for p, v in z.items():
            assert v == pytest.approx(0.0, abs=1e-12)

    def test_affine_solution_gradient_rule(self):
        # z^p = 0 for |p| >= 2; degree-1 loadings are ctilde^T grad
        model = two_poisson_model()
        basis = build_basis(model, 2)
        space = SpaceGrid((-3.0, -3.0), (3.0, 3.0), (25, 25))
        tg = TimeGrid(1.0, 2)
        xs = space.meshgrid()
        grad = np.array([0.7, -0.4])
        vals = np.tile(
            (grad[0] * xs[..., 0] + grad[1] * xs[..., 1])[None, ..., None], (3, 1, 1, 1)
        )
        sol = GridSolution(space=space, tgrid=tg, values=vals, model=model)
        z = clark_ocone_coefficients(sol, basis, k=0, t_index=1, x=np.array([0.4, 0.2]))
        ctilde = degree1_inverse(basis)
        for p, v in z.items():
            if sum(p) >= 2:
                assert v == pytest.approx(0.0, abs=1e-10)
        assert z[(1, 0)] == pytest.approx(float(ctilde[:, 0] @ grad), abs=1e-10)
        assert z[(0, 1)] == pytest.approx(float(ctilde[:, 1] @ grad), abs=1e-10)

    def test_atomic_hand_evaluation(self):
        # quadratic field on the 3-atom model: loadings are one-term sums
        # over atoms plus the degree-1 gradient correction
        model = two_poisson_model(0.6, 0.4, 0.3)
        basis = build_basis(model, 2)
        space = SpaceGrid((-3.0, -3.0), (3.0, 3.0), (49, 49))
        tg = TimeGrid(1.0, 2)
        xs = space.meshgrid()
        vals = np.tile((xs[..., 0] ** 2)[None, ..., None], (3, 1, 1, 1))
        sol = GridSolution(space=space, tgrid=tg, values=vals, model=model)
        x = np.array([0.25, -0.5])  # on-grid node (h = 0.125)
        z = clark_ocone_coefficients(sol, basis, k=0, t_index=0, x=x)
        from levybsde.orthobasis import evaluate_polynomial

        ctilde = degree1_inverse(basis)
        grad = np.array([2.0 * x[0], 0.0])
        xs_a, cs_a = model.atom_arrays()
        for p, got in z.items():
            expect = 0.0
            for xa, ca in zip(xs_a, cs_a):
                t1 = (x[0] + xa[0]) ** 2 - x[0] ** 2 - 2.0 * x[0] * xa[0]
                expect += ca * t1 * float(evaluate_polynomial(basis, p, xa[None, :])[0])
            if sum(p) == 1:
                j = p.index(1)
                expect += float(ctilde[:, j] @ grad)
            assert got == pytest.approx(expect, abs=1e-9)

    def test_degenerate_degree1_raises(self):
        model = poisson_copula_model()
        basis = build_basis(model, 2)
        space = SpaceGrid((-3.0, -3.0), (3.0, 3.0), (25, 25))
        tg = TimeGrid(1.0, 2)
        xs = space.meshgrid()
        vals = np.tile((xs[..., 0] ** 2)[None, ..., None], (3, 1, 1, 1))
        sol = GridSolution(space=space, tgrid=tg, values=vals, model=model)
        with pytest.raises(DegenerateBasisError):
            clark_ocone_coefficients(sol, basis, k=0, t_index=0, x=np.zeros(2))


class TestNonlinearSolver:
    def test_zero_driver_matches_linear_bitwise(self):
        model = meixner_model()
        space = grid_1d(-6, 6, 121)
        tg = TimeGrid(0.5, 32)
        g = lambda x: np.tanh(x[..., 0])
        lin = solve_linear_pdie(model, g, space, tg)
        zero = DriverFunction(
            fn=lambda t, y, z: np.zeros_like(y), lipschitz=0.0, needs_z=False
        )
        non = solve_nonlinear_pdie(model, g, zero, space, tg)
        assert np.array_equal(lin.values, non.values)

    def test_linear_driver_exponential_growth(self):
        model = meixner_model()
        r, c, T = 0.1, 2.0, 1.0
        tg = TimeGrid(T, 64)
        drv = DriverFunction(fn=lambda t, y, z: r * y, lipschitz=r, needs_z=False)
        sol = solve_nonlinear_pdie(
            model, lambda x: np.full(x.shape[:-1], c), drv, grid_1d(), tg
        )
        for j, t in enumerate(tg.times):
            expect = c * math.exp(r * (T - t))
            assert np.max(np.abs(sol.values[j] - expect)) < 1e-3 * c

    def test_reduced_recursion_oracle_2d(self):
        # common jumps collapse the 2-D equation onto s = x1 + x2; an
        # independently coded 1-D IMEX recursion must match to 1e-8 on the
        # block shielded from boundary-stencil effects (jump transport only
        # carries information down the diagonal, with one kernel hop per
        # step, so ten hops of shielding suppress face terms below 1e-9)
        model = poisson_copula_model(0.5, 0.5, 1.0, 1.0)
        c = model.atoms[0].intensity
        assert c == pytest.approx(0.5)  # equals lambda: compensated exactly
        at = compensator_mean(model)
        assert at == pytest.approx([0.0, 0.0])
        h = 0.25
        space = SpaceGrid((-8.0, -8.0), (8.0, 8.0), (65, 65))
        T, steps = 1.0, 25
        tg = TimeGrid(T, steps)

        def G(s):
            return np.tanh(s + 7.0)  # steep inside the shielded block

        drv = DriverFunction(
            fn=lambda t, y, z: 0.2 * np.sin(y), lipschitz=0.2, needs_z=False
        )
        sol = solve_nonlinear_pdie(
            model, lambda x: G(x[..., 0] + x[..., 1]), drv, space, tg
        )

        # --- 1-D oracle on the diagonal state s ---
        s_nodes = np.arange(-16.0, 16.0 + h / 2, h)
        theta = G(s_nodes)
        dt = tg.dt
        a_s = -2.0 * c  # effective drift: a~ minus the kernel first moment
        shift = int(round(2.0 / h))

        def pad_lin(v, before, after):
            left = v[0] - np.arange(before, 0, -1) * (v[1] - v[0])
            right = v[-1] + np.arange(1, after + 1) * (v[-1] - v[-2])
            return np.concatenate([left, v, right])

        import scipy.sparse as sp
        from scipy.sparse.linalg import splu

        m = s_nodes.size
        rows = sp.lil_matrix((m, m))
        for i in range(m):
            s = -1 if i != 0 else 1  # a_s < 0: backward, flipped at s_0
            if 0 <= i + 2 * s < m:
                rows[i, i] += -s * 1.5 * a_s / h
                rows[i, i + s] += s * 2.0 * a_s / h
                rows[i, i + 2 * s] += -s * 0.5 * a_s / h
            else:
                rows[i, i] += -s * a_s / h
                rows[i, i + s] += s * a_s / h
        lu = splu((sp.identity(m) - dt * rows).tocsc())
        for k in range(steps - 1, -1, -1):
            padded = pad_lin(theta, shift, shift)
            up = padded[2 * shift :]
            jump = c * (up - theta)
            f = 0.2 * np.sin(theta)
            theta = lu.solve(theta + dt * (jump + f))

        xs = space.meshgrid()
        s_of_node = xs[..., 0] + xs[..., 1]
        idx = np.rint((s_of_node - s_nodes[0]) / h).astype(int)
        oracle_grid = theta[idx]
        inner = (slice(20, 37), slice(20, 37))
        diff = np.abs(sol.values[0][..., 0] - oracle_grid)
        # the block genuinely varies (not a saturated-tail triviality)
        assert np.ptp(sol.values[0][inner + (0,)]) > 0.5
        assert np.max(diff[inner]) < 1e-8

    def test_implicit_driver_mode_agrees(self):
        model = meixner_model()
        tg = TimeGrid(0.5, 32)
        g = lambda x: np.tanh(x[..., 0])
        drv = DriverFunction(
            fn=lambda t, y, z: 0.3 * np.cos(y), lipschitz=0.3, needs_z=False
        )
        a = solve_nonlinear_pdie(model, g, drv, grid_1d(-6, 6, 121), tg)
        b = solve_nonlinear_pdie(
            model, g, drv, grid_1d(-6, 6, 121), tg, implicit_driver=True
        )
        assert np.max(np.abs(a.values - b.values)) < 5e-3


class TestDriverFunction:
    def test_lipschitz_spot_check(self):
        drv = DriverFunction(
            fn=lambda t, y, z: 0.4 * y + 0.3 * z[(1,)], lipschitz=0.7
        )
        rng = np.random.default_rng(0)
        worst = drv.spot_check_lipschitz(rng, m=1, table_size=3)
        assert worst <= drv.lipschitz + 1e-9
