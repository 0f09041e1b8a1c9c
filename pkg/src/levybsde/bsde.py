"""Regression Monte-Carlo solver for backward equations driven by the
orthogonal jump martingales.

The solution pair (Y, Z) satisfies

    Y(t) = xi + int_t^T f(s, Y(s-), Z(s)) ds - sum_p int_t^T z^p dH~^p,

and is computed as the fixed point of the backward Picard map: given a
candidate (U, V), accumulate the driver along paths, project the running
target onto polynomial state features per time step (conditional
expectation), and read the martingale loadings off the orthonormal
increment products.  All Picard iterations share one path set (common
random numbers), so successive-iterate distances in the exponential-weight
norm measure the contraction itself rather than resampling noise.

Z estimation uses martingale-differenced targets
(S(t_{k+1}) - Y_fit(t_k)) * dH~ / dt, which leaves the conditional
expectation unchanged (Y_fit(t_k) is measurable at t_k) and removes the
dominant variance term; constant terminal data then yields exactly zero
loadings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .models import LevyModel
from .multiindex import degree
from .orthobasis import OrthoBasis
from .pdie import DriverFunction, GridSolution, ZTable, clark_ocone_fields
from .simulate import TimeGrid, teugels_increments_batch

__all__ = [
    "BsdeData",
    "BsdeOptions",
    "BsdeSolution",
    "BsdeWorkspace",
    "solve_bsde",
    "picard_iterate",
    "beta_norm",
    "stability_check",
    "clark_ocone_reconstruct",
    "export_bsde_csv",
]


@dataclass
class BsdeData:
    """Driver + terminal functional + model (standard data)."""

    driver: DriverFunction
    terminal: object  # callable X_T (M, n) -> (M,) or (M, m)
    model: LevyModel
    degree: int = 3  # chaos truncation for the Z table

    def terminal_values(self, x_terminal) -> np.ndarray:
        xi = np.asarray(self.terminal(x_terminal), dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None]
        if not np.all(np.isfinite(xi)):
            raise ValueError("terminal functional produced non-finite values")
        return xi


@dataclass
class BsdeOptions:
    picard_tol: float = 1e-4
    max_picard: int = 25
    beta: float | None = None  # default 4 C^2 + 1 from the declared Lipschitz

    def beta_for(self, data: BsdeData) -> float:
        if self.beta is not None:
            return self.beta
        c = data.driver.lipschitz
        return 4.0 * c * c + 1.0


@dataclass(frozen=True)
class BsdeSolution:
    """Per-path Y and orthonormal-view Z on the time grid.

    ``y`` has shape (paths, steps+1, m); ``z`` has shape
    (paths, steps, P, m), predictable over [t_k, t_{k+1}).  Y(T) equals the
    terminal values exactly, and Y(0)/Z(0) are constant across paths since
    the t_0 regression sees one state.
    """

    tgrid: TimeGrid
    indices: tuple
    y: np.ndarray
    z: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def y0(self) -> np.ndarray:
        return self.y[0, 0]

    @property
    def z0(self) -> np.ndarray:
        return self.z[0, 0]


class BsdeWorkspace:
    """Precomputed path data shared by every Picard iteration."""

    def __init__(self, data: BsdeData, paths, basis: OrthoBasis, grid: TimeGrid):
        self.data = data
        self.paths = paths
        self.basis = basis
        self.grid = grid
        kept = [p for p in basis.kept_indices if degree(p) <= data.degree]
        self.indices = tuple(kept)
        slots = [basis.kept_indices.index(p) for p in kept]
        incs = teugels_increments_batch(paths, basis, grid, data.model)
        self.dh = incs[:, :, slots]  # (M, N, P), orthonormal view
        self.states = np.stack([p.states_on(grid) for p in paths])  # (M, N+1, n)
        self.xi = data.terminal_values(self.states[:, -1])  # (M, m)
        self.m = self.xi.shape[1]
        self.designs = [
            _design_matrix(self.states[:, k], data.terminal)
            for k in range(grid.steps + 1)
        ]
        self.pinvs = [np.linalg.pinv(d, rcond=1e-10) for d in self.designs]

    def fit(self, k, targets):
        """Least-squares fitted values of targets (M, q) on the k-th design."""
        beta = self.pinvs[k] @ targets
        return self.designs[k] @ beta


def _design_matrix(x, terminal):
    """Feature columns [1, x_i, x_i x_j, payoff(x)] for the regressions."""
    m, n = x.shape
    cols = [np.ones(m)]
    for i in range(n):
        cols.append(x[:, i])
    for i in range(n):
        for j in range(i, n):
            cols.append(x[:, i] * x[:, j])
    payoff = np.asarray(terminal(x), dtype=float)
    if payoff.ndim == 1:
        cols.append(payoff)
    else:
        cols.extend(payoff[:, c] for c in range(payoff.shape[1]))
    out = np.column_stack(cols)
    if not np.all(np.isfinite(out)):
        raise ValueError("regression design contains non-finite entries")
    return out


def _zeros_solution(ws: BsdeWorkspace) -> BsdeSolution:
    mpaths = len(ws.paths)
    n_steps = ws.grid.steps
    p = len(ws.indices)
    return BsdeSolution(
        tgrid=ws.grid,
        indices=ws.indices,
        y=np.zeros((mpaths, n_steps + 1, ws.m)),
        z=np.zeros((mpaths, n_steps, p, ws.m)),
    )


def _apply_phi(ws: BsdeWorkspace, current: BsdeSolution) -> BsdeSolution:
    """One application of the backward Picard map on the shared paths."""
    grid = ws.grid
    dt = grid.dt
    n_steps = grid.steps
    mpaths = len(ws.paths)
    p = len(ws.indices)
    mdim = ws.m
    drv = ws.data.driver

    fvals = np.empty((mpaths, n_steps, mdim))
    for k in range(n_steps):
        ztab = ZTable(ws.indices, current.z[:, k])
        fvals[:, k] = np.asarray(
            drv(grid.times[k], current.y[:, k], ztab), dtype=float
        ).reshape(mpaths, mdim)

    # running target S(t_k) = xi + dt * sum_{j >= k} f_j
    s = np.empty((mpaths, n_steps + 1, mdim))
    s[:, n_steps] = ws.xi
    for k in range(n_steps - 1, -1, -1):
        s[:, k] = s[:, k + 1] + dt * fvals[:, k]

    y = np.empty_like(current.y)
    z = np.empty_like(current.z)
    y[:, n_steps] = ws.xi
    for k in range(n_steps - 1, -1, -1):
        y[:, k] = ws.fit(k, s[:, k])
        resid = s[:, k + 1] - y[:, k]  # martingale-differenced target
        ztargets = (
            resid[:, None, :] * ws.dh[:, k, :, None] / dt
        ).reshape(mpaths, p * mdim)
        z[:, k] = ws.fit(k, ztargets).reshape(mpaths, p, mdim)
    return BsdeSolution(tgrid=grid, indices=ws.indices, y=y, z=z)


def beta_norm(
    sol_a: BsdeSolution, sol_b: BsdeSolution, beta: float, grid: TimeGrid
) -> float:
    """Discrete exponential-weight distance between two solutions.

    sqrt( sum_k e^{beta t_k} (mean ||dY(t_k)||^2 + mean sum_p ||dz^p||^2) dt )
    over the left endpoints k = 0..N-1, Z in the orthonormal view.
    """
    dy = sol_a.y[:, :-1] - sol_b.y[:, :-1]  # (M, N, m)
    dz = sol_a.z - sol_b.z  # (M, N, P, m)
    wy = np.mean(np.sum(dy**2, axis=2), axis=0)
    wz = np.mean(np.sum(dz**2, axis=(2, 3)), axis=0)
    weights = np.exp(beta * grid.times[:-1])
    return float(math.sqrt(np.sum(weights * (wy + wz)) * grid.dt))


def solve_bsde(
    data: BsdeData,
    paths,
    basis: OrthoBasis,
    grid: TimeGrid,
    options: BsdeOptions | None = None,
    workspace: BsdeWorkspace | None = None,
) -> BsdeSolution:
    """Backward Picard iteration to the fixed point of the discrete map.

    Stops when the successive-iterate beta-norm distance falls below
    picard_tol * (1 + iterate norm); raises ConvergenceError with the
    distance trace if the budget is exhausted.
    """
    options = options or BsdeOptions()
    ws = workspace or BsdeWorkspace(data, paths, basis, grid)
    beta = options.beta_for(data)
    zero = _zeros_solution(ws)
    current = _apply_phi(ws, zero)
    distances = [beta_norm(current, zero, beta, grid)]
    for _ in range(options.max_picard):
        nxt = _apply_phi(ws, current)
        dist = beta_norm(nxt, current, beta, grid)
        distances.append(dist)
        scale = 1.0 + beta_norm(nxt, _zeros_solution(ws), beta, grid)
        current = nxt
        if dist < options.picard_tol * scale:
            current.diagnostics.update(
                picard_distances=distances, iterations=len(distances), beta=beta
            )
            return current
    raise ConvergenceError(
        f"Picard iteration did not reach tolerance {options.picard_tol} in "
        f"{options.max_picard} iterations",
        trace=distances,
    )


def picard_iterate(
    current: BsdeSolution,
    data: BsdeData,
    paths,
    basis: OrthoBasis,
    grid: TimeGrid,
    workspace: BsdeWorkspace | None = None,
) -> BsdeSolution:
    """One application of the backward map (exposed for contraction tests)."""
    ws = workspace or BsdeWorkspace(data, paths, basis, grid)
    return _apply_phi(ws, current)


def stability_check(
    data_a: BsdeData,
    data_b: BsdeData,
    paths,
    basis: OrthoBasis,
    grid: TimeGrid,
    options: BsdeOptions | None = None,
):
    """Both sides of the continuous-dependence bound, without its constant.

    Returns (lhs, rhs): lhs integrates the squared solution discrepancy
    (Y and the loading table), rhs adds the squared terminal perturbation
    and the squared driver perturbation evaluated along the first
    solution's arguments.
    """
    ws_a = BsdeWorkspace(data_a, paths, basis, grid)
    ws_b = BsdeWorkspace(data_b, paths, basis, grid)
    sol_a = solve_bsde(data_a, paths, basis, grid, options, workspace=ws_a)
    sol_b = solve_bsde(data_b, paths, basis, grid, options, workspace=ws_b)
    lhs = beta_norm(sol_a, sol_b, 0.0, grid) ** 2
    dxi = ws_a.xi - ws_b.xi
    rhs = float(np.mean(np.sum(dxi**2, axis=1)))
    acc = 0.0
    for k in range(grid.steps):
        ztab = ZTable(sol_a.indices, sol_a.z[:, k])
        fa = np.asarray(data_a.driver(grid.times[k], sol_a.y[:, k], ztab))
        fb = np.asarray(data_b.driver(grid.times[k], sol_a.y[:, k], ztab))
        acc += float(np.mean(np.sum((fa - fb) ** 2, axis=-1))) * grid.dt
    rhs += acc
    return lhs, rhs


def clark_ocone_reconstruct(
    paths,
    source,
    basis: OrthoBasis,
    grid: TimeGrid,
    max_degree: int | None = None,
    model: LevyModel | None = None,
    component: int = 0,
):
    """Rebuild the terminal functional from its martingale representation.

    xi_hat = E[xi] + sum_k sum_p z~^p(t_k) dH~^p(t_k) along each path, with
    loadings taken from a solved backward system (its regressed Z) or from
    a grid solution (Clark-Ocone fields).  Returns (xi_hat, xi, rms error).
    """
    if isinstance(source, BsdeSolution):
        if max_degree is not None:
            keep = [i for i, p in enumerate(source.indices) if degree(p) <= max_degree]
        else:
            keep = list(range(len(source.indices)))
        zsel = source.z[:, :, keep, component]
        indices = [source.indices[i] for i in keep]
        if model is None:
            raise ValueError("pass the model to rebuild martingale increments")
        incs = teugels_increments_batch(paths, basis, grid, model)
        slots = [basis.kept_indices.index(p) for p in indices]
        dh = incs[:, :, slots]
        mean = float(source.y[0, 0, component])
        recon = mean + np.sum(zsel * dh, axis=(1, 2))
        # the solution's own terminal values are the reference
        xi = source.y[:, -1, component]
    elif isinstance(source, GridSolution):
        model = source.model
        ratio = source.tgrid.steps / grid.steps
        if abs(ratio - round(ratio)) > 1e-12 or abs(source.tgrid.T - grid.T) > 1e-12:
            raise ValueError(
                "solution time grid must refine the reconstruction grid"
            )
        ratio = int(round(ratio))
        incs = teugels_increments_batch(paths, basis, grid, model)
        kept = [
            p
            for p in basis.kept_indices
            if max_degree is None or degree(p) <= max_degree
        ]
        slots = [basis.kept_indices.index(p) for p in kept]
        norms = np.array([basis.norm(p) for p in kept])
        dh = incs[:, :, slots]
        mpaths = len(paths)
        recon = np.full(mpaths, float(source.interp_slice(0, np.zeros(model.n), component)))
        states = np.stack([p.states_on(grid) for p in paths])
        for k in range(grid.steps):
            fields = clark_ocone_fields(
                source, basis, k * ratio, component, max_degree, monic=True
            )
            for slot, p in enumerate(kept):
                zvals = _field_at(source, fields[p][..., 0], states[:, k])
                recon += zvals * norms[slot] * dh[:, k, slot]
        xi = source.interp_slice(source.tgrid.steps, states[:, -1], component)
    else:
        raise TypeError("source must be a BsdeSolution or GridSolution")
    err = float(np.sqrt(np.mean((recon - xi) ** 2)))
    return recon, xi, err


def _field_at(solution: GridSolution, arr, x):
    from .pdie import _interp_multilinear

    return _interp_multilinear(solution.space, arr[..., None], x, solution.extrapolation)[
        ..., 0
    ]


def export_bsde_csv(solution: BsdeSolution, fh):
    """Rows (t, Y-mean, Y-sd, per-index Z-mean) plus a diagnostics trailer."""
    heads = ["t", "Y_mean", "Y_sd"] + [
        "Z_" + "".join(map(str, p)) for p in solution.indices
    ]
    fh.write(",".join(heads) + "\n")
    times = solution.tgrid.times
    for k, t in enumerate(times):
        ymean = float(np.mean(solution.y[:, k, 0]))
        ysd = float(np.std(solution.y[:, k, 0], ddof=0))
        if k < solution.tgrid.steps:
            zmeans = [float(np.mean(solution.z[:, k, j, 0])) for j in range(len(solution.indices))]
        else:
            zmeans = [0.0] * len(solution.indices)
        fh.write(
            ",".join([repr(float(t)), repr(ymean), repr(ysd)] + [repr(v) for v in zmeans])
            + "\n"
        )


def export_bsde_diagnostics(solution: BsdeSolution, fh):
    import json

    json.dump(solution.diagnostics, fh, indent=0, sort_keys=True)
    fh.write("\n")
