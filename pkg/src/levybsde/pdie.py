"""IMEX finite-difference solvers for the jump integro-differential equations.

The backward equation marched here is

    d(theta)/dt + int (theta(t, x+y) - theta(t, x) - grad theta . y) nu(dy)
                + a~ . grad theta + f(t, theta, Theta) = 0,   theta(T, .) = g,

with f = 0 for the linear problem.  Time stepping is IMEX: the drift (and
the small-jump diffusion correction) are implicit with upwind/central
stencils, the nonlocal term and the driver are explicit, under the step
bound dt <= 1/(2 * truncated jump mass).

On the uniform grid the nonlocal term is a discrete convolution: jump cells
are aligned with the mesh, cell masses are exact tail differences (1-D) or
copula-tail inclusion-exclusion (2-D), and

    J[theta] = corr(w, theta_pad) - mass * theta - kappa1 . grad theta,

which vanishes identically on affine fields, independent of the weights.
Jumps inside the central cell are folded into an implicit second-derivative
correction with coefficient int_{|y|<h/2} y^2 nu(dy) per axis (1-D parts).
Out-of-grid values extend linearly from the boundary slope, consistent with
the polynomial-growth hypothesis on solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.signal import fftconvolve
from scipy.sparse.linalg import splu

from .errors import (
    CflError,
    ConvergenceError,
    DegenerateBasisError,
    UnsupportedRepresentationError,
)
from .models import LevyModel, compensator_mean
from .multiindex import degree
from .orthobasis import OrthoBasis, degree1_inverse
from .quadrature import adaptive
from .simulate import TimeGrid

__all__ = [
    "SpaceGrid",
    "GridSolution",
    "DriverFunction",
    "ZTable",
    "solve_linear_pdie",
    "solve_nonlinear_pdie",
    "theta1",
    "clark_ocone_coefficients",
    "clark_ocone_fields",
    "export_solution_csv",
]


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform rectangular grid, one (lo, hi, count) triple per dimension."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    num: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "num", tuple(int(v) for v in self.num))
        if not len(self.lo) == len(self.hi) == len(self.num):
            raise ValueError("lo/hi/num must have equal lengths")
        for lo, hi, m in zip(self.lo, self.hi, self.num):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bad bounds ({lo}, {hi})")
            if m < 3:
                raise ValueError("need at least 3 nodes per dimension")

    @property
    def n(self) -> int:
        return len(self.num)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(
            (hi - lo) / (m - 1) for lo, hi, m in zip(self.lo, self.hi, self.num)
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.num

    def axes(self) -> list[np.ndarray]:
        return [
            np.linspace(lo, hi, m) for lo, hi, m in zip(self.lo, self.hi, self.num)
        ]

    def meshgrid(self) -> np.ndarray:
        """Node coordinates, shape (*shape, n)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)


# ---------------------------------------------------------------------------
# Field helpers: gradients, padding, interpolation
# ---------------------------------------------------------------------------


def _axis_gradient(arr, h, axis):
    """Central differences inside, one-sided at the boundary (exact on affine)."""
    return np.gradient(arr, h, axis=axis, edge_order=1)


def _pad_linear(arr, axis, before, after):
    """Extend linearly along ``axis`` using the one-sided boundary slopes."""
    if before == 0 and after == 0:
        return arr
    arr = np.moveaxis(arr, axis, 0)
    first, second = arr[0], arr[1]
    last, prev = arr[-1], arr[-2]
    parts = []
    if before:
        steps = np.arange(before, 0, -1).reshape((-1,) + (1,) * (arr.ndim - 1))
        parts.append(first - steps * (second - first))
    parts.append(arr)
    if after:
        steps = np.arange(1, after + 1).reshape((-1,) + (1,) * (arr.ndim - 1))
        parts.append(last + steps * (last - prev))
    return np.moveaxis(np.concatenate(parts, axis=0), 0, axis)


def _interp_multilinear(space: SpaceGrid, arr, x, extrapolation="linear"):
    """Multilinear interpolation of a grid field at points x (..., n).

    Outside the box the field extends linearly per axis (or clamps when
    ``extrapolation='constant'``), matching the solver's padding rule.
    """
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, space.n)
    idx = []
    frac = []
    for d in range(space.n):
        t = (pts[:, d] - space.lo[d]) / space.h[d]
        if extrapolation == "constant":
            t = np.clip(t, 0.0, space.num[d] - 1.0)
        i = np.floor(t).astype(int)
        i = np.clip(i, 0, space.num[d] - 2)
        idx.append(i)
        frac.append(t - i)
    out = np.zeros((pts.shape[0],) + arr.shape[space.n :], dtype=float)
    for corner in range(1 << space.n):
        weight = np.ones(pts.shape[0])
        ii = []
        for d in range(space.n):
            if corner >> d & 1:
                weight = weight * frac[d]
                ii.append(idx[d] + 1)
            else:
                weight = weight * (1.0 - frac[d])
                ii.append(idx[d])
        vals = arr[tuple(ii)]
        out += weight.reshape((-1,) + (1,) * (arr.ndim - space.n)) * vals
    return out.reshape(x.shape[:-1] + arr.shape[space.n :])


# ---------------------------------------------------------------------------
# Jump operator
# ---------------------------------------------------------------------------


_CORE_CELLS = 4  # innermost cells folded into the implicit diffusion (1-D)


class _JumpOperator:
    """Mesh-aligned discretization of the compensated jump integral."""

    def __init__(self, model: LevyModel, space: SpaceGrid, mass_tail_tol=1e-8):
        self.model = model
        self.space = space
        n = space.n
        if model.n != n:
            raise ValueError("model dimension does not match grid")
        h = space.h
        self.kernel = None  # offset-indexed weights, shape (2J1+1, ...)
        self.radius = (0,) * n
        self.sigma2c = np.zeros(n)
        self.loose_atoms: list[tuple[np.ndarray, float]] = []

        if model.density is not None:
            raise UnsupportedRepresentationError(
                "explicit-density models are not wired into the PDIE engine"
            )
        cont = model.has_continuous_part()
        if cont and n == 1:
            # node-centered cell masses overstate the second moment of an
            # x^-2 density by mass * 1/(4 k^2 - 1) per cell, an O(h) excess
            # dominated by the innermost cells; jumps inside the first
            # _CORE_CELLS cells are carried as an implicit second-moment
            # exact diffusion instead
            marg = model.marginals[0]
            J = self._box_radius(marg, h[0], mass_tail_tol)
            core = min(_CORE_CELLS, max(J // 4, 0))
            js = np.arange(-J, J + 1)
            edges_hi = (js + 0.5) * h[0]
            edges_lo = (js - 0.5) * h[0]
            w = np.array(
                [
                    0.0 if abs(j) <= core else _cell_mass_1d(marg, lo, hi)
                    for j, lo, hi in zip(js, edges_lo, edges_hi)
                ]
            )
            self.kernel = w
            self.radius = (J,)
            cut = (core + 0.5) * h[0]
            self.sigma2c[0] = adaptive(marg.squared_weight, -cut, cut, tol=1e-12)
        elif cont and n == 2:
            m1, m2 = model.marginals
            J1 = self._box_radius(m1, h[0], mass_tail_tol)
            J2 = self._box_radius(m2, h[1], mass_tail_tol)
            self.kernel = _cell_masses_2d(model, h, J1, J2)
            self.radius = (J1, J2)
            # dropped central-cell second moments shrink like O(h); no
            # diffusion correction is attempted for coupled marginals
        elif cont:
            raise UnsupportedRepresentationError(
                "continuous jump parts are discretized for n <= 2 only"
            )

        # atoms: mesh-aligned ones join the kernel, the rest stay as
        # interpolated shifts
        xs, cs = model.atom_arrays()
        aligned = []
        for x, c in zip(xs, cs):
            offs = x / np.array(h)
            snapped = np.round(offs)
            if np.max(np.abs(offs - snapped)) < 1e-9:
                aligned.append((snapped.astype(int), c))
            else:
                self.loose_atoms.append((x, c))
        if aligned:
            rad = tuple(
                max(self.radius[d], max(abs(int(o[d])) for o, _ in aligned))
                for d in range(n)
            )
            kernel = np.zeros(tuple(2 * r + 1 for r in rad))
            if self.kernel is not None:
                sl = tuple(
                    slice(rad[d] - self.radius[d], rad[d] + self.radius[d] + 1)
                    for d in range(n)
                )
                kernel[sl] = self.kernel
            for o, c in aligned:
                if all(v == 0 for v in o):
                    raise ValueError("atom at the origin is not a jump")
                kernel[tuple(o[d] + rad[d] for d in range(n))] += c
            self.kernel = kernel
            self.radius = rad

        self.mass = float(self.kernel.sum()) if self.kernel is not None else 0.0
        self.mass += sum(c for _, c in self.loose_atoms)
        # first moment of the discretized measure; its gradient term is
        # folded into the implicit drift (same equation, and it keeps the
        # explicit part free of central-difference boundary stencils)
        self.kappa1 = np.zeros(n)
        if self.kernel is not None:
            offsets = np.meshgrid(
                *[np.arange(-r, r + 1) * h[d] for d, r in enumerate(self.radius)],
                indexing="ij",
            )
            for d in range(n):
                self.kappa1[d] += float((self.kernel * offsets[d]).sum())
        for x, c in self.loose_atoms:
            self.kappa1 += c * np.asarray(x)

    @staticmethod
    def _box_radius(marg, h, tail_tol):
        """Cells per side so the ignored tail of y^2 nu is below tolerance."""
        m2 = marg.moment(2)
        target = 0.25 * tail_tol * m2  # slack for the tail-shape correction

        def tail_mass(y):
            # tail estimate of int_{|x|>y} x^2 nu via tail mass times y^2
            pos = float(marg.tail_interp(y))
            neg = float(-marg.tail_interp(-y))
            return (pos + neg) * y * y

        y = 1.0
        while tail_mass(y) > target and y < 400.0:
            y *= 1.25
        return max(2, int(math.ceil(y / h)))

    def apply(self, theta):
        """Centered jump sum: corr(w, theta) - mass * theta (+ loose atoms).

        The first-moment transport -kappa1 . grad(theta) belongs to this
        operator analytically but is carried by the implicit drift solve.
        """
        out = np.zeros_like(theta)
        space = self.space
        if self.kernel is not None:
            padded = theta
            for d, r in enumerate(self.radius):
                padded = _pad_linear(padded, d, r, r)
            flipped = np.flip(self.kernel, axis=tuple(range(space.n)))
            kern = flipped[(...,) + (None,) * (theta.ndim - space.n)]
            out += fftconvolve(padded, kern, mode="valid", axes=tuple(range(space.n)))
            out -= float(self.kernel.sum()) * theta
        for x, c in self.loose_atoms:
            shifted = _shift_field(space, theta, x)
            out += c * (shifted - theta)
        return out

    def polynomial_kernels(self, basis: OrthoBasis, max_deg=None):
        """Per kept index: (weighted kernel, mass, first moments, loose atom
        polynomial values) for the coefficient fields Theta^p."""
        from .orthobasis import evaluate_polynomial

        plans = []
        n = self.space.n
        h = self.space.h
        if self.kernel is not None:
            offsets = np.stack(
                np.meshgrid(
                    *[np.arange(-r, r + 1) * h[d] for d, r in enumerate(self.radius)],
                    indexing="ij",
                ),
                axis=-1,
            ).reshape(-1, n)
        for p in basis.kept_indices:
            if max_deg is not None and degree(p) > max_deg:
                continue
            entry = {"index": p, "norm": basis.norm(p)}
            if self.kernel is not None:
                pv = evaluate_polynomial(basis, p, offsets).reshape(self.kernel.shape)
                wk = self.kernel * pv
                entry["kernel"] = wk
                entry["mass"] = float(wk.sum())
                entry["kappa"] = np.array(
                    [
                        float((wk * offsets.reshape(self.kernel.shape + (n,))[..., d]).sum())
                        for d in range(n)
                    ]
                )
            entry["atoms"] = [
                (x, c, float(evaluate_polynomial(basis, p, x[None, :])[0]))
                for x, c in self.loose_atoms
            ]
            plans.append(entry)
        return plans


def _cell_mass_1d(marg, lo, hi):
    """nu((lo, hi]) for a cell not containing 0, via signed tail differences."""
    if lo < 0 <= hi or (lo <= 0 < hi):
        raise ValueError("cell straddles the origin")
    return float(marg.tail_interp(lo) - marg.tail_interp(hi))


def _cell_masses_2d(model, h, J1, J2):
    """Exact cell masses from the joint tail F(U1, U2), inclusion-exclusion.

    Valid for rectangles inside one quadrant; cells touching an axis take
    the boundary tail just off the axis, and the central cell is zeroed
    (its mass may be infinite, and the theta1 form cancels it anyway).
    """
    m1, m2 = model.marginals
    cop = model.copula

    def corner_tails(marg, J, hd):
        edges = (np.arange(-J, J + 1 + 1) - 0.5) * hd  # cell boundaries
        eps = 1e-9 * hd
        safe = np.where(np.abs(edges) < eps, np.where(edges >= 0, eps, -eps), edges)
        return marg.tail_interp(safe)

    u1 = corner_tails(m1, J1, h[0])  # (2J1+2,)
    u2 = corner_tails(m2, J2, h[1])
    fvals = np.empty((u1.size, u2.size))
    mu, eta = cop.mu, cop.eta
    a1 = np.abs(u1)[:, None] ** (-mu)
    a2 = np.abs(u2)[None, :] ** (-mu)
    core = (a1 + a2) ** (-1.0 / mu)
    sgn = np.sign(u1)[:, None] * np.sign(u2)[None, :]
    fvals = core * np.where(sgn >= 0, eta, -(1.0 - eta))
    masses = fvals[:-1, :-1] - fvals[1:, :-1] - fvals[:-1, 1:] + fvals[1:, 1:]
    masses = np.maximum(masses, 0.0)
    masses[J1, J2] = 0.0
    return masses


def _shift_field(space, theta, offset_x):
    """theta(x + offset) on the grid by per-axis linear interpolation with
    linear extension; exact on affine fields."""
    out = theta
    for d in range(space.n):
        t = offset_x[d] / space.h[d]
        k = int(math.floor(t))
        frac = t - k
        lo = _roll_extend(out, d, k)
        if frac == 0.0:
            out = lo
        else:
            hi = _roll_extend(out, d, k + 1)
            out = (1.0 - frac) * lo + frac * hi
    return out


def _roll_extend(arr, axis, k):
    """Values arr(i + k) along ``axis``, vacated entries filled linearly."""
    if k == 0:
        return arr
    size = arr.shape[axis]
    before, after = max(0, -k), max(0, k)
    padded = _pad_linear(arr, axis, before, after)
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(before + k, before + k + size)
    return padded[tuple(sl)]


# ---------------------------------------------------------------------------
# Solutions and drivers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSolution:
    """theta(t_j, x_node) per component, with multilinear interpolation."""

    space: SpaceGrid
    tgrid: TimeGrid
    values: np.ndarray  # (steps+1, *shape, m)
    model: LevyModel
    extrapolation: str = "linear"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def components(self) -> int:
        return self.values.shape[-1]

    def slice(self, t_index: int) -> np.ndarray:
        return self.values[t_index]

    def interp_slice(self, t_index: int, x, k: int | None = None):
        vals = _interp_multilinear(
            self.space, self.values[t_index], x, self.extrapolation
        )
        return vals if k is None else vals[..., k]

    def interp(self, t, x, k: int | None = None):
        """Multilinear in space, linear in t between stored slices."""
        times = self.tgrid.times
        j = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        w = (t - times[j]) / self.tgrid.dt
        w = min(max(w, 0.0), 1.0)
        a = self.interp_slice(j, x, k)
        b = self.interp_slice(j + 1, x, k)
        return (1.0 - w) * a + w * b


@dataclass
class DriverFunction:
    """Vectorized driver f(t, y, z) with its declared Lipschitz constant.

    ``fn`` receives y of shape (..., m) and a ZTable whose entries are
    (..., m) arrays in the orthonormal martingale scaling, and must return
    (..., m).  ``needs_z`` gates the (possibly expensive) coefficient-table
    assembly in the PDIE solver.
    """

    fn: object
    lipschitz: float
    name: str = ""
    needs_z: bool = True

    def __call__(self, t, y, z):
        return self.fn(t, y, z)

    def spot_check_lipschitz(self, rng, m=1, table_size=3, trials=64, scale=2.0):
        """Random-probe verification of |f(a)-f(b)| <= C(|dy| + |dz|)."""
        worst = 0.0
        for _ in range(trials):
            t = rng.uniform(0.0, 1.0)
            y1, y2 = rng.normal(0, scale, (2, 1, m))
            z1, z2 = rng.normal(0, scale, (2, 1, table_size, m))
            idx = [(d + 1,) for d in range(table_size)]
            f1 = np.asarray(self.fn(t, y1, ZTable(idx, z1)))
            f2 = np.asarray(self.fn(t, y2, ZTable(idx, z2)))
            dy = np.linalg.norm(y1 - y2)
            dz = np.linalg.norm(z1 - z2)
            lhs = np.linalg.norm(f1 - f2)
            if lhs > 0:
                worst = max(worst, lhs / (dy + dz))
        return worst


class ZTable:
    """Coefficient table {p: values} addressed by multi-index."""

    def __init__(self, indices, values):
        self.indices = [tuple(p) for p in indices]
        self.values = np.asarray(values)
        self._slots = {p: i for i, p in enumerate(self.indices)}

    def __getitem__(self, p):
        return self.values[..., self._slots[tuple(p)], :]

    def __contains__(self, p):
        return tuple(p) in self._slots

    def norm(self):
        """Pointwise l2 norm over indices and components."""
        return np.sqrt(np.sum(self.values**2, axis=(-2, -1)))


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def _terminal_values(terminal, space, m=None):
    xs = space.meshgrid()
    if callable(terminal):
        terminal = [terminal] if m in (None, 1) else [terminal] * m
    cols = [np.asarray(g(xs), dtype=float) for g in terminal]
    return np.stack(cols, axis=-1)


def _implicit_operator(drift, space, sigma2c, dt):
    """LU factors of I - dt * (drift . grad_upwind + 0.5 sigma2c Laplacian).

    ``drift`` is the effective transport a~ - kappa1 (compensator mean
    minus the discretized first moment of the jump kernel).  Second-order
    one-sided (upwind) differences per axis, falling back to the two-point
    stencil where the wide neighbor is missing and flipping inward at the
    open edge; all variants are exact on affine fields, consistent with the
    linear out-of-grid extension.  Diffusion rows vanish at the boundary
    (linear extension has zero curvature).
    """
    n = space.n
    atilde = np.asarray(drift, dtype=float)
    eye_parts = [sp.identity(m, format="csr") for m in space.num]
    ops = []
    for d in range(n):
        m = space.num[d]
        h = space.h[d]
        a = atilde[d]
        rows = sp.lil_matrix((m, m))
        if a != 0.0:
            for i in range(m):
                fwd = a > 0
                if fwd and i == m - 1 or (not fwd and i == 0):
                    fwd = not fwd  # flip inward at the open edge
                s = 1 if fwd else -1
                if 0 <= i + 2 * s < m:
                    # second-order one-sided difference in the wind direction
                    rows[i, i] += -s * 1.5 * a / h
                    rows[i, i + s] += s * 2.0 * a / h
                    rows[i, i + 2 * s] += -s * 0.5 * a / h
                else:
                    rows[i, i] += -s * a / h
                    rows[i, i + s] += s * a / h
        s2 = 0.5 * sigma2c[d] / (h * h)
        if s2 > 0:
            for i in range(1, m - 1):
                rows[i, i - 1] += s2
                rows[i, i] += -2.0 * s2
                rows[i, i + 1] += s2
        ops.append(rows.tocsr())
    full = None
    for d in range(n):
        piece = None
        for dd in range(n):
            blk = ops[d] if dd == d else eye_parts[dd]
            piece = blk if piece is None else sp.kron(piece, blk, format="csr")
        full = piece if full is None else full + piece
    size = int(np.prod(space.num))
    system = sp.identity(size, format="csc") - dt * full.tocsc()
    return splu(system)


def _check_cfl(mass, dt):
    limit = 0.5 / mass if mass > 0 else np.inf
    if dt > limit * (1 + 1e-12):
        raise CflError(
            f"dt = {dt:g} violates the explicit jump bound dt <= {limit:g}; "
            "refine the time grid",
            suggested_dt=limit,
        )


def solve_nonlinear_pdie(
    model: LevyModel,
    terminal,
    driver: DriverFunction | None,
    space: SpaceGrid,
    tgrid: TimeGrid,
    basis: OrthoBasis | None = None,
    max_z_degree: int | None = None,
    implicit_driver: bool = False,
    fp_tol: float = 1e-10,
    fp_max_iter: int = 50,
    extrapolation: str = "linear",
) -> GridSolution:
    """Backward IMEX march of the semilinear jump equation.

    With ``driver=None`` (or f identically 0) this *is* the linear solver;
    `solve_linear_pdie` delegates here, so the two agree bit for bit.  The
    driver is evaluated explicitly on the previous time slice unless
    ``implicit_driver`` requests the fixed-point sub-iteration in y.
    """
    values = _terminal_values(terminal, space)
    m = values.shape[-1]
    jop = _JumpOperator(model, space)
    _check_cfl(jop.mass, tgrid.dt)
    drift_eff = compensator_mean(model) - jop.kappa1
    lu = _implicit_operator(drift_eff, space, jop.sigma2c, tgrid.dt)
    needs_z = driver is not None and driver.needs_z
    plans = None
    if needs_z:
        if basis is None:
            raise ValueError("driver consumes z; pass the orthogonal basis")
        plans = jop.polynomial_kernels(basis, max_z_degree)
    out = np.empty((tgrid.steps + 1,) + space.shape + (m,))
    out[tgrid.steps] = values
    theta = values
    dt = tgrid.dt
    times = tgrid.times
    size = int(np.prod(space.shape))
    for k in range(tgrid.steps - 1, -1, -1):
        explicit = jop.apply(theta)
        if driver is not None:
            if needs_z:
                grads = [
                    _axis_gradient(theta, space.h[d], d) for d in range(space.n)
                ]
                ztab = _z_table_from_fields(jop, plans, theta, grads, space)
            else:
                ztab = ZTable([], np.zeros(space.shape + (0, m)))
            fval = np.asarray(driver(times[k + 1], theta, ztab), dtype=float)
            if fval.shape != theta.shape:
                raise ValueError(
                    f"driver returned shape {fval.shape}, expected {theta.shape}"
                )
        else:
            fval = 0.0
        rhs = theta + dt * (explicit + fval)
        new = np.empty_like(theta)
        for c in range(m):
            new[..., c] = lu.solve(rhs[..., c].reshape(size)).reshape(space.shape)
        if implicit_driver and driver is not None:
            # fixed-point in the y-argument at the new time level
            for it in range(fp_max_iter):
                fnew = np.asarray(driver(times[k], new, ztab), dtype=float)
                rhs2 = theta + dt * (explicit + fnew)
                nxt = np.empty_like(theta)
                for c in range(m):
                    nxt[..., c] = lu.solve(rhs2[..., c].reshape(size)).reshape(
                        space.shape
                    )
                delta = float(np.max(np.abs(nxt - new)))
                new = nxt
                if delta < fp_tol * (1.0 + float(np.max(np.abs(new)))):
                    break
            else:
                raise ConvergenceError(
                    "driver fixed-point sub-iteration did not converge",
                    trace=[delta],
                )
        out[k] = new
        theta = new
    return GridSolution(
        space=space,
        tgrid=tgrid,
        values=out,
        model=model,
        extrapolation=extrapolation,
    )


def solve_linear_pdie(model, terminal, space, tgrid, **kw) -> GridSolution:
    """Backward march of the linear jump equation (zero driver)."""
    return solve_nonlinear_pdie(model, terminal, None, space, tgrid, **kw)


def _z_table_from_fields(jop, plans, theta, grads, space):
    fields = []
    indices = []
    for plan in plans:
        acc = np.zeros_like(theta)
        if "kernel" in plan:
            padded = theta
            for d, r in enumerate(jop.radius):
                padded = _pad_linear(padded, d, r, r)
            flipped = np.flip(plan["kernel"], axis=tuple(range(space.n)))
            kern = flipped[(...,) + (None,) * (theta.ndim - space.n)]
            acc += fftconvolve(
                padded, kern, mode="valid", axes=tuple(range(space.n))
            )
            acc -= plan["mass"] * theta
            for d in range(space.n):
                if plan["kappa"][d] != 0.0:
                    acc -= plan["kappa"][d] * grads[d]
        for x, c, pval in plan["atoms"]:
            shifted = _shift_field(space, theta, x)
            lin = sum(x[d] * grads[d] for d in range(space.n))
            acc += c * pval * (shifted - theta - lin)
        fields.append(acc * plan["norm"])  # orthonormal scaling
        indices.append(plan["index"])
    stacked = (
        np.stack(fields, axis=-2)
        if fields
        else np.zeros(theta.shape[:-1] + (0, theta.shape[-1]))
    )
    return ZTable(indices, stacked)


# ---------------------------------------------------------------------------
# Clark-Ocone extraction
# ---------------------------------------------------------------------------


def theta1(solution: GridSolution, k: int, t: float, x, y) -> float:
    """Second-order remainder theta(t, x+y) - theta(t, x) - grad theta . y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.all(y == 0.0):
        return 0.0
    base = solution.interp(t, x, k)
    shifted = solution.interp(t, x + y, k)
    eps_h = np.array(solution.space.h)
    grad = np.empty(solution.space.n)
    for d in range(solution.space.n):
        e = np.zeros(solution.space.n)
        e[d] = eps_h[d]
        grad[d] = (
            solution.interp(t, x + e, k) - solution.interp(t, x - e, k)
        ) / (2.0 * eps_h[d])
    return float(shifted - base - grad @ y)


def clark_ocone_fields(
    solution: GridSolution,
    basis: OrthoBasis,
    t_index: int,
    k: int = 0,
    max_degree: int | None = None,
    monic: bool = True,
):
    """Clark-Ocone integrand fields z^p(t_j, x) on the grid, as a ZTable.

    Degree >= 2 entries are the pairings of theta1 with the basis
    polynomials; degree-1 entries add the gradient correction through the
    inverse degree-1 transform (loading of element e_j gains
    sum_i d(theta)/dx_i ctilde_{ij}).  ``monic=False`` rescales to the
    orthonormal view used by the BSDE machinery.
    """
    cache_key = ("co_fields", t_index, k, max_degree, monic, id(basis))
    if cache_key in solution._cache:
        return solution._cache[cache_key]
    space = solution.space
    model = solution.model
    jop = _co_operator(solution)
    plans = _co_plans(solution, basis, max_degree)
    theta = solution.values[t_index][..., k : k + 1]
    grads = [_axis_gradient(theta, space.h[d], d) for d in range(space.n)]
    table = _z_table_from_fields(jop, plans, theta, grads, space)
    # _z_table_from_fields returns orthonormal scaling; undo for monic view
    vals = table.values[..., 0]  # (shape, P)
    indices = table.indices
    norms = np.array([basis.norm(p) for p in indices])
    monic_vals = vals / norms[None, :] if vals.size else vals
    ctilde = None
    for slot, p in enumerate(indices):
        if degree(p) == 1:
            if ctilde is None:
                ctilde = degree1_inverse(basis)
            j = p.index(1)
            corr = sum(grads[i][..., 0] * ctilde[i, j] for i in range(space.n))
            monic_vals[..., slot] = monic_vals[..., slot] + corr
    out_vals = monic_vals if monic else monic_vals * norms[None, :]
    result = ZTable(indices, out_vals[..., None])
    solution._cache[cache_key] = result
    return result


def _co_operator(solution):
    key = "co_jop"
    if key not in solution._cache:
        solution._cache[key] = _JumpOperator(solution.model, solution.space)
    return solution._cache[key]


def _co_plans(solution, basis, max_degree):
    key = ("co_plans", id(basis), max_degree)
    if key not in solution._cache:
        solution._cache[key] = _co_operator(solution).polynomial_kernels(
            basis, max_degree
        )
    return solution._cache[key]


def clark_ocone_coefficients(
    solution: GridSolution,
    basis: OrthoBasis,
    k: int,
    t_index: int,
    x,
    max_degree: int | None = None,
) -> dict:
    """Pointwise Clark-Ocone loadings {p: z_k^p(t, x)} in the monic view.

    A pruned degree-1 direction raises DegenerateBasisError through the
    inverse-transform lookup.
    """
    fields = clark_ocone_fields(solution, basis, t_index, k, max_degree, monic=True)
    x = np.asarray(x, dtype=float)
    out = {}
    for p in fields.indices:
        out[p] = float(
            _interp_multilinear(
                solution.space, fields[p][..., None], x, solution.extrapolation
            )[..., 0]
        )
    return out


def export_solution_csv(solution: GridSolution, fh):
    """Rows (t, x_1..x_n, k, theta)."""
    xs = solution.space.meshgrid().reshape(-1, solution.space.n)
    fh.write(
        "t," + ",".join(f"x{d+1}" for d in range(solution.space.n)) + ",k,theta\n"
    )
    for j, t in enumerate(solution.tgrid.times):
        flat = solution.values[j].reshape(-1, solution.components)
        for row, x in zip(flat, xs):
            for k in range(solution.components):
                fh.write(
                    f"{t!r},"
                    + ",".join(repr(float(v)) for v in x)
                    + f",{k},{row[k]!r}\n"
                )
