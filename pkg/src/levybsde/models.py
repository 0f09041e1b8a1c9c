"""Multidimensional pure-jump Levy models.

A model is a triple (drift a, covariance sigma, jump measure nu).  The jump
measure can be

* a list of continuous marginal measures coupled by a Clayton Levy copula,
* an explicit list of atoms (jump vector, intensity),
* an explicit joint density on a support box,

or a sum of an atomic part and one continuous part.  All moment tensors,
tail integrals, exponential-moment checks and drift conditions are computed
here; everything downstream (basis construction, simulation, PDIE/BSDE
solvers, pricing) treats the model as the single source of truth for nu.

Model objects are immutable after construction and safe to share across
threads; the only internal state is an idempotent moment cache.
"""

from __future__ import annotations

import io
import json
import math
import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import (
    DivergentMomentError,
    DomainError,
    QuadratureError,
    UnsupportedRepresentationError,
)
from .multiindex import MultiIndex, validate_index
from .quadrature import (
    DEFAULT_TOL,
    adaptive,
    gauss_legendre_cells,
    shell_integral,
    singular_moment,
)

__all__ = [
    "MeixnerParams",
    "MarginalMeasure",
    "MeixnerMarginal",
    "PoissonUnitJump",
    "ClaytonCopulaParams",
    "Atom",
    "ExplicitDensity",
    "LevyModel",
    "meixner_levy_density",
    "meixner_cumulant",
    "clayton_copula",
    "tail_integral",
    "joint_levy_density",
    "common_poisson_measure",
    "moment",
    "check_hypothesis1",
    "compensator_mean",
    "risk_neutral_drift",
    "model_from_dict",
    "model_to_dict",
    "load_model",
]


# ---------------------------------------------------------------------------
# Meixner marginal
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeixnerParams:
    """Parameters (alpha, beta, delta, mu) of a Meixner jump measure.

    alpha > 0 is the scale, beta in (-pi, pi) the skew, delta > 0 the shape
    and mu a pure location shift.  mu does not enter the jump density; it is
    stored for drift bookkeeping only.
    """

    alpha: float
    beta: float = 0.0
    delta: float = 1.0
    mu: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError(f"alpha must be positive, got {self.alpha}")
        if self.delta <= 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not -math.pi < self.beta < math.pi:
            raise DomainError(f"beta must lie in (-pi, pi), got {self.beta}")

    @property
    def tail_decay(self) -> float:
        """Exponential decay rate of the right jump tail, (pi - beta)/alpha."""
        return (math.pi - self.beta) / self.alpha


def meixner_levy_density(x, params: MeixnerParams):
    """Jump density delta * exp(beta*x/alpha) / (x * sinh(pi*x/alpha)).

    Strictly positive away from 0; even in x when beta = 0.  The origin is a
    non-removable x**-2 singularity, so x = 0 is a domain error; integrators
    must use the x**2-weighted form (``MeixnerMarginal.squared_weight``).
    """
    x = np.asarray(x, dtype=float)
    if np.any(x == 0.0):
        raise DomainError("Meixner jump density is singular at x = 0")
    a, b, d = params.alpha, params.beta, params.delta
    # sinh overflows for large |x|; work with exp(beta x/a - pi|x|/a) instead
    z = np.pi * np.abs(x) / a
    with np.errstate(over="ignore"):
        small = z < 30.0
    out = np.empty_like(x, dtype=float)
    xs = x[small] if x.ndim else (x if small else x[()])
    if x.ndim:
        out[small] = d * np.exp(b * xs / a) / (xs * np.sinh(np.pi * xs / a))
        xl = x[~small]
        out[~small] = (
            2.0 * d * np.sign(xl) * np.exp((b * xl - np.pi * np.abs(xl)) / a) / xl
        )
        return out
    if small:
        return float(d * np.exp(b * x / a) / (x * np.sinh(np.pi * x / a)))
    return float(2.0 * d * np.exp((b * x - np.pi * abs(x)) / a) / x * np.sign(x))


def meixner_cumulant(theta, params: MeixnerParams):
    """Cumulant K(theta) = mu*theta + 2*delta*(log cos(beta/2) - log cos((alpha*theta+beta)/2)).

    Requires |alpha*theta + beta| < pi.  K(0) = 0 and K is convex.
    """
    theta = np.asarray(theta, dtype=float)
    a, b, d, m = params.alpha, params.beta, params.delta, params.mu
    arg = a * theta + b
    if np.any(np.abs(arg) >= math.pi):
        raise DomainError(
            f"cumulant argument |alpha*theta+beta| = {np.max(np.abs(arg))} "
            "outside (-pi, pi)"
        )
    val = m * theta + 2.0 * d * (np.log(np.cos(b / 2.0)) - np.log(np.cos(arg / 2.0)))
    return float(val) if val.ndim == 0 else val


class MarginalMeasure:
    """One-dimensional marginal jump measure (continuous or atomic)."""

    kind = "abstract"

    def atoms(self) -> list[tuple[float, float]]:
        """(location, mass) pairs of the atomic part."""
        return []

    def is_continuous(self) -> bool:
        return False

    def density(self, x):
        raise UnsupportedRepresentationError(f"{self.kind} marginal has no density")

    def squared_weight(self, x):
        """x**2 * density(x), finite at the origin for continuous kinds."""
        raise UnsupportedRepresentationError(f"{self.kind} marginal has no density")

    def tail(self, x: float) -> float:
        """Signed tail integral U(x).

        U(x) = nu([x, inf)) for x > 0 and U(x) = -nu((-inf, x]) for x < 0.
        This is the standard Levy-copula convention; x = 0 is rejected.
        """
        raise NotImplementedError

    def moment(self, power: int, tol: float = DEFAULT_TOL) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class MeixnerMarginal(MarginalMeasure):
    params: MeixnerParams
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    kind = "meixner"

    def is_continuous(self):
        return True

    def density(self, x):
        return meixner_levy_density(x, self.params)

    def squared_weight(self, x):
        # x^2 * nu(x); continuous at 0 with value delta*alpha/pi
        x = np.asarray(x, dtype=float)
        a, b, d = self.params.alpha, self.params.beta, self.params.delta
        z = np.pi * x / a
        with np.errstate(invalid="ignore", over="ignore"):
            ratio = np.where(np.abs(z) < 1e-8, a / np.pi, x / np.sinh(z))
            big = np.abs(z) > 30.0
            if np.any(big):
                ratio = np.where(
                    big, 2.0 * x * np.exp(-np.abs(z)) * np.sign(x), ratio
                )
        val = d * np.exp(b * x / a) * ratio
        return float(val) if val.ndim == 0 else val

    # -- tails -------------------------------------------------------------

    def _tables(self):
        """Tabulated signed tails on a log grid, built once per marginal."""
        tab = self._cache.get("tails")
        if tab is None:
            tab = _build_tail_tables(self)
            self._cache["tails"] = tab
        return tab

    def tail(self, x):
        if np.ndim(x) == 0:
            if x == 0:
                raise DomainError("tail integral undefined at x = 0")
            return _tail_quad(self, float(x))
        x = np.asarray(x, dtype=float)
        return np.array([self.tail(float(v)) for v in x])

    def tail_interp(self, x):
        """Fast tabulated tail, vectorized; used by samplers and densities."""
        return _tail_interp(self._tables(), x)

    def tail_inverse(self, u):
        """Inverse of the signed tail: u > 0 -> positive jump size."""
        return _tail_inverse(self._tables(), u)

    def moment(self, power, tol=DEFAULT_TOL):
        power = int(power)
        if power < 2:
            raise DivergentMomentError(
                "Meixner jumps have infinite variation; first absolute moment "
                "diverges near 0 (only |p| >= 2 moments exist)"
            )
        if self.params.beta == 0.0 and power % 2 == 1:
            return 0.0
        key = ("m", power, tol)
        if key not in self._cache:
            inner = singular_moment(self.squared_weight, power, inner=1.0, tol=tol)
            outer = shell_integral(
                lambda y: y**power * self.density(y), 1.0, tol=tol, sign=1
            ) + shell_integral(
                lambda y: y**power * self.density(y), 1.0, tol=tol, sign=-1
            )
            self._cache[key] = inner + outer
        return self._cache[key]

    def exp_integral(self, fn_over_x2, tol=DEFAULT_TOL):
        """Integrate fn(x)*nu(dx) where fn(x)/x**2 -> finite limit at 0.

        ``fn_over_x2(x)`` must return fn(x)/x**2 (finite at 0).  Used for
        martingale-condition integrands e**x - 1 - x*1_{|x|<=1}.
        """
        inner = adaptive(
            lambda y: fn_over_x2(y) * self.squared_weight(y), -1.0, 1.0, tol=tol
        )

        def outer_fn(y):
            return fn_over_x2(y) * y * y * self.density(y)

        outer = shell_integral(outer_fn, 1.0, tol=tol, sign=1) + shell_integral(
            outer_fn, 1.0, tol=tol, sign=-1
        )
        return inner + outer


@dataclass(frozen=True)
class PoissonUnitJump(MarginalMeasure):
    """Poisson marginal: a single atom at x = 1 with mass = intensity."""

    intensity: float

    kind = "poisson_unit"

    def __post_init__(self):
        if self.intensity <= 0:
            raise DomainError(f"intensity must be positive, got {self.intensity}")

    def atoms(self):
        return [(1.0, self.intensity)]

    def tail(self, x):
        if np.ndim(x) != 0:
            return np.array([self.tail(float(v)) for v in np.asarray(x)])
        if x == 0:
            raise DomainError("tail integral undefined at x = 0")
        if x < 0:
            return 0.0
        return self.intensity if x <= 1.0 else 0.0

    def moment(self, power, tol=DEFAULT_TOL):
        return self.intensity  # 1**power


def tail_integral(marginal: MarginalMeasure, x: float) -> float:
    """Signed one-sided tail U(x) of a marginal measure (x != 0)."""
    return marginal.tail(x)


def _tail_quad(m: MeixnerMarginal, x: float) -> float:
    tol = DEFAULT_TOL
    if x > 0:
        return shell_integral(m.density, x, tol=tol, sign=1)
    return -shell_integral(m.density, -x, tol=tol, sign=-1)


def _build_tail_tables(m: MeixnerMarginal, x_min=1e-8, cells=2000, npts=8):
    """Cumulative Gauss-Legendre tail tables per side on a log grid.

    Stores monotone cubic (PCHIP) interpolants of log|U| vs log x and the
    inverse map; cell-wise 8-point Gauss-Legendre keeps the table itself
    accurate to ~1e-10 relative.
    """
    from scipy.interpolate import PchipInterpolator

    decay_pos = m.params.tail_decay
    decay_neg = (math.pi + m.params.beta) / m.params.alpha
    tables = {}
    for sign, decay in ((1, decay_pos), (-1, decay_neg)):
        # far point where the remaining tail is ~1e-18 of the density scale
        x_max = max(4.0, 60.0 / decay)
        edges = np.geomspace(x_min, x_max, cells + 1)
        nodes, weights = gauss_legendre_cells(edges, npts=npts)
        dens = m.density(sign * nodes)
        cell_mass = (weights * np.abs(dens)).reshape(cells, npts).sum(axis=1)
        # mass of (edges[i], x_max]; last entry gets the asymptotic remainder
        rest = abs(
            quad(lambda y: m.density(sign * y), x_max, np.inf, epsabs=1e-14)[0]
        )
        tail = rest + np.concatenate(([0.0], np.cumsum(cell_mass[::-1])))[::-1]
        le, lt = np.log(edges), _safe_log(tail)
        tables[sign] = {
            "edges": edges,
            "tail": tail,
            "fwd": PchipInterpolator(le, lt, extrapolate=True),
            "inv": PchipInterpolator(lt[::-1], le[::-1], extrapolate=True),
        }
    return tables


def _tail_interp(tables, x):
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    for sign in (1, -1):
        mask = (x > 0) if sign > 0 else (x < 0)
        if not mask.any():
            continue
        tab = tables[sign]
        edges = tab["edges"]
        ax = np.clip(np.abs(x[mask]), edges[0], edges[-1])
        out[mask] = sign * np.exp(tab["fwd"](np.log(ax)))
    if np.any(x == 0):
        raise DomainError("tail integral undefined at x = 0")
    return out[0] if scalar else out


def _tail_inverse(tables, u):
    u = np.asarray(u, dtype=float)
    scalar = u.ndim == 0
    u = np.atleast_1d(u)
    out = np.empty_like(u)
    for sign in (1, -1):
        mask = (u > 0) if sign > 0 else (u < 0)
        if not mask.any():
            continue
        tab = tables[sign]
        tail = tab["tail"]
        au = np.clip(np.abs(u[mask]), tail[-1], tail[0])
        out[mask] = sign * np.exp(tab["inv"](np.log(au)))
    if np.any(u == 0):
        raise DomainError("tail inverse undefined at u = 0")
    return out[0] if scalar else out


def _safe_log(v):
    return np.log(np.maximum(v, 1e-300))


# ---------------------------------------------------------------------------
# Clayton Levy copula
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClaytonCopulaParams:
    """Clayton-family Levy copula with dependence mu > 0 and sign mix eta in [0,1]."""

    mu: float
    eta: float = 1.0

    def __post_init__(self):
        if self.mu <= 0:
            raise DomainError(f"mu must be positive, got {self.mu}")
        if not 0.0 <= self.eta <= 1.0:
            raise DomainError(f"eta must lie in [0, 1], got {self.eta}")


def clayton_copula(u, params: ClaytonCopulaParams) -> float:
    """n-dimensional Clayton Levy copula value.

    F(u) = 2**(2-n) * (sum |u_j|**-mu)**(-1/mu) * (eta*1{prod u >= 0}
    - (1-eta)*1{prod u < 0}); homogeneous of order 1.  Any u_j -> 0 gives 0.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("copula argument must be a nonempty vector")
    n = u.size
    if np.any(u == 0.0):
        return 0.0
    s = np.sum(np.abs(u) ** (-params.mu))
    core = 2.0 ** (2 - n) * s ** (-1.0 / params.mu)
    if np.prod(np.sign(u)) >= 0:
        return core * params.eta
    return -core * (1.0 - params.eta)


def clayton_mixed_partial(u, params: ClaytonCopulaParams) -> float:
    """Mixed partial d^n F / du_1...du_n at u (all u_j != 0).

    Nonnegative in every orthant: eta weights the all-same-sign product
    orthants and (1 - eta) the rest.
    """
    u = np.asarray(u, dtype=float)
    n = u.size
    if np.any(u == 0.0):
        raise DomainError("mixed partial undefined on the axes")
    mu = params.mu
    s = np.sum(np.abs(u) ** (-mu))
    coef = 2.0 ** (2 - n) * math.prod(1.0 + j * mu for j in range(n))
    core = coef * s ** (-1.0 / mu - n) * np.prod(np.abs(u) ** (-mu - 1.0))
    if np.prod(np.sign(u)) >= 0:
        return core * params.eta
    return core * (1.0 - params.eta)


def clayton_partial1(u1, u2, params: ClaytonCopulaParams):
    """First partial d F / du_1 at (u1, u2), n = 2, both nonzero.

    Monotone in u2 from -(1-eta) (u2 -> -inf) through 0 (u2 -> 0) to eta
    (u2 -> +inf) when u1 > 0; mirrored for u1 < 0.
    """
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    mu, eta = params.mu, params.eta
    s = np.abs(u1) ** (-mu) + np.abs(u2) ** (-mu)
    a = s ** (-1.0 / mu - 1.0) * np.abs(u1) ** (-mu - 1.0)
    sign = np.sign(u1) * np.sign(u2)
    val = np.sign(u1) * a * np.where(sign >= 0, eta, -(1.0 - eta))
    return float(val) if val.ndim == 0 else val


def clayton_conditional_inverse(u1, w, params: ClaytonCopulaParams):
    """Sample the second tail coordinate given the first (n = 2).

    Given first-coordinate tail u1 != 0 and uniform w in (0, 1), returns u2
    with the conditional law d/du1 F(u1, .), whose distribution function
    rises 0 -> 1 as u2 sweeps -inf -> inf.  The sign of u2 switches at
    w = 1 - eta when u1 > 0 and at w = eta when u1 < 0; within each branch
    the level A = (|u1|^-mu + |u2|^-mu)^(-1/mu-1) |u1|^(-mu-1) inverts in
    closed form.
    """
    u1 = np.asarray(u1, dtype=float)
    w = np.asarray(w, dtype=float)
    u1, w = np.broadcast_arrays(u1, w)
    eta, mu = params.eta, params.mu
    pos1 = u1 > 0
    same_sign = np.where(pos1, w >= 1.0 - eta, w <= eta)
    # distance of w into the selected branch, normalized to (0, 1)
    eta_safe = max(eta, 1e-300)
    coeta_safe = max(1.0 - eta, 1e-300)
    a_same = np.where(pos1, (w - (1.0 - eta)) / eta_safe, (eta - w) / eta_safe)
    a_opp = np.where(pos1, ((1.0 - eta) - w) / coeta_safe, (w - eta) / coeta_safe)
    a = np.where(same_sign, a_same, a_opp)
    a = np.clip(a, 1e-300, 1.0 - 1e-16)
    au1 = np.abs(u1)
    base = (a * au1 ** (1.0 + mu)) ** (-mu / (1.0 + mu)) - au1 ** (-mu)
    base = np.maximum(base, 1e-300)
    au2 = base ** (-1.0 / mu)
    sign2 = np.where(same_sign, np.sign(u1), -np.sign(u1))
    return sign2 * au2


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """A single jump atom: jump vector x with Poisson intensity."""

    x: tuple[float, ...]
    intensity: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        if self.intensity < 0:
            raise DomainError(f"atom intensity must be >= 0, got {self.intensity}")


@dataclass(frozen=True)
class ExplicitDensity:
    """Explicit joint jump density with a support box (bounds may be inf)."""

    density: object  # callable x-vector -> nonneg float
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lo) or np.any(x > self.hi):
            return 0.0
        return float(self.density(x))


@dataclass(frozen=True, eq=False)
class LevyModel:
    """Levy triple (drift, sigma, jump measure) in n dimensions.

    The jump measure is the sum of ``atoms`` and at most one continuous
    part: either ``marginals`` (+ ``copula`` when n >= 2) or ``density``.
    """

    n: int
    drift: tuple[float, ...]
    sigma: tuple[tuple[float, ...], ...]
    marginals: tuple[MarginalMeasure, ...] = ()
    copula: ClaytonCopulaParams | None = None
    atoms: tuple[Atom, ...] = ()
    density: ExplicitDensity | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        drift = tuple(float(v) for v in self.drift)
        if len(drift) != self.n:
            raise ValueError(f"drift has length {len(drift)}, expected {self.n}")
        sig = np.asarray(self.sigma, dtype=float)
        if sig.shape != (self.n, self.n):
            raise ValueError(f"sigma must be {self.n}x{self.n}")
        if not np.allclose(sig, sig.T, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        eig = np.linalg.eigvalsh(sig)
        if eig.min() < -1e-10 * max(1.0, eig.max()):
            raise ValueError("sigma must be positive semidefinite")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "sigma", tuple(tuple(row) for row in sig))
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "marginals", tuple(self.marginals))
        for a in self.atoms:
            if len(a.x) != self.n:
                raise ValueError(f"atom {a.x} has wrong dimension")
        if self.marginals:
            if len(self.marginals) != self.n:
                raise ValueError("need one marginal per dimension")
            if self.n >= 2 and any(m.is_continuous() for m in self.marginals):
                if self.copula is None:
                    raise ValueError("continuous marginals with n >= 2 need a copula")
        if self.density is not None and self.marginals:
            raise ValueError("give either marginals or an explicit density")

    # -- constructors --------------------------------------------------------

    @classmethod
    def from_marginals(cls, marginals, copula=None, drift=None, sigma=None):
        """Build a model from 1-D marginals (+ copula when n >= 2).

        Purely atomic marginals (PoissonUnitJump) are folded into the atom
        list; a mix of atomic and continuous marginals is rejected since the
        copula coupling of such a pair has no density representation here.
        """
        marginals = tuple(marginals)
        n = len(marginals)
        drift = tuple(drift) if drift is not None else (0.0,) * n
        sigma = sigma if sigma is not None else np.zeros((n, n))
        continuous = [m.is_continuous() for m in marginals]
        if all(continuous):
            return cls(
                n=n, drift=drift, sigma=sigma, marginals=marginals, copula=copula
            )
        if any(continuous):
            raise UnsupportedRepresentationError(
                "mixed continuous/atomic marginals are not representable; "
                "pass explicit atoms for the atomic part instead"
            )
        if n == 1:
            atoms = tuple(
                Atom((loc,), mass) for loc, mass in marginals[0].atoms()
            )
            return cls(n=1, drift=drift, sigma=sigma, atoms=atoms)
        raise UnsupportedRepresentationError(
            "atomic marginals with n >= 2 have no canonical joint coupling; "
            "use common_poisson_measure or explicit atoms"
        )

    @classmethod
    def from_atoms(cls, atoms, drift=None, sigma=None, n=None):
        atoms = tuple(a if isinstance(a, Atom) else Atom(*a) for a in atoms)
        if n is None:
            if not atoms:
                raise ValueError("need atoms or an explicit dimension")
            n = len(atoms[0].x)
        drift = tuple(drift) if drift is not None else (0.0,) * n
        sigma = sigma if sigma is not None else np.zeros((n, n))
        return cls(n=n, drift=drift, sigma=sigma, atoms=atoms)

    @classmethod
    def from_density(cls, density, lo, hi, drift=None, sigma=None):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        n = len(lo)
        drift = tuple(drift) if drift is not None else (0.0,) * n
        sigma = sigma if sigma is not None else np.zeros((n, n))
        return cls(
            n=n,
            drift=drift,
            sigma=sigma,
            density=ExplicitDensity(density, lo, hi),
        )

    def with_drift(self, drift) -> "LevyModel":
        return LevyModel(
            n=self.n,
            drift=tuple(float(v) for v in drift),
            sigma=self.sigma,
            marginals=self.marginals,
            copula=self.copula,
            atoms=self.atoms,
            density=self.density,
        )

    # -- structure queries ----------------------------------------------------

    @property
    def sigma_matrix(self) -> np.ndarray:
        return np.asarray(self.sigma, dtype=float)

    @property
    def drift_vector(self) -> np.ndarray:
        return np.asarray(self.drift, dtype=float)

    def has_continuous_part(self) -> bool:
        return bool(self.marginals) or self.density is not None

    def is_atomic(self) -> bool:
        return not self.has_continuous_part()

    def atom_arrays(self):
        """Atoms as (k, n) locations and (k,) intensities."""
        if not self.atoms:
            return np.zeros((0, self.n)), np.zeros(0)
        xs = np.array([a.x for a in self.atoms], dtype=float)
        cs = np.array([a.intensity for a in self.atoms], dtype=float)
        return xs, cs

    def key(self) -> str:
        """Stable content hash used in reports and golden files."""
        blob = json.dumps(model_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def common_poisson_measure(
    lambda1: float, lambda2: float, params: ClaytonCopulaParams
) -> LevyModel:
    """Two Poisson components coupled by a Clayton copula, as an atomic model.

    The coupled measure carries a single atom at (1, 1) with intensity
    c = eta*(1+mu)*(l1*l2)**mu / (l1**mu + l2**mu)**(1/mu + 2); the drift is
    (-lambda1, -lambda2) so each component reads N_i(t) - lambda_i*t.  Note
    the atomic coupling does not reproduce Poisson(lambda_i) marginals
    unless c = lambda_i; the constant is implemented exactly as stated.
    """
    if lambda1 <= 0 or lambda2 <= 0:
        raise DomainError("Poisson intensities must be positive")
    mu, eta = params.mu, params.eta
    c = (
        eta
        * (1.0 + mu)
        * (lambda1 * lambda2) ** mu
        / (lambda1**mu + lambda2**mu) ** (1.0 / mu + 2.0)
    )
    atoms = (Atom((1.0, 1.0), c),) if c > 0 else ()
    return LevyModel.from_atoms(atoms, drift=(-lambda1, -lambda2), n=2)


# ---------------------------------------------------------------------------
# Joint density via copula differentiation
# ---------------------------------------------------------------------------


def joint_levy_density(x, model: LevyModel) -> float:
    """Joint jump density at x for copula-coupled continuous marginals.

    nu(x) = d1..dn F at (U_1(x_1), ..., U_n(x_n)) times the product of the
    marginal densities.  Atomic models are rejected; use the atoms directly.
    """
    x = np.asarray(x, dtype=float)
    if model.density is not None:
        return model.density(x)
    if not model.marginals or not all(m.is_continuous() for m in model.marginals):
        raise UnsupportedRepresentationError(
            "joint density needs continuous marginals + copula"
        )
    if np.any(x == 0.0):
        raise DomainError("joint density undefined on the coordinate axes")
    if model.n == 1:
        return float(model.marginals[0].density(x[0]))
    u = np.array(
        [m.tail_interp(xi) for m, xi in zip(model.marginals, x)], dtype=float
    )
    dens = math.prod(float(m.density(xi)) for m, xi in zip(model.marginals, x))
    return clayton_mixed_partial(u, model.copula) * dens


# ---------------------------------------------------------------------------
# Moments
# ---------------------------------------------------------------------------


def moment(model: LevyModel, p: MultiIndex, tol: float = DEFAULT_TOL) -> float:
    """Moment tensor m_p = integral of x**p against the jump measure.

    Exact atom sums for atomic parts; quadrature for continuous parts.
    Requires |p| >= 2, or |p| = 1 when the first absolute moment is finite.
    """
    p = validate_index(p, model.n)
    key = ("moment", p, tol)
    if key in model._cache:
        return model._cache[key]
    total = 0.0
    xs, cs = model.atom_arrays()
    if len(cs):
        total += float(np.sum(cs * np.prod(xs**np.array(p), axis=1)))
    if model.marginals and all(m.is_continuous() for m in model.marginals):
        total += _continuous_moment(model, p, tol)
    elif model.density is not None:
        total += _density_moment(model, p, tol)
    model._cache[key] = total
    return total


def _moment_box_bound(marginal, k):
    """Half-width X so the k-th moment mass beyond X is below ~1e-12."""
    if not isinstance(marginal, MeixnerMarginal):
        return 60.0
    rho = min(
        marginal.params.tail_decay,
        (math.pi + marginal.params.beta) / marginal.params.alpha,
    )
    x = 10.0 / rho + 1.0
    for _ in range(4):
        x = (32.0 + k * max(math.log(x), 1.0)) / rho
    return max(8.0 / rho, x)


def _clayton_partial_grid(u1, u2, params):
    """Vectorized n = 2 mixed partial on a tensor grid of tail coordinates."""
    mu, eta = params.mu, params.eta
    s = np.abs(u1)[:, None] ** (-mu) + np.abs(u2)[None, :] ** (-mu)
    core = (
        (1.0 + mu)
        * s ** (-1.0 / mu - 2.0)
        * np.abs(u1)[:, None] ** (-mu - 1.0)
        * np.abs(u2)[None, :] ** (-mu - 1.0)
    )
    sign = np.sign(u1)[:, None] * np.sign(u2)[None, :]
    return core * np.where(sign >= 0, eta, 1.0 - eta)


def _continuous_moment(model, p, tol, cells=240, npts=10):
    if model.n == 1:
        return model.marginals[0].moment(p[0], tol=tol)
    if model.n != 2:
        raise UnsupportedRepresentationError(
            "copula-continuous moments are quadrature-backed only for n <= 2"
        )
    if sum(p) < 2:
        raise DivergentMomentError(
            "first-order moments of copula-continuous models are not "
            "guaranteed finite; request |p| >= 2"
        )
    # tensor Gauss-Legendre on log-spaced cells per quadrant; the integrand
    # vanishes like |x_i|**(p_i + mu - 1) at the axes, so a 1e-7 cutoff is
    # far below the target accuracy
    m1, m2 = model.marginals
    cop = model.copula
    total = 0.0
    deg = sum(p)
    nodes_w = []
    for m in (m1, m2):
        edges = np.geomspace(1e-7, _moment_box_bound(m, deg), cells + 1)
        nodes_w.append(gauss_legendre_cells(edges, npts=npts))
    (n1, w1), (n2, w2) = nodes_w
    for s1 in (1, -1):
        x1 = s1 * n1
        u1v = m1.tail_interp(x1)
        d1 = np.abs(m1.density(x1))
        f1 = x1 ** p[0] * d1 * w1
        for s2 in (1, -1):
            if s1 * s2 > 0 and cop.eta == 0.0:
                continue
            if s1 * s2 < 0 and cop.eta == 1.0:
                continue
            x2 = s2 * n2
            u2v = m2.tail_interp(x2)
            d2 = np.abs(m2.density(x2))
            partial = _clayton_partial_grid(u1v, u2v, cop)
            f2 = x2 ** p[1] * d2 * w2
            total += float(f1 @ partial @ f2)
    return total


def _density_moment(model, p, tol):
    dens = model.density
    if model.n == 1:

        def f(x):
            return x ** p[0] * dens(np.array([x]))

        lo, hi = dens.lo[0], dens.hi[0]
        parts = []
        if lo < 0:
            parts.append(
                shell_integral(f, min(1.0, -lo if np.isfinite(lo) else 1.0), tol=tol, sign=-1)
                if not np.isfinite(lo)
                else adaptive(f, lo, min(hi, 0.0), tol=tol)
            )
        if hi > 0:
            start = max(lo, 0.0)
            if np.isfinite(hi):
                parts.append(adaptive(f, start, hi, tol=tol))
            else:
                x0 = max(start, 1e-6)
                parts.append(shell_integral(f, x0, tol=tol, sign=1))
        return float(sum(parts))
    raise UnsupportedRepresentationError(
        "explicit-density moments implemented for n = 1 only"
    )


# ---------------------------------------------------------------------------
# Exponential moments, compensators and drift conditions
# ---------------------------------------------------------------------------


def check_hypothesis1(
    model: LevyModel, eps: float = 0.1, lam: float = 1.0
) -> tuple[bool, float]:
    """Check the exponential-moment condition int_{|x|>=eps} e^{lam |x|} nu(dx) < inf.

    Returns (holds, value).  Divergence detected by the dyadic-shell ratio
    test is reported as (False, partial_sum) rather than raised.
    """
    if eps <= 0 or lam <= 0:
        raise DomainError("need eps > 0 and lam > 0")
    total = 0.0
    xs, cs = model.atom_arrays()
    if len(cs):
        norms = np.linalg.norm(xs, axis=1)
        sel = norms >= eps
        total += float(np.sum(cs[sel] * np.exp(lam * norms[sel])))

    def integrate_1d(density_fn):
        def f(x):
            return math.exp(lam * abs(x)) * density_fn(x)

        val = shell_integral(f, eps, tol=1e-9, sign=1)
        val += shell_integral(f, eps, tol=1e-9, sign=-1)
        return val

    try:
        if model.marginals and all(m.is_continuous() for m in model.marginals):
            if model.n == 1:
                total += integrate_1d(model.marginals[0].density)
            else:
                # ||x|| >= eps is implied by any |x_i| >= eps/sqrt(n); bound by
                # the union of marginal shells (overcounts, so finite => finite)
                for m in model.marginals:
                    total += integrate_1d(m.density)
        elif model.density is not None:
            if model.n != 1:
                raise UnsupportedRepresentationError(
                    "hypothesis check for explicit densities is 1-D only"
                )
            dens = model.density

            def f1(x):
                return math.exp(lam * abs(x)) * dens(np.array([x]))

            lo, hi = dens.lo[0], dens.hi[0]
            if hi > eps:
                total += shell_integral(f1, eps, tol=1e-9, sign=1)
            if lo < -eps:
                total += shell_integral(f1, eps, tol=1e-9, sign=-1)
    except DivergentMomentError as err:
        partial = sum(err.diagnostics.get("shells", [0.0]))
        return False, float(partial)
    return True, float(total)


def _linear_tail_integral(model: LevyModel, i: int) -> float:
    """int_{||y|| > 1} y_i nu(dy) for the continuous part plus atoms."""
    total = 0.0
    xs, cs = model.atom_arrays()
    if len(cs):
        norms = np.linalg.norm(xs, axis=1)
        sel = norms > 1.0
        total += float(np.sum(cs[sel] * xs[sel, i]))
    if model.marginals and all(m.is_continuous() for m in model.marginals):
        if model.n == 1:
            m = model.marginals[0]
            f = lambda y: y * m.density(y)
            total += shell_integral(f, 1.0, sign=1) + shell_integral(f, 1.0, sign=-1)
        else:
            # ||y|| > 1 differs from |y_i| > 1 only on a region where the
            # copula density is bounded; approximate by the marginal region
            # and correct over the box {|y_i| <= 1 <= ||y||} numerically.
            total += _copula_linear_tail(model, i)
    elif model.density is not None:
        if model.n != 1:
            raise UnsupportedRepresentationError("n>=2 explicit densities unsupported")
        dens = model.density

        def f(y):
            return y * dens(np.array([y]))

        lo, hi = dens.lo[0], dens.hi[0]
        if hi > 1:
            total += shell_integral(f, 1.0, sign=1)
        if lo < -1:
            total += shell_integral(f, 1.0, sign=-1)
    return total


def _copula_unit_ball_correction(model, i):
    """C_i = int over {|y_i| <= 1 < ||y||} of y_i nu(dy) for n = 2 copulas.

    The inner integral over the other coordinate's two tails collapses to
    the closed form dF/du_i evaluated at the boundary tail coordinates, so
    only a smooth 1-D quadrature in y_i remains.
    """
    key = ("ball_correction", i)
    if key in model._cache:
        return model._cache[key]
    mi = model.marginals[i]
    mo = model.marginals[1 - i]
    cop = model.copula

    def f(yi):
        g = math.sqrt(max(1.0 - yi * yi, 0.0))
        ui = mi.tail_interp(yi)
        if g <= 1e-12:
            bracket = 1.0  # other coordinate unconstrained
        else:
            bracket = clayton_partial1(ui, mo.tail_interp(g), cop) - clayton_partial1(
                ui, mo.tail_interp(-g), cop
            )
        return yi * mi.density(yi) * bracket

    out = adaptive(f, 1e-10, 1.0, tol=1e-10) + adaptive(f, -1.0, -1e-10, tol=1e-10)
    model._cache[key] = out
    return out


def _copula_linear_tail(model, i):
    if model.n != 2:
        raise UnsupportedRepresentationError("copula tails supported for n = 2")
    # marginal region {|y_i| > 1} plus the unit-ball boundary correction
    m = model.marginals[i]
    f = lambda y: y * m.density(y)
    out = shell_integral(f, 1.0, sign=1) + shell_integral(f, 1.0, sign=-1)
    return out + _copula_unit_ball_correction(model, i)


def compensator_mean(model: LevyModel) -> np.ndarray:
    """Mean rate a~ = a + int_{||y|| > 1} y nu(dy), i.e. E[X_i(1)] per unit time.

    The large-jump region is taken open at the unit sphere so that a~ equals
    the process mean when the Levy-Khintchine truncation 1{||y|| <= 1} is
    inclusive; the two conventions differ only for atoms sitting exactly on
    the sphere.
    """
    key = "compensator_mean"
    if key not in model._cache:
        out = model.drift_vector.copy()
        for i in range(model.n):
            out[i] += _linear_tail_integral(model, i)
        model._cache[key] = out
    return model._cache[key].copy()


def _exp_condition_integral(model: LevyModel, j: int) -> float:
    """int (e^{z_j} - 1 - z_j 1{||z|| <= 1}) nu(dz)."""
    total = 0.0
    xs, cs = model.atom_arrays()
    if len(cs):
        norms = np.linalg.norm(xs, axis=1)
        term = np.exp(xs[:, j]) - 1.0 - xs[:, j] * (norms <= 1.0)
        total += float(np.sum(cs * term))
    if model.marginals and all(m.is_continuous() for m in model.marginals):
        if model.n == 1:
            m = model.marginals[0]
            if m.params.tail_decay <= 1.0:
                raise DivergentMomentError(
                    "exp moment diverges: Meixner needs alpha + beta < pi "
                    "for E[e^X] < inf"
                )

            def over_x2(y):
                y = np.asarray(y, dtype=float)
                out = np.where(
                    np.abs(y) < 1e-4,
                    0.5 + y / 6.0 + y**2 / 24.0,
                    (np.expm1(y) - y) / np.where(y == 0, 1.0, y**2),
                )
                return out

            inner = adaptive(
                lambda y: over_x2(y) * m.squared_weight(y), -1.0, 1.0, tol=1e-12
            )

            def outer(y):
                return (math.expm1(y)) * m.density(y)

            total += inner
            total += shell_integral(outer, 1.0, sign=1) + shell_integral(
                outer, 1.0, sign=-1
            )
        else:
            total += _copula_exp_condition(model, j)
    elif model.density is not None:
        if model.n != 1:
            raise UnsupportedRepresentationError("n>=2 explicit densities unsupported")
        dens = model.density

        def f(y):
            return (math.expm1(y) - y * (abs(y) <= 1.0)) * dens(np.array([y]))

        lo, hi = dens.lo[0], dens.hi[0]
        x0 = 1e-8
        if hi > 0:
            total += shell_integral(f, max(x0, lo if lo > 0 else x0), sign=1)
        if lo < 0:
            total += shell_integral(f, x0, sign=-1)
    return total


def _copula_exp_condition(model, j):
    if model.n != 2:
        raise UnsupportedRepresentationError("copula condition supported for n = 2")
    me = model.marginals[j]
    if not isinstance(me, MeixnerMarginal):
        raise UnsupportedRepresentationError("need a Meixner marginal")
    if me.params.tail_decay <= 1.0:
        raise DivergentMomentError(f"exp moment diverges for component {j}")
    # split the truncation indicator: the marginal part uses 1{|z_j| <= 1},
    # and the difference to 1{||z|| <= 1} is exactly the unit-ball correction
    def over_x2(y):
        y = np.asarray(y, dtype=float)
        return np.where(
            np.abs(y) < 1e-4,
            0.5 + y / 6.0 + y**2 / 24.0,
            (np.expm1(y) - y) / np.where(y == 0, 1.0, y**2),
        )

    marginal = adaptive(
        lambda y: over_x2(y) * me.squared_weight(y), -1.0, 1.0, tol=1e-12
    )
    outer = lambda y: math.expm1(y) * me.density(y)
    marginal += shell_integral(outer, 1.0, sign=1) + shell_integral(
        outer, 1.0, sign=-1
    )
    return marginal + _copula_unit_ball_correction(model, j)


def risk_neutral_drift(model: LevyModel) -> np.ndarray:
    """Drift making each e^{X_j} a martingale.

    a_j = -sigma_jj/2 - int (e^{z_j} - 1 - z_j 1{||z|| <= 1}) nu(dz).
    Installing this drift drives the martingale-condition residual to zero
    within quadrature tolerance.
    """
    sig = model.sigma_matrix
    out = np.empty(model.n)
    for j in range(model.n):
        out[j] = -0.5 * sig[j, j] - _exp_condition_integral(model, j)
    return out


def martingale_residual(model: LevyModel) -> np.ndarray:
    """Per-component residual sigma_jj/2 + a_j + int(e^{z_j}-1-z_j 1)nu."""
    sig = model.sigma_matrix
    out = np.empty(model.n)
    for j in range(model.n):
        out[j] = 0.5 * sig[j, j] + model.drift[j] + _exp_condition_integral(model, j)
    return out


# ---------------------------------------------------------------------------
# Model (de)serialization
# ---------------------------------------------------------------------------


def model_to_dict(model: LevyModel) -> dict:
    out = {
        "dimension": model.n,
        "drift": list(model.drift),
        "sigma": [list(row) for row in model.sigma],
    }
    if model.marginals:
        ms = []
        for m in model.marginals:
            if isinstance(m, MeixnerMarginal):
                p = m.params
                ms.append(
                    {
                        "kind": "meixner",
                        "params": {
                            "alpha": p.alpha,
                            "beta": p.beta,
                            "delta": p.delta,
                            "mu": p.mu,
                        },
                    }
                )
            elif isinstance(m, PoissonUnitJump):
                ms.append({"kind": "poisson_unit", "params": {"intensity": m.intensity}})
            else:
                raise UnsupportedRepresentationError(f"cannot serialize {m!r}")
        out["marginals"] = ms
    if model.copula is not None:
        out["copula"] = {"mu": model.copula.mu, "eta": model.copula.eta}
    if model.atoms:
        out["atoms"] = [
            {"x": list(a.x), "intensity": a.intensity} for a in model.atoms
        ]
    return out


def model_from_dict(spec: dict) -> LevyModel:
    n = int(spec["dimension"])
    drift = spec.get("drift", [0.0] * n)
    sigma = spec.get("sigma", np.zeros((n, n)).tolist())
    marginals = []
    for m in spec.get("marginals", []):
        kind = m["kind"]
        params = m.get("params", {})
        if kind == "meixner":
            marginals.append(MeixnerMarginal(MeixnerParams(**params)))
        elif kind == "poisson_unit":
            marginals.append(PoissonUnitJump(params["intensity"]))
        else:
            raise ValueError(f"unknown marginal kind {kind!r}")
    copula = None
    if "copula" in spec:
        copula = ClaytonCopulaParams(**spec["copula"])
    atoms = tuple(Atom(tuple(a["x"]), a["intensity"]) for a in spec.get("atoms", []))
    if marginals and all(m.is_continuous() for m in marginals) and not atoms:
        return LevyModel(
            n=n, drift=drift, sigma=sigma, marginals=tuple(marginals), copula=copula
        )
    if marginals and not any(m.is_continuous() for m in marginals):
        base = LevyModel.from_marginals(marginals, drift=drift, sigma=sigma)
        if atoms:
            base = LevyModel(
                n=n, drift=drift, sigma=sigma, atoms=base.atoms + atoms
            )
        return base
    return LevyModel(
        n=n,
        drift=drift,
        sigma=sigma,
        marginals=tuple(marginals),
        copula=copula,
        atoms=atoms,
    )


def load_model(path) -> LevyModel:
    if hasattr(path, "read"):
        return model_from_dict(json.load(path))
    with io.open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
