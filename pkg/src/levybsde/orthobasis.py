"""Orthogonal basis of compensated jump monomials.

Monomials are ordered by graded lex; the Gram matrix of the pairing
``<Y^p, Y^q> = m_{p+q} (+ sigma_ij on the degree-1 block)`` is
orthogonalized by a monic Gram-Schmidt sweep with compensated-summation
accumulation.  Directions whose residual norm collapses (Poisson-type
degeneracies, comonotone atoms) are pruned and skipped by later
projections.

Two views coexist: the *monic* basis (leading coefficient 1, stored in the
coefficient table) and the *orthonormal* view obtained by dividing each
element by its norm, which is what makes predictable brackets equal
``delta_{p,q} * t``.  Solvers work in the orthonormal view; polynomial
evaluation and the degree-1 inverse transform use the monic table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBasisError, QuadratureError
from .multiindex import MultiIndex, degree, graded_lex_enumerate, unit_index
from .models import LevyModel, moment

__all__ = [
    "OrthoBasis",
    "gram_matrix",
    "gram_schmidt",
    "build_basis",
    "degree1_inverse",
    "evaluate_polynomial",
    "evaluate_ptilde",
    "span_residuals",
    "export_basis_csv",
]

DEFAULT_PRUNE_TOL = 1e-12
MAX_DEGREE = 6


def gram_matrix(model: LevyModel, max_degree: int, tol: float = 1e-10) -> np.ndarray:
    """Gram matrix of the monomial pairing, graded lex order.

    Entry (p, q) is m_{p+q}; when both indices have degree 1 (p = e_i,
    q = e_j) the Brownian block adds sigma_ij.  Requires all moments with
    |p + q| <= 2 * max_degree to be finite.
    """
    if max_degree > MAX_DEGREE:
        raise ValueError(
            f"max_degree {max_degree} exceeds the supported cap {MAX_DEGREE}; "
            "moment Gram matrices degrade beyond it"
        )
    order = graded_lex_enumerate(model.n, max_degree)
    size = len(order)
    sig = model.sigma_matrix
    g = np.empty((size, size))
    cache: dict[MultiIndex, float] = {}
    for i, p in enumerate(order):
        for j in range(i, size):
            q = order[j]
            s = tuple(a + b for a, b in zip(p, q))
            if s not in cache:
                cache[s] = moment(model, s, tol=tol)
            val = cache[s]
            if degree(p) == 1 and degree(q) == 1:
                val += sig[p.index(1), q.index(1)]
            g[i, j] = g[j, i] = val
    return g


@dataclass(frozen=True)
class OrthoBasis:
    """Monic orthogonal basis over jump monomials of degree 1..D."""

    n: int
    max_degree: int
    order: tuple[MultiIndex, ...]
    coeffs: np.ndarray  # coeffs[:, j] = monomial coefficients of element j
    norms2: np.ndarray  # residual norm^2 per element (0 where pruned)
    kept: np.ndarray  # bool mask
    gram: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def kept_indices(self) -> list[MultiIndex]:
        return [p for p, k in zip(self.order, self.kept) if k]

    def slot(self, p: MultiIndex) -> int:
        key = "slots"
        if key not in self._cache:
            self._cache[key] = {q: i for i, q in enumerate(self.order)}
        try:
            return self._cache[key][tuple(p)]
        except KeyError:
            raise KeyError(f"index {p} not in basis order") from None

    def coefficient_table(self, p: MultiIndex) -> dict[MultiIndex, float]:
        """Nonzero monomial coefficients {q: c_q} of element p (monic: c_p = 1)."""
        j = self.slot(p)
        col = self.coeffs[:, j]
        return {
            q: float(col[i]) for i, q in enumerate(self.order) if col[i] != 0.0
        }

    def norm(self, p: MultiIndex) -> float:
        return math.sqrt(max(self.norms2[self.slot(p)], 0.0))

    def kept_upto(self, max_degree: int) -> list[MultiIndex]:
        return [p for p in self.kept_indices if degree(p) <= max_degree]


def gram_schmidt(
    gram: np.ndarray,
    order: list[MultiIndex],
    tol: float = DEFAULT_PRUNE_TOL,
    process_order: list[int] | None = None,
) -> OrthoBasis:
    """Monic Gram-Schmidt sweep over the graded-lex-ordered Gram matrix.

    Each element keeps leading coefficient 1 and is projected against every
    *kept* earlier element.  An element whose residual norm^2 falls below
    ``tol`` times the largest raw diagonal at its degree is pruned and
    ignored afterwards.  Inner products accumulate with math.fsum since
    moment Gram matrices are badly conditioned.

    ``process_order`` may permute positions *within* a degree block (used by
    the span-invariance diagnostics); leading coefficients stay monic.
    """
    gram = np.asarray(gram, dtype=float)
    size = gram.shape[0]
    if gram.shape != (size, size) or size != len(order):
        raise ValueError("gram matrix and order length mismatch")
    if not np.allclose(gram, gram.T, atol=1e-12 * (1 + np.abs(gram).max())):
        raise ValueError("gram matrix must be symmetric")
    degs = np.array([degree(p) for p in order])
    n = len(order[0])
    max_degree = int(degs.max())

    if process_order is None:
        process_order = list(range(size))
    else:
        process_order = list(process_order)
        if sorted(process_order) != list(range(size)):
            raise ValueError("process_order must be a permutation")
        if any(degs[idx] != degs[pos] for pos, idx in enumerate(process_order)):
            raise ValueError("process_order may only permute within a degree")

    # degree-relative pruning scale from the raw diagonal; using the raw
    # second moments avoids a zero threshold when a whole degree degenerates
    scale = np.zeros(size)
    for d in range(1, max_degree + 1):
        block = degs == d
        scale[block] = np.max(np.abs(np.diag(gram)[block]))

    coeffs = np.zeros((size, size))
    norms2 = np.zeros(size)
    kept = np.zeros(size, dtype=bool)
    kept_slots: list[int] = []

    def gdot(a, b):
        # compensated accumulation of a' G b over the joint support
        ia = np.nonzero(a)[0]
        terms = []
        for i in ia:
            gi = gram[i]
            terms.extend(a[i] * gi[j] * b[j] for j in np.nonzero(b)[0])
        return math.fsum(terms)

    for j in process_order:
        vec = np.zeros(size)
        vec[j] = 1.0
        for k in kept_slots:
            proj = gdot(coeffs[:, k], vec) / norms2[k]
            vec -= proj * coeffs[:, k]
        vec[j] = 1.0  # keep exactly monic against accumulated roundoff
        res2 = gdot(vec, vec)
        if res2 < -tol * max(scale[j], 1.0):
            raise QuadratureError(
                f"negative residual norm^2 {res2:.3e} at index {order[j]}; "
                "gram matrix is not positive semidefinite",
                diagnostics={"index": order[j], "norm2": res2},
            )
        if res2 < tol * scale[j]:
            norms2[j] = 0.0
            kept[j] = False
            continue
        coeffs[:, j] = vec
        norms2[j] = res2
        kept[j] = True
        kept_slots.append(j)

    return OrthoBasis(
        n=n,
        max_degree=max_degree,
        order=tuple(order),
        coeffs=coeffs,
        norms2=norms2,
        kept=kept,
        gram=gram,
    )


def build_basis(
    model: LevyModel, max_degree: int, tol: float = DEFAULT_PRUNE_TOL
) -> OrthoBasis:
    """Convenience pipeline: enumerate indices, build Gram, orthogonalize."""
    order = graded_lex_enumerate(model.n, max_degree)
    return gram_schmidt(gram_matrix(model, max_degree), order, tol=tol)


def degree1_inverse(basis: OrthoBasis) -> np.ndarray:
    """Inverse of the degree-1 coefficient matrix.

    Row i of the degree-1 block holds the coefficients of element e_i on
    the monomials e_j; the inverse reconstructs each compensated component
    from the degree-1 basis elements.  Raises DegenerateBasisError when a
    degree-1 direction was pruned (perfectly dependent components).
    """
    key = "deg1inv"
    if key in basis._cache:
        return basis._cache[key].copy()
    n = basis.n
    units = [unit_index(n, i) for i in range(n)]
    slots = [basis.slot(e) for e in units]
    if not all(basis.kept[s] for s in slots):
        dropped = [units[i] for i, s in enumerate(slots) if not basis.kept[s]]
        raise DegenerateBasisError(
            f"degree-1 directions {dropped} are degenerate (pruned); the "
            "components are linearly dependent under the jump measure"
        )
    c1 = np.empty((n, n))
    for i, si in enumerate(slots):
        for j, sj in enumerate(slots):
            c1[i, j] = basis.coeffs[sj, si]
    inv = np.linalg.inv(c1)
    basis._cache[key] = inv
    return inv.copy()


def _monomials(order, x):
    """Monomial values x**q for every q in order; x is (..., n)."""
    x = np.asarray(x, dtype=float)
    powers = np.array(order)  # (size, n)
    return np.prod(x[..., None, :] ** powers[None, :, :], axis=-1)


def evaluate_polynomial(basis: OrthoBasis, p: MultiIndex, x) -> np.ndarray:
    """Value of the monic orthogonal polynomial for index p at x.

    Leading monomial x**p; no constant term, so the value at 0 is 0.
    """
    j = basis.slot(p)
    if not basis.kept[j]:
        raise DegenerateBasisError(f"index {p} was pruned as degenerate")
    col = basis.coeffs[:, j]
    vals = _monomials(basis.order, x) @ col
    return float(vals) if np.ndim(vals) == 0 else vals


def evaluate_ptilde(basis: OrthoBasis, p: MultiIndex, x) -> np.ndarray:
    """Polynomial of index p with its degree-1 coefficients removed.

    The leading coefficient survives even when |p| = 1, so ptilde for a
    unit index is the plain coordinate monomial.
    """
    j = basis.slot(p)
    if not basis.kept[j]:
        raise DegenerateBasisError(f"index {p} was pruned as degenerate")
    col = basis.coeffs[:, j].copy()
    for i, q in enumerate(basis.order):
        if degree(q) == 1 and i != j:
            col[i] = 0.0
    vals = _monomials(basis.order, x) @ col
    return float(vals) if np.ndim(vals) == 0 else vals


def degree1_decomposition(basis: OrthoBasis, p: MultiIndex):
    """Split element p into (degree >= 2 coefficient column, degree-1 row).

    Returns (col_high, ell) where col_high keeps only |q| >= 2 coefficients
    and ell[i] is the coefficient on the i-th coordinate monomial (for
    |p| = 1 this includes the monic leading 1).
    """
    j = basis.slot(p)
    col = basis.coeffs[:, j].copy()
    ell = np.zeros(basis.n)
    for i, q in enumerate(basis.order):
        if degree(q) == 1:
            ell[q.index(1)] = col[i]
            col[i] = 0.0
    return col, ell


def span_residuals(basis_a: OrthoBasis, basis_b: OrthoBasis) -> dict[int, float]:
    """Per-degree worst relative G-projection residual between two bases.

    For every kept element of A at degree d, project onto the span of B's
    kept degree-d elements under the shared Gram pairing and report
    ||a - proj a||_G / ||a||_G; near-zero residuals certify that the two
    runs span the same per-degree subspaces (form uniqueness).
    """
    if basis_a.order != basis_b.order:
        raise ValueError("bases must share the same index order")
    g = basis_a.gram
    out: dict[int, float] = {}
    for d in range(1, basis_a.max_degree + 1):
        va = [
            basis_a.coeffs[:, basis_a.slot(p)]
            for p in basis_a.kept_indices
            if degree(p) == d
        ]
        vb = [
            basis_b.coeffs[:, basis_b.slot(p)]
            for p in basis_b.kept_indices
            if degree(p) == d
        ]
        if len(va) != len(vb):
            out[d] = float("inf")
            continue
        if not va:
            out[d] = 0.0
            continue
        b = np.column_stack(vb)
        gb = g @ b
        gram_b = b.T @ gb
        worst = 0.0
        for a in va:
            rhs = gb.T @ a
            w = np.linalg.lstsq(gram_b, rhs, rcond=None)[0]
            resid = a - b @ w
            na = float(a @ g @ a)
            nr = float(resid @ g @ resid)
            worst = max(worst, math.sqrt(max(nr, 0.0) / na))
        out[d] = worst
    return out


def export_basis_csv(basis: OrthoBasis, path, norms_path=None):
    """Write the coefficient table as CSV (degree, p, q, c_q) + norms sidecar."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "p", "q", "c_q"])
        for p in basis.kept_indices:
            for q, c in sorted(
                basis.coefficient_table(p).items(), key=lambda kv: basis.slot(kv[0])
            ):
                w.writerow([degree(p), _fmt_idx(p), _fmt_idx(q), repr(c)])
    if norms_path is not None:
        with open(norms_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "kept", "norm2"])
            for i, p in enumerate(basis.order):
                w.writerow([_fmt_idx(p), int(basis.kept[i]), repr(float(basis.norms2[i]))])


def _fmt_idx(p) -> str:
    return "(" + " ".join(str(v) for v in p) + ")"
