"""Shared desk-scale fixture models used across the test suite."""

import numpy as np

from levybsde.models import (
    Atom,
    ClaytonCopulaParams,
    LevyModel,
    MeixnerMarginal,
    MeixnerParams,
    common_poisson_measure,
)

MEIXNER_STD = MeixnerParams(alpha=1.0, beta=0.0, delta=1.0)
MEIXNER_SKEW = MeixnerParams(alpha=1.0, beta=0.5, delta=1.0)
MEIXNER_MARKET = MeixnerParams(alpha=0.5, beta=0.0, delta=1.0)


def meixner_model(params=MEIXNER_STD, drift=(0.0,)):
    return LevyModel(
        n=1, drift=drift, sigma=[[0.0]], marginals=(MeixnerMarginal(params),)
    )


def poisson_copula_model(lam1=1.0, lam2=1.0, mu=1.0, eta=1.0):
    """Single common atom at (1,1); degenerate degree-1 block by design."""
    return common_poisson_measure(lam1, lam2, ClaytonCopulaParams(mu=mu, eta=eta))


def two_poisson_model(lam_a=0.6, lam_b=0.4, lam_c=0.3):
    """Common + idiosyncratic unit jumps; the standard 2-D atomic fixture.

    Component i is a compensated Poisson process of rate lam_i + lam_c,
    with lam_c of it shared.  Three atoms span a 3-dimensional jump space,
    so degree-1 directions are independent and one genuine degree-2
    martingale survives.
    """
    drift = (-(lam_a + lam_c), -(lam_b + lam_c))
    return LevyModel.from_atoms(
        [Atom((1.0, 0.0), lam_a), Atom((0.0, 1.0), lam_b), Atom((1.0, 1.0), lam_c)],
        drift=drift,
    )


def meixner_copula_model(mu=1.0, eta=1.0):
    return LevyModel(
        n=2,
        drift=(0.0, 0.0),
        sigma=np.zeros((2, 2)),
        marginals=(MeixnerMarginal(MEIXNER_STD), MeixnerMarginal(MEIXNER_STD)),
        copula=ClaytonCopulaParams(mu=mu, eta=eta),
    )
