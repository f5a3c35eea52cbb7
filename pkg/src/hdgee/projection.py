"""Sparse projection directions via constrained l1 minimization.

Given the sensitivity matrix S and a loading vector xi, the raw direction
solves

    min ||omega||_1  subject to  ||S omega - xi||_inf <= slack,

posed as a linear program in the split variables (omega+, omega-) >= 0
and solved with the dense simplex. The normalized direction divides by
the quadratic form omega' S omega, which must be bounded away from zero
for the normalization to make sense; a zero solution (slack too large)
is reported as an error rather than propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateDirectionError, NumericalError
from .simplex import LpStandardProblem, solve_lp

__all__ = [
    "ProjectionDirection",
    "direction_problem",
    "estimate_direction",
    "default_slack_grid",
]

QUAD_FORM_FLOOR = 1e-10
FEASIBILITY_SLOP = 1e-8


@dataclass
class ProjectionDirection:
    """Raw and normalized direction for one loading vector."""

    omega_tilde: np.ndarray
    omega_hat: np.ndarray
    quad_form: float
    lambda_prime: float


def direction_problem(S, xi, lambda_prime: float) -> LpStandardProblem:
    """The split-variable LP whose solution is the raw direction.

    Variables are (omega+, omega-) with objective 1'(omega+ + omega-) and
    two-sided constraints xi - slack <= S (omega+ - omega-) <= xi + slack.
    """
    S = np.asarray(S, dtype=float)
    xi = np.asarray(xi, dtype=float)
    p = S.shape[0]
    if S.shape != (p, p):
        raise DataError(f"S must be square, got {S.shape}")
    if xi.shape != (p,):
        raise DataError(f"xi has shape {xi.shape}, expected ({p},)")
    block = np.hstack([S, -S])
    A = np.vstack([block, -block])
    b = np.concatenate([xi + lambda_prime, lambda_prime - xi])
    return LpStandardProblem(
        c=np.ones(2 * p),
        A=A,
        b=b,
        sense=("<=",) * (2 * p),
    )


def estimate_direction(S, xi, lambda_prime: float) -> ProjectionDirection:
    """Solve for the raw direction and normalize by its quadratic form."""
    S = np.asarray(S, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        raise DataError("loading vector xi must be nonzero")
    if lambda_prime <= 0:
        raise DataError(f"the feasibility slack must be positive, got {lambda_prime}")
    p = S.shape[0]
    sol = solve_lp(direction_problem(S, xi, lambda_prime))
    if sol.status != "optimal":
        # cannot occur for PD S with positive slack, but never fail silently
        raise NumericalError(
            f"direction LP terminated with status {sol.status!r} "
            f"after {sol.n_iterations} iterations"
        )
    omega = sol.x[:p] - sol.x[p:]
    gap = float(np.max(np.abs(S @ omega - xi))) - lambda_prime
    if gap > FEASIBILITY_SLOP:
        raise NumericalError(
            f"direction violates its feasibility constraint by {gap:.2e}"
        )
    quad = float(omega @ S @ omega)
    if quad <= QUAD_FORM_FLOOR:
        raise DegenerateDirectionError(
            f"direction is degenerate (omega'S omega = {quad:.2e}); "
            f"the slack {lambda_prime:g} is too large for this loading"
        )
    return ProjectionDirection(
        omega_tilde=omega,
        omega_hat=omega / quad,
        quad_form=quad,
        lambda_prime=float(lambda_prime),
    )


def default_slack_grid(xi, length: int = 10) -> np.ndarray:
    """Log-spaced trial slacks, increasing, clipped below the degenerate point.

    The zero direction becomes feasible exactly at ||xi||_inf, so the grid
    runs from ||xi||_inf / 100 up to 0.9 ||xi||_inf.
    """
    xi = np.asarray(xi, dtype=float)
    top = float(np.max(np.abs(xi)))
    if top <= 0:
        raise DataError("loading vector xi must be nonzero")
    return np.geomspace(top / 100.0, 0.9 * top, length)
