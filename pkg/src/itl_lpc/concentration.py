"""Matrix bounds for the accumulated disturbance Gram and the predictive
controller's disturbance ball, per disturbance prior.

Two priors are covered: deterministic disturbances with a known matrix upper
bound (exact, probability one) and stochastic disturbances with known
covariance (a trace-Markov bound).  A finite discrete set is treated through
its exact covariance for the Gram bound and through its deterministic
per-coordinate bound for the stacked-disturbance ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from itl_lpc.errors import DomainError, InvalidInputError
from itl_lpc.system import BoundedMatrix, CovarianceGaussian, DiscreteSet, DisturbanceModel, sample_disturbance


@dataclass(frozen=True)
class ConcentrationModel:
    """Disturbance prior plus the probability level of the Gram bound.

    ``delta`` is the probability with which the accumulated disturbance Gram
    W_- W_-^T stays below the produced bound.  The deterministic bounded case
    requires delta = 1; the stochastic cases require delta < 1.
    """

    disturbance: DisturbanceModel
    delta: float

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise InvalidInputError("delta must lie in (0, 1]")
        if isinstance(self.disturbance, BoundedMatrix) and self.delta != 1.0:
            raise InvalidInputError("the bounded prior is deterministic; use delta = 1")

    @property
    def n_x(self) -> int:
        return self.disturbance.n_x


@dataclass(frozen=True)
class DisturbanceBall:
    """Ball for the stacked N-step disturbance, Vec(W)^T Vec(W) <= Tr[Psi_w]."""

    Psi_w: np.ndarray
    horizon: int

    def __post_init__(self):
        p = 0.5 * (np.asarray(self.Psi_w, dtype=float) + np.asarray(self.Psi_w, dtype=float).T)
        if np.any(np.linalg.eigvalsh(p) < -1e-12 * max(1.0, np.abs(p).max())):
            raise InvalidInputError("Psi_w must be positive semi-definite")
        object.__setattr__(self, "Psi_w", p)

    @property
    def trace(self) -> float:
        return float(np.trace(self.Psi_w))

    @property
    def radius(self) -> float:
        """Euclidean radius of the stacked-disturbance ball."""
        return float(np.sqrt(max(self.trace, 0.0)))


def phi1(model: ConcentrationModel, n: int) -> np.ndarray:
    """Gram bound Phi_1(n, delta) with P[W_- W_-^T <= Phi_1] >= delta.

    Bounded prior: n * phi_bar at delta = 1.  Covariance priors (Gaussian or
    discrete through its exact covariance): n_x * n / (1 - delta) * sigma_w.
    """
    if n < 1:
        raise InvalidInputError("phi1: n must be >= 1")
    dist = model.disturbance
    if isinstance(dist, BoundedMatrix):
        return n * dist.phi_bar
    if model.delta >= 1.0:
        raise DomainError("phi1: the covariance bound diverges at delta = 1")
    if isinstance(dist, CovarianceGaussian):
        sigma = dist.sigma_w
    elif isinstance(dist, DiscreteSet):
        sigma = dist.covariance()
    else:
        raise InvalidInputError(f"unknown disturbance model {type(dist)!r}")
    return (dist.n_x * n / (1.0 - model.delta)) * sigma


def markov_matrix_check(model: ConcentrationModel, n: int, trials: int, rng: np.random.Generator) -> float:
    """Monte Carlo estimate of P[W_- W_-^T <= Phi_1(n, delta)].

    Validation helper only; the bound itself is analytic.
    """
    if trials < 1:
        raise InvalidInputError("markov_matrix_check: trials must be >= 1")
    bound = phi1(model, n)
    tol = 1e-9 * max(1.0, np.abs(bound).max())
    hits = 0
    for _ in range(trials):
        w = np.stack([sample_disturbance(model.disturbance, rng) for _ in range(n)], axis=1)
        gram = w @ w.T
        if np.linalg.eigvalsh(0.5 * ((bound - gram) + (bound - gram).T))[0] >= -tol:
            hits += 1
    return hits / trials


def disturbance_ball(model: ConcentrationModel, N: int, delta1: float) -> DisturbanceBall:
    """Ball parameter Psi_w with P[Vec(W(k;N)) in the ball] >= delta1.

    Bounded prior: Psi_w = N * phi_bar (deterministic coverage).  Discrete
    prior: Psi_w = N * diag(per-coordinate max squares), also deterministic
    since every realisation satisfies ||Vec(W)||^2 <= N * max ||w||^2.
    Gaussian prior: the trace-Markov construction applied to the stacked
    disturbance, Psi_w = n_x * N / (1 - delta1) * sigma_w.
    """
    if N < 1:
        raise InvalidInputError("disturbance_ball: N must be >= 1")
    if not (0.0 < delta1 <= 1.0):
        raise InvalidInputError("disturbance_ball: delta1 must lie in (0, 1]")
    dist = model.disturbance
    if isinstance(dist, BoundedMatrix):
        return DisturbanceBall(Psi_w=N * dist.phi_bar, horizon=N)
    if isinstance(dist, DiscreteSet):
        return DisturbanceBall(Psi_w=N * dist.max_coordinate_squares(), horizon=N)
    if isinstance(dist, CovarianceGaussian):
        if delta1 >= 1.0:
            raise DomainError("disturbance_ball: stochastic coverage requires delta1 < 1")
        n_stack = dist.n_x * N
        # Markov on the scalar ||Vec(W)||^2: E = N * tr(sigma_w); the matrix
        # construction with the stacked covariance gives the same trace.
        return DisturbanceBall(Psi_w=(n_stack / (1.0 - delta1)) * dist.sigma_w, horizon=N)
    raise InvalidInputError(f"unknown disturbance model {type(dist)!r}")
