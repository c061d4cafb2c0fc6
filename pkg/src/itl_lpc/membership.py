"""The learned parametric uncertainty set in QMI and ellipsoid form, volume
proxies, incremental-information estimates, set inclusion and member sampling.

The set of parameter pairs compatible with the data and a Gram bound Phi_1 is

    {(A, B) : Z(A, B) Psi Z(A, B)^T >= 0},   Z(A, B) = [I  A  B],

with Psi assembled from the data matrices.  It is equivalently an ellipsoid
around the least-squares estimate; both forms are kept because the QMI form
feeds the synthesis LMIs while the ellipsoid form supports sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from itl_lpc.errors import DegenerateError, DomainError, EmptyDataError, InvalidInputError, RankDeficientError
from itl_lpc.linalg import check_symmetric, cholesky_lower, pseudo_inverse, symmetrize
from itl_lpc.system import DataMatrices

# Membership tolerance on the minimum eigenvalue; boundary cases under
# round-off must not flip the decision.
MEMBERSHIP_TOL = 1e-9

# Cap for the scalar multiplier search in the inclusion certificate.
XI_MAX = 1e6


@dataclass(frozen=True)
class QmiSet:
    """Quadratic-matrix-inequality form of the uncertainty set.

    ``Psi`` is the (2 n_x + n_u)-dimensional symmetric parameter; ``dm`` and
    ``phi1`` are kept so that membership can be evaluated through the
    numerically stable residual route and members can be sampled.
    """

    Psi: np.ndarray
    n: int
    delta: float
    dm: DataMatrices | None = None
    phi1: np.ndarray | None = None

    @property
    def n_x(self) -> int:
        if self.phi1 is not None:
            return self.phi1.shape[0]
        raise InvalidInputError("QmiSet without factors has no declared state dimension")


@dataclass(frozen=True)
class EllipsoidSet:
    """Ellipsoid form: (Theta - center) Phi2 (Theta - center)^T <= Phi1_tilde."""

    center: np.ndarray
    Phi2: np.ndarray
    Phi1_tilde: np.ndarray

    @property
    def n_x(self) -> int:
        return self.center.shape[0]

    @property
    def n_z(self) -> int:
        return self.Phi2.shape[0]


@dataclass(frozen=True)
class VolumeProxy:
    """Proxy (|T| Tr[Phi1_tilde])^(n_x / 2) for the set's Lebesgue measure."""

    value: float
    detT: float
    trPhi: float


def build_psi(dm: DataMatrices, Phi1) -> QmiSet:
    """Assemble the QMI parameter Psi from data matrices and a Gram bound."""
    Phi1 = check_symmetric(np.asarray(Phi1, dtype=float), "Phi1")
    if dm.n == 0:
        raise EmptyDataError("build_psi: empty data")
    if Phi1.shape[0] != dm.n_x:
        raise InvalidInputError("build_psi: Phi1 dimension mismatch")
    n_x, n_u, n = dm.n_x, dm.n_u, dm.n
    xi = np.zeros((2 * n_x + n_u, n_x + n))
    xi[:n_x, :n_x] = np.eye(n_x)
    xi[:n_x, n_x:] = dm.X_plus
    xi[n_x:2 * n_x, n_x:] = -dm.X_minus
    xi[2 * n_x:, n_x:] = -dm.U_minus
    psi_tilde = np.zeros((n_x + n, n_x + n))
    psi_tilde[:n_x, :n_x] = Phi1
    psi_tilde[n_x:, n_x:] = -np.eye(n)
    psi = symmetrize(xi @ psi_tilde @ xi.T)
    return QmiSet(Psi=psi, n=n, delta=1.0, dm=dm, phi1=Phi1)


def least_squares_center(dm: DataMatrices) -> np.ndarray:
    """Least-squares estimate [A_hat  B_hat] = X_plus pinv([X_minus; U_minus])."""
    if dm.n == 0:
        raise EmptyDataError("least_squares_center: empty data")
    return dm.X_plus @ pseudo_inverse(dm.regressor())


def ellipsoid_form(dm: DataMatrices, Phi1) -> EllipsoidSet:
    """Equivalent ellipsoid form of the uncertainty set.

    Phi1_tilde = Phi1 - E E^T with E the least-squares residual matrix; the
    projector identity X_plus (I - Z^+ Z) X_plus^T = E E^T keeps the
    computation stable for large trajectories.
    """
    Phi1 = check_symmetric(np.asarray(Phi1, dtype=float), "Phi1")
    if dm.n == 0:
        raise EmptyDataError("ellipsoid_form: empty data")
    z = dm.regressor()
    center = dm.X_plus @ pseudo_inverse(z)
    resid = dm.X_plus - center @ z
    phi2 = symmetrize(z @ z.T)
    phi1_tilde = symmetrize(Phi1 - resid @ resid.T)
    return EllipsoidSet(center=center, Phi2=phi2, Phi1_tilde=phi1_tilde)


def membership_min_eig(qmi: QmiSet, A, B) -> float:
    """Minimum eigenvalue of Z(A,B) Psi Z(A,B)^T.

    When the data factors are available the product is evaluated as
    Phi1 - W W^T with W = X_plus - A X_minus - B U_minus, which avoids the
    catastrophic cancellation of sandwiching the assembled Psi directly for
    exploding trajectories.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if qmi.dm is not None and qmi.phi1 is not None:
        resid = qmi.dm.X_plus - A @ qmi.dm.X_minus - B @ qmi.dm.U_minus
        s = symmetrize(qmi.phi1 - resid @ resid.T)
    else:
        z = np.hstack([np.eye(A.shape[0]), A, B])
        s = symmetrize(z @ qmi.Psi @ z.T)
    return float(np.linalg.eigvalsh(s)[0])


def contains(qmi: QmiSet, A, B) -> bool:
    """Set membership of a parameter pair, at eigenvalue tolerance -1e-9."""
    return membership_min_eig(qmi, A, B) >= -MEMBERSHIP_TOL


def ellipsoid_min_eig(es: EllipsoidSet, A, B) -> float:
    """Minimum eigenvalue of Phi1_tilde - Delta Phi2 Delta^T."""
    theta = np.hstack([np.atleast_2d(A), np.atleast_2d(B)])
    delta = theta - es.center
    s = symmetrize(es.Phi1_tilde - delta @ es.Phi2 @ delta.T)
    return float(np.linalg.eigvalsh(s)[0])


def volume_proxy(dm: DataMatrices, Phi1) -> VolumeProxy:
    """Volume proxy of the set; requires an invertible data Gram."""
    es = ellipsoid_form(dm, Phi1)
    try:
        low = np.linalg.cholesky(es.Phi2)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("volume_proxy: data Gram is singular") from exc
    # |T| = 1 / |Phi2|; accumulate the determinant in extended precision.
    diag = np.asarray(np.diag(low), dtype=np.longdouble)
    det_phi2 = np.prod(diag * diag)
    det_t = float(1.0 / det_phi2)
    tr_phi = float(np.trace(es.Phi1_tilde))
    n_x = dm.n_x
    if det_t > 0.0 and tr_phi > 0.0:
        value = float(np.longdouble(det_t) ** (n_x / 2.0) * np.longdouble(tr_phi) ** (n_x / 2.0))
    else:
        value = 0.0
    return VolumeProxy(value=value, detT=det_t, trPhi=tr_phi)


def qii_estimate(prev: tuple, cand: tuple) -> float:
    """Estimated incremental information 1 - proxy(candidate)/proxy(previous).

    ``prev`` and ``cand`` are (DataMatrices, Phi1) pairs for the current and
    the sample-augmented dataset.  Negative values mean the candidate enlarges
    the proxy.
    """
    proxy_prev = volume_proxy(*prev)
    proxy_cand = volume_proxy(*cand)
    if proxy_prev.value == 0.0:
        raise DegenerateError("qii_estimate: previous proxy is zero")
    return 1.0 - proxy_cand.value / proxy_prev.value


def _certificate_search(psi_outer: np.ndarray, psi_inner: np.ndarray) -> tuple:
    """Best multiplier for Psi_outer - xi Psi_inner >= 0 over xi in [0, XI_MAX].

    The minimum eigenvalue is concave in xi, so a coarse log-spaced scan
    followed by a bounded scalar refinement finds the global maximum.
    """

    def mineig(xi: float) -> float:
        return float(np.linalg.eigvalsh(symmetrize(psi_outer - xi * psi_inner))[0])

    grid = np.concatenate([[0.0], np.logspace(-6, np.log10(XI_MAX), 40)])
    vals = [mineig(x) for x in grid]
    best = int(np.argmax(vals))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    if hi <= lo:
        return float(grid[best]), float(vals[best])
    res = minimize_scalar(lambda x: -mineig(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12 * (1.0 + hi)})
    xi_best, val_best = float(res.x), float(-res.fun)
    if vals[best] > val_best:
        return float(grid[best]), float(vals[best])
    return xi_best, val_best


def inclusion_test(inner: QmiSet, outer: QmiSet, rng: np.random.Generator | None = None,
                   fallback_samples: int = 1000) -> bool:
    """Decide the set inclusion inner ⊆ outer.

    A scalar S-procedure certificate (existence of xi >= 0 with
    Psi_outer - xi Psi_inner >= 0) is sufficient for inclusion and is searched
    first.  When the certificate search fails and a generator is supplied,
    sampled members of the inner set are checked against the outer set: a
    violation disproves inclusion, while an exhausted sample budget without
    violations accepts it.  Without a generator a failed search returns False.
    """
    if inner.Psi.shape != outer.Psi.shape:
        raise InvalidInputError("inclusion_test: incompatible dimensions")
    _, best = _certificate_search(outer.Psi, inner.Psi)
    if best >= -MEMBERSHIP_TOL:
        return True
    if rng is None or fallback_samples <= 0 or inner.dm is None or inner.phi1 is None:
        return False
    try:
        es = ellipsoid_form(inner.dm, inner.phi1)
        members = sample_members(es, fallback_samples, rng)
    except (DomainError, RankDeficientError):
        return False
    for a_smp, b_smp in members:
        if not contains(outer, a_smp, b_smp):
            return False
    return True


def sample_members(es: EllipsoidSet, count: int, rng: np.random.Generator) -> list:
    """Draw (A, B) pairs from the ellipsoidal set.

    The contraction factor C is drawn approximately uniformly over the
    spectral-norm unit ball (a Gaussian matrix normalised by its spectral norm
    and scaled by a radius u^(1/d)), then mapped through the Cholesky factors
    of Phi1_tilde and Phi2.  Every returned pair is a member of the set.
    """
    phi1t = symmetrize(es.Phi1_tilde)
    min_eig = float(np.linalg.eigvalsh(phi1t)[0])
    if min_eig < -1e-9 * max(1.0, np.abs(phi1t).max()):
        raise DomainError("sample_members: Phi1_tilde is indefinite")
    if min_eig < 0.0:
        phi1t = phi1t - min_eig * np.eye(phi1t.shape[0])
    l_phi = cholesky_lower(phi1t)
    try:
        r_phi2 = np.linalg.cholesky(es.Phi2)
    except np.linalg.LinAlgError as exc:
        raise DomainError("sample_members: Phi2 is not positive definite") from exc
    n_x, n_z = es.center.shape
    dim = n_x * n_z
    out = []
    r_inv = np.linalg.inv(r_phi2)
    for _ in range(count):
        g = rng.standard_normal((n_x, n_z))
        spec = np.linalg.norm(g, 2)
        if spec == 0.0:
            c = np.zeros((n_x, n_z))
        else:
            c = g / spec * rng.uniform() ** (1.0 / dim)
        theta = es.center + l_phi @ c @ r_inv
        out.append((theta[:, :n_x].copy(), theta[:, n_x:].copy()))
    return out


def boundary_member(es: EllipsoidSet, direction: np.ndarray | None = None) -> tuple:
    """A member with contraction factor of unit spectral norm (set boundary)."""
    n_x, n_z = es.center.shape
    if direction is None:
        c = np.zeros((n_x, n_z))
        c[0, 0] = 1.0
    else:
        c = direction / np.linalg.norm(direction, 2)
    l_phi = cholesky_lower(symmetrize(es.Phi1_tilde))
    r_phi2 = np.linalg.cholesky(es.Phi2)
    theta = es.center + l_phi @ c @ np.linalg.inv(r_phi2)
    return theta[:, :n_x].copy(), theta[:, n_x:].copy()
