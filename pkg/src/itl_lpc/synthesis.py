"""LMI feasibility kernel and controller synthesis.

The semidefinite feasibility kernel runs Dykstra-corrected alternating
projections between the affine variety spanned by the decision variables and
the shifted positive semidefinite cone.  All LMIs in this package are small
and dense, so projections (one batched eigendecomposition per sweep) are
cheap, dependency-free and deterministic.  The kernel reports
infeasible-within-budget; it never certifies infeasibility.

On top of the kernel sit the stabilizing-gain synthesis, the terminal-cost
machinery and the stability-certificate constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar

from itl_lpc.concentration import DisturbanceBall
from itl_lpc.errors import DomainError, InvalidInputError, SynthesisFailedError
from itl_lpc.linalg import check_symmetric, generalized_min_eig, symmetrize
from itl_lpc.membership import QmiSet


# ---------------------------------------------------------------------------
# Affine LMI containers
# ---------------------------------------------------------------------------

@dataclass
class AffineLmi:
    """One affine matrix inequality F0 + sum_i y_i Fi >= 0."""

    F0: np.ndarray
    Fi: list
    var_names: list | None = None

    def __post_init__(self):
        self.F0 = check_symmetric(np.atleast_2d(np.asarray(self.F0, dtype=float)), "F0")
        self.Fi = [check_symmetric(np.atleast_2d(np.asarray(f, dtype=float)), "Fi") for f in self.Fi]
        for f in self.Fi:
            if f.shape != self.F0.shape:
                raise InvalidInputError("AffineLmi: all blocks must share one dimension")
        if self.var_names is None:
            self.var_names = [f"y{i}" for i in range(len(self.Fi))]

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    @property
    def n_vars(self) -> int:
        return len(self.Fi)


class LmiGroup:
    """A batch of same-size affine blocks over a shared variable vector.

    ``F0`` has shape (B, d, d); ``coeff`` has shape (B, m, d, d) and
    ``idx`` (B, m) maps each local coefficient slot to a global variable.
    """

    def __init__(self, F0: np.ndarray, idx: np.ndarray, coeff: np.ndarray):
        self.F0 = np.ascontiguousarray(F0, dtype=float)
        self.idx = np.ascontiguousarray(idx, dtype=np.int64)
        self.coeff = np.ascontiguousarray(coeff, dtype=float)
        if self.F0.ndim != 3 or self.coeff.ndim != 4:
            raise InvalidInputError("LmiGroup: F0 must be (B,d,d) and coeff (B,m,d,d)")

    @property
    def dim(self) -> int:
        return self.F0.shape[2]

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        if self.coeff.shape[1] == 0:
            return self.F0.copy()
        yg = y[self.idx]  # (B, m)
        return self.F0 + np.einsum("bmpq,bm->bpq", self.coeff, yg)


def _as_groups(lmi) -> list:
    if isinstance(lmi, AffineLmi):
        lmi = [lmi]
    if isinstance(lmi, (list, tuple)) and all(isinstance(b, AffineLmi) for b in lmi):
        groups = []
        for block in lmi:
            m = block.n_vars
            coeff = np.stack(block.Fi, axis=0)[None, ...] if m else np.zeros((1, 0, block.dim, block.dim))
            idx = np.arange(m, dtype=np.int64)[None, :]
            groups.append(LmiGroup(block.F0[None, ...], idx, coeff))
        return groups
    if isinstance(lmi, (list, tuple)) and all(isinstance(b, LmiGroup) for b in lmi):
        return list(lmi)
    raise InvalidInputError("sdp_feasibility expects AffineLmi, a list of them, or LmiGroup blocks")


def _num_vars(groups) -> int:
    n = 0
    for g in groups:
        if g.idx.size:
            n = max(n, int(g.idx.max()) + 1)
    return n


def _psd_project_batch(z: np.ndarray, floor: float) -> np.ndarray:
    if z.shape[2] == 1:
        return np.maximum(z, floor)
    w, v = np.linalg.eigh(z)
    w = np.maximum(w, floor)
    out = np.einsum("bij,bj,bkj->bik", v, w, v)
    return 0.5 * (out + out.transpose(0, 2, 1))


def _min_eig_batch(z: np.ndarray) -> float:
    if z.shape[2] == 1:
        return float(z.min())
    return float(np.linalg.eigvalsh(z)[:, 0].min())


class FeasibilityProblem:
    """Reusable projection state for one affine feasibility problem.

    Precomputes the normal-equation factorisation of the affine projection so
    that repeated solves over the same variable structure (e.g. a bisection
    that only shifts constant blocks) stay cheap.
    """

    def __init__(self, groups: list):
        self.groups = _as_groups(groups)
        self.n = _num_vars(self.groups)
        gram = np.zeros((self.n, self.n))
        for g in self.groups:
            if g.coeff.shape[1] == 0:
                continue
            pg = np.einsum("bipq,bjpq->bij", g.coeff, g.coeff)
            np.add.at(gram, (g.idx[:, :, None], g.idx[:, None, :]), pg)
        scale = np.trace(gram) / max(self.n, 1) if self.n else 1.0
        ridge = 1e-12 * max(scale, 1.0)
        self._factor = cho_factor(gram + ridge * np.eye(self.n)) if self.n else None

    def _affine_project(self, ys: list) -> np.ndarray:
        rhs = np.zeros(self.n)
        for g, ymat in zip(self.groups, ys):
            if g.coeff.shape[1] == 0:
                continue
            bg = np.einsum("bmpq,bpq->bm", g.coeff, ymat - g.F0)
            np.add.at(rhs, g.idx, bg)
        return cho_solve(self._factor, rhs) if self.n else np.zeros(0)

    def evaluate(self, y: np.ndarray) -> list:
        return [g.evaluate(y) for g in self.groups]

    def min_eig(self, y: np.ndarray) -> float:
        return min(_min_eig_batch(x) for x in self.evaluate(y))

    def solve(self, margin: float, budget: int, y0: np.ndarray | None = None):
        """Dykstra-corrected alternating projections; None on budget exhaustion."""
        if margin <= 0:
            raise InvalidInputError("feasibility margin must be positive")
        y = np.zeros(self.n) if y0 is None else np.asarray(y0, dtype=float).copy()
        if y.shape != (self.n,):
            raise InvalidInputError("bad warm-start length")
        xs = self.evaluate(y)
        corr = [np.zeros_like(x) for x in xs]
        eig_slack = max(1e-10, 1e-10 * margin)
        check_every = 5
        for sweep in range(budget):
            ys = []
            for i, g in enumerate(self.groups):
                z = xs[i] + corr[i]
                proj = _psd_project_batch(z, margin)
                corr[i] = z - proj
                ys.append(proj)
            y = self._affine_project(ys)
            xs = self.evaluate(y)
            resid = max(float(np.max(np.abs(x - ym))) for x, ym in zip(xs, ys))
            if resid <= margin or sweep % check_every == check_every - 1 or sweep == budget - 1:
                worst = min(_min_eig_batch(x) for x in xs)
                if worst >= margin - eig_slack:
                    return y
        return None


def sdp_feasibility(lmi, margin: float, budget: int = 400, y0: np.ndarray | None = None):
    """Find y with min-eig(F0 + sum_i y_i Fi) >= margin, or report failure.

    Dykstra-corrected alternating projections between the affine variety and
    the PSD cone shifted by ``margin``; deterministic given the initial point
    (the origin unless ``y0`` is supplied).  Returns the variable vector, or
    ``None`` when the budget is exhausted (infeasible-within-budget, which is
    distinct from certified infeasibility).
    """
    return FeasibilityProblem(lmi).solve(margin=margin, budget=budget, y0=y0)


# ---------------------------------------------------------------------------
# Stabilizing-gain synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IscResult:
    """Feedback gain stabilizing every member of the learned set, with its
    Lyapunov certificate."""

    K: np.ndarray
    P: np.ndarray
    L: np.ndarray
    xi: float
    rho: float
    margin: float


def _sym_basis(n: int) -> list:
    """Basis of symmetric n x n matrices (unit diagonal and paired off-diagonal)."""
    basis = []
    for i in range(n):
        e = np.zeros((n, n))
        e[i, i] = 1.0
        basis.append(e)
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0
            basis.append(e)
    return basis


def _isc_first_matrix(p: np.ndarray, low: np.ndarray, rho: float) -> np.ndarray:
    """The constant block matrix of the gain LMI at given (P, L, rho)."""
    n_x = p.shape[0]
    n_u = low.shape[0]
    d = 3 * n_x + n_u
    m = np.zeros((d, d))
    s0, s1, s2, s3 = 0, n_x, 2 * n_x, 2 * n_x + n_u
    m[s0:s1, s0:s1] = p - rho * np.eye(n_x)
    m[s1:s2, s1:s2] = -p
    m[s1:s2, s2:s3] = -low.T
    m[s2:s3, s1:s2] = -low
    m[s2:s3, s3:] = low
    m[s3:, s2:s3] = low.T
    m[s3:, s3:] = p
    return m


def synthesize_isc(psi: QmiSet, dims: tuple, margin: float | None = None,
                   budget: int = 4000) -> IscResult:
    """Solve the data-based gain LMI and return K = L P^-1.

    The LMI couples a Lyapunov certificate (P, L, rho) with the learned set
    through a nonnegative multiplier xi on the zero-padded set parameter.
    Raises SynthesisFailedError when the feasibility kernel exhausts its
    budget (the caller keeps its previous gain).
    """
    n_x, n_u = dims
    d = 3 * n_x + n_u
    if psi.Psi.shape[0] != 2 * n_x + n_u:
        raise InvalidInputError("synthesize_isc: Psi dimension mismatch")
    n_pad = np.zeros((d, d))
    n_pad[: 2 * n_x + n_u, : 2 * n_x + n_u] = psi.Psi

    p_basis = _sym_basis(n_x)
    n_p = len(p_basis)
    n_l = n_u * n_x
    zero_p = np.zeros((n_x, n_x))
    zero_l = np.zeros((n_u, n_x))

    fi = []
    names = []
    for b, e in enumerate(p_basis):
        fi.append(_isc_first_matrix(e, zero_l, 0.0))
        names.append(f"P{b}")
    for i in range(n_u):
        for j in range(n_x):
            e = np.zeros((n_u, n_x))
            e[i, j] = 1.0
            fi.append(_isc_first_matrix(zero_p, e, 0.0))
            names.append(f"L{i}{j}")
    fi.append(-n_pad)  # xi
    names.append("xi")
    rho_mat = np.zeros((d, d))
    rho_mat[:n_x, :n_x] = -np.eye(n_x)
    fi.append(rho_mat)  # rho
    names.append("rho")

    if margin is None:
        margin = 1e-7 * max(1.0, float(np.abs(psi.Psi).max()))

    main = AffineLmi(F0=np.zeros((d, d)), Fi=fi, var_names=names)
    # Side blocks: P >= margin I, rho >= margin, xi >= 0 (built over the same
    # variable vector).
    side_fi_p = []
    for b, e in enumerate(p_basis):
        side_fi_p.append(e)
    side_p = AffineLmi(F0=np.zeros((n_x, n_x)),
                       Fi=side_fi_p + [np.zeros((n_x, n_x))] * (n_l + 2))
    xi_block = AffineLmi(F0=np.array([[margin]]),
                         Fi=[np.zeros((1, 1))] * (n_p + n_l) + [np.array([[1.0]]), np.zeros((1, 1))])
    rho_block = AffineLmi(F0=np.zeros((1, 1)),
                          Fi=[np.zeros((1, 1))] * (n_p + n_l) + [np.zeros((1, 1)), np.array([[1.0]])])

    y = sdp_feasibility([main, side_p, xi_block, rho_block], margin=margin, budget=budget)
    if y is None:
        raise SynthesisFailedError("gain LMI infeasible within budget")
    p = sum(y[b] * e for b, e in enumerate(p_basis))
    low = y[n_p:n_p + n_l].reshape(n_u, n_x)
    xi = max(float(y[n_p + n_l]), 0.0)
    rho = float(y[n_p + n_l + 1])
    k = low @ np.linalg.inv(p)
    achieved = float(np.linalg.eigvalsh(symmetrize(_isc_first_matrix(p, low, rho) - xi * n_pad))[0])
    return IscResult(K=k, P=p, L=low, xi=xi, rho=rho, margin=achieved)


# ---------------------------------------------------------------------------
# Terminal-cost machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TerminalIngredients:
    """Terminal cost matrix, its slack, the terminal-set level and the local
    Lipschitz constant of the terminal cost."""

    P_f: np.ndarray
    delta_M: float
    theta_f: float
    L_f: float
    xi_cert: float


@dataclass(frozen=True)
class StabilityCertificate:
    """Constants of the high-probability closed-loop stability monitors."""

    delta2: float
    c1: float
    c2: float
    gamma: float
    eps: float
    c: float

    def __post_init__(self):
        if self.c1 > self.c2 + 1e-12:
            raise InvalidInputError("StabilityCertificate: c1 must not exceed c2")
        if not (0.0 <= self.gamma < 1.0):
            raise InvalidInputError("StabilityCertificate: gamma must lie in [0, 1)")
        if self.c <= 0.0:
            raise InvalidInputError("StabilityCertificate: c must be positive")


def terminal_cost(Q, R, K, delta_M: float) -> np.ndarray:
    """Terminal cost matrix P_f = Q + K^T R K + delta_M I."""
    Q = check_symmetric(np.asarray(Q, dtype=float), "Q")
    R = check_symmetric(np.asarray(R, dtype=float), "R")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if delta_M <= 0:
        raise InvalidInputError("terminal_cost: delta_M must be positive")
    return symmetrize(Q + K.T @ R @ K + delta_M * np.eye(Q.shape[0]))


def delta_m_lower_bound(es, K, Phi1, X_plus, P_f_prev_inv) -> float:
    """Lower bound 1 / (lambda_hat * lambda_check) on the terminal slack.

    lambda_hat is the smallest generalized eigenvalue of the pencil
    (P_f^-1, Phi1 - X_plus X_plus^T); lambda_check that of the pencil
    (data Gram, [I; K][I K^T]) restricted to the range of [I; K] through a
    thin QR factorisation (directions orthogonal to that range are
    unconstrained).
    """
    Phi1 = check_symmetric(np.asarray(Phi1, dtype=float), "Phi1")
    X_plus = np.atleast_2d(np.asarray(X_plus, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n11 = symmetrize(Phi1 - X_plus @ X_plus.T)
    if np.linalg.eigvalsh(n11)[0] <= 0:
        raise DomainError("delta_m_lower_bound: Phi1 - X_plus X_plus^T must be positive definite")
    lam_hat = generalized_min_eig(P_f_prev_inv, n11)
    j = np.vstack([np.eye(K.shape[1]), K])
    q, r_hat = np.linalg.qr(j)
    gram = es.Phi2 if hasattr(es, "Phi2") else np.asarray(es, dtype=float)
    reduced_gram = symmetrize(q.T @ gram @ q)
    rr = symmetrize(r_hat @ r_hat.T)
    lam_check = generalized_min_eig(reduced_gram, rr)
    if lam_hat <= 0 or lam_check <= 0:
        raise DomainError("delta_m_lower_bound: pencil produced a nonpositive eigenvalue")
    return 1.0 / (lam_hat * lam_check)


def check_terminal_lmi(P_f_next, K, psi: QmiSet, delta_M: float,
                       xi_max: float = 1e6) -> float | None:
    """Search the scalar multiplier certifying the terminal decrease LMI.

    blkdiag(P_f(k+1)^-1, -(1/delta_M) [I;K][I K^T]) - xi Psi >= 0 for some
    xi > 0 guarantees the terminal-cost decrease for every member of the set.
    Returns the maximizing xi when the best minimum eigenvalue clears -1e-9,
    else None (the slack delta_M must be increased or more data gathered).
    """
    P_f_next = check_symmetric(np.asarray(P_f_next, dtype=float), "P_f_next")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n_x = P_f_next.shape[0]
    n_z = n_x + K.shape[0]
    if psi.Psi.shape[0] != n_x + n_z:
        raise InvalidInputError("check_terminal_lmi: Psi dimension mismatch")
    j = np.vstack([np.eye(n_x), K])
    m = np.zeros((n_x + n_z, n_x + n_z))
    m[:n_x, :n_x] = np.linalg.inv(P_f_next)
    m[n_x:, n_x:] = -(1.0 / delta_M) * (j @ j.T)

    def mineig(xi: float) -> float:
        return float(np.linalg.eigvalsh(symmetrize(m - xi * psi.Psi))[0])

    grid = np.logspace(-12, np.log10(xi_max), 60)
    vals = [mineig(x) for x in grid]
    best = int(np.argmax(vals))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    res = minimize_scalar(lambda x: -mineig(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-14 * (1.0 + hi)})
    xi_best, val_best = float(res.x), float(-res.fun)
    if vals[best] > val_best:
        xi_best, val_best = float(grid[best]), float(vals[best])
    if val_best >= -1e-9 and xi_best > 0:
        return xi_best
    return None


def lipschitz_Vf(P_f, domain_radius: float) -> float:
    """Gradient-norm Lipschitz bound 2 lambda_max(P_f) * radius of x^T P_f x."""
    P_f = check_symmetric(np.asarray(P_f, dtype=float), "P_f")
    if domain_radius < 0:
        raise InvalidInputError("lipschitz_Vf: radius must be nonnegative")
    return 2.0 * float(np.linalg.eigvalsh(P_f)[-1]) * domain_radius


def theta_f(delta_M: float, L_f: float, x_box, ball: DisturbanceBall) -> float:
    """Terminal-set level: delta_M * max ||x||^2 over the state box plus
    L_f times the disturbance-ball radius (the box maximum sits at a vertex)."""
    lo, hi = (np.asarray(b, dtype=float).ravel() for b in x_box)
    if np.any(hi < lo):
        raise InvalidInputError("theta_f: empty state box")
    max_sq = float(np.sum(np.maximum(lo**2, hi**2)))
    return delta_M * max_sq + L_f * ball.radius


def stage_cost(x, u, Q, R) -> float:
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    return float(x @ Q @ x + u @ R @ u)


def delta2_estimate(scenarios, K, P_f_k, P_f_k1, Q, R, x_box, ball: DisturbanceBall,
                    count: int, rng: np.random.Generator) -> float:
    """Sampled maximization of the one-step terminal-cost drift.

    Maximizes V_f(A x + B K x + w; P_f(k+1)) - V_f(x; P_f(k)) + l(x, K x)
    over box vertices, scenario pairs and boundary disturbance draws.  The
    result is a lower bound on the true maximum and grows with ``count``.
    """
    if count < 1:
        raise InvalidInputError("delta2_estimate: count must be >= 1")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    lo, hi = (np.asarray(b, dtype=float).ravel() for b in x_box)
    n_x = lo.shape[0]
    vertices = np.array(np.meshgrid(*[(l, h) for l, h in zip(lo, hi)], indexing="ij")).reshape(n_x, -1).T
    radius = ball.radius
    best = -np.inf
    pairs = list(scenarios)
    for t in range(count):
        x = vertices[t % len(vertices)]
        a_mat, b_mat = pairs[int(rng.integers(len(pairs)))]
        if t % 3 == 0:
            w = np.zeros(n_x)
        else:
            g = rng.standard_normal(n_x)
            nrm = np.linalg.norm(g)
            w = radius * g / nrm if nrm > 0 else np.zeros(n_x)
        u = K @ x
        x_next = np.asarray(a_mat) @ x + np.asarray(b_mat) @ u + w
        val = float(x_next @ P_f_k1 @ x_next - x @ P_f_k @ x) + stage_cost(x, u, Q, R)
        best = max(best, val)
    return best
