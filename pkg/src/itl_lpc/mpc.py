"""Scenario-based min-max predictive control.

The worst case of the finite-horizon cost over the stacked-disturbance ball
is certified per sampled parameter scenario through an S-procedure matrix
inequality; the quadratic dependence of the cost on the input offsets is
handled by a Schur-complement lift of the cost factor, so the per-scenario
constraint is a genuine LMI in the offsets, the bound and the multipliers.
The bound is minimized by bisection over pure feasibility problems solved by
the projection kernel.  Nominal scenario predictions are kept inside
constraint boxes tightened by a robust invariant set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import ConvexHull

from itl_lpc.concentration import DisturbanceBall
from itl_lpc.errors import (
    ApproximationFailedError,
    DomainError,
    InvalidInputError,
    MpcInfeasibleError,
    TighteningInfeasibleError,
)
from itl_lpc.linalg import spectral_radius, sym_sqrt, symmetrize
from itl_lpc.membership import EllipsoidSet, QmiSet, contains, sample_members
from itl_lpc.synthesis import FeasibilityProblem, LmiGroup


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights, constraint boxes and scenario parameters."""

    N: int
    Q: np.ndarray
    R: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    eps_s: float = 0.1
    beta_s: float = 0.01
    eps_margin: float = 1e-7
    scenario_cap: int = 200
    bisect_rel_tol: float = 1e-3
    sweeps_per_round: int = 60
    max_bisect: int = 14

    def __post_init__(self):
        if self.N < 1:
            raise InvalidInputError("MpcConfig: N must be >= 1")
        if not (0.0 < self.eps_s < 1.0 and 0.0 < self.beta_s < 1.0):
            raise InvalidInputError("MpcConfig: eps_s and beta_s must lie in (0, 1)")
        for name in ("Q", "R", "x_lo", "x_hi", "u_lo", "u_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def n_x(self) -> int:
        return self.Q.shape[0]

    @property
    def n_u(self) -> int:
        return self.R.shape[0]

    @property
    def n_V(self) -> int:
        return self.n_u * self.N

    @property
    def x_box(self) -> tuple:
        return self.x_lo, self.x_hi

    @property
    def u_box(self) -> tuple:
        return self.u_lo, self.u_hi


@dataclass(frozen=True)
class PredictionMatrices:
    """Stacked closed-loop prediction of the state trajectory.

    X_bar = Phi_AB V_pad + Phi_A x + Phi_w W with V_pad the input offsets
    padded by one trailing zero block and W the stacked disturbances.
    """

    Phi_AB: np.ndarray
    Phi_A: np.ndarray
    Phi_w: np.ndarray
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    N: int


def prediction_matrices(A, B, K, N: int) -> PredictionMatrices:
    """Block-Toeplitz prediction matrices for the closed loop A + B K."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n_x, n_u = B.shape
    a_hat = A + B @ K
    powers = [np.eye(n_x)]
    for _ in range(N):
        powers.append(a_hat @ powers[-1])
    phi_a = np.vstack(powers)
    phi_ab = np.zeros(((N + 1) * n_x, (N + 1) * n_u))
    phi_w = np.zeros(((N + 1) * n_x, N * n_x))
    for i in range(1, N + 1):
        for j in range(i):
            phi_ab[i * n_x:(i + 1) * n_x, j * n_u:(j + 1) * n_u] = powers[i - 1 - j] @ B
            phi_w[i * n_x:(i + 1) * n_x, j * n_x:(j + 1) * n_x] = powers[i - 1 - j]
    return PredictionMatrices(Phi_AB=phi_ab, Phi_A=phi_a, Phi_w=phi_w, A=A, B=B, K=K, N=N)


@dataclass(frozen=True)
class SpLmiBlocks:
    """S-procedure data over z = [1; x; W].

    The cost matrix is H(V) = M(V)^T M(V) where only the first column of the
    factor depends (affinely) on the input offsets: M(V)[:, 0] = m0_col +
    W_mat V.
    """

    H_vbar_pattern: np.ndarray
    H_w: np.ndarray
    H_x: np.ndarray
    M0: np.ndarray
    W_mat: np.ndarray
    pred: PredictionMatrices
    P_f: np.ndarray

    @property
    def z_dim(self) -> int:
        return self.M0.shape[1]

    @property
    def rows(self) -> int:
        return self.M0.shape[0]

    def m_factor(self, V) -> np.ndarray:
        m = self.M0.copy()
        m[:, 0] += self.W_mat @ np.asarray(V, dtype=float).ravel()
        return m

    def h_matrix(self, V) -> np.ndarray:
        m = self.m_factor(V)
        return symmetrize(m.T @ m)


def _pad_selector(N: int, n_u: int) -> np.ndarray:
    """Maps the free offsets (N n_u) to V_pad with a trailing zero block."""
    e = np.zeros(((N + 1) * n_u, N * n_u))
    e[: N * n_u, :] = np.eye(N * n_u)
    return e


def build_sp_blocks(x, pred: PredictionMatrices, Q, R, K, Psi_w, P_f) -> SpLmiBlocks:
    """Assemble the S-procedure matrices for one parameter scenario.

    ``Psi_w`` is the stacked-disturbance ball parameter; its trace is the
    squared ball radius.  The factor rows stack the square-rooted state
    weights (Q repeated, terminal P_f) over the predicted trajectory and the
    square-rooted input weight over the first N closed-loop inputs.
    """
    x = np.asarray(x, dtype=float).ravel()
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    P_f = np.atleast_2d(np.asarray(P_f, dtype=float))
    N = pred.N
    n_x = Q.shape[0]
    n_u = R.shape[0]
    n_w = N * n_x
    z_dim = 1 + n_x + n_w

    sq = sym_sqrt(Q)
    sr = sym_sqrt(R)
    spf = sym_sqrt(P_f)
    q_half = np.zeros(((N + 1) * n_x, (N + 1) * n_x))
    for i in range(N):
        q_half[i * n_x:(i + 1) * n_x, i * n_x:(i + 1) * n_x] = sq
    q_half[N * n_x:, N * n_x:] = spf
    # Input rows: sqrt(R) on the first N input blocks; the terminal input is
    # unweighted and its rows are dropped.
    r_half = np.zeros((N * n_u, (N + 1) * n_u))
    for i in range(N):
        r_half[i * n_u:(i + 1) * n_u, i * n_u:(i + 1) * n_u] = sr
    k_bar = np.kron(np.eye(N + 1), K)
    e_pad = _pad_selector(N, n_u)

    rows = (N + 1) * n_x + N * n_u
    m0 = np.zeros((rows, z_dim))
    # Columns for x and W (independent of V).
    m0[: (N + 1) * n_x, 1:1 + n_x] = q_half @ pred.Phi_A
    m0[: (N + 1) * n_x, 1 + n_x:] = q_half @ pred.Phi_w
    m0[(N + 1) * n_x:, 1:1 + n_x] = r_half @ k_bar @ pred.Phi_A
    m0[(N + 1) * n_x:, 1 + n_x:] = r_half @ k_bar @ pred.Phi_w
    # Affine dependence of the first column on V.
    w_mat = np.zeros((rows, N * n_u))
    w_mat[: (N + 1) * n_x, :] = q_half @ pred.Phi_AB @ e_pad
    w_mat[(N + 1) * n_x:, :] = r_half @ (k_bar @ pred.Phi_AB + np.eye((N + 1) * n_u)) @ e_pad

    h_vbar = np.zeros((z_dim, z_dim))
    h_vbar[0, 0] = 1.0
    h_w = np.zeros((z_dim, z_dim))
    h_w[0, 0] = float(np.trace(np.atleast_2d(Psi_w)))
    h_w[1 + n_x:, 1 + n_x:] = -np.eye(n_w)
    h_x = np.zeros((z_dim, z_dim))
    h_x[0, 0] = float(x @ x)
    h_x[1:1 + n_x, 1:1 + n_x] = -np.eye(n_x)
    return SpLmiBlocks(H_vbar_pattern=h_vbar, H_w=h_w, H_x=h_x, M0=m0, W_mat=w_mat,
                       pred=pred, P_f=P_f)


def scenario_count(eps_s: float, beta_s: float, n_V: int) -> int:
    """Sample count for an eps_s-level robustly feasible solution with
    confidence 1 - beta_s."""
    if not (0.0 < eps_s < 1.0 and 0.0 < beta_s < 1.0):
        raise InvalidInputError("scenario_count: eps_s and beta_s must lie in (0, 1)")
    if n_V < 1:
        raise InvalidInputError("scenario_count: n_V must be >= 1")
    val = (2.0 / eps_s) * math.log(1.0 / beta_s) + 2.0 * n_V + (2.0 * n_V / eps_s) * math.log(2.0 / eps_s)
    return int(math.ceil(val))


def achieved_eps(n_s: int, beta_s: float, n_V: int) -> float:
    """Invert the scenario-count formula: the eps level a given sample count
    actually certifies (used when the count is capped)."""
    lo, hi = 1e-9, 1.0 - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if scenario_count(mid, beta_s, n_V) <= n_s:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class ScenarioSet:
    """Sampled parameter scenarios with their certification levels."""

    members: list
    count: int
    eps_s: float
    beta_s: float
    capped: bool = False


def sample_scenarios(es: EllipsoidSet, config: MpcConfig, rng: np.random.Generator,
                     qmi: QmiSet | None = None) -> ScenarioSet:
    """Draw the scenario set for one solve; the count follows the sample
    bound, capped at ``scenario_cap`` with the achieved level recomputed."""
    n_needed = scenario_count(config.eps_s, config.beta_s, config.n_V)
    capped = n_needed > config.scenario_cap
    n_s = min(n_needed, config.scenario_cap)
    eps_eff = achieved_eps(n_s, config.beta_s, config.n_V) if capped else config.eps_s
    members = sample_members(es, n_s, rng)
    if qmi is not None:
        members = [m for m in members if contains(qmi, m[0], m[1])] or members
    return ScenarioSet(members=members, count=len(members), eps_s=eps_eff,
                       beta_s=config.beta_s, capped=capped)


# ---------------------------------------------------------------------------
# Robust invariant set and constraint tightening
# ---------------------------------------------------------------------------

class Polytope:
    """Small vertex+halfspace polytope with an optional ball inflation."""

    def __init__(self, vertices: np.ndarray, inflation: float = 0.0):
        v = np.atleast_2d(np.asarray(vertices, dtype=float))
        self.dim = v.shape[1]
        self.inflation = float(inflation)
        if self.dim == 1:
            lo, hi = float(v.min()), float(v.max())
            self.vertices = np.array([[lo], [hi]])
            self._eqs = None
        elif v.shape[0] > self.dim:
            try:
                hull = ConvexHull(v)
                self.vertices = v[hull.vertices]
                self._eqs = hull.equations  # rows [a, b]: a.x + b <= 0
            except Exception:
                self.vertices = v
                self._eqs = None
        else:
            self.vertices = v
            self._eqs = None

    def support(self, d: np.ndarray) -> float:
        d = np.asarray(d, dtype=float).ravel()
        return float(np.max(self.vertices @ d)) + self.inflation * float(np.linalg.norm(d))

    def contains_points(self, pts: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.dim == 1:
            lo = self.vertices.min() - self.inflation
            hi = self.vertices.max() + self.inflation
            return (pts[:, 0] >= lo - tol) & (pts[:, 0] <= hi + tol)
        if self._eqs is None:
            raise InvalidInputError("polytope has no halfspace form")
        a, b = self._eqs[:, :-1], self._eqs[:, -1]
        slack = self.inflation * np.linalg.norm(a, axis=1)
        return np.all(pts @ a.T + b <= slack + tol, axis=1)

    def sample_points(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Convex combinations of vertices (covers the hull without the
        inflation shell)."""
        weights = rng.dirichlet(np.ones(self.vertices.shape[0]), size=count)
        return weights @ self.vertices


def _support_directions(dim: int) -> np.ndarray:
    dirs = [np.eye(dim), -np.eye(dim)]
    if dim >= 2:
        rng = np.random.default_rng(1234)
        extra = rng.standard_normal((24, dim))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        dirs.append(extra)
    return np.vstack(dirs)


def _box_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    n = lo.shape[0]
    corners = np.array(np.meshgrid(*[(l, h) for l, h in zip(lo, hi)], indexing="ij"))
    return corners.reshape(n, -1).T


def robust_invariant_set(scenarios, K, ball: DisturbanceBall, eps_term: float = 1e-3,
                         max_iter: int = 80) -> Polytope:
    """Outer approximation of the robust positively invariant set.

    Iterates Z <- hull(union_j A_hat_j Z) + W_box from the origin, with W_box
    the bounding box of the per-step disturbance ball, until the support
    growth over a fixed direction grid drops below ``eps_term``; the result is
    then inflated by the geometric tail h / (1 - rho_max).
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    members = scenarios.members if isinstance(scenarios, ScenarioSet) else list(scenarios)
    a_hats = [np.asarray(a) + np.asarray(b) @ K for a, b in members]
    n_x = a_hats[0].shape[0]
    rho_max = max(spectral_radius(a) for a in a_hats)
    if rho_max >= 1.0 - 1e-9:
        raise DomainError(f"robust_invariant_set: non-contractive scenario (rho={rho_max:.6f})")
    r = ball.radius
    w_box = _box_vertices(-r * np.ones(n_x), r * np.ones(n_x)) if r > 0 else np.zeros((1, n_x))
    dirs = _support_directions(n_x)

    z = Polytope(np.zeros((1, n_x)))
    prev_support = np.array([z.support(d) for d in dirs])
    growth = np.inf
    for _ in range(max_iter):
        mapped = np.vstack([z.vertices @ a.T for a in a_hats])
        summed = (mapped[:, None, :] + w_box[None, :, :]).reshape(-1, n_x)
        z = Polytope(summed)
        support = np.array([z.support(d) for d in dirs])
        growth = float(np.max(support - prev_support))
        prev_support = support
        if growth < eps_term:
            inflation = growth / (1.0 - rho_max)
            return Polytope(z.vertices, inflation=inflation)
    raise ApproximationFailedError(f"robust_invariant_set: growth {growth:.3e} after {max_iter} iterations")


@dataclass(frozen=True)
class TightenedConstraints:
    """Invariant set plus the tightened state and input boxes."""

    Z_I: Polytope
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray

    @property
    def x_box(self) -> tuple:
        return self.x_lo, self.x_hi

    @property
    def u_box(self) -> tuple:
        return self.u_lo, self.u_hi


def tighten(x_box, u_box, K, z_i: Polytope) -> TightenedConstraints:
    """Minkowski differences X - Z_I and U - K Z_I in halfspace form.

    Box facets only require support-function offsets; an empty result raises.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    x_lo, x_hi = (np.asarray(b, dtype=float).ravel() for b in x_box)
    u_lo, u_hi = (np.asarray(b, dtype=float).ravel() for b in u_box)
    n_x, n_u = x_lo.shape[0], u_lo.shape[0]
    ex = np.eye(n_x)
    new_x_hi = np.array([x_hi[i] - z_i.support(ex[i]) for i in range(n_x)])
    new_x_lo = np.array([x_lo[i] + z_i.support(-ex[i]) for i in range(n_x)])
    eu = np.eye(n_u)
    new_u_hi = np.array([u_hi[i] - z_i.support(K.T @ eu[i]) for i in range(n_u)])
    new_u_lo = np.array([u_lo[i] + z_i.support(-(K.T @ eu[i])) for i in range(n_u)])
    if np.any(new_x_hi < new_x_lo) or np.any(new_u_hi < new_u_lo):
        raise TighteningInfeasibleError("tighten: invariant set exceeds a constraint box")
    return TightenedConstraints(Z_I=z_i, x_lo=new_x_lo, x_hi=new_x_hi, u_lo=new_u_lo, u_hi=new_u_hi)


# ---------------------------------------------------------------------------
# The per-step min-max solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MpcSolution:
    """Input offsets, the certified worst-case cost bound and diagnostics."""

    V: np.ndarray
    Vbar: float
    u0: np.ndarray
    tau_x: np.ndarray
    tau_w: np.ndarray
    status: str
    n_scenarios: int


def _nominal_trajectory(pred: PredictionMatrices, x, V) -> tuple:
    """Zero-disturbance predicted states (N+1, n_x) and inputs (N, n_u)."""
    n_x = pred.A.shape[0]
    n_u = pred.B.shape[1]
    e_pad = _pad_selector(pred.N, n_u)
    x_bar = (pred.Phi_A @ x + pred.Phi_AB @ e_pad @ np.asarray(V, dtype=float)).reshape(pred.N + 1, n_x)
    inputs = np.array([pred.K @ x_bar[i] + np.asarray(V)[i * n_u:(i + 1) * n_u] for i in range(pred.N)])
    return x_bar, inputs


def _nominal_ok(blocks: list, x, V, tight: TightenedConstraints, theta_f: float, tol: float = 1e-9) -> bool:
    for blk in blocks:
        x_bar, inputs = _nominal_trajectory(blk.pred, x, V)
        if np.any(x_bar[1:] > tight.x_hi + tol) or np.any(x_bar[1:] < tight.x_lo - tol):
            return False
        if np.any(inputs > tight.u_hi + tol) or np.any(inputs < tight.u_lo - tol):
            return False
        x_n = x_bar[-1]
        if float(x_n @ blk.P_f @ x_n) > theta_f + tol * max(1.0, theta_f):
            return False
    return True


def _scenario_vbar_for_v(blk: SpLmiBlocks, V) -> tuple | None:
    """Exact smallest certified bound for one scenario at fixed offsets.

    Minimizes over the two nonnegative multipliers the Schur-complement value
    of the S-procedure inequality; returns (vbar, tau_x, tau_w) or None when
    no multiplier pair renders the rest-block negative semidefinite.
    """
    h = blk.h_matrix(V)
    hx, hw = blk.H_x, blk.H_w
    z = h.shape[0]
    rest = slice(1, z)
    scale = max(1.0, float(np.abs(h).max()))

    def value(log_tau: np.ndarray) -> float:
        tx, tw = np.exp(log_tau)
        g = h + tx * hx + tw * hw
        s = -(g[rest, rest])
        w, vv = np.linalg.eigh(symmetrize(s))
        if w[0] < -1e-9 * scale:
            return np.inf
        q = g[0, 1:]
        coeffs = vv.T @ q
        w_pos = np.maximum(w, 0.0)
        rank_tol = 1e-12 * max(w_pos[-1], 1.0)
        null = w_pos <= rank_tol
        if np.any(np.abs(coeffs[null]) > 1e-7 * scale):
            return np.inf
        quad = float(np.sum(coeffs[~null] ** 2 / w_pos[~null]))
        return float(g[0, 0]) + quad

    h_rr_max = float(np.linalg.eigvalsh(symmetrize(h[rest, rest]))[-1])
    base = math.log(max(h_rr_max, 1e-9) + 1.0)
    starts = [np.array([base, base]), np.array([base + 1.0, base + 1.0]),
              np.array([base + 2.0, base]), np.array([base, base + 2.0])]
    best_val, best_tau = np.inf, None
    for s0 in starts:
        res = minimize(value, s0, method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 400})
        if res.fun < best_val:
            best_val, best_tau = float(res.fun), np.exp(res.x)
    if not np.isfinite(best_val):
        return None
    return best_val, float(best_tau[0]), float(best_tau[1])


def _assemble_problem(blocks: list, tight: TightenedConstraints, theta_f: float, x,
                      n_V: int) -> tuple:
    """Build the stacked feasibility groups at a placeholder bound.

    Returns (problem, set_vbar) where ``set_vbar`` rewrites the bound entry in
    the scenario blocks' constant parts in place.
    """
    n_s = len(blocks)
    z_dim = blocks[0].z_dim
    rows = blocks[0].rows
    d_s = z_dim + rows
    m_s = n_V + 2

    f0_s = np.zeros((n_s, d_s, d_s))
    idx_s = np.zeros((n_s, m_s), dtype=np.int64)
    coeff_s = np.zeros((n_s, m_s, d_s, d_s))
    for j, blk in enumerate(blocks):
        f0 = np.zeros((d_s, d_s))
        f0[:z_dim, z_dim:] = blk.M0.T
        f0[z_dim:, :z_dim] = blk.M0
        f0[z_dim:, z_dim:] = np.eye(rows)
        f0_s[j] = f0
        for i in range(n_V):
            m1 = np.zeros((rows, z_dim))
            m1[:, 0] = blk.W_mat[:, i]
            coeff_s[j, i, :z_dim, z_dim:] = m1.T
            coeff_s[j, i, z_dim:, :z_dim] = m1
            idx_s[j, i] = i
        coeff_s[j, n_V, :z_dim, :z_dim] = -blk.H_x
        idx_s[j, n_V] = n_V + 2 * j
        coeff_s[j, n_V + 1, :z_dim, :z_dim] = -blk.H_w
        idx_s[j, n_V + 1] = n_V + 2 * j + 1
    scen_group = LmiGroup(f0_s, idx_s, coeff_s)

    # Nonnegativity of the multipliers.
    tau_f0 = np.zeros((2 * n_s, 1, 1))
    tau_idx = (n_V + np.arange(2 * n_s, dtype=np.int64))[:, None]
    tau_coeff = np.ones((2 * n_s, 1, 1, 1))
    tau_group = LmiGroup(tau_f0, tau_idx, tau_coeff)

    # Nominal box rows and the terminal ellipsoid, per scenario.
    box_f0, box_lin = [], []
    n_x = tight.x_lo.shape[0]
    n_u = tight.u_lo.shape[0]
    term_f0 = np.zeros((n_s, 1 + n_x, 1 + n_x))
    term_coeff = np.zeros((n_s, n_V, 1 + n_x, 1 + n_x))
    term_idx = np.tile(np.arange(n_V, dtype=np.int64), (n_s, 1))
    x = np.asarray(x, dtype=float).ravel()
    for j, blk in enumerate(blocks):
        pred = blk.pred
        e_pad = _pad_selector(pred.N, n_u)
        const_x = (pred.Phi_A @ x)[n_x:]
        lin_x = (pred.Phi_AB @ e_pad)[n_x:]
        k_bar = np.kron(np.eye(pred.N + 1), pred.K)
        const_u = (k_bar @ pred.Phi_A @ x)[: pred.N * n_u]
        lin_u = ((k_bar @ pred.Phi_AB + np.eye((pred.N + 1) * n_u)) @ e_pad)[: pred.N * n_u]
        hi_x = np.tile(tight.x_hi, pred.N)
        lo_x = np.tile(tight.x_lo, pred.N)
        hi_u = np.tile(tight.u_hi, pred.N)
        lo_u = np.tile(tight.u_lo, pred.N)
        box_f0.append(np.concatenate([hi_x - const_x, const_x - lo_x, hi_u - const_u, const_u - lo_u]))
        box_lin.append(np.concatenate([-lin_x, lin_x, -lin_u, lin_u], axis=0))
        # Terminal: [[theta_f, xN^T Lp],[Lp^T xN, I]] >= 0 with Lp Lp^T = P_f.
        lp = np.linalg.cholesky(symmetrize(blk.P_f) + 1e-12 * np.eye(n_x))
        cn = const_x[-n_x:] if pred.N >= 1 else (pred.Phi_A @ x)[-n_x:]
        ln = lin_x[-n_x:]
        tf0 = np.zeros((1 + n_x, 1 + n_x))
        tf0[0, 0] = theta_f
        tf0[0, 1:] = cn @ lp
        tf0[1:, 0] = lp.T @ cn
        tf0[1:, 1:] = np.eye(n_x)
        term_f0[j] = tf0
        for i in range(n_V):
            tci = np.zeros((1 + n_x, 1 + n_x))
            tci[0, 1:] = ln[:, i] @ lp
            tci[1:, 0] = lp.T @ ln[:, i]
            term_coeff[j, i] = tci
    box_f0 = np.concatenate(box_f0)[:, None, None]
    box_lin = np.concatenate(box_lin, axis=0)[:, :, None, None]
    box_idx = np.tile(np.arange(n_V, dtype=np.int64), (box_f0.shape[0], 1))
    box_group = LmiGroup(box_f0, box_idx, box_lin)
    term_group = LmiGroup(term_f0, term_idx, term_coeff)

    problem = FeasibilityProblem([scen_group, tau_group, box_group, term_group])

    def set_vbar(vbar: float):
        scen_group.F0[:, 0, 0] = vbar

    return problem, set_vbar


def solve_mpc(x, K, P_f, theta_f_value: float, tight: TightenedConstraints,
              scenarios: ScenarioSet, ball: DisturbanceBall, config: MpcConfig,
              warm: MpcSolution | None = None) -> MpcSolution:
    """One min-max solve: minimize the certified worst-case cost bound.

    An analytically certified seed (the shifted previous offsets, or zero
    offsets) brackets the bound from above; bisection over pure feasibility
    problems then lowers it.  The returned assignment is always verified, so
    the bound soundly dominates the cost for every scenario and every
    disturbance in the ball.  Raises MpcInfeasibleError naming the binding
    constraint class when no certified assignment is found.
    """
    x = np.asarray(x, dtype=float).ravel()
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n_V = config.n_V
    n_u = config.n_u
    members = scenarios.members
    if not members:
        raise InvalidInputError("solve_mpc: empty scenario set")
    blocks = [build_sp_blocks(x, prediction_matrices(a, b, K, config.N), config.Q, config.R,
                              K, ball.Psi_w, P_f) for a, b in members]
    problem, set_vbar = _assemble_problem(blocks, tight, theta_f_value, x, n_V)

    # Bracket the bound from above with a certified assignment.  With a warm
    # previous solution, geometric growth over kernel feasibility calls is
    # cheap; otherwise (first solve, or recovery) the exact per-scenario
    # evaluator certifies a seed at fixed offsets analytically.
    hi = None
    y_hi = None
    status = "seed"
    if warm is not None and np.isfinite(warm.Vbar):
        y0 = np.zeros(problem.n)
        y0[:n_V] = np.concatenate([np.asarray(warm.V, dtype=float)[n_u:], np.zeros(n_u)])
        if warm.tau_x.size == len(members) and warm.tau_w.size == len(members):
            y0[n_V::2] = warm.tau_x
            y0[n_V + 1::2] = warm.tau_w
        for growth in (1.3, 4.0, 16.0):
            hi_try = max(warm.Vbar, 1e-9) * growth
            set_vbar(hi_try)
            y = problem.solve(margin=config.eps_margin, budget=config.sweeps_per_round, y0=y0)
            if y is not None:
                hi, y_hi, status = hi_try, y, "bisected"
                break
    if hi is None:
        for v0 in ([np.concatenate([np.asarray(warm.V, dtype=float)[n_u:], np.zeros(n_u)])]
                   if warm is not None else []) + [np.zeros(n_V)]:
            if not _nominal_ok(blocks, x, v0, tight, theta_f_value):
                continue
            per = [_scenario_vbar_for_v(blk, v0) for blk in blocks]
            if any(p is None for p in per):
                continue
            hi = max(p[0] for p in per) * (1.0 + 1e-9) + 1e-12
            y_hi = np.zeros(problem.n)
            y_hi[:n_V] = v0
            y_hi[n_V::2] = [p[1] for p in per]
            y_hi[n_V + 1::2] = [p[2] for p in per]
            break
    if hi is None:
        raise MpcInfeasibleError("no certified bracketing assignment", binding="cost-lmi")

    lo = 0.0
    y_best, y_warm = y_hi, y_hi
    for _ in range(config.max_bisect):
        if hi - lo <= config.bisect_rel_tol * max(hi, 1e-9):
            break
        mid = 0.5 * (lo + hi)
        set_vbar(mid)
        y = problem.solve(margin=config.eps_margin, budget=config.sweeps_per_round, y0=y_warm)
        if y is not None:
            hi, y_best, status = mid, y, "bisected"
            y_warm = y
        else:
            lo = mid
    v_opt = y_best[:n_V]
    u0 = K @ x + v_opt[:n_u]
    return MpcSolution(V=v_opt, Vbar=float(hi), u0=u0,
                       tau_x=y_best[n_V::2].copy(), tau_w=y_best[n_V + 1::2].copy(),
                       status=status, n_scenarios=len(members))


def recursive_feasibility_probe(solution_k: MpcSolution, x_next, K, P_f, theta_f_value: float,
                                tight: TightenedConstraints, scenarios: ScenarioSet,
                                ball: DisturbanceBall, config: MpcConfig) -> bool:
    """Check that the shifted offsets remain feasible at the successor state.

    Evaluates every constraint class of the next-step problem at the shifted
    candidate (trailing zero block appended): nominal state and input boxes,
    the terminal ellipsoid, and existence of a finite certified cost bound.
    Used as a property probe, not in the control path.
    """
    x_next = np.asarray(x_next, dtype=float).ravel()
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n_u = config.n_u
    shifted = np.concatenate([np.asarray(solution_k.V, dtype=float)[n_u:], np.zeros(n_u)])
    blocks = [build_sp_blocks(x_next, prediction_matrices(a, b, K, config.N), config.Q, config.R,
                              K, ball.Psi_w, P_f) for a, b in scenarios.members]
    if not _nominal_ok(blocks, x_next, shifted, tight, theta_f_value, tol=1e-7):
        return False
    return all(_scenario_vbar_for_v(blk, shifted) is not None for blk in blocks)


SOLVE_LOG_HEADER_PREFIX = ["k", "status", "Vbar", "n_scenarios", "solve_ms"]


def solve_log_header(n_u: int) -> list:
    return SOLVE_LOG_HEADER_PREFIX + [f"u_{i + 1}" for i in range(n_u)]
