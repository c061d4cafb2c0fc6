"""Experiment orchestration: the membership study, seeded closed-loop runs,
metrics and stability monitors.

Every run is driven by a single seeded generator so that identical
configurations reproduce identical records; wall-clock solve times are kept
out of the record and live only in the per-step solve log CSV.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from itl_lpc.concentration import ConcentrationModel, DisturbanceBall, disturbance_ball, phi1
from itl_lpc.errors import DomainError, InvalidInputError, ItlError, MpcInfeasibleError, SynthesisFailedError
from itl_lpc.linalg import spectral_radius
from itl_lpc.membership import build_psi, ellipsoid_form, membership_min_eig, sample_members, volume_proxy
from itl_lpc.mpc import (
    MpcConfig,
    Polytope,
    MpcSolution,
    TightenedConstraints,
    recursive_feasibility_probe,
    robust_invariant_set,
    sample_scenarios,
    solve_log_header,
    solve_mpc,
    tighten,
)
from itl_lpc.synthesis import (
    IscResult,
    StabilityCertificate,
    TerminalIngredients,
    check_terminal_lmi,
    delta2_estimate,
    delta_m_lower_bound,
    lipschitz_Vf,
    stage_cost,
    synthesize_isc,
    terminal_cost,
    theta_f,
)
from itl_lpc.system import (
    BoundedMatrix,
    CovarianceGaussian,
    DataSample,
    Dataset,
    DiscreteSet,
    LtiSystem,
    assemble_matrices,
    random_system,
    sample_disturbance,
    step,
    write_trajectory_csv,
)
from itl_lpc.trigger import TriggerEvent, TriggerState, online_update, write_event_log

# The third-order benchmark plant: unstable open loop (spectral radius 1.514).
EQ33_A = np.array([
    [0.850, -0.038, -0.038],
    [0.735, 0.815, 1.594],
    [-0.664, 0.697, -0.064],
])
EQ33_B = np.array([
    [1.431, 0.705],
    [1.620, -1.129],
    [0.913, 0.369],
])


class RunAborted(ItlError):
    """The closed-loop run could not be initialised within its step cap."""


@dataclass
class ExperimentConfig:
    """Everything a seeded closed-loop run needs."""

    system_source: str = "eq33"        # eq33 | explicit | random
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    n_x: int = 3
    n_u: int = 2
    eig_range: tuple = (-3.0, 3.0)
    noise_kind: str = "discrete"       # discrete | gaussian | bounded
    noise_levels: tuple = (-1.0, 0.0, 1.0)
    noise_sigma: float | np.ndarray = 1.0
    noise_phi_bar: float | np.ndarray = 1.0
    prior_kind: str | None = None      # concentration prior override
    prior_phi_bar: float | np.ndarray = 1.0
    prior_sigma: float | np.ndarray = 1.0
    delta: float = 1.0
    delta1: float = 0.1
    eps_l: float = 0.9
    delta_M_override: float | None = None
    eps_slack: float = 0.1             # the monitor slack epsilon
    seed: int = 0
    horizon: int = 201
    excitation_std: float = 1.0
    init_cap: int = 80
    mpc: MpcConfig | None = None
    probe: bool = False
    zi_scenarios: int = 10
    zi_eps: float = 1e-3
    delta_M_cap: float = 1024.0
    inclusion_samples: int = 200

    def __post_init__(self):
        if self.mpc is None:
            self.mpc = default_mpc_config()
        if not (0.0 < self.delta <= 1.0 and 0.0 < self.delta1 <= 1.0):
            raise InvalidInputError("delta and delta1 must lie in (0, 1]")
        if self.seed is None:
            raise InvalidInputError("a seed is mandatory")

    # -- runtime objects ----------------------------------------------------

    def system(self) -> LtiSystem:
        if self.system_source == "eq33":
            return LtiSystem(A=EQ33_A, B=EQ33_B)
        if self.system_source == "explicit":
            if self.A is None or self.B is None:
                raise InvalidInputError("explicit system needs A and B")
            return LtiSystem(A=np.asarray(self.A), B=np.asarray(self.B))
        if self.system_source == "random":
            rng = np.random.default_rng(self.seed + 777)
            return random_system(rng, self.n_x, self.n_u, self.eig_range)
        raise InvalidInputError(f"unknown system source {self.system_source!r}")

    def noise_model(self):
        n_x = self.system().n_x
        if self.noise_kind == "discrete":
            return DiscreteSet.per_coordinate(self.noise_levels, n_x)
        if self.noise_kind == "gaussian":
            return CovarianceGaussian(sigma_w=_as_psd(self.noise_sigma, n_x))
        if self.noise_kind == "bounded":
            return BoundedMatrix(phi_bar=_as_psd(self.noise_phi_bar, n_x))
        raise InvalidInputError(f"unknown noise kind {self.noise_kind!r}")

    def concentration_model(self) -> ConcentrationModel:
        """Prior used by the trigger and the learned set.

        Defaults to the noise model itself; for the discrete benchmark noise
        the deterministic per-coordinate bound is used as the prior (exact
        for that noise), so the default prior for ``discrete`` is bounded
        with phi_bar = diag of per-coordinate max squares.
        """
        n_x = self.system().n_x
        kind = self.prior_kind
        if kind is None:
            kind = "bounded" if self.noise_kind in ("discrete", "bounded") else "gaussian"
        if kind == "bounded":
            if self.noise_kind == "discrete" and self.prior_kind is None:
                model = self.noise_model()
                phi_bar = model.max_coordinate_squares()
            elif self.noise_kind == "bounded" and self.prior_kind is None:
                phi_bar = _as_psd(self.noise_phi_bar, n_x)
            else:
                phi_bar = _as_psd(self.prior_phi_bar, n_x)
            return ConcentrationModel(disturbance=BoundedMatrix(phi_bar=phi_bar), delta=1.0)
        if kind == "gaussian":
            if self.noise_kind == "gaussian" and self.prior_kind is None:
                sigma = _as_psd(self.noise_sigma, n_x)
            else:
                sigma = _as_psd(self.prior_sigma, n_x)
            return ConcentrationModel(disturbance=CovarianceGaussian(sigma_w=sigma), delta=self.delta)
        if kind == "discrete":
            return ConcentrationModel(disturbance=self.noise_model(), delta=self.delta)
        raise InvalidInputError(f"unknown prior kind {kind!r}")


def _as_psd(value, n_x: int) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value) * np.eye(n_x)
    if value.ndim == 1:
        return np.diag(value)
    return value


def default_mpc_config(scenario_cap: int = 16) -> MpcConfig:
    """The benchmark settings: horizon 5, Q = diag{2,2,2}, R = diag{1,1},
    loose constraint boxes so the tightening machinery is exercised without
    binding on benchmark-scale trajectories."""
    return MpcConfig(
        N=5,
        Q=np.diag([2.0, 2.0, 2.0]),
        R=np.diag([1.0, 1.0]),
        x_lo=-50.0 * np.ones(3),
        x_hi=50.0 * np.ones(3),
        u_lo=-20.0 * np.ones(2),
        u_hi=20.0 * np.ones(2),
        eps_s=0.1,
        beta_s=0.01,
        scenario_cap=scenario_cap,
    )


def eq33_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """The benchmark closed-loop preset: unstable plant, three-level noise,
    eps_l = 0.9, ball level delta1 = 0.1."""
    cfg = dict(system_source="eq33", noise_kind="discrete", noise_levels=(-1.0, 0.0, 1.0),
               delta=1.0, delta1=0.1, eps_l=0.9, seed=seed, horizon=201)
    cfg.update(overrides)
    return ExperimentConfig(**cfg)


# ---------------------------------------------------------------------------
# Run record
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    """Everything logged along one closed-loop run.

    Solve wall-clock times are excluded so that records of identical seeded
    runs compare equal; timings go only to the solve log CSV.
    """

    states: np.ndarray
    inputs: np.ndarray
    noises: np.ndarray
    events: list
    solve_rows: list            # (k, status, Vbar, n_scenarios, u...)
    solve_ms: list
    probes: list
    k_rank: int | None
    n_rank: int | None
    k_init: int
    n_init: int
    n_end: int
    isc: IscResult | None
    terminal: TerminalIngredients | None
    config_echo: dict
    synthesis_failures: int = 0

    def deterministic_view(self) -> dict:
        return {
            "states": self.states.tolist(),
            "inputs": self.inputs.tolist(),
            "noises": self.noises.tolist(),
            "events": [(e.k, e.accepted, e.reason, repr(e.qii), repr(e.det_T), repr(e.tr_phi1_tilde), e.n_k)
                       for e in self.events],
            "solve_rows": [tuple(map(repr, row)) for row in self.solve_rows],
            "probes": self.probes,
            "counters": (self.k_rank, self.n_rank, self.k_init, self.n_init, self.n_end),
        }

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        n_x = self.states.shape[1]
        n_u = self.inputs.shape[1]
        samples = [DataSample(x=self.states[k], u=self.inputs[k], x_next=self.states[k + 1], k=k)
                   for k in range(self.inputs.shape[0])]
        selected = [e.k for e in self.events if e.accepted]
        write_trajectory_csv(out / "trajectory.csv", samples, selected, n_x, n_u)
        write_event_log(out / "events.csv", self.events)
        with (out / "solves.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(solve_log_header(n_u))
            for row, ms in zip(self.solve_rows, self.solve_ms):
                k, status, vbar, n_scen = row[0], row[1], row[2], row[3]
                writer.writerow([k, status, repr(vbar), n_scen, f"{ms:.3f}"] + [repr(v) for v in row[4:]])
        cert = {
            "k_rank": self.k_rank, "n_rank": self.n_rank,
            "k_init": self.k_init, "n_init": self.n_init, "n_end": self.n_end,
            "synthesis_failures": self.synthesis_failures,
        }
        if self.isc is not None:
            cert["K"] = self.isc.K.tolist()
            cert["P"] = self.isc.P.tolist()
            cert["xi"] = self.isc.xi
            cert["rho"] = self.isc.rho
            cert["margin"] = self.isc.margin
        if self.terminal is not None:
            cert["P_f"] = self.terminal.P_f.tolist()
            cert["delta_M"] = self.terminal.delta_M
            cert["theta_f"] = self.terminal.theta_f
            cert["L_f"] = self.terminal.L_f
            cert["xi_cert"] = self.terminal.xi_cert
        with (out / "certificates.json").open("w") as fh:
            json.dump(cert, fh, indent=2)
        with (out / "config.json").open("w") as fh:
            json.dump(self.config_echo, fh, indent=2, default=str)
        if self.probes:
            with (out / "probes.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["k", "feasible"])
                for k, ok in self.probes:
                    writer.writerow([k, int(ok)])


# ---------------------------------------------------------------------------
# Closed loop
# ---------------------------------------------------------------------------

def run_closed_loop(cfg: ExperimentConfig) -> RunRecord:
    """Two-phase run: white-noise excitation until a stabilizing gain exists,
    then the trigger-gated min-max loop to the configured horizon."""
    rng = np.random.default_rng(cfg.seed)
    sys = cfg.system()
    noise = cfg.noise_model()
    conc = cfg.concentration_model()
    mpc_cfg = cfg.mpc
    dims = (sys.n_x, sys.n_u)

    state = TriggerState(dataset=Dataset(), eps_l=cfg.eps_l, delta=conc.delta,
                         inclusion_samples=cfg.inclusion_samples)
    x = np.zeros(sys.n_x)
    states, inputs, noises = [x.copy()], [], []
    events, solve_rows, solve_ms, probes = [], [], [], []
    synthesis_failures = 0

    # Phase 1: excitation until the gain LMI is feasible.
    isc = None
    k = 0
    while isc is None:
        if k >= cfg.init_cap:
            raise RunAborted(f"no stabilizing gain within {cfg.init_cap} excitation steps "
                             f"(rank_met={state.rank_met}, n={state.dataset.n})")
        u = cfg.excitation_std * rng.standard_normal(sys.n_u)
        w = sample_disturbance(noise, rng)
        x_next = step(sys, x, u, w)
        state, ev = online_update(state, DataSample(x=x, u=u, x_next=x_next, k=k), conc, rng=rng)
        events.append(ev)
        inputs.append(u)
        noises.append(w)
        states.append(x_next.copy())
        x = x_next
        k += 1
        if state.rank_met:
            try:
                dm = assemble_matrices(state.dataset)
                isc = synthesize_isc(build_psi(dm, phi1(conc, dm.n)), dims)
            except SynthesisFailedError:
                synthesis_failures += 1
                isc = None
    k_init, n_init = k, state.dataset.n

    ball = disturbance_ball(conc, mpc_cfg.N, cfg.delta1)
    es = None
    terminal = None
    tight_c = None

    def refresh_ingredients():
        """Terminal cost, terminal level, invariant set and tightened boxes
        for the current gain; runs at every gain update."""
        nonlocal es, terminal, tight_c
        dm = assemble_matrices(state.dataset)
        bound = phi1(conc, dm.n)
        es = ellipsoid_form(dm, bound)
        k_gain = isc.K
        delta_m = cfg.delta_M_override
        if delta_m is None:
            try:
                p_f_prov = terminal_cost(mpc_cfg.Q, mpc_cfg.R, k_gain, 1.0)
                delta_m = delta_m_lower_bound(es, k_gain, bound, dm.X_plus, np.linalg.inv(p_f_prov))
            except DomainError:
                delta_m = 1.0
            delta_m = max(delta_m, 1e-6)
        psi = build_psi(dm, bound)
        xi_cert = None
        while True:
            p_f = terminal_cost(mpc_cfg.Q, mpc_cfg.R, k_gain, delta_m)
            xi_cert = check_terminal_lmi(p_f, k_gain, psi, delta_m)
            if xi_cert is not None or delta_m >= cfg.delta_M_cap:
                break
            delta_m *= 2.0
        lo, hi = mpc_cfg.x_box
        box_radius = float(np.sqrt(np.sum(np.maximum(lo**2, hi**2))))
        l_f = lipschitz_Vf(p_f, box_radius + ball.radius)
        th = theta_f(delta_m, l_f, mpc_cfg.x_box, ball)
        terminal = TerminalIngredients(P_f=p_f, delta_M=delta_m, theta_f=th, L_f=l_f,
                                       xi_cert=xi_cert if xi_cert is not None else float("nan"))
        zi_members = sample_members(es, cfg.zi_scenarios, rng)
        zi_members = [m for m in zi_members
                      if spectral_radius(np.asarray(m[0]) + np.asarray(m[1]) @ k_gain) < 1.0 - 1e-6]
        if not zi_members:
            zi_members = [(sys.A, sys.B)] if spectral_radius(sys.A + sys.B @ k_gain) < 1 - 1e-6 else []
        if zi_members:
            z_i = robust_invariant_set(zi_members, k_gain, ball, eps_term=cfg.zi_eps)
            tight_c = tighten(mpc_cfg.x_box, mpc_cfg.u_box, k_gain, z_i)
        else:
            tight_c = tighten(mpc_cfg.x_box, mpc_cfg.u_box, k_gain,
                              Polytope(np.zeros((1, sys.n_x))))

    refresh_ingredients()

    def on_accept(trigger_state):
        nonlocal isc, synthesis_failures
        dm = assemble_matrices(trigger_state.dataset)
        try:
            isc = synthesize_isc(build_psi(dm, phi1(conc, dm.n)), dims)
        except SynthesisFailedError:
            synthesis_failures += 1  # keep the previous gain
        refresh_ingredients()

    # Phase 2: trigger-gated predictive control.
    prev_solution = None
    for k in range(k_init, cfg.horizon):
        scen = sample_scenarios(es, mpc_cfg, rng)
        if cfg.probe and prev_solution is not None:
            ok = recursive_feasibility_probe(prev_solution, x, isc.K, terminal.P_f,
                                             terminal.theta_f, tight_c, scen, ball, mpc_cfg)
            probes.append((k, bool(ok)))
        t0 = time.perf_counter()
        try:
            sol = solve_mpc(x, isc.K, terminal.P_f, terminal.theta_f, tight_c, scen, ball,
                            mpc_cfg, warm=prev_solution)
            u = sol.u0
            status = sol.status
            vbar = sol.Vbar
            prev_solution = sol
        except MpcInfeasibleError as exc:
            u = isc.K @ x
            status = f"fallback:{exc.binding}"
            vbar = float("nan")
            prev_solution = None
        ms = (time.perf_counter() - t0) * 1e3
        solve_rows.append((k, status, vbar, scen.count, *np.asarray(u, dtype=float)))
        solve_ms.append(ms)

        w = sample_disturbance(noise, rng)
        x_next = step(sys, x, u, w)
        state, ev = online_update(state, DataSample(x=x, u=u, x_next=x_next, k=k), conc,
                                  synthesizer=on_accept, rng=rng)
        events.append(ev)
        inputs.append(np.asarray(u, dtype=float))
        noises.append(w)
        states.append(x_next.copy())
        x = x_next

    return RunRecord(
        states=np.asarray(states), inputs=np.asarray(inputs), noises=np.asarray(noises),
        events=events, solve_rows=solve_rows, solve_ms=solve_ms, probes=probes,
        k_rank=state.k0, n_rank=state.n_rank, k_init=k_init, n_init=n_init,
        n_end=state.dataset.n, isc=isc, terminal=terminal,
        config_echo={"seed": cfg.seed, "eps_l": cfg.eps_l, "delta": cfg.delta,
                     "delta1": cfg.delta1, "horizon": cfg.horizon,
                     "system_source": cfg.system_source, "noise_kind": cfg.noise_kind,
                     "scenario_cap": mpc_cfg.scenario_cap},
        synthesis_failures=synthesis_failures,
    )


# ---------------------------------------------------------------------------
# Metrics and monitors
# ---------------------------------------------------------------------------

def metrics(record: RunRecord, Q=None, R=None, k_start: int = 8, k_end: int = 200) -> dict:
    """Weighted square error J_W = sum_{k=k_start}^{k_end} x^T Q x + u^T R u,
    mean square error of the states over the same window, and the data
    counters."""
    Q = np.diag([2.0, 2.0, 2.0]) if Q is None else np.asarray(Q, dtype=float)
    R = np.diag([1.0, 1.0]) if R is None else np.asarray(R, dtype=float)
    if record.inputs.shape[0] <= k_end:
        raise InvalidInputError(f"metrics: record spans only {record.inputs.shape[0]} inputs, need > {k_end}")
    j_w = 0.0
    mse = 0.0
    n_terms = 0
    n_x = record.states.shape[1]
    for k in range(k_start, k_end + 1):
        j_w += stage_cost(record.states[k], record.inputs[k], Q, R)
        mse += float(record.states[k] @ record.states[k]) / n_x
        n_terms += 1
    return {
        "J_W": j_w,
        "MSE": mse / n_terms,
        "n_k0": record.n_init,
        "n_end": record.n_end,
        "max_state_norm": float(np.max(np.abs(record.states))),
    }


def stability_certificate(record: RunRecord, scenarios, ball: DisturbanceBall, cfg: ExperimentConfig,
                          delta2_count: int = 200,
                          rng: np.random.Generator | None = None) -> StabilityCertificate:
    """Certificate constants: the sampled terminal-drift bound, the stage-cost
    floor c1 = lambda_min(Q), and c2 from sampled cost-to-state ratios."""
    rng = np.random.default_rng(cfg.seed + 991) if rng is None else rng
    mpc_cfg = cfg.mpc
    p_f = record.terminal.P_f
    d2 = delta2_estimate(scenarios, record.isc.K, p_f, p_f, mpc_cfg.Q, mpc_cfg.R,
                         mpc_cfg.x_box, ball, delta2_count, rng)
    c1 = float(np.linalg.eigvalsh(mpc_cfg.Q)[0])
    # c2 from the cost-to-state ratios of the states the run visited.
    ratios = []
    for row in record.solve_rows:
        k, vbar = row[0], row[2]
        if not np.isfinite(vbar):
            continue
        xk = record.states[k]
        nrm = float(xk @ xk)
        if nrm > 1e-9:
            ratios.append(vbar / nrm)
    c2 = max(max(ratios) if ratios else c1, c1)
    gamma = 1.0 - c1 / c2 if c2 > 0 else 0.0
    eps = cfg.eps_slack
    c = (max(d2, 0.0) + eps) / (1.0 - gamma)
    return StabilityCertificate(delta2=d2, c1=c1, c2=c2, gamma=gamma, eps=eps, c=c)


def stability_monitor(record: RunRecord, cert: StabilityCertificate,
                      delta: float = 1.0, delta1: float = 0.1) -> dict:
    """Per-step checks of the invariance/decrease dichotomy on the logged
    optimal-cost series, reported against the probability floor delta*delta1."""
    series = [(row[0], row[2]) for row in record.solve_rows if np.isfinite(row[2])]
    if len(series) < 2:
        return {"n_checked": 0, "frequency": float("nan"), "floor": delta * delta1}
    satisfied = 0
    checked = 0
    by_k = dict(series)
    for k, v in series:
        if (k + 1) not in by_k:
            continue
        v_next = by_k[k + 1]
        checked += 1
        if v <= cert.c:
            ok = v_next <= cert.c
        else:
            ok = v_next <= v - cert.eps
        satisfied += int(ok)
    freq = satisfied / checked if checked else float("nan")
    return {"n_checked": checked, "frequency": freq, "floor": delta * delta1,
            "passes_floor": bool(checked == 0 or freq >= delta * delta1)}


# ---------------------------------------------------------------------------
# Membership study
# ---------------------------------------------------------------------------

def _membership_one(args):
    (idx, seed, sigma_bar, kind, n_samples, n_u, delta) = args
    rng = np.random.default_rng(seed)
    sys = random_system(rng, 3, n_u, (-3.0, 3.0))
    n_x = sys.n_x
    if kind == "bounded":
        model = ConcentrationModel(BoundedMatrix(phi_bar=n_x * np.sqrt(sigma_bar) * np.eye(n_x)), delta=1.0)
    elif kind == "gaussian":
        model = ConcentrationModel(CovarianceGaussian(sigma_w=sigma_bar * np.eye(n_x)), delta=delta)
    else:
        raise InvalidInputError(f"unknown membership study kind {kind!r}")
    x = rng.standard_normal(n_x)
    ds = Dataset()
    for k in range(n_samples):
        u = rng.standard_normal(n_u)
        w = sample_disturbance(model.disturbance, rng)
        x_next = step(sys, x, u, w)
        ds.append(DataSample(x=x, u=u, x_next=x_next, k=k))
        x = x_next
    dm = assemble_matrices(ds)
    qmi = build_psi(dm, phi1(model, dm.n))
    return (sigma_bar, kind, idx, membership_min_eig(qmi, sys.A, sys.B), n_samples)


MEMBERSHIP_HEADER = ["sigma_bar", "kind", "system", "min_eig", "n_samples"]


def validate_membership(num_systems: int, sigma_bars=(0.01, 0.3), delta: float = 0.9,
                        n_samples: int = 10, n_u: int = 2, seed: int = 0,
                        out_dir=None, workers: int = 1) -> dict:
    """Monte Carlo membership study over randomly generated third-order
    plants, for the bounded prior (phi_bar = n_x sqrt(sigma_bar) I) and the
    Gaussian prior (sigma_w = sigma_bar I) at the given level."""
    if num_systems < 1:
        raise InvalidInputError("validate_membership: num_systems must be >= 1")
    jobs = []
    for s_idx, sigma_bar in enumerate(sigma_bars):
        for k_idx, kind in enumerate(("bounded", "gaussian")):
            for i in range(num_systems):
                job_seed = seed + 100_003 * i + 50_021 * k_idx + 7_919 * s_idx
                jobs.append((i, job_seed, float(sigma_bar), kind, n_samples, n_u, delta))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_membership_one, jobs, chunksize=16))
    else:
        rows = [_membership_one(j) for j in jobs]
    stats = {}
    for sigma_bar in sigma_bars:
        for kind in ("bounded", "gaussian"):
            eigs = np.array([r[3] for r in rows if r[0] == sigma_bar and r[1] == kind])
            stats[(float(sigma_bar), kind)] = {
                "count": int(eigs.size),
                "frequency_nonneg": float(np.mean(eigs >= -1e-9)),
                "min": float(eigs.min()),
                "median": float(np.median(eigs)),
            }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "membership.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MEMBERSHIP_HEADER)
            for row in rows:
                writer.writerow([row[0], row[1], row[2], repr(row[3]), row[4]])
        with (out / "membership_stats.json").open("w") as fh:
            json.dump({f"{s}|{k}": v for (s, k), v in stats.items()}, fh, indent=2)
    return stats
