"""Online information-triggered data selection.

Before the data Gram reaches full rank every sample is recorded.  Afterwards a
sample enters the dataset only when it shrinks the volume proxy of the learned
set by at least the factor eps_l; a sample is skipped exactly when the
shrinkage test fails *and* the augmented set is contained in the current one.
Containment is evaluated at the matched Gram-bound budget (both sides at
n + 1 samples), under which adding a data column can only cut the set; this
keeps the proxy non-increasing across every accepted sample by construction.

The state is a single-writer state machine; snapshots handed to callbacks are
read-only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from itl_lpc.concentration import ConcentrationModel, phi1
from itl_lpc.errors import InvalidInputError, RankDeficientError
from itl_lpc.membership import build_psi, ellipsoid_form, inclusion_test, volume_proxy
from itl_lpc.system import DataMatrices, DataSample, Dataset, assemble_matrices

# Full re-inversion cadence for the incrementally updated information matrix.
REINVERT_EVERY = 25


@dataclass
class TriggerState:
    """Bookkeeping of the online data selector."""

    dataset: Dataset
    eps_l: float
    delta: float
    T: np.ndarray | None = None
    rank_met: bool = False
    k0: int | None = None
    n_rank: int | None = None
    accepts_since_inversion: int = 0
    inclusion_samples: int = 200

    def __post_init__(self):
        if not (0.0 < self.eps_l < 1.0):
            raise InvalidInputError("eps_l must lie in (0, 1)")


@dataclass(frozen=True)
class TriggerDecision:
    """Outcome of evaluating one incoming sample."""

    accept: bool
    qii: float
    reason: str  # pre-rank | insufficient-info | inclusion-failed | accepted


@dataclass(frozen=True)
class TriggerEvent:
    """One event-log row; serialised to the event CSV."""

    k: int
    accepted: bool
    reason: str
    qii: float
    det_T: float
    tr_phi1_tilde: float
    n_k: int


def augmented_info_matrix(T: np.ndarray, x, u) -> np.ndarray:
    """Rank-1 information update (T^-1 + z z^T)^-1 for z = [x; u].

    Sherman-Morrison: T - (T z z^T T) / (1 + z^T T z).
    """
    z = np.concatenate([np.asarray(x, dtype=float).ravel(), np.asarray(u, dtype=float).ravel()])
    tz = T @ z
    denom = 1.0 + float(z @ tz)
    return T - np.outer(tz, tz) / denom


def _raw_products(dm: DataMatrices, bound: np.ndarray) -> tuple:
    """(det T, trace Phi1_tilde, det*trace) with the determinant accumulated
    in extended precision; raises on a singular data Gram."""
    es = ellipsoid_form(dm, bound)
    try:
        low = np.linalg.cholesky(es.Phi2)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientError("trigger: data Gram is singular") from exc
    diag = np.asarray(np.diag(low), dtype=np.longdouble)
    det_t = np.longdouble(1.0) / np.prod(diag * diag)
    tr = np.longdouble(max(float(np.trace(es.Phi1_tilde)), 0.0))
    return det_t, tr, det_t * tr


def trigger_decision(state: TriggerState, sample: DataSample, model: ConcentrationModel,
                     rng: np.random.Generator | None = None) -> TriggerDecision:
    """Evaluate the skip condition for one incoming sample (post-rank only).

    The sample is skipped exactly when the proxy-shrinkage inequality holds
    (no sufficient shrinkage) and the augmented set is contained in the
    current one; any other combination accepts it.
    """
    if not state.rank_met or state.T is None:
        raise InvalidInputError("trigger_decision requires the rank condition; pre-rank samples are accepted upstream")
    dm = assemble_matrices(state.dataset)
    n = dm.n
    n_x = dm.n_x
    bound_prev = phi1(model, n)
    bound_cand = phi1(model, n + 1)
    dm_cand = dm.appended(sample.x, sample.u, sample.x_next)

    _, _, prod_prev = _raw_products(dm, bound_prev)
    _, _, prod_cand = _raw_products(dm_cand, bound_cand)

    if prod_prev > 0:
        ratio = float((prod_cand / prod_prev) ** (np.longdouble(n_x) / 2.0))
        qii = 1.0 - ratio
    else:
        # Degenerate proxy: nothing left to shrink.
        ratio = 1.0
        qii = 0.0

    shrink_fails = prod_cand >= np.longdouble(state.eps_l) ** (2.0 / n_x) * prod_prev
    if not shrink_fails:
        return TriggerDecision(accept=True, qii=qii, reason="accepted")

    # Shrinkage is insufficient; skipping additionally needs the augmented set
    # to be contained in the current one.  Both sides are built at the matched
    # budget n + 1, where the extra data column can only cut the set.
    inner = build_psi(dm_cand, bound_cand)
    outer = build_psi(dm, bound_cand)
    contained = inclusion_test(inner, outer, rng=rng, fallback_samples=state.inclusion_samples)
    if contained:
        return TriggerDecision(accept=False, qii=qii, reason="insufficient-info")
    return TriggerDecision(accept=True, qii=qii, reason="inclusion-failed")


def online_update(state: TriggerState, sample: DataSample, model: ConcentrationModel,
                  synthesizer=None, rng: np.random.Generator | None = None) -> tuple:
    """Process one incoming sample per the online updating procedure.

    Pre-rank samples are always appended.  Post-rank samples pass through the
    trigger; accepted ones refresh the information matrix and invoke the
    synthesizer callback (re-solving the gain LMI).  Skips leave the state
    untouched.  Returns (state, TriggerEvent).
    """
    if not state.rank_met:
        state.dataset.append(sample)
        dm = assemble_matrices(state.dataset)
        z = dm.regressor()
        n_z = z.shape[0]
        event = TriggerEvent(k=sample.k, accepted=True, reason="pre-rank", qii=float("nan"),
                             det_T=float("nan"), tr_phi1_tilde=float("nan"), n_k=state.dataset.n)
        if np.linalg.matrix_rank(z) == n_z:
            state.rank_met = True
            state.k0 = sample.k
            state.n_rank = state.dataset.n
            state.T = np.linalg.inv(z @ z.T)
            bound = phi1(model, dm.n)
            proxy = volume_proxy(dm, bound)
            event = replace(event, det_T=proxy.detT, tr_phi1_tilde=proxy.trPhi)
        return state, event

    decision = trigger_decision(state, sample, model, rng=rng)
    if not decision.accept:
        dm = assemble_matrices(state.dataset)
        proxy = volume_proxy(dm, phi1(model, dm.n))
        event = TriggerEvent(k=sample.k, accepted=False, reason=decision.reason, qii=decision.qii,
                             det_T=proxy.detT, tr_phi1_tilde=proxy.trPhi, n_k=state.dataset.n)
        return state, event

    state.dataset.append(sample)
    state.accepts_since_inversion += 1
    if state.accepts_since_inversion >= REINVERT_EVERY:
        z = assemble_matrices(state.dataset).regressor()
        state.T = np.linalg.inv(z @ z.T)
        state.accepts_since_inversion = 0
    else:
        state.T = augmented_info_matrix(state.T, sample.x, sample.u)
    dm = assemble_matrices(state.dataset)
    proxy = volume_proxy(dm, phi1(model, dm.n))
    event = TriggerEvent(k=sample.k, accepted=True, reason=decision.reason, qii=decision.qii,
                         det_T=proxy.detT, tr_phi1_tilde=proxy.trPhi, n_k=state.dataset.n)
    if synthesizer is not None:
        synthesizer(state)
    return state, event


EVENT_LOG_HEADER = ["k", "accepted", "reason", "qii", "det_T", "tr_phi1_tilde", "n_k"]


def write_event_log(path, events):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_LOG_HEADER)
        for e in events:
            writer.writerow([e.k, int(e.accepted), e.reason, repr(e.qii), repr(e.det_T),
                             repr(e.tr_phi1_tilde), e.n_k])


def read_event_log(path):
    path = Path(path)
    events = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            events.append(TriggerEvent(k=int(row[0]), accepted=bool(int(row[1])), reason=row[2],
                                       qii=float(row[3]), det_T=float(row[4]),
                                       tr_phi1_tilde=float(row[5]), n_k=int(row[6])))
    return events
