"""The LTI plant, disturbance generators, recorded datasets and their compact
matrix forms.

A dataset is single-writer (the online trigger loop); the read-only matrix
snapshots produced here may be shared freely.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from itl_lpc.errors import EmptyDataError, InvalidInputError


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time plant x(k+1) = A x(k) + B u(k) + w(k)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_2d(np.asarray(self.B, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise InvalidInputError(f"B must have {a.shape[0]} rows, got {b.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("system matrices must be finite")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class BoundedMatrix:
    """Deterministic disturbance with a known matrix bound w w^T <= phi_bar."""

    phi_bar: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.phi_bar, dtype=float))
        if p.shape[0] != p.shape[1]:
            raise InvalidInputError("phi_bar must be square")
        if np.any(np.linalg.eigvalsh(0.5 * (p + p.T)) < -1e-12 * max(1.0, np.abs(p).max())):
            raise InvalidInputError("phi_bar must be positive semi-definite")
        object.__setattr__(self, "phi_bar", 0.5 * (p + p.T))

    @property
    def n_x(self) -> int:
        return self.phi_bar.shape[0]


@dataclass(frozen=True)
class CovarianceGaussian:
    """Zero-mean Gaussian disturbance with known covariance sigma_w."""

    sigma_w: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma_w, dtype=float))
        if s.shape[0] != s.shape[1]:
            raise InvalidInputError("sigma_w must be square")
        if np.any(np.linalg.eigvalsh(0.5 * (s + s.T)) < -1e-12 * max(1.0, np.abs(s).max())):
            raise InvalidInputError("sigma_w must be positive semi-definite")
        object.__setattr__(self, "sigma_w", 0.5 * (s + s.T))

    @property
    def n_x(self) -> int:
        return self.sigma_w.shape[0]


@dataclass(frozen=True)
class DiscreteSet:
    """Disturbance drawn uniformly from a finite, zero-mean set of vectors.

    ``values`` is an (m, n_x) array, one candidate vector per row.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("discrete disturbance values must be finite")
        if np.any(np.abs(v.mean(axis=0)) > 1e-9 * max(1.0, np.abs(v).max())):
            raise InvalidInputError("discrete disturbance set must be zero mean")
        object.__setattr__(self, "values", v)

    @classmethod
    def per_coordinate(cls, levels, n_x: int) -> "DiscreteSet":
        """Product set of i.i.d. per-coordinate draws from ``levels``."""
        levels = np.asarray(levels, dtype=float)
        grids = np.meshgrid(*([levels] * n_x), indexing="ij")
        vals = np.stack([g.ravel() for g in grids], axis=1)
        return cls(vals)

    @property
    def n_x(self) -> int:
        return self.values.shape[1]

    def covariance(self) -> np.ndarray:
        """Exact covariance of the uniform law over the rows."""
        return self.values.T @ self.values / self.values.shape[0]

    def max_coordinate_squares(self) -> np.ndarray:
        """diag of per-coordinate maximum squares, max_i v_i^2 per coordinate."""
        return np.diag(np.max(self.values**2, axis=0))


DisturbanceModel = BoundedMatrix | CovarianceGaussian | DiscreteSet


@dataclass(frozen=True)
class DataSample:
    """One recorded triple d(k) = (x(k), u(k), x(k+1))."""

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    k: int

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).ravel())
        object.__setattr__(self, "x_next", np.asarray(self.x_next, dtype=float).ravel())
        if self.x.shape != self.x_next.shape:
            raise InvalidInputError("x and x_next must have the same dimension")


@dataclass
class Dataset:
    """Ordered collection of selected samples together with their index set."""

    samples: list = field(default_factory=list)
    indices: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.samples)

    def append(self, sample: DataSample):
        if self.indices and sample.k <= self.indices[-1]:
            raise InvalidInputError("sample indices must be strictly increasing")
        self.samples.append(sample)
        self.indices.append(sample.k)

    def copy(self) -> "Dataset":
        return Dataset(samples=list(self.samples), indices=list(self.indices))


@dataclass(frozen=True)
class DataMatrices:
    """Compact matrix form of a dataset: column j holds sample j."""

    X_minus: np.ndarray
    U_minus: np.ndarray
    X_plus: np.ndarray

    def __post_init__(self):
        if not (self.X_minus.shape[1] == self.U_minus.shape[1] == self.X_plus.shape[1]):
            raise InvalidInputError("data matrices must have equal column counts")

    @property
    def n(self) -> int:
        return self.X_minus.shape[1]

    @property
    def n_x(self) -> int:
        return self.X_minus.shape[0]

    @property
    def n_u(self) -> int:
        return self.U_minus.shape[0]

    def regressor(self) -> np.ndarray:
        """Stacked [X_minus; U_minus], one data column per sample."""
        return np.vstack([self.X_minus, self.U_minus])

    def appended(self, x, u, x_next) -> "DataMatrices":
        """Matrices with one candidate column appended."""
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        x_next = np.asarray(x_next, dtype=float).reshape(-1, 1)
        return DataMatrices(
            X_minus=np.hstack([self.X_minus, x]),
            U_minus=np.hstack([self.U_minus, u]),
            X_plus=np.hstack([self.X_plus, x_next]),
        )


def step(sys: LtiSystem, x, u, w) -> np.ndarray:
    """One exact plant step A x + B u + w."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if x.shape[0] != sys.n_x or u.shape[0] != sys.n_u or w.shape[0] != sys.n_x:
        raise InvalidInputError("step: dimension mismatch")
    return sys.A @ x + sys.B @ u + w


def assemble_matrices(dataset: Dataset) -> DataMatrices:
    """Stack the dataset into (X_minus, U_minus, X_plus), columns in index order."""
    if dataset.n == 0:
        raise EmptyDataError("assemble_matrices: empty dataset")
    xs = np.stack([s.x for s in dataset.samples], axis=1)
    us = np.stack([s.u for s in dataset.samples], axis=1)
    xn = np.stack([s.x_next for s in dataset.samples], axis=1)
    return DataMatrices(X_minus=xs, U_minus=us, X_plus=xn)


def sample_disturbance(model: DisturbanceModel, rng: np.random.Generator) -> np.ndarray:
    """One disturbance draw from the given model."""
    if isinstance(model, DiscreteSet):
        idx = rng.integers(model.values.shape[0])
        return model.values[idx].copy()
    if isinstance(model, CovarianceGaussian):
        return rng.multivariate_normal(np.zeros(model.n_x), model.sigma_w, method="cholesky" if _is_pd(model.sigma_w) else "svd")
    if isinstance(model, BoundedMatrix):
        # Uniform over the ellipsoid {w : w^T phi_bar^-1 w <= 1}: a uniform
        # ball draw mapped through the PSD square root of phi_bar.
        n = model.n_x
        g = rng.standard_normal(n)
        norm = np.linalg.norm(g)
        if norm == 0.0:
            return np.zeros(n)
        radius = rng.uniform() ** (1.0 / n)
        unit = g / norm * radius
        w, v = np.linalg.eigh(model.phi_bar)
        return (v * np.sqrt(np.maximum(w, 0.0))) @ (v.T @ unit)
    raise InvalidInputError(f"unknown disturbance model {type(model)!r}")


def _is_pd(s: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(s)
        return True
    except np.linalg.LinAlgError:
        return False


def random_system(rng: np.random.Generator, n_x: int, n_u: int, eig_range=(-3.0, 3.0)) -> LtiSystem:
    """Random plant with prescribed real spectrum.

    A = Q^T D Q for an orthogonal Q (QR of a Gaussian matrix) and D diagonal
    with entries drawn uniformly from ``eig_range``; B has standard-normal
    entries.
    """
    lo, hi = float(eig_range[0]), float(eig_range[1])
    eigs = rng.uniform(lo, hi, size=n_x)
    q, r = np.linalg.qr(rng.standard_normal((n_x, n_x)))
    # Fix signs so Q is a deterministic function of the draw.
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    a = q.T @ np.diag(eigs) @ q
    b = rng.standard_normal((n_x, n_u))
    return LtiSystem(A=a, B=b)


# ---------------------------------------------------------------------------
# Trajectory / dataset serialisation
# ---------------------------------------------------------------------------

def trajectory_header(n_x: int, n_u: int) -> list:
    return (
        ["k"]
        + [f"x_{i + 1}" for i in range(n_x)]
        + [f"u_{i + 1}" for i in range(n_u)]
        + [f"xnext_{i + 1}" for i in range(n_x)]
        + ["selected"]
    )


def write_trajectory_csv(path, samples, selected_indices, n_x: int, n_u: int):
    """Write recorded triples with a 0/1 ``selected`` membership mark."""
    selected = set(selected_indices)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(n_x, n_u))
        for s in samples:
            row = [s.k] + list(s.x) + list(s.u) + list(s.x_next) + [1 if s.k in selected else 0]
            writer.writerow(row)


def read_trajectory_csv(path):
    """Read a trajectory CSV back into samples and the selected index list."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_x = sum(1 for h in header if h.startswith("x_"))
        n_u = sum(1 for h in header if h.startswith("u_"))
        samples, selected = [], []
        for row in reader:
            k = int(row[0])
            vals = np.array([float(v) for v in row[1:-1]])
            x, u, xn = vals[:n_x], vals[n_x:n_x + n_u], vals[n_x + n_u:]
            samples.append(DataSample(x=x, u=u, x_next=xn, k=k))
            if int(row[-1]) == 1:
                selected.append(k)
    return samples, selected
