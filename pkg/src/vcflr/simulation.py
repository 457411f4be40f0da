"""Synthetic-data generators and the MISPE evaluation metric.

Two designs are provided: a regular one observing every trajectory at 31
equally spaced times, and a sparse one drawing 2..10 observation times
uniformly per trajectory. Both share the same underlying three-component
process; the conditional response curve is linear in the covariate.

Reproducibility: each subject draws from its own counter-based Philox stream
spawned from the run seed, with a fixed draw order per subject (covariate z;
the three predictor scores; for the sparse design the predictor count, then
sorted predictor times; predictor noise; response count, sorted response
times; response noise). Bitwise reproducibility holds within this
implementation; across implementations only the distributions are specified.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import LongitudinalDataset, Subject
from .errors import GridMismatch
from .grids import Grid, make_grid, trapezoid_weights


@dataclass(frozen=True)
class SimDesign:
    """Observation design for the shared three-component process."""

    name: str                       # "regular" | "sparse"
    s_domain: tuple[float, float] = (0.0, 10.0)
    t_domain: tuple[float, float] = (0.0, 10.0)
    z_domain: tuple[float, float] = (0.0, 1.0)
    score_sds: tuple[float, float, float] = (2.0, np.sqrt(2.0), 1.0)
    sigma_x: float = 1.0
    sigma_y: float = 1.0
    n_regular_points: int = 31
    sparse_counts: tuple[int, int] = (2, 10)

    def __post_init__(self):
        if self.name not in ("regular", "sparse"):
            raise ValueError(f"unknown design {self.name!r}")


REGULAR = SimDesign("regular")
SPARSE = SimDesign("sparse")


def mean_x(s) -> np.ndarray:
    return np.asarray(s, dtype=float) + np.sin(np.asarray(s, dtype=float))


def mean_y(z: float, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return (1.0 + z) * (t + np.sin(t))


def eigenfunctions(s) -> np.ndarray:
    """The three basis functions, columns of shape (len(s), 3)."""
    s = np.asarray(s, dtype=float)
    c = np.sqrt(1.0 / 5.0)
    return np.column_stack([
        -c * np.cos(np.pi * s / 5.0),
        c * np.sin(np.pi * s / 5.0),
        -c * np.cos(2.0 * np.pi * s / 5.0),
    ])


def true_covariance_x(s) -> np.ndarray:
    """Predictor covariance surface at the given abscissae."""
    psi = eigenfunctions(s)
    rho = np.array([4.0, 2.0, 1.0])
    return (psi * rho) @ psi.T


def true_beta(z: float, s, t) -> np.ndarray:
    """Slope surface (z + 1) * sum_m psi_m(s) psi_m(t)."""
    return (1.0 + z) * (eigenfunctions(s) @ eigenfunctions(t).T)


@dataclass
class SimTruth:
    """Ground truth retained for a generated sample."""

    grid: Grid
    ids: list[str]
    z: np.ndarray
    zeta: np.ndarray                        # (n, 3) predictor scores
    xi: np.ndarray                          # (n, 3) response scores (z+1) zeta
    curves: np.ndarray = field(repr=False)  # (n, grid.n) conditional response

    @property
    def n(self) -> int:
        return len(self.ids)

    def predictor_values(self, i: int, s) -> np.ndarray:
        """Noise-free predictor trajectory of subject i at abscissae s."""
        return mean_x(s) + eigenfunctions(s) @ self.zeta[i]


def generate(design: SimDesign, n: int, seed: int,
             truth_grid: Grid | None = None,
             id_prefix: str = "s") -> tuple[LongitudinalDataset, SimTruth]:
    """Draw a training sample plus its ground truth.

    Predictor observations are X(S) + noise; response observations are
    E(Y | X, Z)(T) + noise, with the conditional curve evaluated in closed
    form from the predictor scores.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    grid = truth_grid if truth_grid is not None else make_grid(*design.t_domain, 51)
    psi_grid = eigenfunctions(grid.points)
    sds = np.asarray(design.score_sds)
    lo_s, hi_s = design.s_domain
    lo_t, hi_t = design.t_domain
    regular_times = (np.arange(design.n_regular_points)) / 3.0

    subjects = []
    zs = np.empty(n)
    zetas = np.empty((n, 3))
    curves = np.empty((n, grid.n))
    ids = [f"{id_prefix}{i:04d}" for i in range(n)]
    children = np.random.SeedSequence(seed).spawn(n)
    for i in range(n):
        rng = np.random.Generator(np.random.Philox(children[i]))
        z = rng.uniform(*design.z_domain)
        zeta = rng.normal(0.0, sds)
        if design.name == "regular":
            s_times = regular_times
        else:
            l_count = rng.integers(design.sparse_counts[0], design.sparse_counts[1] + 1)
            s_times = np.sort(rng.uniform(lo_s, hi_s, size=l_count))
        u = mean_x(s_times) + eigenfunctions(s_times) @ zeta \
            + rng.normal(0.0, design.sigma_x, size=s_times.size)
        if design.name == "regular":
            t_times = regular_times
        else:
            n_count = rng.integers(design.sparse_counts[0], design.sparse_counts[1] + 1)
            t_times = np.sort(rng.uniform(lo_t, hi_t, size=n_count))
        cond = mean_y(z, t_times) + (1.0 + z) * (eigenfunctions(t_times) @ zeta)
        v = cond + rng.normal(0.0, design.sigma_y, size=t_times.size)
        subjects.append(Subject(ids[i], float(z), s_times, u, t_times, v))
        zs[i] = z
        zetas[i] = zeta
        curves[i] = mean_y(z, grid.points) + (1.0 + z) * (psi_grid @ zeta)

    ds = LongitudinalDataset(subjects, design.s_domain, design.t_domain,
                             design.z_domain)
    truth = SimTruth(grid, ids, zs, zetas, (1.0 + zs)[:, None] * zetas, curves)
    return ds, truth


def mispe(truth: SimTruth, predictions) -> float:
    """Mean integrated squared prediction error against the truth curves,
    normalized by the domain length."""
    if len(predictions) != truth.n:
        raise ValueError(f"{len(predictions)} predictions for {truth.n} truth curves")
    w = truth.grid.weights
    total = 0.0
    for i, pred in enumerate(predictions):
        y = pred.y_hat
        if not y.grid.same_as(truth.grid):
            raise GridMismatch("prediction grid does not match the truth grid")
        d = y.values - truth.curves[i]
        total += float(w @ (d * d)) / truth.grid.length
    return total / truth.n


def save_truth(truth: SimTruth, curves_path, scores_path) -> None:
    """Emit truth curves (subject_id,time,value) and scores
    (subject_id,z,zeta1,zeta2,zeta3) as CSV."""
    with open(curves_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "time", "value"])
        for i, sid in enumerate(truth.ids):
            for t, v in zip(truth.grid.points, truth.curves[i]):
                writer.writerow([sid, repr(float(t)), repr(float(v))])
    with open(scores_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["subject_id", "z", "zeta1", "zeta2", "zeta3"])
        for i, sid in enumerate(truth.ids):
            writer.writerow([sid, repr(float(truth.z[i]))]
                            + [repr(float(v)) for v in truth.zeta[i]])


def load_truth(curves_path, scores_path) -> SimTruth:
    """Rebuild a SimTruth from the two CSV files written by save_truth."""
    per_id: dict[str, list[tuple[float, float]]] = {}
    order: list[str] = []
    with open(curves_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for sid, t, v in reader:
            if sid not in per_id:
                per_id[sid] = []
                order.append(sid)
            per_id[sid].append((float(t), float(v)))
    zs, zetas = {}, {}
    with open(scores_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for sid, z, z1, z2, z3 in reader:
            zs[sid] = float(z)
            zetas[sid] = [float(z1), float(z2), float(z3)]
    pts = np.array([t for t, _ in per_id[order[0]]])
    grid = Grid(float(pts[0]), float(pts[-1]), pts, trapezoid_weights(pts))
    z = np.array([zs[sid] for sid in order])
    zeta = np.array([zetas[sid] for sid in order])
    curves = np.array([[v for _, v in per_id[sid]] for sid in order])
    return SimTruth(grid, order, z, zeta, (1.0 + z)[:, None] * zeta, curves)
