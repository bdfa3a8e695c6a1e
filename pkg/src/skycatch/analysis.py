"""Parabola deviation scoring and dataset diversity reporting.

The parabola deviation score (PDS) of a trajectory is the mean Euclidean
distance between its samples and the gravity-anchored parabola that best
fits them: the curve p_0 + v_0 t + g t^2 / 2 anchored at the first
sample, with v_0 chosen to minimize the summed squared deviation.  A
near-zero PDS means ballistic flight; large values mean aerodynamic
effects dominate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .trajkit import GRAVITY, Trajectory


@dataclass(frozen=True)
class PdsReport:
    """Per-object PDS statistics over a dataset."""

    object_ids: tuple[str, ...]
    counts: tuple[int, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]


def fit_parabola_v0(traj: Trajectory, gravity: np.ndarray = GRAVITY) -> np.ndarray:
    """Initial velocity of the best-fit parabola anchored at the first sample.

    The squared-deviation objective is linear least squares in v_0 per
    axis, so the minimizer is closed-form: with d_i = p_i - p_0 - g t_i^2/2,
    v_0 = sum(t_i d_i) / sum(t_i^2).
    """
    if len(traj) < 2:
        raise ValueError("need at least 2 samples to fit a parabola")
    t = traj.times - traj.times[0]
    denom = float(np.sum(t * t))
    if denom == 0.0:
        raise ValueError("all sample times equal; parabola fit is undefined")
    d = traj.positions - traj.positions[0] - 0.5 * np.outer(t * t, gravity)
    return (t @ d) / denom


def parabola_residuals(traj: Trajectory, v0: np.ndarray,
                       gravity: np.ndarray = GRAVITY) -> np.ndarray:
    """Per-sample deviation (meters) from the anchored parabola with ``v0``."""
    t = traj.times - traj.times[0]
    model = traj.positions[0] + np.outer(t, v0) + 0.5 * np.outer(t * t, gravity)
    return np.linalg.norm(traj.positions - model, axis=1)


def pds(traj: Trajectory, gravity: np.ndarray = GRAVITY) -> float:
    """Parabola deviation score: mean deviation from the best-fit parabola."""
    v0 = fit_parabola_v0(traj, gravity)
    return float(np.mean(parabola_residuals(traj, v0, gravity)))


def dataset_report(trajs: list[Trajectory], gravity: np.ndarray = GRAVITY) -> PdsReport:
    """Group trajectories by object and average their PDS values."""
    if not trajs:
        raise ValueError("cannot report on an empty dataset")
    by_object: dict[str, list[float]] = {}
    for traj in trajs:
        by_object.setdefault(traj.object_id, []).append(pds(traj, gravity))
    ids = tuple(sorted(by_object))
    counts = tuple(len(by_object[obj]) for obj in ids)
    means = tuple(float(np.mean(by_object[obj])) for obj in ids)
    stds = tuple(float(np.std(by_object[obj])) for obj in ids)
    return PdsReport(object_ids=ids, counts=counts, means=means, stds=stds)


def write_report_csv(report: PdsReport, path) -> None:
    """Emit the per-object PDS table, sorted by object id."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object_id", "n_trajectories", "pds_mean_m", "pds_std_m"])
        for obj, n, mean, std in zip(report.object_ids, report.counts,
                                     report.means, report.stds):
            writer.writerow([obj, n, repr(mean), repr(std)])
