"""Core trajectory representation and windowing.

A trajectory is a sequence of timestamped 3-D positions (world frame,
z up, gravity along -z) captured at a nominally uniform rate.  From the
positions we derive per-sample 9-D state vectors [x, v, a] by finite
differences, extract the ground-truth impact point on a horizontal
catching plane, cut (history, future, impact) training windows, and
apply rigid-motion data augmentation.  Trajectories persist as JSON
Lines; derived states are always recomputed on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import DataFormatError, NoCrossingError

GRAVITY = np.array([0.0, 0.0, -9.81])

#: Capture rate of the position stream, samples per second.
CAPTURE_HZ = 120.0
DEFAULT_DT = 1.0 / CAPTURE_HZ

#: Default history length T (windows hold T+1 states).
DEFAULT_HISTORY_STEPS = 5

#: Default height of the horizontal catching plane, meters.
DEFAULT_PLANE_HEIGHT = 0.60

# Relative tolerance on sample spacing before a trajectory is rejected.
SPACING_RTOL = 0.01


@dataclass(frozen=True)
class PlaneSpec:
    """Horizontal catching plane at a fixed height (meters)."""

    height: float = DEFAULT_PLANE_HEIGHT


@dataclass(frozen=True)
class Trajectory:
    """One throw of one object: timestamps, positions, derived states.

    ``states`` has one row per sample, laid out as [x, v, a] (9 floats);
    it is derived from ``positions`` and never persisted.
    """

    object_id: str
    trial_id: str
    dt: float
    times: np.ndarray      # (n,)
    positions: np.ndarray  # (n, 3)
    states: np.ndarray     # (n, 9)

    def __len__(self) -> int:
        return self.times.shape[0]


@dataclass(frozen=True)
class TrainingWindow:
    """History states, future states up to the plane crossing, and label.

    ``history`` holds T+1 states ending at sample ``t_index``; ``future``
    holds the next ``k_steps`` states, the last of which is the final
    state at or above the plane.  ``crossing_frac`` is the fraction of a
    step past sample ``t_index + k_steps`` at which the measured track
    crosses the plane (used to place the impact point in time).
    """

    object_id: str
    trial_id: str
    t_index: int
    k_steps: int
    history: np.ndarray        # (T+1, 9)
    history_times: np.ndarray  # (T+1,)
    future: np.ndarray         # (K, 9)
    impact_point: np.ndarray   # (3,)
    crossing_frac: float


@dataclass(frozen=True)
class ImpactInfo:
    """Ground-truth plane crossing of a measured trajectory."""

    point: np.ndarray   # (3,), z equals the plane height by construction
    index_above: int    # last sample at or above the plane on the descent
    frac: float         # in [0, 1): fraction of a step past index_above

    def k_of(self, t_index: int) -> int:
        """Steps to impact for a history ending at ``t_index``.

        The bracketing sample above the plane counts as step K, so
        K = index_above - t_index.
        """
        return self.index_above - t_index


@dataclass
class DatasetSplit:
    """Per-object train/val/test partition plus fully held-out objects."""

    seen_objects: tuple[str, ...]
    unseen_objects: tuple[str, ...]
    train: dict[str, list[str]] = field(default_factory=dict)  # object -> trial ids
    val: dict[str, list[str]] = field(default_factory=dict)
    test: dict[str, list[str]] = field(default_factory=dict)

    def trial_ids(self, part: str) -> set[tuple[str, str]]:
        """(object_id, trial_id) pairs of one partition."""
        table = {"train": self.train, "val": self.val, "test": self.test}[part]
        return {(obj, trial) for obj, trials in table.items() for trial in trials}

    def select(self, trajs: Sequence[Trajectory], part: str) -> list[Trajectory]:
        """Materialize one partition, in input order.

        ``part`` is ``train``/``val``/``test``, or ``unseen`` for every
        trial of the held-out objects.
        """
        if part == "unseen":
            wanted = set(self.unseen_objects)
            return [t for t in trajs if t.object_id in wanted]
        pairs = self.trial_ids(part)
        return [t for t in trajs if (t.object_id, t.trial_id) in pairs]


# ---------------------------------------------------------------------------
# state derivation


def smooth_positions(positions: np.ndarray) -> np.ndarray:
    """Width-3 moving average, endpoints kept as-is."""
    out = positions.astype(float).copy()
    if out.shape[0] >= 3:
        out[1:-1] = (positions[:-2] + positions[1:-1] + positions[2:]) / 3.0
    return out


def derive_states(times: np.ndarray, positions: np.ndarray, dt: float,
                  smooth: bool = False) -> np.ndarray:
    """Derive per-sample [x, v, a] states from uniformly spaced positions.

    Velocity comes from central differences of position (one-sided at the
    ends), acceleration from central differences of velocity.  Spacing
    must be uniform to within SPACING_RTOL of ``dt``.
    """
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    n = times.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 samples to derive states, got {n}")
    if positions.shape != (n, 3):
        raise ValueError(f"positions shape {positions.shape} does not match {n} samples")
    gaps = np.diff(times)
    if np.any(np.abs(gaps - dt) > SPACING_RTOL * dt):
        worst = int(np.argmax(np.abs(gaps - dt)))
        raise ValueError(
            f"non-uniform sample spacing at index {worst}: gap {gaps[worst]:.6g} s "
            f"vs dt {dt:.6g} s (tolerance {SPACING_RTOL:.0%})")

    if smooth:
        positions = smooth_positions(positions)

    vel = np.empty_like(positions)
    vel[1:-1] = (positions[2:] - positions[:-2]) / (2.0 * dt)
    vel[0] = (positions[1] - positions[0]) / dt
    vel[-1] = (positions[-1] - positions[-2]) / dt

    acc = np.empty_like(positions)
    acc[1:-1] = (vel[2:] - vel[:-2]) / (2.0 * dt)
    acc[0] = (vel[1] - vel[0]) / dt
    acc[-1] = (vel[-1] - vel[-2]) / dt

    return np.hstack([positions, vel, acc])


def make_trajectory(object_id: str, trial_id: str, dt: float,
                    times: np.ndarray, positions: np.ndarray,
                    smooth: bool = False) -> Trajectory:
    """Build a Trajectory, validating timestamps and deriving states."""
    times = np.asarray(times, dtype=float)
    positions = np.asarray(positions, dtype=float)
    if times.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if np.any(times < 0.0):
        raise ValueError(f"negative timestamp in trial {trial_id!r}")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError(f"timestamps not strictly increasing in trial {trial_id!r}")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    states = derive_states(times, positions, dt, smooth=smooth)
    return Trajectory(object_id=object_id, trial_id=trial_id, dt=float(dt),
                      times=times.astype(float), positions=positions.astype(float),
                      states=states)


# ---------------------------------------------------------------------------
# impact extraction


def crossing_on_descent(z: np.ndarray, height: float) -> tuple[int, float]:
    """Locate the descending crossing of ``height`` in a z profile.

    Returns (index_above, frac): the last index at or above the plane on
    the descending branch and the fractional step to the crossing.
    Raises NoCrossingError when the profile never descends through the
    plane after its apex.
    """
    z = np.asarray(z, dtype=float)
    apex = int(np.argmax(z))
    for i in range(apex, z.shape[0] - 1):
        if z[i] >= height and z[i + 1] < height:
            frac = (z[i] - height) / (z[i] - z[i + 1])
            return i, float(frac)
    raise NoCrossingError(
        f"no descending crossing of plane z={height:.3g} "
        f"(apex {z[apex]:.3g} m at sample {apex}, final z {z[-1]:.3g} m)")


def interpolate_crossing(positions: np.ndarray, height: float) -> tuple[np.ndarray, int, float]:
    """Impact point of a position sequence on the plane at ``height``.

    Linear interpolation between the bracketing samples of the descending
    crossing; the returned point has z set to the plane height exactly.
    """
    positions = np.asarray(positions, dtype=float)
    idx, frac = crossing_on_descent(positions[:, 2], height)
    point = positions[idx] + frac * (positions[idx + 1] - positions[idx])
    point[2] = height
    return point, idx, frac


def ground_truth_impact(traj: Trajectory, plane: PlaneSpec) -> ImpactInfo:
    """Ground-truth impact point and steps-to-impact map of a trajectory."""
    try:
        point, idx, frac = interpolate_crossing(traj.positions, plane.height)
    except NoCrossingError as exc:
        raise NoCrossingError(
            f"trajectory {traj.object_id}/{traj.trial_id}: {exc}") from None
    return ImpactInfo(point=point, index_above=idx, frac=frac)


def make_windows(traj: Trajectory, history_steps: int, plane: PlaneSpec) -> list[TrainingWindow]:
    """Cut every admissible training window out of one trajectory.

    One window per history-end index t from the first index with a full
    T+1-state history to the last index with at least one step to impact.
    Returns an empty list when the history does not fit before the
    crossing.
    """
    if history_steps < 0:
        raise ValueError("history_steps must be non-negative")
    info = ground_truth_impact(traj, plane)
    windows = []
    for t in range(history_steps, info.index_above):
        k = info.k_of(t)
        windows.append(TrainingWindow(
            object_id=traj.object_id,
            trial_id=traj.trial_id,
            t_index=t,
            k_steps=k,
            history=traj.states[t - history_steps:t + 1],
            history_times=traj.times[t - history_steps:t + 1],
            future=traj.states[t + 1:t + 1 + k],
            impact_point=info.point,
            crossing_frac=info.frac,
        ))
    return windows


# ---------------------------------------------------------------------------
# augmentation and dataset assembly


def augment(traj: Trajectory, yaw: float, translation: Sequence[float],
            trial_suffix: str | None = None) -> Trajectory:
    """Rotate about the vertical axis through the first sample, then translate.

    The translation is horizontal, so gravity direction and all heights
    are preserved.  Derived states are recomputed from the moved
    positions.
    """
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    anchor = traj.positions[0]
    shifted = traj.positions - anchor
    moved = shifted @ rot.T + anchor
    moved[:, 0] += translation[0]
    moved[:, 1] += translation[1]
    trial_id = traj.trial_id if trial_suffix is None else traj.trial_id + trial_suffix
    return make_trajectory(traj.object_id, trial_id, traj.dt, traj.times, moved)


def expand_dataset(trajs: Sequence[Trajectory], factor: int, seed: int) -> list[Trajectory]:
    """Original trajectories plus (factor-1) randomly moved copies of each.

    Yaw is uniform on (-pi, pi) and the horizontal translation uniform on
    the +-1 m square, drawn from a generator seeded with ``seed``; the
    result is deterministic.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for traj in trajs:
        out.append(traj)
        for j in range(1, factor):
            yaw = rng.uniform(-math.pi, math.pi)
            tx, ty = rng.uniform(-1.0, 1.0, size=2)
            out.append(augment(traj, yaw, (tx, ty), trial_suffix=f".aug{j}"))
    return out


def split_dataset(trajs: Sequence[Trajectory], seen_ids: Sequence[str],
                  unseen_ids: Sequence[str], seed: int,
                  fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)) -> DatasetSplit:
    """Seeded per-object partition of trials into train/val/test.

    Objects in ``unseen_ids`` contribute no trials to any training
    partition; they are reserved entirely for generalization evaluation.
    """
    seen = tuple(seen_ids)
    unseen = tuple(unseen_ids)
    overlap = set(seen) & set(unseen)
    if overlap:
        raise ValueError(f"objects listed as both seen and unseen: {sorted(overlap)}")
    present = {t.object_id for t in trajs}
    missing = present - set(seen) - set(unseen)
    if missing:
        raise ValueError(f"objects in dataset but in neither id list: {sorted(missing)}")

    by_object: dict[str, list[str]] = {}
    for t in trajs:
        by_object.setdefault(t.object_id, []).append(t.trial_id)

    split = DatasetSplit(seen_objects=seen, unseen_objects=unseen)
    rng = np.random.default_rng(seed)
    for obj in seen:
        trials = sorted(by_object.get(obj, []))
        order = rng.permutation(len(trials))
        shuffled = [trials[i] for i in order]
        n = len(shuffled)
        n_val = int(math.floor(fractions[1] * n))
        n_test = int(math.floor(fractions[2] * n))
        n_train = n - n_val - n_test
        split.train[obj] = sorted(shuffled[:n_train])
        split.val[obj] = sorted(shuffled[n_train:n_train + n_val])
        split.test[obj] = sorted(shuffled[n_train + n_val:])
    return split


# ---------------------------------------------------------------------------
# persistence (JSON Lines, one trajectory per line)


def write_dataset(trajs: Iterable[Trajectory], path) -> None:
    """Write trajectories as JSON Lines with full float precision."""
    with open(path, "w", encoding="utf-8") as fh:
        _write_dataset(trajs, fh)


def _write_dataset(trajs: Iterable[Trajectory], fh: TextIO) -> None:
    for traj in trajs:
        record = {
            "object_id": traj.object_id,
            "trial_id": traj.trial_id,
            "dt": traj.dt,
            "samples": [[float(t), float(p[0]), float(p[1]), float(p[2])]
                        for t, p in zip(traj.times, traj.positions)],
        }
        fh.write(json.dumps(record) + "\n")


def read_dataset(path, smooth: bool = False) -> list[Trajectory]:
    """Read a JSON Lines trajectory file, recomputing derived states.

    An empty file yields an empty dataset.  Malformed records raise
    DataFormatError naming the line (and trial where known).
    """
    trajs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                trajs.append(_parse_record(record, smooth))
            except (KeyError, TypeError, ValueError) as exc:
                trial = record.get("trial_id", "?") if isinstance(record, dict) else "?"
                raise DataFormatError(f"{path}:{lineno}: trial {trial!r}: {exc}") from None
    return trajs


def _parse_record(record: dict, smooth: bool) -> Trajectory:
    samples = np.asarray(record["samples"], dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 4:
        raise ValueError(f"samples must be rows of [t, x, y, z], got shape {samples.shape}")
    return make_trajectory(str(record["object_id"]), str(record["trial_id"]),
                           float(record["dt"]), samples[:, 0], samples[:, 1:4],
                           smooth=smooth)
