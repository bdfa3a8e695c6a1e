"""Closed-loop catching simulation on the catching plane.

The robot is a single integrator moving in the plane, velocity-commanded
by a PID controller with a hard speed clamp.  Each episode replays one
recorded trajectory: once a full history has been observed the predictor
emits an impact estimate (re-issued every prediction interval), the
robot chases the latest estimate, and success per basket radius is
judged by the robot's distance to the ground-truth impact point at the
true impact time.

Predictors enter as factories ``traj -> (times, states) -> point`` so
reference predictors (ground-truth oracle, biased oracle) can close over
the episode's trajectory; honest predictors just ignore it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PredictionError
from .trajkit import (DEFAULT_DT, DEFAULT_HISTORY_STEPS, PlaneSpec, Trajectory,
                      ground_truth_impact)


@dataclass(frozen=True)
class SimConfig:
    v_max: float = 2.5
    kp: float = 6.0
    ki: float = 0.0
    kd: float = 0.5
    init_radius: float = 0.3
    basket_radii: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)
    control_dt: float = DEFAULT_DT
    prediction_interval: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.v_max <= 0.0:
            raise ValueError("v_max must be positive")
        if any(r <= 0.0 for r in self.basket_radii):
            raise ValueError("basket radii must be positive")
        if list(self.basket_radii) != sorted(self.basket_radii):
            raise ValueError("basket radii must be ascending")


@dataclass
class RobotState:
    position: np.ndarray                 # (2,)
    integral: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prev_error: np.ndarray | None = None
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))


def robot_step(state: RobotState, target: np.ndarray, cfg: SimConfig) -> RobotState:
    """One explicit-Euler control step toward ``target``.

    The commanded velocity is the PID response to the position error,
    clamped to the speed limit.
    """
    error = np.asarray(target, dtype=float) - state.position
    integral = state.integral + error * cfg.control_dt
    if state.prev_error is None:
        derivative = np.zeros(2)
    else:
        derivative = (error - state.prev_error) / cfg.control_dt
    command = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative
    speed = float(np.linalg.norm(command))
    if speed > cfg.v_max:
        command = command * (cfg.v_max / speed)
    return RobotState(position=state.position + command * cfg.control_dt,
                      integral=integral, prev_error=error, velocity=command)


@dataclass
class CatchEpisodeResult:
    method: str
    object_id: str
    trial_id: str
    robot_position: np.ndarray   # (2,) at impact time
    impact_point: np.ndarray     # (3,) ground truth
    distance: float
    success: dict[float, bool]
    n_predictions: int
    failure: str | None = None
    predictions: list[tuple[int, np.ndarray]] = field(default_factory=list)


def _initial_position(impact_xy: np.ndarray, cfg: SimConfig,
                      rng: np.random.Generator) -> np.ndarray:
    radius = cfg.init_radius * math.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return impact_xy + radius * np.array([math.cos(theta), math.sin(theta)])


def run_episode(traj: Trajectory, predict, plane: PlaneSpec, cfg: SimConfig,
                episode_seed: int, history_steps: int = DEFAULT_HISTORY_STEPS,
                method: str = "predictor") -> CatchEpisodeResult:
    """Replay one trajectory against one predictor.

    The robot starts uniformly inside the init disc around the true
    impact point and holds until the first prediction.  Any predictor
    error marks the whole episode failed.  Success per radius compares
    the robot's in-plane distance to the true impact point at the exact
    impact time (fractional control step included).
    """
    info = ground_truth_impact(traj, plane)
    impact_xy = info.point[:2]
    rng = np.random.default_rng(episode_seed)
    state = RobotState(position=_initial_position(impact_xy, cfg, rng))
    target = state.position.copy()

    predictions: list[tuple[int, np.ndarray]] = []
    failure = None
    for k in range(info.index_above + 1):
        if (k >= history_steps
                and (k - history_steps) % cfg.prediction_interval == 0
                and failure is None):
            try:
                point = predict(traj.times[k - history_steps:k + 1],
                                traj.states[k - history_steps:k + 1])
                predictions.append((k, np.asarray(point, dtype=float)))
                target = np.asarray(point[:2], dtype=float)
            except PredictionError as exc:
                failure = f"prediction failed at sample {k}: {exc}"
        if k < info.index_above:
            state = robot_step(state, target, cfg)
        else:
            # Partial step up to the exact impact time.
            state = robot_step(state, target, cfg)
            final_pos = (state.position
                         - state.velocity * cfg.control_dt * (1.0 - info.frac))

    distance = float(np.linalg.norm(final_pos - impact_xy))
    if failure is not None:
        success = {r: False for r in cfg.basket_radii}
    else:
        success = {r: distance <= r for r in cfg.basket_radii}
    return CatchEpisodeResult(method=method, object_id=traj.object_id,
                              trial_id=traj.trial_id, robot_position=final_pos,
                              impact_point=info.point, distance=distance,
                              success=success, n_predictions=len(predictions),
                              failure=failure, predictions=predictions)


# --- reference predictor factories -----------------------------------------


def stateless(predict):
    """Lift a plain (times, states) predictor into a factory."""
    return lambda traj: predict


def oracle_factory(plane: PlaneSpec):
    """Predictor that returns the trajectory's true impact point."""

    def factory(traj: Trajectory):
        point = ground_truth_impact(traj, plane).point

        def predict(times, states):
            return point

        return predict

    return factory


def biased_oracle_factory(plane: PlaneSpec, bias: np.ndarray):
    """Oracle shifted by a constant offset (reference failure mode)."""
    bias = np.asarray(bias, dtype=float)

    def factory(traj: Trajectory):
        point = ground_truth_impact(traj, plane).point + bias

        def predict(times, states):
            return point

        return predict

    return factory


# --- aggregation ------------------------------------------------------------


def success_table(trajs: list[Trajectory], factories: dict[str, object],
                  plane: PlaneSpec, cfg: SimConfig,
                  seen_objects: set[str], unseen_objects: set[str],
                  history_steps: int = DEFAULT_HISTORY_STEPS,
                  ) -> tuple[list[tuple], list[CatchEpisodeResult]]:
    """Success rates per (method, radius, seen/unseen) over all episodes.

    Episode seeds derive from (config seed, trajectory index) so every
    method faces the same initial robot positions.  Returns the SR rows
    in CSV order and the per-episode results.
    """
    episodes: list[CatchEpisodeResult] = []
    for name in sorted(factories):
        factory = factories[name]
        for ti, traj in enumerate(trajs):
            seed = int(np.random.SeedSequence([cfg.seed, ti]).generate_state(1)[0])
            predict = factory(traj)
            episodes.append(run_episode(traj, predict, plane, cfg, seed,
                                        history_steps=history_steps, method=name))

    rows = []
    for name in sorted(factories):
        for radius in cfg.basket_radii:
            rates = {}
            for label, members in (("seen", seen_objects), ("unseen", unseen_objects)):
                outcomes = [e.success[radius] for e in episodes
                            if e.method == name and e.object_id in members]
                rates[label] = float(np.mean(outcomes)) if outcomes else float("nan")
            rows.append((name, radius, rates["seen"], rates["unseen"]))
    return rows, episodes


def write_sr_csv(rows: list[tuple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "radius_m", "seen_sr", "unseen_sr"])
        for name, radius, seen_sr, unseen_sr in rows:
            writer.writerow([name, repr(float(radius)), repr(seen_sr), repr(unseen_sr)])


def write_episode_log_csv(episodes: list[CatchEpisodeResult], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "object_id", "trial_id", "distance_m",
                         "n_predictions", "failure"])
        for e in episodes:
            writer.writerow([e.method, e.object_id, e.trial_id, repr(e.distance),
                             e.n_predictions, e.failure or ""])
