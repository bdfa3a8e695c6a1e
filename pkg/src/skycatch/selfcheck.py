"""Self-contained oracle and invariant checks behind ``skycatch selftest``.

Each check recomputes its expected values through an independent route
(closed forms, brute-force search, hand-derived formulas, finite
differences) and compares the production path against it.  The pytest
suite covers the same ground in more detail; this module gives an
installed package a one-command health check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import analysis, baselines, catchsim, evalkit, predictors, synthgen, trajkit
from . import neurnet as nn


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _parabola_traj(v0=(3.0, 0.5, 5.0), p0=(0.0, 0.0, 1.0), n=140,
                   dt=trajkit.DEFAULT_DT) -> trajkit.Trajectory:
    t = np.arange(n) * dt
    pos = (np.asarray(p0) + np.outer(t, v0)
           + 0.5 * np.outer(t * t, trajkit.GRAVITY))
    return trajkit.make_trajectory("check_ball", "t0", dt, t, pos)


def check_state_derivation() -> CheckResult:
    """Central differences are exact on a parabola away from the ends."""
    traj = _parabola_traj()
    t = traj.times
    v_true = np.array([3.0, 0.5, 5.0]) + np.outer(t, trajkit.GRAVITY)[:, :]
    err_v = np.abs(traj.states[2:-2, 3:6] - v_true[2:-2]).max()
    err_a = np.abs(traj.states[2:-2, 6:9] - trajkit.GRAVITY).max()
    ok = err_v < 1e-6 and err_a < 1e-6
    return CheckResult("state derivation exact on parabola (interior)", ok,
                       f"v err {err_v:.2e}, a err {err_a:.2e}")


def check_impact_closed_form() -> CheckResult:
    """Measured crossing matches the quadratic root of the parabola."""
    traj = _parabola_traj()
    plane = trajkit.PlaneSpec(0.6)
    info = trajkit.ground_truth_impact(traj, plane)
    # 0.5 g t^2 + v0z t + (p0z - h) = 0, descending root
    a, b, c = 0.5 * trajkit.GRAVITY[2], 5.0, 1.0 - plane.height
    t_star = (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    expected = np.array([3.0 * t_star, 0.5 * t_star, plane.height])
    tol = 2.0 * traj.dt ** 2 * 9.81
    err = np.abs(info.point - expected).max()
    return CheckResult("impact point matches closed-form quadratic root",
                       err < tol, f"err {err:.2e} < {tol:.2e}")


def _brute_force_v0(traj: trajkit.Trajectory) -> np.ndarray:
    """Grid + golden-section minimizer of the per-axis deviation sum."""
    t = traj.times - traj.times[0]
    d = traj.positions - traj.positions[0] - 0.5 * np.outer(t * t, trajkit.GRAVITY)
    out = np.zeros(3)
    for axis in range(3):
        obj = lambda v: float(np.sum((d[:, axis] - v * t) ** 2))
        grid = np.linspace(-20.0, 20.0, 4001)
        best = grid[int(np.argmin([obj(v) for v in grid]))]
        lo, hi = best - 0.02, best + 0.02
        phi = (math.sqrt(5.0) - 1.0) / 2.0
        for _ in range(80):
            m1 = hi - phi * (hi - lo)
            m2 = lo + phi * (hi - lo)
            if obj(m1) <= obj(m2):
                hi = m2
            else:
                lo = m1
        out[axis] = 0.5 * (lo + hi)
    return out


def check_pds() -> CheckResult:
    """Zero on a parabola; closed-form fit matches brute force; invariant
    under rigid motion."""
    para = _parabola_traj()
    z = analysis.pds(para)
    profile = synthgen.ObjectProfile(object_id="draggy", mass=0.05, drag_coeff=0.02)
    traj = synthgen.simulate(profile, synthgen.LaunchSpec(speed=7.0, elevation=1.0))
    v_fit = analysis.fit_parabola_v0(traj)
    v_brute = _brute_force_v0(traj)
    fit_err = np.abs(v_fit - v_brute).max()
    moved = trajkit.augment(traj, yaw=1.1, translation=(0.4, -0.7))
    inv_err = abs(analysis.pds(traj) - analysis.pds(moved))
    ok = z < 1e-9 and fit_err < 1e-6 and inv_err < 1e-9 and analysis.pds(traj) > 0.01
    return CheckResult("parabola deviation score oracles", ok,
                       f"parabola {z:.1e}, fit err {fit_err:.1e}, "
                       f"rigid-motion err {inv_err:.1e}")


def check_newton() -> CheckResult:
    """Ballistic RANSAC: exact on clean data, outliers rejected."""
    traj = _parabola_traj(n=12)
    plane = trajkit.PlaneSpec(0.6)
    a, b, c = 0.5 * trajkit.GRAVITY[2], 5.0, 1.0 - plane.height
    t_star = (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    expected = np.array([3.0 * t_star, 0.5 * t_star, plane.height])
    clean = baselines.newton_predict(traj.times[:10], traj.positions[:10], plane)
    dirty_pos = traj.positions[:10].copy()
    dirty_pos[3] += np.array([0.5, 0.0, 0.0])
    dirty_pos[7] += np.array([0.0, 0.0, 0.5])
    dirty = baselines.newton_predict(traj.times[:10], dirty_pos, plane,
                                     baselines.RansacConfig(seed=1))
    e1 = np.abs(clean - expected).max()
    e2 = np.abs(dirty - expected).max()
    return CheckResult("ballistic RANSAC against quadratic oracle",
                       e1 < 1e-6 and e2 < 1e-3,
                       f"clean err {e1:.1e}, outlier err {e2:.1e}")


def check_mann_whitney() -> CheckResult:
    """Exact branch reproduces the enumerated 3x3 p-value."""
    res = evalkit.significance([1.0, 2.0, 3.0], [10.0, 11.0, 12.0])
    swapped = evalkit.significance([10.0, 11.0, 12.0], [1.0, 2.0, 3.0])
    same = evalkit.significance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    ok = (abs(res.p_value - 0.1) < 1e-12 and res.exact
          and swapped.p_value == res.p_value and same.p_value == 1.0)
    return CheckResult("Mann-Whitney exact enumeration", ok,
                       f"p={res.p_value}")


def check_adam() -> CheckResult:
    """First step matches -lr * g / (|g| + eps); zero grads are a no-op."""
    g = np.array([0.3, -1.7, 0.002])
    params = {"w": np.zeros(3)}
    state = nn.AdamState(learning_rate=0.01)
    nn.adam_step(params, {"w": g.copy()}, state)
    expected = -0.01 * g / (np.abs(g) + state.eps)
    e1 = np.abs(params["w"] - expected).max()
    params2 = {"w": np.array([1.0, 2.0])}
    state2 = nn.AdamState(learning_rate=0.5)
    nn.adam_step(params2, {"w": np.zeros(2)}, state2)
    ok = e1 < 1e-12 and np.all(params2["w"] == [1.0, 2.0]) and state2.step == 1
    return CheckResult("Adam first-step closed form", ok, f"err {e1:.1e}")


def check_lstm_hand() -> CheckResult:
    """Scalar LSTM step against a hand-evaluated gate computation."""
    layer = nn.LstmLayerParams(w_in=np.full((4, 1), 0.5), w_rec=np.full((4, 1), -0.25),
                               bias=np.array([0.1, 1.0, -0.2, 0.3]))
    out, _, _ = nn.lstm_forward([layer], np.array([[[0.8]]]))
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    i = sig(0.5 * 0.8 + 0.1)
    f = sig(0.5 * 0.8 + 1.0)
    g = math.tanh(0.5 * 0.8 - 0.2)
    o = sig(0.5 * 0.8 + 0.3)
    c = i * g
    expected = o * math.tanh(c)
    err = abs(float(out[0, 0, 0]) - expected)
    zeros = nn.LstmLayerParams(np.zeros((4, 2)), np.zeros((4, 1)), np.zeros(4))
    out0, _, _ = nn.lstm_forward([zeros], np.ones((1, 3, 2)))
    ok = err < 1e-12 and np.all(out0 == 0.0)
    return CheckResult("LSTM cell against hand-computed gates", ok, f"err {err:.1e}")


def check_pid_response() -> CheckResult:
    """kp-only 1-D step response: saturated ramp, then geometric decay."""
    cfg = catchsim.SimConfig(kp=20.0, ki=0.0, kd=0.0)
    state = catchsim.RobotState(position=np.zeros(2))
    target = np.array([0.3, 0.0])
    dt, err = cfg.control_dt, 0.3
    worst = 0.0
    for _ in range(120):
        state = catchsim.robot_step(state, target, cfg)
        speed = min(cfg.v_max, cfg.kp * err)
        err = err - speed * dt
        worst = max(worst, abs(state.position[0] - (0.3 - err)))
    return CheckResult("PID saturated-then-linear step response",
                       worst < 1e-9, f"err {worst:.1e}")


def check_integrator() -> CheckResult:
    """Ballistic impact exact; drag dissipates energy; aligned spin is
    force-free."""
    plane = trajkit.PlaneSpec(0.6)
    clean = synthgen.ObjectProfile(object_id="ideal", mass=0.1)
    launch = synthgen.LaunchSpec(speed=6.5, elevation=1.05, azimuth=0.1)
    times, pos, vel = synthgen.integrate(clean, launch, trajkit.DEFAULT_DT, plane.height)
    point = synthgen.refined_impact(times, pos, vel, plane.height)
    vx, vy, vz = launch.velocity()
    a, b, c = 0.5 * trajkit.GRAVITY[2], vz, launch.origin[2] - plane.height
    t_star = (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    expected = np.array([vx * t_star, vy * t_star, plane.height])
    e_impact = np.abs(point - expected).max()

    draggy = synthgen.ObjectProfile(object_id="drag", mass=0.05, drag_coeff=0.004)
    _, pos_d, vel_d = synthgen.integrate(draggy, launch, trajkit.DEFAULT_DT, plane.height)
    energy = 0.5 * np.sum(vel_d ** 2, axis=1) + 9.81 * pos_d[:, 2]
    monotone = bool(np.all(np.diff(energy) <= 1e-12))

    # Magnus spin aligned with the velocity exerts no force at all.
    base = synthgen._make_accel(draggy)

    def aligned_spin(t, vx_, vy_, vz_):
        ax, ay, az = base(t, vx_, vy_, vz_)
        s = math.sqrt(vx_ ** 2 + vy_ ** 2 + vz_ ** 2)
        if s > 0.0:
            w = (vx_ / s, vy_ / s, vz_ / s)  # omega parallel to v
            ax += 0.08 * (w[1] * vz_ - w[2] * vy_)
            ay += 0.08 * (w[2] * vx_ - w[0] * vz_)
            az += 0.08 * (w[0] * vy_ - w[1] * vx_)
        return ax, ay, az

    _, _, vel_m = synthgen.integrate(draggy, launch, trajkit.DEFAULT_DT, plane.height,
                                     accel_fn=aligned_spin)
    n = min(len(vel_d), len(vel_m))
    speed_gap = np.abs(np.linalg.norm(vel_d[:n], axis=1)
                       - np.linalg.norm(vel_m[:n], axis=1)).max()
    ok = e_impact < 1e-6 and monotone and speed_gap < 1e-9
    return CheckResult("integrator oracles (ballistic, energy, spin)", ok,
                       f"impact err {e_impact:.1e}, speed gap {speed_gap:.1e}")


def _tiny_window(t_steps=3, k=5, seed=0) -> trajkit.TrainingWindow:
    rng = np.random.default_rng(seed)
    return trajkit.TrainingWindow(
        object_id="chk", trial_id="w", t_index=t_steps, k_steps=k,
        history=rng.normal(size=(t_steps + 1, 9)),
        history_times=np.arange(t_steps + 1) / 120.0,
        future=rng.normal(size=(k, 9)),
        impact_point=rng.normal(size=3),
        crossing_frac=float(rng.uniform()),
    )


def check_gradients(kinds=predictors.KINDS) -> CheckResult:
    """Finite-difference check of each architecture's training loss."""
    window = _tiny_window()
    worst = 0.0
    for kind in kinds:
        arch = predictors.ArchitectureSpec(kind=kind, hidden=8, history_steps=3)
        model = predictors.init_model(arch, seed=3)
        if arch.trajectory_head:
            loss_fn = lambda: predictors.loss_nae(model, window, with_grads=False)[0]
            _, grads = predictors.loss_nae(model, window)
        else:
            loss_fn = lambda: predictors.loss_dpe(model, window, with_grads=False)[0]
            _, grads = predictors.loss_dpe(model, window)
        worst = max(worst, nn.finite_difference_check(model.params, loss_fn, grads))
    return CheckResult("gradients vs central finite differences",
                       worst < 1e-4, f"max rel err {worst:.2e}")


def check_checkpoint_roundtrip() -> CheckResult:
    """Save/load reproduces predictions bitwise."""
    import tempfile

    arch = predictors.ArchitectureSpec(kind="dipp_dpe", hidden=8, history_steps=3)
    model = predictors.init_model(arch, seed=11)
    history = np.random.default_rng(4).normal(size=(4, 9))
    plane = trajkit.PlaneSpec(0.6)
    before = predictors.predict_impact(model, history, plane).impact_point
    with tempfile.TemporaryDirectory() as tmp:
        path = f"{tmp}/m.ckpt"
        predictors.save_model(model, path)
        loaded, _ = predictors.load_model(path)
    after = predictors.predict_impact(loaded, history, plane).impact_point
    ok = np.array_equal(before, after)
    return CheckResult("checkpoint round trip is bitwise", ok)


QUICK_CHECKS = [
    check_state_derivation,
    check_impact_closed_form,
    check_pds,
    check_newton,
    check_mann_whitney,
    check_adam,
    check_lstm_hand,
    check_pid_response,
    check_integrator,
    check_checkpoint_roundtrip,
]

FULL_CHECKS = QUICK_CHECKS + [check_gradients]


def run_all(quick: bool = False) -> list[CheckResult]:
    results = []
    for check in (QUICK_CHECKS if quick else FULL_CHECKS):
        try:
            results.append(check())
        except Exception as exc:  # noqa: BLE001 - a crashed check is a failed check
            results.append(CheckResult(check.__name__, False,
                                       f"{type(exc).__name__}: {exc}"))
    return results
