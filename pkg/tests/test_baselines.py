import math

import numpy as np
import pytest

from skycatch import baselines, trajkit
from skycatch.errors import PredictionError

from conftest import make_parabola


def closed_form_impact(v0, p0, height):
    a, b, c = 0.5 * trajkit.GRAVITY[2], v0[2], p0[2] - height
    t_star = (-b - math.sqrt(b * b - 4 * a * c)) / (2 * a)
    return np.array([p0[0] + v0[0] * t_star, p0[1] + v0[1] * t_star, height])


class TestNewtonPredict:
    def test_clean_history_matches_quadratic_root(self, plane):
        traj = make_parabola()
        expected = closed_form_impact([3.0, 0.5, 5.0], [0.0, 0.0, 1.0], plane.height)
        pred = baselines.newton_predict(traj.times[:10], traj.positions[:10], plane)
        assert np.abs(pred - expected).max() < 1e-6

    def test_outliers_rejected(self, plane):
        traj = make_parabola()
        expected = closed_form_impact([3.0, 0.5, 5.0], [0.0, 0.0, 1.0], plane.height)
        pos = traj.positions[:10].copy()
        pos[2] += [0.5, 0.0, 0.0]
        pos[6] += [0.0, -0.5, 0.0]
        pred = baselines.newton_predict(traj.times[:10], pos, plane,
                                        baselines.RansacConfig(inlier_threshold=0.01))
        assert np.abs(pred - expected).max() < 1e-3

    def test_two_samples_rejected(self, plane):
        traj = make_parabola()
        with pytest.raises(PredictionError, match="at least 3"):
            baselines.newton_predict(traj.times[:2], traj.positions[:2], plane)

    def test_apex_below_plane_is_error(self):
        traj = make_parabola()
        with pytest.raises(PredictionError, match="apex below plane"):
            baselines.newton_predict(traj.times[:10], traj.positions[:10],
                                     trajkit.PlaneSpec(50.0))

    def test_consensus_too_small_is_error(self, plane):
        rng = np.random.default_rng(0)
        t = np.arange(10) * trajkit.DEFAULT_DT
        pos = rng.normal(size=(10, 3)) * 5.0  # nothing parabolic here
        with pytest.raises(PredictionError, match="consensus"):
            baselines.newton_predict(t, pos, plane,
                                     baselines.RansacConfig(inlier_threshold=1e-6))

    def test_rigid_motion_equivariance(self, plane):
        traj = make_parabola()
        t, pos = traj.times[:10], traj.positions[:10].copy()
        pos[3] += [0.2, 0.0, 0.0]  # one outlier so RANSAC has work to do
        cfg = baselines.RansacConfig(seed=12)
        base = baselines.newton_predict(t, pos, plane, cfg)
        yaw, shift = 0.9, np.array([0.4, -0.8, 0.0])
        c, s = math.cos(yaw), math.sin(yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        moved = pos @ rot.T + shift
        pred_moved = baselines.newton_predict(t, moved, plane, cfg)
        assert np.abs(pred_moved - (rot @ base + shift)).max() < 1e-9

    def test_refit_equals_plain_least_squares_without_outliers(self, plane):
        # With clean data and a generous threshold, every sample is an
        # inlier, so the refit must equal ordinary least squares.
        rng = np.random.default_rng(1)
        traj = make_parabola()
        pos = traj.positions[:10] + rng.normal(scale=1e-4, size=(10, 3))
        t = traj.times[:10]
        pred = baselines.newton_predict(t, pos, plane,
                                        baselines.RansacConfig(inlier_threshold=0.05))
        coef = baselines._fit_ballistic(t - t[0], pos)
        expected = baselines._ballistic_impact(coef, plane.height, anchor=t[0])
        assert np.abs(pred - expected).max() < 1e-12


def _toy_windows():
    # Impact point is an exact linear map of the flattened history
    # positions: y = M phi + c.
    rng = np.random.default_rng(3)
    t_steps = 2
    m = rng.normal(size=(3, 3 * (t_steps + 1))) * 0.3
    c = np.array([0.5, -0.2, 0.6])
    windows = []
    for _ in range(40):
        hist = np.zeros((t_steps + 1, 9))
        hist[:, :3] = rng.normal(size=(t_steps + 1, 3))
        phi = hist[:, :3].reshape(-1)
        windows.append(trajkit.TrainingWindow(
            object_id="toy", trial_id="t", t_index=t_steps, k_steps=3,
            history=hist, history_times=np.arange(t_steps + 1) / 120.0,
            future=np.zeros((3, 9)), impact_point=m @ phi + c,
            crossing_frac=0.5))
    return windows


class TestSvr:
    def test_realizable_linear_target_converges(self):
        model = baselines.svr_fit(_toy_windows(), epsilon=0.0, lam=1e-10,
                                  epochs=4000, lr0=0.3)
        x, y = baselines._window_features(_toy_windows())
        _, data_term = baselines.svr_objective(model.weights, model.bias,
                                               x - model.feature_mean, y,
                                               0.0, 1e-10)
        assert data_term < 1e-4

    def test_one_dimensional_toy_matches_least_squares(self):
        # {(0,0),(1,1),(2,2)}: the least-squares oracle gives w=1, b=0.
        windows = []
        for x_val in (0.0, 1.0, 2.0):
            hist = np.zeros((1, 9))
            hist[0, 0] = x_val
            windows.append(trajkit.TrainingWindow(
                object_id="t", trial_id="t", t_index=0, k_steps=1,
                history=hist, history_times=np.zeros(1),
                future=np.zeros((1, 9)),
                impact_point=np.array([x_val, 0.0, 0.0]),
                crossing_frac=0.0))
        model = baselines.svr_fit(windows, epsilon=0.0, lam=1e-12,
                                  epochs=6000, lr0=0.5)
        phi = np.array([0.0, 1.0, 2.0]) - model.feature_mean[0]
        pred = model.weights[0, 0] * phi + model.bias[0]
        assert np.abs(pred - [0.0, 1.0, 2.0]).max() < 1e-3
        # Net slope/intercept in raw coordinates
        w = model.weights[0, 0]
        b = model.bias[0] - w * model.feature_mean[0]
        assert abs(w - 1.0) < 1e-3 and abs(b) < 1e-3

    def test_prediction_from_toy_model(self):
        windows = _toy_windows()
        model = baselines.svr_fit(windows, epsilon=0.0, lam=1e-10,
                                  epochs=4000, lr0=0.3)
        pred = baselines.svr_predict(model, windows[0].history)
        assert np.abs(pred - windows[0].impact_point).max() < 1e-2

    def test_zero_weights_predict_bias(self):
        model = baselines.SvrModel(weights=np.zeros((3, 9)), bias=np.array([1., 2., 3.]),
                                   feature_mean=np.zeros(9), history_steps=2,
                                   epsilon=0.1, lam=1e-4, trained=True)
        hist = np.random.default_rng(0).normal(size=(3, 9))
        assert np.allclose(baselines.svr_predict(model, hist), [1.0, 2.0, 3.0])

    def test_wrong_history_length(self):
        windows = _toy_windows()
        model = baselines.svr_fit(windows, epochs=5)
        with pytest.raises(PredictionError, match="features"):
            baselines.svr_predict(model, np.zeros((7, 9)))

    def test_untrained_model_rejected(self):
        model = baselines.SvrModel(weights=np.zeros((3, 9)), bias=np.zeros(3),
                                   feature_mean=np.zeros(9), history_steps=2,
                                   epsilon=0.1, lam=1e-4)
        with pytest.raises(PredictionError, match="not been trained"):
            baselines.svr_predict(model, np.zeros((3, 9)))

    def test_seed_determinism_stochastic_mode(self):
        windows = _toy_windows()
        a = baselines.svr_fit(windows, epochs=50, seed=5, batch_size=8)
        b = baselines.svr_fit(windows, epochs=50, seed=5, batch_size=8)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)

    def test_full_batch_objective_monotone(self):
        model = baselines.svr_fit(_toy_windows(), epsilon=0.01, lam=1e-4,
                                  epochs=300, lr0=0.5)
        hist = np.array(model.objective_history)
        assert np.all(np.diff(hist) <= 1e-8)

    def test_checkpoint_round_trip(self, tmp_path):
        model = baselines.svr_fit(_toy_windows(), epochs=50)
        path = tmp_path / "svr.ckpt"
        baselines.save_svr(model, path)
        back = baselines.load_svr(path)
        assert np.array_equal(back.weights, model.weights)
        assert np.array_equal(back.bias, model.bias)
        hist = _toy_windows()[0].history
        assert np.array_equal(baselines.svr_predict(back, hist),
                              baselines.svr_predict(model, hist))
