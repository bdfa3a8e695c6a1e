"""Learned impact-point predictors.

Five model kinds share one encoder/core/decoder skeleton:

====================  =========  ====================  =========================
kind                  encoder    head                  default objective terms
====================  =========  ====================  =========================
nae                   lstm       state decoder (9)     one-step + reconstruction
dipp_nae              lstm       state decoder (9)     all four terms
dipp_nae_fc           fc         state decoder (9)     all four terms
dpe                   fc         impact decoder (3)    reconstruction + impact
dipp_dpe              lstm       impact decoder (3)    reconstruction + impact
====================  =========  ====================  =========================

Trajectory-head kinds decode a future state per rollout step and take
the impact point where the decoded track descends through the plane;
impact-head kinds regress the impact point directly from the core's
hidden state after the last encoded input.  The four loss terms are
(a) one-step prediction over the encoded phase, (b) encoder/decoder
reconstruction of the history, (c) autoregressive trajectory alignment
up to the crossing, and (d) squared impact-point error; per-term
weights are configurable, with (c) and (d) switched off for the plain
``nae`` baseline.

States are standardized per dimension with statistics fitted on the
training split and stored in the checkpoint; the impact term and all
reported impact errors stay in meters.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import neurnet as nn
from .errors import DataFormatError, NoCrossingError, PredictionError
from .trajkit import (DatasetSplit, PlaneSpec, TrainingWindow, Trajectory,
                      interpolate_crossing, make_windows)

KINDS = ("nae", "dpe", "dipp_nae", "dipp_dpe", "dipp_nae_fc")

#: Kinds whose encoder is a per-step dense map instead of an LSTM.
FC_ENCODER_KINDS = frozenset({"dpe", "dipp_nae_fc"})

#: Kinds that decode future states and intersect them with the plane.
TRAJECTORY_KINDS = frozenset({"nae", "dipp_nae", "dipp_nae_fc"})

DEFAULT_LEARNING_RATE = {
    "nae": 1.0e-4,
    "dpe": 3.0e-5,
    "dipp_nae": 3.0e-5,
    "dipp_dpe": 3.0e-5,
    "dipp_nae_fc": 3.0e-5,
}

#: Rollout safety cap: 5 s of prediction at the capture rate.
ROLLOUT_CAP = 600

CHECKPOINT_MAGIC = b"SKYC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape of one predictor: kind plus sizes."""

    kind: str
    hidden: int = 128
    history_steps: int = 5
    state_dim: int = 9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown architecture kind {self.kind!r}; choose from {KINDS}")
        if self.hidden <= 0:
            raise ValueError("hidden size must be positive")

    @property
    def encoder(self) -> str:
        return "fc_1layer" if self.kind in FC_ENCODER_KINDS else "lstm_1layer"

    @property
    def trajectory_head(self) -> bool:
        return self.kind in TRAJECTORY_KINDS

    @property
    def decoder_dim(self) -> int:
        return self.state_dim if self.trajectory_head else 3


@dataclass
class TrainHyper:
    """Training configuration; ``learning_rate=None`` picks the per-kind
    default."""

    learning_rate: float | None = None
    batch_size: int = 512
    max_epochs: int = 30000
    seed: int = 0
    clip_norm: float = 5.0
    eval_interval: int = 10
    patience: int = 500
    term_weights: tuple[float, float, float, float] | None = None
    normalize: bool = True
    window_stride: int = 1

    def resolved_lr(self, kind: str) -> float:
        return DEFAULT_LEARNING_RATE[kind] if self.learning_rate is None else self.learning_rate

    def resolved_weights(self, kind: str) -> tuple[float, float, float, float]:
        if self.term_weights is not None:
            return self.term_weights
        if kind == "nae":
            return (1.0, 1.0, 0.0, 0.0)
        return (1.0, 1.0, 1.0, 1.0)


@dataclass
class Model:
    """Architecture, parameter blocks (insertion order is the checkpoint
    declaration order), and the state scaler."""

    arch: ArchitectureSpec
    params: dict[str, np.ndarray]
    scaler_mean: np.ndarray
    scaler_std: np.ndarray


@dataclass
class PredictionResult:
    impact_point: np.ndarray
    steps_to_impact_used: int | None
    inference_time: float
    core_steps: int
    predicted_trajectory: np.ndarray | None = None  # (n, 9), trajectory kinds only


@dataclass
class TrainResult:
    model: Model
    hyper: TrainHyper
    train_loss: list[float] = field(default_factory=list)
    val_epochs: list[int] = field(default_factory=list)
    val_ie: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ie: float = float("inf")
    stopped_reason: str = ""

    def history_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_epochs": self.val_epochs,
                "val_ie": self.val_ie, "best_epoch": self.best_epoch,
                "best_val_ie": self.best_val_ie, "stopped_reason": self.stopped_reason}


# ---------------------------------------------------------------------------
# construction


def init_model(arch: ArchitectureSpec, seed: int = 0,
               scaler_mean: np.ndarray | None = None,
               scaler_std: np.ndarray | None = None) -> Model:
    """Seeded parameter initialization with an identity scaler by default."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    if arch.encoder == "lstm_1layer":
        enc = nn.init_lstm(arch.state_dim, arch.hidden, rng)
        params["encoder.layer0.w_in"] = enc.w_in
        params["encoder.layer0.w_rec"] = enc.w_rec
        params["encoder.layer0.bias"] = enc.bias
    else:
        enc = nn.init_dense(arch.state_dim, arch.hidden, rng)
        params["encoder.weight"] = enc.weight
        params["encoder.bias"] = enc.bias

    for li in range(2):
        layer = nn.init_lstm(arch.hidden, arch.hidden, rng)
        params[f"core.layer{li}.w_in"] = layer.w_in
        params[f"core.layer{li}.w_rec"] = layer.w_rec
        params[f"core.layer{li}.bias"] = layer.bias

    dec = nn.init_dense(arch.hidden, arch.decoder_dim, rng)
    params["decoder.weight"] = dec.weight
    params["decoder.bias"] = dec.bias

    mean = np.zeros(arch.state_dim) if scaler_mean is None else np.asarray(scaler_mean, float)
    std = np.ones(arch.state_dim) if scaler_std is None else np.asarray(scaler_std, float)
    return Model(arch=arch, params=params, scaler_mean=mean, scaler_std=std)


def _encoder_lstm(model: Model) -> list[nn.LstmLayerParams]:
    p = model.params
    return [nn.LstmLayerParams(p["encoder.layer0.w_in"], p["encoder.layer0.w_rec"],
                               p["encoder.layer0.bias"])]


def _encoder_dense(model: Model) -> nn.DenseLayerParams:
    return nn.DenseLayerParams(model.params["encoder.weight"], model.params["encoder.bias"])


def _core_layers(model: Model) -> list[nn.LstmLayerParams]:
    p = model.params
    return [nn.LstmLayerParams(p[f"core.layer{li}.w_in"], p[f"core.layer{li}.w_rec"],
                               p[f"core.layer{li}.bias"]) for li in range(2)]


def _decoder(model: Model) -> nn.DenseLayerParams:
    return nn.DenseLayerParams(model.params["decoder.weight"], model.params["decoder.bias"])


def fit_scaler(trajs: list[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std over all states of the given trajectories."""
    states = np.concatenate([t.states for t in trajs], axis=0)
    mean = states.mean(axis=0)
    std = np.maximum(states.std(axis=0), 1e-8)
    return mean, std


def _normalize(model: Model, states: np.ndarray) -> np.ndarray:
    return (states - model.scaler_mean) / model.scaler_std


# ---------------------------------------------------------------------------
# forward pieces


def encode(model: Model, history: np.ndarray) -> np.ndarray:
    """Per-step feature sequence for one history of T+1 raw states."""
    history = np.asarray(history, dtype=float)
    expected = model.arch.history_steps + 1
    if history.shape != (expected, model.arch.state_dim):
        raise ValueError(f"history must be ({expected}, {model.arch.state_dim}), "
                         f"got {history.shape}")
    hn = _normalize(model, history)[None]
    if model.arch.encoder == "lstm_1layer":
        feats, _, _ = nn.lstm_forward(_encoder_lstm(model), hn)
    else:
        feats = nn.dense_forward(_encoder_dense(model), hn)
    return feats[0]


def decode_state(model: Model, hidden: np.ndarray) -> np.ndarray:
    """Raw 9-D state decoded from a hidden vector (trajectory kinds)."""
    if not model.arch.trajectory_head:
        raise ValueError(f"kind {model.arch.kind!r} has no state decoder")
    out = nn.dense_forward(_decoder(model), np.asarray(hidden, dtype=float))
    return out * model.scaler_std + model.scaler_mean


def decode_impact(model: Model, hidden: np.ndarray) -> np.ndarray:
    """Impact point decoded from the post-history hidden state (impact kinds)."""
    if model.arch.trajectory_head:
        raise ValueError(f"kind {model.arch.kind!r} decodes trajectories, not impact points")
    out = nn.dense_forward(_decoder(model), np.asarray(hidden, dtype=float))
    return out * model.scaler_std[:3] + model.scaler_mean[:3]


def impact_from_trajectory(positions: np.ndarray, plane: PlaneSpec) -> np.ndarray:
    """Plane intersection of a predicted position sequence.

    Exactly the ground-truth rule: linear interpolation across the
    descending crossing.
    """
    point, _, _ = interpolate_crossing(np.asarray(positions, dtype=float), plane.height)
    return point


# ---------------------------------------------------------------------------
# losses (batched internals, single-window public ops)


def _batch_arrays(windows: list[TrainingWindow], state_dim: int):
    """Stack windows into padded arrays for the trajectory loss."""
    b = len(windows)
    t_len = windows[0].history.shape[0]
    ks = np.array([w.k_steps for w in windows], dtype=int)
    kmax = int(ks.max())
    hist = np.zeros((b, t_len, state_dim))
    fut = np.zeros((b, kmax, state_dim))
    imps = np.zeros((b, 3))
    fracs = np.zeros(b)
    for i, w in enumerate(windows):
        hist[i] = w.history
        fut[i, :w.k_steps] = w.future
        imps[i] = w.impact_point
        fracs[i] = w.crossing_frac
    return hist, fut, ks, fracs, imps


def _loss_trajectory_batch(model: Model, hist, fut, ks, fracs, imps,
                           weights, grads=None, details=None):
    """Four-term objective for trajectory-head kinds over a padded batch.

    Rollout length is max(K)+? per batch: the core consumes the T+1
    encoded features, then free-runs max(K) steps so every window reaches
    the step past its own crossing bracket.  Per-window terms use that
    window's K; padded steps are masked out.
    """
    arch = model.arch
    t_steps = arch.history_steps
    b, kmax = hist.shape[0], fut.shape[1]
    w_tf, w_rec, w_align, w_imp = weights
    std3 = model.scaler_std[:3]
    mean3 = model.scaler_mean[:3]

    # The free-running tail only feeds the alignment and impact terms;
    # with both weighted zero (the plain one-step objective) it can be
    # skipped, which changes neither the loss nor any gradient.
    rollout_steps = kmax if (w_align != 0.0 or w_imp != 0.0) else 0

    hn = _normalize(model, hist)
    fn = _normalize(model, fut)

    fc_encoder = arch.encoder == "fc_1layer"
    if fc_encoder:
        e_seq = nn.dense_forward(_encoder_dense(model), hn)
        enc_tape = None
    else:
        e_seq, _, enc_tape = nn.lstm_forward(_encoder_lstm(model), hn)

    dec = _decoder(model)
    recon = nn.dense_forward(dec, e_seq)                       # (B, T+1, 9)
    core = _core_layers(model)
    core_out, _, core_tape = nn.lstm_forward(core, e_seq, free_steps=rollout_steps)
    dec_out = nn.dense_forward(dec, core_out)                  # (B, T+1+rollout, 9)

    # (a) one-step prediction along the encoded phase: step j predicts the
    # state one past input j, so targets are history[1:] plus future[0].
    tf_targets = np.concatenate([hn[:, 1:], fn[:, :1]], axis=1)
    tf_diff = dec_out[:, :t_steps + 1] - tf_targets
    tf_per = (tf_diff ** 2).sum(axis=(1, 2)) / (t_steps + 1)

    # (b) reconstruction of the history through encoder + decoder.
    recon_diff = recon - hn
    recon_per = (recon_diff ** 2).sum(axis=(1, 2)) / (t_steps + 1)

    # (c) free-running alignment: rollout step r predicts future[r+1],
    # valid while r+1 < K.
    if rollout_steps >= 2:
        align_diff = dec_out[:, t_steps + 1:t_steps + kmax] - fn[:, 1:]
        align_mask = (np.arange(kmax - 1)[None, :] <= (ks - 2)[:, None]).astype(float)
        align_sq = (align_diff ** 2).sum(axis=2) * align_mask
        align_per = align_sq.sum(axis=1) / np.maximum(ks - 1, 1)
    else:
        align_diff = align_mask = None
        align_per = np.zeros(b)

    # (d) impact error: the predicted track evaluated at the true
    # crossing time, i.e. the stored fraction between rollout steps K
    # and K+1, in meters.
    rows = np.arange(b)
    if rollout_steps:
        j_k = t_steps + ks - 1
        j_k1 = t_steps + ks
        p_k = dec_out[rows, j_k, :3] * std3 + mean3
        p_k1 = dec_out[rows, j_k1, :3] * std3 + mean3
        p_hat = (1.0 - fracs)[:, None] * p_k + fracs[:, None] * p_k1
        imp_diff = p_hat - imps
        imp_per = (imp_diff ** 2).sum(axis=1)
    else:
        p_hat = np.full((b, 3), np.nan)
        imp_diff = None
        imp_per = np.zeros(b)

    per_window = w_tf * tf_per + w_rec * recon_per + w_align * align_per + w_imp * imp_per
    loss = float(per_window.mean())

    if details is not None:
        details.update(e_seq=e_seq, recon=recon, dec_out=dec_out,
                       tf_targets=tf_targets, hn=hn, fn=fn, p_hat=p_hat,
                       terms=np.stack([tf_per, recon_per, align_per, imp_per], axis=1))

    if grads is None:
        return loss

    scale = 1.0 / b
    d_dec_out = np.zeros_like(dec_out)
    d_dec_out[:, :t_steps + 1] = (2.0 * w_tf / (t_steps + 1) * scale) * tf_diff
    if rollout_steps >= 2:
        d_dec_out[:, t_steps + 1:t_steps + kmax] = (
            (2.0 * w_align * scale) * align_diff * align_mask[:, :, None]
            / np.maximum(ks - 1, 1)[:, None, None])
    if rollout_steps:
        d_phat = (2.0 * w_imp * scale) * imp_diff              # (B, 3)
        d_dec_out[rows, j_k, :3] += (1.0 - fracs)[:, None] * d_phat * std3
        d_dec_out[rows, j_k1, :3] += fracs[:, None] * d_phat * std3
    d_recon = (2.0 * w_rec / (t_steps + 1) * scale) * recon_diff

    d_core_out = nn.dense_backward(dec, core_out, d_dec_out, grads, "decoder")
    d_e = nn.lstm_backward(core, core_tape, d_core_out, grads, "core")
    d_e = d_e + nn.dense_backward(dec, e_seq, d_recon, grads, "decoder")
    if fc_encoder:
        nn.dense_backward(_encoder_dense(model), hn, d_e, grads, "encoder")
    else:
        nn.lstm_backward(_encoder_lstm(model), enc_tape, d_e, grads, "encoder")
    return loss


def _loss_direct_batch(model: Model, hist, imps, weights, grads=None, details=None):
    """Reconstruction + impact objective for impact-head kinds.

    The reconstruction routes the encoder features through the 3-D
    impact decoder and targets the position sub-vector of each history
    state; the impact term reads the core's hidden state after the last
    encoded input.
    """
    arch = model.arch
    t_steps = arch.history_steps
    b = hist.shape[0]
    _, w_rec, _, w_imp = weights
    std3 = model.scaler_std[:3]
    mean3 = model.scaler_mean[:3]

    hn = _normalize(model, hist)
    fc_encoder = arch.encoder == "fc_1layer"
    if fc_encoder:
        e_seq = nn.dense_forward(_encoder_dense(model), hn)
        enc_tape = None
    else:
        e_seq, _, enc_tape = nn.lstm_forward(_encoder_lstm(model), hn)

    dec = _decoder(model)
    recon = nn.dense_forward(dec, e_seq)                       # (B, T+1, 3)
    core = _core_layers(model)
    core_out, _, core_tape = nn.lstm_forward(core, e_seq)
    h_last = core_out[:, -1]
    p_n = nn.dense_forward(dec, h_last)
    p_hat = p_n * std3 + mean3

    recon_diff = recon - hn[:, :, :3]
    recon_per = (recon_diff ** 2).sum(axis=(1, 2)) / (t_steps + 1)
    imp_diff = p_hat - imps
    imp_per = (imp_diff ** 2).sum(axis=1)
    loss = float((w_rec * recon_per + w_imp * imp_per).mean())

    if details is not None:
        details.update(e_seq=e_seq, recon=recon, hn=hn, p_hat=p_hat,
                       terms=np.stack([recon_per, imp_per], axis=1))
    if grads is None:
        return loss

    scale = 1.0 / b
    d_pn = (2.0 * w_imp * scale) * imp_diff * std3
    d_core_out = np.zeros_like(core_out)
    d_core_out[:, -1] = nn.dense_backward(dec, h_last, d_pn, grads, "decoder")
    d_e = nn.lstm_backward(core, core_tape, d_core_out, grads, "core")
    d_recon = (2.0 * w_rec / (t_steps + 1) * scale) * recon_diff
    d_e = d_e + nn.dense_backward(dec, e_seq, d_recon, grads, "decoder")
    if fc_encoder:
        nn.dense_backward(_encoder_dense(model), hn, d_e, grads, "encoder")
    else:
        nn.lstm_backward(_encoder_lstm(model), enc_tape, d_e, grads, "encoder")
    return loss


def loss_nae(model: Model, window: TrainingWindow,
             weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
             with_grads: bool = True, details: dict | None = None):
    """Four-term objective on one window (trajectory-head kinds).

    Returns (loss, grads); grads is None when ``with_grads`` is false.
    Windows with K < 2 have no alignment span and are rejected.
    """
    if not model.arch.trajectory_head:
        raise ValueError(f"kind {model.arch.kind!r} does not use the trajectory objective")
    if window.k_steps < 2:
        raise ValueError(f"window at t={window.t_index} has K={window.k_steps} < 2; skip it")
    hist, fut, ks, fracs, imps = _batch_arrays([window], model.arch.state_dim)
    grads = nn.zero_grads(model.params) if with_grads else None
    loss = _loss_trajectory_batch(model, hist, fut, ks, fracs, imps, weights,
                                  grads=grads, details=details)
    return loss, grads


def loss_dpe(model: Model, window: TrainingWindow,
             weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0),
             with_grads: bool = True, details: dict | None = None):
    """Reconstruction + impact objective on one window (impact-head kinds)."""
    if model.arch.trajectory_head:
        raise ValueError(f"kind {model.arch.kind!r} does not use the direct objective")
    hist, _, _, _, imps = _batch_arrays([window], model.arch.state_dim)
    grads = nn.zero_grads(model.params) if with_grads else None
    loss = _loss_direct_batch(model, hist, imps, weights, grads=grads, details=details)
    return loss, grads


def training_loss(model: Model, windows: list[TrainingWindow],
                  weights: tuple[float, float, float, float],
                  with_grads: bool = True):
    """Batch mean loss (and gradients) with the model's applicable objective."""
    grads = nn.zero_grads(model.params) if with_grads else None
    if model.arch.trajectory_head:
        hist, fut, ks, fracs, imps = _batch_arrays(windows, model.arch.state_dim)
        loss = _loss_trajectory_batch(model, hist, fut, ks, fracs, imps, weights, grads=grads)
    else:
        hist, _, _, _, imps = _batch_arrays(windows, model.arch.state_dim)
        loss = _loss_direct_batch(model, hist, imps, weights, grads=grads)
    return loss, grads


# ---------------------------------------------------------------------------
# inference


def rollout(model: Model, history: np.ndarray, plane: PlaneSpec,
            cap: int = ROLLOUT_CAP):
    """Autoregressive future prediction until the decoded track drops
    below the plane.

    Returns (raw predicted states (n, 9) starting one step past the
    history, discovered K, total core steps).  Raises NoCrossingError at
    the step cap.
    """
    arch = model.arch
    if not arch.trajectory_head:
        raise ValueError(f"kind {arch.kind!r} does not roll out trajectories")
    feats = encode(model, history)[None]
    core = _core_layers(model)
    core_out, (h, c), _ = nn.lstm_forward(core, feats)
    dec = _decoder(model)

    states_n = [nn.dense_forward(dec, core_out[0, -1])]
    core_steps = arch.history_steps + 1
    while states_n[-1][2] * model.scaler_std[2] + model.scaler_mean[2] >= plane.height:
        if len(states_n) > cap:
            raise NoCrossingError(
                f"decoded trajectory still above plane z={plane.height:.3g} "
                f"after {cap} rollout steps")
        top = nn.lstm_step(core, h[-1], h, c)
        states_n.append(nn.dense_forward(dec, top[0]))
        core_steps += 1

    states = np.asarray(states_n) * model.scaler_std + model.scaler_mean
    _, idx, _ = interpolate_crossing(states[:, :3], plane.height)
    return states, idx + 1, core_steps


def predict_impact(model: Model, history: np.ndarray, plane: PlaneSpec) -> PredictionResult:
    """Impact point for one history of T+1 raw states.

    Trajectory-head kinds roll out and intersect; impact-head kinds run
    the core across the encoded history and decode the impact point from
    the final hidden state.
    """
    start = time.perf_counter()
    arch = model.arch
    if arch.trajectory_head:
        states, k_used, core_steps = rollout(model, history, plane)
        point = impact_from_trajectory(states[:, :3], plane)
        return PredictionResult(impact_point=point, steps_to_impact_used=k_used,
                                inference_time=time.perf_counter() - start,
                                core_steps=core_steps, predicted_trajectory=states)
    feats = encode(model, history)[None]
    core_out, _, _ = nn.lstm_forward(_core_layers(model), feats)
    point = decode_impact(model, core_out[0, -1])
    return PredictionResult(impact_point=point, steps_to_impact_used=None,
                            inference_time=time.perf_counter() - start,
                            core_steps=arch.history_steps + 1)


def make_predictor(model: Model, plane: PlaneSpec):
    """Adapter: (times, states) -> impact point, raising PredictionError."""

    def predict(times: np.ndarray, states: np.ndarray) -> np.ndarray:
        try:
            return predict_impact(model, states, plane).impact_point
        except (NoCrossingError, ValueError) as exc:
            raise PredictionError(str(exc)) from None

    return predict


# ---------------------------------------------------------------------------
# training


def collect_windows(trajs: list[Trajectory], history_steps: int, plane: PlaneSpec,
                    stride: int = 1, min_k: int = 1) -> list[TrainingWindow]:
    """Windows from every trajectory, subsampled by ``stride`` over t."""
    out = []
    for traj in trajs:
        try:
            wins = make_windows(traj, history_steps, plane)
        except NoCrossingError:
            continue
        out.extend(w for w in wins[::stride] if w.k_steps >= min_k)
    return out


def _validation_ie(model: Model, windows: list[TrainingWindow],
                   batch_size: int) -> float:
    """Mean impact error on windows, using the training-time impact
    construction (predicted track at the true crossing time)."""
    errs = []
    for lo in range(0, len(windows), batch_size):
        chunk = windows[lo:lo + batch_size]
        if model.arch.trajectory_head:
            hist, fut, ks, fracs, imps = _batch_arrays(chunk, model.arch.state_dim)
            details: dict = {}
            _loss_trajectory_batch(model, hist, fut, ks, fracs, imps,
                                   (0, 0, 0, 1), details=details)
        else:
            hist, _, _, _, imps = _batch_arrays(chunk, model.arch.state_dim)
            details = {}
            _loss_direct_batch(model, hist, imps, (0, 1, 0, 1), details=details)
        errs.append(np.linalg.norm(details["p_hat"] - imps, axis=1))
    return float(np.concatenate(errs).mean()) if errs else float("inf")


def train(arch: ArchitectureSpec, trajs: list[Trajectory], split: DatasetSplit,
          plane: PlaneSpec, hyper: TrainHyper) -> TrainResult:
    """Seeded minibatch training with Adam, validation-based selection,
    and early stopping.

    Minibatches group windows of similar K (stable sort of a seeded
    shuffle) so padded rollout length tracks the batch content; batch
    order is shuffled too.  The checkpoint with the best validation
    impact error is returned.  A non-finite loss aborts with the best
    model so far.
    """
    min_k = 2 if arch.trajectory_head else 1
    train_windows = collect_windows(split.select(trajs, "train"), arch.history_steps,
                                    plane, stride=hyper.window_stride, min_k=min_k)
    val_windows = collect_windows(split.select(trajs, "val"), arch.history_steps,
                                  plane, stride=max(hyper.window_stride, 2), min_k=min_k)
    if not train_windows:
        raise ValueError("training partition produced no usable windows")

    if hyper.normalize:
        mean, std = fit_scaler(split.select(trajs, "train"))
    else:
        mean, std = None, None
    model = init_model(arch, seed=hyper.seed, scaler_mean=mean, scaler_std=std)
    weights = hyper.resolved_weights(arch.kind)
    adam = nn.AdamState(learning_rate=hyper.resolved_lr(arch.kind))
    rng = np.random.default_rng(hyper.seed)
    result = TrainResult(model=model, hyper=hyper)

    ks = np.array([w.k_steps for w in train_windows])
    n = len(train_windows)
    best_params = {k: v.copy() for k, v in model.params.items()}
    since_best = 0

    for epoch in range(hyper.max_epochs):
        perm = rng.permutation(n)
        order = perm[np.argsort(ks[perm], kind="stable")]
        n_batches = (n + hyper.batch_size - 1) // hyper.batch_size
        batch_order = rng.permutation(n_batches)

        epoch_loss = 0.0
        for bi in batch_order:
            idx = order[bi * hyper.batch_size:(bi + 1) * hyper.batch_size]
            batch = [train_windows[i] for i in idx]
            loss, grads = training_loss(model, batch, weights)
            if not np.isfinite(loss):
                result.stopped_reason = f"non-finite loss at epoch {epoch}; kept best checkpoint"
                model.params = best_params
                result.train_loss.append(loss)
                return result
            nn.clip_grad_norm(grads, hyper.clip_norm)
            nn.adam_step(model.params, grads, adam)
            epoch_loss += loss * len(batch)
        result.train_loss.append(epoch_loss / n)

        if val_windows and (epoch + 1) % hyper.eval_interval == 0:
            ie = _validation_ie(model, val_windows, hyper.batch_size)
            result.val_epochs.append(epoch)
            result.val_ie.append(ie)
            if ie < result.best_val_ie:
                result.best_val_ie = ie
                result.best_epoch = epoch
                best_params = {k: v.copy() for k, v in model.params.items()}
                since_best = 0
            else:
                since_best += 1
                if since_best >= hyper.patience:
                    result.stopped_reason = f"early stop at epoch {epoch}"
                    break
    if not result.stopped_reason:
        result.stopped_reason = "epoch budget exhausted"

    if val_windows and result.best_epoch >= 0:
        model.params = best_params
    return result


# ---------------------------------------------------------------------------
# embeddings


def export_embeddings(model: Model, windows: list[TrainingWindow],
                      early_only: bool = True, early_count: int = 5):
    """Final-step encoder features per window.

    By default only each trajectory's first ``early_count`` windows (the
    early stage) are exported.  Returns (rows, features) where rows are
    (object_id, trial_id, t_index) and features is (n, hidden).
    """
    t_steps = model.arch.history_steps
    chosen = [w for w in windows
              if not early_only or (w.t_index - t_steps) < early_count]
    if not chosen:
        return [], np.zeros((0, model.arch.hidden))
    hist = np.stack([w.history for w in chosen])
    hn = _normalize(model, hist)
    if model.arch.encoder == "lstm_1layer":
        feats, _, _ = nn.lstm_forward(_encoder_lstm(model), hn)
    else:
        feats = nn.dense_forward(_encoder_dense(model), hn)
    rows = [(w.object_id, w.trial_id, w.t_index) for w in chosen]
    return rows, feats[:, -1, :]


def write_embeddings_csv(rows, features: np.ndarray, path) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["object_id", "trial_id", "t_index"]
                        + [f"f{i}" for i in range(features.shape[1])])
        for (obj, trial, t), feat in zip(rows, features):
            writer.writerow([obj, trial, t] + [repr(float(x)) for x in feat])


# ---------------------------------------------------------------------------
# checkpoint container (shared with the classical baselines)


def checkpoint_write(path, meta: dict, blocks: dict[str, np.ndarray]) -> None:
    """Versioned binary container: magic, header JSON, float64 LE blocks
    in declaration order, plus a human-readable JSON sidecar."""
    header = {
        "meta": meta,
        "blocks": [{"name": name, "shape": list(arr.shape)}
                   for name, arr in blocks.items()],
    }
    payload = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        for arr in blocks.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")


def checkpoint_read(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"{path}: not a skycatch checkpoint (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        blocks = {}
        for spec in header["blocks"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            blocks[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header["meta"], blocks


def save_model(model: Model, path, hyper: TrainHyper | None = None,
               history: dict | None = None) -> None:
    meta = {
        "kind": model.arch.kind,
        "arch": asdict(model.arch),
        "hyper": asdict(hyper) if hyper is not None else None,
        "history": history,
    }
    blocks = dict(model.params)
    blocks["scaler.mean"] = model.scaler_mean
    blocks["scaler.std"] = model.scaler_std
    checkpoint_write(path, meta, blocks)


def load_model(path) -> tuple[Model, dict]:
    meta, blocks = checkpoint_read(path)
    if meta["kind"] not in KINDS:
        raise DataFormatError(f"{path}: checkpoint kind {meta['kind']!r} is not a "
                              "neural predictor")
    arch = ArchitectureSpec(**meta["arch"])
    mean = blocks.pop("scaler.mean")
    std = blocks.pop("scaler.std")
    model = Model(arch=arch, params=blocks, scaler_mean=mean, scaler_std=std)
    return model, meta
