"""Minimal dense/LSTM neural engine with exact reverse-mode gradients.

Everything is float64 and batch-first: inputs are (batch, steps, dim),
hidden states (batch, hidden).  The LSTM stack supports an optional
free-running tail in which the top layer's hidden output is fed back as
the next step's input; the backward pass routes gradients through those
feedback connections.  Gates are sliced in the fixed order
[input, forget, cell, output].

Parameters live in plain dicts of named arrays so the optimizer and the
checkpoint writer can treat every model uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Clipping at 60 is exact in float64 (sigmoid saturates to 0/1 well
    # before) and keeps exp from overflowing.
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class LstmLayerParams:
    """One LSTM layer: input weights (4h, d), recurrent weights (4h, h),
    bias (4h,)."""

    w_in: np.ndarray
    w_rec: np.ndarray
    bias: np.ndarray

    @property
    def hidden(self) -> int:
        return self.w_rec.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]


@dataclass
class DenseLayerParams:
    """Affine layer: weight (out, in), bias (out,)."""

    weight: np.ndarray
    bias: np.ndarray


def init_lstm(input_dim: int, hidden: int, rng: np.random.Generator) -> LstmLayerParams:
    """Uniform +-1/sqrt(fan_in) weights; forget-gate bias starts at 1."""
    s_in = 1.0 / np.sqrt(input_dim)
    s_rec = 1.0 / np.sqrt(hidden)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return LstmLayerParams(
        w_in=rng.uniform(-s_in, s_in, size=(4 * hidden, input_dim)),
        w_rec=rng.uniform(-s_rec, s_rec, size=(4 * hidden, hidden)),
        bias=bias,
    )


def init_dense(input_dim: int, output_dim: int, rng: np.random.Generator) -> DenseLayerParams:
    s = 1.0 / np.sqrt(input_dim)
    return DenseLayerParams(
        weight=rng.uniform(-s, s, size=(output_dim, input_dim)),
        bias=np.zeros(output_dim),
    )


# ---------------------------------------------------------------------------
# dense layer


def dense_forward(p: DenseLayerParams, x: np.ndarray) -> np.ndarray:
    """Affine map on the trailing axis of ``x``."""
    return x @ p.weight.T + p.bias


def dense_backward(p: DenseLayerParams, x: np.ndarray, dy: np.ndarray,
                   grads: dict[str, np.ndarray], prefix: str) -> np.ndarray:
    """Accumulate weight/bias gradients and return the input gradient."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    grads[prefix + ".weight"] += dy2.T @ x2
    grads[prefix + ".bias"] += dy2.sum(axis=0)
    return dy @ p.weight


# ---------------------------------------------------------------------------
# LSTM stack with optional free-running tail


@dataclass
class _StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray  # (B, 4h) post-activation, blocks [i, f, g, o]
    c: np.ndarray
    tc: np.ndarray     # tanh(c)


@dataclass
class LstmTape:
    """Forward record of an LSTM stack run; consumed once by backward."""

    n_input_steps: int
    free_steps: int
    input_dim: int
    batch: int
    steps: list[list[_StepCache]] = field(default_factory=list)  # [step][layer]
    outputs: np.ndarray | None = None  # (B, S_total, h) top-layer hidden
    consumed: bool = False


def _sigmoid_inplace(v: np.ndarray) -> None:
    np.negative(v, out=v)
    np.exp(v, out=v)
    v += 1.0
    np.reciprocal(v, out=v)


def _cell_forward(p: LstmLayerParams, x, h_prev, c_prev):
    # In-place gate math: the z buffer becomes the post-activation gate
    # block [i, f, g, o] kept for the backward pass.
    h = p.hidden
    z = x @ p.w_in.T
    z += h_prev @ p.w_rec.T
    z += p.bias
    np.clip(z, -60.0, 60.0, out=z)  # exact for f64 sigmoid/tanh, stops exp overflow
    _sigmoid_inplace(z[:, :2 * h])
    np.tanh(z[:, 2 * h:3 * h], out=z[:, 2 * h:3 * h])
    _sigmoid_inplace(z[:, 3 * h:])

    c = z[:, h:2 * h] * c_prev
    c += z[:, :h] * z[:, 2 * h:3 * h]
    tc = np.tanh(c)
    hid = z[:, 3 * h:] * tc
    return hid, c, _StepCache(x=x, h_prev=h_prev, c_prev=c_prev,
                              gates=z, c=c, tc=tc)


def _cell_backward(p: LstmLayerParams, cache: _StepCache, dh, dc_in,
                   grads: dict[str, np.ndarray], prefix: str):
    h = p.hidden
    i = cache.gates[:, :h]
    f = cache.gates[:, h:2 * h]
    g = cache.gates[:, 2 * h:3 * h]
    o = cache.gates[:, 3 * h:]

    dc = 1.0 - cache.tc * cache.tc
    dc *= dh * o
    dc += dc_in
    dc_prev = dc * f

    dz = np.empty_like(cache.gates)
    np.multiply(dc, g, out=dz[:, :h])                  # di
    dz[:, :h] *= i * (1.0 - i)
    np.multiply(dc, cache.c_prev, out=dz[:, h:2 * h])  # df
    dz[:, h:2 * h] *= f * (1.0 - f)
    np.multiply(dc, i, out=dz[:, 2 * h:3 * h])         # dg
    dz[:, 2 * h:3 * h] *= 1.0 - g * g
    np.multiply(dh, cache.tc, out=dz[:, 3 * h:])       # do
    dz[:, 3 * h:] *= o * (1.0 - o)

    grads[prefix + ".w_in"] += dz.T @ cache.x
    grads[prefix + ".w_rec"] += dz.T @ cache.h_prev
    grads[prefix + ".bias"] += dz.sum(axis=0)
    dx = dz @ p.w_in
    dh_prev = dz @ p.w_rec
    return dx, dh_prev, dc_prev


def lstm_forward(layers: list[LstmLayerParams], inputs: np.ndarray,
                 free_steps: int = 0,
                 ) -> tuple[np.ndarray, tuple[list[np.ndarray], list[np.ndarray]], LstmTape]:
    """Run a stacked LSTM over ``inputs`` (B, S, d), then ``free_steps``
    extra steps feeding the top hidden output back in as the input.

    Returns the top-layer hidden sequence (B, S + free_steps, h), the
    final per-layer (h, c) states, and the tape for the backward pass.
    With an empty input sequence and no free steps, the output sequence
    is empty and the final states are zeros.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 3:
        raise ValueError(f"inputs must be (batch, steps, dim), got shape {inputs.shape}")
    batch, n_in, dim = inputs.shape
    if dim != layers[0].input_dim:
        raise ValueError(f"input dim {dim} does not match layer dim {layers[0].input_dim}")
    if free_steps and layers[0].input_dim != layers[-1].hidden:
        raise ValueError("free-running needs top hidden dim equal to the input dim")

    h = [np.zeros((batch, p.hidden)) for p in layers]
    c = [np.zeros((batch, p.hidden)) for p in layers]
    tape = LstmTape(n_input_steps=n_in, free_steps=free_steps,
                    input_dim=dim, batch=batch)
    outputs = np.zeros((batch, n_in + free_steps, layers[-1].hidden))

    for j in range(n_in + free_steps):
        x = inputs[:, j] if j < n_in else h[-1]
        caches = []
        for li, p in enumerate(layers):
            hid, cc, cache = _cell_forward(p, x, h[li], c[li])
            caches.append(cache)
            h[li], c[li] = hid, cc
            x = hid
        tape.steps.append(caches)
        outputs[:, j] = h[-1]
    tape.outputs = outputs
    return outputs, (h, c), tape


def lstm_step(layers: list[LstmLayerParams], x: np.ndarray,
              h: list[np.ndarray], c: list[np.ndarray]) -> np.ndarray:
    """Advance a stacked LSTM one step in place (inference only)."""
    for li, p in enumerate(layers):
        hid, cc, _ = _cell_forward(p, x, h[li], c[li])
        h[li], c[li] = hid, cc
        x = hid
    return x


def lstm_backward(layers: list[LstmLayerParams], tape: LstmTape,
                  d_outputs: np.ndarray, grads: dict[str, np.ndarray],
                  prefix: str) -> np.ndarray:
    """Exact reverse-mode pass over a taped forward run.

    ``d_outputs`` is the upstream gradient on the top-layer hidden output
    at every step, shape (B, S_total, h).  Gradients accumulate into
    ``grads`` under ``prefix.layer{k}.*``; the return value is the
    gradient on the external inputs, shape (B, n_input_steps, d).
    Feedback connections of free-running steps are handled internally.
    A tape can be consumed only once.
    """
    if tape.consumed:
        raise RuntimeError("tape already consumed by a previous backward pass")
    tape.consumed = True

    n_layers = len(layers)
    batch = tape.batch
    dh = [np.zeros((batch, p.hidden)) for p in layers]
    dc = [np.zeros((batch, p.hidden)) for p in layers]
    d_inputs = np.zeros((batch, tape.n_input_steps, tape.input_dim))
    carry = np.zeros((batch, layers[-1].hidden))  # via feedback input of step j+1

    for j in range(len(tape.steps) - 1, -1, -1):
        dh[-1] = dh[-1] + d_outputs[:, j] + carry
        dx = None
        for li in range(n_layers - 1, -1, -1):
            dx, dh_prev, dc_prev = _cell_backward(
                layers[li], tape.steps[j][li], dh[li], dc[li],
                grads, f"{prefix}.layer{li}")
            dh[li], dc[li] = dh_prev, dc_prev
            if li > 0:
                dh[li - 1] = dh[li - 1] + dx
        if j >= tape.n_input_steps:
            carry = dx  # input of step j was the top hidden of step j-1
        else:
            carry = np.zeros((batch, layers[-1].hidden))
            d_inputs[:, j] = dx
    return d_inputs


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Standard bias-corrected Adam with per-array moment accumulators."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """Apply one in-place Adam update to every parameter block."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(p) for name, p in params.items()}


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# finite-difference checking


def finite_difference_check(params: dict[str, np.ndarray], loss_fn,
                            analytic: dict[str, np.ndarray],
                            step: float = 1e-5, floor: float = 1e-4) -> float:
    """Max relative error between analytic gradients and central differences.

    Perturbs every entry of every block.  The denominator is floored so
    near-zero gradient entries, where the central difference is pure
    truncation noise (~1e-10 here), do not report spurious mismatches;
    a genuinely wrong gradient errs at the gradient scale and is still
    caught.
    """
    worst = 0.0
    for name, p in params.items():
        an = analytic[name]
        flat = p.reshape(-1)
        an_flat = an.reshape(-1)
        for idx in range(flat.shape[0]):
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = loss_fn()
            flat[idx] = orig - step
            f_minus = loss_fn()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(an_flat[idx]), abs(numeric), floor)
            worst = max(worst, abs(an_flat[idx] - numeric) / denom)
    return worst
