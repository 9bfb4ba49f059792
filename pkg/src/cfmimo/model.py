"""Recurrent association policy: parameters, forward pass, manual BPTT.

The policy is a bidirectional LSTM over a chain of per-UE cells followed by a
shared fully connected head. The chain is ordered hierarchically: master APs
ascending, and each master's UEs by descending gain toward it, so adjacent
cells describe radio-adjacent users. Forward and backward hidden states at
each position are summed and pushed through ReLU hidden layers into a sigmoid
output, one connection probability per AP.

Everything is float64 end to end so the analytic backward pass can be checked
to tight tolerance against finite differences; inference may downcast
externally if desired. No autodiff framework is involved; gradients are
hand-propagated through the head, the sum aggregation and both recurrences.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ._kernels import get_backend
from .config import ExperimentConfig
from .errors import CheckpointError, NumericalError

__all__ = [
    "ModelParams",
    "ChainOrder",
    "ForwardTrace",
    "AdamState",
    "init_params",
    "order_chain",
    "build_inputs",
    "lstm_step",
    "model_forward",
    "model_backward",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

# Fixed affine map taking typical gain values in dB to roughly [-1, 1];
# constants are deployment-independent so a trained policy transfers across
# drops without per-drop statistics.
GAIN_DB_SHIFT = 110.0
GAIN_DB_SCALE = 1.0 / 40.0


@dataclass
class ModelParams:
    """All trainable weights.

    Gate blocks are stacked along rows in the order forget, input, output,
    candidate: ``fwd_w`` is (4q, d), ``fwd_u`` (4q, q), ``fwd_b`` (4q,), and
    likewise for the backward direction. ``fc`` lists (weight, bias) pairs,
    weights shaped (fan_out, fan_in); the final layer's fan_out is the
    number of AP decision slots.
    """

    fwd_w: np.ndarray
    fwd_u: np.ndarray
    fwd_b: np.ndarray
    bwd_w: np.ndarray
    bwd_u: np.ndarray
    bwd_b: np.ndarray
    fc: list

    @property
    def hidden_size(self) -> int:
        return self.fwd_u.shape[1]

    @property
    def input_size(self) -> int:
        return self.fwd_w.shape[1]

    @property
    def output_size(self) -> int:
        return self.fc[-1][0].shape[0]

    @property
    def fc_widths(self) -> tuple:
        return tuple(w.shape[0] for w, _ in self.fc)

    def arrays(self) -> list:
        """Parameter arrays in the documented (checkpoint) order."""
        out = [self.fwd_w, self.fwd_u, self.fwd_b, self.bwd_w, self.bwd_u, self.bwd_b]
        for w, b in self.fc:
            out.extend((w, b))
        return out

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.fwd_w.copy(), self.fwd_u.copy(), self.fwd_b.copy(),
            self.bwd_w.copy(), self.bwd_u.copy(), self.bwd_b.copy(),
            [(w.copy(), b.copy()) for w, b in self.fc],
        )


def init_params(
    hidden_size: int, input_size: int, fc_widths, rng: np.random.Generator
) -> ModelParams:
    """Uniform(-1/sqrt(q), 1/sqrt(q)) weights, zero biases.

    ``fc_widths`` lists every head layer width including the final decision
    width, e.g. (256, 128, 25).
    """
    q = hidden_size
    lim = 1.0 / np.sqrt(q)

    def u(*shape):
        return rng.uniform(-lim, lim, size=shape)

    fc = []
    fan_in = q
    for width in fc_widths:
        fc.append((u(width, fan_in), np.zeros(width)))
        fan_in = width
    return ModelParams(
        fwd_w=u(4 * q, input_size), fwd_u=u(4 * q, q), fwd_b=np.zeros(4 * q),
        bwd_w=u(4 * q, input_size), bwd_u=u(4 * q, q), bwd_b=np.zeros(4 * q),
        fc=fc,
    )


# ---------------------------------------------------------------------------
# Chain ordering and cell inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainOrder:
    """Permutation of UE indices defining the recurrence order."""

    order: np.ndarray            # chain position -> UE index
    masters_in_order: np.ndarray  # master AP per chain position

    def __len__(self):
        return len(self.order)


def order_chain(gains: np.ndarray, masters: np.ndarray) -> ChainOrder:
    """Masters ascending; within a master, UEs by descending gain, then index."""
    n = len(masters)
    at_master = gains[np.arange(n), masters]
    order = np.lexsort((np.arange(n), -at_master, masters))
    return ChainOrder(order=order, masters_in_order=masters[order])


def build_inputs(
    gains: np.ndarray,
    ue_xy: np.ndarray,
    cfg: ExperimentConfig,
    pilot_of: np.ndarray | None = None,
    num_pilots: int | None = None,
) -> np.ndarray:
    """Per-UE cell inputs: normalized gain row, normalized position.

    With ``pilot_of`` given, a one-hot pilot indicator of length
    ``num_pilots`` is appended (the pilot-aware input variant).
    """
    feats = [
        (10.0 * np.log10(gains) + GAIN_DB_SHIFT) * GAIN_DB_SCALE,
        ue_xy / cfg.area_side_m,
    ]
    if pilot_of is not None:
        onehot = np.zeros((gains.shape[0], num_pilots))
        onehot[np.arange(gains.shape[0]), pilot_of] = 1.0
        feats.append(onehot)
    return np.concatenate(feats, axis=1)


def lstm_step(params: ModelParams, xi, h_prev, c_prev, direction: str = "fwd"):
    """Single-cell update; exposed for unit checks against the kernels."""
    w, u, b = (
        (params.fwd_w, params.fwd_u, params.fwd_b)
        if direction == "fwd"
        else (params.bwd_w, params.bwd_u, params.bwd_b)
    )
    q = params.hidden_size
    z = w @ xi + u @ h_prev + b
    sig = 1.0 / (1.0 + np.exp(-z[: 3 * q]))
    f, i, o = sig[:q], sig[q : 2 * q], sig[2 * q :]
    g = np.tanh(z[3 * q :])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


# ---------------------------------------------------------------------------
# Forward / backward over a whole chain
# ---------------------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, in chain order."""

    chain: ChainOrder
    xi: np.ndarray               # (K, d) inputs, chain order
    fwd_cache: tuple             # kernel caches, forward direction
    bwd_cache: tuple             # kernel caches, reversed direction
    agg: np.ndarray              # summed hidden states, chain order
    fc_acts: list                # activations entering each fc layer
    probs: np.ndarray            # (K, L) outputs, UE order


def model_forward(
    params: ModelParams, inputs: np.ndarray, chain: ChainOrder, backend=None
) -> ForwardTrace:
    kern = backend or get_backend()
    xi = np.ascontiguousarray(inputs[chain.order])
    xi_rev = np.ascontiguousarray(xi[::-1])
    fwd_cache = kern.lstm_forward(xi @ params.fwd_w.T + params.fwd_b, params.fwd_u)
    bwd_cache = kern.lstm_forward(xi_rev @ params.bwd_w.T + params.bwd_b, params.bwd_u)
    agg = fwd_cache[3] + bwd_cache[3][::-1]

    acts = [agg]
    y = agg
    for w, b in params.fc[:-1]:
        y = np.maximum(y @ w.T + b, 0.0)
        acts.append(y)
    w_out, b_out = params.fc[-1]
    logits = y @ w_out.T + b_out
    out = 1.0 / (1.0 + np.exp(-logits))

    if not np.all(np.isfinite(out)):
        bad = int(np.argwhere(~np.isfinite(out).all(axis=1))[0][0])
        raise NumericalError(f"non-finite activation at chain position {bad}")
    probs = np.empty_like(out)
    probs[chain.order] = out
    return ForwardTrace(chain, xi, fwd_cache, bwd_cache, agg, acts, probs)


def model_backward(
    params: ModelParams, trace: ForwardTrace, dprobs: np.ndarray, backend=None
) -> list:
    """Gradients of sum(probs * dprobs) w.r.t. every parameter.

    ``dprobs`` is the loss gradient at the sigmoid outputs in UE order.
    Returns arrays aligned with ``params.arrays()``.
    """
    if dprobs.shape != trace.probs.shape:
        raise ValueError(f"gradient shape {dprobs.shape} != outputs {trace.probs.shape}")
    kern = backend or get_backend()
    out = trace.probs[trace.chain.order]
    delta = dprobs[trace.chain.order] * out * (1.0 - out)

    fc_grads = []
    for (w, _), act in zip(reversed(params.fc), reversed(trace.fc_acts)):
        fc_grads.append((delta.T @ act, delta.sum(axis=0)))
        delta = delta @ w
        if act is not trace.fc_acts[0]:
            delta = delta * (act > 0.0)
    fc_grads.reverse()
    dagg = delta                                   # (K, q), chain order

    dpre_f, du_f = kern.lstm_backward(params.fwd_u, *trace.fwd_cache, np.ascontiguousarray(dagg))
    dpre_b, du_b = kern.lstm_backward(
        params.bwd_u, *trace.bwd_cache, np.ascontiguousarray(dagg[::-1])
    )
    xi_rev = trace.xi[::-1]
    grads = [
        dpre_f.T @ trace.xi, du_f, dpre_f.sum(axis=0),
        dpre_b.T @ xi_rev, du_b, dpre_b.sum(axis=0),
    ]
    for gw, gb in fc_grads:
        grads.extend((gw, gb))
    return grads


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
        )


def adam_step(
    params: ModelParams,
    grads: list,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam ascent step, in place (the objective is maximized)."""
    state.step += 1
    t = state.step
    for arr, g, m, v in zip(params.arrays(), grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g**2
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        arr += lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------
#
# Layout (little-endian):
#   magic   8s   b"CFMIMO\x01\x00"
#   u32     header word count: q, d, out, n_fc, fc widths..., flags
#   u32[]   the header words
#   u64     parameter count
#   f64[]   parameters, arrays() order, C order within each array
#   u32     crc32 of the parameter bytes
#
# flags bit 0: inputs carry the pilot one-hot block.

_MAGIC = b"CFMIMO\x01\x00"


def save_checkpoint(params: ModelParams, path, pilot_inputs: bool = False) -> None:
    header = [
        params.hidden_size,
        params.input_size,
        params.output_size,
        len(params.fc),
        *params.fc_widths,
        1 if pilot_inputs else 0,
    ]
    flat = np.concatenate([a.ravel() for a in params.arrays()])
    blob = flat.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(struct.pack(f"<{len(header)}I", *header))
        fh.write(struct.pack("<Q", flat.size))
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob)))


def load_checkpoint(path):
    """Returns (ModelParams, pilot_inputs flag); raises CheckpointError."""
    raw = open(path, "rb").read()
    if raw[:8] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic at offset 0")
    off = 8
    try:
        (n_header,) = struct.unpack_from("<I", raw, off)
        off += 4
        header = struct.unpack_from(f"<{n_header}I", raw, off)
        off += 4 * n_header
        (count,) = struct.unpack_from("<Q", raw, off)
        off += 8
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header at offset {off}") from exc
    q, d, out, n_fc = header[:4]
    widths = header[4 : 4 + n_fc]
    flags = header[4 + n_fc]
    if widths[-1] != out:
        raise CheckpointError(f"{path}: final fc width {widths[-1]} != output {out}")

    shapes = [(4 * q, d), (4 * q, q), (4 * q,), (4 * q, d), (4 * q, q), (4 * q,)]
    fan_in = q
    for w in widths:
        shapes.extend([(w, fan_in), (w,)])
        fan_in = w
    expected = sum(int(np.prod(s)) for s in shapes)
    if count != expected:
        raise CheckpointError(
            f"{path}: parameter count {count} != {expected} for header at offset {off}"
        )
    end = off + 8 * count
    if len(raw) < end + 4:
        raise CheckpointError(f"{path}: truncated parameter block at offset {len(raw)}")
    blob = raw[off:end]
    (crc,) = struct.unpack_from("<I", raw, end)
    if crc != zlib.crc32(blob):
        raise CheckpointError(f"{path}: checksum mismatch at offset {end}")
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)

    arrays = []
    pos = 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[pos : pos + size].reshape(s).copy())
        pos += size
    fc = [(arrays[6 + 2 * i], arrays[7 + 2 * i]) for i in range(n_fc)]
    params = ModelParams(*arrays[:6], fc=fc)
    return params, bool(flags & 1)
