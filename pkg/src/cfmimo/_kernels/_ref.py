"""Pure-numpy sequence kernels: reference implementation and fallback.

Gate blocks are stacked row-wise in the order forget, input, output,
candidate, so one matrix-vector product per step covers all four gates.
The compiled twin in ``_fast.pyx`` implements the same two entry points.
"""

import numpy as np

NAME = "pure"


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(pre, recur):
    """Run one direction over a chain.

    pre   (T, 4q): input projections plus bias, per position.
    recur (4q, q): recurrent weights.
    Returns (gates, cell, tanh_cell, hidden), each (T, 4q) or (T, q),
    everything the backward pass needs.
    """
    steps, four_q = pre.shape
    q = four_q // 4
    gates = np.empty((steps, four_q))
    cell = np.empty((steps, q))
    tanh_cell = np.empty((steps, q))
    hidden = np.empty((steps, q))
    h_prev = np.zeros(q)
    c_prev = np.zeros(q)
    for t in range(steps):
        z = pre[t] + recur @ h_prev
        z[3 * q :] = np.tanh(z[3 * q :])
        z[: 3 * q] = _sigmoid(z[: 3 * q])
        gates[t] = z
        f, i, o, g = z[:q], z[q : 2 * q], z[2 * q : 3 * q], z[3 * q :]
        c = f * c_prev + i * g
        cell[t] = c
        tanh_cell[t] = np.tanh(c)
        hidden[t] = o * tanh_cell[t]
        h_prev = hidden[t]
        c_prev = c
    return gates, cell, tanh_cell, hidden


def lstm_backward(recur, gates, cell, tanh_cell, hidden, dhidden):
    """Backpropagate through time for one direction.

    dhidden (T, q) is the loss gradient arriving at each hidden state from
    outside the recurrence. Returns (dpre, drecur): gradients w.r.t. the
    pre-activations (from which input-weight and bias gradients follow) and
    the recurrent matrix.
    """
    steps, q = dhidden.shape
    dpre = np.empty((steps, 4 * q))
    dh_carry = np.zeros(q)
    dc_carry = np.zeros(q)
    for t in range(steps - 1, -1, -1):
        f = gates[t, :q]
        i = gates[t, q : 2 * q]
        o = gates[t, 2 * q : 3 * q]
        g = gates[t, 3 * q :]
        c_prev = cell[t - 1] if t > 0 else np.zeros(q)
        dh = dhidden[t] + dh_carry
        do = dh * tanh_cell[t]
        dc = dc_carry + dh * o * (1.0 - tanh_cell[t] ** 2)
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        dc_carry = dc * f
        row = dpre[t]
        row[:q] = df * f * (1.0 - f)
        row[q : 2 * q] = di * i * (1.0 - i)
        row[2 * q : 3 * q] = do * o * (1.0 - o)
        row[3 * q :] = dg * (1.0 - g**2)
        dh_carry = recur.T @ row
    # initial hidden state is zero, so step 0 contributes nothing here
    drecur = dpre[1:].T @ hidden[:-1] if steps > 1 else np.zeros_like(recur)
    return dpre, drecur
