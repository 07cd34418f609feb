"""Pure numpy implementations of the hot kernels.

Same signatures and conventions as the compiled ``_kernels`` extension:
inputs are C-contiguous float64, sequences are laid out time-major (T, B, ...),
gate blocks are ordered input, forget, candidate, output.
"""
import numpy as np

BACKEND = "python"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward(x, w_ih, w_hh, b):
    """Run a zero-initialised LSTM over ``x`` of shape (T, B, I).

    Returns ``(hs, cs, gates)``: hidden and cell states of shape (T+1, B, H)
    with index 0 the zero initial state, and activated gates (T, B, 4H).
    """
    T, B, I = x.shape
    H = w_hh.shape[1]
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    # input projections for all steps at once
    xproj = (x.reshape(T * B, I) @ w_ih.T).reshape(T, B, 4 * H)
    for t in range(T):
        a = xproj[t] + hs[t] @ w_hh.T + b
        g = gates[t]
        g[:, :2 * H] = _sigmoid(a[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
        g[:, 3 * H:] = _sigmoid(a[:, 3 * H:])
        c = g[:, H:2 * H] * cs[t] + g[:, :H] * g[:, 2 * H:3 * H]
        cs[t + 1] = c
        hs[t + 1] = g[:, 3 * H:] * np.tanh(c)
    return hs, cs, gates


def lstm_backward(x, w_ih, w_hh, hs, cs, gates, dh_last):
    """Backpropagate ``dh_last`` (B, H), the gradient w.r.t. the final hidden state,
    through every time step. Returns ``(dw_ih, dw_hh, db)``.
    """
    T, B, I = x.shape
    H = w_hh.shape[1]
    da = np.empty((T, B, 4 * H))
    dh = np.array(dh_last, dtype=np.float64)
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, cand, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        d = da[t]
        d[:, :H] = dc * cand * i * (1.0 - i)
        d[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * H:3 * H] = dc * i * (1.0 - cand * cand)
        d[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc = dc * f
        dh = d @ w_hh
    flat = da.reshape(T * B, 4 * H)
    dw_ih = flat.T @ x.reshape(T * B, I)
    dw_hh = flat.T @ hs[:T].reshape(T * B, H)
    db = flat.sum(axis=0)
    return dw_ih, dw_hh, db


def adam_update(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    """In-place Adam step on flat arrays; ``bc1``/``bc2`` are the bias corrections."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
