"""Dense ReLU-MLP kernels: forward pass and fused backprop + SGD step.

Two interchangeable backends are provided.  The numba backend walks the
weight matrices with explicit loops and skips zero activations, which is
where most of the time goes for the sparse, zero-padded scheduler
observations.  The numpy backend is the straightforward BLAS version.

Set ``QOSCHED_NUMBA=0`` in the environment to force the numpy path.  The
choice is made once, at import time.

Both backends share the same calling convention:

``forward(weights, biases, x, acts)``
    ``weights``/``biases`` are tuples of float64 arrays (``W[i]`` has shape
    ``(in, out)``, input-major so that zero inputs skip whole rows); ``acts`` is a tuple of preallocated output buffers, one per
    layer.  Hidden layers are ReLU, the last layer is linear.  Returns
    ``acts[-1]``.

``backward_update(weights, biases, x, acts, dout, lr, max_norm)``
    Backpropagates ``dout`` (gradient of some objective w.r.t. the network
    output, evaluated at the cached ``acts``) and applies
    ``param += lr * scale * grad`` in place, where ``scale`` shrinks the step
    so the global gradient norm does not exceed ``max_norm`` (``max_norm <= 0``
    disables clipping).  Returns the unclipped gradient norm.  ``deltas`` may
    pass preallocated per-layer scratch buffers (numba path only).
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_flag(name, default="1"):
    return os.environ.get(name, default).strip().lower() not in ("0", "false", "no", "off", "")


USE_NUMBA = numba is not None and _env_flag("QOSCHED_NUMBA")


# --------------------------------------------------------------------------
# numpy backend
# --------------------------------------------------------------------------

def forward_numpy(weights, biases, x, acts):
    h = x
    last = len(weights) - 1
    for i in range(last + 1):
        z = h @ weights[i]
        z += biases[i]
        if i < last:
            np.maximum(z, 0.0, out=acts[i])
        else:
            acts[i][:] = z
        h = acts[i]
    return acts[last]


def backward_update_numpy(weights, biases, x, acts, dout, lr, max_norm, deltas=None):
    n = len(weights)
    deltas = [None] * n
    d = np.asarray(dout, dtype=np.float64)
    for i in range(n - 1, -1, -1):
        deltas[i] = d
        if i > 0:
            d = (weights[i] @ d) * (acts[i - 1] > 0.0)
    sq = 0.0
    for i in range(n):
        inp = x if i == 0 else acts[i - 1]
        # ||outer(a, d)||_F^2 + ||d||^2 == ||d||^2 * (||a||^2 + 1)
        sq += float(deltas[i] @ deltas[i]) * (float(inp @ inp) + 1.0)
    norm = np.sqrt(sq)
    scale = lr
    if max_norm > 0.0 and norm > max_norm:
        scale = lr * max_norm / norm
    if scale == 0.0:
        return norm
    for i in range(n):
        inp = x if i == 0 else acts[i - 1]
        W = weights[i]
        W += np.outer(inp, scale * deltas[i])
        b = biases[i]
        b += scale * deltas[i]
    return norm


# --------------------------------------------------------------------------
# numba backend
# --------------------------------------------------------------------------

if numba is not None:
    _jit = numba.njit(cache=True, fastmath=True, nogil=True)

    @_jit
    def _dense_layer(W, b, h, out, relu):
        out[:] = b
        for c in range(h.shape[0]):
            hc = h[c]
            if hc == 0.0:
                continue
            row = W[c]
            for r in range(out.shape[0]):
                out[r] += row[r] * hc
        if relu:
            for r in range(out.shape[0]):
                if out[r] < 0.0:
                    out[r] = 0.0

    @_jit
    def forward_numba(weights, biases, x, acts):
        n = len(weights)
        _dense_layer(weights[0], biases[0], x, acts[0], n > 1)
        for i in range(1, n):
            _dense_layer(weights[i], biases[i], acts[i - 1], acts[i], i < n - 1)
        return acts[n - 1]

    @_jit
    def _backprop_delta(W, d, a_prev, out):
        # out = (W @ d) * (a_prev > 0)
        for c in range(W.shape[0]):
            if a_prev[c] <= 0.0:
                out[c] = 0.0
                continue
            row = W[c]
            acc = 0.0
            for r in range(d.shape[0]):
                acc += row[r] * d[r]
            out[c] = acc

    @_jit
    def _sgd_outer(W, b, d, a, scale):
        for r in range(d.shape[0]):
            b[r] += scale * d[r]
        for c in range(a.shape[0]):
            s = scale * a[c]
            if s == 0.0:
                continue
            row = W[c]
            for r in range(d.shape[0]):
                row[r] += s * d[r]

    @_jit
    def _sqnorm(v):
        s = 0.0
        for j in range(v.shape[0]):
            s += v[j] * v[j]
        return s

    @_jit
    def _backward_update_tuple(weights, biases, x, acts, deltas, lr, max_norm):
        n = len(weights)
        for i in range(n - 1, 0, -1):
            _backprop_delta(weights[i], deltas[i], acts[i - 1], deltas[i - 1])
        sq = _sqnorm(deltas[0]) * (_sqnorm(x) + 1.0)
        for i in range(1, n):
            sq += _sqnorm(deltas[i]) * (_sqnorm(acts[i - 1]) + 1.0)
        norm = np.sqrt(sq)
        scale = lr
        if max_norm > 0.0 and norm > max_norm:
            scale = lr * max_norm / norm
        if scale != 0.0:
            _sgd_outer(weights[0], biases[0], deltas[0], x, scale)
            for i in range(1, n):
                _sgd_outer(weights[i], biases[i], deltas[i], acts[i - 1], scale)
        return norm

    def backward_update_numba(weights, biases, x, acts, dout, lr, max_norm, deltas=None):
        if deltas is None:
            deltas = tuple(np.empty_like(b) for b in biases)
        deltas[-1][:] = dout
        return _backward_update_tuple(weights, biases, x, acts, deltas, float(lr), float(max_norm))

else:  # pragma: no cover
    forward_numba = forward_numpy
    backward_update_numba = backward_update_numpy


if USE_NUMBA:
    forward = forward_numba
    backward_update = backward_update_numba
    BACKEND = "numba"
else:
    forward = forward_numpy
    backward_update = backward_update_numpy
    BACKEND = "numpy"
