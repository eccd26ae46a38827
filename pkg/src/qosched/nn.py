"""Actor and critic networks on top of the MLP kernels, plus checkpoint I/O.

Checkpoint layout (little endian)::

    magic    8 bytes  b"QSCHCKPT"
    version  uint32   CHECKPOINT_VERSION
    count    uint32   number of networks
    per network:
        name_len uint32, name utf-8 bytes
        n_sizes  uint32, sizes uint32[n_sizes]   (input, hidden..., output)
        per layer: W float64[fan_in * fan_out] row-major (fan_in, fan_out),
                   b float64[fan_out]
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import kernels

CHECKPOINT_MAGIC = b"QSCHCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class MLP:
    """ReLU multilayer perceptron with a linear output layer.

    Weights use input-major storage, ``weights[i].shape == (fan_in, fan_out)``,
    and are initialised uniformly in ``+-1/sqrt(fan_in)``.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng()
        self.weights = tuple(
            rng.uniform(-1.0, 1.0, size=(i, o)) / np.sqrt(i)
            for i, o in zip(self.sizes[:-1], self.sizes[1:])
        )
        self.biases = tuple(np.zeros(o) for o in self.sizes[1:])
        self.acts = tuple(np.zeros(o) for o in self.sizes[1:])
        self._deltas = tuple(np.zeros(o) for o in self.sizes[1:])

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Output for ``x``; the returned array is an internal buffer."""
        return kernels.forward(self.weights, self.biases, x, self.acts)

    def backward_update(self, x, dout, lr, max_norm=0.0) -> float:
        """``params += lr * d(objective)/d(params)`` for the last forward pass at ``x``."""
        return kernels.backward_update(self.weights, self.biases, x, self.acts,
                                       np.asarray(dout, dtype=np.float64), lr, max_norm,
                                       self._deltas)

    def gradient(self, x, dout) -> list[tuple[np.ndarray, np.ndarray]]:
        """Explicit per-layer (dW, db) for ``dout`` at ``x``; reference path for tests."""
        hs = [np.asarray(x, dtype=float)]
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = hs[-1] @ W + b
            hs.append(np.maximum(z, 0.0) if i < len(self.weights) - 1 else z)
        d = np.asarray(dout, dtype=float)
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads[i] = (np.outer(hs[i], d), d.copy())
            if i > 0:
                d = (self.weights[i] @ d) * (hs[i] > 0)
        return grads

    def parameters(self):
        for W, b in zip(self.weights, self.biases):
            yield W
            yield b

    def copy_from(self, other: "MLP") -> None:
        if other.sizes != self.sizes:
            raise ValueError("layer sizes differ")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def equal(self, other: "MLP") -> bool:
        return self.sizes == other.sizes and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters()))


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over feasible entries; infeasible entries get exactly zero."""
    if not mask.any():
        raise ValueError("at least one action must be feasible")
    z = np.where(mask, logits, -np.inf)
    z = z - z[mask].max()
    e = np.exp(z)
    return e / e.sum()


class PolicyNetwork(MLP):
    def probs(self, obs: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return masked_softmax(self.forward(obs), mask)

    def log_prob_grad_output(self, probs: np.ndarray, action: int) -> np.ndarray:
        """d log pi(action) / d logits for masked-softmax probabilities."""
        g = -probs.copy()
        g[action] += 1.0
        return g

    def update(self, obs, mask, action, delta, lr, max_norm=0.0) -> float:
        """Policy-gradient ascent step ``theta += lr * delta * grad log pi(action|obs)``."""
        probs = self.probs(obs, mask)
        if not mask[action]:
            raise ValueError(f"action {action} is masked")
        return self.backward_update(obs, delta * self.log_prob_grad_output(probs, action),
                                    lr, max_norm)


class ValueNetwork(MLP):
    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        if sizes[-1] != 1:
            raise ValueError("a value network has a single output")
        super().__init__(sizes, rng)

    def value(self, obs: np.ndarray) -> float:
        return float(self.forward(obs)[0])

    def update(self, obs, delta, lr, max_norm=0.0) -> float:
        """One descent step on ``(target - V(obs))**2`` with the target held fixed.

        ``delta`` must be ``target - V(obs)`` at the current parameters.
        """
        self.forward(obs)
        return self.backward_update(obs, np.array([2.0 * delta]), lr, max_norm)


def save_checkpoint(path: str | Path, nets: Mapping[str, MLP]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(nets)))
        for name, net in nets.items():
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack(f"<I{len(net.sizes)}I", len(net.sizes), *net.sizes))
            for W, b in zip(net.weights, net.biases):
                fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
                fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> dict[str, tuple[tuple[int, ...], list]]:
    """Returns ``name -> (sizes, [(W, b), ...])``."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a scheduler checkpoint")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    off = 16
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + n].decode()
            off += n
            (ns,) = struct.unpack_from("<I", data, off)
            off += 4
            sizes = struct.unpack_from(f"<{ns}I", data, off)
            off += 4 * ns
            layers = []
            for i, o in zip(sizes[:-1], sizes[1:]):
                W = np.frombuffer(data, dtype="<f8", count=i * o, offset=off).reshape(i, o).astype(float)
                off += 8 * i * o
                b = np.frombuffer(data, dtype="<f8", count=o, offset=off).astype(float)
                off += 8 * o
                layers.append((W, b))
            out[name] = (tuple(sizes), layers)
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({e})") from None
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes in checkpoint")
    return out


def restore(net: MLP, sizes, layers) -> None:
    if tuple(sizes) != net.sizes:
        raise CheckpointError(f"checkpoint layer sizes {tuple(sizes)} do not match {net.sizes}")
    for (W, b), dW, db in zip(layers, net.weights, net.biases):
        dW[...] = W
        db[...] = b
