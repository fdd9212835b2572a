"""LSTM cell and training plumbing shared by the VAE and the baseline LM.

Both models use the exact same cell so their architectural difference is
confined to how they produce tokens (latent-vector decoding vs next-token
prediction).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .corpus import PAD, TokenizedLine


class NonPositiveTemperature(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 0.5
    batch_size: int = 16
    seed: int = 0
    clip_norm: float = 5.0
    momentum: float = 0.9


class LSTMCell:
    """Single-layer LSTM; gates packed as [input, forget, cell, output]."""

    def __init__(self, w_x: nm.Tensor, w_h: nm.Tensor, b: nm.Tensor, d_hidden: int):
        self.w_x = w_x
        self.w_h = w_h
        self.b = b
        self.d_hidden = d_hidden

    @classmethod
    def create(cls, params: dict[str, nm.Tensor], prefix: str, d_in: int, d_hidden: int, rng: np.random.Generator) -> "LSTMCell":
        params[f"{prefix}.w_x"] = nm.parameter((d_in, 4 * d_hidden), rng)
        params[f"{prefix}.w_h"] = nm.parameter((d_hidden, 4 * d_hidden), rng)
        b = np.zeros(4 * d_hidden)
        b[d_hidden : 2 * d_hidden] = 1.0  # forget-gate bias starts open
        params[f"{prefix}.b"] = nm.Tensor(b, requires_grad=True)
        return cls.bind(params, prefix, d_hidden)

    @classmethod
    def bind(cls, params: dict[str, nm.Tensor], prefix: str, d_hidden: int) -> "LSTMCell":
        return cls(params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"], d_hidden)

    def step(self, x: nm.Tensor, h: nm.Tensor, c: nm.Tensor) -> tuple[nm.Tensor, nm.Tensor]:
        gates = nm.matmul(x, self.w_x) + nm.matmul(h, self.w_h) + self.b
        d = self.d_hidden
        i = nm.sigmoid(nm.slice_cols(gates, 0, d))
        f = nm.sigmoid(nm.slice_cols(gates, d, 2 * d))
        g = nm.tanh(nm.slice_cols(gates, 2 * d, 3 * d))
        o = nm.sigmoid(nm.slice_cols(gates, 3 * d, 4 * d))
        c_next = f * c + i * g
        h_next = o * nm.tanh(c_next)
        return h_next, c_next

    def zero_state(self, batch: int) -> tuple[nm.Tensor, nm.Tensor]:
        zeros = np.zeros((batch, self.d_hidden))
        return nm.constant(zeros), nm.constant(zeros.copy())


def pad_batch(lines: list[TokenizedLine]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad with PAD to the longest line; returns (ids (B, T), lengths (B,))."""
    lengths = np.array([len(line) for line in lines], dtype=np.int64)
    ids = np.full((len(lines), int(lengths.max())), PAD, dtype=np.int64)
    for row, line in enumerate(lines):
        ids[row, : len(line)] = line.ids
    return ids, lengths


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled minibatch index lists covering range(n)."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield [int(i) for i in order[start : start + batch_size]]


def sample_from_logits(
    logits: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
    forbidden: tuple[int, ...] = (),
    top_k: int = 0,
) -> int:
    """Sample a token id from softmax(logits / temperature).

    `forbidden` ids are masked out entirely. With top_k > 0 only the k most
    likely tokens are eligible (off by default).
    """
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    z = logits.astype(np.float64).copy()
    for idx in forbidden:
        z[idx] = -np.inf
    if top_k > 0 and top_k < z.size:
        cutoff = np.partition(z, -top_k)[-top_k]
        z[z < cutoff] = -np.inf
    z = z / temperature
    z -= z.max()
    probs = np.exp(z)
    probs /= probs.sum()
    return int(rng.choice(probs.size, p=probs))


def argmax_token(logits: np.ndarray, forbidden: tuple[int, ...] = ()) -> int:
    """Greedy pick; ties resolve to the lowest id (np.argmax is first-match)."""
    z = logits.astype(np.float64).copy()
    for idx in forbidden:
        z[idx] = -np.inf
    return int(np.argmax(z))
