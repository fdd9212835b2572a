"""Dense float64 tensors with reverse-mode autodiff.

The graph is define-by-run: every op records its parents and a backward
closure on the output tensor, so the graph is rebuilt on each forward pass
and freed afterwards. Sequences here are short (<= 16 steps), which keeps
this cheap. All math is float64 so finite-difference gradient checks stay
meaningful.
"""
from __future__ import annotations

import base64
import json
import os
import tempfile
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointMismatch(CheckpointError):
    """Checkpoint refuses to load against a mismatched vocabulary or kind."""


class Tensor:
    """A value in the computation graph.

    `requires_grad` marks trainable leaves; it propagates to any tensor
    computed from one. `_backward` accumulates into the parents' `.grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def parameter(data, rng: np.random.Generator | None = None, scale_: float | None = None) -> Tensor:
    """Trainable leaf. With `rng`, `data` is a shape and values are uniform(-s, s)."""
    if rng is not None:
        shape = tuple(data)
        if scale_ is None:
            fan_in = shape[0] if shape else 1
            scale_ = 1.0 / np.sqrt(max(1, fan_in))
        data = rng.uniform(-scale_, scale_, size=shape)
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def assert_finite(t: Tensor | np.ndarray, name: str = "tensor") -> None:
    """NaN/Inf detection is explicit, never silent."""
    data = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values in {name}")


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad and not t._parents:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Sum out axes that were broadcast in the forward pass.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _needs_graph(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, _needs_graph(a, b), (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, _needs_graph(a, b), (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _needs_graph(a, b), (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * c)

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def add_scalar(a: Tensor, c: float) -> Tensor:
    out_data = a.data + c

    def bwd(g: np.ndarray) -> None:
        _accum(a, g)

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return Tensor(out_data, _needs_graph(a, b), (a, b), bwd)


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails.
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * out_data * (1.0 - out_data))

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * (1.0 - out_data * out_data))

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g: np.ndarray) -> None:
        _accum(a, g * out_data)

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(a, out_data * (g - inner))

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def tensor_sum(a: Tensor) -> Tensor:
    out_data = np.asarray(a.data.sum())

    def bwd(g: np.ndarray) -> None:
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    parts = list(tensors)
    out_data = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: np.ndarray) -> None:
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return Tensor(out_data, _needs_graph(*parts), tuple(parts), bwd)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    out_data = a.data[:, lo:hi]

    def bwd(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        _accum(a, full)

    return Tensor(out_data, a.requires_grad, (a,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: ids (n,) -> (n, dim). Scatter-add on the way back."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexOutOfRange(f"ids outside [0, {vocab})")
    out_data = table.data[ids]

    def bwd(g: np.ndarray) -> None:
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return Tensor(out_data, table.requires_grad, (table,), bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over unmasked positions.

    logits: (n, vocab); targets: (n,) int ids; mask: (n,) truthy where the
    position counts toward the mean.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    n, vocab = logits.data.shape
    if targets.shape != (n,) or mask.shape != (n,):
        raise ShapeMismatch(f"targets/mask must be ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexOutOfRange(f"targets outside [0, {vocab})")
    count = mask.sum()
    if count == 0:
        raise ValueError("cross_entropy: no unmasked positions")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + logits.data.max(axis=1)
    nll = lse - logits.data[np.arange(n), targets]
    out_data = np.asarray((nll * mask).sum() / count)

    def bwd(g: np.ndarray) -> None:
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(n), targets] -= 1.0
        _accum(logits, (float(g) / count) * probs * mask[:, None])

    return Tensor(out_data, logits.requires_grad, (logits,), bwd)


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every requires_grad tensor reachable from `loss`."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


class SGD:
    """Plain SGD with global-norm gradient clipping and optional momentum."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.0, clip_norm: float = 5.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self._velocity = {name: np.zeros_like(p.data) for name, p in params.items()} if momentum else None

    def zero_grad(self) -> None:
        zero_grads(self.params.values())

    def step(self) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        norm = global_grad_norm(self.params.values())
        factor = 1.0
        if self.clip_norm and norm > self.clip_norm:
            factor = self.clip_norm / norm
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * factor
            if self._velocity is not None:
                v = self._velocity[name]
                v *= self.momentum
                v += g
                g = v
            p.data -= self.lr * g
        return norm


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    epsilon: float = 1e-5,
    max_coords_per_param: int = 0,
    seed: int = 0,
) -> float:
    """Central finite differences vs analytic gradients.

    `f` must rebuild the graph and be deterministic across calls (fix any rng
    inside it). Checks every coordinate unless `max_coords_per_param` > 0, in
    which case that many coordinates are sampled per parameter. Returns the
    max over checked coordinates of |ga - gn| / max(1e-8, |ga| + |gn|).
    """
    zero_grads(params.values())
    loss = f()
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param and n > max_coords_per_param:
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + epsilon
            up = f().item()
            flat[i] = orig - epsilon
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * epsilon)
            ga = analytic[name].reshape(-1)[i]
            err = abs(ga - numeric) / max(1e-8, abs(ga) + abs(numeric))
            worst = max(worst, err)
    return worst


CHECKPOINT_MAGIC = "SEEDLINE-CKPT-1"


def atomic_write_text(path: str, text: str) -> None:
    """Write via temp file + rename so readers never see a partial file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_array(arr: np.ndarray) -> dict:
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(record: dict) -> np.ndarray:
    shape = tuple(record["shape"])
    raw = base64.b64decode(record["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if arr.size != int(np.prod(shape, dtype=np.int64)):
        raise CheckpointError(f"array size {arr.size} does not match shape {shape}")
    return arr.reshape(shape)


def save_checkpoint(path: str, kind: str, params: dict[str, Tensor], meta: dict | None = None) -> None:
    doc = {
        "magic": CHECKPOINT_MAGIC,
        "kind": kind,
        "meta": meta or {},
        "params": {name: _encode_array(p.data) for name, p in params.items()},
    }
    atomic_write_text(path, json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_checkpoint(path: str, expect_kind: str | None = None) -> tuple[str, dict[str, np.ndarray], dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable checkpoint {path}: {err}") from err
    if not isinstance(doc, dict) or doc.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
    kind = doc.get("kind", "")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path} holds a '{kind}' model, expected '{expect_kind}'")
    params = {name: _decode_array(rec) for name, rec in doc["params"].items()}
    return kind, params, doc.get("meta", {})
