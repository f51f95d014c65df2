"""Parameter blocks with shared-handle tying, feed-forward nets and backprop.

Tying is aliasing: two networks that name the same block id read and write
the same ``ParamBlock`` object held by the ``ParamStore``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .numerics import ACTIVATIONS, as_matrix, check_finite, matmul

Grads = dict[str, tuple[np.ndarray, np.ndarray]]


@dataclass
class ParamBlock:
    id: str
    W: np.ndarray  # (out_dim, in_dim)
    b: np.ndarray  # (out_dim, 1)

    @property
    def shape(self) -> tuple[int, int]:
        return self.W.shape


@dataclass
class ParamStore:
    blocks: dict[str, ParamBlock] = field(default_factory=dict)
    velocity: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def add(self, id: str, out_dim: int, in_dim: int) -> ParamBlock:
        if id in self.blocks:
            raise ValueError(f"duplicate parameter block id {id!r}")
        if out_dim <= 0 or in_dim <= 0:
            raise ValueError(f"block {id!r} needs positive dims")
        blk = ParamBlock(id, np.zeros((out_dim, in_dim)), np.zeros((out_dim, 1)))
        self.blocks[id] = blk
        self.velocity[id] = (np.zeros_like(blk.W), np.zeros_like(blk.b))
        return blk

    def __getitem__(self, id: str) -> ParamBlock:
        return self.blocks[id]

    def __contains__(self, id: str) -> bool:
        return id in self.blocks

    def ids(self) -> list[str]:
        return sorted(self.blocks)

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for id in self.ids():
            blk = self.blocks[id]
            out.blocks[id] = ParamBlock(id, blk.W.copy(), blk.b.copy())
            vW, vb = self.velocity[id]
            out.velocity[id] = (vW.copy(), vb.copy())
        return out

    def astype(self, dtype) -> "ParamStore":
        """Copy with every block converted to ``dtype`` (velocity zeroed)."""
        out = ParamStore()
        for id in self.ids():
            blk = self.blocks[id]
            out.blocks[id] = ParamBlock(id, blk.W.astype(dtype), blk.b.astype(dtype))
            out.velocity[id] = (np.zeros_like(out.blocks[id].W), np.zeros_like(out.blocks[id].b))
        return out

    def snapshot(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        return {id: (b.W.copy(), b.b.copy()) for id, b in self.blocks.items()}

    def restore(self, snap: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> None:
        # in-place, so every network aliasing a block sees the restored values
        for id, (W, b) in snap.items():
            self.blocks[id].W[...] = W
            self.blocks[id].b[...] = b

    def reset_velocity(self) -> None:
        for vW, vb in self.velocity.values():
            vW.fill(0.0)
            vb.fill(0.0)

    def equal(self, other: "ParamStore") -> bool:
        """Bit-level equality of every parameter block."""
        if self.ids() != other.ids():
            return False
        return all(
            np.array_equal(self[i].W, other[i].W) and np.array_equal(self[i].b, other[i].b)
            for i in self.ids()
        )


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str
    param_id: str

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError("layer dims must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class Network:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer dims do not chain: {a.param_id} outputs {a.out_dim}, "
                    f"{b.param_id} expects {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def param_ids(self) -> set[str]:
        return {l.param_id for l in self.layers}


def forward(net: Network, store: ParamStore, x) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run ``x`` (in_dim, batch) through ``net``.

    Returns the output and a cache holding the input and every post-activation,
    which is all the backward pass needs since both activation derivatives are
    expressible in terms of their outputs.
    """
    a = as_matrix(x)
    if a.shape[0] != net.in_dim:
        raise ValueError(f"input has {a.shape[0]} rows, network expects {net.in_dim}")
    cache = [a]
    for layer in net.layers:
        blk = store[layer.param_id]
        if blk.shape != (layer.out_dim, layer.in_dim):
            raise ValueError(f"block {layer.param_id} has shape {blk.shape}")
        act, _ = ACTIVATIONS[layer.activation]
        a = act(matmul(blk.W, a) + blk.b)
        cache.append(a)
    return a, cache


def backward(net: Network, store: ParamStore, cache: list[np.ndarray], loss_grad,
             grads: Grads | None = None) -> Grads:
    """Exact gradients of a scalar loss given dLoss/dOutput.

    Contributions for a block id that appears more than once (in this net or
    across calls sharing ``grads``) are summed.
    """
    if len(cache) != len(net.layers) + 1:
        raise ValueError("cache does not match network depth")
    delta_a = as_matrix(loss_grad)
    if delta_a.shape != cache[-1].shape:
        raise ValueError(f"loss gradient shape {delta_a.shape} != output {cache[-1].shape}")
    grads = {} if grads is None else grads
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        blk = store[layer.param_id]
        _, deriv = ACTIVATIONS[layer.activation]
        delta_z = delta_a * deriv(cache[i + 1])
        dW = matmul(delta_z, cache[i].T)
        db = delta_z.sum(axis=1, keepdims=True)
        if layer.param_id in grads:
            gW, gb = grads[layer.param_id]
            grads[layer.param_id] = (gW + dW, gb + db)
        else:
            grads[layer.param_id] = (dW, db)
        if i:
            delta_a = matmul(blk.W.T, delta_z)
    return grads


def add_grads(into: Grads, other: Mapping[str, tuple[np.ndarray, np.ndarray]],
              scale: float = 1.0) -> Grads:
    for id, (dW, db) in other.items():
        if id in into:
            gW, gb = into[id]
            into[id] = (gW + scale * dW, gb + scale * db)
        else:
            into[id] = (scale * dW, scale * db)
    return into


def _central_diff(work: ParamStore, id: str, which: int, k: int, loss, eps: float) -> float:
    arr = (work[id].W, work[id].b)[which].reshape(-1)
    orig = arr[k]
    step = arr.dtype.type(eps)
    hi, lo = orig + step, orig - step
    arr[k] = hi
    lp = loss(work)
    arr[k] = lo
    lm = loss(work)
    arr[k] = orig
    return float((lp - lm) / (hi - lo))


def grad_check(store: ParamStore, loss: Callable[[ParamStore], float], grads: Grads,
               eps: float = 1e-6, ids: Iterable[str] | None = None,
               refine: float | None = 1e-6) -> float:
    """Max relative error between ``grads`` and central differences of ``loss``.

    ``loss`` is called with a working copy of ``store`` in which one
    coordinate at a time is nudged by +-eps. Coordinates whose float64
    estimate disagrees by more than ``refine`` are re-estimated with the copy
    held in ``np.longdouble``: for gradients near 1e-8 the float64 difference
    quotient is dominated by cancellation. ``refine=None`` disables this.
    Blocks missing from ``grads`` have zero analytic gradient.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def rel(a, n):
        return abs(a - n) / max(abs(a), abs(n), 1e-8)

    work = store.clone()
    wide = None
    worst = 0.0
    for id in (work.ids() if ids is None else ids):
        blk = work[id]
        zero = (np.zeros(blk.W.shape), np.zeros(blk.b.shape))
        for which, analytic in enumerate(grads.get(id, zero)):
            an = np.asarray(analytic, dtype=np.float64).reshape(-1)
            for k in range(an.size):
                err = rel(an[k], _central_diff(work, id, which, k, loss, eps))
                if refine is not None and err > refine:
                    if wide is None:
                        wide = store.astype(np.longdouble)
                    err = rel(an[k], _central_diff(wide, id, which, k, loss, eps))
                worst = max(worst, err)
    return worst


@dataclass
class Corruptor:
    """Masking noise: each coordinate is zeroed with probability ``level``."""

    level: float
    rng: np.random.Generator

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError("corruption level must lie in [0, 1]")

    def mask(self, shape) -> np.ndarray:
        if self.level == 0.0:
            return np.ones(shape)
        return (self.rng.random(shape) >= self.level).astype(np.float64)

    def corrupt(self, x: np.ndarray) -> np.ndarray:
        # survivors are kept as-is, no rescaling
        return x * self.mask(x.shape)


def init_params(store: ParamStore, rng: np.random.Generator) -> None:
    """Uniform fan-based init for every W, zero biases, in sorted id order."""
    for id in store.ids():
        blk = store[id]
        out_dim, in_dim = blk.shape
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        blk.W[...] = rng.uniform(-bound, bound, size=blk.shape)
        blk.b.fill(0.0)
    store.reset_velocity()
    for blk in store.blocks.values():
        check_finite(blk.W, f"weights of {blk.id}")
