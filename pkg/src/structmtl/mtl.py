"""Main network trained jointly with an input denoising AE and an output AE.

The input AE's encoder layers are the first ``k_in`` layers of the main
network and the output AE's decoder layers are its last ``k_out`` layers; the
shared layers are literally the same parameter blocks. Block ids are
``<group>.<n>`` with group one of ``cin, din, s, cout, dout``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import FULL, Dataset
from .network import (Corruptor, Grads, LayerSpec, Network, ParamStore, add_grads,
                      backward, forward)
from .numerics import NumericError, check_finite, make_rng, mse, mse_grad

GROUPS = ("cin", "din", "s", "cout", "dout")
MODES = ("mlp", "mlp_in", "mlp_out", "mlp_in_out")


def group_of(block_id: str) -> str:
    return block_id.split(".", 1)[0]


@dataclass(frozen=True)
class FrameworkSpec:
    """Main-network layer sizes plus how many layers each AE shares.

    ``dims`` lists K+1 sizes from input to output.
    """

    dims: tuple[int, ...] = (2500, 1025, 512, 64, 136)
    k_in: int = 1
    k_out: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 2 or min(self.dims) <= 0:
            raise ValueError("dims must hold at least two positive sizes")
        if self.k_in < 0 or self.k_out < 0:
            raise ValueError("k_in and k_out must be non-negative")
        if self.k_in + self.k_out >= self.K:
            raise ValueError(
                f"k_in + k_out must be smaller than the number of main layers "
                f"({self.k_in} + {self.k_out} >= {self.K})"
            )

    @property
    def K(self) -> int:
        return len(self.dims) - 1

    @property
    def code_in_dim(self) -> int:
        return self.dims[self.k_in]

    @property
    def code_out_dim(self) -> int:
        return self.dims[self.K - self.k_out]


@dataclass
class Framework:
    spec: FrameworkSpec
    main: Network
    in_ae: Network | None
    out_ae: Network | None
    store: ParamStore
    corruptor: Corruptor

    def group_ids(self, *groups: str) -> list[str]:
        return [i for i in self.store.ids() if group_of(i) in groups]

    def predict(self, X) -> np.ndarray:
        return forward(self.main, self.store, X)[0]


def build_framework(spec: FrameworkSpec, corruption: float = 0.2,
                    rng: np.random.Generator | None = None) -> Framework:
    """Register all blocks and wire the three networks (weights left at zero)."""
    d, K = spec.dims, spec.K
    store = ParamStore()
    main = []
    for i in range(1, K + 1):
        if i <= spec.k_in:
            pid = f"cin.{i}"
        elif i > K - spec.k_out:
            pid = f"dout.{i - (K - spec.k_out)}"
        else:
            pid = f"s.{i - spec.k_in}"
        store.add(pid, d[i], d[i - 1])
        main.append(LayerSpec(d[i - 1], d[i], "tanh" if i == K else "sigmoid", pid))

    in_ae = None
    if spec.k_in:
        dec = []
        for j in range(1, spec.k_in + 1):
            src, dst = d[spec.k_in - j + 1], d[spec.k_in - j]
            store.add(f"din.{j}", dst, src)
            dec.append(LayerSpec(src, dst, "sigmoid", f"din.{j}"))
        in_ae = Network(tuple(main[:spec.k_in]) + tuple(dec))

    out_ae = None
    if spec.k_out:
        enc = []
        for j in range(1, spec.k_out + 1):
            src, dst = d[K - j + 1], d[K - j]
            store.add(f"cout.{j}", dst, src)
            enc.append(LayerSpec(src, dst, "sigmoid", f"cout.{j}"))
        out_ae = Network(tuple(enc) + tuple(main[K - spec.k_out:]))

    rng = make_rng(0) if rng is None else rng
    return Framework(spec, Network(tuple(main)), in_ae, out_ae, store, Corruptor(corruption, rng))


# -- criteria ----------------------------------------------------------------

def _require(fw: Framework, net: str) -> Network:
    n = getattr(fw, net)
    if n is None:
        raise ValueError(f"framework has no {net} (k_{net[:-3]} == 0)")
    return n


def _cols(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim == 1 else a


def _nonempty(a: np.ndarray, what: str) -> np.ndarray:
    if a.shape[1] == 0:
        raise ValueError(f"empty {what} batch")
    return a


def _encoder_input(fw: Framework, X: np.ndarray, corrupt: bool, mask) -> np.ndarray:
    if mask is not None:
        return X * mask
    return fw.corruptor.corrupt(X) if corrupt else X


def j_sup(fw: Framework, X, Y) -> float:
    """Mean supervised cost over a batch of (x, y) columns."""
    X, Y = _nonempty(_cols(X), "supervised"), _cols(Y)
    return mse(fw.predict(X), Y)


def j_in(fw: Framework, X, corrupt: bool = False, mask=None) -> float:
    """Input reconstruction cost; the target is always the clean input."""
    X = _nonempty(_cols(X), "input")
    net = _require(fw, "in_ae")
    return mse(forward(net, fw.store, _encoder_input(fw, X, corrupt, mask))[0], X)


def j_out(fw: Framework, Y) -> float:
    Y = _nonempty(_cols(Y), "label")
    return mse(forward(_require(fw, "out_ae"), fw.store, Y)[0], Y)


def composite_objective(fw: Framework, S=None, F=None, L=None, lam_sup=1.0, lam_in=0.0,
                        lam_out=0.0, mask=None) -> float:
    """Weighted sum of the three criteria, with corruption disabled.

    ``S`` is an ``(X, Y)`` pair, ``F`` an input matrix, ``L`` a label matrix;
    empty or missing terms contribute nothing. ``mask`` freezes a corruption
    pattern for the input term.
    """
    if min(lam_sup, lam_in, lam_out) < 0:
        raise ValueError("importance weights must be non-negative")
    have_s = S is not None and _cols(S[0]).shape[1] > 0
    have_f = F is not None and _cols(F).shape[1] > 0
    have_l = L is not None and _cols(L).shape[1] > 0
    if not (have_s or have_f or have_l):
        raise ValueError("all three batches are empty")
    total = 0.0
    if have_s:
        total += lam_sup * j_sup(fw, *S)
    if have_f and fw.in_ae is not None:
        total += lam_in * j_in(fw, F, mask=mask)
    if have_l and fw.out_ae is not None:
        total += lam_out * j_out(fw, L)
    return total


def _task_grads(net: Network, store: ParamStore, inp, target, scale: float,
                grads: Grads | None = None) -> tuple[float, Grads]:
    out, cache = forward(net, store, inp)
    loss = mse(out, target)
    g = backward(net, store, cache, scale * mse_grad(out, target))
    return loss, g if grads is None else add_grads(grads, g)


def grad_sup(fw, X, Y, scale=1.0):
    return _task_grads(fw.main, fw.store, X, Y, scale)


def grad_in(fw, X, scale=1.0, corrupt=False, mask=None):
    net = _require(fw, "in_ae")
    return _task_grads(net, fw.store, _encoder_input(fw, X, corrupt, mask), X, scale)


def grad_out(fw, Y, scale=1.0):
    return _task_grads(_require(fw, "out_ae"), fw.store, Y, Y, scale)


def grad_composite(fw: Framework, X, Y, lam_sup, lam_in, lam_out, corrupt=False, mask=None):
    """Loss and gradient of the weighted objective on one fully labeled batch.

    Returns ``(losses, grads)`` where ``losses`` holds the unweighted
    (sup, in, out) costs; terms with zero weight are skipped and reported as 0.
    """
    grads: Grads = {}
    l_sup = l_in = l_out = 0.0
    if lam_sup:
        l_sup, grads = _task_grads(fw.main, fw.store, X, Y, lam_sup, grads)
    if lam_in and fw.in_ae is not None:
        l_in, grads = _task_grads(fw.in_ae, fw.store, _encoder_input(fw, X, corrupt, mask),
                                  X, lam_in, grads)
    if lam_out and fw.out_ae is not None:
        l_out, grads = _task_grads(fw.out_ae, fw.store, Y, Y, lam_out, grads)
    return (l_sup, l_in, l_out), grads


# -- schedules and optimizer ---------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Linear ramp from ``start`` to ``end`` over ``ramp_epochs``, then flat."""

    start: float
    end: float
    ramp_epochs: int

    def __call__(self, t: float) -> float:
        if t < 0:
            raise ValueError("epoch index must be non-negative")
        if self.ramp_epochs <= 0:
            return self.end
        f = min(t / self.ramp_epochs, 1.0)
        # this form is exact at both ends and at the midpoint
        return (1.0 - f) * self.start + f * self.end


def schedule_eval(s: Schedule, t: float) -> float:
    return s(t)


@dataclass(frozen=True)
class Schedules:
    sup: Schedule
    in_: Schedule
    out: Schedule

    def at(self, t: int) -> tuple[float, float, float]:
        return self.sup(t), self.in_(t), self.out(t)


def default_schedules(epochs: int, mode: str = "mlp_in_out", ramp_fraction: float = 0.9) -> Schedules:
    ramp = int(round(ramp_fraction * epochs))
    off = Schedule(0.0, 0.0, 0)
    return Schedules(
        sup=Schedule(1.0, 1.0, 0),
        in_=Schedule(1.0, 0.0, ramp) if mode in ("mlp_in", "mlp_in_out") else off,
        out=Schedule(1.0, 0.0, ramp) if mode in ("mlp_out", "mlp_in_out") else off,
    )


@dataclass(frozen=True)
class OptimizerCfg:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    ae_weight_decay: float = 1e-2
    batch_size: int = 10
    epochs: int = 1000

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.ae_weight_decay < 0:
            raise ValueError("ae_weight_decay must be non-negative")


def sgd_step(store: ParamStore, grads: Grads, lr: float, momentum: float,
             decay_ids=frozenset(), decay: float = 0.0) -> None:
    """Classical momentum; L2 decay only on weight matrices of ``decay_ids``."""
    for id, (gW, gb) in grads.items():
        if id not in store:
            raise KeyError(f"gradient for unknown block {id!r}")
        blk = store[id]
        vW, vb = store.velocity[id]
        step_W = gW + decay * blk.W if id in decay_ids else gW
        vW *= momentum
        vW -= lr * step_W
        vb *= momentum
        vb -= lr * gb
        blk.W += vW
        blk.b += vb
        check_finite(blk.W, f"weights of {id}")
        check_finite(blk.b, f"biases of {id}")


# -- training -----------------------------------------------------------------

@dataclass
class PackedData:
    """Column matrices for fast batching; missing payloads are zero-filled."""

    X: np.ndarray
    Y: np.ndarray
    has_x: np.ndarray
    has_y: np.ndarray

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "PackedData":
        n = len(ds)
        X = np.zeros((ds.d_x, n))
        Y = np.zeros((2 * ds.n_points, n))
        has_x = np.zeros(n, dtype=bool)
        has_y = np.zeros(n, dtype=bool)
        for i, s in enumerate(ds.samples):
            if s.x is not None:
                X[:, i] = s.x
                has_x[i] = True
            if s.y is not None:
                Y[:, i] = s.y
                has_y[i] = True
        return cls(X, Y, has_x, has_y)

    def __len__(self) -> int:
        return len(self.has_x)


@dataclass
class EpochStats:
    j_sup: float = 0.0
    j_in: float = 0.0
    j_out: float = 0.0
    steps_sup: int = 0
    steps_in: int = 0
    steps_out: int = 0


def train_epoch(fw: Framework, data: Dataset | PackedData, schedules: Schedules,
                opt: OptimizerCfg, t: int, rng: np.random.Generator) -> EpochStats:
    """One shuffled pass; each batch gets up to three sequential steps.

    For the inputs present in a batch the input AE takes a step on the
    weighted, L2-regularized reconstruction cost; for the labels present the
    output AE does the same; on the fully labeled part the whole weighted
    objective takes a joint step. Reported costs are batch means of the
    unweighted criteria, measured before each step.
    """
    pk = data if isinstance(data, PackedData) else PackedData.from_dataset(data)
    if len(pk) == 0:
        raise ValueError("empty training set")
    lam_sup, lam_in, lam_out = schedules.at(t)
    in_decay = set(fw.group_ids("cin", "din"))
    out_decay = set(fw.group_ids("cout", "dout"))
    lr, mu, wd = opt.learning_rate, opt.momentum, opt.ae_weight_decay
    stats = EpochStats()
    order = rng.permutation(len(pk))
    for start in range(0, len(pk), opt.batch_size):
        idx = order[start:start + opt.batch_size]
        hx, hy = pk.has_x[idx], pk.has_y[idx]
        if lam_in and fw.in_ae is not None and hx.any():
            X = pk.X[:, idx[hx]]
            loss, g = grad_in(fw, X, scale=lam_in, corrupt=True)
            sgd_step(fw.store, g, lr, mu, in_decay, lam_in * wd)
            stats.j_in += loss
            stats.steps_in += 1
        if lam_out and fw.out_ae is not None and hy.any():
            Y = pk.Y[:, idx[hy]]
            loss, g = grad_out(fw, Y, scale=lam_out)
            sgd_step(fw.store, g, lr, mu, out_decay, lam_out * wd)
            stats.j_out += loss
            stats.steps_out += 1
        full = idx[hx & hy]
        if full.size:
            X, Y = pk.X[:, full], pk.Y[:, full]
            (l_sup, _, _), g = grad_composite(fw, X, Y, lam_sup, lam_in, lam_out, corrupt=True)
            if g:
                sgd_step(fw.store, g, lr, mu)
            stats.j_sup += l_sup
            stats.steps_sup += 1
    for name in ("sup", "in", "out"):
        n = getattr(stats, f"steps_{name}")
        if n:
            setattr(stats, f"j_{name}", getattr(stats, f"j_{name}") / n)
    for v in (stats.j_sup, stats.j_in, stats.j_out):
        if not math.isfinite(v):
            raise NumericError("non-finite training cost")
    return stats


LOG_COLUMNS = ("epoch", "lam_sup", "lam_in", "lam_out", "train_mse", "valid_mse", "j_in", "j_out")


@dataclass
class EpochRecord:
    epoch: int
    lam_sup: float
    lam_in: float
    lam_out: float
    train_mse: float
    valid_mse: float
    j_in: float
    j_out: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_mse: float = math.inf

    def __len__(self) -> int:
        return len(self.records)

    def rows(self):
        for r in self.records:
            yield [r.epoch] + [repr(float(getattr(r, c))) for c in LOG_COLUMNS[1:]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            w.writerows(self.rows())


def train(fw: Framework, data: Dataset, schedules: Schedules, opt: OptimizerCfg,
          validation: Dataset, seed: int = 0, keep_best: bool = True) -> TrainLog:
    """Run ``opt.epochs`` epochs with validation-based model selection.

    On return the framework holds the snapshot with the lowest validation
    supervised MSE (unless ``keep_best`` is False).
    """
    pk = PackedData.from_dataset(data)
    if len(pk) == 0:
        raise ValueError("empty training set")
    Xv, Yv = validation.full_arrays()
    S = pk.has_x & pk.has_y
    Xs, Ys = pk.X[:, S], pk.Y[:, S]
    rng = make_rng((seed, 1))
    log = TrainLog()
    best = None
    for t in range(opt.epochs):
        lam = schedules.at(t)
        stats = train_epoch(fw, pk, schedules, opt, t, rng)
        train_mse = j_sup(fw, Xs, Ys) if Xs.shape[1] else math.nan
        valid_mse = j_sup(fw, Xv, Yv)
        log.records.append(EpochRecord(t, *lam, train_mse, valid_mse, stats.j_in, stats.j_out))
        if valid_mse < log.best_valid_mse:
            log.best_valid_mse, log.best_epoch = valid_mse, t
            best = fw.store.snapshot()
    if keep_best and best is not None:
        fw.store.restore(best)
    return log
