"""Mini-batch training with early stopping, and the fitness mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor_engine as te
from .phenotype import ArchGraph

FITNESS_EPS = 1e-12


# -- optimizers ---------------------------------------------------------------

class Optimizer:
    """Base class; subclasses implement ``_update`` for a single tensor."""

    kind = ""

    def __init__(self, lr=1e-3):
        self.lr = lr
        self.t = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        new = dict(params)
        for key, g in grads.items():
            p = params[key]
            if g.shape != p.shape:
                raise ValueError(f"gradient {key} has shape {g.shape}, parameter {p.shape}")
            new[key] = self._update(key, p, g)
        return new

    def _slot(self, key, name, like):
        slots = self.state.setdefault(key, {})
        if name not in slots:
            slots[name] = np.zeros_like(like)
        return slots[name]


class SGD(Optimizer):
    kind = "SGD"

    def _update(self, key, p, g):
        return p - self.lr * g


class Adam(Optimizer):
    kind = "ADAM"

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def _update(self, key, p, g):
        m = self._slot(key, "m", p)
        v = self._slot(key, "v", p)
        m *= self.beta1
        m += (1 - self.beta1) * g
        v *= self.beta2
        v += (1 - self.beta2) * (g * g)
        m_hat = m / (1 - self.beta1 ** self.t)
        v_hat = v / (1 - self.beta2 ** self.t)
        return p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSProp(Optimizer):
    kind = "RMSPROP"

    def __init__(self, lr=1e-3, rho=0.9, eps=1e-8):
        super().__init__(lr)
        self.rho, self.eps = rho, eps

    def _update(self, key, p, g):
        s = self._slot(key, "s", p)
        s *= self.rho
        s += (1 - self.rho) * (g * g)
        return p - self.lr * g / (np.sqrt(s) + self.eps)


class Adagrad(Optimizer):
    kind = "ADAGRAD"

    def __init__(self, lr=1e-3, eps=1e-8):
        super().__init__(lr)
        self.eps = eps

    def _update(self, key, p, g):
        s = self._slot(key, "s", p)
        s += g * g
        return p - self.lr * g / (np.sqrt(s) + self.eps)


_OPTIMIZERS = {cls.kind: cls for cls in (Adam, SGD, RMSProp, Adagrad)}


def make_optimizer(kind: str, lr: float = 1e-3) -> Optimizer:
    try:
        return _OPTIMIZERS[kind.upper()](lr)
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}") from None


def optimizer_step(opt: Optimizer, params: dict, grads: dict) -> dict:
    return opt.step(params, grads)


# -- training -----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 1000
    patience: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-3
    precision: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("need 0 < patience < max_epochs")
        if self.precision not in te.DTYPES:
            raise ValueError(f"precision must be one of {sorted(te.DTYPES)}")


@dataclass
class TrainResult:
    params: dict = field(repr=False)
    history: list[tuple[int, float, float]]
    stopped_epoch: int
    best_epoch: int
    best_val_mse: float
    diverged: bool = False

    def history_csv(self) -> str:
        rows = ["epoch,train_mse,val_mse"]
        rows += [f"{e},{tr!r},{va!r}" for e, tr, va in self.history]
        return "\n".join(rows) + "\n"


def evaluate_mse(graph: ArchGraph, params, x: np.ndarray, y: np.ndarray,
                 batch_size: int = 16) -> float:
    """Pixel MSE over a whole split, accumulated in fixed batch order."""
    if len(x) == 0:
        raise ValueError("empty evaluation split")
    total = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, len(x), batch_size):
            out, tape = te.forward(graph, params, x[start:start + batch_size])
            tape.release()
            diff = out.astype(np.float64) - y[start:start + batch_size]
            total += float(np.sum(diff * diff))
    return total / y.size


def _copy(params):
    return {k: v.copy() for k, v in params.items()}


def train(graph: ArchGraph, dataset, cfg: TrainConfig, optimizer: str = "ADAM",
          params=None, validation_fn=None) -> TrainResult:
    """Fit ``graph`` on ``dataset.train``; stop on validation patience.

    ``validation_fn(params, epoch) -> float`` replaces the validation pass
    when given (used to script early-stopping scenarios).  The returned
    parameters are those of the best validation epoch.
    """
    dtype = te.DTYPES[cfg.precision]
    x_tr, y_tr = dataset.arrays("train", dtype)
    x_va, y_va = dataset.arrays("validation", dtype)
    if len(x_tr) == 0 or (validation_fn is None and len(x_va) == 0):
        raise ValueError("dataset needs nonempty train and validation splits")
    if params is None:
        params = te.init_params(graph, cfg.seed, cfg.precision)
    te.check_params(graph, params)
    opt = make_optimizer(optimizer, cfg.learning_rate)
    shuffle = np.random.default_rng([cfg.seed, 1])

    history = []
    best_val, best_epoch, best_params = math.inf, 0, _copy(params)
    stale, diverged, epoch = 0, False, 0
    n = len(x_tr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                out, tape = te.forward(graph, params, x_tr[idx])
                loss, grad = te.mse_loss(out, y_tr[idx])
                params = opt.step(params, te.backward(tape, grad))
                total += loss * len(idx)
        train_mse = total / n
        if validation_fn is not None:
            val = float(validation_fn(params, epoch))
        else:
            val = evaluate_mse(graph, params, x_va, y_va)
        history.append((epoch, train_mse, val))
        if not (math.isfinite(val) and math.isfinite(train_mse)):
            diverged = True
            break
        if val < best_val:
            best_val, best_epoch, best_params, stale = val, epoch, _copy(params), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best_params, history, epoch, best_epoch, best_val, diverged)


def fitness(validation_mse: float, diverged: bool = False) -> float:
    """1 / (validation MSE + 1e-12); 0 for diverged or non-finite runs."""
    if diverged or not math.isfinite(validation_mse):
        return 0.0
    return 1.0 / (validation_mse + FITNESS_EPS)
