"""Optimizers, triangular2 cyclic learning rate, and the training loop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, attack, clean_accuracy, robust_accuracy
from .data import Dataset
from .errors import NonFiniteLossError, NonFiniteStateError, NonFiniteUpdateError
from .model import NeuralODEModel
from .strategy import EpochDraw, Fixed, SolverStrategy, Smoothing, draw, eval_solver, solver_for
from .tableau import named_method

# --- optimizers -------------------------------------------------------------


@dataclass
class OptimizerState:
    """``sgd_momentum``: v <- m v + g, theta <- theta - lr v.
    ``rmsprop``: s <- rho s + (1 - rho) g^2, theta <- theta - lr g / (sqrt(s) + eps).
    """

    kind: str = "sgd_momentum"
    momentum: float = 0.9
    decay: float = 0.99
    eps: float = 1e-8
    buffer: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def optimizer_step(state: OptimizerState, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    if grad.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match theta {theta.shape}")
    if state.buffer is None:
        state.buffer = np.zeros_like(theta)
    if state.kind == "sgd_momentum":
        state.buffer = state.momentum * state.buffer + grad
        update = lr * state.buffer
    else:
        state.buffer = state.decay * state.buffer + (1.0 - state.decay) * grad * grad
        update = lr * grad / (np.sqrt(state.buffer) + state.eps)
    new = theta - update
    if not np.all(np.isfinite(new)):
        raise NonFiniteUpdateError("optimizer produced non-finite parameters")
    return new


# --- learning-rate schedule -------------------------------------------------


@dataclass(frozen=True)
class CyclicLrSchedule:
    """Triangular wave between ``base_lr`` and ``max_lr`` whose amplitude
    halves after every full cycle. Defaults are the MNIST settings."""

    base_lr: float = 1e-5
    max_lr: float = 1e-3
    step_size_up: int = 2000
    step_size_down: int = 2000
    mode: str = "triangular2"

    def __post_init__(self):
        if self.mode != "triangular2":
            raise ValueError("only triangular2 mode is supported")
        if not (self.base_lr > 0 and self.max_lr > 0):
            raise ValueError("learning rates must be positive")
        if self.step_size_up < 1 or self.step_size_down < 1:
            raise ValueError("step sizes must be >= 1")

    @classmethod
    def one_cycle(cls, base_lr: float, max_lr: float, total_iterations: int) -> "CyclicLrSchedule":
        """Single cycle spanning the whole run (half up, half down)."""
        up = max(1, total_iterations // 2)
        return cls(base_lr, max_lr, up, max(1, total_iterations - up))


def lr_at(schedule: CyclicLrSchedule, iteration: int) -> float:
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    total = schedule.step_size_up + schedule.step_size_down
    cycle = math.floor(1 + iteration / total)
    x = 1.0 + iteration / total - cycle
    ratio = schedule.step_size_up / total
    frac = x / ratio if x <= ratio else (x - 1.0) / (ratio - 1.0)
    # ldexp halves the amplitude per cycle and underflows to 0 instead of overflowing
    return schedule.base_lr + math.ldexp((schedule.max_lr - schedule.base_lr) * frac, 1 - cycle)


# --- training loop ----------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    seed: int = 0
    strategy: SolverStrategy = field(default_factory=lambda: Fixed(named_method("midpoint")))
    optimizer: OptimizerState = field(default_factory=lambda: OptimizerState("rmsprop"))
    schedule: CyclicLrSchedule | None = None
    one_cycle: tuple[float, float] | None = (5e-5, 5e-3)  # (base, max) over all iterations
    lr: float = 0.01  # used only when no schedule applies
    adversarial: AttackConfig | None = None
    eval_attack: AttackConfig | None = None
    grad_clip: float | None = None
    eval_batch_size: int = 512
    eval_mode: str = "base"  # "base": nominal solver; "sampled": the epoch's drawn solver

    def __post_init__(self):
        if self.eval_mode not in ("base", "sampled"):
            raise ValueError(f"eval_mode must be 'base' or 'sampled', got {self.eval_mode!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")


@dataclass
class EpochLog:
    epoch: int
    draw: EpochDraw
    lr: float
    train_loss: float
    val_acc: float
    val_robust_acc: float | None
    rhs_calls: int


@dataclass
class TrainResult:
    model: NeuralODEModel
    log: list[EpochLog]
    best_epoch: int

    def log_csv(self) -> str:
        return train_log_to_csv(self.log)


def _rngs(seed: int):
    # independent streams: shuffling, solver draws, training attacks, eval attacks
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def make_schedule(cfg: TrainConfig, total_iterations: int) -> CyclicLrSchedule | None:
    if cfg.schedule is not None:
        return cfg.schedule
    if cfg.one_cycle is not None:
        return CyclicLrSchedule.one_cycle(cfg.one_cycle[0], cfg.one_cycle[1], total_iterations)
    return None


def train(model: NeuralODEModel, data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Train in place on the ``train`` split; return the best-validation copy.

    Each epoch draws one solver from the strategy and uses it for every
    batch (both passes), unless the strategy resamples per batch.
    """
    x_tr, y_tr = data.xy("train")
    x_val, y_val = data.xy("val")
    if len(y_val) == 0:
        x_val, y_val = x_tr, y_tr
    rng_shuffle, rng_solver, rng_adv, rng_eval = _rngs(cfg.seed)
    n_batches = math.ceil(len(y_tr) / cfg.batch_size)
    schedule = make_schedule(cfg, cfg.epochs * n_batches)
    opt = OptimizerState(cfg.optimizer.kind, cfg.optimizer.momentum, cfg.optimizer.decay, cfg.optimizer.eps)
    per_batch = isinstance(cfg.strategy, Smoothing) and cfg.strategy.per_batch
    eval_with = eval_solver(cfg.strategy)

    log: list[EpochLog] = []
    best_acc, best_theta, best_epoch = -1.0, model.theta.copy(), 0
    iteration = 0
    lr = cfg.lr
    for epoch in range(cfg.epochs):
        calls_before = model.rhs_calls
        ep_draw = draw(cfg.strategy, epoch, rng_solver)
        solver = solver_for(cfg.strategy, ep_draw.point)
        order = rng_shuffle.permutation(len(y_tr))
        total_loss = 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            if per_batch and b > 0:
                solver = solver_for(cfg.strategy, draw(cfg.strategy, epoch, rng_solver).point)
            try:
                if cfg.adversarial is not None:
                    xb = attack(model, solver, xb, yb, cfg.adversarial, rng_adv)
                loss, grad = model.loss_and_grad(xb, yb, solver)
            except NonFiniteStateError as exc:
                raise NonFiniteLossError(f"{exc} at epoch {epoch}, batch {b}") from exc
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch}, batch {b}")
            if cfg.grad_clip is not None:
                norm = float(np.linalg.norm(grad))
                if norm > cfg.grad_clip:
                    grad = grad * (cfg.grad_clip / norm)
            if schedule is not None:
                lr = lr_at(schedule, iteration)
            model.theta = optimizer_step(opt, model.theta, grad, lr)
            total_loss += loss * len(idx)
            iteration += 1
        train_calls = model.rhs_calls - calls_before

        if cfg.eval_mode == "sampled":
            eval_with = solver_for(cfg.strategy, ep_draw.point)
        val_acc = clean_accuracy(model, eval_with, x_val, y_val, cfg.eval_batch_size)
        val_robust = None
        if cfg.eval_attack is not None:
            val_robust = robust_accuracy(model, eval_with, x_val, y_val, cfg.eval_attack, rng_eval, cfg.eval_batch_size)
        log.append(EpochLog(epoch, ep_draw, lr, total_loss / len(y_tr), val_acc, val_robust, train_calls))
        if val_acc > best_acc:
            best_acc, best_theta, best_epoch = val_acc, model.theta.copy(), epoch

    best = model.copy()
    best.theta = best_theta
    return TrainResult(best, log, best_epoch)


LOG_COLUMNS = ["epoch", "param0", "param1", "lr", "train_loss", "val_acc", "val_robust_acc"]


def train_log_to_csv(log) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for e in log:
        params = list(e.draw.point.params)
        p0 = repr(params[0]) if len(params) > 0 else ""
        p1 = repr(params[1]) if len(params) > 1 else ""
        robust = "" if e.val_robust_acc is None else repr(e.val_robust_acc)
        writer.writerow([e.epoch, p0, p1, repr(e.lr), repr(e.train_loss), repr(e.val_acc), robust])
    return buf.getvalue()
