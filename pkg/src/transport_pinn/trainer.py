"""Adam, step-decay scheduling and gradient-statistics loss balancing."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape
from .mlp import NetworkConfig, init_parameters
from .physics import CollocationGrid, LossWeights, ProblemSpec, compute_losses, total_loss

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; carries the history up to that epoch."""

    def __init__(self, message, history, store):
        super().__init__(message)
        self.history = history
        self.store = store


class DegenerateLossError(ValueError):
    """A loss term has an all-zero gradient, so its balance ratio is undefined."""


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")


def adam_step(store: ParameterStore, config: AdamConfig) -> None:
    """One bias-corrected Adam update of ``store.values`` from ``store.gradient``."""
    g = store.gradient
    if config.m is None:
        config.m = np.zeros_like(store.values)
        config.v = np.zeros_like(store.values)
    config.step += 1
    config.m *= config.beta1
    config.m += (1.0 - config.beta1) * g
    config.v *= config.beta2
    config.v += (1.0 - config.beta2) * g * g
    m_hat = config.m / (1.0 - config.beta1**config.step)
    v_hat = config.v / (1.0 - config.beta2**config.step)
    store.values -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_hat)


@dataclass(frozen=True)
class SchedulerConfig:
    step_size: int = 750
    gamma: float = 0.95

    def __post_init__(self):
        if self.step_size < 1:
            raise ValueError("step_size must be a positive integer")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")

    def rate(self, initial: float, epoch: int) -> float:
        return initial * self.gamma ** (epoch // self.step_size)


@dataclass
class BalanceState:
    lambda_i: float = 1.0
    lambda_b: float = 1.0
    alpha: float = 0.9
    update_period: int = 10

    def __post_init__(self):
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must lie in [0, 1)")
        if self.update_period < 1:
            raise ValueError("update_period must be a positive integer")


def compute_balance_weights(grad_ge, *grads) -> tuple[float, ...]:
    """max|∇L_G| / mean|∇L_i| for every other loss gradient."""
    top = float(np.max(np.abs(grad_ge)))
    out = []
    for g in grads:
        avg = float(np.mean(np.abs(g)))
        if avg == 0.0:
            raise DegenerateLossError("mean absolute gradient is zero")
        out.append(top / avg)
    return tuple(out)


def update_balance(state: BalanceState, lambda_hat_i: float, lambda_hat_b: float) -> None:
    """Moving average toward the fresh ratios: λ ← (1 − α) λ + α λ̂."""
    for hat in (lambda_hat_i, lambda_hat_b):
        if not (np.isfinite(hat) and hat > 0):
            raise ValueError(f"balance ratio must be finite and positive, got {hat}")
    a = state.alpha
    state.lambda_i = (1.0 - a) * state.lambda_i + a * lambda_hat_i
    state.lambda_b = (1.0 - a) * state.lambda_b + a * lambda_hat_b


@dataclass
class EpochRecord:
    epoch: int
    loss_ge: float
    loss_ic: float
    loss_bc: float
    total: float
    lambda_i: float
    lambda_b: float
    lr: float
    wall_time: float


HISTORY_COLUMNS = [f.name for f in fields(EpochRecord)]


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epochs must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for r in self.records:
                writer.writerow([repr(getattr(r, c)) for c in HISTORY_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "TrainingHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        hist = cls()
        for row in rows:
            hist.append(EpochRecord(int(row["epoch"]), *(float(row[c]) for c in HISTORY_COLUMNS[1:])))
        return hist


@dataclass
class TrainConfig:
    epochs: int = 2500
    learning_rate: float = 0.005
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    balance: bool = True
    alpha: float = 0.9
    update_period: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8


def relative_error(rho_pred, rho_ref) -> float:
    """‖pred − ref‖₂ / ‖ref‖₂."""
    pred = np.asarray(rho_pred, dtype=np.float64)
    ref = np.asarray(rho_ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError("prediction and reference must have equal shapes")
    norm = np.linalg.norm(ref)
    if norm == 0.0:
        raise ValueError("reference has zero norm")
    return float(np.linalg.norm(pred - ref) / norm)


def _backward_into(loss, store: ParameterStore) -> np.ndarray:
    store.zero_grad()
    ad.backward(loss, store)
    return store.gradient.copy()


def train(
    spec: ProblemSpec,
    grid: CollocationGrid,
    net_config: NetworkConfig,
    config: TrainConfig,
    store: ParameterStore | None = None,
    callback: Callable[[int, ParameterStore], None] | None = None,
) -> tuple[ParameterStore, TrainingHistory]:
    """Full-batch training of the weighted PINN loss.

    Each epoch evaluates all three losses on one tape, refreshes the balance
    weights every ``update_period`` epochs (from separate per-term gradients,
    combined linearly afterwards), takes one Adam step and advances the
    scheduler.  ``callback(epoch, store)`` runs after each step.
    """
    if store is None:
        store = init_parameters(net_config)
    adam = AdamConfig(config.learning_rate, config.beta1, config.beta2, config.eps_hat)
    balance = BalanceState(alpha=config.alpha, update_period=config.update_period)
    history = TrainingHistory()
    start = time.perf_counter()

    for epoch in range(config.epochs):
        adam.learning_rate = config.scheduler.rate(config.learning_rate, epoch)
        with Tape():
            ge, ic, bc = compute_losses(store, net_config, grid, spec)
            values = (ge.item(), ic.item(), bc.item())
            if not all(np.isfinite(values)):
                raise TrainingAborted(f"non-finite loss at epoch {epoch}: {values}", history, store)
            if config.balance and epoch % balance.update_period == 0:
                g_ge = _backward_into(ge, store)
                g_ic = _backward_into(ic, store)
                g_bc = _backward_into(bc, store)
                try:
                    update_balance(balance, *compute_balance_weights(g_ge, g_ic, g_bc))
                except DegenerateLossError as exc:
                    log.warning("epoch %d: %s; keeping previous weights", epoch, exc)
                store.gradient[:] = g_ge + balance.lambda_i * g_ic + balance.lambda_b * g_bc
            else:
                weights = LossWeights(1.0, balance.lambda_i, balance.lambda_b)
                if not config.balance:
                    weights = LossWeights()
                _backward_into(total_loss(ge, ic, bc, weights), store)
        lam_i = balance.lambda_i if config.balance else 1.0
        lam_b = balance.lambda_b if config.balance else 1.0
        total = values[0] + lam_i * values[1] + lam_b * values[2]
        history.append(
            EpochRecord(epoch, *values, total, lam_i, lam_b, adam.learning_rate, time.perf_counter() - start)
        )
        adam_step(store, adam)
        if callback is not None:
            callback(epoch, store)
        if epoch % 100 == 0:
            log.info("epoch %d total %.4e (ge %.3e ic %.3e bc %.3e)", epoch, total, *values)
    return store, history
