"""Mini-batch training keyed to a monitored validation metric.

The same metric drives three things at once: plateau learning-rate halving,
early stopping, and best-checkpoint selection.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import NUM_CLASSES, SentimentLabel
from .errors import InputError
from .metrics import MetricsReport, evaluate
from .nets import ModelGraph, forward, save_checkpoint, state_snapshot

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class MonitorCriterion(str, enum.Enum):
    WA = "WA"
    UA = "UA"
    NegRecall = "NegRecall"
    PosRecall = "PosRecall"
    NeuRecall = "NeuRecall"

    def value_of(self, rep: MetricsReport) -> float:
        return getattr(rep, _MONITOR_FIELD[self])


_MONITOR_FIELD = {
    MonitorCriterion.WA: "wa",
    MonitorCriterion.UA: "ua",
    MonitorCriterion.NegRecall: "neg_recall",
    MonitorCriterion.PosRecall: "pos_recall",
    MonitorCriterion.NeuRecall: "neu_recall",
}


@dataclass(frozen=True)
class SchedulerConfig:
    factor: float = 0.5
    patience: int = 5
    min_delta: float = 1e-4
    min_lr: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.factor < 1.0:
            raise InputError(f"scheduler factor must lie in (0, 1), got {self.factor}")
        if self.patience < 0 or self.min_lr < 0:
            raise InputError("scheduler patience and min_lr must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    monitor: MonitorCriterion = MonitorCriterion.UA
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    use_scheduler: bool = True

    def __post_init__(self):
        object.__setattr__(self, "monitor", MonitorCriterion(self.monitor))
        if isinstance(self.scheduler, dict):
            object.__setattr__(self, "scheduler", SchedulerConfig(**self.scheduler))
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1 or self.initial_lr <= 0:
            raise InputError("batch_size, max_epochs, early_stop_patience and initial_lr must be positive")
        if self.early_stop_patience < self.scheduler.patience:
            raise InputError("early_stop_patience must be >= scheduler.patience")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["monitor"] = self.monitor.value
        return d


# -- loss and optimiser -----------------------------------------------------------

def cross_entropy(logits, labels):
    """Mean sparse categorical cross-entropy and its gradient w.r.t. the logits."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise InputError(f"labels must lie in [0, {logits.shape[1]})")
    logp = torch.log_softmax(logits, dim=1)
    n = logits.shape[0]
    rows = torch.arange(n)
    loss = -logp[rows, labels].mean()
    grad = logp.exp()
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


@dataclass
class AdamState:
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(parameters: Sequence, gradients: Sequence, state: AdamState, lr: float,
              betas=ADAM_BETAS, eps=ADAM_EPS):
    """Bias-corrected Adam update, applied in place; works on tensors or ndarrays."""
    b1, b2 = betas
    if state.t == 0 and not state.m:
        state.m = [g * 0 for g in gradients]
        state.v = [g * 0 for g in gradients]
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(parameters, gradients)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p -= lr * (state.m[i] / c1) / ((state.v[i] / c2) ** 0.5 + eps)
    return parameters, state


# -- plateau scheduler and early stopping -----------------------------------------

@dataclass(frozen=True)
class PlateauState:
    lr: float
    best: float = -math.inf
    wait: int = 0


def scheduler_step(state: PlateauState, observed_value: float, config: SchedulerConfig) -> PlateauState:
    if observed_value > state.best + config.min_delta:
        return PlateauState(state.lr, observed_value, 0)
    wait = state.wait + 1
    if wait > config.patience:
        return PlateauState(max(state.lr * config.factor, config.min_lr), state.best, 0)
    return PlateauState(state.lr, state.best, wait)


@dataclass(frozen=True)
class StopperState:
    epoch: int = 0
    best: float = -math.inf
    best_epoch: int = 0
    wait: int = 0


def early_stop_step(state: StopperState, observed_value: float, patience: int, min_delta: float = 1e-4):
    """Returns ``(new_state, stop)``; epochs are counted from 1."""
    epoch = state.epoch + 1
    if observed_value > state.best + min_delta:
        return StopperState(epoch, observed_value, epoch, 0), False
    wait = state.wait + 1
    return StopperState(epoch, state.best, state.best_epoch, wait), wait >= patience


# -- training loop --------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    report: MetricsReport
    lr: float


@dataclass
class TrainRun:
    monitor: MonitorCriterion
    epoch: int = 0
    lr: float = 0.0
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_value: float = -math.inf
    checkpoint: Optional[dict] = None

    @property
    def best_report(self) -> MetricsReport:
        return self.history[self.best_epoch - 1].report


def predict(graph: ModelGraph, inputs, batch_size: int = 256) -> np.ndarray:
    logits, _ = forward(graph, inputs, "eval", batch_size)
    return logits.argmax(axis=1)


def _require_all_classes(y, what: str):
    present = set(np.unique(y).tolist())
    for c in range(NUM_CLASSES):
        if c not in present:
            raise InputError(f"{what} set has no {SentimentLabel(c).tag} utterances")


def train(graph: ModelGraph, train_set, validation_set, config: TrainConfig) -> TrainRun:
    """Train ``graph`` in place and leave it holding the best-epoch weights.

    ``train_set`` / ``validation_set`` are ``(inputs, labels)`` pairs.
    """
    x_tr, y_tr = train_set
    x_va, y_va = validation_set
    y_tr = np.asarray(y_tr, dtype=np.int64)
    y_va = np.asarray(y_va, dtype=np.int64)
    if len(y_tr) == 0 or len(y_va) == 0:
        raise InputError("train and validation sets must be non-empty")
    _require_all_classes(y_va, "validation")

    module = graph.module
    dtype = next(module.parameters()).dtype
    x_tr = graph.check_input(torch.as_tensor(np.asarray(x_tr), dtype=dtype))
    y_tr_t = torch.as_tensor(y_tr)
    params = [p for p in module.parameters() if p.requires_grad]

    rng = np.random.default_rng(config.seed)
    graph.dropout_generator.manual_seed(int(config.seed))
    adam = AdamState()
    plateau = PlateauState(config.initial_lr)
    stopper = StopperState()
    run = TrainRun(config.monitor, lr=config.initial_lr)

    n = len(y_tr)
    for epoch in range(1, config.max_epochs + 1):
        module.train(True)
        order = torch.as_tensor(rng.permutation(n))
        lr = plateau.lr
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, yb = x_tr[idx], y_tr_t[idx]
            for p in params:
                p.grad = None
            logits, _ = module(xb, graph.dropout_generator)
            loss, dlogits = cross_entropy(logits.detach(), yb)
            logits.backward(dlogits)
            with torch.no_grad():
                adam_step(params, [p.grad for p in params], adam, lr)
            total += loss * len(idx)
            seen += len(idx)
        module.eval()
        rep = evaluate(y_va, predict(graph, x_va))
        value = config.monitor.value_of(rep)
        run.history.append(EpochRecord(epoch, total / seen, rep, lr))
        run.epoch = epoch
        if value > run.best_value:
            run.best_value = value
            run.best_epoch = epoch
            run.checkpoint = state_snapshot(graph)
        log.debug("epoch %d loss %.4f %s=%.4f lr %.2e", epoch, total / seen, config.monitor.value, value, lr)
        if config.use_scheduler:
            plateau = scheduler_step(plateau, value, config.scheduler)
        run.lr = plateau.lr
        stopper, stop = early_stop_step(stopper, value, config.early_stop_patience, config.scheduler.min_delta)
        if stop:
            break

    module.load_state_dict(run.checkpoint)
    module.eval()
    return run


# -- run directory --------------------------------------------------------------

HISTORY_COLUMNS = ["epoch", "train_loss", "WA", "UA", "neg_recall", "pos_recall", "neu_recall", "lr"]


def write_history(run: TrainRun, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in run.history:
            rep = r.report
            w.writerow([r.epoch, repr(r.train_loss), repr(rep.wa), repr(rep.ua), repr(rep.neg_recall),
                        repr(rep.pos_recall), repr(rep.neu_recall), repr(r.lr)])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_run(run: TrainRun, graph: ModelGraph, directory, config: dict) -> Path:
    """Write config.json, history.csv and best.ckpt into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True), encoding="utf-8")
    write_history(run, directory / "history.csv")
    save_checkpoint(graph, directory / "best.ckpt", run.checkpoint)
    return directory
