"""Adam minibatch training and stratified k-fold cross-validation."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import grad
from .dataset import Dataset, batches, stratified_folds
from .metrics import EvalReport, evaluate
from .model import Model, ModelConfig, as_tape_params, forward, init_params, save_model

log = logging.getLogger(__name__)

THREADS_ENV = "HDRCLASS_THREADS"


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    batch_size: int = 128
    epochs: int = 200
    seed: int = 0
    fold_count: int = 10
    early_stop: int | None = None

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.early_stop is not None and self.early_stop < 1:
            raise ValueError("early_stop patience must be >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update. Returns new (params, state); inputs are not mutated."""
    if set(grads) != set(params):
        raise grad.ShapeMismatch("gradient names do not match parameters")
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1 - b1**t, 1 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise grad.ShapeMismatch(f"{k}: param {p.shape}, grad {g.shape}, moment {state.m[k].shape}")
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        new_p[k] = p - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps_adam)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


def loss_and_grads(params, x, y, config: ModelConfig, train: bool, rng) -> tuple[float, dict[str, np.ndarray]]:
    tape = grad.Tape()
    probs = forward(x, as_tape_params(params, tape), config, train=train, rng=rng)
    loss = grad.cross_entropy(probs, y)
    return float(loss.value), tape.backward(loss)


@dataclass
class EpochLog:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None = None


@dataclass
class TrainResult:
    model: Model
    history: list[EpochLog] = field(default_factory=list)
    first_batch_loss: float = math.nan


def train(
    dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_idx=None,
    test_idx=None,
    log_path=None,
    out_path=None,
) -> TrainResult:
    """Fit a fresh model on ``train_idx`` (default: all samples).

    Loss and accuracy per epoch are averaged over the training batches as
    seen (dropout active). If ``test_idx`` is given it is evaluated after
    every epoch; early stopping watches that accuracy, or the training loss
    when there is no test set.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if model_config.t != dataset.n_classes:
        raise ValueError(f"model_config.t={model_config.t} but dataset has {dataset.n_classes} classes")
    if model_config.n != dataset.input_len:
        raise ValueError(f"model_config.n={model_config.n} but samples have {dataset.input_len} bytes")
    idx = np.arange(len(dataset)) if train_idx is None else np.asarray(train_idx, dtype=np.intp)
    if idx.size == 0:
        raise ValueError("empty training index set")

    params = init_params(model_config, train_config.seed)
    state = AdamState.zeros_like(params)
    drop_rng = np.random.default_rng([train_config.seed, 1])
    x_all, y_all = dataset.x.astype(np.intp), dataset.y
    model = Model(model_config, params, dataset.class_names, {"train_config": asdict(train_config)})
    result = TrainResult(model)

    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.writer(log_fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "train_acc", "test_acc"])
    best, stale = -math.inf, 0
    try:
        for epoch in range(1, train_config.epochs + 1):
            loss_sum = correct = seen = 0
            for b, block in enumerate(batches(idx, train_config.batch_size, train_config.seed, epoch)):
                x, y = x_all[block], y_all[block]
                tape = grad.Tape()
                probs = forward(x, as_tape_params(params, tape), model_config, train=True, rng=drop_rng)
                loss = grad.cross_entropy(probs, y)
                lv = float(loss.value)
                if not math.isfinite(lv):
                    raise NonFiniteLoss(epoch, b)
                if epoch == 1 and b == 0:
                    result.first_batch_loss = lv
                grads = tape.backward(loss)
                params, state = adam_step(params, grads, state, train_config)
                loss_sum += lv * block.size
                correct += int((probs.value.argmax(axis=1) == y).sum())
                seen += block.size
            model.params = params
            model.invalidate()
            entry = EpochLog(epoch, loss_sum / seen, correct / seen)
            if test_idx is not None and len(test_idx):
                entry.test_acc = evaluate(model, dataset, test_idx).accuracy
            result.history.append(entry)
            log.info("epoch %d loss %.5f train_acc %.4f test_acc %s", epoch, entry.loss, entry.train_acc, entry.test_acc)
            if writer is not None:
                writer.writerow([epoch, repr(entry.loss), repr(entry.train_acc), "" if entry.test_acc is None else repr(entry.test_acc)])
                log_fh.flush()
            if train_config.early_stop is not None:
                score = entry.test_acc if entry.test_acc is not None else -entry.loss
                if score > best:
                    best, stale = score, 0
                else:
                    stale += 1
                    if stale >= train_config.early_stop:
                        log.info("early stop after epoch %d", epoch)
                        break
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_path is not None:
        save_model(model, out_path)
    return result


def _mean_std(values: list[float]) -> dict[str, float]:
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return {"mean": mean, "std": math.sqrt(var)}


@dataclass
class CrossValResult:
    folds: list[EvalReport]
    histories: list[list[EpochLog]]
    fold_count: int
    seed: int

    def summary(self) -> dict[str, dict[str, float]]:
        keys = {
            "accuracy": lambda r: r.accuracy,
            "precision": lambda r: r.macro_precision,
            "recall": lambda r: r.macro_recall,
            "f1": lambda r: r.macro_f1,
        }
        return {k: _mean_std([f(r) for r in self.folds]) for k, f in keys.items()}

    def to_dict(self) -> dict:
        return {
            "fold_count": self.fold_count,
            "seed": self.seed,
            "averaging": "macro",
            "summary": self.summary(),
            "folds": [r.to_dict() for r in self.folds],
        }


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def cross_validate(dataset: Dataset, model_config: ModelConfig, train_config: TrainConfig, workers: int | None = None) -> CrossValResult:
    """Train on k-1 stratified folds and score the held-out fold, k times."""
    plan = stratified_folds(dataset, train_config.fold_count, train_config.seed)

    def run(fold: int):
        res = train(dataset, model_config, train_config, plan.train_indices(fold))
        return evaluate(res.model, dataset, plan.test_indices(fold)), res.history

    folds = range(plan.fold_count)
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, folds))
    else:
        results = [run(f) for f in folds]
    return CrossValResult([r for r, _ in results], [h for _, h in results], plan.fold_count, train_config.seed)
