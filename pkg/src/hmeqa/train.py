"""Training loop, evaluation and the ablation runner."""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import VARIANTS, ModelConfig
from .data import collate, split
from .errors import ConfigError, ContractError, DivergenceError, NumericError
from .model import HMEModel, build_params
from .optim import AdamState, adam_step, clip_grad_norm

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "split", "loss", "accuracy")


@dataclass
class TrainResult:
    model: HMEModel
    metrics: list = field(default_factory=list)  # rows of (epoch, split, loss, accuracy)
    best_epoch: int = 0
    best_val_accuracy: float = float("-inf")
    epochs_run: int = 0

    def metrics_csv(self):
        return metrics_to_csv(self.metrics)


def metrics_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for epoch, split_name, loss, acc in rows:
        w.writerow([epoch, split_name, f"{loss:.12f}", f"{acc:.6f}"])
    return buf.getvalue()


def batches(records, batch_size, order=None):
    order = np.arange(len(records)) if order is None else order
    for start in range(0, len(order), batch_size):
        yield collate([records[i] for i in order[start:start + batch_size]])


def evaluate(model, records, batch_size=64):
    """Return ``(mean loss, accuracy)`` of ``model`` on ``records``; no side effects."""
    if not records:
        raise ContractError("cannot evaluate on an empty dataset")
    total_loss, correct = 0.0, 0
    with T.no_grad():
        for batch in batches(records, batch_size):
            loss, out = model.loss(batch)
            total_loss += loss.item() * len(batch)
            correct += int(np.sum(out.predictions == model.targets(batch)))
    return total_loss / len(records), correct / len(records)


def accuracy(model, records, batch_size=64):
    return evaluate(model, records, batch_size)[1]


def train(config, records, checkpoint_path=None, log_path=None):
    """Train the configured variant with Adam on ``records``.

    The data is split into train/validation by ``config.val_fraction``. After
    every epoch the running training loss/accuracy and the validation
    loss/accuracy are logged; the parameters with the best validation
    accuracy are kept (and written to ``checkpoint_path`` when given).
    """
    cfg = config if isinstance(config, ModelConfig) else ModelConfig.from_dict(config)
    if not records:
        raise ContractError("training needs a non-empty dataset")
    if any(r.task != cfg.task for r in records):
        raise ConfigError(f"dataset task kinds do not match config task {cfg.task!r}")
    train_set, val_set = split(records, cfg.val_fraction, cfg.seed)
    if not val_set:
        val_set = train_set
    with T.default_dtype(cfg.precision):
        model = HMEModel(cfg)
        params = model.params
        opt = AdamState(params)
        shuffle = np.random.default_rng([cfg.seed, 2])
        result = TrainResult(model)
        best_state = params.state()
        batch_id = 0
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle.permutation(len(train_set))
            total, correct = 0.0, 0
            for batch in batches(train_set, cfg.batch_size, order):
                batch_id += 1
                try:
                    loss, out = model.loss(batch)
                    if not np.isfinite(loss.item()):
                        raise NumericError("non-finite loss")
                    T.backward(loss)
                except NumericError as e:
                    raise DivergenceError(f"training diverged at batch {batch_id}: {e}", batch_id) from e
                clip_grad_norm(params, cfg.clip_norm)
                adam_step(params, opt, cfg.learning_rate)
                params.zero_grad()
                total += loss.item() * len(batch)
                correct += int(np.sum(out.predictions == model.targets(batch)))
            train_loss, train_acc = total / len(train_set), correct / len(train_set)
            val_loss, val_acc = evaluate(model, val_set)
            result.metrics.append((epoch, "train", train_loss, train_acc))
            result.metrics.append((epoch, "val", val_loss, val_acc))
            result.epochs_run = epoch
            log.info("epoch %d train loss %.4f acc %.3f | val loss %.4f acc %.3f",
                     epoch, train_loss, train_acc, val_loss, val_acc)
            if val_acc > result.best_val_accuracy:
                result.best_val_accuracy = val_acc
                result.best_epoch = epoch
                best_state = params.state()
                if checkpoint_path:
                    save_checkpoint(params, checkpoint_path, cfg.to_dict())
            if _targets_met(cfg, model, train_set, train_acc, val_acc):
                break
        params.load_state(best_state)
        if checkpoint_path and cfg.epochs == 0:
            save_checkpoint(params, checkpoint_path, cfg.to_dict())
    if log_path:
        with open(log_path, "w", newline="") as fh:
            fh.write(result.metrics_csv())
    return result


def _targets_met(cfg, model, train_set, running_train_acc, val_acc):
    if cfg.target_train_accuracy <= 0 and cfg.target_val_accuracy <= 0:
        return False
    if val_acc < cfg.target_val_accuracy or running_train_acc < cfg.target_train_accuracy:
        return False
    # the running accuracy mixes parameter versions; confirm on frozen weights
    return accuracy(model, train_set) >= cfg.target_train_accuracy


def load_model(checkpoint_path, config=None):
    """Rebuild a model from a checkpoint, checking its shape manifest."""
    manifest, _ = read_checkpoint(checkpoint_path)
    if config is None:
        if not manifest.get("config"):
            raise ConfigError("checkpoint carries no config; pass one explicitly")
        config = ModelConfig.from_dict(manifest["config"])
    with T.default_dtype(config.precision):
        expected = build_params(config).manifest()
        params = load_checkpoint(checkpoint_path, expected)
    return HMEModel(config, params)


def ablate(config, records, variants=VARIANTS, reasoning_steps=None):
    """Train every requested variant (and reasoning depth) under one budget.

    Returns a list of dict rows with columns ``variant``, ``reasoning_steps``,
    ``epochs_run``, ``best_epoch``, ``train_accuracy``, ``val_accuracy``.
    """
    cfg = config if isinstance(config, ModelConfig) else ModelConfig.from_dict(config)
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    depths = list(reasoning_steps) if reasoning_steps else [cfg.reasoning_steps]
    rows = []
    for v in variants:
        for depth in depths:
            run_cfg = cfg.replace(variant=v, reasoning_steps=int(depth))
            res = train(run_cfg, records)
            train_set, val_set = split(records, run_cfg.val_fraction, run_cfg.seed)
            with T.default_dtype(run_cfg.precision):
                train_acc = accuracy(res.model, train_set)
                val_acc = accuracy(res.model, val_set or train_set)
            rows.append({
                "variant": v,
                "reasoning_steps": int(depth),
                "epochs_run": res.epochs_run,
                "best_epoch": res.best_epoch,
                "train_accuracy": train_acc,
                "val_accuracy": val_acc,
            })
            log.info("ablation %s L=%d: train %.3f val %.3f", v, depth, train_acc, val_acc)
    return rows


ABLATION_COLUMNS = ("variant", "reasoning_steps", "epochs_run", "best_epoch", "train_accuracy", "val_accuracy")


def ablation_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "train_accuracy": f"{r['train_accuracy']:.6f}", "val_accuracy": f"{r['val_accuracy']:.6f}"})
    return buf.getvalue()
