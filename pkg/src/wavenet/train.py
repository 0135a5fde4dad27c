"""Adam training loop, evaluation and metrics records."""

from __future__ import annotations

import csv
import logging
import resource
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import core_math as cm
from .checkpoint import Checkpoint, to_storage_precision
from .data import (
    SCHEMAS,
    DatasetSchema,
    EncodedExample,
    Vocab,
    batch_iter,
    build_vocab,
    encode_all,
    load_csv,
    train_val_split,
)
from .errors import ConfigError
from .model import ModelConfig, Params, init_params, model_forward, parameter_count

log = logging.getLogger(__name__)

METRICS_HEADER = ("phase", "index", "split", "loss", "accuracy", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 4
    eval_every_batches: int | None = None
    max_batches: int | None = None
    seed: int = 0

    def __post_init__(self):
        b1, b2 = self.betas
        if not self.lr > 0:
            raise ConfigError(f"lr={self.lr} must be > 0", "lr")
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ConfigError(f"betas={self.betas} must lie in [0, 1)", "betas")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", "batch_size")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", "epochs")
        if self.eval_every_batches is not None and self.eval_every_batches < 1:
            raise ConfigError("eval_every must be >= 1", "eval_every")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MetricsRecord:
    phase: str   # epoch | batch | final | eval
    index: int
    split: str   # train | val | test
    loss: float
    accuracy: float
    seconds: float

    def row(self) -> list[str]:
        return [self.phase, str(self.index), self.split, repr(self.loss), repr(self.accuracy), f"{self.seconds:.3f}"]


def write_metrics(path: str | Path, records: Sequence[MetricsRecord], append: bool = False) -> None:
    path = Path(path)
    new = not append or not path.exists() or path.stat().st_size == 0
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(METRICS_HEADER)
        w.writerows(r.row() for r in records)


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            MetricsRecord(r["phase"], int(r["index"]), r["split"], float(r["loss"]), float(r["accuracy"]), float(r["seconds"]))
            for r in csv.DictReader(fh)
        ]


# -- optimizer -----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    skipped: int = 0

    @classmethod
    def zeros(cls, params: Params) -> AdamState:
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: Params, grads: dict[str, np.ndarray], state: AdamState, t: int, cfg: TrainConfig) -> bool:
    """One bias-corrected Adam update at step ``t`` (1-based), in place.

    Returns False and leaves everything untouched when any gradient is
    non-finite; the skip is counted in ``state.skipped``.
    """
    if any(not np.isfinite(g).all() for g in grads.values()):
        state.skipped += 1
        log.warning("non-finite gradient at step %d; update skipped", t)
        return False
    b1, b2 = cfg.betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name].data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return True


# -- evaluation ----------------------------------------------------------------


def _run_inference(params: Params, config: ModelConfig, examples: Sequence[EncodedExample], batch_size: int):
    preds, loss_sum = [], 0.0
    with cm.no_grad():
        for batch in batch_iter(examples, batch_size):
            logits, loss = model_forward(batch, params, config)
            preds.append(logits.data.argmax(axis=1))
            loss_sum += float(loss.data) * len(batch)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64), loss_sum


def _score(params, config, examples, split, batch_size=256, phase="eval", index=0) -> MetricsRecord:
    t0 = time.perf_counter()
    preds, loss_sum = _run_inference(params, config, examples, batch_size)
    labels = np.array([ex.label for ex in examples])
    n = max(len(examples), 1)
    return MetricsRecord(phase, index, split, loss_sum / n, float((preds == labels).sum()) / n, time.perf_counter() - t0)


def checkpoint_params(ckpt: Checkpoint) -> Params:
    return {k: cm.Tensor(v) for k, v in ckpt.params.items()}


def predict(ckpt: Checkpoint, examples: Sequence[EncodedExample], batch_size: int = 256) -> np.ndarray:
    return _run_inference(checkpoint_params(ckpt), ckpt.config, examples, batch_size)[0]


def evaluate(ckpt: Checkpoint, examples: Sequence[EncodedExample], split: str = "test", batch_size: int = 256) -> MetricsRecord:
    """Dropout-free accuracy and mean cross-entropy of ``ckpt`` on ``examples``."""
    return _score(checkpoint_params(ckpt), ckpt.config, examples, split, batch_size)


# -- training ------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[MetricsRecord]
    checkpoint: Checkpoint
    vocab: Vocab
    batch_losses: list[float] = field(default_factory=list)
    skipped_steps: int = 0
    param_count: int = 0
    peak_rss_mb: float = 0.0

    @property
    def test(self) -> MetricsRecord | None:
        return next((r for r in reversed(self.history) if r.phase == "final"), None)


def _peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def fit(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_rows: Sequence[tuple[str, int]],
    val_rows: Sequence[tuple[str, int]] = (),
    test_rows: Sequence[tuple[str, int]] = (),
    *,
    vocab: Vocab | None = None,
    min_freq: int = 2,
    max_vocab: int = 30000,
    extra: dict | None = None,
    on_record: Callable[[MetricsRecord], None] | None = None,
) -> TrainResult:
    """Train on already-split (text, label) rows.

    The vocabulary is built from the training rows unless given. The
    returned checkpoint is the one with the best validation accuracy (the
    last one when there is no validation data); its test score is the
    ``final`` record of the history.
    """
    if vocab is None:
        vocab = build_vocab((t for t, _ in train_rows), min_freq=min_freq, max_size=max_vocab)
    cfg = replace(model_cfg, vocab_size=len(vocab))
    for name, rows in (("train", train_rows), ("val", val_rows), ("test", test_rows)):
        bad = [y for _, y in rows if not 0 <= y < cfg.n_classes]
        if bad:
            raise ConfigError(f"{name} labels {sorted(set(bad))[:5]} exceed n_classes={cfg.n_classes}", "n_classes")
    train = encode_all(train_rows, vocab, cfg.max_len)
    val = encode_all(val_rows, vocab, cfg.max_len)
    test = encode_all(test_rows, vocab, cfg.max_len)

    params = init_params(cfg)
    n_params = parameter_count(params)
    log.info("model: %d parameters, vocab %d, mode %s", n_params, len(vocab), cfg.combine_mode)
    state = AdamState.zeros(params)
    history: list[MetricsRecord] = []
    batch_losses: list[float] = []

    def record(r: MetricsRecord) -> None:
        history.append(r)
        if on_record:
            on_record(r)

    vocab_ref = {"file": "vocab.txt", "size": len(vocab), "sha256": vocab.fingerprint()}

    def snapshot(step: int, epoch: int) -> Checkpoint:
        return Checkpoint(
            config=cfg,
            params={k: to_storage_precision(p.data) for k, p in params.items()},
            vocab=vocab_ref,
            rng={"seed": train_cfg.seed, "step": step},
            extra={**(extra or {}), "train": train_cfg.to_dict(), "epoch": epoch},
        )

    step, best, best_acc, best_epoch = 0, None, -1.0, 0
    if val:
        r = _score(params, cfg, val, "val", phase="epoch", index=0)
        record(r)
        best, best_acc = snapshot(0, 0), r.accuracy
    done = False
    for epoch in range(1, train_cfg.epochs + 1):
        t0 = time.perf_counter()
        loss_sum, correct, seen = 0.0, 0, 0
        for batch in batch_iter(train, train_cfg.batch_size, shuffle=True, seed=train_cfg.seed * 1_000_003 + epoch):
            step += 1
            logits, loss = model_forward(batch, params, cfg, training=True, step=step)
            for p in params.values():
                p.grad = None
            loss.backward()
            adam_step(params, {k: p.grad for k, p in params.items()}, state, step, train_cfg)
            batch_losses.append(float(loss.data))
            loss_sum += float(loss.data) * len(batch)
            correct += int((logits.data.argmax(axis=1) == batch.labels).sum())
            seen += len(batch)
            # release this step's graph before the next forward allocates its own
            del logits, loss
            if train_cfg.eval_every_batches and test and step % train_cfg.eval_every_batches == 0:
                record(_score(params, cfg, test, "test", phase="batch", index=step))
            if train_cfg.max_batches and step >= train_cfg.max_batches:
                done = True
                break
        record(MetricsRecord("epoch", epoch, "train", loss_sum / max(seen, 1), correct / max(seen, 1), time.perf_counter() - t0))
        log.info("epoch %d: train loss %.4f acc %.4f (%.1fs)", epoch, loss_sum / max(seen, 1), correct / max(seen, 1), time.perf_counter() - t0)
        if val:
            r = _score(params, cfg, val, "val", phase="epoch", index=epoch)
            record(r)
            log.info("epoch %d: val acc %.4f", epoch, r.accuracy)
            if r.accuracy > best_acc:
                best, best_acc, best_epoch = snapshot(step, epoch), r.accuracy, epoch
        if done:
            break
    if best is None:
        best, best_epoch = snapshot(step, train_cfg.epochs), train_cfg.epochs
    if test:
        r = evaluate(best, test, "test")
        record(replace(r, phase="final", index=best_epoch))
    return TrainResult(history, best, vocab, batch_losses, state.skipped, n_params, _peak_rss_mb())


def subsample(rows: Sequence, n: int | None, seed: int) -> list:
    if n is None or n >= len(rows):
        return list(rows)
    keep = np.sort(np.random.default_rng([seed, n]).permutation(len(rows))[:n])
    return [rows[i] for i in keep]


def train_run(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_path: str | Path,
    test_path: str | Path | None = None,
    schema: DatasetSchema = SCHEMAS["ag_news"],
    *,
    subset: int | None = None,
    min_freq: int = 2,
    max_vocab: int = 30000,
    on_record: Callable[[MetricsRecord], None] | None = None,
) -> TrainResult:
    """Load CSVs, split train 80/20 into train/val, and :func:`fit`."""
    if model_cfg.n_classes != schema.n_classes:
        raise ConfigError(
            f"n_classes={model_cfg.n_classes} but the dataset schema has {schema.n_classes}", "n_classes"
        )
    rows = subsample(load_csv(train_path, schema), subset, train_cfg.seed)
    test_rows = load_csv(test_path, schema) if test_path else []
    train_rows, val_rows = train_val_split(rows, 0.8, train_cfg.seed)
    return fit(
        model_cfg, train_cfg, train_rows, val_rows, test_rows,
        min_freq=min_freq, max_vocab=max_vocab, extra={"schema": schema.to_dict()}, on_record=on_record,
    )
