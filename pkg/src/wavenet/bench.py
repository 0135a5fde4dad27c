"""Throughput and memory telemetry for one model configuration."""

from __future__ import annotations

import csv
import hashlib
import json
import resource
import statistics
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import core_math as cm
from .data import SequenceBatch
from .model import ModelConfig, init_params, model_forward, parameter_count

CSV_HEADER = ("mode", "d", "n_layers", "batch", "seq_len", "fwd_tok_per_s", "fwdbwd_tok_per_s", "param_count")


@dataclass(frozen=True)
class BenchReport:
    mode: str
    d: int
    n_layers: int
    batch: int
    seq_len: int
    fwd_tok_per_s: float
    fwdbwd_tok_per_s: float
    param_count: int
    seconds_per_epoch: float
    peak_rss_mb: float
    fingerprint: str

    def row(self) -> list:
        return [self.mode, self.d, self.n_layers, self.batch, self.seq_len,
                f"{self.fwd_tok_per_s:.1f}", f"{self.fwdbwd_tok_per_s:.1f}", self.param_count]


def fingerprint(config: ModelConfig) -> str:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


def bench_layer(
    config: ModelConfig,
    n_batches: int = 5,
    batch_size: int = 64,
    seq_len: int = 64,
    epoch_examples: int = 96_000,
    seed: int = 0,
) -> BenchReport:
    """Median tokens/second of forward and forward+backward on synthetic batches.

    Batches are generated before timing starts. ``seconds_per_epoch`` scales
    the forward+backward median to ``epoch_examples`` examples.
    """
    if seq_len > config.max_len:
        config = replace(config, max_len=seq_len)
    params = init_params(config)
    rng = np.random.default_rng(seed)
    batches = [
        SequenceBatch(
            rng.integers(2, config.vocab_size, (batch_size, seq_len)),
            np.ones((batch_size, seq_len)),
            rng.integers(0, config.n_classes, batch_size),
        )
        for _ in range(n_batches + 1)
    ]
    # warm-up touches every buffer the timed passes will need
    with cm.no_grad():
        model_forward(batches[0], params, config)
    model_forward(batches[0], params, config, training=True)[1].backward()
    for p in params.values():
        p.grad = None
    fwd, fwdbwd = [], []
    for step, b in enumerate(batches[1:], start=1):
        t0 = time.perf_counter()
        with cm.no_grad():
            model_forward(b, params, config)
        fwd.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        _, loss = model_forward(b, params, config, training=True, step=step)
        loss.backward()
        fwdbwd.append(time.perf_counter() - t0)
        del loss
        for p in params.values():
            p.grad = None
    tokens = batch_size * seq_len
    t_fb = statistics.median(fwdbwd)
    return BenchReport(
        mode=config.combine_mode,
        d=config.d,
        n_layers=config.n_layers,
        batch=batch_size,
        seq_len=seq_len,
        fwd_tok_per_s=tokens / statistics.median(fwd),
        fwdbwd_tok_per_s=tokens / t_fb,
        param_count=parameter_count(params),
        seconds_per_epoch=t_fb * epoch_examples / batch_size,
        peak_rss_mb=resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0,
        fingerprint=fingerprint(config),
    )


def paired_bench(variants: list[tuple[ModelConfig, dict]], rounds: int = 5, **common) -> list[BenchReport]:
    """Bench several (config, kwargs) variants round-robin, ``rounds`` times.

    Interleaving, with the starting variant rotated every round, keeps slow
    drift of the machine from favouring any one variant. Each returned
    report carries the variant's best round: outside load only ever slows a
    round down, so the fastest one is the least contaminated estimate.
    """
    runs: list[list[BenchReport]] = [[] for _ in variants]
    for r in range(rounds):
        for j in range(len(variants)):
            k = (j + r) % len(variants)
            config, kw = variants[k]
            runs[k].append(bench_layer(config, **{**common, **kw}))
    return [
        replace(
            rs[0],
            fwd_tok_per_s=max(r.fwd_tok_per_s for r in rs),
            fwdbwd_tok_per_s=max(r.fwdbwd_tok_per_s for r in rs),
            seconds_per_epoch=min(r.seconds_per_epoch for r in rs),
            peak_rss_mb=max(r.peak_rss_mb for r in rs),
        )
        for rs in runs
    ]


def write_bench_csv(path: str | Path, reports: list[BenchReport], append: bool = True) -> None:
    path = Path(path)
    new = not append or not path.exists() or path.stat().st_size == 0
    with path.open("a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(CSV_HEADER)
        w.writerows(r.row() for r in reports)
