"""Wave network classifier.

Each block is a pre-norm residual pair of sublayers::

    h  = W + dropout(g(combine(Z_a, Z_b)))      Z_* from two projections of norm1(W)
    W' = h + dropout(ffn(norm2(h)))

where g maps the concatenated real and imaginary parts (2d) back to d.
The classifier mean-pools the real tokens of the final activations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from . import core_math as cm
from . import wave_repr
from .core_math import Tensor
from .data import SequenceBatch
from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int
    d: int = 768
    n_layers: int = 1
    combine_mode: str = "modulation"
    dropout_p: float = 0.1
    max_len: int = 128
    ffn_hidden: int = 0  # 0 means 4 * d
    seed: int = 0

    def __post_init__(self):
        if self.ffn_hidden == 0:
            object.__setattr__(self, "ffn_hidden", 4 * self.d)
        checks = [
            ("vocab_size", self.vocab_size >= 2, "must be >= 2"),
            ("n_classes", self.n_classes >= 2, "must be >= 2"),
            ("d", self.d >= 2 and self.d % 2 == 0, "must be a positive even number"),
            ("n_layers", self.n_layers >= 1, "must be >= 1"),
            ("combine_mode", self.combine_mode in wave_repr.MODES, f"must be one of {wave_repr.MODES}"),
            ("dropout_p", 0.0 <= self.dropout_p < 1.0, "must lie in [0, 1)"),
            ("max_len", self.max_len >= 1, "must be >= 1"),
            ("ffn_hidden", self.ffn_hidden >= 1, "must be >= 1"),
        ]
        for key, ok, why in checks:
            if not ok:
                raise ConfigError(f"{key}={getattr(self, key)!r} {why}", key)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


Params = dict[str, Tensor]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every trainable tensor, in canonical order."""
    d, h = config.d, config.ffn_hidden
    shapes: dict[str, tuple[int, ...]] = {"embedding": (config.vocab_size, d)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "norm1.gain": (d,),
            p + "norm1.bias": (d,),
            p + "proj_a.weight": (d, d),
            p + "proj_a.bias": (d,),
            p + "proj_b.weight": (d, d),
            p + "proj_b.bias": (d,),
            p + "g_proj.weight": (2 * d, d),
            p + "g_proj.bias": (d,),
            p + "norm2.gain": (d,),
            p + "norm2.bias": (d,),
            p + "ffn.w1": (d, h),
            p + "ffn.b1": (h,),
            p + "ffn.w2": (h, d),
            p + "ffn.b2": (d,),
        })
    shapes["classifier.weight"] = (d, config.n_classes)
    shapes["classifier.bias"] = (config.n_classes,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...], shapes: dict) -> int:
    if name.endswith((".weight", ".w1", ".w2")):
        return shape[0]
    # biases take the fan-in of their weight
    sibling = {"bias": "weight", "b1": "w1", "b2": "w2"}
    stem, last = name.rsplit(".", 1)
    return shapes[f"{stem}.{sibling[last]}"][0]


def init_params(config: ModelConfig) -> Params:
    """Deterministic initialization from ``config.seed``.

    Embeddings ~ N(0, 1); linear maps ~ U(+-1/sqrt(fan_in)); norms start at
    gain 1 / bias 0; the classifier starts at zero.
    """
    rng = np.random.default_rng(config.seed)
    shapes = param_shapes(config)
    params: Params = {}
    for name, shape in shapes.items():
        if name == "embedding":
            data = rng.standard_normal(shape)
        elif name.startswith("classifier."):
            data = np.zeros(shape)
        elif name.endswith(".gain"):
            data = np.ones(shape)
        elif ".norm" in name:
            data = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shape, shapes))
            data = rng.uniform(-bound, bound, shape)
        params[name] = cm.parameter(data)
    return params


def parameter_count(params: Params) -> int:
    return int(sum(p.data.size for p in params.values()))


@lru_cache(maxsize=8)
def positional_encoding(max_len: int, d: int) -> np.ndarray:
    """Fixed sinusoidal table: sin on even columns, cos on odd columns."""
    if d % 2:
        raise ConfigError(f"positional encoding needs an even width, got {d}", "d")
    pos = np.arange(max_len)[:, None]
    freq = 10000.0 ** (np.arange(0, d, 2) / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    pe.flags.writeable = False
    return pe


def layer_params(params: Params, i: int) -> Params:
    prefix = f"layers.{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def _linear(x, layer: Params, name: str) -> Tensor:
    return cm.matmul(x, layer[name + ".weight"]) + layer[name + ".bias"]


def wave_layer_forward(X, mask, layer: Params, combine_mode: str) -> Tensor:
    """Wave sublayer: two projections -> complex reprs -> combine -> back to d."""
    A = _linear(X, layer, "proj_a")
    B = _linear(X, layer, "proj_b")
    Z = wave_repr.combine(wave_repr.to_complex(A, mask=mask), wave_repr.to_complex(B, mask=mask), combine_mode)
    return _linear(cm.concat([Z.re, Z.im], axis=-1), layer, "g_proj")


def _ffn(X, layer: Params) -> Tensor:
    h = cm.relu(cm.matmul(X, layer["ffn.w1"]) + layer["ffn.b1"])
    return cm.matmul(h, layer["ffn.w2"]) + layer["ffn.b2"]


def dropout_rng(seed: int, layer: int, step: int, site: int, chunk: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (run seed, layer, step, site, row chunk)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, layer, step, site, chunk])))


def block_forward(
    W, mask, layer: Params, config: ModelConfig, training: bool = False, *, index: int = 0, step: int = 0,
    chunk: int = 0,
) -> Tensor:
    p = config.dropout_p
    drop = training and p > 0

    def rng(site):
        return dropout_rng(config.seed, index, step, site, chunk) if drop else None

    h = cm.layer_norm(W, layer["norm1.gain"], layer["norm1.bias"])
    W = W + cm.dropout(wave_layer_forward(h, mask, layer, config.combine_mode), p, rng(0), training)
    h = cm.layer_norm(W, layer["norm2.gain"], layer["norm2.bias"])
    return W + cm.dropout(_ffn(h, layer), p, rng(1), training)


def classify(H, mask, params: Params) -> Tensor:
    """Mean over real tokens, then a linear map to class logits."""
    pooled = cm.masked_mean(H, np.asarray(mask, dtype=np.float64)[..., None], axis=-2)
    return cm.matmul(pooled, params["classifier.weight"]) + params["classifier.bias"]


def embed(ids: np.ndarray, params: Params, config: ModelConfig) -> Tensor:
    L = ids.shape[-1]
    if L > config.max_len:
        raise ValueError(f"sequence length {L} exceeds max_len {config.max_len}")
    return cm.embedding(params["embedding"], ids) + positional_encoding(config.max_len, config.d)[:L]


def validate_batch(batch: SequenceBatch, config: ModelConfig) -> None:
    bad = np.argwhere((batch.ids < 0) | (batch.ids >= config.vocab_size))
    if bad.size:
        raise ValueError(f"token ids outside [0, {config.vocab_size}) at (row, col) {bad.tolist()[:10]}")
    bad = np.flatnonzero((batch.labels < 0) | (batch.labels >= config.n_classes))
    if bad.size:
        raise ValueError(f"labels outside [0, {config.n_classes}) at rows {bad.tolist()[:10]}")
    empty = np.flatnonzero(batch.mask.sum(axis=-1) == 0)
    if empty.size:
        raise ValueError(f"rows {empty.tolist()[:10]} have no real tokens")


# Tokens per row chunk. Rows never interact before the loss, so running the
# network over slices of rows gives the same logits while keeping each op's
# working set small; backward then walks the chunks one after another too.
# Around a thousand tokens keeps d=128 activations near L2 size and is still
# enough rows for efficient matrix products at d=768.
CHUNK_TOKENS = 1024


def chunk_rows(n_rows: int, seq_len: int) -> int:
    return max(1, min(n_rows, CHUNK_TOKENS // max(1, seq_len)))


def model_forward(
    batch: SequenceBatch, params: Params, config: ModelConfig, training: bool = False, step: int = 0
) -> tuple[Tensor, Tensor]:
    """Embed, run every block, classify. Returns (logits, mean cross-entropy).

    Rows are processed in chunks of :func:`chunk_rows`; chunk ``k`` draws
    its dropout masks from its own stream.
    """
    validate_batch(batch, config)
    layers = [layer_params(params, i) for i in range(config.n_layers)]
    n, L = batch.ids.shape
    rows = chunk_rows(n, L)
    parts = []
    for k, r0 in enumerate(range(0, n, rows)):
        ids, mask = batch.ids[r0:r0 + rows], batch.mask[r0:r0 + rows]
        H = embed(ids, params, config)
        for i, layer in enumerate(layers):
            H = block_forward(H, mask, layer, config, training, index=i, step=step, chunk=k)
        parts.append(classify(H, mask, params))
    logits = parts[0] if len(parts) == 1 else cm.concat(parts, axis=0)
    return logits, cm.softmax_cross_entropy(logits, batch.labels)
