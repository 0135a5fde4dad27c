"""Complex vector token representations and wave combinators.

A sequence of n token embeddings (n x d, possibly with leading batch axes)
is turned into one complex number per entry: the magnitude is the column
L2 norm G[k] shared by every token, the phase places the token's own value
on the real axis. In Cartesian form this is

    re[j, k] = w[j, k]
    im[j, k] = sqrt(G[k]^2 - w[j, k]^2)    (norm of the column without token j)

Two such representations are combined by complex addition (interference)
or complex multiplication (modulation). The closed forms below are what the
model trains through; :func:`polar_oracle_combine` builds the same result
from explicit magnitudes, angles and ``exp(i*angle)`` for verification.

Masks mark real tokens with 1 and padding with 0. Padded rows contribute
nothing to G and carry zero complex components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core_math as cm
from .core_math import Tensor
from .errors import ShapeError

MODES = ("interference", "modulation")


@dataclass(frozen=True)
class ComplexRepr:
    """Real and imaginary parts stored as two same-shaped tensors."""

    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"real part {self.re.dims} and imaginary part {self.im.dims} differ")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def to_numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    @classmethod
    def from_numpy(cls, z: np.ndarray) -> ComplexRepr:
        return cls(Tensor(z.real.copy()), Tensor(z.imag.copy()))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.re.data, self.im.data)


def _row_weights(E: Tensor, mask) -> np.ndarray | None:
    """Validate ``mask`` against ``E`` and return it as (..., n, 1) weights."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != E.shape[:-1]:
        raise ShapeError(f"mask dims {list(m.shape)} do not match embedding rows {E.dims[:-1]}")
    if (m.sum(axis=-1) == 0).any():
        raise ValueError("every sequence needs at least one non-padded token")
    return m[..., None]


def _masked(E, mask) -> tuple[Tensor, np.ndarray | None]:
    E = cm.as_tensor(E)
    if E.ndim < 2:
        raise ShapeError(f"embedding matrix needs at least 2 dims, got {E.dims}")
    w = _row_weights(E, mask)
    return (E if w is None else E * w), w


def global_semantics(E, mask=None) -> Tensor:
    """Per-dimension L2 norm over the real tokens of each sequence: (..., d)."""
    Em, _ = _masked(E, mask)
    return cm.sqrt(cm.sum(cm.square(Em), axis=-2))


def to_complex(E, G=None, mask=None) -> ComplexRepr:
    """Cartesian form of G * exp(i * phase) for every token.

    When ``G`` is omitted the column energy is summed directly, which keeps
    the single-token case exact (the radicand is then w^2 - w^2 = 0).
    """
    Em, w = _masked(E, mask)
    if G is None:
        energy = cm.sum(cm.square(Em), axis=-2, keepdims=True)
    else:
        G = cm.as_tensor(G)
        if G.shape != Em.shape[:-2] + Em.shape[-1:]:
            raise ShapeError(f"global vector {G.dims} does not fit embeddings {Em.dims}")
        energy = cm.square(cm.reshape(G, G.shape[:-1] + (1, G.shape[-1])))
    im = cm.sqrt(cm.clamp_min(energy - cm.square(Em), 0.0))
    if w is not None:
        im = im * w
    return ComplexRepr(Em, im)


def _same_shape(Z: ComplexRepr, Z2: ComplexRepr, op: str) -> None:
    if Z.shape != Z2.shape:
        raise ShapeError(f"{op}: shapes {list(Z.shape)} and {list(Z2.shape)} differ")


def interfere(Z: ComplexRepr, Z2: ComplexRepr) -> ComplexRepr:
    """Wave interference: componentwise complex addition."""
    _same_shape(Z, Z2, "interfere")
    return ComplexRepr(Z.re + Z2.re, Z.im + Z2.im)


def modulate(Z: ComplexRepr, Z2: ComplexRepr) -> ComplexRepr:
    """Wave modulation: componentwise complex multiplication.

    Magnitudes multiply and phases add.
    """
    _same_shape(Z, Z2, "modulate")
    re = Z.re * Z2.re - Z.im * Z2.im
    im = Z.re * Z2.im + Z.im * Z2.re
    return ComplexRepr(re, im)


def combine(Z: ComplexRepr, Z2: ComplexRepr, mode: str) -> ComplexRepr:
    if mode == "interference":
        return interfere(Z, Z2)
    if mode == "modulation":
        return modulate(Z, Z2)
    raise ValueError(f"combine mode must be one of {MODES}, got {mode!r}")


def interference_intensity(Z: ComplexRepr, Z2: ComplexRepr) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split |Z + Z2|^2 into |Z|^2, |Z2|^2 and the cross term 2 Re(Z conj(Z2))."""
    _same_shape(Z, Z2, "interference_intensity")
    a, b = Z.re.data, Z.im.data
    c, d = Z2.re.data, Z2.im.data
    return a * a + b * b, c * c + d * d, 2.0 * (a * c + b * d)


def phase_matrix(E, G=None, mask=None) -> np.ndarray:
    """Token phases in [0, pi]: atan2(sqrt(G^2 - w^2), w), zero on padding."""
    E = np.asarray(E.data if isinstance(E, Tensor) else E, dtype=np.float64)
    m = None if mask is None else np.asarray(mask, dtype=np.float64)
    w = E if m is None else E * m[..., None]
    if G is None:
        g2 = (w * w).sum(axis=-2, keepdims=True)
    else:
        G = np.asarray(G.data if isinstance(G, Tensor) else G, dtype=np.float64)
        g2 = (G * G)[..., None, :]
    alpha = np.arctan2(np.sqrt(np.maximum(g2 - w * w, 0.0)), w)
    if m is not None:
        alpha = alpha * m[..., None]
    return alpha


def polar_oracle_combine(E, E2, mode: str, mask=None) -> ComplexRepr:
    """Reference combinator built from explicit magnitudes, angles and exp(i*angle).

    Independent of the closed-form path: it never forms the Cartesian parts
    from w directly. Not used for training.
    """
    E = np.asarray(E.data if isinstance(E, Tensor) else E, dtype=np.float64)
    E2 = np.asarray(E2.data if isinstance(E2, Tensor) else E2, dtype=np.float64)
    if E.shape != E2.shape:
        raise ShapeError(f"polar oracle: shapes {list(E.shape)} and {list(E2.shape)} differ")
    if mask is not None:
        _row_weights(Tensor(E), mask)
    m = np.ones(E.shape[:-1]) if mask is None else np.asarray(mask, dtype=np.float64)
    rows = m[..., None]

    def polar(X):
        X = X * rows
        G = np.sqrt((X * X).sum(axis=-2))
        alpha = phase_matrix(X, G, m)
        return G[..., None, :], alpha

    G, alpha = polar(E)
    G2, alpha2 = polar(E2)
    if mode == "interference":
        z = G * np.exp(1j * alpha) + G2 * np.exp(1j * alpha2)
    elif mode == "modulation":
        z = G * G2 * np.exp(1j * (alpha + alpha2))
    else:
        raise ValueError(f"combine mode must be one of {MODES}, got {mode!r}")
    return ComplexRepr.from_numpy(z * rows)
