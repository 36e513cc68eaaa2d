"""Mid-rise floor quantization onto a uniform lattice.

Every quantized message in this package is a point ``level * k`` with
integer ``k``. Floor semantics are toward minus infinity, and the lattice
index is corrected so that ``level*k <= v < level*(k+1)`` holds in float
arithmetic, which makes quantization exactly idempotent and keeps lattice
points fixed.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, LatticeRangeError

# beyond 2**53 consecutive integers are no longer representable in float64,
# so the +-1 index correction below would be a no-op
_EXACT_FLOAT_INT = float(2**53)
_MAX_INDEX = 2**62


@dataclass(frozen=True)
class QuantizerConfig:
    """Uniform lattice spacing, in the same units as the quantized values."""

    level: float

    def __post_init__(self):
        if not (np.isfinite(self.level) and self.level > 0):
            raise InvalidInputError(
                f"quantization level must be a positive finite scalar, got {self.level!r}"
            )


def _corrected_index(values, level):
    """Float lattice indices k with level*k <= v < level*(k+1) componentwise."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("cannot quantize non-finite values")
    k = np.floor(v / level)
    adjustable = np.abs(k) < _EXACT_FLOAT_INT
    # float division can land one lattice step off near lattice points
    for _ in range(2):
        low = adjustable & (level * (k + 1.0) <= v)
        if not low.any():
            break
        k = np.where(low, k + 1.0, k)
    for _ in range(2):
        high = adjustable & (level * k > v)
        if not high.any():
            break
        k = np.where(high, k - 1.0, k)
    return k


def quantize(values, cfg: QuantizerConfig) -> np.ndarray:
    """Quantize ``values`` down to the nearest lattice point at or below them."""
    return cfg.level * _corrected_index(values, cfg.level)


def to_integer_lattice(values, cfg: QuantizerConfig) -> np.ndarray:
    """Integer lattice indices, satisfying ``cfg.level * result == quantize(values)``."""
    k = _corrected_index(values, cfg.level)
    if np.any(np.abs(k) >= _MAX_INDEX):
        raise LatticeRangeError(
            "lattice index exceeds the integer range; value/level is too large"
        )
    return k.astype(np.int64)
