"""Scaled-grid quantizers.

Every quantizer here has the form ``Q(x) = scale * level`` where ``scale`` is
``max|x_i|`` and each level is taken from a finite symmetric grid in
``[-1, 1]``.  The k-bit grid has ``2**k - 1`` uniformly spaced levels::

    {-1, -(n-1)/n, ..., -1/n, 0, 1/n, ..., 1}    with n = 2**(k-1) - 1

Codes are grid indices, so code ``n`` is the level 0 and code ``2n`` is +1.
Ties between two levels round away from zero, which keeps the quantizer odd:
``Q(-x) == -Q(x)`` bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, CorruptionError, UndefinedDeltaError

MIN_BITS = 2
MAX_BITS = 32

__all__ = [
    "QuantizedTensor",
    "Quantizer",
    "grid_levels",
    "half_levels",
    "quantize_midpoint",
    "quantize_ternary",
    "dequantize",
    "contraction_factor",
]


def _check_bits(k) -> int:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)):
        raise ConfigError(f"bit width must be an integer, got {k!r}", field="k")
    if not MIN_BITS <= k <= MAX_BITS:
        raise ConfigError(f"bit width must be in [{MIN_BITS}, {MAX_BITS}], got {k}", field="k")
    return int(k)


def half_levels(k: int) -> int:
    """Number of nonzero levels on each side of 0, ``2**(k-1) - 1``."""
    return (1 << (k - 1)) - 1


@lru_cache(maxsize=None)
def _levels(k: int) -> np.ndarray:
    n = half_levels(k)
    levels = (np.arange(2 * n + 1, dtype=np.float64) - n) / n
    levels.flags.writeable = False
    return levels


def grid_levels(k: int) -> np.ndarray:
    """The ordered k-bit grid; index ``i`` holds the level for code ``i``."""
    return _levels(_check_bits(k))


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Scale plus grid-index codes; what actually travels between nodes."""

    scale: float
    k: int
    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "scale", float(self.scale))

    def __len__(self) -> int:
        return int(self.codes.shape[0])

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        # compare scale bitwise so -0.0 / 0.0 and NaN payloads are distinguished
        return (
            self.k == other.k
            and np.float64(self.scale).tobytes() == np.float64(other.scale).tobytes()
            and np.array_equal(self.codes, other.codes)
        )

    def __hash__(self):
        return hash((self.k, np.float64(self.scale).tobytes(), self.codes.tobytes()))

    def __repr__(self):
        return f"QuantizedTensor(scale={self.scale!r}, k={self.k}, len={len(self)})"

    def validate(self) -> None:
        top = 2 * half_levels(self.k)
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() > top):
            raise CorruptionError(f"code out of range [0, {top}] for k={self.k}")
        if not np.isfinite(self.scale) or self.scale < 0:
            raise CorruptionError(f"scale must be finite and non-negative, got {self.scale}")


def quantize_midpoint(x, k: int) -> QuantizedTensor:
    """Nearest-level k-bit quantization of ``x / max|x|``."""
    k = _check_bits(k)
    x = np.asarray(x, dtype=np.float64)
    n = half_levels(k)
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    if scale == 0.0:
        return QuantizedTensor(0.0, k, np.full(x.shape[0], n, dtype=np.int64))
    y = np.abs(x) / scale * n
    whole = np.floor(y)
    # y - whole is exact here, so the tie test at 0.5 is exact too
    mag = whole + (y - whole >= 0.5)
    np.minimum(mag, n, out=mag)
    signed = np.where(x < 0, -mag, mag).astype(np.int64)
    return QuantizedTensor(scale, k, signed + n)


def quantize_ternary(x) -> QuantizedTensor:
    """Three-level quantizer: ``scale * sign(x_i)`` where ``|x_i| > scale/2``, else 0."""
    x = np.asarray(x, dtype=np.float64)
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    big = np.abs(x) > scale / 2.0
    signed = np.where(big, np.sign(x), 0.0).astype(np.int64)
    return QuantizedTensor(scale, 2, signed + 1)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    q.validate()
    return q.scale * _levels(q.k)[q.codes]


def contraction_factor(x, q: QuantizedTensor | np.ndarray) -> float:
    """Empirical ``delta = 1 - ||x - Q(x)|| / ||x||``.

    ``q`` may be a QuantizedTensor or an already dequantized vector.
    """
    from .tensor import norm

    x = np.asarray(x, dtype=np.float64)
    size = norm(x)
    if size == 0.0:
        raise UndefinedDeltaError("contraction factor is undefined for a zero vector")
    approx = dequantize(q) if isinstance(q, QuantizedTensor) else np.asarray(q, dtype=np.float64)
    return 1.0 - norm(x - approx) / size


@dataclass(frozen=True)
class Quantizer:
    """A gradient or weight quantizer.

    ``mode`` is ``"identity"`` (full precision, messages are raw float64
    vectors), ``"ternary"`` or ``"midpoint"`` (needs ``k``).
    """

    mode: str = "identity"
    k: int | None = None
    role: str = "gradient"

    def __post_init__(self):
        if self.mode not in ("identity", "ternary", "midpoint"):
            raise ConfigError(f"unknown quantizer mode {self.mode!r}", field="mode")
        if self.role not in ("gradient", "weight"):
            raise ConfigError(f"unknown quantizer role {self.role!r}", field="role")
        if self.mode == "midpoint":
            _check_bits(self.k)
        elif self.mode == "ternary":
            object.__setattr__(self, "k", 2)
        else:
            object.__setattr__(self, "k", None)

    @classmethod
    def parse(cls, text, role: str = "gradient") -> "Quantizer":
        """Build from a CLI-style value: ``fp``, ``ternary`` or a bit width."""
        if isinstance(text, Quantizer):
            return text
        s = str(text).strip().lower()
        if s in ("fp", "identity", "none", "off"):
            return cls("identity", role=role)
        if s == "ternary":
            return cls("ternary", role=role)
        try:
            k = int(s)
        except ValueError:
            raise ConfigError(f"expected 'fp', 'ternary' or a bit width, got {text!r}") from None
        return cls("midpoint", k, role)

    @property
    def is_identity(self) -> bool:
        return self.mode == "identity"

    def label(self) -> str:
        return {"identity": "fp", "ternary": "ternary"}.get(self.mode, str(self.k))

    def compress(self, x):
        """Quantize ``x``; identity mode returns a private float64 copy."""
        if self.mode == "identity":
            out = np.array(x, dtype=np.float64)
            out.flags.writeable = False
            return out
        if self.mode == "ternary":
            return quantize_ternary(x)
        return quantize_midpoint(x, self.k)

    @staticmethod
    def decompress(message) -> np.ndarray:
        if isinstance(message, QuantizedTensor):
            return dequantize(message)
        return np.asarray(message, dtype=np.float64)

    def __call__(self, x) -> np.ndarray:
        return self.decompress(self.compress(x))

    def message_bits(self, d: int) -> int:
        """Bits on the wire for one length-``d`` message."""
        from .wire import bits_for_message

        if self.mode == "identity":
            return 64 * d
        return bits_for_message(d, self.k)
