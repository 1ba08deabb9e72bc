"""Bit-accurate signed fixed-point arithmetic.

Scalars carry an explicit two's-complement word length and fraction length.
Every operation forms the exact integer result first and then rescales,
rounds and saturates into the requested output format.  Saturation is never
silent: callers pass a :class:`QuantStats` accumulator that counts it.

The module also holds the vectorised int64 counterparts used by the
datapath kernels.  Both paths share the same rounding rules, so a scalar
computation and an array computation over the same operands agree bit for
bit.
"""

from __future__ import annotations

import enum
import math
import numbers
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

__all__ = [
    "RoundingMode",
    "FixedFormat",
    "FixedScalar",
    "FixedComplex",
    "QuantStats",
    "quantize",
    "truncate_lsb",
    "fx_mul",
    "fx_add",
    "fx_sub",
    "cx_mul",
    "cx_sq_norm",
    "cx_add",
    "product_format",
    "round_shift",
    "quantize_array",
    "shift_round_array",
    "saturate_array",
    "truncate_array",
    "raw_to_float",
]


class RoundingMode(str, enum.Enum):
    """How bits dropped by a rescale are resolved."""

    NEAREST_EVEN = "nearest-even"
    FLOOR = "floor"
    TOWARD_ZERO = "toward-zero"


_QFMT = re.compile(r"^Q(\d+)\.(\d+)$")


@dataclass(frozen=True)
class FixedFormat:
    """Signed two's-complement format with ``word_len`` total bits.

    Parameters
    ----------
    word_len : int
        Total bits including the sign bit, 1 to 64.
    frac_len : int
        Bits to the right of the binary point, 0 to ``word_len - 1``.
    """

    word_len: int
    frac_len: int

    def __post_init__(self):
        for name in ("word_len", "frac_len"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, numbers.Integral):
                raise TypeError(f"{name} must be an integer, got {v!r}")
        if not 1 <= self.word_len <= 64:
            raise ValueError(f"word_len must be in 1..64, got {self.word_len}")
        if not 0 <= self.frac_len <= self.word_len - 1:
            raise ValueError(
                f"frac_len must be in 0..{self.word_len - 1}, got {self.frac_len}"
            )

    @classmethod
    def parse(cls, text: str) -> "FixedFormat":
        """Build a format from ``"Q<word>.<frac>"`` notation."""
        m = _QFMT.match(text.strip())
        if not m:
            raise ValueError(f"not a Q<word>.<frac> format string: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def min_raw(self) -> int:
        return -(1 << (self.word_len - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.word_len - 1)) - 1

    @property
    def lsb(self) -> Fraction:
        return Fraction(1, 1 << self.frac_len)

    @property
    def min_value(self) -> Fraction:
        return self.min_raw * self.lsb

    @property
    def max_value(self) -> Fraction:
        return self.max_raw * self.lsb

    def contains_raw(self, raw: int) -> bool:
        return self.min_raw <= raw <= self.max_raw

    def __str__(self) -> str:
        return f"Q{self.word_len}.{self.frac_len}"


@dataclass
class QuantStats:
    """Mutable tally of rescale operations and saturation events.

    One instance is threaded explicitly through a computation; nothing in
    this module keeps global counters.
    """

    operations: int = 0
    saturations: int = 0
    by_signal: dict = field(default_factory=dict)

    def record(self, n_ops: int, n_sat: int, signal: str | None = None) -> None:
        self.operations += int(n_ops)
        self.saturations += int(n_sat)
        if signal is not None:
            self.by_signal[signal] = self.by_signal.get(signal, 0) + int(n_sat)

    def merge(self, other: "QuantStats") -> None:
        self.record(other.operations, other.saturations)
        for k, v in other.by_signal.items():
            self.by_signal[k] = self.by_signal.get(k, 0) + v


@dataclass(frozen=True)
class FixedScalar:
    """A raw integer interpreted as ``raw * 2**-fmt.frac_len``."""

    raw: int
    fmt: FixedFormat

    def __post_init__(self):
        if isinstance(self.raw, bool) or not isinstance(self.raw, numbers.Integral):
            raise TypeError(f"raw must be an integer, got {self.raw!r}")
        object.__setattr__(self, "raw", int(self.raw))
        if not self.fmt.contains_raw(self.raw):
            raise ValueError(f"raw {self.raw} does not fit in {self.fmt}")

    @property
    def exact(self) -> Fraction:
        return Fraction(self.raw, 1 << self.fmt.frac_len)

    @property
    def value(self) -> float:
        return math.ldexp(self.raw, -self.fmt.frac_len)


@dataclass(frozen=True)
class FixedComplex:
    """Complex value whose parts share one format."""

    re: FixedScalar
    im: FixedScalar

    def __post_init__(self):
        if self.re.fmt != self.im.fmt:
            raise ValueError(
                f"real and imaginary formats differ: {self.re.fmt} vs {self.im.fmt}"
            )

    @property
    def fmt(self) -> FixedFormat:
        return self.re.fmt

    @property
    def value(self) -> complex:
        return complex(self.re.value, self.im.value)

    @classmethod
    def from_complex(cls, z, fmt, mode=RoundingMode.NEAREST_EVEN, stats=None):
        z = complex(z)
        return cls(quantize(z.real, fmt, mode, stats), quantize(z.imag, fmt, mode, stats))


# ---------------------------------------------------------------- scalar core


def round_shift(raw: int, shift: int, mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> int:
    """Divide ``raw`` by ``2**shift`` and round according to ``mode``.

    A negative ``shift`` is an exact left shift.
    """
    if shift <= 0:
        return raw << (-shift)
    mode = RoundingMode(mode)
    q = raw >> shift  # floor
    if mode is RoundingMode.FLOOR:
        return q
    r = raw - (q << shift)
    if mode is RoundingMode.TOWARD_ZERO:
        return q + 1 if (raw < 0 and r) else q
    half = 1 << (shift - 1)
    if r > half or (r == half and q & 1):
        return q + 1
    return q


def _saturate(raw: int, fmt: FixedFormat, stats: QuantStats | None) -> int:
    sat = 0
    if raw > fmt.max_raw:
        raw, sat = fmt.max_raw, 1
    elif raw < fmt.min_raw:
        raw, sat = fmt.min_raw, 1
    if stats is not None:
        stats.record(1, sat)
    return raw


def _requantize(raw: int, frac: int, fmt: FixedFormat, mode, stats) -> FixedScalar:
    out = round_shift(raw, frac - fmt.frac_len, mode)
    return FixedScalar(_saturate(out, fmt, stats), fmt)


def quantize(x, fmt: FixedFormat, mode=RoundingMode.NEAREST_EVEN,
             stats: QuantStats | None = None) -> FixedScalar:
    """Nearest representable value of the real number ``x`` in ``fmt``.

    ``x`` may be an int, float or Fraction; the conversion is exact before
    rounding, so ties are decided on the true value.
    """
    if isinstance(x, float) and not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    scaled = Fraction(x) * (1 << fmt.frac_len)
    mode = RoundingMode(mode)
    if mode is RoundingMode.NEAREST_EVEN:
        raw = round(scaled)  # Fraction.__round__ breaks ties to even
    elif mode is RoundingMode.FLOOR:
        raw = math.floor(scaled)
    else:
        raw = math.trunc(scaled)
    return FixedScalar(_saturate(raw, fmt, stats), fmt)


def truncate_lsb(x: FixedScalar, k: int) -> FixedScalar:
    """Clear the ``k`` least significant bits of ``x`` (a floor in value)."""
    if isinstance(k, bool) or not isinstance(k, numbers.Integral):
        raise TypeError(f"k must be an integer, got {k!r}")
    if not 0 <= k < x.fmt.word_len:
        raise ValueError(f"truncation bits must be in 0..{x.fmt.word_len - 1}, got {k}")
    return FixedScalar((x.raw >> k) << k, x.fmt)


def product_format(a: FixedFormat, b: FixedFormat) -> FixedFormat:
    """Format that holds any product of ``a`` and ``b`` operands exactly."""
    return FixedFormat(a.word_len + b.word_len, a.frac_len + b.frac_len)


def fx_mul(a: FixedScalar, b: FixedScalar, out_fmt: FixedFormat,
           mode=RoundingMode.NEAREST_EVEN, stats: QuantStats | None = None) -> FixedScalar:
    """Full-precision product rescaled into ``out_fmt``."""
    return _requantize(a.raw * b.raw, a.fmt.frac_len + b.fmt.frac_len, out_fmt, mode, stats)


def _aligned(a: FixedScalar, b: FixedScalar):
    f = max(a.fmt.frac_len, b.fmt.frac_len)
    return a.raw << (f - a.fmt.frac_len), b.raw << (f - b.fmt.frac_len), f


def fx_add(a: FixedScalar, b: FixedScalar, out_fmt: FixedFormat,
           mode=RoundingMode.NEAREST_EVEN, stats: QuantStats | None = None) -> FixedScalar:
    """Exact sum on the finer grid of the two operands, then rescaled."""
    ra, rb, f = _aligned(a, b)
    return _requantize(ra + rb, f, out_fmt, mode, stats)


def fx_sub(a: FixedScalar, b: FixedScalar, out_fmt: FixedFormat,
           mode=RoundingMode.NEAREST_EVEN, stats: QuantStats | None = None) -> FixedScalar:
    ra, rb, f = _aligned(a, b)
    return _requantize(ra - rb, f, out_fmt, mode, stats)


def cx_mul(a: FixedComplex, b: FixedComplex, out_fmt: FixedFormat,
           mode=RoundingMode.NEAREST_EVEN, stats: QuantStats | None = None) -> FixedComplex:
    """Complex product from four real multiplies and two adders.

    The partial products are kept at full width, so each output part is
    rounded exactly once.
    """
    pf = product_format(a.fmt, b.fmt)
    rr = fx_mul(a.re, b.re, pf)
    ii = fx_mul(a.im, b.im, pf)
    ri = fx_mul(a.re, b.im, pf)
    ir = fx_mul(a.im, b.re, pf)
    return FixedComplex(fx_sub(rr, ii, out_fmt, mode, stats), fx_add(ri, ir, out_fmt, mode, stats))


def cx_sq_norm(a: FixedComplex, out_fmt: FixedFormat,
               mode=RoundingMode.NEAREST_EVEN, stats: QuantStats | None = None) -> FixedScalar:
    """``re**2 + im**2`` from two squarers and one adder."""
    pf = product_format(a.fmt, a.fmt)
    return fx_add(fx_mul(a.re, a.re, pf), fx_mul(a.im, a.im, pf), out_fmt, mode, stats)


def cx_add(a: FixedComplex, b: FixedComplex, out_fmt: FixedFormat,
           mode=RoundingMode.NEAREST_EVEN, stats: QuantStats | None = None) -> FixedComplex:
    return FixedComplex(fx_add(a.re, b.re, out_fmt, mode, stats),
                        fx_add(a.im, b.im, out_fmt, mode, stats))


# ---------------------------------------------------------------- array path
#
# int64 versions of the rules above.  Formats used here must leave headroom
# in int64 and be exactly representable in a double, hence the 53-bit cap
# on quantize_array.


def quantize_array(x, fmt: FixedFormat, stats: QuantStats | None = None,
                   signal: str | None = None) -> np.ndarray:
    """Round-to-nearest-even quantisation of a float array to raw int64."""
    if fmt.word_len > 53:
        raise ValueError(f"array quantisation supports word_len <= 53, got {fmt}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot quantize non-finite values")
    # scaling by a power of two is exact, and rint breaks ties to even
    scaled = np.rint(np.ldexp(x, fmt.frac_len))
    return saturate_array(scaled, fmt, stats, signal)


def saturate_array(raw, fmt: FixedFormat, stats: QuantStats | None = None,
                   signal: str | None = None) -> np.ndarray:
    raw = np.asarray(raw)
    over = raw > fmt.max_raw
    under = raw < fmt.min_raw
    n_sat = int(np.count_nonzero(over) + np.count_nonzero(under))
    if stats is not None:
        stats.record(raw.size, n_sat, signal)
    if n_sat:
        raw = np.where(over, fmt.max_raw, np.where(under, fmt.min_raw, raw))
    return raw.astype(np.int64)


def shift_round_array(raw, shift: int, mode=RoundingMode.NEAREST_EVEN) -> np.ndarray:
    """Vectorised :func:`round_shift` on int64 data."""
    raw = np.asarray(raw, dtype=np.int64)
    if shift <= 0:
        return raw << np.int64(-shift)
    mode = RoundingMode(mode)
    s = np.int64(shift)
    q = raw >> s
    if mode is RoundingMode.FLOOR:
        return q
    r = raw - (q << s)
    if mode is RoundingMode.TOWARD_ZERO:
        return q + ((raw < 0) & (r != 0))
    half = np.int64(1) << np.int64(shift - 1)
    return q + ((r > half) | ((r == half) & ((q & 1) == 1)))


def truncate_array(raw, k: int) -> np.ndarray:
    """Clear the ``k`` low bits of every element."""
    raw = np.asarray(raw, dtype=np.int64)
    if k == 0:
        return raw
    k = np.int64(k)
    return (raw >> k) << k


def raw_to_float(raw, frac_len: int) -> np.ndarray:
    return np.ldexp(np.asarray(raw, dtype=np.float64), -frac_len)
