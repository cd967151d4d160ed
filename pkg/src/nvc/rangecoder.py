"""Reference range coder and integer-CDF construction.

This is the byte-format authority for the whole project: a 32-bit range coder
with 16-bit probability precision and byte-wise renormalization (the classic
LZMA layout with a 64-bit low accumulator carrying pending 0xFF bytes). The
canonical decoder discards the first emitted byte, so the encoder never writes
it; a coded chunk therefore costs exactly 4 bytes beyond the renormalization
output. Any other implementation of this format must match it byte for byte.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Sequence

PRECISION_BITS = 16
TOTAL = 1 << PRECISION_BITS
K_TOP = 1 << 24
MASK32 = (1 << 32) - 1

RC_FORMAT_VERSION = 1


class RangeCoderError(ValueError):
    pass


class SymbolOutOfRange(RangeCoderError):
    pass


class MalformedStream(RangeCoderError):
    pass


@dataclass(frozen=True)
class CdfTable:
    """Cumulative counts for symbols min_q..max_q inclusive.

    cdf has len (max_q - min_q + 2); cdf[0] = 0, cdf[-1] = TOTAL, strictly
    increasing so every symbol has frequency >= 1.
    """

    cdf: tuple
    min_q: int
    max_q: int

    def __post_init__(self):
        k = self.max_q - self.min_q + 1
        if k < 1:
            raise RangeCoderError(f"empty-range: [{self.min_q}, {self.max_q}]")
        if len(self.cdf) != k + 1 or self.cdf[0] != 0 or self.cdf[-1] != TOTAL:
            raise RangeCoderError("cdf must run from 0 to TOTAL over the range")
        if any(b <= a for a, b in zip(self.cdf, self.cdf[1:])):
            raise RangeCoderError("cdf must be strictly increasing")

    def span(self, symbol: int) -> tuple[int, int]:
        """(cumulative, frequency) counts for one symbol."""
        if not self.min_q <= symbol <= self.max_q:
            raise SymbolOutOfRange(
                f"symbol {symbol} outside [{self.min_q}, {self.max_q}]")
        i = symbol - self.min_q
        return self.cdf[i], self.cdf[i + 1] - self.cdf[i]


def quantize_pmf(pmf: Sequence[float], total: int = TOTAL) -> list[int]:
    """Largest-remainder quantization of a pmf to integer counts summing to
    `total`, every count >= 1.

    The op sequence is part of the cross-language contract: sequential float64
    sum, per-entry p / s * total, floor, remainder distribution sorted by
    (fraction desc, index asc), then zero promotion stealing one count at a
    time from the current largest entry (ties to the lowest index).
    """
    k = len(pmf)
    if k < 1:
        raise RangeCoderError("empty-range: pmf has no symbols")
    if k > total:
        raise RangeCoderError(f"{k} symbols cannot share {total} counts")
    s = 0.0
    for p in pmf:
        if not (p >= 0.0 and math.isfinite(p)):
            raise RangeCoderError(f"pmf entries must be finite and >= 0, got {p!r}")
        s += p
    if s <= 0.0:
        raise RangeCoderError("pmf sums to zero")
    shares = [p / s * total for p in pmf]
    counts = [math.floor(x) for x in shares]
    remainder = total - sum(counts)
    order = sorted(range(k), key=lambda i: (-(shares[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    for i in range(k):
        if counts[i] == 0:
            counts[i] = 1
            j = max(range(k), key=lambda t: (counts[t], -t))
            if counts[j] <= 1:
                raise RangeCoderError("cannot promote zeros: no donor count left")
            counts[j] -= 1
    return counts


def build_cdf(pmf: Sequence[float], symbol_range: tuple[int, int]) -> CdfTable:
    """Quantize a pmf over [min_q, max_q] into a CdfTable."""
    min_q, max_q = symbol_range
    if max_q < min_q:
        raise RangeCoderError(f"empty-range: [{min_q}, {max_q}]")
    if len(pmf) != max_q - min_q + 1:
        raise RangeCoderError(
            f"pmf length {len(pmf)} does not cover [{min_q}, {max_q}]")
    counts = quantize_pmf(pmf)
    cdf = [0]
    for c in counts:
        cdf.append(cdf[-1] + c)
    return CdfTable(cdf=tuple(cdf), min_q=min_q, max_q=max_q)


def laplace_symbol_pmf(sigma: float, min_q: int, max_q: int) -> list[float]:
    """Interval masses of a zero-centered Laplace with scale `sigma` on the
    integer grid, with out-of-range tail mass folded into the two boundary
    symbols. Written to be exactly symmetric in the sign of the offset."""
    if max_q < min_q:
        raise RangeCoderError(f"empty-range: [{min_q}, {max_q}]")
    b = float(sigma)

    def tail(x: float) -> float:
        # mass at distance > x from the mode, one side; mirrored for the two
        # boundary folds so symmetric ranges stay bit-exactly symmetric
        if x >= 0.0:
            return 0.5 * math.exp(-x / b)
        return 1.0 - 0.5 * math.exp(x / b)

    def interval(k: int) -> float:
        if k == 0:
            return 1.0 - math.exp(-0.5 / b)
        a = abs(k)
        return 0.5 * math.exp(-(a - 0.5) / b) * -math.expm1(-1.0 / b)

    pmf = [interval(k) for k in range(min_q, max_q + 1)]
    pmf[0] = tail(-(min_q + 0.5))
    pmf[-1] = tail(max_q - 0.5)
    if min_q == max_q:
        pmf[0] = 1.0
    return pmf


def build_laplace_cdf(sigma: float, symbol_range: tuple[int, int]) -> CdfTable:
    return build_cdf(laplace_symbol_pmf(sigma, *symbol_range), symbol_range)


class RangeEncoder:
    """Streaming encoder; feed (cumulative, frequency) pairs, then flush."""

    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.skipped_lead = False
        self.out = bytearray()

    def encode(self, cum: int, freq: int) -> None:
        r = self.range >> PRECISION_BITS
        self.low += r * cum
        self.range = r * freq
        while self.range < K_TOP:
            self.range = (self.range << 8) & MASK32
            self._shift_low()

    def encode_symbol(self, symbol: int, table: CdfTable) -> None:
        self.encode(*table.span(symbol))

    def _emit(self, byte: int) -> None:
        # The canonical decoder never looks at the first byte; drop it here.
        if self.skipped_lead:
            self.out.append(byte)
        else:
            self.skipped_lead = True

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            self._emit((self.cache + carry) & 0xFF)
            for _ in range(self.cache_size - 1):
                self._emit((0xFF + carry) & 0xFF)
            self.cache = (self.low >> 24) & 0xFF
            self.cache_size = 0
        self.cache_size += 1
        self.low = (self.low << 8) & MASK32

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    """Mirror of RangeEncoder over a finished byte buffer."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = ((self.code << 8) | self._byte()) & MASK32

    def _byte(self) -> int:
        # Reads past the end decode as zero; framing gives exact chunk bounds,
        # and a well-formed stream consumes exactly len(data) bytes.
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        self.pos += 1
        return 0

    def decode_symbol(self, table: CdfTable) -> int:
        r = self.range >> PRECISION_BITS
        value = min(self.code // r, TOTAL - 1)
        i = bisect_right(table.cdf, value) - 1
        cum = table.cdf[i]
        freq = table.cdf[i + 1] - cum
        self.code -= r * cum
        self.range = r * freq
        while self.range < K_TOP:
            self.code = ((self.code << 8) | self._byte()) & MASK32
            self.range = (self.range << 8) & MASK32
        return table.min_q + i


def rc_encode(symbols: Sequence[int], cdfs: Sequence[CdfTable]) -> tuple[bytes, int]:
    """Encode one chunk; cdfs holds the per-symbol table (may repeat one)."""
    if len(symbols) != len(cdfs):
        raise RangeCoderError("one table per symbol required")
    enc = RangeEncoder()
    for s, t in zip(symbols, cdfs):
        enc.encode_symbol(int(s), t)
    return enc.finish(), len(symbols)


def rc_decode(data: bytes, cdfs: Sequence[CdfTable], symbol_count: int) -> list[int]:
    if symbol_count != len(cdfs):
        raise MalformedStream(
            f"chunk claims {symbol_count} symbols, {len(cdfs)} tables supplied")
    dec = RangeDecoder(data)
    out = [dec.decode_symbol(t) for t in cdfs]
    if dec.pos > len(data):
        # a well-formed chunk is consumed exactly; overshoot means truncation
        raise MalformedStream("stream exhausted before all symbols decoded")
    return out
