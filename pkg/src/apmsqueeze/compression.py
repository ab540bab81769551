"""Compression codecs with error feedback.

Four codecs are provided: 1-bit sign compression with an l2 scale, top-k
sparsification, unbiased stochastic quantisation onto a uniform grid, and the
lossless identity. :func:`compress_with_error_feedback` wraps any of them with
the residual recursion ``delta <- s - C[s]`` where ``s = input + delta``.

Wire format (little-endian, fixed width)::

    header     kind:u8  original_len:u64
    identity   len * f64
    onebit     scale:f64  sign bits packed LSB-first (1 = non-negative)
    topk       count:u64  count * u32 index  count * f64 value
    quant      lo:f64 hi:f64  len * ceil(log2 levels)-bit codes packed LSB-first

``wire_size_bits`` counts everything after the header at bit granularity, so a
serialized chunk is ``9 + ceil(wire_bits / 8)`` bytes long.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DecodeError, DimensionError
from .numerics import as_vector, l2_norm

HEADER = struct.Struct("<BQ")
F64_BITS = 64
INDEX_BITS = 32


class CompressorKind(enum.Enum):
    IDENTITY = 0
    ONE_BIT = 1
    TOP_K = 2
    STOCHASTIC_QUANT = 3

    @classmethod
    def parse(cls, name) -> "CompressorKind":
        if isinstance(name, cls):
            return name
        key = str(name).lower().replace("-", "").replace("_", "")
        aliases = {
            "identity": cls.IDENTITY,
            "none": cls.IDENTITY,
            "onebit": cls.ONE_BIT,
            "1bit": cls.ONE_BIT,
            "sign": cls.ONE_BIT,
            "topk": cls.TOP_K,
            "stochasticquant": cls.STOCHASTIC_QUANT,
            "quant": cls.STOCHASTIC_QUANT,
            "qsgd": cls.STOCHASTIC_QUANT,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ConfigError(f"unknown compressor {name!r}") from None


@dataclass(frozen=True)
class CompressorSpec:
    kind: CompressorKind = CompressorKind.IDENTITY
    k_percent: float = 10.0
    levels: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CompressorKind.parse(self.kind))
        if self.kind is CompressorKind.TOP_K and not 0 < self.k_percent <= 100:
            raise ConfigError("k_percent must lie in (0, 100]")
        if self.kind is CompressorKind.STOCHASTIC_QUANT and int(self.levels) < 2:
            raise ConfigError("levels must be at least 2")

    @property
    def stochastic(self) -> bool:
        return self.kind is CompressorKind.STOCHASTIC_QUANT

    @property
    def lossless(self) -> bool:
        return self.kind is CompressorKind.IDENTITY

    @property
    def name(self) -> str:
        if self.kind is CompressorKind.TOP_K:
            return f"topk{self.k_percent:g}"
        if self.kind is CompressorKind.STOCHASTIC_QUANT:
            return f"quant{self.levels}"
        return {CompressorKind.IDENTITY: "identity", CompressorKind.ONE_BIT: "onebit"}[self.kind]


@dataclass(frozen=True, eq=False)
class CompressedChunk:
    """Encoded form of one dense chunk. Only the fields of ``kind`` are populated."""

    kind: CompressorKind
    original_len: int
    values: np.ndarray | None = None  # identity: dense; topk: kept values
    signs: np.ndarray | None = None  # onebit: True where element >= 0
    scale: float = 0.0
    indices: np.ndarray | None = None  # topk
    codes: np.ndarray | None = None  # quant: level index per element
    lo: float = 0.0
    hi: float = 0.0
    levels: int = 0
    wire_bits: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "wire_bits", _payload_bits(self))


def topk_count(k_percent: float, length: int) -> int:
    """Number of entries top-k keeps: ``ceil(k_percent / 100 * length)``."""
    if length == 0:
        return 0
    # round first so 10% of 1000 is 100, not 101 through float noise
    return min(length, max(1, math.ceil(round(k_percent * length / 100.0, 9))))


def quant_code_bits(levels: int) -> int:
    return max(1, (int(levels) - 1).bit_length())


def _payload_bits(chunk: CompressedChunk) -> int:
    kind, n = chunk.kind, chunk.original_len
    if kind is CompressorKind.IDENTITY:
        return n * F64_BITS
    if kind is CompressorKind.ONE_BIT:
        return n + F64_BITS
    if kind is CompressorKind.TOP_K:
        return len(chunk.indices) * (INDEX_BITS + F64_BITS) + F64_BITS
    return n * quant_code_bits(chunk.levels) + 2 * F64_BITS


def wire_size_bits(chunk: CompressedChunk) -> int:
    return chunk.wire_bits


def stochastic_round(values, lo: float, hi: float, levels: int, rng: np.random.Generator) -> np.ndarray:
    """Unbiased randomized rounding of ``values`` onto ``levels`` points spanning [lo, hi].

    Returns integer level codes. A value sitting a fraction ``p`` of the way
    from one grid point to the next is rounded up with probability ``p``.
    """
    values = np.asarray(values, dtype=np.float64)
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    step = (hi - lo) / (levels - 1)
    pos = np.clip((values - lo) / step, 0.0, levels - 1)
    floor = np.floor(pos)
    up = rng.random(values.shape) < (pos - floor)
    return np.minimum(floor.astype(np.int64) + up, levels - 1)


def dequantize(codes, lo: float, hi: float, levels: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.float64)
    if hi <= lo:
        return np.full(codes.shape, lo, dtype=np.float64)
    return lo + codes * ((hi - lo) / (levels - 1))


def compress(spec: CompressorSpec, x, rng: np.random.Generator | None = None) -> CompressedChunk:
    return _compress(spec, as_vector(x, "input"), rng)


def _compress(spec, x, rng):
    n = x.shape[0]
    kind = spec.kind
    if kind is CompressorKind.IDENTITY:
        return CompressedChunk(kind, n, values=x.copy())
    if kind is CompressorKind.ONE_BIT:
        signs = x >= 0
        norm = l2_norm(x)
        # every sign entry is +-1, so the sign vector has norm sqrt(n)
        scale = norm / math.sqrt(n) if norm > 0 else 0.0
        return CompressedChunk(kind, n, signs=signs, scale=scale)
    if kind is CompressorKind.TOP_K:
        kept = topk_count(spec.k_percent, n)
        # stable sort keeps the lowest index first among equal magnitudes
        order = np.argsort(-np.abs(x), kind="stable")[:kept]
        idx = np.sort(order)
        return CompressedChunk(kind, n, values=x[idx].copy(), indices=idx.astype(np.int64))
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    bound = float(np.max(np.abs(x))) if n else 0.0
    codes = stochastic_round(x, -bound, bound, spec.levels, rng)
    return CompressedChunk(kind, n, codes=codes, lo=-bound, hi=bound, levels=int(spec.levels))


def decompress(chunk: CompressedChunk) -> np.ndarray:
    kind, n = chunk.kind, chunk.original_len
    if kind is CompressorKind.IDENTITY:
        if chunk.values is None or len(chunk.values) != n:
            raise DecodeError("identity payload length mismatch")
        return np.array(chunk.values, dtype=np.float64)
    if kind is CompressorKind.ONE_BIT:
        if chunk.signs is None or len(chunk.signs) != n:
            raise DecodeError("sign payload length mismatch")
        return np.where(chunk.signs, chunk.scale, -chunk.scale).astype(np.float64)
    if kind is CompressorKind.TOP_K:
        if chunk.indices is None or chunk.values is None or len(chunk.indices) != len(chunk.values):
            raise DecodeError("sparse payload malformed")
        if len(chunk.indices) and (chunk.indices.min() < 0 or chunk.indices.max() >= n):
            raise DecodeError("sparse index out of range")
        out = np.zeros(n, dtype=np.float64)
        out[chunk.indices] = chunk.values
        return out
    if chunk.codes is None or len(chunk.codes) != n:
        raise DecodeError("quantized payload length mismatch")
    if len(chunk.codes) and (chunk.codes.min() < 0 or chunk.codes.max() >= chunk.levels):
        raise DecodeError("quantization code out of range")
    return dequantize(chunk.codes, chunk.lo, chunk.hi, chunk.levels)


class ErrorState:
    """Error-feedback residual of fixed length, owned by one sender."""

    __slots__ = ("residual",)

    def __init__(self, length: int):
        self.residual = np.zeros(int(length), dtype=np.float64)

    def __len__(self):
        return self.residual.shape[0]

    def __repr__(self):
        return f"ErrorState(len={len(self)}, norm={l2_norm(self.residual):.3g})"

    def reset(self):
        self.residual[:] = 0.0


def compress_with_error_feedback(
    spec: CompressorSpec, x, state: ErrorState, rng: np.random.Generator | None = None
) -> CompressedChunk:
    """Compress ``x + state.residual`` and store what the codec dropped back into ``state``."""
    x = as_vector(x, "input")
    if x.shape[0] != len(state):
        raise DimensionError(f"input length {x.shape[0]} does not match error state length {len(state)}")
    compensated = x + state.residual
    chunk = _compress(spec, compensated, rng)
    if spec.lossless:
        state.residual[:] = 0.0
    else:
        state.residual[:] = compensated - decompress(chunk)
    return chunk


# -- binary serialization ---------------------------------------------------


def _pack_codes(codes: np.ndarray, width: int) -> bytes:
    bits = ((codes[:, None] >> np.arange(width)) & 1).astype(np.uint8).ravel()
    return np.packbits(bits, bitorder="little").tobytes()


def _unpack_codes(buf: bytes, n: int, width: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")[: n * width]
    bits = bits.reshape(n, width).astype(np.int64)
    return (bits << np.arange(width)).sum(axis=1)


def serialize(chunk: CompressedChunk) -> bytes:
    head = HEADER.pack(chunk.kind.value, chunk.original_len)
    kind = chunk.kind
    if kind is CompressorKind.IDENTITY:
        body = np.asarray(chunk.values, dtype="<f8").tobytes()
    elif kind is CompressorKind.ONE_BIT:
        body = struct.pack("<d", chunk.scale) + np.packbits(chunk.signs.astype(np.uint8), bitorder="little").tobytes()
    elif kind is CompressorKind.TOP_K:
        body = (
            struct.pack("<Q", len(chunk.indices))
            + np.asarray(chunk.indices, dtype="<u4").tobytes()
            + np.asarray(chunk.values, dtype="<f8").tobytes()
        )
    else:
        body = struct.pack("<dd", chunk.lo, chunk.hi) + _pack_codes(
            np.asarray(chunk.codes, dtype=np.int64), quant_code_bits(chunk.levels)
        )
    return head + body


def deserialize(data: bytes, levels: int | None = None) -> CompressedChunk:
    """Inverse of :func:`serialize`.

    ``levels`` is codec configuration shared out of band; it is only needed
    for quantized chunks.
    """
    data = bytes(data)
    if len(data) < HEADER.size:
        raise DecodeError("truncated header")
    code, n = HEADER.unpack_from(data)
    try:
        kind = CompressorKind(code)
    except ValueError:
        raise DecodeError(f"unknown codec id {code}") from None
    body = data[HEADER.size :]

    def expect(size):
        if len(body) != size:
            raise DecodeError(f"{kind.name} payload is {len(body)} bytes, expected {size}")

    if kind is CompressorKind.IDENTITY:
        expect(8 * n)
        values = np.frombuffer(body, dtype="<f8").astype(np.float64)
        chunk = CompressedChunk(kind, n, values=values)
    elif kind is CompressorKind.ONE_BIT:
        expect(8 + (n + 7) // 8)
        (scale,) = struct.unpack_from("<d", body)
        signs = np.unpackbits(np.frombuffer(body[8:], dtype=np.uint8), bitorder="little")[:n].astype(bool)
        chunk = CompressedChunk(kind, n, signs=signs, scale=scale)
    elif kind is CompressorKind.TOP_K:
        if len(body) < 8:
            raise DecodeError("truncated top-k count")
        (count,) = struct.unpack_from("<Q", body)
        expect(8 + 12 * count)
        idx = np.frombuffer(body, dtype="<u4", count=count, offset=8).astype(np.int64)
        values = np.frombuffer(body, dtype="<f8", count=count, offset=8 + 4 * count).astype(np.float64)
        chunk = CompressedChunk(kind, n, values=values, indices=idx)
    else:
        if levels is None or levels < 2:
            raise DecodeError("quantized chunk needs the codec's level count")
        width = quant_code_bits(levels)
        expect(16 + (n * width + 7) // 8)
        lo, hi = struct.unpack_from("<dd", body)
        codes = _unpack_codes(body[16:], n, width)
        chunk = CompressedChunk(kind, n, codes=codes, lo=lo, hi=hi, levels=int(levels))
    if not np.all(np.isfinite(decompress(chunk))):
        raise DecodeError("decoded chunk contains non-finite values")
    return chunk
