"""
Entropy Codec
Self-describing bitstream: raw header, float32 model and locations, and
arithmetic-coded anchor attributes under the context model's Gaussians

Layout (little-endian):
  magic "BLMS" | version u16 | flags u16 | anchors u32 | D^a u16 | K u16
  levels u8 | per level: resolution u16, T u32, F u8
  model blob bytes u32 | float32: bbox(6), etas(3), grid tables, context weights, decoder weights
  locations N x 3 float32
  payload bytes u64 | arithmetic-coded symbols, anchor-major then attribute order
Decoded attributes are k * omega; the semi-soft tanh residual is not stored.
"""

import logging
import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import special

from bloomgs.errors import (
    BitstreamMagicError, BitstreamVersionError, FormatError, SymbolOutOfRangeError, TruncatedPayloadError,
)
from bloomgs.models import SizeReport
from bloomgs.services.anchors import AnchorSet, SceneState, context_outputs
from bloomgs.services.context_model import AnchorDecoder, ContextModel, DECODED_PER_OFFSET
from bloomgs.services.hash_grid import HashGrid, HashLevel
from bloomgs.services.quantization import bits, feature_probability, lattice_index

logger = logging.getLogger(__name__)

MAGIC = b"BLMS"
VERSION = 1

SYMBOL_MIN = -(2 ** 15)
SYMBOL_MAX = 2 ** 15 - 1
FREQ_TOTAL = 2 ** 24
# one count reserved for every symbol in the alphabet
SPREAD_TOTAL = FREQ_TOTAL - (SYMBOL_MAX - SYMBOL_MIN + 1)
WINDOW = 32

STATE_BITS = 32
FULL_RANGE = 1 << STATE_BITS
HALF_RANGE = FULL_RANGE >> 1
QUARTER_RANGE = HALF_RANGE >> 1
STATE_MASK = FULL_RANGE - 1

_HEAD = struct.Struct("<4sHHIHHB")
_LEVEL = struct.Struct("<HIB")


# ==================== Frequency model ====================

def cumulative_counts(k: np.ndarray, mu: np.ndarray, sigma: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """cum(k) = floor(Phi(((k - 1/2) omega - mu) / sigma) * SPREAD) + (k - kmin).

    cum(kmin) = 0 and cum(kmax + 1) = TOTAL; every symbol gets a count of at least 1.
    """
    k = np.asarray(k, dtype=np.int64)
    edge = ((k - 0.5) * omega - mu) / sigma
    cum = np.floor(special.ndtr(edge) * SPREAD_TOTAL).astype(np.int64) + (k - SYMBOL_MIN)
    cum = np.where(k <= SYMBOL_MIN, 0, cum)
    return np.where(k > SYMBOL_MAX, FREQ_TOTAL, cum)


def _locate(value: int, mu: float, sigma: float, omega: float) -> int:
    """Symbol whose [cum(k), cum(k+1)) holds value, by coarse-to-fine vectorized search."""
    lo, hi = SYMBOL_MIN, SYMBOL_MAX + 1
    while hi - lo > 1:
        grid = np.unique(np.linspace(lo, hi, num=min(257, hi - lo + 1)).astype(np.int64))
        cums = cumulative_counts(grid, mu, sigma, omega)
        pos = int(np.searchsorted(cums, value, side="right")) - 1
        pos = min(max(pos, 0), len(grid) - 2)
        lo, hi = int(grid[pos]), int(grid[pos + 1])
    return lo


# ==================== Arithmetic coder ====================

class _BitWriter:
    def __init__(self):
        self.bytes = bytearray()
        self.current = 0
        self.filled = 0

    def write(self, bit: int) -> None:
        self.current = (self.current << 1) | bit
        self.filled += 1
        if self.filled == 8:
            self.bytes.append(self.current)
            self.current = 0
            self.filled = 0

    def finish(self) -> bytes:
        while self.filled:
            self.write(0)
        return bytes(self.bytes)


class _BitReader:
    def __init__(self, data: bytes):
        self.data = data
        self.position = 0

    def read(self) -> int:
        byte_index = self.position >> 3
        if byte_index >= len(self.data):
            return 0
        bit = (self.data[byte_index] >> (7 - (self.position & 7))) & 1
        self.position += 1
        return bit


class ArithmeticEncoder:
    """32-bit integer arithmetic coder with underflow (pending bit) handling."""

    def __init__(self):
        self.low = 0
        self.high = STATE_MASK
        self.pending = 0
        self.output = _BitWriter()

    def encode(self, cum_low: int, cum_high: int, total: int = FREQ_TOTAL) -> None:
        span = self.high - self.low + 1
        self.high = self.low + cum_high * span // total - 1
        self.low = self.low + cum_low * span // total
        while ((self.low ^ self.high) & HALF_RANGE) == 0:
            bit = self.low >> (STATE_BITS - 1)
            self.output.write(bit)
            for _ in range(self.pending):
                self.output.write(bit ^ 1)
            self.pending = 0
            self.low = (self.low << 1) & STATE_MASK
            self.high = ((self.high << 1) & STATE_MASK) | 1
        while self.low & ~self.high & QUARTER_RANGE:
            self.pending += 1
            self.low = (self.low << 1) ^ HALF_RANGE
            self.high = ((self.high ^ HALF_RANGE) << 1) | HALF_RANGE | 1

    def finish(self) -> bytes:
        self.output.write(1)
        return self.output.finish()


class ArithmeticDecoder:
    def __init__(self, data: bytes):
        self.input = _BitReader(data)
        self.low = 0
        self.high = STATE_MASK
        self.code = 0
        for _ in range(STATE_BITS):
            self.code = (self.code << 1) | self.input.read()

    def target(self, total: int = FREQ_TOTAL) -> int:
        """Cumulative count the next symbol's interval must contain."""
        span = self.high - self.low + 1
        offset = self.code - self.low
        if offset < 0 or offset >= span:
            raise SymbolOutOfRangeError("Arithmetic decoder state left the coding interval")
        return ((offset + 1) * total - 1) // span

    def consume(self, cum_low: int, cum_high: int, total: int = FREQ_TOTAL) -> None:
        span = self.high - self.low + 1
        self.high = self.low + cum_high * span // total - 1
        self.low = self.low + cum_low * span // total
        while ((self.low ^ self.high) & HALF_RANGE) == 0:
            self.code = ((self.code << 1) & STATE_MASK) | self.input.read()
            self.low = (self.low << 1) & STATE_MASK
            self.high = ((self.high << 1) & STATE_MASK) | 1
        while self.low & ~self.high & QUARTER_RANGE:
            self.code = (self.code & HALF_RANGE) | ((self.code << 1) & (STATE_MASK >> 1)) | self.input.read()
            self.low = (self.low << 1) ^ HALF_RANGE
            self.high = ((self.high ^ HALF_RANGE) << 1) | HALF_RANGE | 1


def encode_symbols(symbols: np.ndarray, mu: np.ndarray, sigma: np.ndarray, omega: np.ndarray) -> bytes:
    """Code integer symbols, one Gaussian-derived frequency table per symbol."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size and (symbols.min() < SYMBOL_MIN or symbols.max() > SYMBOL_MAX):
        raise SymbolOutOfRangeError(
            f"Symbols must lie in [{SYMBOL_MIN}, {SYMBOL_MAX}], got [{symbols.min()}, {symbols.max()}]"
        )
    mu, sigma, omega = (np.asarray(x, dtype=np.float64).reshape(-1) for x in (mu, sigma, omega))
    lows = cumulative_counts(symbols, mu, sigma, omega)
    highs = cumulative_counts(symbols + 1, mu, sigma, omega)

    encoder = ArithmeticEncoder()
    for low, high in zip(lows.tolist(), highs.tolist()):
        encoder.encode(low, high)
    return encoder.finish()


def decode_symbols(payload: bytes, mu: np.ndarray, sigma: np.ndarray, omega: np.ndarray) -> np.ndarray:
    mu, sigma, omega = (np.asarray(x, dtype=np.float64).reshape(-1) for x in (mu, sigma, omega))
    count = mu.size
    centers = np.clip(lattice_index(mu, omega), SYMBOL_MIN + WINDOW, SYMBOL_MAX - WINDOW).astype(np.int64)
    window_k = centers[:, None] + np.arange(-WINDOW, WINDOW + 2)[None, :]
    window_cum = cumulative_counts(window_k, mu[:, None], sigma[:, None], omega[:, None])

    decoder = ArithmeticDecoder(payload)
    symbols = np.empty(count, dtype=np.int64)
    for i in range(count):
        value = decoder.target()
        row = window_cum[i]
        if row[0] <= value < row[-1]:
            pos = int(np.searchsorted(row, value, side="right")) - 1
            k = int(window_k[i, pos])
            low, high = int(row[pos]), int(row[pos + 1])
        else:
            k = _locate(value, mu[i], sigma[i], omega[i])
            low, high = (int(c) for c in cumulative_counts(np.array([k, k + 1]), mu[i], sigma[i], omega[i]))
        decoder.consume(low, high)
        symbols[i] = k
    return symbols


def code_length_bits(symbols: np.ndarray, mu: np.ndarray, sigma: np.ndarray, omega: np.ndarray) -> float:
    """Ideal code length of symbols under the integer frequency tables."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    mu, sigma, omega = (np.asarray(x, dtype=np.float64).reshape(-1) for x in (mu, sigma, omega))
    counts = cumulative_counts(symbols + 1, mu, sigma, omega) - cumulative_counts(symbols, mu, sigma, omega)
    return float(np.sum(np.log2(FREQ_TOTAL / counts)))


# ==================== Scene canonical form ====================

def _f32(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def canonicalize(state: SceneState) -> Tuple[SceneState, np.ndarray]:
    """Round stored floats to float32 and snap attributes to k * omega.

    Returns the scene exactly as decode() will reproduce it, plus the symbols.
    """
    grid = HashGrid([HashLevel(level.resolution, _f32(level.table)) for level in state.grid.levels],
                    _f32(state.grid.bbox_min), _f32(state.grid.bbox_max))
    context = state.context.with_params({k: _f32(v) for k, v in state.context.network.params.items()})
    context = ContextModel(context.network, tuple(float(e) for e in _f32(context.etas)),
                           context.feature_dim, context.offsets_per_anchor)
    decoder = state.decoder.with_params({k: _f32(v) for k, v in state.decoder.network.params.items()})
    anchors = AnchorSet(_f32(state.anchors.locations), state.anchors.features,
                        state.anchors.scalings, state.anchors.offsets)

    omega, _, _ = context_outputs(anchors, grid, context)
    indices = lattice_index(anchors.attributes(), omega)
    if indices.size and (indices.min() < SYMBOL_MIN or indices.max() > SYMBOL_MAX):
        raise SymbolOutOfRangeError(
            f"Lattice indices span [{indices.min():.0f}, {indices.max():.0f}], outside [{SYMBOL_MIN}, {SYMBOL_MAX}]"
        )
    symbols = indices.astype(np.int64)
    snapped = anchors.with_attributes(symbols * omega)
    return SceneState(snapped, grid, context, decoder, state.background), symbols


# ==================== Container ====================

@dataclass
class EncodedScene:
    data: bytes
    report: SizeReport


def _model_blob(state: SceneState) -> np.ndarray:
    parts = [state.grid.bbox_min, state.grid.bbox_max, np.asarray(state.context.etas)]
    parts += [table.reshape(-1) for table in state.grid.tables]
    parts += [state.context.network.flatten(), state.decoder.network.flatten()]
    return np.concatenate(parts).astype("<f4")


def encode(state: SceneState) -> EncodedScene:
    """Serialize a scene; attributes are coded as their lattice indices."""
    canonical, symbols = canonicalize(state)
    anchors = canonical.anchors
    omega, mu, sigma = context_outputs(anchors, canonical.grid, canonical.context)
    payload = encode_symbols(symbols, mu, sigma, omega)

    levels = canonical.grid.levels
    header = bytearray(_HEAD.pack(MAGIC, VERSION, 0, len(anchors), anchors.feature_dim,
                                  anchors.offsets_per_anchor, len(levels)))
    for level in levels:
        header += _LEVEL.pack(level.resolution, level.size, level.features)
    blob = _model_blob(canonical).tobytes()
    header += struct.pack("<I", len(blob))
    locations = anchors.locations.astype("<f4").tobytes()
    payload_header = struct.pack("<Q", len(payload))

    data = bytes(header) + blob + locations + payload_header + payload
    probabilities = feature_probability(anchors.attributes(), omega, mu, sigma)
    report = size_report(
        header_bytes=len(header) + len(payload_header),
        model_bytes=len(blob),
        location_bytes=len(locations),
        payload_bytes=len(payload),
        anchors=len(anchors),
        attribute_dim=anchors.attribute_dim,
        estimate_bits=float(bits(probabilities).sum()),
    )
    logger.info("Encoded %d anchors into %d bytes (payload %d)", len(anchors), len(data), len(payload))
    return EncodedScene(data, report)


def size_report(header_bytes: int, model_bytes: int, location_bytes: int, payload_bytes: int,
                anchors: int, attribute_dim: int, estimate_bits: float) -> SizeReport:
    raw = anchors * (3 + attribute_dim) * 4
    return SizeReport(
        header_bytes=header_bytes,
        model_bytes=model_bytes,
        location_bytes=location_bytes,
        payload_bytes=payload_bytes,
        total_bytes=header_bytes + model_bytes + location_bytes + payload_bytes,
        anchors=anchors,
        bits_per_anchor=payload_bytes * 8.0 / anchors if anchors else 0.0,
        entropy_estimate_bytes=estimate_bits / 8.0,
        raw_anchor_bytes=raw,
        anchor_data_ratio=(location_bytes + payload_bytes) / raw if raw else 0.0,
    )


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.data):
            raise TruncatedPayloadError(
                f"Bitstream ends inside {what}: need {size} bytes at offset {self.offset}, "
                f"have {len(self.data) - self.offset}"
            )
        chunk = self.data[self.offset: self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, layout: struct.Struct, what: str):
        return layout.unpack(self.take(layout.size, what))


def _split_blob(blob: np.ndarray, levels: List[Tuple[int, int, int]], feature_dim: int,
                offsets_per_anchor: int):
    """Recover grid, context model and decoder; the shared hidden width is implied by the length."""
    grid_floats = sum(t * f for _, t, f in levels)
    hash_dim = sum(f for _, _, f in levels)
    attribute_dim = feature_dim + 6 + 3 * offsets_per_anchor
    decoded = DECODED_PER_OFFSET * offsets_per_anchor
    fixed = 9 + grid_floats + 3 + 2 * attribute_dim + decoded
    per_hidden = (hash_dim + 1 + 3 + 2 * attribute_dim) + (feature_dim + 1 + decoded)
    hidden, remainder = divmod(blob.size - fixed, per_hidden)
    if remainder or hidden <= 0:
        raise FormatError(f"Model blob of {blob.size} floats does not match the declared layout")

    bbox_min, bbox_max = blob[0:3], blob[3:6]
    etas = tuple(float(e) for e in blob[6:9])
    offset = 9
    grid_levels = []
    for resolution, size, features in levels:
        grid_levels.append(HashLevel(resolution, blob[offset: offset + size * features].reshape(size, features)))
        offset += size * features
    grid = HashGrid(grid_levels, bbox_min, bbox_max)

    context = ContextModel.empty(hash_dim, hidden, feature_dim, offsets_per_anchor, etas)
    context = ContextModel(context.network.unflatten(blob[offset: offset + context.network.size]),
                           etas, feature_dim, offsets_per_anchor)
    offset += context.network.size
    decoder = AnchorDecoder.empty(feature_dim, hidden, offsets_per_anchor)
    decoder = AnchorDecoder(decoder.network.unflatten(blob[offset: offset + decoder.network.size]),
                            offsets_per_anchor)
    return grid, context, decoder


def decode(data: bytes, background: Tuple[float, float, float] = (0.0, 0.0, 0.0)) -> SceneState:
    """Parse a bitstream back into the canonical scene."""
    reader = _Reader(data)
    magic, version, _flags, count, feature_dim, offsets_per_anchor, level_count = reader.unpack(_HEAD, "header")
    if magic != MAGIC:
        raise BitstreamMagicError(f"Not a scene bitstream: magic {magic!r}")
    if version != VERSION:
        raise BitstreamVersionError(f"Unsupported bitstream version {version} (expected {VERSION})")

    levels = [reader.unpack(_LEVEL, "level table") for _ in range(level_count)]
    (blob_bytes,) = reader.unpack(struct.Struct("<I"), "model length")
    if blob_bytes % 4:
        raise FormatError("Model blob length is not a whole number of float32 values")
    blob = np.frombuffer(reader.take(blob_bytes, "model blob"), dtype="<f4").astype(np.float64)
    grid, context, decoder = _split_blob(blob, levels, feature_dim, offsets_per_anchor)

    locations = np.frombuffer(reader.take(count * 12, "locations"), dtype="<f4").astype(np.float64)
    (payload_bytes,) = reader.unpack(struct.Struct("<Q"), "payload length")
    payload = reader.take(payload_bytes, "payload")

    attribute_dim = feature_dim + 6 + 3 * offsets_per_anchor
    shell = AnchorSet(locations.reshape(count, 3), np.zeros((count, feature_dim)), np.zeros((count, 6)),
                      np.zeros((count, 3 * offsets_per_anchor)))
    omega, mu, sigma = context_outputs(shell, grid, context)
    symbols = decode_symbols(payload, mu, sigma, omega).reshape(count, attribute_dim)
    anchors = shell.with_attributes(symbols * omega)
    return SceneState(anchors, grid, context, decoder, background)

