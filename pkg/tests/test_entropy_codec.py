"""Arithmetic coder and the scene bitstream."""

import struct

import numpy as np
import pytest

from bloomgs.errors import BitstreamMagicError, BitstreamVersionError, SymbolOutOfRangeError, TruncatedPayloadError
from bloomgs.services.anchors import AnchorSet, SceneState, context_outputs
from bloomgs.services.context_model import AnchorDecoder, ContextModel
from bloomgs.services.entropy_codec import (
    FREQ_TOTAL, SYMBOL_MAX, SYMBOL_MIN, canonicalize, code_length_bits, cumulative_counts, decode,
    decode_symbols, encode, encode_symbols,
)
from bloomgs.services.hash_grid import HashGrid
from bloomgs.services.renderer import render
from bloomgs.services.scene_core import Rng

from conftest import make_camera

ETAS = (0.25, 2.5e-4, 0.05)


def small_state(count: int, seed: int = 0) -> SceneState:
    rng = Rng(seed)
    anchors = AnchorSet(
        rng.uniform(-1.0, 1.0, (count, 3)),
        rng.normal((count, 4)),
        rng.uniform(0.05, 0.2, (count, 6)),
        rng.normal((count, 6), 0.1),
    )
    grid = HashGrid.create((2, 4), 64, 2, (np.full(3, -1.0), np.ones(3)), rng.child(2), init_scale=0.5)
    context = ContextModel.create(4, 6, 4, 2, ETAS, rng.child(3))
    decoder = AnchorDecoder.create(4, 6, 2, rng.child(4))
    return SceneState(anchors, grid, context, decoder)


class TestFrequencyTables:

    def test_table_ends(self):
        assert cumulative_counts(np.array([SYMBOL_MIN]), 0.0, 1.0, 1.0)[0] == 0
        assert cumulative_counts(np.array([SYMBOL_MAX + 1]), 0.0, 1.0, 1.0)[0] == FREQ_TOTAL

    def test_every_symbol_has_a_count(self):
        k = np.arange(-200, 201)
        cum = cumulative_counts(k, 0.3, 0.05, 0.01)
        assert np.all(np.diff(cum) >= 1)


class TestSymbolCoding:

    def test_round_trip_with_far_outliers(self, rng):
        count = 200
        mu = rng.normal(scale=3.0, size=count)
        sigma = rng.uniform(0.2, 2.0, size=count)
        omega = rng.uniform(0.1, 1.0, size=count)
        symbols = np.rint(mu / omega + rng.normal(size=count)).astype(np.int64)
        # far outside the +-32 decoding window around the predicted center
        symbols[::37] = [5000, -7000, SYMBOL_MAX, SYMBOL_MIN, 123, -999][: len(symbols[::37])]

        payload = encode_symbols(symbols, mu, sigma, omega)
        np.testing.assert_array_equal(decode_symbols(payload, mu, sigma, omega), symbols)

    def test_payload_close_to_ideal_length(self, rng):
        count = 500
        mu = rng.normal(size=count)
        sigma = np.full(count, 0.7)
        omega = np.full(count, 0.5)
        symbols = np.rint((mu + sigma * rng.normal(size=count)) / omega).astype(np.int64)
        payload = encode_symbols(symbols, mu, sigma, omega)
        ideal = code_length_bits(symbols, mu, sigma, omega)
        assert abs(len(payload) * 8 - ideal) <= 0.03 * count + 40

    def test_out_of_range_symbol(self):
        with pytest.raises(SymbolOutOfRangeError):
            encode_symbols(np.array([SYMBOL_MAX + 1]), np.zeros(1), np.ones(1), np.ones(1))


class TestBitstream:

    @pytest.mark.parametrize("count", [1, 17, 512])
    def test_decode_reproduces_canonical_scene(self, count):
        state = small_state(count)
        canonical, _ = canonicalize(state)
        decoded = decode(encode(state).data)

        np.testing.assert_array_equal(decoded.anchors.locations, canonical.anchors.locations)
        np.testing.assert_array_equal(decoded.anchors.attributes(), canonical.anchors.attributes())
        for a, b in zip(decoded.grid.tables, canonical.grid.tables):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(decoded.context.network.flatten(), canonical.context.network.flatten())
        np.testing.assert_array_equal(decoded.decoder.network.flatten(), canonical.decoder.network.flatten())
        assert decoded.context.etas == canonical.context.etas

    def test_snapped_attributes_stay_close(self):
        state = small_state(17)
        canonical, symbols = canonicalize(state)
        assert symbols.shape == (17, 4 + 6 + 6)
        # half a step at most, and steps never exceed twice the base eta
        assert np.abs(canonical.anchors.attributes() - state.anchors.attributes()).max() <= max(ETAS) + 1e-6

    def test_encoding_is_deterministic(self):
        assert encode(small_state(9, seed=3)).data == encode(small_state(9, seed=3)).data

    def test_report_adds_up(self):
        encoded = encode(small_state(17))
        report = encoded.report
        assert report.total_bytes == len(encoded.data)
        assert report.anchors == 17
        assert report.location_bytes == 17 * 12
        assert report.raw_anchor_bytes == 17 * (3 + 16) * 4

    def test_payload_rate_against_estimate_and_ideal_length(self):
        state = small_state(512)
        report = encode(state).report
        canonical, symbols = canonicalize(state)
        omega, mu, sigma = context_outputs(canonical.anchors, canonical.grid, canonical.context)
        ideal_bits = code_length_bits(symbols, mu, sigma, omega)

        assert report.payload_bytes <= 1.05 * report.entropy_estimate_bytes + 64
        assert report.payload_bytes * 8 >= ideal_bits - 8

    def test_wrong_magic(self):
        data = encode(small_state(2)).data
        with pytest.raises(BitstreamMagicError):
            decode(b"XXXX" + data[4:])

    def test_wrong_version(self):
        data = encode(small_state(2)).data
        with pytest.raises(BitstreamVersionError):
            decode(data[:4] + struct.pack("<H", 9) + data[6:])

    @pytest.mark.parametrize("keep", [3, 20, -1])
    def test_truncated(self, keep):
        data = encode(small_state(2)).data
        with pytest.raises(TruncatedPayloadError):
            decode(data[:keep])

    def test_background_is_applied(self):
        decoded = decode(encode(small_state(1)).data, background=(1.0, 1.0, 1.0))
        assert decoded.background == (1.0, 1.0, 1.0)

    def test_decoded_scene_renders_like_the_quantized_one(self):
        state = small_state(17)
        canonical, _ = canonicalize(state)
        decoded = decode(encode(state).data)
        camera = make_camera(12, 12, focal=10.0, translation=[0.0, 0.0, 4.0])
        expected = render(canonical.to_splats(), camera)
        actual = render(decoded.to_splats(), camera)
        np.testing.assert_array_equal(actual.color.values, expected.color.values)
        np.testing.assert_array_equal(actual.depth.values, expected.depth.values)

    def test_decoded_scene_encodes_to_the_same_bytes(self):
        data = encode(small_state(17)).data
        assert encode(decode(data)).data == data
