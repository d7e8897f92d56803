import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posteriorlens.errors import (
    ProtocolMismatchError,
    RemoteError,
    RemoteTimeoutError,
    WireDecodeError,
)
from posteriorlens.refserver import ReferenceServer
from posteriorlens.remote import RemoteEndpoint, connect, decode_frame, encode_frame


@pytest.fixture(scope="module")
def echo_server():
    with ReferenceServer(lambda b, s: b, [4]) as srv:
        yield srv


class TestConnect:
    def test_health_fields_copied(self):
        with ReferenceServer(lambda b, s: b, [784], sigma_aware=True) as srv:
            handle = connect(RemoteEndpoint(srv.base_url))
            assert handle.dimension == 784
            assert handle.sigma_aware is True

    def test_multi_dim_health(self):
        with ReferenceServer(lambda b, s: b, [28, 28], sigma_aware=False) as srv:
            handle = connect(RemoteEndpoint(srv.base_url))
            assert handle.dimension == 784
            assert handle.sigma_aware is False

    def test_version_mismatch(self):
        with ReferenceServer(lambda b, s: b, [4], version=2) as srv:
            with pytest.raises(ProtocolMismatchError):
                connect(RemoteEndpoint(srv.base_url))

    def test_unreachable_endpoint(self):
        with pytest.raises(RemoteError):
            connect(RemoteEndpoint("http://127.0.0.1:9", timeout_ms=300))

    def test_endpoint_validation(self):
        with pytest.raises(Exception):
            RemoteEndpoint("http://x", timeout_ms=0)
        with pytest.raises(Exception):
            RemoteEndpoint("http://x", max_batch=0)


class TestDenoiseRoundTrip:
    def test_echo_is_bitwise(self, echo_server):
        handle = connect(RemoteEndpoint(echo_server.base_url))
        batch = np.random.default_rng(0).standard_normal((5, 4))
        out = handle.evaluate(batch, 0.7)
        assert out.tobytes() == batch.tobytes()

    def test_linear_halving_server(self):
        with ReferenceServer(lambda b, s: b / 2.0, [3]) as srv:
            handle = connect(RemoteEndpoint(srv.base_url))
            batch = np.random.default_rng(1).standard_normal((4, 3))
            np.testing.assert_allclose(handle.evaluate(batch, 1.0), batch / 2.0, atol=1e-15)

    def test_sigma_forwarded_exactly(self):
        with ReferenceServer(lambda b, s: b, [2]) as srv:
            handle = connect(RemoteEndpoint(srv.base_url))
            sigma = 0.12345678901234567
            handle.evaluate(np.zeros((1, 2)), sigma)
            assert srv.requests[-1]["sigma"] == sigma

    def test_batch_split_3_3_1_in_order(self):
        with ReferenceServer(lambda b, s: b, [2]) as srv:
            handle = connect(RemoteEndpoint(srv.base_url, max_batch=3))
            batch = np.arange(14, dtype=np.float64).reshape(7, 2)
            out = handle.evaluate(batch, 1.0)
            assert [r["shape"] for r in srv.requests] == [[3, 2], [3, 2], [1, 2]]
            assert out.tobytes() == batch.tobytes()

    def test_split_equals_unsplit_for_deterministic_server(self):
        batch = np.random.default_rng(3).standard_normal((9, 2))
        with ReferenceServer(lambda b, s: np.tanh(b), [2]) as srv:
            split = connect(RemoteEndpoint(srv.base_url, max_batch=2)).evaluate(batch, 1.0)
            whole = connect(RemoteEndpoint(srv.base_url, max_batch=64)).evaluate(batch, 1.0)
        assert split.tobytes() == whole.tobytes()

    def test_wrong_payload_length_reports_byte_counts(self):
        with ReferenceServer(lambda b, s: b, [2], mangle_response=lambda b: b[:-8]) as srv:
            handle = connect(RemoteEndpoint(srv.base_url))
            with pytest.raises(WireDecodeError, match=r"expected 32 bytes .*got 24"):
                handle.evaluate(np.zeros((2, 2)), 1.0)

    def test_http_error_carries_body(self):
        def boom(batch, sigma):
            raise RuntimeError("gpu on fire")

        with ReferenceServer(boom, [2]) as srv:
            handle = connect(RemoteEndpoint(srv.base_url))
            with pytest.raises(RemoteError):
                handle.evaluate(np.zeros((1, 2)), 1.0)

    def test_timeout_is_retriable_error(self):
        def slow(batch, sigma):
            time.sleep(0.6)
            return batch

        with ReferenceServer(slow, [2]) as srv:
            handle = connect(RemoteEndpoint(srv.base_url, timeout_ms=150))
            with pytest.raises(RemoteTimeoutError):
                handle.evaluate(np.zeros((1, 2)), 1.0)


class TestFrameCodec:
    @given(st.lists(st.integers(0, 2 ** 64 - 1), min_size=1, max_size=64))
    @settings(max_examples=40)
    def test_round_trip_lossless_for_arbitrary_bit_patterns(self, words):
        """Every f64 bit pattern survives, including subnormals and NaN
        payloads: compared at the byte level."""
        raw = np.array(words, dtype=np.uint64).view(np.float64).reshape(1, -1)
        frame = encode_frame(raw, 0.5)
        header, decoded = decode_frame(frame)
        assert decoded.tobytes() == raw.tobytes()
        assert header["shape"] == [1, raw.shape[1]]

    def test_subnormal_round_trip_over_http(self):
        sub = np.array([[5e-324, -2.2250738585072014e-308, 0.0, 1.0]])
        with ReferenceServer(lambda b, s: b, [4]) as srv:
            out = connect(RemoteEndpoint(srv.base_url)).evaluate(sub, 1.0)
        assert out.tobytes() == sub.tobytes()

    def test_missing_header_line(self):
        with pytest.raises(WireDecodeError):
            decode_frame(b"no newline here")

    def test_bad_dtype(self):
        with pytest.raises(WireDecodeError):
            decode_frame(b'{"shape": [1, 1], "sigma": 1.0, "dtype": "f32"}\n' + b"\x00" * 4)
