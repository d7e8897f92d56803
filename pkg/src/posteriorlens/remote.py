"""Client for external denoisers over a minimal HTTP wire protocol.

Pretrained neural denoisers live out-of-process, often on a GPU host;
this module talks to them and presents the result as an ordinary
``DenoiserHandle``.

Protocol (version 1):

* ``GET /v1/health`` -> JSON ``{"version": 1, "dims": [...],
  "sigma_aware": bool}``. ``dims`` is the signal shape; the handle's
  dimension is its product.
* ``POST /v1/denoise`` with a body of one JSON header line
  ``{"shape": [B, d], "sigma": f, "dtype": "f64"}`` terminated by a
  newline, followed by the raw little-endian float64 payload of B*d
  values. The response uses the same framing. Payload bytes must be
  bit-exact in both directions; that is what makes the protocol safe to
  stick inside high-order finite-difference loops.

There is deliberately no client-side retry: subspace iteration must see
failures, not silently re-evaluated (and thus possibly inconsistent)
batches.
"""

import json

import httpx
import numpy as np

from .denoisers import DenoiserHandle
from .errors import (
    ProtocolMismatchError,
    RemoteError,
    RemoteTimeoutError,
    ValidationError,
    WireDecodeError,
)

__all__ = ["RemoteEndpoint", "connect", "encode_frame", "decode_frame"]

PROTOCOL_VERSION = 1


class RemoteEndpoint:
    """Where and how to reach an external denoiser."""

    def __init__(self, base_url: str, timeout_ms: float = 30000.0, max_batch: int = 64):
        if timeout_ms <= 0:
            raise ValidationError(f"timeout must be positive, got {timeout_ms}")
        if max_batch < 1:
            raise ValidationError(f"max_batch must be >= 1, got {max_batch}")
        self.base_url = base_url.rstrip("/")
        self.timeout_ms = float(timeout_ms)
        self.max_batch = int(max_batch)


def encode_frame(batch: np.ndarray, sigma: float) -> bytes:
    """Header line + raw little-endian f64 payload."""
    batch = np.ascontiguousarray(batch, dtype="<f8")
    header = json.dumps(
        {"shape": list(batch.shape), "sigma": float(sigma), "dtype": "f64"}
    )
    return header.encode("utf-8") + b"\n" + batch.tobytes()


def decode_frame(body: bytes) -> tuple[dict, np.ndarray]:
    """Parse a frame; the payload byte count must match the header shape."""
    newline = body.find(b"\n")
    if newline < 0:
        raise WireDecodeError("frame missing header line")
    try:
        header = json.loads(body[:newline].decode("utf-8"))
        shape = tuple(int(s) for s in header["shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise WireDecodeError(f"malformed frame header: {exc}") from exc
    if header.get("dtype", "f64") != "f64":
        raise WireDecodeError(f"unsupported dtype {header.get('dtype')!r}")
    payload = body[newline + 1 :]
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise WireDecodeError(
            f"payload length mismatch: expected {expected} bytes for shape {shape}, "
            f"got {len(payload)}"
        )
    return header, np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def connect(endpoint: RemoteEndpoint) -> DenoiserHandle:
    """Health-check the endpoint and wrap it as a DenoiserHandle.

    Batches larger than ``endpoint.max_batch`` are split into
    consecutive requests and the responses concatenated in order.
    """
    client = httpx.Client(
        base_url=endpoint.base_url, timeout=endpoint.timeout_ms / 1000.0
    )
    try:
        resp = client.get("/v1/health")
    except httpx.TimeoutException as exc:
        raise RemoteTimeoutError(f"health check timed out: {exc}") from exc
    except httpx.TransportError as exc:
        raise RemoteError(f"endpoint unreachable: {exc}") from exc
    if resp.status_code >= 400:
        raise RemoteError(f"health check failed ({resp.status_code}): {resp.text}")
    health = resp.json()
    version = health.get("version")
    if version != PROTOCOL_VERSION:
        raise ProtocolMismatchError(
            f"server speaks protocol {version!r}, client requires {PROTOCOL_VERSION}"
        )
    dims = health.get("dims")
    if not dims:
        raise RemoteError(f"health response missing dims: {health!r}")
    dimension = int(np.prod(dims))
    sigma_aware = bool(health.get("sigma_aware", True))

    def evaluate(batch: np.ndarray, sigma: float) -> np.ndarray:
        chunks = []
        for start in range(0, batch.shape[0], endpoint.max_batch):
            chunk = batch[start : start + endpoint.max_batch]
            try:
                resp = client.post(
                    "/v1/denoise",
                    content=encode_frame(chunk, sigma),
                    headers={"content-type": "application/octet-stream"},
                )
            except httpx.TimeoutException as exc:
                raise RemoteTimeoutError(f"denoise request timed out: {exc}") from exc
            except httpx.TransportError as exc:
                raise RemoteError(f"transport failure: {exc}") from exc
            if resp.status_code >= 400:
                raise RemoteError(
                    f"remote denoiser error ({resp.status_code}): {resp.text}"
                )
            _, out = decode_frame(resp.content)
            if out.shape != chunk.shape:
                raise WireDecodeError(
                    f"response shape {out.shape} != request shape {chunk.shape}"
                )
            chunks.append(out)
        return np.concatenate(chunks, axis=0)

    return DenoiserHandle(evaluate=evaluate, dimension=dimension, sigma_aware=sigma_aware)
