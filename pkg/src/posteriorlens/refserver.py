"""Reference implementation of the /v1 denoiser wire protocol.

A tiny stdlib HTTP server that serves any vector function as an
external denoiser. It exists so that the client, the protocol docs and
integration tests all have one executable ground truth; it is also
handy for exposing the analytic reference denoisers to other tooling:

    python -m posteriorlens.refserver --port 9700 --mode echo --dims 16
"""

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .remote import PROTOCOL_VERSION, decode_frame, encode_frame

__all__ = ["ReferenceServer", "serve_function"]


class ReferenceServer:
    """Threaded HTTP server exposing one denoiser function.

    ``fn(batch, sigma) -> batch`` is served under POST /v1/denoise with
    the health document announcing ``dims`` and ``sigma_aware``. Use as
    a context manager in tests; ``base_url`` points at the live server.
    """

    def __init__(self, fn, dims, sigma_aware=True, version=PROTOCOL_VERSION,
                 mangle_response=None, host="127.0.0.1", port=0):
        self.fn = fn
        self.dims = list(dims)
        self.sigma_aware = sigma_aware
        self.version = version
        self.mangle_response = mangle_response
        self.requests: list[dict] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                if self.path != "/v1/health":
                    self.send_error(404)
                    return
                body = json.dumps(
                    {
                        "version": outer.version,
                        "dims": outer.dims,
                        "sigma_aware": outer.sigma_aware,
                    }
                ).encode()
                self.send_response(200)
                self.send_header("content-type", "application/json")
                self.send_header("content-length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                if self.path != "/v1/denoise":
                    self.send_error(404)
                    return
                length = int(self.headers.get("content-length", "0"))
                raw = self.rfile.read(length)
                try:
                    header, batch = decode_frame(raw)
                except Exception as exc:
                    self._respond(400, str(exc).encode(), "text/plain")
                    return
                outer.requests.append(header)
                out = np.asarray(outer.fn(batch, header["sigma"]), dtype=np.float64)
                body = encode_frame(out, header["sigma"])
                if outer.mangle_response is not None:
                    body = outer.mangle_response(body)
                self._respond(200, body, "application/octet-stream")

            def _respond(self, code, body, ctype):
                self.send_response(code)
                self.send_header("content-type", ctype)
                self.send_header("content-length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_function(fn, dims, **kwargs) -> ReferenceServer:
    return ReferenceServer(fn, dims, **kwargs).start()


def main(argv=None):
    parser = argparse.ArgumentParser(description="Reference denoiser protocol server")
    parser.add_argument("--port", type=int, default=9700)
    parser.add_argument("--dims", type=int, nargs="+", default=[1])
    parser.add_argument("--mode", choices=["echo", "halve"], default="echo")
    args = parser.parse_args(argv)
    fn = {"echo": lambda b, s: b, "halve": lambda b, s: b / 2.0}[args.mode]
    server = ReferenceServer(fn, args.dims, port=args.port).start()
    print(f"reference {args.mode} server on {server.base_url}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()


if __name__ == "__main__":
    main()
