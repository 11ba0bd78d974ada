"""In-repo HTTP server speaking the service wire format, backed by MockClients.

Run with ``python -m filmfuse.vlfdata.mockserver --port 8765``. ``fail`` maps an
endpoint name to the number of leading requests answered with HTTP 500, which
lets tests exercise the retry path over a real socket.
"""

import argparse
import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..errors import FormatError
from .services import ENDPOINTS, MockClients, decode_png_b64


class MockServer:
    def __init__(self, host="127.0.0.1", port=0, seed=0, fail=None):
        self.mock = MockClients(seed)
        self.fail = Counter(fail or {})
        self.hits = Counter()
        self._lock = threading.Lock()
        self.httpd = ThreadingHTTPServer((host, port), self._handler())
        self._thread = None

    @property
    def url(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def _answer(self, endpoint, body):
        img = decode_png_b64(body["image"]) if "image" in body else None
        if endpoint == "caption":
            return {"caption": self.mock.caption(img)}
        if endpoint == "dense_caption":
            return {"regions": [{"box": list(b), "phrase": p} for b, p in self.mock.dense_caption(img)]}
        if endpoint == "mask_summary":
            return {"regions": self.mock.mask_summary(img)}
        return {"paragraph": self.mock.paragraph(body["prompt"], img)}

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, code, obj):
                data = json.dumps(obj).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                endpoint = self.path.strip("/").split("/")[-1]
                if endpoint not in ENDPOINTS:
                    return self._send(404, {"error": f"unknown endpoint {endpoint}"})
                with server._lock:
                    server.hits[endpoint] += 1
                    failing = server.fail[endpoint] > 0
                    if failing:
                        server.fail[endpoint] -= 1
                if failing:
                    return self._send(500, {"error": "injected failure"})
                try:
                    body = json.loads(self.rfile.read(int(self.headers.get("Content-Length", 0))))
                    with server._lock:
                        out = server._answer(endpoint, body)
                except (ValueError, KeyError, FormatError) as exc:
                    return self._send(400, {"error": str(exc)})
                self._send(200, out)

        return Handler

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def main(argv=None):
    ap = argparse.ArgumentParser(description="Serve mock caption/LLM endpoints.")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8765)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    srv = MockServer(args.host, args.port, args.seed)
    print(f"serving on {srv.url}", flush=True)
    try:
        srv.httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.httpd.server_close()


if __name__ == "__main__":
    main()
