"""Transport layer and command line.

Two ways to serve: a built-in threaded listener, or a single HTTP exchange
over standard input/output (the classic super-server deployment style) via
``--single-request``.
"""

from __future__ import annotations

import argparse
import errno
import logging
import sys
import threading
import urllib.parse
from dataclasses import replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from types import SimpleNamespace

from . import SERVED_BY
from .config import load_config
from .errors import HdbError
from .server import App, Request, Response, parse_request_body

log = logging.getLogger("hdb")


class PortInUse(HdbError):
    pass


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def version_string(self):
        return SERVED_BY

    def log_message(self, format, *args):
        log.debug("%s %s", self.address_string(), format % args)

    def do_GET(self):
        self._dispatch()

    def do_POST(self):
        self._dispatch()

    def do_HEAD(self):
        self._dispatch(head=True)

    def _dispatch(self, head: bool = False):
        app: App = self.server_ref.app
        try:
            request = self._build_request()
            response = app.handle(request)
        except Exception:
            log.exception("request handling failed")
            response = Response(status=500, body=b"internal error",
                                content_type="text/plain")
        self.send_response(response.status)
        self.send_header("Content-Type", response.content_type)
        for name, value in response.headers:
            self.send_header(name, value)
        for cookie in response.set_cookies:
            self.send_header("Set-Cookie", cookie)
        self.send_header("Content-Length", str(len(response.body)))
        self.end_headers()
        if not head:
            self.wfile.write(response.body)

    @property
    def server_ref(self):
        return self.server

    def _build_request(self) -> Request:
        parsed = urllib.parse.urlparse(self.path)
        query = dict(urllib.parse.parse_qsl(parsed.query, keep_blank_values=True))
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        form = {}
        if body:
            form = parse_request_body(self.headers.get("Content-Type", ""), body)
        cookies = {}
        for chunk in (self.headers.get("Cookie") or "").split(";"):
            name, _, value = chunk.strip().partition("=")
            if name:
                cookies[name] = value
        return Request(
            method=self.command,
            path=urllib.parse.unquote(parsed.path),
            query=query,
            form=form,
            headers={k.lower(): v for k, v in self.headers.items()},
            cookies=cookies,
            peer=self.client_address[0],
        )


class RunningServer:
    def __init__(self, app: App, httpd: ThreadingHTTPServer, thread: threading.Thread):
        self.app = app
        self._httpd = httpd
        self._thread = thread

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)


def start(config, **app_kwargs) -> RunningServer:
    """Bind the listener and serve in a background thread."""
    app = App(config, **app_kwargs)
    handler = type("BoundHandler", (_Handler,), {})
    handler.timeout = config.request_timeout
    try:
        httpd = ThreadingHTTPServer(("", config.port), handler)
    except OSError as ex:
        if ex.errno in (errno.EADDRINUSE, errno.EACCES):
            raise PortInUse(f"port {config.port}: {ex}") from ex
        raise
    httpd.app = app
    httpd.daemon_threads = True
    thread = threading.Thread(target=httpd.serve_forever, name="hdb-listener", daemon=True)
    thread.start()
    return RunningServer(app, httpd, thread)


class _StdioConnection:
    """Just enough of a socket for BaseHTTPRequestHandler over stdio."""

    def __init__(self, rfile, wfile):
        self._rfile = rfile
        self._wfile = wfile

    def makefile(self, mode, *args, **kwargs):
        return self._rfile if "r" in mode else self._wfile

    def sendall(self, data):
        self._wfile.write(data)

    def shutdown(self, how):
        pass

    def close(self):
        pass


class _SingleRequestHandler(_Handler):
    def handle(self):
        self.close_connection = True
        self.handle_one_request()

    def finish(self):
        try:
            self.wfile.flush()
        except Exception:
            pass


def serve_single_request(app: App, rfile, wfile, peer: str = "127.0.0.1") -> None:
    """Serve exactly one HTTP exchange on the given byte streams."""
    connection = _StdioConnection(rfile, wfile)
    server = SimpleNamespace(app=app)
    _SingleRequestHandler(connection, (peer, 0), server)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hdb",
        description="Schema-transparent web administration for relational databases",
    )
    parser.add_argument("--config", required=True, help="configuration file path")
    parser.add_argument("--port", type=int, help="override the configured port")
    parser.add_argument("--single-request", action="store_true",
                        help="serve one HTTP exchange on stdin/stdout, then exit")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = load_config(args.config)
        if args.port is not None:
            config = replace(config, port=args.port)
        if args.single_request:
            app = App(config)
            serve_single_request(app, sys.stdin.buffer, sys.stdout.buffer)
            return 0
        server = start(config)
    except HdbError as ex:
        print(f"hdb: {ex}", file=sys.stderr)
        return 1

    print(f"{SERVED_BY} serving on port {server.port}", file=sys.stderr)
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
