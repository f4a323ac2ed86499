from __future__ import annotations

import json
import sys
import textwrap
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from tokenjoule.prompts import generate_suite


@pytest.fixture(scope="session")
def suite():
    return generate_suite()


@pytest.fixture
def stub_command(tmp_path):
    """Write a python sampler stub and return its argv."""

    def make(body: str) -> tuple[str, ...]:
        script = tmp_path / f"stub_{abs(hash(body))}.py"
        script.write_text(textwrap.dedent(body), encoding="utf-8")
        return (sys.executable, str(script))

    return make


class _ChatHandler(BaseHTTPRequestHandler):
    completion_tokens = 50
    bodies: list

    def do_GET(self):
        self.send_response(404)
        self.end_headers()

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        self.server.bodies.append((self.headers.get("Authorization"), body))
        payload = json.dumps(
            {
                "choices": [{"index": 0, "message": {"role": "assistant", "content": "hello"}}],
                "usage": {"prompt_tokens": 10, "completion_tokens": self.server.completion_tokens},
            }
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def chat_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ChatHandler)
    server.bodies = []
    server.completion_tokens = 50
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield server
    server.shutdown()
    server.server_close()


def write_yaml(path: Path, text: str) -> Path:
    path.write_text(textwrap.dedent(text), encoding="utf-8")
    return path
