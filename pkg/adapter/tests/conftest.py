import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest
from PIL import Image

VALID_COT = (
    "Step 1: the reference shows a red square on a green field.\n"
    "Step 2: the instruction swaps the square for a circle.\n"
    "Step 3: the target shows a blue circle on the same green field.\n"
    "Step 4: keep the green field; drop the red square.\n"
    '{"retained": "green field background", "deleted": "red square", '
    '"target": "a blue circle on a green field"}'
)


class StubState:
    """Scripted responses for the stub reasoning endpoint."""

    def __init__(self):
        self.responses: list[str] = []
        self.posts = 0
        self.default = VALID_COT


@pytest.fixture()
def stub_server():
    state = StubState()

    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def do_GET(self):
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(b'{"status": "ok"}')

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            self.rfile.read(length)
            state.posts += 1
            content = state.responses.pop(0) if state.responses else state.default
            payload = {"choices": [{"message": {"role": "assistant", "content": content}}]}
            body = json.dumps(payload).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.end_headers()
            self.wfile.write(body)

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}/v1"
    try:
        yield url, state
    finally:
        server.shutdown()
        thread.join(timeout=5)


def paint(path, size=(64, 64), background=(40, 200, 40), boxes=()):
    """Write a PNG: solid background plus axis-aligned colored rectangles.

    Rectangles are (left, top, right, bottom, (r, g, b)) in pixels, aligned
    to the 16-px patch grid so segmentation cells stay pure.
    """
    img = Image.new("RGB", size, background)
    for left, top, right, bottom, color in boxes:
        for x in range(left, right):
            for y in range(top, bottom):
                img.putpixel((x, y), color)
    img.save(path)
    return path


@pytest.fixture()
def toy_corpus(tmp_path):
    """Five (reference, text, target) rows over generated images."""
    images = tmp_path / "images"
    images.mkdir()
    red = (230, 30, 30)
    blue = (30, 30, 230)
    rows = []
    for i in range(5):
        ref = paint(
            images / f"ref{i}.png",
            boxes=[(0, 0, 32, 32, red), (32, 32, 64, 64, blue)][: 1 + i % 2],
        )
        # Two rows share one target image to exercise gallery deduplication.
        target_name = f"tgt{min(i, 3)}.png"
        target = images / target_name
        if not target.exists():
            paint(target, boxes=[(16, 16, 48, 48, blue)])
        rows.append({"reference": f"images/ref{i}.png", "text": f"replace item {i} with a circle",
                     "target": f"images/{target_name}"})
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return tmp_path, pairs, rows
