import base64
import json
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from vlx.backend import HttpBackend, MockBackend
from vlx.backend.server import serve
from vlx.errors import BackendError, BackendUnavailable, GroundingEmpty
from vlx.image import ImageBuffer

from conftest import gradient_image


@pytest.fixture
def photo():
    # uint8-exact pixels survive the PNG round trip, so the content hash matches server side
    return gradient_image(16, 12, seed=3)


@pytest.fixture
def server(photo):
    h = photo.content_hash
    backend = MockBackend([
        {"image_id": h, "task": "vqa", "text": "is the door open?", "response": "yes"},
        {"image_id": h, "task": "itr", "text": "an open door", "response": 2.0},
        {"image_id": h, "task": "itr", "text": "a closed door", "response": 0.5},
        {"image_id": h, "task": "vg", "text": "the door", "response": [-3, 2, 20, 10]},
        {"image_id": h, "task": "caption", "text": None, "response": "a door in a hallway"},
    ])
    srv = serve(backend)
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def test_all_tasks_over_http(server, photo):
    client = HttpBackend(server)
    assert client.vqa_answer(photo, "is the door open?") == "yes"
    assert client.itr_scores(photo, ["a closed door", "an open door"]) == [0.5, 2.0]
    assert client.ground_phrase(photo, "the door").as_tuple() == (0, 2, 16, 10)
    assert client.caption_image(photo) == "a door in a hallway"
    assert client.embed_text("a b") == MockBackend().embed_text("b a")


def test_server_error_is_not_retried(server, photo):
    sleeps = []
    client = HttpBackend(server, sleep=sleeps.append)
    with pytest.raises(BackendError):
        client.vqa_answer(photo, "is the window open?")
    assert sleeps == []


def test_concurrent_requests(server, photo):
    client = HttpBackend(server)
    with ThreadPoolExecutor(8) as pool:
        answers = list(pool.map(lambda _: client.vqa_answer(photo, "is the door open?"), range(32)))
    assert answers == ["yes"] * 32


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_unreachable_retries_then_unavailable(photo):
    sleeps = []
    client = HttpBackend(f"http://127.0.0.1:{_free_port()}", timeout=1.0, sleep=sleeps.append)
    with pytest.raises(BackendUnavailable):
        client.caption_image(photo)
    assert sleeps == [0.5, 0.5]


class Scripted:
    """Server replying from a script of (status, body); records request bodies."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        outer = self

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                outer.requests.append((self.path, json.loads(body)))
                status, payload = outer.script.pop(0) if len(outer.script) > 1 else outer.script[0]
                data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.srv = ThreadingHTTPServer(("127.0.0.1", 0), H)
        threading.Thread(target=self.srv.serve_forever, daemon=True).start()
        self.url = f"http://127.0.0.1:{self.srv.server_address[1]}"

    def close(self):
        self.srv.shutdown()


def test_503_retried_then_success(photo):
    s = Scripted([(503, {"error": "busy"}), (503, {"error": "busy"}), (200, {"answer": "no"})])
    sleeps = []
    try:
        assert HttpBackend(s.url, sleep=sleeps.append).vqa_answer(photo, "is it?") == "no"
    finally:
        s.close()
    assert sleeps == [0.5, 0.5]
    assert len(s.requests) == 3


def test_503_exhausts_retries(photo):
    s = Scripted([(503, {"error": "busy"})])
    try:
        with pytest.raises(BackendUnavailable):
            HttpBackend(s.url, sleep=lambda _: None).vqa_answer(photo, "is it?")
    finally:
        s.close()
    assert len(s.requests) == 3


def test_wire_format(photo):
    s = Scripted([(200, {"answer": "yes"})])
    try:
        HttpBackend(s.url).vqa_answer(photo, "is the door open?")
        s.script = [(200, {"scores": [1.0, 2.0]})]
        HttpBackend(s.url).itr_scores(photo, ["x", "y"])
        s.script = [(200, {"embedding": [1.0, 0.0]})]
        HttpBackend(s.url).embed_text("hello")
        s.script = [(200, {"caption": "c"})]
        HttpBackend(s.url).caption_image(photo)
        s.script = [(200, {"bbox": [1, 1, 2, 2]})]
        HttpBackend(s.url + "/v1/infer").ground_phrase(photo, "p")
    finally:
        s.close()
    paths = {p for p, _ in s.requests}
    assert paths == {"/v1/infer"}
    vqa, itr, embed, cap, vg = (r for _, r in s.requests)
    assert vqa["task"] == "vqa" and vqa["text"] == "is the door open?"
    decoded = ImageBuffer.from_png_bytes(base64.b64decode(vqa["image"]))
    assert decoded.equals(photo)
    assert itr["task"] == "itr" and itr["texts"] == ["x", "y"]
    assert embed == {"task": "embed", "text": "hello"}
    assert cap["task"] == "caption" and "text" not in cap
    assert vg["task"] == "vg" and vg["text"] == "p"


def test_degenerate_bbox_over_http(photo):
    s = Scripted([(200, {"bbox": [5, 5, 5, 9]})])
    try:
        with pytest.raises(GroundingEmpty):
            HttpBackend(s.url).ground_phrase(photo, "nothing")
    finally:
        s.close()


def test_malformed_response(photo):
    s = Scripted([(200, {"unexpected": 1})])
    try:
        with pytest.raises(BackendError):
            HttpBackend(s.url).vqa_answer(photo, "q?")
    finally:
        s.close()
