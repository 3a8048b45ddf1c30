import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpsg.annotation import (
    DEFAULT_CAPTION_TEMPLATE,
    ENV_VAR,
    VLM_PROMPT,
    FallbackAnnotator,
    ObjectSummary,
    StubAnnotator,
    annotator_from_env,
    stub_embed,
    stub_refine_captions,
    stub_relation,
    stub_scene_type,
    top_captions,
)
from hpsg.fusion import Observation
from hpsg.geometry import Box3D

FAKE = Path(__file__).parent / "fixtures" / "fake_annotator.py"


def summary(lo, hi, caption="x"):
    b = Box3D(lo, hi)
    return ObjectSummary(caption, tuple(b.center), b)


def test_single_caption():
    assert stub_refine_captions(["a red mug"]) == ("a red mug", "mug", ["red", "mug"])


def test_longest_caption_wins():
    caption, tag, _ = stub_refine_captions(["chair", "a wooden chair near desk"])
    assert caption == "a wooden chair near desk" and tag == "chair"


def test_stub_refine_is_deterministic():
    raw = ["a white cup on a table", "a cup", "a small white cup"]
    first = stub_refine_captions(raw)
    assert all(stub_refine_captions(raw) == first for _ in range(100))


def test_relations():
    table = summary((0, 0, 0), (1, 1, 0.75))
    cup = summary((0.4, 0.4, 0.75), (0.5, 0.5, 0.87))
    assert stub_relation(cup, table) == "on"
    assert stub_relation(table, cup) != "on"
    shelf = summary((0, 0, 0), (1, 0.4, 2))
    book = summary((0.2, 0.1, 0.5), (0.4, 0.3, 0.8))
    assert stub_relation(book, shelf) == "in"
    assert stub_relation(summary((0, 0, 0), (1, 1, 1)), summary((5, 0, 0), (6, 1, 1))) == "none"
    assert stub_relation(summary((0, 0, 0), (1, 1, 1)), summary((1.2, 0, 0), (1.6, 1, 1))) == "next_to"


def test_scene_type():
    assert stub_scene_type(["a black monitor"]) == "office"
    assert stub_scene_type(["a bed"]) == "room"
    assert stub_scene_type([]) == "room"


@given(st.text(min_size=1).filter(lambda s: s.strip()))
@settings(max_examples=100)
def test_embedding_is_unit_and_deterministic(text):
    v = stub_embed(text)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-5
    assert np.array_equal(v, stub_embed(text))


def test_token_vectors_are_distinct():
    rng = np.random.default_rng(0)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    tokens = {"".join(rng.choice(letters, 7)) for _ in range(1000)}
    vecs = {stub_embed(t).round(9).tobytes() for t in tokens}
    assert len(vecs) / len(tokens) >= 0.99


def test_empty_text_rejected():
    with pytest.raises(ValueError):
        stub_embed("   ")


def test_top_captions_uses_highest_confidence_views():
    obs = [Observation(v, 3, c) for v, c in enumerate([0.5, 0.9, 0.7, 0.95, 0.6, 0.8, 0.1])]
    lookup = {(3, v): f"view {v}" for v in range(7)}
    assert top_captions(obs, lookup) == ["view 3", "view 1", "view 5", "view 2", "view 4"]


def test_prompt_constants():
    assert VLM_PROMPT == "Provide a concise description of the main object in this image."
    assert "{captions}" in DEFAULT_CAPTION_TEMPLATE


def test_env_unset_gives_stubs():
    ann = annotator_from_env(env={})
    assert ann.meta() == {"backend": "stub", "fallbacks": 0}
    assert np.array_equal(ann.embed_text("cup"), StubAnnotator().embed_text("cup"))


def _cmd(mode):
    return f"{sys.executable} {FAKE} {mode}"


def test_subprocess_backend():
    ann = annotator_from_env(env={ENV_VAR: _cmd("ok")}, timeout=10)
    try:
        assert ann.refine_captions(["a mug"])[0] == "remote a mug"
        assert ann.summarize_scene_type(["x"]) == "lab"
        v = ann.embed_text("abc")
        assert v[3] == pytest.approx(1.0)
        a = summary((0, 0, 0), (1, 1, 1))
        assert ann.estimate_relation(a, a) == "next_to"
        assert ann.meta() == {"backend": "remote", "fallbacks": 0}
    finally:
        ann.close()


def test_malformed_reply_falls_back():
    ann = annotator_from_env(env={ENV_VAR: _cmd("broken")}, timeout=10)
    try:
        assert np.array_equal(ann.embed_text("cup"), stub_embed("cup"))
        assert ann.meta()["fallbacks"] == 1
        assert ann.summarize_scene_type(["x"]) == "lab"
    finally:
        ann.close()


def test_dead_backend_falls_back():
    ann = annotator_from_env(env={ENV_VAR: _cmd("exit")}, timeout=5)
    try:
        assert ann.summarize_scene_type(["a bed"]) == "room"
        assert ann.summarize_scene_type(["a desk"]) == "office"
        assert ann.meta()["fallbacks"] == 2
    finally:
        ann.close()


def test_unstartable_backend():
    ann = annotator_from_env(env={ENV_VAR: "/nonexistent/backend"})
    assert ann.meta()["fallbacks"] == 1
    assert ann.summarize_scene_type([]) == "room"


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        result = "kitchen" if body["role"] == "scene_type" else None
        ok = body["role"] == "scene_type"
        out = json.dumps({"request_id": body["request_id"], "ok": ok, "result": result}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_backend():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    yield f"http://127.0.0.1:{server.server_port}/"
    server.shutdown()


def test_http_backend(http_backend):
    ann = annotator_from_env(env={ENV_VAR: http_backend}, timeout=5)
    assert ann.summarize_scene_type(["a bed"]) == "kitchen"
    # the server refuses embeddings: stub answer, counted
    assert np.array_equal(ann.embed_text("cup"), stub_embed("cup"))
    assert ann.meta() == {"backend": "remote", "fallbacks": 1}


def test_fallback_without_primary():
    ann = FallbackAnnotator(None, StubAnnotator())
    assert ann.refine_captions(["a red mug"])[1] == "mug"
