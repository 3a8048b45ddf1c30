"""Annotator contracts: caption refinement, relations, scene type and text embedding.

The deterministic stubs are deliberately simple and make no attempt to
imitate a language model; they keep the pipeline total and reproducible
without any model. A real backend plugs in through ``HPSG_ANNOTATOR_CMD``:
an executable spoken to with line-delimited JSON over stdio, or an
``http(s)://`` URL receiving the same bodies via POST.

Request: ``{"request_id": int, "role": str, "payload": {...}}``
Response: ``{"request_id": int, "ok": bool, "result": ...}``
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import queue
import re
import shlex
import subprocess
import threading
import urllib.request
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Box3D

log = logging.getLogger(__name__)

ENV_VAR = "HPSG_ANNOTATOR_CMD"
DEFAULT_EMBED_DIM = 384
EMBED_SEED = 20240607
ROLES = ("caption_refine", "relation", "scene_type", "embed")
RELATIONS = ("on", "in", "next_to", "none")
OFFICE_LEXICON = frozenset({"desk", "monitor", "keyboard", "whiteboard"})
DEFAULT_CAPTION_TEMPLATE = (
    "Merge these view-level descriptions of one object into a single caption, "
    "a canonical tag and a tag list: {captions}"
)
VLM_PROMPT = "Provide a concise description of the main object in this image."

STOPWORDS = frozenset("""
a an the this that these those there here it its is are was were be been do does
what which who whom where when why how of on in at to into onto for from by with
near next and or but as than then any some very please tell me i you my your
""".split())
PREPOSITIONS = frozenset("""
on in at near next by with under above below beside behind of from against to for
onto into over atop inside
""".split())

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


class AnnotatorError(RuntimeError):
    def __init__(self, message: str, request_id: int | None = None):
        super().__init__(f"request {request_id}: {message}" if request_id is not None else message)
        self.request_id = request_id


@dataclass(frozen=True)
class ObjectSummary:
    caption: str
    centroid: tuple[float, float, float]
    bbox: Box3D

    def to_json(self) -> dict:
        return {"caption": self.caption, "centroid": [float(v) for v in self.centroid],
                "bbox": self.bbox.as_list()}


# --- stub rules --------------------------------------------------------------


def _head_noun(caption: str) -> str | None:
    head = None
    for tok in tokenize(caption):
        if tok in PREPOSITIONS and head is not None:
            break
        if tok not in STOPWORDS and tok not in PREPOSITIONS:
            head = tok
    return head


def stub_refine_captions(raw: list[str]) -> tuple[str, str, list[str]]:
    """(longest caption, most frequent head noun, ordered distinct content tokens)."""
    if not raw:
        raise ValueError("need at least one caption")
    caption = max(raw, key=len)  # max keeps the first of equal lengths
    heads = [h for h in (_head_noun(c) for c in raw) if h is not None]
    if heads:
        counts = Counter(heads)
        top = max(counts.values())
        tag = next(h for h in heads if counts[h] == top)
    else:
        tag = "object"
    tags = []
    for c in raw:
        for tok in tokenize(c):
            if tok not in STOPWORDS and tok not in PREPOSITIONS and tok not in tags:
                tags.append(tok)
    return caption, tag, tags


def footprint_overlap(a: Box3D, b: Box3D) -> float:
    """Fraction of a's horizontal footprint covered by b's."""
    area_a = (a.hi[0] - a.lo[0]) * (a.hi[1] - a.lo[1])
    if area_a <= 0:
        return 0.0
    ox = min(a.hi[0], b.hi[0]) - max(a.lo[0], b.lo[0])
    oy = min(a.hi[1], b.hi[1]) - max(a.lo[1], b.lo[1])
    if ox <= 0 or oy <= 0:
        return 0.0
    return ox * oy / area_a


def stub_relation(a: ObjectSummary, b: ObjectSummary) -> str:
    """Relation of ``a`` with respect to ``b`` from boxes in the gravity frame (z up)."""
    ba, bb = a.bbox, b.bbox
    if (abs(ba.lo[2] - bb.hi[2]) <= 0.05 and footprint_overlap(ba, bb) > 0.3
            and ba.center[2] > bb.center[2]):
        return "on"
    grown = bb.inflate(0.05)
    if all(ba.lo[i] >= grown.lo[i] and ba.hi[i] <= grown.hi[i] for i in range(3)):
        return "in"
    if float(np.linalg.norm(np.asarray(a.centroid) - np.asarray(b.centroid))) < 1.0:
        return "next_to"
    return "none"


def stub_scene_type(captions: list[str]) -> str:
    for c in captions:
        if OFFICE_LEXICON.intersection(tokenize(c)):
            return "office"
    return "room"


@lru_cache(maxsize=65536)
def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    h = hashlib.blake2b(f"{seed}:{token}".encode(), digest_size=16).digest()
    v = np.random.default_rng(int.from_bytes(h, "little")).standard_normal(dim)
    v.setflags(write=False)
    return v


def stub_embed(text: str, dim: int = DEFAULT_EMBED_DIM, seed: int = EMBED_SEED) -> np.ndarray:
    """Hashed bag of words: each content token maps to a seeded Gaussian vector."""
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    toks = tokenize(text)
    content = [t for t in toks if t not in STOPWORDS]
    words = content or toks or [text.strip()]
    v = np.zeros(dim)
    for w in words:
        v = v + _token_vector(w, dim, seed)
    return v / np.linalg.norm(v)


class StubAnnotator:
    name = "stub"

    def __init__(self, dim: int = DEFAULT_EMBED_DIM, seed: int = EMBED_SEED):
        self.dim = dim
        self.seed = seed

    def refine_captions(self, raw: list[str], template: str = DEFAULT_CAPTION_TEMPLATE):
        return stub_refine_captions(list(raw))

    def estimate_relation(self, a: ObjectSummary, b: ObjectSummary) -> str:
        return stub_relation(a, b)

    def summarize_scene_type(self, captions: list[str]) -> str:
        return stub_scene_type(list(captions))

    def embed_text(self, text: str) -> np.ndarray:
        return stub_embed(text, self.dim, self.seed)


# --- remote backends ---------------------------------------------------------


class SubprocessTransport:
    """One long-lived backend process; one JSON line per request and per reply."""

    def __init__(self, command: str, timeout: float = 30.0):
        self.timeout = timeout
        self.proc = subprocess.Popen(shlex.split(command), stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE, text=True, bufsize=1)
        self._lines: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._pending: dict[int, dict] = {}
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def send(self, body: dict) -> dict:
        rid = body["request_id"]
        with self._lock:
            if rid in self._pending:
                return self._pending.pop(rid)
            try:
                self.proc.stdin.write(json.dumps(body) + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise AnnotatorError(f"backend not writable: {exc}", rid) from exc
            while True:
                try:
                    line = self._lines.get(timeout=self.timeout)
                except queue.Empty:
                    raise AnnotatorError("backend timed out", rid) from None
                if line is None:
                    raise AnnotatorError("backend exited", rid)
                try:
                    reply = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise AnnotatorError(f"malformed reply: {exc}", rid) from exc
                if not isinstance(reply, dict):
                    raise AnnotatorError("malformed reply", rid)
                if reply.get("request_id") == rid:
                    return reply
                self._pending[reply.get("request_id")] = reply

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class HttpTransport:
    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def send(self, body: dict) -> dict:
        rid = body["request_id"]
        req = urllib.request.Request(self.url, data=json.dumps(body).encode(),
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                reply = json.loads(resp.read().decode())
        except (OSError, ValueError) as exc:
            raise AnnotatorError(f"backend request failed: {exc}", rid) from exc
        if not isinstance(reply, dict):
            raise AnnotatorError("malformed reply", rid)
        return reply

    def close(self):
        pass


class RemoteAnnotator:
    name = "remote"

    def __init__(self, transport, dim: int = DEFAULT_EMBED_DIM):
        self.transport = transport
        self.dim = dim
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()

    def request(self, role: str, payload: dict):
        if role not in ROLES:
            raise ValueError(f"unknown annotator role {role!r}")
        with self._id_lock:
            rid = next(self._ids)
        reply = self.transport.send({"request_id": rid, "role": role, "payload": payload})
        if reply.get("request_id") != rid:
            raise AnnotatorError("reply carries the wrong request_id", rid)
        if not reply.get("ok", False):
            raise AnnotatorError(f"backend error: {reply.get('result')!r}", rid)
        return rid, reply.get("result")

    def refine_captions(self, raw, template=DEFAULT_CAPTION_TEMPLATE):
        rid, res = self.request("caption_refine", {"captions": list(raw), "template": template})
        try:
            caption, tag, tags = res["caption"], res["canonical_tag"], res["tag_set"]
            if not isinstance(caption, str) or not caption or not isinstance(tag, str):
                raise TypeError
            return caption, tag, [str(t) for t in tags]
        except (TypeError, KeyError) as exc:
            raise AnnotatorError("malformed caption_refine result", rid) from exc

    def estimate_relation(self, a: ObjectSummary, b: ObjectSummary) -> str:
        rid, res = self.request("relation", {"a": a.to_json(), "b": b.to_json()})
        if res not in RELATIONS:
            raise AnnotatorError(f"unknown relation {res!r}", rid)
        return res

    def summarize_scene_type(self, captions) -> str:
        rid, res = self.request("scene_type", {"captions": list(captions)})
        if not isinstance(res, str) or not res.strip():
            raise AnnotatorError("malformed scene_type result", rid)
        return res.strip()

    def embed_text(self, text: str) -> np.ndarray:
        rid, res = self.request("embed", {"text": text})
        try:
            v = np.asarray(res, dtype=np.float64).reshape(-1)
        except (TypeError, ValueError) as exc:
            raise AnnotatorError("malformed embedding", rid) from exc
        norm = float(np.linalg.norm(v)) if v.size else 0.0
        if v.size != self.dim or not np.isfinite(norm) or norm == 0.0:
            raise AnnotatorError(f"embedding must be a nonzero vector of size {self.dim}", rid)
        return v / norm

    def close(self):
        self.transport.close()


class FallbackAnnotator:
    """Remote annotator whose failures fall back to the stubs (and are counted)."""

    def __init__(self, primary, fallback: StubAnnotator):
        self.primary = primary
        self.fallback = fallback
        self.dim = fallback.dim
        self.fallbacks = 0
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.primary.name if self.primary is not None else self.fallback.name

    def _call(self, method: str, *args):
        if self.primary is not None:
            try:
                return getattr(self.primary, method)(*args)
            except AnnotatorError as exc:
                log.warning("annotator fell back to stub: %s", exc)
                with self._lock:
                    self.fallbacks += 1
        return getattr(self.fallback, method)(*args)

    def refine_captions(self, raw, template=DEFAULT_CAPTION_TEMPLATE):
        return self._call("refine_captions", list(raw), template)

    def estimate_relation(self, a, b):
        return self._call("estimate_relation", a, b)

    def summarize_scene_type(self, captions):
        return self._call("summarize_scene_type", list(captions))

    def embed_text(self, text):
        return self._call("embed_text", text)

    def meta(self) -> dict:
        return {"backend": self.name, "fallbacks": self.fallbacks}

    def close(self):
        if self.primary is not None:
            self.primary.close()


def annotator_from_env(dim: int = DEFAULT_EMBED_DIM, timeout: float = 30.0,
                       env: dict | None = None) -> FallbackAnnotator:
    """Backend chosen by ``HPSG_ANNOTATOR_CMD``; stubs only when it is unset."""
    spec = (env if env is not None else os.environ).get(ENV_VAR, "").strip()
    stub = StubAnnotator(dim)
    if not spec:
        return FallbackAnnotator(None, stub)
    try:
        if spec.startswith(("http://", "https://")):
            transport = HttpTransport(spec, timeout)
        else:
            transport = SubprocessTransport(spec, timeout)
    except OSError as exc:
        log.warning("cannot start annotator backend %r (%s); using stubs", spec, exc)
        ann = FallbackAnnotator(None, stub)
        ann.fallbacks += 1
        return ann
    return FallbackAnnotator(RemoteAnnotator(transport, dim), stub)


def top_captions(observations, lookup: dict, limit: int = 5) -> list[str]:
    """Captions from the ``limit`` observations with the highest segmentation confidence.

    ``lookup`` maps ``(instance_id, view_id)`` to a caption string.
    """
    ranked = sorted(observations, key=lambda o: (-o.seg_confidence, o.view_id, o.instance_id))
    out = []
    for o in ranked:
        c = lookup.get((o.instance_id, o.view_id))
        if c:
            out.append(c)
        if len(out) == limit:
            break
    return out
