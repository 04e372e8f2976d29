from __future__ import annotations

import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steptree import cosine
from steptree.embedding import RemoteEmbedder
from steptree.errors import DimensionMismatch, EmbedderUnavailable, ZeroVector


def test_embed_deterministic(embedder):
    assert np.array_equal(embedder.embed("sort the array"), embedder.embed("sort the array"))


def test_embed_dimension(embedder):
    assert embedder.embed("anything at all").shape == (64,)


def test_embed_unit_norm(embedder):
    assert math.isclose(float(np.linalg.norm(embedder.embed("normalize me"))), 1.0, abs_tol=1e-12)


def test_similar_texts_not_identical(embedder):
    # Direct evaluation of the hashed-trigram embedder: "abc" and "abd" are
    # single distinct grams landing in distinct buckets, hence orthogonal.
    value = cosine(embedder.embed("abc"), embedder.embed("abd"))
    assert value < 1.0
    assert value == 0.0


def test_embed_rejects_empty_text(embedder):
    with pytest.raises(ValueError):
        embedder.embed("")


def test_cosine_orthogonal():
    assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0


def test_cosine_scale_invariant_exact():
    assert cosine(np.array([2.0, 0.0]), np.array([1.0, 0.0])) == 1.0


def test_cosine_45_degrees():
    assert abs(cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])) - 1.0 / math.sqrt(2)) <= 1e-12


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine(np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0]))


def test_cosine_zero_vector():
    with pytest.raises(ZeroVector):
        cosine(np.zeros(3), np.array([1.0, 0.0, 0.0]))


# Magnitudes bounded away from zero so squared terms cannot underflow.
_elements = st.one_of(
    st.just(0.0),
    st.floats(min_value=1e-3, max_value=1e6),
    st.floats(min_value=-1e6, max_value=-1e-3),
)
_vectors = st.lists(_elements, min_size=2, max_size=16).filter(lambda v: any(x != 0.0 for x in v))


@given(_vectors)
def test_cosine_self_similarity(values):
    v = np.array(values)
    assert abs(cosine(v, v) - 1.0) <= 1e-9


@given(_vectors, st.integers(min_value=0, max_value=2**32 - 1))
def test_cosine_symmetric_bit_for_bit(values, seed):
    rng = np.random.default_rng(seed)
    a = np.array(values)
    b = rng.normal(size=a.shape)
    assert cosine(a, b) == cosine(b, a)


@given(_vectors, st.floats(min_value=1e-3, max_value=1e3))
def test_cosine_positive_scale_invariance(values, scale):
    a = np.array(values)
    b = np.roll(a, 1) + 1.0
    if not b.any():
        b[0] = 1.0
    assert abs(cosine(scale * a, b) - cosine(a, b)) <= 1e-9


# --- remote backend ---------------------------------------------------------


class _EmbedStub(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        vectors = [[float(len(t)), 1.0, 0.0, 0.0] for t in body["texts"]]
        payload = json.dumps({"vectors": vectors}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def embed_server():
    server = HTTPServer(("127.0.0.1", 0), _EmbedStub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


def test_remote_embedder_round_trip(embed_server):
    remote = RemoteEmbedder(endpoint=embed_server, dim=4)
    vecs = remote.embed_batch(["abc", "longer text"])
    assert np.array_equal(vecs[0], np.array([3.0, 1.0, 0.0, 0.0]))
    assert vecs[1][0] == 11.0
    assert remote.embed("abc").shape == (4,)


def test_remote_embedder_unreachable():
    remote = RemoteEmbedder(endpoint="http://127.0.0.1:1", dim=4, timeout_s=0.2)
    with pytest.raises(EmbedderUnavailable):
        remote.embed("x")


def test_remote_embedder_dim_mismatch(embed_server):
    remote = RemoteEmbedder(endpoint=embed_server, dim=7)
    with pytest.raises(DimensionMismatch):
        remote.embed("abc")
