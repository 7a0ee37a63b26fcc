"""The engine's own sidecar client driven against the real service in-process.

This is the integration seam between the two packages: the engine only
ever sees the HTTP wire, so these tests prove the service satisfies the
client's contract (health gating, fingerprints, dims, determinism) without
opening a socket.
"""

from __future__ import annotations

import numpy as np
import pytest
from fastapi.testclient import TestClient

from embed_sidecar import SidecarConfig, create_app
from openset.backends.base import RetryPolicy
from openset.backends.sidecar import embedding_sidecar_client
from openset.core import ClassRegistry
from openset.errors import TransportError
from openset.store import FeatureStore
from sidecar_fixtures import captioned_png


class WireSession:
    """requests-shaped facade over the in-process ASGI test client."""

    def __init__(self, client: TestClient):
        self._client = client

    def get(self, url, timeout=None):
        return self._client.get(url)

    def post(self, url, json=None, timeout=None):
        return self._client.post(url, json=json)


def connect(client: TestClient, **kwargs):
    return embedding_sidecar_client(
        "http://sidecar.test",
        session=WireSession(client),
        sleep=lambda _: None,
        retry=RetryPolicy(max_attempts=1),
        **kwargs,
    )


@pytest.fixture()
def service():
    with TestClient(create_app(SidecarConfig())) as client:
        yield client


def test_client_refuses_a_loading_sidecar():
    client = TestClient(create_app(SidecarConfig()))  # lifespan never runs
    with pytest.raises(TransportError, match="not ready"):
        connect(client)


def test_fingerprints_come_from_health(service):
    image_text, image = connect(service)
    assert image_text.fingerprint == "joint:procedural:512/v1"
    assert image.fingerprint == "vision:procedural:768/v1"


def test_text_embedding_round_trip(service):
    image_text, _ = connect(service)
    vectors = image_text.embed_texts(["a photo of fire truck", "a photo of oak"])
    assert [v.dim for v in vectors] == [512, 512]
    again = image_text.embed_texts(["a photo of fire truck", "a photo of oak"])
    assert all(np.array_equal(a.values, b.values) for a, b in zip(vectors, again))


def test_client_side_batching_still_covers_every_text(service):
    image_text, _ = connect(service, batch_size=2)
    texts = [f"text {i}" for i in range(5)]
    chunked = image_text.embed_texts(texts)
    image_text_full, _ = connect(service, batch_size=64)
    full = image_text_full.embed_texts(texts)
    assert len(chunked) == 5
    assert all(np.array_equal(a.values, b.values) for a, b in zip(chunked, full))


def test_both_image_routes_and_their_dims(service):
    image_text, image = connect(service)
    data = captioned_png("a photo of sparrow")
    joint_vec = image_text.embed_image(data)
    vision_vec = image.embed_image(data)
    assert joint_vec.dim == 512
    assert vision_vec.dim == 768
    assert image_text.dim == 512
    assert image.dim == 768


def test_feature_store_precompute_against_the_live_service(service):
    image_text, _ = connect(service)
    registry = ClassRegistry.from_closed(["fire truck", "sparrow", "oak"])
    store = FeatureStore()
    assert store.precompute_text_features(registry, image_text) == 3
    assert store.text_matrix(registry).shape == (3, 512)
    # warm pass: everything cached under the sidecar's fingerprint
    assert store.precompute_text_features(registry, image_text) == 0
