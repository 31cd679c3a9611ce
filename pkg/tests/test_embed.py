import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from vistad.embed import (
    CachedProvider,
    FeatureCache,
    ProviderId,
    ReferenceProvider,
    RemoteProvider,
    check_provider_contract,
    reference_embed,
)
from vistad.errors import InvalidArgumentError, ProtocolError, TransportError
from vistad.raster import RasterImage


def light_image(side=32):
    return RasterImage(np.ones((side, side)))


class TestReferenceEmbed:
    def test_fully_light_block_features(self):
        fmap = reference_embed(light_image(32), 4)
        assert fmap.shape == (4, 4, 4)
        assert np.allclose(fmap.reshape(-1, 4), [1.0, 0.5, 0.0, 0.0])

    def test_all_light_image_has_identical_patches(self):
        fmap = reference_embed(light_image(64), 8)
        assert np.allclose(fmap, fmap[0, 0])

    def test_single_dark_row_block_arithmetic(self):
        px = np.ones((32, 32))
        px[4, 0:16] = 0.0  # block (0, 0) gets one fully dark row at block-row 4
        fmap = reference_embed(RasterImage(px), 2)
        mean, centroid, fraction, spread = fmap[0, 0]
        assert mean == pytest.approx(1.0 - 1.0 / 16.0)
        assert centroid == pytest.approx(4.0 / 15.0)
        assert fraction == pytest.approx(1.0 / 16.0)
        assert spread == 0.0

    def test_same_shape_same_intra_block_position_gives_equal_features(self):
        px = np.ones((32, 32))
        px[5, 2:6] = 0.0    # short dash in block (0, 0)
        px[16 + 5, 16 + 2 : 16 + 6] = 0.0  # same shape, same offsets, block (1, 1)
        fmap = reference_embed(RasterImage(px), 2)
        assert np.allclose(fmap[0, 0], fmap[1, 1])

    def test_horizontal_flip_mirrors_patch_grid(self):
        rng = np.random.default_rng(2)
        px = (rng.uniform(size=(64, 64)) > 0.2).astype(float)
        fmap = reference_embed(RasterImage(px), 4)
        flipped = reference_embed(RasterImage(px[:, ::-1]), 4)
        assert np.allclose(flipped, fmap[:, ::-1, :])

    def test_patch_translation_covariance(self):
        # shifting the drawn line by one patch width shifts the grid a column
        px = np.ones((64, 64))
        px[30, 0:16] = 0.0
        shifted = np.ones((64, 64))
        shifted[30, 16:32] = 0.0
        a = reference_embed(RasterImage(px), 4)
        b = reference_embed(RasterImage(shifted), 4)
        assert np.allclose(b[:, 1], a[:, 0])

    def test_indivisible_side_rejected(self):
        with pytest.raises(InvalidArgumentError):
            reference_embed(light_image(30), 4)


class TestProviderId:
    def test_indivisible_input_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ProviderId("x", 3, 8, 224)

    def test_reference_provider_contract(self):
        check_provider_contract(ReferenceProvider(4, 32))


class _StubEmbedHandler(BaseHTTPRequestHandler):
    """Minimal /embed endpoint backed by the reference features."""

    behavior = {"fail_times": 0, "wrong_p": False}
    fail_count = 0

    def do_POST(self):
        if self.path != "/embed":
            self.send_error(404)
            return
        cls = type(self)
        if cls.fail_count < cls.behavior["fail_times"]:
            cls.fail_count += 1
            self.send_error(503)
            return
        length = int(self.headers["Content-Length"])
        payload = json.loads(self.rfile.read(length))
        image = RasterImage.from_png_bytes(base64.b64decode(payload["image"]))
        fmap = reference_embed(image, 4)
        p = 3 if cls.behavior["wrong_p"] else 4
        body = json.dumps(
            {"p": p, "d": 4, "data": fmap.astype(np.float32).ravel().tolist()[: p * p * 4]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubEmbedHandler.behavior = {"fail_times": 0, "wrong_p": False}
    _StubEmbedHandler.fail_count = 0
    server = HTTPServer(("127.0.0.1", 0), _StubEmbedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    thread.join()


class TestRemoteProvider:
    def pid(self):
        return ProviderId("reference", 4, 4, 32)

    def test_matches_in_process_reference(self, stub_server):
        provider = RemoteProvider(stub_server, self.pid())
        px = np.ones((32, 32))
        px[10, :] = 0.0
        image = RasterImage(px)
        remote = provider.embed(image)
        local = reference_embed(image, 4)
        assert np.allclose(remote, local, atol=1e-6)

    def test_contract_checker_accepts_stub(self, stub_server):
        check_provider_contract(RemoteProvider(stub_server, self.pid()))

    def test_geometry_mismatch_is_protocol_error(self, stub_server):
        _StubEmbedHandler.behavior["wrong_p"] = True
        provider = RemoteProvider(stub_server, self.pid())
        with pytest.raises(ProtocolError):
            provider.embed(light_image(32))

    def test_transient_failures_retried(self, stub_server):
        _StubEmbedHandler.behavior["fail_times"] = 2
        provider = RemoteProvider(stub_server, self.pid(), max_retries=3, backoff=0.01)
        fmap = provider.embed(light_image(32))
        assert fmap.shape == (4, 4, 4)

    def test_unreachable_raises_transport_error_with_retry_count(self):
        provider = RemoteProvider("http://127.0.0.1:1", self.pid(), max_retries=2, backoff=0.0)
        with pytest.raises(TransportError) as info:
            provider.embed(light_image(32))
        assert info.value.retries == 2

    def test_wrong_image_side_rejected_locally(self, stub_server):
        provider = RemoteProvider(stub_server, self.pid())
        with pytest.raises(InvalidArgumentError):
            provider.embed(light_image(16))


class TestFeatureCache:
    def test_put_get_roundtrip_bit_identical(self, tmp_path):
        cache = FeatureCache(tmp_path / "cache")
        image = light_image(32)
        pid = ProviderId("reference", 4, 4, 32)
        fmap = np.random.default_rng(0).standard_normal((4, 4, 4))
        cache.put(image, pid, fmap)
        back = cache.get(image, pid)
        assert np.array_equal(back, fmap)

    def test_empty_cache_misses(self, tmp_path):
        cache = FeatureCache(tmp_path / "cache")
        assert cache.get(light_image(32), ProviderId("reference", 4, 4, 32)) is None

    def test_truncated_entry_degrades_to_miss(self, tmp_path):
        cache = FeatureCache(tmp_path / "cache")
        image = light_image(32)
        pid = ProviderId("reference", 4, 4, 32)
        cache.put(image, pid, np.zeros((4, 4, 4)))
        entry = next((tmp_path / "cache").glob("*.npy"))
        entry.write_bytes(entry.read_bytes()[:10])
        assert cache.get(image, pid) is None

    def test_distinct_providers_do_not_collide(self, tmp_path):
        cache = FeatureCache(tmp_path / "cache")
        image = light_image(32)
        a = ProviderId("reference", 4, 4, 32)
        b = ProviderId("other", 4, 4, 32)
        cache.put(image, a, np.zeros((4, 4, 4)))
        assert cache.get(image, b) is None

    def test_cached_provider_skips_inner_on_hit(self, tmp_path):
        calls = {"n": 0}

        class Counting(ReferenceProvider):
            def embed(self, image):
                calls["n"] += 1
                return super().embed(image)

        provider = CachedProvider(Counting(4, 32), FeatureCache(tmp_path / "cache"))
        image = light_image(32)
        first = provider.embed(image)
        second = provider.embed(image)
        assert calls["n"] == 1
        assert np.array_equal(first, second)
