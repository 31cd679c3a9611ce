"""
Remote embedding providers
==========================

The screening stage talks to embedding backends through one wire contract:
POST /embed with a base64 PNG, reply {p, d, data}. This demo boots a tiny
in-process service that implements the contract with the reference
features, then runs screening through it, with the on-disk feature cache
absorbing the second pass.

The production counterpart is the sidecar package (real vision
transformer, same contract): `python -m embed_sidecar --port 8000`, then
point `--provider-url` at it with `--patch-grid 14 --embed-dim 768`.
"""

import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

import numpy as np

from vistad.embed import CachedProvider, FeatureCache, ProviderId, RemoteProvider, reference_embed
from vistad.ingest import TimeSeries, preprocess
from vistad.raster import RasterImage
from vistad.screen import ScreenSettings, screen_series
from vistad.synthetic import make_series


class Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        payload = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        image = RasterImage.from_png_bytes(base64.b64decode(payload["image"]))
        fmap = reference_embed(image, 14).astype(np.float32)
        body = json.dumps({"p": 14, "d": 4, "data": fmap.ravel().tolist()}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


server = HTTPServer(("127.0.0.1", 0), Handler)
threading.Thread(target=server.serve_forever, daemon=True).start()
url = f"http://127.0.0.1:{server.server_port}"
print(f"stub embedding service listening at {url}")

values, labels = make_series(np.random.default_rng(2), T=2000)
x = preprocess(TimeSeries("remote-demo", values)).values

provider = CachedProvider(
    RemoteProvider(url, ProviderId("reference", 14, 4, 224)),
    FeatureCache(Path("demo_out/04/cache")),
)
settings = ScreenSettings(quantile_q=0.75)

t0 = time.perf_counter()
cold = screen_series(x, provider, settings)
cold_s = time.perf_counter() - t0

t0 = time.perf_counter()
warm = screen_series(x, provider, settings)
warm_s = time.perf_counter() - t0

server.shutdown()
print(f"cold run {cold_s:.2f}s (HTTP per window), warm run {warm_s:.2f}s (cache hits)")
print(f"identical scores across runs: {np.array_equal(cold.score, warm.score)}")
print(f"ground truth {labels}")
print(f"proposals at alpha=0.01: {cold.proposals[0.01].intervals}")
