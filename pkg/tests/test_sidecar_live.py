"""Contract tests against a live sidecar process serving real sockets,
driven end to end through the primary package's own wire clients."""

import json
import pathlib
import threading
import time

import numpy as np
import pytest

pytest.importorskip("hcog_sidecar", reason="secondary component not installed")

import requests
import uvicorn

from hcog.guidance import GuidanceRequest
from hcog.images import b64_to_f32le, b64_to_png
from hcog.wire import MaskClient, ScoreClient, canonical_json

from hcog_sidecar import create_app

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


class LiveSidecar:
    def __init__(self):
        config = uvicorn.Config(create_app(), host="127.0.0.1", port=0, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.monotonic() + 10.0
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("sidecar did not start in time")
            time.sleep(0.02)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10.0)


def load_fixture(name: str) -> dict:
    with open(FIXTURES / f"{name}_exchange.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def live_sidecar_roundtrip():
    """Replay every primary golden fixture through a live sidecar; responses
    must come back unmodified. Shared with the acceptance suite."""
    score_fx = load_fixture("score")
    segment_fx = load_fixture("segment")
    with LiveSidecar() as endpoint:
        health = requests.get(endpoint + "/healthz", timeout=10).json()
        assert health["ready"] is True
        assert all(health["providers"].values())

        inputs = score_fx["inputs"]
        request = GuidanceRequest(
            prompt=inputs["prompt"],
            image=b64_to_png(inputs["image"]).astype(np.float64) / 255.0,
            timestep=inputs["timestep"],
            noise=b64_to_f32le(inputs["noise"], (inputs["height"], inputs["width"], 3)),
            conditioning=b64_to_png(inputs["conditioning"]) >= 128,
            provider=inputs["provider"],
            cfg_scale=inputs["cfg_scale"],
        )
        client = ScoreClient(endpoint)
        assert canonical_json(client.build_body(request)).decode("ascii") == score_fx["request_bytes"]
        response = client.predict_noise(request)
        # echo contract: the noise array returns bit-exact
        assert np.array_equal(response.noise_pred, request.noise)
        raw = requests.post(
            endpoint + "/v1/score",
            data=score_fx["request_bytes"].encode("ascii"),
            headers={"Content-Type": "application/json"},
            timeout=30,
        )
        assert canonical_json(raw.json()).decode("ascii") == score_fx["response_bytes"]

        image = b64_to_png(segment_fx["inputs"]["image"]).astype(np.float64) / 255.0
        mask_client = MaskClient(endpoint)
        mask = mask_client.request(image, segment_fx["inputs"]["query"])
        expected = b64_to_png(json.loads(segment_fx["response_bytes"])["mask"]) >= 128
        assert np.array_equal(mask, expected)
        raw = requests.post(
            endpoint + "/v1/segment",
            data=segment_fx["request_bytes"].encode("ascii"),
            headers={"Content-Type": "application/json"},
            timeout=30,
        )
        assert canonical_json(raw.json()).decode("ascii") == segment_fx["response_bytes"]


def test_live_sidecar_fixture_roundtrip():
    live_sidecar_roundtrip()


def test_live_sidecar_schema_error_shape():
    with LiveSidecar() as endpoint:
        response = requests.post(
            endpoint + "/v1/score",
            json={"prompt": "x"},
            timeout=10,
        )
        assert response.status_code == 400
        assert "image" in response.json()["error"]
