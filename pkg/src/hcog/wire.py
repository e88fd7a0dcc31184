"""HTTP clients for the three external model services: score prediction,
language-prompted mask segmentation, and chat-completion plan synthesis.

All clients share the same transport discipline: canonical JSON bodies
(sorted keys, no whitespace) so recorded exchanges replay byte-for-byte, up
to three retries with exponential backoff on transport failure, and three
distinct failure modes -- transport exhaustion, schema violation (named
field), and provider-reported error."""

from __future__ import annotations

import json
import time
from typing import Callable

import numpy as np
import requests

from .guidance import GuidanceRequest, GuidanceResponse
from .images import b64_to_f32le, b64_to_png, f32le_to_b64, png_to_b64

__all__ = [
    "WireError",
    "TransportError",
    "SchemaError",
    "ProviderError",
    "canonical_json",
    "HttpTransport",
    "ScoreClient",
    "MaskClient",
    "LlmClient",
]


class WireError(Exception):
    pass


class TransportError(WireError):
    """Network-level failure that persisted through all retries."""


class SchemaError(WireError):
    """Response violated the wire contract; names the offending field."""

    def __init__(self, field: str, detail: str):
        super().__init__(f"schema violation in {field!r}: {detail}")
        self.field = field


class ProviderError(WireError):
    """The service answered with an explicit error payload."""


def canonical_json(body: dict) -> bytes:
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


class HttpTransport:
    """POSTs canonical JSON over requests; raises TransportError on network
    failures and 5xx so the caller's retry loop can engage."""

    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def __call__(self, url: str, body: dict) -> dict:
        try:
            resp = requests.post(
                url,
                data=canonical_json(body),
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST {url} failed: {exc}") from exc
        if resp.status_code >= 500:
            raise TransportError(f"POST {url} returned {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise SchemaError("<body>", f"response is not JSON: {exc}") from exc


class _RetryingClient:
    def __init__(
        self,
        endpoint: str,
        transport: Callable[[str, dict], dict] | None = None,
        retries: int = 3,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.transport = transport if transport is not None else HttpTransport(timeout)
        self.retries = retries
        self.backoff_base = backoff_base
        self.sleep = sleep

    def _post(self, url: str, body: dict) -> dict:
        attempt = 0
        while True:
            try:
                payload = self.transport(url, body)
            except TransportError:
                if attempt >= self.retries:
                    raise
                self.sleep(self.backoff_base * 2**attempt)
                attempt += 1
                continue
            if isinstance(payload, dict) and "error" in payload:
                raise ProviderError(str(payload["error"]))
            if not isinstance(payload, dict):
                raise SchemaError("<body>", f"expected JSON object, got {type(payload).__name__}")
            return payload


class ScoreClient(_RetryingClient):
    """Client for POST {endpoint}/v1/score. Satisfies the provider protocol
    (``predict_noise``), so it can drive distillation steps directly."""

    def build_body(self, request: GuidanceRequest) -> dict:
        conditioning = None
        if request.conditioning is not None:
            mask = np.asarray(request.conditioning)
            if mask.dtype == bool:
                mask = mask.astype(np.uint8) * 255
            conditioning = {"type": "silhouette", "image": png_to_b64(mask)}
        return {
            "prompt": request.prompt,
            "image": png_to_b64(request.image),
            "timestep": int(request.timestep),
            "noise": f32le_to_b64(request.noise),
            "conditioning": conditioning,
            "provider": request.provider,
            "cfg_scale": float(request.cfg_scale),
        }

    def predict_noise(self, request: GuidanceRequest) -> GuidanceResponse:
        payload = self._post(self.endpoint + "/v1/score", self.build_body(request))
        if "noise_pred" not in payload:
            raise SchemaError("noise_pred", "missing from response")
        try:
            pred = b64_to_f32le(payload["noise_pred"], request.image.shape)
        except (ValueError, TypeError) as exc:
            raise SchemaError("noise_pred", str(exc)) from exc
        return GuidanceResponse(noise_pred=pred)


class MaskClient(_RetryingClient):
    """Client for POST {endpoint}/v1/segment: language-prompted binary masks."""

    def build_body(self, image: np.ndarray, query: str) -> dict:
        return {"image": png_to_b64(image), "query": query}

    def request(self, image: np.ndarray, query: str) -> np.ndarray:
        payload = self._post(self.endpoint + "/v1/segment", self.build_body(image, query))
        if "mask" not in payload:
            raise SchemaError("mask", "missing from response")
        try:
            mask = b64_to_png(payload["mask"])
        except Exception as exc:
            raise SchemaError("mask", f"undecodable PNG: {exc}") from exc
        if mask.ndim != 2:
            raise SchemaError("mask", f"expected grayscale, got shape {mask.shape}")
        if mask.shape != image.shape[:2]:
            raise SchemaError("mask", f"shape {mask.shape} != image shape {image.shape[:2]}")
        return mask >= 128


class LlmClient(_RetryingClient):
    """Chat-completions-style client; temperature is pinned to zero so plan
    synthesis is reproducible."""

    def build_body(self, messages: list[dict]) -> dict:
        return {"messages": messages, "temperature": 0}

    def complete(self, messages: list[dict]) -> str:
        payload = self._post(self.endpoint, self.build_body(messages))
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise SchemaError("choices", f"no message content in reply: {exc}") from exc
        if not isinstance(content, str):
            raise SchemaError("choices", "message content is not a string")
        return content
