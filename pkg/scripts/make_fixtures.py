#!/usr/bin/env python3
"""Regenerate the golden wire fixtures and reference images under
tests/fixtures/. Deterministic: rerunning produces identical bytes."""

import json
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from hcog.guidance import GuidanceRequest
from hcog.images import encode_png, f32le_to_b64, png_to_b64, save_png
from hcog.ply import save_ply
from hcog.rasterizer import render
from hcog.camera import CameraView
from hcog.rng import stream
from hcog.scene import Mark, Scene, logit
from hcog.wire import LlmClient, MaskClient, ScoreClient, canonical_json

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")

TEASER_PLAN = {
    "source_prompt": "A man in a yellow shirt, pink trousers, blue leather shoes and a black coat is waving",
    "blocks": [
        {
            "index": 0,
            "initial_text": "A man in a shirt, shoes and trousers is waving",
            "parts": [
                {"name": "shirt", "attribute_text": "yellow shirt"},
                {"name": "trousers", "attribute_text": "pink trousers"},
                {"name": "shoes", "attribute_text": "blue leather shoes"},
            ],
        },
        {
            "index": 1,
            "initial_text": "A man in a coat is waving",
            "parts": [{"name": "coat", "attribute_text": "black coat"}],
        },
    ],
    "occlusion_edges": [["shirt", "coat"], ["trousers", "coat"]],
}


def stub_luminance_mask(image_rgb: np.ndarray) -> np.ndarray:
    """The deterministic segmentation rule the stub sidecar model applies:
    ITU-R 601 luma thresholded at 128."""
    luma = 0.299 * image_rgb[..., 0] + 0.587 * image_rgb[..., 1] + 0.114 * image_rgb[..., 2]
    return (luma >= 128).astype(np.uint8) * 255


def score_fixture() -> dict:
    rng = stream(2024, "fixture-score")
    image = rng.random((24, 24, 3))
    noise = rng.standard_normal((24, 24, 3)).astype("<f4").astype(np.float64)
    silhouette = np.zeros((24, 24), dtype=bool)
    silhouette[6:18, 8:16] = True
    request = GuidanceRequest(
        prompt="a wizard hat, front view",
        image=image,
        timestep=413,
        noise=noise,
        conditioning=silhouette,
        provider="shape_conditioned",
        cfg_scale=7.5,
    )
    body = ScoreClient("http://unused").build_body(request)
    response = {"noise_pred": f32le_to_b64(noise)}  # echo stub
    return {
        "path": "/v1/score",
        "inputs": {
            "prompt": request.prompt,
            "image": png_to_b64(image),
            "noise": f32le_to_b64(noise),
            "timestep": request.timestep,
            "conditioning": png_to_b64(silhouette.astype(np.uint8) * 255),
            "provider": request.provider,
            "cfg_scale": request.cfg_scale,
            "height": 24,
            "width": 24,
        },
        "request_bytes": canonical_json(body).decode("ascii"),
        "response_bytes": canonical_json(response).decode("ascii"),
    }


def segment_fixture() -> dict:
    rng = stream(2024, "fixture-segment")
    image = rng.random((20, 28, 3))
    image[4:12, 6:20] = 0.9  # bright patch the luma rule will select
    image_u8 = (np.clip(image, 0, 1) * 255 + 0.5).astype(np.uint8)
    body = MaskClient("http://unused").build_body(image, "the bright patch")
    mask = stub_luminance_mask(image_u8.astype(np.float64))
    response = {"mask": png_to_b64(mask)}
    return {
        "path": "/v1/segment",
        "inputs": {"image": png_to_b64(image), "query": "the bright patch", "height": 20, "width": 28},
        "request_bytes": canonical_json(body).decode("ascii"),
        "response_bytes": canonical_json(response).decode("ascii"),
    }


def llm_fixture() -> dict:
    from hcog.planner import PLANNER_SYSTEM_PROMPT

    messages = [
        {"role": "system", "content": PLANNER_SYSTEM_PROMPT},
        {"role": "user", "content": TEASER_PLAN["source_prompt"]},
    ]
    body = LlmClient("http://unused").build_body(messages)
    response = {"choices": [{"message": {"role": "assistant", "content": json.dumps(TEASER_PLAN)}}]}
    return {
        "path": "/",
        "inputs": {"prompt": TEASER_PLAN["source_prompt"]},
        "request_bytes": canonical_json(body).decode("ascii"),
        "response_bytes": canonical_json(response).decode("ascii"),
    }


def golden_render():
    """Small fixed scene: a red, a green, and a blue kernel; rendered from
    azimuth 0 at elevation 15."""
    positions = np.array([[0.0, 0.0, 0.3], [0.0, 0.25, -0.2], [0.0, -0.25, -0.2]])
    rot = np.zeros((3, 4))
    rot[:, 0] = 1.0
    scene = Scene(
        positions=positions,
        log_scales=np.full((3, 3), np.log(0.18)),
        rotations=rot,
        colors=np.eye(3),
        opacity_logits=np.full(3, logit(0.9)),
        seg_logits=np.array([2.0, -2.0, 0.0]),
        block_ids=np.array([0, 0, 1], dtype=np.int32),
        marks=np.array([Mark.ORIGINAL, Mark.ORIGINAL, Mark.NEW_PART], dtype=np.uint8),
        trainable=np.ones(3, dtype=bool),
    )
    save_ply(scene, os.path.join(FIXTURES, "golden_scene.ply"))
    view = CameraView(azimuth=0.0, elevation=15.0, radius=1.8, width=48, height=48)
    out = render(scene, view)
    save_png(out.color, os.path.join(FIXTURES, "golden_az0.png"))


def main():
    os.makedirs(FIXTURES, exist_ok=True)
    for name, fixture in (
        ("score", score_fixture()),
        ("segment", segment_fixture()),
        ("llm", llm_fixture()),
    ):
        with open(os.path.join(FIXTURES, f"{name}_exchange.json"), "w", encoding="utf-8") as fh:
            json.dump(fixture, fh, indent=2)
            fh.write("\n")
    with open(os.path.join(FIXTURES, "teaser_plan.json"), "w", encoding="utf-8") as fh:
        json.dump(TEASER_PLAN, fh, indent=2)
        fh.write("\n")
    golden_render()
    print(f"fixtures written to {FIXTURES}")


if __name__ == "__main__":
    main()
