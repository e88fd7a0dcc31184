"""Run orchestration: per-block coarse generation, per-part segmentation and
refinement, between-block extension and elimination, with a checkpoint after
every stage.

A run is a fixed stage sequence derived from the plan:

    init, coarse(0), refine(0, p) for each part p,
    [extend(b), coarse(b), eliminate(b), refine(b, p)...]  for b >= 1

Every stage draws randomness from streams keyed by (seed, stage, block,
part, step) rather than one sequential generator, the optimizer state lives
and dies inside a single stage, and each stage derives the trainable set
from scene content at entry. Together these make a resumed run replay the
remaining stages bit for bit.
"""

from __future__ import annotations

import csv
import datetime
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraConfig, sample_view, turntable_views, view_prompt
from .config import ConfigError, RunConfig
from .extend import ExtensionConfig, extend, label_eliminate
from .guidance import NoiseSchedule, PhotometricOracle, guidance_step
from .images import save_png
from .planner import Plan, load_plan, plan_from_dict, validate
from .ply import load_ply, save_ply
from .rasterizer import RenderOptions, render, render_silhouette
from .rng import stream
from .scene import MIN_LOG_SCALE, Mark, Scene, random_ball_scene
from .segmentation import SegmentationConfig, SyntheticMaskOracle, WireMaskOracle, segment_part
from .wire import MaskClient, ScoreClient

__all__ = [
    "OptimizerConfig",
    "GroupOptimizer",
    "PipelineError",
    "HashMismatchError",
    "run",
    "resume",
    "stage_sequence",
]

TURNTABLE_AZIMUTHS = (0, 45, 90, 135, 180, 225, 270, 315)
TURNTABLE_ELEVATION = 15.0


class PipelineError(RuntimeError):
    pass


class HashMismatchError(PipelineError):
    """Checkpoint belongs to a different configuration."""


@dataclass
class OptimizerConfig:
    position: float = 1.6e-4  # scaled by scene_radius
    color: float = 2.5e-3
    opacity: float = 5e-2
    scale: float = 5e-3
    rotation: float = 1e-3
    seg: float = 0.05
    momentum: float = 0.9
    scene_radius: float = 1.0


class GroupOptimizer:
    """Momentum descent with per-group step sizes.

    Updates touch only kernels whose master flag and group flag are set, so
    frozen kernels stay bit-identical through any number of steps. Rotations
    are renormalized and log-scales floored, again only on updated rows.
    """

    def __init__(self, config: OptimizerConfig, n: int):
        self.config = config
        self.m_position = np.zeros((n, 3))
        self.m_log_scale = np.zeros((n, 3))
        self.m_rotation = np.zeros((n, 4))
        self.m_color = np.zeros((n, 3))
        self.m_opacity = np.zeros(n)
        self.m_seg = np.zeros(n)

    def step(self, scene: Scene, grads) -> None:
        mu = self.config.momentum
        self.m_position = mu * self.m_position + grads.position
        self.m_log_scale = mu * self.m_log_scale + grads.log_scale
        self.m_rotation = mu * self.m_rotation + grads.rotation
        self.m_color = mu * self.m_color + grads.color
        self.m_opacity = mu * self.m_opacity + grads.opacity_logit
        self.m_seg = mu * self.m_seg + grads.seg_logit

        geom = scene.trainable_in("geometry")
        if geom.any():
            lr_pos = self.config.position * self.config.scene_radius
            scene.positions[geom] = (
                scene.positions[geom].astype(np.float64) - lr_pos * self.m_position[geom]
            ).astype(np.float32)
            scene.log_scales[geom] = np.maximum(
                (scene.log_scales[geom].astype(np.float64) - self.config.scale * self.m_log_scale[geom]),
                MIN_LOG_SCALE,
            ).astype(np.float32)
            rot = scene.rotations[geom].astype(np.float64) - self.config.rotation * self.m_rotation[geom]
            rot /= np.linalg.norm(rot, axis=1, keepdims=True)
            scene.rotations[geom] = rot.astype(np.float32)
        color = scene.trainable_in("color")
        if color.any():
            scene.colors[color] = (
                scene.colors[color].astype(np.float64) - self.config.color * self.m_color[color]
            ).astype(np.float32)
        opacity = scene.trainable_in("opacity")
        if opacity.any():
            scene.opacity_logits[opacity] = (
                scene.opacity_logits[opacity].astype(np.float64) - self.config.opacity * self.m_opacity[opacity]
            ).astype(np.float32)
        seg = scene.trainable_in("seg")
        if seg.any():
            scene.seg_logits[seg] = (
                scene.seg_logits[seg].astype(np.float64) - self.config.seg * self.m_seg[seg]
            ).astype(np.float32)


@dataclass(frozen=True)
class Stage:
    index: int
    kind: str  # init | coarse | extend | eliminate | refine
    block: int | None = None
    part: str | None = None
    part_index: int | None = None

    def name(self) -> str:
        bits = [self.kind]
        if self.block is not None:
            bits.append(f"b{self.block}")
        if self.part is not None:
            bits.append(self.part)
        return "_".join(bits)


def stage_sequence(plan: Plan) -> list[Stage]:
    stages = [Stage(0, "init")]
    idx = 1
    for block in plan.blocks:
        if block.index > 0:
            stages.append(Stage(idx, "extend", block.index))
            idx += 1
        stages.append(Stage(idx, "coarse", block.index))
        idx += 1
        if block.index > 0:
            stages.append(Stage(idx, "eliminate", block.index))
            idx += 1
        for pi, part in enumerate(block.parts):
            stages.append(Stage(idx, "refine", block.index, part.name, pi))
            idx += 1
    return stages


class _Run:
    def __init__(self, config: RunConfig, out_dir):
        self.config = config
        self.out_dir = str(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.seed = config.seed
        self.plan = self._load_plan()
        self.stages = stage_sequence(self.plan)
        cam = config["camera"]
        img = config["image"]
        self.camera = CameraConfig(
            radius=cam["radius"],
            radius_scale=cam["radius_scale"],
            fov_y=img["fov_y"],
            width=img["width"],
            height=img["height"],
            elevation_range=tuple(cam["elevation_range"]),
        )
        self.options = RenderOptions(
            tile_size=int(config["render"]["tile_size"]), workers=int(config["render"]["workers"])
        )
        sch = config["guidance"]["schedule"]
        self.schedule = NoiseSchedule(
            steps=int(sch["steps"]), beta_start=float(sch["beta_start"]), beta_end=float(sch["beta_end"])
        )
        self.seg_config = SegmentationConfig(**config["segmentation"])
        self.ext_config = ExtensionConfig(
            count=config["extension"]["count"], perturb_sigma=float(config["extension"]["perturb_sigma"])
        )
        self.opt_config = OptimizerConfig(**config["optimizer"])
        self.providers = self._build_providers()
        self.mask_oracle = self._build_mask_oracle()
        self.manifest_path = os.path.join(self.out_dir, "manifest.json")
        self.metrics_path = os.path.join(self.out_dir, "metrics.csv")

    # -- wiring --------------------------------------------------------------

    def _load_plan(self) -> Plan:
        plan_cfg = self.config["plan"]
        if plan_cfg["file"] is not None:
            return load_plan(plan_cfg["file"])
        plan = plan_from_dict(plan_cfg["inline"])
        violations = validate(plan)
        if violations:
            raise ConfigError("plan.inline", "; ".join(str(v) for v in violations))
        return plan

    def _build_providers(self) -> dict:
        g = self.config["guidance"]
        if g["mode"] == "oracle":
            target_scene = load_ply(g["oracle_target"], seed=self.seed)

            def target_for(view):
                return render(target_scene, view, self.options).color

            oracle = PhotometricOracle(target_for, gain=float(g["oracle_gain"]))
            return {"multiview": oracle, "shape_conditioned": oracle}
        providers = {}
        for tag in ("multiview", "shape_conditioned"):
            endpoint = g[f"{tag}_endpoint"] or g["endpoint"]
            providers[tag] = ScoreClient(endpoint)
        return providers

    def _build_mask_oracle(self):
        m = self.config["mask"]
        if m["mode"] == "wire":
            return WireMaskOracle(MaskClient(m["endpoint"]))
        regions = m["parts"]

        def selector(scene: Scene, query: str) -> np.ndarray:
            region = regions.get(query)
            if region is None:
                raise PipelineError(f"no synthetic mask region configured for part {query!r}")
            if "block" in region:
                return scene.block_ids == int(region["block"])
            center = np.asarray(region["center"], dtype=np.float64)
            radius = float(region["radius"])
            return np.linalg.norm(scene.positions.astype(np.float64) - center, axis=1) <= radius

        return SyntheticMaskOracle(selector, options=self.options, dilate=float(m["dilate"]))

    # -- manifest and metrics -------------------------------------------------

    def _new_manifest(self) -> dict:
        return {
            "config_hash": self.config.hash(),
            "seed": self.seed,
            "created": _now(),
            "plan_parts": self.plan.part_names(),
            "stages": [],
            "finished": False,
        }

    def _write_manifest(self, manifest: dict) -> None:
        tmp = self.manifest_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
        os.replace(tmp, self.manifest_path)

    def _metric(self, stage: Stage, step: int, metric: str, value: float) -> None:
        new = not os.path.exists(self.metrics_path)
        with open(self.metrics_path, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["stage", "kind", "block", "part", "step", "metric", "value"])
            writer.writerow(
                [stage.index, stage.kind, stage.block, stage.part or "", step, metric, f"{value:.10g}"]
            )

    # -- stages ----------------------------------------------------------------

    def init_scene(self) -> Scene:
        init = self.config["init"]
        if init["source"] == "ply":
            scene = load_ply(init["ply"], seed=self.seed)
            scene.trainable[:] = True
            return scene
        return random_ball_scene(
            int(init["count"]),
            stream(self.seed, "init"),
            radius=float(init["radius"]),
            color=tuple(init["color"]),
            opacity=float(init["opacity"]),
            scale=init["scale"],
            seed=self.seed,
        )

    def _optimize(self, scene: Scene, stage: Stage, prompt: str, steps: int, providers: dict, selection=None):
        optimizer = GroupOptimizer(self.opt_config, len(scene))
        weights = dict(self.config["guidance"]["weights"])
        for step in range(steps):
            rng = stream(self.seed, stage.kind, stage.block or 0, stage.part_index or 0, step)
            view = sample_view(rng, self.camera, scene)
            silhouette = None
            if selection is not None:
                silhouette = render_silhouette(scene, selection, view, self.options)
            grads, diag = guidance_step(
                scene,
                view,
                view_prompt(prompt, view),
                providers,
                self.schedule,
                rng,
                silhouette=silhouette,
                weights=weights,
                cfg_scale=float(self.config["guidance"]["cfg_scale"]),
                w_t=self.config["guidance"]["w_t"],
                options=self.options,
            )
            optimizer.step(scene, grads)
            if step % 10 == 0 or step == steps - 1:
                for tag, residual in diag.items():
                    self._metric(stage, step, f"residual_{tag}", residual)

    def run_stage(self, scene: Scene | None, stage: Stage) -> Scene:
        if stage.kind == "init":
            return self.init_scene()
        assert scene is not None
        block = self.plan.blocks[[b.index for b in self.plan.blocks].index(stage.block)]

        if stage.kind == "extend":
            rng = stream(self.seed, "extend", stage.block)
            extend(scene, self.ext_config, rng, block_id=stage.block)
            self._metric(stage, 0, "kernels", len(scene))
            return scene

        if stage.kind == "coarse":
            scene.trainable = scene.block_ids == stage.block
            for g in scene.group_masks:
                scene.group_masks[g][:] = True
            providers = dict(self.providers)
            if not self.config["guidance"]["coarse_shape_conditioning"]:
                providers.pop("shape_conditioned", None)
                selection = None
            else:
                selection = scene.trainable.copy()
            self._optimize(scene, stage, block.initial_text, int(self.config["steps"]["coarse"]), providers, selection)
            return scene

        if stage.kind == "eliminate":
            rng = stream(self.seed, "eliminate", stage.block)
            removed = label_eliminate(
                scene,
                [p.name for p in block.parts],
                self.mask_oracle,
                self.seg_config,
                rng,
                self.camera,
                options=self.options,
            )
            self._metric(stage, 0, "removed", removed)
            return scene

        if stage.kind == "refine":
            part = block.parts[stage.part_index]
            rng = stream(self.seed, "segment", stage.block, stage.part_index)
            subset = scene.block_ids == stage.block
            selected = segment_part(
                scene, part.name, self.mask_oracle, self.seg_config, rng, self.camera, subset=subset, options=self.options
            )
            self._metric(stage, 0, "selected", len(selected))
            if len(selected) == 0:
                return scene
            saved = scene.trainable.copy()
            mask = np.zeros(len(scene), dtype=bool)
            mask[selected] = True
            scene.trainable = mask
            for g in scene.group_masks:
                scene.group_masks[g][:] = True
            try:
                self._optimize(
                    scene, stage, part.attribute_text, int(self.config["steps"]["fine"]), dict(self.providers), selected
                )
            finally:
                scene.trainable = saved
            return scene

        raise PipelineError(f"unknown stage kind {stage.kind!r}")

    def checkpoint_path(self, stage: Stage) -> str:
        return os.path.join(self.out_dir, f"ckpt_{stage.index:03d}_{stage.name()}.ply")

    def emit_turntable(self, scene: Scene, block: int) -> None:
        views = turntable_views(self.camera, scene, TURNTABLE_AZIMUTHS, TURNTABLE_ELEVATION)
        for az, view in zip(TURNTABLE_AZIMUTHS, views):
            out = render(scene, view, self.options)
            save_png(out.color, os.path.join(self.out_dir, f"block{block}_az{az}.png"))

    def execute(self, manifest: dict, scene: Scene | None, start_index: int, stop_after: int | None) -> tuple[Scene, dict]:
        last_of_block = {}
        for stage in self.stages:
            if stage.block is not None:
                last_of_block[stage.block] = stage.index
        for stage in self.stages[start_index:]:
            entry = {
                "index": stage.index,
                "kind": stage.kind,
                "block": stage.block,
                "part": stage.part,
                "status": "running",
                "started": _now(),
                "seed": self.seed,
            }
            manifest["stages"].append(entry)
            self._write_manifest(manifest)
            try:
                scene = self.run_stage(scene, stage)
            except Exception as exc:
                entry["status"] = "failed"
                entry["error"] = str(exc)
                entry["finished"] = _now()
                self._write_manifest(manifest)
                raise
            ckpt = self.checkpoint_path(stage)
            save_ply(scene, ckpt)
            entry["status"] = "done"
            entry["finished"] = _now()
            entry["checkpoint"] = os.path.basename(ckpt)
            if stage.block is not None and last_of_block.get(stage.block) == stage.index:
                self.emit_turntable(scene, stage.block)
            self._write_manifest(manifest)
            if stop_after is not None and stage.index >= stop_after:
                return scene, manifest
        manifest["finished"] = True
        save_ply(scene, os.path.join(self.out_dir, "final.ply"))
        self._write_manifest(manifest)
        return scene, manifest


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def run(config: RunConfig, out_dir, stop_after: int | None = None) -> tuple[Scene, dict]:
    """Execute a full run into ``out_dir``; ``stop_after`` ends the run after
    that stage index completes (used to exercise interruption)."""
    runner = _Run(config, out_dir)
    manifest = runner._new_manifest()
    return runner.execute(manifest, None, 0, stop_after)


def resume(config: RunConfig, out_dir, stop_after: int | None = None) -> tuple[Scene, dict]:
    """Continue an interrupted run from its last completed checkpoint.

    The stored config hash must match; a completed run returns its final
    scene immediately. The resumed remainder is bit-identical to an
    uninterrupted run with the same config and seed.
    """
    runner = _Run(config, out_dir)
    if not os.path.exists(runner.manifest_path):
        raise PipelineError(f"no manifest at {runner.manifest_path}")
    with open(runner.manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("config_hash") != config.hash():
        raise HashMismatchError(
            f"checkpoint hash {manifest.get('config_hash')!r} != config hash {config.hash()!r}"
        )
    if manifest.get("finished"):
        return load_ply(os.path.join(out_dir, "final.ply"), seed=config.seed), manifest

    done = [e for e in manifest["stages"] if e["status"] == "done"]
    manifest["stages"] = done
    if not done:
        return runner.execute(manifest, None, 0, stop_after)
    last = done[-1]
    scene = load_ply(os.path.join(out_dir, last["checkpoint"]), seed=config.seed)
    return runner.execute(manifest, scene, last["index"] + 1, stop_after)
