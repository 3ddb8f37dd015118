"""End-to-end pipeline: textures, scene synthesis, pose estimation and evaluation.

Everything here is a pure function of a :class:`PipelineConfig` and its
seed. Scene ``i`` of a batch uses seed ``config.seed + i`` for every random
choice it makes, so scenes can be produced in any order or in parallel.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .atlas import TextureAtlas
from .bake import bake
from .dataset import export_scene, import_annotations, load_manifest, write_manifest
from .errors import CvisError
from .geometry import CameraExtrinsics, CameraIntrinsics, Pose
from .inpaint import fill_knn, fill_pure_color, inpaint_with_net, load_weights
from .metrics import A3dpConfig, Detection, a3dp, average_precision
from .pose import NoiseModel, RansacConfig, camera_to_world, ransac_pnp, simulate_predictor
from .raster import DirectionalLight, Framebuffer, PosedVehicle, rasterize
from .scene import Background, Placement, PlacementConfig, Scene, compose, place_vehicles
from .template import ShapeCoefficients, VehicleTemplate, load_mesh, make_procedural_template
from .textures import procedural_atlas

CONFIG_VERSION = 1
THREADS_ENV = "CVIS_FORGE_THREADS"
INPAINT_METHODS = ("pure", "knn", "net")
TEXTURE_SOURCES = ("procedural", "baked")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (a usage error, not a domain error)."""


@dataclass(frozen=True)
class CameraConfig:
    intrinsics: CameraIntrinsics
    eye: tuple = (0.0, -16.0, 7.0)
    target: tuple = (0.0, 0.0, 0.0)

    def extrinsics(self) -> CameraExtrinsics:
        return CameraExtrinsics.look_at(self.eye, self.target)

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.to_dict(), "eye": list(self.eye), "target": list(self.target)}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraConfig":
        return cls(CameraIntrinsics.from_dict(d["intrinsics"]), tuple(map(float, d.get("eye", (0, -16, 7)))),
                   tuple(map(float, d.get("target", (0, 0, 0)))))


@dataclass(frozen=True)
class TextureConfig:
    source: str = "baked"  # bake a rendered view, then inpaint; or use procedural atlases directly
    inpaint: str = "knn"
    knn_k: int = 8
    resolution: int = 96
    weights: str | None = None

    def __post_init__(self):
        if self.source not in TEXTURE_SOURCES:
            raise ConfigError(f"texture.source must be one of {TEXTURE_SOURCES}")
        if self.inpaint not in INPAINT_METHODS:
            raise ConfigError(f"texture.inpaint must be one of {INPAINT_METHODS}")
        if self.inpaint == "net" and self.source == "baked" and not self.weights:
            raise ConfigError("texture.inpaint = net needs texture.weights")
        if self.resolution < 6 or self.knn_k < 1:
            raise ConfigError("texture.resolution must be >= 6 and texture.knn_k >= 1")

    def to_dict(self) -> dict:
        return {"source": self.source, "inpaint": self.inpaint, "knn_k": self.knn_k,
                "resolution": self.resolution, "weights": self.weights}


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    scenes: int = 3
    camera: CameraConfig = None
    light: DirectionalLight = field(default_factory=lambda: DirectionalLight([0.4, 0.3, -1.0], 0.5))
    templates: tuple = ()  # mesh paths; empty = procedural templates from template_seeds
    template_seeds: tuple = (0,)
    backgrounds: tuple = ()  # optional background PNGs (same size as the camera), cycled per scene
    coeff_range: float = 1.5
    texture: TextureConfig = field(default_factory=TextureConfig)
    placement: PlacementConfig = field(default_factory=PlacementConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    a3dp: A3dpConfig = field(default_factory=A3dpConfig)
    parallelism: int = 1

    def __post_init__(self):
        if self.camera is None:
            object.__setattr__(self, "camera", CameraConfig(CameraIntrinsics(500, 500, 255.5, 191.5, 512, 384)))
        if self.scenes < 0:
            raise ConfigError("scenes must be >= 0")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not self.templates and not self.template_seeds:
            raise ConfigError("need templates or template_seeds")
        for p in tuple(self.templates) + tuple(self.backgrounds) + ((self.texture.weights,) if self.texture.weights else ()):
            if not Path(p).exists():
                raise ConfigError(f"path does not exist: {p}")

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "seed": self.seed,
            "scenes": self.scenes,
            "camera": self.camera.to_dict(),
            "light": self.light.to_dict(),
            "templates": list(self.templates),
            "template_seeds": list(self.template_seeds),
            "backgrounds": list(self.backgrounds),
            "coeff_range": self.coeff_range,
            "texture": self.texture.to_dict(),
            "placement": self.placement.to_dict(),
            "noise": self.noise.to_dict(),
            "ransac": self.ransac.to_dict(),
            "a3dp": self.a3dp.to_dict(),
            "parallelism": self.parallelism,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version {d.get('version')!r} is not supported (expected {CONFIG_VERSION})")
        known = {"version", "seed", "scenes", "camera", "light", "templates", "template_seeds", "backgrounds",
                 "coeff_range", "texture", "placement", "noise", "ransac", "a3dp", "parallelism"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {}
            for key in ("seed", "scenes", "parallelism"):
                if key in d:
                    kw[key] = int(d[key])
            if "coeff_range" in d:
                kw["coeff_range"] = float(d["coeff_range"])
            if "camera" in d:
                kw["camera"] = CameraConfig.from_dict(d["camera"])
            if "light" in d:
                kw["light"] = DirectionalLight.from_dict(d["light"])
            for key in ("templates", "backgrounds"):
                if key in d:
                    kw[key] = tuple(str(p) for p in d[key])
            if "template_seeds" in d:
                kw["template_seeds"] = tuple(int(s) for s in d["template_seeds"])
            if "texture" in d:
                kw["texture"] = TextureConfig(**d["texture"])
            if "placement" in d:
                kw["placement"] = PlacementConfig.from_dict(d["placement"])
            if "noise" in d:
                kw["noise"] = NoiseModel.from_dict(d["noise"])
            if "ransac" in d:
                kw["ransac"] = RansacConfig.from_dict(d["ransac"])
            if "a3dp" in d:
                kw["a3dp"] = A3dpConfig.from_dict(d["a3dp"])
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cls(**kw)

    def replace(self, **changes) -> "PipelineConfig":
        d = self.to_dict()
        for k, v in changes.items():
            d[k] = v
        return PipelineConfig.from_dict(d)


def demo_config_path() -> Path:
    return Path(str(resources.files("cvis_forge") / "data" / "demo.json"))


def load_config(path) -> PipelineConfig:
    """Read a config file; ``demo`` names the bundled demo, manifests are accepted too."""
    p = demo_config_path() if str(path) == "demo" else Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}: {exc.msg}") from exc
    if "config" in d and "scenes" in d and isinstance(d["scenes"], list):
        d = d["config"]  # a dataset manifest
    return PipelineConfig.from_dict(d)


def effective_parallelism(cfg: PipelineConfig) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return n
    return cfg.parallelism


# ---- templates and textures --------------------------------------------------

@lru_cache(maxsize=8)
def _procedural(seed: int) -> VehicleTemplate:
    return make_procedural_template(seed)


@lru_cache(maxsize=8)
def _mesh(path: str) -> VehicleTemplate:
    return load_mesh(path)


def fleet_templates(cfg: PipelineConfig) -> list[VehicleTemplate]:
    if cfg.templates:
        return [_mesh(p) for p in cfg.templates]
    return [_procedural(s) for s in cfg.template_seeds]


def template_by_id(cfg: PipelineConfig, template_id: str) -> VehicleTemplate:
    for t in fleet_templates(cfg):
        if t.template_id == template_id:
            return t
    raise CvisError(f"template {template_id!r} is not part of the configuration")


def _bake_camera(rng: np.random.Generator, resolution: int):
    k = CameraIntrinsics(500.0, 500.0, 159.5, 119.5, 320, 240)
    az = rng.uniform(-math.pi, math.pi)
    el = rng.uniform(0.25, 0.7)
    eye = 7.0 * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return k, CameraExtrinsics.look_at(eye + [0.0, 0.0, 0.7], [0.0, 0.0, 0.7])


_NET_CACHE: dict = {}


def inpaint_atlas(atlas: TextureAtlas, tex: TextureConfig) -> TextureAtlas:
    if tex.inpaint == "pure":
        return fill_pure_color(atlas)
    if tex.inpaint == "knn":
        return fill_knn(atlas, tex.knn_k)
    if tex.weights not in _NET_CACHE:
        _NET_CACHE[tex.weights] = load_weights(tex.weights)
    return inpaint_with_net(_NET_CACHE[tex.weights], atlas)


def vehicle_texture(template: VehicleTemplate, coeffs: ShapeCoefficients, cfg: PipelineConfig,
                    seed: int, timings: dict | None = None) -> TextureAtlas:
    """A complete atlas for one vehicle.

    With the ``baked`` source a procedurally painted vehicle is rendered from
    a random view, baked back to a partial atlas and completed by the
    configured inpainting method, exercising the view-synthesis path.
    """
    tex = cfg.texture
    rng = np.random.default_rng(seed)
    source = procedural_atlas(int(rng.integers(0, 2**31 - 1)), tex.resolution)
    if tex.source == "procedural":
        return source
    t0 = time.perf_counter()
    k, e = _bake_camera(rng, tex.resolution)
    pose = Pose.from_euler(rng.uniform(-math.pi, math.pi), 0.0, 0.0, (0.0, 0.0, 0.7))
    vehicle = PosedVehicle(template, coeffs, pose, source)
    fb = Framebuffer.create(k.width, k.height)
    rasterize(vehicle, k, e, fb, 1, cfg.light)
    t1 = time.perf_counter()
    partial = bake(fb.color, vehicle, k, e, tex.resolution, cfg.light)
    t2 = time.perf_counter()
    if not partial.valid.any():
        partial = source  # nothing visible; fall back to the source texture
    done = inpaint_atlas(partial, tex)
    t3 = time.perf_counter()
    if timings is not None:
        timings["texture_render"] = timings.get("texture_render", 0.0) + (t1 - t0)
        timings["bake"] = timings.get("bake", 0.0) + (t2 - t1)
        timings["inpaint"] = timings.get("inpaint", 0.0) + (t3 - t2)
    return done


# ---- synthesis ---------------------------------------------------------------

def scene_name(index: int) -> str:
    return f"{index:06d}"


def scene_background(cfg: PipelineConfig, index: int) -> Background:
    from .imageio import read_png

    k, e = cfg.camera.intrinsics, cfg.camera.extrinsics()
    if cfg.backgrounds:
        img = read_png(cfg.backgrounds[index % len(cfg.backgrounds)])
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        return Background(img[..., :3], k, e, cfg.light)
    return Background.procedural(k, e, cfg.light, seed=cfg.seed + index)


def synthesize_scene(cfg: PipelineConfig, index: int, timings: dict | None = None) -> Scene:
    seed = cfg.seed + index
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bg = scene_background(cfg, index)
    templates = fleet_templates(cfg)
    n = cfg.placement.count
    fleet = []
    for i in range(n):
        t = templates[i % len(templates)]
        fleet.append((t, ShapeCoefficients(rng.uniform(-cfg.coeff_range, cfg.coeff_range, t.component_count))))
    t1 = time.perf_counter()
    poses = place_vehicles(bg, PlacementConfig.from_dict({**cfg.placement.to_dict(), "seed": seed}), fleet)
    t2 = time.perf_counter()
    tex_seeds = rng.integers(0, 2**31 - 1, size=n)
    atlases = [vehicle_texture(t, c, cfg, int(s), timings) for (t, c), s in zip(fleet, tex_seeds)]
    t3 = time.perf_counter()
    image, anns = compose(bg, [Placement(t, c, p) for (t, c), p in zip(fleet, poses)], atlases)
    t4 = time.perf_counter()
    if timings is not None:
        timings["background+fleet"] = timings.get("background+fleet", 0.0) + (t1 - t0)
        timings["placement"] = timings.get("placement", 0.0) + (t2 - t1)
        timings["textures"] = timings.get("textures", 0.0) + (t3 - t2)
        timings["compose"] = timings.get("compose", 0.0) + (t4 - t3)
    return Scene(image, bg.intrinsics, bg.extrinsics, bg.light, anns, scene_name(index))


def _synth_job(args):
    cfg_dict, index, out = args
    cfg = PipelineConfig.from_dict(cfg_dict)
    return export_scene(synthesize_scene(cfg, index), out)


def synthesize_dataset(cfg: PipelineConfig, out, workers: int | None = None) -> dict:
    """Render ``cfg.scenes`` scenes into ``out`` and write the manifest last."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or effective_parallelism(cfg)
    jobs = [(cfg.to_dict(), i, str(out)) for i in range(cfg.scenes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_synth_job, jobs))
    else:
        entries = [_synth_job(j) for j in jobs]
    manifest_extra = {"config": cfg.to_dict(), "seed": cfg.seed,
                      "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    write_manifest(out, entries, manifest_extra)
    return {"scenes": len(entries)}


# ---- estimation and evaluation -----------------------------------------------

PREDICTION_SCHEMA = 1


def estimate_instance(ann, scene: Scene, cfg: PipelineConfig, index: int, template: VehicleTemplate | None):
    """World pose of one annotated instance from simulated correspondences, or None."""
    nm = NoiseModel.from_dict({**cfg.noise.to_dict(), "seed": cfg.noise.seed + index})
    try:
        cs = simulate_predictor(ann, nm, template)
        est = ransac_pnp(cs, scene.intrinsics, RansacConfig.from_dict({**cfg.ransac.to_dict(),
                                                                       "seed": cfg.ransac.seed + index}))
    except CvisError as exc:
        return None, str(exc)
    world = camera_to_world(est.pose, scene.extrinsics)
    return {
        "scene": scene.name,
        "instance_id": ann.instance_id,
        "template_id": ann.template_id,
        "score": est.inlier_count / len(cs),
        "pose": world.to_dict(),
        "dimensions": cs.dimensions.to_dict(),
        "bbox2d": list(ann.bbox2d) if ann.bbox2d is not None else None,
        "mask": ann.mask.to_dict(),
        "inliers": est.inlier_count,
        "correspondences": len(cs),
        "rms_reprojection": est.rms_reprojection,
        "iterations": est.iterations_used,
    }, None


def estimate_dataset(dataset, cfg: PipelineConfig | None = None) -> dict:
    manifest = load_manifest(dataset)
    if cfg is None:
        cfg = PipelineConfig.from_dict(manifest["config"]) if "config" in manifest else PipelineConfig()
    scenes = import_annotations(dataset)
    preds, failures = [], []
    counter = 0
    for scene in scenes:
        for ann in scene.annotations:
            counter += 1
            if not len(ann.dense_map):
                failures.append({"scene": scene.name, "instance_id": ann.instance_id, "reason": "not visible"})
                continue
            template = template_by_id(cfg, ann.template_id)
            rec, err = estimate_instance(ann, scene, cfg, counter, template)
            if rec is None:
                failures.append({"scene": scene.name, "instance_id": ann.instance_id, "reason": err})
            else:
                preds.append(rec)
    return {"schema_version": PREDICTION_SCHEMA, "noise": cfg.noise.to_dict(), "ransac": cfg.ransac.to_dict(),
            "predictions": preds, "failures": failures}


def _detection_from_pred(p: dict) -> Detection:
    from .rle import RLE
    from .template import Dimensions

    return Detection(score=p.get("score"), bbox2d=tuple(p["bbox2d"]) if p.get("bbox2d") else None,
                     mask=RLE.from_dict(p["mask"]) if p.get("mask") else None,
                     pose=Pose.from_dict(p["pose"]) if p.get("pose") else None,
                     dimensions=Dimensions.from_dict(p["dimensions"]) if p.get("dimensions") else None,
                     shape_id=p.get("template_id"), image_id=p["scene"])


def evaluate_dataset(dataset, predictions: dict, cfg: A3dpConfig | None = None) -> dict:
    """mAP (boxes and masks) and A3DP-Abs/Rel of a prediction dump against a dataset.

    Ground truths with an empty mask (not visible at all) are left out.
    """
    scenes = import_annotations(dataset)
    gts, centers = [], {}
    for s in scenes:
        centers[s.name] = s.extrinsics.camera_center
        for a in s.annotations:
            if a.mask.area == 0:
                continue
            gts.append(Detection(1.0, a.bbox2d, a.mask, a.pose, a.dimensions, a.template_id, s.name))
    dets = [_detection_from_pred(p) for p in predictions.get("predictions", [])]
    abs_cfg = cfg if cfg is not None and cfg.mode == "abs" else A3dpConfig.default("abs")
    rel_cfg = cfg if cfg is not None and cfg.mode == "rel" else A3dpConfig.default("rel")
    box_dets = [d for d in dets if d.bbox2d is not None]
    mask_dets = [d for d in dets if d.mask is not None]
    pose_dets = [d for d in dets if d.pose is not None and d.dimensions is not None]
    ra = a3dp(pose_dets, gts, abs_cfg, centers)
    rr = a3dp(pose_dets, gts, rel_cfg, centers)
    return {
        "schema_version": PREDICTION_SCHEMA,
        "note": "A3DP thresholds are reconstructed defaults, not an official table",
        "ground_truths": len(gts),
        "predictions": len(dets),
        "detection": {"bbox_mAP": average_precision(box_dets, gts),
                      "mask_mAP": average_precision(mask_dets, gts, use_masks=True)},
        "a3dp_abs": {"mean": ra.mean, "c-l": ra.c_l, "c-s": ra.c_s, "levels": list(ra.per_level),
                     "thresholds": abs_cfg.to_dict()},
        "a3dp_rel": {"mean": rr.mean, "c-l": rr.c_l, "c-s": rr.c_s, "levels": list(rr.per_level),
                     "thresholds": rel_cfg.to_dict()},
    }


# ---- benchmark ----------------------------------------------------------------

def bench(cfg: PipelineConfig, repeats: int = 1) -> dict:
    """Wall time per pipeline stage for one scene, averaged over ``repeats``."""
    totals: dict = {}
    t_tpl = time.perf_counter()
    _procedural.cache_clear()
    fleet_templates(cfg)
    totals["template"] = (time.perf_counter() - t_tpl) * repeats
    pose_time = 0.0
    n_inst = 0
    for r in range(repeats):
        t0 = time.perf_counter()
        scene = synthesize_scene(cfg, 0, totals)
        totals["scene_total"] = totals.get("scene_total", 0.0) + time.perf_counter() - t0
        t1 = time.perf_counter()
        for i, ann in enumerate(scene.annotations):
            rec, _ = estimate_instance(ann, scene, cfg, i + 1, template_by_id(cfg, ann.template_id))
            n_inst += rec is not None
        pose_time += time.perf_counter() - t1
    totals["pose_estimation"] = pose_time
    table = {k: v / repeats for k, v in totals.items()}
    vehicles = max(cfg.placement.count, 1)
    table["per_vehicle_synthesis"] = table.get("scene_total", 0.0) / vehicles
    table["per_instance_pose"] = pose_time / max(n_inst, 1)
    return {"stages_seconds": table, "vehicles": cfg.placement.count, "repeats": repeats,
            "width": cfg.camera.intrinsics.width, "height": cfg.camera.intrinsics.height}
