"""Dataset export and import.

Layout under the dataset directory::

    manifest.json              schema version + one entry per scene
    images/<name>.png          composited color image
    annotations/<name>.json    camera, light and per-instance records
    dense/<name>.cvdm          canonical point per pixel (float32, NaN = none)

Instance records hold ``instance_id``, ``template_id``, ``coeffs``, ``pose``
(quaternion + euler + translation), ``dimensions``, ``bbox2d``, ``mask``
(COCO uncompressed RLE), ``bbox3d`` and ``tiny``. The dense map of an
instance is the set of its mask pixels in row-major order, read from the
scene's dense raster.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaVersionMismatch
from .geometry import CameraExtrinsics, CameraIntrinsics, OrientedBox, Pose
from .imageio import read_dense_raster, read_png, write_dense_raster, write_png
from .raster import DirectionalLight
from .rle import RLE, rle_decode
from .scene import DenseMap, Scene, SceneAnnotation
from .template import Dimensions, ShapeCoefficients

SCHEMA_VERSION = 1


def annotation_to_dict(a: SceneAnnotation) -> dict:
    return {
        "instance_id": a.instance_id,
        "template_id": a.template_id,
        "coeffs": a.coeffs.tolist(),
        "pose": a.pose.to_dict(),
        "dimensions": a.dimensions.to_dict(),
        "bbox2d": list(a.bbox2d) if a.bbox2d is not None else None,
        "mask": a.mask.to_dict(),
        "bbox3d": a.bbox3d.to_dict(),
        "tiny": a.tiny,
    }


def annotation_from_dict(d: dict, dense: np.ndarray) -> SceneAnnotation:
    mask = RLE.from_dict(d["mask"])
    rows, cols = np.nonzero(rle_decode(mask))
    pts = dense[rows, cols].astype(np.float64)
    bbox2d = tuple(float(x) for x in d["bbox2d"]) if d["bbox2d"] is not None else None
    return SceneAnnotation(
        instance_id=int(d["instance_id"]),
        template_id=str(d["template_id"]),
        coeffs=ShapeCoefficients(d["coeffs"]),
        pose=Pose.from_dict(d["pose"]),
        dimensions=Dimensions.from_dict(d["dimensions"]),
        bbox2d=bbox2d,
        mask=mask,
        bbox3d=OrientedBox.from_dict(d["bbox3d"]),
        dense_map=DenseMap(np.stack([cols, rows], 1).astype(np.int64), pts),
        tiny=bool(d.get("tiny", False)),
    )


def _dense_raster(scene: Scene) -> np.ndarray:
    h, w = scene.image.shape[:2]
    raster = np.full((h, w, 3), np.nan, np.float32)
    for a in scene.annotations:
        px = a.dense_map.pixels
        raster[px[:, 1], px[:, 0]] = a.dense_map.points.astype(np.float32)
    return raster


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def export_scene(scene: Scene, root) -> dict:
    root = Path(root)
    for sub in ("images", "annotations", "dense"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    entry = {"name": scene.name, "image": f"images/{scene.name}.png",
             "annotations": f"annotations/{scene.name}.json", "dense": f"dense/{scene.name}.cvdm"}
    write_png(root / entry["image"], scene.image)
    write_dense_raster(root / entry["dense"], _dense_raster(scene))
    _dump(root / entry["annotations"], {
        "schema_version": SCHEMA_VERSION,
        "image": entry["image"],
        "dense": entry["dense"],
        "width": int(scene.image.shape[1]),
        "height": int(scene.image.shape[0]),
        "intrinsics": scene.intrinsics.to_dict(),
        "extrinsics": scene.extrinsics.to_dict(),
        "light": scene.light.to_dict(),
        "instances": [annotation_to_dict(a) for a in scene.annotations],
    })
    return entry


def write_manifest(root, entries, extra: dict | None = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"schema_version": SCHEMA_VERSION, "scenes": list(entries)}
    if extra:
        manifest.update(extra)
    _dump(root / "manifest.json", manifest)


def export_dataset(scenes, root, extra: dict | None = None) -> None:
    names = [s.name for s in scenes]
    if len(set(names)) != len(names):
        raise ValueError("scene names must be unique")
    entries = [export_scene(s, root) for s in scenes]
    write_manifest(root, entries, extra)


def _load_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ParseError("file not found", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=str(path), line=exc.lineno) from exc


def _check_version(d: dict, path: Path) -> None:
    v = d.get("schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"{path}: schema version {v!r}, expected {SCHEMA_VERSION}")


def load_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    manifest = _load_json(path)
    _check_version(manifest, path)
    return manifest


def import_scene(root, entry: dict) -> Scene:
    root = Path(root)
    ann_path = root / entry["annotations"]
    d = _load_json(ann_path)
    _check_version(d, ann_path)
    try:
        image = read_png(root / d["image"])
        dense = read_dense_raster(root / d["dense"])
        k = CameraIntrinsics.from_dict(d["intrinsics"])
        e = CameraExtrinsics.from_dict(d["extrinsics"])
        light = DirectionalLight.from_dict(d["light"])
        anns = [annotation_from_dict(a, dense) for a in d["instances"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed annotation record: {exc}", path=str(ann_path)) from exc
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    return Scene(image[..., :3], k, e, light, anns, entry.get("name", ann_path.stem))


def import_annotations(root) -> list[Scene]:
    manifest = load_manifest(root)
    return [import_scene(root, entry) for entry in manifest["scenes"]]
