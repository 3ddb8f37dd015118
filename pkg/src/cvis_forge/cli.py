"""``cvis-forge`` command line.

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CvisError

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _writable(path: Path) -> Path:
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")
    return path


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _config(args):
    from .pipeline import load_config

    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "count", None) is not None:
        overrides["scenes"] = args.count
    if getattr(args, "vehicles", None) is not None:
        overrides["placement"] = {**cfg.placement.to_dict(), "count": args.vehicles}
    if getattr(args, "inpaint", None) is not None:
        overrides["texture"] = {**cfg.texture.to_dict(), "inpaint": args.inpaint}
    return cfg.replace(**overrides) if overrides else cfg


# ---- subcommands ---------------------------------------------------------------

def cmd_gen_template(args) -> int:
    from .template import make_procedural_template, save_mesh

    save_mesh(make_procedural_template(args.seed), _writable(Path(args.out)))
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_instance(annotations: Path, instance_id: int):
    from .dataset import import_scene

    root = annotations.parent.parent
    scene = import_scene(root, {"annotations": str(annotations.relative_to(root)), "name": annotations.stem})
    for a in scene.annotations:
        if a.instance_id == instance_id:
            return scene, a
    raise UsageError(f"instance {instance_id} not found in {annotations}")


def cmd_bake(args) -> int:
    from .atlas import atlas_paths
    from .bake import bake, coverage_stats
    from .raster import PosedVehicle
    from .template import load_mesh

    scene, ann = _load_instance(Path(args.annotations), args.instance)
    template = load_mesh(args.mesh)
    if template.template_id != ann.template_id:
        print(f"warning: mesh {template.template_id!r} differs from annotated {ann.template_id!r}", file=sys.stderr)
    color_path, mask_path = atlas_paths(args.out)
    _writable(color_path)
    vehicle = PosedVehicle(template, ann.coeffs, ann.pose)
    atlas = bake(scene.image, vehicle, scene.intrinsics, scene.extrinsics, args.resolution,
                 scene.light if args.unshade else None, args.min_footprint)
    atlas.save_png(color_path, mask_path)
    cov = coverage_stats(atlas)
    if not atlas.valid.any():
        print("no texel passed the visibility tests; try a lower --resolution or --min-footprint", file=sys.stderr)
    print(f"wrote {color_path} ({atlas.valid.mean():.1%} valid; per part {np.round(cov, 2).tolist()})")
    return EXIT_OK


def cmd_inpaint(args) -> int:
    from .atlas import TextureAtlas, atlas_paths
    from .inpaint import fill_knn, fill_pure_color, inpaint_with_net, load_weights

    atlas = TextureAtlas.load_png(*atlas_paths(args.atlas))
    out_color, out_mask = atlas_paths(args.out)
    _writable(out_color)
    if args.method == "pure":
        done = fill_pure_color(atlas)
    elif args.method == "knn":
        done = fill_knn(atlas, args.k)
    else:
        if not args.weights:
            raise UsageError("--method net requires --weights")
        done = inpaint_with_net(load_weights(args.weights), atlas)
    done.save_png(out_color, out_mask)
    print(f"wrote {out_color}")
    return EXIT_OK


def cmd_train_inpaint(args) -> int:
    import torch

    from .inpaint.benchmark import run_benchmark
    from .inpaint.graphnet import GraphInpaintNet, save_weights, train
    from .textures import procedural_atlas

    torch.set_num_threads(1)
    _writable(Path(args.out))
    net = GraphInpaintNet(seed=args.seed)
    atlases = [procedural_atlas(1000 + i, args.resolution) for i in range(args.atlases)]
    losses = train(net, atlases, args.steps, lr=args.lr, seed=args.seed)
    save_weights(net, args.out)
    print(f"trained {args.steps} steps: loss {np.mean(losses[:10]):.5f} -> {np.mean(losses[-10:]):.5f}")
    if args.evaluate:
        r = run_benchmark(resolution=args.resolution, net=net)
        print(f"held-out MAE: net {r.net_mae:.2f}, pure color {r.pure_color_mae:.2f}, knn {r.knn_mae:.2f}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    from .pipeline import effective_parallelism, synthesize_dataset

    cfg = _config(args)
    out = Path(args.out)
    if not out.parent.is_dir():
        raise UsageError(f"output parent does not exist: {out.parent}")
    workers = args.workers or effective_parallelism(cfg)
    if workers > 1:
        import torch

        torch.set_num_threads(1)
    res = synthesize_dataset(cfg, out, workers)
    print(f"wrote {res['scenes']} scenes to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    from .geometry import CameraExtrinsics, CameraIntrinsics
    from .pipeline import estimate_dataset, load_config
    from .pose import CorrespondenceSet, RansacConfig, camera_to_world, epnp, ransac_pnp, refine_pose
    from .pose.solvers import reprojection_errors, rms as rms_of

    _writable(Path(args.out))
    if args.dataset:
        cfg = load_config(args.config) if args.config else None
        result = estimate_dataset(args.dataset, cfg)
        _dump_json(args.out, result)
        print(f"estimated {len(result['predictions'])} poses ({len(result['failures'])} failures)")
        return EXIT_OK
    if not (args.correspondences and args.camera):
        raise UsageError("estimate needs --dataset, or --correspondences with --camera")
    cam = json.loads(Path(args.camera).read_text())
    k = CameraIntrinsics.from_dict(cam["intrinsics"])
    e = CameraExtrinsics.from_dict(cam["extrinsics"]) if "extrinsics" in cam else CameraExtrinsics()
    cs = CorrespondenceSet.load_txt(args.correspondences)
    if args.ransac:
        est = ransac_pnp(cs, k, RansacConfig(inlier_threshold=args.threshold, seed=args.seed))
        pose, inliers, rms = est.pose, est.inlier_count, est.rms_reprojection
    else:
        sol = epnp(cs, k)
        pose = refine_pose(sol.pose, cs, k)
        inliers, rms = len(cs), rms_of(reprojection_errors(pose, cs, k))
    _dump_json(args.out, {"pose_camera": pose.to_dict(), "pose_world": camera_to_world(pose, e).to_dict(),
                          "inliers": inliers, "correspondences": len(cs), "rms_reprojection": rms})
    print(f"wrote {args.out} (rms {rms:.3g} px)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_dataset

    _writable(Path(args.out))
    try:
        preds = json.loads(Path(args.predictions).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read predictions: {exc}") from exc
    report = evaluate_dataset(args.dataset, preds)
    _dump_json(args.out, report)
    a, r = report["a3dp_abs"], report["a3dp_rel"]
    print(f"{'':10s}{'mean':>8s}{'c-l':>8s}{'c-s':>8s}")
    print(f"{'A3DP-Abs':10s}{a['mean']:8.3f}{a['c-l']:8.3f}{a['c-s']:8.3f}")
    print(f"{'A3DP-Rel':10s}{r['mean']:8.3f}{r['c-l']:8.3f}{r['c-s']:8.3f}")
    print(f"bbox mAP {report['detection']['bbox_mAP']:.3f}  mask mAP {report['detection']['mask_mAP']:.3f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .pipeline import bench

    cfg = _config(args)
    result = bench(cfg, args.repeats)
    lines = [f"{'stage':24s}{'seconds':>10s}"]
    for k, v in result["stages_seconds"].items():
        lines.append(f"{k:24s}{v:10.3f}")
    text = "\n".join(lines)
    print(text)
    if args.out:
        _writable(Path(args.out))
        _dump_json(args.out, result)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cvis-forge", description="Synthetic vehicle scenes and dense-correspondence pose fitting.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-template", help="write a procedural vehicle template (OBJ + PCA sidecar)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_template)

    s = sub.add_parser("bake", help="bake an annotated instance of a dataset image onto its atlas")
    s.add_argument("--annotations", required=True, help="per-image annotation JSON inside a dataset")
    s.add_argument("--instance", type=int, required=True)
    s.add_argument("--mesh", required=True)
    s.add_argument("--resolution", type=int, default=96)
    s.add_argument("--unshade", action="store_true", help="divide out the scene light's shading")
    s.add_argument("--min-footprint", type=float, default=1.0, help="minimum pixels per texel step")
    s.add_argument("--out", required=True, help="atlas prefix (writes PREFIX.png and PREFIX_mask.png)")
    s.set_defaults(func=cmd_bake)

    s = sub.add_parser("inpaint", help="complete a partial atlas")
    s.add_argument("--atlas", required=True, help="atlas prefix")
    s.add_argument("--method", choices=("pure", "knn", "net"), default="knn")
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--weights")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inpaint)

    s = sub.add_parser("train-inpaint", help="train the part-graph inpainting network on procedural atlases")
    s.add_argument("--steps", type=int, default=600)
    s.add_argument("--lr", type=float, default=5.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--resolution", type=int, default=48)
    s.add_argument("--atlases", type=int, default=32)
    s.add_argument("--evaluate", action="store_true", help="report the held-out benchmark afterwards")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_inpaint)

    s = sub.add_parser("synthesize", help="render a dataset of composited scenes")
    s.add_argument("--config", required=True, help="config JSON, a dataset manifest, or 'demo'")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, help="number of scenes (overrides the config)")
    s.add_argument("--vehicles", type=int, help="vehicles per scene (overrides the config)")
    s.add_argument("--seed", type=int)
    s.add_argument("--inpaint", choices=("pure", "knn", "net"))
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("estimate", help="fit poses from correspondences")
    s.add_argument("--dataset", help="estimate every instance of a dataset (simulated predictor)")
    s.add_argument("--config", help="override the dataset's embedded config")
    s.add_argument("--correspondences", help="text file of 'u v x y z' rows")
    s.add_argument("--camera", help="JSON with 'intrinsics' (and optional 'extrinsics')")
    s.add_argument("--ransac", action="store_true")
    s.add_argument("--threshold", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("evaluate", help="score a prediction dump against a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--predictions", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("bench", help="time every pipeline stage on one scene")
    s.add_argument("--config", default="demo")
    s.add_argument("--vehicles", type=int)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    from .pipeline import ConfigError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CvisError as exc:
        name = getattr(args, "command", "?")
        print(f"{name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
