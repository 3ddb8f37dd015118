import json
from pathlib import Path

import numpy as np
import pytest

from cvis_forge.cli import main
from cvis_forge.dataset import load_manifest
from cvis_forge.geometry import Pose
from cvis_forge.template import load_mesh, make_procedural_template


def files_of(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    out = root / "data"
    assert main(["synthesize", "--config", "demo", "--out", str(out)]) == 0
    return root, out


def test_gen_template_is_deterministic(tmp_path):
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    assert main(["gen-template", "--seed", "3", "--out", str(a)]) == 0
    assert main(["gen-template", "--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert Path(str(a) + ".pca").read_bytes() == Path(str(b) + ".pca").read_bytes()
    assert load_mesh(a).equals(make_procedural_template(3))


def test_gen_template_bad_path(tmp_path, capsys):
    assert main(["gen-template", "--out", str(tmp_path / "missing" / "t.obj")]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_unknown_subcommand_and_missing_args():
    assert main(["frobnicate"]) == 2
    assert main(["gen-template"]) == 2


def test_estimate_hand_written_correspondences(tmp_path):
    # fx = fy = 100, principal point (50, 50); object 10 m straight ahead, unrotated
    rows = """\
50 50 0 0 0
60 50 1 0 0
50 60 0 1 0
40 50 -1 0 0
60 60 1 1 0
59.090909090909092 50 1 0 1
"""
    (tmp_path / "c.txt").write_text(rows)
    (tmp_path / "cam.json").write_text(json.dumps(
        {"intrinsics": {"fx": 100, "fy": 100, "cx": 50, "cy": 50, "width": 101, "height": 101}}))
    out = tmp_path / "pose.json"
    assert main(["estimate", "--correspondences", str(tmp_path / "c.txt"), "--camera", str(tmp_path / "cam.json"),
                 "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    pose = Pose.from_dict(res["pose_camera"])
    assert pose.allclose(Pose.from_euler(0.0, translation=(0, 0, 10)), atol=1e-9)
    assert res["rms_reprojection"] < 1e-9 and res["correspondences"] == 6


def test_estimate_too_few_rows_is_domain_error(tmp_path):
    (tmp_path / "c.txt").write_text("50 50 0 0 0\n60 50 1 0 0\n")
    (tmp_path / "cam.json").write_text(json.dumps(
        {"intrinsics": {"fx": 100, "fy": 100, "cx": 50, "cy": 50, "width": 101, "height": 101}}))
    assert main(["estimate", "--correspondences", str(tmp_path / "c.txt"), "--camera", str(tmp_path / "cam.json"),
                 "--out", str(tmp_path / "p.json")]) == 1


def test_estimate_needs_inputs(tmp_path):
    assert main(["estimate", "--out", str(tmp_path / "p.json")]) == 2


def test_synthesize_zero_scenes(tmp_path):
    out = tmp_path / "empty"
    assert main(["synthesize", "--config", "demo", "--count", "0", "--out", str(out)]) == 0
    manifest = load_manifest(out)
    assert manifest["scenes"] == [] and manifest["config"]["scenes"] == 0


def test_synthesize_bad_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"version": 2}))
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    cfg.write_text(json.dumps({"version": 1, "bogus": 1}))
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_placement_failure_is_domain_error(tmp_path):
    assert main(["synthesize", "--config", "demo", "--count", "1", "--vehicles", "60",
                 "--out", str(tmp_path / "o")]) == 1


def test_demo_pipeline_scores_perfectly(demo):
    root, data = demo
    manifest = load_manifest(data)
    assert len(manifest["scenes"]) == 3 and manifest["seed"] == 7
    preds = root / "preds.json"
    report = root / "report.json"
    assert main(["estimate", "--dataset", str(data), "--out", str(preds)]) == 0
    assert main(["evaluate", "--dataset", str(data), "--predictions", str(preds), "--out", str(report)]) == 0
    r = json.loads(report.read_text())
    assert r["a3dp_abs"]["mean"] == 1.0 and r["a3dp_rel"]["mean"] == 1.0
    assert r["detection"]["bbox_mAP"] == 1.0


def test_rerun_from_manifest_is_byte_identical(demo, tmp_path):
    _, data = demo
    again = tmp_path / "again"
    assert main(["synthesize", "--config", str(data / "manifest.json"), "--out", str(again)]) == 0
    assert files_of(data) == files_of(again)
    a, b = load_manifest(data), load_manifest(again)
    assert a["config"] == b["config"] and a["scenes"] == b["scenes"]


def test_parallel_synthesis_matches_serial(demo, tmp_path):
    _, data = demo
    par = tmp_path / "par"
    assert main(["synthesize", "--config", "demo", "--workers", "2", "--out", str(par)]) == 0
    assert files_of(data) == files_of(par)


def test_estimate_is_deterministic(demo, tmp_path):
    _, data = demo
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["estimate", "--dataset", str(data), "--out", str(a)]) == 0
    assert main(["estimate", "--dataset", str(data), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_bake_and_inpaint_commands(demo, tmp_path):
    _, data = demo
    ann_path = sorted((data / "annotations").glob("*.json"))[0]
    ann = json.loads(ann_path.read_text())["instances"][0]
    seed = int(ann["template_id"].split("-")[1])
    mesh = tmp_path / "t.obj"
    assert main(["gen-template", "--seed", str(seed), "--out", str(mesh)]) == 0
    prefix = tmp_path / "atlas"
    assert main(["bake", "--annotations", str(ann_path), "--instance", str(ann["instance_id"]), "--mesh", str(mesh),
                 "--resolution", "48", "--min-footprint", "0.3", "--unshade", "--out", str(prefix)]) == 0
    assert main(["inpaint", "--atlas", str(prefix), "--method", "knn", "--out", str(tmp_path / "full")]) == 0
    from cvis_forge.atlas import TextureAtlas, atlas_paths

    baked = TextureAtlas.load_png(*atlas_paths(prefix))
    full = TextureAtlas.load_png(*atlas_paths(tmp_path / "full"))
    assert baked.valid.any() and full.is_complete
    assert np.array_equal(full.color[baked.valid], baked.color[baked.valid])
    assert main(["inpaint", "--atlas", str(prefix), "--method", "net", "--out", str(tmp_path / "x")]) == 2


def test_train_inpaint_small(tmp_path):
    out = tmp_path / "net.bin"
    assert main(["train-inpaint", "--steps", "3", "--atlases", "2", "--resolution", "32", "--out", str(out)]) == 0
    prefix = tmp_path / "a"
    from cvis_forge.atlas import TextureAtlas, atlas_paths
    from cvis_forge.textures import procedural_atlas

    src = procedural_atlas(0, 32)
    valid = src.valid.copy()
    valid[:8] = False
    TextureAtlas(src.color, valid).save_png(*atlas_paths(prefix))
    assert main(["inpaint", "--atlas", str(prefix), "--method", "net", "--weights", str(out),
                 "--out", str(tmp_path / "b")]) == 0


def test_bench_reports_stages(tmp_path, capsys):
    out = tmp_path / "bench.json"
    assert main(["bench", "--vehicles", "2", "--out", str(out)]) == 0
    stages = json.loads(out.read_text())["stages_seconds"]
    assert {"scene_total", "pose_estimation", "per_vehicle_synthesis"} <= set(stages)
    assert "stage" in capsys.readouterr().out
