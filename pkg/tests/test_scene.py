import itertools
import json
import math

import numpy as np
import pytest

from cvis_forge.dataset import export_dataset, import_annotations, load_manifest
from cvis_forge.errors import ParseError, PlacementExhausted, SchemaVersionMismatch
from cvis_forge.geometry import CameraExtrinsics, CameraIntrinsics, obb_intersect, project_camera_points, rotation_distance
from cvis_forge.pose import CorrespondenceSet, camera_to_world, pnp_epnp, refine_pose
from cvis_forge.raster import DirectionalLight
from cvis_forge.rle import RLE, rle_decode, rle_encode
from cvis_forge.scene import Background, Placement, PlacementConfig, Scene, compose, place_vehicles, world_box
from cvis_forge.template import ShapeCoefficients, deform, deform_points
from cvis_forge.textures import procedural_atlas

LIGHT = DirectionalLight([0.3, 0.4, -1.0], 0.5)


@pytest.fixture(scope="module")
def background():
    k = CameraIntrinsics(400.0, 400.0, 199.5, 149.5, 400, 300)
    e = CameraExtrinsics.look_at([0.0, -14.0, 7.0], [0.0, 0.0, 0.0])
    return Background.procedural(k, e, LIGHT, seed=1)


@pytest.fixture(scope="module")
def fleet(sedan, sedan_b):
    return [(sedan, ShapeCoefficients([0.5, -0.5, 0.2, 0.0])), (sedan_b, ShapeCoefficients([-1.0, 0.3, 0.0, 1.0]))]


def build(background, fleet, count, seed=0, region=((-4, 4), (-3, 3))):
    cfg = PlacementConfig(count=count, region=region, seed=seed)
    poses = place_vehicles(background, cfg, fleet)
    placements = [Placement(t, c, p) for (t, c), p in zip(itertools.cycle(fleet), poses)]
    atlases = [procedural_atlas(seed * 10 + i, 48) for i in range(len(placements))]
    return placements, atlases


def test_single_vehicle_places_first_try(background, fleet):
    poses = place_vehicles(background, PlacementConfig(count=1, max_attempts=1, seed=3), fleet[:1])
    assert len(poses) == 1


def test_overcrowded_region_exhausts(background, fleet):
    cfg = PlacementConfig(count=50, region=((-5, 5), (-5, 5)), max_attempts=2000)
    with pytest.raises(PlacementExhausted):
        place_vehicles(background, cfg, fleet[:1])


def test_placements_are_collision_free_and_grounded(background, fleet):
    cfg = PlacementConfig(count=8, region=((-8, 8), (-8, 8)), seed=4)
    poses = place_vehicles(background, cfg, fleet)
    boxes = []
    for (t, c), p in zip(itertools.cycle(fleet), poses):
        world = p.apply(deform(t, c))
        assert abs(world[:, 2].min()) < 1e-9
        assert p.to_dict()["pitch"] == 0 and p.to_dict()["roll"] == 0
        boxes.append(world_box(deform(t, c), p))
    for a, b in itertools.combinations(boxes, 2):
        assert not obb_intersect(a, b)


def test_placement_is_deterministic(background, fleet):
    cfg = PlacementConfig(count=4, seed=9)
    a, b = place_vehicles(background, cfg, fleet), place_vehicles(background, cfg, fleet)
    assert all(p.allclose(q, 0.0) for p, q in zip(a, b))


def test_zero_vehicles_returns_background(background):
    image, anns = compose(background, [], [])
    assert np.array_equal(image, background.image) and anns == []


def test_bbox3d_corners_project_inside_bbox2d(sedan):
    # level side-on camera at roof height: every box corner lines up with the silhouette
    coeffs = ShapeCoefficients([0.5, 0.5, -0.5, 0.0])
    verts = deform(sedan, coeffs)
    lift = -verts[:, 2].min()
    roof = float(verts[:, 2].max() + lift)
    k = CameraIntrinsics(500.0, 500.0, 199.5, 149.5, 400, 300)
    e = CameraExtrinsics.look_at([10.0, 0.0, roof], [0.0, 0.0, roof])
    bg = Background(np.full((300, 400, 3), 90, np.uint8), k, e, LIGHT)
    from cvis_forge.geometry import Pose

    _, anns = compose(bg, [Placement(sedan, coeffs, Pose.from_euler(0.0, translation=(0, 0, lift)))],
                      [procedural_atlas(0, 48)])
    a = anns[0]
    px = project_camera_points(e.world_to_camera.apply(a.bbox3d.corners()), k)
    x0, y0, x1, y1 = a.bbox2d
    inside = (px[:, 0] >= x0 - 2) & (px[:, 0] <= x1 + 2) & (px[:, 1] >= y0 - 2) & (px[:, 1] <= y1 + 2)
    outside = (px[:, 0] < 0) | (px[:, 0] > k.width) | (px[:, 1] < 0) | (px[:, 1] > k.height)
    assert np.all(inside | outside)


def test_bbox2d_is_tight_mask_bound(background, fleet):
    placements, atlases = build(background, fleet, 4, seed=5)
    _, anns = compose(background, placements, atlases)
    for a in anns:
        rows, cols = np.nonzero(rle_decode(a.mask))
        assert a.bbox2d == (cols.min() - 0.5, rows.min() - 0.5, cols.max() + 0.5, rows.max() + 0.5)
        m = rle_decode(a.mask)
        assert np.all(m[a.dense_map.pixels[:, 1], a.dense_map.pixels[:, 0]])
        assert len(a.dense_map) == a.mask.area


def test_occluded_vehicle_loses_pixels(background, sedan):
    from cvis_forge.geometry import Pose

    coeffs = ShapeCoefficients.zeros(4)
    lift = -deform(sedan, coeffs)[:, 2].min()
    front = Placement(sedan, coeffs, Pose.from_euler(0.0, translation=(0, -3, lift)))
    rear = Placement(sedan, coeffs, Pose.from_euler(0.0, translation=(0, 3, lift)))
    atl = [procedural_atlas(1, 48), procedural_atlas(2, 48)]
    k = background.intrinsics
    low = Background(background.image, k, CameraExtrinsics.look_at([0.0, -14.0, 2.0], [0.0, 0.0, 0.7]), LIGHT)
    _, solo = compose(low, [rear], atl[:1])
    _, both = compose(low, [rear, front], atl)
    assert both[0].mask.area < solo[0].mask.area


def test_masks_disjoint_and_cover_instance_pixels(background, fleet):
    placements, atlases = build(background, fleet, 5, seed=6)
    _, anns, fb = compose(background, placements, atlases, return_framebuffer=True)
    masks = [rle_decode(a.mask) for a in anns]
    total = np.sum(masks, axis=0)
    assert total.max() <= 1
    assert np.array_equal(total > 0, fb.instance_id > 0)


def test_annotations_close_under_pnp(background, fleet):
    placements, atlases = build(background, fleet, 4, seed=7)
    _, anns = compose(background, placements, atlases)
    k, e = background.intrinsics, background.extrinsics
    t_by_id = {t.template_id: t for t, _ in fleet}
    for a in anns:
        if len(a.dense_map) < 50:
            continue
        pts = deform_points(t_by_id[a.template_id], a.coeffs, a.dense_map.points)
        cs = CorrespondenceSet(a.dense_map.pixels.astype(float), pts)
        world = camera_to_world(refine_pose(pnp_epnp(cs, k), cs, k), e)
        assert np.linalg.norm(world.translation - a.pose.translation) < 1e-3
        assert rotation_distance(world, a.pose) < 1e-4


def test_composition_is_deterministic(background, fleet):
    p1, a1 = build(background, fleet, 3, seed=8)
    p2, a2 = build(background, fleet, 3, seed=8)
    img1, ann1 = compose(background, p1, a1)
    img2, ann2 = compose(background, p2, a2)
    assert np.array_equal(img1, img2)
    assert all(x.equals(y) for x, y in zip(ann1, ann2))


def test_shadows_darken_only_background(background, fleet):
    placements, atlases = build(background, fleet, 2, seed=3)
    image, _, fb = compose(background, placements, atlases, return_framebuffer=True)
    bg = fb.instance_id == 0
    assert np.all(image[bg] <= background.image[bg])
    assert np.any(image[bg] < background.image[bg])


def test_tiny_instances_are_flagged(background, sedan):
    from cvis_forge.geometry import Pose

    coeffs = ShapeCoefficients.zeros(4)
    far = Placement(sedan, coeffs, Pose.from_euler(0.0, translation=(0, 400, 0.6)))
    _, anns = compose(background, [far], [procedural_atlas(0, 48)])
    assert anns[0].tiny and anns[0].mask.area < 50


def test_dataset_roundtrip(tmp_path, background, fleet):
    scenes = []
    for i in range(2):
        placements, atlases = build(background, fleet, 3, seed=i)
        image, anns = compose(background, placements, atlases)
        scenes.append(Scene(image, background.intrinsics, background.extrinsics, LIGHT, anns, f"s{i}"))
    export_dataset(scenes, tmp_path)
    back = import_annotations(tmp_path)
    assert [s.name for s in back] == ["s0", "s1"]
    for s, b in zip(scenes, back):
        assert np.array_equal(s.image, b.image)
        assert len(s.annotations) == len(b.annotations)
        assert all(x.equals(y) for x, y in zip(s.annotations, b.annotations))


def test_missing_image_is_parse_error(tmp_path, background, fleet):
    placements, atlases = build(background, fleet, 1)
    image, anns = compose(background, placements, atlases)
    export_dataset([Scene(image, background.intrinsics, background.extrinsics, LIGHT, anns, "only")], tmp_path)
    (tmp_path / "images" / "only.png").unlink()
    with pytest.raises(ParseError):
        import_annotations(tmp_path)


def test_schema_version_checked(tmp_path):
    export_dataset([], tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["schema_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaVersionMismatch):
        load_manifest(tmp_path)


def test_empty_dataset(tmp_path):
    export_dataset([], tmp_path)
    assert load_manifest(tmp_path)["scenes"] == []
    assert import_annotations(tmp_path) == []


def test_rle_roundtrip_and_column_major_order():
    mask = np.array([[0, 1, 1], [0, 1, 0]], bool)
    rle = rle_encode(mask)
    assert list(rle.counts) == [2, 3, 1] and rle.area == 3
    assert np.array_equal(rle_decode(rle), mask)
    assert RLE.from_dict(rle.to_dict()) == rle
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = rng.random((int(rng.integers(1, 30)), int(rng.integers(1, 30)))) < 0.3
        assert np.array_equal(rle_decode(rle_encode(m)), m)


def test_rle_starting_with_foreground():
    mask = np.ones((2, 2), bool)
    assert list(rle_encode(mask).counts) == [0, 4]


def test_placement_config_validation():
    with pytest.raises(ValueError):
        PlacementConfig(region=((1, 1), (0, 2)))
    with pytest.raises(ValueError):
        PlacementConfig(count=5, max_attempts=2)
    cfg = PlacementConfig(count=3, yaw_range=(0, math.pi / 2), seed=2)
    assert PlacementConfig.from_dict(cfg.to_dict()) == cfg
