import numpy as np
import pytest

from cvis_forge.atlas import PART_COUNT, TextureAtlas, part_map
from cvis_forge.bake import DEPTH_BIAS, bake, coverage_stats, texel_surface_points
from cvis_forge.errors import MeshFullyOutsideFrustum
from cvis_forge.geometry import CameraExtrinsics, CameraIntrinsics, Pose
from cvis_forge.raster import DirectionalLight, Framebuffer, PosedVehicle, rasterize
from cvis_forge.template import ShapeCoefficients
from cvis_forge.textures import procedural_atlas

K = CameraIntrinsics(500.0, 500.0, 159.5, 119.5, 320, 240)
RIGHT_SIDE = [2, 6, 10, 14]
LEFT_SIDE = [4, 8, 12, 16]


@pytest.fixture(scope="module")
def source():
    return procedural_atlas(3, 96)


def vehicle(t, atlas, pose=None, coeffs=None):
    return PosedVehicle(t, coeffs or ShapeCoefficients.zeros(4), pose or Pose.identity(), atlas)


def render(v, e, light=None):
    fb = Framebuffer.create(K.width, K.height)
    rasterize(v, K, e, fb, 1, light)
    return fb.color


def test_round_trip_recovers_source(sedan, source):
    light = DirectionalLight([0.3, 0.2, -1.0])
    rng = np.random.default_rng(0)
    for _ in range(3):
        coeffs = ShapeCoefficients(rng.uniform(-1, 1, 4))
        v = vehicle(sedan, source, Pose.from_euler(rng.uniform(-np.pi, np.pi)), coeffs)
        e = CameraExtrinsics.look_at([rng.uniform(-7, 7), -7, rng.uniform(1.5, 4)], [0, 0, 0])
        baked = bake(render(v, e, light), v, K, e, 96, light)
        diff = np.abs(baked.color.astype(int) - source.color.astype(int))[baked.valid].max(axis=1)
        assert baked.valid.sum() > 500
        assert (diff <= 3).mean() >= 0.99


def test_left_view_hides_right_side(sedan, source):
    v = vehicle(sedan, source)
    e = CameraExtrinsics.look_at([-9, 0, 0.0], [0, 0, 0])
    cov = coverage_stats(bake(render(v, e), v, K, e))
    assert np.all(cov[np.array(RIGHT_SIDE) - 1] == 0)
    assert np.all(cov[np.array(LEFT_SIDE) - 1] > 0.9)


def test_behind_and_above_view(sedan, source):
    v = vehicle(sedan, source)
    e = CameraExtrinsics.look_at([0, -8, 2.8], [0, -1, -0.2])
    cov = coverage_stats(bake(render(v, e), v, K, e))
    rear_roof, rear_cap, front_cap = cov[2], cov[16], cov[17]
    assert rear_roof > 0.9 and rear_cap > 0.9
    assert front_cap == 0


def test_no_valid_texel_fails_ray_cast(sedan, source):
    v = vehicle(sedan, source, Pose.from_euler(0.6))
    e = CameraExtrinsics.look_at([5, -5, 2.5], [0, 0, 0])
    baked = bake(render(v, e), v, K, e)
    cam = e.world_to_camera.apply(v.world_vertices())
    pts, _ = texel_surface_points(sedan, cam, 96)
    rows, cols = np.nonzero(baked.valid)
    pick = np.random.default_rng(0).choice(rows.size, size=min(1000, rows.size), replace=False)
    tri = cam[sedan.triangles]
    a, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    for i in pick:
        p = pts[rows[i], cols[i]]
        dist = np.linalg.norm(p)
        d = p / dist
        # Moller-Trumbore against every triangle, ray from the camera center
        h = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, h)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1 / np.where(ok, det, 1), 0)
        s = -a
        u = inv * np.einsum("ij,ij->i", s, h)
        q = np.cross(s, e1)
        w = inv * (q @ d)
        t = inv * np.einsum("ij,ij->i", e2, q)
        hit = ok & (u >= -1e-9) & (w >= -1e-9) & (u + w <= 1 + 1e-9) & (t > 1e-6)
        assert t[hit].min() >= dist - DEPTH_BIAS


def test_rebake_is_idempotent(sedan, source):
    v = vehicle(sedan, source, Pose.from_euler(-0.4))
    e = CameraExtrinsics.look_at([4, -6, 3], [0, 0, 0])
    first = bake(render(v, e), v, K, e)
    patched = np.where(first.valid[..., None], first.color, source.color)
    v2 = vehicle(sedan, TextureAtlas.full(patched), v.pose)
    second = bake(render(v2, e), v2, K, e)
    both = first.valid & second.valid
    assert both.sum() > 0.95 * first.valid.sum()
    assert np.abs(first.color.astype(int) - second.color.astype(int))[both].max() <= 3


def test_validity_shrinks_as_vehicle_leaves_view(sedan, source):
    e = CameraExtrinsics.look_at([0, -9, 2], [0, 0, 0])
    counts = []
    for x in np.arange(0.0, 6.0, 0.5):
        v = vehicle(sedan, source, Pose.from_euler(0.0, translation=(x, 0, 0)))
        try:
            counts.append(int(bake(render(v, e), v, K, e).valid.sum()))
        except MeshFullyOutsideFrustum:
            counts.append(0)
    assert counts[0] > 0 and counts[-1] == 0
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_mesh_outside_frustum(sedan, source):
    v = vehicle(sedan, source, Pose.from_euler(0, translation=(0, 0, -50)))
    e = CameraExtrinsics.look_at([0, -9, 2], [0, 0, 0])
    with pytest.raises(MeshFullyOutsideFrustum):
        bake(np.zeros((K.height, K.width, 3), np.uint8), v, K, e)


def test_coverage_stats_examples():
    res = 48
    full = TextureAtlas.full(np.zeros((res, res, 3), np.uint8))
    assert np.array_equal(coverage_stats(full), np.ones(PART_COUNT))
    assert np.array_equal(coverage_stats(TextureAtlas.blank(res)), np.zeros(PART_COUNT))
    rows, cols = np.indices((res, res))
    checker = TextureAtlas(np.zeros((res, res, 3), np.uint8), (rows + cols) % 2 == 0)
    cov = coverage_stats(checker)
    sizes = np.bincount(part_map(res).ravel(), minlength=PART_COUNT + 1)[1:]
    assert np.all(np.abs(cov - 0.5) <= 1 / sizes)
