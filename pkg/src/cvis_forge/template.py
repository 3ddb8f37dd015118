"""Part-labeled, PCA-deformable vehicle template.

The canonical frame has its origin at the 3D bounding-box center of the mean
shape, +x to the vehicle's right, +y forward and +z up; units are meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .atlas import PART_COUNT, part_cell_uv
from .errors import CoefficientLengthMismatch, EmptyMesh, MissingPartLabels, ParseError

COEFF_CLAMP = 3.0
UV_INSET = 1e-6
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Dimensions:
    w: float
    h: float
    l: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0 and self.l > 0):
            raise ValueError(f"dimensions must be positive, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.h, self.l])

    def to_dict(self) -> dict:
        return {"w": self.w, "h": self.h, "l": self.l}

    @classmethod
    def from_dict(cls, d) -> "Dimensions":
        return cls(float(d["w"]), float(d["h"]), float(d["l"]))


@dataclass(frozen=True, eq=False)
class ShapeCoefficients:
    """PCA coefficients, clamped to +-3 standard deviations."""

    coeffs: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        c = np.clip(np.asarray(self.coeffs, dtype=np.float64).ravel(), -COEFF_CLAMP, COEFF_CLAMP)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, k: int) -> "ShapeCoefficients":
        return cls(np.zeros(k))

    def __len__(self):
        return self.coeffs.size

    def __eq__(self, other):
        if not isinstance(other, ShapeCoefficients):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def tolist(self) -> list[float]:
        return [float(c) for c in self.coeffs]


@dataclass(frozen=True, eq=False)
class VehicleTemplate:
    vertices: np.ndarray  # (n, 3)
    triangles: np.ndarray  # (m, 3) int
    uv: np.ndarray  # (n, 2)
    part_label: np.ndarray  # (m,) int in 1..18
    mean_shape: np.ndarray  # (n, 3)
    principal_components: np.ndarray  # (K, n, 3)
    template_id: str = "template"

    def __post_init__(self):
        def frozen(a, dtype):
            a = np.array(a, dtype=dtype)
            a.setflags(write=False)
            return a

        verts = frozen(self.vertices, np.float64).reshape(-1, 3)
        tris = frozen(self.triangles, np.int64).reshape(-1, 3)
        uv = frozen(self.uv, np.float64).reshape(-1, 2)
        labels = frozen(self.part_label, np.int64).reshape(-1)
        mean = frozen(self.mean_shape, np.float64).reshape(-1, 3)
        pcs = frozen(self.principal_components, np.float64)
        if pcs.size == 0:
            pcs = frozen(np.zeros((0, verts.shape[0], 3)), np.float64)
        n = verts.shape[0]
        if tris.size and (tris.min() < 0 or tris.max() >= n):
            raise ValueError("triangle index out of range")
        if uv.shape[0] != n or mean.shape[0] != n:
            raise ValueError("uv / mean_shape length must match the vertex count")
        if labels.shape[0] != tris.shape[0]:
            raise ValueError("one part label per triangle required")
        if pcs.ndim != 3 or pcs.shape[1:] != (n, 3):
            raise ValueError(f"principal components must be (K, {n}, 3), got {pcs.shape}")
        present = set(np.unique(labels).tolist())
        missing = sorted(set(range(1, PART_COUNT + 1)) - present)
        if missing or not present <= set(range(1, PART_COUNT + 1)):
            raise MissingPartLabels(f"part labels must be exactly 1..{PART_COUNT}; missing {missing}")
        for name, value in (("vertices", verts), ("triangles", tris), ("uv", uv),
                            ("part_label", labels), ("mean_shape", mean), ("principal_components", pcs)):
            object.__setattr__(self, name, value)

    @property
    def component_count(self) -> int:
        return self.principal_components.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @cached_property
    def _affine_basis(self) -> np.ndarray:
        """Per-component affine maps fitted to the displacement fields, ``(K, 4, 3)``."""
        X = np.hstack([self.mean_shape, np.ones((self.vertex_count, 1))])
        return np.stack([np.linalg.lstsq(X, pc, rcond=None)[0] for pc in self.principal_components]) \
            if self.component_count else np.zeros((0, 4, 3))

    def uv_islands_valid(self, tol: float = 1e-9) -> bool:
        """Every triangle's UVs lie inside its part's atlas cell."""
        for p in range(1, PART_COUNT + 1):
            u0, u1, v0, v1 = part_cell_uv(p)
            uv = self.uv[self.triangles[self.part_label == p]].reshape(-1, 2)
            if np.any(uv[:, 0] < u0 - tol) or np.any(uv[:, 0] > u1 + tol):
                return False
            if np.any(uv[:, 1] < v0 - tol) or np.any(uv[:, 1] > v1 + tol):
                return False
        return True

    def equals(self, other: "VehicleTemplate") -> bool:
        return (
            self.template_id == other.template_id
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.uv, other.uv)
            and np.array_equal(self.part_label, other.part_label)
            and np.array_equal(self.mean_shape, other.mean_shape)
            and np.array_equal(self.principal_components, other.principal_components)
        )


def _check_coeffs(t: VehicleTemplate, c: ShapeCoefficients) -> np.ndarray:
    coeffs = c.coeffs if isinstance(c, ShapeCoefficients) else ShapeCoefficients(c).coeffs
    if coeffs.size != t.component_count:
        raise CoefficientLengthMismatch(f"expected {t.component_count} coefficients, got {coeffs.size}")
    return coeffs


def deform(t: VehicleTemplate, c: ShapeCoefficients) -> np.ndarray:
    """``mean_shape + sum_i c_i * PC_i``."""
    coeffs = _check_coeffs(t, c)
    return t.mean_shape + np.tensordot(coeffs, t.principal_components, axes=1)


def deform_points(t: VehicleTemplate, c: ShapeCoefficients, points) -> np.ndarray:
    """Apply the shape deformation to arbitrary canonical points.

    Uses the affine fit of each displacement field, which reproduces
    :func:`deform` exactly on vertices when the fields are affine (true for
    procedural templates). Because an affine map commutes with barycentric
    interpolation, surface points deform consistently with their triangles.
    """
    coeffs = _check_coeffs(t, c)
    points = np.asarray(points, dtype=np.float64)
    if not coeffs.size:
        return points.copy()
    A = np.tensordot(coeffs, t._affine_basis, axes=1)
    return points + points @ A[:3] + A[3]


def canonical_dimensions(vertices) -> Dimensions:
    """Axis-aligned extents: w along x, h along z, l along y."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if v.shape[0] == 0:
        raise EmptyMesh("no vertices")
    ext = v.max(axis=0) - v.min(axis=0)
    return Dimensions(float(ext[0]), float(ext[2]), float(ext[1]))


def bbox_center(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    return 0.5 * (v.min(axis=0) + v.max(axis=0))


# ---------------------------------------------------------------------------
# procedural sedan

_RING_SEGMENTS = 3  # per sector; 4 sectors around the cross-section
_Y_SEGMENTS = 4  # part bands along the length
_ROWS_PER_SEGMENT = 5


def _sedan_params(rng: np.random.Generator) -> dict:
    return {
        "length": 4.5 + rng.uniform(-0.25, 0.25),
        "half_width": 0.9 + rng.uniform(-0.05, 0.05),
        "bottom": 0.15 + rng.uniform(-0.02, 0.02),
        # (position along length from rear in [0, 1], roof height)
        "profile": [
            (0.00, 0.85 + rng.uniform(-0.05, 0.05)),
            (0.15, 1.00 + rng.uniform(-0.05, 0.05)),
            (0.35, 1.42 + rng.uniform(-0.04, 0.04)),
            (0.65, 1.45 + rng.uniform(-0.04, 0.04)),
            (0.80, 1.00 + rng.uniform(-0.05, 0.05)),
            (1.00, 0.80 + rng.uniform(-0.05, 0.05)),
        ],
    }


def _ring(params: dict, s: float) -> np.ndarray:
    """12 cross-section points (x, z) going bottom -> right -> top -> left."""
    knots = np.array(params["profile"])
    h = float(np.interp(s, knots[:, 0], knots[:, 1]))
    W = params["half_width"]
    B = params["bottom"]
    zs = B + 0.55 * (h - B)
    return np.array([
        (-W, B), (-W / 3, B), (W / 3, B),
        (W, B), (W, 0.5 * (B + zs)), (W, zs),
        (0.75 * W, h), (0.25 * W, h), (-0.25 * W, h),
        (-0.75 * W, h), (-W, zs), (-W, 0.5 * (B + zs)),
    ])


def _uv_in_cell(part: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    u0, u1, v0, v1 = part_cell_uv(part)
    u0, u1, v0, v1 = u0 + UV_INSET, u1 - UV_INSET, v0 + UV_INSET, v1 - UV_INSET
    return np.stack([u0 + a * (u1 - u0), v0 + b * (v1 - v0)], axis=-1)


def _grid_triangles(rows: int, cols: int, offset: int) -> list[tuple[int, int, int]]:
    tris = []
    for i in range(rows):
        for j in range(cols):
            a = offset + i * (cols + 1) + j
            b = a + 1
            c = a + cols + 1
            d = c + 1
            tris.append((a, c, b))
            tris.append((b, c, d))
    return tris


def make_procedural_template(seed: int = 0) -> VehicleTemplate:
    """Boxy sedan with 18 parts, a filled UV atlas and four affine PCA modes.

    Parts 1..16 are a 4 x 4 grid of (length band, cross-section sector)
    patches, 17 is the rear cap and 18 the front cap. Shared borders are
    duplicated per part (UV seams) but evaluate to bitwise-identical
    positions, so the surface is geometrically closed.
    """
    rng = np.random.default_rng(seed)
    params = _sedan_params(rng)
    L = params["length"]
    n_rows = _Y_SEGMENTS * _ROWS_PER_SEGMENT
    rings = [_ring(params, j / n_rows) for j in range(n_rows + 1)]
    ys = [-L / 2 + L * j / n_rows for j in range(n_rows + 1)]

    verts, uvs, tris, labels = [], [], [], []

    for seg in range(_Y_SEGMENTS):
        for sector in range(4):
            part = seg * 4 + sector + 1
            offset = len(verts)
            for i in range(_ROWS_PER_SEGMENT + 1):
                j = seg * _ROWS_PER_SEGMENT + i
                for r in range(_RING_SEGMENTS + 1):
                    x, z = rings[j][(sector * _RING_SEGMENTS + r) % 12]
                    verts.append((x, ys[j], z))
                    uvs.append(_uv_in_cell(part, np.float64(r / _RING_SEGMENTS),
                                           np.float64(i / _ROWS_PER_SEGMENT)))
            new = _grid_triangles(_ROWS_PER_SEGMENT, _RING_SEGMENTS, offset)
            tris += new
            labels += [part] * len(new)

    # caps: Coons patch over the 12-point ring seen as 4 sides of 3 segments
    for part, j in ((17, 0), (18, n_rows)):
        ring = rings[j]
        n = _RING_SEGMENTS
        bottom = [ring[i] for i in range(n + 1)]
        top = [ring[(3 * n - i) % 12] for i in range(n + 1)]
        left = [ring[(4 * n - k) % 12] for k in range(n + 1)]
        right = [ring[n + k] for k in range(n + 1)]
        offset = len(verts)
        for k in range(n + 1):
            t = k / n
            for i in range(n + 1):
                s = i / n
                if k == 0:
                    p = bottom[i]
                elif k == n:
                    p = top[i]
                elif i == 0:
                    p = left[k]
                elif i == n:
                    p = right[k]
                else:
                    p = ((1 - s) * left[k] + s * right[k] + (1 - t) * bottom[i] + t * top[i]
                         - ((1 - s) * (1 - t) * bottom[0] + s * (1 - t) * bottom[n]
                            + (1 - s) * t * top[0] + s * t * top[n]))
                verts.append((p[0], ys[j], p[1]))
                uvs.append(_uv_in_cell(part, np.float64(s), np.float64(t)))
        new = _grid_triangles(n, n, offset)
        tris += new
        labels += [part] * len(new)

    verts = np.array(verts, dtype=np.float64)
    tris = np.array(tris, dtype=np.int64)
    uvs = np.array(uvs, dtype=np.float64)

    # outward orientation: flip per triangle where the normal points at the axis
    a, b, c = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    normals = np.cross(b - a, c - a)
    centroid = (a + b + c) / 3.0
    axis_point = np.stack([np.zeros(len(tris)), centroid[:, 1], np.full(len(tris), 0.5 * (params["bottom"] + 1.0))], axis=1)
    outward = centroid - axis_point
    is_cap = np.isin(labels, (17, 18))
    outward[is_cap] = np.array([0.0, 1.0, 0.0]) * np.sign(centroid[is_cap, 1:2])
    flip = np.einsum("ij,ij->i", normals, outward) < 0
    tris[flip] = tris[flip][:, ::-1]

    verts -= bbox_center(verts)
    pcs = np.stack([
        0.04 * verts * np.array([0.0, 1.0, 0.0]),  # length
        0.03 * verts * np.array([1.0, 0.0, 0.0]),  # width
        0.04 * verts * np.array([0.0, 0.0, 1.0]),  # height
        0.08 * np.stack([np.zeros(len(verts)), verts[:, 2], np.zeros(len(verts))], axis=1),  # rake
    ])
    return VehicleTemplate(verts, tris, uvs, np.array(labels), verts.copy(), pcs, f"sedan-{seed}")


# ---------------------------------------------------------------------------
# mesh file io
#
#   <path>       OBJ subset: "v x y z", "vt u v", "g part_NN", "f a/a b/b c/c"
#                (1-based, shared v/vt index); "o <id>" names the template.
#   <path>.pca   "mean x y z" per vertex, then per component "pc k" followed
#                by one "d dx dy dz" line per vertex.
#
# Floats are written with repr() so a save/load cycle is lossless.


def pca_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".pca")


def save_mesh(t: VehicleTemplate, path) -> None:
    path = Path(path)
    lines = ["# cvis-forge vehicle template", f"# version {FORMAT_VERSION}", f"o {t.template_id}"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in t.vertices.tolist()]
    lines += [f"vt {u!r} {v!r}" for u, v in t.uv.tolist()]
    current = None
    for (a, b, c), p in zip(t.triangles.tolist(), t.part_label.tolist()):
        if p != current:
            lines.append(f"g part_{p:02d}")
            current = p
        lines.append(f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}")
    path.write_text("\n".join(lines) + "\n")

    side = ["# cvis-forge pca basis", f"# version {FORMAT_VERSION}",
            f"basis {t.component_count} {t.vertex_count}"]
    side += [f"mean {x!r} {y!r} {z!r}" for x, y, z in t.mean_shape.tolist()]
    for k, pc in enumerate(t.principal_components):
        side.append(f"pc {k}")
        side += [f"d {x!r} {y!r} {z!r}" for x, y, z in pc.tolist()]
    pca_sidecar_path(path).write_text("\n".join(side) + "\n")


def _floats(parts, count, path, lineno):
    if len(parts) != count:
        raise ParseError(f"expected {count} numbers, got {len(parts)}", path, lineno)
    try:
        return [float(x) for x in parts]
    except ValueError as exc:
        raise ParseError(str(exc), path, lineno) from None


def load_mesh(path) -> VehicleTemplate:
    path = Path(path)
    if not path.is_file():
        raise ParseError("mesh file not found", path)
    template_id = path.stem
    verts, uvs, tris, labels = [], [], [], []
    part = None
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *rest = line.split()
        if tag == "o":
            template_id = " ".join(rest)
        elif tag == "v":
            verts.append(_floats(rest, 3, path, lineno))
        elif tag == "vt":
            uvs.append(_floats(rest, 2, path, lineno))
        elif tag == "g":
            if len(rest) != 1 or not rest[0].startswith("part_"):
                raise ParseError(f"bad group {line!r}", path, lineno)
            try:
                part = int(rest[0][5:])
            except ValueError:
                raise ParseError(f"bad part tag {rest[0]!r}", path, lineno) from None
        elif tag == "f":
            if part is None:
                raise ParseError("face before any part group", path, lineno)
            if len(rest) != 3:
                raise ParseError("only triangles are supported", path, lineno)
            idx = []
            for tok in rest:
                fields = tok.split("/")
                try:
                    vi = int(fields[0])
                except ValueError:
                    raise ParseError(f"bad index {tok!r}", path, lineno) from None
                if len(fields) > 1 and fields[1] and fields[1] != fields[0]:
                    raise ParseError("v and vt indices must match", path, lineno)
                if not 1 <= vi <= len(verts):
                    raise ParseError(f"vertex index {vi} out of range (have {len(verts)})", path, lineno)
                idx.append(vi - 1)
            tris.append(idx)
            labels.append(part)
        else:
            raise ParseError(f"unknown record {tag!r}", path, lineno)
    if len(uvs) != len(verts):
        raise ParseError(f"{len(verts)} vertices but {len(uvs)} texture coordinates", path)
    n = len(verts)
    labels_arr = np.array(labels, dtype=np.int64)
    present = set(labels_arr.tolist())
    missing = sorted(set(range(1, PART_COUNT + 1)) - present)
    if missing:
        raise MissingPartLabels(f"{path}: part labels {missing} absent")

    mean, pcs = _load_pca(pca_sidecar_path(path), n)
    if mean is None:
        mean, pcs = np.array(verts), np.zeros((0, n, 3))
    return VehicleTemplate(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3),
                           np.array(uvs).reshape(-1, 2), labels_arr, mean, pcs, template_id)


def _load_pca(path: Path, n: int):
    if not path.is_file():
        return None, None
    mean, pcs = [], []
    header = None
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *rest = line.split()
        if tag == "basis":
            header = tuple(int(x) for x in rest)
            if len(header) != 2 or header[1] != n:
                raise ParseError(f"basis header {rest} does not match {n} vertices", path, lineno)
        elif tag == "mean":
            mean.append(_floats(rest, 3, path, lineno))
        elif tag == "pc":
            pcs.append([])
        elif tag == "d":
            if not pcs:
                raise ParseError("displacement before 'pc'", path, lineno)
            pcs[-1].append(_floats(rest, 3, path, lineno))
        else:
            raise ParseError(f"unknown record {tag!r}", path, lineno)
    if header is None:
        raise ParseError("missing basis header", path)
    if len(mean) != n or len(pcs) != header[0] or any(len(pc) != n for pc in pcs):
        raise ParseError("basis size does not match its header", path)
    return np.array(mean).reshape(n, 3), np.array(pcs).reshape(len(pcs), n, 3)
