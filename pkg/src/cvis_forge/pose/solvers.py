"""Closed-form PnP solvers and reprojection refinement.

All poses here map canonical (object) points into the camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateConfiguration, LengthMismatch, TooFewPoints
from ..geometry import CameraIntrinsics, Pose, rotvec_to_matrix, skew

MIN_POINTS = 6
DEGENERATE_TOL = 1e-6
REFINE_MAX_ITERS = 50
REFINE_STEP_TOL = 1e-10


@dataclass
class CorrespondenceSet:
    """Paired image pixels and canonical points.

    ``dimensions`` optionally carries a size estimate made alongside the
    points (a predictor's dimension output); solvers ignore it.
    """

    pixels: np.ndarray
    points: np.ndarray
    dimensions: object = field(default=None, compare=False)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.pixels) != len(self.points):
            raise LengthMismatch(f"{len(self.pixels)} pixels vs {len(self.points)} points")
        if not (np.isfinite(self.pixels).all() and np.isfinite(self.points).all()):
            raise ValueError("correspondences must be finite")

    def __len__(self):
        return len(self.pixels)

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(self.pixels[idx], self.points[idx], self.dimensions)

    def save_txt(self, path) -> None:
        """One ``u v x y z`` row per correspondence."""
        np.savetxt(path, np.hstack([self.pixels, self.points]), fmt="%.17g")

    @classmethod
    def load_txt(cls, path) -> "CorrespondenceSet":
        from ..errors import ParseError

        try:
            data = np.loadtxt(path, ndmin=2, dtype=np.float64)
        except (OSError, ValueError) as exc:
            raise ParseError(f"cannot read correspondences: {exc}", path=str(path)) from exc
        if data.size == 0:
            return cls(np.zeros((0, 2)), np.zeros((0, 3)))
        if data.shape[1] != 5:
            raise ParseError(f"expected 5 columns, got {data.shape[1]}", path=str(path))
        return cls(data[:, :2], data[:, 2:])


def reprojection_residuals(pose: Pose, cs: CorrespondenceSet, k: CameraIntrinsics) -> np.ndarray:
    """Per-point pixel error vectors, ``inf`` for points at or behind the camera."""
    pc = pose.apply(cs.points)
    z = pc[:, 2]
    out = np.full((len(cs), 2), np.inf)
    ok = z > 1e-12
    u = (k.fx * pc[ok, 0] + k.skew * pc[ok, 1]) / z[ok] + k.cx
    v = k.fy * pc[ok, 1] / z[ok] + k.cy
    out[ok] = np.stack([u, v], 1) - cs.pixels[ok]
    return out


def reprojection_errors(pose: Pose, cs: CorrespondenceSet, k: CameraIntrinsics) -> np.ndarray:
    return np.linalg.norm(reprojection_residuals(pose, cs, k), axis=1)


def rms(errors: np.ndarray) -> float:
    return float(np.sqrt(np.mean(errors ** 2))) if errors.size else 0.0


def kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Rigid transform minimizing ``sum |R src + t - dst|^2``."""
    cs_, cd = src.mean(0), dst.mean(0)
    H = (src - cs_).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ D @ U.T
    return Pose.from_matrix(R, cd - R @ cs_)


def classify_points(points: np.ndarray) -> str:
    """``"general"``, ``"planar"`` or ``"collinear"`` (RMS spread below 1e-6 m)."""
    centered = points - points.mean(0)
    s = np.linalg.svd(centered, compute_uv=False) / np.sqrt(len(points))
    if s[1] < DEGENERATE_TOL:
        return "collinear"
    if s[2] < DEGENERATE_TOL:
        return "planar"
    return "general"


@dataclass
class EpnpResult:
    pose: Pose
    rms: float
    planar: bool


def _normalized(pixels: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    y = (pixels[:, 1] - k.cy) / k.fy
    x = (pixels[:, 0] - k.cx - k.skew * y) / k.fx
    return np.stack([x, y], 1)


def _beta_candidates(kernel: np.ndarray, cw: np.ndarray, max_dim: int):
    """Control-point solutions ``x = sum beta_k v_k`` for kernel sizes 1..max_dim."""
    nc = len(cw)
    pairs = [(a, b) for a in range(nc) for b in range(a + 1, nc)]
    dw2 = np.array([np.sum((cw[a] - cw[b]) ** 2) for a, b in pairs])
    vs = kernel.reshape(kernel.shape[0], nc, 3)
    dv = np.stack([vs[:, a] - vs[:, b] for a, b in pairs], axis=0)  # (pairs, K, 3)
    G = np.einsum("pki,pli->pkl", dv, dv)  # (pairs, K, K)
    out = []
    for n in range(1, max_dim + 1):
        g = G[:, :n, :n]
        if n == 1:
            dvn = np.sqrt(g[:, 0, 0])
            beta = np.array([np.dot(dvn, np.sqrt(dw2)) / np.dot(dvn, dvn)])
        else:
            iu = np.triu_indices(n)
            L = g[:, iu[0], iu[1]] * np.where(iu[0] == iu[1], 1.0, 2.0)
            if L.shape[1] > L.shape[0]:
                continue
            prod, *_ = np.linalg.lstsq(L, dw2, rcond=None)
            B = np.zeros((n, n))
            B[iu] = prod
            beta = np.sqrt(np.abs(np.diag(B)))
            beta[1:] *= np.where(B[0, 1:] < 0, -1.0, 1.0)
        # Gauss-Newton on the distance constraints
        for _ in range(10):
            r = np.einsum("k,pkl,l->p", beta, g, beta) - dw2
            J = 2.0 * np.einsum("pkl,l->pk", g, beta)
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            beta = beta + step
            if np.linalg.norm(step) < 1e-14 * max(1.0, np.linalg.norm(beta)):
                break
        out.append(np.einsum("k,kj->j", beta, kernel[:n]).reshape(nc, 3))
    return out


def epnp(cs: CorrespondenceSet, k: CameraIntrinsics, min_points: int = MIN_POINTS) -> EpnpResult:
    """EPnP with control points on the principal axes of the point cloud."""
    n = len(cs)
    if n < min_points:
        raise TooFewPoints(f"need >= {min_points} correspondences, got {n}")
    kind = classify_points(cs.points)
    if kind == "collinear":
        raise DegenerateConfiguration("canonical points are collinear")
    planar = kind == "planar"
    pw = cs.points
    c0 = pw.mean(0)
    _, s, Vt = np.linalg.svd(pw - c0, full_matrices=False)
    scale = s / np.sqrt(n)
    naxes = 2 if planar else 3
    cw = np.vstack([c0] + [c0 + scale[i] * Vt[i] for i in range(naxes)])
    nc = len(cw)

    # barycentric coordinates of every point w.r.t. the control points
    local = (pw - c0) @ Vt[:naxes].T / scale[:naxes]
    alphas = np.hstack([1.0 - local.sum(1, keepdims=True), local])

    xn = _normalized(cs.pixels, k)
    M = np.zeros((2 * n, 3 * nc))
    for j in range(nc):
        M[0::2, 3 * j] = alphas[:, j]
        M[0::2, 3 * j + 2] = -alphas[:, j] * xn[:, 0]
        M[1::2, 3 * j + 1] = alphas[:, j]
        M[1::2, 3 * j + 2] = -alphas[:, j] * xn[:, 1]
    _, sv, vt = np.linalg.svd(M, full_matrices=False)
    max_dim = 2 if planar else 3
    # the beta search resolves null spaces up to max_dim; anything wider is ambiguous
    if sv[3 * nc - 1 - max_dim] < 1e-12 * max(sv[0], 1e-300):
        raise DegenerateConfiguration("correspondence matrix is rank deficient")
    kernel = vt[::-1][:4]  # smallest singular directions first

    best = None
    for cc in _beta_candidates(kernel, cw, max_dim):
        pcam = alphas @ cc
        if pcam[:, 2].mean() < 0:
            pcam = -pcam
        pose = kabsch(pw, pcam)
        err = rms(reprojection_errors(pose, cs, k))
        if best is None or err < best.rms:
            best = EpnpResult(pose, err, planar)
    return best


def pnp_epnp(cs: CorrespondenceSet, k: CameraIntrinsics) -> Pose:
    return epnp(cs, k).pose


def p3p(pixels: np.ndarray, points: np.ndarray, k: CameraIntrinsics) -> list[Pose]:
    """All real solutions of the three-point problem (Grunert's quartic)."""
    bearings = np.hstack([_normalized(np.asarray(pixels, float), k), np.ones((3, 1))])
    j = bearings / np.linalg.norm(bearings, axis=1, keepdims=True)
    P = np.asarray(points, float)
    a2 = np.sum((P[1] - P[2]) ** 2)
    b2 = np.sum((P[0] - P[2]) ** 2)
    c2 = np.sum((P[0] - P[1]) ** 2)
    if min(a2, b2, c2) < 1e-18:
        return []
    ca, cb, cg = j[1] @ j[2], j[0] @ j[2], j[0] @ j[1]
    q = (a2 - c2) / b2
    A4 = (q - 1) ** 2 - 4 * c2 / b2 * ca ** 2
    A3 = 4 * (q * (1 - q) * cb - (1 - (a2 + c2) / b2) * ca * cg + 2 * c2 / b2 * ca ** 2 * cb)
    A2 = 2 * (q ** 2 - 1 + 2 * q ** 2 * cb ** 2 + 2 * (b2 - c2) / b2 * ca ** 2
              - 4 * (a2 + c2) / b2 * ca * cb * cg + 2 * (b2 - a2) / b2 * cg ** 2)
    A1 = 4 * (-q * (1 + q) * cb + 2 * a2 / b2 * cg ** 2 * cb - (1 - (a2 + c2) / b2) * ca * cg)
    A0 = (1 + q) ** 2 - 4 * a2 / b2 * cg ** 2
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.isfinite(coeffs).all() or np.abs(coeffs).max() == 0:
        return []
    roots = np.roots(np.trim_zeros(coeffs, "f"))
    poses = []
    for v in roots:
        if abs(v.imag) > 1e-8 * max(1.0, abs(v.real)):
            continue
        v = v.real
        den = 2 * (cg - v * ca)
        if abs(den) < 1e-14:
            continue
        u = ((-1 + q) * v ** 2 - 2 * q * cb * v + 1 + q) / den
        d = 1 + u * u - 2 * u * cg
        if d <= 0 or u <= 0 or v <= 0:
            continue
        s1 = np.sqrt(c2 / d)
        cam = np.stack([s1 * j[0], u * s1 * j[1], v * s1 * j[2]])
        poses.append(kabsch(P, cam))
    return poses


def minimal_solve(cs: CorrespondenceSet, k: CameraIntrinsics) -> list[Pose]:
    """Candidate poses from 4 correspondences: P3P on three, ranked by the fourth."""
    cands = p3p(cs.pixels[:3], cs.points[:3], k)
    if not cands:
        return []
    err = [reprojection_errors(p, cs.subset([3]), k)[0] for p in cands]
    order = np.argsort(err, kind="stable")
    return [cands[i] for i in order]


@dataclass
class RefineResult:
    pose: Pose
    iterations: int
    objective: list


def _objective(pose: Pose, cs: CorrespondenceSet, k: CameraIntrinsics) -> float:
    r = reprojection_residuals(pose, cs, k)
    return float(np.mean(np.sum(r ** 2, axis=1))) if len(cs) else 0.0


def refine_pose_info(init: Pose, cs: CorrespondenceSet, k: CameraIntrinsics,
                     max_iters: int = REFINE_MAX_ITERS) -> RefineResult:
    """Levenberg-Marquardt on the mean squared reprojection error.

    The rotation is updated on the left, ``R <- exp(dw) R``. Steps that do not
    lower the objective are rejected, so the objective never increases.
    """
    pose = init
    cost = _objective(pose, cs, k)
    history = [cost]
    if len(cs) == 0 or not np.isfinite(cost):
        return RefineResult(pose, 0, history)
    lam = 1e-3
    it = 0
    while it < max_iters:
        it += 1
        pc = pose.apply(cs.points)
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        r = reprojection_residuals(pose, cs, k).reshape(-1)
        Jp = np.zeros((len(cs), 2, 3))
        Jp[:, 0, 0] = k.fx / z
        Jp[:, 0, 1] = k.skew / z
        Jp[:, 0, 2] = -(k.fx * x + k.skew * y) / z ** 2
        Jp[:, 1, 1] = k.fy / z
        Jp[:, 1, 2] = -k.fy * y / z ** 2
        rp = pc - pose.translation
        dX = np.concatenate([-np.stack([skew(v) for v in rp]), np.broadcast_to(np.eye(3), (len(cs), 3, 3))], axis=2)
        J = (Jp @ dX).reshape(-1, 6)
        JtJ = J.T @ J
        g = J.T @ r
        improved = False
        while lam < 1e12:
            A = JtJ + lam * np.diag(np.maximum(np.diag(JtJ), 1e-12))
            try:
                delta = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = Pose.from_matrix(rotvec_to_matrix(delta[:3]) @ pose.R, pose.translation + delta[3:])
            new_cost = _objective(cand, cs, k)
            if new_cost < cost:
                pose, cost = cand, new_cost
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        history.append(cost)
        if not improved or np.linalg.norm(delta) < REFINE_STEP_TOL:
            break
    return RefineResult(pose, it, history)


def refine_pose(init: Pose, cs: CorrespondenceSet, k: CameraIntrinsics) -> Pose:
    return refine_pose_info(init, cs, k).pose
