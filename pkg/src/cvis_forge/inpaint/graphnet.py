"""Part-graph inpainting network.

Every atlas part cell is resampled to a ``patch x patch`` square and treated
as a graph node. Each level applies one shared encoder (3x3 stride-2 conv,
batch norm over the 18 nodes, ReLU), max-pools the result across the node
axis and concatenates that aggregate back onto every node. After the last
level each node is decoded by its own stack of stride-2 transposed convs.
"""

from __future__ import annotations

import copy
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..atlas import PART_COUNT, TextureAtlas, cell_bounds
from ..errors import InsufficientValidParts, ParseError, ShapeMismatch

WEIGHTS_MAGIC = b"CVGN"
WEIGHTS_VERSION = 1
BN_EPS = 1e-5
DEFAULT_LR = 1e-3


class GraphInpaintNet(torch.nn.Module):
    def __init__(self, widths=(8, 16, 32, 64), patch: int = 16, seed: int = 0, dtype=torch.float64):
        super().__init__()
        widths = tuple(int(w) for w in widths)
        if patch % (2 ** len(widths)):
            raise ValueError(f"patch {patch} not divisible by 2^{len(widths)}")
        self.widths = widths
        self.patch = int(patch)
        gen = torch.Generator().manual_seed(int(seed))

        def he(shape, fan_in):
            return torch.randn(shape, generator=gen, dtype=dtype) * np.sqrt(2.0 / fan_in)

        self.enc_w = torch.nn.ParameterList()
        self.enc_b = torch.nn.ParameterList()
        self.bn_g = torch.nn.ParameterList()
        self.bn_b = torch.nn.ParameterList()
        c_in = 4
        for w in widths:
            self.enc_w.append(torch.nn.Parameter(he((w, c_in, 3, 3), c_in * 9)))
            self.enc_b.append(torch.nn.Parameter(torch.zeros(w, dtype=dtype)))
            self.bn_g.append(torch.nn.Parameter(torch.ones(w, dtype=dtype)))
            self.bn_b.append(torch.nn.Parameter(torch.zeros(w, dtype=dtype)))
            c_in = 2 * w

        # decoder channels mirror the encoder: 2*w_last -> w_{L-2} -> ... -> w_0 -> 3
        dec_ch = [c_in] + list(reversed(widths[:-1])) + [3]
        self.dec_w = torch.nn.ParameterList()
        self.dec_b = torch.nn.ParameterList()
        for a, b in zip(dec_ch[:-1], dec_ch[1:]):
            # grouped conv_transpose layout: (groups * c_in, c_out, kh, kw)
            self.dec_w.append(torch.nn.Parameter(he((PART_COUNT * a, b, 4, 4), a * 4)))
            self.dec_b.append(torch.nn.Parameter(torch.zeros(PART_COUNT * b, dtype=dtype)))

    @property
    def dtype(self):
        return self.enc_w[0].dtype

    def encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Node features after every level; ``x`` is ``(18, 4, P, P)``."""
        feats = []
        for w, b, g, beta in zip(self.enc_w, self.enc_b, self.bn_g, self.bn_b):
            h = F.conv2d(x, w, b, stride=2, padding=1)
            mean = h.mean(dim=(0, 2, 3), keepdim=True)
            var = h.var(dim=(0, 2, 3), keepdim=True, unbiased=False)
            h = (h - mean) / torch.sqrt(var + BN_EPS) * g.view(1, -1, 1, 1) + beta.view(1, -1, 1, 1)
            h = F.relu(h)
            agg = h.amax(dim=0, keepdim=True).expand_as(h)
            x = torch.cat([h, agg], dim=1)
            feats.append(x)
        return feats

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        n, c, hh, ww = z.shape
        y = z.reshape(1, n * c, hh, ww)
        last = len(self.dec_w) - 1
        for i, (w, b) in enumerate(zip(self.dec_w, self.dec_b)):
            y = F.conv_transpose2d(y, w, b, stride=2, padding=1, groups=PART_COUNT)
            y = torch.sigmoid(y) if i == last else F.relu(y)
        return y.reshape(n, 3, self.patch, self.patch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape != (PART_COUNT, 4, self.patch, self.patch):
            raise ShapeMismatch(f"expected {(PART_COUNT, 4, self.patch, self.patch)}, got {tuple(x.shape)}")
        return self.decode(self.encode(x)[-1])

    def clone(self) -> "GraphInpaintNet":
        return copy.deepcopy(self)

    def equals(self, other: "GraphInpaintNet") -> bool:
        if self.widths != other.widths or self.patch != other.patch:
            return False
        return all(torch.equal(a, b) for a, b in zip(self.parameters(), other.parameters()))

    def parameter_vector(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])


# ---- atlas <-> patch resampling -------------------------------------------

def _patch_index(resolution: int, patch: int):
    """Atlas (row, col) sampled by each patch pixel, shape ``(18, P, P)`` each."""
    bounds = cell_bounds(resolution)
    rows = np.empty((PART_COUNT, patch, patch), np.int64)
    cols = np.empty_like(rows)
    s = (np.arange(patch) + 0.5) / patch
    for p in range(1, PART_COUNT + 1):
        r0, r1, c0, c1 = bounds[p]
        rr = r0 + np.floor(s * (r1 - r0)).astype(np.int64)
        cc = c0 + np.floor(s * (c1 - c0)).astype(np.int64)
        rows[p - 1], cols[p - 1] = np.meshgrid(rr, cc, indexing="ij")
    return rows, cols


def _texel_index(resolution: int, patch: int):
    """For every atlas texel: (part index 0..17, patch row, patch col)."""
    bounds = cell_bounds(resolution)
    part = np.zeros((resolution, resolution), np.int64)
    pr = np.zeros_like(part)
    pc = np.zeros_like(part)
    for p in range(1, PART_COUNT + 1):
        r0, r1, c0, c1 = bounds[p]
        rr = np.floor((np.arange(r1 - r0) + 0.5) * patch / (r1 - r0)).astype(np.int64)
        cc = np.floor((np.arange(c1 - c0) + 0.5) * patch / (c1 - c0)).astype(np.int64)
        part[r0:r1, c0:c1] = p - 1
        pr[r0:r1, c0:c1] = rr[:, None]
        pc[r0:r1, c0:c1] = cc[None, :]
    return part, pr, pc


def atlas_to_input(atlas_color: np.ndarray, valid: np.ndarray, patch: int, dtype=torch.float64) -> torch.Tensor:
    """``(18, 4, P, P)`` tensor: RGB in [0, 1] zeroed where invalid, plus the mask."""
    if atlas_color.shape[0] < 6 or atlas_color.shape[1] < 3:
        raise ShapeMismatch(f"atlas {atlas_color.shape[:2]} too small for the part layout")
    rows, cols = _patch_index(valid.shape[0], patch)
    m = valid[rows, cols].astype(np.float64)
    rgb = atlas_color[rows, cols].astype(np.float64) / 255.0 * m[..., None]
    x = np.concatenate([rgb.transpose(0, 3, 1, 2), m[:, None]], axis=1)
    return torch.from_numpy(np.ascontiguousarray(x)).to(dtype)


def patches_to_texels(out: torch.Tensor, resolution: int) -> torch.Tensor:
    """Gather network output ``(18, 3, P, P)`` back to ``(res, res, 3)`` texels."""
    part, pr, pc = _texel_index(resolution, out.shape[-1])
    return out[torch.from_numpy(part), :, torch.from_numpy(pr), torch.from_numpy(pc)]


def graph_forward(net: GraphInpaintNet, atlas: TextureAtlas) -> np.ndarray:
    """Completed part patches, ``(18, P, P, 3)`` floats in [0, 255]; index 0 = part 1."""
    with torch.no_grad():
        out = net(atlas_to_input(atlas.color, atlas.valid, net.patch, net.dtype))
    return out.permute(0, 2, 3, 1).numpy() * 255.0


def inpaint_with_net(net: GraphInpaintNet, atlas: TextureAtlas) -> TextureAtlas:
    """Fill invalid texels from the decoder outputs; valid texels are kept verbatim."""
    result = atlas.copy()
    if atlas.is_complete:
        return result
    with torch.no_grad():
        out = net(atlas_to_input(atlas.color, atlas.valid, net.patch, net.dtype))
        tex = patches_to_texels(out, atlas.resolution).numpy() * 255.0
    holes = ~atlas.valid
    result.color[holes] = np.clip(np.rint(tex[holes]), 0, 255).astype(np.uint8)
    result.valid[:] = True
    return result


# ---- training ---------------------------------------------------------------

def valid_parts(atlas: TextureAtlas) -> list[int]:
    bounds = cell_bounds(atlas.resolution)
    return [p for p in range(1, PART_COUNT + 1)
            if atlas.valid[bounds[p][0]:bounds[p][1], bounds[p][2]:bounds[p][3]].any()]


def choose_mask(atlas: TextureAtlas, rng: np.random.Generator) -> list[int]:
    """A random nonempty strict subset of the atlas's valid parts."""
    parts = valid_parts(atlas)
    if len(parts) < 2:
        raise InsufficientValidParts(f"need >= 2 valid parts, have {len(parts)}")
    m = int(rng.integers(1, len(parts)))
    return sorted(int(p) for p in rng.choice(parts, size=m, replace=False))


def masked_loss(net: GraphInpaintNet, atlas: TextureAtlas, masked_parts) -> torch.Tensor:
    """Smooth-L1 between prediction and truth on masked, originally valid texels."""
    bounds = cell_bounds(atlas.resolution)
    hide = np.zeros_like(atlas.valid)
    for p in masked_parts:
        r0, r1, c0, c1 = bounds[p]
        hide[r0:r1, c0:c1] = True
    target = hide & atlas.valid
    x = atlas_to_input(atlas.color, atlas.valid & ~hide, net.patch, net.dtype)
    tex = patches_to_texels(net(x), atlas.resolution)
    sel = torch.from_numpy(target)
    pred = tex[sel]
    truth = torch.from_numpy(atlas.color[target].astype(np.float64) / 255.0).to(net.dtype)
    return F.smooth_l1_loss(pred, truth, reduction="mean", beta=1.0)


def train_step(net: GraphInpaintNet, atlas: TextureAtlas, rng: np.random.Generator,
               lr: float = DEFAULT_LR, inplace: bool = False):
    """One self-supervised gradient-descent step. Returns ``(net', loss)``."""
    parts = choose_mask(atlas, rng)
    target = net if inplace else net.clone()
    target.zero_grad(set_to_none=True)
    loss = masked_loss(target, atlas, parts)
    loss.backward()
    if lr != 0.0:
        with torch.no_grad():
            for p in target.parameters():
                p -= lr * p.grad
    target.zero_grad(set_to_none=True)
    return target, float(loss.detach())


def train(net: GraphInpaintNet, atlases, steps: int, lr: float = DEFAULT_LR, seed: int = 0,
          log=None) -> list[float]:
    """Run ``steps`` in-place updates cycling through ``atlases``; returns the losses."""
    rng = np.random.default_rng(seed)
    losses = []
    for i in range(steps):
        _, loss = train_step(net, atlases[i % len(atlases)], rng, lr=lr, inplace=True)
        losses.append(loss)
        if log is not None:
            log(i, loss)
    return losses


# ---- serialization ----------------------------------------------------------

def save_weights(net: GraphInpaintNet, path) -> None:
    params = [p.detach().to(torch.float64).contiguous().numpy() for p in net.parameters()]
    header = json.dumps({"widths": list(net.widths), "patch": net.patch,
                         "shapes": [list(a.shape) for a in params]}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC + struct.pack("<II", WEIGHTS_VERSION, len(header)))
        fh.write(header)
        for a in params:
            fh.write(a.astype("<f8").tobytes())


def load_weights(path) -> GraphInpaintNet:
    data = Path(path).read_bytes()
    if data[:4] != WEIGHTS_MAGIC or len(data) < 12:
        raise ParseError("not a network weights file", path=str(path))
    version, hlen = struct.unpack("<II", data[4:12])
    if version != WEIGHTS_VERSION:
        raise ParseError(f"unsupported weights version {version}", path=str(path))
    try:
        header = json.loads(data[12:12 + hlen])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad weights header: {exc}", path=str(path)) from exc
    net = GraphInpaintNet(header["widths"], header["patch"])
    off = 12 + hlen
    with torch.no_grad():
        for p, shape in zip(net.parameters(), header["shapes"]):
            if list(p.shape) != shape:
                raise ParseError(f"parameter shape {shape} does not match {list(p.shape)}", path=str(path))
            n = p.numel() * 8
            if off + n > len(data):
                raise ParseError("truncated weights file", path=str(path))
            p.copy_(torch.from_numpy(np.frombuffer(data[off:off + n], "<f8").reshape(shape).copy()))
            off += n
    if off != len(data):
        raise ParseError("trailing bytes in weights file", path=str(path))
    return net
