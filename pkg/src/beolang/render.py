"""Orthographic depth rendering of voxel grids.

Geometry conventions: the grid's z axis is up, a camera at azimuth 0 sits on
the +x side looking toward -x (the object's front faces +x), azimuth grows
counter-clockwise seen from above. The image plane spans the grid's
circumscribed sphere, so every view of the grid fits in the frame.

Depth values are normalized against that sphere: a hit on its near pole
maps to 1, its far pole to 0, and rays that miss everything are 0.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

DEPTH_MAGIC = b"DPTH"


@dataclass(frozen=True)
class Camera:
    azimuth: float
    elevation: float
    distance: float | None = None  # model units; None = twice the grid circumradius
    height: int = 64
    width: int = 64

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("image must be at least 8 x 8")
        if not -90.0 < self.elevation < 90.0:
            raise ValueError("elevation must lie strictly between -90 and 90 degrees")


@dataclass(frozen=True)
class DepthImage:
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("depth image must be 2-D")
        if not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
            raise ValueError("depth values must be finite and within [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DepthImage):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class ViewRegime:
    name: str
    azimuth: tuple[float, float]
    elevation: tuple[float, float]

    def __post_init__(self):
        a0, a1 = self.azimuth
        e0, e1 = self.elevation
        if not (a0 <= a1 and a1 - a0 <= 360.0):
            raise ValueError("azimuth interval must be ordered and span at most 360 degrees")
        if not (-10.0 <= e0 <= e1 <= 60.0):
            raise ValueError("elevation interval must lie within [-10, 60] degrees")


REGIMES = {
    "frontal": ViewRegime("frontal", (-30.0, 30.0), (10.0, 30.0)),
    "varied": ViewRegime("varied", (0.0, 360.0), (0.0, 45.0)),
    "side_rear": ViewRegime("side_rear", (120.0, 240.0), (10.0, 30.0)),
}


def get_regime(regime):
    if isinstance(regime, ViewRegime):
        return regime
    try:
        return REGIMES[regime]
    except KeyError:
        raise ValueError(f"unknown view regime {regime!r}; expected one of {sorted(REGIMES)}") from None


def sample_viewpoint(regime, rng_seed, height=64, width=64):
    """Camera with azimuth/elevation uniform over the regime's intervals."""
    regime = get_regime(regime)
    rng = np.random.default_rng(rng_seed)
    az = rng.uniform(*regime.azimuth)
    el = rng.uniform(*regime.elevation)
    return Camera(float(az), float(el), None, height, width)


def camera_frame(cam):
    """Unit viewing direction, image-right and image-up vectors."""
    az, el = math.radians(cam.azimuth), math.radians(cam.elevation)
    forward = -np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    right = np.cross(forward, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    up = np.cross(right, forward)
    return forward, right, up


def camera_rays(resolution, cam, cell_size=1.0):
    """Ray origins and directions in grid index units, plus the near/far
    ray parameters of the bounding sphere used for depth normalization.

    Returns ``(origins (H*W, 3), direction (3,), t_near, t_far)``; pixels are
    in row-major order with row 0 at the top of the image.
    """
    radius = resolution * math.sqrt(3.0) / 2.0
    if cam.distance is None:
        dist = 2.0 * radius
    else:
        dist = cam.distance / cell_size
        if dist <= radius:
            raise ValueError("camera lies inside the object's bounding sphere")
    forward, right, up = camera_frame(cam)
    center = np.full(3, resolution / 2.0)
    cols = ((np.arange(cam.width) + 0.5) / cam.width * 2.0 - 1.0) * radius
    rows = (1.0 - (np.arange(cam.height) + 0.5) / cam.height * 2.0) * radius
    v, u = np.meshgrid(rows, cols, indexing="ij")
    origins = (center - forward * dist
               + u.reshape(-1, 1) * right + v.reshape(-1, 1) * up)
    return origins, forward, dist - radius, dist + radius


def normalize_depth(t, t_near, t_far):
    return np.clip((t_far - t) / (t_far - t_near), 0.0, 1.0)


def _box_entry(origins, d, resolution):
    n = len(origins)
    t_in = np.full(n, -np.inf)
    t_out = np.full(n, np.inf)
    inside = np.ones(n, dtype=bool)
    for a in range(3):
        o = origins[:, a]
        if d[a] == 0.0:
            inside &= (o >= 0.0) & (o <= resolution)
            continue
        lo = (0.0 - o) / d[a]
        hi = (float(resolution) - o) / d[a]
        t_in = np.maximum(t_in, np.minimum(lo, hi))
        t_out = np.minimum(t_out, np.maximum(lo, hi))
    return t_in, t_out, inside & (t_in < t_out)


def render_depth(grid, cam):
    """Depth image of ``grid`` seen by ``cam``.

    Each ray walks the grid cell by cell (Amanatides-Woo traversal); the
    depth comes from the ray parameter at which it enters the first occupied
    cell. Crossing parameters are evaluated directly as
    ``(plane - origin) / direction`` rather than accumulated, so results do
    not depend on path length.
    """
    res = grid.resolution
    occ = grid.occupancy
    origins, d, t_near, t_far = camera_rays(res, cam, grid.cell_size)
    n = len(origins)
    depth = np.zeros(n)
    if not occ.any():
        return DepthImage(depth.reshape(cam.height, cam.width))

    t_in, _, hit = _box_entry(origins, d, res)
    rays = np.flatnonzero(hit)
    o = origins[rays]
    t_cur = t_in[rays]
    p = o + d * t_cur[:, None]
    idx = np.clip(np.floor(p).astype(np.int64), 0, res - 1)
    step = np.where(d > 0, 1, -1).astype(np.int64)
    moving = d != 0.0

    while rays.size:
        filled = occ[idx[:, 0], idx[:, 1], idx[:, 2]]
        if filled.any():
            depth[rays[filled]] = normalize_depth(t_cur[filled], t_near, t_far)
            keep = ~filled
            rays, o, t_cur, idx = rays[keep], o[keep], t_cur[keep], idx[keep]
            if not rays.size:
                break
        t_next = np.full(idx.shape, np.inf)
        for a in range(3):
            if moving[a]:
                plane = (idx[:, a] + (1 if step[a] > 0 else 0)).astype(np.float64)
                t_next[:, a] = (plane - o[:, a]) / d[a]
        axis = np.argmin(t_next, axis=1)
        rows = np.arange(len(rays))
        t_cur = t_next[rows, axis]
        idx[rows, axis] += step[axis]
        inside = np.all((idx >= 0) & (idx < res), axis=1)
        rays, o, t_cur, idx = rays[inside], o[inside], t_cur[inside], idx[inside]
    return DepthImage(depth.reshape(cam.height, cam.width))


# ---------------------------------------------------------------------------
# image files


def save_pgm(img, path):
    """16-bit binary PGM; pixel = round(depth * 65535), big-endian."""
    data = np.rint(img.values * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def _pgm_tokens(data):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1


def load_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    (magic, w, h, maxval), offset = _pgm_tokens(data)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(w), int(h), int(maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    px = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset)
    return DepthImage(px.reshape(h, w).astype(np.float64) / maxval)


def save_raw(img, path):
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<II", img.width, img.height))
        fh.write(img.values.astype("<f4").tobytes())


def load_raw(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != DEPTH_MAGIC:
        raise ValueError(f"{path}: not a raw depth file")
    w, h = struct.unpack("<II", data[4:12])
    px = np.frombuffer(data[12:], dtype="<f4")
    if px.size != w * h:
        raise ValueError(f"{path}: truncated raster")
    return DepthImage(np.clip(px.reshape(h, w).astype(np.float64), 0.0, 1.0))


def load_depth(path):
    """Read either depth file flavour, sniffing the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == DEPTH_MAGIC:
        return load_raw(path)
    if head[:2] == b"P5":
        return load_pgm(path)
    raise ValueError(f"{path}: unrecognized depth image format")


def save_depth(img, path):
    if str(path).lower().endswith(".pgm"):
        save_pgm(img, path)
    else:
        save_raw(img, path)
