"""Triangle meshes, voxelization and flat object vectors.

Flat vectors use x-major layout: ``index = x * R**2 + y * R + z`` for a
grid indexed as ``occupancy[x, y, z]``. Every other module relies on it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

VOXEL_MAGIC = b"VXGR"
DEFAULT_PADDING = 0.05


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DegenerateMeshError(ValueError):
    pass


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite vertex coordinates")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError(
                f"face index out of range (vertex count {len(v)})")
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True)
class VoxelGrid:
    """Binary occupancy cube.

    ``origin`` is the model-space corner of cell (0, 0, 0) and ``side`` the
    edge length of the whole cube, so cell size is ``side / resolution``.
    """

    occupancy: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    side: float = 1.0

    def __post_init__(self):
        occ = np.asarray(self.occupancy)
        if occ.ndim != 3 or len(set(occ.shape)) != 1 or occ.shape[0] < 1:
            raise ValueError(f"occupancy must be an R x R x R cube, got {occ.shape}")
        if occ.dtype != bool:
            if not np.all((occ == 0) | (occ == 1)):
                raise ValueError("occupancy values must be 0 or 1")
            occ = occ.astype(bool)
        if not self.side > 0:
            raise ValueError("grid side must be positive")
        object.__setattr__(self, "occupancy", _frozen(occ))
        object.__setattr__(self, "origin", _frozen(np.asarray(self.origin, dtype=np.float64).reshape(3)))
        object.__setattr__(self, "side", float(self.side))

    @property
    def resolution(self):
        return self.occupancy.shape[0]

    @property
    def cell_size(self):
        return self.side / self.resolution

    def count(self):
        return int(self.occupancy.sum())

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return (np.array_equal(self.occupancy, other.occupancy)
                and np.array_equal(self.origin, other.origin)
                and self.side == other.side)

    __hash__ = None


# ---------------------------------------------------------------------------
# mesh I/O


def load_mesh(path):
    """Read an OBJ (``v``/``f`` records only) or OFF file into a TriMesh.

    Polygon faces are fan-triangulated; OBJ indices are converted to 0-based
    and negative (relative) OBJ indices are resolved.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        lines = fh.read().splitlines()
    ext = os.path.splitext(path)[1].lower()
    if ext == ".off" or (lines and lines[0].strip().upper().startswith("OFF")):
        return _parse_off(lines, path)
    return _parse_obj(lines, path)


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _parse_obj(lines, path):
    vertices = []
    faces = []
    face_lines = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        if key == "v":
            try:
                vertices.append([float(c) for c in parts[1:4]])
            except ValueError:
                raise MeshFormatError("bad vertex record", path, lineno) from None
            if len(vertices[-1]) != 3:
                raise MeshFormatError("vertex needs 3 coordinates", path, lineno)
        elif key == "f":
            if len(parts) < 4:
                raise MeshFormatError("face needs at least 3 vertices", path, lineno)
            poly = []
            for token in parts[1:]:
                try:
                    idx = int(token.split("/")[0])
                except ValueError:
                    raise MeshFormatError(f"bad face index {token!r}", path, lineno) from None
                if idx == 0:
                    raise MeshFormatError("OBJ indices are 1-based; got 0", path, lineno)
                idx = idx - 1 if idx > 0 else len(vertices) + idx
                poly.append(idx)
            for tri in _fan(poly):
                faces.append(tri)
                face_lines.append(lineno)
        # other records (vn, vt, usemtl, o, g, s, ...) are ignored
    return _build_mesh(vertices, faces, face_lines, path)


def _parse_off(lines, path):
    records = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            records.append((lineno, line.split()))
    if not records or not records[0][1][0].upper().endswith("OFF"):
        raise MeshFormatError("missing OFF header", path, records[0][0] if records else 1)
    header_no, header = records[0]
    rest = records[1:]
    counts = header[1:]
    if not counts:
        if not rest:
            raise MeshFormatError("missing OFF counts line", path, header_no)
        header_no, counts = rest[0]
        rest = rest[1:]
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise MeshFormatError("bad OFF counts line", path, header_no) from None
    if len(rest) < nv + nf:
        raise MeshFormatError("file ends before all vertices/faces were read", path, len(lines))
    vertices = []
    for lineno, parts in rest[:nv]:
        try:
            vertices.append([float(c) for c in parts[:3]])
        except ValueError:
            raise MeshFormatError("bad vertex record", path, lineno) from None
        if len(vertices[-1]) != 3:
            raise MeshFormatError("vertex needs 3 coordinates", path, lineno)
    faces = []
    face_lines = []
    for lineno, parts in rest[nv:nv + nf]:
        try:
            n = int(parts[0])
            poly = [int(p) for p in parts[1:1 + n]]
        except (ValueError, IndexError):
            raise MeshFormatError("bad face record", path, lineno) from None
        if n < 3 or len(poly) != n:
            raise MeshFormatError("face needs at least 3 vertices", path, lineno)
        for tri in _fan(poly):
            faces.append(tri)
            face_lines.append(lineno)
    return _build_mesh(vertices, faces, face_lines, path)


def _build_mesh(vertices, faces, face_lines, path):
    nv = len(vertices)
    for tri, lineno in zip(faces, face_lines):
        for idx in tri:
            if idx < 0 or idx >= nv:
                raise MeshFormatError(
                    f"face index {idx + 1} out of range (vertex count {nv})", path, lineno)
    return TriMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh, path):
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {x:.6f} {y:.6f} {z:.6f}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# ---------------------------------------------------------------------------
# voxelization


def cube_bounds(mesh, padding=DEFAULT_PADDING):
    """Cube around the mesh bounding box, grown by ``padding`` of its extent."""
    lo, hi = mesh.bounds
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise DegenerateMeshError("mesh bounding box has zero extent")
    side = extent * (1.0 + 2 * padding)
    center = (lo + hi) / 2.0
    return center - side / 2.0, side


def _tri_box_overlap(tri, centers, half):
    """Separating-axis test of one triangle against many axis-aligned cubes.

    ``tri`` is (3, 3), ``centers`` is (M, 3). Touching counts as overlap.
    """
    v = tri[None, :, :] - centers[:, None, :]  # (M, 3, 3)
    hit = np.ones(len(centers), dtype=bool)
    # cube face normals
    for a in range(3):
        hit &= (v[:, :, a].min(axis=1) <= half) & (v[:, :, a].max(axis=1) >= -half)
    edges = (tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2])
    # triangle normal
    n = np.cross(edges[0], edges[1])
    if np.any(n):
        r = half * np.abs(n).sum()
        d = v[:, 0, :] @ n
        hit &= np.abs(d) <= r
    # edge x axis cross products
    for e in edges:
        for a in range(3):
            axis = np.zeros(3)
            axis[a] = 1.0
            ax = np.cross(e, axis)
            if not np.any(ax):
                continue
            p = v @ ax  # (M, 3)
            r = half * np.abs(ax).sum()
            hit &= (p.min(axis=1) <= r) & (p.max(axis=1) >= -r)
    return hit


def voxelize(mesh, resolution, origin=None, side=None, padding=DEFAULT_PADDING):
    """Voxelize a triangle mesh into a binary occupancy grid.

    Surface cells are those overlapping any triangle; cells that cannot be
    reached from the grid boundary through empty cells (6-connectivity) are
    filled as interior. By default the grid is the mesh bounding box padded
    to a cube.
    """
    resolution = int(resolution)
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if len(mesh.faces) == 0:
        raise DegenerateMeshError("mesh has no faces")
    if origin is None or side is None:
        origin, side = cube_bounds(mesh, padding)
    origin = np.asarray(origin, dtype=np.float64)
    cell = side / resolution
    verts = (mesh.vertices - origin) / cell  # grid index space
    surface = np.zeros((resolution,) * 3, dtype=bool)
    for face in mesh.faces:
        tri = verts[face]
        lo = np.clip(np.floor(tri.min(axis=0) - 1e-9).astype(int), 0, resolution - 1)
        hi = np.clip(np.floor(tri.max(axis=0) + 1e-9).astype(int), 0, resolution - 1)
        if np.any(tri.max(axis=0) < 0) or np.any(tri.min(axis=0) > resolution):
            continue
        ii, jj, kk = np.meshgrid(np.arange(lo[0], hi[0] + 1),
                                 np.arange(lo[1], hi[1] + 1),
                                 np.arange(lo[2], hi[2] + 1), indexing="ij")
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        hit = _tri_box_overlap(tri, idx + 0.5, 0.5)
        sel = idx[hit]
        surface[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    filled = ndimage.binary_fill_holes(surface)
    return VoxelGrid(filled, origin, side)


# ---------------------------------------------------------------------------
# flat vectors


def flatten(grid):
    return grid.occupancy.reshape(-1).astype(np.float64)


def unflatten(vec, resolution, threshold=0.5, origin=None, side=1.0):
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    resolution = int(resolution)
    if vec.size != resolution ** 3:
        raise ValueError(
            f"vector length {vec.size} does not match resolution {resolution} "
            f"(expected {resolution ** 3})")
    occ = (vec >= threshold).reshape((resolution,) * 3)
    return VoxelGrid(occ, np.zeros(3) if origin is None else origin, side)


def iou(a, b):
    """Intersection over union of two equally sized grids."""
    x, y = a.occupancy, b.occupancy
    union = np.logical_or(x, y).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(x, y).sum() / union)


# ---------------------------------------------------------------------------
# voxel grid file and cube-face export


def save_grid(grid, path):
    bits = np.packbits(grid.occupancy.reshape(-1).astype(np.uint8), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(VOXEL_MAGIC)
        fh.write(struct.pack("<I", grid.resolution))
        fh.write(bits.tobytes())


def load_grid(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != VOXEL_MAGIC:
        raise ValueError(f"{path}: not a voxel grid file")
    (r,) = struct.unpack("<I", data[4:8])
    n = r ** 3
    payload = np.frombuffer(data[8:], dtype=np.uint8)
    if payload.size != (n + 7) // 8:
        raise ValueError(f"{path}: truncated voxel payload")
    occ = np.unpackbits(payload, count=n, bitorder="little").astype(bool)
    return VoxelGrid(occ.reshape((r,) * 3))


def grid_to_mesh(grid):
    """Mesh of every exposed cell face; coordinates in model units."""
    occ = np.pad(grid.occupancy, 1)
    quads = []
    unit = np.eye(3, dtype=int)
    for axis in range(3):
        u, w = unit[(axis + 1) % 3], unit[(axis + 2) % 3]
        for sign in (1, -1):
            nb = np.roll(occ, -sign, axis=axis)
            cells = np.argwhere(occ & ~nb) - 1
            if not len(cells):
                continue
            base = cells + (unit[axis] if sign > 0 else 0)
            corners = [base, base + u, base + u + w, base + w]
            if sign < 0:
                corners = corners[::-1]
            quads.append(np.stack(corners, axis=1))
    if not quads:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    quads = np.concatenate(quads).astype(np.float64)  # (Q, 4, 3)
    verts = quads.reshape(-1, 3) * grid.cell_size + grid.origin
    q = np.arange(len(quads))[:, None] * 4
    faces = np.concatenate([q + [0, 1, 2], q + [0, 2, 3]])
    return TriMesh(verts, faces)
