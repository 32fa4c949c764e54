"""Point-cloud filtering, voxel capping, heightfields, patches and terrain meshes.

Heightfield convention: cell ``(i, j)`` covers
``[x0 + i*c, x0 + (i+1)*c) x [y0 + j*c, y0 + (j+1)*c)``, its value lives at the
cell center, and ``z`` has shape ``(nx, ny)`` with NaN for absent cells.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .geometry import CameraTrack, unproject_pixels

log = logging.getLogger(__name__)

_SNAP = 1e-9  # tolerance when assigning points that sit on cell boundaries


class EmptySceneError(ValueError):
    pass


class HoleFillWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3)
    frame: Optional[np.ndarray] = None  # (N,) source frame index
    pixel: Optional[np.ndarray] = None  # (N, 2) source (row, col)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", p)
        for name in ("frame", "pixel"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.int64)
                if v.shape[0] != p.shape[0]:
                    raise ValueError(f"{name} must have one entry per point")
                object.__setattr__(self, name, v)

    def __len__(self) -> int:
        return self.points.shape[0]

    def subset(self, keep) -> "PointCloud":
        return PointCloud(self.points[keep],
                          None if self.frame is None else self.frame[keep],
                          None if self.pixel is None else self.pixel[keep])


@dataclass(frozen=True, eq=False)
class HeightField:
    origin: tuple
    cell: float
    z: np.ndarray  # (nx, ny), NaN = absent

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.ndim != 2 or min(z.shape) < 1:
            raise ValueError("heightfield grid must be 2-D with at least one cell")
        if not self.cell > 0:
            raise ValueError("cell size must be positive")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def shape(self):
        return self.z.shape

    @property
    def occupied(self) -> np.ndarray:
        return np.isfinite(self.z)

    def centers(self):
        """Cell-center coordinates ``(nx, ny, 2)``."""
        nx, ny = self.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.cell
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.cell
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([X, Y], axis=-1)


@dataclass(frozen=True, eq=False)
class TerrainMesh:
    vertices: np.ndarray  # (N, 3)
    triangles: np.ndarray  # (M, 3)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.triangles, dtype=np.int64)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f.reshape(-1, 3))

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


# ---------------------------------------------------------------------------
# clouds
# ---------------------------------------------------------------------------

def cloud_from_track(track: CameraTrack, alpha: float, rotation=None, stride: int = 1) -> PointCloud:
    """Scaled world points from every valid depth pixel, optionally rotated (e.g. by gravity)."""
    if track.depth is None:
        raise ValueError("camera track carries no depth")
    pts, frames, pix = [], [], []
    for t in range(len(track)):
        d = track.depth[t, ::stride, ::stride]
        rows, cols = np.nonzero(np.isfinite(d))
        rows, cols = rows * stride, cols * stride
        uv = np.stack([cols, rows], axis=-1).astype(float)
        pts.append(unproject_pixels(track.camera, track.R[t], track.t[t], uv, track.depth[t, rows, cols], alpha))
        frames.append(np.full(rows.size, t))
        pix.append(np.stack([rows, cols], axis=-1))
    P = np.concatenate(pts)
    if rotation is not None:
        P = P @ np.asarray(rotation, dtype=float).T
    return PointCloud(P, np.concatenate(frames), np.concatenate(pix))


def relative_depth_gradient(depth: np.ndarray) -> np.ndarray:
    """Per-pixel ``|grad D| / D`` (central differences); NaN where undefined."""
    d = np.asarray(depth, dtype=float)
    gy, gx = np.gradient(d, axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.hypot(gx, gy) / d


def filter_cloud(cloud: PointCloud, depth: np.ndarray, joints: np.ndarray, tau_grad: float = 0.05,
                 box: float = 2.0, human_mask: Optional[np.ndarray] = None) -> PointCloud:
    """Drop depth-discontinuity points, human points and points far from the person.

    Args:
        cloud: points carrying their source frame and pixel.
        depth: ``(T, H, W)`` depth stack the points came from (any units).
        joints: ``(T, J, 3)`` human joints in the cloud's frame.
        tau_grad: threshold on the relative depth gradient per pixel.
        box: half-size of the per-frame crop box around the joints (m).
        human_mask: optional ``(T, H, W)`` segmentation of the person.
    """
    if cloud.frame is None or cloud.pixel is None:
        raise ValueError("filtering needs per-point source frame and pixel")
    f, r, c = cloud.frame, cloud.pixel[:, 0], cloud.pixel[:, 1]
    g = relative_depth_gradient(depth)[f, r, c]
    keep = np.isfinite(g) & (g <= tau_grad)
    if human_mask is not None:
        keep &= ~np.asarray(human_mask, dtype=bool)[f, r, c]
    joints = np.asarray(joints, dtype=float)
    lo = joints.min(axis=1) - box
    hi = joints.max(axis=1) + box
    inside = np.zeros(len(cloud), dtype=bool)
    cand = np.nonzero(keep & np.all(cloud.points >= lo.min(axis=0), 1) & np.all(cloud.points <= hi.max(axis=0), 1))[0]
    for t in range(len(joints)):
        p = cloud.points[cand]
        hit = np.all((p >= lo[t]) & (p <= hi[t]), axis=1)
        inside[cand[hit]] = True
        cand = cand[~hit]
        if cand.size == 0:
            break
    keep &= inside
    if not keep.any():
        raise EmptySceneError("no scene points survive filtering")
    return cloud.subset(keep)


def voxel_downsample(cloud: PointCloud, voxel: float = 0.1, cap: int = 20) -> PointCloud:
    """Keep the first ``cap`` points (in input order) of every occupied voxel."""
    if not voxel > 0:
        raise ValueError("voxel size must be positive")
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel + _SNAP).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    sorted_groups = inverse[order]
    starts = np.r_[0, np.nonzero(np.diff(sorted_groups))[0] + 1]
    rank = np.arange(len(order)) - np.repeat(starts, np.diff(np.r_[starts, len(order)]))
    keep = np.zeros(len(cloud), dtype=bool)
    keep[order[rank < cap]] = True
    return cloud.subset(keep)


# ---------------------------------------------------------------------------
# heightfields
# ---------------------------------------------------------------------------

def rasterize_heightfield(cloud: PointCloud, cell: float = 0.1, percentile: float = 95.0) -> HeightField:
    """Per-cell elevation = the given percentile of member heights (an actual sample)."""
    pts = cloud.points
    if len(pts) == 0:
        raise EmptySceneError("cannot rasterize an empty cloud")
    if not cell > 0:
        raise ValueError("cell size must be positive")
    x0 = np.floor(pts[:, 0].min() / cell + _SNAP) * cell
    y0 = np.floor(pts[:, 1].min() / cell + _SNAP) * cell
    i = np.floor((pts[:, 0] - x0) / cell + _SNAP).astype(np.int64)
    j = np.floor((pts[:, 1] - y0) / cell + _SNAP).astype(np.int64)
    nx, ny = i.max() + 1, j.max() + 1
    flat = i * ny + j
    order = np.lexsort((pts[:, 2], flat))
    flat_s = flat[order]
    z_s = pts[order, 2]
    starts = np.r_[0, np.nonzero(np.diff(flat_s))[0] + 1]
    counts = np.diff(np.r_[starts, len(flat_s)])
    # inverted-CDF percentile: smallest sample with at least q of the mass at or below it
    k = np.ceil(percentile / 100.0 * counts - 1e-12).astype(np.int64) - 1
    k = np.clip(k, 0, counts - 1)
    z = np.full(nx * ny, np.nan)
    z[flat_s[starts]] = z_s[starts + k]
    return HeightField((x0, y0), cell, z.reshape(nx, ny))


def fill_holes(field: HeightField, k: int = 8, power: float = 2.0) -> HeightField:
    """Inverse-distance fill of absent cells inside the convex hull of occupied cells.

    With fewer than three occupied cells, or when they are collinear, the field
    is returned unchanged and a `HoleFillWarning` is emitted.
    """
    occ = field.occupied
    centers = field.centers()
    known = centers[occ]
    if len(known) < 3:
        warnings.warn("fewer than three occupied cells; hole filling skipped", HoleFillWarning, stacklevel=2)
        return field
    try:
        hull = Delaunay(known)
    except QhullError:
        warnings.warn("occupied cells are collinear; hole filling skipped", HoleFillWarning, stacklevel=2)
        return field
    holes = ~occ
    if not holes.any():
        return field
    q = centers[holes]
    inside = hull.find_simplex(q, tol=1e-9) >= 0
    if not inside.any():
        return field
    tree = cKDTree(known)
    kk = min(k, len(known))
    dist, idx = tree.query(q[inside], k=kk)
    dist = dist.reshape(len(dist), -1)
    idx = idx.reshape(len(idx), -1)
    w = 1.0 / dist ** power
    vals = np.sum(w * field.z[occ][idx], axis=1) / np.sum(w, axis=1)
    z = field.z.copy()
    hole_idx = np.argwhere(holes)[inside]
    z[hole_idx[:, 0], hole_idx[:, 1]] = vals
    return HeightField(field.origin, field.cell, z)


def mesh_heightfield(field: HeightField) -> TerrainMesh:
    """Two triangles per quad of four present cell centers, counter-clockwise seen from +z."""
    occ = field.occupied
    quad = occ[:-1, :-1] & occ[1:, :-1] & occ[1:, 1:] & occ[:-1, 1:]
    if not quad.any():
        raise EmptySceneError("heightfield has no complete quads to mesh")
    used = np.zeros_like(occ)
    qi, qj = np.nonzero(quad)
    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
        used[qi + di, qj + dj] = True
    vid = np.full(occ.shape, -1, dtype=np.int64)
    ui, uj = np.nonzero(used)
    vid[ui, uj] = np.arange(ui.size)
    c = field.centers()
    verts = np.column_stack([c[ui, uj, 0], c[ui, uj, 1], field.z[ui, uj]])
    v00, v10 = vid[qi, qj], vid[qi + 1, qj]
    v11, v01 = vid[qi + 1, qj + 1], vid[qi, qj + 1]
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return TerrainMesh(verts, tris)


def mesh_edge_counts(mesh: TerrainMesh) -> dict:
    """Number of triangles sharing each undirected edge."""
    e = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]], mesh.triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    keys, counts = np.unique(e, axis=0, return_counts=True)
    return {tuple(k): int(n) for k, n in zip(keys, counts)}


# ---------------------------------------------------------------------------
# lookups
# ---------------------------------------------------------------------------

class FieldSampler:
    """Bilinear lookups between cell centers with a nearest-occupied fallback.

    A query uses bilinear interpolation when its four surrounding cells are
    present, and otherwise the value of the nearest occupied cell (or
    ``fallback`` when given as a number).
    """

    def __init__(self, field: HeightField, fallback="nearest"):
        if not field.occupied.any():
            raise EmptySceneError("heightfield has no occupied cells")
        self.field = field
        self.fallback = fallback
        occ = field.occupied
        self._known_z = field.z[occ]
        self._tree = cKDTree(field.centers()[occ])

    def __call__(self, xy, with_gradient: bool = False):
        f = self.field
        xy = np.asarray(xy, dtype=float)
        shape = xy.shape[:-1]
        q = xy.reshape(-1, 2)
        nx, ny = f.shape
        gx = (q[:, 0] - f.origin[0]) / f.cell - 0.5
        gy = (q[:, 1] - f.origin[1]) / f.cell - 0.5
        i0 = np.floor(gx).astype(np.int64)
        j0 = np.floor(gy).astype(np.int64)
        tx = gx - i0
        ty = gy - j0
        ok = (i0 >= 0) & (j0 >= 0) & (i0 + 1 < nx) & (j0 + 1 < ny)
        out = np.empty(len(q))
        grad = np.zeros((len(q), 2))
        i0c = np.clip(i0, 0, max(nx - 2, 0))
        j0c = np.clip(j0, 0, max(ny - 2, 0))
        i1c = np.minimum(i0c + 1, nx - 1)
        j1c = np.minimum(j0c + 1, ny - 1)
        z00, z10 = f.z[i0c, j0c], f.z[i1c, j0c]
        z01, z11 = f.z[i0c, j1c], f.z[i1c, j1c]
        ok &= np.isfinite(z00) & np.isfinite(z10) & np.isfinite(z01) & np.isfinite(z11)
        a = tx[ok]
        b = ty[ok]
        out[ok] = (z00[ok] * (1 - a) * (1 - b) + z10[ok] * a * (1 - b) + z01[ok] * (1 - a) * b + z11[ok] * a * b)
        grad[ok, 0] = ((z10[ok] - z00[ok]) * (1 - b) + (z11[ok] - z01[ok]) * b) / f.cell
        grad[ok, 1] = ((z01[ok] - z00[ok]) * (1 - a) + (z11[ok] - z10[ok]) * a) / f.cell
        miss = ~ok
        if miss.any():
            if self.fallback == "nearest":
                _, idx = self._tree.query(q[miss])
                out[miss] = self._known_z[idx]
            else:
                out[miss] = float(self.fallback)
        out = out.reshape(shape)
        if with_gradient:
            return out, grad.reshape(shape + (2,))
        return out


def patch_offsets(n: int = 11, spacing: float = 0.1) -> np.ndarray:
    """``(n, n, 2)`` local grid offsets; axis 0 runs along local x, axis 1 along local y."""
    o = (np.arange(n) - (n - 1) / 2.0) * spacing
    A, B = np.meshgrid(o, o, indexing="ij")
    return np.stack([A, B], axis=-1)


def sample_patch(field, center, yaw: float, n: int = 11, spacing: float = 0.1, fallback="nearest") -> np.ndarray:
    """``(n, n)`` heights on a grid rotated by ``yaw`` about ``center``.

    ``field`` may be a `HeightField` or a prebuilt `FieldSampler`.
    """
    sampler = field if isinstance(field, FieldSampler) else FieldSampler(field, fallback)
    c, s = np.cos(yaw), np.sin(yaw)
    off = patch_offsets(n, spacing)
    world = np.stack([c * off[..., 0] - s * off[..., 1], s * off[..., 0] + c * off[..., 1]], axis=-1)
    return sampler(world + np.asarray(center, dtype=float)[:2])


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def write_obj(mesh: TerrainMesh, path) -> None:
    """ASCII OBJ with ``v``/``f`` records (1-based), z up, meters."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_obj(path) -> TerrainMesh:
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TerrainMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_heightfield(field: HeightField, path) -> None:
    """JSON text: origin, cell size, shape and a row-major grid (``null`` = absent)."""
    grid = [[None if not np.isfinite(v) else float(v) for v in row] for row in field.z.tolist()]
    doc = {"format_version": 1, "origin": list(field.origin), "cell": field.cell,
           "shape": list(field.shape), "absent": None, "z": grid}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def read_heightfield(path) -> HeightField:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != 1:
        raise ValueError("unsupported heightfield format version")
    z = np.array([[np.nan if v is None else v for v in row] for row in doc["z"]], dtype=float)
    if list(z.shape) != list(doc["shape"]):
        raise ValueError("heightfield grid does not match its declared shape")
    return HeightField(tuple(doc["origin"]), float(doc["cell"]), z)


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SceneResult:
    cloud: PointCloud
    field: HeightField
    mesh: TerrainMesh
    input_points: int


def process_scene(track: CameraTrack, alpha: float, joints: np.ndarray, rotation=None, human_mask=None,
                  tau_grad: float = 0.05, box: float = 2.0, voxel: float = 0.1, cap: int = 20,
                  cell: float = 0.1) -> SceneResult:
    """Depth maps to a capped cloud, a hole-filled heightfield and its mesh.

    ``joints`` must already be in the output frame (scaled, and rotated by
    ``rotation`` when one is given).
    """
    cloud = cloud_from_track(track, alpha, rotation)
    n_in = len(cloud)
    kept = filter_cloud(cloud, track.depth, joints, tau_grad, box, human_mask)
    capped = voxel_downsample(kept, voxel, cap)
    field = fill_holes(rasterize_heightfield(capped, cell))
    mesh = mesh_heightfield(field)
    log.info("scene: %d input points -> %d filtered -> %d capped; field %s", n_in, len(kept), len(capped),
             field.shape)
    return SceneResult(capped, field, mesh, n_in)
