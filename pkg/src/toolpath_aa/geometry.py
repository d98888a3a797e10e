"""Triangle mesh loading, XY-grid spatial index, and vertical ray casting.

All coordinates are millimeters. The mesh is the reference surface that
toolpath vertices are snapped towards; queries are always vertical lines,
so the acceleration structure is a uniform 2D grid over the XY footprint
of the triangles.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

DEGENERATE_AREA = 1e-9  # mm^2, triangles below this are dropped at load
Z_DEDUPE_TOL = 1e-9     # mm, duplicate hits at shared edges merged by z


class MeshError(Exception):
    pass


class StlParseError(MeshError):
    def __init__(self, message, offset=None, line=None):
        self.offset = offset
        self.line = line
        where = ""
        if offset is not None:
            where = f" (byte offset {offset})"
        elif line is not None:
            where = f" (line {line})"
        super().__init__(message + where)


class EmptyMeshError(MeshError):
    pass


@dataclass
class TriangleMesh:
    """Indexed triangle soup with per-triangle unit normals.

    Normals are always recomputed from the right-hand winding of each
    triangle; normals stored in STL files are ignored.
    """

    vertices: np.ndarray          # (n, 3) float64
    triangles: np.ndarray         # (m, 3) int64
    normals: np.ndarray = field(default=None)  # (m, 3) float64, unit length
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and self.triangles.max() >= len(self.vertices):
            raise MeshError("triangle index out of range")
        if self.normals is None:
            self.normals = _face_normals(self.vertices, self.triangles)

    @property
    def triangle_count(self):
        return len(self.triangles)

    def triangle_points(self, i):
        return self.vertices[self.triangles[i]]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def volume(self):
        """Signed volume by the divergence theorem (exact for closed meshes)."""
        a = self.vertices[self.triangles[:, 0]]
        b = self.vertices[self.triangles[:, 1]]
        c = self.vertices[self.triangles[:, 2]]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def _face_normals(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    n = np.cross(b - a, c - a)
    lens = np.linalg.norm(n, axis=1)
    lens[lens == 0] = 1.0
    return n / lens[:, None]


def _triangle_areas(vertices, triangles):
    a = vertices[triangles[:, 0]]
    b = vertices[triangles[:, 1]]
    c = vertices[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def build_mesh(vertices, triangles):
    """Build a mesh from raw arrays, dropping degenerate triangles."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) == 0:
        raise EmptyMeshError("mesh has no triangles")
    areas = _triangle_areas(vertices, triangles)
    keep = areas > DEGENERATE_AREA
    dropped = int((~keep).sum())
    triangles = triangles[keep]
    if len(triangles) == 0:
        raise EmptyMeshError("mesh has no non-degenerate triangles")
    mesh = TriangleMesh(vertices, triangles)
    mesh.degenerate_dropped = dropped
    return mesh


# ---------------------------------------------------------------------------
# STL input

def load_mesh(data, fmt=None):
    """Parse STL bytes into a TriangleMesh.

    fmt is 'stl_ascii', 'stl_binary', or None to auto-detect. Degenerate
    triangles are dropped and counted in mesh.degenerate_dropped.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    if fmt is None:
        fmt = _detect_stl_format(data)
    if fmt == "stl_ascii":
        return _load_stl_ascii(data)
    if fmt == "stl_binary":
        return _load_stl_binary(data)
    raise ValueError(f"unknown mesh format {fmt!r}")


def load_mesh_file(path):
    with open(path, "rb") as f:
        return load_mesh(f.read())


def _detect_stl_format(data):
    head = data[:512].lstrip()
    if head.startswith(b"solid"):
        # A binary file may still start with 'solid'; check for 'facet'.
        if b"facet" in data[:1024] or len(data) < 84:
            return "stl_ascii"
    return "stl_binary"


def _load_stl_binary(data):
    if len(data) < 84:
        raise StlParseError("binary STL shorter than 84-byte header", offset=len(data))
    (count,) = struct.unpack_from("<I", data, 80)
    need = 84 + 50 * count
    if len(data) < need:
        raise StlParseError(
            f"binary STL truncated: {count} triangles declared, body ends early",
            offset=len(data),
        )
    if count == 0:
        raise EmptyMeshError("binary STL declares zero triangles")
    raw = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    rec = raw.reshape(count, 50)
    floats = rec[:, :48].copy().view("<f4").reshape(count, 12).astype(np.float64)
    tris_pts = floats[:, 3:12].reshape(count * 3, 3)
    if not np.isfinite(tris_pts).all():
        bad = int(np.argwhere(~np.isfinite(tris_pts).all(axis=1))[0][0] // 3)
        raise StlParseError("non-finite vertex in binary STL", offset=84 + 50 * bad)
    vertices, triangles = _weld(tris_pts)
    return build_mesh(vertices, triangles)


def _load_stl_ascii(data):
    text = data.decode("utf-8", errors="replace")
    pts = []
    nvert_in_facet = 0
    in_loop = False
    for lineno, line in enumerate(text.splitlines(), 1):
        words = line.split()
        if not words:
            continue
        key = words[0].lower()
        if key == "vertex":
            if len(words) != 4:
                raise StlParseError("vertex needs 3 coordinates", line=lineno)
            try:
                pts.append([float(w) for w in words[1:4]])
            except ValueError:
                raise StlParseError("non-numeric vertex coordinate", line=lineno)
            nvert_in_facet += 1
        elif key == "outer":
            in_loop = True
            nvert_in_facet = 0
        elif key == "endloop":
            if not in_loop or nvert_in_facet != 3:
                raise StlParseError(
                    f"facet has {nvert_in_facet} vertices, expected 3", line=lineno
                )
            in_loop = False
    if len(pts) % 3 != 0:
        raise StlParseError("dangling vertices outside a complete facet")
    if not pts:
        raise EmptyMeshError("ASCII STL contains no facets")
    vertices, triangles = _weld(np.asarray(pts, dtype=np.float64))
    return build_mesh(vertices, triangles)


def _weld(tri_points):
    """Merge exactly-equal vertices; returns (vertices, triangles)."""
    flat = np.ascontiguousarray(tri_points)
    uniq, inverse = np.unique(flat.round(9), axis=0, return_inverse=True)
    triangles = inverse.reshape(-1, 3)
    return uniq, triangles


# ---------------------------------------------------------------------------
# STL output (used by fixture generators and tests)

def mesh_to_stl_binary(mesh, header=b"toolpath-aa"):
    count = mesh.triangle_count
    out = bytearray(header[:80].ljust(80, b"\0"))
    out += struct.pack("<I", count)
    tris = mesh.vertices[mesh.triangles]  # (m, 3, 3)
    for i in range(count):
        rec = struct.pack(
            "<12fH",
            *mesh.normals[i].astype(np.float32),
            *tris[i].reshape(9).astype(np.float32),
            0,
        )
        out += rec
    return bytes(out)


def mesh_to_stl_ascii(mesh, name="mesh"):
    lines = [f"solid {name}"]
    tris = mesh.vertices[mesh.triangles]
    for i in range(mesh.triangle_count):
        n = mesh.normals[i]
        lines.append(f"  facet normal {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
        lines.append("    outer loop")
        for p in tris[i]:
            lines.append(f"      vertex {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Vertical ray index

@dataclass(frozen=True)
class SurfaceHit:
    """Closest intersection of a vertical line with the mesh.

    delta is surface z minus query z; facing is 'top' when the triangle
    normal points upward (nz > 0), else 'bottom'.
    """

    point: tuple
    delta: float
    facing: str
    triangle: int


class VerticalRayIndex:
    """Uniform XY grid binning triangles by their XY bounding boxes.

    Immutable after construction; safe for concurrent read-only queries.
    Query results match brute-force intersection over all triangles.
    """

    def __init__(self, mesh, target_per_cell=4.0):
        if mesh.triangle_count == 0:
            raise EmptyMeshError("cannot index an empty mesh")
        self.mesh = mesh
        tris = mesh.vertices[mesh.triangles]
        self._tri_pts = np.ascontiguousarray(tris)
        self._nz = mesh.normals[:, 2].copy()
        lo = tris[:, :, :2].min(axis=1)
        hi = tris[:, :, :2].max(axis=1)
        self.xy_min = lo.min(axis=0)
        self.xy_max = hi.max(axis=0)
        span = np.maximum(self.xy_max - self.xy_min, 1e-9)
        n_cells = max(1, int(mesh.triangle_count / target_per_cell))
        aspect = span[0] / span[1]
        self.nx = max(1, int(round(math.sqrt(n_cells * aspect))))
        self.ny = max(1, int(round(n_cells / max(self.nx, 1))))
        self.cell = span / np.array([self.nx, self.ny])
        cells = [[] for _ in range(self.nx * self.ny)]
        ilo = self._cell_of(lo)
        ihi = self._cell_of(hi)
        for t in range(mesh.triangle_count):
            for cx in range(ilo[t, 0], ihi[t, 0] + 1):
                for cy in range(ilo[t, 1], ihi[t, 1] + 1):
                    cells[cx * self.ny + cy].append(t)
        self._cells = [np.asarray(c, dtype=np.int64) for c in cells]

    def _cell_of(self, xy):
        xy = np.asarray(xy, dtype=np.float64)
        idx = np.floor((xy - self.xy_min) / self.cell).astype(np.int64)
        idx = np.clip(idx, 0, [self.nx - 1, self.ny - 1])
        return idx.reshape(-1, 2) if xy.ndim > 1 else idx

    def candidates(self, x, y):
        if (x < self.xy_min[0] or x > self.xy_max[0]
                or y < self.xy_min[1] or y > self.xy_max[1]):
            return np.empty(0, dtype=np.int64)
        idx = self._cell_of(np.array([x, y]))
        return self._cells[int(idx[0]) * self.ny + int(idx[1])]


def build_vertical_index(mesh):
    return VerticalRayIndex(mesh)


def _vertical_hits(tri_pts, nz, candidates, x, y):
    """z values and facing for all candidate triangles crossed by the
    vertical line through (x, y). Boundary (edge/vertex) hits count."""
    if len(candidates) == 0:
        return []
    t = tri_pts[candidates]
    ax, ay = t[:, 0, 0], t[:, 0, 1]
    bx, by = t[:, 1, 0], t[:, 1, 1]
    cx, cy = t[:, 2, 0], t[:, 2, 1]
    d = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
    ok = np.abs(d) > 1e-30  # vertical triangles cannot be hit by a vertical ray
    w0 = np.zeros_like(d)
    w1 = np.zeros_like(d)
    w0[ok] = ((by - cy) * (x - cx) + (cx - bx) * (y - cy))[ok] / d[ok]
    w1[ok] = ((cy - ay) * (x - cx) + (ax - cx) * (y - cy))[ok] / d[ok]
    w2 = 1.0 - w0 - w1
    eps = 1e-12
    inside = ok & (w0 >= -eps) & (w1 >= -eps) & (w2 >= -eps)
    if not inside.any():
        return []
    z = (w0 * t[:, 0, 2] + w1 * t[:, 1, 2] + w2 * t[:, 2, 2])[inside]
    which = candidates[inside]
    facing_top = nz[which] > 0
    out = []
    order = np.argsort(z, kind="stable")
    last_z = None
    for k in order:
        zk = float(z[k])
        if last_z is not None and abs(zk - last_z) <= Z_DEDUPE_TOL:
            continue  # duplicate hit on a shared edge
        last_z = zk
        out.append((zk, bool(facing_top[k]), int(which[k])))
    return out


def cast_vertical(index, mesh, query):
    """Closest surface point on the vertical line through query.

    Ties between a hit above and below are broken toward the hit above.
    Returns None when the vertical line misses the mesh.
    """
    x, y, qz = float(query[0]), float(query[1]), float(query[2])
    hits = _vertical_hits(index._tri_pts, index._nz, index.candidates(x, y), x, y)
    return _pick_hit(hits, x, y, qz)


def cast_vertical_brute(mesh, query):
    """Brute-force oracle: same contract as cast_vertical, all triangles."""
    x, y, qz = float(query[0]), float(query[1]), float(query[2])
    tri_pts = mesh.vertices[mesh.triangles]
    all_idx = np.arange(mesh.triangle_count, dtype=np.int64)
    hits = _vertical_hits(tri_pts, mesh.normals[:, 2], all_idx, x, y)
    return _pick_hit(hits, x, y, qz)


def _pick_hit(hits, x, y, qz):
    if not hits:
        return None
    best = None
    best_key = None
    for z, top, tri in hits:
        dist = abs(z - qz)
        above = z >= qz
        # ties broken toward the hit above
        key = (dist, 0 if above else 1)
        if best_key is None or key < best_key:
            best_key = key
            best = (z, top, tri)
    z, top, tri = best
    return SurfaceHit(point=(x, y, z), delta=z - qz,
                      facing="top" if top else "bottom", triangle=tri)


def cast_vertical_batch(index, xs, ys, qzs):
    """Vectorised casting for many query points.

    Returns (delta, facing_top, hit) arrays. Grouped by grid cell so each
    cell's triangles are tested against all of its points at once.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    qzs = np.asarray(qzs, dtype=np.float64)
    n = len(xs)
    delta = np.zeros(n)
    facing_top = np.zeros(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)

    inb = ((xs >= index.xy_min[0]) & (xs <= index.xy_max[0])
           & (ys >= index.xy_min[1]) & (ys <= index.xy_max[1]))
    if not inb.any():
        return delta, facing_top, hit
    ix = np.clip(((xs - index.xy_min[0]) / index.cell[0]).astype(np.int64),
                 0, index.nx - 1)
    iy = np.clip(((ys - index.xy_min[1]) / index.cell[1]).astype(np.int64),
                 0, index.ny - 1)
    cell_id = np.where(inb, ix * index.ny + iy, -1)
    order = np.argsort(cell_id, kind="stable")
    tri_pts = index._tri_pts
    nz = index._nz
    eps = 1e-12
    start = 0
    while start < n:
        cid = cell_id[order[start]]
        end = start
        while end < n and cell_id[order[end]] == cid:
            end += 1
        if cid >= 0:
            pts = order[start:end]
            cand = index._cells[cid]
            if len(cand):
                t = tri_pts[cand]
                px = xs[pts][:, None]
                py = ys[pts][:, None]
                ax, ay = t[None, :, 0, 0], t[None, :, 0, 1]
                bx, by = t[None, :, 1, 0], t[None, :, 1, 1]
                cx, cy = t[None, :, 2, 0], t[None, :, 2, 1]
                d = (by - cy) * (ax - cx) + (cx - bx) * (ay - cy)
                okd = np.abs(d) > 1e-30
                safe = np.where(okd, d, 1.0)
                w0 = ((by - cy) * (px - cx) + (cx - bx) * (py - cy)) / safe
                w1 = ((cy - ay) * (px - cx) + (ax - cx) * (py - cy)) / safe
                w2 = 1.0 - w0 - w1
                inside = okd & (w0 >= -eps) & (w1 >= -eps) & (w2 >= -eps)
                z = (w0 * t[None, :, 0, 2] + w1 * t[None, :, 1, 2]
                     + w2 * t[None, :, 2, 2])
                dz = z - qzs[pts][:, None]
                dist = np.where(inside, np.abs(dz), np.inf)
                # prefer the hit above on ties: subtract a tiny bias
                above_bias = np.where(dz >= 0, 0.0, Z_DEDUPE_TOL * 0.5)
                best = np.argmin(dist + above_bias, axis=1)
                rows = np.arange(len(pts))
                got = np.isfinite(dist[rows, best])
                sel = pts[got]
                bsel = best[got]
                delta[sel] = dz[rows[got], bsel]
                facing_top[sel] = nz[cand[bsel]] > 0
                hit[sel] = True
        start = end
    return delta, facing_top, hit
