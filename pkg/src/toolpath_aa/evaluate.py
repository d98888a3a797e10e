"""Quantitative evaluation: surface error maps against the input mesh,
constant-feedrate print time estimates, and the critical surface angle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gcode import EOnly, Toolpath, Travel

VIS_CLAMP = 0.3   # mm, error map colour scale end


class EvaluationError(Exception):
    pass


def critical_angle(h, w):
    """Steepest surface slope (radians) the anti-aliasing can still track
    with track spacing w and layer thickness h: arctan(h / w)."""
    if h <= 0 or w <= 0:
        raise ValueError("h and w must be positive")
    return math.atan2(h, w)


# ---------------------------------------------------------------------------
# Print time

def estimate_print_time(program):
    """Constant-feedrate kinematics: sum of move length / feedrate over
    deposition, travel and retraction moves. No acceleration model, so
    estimates skew slightly fast on short segments."""
    total = 0.0
    x = y = z = None
    modal_f = None

    def axis_len(nx, ny, nz):
        nonlocal x, y, z
        dx = 0.0 if (nx is None or x is None) else nx - x
        dy = 0.0 if (ny is None or y is None) else ny - y
        dz = 0.0 if (nz is None or z is None) else nz - z
        if nx is not None:
            x = nx
        if ny is not None:
            y = ny
        if nz is not None:
            z = nz
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    def feed(f):
        nonlocal modal_f
        if f is not None:
            modal_f = f
        if not modal_f:
            raise EvaluationError("move with zero or unset feedrate")
        return modal_f

    events = list(program.prologue)
    for layer in program.layers:
        events.extend(layer.events)
    events.extend(program.epilogue)
    for ev in events:
        if isinstance(ev, Travel):
            dist = axis_len(ev.x, ev.y, ev.z)
            if dist > 0:
                total += dist / feed(ev.f)
            elif ev.f is not None:
                modal_f = ev.f
        elif isinstance(ev, EOnly):
            if ev.delta_e != 0:
                total += abs(ev.delta_e) / feed(ev.f)
            elif ev.f is not None:
                modal_f = ev.f
        elif isinstance(ev, Toolpath):
            verts = ev.vertices
            start = verts[0]
            dist = axis_len(start.x, start.y, start.z)
            if dist > 0:
                total += dist / feed(None)
            for v in verts[1:]:
                seg = axis_len(v.x, v.y, v.z)
                total += seg / feed(v.f)
    return total


# ---------------------------------------------------------------------------
# Printed track model

@dataclass
class PrintedTrack:
    """Rectangular-section track: segment endpoints with per-endpoint top
    and bottom heights, swept with width d in XY."""

    x1: float
    y1: float
    x2: float
    y2: float
    top1: float
    top2: float
    bot1: float
    bot2: float
    width: float

    def __post_init__(self):
        if self.top1 <= self.bot1 or self.top2 <= self.bot2:
            raise ValueError("track top must lie above track bottom")


def tracks_from_program(program, profile):
    """Track boxes of every extruding segment. Bottoms are the undisplaced
    flat tops minus the layer thickness (displacement never moves track
    bottoms)."""
    tracks = []
    for layer in program.layers:
        for path in layer.toolpaths():
            verts = path.vertices
            for a, b in zip(verts, verts[1:]):
                if b.e <= 0:
                    continue
                tracks.append(PrintedTrack(
                    x1=a.x, y1=a.y, x2=b.x, y2=b.y,
                    top1=a.z, top2=b.z,
                    bot1=(a.z - a.delta) - profile.h,
                    bot2=(b.z - b.delta) - profile.h,
                    width=profile.d,
                ))
    return tracks


def track_distance(track, px, py, pz):
    """Distance from a point to the track box (0 inside). The box has
    vertical sides; the top/bottom interpolate linearly along the
    segment."""
    ux = track.x2 - track.x1
    uy = track.y2 - track.y1
    length = math.hypot(ux, uy)
    if length < 1e-12:
        s = 0.0
        ux, uy = 1.0, 0.0
    else:
        ux /= length
        uy /= length
        s = (px - track.x1) * ux + (py - track.y1) * uy
    s_star = min(max(s, 0.0), length)
    t = (px - track.x1) * (-uy) + (py - track.y1) * ux
    t_star = min(max(t, -track.width / 2.0), track.width / 2.0)
    frac = s_star / length if length > 1e-12 else 0.0
    top = track.top1 + (track.top2 - track.top1) * frac
    bot = track.bot1 + (track.bot2 - track.bot1) * frac
    z_star = min(max(pz, bot), top)
    cx = track.x1 + ux * s_star + (-uy) * t_star
    cy = track.y1 + uy * s_star + ux * t_star
    return math.dist((px, py, pz), (cx, cy, z_star))


class _TrackGrid:
    def __init__(self, tracks, cell=2.0):
        self.tracks = tracks
        self.cell = cell
        self.bins = {}
        for k, tr in enumerate(tracks):
            pad = tr.width
            x0 = min(tr.x1, tr.x2) - pad
            x1 = max(tr.x1, tr.x2) + pad
            y0 = min(tr.y1, tr.y2) - pad
            y1 = max(tr.y1, tr.y2) + pad
            for ix in range(int(math.floor(x0 / cell)), int(math.floor(x1 / cell)) + 1):
                for iy in range(int(math.floor(y0 / cell)), int(math.floor(y1 / cell)) + 1):
                    self.bins.setdefault((ix, iy), []).append(k)

    def nearest_distance(self, px, py, pz):
        cx = int(math.floor(px / self.cell))
        cy = int(math.floor(py / self.cell))
        if not self.bins:
            return math.inf
        keys = self.bins.keys()
        max_ring = max(max(abs(ix - cx), abs(iy - cy)) for ix, iy in keys)
        best = math.inf
        seen = set()
        for ring in range(0, max_ring + 1):
            for ix in range(cx - ring, cx + ring + 1):
                for iy in range(cy - ring, cy + ring + 1):
                    if max(abs(ix - cx), abs(iy - cy)) != ring:
                        continue
                    for k in self.bins.get((ix, iy), ()):
                        if k in seen:
                            continue
                        seen.add(k)
                        d = track_distance(self.tracks[k], px, py, pz)
                        if d < best:
                            best = d
            # cells beyond this ring lie at least ring*cell away
            if best <= ring * self.cell:
                return best
        return best


@dataclass
class ErrorMap:
    points: np.ndarray            # (n, 3) sample points on the mesh
    normals: np.ndarray           # (n, 3) triangle normal per sample
    distances: np.ndarray         # (n,) unclamped distance to nearest track
    samples_per_mm2: float
    seed: int
    clamp: float = VIS_CLAMP

    def summary(self):
        d = self.distances
        return {
            "samples": int(len(d)),
            "mean_mm": float(d.mean()),
            "max_mm": float(d.max()),
            "p50_mm": float(np.percentile(d, 50)),
            "p95_mm": float(np.percentile(d, 95)),
            "p99_mm": float(np.percentile(d, 99)),
            "samples_per_mm2": self.samples_per_mm2,
            "seed": self.seed,
            "clamp_mm": self.clamp,
        }

    def export_csv(self, path):
        with open(path, "w") as f:
            f.write("x,y,z,distance_mm\n")
            for p, d in zip(self.points, self.distances):
                f.write(f"{p[0]:.5f},{p[1]:.5f},{p[2]:.5f},{d:.6f}\n")

    def export_ply(self, path):
        """Point cloud with a linear blue (0.0) to red (0.3 mm) ramp."""
        n = len(self.points)
        t = np.clip(self.distances / self.clamp, 0.0, 1.0)
        red = (t * 255).astype(np.uint8)
        blue = ((1.0 - t) * 255).astype(np.uint8)
        with open(path, "w") as f:
            f.write("ply\nformat ascii 1.0\n")
            f.write(f"comment colormap linear blue->red over 0.0..{self.clamp} mm\n")
            f.write(f"comment seed {self.seed} density {self.samples_per_mm2}\n")
            f.write(f"element vertex {n}\n")
            f.write("property float x\nproperty float y\nproperty float z\n")
            f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
            f.write("end_header\n")
            for p, r, b in zip(self.points, red, blue):
                f.write(f"{p[0]:.5f} {p[1]:.5f} {p[2]:.5f} {r} 0 {b}\n")


def sample_mesh_surface(mesh, samples_per_mm2=50.0, seed=0):
    """Stratified per-triangle area sampling; returns (points, normals)."""
    rng = np.random.default_rng(seed)
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    counts = np.maximum(1, np.round(areas * samples_per_mm2)).astype(int)
    pts = []
    nrms = []
    for i, n in enumerate(counts):
        r1 = rng.random(n)
        r2 = rng.random(n)
        flip = r1 + r2 > 1.0
        r1[flip] = 1.0 - r1[flip]
        r2[flip] = 1.0 - r2[flip]
        p = a[i] + np.outer(r1, b[i] - a[i]) + np.outer(r2, c[i] - a[i])
        pts.append(p)
        nrms.append(np.repeat(mesh.normals[i][None, :], n, axis=0))
    return np.vstack(pts), np.vstack(nrms)


def error_map(mesh, tracks, samples_per_mm2=50.0, seed=0, brute=False):
    """Distance from surface samples to the nearest printed track."""
    if not tracks:
        raise EvaluationError("no printed tracks to evaluate")
    points, normals = sample_mesh_surface(mesh, samples_per_mm2, seed)
    dists = np.empty(len(points))
    if brute:
        for i, p in enumerate(points):
            dists[i] = min(track_distance(tr, p[0], p[1], p[2])
                           for tr in tracks)
    else:
        grid = _TrackGrid(tracks)
        for i, p in enumerate(points):
            dists[i] = grid.nearest_distance(p[0], p[1], p[2])
    return ErrorMap(points=points, normals=normals, distances=dists,
                    samples_per_mm2=samples_per_mm2, seed=seed)
