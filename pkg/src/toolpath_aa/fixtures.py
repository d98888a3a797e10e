"""Deterministic synthetic fixtures: meshes, flat-sliced G-code for
heightfield solids, and the three-path splitting/ordering scene."""

from __future__ import annotations

import math

import numpy as np

from .gcode import PathVertex, PrinterProfile, Toolpath
from .geometry import build_mesh
from .ordering import SubPath, ConstraintGraph


# ---------------------------------------------------------------------------
# Meshes

def wedge_mesh(angle_deg=10.0, base=20.0, depth=10.0):
    """Right triangular prism: top plane z = x * tan(angle), knife edge at
    x = 0, vertical back face at x = base."""
    if angle_deg <= 0 or base <= 0 or depth <= 0:
        raise ValueError("wedge parameters must be positive")
    H = base * math.tan(math.radians(angle_deg))
    vertices = np.array([
        (0, 0, 0), (base, 0, 0), (base, 0, H),
        (0, depth, 0), (base, depth, 0), (base, depth, H),
    ], dtype=float)
    triangles = []

    def quad(a, b, c, d):
        triangles.append((a, b, c))
        triangles.append((a, c, d))

    quad(0, 2, 5, 3)                   # slope face
    quad(0, 3, 4, 1)                   # bottom z = 0
    quad(1, 4, 5, 2)                   # back face x = base
    triangles.append((0, 1, 2))        # side y = 0
    triangles.append((3, 5, 4))        # side y = depth
    return build_mesh(vertices, triangles)


def flat_box_mesh(lx=10.0, ly=10.0, height=1.2):
    if lx <= 0 or ly <= 0 or height <= 0:
        raise ValueError("box dimensions must be positive")
    v = [
        (0, 0, 0), (lx, 0, 0), (lx, ly, 0), (0, ly, 0),
        (0, 0, height), (lx, 0, height), (lx, ly, height), (0, ly, height),
    ]
    vertices = np.array(v, dtype=float)
    triangles = []

    def quad(a, b, c, d):
        triangles.append((a, b, c))
        triangles.append((a, c, d))

    quad(0, 3, 2, 1)   # bottom (down)
    quad(4, 5, 6, 7)   # top (up)
    quad(0, 1, 5, 4)   # y = 0
    quad(1, 2, 6, 5)   # x = lx
    quad(2, 3, 7, 6)   # y = ly
    quad(3, 0, 4, 7)   # x = 0
    return build_mesh(vertices, triangles)


def dome_mesh(radius=12.0, cap_height=3.0, extent=16.0, n=40):
    """Spherical-cap heightfield on a square base, closed underneath.

    z(x, y) = max(0, sqrt(R^2 - r^2) - (R - cap_height)) over a square of
    side `extent` centred on the cap apex.
    """
    if radius <= 0 or cap_height <= 0 or extent <= 0:
        raise ValueError("dome parameters must be positive")
    half = extent / 2.0
    base_z = radius - cap_height

    def zf(x, y):
        r2 = x * x + y * y
        if r2 >= radius * radius:
            return 0.0
        return max(0.0, math.sqrt(radius * radius - r2) - base_z)

    xs = np.linspace(-half, half, n + 1)
    ys = np.linspace(-half, half, n + 1)
    idx = {}
    verts = []
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            idx[(i, j)] = len(verts)
            verts.append((x, y, zf(x, y)))
    nb = len(verts)
    # four bottom corners for a coarse closed base
    corners = [(-half, -half, 0), (half, -half, 0), (half, half, 0),
               (-half, half, 0)]
    for c in corners:
        verts.append(c)
    triangles = []
    for j in range(n):
        for i in range(n):
            a = idx[(i, j)]
            b = idx[(i + 1, j)]
            c = idx[(i + 1, j + 1)]
            d = idx[(i, j + 1)]
            triangles.append((a, b, c))
            triangles.append((a, c, d))
    # base: two triangles (normal down); the grid boundary already sits at
    # z = 0 so the solid is closed up to the flat base plane
    triangles.append((nb, nb + 2, nb + 1))
    triangles.append((nb, nb + 3, nb + 2))
    return build_mesh(np.array(verts, dtype=float), triangles)


# ---------------------------------------------------------------------------
# Heightfield flat slicer (generates realistic flat G-code for fixtures)

def _scan_intervals(zf, y, x0, x1, z_plane, step=0.02):
    """Maximal x-intervals where zf(x, y) >= z_plane."""
    xs = np.arange(x0, x1 + step, step)
    inside = np.array([zf(x, y) >= z_plane for x in xs])
    spans = []
    start = None
    for k, flag in enumerate(inside):
        if flag and start is None:
            start = xs[k]
        elif not flag and start is not None:
            spans.append((start, xs[k - 1]))
            start = None
    if start is not None:
        spans.append((start, xs[-1]))
    return [(a, b) for a, b in spans if b - a > 1e-9]


def slice_heightfield(zf, bounds, profile, travel_f=120.0,
                      cross_hatch=False, max_layers=200, name="fixture"):
    """Flat-slice a heightfield solid into serpentine straight infill.

    Contours are taken at the slicing plane (base + s) of each layer, the
    standard mid-plane setup when s = h/2. Deposition z is the layer top;
    vertices are pre-spaced at most w apart; infill lines sit on a global
    grid. With cross_hatch the infill axis alternates 0/90 degrees per
    layer, the usual slicer pattern, which misaligns toolpaths across
    layers (and is what makes raised tracks overlap the layer above).
    Returns G-code text (absolute E, Marlin flavour).
    """
    (x0, x1), (y0, y1) = bounds
    h = profile.h
    s = profile.s
    w = profile.w
    lines = [
        f"; {name} flat-sliced for anti-aliasing fixtures",
        f"; layer thickness {h} slicing plane offset {s}",
        "G90",
        "M82",
        "G92 E0",
    ]
    e_accum = 0.0
    fil_area = profile.filament_area
    feed_word = None

    def emit_move(cmd, x=None, y=None, z=None, e=None, f=None):
        nonlocal feed_word
        parts = [cmd]
        if x is not None:
            parts.append(f"X{x:.5f}")
        if y is not None:
            parts.append(f"Y{y:.5f}")
        if z is not None:
            parts.append(f"Z{z:.5f}")
        if e is not None:
            parts.append(f"E{e:.5f}")
        if f is not None:
            word = f"F{f * 60:.1f}"
            if word != feed_word:
                parts.append(word)
                feed_word = word
        return " ".join(parts)

    def grid_lines(lo, hi):
        """Global w-grid line positions and covered widths within [lo, hi]."""
        rows = []
        k = math.floor(lo / w)
        c = (k + 0.5) * w
        while c < hi + w / 2.0 - 1e-9:
            clo = max(c - w / 2.0, lo)
            chi = min(c + w / 2.0, hi)
            if chi - clo > 1e-6:
                rows.append((min(max(c, lo + 1e-6), hi - 1e-6), chi - clo))
            c += w
        return rows

    layer = 0
    while layer < max_layers:
        z_plane = layer * h + s
        z_top = (layer + 1) * h
        along_y = cross_hatch and layer % 2 == 1
        any_path = False
        first_in_layer = True
        direction = 1
        if along_y:
            rows = grid_lines(x0, x1)
        else:
            rows = grid_lines(y0, y1)
        for (cc, wid) in rows:
            if along_y:
                spans = _scan_intervals(lambda t, _c=cc: zf(_c, t), cc,
                                        y0, y1, z_plane)
            else:
                spans = _scan_intervals(lambda t, _c=cc: zf(t, _c), cc,
                                        x0, x1, z_plane)
            for a, b in spans:
                any_path = True
                if first_in_layer:
                    lines.append(f";LAYER:{layer}")
                    lines.append(";TYPE:FILL")
                    first_in_layer = False
                ts = list(np.linspace(a, b, max(2, math.ceil((b - a) / w) + 1)))
                if direction < 0:
                    ts = ts[::-1]
                if along_y:
                    lines.append(emit_move("G0", x=cc, y=ts[0], z=z_top,
                                           f=travel_f))
                else:
                    lines.append(emit_move("G0", x=ts[0], y=cc, z=z_top,
                                           f=travel_f))
                prev = ts[0]
                for t in ts[1:]:
                    seg = abs(t - prev)
                    e_accum += seg * wid * h / fil_area
                    if along_y:
                        lines.append(emit_move("G1", x=cc, y=t, e=e_accum,
                                               f=profile.f_ini))
                    else:
                        lines.append(emit_move("G1", x=t, y=cc, e=e_accum,
                                               f=profile.f_ini))
                    prev = t
            if spans:
                direction *= -1
        if not any_path:
            break
        layer += 1
    lines.append("; end")
    return "\n".join(lines) + "\n"


def wedge_fixture(profile=None, angle_deg=10.0, base=20.0, depth=10.0,
                  cross_hatch=False):
    """Wedge mesh plus its flat-sliced program text.

    Default infill runs up the slope so displaced tracks can follow the
    plane exactly; cross_hatch alternates the infill axis per layer like
    production slicers, which misaligns tracks across layers."""
    profile = profile or PrinterProfile()
    mesh = wedge_mesh(angle_deg, base, depth)
    slope = math.tan(math.radians(angle_deg))

    def zf(x, y):
        if x < 0 or x > base or y < 0 or y > depth:
            return -1.0
        return x * slope

    gcode = slice_heightfield(zf, ((0.0, base), (0.0, depth)), profile,
                              cross_hatch=cross_hatch, name="wedge")
    return mesh, gcode


def flat_box_fixture(profile=None, lx=10.0, ly=10.0, height=1.2):
    profile = profile or PrinterProfile()
    mesh = flat_box_mesh(lx, ly, height)

    def zf(x, y):
        if x < 0 or x > lx or y < 0 or y > ly:
            return -1.0
        return height

    gcode = slice_heightfield(zf, ((0.0, lx), (0.0, ly)), profile,
                              name="flat_box")
    return mesh, gcode


def dome_fixture(profile=None, radius=12.0, cap_height=3.0, extent=16.0):
    profile = profile or PrinterProfile()
    mesh = dome_mesh(radius, cap_height, extent)
    base_z = radius - cap_height
    half = extent / 2.0

    def zf(x, y):
        if abs(x) > half or abs(y) > half:
            return -1.0
        r2 = x * x + y * y
        if r2 >= radius * radius:
            return 0.0
        return max(0.0, math.sqrt(radius * radius - r2) - base_z)

    gcode = slice_heightfield(zf, ((-half, half), (-half, half)), profile,
                              name="dome")
    return mesh, gcode


# ---------------------------------------------------------------------------
# Three-path splitting scene (geometry half)
#
# Three closed rectangular loops in a row; the middle one is a neighbour of
# both outer ones, the outer pair is too far apart to interfere. Height
# zones are chosen so splitting yields exactly seven subpaths:
# path1 -> {A, B}, path2 -> {C, D, E}, path3 -> {F, G}.

LAYER_Z = 0.6
DIP = -0.2
RISE = 0.2
GRID = 0.75    # shared x raster so nearest-point feet land on vertices


def _loop(points_with_delta, f=20.0, h=LAYER_Z):
    verts = []
    for (x, y, d) in points_with_delta:
        verts.append(PathVertex(x, y, h + d, e=0.1, f=f, delta=d))
    verts.append(PathVertex(verts[0].x, verts[0].y, verts[0].z, e=0.1, f=f,
                            delta=verts[0].delta))
    verts[0].e = 0.0
    tp = Toolpath(vertices=verts, closed=True, kind="infill", layer_index=0)
    tp.modified = any(v.delta != 0 for v in verts)
    return tp


def _grid_row(x0, x1, y, dz):
    """Vertices on the shared raster from x0 to x1 inclusive, with a
    per-x displacement function."""
    n = round(abs(x1 - x0) / GRID)
    step = GRID if x1 >= x0 else -GRID
    pts = []
    for k in range(n + 1):
        x = x0 + k * step
        pts.append((x, y, dz(x)))
    return pts


def three_paths_scene():
    """Three stacked closed loops whose height zones split them into seven
    subpaths with parent partition {A,B | C,D,E | F,G}.

    The middle loop neighbours both outer loops; the outer pair is too far
    apart to interfere. Zone boundaries sit on the shared vertex raster so
    the height comparison sees pure zone-against-zone pairs.
    """

    def d1(x):
        if 2.25 <= x <= 3.75:
            return DIP        # A's dip, below the start of path2's top
        if x >= 6.75:
            return RISE       # B's raised stretch, above path2's top
        return 0.0

    # path1: rectangle y in [1.4, 2.2]; zones on its bottom side
    p1_pts = _grid_row(0.0, 30.0, 1.4, d1)
    p1_pts.append((30.0, 2.2, 0.0))
    p1_pts += _grid_row(29.25, 0.0, 2.2, lambda x: 0.0)
    path1 = _loop(p1_pts)

    # path2: rectangle y in [-0.4, 0.4]; starts at the intended EC cut
    def d2_bottom(x):
        return RISE if x >= 20.25 else 0.0

    p2_pts = _grid_row(3.75, 0.0, 0.4, lambda x: 0.0)
    p2_pts.append((0.0, 0.0, DIP))               # CD: cap vertex, pushed down
    p2_pts.append((0.0, -0.4, 0.0))
    p2_pts += _grid_row(0.75, 29.25, -0.4, d2_bottom)
    p2_pts.append((30.0, -0.4, RISE))
    p2_pts.append((30.0, 0.4, 0.0))
    p2_pts += _grid_row(29.25, 4.5, 0.4, lambda x: 0.0)
    path2 = _loop(p2_pts)

    # path3: rectangle y in [-2.2, -1.4]; raised zone at the left end of
    # its top side
    def d3(x):
        return RISE if x <= 0.75 else 0.0

    p3_pts = _grid_row(30.0, 0.0, -1.4, d3)
    p3_pts.append((0.0, -2.2, 0.0))
    p3_pts += _grid_row(0.75, 29.25, -2.2, lambda x: 0.0)
    p3_pts.append((30.0, -2.2, 0.0))
    path3 = _loop(p3_pts)

    return [path1, path2, path3]


SCENE_CUTS = {
    "BA": (2.25, 1.4), "AB": (6.75, 1.4),
    "EC": (3.75, 0.4), "CD": (0.0, 0.0), "DE": (20.25, -0.4),
    "FG": (0.75, -1.4), "GF": (30.0, -1.4),
}


def label_scene_subpaths(subpaths):
    """Map the seven split subpaths onto their conventional names by
    parent and entry position."""
    by_parent = {}
    for sp in subpaths:
        by_parent.setdefault(sp.parent_id, []).append(sp)
    if sorted(len(v) for v in by_parent.values()) != [2, 2, 3]:
        raise ValueError(
            f"unexpected split: {[(k, len(v)) for k, v in by_parent.items()]}")
    labels = {}
    wanted = {
        "A": (0, "BA"), "B": (0, "AB"),
        "C": (1, "EC"), "D": (1, "CD"), "E": (1, "DE"),
        "F": (2, "GF"), "G": (2, "FG"),
    }
    for name, (pid, cut) in wanted.items():
        cx, cy = SCENE_CUTS[cut]
        best = min(by_parent[pid],
                   key=lambda sp: math.hypot(sp.entry[0] - cx,
                                             sp.entry[1] - cy))
        labels[name] = best
    if len({id(sp) for sp in labels.values()}) != 7:
        raise ValueError("subpath labelling is not a bijection")
    return labels


def make_fixture(kind, profile=None, **params):
    """Dispatch to the fixture generators.

    kind in {'wedge', 'flat_box', 'dome'} returns (mesh, gcode_text);
    'three_paths_scene' returns the three toolpaths of the splitting scene.
    """
    if kind == "wedge":
        return wedge_fixture(profile, **params)
    if kind == "flat_box":
        return flat_box_fixture(profile, **params)
    if kind == "dome":
        return dome_fixture(profile, **params)
    if kind == "three_paths_scene":
        return three_paths_scene(**params)
    raise ValueError(f"unknown fixture kind {kind!r}")


# ---------------------------------------------------------------------------
# Seven-node ordering scene (combinatorial half)
#
# Subpaths constructed directly with the entry/exit coincidence pattern of
# splitting a set of closed loops: consecutive subpaths of one parent share
# their cut point exactly; selected cross-parent cut points fall within
# the seam tolerance while the rest stay far apart.

ORDERING_SCENE_POINTS = {
    "BA": (2.0, 1.4, 0.4),
    "AB": (6.8, 1.4, 0.8),
    "EC": (4.0, 0.4, 0.6),
    "CD": (0.0, 0.0, 0.4),
    "DE": (8.5, -0.6, 0.8),
    "FG": (0.5, -1.6, 0.8),
    "GF": (30.0, -1.4, 0.6),
}

ORDERING_SCENE_STRUCTURE = [
    # label, parent id, entry point, exit point, mean height
    ("A", 0, "BA", "AB", 0.45),
    ("B", 0, "AB", "BA", 0.72),
    ("C", 1, "EC", "CD", 0.62),
    ("D", 1, "CD", "DE", 0.68),
    ("E", 1, "DE", "EC", 0.64),
    ("F", 2, "GF", "FG", 0.50),
    ("G", 2, "FG", "GF", 0.75),
]

ORDERING_SCENE_EDGES = [("A", "D"), ("F", "E"), ("E", "B"), ("C", "G"), ("F", "C")]

# seam weights for weighted mode: the DE cut sits in a concave notch
ORDERING_SCENE_WEIGHTS = {"DE": 1.2}


def ordering_scene():
    """Seven-node constraint graph with the entry/exit coincidences of
    split closed loops; returns (graph, labels)."""
    parents = {}
    subpaths = []
    labels = {}
    for k, (label, pid, entry_key, exit_key, height) in enumerate(ORDERING_SCENE_STRUCTURE):
        p_entry = ORDERING_SCENE_POINTS[entry_key]
        p_exit = ORDERING_SCENE_POINTS[exit_key]
        mid = tuple((a + b) / 2 for a, b in zip(p_entry, p_exit))
        verts = [
            PathVertex(*p_entry, e=0.0, f=20.0),
            PathVertex(mid[0], mid[1], height, e=0.1, f=20.0),
            PathVertex(*p_exit, e=0.1, f=20.0),
        ]
        parent = parents.get(pid)
        if parent is None:
            parent = Toolpath(vertices=[], closed=True, kind="infill",
                              layer_index=0, modified=True)
            parents[pid] = parent
        sp = SubPath(parent=parent, parent_id=pid, cycle=verts, start=0,
                     end=2, vertices=verts, modified=True,
                     first_is_cut=True, last_is_cut=True, index=k)
        sp.entry_weight = ORDERING_SCENE_WEIGHTS.get(entry_key, 1.5)
        sp.exit_weight = ORDERING_SCENE_WEIGHTS.get(exit_key, 1.5)
        subpaths.append(sp)
        labels[label] = k
    edges = [(labels[u], labels[v]) for u, v in ORDERING_SCENE_EDGES]
    return ConstraintGraph(nodes=subpaths, edges=edges), labels
