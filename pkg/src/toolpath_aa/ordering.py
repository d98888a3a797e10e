"""Nozzle interference avoidance: neighbour detection, height-monotone
path splitting, the height constraint graph, and branch-and-bound search
for a topological order that minimises (weighted) seam count.

Heights are compared with a tie tolerance; a pair of subpaths whose mean
height difference stays within it is independent. Gap bookkeeping counts
each gap location once: the free-transition test uses the coarse
tolerance eps_gap, while set membership uses exact location identity
(1e-6): revisiting a cut point is free, distinct nearby cuts still count.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

TIE_TOL = 1e-6          # mm, height ties below this create no constraint
MATCH_TOL = 1e-6        # mm, two gap locations closer than this are the same


class OrderingError(Exception):
    pass


# ---------------------------------------------------------------------------
# Geometry helpers (XY plane)

def _seg_point_dist2(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 < 1e-18:
        t = 0.0
    else:
        t = ((px - ax) * dx + (py - ay) * dy) / L2
        t = min(max(t, 0.0), 1.0)
    cx, cy = ax + t * dx, ay + t * dy
    return (px - cx) ** 2 + (py - cy) ** 2, t


def _seg_seg_dist(a1, a2, b1, b2):
    best = math.inf
    for p, (s1, s2) in ((a1, (b1, b2)), (a2, (b1, b2)),
                        (b1, (a1, a2)), (b2, (a1, a2))):
        d2, _ = _seg_point_dist2(p[0], p[1], s1[0], s1[1], s2[0], s2[1])
        best = min(best, d2)
    return math.sqrt(best)


def polyline_min_distance(verts_a, verts_b):
    """Closest XY approach between two polylines (vertex lists)."""
    best = math.inf
    for i in range(len(verts_a) - 1):
        a1 = verts_a[i].xy()
        a2 = verts_a[i + 1].xy()
        for j in range(len(verts_b) - 1):
            b1 = verts_b[j].xy()
            b2 = verts_b[j + 1].xy()
            best = min(best, _seg_seg_dist(a1, a2, b1, b2))
            if best == 0.0:
                return 0.0
    if len(verts_a) == 1 or len(verts_b) == 1:
        for va in verts_a:
            for vb in verts_b:
                best = min(best, math.dist(va.xy(), vb.xy()))
    return best


def nearest_on_polyline(x, y, verts):
    """Nearest point on the polyline: (dist, z at point, (px, py),
    endpoint_hit) where endpoint_hit is 0/-1/+1 for interior/first/last."""
    best = (math.inf, 0.0, (0.0, 0.0), 0)
    n = len(verts)
    for i in range(n - 1):
        a, b = verts[i], verts[i + 1]
        d2, t = _seg_point_dist2(x, y, a.x, a.y, b.x, b.y)
        if d2 < best[0]:
            z = a.z + (b.z - a.z) * t
            px = a.x + (b.x - a.x) * t
            py = a.y + (b.y - a.y) * t
            endpoint = 0
            if i == 0 and t <= 0.0:
                endpoint = -1
            elif i == n - 2 and t >= 1.0:
                endpoint = +1
            best = (d2, z, (px, py), endpoint)
    return math.sqrt(best[0]), best[1], best[2], best[3]


# ---------------------------------------------------------------------------
# Threshold and neighbour pairs

def interference_threshold(profile, dh=None):
    """Nozzle interference radius: (tau + d)/2 + dh * cot(alpha).

    dh defaults to the layer thickness (a conservative bound: the
    anti-aliasing never displaces a path by more than that)."""
    if dh is None:
        dh = profile.h
    if dh < 0:
        raise ValueError("height difference must be non-negative")
    if profile.alpha <= 0:
        raise ValueError("alpha = 0 leaves an infinite flange, no threshold")
    cot = 1.0 / math.tan(profile.alpha)
    return (profile.tau + profile.d) / 2.0 + dh * cot


def find_neighbors(paths, eps):
    """Unordered index pairs whose closest XY approach is below eps.

    Pairs where neither path was modified are skipped: unmodified paths
    bypass ordering entirely.
    """
    pairs = []
    for i in range(len(paths)):
        for j in range(i + 1, len(paths)):
            if not (paths[i].modified or paths[j].modified):
                continue
            if polyline_min_distance(paths[i].vertices, paths[j].vertices) < eps:
                pairs.append((i, j))
    return pairs


# ---------------------------------------------------------------------------
# Splitting

@dataclass
class SubPath:
    parent: object            # Toolpath
    parent_id: int
    cycle: list               # the parent's (possibly rotated) vertex list
    start: int                # vertex range [start, end] within cycle
    end: int
    vertices: list
    modified: bool
    first_is_cut: bool
    last_is_cut: bool
    index: int = -1
    orientation: float = 1.0  # +1 CCW interior-left, -1 CW
    entry_weight: float = 1.5
    exit_weight: float = 1.5

    @property
    def entry(self):
        return self.vertices[0].xyz()

    @property
    def exit(self):
        return self.vertices[-1].xyz()

    @property
    def height(self):
        return sum(v.z for v in self.vertices) / len(self.vertices)

    def __len__(self):
        return len(self.vertices)


def _unique_cycle(path):
    """Vertex list with the closing duplicate folded into the first
    vertex's segment extrusion."""
    verts = list(path.vertices)
    if path.closed and len(verts) > 2 \
            and math.dist(verts[0].xyz(), verts[-1].xyz()) < 1e-6:
        closing = verts.pop()
        verts[0] = _clone_vertex(verts[0], e=closing.e)
    return verts


def _clone_vertex(v, e=None):
    from .gcode import PathVertex
    return PathVertex(v.x, v.y, v.z, v.e if e is None else e, v.f, v.delta)


def _signals(path_verts, other_verts, eps):
    """Per-vertex height sign against the nearest point of the neighbour:
    +1/-1 strict, 0 tie, None out of range."""
    out = []
    for v in path_verts:
        dist, z, _pt, _ep = nearest_on_polyline(v.x, v.y, other_verts)
        if dist >= eps:
            out.append(None)
        else:
            dz = v.z - z
            if dz > TIE_TOL:
                out.append(+1)
            elif dz < -TIE_TOL:
                out.append(-1)
            else:
                out.append(0)
    return out


def _cuts_from_signals(signals, closed):
    """Vertex indices where the strict sign flips, carrying the previous
    strict sign across ties and out-of-range stretches. The cut lands on
    the first vertex of each new strict run."""
    strict = [(i, s) for i, s in enumerate(signals) if s in (1, -1)]
    if len(strict) < 2:
        return set()
    cuts = set()
    if closed:
        prev_sign = strict[-1][1]
        for i, s in strict:
            if s != prev_sign:
                cuts.add(i)
            prev_sign = s
    else:
        prev_sign = strict[0][1]
        for i, s in strict[1:]:
            if s != prev_sign:
                cuts.add(i)
            prev_sign = s
    return cuts


def _orientation(verts):
    area = 0.0
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i].xy()
        x2, y2 = verts[(i + 1) % n].xy()
        area += x1 * y2 - x2 * y1
    return 1.0 if area >= 0 else -1.0


def split_paths(paths, neighbor_pairs, eps):
    """Cut every path at the vertices where its height relation to some
    neighbour flips sign, so each resulting subpath is consistently
    above, below, or tied with each neighbour along its whole extent."""
    neighbor_map = {}
    for i, j in neighbor_pairs:
        neighbor_map.setdefault(i, []).append(j)
        neighbor_map.setdefault(j, []).append(i)

    subpaths = []
    for pid, path in enumerate(paths):
        cycle = _unique_cycle(path)
        cuts = set()
        for q in neighbor_map.get(pid, ()):
            sig = _signals(cycle, paths[q].vertices, eps)
            cuts |= _cuts_from_signals(sig, path.closed)
        subpaths.extend(_materialise(path, pid, cycle, sorted(cuts)))
    for k, sp in enumerate(subpaths):
        sp.index = k
    return subpaths


def _materialise(path, pid, cycle, cuts):
    orientation = _orientation(cycle) if path.closed else 1.0
    if not cuts:
        return [SubPath(parent=path, parent_id=pid, cycle=cycle,
                        start=0, end=len(cycle) - 1,
                        vertices=list(cycle) + ([cycle[0]] if path.closed else []),
                        modified=path.modified,
                        first_is_cut=False, last_is_cut=False,
                        orientation=orientation)]
    out = []
    if path.closed:
        n = len(cycle)
        rotated = cycle[cuts[0]:] + cycle[:cuts[0]]
        shifted = [(c - cuts[0]) % n for c in cuts]
        shifted.sort()
        boundaries = shifted + [n]
        for a, b in zip(boundaries, boundaries[1:]):
            verts = rotated[a:b + 1] if b < n else rotated[a:] + [rotated[0]]
            out.append(SubPath(parent=path, parent_id=pid, cycle=rotated,
                               start=a, end=b % n, vertices=verts,
                               modified=path.modified,
                               first_is_cut=True, last_is_cut=True,
                               orientation=orientation))
    else:
        boundaries = [0] + list(cuts) + [len(cycle) - 1]
        for k, (a, b) in enumerate(zip(boundaries, boundaries[1:])):
            if b <= a:
                continue
            out.append(SubPath(parent=path, parent_id=pid, cycle=cycle,
                               start=a, end=b, vertices=cycle[a:b + 1],
                               modified=path.modified,
                               first_is_cut=(k > 0),
                               last_is_cut=(b < len(cycle) - 1),
                               orientation=orientation))
    return out


# ---------------------------------------------------------------------------
# Height comparison and the constraint graph

def compare_heights(sa, sb, eps):
    """Mean signed height difference (a minus b) over nearest-point pairs
    within eps. Pairs sourced at a cut vertex, or whose nearest point
    lands on the other subpath's cut endpoint, are skipped: a shared cut
    vertex belongs to two subpaths and would smear one pair's relation
    into the other."""
    total = 0.0
    count = 0
    for src, dst, sign in ((sa, sb, +1.0), (sb, sa, -1.0)):
        verts = src.vertices
        for vi, v in enumerate(verts):
            if vi == 0 and src.first_is_cut:
                continue
            if vi == len(verts) - 1 and src.last_is_cut:
                continue
            dist, z, pt, endpoint = nearest_on_polyline(v.x, v.y, dst.vertices)
            if dist >= eps:
                continue
            if endpoint == -1 and dst.first_is_cut:
                continue
            if endpoint == +1 and dst.last_is_cut:
                continue
            total += sign * (v.z - z)
            count += 1
    if count == 0:
        return None
    return total / count


@dataclass
class ConstraintGraph:
    nodes: list
    edges: list = field(default_factory=list)   # (u, v): u prints before v

    def successors(self, u):
        return [v for (a, v) in self.edges if a == u]

    def in_degrees(self):
        deg = [0] * len(self.nodes)
        for _, v in self.edges:
            deg[v] += 1
        return deg


def build_constraint_graph(subpaths, eps, _resplit_budget=1):
    """Edge u -> v whenever u and v come within eps and u is decisively
    lower: the lower subpath must print first. Only modified subpaths of
    distinct parents are constrained. The result is checked acyclic."""
    graph = _build_graph_once(subpaths, eps)
    cycle = _find_cycle(graph)
    if cycle is None:
        return graph
    if _resplit_budget > 0:
        repaired = _resplit_cycle(subpaths, cycle)
        if repaired is not None:
            return build_constraint_graph(repaired, eps,
                                          _resplit_budget=_resplit_budget - 1)
    names = " -> ".join(str(i) for i in cycle)
    raise OrderingError(f"height constraint graph has a cycle: {names}")


def _build_graph_once(subpaths, eps):
    graph = ConstraintGraph(nodes=subpaths)
    n = len(subpaths)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = subpaths[i], subpaths[j]
            if not (a.modified and b.modified):
                continue
            if a.parent_id == b.parent_id:
                continue
            if polyline_min_distance(a.vertices, b.vertices) >= eps:
                continue
            mean = compare_heights(a, b, eps)
            if mean is None or abs(mean) <= TIE_TOL:
                continue
            if mean < 0:
                graph.edges.append((i, j))
            else:
                graph.edges.append((j, i))
    return graph


def _find_cycle(graph):
    n = len(graph.nodes)
    indeg = graph.in_degrees()
    queue = [i for i in range(n) if indeg[i] == 0]
    seen = 0
    succ = {}
    for u, v in graph.edges:
        succ.setdefault(u, []).append(v)
    while queue:
        u = queue.pop()
        seen += 1
        for v in succ.get(u, ()):
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    if seen == n:
        return None
    remaining = [i for i in range(n) if indeg[i] > 0]
    # walk successors within the remaining set until a repeat
    cur = remaining[0]
    seen_order = []
    seen_set = set()
    while cur not in seen_set:
        seen_set.add(cur)
        seen_order.append(cur)
        nxt = [v for v in succ.get(cur, ()) if indeg[v] > 0]
        if not nxt:
            break
        cur = nxt[0]
    if cur in seen_set:
        k = seen_order.index(cur)
        return seen_order[k:] + [cur]
    return remaining


def _resplit_cycle(subpaths, cycle):
    """Split the tallest cycle member at its extremal-height vertex; this
    resolves cycles born from near-tie comparisons."""
    pick = max(cycle[:-1], key=lambda i: max(v.z for v in subpaths[i].vertices))
    sp = subpaths[pick]
    if len(sp.vertices) < 3:
        return None
    interior = range(1, len(sp.vertices) - 1)
    cut = max(interior, key=lambda k: sp.vertices[k].z)
    left = SubPath(parent=sp.parent, parent_id=sp.parent_id, cycle=sp.cycle,
                   start=sp.start, end=sp.start + cut,
                   vertices=sp.vertices[:cut + 1], modified=sp.modified,
                   first_is_cut=sp.first_is_cut, last_is_cut=True,
                   orientation=sp.orientation)
    right = SubPath(parent=sp.parent, parent_id=sp.parent_id, cycle=sp.cycle,
                    start=sp.start + cut, end=sp.end,
                    vertices=sp.vertices[cut:], modified=sp.modified,
                    first_is_cut=True, last_is_cut=sp.last_is_cut,
                    orientation=sp.orientation)
    out = subpaths[:pick] + [left, right] + subpaths[pick + 1:]
    for k, s in enumerate(out):
        s.index = k
    return out


# ---------------------------------------------------------------------------
# Seam costs

def gap_cost(theta):
    """Visibility weight of a seam: 1 + theta / 2pi, theta the angle
    opening to the model's outside at the gap."""
    if theta < 0 or theta > 2 * math.pi:
        warnings.warn(f"exterior angle {theta} clamped into [0, 2pi]")
        theta = min(max(theta, 0.0), 2 * math.pi)
    return 1.0 + theta / (2 * math.pi)


def exterior_angle(path, vertex_index):
    """Angle opening to the outside of the model at a path vertex.

    Straight walls give pi, convex corners more, concave notches less.
    Open-path endpoints default to pi.
    """
    verts = _unique_cycle(path) if path.closed else list(path.vertices)
    n = len(verts)
    if not path.closed and (vertex_index == 0 or vertex_index == n - 1):
        return math.pi
    orientation = _orientation(verts) if path.closed else 1.0
    return _exterior_angle_at(verts, vertex_index, orientation,
                              closed=path.closed)


def _exterior_angle_at(verts, i, orientation, closed):
    n = len(verts)
    prev_pt = verts[(i - 1) % n] if closed else verts[i - 1]
    cur = verts[i]
    next_pt = verts[(i + 1) % n] if closed else verts[i + 1]
    ax, ay = cur.x - prev_pt.x, cur.y - prev_pt.y
    bx, by = next_pt.x - cur.x, next_pt.y - cur.y
    la = math.hypot(ax, ay)
    lb = math.hypot(bx, by)
    if la < 1e-12 or lb < 1e-12:
        return math.pi
    turn = math.atan2(ax * by - ay * bx, ax * bx + ay * by) * orientation
    return math.pi + turn


def assign_seam_weights(subpaths):
    """Precompute the weighted seam cost at every subpath entry and exit."""
    for sp in subpaths:
        sp.entry_weight = _endpoint_weight(sp, 0)
        sp.exit_weight = _endpoint_weight(sp, len(sp.vertices) - 1)
    return subpaths


def _endpoint_weight(sp, vi):
    cycle = sp.cycle
    n = len(cycle)
    closed = sp.parent.closed
    idx = (sp.start + vi) % n if closed else sp.start + vi
    if not closed and (idx == 0 or idx == len(cycle) - 1):
        return gap_cost(math.pi)
    theta = _exterior_angle_at(cycle, idx, sp.orientation, closed)
    return gap_cost(theta)


# ---------------------------------------------------------------------------
# Gap bookkeeping

class GapSet:
    """Locations of gaps already introduced; a location is counted once.

    Membership matching is by location identity (MATCH_TOL): distinct cut
    points a few millimetres apart are distinct gaps even when the free
    transition tolerance would pair them.
    """

    def __init__(self, match_tol=MATCH_TOL):
        self.match_tol = match_tol
        self.points = []

    def __contains__(self, p):
        return any(math.dist(p, q) <= self.match_tol for q in self.points)

    def add(self, p):
        if p not in self:
            self.points.append(p)
            return True
        return False

    def pop(self, k):
        del self.points[k:]

    def __len__(self):
        return len(self.points)


# ---------------------------------------------------------------------------
# Order search

@dataclass
class OrderResult:
    order: list               # SubPath sequence, unmodified first
    cost: float
    gap_locations: list
    explored_orders: int
    expansions: int
    suboptimal: bool
    wall_time: float

    def report(self, graph):
        return {
            "subpaths": len(graph.nodes),
            "edges": len(graph.edges),
            "orders_considered": self.explored_orders,
            "best_cost": self.cost,
            "gaps": len(self.gap_locations),
            "gap_locations": [list(map(float, p)) for p in self.gap_locations],
            "suboptimal": self.suboptimal,
            "wall_time_s": self.wall_time,
            "expansions": self.expansions,
        }


def order_paths(graph, eps_gap, weighted=False, max_expansions=10_000_000):
    """Minimal-seam topological order of the constraint graph.

    Unmodified subpaths are emitted first in their original order and do
    not enter the objective; the branch and bound then minimises
    entry gap + transition gaps + exit gap over the modified nodes, with
    each gap location counted once.
    """
    t0 = time.perf_counter()
    nodes = graph.nodes
    modified = [i for i, sp in enumerate(nodes) if sp.modified]
    prefix = [sp for sp in nodes if not sp.modified]
    if not modified:
        return OrderResult(order=prefix, cost=0.0, gap_locations=[],
                           explored_orders=1, expansions=0, suboptimal=False,
                           wall_time=time.perf_counter() - t0)

    mset = set(modified)
    succ = {i: [] for i in modified}
    indeg = {i: 0 for i in modified}
    for u, v in graph.edges:
        if u in mset and v in mset:
            succ[u].append(v)
            indeg[v] += 1

    result = _search(nodes, modified, succ, indeg, eps_gap, not weighted,
                     max_expansions)
    order_sps = prefix + [nodes[i] for i in result["order"]]
    return OrderResult(order=order_sps, cost=result["cost"],
                       gap_locations=result["gaps"],
                       explored_orders=result["orders"],
                       expansions=result["expansions"],
                       suboptimal=result["capped"],
                       wall_time=time.perf_counter() - t0)


class _Locations:
    """Exact-location ids for subpath endpoints plus a pairwise
    near-within-eps_gap matrix, so the search never recomputes distances."""

    def __init__(self, nodes, modified, eps_gap):
        self.points = []
        self.entry_loc = {}
        self.exit_loc = {}
        key_to_id = {}
        for i in modified:
            for which, p in (("entry", nodes[i].entry),
                             ("exit", nodes[i].exit)):
                key = (round(p[0], 6), round(p[1], 6), round(p[2], 6))
                loc = key_to_id.get(key)
                if loc is None:
                    loc = len(self.points)
                    key_to_id[key] = loc
                    self.points.append(p)
                if which == "entry":
                    self.entry_loc[i] = loc
                else:
                    self.exit_loc[i] = loc
        n = len(self.points)
        self.near = [[False] * n for _ in range(n)]
        for a in range(n):
            for b in range(n):
                self.near[a][b] = math.dist(self.points[a],
                                            self.points[b]) <= eps_gap


def _search(nodes, modified, succ, indeg, eps_gap, unweighted, max_expansions):
    best = {"cost": math.inf, "order": None, "gaps": None}
    counters = {"expansions": 0, "orders": 0, "capped": False}
    locs = _Locations(nodes, modified, eps_gap)
    near = locs.near
    entry_loc = locs.entry_loc
    exit_loc = locs.exit_loc
    in_gaps = [False] * len(locs.points)
    gap_list = []
    order = []
    indeg = dict(indeg)
    weight_of = {}
    for i in modified:
        weight_of[("entry", i)] = 1.0 if unweighted else nodes[i].entry_weight
        weight_of[("exit", i)] = 1.0 if unweighted else nodes[i].exit_weight

    def charge(loc, weight):
        if in_gaps[loc]:
            return 0.0
        in_gaps[loc] = True
        gap_list.append(loc)
        return weight

    def pop_gaps(mark):
        while len(gap_list) > mark:
            in_gaps[gap_list.pop()] = False

    remaining = set(modified)

    def lower_bound(prev):
        """Admissible: a remaining entry gap can only be avoided by an
        exit within eps_gap immediately before it (the previous exit or a
        remaining exit); a remaining exit gap only by a remaining entry
        after it. Locations already in the gap set are free; each
        location contributes at most once."""
        prev_exit = exit_loc[prev] if prev is not None else None
        prev_w = weight_of[("exit", prev)] if prev is not None else 0.0
        entry_ids = {}
        exit_ids = {}
        loc_weight = {}
        for i in remaining:
            le = entry_loc[i]
            lx = exit_loc[i]
            entry_ids[le] = True
            exit_ids[lx] = True
            for loc, w in ((le, weight_of[("entry", i)]),
                           (lx, weight_of[("exit", i)])):
                if loc not in loc_weight or w < loc_weight[loc]:
                    loc_weight[loc] = w
        exit_list = list(exit_ids)
        entry_list = list(entry_ids)
        bound = 0.0
        for loc, w in loc_weight.items():
            if in_gaps[loc]:
                continue
            row = near[loc]
            entry_ok = True
            if loc in entry_ids:
                entry_ok = ((prev_exit is not None and row[prev_exit])
                            or any(row[q] for q in exit_list))
            exit_ok = True
            if loc in exit_ids:
                exit_ok = any(row[q] for q in entry_list)
            if entry_ok and exit_ok:
                continue
            if loc == prev_exit:
                # the pending exit of the placed node may pay this
                # location first at its own (possibly lower) weight
                w = min(w, prev_w)
            bound += w
        return bound

    def dfs(cost, prev):
        if counters["capped"]:
            return
        counters["expansions"] += 1
        if counters["expansions"] > max_expansions:
            counters["capped"] = True
            return
        if not remaining:
            mark = len(gap_list)
            final = cost + charge(exit_loc[prev], weight_of[("exit", prev)])
            counters["orders"] += 1
            if final < best["cost"]:
                best["cost"] = final
                best["order"] = list(order)
                best["gaps"] = [locs.points[g] for g in gap_list]
            pop_gaps(mark)
            return
        if cost + lower_bound(prev) >= best["cost"]:
            return
        ready = [i for i in remaining if indeg[i] == 0]
        prev_exit = exit_loc[prev] if prev is not None else None

        def sort_key(i):
            matches = prev_exit is not None and near[entry_loc[i]][prev_exit]
            return (0 if matches else 1, nodes[i].height, i)

        for i in sorted(ready, key=sort_key):
            mark = len(gap_list)
            added = 0.0
            if prev is None:
                added += charge(entry_loc[i], weight_of[("entry", i)])
            elif not near[prev_exit][entry_loc[i]]:
                added += charge(exit_loc[prev], weight_of[("exit", prev)])
                added += charge(entry_loc[i], weight_of[("entry", i)])
            order.append(i)
            remaining.discard(i)
            for v in succ[i]:
                indeg[v] -= 1
            dfs(cost + added, i)
            for v in succ[i]:
                indeg[v] += 1
            remaining.add(i)
            order.pop()
            pop_gaps(mark)
            if counters["capped"] or best["cost"] <= 1.0:
                return

    dfs(0.0, None)
    if best["order"] is None:
        # cap hit before any complete order: finish greedily, ignoring cost
        indeg2 = dict(indeg)
        rem = set(modified)
        seq = []
        while rem:
            ready = sorted(i for i in rem if indeg2[i] == 0)
            i = ready[0]
            seq.append(i)
            rem.discard(i)
            for v in succ[i]:
                indeg2[v] -= 1
        cost, locs_pts = _order_cost(nodes, seq, eps_gap, unweighted)
        best.update(cost=cost, order=seq, gaps=locs_pts)
    return {"cost": best["cost"], "order": best["order"],
            "gaps": best["gaps"], "orders": counters["orders"],
            "expansions": counters["expansions"], "capped": counters["capped"]}


def _order_cost(nodes, seq, eps_gap, unweighted):
    gaps = GapSet()
    cost = 0.0

    def charge(point, weight):
        if point in gaps:
            return 0.0
        gaps.add(point)
        return 1.0 if unweighted else weight

    prev = None
    for i in seq:
        sp = nodes[i]
        if prev is None:
            cost += charge(sp.entry, sp.entry_weight)
        elif math.dist(nodes[prev].exit, sp.entry) > eps_gap:
            cost += charge(nodes[prev].exit, nodes[prev].exit_weight)
            cost += charge(sp.entry, sp.entry_weight)
        prev = i
    if prev is not None:
        cost += charge(nodes[prev].exit, nodes[prev].exit_weight)
    return cost, list(gaps.points)


def relink_travels(layer, ordered_subpaths, eps_gap, travel_f):
    """Rebuild a layer's event list from an ordered subpath sequence.

    Non-motion lines stay at the head in their original order; original
    travels and retractions are dropped (the new sequence regenerates
    motion). Transitions within eps_gap link up without a rapid (no
    extrusion pause at a hidden seam); larger gaps get a rapid travel.
    Either way the travel's Z is already the destination's displaced
    height.
    """
    from .gcode import EOnly, Toolpath, Travel

    head = [ev for ev in layer.events
            if not isinstance(ev, (Toolpath, Travel, EOnly))]
    events = list(head)
    pos = None
    for sp in ordered_subpaths:
        entry = sp.vertices[0]
        if pos is None:
            events.append(Travel(x=entry.x, y=entry.y, z=entry.z,
                                 f=travel_f, rapid=True))
        else:
            gap = math.dist(pos, entry.xyz())
            if gap > MATCH_TOL:
                events.append(Travel(x=entry.x, y=entry.y, z=entry.z,
                                     f=travel_f, rapid=(gap > eps_gap)))
        events.append(Toolpath(vertices=list(sp.vertices), closed=False,
                               kind=sp.parent.kind,
                               layer_index=sp.parent.layer_index,
                               modified=sp.modified))
        pos = sp.vertices[-1].xyz()
    layer.events = events
    return layer


def evaluate_order(graph, sequence, eps_gap, weighted=False):
    """Cost of a specific topological order of the modified nodes.

    sequence holds node indices into graph.nodes; raises if it violates a
    constraint edge or misses a modified node."""
    nodes = graph.nodes
    modified = {i for i, sp in enumerate(nodes) if sp.modified}
    if set(sequence) != modified:
        raise OrderingError("sequence must cover exactly the modified subpaths")
    position = {i: k for k, i in enumerate(sequence)}
    for u, v in graph.edges:
        if u in modified and v in modified and position[u] >= position[v]:
            raise OrderingError(f"sequence violates edge {u} -> {v}")
    cost, locs = _order_cost(nodes, sequence, eps_gap, not weighted)
    return cost, locs
