"""Development checks for the fixtures and core machinery."""

import itertools
import math
import sys

sys.path.insert(0, "src")

from toolpath_aa import fixtures, ordering
from toolpath_aa.gcode import PrinterProfile, parse_gcode, emit_gcode


def brute_force_orders(graph, eps_gap, weighted=False):
    nodes = graph.nodes
    modified = [i for i, sp in enumerate(nodes) if sp.modified]
    succ = {i: set() for i in modified}
    for u, v in graph.edges:
        succ[u].add(v)
    best = math.inf
    best_orders = []
    count = 0
    for perm in itertools.permutations(modified):
        pos = {n: k for k, n in enumerate(perm)}
        if any(pos[u] > pos[v] for u in succ for v in succ[u]):
            continue
        count += 1
        cost, _ = ordering._order_cost(nodes, list(perm), eps_gap,
                                       not weighted)
        if cost < best - 1e-12:
            best = cost
            best_orders = [perm]
        elif abs(cost - best) <= 1e-12:
            best_orders.append(perm)
    return best, best_orders, count


def check_ordering_scene_fixture():
    graph, labels = fixtures.ordering_scene()
    inv = {v: k for k, v in labels.items()}
    eps_gap = 3.2

    def seq(s):
        return [labels[c] for c in s]

    print("== ordering_scene_fixture combinatorial graph ==")
    for name, order in [("order1", "AFDEBCG"), ("order2", "FAECDBG"),
                        ("order3", "ADFCEBG"), ("order4", "AFDECGB"),
                        ("order5", "FEABCDG")]:
        cost, locs = ordering.evaluate_order(graph, seq(order), eps_gap)
        print(f"  {name} {order}: unweighted cost {cost}, gaps {len(locs)}")
    best, best_orders, n = brute_force_orders(graph, eps_gap)
    print(f"  brute force: min {best} over {n} topological orders; "
          f"{len(best_orders)} optimal")
    named = ["".join(inv[i] for i in o) for o in best_orders]
    print("  optimal orders:", sorted(named)[:12])
    res = ordering.order_paths(graph, eps_gap)
    print(f"  order_paths: cost {res.cost} "
          f"order {''.join(inv[graph.nodes.index(sp)] for sp in res.order)} "
          f"explored {res.explored_orders} expansions {res.expansions}")
    w4, _ = ordering.evaluate_order(graph, seq("AFDECGB"), eps_gap,
                                    weighted=True)
    w5, _ = ordering.evaluate_order(graph, seq("FEABCDG"), eps_gap,
                                    weighted=True)
    print(f"  weighted: A-start {w4}, F-start {w5} (want F < A)")
    bw, bw_orders, _ = brute_force_orders(graph, eps_gap, weighted=True)
    resw = ordering.order_paths(graph, eps_gap, weighted=True)
    print(f"  weighted brute min {bw}; order_paths weighted {resw.cost}")


def check_three_paths():
    print("== three_paths geometry ==")
    paths = fixtures.three_paths_scene()
    profile = PrinterProfile()
    eps = ordering.interference_threshold(profile)
    print(f"  eps = {eps}")
    for i, p in enumerate(paths):
        print(f"  path{i+1}: {len(p.vertices)} verts closed={p.closed} "
              f"modified={p.modified}")
    for i in range(3):
        for j in range(i + 1, 3):
            d = ordering.polyline_min_distance(paths[i].vertices,
                                               paths[j].vertices)
            print(f"  dist path{i+1}-path{j+1}: {d:.3f}")
    pairs = ordering.find_neighbors(paths, eps)
    print(f"  neighbor pairs: {pairs}")
    subs = ordering.split_paths(paths, pairs, eps)
    from collections import Counter
    partition = Counter(sp.parent_id for sp in subs)
    print(f"  subpaths: {len(subs)} partition {dict(partition)}")
    for sp in subs:
        print(f"    parent {sp.parent_id} [{sp.start}..{sp.end}] "
              f"n={len(sp.vertices)} entry={tuple(round(c,2) for c in sp.entry)} "
              f"exit={tuple(round(c,2) for c in sp.exit)} h={sp.height:.3f}")
    graph = ordering.build_constraint_graph(subs, eps)
    try:
        labels = fixtures.label_scene_subpaths(subs)
        inv = {subs.index(v): k for k, v in labels.items()}
        print("  edges:", [(inv.get(u, u), inv.get(v, v))
                           for u, v in graph.edges])
    except Exception as exc:
        print("  labeling failed:", exc)
        print("  raw edges:", graph.edges)


def check_roundtrip():
    print("== wedge fixture G-code ==")
    profile = PrinterProfile()
    mesh, gcode = fixtures.wedge_fixture(profile)
    prog = parse_gcode(gcode)
    print(f"  mesh volume {mesh.volume():.2f} mm^3; "
          f"layers {len(prog.layers)} paths "
          f"{sum(len(l.toolpaths()) for l in prog.layers)} "
          f"verts {prog.vertex_count()}")
    out = emit_gcode(prog)
    prog2 = parse_gcode(out)
    ok = len(prog.layers) == len(prog2.layers)
    from toolpath_aa.gcode import total_extrusion
    e1, e2 = total_extrusion(prog), total_extrusion(prog2)
    print(f"  roundtrip layers ok={ok} E {e1:.4f} -> {e2:.4f}")


if __name__ == "__main__":
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    if which in ("all", "ordering_scene_fixture"):
        check_ordering_scene_fixture()
    if which in ("all", "three_paths"):
        check_three_paths()
    if which in ("all", "gcode"):
        check_roundtrip()
