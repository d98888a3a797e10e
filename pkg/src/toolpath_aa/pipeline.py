"""End-to-end orchestration: parse -> resample -> displace -> rescale ->
overlap compensation -> split/order/relink -> emit, plus reports."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import antialias, evaluate, geometry, ordering
from .gcode import (PrinterProfile, Travel, emit_gcode, parse_gcode,
                    total_extrusion)


class ConfigError(Exception):
    pass


MIN_THICKNESS = 0.05   # mm, below this deposition is unreliable


@dataclass
class PipelineConfig:
    gcode_path: str = None
    mesh_path: str = None
    out_path: str = None
    profile: PrinterProfile = field(default_factory=PrinterProfile)
    ordering_enabled: bool = True
    weighted_seams: bool = False
    overlap_enabled: bool = True
    report_path: str = None
    error_map_path: str = None
    sweep_s: list = field(default_factory=list)
    workers: int = 0                  # 0 = hardware parallelism
    order_expansion_cap: int = 50_000
    error_map_density: float = 50.0
    seed: int = 0

    def validate(self):
        self.profile.validate()
        for s in self.sweep_s:
            if not (0 <= s <= self.profile.h):
                raise ConfigError(f"sweep value s={s} outside [0, h]")
        # the deepest allowed downward displacement leaves thickness s
        if self.profile.s < MIN_THICKNESS - 1e-12:
            raise ConfigError(
                f"slicing plane s={self.profile.s} allows local thickness "
                f"below the {MIN_THICKNESS} mm deposition minimum")


def run_pipeline(config, gcode_text=None, mesh=None):
    """Run the full anti-aliasing pipeline. Inputs may be given as paths
    in the config or directly as text/mesh. Returns (program, report)."""
    config.validate()
    profile = config.profile
    report = {"profile": _profile_dict(profile), "timings_s": {}}
    t_all = time.perf_counter()

    if gcode_text is None:
        with open(config.gcode_path, "r", encoding="utf-8") as fh:
            gcode_text = fh.read()
    if mesh is None:
        mesh = geometry.load_mesh_file(config.mesh_path)
    report["mesh"] = {
        "triangles": mesh.triangle_count,
        "degenerate_dropped": mesh.degenerate_dropped,
    }

    t0 = time.perf_counter()
    program = parse_gcode(gcode_text)
    report["timings_s"]["parse"] = time.perf_counter() - t0
    report["input"] = {
        "layers": len(program.layers),
        "toolpaths": sum(len(l.toolpaths()) for l in program.layers),
        "vertices": program.vertex_count(),
        "total_e": total_extrusion(program),
        "warnings": list(program.warnings),
    }

    t0 = time.perf_counter()
    index = geometry.build_vertical_index(mesh)
    report["timings_s"]["index"] = time.perf_counter() - t0

    # resample + displace + rescale, per layer (independent; may run on
    # worker threads sharing the immutable index)
    t0 = time.perf_counter()
    stats = antialias.DisplacementStats()

    def process_layer(layer):
        paths = layer.toolpaths()
        local = antialias.DisplacementStats()
        for path in paths:
            antialias.resample_path(path, profile.w)
        antialias.displace_layer(paths, index, mesh, profile, stats=local)
        antialias.rescale_paths(paths, profile)
        return local

    layers = program.layers
    if config.workers == 1 or len(layers) <= 1:
        results = [process_layer(layer) for layer in layers]
    else:
        max_workers = config.workers or None
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(process_layer, layers))
    # untouched layers revert to their original (un-resampled) motion so a
    # zero-displacement run emits exactly the input values
    pristine = None
    for li, local in enumerate(results):
        if local.displaced == 0:
            if pristine is None:
                pristine = parse_gcode(gcode_text)
            layers[li].events = pristine.layers[li].events
        stats.merge(local)
    report["timings_s"]["antialias"] = time.perf_counter() - t0
    report["displacement"] = stats.as_dict(h=profile.h)

    if config.overlap_enabled:
        t0 = time.perf_counter()
        _records, overlap_report = antialias.reduce_overlap_flow(program,
                                                                 profile)
        report["timings_s"]["overlap"] = time.perf_counter() - t0
        report["overlap"] = overlap_report

    if config.sweep_s:
        t0 = time.perf_counter()
        # the sweep must run on an un-displaced program: reparse the input
        pristine = parse_gcode(gcode_text)
        for layer in pristine.layers:
            for path in layer.toolpaths():
                antialias.resample_path(path, profile.w)
        rows = antialias.sweep_slicing_plane(pristine, mesh, index, profile,
                                             config.sweep_s)
        report["sweep_s"] = [{"s": s, "overlap_volume_mm3": v}
                             for s, v in rows]
        report["timings_s"]["sweep"] = time.perf_counter() - t0

    if config.ordering_enabled:
        t0 = time.perf_counter()
        report["ordering"] = order_program(program, profile,
                                           weighted=config.weighted_seams,
                                           cap=config.order_expansion_cap)
        report["timings_s"]["ordering"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    text_out = emit_gcode(program)
    report["timings_s"]["emit"] = time.perf_counter() - t0
    report["output"] = {
        "total_e": total_extrusion(program),
        "estimated_print_time_s": evaluate.estimate_print_time(program),
    }

    if config.error_map_path:
        t0 = time.perf_counter()
        tracks = evaluate.tracks_from_program(program, profile)
        emap = evaluate.error_map(mesh, tracks,
                                  samples_per_mm2=config.error_map_density,
                                  seed=config.seed)
        if config.error_map_path.endswith(".csv"):
            emap.export_csv(config.error_map_path)
        else:
            emap.export_ply(config.error_map_path)
        report["error_map"] = emap.summary()
        report["timings_s"]["error_map"] = time.perf_counter() - t0

    report["timings_s"]["total"] = time.perf_counter() - t_all

    if config.out_path:
        with open(config.out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text_out)
    if config.report_path:
        with open(config.report_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    return program, report, text_out


def order_program(program, profile, weighted=False, cap=200_000):
    """Split, order and relink every layer that has modified paths."""
    eps = ordering.interference_threshold(profile)
    eps_gap = 4.0 * profile.w
    travel_f = _travel_feed(program)
    layer_reports = []
    for li, layer in enumerate(program.layers):
        paths = layer.toolpaths()
        if not any(p.modified for p in paths):
            layer_reports.append({"layer": li, "skipped": True})
            continue
        pairs = ordering.find_neighbors(paths, eps)
        subpaths = ordering.split_paths(paths, pairs, eps)
        graph = ordering.build_constraint_graph(subpaths, eps)
        if weighted:
            ordering.assign_seam_weights(graph.nodes)
        result = ordering.order_paths(graph, eps_gap, weighted=weighted,
                                      max_expansions=cap)
        ordering.relink_travels(layer, result.order, eps_gap, travel_f)
        rep = result.report(graph)
        rep["layer"] = li
        rep["neighbor_pairs"] = len(pairs)
        layer_reports.append(rep)
    return {
        "epsilon_mm": eps,
        "epsilon_gap_mm": eps_gap,
        "layers": layer_reports,
        "orders_considered": sum(r.get("orders_considered", 0)
                                 for r in layer_reports),
    }


def _travel_feed(program):
    best = 0.0
    for layer in program.layers:
        for ev in layer.events:
            if isinstance(ev, Travel) and ev.f:
                best = max(best, ev.f)
    for ev in list(program.prologue) + list(program.epilogue):
        if isinstance(ev, Travel) and ev.f:
            best = max(best, ev.f)
    return best or 120.0


def _profile_dict(p):
    return {
        "w": p.w, "tau": p.tau, "alpha_rad": p.alpha, "h": p.h,
        "f_ini": p.f_ini, "f_min": p.f_min, "s": p.s, "d": p.d,
        "filament_diameter": p.filament_diameter,
    }
