import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from toolpath_aa import antialias
from toolpath_aa.antialias import (DisplacementWindow, ThicknessError,
                                   adjust_extrusion, adjust_feedrate,
                                   detect_overlaps, displace_layer,
                                   reduce_overlap_flow, resample_path,
                                   sweep_slicing_plane)
from toolpath_aa.fixtures import wedge_fixture, wedge_mesh
from toolpath_aa.gcode import (Layer, PathVertex, PrinterProfile,
                               PrintProgram, Toolpath, parse_gcode)
from toolpath_aa.geometry import build_vertical_index


def straight_path(length, e_total=2.0, n=2, z=0.6):
    verts = [PathVertex(0, 0, z, 0.0, 20.0)]
    for k in range(1, n):
        verts.append(PathVertex(length * k / (n - 1), 0, z,
                                e_total / (n - 1), 20.0))
    return Toolpath(vertices=verts)


def test_resample_splits_into_equal_pieces():
    path = straight_path(2.0, e_total=2.0)
    resample_path(path, 0.8)
    segs = [math.dist(a.xy(), b.xy())
            for a, b in zip(path.vertices, path.vertices[1:])]
    assert len(segs) == 3
    assert all(s == pytest.approx(2.0 / 3.0) for s in segs)
    assert all(v.e == pytest.approx(2.0 / 3.0) for v in path.vertices[1:])


def test_resample_short_segment_unchanged():
    path = straight_path(0.5)
    before = [v.xyz() for v in path.vertices]
    resample_path(path, 0.8)
    assert [v.xyz() for v in path.vertices] == before


def test_resample_closed_square():
    pts = [(0, 0), (4, 0), (4, 4), (0, 4), (0, 0)]
    verts = [PathVertex(x, y, 0.6, 0.0 if i == 0 else 1.0, 20.0)
             for i, (x, y) in enumerate(pts)]
    path = Toolpath(vertices=verts, closed=True)
    resample_path(path, 0.8)
    assert path.closed
    segs = [math.dist(a.xy(), b.xy())
            for a, b in zip(path.vertices, path.vertices[1:])]
    assert len(segs) == 20                 # ceil(4/0.8) = 5 per side
    assert path.vertices[0].xyz() == path.vertices[-1].xyz()
    assert path.total_e() == pytest.approx(4.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(-300, 300), st.integers(-300, 300)),
                min_size=2, max_size=8, unique=True),
       st.floats(0.1, 3.0, allow_nan=False))
def test_resample_properties(points, w):
    verts = [PathVertex(x / 10.0, y / 10.0, 0.6,
                        0.0 if i == 0 else 1.0, 20.0)
             for i, (x, y) in enumerate(points)]
    path = Toolpath(vertices=list(verts))
    total_len = path.length()
    total_e = path.total_e()
    resample_path(path, w)
    assert path.length() == pytest.approx(total_len, abs=1e-9)
    assert path.total_e() == pytest.approx(total_e, abs=1e-9)
    for a, b in zip(path.vertices, path.vertices[1:]):
        assert math.dist(a.xyz(), b.xyz()) <= w + 1e-9
    assert path.vertices[0].xyz() == verts[0].xyz()
    assert path.vertices[-1].xyz() == verts[-1].xyz()


def test_window_default_and_general():
    p = PrinterProfile()
    win = DisplacementWindow.for_profile(p)
    assert (win.lo, win.hi) == (pytest.approx(-0.3), pytest.approx(0.3))
    win2 = DisplacementWindow.for_profile(p, s=0.06)
    assert (win2.lo, win2.hi) == (pytest.approx(-0.54), pytest.approx(0.06))


def test_adjust_extrusion_examples():
    assert adjust_extrusion(2.0, 0.6, 0.0) == pytest.approx(2.0)
    assert adjust_extrusion(2.0, 0.6, +0.3) == pytest.approx(3.0)
    assert adjust_extrusion(2.0, 0.6, -0.3) == pytest.approx(1.0)
    with pytest.raises(ThicknessError):
        adjust_extrusion(2.0, 0.6, -0.6)


def test_adjust_feedrate_examples():
    assert adjust_feedrate(0.1, 0.1, 0.6, 20, 13) == pytest.approx(20.0)
    assert adjust_feedrate(0.3, -0.3, 0.6, 20, 13) == pytest.approx(13.0)
    assert adjust_feedrate(0.0, 0.3, 0.6, 20, 13) == pytest.approx(16.5)
    # over-range clamps
    assert adjust_feedrate(0.0, 1.2, 0.6, 20, 13) == pytest.approx(13.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_feedrate_monotone_in_delta_jump(d1, d2, d3):
    f_small = adjust_feedrate(d1, d2, 0.6, 20, 13)
    wider = d2 + math.copysign(abs(d3), d2 - d1) if d2 != d1 else d2
    f_large = adjust_feedrate(d1, wider, 0.6, 20, 13)
    if abs(d1 - wider) >= abs(d1 - d2):
        assert f_large <= f_small + 1e-12


class WedgeEnv:
    def __init__(self, cross=False):
        self.profile = PrinterProfile()
        self.mesh, gcode = wedge_fixture(self.profile, cross_hatch=cross)
        self.program = parse_gcode(gcode)
        for layer in self.program.layers:
            for p in layer.toolpaths():
                antialias.resample_path(p, self.profile.w)
        self.index = build_vertical_index(self.mesh)

    def displace_all(self, s=None):
        stats = antialias.DisplacementStats()
        for layer in self.program.layers:
            displace_layer(layer.toolpaths(), self.index, self.mesh,
                           self.profile, s=s, stats=stats)
        return stats


def test_displace_wedge_window_and_snap():
    env = WedgeEnv()
    stats = env.displace_all()
    assert stats.displaced > 0
    slope = math.tan(math.radians(10.0))
    for layer in env.program.layers:
        for tp in layer.toolpaths():
            for v in tp.vertices:
                assert -0.3 - 1e-12 <= v.delta <= 0.3 + 1e-12
                if v.delta != 0.0:
                    assert abs(v.z - v.x * slope) < 1e-6
                    assert tp.modified


def test_displace_untouched_vertex_keeps_flat_z():
    env = WedgeEnv()
    env.displace_all()
    # interior vertices (surface more than h/2 above) keep the flat top
    found = False
    for layer in env.program.layers:
        for tp in layer.toolpaths():
            for v in tp.vertices:
                if v.delta == 0.0 and v.e > 0:
                    assert v.z == pytest.approx(layer.base_z)
                    found = True
    assert found


def test_displace_idempotent():
    env = WedgeEnv()
    env.displace_all()
    before = [(v.x, v.y, v.z) for layer in env.program.layers
              for tp in layer.toolpaths() for v in tp.vertices]
    for layer in env.program.layers:
        displace_layer(layer.toolpaths(), env.index, env.mesh, env.profile,
                       refine_boundaries=False)
    after = [(v.x, v.y, v.z) for layer in env.program.layers
             for tp in layer.toolpaths() for v in tp.vertices]
    assert len(before) == len(after)
    for a, b in zip(before, after):
        assert math.dist(a, b) < 1e-9


def test_displace_extreme_half_layer():
    # a vertex whose surface sits exactly h/2 above moves by exactly +h/2
    profile = PrinterProfile()
    mesh = wedge_mesh()
    index = build_vertical_index(mesh)
    slope = math.tan(math.radians(10.0))
    x = (0.6 + 0.3) / slope          # surface z = 0.9, vertex z = 0.6
    path = Toolpath(vertices=[PathVertex(x - 0.5, 5.0, 0.6, 0.0, 20.0),
                              PathVertex(x, 5.0, 0.6, 0.1, 20.0)])
    displace_layer([path], index, mesh, profile, refine_boundaries=False)
    assert path.vertices[1].delta == pytest.approx(+0.3, abs=1e-9)
    assert path.vertices[1].z == pytest.approx(0.9, abs=1e-9)


def test_displace_zero_offset_untouched():
    profile = PrinterProfile()
    mesh = wedge_mesh()
    index = build_vertical_index(mesh)
    slope = math.tan(math.radians(10.0))
    x = 0.6 / slope                   # surface exactly at the vertex
    path = Toolpath(vertices=[PathVertex(x - 0.5, 5.0, 0.6, 0.0, 20.0),
                              PathVertex(x, 5.0, 0.6, 0.1, 20.0)])
    displace_layer([path], index, mesh, profile, refine_boundaries=False)
    assert path.vertices[1].delta == 0.0
    assert path.vertices[1].z == pytest.approx(0.6)


def test_bottom_facing_untouched():
    profile = PrinterProfile()
    mesh = wedge_mesh()
    index = build_vertical_index(mesh)
    # vertex just above the wedge bottom plane: closest surface is the
    # bottom (facing down), so it must stay untouched
    v = PathVertex(10.0, 5.0, 0.2, 0.1, 20.0)
    path = Toolpath(vertices=[PathVertex(9.5, 5.0, 0.2, 0.0, 20.0), v])
    _, stats = displace_layer([path], index, mesh, profile,
                              refine_boundaries=False)
    assert v.z == pytest.approx(0.2)
    assert stats.skipped_bottom_facing >= 1


def _synthetic_overlap_program(raise_by=0.2, upper_e=5.0):
    profile = PrinterProfile()
    p = PrintProgram()
    low = Toolpath(vertices=[PathVertex(0, 0, 0.6 + raise_by, 0.0, 20, raise_by),
                             PathVertex(10, 0, 0.6 + raise_by, 5.0, 20, raise_by)],
                   layer_index=0, modified=True)
    up = Toolpath(vertices=[PathVertex(0, 0, 1.2, 0.0, 20, 0.0),
                            PathVertex(10, 0, 1.2, upper_e, 20, 0.0)],
                  layer_index=1)
    l0 = Layer(base_z=0.6, events=[low])
    l1 = Layer(base_z=1.2, events=[up])
    p.layers = [l0, l1]
    return p, profile


def test_overlap_volume_box_oracle():
    # raised by 0.2 into a track of width 0.8 over length 10 -> 1.6 mm^3
    program, profile = _synthetic_overlap_program()
    records, report = detect_overlaps(program, profile)
    assert len(records) == 1
    assert report["overlap_volume_mm3"] == pytest.approx(1.6, abs=1e-9)


def test_overlap_flow_reduction_and_reports():
    program, profile = _synthetic_overlap_program()
    upper = program.layers[1].toolpaths()[0]
    e_before = upper.total_e()
    records, report = reduce_overlap_flow(program, profile)
    de = 1.6 / profile.filament_area
    assert upper.total_e() == pytest.approx(e_before - de)
    assert report["upper_segments_clamped_to_zero"] == 0


def test_overlap_clamps_to_zero():
    program, profile = _synthetic_overlap_program(upper_e=0.1)
    upper = program.layers[1].toolpaths()[0]
    _, report = reduce_overlap_flow(program, profile)
    assert upper.total_e() == pytest.approx(0.0)
    assert report["upper_segments_clamped_to_zero"] == 1


def test_no_displacement_no_overlaps():
    program, profile = _synthetic_overlap_program(raise_by=0.0)
    program.layers[0].toolpaths()[0].modified = False
    records, report = detect_overlaps(program, profile)
    assert records == []
    assert report["overlap_volume_mm3"] == 0


def test_sweep_zero_at_s0_and_monotone():
    env = WedgeEnv(cross=True)
    rows = sweep_slicing_plane(env.program, env.mesh, env.index, env.profile,
                               [0.0, 0.06, 0.2, 0.3])
    vols = [v for _s, v in rows]
    assert vols[0] == 0.0
    assert vols[0] <= vols[1] <= vols[2] <= vols[3]
    assert vols[3] > 0.0


def test_sweep_does_not_mutate_input():
    env = WedgeEnv(cross=True)
    before = [(v.x, v.y, v.z, v.e) for layer in env.program.layers
              for tp in layer.toolpaths() for v in tp.vertices]
    sweep_slicing_plane(env.program, env.mesh, env.index, env.profile, [0.3])
    after = [(v.x, v.y, v.z, v.e) for layer in env.program.layers
             for tp in layer.toolpaths() for v in tp.vertices]
    assert before == after


def test_rescale_paths_adjusts_e_and_f():
    env = WedgeEnv()
    env.displace_all()
    profile = env.profile
    # record pre-scale segment extrusions
    pre = {}
    for li, layer in enumerate(env.program.layers):
        for pi, tp in enumerate(layer.toolpaths()):
            for si, v in enumerate(tp.vertices):
                pre[(li, pi, si)] = v.e
    for layer in env.program.layers:
        antialias.rescale_paths(layer.toolpaths(), profile)
    checked = 0
    for li, layer in enumerate(env.program.layers):
        for pi, tp in enumerate(layer.toolpaths()):
            for si, v in enumerate(tp.vertices):
                if si == 0:
                    continue
                expected = pre[(li, pi, si)]
                if v.delta != 0.0 and tp.modified:
                    expected = expected * (profile.h + v.delta) / profile.h
                    prev = tp.vertices[si - 1]
                    f_exp = adjust_feedrate(prev.delta, v.delta, profile.h,
                                            profile.f_ini, profile.f_min)
                    assert v.f == pytest.approx(f_exp)
                    checked += 1
                assert v.e == pytest.approx(expected)
                assert v.e >= 0
    assert checked > 0
