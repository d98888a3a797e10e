"""Marlin/RepRap flavoured G-code parsing and emission.

The parser turns extruding G1 runs into Toolpaths (polylines with
per-vertex position, segment extrusion length and feedrate) grouped into
layers; everything else is preserved so that parse -> emit round-trips
with identical motion values and byte-identical non-motion lines.

Internal units: mm and mm/s. The G-code F word is mm/min (factor 60).
Segment extrusion is stored relative regardless of the file's M82/M83
mode and re-accumulated on emit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

FEED_FACTOR = 60.0          # F word (mm/min) -> mm/s
DUPLICATE_TOL = 1e-9        # consecutive duplicate vertices merged below this
CLOSURE_TOL = 1e-6          # first ~ last distance flagging a closed path
FORMAT_DECIMALS = 5


class GcodeParseError(Exception):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class PathVertex:
    """One toolpath vertex; e is the filament length of the segment that
    ends here (0 on the first vertex), f its feedrate in mm/s, delta the
    vertical displacement applied by anti-aliasing."""

    x: float
    y: float
    z: float
    e: float = 0.0
    f: float = 0.0
    delta: float = 0.0

    def xy(self):
        return (self.x, self.y)

    def xyz(self):
        return (self.x, self.y, self.z)


@dataclass
class Toolpath:
    vertices: list
    closed: bool = False
    kind: str = "unknown"     # perimeter | infill | unknown
    layer_index: int = 0
    modified: bool = False

    def __len__(self):
        return len(self.vertices)

    def length(self):
        total = 0.0
        for a, b in zip(self.vertices, self.vertices[1:]):
            total += math.dist(a.xy(), b.xy())
        return total

    def total_e(self):
        return sum(v.e for v in self.vertices)


@dataclass
class RawLine:
    text: str


@dataclass
class Travel:
    """Non-extruding move. Words record which axes the original line set."""

    x: float = None
    y: float = None
    z: float = None
    f: float = None           # mm/s
    rapid: bool = True        # G0 vs G1


@dataclass
class EOnly:
    """Retraction or prime: E word without XY motion. The relative amount
    is preserved verbatim and never rescaled."""

    delta_e: float
    f: float = None
    z: float = None


@dataclass
class ESet:
    """G92 E...: resets the extruder accumulator."""

    value: float
    text: str = ""


@dataclass
class ModeSwitch:
    """M82/M83 extrusion mode change, kept in place."""

    mode: str                 # absolute | relative
    text: str = ""


@dataclass
class Layer:
    base_z: float
    events: list = field(default_factory=list)

    def toolpaths(self):
        return [ev for ev in self.events if isinstance(ev, Toolpath)]


@dataclass
class PrintProgram:
    prologue: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    epilogue: list = field(default_factory=list)
    extrusion_mode: str = "absolute"
    newline: str = "\n"
    warnings: list = field(default_factory=list)

    def all_toolpaths(self):
        for layer in self.layers:
            yield from layer.toolpaths()

    def vertex_count(self):
        return sum(len(tp) for tp in self.all_toolpaths())


@dataclass
class PrinterProfile:
    """Nozzle and process constants.

    w/tau: inner/outer nozzle diameter (mm); alpha: nozzle side
    inclination (radians); h: base layer thickness (mm); f_ini/f_min:
    deposition speeds (mm/s); s: slicing plane position in [0, h]
    (default h/2); d: track width (default w); filament_diameter feeds
    the volume <-> filament length conversion.
    """

    w: float = 0.8
    tau: float = 1.25
    alpha: float = math.radians(45.0)
    h: float = 0.6
    f_ini: float = 20.0
    f_min: float = 13.0
    s: float = None
    d: float = None
    filament_diameter: float = 2.85

    def __post_init__(self):
        if self.s is None:
            self.s = self.h / 2.0
        if self.d is None:
            self.d = self.w
        self.validate()

    def validate(self):
        if not (0 < self.w < self.tau):
            raise ValueError(f"need 0 < w < tau, got w={self.w}, tau={self.tau}")
        if not (0 < self.alpha <= math.pi / 2):
            raise ValueError(f"alpha must be in (0, pi/2], got {self.alpha}")
        if self.h <= 0:
            raise ValueError("layer thickness h must be positive")
        if self.f_min > self.f_ini:
            raise ValueError("f_min must not exceed f_ini")
        if not (0 <= self.s <= self.h):
            raise ValueError(f"slicing plane s must lie in [0, h], got {self.s}")
        if self.filament_diameter <= 0:
            raise ValueError("filament diameter must be positive")

    @property
    def filament_area(self):
        return math.pi * (self.filament_diameter / 2.0) ** 2

    def window(self):
        return (self.s - self.h, self.s)


_WORD_SHAPE_RE = re.compile(r"([A-Za-z])\s*([^\sA-Za-z]*)")
_NUMBER_RE = re.compile(r"[-+]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][-+]?[0-9]+)?$")
_CMD_RE = re.compile(r"^([GMgm])\s*([0-9]+)")

# commands the parser interprets; everything else passes through verbatim
_INTERPRETED = {
    ("G", 0.0), ("G", 1.0), ("G", 2.0), ("G", 3.0), ("G", 20.0),
    ("G", 90.0), ("G", 91.0), ("G", 92.0), ("M", 82.0), ("M", 83.0),
}


def _split_comment(line):
    i = line.find(";")
    if i < 0:
        return line, None
    return line[:i], line[i:]


def _command_of(code):
    m = _CMD_RE.match(code)
    if m is None:
        return None
    return m.group(1).upper(), float(m.group(2))


def _parse_words(code, lineno):
    words = {}
    for match in _WORD_SHAPE_RE.finditer(code):
        letter = match.group(1).upper()
        if letter == "N":
            continue
        value = match.group(2)
        if not _NUMBER_RE.match(value):
            raise GcodeParseError(
                f"non-numeric value {value!r} for word {letter}", lineno)
        if letter in words:
            raise GcodeParseError(f"duplicate word {letter}", lineno)
        words[letter] = float(value)
    return words


class _Parser:
    def __init__(self, text):
        self.program = PrintProgram(newline="\r\n" if "\r\n" in text else "\n")
        self.x = None
        self.y = None
        self.z = None
        self.e = 0.0
        self.f = 0.0            # mm/s
        self.e_mode = "absolute"
        self.mode_seen = False
        self.xyz_relative = False
        self.layer = None
        self.path = None
        self.layer_comments = ";LAYER:" in text
        self.travel_z = None     # z last set by a travel move

    def close_path(self):
        if self.path is not None:
            if len(self.path.vertices) >= 2:
                first = self.path.vertices[0]
                last = self.path.vertices[-1]
                if math.dist(first.xyz(), last.xyz()) < CLOSURE_TOL:
                    self.path.closed = True
            else:
                # a lone vertex is not a path
                self.layer.events.remove(self.path)
        self.path = None

    def add_event(self, ev):
        self.close_path()
        if self.layer is None:
            self.program.prologue.append(ev)
        else:
            self.layer.events.append(ev)

    def run(self, text):
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for lineno, raw in enumerate(lines, 1):
            self.line(lineno, raw.rstrip("\r"))
        self.close_path()
        self._split_epilogue()
        self._assign_kinds()
        return self.program

    def line(self, lineno, raw):
        code, comment = _split_comment(raw)
        stripped = code.strip()
        if not stripped:
            if comment is not None and comment.upper().startswith(";LAYER:"):
                # the comment and everything after belong to the new layer
                self.close_path()
                self.layer = Layer(base_z=None)
                self.program.layers.append(self.layer)
            self.add_event(RawLine(raw))
            return
        cmd = _command_of(stripped)
        if cmd is None or cmd[0] not in ("G", "M"):
            self.add_event(RawLine(raw))
            return
        letter, number = cmd
        if (letter, number) not in _INTERPRETED:
            # unrecognised commands (fans, temperatures, displays, ...) are
            # preserved verbatim and break the current path
            self.add_event(RawLine(raw))
            return
        words = _parse_words(stripped, lineno)

        if letter == "G" and number in (2.0, 3.0):
            raise GcodeParseError(
                "arc moves (G2/G3) are not supported; linearise them first",
                lineno)
        if letter == "G" and number == 20.0:
            raise GcodeParseError("inch units (G20) are not supported", lineno)
        if letter == "G" and number == 90.0:
            self.xyz_relative = False
            self.add_event(RawLine(raw))
            return
        if letter == "G" and number == 91.0:
            self.xyz_relative = True
            self.x = self.y = self.z = None   # position unknown afterwards
            self.add_event(RawLine(raw))
            return
        if letter == "M" and number in (82.0, 83.0):
            mode = "absolute" if number == 82.0 else "relative"
            self.e_mode = mode
            if not self.mode_seen:
                self.program.extrusion_mode = mode
                self.mode_seen = True
            self.add_event(ModeSwitch(mode, raw))
            return
        if letter == "G" and number == 92.0:
            if any(k in words for k in "XYZ"):
                raise GcodeParseError(
                    "G92 redefining X/Y/Z is not supported", lineno)
            if "E" in words:
                self.e = words["E"]
                self.add_event(ESet(words["E"], raw))
            else:
                self.add_event(RawLine(raw))
            return
        if letter == "G" and number in (0.0, 1.0):
            if self.xyz_relative:
                if "E" in words and ("X" in words or "Y" in words):
                    raise GcodeParseError(
                        "extruding XY move in relative coordinate mode", lineno)
                self.add_event(RawLine(raw))
                return
            self.move(words, rapid=(number == 0.0), lineno=lineno)
            return
        # any other command: preserved verbatim, breaks the current path
        self.add_event(RawLine(raw))

    def move(self, words, rapid, lineno):
        new_x = words.get("X", self.x)
        new_y = words.get("Y", self.y)
        new_z = words.get("Z", self.z)
        if "F" in words:
            self.f = words["F"] / FEED_FACTOR

        e_delta = 0.0
        if "E" in words:
            if self.e_mode == "absolute":
                e_delta = words["E"] - self.e
                self.e = words["E"]
            else:
                e_delta = words["E"]
                self.e += e_delta

        moved_xy = (("X" in words or "Y" in words)
                    and new_x is not None and new_y is not None
                    and (self.x is None or self.y is None
                         or new_x != self.x or new_y != self.y))
        extruding = e_delta > 0 and moved_xy

        if extruding:
            if new_z is None:
                raise GcodeParseError(
                    "extruding move before any Z was set", lineno)
            if self.x is None or self.y is None:
                raise GcodeParseError(
                    "extruding move with unknown start position", lineno)
            if self.layer is not None and self.layer.base_z is None:
                prev = self.program.layers[-2] if len(self.program.layers) > 1 else None
                if prev is not None and prev.base_z is not None \
                        and new_z < prev.base_z - 1e-9:
                    self.program.warnings.append(
                        f"line {lineno}: deposition z decreased "
                        f"({prev.base_z:.5f} -> {new_z:.5f})")
                self.layer.base_z = new_z
                self.travel_z = None
            elif self._starts_new_layer(new_z):
                if self.layer is not None and new_z < self.layer.base_z - 1e-9:
                    self.program.warnings.append(
                        f"line {lineno}: deposition z decreased "
                        f"({self.layer.base_z:.5f} -> {new_z:.5f})")
                self.close_path()
                self.layer = Layer(base_z=new_z)
                self.program.layers.append(self.layer)
                self.travel_z = None
            if self.path is None:
                self.path = Toolpath(
                    vertices=[PathVertex(self.x, self.y, new_z, 0.0, self.f)],
                    layer_index=len(self.program.layers) - 1)
                self.layer.events.append(self.path)
            v = PathVertex(new_x, new_y, new_z, e_delta, self.f)
            prev = self.path.vertices[-1]
            if math.dist(prev.xyz(), v.xyz()) < DUPLICATE_TOL:
                prev.e += v.e     # merge duplicate vertex, keep its extrusion
            else:
                self.path.vertices.append(v)
        else:
            if ("E" in words and "X" not in words and "Y" not in words):
                self.add_event(EOnly(
                    delta_e=e_delta,
                    f=(words["F"] / FEED_FACTOR) if "F" in words else None,
                    z=words.get("Z")))
            else:
                self.add_event(Travel(
                    x=words.get("X"), y=words.get("Y"), z=words.get("Z"),
                    f=(words["F"] / FEED_FACTOR) if "F" in words else None,
                    rapid=rapid))
            if "Z" in words:
                self.travel_z = words["Z"]
                if self.layer is not None and self.layer.base_z is None:
                    self.layer.base_z = words["Z"]
        self.x, self.y, self.z = new_x, new_y, new_z

    def _starts_new_layer(self, z):
        """Layer split rule: the first deposition, or (in files without
        ;LAYER: comments) a travel that established a different z.
        Deposition-only z variation, as in anti-aliased output, never
        splits a layer."""
        if self.layer is None:
            return True
        if self.layer_comments:
            return False      # only ;LAYER: comments split
        return (self.travel_z is not None
                and abs(self.travel_z - self.layer.base_z) > 1e-9)

    def _split_epilogue(self):
        """Trailing non-deposition events of the last layer become epilogue."""
        if not self.program.layers:
            return
        last = self.program.layers[-1]
        cut = len(last.events)
        while cut > 0 and not isinstance(last.events[cut - 1], Toolpath):
            cut -= 1
        self.program.epilogue = last.events[cut:]
        last.events = last.events[:cut]
        # drop layers that never received a deposition (e.g. a trailing
        # ;LAYER: comment with nothing after it)
        self.program.layers = [
            l for l in self.program.layers
            if l.base_z is not None or l.events
        ]
        for l in self.program.layers:
            if l.base_z is None:
                l.base_z = 0.0

    def _assign_kinds(self):
        """Tag toolpaths with the most recent ;TYPE: comment before them."""
        kind = "unknown"
        events = list(self.program.prologue)
        for layer in self.program.layers:
            events.extend(layer.events)
        events.extend(self.program.epilogue)
        for ev in events:
            if isinstance(ev, RawLine) and ";TYPE:" in ev.text:
                tag = ev.text.split(";TYPE:", 1)[1].strip().upper()
                if "PERIM" in tag or tag.startswith("WALL"):
                    kind = "perimeter"
                elif "FILL" in tag or tag == "SKIN":
                    kind = "infill"
                else:
                    kind = "unknown"
            elif isinstance(ev, Toolpath):
                ev.kind = kind


def parse_gcode(text):
    """Parse G-code text into a PrintProgram."""
    parser = _Parser(text)
    return parser.run(text)


# ---------------------------------------------------------------------------
# Emission

def _fmt(value):
    return f"{value:.{FORMAT_DECIMALS}f}"


class _Emitter:
    def __init__(self, program):
        self.program = program
        self.lines = []
        self.x = None
        self.y = None
        self.z = None
        self.e_accum = 0.0
        self.e_mode = program.extrusion_mode
        self.f_word = None        # last emitted F in mm/min (formatted value)

    def raw(self, text):
        self.lines.append(text)

    def _f_part(self, f_mmps):
        if f_mmps is None:
            return ""
        word = _fmt(f_mmps * FEED_FACTOR)
        if word != self.f_word:
            self.f_word = word
            return f" F{word}"
        return ""

    def travel(self, tv):
        parts = ["G0" if tv.rapid else "G1"]
        if tv.x is not None:
            parts.append(f"X{_fmt(tv.x)}")
            self.x = tv.x
        if tv.y is not None:
            parts.append(f"Y{_fmt(tv.y)}")
            self.y = tv.y
        if tv.z is not None:
            parts.append(f"Z{_fmt(tv.z)}")
            self.z = tv.z
        fpart = self._f_part(tv.f)
        if fpart:
            parts.append(fpart.strip())
        self.lines.append(" ".join(parts))

    def e_only(self, ev):
        self.e_accum += ev.delta_e
        parts = ["G1"]
        if ev.z is not None:
            parts.append(f"Z{_fmt(ev.z)}")
            self.z = ev.z
        if self.e_mode == "absolute":
            parts.append(f"E{_fmt(self.e_accum)}")
        else:
            parts.append(f"E{_fmt(ev.delta_e)}")
        fpart = self._f_part(ev.f)
        if fpart:
            parts.append(fpart.strip())
        self.lines.append(" ".join(parts))

    def e_set(self, ev):
        self.e_accum = ev.value
        self.raw(ev.text)

    def mode(self, ev):
        self.e_mode = ev.mode
        self.raw(ev.text)

    def toolpath(self, tp):
        verts = tp.vertices
        start = verts[0]
        if (self.x is None or self.y is None
                or math.dist((self.x, self.y), start.xy()) > DUPLICATE_TOL
                or self.z is None or abs((self.z or 0) - start.z) > DUPLICATE_TOL):
            # re-position without extruding (covers reordered paths)
            self.travel(Travel(x=start.x, y=start.y, z=start.z, f=None))
        for v in verts[1:]:
            self.e_accum += v.e
            parts = [
                "G1",
                f"X{_fmt(v.x)}",
                f"Y{_fmt(v.y)}",
                f"Z{_fmt(v.z)}",
            ]
            if self.e_mode == "absolute":
                parts.append(f"E{_fmt(self.e_accum)}")
            else:
                parts.append(f"E{_fmt(v.e)}")
            fpart = self._f_part(v.f)
            if fpart:
                parts.append(fpart.strip())
            self.lines.append(" ".join(parts))
            self.x, self.y, self.z = v.x, v.y, v.z

    def event(self, ev):
        if isinstance(ev, RawLine):
            self.raw(ev.text)
        elif isinstance(ev, Travel):
            self.travel(ev)
        elif isinstance(ev, EOnly):
            self.e_only(ev)
        elif isinstance(ev, ESet):
            self.e_set(ev)
        elif isinstance(ev, ModeSwitch):
            self.mode(ev)
        elif isinstance(ev, Toolpath):
            self.toolpath(ev)
        else:
            raise TypeError(f"unknown event {ev!r}")


def emit_gcode(program):
    """Serialise a PrintProgram back to G-code text."""
    em = _Emitter(program)
    for ev in program.prologue:
        em.event(ev)
    for layer in program.layers:
        for ev in layer.events:
            em.event(ev)
    for ev in program.epilogue:
        em.event(ev)
    return program.newline.join(em.lines) + program.newline


def extract_paths(program):
    """Per-layer toolpath lists (references into the program)."""
    return [layer.toolpaths() for layer in program.layers]


def total_extrusion(program):
    total = 0.0
    for layer in program.layers:
        for ev in layer.events:
            if isinstance(ev, Toolpath):
                total += ev.total_e()
            elif isinstance(ev, EOnly):
                total += ev.delta_e
    for ev in list(program.prologue) + list(program.epilogue):
        if isinstance(ev, EOnly):
            total += ev.delta_e
    return total
