"""RepRap-flavor G-code parsing into per-layer extrusion toolpaths.

Handles the dialect produced by common slicers (G0/G1 moves, G4 dwell,
G90/G91 mode switches, G92 origin set, M400 sync, M42 pin control,
T<n> tool select) plus injection of an interlayer snapshot block that
pauses the machine, parks the head, and fires a camera trigger after
every layer.  Unknown opcodes are recorded verbatim and never
interpreted; arcs (G2/G3) are rejected.
"""

import math
import re
import statistics
from dataclasses import dataclass

KNOWN_OPCODES = frozenset({"G0", "G1", "G4", "G90", "G91", "G92", "M400", "M42"})
ARC_OPCODES = frozenset({"G2", "G3"})

DEFAULT_EXTRUSION_WIDTH = 0.4   # mm, nozzle diameter
DEFAULT_LAYER_HEIGHT = 0.2      # mm, fallback when a program has one layer at z=0

SNAPSHOT_MARKER = "; LAYER_SNAPSHOT"

_Z_EPS = 1e-6
_E_EPS = 1e-12

_WORD_RE = re.compile(r"^([A-Za-z])([-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)$")


class GCodeError(ValueError):
    """Parse or injection failure, tagged with the offending source line."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no + 1}: {message}"
        super().__init__(message)
        self.line_no = line_no


class EmptyProgramError(GCodeError):
    """Program contains no extruding moves at all."""


@dataclass(frozen=True)
class GCodeCommand:
    """One interpreted or opaque source command."""

    code: str
    params: dict
    line_no: int
    comment: str | None = None


@dataclass(frozen=True)
class ExtrusionSegment:
    """A straight XY move that deposits material."""

    start: tuple
    end: tuple
    width: float
    feedrate: float
    extruding: bool = True

    def length(self):
        return math.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1])


@dataclass(frozen=True)
class LayerToolpath:
    """All extrusion segments printed at one z height."""

    index: int
    z: float
    segments: tuple
    bbox: tuple  # (xmin, ymin, xmax, ymax) in mm

    def __len__(self):
        return len(self.segments)


@dataclass(frozen=True)
class GCodeProgram:
    commands: tuple
    layers: tuple
    layer_height: float
    source_lines: tuple
    # source line index of each layer's final extruding move, used when
    # splicing per-layer blocks back into the original text
    layer_end_lines: tuple


def _split_line(raw, line_no):
    """Return (code, params, comment) or (None, None, comment) for blanks."""
    comment = None
    body = raw
    if ";" in raw:
        body, comment = raw.split(";", 1)
        comment = comment.strip() or None
    tokens = body.split()
    if not tokens:
        return None, None, comment

    head = tokens[0]
    m = _WORD_RE.match(head)
    if m is None or m.group(1).upper() not in ("G", "M", "T"):
        # opaque line: keep the first token as an uninterpreted opcode
        return head.upper(), {}, comment

    letter = m.group(1).upper()
    try:
        number = float(m.group(2))
    except ValueError:
        raise GCodeError(f"malformed opcode {head!r}", line_no)
    if not math.isfinite(number) or number != int(number) or number < 0:
        raise GCodeError(f"malformed opcode {head!r}", line_no)
    code = f"{letter}{int(number)}"

    if code not in KNOWN_OPCODES and code not in ARC_OPCODES and letter != "T":
        return code, {}, comment

    params = {}
    for tok in tokens[1:]:
        wm = _WORD_RE.match(tok)
        if wm is None:
            raise GCodeError(f"malformed word {tok!r}", line_no)
        try:
            value = float(wm.group(2))
        except ValueError:
            raise GCodeError(f"malformed word {tok!r}", line_no)
        if not math.isfinite(value):
            raise GCodeError(f"non-finite value in {tok!r}", line_no)
        params[wm.group(1).upper()] = value
    return code, params, comment


def parse_gcode(text, extrusion_width=DEFAULT_EXTRUSION_WIDTH):
    """Parse G-code text into a GCodeProgram with per-layer toolpaths.

    Layers are delimited by extrusion resuming at a strictly higher z;
    extruding below the current layer height raises. Only tool 0 with a
    positive E delta and actual XY motion produces geometry.
    """
    if extrusion_width <= 0:
        raise ValueError("extrusion_width must be positive")

    lines = text.splitlines()
    commands = []

    absolute = True
    x = y = z = 0.0
    tool = 0
    e_axis = {0: 0.0}
    feed = 0.0

    layers = []       # dicts: z, segments, end_line
    current = None

    for line_no, raw in enumerate(lines):
        code, params, comment = _split_line(raw, line_no)
        if code is None:
            continue
        commands.append(GCodeCommand(code, params, line_no, comment))

        if code in ARC_OPCODES:
            raise GCodeError("arc moves are not supported", line_no)

        if code == "G90":
            absolute = True
        elif code == "G91":
            absolute = False
        elif code == "G92":
            if not params:
                x = y = z = 0.0
                e_axis[tool] = 0.0
            else:
                if "X" in params:
                    x = params["X"]
                if "Y" in params:
                    y = params["Y"]
                if "Z" in params:
                    z = params["Z"]
                if "E" in params:
                    e_axis[tool] = params["E"]
        elif code.startswith("T") and code[1:].isdigit():
            tool = int(code[1:])
            e_axis.setdefault(tool, 0.0)
        elif code in ("G0", "G1"):
            if "F" in params:
                feed = params["F"]
            if absolute:
                nx = params.get("X", x)
                ny = params.get("Y", y)
                nz = params.get("Z", z)
            else:
                nx = x + params.get("X", 0.0)
                ny = y + params.get("Y", 0.0)
                nz = z + params.get("Z", 0.0)

            e_delta = 0.0
            if "E" in params:
                if absolute:
                    e_delta = params["E"] - e_axis[tool]
                    e_axis[tool] = params["E"]
                else:
                    e_delta = params["E"]
                    e_axis[tool] += e_delta

            moved_xy = (nx != x) or (ny != y)
            if e_delta > _E_EPS and moved_xy and tool == 0:
                if current is None or nz > current["z"] + _Z_EPS:
                    current = {"z": nz, "segments": [], "end_line": line_no}
                    layers.append(current)
                elif nz < current["z"] - _Z_EPS:
                    raise GCodeError(
                        f"extrusion at z={nz:g} below current layer z={current['z']:g}",
                        line_no,
                    )
                current["segments"].append(
                    ExtrusionSegment((x, y), (nx, ny), extrusion_width, feed)
                )
                current["end_line"] = line_no

            x, y, z = nx, ny, nz
        # G4 / M400 / M42 / unknown opcodes carry no tracked state

    if not layers:
        raise EmptyProgramError("program contains no extruding moves")

    toolpaths = []
    for i, layer in enumerate(layers):
        xs = [p for seg in layer["segments"] for p in (seg.start[0], seg.end[0])]
        ys = [p for seg in layer["segments"] for p in (seg.start[1], seg.end[1])]
        toolpaths.append(
            LayerToolpath(
                index=i,
                z=layer["z"],
                segments=tuple(layer["segments"]),
                bbox=(min(xs), min(ys), max(xs), max(ys)),
            )
        )

    zs = [t.z for t in toolpaths]
    if len(zs) >= 2:
        layer_height = statistics.median(b - a for a, b in zip(zs, zs[1:]))
    elif zs[0] > _Z_EPS:
        layer_height = zs[0]
    else:
        layer_height = DEFAULT_LAYER_HEIGHT

    return GCodeProgram(
        commands=tuple(commands),
        layers=tuple(toolpaths),
        layer_height=layer_height,
        source_lines=tuple(lines),
        layer_end_lines=tuple(layer["end_line"] for layer in layers),
    )


def _fmt(value):
    """Format a float the way slicers do: no trailing zeros, no exponent."""
    text = f"{value:.6f}".rstrip("0").rstrip(".")
    return text if text else "0"


def _modal_state_before(program, line_no):
    """Replay commands up to (and including) line_no: (absolute, feedrate)."""
    absolute = True
    feed = None
    for cmd in program.commands:
        if cmd.line_no > line_no:
            break
        if cmd.code == "G90":
            absolute = True
        elif cmd.code == "G91":
            absolute = False
        elif cmd.code in ("G0", "G1") and "F" in cmd.params:
            feed = cmd.params["F"]
    return absolute, feed


def inject_snapshot_block(program, lift_mm=80.0, retract_mm=20.0, dwell_ms=500):
    """Insert a snapshot block after each layer's final extruding move.

    The block syncs the planner, retracts, lifts the head clear of the
    part, parks it diagonally, drops the platform by one layer height on
    the auxiliary tool, fires the camera pin, then undoes every motion
    and restores the modal state so downstream geometry is untouched.
    Returns the modified G-code text.
    """
    if lift_mm <= 0:
        raise ValueError("lift_mm must be positive")
    if retract_mm < 0:
        raise ValueError("retract_mm must not be negative")
    if dwell_ms < 0:
        raise ValueError("dwell_ms must not be negative")

    lines = list(program.source_lines)
    for layer, end_line in sorted(
        zip(program.layers, program.layer_end_lines),
        key=lambda pair: pair[1],
        reverse=True,
    ):
        absolute_before, feed_before = _modal_state_before(program, end_line)
        block = ["M400", "G91"]
        if retract_mm > 0:
            block.append(f"G1 E-{_fmt(retract_mm)} F1000")
        block += [
            f"G1 Z{_fmt(lift_mm)}",
            "G1 X20 Y20",
            "T1",
            f"G1 E-{_fmt(program.layer_height)} F600",
            "M400",
            "M42 P57 S200",
            f"{SNAPSHOT_MARKER} {layer.index}",
            "G1 X-20 Y-20",
            f"G1 Z-{_fmt(lift_mm)}",
            f"G4 P{int(dwell_ms)}",
            "T0",
            "G90",
            "M42 P57 S0",
        ]
        if retract_mm > 0:
            block += ["G91", f"G1 E{_fmt(retract_mm)} F1000", "G90"]
        if not absolute_before:
            block.append("G91")
        if feed_before is not None:
            block.append(f"G1 F{_fmt(feed_before)}")
        lines[end_line + 1 : end_line + 1] = block

    return "\n".join(lines) + "\n"
