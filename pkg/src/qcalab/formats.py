"""Serialization and rendering: the native versioned JSON layout format, a
read-only QCADesigner 2.0 import subset, campaign report writers, and SVG
rendering of layouts with optional fault overlays.
"""

from __future__ import annotations

import csv
import io
import json
import math
from decimal import Decimal, ROUND_HALF_UP

from .model import Cell, CellFunction, CellKind, Layout, DEFAULT_PITCH_NM
from .faults import CampaignReport, DisplacementRecord

SCHEMA = "qca-layout/1"


class SyntaxError(ValueError):
    """Input is not well formed at the lexical level. Carries the byte
    offset of the failure when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(ValueError):
    """Document is well formed but a field is missing, mistyped, or
    duplicated; the message names the field."""


class InvariantError(ValueError):
    """Field values violate a layout invariant; the message names the
    offending field and cell index."""


class UnsupportedFeatureError(ValueError):
    """Import hit a declared-out-of-scope feature (multilayer, rotated)."""


# --- native JSON format ------------------------------------------------------

def _kind_to_json(kind: CellKind) -> dict:
    d: dict = {"kind": kind.function.value}
    if kind.name is not None:
        d["label"] = kind.name
    if kind.polarization is not None:
        d["polarization"] = kind.polarization
    return d


def write_layout(layout: Layout) -> str:
    cells = []
    for c in layout.cells:
        entry = {"x_nm": c.x_nm, "y_nm": c.y_nm, "zone": c.zone}
        entry.update(_kind_to_json(c.kind))
        cells.append(entry)
    doc = {"schema": SCHEMA, "name": layout.name,
           "pitch_nm": layout.pitch_nm, "cells": cells}
    return json.dumps(doc, indent=2)


def _require(doc: dict, field: str, types, where: str = "document"):
    if field not in doc:
        raise SchemaError(f"{where} is missing required field {field!r}")
    value = doc[field]
    if not isinstance(value, types) or isinstance(value, bool):
        raise SchemaError(f"field {field!r} in {where} has wrong type "
                          f"{type(value).__name__}")
    return value


def _parse_cell(entry, index: int) -> Cell:
    where = f"cells[{index}]"
    if not isinstance(entry, dict):
        raise SchemaError(f"{where} must be an object")
    x = _require(entry, "x_nm", (int, float), where)
    y = _require(entry, "y_nm", (int, float), where)
    zone = _require(entry, "zone", int, where)
    kind_name = _require(entry, "kind", str, where)
    label = entry.get("label")
    pol = entry.get("polarization")
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvariantError(f"field 'x_nm'/'y_nm' of {where} must be finite")
    if zone not in (0, 1, 2, 3):
        raise InvariantError(
            f"field 'zone' of cell {index} is {zone}, outside 0..3")
    try:
        fn = CellFunction(kind_name)
    except ValueError:
        raise SchemaError(
            f"field 'kind' of {where} has unknown value {kind_name!r}") from None
    try:
        if fn is CellFunction.FIXED:
            kind = CellKind.fixed(_require(entry, "polarization",
                                           (int, float), where))
        elif fn in (CellFunction.INPUT, CellFunction.OUTPUT):
            kind = CellKind(fn, name=_require(entry, "label", str, where))
        else:
            if label is not None or pol is not None:
                raise SchemaError(
                    f"normal cell {where} carries label/polarization")
            kind = CellKind.normal()
    except ValueError as exc:
        if isinstance(exc, (SchemaError, InvariantError)):
            raise
        raise InvariantError(
            f"field 'kind' of cell {index}: {exc}") from None
    return Cell(x, y, zone, kind)


def parse_layout(text: str) -> Layout:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SyntaxError(f"invalid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(doc, dict):
        raise SchemaError("document root must be an object")
    schema = _require(doc, "schema", str)
    if schema != SCHEMA:
        raise SchemaError(f"field 'schema' has unsupported value {schema!r}")
    name = _require(doc, "name", str)
    pitch = _require(doc, "pitch_nm", (int, float))
    if pitch <= 0:
        raise InvariantError("field 'pitch_nm' must be positive")
    raw_cells = _require(doc, "cells", list)
    cells = [_parse_cell(entry, i) for i, entry in enumerate(raw_cells)]
    try:
        return Layout(cells, name=name, pitch_nm=pitch)
    except ValueError as exc:
        # duplicate I/O names surface here as a schema problem
        raise SchemaError(f"field 'cells': {exc}") from None


def load_layout(path) -> Layout:
    with open(path) as fh:
        return parse_layout(fh.read())


def save_layout(layout: Layout, path) -> None:
    with open(path, "w") as fh:
        fh.write(write_layout(layout))
        fh.write("\n")


# --- QCADesigner 2.0 import subset -------------------------------------------

_QCA_FUNCTIONS = {
    "QCAD_CELL_NORMAL": CellFunction.NORMAL,
    "QCAD_CELL_INPUT": CellFunction.INPUT,
    "QCAD_CELL_OUTPUT": CellFunction.OUTPUT,
    "QCAD_CELL_FIXED": CellFunction.FIXED,
}


def _qca_blocks(text: str):
    """Parse the hierarchical [TYPE:X] ... [#TYPE:X] block stream into
    nested (type, props, children) tuples."""
    root: tuple = ("ROOT", {}, [])
    stack = [root]
    offset = 0
    opened_at = []
    for line in text.splitlines(keepends=True):
        start = offset
        offset += len(line.encode())
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("[#TYPE:"):
            name = stripped[7:-1]
            if len(stack) < 2 or stack[-1][0] != name:
                raise SyntaxError(
                    f"unexpected close tag [#TYPE:{name}]", offset=start)
            stack.pop()
            opened_at.pop()
        elif stripped.startswith("[TYPE:"):
            if not stripped.endswith("]"):
                raise SyntaxError("unterminated block tag", offset=start)
            block = (stripped[6:-1], {}, [])
            stack[-1][2].append(block)
            stack.append(block)
            opened_at.append(start)
        elif stripped.startswith("[") and stripped.endswith("]"):
            continue  # section markers like [VERSION]
        elif "=" in stripped:
            key, _, value = stripped.partition("=")
            stack[-1][1][key.strip()] = value.strip()
        else:
            raise SyntaxError(f"unparseable line {stripped!r}", offset=start)
    if len(stack) > 1:
        raise SyntaxError(
            f"unterminated [TYPE:{stack[-1][0]}] block", offset=opened_at[-1])
    return root


def _find_blocks(block, type_name: str):
    found = []
    for child in block[2]:
        if child[0] == type_name:
            found.append(child)
        found.extend(_find_blocks(child, type_name))
    return found


def _dot_polarization(dots) -> float:
    """Polarization from the two diagonals' dot charges."""
    q_main = q_anti = 0.0
    xs = [float(d[1]["x"]) for d in dots]
    ys = [float(d[1]["y"]) for d in dots]
    cx, cy = sum(xs) / len(xs), sum(ys) / len(ys)
    for d, x, y in zip(dots, xs, ys):
        q = float(d[1].get("charge", 0.0))
        if (x - cx) * (y - cy) > 0:
            q_main += q
        else:
            q_anti += q
    total = q_main + q_anti
    if total == 0:
        return 1.0
    return (q_anti - q_main) / total


def import_qca(text: str) -> Layout:
    """Import a QCADesigner v2 file: cell positions, clock zones, cell
    function, and labels. Single-layer unrotated designs only."""
    root = _qca_blocks(text)
    layers = [b for b in _find_blocks(root, "QCADLayer")
              if b[1].get("type") == "1"]
    cell_layers = [ly for ly in layers if _find_blocks(ly, "QCACell")]
    if len(cell_layers) > 1:
        raise UnsupportedFeatureError(
            "multilayer: design has cells on "
            f"{len(cell_layers)} layers, only single-layer import is supported")
    scope = cell_layers[0] if cell_layers else root
    cells = []
    for i, block in enumerate(_find_blocks(scope, "QCACell")):
        props = block[1]
        objs = [c for c in block[2] if c[0] == "QCADesignObject"]
        if not objs:
            raise SchemaError(f"cell {i} lacks a QCADesignObject position")
        obj = objs[0][1]
        x, y = float(obj["x"]), float(obj["y"])
        zone = int(props.get("cell_options.clock", 0)) % 4
        mode = props.get("cell_options.mode", "QCAD_CELL_MODE_NORMAL")
        dots = _find_blocks(block, "CELL_DOT")
        if mode == "QCAD_CELL_MODE_ROTATED" or any(
                abs(float(d[1]["x"]) - x) < 1e-9
                or abs(float(d[1]["y"]) - y) < 1e-9 for d in dots):
            raise UnsupportedFeatureError(
                f"rotated: cell {i} at ({x:g},{y:g}) uses the rotated dot "
                "arrangement, which is not supported")
        fn_name = props.get("cell_function", "QCAD_CELL_NORMAL")
        if fn_name not in _QCA_FUNCTIONS:
            raise SchemaError(
                f"cell {i} has unknown cell_function {fn_name!r}")
        fn = _QCA_FUNCTIONS[fn_name]
        label = None
        for lbl in _find_blocks(block, "LABEL"):
            for o in _find_blocks(lbl, "QCADesignObject") or [lbl]:
                if "psz_text" in o[1]:
                    label = o[1]["psz_text"]
            if "psz_text" in lbl[1]:
                label = lbl[1]["psz_text"]
        if fn in (CellFunction.INPUT, CellFunction.OUTPUT):
            if not label:
                label = f"io{i}"
            kind = CellKind(fn, name=label)
        elif fn is CellFunction.FIXED:
            pol = _dot_polarization(dots) if dots else 1.0
            kind = CellKind.fixed(1.0 if pol >= 0 else -1.0)
        else:
            kind = CellKind.normal()
        cells.append(Cell(x, y, zone, kind))
    return Layout(cells, name="imported", pitch_nm=DEFAULT_PITCH_NM)


# --- percentages and reports --------------------------------------------------

def format_percent(numerator: int, denominator: int) -> str:
    """Half-up percentage with exactly two decimals, e.g. 73/79 -> '92.41'."""
    if denominator <= 0:
        raise ValueError("denominator must be positive")
    pct = Decimal(100) * Decimal(numerator) / Decimal(denominator)
    return str(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def campaign_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["instance_kind", "detail", "verdict"])
    writer.writerows(report.rows())
    return buf.getvalue()


def campaign_json(report: CampaignReport) -> str:
    doc = {
        "pass_count": report.pass_count,
        "total": report.total,
        "tolerance_percent": format_percent(report.pass_count, report.total),
        "instances": [
            {"instance_kind": kind, "detail": detail, "verdict": verdict}
            for kind, detail, verdict in report.rows()],
    }
    return json.dumps(doc, indent=2)


def displacement_json(summary) -> str:
    total = len(summary.records)
    doc = {
        "thresholds_nm": list(summary.thresholds),
        "percentages": {
            str(t): {
                "hits": sum(r.permissible_nm >= t for r in summary.records),
                "total": total,
                "percent": format_percent(
                    sum(r.permissible_nm >= t for r in summary.records),
                    total),
            }
            for t in summary.thresholds},
        "cells": [
            {"cell_id": r.cell_id,
             "permissible_nm": r.permissible_nm,
             "per_direction": dict(sorted(r.per_direction.items()))}
            for r in summary.records],
    }
    return json.dumps(doc, indent=2)


# --- SVG rendering -------------------------------------------------------------

ZONE_COLORS = ("#4daf4a", "#984ea3", "#377eb8", "#e41a1c")
_VERDICT_COLORS = {"PASS": "#2ca02c", "FAIL": "#d62728",
                   "NONCONVERGED": "#ff7f0e"}


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def render_svg(layout: Layout, overlay=None, scale: float = 2.0) -> str:
    """Deterministic SVG: one square per cell colored by clock zone, a ring
    marker on inputs/outputs, a dot on fixed cells. An overlay colors cell
    outlines by campaign verdict (per displaced/omitted cell) or by
    permissible displacement bucket."""
    size = layout.cell_size_nm * scale
    pad = layout.pitch_nm * scale
    if layout.cells:
        xs = [c.x_nm * scale for c in layout.cells]
        ys = [c.y_nm * scale for c in layout.cells]
        x0, y0 = min(xs) - pad, min(ys) - pad
        w = max(xs) - min(xs) + 2 * pad
        h = max(ys) - min(ys) + 2 * pad
    else:
        x0 = y0 = 0.0
        w = h = pad
    outline = _overlay_outlines(layout, overlay)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{_fmt(x0)} {_fmt(y0)} {_fmt(w)} {_fmt(h)}" '
        f'width="{_fmt(w)}" height="{_fmt(h)}">']
    for i, c in enumerate(layout.cells):
        cx, cy = c.x_nm * scale, c.y_nm * scale
        stroke = outline.get(i, "#333333")
        wide = 3.0 if i in outline else 1.0
        parts.append(
            f'<rect x="{_fmt(cx - size / 2)}" y="{_fmt(cy - size / 2)}" '
            f'width="{_fmt(size)}" height="{_fmt(size)}" '
            f'fill="{ZONE_COLORS[c.zone]}" stroke="{stroke}" '
            f'stroke-width="{_fmt(wide)}"/>')
        if c.kind.function in (CellFunction.INPUT, CellFunction.OUTPUT):
            parts.append(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" '
                f'r="{_fmt(size / 3)}" fill="none" stroke="#ffffff" '
                f'stroke-width="2"/>')
            parts.append(
                f'<text x="{_fmt(cx)}" y="{_fmt(cy + size)}" '
                f'font-size="{_fmt(size / 2)}" text-anchor="middle">'
                f'{c.kind.name}</text>')
        elif c.kind.function is CellFunction.FIXED:
            parts.append(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" '
                f'r="{_fmt(size / 6)}" fill="#ffffff"/>')
    parts.append("</svg>")
    return "\n".join(parts)


def _overlay_outlines(layout: Layout, overlay) -> dict:
    """Cell id -> outline color from a CampaignReport or an iterable of
    DisplacementRecord."""
    out: dict = {}
    if overlay is None:
        return out
    if isinstance(overlay, CampaignReport):
        # a cell keeps its worst verdict across instances that touch it
        rank = {"PASS": 0, "NONCONVERGED": 1, "FAIL": 2}
        worst: dict = {}
        for fault, verdict in zip(overlay.instances, overlay.verdicts):
            ids = getattr(fault, "cell_ids", None)
            if ids is None:
                cid = getattr(fault, "cell_id", None)
                ids = [cid] if cid is not None else []
            for cid in ids:
                v = verdict.value
                if rank[v] >= rank.get(worst.get(cid, "PASS"), 0):
                    worst[cid] = v
        return {cid: _VERDICT_COLORS[v] for cid, v in worst.items()}
    for record in overlay:
        nm = record.permissible_nm
        if nm >= 20:
            color = "#2ca02c"
        elif nm >= 10:
            color = "#ff7f0e"
        else:
            color = "#d62728"
        out[record.cell_id] = color
    return out
