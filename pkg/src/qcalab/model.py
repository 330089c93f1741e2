"""Layouts, cells, grid geometry, and layout-level metrics.

Coordinates are cell centers in nanometers. Built-in generators snap to a
20nm pitch grid (18nm cell body + 2nm gap). Cell IDs are list indices;
every enumeration order in the toolkit derives from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

# Geometry defaults shared across modules.
DEFAULT_CELL_SIZE_NM = 18.0
DEFAULT_PITCH_NM = 20.0

# Adjacency for connectivity / latency analysis (not physics, which uses the
# radius of effect): captures orthogonal and diagonal grid neighbors.
ADJACENCY_FACTOR = 1.5


class NoPathError(Exception):
    """No input connects to an output through the adjacency graph."""


class CellFunction(Enum):
    NORMAL = "normal"
    INPUT = "input"
    OUTPUT = "output"
    FIXED = "fixed"


@dataclass(frozen=True)
class CellKind:
    """Role of a cell: normal device cell, named input/output, or a
    polarization-clamped constant (exactly -1 or +1)."""

    function: CellFunction
    name: str | None = None
    polarization: float | None = None

    def __post_init__(self):
        if self.function in (CellFunction.INPUT, CellFunction.OUTPUT):
            if not self.name:
                raise ValueError(f"{self.function.value} cell needs a nonempty name")
        elif self.name is not None:
            raise ValueError("only input/output cells carry a name")
        if self.function is CellFunction.FIXED:
            if self.polarization not in (-1.0, 1.0):
                raise ValueError("fixed polarization must be exactly -1 or +1")
        elif self.polarization is not None:
            raise ValueError("only fixed cells carry a polarization")

    @staticmethod
    def normal() -> "CellKind":
        return CellKind(CellFunction.NORMAL)

    @staticmethod
    def input(name: str) -> "CellKind":
        return CellKind(CellFunction.INPUT, name=name)

    @staticmethod
    def output(name: str) -> "CellKind":
        return CellKind(CellFunction.OUTPUT, name=name)

    @staticmethod
    def fixed(polarization: float) -> "CellKind":
        return CellKind(CellFunction.FIXED, polarization=float(polarization))


@dataclass(frozen=True)
class Cell:
    """One QCA square: center position (nm), clock zone 0..3, and kind."""

    x_nm: float
    y_nm: float
    zone: int
    kind: CellKind = field(default_factory=CellKind.normal)

    def __post_init__(self):
        if not (math.isfinite(self.x_nm) and math.isfinite(self.y_nm)):
            raise ValueError("cell coordinates must be finite")
        if self.zone not in (0, 1, 2, 3):
            raise ValueError(f"clock zone {self.zone} out of range 0..3")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_nm, self.y_nm)

    def translated(self, dx_nm: float, dy_nm: float) -> "Cell":
        return Cell(self.x_nm + dx_nm, self.y_nm + dy_nm, self.zone, self.kind)


class Layout:
    """An immutable placed set of cells plus named input/output bindings.

    Cell IDs are indices into ``cells``. Construction enforces hard
    invariants (zone range, fixed polarization, nonempty unique I/O names);
    soft findings (overlap, disconnection) are reported by
    :func:`validate_layout`.
    """

    def __init__(self, cells, name: str = "", pitch_nm: float = DEFAULT_PITCH_NM,
                 cell_size_nm: float = DEFAULT_CELL_SIZE_NM):
        self._cells = tuple(cells)
        self.name = name
        self.pitch_nm = float(pitch_nm)
        self.cell_size_nm = float(cell_size_nm)
        seen: dict[tuple[str, str], int] = {}
        for i, c in enumerate(self._cells):
            if not isinstance(c, Cell):
                raise TypeError(f"cell {i} is not a Cell")
            if c.kind.function in (CellFunction.INPUT, CellFunction.OUTPUT):
                key = (c.kind.function.value, c.kind.name)
                if key in seen:
                    raise ValueError(
                        f"duplicate {key[0]} name {key[1]!r} (cells {seen[key]} and {i})")
                seen[key] = i

    @property
    def cells(self) -> tuple[Cell, ...]:
        return self._cells

    def __len__(self) -> int:
        return len(self._cells)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Layout):
            return NotImplemented
        return (self._cells == other._cells and self.name == other.name
                and self.pitch_nm == other.pitch_nm)

    def __repr__(self) -> str:
        return f"Layout({self.name!r}, {len(self)} cells)"

    def input_names(self) -> list[str]:
        return [c.kind.name for c in self._cells
                if c.kind.function is CellFunction.INPUT]

    def output_names(self) -> list[str]:
        return [c.kind.name for c in self._cells
                if c.kind.function is CellFunction.OUTPUT]

    def cells_of(self, function: CellFunction) -> list[int]:
        return [i for i, c in enumerate(self._cells) if c.kind.function is function]

    def replace_cells(self, cells, name: str | None = None) -> "Layout":
        return Layout(cells, name=self.name if name is None else name,
                      pitch_nm=self.pitch_nm, cell_size_nm=self.cell_size_nm)

    def translated(self, dx_nm: float, dy_nm: float) -> "Layout":
        return self.replace_cells(c.translated(dx_nm, dy_nm) for c in self._cells)


@dataclass(frozen=True)
class Finding:
    """One validation finding; category is a stable machine-readable tag."""

    category: str
    message: str
    cell_ids: tuple[int, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def by_category(self, category: str) -> list[Finding]:
        return [f for f in self.findings if f.category == category]


class Crossover(Enum):
    NONE = "none"
    COPLANAR = "coplanar"
    MULTILAYER = "multilayer"


@dataclass(frozen=True)
class LayoutMetrics:
    cell_count: int
    area_um2: float
    latency_phases: int
    crossover: Crossover = Crossover.NONE


def cells_overlap(a: Cell, b: Cell, cell_size_nm: float) -> bool:
    """Axis-aligned cell bodies overlap unless separated by at least one
    cell width along some axis."""
    return (abs(a.x_nm - b.x_nm) < cell_size_nm
            and abs(a.y_nm - b.y_nm) < cell_size_nm)


def adjacency(layout: Layout) -> list[list[int]]:
    """Neighbor lists under the connectivity rule (distance <= 1.5 * pitch)."""
    cells = layout.cells
    limit = ADJACENCY_FACTOR * layout.pitch_nm
    limit2 = limit * limit
    neighbors: list[list[int]] = [[] for _ in cells]
    for i, a in enumerate(cells):
        for j in range(i + 1, len(cells)):
            b = cells[j]
            dx = a.x_nm - b.x_nm
            dy = a.y_nm - b.y_nm
            if dx * dx + dy * dy <= limit2:
                neighbors[i].append(j)
                neighbors[j].append(i)
    return neighbors


def device_cells(layout: Layout) -> list[int]:
    """IDs of the Normal-kind cells, in layout order.

    These are the cells over which fault statistics are computed (inputs,
    outputs and fixed-polarization cells are excluded).
    """
    return layout.cells_of(CellFunction.NORMAL)


def validate_layout(layout: Layout, radius_of_effect_nm: float = 65.0) -> ValidationReport:
    """Report overlaps, out-of-range zones, duplicate I/O names, missing I/O
    and disconnected cells. All findings are report entries, not failures."""
    findings: list[Finding] = []
    cells = layout.cells
    for i, a in enumerate(cells):
        if a.zone not in (0, 1, 2, 3):
            findings.append(Finding("zone-range", f"cell {i} zone {a.zone} out of range", (i,)))
        for j in range(i + 1, len(cells)):
            if cells_overlap(a, cells[j], layout.cell_size_nm):
                findings.append(Finding(
                    "overlap", f"cells {i} and {j} overlap at "
                    f"({a.x_nm}, {a.y_nm}) / ({cells[j].x_nm}, {cells[j].y_nm})", (i, j)))
    names: dict[tuple[str, str], list[int]] = {}
    for i, c in enumerate(cells):
        if c.kind.function in (CellFunction.INPUT, CellFunction.OUTPUT):
            names.setdefault((c.kind.function.value, c.kind.name or ""), []).append(i)
    for (func, name), ids in names.items():
        if len(ids) > 1:
            findings.append(Finding("duplicate-name",
                                    f"{func} name {name!r} used by cells {ids}", tuple(ids)))
        if not name:
            findings.append(Finding("empty-name", f"{func} cell {ids[0]} has empty name",
                                    tuple(ids)))
    if not layout.cells_of(CellFunction.INPUT):
        findings.append(Finding("no-input", "layout has no input cell"))
    if not layout.cells_of(CellFunction.OUTPUT):
        findings.append(Finding("no-output", "layout has no output cell"))
    r2 = radius_of_effect_nm * radius_of_effect_nm
    if len(cells) > 1:
        for i, a in enumerate(cells):
            if not any(
                (a.x_nm - b.x_nm) ** 2 + (a.y_nm - b.y_nm) ** 2 <= r2
                for j, b in enumerate(cells) if j != i
            ):
                findings.append(Finding(
                    "disconnected",
                    f"cell {i} has no neighbor within {radius_of_effect_nm}nm", (i,)))
    return ValidationReport(tuple(findings))


def _zone_components(layout: Layout, neighbors: list[list[int]]) -> tuple[list[int], list[set[int]]]:
    """Connected components of same-zone cells; returns (component id per
    cell, successor component sets under zone+1 mod 4 adjacency)."""
    cells = layout.cells
    comp = [-1] * len(cells)
    n_comp = 0
    for start in range(len(cells)):
        if comp[start] >= 0:
            continue
        stack = [start]
        comp[start] = n_comp
        while stack:
            i = stack.pop()
            for j in neighbors[i]:
                if comp[j] < 0 and cells[j].zone == cells[i].zone:
                    comp[j] = n_comp
                    stack.append(j)
        n_comp += 1
    succ: list[set[int]] = [set() for _ in range(n_comp)]
    for i in range(len(cells)):
        for j in neighbors[i]:
            if cells[j].zone == (cells[i].zone + 1) % 4:
                succ[comp[i]].add(comp[j])
    return comp, succ


def latency_phases(layout: Layout) -> int:
    """Clock-phase count input -> output: the number of forward (zone+1 mod 4)
    boundaries crossed plus one, maximized over adjacency paths.

    This is an estimate; the figure is computed on the graph of same-zone
    components, which must be acyclic under forward-zone edges.
    """
    neighbors = adjacency(layout)
    comp, succ = _zone_components(layout, neighbors)
    inputs = {comp[i] for i in layout.cells_of(CellFunction.INPUT)}
    outputs = {comp[i] for i in layout.cells_of(CellFunction.OUTPUT)}
    if not inputs or not outputs:
        raise NoPathError("layout needs at least one input and one output")
    # Longest forward-transition count from an input component to an output
    # component, via memoized DFS over the component DAG.
    best: dict[int, int] = {}
    on_stack: set[int] = set()

    def depth(c: int) -> int:
        if c in best:
            return best[c]
        if c in on_stack:
            raise NoPathError("clock-zone cycle in adjacency graph")
        on_stack.add(c)
        d = 0 if c in outputs else -1
        for s in succ[c]:
            sd = depth(s)
            if sd >= 0:
                d = max(d, sd + 1)
        on_stack.discard(c)
        best[c] = d
        return d

    reachable = [depth(c) for c in inputs]
    top = max(reachable, default=-1)
    if top < 0:
        raise NoPathError("no input connects to an output through the adjacency graph")
    return top + 1


def layout_metrics(layout: Layout) -> LayoutMetrics:
    """Cell count, bounding-box area (including the cell body) in um^2, and
    the latency estimate."""
    cells = layout.cells
    if not cells:
        raise NoPathError("empty layout has no input/output path")
    xs = [c.x_nm for c in cells]
    ys = [c.y_nm for c in cells]
    w_nm = (max(xs) - min(xs)) + layout.cell_size_nm
    h_nm = (max(ys) - min(ys)) + layout.cell_size_nm
    return LayoutMetrics(
        cell_count=len(cells),
        area_um2=w_nm * h_nm * 1e-6,
        latency_phases=latency_phases(layout),
    )
