"""Fabrication-defect laboratory: enumerate defects, inject them into a
layout, verify function against a golden truth table, and compute tolerance
metrics (omission/deposition percentages, permissible displacement).

A defect campaign treats every instance as an independent work item; chunks
of structurally similar variants run through the engine's batched path.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .engine import (CoincidentCellsError, NonConvergenceError, SimParams,
                     TruthTable, batched_truth_tables, kink_matrix,
                     required_periods, truth_table)
from .model import Cell, CellFunction, CellKind, Layout, device_cells

DEFAULT_CAP_NM = 500.0
DEFAULT_STEP_NM = 1.0
DIRECTIONS = {
    "+x": (1.0, 0.0),
    "-x": (-1.0, 0.0),
    "+y": (0.0, 1.0),
    "-y": (0.0, -1.0),
}


class UnknownCellError(Exception):
    """A fault refers to a cell ID that is absent or not a device cell."""


class OccupiedSiteError(Exception):
    """A deposition targets a site that already holds a cell."""


class EmptyCampaignError(Exception):
    """A campaign with zero instances has no defined tolerance percentage."""


class Verdict(Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    NONCONVERGED = "NONCONVERGED"


class PairPolicy(Enum):
    ALL_PAIRS = "all-pairs"
    ADJACENT_PAIRS = "adjacent-pairs"


# --- fault instances ---------------------------------------------------------

@dataclass(frozen=True)
class Omit:
    """Omission of one or two device cells."""

    cell_ids: frozenset

    def __post_init__(self):
        object.__setattr__(self, "cell_ids", frozenset(self.cell_ids))
        if len(self.cell_ids) not in (1, 2):
            raise ValueError("Omit covers exactly one or two cells")

    def describe(self) -> str:
        return "+".join(str(i) for i in sorted(self.cell_ids))


@dataclass(frozen=True)
class Deposit:
    """An extra normal cell deposited at an unoccupied site."""

    center_nm: tuple
    zone: int

    def __post_init__(self):
        object.__setattr__(self, "center_nm",
                           (float(self.center_nm[0]), float(self.center_nm[1])))
        if self.zone not in (0, 1, 2, 3):
            raise ValueError(f"zone {self.zone} out of range 0..3")

    def describe(self) -> str:
        return f"({self.center_nm[0]:g},{self.center_nm[1]:g})@z{self.zone}"


@dataclass(frozen=True)
class Displace:
    """A cell moved from its intended position along a unit direction."""

    cell_id: int
    direction: tuple
    distance_nm: float

    def __post_init__(self):
        dx, dy = self.direction
        norm = math.hypot(dx, dy)
        if norm == 0.0:
            raise ValueError("direction must be a nonzero vector")
        object.__setattr__(self, "direction", (dx / norm, dy / norm))
        if self.distance_nm < 0:
            raise ValueError("distance_nm must be >= 0")

    def describe(self) -> str:
        dx, dy = self.direction
        return f"{self.cell_id}:({dx:g},{dy:g})x{self.distance_nm:g}nm"


def _instance_kind(fault) -> str:
    if isinstance(fault, Omit):
        return "omit1" if len(fault.cell_ids) == 1 else "omit2"
    if isinstance(fault, Deposit):
        return "deposit"
    return "displace"


# --- enumeration -------------------------------------------------------------

def enumerate_single_omissions(layout: Layout) -> list:
    """One single-cell omission per device cell, in cell ID order."""
    return [Omit(frozenset({i})) for i in device_cells(layout)]


def enumerate_double_omissions(layout: Layout,
                               policy: PairPolicy = PairPolicy.ADJACENT_PAIRS
                               ) -> list:
    """Unordered device-cell pairs; the adjacent policy keeps pairs whose
    center distance is at most 1.5x the pitch."""
    ids = device_cells(layout)
    cells = layout.cells
    limit2 = (1.5 * layout.pitch_nm) ** 2
    out = []
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            i, j = ids[a], ids[b]
            if policy is PairPolicy.ADJACENT_PAIRS:
                dx = cells[i].x_nm - cells[j].x_nm
                dy = cells[i].y_nm - cells[j].y_nm
                if dx * dx + dy * dy > limit2:
                    continue
            out.append(Omit(frozenset({i, j})))
    return out


def enumerate_depositions(layout: Layout, radius: int = 1) -> list:
    """One deposition per empty lattice site within ``radius`` grid steps of
    an existing cell (8-neighborhood at radius 1). The deposited cell takes
    the clock zone of the nearest existing cell (ties: lowest cell ID).
    Instances are deduplicated and ordered by (y, x)."""
    pitch = layout.pitch_nm
    occupied = {(round(c.x_nm, 6), round(c.y_nm, 6)) for c in layout.cells}
    sites = set()
    for c in layout.cells:
        for dx in range(-radius, radius + 1):
            for dy in range(-radius, radius + 1):
                if dx == 0 and dy == 0:
                    continue
                site = (round(c.x_nm + dx * pitch, 6),
                        round(c.y_nm + dy * pitch, 6))
                if site not in occupied:
                    sites.add(site)
    out = []
    for x, y in sorted(sites, key=lambda s: (s[1], s[0])):
        best = min(
            range(len(layout.cells)),
            key=lambda i: ((layout.cells[i].x_nm - x) ** 2
                           + (layout.cells[i].y_nm - y) ** 2, i))
        out.append(Deposit((x, y), layout.cells[best].zone))
    return out


# --- injection ---------------------------------------------------------------

def apply_fault(layout: Layout, fault) -> Layout:
    """Injected copy of ``layout``; the result may violate soft layout
    invariants (overlap, disconnection), which is the point of the exercise."""
    cells = list(layout.cells)
    if isinstance(fault, Omit):
        for i in fault.cell_ids:
            if not (0 <= i < len(cells)):
                raise UnknownCellError(f"cell {i} out of range")
            if cells[i].kind.function is not CellFunction.NORMAL:
                raise UnknownCellError(f"cell {i} is not a device cell")
        kept = [c for i, c in enumerate(cells) if i not in fault.cell_ids]
        return layout.replace_cells(kept)
    if isinstance(fault, Deposit):
        x, y = fault.center_nm
        for i, c in enumerate(cells):
            if round(c.x_nm, 6) == round(x, 6) and round(c.y_nm, 6) == round(y, 6):
                raise OccupiedSiteError(f"site ({x}, {y}) holds cell {i}")
        cells.append(Cell(x, y, fault.zone, CellKind.normal()))
        return layout.replace_cells(cells)
    if isinstance(fault, Displace):
        i = fault.cell_id
        if not (0 <= i < len(cells)):
            raise UnknownCellError(f"cell {i} out of range")
        dx, dy = fault.direction
        c = cells[i]
        cells[i] = Cell(c.x_nm + dx * fault.distance_nm,
                        c.y_nm + dy * fault.distance_nm, c.zone, c.kind)
        return layout.replace_cells(cells)
    raise TypeError(f"not a fault instance: {fault!r}")


# --- verdicts ----------------------------------------------------------------

def _compare(table: TruthTable, golden: TruthTable, threshold: float) -> Verdict:
    by_inputs = {r.inputs: r for r in table.rows}
    for want in golden.rows:
        got = by_inputs.get(want.inputs)
        if got is None:
            return Verdict.FAIL
        for g, w in zip(got.polarizations, want.polarizations):
            if abs(g) < threshold or (g > 0) != (w > 0):
                return Verdict.FAIL
    return Verdict.PASS


def check_function(faulty: Layout, golden: TruthTable,
                   params: SimParams = SimParams(),
                   periods: int | None = None) -> Verdict:
    """PASS iff every output sign matches the golden table at full strength;
    a layout that cannot relax (or has coincident cells) is not correct."""
    verdicts = _check_batch([faulty], golden, params, periods)
    return verdicts[0]


def _check_batch(variants: list, golden: TruthTable, params: SimParams,
                 periods: int | None) -> list:
    verdicts: list = [None] * len(variants)
    good, good_pos = [], []
    for pos, lay in enumerate(variants):
        try:
            kink_matrix(lay, params)
        except CoincidentCellsError:
            verdicts[pos] = Verdict.FAIL
            continue
        good.append(lay)
        good_pos.append(pos)
    if good:
        tables = batched_truth_tables(good, params, periods=periods)
        for pos, result in zip(good_pos, tables):
            if isinstance(result, NonConvergenceError):
                verdicts[pos] = Verdict.NONCONVERGED
            else:
                verdicts[pos] = _compare(result, golden,
                                         params.output_threshold)
    return verdicts


# --- campaigns ---------------------------------------------------------------

@dataclass(frozen=True)
class Campaign:
    base: Layout
    golden: TruthTable
    instances: tuple
    params: SimParams = SimParams()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.golden.passed:
            raise ValueError("golden table must be a PASS table")


@dataclass(frozen=True)
class CampaignReport:
    instances: tuple
    verdicts: tuple
    pass_count: int
    total: int

    @property
    def tolerance_percent(self) -> float:
        return 100.0 * self.pass_count / self.total

    def rows(self) -> list:
        return [(_instance_kind(f), f.describe(), v.value)
                for f, v in zip(self.instances, self.verdicts)]


def make_campaign(base: Layout, instances,
                  params: SimParams = SimParams()) -> Campaign:
    """Campaign over ``instances`` with a freshly computed golden table."""
    return Campaign(base, truth_table(base, params), tuple(instances), params)


def _campaign_chunk(base: Layout, instances, params: SimParams,
                    periods: int) -> list:
    golden = truth_table(base, params)
    variants = [apply_fault(base, f) for f in instances]
    return _check_batch(variants, golden, params, periods)


def run_campaign(campaign: Campaign, jobs: int = 1,
                 chunk_size: int = 24) -> CampaignReport:
    """Verdict for every instance. Instances are independent; verdicts do
    not depend on chunking or on the number of worker processes."""
    if not campaign.instances:
        raise EmptyCampaignError("campaign has no fault instances")
    params = campaign.params
    periods = required_periods(campaign.base, params)
    chunks = [campaign.instances[i:i + chunk_size]
              for i in range(0, len(campaign.instances), chunk_size)]
    if jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(
                _campaign_chunk_star,
                [(campaign.base, chunk, params, periods) for chunk in chunks]))
    else:
        parts = [
            _check_batch([apply_fault(campaign.base, f) for f in chunk],
                         campaign.golden, params, periods)
            for chunk in chunks]
    verdicts = tuple(v for part in parts for v in part)
    passes = sum(v is Verdict.PASS for v in verdicts)
    return CampaignReport(campaign.instances, verdicts, passes,
                          len(verdicts))


def _campaign_chunk_star(args):
    return _campaign_chunk(*args)


# --- displacement ------------------------------------------------------------

@dataclass(frozen=True)
class DisplacementRecord:
    """Per-direction permissible displacement of one device cell (nm);
    the cell-level figure is the minimum over directions."""

    cell_id: int
    per_direction: dict = field(default_factory=dict)

    @property
    def permissible_nm(self) -> float:
        return min(self.per_direction.values())


@dataclass(frozen=True)
class DisplacementSummary:
    records: tuple
    thresholds: tuple
    percentages: dict

    def percent_at(self, threshold: float) -> float:
        return self.percentages[threshold]


def _decoupled(layout: Layout, cell_id: int, x: float, y: float,
               radius_nm: float) -> bool:
    r2 = radius_nm * radius_nm
    return all((c.x_nm - x) ** 2 + (c.y_nm - y) ** 2 > r2
               for i, c in enumerate(layout.cells) if i != cell_id)


def _check_chunked(variants: list, golden: TruthTable, params: SimParams,
                   periods: int, chunk_size: int) -> list:
    out: list = []
    for start in range(0, len(variants), chunk_size):
        out.extend(_check_batch(variants[start:start + chunk_size], golden,
                                params, periods))
    return out


def _scan_many(layout: Layout, items, distances, golden: TruthTable,
               params: SimParams, periods: int, chunk_size: int = 32) -> list:
    """First-failure scans for many (cell_id, direction) items at once.

    Each item walks the shared distance grid until its first failing point
    (passing is not assumed monotone); per round, the live frontier across
    all items is checked in batches. Returns the last passing distance per
    item (0.0 when the first point already fails)."""
    cells = layout.cells
    n = len(items)
    idx = [0] * n
    last = [0.0] * n
    alive = [True] * n
    omit_cache: dict = {}
    while True:
        active = [k for k in range(n) if alive[k] and idx[k] < len(distances)]
        if not active:
            return last
        pend_pos, pend_variants = [], []
        shortcut: dict = {}
        for k in active:
            cid, (dx, dy) = items[k]
            d = distances[idx[k]]
            x, y = cells[cid].x_nm + dx * d, cells[cid].y_nm + dy * d
            if _decoupled(layout, cid, x, y, params.radius_of_effect_nm):
                # beyond the radius the displaced cell has zero coupling to
                # everything: the remaining network relaxes exactly as if
                # the cell were omitted
                shortcut[k] = cid
            else:
                pend_pos.append(k)
                pend_variants.append(
                    apply_fault(layout, Displace(cid, (dx, dy), d)))
        missing = sorted({c for c in shortcut.values() if c not in omit_cache})
        if missing:
            omit_variants = [apply_fault(layout, Omit(frozenset({c})))
                             for c in missing]
            for c, v in zip(missing, _check_chunked(
                    omit_variants, golden, params, periods, chunk_size)):
                omit_cache[c] = v
        verdicts = dict(zip(pend_pos, _check_chunked(
            pend_variants, golden, params, periods, chunk_size)))
        for k in active:
            v = verdicts[k] if k in verdicts else omit_cache[shortcut[k]]
            if v is Verdict.PASS:
                last[k] = distances[idx[k]]
                idx[k] += 1
            else:
                alive[k] = False


def permissible_displacement(layout: Layout, cell_id: int, direction,
                             params: SimParams = SimParams(),
                             step_nm: float = DEFAULT_STEP_NM,
                             cap_nm: float = DEFAULT_CAP_NM,
                             golden: TruthTable | None = None) -> float:
    """Largest displacement of ``cell_id`` along ``direction`` (unit vector)
    that keeps the full truth table correct, scanned in ``step_nm``
    increments up to ``cap_nm``."""
    if not (0 <= cell_id < len(layout.cells)):
        raise UnknownCellError(f"cell {cell_id} out of range")
    if layout.cells[cell_id].kind.function is not CellFunction.NORMAL:
        raise UnknownCellError(f"cell {cell_id} is not a device cell")
    if step_nm <= 0 or cap_nm <= 0:
        return 0.0
    dx, dy = direction
    norm = math.hypot(dx, dy)
    direction = (dx / norm, dy / norm)
    if golden is None:
        golden = truth_table(layout, params)
    periods = required_periods(layout, params)
    distances = _scan_grid(step_nm, cap_nm)
    best, = _scan_many(layout, [(cell_id, direction)], distances, golden,
                       params, periods)
    return min(best, cap_nm)


def _scan_grid(step_nm: float, cap_nm: float) -> list:
    steps = int(cap_nm / step_nm)
    distances = [step_nm * k for k in range(1, steps + 1)]
    if distances and distances[-1] < cap_nm:
        distances.append(cap_nm)
    return distances


def displacement_record(layout: Layout, cell_id: int,
                        params: SimParams = SimParams(),
                        step_nm: float = DEFAULT_STEP_NM,
                        cap_nm: float = DEFAULT_CAP_NM,
                        golden: TruthTable | None = None) -> DisplacementRecord:
    if golden is None:
        golden = truth_table(layout, params)
    return _summary_chunk(layout, [cell_id], params, step_nm, cap_nm,
                          golden)[0]


def _summary_chunk(layout: Layout, ids, params: SimParams, step_nm: float,
                   cap_nm: float, golden: TruthTable | None = None) -> list:
    if golden is None:
        golden = truth_table(layout, params)
    periods = required_periods(layout, params)
    labels = sorted(DIRECTIONS)
    items = [(i, DIRECTIONS[lb]) for i in ids for lb in labels]
    if step_nm <= 0 or cap_nm <= 0:
        best = [0.0] * len(items)
    else:
        best = _scan_many(layout, items, _scan_grid(step_nm, cap_nm), golden,
                          params, periods)
    records = []
    for j, i in enumerate(ids):
        per_dir = {lb: min(best[j * len(labels) + k], cap_nm)
                   for k, lb in enumerate(labels)}
        records.append(DisplacementRecord(i, per_dir))
    return records


def _summary_chunk_star(args):
    return _summary_chunk(*args)


def displacement_summary(layout: Layout, thresholds=(10.0, 20.0, 500.0),
                         params: SimParams = SimParams(),
                         step_nm: float = DEFAULT_STEP_NM,
                         cap_nm: float | None = None,
                         jobs: int = 1) -> DisplacementSummary:
    """Percentage of device cells whose permissible displacement meets each
    threshold; directions swept are +x, -x, +y, -y. The scan cap defaults to
    the largest threshold (distances beyond it cannot change any
    percentage)."""
    thresholds = tuple(float(t) for t in thresholds)
    if cap_nm is None:
        cap_nm = max(thresholds) if thresholds else DEFAULT_CAP_NM
    ids = device_cells(layout)
    if jobs > 1 and len(ids) > 1:
        groups = [ids[i::jobs] for i in range(jobs)]
        groups = [g for g in groups if g]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(
                _summary_chunk_star,
                [(layout, g, params, step_nm, cap_nm) for g in groups]))
        records = [r for part in parts for r in part]
        records.sort(key=lambda r: r.cell_id)
    else:
        records = _summary_chunk(layout, ids, params, step_nm, cap_nm)
    percentages = {}
    for t in thresholds:
        if not records:
            percentages[t] = 0.0
        else:
            hits = sum(r.permissible_nm >= t for r in records)
            percentages[t] = 100.0 * hits / len(records)
    return DisplacementSummary(tuple(records), thresholds, percentages)
