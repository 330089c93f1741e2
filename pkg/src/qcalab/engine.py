"""Two-state intercellular-Hartree mean-field relaxation with four-phase
clocking.

Each cell is a four-dot square holding two mobile electrons plus a +e/2
neutralizing background per dot; polarization p in [-1, +1] encodes the
diagonal the electrons occupy. A cell responds to the polarization-weighted
sum of pairwise kink energies of its neighbors:

    p_i <- (E_i / 2 gamma) / sqrt(1 + (E_i / 2 gamma)^2),
    E_i = sum_j E_kink(i, j) * p_j

iterated to a fixed point, where gamma is the clock-controlled tunneling
energy of the cell's zone. The fixed point, not the iteration path, is the
contract; sweeps are synchronous (Jacobi) so batches of layouts vectorize.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import Cell, CellFunction, Layout, NoPathError, latency_phases

# CODATA values.
ELEMENTARY_CHARGE_C = 1.602176634e-19
VACUUM_PERMITTIVITY_F_PER_M = 8.8541878128e-12


class CoincidentCellsError(Exception):
    """Two cells share the same center; their kink energy is undefined."""


class NonConvergenceError(Exception):
    """Relaxation failed to reach the fixed point within the iteration cap."""

    def __init__(self, message, state=None, residual=None, sample_index=None):
        super().__init__(message)
        self.state = state
        self.residual = residual
        self.sample_index = sample_index


@dataclass(frozen=True)
class SimParams:
    """Physical and numeric knobs of the engine.

    ``dot_spacing_nm`` is the side of the square the four dots sit on,
    centered in the cell: half the cell size, leaving margin for the 5nm
    dots. ``gamma_high_J``/``gamma_low_J`` bound the four-phase clock.
    """

    cell_size_nm: float = 18.0
    gap_nm: float = 2.0
    dot_spacing_nm: float = 9.0
    radius_of_effect_nm: float = 65.0
    relative_permittivity: float = 12.9
    convergence_tolerance: float = 0.001
    samples: int = 50000
    max_iterations_per_sample: int = 2000
    gamma_high_J: float = 9.8e-22
    gamma_low_J: float = 3.8e-23
    output_threshold: float = 0.5
    periods_per_window: int = 2  # one warm-up period, read in the last

    def __post_init__(self):
        for name in ("cell_size_nm", "gap_nm", "dot_spacing_nm", "radius_of_effect_nm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.convergence_tolerance < 1:
            raise ValueError("convergence_tolerance must be in (0, 1)")
        if not self.gamma_high_J > self.gamma_low_J > 0:
            raise ValueError("need gamma_high_J > gamma_low_J > 0")
        if self.samples < 4 or self.max_iterations_per_sample < 1:
            raise ValueError("samples and max_iterations_per_sample must be positive")
        if self.periods_per_window < 2:
            raise ValueError("periods_per_window must be >= 2 (warm-up + read)")

    @property
    def pitch_nm(self) -> float:
        return self.cell_size_nm + self.gap_nm

    def with_(self, **kwargs) -> "SimParams":
        return replace(self, **kwargs)


@dataclass
class PolarizationState:
    """Per-cell polarizations after relaxation plus convergence bookkeeping."""

    p: np.ndarray
    converged: bool
    residual: float
    iterations: int


def _dot_positions(x_nm: float, y_nm: float, spacing_nm: float) -> np.ndarray:
    h = spacing_nm / 2.0
    # Order: the p=+1 diagonal first (NE, SW), then the p=-1 diagonal.
    return np.array([
        [x_nm + h, y_nm + h],
        [x_nm - h, y_nm - h],
        [x_nm + h, y_nm - h],
        [x_nm - h, y_nm + h],
    ])


def _dot_charges(polarization: float) -> np.ndarray:
    # Net dot charge in units of e: occupied dots carry -e + e/2, empty +e/2.
    if polarization > 0:
        return np.array([-0.5, -0.5, +0.5, +0.5])
    return np.array([+0.5, +0.5, -0.5, -0.5])


def kink_energy(cell_a: Cell, cell_b: Cell, params: SimParams = SimParams()) -> float:
    """Electrostatic cost difference (joules) between opposite and aligned
    polarizations of two four-dot cells.

    Positive values favor alignment (orthogonal neighbors); diagonal
    neighbors come out negative, which is what makes a diagonally placed
    chain invert. Zero beyond the radius of effect. Symmetric in arguments.
    """
    dx = cell_a.x_nm - cell_b.x_nm
    dy = cell_a.y_nm - cell_b.y_nm
    d2 = dx * dx + dy * dy
    if d2 == 0.0:
        raise CoincidentCellsError(
            f"cells at ({cell_a.x_nm}, {cell_a.y_nm}) coincide")
    if d2 > params.radius_of_effect_nm ** 2:
        return 0.0
    dots_a = _dot_positions(cell_a.x_nm, cell_a.y_nm, params.dot_spacing_nm)
    dots_b = _dot_positions(cell_b.x_nm, cell_b.y_nm, params.dot_spacing_nm)
    # Coulomb prefactor in J*nm for charges in units of e.
    k = ELEMENTARY_CHARGE_C ** 2 / (
        4.0 * math.pi * VACUUM_PERMITTIVITY_F_PER_M
        * params.relative_permittivity) * 1e9
    qa = _dot_charges(+1.0)
    r = np.linalg.norm(dots_a[:, None, :] - dots_b[None, :, :], axis=2)
    inv_r = 1.0 / r
    e_aligned = k * float(qa @ inv_r @ _dot_charges(+1.0))
    e_opposite = k * float(qa @ inv_r @ _dot_charges(-1.0))
    return e_opposite - e_aligned


def kink_matrix(layout: Layout, params: SimParams) -> np.ndarray:
    """Symmetric (n, n) matrix of pairwise kink energies, zero diagonal and
    zero beyond the radius of effect."""
    n = len(layout)
    xy = np.array([[c.x_nm, c.y_nm] for c in layout.cells], dtype=float).reshape(n, 2)
    h = params.dot_spacing_nm / 2.0
    offs = np.array([[h, h], [-h, -h], [h, -h], [-h, h]])
    q = np.array([-0.5, -0.5, 0.5, 0.5])
    dots = xy[:, None, :] + offs[None, :, :]  # (n, 4, 2)
    diff = dots[:, None, :, None, :] - dots[None, :, None, :, :]  # (n,n,4,4,2)
    r = np.sqrt((diff ** 2).sum(axis=-1))
    centers2 = ((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1)
    coincident = centers2 == 0.0
    coincident[np.diag_indices(n)] = False
    if coincident.any():
        i, j = np.argwhere(coincident)[0]
        raise CoincidentCellsError(f"cells {i} and {j} coincide")
    np.fill_diagonal(centers2, np.inf)
    with np.errstate(divide="ignore"):
        inv_r = np.where(r > 0, 1.0 / r, 0.0)
    k = ELEMENTARY_CHARGE_C ** 2 / (
        4.0 * math.pi * VACUUM_PERMITTIVITY_F_PER_M
        * params.relative_permittivity) * 1e9
    # E_opposite - E_aligned = -2 * sum q_i q_j / r with q_j of the aligned
    # configuration (flipping b's charges negates every term).
    e = np.einsum("a,ijab,b->ij", q, inv_r, q)
    ek = -2.0 * k * e
    ek[centers2 > params.radius_of_effect_nm ** 2] = 0.0
    return ek


# --- four-phase clock -------------------------------------------------------

_SWITCH, _HOLD, _RELEASE, _RELAX = 0, 1, 2, 3


def _phase_fraction(zone: int, sample, samples_per_period: int):
    return ((np.asarray(sample, dtype=float) / samples_per_period) - zone / 4.0) % 1.0


def clock_gamma(zone: int, sample, params: SimParams,
                samples_per_period: int | None = None):
    """Tunneling energy of ``zone`` at ``sample`` under the four-phase
    schedule: switch (high -> low ramp), hold (low), release (low -> high),
    relax (high); zone z lags zone z-1 by a quarter period.

    When ``samples_per_period`` is omitted, one period spans a quarter of the
    sample budget.
    """
    if zone not in (0, 1, 2, 3):
        raise ValueError(f"zone {zone} out of range 0..3")
    spp = samples_per_period if samples_per_period is not None else max(4, params.samples // 4)
    u = _phase_fraction(zone, sample, spp)
    hi, lo = params.gamma_high_J, params.gamma_low_J
    out = np.empty_like(u)
    seg = (u * 4).astype(int)
    frac = u * 4 - seg
    out[seg == _SWITCH] = hi + (lo - hi) * frac[seg == _SWITCH]
    out[seg == _HOLD] = lo
    out[seg == _RELEASE] = lo + (hi - lo) * frac[seg == _RELEASE]
    out[seg == _RELAX] = hi
    if np.isscalar(sample) or np.ndim(sample) == 0:
        return float(out)
    return out


def clock_phase(zone: int, sample, samples_per_period: int):
    """Phase segment index (0 switch, 1 hold, 2 release, 3 relax)."""
    u = _phase_fraction(zone, sample, samples_per_period)
    return (u * 4).astype(int)


def _gamma_table(params: SimParams, samples_per_period: int) -> np.ndarray:
    s = np.arange(samples_per_period)
    return np.stack([clock_gamma(z, s, params, samples_per_period) for z in range(4)])


# --- relaxation core --------------------------------------------------------

class _Prepared:
    """Engine-ready arrays for one layout: kink matrix, zones, clamp data."""

    def __init__(self, layout: Layout, params: SimParams):
        self.layout = layout
        self.params = params
        self.n = len(layout)
        self.E = kink_matrix(layout, params)
        self.zones = np.array([c.zone for c in layout.cells], dtype=int)
        self.free = np.ones(self.n, dtype=bool)
        self.fixed_vals = np.zeros(self.n)
        self.input_ids: dict[str, int] = {}
        self.output_ids: dict[str, int] = {}
        for i, c in enumerate(layout.cells):
            if c.kind.function is CellFunction.FIXED:
                self.free[i] = False
                self.fixed_vals[i] = c.kind.polarization
            elif c.kind.function is CellFunction.INPUT:
                self.free[i] = False
                self.input_ids[c.kind.name] = i
            elif c.kind.function is CellFunction.OUTPUT:
                self.output_ids[c.kind.name] = i

    def clamp_columns(self, assignments) -> np.ndarray:
        """(n, V) clamp values for a list of input assignments."""
        v = len(assignments)
        vals = np.tile(self.fixed_vals[:, None], (1, v))
        for col, assignment in enumerate(assignments):
            missing = set(self.input_ids) - set(assignment)
            if missing:
                raise ValueError(f"unassigned inputs: {sorted(missing)}")
            for name, value in assignment.items():
                if name not in self.input_ids:
                    raise ValueError(f"unknown input {name!r}")
                if value not in (-1, 1, -1.0, 1.0):
                    raise ValueError(f"input {name!r} must be +-1, got {value}")
                vals[self.input_ids[name], col] = float(value)
        return vals


def _sweep_to_fixed_point(E, inv2g, free, clamp, P, tol, max_iter):
    """Iterate synchronous sweeps until the largest per-element update falls
    below tol. Shapes: E (B,n,n), inv2g (B,n), free (B,n), clamp/P (B,n,V).
    Returns (P, residual per batch element, iterations)."""
    B, n = P.shape[0], P.shape[1]
    resid = np.full(B, np.inf)
    freef = free[..., None]
    # Fully synchronous sweeps admit stable oscillation modes on strongly
    # coupled layouts (flip-flop patterns on two-column wire ladders), so the
    # cells are split into two alternating half-sweeps; each half sees the
    # other's latest values, which breaks every such mode. The fixed point is
    # unchanged.
    half = (np.arange(n) % 2 == 0)[None, :, None]
    for it in range(1, max_iter + 1):
        Pold = P
        for mask in (half, ~half):
            x = np.matmul(E, P) * inv2g[..., None]
            Pn = x / np.sqrt(1.0 + x * x)
            Pn = np.where(freef, Pn, clamp)
            P = np.where(mask, Pn, P)
        resid = np.abs(P - Pold).reshape(B, -1).max(axis=1)
        if resid.max() < tol:
            return P, resid, it
    return P, resid, max_iter


def relax(layout: Layout, input_assignment: dict, gamma_per_zone: dict,
          params: SimParams = SimParams(),
          initial: np.ndarray | None = None) -> PolarizationState:
    """Relax a layout to its fixed point at a static clock configuration.

    ``gamma_per_zone`` maps zone index to tunneling energy in joules. Fixed
    and input cells are clamped and never updated.
    """
    prep = _Prepared(layout, params)
    clamp = prep.clamp_columns([input_assignment])
    gammas = np.array([gamma_per_zone[z] for z in prep.zones])
    if np.any(gammas <= 0):
        raise ValueError("gamma values must be positive")
    P0 = np.zeros((1, prep.n, 1)) if initial is None else initial.reshape(1, prep.n, 1).copy()
    P0 = np.where(prep.free[None, :, None], P0, clamp[None])
    P, resid, it = _sweep_to_fixed_point(
        prep.E[None], (0.5 / gammas)[None], prep.free[None], clamp[None],
        P0, params.convergence_tolerance, params.max_iterations_per_sample)
    state = PolarizationState(P[0, :, 0].copy(), bool(resid[0] < params.convergence_tolerance),
                              float(resid[0]), it)
    if not state.converged:
        raise NonConvergenceError(
            f"no fixed point within {params.max_iterations_per_sample} sweeps "
            f"(residual {state.residual:.3g})", state=state, residual=state.residual)
    return state


# --- clocked simulation -----------------------------------------------------

@dataclass
class Trace:
    """Per-sample record of the clock and of selected cell polarizations.

    One window of ``window_samples`` samples per input vector, in vector
    order; windows are simulated independently (a warm-up period at the head
    of each window absorbs the initial transient).
    """

    vectors: list[dict]
    window_samples: int
    samples_per_period: int
    gammas: np.ndarray            # (4, window_samples)
    recorded: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (total,)

    @property
    def total_samples(self) -> int:
        return self.window_samples * len(self.vectors)

    def window(self, index: int) -> slice:
        return slice(index * self.window_samples, (index + 1) * self.window_samples)


def required_periods(layout: Layout, params: SimParams) -> int:
    """Clock periods per vector window: enough for the deepest pipeline path
    to drain, so the output zone's final switch interval latches settled
    data. Never less than ``params.periods_per_window``."""
    try:
        phases = latency_phases(layout)
    except NoPathError:
        phases = 1
    return max(params.periods_per_window, -(-phases // 4))


def _window_geometry(params: SimParams, n_vectors: int,
                     periods: int | None = None) -> tuple[int, int]:
    periods = params.periods_per_window if periods is None else periods
    if params.samples < 4 * n_vectors:
        raise ValueError(
            f"samples={params.samples} too small for {n_vectors} vectors")
    budget = params.samples // n_vectors
    spp = (budget // periods) // 4 * 4
    if spp < 4:
        raise ValueError(
            f"samples={params.samples} cannot fit {periods} "
            f"clock periods per vector window for {n_vectors} vectors")
    return spp, spp * periods


def _simulate_prepared(preps: list[_Prepared], assignments: list[dict],
                       params: SimParams, record: list[list[int]] | None = None,
                       periods: int | None = None):
    """Clocked simulation of a batch of same-size layouts over the same input
    vectors. Returns (per-sample recorded polarizations, gamma table,
    geometry, nonconverged sample index per batch element or -1)."""
    if not assignments:
        raise ValueError("vector sequence must be nonempty")
    n = preps[0].n
    if any(p.n != n for p in preps):
        raise ValueError("batched layouts must have equal cell counts")
    B, V = len(preps), len(assignments)
    spp, window = _window_geometry(params, V, periods)
    gamma_table = _gamma_table(params, spp)

    E = np.stack([p.E for p in preps])
    free = np.stack([p.free for p in preps])
    clamp = np.stack([p.clamp_columns(assignments) for p in preps])
    zones = np.stack([p.zones for p in preps])

    P = np.where(free[..., None], 0.0, clamp)
    Pprev = P.copy()
    rec_ids = record if record is not None else [
        sorted(p.output_ids.values()) for p in preps]
    recorded = np.empty((B, max(len(r) for r in rec_ids) if rec_ids else 0, V, window))
    bad_sample = np.full(B, -1, dtype=int)
    tol = params.convergence_tolerance
    for s in range(window):
        inv2g = 0.5 / gamma_table[:, s % spp][zones]
        # warm start: linear extrapolation from the last two settled states
        guess = np.where(free[..., None], np.clip(2.0 * P - Pprev, -1.0, 1.0),
                         clamp)
        Pprev = P
        P, resid, _ = _sweep_to_fixed_point(
            E, inv2g, free, clamp, guess, tol, params.max_iterations_per_sample)
        newly_bad = (resid >= tol) & (bad_sample < 0)
        bad_sample[newly_bad] = s
        for b, ids in enumerate(rec_ids):
            recorded[b, :len(ids), :, s] = P[b, ids, :]
    return recorded, gamma_table, spp, window, bad_sample


def simulate(layout: Layout, vector_sequence: list[dict],
             params: SimParams = SimParams(),
             record_cells: list[int] | None = None) -> Trace:
    """Run the clocked engine over a sequence of input assignments.

    The sample budget is split evenly across vectors; each window spans
    ``periods_per_window`` whole clock periods (budget rounded down). The
    trace records output-cell polarizations (plus ``record_cells`` if given)
    at every sample.
    """
    prep = _Prepared(layout, params)
    out_ids = sorted(prep.output_ids.items())
    ids = [i for _, i in out_ids]
    names = [nm for nm, _ in out_ids]
    if record_cells:
        for i in record_cells:
            if i not in ids:
                ids.append(i)
                names.append(f"cell{i}")
    recorded, gamma_table, spp, window, bad = _simulate_prepared(
        [prep], vector_sequence, params, record=[ids],
        periods=required_periods(layout, params))
    if bad[0] >= 0:
        raise NonConvergenceError(
            f"relaxation did not converge at sample {bad[0]}",
            sample_index=int(bad[0]))
    # (V, window) -> concatenated per-vector windows in run order
    series = {nm: recorded[0, k].reshape(-1) for k, nm in enumerate(names)}
    return Trace(vectors=list(vector_sequence), window_samples=window,
                 samples_per_period=spp, gammas=gamma_table, recorded=series)


# --- truth tables -----------------------------------------------------------

@dataclass(frozen=True)
class TruthRow:
    inputs: tuple[int, ...]
    outputs: tuple[int, ...]
    polarizations: tuple[float, ...]


@dataclass(frozen=True)
class TruthTable:
    """Measured logic table: one row per input vector in ascending binary
    order (first input = most significant bit). ``passed`` is False when any
    row's output magnitude falls below the output threshold."""

    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    rows: tuple[TruthRow, ...]
    p_max: float
    passed: bool

    def output_bits(self, name: str | None = None) -> list[int]:
        idx = 0 if name is None else self.output_names.index(name)
        return [r.outputs[idx] for r in self.rows]


def input_vectors(input_names) -> list[dict]:
    """All 2^k assignments in ascending binary order, bit 1 -> +1."""
    names = list(input_names)
    out = []
    for bits in itertools.product((0, 1), repeat=len(names)):
        out.append({nm: (1.0 if b else -1.0) for nm, b in zip(names, bits)})
    return out


def _read_sample(zone: int, spp: int, window: int) -> int:
    """Last sample of the last complete switch interval of ``zone`` in a
    window: the zone has just reached minimum tunneling energy and its
    upstream zone is still holding, so the latched value is valid there."""
    s = np.arange(window)
    switching = clock_phase(zone, s, spp) == _SWITCH
    idx = np.nonzero(switching)[0]
    # trailing partial interval would end mid-ramp; drop it if present
    ends = idx[np.diff(np.append(idx, window + 1)) > 1]
    return int(ends[-1])


def _rows_from_recorded(recorded_b, out_zones, spp, window, vectors, input_names,
                        threshold):
    rows = []
    p_max = 0.0
    passed = True
    for v, vec in enumerate(vectors):
        ins = tuple(1 if vec[nm] > 0 else 0 for nm in input_names)
        pols = tuple(float(recorded_b[k, v, _read_sample(z, spp, window)])
                     for k, z in enumerate(out_zones))
        outs = tuple(1 if p > 0 else 0 for p in pols)
        p_max = max(p_max, max(abs(p) for p in pols))
        if any(abs(p) < threshold for p in pols):
            passed = False
        rows.append(TruthRow(ins, outs, pols))
    return rows, p_max, passed


def truth_table(layout: Layout, params: SimParams = SimParams()) -> TruthTable:
    """Simulate all 2^k input vectors and read each output in the hold phase
    of its clock zone at the end of the vector's window."""
    prep = _Prepared(layout, params)
    if not prep.input_ids or not prep.output_ids:
        raise ValueError("truth_table needs named inputs and outputs")
    input_names = tuple(sorted(prep.input_ids, key=lambda nm: prep.input_ids[nm]))
    output_names = tuple(sorted(prep.output_ids, key=lambda nm: prep.output_ids[nm]))
    vectors = input_vectors(input_names)
    ids = [prep.output_ids[nm] for nm in output_names]
    recorded, _, spp, window, bad = _simulate_prepared(
        [prep], vectors, params, record=[ids],
        periods=required_periods(layout, params))
    if bad[0] >= 0:
        raise NonConvergenceError(
            f"relaxation did not converge at sample {bad[0]}",
            sample_index=int(bad[0]))
    zones = [layout.cells[i].zone for i in ids]
    rows, p_max, passed = _rows_from_recorded(
        recorded[0], zones, spp, window, vectors, input_names,
        params.output_threshold)
    return TruthTable(input_names, output_names, tuple(rows), p_max, passed)


# --- batched variant runner --------------------------------------------------
#
# Fault campaigns simulate thousands of near-copies of one layout. The kink
# matrix is sparse (nothing couples beyond the radius of effect), so the
# batch path stacks all variants into one block-diagonal CSR matrix and
# works in float32; layouts of slightly different cell counts are padded
# with uncoupled dummy rows.

def _sweep_batch(halves, inv2g, P, tol, max_iter, B, ignore=None):
    """Block-diagonal CSR equivalent of :func:`_sweep_to_fixed_point`.

    ``halves`` holds two (A_half, row_ids) pairs covering the free rows in
    alternating order; clamped rows are never touched. Shapes: P (B*n, V),
    inv2g (B*n,). Elements flagged in ``ignore`` (already known not to
    converge) are excluded from the stopping criterion so one bad variant
    cannot pin the whole batch at the iteration cap. Returns (P, residual
    per batch element, iterations)."""
    resid = np.full(B, np.inf)
    for it in range(1, max_iter + 1):
        Pold = P.copy()
        for A_half, rows in halves:
            x = (A_half @ P) * inv2g[rows, None]
            P[rows] = x / np.sqrt(1.0 + x * x)
        resid = np.abs(P - Pold).reshape(B, -1).max(axis=1)
        checked = resid if ignore is None else np.where(ignore, 0.0, resid)
        if checked.max() < tol:
            return P, resid, it
    return P, resid, max_iter


def batched_truth_tables(layouts, params: SimParams = SimParams(),
                         periods: int | None = None):
    """Truth tables for a batch of structurally similar layouts.

    All layouts must expose the same input and output names (cell indices
    may differ). Entries that fail to relax yield a
    :class:`NonConvergenceError` instance in place of a table. ``periods``
    should come from :func:`required_periods` on the fault-free base so a
    defect cannot shrink its own evaluation window.
    """
    if not layouts:
        return []
    preps = [_Prepared(lay, params) for lay in layouts]
    input_names = tuple(sorted(preps[0].input_ids,
                               key=lambda nm: preps[0].input_ids[nm]))
    output_names = tuple(sorted(preps[0].output_ids,
                                key=lambda nm: preps[0].output_ids[nm]))
    for p in preps:
        if (set(p.input_ids) != set(input_names)
                or set(p.output_ids) != set(output_names)):
            raise ValueError("batched layouts must share input/output names")
    vectors = input_vectors(input_names)
    B, V = len(preps), len(vectors)
    n = max(p.n for p in preps)
    if periods is None:
        periods = required_periods(layouts[0], params)
    spp, window = _window_geometry(params, V, periods)
    gamma_table = _gamma_table(params, spp)

    from scipy import sparse

    blocks = []
    free = np.zeros((B, n), dtype=bool)
    clamp = np.zeros((B, n, V), dtype=np.float32)
    zones = np.zeros((B, n), dtype=int)
    for b, p in enumerate(preps):
        Eb = np.zeros((n, n))
        Eb[:p.n, :p.n] = p.E
        blocks.append(sparse.csr_matrix(Eb.astype(np.float32)))
        free[b, :p.n] = p.free
        clamp[b, :p.n, :] = p.clamp_columns(vectors)
        zones[b, :p.n] = p.zones
    A = sparse.block_diag(blocks, format="csr")
    free_rows = free.reshape(-1)
    clamp_rows = clamp.reshape(B * n, V)
    even = (np.arange(B * n) % n) % 2 == 0
    halves = tuple((A[rows], rows) for rows in
                   (np.nonzero(even & free_rows)[0],
                    np.nonzero(~even & free_rows)[0]))

    out_ids = np.array([[p.output_ids[nm] for nm in output_names]
                        for p in preps])                       # (B, n_out)
    out_zones = np.array([[lay.cells[i].zone for i in row]
                          for lay, row in zip(layouts, out_ids)])
    need = {int(_read_sample(z, spp, window)) for z in np.unique(out_zones)}

    P = np.where(free_rows[:, None], np.float32(0.0), clamp_rows)
    Pprev = P.copy()
    snapshots: dict[int, np.ndarray] = {}
    bad_sample = np.full(B, -1, dtype=int)
    tol = params.convergence_tolerance
    for s in range(window):
        inv2g = (0.5 / gamma_table[:, s % spp][zones]
                 ).astype(np.float32).reshape(-1)
        # warm start: linear extrapolation from the last two settled states
        # (initial guess only; the fixed point is unaffected)
        guess = np.where(free_rows[:, None],
                         np.clip(2.0 * P - Pprev, -1.0, 1.0), clamp_rows)
        Pprev = P
        P, resid, _ = _sweep_batch(halves, inv2g, guess, tol,
                                   params.max_iterations_per_sample, B,
                                   ignore=bad_sample >= 0)
        newly_bad = (resid >= tol) & (bad_sample < 0)
        bad_sample[newly_bad] = s
        if s in need:
            snapshots[s] = P.reshape(B, n, V).copy()

    results = []
    for b in range(B):
        if bad_sample[b] >= 0:
            results.append(NonConvergenceError(
                f"relaxation did not converge at sample {bad_sample[b]}",
                sample_index=int(bad_sample[b])))
            continue
        rows, p_max, passed = [], 0.0, True
        for v, vec in enumerate(vectors):
            ins = tuple(1 if vec[nm] > 0 else 0 for nm in input_names)
            pols = tuple(
                float(snapshots[int(_read_sample(int(z), spp, window))]
                      [b, i, v])
                for i, z in zip(out_ids[b], out_zones[b]))
            outs = tuple(1 if p > 0 else 0 for p in pols)
            p_max = max(p_max, max(abs(p) for p in pols))
            if any(abs(p) < params.output_threshold for p in pols):
                passed = False
            rows.append(TruthRow(ins, outs, pols))
        results.append(TruthTable(input_names, output_names, tuple(rows),
                                  p_max, passed))
    return results
