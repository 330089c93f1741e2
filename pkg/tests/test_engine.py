import math

import numpy as np
import pytest
import scipy.constants as sc
from hypothesis import given, strategies as st

from qcalab.engine import (CoincidentCellsError, NonConvergenceError,
                           SimParams, clock_gamma, clock_phase, input_vectors,
                           kink_energy, kink_matrix, relax, required_periods,
                           simulate, truth_table, batched_truth_tables)
from qcalab.model import Cell, CellKind, Layout

from conftest import FAST, grid_cell, wire_layout

PARAMS = SimParams()

# independently derived pairwise coupling values (brute-force Coulomb sum
# with scipy's physical constants), frozen as regression anchors
EK_ADJACENT_20NM_J = 2.3770e-22
EK_DIAGONAL_20NM_J = -5.1681e-23


def oracle_kink(ax, ay, bx, by, spacing_nm=9.0, eps_r=12.9):
    """16-term Coulomb sum over the two 4-dot cells: cost of opposite minus
    aligned polarization. Written independently of the engine."""
    pref = sc.e ** 2 / (4.0 * math.pi * sc.epsilon_0 * eps_r) * 1e9

    def dots(x, y, p):
        h = spacing_nm / 2.0
        pos = [(x + h, y + h), (x - h, y - h), (x + h, y - h), (x - h, y + h)]
        charge = [-0.5, -0.5, 0.5, 0.5] if p > 0 else [0.5, 0.5, -0.5, -0.5]
        return pos, charge

    def pair_energy(pa, pb):
        (pos_a, q_a) = dots(ax, ay, pa)
        (pos_b, q_b) = dots(bx, by, pb)
        total = 0.0
        for (x1, y1), q1 in zip(pos_a, q_a):
            for (x2, y2), q2 in zip(pos_b, q_b):
                total += pref * q1 * q2 / math.hypot(x1 - x2, y1 - y2)
        return total

    return pair_energy(1, -1) - pair_energy(1, 1)


class TestKinkEnergy:
    def test_adjacent_positive_matches_oracle(self):
        got = kink_energy(Cell(0, 0, 0), Cell(20, 0, 0), PARAMS)
        assert got > 0
        assert got == pytest.approx(oracle_kink(0, 0, 20, 0), rel=1e-12)
        assert got == pytest.approx(EK_ADJACENT_20NM_J, rel=1e-4)

    def test_diagonal_negative_matches_oracle(self):
        got = kink_energy(Cell(0, 0, 0), Cell(20, 20, 0), PARAMS)
        assert got < 0
        assert got == pytest.approx(oracle_kink(0, 0, 20, 20), rel=1e-12)
        assert got == pytest.approx(EK_DIAGONAL_20NM_J, rel=1e-4)

    def test_zero_outside_radius_of_effect(self):
        assert kink_energy(Cell(0, 0, 0), Cell(100, 0, 0), PARAMS) == 0.0

    def test_coincident_centers_error(self):
        with pytest.raises(CoincidentCellsError):
            kink_energy(Cell(5, 5, 0), Cell(5, 5, 1), PARAMS)

    @given(st.integers(1, 3), st.integers(-3, 3), st.floats(-500, 500),
           st.floats(-500, 500))
    def test_symmetry_and_translation(self, i, j, dx, dy):
        a, b = Cell(0, 0, 0), Cell(20.0 * i, 20.0 * j, 0)
        e_ab = kink_energy(a, b, PARAMS)
        assert e_ab == pytest.approx(kink_energy(b, a, PARAMS), rel=1e-12)
        moved = kink_energy(a.translated(dx, dy), b.translated(dx, dy),
                            PARAMS)
        assert moved == pytest.approx(e_ab, rel=1e-9, abs=1e-40)

    def test_magnitude_decays_along_axis(self):
        mags = [abs(kink_energy(Cell(0, 0, 0), Cell(20.0 * k, 0, 0), PARAMS))
                for k in (1, 2, 3)]
        assert mags[0] > mags[1] > mags[2] > 0

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(3)
        cells = [Cell(20.0 * int(x), 20.0 * int(y), 0)
                 for x, y in {(int(a), int(b))
                              for a, b in rng.integers(0, 5, size=(12, 2))}]
        lay = Layout(cells)
        mat = kink_matrix(lay, PARAMS)
        assert np.allclose(mat, mat.T)
        for i in range(len(cells)):
            assert mat[i, i] == 0.0
            for j in range(i + 1, len(cells)):
                assert mat[i, j] == pytest.approx(
                    kink_energy(cells[i], cells[j], PARAMS),
                    rel=1e-9, abs=1e-40)

    def test_matrix_coincident_error(self):
        lay = Layout([Cell(0, 0, 0), Cell(0, 0, 1)])
        with pytest.raises(CoincidentCellsError):
            kink_matrix(lay, PARAMS)


class TestClock:
    SPP = 400

    def test_hold_midpoint_is_gamma_low(self):
        # zone 0 holds over the second quarter of its period
        s = self.SPP // 4 + self.SPP // 8
        assert clock_gamma(0, s, PARAMS, self.SPP) == PARAMS.gamma_low_J

    def test_zone_lag_quarter_period(self):
        for s in range(self.SPP):
            assert clock_gamma(1, s, PARAMS, self.SPP) == pytest.approx(
                clock_gamma(0, s - self.SPP // 4, PARAMS, self.SPP))

    def test_full_period_spans_bounds(self):
        vals = clock_gamma(2, np.arange(self.SPP), PARAMS, self.SPP)
        assert vals.min() == PARAMS.gamma_low_J
        assert vals.max() == PARAMS.gamma_high_J
        assert np.all(vals >= PARAMS.gamma_low_J)
        assert np.all(vals <= PARAMS.gamma_high_J)

    def test_phase_segments_cycle(self):
        s = np.arange(self.SPP)
        phases = clock_phase(0, s, self.SPP)
        assert set(np.unique(phases)) == {0, 1, 2, 3}
        assert np.all(np.bincount(phases) == self.SPP // 4)

    def test_zone_out_of_range(self):
        with pytest.raises(ValueError):
            clock_gamma(4, 0, PARAMS)


HOLD = {z: PARAMS.gamma_low_J for z in range(4)}
RELAXED = {z: PARAMS.gamma_high_J for z in range(4)}


class TestRelax:
    def test_wire_follows_driver(self):
        lay = wire_layout(3)
        state = relax(lay, {"A": 1.0}, HOLD, PARAMS)
        assert np.all(state.p > 0)
        assert np.all(np.abs(state.p) >= 0.9)
        flipped = relax(lay, {"A": -1.0}, HOLD, PARAMS)
        assert np.all(flipped.p < 0)

    def test_high_gamma_suppresses_device_cells(self):
        lay = wire_layout(4)
        state = relax(lay, {"A": 1.0}, RELAXED, PARAMS)
        assert np.all(np.abs(state.p[1:]) < 0.1)

    def test_majority_sign(self):
        from qcalab.gates import by_name
        lay = by_name("mv")
        names = lay.input_names()
        out = [i for i, c in enumerate(lay.cells)
               if c.kind.function.value == "output"][0]
        for bits in ((1, 1, -1), (1, -1, 1), (-1, 1, 1), (-1, -1, 1)):
            assign = dict(zip(sorted(names), bits))
            state = relax(lay, assign, HOLD, PARAMS)
            want = 1.0 if sum(bits) > 0 else -1.0
            assert math.copysign(1.0, state.p[out]) == want

    def test_inputs_and_fixed_clamped_exactly(self):
        cells = [grid_cell(0, 0, 0, CellKind.input("A")),
                 grid_cell(1, 0, 0),
                 grid_cell(2, 0, 0, CellKind.fixed(-1.0)),
                 grid_cell(3, 0, 0, CellKind.output("Y"))]
        state = relax(Layout(cells), {"A": 1.0}, HOLD, PARAMS)
        assert state.p[0] == 1.0
        assert state.p[2] == -1.0

    def test_fixed_point_residual(self):
        lay = wire_layout(5)
        state = relax(lay, {"A": 1.0}, HOLD, PARAMS)
        ek = kink_matrix(lay, PARAMS)
        gammas = np.array([HOLD[c.zone] for c in lay.cells])
        x = (ek @ state.p) / (2.0 * gammas)
        target = x / np.sqrt(1.0 + x * x)
        free = [i for i, c in enumerate(lay.cells)
                if c.kind.function.value == "normal"
                or c.kind.function.value == "output"]
        assert np.max(np.abs(state.p[free] - target[free])) < \
            PARAMS.convergence_tolerance * 2

    def test_polarizations_bounded(self):
        lay = wire_layout(6)
        state = relax(lay, {"A": 1.0}, HOLD, PARAMS)
        assert np.all(np.abs(state.p) <= 1.0)

    @given(st.integers(0, 19))
    def test_odd_symmetry(self, seed):
        lay, assign = _random_blob(seed)
        base = relax(lay, assign, HOLD, PARAMS)
        mirrored = relax(_flip_fixed(lay),
                         {k: -v for k, v in assign.items()}, HOLD, PARAMS)
        assert np.max(np.abs(base.p + mirrored.p)) < 1e-9


def _random_blob(seed):
    """Connected random grid blob with one input, one output, and an
    occasional fixed driver."""
    rng = np.random.default_rng(seed)
    spots = [(0, 0)]
    seen = {(0, 0)}
    while len(spots) < 8:
        x, y = spots[rng.integers(len(spots))]
        step = [(1, 0), (-1, 0), (0, 1), (0, -1)][rng.integers(4)]
        nxt = (x + step[0], y + step[1])
        if nxt not in seen:
            seen.add(nxt)
            spots.append(nxt)
    cells = []
    for k, (x, y) in enumerate(spots):
        if k == 0:
            kind = CellKind.input("A")
        elif k == len(spots) - 1:
            kind = CellKind.output("Y")
        elif k == 3 and rng.random() < 0.5:
            kind = CellKind.fixed(1.0 if rng.random() < 0.5 else -1.0)
        else:
            kind = CellKind.normal()
        cells.append(grid_cell(x, y, 0, kind))
    return Layout(cells), {"A": 1.0 if seed % 2 else -1.0}


def _flip_fixed(layout):
    cells = [Cell(c.x_nm, c.y_nm, c.zone,
                  CellKind.fixed(-c.kind.polarization)
                  if c.kind.function.value == "fixed" else c.kind)
             for c in layout.cells]
    return layout.replace_cells(cells)


class TestSimulate:
    def test_wire_trace_follows_vectors(self):
        lay = wire_layout(5)
        trace = simulate(lay, [{"A": 1.0}, {"A": -1.0}], FAST)
        y = trace.recorded["Y"]
        assert len(y) == trace.total_samples
        # evaluate at the end of each window's output switch interval
        last0 = y[trace.window(0)][-1]
        last1 = y[trace.window(1)][-1]
        assert last0 > 0.5 and last1 < -0.5

    def test_empty_vector_list_rejected(self):
        with pytest.raises(Exception):
            simulate(wire_layout(3), [], FAST)

    def test_equal_windows(self):
        from qcalab.gates import by_name
        trace = simulate(by_name("mv"),
                         input_vectors(["A", "B", "C"]), FAST)
        assert trace.total_samples == trace.window_samples * 8


class TestTruthTable:
    def test_wire_identity(self):
        table = truth_table(wire_layout(5), FAST)
        assert table.output_bits() == [0, 1]
        assert table.passed

    def test_mv_majority(self):
        from qcalab.gates import by_name
        table = truth_table(by_name("mv"), FAST)
        for row in table.rows:
            assert row.outputs[0] == (1 if sum(row.inputs) >= 2 else 0)
        assert table.p_max >= 0.9

    def test_rows_ascending_binary_order(self):
        from qcalab.gates import by_name
        table = truth_table(by_name("and"), FAST)
        assert [r.inputs for r in table.rows] == \
            [(0, 0), (0, 1), (1, 0), (1, 1)]

    def test_weak_output_flagged_not_fatal(self):
        # a long single-zone wire decays below threshold but still returns
        cells = [grid_cell(0, 0, 0, CellKind.input("A"))]
        cells += [grid_cell(i, 0, 0) for i in range(1, 19)]
        cells.append(grid_cell(19, 0, 0, CellKind.output("Y")))
        table = truth_table(Layout(cells), FAST)
        assert isinstance(table.passed, bool)


class TestBatchedTruthTables:
    def test_matches_single_path(self):
        from qcalab.gates import by_name
        lay = by_name("mv")
        variants = [lay, lay.translated(40.0, 0.0)]
        periods = required_periods(lay, FAST)
        batched = batched_truth_tables(variants, FAST, periods=periods)
        single = truth_table(lay, FAST)
        for table in batched:
            assert [r.outputs for r in table.rows] == \
                [r.outputs for r in single.rows]
            for got, want in zip(table.rows, single.rows):
                assert got.polarizations == pytest.approx(
                    want.polarizations, abs=5e-3)

    def test_mixed_names_rejected(self):
        from qcalab.gates import by_name
        with pytest.raises(ValueError):
            batched_truth_tables([by_name("mv"), by_name("and")], FAST)

    def test_empty_batch(self):
        assert batched_truth_tables([], FAST) == []


class TestRequiredPeriods:
    def test_minimum_two(self):
        assert required_periods(wire_layout(3), FAST) == 2

    def test_deep_pipeline_needs_more(self):
        from qcalab.gates import by_name
        lay = by_name("xor3-ft")
        from qcalab.model import latency_phases
        assert required_periods(lay, FAST) == max(
            2, -(-latency_phases(lay) // 4))
