import math

import pytest
from hypothesis import given, strategies as st

from qcalab.model import (Cell, CellFunction, CellKind, Layout, NoPathError,
                          adjacency, cells_overlap, device_cells,
                          latency_phases, layout_metrics, validate_layout)

from conftest import grid_cell, wire_layout


class TestCellKind:
    def test_fixed_polarization_must_be_unit(self):
        CellKind.fixed(1.0)
        CellKind.fixed(-1.0)
        with pytest.raises(ValueError):
            CellKind.fixed(0.5)
        with pytest.raises(ValueError):
            CellKind.fixed(0.0)

    def test_io_names_nonempty(self):
        with pytest.raises(ValueError):
            CellKind.input("")
        with pytest.raises(ValueError):
            CellKind.output("")

    def test_normal_carries_no_name_or_polarization(self):
        with pytest.raises(ValueError):
            CellKind(CellFunction.NORMAL, name="A")
        with pytest.raises(ValueError):
            CellKind(CellFunction.NORMAL, polarization=1.0)


class TestCell:
    def test_zone_range(self):
        for z in range(4):
            Cell(0, 0, z)
        with pytest.raises(ValueError):
            Cell(0, 0, 4)
        with pytest.raises(ValueError):
            Cell(0, 0, -1)

    def test_coordinates_finite(self):
        with pytest.raises(ValueError):
            Cell(math.inf, 0, 0)
        with pytest.raises(ValueError):
            Cell(0, math.nan, 0)


class TestLayout:
    def test_duplicate_input_name_rejected(self):
        with pytest.raises(ValueError):
            Layout([grid_cell(0, 0, 0, CellKind.input("A")),
                    grid_cell(1, 0, 0, CellKind.input("A"))])

    def test_same_name_for_input_and_output_ok(self):
        Layout([grid_cell(0, 0, 0, CellKind.input("X")),
                grid_cell(1, 0, 0, CellKind.output("X"))])

    def test_ids_are_list_indices(self):
        lay = wire_layout(4)
        assert len(lay) == 4
        assert lay.cells[0].kind.function is CellFunction.INPUT

    def test_translated_preserves_everything_but_position(self):
        lay = wire_layout(4)
        moved = lay.translated(100.0, -40.0)
        assert len(moved) == len(lay)
        for a, b in zip(lay.cells, moved.cells):
            assert (b.x_nm, b.y_nm) == (a.x_nm + 100.0, a.y_nm - 40.0)
            assert b.zone == a.zone and b.kind == a.kind


class TestValidateLayout:
    def test_clean_wire_has_empty_report(self):
        assert validate_layout(wire_layout(3)).ok

    def test_coincident_cells_flagged_as_overlap(self):
        lay = Layout([grid_cell(0, 0, 0, CellKind.input("A")),
                      Cell(0.0, 0.0, 0),
                      grid_cell(1, 0, 0, CellKind.output("Y"))])
        report = validate_layout(lay)
        finding = report.by_category("overlap")[0]
        assert set(finding.cell_ids) == {0, 1}

    def test_isolated_cell_is_disconnected(self):
        cells = list(wire_layout(3).cells) + [Cell(240.0, 0.0, 0)]
        report = validate_layout(Layout(cells))
        assert any(3 in f.cell_ids
                   for f in report.by_category("disconnected"))

    def test_missing_io_flagged(self):
        report = validate_layout(Layout([Cell(0, 0, 0), Cell(20, 0, 0)]))
        assert report.by_category("no-input")
        assert report.by_category("no-output")


class TestDeviceCells:
    def test_only_normal_cells(self):
        lay = Layout([grid_cell(0, 0, 0, CellKind.input("A")),
                      grid_cell(1, 0, 0),
                      grid_cell(2, 0, 0, CellKind.fixed(1.0)),
                      grid_cell(3, 0, 0, CellKind.output("Y"))])
        assert device_cells(lay) == [1]

    def test_io_only_layout_has_none(self):
        lay = Layout([grid_cell(0, 0, 0, CellKind.input("A")),
                      grid_cell(1, 0, 0, CellKind.output("Y"))])
        assert device_cells(lay) == []

    def test_partition_of_all_cells(self):
        from qcalab.gates import by_name
        lay = by_name("xor2-ft")
        dev = set(device_cells(lay))
        rest = {i for i, c in enumerate(lay.cells)
                if c.kind.function is not CellFunction.NORMAL}
        assert dev | rest == set(range(len(lay)))
        assert dev & rest == set()


class TestMetrics:
    def test_single_zone_wire_latency_1(self):
        assert latency_phases(wire_layout(5, zone=0)) == 1

    def test_three_zone_wire_latency_3(self):
        cells = [grid_cell(0, 0, 0, CellKind.input("A")),
                 grid_cell(1, 0, 0),
                 grid_cell(2, 0, 1), grid_cell(3, 0, 1),
                 grid_cell(4, 0, 2),
                 grid_cell(5, 0, 2, CellKind.output("Y"))]
        assert latency_phases(Layout(cells)) == 3

    def test_no_path_error(self):
        cells = [grid_cell(0, 0, 0, CellKind.input("A")),
                 grid_cell(10, 0, 0, CellKind.output("Y"))]
        with pytest.raises(NoPathError):
            latency_phases(Layout(cells))

    def test_area_includes_cell_body(self):
        lay = wire_layout(2)  # centers 20nm apart, bodies 18nm
        m = layout_metrics(lay)
        assert m.cell_count == 2
        assert m.area_um2 == pytest.approx((38e-3) * (18e-3))

    def test_translation_invariance(self):
        lay = wire_layout(6)
        a = layout_metrics(lay)
        b = layout_metrics(lay.translated(-333.0, 77.0))
        assert (a.cell_count, a.area_um2, a.latency_phases) == \
            (b.cell_count, b.area_um2, b.latency_phases)

    @given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
    def test_translation_invariance_property(self, dx, dy):
        lay = wire_layout(4)
        m = layout_metrics(lay.translated(dx, dy))
        assert m.area_um2 == pytest.approx(layout_metrics(lay).area_um2,
                                           rel=1e-9, abs=1e-12)


class TestAdjacency:
    def test_orthogonal_and_diagonal_neighbors(self):
        cells = [Cell(0, 0, 0), Cell(20, 0, 0), Cell(20, 20, 0)]
        nb = adjacency(Layout(cells))
        assert 1 in nb[0] and 2 in nb[0]  # diagonal within 1.5x pitch
        assert 0 in nb[2]

    def test_far_cells_not_adjacent(self):
        cells = [Cell(0, 0, 0), Cell(40, 0, 0)]
        nb = adjacency(Layout(cells))
        assert nb[0] == [] and nb[1] == []

    def test_overlap_requires_axis_separation(self):
        assert cells_overlap(Cell(0, 0, 0), Cell(10, 10, 0), 18.0)
        assert not cells_overlap(Cell(0, 0, 0), Cell(20, 0, 0), 18.0)
