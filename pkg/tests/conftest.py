import numpy as np
import pytest
from hypothesis import settings

from qcalab.engine import SimParams
from qcalab.model import Cell, CellKind, Layout

settings.register_profile("ci", deadline=None, max_examples=50)
settings.load_profile("ci")

# cheap defaults for functional tests; acceptance tests override explicitly
FAST = SimParams(samples=3200)


@pytest.fixture
def fast_params():
    return FAST


def grid_cell(col, row, zone, kind=None, pitch=20.0):
    return Cell(col * pitch, row * pitch, zone,
                kind if kind is not None else CellKind.normal())


def wire_layout(n=5, zone=0):
    cells = [grid_cell(0, 0, zone, CellKind.input("A"))]
    cells += [grid_cell(i, 0, zone) for i in range(1, n - 1)]
    cells.append(grid_cell(n - 1, 0, zone, CellKind.output("Y")))
    return Layout(cells, name="wire")


def rng(seed=0):
    return np.random.default_rng(seed)
