"""Parameterized constructors for QCA building blocks and the bundled
fault-tolerant XOR layouts.

The 2-input XOR implements NOT(M[NOT M(A,B,1), M(A,B,0), 1]) and the 3-input
XOR implements M[NOT M(A,B,C), C, M(A,B,NOT C)], where M is the three-input
majority function. Both are laid out without any wire crossing. The
fault-tolerant variants widen wires to two cells and double majority-gate
arms wherever the geometry permits; the ``*-baseline`` variants are the same
decompositions with 1-cell-wide wires and serve as the non-redundant
reference designs.

All constructors snap to the 20nm pitch grid; grid coordinates below are in
pitch units (column, row), row increasing upward.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Cell, CellKind, Layout, DEFAULT_PITCH_NM


class OverlapError(Exception):
    """Composition placed two cells on the same spot."""

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = tuple(pairs)


# --- gate identifiers --------------------------------------------------------

@dataclass(frozen=True)
class Wire:
    n: int
    zone: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("wire needs n >= 2")


@dataclass(frozen=True)
class InverterChain:
    n: int
    zone: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("inverter chain needs n >= 2")


@dataclass(frozen=True)
class Inverter:
    pass


@dataclass(frozen=True)
class MajorityVoter:
    pass


@dataclass(frozen=True)
class AndGate:
    pass


@dataclass(frozen=True)
class OrGate:
    pass


@dataclass(frozen=True)
class Xor2FT:
    pass


@dataclass(frozen=True)
class Xor3FT:
    pass


@dataclass(frozen=True)
class Xor2Baseline:
    pass


@dataclass(frozen=True)
class Xor3Baseline:
    pass


GateId = (Wire | InverterChain | Inverter | MajorityVoter | AndGate | OrGate
          | Xor2FT | Xor3FT | Xor2Baseline | Xor3Baseline)


class _GridBuilder:
    """Accumulates cells on the pitch grid; duplicate normal-cell placements
    of the same net merge silently, conflicting kinds are an error."""

    def __init__(self, name: str, pitch_nm: float = DEFAULT_PITCH_NM):
        self.name = name
        self.pitch_nm = pitch_nm
        self._cells: dict[tuple[int, int], tuple[int, CellKind]] = {}

    def put(self, col: int, row: int, zone: int, kind: CellKind | None = None):
        kind = kind or CellKind.normal()
        key = (col, row)
        if key in self._cells:
            old_zone, old_kind = self._cells[key]
            if old_zone != zone:
                raise ValueError(f"conflicting zones at {key}: {old_zone} vs {zone}")
            # wires may run through already-placed I/O cells
            if kind == CellKind.normal():
                return
            if old_kind == CellKind.normal():
                self._cells[key] = (zone, kind)
                return
            if old_kind != kind:
                raise ValueError(f"conflicting kinds at {key}: {old_kind} vs {kind}")
            return
        self._cells[key] = (zone, kind)

    def hwire(self, row: int, c0: int, c1: int, zone: int):
        step = 1 if c1 >= c0 else -1
        for c in range(c0, c1 + step, step):
            self.put(c, row, zone)

    def vwire(self, col: int, r0: int, r1: int, zone: int):
        step = 1 if r1 >= r0 else -1
        for r in range(r0, r1 + step, step):
            self.put(col, r, zone)

    def inverter_east(self, col: int, row: int, zone: int, wide: bool):
        """Entry at (col,row); inverted signal appears at (col+3,row)."""
        self.put(col, row, zone)
        if wide:
            self.put(col, row + 1, zone)
            self.put(col, row - 1, zone)
        self.put(col + 1, row, zone)
        self.put(col + 1, row + 1, zone)
        self.put(col + 1, row - 1, zone)
        self.put(col + 2, row + 1, zone)
        self.put(col + 2, row - 1, zone)
        self.put(col + 3, row, zone)

    def build(self) -> Layout:
        ordered = sorted(self._cells.items(), key=lambda kv: (-kv[0][1], kv[0][0]))
        cells = [Cell(c * self.pitch_nm, r * self.pitch_nm, zone, kind)
                 for (c, r), (zone, kind) in ordered]
        return Layout(cells, name=self.name, pitch_nm=self.pitch_nm)


def _wire(g: Wire) -> Layout:
    b = _GridBuilder(f"wire{g.n}")
    b.put(0, 0, g.zone, CellKind.input("A"))
    for i in range(1, g.n - 1):
        b.put(i, 0, g.zone)
    b.put(g.n - 1, 0, g.zone, CellKind.output("Y"))
    return b.build()


def _inverter_chain(g: InverterChain) -> Layout:
    # Diagonally placed cells anti-align pairwise, so the output sign is
    # input * (-1)^(n-1). Diagonal coupling is weak; levels fade with n.
    b = _GridBuilder(f"inverter_chain{g.n}")
    b.put(0, 0, g.zone, CellKind.input("A"))
    for i in range(1, g.n - 1):
        b.put(i, i, g.zone)
    b.put(g.n - 1, g.n - 1, g.zone, CellKind.output("Y"))
    return b.build()


def _inverter(_: Inverter) -> Layout:
    b = _GridBuilder("inverter")
    b.put(0, 0, 0, CellKind.input("A"))
    b.put(0, 1, 0)
    b.put(0, -1, 0)
    b.put(1, 1, 0)
    b.put(1, -1, 0)
    b.put(2, 0, 0, CellKind.output("Y"))
    return b.build()


def _majority_voter(_: MajorityVoter) -> Layout:
    b = _GridBuilder("majority_voter")
    b.put(0, 1, 0, CellKind.input("A"))
    b.put(1, 2, 0, CellKind.input("B"))
    b.put(1, 0, 0, CellKind.input("C"))
    b.put(1, 1, 0)
    b.put(2, 1, 0, CellKind.output("Y"))
    return b.build()


def _fixed_input_voter(name: str, polarization: float) -> Layout:
    b = _GridBuilder(name)
    b.put(0, 1, 0, CellKind.input("A"))
    b.put(1, 2, 0, CellKind.input("B"))
    b.put(1, 0, 0, CellKind.fixed(polarization))
    b.put(1, 1, 0)
    b.put(2, 1, 0, CellKind.output("Y"))
    return b.build()


def _hrun(r, c0, c1, partner_r=None, partner_stop=None):
    """Depth groups for a horizontal run; each group is the cells at one
    pipeline depth (the main cell plus its widening partner, if any)."""
    step = 1 if c1 >= c0 else -1
    groups = []
    for c in range(c0, c1 + step, step):
        g = [(c, r)]
        if partner_r is not None and (partner_stop is None
                                      or (c - partner_stop) * step <= 0):
            g.append((c, partner_r))
        groups.append(g)
    return groups


def _vrun(c, r0, r1, partner_c=None, partner_stop=None):
    step = 1 if r1 >= r0 else -1
    groups = []
    for r in range(r0, r1 + step, step):
        g = [(c, r)]
        if partner_c is not None and (partner_stop is None
                                      or (r - partner_stop) * step <= 0):
            g.append((partner_c, r))
        groups.append(g)
    return groups


def _place_staged(b: _GridBuilder, groups, start_stage, n_stages):
    """Spread depth groups over ``n_stages`` consecutive clock stages (zone =
    stage mod 4). Runs per zone stay short, so every cell polarizes from a
    held neighbor within a couple of hops; long single-zone runs are
    unreliable because any stray bias amplifies faster than the signal front
    can cross them."""
    depth = len(groups)
    for d, pts in enumerate(groups):
        stage = start_stage + (d * n_stages) // depth
        for (c, r) in pts:
            b.put(c, r, stage % 4)
    return start_stage + n_stages


def _xor2(wide: bool) -> Layout:
    """Planar 2-input XOR: OR and AND stages on A/B, NOR of the OR result,
    an OR of NOR and AND against a fixed +1, and an output inverter. Every
    voter's three inputs arrive at the same pipeline stage so the vote is
    taken over held values."""
    b = _GridBuilder("xor2_ft" if wide else "xor2_baseline")

    # A: left trunk feeding the west inputs of both first-stage voters,
    # pipeline stages 0..3.
    b.put(0, 0, 0, CellKind.input("A"))
    for sgn in (1, -1):
        trunk = _vrun(0, sgn, 6 * sgn, partner_c=1 if wide else None)
        arm = _hrun(6 * sgn, 2 if wide else 1, 7,
                    partner_r=7 * sgn if wide else None, partner_stop=6)
        _place_staged(b, trunk + arm, 0, 4)

    # B: middle trunk feeding the inner inputs of both voters, stages 0..3.
    b.put(3, 0, 0, CellKind.input("B"))
    for sgn in (1, -1):
        trunk = _vrun(3, sgn, 4 * sgn, partner_c=4 if wide else None)
        arm = _hrun(4 * sgn, 5 if wide else 4, 8,
                    partner_r=3 * sgn if wide else None)
        _place_staged(b, trunk + arm + [[(8, 5 * sgn)]], 0, 4)

    # First stage at pipeline stage 4: OR = M(A,B,+1) at (8,6) and
    # AND = M(A,B,-1) at (8,-6). The fixed drivers are clamped at all times,
    # so they connect through two stage-3 buffer cells; a bare fixed cell
    # next to the arms would repolarize them out of turn.
    for sgn, pol in ((1, +1.0), (-1, -1.0)):
        b.put(8, 7 * sgn, 3)
        b.put(8, 8 * sgn, 3)
        b.put(8, 9 * sgn, 3, CellKind.fixed(pol))
        b.put(8, 6 * sgn, 0)                  # voter center, stage 4

    # NOR of the OR output, then down to the final voter's north input;
    # stages 5..8.
    nor = [[(9, 6)], [(10, 6)], [(11, 6), (11, 7), (11, 5)],
           [(12, 7), (12, 5)], [(13, 6)]]
    if wide:
        nor[1] += [(10, 7), (10, 5)]
    north = _vrun(14, 6, 3, partner_c=15 if wide else None)
    _place_staged(b, nor + north, 5, 3)
    # Two-cell stage-8 block: a lone held input loses its upstream anchor
    # when stage 7 releases and can be flipped by the diagonal bias from
    # the fixed-driver buffers; a pair holds itself.
    b.put(14, 2, 0)
    b.put(14, 1, 0)                           # north input, stage 8
    if wide:
        b.put(15, 2, 0)

    # AND output east, then up to the final voter's south input; stages 5..8.
    south = (_hrun(-6, 9, 14, partner_r=-7 if wide else None, partner_stop=13)
             + _vrun(14, -5, -3, partner_c=15 if wide else None))
    if wide:
        south[5] += [(15, -6)]                # corner partner
    _place_staged(b, south, 5, 3)
    b.put(14, -2, 0)                          # two-cell stage-8 block
    b.put(14, -1, 0)                          # south input, stage 8
    if wide:
        b.put(15, -2, 0)

    # Final stage at pipeline stage 9: M(NOR, AND, +1) at (14,0). The fixed
    # driver connects through two stage-8 buffers.
    b.put(11, 0, 0, CellKind.fixed(+1.0))
    b.put(12, 0, 0)
    b.put(13, 0, 0)
    b.put(14, 0, 1)

    # Output inverter, stages 10..11, and the output cell at stage 12.
    tail = [[(15, 0)], [(16, 0)], [(17, 0)]]
    if wide:
        tail[2] += [(17, 1), (17, -1)]
    _place_staged(b, tail, 10, 1)
    _place_staged(b, [[(18, 0), (18, 1), (18, -1)], [(19, 1), (19, -1)],
                      [(20, 0)]], 11, 1)
    b.put(21, 0, 0, CellKind.output("Y"))
    return b.build()


def _xor3(wide: bool) -> Layout:
    """Planar 3-input XOR: M[NOT M(A,B,C), C, M(A,B,NOT C)]. C routes around
    the outside: one branch to the top voter, one through an inverter to the
    bottom voter, and one to the final voter's east input; the output exits
    westward. All voter inputs arrive at the same pipeline stage."""
    b = _GridBuilder("xor3_ft" if wide else "xor3_baseline")

    # A: trunk feeding the west inputs of both first-stage voters,
    # stages 0..5.
    b.put(0, 0, 0, CellKind.input("A"))
    for sgn in (1, -1):
        trunk = _vrun(0, sgn, 6 * sgn, partner_c=1 if wide else None)
        stop = 8 if sgn > 0 else 5       # keep clear of the inverter below
        arm = _hrun(6 * sgn, 2 if wide else 1, 9,
                    partner_r=7 * sgn if wide else None, partner_stop=stop)
        _place_staged(b, trunk + arm, 0, 6)

    # B: middle trunk feeding the inner inputs of both voters, stages 0..5.
    b.put(3, 0, 0, CellKind.input("B"))
    for sgn in (1, -1):
        trunk = _vrun(3, sgn, 4 * sgn, partner_c=4 if wide else None)
        arm = _hrun(4 * sgn, 5 if wide else 4, 9,
                    partner_r=3 * sgn if wide else None)
        _place_staged(b, trunk + arm, 0, 6)
        b.put(10, 4 * sgn, 1)        # two-cell stage-5 block at the voter
        b.put(10, 5 * sgn, 1)

    # C: outer trunk, stages 0..5 on each branch.
    b.put(-2, 0, 0, CellKind.input("C"))
    prefix = (_vrun(-2, 1, 9, partner_c=-3 if wide else None)
              + _hrun(9, -1, 10, partner_r=10 if wide else None))
    _place_staged(b, prefix, 0, 5)
    _place_staged(b, [[(10, 8)], [(10, 7)]], 5, 1)   # top voter north input
    lateral = (_hrun(9, 11, 19, partner_r=10 if wide else None,
                     partner_stop=18)
               + _vrun(19, 8, 1, partner_c=20 if wide else None,
                       partner_stop=2))
    _place_staged(b, lateral, 5, 5)                  # on to the final voter
    below = (_vrun(-2, -1, -9, partner_c=-3 if wide else None)
             + _hrun(-9, -1, 5, partner_r=-10 if wide else None))
    inv = [[(6, -9)], [(7, -9), (7, -8), (7, -10)], [(8, -8), (8, -10)],
           [(9, -9)], [(10, -9)], [(10, -8)], [(10, -7)]]
    if wide:
        inv[0] += [(6, -8), (6, -10)]
    _place_staged(b, below + inv, 0, 6)              # NOT C into the south

    # First stage at pipeline stage 6: M(A,B,C) and M(A,B,NOT C).
    b.put(10, 6, 2)
    b.put(10, -6, 2)

    # NOT M(A,B,C) east and down into the final voter's north; stages 7..9.
    x1 = [[(11, 6)], [(12, 6)], [(13, 6), (13, 7), (13, 5)],
          [(14, 7), (14, 5)], [(15, 6)],
          [(16, 6), (16, 7)] if wide else [(16, 6)],
          [(17, 6), (17, 7)] if wide else [(17, 6)]]
    if wide:
        x1[1] += [(12, 7), (12, 5)]
    x1 += _vrun(17, 5, 3, partner_c=16 if wide else None)
    _place_staged(b, x1, 7, 3)
    b.put(17, 2, 2)                                  # two-cell stage-10 block
    b.put(17, 1, 2)                                  # north input, stage 10
    if wide:
        b.put(16, 2, 2)

    # M(A,B,NOT C) east and up into the final voter's south; stages 7..9.
    x2 = (_hrun(-6, 11, 17, partner_r=-7 if wide else None, partner_stop=16)
          + [[(17, -5), (18, -5)] if wide else [(17, -5)]]
          + _vrun(17, -4, -3, partner_c=18 if wide else None))
    if wide:
        x2[6] += [(18, -6)]                          # corner partner
    _place_staged(b, x2, 7, 3)
    b.put(17, -2, 2)                                 # two-cell stage-10 block
    b.put(17, -1, 2)                                 # south input, stage 10
    if wide:
        b.put(18, -2, 2)
    b.put(19, 0, 2)                                  # two-cell stage-10 block
    b.put(18, 0, 2)                                  # east input (C), stage 10

    # Final voter at stage 11; the result exits westward, stages 12..14,
    # with the output cell at stage 15.
    b.put(17, 0, 3)
    _place_staged(b, _hrun(0, 16, 7), 12, 3)
    b.put(6, 0, 3, CellKind.output("Y"))
    return b.build()


def instantiate(gate: GateId) -> Layout:
    """Build the layout for a gate identifier."""
    if isinstance(gate, Wire):
        return _wire(gate)
    if isinstance(gate, InverterChain):
        return _inverter_chain(gate)
    if isinstance(gate, Inverter):
        return _inverter(gate)
    if isinstance(gate, MajorityVoter):
        return _majority_voter(gate)
    if isinstance(gate, AndGate):
        return _fixed_input_voter("and_gate", -1.0)
    if isinstance(gate, OrGate):
        return _fixed_input_voter("or_gate", +1.0)
    if isinstance(gate, Xor2FT):
        return _xor2(wide=True)
    if isinstance(gate, Xor2Baseline):
        return _xor2(wide=False)
    if isinstance(gate, Xor3FT):
        return _xor3(wide=True)
    if isinstance(gate, Xor3Baseline):
        return _xor3(wide=False)
    raise TypeError(f"unknown gate id {gate!r}")


# CLI-addressable gate names; parametric gates use sensible defaults.
GATE_NAMES: dict[str, GateId] = {
    "wire": Wire(5),
    "inverter-chain": InverterChain(3),
    "inverter": Inverter(),
    "mv": MajorityVoter(),
    "and": AndGate(),
    "or": OrGate(),
    "xor2-ft": Xor2FT(),
    "xor3-ft": Xor3FT(),
    "xor2-baseline": Xor2Baseline(),
    "xor3-baseline": Xor3Baseline(),
}


def by_name(name: str) -> Layout:
    try:
        return instantiate(GATE_NAMES[name])
    except KeyError:
        raise KeyError(f"unknown gate {name!r}; known: {sorted(GATE_NAMES)}") from None


def compose(base: Layout, part: Layout, offset_nm: tuple[float, float],
            prefix: str = "part") -> Layout:
    """Union of ``base`` and ``part`` translated by ``offset_nm``; the part's
    I/O names are re-qualified as ``prefix.name`` to avoid collisions."""
    dx, dy = offset_nm
    moved = part.translated(dx, dy)
    colliding = []
    for i, a in enumerate(base.cells):
        for j, c in enumerate(moved.cells):
            if abs(a.x_nm - c.x_nm) < base.cell_size_nm and \
               abs(a.y_nm - c.y_nm) < base.cell_size_nm:
                colliding.append((i, j))
    if colliding:
        raise OverlapError(f"{len(colliding)} colliding cell pairs", colliding)
    renamed = []
    for c in moved.cells:
        kind = c.kind
        if kind.name is not None:
            kind = CellKind(kind.function, name=f"{prefix}.{kind.name}")
        renamed.append(Cell(c.x_nm, c.y_nm, c.zone, kind))
    return Layout(list(base.cells) + renamed,
                  name=f"{base.name}+{part.name}", pitch_nm=base.pitch_nm)
