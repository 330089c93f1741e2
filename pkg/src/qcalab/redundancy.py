"""Gate-level redundancy schemes: triple modular redundancy, NAND
multiplexing, and majority multiplexing, with Monte Carlo reliability and
overhead accounting.

Netlists are small directed acyclic gate graphs. Signals are referenced as
``node.k`` (output line k of a node) or a primary input name; logical
outputs are bundles of one or more lines, decided by strict line majority.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

import numpy as np

N_MIN = 2


class MultiOutputError(Exception):
    """TMR wraps modules with exactly one logical output."""


class OddStagesError(Exception):
    """A NAND restorative chain needs an even stage count of at least two."""


class MissingComponentError(Exception):
    """The overhead inventory lacks a component the scheme uses."""


class GateKind(Enum):
    XOR2 = "XOR2"
    XOR3 = "XOR3"
    NAND2 = "NAND2"
    MAJ3 = "MAJ3"
    INV = "INV"
    FANOUT = "FANOUT"
    RANDOM_PERMUTE = "RANDOM_PERMUTE"


_EVAL = {
    GateKind.XOR2: lambda a, b: a ^ b,
    GateKind.XOR3: lambda a, b, c: a ^ b ^ c,
    GateKind.NAND2: lambda a, b: not (a and b),
    GateKind.MAJ3: lambda a, b, c: (a and b) or (b and c) or (a and c),
    GateKind.INV: lambda a: not a,
}

_ARITY = {GateKind.XOR2: 2, GateKind.XOR3: 3, GateKind.NAND2: 2,
          GateKind.MAJ3: 3, GateKind.INV: 1}

# wiring kinds route values and are never fault-injected
_WIRING = (GateKind.FANOUT, GateKind.RANDOM_PERMUTE)


@dataclass(frozen=True)
class Node:
    name: str
    kind: GateKind
    inputs: tuple
    n_outputs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind in _ARITY:
            if len(self.inputs) != _ARITY[self.kind]:
                raise ValueError(
                    f"{self.kind.value} node {self.name!r} takes "
                    f"{_ARITY[self.kind]} inputs, got {len(self.inputs)}")
            if self.n_outputs != 1:
                raise ValueError(f"{self.kind.value} has one output")
        elif self.kind is GateKind.RANDOM_PERMUTE:
            if len(self.inputs) != self.n_outputs:
                raise ValueError("RANDOM_PERMUTE has equal in/out arity")
        elif self.kind is GateKind.FANOUT:
            if len(self.inputs) != 1:
                raise ValueError("FANOUT takes one input")


@dataclass(frozen=True)
class Netlist:
    """Acyclic gate graph with named primary inputs and logical output
    bundles (each a tuple of signal references)."""

    inputs: tuple
    outputs: dict
    nodes: tuple

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "outputs",
                           {k: tuple(v) for k, v in self.outputs.items()})
        names = set(self.inputs)
        by_name = {}
        for node in self.nodes:
            if node.name in names or node.name in by_name:
                raise ValueError(f"duplicate node name {node.name!r}")
            by_name[node.name] = node
        # every referenced signal must exist; graph must be acyclic
        for node in self.nodes:
            for sig in node.inputs:
                self._resolve(sig, by_name)
        for bundle in self.outputs.values():
            for sig in bundle:
                self._resolve(sig, by_name)
        self._topo_order()

    def _resolve(self, sig: str, by_name=None):
        if by_name is None:
            by_name = {n.name: n for n in self.nodes}
        if sig in self.inputs:
            return None
        name, _, port = sig.partition(".")
        if name not in by_name:
            raise ValueError(f"unknown signal {sig!r}")
        node = by_name[name]
        k = int(port) if port else 0
        if not (0 <= k < node.n_outputs):
            raise ValueError(f"signal {sig!r} out of range for {name!r}")
        return (name, k)

    def _topo_order(self):
        order, state = [], {}

        def visit(name):
            if state.get(name) == 2:
                return
            if state.get(name) == 1:
                raise ValueError(f"cycle through node {name!r}")
            state[name] = 1
            node = self.node(name)
            for sig in node.inputs:
                dep = sig.partition(".")[0]
                if dep not in self.inputs:
                    visit(dep)
            state[name] = 2
            order.append(name)

        for node in self.nodes:
            visit(node.name)
        return order

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def gate_names(self) -> list:
        """Names of fault-injectable (non-wiring) nodes."""
        return [n.name for n in self.nodes if n.kind not in _WIRING]


def evaluate(netlist: Netlist, assignment: dict, flips: dict | None = None,
             permutations: dict | None = None) -> dict:
    """Logical output bundles for one input assignment.

    ``flips`` inverts named gate outputs (fault injection);
    ``permutations`` maps RANDOM_PERMUTE node names to index tuples
    (identity when absent, so fault-free behavior is deterministic).
    """
    flips = flips or {}
    permutations = permutations or {}
    values: dict = {}
    order = netlist._topo_order()
    by_name = {n.name: n for n in netlist.nodes}

    def read(sig):
        if sig in netlist.inputs:
            return bool(assignment[sig])
        name, _, port = sig.partition(".")
        return values[(name, int(port) if port else 0)]

    for name in order:
        node = by_name[name]
        ins = [read(s) for s in node.inputs]
        if node.kind is GateKind.FANOUT:
            outs = [ins[0]] * node.n_outputs
        elif node.kind is GateKind.RANDOM_PERMUTE:
            perm = permutations.get(name, tuple(range(node.n_outputs)))
            outs = [ins[p] for p in perm]
        else:
            out = _EVAL[node.kind](*ins)
            if flips.get(name):
                out = not out
            outs = [out]
        for k, v in enumerate(outs):
            values[(name, k)] = v
    return {out: tuple(read(s) for s in bundle)
            for out, bundle in netlist.outputs.items()}


def bundle_decision(lines) -> bool | None:
    """Strict majority of a line bundle; ties decide nothing (None)."""
    ones = sum(bool(v) for v in lines)
    zeros = len(lines) - ones
    if ones == zeros:
        return None
    return ones > zeros


# --- module builders ---------------------------------------------------------

def xor_module(n_inputs: int = 2) -> Netlist:
    """Single-gate XOR module used as the base of the redundancy schemes."""
    if n_inputs == 2:
        return Netlist(("A", "B"), {"Y": ("g0",)},
                       (Node("g0", GateKind.XOR2, ("A", "B")),))
    if n_inputs == 3:
        return Netlist(("A", "B", "C"), {"Y": ("g0",)},
                       (Node("g0", GateKind.XOR3, ("A", "B", "C")),))
    raise ValueError("xor_module supports 2 or 3 inputs")


def _copy_nodes(module: Netlist, prefix: str, input_map: dict) -> tuple:
    nodes = []
    for node in module.nodes:
        ins = []
        for sig in node.inputs:
            if sig in module.inputs:
                ins.append(input_map[sig])
            else:
                name, dot, port = sig.partition(".")
                ins.append(f"{prefix}{name}{dot}{port}")
        nodes.append(Node(f"{prefix}{node.name}", node.kind, tuple(ins),
                          node.n_outputs))
    return tuple(nodes)


def _module_output(module: Netlist) -> tuple:
    if len(module.outputs) != 1:
        raise MultiOutputError(
            f"module has {len(module.outputs)} outputs, need exactly 1")
    (name, bundle), = module.outputs.items()
    if len(bundle) != 1:
        raise MultiOutputError("module output must be a single line")
    return name, bundle[0]


def build_tmr(module: Netlist) -> Netlist:
    """Three module copies voted by a single MAJ3."""
    out_name, out_sig = _module_output(module)
    nodes: list = []
    copy_sigs = []
    for k in range(3):
        prefix = f"c{k}_"
        nodes.extend(_copy_nodes(module, prefix,
                                 {i: i for i in module.inputs}))
        name, dot, port = out_sig.partition(".")
        copy_sigs.append(f"{prefix}{name}{dot}{port}")
    nodes.append(Node("vote", GateKind.MAJ3, tuple(copy_sigs)))
    return Netlist(module.inputs, {out_name: ("vote",)}, tuple(nodes))


def _mux_executive(module: Netlist, n: int) -> tuple:
    """N module copies fed through per-input fanout and permutation."""
    out_name, out_sig = _module_output(module)
    nodes: list = []
    for inp in module.inputs:
        nodes.append(Node(f"fan_{inp}", GateKind.FANOUT, (inp,), n))
        nodes.append(Node(
            f"perm_{inp}", GateKind.RANDOM_PERMUTE,
            tuple(f"fan_{inp}.{k}" for k in range(n)), n))
    lines = []
    for k in range(n):
        prefix = f"x{k}_"
        nodes.extend(_copy_nodes(
            module, prefix,
            {inp: f"perm_{inp}.{k}" for inp in module.inputs}))
        name, dot, port = out_sig.partition(".")
        lines.append(f"{prefix}{name}{dot}{port}")
    return out_name, nodes, lines


def build_nand_mux(module: Netlist, n: int = 3, stages: int = 2) -> Netlist:
    """Executive stage of N copies plus an even number of NAND restorative
    stages (each one inverts, so parity must be even)."""
    if n < N_MIN:
        raise ValueError(f"redundancy factor must be >= {N_MIN}")
    if stages < 2 or stages % 2:
        raise OddStagesError(
            "a single NAND stage inverts the result; at least two stages "
            "are required and the count must be even")
    out_name, nodes, lines = _mux_executive(module, n)
    for s in range(stages):
        nodes.append(Node(f"rperm{s}", GateKind.RANDOM_PERMUTE,
                          tuple(lines), n))
        lines = []
        for k in range(n):
            nodes.append(Node(f"nand{s}_{k}", GateKind.NAND2,
                              (f"rperm{s}.{k}",
                               f"rperm{s}.{(k + 1) % n}")))
            lines.append(f"nand{s}_{k}")
    return Netlist(module.inputs, {out_name: tuple(lines)}, tuple(nodes))


def build_maj_mux(module: Netlist, n: int = 3, stages: int = 2) -> Netlist:
    """As NAND multiplexing but with MAJ3 restoratives; no parity rule."""
    if n < 3:
        raise ValueError("majority multiplexing needs n >= 3")
    if stages < 1:
        raise ValueError("stages must be >= 1")
    out_name, nodes, lines = _mux_executive(module, n)
    for s in range(stages):
        nodes.append(Node(f"rperm{s}", GateKind.RANDOM_PERMUTE,
                          tuple(lines), n))
        lines = []
        for k in range(n):
            nodes.append(Node(
                f"maj{s}_{k}", GateKind.MAJ3,
                (f"rperm{s}.{k}", f"rperm{s}.{(k + 1) % n}",
                 f"rperm{s}.{(k + 2) % n}")))
            lines.append(f"maj{s}_{k}")
    return Netlist(module.inputs, {out_name: tuple(lines)}, tuple(nodes))


# --- reliability -------------------------------------------------------------

def input_assignments(netlist: Netlist) -> list:
    out = []
    k = len(netlist.inputs)
    for bits in range(2 ** k):
        out.append({nm: bool((bits >> (k - 1 - i)) & 1)
                    for i, nm in enumerate(netlist.inputs)})
    return out


def tmr_reliability_analytic(r: float) -> float:
    """Probability that at least two of three independent copies of
    reliability ``r`` are correct (perfect voter)."""
    if not 0.0 <= r <= 1.0:
        raise ValueError("module reliability must lie in [0, 1]")
    return 3 * r ** 2 - 2 * r ** 3


@dataclass(frozen=True)
class ReliabilityEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    trials: int
    seed: int

    @property
    def std_error(self) -> float:
        p = self.estimate
        return (p * (1.0 - p) / self.trials) ** 0.5


def mc_reliability(netlist: Netlist, gate_fail_prob, trials: int,
                   seed: int = 0, reference: Netlist | None = None
                   ) -> ReliabilityEstimate:
    """Monte Carlo reliability: per trial every gate output is inverted
    independently (probability from ``gate_fail_prob``: a float, or a dict
    keyed by node name with optional '*' default), then all input vectors
    are evaluated; a trial succeeds iff every logical output decides to the
    fault-free value by strict line majority. Per-trial sub-rngs are derived
    from (seed, trial index), so runs are reproducible and partitionable."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gates = netlist.gate_names()
    if isinstance(gate_fail_prob, dict):
        default = float(gate_fail_prob.get("*", 0.0))
        eps = np.array([float(gate_fail_prob.get(g, default)) for g in gates])
    else:
        eps = np.full(len(gates), float(gate_fail_prob))
    if ((eps < 0) | (eps > 1)).any():
        raise ValueError("gate failure probabilities must lie in [0, 1]")
    permuters = [n for n in netlist.nodes
                 if n.kind is GateKind.RANDOM_PERMUTE]
    vectors = input_assignments(reference or netlist)
    golden = [evaluate(reference or netlist, v) for v in vectors]
    golden_bits = [{k: bundle_decision(b) for k, b in g.items()}
                   for g in golden]

    successes = 0
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        flip_draws = rng.random(len(gates)) < eps
        flips = {g: True for g, f in zip(gates, flip_draws) if f}
        perms = {p.name: tuple(rng.permutation(p.n_outputs))
                 for p in permuters}
        ok = True
        for vec, want in zip(vectors, golden_bits):
            got = evaluate(netlist, vec, flips, perms)
            for key, target in want.items():
                if bundle_decision(got[key]) != target:
                    ok = False
                    break
            if not ok:
                break
        successes += ok
    p = successes / trials
    half = 1.96 * (p * (1.0 - p) / trials) ** 0.5
    return ReliabilityEstimate(p, max(0.0, p - half), min(1.0, p + half),
                               trials, seed)


# --- overhead accounting -----------------------------------------------------

class Scheme(Enum):
    TMR = "tmr"
    NAND_MUX = "nand-mux"
    MAJ_MUX = "maj-mux"


@dataclass(frozen=True)
class SchemeParams:
    scheme: Scheme
    n: int = 3
    restorative_stages: int = 2

    def __post_init__(self):
        if self.scheme is Scheme.TMR:
            object.__setattr__(self, "n", 3)
        elif self.n < N_MIN:
            raise ValueError(f"redundancy factor must be >= {N_MIN}")
        if (self.scheme is Scheme.NAND_MUX
                and (self.restorative_stages < 2
                     or self.restorative_stages % 2)):
            raise OddStagesError("NAND multiplexing needs an even stage "
                                 "count of at least two")


@dataclass(frozen=True)
class ComponentCost:
    cells: int
    area_um2: float
    latency_phases: int


@dataclass(frozen=True)
class OverheadInventory:
    """Per-component costs. The bundled inventory is calibrated so the
    scheme totals for a 32-cell, 0.030 um^2, 3-phase base module match the
    published minima; the split across components is a disclosed
    calibration, not a derivation."""

    components: dict

    def get(self, name: str) -> ComponentCost:
        try:
            return self.components[name]
        except KeyError:
            raise MissingComponentError(f"inventory lacks {name!r}") from None


def load_inventory(path=None) -> OverheadInventory:
    if path is None:
        text = (resources.files("qcalab") / "data" /
                "overhead_inventory.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    doc = json.loads(text)
    comps = {name: ComponentCost(int(c["cells"]), float(c["area_um2"]),
                                 int(c["latency_phases"]))
             for name, c in doc["components"].items()}
    return OverheadInventory(comps)


def estimate_overhead(scheme: SchemeParams,
                      inventory: OverheadInventory | None = None) -> dict:
    """Additive cost composition: replicated base modules plus voter or
    restorative stages plus wiring; latency chains serially."""
    inv = inventory if inventory is not None else load_inventory()
    base = inv.get("base_module")
    if scheme.scheme is Scheme.TMR:
        voter = inv.get("voter")
        return {
            "cells": 3 * base.cells + voter.cells,
            "area_um2": 3 * base.area_um2 + voter.area_um2,
            "latency_phases": base.latency_phases + voter.latency_phases,
        }
    gate = inv.get("nand_gate" if scheme.scheme is Scheme.NAND_MUX
                   else "maj_gate")
    perm = inv.get("permuter")
    wiring = inv.get("interstage")
    n, stages = scheme.n, scheme.restorative_stages
    # one permuter ahead of the executive stage plus one per restorative
    return {
        "cells": (n * base.cells + (stages + 1) * perm.cells
                  + stages * n * gate.cells + wiring.cells),
        "area_um2": (n * base.area_um2 + (stages + 1) * perm.area_um2
                     + stages * n * gate.area_um2 + wiring.area_um2),
        "latency_phases": (base.latency_phases
                           + (stages + 1) * perm.latency_phases
                           + stages * gate.latency_phases
                           + wiring.latency_phases),
    }


# --- JSON gate-graph format --------------------------------------------------

def netlist_to_json(netlist: Netlist) -> str:
    doc = {
        "schema": "gate-graph/1",
        "inputs": list(netlist.inputs),
        "outputs": {k: list(v) for k, v in netlist.outputs.items()},
        "nodes": [
            {"name": n.name, "kind": n.kind.value, "inputs": list(n.inputs),
             "n_outputs": n.n_outputs}
            for n in netlist.nodes],
    }
    return json.dumps(doc, indent=2)


def netlist_from_json(text: str) -> Netlist:
    doc = json.loads(text)
    if doc.get("schema") != "gate-graph/1":
        raise ValueError(f"unsupported schema {doc.get('schema')!r}")
    nodes = tuple(
        Node(n["name"], GateKind(n["kind"]), tuple(n["inputs"]),
             int(n.get("n_outputs", 1)))
        for n in doc["nodes"])
    return Netlist(tuple(doc["inputs"]), doc["outputs"], nodes)
