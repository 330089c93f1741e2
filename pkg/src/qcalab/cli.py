"""Command line entry point. Each subcommand is a thin client of the
service-layer handlers; all heavy lifting lives in the core modules.

Exit codes: 0 success, 2 validation failure, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import formats, service
from .engine import NonConvergenceError
from .gates import GATE_NAMES

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3


def _layout_ref(args) -> service.LayoutRef:
    gate = getattr(args, "gate", None)
    path = getattr(args, "layout", None)
    if gate is not None:
        return service.LayoutRef(gate=gate)
    if path is None:
        raise service.ValidationFailure("provide --layout or --gate")
    with open(path) as fh:
        return service.LayoutRef(document=json.loads(fh.read()))


def _params_model(args) -> service.ParamsModel:
    return service.ParamsModel(samples=args.samples)


def _emit(text: str, path: str | None) -> None:
    if path and path != "-":
        with open(path, "w") as fh:
            fh.write(text)
            if not text.endswith("\n"):
                fh.write("\n")
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _cmd_simulate(args) -> int:
    resp = service.handle_simulate(service.SimulateRequest(
        layout=_layout_ref(args), params=_params_model(args)))
    _emit(resp.waveform_csv, args.output)
    _print_table(resp.truth_table)
    return EXIT_OK


def _print_table(table: service.TruthTableResponse) -> None:
    head = " ".join(table.input_names) + " | " + " ".join(table.output_names)
    print(head)
    for row in table.rows:
        bits = " ".join(str(b) for b in row.inputs)
        outs = " ".join(f"{b} ({p:+.3f})"
                        for b, p in zip(row.outputs, row.polarizations))
        print(f"{bits} | {outs}")
    print(f"p_max={table.p_max:.3f} passed={table.passed}")


def _cmd_truth_table(args) -> int:
    resp = service.handle_truth_table(service.TruthTableRequest(
        layout=_layout_ref(args), params=_params_model(args)))
    if args.json:
        _emit(resp.model_dump_json(indent=2), args.output)
    else:
        _print_table(resp)
    return EXIT_OK


def _cmd_campaign(args) -> int:
    resp = service.handle_campaign(service.CampaignRequest(
        layout=_layout_ref(args), fault=args.fault, policy=args.policy,
        params=_params_model(args), jobs=args.jobs))
    if args.format == "json":
        _emit(resp.model_dump_json(indent=2), args.output)
    else:
        lines = ["instance_kind,detail,verdict"]
        lines += [f"{i.instance_kind},{i.detail},{i.verdict}"
                  for i in resp.instances]
        _emit("\n".join(lines) + "\n", args.output)
    print(f"{resp.pass_count}/{resp.total} pass "
          f"({resp.tolerance_percent}%)", file=sys.stderr)
    return EXIT_OK


def _cmd_sweep_displacement(args) -> int:
    thresholds = [float(t) for t in args.thresholds.split(",") if t]
    resp = service.handle_displacement(service.DisplacementRequest(
        layout=_layout_ref(args), thresholds_nm=thresholds,
        step_nm=args.step, params=_params_model(args), jobs=args.jobs))
    _emit(resp.model_dump_json(indent=2), args.output)
    for t in resp.thresholds:
        print(f">= {t.threshold_nm:g}nm: {t.hits}/{t.total} "
              f"({t.percent}%)", file=sys.stderr)
    return EXIT_OK


def _cmd_redundancy(args) -> int:
    epsilons = [float(e) for e in args.epsilon_sweep.split(",") if e]
    resp = service.handle_redundancy(service.RedundancyRequest(
        scheme=args.scheme, module_inputs=args.module_inputs, n=args.n,
        stages=args.stages, epsilons=epsilons, trials=args.trials,
        seed=args.seed))
    _emit(resp.model_dump_json(indent=2), args.output)
    return EXIT_OK


def _cmd_render(args) -> int:
    layout = _layout_ref(args).resolve()
    overlay = None
    if args.overlay:
        with open(args.overlay) as fh:
            doc = json.load(fh)
        overlay = _overlay_from_json(doc)
    _emit(formats.render_svg(layout, overlay), args.output)
    return EXIT_OK


def _overlay_from_json(doc):
    """Rebuild a minimal overlay from a serialized campaign or displacement
    report so render can color cells."""
    from .faults import (CampaignReport, DisplacementRecord, Displace, Omit,
                         Verdict)
    if "instances" in doc:
        instances, verdicts = [], []
        for row in doc["instances"]:
            kind, detail = row["instance_kind"], row["detail"]
            if kind in ("omit1", "omit2"):
                ids = frozenset(int(i) for i in detail.split("+"))
                instances.append(Omit(ids))
            elif kind == "displace":
                cid = int(detail.split(":")[0])
                instances.append(Displace(cid, (1.0, 0.0), 0.0))
            else:
                continue
            verdicts.append(Verdict(row["verdict"]))
        passes = sum(v is Verdict.PASS for v in verdicts)
        return CampaignReport(tuple(instances), tuple(verdicts), passes,
                              len(verdicts))
    if "cells" in doc:
        return [DisplacementRecord(c["cell_id"],
                                   {k: float(v)
                                    for k, v in c["per_direction"].items()})
                for c in doc["cells"]]
    raise service.ValidationFailure("overlay file is not a known report")


def _cmd_metrics(args) -> int:
    resp = service.handle_metrics(
        service.MetricsRequest(layout=_layout_ref(args)))
    _emit(resp.model_dump_json(indent=2), None)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(service.app, host=args.host, port=args.port)
    return EXIT_OK


def _add_layout_args(p, gate_choice=True):
    p.add_argument("--layout", help="native layout JSON file")
    if gate_choice:
        p.add_argument("--gate", choices=sorted(GATE_NAMES),
                       help="bundled gate name")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--samples", type=int, default=argparse.SUPPRESS,
                        help="total clock samples across all input vectors")
    parser = argparse.ArgumentParser(
        prog="qcalab", parents=[common],
        description="Cell-level QCA simulator and fault-injection lab")
    parser.set_defaults(seed=0, jobs=1, samples=None)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=lambda **kw: argparse.ArgumentParser(
                                    parents=[common], **kw))

    p = sub.add_parser("simulate", help="waveform CSV plus truth table")
    _add_layout_args(p)
    p.add_argument("-o", "--output", help="waveform CSV path (default stdout)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("truth-table", help="measured logic table")
    _add_layout_args(p)
    p.add_argument("--json", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_truth_table)

    p = sub.add_parser("campaign", help="fault-injection campaign")
    _add_layout_args(p)
    p.add_argument("--fault", required=True,
                   choices=["omission1", "omission2", "deposit"])
    p.add_argument("--policy", default="adjacent-pairs",
                   choices=["adjacent-pairs", "all-pairs"])
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_campaign)

    p = sub.add_parser("sweep-displacement",
                       help="permissible displacement per cell")
    _add_layout_args(p)
    p.add_argument("--thresholds", default="10,20,500",
                   help="comma-separated nm thresholds")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_sweep_displacement)

    p = sub.add_parser("redundancy", help="redundancy scheme analysis")
    p.add_argument("--scheme", required=True,
                   choices=["tmr", "nand-mux", "maj-mux"])
    p.add_argument("--module-inputs", type=int, default=2)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--stages", type=int, default=2)
    p.add_argument("--epsilon-sweep", default="0.001,0.01,0.1")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("-o", "--output")
    p.set_defaults(func=_cmd_redundancy)

    p = sub.add_parser("render", help="SVG rendering")
    _add_layout_args(p)
    p.add_argument("--overlay", help="campaign or displacement JSON report")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("metrics", help="cell count, area, latency")
    _add_layout_args(p)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except service.ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (formats.SyntaxError, formats.SchemaError, formats.InvariantError,
            formats.UnsupportedFeatureError, json.JSONDecodeError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NonConvergenceError as exc:
        print(f"error: non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
