"""HTTP service over the simulator: pydantic request/response models plus a
FastAPI app. The handlers are plain functions so the CLI can call them
without a running server.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Literal

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from . import formats
from .engine import (NonConvergenceError, SimParams, required_periods,
                     simulate, truth_table, input_vectors)
from .faults import (PairPolicy, enumerate_depositions,
                     enumerate_double_omissions, enumerate_single_omissions,
                     make_campaign, run_campaign, displacement_summary)
from .gates import GATE_NAMES, by_name
from .model import latency_phases, layout_metrics, validate_layout
from .redundancy import (Scheme, SchemeParams, build_maj_mux, build_nand_mux,
                         build_tmr, estimate_overhead, mc_reliability,
                         tmr_reliability_analytic, xor_module)


class ValidationFailure(Exception):
    """Bad request inputs or a layout that fails validation."""


class ParamsModel(BaseModel):
    samples: int | None = None
    output_threshold: float | None = None
    radius_of_effect_nm: float | None = None
    convergence_tolerance: float | None = None

    def to_params(self) -> SimParams:
        overrides = {k: v for k, v in self.model_dump().items()
                     if v is not None}
        try:
            return SimParams(**overrides)
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from None


class LayoutRef(BaseModel):
    """Either a bundled gate name or an inline native layout document."""

    gate: str | None = None
    document: dict | None = None

    def resolve(self):
        if (self.gate is None) == (self.document is None):
            raise ValidationFailure("provide exactly one of gate/document")
        if self.gate is not None:
            if self.gate not in GATE_NAMES:
                raise ValidationFailure(
                    f"unknown gate {self.gate!r}; "
                    f"choices: {', '.join(sorted(GATE_NAMES))}")
            return by_name(self.gate)
        try:
            return formats.parse_layout(json.dumps(self.document))
        except ValueError as exc:
            raise ValidationFailure(str(exc)) from None


def resolve_checked(ref: LayoutRef, radius_nm: float):
    layout = ref.resolve()
    report = validate_layout(layout, radius_of_effect_nm=radius_nm)
    if not report.ok:
        msgs = "; ".join(f.message for f in report.findings)
        raise ValidationFailure(f"layout validation failed: {msgs}")
    return layout


class TruthTableRequest(BaseModel):
    layout: LayoutRef
    params: ParamsModel = Field(default_factory=ParamsModel)


class TruthRowModel(BaseModel):
    inputs: list[int]
    outputs: list[int]
    polarizations: list[float]


class TruthTableResponse(BaseModel):
    input_names: list[str]
    output_names: list[str]
    rows: list[TruthRowModel]
    p_max: float
    passed: bool


def handle_truth_table(req: TruthTableRequest) -> TruthTableResponse:
    params = req.params.to_params()
    layout = resolve_checked(req.layout, params.radius_of_effect_nm)
    table = truth_table(layout, params)
    return TruthTableResponse(
        input_names=list(table.input_names),
        output_names=list(table.output_names),
        rows=[TruthRowModel(inputs=list(r.inputs), outputs=list(r.outputs),
                            polarizations=list(r.polarizations))
              for r in table.rows],
        p_max=table.p_max, passed=table.passed)


class SimulateRequest(BaseModel):
    layout: LayoutRef
    params: ParamsModel = Field(default_factory=ParamsModel)


class SimulateResponse(BaseModel):
    truth_table: TruthTableResponse
    waveform_csv: str
    samples_per_period: int
    window_samples: int


def handle_simulate(req: SimulateRequest) -> SimulateResponse:
    params = req.params.to_params()
    layout = resolve_checked(req.layout, params.radius_of_effect_nm)
    table = truth_table(layout, params)
    names = sorted(n for n in layout.input_names())
    trace = simulate(layout, input_vectors(names), params)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    series = sorted(trace.recorded)
    w.writerow(["sample", "vector"] + series)
    for s in range(trace.total_samples):
        w.writerow([s, s // trace.window_samples]
                   + [f"{trace.recorded[nm][s]:.6f}" for nm in series])
    return SimulateResponse(
        truth_table=TruthTableResponse(
            input_names=list(table.input_names),
            output_names=list(table.output_names),
            rows=[TruthRowModel(inputs=list(r.inputs),
                                outputs=list(r.outputs),
                                polarizations=list(r.polarizations))
                  for r in table.rows],
            p_max=table.p_max, passed=table.passed),
        waveform_csv=buf.getvalue(),
        samples_per_period=trace.samples_per_period,
        window_samples=trace.window_samples)


class CampaignRequest(BaseModel):
    layout: LayoutRef
    fault: Literal["omission1", "omission2", "deposit"]
    policy: Literal["adjacent-pairs", "all-pairs"] = "adjacent-pairs"
    params: ParamsModel = Field(default_factory=ParamsModel)
    jobs: int = 1


class CampaignInstanceModel(BaseModel):
    instance_kind: str
    detail: str
    verdict: str


class CampaignResponse(BaseModel):
    pass_count: int
    total: int
    tolerance_percent: str
    instances: list[CampaignInstanceModel]


def handle_campaign(req: CampaignRequest) -> CampaignResponse:
    params = req.params.to_params()
    layout = resolve_checked(req.layout, params.radius_of_effect_nm)
    if req.fault == "omission1":
        instances = enumerate_single_omissions(layout)
    elif req.fault == "omission2":
        policy = (PairPolicy.ALL_PAIRS if req.policy == "all-pairs"
                  else PairPolicy.ADJACENT_PAIRS)
        instances = enumerate_double_omissions(layout, policy)
    else:
        instances = enumerate_depositions(layout)
    report = run_campaign(make_campaign(layout, instances, params),
                          jobs=req.jobs)
    return CampaignResponse(
        pass_count=report.pass_count, total=report.total,
        tolerance_percent=formats.format_percent(report.pass_count,
                                                 report.total),
        instances=[CampaignInstanceModel(instance_kind=k, detail=d,
                                         verdict=v)
                   for k, d, v in report.rows()])


class DisplacementRequest(BaseModel):
    layout: LayoutRef
    thresholds_nm: list[float] = Field(default_factory=lambda: [10.0, 20.0, 500.0])
    step_nm: float = 1.0
    params: ParamsModel = Field(default_factory=ParamsModel)
    jobs: int = 1


class ThresholdModel(BaseModel):
    threshold_nm: float
    hits: int
    total: int
    percent: str


class DisplacementResponse(BaseModel):
    thresholds: list[ThresholdModel]
    cells: list[dict]


def handle_displacement(req: DisplacementRequest) -> DisplacementResponse:
    params = req.params.to_params()
    layout = resolve_checked(req.layout, params.radius_of_effect_nm)
    if not req.thresholds_nm or any(t <= 0 for t in req.thresholds_nm):
        raise ValidationFailure("thresholds must be positive")
    summary = displacement_summary(layout, thresholds=req.thresholds_nm,
                                   params=params, step_nm=req.step_nm,
                                   jobs=req.jobs)
    total = len(summary.records)
    return DisplacementResponse(
        thresholds=[
            ThresholdModel(
                threshold_nm=t,
                hits=sum(r.permissible_nm >= t for r in summary.records),
                total=total,
                percent=formats.format_percent(
                    sum(r.permissible_nm >= t for r in summary.records),
                    total))
            for t in summary.thresholds],
        cells=[{"cell_id": r.cell_id,
                "permissible_nm": r.permissible_nm,
                "per_direction": dict(sorted(r.per_direction.items()))}
               for r in summary.records])


class RedundancyRequest(BaseModel):
    scheme: Literal["tmr", "nand-mux", "maj-mux"]
    module_inputs: int = 2
    n: int = 3
    stages: int = 2
    epsilons: list[float] = Field(default_factory=lambda: [0.001, 0.01, 0.1])
    trials: int = 10000
    seed: int = 0


class EpsilonPointModel(BaseModel):
    epsilon: float
    reliability: float
    ci_low: float
    ci_high: float
    analytic: float | None = None


class RedundancyResponse(BaseModel):
    scheme: str
    overhead: dict
    sweep: list[EpsilonPointModel]


def handle_redundancy(req: RedundancyRequest) -> RedundancyResponse:
    try:
        module = xor_module(req.module_inputs)
        if req.scheme == "tmr":
            net = build_tmr(module)
            sp = SchemeParams(Scheme.TMR)
        elif req.scheme == "nand-mux":
            net = build_nand_mux(module, req.n, req.stages)
            sp = SchemeParams(Scheme.NAND_MUX, req.n, req.stages)
        else:
            net = build_maj_mux(module, req.n, req.stages)
            sp = SchemeParams(Scheme.MAJ_MUX, req.n, req.stages)
    except ValueError as exc:
        raise ValidationFailure(str(exc)) from None
    sweep = []
    for eps in req.epsilons:
        if not 0.0 <= eps <= 1.0:
            raise ValidationFailure("epsilon must lie in [0, 1]")
        est = mc_reliability(net, eps, req.trials, seed=req.seed,
                             reference=net)
        ana = (tmr_reliability_analytic((1.0 - eps) ** 1)
               if req.scheme == "tmr" else None)
        sweep.append(EpsilonPointModel(
            epsilon=eps, reliability=est.estimate, ci_low=est.ci_low,
            ci_high=est.ci_high, analytic=ana))
    return RedundancyResponse(scheme=req.scheme,
                              overhead=estimate_overhead(sp), sweep=sweep)


class MetricsRequest(BaseModel):
    layout: LayoutRef


class MetricsResponse(BaseModel):
    cell_count: int
    area_um2: float
    latency_phases: int
    periods_per_vector: int


def handle_metrics(req: MetricsRequest) -> MetricsResponse:
    layout = resolve_checked(req.layout, SimParams().radius_of_effect_nm)
    m = layout_metrics(layout)
    return MetricsResponse(
        cell_count=m.cell_count, area_um2=m.area_um2,
        latency_phases=m.latency_phases,
        periods_per_vector=required_periods(layout, SimParams()))


class RenderRequest(BaseModel):
    layout: LayoutRef


def handle_render(req: RenderRequest) -> str:
    layout = req.layout.resolve()
    return formats.render_svg(layout)


# --- FastAPI wiring -----------------------------------------------------------

app = FastAPI(title="qcalab", version="1.0")


def _wrap(handler, req):
    try:
        return handler(req)
    except ValidationFailure as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from None
    except NonConvergenceError as exc:
        raise HTTPException(status_code=409,
                            detail=f"non-convergence: {exc}") from None


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/gates")
def gates() -> list[str]:
    return sorted(GATE_NAMES)


@app.post("/simulate")
def simulate_endpoint(req: SimulateRequest) -> SimulateResponse:
    return _wrap(handle_simulate, req)


@app.post("/truth-table")
def truth_table_endpoint(req: TruthTableRequest) -> TruthTableResponse:
    return _wrap(handle_truth_table, req)


@app.post("/campaign")
def campaign_endpoint(req: CampaignRequest) -> CampaignResponse:
    return _wrap(handle_campaign, req)


@app.post("/sweep-displacement")
def displacement_endpoint(req: DisplacementRequest) -> DisplacementResponse:
    return _wrap(handle_displacement, req)


@app.post("/redundancy")
def redundancy_endpoint(req: RedundancyRequest) -> RedundancyResponse:
    return _wrap(handle_redundancy, req)


@app.post("/metrics")
def metrics_endpoint(req: MetricsRequest) -> MetricsResponse:
    return _wrap(handle_metrics, req)


@app.post("/render")
def render_endpoint(req: RenderRequest) -> Response:
    svg = _wrap(handle_render, req)
    return Response(content=svg, media_type="image/svg+xml")
