"""HTTP service exposing runs, deep audits and record comparisons.

Endpoints are synchronous on purpose: each call does real numeric work, and
the framework moves sync handlers off the event loop by itself. Config
validation failures surface as 422 with field locations; runtime rejections
(mismatched compare inputs, impossible draws) as 400.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import Field

from amalab import __version__
from amalab.experiments import (
    RunOutput,
    compare_records,
    csv_row,
    run_deep_audit,
    run_experiment,
)
from amalab.schemas import (
    AuditReportModel,
    ExperimentConfig,
    ResultRecord,
    StrictModel,
)

app = FastAPI(title="amalab", version=__version__)


class RunRequest(StrictModel):
    config: ExperimentConfig
    threads: int = Field(default=1, ge=1)


class RunResponse(StrictModel):
    record: ResultRecord
    seconds: float
    csv_row: str


class AuditRequest(StrictModel):
    config: ExperimentConfig
    threads: int = Field(default=1, ge=1)
    min_misreports: int = Field(default=1000, ge=1)
    trials: int = Field(default=5, ge=1)
    ir_profiles: int = Field(default=1000, ge=1)


class AuditResponse(StrictModel):
    report: AuditReportModel


class CompareRequest(StrictModel):
    records: list[ResultRecord] = Field(min_length=1)


class CompareRow(StrictModel):
    method: str
    mean_loss: float
    std_err: float
    metric: float
    improvement: str


class CompareResponse(StrictModel):
    env: str
    n: int
    m: int
    loss: str
    rows: list[CompareRow]
    best_method: str
    best_improvement: str
    table: str


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/run", response_model=RunResponse)
def run(req: RunRequest) -> RunResponse:
    try:
        out: RunOutput = run_experiment(req.config, threads=req.threads)
    except (ValueError, RuntimeError) as err:
        raise HTTPException(status_code=400, detail=str(err))
    return RunResponse(
        record=out.record,
        seconds=out.seconds,
        csv_row=csv_row(out.record, out.seconds),
    )


@app.post("/audit", response_model=AuditResponse)
def audit(req: AuditRequest) -> AuditResponse:
    try:
        report = run_deep_audit(
            req.config,
            threads=req.threads,
            min_misreports=req.min_misreports,
            trials=req.trials,
            ir_profiles=req.ir_profiles,
        )
    except (ValueError, RuntimeError) as err:
        raise HTTPException(status_code=400, detail=str(err))
    return AuditResponse(report=report)


@app.post("/compare", response_model=CompareResponse)
def compare(req: CompareRequest) -> CompareResponse:
    try:
        result = compare_records(req.records)
    except ValueError as err:
        raise HTTPException(status_code=400, detail=str(err))
    return CompareResponse(**result)
