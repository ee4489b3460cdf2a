"""Experiment runner: configured searches, evaluation, audits, comparisons.

A run builds the environment, selects mechanism parameters with the requested
method, evaluates them exactly on a fresh seeded profile batch, spot-audits
incentives on the first hundred profiles of that batch, and returns a record
whose canonical JSON bytes depend only on the config and seed. The deep audit
adds an exhaustive single-entry misreport grid and a large IR sweep.

Random streams are keyed [seed, stream, ...]; codes 0-4 belong to the
optimizer, this module uses 10+.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from amalab.audit import (
    GAP_TOL,
    ExhaustiveGrid,
    PerturbGaussian,
    Resample,
    Scale,
    ZeroReport,
    ic_audit,
    tie_gap,
)
from amalab.environments import BuiltEnvironment, make_sampler
from amalab.mechanism import (
    AmaParams,
    RewardProfile,
    exact_loss_batch,
    loss_to_metric,
    truthful_utilities_batch,
    vcg_params,
)
from amalab.optimizers import optimize, sample_batch
from amalab.schemas import (
    AuditReportModel,
    AuditSummaryModel,
    ExperimentConfig,
    ParamsModel,
    ResultRecord,
    StartTraceModel,
)

_STREAM_EVAL = 10
_STREAM_SPOT_AUDIT = 11
_STREAM_DEEP_PROFILES = 12
_STREAM_DEEP_GAINS = 13
_STREAM_DEEP_IR = 14

# spot audit embedded in every run
SPOT_AUDIT_PROFILES = 100
SPOT_AUDIT_TRIALS = 2

IC_GAIN_TOL = 1e-9
IR_UTILITY_FLOOR = -1e-9

CSV_HEADER = "env,n,m,method,mean_loss,std_err,improvement,seconds,seed"


@dataclass(frozen=True)
class RunOutput:
    """A result record plus the wall time the record itself must not contain."""

    record: ResultRecord
    seconds: float


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _pmap(fn, items, threads: int) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def canonical_json_bytes(data) -> bytes:
    if hasattr(data, "model_dump"):
        data = data.model_dump(mode="json")
    return (
        json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
    ).encode()


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json_bytes(config)).hexdigest()[:16]


def canonical_record_bytes(record) -> bytes:
    return canonical_json_bytes(record)


def record_filename(record) -> str:
    if hasattr(record, "model_dump"):
        record = record.model_dump(mode="json")
    return (
        f"{record['env']}_n{record['n']}_m{record['m']}"
        f"_{record['config']['loss']}_{record['method']}_seed{record['seed']}.json"
    )


def improvement_label(vcg_metric: float, metric: float) -> str:
    """Signed relative metric change against the VCG baseline.

    Positive means the metric moved up; for makespan (minimized) improvements
    therefore print negative. A zero baseline admits no percentage.
    """
    if vcg_metric == 0.0:
        return "N/A"
    return f"{100.0 * (metric - vcg_metric) / abs(vcg_metric):+.2f}%"


def csv_row(record: ResultRecord, seconds: float) -> str:
    return ",".join(
        [
            record.env,
            str(record.n),
            str(record.m),
            record.method,
            repr(record.mean_loss),
            repr(record.std_err),
            record.improvement,
            f"{seconds:.3f}",
            str(record.seed),
        ]
    )


def _spot_strategies(sampler) -> list:
    return [
        Resample(sampler),
        Scale(0.5),
        Scale(2.0),
        ZeroReport(),
        PerturbGaussian(0.5 * sampler.support_hi),
    ]


def _spot_audit(
    mdp, sampler, params: AmaParams, per: np.ndarray, seed: int, threads: int
) -> AuditSummaryModel:
    # Ties are counted, not filtered out: misreport gains compare economy
    # optima, whose values do not depend on how an argmax tie resolves.
    chosen = [
        RewardProfile(per[k]) for k in range(min(SPOT_AUDIT_PROFILES, per.shape[0]))
    ]
    tied = sum(1 for p in chosen if tie_gap(mdp, params, p) < GAP_TOL)
    strategies = _spot_strategies(sampler)

    def gain_of(item) -> float:
        k, profile = item
        return ic_audit(
            mdp,
            params,
            profile,
            strategies,
            trials=SPOT_AUDIT_TRIALS,
            seed=_derived_seed(seed, _STREAM_SPOT_AUDIT, k),
        )

    gains = _pmap(gain_of, enumerate(chosen), threads)
    stacked = np.stack([p.per_agent for p in chosen])
    min_ir = float(truthful_utilities_batch(mdp, params, stacked).min())
    per_agent = 2 * SPOT_AUDIT_TRIALS + 3
    return AuditSummaryModel(
        profiles=len(chosen),
        misreports=len(chosen) * params.n_agents * per_agent,
        worst_ic_gain=float(max(gains)),
        min_ir_utility=min_ir,
        tied_profiles=tied,
    )


def _select_params(
    config: ExperimentConfig, built: BuiltEnvironment, dist, threads: int
) -> tuple[AmaParams, tuple]:
    if config.method == "vcg":
        return vcg_params(built.n_agents, built.mdp), ()
    result = optimize(
        built,
        config.loss_spec(built),
        dist,
        config.optimizer.build(config.seed),
        bounds=config.bounds.build() if config.bounds is not None else None,
        method=config.method,
        threads=threads,
        reg=config.optimizer.regularization(),
    )
    return result.params, result.starts


def run_experiment(config: ExperimentConfig, threads: int = 1) -> RunOutput:
    """Select parameters, evaluate them exactly, audit, and assemble the record.

    The evaluation batch is drawn from its own stream, so the VCG baseline
    (re-evaluated on the same batch) is directly comparable regardless of
    which method ran. Thread count never changes the record bytes.
    """
    t0 = time.perf_counter()
    built = config.environment.build()
    dist = config.distribution.build()
    sampler = make_sampler(built, dist)
    loss = config.loss_spec(built)
    mdp = built.mdp
    seed = config.seed

    params, starts = _select_params(config, built, dist, threads)

    per = sample_batch(sampler, config.eval_profiles, _rng(seed, _STREAM_EVAL))
    losses = exact_loss_batch(mdp, params, per, loss)
    mean_loss = float(losses.mean())
    if len(losses) > 1:
        std_err = float(losses.std(ddof=1) / math.sqrt(len(losses)))
    else:
        std_err = 0.0
    if config.method == "vcg":
        vcg_losses = losses
    else:
        vcg_losses = exact_loss_batch(
            mdp, vcg_params(built.n_agents, mdp), per, loss
        )
    vcg_mean = float(vcg_losses.mean())
    # + 0.0 keeps an exactly-zero revenue from serializing as -0.0
    metric = float(loss_to_metric(loss.kind, np.asarray(mean_loss))) + 0.0
    vcg_metric = float(loss_to_metric(loss.kind, np.asarray(vcg_mean))) + 0.0

    audit = _spot_audit(mdp, sampler, params, per, seed, threads)
    status = "FAILED" if audit.worst_ic_gain > IC_GAIN_TOL else "ok"

    record = ResultRecord(
        config=config,
        config_hash=config_hash(config),
        env=built.kind,
        n=built.n_agents,
        m=built.size_m,
        method=config.method,
        mean_loss=mean_loss,
        std_err=std_err,
        metric=metric,
        vcg_mean_loss=vcg_mean,
        vcg_metric=vcg_metric,
        improvement=improvement_label(vcg_metric, metric),
        params=ParamsModel(
            weights=[float(w) for w in params.weights],
            boosts=[[float(b) for b in row] for row in params.boosts],
        ),
        starts=[
            StartTraceModel(
                index=s.index,
                grid_loss=float(s.grid_loss),
                final_loss=float(s.final_loss),
            )
            for s in starts
        ],
        audit=audit,
        status=status,
        seed=seed,
    )
    return RunOutput(record=record, seconds=time.perf_counter() - t0)


def _grid_range(built: BuiltEnvironment, sampler) -> tuple[float, float]:
    # misreports live where true tables do: durations are nonpositive
    hi = sampler.support_hi
    if built.kind == "task_scheduling":
        return -hi, 0.0
    return 0.0, hi


def run_deep_audit(
    config: ExperimentConfig,
    threads: int = 1,
    *,
    min_misreports: int = 1000,
    trials: int = 5,
    ir_profiles: int = 1000,
) -> AuditReportModel:
    """Audit the mechanism the config selects, exhaustively enough to trust.

    Draws as many profiles as needed to evaluate at least min_misreports
    deviations, including a 5-point exhaustive single-entry grid per agent,
    then sweeps truthful utility over ir_profiles fresh profiles. Profiles
    containing argmax ties are audited like any other (ties are common by
    construction, e.g. every marginal economy under unit weights and zero
    boosts) and counted in the report. Non-vcg methods run their search
    first.
    """
    if min_misreports < 1 or trials < 1 or ir_profiles < 1:
        raise ValueError("audit budgets must be >= 1")
    built = config.environment.build()
    dist = config.distribution.build()
    sampler = make_sampler(built, dist)
    mdp = built.mdp
    seed = config.seed

    params, _ = _select_params(config, built, dist, threads)

    lo, hi = _grid_range(built, sampler)
    grid = ExhaustiveGrid(lo=lo, hi=hi, points=5)
    strategies = _spot_strategies(sampler) + [grid]
    per_profile = built.n_agents * (
        2 * trials + 3 + grid.points * mdp.num_states * mdp.num_actions
    )
    num_profiles = max(1, math.ceil(min_misreports / per_profile))

    draw_rng = _rng(seed, _STREAM_DEEP_PROFILES)
    profiles = [sampler.sample(draw_rng) for _ in range(num_profiles)]
    tied = sum(1 for p in profiles if tie_gap(mdp, params, p) < GAP_TOL)

    def gain_of(item) -> float:
        k, profile = item
        return ic_audit(
            mdp,
            params,
            profile,
            strategies,
            trials=trials,
            seed=_derived_seed(seed, _STREAM_DEEP_GAINS, k),
        )

    worst = float(max(_pmap(gain_of, enumerate(profiles), threads)))

    ir_per = sample_batch(sampler, ir_profiles, _rng(seed, _STREAM_DEEP_IR))
    min_ir = float(truthful_utilities_batch(mdp, params, ir_per).min())

    return AuditReportModel(
        env=built.kind,
        n=built.n_agents,
        m=built.size_m,
        method=config.method,
        seed=seed,
        profiles=num_profiles,
        misreports=num_profiles * per_profile,
        tied_profiles=tied,
        worst_ic_gain=worst,
        gain_tolerance=IC_GAIN_TOL,
        ic_pass=worst <= IC_GAIN_TOL,
        ir_profiles=ir_profiles,
        min_ir_utility=min_ir,
        utility_floor=IR_UTILITY_FLOOR,
        ir_pass=min_ir >= IR_UTILITY_FLOOR,
    )


def compare_records(records: Sequence[ResultRecord]) -> dict:
    """Percent improvement of each record over the VCG baseline record.

    All records must describe the same environment, distribution and loss;
    exactly the method and its budgets may differ. The best row is the
    lowest mean loss among non-vcg methods (VCG itself if nothing else ran).
    """
    if not records:
        raise ValueError("compare needs at least one record")
    base = records[0]
    for r in records[1:]:
        same = (
            (r.env, r.n, r.m) == (base.env, base.n, base.m)
            and r.config.loss == base.config.loss
            and r.config.distribution == base.config.distribution
        )
        if not same:
            raise ValueError(
                "records describe different experiments; compare like with like"
            )
    vcg = next((r for r in records if r.method == "vcg"), None)
    if vcg is None:
        raise ValueError("compare needs a vcg baseline record")
    rows = [
        {
            "method": r.method,
            "mean_loss": r.mean_loss,
            "std_err": r.std_err,
            "metric": r.metric,
            "improvement": improvement_label(vcg.metric, r.metric),
        }
        for r in records
    ]
    candidates = [r for r in records if r.method != "vcg"] or [vcg]
    best = min(candidates, key=lambda r: r.mean_loss)
    result = {
        "env": base.env,
        "n": base.n,
        "m": base.m,
        "loss": base.config.loss,
        "rows": rows,
        "best_method": best.method,
        "best_improvement": improvement_label(vcg.metric, best.metric),
    }
    result["table"] = format_compare_table(result)
    return result


def format_compare_table(result: dict) -> str:
    lines = [
        f"{result['env']} n={result['n']} m={result['m']} loss={result['loss']}",
        f"{'method':<8} {'mean_loss':>12} {'std_err':>10} {'metric':>12} "
        f"{'improvement':>12}",
    ]
    for row in result["rows"]:
        lines.append(
            f"{row['method']:<8} {row['mean_loss']:>12.6f} {row['std_err']:>10.6f} "
            f"{row['metric']:>12.6f} {row['improvement']:>12}"
        )
    lines.append(f"best: {result['best_method']} ({result['best_improvement']})")
    return "\n".join(lines)
