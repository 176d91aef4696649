"""Experiment orchestration: matching to ground truth, RMSE, seeded sweeps."""

from __future__ import annotations

import csv
import io
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .estimation import ChirpEstimate, PipelineConfig, run_pipeline
from .io import ScenarioFile
from .kernel import LowPassFilter
from .signal_model import NoiseSpec, Scenario, add_noise, synthesize
from .sso import SnippetPlan

SWEEP_COLUMNS = ["snr_db", "example", "rate_hz", "total", "detected", "rmse", "std"]
HEATMAP_COLUMNS = ["t", "freq_true", "freq_est", "abs_residue"]

DEFAULT_DELTA = 2e-6
DEFAULT_SNIPPETS = 2500


@dataclass(frozen=True)
class Burst:
    train: int
    index: int
    start: float
    end: float
    theta: float
    slope: float

    def if_at(self, t):
        return self.theta + self.slope * (np.asarray(t, float) - self.start)


def ground_truth(scenario: Scenario) -> list[Burst]:
    return [Burst(j, i, a, b, scenario.trains[j].theta, scenario.trains[j].if_slope)
            for j, i, a, b in scenario.bursts()]


@dataclass
class MatchReport:
    detected: int
    total: int
    assignment: dict[int, int]          # burst position -> estimate position
    if_errors: dict[int, float]         # burst position -> relative IF error at midpoint
    min_overlap: float = 0.5
    if_tolerance: float = 0.05


def match_estimates(scenario: Scenario, estimates: list[ChirpEstimate],
                    plan: SnippetPlan | None = None, min_overlap: float = 0.5,
                    if_tolerance: float = 0.05, order: str = "fit") -> MatchReport:
    """Greedy one-to-one matching of bursts to estimates.

    A pair qualifies when the overlap covers ``min_overlap`` of the burst and
    the estimated IF line is within ``if_tolerance`` (relative) of the true IF
    at the overlap midpoint. Qualifying pairs are taken best first: by RMS
    relative IF error over the overlap (``fit``) or by descending overlap
    (``overlap``). Crossing or closely parallel tracks make the midpoint test
    accept either neighbour, which the ``fit`` order resolves. ``plan`` is
    accepted for interface symmetry.
    """
    if order not in ("fit", "overlap"):
        raise ValueError(f"unknown match order {order!r}")
    bursts = ground_truth(scenario)
    pairs = []
    for bi, b in enumerate(bursts):
        for ei, e in enumerate(estimates):
            lo, hi = max(b.start, e.gamma), min(b.end, e.end)
            ov = hi - lo
            if ov < min_overlap * (b.end - b.start) or ov <= 0:
                continue
            tm = 0.5 * (lo + hi)
            truth = float(b.if_at(tm))
            err = abs(float(e.if_at(tm)) - truth) / abs(truth)
            if err > if_tolerance:
                continue
            ts = np.linspace(lo, hi, 33)
            fit = float(np.sqrt(np.mean(((e.if_at(ts) - b.if_at(ts)) / b.if_at(ts)) ** 2)))
            key = (fit, -ov) if order == "fit" else (-ov, fit)
            pairs.append((key, bi, ei, err))
    pairs.sort()
    assignment, errors, used = {}, {}, set()
    for _, bi, ei, err in pairs:
        if bi in assignment or ei in used:
            continue
        assignment[bi] = ei
        errors[bi] = err
        used.add(ei)
    return MatchReport(len(assignment), len(bursts), assignment, errors,
                       min_overlap, if_tolerance)


def experiment_rmse(scenario: Scenario, estimates: list[ChirpEstimate], plan: SnippetPlan,
                    report: MatchReport | None = None, variant: str = "nearest") -> float:
    """sqrt(sum over snippets and active bursts of relative IF error^2 / D).

    Matched bursts use their estimate. Unmatched bursts use the estimate whose
    IF at t_k is nearest (``nearest``) or are skipped (``exclude``).
    Returns NaN when nothing was matched.
    """
    if variant not in ("nearest", "exclude"):
        raise ValueError(f"unknown rmse variant {variant!r}")
    report = report or match_estimates(scenario, estimates, plan)
    if report.detected == 0:
        return math.nan
    bursts = ground_truth(scenario)
    tk = plan.centers
    total = 0.0
    for bi, b in enumerate(bursts):
        active = tk[(tk >= b.start) & (tk <= b.end)]
        if active.size == 0:
            continue
        truth = b.if_at(active)
        if bi in report.assignment:
            est = estimates[report.assignment[bi]].if_at(active)
        elif variant == "nearest":
            cands = np.array([e.if_at(active) for e in estimates])
            est = cands[np.argmin(np.abs(cands - truth), axis=0), np.arange(active.size)]
        else:
            continue
        rel = (truth - est) / truth
        total += float(np.sum(rel * rel))
    return math.sqrt(total / plan.count)


def emit_heatmap(scenario: Scenario, estimates: list[ChirpEstimate], plan: SnippetPlan,
                 report: MatchReport | None = None) -> str:
    """CSV rows t,freq_true,freq_est,abs_residue for every matched active burst."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEATMAP_COLUMNS)
    if estimates:
        report = report or match_estimates(scenario, estimates, plan)
        bursts = ground_truth(scenario)
        rows = []
        for bi, ei in report.assignment.items():
            b = bursts[bi]
            for t in plan.centers[(plan.centers >= b.start) & (plan.centers <= b.end)]:
                ft, fe = float(b.if_at(t)), float(estimates[ei].if_at(t))
                rows.append((float(t), ft, fe, abs(ft - fe)))
        for r in sorted(rows):
            w.writerow([repr(v) for v in r])
    return buf.getvalue()


# -- sweeps ---------------------------------------------------------------------------

def make_plan(scenario: Scenario, rate: float | None = None, delta: float | None = None,
              snippets: int | None = None, grid_size: int | None = None,
              percentile: float = 99.0, interpolate: bool = True,
              filter_kind: str = "smooth") -> SnippetPlan:
    rate = rate or scenario.sample_rate
    return SnippetPlan.uniform(scenario.horizon, rate, delta or DEFAULT_DELTA,
                               snippets or DEFAULT_SNIPPETS, grid_size=grid_size,
                               percentile=percentile, interpolate=interpolate,
                               band_center=scenario.band_center,
                               filter=LowPassFilter(filter_kind))


def pipeline_config(sf: ScenarioFile, overrides: dict | None = None) -> PipelineConfig:
    kw = dict(sf.pipeline)
    kw.update(overrides or {})
    if "eta" not in kw:
        raise ValueError("pipeline needs eta (scenario 'pipeline' block or override)")
    kw.setdefault("b_rec", 2 * math.pi * sf.scenario.sample_rate)
    return PipelineConfig(**kw)


@dataclass
class ExperimentConfig:
    scenario: ScenarioFile
    snr_list: list[float]
    rate_list: list[float]
    trials: int = 16
    base_seed: int = 0
    plan_overrides: dict = field(default_factory=dict)
    pipeline_overrides: dict = field(default_factory=dict)
    rmse_variant: str = "nearest"
    min_overlap: float = 0.5
    if_tolerance: float = 0.05
    match_order: str = "fit"
    threads: int | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.snr_list or not self.rate_list:
            raise ValueError("snr_list and rate_list must be non-empty")


@dataclass
class TrialResult:
    detected: int
    total: int
    rmse: float
    n_estimates: int


@dataclass
class SweepRow:
    snr_db: float
    example: str
    rate_hz: float
    total: int
    detected: float
    rmse: float
    std: float
    trials: list[TrialResult] = field(default_factory=list, repr=False)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    missing: list[tuple[float, float, str]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            w.writerow([repr(float(r.snr_db)), r.example, repr(float(r.rate_hz)), r.total,
                        repr(float(r.detected)), repr(float(r.rmse)), repr(float(r.std))])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'SNR':>6} {'example':>10} {'rate (GHz)':>10} {'total':>6} "
                 f"{'detected':>9} {'RMSE':>10} {'std':>10}"]
        for r in self.rows:
            lines.append(f"{r.snr_db:6.1f} {r.example:>10} {r.rate_hz / 1e9:10.4f} "
                         f"{r.total:6d} {r.detected:9.2f} {r.rmse:10.6f} {r.std:10.6f}")
        for snr, rate, why in self.missing:
            lines.append(f"missing: snr={snr} rate={rate}: {why}")
        return "\n".join(lines)


def cell_key(example: str, snr_db: float, rate: float) -> int:
    """Stable 32-bit identifier of a sweep cell, used as a seed stream id."""
    return zlib.crc32(f"{example}|{snr_db!r}|{rate!r}".encode())


def run_trial(cfg: ExperimentConfig, snr_db: float, rate: float, trial: int) -> TrialResult:
    sf = cfg.scenario
    sc = sf.scenario.with_rate(rate)
    po = {**sf.plan, **cfg.plan_overrides}
    plan = make_plan(sc, rate, po.get("delta"), po.get("snippets"), po.get("grid"),
                     po.get("percentile", 99.0), po.get("interpolate", True),
                     po.get("filter", "smooth"))
    pcfg = pipeline_config(sf, cfg.pipeline_overrides)
    clean = synthesize(sc)
    noisy = add_noise(clean, NoiseSpec(snr_db, cfg.base_seed),
                      cell_key(sc.name, snr_db, rate), trial)
    res = run_pipeline(noisy, plan, pcfg, threads=cfg.threads)
    rep = match_estimates(sc, res.estimates, plan, cfg.min_overlap, cfg.if_tolerance,
                          cfg.match_order)
    rmse = experiment_rmse(sc, res.estimates, plan, rep, cfg.rmse_variant)
    return TrialResult(rep.detected, rep.total, rmse, len(res.estimates))


def run_sweep(cfg: ExperimentConfig, progress=None) -> SweepReport:
    """Every (snr, rate) cell over ``trials`` seeded trials, in a fixed order."""
    name = cfg.scenario.scenario.name
    rows, missing = [], []
    for snr in cfg.snr_list:
        for rate in cfg.rate_list:
            try:
                trials = [run_trial(cfg, snr, rate, k) for k in range(cfg.trials)]
            except Exception as exc:  # a broken cell must not stop the sweep
                missing.append((snr, rate, f"{type(exc).__name__}: {exc}"))
                continue
            rm = np.array([t.rmse for t in trials], float)
            ok = rm[np.isfinite(rm)]
            if ok.size == 0:
                missing.append((snr, rate, "no matched pulses"))
            rows.append(SweepRow(
                snr, name, rate, trials[0].total,
                float(np.mean([t.detected for t in trials])),
                float(np.mean(ok)) if ok.size else math.nan,
                float(np.std(ok)) if ok.size else math.nan, trials))
            if progress:
                progress(rows[-1])
    return SweepReport(rows, missing)
