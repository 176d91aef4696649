"""Command line interface: ``chirpsep {gen,diagram,analyze,eval,sweep,probe-noise}``."""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import io as cio
from .estimation import PipelineConfig, analyze_diagram
from .harness import (ExperimentConfig, cell_key, emit_heatmap, experiment_rmse, make_plan,
                      match_estimates, pipeline_config, run_sweep)
from .kernel import LowPassFilter
from .signal_model import ConfigError, NoiseSpec, Scenario, add_noise, synthesize
from .sso import SnippetPlan, build_diagram, noise_floor_probe

EXIT_OK, EXIT_CONFIG, EXIT_NO_SIGNAL, EXIT_PARTIAL = 0, 2, 3, 4


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _plan_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("snippet plan")
    g.add_argument("--scenario", help="scenario file supplying band center and plan hints")
    g.add_argument("--delta", type=float, help="snippet half-width in seconds (default 2e-6)")
    g.add_argument("--snippets", type=int, help="number of snippets D (default 2500)")
    g.add_argument("--grid", type=int, help="FFT grid size G (default: power of two >= 8n)")
    g.add_argument("--percentile", type=float, help="threshold percentile (default 99)")
    g.add_argument("--no-interp", action="store_true", help="disable parabolic peak refinement")
    g.add_argument("--filter", choices=["smooth", "cosine"], help="low-pass filter shape")
    g.add_argument("--band-center", type=float, help="receiver tuning in rad/s")


def _pipeline_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("pipeline")
    g.add_argument("--eta", type=float, help="minimal separation in rad/s")
    g.add_argument("--b-rec", type=float, help="receiver bandwidth in rad/s")
    g.add_argument("--d1", type=int)
    g.add_argument("--d2", type=int)
    g.add_argument("--m-parts", type=int)
    g.add_argument("--alg3-raw-d2", action="store_true",
                   help="use D2 unscaled inside crossover partitions")
    g.add_argument("--merge-average", action="store_true",
                   help="merge collinear pieces by parameter averaging instead of refitting")


def _plan_overrides(a) -> dict:
    out = {}
    for key, attr in (("delta", "delta"), ("snippets", "snippets"), ("grid", "grid"),
                      ("percentile", "percentile"), ("filter", "filter")):
        v = getattr(a, attr, None)
        if v is not None:
            out[key] = v
    if getattr(a, "no_interp", False):
        out["interpolate"] = False
    return out


def _pipeline_overrides(a) -> dict:
    out = {}
    for key, attr in (("eta", "eta"), ("b_rec", "b_rec"), ("d1", "d1"), ("d2", "d2"),
                      ("m_parts", "m_parts")):
        v = getattr(a, attr, None)
        if v is not None:
            out[key] = v
    if getattr(a, "alg3_raw_d2", False):
        out["alg3_raw_d2"] = True
    if getattr(a, "merge_average", False):
        out["merge_by_average"] = True
    return out


def _scenario_file(a) -> cio.ScenarioFile | None:
    return cio.load_scenario(a.scenario) if getattr(a, "scenario", None) else None


def _plan_for(a, sample_rate: float, horizon: float, t0: float,
              sf: cio.ScenarioFile | None) -> SnippetPlan:
    po = {**(sf.plan if sf else {}), **_plan_overrides(a)}
    center = a.band_center
    if center is None:
        center = sf.scenario.band_center if sf else 0.0
    sc = Scenario((), horizon, sample_rate, center)
    plan = make_plan(sc, sample_rate, po.get("delta"), po.get("snippets"), po.get("grid"),
                     po.get("percentile", 99.0), po.get("interpolate", True),
                     po.get("filter", "smooth"))
    return plan.shifted(t0) if t0 else plan


def _record_plan(a):
    rec = cio.read_iq(a.iq)
    sf = _scenario_file(a)
    return rec, sf, _plan_for(a, rec.sample_rate, rec.duration, rec.t0, sf)


def _fmt_freq(v: float, hz: bool) -> str:
    return f"{v / (2 * math.pi):.6g} Hz" if hz else f"{v:.6g} rad/s"


# -- commands ---------------------------------------------------------------------------

def cmd_gen(a) -> int:
    sf = cio.load_scenario(a.scenario)
    sc = sf.scenario.with_rate(a.rate) if a.rate else sf.scenario
    rec = synthesize(sc)
    if a.snr is not None:
        rec = add_noise(rec, NoiseSpec(a.snr, a.seed), cell_key(sc.name, a.snr, sc.sample_rate),
                        a.trial)
    cio.write_iq(rec, a.output)
    print(f"wrote {len(rec)} samples at {sc.sample_rate:.6g} Hz to {a.output}")
    return EXIT_OK


def cmd_diagram(a) -> int:
    rec, sf, plan = _record_plan(a)
    eta = a.eta or (sf.pipeline.get("eta") if sf else None)
    if eta is None:
        raise ConfigError("diagram needs --eta or a scenario with pipeline.eta")
    d = build_diagram(rec, plan, float(eta), threads=a.threads)
    cio.write_diagram_csv(d, a.output)
    print(f"wrote {len(d)} diagram points from {plan.count} snippets to {a.output}")
    return EXIT_OK


def _config(a, sf, sample_rate) -> PipelineConfig:
    over = _pipeline_overrides(a)
    if sf is not None:
        return pipeline_config(sf, over)
    if "eta" not in over:
        raise ConfigError("analyze needs --eta or a scenario with pipeline.eta")
    over.setdefault("b_rec", 2 * math.pi * sample_rate)
    return PipelineConfig(**over)


def cmd_analyze(a) -> int:
    rec, sf, plan = _record_plan(a)
    cfg = _config(a, sf, rec.sample_rate)
    res = analyze_diagram(build_diagram(rec, plan, cfg.eta, threads=a.threads), cfg)
    cio.write_estimates_csv(res.estimates, a.output)
    for msg in res.failures:
        print(f"warning: {msg}", file=sys.stderr)
    print(f"wrote {len(res.estimates)} estimates to {a.output}")
    if not res.estimates:
        return EXIT_NO_SIGNAL
    return EXIT_OK


def cmd_eval(a) -> int:
    sf = cio.load_scenario(a.scenario)
    sc = sf.scenario
    ests = cio.read_estimates_csv(a.estimates)
    po = {**sf.plan, **_plan_overrides(a)}
    plan = make_plan(sc, sc.sample_rate, po.get("delta"), po.get("snippets"), po.get("grid"))
    rep = match_estimates(sc, ests, plan, a.min_overlap, a.if_tol, a.match_order)
    print(f"detected {rep.detected} of {rep.total}")
    for bi in sorted(rep.assignment):
        e = ests[rep.assignment[bi]]
        print(f"  burst {bi}: estimate {rep.assignment[bi] + 1}, "
              f"omega {_fmt_freq(e.omega, a.hz)}, rel IF error {rep.if_errors[bi]:.3g}")
    if rep.detected:
        print(f"rmse ({a.rmse_variant}) {experiment_rmse(sc, ests, plan, rep, a.rmse_variant):.6g}")
    if a.heatmap:
        with open(a.heatmap, "w") as fh:
            fh.write(emit_heatmap(sc, ests, plan, rep))
    return EXIT_OK if rep.detected else EXIT_NO_SIGNAL


def cmd_sweep(a) -> int:
    sf = cio.load_scenario(a.scenario)
    cfg = ExperimentConfig(sf, _floats(a.snr), _floats(a.rates) if a.rates
                           else [sf.scenario.sample_rate], trials=a.trials,
                           base_seed=a.seed, plan_overrides=_plan_overrides(a),
                           pipeline_overrides=_pipeline_overrides(a),
                           rmse_variant=a.rmse_variant, min_overlap=a.min_overlap,
                           if_tolerance=a.if_tol, match_order=a.match_order,
                           threads=a.threads)
    rep = run_sweep(cfg)
    text = rep.to_csv()
    if a.output:
        with open(a.output, "w", newline="") as fh:
            fh.write(text)
    print(rep.table())
    return EXIT_PARTIAL if rep.missing else EXIT_OK


def cmd_probe_noise(a) -> int:
    ns = [int(v) for v in _floats(a.n)]
    means = []
    print("n,mean_max,p95_max")
    for n in ns:
        s = noise_floor_probe(n, a.V, a.trials, a.seed, LowPassFilter(a.filter or "smooth"))
        means.append(s.mean_max)
        print(f"{n},{s.mean_max!r},{s.p95_max!r}")
    if len(ns) > 1:
        slope = np.polyfit(np.log(ns), np.log(means), 1)[0]
        print(f"# log-log slope {slope:.4f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chirpsep",
                                description="Separate and estimate pulsed linear chirps.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="scenario -> IQ file")
    g.add_argument("scenario")
    g.add_argument("-o", "--output", required=True, help=".csv for text, anything else binary")
    g.add_argument("--snr", type=float, help="SNR in dB (omit for a clean record)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trial", type=int, default=0)
    g.add_argument("--rate", type=float, help="override the sample rate (Hz)")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("diagram", help="IQ -> SSO diagram CSV")
    d.add_argument("iq")
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--eta", type=float)
    d.add_argument("--threads", type=int)
    _plan_args(d)
    d.set_defaults(func=cmd_diagram)

    an = sub.add_parser("analyze", help="IQ -> estimates CSV")
    an.add_argument("iq")
    an.add_argument("-o", "--output", required=True)
    an.add_argument("--threads", type=int)
    _plan_args(an)
    _pipeline_args(an)
    an.set_defaults(func=cmd_analyze)

    ev = sub.add_parser("eval", help="estimates + scenario -> match report")
    ev.add_argument("estimates")
    ev.add_argument("scenario")
    ev.add_argument("--delta", type=float)
    ev.add_argument("--snippets", type=int)
    ev.add_argument("--heatmap", help="write t,freq_true,freq_est,abs_residue CSV here")
    _match_args(ev)
    ev.set_defaults(func=cmd_eval)

    sw = sub.add_parser("sweep", help="seeded SNR x rate sweep -> CSV")
    sw.add_argument("scenario")
    sw.add_argument("--snr", required=True, help="comma separated SNRs in dB")
    sw.add_argument("--rates", help="comma separated sample rates in Hz")
    sw.add_argument("--trials", type=int, default=16)
    sw.add_argument("--seed", type=int, default=0, help="base seed")
    sw.add_argument("-o", "--output")
    sw.add_argument("--threads", type=int)
    sw.add_argument("--grid", type=int)
    sw.add_argument("--percentile", type=float)
    sw.add_argument("--no-interp", action="store_true")
    sw.add_argument("--filter", choices=["smooth", "cosine"])
    sw.add_argument("--delta", type=float)
    sw.add_argument("--snippets", type=int)
    _pipeline_args(sw)
    _match_args(sw)
    sw.set_defaults(func=cmd_sweep)

    pn = sub.add_parser("probe-noise", help="max |E_n| of pure-noise snippets versus n")
    pn.add_argument("--n", default="256,1024,4096,16384", help="comma separated orders")
    pn.add_argument("--V", type=float, default=1.0, help="per-component noise std")
    pn.add_argument("--trials", type=int, default=256)
    pn.add_argument("--seed", type=int, default=0)
    pn.add_argument("--filter", choices=["smooth", "cosine"])
    pn.set_defaults(func=cmd_probe_noise)
    return p


def _match_args(p: argparse.ArgumentParser):
    p.add_argument("--min-overlap", type=float, default=0.5)
    p.add_argument("--if-tol", type=float, default=0.05)
    p.add_argument("--match-order", choices=["fit", "overlap"], default="fit",
                   help="rank qualifying burst/estimate pairs by IF fit or by time overlap")
    p.add_argument("--rmse-variant", choices=["nearest", "exclude"], default="nearest")
    p.add_argument("--hz", action="store_true", help="print frequencies in Hz")


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.func(a)
    except (ConfigError, ValueError, KeyError, OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
