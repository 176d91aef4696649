import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chirpsep.io import load_scenario
from chirpsep.kernel import KernelSpec, LowPassFilter, kernel_eval
from chirpsep.signal_model import (ChirpPulseTrain, IQRecord, NoiseSpec, Scenario, add_noise,
                                   synthesize)
from chirpsep.sso import (SnippetPlan, Spectrum, TheoremDiagnostics, _batch_peaks,
                          build_diagram, default_grid_size, direct_spectrum, noise_floor_probe,
                          percentile_threshold, scenario_diagnostics, snippet_peaks,
                          snippet_spectrum, superlevel_partition, tone_trial, validate_plan)


def tone_record(omega, rate=1e6, N=4096):
    return IQRecord(np.exp(1j * omega * np.arange(N) / rate), rate)


def small_plan(rate=1e6, N=4096, delta=1e-4, count=40, **kw):
    return SnippetPlan.uniform(N / rate, rate, delta, count, **kw)


# -- thresholds and partitions --------------------------------------------------------

def test_percentile_constant():
    assert percentile_threshold(np.full(64, 2.5), 99) == 2.5


def test_percentile_linear_interpolation():
    assert percentile_threshold(np.arange(100.0), 99) == pytest.approx(98.01)


def test_percentile_top_count():
    mags = np.random.default_rng(0).random(4096)
    tau = percentile_threshold(mags, 99)
    assert np.sum(mags > tau) == 41


def test_percentile_empty():
    with pytest.raises(ValueError):
        percentile_threshold(np.zeros(0), 99)


def test_partition_empty_and_eta():
    assert superlevel_partition(np.zeros(32), 1.0, 1.0, 1.0) == []
    with pytest.raises(ValueError):
        superlevel_partition(np.zeros(32), 1.0, 0.0, 1.0)


def test_partition_merges_small_gap():
    G = 1024
    mags = np.zeros(G)
    mags[100:110] = 1
    mags[113:120] = 1
    mags[400:410] = 1
    # min gap in grid steps: (eta/R)/2 / (2pi/G); choose 8 steps
    eta = 16 * 2 * np.pi / G
    groups = superlevel_partition(mags, 0.5, eta, 1.0)
    assert [(g[0], g[-1]) for g in groups] == [(100, 119), (400, 409)]


def test_partition_wraps_seam():
    G = 256
    mags = np.zeros(G)
    mags[:3] = 1
    mags[-2:] = 1
    mags[100] = 1
    groups = superlevel_partition(mags, 0.5, 8 * 2 * np.pi / G, 1.0)
    assert len(groups) == 2
    assert list(groups[0]) == [254, 255, 0, 1, 2]


def _brute_groups(mags, tau, min_gap):
    G = mags.size
    idx = [g for g in range(G) if mags[g] >= tau]
    if not idx:
        return []
    groups = [[idx[0]]]
    for g in idx[1:]:
        if g - groups[-1][-1] >= min_gap:
            groups.append([g])
        else:
            groups[-1].append(g)
    if len(groups) > 1 and len(idx) < G and idx[0] + G - idx[-1] < min_gap:
        groups[0] = groups.pop() + groups[0]
    return groups


@settings(max_examples=80, deadline=None)
@given(bits=st.lists(st.booleans(), min_size=8, max_size=200), gap=st.integers(1, 12))
def test_partition_matches_brute_force(bits, gap):
    mags = np.array(bits, float)
    G = mags.size
    eta = 2 * gap * 2 * np.pi / G
    got = [list(g) for g in superlevel_partition(mags, 0.5, eta, 1.0)]
    assert got == _brute_groups(mags, 0.5, gap)


# -- spectra ----------------------------------------------------------------------------

def test_zero_signal_spectrum():
    rec = IQRecord(np.zeros(512), 1e6)
    plan = small_plan(N=512, delta=5e-5, count=8)
    assert np.all(snippet_spectrum(rec, 2.5e-4, plan).values == 0)


def test_on_grid_tone_peak():
    rate, N = 1e6, 4096
    plan = small_plan(rate, N)
    G = plan.grid_size
    g0 = 2900
    lam = -np.pi + 2 * np.pi * g0 / G
    rec = tone_record(lam * rate, rate, N)
    sp = snippet_spectrum(rec, 2e-3, plan)
    assert int(np.argmax(sp.magnitudes)) == g0
    assert sp.magnitudes[g0] == pytest.approx(1.0, abs=1e-10)
    env = np.abs(kernel_eval(plan.kernel, sp.grid() - lam))
    assert np.allclose(sp.magnitudes, env, atol=1e-10)


def test_center_outside_record():
    rec = tone_record(1e5)
    with pytest.raises(ValueError):
        snippet_spectrum(rec, 1.0, small_plan())


@pytest.mark.parametrize("filt", ["smooth", "cosine"])
def test_fft_matches_direct(filt):
    rng = np.random.default_rng(11)
    rec = IQRecord(rng.standard_normal(3000) + 1j * rng.standard_normal(3000), 1e6)
    plan = SnippetPlan.uniform(3e-3, 1e6, 1e-4, 20, filter=LowPassFilter(filt))
    for c in rng.uniform(0, 3e-3, 10):
        fast = snippet_spectrum(rec, c, plan).values
        slow = direct_spectrum(rec, c, plan)
        assert np.max(np.abs(fast - slow)) <= 1e-8 * np.max(np.abs(slow))


def test_linearity():
    rng = np.random.default_rng(2)
    a = IQRecord(rng.standard_normal(2048) + 0j, 1e6)
    b = IQRecord(np.exp(1j * 0.3 * np.arange(2048)), 1e6)
    plan = small_plan(N=2048)
    ca, cb = 1.5 - 2j, -0.25
    mix = IQRecord(ca * a.samples + cb * b.samples, 1e6)
    lhs = snippet_spectrum(mix, 1e-3, plan).values
    rhs = ca * snippet_spectrum(a, 1e-3, plan).values + cb * snippet_spectrum(b, 1e-3, plan).values
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@settings(max_examples=20, deadline=None)
@given(w=st.floats(-2.5, 2.5), w0=st.floats(-0.5, 0.5))
def test_modulation_shifts_peak(w, w0):
    rate = 1e6
    plan = small_plan(rate)
    rec = tone_record(w * rate, rate)
    t = rec.times
    shifted = IQRecord(rec.samples * np.exp(1j * w0 * rate * t), rate)
    sp0 = snippet_spectrum(rec, 2e-3, plan)
    sp1 = snippet_spectrum(shifted, 2e-3, plan)
    step = 2 * np.pi / plan.grid_size
    x0 = sp0.grid()[np.argmax(sp0.magnitudes)]
    x1 = sp1.grid()[np.argmax(sp1.magnitudes)]
    d = (x1 - x0 - w0 + np.pi) % (2 * np.pi) - np.pi
    assert abs(d) <= step + 1e-12


# -- peaks -----------------------------------------------------------------------------

def test_peak_tie_breaks_to_smallest_index():
    mags = np.zeros(64)
    mags[[10, 12]] = 1.0
    mags[11] = 0.5
    pts = snippet_peaks(mags, [np.array([10, 11, 12])], 1.0, interpolate=False)
    assert len(pts) == 1
    assert pts[0].lambda_hat == pytest.approx(-np.pi + 2 * np.pi * 10 / 64)


@settings(max_examples=100, deadline=None)
@given(w=st.floats(-3.1, 3.1))
def test_single_tone_peak_accuracy(w):
    rate = 1e6
    plan_raw = small_plan(rate, interpolate=False)
    plan_int = small_plan(rate, interpolate=True)
    rec = tone_record(w * rate, rate)
    step = rate * 2 * np.pi / plan_raw.grid_size
    for plan, tol in ((plan_raw, step), (plan_int, step / 4)):
        d = build_diagram(rec, plan, 0.05 * rate, threads=1)
        near = d.freq[np.argmin(np.abs(d.freq - w * rate))]
        err = abs((near - w * rate + np.pi * rate) % (2 * np.pi * rate) - np.pi * rate)
        assert err <= tol


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), interp=st.booleans(), eta_steps=st.integers(1, 30))
def test_batch_peaks_match_scalar(seed, interp, eta_steps):
    rng = np.random.default_rng(seed)
    G = 256
    mags = np.abs(rng.standard_normal((6, G)) + 1j * rng.standard_normal((6, G)))
    mags[:, 40:44] = 3.0  # exact ties
    taus = np.percentile(mags, 90, axis=1)
    eta = 2 * eta_steps * 2 * np.pi / G
    r, g, off = _batch_peaks(mags, taus, eta, 1.0, interp, 0.0)
    lam = (-np.pi + 2 * np.pi / G * (g + off) + np.pi) % (2 * np.pi) - np.pi
    got = sorted(zip(r.tolist(), lam.tolist()))
    want = []
    for i in range(6):
        groups = superlevel_partition(mags[i], taus[i], eta, 1.0)
        for p in snippet_peaks(mags[i], groups, 1.0, interpolate=interp):
            want.append((i, p.lambda_hat))
    want.sort()
    assert len(got) == len(want)
    for (ra, la), (rb, lb) in zip(got, want):
        assert ra == rb
        assert abs((la - lb + np.pi) % (2 * np.pi) - np.pi) < 1e-12


# -- diagrams --------------------------------------------------------------------------

def test_diagram_sorted_and_thread_independent():
    sf = load_scenario("example1")
    rec = add_noise(synthesize(sf.scenario), NoiseSpec(0.0, 1))
    plan = SnippetPlan.uniform(1e-4, 5e8, 2e-6, 300, band_center=1.31e9)
    a = build_diagram(rec, plan, 2e7, threads=1)
    b = build_diagram(rec, plan, 2e7, threads=4)
    key = np.lexsort((a.freq, a.snippet))
    assert np.array_equal(key, np.arange(len(a)))
    for col in ("t", "lam", "freq", "magnitude", "snippet", "thresholds"):
        assert np.array_equal(getattr(a, col), getattr(b, col))
    assert np.all(a.magnitude >= a.thresholds[a.snippet])


def test_noiseless_tone_diagram_on_line():
    w = 3.3e8
    sc = Scenario((ChirpPulseTrain(theta=w, duration=1e-4),), 1e-4, 5e8)
    rec = synthesize(sc)
    plan = SnippetPlan.uniform(1e-4, 5e8, 2e-6, 250)
    d = build_diagram(rec, plan, 2e7, threads=1)
    strongest = d.subset(d.contrast > 2)
    assert np.unique(strongest.snippet).size == plan.count
    assert np.max(np.abs(strongest.freq - w)) <= 5e8 * 2 * np.pi / plan.grid_size


def test_table2_snippet_peaks_near_active_ifs():
    sf = load_scenario("example1")
    sc = sf.scenario
    rec = add_noise(synthesize(sc), NoiseSpec(-10.0, 0), 99)
    plan = SnippetPlan.uniform(1e-4, 5e8, 2e-6, 2500, band_center=sc.band_center)
    sub = SnippetPlan(plan.delta, [5e-5], plan.n, plan.grid_size, band_center=sc.band_center)
    d = build_diagram(rec, sub, 2e7, threads=1)
    strong = d.freq[d.contrast >= 1.5]
    for f in sc.active_frequencies(5e-5):
        assert np.min(np.abs(strong - f)) < 2e7


def test_plan_validation():
    with pytest.raises(ValueError):
        SnippetPlan(1e-6, [0.0, 3e-6], 10, 64)
    with pytest.raises(ValueError):
        SnippetPlan(1e-6, [1e-6, 0.0], 10, 64)
    with pytest.raises(ValueError):
        SnippetPlan(1e-6, [0.0], 10, 16)
    with pytest.raises(ValueError):
        SnippetPlan(1e-6, [0.0], 10, 64, percentile=100)
    assert default_grid_size(100) == 4096
    assert default_grid_size(1000) == 8192


# -- diagnostics ---------------------------------------------------------------------------

def test_validate_plan_advisories():
    plan = SnippetPlan.uniform(1e-4, 5e8, 2e-6, 100)
    quiet = TheoremDiagnostics(1.0, 1.0, 1e8, 1.0, 0.1, 1e-12, 0.0, 1e9)
    assert validate_plan(plan, quiet, 5e8) == []
    squeezed = TheoremDiagnostics(1.0, 1.0, 0.0, 1.0, 0.1, 0.0, 0.0, 1e9)
    notes = validate_plan(plan, squeezed, 5e8)
    assert any("separation condition violated" in n for n in notes)


def test_table2_diagnostics_recorded():
    sf = load_scenario("example1")
    plan = SnippetPlan.uniform(1e-4, 5e8, 2e-6, 2500)
    diag = scenario_diagnostics(sf.scenario, plan, L=10.0)
    # all six trains overlap around t = 30 us
    assert diag.M_total == 6.0 and diag.m_lower == 1.0
    assert isinstance(validate_plan(plan, diag, 5e8), list)


def test_noise_probe_zero_and_linear():
    assert noise_floor_probe(64, 0.0, 16).mean_max == 0.0
    a = noise_floor_probe(128, 1.0, 32, seed=4)
    b = noise_floor_probe(128, 2.0, 32, seed=4)
    assert b.mean_max == pytest.approx(2 * a.mean_max, rel=1e-12)
    with pytest.raises(ValueError):
        noise_floor_probe(64, 1.0, 8)


def test_tone_checks_hold_in_range():
    res = [tone_trial(s, 1 + s % 3, 512, 0.0, L=9.45) for s in range(60)]
    assert sum(r.passed for r in res) >= 57
    worst = [tone_trial(s, 3, 512, 0.0, L=9.45, packed=True) for s in range(30)]
    assert all(r.passed for r in worst)


def test_tone_checks_fail_when_crowded():
    res = [tone_trial(s, 3, 1024, 0.0, L=9.45, separation=2 / 1024, packed=True)
           for s in range(40)]
    assert sum(r.passed for r in res) == 0
