"""Signal separation operator: per-snippet spectra, peak extraction, diagram."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .kernel import KernelSpec, LowPassFilter, kernel_norm, kernel_weights
from .signal_model import (IQRecord, Scenario, chirp_lipschitz_alpha, instantaneous_frequency,
                           noise_generator)


def default_grid_size(n: int) -> int:
    """Smallest power of two >= max(4096, 8n)."""
    return 1 << int(math.ceil(math.log2(max(4096, 8 * n))))


def worker_count() -> int:
    env = os.environ.get("CHIRPSEP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class SnippetPlan:
    """Snippet layout: half-width ``delta`` (s), centers, kernel order and grid.

    ``band_center`` (rad/s) sets the window (band_center - pi R, band_center + pi R]
    into which peak locations are unwrapped when converted to rad/s.
    """

    delta: float
    centers: np.ndarray
    n: int
    grid_size: int
    percentile: float = 99.0
    interpolate: bool = True
    band_center: float = 0.0
    filter: LowPassFilter = LowPassFilter()

    def __post_init__(self):
        c = np.array(self.centers, dtype=float, copy=True)
        c.setflags(write=False)
        object.__setattr__(self, "centers", c)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("plan needs at least one snippet center")
        if c.size > 1:
            step = np.diff(c)
            if np.any(step <= 0):
                raise ValueError("snippet centers must be strictly increasing")
            if np.any(step >= 2 * self.delta):
                raise ValueError("consecutive snippet intervals must overlap")
        if self.n < 1:
            raise ValueError("kernel order n must be >= 1 (increase delta)")
        if self.grid_size < 4 * self.n:
            raise ValueError("grid_size must be >= 4n")
        if not 0 < self.percentile < 100:
            raise ValueError("percentile must be in (0, 100)")

    @classmethod
    def uniform(cls, horizon: float, sample_rate: float, delta: float, count: int,
                grid_size: int | None = None, t0: float = 0.0, **kw) -> "SnippetPlan":
        n = int(math.floor(sample_rate * delta + 1e-9))
        centers = np.linspace(t0, t0 + horizon, int(count))
        return cls(delta=delta, centers=centers, n=n,
                   grid_size=grid_size or default_grid_size(n), **kw)

    @property
    def count(self) -> int:
        return self.centers.size

    @property
    def spacing(self) -> float:
        return float(self.centers[1] - self.centers[0]) if self.count > 1 else 2 * self.delta

    @property
    def kernel(self) -> KernelSpec:
        return KernelSpec(self.n, self.filter)

    def grid(self) -> np.ndarray:
        G = self.grid_size
        return -np.pi + 2 * np.pi * np.arange(G) / G

    def shifted(self, dt: float) -> "SnippetPlan":
        return SnippetPlan(self.delta, self.centers + dt, self.n, self.grid_size,
                           self.percentile, self.interpolate, self.band_center, self.filter)


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    center: float

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def grid_size(self) -> int:
        return self.values.size

    def grid(self) -> np.ndarray:
        G = self.grid_size
        return -np.pi + 2 * np.pi * np.arange(G) / G


@dataclass(frozen=True)
class DiagramPoint:
    t: float
    lambda_hat: float
    freq: float
    magnitude: float
    snippet_index: int


@dataclass(frozen=True, eq=False)
class SSODiagram:
    """Columnar set of (snippet center, peak) points sorted by (snippet, freq).

    ``index`` maps each row to its position in the diagram it was cut from,
    so subsets keep a stable identity for their points.
    """

    t: np.ndarray
    lam: np.ndarray
    freq: np.ndarray
    magnitude: np.ndarray
    snippet: np.ndarray
    plan: SnippetPlan
    sample_rate: float
    index: np.ndarray = field(default=None)
    thresholds: np.ndarray | None = None  # per-snippet tau, indexed by snippet

    def __post_init__(self):
        if self.index is None:
            object.__setattr__(self, "index", np.arange(self.t.size))

    @property
    def contrast(self) -> np.ndarray:
        """Peak magnitude over its snippet threshold (inf where tau is unknown)."""
        if self.thresholds is None:
            return np.full(self.t.size, np.inf)
        tau = self.thresholds[self.snippet]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tau > 0, self.magnitude / tau, np.inf)

    def __len__(self):
        return int(self.t.size)

    @property
    def points(self) -> list[DiagramPoint]:
        return [DiagramPoint(float(a), float(b), float(c), float(d), int(e))
                for a, b, c, d, e in zip(self.t, self.lam, self.freq, self.magnitude,
                                         self.snippet)]

    def subset(self, sel) -> "SSODiagram":
        sel = np.asarray(sel)
        if sel.dtype == bool:
            sel = np.flatnonzero(sel)
        sel = np.sort(sel)
        return SSODiagram(self.t[sel], self.lam[sel], self.freq[sel], self.magnitude[sel],
                          self.snippet[sel], self.plan, self.sample_rate, self.index[sel],
                          self.thresholds)

    @classmethod
    def from_points(cls, t, freq, magnitude, snippet, plan: SnippetPlan,
                    sample_rate: float) -> "SSODiagram":
        """Build a diagram from raw columns (used for synthetic diagrams)."""
        t = np.asarray(t, float)
        freq = np.asarray(freq, float)
        snippet = np.asarray(snippet, np.int64)
        order = np.lexsort((freq, snippet))
        lam = np.angle(np.exp(1j * freq / sample_rate))
        return cls(t[order], lam[order], freq[order],
                   np.asarray(magnitude, float)[order], snippet[order], plan, sample_rate)


def _check_center(record: IQRecord, center: float):
    end = record.t0 + record.duration
    if not record.t0 - 1e-12 <= center <= end + 1e-12:
        raise ValueError(f"snippet center {center} outside record [{record.t0}, {end}]")


def _snippet_matrix(record: IQRecord, centers: np.ndarray, n: int) -> np.ndarray:
    """Rows F(t_k - l/R), l = -(n-1)..n-1, zero-extended past the record ends.

    t_k is snapped to the nearest sample instant; this only changes the
    unimodular phase of each spectrum.
    """
    R = record.sample_rate
    m = np.rint((centers - record.t0) * R).astype(np.int64)
    padded = np.concatenate([np.zeros(n, complex), record.samples, np.zeros(n, complex)])
    win = np.lib.stride_tricks.sliding_window_view(padded, 2 * n - 1)
    # win[m+1] covers samples m+1-n .. m+n-1, i.e. l = n-1 .. -(n-1)
    return win[m + 1][:, ::-1]


def _spectra(rows: np.ndarray, n: int, G: int, filt: LowPassFilter) -> np.ndarray:
    ell = np.arange(-(n - 1), n)
    coef = kernel_weights(n, filt) * np.where(ell % 2, -1.0, 1.0)
    a = np.zeros((rows.shape[0], G), dtype=complex)
    a[:, ell % G] = rows * coef
    # e^{il x_g} with x_g = -pi + 2 pi g/G is (-1)^l e^{2 pi i l g/G}
    return kernel_norm(KernelSpec(n, filt)) * scipy.fft.ifft(a, axis=1, norm="forward",
                                                             workers=1)


def snippet_spectrum(record: IQRecord, center: float, plan: SnippetPlan) -> Spectrum:
    _check_center(record, center)
    rows = _snippet_matrix(record, np.array([center]), plan.n)
    return Spectrum(_spectra(rows, plan.n, plan.grid_size, plan.filter)[0], float(center))


def direct_spectrum(record: IQRecord, center: float, plan: SnippetPlan) -> np.ndarray:
    """Reference O(nG) evaluation of the operator (no FFT)."""
    n, R = plan.n, record.sample_rate
    ell = np.arange(-(n - 1), n)
    k = np.rint((center - record.t0) * R).astype(np.int64) - ell
    F = np.zeros(ell.size, complex)
    ok = (k >= 0) & (k < len(record))
    F[ok] = record.samples[k[ok]]
    w = kernel_weights(n, plan.filter)
    x = plan.grid()
    return kernel_norm(plan.kernel) * (np.exp(1j * np.outer(x, ell)) @ (w * F))


def percentile_threshold(spectrum: Spectrum | np.ndarray, percentile: float) -> float:
    mags = spectrum.magnitudes if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    if mags.size == 0:
        raise ValueError("empty spectrum")
    return float(np.percentile(mags, percentile))


def superlevel_partition(spectrum: Spectrum | np.ndarray, tau: float, eta: float,
                         sample_rate: float) -> list[np.ndarray]:
    """Split {g : |sigma(x_g)| >= tau} into groups at circular gaps >= eta/(2R) rad.

    A gap is the distance between the last index of one group and the first
    of the next. A group crossing the +-pi seam is returned in circular order.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    mags = spectrum.magnitudes if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    G = mags.size
    idx = np.flatnonzero(mags >= tau)
    if idx.size == 0:
        return []
    min_gap = (eta / sample_rate) / 2.0 / (2 * np.pi / G)  # in grid steps
    if idx.size == G and min_gap > 1:
        return [idx]
    cuts = np.flatnonzero(np.diff(idx) >= min_gap) + 1
    groups = np.split(idx, cuts)
    if len(groups) > 1 and (idx[0] + G - idx[-1]) < min_gap:
        groups[0] = np.concatenate([groups.pop(), groups[0]])
    return groups


def _refine(mags: np.ndarray, g: int) -> float:
    G = mags.size
    m0, mm, mp = mags[g], mags[(g - 1) % G], mags[(g + 1) % G]
    den = mm - 2 * m0 + mp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (mm - mp) / den, -0.5, 0.5))


def _wrap(x):
    return np.mod(np.asarray(x) + np.pi, 2 * np.pi) - np.pi


def _to_freq(lam, sample_rate: float, band_center: float):
    """Unwrap torus locations into the receiver window around band_center."""
    c = band_center / sample_rate
    return sample_rate * (c + _wrap(np.asarray(lam) - c))


def snippet_peaks(spectrum: Spectrum | np.ndarray, groups, sample_rate: float,
                  interpolate: bool = True, band_center: float = 0.0,
                  t: float = 0.0, snippet_index: int = 0) -> list[DiagramPoint]:
    mags = spectrum.magnitudes if isinstance(spectrum, Spectrum) else np.asarray(spectrum)
    if isinstance(spectrum, Spectrum):
        t = spectrum.center
    G = mags.size
    step = 2 * np.pi / G
    out = []
    for grp in groups:
        # argmax returns the first maximum; order by index for the tie rule
        cand = np.sort(grp)
        g = int(cand[np.argmax(mags[cand])])
        x = -np.pi + step * (g + (_refine(mags, g) if interpolate else 0.0))
        lam = float(_wrap(x))
        freq = float(_to_freq(lam, sample_rate, band_center))
        out.append(DiagramPoint(float(t), lam, freq, float(mags[g]), snippet_index))
    out.sort(key=lambda p: p.freq)
    return out


def _batch_peaks(mags: np.ndarray, taus: np.ndarray, eta: float, sample_rate: float,
                 interpolate: bool, band_center: float):
    """Row-wise superlevel grouping and peak picking for a block of spectra.

    Same result as :func:`superlevel_partition` followed by
    :func:`snippet_peaks` on each row; returns (row, g, offset) arrays.
    """
    B, G = mags.shape
    rr, gg = np.nonzero(mags >= taus[:, None])
    if rr.size == 0:
        return rr, gg, np.zeros(0)
    min_gap = (eta / sample_rate) / 2.0 / (2 * np.pi / G)
    new = np.ones(rr.size, bool)
    new[1:] = (rr[1:] != rr[:-1]) | (np.diff(gg) >= min_gap)
    grp = np.cumsum(new) - 1
    # circular seam: the last group of a row joins its first one
    starts = np.flatnonzero(new)
    ends = np.append(starts[1:], rr.size) - 1
    first_of_row = np.flatnonzero(np.r_[True, rr[1:] != rr[:-1]])
    last_of_row = np.append(first_of_row[1:], rr.size) - 1
    for f, l in zip(first_of_row, last_of_row):
        if grp[f] != grp[l] and gg[f] + G - gg[l] < min_gap:
            grp[starts[grp[l]]:ends[grp[l]] + 1] = grp[f]
    # strongest point of each group, smallest grid index on ties
    vals = mags[rr, gg]
    order = np.lexsort((gg, -vals, grp))
    head = order[np.r_[True, grp[order][1:] != grp[order][:-1]]]
    r, g = rr[head], gg[head]
    off = np.zeros(g.size)
    if interpolate:
        m0, mm, mp = mags[r, g], mags[r, (g - 1) % G], mags[r, (g + 1) % G]
        den = mm - 2 * m0 + mp
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(den < 0, np.clip(0.5 * (mm - mp) / den, -0.5, 0.5), 0.0)
    return r, g, off


def _chunk_points(record: IQRecord, plan: SnippetPlan, eta: float, lo: int, hi: int):
    centers = plan.centers[lo:hi]
    rows = _snippet_matrix(record, centers, plan.n)
    mags = np.abs(_spectra(rows, plan.n, plan.grid_size, plan.filter))
    taus = np.percentile(mags, plan.percentile, axis=1)
    r, g, off = _batch_peaks(mags, taus, eta, record.sample_rate, plan.interpolate,
                             plan.band_center)
    G = plan.grid_size
    lam = _wrap(-np.pi + 2 * np.pi / G * (g + off))
    cols = dict(t=centers[r], lam=lam,
                freq=_to_freq(lam, record.sample_rate, plan.band_center),
                magnitude=mags[r, g], snippet=lo + r)
    order = np.lexsort((cols["freq"], cols["snippet"]))
    return {k: v[order] for k, v in cols.items()}, taus


def build_diagram(record: IQRecord, plan: SnippetPlan, eta: float,
                  threads: int | None = None) -> SSODiagram:
    """Peaks of every snippet spectrum, merged in snippet order.

    Snippets are processed in fixed-size chunks so the output does not
    depend on the number of worker threads.
    """
    for c in (plan.centers[0], plan.centers[-1]):
        _check_center(record, float(c))
    chunk = max(1, min(256, (1 << 21) // plan.grid_size))
    bounds = [(lo, min(lo + chunk, plan.count)) for lo in range(0, plan.count, chunk)]
    threads = threads or worker_count()
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda b: _chunk_points(record, plan, eta, *b), bounds))
    else:
        parts = [_chunk_points(record, plan, eta, *b) for b in bounds]
    col = {k: np.concatenate([c[k] for c, _ in parts]) for k in parts[0][0]}
    return SSODiagram(
        t=col["t"].astype(float), lam=col["lam"].astype(float), freq=col["freq"].astype(float),
        magnitude=col["magnitude"].astype(float), snippet=col["snippet"].astype(np.int64),
        plan=plan, sample_rate=record.sample_rate,
        thresholds=np.concatenate([taus for _, taus in parts]))


# -- diagnostics ---------------------------------------------------------------

@dataclass(frozen=True)
class TheoremDiagnostics:
    m_lower: float
    M_total: float
    eta: float
    C_const: float
    delta_prob: float
    alpha: float
    V: float
    B_max: float


def theorem_constant(M_total: float, m_lower: float, L: float, S: float) -> float:
    return (16.0 * M_total * L / m_lower) ** (1.0 / S)


def scenario_diagnostics(scenario: Scenario, plan: SnippetPlan, L: float, S: float = 2.0,
                         V: float = 0.0, delta_prob: float = 0.1) -> TheoremDiagnostics:
    """Worst case over snippet centers of the quantities entering the sampling conditions."""
    amps_min, M_tot, eta, B = math.inf, 0.0, math.inf, 0.0
    for t in plan.centers:
        act = [(abs(tr.amplitude), f) for tr in scenario.trains
               if (f := instantaneous_frequency(tr, float(t))) is not None]
        if not act:
            continue
        amps = [a for a, _ in act]
        freqs = sorted(f for _, f in act)
        amps_min = min(amps_min, min(amps))
        M_tot = max(M_tot, sum(amps))
        B = max(B, max(abs(f) for f in freqs))
        if len(freqs) > 1:
            eta = min(eta, float(np.min(np.diff(freqs))))
    alpha = max((chirp_lipschitz_alpha(tr) for tr in scenario.trains), default=0.0)
    if not math.isfinite(amps_min):
        amps_min, M_tot = 1.0, 1.0
    return TheoremDiagnostics(m_lower=amps_min, M_total=M_tot, eta=eta,
                              C_const=theorem_constant(M_tot, amps_min, L, S),
                              delta_prob=delta_prob, alpha=alpha, V=V, B_max=B)


def validate_plan(plan: SnippetPlan, diag: TheoremDiagnostics, sample_rate: float) -> list[str]:
    """Advisories for violated sampling conditions; never raises."""
    notes = []
    eta_star = diag.eta / sample_rate
    if not eta_star > 0 or not math.isfinite(4 * diag.C_const / eta_star):
        notes.append("separation condition violated: minimal separation is zero")
    elif sample_rate * plan.delta < 4 * diag.C_const / eta_star:
        notes.append(f"separation condition violated: R*delta={sample_rate * plan.delta:.4g} "
                     f"< 4C/eta*={4 * diag.C_const / eta_star:.4g}")
    lhs = diag.alpha * diag.M_total * (diag.B_max * plan.delta + 1) * plan.delta
    if lhs > diag.m_lower / 4:
        notes.append(f"snippet too long for the chirp rates: alpha*M*(B*delta+1)*delta="
                     f"{lhs:.4g} > m/4={diag.m_lower / 4:.4g}")
    return notes


@dataclass(frozen=True)
class NoiseFloorSummary:
    mean_max: float
    p95_max: float


def noise_floor_probe(n: int, V: float, trials: int = 16, seed: int = 0,
                      filt: LowPassFilter = LowPassFilter(),
                      grid_size: int | None = None) -> NoiseFloorSummary:
    """Distribution of max_x |E_n(x)| for complex noise with per-component std V."""
    if trials < 16:
        raise ValueError("trials must be >= 16")
    G = grid_size or default_grid_size(n)
    rng = noise_generator(seed, n)
    maxima = np.empty(trials)
    batch = max(1, (1 << 22) // G)
    for lo in range(0, trials, batch):
        k = min(batch, trials - lo)
        eps = V * (rng.standard_normal((k, 2 * n - 1)) + 1j * rng.standard_normal((k, 2 * n - 1)))
        maxima[lo:lo + k] = np.abs(_spectra(eps, n, G, filt)).max(axis=1)
    return NoiseFloorSummary(float(maxima.mean()), float(np.percentile(maxima, 95)))


@dataclass(frozen=True)
class ToneTrial:
    """Outcome of one constant-frequency check of the separation guarantees."""

    K: int
    groups: int
    count_ok: bool
    diameter_ok: bool
    separation_ok: bool
    inclusion_ok: bool

    @property
    def passed(self) -> bool:
        return self.count_ok and self.diameter_ok and self.separation_ok and self.inclusion_ok


def _circ(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % (2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def tone_trial(seed: int, K: int, n: int, snr_db: float = 0.0, L: float = 10.0,
               S: float = 2.0, amp_range: tuple[float, float] = (1.0, 1.5),
               filt: LowPassFilter = LowPassFilter(), grid_size: int | None = None,
               separation: float | None = None, packed: bool = False) -> ToneTrial:
    """K random tones at least eta* apart, eta* = 4C/n, thresholded at 3m/4.

    Checks that the superlevel set splits into exactly K groups, each of
    diameter at most 2C/n, mutually at least eta*/2 apart, with each tone's
    1/(4n)-neighbourhood inside its own group. Interpolation plays no part:
    the checks read the raw grid. ``separation`` replaces eta* (radians) to
    probe configurations outside the guarantee; ``packed`` places the tones
    exactly eta* apart, the worst case the guarantee covers.
    """
    m_lower, m_upper = amp_range
    C = theorem_constant(K * m_upper, m_lower, L, S)
    eta_star = separation or 4 * C / n
    if K * eta_star >= 2 * np.pi:
        raise ValueError("n too small for K tones at the required separation")
    rng = noise_generator(seed, K, n)
    if packed:
        lam = _wrap(rng.uniform(-np.pi, np.pi) + eta_star * np.arange(K))
    else:
        lam = []
        while len(lam) < K:
            cand = rng.uniform(-np.pi, np.pi)
            if all(_circ(cand, x) >= eta_star for x in lam):
                lam.append(cand)
        lam = np.array(lam)
    amps = rng.uniform(m_lower, m_upper, K)
    phases = rng.uniform(0, 2 * np.pi, K)
    ell = np.arange(-(n - 1), n)
    F = (amps * np.exp(1j * phases)) @ np.exp(-1j * np.outer(lam, ell))
    if math.isfinite(snr_db):
        noise = rng.standard_normal(ell.size) + 1j * rng.standard_normal(ell.size)
        F = F + noise * np.linalg.norm(F) / (10 ** (snr_db / 20) * np.linalg.norm(noise))
    G = grid_size or default_grid_size(n)
    mags = np.abs(_spectra(F[None, :], n, G, filt)[0])
    groups = superlevel_partition(mags, 0.75 * m_lower, eta_star, 1.0)
    step = 2 * np.pi / G

    diam = [((g[-1] - g[0]) % G) * step for g in groups]
    diameter_ok = bool(groups) and max(diam) <= 2 * C / n
    owner = np.full(G, -1)
    for i, g in enumerate(groups):
        owner[g] = i
    # gap from the end of each group to the start of the next, circularly
    starts = sorted((g[0], g[-1]) for g in groups)
    gaps = [((starts[(i + 1) % len(starts)][0] - starts[i][1]) % G) * step
            for i in range(len(starts))] if len(starts) > 1 else [2 * np.pi]
    separation_ok = min(gaps) >= eta_star / 2
    hit = []
    for lk in lam:
        # grid points bracketing [lk - 1/(4n), lk + 1/(4n)] must share a group
        lo = int(np.floor((lk - 1 / (4 * n) + np.pi) / step)) % G
        hi = int(np.ceil((lk + 1 / (4 * n) + np.pi) / step)) % G
        hit.append(int(owner[lo]) if owner[lo] == owner[hi] else -1)
    inclusion_ok = -1 not in hit and len(set(hit)) == K
    return ToneTrial(K, len(groups), len(groups) == K, bool(diameter_ok),
                     bool(separation_ok), bool(inclusion_ok))
