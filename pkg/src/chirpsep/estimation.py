"""From an SSO diagram to linear-chirp estimates.

Band selection and component clustering isolate tracks in the diagram, each
track is fitted with a straight IF line, and tracks that fail the residue gate
(typically two chirps crossing) are cut into time partitions, refitted and
merged back along collinear pieces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import dbscan, time_scale
from .signal_model import IQRecord
from .sso import SnippetPlan, SSODiagram, build_diagram


class NoSignalError(RuntimeError):
    """Nothing in the diagram looks like a signal track."""


class ClusterTooShort(ValueError):
    """A cluster spans fewer than two distinct snippet times."""


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable parameters of the estimation stage.

    ``d1``/``d2`` default to D/2 and D/100 for a plan with D snippets.
    ``time_per_eps`` is the number of snippet spacings that map onto ``eta``
    on the time axis during component clustering; by default it is
    ``0.75 * d2`` so a lone track has about 1.5 * d2 points per eta-ball.
    """

    b_rec: float
    eta: float
    d1: int | None = None
    d2: int | None = None
    m_parts: int = 8
    rmse_gate_fraction: float = 0.01
    regression_keep_fraction: float = 0.5
    merge_tolerance: float = 0.10
    time_per_eps: float | None = None
    point_contrast: float = 1.5
    min_contrast: float = 1.8
    multiplicity_limit: float = 0.1
    max_bisect: int = 2
    min_support: int | None = None
    min_span_deltas: float = 2.0
    bridge_gap_deltas: float = 4.0
    min_explained: float = 0.8
    alg3_raw_d2: bool = False
    merge_by_average: bool = False

    def __post_init__(self):
        for name in ("b_rec", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("d1", "d2", "min_support"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ValueError(f"{name} must be a positive integer")
        if int(self.m_parts) != self.m_parts or self.m_parts < 1:
            raise ValueError("m_parts must be a positive integer")
        for name in ("rmse_gate_fraction", "regression_keep_fraction", "merge_tolerance",
                     "multiplicity_limit", "min_explained"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.time_per_eps is not None and not self.time_per_eps > 0:
            raise ValueError("time_per_eps must be positive")
        if min(self.point_contrast, self.min_contrast, self.max_bisect, self.min_span_deltas,
               self.bridge_gap_deltas) < 0:
            raise ValueError("contrasts, max_bisect and min_span_deltas must be >= 0")

    def resolved(self, D: int) -> "PipelineConfig":
        """Fill the D-dependent defaults for a plan with D snippets."""
        d1 = self.d1 or max(1, D // 2)
        d2 = self.d2 or max(1, D // 100)
        return replace(self, d1=d1, d2=d2,
                       time_per_eps=self.time_per_eps or max(4.0, 0.75 * d2),
                       min_support=self.min_support or d2)

    def partition_d2(self) -> int:
        if self.alg3_raw_d2:
            return int(self.d2)
        return max(2, math.ceil(self.d2 / self.m_parts))


@dataclass(frozen=True)
class ChirpEstimate:
    gamma: float
    duration: float
    omega: float
    slope: float
    b_param_sweep: float
    b_param_slope: float
    rmse_p: float
    support: np.ndarray = field(repr=False)

    @property
    def n_points(self) -> int:
        return int(self.support.size)

    @property
    def end(self) -> float:
        return self.gamma + self.duration

    def if_at(self, t):
        """IF of the fitted line at time(s) t."""
        return self.omega + self.slope * (np.asarray(t, float) - self.gamma)


@dataclass
class PipelineResult:
    estimates: list[ChirpEstimate]
    diagram: SSODiagram | None
    failures: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


# -- clustering steps ------------------------------------------------------------

def screen_points(diagram: SSODiagram, cfg: PipelineConfig) -> SSODiagram:
    """Drop peaks whose magnitude is under ``point_contrast`` times their snippet threshold.

    With many more grid points than signal lobes the percentile threshold
    sits inside the noise, so most diagram points are noise peaks barely
    above it.
    """
    keep = diagram.contrast >= cfg.point_contrast
    if not np.any(keep):
        raise NoSignalError("no peak stands out of its snippet threshold")
    return diagram.subset(keep)


def band_select(diagram: SSODiagram, cfg: PipelineConfig) -> SSODiagram:
    """Keep points that belong to a dense frequency band (1-D DBSCAN, eps=b_rec)."""
    if len(diagram) == 0:
        raise NoSignalError("empty diagram")
    cfg = cfg.resolved(diagram.plan.count)
    coords = np.column_stack([np.zeros(len(diagram)), diagram.freq])
    lab = dbscan(coords, cfg.b_rec, cfg.d1).labels
    if not np.any(lab > 0):
        raise NoSignalError("no in-band signal")
    return diagram.subset(lab > 0)


def _time_freq(diagram: SSODiagram, cfg: PipelineConfig) -> np.ndarray:
    return np.column_stack([diagram.t * time_scale(diagram, cfg.eta, cfg.time_per_eps),
                            diagram.freq])


def _clusters(diagram: SSODiagram, cfg: PipelineConfig, min_neighbors: int) -> list[SSODiagram]:
    lab = dbscan(_time_freq(diagram, cfg), cfg.eta, min_neighbors).labels
    out = []
    for c in range(1, int(lab.max(initial=0)) + 1):
        sub = diagram.subset(lab == c)
        if np.median(sub.contrast) >= cfg.min_contrast:
            out.append(sub)
    return out


def component_clusters(diagram: SSODiagram, cfg: PipelineConfig) -> list[SSODiagram]:
    """Split the in-band diagram into tracks.

    Clusters whose median peak-to-threshold ratio is below ``min_contrast``
    are noise tracks and are dropped.
    """
    if len(diagram) == 0:
        raise NoSignalError("empty diagram")
    cfg = cfg.resolved(diagram.plan.count)
    out = _clusters(diagram, cfg, cfg.d2)
    if not out:
        raise NoSignalError("no signal clusters")
    return out


# -- fitting ------------------------------------------------------------------------

def regression_subset(cluster: SSODiagram, keep_fraction: float) -> np.ndarray:
    """Rows of the ceil(keep*N) strongest points, ties by ascending snippet."""
    k = max(1, math.ceil(keep_fraction * len(cluster) - 1e-12))
    order = np.lexsort((cluster.snippet, -cluster.magnitude))
    return np.sort(order[:k])


def fit_component(cluster: SSODiagram, cfg: PipelineConfig) -> ChirpEstimate:
    if len(cluster) == 0 or np.unique(cluster.t).size < 2:
        raise ClusterTooShort("cluster too short")
    rows = regression_subset(cluster, cfg.regression_keep_fraction)
    t, f = cluster.t[rows], cluster.freq[rows]
    if np.unique(t).size < 2:
        raise ClusterTooShort("cluster too short")
    gamma = float(cluster.t.min())
    duration = float(cluster.t.max() - gamma)
    # centre the abscissa for a well-conditioned solve
    tc = t - gamma
    slope, intercept = np.polyfit(tc, f, 1)
    est = ChirpEstimate(gamma=gamma, duration=duration, omega=float(intercept),
                        slope=float(slope),
                        b_param_sweep=float(np.ptp(cluster.freq) / 2.0),
                        b_param_slope=float(slope * duration / 2.0),
                        rmse_p=0.0, support=cluster.index.copy())
    return replace(est, rmse_p=residue_rmse(cluster, est))


def residue_rmse(cluster: SSODiagram, estimate: ChirpEstimate) -> float:
    """sqrt(sum residue^2 / D) with D the plan's snippet count."""
    res = cluster.freq - estimate.if_at(cluster.t)
    return float(math.sqrt(np.sum(res * res) / cluster.plan.count))


def multiplicity(cluster: SSODiagram) -> float:
    """Share of the cluster's snippets that hold more than one point."""
    _, counts = np.unique(cluster.snippet, return_counts=True)
    return float(np.mean(counts > 1)) if counts.size else 0.0


def bend(cluster: SSODiagram, cfg: PipelineConfig) -> tuple[float, float]:
    """How far line fits to the early and late halves stray from the whole fit.

    Returns (largest relative slope difference, largest gap that difference
    opens over a half). A straight track gives values near zero on both; a V
    or a sawtooth of two pulses from one train does not.
    """
    idx = regression_subset(cluster, cfg.regression_keep_fraction)
    t, f = cluster.t[idx], cluster.freq[idx]
    mid = 0.5 * (t.min() + t.max())
    lo, hi = t < mid, t >= mid
    if np.unique(t[lo]).size < 2 or np.unique(t[hi]).size < 2:
        return 0.0, 0.0
    s = np.polyfit(t, f, 1)[0]
    halves = [np.polyfit(t[m], f[m], 1)[0] for m in (lo, hi)]
    ds = max(abs(h - s) for h in halves)
    rel = ds / max(abs(s), *(abs(h) for h in halves), 1e-300)
    return float(rel), float(ds * (t.max() - t.min()) / 4)


def _rmse_limit(cluster: SSODiagram, cfg: PipelineConfig) -> float:
    return cfg.rmse_gate_fraction * abs(float(np.mean(cluster.freq)))


def gate(cluster: SSODiagram, est: ChirpEstimate, cfg: PipelineConfig) -> str | None:
    """None when the fit is accepted, otherwise the reason it is not."""
    limit = _rmse_limit(cluster, cfg)
    if est.rmse_p > limit:
        return f"rmse {est.rmse_p:.4g} > {limit:.4g}"
    mult = multiplicity(cluster)
    if mult > cfg.multiplicity_limit:
        return f"{mult:.2f} of snippets hold several strong points"
    rel, dev = bend(cluster, cfg)
    if rel > cfg.merge_tolerance and dev > cfg.eta / 4:
        return f"track bends: half-slopes differ by {rel:.0%}"
    return None


# -- close parallel tracks ----------------------------------------------------------

def split_parallel(cluster: SSODiagram, cfg: PipelineConfig) -> list[ChirpEstimate] | None:
    """Separate k tracks that run side by side closer than eta.

    When most snippets hold the same number k > 1 of points, the i-th lowest
    point of each such snippet seeds line i; every point then joins its
    nearest line and each line is refit. The split stands only if every line
    passes the gate and the lines keep their order over the whole span, so
    crossing tracks are left to :func:`refine_crossover`.
    """
    cfg = cfg.resolved(cluster.plan.count)
    snips, first, counts = np.unique(cluster.snippet, return_index=True, return_counts=True)
    values, freq = np.unique(counts, return_counts=True)
    k = int(values[np.argmax(freq)])
    if k < 2 or np.sum(counts == k) < 0.5 * snips.size:
        return None
    rank = np.full(len(cluster), -1)
    for f, c in zip(first[counts == k], counts[counts == k]):
        rank[f:f + c] = np.arange(c)  # rows are sorted by (snippet, freq)
    try:
        seeds = [fit_component(cluster.subset(rank == i), cfg) for i in range(k)]
    except ClusterTooShort:
        return None
    dist = np.abs(np.array([e.if_at(cluster.t) for e in seeds]) - cluster.freq)
    owner = np.argmin(dist, axis=0)
    out = []
    for i in range(k):
        sub = cluster.subset(owner == i)
        if len(sub) < cfg.min_support:
            return None
        try:
            est = fit_component(sub, cfg)
        except ClusterTooShort:
            return None
        if gate(sub, est, cfg) is not None:
            return None
        out.append(est)
    ends = np.array([cluster.t.min(), cluster.t.max()])
    vals = np.array([e.if_at(ends) for e in out])
    order = np.argsort(vals[:, 0])
    if np.any(np.diff(vals[order], axis=0) <= 0):
        return None
    return out


def _cut_sse(cluster: SSODiagram, cut: float, min_side: int) -> float:
    left = cluster.t < cut
    nl = int(left.sum())
    if min(nl, len(cluster) - nl) < min_side:
        return np.inf
    sse = 0.0
    for m in (left, ~left):
        tt, ff = cluster.t[m], cluster.freq[m]
        if np.unique(tt).size < 2:
            return np.inf
        tc = tt - tt.mean()
        coef = np.polyfit(tc, ff, 1)
        sse += float(np.sum((ff - np.polyval(coef, tc)) ** 2))
    return sse


def _best_cut(cluster: SSODiagram, min_side: int, candidates: int = 64) -> tuple[float, float]:
    """Break time minimizing the summed squared residue of two line fits, and that residue.

    A coarse scan over ``candidates`` break times is refined between the
    neighbours of the best one. Returns (nan, inf) when no cut is possible.
    """
    times = np.unique(cluster.t)
    cuts = 0.5 * (times[1:] + times[:-1])
    if cuts.size == 0:
        return math.nan, math.inf
    pick = np.unique(np.linspace(0, cuts.size - 1, min(candidates, cuts.size)).round().astype(int))
    sse = [_cut_sse(cluster, cuts[i], min_side) for i in pick]
    k = int(np.argmin(sse))
    if not np.isfinite(sse[k]):
        return math.nan, math.inf
    lo, hi = pick[max(k - 1, 0)], pick[min(k + 1, pick.size - 1)]
    fine = np.arange(lo, hi + 1)
    sse = [_cut_sse(cluster, cuts[i], min_side) for i in fine]
    j = int(np.argmin(sse))
    return float(cuts[fine[j]]), float(sse[j])


def split_sequential(cluster: SSODiagram, cfg: PipelineConfig,
                     depth: int = 3) -> list[ChirpEstimate] | None:
    """Cut a track that is several lines in succession into gated line fits.

    Pulses of one train can fuse into a single cluster when the gap between
    them is shorter than a snippet. The cut is placed where two line fits
    leave the least residue; it must remove at least three quarters of the
    single-line residue and both sides must pass the gate, recursing up to
    ``depth`` levels. Crossing tracks fail on both sides of any cut, so
    they are left to :func:`refine_crossover`.
    """
    cfg = cfg.resolved(cluster.plan.count)
    try:
        est = fit_component(cluster, cfg)
    except ClusterTooShort:
        return None
    if gate(cluster, est, cfg) is None:
        return [est]
    if depth == 0:
        return None
    cut, sse = _best_cut(cluster, cfg.min_support)
    tc = cluster.t - cluster.t.mean()
    whole = float(np.sum((cluster.freq - np.polyval(np.polyfit(tc, cluster.freq, 1), tc)) ** 2))
    # a real junction removes most of the residue; hopping between close tracks does not
    if not sse <= 0.25 * whole:
        return None
    out = []
    for side in (cluster.subset(cluster.t < cut), cluster.subset(cluster.t >= cut)):
        part = split_sequential(side, cfg, depth - 1)
        if part is None:
            return None
        out.extend(part)
    return out


# -- crossover handling -----------------------------------------------------------

def _resolve_piece(piece: SSODiagram, cfg: PipelineConfig, depth: int) -> list[ChirpEstimate]:
    out = []
    for sub in _clusters(piece, cfg, cfg.partition_d2()):
        try:
            est = fit_component(sub, cfg)
        except ClusterTooShort:
            continue
        if gate(sub, est, cfg) is None:
            out.append(est)
        elif depth < cfg.max_bisect:
            mid = 0.5 * (sub.t.min() + sub.t.max())
            for half in (sub.subset(sub.t < mid), sub.subset(sub.t >= mid)):
                if len(half):
                    out.extend(_resolve_piece(half, cfg, depth + 1))
    return out


def refine_crossover(cluster: SSODiagram, cfg: PipelineConfig,
                     source: SSODiagram | None = None) -> list[ChirpEstimate]:
    """Partition the cluster in time, fit each piece, merge collinear pieces.

    Pieces that still fail the gate are halved up to ``max_bisect`` times and
    otherwise discarded. Merged lines supported by fewer than ``min_support``
    points, or spanning less than ``min_span_deltas`` snippet half-widths,
    are dropped: any real pulse leaves a track at least one snippet long.
    ``source`` is the diagram the support indices refer to (defaults to the
    cluster itself).
    """
    cfg = cfg.resolved(cluster.plan.count)
    source = cluster if source is None else source
    lo, hi = float(cluster.t.min()), float(cluster.t.max())
    edges = np.linspace(lo, hi, cfg.m_parts + 1)
    part = np.clip(np.searchsorted(edges, cluster.t, side="right") - 1, 0, cfg.m_parts - 1)
    pieces = []
    for i in range(cfg.m_parts):
        sel = part == i
        if np.any(sel):
            pieces.extend(_resolve_piece(cluster.subset(sel), cfg, 0))
    merged = merge_collinear(pieces, cfg, source)
    min_span = cfg.min_span_deltas * cluster.plan.delta
    return [e for e in merged if e.n_points >= cfg.min_support and e.duration >= min_span]


def explained_fraction(cluster: SSODiagram, estimates: list[ChirpEstimate],
                       eta: float) -> float:
    """Share of cluster points lying within eta/4 of an estimate active at their time."""
    ok = np.zeros(len(cluster), bool)
    for e in estimates:
        inside = (cluster.t >= e.gamma) & (cluster.t <= e.end)
        ok |= inside & (np.abs(cluster.freq - e.if_at(cluster.t)) <= eta / 4)
    return float(ok.mean()) if ok.size else 0.0


def _extends(short: ChirpEstimate, long: ChirpEstimate, eta: float) -> bool:
    """The longer line runs within eta/2 of the shorter one over its extent."""
    ends = np.array([short.gamma, short.end])
    return bool(np.all(np.abs(long.if_at(ends) - short.if_at(ends)) <= eta / 2))


def _lines_agree(a: ChirpEstimate, b: ChirpEstimate, cfg: PipelineConfig) -> bool:
    short, long = sorted((a, b), key=lambda e: e.duration)
    # short pieces have unreliable slopes; accept them if they sit on the long line
    if _extends(short, long, cfg.eta):
        return True
    lo, hi = min(a.gamma, b.gamma), max(a.end, b.end)
    span = hi - lo
    ds = abs(a.slope - b.slope)
    if not (ds <= cfg.merge_tolerance * max(abs(a.slope), abs(b.slope)) or ds * span <= cfg.eta):
        return False
    tm = 0.5 * (lo + hi)
    va, vb = float(a.if_at(tm)), float(b.if_at(tm))
    return abs(va - vb) <= min(cfg.merge_tolerance * 0.5 * (abs(va) + abs(vb)), cfg.eta)


def _average(group: list[ChirpEstimate]) -> ChirpEstimate:
    w = np.array([e.n_points for e in group], float)
    gamma = min(e.gamma for e in group)
    end = max(e.end for e in group)
    slope = float(np.average([e.slope for e in group], weights=w))
    omega = float(np.average([e.if_at(gamma) for e in group], weights=w))
    support = np.unique(np.concatenate([e.support for e in group]))
    return ChirpEstimate(gamma, end - gamma, omega, slope,
                         max(e.b_param_sweep for e in group), slope * (end - gamma) / 2.0,
                         float(np.sqrt(np.sum([e.rmse_p ** 2 for e in group]))), support)


def _merge_pair(a: ChirpEstimate, b: ChirpEstimate, cfg: PipelineConfig,
                source: SSODiagram | None) -> ChirpEstimate | None:
    if source is None or cfg.merge_by_average:
        return _average([a, b])
    rows = np.searchsorted(source.index, np.union1d(a.support, b.support))
    union = source.subset(rows)
    est = fit_component(union, cfg)
    return est if gate(union, est, cfg) is None else None


def _gap(a: ChirpEstimate, b: ChirpEstimate) -> float:
    tm = 0.5 * (min(a.gamma, b.gamma) + max(a.end, b.end))
    return abs(float(a.if_at(tm) - b.if_at(tm)))


def _absorb(groups: list[ChirpEstimate], piece: ChirpEstimate, cfg: PipelineConfig,
            source: SSODiagram | None) -> bool:
    """Merge ``piece`` into the closest agreeing group; False if none accepts it."""
    cands = sorted((_gap(g, piece), i) for i, g in enumerate(groups)
                   if _lines_agree(g, piece, cfg))
    for _, i in cands:
        merged = _merge_pair(groups[i], piece, cfg, source)
        if merged is not None:
            groups[i] = merged
            return True
    return False


def merge_collinear(estimates: list[ChirpEstimate], cfg: PipelineConfig,
                    source: SSODiagram | None = None) -> list[ChirpEstimate]:
    """Merge pieces lying on a common line.

    Pieces are visited from the best supported down, each joining the closest
    agreeing group, so long pieces with reliable slopes anchor the lines.
    With a ``source`` diagram a merge is refitted on the union of supports
    and kept only if the refit passes the gate; this stops crossing branches
    from chaining through short pieces near the vertex. Without one (or with
    ``merge_by_average``) merged parameters are support-weighted averages.
    Groups are then merged pairwise until nothing changes.
    """
    groups: list[ChirpEstimate] = []
    for piece in sorted(estimates, key=lambda e: (-e.n_points, e.gamma, e.omega)):
        if not _absorb(groups, piece, cfg, source):
            groups.append(piece)
    changed = True
    while changed and len(groups) > 1:
        changed = False
        groups.sort(key=lambda e: (-e.n_points, e.gamma, e.omega))
        for k in range(len(groups) - 1, 0, -1):
            rest = groups[:k] + groups[k + 1:]
            if _absorb(rest, groups[k], cfg, source):
                groups, changed = rest, True
                break
    return sorted(groups, key=lambda e: (e.gamma, e.omega))


def _continues(a: ChirpEstimate, b: ChirpEstimate, cfg: PipelineConfig) -> bool:
    """b picks up where a stops (or vice versa) on the same line."""
    first, second = sorted((a, b), key=lambda e: e.gamma)
    ds = abs(a.slope - b.slope)
    if ds > cfg.merge_tolerance * max(abs(a.slope), abs(b.slope)):
        return False
    joint = np.array([first.end, second.gamma])
    return bool(np.all(np.abs(first.if_at(joint) - second.if_at(joint)) <= cfg.eta / 2))


def _crossing_gap(a: ChirpEstimate, b: ChirpEstimate, others: list[ChirpEstimate],
                  cfg: PipelineConfig, margin: float) -> float | None:
    """Extra gap explained by another estimate crossing the a-b line, or None.

    Interference starts before the tracks meet, so the crossing is looked
    for within ``margin`` of the gap. Two tracks whose slopes differ by ds
    stay within eta of each other for 2*eta/ds, which is how long the
    crossing can hide the line.
    """
    lo, hi = min(a.end, b.end), max(a.gamma, b.gamma)
    ts = np.linspace(min(lo, hi) - margin, max(lo, hi) + margin, 65)
    line = 0.5 * (a.if_at(ts) + b.if_at(ts))
    slope = 0.5 * (a.slope + b.slope)
    best = None
    for c in others:
        if c is a or c is b:
            continue
        inside = (ts >= c.gamma) & (ts <= c.end)
        if np.any(np.abs(c.if_at(ts[inside]) - line[inside]) <= cfg.eta):
            ds = abs(c.slope - slope)
            extra = min(2 * cfg.eta / ds if ds > 0 else np.inf, a.duration, b.duration)
            best = extra if best is None else max(best, extra)
    return best


def bridge_crossovers(estimates: list[ChirpEstimate], refined: list[bool],
                      cfg: PipelineConfig, source: SSODiagram) -> list[ChirpEstimate]:
    """Join estimates that one line split at a crossover.

    Interference at a vertex can cut an arm of an X into separate pieces
    that continue each other across a gap. A pair is joined when the slopes
    agree, each line is within eta/2 of the other at the junction, and the
    gap is explained. Either one member came out of crossover refinement and
    the gap is at most ``bridge_gap_deltas`` snippet half-widths, or a third
    estimate crosses the line near the gap, which also widens the allowed gap
    by the time the two tracks stay within eta. The joined fit must pass
    the gate.
    """
    items = list(zip(estimates, refined))
    max_gap = cfg.bridge_gap_deltas * source.plan.delta
    changed = True
    while changed:
        changed = False
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                (a, ra), (b, rb) = items[i], items[j]
                if not _continues(a, b, cfg):
                    continue
                gap = max(a.gamma, b.gamma) - min(a.end, b.end)
                extra = _crossing_gap(a, b, [e for e, _ in items], cfg, max_gap)
                if extra is None and not (ra or rb):
                    continue
                if gap > max_gap + (extra or 0.0):
                    continue
                merged = _merge_pair(a, b, replace(cfg, merge_by_average=False), source)
                if merged is not None:
                    items = [x for k, x in enumerate(items) if k not in (i, j)]
                    items.append((merged, True))
                    changed = True
                    break
            if changed:
                break
    return [e for e, _ in items]


def _shadowed(piece: ChirpEstimate, other: ChirpEstimate, eta: float) -> bool:
    if other.duration <= piece.duration:
        return False
    if piece.gamma < other.gamma or piece.end > other.end:
        return False
    ts = np.array([piece.gamma, 0.5 * (piece.gamma + piece.end), piece.end])
    return bool(np.all(np.abs(piece.if_at(ts) - other.if_at(ts)) < eta))


def prune_shadowed(estimates: list[ChirpEstimate], refined: list[bool],
                   cfg: PipelineConfig) -> tuple[list[ChirpEstimate], list[bool]]:
    """Drop refinement pieces that run within eta of a longer estimate.

    Distinct components are at least eta apart, so such a piece is vertex
    residue from a crossing rather than a chirp of its own.
    """
    keep = [i for i, (e, r) in enumerate(zip(estimates, refined))
            if not (r and any(_shadowed(e, o, cfg.eta) for o in estimates if o is not e))]
    return [estimates[i] for i in keep], [refined[i] for i in keep]


def _redundancy(e: ChirpEstimate, others: list[ChirpEstimate], source: SSODiagram,
                eta: float, slack: float) -> float:
    rows = np.searchsorted(source.index, e.support)
    t, f = source.t[rows], source.freq[rows]
    ok = np.zeros(t.size, bool)
    for o in others:
        act = (t >= o.gamma - slack) & (t <= o.end + slack)
        ok |= act & (np.abs(f - o.if_at(t)) <= eta / 2)
    return float(ok.mean()) if ok.size else 1.0


def prune_redundant(estimates: list[ChirpEstimate], refined: list[bool], cfg: PipelineConfig,
                    source: SSODiagram) -> tuple[list[ChirpEstimate], list[bool]]:
    """Drop refinement lines whose points other estimates already explain.

    Where two tracks pass within eta the snippet peak hops between them, and
    a partition piece there can fit a line of its own. At least
    ``min_explained`` of such a line's points sit within eta/2 of the other
    estimates (allowed to run two snippet half-widths past their ends). The
    most redundant line goes first and the rest are rescored.
    """
    items = list(zip(estimates, refined))
    slack = 2 * source.plan.delta
    while True:
        scores = [(_redundancy(e, [o for o, _ in items if o is not e], source, cfg.eta, slack), i)
                  for i, (e, r) in enumerate(items) if r]
        if not scores:
            break
        worst, i = max(scores)
        if worst < cfg.min_explained:
            break
        del items[i]
    return [e for e, _ in items], [r for _, r in items]


# -- driver ----------------------------------------------------------------------------

def analyze_diagram(diagram: SSODiagram, cfg: PipelineConfig) -> PipelineResult:
    """Everything after the diagram: selection, clustering, fits, crossovers."""
    cfg = cfg.resolved(diagram.plan.count)
    result = PipelineResult([], diagram, diagnostics={"points": len(diagram)})
    try:
        screened = screen_points(diagram, cfg)
        inband = band_select(screened, cfg)
        clusters = component_clusters(inband, cfg)
    except NoSignalError as exc:
        result.failures.append(str(exc))
        result.diagnostics["no_signal"] = True
        return result
    result.diagnostics.update(screened=len(screened), in_band=len(inband),
                              clusters=len(clusters), refined=0)
    refined = []
    for cid, cl in enumerate(clusters, start=1):
        try:
            est = fit_component(cl, cfg)
        except ClusterTooShort as exc:
            result.failures.append(f"cluster {cid}: {exc}")
            continue
        if gate(cl, est, cfg) is None:
            result.estimates.append(est)
            refined.append(False)
            continue
        split = split_parallel(cl, cfg) if est.rmse_p <= _rmse_limit(cl, cfg) else None
        if not split:
            split = split_sequential(cl, cfg)
        if split:
            result.estimates.extend(split)
            refined.extend([False] * len(split))
            result.diagnostics["split"] = result.diagnostics.get("split", 0) + 1
            continue
        result.diagnostics["refined"] += 1
        parts = refine_crossover(cl, cfg, diagram)
        share = explained_fraction(cl, parts, cfg.eta)
        if share < cfg.min_explained and est.rmse_p <= _rmse_limit(cl, cfg):
            # pieces describe the cluster worse than one line; keep the line
            result.failures.append(f"cluster {cid}: unresolved, refinement explains "
                                   f"{share:.0%} of its points; kept a single fit")
            result.estimates.append(est)
            refined.append(False)
            continue
        if parts:
            result.estimates.extend(parts)
            refined.extend([True] * len(parts))
        else:
            result.failures.append(f"cluster {cid}: failed to resolve")
    if any(refined):
        result.estimates, refined = prune_shadowed(result.estimates, refined, cfg)
        result.estimates, refined = prune_redundant(result.estimates, refined, cfg, diagram)
    if len(result.estimates) > 1:
        result.estimates = bridge_crossovers(result.estimates, refined, cfg, diagram)
    result.estimates.sort(key=lambda e: (e.gamma, e.omega))
    return result


def run_pipeline(record: IQRecord, plan: SnippetPlan, cfg: PipelineConfig,
                 threads: int | None = None) -> PipelineResult:
    diagram = build_diagram(record, plan, cfg.eta, threads=threads)
    return analyze_diagram(diagram, cfg)
