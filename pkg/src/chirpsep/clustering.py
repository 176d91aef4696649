"""DBSCAN and the axis scaling that turns diagram points into 2-D data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .sso import SSODiagram


@dataclass(frozen=True)
class LabeledPoints:
    coords: np.ndarray
    labels: np.ndarray
    core: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max(initial=0))

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def _components_1d(x: np.ndarray, eps: float, min_neighbors: int):
    """Core flags, core component ids and (border, component) candidates on a line."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    counts = np.empty(x.size, np.int64)
    counts[order] = (np.searchsorted(xs, xs + eps, side="right")
                     - np.searchsorted(xs, xs - eps, side="left"))
    core = counts >= min_neighbors
    comp = np.full(x.size, -1, np.int64)
    cs = order[core[order]]
    if cs.size == 0:
        return core, comp, (np.zeros(0, np.int64), np.zeros(0, np.int64))
    xc = x[cs]
    # sorted cores closer than eps chain into one component
    comp[cs] = np.cumsum(np.concatenate([[True], np.diff(xc) > eps])) - 1
    # a border point can only touch the nearest core on each side
    pos = np.searchsorted(xc, x, side="left")
    left, right = np.maximum(pos - 1, 0), np.minimum(pos, cs.size - 1)
    okl = (pos > 0) & (x - xc[left] <= eps) & ~core
    okr = (pos < cs.size) & (xc[right] - x <= eps) & ~core
    b = np.concatenate([np.flatnonzero(okl), np.flatnonzero(okr)])
    c = np.concatenate([comp[cs[left[okl]]], comp[cs[right[okr]]]])
    return core, comp, (b, c)


def _components_2d(pts: np.ndarray, eps: float, min_neighbors: int):
    n = pts.shape[0]
    pairs = cKDTree(pts).query_pairs(eps, output_type="ndarray").reshape(-1, 2)
    counts = np.ones(n, np.int64)
    np.add.at(counts, pairs[:, 0], 1)
    np.add.at(counts, pairs[:, 1], 1)
    core = counts >= min_neighbors
    cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    graph = coo_matrix((np.ones(len(cc)), (cc[:, 0], cc[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    comp = np.where(core, comp, -1)
    mixed = pairs[core[pairs[:, 0]] != core[pairs[:, 1]]]
    first_core = core[mixed[:, 0]]
    b = np.where(first_core, mixed[:, 1], mixed[:, 0])
    c = comp[np.where(first_core, mixed[:, 0], mixed[:, 1])]
    return core, comp, (b, c)


def dbscan(points, eps: float, min_neighbors: int) -> LabeledPoints:
    """Density clustering; labels are -1 (noise) or 1..P in discovery order.

    A point is core when at least ``min_neighbors`` points, itself included,
    lie within Euclidean distance ``eps``. Clusters are numbered by their
    lowest-index core point; a border point joins the earliest such cluster
    that reaches it, as in a sequential scan in input order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_neighbors < 1:
        raise ValueError("min_neighbors must be >= 1")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        return LabeledPoints(pts, np.zeros(0, np.int64), np.zeros(0, bool))

    flat = [ax for ax in (0, 1) if np.all(pts[:, ax] == pts[0, ax])]
    if flat:
        core, comp, (b, c) = _components_1d(pts[:, 1 - flat[0]], eps, min_neighbors)
    else:
        core, comp, (b, c) = _components_2d(pts, eps, min_neighbors)

    labels = np.full(n, -1, np.int64)
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return LabeledPoints(pts, labels, core)
    ids, comp_c = np.unique(comp[core_idx], return_inverse=True)
    # discovery order of a component is its smallest core index
    first = np.full(ids.size, n, np.int64)
    np.minimum.at(first, comp_c, core_idx)
    rank = np.empty(ids.size, np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(1, ids.size + 1)
    labels[core_idx] = rank[comp_c]
    if b.size:
        lab = rank[np.searchsorted(ids, c)]
        best = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(best, b, lab)
        hit = best != np.iinfo(np.int64).max
        labels[hit] = best[hit]
    return LabeledPoints(pts, labels, core)


def time_scale(diagram: SSODiagram, eta: float, per_eps: float) -> float:
    """Factor mapping seconds to rad/s so ``per_eps`` snippet spacings span ``eta``."""
    return eta / (per_eps * diagram.plan.spacing)


def scale_axes(diagram: SSODiagram, mode: str = "freq_only", eta: float | None = None,
               per_eps: float = 4.0) -> np.ndarray:
    """2-D coordinates for clustering.

    ``freq_only`` gives (0, freq). ``time_freq`` gives (t*s, freq) with s chosen
    so consecutive snippet centers are eta/per_eps apart.
    """
    if len(diagram) == 0:
        raise ValueError("empty diagram")
    if mode == "freq_only":
        return np.column_stack([np.zeros(len(diagram)), diagram.freq])
    if mode == "time_freq":
        if eta is None or eta <= 0:
            raise ValueError("time_freq scaling needs eta > 0")
        return np.column_stack([diagram.t * time_scale(diagram, eta, per_eps), diagram.freq])
    raise ValueError(f"unknown scaling mode {mode!r}")
