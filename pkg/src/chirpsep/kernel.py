"""Low-pass filters and the localized trigonometric kernel built from them."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal

import numpy as np

FilterKind = Literal["smooth", "cosine"]


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step from 0 (s<=0) to 1 (s>=1)."""
    s = np.clip(s, 0.0, 1.0)
    out = np.zeros_like(s)
    inner = (s > 0) & (s < 1)
    si = s[inner]
    a = np.exp(-1.0 / si)
    b = np.exp(-1.0 / (1.0 - si))
    out[inner] = a / (a + b)
    out[s >= 1] = 1.0
    return out


@dataclass(frozen=True)
class LowPassFilter:
    """Even filter equal to 1 on [-1/2, 1/2] and 0 outside (-1, 1).

    ``smooth`` uses a C-infinity transition, ``cosine`` a cos^2 taper.
    """

    kind: FilterKind = "smooth"

    def __post_init__(self):
        if self.kind not in ("smooth", "cosine"):
            raise ValueError(f"unknown filter kind {self.kind!r}")

    def __call__(self, t):
        a = np.abs(np.atleast_1d(np.asarray(t, dtype=float)))
        out = np.where(a <= 0.5, 1.0, 0.0)
        mid = (a > 0.5) & (a < 1.0)
        if self.kind == "smooth":
            out[mid] = _smooth_step(2.0 * (1.0 - a[mid]))
        else:
            out[mid] = np.cos(np.pi * (a[mid] - 0.5)) ** 2
        return float(out[0]) if np.ndim(t) == 0 else out.reshape(np.shape(t))


def filter_eval(filt: LowPassFilter, t) -> float | np.ndarray:
    return filt(t)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel order ``n`` plus the localization pair (L, S) used in diagnostics.

    ``L`` is measured, not derived; see :func:`fit_localization_constant`.
    """

    n: int
    filter: LowPassFilter = LowPassFilter()
    S: float = 2.0
    L: float | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("kernel order n must be a positive integer")


@lru_cache(maxsize=64)
def _weights_cached(n: int, kind: str) -> np.ndarray:
    ell = np.arange(-(n - 1), n)
    w = np.asarray(LowPassFilter(kind)(np.abs(ell) / n), dtype=float)
    w.setflags(write=False)
    return w


def kernel_weights(n: int, filt: LowPassFilter = LowPassFilter()) -> np.ndarray:
    """H(|l|/n) for l = -(n-1), ..., n-1 (read-only array of length 2n-1)."""
    return _weights_cached(int(n), filt.kind)


def kernel_norm(spec: KernelSpec) -> float:
    """Normalizing factor: reciprocal of the filter sum over |l| < n."""
    return 1.0 / float(np.sum(kernel_weights(spec.n, spec.filter)))


def kernel_eval(spec: KernelSpec, x) -> float | np.ndarray:
    """Evaluate the (real, even) kernel at angle(s) ``x`` by direct summation."""
    n = spec.n
    w = kernel_weights(n, spec.filter)[n - 1:]  # l = 0..n-1
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ell = np.arange(n)
    # sum over |l|<n of w e^{ilx} = w0 + 2 sum_{l>=1} w_l cos(lx)
    coeff = w.copy()
    coeff[1:] *= 2.0
    vals = np.empty(xs.shape)
    flat = xs.ravel()
    out = vals.ravel()
    block = max(1, 2**22 // n)
    for i in range(0, flat.size, block):
        out[i:i + block] = np.cos(np.outer(flat[i:i + block], ell)) @ coeff
    vals *= kernel_norm(spec)
    return float(vals[0]) if np.ndim(x) == 0 else vals


def kernel_on_grid(spec: KernelSpec, grid_size: int) -> np.ndarray:
    """Kernel values on x_g = -pi + 2 pi g / G via a zero-padded FFT."""
    n, G = spec.n, int(grid_size)
    if G < 2 * n - 1:
        raise ValueError("grid_size must be at least 2n-1")
    ell = np.arange(-(n - 1), n)
    a = np.zeros(G, dtype=complex)
    # e^{il x_g} = (-1)^l e^{2 pi i l g / G}
    a[ell % G] = kernel_weights(n, spec.filter) * np.where(ell % 2, -1.0, 1.0)
    return kernel_norm(spec) * np.fft.ifft(a, norm="forward").real


def localization_profile(spec: KernelSpec, S: float, oversample: int = 16,
                         min_dist: float = 0.0) -> float:
    """sup over grid points with |x| >= max(min_dist, 1/n) of |Phi_n(x)| (n|x|)^S."""
    n = spec.n
    G = 1 << int(np.ceil(np.log2(max(4096, oversample * n))))
    vals = np.abs(kernel_on_grid(spec, G))
    x = -np.pi + 2 * np.pi * np.arange(G) / G
    mask = np.abs(x) >= max(min_dist, 1.0 / n)
    return float(np.max(vals[mask] * (n * np.abs(x[mask])) ** S))


def fit_localization_constant(filt: LowPassFilter = LowPassFilter(), S: float = 2.0,
                              orders=(64, 256, 1024)) -> float:
    """Empirical L such that |Phi_n(x)| <= L / max(1, (n|x|)^S) for the given orders."""
    L = 1.0  # |Phi_n| <= 1 covers n|x| < 1
    for n in orders:
        L = max(L, localization_profile(KernelSpec(n, filt), S))
    return L
