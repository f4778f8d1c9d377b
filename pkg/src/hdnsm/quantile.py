"""Rearrangement, quantile inversion and local-linear slopes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .kernels import KernelSpec, kernel_eval


@dataclass
class MonotoneCurve:
    u_grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.u_grid = np.asarray(self.u_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.u_grid.shape:
            raise ValueError("values and u_grid must have the same length")


@dataclass
class LocalLinearFit:
    center: float
    intercept: float
    slope: float
    effective_weight_sum: float


def rearrange(values, u_grid=None) -> MonotoneCurve:
    """Increasing rearrangement of a function sampled on a uniform grid.

    With the affine map of the grid onto [0, 1], the rearranged function is
    the quantile function of the values' empirical distribution, i.e. the
    sorted values.
    """
    values = np.asarray(values, dtype=float)
    if u_grid is None:
        u_grid = np.linspace(0.0, 1.0, values.size)
    return MonotoneCurve(u_grid, np.sort(values, kind="stable"))


def invert_grid(values, u_grid, taus):
    """Vectorized inf{u : values(u) >= tau} for nondecreasing rows.

    ``values`` has the u-axis last. Returns (q, saturated) with shape
    ``(len(taus),) + values.shape[:-1]``.
    """
    values = np.asarray(values, dtype=float)
    u_grid = np.asarray(u_grid, dtype=float)
    taus = np.asarray(taus, dtype=float)
    below = values[None, ...] < taus.reshape((-1,) + (1,) * values.ndim)
    idx = below.sum(axis=-1)
    saturated = idx >= u_grid.size
    return u_grid[np.minimum(idx, u_grid.size - 1)], saturated


def invert_cdf(curve: MonotoneCurve, tau: float, with_flag: bool = False):
    if not 0 < tau < 1:
        raise ValueError("tau out of range")
    q, sat = invert_grid(curve.values, curve.u_grid, [tau])
    q, sat = float(q[0]), bool(sat[0])
    return (q, sat) if with_flag else q


def local_linear_fit(points_t, points_y, t: float, h: float, kernel: KernelSpec,
                     weights=None) -> LocalLinearFit:
    """Weighted LS of y on (1, T - t) with weights eta_i K((T_i - t)/h)."""
    points_t = np.asarray(points_t, dtype=float)
    points_y = np.asarray(points_y, dtype=float)
    w = kernel_eval(kernel, (points_t - t) / h) * (1.0 if weights is None else np.asarray(weights))
    active = w != 0
    if np.unique(points_t[active]).size < 2:
        raise ValueError("degenerate local design")
    d = points_t[active] - t
    w = w[active]
    y = points_y[active]
    sw = w.sum()
    dbar = np.dot(w, d) / sw
    ybar = np.dot(w, y) / sw
    dc = d - dbar
    sxx = np.dot(w, dc * dc)
    if not abs(sxx) > 1e-14 * max(abs(sw), 1.0) * h * h:
        raise ValueError("degenerate local design")
    slope = np.dot(w, dc * (y - ybar)) / sxx
    return LocalLinearFit(float(t), float(ybar - slope * dbar), float(slope), float(sw))


class SlopeSmoother:
    """Local-linear slopes of grid curves, evaluated through the observations.

    Curves known on ``t_grid`` are interpolated linearly to the observed T_i
    that fall inside the grid range, then regressed locally around each grid
    point. Interpolation weights and kernel weights are computed once and
    reused for every replicate.
    """

    def __init__(self, t_grid, t_obs, h: float, kernel: KernelSpec):
        t_grid = np.asarray(t_grid, dtype=float)
        t_obs = np.asarray(t_obs, dtype=float)
        if t_grid.size < 2:
            raise ValueError("slopes need at least two grid points")
        self.t_grid = t_grid
        self.inside = np.flatnonzero((t_obs >= t_grid[0]) & (t_obs <= t_grid[-1]))
        ti = t_obs[self.inside]
        idx = np.clip(np.searchsorted(t_grid, ti, side="right") - 1, 0, t_grid.size - 2)
        self._lo = idx
        self._frac = (ti - t_grid[idx]) / (t_grid[idx + 1] - t_grid[idx])
        self._d = ti[None, :] - t_grid[:, None]                 # (grid, obs)
        self._kern = kernel_eval(kernel, self._d / h)
        self.h = h

    def interpolate(self, curves: np.ndarray) -> np.ndarray:
        """curves (..., grid) -> values at the in-range observations (..., obs)."""
        lo = curves[..., self._lo]
        hi = curves[..., self._lo + 1]
        return lo * (1.0 - self._frac) + hi * self._frac

    def slopes(self, curves: np.ndarray, weights=None) -> np.ndarray:
        curves = np.asarray(curves, dtype=float)
        y = self.interpolate(curves)                            # (..., obs)
        w = self._kern if weights is None else self._kern * np.asarray(weights)[self.inside]
        d = self._d
        s0 = w.sum(axis=1)
        s1 = (w * d).sum(axis=1)
        s2 = (w * d * d).sum(axis=1)
        t0 = y @ w.T                                            # (..., grid)
        t1 = y @ (w * d).T
        det = s0 * s2 - s1 * s1
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (s0 * t1 - s1 * t0) / det
        bad = ~(np.abs(det) > 1e-14 * np.maximum(np.abs(s0), 1.0) ** 2 * self.h ** 2)
        return np.where(bad, np.nan, out)


def derivative_curves(curve, data, h: float, kernel: KernelSpec, weights=None):
    """Fill ``mu_slope`` and ``q_slope`` of a CurveEstimate in place and return it."""
    smoother = SlopeSmoother(curve.t_grid, data.t, h, kernel)
    stacked = np.vstack([curve.mu[None, :], curve.q])
    slopes = smoother.slopes(stacked, weights)
    curve.mu_slope = slopes[0]
    curve.q_slope = slopes[1:]
    return curve
