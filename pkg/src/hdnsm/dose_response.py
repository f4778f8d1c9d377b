"""Doubly-robust estimation of mu(t) = E[Y(t)] and alpha(t, u) = P(Y(t) <= u)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Dataset
from .kernels import KernelSpec, TuningConfig, kernel_weights, select_bandwidth
from .lasso import NuisanceSet, fit_nuisances_at
from .quantile import SlopeSmoother, invert_grid

FLAVORS = ("lasso", "post-lasso")


@dataclass
class Grids:
    t_grid: np.ndarray
    u_grid: np.ndarray
    taus: np.ndarray

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.u_grid = np.asarray(self.u_grid, dtype=float)
        self.taus = np.asarray(self.taus, dtype=float)
        if not (self.t_grid.size and self.u_grid.size and self.taus.size):
            raise ValueError("grids must be nonempty")
        if np.any(np.diff(self.t_grid) <= 0) or np.any(np.diff(self.u_grid) <= 0):
            raise ValueError("grids must be strictly increasing")
        if np.any((self.taus <= 0) | (self.taus >= 1)):
            raise ValueError("tau out of range")


def default_grids(data: Dataset, config: TuningConfig, taus: Sequence[float] = (0.25, 0.5, 0.75),
                  t_range=None) -> Grids:
    """Equally spaced t between the 20% and 80% treatment quantiles, u between 2% and 98% of Y."""
    if t_range is None:
        t_range = np.quantile(data.t, [0.2, 0.8])
    t_grid = np.linspace(t_range[0], t_range[1], config.t_grid_size)
    u_lo, u_hi = np.quantile(data.y, [0.02, 0.98])
    return Grids(t_grid, np.linspace(u_lo, u_hi, config.u_grid_size), np.asarray(taus))


@dataclass
class DRMomentInputs:
    """Plug-in nuisance values at one treatment level, evaluated at each X_i."""
    t: float
    h: float
    kernel: KernelSpec
    density: np.ndarray
    nu: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None      # (n, len(u_grid))
    u_grid: Optional[np.ndarray] = None

    @classmethod
    def from_nuisances(cls, ns: NuisanceSet, h: float, kernel: KernelSpec,
                       flavor: str = "post-lasso") -> "DRMomentInputs":
        nu, f, phi = ns.arrays(flavor)
        return cls(ns.t, h, kernel, f, nu, phi, ns.u_grid)


def moment_terms(outcome, regression, density, kern, h: float):
    """(Y - g(X)) K((T-t)/h) / (f(X) h) + g(X), broadcasting over trailing axes."""
    outcome = np.asarray(outcome, dtype=float)
    regression = np.asarray(regression, dtype=float)
    scale = np.asarray(kern, dtype=float) / (np.asarray(density, dtype=float) * h)
    if regression.ndim == 2:
        scale = scale[:, None]
        if outcome.ndim == 1:
            outcome = outcome[:, None]
    return (outcome - regression) * scale + regression


def weighted_average(terms, weights=None):
    """sum_i eta_i terms_i / sum_i eta_i along the observation axis (eta = 1 if absent)."""
    terms = np.asarray(terms, dtype=float)
    if weights is None:
        weights = np.ones(terms.shape[0])
    weights = np.asarray(weights, dtype=float)
    flat = terms.reshape(terms.shape[0], -1)
    out = (weights @ flat) / weights.sum()
    return out.reshape(terms.shape[1:])


def _check_t(t, inputs: DRMomentInputs):
    if not np.isclose(t, inputs.t):
        raise ValueError(f"nuisances were fitted at t={inputs.t}, not t={t}")


def dr_mean(t: float, inputs: DRMomentInputs, data: Dataset, weights=None) -> float:
    _check_t(t, inputs)
    kern = kernel_weights(inputs.kernel, data.t, t, inputs.h)
    return float(weighted_average(moment_terms(data.y, inputs.nu, inputs.density, kern, inputs.h),
                                  weights))


def dr_cdf(t: float, u: float, inputs: DRMomentInputs, data: Dataset, weights=None) -> float:
    _check_t(t, inputs)
    matches = np.flatnonzero(np.isclose(inputs.u_grid, u, rtol=0, atol=1e-12))
    if not matches.size:
        raise ValueError(f"no logistic fit at u={u}")
    phi = inputs.phi[:, matches[0]]
    kern = kernel_weights(inputs.kernel, data.t, t, inputs.h)
    y_u = (data.y <= u).astype(float)
    val = float(weighted_average(moment_terms(y_u, phi, inputs.density, kern, inputs.h), weights))
    return min(max(val, 0.0), 1.0)


@dataclass
class CurveEstimate:
    t_grid: np.ndarray
    u_grid: np.ndarray
    taus: np.ndarray
    mu: np.ndarray
    alpha_raw: np.ndarray
    alpha_rearranged: np.ndarray
    q: np.ndarray
    mu_slope: Optional[np.ndarray] = None
    q_slope: Optional[np.ndarray] = None
    used_post_lasso: bool = True
    h: float = float("nan")
    saturated: Optional[np.ndarray] = None
    nuisances: Optional[list] = field(default=None, repr=False)

    def statistics(self) -> dict:
        return {"mu": self.mu, "q": self.q, "mu_slope": self.mu_slope, "q_slope": self.q_slope}


class MomentTable:
    """Per-observation doubly-robust moments for every (t) and (t, u), nuisances held fixed.

    Stage 2 and 3 only need weighted averages of these columns, so bootstrap
    replicates reuse the table without touching the first-stage fits.
    """

    def __init__(self, data: Dataset, nuisances: Sequence[NuisanceSet], grids: Grids, h: float,
                 kernel: KernelSpec, flavor: str = "post-lasso"):
        if flavor not in FLAVORS:
            raise ValueError(f"unknown flavor {flavor!r}")
        n, nt, nu = data.n, grids.t_grid.size, grids.u_grid.size
        if len(nuisances) != nt:
            raise ValueError("need one NuisanceSet per t-grid point")
        self.mu_terms = np.empty((n, nt))
        self.alpha_terms = np.empty((n, nt, nu))
        y_u = (data.y[:, None] <= grids.u_grid[None, :]).astype(float)
        for k, (t, ns) in enumerate(zip(grids.t_grid, nuisances)):
            if not np.isclose(ns.t, t) or not np.allclose(ns.u_grid, grids.u_grid):
                raise ValueError(f"nuisances do not match the grid at t={t}")
            nu_x, f_x, phi_x = ns.arrays(flavor)
            kern = kernel_weights(kernel, data.t, t, h)
            self.mu_terms[:, k] = moment_terms(data.y, nu_x, f_x, kern, h)
            self.alpha_terms[:, k, :] = moment_terms(y_u, phi_x, f_x, kern, h)
        self.grids = grids
        self.smoother = SlopeSmoother(grids.t_grid, data.t, h, kernel)
        self.h = h
        self.flavor = flavor

    def curves(self, weights=None) -> CurveEstimate:
        """Stages 2 and 3 under multiplier weights (eta = 1 when absent)."""
        g = self.grids
        if weights is None:
            weights = np.ones(self.mu_terms.shape[0])
        mu = weighted_average(self.mu_terms, weights)
        alpha = np.clip(weighted_average(self.alpha_terms, weights), 0.0, 1.0)
        alpha_r = np.sort(alpha, axis=1, kind="stable")
        q, sat = invert_grid(alpha_r, g.u_grid, g.taus)
        slopes = self.smoother.slopes(np.vstack([mu[None, :], q]), weights)
        return CurveEstimate(g.t_grid, g.u_grid, g.taus, mu, alpha, alpha_r, q,
                             slopes[0], slopes[1:], self.flavor == "post-lasso", self.h, sat)


def check_grid_interior(data: Dataset, t_grid, h: float):
    lo, hi = data.t.min(), data.t.max()
    if t_grid[0] - h <= lo or t_grid[-1] + h >= hi:
        raise ValueError(f"t grid must lie inside the treatment range [{lo}, {hi}] by at least h={h}")


def fit_stage_one(data: Dataset, grids: Grids, h: float, config: TuningConfig,
                  kernel: Optional[KernelSpec] = None) -> list:
    kernel = kernel or config.kernel_spec
    return [fit_nuisances_at(float(t), data, grids.u_grid, h, config, kernel) for t in grids.t_grid]


def estimate_curves(data: Dataset, grids: Optional[Grids] = None,
                    config: Optional[TuningConfig] = None, weights=None,
                    nuisances: Optional[list] = None, h: Optional[float] = None,
                    flavor: str = "post-lasso", taus=(0.25, 0.5, 0.75)) -> CurveEstimate:
    """Three-stage estimate of mu(t), alpha(t, u), q_tau(t) and their t-derivatives."""
    config = config or TuningConfig()
    kernel = config.kernel_spec
    grids = grids or default_grids(data, config, taus)
    if h is None:
        h = select_bandwidth(data.t, grids.taus, config)
    check_grid_interior(data, grids.t_grid, h)
    if nuisances is None:
        nuisances = fit_stage_one(data, grids, h, config, kernel)
    est = MomentTable(data, nuisances, grids, h, kernel, flavor).curves(weights)
    est.nuisances = nuisances
    return est
