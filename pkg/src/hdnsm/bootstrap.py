"""Multiplier bootstrap holding the first-stage fits fixed, and modified percentile intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dose_response import MomentTable

DISTRIBUTIONS = ("exponential", "normal", "ones")
STATISTICS = ("mu", "q", "mu_slope", "q_slope")


@dataclass(frozen=True)
class MultiplierSpec:
    distribution: str = "exponential"
    B: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown multiplier distribution {self.distribution!r}")
        if self.B < 1:
            raise ValueError("B must be >= 1")


def draw_multipliers(spec: MultiplierSpec, n: int, b: int) -> np.ndarray:
    """Unit-mean weights for replicate b; a Philox stream keyed by (seed, b).

    ``"ones"`` is a test hook: every weight equals 1.
    """
    if spec.distribution == "ones":
        return np.ones(n)
    ss = np.random.SeedSequence(spec.seed, spawn_key=(int(b),))
    rng = np.random.Generator(np.random.Philox(ss))
    if spec.distribution == "exponential":
        return rng.standard_exponential(n)
    return 1.0 + rng.standard_normal(n)


@dataclass
class BootstrapDraws:
    draws: dict
    B: int
    failed: list = field(default_factory=list)

    @property
    def b_effective(self) -> int:
        return self.B - len(self.failed)


@dataclass
class ConfidenceBand:
    alpha: float
    lower: dict
    upper: dict
    method: str = "modified percentile"


def bootstrap_curves(data, fixed_nuisances, grids, config, spec: MultiplierSpec, h: float,
                     flavor: str = "post-lasso", moments: Optional[MomentTable] = None
                     ) -> BootstrapDraws:
    """Recompute stages 2-3 under B multiplier draws, first-stage fits held fixed.

    A prebuilt ``moments`` table (the one behind the point estimate) may be passed
    to skip rebuilding it.
    """
    if moments is None:
        moments = MomentTable(data, fixed_nuisances, grids, h, config.kernel_spec, flavor)
    n = moments.mu_terms.shape[0]
    out = {k: [] for k in STATISTICS}
    failed = []
    for b in range(spec.B):
        eta = draw_multipliers(spec, n, b)
        try:
            est = moments.curves(eta)
        except (ValueError, FloatingPointError):
            failed.append(b)
            continue
        stats = est.statistics()
        if not all(np.all(np.isfinite(stats[k])) for k in STATISTICS):
            failed.append(b)
            continue
        for k in STATISTICS:
            out[k].append(stats[k])
    draws = {k: (np.array(v) if v else np.empty((0,))) for k, v in out.items()}
    return BootstrapDraws(draws, spec.B, failed)


def inf_quantile(sorted_values: np.ndarray, level: float) -> np.ndarray:
    """inf{x : F_B(x) >= level} along axis 0 of already-sorted draws."""
    B = sorted_values.shape[0]
    k = max(1, math.ceil(level * B - 1e-9))
    return sorted_values[min(k, B) - 1]


def modified_percentile_ci(draws: BootstrapDraws, point: dict, alpha: float = 0.05) -> ConfidenceBand:
    """Symmetric interval point -/+ max(-Q(alpha/2), Q(1-alpha/2)) of the centered draws."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if draws.b_effective < 10:
        raise ValueError("insufficient replicates")
    lower, upper = {}, {}
    for k, pt in point.items():
        pt = np.asarray(pt, dtype=float)
        centered = np.sort(draws.draws[k] - pt[None, ...], axis=0)
        half = np.maximum(-inf_quantile(centered, alpha / 2), inf_quantile(centered, 1 - alpha / 2))
        lower[k] = pt - half
        upper[k] = pt + half
    return ConfidenceBand(alpha, lower, upper)
