"""Compact-support kernels and the rule-of-thumb tuning for h, ell_n and lambda."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

# C(tau) constants of the local quantile bandwidth rule.
_YU_JONES_C = {0.25: 1.13, 0.5: 1.095, 0.75: 1.13}
_YU_JONES_DEFAULT = 1.13


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "epanechnikov"
    support_halfwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("epanechnikov", "uniform"):
            raise ValueError(f"unknown kernel {self.kind!r}")

    @property
    def kappa2(self) -> float:
        """Second moment of the kernel, int u^2 K(u) du."""
        return 0.2 if self.kind == "epanechnikov" else 1.0 / 3.0

    def __call__(self, u):
        return kernel_eval(self, u)


EPANECHNIKOV = KernelSpec("epanechnikov")
UNIFORM = KernelSpec("uniform")


def kernel_eval(spec: KernelSpec, u):
    """Evaluate K(u). Works elementwise on arrays; returns a float for scalar input."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= spec.support_halfwidth
    if spec.kind == "epanechnikov":
        val = np.where(inside, 0.75 * (1.0 - u * u), 0.0)
    else:
        val = np.where(inside, 0.5, 0.0)
    return float(val) if val.ndim == 0 else val


def kernel_weights(spec: KernelSpec, t_obs, t: float, h: float) -> np.ndarray:
    """K((T_i - t) / h) for every observation."""
    return kernel_eval(spec, (np.asarray(t_obs, dtype=float) - t) / h)


@dataclass
class TuningConfig:
    bandwidth_override: Optional[float] = None
    bandwidth_scale: float = 1.0
    ell_n_constant: float = 1.1
    loading_iterations: int = 2
    lasso_tol: float = 1e-7
    lasso_max_sweeps: int = 10_000
    density_floor: float = 0.05
    u_grid_size: int = 50
    t_grid_size: int = 25
    kernel: str = "epanechnikov"

    def __post_init__(self):
        if self.bandwidth_override is not None and self.bandwidth_override <= 0:
            raise ValueError("bandwidth_override must be positive")
        if not 0 < self.density_floor < 1:
            raise ValueError("density_floor must lie in (0, 1)")
        if self.loading_iterations < 0:
            raise ValueError("loading_iterations must be >= 0")
        if self.bandwidth_scale <= 0:
            raise ValueError("bandwidth_scale must be positive")
        KernelSpec(self.kernel)

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel)


def quantile_constant(tau: float) -> float:
    for level, c in _YU_JONES_C.items():
        if math.isclose(tau, level):
            return c
    return _YU_JONES_DEFAULT


def rot_bandwidth(t_sample, tau: float = 0.5, n: Optional[int] = None) -> float:
    """Undersmoothed rule-of-thumb bandwidth n^(-1/10) * C(tau) * 1.08 * sd(T) * n^(-1/5)."""
    t_sample = np.asarray(t_sample, dtype=float)
    if n is None:
        n = t_sample.size
    if n < 1 or t_sample.size < 2:
        raise ValueError("need at least two treatment values")
    sd = float(np.std(t_sample, ddof=1))
    if not sd > 0:
        raise ValueError("constant treatment")
    h_rot = quantile_constant(tau) * 1.08 * sd * n ** (-0.2)
    return n ** (-0.1) * h_rot


def select_bandwidth(t_sample, taus, config: TuningConfig) -> float:
    """One bandwidth for the whole run, evaluated at the median of the requested taus."""
    if config.bandwidth_override is not None:
        return float(config.bandwidth_override)
    tau_mid = float(np.median(np.asarray(taus, dtype=float)))
    return config.bandwidth_scale * rot_bandwidth(t_sample, tau_mid)


class PenaltyLevel(NamedTuple):
    ell_n: float
    lam: float          # penalized local LS / MLE, log(p v nh)
    lam_density: float  # penalized conditional density, log(p v n)


def penalty_lambda(n: int, p: int, h: float, ell_constant: float = 1.1) -> PenaltyLevel:
    nh = n * h
    if not nh > math.e:
        raise ValueError("bandwidth too small for penalty rule")
    if p < 1:
        raise ValueError("p must be >= 1")
    ell_n = ell_constant * math.sqrt(math.log(math.log(nh)))
    lam = ell_n * math.sqrt(math.log(max(p, nh)) * nh)
    lam_density = ell_n * math.sqrt(math.log(max(p, n)) * nh)
    return PenaltyLevel(ell_n, lam, lam_density)
