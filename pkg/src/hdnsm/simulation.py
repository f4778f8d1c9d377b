"""Simulation design: DGP, population truth, and the Monte Carlo coverage harness.

Design::

    X ~ Gaussian copula, latent correlation decay^{-|j-k|}, uniform marginals
    S = sum_j (2 X_j - 1) / 2^j
    V = T + 0.5 * ((1 - cos(pi T)) / 2 - T) * S,   V ~ U(0, 1)
    Y = Lambda(U - S/2 + (T - 1/2)^2),              U ~ standard logistic
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit, logit, ndtr

from .bootstrap import MultiplierSpec, bootstrap_curves, modified_percentile_ci
from .data import Dataset
from .dose_response import Grids, MomentTable, check_grid_interior, fit_stage_one
from .kernels import TuningConfig, select_bandwidth

log = logging.getLogger(__name__)


@dataclass
class DgpConfig:
    n: int = 250
    p: int = 100
    copula_decay: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be >= 1")
        if not self.copula_decay > 1:
            raise ValueError("copula_decay must exceed 1")


def copula_cholesky(p: int, decay: float) -> np.ndarray:
    idx = np.arange(p)
    corr = float(decay) ** (-np.abs(idx[:, None] - idx[None, :]).astype(float))
    return np.linalg.cholesky(corr)


def draw_covariates(n: int, p: int, rng: np.random.Generator, chol: np.ndarray):
    """Uniform-marginal copula draws X and their latent normals Z."""
    z = rng.standard_normal((n, p)) @ chol.T
    return ndtr(z), z


def index_s(x: np.ndarray) -> np.ndarray:
    """S = sum_j (2 X_j - 1) / 2^j."""
    w = 0.5 ** np.arange(1, x.shape[1] + 1)
    return (2.0 * x - 1.0) @ w


def treatment_map(t, s):
    return t + 0.5 * ((1.0 - np.cos(np.pi * t)) / 2.0 - t) * s


def solve_treatment(v, s, tol: float = 1e-13) -> np.ndarray:
    """Solve V = T + 0.5 w(T) S for T in [0, 1] by bisection."""
    v = np.asarray(v, dtype=float)
    s = np.asarray(s, dtype=float)
    v, s = np.broadcast_arrays(v, s)
    lo = np.zeros(v.shape)
    hi = np.ones(v.shape)
    g_lo = treatment_map(lo, s) - v
    g_hi = treatment_map(hi, s) - v
    bad = (g_lo > 0) | (g_hi < 0)
    if bad.any():
        i = np.flatnonzero(bad.ravel())[0]
        raise ValueError(f"bisection bracket failure at V={v.ravel()[i]!r}, S={s.ravel()[i]!r}")
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        left = treatment_map(mid, s) - v >= 0
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
    t = 0.5 * (lo + hi)
    return np.where(s == 0, v, t)


def simulate_dgp(cfg: DgpConfig, chol: Optional[np.ndarray] = None) -> Dataset:
    rng = np.random.default_rng(cfg.seed)
    if chol is None:
        chol = copula_cholesky(cfg.p, cfg.copula_decay)
    x, _ = draw_covariates(cfg.n, cfg.p, rng, chol)
    s = index_s(x)
    v = rng.uniform(size=cfg.n)
    u = rng.logistic(size=cfg.n)
    t = solve_treatment(v, s)
    y = expit(u - s / 2.0 + (t - 0.5) ** 2)
    return Dataset(y, t, x)


# --------------------------------------------------------------------------
# population nuisances (closed form)
# --------------------------------------------------------------------------

def true_density(t: float, s) -> np.ndarray:
    """f_{T|X}(t|x): V is uniform and the treatment map is strictly increasing when |S| < 1."""
    return 1.0 + 0.5 * np.asarray(s) * (0.5 * np.pi * np.sin(np.pi * t) - 1.0)


def true_cdf_regression(t: float, u: float, s) -> np.ndarray:
    """P(Y <= u | X, T=t) = Lambda(logit(u) + S/2 - (t - 1/2)^2)."""
    return expit(logit(u) + np.asarray(s) / 2.0 - (t - 0.5) ** 2)


def logistic_shift_mean(c) -> np.ndarray:
    """E[Lambda(U + c)] for standard logistic U.

    Integrating Lambda(logit(v) + c) over v in (0, 1) gives
    a/(a-1) * (1 - log(a)/(a-1)) with a = e^c.
    """
    c = np.asarray(c, dtype=float)
    small = np.abs(c) < 1e-4
    cc = np.where(small, 1.0, c)
    a = np.exp(cc)
    em1 = np.expm1(cc)
    exact = a / em1 * (1.0 - cc / em1)
    series = 0.5 + c / 6.0
    return np.where(small, series, exact)


def true_mean_regression(t: float, s) -> np.ndarray:
    """E[Y | X, T=t]."""
    return logistic_shift_mean(-np.asarray(s) / 2.0 + (t - 0.5) ** 2)


# --------------------------------------------------------------------------
# population truth by simulation
# --------------------------------------------------------------------------

@dataclass
class OracleTruth:
    t_grid: np.ndarray
    taus: np.ndarray
    q_true: np.ndarray
    q_slope_true: np.ndarray
    mu_true: np.ndarray
    mu_slope_true: np.ndarray
    mc_size: int
    q_se: np.ndarray
    q_slope_se: np.ndarray
    mu_se: np.ndarray
    seed: int = 0

    def to_json(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "OracleTruth":
        arrays = {k: np.asarray(v, dtype=float) if isinstance(v, list) else v for k, v in obj.items()}
        return cls(**arrays)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "OracleTruth":
        return cls.from_json(json.loads(Path(path).read_text()))

    def lookup(self, statistic: str) -> tuple:
        return {
            "mu": (self.mu_true, self.mu_se),
            "mu_slope": (self.mu_slope_true, None),
            "q": (self.q_true, self.q_se),
            "q_slope": (self.q_slope_true, self.q_slope_se),
        }[statistic]


def latent_outcome_index(cfg: DgpConfig, size: int, seed: int, chunk: int = 100_000) -> np.ndarray:
    """Draws of U - S/2, the outcome index at t = 1/2."""
    rng = np.random.default_rng(seed)
    chol = copula_cholesky(cfg.p, cfg.copula_decay)
    out = np.empty(size)
    for start in range(0, size, chunk):
        m = min(chunk, size - start)
        x, _ = draw_covariates(m, cfg.p, rng, chol)
        out[start:start + m] = rng.logistic(size=m) - index_s(x) / 2.0
    return out


def oracle_truth(cfg: DgpConfig, t_grid: Sequence[float], taus: Sequence[float],
                 mc_size: int = 1_000_000, seed: Optional[int] = None) -> OracleTruth:
    """mu(t), q_tau(t) and finite-difference t-slopes from mc_size draws of Y(t).

    The same (X, U) draws serve every t, so differences across the grid carry
    no independent simulation noise.
    """
    if mc_size < 10_000:
        raise ValueError("mc_size must be >= 10^4")
    seed = cfg.seed if seed is None else seed
    t_grid = np.asarray(t_grid, dtype=float)
    taus = np.asarray(taus, dtype=float)
    z = latent_outcome_index(cfg, mc_size, seed)
    nt, ntau = t_grid.size, taus.size
    mu, mu_se = np.empty(nt), np.empty(nt)
    q, q_se = np.empty((ntau, nt)), np.empty((ntau, nt))
    # order statistics bracketing each quantile by one binomial standard deviation
    ks = []
    for tau in taus:
        k = int(np.ceil(tau * mc_size)) - 1
        d = int(np.ceil(np.sqrt(mc_size * tau * (1 - tau))))
        ks.append((k, max(k - d, 0), min(k + d, mc_size - 1)))
    kth = sorted({i for trip in ks for i in trip})
    zs = np.partition(z, kth)
    for j, t in enumerate(t_grid):
        y = expit(z + (t - 0.5) ** 2)
        mu[j] = y.mean()
        mu_se[j] = y.std(ddof=1) / np.sqrt(mc_size)
        for i, (k, k_lo, k_hi) in enumerate(ks):
            # Lambda is increasing, so order statistics of Y(t) are those of z shifted
            q[i, j] = expit(zs[k] + (t - 0.5) ** 2)
            q_se[i, j] = 0.5 * (expit(zs[k_hi] + (t - 0.5) ** 2) - expit(zs[k_lo] + (t - 0.5) ** 2))
    if nt >= 3:
        q_slope = np.gradient(q, t_grid, axis=1, edge_order=2)
        mu_slope = np.gradient(mu, t_grid, edge_order=2)
        step = np.gradient(t_grid)
        q_slope_se = np.sqrt(2.0) * q_se / (2.0 * step[None, :])
    else:
        q_slope = np.full_like(q, np.nan)
        mu_slope = np.full_like(mu, np.nan)
        q_slope_se = np.full_like(q, np.nan)
    return OracleTruth(t_grid, taus, q, q_slope, mu, mu_slope, mc_size, q_se, q_slope_se, mu_se,
                       seed)


# --------------------------------------------------------------------------
# Monte Carlo study
# --------------------------------------------------------------------------

@dataclass
class StudyConfig:
    dgp: DgpConfig = field(default_factory=DgpConfig)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    R: int = 100
    B: int = 200
    t_grid: tuple = tuple(np.round(np.linspace(0.2, 0.8, 25), 12))
    taus: tuple = (0.25, 0.5, 0.75)
    alpha: float = 0.05
    multiplier: str = "exponential"
    flavor: str = "post-lasso"
    seed: int = 20240601
    truth_mc_size: int = 1_000_000

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be >= 1")


STAT_NAMES = ("q", "q_slope", "mu", "mu_slope")


@dataclass
class ReplicateResult:
    index: int
    ok: bool
    h: float = float("nan")
    point: Optional[dict] = None
    lower: Optional[dict] = None
    upper: Optional[dict] = None
    b_effective: int = 0
    support: Optional[dict] = None
    error: str = ""
    seconds: float = 0.0


def _replicate_seeds(master: int, r: int) -> tuple:
    data_seed = int(np.random.SeedSequence(master, spawn_key=(r, 0)).generate_state(1, np.uint64)[0])
    boot_seed = int(np.random.SeedSequence(master, spawn_key=(r, 1)).generate_state(1, np.uint64)[0])
    return data_seed, boot_seed


def run_replicate(study: StudyConfig, r: int, chol: Optional[np.ndarray] = None) -> ReplicateResult:
    """Simulate, estimate, and bootstrap one replication."""
    start = time.perf_counter()
    data_seed, boot_seed = _replicate_seeds(study.seed, r)
    cfg = DgpConfig(study.dgp.n, study.dgp.p, study.dgp.copula_decay, data_seed)
    try:
        data = simulate_dgp(cfg, chol)
        u_lo, u_hi = np.quantile(data.y, [0.02, 0.98])
        grids = Grids(np.asarray(study.t_grid), np.linspace(u_lo, u_hi, study.tuning.u_grid_size),
                      np.asarray(study.taus))
        h = select_bandwidth(data.t, grids.taus, study.tuning)
        check_grid_interior(data, grids.t_grid, h)
        kernel = study.tuning.kernel_spec
        nuisances = fit_stage_one(data, grids, h, study.tuning, kernel)
        moments = MomentTable(data, nuisances, grids, h, kernel, study.flavor)
        est = moments.curves()
        point = est.statistics()
        support = {
            "density": [ns.support_sizes()["density"] for ns in nuisances],
            "logistic_median": [float(np.median(ns.support_sizes()["logistic"])) for ns in nuisances],
            "ls": [ns.support_sizes()["ls"] for ns in nuisances],
        }
        spec = MultiplierSpec(study.multiplier, study.B, boot_seed)
        draws = bootstrap_curves(data, nuisances, grids, study.tuning, spec, h, study.flavor, moments)
        if draws.b_effective >= 10:
            band = modified_percentile_ci(draws, point, study.alpha)
            lower, upper = band.lower, band.upper
        else:
            lower = upper = None
        return ReplicateResult(r, True, h, point, lower, upper, draws.b_effective, support,
                               seconds=time.perf_counter() - start)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return ReplicateResult(r, False, error=str(exc), seconds=time.perf_counter() - start)


@dataclass
class McReport:
    rows: list
    R: int
    B: int
    failures: int
    config: dict
    summary: dict = field(default_factory=dict)

    def row(self, statistic: str, t: float, tau: Optional[float] = None) -> dict:
        for r in self.rows:
            if r["statistic"] == statistic and np.isclose(r["t"], t) and (
                    tau is None or (r["tau"] is not None and np.isclose(r["tau"], tau))):
                return r
        raise KeyError((statistic, t, tau))

    def write_csv(self, path) -> None:
        cols = ["statistic", "tau", "t", "truth", "bias", "rmse", "coverage", "avg_width", "n_valid"]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow(["" if r[c] is None else (repr(float(r[c])) if c not in ("statistic",)
                                                     else r[c]) for c in cols])

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps({
            "R": self.R, "B": self.B, "failures": self.failures,
            "config": self.config, "summary": self.summary,
        }, indent=1, default=float))


def summarize(study: StudyConfig, truth: OracleTruth, results: Sequence[ReplicateResult]) -> McReport:
    ok = [r for r in results if r.ok]
    rows = []
    for stat in STAT_NAMES:
        true_vals, _ = truth.lookup(stat)
        for j, t in enumerate(study.t_grid):
            for i, tau in enumerate(study.taus if stat.startswith("q") else [None]):
                tv = true_vals[i, j] if tau is not None else true_vals[j]
                idx = (i, j) if tau is not None else (j,)
                est = np.array([r.point[stat][idx] for r in ok])
                have_ci = [r for r in ok if r.lower is not None]
                lo = np.array([r.lower[stat][idx] for r in have_ci])
                hi = np.array([r.upper[stat][idx] for r in have_ci])
                finite = np.isfinite(est)
                err = est[finite] - tv
                rows.append({
                    "statistic": stat,
                    "tau": tau,
                    "t": float(t),
                    "truth": float(tv),
                    "bias": float(err.mean()) if err.size else float("nan"),
                    "rmse": float(np.sqrt(np.mean(err ** 2))) if err.size else float("nan"),
                    "coverage": float(np.mean((lo <= tv) & (tv <= hi))) if lo.size else float("nan"),
                    "avg_width": float(np.mean(hi - lo)) if lo.size else float("nan"),
                    "n_valid": int(finite.sum()),
                })
    density = [s for r in ok for s in r.support["density"]]
    logistic = [s for r in ok for s in r.support["logistic_median"]]
    summary = {
        "median_density_support": float(np.median(density)) if density else float("nan"),
        "median_logistic_support": float(np.median(logistic)) if logistic else float("nan"),
        "mean_bandwidth": float(np.mean([r.h for r in ok])) if ok else float("nan"),
        "mean_b_effective": float(np.mean([r.b_effective for r in ok])) if ok else float("nan"),
        "seconds": float(sum(r.seconds for r in results)),
        "errors": [r.error for r in results if not r.ok],
    }
    config = {
        "dgp": asdict(study.dgp), "tuning": asdict(study.tuning), "t_grid": list(study.t_grid),
        "taus": list(study.taus), "alpha": study.alpha, "multiplier": study.multiplier,
        "flavor": study.flavor, "seed": study.seed, "truth_mc_size": truth.mc_size,
        "truth_seed": truth.seed,
    }
    return McReport(rows, study.R, study.B, len(results) - len(ok), config, summary)


def _replicate_worker(args):
    study, r = args
    return run_replicate(study, r)


def run_mc_study(study: StudyConfig, truth: Optional[OracleTruth] = None, n_jobs: int = 1,
                 progress: bool = False) -> McReport:
    """R replications of simulate -> estimate -> bootstrap, aggregated against the truth."""
    if truth is None:
        truth = oracle_truth(study.dgp, study.t_grid, study.taus, study.truth_mc_size,
                             seed=study.seed)
    if (truth.t_grid.shape != np.shape(study.t_grid) or not np.allclose(truth.t_grid, study.t_grid)
            or not np.allclose(truth.taus, study.taus)):
        raise ValueError("oracle truth grid does not match the study grid")
    if n_jobs == 1:
        chol = copula_cholesky(study.dgp.p, study.dgp.copula_decay)
        results = []
        for r in range(study.R):
            res = run_replicate(study, r, chol)
            results.append(res)
            if progress:
                log.info("replicate %d/%d %s in %.1fs", r + 1, study.R,
                         "ok" if res.ok else "FAILED", res.seconds)
    else:
        with ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_replicate_worker, [(study, r) for r in range(study.R)]))
    results.sort(key=lambda res: res.index)
    return summarize(study, truth, results)
