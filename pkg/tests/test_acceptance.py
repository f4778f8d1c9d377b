"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

Criteria 1-4 share a single Monte Carlo study (n=250, p=100, R=100, B=200),
which takes several minutes on one core.
"""

import os
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from hdnsm.bootstrap import MultiplierSpec, bootstrap_curves, modified_percentile_ci
from hdnsm.dose_response import DRMomentInputs, dr_cdf, dr_mean, estimate_curves, default_grids
from hdnsm.kernels import EPANECHNIKOV, TuningConfig, select_bandwidth
from hdnsm.lasso import solve_weighted_lasso
from hdnsm.quantile import rearrange
from hdnsm.simulation import (DgpConfig, OracleTruth, StudyConfig, copula_cholesky,
                              draw_covariates, index_s, run_mc_study, simulate_dgp,
                              solve_treatment, treatment_map, true_cdf_regression,
                              true_density, true_mean_regression)
from oracles import enumerate_lasso, kkt_violation, rearrange_by_quadrature

FIXTURE = Path(__file__).parent / "fixtures" / "oracle_truth.json"
TEST_T = (0.3, 0.5, 0.7)
TAUS = (0.25, 0.5, 0.75)


@pytest.fixture(scope="module")
def mc_report():
    study = StudyConfig(dgp=DgpConfig(n=250, p=100), R=100, B=200, multiplier="exponential")
    return run_mc_study(study, OracleTruth.load(FIXTURE), n_jobs=os.cpu_count() or 1)


def test_criterion_1_quantile_coverage(mc_report, criterion):
    cov = {(tau, t): mc_report.row("q", t, tau)["coverage"] for tau in TAUS for t in TEST_T}
    worst = min(cov, key=cov.get)
    criterion(1, all(c >= 0.88 for c in cov.values()),
              f"min coverage {cov[worst]:.2f} at tau={worst[0]}, t={worst[1]} (need >= 0.88); "
              f"failures={mc_report.failures}")


def test_criterion_2_derivative_coverage(mc_report, criterion):
    cov = {t: mc_report.row("q_slope", t, 0.5)["coverage"] for t in TEST_T}
    criterion(2, all(c >= 0.90 for c in cov.values()),
              "coverage " + ", ".join(f"t={t}: {c:.2f}" for t, c in cov.items()) + " (need >= 0.90)")


def test_criterion_3_bias_vs_rmse(mc_report, criterion):
    ratio = {}
    for tau in TAUS:
        for t in TEST_T:
            r = mc_report.row("q", t, tau)
            ratio[(tau, t)] = abs(r["bias"]) / r["rmse"]
    worst = max(ratio, key=ratio.get)
    criterion(3, all(v <= 0.5 for v in ratio.values()),
              f"max |bias|/rmse {ratio[worst]:.2f} at tau={worst[0]}, t={worst[1]} (need <= 0.5)")


def test_criterion_4_sparsity(mc_report, criterion):
    dens = mc_report.summary["median_density_support"]
    logi = mc_report.summary["median_logistic_support"]
    criterion(4, dens <= 5 and logi <= 5,
              f"median support: density {dens:.1f}, logistic {logi:.1f} (need <= 5)")


def test_criterion_5_lasso_oracles(criterion):
    rng = np.random.default_rng(2024)
    cfg = TuningConfig()
    worst_gap = 0.0
    for _ in range(50):
        n, p = int(rng.integers(2, 9)), int(rng.integers(1, 4))
        b = rng.normal(size=(n, p))
        y = b @ rng.normal(size=p) + rng.normal(size=n)
        w = rng.uniform(0.1, 1.0, n)
        l = rng.uniform(0.5, 1.5, p)
        lam = rng.uniform(0.05, 3.0)
        fit = solve_weighted_lasso(b, y, w, l, lam, cfg)
        _, best = enumerate_lasso(b, y, w, lam * l / n)
        worst_gap = max(worst_gap, abs(fit.objective_value - best))
    worst_kkt = 0.0
    for _ in range(100):
        b = rng.normal(size=(200, 50))
        y = b[:, :5] @ rng.normal(size=5) + rng.normal(size=200)
        w = rng.uniform(0.1, 1.0, 200)
        l = rng.uniform(0.5, 1.5, 50)
        lam = rng.uniform(1.0, 40.0)
        fit = solve_weighted_lasso(b, y, w, l, lam, cfg)
        worst_kkt = max(worst_kkt, kkt_violation(b, y, w, fit.coefficients, lam * l / 200))
    criterion(5, worst_gap <= 1e-6 and worst_kkt <= 1e-5,
              f"max objective gap {worst_gap:.1e} (<= 1e-6), max KKT violation {worst_kkt:.1e} (<= 1e-5)")


def test_criterion_6_rearrangement_oracle(criterion):
    rng = np.random.default_rng(6)
    mismatches = 0
    for _ in range(100):
        vals = np.cumsum(rng.normal(size=50)) * rng.uniform(0.1, 2) + rng.normal(size=50)
        if not np.array_equal(rearrange(vals).values, rearrange_by_quadrature(vals)):
            mismatches += 1
    criterion(6, mismatches == 0, f"{mismatches}/100 curves differ from the quadrature definition")


def test_criterion_7_bootstrap_identity(criterion):
    d = simulate_dgp(DgpConfig(n=250, p=100, seed=77))
    cfg = TuningConfig(t_grid_size=9, u_grid_size=30)
    grids = default_grids(d, cfg)
    est = estimate_curves(d, grids, cfg)
    point = est.statistics()
    ones = bootstrap_curves(d, est.nuisances, grids, cfg, MultiplierSpec("ones", 20), est.h)
    exact = all(np.array_equal(rep, point[k]) for k in point for rep in ones.draws[k])
    band = modified_percentile_ci(
        bootstrap_curves(d, est.nuisances, grids, cfg, MultiplierSpec("exponential", 200, 1), est.h),
        point)
    asym = max(float(np.max(np.abs((band.upper[k] - point[k]) - (point[k] - band.lower[k]))))
               for k in point)
    criterion(7, exact and asym <= 1e-12,
              f"unit-multiplier replicates bit-exact: {exact}; max interval asymmetry {asym:.1e}")


def _dr_check(d, s, h, t, u, truth_mu, truth_mu_se, density_scale=1.0, shift=0.0):
    f = true_density(t, s) * density_scale
    nu = true_mean_regression(t, s) + shift
    phi = true_cdf_regression(t, u, s)[:, None] + shift
    inp = DRMomentInputs(t, h, EPANECHNIKOV, f, nu, phi, np.array([u]))
    kern = EPANECHNIKOV((d.t - t) / h)
    pi_mu = (d.y - nu) * kern / (f * h) + nu
    pi_a = ((d.y <= u) - phi[:, 0]) * kern / (f * h) + phi[:, 0]
    se_mu = np.hypot(pi_mu.std(ddof=1) / np.sqrt(d.n), truth_mu_se)
    se_a = np.hypot(pi_a.std(ddof=1) / np.sqrt(d.n), np.sqrt(0.25 / 1_000_000))
    z_mu = abs(dr_mean(t, inp, d) - truth_mu) / se_mu
    z_a = abs(dr_cdf(t, u, inp, d) - 0.5) / se_a
    return z_mu, z_a


def test_criterion_8_doubly_robust_oracle(criterion):
    truth = OracleTruth.load(FIXTURE)
    j = int(np.argmin(np.abs(truth.t_grid - 0.5)))
    t = float(truth.t_grid[j])
    u_med = float(truth.q_true[list(truth.taus).index(0.5), j])
    d = simulate_dgp(DgpConfig(n=10_000, p=100, seed=808))
    s = index_s(d.x)
    h = select_bandwidth(d.t, TAUS, TuningConfig())
    cases = {"true": {}, "f x1.5": {"density_scale": 1.5}, "regression +0.2": {"shift": 0.2}}
    z = {name: _dr_check(d, s, h, t, u_med, truth.mu_true[j], truth.mu_se[j], **kw)
         for name, kw in cases.items()}
    worst = max(max(v) for v in z.values())
    criterion(8, worst <= 3.0,
              "; ".join(f"{k}: z_mu={v[0]:.2f} z_alpha={v[1]:.2f}" for k, v in z.items())
              + " (need <= 3)")


def test_criterion_9_dgp_integrity(criterion):
    rng = np.random.default_rng(909)
    p = 100
    x, z = draw_covariates(100_000, p, rng, copula_cholesky(p, 5.0))
    s = index_s(x)
    v = rng.uniform(size=100_000)
    t = solve_treatment(v, s)
    resid = float(np.max(np.abs(treatment_map(t, s) - v)))
    # family-wise level 0.001 across the p marginals (Bonferroni), and the
    # p-values themselves should look uniform
    pvals = np.array([stats.kstest(x[:, k], "uniform").pvalue for k in range(p)])
    ks_p = float(pvals.min())
    second = stats.kstest(pvals, "uniform").pvalue
    corr = np.array([np.corrcoef(z[:, k], z[:, k + 1])[0, 1] for k in range(p - 1)])
    dev = float(np.max(np.abs(corr - 0.2)))
    criterion(9, resid <= 1e-10 and ks_p > 0.001 / p and second > 0.001 and dev <= 0.01,
              f"max residual {resid:.1e}; min KS p-value {ks_p:.4f} over {p} marginals "
              f"(family-wise 0.001), p-value uniformity {second:.3f}; "
              f"max |adjacent corr - 0.2| {dev:.4f}")
