"""Kernel-localized L1-penalized first-stage estimators.

Three nuisance fits are made at each treatment level t:

* penalized local least squares for nu_t(x) = E[Y | X=x, T=t],
* penalized local logistic MLE for phi_{t,u}(x) = P(Y <= u | X=x, T=t),
* penalized conditional density regression for f_t(x) = f_{T|X}(t|x),

each with data-driven penalty loadings refined over K iterations, and an
unpenalized post-Lasso refit on the selected support.

All solvers minimize the generic problem

    (1/2n) sum_i w_i (y_i - b_i'g)^2 + (lam/n) sum_j l_j |g_j|

(or its logistic analogue), where n counts every observation, including those
with zero kernel weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .data import Dataset
from .kernels import KernelSpec, PenaltyLevel, TuningConfig, kernel_weights, penalty_lambda

KINDS = ("ls", "logistic", "density")


@dataclass
class PenaltyLoadings:
    diag: np.ndarray
    context: str = "ls"
    iteration: int = 0
    zero_replaced: bool = False

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)


@dataclass
class LassoFit:
    coefficients: np.ndarray
    lam: float
    loadings: Optional[PenaltyLoadings]
    objective_value: float
    sweeps: int
    converged: bool
    kind: str = "ls"
    post: bool = False
    flags: tuple = ()
    history: Optional[np.ndarray] = None

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)

    def linear_predictor(self, design: np.ndarray) -> np.ndarray:
        return design @ self.coefficients

    def predict(self, design: np.ndarray) -> np.ndarray:
        eta = self.linear_predictor(design)
        return logistic_cdf(eta) if self.kind == "logistic" else eta


def logistic_cdf(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def _as_loadings(loadings, p: int) -> PenaltyLoadings:
    if loadings is None:
        return PenaltyLoadings(np.ones(p))
    if not isinstance(loadings, PenaltyLoadings):
        loadings = PenaltyLoadings(np.asarray(loadings, dtype=float))
    if loadings.diag.shape != (p,):
        raise ValueError(f"loadings have length {loadings.diag.size}, design has {p} columns")
    return loadings


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@nb.njit(cache=True)
def _cd_lasso(bt, y, w, pen, beta, tol, max_sweeps, n_norm, hist):
    """Cyclic coordinate descent; bt is the transposed design (p x m)."""
    p, m = bt.shape
    r = y.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(m):
                r[i] -= beta[j] * bt[j, i]
    a = np.zeros(p)
    amax = 0.0
    for j in range(p):
        s = 0.0
        for i in range(m):
            s += w[i] * bt[j, i] * bt[j, i]
        a[j] = s / n_norm
        if a[j] > amax:
            amax = a[j]
    if hist.size > 0:
        hist[0] = _ls_objective(r, w, pen, beta, n_norm)
    sweeps = 0
    converged = False
    for s in range(max_sweeps):
        maxd = 0.0
        for j in range(p):
            if a[j] <= 1e-12 * amax:
                if beta[j] != 0.0:
                    for i in range(m):
                        r[i] += beta[j] * bt[j, i]
                    beta[j] = 0.0
                continue
            g = 0.0
            for i in range(m):
                g += w[i] * bt[j, i] * r[i]
            z = g / n_norm + a[j] * beta[j]
            if z > pen[j]:
                new = (z - pen[j]) / a[j]
            elif z < -pen[j]:
                new = (z + pen[j]) / a[j]
            else:
                new = 0.0
            d = new - beta[j]
            if d != 0.0:
                for i in range(m):
                    r[i] -= d * bt[j, i]
                beta[j] = new
                if abs(d) > maxd:
                    maxd = abs(d)
        sweeps = s + 1
        if hist.size > sweeps:
            hist[sweeps] = _ls_objective(r, w, pen, beta, n_norm)
        if maxd < tol:
            converged = True
            break
    return sweeps, converged


@nb.njit(cache=True)
def _ls_objective(r, w, pen, beta, n_norm):
    s = 0.0
    for i in range(r.size):
        s += w[i] * r[i] * r[i]
    pe = 0.0
    for j in range(beta.size):
        pe += pen[j] * abs(beta[j])
    return 0.5 * s / n_norm + pe


@nb.njit(cache=True)
def _logistic_mm(bt, y, w, pen, beta, tol, max_iter, n_norm):
    """Majorize-minimize with the global curvature bound 1/4 on the logistic loss."""
    p, m = bt.shape
    wq = 0.25 * w
    z = np.empty(m)
    old = np.empty(p)
    nohist = np.empty(0)
    total = 0
    for it in range(max_iter):
        for i in range(m):
            eta = 0.0
            for j in range(p):
                if beta[j] != 0.0:
                    eta += bt[j, i] * beta[j]
            prob = 1.0 / (1.0 + np.exp(-eta))
            z[i] = eta + 4.0 * (y[i] - prob)
        old[:] = beta
        sw, conv = _cd_lasso(bt, z, wq, pen, beta, 0.1 * tol, max_iter, n_norm, nohist)
        total += sw
        maxd = 0.0
        for j in range(p):
            d = abs(beta[j] - old[j])
            if d > maxd:
                maxd = d
        if maxd < tol:
            return it + 1, total, True
    return max_iter, total, False


# --------------------------------------------------------------------------
# solvers
# --------------------------------------------------------------------------

def ls_objective(design, response, obs_weights, coef, pen) -> float:
    r = response - design @ coef
    n = design.shape[0]
    return float(0.5 * np.sum(obs_weights * r * r) / n + np.sum(pen * np.abs(coef)))


def logistic_objective(design, response, obs_weights, coef, pen) -> float:
    eta = design @ coef
    loss = np.logaddexp(0.0, eta) - response * eta
    n = design.shape[0]
    return float(np.sum(obs_weights * loss) / n + np.sum(pen * np.abs(coef)))


def _window(design, obs_weights):
    w = np.asarray(obs_weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("observation weights must be nonnegative")
    keep = w > 0
    if not keep.any():
        raise ValueError("empty local window")
    return keep, np.ascontiguousarray(design[keep].T), np.ascontiguousarray(w[keep])


def solve_weighted_lasso(design, response, obs_weights, loadings, lam: float,
                         config: Optional[TuningConfig] = None, init=None,
                         record_history: bool = False) -> LassoFit:
    """Weighted L1-penalized least squares by cyclic coordinate descent."""
    config = config or TuningConfig()
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    n, p = design.shape
    loadings = _as_loadings(loadings, p)
    keep, bt, w = _window(design, obs_weights)
    pen = lam * loadings.diag / n
    beta = np.zeros(p) if init is None else np.array(init, dtype=float)
    hist = np.full(config.lasso_max_sweeps + 1, np.nan) if record_history else np.empty(0)
    sweeps, converged = _cd_lasso(bt, np.ascontiguousarray(response[keep]), w, pen, beta,
                                  config.lasso_tol, config.lasso_max_sweeps, float(n), hist)
    return LassoFit(
        coefficients=beta,
        lam=lam,
        loadings=loadings,
        objective_value=ls_objective(design, response, np.asarray(obs_weights, float), beta, pen),
        sweeps=int(sweeps),
        converged=bool(converged),
        kind="ls",
        history=hist[: sweeps + 1] if record_history else None,
    )


def solve_weighted_logistic_lasso(design, response, obs_weights, loadings, lam: float,
                                  config: Optional[TuningConfig] = None, init=None) -> LassoFit:
    """Weighted L1-penalized logistic regression via quadratic majorization."""
    config = config or TuningConfig()
    design = np.asarray(design, dtype=float)
    response = np.asarray(response, dtype=float)
    if np.any((response != 0) & (response != 1)):
        raise ValueError("logistic response must be 0/1")
    n, p = design.shape
    loadings = _as_loadings(loadings, p)
    keep, bt, w = _window(design, obs_weights)
    pen = lam * loadings.diag / n
    y = np.ascontiguousarray(response[keep])
    if np.all(y == y[0]):
        beta = np.zeros(p)
        return LassoFit(beta, lam, loadings,
                        logistic_objective(design, response, np.asarray(obs_weights, float),
                                           beta, pen),
                        0, True, kind="logistic", flags=("degenerate window",))
    beta = np.zeros(p) if init is None else np.array(init, dtype=float)
    iters, sweeps, converged = _logistic_mm(bt, y, w, pen, beta, config.lasso_tol,
                                            config.lasso_max_sweeps, float(n))
    return LassoFit(
        coefficients=beta,
        lam=lam,
        loadings=loadings,
        objective_value=logistic_objective(design, response, np.asarray(obs_weights, float),
                                           beta, pen),
        sweeps=int(sweeps),
        converged=bool(converged),
        kind="logistic",
    )


# --------------------------------------------------------------------------
# loadings (iterative) and the per-kind problem setup
# --------------------------------------------------------------------------

@dataclass
class _Problem:
    """Response, weights and penalty level for one first-stage estimator."""
    kind: str
    design: np.ndarray
    response: np.ndarray
    obs_weights: np.ndarray
    kern: np.ndarray
    lam: float
    h: float
    # columns the penalty loadings are measured on (defaults to the design)
    loading_design: Optional[np.ndarray] = None


def _problem(kind, data: Dataset, t, u, h, config: TuningConfig, design=None,
             kernel: Optional[KernelSpec] = None, penalized: bool = True,
             loading_design=None) -> _Problem:
    if kind not in KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}")
    kernel = kernel or config.kernel_spec
    if design is None:
        design = data.basis()
        # loadings use the raw controls: centering is a solver convenience and
        # must not shrink the per-coordinate penalty scale
        loading_design = _raw_basis(data)
    raw = design if loading_design is None else loading_design
    kern = kernel_weights(kernel, data.t, t, h)
    if penalized:
        pl = penalty_lambda(data.n, design.shape[1], h, config.ell_n_constant)
    else:
        pl = PenaltyLevel(float("nan"), float("nan"), float("nan"))
    if kind == "ls":
        return _Problem(kind, design, data.y, kern, kern, pl.lam, h, raw)
    if kind == "logistic":
        if u is None:
            raise ValueError("logistic fit needs an outcome threshold u")
        return _Problem(kind, design, (data.y <= u).astype(float), kern, kern, pl.lam, h, raw)
    # Squared loss carries the same 1/2 as the local LS problem, so the penalty
    # (lam/(nh)) ||Psi beta||_1 enters the generic objective at level lam / h.
    return _Problem(kind, design, kern / h, np.ones(data.n), kern, pl.lam_density / h, h, raw)


def _solve(prob: _Problem, loadings, config, init=None) -> LassoFit:
    if prob.kind == "logistic":
        fit = solve_weighted_logistic_lasso(prob.design, prob.response, prob.obs_weights,
                                            loadings, prob.lam, config, init)
    else:
        fit = solve_weighted_lasso(prob.design, prob.response, prob.obs_weights,
                                   loadings, prob.lam, config, init)
        fit.kind = prob.kind
    return fit


def _loading_vector(prob: _Problem, residual: np.ndarray) -> np.ndarray:
    b = prob.design if prob.loading_design is None else prob.loading_design
    if prob.kind == "density":
        # h^{1/2} || (h^{-1}K - f) b_j ||_{Pn,2}
        return np.sqrt(prob.h * np.mean((residual[:, None] * b) ** 2, axis=0))
    # || e b_j K h^{-1/2} ||_{Pn,2}
    return np.sqrt(np.mean((residual * prob.kern)[:, None] ** 2 * b * b, axis=0) / prob.h)


def _fix_zero_loadings(vec: np.ndarray, context: str, it: int) -> PenaltyLoadings:
    bad = ~(vec > 0) | ~np.isfinite(vec)
    if not bad.any():
        return PenaltyLoadings(vec, context, it)
    good = vec[~bad]
    fill = good.min() if good.size else 1.0
    vec = np.where(bad, fill, vec)
    return PenaltyLoadings(vec, context, it, zero_replaced=True)


def _iterate_loadings(prob: _Problem, K: int, config: TuningConfig):
    """Run the loading iteration; returns the final loadings and the last interim fit."""
    loadings = _fix_zero_loadings(_loading_vector(prob, prob.response), prob.kind, 0)
    fit = None
    for k in range(1, K + 1):
        fit = _solve(prob, loadings, config, None if fit is None else fit.coefficients)
        residual = prob.response - fit.predict(prob.design)
        loadings = _fix_zero_loadings(_loading_vector(prob, residual), prob.kind, k)
    return loadings, fit


def compute_loadings(kind: str, data: Dataset, t: float, u: Optional[float], h: float,
                     K: int, config: Optional[TuningConfig] = None,
                     kernel: Optional[KernelSpec] = None) -> PenaltyLoadings:
    """Penalty loadings after K refinement steps (K=0 gives the pilot loadings)."""
    if K < 0:
        raise ValueError("K must be >= 0")
    config = config or TuningConfig()
    prob = _problem(kind, data, t, u, h, config, kernel=kernel, penalized=K > 0)
    return _iterate_loadings(prob, K, config)[0]


# --------------------------------------------------------------------------
# post-Lasso
# --------------------------------------------------------------------------

def _weighted_ls(b, y, w):
    gram = (b * w[:, None]).T @ b
    rhs = (b * w[:, None]).T @ y
    try:
        if np.linalg.cond(gram) > 1e12:
            raise np.linalg.LinAlgError
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.solve(gram + 1e-10 * np.eye(gram.shape[0]), rhs)


def _weighted_logistic_newton(b, y, w, start, tol=1e-10, max_iter=100):
    theta = np.array(start, dtype=float)
    zero = np.zeros(theta.size)

    def obj(th):
        return logistic_objective(b, y, w, th, zero)

    cur = obj(theta)
    converged = False
    for _ in range(max_iter):
        prob = logistic_cdf(b @ theta)
        grad = b.T @ (w * (prob - y))
        hess = (b * (w * prob * (1 - prob))[:, None]).T @ b + 1e-10 * np.eye(theta.size)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        s = 1.0
        for _ in range(40):
            cand = theta - s * step
            val = obj(cand)
            if val <= cur:
                break
            s *= 0.5
        else:
            break
        theta, cur = cand, val
        if np.max(np.abs(s * step)) < tol:
            converged = True
            break
    return theta, converged


def post_lasso_refit(fit: LassoFit, kind: str, data: Dataset, t: float, u: Optional[float],
                     h: float, config: Optional[TuningConfig] = None,
                     kernel: Optional[KernelSpec] = None, design=None) -> LassoFit:
    """Unpenalized kernel-weighted refit restricted to the Lasso support."""
    config = config or TuningConfig()
    prob = _problem(kind, data, t, u, h, config, design=design, kernel=kernel, penalized=False)
    p = prob.design.shape[1]
    coef = np.zeros(p)
    support = fit.support
    converged = True
    flags = tuple(fit.flags)
    if support.size:
        keep = prob.obs_weights > 0
        b = prob.design[keep][:, support]
        y = prob.response[keep]
        w = prob.obs_weights[keep]
        if kind == "logistic":
            coef[support], converged = _weighted_logistic_newton(
                b, y, w, fit.coefficients[support], tol=config.lasso_tol)
        else:
            coef[support] = _weighted_ls(b, y, w)
    else:
        flags = flags + ("empty support",)
    zero = np.zeros(p)
    objective = (logistic_objective if kind == "logistic" else ls_objective)(
        prob.design, prob.response, prob.obs_weights, coef, zero)
    return LassoFit(coef, 0.0, fit.loadings, objective, 0, converged, kind=kind,
                    post=True, flags=flags)


# --------------------------------------------------------------------------
# all nuisances at one treatment level
# --------------------------------------------------------------------------

def floor_density(pred: np.ndarray, density_floor: float) -> np.ndarray:
    positive = pred[pred > 0]
    base = max(float(np.median(positive)), 1e-3) if positive.size else 1e-3
    return np.maximum(pred, density_floor * base)


@dataclass
class NuisanceSet:
    t: float
    u_grid: np.ndarray
    ls_fit: LassoFit
    ls_post: LassoFit
    density_fit: LassoFit
    density_post: LassoFit
    logistic_fits: dict
    nu_hat: np.ndarray
    nu_post: np.ndarray
    density_values: np.ndarray
    density_values_post: np.ndarray
    phi_hat: np.ndarray = field(repr=False)
    phi_post: np.ndarray = field(repr=False)

    def arrays(self, flavor: str = "post-lasso"):
        """(nu(X_i), f(X_i), phi(X_i, u)) for the requested estimator flavor."""
        if flavor == "lasso":
            return self.nu_hat, self.density_values, self.phi_hat
        if flavor == "post-lasso":
            return self.nu_post, self.density_values_post, self.phi_post
        raise ValueError(f"unknown flavor {flavor!r}")

    def support_sizes(self, post: bool = False, exclude_intercept: bool = True) -> dict:
        """Selected support sizes per estimator (logistic as a per-u array)."""
        def size(f):
            s = f.support
            return int(np.sum(s > 0)) if exclude_intercept else int(s.size)
        return {
            "ls": size(self.ls_fit),
            "density": size(self.density_fit),
            "logistic": np.array([size(self.logistic_fits[u][0]) for u in self.u_grid]),
        }


def _raw_basis(data: Dataset) -> np.ndarray:
    return np.hstack([np.ones((data.n, 1)), data.x])


def _fit_one(kind, data, t, u, h, config, design, kernel, raw):
    prob = _problem(kind, data, t, u, h, config, design=design, kernel=kernel,
                    loading_design=raw)
    loadings, interim = _iterate_loadings(prob, config.loading_iterations, config)
    fit = _solve(prob, loadings, config, None if interim is None else interim.coefficients)
    post = post_lasso_refit(fit, kind, data, t, u, h, config, kernel, design=design)
    return fit, post


def fit_nuisances_at(t: float, data: Dataset, u_grid, h: float,
                     config: Optional[TuningConfig] = None,
                     kernel: Optional[KernelSpec] = None) -> NuisanceSet:
    config = config or TuningConfig()
    kernel = kernel or config.kernel_spec
    u_grid = np.asarray(u_grid, dtype=float)
    if np.any(np.diff(u_grid) < 0):
        raise ValueError("u_grid must be sorted ascending")
    design, raw = data.basis(), _raw_basis(data)
    try:
        ls_fit, ls_post = _fit_one("ls", data, t, None, h, config, design, kernel, raw)
    except ValueError as exc:
        if "empty local window" in str(exc):
            raise ValueError(f"empty local window at t={t!r}") from None
        raise
    d_fit, d_post = _fit_one("density", data, t, None, h, config, design, kernel, raw)
    logistic = {}
    phi_hat = np.empty((data.n, u_grid.size))
    phi_post = np.empty((data.n, u_grid.size))
    for k, u in enumerate(u_grid):
        fit, post = _fit_one("logistic", data, t, float(u), h, config, design, kernel, raw)
        logistic[float(u)] = (fit, post)
        phi_hat[:, k] = fit.predict(design)
        phi_post[:, k] = post.predict(design)
    return NuisanceSet(
        t=float(t),
        u_grid=u_grid,
        ls_fit=ls_fit,
        ls_post=ls_post,
        density_fit=d_fit,
        density_post=d_post,
        logistic_fits=logistic,
        nu_hat=ls_fit.predict(design),
        nu_post=ls_post.predict(design),
        density_values=floor_density(d_fit.predict(design), config.density_floor),
        density_values_post=floor_density(d_post.predict(design), config.density_floor),
        phi_hat=phi_hat,
        phi_post=phi_post,
    )
