"""Independent reference computations used by the tests (no package solver code)."""

import itertools

import numpy as np


def lasso_objective(b, y, w, coef, pen):
    r = y - b @ coef
    return 0.5 * np.sum(w * r * r) / b.shape[0] + np.sum(pen * np.abs(coef))


def enumerate_lasso(b, y, w, pen):
    """Minimize the weighted lasso by trying every sign pattern in {-1, 0, 1}^p.

    For a fixed pattern s with support S the objective is a quadratic whose
    stationary point solves G_SS g = c_S - pen_S * s_S.
    """
    n, p = b.shape
    gram = (b * w[:, None]).T @ b / n
    c = (b * w[:, None]).T @ y / n
    best, best_val = np.zeros(p), lasso_objective(b, y, w, np.zeros(p), pen)
    for signs in itertools.product((-1, 0, 1), repeat=p):
        s = np.array(signs, dtype=float)
        sup = np.flatnonzero(s)
        if not sup.size:
            continue
        g = np.zeros(p)
        g[sup] = np.linalg.lstsq(gram[np.ix_(sup, sup)], c[sup] - pen[sup] * s[sup], rcond=None)[0]
        val = lasso_objective(b, y, w, g, pen)
        if val < best_val:
            best, best_val = g, val
    return best, best_val


def kkt_violation(b, y, w, coef, pen, kind="ls"):
    """Largest violation of the lasso subgradient conditions."""
    n = b.shape[0]
    eta = b @ coef
    if kind == "ls":
        grad = -(b * w[:, None]).T @ (y - eta) / n
    else:
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = (b * w[:, None]).T @ (prob - y) / n
    viol = 0.0
    for j in range(b.shape[1]):
        if coef[j] != 0:
            viol = max(viol, abs(grad[j] + pen[j] * np.sign(coef[j])))
        else:
            viol = max(viol, max(abs(grad[j]) - pen[j], 0.0))
    return viol


def logistic_gradient_descent(b, y, w, iters=200_000, step=None):
    """Plain full-gradient descent on the weighted logistic loss."""
    n, p = b.shape
    lip = 0.25 * np.linalg.eigvalsh((b * w[:, None]).T @ b / n).max()
    step = step or 1.0 / lip
    g = np.zeros(p)
    for _ in range(iters):
        prob = 1.0 / (1.0 + np.exp(-(b @ g)))
        grad = (b * w[:, None]).T @ (prob - y) / n
        g -= step * grad
        if np.max(np.abs(grad)) < 1e-14:
            break
    return g


def rearrange_by_quadrature(values, m=200_000):
    """Rearrangement from its integral definition.

    Q is the step function taking ``values[k]`` on the k-th cell of a uniform
    partition of [0, 1]. F(y) = int_0^1 1{Q(v) <= y} dv is evaluated by a
    midpoint rule, and the rearranged value at cell k is
    inf{y : F(y) >= v_k} at the cell midpoint v_k.
    """
    values = np.asarray(values, dtype=float)
    k = values.size
    v = (np.arange(m) + 0.5) / m
    q_at_v = values[np.minimum((v * k).astype(int), k - 1)]
    candidates = np.unique(values)
    F = np.array([np.mean(q_at_v <= y) for y in candidates])
    mids = (np.arange(k) + 0.5) / k
    out = np.empty(k)
    for i, vk in enumerate(mids):
        out[i] = candidates[np.argmax(F >= vk - 1e-12)]
    return out
