"""Sparse autoregressive estimation.

Simulation of stable AR(p) processes plus a family of estimators for their
parameters: Yule-Walker, least squares, l1-regularized least squares
(coordinate descent), l1-penalized Yule-Walker variants (primal-dual), and
greedy selection via a generalized orthogonal matching pursuit that is shared
with the point-process module.

Conventions:
  * theta[j-1] multiplies the lag-j sample, i.e. x_k = sum_j theta_j x_{k-j} + w_k.
  * Stability is enforced through the l1 margin eta = 1 - ||theta||_1 > 0.
  * The power spectral density folds in the 1/(2*pi) normalization, so a
    white-noise process has S(w) = sigma_w^2 / (2*pi).
  * Sample autocovariances are biased (divide by the full sample count).
"""

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import hankel, toeplitz
from scipy.signal import lfilter

from .core import (
    InvalidArgumentError,
    NumericalFailureError,
    RngSpec,
    SolverTrace,
    TimeSeries,
    support,
)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ArModel:
    """AR(p) parameters with innovation variance and stability margin.

    Requires ||theta||_1 < 1; the margin ``eta = 1 - ||theta||_1`` controls
    mixing speed and the eigenvalue spread of the process covariance.
    """

    theta: np.ndarray
    sigma_w2: float = 1.0

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if th.ndim != 1:
            raise InvalidArgumentError("theta must be a vector")
        if self.sigma_w2 <= 0:
            raise InvalidArgumentError("sigma_w2 must be positive")
        if np.sum(np.abs(th)) >= 1.0:
            raise InvalidArgumentError(
                "unstable model: need ||theta||_1 < 1 (sufficient stability)"
            )
        object.__setattr__(self, "theta", th)

    @property
    def p(self) -> int:
        return self.theta.size

    @property
    def eta(self) -> float:
        return 1.0 - float(np.sum(np.abs(self.theta)))


def simulate_ar(
    model: ArModel, n: int, rng: RngSpec, innovation: str = "gaussian"
) -> TimeSeries:
    """Simulate x_{-p+1}, ..., x_n from a stable AR(p) model.

    Gaussian white noise (or uniform sub-Gaussian noise of the same variance)
    is passed through the IIR filter 1/(1 - sum_j theta_j z^-j).  A burn-in of
    at least 10/eta samples is discarded so the recorded stretch is close to
    stationarity.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    p = model.p
    burn = int(math.ceil(10.0 / model.eta)) + p
    total = burn + n + p
    g = rng.generator()
    sd = math.sqrt(model.sigma_w2)
    if innovation == "gaussian":
        w = g.normal(0.0, sd, size=total)
    elif innovation == "uniform":
        w = g.uniform(-math.sqrt(3.0) * sd, math.sqrt(3.0) * sd, size=total)
    else:
        raise InvalidArgumentError(f"unknown innovation kind {innovation!r}")
    x = lfilter([1.0], np.concatenate(([1.0], -model.theta)), w)
    return TimeSeries(x[burn:], start_index=-p + 1)


def psd(model: ArModel, omega) -> np.ndarray:
    """Power spectral density S(w) = sigma_w^2 / (2*pi |1 - sum theta_l e^{-jlw}|^2)."""
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(np.abs(om) > np.pi + 1e-12):
        raise InvalidArgumentError("omega must lie in [-pi, pi]")
    lags = np.arange(1, model.p + 1)
    tf = 1.0 - np.exp(-1j * np.outer(om, lags)) @ model.theta
    out = model.sigma_w2 / (2.0 * np.pi * np.abs(tf) ** 2)
    return out if np.ndim(omega) else float(out[0])


def spectral_spread(model: ArModel, grid: int = 4096) -> float:
    """rho = sup S / inf S, evaluated on a dense frequency grid."""
    om = np.linspace(-np.pi, np.pi, grid)
    s = psd(model, om)
    return float(np.max(s) / np.min(s))


def covariance_eigenvalue_bounds(model: ArModel) -> tuple:
    """Interval [sigma_w^2/(8 pi), sigma_w^2/(2 pi eta^2)] containing every
    eigenvalue of the per-radian-normalized process covariance R/(2 pi).

    The normalization matches the folded-in PSD convention used by ``psd``:
    Toeplitz covariance eigenvalues of any order squeeze into
    [inf_w S(w), sup_w S(w)], and those extremes are bracketed by the interval
    above whenever ||theta||_1 <= 1 - eta.
    """
    lo = model.sigma_w2 / (8.0 * np.pi)
    hi = model.sigma_w2 / (2.0 * np.pi * model.eta**2)
    return lo, hi


def normalized_covariance_eigenvalues(model: ArModel, size: int) -> np.ndarray:
    """Eigenvalues of the exact covariance in the per-radian normalization
    R/(2 pi), comparable against ``covariance_eigenvalue_bounds``."""
    return np.linalg.eigvalsh(exact_covariance(model, size)) / (2.0 * np.pi)


def omp_iteration_budget(rho: float, s: int) -> int:
    """Greedy iteration count 4*rho*s*log(20*rho*s) sufficient for stable
    recovery at spectral spread rho and sparsity s (documentation helper)."""
    if rho < 1 or s < 1:
        raise InvalidArgumentError("need rho >= 1 and s >= 1")
    return int(math.ceil(4.0 * rho * s * math.log(20.0 * rho * s)))


def exact_autocovariance(model: ArModel, nlags: int) -> np.ndarray:
    """Exact autocovariances r_0..r_nlags of the stationary AR(p) process.

    Solves the Yule-Walker system for r_0..r_p, then extends by the AR
    recursion r_k = sum_j theta_j r_{k-j}.
    """
    th, p, s2 = model.theta, model.p, model.sigma_w2
    # Unknowns r_0..r_p; equations: r_0 = sum_j th_j r_j + s2 and, for k=1..p,
    # r_k = sum_j th_j r_{|k-j|}.
    m = p + 1
    a = np.zeros((m, m))
    b = np.zeros(m)
    a[0, 0] = 1.0
    a[0, 1 : p + 1] -= th
    b[0] = s2
    for k in range(1, p + 1):
        a[k, k] += 1.0
        for j in range(1, p + 1):
            a[k, abs(k - j)] -= th[j - 1]
    r = np.linalg.solve(a, b)
    out = np.zeros(nlags + 1)
    out[: min(m, nlags + 1)] = r[: nlags + 1]
    for k in range(p + 1, nlags + 1):
        out[k] = th @ out[k - p : k][::-1]
    return out


def exact_covariance(model: ArModel, size: int) -> np.ndarray:
    """Exact order-``size`` Toeplitz covariance of the process."""
    r = exact_autocovariance(model, size - 1)
    return toeplitz(r)


def reframe(x: TimeSeries, p: int) -> TimeSeries:
    """Re-label a series so its first p samples become the model history.

    Fitting an order-p model to a plain recording treats samples 1..p as
    x_{-p+1..0} and the rest as the n modeled targets.
    """
    if len(x) <= p:
        raise InvalidArgumentError("need more than p samples")
    return TimeSeries(x.values, start_index=-p + 1)


def covariate_matrix(x: TimeSeries, p: int) -> tuple:
    """Toeplitz covariates X (n x p) and targets y (length n) in reversed time.

    Row i holds the p-history preceding its target: X[i, j] = x_{n-i-j-1+1}
    with targets y[i] = x_{n-i} (1-based times), so y - X @ theta stacks the
    innovations of the model x_k = theta' (x_{k-1},...,x_{k-p}) + w_k.
    """
    if x.start_index > -p + 1:
        raise InvalidArgumentError(f"series must start at index <= {-p + 1}")
    n = x.end_index
    if n < 1:
        raise InvalidArgumentError("series must extend to index >= 1")
    u = x.values[::-1]  # u[i] = x_{n-i}
    X = hankel(u[1 : n + 1], u[n : n + p])
    y = u[:n].copy()
    return X, y


def sample_covariance(x: TimeSeries, p: int) -> np.ndarray:
    """R_hat = (1/n) X'X from the covariate matrix, explicitly symmetrized."""
    X, _ = covariate_matrix(x, p)
    n = X.shape[0]
    if n < p:
        raise InvalidArgumentError("need n >= p samples")
    r = (X.T @ X) / n
    return 0.5 * (r + r.T)


def sample_autocovariance(x: TimeSeries, nlags: int) -> np.ndarray:
    """Biased sample autocovariances r_0..r_nlags (divide by sample count)."""
    v = x.values
    n = v.size
    if nlags >= n:
        raise InvalidArgumentError("nlags must be < number of samples")
    out = np.empty(nlags + 1)
    for k in range(nlags + 1):
        out[k] = np.dot(v[: n - k], v[k:]) / n
    return out


def yule_walker(x: TimeSeries, p: int) -> tuple:
    """Solve the Yule-Walker equations with biased sample autocovariances.

    Returns ``(theta_hat, sigma_hat2)``.  The biased autocovariance sequence
    makes the Toeplitz system positive semidefinite, so the fitted model is
    stable whenever the system is solvable.
    """
    if len(x) < p + 1:
        raise InvalidArgumentError("need at least p+1 samples")
    r = sample_autocovariance(x, p)
    R = toeplitz(r[:p])
    cond = np.linalg.cond(R)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericalFailureError(
            f"sample covariance is numerically singular (cond ~ {cond:.3g})"
        )
    theta = np.linalg.solve(R, r[1 : p + 1])
    sigma2 = float(r[0] - theta @ r[1 : p + 1])
    return theta, sigma2


def default_gamma(p: int, n: int, d2: float = 1.0) -> float:
    """Regularization heuristic gamma_n = d2 * sqrt(log(p)/n)."""
    return d2 * math.sqrt(math.log(p) / n)


def _lasso_objective(X, y, theta, gamma, n):
    r = y - X @ theta
    return float(r @ r) / n + gamma * float(np.sum(np.abs(theta)))


def _lasso_dual_gap(X, y, theta, gamma, n):
    r = y - X @ theta
    primal = float(r @ r) / n + gamma * float(np.sum(np.abs(theta)))
    grad = (2.0 / n) * (X.T @ r)
    gmax = float(np.max(np.abs(grad)))
    scale = 1.0 if gmax <= gamma or gmax == 0.0 else gamma / gmax
    nu = scale * (2.0 / n) * r
    dual = float(nu @ y) - (n / 4.0) * float(nu @ nu)
    return primal, primal - dual


def _cd_gram(G, c, gamma, theta, idx):
    """One cyclic coordinate-descent sweep over ``idx`` on the Gram form.

    Minimizes 0.5 theta'G theta - c'theta + gamma||theta||_1 in place and
    returns the largest coordinate move.
    """
    Gt = theta @ G  # refreshed per sweep to avoid incremental drift
    maxd = 0.0
    for j in idx:
        gjj = G[j, j]
        if gjj == 0.0:
            continue
        rho = c[j] - Gt[j] + gjj * theta[j]
        new = math.copysign(max(abs(rho) - gamma, 0.0), rho) / gjj
        d = new - theta[j]
        if d != 0.0:
            Gt += G[:, j] * d
            theta[j] = new
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd


def _cd_solve(G, c, gamma, theta, tol, max_sweeps):
    """Full-sweep + active-set coordinate descent on the Gram form.

    A full sweep proposes the active set; cheap restricted sweeps polish it;
    convergence is a full sweep whose largest coordinate move is <= tol.
    """
    allidx = np.arange(c.size)
    sweeps = 0
    while sweeps < max_sweeps:
        maxd = _cd_gram(G, c, gamma, theta, allidx)
        sweeps += 1
        if maxd <= tol:
            return sweeps, True
        active = np.flatnonzero(theta)
        while active.size and sweeps < max_sweeps:
            sweeps += 1
            if _cd_gram(G, c, gamma, theta, active) <= tol:
                break
            active = np.flatnonzero(theta)
    return sweeps, False


def lasso_ls(
    x: TimeSeries,
    p: int,
    gamma_n: float,
    tol: float = 1e-8,
    max_sweeps: int = 10000,
) -> tuple:
    """l1-regularized least squares (1/n)||y - X theta||_2^2 + gamma ||theta||_1.

    Solved unconstrained by cyclic coordinate descent (Gram form with
    active-set sweeps) to a relative duality gap of ``tol``; stability is only
    checked post hoc and flagged in the trace.  Returns ``(theta_hat, trace)``.
    """
    if gamma_n < 0:
        raise InvalidArgumentError("gamma_n must be >= 0")
    X, y = covariate_matrix(x, p)
    n = X.shape[0]
    trace = SolverTrace(tolerance_used=tol)
    G = (2.0 / n) * (X.T @ X)
    c = (2.0 / n) * (X.T @ y)
    if np.all(np.diag(G) == 0.0):
        trace.flag("degenerate constant-zero series; returning zero vector")
        trace.converged = True
        return np.zeros(p), trace
    theta = np.zeros(p)
    for _ in range(max_sweeps):
        _cd_solve(G, c, gamma_n, theta, 1e-3 * tol, 5)
        primal, gap = _lasso_dual_gap(X, y, theta, gamma_n, n)
        trace.record(primal)
        if gap <= tol * max(primal, 1e-12):
            trace.converged = True
            break
    if not trace.converged:
        trace.flag("coordinate descent hit max sweeps; returning best iterate")
    if np.sum(np.abs(theta)) >= 1.0:
        trace.flag("post-hoc stability check failed: ||theta||_1 >= 1")
    return theta, trace


def _yw_quantities(x: TimeSeries, p: int) -> tuple:
    r = sample_autocovariance(x, p)
    return toeplitz(r[:p]), r[1 : p + 1]


def lasso_yw(
    x: TimeSeries,
    p: int,
    gamma_n: float,
    residual_norm: str = "l2",
    tol: float = 1e-10,
    max_iter: int = 100000,
) -> tuple:
    """l1-penalized Yule-Walker: minimize ||R theta - r||_q + gamma ||theta||_1.

    q = 2 or 1 (robust variant).  Both terms are nonsmooth, so the problem is
    solved with the Chambolle-Pock primal-dual splitting, which only touches
    subgradient-safe proximal maps.  Returns ``(theta_hat, trace)``.
    """
    if gamma_n < 0:
        raise InvalidArgumentError("gamma_n must be >= 0")
    if residual_norm not in ("l2", "l1"):
        raise InvalidArgumentError("residual_norm must be 'l2' or 'l1'")
    R, r = _yw_quantities(x, p)
    norm_k = float(np.linalg.norm(R, 2))
    trace = SolverTrace(tolerance_used=tol)
    if norm_k == 0.0:
        trace.flag("degenerate zero covariance; returning zero vector")
        trace.converged = True
        return np.zeros(p), trace
    sigma = tau = 0.99 / norm_k

    def objective(th):
        res = R @ th - r
        rn = np.linalg.norm(res) if residual_norm == "l2" else np.sum(np.abs(res))
        return float(rn + gamma_n * np.sum(np.abs(th)))

    theta = np.zeros(p)
    theta_bar = theta.copy()
    dual = np.zeros(p)
    prev_obj = objective(theta)
    check_every = 50
    for it in range(1, max_iter + 1):
        z = dual + sigma * (R @ theta_bar - r)
        if residual_norm == "l2":
            nz = np.linalg.norm(z)
            dual = z if nz <= 1.0 else z / nz
        else:
            dual = np.clip(z, -1.0, 1.0)
        theta_new = theta - tau * (R.T @ dual)
        theta_new = np.sign(theta_new) * np.maximum(np.abs(theta_new) - tau * gamma_n, 0.0)
        theta_bar = 2.0 * theta_new - theta
        step = float(np.max(np.abs(theta_new - theta))) if p else 0.0
        theta = theta_new
        if it % check_every == 0 or it == max_iter:
            obj = objective(theta)
            trace.record(obj)
            if abs(prev_obj - obj) <= tol * (1.0 + abs(obj)) and step <= math.sqrt(tol):
                trace.converged = True
                break
            prev_obj = obj
    if not trace.converged:
        trace.flag("primal-dual iteration hit max_iter; returning best iterate")
    if np.sum(np.abs(theta)) >= 1.0:
        trace.flag("post-hoc stability check failed: ||theta||_1 >= 1")
    return theta, trace


def omp_generic(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    restricted_min: Callable[[np.ndarray], tuple],
    p: int,
    s_star: int,
) -> tuple:
    """Generalized orthogonal matching pursuit.

    Runs exactly ``s_star`` greedy steps: pick the out-of-support coordinate
    where |grad| is largest (ties to the lowest index), grow the support, and
    re-minimize the objective restricted to the support via
    ``restricted_min(support) -> (theta, objective)``.

    Returns ``(theta, support_indices, trace)``.
    """
    if s_star < 0 or s_star > p:
        raise InvalidArgumentError(f"s_star={s_star} outside [0, {p}]")
    theta = np.zeros(p)
    sel: list = []
    trace = SolverTrace()
    for _ in range(s_star):
        g = np.abs(np.asarray(grad_fn(theta), dtype=float))
        if sel:
            g[np.asarray(sel)] = -np.inf
        j = int(np.argmax(g))
        sel.append(j)
        try:
            theta, obj = restricted_min(np.array(sorted(sel)))
        except Exception as exc:  # noqa: BLE001 - propagate with partial trace
            trace.flag(f"restricted subproblem failed at size {len(sel)}: {exc}")
            raise NumericalFailureError(
                f"OMP aborted after {len(sel) - 1} completed steps"
            ) from exc
        trace.record(obj)
    trace.converged = True
    return theta, np.array(sorted(sel)), trace


def omp_ls(x: TimeSeries, p: int, s_star: int) -> tuple:
    """Classical OMP on the LS metric (1/n)||y - X theta||^2."""
    X, y = covariate_matrix(x, p)
    n = X.shape[0]

    def grad(th):
        return -(2.0 / n) * (X.T @ (y - X @ th))

    def restricted(idx):
        th = np.zeros(p)
        sol, _, _, _ = np.linalg.lstsq(X[:, idx], y, rcond=None)
        th[idx] = sol
        resid = y - X @ th
        return th, float(resid @ resid) / n

    return omp_generic(grad, restricted, p, s_star)


def omp_yw(x: TimeSeries, p: int, s_star: int) -> tuple:
    """Greedy pursuit on the Yule-Walker metric ||R theta - r||_2 (ywOMP)."""
    R, r = _yw_quantities(x, p)

    def grad(th):
        res = R @ th - r
        nrm = np.linalg.norm(res)
        if nrm == 0.0:
            return np.zeros(p)
        return R.T @ (res / nrm)

    def restricted(idx):
        th = np.zeros(p)
        sol, _, _, _ = np.linalg.lstsq(R[:, idx], r, rcond=None)
        th[idx] = sol
        return th, float(np.linalg.norm(R @ th - r))

    return omp_generic(grad, restricted, p, s_star)


def least_squares(x: TimeSeries, p: int) -> np.ndarray:
    """Unregularized least-squares estimate (comparison benchmark)."""
    X, y = covariate_matrix(x, p)
    sol, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    return sol


def residual_variance(x: TimeSeries, theta: np.ndarray) -> float:
    """Innovation-variance estimate from the model residuals."""
    X, y = covariate_matrix(x, theta.size)
    r = y - X @ theta
    return float(r @ r) / r.size


def cross_validate_gamma(
    x: TimeSeries, p: int, gammas, method: str = "lasso"
) -> float:
    """Even/odd two-fold cross-validation over a gamma grid.

    Rows of the covariate matrix are split by parity of the target index; the
    prediction error of a fit on one half is scored on the other, both ways.
    """
    X, y = covariate_matrix(x, p)
    n = X.shape[0]
    even = np.arange(0, n, 2)
    odd = np.arange(1, n, 2)
    best_gamma, best_err = None, np.inf
    for gamma in gammas:
        err = 0.0
        for train, test in ((even, odd), (odd, even)):
            theta = _lasso_on_design(X[train], y[train], gamma)
            r = y[test] - X[test] @ theta
            err += float(r @ r) / test.size
        if err < best_err:
            best_err, best_gamma = err, float(gamma)
    return best_gamma


def _lasso_on_design(X, y, gamma, tol=1e-7, max_sweeps=2000, gram=None):
    """Coordinate-descent lasso (1/n)||y - X theta||^2 + gamma||theta||_1.

    ``gram`` may carry a precomputed (2/n) X'X to share across many targets
    with the same design.
    """
    n, p = X.shape
    G = (2.0 / n) * (X.T @ X) if gram is None else gram
    c = (2.0 / n) * (X.T @ y)
    theta = np.zeros(p)
    _cd_solve(G, c, gamma, theta, tol, max_sweeps)
    return theta
