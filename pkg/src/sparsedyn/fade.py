"""Multiplicative updates for nonnegativity-constrained convex problems.

The KKT conditions of min F(X) s.t. X >= 0 reduce to finding a nonnegative
fixed point of (grad F) .* X = 0, which the update

    X <- (grad F)^- / (grad F)^+ .* X

searches for while preserving positivity.  Concrete adapters supply the
entrywise-nonnegative gradient split: dynamic nonnegative deconvolution,
Poisson recovery / dynamic Richardson-Lucy smoothing, nonnegative least
squares, NMF, and the adaptive peak-amplitude (dF/F cap) regularization.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (
    InvalidArgumentError,
    NumericalFailureError,
    SolverTrace,
)

_MONOTONE_TOL = 1e-9


@dataclass
class GradientSplit:
    """A convex objective presented through its split gradient.

    ``eval_plus(X) - eval_minus(X)`` must equal grad F(X) entrywise, with both
    parts entrywise >= 0 on the positive orthant.  ``objective`` is optional
    and only used for tracing / monotonicity enforcement.
    """

    eval_plus: Callable[[np.ndarray], np.ndarray]
    eval_minus: Callable[[np.ndarray], np.ndarray]
    objective: Optional[Callable[[np.ndarray], float]] = None
    convex: bool = True


def split_parts(raw_plus: np.ndarray, raw_minus: np.ndarray) -> tuple:
    """Canonicalize a split so both parts are entrywise nonnegative."""
    plus = np.maximum(raw_plus, 0.0) + np.maximum(-raw_minus, 0.0)
    minus = np.maximum(raw_minus, 0.0) + np.maximum(-raw_plus, 0.0)
    return plus, minus


def multiplicative_solve(
    split: GradientSplit,
    x0: np.ndarray,
    max_iter: int = 500,
    tol: float = 5e-3,
    damping: float = 1.0,
) -> tuple:
    """Iterate X <- (grad F)^- / (grad F)^+ .* X from a positive start.

    Entries whose plus-part vanishes while the minus-part is positive are
    frozen at their current value and flagged.  Convergence is declared on a
    relative l1 change below ``tol``.  For convex adapters that expose an
    objective, any increase beyond a 1e-9 relative tolerance aborts the run.
    Returns ``(X, trace)``.
    """
    if not 0.0 < damping <= 1.0:
        raise InvalidArgumentError("damping must be in (0, 1]")
    x = np.asarray(x0, dtype=float).copy()
    if np.any(x < 0.0):
        raise InvalidArgumentError("initial iterate must be entrywise >= 0")
    trace = SolverTrace(tolerance_used=tol)
    prev_obj = None
    frozen_flagged = False
    for it in range(max_iter):
        plus = np.asarray(split.eval_plus(x), dtype=float)
        minus = np.asarray(split.eval_minus(x), dtype=float)
        if not (np.all(np.isfinite(plus)) and np.all(np.isfinite(minus))):
            err = NumericalFailureError(f"non-finite gradient split at iteration {it}")
            err.iterate = x
            raise err
        ratio = np.divide(minus, plus, out=np.ones_like(x), where=plus > 0.0)
        stuck = (plus <= 0.0) & (minus > 0.0)
        if np.any(stuck) and not frozen_flagged:
            trace.flag(f"{int(np.count_nonzero(stuck))} entries frozen (zero plus-part)")
            frozen_flagged = True
        if damping != 1.0:
            ratio = ratio**damping
        x_new = x * ratio
        if split.objective is not None:
            obj = float(split.objective(x_new))
            trace.record(obj)
            if (
                split.convex
                and prev_obj is not None
                and obj > prev_obj + _MONOTONE_TOL * max(abs(prev_obj), 1.0)
            ):
                err = NumericalFailureError(
                    f"objective increased at iteration {it}: {prev_obj:.12g} -> {obj:.12g}"
                )
                err.iterate = x_new
                err.trace = trace
                raise err
            prev_obj = obj
        denom = max(float(np.sum(np.abs(x))), 1e-300)
        delta = float(np.sum(np.abs(x_new - x))) / denom
        x = x_new
        if delta < tol:
            trace.converged = True
            trace.iterations = it + 1
            break
    if split.objective is None:
        trace.iterations = max(trace.iterations, it + 1)
    if not trace.converged:
        trace.flag("multiplicative updates hit max_iter")
    return x, trace


def kkt_gap(split: GradientSplit, x: np.ndarray) -> np.ndarray:
    """Entrywise min(grad F, X): ~0 at a KKT point of the nonnegative problem."""
    g = np.asarray(split.eval_plus(x), dtype=float) - np.asarray(
        split.eval_minus(x), dtype=float
    )
    return np.minimum(g, x)


# ---------------------------------------------------------------------------
# Dynamics helpers (states from innovations and adjoint propagation)
# ---------------------------------------------------------------------------


def _theta_is_zero(theta) -> bool:
    return np.isscalar(theta) and float(theta) == 0.0


def _apply_theta(theta, v):
    if np.isscalar(theta):
        return float(theta) * v
    return v @ np.asarray(theta).T


def _apply_theta_T(theta, v):
    if np.isscalar(theta):
        return float(theta) * v
    return v @ np.asarray(theta)


def states_from_innovations(theta, w: np.ndarray) -> np.ndarray:
    """x_t = Theta x_{t-1} + w_t with x_0 = 0 (convention Theta^0 = I)."""
    w = np.asarray(w, dtype=float)
    if _theta_is_zero(theta):
        return w.copy()
    x = np.empty_like(w)
    prev = np.zeros(w.shape[1])
    for t in range(w.shape[0]):
        prev = _apply_theta(theta, prev) + w[t]
        x[t] = prev
    return x


def adjoint_propagate(theta, g: np.ndarray) -> np.ndarray:
    """G_t = sum_{tau >= t} (Theta')^{tau-t} g_tau via a backward recursion."""
    g = np.asarray(g, dtype=float)
    if _theta_is_zero(theta):
        return g.copy()
    out = np.empty_like(g)
    acc = np.zeros(g.shape[1])
    for t in range(g.shape[0] - 1, -1, -1):
        acc = g[t] + _apply_theta_T(theta, acc)
        out[t] = acc
    return out


def _penalty_terms(w, penalty, lam, q, eps_q):
    """(plus, minus, value) of the sparsity penalty at W (entrywise arrays)."""
    if penalty is None or lam == 0.0:
        return None, None, 0.0
    if penalty == "l1":
        return lam * np.ones_like(w), None, lam * float(np.sum(np.abs(w)))
    if penalty == "lq":
        # IRLS majorization of sum w^q with an eps_q floor, re-linearized at
        # the current iterate each call
        base = np.sqrt(w * w + eps_q * eps_q)
        plus = lam * q * w * base ** (q - 2.0)
        return plus, None, lam * float(np.sum(base**q))
    raise InvalidArgumentError(f"unknown penalty {penalty!r}")


@dataclass
class DynDeconvProblem:
    """Gaussian-noise nonnegative deconvolution with linear dynamics.

    y_t = A_t x_t + v_t, x_t = Theta x_{t-1} + w_t, w_t >= 0.  ``A`` may be a
    single shared matrix or one per frame; ``sigma2`` a scalar observation
    variance (isotropic) or a per-frame vector of diagonal variances.
    """

    y: np.ndarray
    A: object
    theta: object = 0.0
    sigma2: object = 1.0
    penalty: Optional[str] = None
    lam: float = 0.0
    q: float = 0.5
    eps_q: float = 1e-8

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.penalty == "lq" and not 0.0 < self.q <= 1.0:
            raise InvalidArgumentError("lq penalty needs q in (0, 1]")
        if self.lam < 0:
            raise InvalidArgumentError("lam must be >= 0")
        if not np.isscalar(self.theta):
            th = np.asarray(self.theta, dtype=float)
            # convergent = powers decay = spectral radius < 1 (the AR(2)
            # companion form is convergent despite operator norm > 1)
            if np.max(np.abs(np.linalg.eigvals(th))) >= 1.0:
                raise InvalidArgumentError("transition matrix must be convergent")
            self.theta = th

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def frame_A(self, t: int) -> np.ndarray:
        return self.A[t] if isinstance(self.A, (list, tuple)) else self.A

    def frame_isig(self, t: int):
        if np.isscalar(self.sigma2):
            return 1.0 / float(self.sigma2)
        return 1.0 / np.asarray(self.sigma2[t], dtype=float)


def deconv_gradients(problem: DynDeconvProblem) -> GradientSplit:
    """Gradient split of 0.5 sum_t ||y_t - A_t x_t||^2_{Sigma_t} + lam P(W).

    The likelihood parts follow the adjoint propagation
    (grad_w L)^+ = sum_{tau>=t} (Theta^{tau-t})' A' Sigma^-1 y  and
    (grad_w L)^- = same with A x_tau in place of y; the l1 penalty adds
    lam * 1 to the plus part.  Negative contributions from noisy data are
    rebalanced so both parts stay entrywise nonnegative.
    """
    T = problem.T

    def loglik_terms(w):
        # grad_w L = model_term - data_term, both adjoint-propagated
        x = states_from_innovations(problem.theta, w)
        data = np.empty_like(w)
        model = np.empty_like(w)
        for t in range(T):
            a = problem.frame_A(t)
            isig = problem.frame_isig(t)
            data[t] = a.T @ (isig * problem.y[t])
            model[t] = a.T @ (isig * (a @ x[t]))
        return (
            adjoint_propagate(problem.theta, model),
            adjoint_propagate(problem.theta, data),
        )

    def eval_plus(w):
        model, data = loglik_terms(w)
        plus_side, _ = split_parts(model, data)
        pp, _, _ = _penalty_terms(w, problem.penalty, problem.lam, problem.q, problem.eps_q)
        return plus_side if pp is None else plus_side + pp

    def eval_minus(w):
        model, data = loglik_terms(w)
        _, minus_side = split_parts(model, data)
        return minus_side

    def objective(w):
        x = states_from_innovations(problem.theta, w)
        val = 0.0
        for t in range(T):
            a = problem.frame_A(t)
            r = problem.y[t] - a @ x[t]
            val += 0.5 * float(r @ (problem.frame_isig(t) * r))
        _, _, pv = _penalty_terms(w, problem.penalty, problem.lam, problem.q, problem.eps_q)
        return val + pv

    return GradientSplit(eval_plus, eval_minus, objective, convex=problem.penalty != "lq")


@dataclass
class PoissonRecoveryProblem:
    """Poisson-count recovery with nonnegative mixing and optional dynamics.

    y_t ~ Poisson(phi(A x_t + b_t)) with A entrywise >= 0; ``b`` is a shared
    baseline vector, a (T, n) array, or None.  ``c_f`` optionally caps the
    peak state amplitude (dF/F ceiling) for the adaptive regularization.
    """

    y: np.ndarray
    A: np.ndarray
    theta: object = 0.0
    b: object = None
    phi: str = "identity"
    penalty: Optional[str] = None
    lam: float = 0.0
    q: float = 0.5
    eps_q: float = 1e-8
    c_f: Optional[float] = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.A = np.asarray(self.A, dtype=float)
        if np.any(self.A < 0.0):
            raise InvalidArgumentError("measurement matrix must be entrywise >= 0")
        if np.any(self.y < 0.0):
            raise InvalidArgumentError("counts must be nonnegative")
        if self.phi not in ("identity", "exp", "logistic"):
            raise InvalidArgumentError(f"unknown rate model {self.phi!r}")
        if self.c_f is not None and self.c_f <= 0:
            raise InvalidArgumentError("c_f must be positive")

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def frame_b(self, t: int):
        if self.b is None:
            return None
        b = np.asarray(self.b, dtype=float)
        return b[t] if b.ndim == 2 else b


def _poisson_rate_terms(problem, z):
    """Per-frame (plus, minus) pre-propagation terms and the objective value."""
    y = problem.y
    if problem.phi == "identity":
        rate = z
        bad = (rate <= 0.0) & (y > 0.0)
        if np.any(bad):
            t, j = np.argwhere(bad)[0]
            raise InvalidArgumentError(f"zero rate with positive count at frame {t}, row {j}")
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(y > 0.0, y / np.where(rate > 0.0, rate, 1.0), 0.0)
            logs = np.where(y > 0.0, np.log(np.where(rate > 0.0, rate, 1.0)), 0.0)
        value = float(np.sum(rate) - np.sum(y * logs))
        return np.ones_like(z), ratio, value
    if problem.phi == "exp":
        value = float(np.sum(np.exp(z)) - np.sum(y * z))
        return np.exp(z), y.astype(float), value
    ez = np.exp(z)
    phi = ez / (1.0 + ez)
    value = float(np.sum(phi) - np.sum(y * np.log(phi)))
    return phi * (1.0 - phi), y * (1.0 - phi), value


def poisson_gradients(problem: PoissonRecoveryProblem) -> GradientSplit:
    """Gradient split of the Poisson negative log-likelihood plus penalty.

    For the identity rate model, Theta = 0 and lam = 0 this is exactly the
    classical Richardson-Lucy iteration.
    """
    A = problem.A

    def z_of(w):
        x = states_from_innovations(problem.theta, w)
        z = x @ A.T
        if problem.b is not None:
            for t in range(problem.T):
                z[t] = z[t] + problem.frame_b(t)
        return x, z

    def eval_plus(w):
        _, z = z_of(w)
        pterm, _, _ = _poisson_rate_terms(problem, z)
        g = pterm @ A
        out = adjoint_propagate(problem.theta, g)
        pp, _, _ = _penalty_terms(w, problem.penalty, problem.lam, problem.q, problem.eps_q)
        return out if pp is None else out + pp

    def eval_minus(w):
        _, z = z_of(w)
        _, mterm, _ = _poisson_rate_terms(problem, z)
        return adjoint_propagate(problem.theta, mterm @ A)

    def objective(w):
        _, z = z_of(w)
        _, _, value = _poisson_rate_terms(problem, z)
        _, _, pv = _penalty_terms(w, problem.penalty, problem.lam, problem.q, problem.eps_q)
        return value + pv

    return GradientSplit(eval_plus, eval_minus, objective, convex=problem.penalty != "lq")


def default_poisson_init(problem: PoissonRecoveryProblem) -> np.ndarray:
    """Entrywise-positive start max(backprojected counts, 1e-6)."""
    return np.maximum(problem.y @ problem.A, 1e-6)


def deconv_solve(
    problem: DynDeconvProblem, w0=None, max_iter: int = 500, tol: float = 5e-3,
    damping: float = 1.0,
) -> tuple:
    """Multiplicative solve of the dynamic deconvolution problem.

    Returns ``(W, X, trace)``.
    """
    split = deconv_gradients(problem)
    if w0 is None:
        p = problem.frame_A(0).shape[1]
        w0 = np.ones((problem.T, p))
    w, trace = multiplicative_solve(split, w0, max_iter=max_iter, tol=tol, damping=damping)
    return w, states_from_innovations(problem.theta, w), trace


def poisson_solve(
    problem: PoissonRecoveryProblem, w0=None, max_iter: int = 500, tol: float = 5e-3,
    damping: float = 1.0,
) -> tuple:
    """Multiplicative solve of the Poisson recovery problem: (W, X, trace)."""
    split = poisson_gradients(problem)
    if w0 is None:
        w0 = default_poisson_init(problem)
    w, trace = multiplicative_solve(split, w0, max_iter=max_iter, tol=tol, damping=damping)
    return w, states_from_innovations(problem.theta, w), trace


def nls_solve(A: np.ndarray, Y: np.ndarray, lam: float = 0.0, penalty=None,
              max_iter: int = 2000, tol: float = 1e-10) -> tuple:
    """Nonnegative least squares min_{X>=0} 0.5||Y - AX||_F^2 (+ penalty).

    Columns of Y are independent subproblems; implemented as the static
    (Theta = 0) case of the dynamic deconvolution adapter.  Returns (X, trace)
    with X of shape (p, k).
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    problem = DynDeconvProblem(y=Y.T, A=np.asarray(A, dtype=float), theta=0.0,
                               sigma2=1.0, penalty=penalty, lam=lam)
    w, _, trace = deconv_solve(problem, max_iter=max_iter, tol=tol)
    return w.T, trace


def adaptive_cap_solve(
    problem: PoissonRecoveryProblem,
    w0=None,
    max_outer: int = 400,
    inner_iter: int = 40,
    tol: float = 1e-3,
    w_tol: float = 1e-6,
) -> tuple:
    """Multiplicative updates with adaptive peak regularization.

    Runs unpenalized until the state cap c_f is first violated, then turns on
    a uniform amplitude penalty at lam0 = 0.01 and rescales
    lam <- lam * max(dF/F) / c_f between update batches, driving the peak to
    the cap (complementary slackness).  Returns ``(W, X, lam, trace)``.
    """
    if problem.c_f is None:
        raise InvalidArgumentError("problem must define the cap c_f")
    c_f = float(problem.c_f)
    A = problem.A
    lam = 0.0
    lam0 = 0.01
    activated = False
    trace = SolverTrace(tolerance_used=tol)
    w = default_poisson_init(problem) if w0 is None else np.asarray(w0, dtype=float).copy()

    def make_split(lam_now):
        base = poisson_gradients(problem)
        if lam_now == 0.0:
            return base
        ones_prop = adjoint_propagate(problem.theta, np.ones_like(w))

        def eval_plus(wv):
            return base.eval_plus(wv) + lam_now * ones_prop

        return GradientSplit(eval_plus, base.eval_minus, None, convex=True)

    peak = np.inf
    for outer in range(max_outer):
        x = states_from_innovations(problem.theta, w)
        peak = float(np.max(x))
        if peak >= c_f and not activated:
            lam = lam0
            activated = True
            trace.flag(f"cap first violated at outer {outer}; lam0 = {lam0}")
        if lam > 0.0:
            lam = lam * peak / c_f
        split = make_split(lam)
        w_new, _ = multiplicative_solve(split, w, max_iter=inner_iter, tol=w_tol)
        delta = float(np.sum(np.abs(w_new - w))) / max(float(np.sum(np.abs(w))), 1e-300)
        w = w_new
        x = states_from_innovations(problem.theta, w)
        peak = float(np.max(x))
        trace.record(peak)
        if not activated and delta < w_tol:
            trace.converged = True
            break
        if activated and abs(peak - c_f) <= tol * c_f and delta < 10 * w_tol:
            trace.converged = True
            break
    if not trace.converged:
        trace.flag("adaptive regularization hit max_outer")
    if activated and peak > 0.0 and peak < c_f:
        # snap the converged iterate onto the active constraint surface; the
        # exact solution satisfies max(dF/F) = c_f, the iterate is off by
        # O(tol), and the amplitude ray is feasible
        w = w * (c_f * (1.0 + 1e-9) / peak)
    return w, states_from_innovations(problem.theta, w), lam, trace


def nmf_solve(
    Y: np.ndarray,
    rank: int,
    dynamics: Optional[float] = None,
    max_iter: int = 500,
    tol: float = 1e-8,
    seed: int = 0,
) -> tuple:
    """Alternating multiplicative NMF, Y ~ A X with A, X >= 0.

    Without dynamics this is the classical pair of updates
    X <- X .* (A'Y) / (A'AX) and A <- A .* (YX') / (AXX').  With a scalar
    ``dynamics`` coefficient alpha, columns of X evolve as
    X_t = alpha X_{t-1} + W_t and the X update runs through the dynamic
    deconvolution adapter in W-space.  Returns ``(A, X, trace)``.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if np.any(Y < 0.0):
        raise InvalidArgumentError("Y must be entrywise nonnegative")
    m, n = Y.shape
    if rank < 1 or rank > min(m, n):
        raise InvalidArgumentError("rank must be in [1, min(Y.shape)]")
    g = np.random.Generator(np.random.PCG64(seed))
    scale = math.sqrt(max(float(Y.mean()), 1e-12) / rank)
    A = scale * np.abs(g.standard_normal((m, rank))) + 1e-6
    X = scale * np.abs(g.standard_normal((rank, n))) + 1e-6
    W = X.copy()
    trace = SolverTrace(tolerance_used=tol)
    prev = None
    for it in range(max_iter):
        if dynamics is None:
            num = A.T @ Y
            den = A.T @ A @ X
            X = X * np.divide(num, den, out=np.ones_like(X), where=den > 0.0)
        else:
            prob = DynDeconvProblem(y=Y.T, A=A, theta=float(dynamics), sigma2=1.0)
            split = deconv_gradients(prob)
            W, _ = multiplicative_solve(split, W.T, max_iter=5, tol=0.0)
            W = W.T
            X = states_from_innovations(float(dynamics), W.T).T
        num = Y @ X.T
        den = A @ (X @ X.T)
        A = A * np.divide(num, den, out=np.ones_like(A), where=den > 0.0)
        resid = Y - A @ X
        obj = 0.5 * float(np.sum(resid * resid))
        trace.record(obj)
        if prev is not None:
            if dynamics is None and obj > prev + _MONOTONE_TOL * max(abs(prev), 1.0):
                err = NumericalFailureError(
                    f"NMF objective increased at iteration {it}"
                )
                err.trace = trace
                raise err
            if abs(prev - obj) <= tol * (1.0 + abs(obj)):
                trace.converged = True
                break
        prev = obj
    if not trace.converged:
        trace.flag("NMF hit max_iter")
    return A, X, trace


# ---------------------------------------------------------------------------
# Line-projection demo operator (4 angle families over a square grid)
# ---------------------------------------------------------------------------


def line_projection_matrix(n: int) -> np.ndarray:
    """Unit-weight line sums over an n x n grid at 0, 45, 90, and 135 degrees.

    Rows enumerate, in order: n horizontal sums, n vertical sums, 2n-1
    anti-diagonal sums (i + j constant), and 2n-1 diagonal sums (i - j
    constant).  Shape (6n - 2, n*n).
    """
    if n < 2:
        raise InvalidArgumentError("grid side must be >= 2")
    rows = 6 * n - 2
    P = np.zeros((rows, n * n))
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    flat = (ii * n + jj).ravel()
    ii = ii.ravel()
    jj = jj.ravel()
    P[ii, flat] = 1.0
    P[n + jj, flat] = 1.0
    P[2 * n + ii + jj, flat] = 1.0
    P[4 * n - 1 + (ii - jj) + (n - 1), flat] = 1.0
    return P


def projection_triplets(P: np.ndarray) -> np.ndarray:
    """(row, col, weight) triplets of the nonzero projection entries."""
    r, c = np.nonzero(P)
    return np.column_stack([r, c, P[r, c]])
