"""Compressible state-space deconvolution.

Estimates states x_t = Theta x_{t-1} + w_t with sparse innovations w_t from
linear measurements y_t = A_t x_t + v_t by minimizing the eps-perturbed
dynamic l1 objective

    lambda * sum_t ||x_t - Theta x_{t-1}||_{1,eps} / sqrt(s_t)
        + sum_t ||y_t - A_t x_t||_2^2 / (2 n_t sigma^2)

via nested EM: an outer iteratively-reweighted pass that turns the l1 term
into a Gaussian prior, and an inner pass alternating a fixed-interval
smoother with a closed-form transition update.  Includes the AR(2) wave-packet
("spindle") parameterization and interval-based innovation pruning.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla
from scipy.stats import norm as _norm

from .core import (
    InvalidArgumentError,
    NumericalFailureError,
    RngSpec,
    SolverTrace,
)
from .ar import _lasso_on_design


def _as_theta_matrix(theta, p):
    if np.isscalar(theta):
        return float(theta) * np.eye(p)
    th = np.asarray(theta, dtype=float)
    if th.shape != (p, p):
        raise InvalidArgumentError(f"Theta must be scalar or {p}x{p}")
    return th


@dataclass
class StateSpaceProblem:
    """Dynamic compressed-sensing problem description.

    ``A`` holds one measurement matrix per frame; ``None`` entries mean the
    identity (denoising).  ``theta`` is a scalar (Theta = theta * I) or a full
    p x p matrix; it must be convergent (spectral radius < 1).
    """

    y: list
    A: list
    p: int
    sigma2: float
    s: np.ndarray
    lam: float
    eps: float = 1e-10
    theta: object = 0.0

    def __post_init__(self):
        self.y = [np.asarray(v, dtype=float).ravel() for v in self.y]
        T = len(self.y)
        if T < 1:
            raise InvalidArgumentError("need at least one frame")
        if self.A is None:
            self.A = [None] * T
        if len(self.A) != T:
            raise InvalidArgumentError("A and y must have the same length")
        self.s = np.broadcast_to(np.asarray(self.s, dtype=float), (T,)).copy()
        if np.any(self.s < 1):
            raise InvalidArgumentError("sparsity budgets must be >= 1")
        if self.eps <= 0 or self.lam < 0 or self.sigma2 <= 0:
            raise InvalidArgumentError("need eps > 0, lam >= 0, sigma2 > 0")
        for t, (a, yv) in enumerate(zip(self.A, self.y)):
            nt = self.p if a is None else np.asarray(a).shape[0]
            if a is not None and np.asarray(a).shape[1] != self.p:
                raise InvalidArgumentError(f"A[{t}] has wrong state dimension")
            if yv.size != nt:
                raise InvalidArgumentError(f"y[{t}] length does not match A[{t}]")
        if not np.isscalar(self.theta):
            self.theta = np.asarray(self.theta, dtype=float)
            # convergent = spectral radius < 1; this admits non-normal forms
            # like the AR(2) companion matrix whose operator norm exceeds 1
            if np.max(np.abs(np.linalg.eigvals(self.theta))) >= 1.0:
                raise InvalidArgumentError("transition matrix must be convergent")
        elif abs(float(self.theta)) >= 1.0:
            raise InvalidArgumentError("scalar transition must have |theta| < 1")

    @property
    def T(self) -> int:
        return len(self.y)

    @property
    def n(self) -> np.ndarray:
        return np.array([self.p if a is None else np.asarray(a).shape[0] for a in self.A])

    def theta_matrix(self) -> np.ndarray:
        return _as_theta_matrix(self.theta, self.p)

    def is_diagonal(self) -> bool:
        return np.isscalar(self.theta) and all(a is None for a in self.A)


@dataclass
class SmootherState:
    """Fixed-interval smoother output: means, covariances, lag-one cross-covs.

    ``diagonal`` marks the per-coordinate fast path where covariances are
    stored as (T, p) diagonals; ``lag_one[t]`` is Cov(x_t, x_{t+1} | all data).
    """

    means: np.ndarray
    covs: np.ndarray
    lag_one: np.ndarray
    diagonal: bool

    def cov_diag(self) -> np.ndarray:
        if self.diagonal:
            return self.covs
        return np.einsum("tii->ti", self.covs)

    def validate_psd(self, tol: float = 1e-10):
        if self.diagonal:
            bad = np.flatnonzero(np.min(self.covs, axis=1) < -tol)
            if bad.size:
                raise NumericalFailureError(f"negative variance at frame {bad[0]}")
            return
        for t, P in enumerate(self.covs):
            if np.min(np.linalg.eigvalsh(P)) < -tol * max(1.0, np.max(np.abs(P))):
                raise NumericalFailureError(f"non-PSD covariance at frame {t}")


def _solve_spd(M, B):
    try:
        return sla.solve(M, B, assume_a="pos")
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(M, B, rcond=None)[0]


def fixed_interval_smoother(
    theta, q: np.ndarray, A: list, y: list, r: np.ndarray, check_psd: bool = False
) -> SmootherState:
    """Forward Kalman pass + backward Rauch smoother, x_0 = 0.

    ``q`` is the (T, p) array of diagonal innovation variances, ``r`` the
    per-frame observation-noise variances (already scaled by n_t).  Falls back
    to a vectorized per-coordinate recursion when the transition is scalar and
    every measurement matrix is the identity.
    """
    T, p = q.shape
    diagonal = np.isscalar(theta) and all(a is None for a in A)
    if diagonal:
        sm = _smoother_diagonal(float(theta), q, np.stack(y), np.asarray(r, dtype=float))
    else:
        sm = _smoother_full(_as_theta_matrix(theta, p), q, A, y, r)
    if check_psd:
        sm.validate_psd()
    return sm


def _smoother_full(Th, q, A, y, r) -> SmootherState:
    T, p = q.shape
    xf = np.zeros((T, p))
    Pf = np.zeros((T, p, p))
    xp = np.zeros((T, p))
    Pp = np.zeros((T, p, p))
    x_pred = np.zeros(p)
    P_pred = np.diag(q[0])
    eye = np.eye(p)
    for t in range(T):
        a = A[t]
        if a is None:
            S = P_pred + r[t] * eye
            K = _solve_spd(S, P_pred).T
            innov = y[t] - x_pred
            KA = K
        else:
            PA = P_pred @ a.T
            S = a @ PA + r[t] * np.eye(a.shape[0])
            K = _solve_spd(S, PA.T).T
            innov = y[t] - a @ x_pred
            KA = K @ a
        xf[t] = x_pred + K @ innov
        Pc = (eye - KA) @ P_pred
        Pf[t] = 0.5 * (Pc + Pc.T)
        xp[t] = x_pred
        Pp[t] = P_pred
        if t + 1 < T:
            x_pred = Th @ xf[t]
            P_pred = Th @ Pf[t] @ Th.T + np.diag(q[t + 1])
            P_pred = 0.5 * (P_pred + P_pred.T)
    xs = np.zeros_like(xf)
    Ps = np.zeros_like(Pf)
    lag = np.zeros((max(T - 1, 0), p, p))
    xs[T - 1] = xf[T - 1]
    Ps[T - 1] = Pf[T - 1]
    for t in range(T - 2, -1, -1):
        J = _solve_spd(Pp[t + 1], Th @ Pf[t]).T
        xs[t] = xf[t] + J @ (xs[t + 1] - xp[t + 1])
        Pc = Pf[t] + J @ (Ps[t + 1] - Pp[t + 1]) @ J.T
        Ps[t] = 0.5 * (Pc + Pc.T)
        lag[t] = J @ Ps[t + 1]
    return SmootherState(xs, Ps, lag, diagonal=False)


def _smoother_diagonal(theta, q, y, r) -> SmootherState:
    T, p = q.shape
    xf = np.zeros((T, p))
    pf = np.zeros((T, p))
    xpr = np.zeros((T, p))
    ppr = np.zeros((T, p))
    x_pred = np.zeros(p)
    p_pred = q[0].copy()
    for t in range(T):
        s = p_pred + r[t]
        k = p_pred / s
        xf[t] = x_pred + k * (y[t] - x_pred)
        pf[t] = (1.0 - k) * p_pred
        xpr[t] = x_pred
        ppr[t] = p_pred
        if t + 1 < T:
            x_pred = theta * xf[t]
            p_pred = theta * theta * pf[t] + q[t + 1]
    xs = np.zeros_like(xf)
    ps = np.zeros_like(pf)
    lag = np.zeros((max(T - 1, 0), p))
    xs[T - 1] = xf[T - 1]
    ps[T - 1] = pf[T - 1]
    for t in range(T - 2, -1, -1):
        j = theta * pf[t] / ppr[t + 1]
        xs[t] = xf[t] + j * (xs[t + 1] - xpr[t + 1])
        ps[t] = pf[t] + j * j * (ps[t + 1] - ppr[t + 1])
        lag[t] = j * ps[t + 1]
    return SmootherState(xs, ps, lag, diagonal=True)


def _pair_moments(sm: SmootherState, T, p):
    """Second moments E[x_{t-1} x_{t-1}'], E[x_{t-1} x_t'] with x_0 = 0.

    Returned as generators of (S_t, C_t) for t = 1..T-1 (0-based pair
    (t-1, t)); the t = 0 pair vanishes identically.
    """
    for t in range(1, T):
        if sm.diagonal:
            S = np.outer(sm.means[t - 1], sm.means[t - 1]) + np.diag(sm.covs[t - 1])
            C = np.outer(sm.means[t - 1], sm.means[t]) + np.diag(sm.lag_one[t - 1])
        else:
            S = np.outer(sm.means[t - 1], sm.means[t - 1]) + sm.covs[t - 1]
            C = np.outer(sm.means[t - 1], sm.means[t]) + sm.lag_one[t - 1]
        yield t, S, C


def update_theta(sm: SmootherState, weights: np.ndarray) -> tuple:
    """Closed-form transition update from smoothed moments.

    Theta_hat = [sum_t 2 W_t (x_{t-1}x_{t-1}' + Sigma_{t-1})]^-1
                [sum_t W_t (x_{t-1}x_t' + x_t x_{t-1}' + Sigma_{t-1,t} + Sigma_{t-1,t}')]

    followed by the operator-norm check: if ||Theta|| >= 1 the matrix is
    rescaled to norm 0.99 and the event flagged (documented substitute for the
    exact spectral-ball projection).  Returns ``(Theta, flags)``.
    """
    T, p = sm.means.shape
    den = np.zeros((p, p))
    num = np.zeros((p, p))
    flags = []
    for t, S, C in _pair_moments(sm, T, p):
        w = weights[t][:, None]
        den += 2.0 * w * S
        num += w * (C + C.T)
    try:
        cond = np.linalg.cond(den)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        den = den + 1e-10 * np.eye(p)
        flags.append("singular Gram accumulation; ridge-regularized")
    theta = np.linalg.solve(den, num)
    nrm = np.linalg.norm(theta, 2)
    if nrm >= 1.0:
        theta = (1.0 - 0.01) * theta / nrm
        flags.append(f"transition norm {nrm:.4g} >= 1; rescaled to 0.99")
    return theta, flags


def update_theta_scalar(sm: SmootherState, weights: np.ndarray) -> tuple:
    """Exact M-step for a scalar transition Theta = theta * I."""
    T, p = sm.means.shape
    num = 0.0
    den = 0.0
    flags = []
    m = sm.means
    if sm.diagonal:
        cov_prev = sm.covs[:-1]
        lag = sm.lag_one
    else:
        cov_prev = np.einsum("tii->ti", sm.covs[:-1])
        lag = np.einsum("tii->ti", sm.lag_one)
    w = weights[1:]
    num = float(np.sum(w * 2.0 * (m[:-1] * m[1:] + lag)))
    den = float(np.sum(w * 2.0 * (m[:-1] ** 2 + cov_prev)))
    if den <= 0.0:
        return 0.0, ["degenerate scalar update; keeping theta = 0"]
    theta = num / den
    if abs(theta) >= 1.0:
        flags.append(f"scalar transition {theta:.4g} out of range; rescaled to 0.99")
        theta = math.copysign(0.99, theta)
    return theta, flags


def eps_l1(v: np.ndarray, eps: float) -> float:
    """Sum of sqrt(v_j^2 + eps^2), the eps-perturbed l1 norm."""
    return float(np.sum(np.sqrt(np.asarray(v) ** 2 + eps * eps)))


def innovations(theta, states: np.ndarray) -> np.ndarray:
    """w_t = x_t - Theta x_{t-1} with x_0 = 0."""
    x = np.asarray(states, dtype=float)
    T, p = x.shape
    th = _as_theta_matrix(theta, p)
    w = x.copy()
    w[1:] -= x[:-1] @ th.T
    return w


def dynamic_cs_objective(problem: StateSpaceProblem, states: np.ndarray) -> float:
    """The eps-perturbed dynamic l1 objective at the given state sequence."""
    x = np.asarray(states, dtype=float)
    if x.shape != (problem.T, problem.p):
        raise InvalidArgumentError("states must be a T x p array")
    w = innovations(problem.theta, x)
    nt = problem.n
    obj = 0.0
    for t in range(problem.T):
        obj += problem.lam * eps_l1(w[t], problem.eps) / math.sqrt(problem.s[t])
        a = problem.A[t]
        resid = problem.y[t] - (x[t] if a is None else a @ x[t])
        obj += float(resid @ resid) / (2.0 * nt[t] * problem.sigma2)
    return obj


@dataclass
class FcssResult:
    """Output of an FCSS solve: states, innovations, transition, diagnostics."""

    x_hat: np.ndarray
    w_hat: np.ndarray
    theta_hat: object
    trace: SolverTrace
    state_std: Optional[np.ndarray] = None
    a_hat: Optional[float] = None
    f_hat: Optional[float] = None


def _weights_from(problem: StateSpaceProblem, w_hat=None) -> np.ndarray:
    """Outer E-step weights 1/(sqrt(s_t) sqrt(w_j^2 + eps^2)) as a (T,p) array.

    With ``w_hat=None`` (first pass) the inner square root is taken as 1,
    which is the standard IRLS all-ones initialization.
    """
    T, p = problem.T, problem.p
    root_s = np.sqrt(problem.s)[:, None]
    if w_hat is None:
        return np.ones((T, p)) / root_s
    return 1.0 / (root_s * np.sqrt(np.asarray(w_hat) ** 2 + problem.eps**2))


def fcss_solve(
    problem: StateSpaceProblem,
    estimate_theta: bool = False,
    max_outer: int = 200,
    tol: float = 1e-8,
    inner_max: int = 10,
    inner_tol: float = 1e-6,
    check_psd: bool = False,
) -> FcssResult:
    """Nested-EM solve of the dynamic CS problem.

    The recorded objective (one value per outer iteration) must be
    non-increasing up to a 1e-9 relative tolerance; a larger increase aborts
    with the diagnostic trace attached to the exception.
    """
    if problem.lam <= 0:
        raise InvalidArgumentError("fcss_solve needs lam > 0")
    T, p = problem.T, problem.p
    nt = problem.n
    r = nt * problem.sigma2
    theta = problem.theta
    trace = SolverTrace(tolerance_used=tol)
    weights = _weights_from(problem, None)
    w_hat = None
    sm = None
    prev_obj = None
    for outer in range(max_outer):
        if w_hat is not None:
            weights = _weights_from(problem, w_hat)
        q = 1.0 / (problem.lam * weights)
        if estimate_theta:
            for _ in range(inner_max):
                sm = fixed_interval_smoother(theta, q, problem.A, problem.y, r)
                if np.isscalar(problem.theta):
                    theta_new, flags = update_theta_scalar(sm, weights)
                    delta = abs(theta_new - (theta if np.isscalar(theta) else 0.0))
                else:
                    theta_new, flags = update_theta(sm, weights)
                    delta = float(np.max(np.abs(theta_new - _as_theta_matrix(theta, p))))
                for msg in flags:
                    trace.flag(f"outer {outer}: {msg}")
                theta = theta_new
                if delta < inner_tol:
                    break
        sm = fixed_interval_smoother(theta, q, problem.A, problem.y, r, check_psd=check_psd)
        x_hat = sm.means
        w_hat = innovations(theta, x_hat)
        probe = StateSpaceProblem(
            y=problem.y, A=problem.A, p=p, sigma2=problem.sigma2,
            s=problem.s, lam=problem.lam, eps=problem.eps, theta=theta,
        )
        obj = dynamic_cs_objective(probe, x_hat)
        trace.record(obj)
        if prev_obj is not None:
            if obj > prev_obj + 1e-9 * max(abs(prev_obj), 1.0):
                err = NumericalFailureError(
                    f"objective increased at outer iteration {outer}: "
                    f"{prev_obj:.12g} -> {obj:.12g}"
                )
                err.trace = trace
                raise err
            if abs(prev_obj - obj) <= tol * (1.0 + abs(obj)):
                trace.converged = True
                prev_obj = obj
                break
        prev_obj = obj
    if not trace.converged:
        trace.flag("outer loop hit max_outer")
    std = np.sqrt(np.maximum(sm.cov_diag(), 0.0))
    return FcssResult(sm.means, w_hat, theta, trace, state_std=std)


def lam_default(sigma: float, p: int, n_t: int) -> float:
    """Initial regularization weight 2*sqrt(2)*sigma*sqrt(log(p)/n_t)."""
    return 2.0 * math.sqrt(2.0) * sigma * math.sqrt(math.log(p) / n_t)


def bpdn_frame(A: np.ndarray, y: np.ndarray, lam: float, gram=None) -> np.ndarray:
    """Frame-by-frame basis-pursuit-denoising baseline,
    argmin 0.5 ||y - A x||^2 + lam ||x||_1, via the shared coordinate descent.

    Pass ``gram = (2/n) A'A`` to amortize the Gram computation over frames.
    """
    n = A.shape[0]
    return _lasso_on_design(A, y, 2.0 * lam / n, tol=1e-5, max_sweeps=100, gram=gram)


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------


def simulate_statespace(
    p: int,
    T: int,
    s1: int,
    s2: int,
    theta,
    rng: RngSpec,
    amp_range=(0.5, 1.5),
    nonnegative: bool = True,
) -> tuple:
    """Draw sparse innovations (s1 in frame 1, s2 afterwards) and roll states.

    Returns ``(states (T,p), innovations (T,p))``.
    """
    g = rng.generator()
    w = np.zeros((T, p))
    for t in range(T):
        k = s1 if t == 0 else s2
        idx = g.choice(p, size=k, replace=False)
        amp = g.uniform(amp_range[0], amp_range[1], size=k)
        if not nonnegative:
            amp *= g.choice([-1.0, 1.0], size=k)
        w[t, idx] = amp
    x = np.zeros((T, p))
    th = _as_theta_matrix(theta, p)
    prev = np.zeros(p)
    for t in range(T):
        prev = th @ prev + w[t]
        x[t] = prev
    return x, w


def spindle_transition(a: float, f: float, fs: float) -> np.ndarray:
    """Augmented 2x2 transition [[phi, -psi], [1, 0]] of the AR(2) wave packet."""
    phi = 2.0 * a * math.cos(2.0 * math.pi * f / fs)
    return np.array([[phi, -a * a], [1.0, 0.0]])


def phi_psi_bounds(a_range, f_range, fs) -> dict:
    """Constraint algebra for (phi, psi) = (2 a cos(2 pi f / fs), a^2).

    With f increasing, cos decreases, so the feasible band is
    4 psi cos^2(2 pi f_max / fs) <= phi^2 <= 4 psi cos^2(2 pi f_min / fs).
    """
    return {
        "psi": (a_range[0] ** 2, a_range[1] ** 2),
        "phi2_over_psi": (
            4.0 * math.cos(2.0 * math.pi * f_range[1] / fs) ** 2,
            4.0 * math.cos(2.0 * math.pi * f_range[0] / fs) ** 2,
        ),
    }


def simulate_spindles(
    T: int,
    fs: float,
    f: float,
    a: float,
    onsets,
    amplitudes,
    noise_sd: float,
    rng: RngSpec,
    slow_osc: bool = True,
) -> tuple:
    """Wave packets from the AR(2) model driven at given onsets, plus noise.

    The additive noise is white Gaussian plus a slow 2 Hz oscillation to mimic
    EEG background.  Returns ``(clean, noisy)``.
    """
    g = rng.generator()
    th = spindle_transition(a, f, fs)
    x = np.zeros(2)
    clean = np.zeros(T)
    drive = np.zeros(T)
    for t0, amp in zip(onsets, amplitudes):
        drive[t0] = amp
    for t in range(T):
        x = th @ x
        x[0] += drive[t]
        clean[t] = x[0]
    noise = g.normal(0.0, noise_sd, size=T)
    if slow_osc:
        tgrid = np.arange(T) / fs
        noise = noise + noise_sd * 0.5 * np.sin(2.0 * np.pi * 2.0 * tgrid + g.uniform(0, 2 * np.pi))
    return clean, clean + noise


def _spindle_surrogate_coeffs(sm: SmootherState, weights: np.ndarray) -> np.ndarray:
    """(a1, a2, a3, b1, b2) of the expected complete-data quadratic
    J(phi, psi) = a1 phi^2 - a2 phi psi + a3 psi^2 - 2 b1 phi + 2 b2 psi."""
    m = sm.means
    w1 = weights[1:, 0]
    S = sm.covs[:-1]
    C = np.swapaxes(sm.lag_one, 1, 2)  # Cov(x_t, x_{t-1})
    s11 = m[:-1, 0] ** 2 + S[:, 0, 0]
    s12 = m[:-1, 0] * m[:-1, 1] + S[:, 0, 1]
    s21 = m[:-1, 1] * m[:-1, 0] + S[:, 1, 0]
    s22 = m[:-1, 1] ** 2 + S[:, 1, 1]
    c11 = m[1:, 0] * m[:-1, 0] + C[:, 0, 0]
    c12 = m[1:, 0] * m[:-1, 1] + C[:, 0, 1]
    return np.array([
        float(w1 @ s11),
        float(w1 @ (s12 + s21)),
        float(w1 @ s22),
        float(w1 @ c11),
        float(w1 @ c12),
    ])


def _spindle_best_af(c, a0, f0, a_range, f_range, fs):
    """Minimize the surrogate over the (a, f) box: grid + golden refinement.

    Only accepts the new point when it improves on (a0, f0), so the outer EM
    keeps its descent property.
    """

    def val(a, f):
        phi = 2.0 * a * math.cos(2.0 * math.pi * f / fs)
        psi = a * a
        return (
            c[0] * phi * phi - c[1] * phi * psi + c[2] * psi * psi
            - 2.0 * c[3] * phi + 2.0 * c[4] * psi
        )

    best = (val(a0, f0), a0, f0)
    for a in np.linspace(a_range[0], a_range[1], 25):
        for f in np.linspace(f_range[0], f_range[1], 41):
            v = val(a, f)
            if v < best[0]:
                best = (v, a, f)
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    _, a, f = best
    for _ in range(3):
        lo, hi = max(a_range[0], a - 0.005), min(a_range[1], a + 0.005)
        for _ in range(30):
            m1, m2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
            if val(m1, f) < val(m2, f):
                hi = m2
            else:
                lo = m1
        a = 0.5 * (lo + hi)
        lo, hi = max(f_range[0], f - 0.1), min(f_range[1], f + 0.1)
        for _ in range(30):
            m1, m2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
            if val(a, m1) < val(a, m2):
                hi = m2
            else:
                lo = m1
        f = 0.5 * (lo + hi)
    if val(a, f) < best[0]:
        best = (val(a, f), a, f)
    return best[1], best[2]


def _spindle_irls(y, fs, a0, f0, a_range, f_range, lam, sigma2, s, eps,
                  estimate_af, max_outer, tol):
    T = y.size
    A = [np.array([[1.0, 0.0]])] * T
    ys = [np.array([v]) for v in y]
    a_cur, f_cur = a0, f0
    trace = SolverTrace(tolerance_used=tol)
    root_s = math.sqrt(s)
    w_hat = None
    prev_obj = None
    sm = None
    for _ in range(max_outer):
        if w_hat is None:
            weights = np.ones((T, 2)) / root_s
        else:
            weights = 1.0 / (root_s * np.sqrt(w_hat**2 + eps * eps))
        q = 1.0 / (lam * weights)
        if estimate_af:
            for _ in range(4):
                th = spindle_transition(a_cur, f_cur, fs)
                sm = fixed_interval_smoother(th, q, A, ys, np.full(T, sigma2))
                coeff = _spindle_surrogate_coeffs(sm, weights)
                a_new, f_new = _spindle_best_af(coeff, a_cur, f_cur, a_range, f_range, fs)
                moved = abs(a_new - a_cur) > 1e-8 or abs(f_new - f_cur) > 1e-6
                a_cur, f_cur = a_new, f_new
                if not moved:
                    break
        th = spindle_transition(a_cur, f_cur, fs)
        sm = fixed_interval_smoother(th, q, A, ys, np.full(T, sigma2))
        w_hat = innovations(th, sm.means)
        obj = lam * np.sum(np.sqrt(w_hat**2 + eps * eps)) / root_s + float(
            np.sum((y - sm.means[:, 0]) ** 2)
        ) / (2.0 * sigma2)
        trace.record(obj)
        if prev_obj is not None and abs(prev_obj - obj) <= tol * (1.0 + abs(obj)):
            trace.converged = True
            break
        prev_obj = obj
    return sm, w_hat, a_cur, f_cur, trace


def spindle_solve(
    y: np.ndarray,
    fs: float,
    f_range=(12.0, 14.0),
    a_range=(0.95, 0.99),
    lam: float = 1.0,
    sigma2: float = 1.0,
    s: float = 4.0,
    eps: float = 1e-10,
    max_outer: int = 40,
    tol: float = 1e-7,
    freq_lam_mult: float = 4.0,
) -> FcssResult:
    """FCSS with the constrained AR(2) wave-packet parameterization.

    The transition update minimizes the expected complete-data objective over
    (a, f) inside the box by grid search plus coordinate golden-section
    refinement (interior-point substitute; a move is accepted only if it
    improves the surrogate, preserving EM descent).  Estimation runs in two
    stages: the pole pair (a, f) is identified under a stronger sparsity
    weight ``freq_lam_mult * lam`` (heavier shrinkage suppresses the broadband
    noise that otherwise biases the pole fit), then events are recovered at
    the working ``lam`` with the dynamics frozen.  Innovations refer to the
    first (current-value) block of the augmented state.
    """
    y = np.asarray(y, dtype=float).ravel()
    if fs <= 2.0 * f_range[1]:
        raise InvalidArgumentError("sampling rate must exceed twice the max frequency")
    if not (a_range[0] < a_range[1] and f_range[0] < f_range[1]):
        raise InvalidArgumentError("empty feasible region")
    T = y.size
    a_mid = 0.5 * (a_range[0] + a_range[1])
    f_mid = 0.5 * (f_range[0] + f_range[1])
    if not np.any(y):
        trace = SolverTrace(converged=True)
        trace.flag("zero input; returning midpoint parameters")
        zeros = np.zeros((T, 1))
        return FcssResult(zeros, zeros, spindle_transition(a_mid, f_mid, fs), trace,
                          state_std=np.zeros((T, 1)), a_hat=a_mid, f_hat=f_mid)
    _, _, a_hat, f_hat, _ = _spindle_irls(
        y, fs, a_mid, f_mid, a_range, f_range, freq_lam_mult * lam, sigma2, s,
        eps, True, max_outer, tol,
    )
    sm, w_hat, _, _, trace = _spindle_irls(
        y, fs, a_hat, f_hat, a_range, f_range, lam, sigma2, s, eps,
        False, max_outer, tol,
    )
    std = np.sqrt(np.maximum(sm.cov_diag(), 0.0))
    return FcssResult(
        sm.means[:, :1], w_hat[:, :1], spindle_transition(a_hat, f_hat, fs), trace,
        state_std=std[:, :1], a_hat=a_hat, f_hat=f_hat,
    )


def detect_events(w: np.ndarray, rel: float = 0.1, min_mad_mult: float = 8.0) -> np.ndarray:
    """Indices of isolated large-|w| innovations (clustered runs collapse to
    their peak bin)."""
    w = np.abs(np.asarray(w, dtype=float).ravel())
    if not np.any(w > 0):
        return np.array([], dtype=int)
    mad = np.median(np.abs(w - np.median(w))) * 1.4826
    thresh = max(rel * float(np.max(w)), min_mad_mult * mad)
    hot = np.flatnonzero(w >= thresh)
    if hot.size == 0:
        return hot
    events = []
    start = hot[0]
    prev = hot[0]
    for i in hot[1:]:
        if i > prev + 2:
            seg = np.arange(start, prev + 1)
            events.append(seg[np.argmax(w[seg])])
            start = i
        prev = i
    seg = np.arange(start, prev + 1)
    events.append(seg[np.argmax(w[seg])])
    return np.asarray(events, dtype=int)


def prune_innovations(result: FcssResult, alpha: float = 0.05) -> list:
    """Keep innovations whose trough-to-peak rise clears the confidence bands.

    Intervals are x_hat +/- z_{1-alpha/2} * smoothed std (a smoother-covariance
    substitute for node-wise regression).  A trough at t_min with following
    peak at t_max yields a significant event when lower(peak) - upper(trough)
    > 0; the event is placed at the largest innovation inside the segment.
    Returns a list of ``(coordinate, frame)`` pairs.
    """
    if result.state_std is None:
        raise InvalidArgumentError("result carries no interval information")
    z = float(_norm.ppf(1.0 - alpha / 2.0))
    x = result.x_hat
    w = result.w_hat
    upper = x + z * result.state_std
    lower = x - z * result.state_std
    T, p = x.shape
    events = []
    for i in range(p):
        xi = x[:, i]
        t = 0
        while t < T - 1:
            while t < T - 1 and xi[t + 1] <= xi[t]:
                t += 1
            t_min = t
            while t < T - 1 and xi[t + 1] >= xi[t]:
                t += 1
            t_max = t
            if t_max == t_min:
                break  # reached the end on a non-increasing stretch
            if lower[t_max, i] - upper[t_min, i] > 0.0:
                seg = np.arange(t_min + 1, t_max + 1)
                events.append((i, int(seg[np.argmax(np.abs(w[seg, i]))])))
    return events


# ---------------------------------------------------------------------------
# Calcium-style preprocessing helpers
# ---------------------------------------------------------------------------


def estimate_noise_sd(values: np.ndarray, band=(0.5, 1.0)) -> float:
    """Noise SD from the high-frequency periodogram plateau.

    Averages the periodogram over the ``band`` fraction of the Nyquist range
    and rescales; exact for white noise, robust for signals whose power
    concentrates at low frequencies.
    """
    v = np.asarray(values, dtype=float)
    n = v.size
    f = np.fft.rfft(v - v.mean())
    pxx = np.abs(f) ** 2 / n
    k0 = int(band[0] * pxx.size)
    k1 = max(k0 + 1, int(band[1] * pxx.size))
    return math.sqrt(float(np.mean(pxx[k0:k1])))


def estimate_baseline(values: np.ndarray, noise_sd: float) -> float:
    """Baseline as the mean of samples within 3 noise SDs of the minimum."""
    v = np.asarray(values, dtype=float)
    lo = float(np.min(v))
    sel = v <= lo + 3.0 * noise_sd
    return float(np.mean(v[sel]))
