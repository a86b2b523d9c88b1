"""Self-exciting binary point process (discrete Hawkes-like GLM).

The canonical process spikes with probability lambda_i = mu + theta' history
(linear link), or with a log / logistic link applied to the same affine
predictor.  Estimators: maximum likelihood, l1-regularized ML, and greedy
point-process orthogonal matching pursuit, all over the augmented (mu, theta)
parameter with the feasibility box

    0 < pi_min <= mu - 1'theta^-   and   mu + 1'theta^+ <= pi_max < 1/2

enforced for the linear link only; log/logistic fits run unconstrained.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    InvalidArgumentError,
    NumericalFailureError,
    RngSpec,
    SolverTrace,
    TimeSeries,
)
from .ar import covariate_matrix, omp_generic

_LAM_EPS = 1e-12


@dataclass(frozen=True)
class SpikeTrain:
    """Binary sequence with index origin -p+1 (history bins precede time 1)."""

    bits: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1 or b.size < 1:
            raise InvalidArgumentError("SpikeTrain needs a nonempty 1-d array")
        if not np.all((b == 0) | (b == 1)):
            raise InvalidArgumentError("SpikeTrain entries must be 0/1")
        object.__setattr__(self, "bits", b.astype(np.int8))

    def __len__(self):
        return self.bits.size

    @property
    def end_index(self) -> int:
        return self.start_index + self.bits.size - 1

    def event_times(self) -> np.ndarray:
        """Absolute indices of the spikes in the modeled range (times >= 1)."""
        idx = np.flatnonzero(self.bits) + self.start_index
        return idx[idx >= 1]


@dataclass(frozen=True)
class SelfExcitingModel:
    """Baseline mu, history kernel theta, and link for the spiking probability."""

    mu: float
    theta: np.ndarray
    link: str = "linear"
    pi_min: float = 0.01
    pi_max: float = 0.49
    logistic_scale: float = 100.0

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "theta", th)
        if self.link not in ("linear", "log", "logistic"):
            raise InvalidArgumentError(f"unknown link {self.link!r}")
        if self.link == "linear":
            # validity: every reachable rate mu + theta'x lies strictly in (0,1)
            if not (0.0 < self.pi_min <= self.pi_max < 0.5):
                raise InvalidArgumentError("need 0 < pi_min <= pi_max < 1/2")
            neg = float(np.sum(np.minimum(th, 0.0)))
            pos = float(np.sum(np.maximum(th, 0.0)))
            if self.mu + neg <= 0.0:
                raise InvalidArgumentError("rate mu - 1'theta^- must stay positive")
            if self.mu + pos >= 1.0:
                raise InvalidArgumentError("rate mu + 1'theta^+ must stay below 1")

    def satisfies_constraints(self) -> bool:
        """Whether (mu, theta) lies in the estimation box
        pi_min <= mu - 1'theta^- and mu + 1'theta^+ <= pi_max."""
        if self.link != "linear":
            return True
        neg = float(np.sum(np.minimum(self.theta, 0.0)))
        pos = float(np.sum(np.maximum(self.theta, 0.0)))
        return (self.mu + neg >= self.pi_min - 1e-9) and (
            self.mu + pos <= self.pi_max + 1e-9
        )

    @property
    def p(self) -> int:
        return self.theta.size

    def predictor_to_rate(self, eta):
        return _link_value(np.asarray(eta, dtype=float), self.link, self.logistic_scale)


def _link_value(eta, link, c):
    if link == "linear":
        return eta
    if link == "log":
        return np.exp(eta)
    return np.exp(eta) / (c + np.exp(eta))


def _link_deriv(eta, lam, link, c):
    if link == "linear":
        return np.ones_like(lam)
    if link == "log":
        return lam
    return lam * (1.0 - lam)


def _link_inverse(lam, link, c):
    if link == "linear":
        return lam
    if link == "log":
        return math.log(lam)
    return math.log(c * lam / (1.0 - lam))


def stationary_rate(model: SelfExcitingModel) -> float:
    """pi_star = mu / (1 - 1'theta), the stationary spiking probability."""
    tot = float(np.sum(model.theta))
    if tot >= 1.0:
        raise InvalidArgumentError("need 1'theta < 1 for a stationary process")
    return model.mu / (1.0 - tot)


def simulate_sep(model: SelfExcitingModel, n: int, rng: RngSpec) -> SpikeTrain:
    """Sequentially generate spikes x_{-p+1..n}; initial p bits are Bernoulli(mu)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    p = model.p
    g = rng.generator()
    bits = np.zeros(n + p, dtype=np.int8)
    init_rate = model.mu if model.link == "linear" else model.predictor_to_rate(model.mu)
    if not 0.0 < init_rate < 1.0:
        raise InvalidArgumentError("baseline rate outside (0,1)")
    bits[:p] = g.random(p) < init_rate
    nz = np.flatnonzero(model.theta)
    wts = model.theta[nz]
    lags = nz + 1
    u = g.random(n)
    for i in range(n):
        pos = p + i  # position of time i+1
        eta = model.mu + float(wts @ bits[pos - lags])
        lam = float(model.predictor_to_rate(eta))
        if not 0.0 < lam < 1.0:
            raise InvalidArgumentError(
                f"spiking probability {lam:.4g} outside (0,1) at time {i + 1}"
            )
        bits[pos] = u[i] < lam
    return SpikeTrain(bits, start_index=-p + 1)


def _design(spikes: SpikeTrain, p: int) -> tuple:
    ts = TimeSeries(spikes.bits.astype(float), start_index=spikes.start_index)
    return covariate_matrix(ts, p)


def rate_sequence(model: SelfExcitingModel, spikes: SpikeTrain) -> np.ndarray:
    """lambda_1..lambda_n implied by the model along an observed train."""
    H, _ = _design(spikes, model.p)
    eta = model.mu + H @ model.theta
    return np.asarray(model.predictor_to_rate(eta))[::-1]


def negloglik(
    model: SelfExcitingModel, spikes: SpikeTrain, statistics: str = "bernoulli"
) -> float:
    """Mean negative log-likelihood over the n modeled bins."""
    val, _, _ = negloglik_grad(model, spikes, statistics)
    return val


def negloglik_grad(
    model: SelfExcitingModel, spikes: SpikeTrain, statistics: str = "bernoulli"
) -> tuple:
    """Negative log-likelihood with its gradient in (mu, theta).

    Returns ``(value, dmu, dtheta)``.  Invalid rates raise a domain error
    naming the offending time bin.
    """
    if statistics not in ("bernoulli", "poisson"):
        raise InvalidArgumentError("statistics must be 'bernoulli' or 'poisson'")
    H, xv = _design(spikes, model.p)
    n = xv.size
    eta = model.mu + H @ model.theta
    lam = np.asarray(model.predictor_to_rate(eta), dtype=float)
    bad = ~(lam > 0.0) if statistics == "poisson" else ~((lam > 0.0) & (lam < 1.0))
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InvalidArgumentError(
            f"rate {lam[i]:.4g} outside the valid domain at time {n - i}"
        )
    dlam = _link_deriv(eta, lam, model.link, model.logistic_scale)
    if statistics == "bernoulli":
        value = -float(np.mean(xv * np.log(lam) + (1.0 - xv) * np.log(1.0 - lam)))
        c = -(xv - lam) / (lam * (1.0 - lam)) * dlam / n
    else:
        value = -float(np.mean(xv * np.log(lam) - lam))
        c = -(xv / lam - 1.0) * dlam / n
    return value, float(np.sum(c)), H.T @ c


def _project_star(mu, theta, pi_min, pi_max, iters=100, tol=1e-12):
    """Euclidean projection of (mu, theta) onto the feasibility box.

    Each of the two constraint sets has a closed-form projection found by
    active-set enumeration over the sorted breakpoints; Dykstra's algorithm
    combines them.
    """

    def proj_upper(m, th):
        # {mu + sum(max(theta,0)) <= pi_max}; multiplier nu >= 0 shifts mu down
        # and shrinks positive coordinates toward zero.
        pos = th[th > 0.0]
        g0 = m + float(np.sum(pos))
        if g0 <= pi_max + tol:
            return m, th

        def g(nu):
            return m - nu + float(np.sum(np.maximum(pos - nu, 0.0)))

        lo, hi = 0.0, g0 - pi_max  # slope <= -1 everywhere
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            if g(mid) > pi_max:
                lo = mid
            else:
                hi = mid
        active = pos > 0.5 * (lo + hi)
        nu = (m + float(np.sum(pos[active])) - pi_max) / (1.0 + np.count_nonzero(active))
        new_th = np.where(th > 0.0, np.maximum(th - nu, 0.0), th)
        return m - nu, new_th

    def proj_lower(m, th):
        # {mu + sum(min(theta,0)) >= pi_min}; nu >= 0 shifts mu up and shrinks
        # negative coordinates toward zero.
        neg = -th[th < 0.0]
        g0 = m - float(np.sum(neg))
        if g0 >= pi_min - tol:
            return m, th

        def g(nu):
            return m + nu - float(np.sum(np.maximum(neg - nu, 0.0)))

        lo, hi = 0.0, pi_min - g0
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            if g(mid) < pi_min:
                lo = mid
            else:
                hi = mid
        active = neg > 0.5 * (lo + hi)
        nu = (pi_min - m + float(np.sum(neg[active]))) / (1.0 + np.count_nonzero(active))
        new_th = np.where(th < 0.0, np.minimum(th + nu, 0.0), th)
        return m + nu, new_th

    x = np.concatenate(([mu], theta))
    pq = np.zeros_like(x)
    qq = np.zeros_like(x)
    for _ in range(iters):
        prev = x.copy()
        ym, yth = proj_lower(x[0] + pq[0], x[1:] + pq[1:])
        y = np.concatenate(([ym], yth))
        pq = x + pq - y
        zm, zth = proj_upper(y[0] + qq[0], y[1:] + qq[1:])
        z = np.concatenate(([zm], zth))
        qq = y + qq - z
        x = z
        if np.max(np.abs(x - prev)) < tol:
            break
    return float(x[0]), x[1:]


def _safe_objective(H, xv, mu, theta, link, c, statistics, gamma):
    eta = mu + H @ theta
    lam = np.clip(_link_value(eta, link, c), _LAM_EPS, 1.0 - _LAM_EPS)
    if statistics == "bernoulli":
        val = -float(np.mean(xv * np.log(lam) + (1.0 - xv) * np.log(1.0 - lam)))
    else:
        val = -float(np.mean(xv * np.log(lam) - lam))
    return val + gamma * float(np.sum(np.abs(theta)))


def _safe_grad(H, xv, mu, theta, link, c, statistics):
    n = xv.size
    eta = mu + H @ theta
    lam = np.clip(_link_value(eta, link, c), _LAM_EPS, 1.0 - _LAM_EPS)
    dlam = _link_deriv(eta, lam, link, c)
    if statistics == "bernoulli":
        cc = -(xv - lam) / (lam * (1.0 - lam)) * dlam / n
    else:
        cc = -(xv / lam - 1.0) * dlam / n
    return float(np.sum(cc)), H.T @ cc


def _fit_engine(
    spikes: SpikeTrain,
    p: int,
    gamma: float,
    link: str,
    statistics: str,
    pi_min: float,
    pi_max: float,
    fixed_mu=None,
    support_idx=None,
    mu0=None,
    theta0=None,
    max_iter: int = 3000,
    tol: float = 1e-10,
) -> tuple:
    """Monotone proximal-gradient fit of (mu, theta); returns (mu, theta, trace)."""
    H, xv = _design(spikes, p)
    c = 100.0
    rate = max(float(np.mean(xv)), 1e-4)
    if theta0 is None:
        theta = np.zeros(p)
    else:
        theta = theta0.astype(float).copy()
    if fixed_mu is not None:
        mu = float(fixed_mu)
    elif mu0 is not None:
        mu = float(mu0)
    else:
        mu = _link_inverse(min(max(rate / 2.0, 1e-4), 0.45), link, c)
    mask = np.zeros(p, dtype=bool)
    if support_idx is None:
        mask[:] = True
    else:
        mask[np.asarray(support_idx, dtype=int)] = True
        theta[~mask] = 0.0
    constrained = link == "linear"
    if constrained:
        lo = max(pi_min, 1e-6)
        mu = min(max(mu, lo), pi_max)
        mu, theta = _project_star(mu, theta, lo, pi_max)
        theta[~mask] = 0.0

    trace = SolverTrace(tolerance_used=tol)
    obj = _safe_objective(H, xv, mu, theta, link, c, statistics, gamma)
    trace.record(obj)
    step = 1.0
    for _ in range(max_iter):
        gmu, gth = _safe_grad(H, xv, mu, theta, link, c, statistics)
        gth[~mask] = 0.0
        if fixed_mu is not None:
            gmu = 0.0
        improved = False
        for _ in range(60):
            mu_new = mu - step * gmu
            th_new = theta - step * gth
            if gamma > 0.0:
                th_new = np.sign(th_new) * np.maximum(np.abs(th_new) - step * gamma, 0.0)
            if constrained:
                mu_new, th_new = _project_star(mu_new, th_new, max(pi_min, 1e-6), pi_max)
            if fixed_mu is not None:
                mu_new = float(fixed_mu)
            th_new[~mask] = 0.0
            new_obj = _safe_objective(H, xv, mu_new, th_new, link, c, statistics, gamma)
            if new_obj <= obj + 1e-15:
                improved = True
                break
            step *= 0.5
        if not improved:
            trace.converged = True
            break
        delta = abs(obj - new_obj)
        move = max(abs(mu_new - mu), float(np.max(np.abs(th_new - theta))) if p else 0.0)
        mu, theta, obj = mu_new, th_new, new_obj
        trace.record(obj)
        # fixed-point residual of the projected proximal step; the objective
        # can plateau while the iterate still drifts along flat directions
        if delta <= tol * (1.0 + abs(obj)) and move / step <= 1e-7:
            trace.converged = True
            break
        step = min(step * 2.0, 1e6)
    if not trace.converged:
        trace.flag("proximal gradient hit max_iter; returning best iterate")
    return mu, theta, trace


def _make_model(mu, theta, link, pi_min, pi_max) -> SelfExcitingModel:
    if link == "linear":
        return SelfExcitingModel(mu, theta, link, pi_min=pi_min, pi_max=pi_max)
    return SelfExcitingModel(mu, theta, link)


def fit_ml(
    spikes: SpikeTrain,
    p: int,
    link: str = "linear",
    statistics: str = "bernoulli",
    pi_min: float = 0.01,
    pi_max: float = 0.49,
    **kw,
) -> tuple:
    """Maximum-likelihood fit of (mu, theta); returns (model, trace)."""
    mu, theta, trace = _fit_engine(
        spikes, p, 0.0, link, statistics, pi_min, pi_max, **kw
    )
    return _make_model(mu, theta, link, pi_min, pi_max), trace


def fit_l1_ml(
    spikes: SpikeTrain,
    p: int,
    gamma_n: float,
    link: str = "linear",
    statistics: str = "bernoulli",
    pi_min: float = 0.01,
    pi_max: float = 0.49,
    **kw,
) -> tuple:
    """l1-regularized ML fit; returns (model, trace)."""
    if gamma_n < 0:
        raise InvalidArgumentError("gamma_n must be >= 0")
    mu, theta, trace = _fit_engine(
        spikes, p, gamma_n, link, statistics, pi_min, pi_max, **kw
    )
    return _make_model(mu, theta, link, pi_min, pi_max), trace


def pomp(
    spikes: SpikeTrain,
    p: int,
    s_star: int,
    link: str = "linear",
    statistics: str = "bernoulli",
    pi_min: float = 0.01,
    pi_max: float = 0.49,
) -> tuple:
    """Point-process OMP: greedy support growth with restricted ML refits.

    Returns ``(model, trace)`` with an exactly-``s_star``-sparse theta.
    """
    if s_star < 0:
        raise InvalidArgumentError("s_star must be >= 0")
    H, xv = _design(spikes, p)
    rate = float(np.mean(xv))
    if s_star == 0:
        lam = min(max(rate, 1e-6), 1.0 - 1e-6)
        if link == "linear":
            mu = min(max(lam, pi_min), pi_max)
        else:
            mu = _link_inverse(lam, link, 100.0)
        return _make_model(mu, np.zeros(p), link, pi_min, pi_max), SolverTrace(converged=True)
    state = {"mu": None}

    def grad(theta):
        mu_cur = state["mu"]
        if mu_cur is None:
            mu_cur = _link_inverse(min(max(rate / 2.0, 1e-4), 0.45), link, 100.0)
        _, gth = _safe_grad(H, xv, mu_cur, theta, link, 100.0, statistics)
        return gth

    def restricted(idx):
        last_exc = None
        for attempt in range(2):
            try:
                mu_hat, th_hat, tr = _fit_engine(
                    spikes, p, 0.0, link, statistics, pi_min, pi_max,
                    support_idx=idx,
                    theta0=None if attempt == 0 else np.zeros(p),
                    max_iter=1500,
                )
                state["mu"] = mu_hat
                state["theta"] = th_hat
                return th_hat, tr.objective_per_iter[-1]
            except (InvalidArgumentError, NumericalFailureError) as exc:
                last_exc = exc
        raise NumericalFailureError(f"restricted fit failed on {idx}") from last_exc

    theta, sel, trace = omp_generic(grad, restricted, p, s_star)
    return _make_model(state["mu"], theta, link, pi_min, pi_max), trace


def sep_psd(model: SelfExcitingModel, omega) -> tuple:
    """Continuous PSD of the canonical process plus the omega=0 atom mass.

    S(w) = (pi* - pi*^2) / (2 pi (1 - 1'theta)^2 |1 - Theta(w)|^2) with an
    additional point mass pi*^2 at w = 0 (returned separately).
    """
    if model.link != "linear":
        raise InvalidArgumentError("spectral formula holds for the linear link")
    tot = float(np.sum(model.theta))
    if tot >= 1.0:
        raise InvalidArgumentError("need 1'theta < 1")
    pi_star = stationary_rate(model)
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    lags = np.arange(1, model.p + 1)
    tf = 1.0 - np.exp(-1j * np.outer(om, lags)) @ model.theta
    cont = (pi_star - pi_star**2) / (
        2.0 * np.pi * (1.0 - tot) ** 2 * np.abs(tf) ** 2
    )
    cont = cont if np.ndim(omega) else float(cont[0])
    return cont, pi_star**2


def sep_psd_lower_bound(model: SelfExcitingModel) -> float:
    """kappa_l = pi*(1 - pi*) / (2 pi (1 + 2 pi_max)^4), a floor on the PSD."""
    pi_star = stationary_rate(model)
    return pi_star * (1.0 - pi_star) / (2.0 * np.pi * (1.0 + 2.0 * model.pi_max) ** 4)
