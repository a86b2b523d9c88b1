import math
import time

import numpy as np
import pytest

from sparsedyn import InvalidArgumentError, NumericalFailureError, RngSpec
from sparsedyn import fcss
from sparsedyn.fcss import (
    FcssResult,
    StateSpaceProblem,
    bpdn_frame,
    detect_events,
    dynamic_cs_objective,
    eps_l1,
    estimate_baseline,
    estimate_noise_sd,
    fcss_solve,
    fixed_interval_smoother,
    innovations,
    phi_psi_bounds,
    prune_innovations,
    simulate_spindles,
    simulate_statespace,
    spindle_solve,
    spindle_transition,
    update_theta,
    update_theta_scalar,
)


def dense_gaussian_oracle(theta, q, A, y, r):
    """Joint-Gaussian posterior over the stacked states via the explicit
    (Tp) x (Tp) precision matrix (independent of the smoother recursions)."""
    T, p = q.shape
    th = theta * np.eye(p) if np.isscalar(theta) else np.asarray(theta)
    n = T * p
    prec = np.zeros((n, n))
    lin = np.zeros(n)
    for t in range(T):
        qi = np.diag(1.0 / q[t])
        sl = slice(t * p, (t + 1) * p)
        prec[sl, sl] += qi
        if t + 1 < T:
            sl2 = slice((t + 1) * p, (t + 2) * p)
            qn = np.diag(1.0 / q[t + 1])
            prec[sl, sl] += th.T @ qn @ th
            prec[sl, sl2] += -th.T @ qn
            prec[sl2, sl] += -qn @ th
        a = np.eye(p) if A[t] is None else A[t]
        prec[sl, sl] += a.T @ a / r[t]
        lin[sl] += a.T @ y[t] / r[t]
    cov = np.linalg.inv(prec)
    mean = (cov @ lin).reshape(T, p)
    return mean, cov


def test_objective_perturbation_floor():
    p, T, s, eps = 3, 4, 2.0, 1e-3
    prob = StateSpaceProblem(
        y=[np.zeros(p)] * T, A=None, p=p, sigma2=1.0, s=s, lam=2.0, eps=eps,
        theta=0.5,
    )
    val = dynamic_cs_objective(prob, np.zeros((T, p)))
    assert val == pytest.approx(2.0 * T * p * eps / math.sqrt(s))


def test_objective_eps_limit_bound():
    g = np.random.default_rng(0)
    p, T = 4, 5
    x = g.normal(size=(T, p))
    y = [g.normal(size=p) for _ in range(T)]
    exact = None
    for eps in (1e-6, 1e-12):
        prob = StateSpaceProblem(y=y, A=None, p=p, sigma2=1.0, s=1.0, lam=1.0,
                                 eps=eps, theta=0.3)
        w = innovations(0.3, x)
        l1 = np.sum(np.abs(w))
        data = sum(float((y[t] - x[t]) @ (y[t] - x[t])) for t in range(T)) / (2 * p)
        exact = l1 + data
        assert 0.0 <= dynamic_cs_objective(prob, x) - exact < 1.0 * T * p * eps


def test_objective_hand_example():
    # p=1, theta=0.5, x=(1, 1.5), y=x, sigma=1, n_t=1, lam=1, s=1:
    # l1 term |1| + |1.5 - 0.5| = 2, data term 0
    prob = StateSpaceProblem(
        y=[np.array([1.0]), np.array([1.5])], A=None, p=1, sigma2=1.0, s=1.0,
        lam=1.0, eps=1e-15, theta=0.5,
    )
    val = dynamic_cs_objective(prob, np.array([[1.0], [1.5]]))
    assert val == pytest.approx(2.0, abs=1e-10)


def test_smoother_no_data_returns_prior_mean():
    T, p = 4, 3
    q = np.full((T, p), 0.5)
    y = [np.ones(p)] * T
    sm = fixed_interval_smoother(0.6, q, [None] * T, y, np.full(T, 1e12))
    assert np.max(np.abs(sm.means)) < 1e-9


def test_smoother_measurement_dominated():
    T, p = 5, 2
    q = np.full((T, p), 1.0)
    g = np.random.default_rng(1)
    y = [g.normal(size=p) for _ in range(T)]
    sm = fixed_interval_smoother(0.0, q, [None] * T, y, np.full(T, 1e-12))
    assert np.max(np.abs(sm.means - np.stack(y))) < 1e-5


def test_smoother_matches_dense_oracle_random_instances():
    g = np.random.default_rng(2)
    for trial in range(10):
        p = int(g.integers(1, 4))
        T = int(g.integers(2, 6))
        theta = g.uniform(-0.9, 0.9) if trial % 2 == 0 else None
        if theta is None:
            m = g.normal(size=(p, p))
            theta = 0.8 * m / max(np.linalg.norm(m, 2), 1e-9)
        q = g.uniform(0.2, 2.0, size=(T, p))
        A = [None if g.random() < 0.3 else g.normal(size=(int(g.integers(1, 4)), p))
             for _ in range(T)]
        y = [g.normal(size=p if a is None else a.shape[0]) for a in A]
        r = g.uniform(0.3, 2.0, size=T)
        sm = fixed_interval_smoother(theta, q, A, y, r, check_psd=True)
        mean, cov = dense_gaussian_oracle(theta, q, A, y, r)
        assert np.max(np.abs(sm.means - mean)) < 1e-8
        for t in range(T):
            blk = cov[t * p : (t + 1) * p, t * p : (t + 1) * p]
            got = np.diag(sm.covs[t]) if sm.diagonal else sm.covs[t]
            want = np.diag(np.diag(blk)) if sm.diagonal else blk
            assert np.max(np.abs(got - want)) < 1e-8
        for t in range(T - 1):
            blk = cov[t * p : (t + 1) * p, (t + 1) * p : (t + 2) * p]
            got = np.diag(sm.lag_one[t]) if sm.diagonal else sm.lag_one[t]
            want = np.diag(np.diag(blk)) if sm.diagonal else blk
            assert np.max(np.abs(got - want)) < 1e-8


def test_scalar_and_full_paths_agree():
    g = np.random.default_rng(3)
    T, p = 6, 3
    q = g.uniform(0.2, 1.5, size=(T, p))
    y = [g.normal(size=p) for _ in range(T)]
    r = g.uniform(0.5, 1.5, size=T)
    fast = fixed_interval_smoother(0.7, q, [None] * T, y, r)
    eye = [np.eye(p)] * T
    full = fixed_interval_smoother(0.7 * np.eye(p), q, eye, y, r)
    assert np.max(np.abs(fast.means - full.means)) < 1e-8
    assert np.max(np.abs(fast.covs - np.einsum("tii->ti", full.covs))) < 1e-8
    assert np.max(np.abs(fast.lag_one - np.einsum("tii->ti", full.lag_one))) < 1e-8


def test_update_theta_hand_example_rescale():
    # constant smoothed states, zero covariances: closed form gives 1,
    # rescaled to 0.99 with a flag
    T = 6
    means = np.ones((T, 1)) * 2.0
    covs = np.zeros((T, 1, 1))
    lag = np.zeros((T - 1, 1, 1))
    sm = fcss.SmootherState(means, covs, lag, diagonal=False)
    th, flags = update_theta(sm, np.ones((T, 1)))
    assert th[0, 0] == pytest.approx(0.99)
    assert any("rescaled" in f for f in flags)
    th_s, flags_s = update_theta_scalar(sm, np.ones((T, 1)))
    assert th_s == pytest.approx(0.99)


def test_update_theta_zero_numerator():
    T = 5
    g = np.random.default_rng(4)
    means = np.zeros((T, 2))
    covs = np.stack([np.eye(2)] * T)
    lag = np.zeros((T - 1, 2, 2))
    sm = fcss.SmootherState(means, covs, lag, diagonal=False)
    th, _ = update_theta(sm, np.ones((T, 2)))
    assert np.allclose(th, 0.0)


def test_update_theta_recovers_scalar_dynamics():
    # spike-like data generated with theta=0.95, p=1, SNR 20 dB:
    # converged estimate in [0.9, 0.99]
    T = 500
    g = RngSpec(5).generator()
    w = np.zeros((T, 1))
    events = g.choice(T, size=25, replace=False)
    w[events, 0] = g.uniform(0.5, 1.5, size=25)
    x = np.zeros((T, 1))
    prev = 0.0
    for t in range(T):
        prev = 0.95 * prev + w[t, 0]
        x[t, 0] = prev
    sigma2 = np.mean(x**2) / 100.0  # 20 dB
    y = x + RngSpec(6).generator().normal(0, math.sqrt(sigma2), size=x.shape)
    prob = StateSpaceProblem(y=list(y), A=None, p=1, sigma2=sigma2, s=1.0,
                             lam=0.5, theta=0.0)
    res = fcss_solve(prob, estimate_theta=True, max_outer=40, tol=1e-8)
    assert 0.9 <= float(res.theta_hat) <= 0.99


def test_fcss_zero_observations_zero_solution():
    prob = StateSpaceProblem(y=[np.zeros(3)] * 5, A=None, p=3, sigma2=1.0,
                             s=2.0, lam=1.0, theta=0.4)
    res = fcss_solve(prob)
    assert np.max(np.abs(res.x_hat)) < 1e-9
    assert np.max(np.abs(res.w_hat)) < 1e-9


def test_fcss_objective_monotone_and_converges():
    rng = RngSpec(7)
    p, T = 20, 40
    x, w = simulate_statespace(p, T, 3, 2, 0.9, rng)
    g = RngSpec(8).generator()
    y = x + g.normal(0, 0.05, size=x.shape)
    prob = StateSpaceProblem(y=list(y), A=None, p=p, sigma2=0.0025, s=[3] + [2] * (T - 1),
                             lam=0.05, theta=0.9)
    res = fcss_solve(prob, max_outer=60, tol=1e-8)
    obj = np.array(res.trace.objective_per_iter)
    assert np.all(np.diff(obj) <= 1e-9 * np.maximum(np.abs(obj[:-1]), 1.0))
    assert res.trace.converged


def test_fcss_denoising_recovers_innovation_frames():
    # denoising run at the reference scale p=200, T=200 (diagonal fast path):
    # every true spike among the top-magnitude innovation estimates
    p, T = 200, 200
    g = RngSpec(9).generator()
    w = np.zeros((T, p))
    flat = g.choice(T * p, size=30, replace=False)
    events = {(int(i // p), int(i % p)) for i in flat}
    for t, j in events:
        w[t, j] = g.uniform(1.0, 2.0)
    th = 0.95
    x = np.zeros((T, p))
    prev = np.zeros(p)
    for t in range(T):
        prev = th * prev + w[t]
        x[t] = prev
    sigma2 = 1e-4
    y = x + RngSpec(10).generator().normal(0, math.sqrt(sigma2), size=x.shape)
    prob = StateSpaceProblem(y=list(y), A=None, p=p, sigma2=sigma2, s=2.0,
                             lam=0.5, eps=1e-10, theta=th)
    res = fcss_solve(prob, max_outer=60, tol=1e-10)
    top = np.argsort(-np.abs(res.w_hat).ravel())[: len(events)]
    found = {(int(i // p), int(i % p)) for i in top}
    assert found == events


def test_fcss_aborts_on_forced_objective_increase(monkeypatch):
    # sabotage the weight computation to break the MM majorization
    rng = RngSpec(11)
    p, T = 5, 12
    x, w = simulate_statespace(p, T, 2, 1, 0.8, rng)
    y = x + RngSpec(12).generator().normal(0, 0.1, size=x.shape)
    prob = StateSpaceProblem(y=list(y), A=None, p=p, sigma2=0.01, s=2.0,
                             lam=0.5, theta=0.8)
    calls = {"n": 0}
    real = fcss._weights_from

    def sabotaged(problem, w_hat=None):
        calls["n"] += 1
        out = real(problem, w_hat)
        if calls["n"] >= 3:
            out = out * (1.0 + 10.0 * np.cos(np.arange(out.size)).reshape(out.shape) ** 2)
        return out

    monkeypatch.setattr(fcss, "_weights_from", sabotaged)
    with pytest.raises(NumericalFailureError):
        fcss_solve(prob, max_outer=30, tol=1e-12)


def test_noiseless_recovery_small_scale():
    # theorem regime at desk scale: exact sparsity, RIP-scale Gaussian A,
    # zero noise => relative recovery error < 1e-3
    p, T, s1, s2, th = 50, 30, 4, 2, 0.95
    x, w = simulate_statespace(p, T, s1, s2, th, RngSpec(13))
    g = RngSpec(14).generator()
    n1 = int(math.ceil(4 * s1 * math.log(p)))
    n2 = int(math.ceil(4 * s2 * math.log(p)))
    A1 = g.normal(0, 1 / math.sqrt(n1), size=(n1, p))
    A = [A1] + [A1[:n2]] * (T - 1)
    y = [A[t] @ x[t] for t in range(T)]
    prob = StateSpaceProblem(y=y, A=A, p=p, sigma2=1e-8, s=[s1] + [s2] * (T - 1),
                             lam=1.0, theta=th)
    res = fcss_solve(prob, max_outer=80, tol=1e-12)
    err = np.mean(np.linalg.norm(x - res.x_hat, axis=1))
    scale = np.mean(np.linalg.norm(x, axis=1))
    assert err / scale < 1e-3


def test_spindle_constraint_mapping_example():
    # a=0.97, f=13, fs=200: phi = 1.7815..., psi = 0.9409 inside the band
    a, f, fs = 0.97, 13.0, 200.0
    phi = 2 * a * math.cos(2 * math.pi * f / fs)
    psi = a * a
    assert phi == pytest.approx(1.7815, abs=2e-3)
    assert psi == pytest.approx(0.9409)
    bounds = phi_psi_bounds((0.95, 0.99), (12.0, 14.0), fs)
    lo, hi = bounds["phi2_over_psi"]
    assert lo * psi <= phi**2 <= hi * psi
    assert bounds["psi"][0] <= psi <= bounds["psi"][1]


def test_spindle_transition_matches_recursion():
    th = spindle_transition(0.95, 13.0, 200.0)
    # x_t = phi x_{t-1} - psi x_{t-2}
    assert th[0, 0] == pytest.approx(2 * 0.95 * math.cos(2 * math.pi * 13 / 200))
    assert th[0, 1] == pytest.approx(-0.95**2)
    assert np.allclose(th[1], [1.0, 0.0])


def test_spindle_zero_input_convention():
    res = spindle_solve(np.zeros(100), fs=200.0)
    assert res.a_hat == pytest.approx(0.97)
    assert res.f_hat == pytest.approx(13.0)
    assert np.max(np.abs(res.w_hat)) == 0.0
    assert detect_events(res.w_hat[:, 0]).size == 0


def test_spindle_detection_noiseless():
    onsets = [40, 160]
    clean, _ = simulate_spindles(300, 200.0, 13.0, 0.95, onsets, [1.5, 1.0], 0.0,
                                 RngSpec(15))
    res = spindle_solve(clean, fs=200.0, sigma2=1e-4, lam=20.0, max_outer=30)
    det = detect_events(res.w_hat[:, 0])
    assert all(min(abs(det - t0)) <= 2 for t0 in onsets)
    assert abs(res.f_hat - 13.0) < 0.3
    assert abs(res.a_hat - 0.95) < 0.01


def test_prune_keeps_exact_spikes_noiseless():
    p, T = 4, 60
    w = np.zeros((T, p))
    w[10, 1] = 1.5
    w[35, 2] = 2.0
    th = 0.9
    x = np.zeros((T, p))
    prev = np.zeros(p)
    for t in range(T):
        prev = th * prev + w[t]
        x[t] = prev
    result = FcssResult(x, w, th, None, state_std=np.full((T, p), 1e-6))
    events = prune_innovations(result, alpha=0.05)
    assert set(events) == {(1, 10), (2, 35)}


def test_prune_flat_noise_no_events():
    # flat signal with uncertain smoothed states: wide intervals kill events
    g = np.random.default_rng(16)
    reject = 0
    for trial in range(100):
        x = g.normal(0, 0.05, size=(40, 1))
        w = innovations(0.5, x)
        res = FcssResult(x, w, 0.5, None, state_std=np.full((40, 1), 0.2))
        if not prune_innovations(res, alpha=0.05):
            reject += 1
    assert reject >= 95


def test_prune_requires_intervals():
    res = FcssResult(np.zeros((3, 1)), np.zeros((3, 1)), 0.5, None, state_std=None)
    with pytest.raises(InvalidArgumentError):
        prune_innovations(res)


def test_bpdn_frame_matches_lasso_objective():
    g = np.random.default_rng(17)
    A = g.normal(size=(20, 8))
    xt = np.zeros(8)
    xt[[1, 5]] = [2.0, -1.0]
    y = A @ xt + 0.01 * g.normal(size=20)
    lam = 0.1
    xb = bpdn_frame(A, y, lam)

    def obj(v):
        r = y - A @ v
        return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(v)))

    # proximal-gradient oracle
    L = np.linalg.norm(A, 2) ** 2
    v = np.zeros(8)
    for _ in range(20000):
        z = v - (A.T @ (A @ v - y)) / L
        v = np.sign(z) * np.maximum(np.abs(z) - lam / L, 0.0)
    assert obj(xb) <= obj(v) + 1e-6


def test_noise_sd_estimate_white_noise():
    g = np.random.default_rng(18)
    v = g.normal(0, 0.3, size=20000)
    assert estimate_noise_sd(v) == pytest.approx(0.3, rel=0.05)


def test_baseline_estimate():
    g = np.random.default_rng(19)
    base = 2.0
    v = base + np.abs(g.normal(0, 0.01, size=500))
    v[50:60] += 5.0  # transient
    sd = 0.01
    assert estimate_baseline(v, sd) == pytest.approx(base, abs=0.05)


def test_runtime_linear_in_T_smoke():
    # doubling T should cost at most ~2.5x (generous smoke bound)
    p = 8
    x1, _ = simulate_statespace(p, 100, 2, 1, 0.9, RngSpec(20))
    x2, _ = simulate_statespace(p, 200, 2, 1, 0.9, RngSpec(21))

    def run(x, T):
        y = list(x + 0.01 * RngSpec(22).generator().normal(size=x.shape))
        prob = StateSpaceProblem(y=y, A=None, p=p, sigma2=1e-4, s=2.0, lam=0.5,
                                 theta=0.9)
        t0 = time.perf_counter()
        fcss_solve(prob, max_outer=10, tol=0.0)
        return time.perf_counter() - t0

    run(x1, 100)  # warm-up
    t_small = min(run(x1, 100) for _ in range(3))
    t_big = min(run(x2, 200) for _ in range(3))
    assert t_big <= 2.5 * t_small + 0.05
