import math

import numpy as np
import pytest

from sparsedyn import InvalidArgumentError, NumericalFailureError, RngSpec, TimeSeries
from sparsedyn import ar
from sparsedyn.ar import (
    ArModel,
    covariance_eigenvalue_bounds,
    covariate_matrix,
    exact_autocovariance,
    exact_covariance,
    lasso_ls,
    lasso_yw,
    omp_generic,
    omp_iteration_budget,
    omp_ls,
    psd,
    reframe,
    sample_covariance,
    simulate_ar,
    spectral_spread,
    yule_walker,
)


def _prox_grad_lasso(X, y, gamma, iters=200000, tol=1e-14):
    """Independent proximal-gradient oracle for
    (1/n)||y - X theta||^2 + gamma ||theta||_1."""
    n, p = X.shape
    L = 2.0 / n * np.linalg.norm(X, 2) ** 2
    step = 1.0 / L
    theta = np.zeros(p)
    for _ in range(iters):
        grad = (2.0 / n) * (X.T @ (X @ theta - y))
        z = theta - step * grad
        new = np.sign(z) * np.maximum(np.abs(z) - step * gamma, 0.0)
        if np.max(np.abs(new - theta)) < tol:
            theta = new
            break
        theta = new
    return theta


def test_unstable_model_rejected():
    with pytest.raises(InvalidArgumentError):
        ArModel([0.7, 0.4])


def test_simulate_white_noise_autocovariance():
    model = ArModel([0.0], 1.0)
    ts = simulate_ar(model, 100000, RngSpec(0))
    v = ts.values
    r1 = np.dot(v[:-1], v[1:]) / v.size
    assert abs(r1) < 0.02


def test_simulate_ar1_matches_closed_form_r0():
    # closed form for AR(1): r_0 = sigma^2 / (1 - theta^2)
    model = ArModel([0.5], 1.0)
    ts = simulate_ar(model, 100000, RngSpec(1))
    r0 = np.mean(ts.values**2)
    assert abs(r0 - 1.0 / 0.75) < 0.05 * (1.0 / 0.75)


def test_simulate_uniform_innovations_variance():
    model = ArModel([0.0], 2.0)
    ts = simulate_ar(model, 200000, RngSpec(2), innovation="uniform")
    assert np.mean(ts.values**2) == pytest.approx(2.0, rel=0.03)


def test_psd_flat_for_white_noise():
    model = ArModel([0.0], 3.0)
    om = np.linspace(-np.pi, np.pi, 7)
    assert np.allclose(psd(model, om), 3.0 / (2 * np.pi))


def test_psd_ar1_dc_to_nyquist_ratio():
    model = ArModel([0.5])
    assert psd(model, 0.0) / psd(model, np.pi) == pytest.approx(9.0)


def test_psd_symmetry_and_nonnegativity():
    model = ArModel([0.3, -0.15, 0.05])
    om = np.linspace(0, np.pi, 50)
    assert np.all(psd(model, om) >= 0)
    assert np.allclose(psd(model, om), psd(model, -om))


def test_psd_bounds_at_margin():
    # ||theta||_1 = 1 - eta  =>  inf S >= sigma^2/(8 pi), sup S <= sigma^2/(2 pi eta^2)
    model = ArModel([0.3, -0.2], 2.0)  # eta = 0.5
    om = np.linspace(-np.pi, np.pi, 2000)
    s = psd(model, om)
    lo, hi = covariance_eigenvalue_bounds(model)
    assert np.min(s) >= lo - 1e-12
    assert np.max(s) <= hi + 1e-12


def test_omp_budget_value():
    assert omp_iteration_budget(2.0, 3) == math.ceil(24 * math.log(120))


def test_covariate_matrix_layout():
    # times -1..3 for p=2: columns are lag-1 then lag-2 histories
    ts = TimeSeries([10.0, 20.0, 30.0, 40.0, 50.0], start_index=-1)
    X, y = covariate_matrix(ts, 2)
    assert np.array_equal(y, [50.0, 40.0, 30.0])
    assert np.array_equal(X, [[40.0, 30.0], [30.0, 20.0], [20.0, 10.0]])


def test_exact_autocovariance_ar1():
    model = ArModel([0.5], 1.0)
    r = exact_autocovariance(model, 4)
    expect = np.array([0.5**k / 0.75 for k in range(5)])
    assert np.allclose(r, expect)


def test_exact_covariance_eigenvalues_in_interval():
    from sparsedyn.ar import normalized_covariance_eigenvalues

    for seed in range(5):
        g = RngSpec(seed).generator()
        theta = g.uniform(-0.25, 0.25, size=2)
        theta *= 0.5 / max(np.sum(np.abs(theta)), 1e-9)
        model = ArModel(theta, 1.0)  # eta = 0.5
        lo, hi = covariance_eigenvalue_bounds(model)
        eig = normalized_covariance_eigenvalues(model, 24)
        assert eig.min() >= lo and eig.max() <= hi


def test_sample_covariance_zero_and_white():
    zero = TimeSeries(np.zeros(30), start_index=-4)
    assert np.allclose(sample_covariance(zero, 5), 0.0)
    ts = simulate_ar(ArModel([0.0], 1.0), 100000, RngSpec(3))
    R = sample_covariance(reframe(ts, 4), 4)
    assert np.allclose(np.diag(R), 1.0, atol=0.05)
    off = R[~np.eye(4, dtype=bool)]
    assert np.max(np.abs(off)) < 0.05


def test_sample_covariance_eigenvalues_near_interval():
    # per-radian normalization, with a documented finite-n slack of 0.02
    model = ArModel([0.3, -0.2], 1.0)  # ||theta||_1 = 0.5
    ts = simulate_ar(model, 100000, RngSpec(4))
    R = sample_covariance(reframe(ts, 20), 20)
    eig = np.linalg.eigvalsh(R) / (2 * np.pi)
    lo = 1.0 / (8 * np.pi)
    hi = 1.0 / (2 * np.pi * 0.25)
    assert eig.min() >= lo - 0.02
    assert eig.max() <= hi + 0.02


def test_yule_walker_white_noise_limit():
    ts = simulate_ar(ArModel([0.0], 1.0), 100000, RngSpec(5))
    theta, sigma2 = yule_walker(reframe(ts, 4), 4)
    assert np.max(np.abs(theta)) < 0.05
    assert sigma2 == pytest.approx(1.0, rel=0.05)


def test_yule_walker_ar1_consistency():
    ts = simulate_ar(ArModel([0.5], 1.0), 100000, RngSpec(6))
    theta, _ = yule_walker(ts, 1)
    assert abs(theta[0] - 0.5) < 0.02


def test_yule_walker_stability_guarantee():
    for seed in range(5):
        ts = simulate_ar(ArModel([0.4, -0.3, 0.1], 1.0), 400, RngSpec(seed))
        theta, _ = yule_walker(ts, 3)
        roots = np.roots(np.concatenate(([1.0], -theta)))
        assert np.all(np.abs(roots) < 1.0)


def test_yule_walker_rejects_degenerate_series():
    flat = TimeSeries(np.zeros(50), start_index=-3)
    with pytest.raises(NumericalFailureError):
        yule_walker(flat, 4)


def test_lasso_full_shrinkage_threshold():
    ts = simulate_ar(ArModel([0.4], 1.0), 400, RngSpec(7))
    X, y = covariate_matrix(reframe(ts, 4), 4)
    gamma = 2.0 * np.max(np.abs((2.0 / X.shape[0]) * X.T @ y))
    theta, trace = lasso_ls(reframe(ts, 4), 4, gamma)
    assert np.array_equal(theta, np.zeros(4))
    assert trace.converged


def test_lasso_matches_proximal_gradient_oracle():
    model = ArModel(np.array([0.6, 0.0, 0.0, 0.0]), 1.0)
    ts = simulate_ar(model, 200, RngSpec(8))
    theta, trace = lasso_ls(ts, 4, 0.01)
    X, y = covariate_matrix(ts, 4)
    oracle = _prox_grad_lasso(X, y, 0.01)
    assert np.max(np.abs(theta - oracle)) < 1e-6
    assert trace.converged


def test_lasso_kkt_conditions():
    ts = simulate_ar(ArModel([0.5, 0.0, -0.2], 1.0), 500, RngSpec(9))
    gamma = 0.05
    theta, _ = lasso_ls(ts, 3, gamma)
    X, y = covariate_matrix(ts, 3)
    grad = (2.0 / X.shape[0]) * (X.T @ (y - X @ theta))
    tol = 1e-6
    assert np.all(np.abs(grad) <= gamma + tol)
    active = np.abs(theta) > 0
    assert np.allclose(np.abs(grad[active]), gamma, atol=tol)


def test_lasso_objective_trace_nonincreasing():
    ts = simulate_ar(ArModel([0.5, -0.2], 1.0), 300, RngSpec(10))
    _, trace = lasso_ls(ts, 2, 0.02)
    obj = np.array(trace.objective_per_iter)
    assert np.all(np.diff(obj) <= 1e-12)


def test_lasso_yw_zero_penalty_matches_yule_walker():
    ts = simulate_ar(ArModel([0.5, -0.2], 1.0), 20000, RngSpec(11))
    theta_yw, _ = yule_walker(ts, 2)
    theta, trace = lasso_yw(ts, 2, 0.0, "l2", max_iter=400000, tol=1e-14)
    assert np.max(np.abs(theta - theta_yw)) < 1e-6


def test_lasso_yw_grid_oracle():
    # grid-search oracle over theta in {-0.9..0.9}^3, step 0.01, for both norms
    ts = simulate_ar(ArModel([0.4, 0.0, -0.2], 1.0), 500, RngSpec(12))
    gamma = 0.05
    from sparsedyn.ar import _yw_quantities

    R, r = _yw_quantities(ts, 3)
    grid = np.arange(-0.9, 0.9 + 1e-9, 0.01)
    pts2 = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1).reshape(-1, 2)
    best = {"l2": np.inf, "l1": np.inf}
    for a in grid:
        theta_grid = np.column_stack([np.full(pts2.shape[0], a), pts2])
        resid = theta_grid @ R.T - r
        pen = gamma * np.abs(theta_grid).sum(axis=1)
        best["l2"] = min(best["l2"], float((np.linalg.norm(resid, axis=1) + pen).min()))
        best["l1"] = min(best["l1"], float((np.abs(resid).sum(axis=1) + pen).min()))
    for q in ("l2", "l1"):
        theta, _ = lasso_yw(ts, 3, gamma, q, max_iter=200000)
        resid = R @ theta - r
        rn = np.linalg.norm(resid) if q == "l2" else np.sum(np.abs(resid))
        obj = rn + gamma * np.sum(np.abs(theta))
        assert obj <= best[q] + 1e-4


def test_omp_zero_iterations():
    theta, sel, _ = omp_generic(lambda t: np.ones(3), lambda idx: (np.zeros(3), 0.0), 3, 0)
    assert np.array_equal(theta, np.zeros(3))
    assert sel.size == 0


def test_omp_identity_design():
    # classical OMP on A = I, y = [0,2,0]
    A = np.eye(3)
    y = np.array([0.0, 2.0, 0.0])

    def grad(th):
        return -2.0 * A.T @ (y - A @ th)

    def restricted(idx):
        th = np.zeros(3)
        th[idx] = np.linalg.lstsq(A[:, idx], y, rcond=None)[0]
        return th, float(np.sum((y - A @ th) ** 2))

    theta, sel, _ = omp_generic(grad, restricted, 3, 1)
    assert np.array_equal(theta, y)
    assert np.array_equal(sel, [1])


def test_omp_support_nesting_and_monotone_objective():
    ts = simulate_ar(ArModel([0.4, 0.0, -0.3, 0.0, 0.1], 1.0), 2000, RngSpec(13))
    supports = []
    objs = []
    for k in range(1, 5):
        theta, sel, trace = omp_ls(ts, 5, k)
        supports.append(set(sel.tolist()))
        objs.append(trace.objective_per_iter[-1])
    for a, b in zip(supports, supports[1:]):
        assert a <= b
    assert np.all(np.diff(objs) <= 1e-12)


def test_omp_aborts_with_partial_trace():
    def bad_restricted(idx):
        raise np.linalg.LinAlgError("synthetic failure")

    with pytest.raises(NumericalFailureError):
        omp_generic(lambda t: np.arange(3.0), bad_restricted, 3, 2)


def test_orthogonality_principle_empirical_gradient():
    theta = np.array([0.3, 0.0, -0.2])
    model = ArModel(theta, 1.0)
    ts = simulate_ar(model, 100000, RngSpec(14))
    X, y = covariate_matrix(ts, 3)
    grad = (2.0 / X.shape[0]) * (X.T @ (y - X @ theta))
    assert np.max(np.abs(grad)) < 0.05


def test_spectral_spread_white_noise_is_one():
    assert spectral_spread(ArModel([0.0])) == pytest.approx(1.0)


def test_default_gamma_helper():
    assert ar.default_gamma(100, 400, 2.0) == pytest.approx(2.0 * math.sqrt(math.log(100) / 400))


def test_cross_validate_gamma_picks_reasonable_value():
    model = ArModel(np.array([0.5, 0.0, 0.0, 0.0]), 1.0)
    ts = simulate_ar(model, 400, RngSpec(15))
    best = ar.cross_validate_gamma(ts, 4, [1e-4, 0.02, 5.0])
    assert best in (1e-4, 0.02)
