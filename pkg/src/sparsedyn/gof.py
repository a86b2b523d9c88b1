"""Goodness-of-fit statistics for AR residues and point-process fits.

Residue tests compare estimated innovations against a reference distribution
through the order-statistic forms of the Kolmogorov-Smirnov, Cramer-von Mises,
and Anderson-Darling statistics.  Point-process fits are checked through the
time-rescaling theorem (KS against uniformity plus an ACF independence test).
A parametric-bootstrap spectral distance stands in for the analytic spectral
CvM test.
"""

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import binom, norm

from .core import InvalidArgumentError, RngSpec, TimeSeries
from .ar import ArModel, covariate_matrix, psd, simulate_ar
from .glm import SpikeTrain

# Asymptotic upper critical values (all parameters known):
#   KS sup-distance scaled bands c/sqrt(n); CvM = n*C_n; AD = n*A_n.
KS_COEF_95, KS_COEF_99 = 1.358, 1.628
CVM_CRIT_95, CVM_CRIT_99 = 0.461, 0.743
AD_CRIT_95, AD_CRIT_99 = 2.492, 3.857


@dataclass
class GofReport:
    """One statistic with its 95/99% bands and pass flags."""

    name: str
    value: float
    band_95: float
    band_99: float
    sample_count: int
    lag: Optional[int] = None

    @property
    def pass_95(self) -> bool:
        return abs(self.value) <= self.band_95

    @property
    def pass_99(self) -> bool:
        return abs(self.value) <= self.band_99

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "band_95": self.band_95,
            "band_99": self.band_99,
            "pass_95": bool(self.pass_95),
            "pass_99": bool(self.pass_99),
            "sample_count": self.sample_count,
            "lag": self.lag,
        }


def residues(x: TimeSeries, theta_hat: np.ndarray) -> TimeSeries:
    """Estimated innovations e_k = x_k - theta' (x_{k-1},...,x_{k-p}), k=1..n."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    X, y = covariate_matrix(x, theta_hat.size)
    e = (y - X @ theta_hat)[::-1]  # rows run backwards in time
    return TimeSeries(e, start_index=1)


def ks_cvm_ad(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> tuple:
    """KS, CvM, and AD statistics of the samples against a continuous CDF.

    Uses the exact order-statistic formulas on the sorted sample; the AD
    statistic is the standard A^2 form whose asymptotic critical values are
    tabulated.  Returns three GofReports.
    """
    e = np.sort(np.asarray(samples, dtype=float))
    n = e.size
    if n < 8:
        raise InvalidArgumentError("need at least 8 samples")
    if np.unique(e).size < n:
        warnings.warn(
            "tied samples under a continuous reference CDF; "
            "the null distribution may not apply",
            stacklevel=2,
        )
    u = np.clip(np.asarray(cdf(e), dtype=float), 1e-15, 1.0 - 1e-15)
    i = np.arange(1, n + 1)
    ks = float(np.max(np.maximum(np.abs(i / n - u), np.abs((i - 1) / n - u))))
    cvm = float(1.0 / (12.0 * n) + np.sum((u - (2.0 * i - 1.0) / (2.0 * n)) ** 2))
    ad = float(-n - np.mean((2.0 * i - 1.0) * (np.log(u) + np.log(1.0 - u[::-1]))))
    rt = math.sqrt(n)
    return (
        GofReport("KS", ks, KS_COEF_95 / rt, KS_COEF_99 / rt, n),
        GofReport("CvM", cvm, CVM_CRIT_95, CVM_CRIT_99, n),
        GofReport("AD", ad, AD_CRIT_95, AD_CRIT_99, n),
    )


@dataclass
class RescaledTimes:
    """Time-rescaled intervals z_k, their uniform transforms u_k, and the
    normal transforms v_k used by the ACF test."""

    z: np.ndarray
    u: np.ndarray
    v: np.ndarray

    @property
    def count(self) -> int:
        return self.z.size


def time_rescale(
    spikes,
    lambda_hat: np.ndarray,
    null: str = "exponential",
    train_z: Optional[np.ndarray] = None,
    correction: Optional[str] = "randomized",
    rng: Optional[RngSpec] = None,
) -> RescaledTimes:
    """Rescale inter-event intervals by the per-bin rates.

    ``lambda_hat[i-1]`` is the spiking probability of bin i (i = 1..n).  The
    continuous integral of the rescaling theorem is replaced by per-bin sums:

    * ``correction=None`` sums the raw rates (z_k = sum of lambda_i), the
      plain discretization;
    * ``correction='randomized'`` (default) sums the exact discrete
      compensator q_i = -log(1 - lambda_i) and draws the event bin's
      contribution from its conditional distribution, which removes the
      lattice atoms so the z_k are exactly unit-exponential under the true
      rates (binned data otherwise bias the KS test).

    ``null='empirical'`` maps z through the empirical CDF of ``train_z``
    instead of the unit-exponential CDF.
    """
    lam = np.asarray(lambda_hat, dtype=float)
    if np.any(lam <= 0.0):
        raise InvalidArgumentError("rates must be positive for time rescaling")
    if isinstance(spikes, SpikeTrain):
        times = spikes.event_times()
    else:
        times = np.asarray(spikes, dtype=int)
    times = times[(times >= 1) & (times <= lam.size)]
    if times.size == 0:
        return RescaledTimes(np.array([]), np.array([]), np.array([]))
    if correction is None:
        cum = np.concatenate(([0.0], np.cumsum(lam)))
        marks = cum[times]  # integrated rate up to and including each event bin
        z = np.diff(np.concatenate(([0.0], marks)))
    elif correction == "randomized":
        if np.any(lam >= 1.0):
            raise InvalidArgumentError("randomized correction needs rates < 1")
        q = -np.log1p(-lam)
        cum = np.concatenate(([0.0], np.cumsum(q)))
        full = np.diff(np.concatenate(([0.0], cum[times])))  # includes event bin
        q_event = q[times - 1]
        g = (rng or RngSpec(0)).generator()
        r = g.random(times.size)
        zeta = -np.log1p(-r * (1.0 - np.exp(-q_event)))
        z = full - q_event + zeta
    else:
        raise InvalidArgumentError(f"unknown correction {correction!r}")
    if null == "exponential":
        u = 1.0 - np.exp(-z)
    elif null == "empirical":
        if train_z is None or len(train_z) == 0:
            raise InvalidArgumentError("empirical null needs training intervals")
        ref = np.sort(np.asarray(train_z, dtype=float))
        u = np.searchsorted(ref, z, side="right") / ref.size
    else:
        raise InvalidArgumentError(f"unknown null {null!r}")
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return RescaledTimes(z, u, norm.ppf(u))


def rescaled_ks(rescaled: RescaledTimes) -> GofReport:
    """KS distance of the u_k from uniformity, with the +-1.36/sqrt(J) bands."""
    j = rescaled.count
    if j < 2:
        raise InvalidArgumentError("need at least two events")
    u = np.sort(rescaled.u)
    b = (np.arange(1, j + 1) - 0.5) / j
    value = float(np.max(np.abs(u - b)))
    rt = math.sqrt(j)
    return GofReport("rescaled-KS", value, 1.36 / rt, 1.63 / rt, j)


def acf_test(v: np.ndarray, max_lag: int = 20) -> list:
    """Sample ACF of the normal-transformed rescaled times with
    +-1.96/sqrt(J) and +-2.575/sqrt(J) bands.

    Returns one report per lag plus a summary report whose value is the count
    of lags outside the 95% band; the summary passes when that count does not
    exceed the 95th percentile of Binomial(max_lag, 0.05) (so a correct model
    passes about 95% of the time regardless of max_lag).
    """
    v = np.asarray(v, dtype=float)
    j = v.size
    if j < 20:
        raise InvalidArgumentError("need at least 20 events for the ACF test")
    max_lag = min(max_lag, j - 1)
    vc = v - v.mean()
    denom = float(vc @ vc)
    rt = math.sqrt(j)
    reports = []
    out95 = 0
    out99 = 0
    for lag in range(1, max_lag + 1):
        r = float(vc[:-lag] @ vc[lag:]) / denom
        rep = GofReport("ACF", r, 1.96 / rt, 2.575 / rt, j, lag=lag)
        out95 += not rep.pass_95
        out99 += not rep.pass_99
        reports.append(rep)
    allowed95 = int(binom.ppf(0.95, max_lag, 0.05))
    allowed99 = int(binom.ppf(0.99, max_lag, 0.01))
    summary = GofReport(
        "ACF-summary", float(out95), float(allowed95), float(allowed99), j
    )
    reports.append(summary)
    return reports


def averaged_periodogram(values: np.ndarray, segment: int) -> tuple:
    """Segment-averaged (Welch, 50% overlap, boxcar) periodogram.

    Returns ``(omegas, power)`` on the segment's frequency grid; the averaging
    trades frequency resolution for variance, which is what peak-location
    checks need.
    """
    v = np.asarray(values, dtype=float)
    v = v - v.mean()
    if segment < 2 or segment > v.size:
        raise InvalidArgumentError("segment length out of range")
    hop = max(segment // 2, 1)
    nseg = (v.size - segment) // hop + 1
    acc = np.zeros(segment // 2 + 1)
    for i in range(nseg):
        seg = v[i * hop : i * hop + segment]
        acc += np.abs(np.fft.rfft(seg)) ** 2
    acc /= nseg * 2.0 * np.pi * segment
    return 2.0 * np.pi * np.arange(acc.size) / segment, acc


def spectral_distance(
    x: TimeSeries,
    model: ArModel,
    rng: RngSpec = RngSpec(0),
    n_boot: int = 200,
) -> tuple:
    """Distance between the cumulative periodogram and cumulative model PSD.

    Returns two reports: the integrated squared deviation ("bootstrap-SCvM")
    and the sup deviation ("bootstrap-SKS"), with bands from a parametric
    bootstrap of ``n_boot`` simulations of the model (the analytic limiting
    covariance of the spectral CvM test is out of scope).
    """
    n = x.end_index
    if n < 4 * model.p:
        raise InvalidArgumentError("need n >= 4p for the spectral test")

    def stats_of(values):
        v = values - values.mean()
        m = v.size
        f = np.fft.rfft(v)
        pxx = np.abs(f) ** 2 / (2.0 * np.pi * m)
        k1 = pxx.size - 1 if m % 2 == 0 else pxx.size
        pxx = pxx[1:k1]
        om = 2.0 * np.pi * np.arange(1, k1) / m
        smod = psd(model, om)
        c_emp = np.cumsum(pxx) / np.sum(pxx)
        c_mod = np.cumsum(smod) / np.sum(smod)
        d = c_emp - c_mod
        return m * float(np.mean(d * d)), float(np.max(np.abs(d)))

    modeled = x.window(1, n)
    scvm, sks = stats_of(modeled)
    g = rng.generator()
    boot = np.empty((n_boot, 2))
    for b in range(n_boot):
        sim = simulate_ar(model, n, RngSpec(int(g.integers(0, 2**63 - 1))))
        boot[b] = stats_of(sim.window(1, n))
    b95 = np.quantile(boot, 0.95, axis=0)
    b99 = np.quantile(boot, 0.99, axis=0)
    return (
        GofReport("bootstrap-SCvM", scvm, float(b95[0]), float(b99[0]), n),
        GofReport("bootstrap-SKS", sks, float(b95[1]), float(b99[1]), n),
    )
