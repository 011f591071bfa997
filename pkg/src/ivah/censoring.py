"""Kaplan-Meier estimate of the censoring distribution and IPCW weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .stepfun import StepFunction


@dataclass(frozen=True, eq=False)
class CensoringKM:
    """Product-limit estimate for the censoring time ``C``.

    ``survivor`` is the usual right-continuous KM curve, ``P(C > t)``;
    ``g_hat`` is its left-continuous version, ``G(t) = P(C >= t)``.
    At tied times events leave the risk set before censorings.
    """

    knots: np.ndarray
    survivor: StepFunction
    g_hat: StepFunction
    risk_pi: StepFunction
    censor_times: np.ndarray
    n_at_risk: np.ndarray
    n_censored: np.ndarray

    def G(self, t):
        return self.g_hat(t)

    def summary(self):
        return {
            "n_censored": int(self.n_censored.sum()),
            "jump_times": self.knots[self.n_censored > 0].tolist(),
            "g_after_jump": self.survivor(self.knots[self.n_censored > 0]).tolist(),
        }


def fit_censoring_km(data) -> CensoringKM:
    time = np.asarray(data.time, dtype=float)
    status = np.asarray(data.status)
    knots, inv = np.unique(time, return_inverse=True)
    m = knots.size
    n_obs = np.bincount(inv, minlength=m)
    n_ev = np.bincount(inv, weights=(status == 1).astype(float), minlength=m)
    n_cens = n_obs - n_ev
    at_risk = np.cumsum(n_obs[::-1])[::-1]
    # events at a tied time are removed before the censorings
    risk_c = at_risk - n_ev
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(n_cens > 0, 1.0 - n_cens / np.where(risk_c > 0, risk_c, 1.0), 1.0)
    surv = np.cumprod(factor)
    survivor = StepFunction(knots, surv, initial=1.0, right_continuous=True)
    g_hat = StepFunction(knots, surv, initial=1.0, right_continuous=False)
    n = time.size
    pi_vals = np.append(at_risk[1:], 0.0) / n
    risk_pi = StepFunction(knots, pi_vals, initial=1.0, right_continuous=False)
    return CensoringKM(
        knots=knots, survivor=survivor, g_hat=g_hat, risk_pi=risk_pi,
        censor_times=time[status == 0], n_at_risk=at_risk.astype(float),
        n_censored=n_cens.astype(float),
    )


class WeightTable:
    """IPCW weights ``w_i(t) = r_i(t) G(t) / G(T_i ^ t)``.

    ``r_i(t)`` is one while subject ``i`` is uncensored, i.e. always for an
    observed event and for ``t <= T_i`` otherwise.
    """

    def __init__(self, time, status, km: CensoringKM):
        self.time = np.asarray(time, dtype=float)
        self.status = np.asarray(status)
        self.km = km
        self.g_own = km.g_hat(self.time)

    @property
    def n(self):
        return self.time.size

    def __call__(self, t):
        """Weights at time(s) ``t``; shape ``(n,)`` for scalar ``t``, else ``(len(t), n)``."""
        t_arr = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t_arr)[:, None]
        before = tt <= self.time[None, :]
        r = before | (self.status[None, :] == 1)
        g_t = self.km.g_hat(tt[:, 0])[:, None]
        denom = np.where(before, g_t, self.g_own[None, :])
        if np.any(r & (denom <= 0)):
            raise NumericalError("censoring survivor is zero where a subject is still uncensored")
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(r, g_t / np.where(denom > 0, denom, 1.0), 0.0)
        return w[0] if t_arr.ndim == 0 else w

    def step(self, i):
        """Subject ``i``'s weight as a left-continuous :class:`StepFunction`."""
        ti = self.time[i]
        if self.status[i] != 1:
            return StepFunction([ti], [0.0], initial=1.0, right_continuous=False)
        breaks = np.concatenate([[ti], self.km.knots[self.km.knots > ti]])
        values = self.km.survivor(breaks) / self.g_own[i]
        return StepFunction(breaks, values, initial=1.0, right_continuous=False)


def build_weights(data, km: CensoringKM) -> WeightTable:
    return WeightTable(data.time, data.status, km)
