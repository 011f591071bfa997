"""Second-stage 2SRI fit under the additive subdistribution hazards model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .additive import SecondStageFit, estimate
from .censoring import CensoringKM, WeightTable, fit_censoring_km
from .data import COMPETING
from .errors import DataError
from .first_stage import FirstStageFit, LinkKind, fit_first_stage
from .stepfun import StepFunction
from .survival import (
    PredictionCurve,
    _check_times,
    _curve,
    _first_stage_summary,
    regressor_row,
    second_stage_inputs,
)

__all__ = ["CompetingFit", "baseline_subdist_cov", "fit_competing", "predict_cif"]


@dataclass(eq=False)
class CompetingFit(SecondStageFit):
    """:class:`SecondStageFit` plus the censoring pieces of the weighted fit."""

    km: Optional[CensoringKM] = None
    weights: Optional[WeightTable] = None

    @property
    def sigma3_trace(self):
        return float(np.trace(self.sigma3))

    @property
    def q_hat(self):
        """``q(c)`` at the censoring jump times (vector valued)."""
        c = self.censoring
        q = self.beta.size
        vals = np.asarray(c["q"], dtype=float).reshape(-1, q)
        return StepFunction(c["times"], vals, initial=np.zeros(q), right_continuous=True)

    @property
    def pi_hat(self):
        """``#{T >= t} / n`` as a left-continuous step function."""
        if self.km is None:
            raise ValueError("the censoring fit is not available for a deserialized fit")
        return self.km.risk_pi


def fit_competing(data, fs: FirstStageFit = None, cause_of_interest=1, *, link=LinkKind.IDENTITY,
                  keep_subjects=False):
    """IPCW-weighted 2SRI fit for the subdistribution hazard of ``cause_of_interest``.

    Subjects failing from other causes stay in the risk set with weight
    ``G(t) / G(T_i)``, where ``G`` is the Kaplan-Meier estimate of
    ``P(C >= t)``.
    """
    if data.mode != COMPETING:
        raise DataError("fit_competing needs a competing-mode dataset")
    status = np.asarray(data.status)
    cause = np.asarray(data.cause)
    k = int(cause_of_interest)
    if not np.any((status == 1) & (cause == k)):
        raise DataError(f"cause {k} does not occur among the observed events")
    if fs is None:
        fs = fit_first_stage(data, link)
    Z, names, xd = second_stage_inputs(data, fs)
    time = np.asarray(data.time, dtype=float)
    event = (status == 1) & (cause == k)
    other = (status == 1) & (cause != k)

    km = fit_censoring_km(data)
    knots = km.knots
    tau = float(data.horizon)
    if tau > knots[-1]:
        knots = np.append(knots, tau)
    g_seg = km.g_hat(knots)
    g_own = km.g_hat(time)
    extend = np.where(other, 1.0 / np.where(other, g_own, 1.0), 0.0)
    censor_counts = km.n_censored

    return estimate(
        time, event, Z, names, horizon=tau, xd=xd, theta=fs.theta_hat,
        rho_index=Z.shape[1] - 1, g_seg=g_seg, extend=extend, censor_counts=censor_counts,
        keep_subjects=keep_subjects, cls=CompetingFit, first_stage=_first_stage_summary(fs),
        mode=COMPETING, cause_of_interest=k, km=km, weights=WeightTable(time, status, km),
    )


def baseline_subdist_cov(fit: SecondStageFit, t, s):
    """Covariance of ``sqrt(n)`` times the baseline subdistribution error at ``t`` and ``s``."""
    _check_times(fit, t, s)
    t, s = np.maximum(t, s), np.minimum(t, s)
    return fit.process_cov(t, s, fit.zbar_integral, -1.0)


def predict_cif(fit: SecondStageFit, exposure, instrument=None, confounders=(), times=None,
                level=0.95, z=None) -> PredictionCurve:
    """Monotonized cumulative incidence ``1 - exp(-max_{s<=t} [Lambda10(s) + beta'z s])``."""
    if z is None:
        z = regressor_row(fit, exposure, instrument, confounders)
    if times is None:
        times = np.linspace(0.0, fit.horizon, 101)
    return _curve(fit, np.asarray(z, dtype=float), times, level, "cif")
