"""Second-stage 2SRI additive hazards fit for right-censored survival data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .additive import SecondStageFit, estimate
from .data import SURVIVAL
from .errors import DataError
from .first_stage import FirstStageFit, LinkKind, fit_first_stage

__all__ = [
    "PredictionCurve",
    "SecondStageFit",
    "baseline_cumhaz_cov",
    "fit_additive_hazards",
    "fit_survival",
    "predict_survival",
    "regressor_row",
]

RESIDUAL_NAME = "residual"


@dataclass(frozen=True, eq=False)
class PredictionCurve:
    """Pointwise prediction with log-log confidence bounds.

    ``estimate`` is the monotonized survival (or cumulative incidence) curve;
    ``variance`` estimates the variance of the unmonotonized estimate.
    ``degenerate`` marks grid points where the estimate is 0 or 1 and the
    interval collapses to a point.
    """

    times: np.ndarray
    estimate: np.ndarray
    variance: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    degenerate: np.ndarray
    level: float = 0.95
    kind: str = "survival"

    def as_rows(self):
        return list(zip(self.times.tolist(), self.estimate.tolist(), self.variance.tolist(),
                        self.ci_lower.tolist(), self.ci_upper.tolist()))


def _first_stage_summary(fs: FirstStageFit):
    return {"link": fs.link.value, "alpha": fs.alpha_hat.tolist(), "names": list(fs.names)}


def second_stage_inputs(data, fs: FirstStageFit):
    """Regressors ``(X_e, X_o, residual)``, names and first-stage correction inputs."""
    if fs.n != data.n:
        raise DataError(f"first stage was fitted on {fs.n} rows but the data have {data.n}")
    Z = np.column_stack([data.exposure, data.confounders, fs.residuals])
    names = (data.exposure_name, *data.confounder_names, RESIDUAL_NAME)
    xd = fs.design_rows * fs.link_deriv[:, None]
    return Z, names, xd


def fit_survival(data, fs: FirstStageFit = None, *, link=LinkKind.IDENTITY, keep_subjects=False):
    """2SRI additive hazards fit with regressors ``(X_e, X_o, residual)``.

    Parameters
    ----------
    data : Dataset
    fs : FirstStageFit, optional
        Fitted exposure model; fitted here with ``link`` if omitted.
    keep_subjects : bool
        Retain subject-level arrays for residual diagnostics.

    Returns
    -------
    SecondStageFit
    """
    if fs is None:
        fs = fit_first_stage(data, link)
    Z, names, xd = second_stage_inputs(data, fs)
    event = np.asarray(data.status) == 1
    fit = estimate(
        data.time, event, Z, names, horizon=data.horizon, xd=xd, theta=fs.theta_hat,
        rho_index=Z.shape[1] - 1, keep_subjects=keep_subjects,
        first_stage=_first_stage_summary(fs), mode=SURVIVAL,
    )
    return fit


def fit_additive_hazards(data, *, keep_subjects=False):
    """Ordinary additive hazards fit on ``(X_e, X_o)`` without instrument correction."""
    Z = np.column_stack([data.exposure, data.confounders])
    names = (data.exposure_name, *data.confounder_names)
    event = np.asarray(data.status) == 1
    return estimate(data.time, event, Z, names, horizon=data.horizon,
                    keep_subjects=keep_subjects, mode=SURVIVAL)


def _check_times(fit, *times):
    for t in times:
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > fit.horizon * (1 + 1e-12)):
            raise DataError(f"times must lie in [0, {fit.horizon:g}]")


def baseline_cumhaz_cov(fit: SecondStageFit, t, s):
    """Covariance of ``sqrt(n)`` times the baseline estimation error at ``t`` and ``s``.

    The arguments are symmetric; ``min(t, s)`` enters the martingale term.
    """
    _check_times(fit, t, s)
    t, s = np.maximum(t, s), np.minimum(t, s)
    return fit.process_cov(t, s, fit.zbar_integral, -1.0)


def regressor_row(fit: SecondStageFit, exposure, instrument=None, confounders=()):
    """Second-stage regressor ``z`` for a new subject.

    With a first stage the residual entry is ``x_e - g^{-1}((1, x_I, x_o)' alpha)``.
    """
    conf = np.atleast_1d(np.asarray(confounders, dtype=float)).ravel()
    q = fit.beta.size
    n_conf = q - 1 - (fit.first_stage is not None)
    if conf.size != n_conf:
        raise DataError(f"expected {n_conf} confounder values, got {conf.size}")
    parts = [[float(exposure)], conf]
    if fit.first_stage is not None:
        if instrument is None:
            raise DataError("an instrument value is required for the residual regressor")
        link = LinkKind(fit.first_stage["link"])
        xt = np.concatenate([[1.0, float(instrument)], conf])
        mean = float(link.inverse(xt @ np.asarray(fit.first_stage["alpha"])))
        parts.append([float(exposure) - mean])
    return np.concatenate(parts)


def prediction_variance_brace(fit: SecondStageFit, z, times):
    """Covariance of ``sqrt(n)`` times the error of ``Lambda0(t) + beta'z t`` at ``t = s``."""
    z = np.asarray(z, dtype=float)

    def load(u):
        u = np.asarray(u, dtype=float)
        return u[..., None] * z - fit.zbar_integral(u)

    return fit.process_cov(times, times, load, 1.0)


def _loglog_bounds(H, se_H, zq):
    """Survival bounds from a normal interval on ``log H``; ``se_H`` is the SE of ``H``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        half = zq * se_H / H
        lo = np.exp(-np.exp(np.log(H) + half))
        hi = np.exp(-np.exp(np.log(H) - half))
    return lo, hi


def _curve(fit, z, times, level, kind):
    if not 0.0 < level < 1.0:
        raise DataError("level must lie in (0, 1)")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    _check_times(fit, times)
    H_raw = fit.cumulative_hazard(times, z)
    H = fit.cumulative_hazard_monotone(times, z)
    surv_raw = np.exp(-H_raw)
    surv = np.exp(-H)
    brace = prediction_variance_brace(fit, z, times)
    brace = np.clip(brace, 0.0, None)
    variance = surv_raw ** 2 * brace / fit.n
    zq = norm.ppf(0.5 + level / 2.0)
    se_H = np.sqrt(brace / fit.n)
    degenerate = (H <= 0) | (surv <= 0)
    lo, hi = _loglog_bounds(np.where(degenerate, 1.0, H), se_H, zq)
    lo = np.where(degenerate, surv, np.clip(lo, 0.0, 1.0))
    hi = np.where(degenerate, surv, np.clip(hi, 0.0, 1.0))
    lo = np.minimum(lo, surv)
    hi = np.maximum(hi, surv)
    if kind == "cif":
        return PredictionCurve(times, 1.0 - surv, variance, 1.0 - hi, 1.0 - lo, degenerate, level, kind)
    return PredictionCurve(times, surv, variance, lo, hi, degenerate, level, kind)


def predict_survival(fit: SecondStageFit, exposure, instrument=None, confounders=(), times=None,
                     level=0.95, z=None):
    """Monotonized survival curve ``exp(-max_{s<=t} [Lambda0(s) + beta'z s])`` with bands.

    Either pass the raw covariates (``exposure``, ``instrument``, ``confounders``)
    or a ready regressor row ``z``.
    """
    if z is None:
        z = regressor_row(fit, exposure, instrument, confounders)
    if times is None:
        times = np.linspace(0.0, fit.horizon, 101)
    return _curve(fit, np.asarray(z, dtype=float), times, level, "survival")
