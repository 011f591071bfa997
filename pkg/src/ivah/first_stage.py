"""First-stage exposure model ``g(E[X_e | X_I, X_o]) = a_c + a_I X_I + a_o' X_o``."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import ConvergenceError, DataError, NumericalError, SeparationError

MAX_ITER = 100
TOL = 1e-10
SEPARATION_ETA = 30.0
PERFECT_FIT = 1e-6


class LinkKind(str, Enum):
    IDENTITY = "identity"
    LOGIT = "logit"

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is LinkKind.IDENTITY:
            return eta.copy()
        return expit(eta)

    def inverse_derivative(self, eta):
        return link_inverse_derivative(self, eta)


def link_inverse_derivative(link, eta):
    """Derivative of the inverse link at ``eta``.

    For the logit link this is ``mu (1 - mu)``, evaluated as
    ``expit(eta) * expit(-eta)`` so it stays positive at extreme arguments.
    """
    link = LinkKind(link)
    eta = np.asarray(eta, dtype=float)
    if link is LinkKind.IDENTITY:
        out = np.ones_like(eta)
    else:
        out = expit(eta) * expit(-eta)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class FirstStageFit:
    """Fitted exposure model.

    ``theta_hat`` is the estimated covariance of ``sqrt(n) (alpha_hat - alpha)``,
    so ``theta_hat / n`` is the covariance of ``alpha_hat`` itself.
    """

    link: LinkKind
    alpha_hat: np.ndarray
    theta_hat: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    link_deriv: np.ndarray
    design_rows: np.ndarray
    n_iter: int = 0
    names: tuple = ()

    @property
    def n(self):
        return self.design_rows.shape[0]

    def predict_mean(self, instrument, confounders):
        """``g^{-1}((1, x_I, x_o)' alpha_hat)`` for new covariate rows."""
        instrument = np.atleast_1d(np.asarray(instrument, dtype=float))
        conf = np.asarray(confounders, dtype=float).reshape(instrument.shape[0], -1)
        X = np.column_stack([np.ones(instrument.shape[0]), instrument, conf])
        return self.link.inverse(X @ self.alpha_hat)

    def score(self, exposure):
        """Score ``X'(y - mu)`` at ``alpha_hat`` (zero at the MLE/OLS solution)."""
        return self.design_rows.T @ (np.asarray(exposure, dtype=float) - self.fitted)


def _check_rank(X):
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise NumericalError(
            f"first-stage design [1, X_I, X_o] is rank deficient (rank {rank} < {X.shape[1]})"
        )


def fit_ols(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_rank(X)
    n, k = X.shape
    if n <= k:
        raise DataError("first stage needs more rows than coefficients")
    alpha, *_ = linalg.lstsq(X, y)
    fitted = X @ alpha
    resid = y - fitted
    sigma2 = float(resid @ resid) / (n - k)
    xtx_inv = linalg.inv(X.T @ X)
    theta = n * sigma2 * xtx_inv
    return alpha, 0.5 * (theta + theta.T), fitted, 0


def fit_logistic(X, y, max_iter=MAX_ITER, tol=TOL):
    """Logistic MLE by iteratively reweighted least squares from ``alpha = 0``.

    Returns ``(alpha, theta, fitted, n_iter)`` with ``theta = n (X'WX)^{-1}``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_rank(X)
    if np.any((y < 0) | (y > 1)):
        raise DataError("logit first stage needs an exposure in [0, 1]")
    n, k = X.shape
    pos, neg = y == 1, y == 0
    alpha = np.zeros(k)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ alpha
        mu = expit(eta)
        score = X.T @ (y - mu)
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        w = expit(eta) * expit(-eta)
        info = X.T @ (w[:, None] * X)
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise ConvergenceError(f"IRLS information matrix is singular at iteration {it}") from exc
        alpha = alpha + step
        eta = X @ alpha
        if (pos.any() and np.all(eta[pos] > SEPARATION_ETA)) or (neg.any() and np.all(eta[neg] < -SEPARATION_ETA)):
            raise SeparationError(
                "logistic first stage appears separated: linear predictor beyond "
                f"+/-{SEPARATION_ETA:g} for every row of one exposure class"
            )
        if np.linalg.norm(step) <= tol * max(np.linalg.norm(alpha), 1.0):
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
    eta = X @ alpha
    fitted = expit(eta)
    if np.max(np.abs(y - fitted)) < PERFECT_FIT:
        raise SeparationError("logistic first stage is completely separated: every exposure is predicted exactly")
    w = expit(eta) * expit(-eta)
    info = X.T @ (w[:, None] * X)
    theta = n * linalg.inv(info)
    return alpha, 0.5 * (theta + theta.T), fitted, it


def fit_first_stage(data, link=LinkKind.IDENTITY) -> FirstStageFit:
    """Regress the exposure on ``(1, X_I, X_o)`` with the given link."""
    link = LinkKind(link)
    X = data.first_stage_design()
    y = np.asarray(data.exposure, dtype=float)
    if link is LinkKind.IDENTITY:
        alpha, theta, fitted, it = fit_ols(X, y)
    else:
        alpha, theta, fitted, it = fit_logistic(X, y)
    deriv = link_inverse_derivative(link, X @ alpha)
    names = ("intercept", data.instrument_name, *data.confounder_names)
    return FirstStageFit(
        link=link, alpha_hat=alpha, theta_hat=theta, fitted=fitted,
        residuals=y - fitted, link_deriv=np.asarray(deriv), design_rows=X,
        n_iter=it, names=names,
    )
