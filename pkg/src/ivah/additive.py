"""Closed-form additive hazards estimation on the distinct-time partition.

The at-risk weight of subject ``i`` on segment ``(u_{k-1}, u_k]`` is

    h_ik = 1                   if T_i >= u_k
         = c_i * G_k           otherwise,

where ``c_i = 0`` for ordinary survival data.  For subdistribution hazards
``c_i = 1 / G(T_i)`` for subjects failing from a competing cause, which keeps
them in the risk set with IPCW weight ``G(t) / G(T_i)``.  Every sum over the
risk set is then a suffix sum plus ``G_k`` times a prefix sum, so one fit
costs ``O(n q^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .errors import NumericalError
from .stepfun import StepFunction, cumulative_sum_step, running_max_piecewise_linear

COND_LIMIT = 1e12


def _suffix(a):
    """``out[k] = sum_{j >= k} a[j]``."""
    return np.cumsum(a[::-1], axis=0)[::-1]


def _suffix_excl(a):
    """``out[k] = sum_{j > k} a[j]``."""
    s = _suffix(a)
    return np.concatenate([s[1:], np.zeros_like(s[:1])], axis=0)


def _prefix_excl(a):
    """``out[k] = sum_{j < k} a[j]``."""
    c = np.cumsum(a, axis=0)
    return np.concatenate([np.zeros_like(c[:1]), c[:-1]], axis=0)


def _bin_sorted(idx_sorted, vals_sorted, m):
    """Sum rows of ``vals_sorted`` into ``m`` bins; ``idx_sorted`` must be nondecreasing."""
    out = np.zeros((m,) + vals_sorted.shape[1:])
    if idx_sorted.size == 0:
        return out
    starts = np.flatnonzero(np.r_[True, idx_sorted[1:] != idx_sorted[:-1]])
    out[idx_sorted[starts]] = np.add.reduceat(vals_sorted, starts, axis=0)
    return out


def _forward_fill(values, valid):
    """Replace rows where ``valid`` is False by the last valid row."""
    idx = np.where(valid, np.arange(valid.size), 0)
    np.maximum.accumulate(idx, out=idx)
    return values[idx]


@dataclass(eq=False)
class SecondStageFit:
    """Second-stage additive hazards fit.

    Matrices named ``omega``, ``sigma*``, ``psi`` and ``sandwich`` are on the
    ``sqrt(n)`` scale; ``cov`` is the covariance of ``beta`` itself
    (``sandwich / n``).  ``curves`` holds the step functions needed for
    baseline and prediction variances, so a fit restored from JSON predicts
    exactly like the in-memory one.
    """

    names: tuple
    beta: np.ndarray
    cov: np.ndarray
    omega: np.ndarray
    omega_inv: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    sandwich: np.ndarray
    n: int
    horizon: float
    knots: np.ndarray
    curves: dict
    first_stage: Optional[dict] = None
    mode: str = "survival"
    n_events: int = 0
    score: Optional[np.ndarray] = None
    sigma3: Optional[np.ndarray] = None
    censoring: Optional[dict] = None
    cause_of_interest: Optional[int] = None
    subjects: Optional[dict] = field(default=None, repr=False)

    @property
    def rho(self):
        """Coefficient of the first-stage residual (0 when there is none)."""
        if self.first_stage is None:
            return 0.0
        return float(self.beta[-1])

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def zstat(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.beta / self.se

    @property
    def pvalues(self):
        return 2.0 * norm.sf(np.abs(self.zstat))

    def conf_int(self, level=0.95):
        z = norm.ppf(0.5 + level / 2.0)
        return np.column_stack([self.beta - z * self.se, self.beta + z * self.se])

    # -- time-dependent pieces -------------------------------------------
    def zbar_integral(self, t):
        """``C(t) = int_0^t Zbar(u) du``, shape ``t.shape + (q,)``."""
        return self.curves["zbar"].integral(0.0, t)

    def baseline(self, t):
        """Cumulative baseline hazard estimate (not monotonized)."""
        t = np.asarray(t, dtype=float)
        return self.curves["jump"](t) - self.zbar_integral(t) @ self.beta

    def baseline_monotone(self, t):
        """``max_{s <= t}`` of the baseline estimate."""
        vk = self.baseline(self.knots)
        return running_max_piecewise_linear(self.knots, vk, self.baseline, t)

    def cumulative_hazard(self, t, z):
        """``Lambda0(t) + beta'z t`` for a regressor row ``z``."""
        t = np.asarray(t, dtype=float)
        return self.baseline(t) + float(self.beta @ z) * t

    def cumulative_hazard_monotone(self, t, z):
        vk = self.cumulative_hazard(self.knots, z)
        return running_max_piecewise_linear(self.knots, vk, lambda u: self.cumulative_hazard(u, z), t)

    def D(self, t):
        return self.curves["D"](t)

    def E(self, t):
        if self.first_stage is None:
            return np.zeros(np.shape(t) + (0,))
        return self.rho * self.curves["erate"].integral(0.0, t)

    def martingale_term(self, s):
        return self.n * self.curves["mart"](s)

    def q_t(self, t):
        """``q_t(c)`` at each censoring jump time ``c``; shape ``t.shape + (n_c,)``."""
        cens = self.censoring
        t = np.asarray(t, dtype=float)
        if cens is None or len(cens["times"]) == 0:
            return np.zeros(t.shape + (0,))
        c = np.asarray(cens["times"])
        P0 = np.asarray(cens["P0"])
        P3 = np.asarray(cens["P3"])
        FJ, Fg, Fz = self.curves["FJ"], self.curves["Fg"], self.curves["Fz"]
        tt = t[..., None]
        jump = FJ(tt) - FJ.left_limit(c)
        gint = Fg.integral(c, tt)
        zint = Fz.integral(c, tt)
        val = -(P0 * (jump - zint) + P3 * gint) / self.n
        return np.where(c <= tt, val, 0.0)

    def censoring_term(self, t, s):
        cens = self.censoring
        if cens is None or len(cens["times"]) == 0:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(s)).shape)
        w = np.asarray(cens["count"]) / np.asarray(cens["pi"]) ** 2
        return self.n * np.sum(self.q_t(t) * self.q_t(s) * w, axis=-1)

    def process_cov(self, t, s, load, sign):
        """Shared covariance estimate for ``s <= t``.

        ``load(u)`` is ``C(u)`` for the baseline (``sign = -1``) or
        ``G(u) = z u - C(u)`` for predictions (``sign = +1``).
        """
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        Lt, Ls = load(t), load(s)
        Oi = self.omega_inv
        quad = np.einsum("...i,ij,...j->...", Lt, self.sandwich, Ls)
        cross = np.einsum("...i,ij,...j->...", Lt, Oi, self.D(s)) + np.einsum(
            "...i,ij,...j->...", Ls, Oi, self.D(t)
        )
        Et, Es = self.E(t), self.E(s)
        eterm = np.einsum("...i,ij,...j->...", Et, self.theta, Es) if Et.shape[-1] else 0.0
        return (
            self.martingale_term(np.minimum(s, t)) + quad + eterm + sign * cross
            + self.censoring_term(t, s)
        )

    def estimating_function(self, beta=None):
        """``U(beta)`` assembled per subject; needs the in-memory subject data."""
        if self.subjects is None:
            raise ValueError("subject-level data are not available for a deserialized fit")
        b = self.beta if beta is None else np.asarray(beta, dtype=float)
        s = self.subjects
        return (s["numerator"] - s["A"].T @ (s["Zc"] @ b)) / self.n

    def weighted_residuals(self, t=None):
        """``int_0^t w_i(u) dM_i(u)`` per subject (``t`` defaults to the horizon)."""
        if self.subjects is None:
            raise ValueError("subject-level data are not available for a deserialized fit")
        t = self.horizon if t is None else float(t)
        s = self.subjects
        knots, L = self.knots, np.diff(self.knots, prepend=0.0)
        use = knots <= t
        seg_len = np.where(use, L, 0.0)
        # partial final segment
        k_part = np.searchsorted(knots, t, side="left")
        if k_part < knots.size and knots[k_part] > t:
            prev = knots[k_part - 1] if k_part > 0 else 0.0
            seg_len = seg_len.copy()
            seg_len[k_part] = t - prev
        H = s["h"]  # (n, m)
        jumps = s["dn"] / np.where(s["S0"] > 0, s["S0"], 1.0)
        zb = s["zbar_c"] @ self.beta
        zi = s["Zc"] @ self.beta
        counted = s["event"] & (s["time"] <= t)
        drift = H * (zi[:, None] - zb[None, :]) * seg_len[None, :]
        return counted.astype(float) - (H * (jumps * use)[None, :]).sum(axis=1) - drift.sum(axis=1)


def estimate(time, event, Z, names, *, horizon=None, xd=None, theta=None, rho_index=None,
             g_seg=None, extend=None, censor_counts=None, keep_subjects=False,
             cls=SecondStageFit, **extra):
    """Closed-form estimator, sandwich covariance and prediction curves.

    Parameters
    ----------
    time, event : arrays of length n
        Follow-up times and indicators of the event of interest.
    Z : array (n, q)
        Second-stage regressors.
    xd : array (n, r), optional
        First-stage design rows times the inverse-link derivative; with
        ``theta`` and ``rho_index`` this adds the first-stage correction.
    g_seg : array, optional
        ``P(C >= t)`` on each partition segment (competing risks).
    extend : array of length n, optional
        ``1 / G(T_i)`` for competing-cause failures, 0 otherwise.
    censor_counts : array, optional
        Number of censorings at each knot (competing risks only).
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    Z = np.asarray(Z, dtype=float)
    n, q = Z.shape
    if not event.any():
        raise NumericalError("no events of interest; the additive hazards fit is undefined")

    knots, idx = np.unique(time, return_inverse=True)
    tau = float(knots[-1]) if horizon is None else float(horizon)
    if tau > knots[-1]:
        knots = np.append(knots, tau)
    m = knots.size
    L = np.diff(knots, prepend=0.0)

    competing = extend is not None
    c = np.zeros(n) if extend is None else np.asarray(extend, dtype=float)
    G = np.ones(m) if g_seg is None else np.asarray(g_seg, dtype=float)
    if G.size < m:
        G = np.append(G, np.full(m - G.size, G[-1]))

    zmean = Z.mean(axis=0)
    Zc = Z - zmean
    r = 0 if xd is None else xd.shape[1]
    cols = [np.ones((n, 1)), Zc, (Zc[:, :, None] * Zc[:, None, :]).reshape(n, q * q)]
    if r:
        cols.append(np.asarray(xd, dtype=float))
    V = np.concatenate(cols, axis=1)

    order = np.argsort(idx, kind="stable")
    idx_s = idx[order]
    base = _suffix(_bin_sorted(idx_s, V[order], m))
    ext = _prefix_excl(_bin_sorted(idx_s, (c[:, None] * V)[order], m))
    S = base + G[:, None] * ext
    S0 = S[:, 0]
    S1 = S[:, 1:1 + q]
    S2 = S[:, 1 + q:1 + q + q * q].reshape(m, q, q)
    X1 = S[:, 1 + q + q * q:]

    pos = S0 > 0
    safe0 = np.where(pos, S0, 1.0)
    zbar_c = _forward_fill(S1 / safe0[:, None], pos)
    Lpos = np.where(pos, L, 0.0)
    omega = np.einsum("k,kab->ab", Lpos, S2 - S1[:, :, None] * S1[:, None, :] / safe0[:, None, None]) / n
    omega = 0.5 * (omega + omega.T)

    resid = Zc - zbar_c[idx]
    ev = event.astype(float)
    numerator = (ev[:, None] * resid).sum(axis=0)
    sigma1 = (ev[:, None] * resid).T @ resid / n

    cond = np.linalg.cond(omega)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise NumericalError(
            f"Omega is singular or ill-conditioned (condition number {cond:.3g}); "
            "exposure, confounders and first-stage residual may be collinear"
        )
    lu = linalg.lu_factor(omega)
    omega_inv = linalg.lu_solve(lu, np.eye(q))
    omega_inv = 0.5 * (omega_inv + omega_inv.T)
    beta = linalg.lu_solve(lu, numerator / n)

    # integrated centred regressors per subject
    cumZ = np.cumsum(L[:, None] * zbar_c, axis=0)
    tailG = _suffix_excl(L * G)
    tailGZ = _suffix_excl((L * G)[:, None] * zbar_c)
    A = Zc * (time + c * tailG[idx])[:, None] - (cumZ[idx] + c[:, None] * tailGZ[idx])

    if r and rho_index is not None:
        rho = float(beta[rho_index])
        psi = rho * (A.T @ xd) / n
        theta = np.asarray(theta, dtype=float)
        sigma2 = psi @ theta @ psi.T
    else:
        psi = np.zeros((q, r))
        theta = np.zeros((r, r)) if theta is None else np.asarray(theta, dtype=float)
        sigma2 = np.zeros((q, q))
    sigma2 = 0.5 * (sigma2 + sigma2.T)

    dn = _bin_sorted(idx_s, ev[order][:, None], m)[:, 0]
    ev_resid = _bin_sorted(idx_s, (ev[:, None] * resid)[order], m)
    jump = dn / safe0
    mart = dn / safe0 ** 2
    Djump = ev_resid / safe0[:, None]
    erate = X1 / safe0[:, None] if r else np.zeros((m, 0))
    erate = np.where(pos[:, None], erate, 0.0)

    zbar = zbar_c + zmean
    curves = {
        "zbar": StepFunction.from_segments(knots, zbar),
        "jump": cumulative_sum_step(knots, jump),
        "mart": cumulative_sum_step(knots, mart),
        "D": cumulative_sum_step(knots, Djump, initial=np.zeros(q)),
        "erate": StepFunction.from_segments(knots, erate),
    }

    sigma3 = None
    censoring = None
    if competing:
        cc = np.zeros(m) if censor_counts is None else np.asarray(censor_counts, dtype=float)
        if cc.size < m:
            cc = np.append(cc, np.zeros(m - cc.size))
        at_risk = _suffix(np.bincount(idx, minlength=m).astype(float))
        zb_beta = zbar_c @ beta
        zi_beta = Zc @ beta
        gj = G * jump
        aJ = _suffix(gj)
        VJ = _suffix(gj[:, None] * zbar_c)
        LG = L * G
        b = _suffix_excl(LG)
        u1 = _suffix_excl(LG * zb_beta)
        W = _suffix_excl(LG[:, None] * zbar_c)
        u2 = _suffix_excl((LG * zb_beta)[:, None] * zbar_c)
        P = _prefix_excl(_bin_sorted(
            idx_s,
            np.column_stack([c, c[:, None] * Zc, (c * zi_beta)[:, None] * Zc, c * zi_beta])[order],
            m,
        ))
        P0, P1, P2, P3 = P[:, 0], P[:, 1:1 + q], P[:, 1 + q:1 + 2 * q], P[:, 1 + 2 * q]
        qhat = (P1 * (aJ - u1)[:, None] + P2 * b[:, None] - P0[:, None] * (VJ - u2)
                - P3[:, None] * W) / n
        pi = at_risk / n
        jc = np.flatnonzero(cc > 0)
        ratio = qhat[jc] / pi[jc][:, None]
        sigma3 = (cc[jc][:, None, None] * ratio[:, :, None] * ratio[:, None, :]).sum(axis=0) / n
        sigma3 = 0.5 * (sigma3 + sigma3.T)
        curves["FJ"] = cumulative_sum_step(knots, G * dn / safe0 ** 2)
        curves["Fg"] = StepFunction.from_segments(knots, np.where(pos, G / safe0, 0.0))
        curves["Fz"] = StepFunction.from_segments(knots, np.where(pos, G * zb_beta / safe0, 0.0))
        censoring = {
            "times": knots[jc].tolist(),
            "count": cc[jc].tolist(),
            "pi": pi[jc].tolist(),
            "P0": P0[jc].tolist(),
            "P3": P3[jc].tolist(),
            "q": qhat[jc].tolist(),
        }

    middle = sigma1 + sigma2 + (sigma3 if sigma3 is not None else 0.0)
    sandwich = omega_inv @ middle @ omega_inv
    sandwich = 0.5 * (sandwich + sandwich.T)

    fit = cls(
        names=tuple(names), beta=beta, cov=sandwich / n, omega=omega, omega_inv=omega_inv,
        sigma1=sigma1, sigma2=sigma2, psi=psi, theta=theta, sandwich=sandwich, n=n,
        horizon=tau, knots=knots, curves=curves, n_events=int(event.sum()),
        sigma3=sigma3, censoring=censoring, **extra,
    )
    subjects = {"numerator": numerator, "A": A, "Zc": Zc}
    if keep_subjects:
        ar = np.arange(m)
        h = np.where(ar[None, :] <= idx[:, None], 1.0, c[:, None] * G[None, :])
        subjects.update(h=h, dn=dn, S0=S0, zbar_c=zbar_c, event=event, time=time, idx=idx)
    fit.subjects = subjects
    fit.score = fit.estimating_function()
    if not keep_subjects:
        fit.subjects = None
    return fit
